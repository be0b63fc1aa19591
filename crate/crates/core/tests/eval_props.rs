mod common;

use common::rect;
use polardet::eval::{
    average_precision, evaluate, match_detections, mean_ap, precision_recall_curve,
};
use polardet::postprocess::Detection;
use proptest::prelude::*;

fn ap(flags: &[bool], scores: &[f64], num_gt: usize) -> f64 {
    average_precision(&precision_recall_curve(flags, scores, num_gt).unwrap())
}

/// Flags with distinct scores and enough ground truth for every TP.
fn ranked() -> impl Strategy<Value = (Vec<bool>, Vec<f64>, usize)> {
    (proptest::collection::vec(any::<bool>(), 0..30), 0usize..5).prop_flat_map(|(flags, extra)| {
        let n = flags.len();
        let tp = flags.iter().filter(|&&f| f).count();
        (
            Just(flags),
            Just((tp + extra).max(1)),
            Just((0..n).map(|i| i as f64 / 2.0).collect::<Vec<f64>>()).prop_shuffle(),
        )
            .prop_map(|(f, g, s)| (f, s, g))
    })
}

proptest! {
    #[test]
    fn ap_is_in_unit_interval((flags, scores, g) in ranked()) {
        let a = ap(&flags, &scores, g);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&a));
    }

    #[test]
    fn ap_invariant_under_monotone_score_map((flags, scores, g) in ranked(), k in 0.1..5.0f64, c in -3.0..3.0f64) {
        let mapped: Vec<f64> = scores.iter().map(|s| (k * s + c).tanh() + s.powi(3)).collect();
        prop_assert_eq!(ap(&flags, &scores, g), ap(&flags, &mapped, g));
    }

    #[test]
    fn lowest_scored_false_positive_never_raises_ap((flags, scores, g) in ranked()) {
        let before = ap(&flags, &scores, g);
        let (mut f, mut s) = (flags.clone(), scores.clone());
        f.push(false);
        s.push(-1.0);
        prop_assert!(ap(&f, &s, g) <= before);
    }

    #[test]
    fn extra_true_positive_never_lowers_ap((flags, scores, g) in ranked(), at in -1.0..31.0f64) {
        let tp = flags.iter().filter(|&&f| f).count();
        prop_assume!(tp < g);
        prop_assume!(!scores.contains(&at));
        let before = ap(&flags, &scores, g);
        let (mut f, mut s) = (flags.clone(), scores.clone());
        f.push(true);
        s.push(at);
        prop_assert!(ap(&f, &s, g) >= before - 1e-12);
    }

    #[test]
    fn perfect_ap_iff_some_threshold_is_perfect((flags, scores, g) in ranked()) {
        let curve = precision_recall_curve(&flags, &scores, g).unwrap();
        let perfect = curve.iter().any(|p| p.precision == 1.0 && p.recall == 1.0);
        prop_assert_eq!(average_precision(&curve) == 1.0, perfect);
    }

    #[test]
    fn matching_is_deterministic(
        boxes in proptest::collection::vec((10.0..90.0f64, 10.0..90.0f64, 4.0..20.0f64, 4.0..20.0f64, 0.0..3.1f64, 0usize..2, 0.0..1.0f64), 0..12),
        n_gt in 0usize..12,
    ) {
        let dets: Vec<Detection> = boxes.iter().map(|&(x, y, w, h, a, c, s)| Detection {
            quad: rect(x, y, w, h, a, c),
            class_id: c,
            score: s,
        }).collect();
        let gts: Vec<_> = boxes.iter().take(n_gt).map(|&(x, y, w, h, a, c, _)| rect(x + 1.0, y, w, h, a, c)).collect();
        let a = match_detections(&dets, &gts, 0.5);
        prop_assert_eq!(&a, &match_detections(&dets, &gts, 0.5));
        prop_assert!(a.iter().filter(|&&f| f).count() <= gts.len());
    }
}

#[test]
fn fixture_values() {
    assert_eq!(ap(&[true, true, true], &[0.9, 0.8, 0.7], 3), 1.0);
    assert_eq!(ap(&[false, false], &[0.9, 0.8], 2), 0.0);
    let a = ap(&[true, false, true], &[0.9, 0.8, 0.7], 2);
    assert!((a - 5.0 / 6.0).abs() < 1e-12);
    assert!((mean_ap(&[92.69, 87.38]).unwrap() - 90.035).abs() < 1e-9);
    assert_eq!(mean_ap(&[1.0, 0.5]).unwrap(), 0.75);
    assert!(mean_ap(&[]).is_err());
}

#[test]
fn evaluate_counts_classes_with_ground_truth_only() {
    let gts = vec![vec![rect(30.0, 30.0, 20.0, 10.0, 0.3, 0)]];
    let dets = vec![vec![
        Detection {
            quad: rect(30.0, 30.0, 20.0, 10.0, 0.3, 0),
            class_id: 0,
            score: 0.9,
        },
        Detection {
            quad: rect(60.0, 60.0, 20.0, 10.0, 0.3, 1),
            class_id: 1,
            score: 0.8,
        },
    ]];
    let r = evaluate(&dets, &gts, 2, 0.5).unwrap();
    assert_eq!(r.classes.len(), 1);
    assert_eq!(r.map, 1.0);
    assert!(evaluate(&dets, &[], 2, 0.5).is_err());
}
