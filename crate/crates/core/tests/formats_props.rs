use polardet::encoding::Heatmap;
use polardet::formats::{
    format_annotations, format_detections, format_heatmap_csv, parse_annotations, parse_detections,
    parse_heatmap_csv, parse_horizontal_annotations, read_annotations, AnnotationRecord,
    DetectionRecord,
};
use proptest::prelude::*;

fn class_name() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9-]{0,11}"
}

fn coords() -> impl Strategy<Value = [f64; 8]> {
    proptest::array::uniform8(-1e4..1e4f64)
}

fn close(a: &[f64; 8], b: &[f64; 8]) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 5.1e-7)
}

proptest! {
    #[test]
    fn arbitrary_bytes_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..600)) {
        let text = String::from_utf8_lossy(&bytes);
        let parsed = read_annotations(&bytes[..]).unwrap();
        prop_assert_eq!(parsed, parse_annotations(&text));
        let _ = parse_detections(&text);
        let _ = parse_horizontal_annotations(&text);
        let _ = parse_heatmap_csv(&text);
    }

    #[test]
    fn numeric_looking_lines_never_panic(
        lines in proptest::collection::vec("[-0-9.eE+ ,()a-z:]{0,80}", 0..12),
    ) {
        let text = lines.join("\n");
        let a = parse_annotations(&text);
        let d = parse_detections(&text);
        let h = parse_horizontal_annotations(&text);
        prop_assert!(a.records.len() + a.warnings.len() <= lines.len());
        prop_assert!(d.records.len() + d.warnings.len() <= lines.len());
        prop_assert!(h.records.len() + h.warnings.len() <= lines.len());
        let _ = parse_heatmap_csv(&text);
    }

    #[test]
    fn annotations_round_trip_at_six_decimals(
        recs in proptest::collection::vec((coords(), class_name(), 0i32..3), 0..10),
    ) {
        let recs: Vec<AnnotationRecord> = recs
            .into_iter()
            .map(|(coords, class_name, difficulty)| AnnotationRecord { coords, class_name, difficulty })
            .collect();
        let back = parse_annotations(&format_annotations(&recs));
        prop_assert!(back.warnings.is_empty());
        prop_assert_eq!(back.records.len(), recs.len());
        for (a, b) in recs.iter().zip(&back.records) {
            prop_assert!(close(&a.coords, &b.coords));
            prop_assert_eq!(&a.class_name, &b.class_name);
            prop_assert_eq!(a.difficulty, b.difficulty);
        }
    }

    #[test]
    fn detections_round_trip_at_six_decimals(
        recs in proptest::collection::vec(("img_[0-9]{5}", 0.0..=1.0f64, coords(), class_name()), 0..10),
    ) {
        let recs: Vec<DetectionRecord> = recs
            .into_iter()
            .map(|(image_id, score, coords, class_name)| DetectionRecord { image_id, score, coords, class_name })
            .collect();
        let back = parse_detections(&format_detections(&recs));
        prop_assert!(back.warnings.is_empty());
        prop_assert_eq!(back.records.len(), recs.len());
        for (a, b) in recs.iter().zip(&back.records) {
            prop_assert_eq!(&a.image_id, &b.image_id);
            prop_assert!((a.score - b.score).abs() <= 5.1e-7);
            prop_assert!(close(&a.coords, &b.coords));
            prop_assert_eq!(&a.class_name, &b.class_name);
        }
    }

    #[test]
    fn heatmap_csv_round_trip(c in 1usize..3, w in 1usize..8, h in 1usize..8, seed in any::<u64>()) {
        let mut hm = Heatmap::zeros(c, w, h);
        let mut s = seed;
        for ch in &mut hm.channels {
            for v in ch.as_mut_slice() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                *v = (s >> 11) as f64 / (1u64 << 53) as f64;
            }
        }
        let back = parse_heatmap_csv(&format_heatmap_csv(&hm)).unwrap();
        prop_assert_eq!(back.channels.len(), c);
        for (a, b) in hm.channels.iter().zip(&back.channels) {
            prop_assert_eq!((a.width(), a.height()), (b.width(), b.height()));
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                prop_assert!((x - y).abs() <= 5.1e-7);
            }
        }
    }
}

#[test]
fn metadata_and_short_lines() {
    let text =
        "imagesource:GoogleEarth\ngsd:0.146\n1 2 3 4 5 6 7 8 plane\n1 2 3 4 5 6 7 8 car 1\n1 2 3\n";
    let p = parse_annotations(text);
    assert_eq!(p.records.len(), 2);
    assert_eq!(p.records[1].difficulty, 1);
    assert_eq!(p.warnings.len(), 1);
    assert_eq!(p.warnings[0].line, 5);
}

#[test]
fn horizontal_forms_agree() {
    let a = parse_horizontal_annotations("10 20 30 40 ship\n");
    let b = parse_horizontal_annotations("(30,40),(10,20),ship\n");
    assert_eq!(a.records, b.records);
    assert_eq!(
        a.records[0].coords,
        [10.0, 20.0, 30.0, 20.0, 30.0, 40.0, 10.0, 40.0]
    );
}
