//! VOC-style evaluation over rotated boxes.
//!
//! Detections are matched greedily in descending score order to the
//! unmatched same-class ground truth with the highest IoU. AP is the area
//! under the precision envelope with all-point interpolation.

use thiserror::Error;

use crate::geometry::{rotated_iou, QuadBox};
use crate::postprocess::Detection;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("recall is undefined without ground truth")]
    UndefinedRecall,
    #[error("no class has ground truth to evaluate")]
    NoClasses,
    #[error("flags and scores differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("detections given for {0} images but ground truth for {1}")]
    ImageCountMismatch(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
    /// Score of the detection that closes this point.
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassReport {
    pub class_id: usize,
    pub ap: f64,
    pub curve: Vec<PrPoint>,
    pub true_positives: usize,
    pub false_positives: usize,
    pub num_gt: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub iou_threshold: f64,
    /// Only classes with at least one ground-truth box.
    pub classes: Vec<ClassReport>,
    pub map: f64,
}

/// Descending by score; equal scores keep input order.
fn score_order(scores: impl Iterator<Item = f64>) -> Vec<usize> {
    let scores: Vec<f64> = scores.collect();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

/// TP flags aligned with the input order of `dets`.
pub fn match_detections(dets: &[Detection], gts: &[QuadBox], iou_threshold: f64) -> Vec<bool> {
    let mut flags = vec![false; dets.len()];
    let mut taken = vec![false; gts.len()];
    for i in score_order(dets.iter().map(|d| d.score)) {
        let det = &dets[i];
        let mut best: Option<(usize, f64)> = None;
        for (j, gt) in gts.iter().enumerate() {
            if taken[j] || gt.class_id != det.class_id {
                continue;
            }
            let iou = rotated_iou(&det.quad, gt);
            if best.is_none_or(|(_, b)| iou > b) {
                best = Some((j, iou));
            }
        }
        if let Some((j, iou)) = best {
            if iou >= iou_threshold {
                taken[j] = true;
                flags[i] = true;
            }
        }
    }
    flags
}

pub fn precision_recall_curve(
    flags: &[bool],
    scores: &[f64],
    num_gt: usize,
) -> Result<Vec<PrPoint>, EvalError> {
    if num_gt == 0 {
        return Err(EvalError::UndefinedRecall);
    }
    if flags.len() != scores.len() {
        return Err(EvalError::LengthMismatch(flags.len(), scores.len()));
    }
    let mut tp = 0usize;
    let mut curve = Vec::with_capacity(flags.len());
    for (rank, i) in score_order(scores.iter().copied()).into_iter().enumerate() {
        if flags[i] {
            tp += 1;
        }
        curve.push(PrPoint {
            recall: tp as f64 / num_gt as f64,
            precision: tp as f64 / (rank + 1) as f64,
            threshold: scores[i],
        });
    }
    Ok(curve)
}

/// All-point interpolated AP.
pub fn average_precision(curve: &[PrPoint]) -> f64 {
    let mut recall = Vec::with_capacity(curve.len() + 2);
    let mut precision = Vec::with_capacity(curve.len() + 2);
    recall.push(0.0);
    precision.push(0.0);
    for p in curve {
        recall.push(p.recall);
        precision.push(p.precision);
    }
    recall.push(1.0);
    precision.push(0.0);
    for i in (0..precision.len() - 1).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    for i in 1..recall.len() {
        ap += (recall[i] - recall[i - 1]) * precision[i];
    }
    ap
}

pub fn mean_ap(per_class_ap: &[f64]) -> Result<f64, EvalError> {
    if per_class_ap.is_empty() {
        return Err(EvalError::NoClasses);
    }
    Ok(per_class_ap.iter().sum::<f64>() / per_class_ap.len() as f64)
}

/// Evaluates a set of images. `detections[i]` and `ground_truth[i]` belong to
/// image `i`. Classes without ground truth are skipped.
pub fn evaluate(
    detections: &[Vec<Detection>],
    ground_truth: &[Vec<QuadBox>],
    num_classes: usize,
    iou_threshold: f64,
) -> Result<EvalReport, EvalError> {
    if detections.len() != ground_truth.len() {
        return Err(EvalError::ImageCountMismatch(
            detections.len(),
            ground_truth.len(),
        ));
    }
    let mut flags_by_class: Vec<Vec<(f64, bool)>> = vec![Vec::new(); num_classes];
    let mut gt_by_class = vec![0usize; num_classes];
    for (dets, gts) in detections.iter().zip(ground_truth) {
        for gt in gts {
            if gt.class_id < num_classes {
                gt_by_class[gt.class_id] += 1;
            }
        }
        for (det, tp) in dets.iter().zip(match_detections(dets, gts, iou_threshold)) {
            if det.class_id < num_classes {
                flags_by_class[det.class_id].push((det.score, tp));
            }
        }
    }

    let mut classes = Vec::new();
    for (class_id, entries) in flags_by_class.into_iter().enumerate() {
        let num_gt = gt_by_class[class_id];
        if num_gt == 0 {
            continue;
        }
        let scores: Vec<f64> = entries.iter().map(|e| e.0).collect();
        let flags: Vec<bool> = entries.iter().map(|e| e.1).collect();
        let curve = precision_recall_curve(&flags, &scores, num_gt)?;
        let tp = flags.iter().filter(|&&f| f).count();
        classes.push(ClassReport {
            class_id,
            ap: average_precision(&curve),
            curve,
            true_positives: tp,
            false_positives: flags.len() - tp,
            num_gt,
        });
    }
    let aps: Vec<f64> = classes.iter().map(|c| c.ap).collect();
    let map = mean_ap(&aps)?;
    Ok(EvalReport {
        iou_threshold,
        classes,
        map,
    })
}
