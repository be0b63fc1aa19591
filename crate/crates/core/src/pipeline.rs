//! Glue between scenes, targets, the network and detections.

use thiserror::Error;

use crate::encoding::{encode_regression, EncodedSample, EncodingError, GridConfig, Heatmap};
use crate::formats::GrayImage;
use crate::geometry::{oriented_nms, quad_to_polar, GeometryError, PolarBox, QuadBox};
use crate::grid::Plane;
use crate::postprocess::{decode_poles, extract_pole_points, topk_extract, DecodeOutput};
use crate::synthdata::SyntheticSample;
use crate::toynet::{NetError, Tensor, ToyNet, TrainingExample};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Encoding(#[from] EncodingError),
    #[error(transparent)]
    Net(#[from] NetError),
}

/// How pole points are read off the heatmap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Extractor {
    /// Peak of every connected super-threshold region.
    Components { threshold: f64 },
    /// The `k` highest local maxima.
    TopK { k: usize },
}

impl Default for Extractor {
    fn default() -> Self {
        Extractor::Components {
            threshold: crate::postprocess::DEFAULT_THRESHOLD,
        }
    }
}

/// Four head outputs on the grid; `rho` in grid units.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadMaps {
    pub heatmap: Heatmap,
    pub rho: Plane,
    pub theta1: Plane,
    pub theta2: Plane,
}

impl HeadMaps {
    /// The encoder's own targets, as a perfect network would predict them.
    pub fn from_targets(target: &EncodedSample) -> Self {
        Self {
            heatmap: target.heatmap_target.clone(),
            rho: target.rho_plane.clone(),
            theta1: target.theta1_plane.clone(),
            theta2: target.theta2_plane.clone(),
        }
    }
}

pub fn image_tensor(img: &GrayImage) -> Tensor {
    Tensor::from_vec(1, img.height, img.width, img.intensities())
}

pub fn polar_boxes(quads: &[QuadBox]) -> Result<Vec<PolarBox>, GeometryError> {
    quads.iter().map(quad_to_polar).collect()
}

pub fn encode_sample(
    sample: &SyntheticSample,
    cfg: &GridConfig,
) -> Result<EncodedSample, PipelineError> {
    Ok(encode_regression(&polar_boxes(&sample.annotations)?, cfg)?)
}

pub fn training_example(
    sample: &SyntheticSample,
    cfg: &GridConfig,
) -> Result<TrainingExample, PipelineError> {
    Ok(TrainingExample {
        image: image_tensor(&sample.image),
        target: encode_sample(sample, cfg)?,
        num_objects: sample.annotations.len(),
    })
}

/// Mean ρ of all objects in grid units, used to initialise the ρ head bias.
/// Falls back to 1 when there are no objects.
pub fn mean_grid_radius(samples: &[SyntheticSample], stride: usize) -> f64 {
    let radii: Vec<f64> = samples
        .iter()
        .flat_map(|s| &s.annotations)
        .filter_map(|q| quad_to_polar(q).ok())
        .map(|p| p.rho / stride as f64)
        .collect();
    if radii.is_empty() {
        1.0
    } else {
        radii.iter().sum::<f64>() / radii.len() as f64
    }
}

/// Extraction, decoding and optional oriented NMS on head outputs.
pub fn detect_from_heads(
    heads: &HeadMaps,
    cfg: &GridConfig,
    extractor: Extractor,
    nms_iou: Option<f64>,
) -> DecodeOutput {
    let poles = match extractor {
        Extractor::Components { threshold } => extract_pole_points(&heads.heatmap, threshold),
        Extractor::TopK { k } => topk_extract(&heads.heatmap, k),
    };
    let mut out = decode_poles(&poles, &heads.rho, &heads.theta1, &heads.theta2, cfg);
    if let Some(thr) = nms_iou {
        let scored: Vec<(QuadBox, f64)> =
            out.detections.iter().map(|d| (d.quad, d.score)).collect();
        let mut keep = oriented_nms(&scored, thr);
        keep.sort_unstable();
        out.detections = keep.into_iter().map(|i| out.detections[i]).collect();
    }
    out
}

pub fn run_network(net: &ToyNet, image: &GrayImage) -> Result<HeadMaps, NetError> {
    let out = net.forward(&image_tensor(image))?;
    Ok(HeadMaps {
        heatmap: out.heatmap,
        rho: out.rho,
        theta1: out.theta1,
        theta2: out.theta2,
    })
}

pub fn detect(
    net: &ToyNet,
    image: &GrayImage,
    cfg: &GridConfig,
    extractor: Extractor,
    nms_iou: Option<f64>,
) -> Result<DecodeOutput, NetError> {
    Ok(detect_from_heads(
        &run_network(net, image)?,
        cfg,
        extractor,
        nms_iou,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{generate_scene, SceneSpec};

    #[test]
    fn oracle_heads_recover_every_object() {
        let spec = SceneSpec::desk(4);
        let cfg = GridConfig::new(64, 64, 4, 2).unwrap();
        let s = generate_scene(&spec).unwrap();
        let target = encode_sample(&s, &cfg).unwrap();
        let out = detect_from_heads(
            &HeadMaps::from_targets(&target),
            &cfg,
            Extractor::default(),
            None,
        );
        assert_eq!(out.dropped, 0);
        assert_eq!(out.detections.len(), s.annotations.len());
    }

    #[test]
    fn mean_radius_in_grid_units() {
        let s = generate_scene(&SceneSpec::desk(4)).unwrap();
        let direct = polar_boxes(&s.annotations).unwrap();
        let want = direct.iter().map(|p| p.rho / 4.0).sum::<f64>() / direct.len() as f64;
        assert!((mean_grid_radius(&[s], 4) - want).abs() < 1e-12);
        assert_eq!(mean_grid_radius(&[], 4), 1.0);
    }
}
