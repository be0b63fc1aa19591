//! Pole-point extraction and decoding of network outputs into oriented boxes.
//!
//! The default extractor thresholds each class channel, labels 8-connected
//! regions and keeps the peak of every region, so the number of detections is
//! not capped. [`topk_extract`] is the fixed-K local-maximum baseline.

use std::collections::VecDeque;

use crate::encoding::{GridConfig, Heatmap};
use crate::geometry::{polar_to_quad, Point2, PolarBox, QuadBox};
use crate::grid::{Mask, Plane};

/// Extraction threshold used at test time.
pub const DEFAULT_THRESHOLD: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolePoint {
    pub class_id: usize,
    pub cell_x: usize,
    pub cell_y: usize,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub quad: QuadBox,
    pub class_id: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DecodeOutput {
    pub detections: Vec<Detection>,
    /// Poles whose regressed box violated the polar-box invariants.
    pub dropped: usize,
}

/// Cell coordinates `(x, y)` of one connected component, in row-major order.
pub type Component = Vec<(usize, usize)>;

pub fn binarize(channel: &Plane, threshold: f64) -> Mask {
    let data = channel.as_slice().iter().map(|&v| v >= threshold).collect();
    Mask::from_vec(channel.width(), channel.height(), data)
}

/// 8-connected components, ordered by their first cell in row-major order.
pub fn connected_components(mask: &Mask) -> Vec<Component> {
    let (w, h) = (mask.width(), mask.height());
    let mut seen = vec![false; w * h];
    let mut components = Vec::new();
    let mut queue = VecDeque::new();

    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !mask.get(x, y) || seen[i] {
                continue;
            }
            seen[i] = true;
            queue.push_back((x, y));
            let mut cells = Vec::new();
            while let Some((cx, cy)) = queue.pop_front() {
                cells.push((cx, cy));
                for ny in cy.saturating_sub(1)..=(cy + 1).min(h - 1) {
                    for nx in cx.saturating_sub(1)..=(cx + 1).min(w - 1) {
                        let j = ny * w + nx;
                        if mask.get(nx, ny) && !seen[j] {
                            seen[j] = true;
                            queue.push_back((nx, ny));
                        }
                    }
                }
            }
            cells.sort_by_key(|&(cx, cy)| (cy, cx));
            components.push(cells);
        }
    }
    components
}

/// One pole per connected region of each class channel, at the region's peak.
pub fn extract_pole_points(heatmap: &Heatmap, threshold: f64) -> Vec<PolePoint> {
    let mut poles = Vec::new();
    for (class_id, channel) in heatmap.channels.iter().enumerate() {
        for component in connected_components(&binarize(channel, threshold)) {
            // cells are row-major, so strict `>` keeps the smallest (row, col) on ties
            let mut best = component[0];
            let mut best_v = channel.get(best.0, best.1);
            for &(x, y) in &component[1..] {
                let v = channel.get(x, y);
                if v > best_v {
                    best = (x, y);
                    best_v = v;
                }
            }
            poles.push(PolePoint {
                class_id,
                cell_x: best.0,
                cell_y: best.1,
                score: best_v,
            });
        }
    }
    poles
}

fn is_local_max(channel: &Plane, x: usize, y: usize) -> bool {
    let v = channel.get(x, y);
    let (w, h) = (channel.width(), channel.height());
    for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
        for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
            if channel.get(nx, ny) > v {
                return false;
            }
        }
    }
    true
}

/// The `k` highest positive 3×3 local maxima across all channels.
/// Equal scores keep scan order (channel, row, column).
pub fn topk_extract(heatmap: &Heatmap, k: usize) -> Vec<PolePoint> {
    let mut candidates = Vec::new();
    for (class_id, channel) in heatmap.channels.iter().enumerate() {
        for y in 0..channel.height() {
            for x in 0..channel.width() {
                let v = channel.get(x, y);
                if v > 0.0 && is_local_max(channel, x, y) {
                    candidates.push(PolePoint {
                        class_id,
                        cell_x: x,
                        cell_y: y,
                        score: v,
                    });
                }
            }
        }
    }
    // stable sort keeps scan order among equal scores
    candidates.sort_by(|a, b| b.score.total_cmp(&a.score));
    candidates.truncate(k);
    candidates
}

/// Turns pole points into boxes using the regression planes. `ρ` is read in
/// grid units and scaled by the stride; poles sit at cell centres.
pub fn decode_poles(
    poles: &[PolePoint],
    rho_plane: &Plane,
    theta1_plane: &Plane,
    theta2_plane: &Plane,
    cfg: &GridConfig,
) -> DecodeOutput {
    let d = cfg.stride as f64;
    let mut out = DecodeOutput::default();
    for p in poles {
        let (x, y) = (p.cell_x, p.cell_y);
        let pole = Point2::new(x as f64 * d + 0.5 * d, y as f64 * d + 0.5 * d);
        let rho = rho_plane.get(x, y) * d;
        match PolarBox::new(
            pole,
            rho,
            theta1_plane.get(x, y),
            theta2_plane.get(x, y),
            p.class_id,
        ) {
            Ok(pbox) => out.detections.push(Detection {
                quad: polar_to_quad(&pbox),
                class_id: p.class_id,
                score: p.score.clamp(0.0, 1.0),
            }),
            Err(_) => out.dropped += 1,
        }
    }
    out
}

/// Panics if the planes do not share the heatmap's grid shape.
pub fn decode_detections(
    heatmap: &Heatmap,
    rho_plane: &Plane,
    theta1_plane: &Plane,
    theta2_plane: &Plane,
    threshold: f64,
    cfg: &GridConfig,
) -> DecodeOutput {
    assert_planes(heatmap, [rho_plane, theta1_plane, theta2_plane]);
    let poles = extract_pole_points(heatmap, threshold);
    decode_poles(&poles, rho_plane, theta1_plane, theta2_plane, cfg)
}

fn assert_planes(heatmap: &Heatmap, planes: [&Plane; 3]) {
    for p in planes {
        assert!(
            p.width() == heatmap.width() && p.height() == heatmap.height(),
            "regression plane shape differs from heatmap"
        );
    }
}
