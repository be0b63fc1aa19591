//! Oracles shared by the integration tests. They are written independently
//! of the library code they check.

#![allow(dead_code)]

use std::f64::consts::{PI, TAU};

use polardet::geometry::{Point2, QuadBox};
use rand::Rng;

/// Rectangle from centre, side lengths and rotation.
pub fn rect(cx: f64, cy: f64, w: f64, h: f64, angle: f64, class_id: usize) -> QuadBox {
    let (s, c) = angle.sin_cos();
    let corners = [(0.5, 0.5), (-0.5, 0.5), (-0.5, -0.5), (0.5, -0.5)]
        .map(|(a, b)| Point2::new(cx + a * w * c - b * h * s, cy + a * w * s + b * h * c));
    QuadBox::new(corners, class_id).expect("rectangle is valid")
}

/// True if `p` lies inside the convex polygon, whatever its winding.
pub fn inside_convex(poly: &[Point2], p: Point2) -> bool {
    let mut sign = 0.0f64;
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        let cross = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
        if cross != 0.0 {
            if sign != 0.0 && cross.signum() != sign {
                return false;
            }
            sign = cross.signum();
        }
    }
    true
}

/// Monte-Carlo IoU: uniform samples over the joint bounding box.
pub fn monte_carlo_iou(a: &QuadBox, b: &QuadBox, samples: usize, rng: &mut impl Rng) -> f64 {
    let all = a.corners.iter().chain(b.corners.iter());
    let x0 = all.clone().map(|p| p.x).fold(f64::INFINITY, f64::min);
    let x1 = all.clone().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max);
    let y0 = all.clone().map(|p| p.y).fold(f64::INFINITY, f64::min);
    let y1 = all.map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
    let (mut inter, mut union) = (0usize, 0usize);
    for _ in 0..samples {
        let p = Point2::new(rng.random_range(x0..x1), rng.random_range(y0..y1));
        let (ia, ib) = (inside_convex(&a.corners, p), inside_convex(&b.corners, p));
        inter += usize::from(ia && ib);
        union += usize::from(ia || ib);
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Brute force: all four corner angles about the centroid in [0, 2π), sorted,
/// and the two smallest returned.
pub fn two_smallest_corner_angles(q: &QuadBox) -> (f64, f64) {
    let cx = q.corners.iter().map(|p| p.x).sum::<f64>() / 4.0;
    let cy = q.corners.iter().map(|p| p.y).sum::<f64>() / 4.0;
    let mut angles: Vec<f64> = q
        .corners
        .iter()
        .map(|p| {
            let a = (p.y - cy).atan2(p.x - cx);
            if a < 0.0 {
                a + TAU
            } else {
                a
            }
        })
        .collect();
    angles.sort_by(f64::total_cmp);
    (angles[0], angles[1])
}

/// Distance between two angles on the circle of circumference π.
pub fn mod_pi_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(PI);
    d.min(PI - d)
}

/// Corner sets equal up to cyclic reordering.
pub fn same_corners_cyclic(a: &[Point2; 4], b: &[Point2; 4], tol: f64) -> bool {
    (0..4).any(|shift| (0..4).all(|i| a[i].distance(b[(i + shift) % 4]) <= tol))
}
