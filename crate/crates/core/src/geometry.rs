//! Box representations and rotated-box geometry.
//!
//! Coordinates follow the raster convention: `x` grows to the right and `y`
//! grows downward. Angles are measured with `atan2(dy, dx)` on those raw
//! coordinates, so an increasing angle sweeps from +x toward +y. Throughout
//! the crate "counterclockwise" means exactly this sweep direction, which is
//! the same as a positive shoelace signed area computed on raw coordinates.
//! (On a y-down display the sweep looks clockwise; nothing depends on that.)

use std::f64::consts::{PI, TAU};

use thiserror::Error;

/// Quads with an area at or below this (px²) are degenerate.
pub const AREA_EPSILON: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("degenerate box: area {area} px² is not above {AREA_EPSILON}")]
    DegenerateBox { area: f64 },
    #[error("polygon needs at least 3 vertices, got {0}")]
    InvalidPolygon(usize),
    #[error("quadrilateral is not convex")]
    NonConvex,
    #[error("non-finite coordinate")]
    NonFinite,
    #[error("invalid polar box: {0}")]
    InvalidPolarBox(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Oriented quadrilateral in image pixels.
///
/// Built through [`QuadBox::new`], the corners are convex and in
/// counterclockwise order. The fields stay public so that raw annotation
/// data can be carried around before validation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadBox {
    pub corners: [Point2; 4],
    pub class_id: usize,
}

impl QuadBox {
    /// Validates the corners and reorders clockwise input to counterclockwise.
    pub fn new(corners: [Point2; 4], class_id: usize) -> Result<Self, GeometryError> {
        if corners.iter().any(|p| !p.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let mut corners = corners;
        let signed = signed_area(&corners);
        if signed.abs() <= AREA_EPSILON {
            return Err(GeometryError::DegenerateBox { area: signed.abs() });
        }
        if signed < 0.0 {
            corners.reverse();
        }
        if !is_convex_ccw(&corners) {
            return Err(GeometryError::NonConvex);
        }
        Ok(Self { corners, class_id })
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.corners).abs()
    }

    pub fn center(&self) -> Point2 {
        let (sx, sy) = self
            .corners
            .iter()
            .fold((0.0, 0.0), |(sx, sy), p| (sx + p.x, sy + p.y));
        Point2::new(sx / 4.0, sy / 4.0)
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        let mut corners = self.corners;
        for c in &mut corners {
            c.x += dx;
            c.y += dy;
        }
        Self {
            corners,
            class_id: self.class_id,
        }
    }

    /// Lengths of the two sides meeting at the first corner.
    pub fn side_lengths(&self) -> (f64, f64) {
        let c = &self.corners;
        (c[0].distance(c[1]), c[1].distance(c[2]))
    }
}

/// Pole point plus one radius and the two smallest corner angles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarBox {
    pub pole: Point2,
    pub rho: f64,
    pub theta1: f64,
    pub theta2: f64,
    pub class_id: usize,
}

impl PolarBox {
    /// Checks `rho > 0` and `0 <= theta1 < theta2 < π`.
    pub fn new(
        pole: Point2,
        rho: f64,
        theta1: f64,
        theta2: f64,
        class_id: usize,
    ) -> Result<Self, GeometryError> {
        if !pole.is_finite() || !rho.is_finite() || !theta1.is_finite() || !theta2.is_finite() {
            return Err(GeometryError::NonFinite);
        }
        if rho <= 0.0 {
            return Err(GeometryError::InvalidPolarBox("rho must be positive"));
        }
        if !(0.0..PI).contains(&theta1) || !(0.0..PI).contains(&theta2) {
            return Err(GeometryError::InvalidPolarBox("angles must lie in [0, pi)"));
        }
        if theta2 <= theta1 {
            return Err(GeometryError::InvalidPolarBox("theta2 must exceed theta1"));
        }
        Ok(Self {
            pole,
            rho,
            theta1,
            theta2,
            class_id,
        })
    }

    /// Side lengths of the rectangle: the chord between the first two corners
    /// and the chord between the second and third.
    pub fn side_lengths(&self) -> (f64, f64) {
        let half = 0.5 * (self.theta2 - self.theta1);
        (2.0 * self.rho * half.sin(), 2.0 * self.rho * half.cos())
    }
}

/// Maps an angle onto `[0, 2π)`.
pub fn normalize_angle(raw: f64) -> f64 {
    let r = raw.rem_euclid(TAU);
    // rem_euclid can round up to exactly 2π for tiny negative inputs
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Polar representation of a quad: centroid pole, mean corner distance, and
/// the two smallest normalized corner angles. Corner order is ignored.
pub fn quad_to_polar(quad: &QuadBox) -> Result<PolarBox, GeometryError> {
    if quad.corners.iter().any(|p| !p.is_finite()) {
        return Err(GeometryError::NonFinite);
    }
    let area = quad.area();
    if area <= AREA_EPSILON {
        return Err(GeometryError::DegenerateBox { area });
    }
    let pole = quad.center();
    let rho = quad.corners.iter().map(|c| c.distance(pole)).sum::<f64>() / 4.0;
    let mut angles = quad
        .corners
        .map(|c| normalize_angle((c.y - pole.y).atan2(c.x - pole.x)));
    angles.sort_by(f64::total_cmp);
    Ok(PolarBox {
        pole,
        rho,
        theta1: angles[0],
        theta2: angles[1],
        class_id: quad.class_id,
    })
}

/// Corners at `θ1, θ2, θ1+π, θ2+π` around the pole, counterclockwise.
pub fn polar_to_quad(pbox: &PolarBox) -> QuadBox {
    let angles = [pbox.theta1, pbox.theta2, pbox.theta1 + PI, pbox.theta2 + PI];
    let corners = angles.map(|t| {
        Point2::new(
            pbox.pole.x + pbox.rho * t.cos(),
            pbox.pole.y + pbox.rho * t.sin(),
        )
    });
    QuadBox {
        corners,
        class_id: pbox.class_id,
    }
}

/// Shoelace signed area; positive for counterclockwise vertex order.
pub fn signed_area(corners: &[Point2]) -> f64 {
    let n = corners.len();
    let mut acc = 0.0;
    for i in 0..n {
        let a = corners[i];
        let b = corners[(i + 1) % n];
        acc += a.x * b.y - b.x * a.y;
    }
    0.5 * acc
}

pub fn polygon_area(corners: &[Point2]) -> Result<f64, GeometryError> {
    if corners.len() < 3 {
        return Err(GeometryError::InvalidPolygon(corners.len()));
    }
    Ok(signed_area(corners).abs())
}

fn cross(o: Point2, a: Point2, b: Point2) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

fn is_convex_ccw(corners: &[Point2]) -> bool {
    let n = corners.len();
    (0..n).all(|i| cross(corners[i], corners[(i + 1) % n], corners[(i + 2) % n]) > 0.0)
}

fn ccw_corners(q: &QuadBox) -> [Point2; 4] {
    let mut c = q.corners;
    if signed_area(&c) < 0.0 {
        c.reverse();
    }
    c
}

/// Sutherland–Hodgman: clip `subject` to the inside of the convex,
/// counterclockwise polygon `clip`.
pub fn clip_convex(subject: &[Point2], clip: &[Point2]) -> Vec<Point2> {
    let mut output: Vec<Point2> = subject.to_vec();
    let n = clip.len();
    for i in 0..n {
        if output.len() < 3 {
            return Vec::new();
        }
        let a = clip[i];
        let b = clip[(i + 1) % n];
        let input = std::mem::take(&mut output);
        let m = input.len();
        for j in 0..m {
            let s = input[j];
            let e = input[(j + 1) % m];
            let ds = cross(a, b, s);
            let de = cross(a, b, e);
            let s_in = ds >= 0.0;
            let e_in = de >= 0.0;
            if s_in != e_in {
                let t = ds / (ds - de);
                output.push(Point2::new(s.x + (e.x - s.x) * t, s.y + (e.y - s.y) * t));
            }
            if e_in {
                output.push(e);
            }
        }
    }
    if output.len() < 3 {
        Vec::new()
    } else {
        output
    }
}

fn bounds(c: &[Point2; 4]) -> (f64, f64, f64, f64) {
    c.iter().fold(
        (
            f64::INFINITY,
            f64::INFINITY,
            f64::NEG_INFINITY,
            f64::NEG_INFINITY,
        ),
        |(x0, y0, x1, y1), p| (x0.min(p.x), y0.min(p.y), x1.max(p.x), y1.max(p.y)),
    )
}

fn corner_key(c: &[Point2; 4]) -> [f64; 8] {
    let mut k = [0.0; 8];
    for (i, p) in c.iter().enumerate() {
        k[2 * i] = p.x;
        k[2 * i + 1] = p.y;
    }
    k
}

/// Intersection over union of two convex quads. Class ids are ignored.
pub fn rotated_iou(a: &QuadBox, b: &QuadBox) -> f64 {
    let (inter_area, area_a, area_b) = overlap(a, b);
    if inter_area == 0.0 {
        return 0.0;
    }
    let union = area_a + area_b - inter_area;
    if union <= 0.0 {
        return 0.0;
    }
    (inter_area / union).clamp(0.0, 1.0)
}

/// Area of the overlap of two boxes.
pub fn intersection_area(a: &QuadBox, b: &QuadBox) -> f64 {
    overlap(a, b).0
}

/// (intersection, area of a, area of b).
fn overlap(a: &QuadBox, b: &QuadBox) -> (f64, f64, f64) {
    let mut pa = ccw_corners(a);
    let mut pb = ccw_corners(b);
    // clip in a canonical operand order so the result is exactly symmetric
    let ka = corner_key(&pa);
    let kb = corner_key(&pb);
    if ka
        .iter()
        .zip(kb.iter())
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        == Some(std::cmp::Ordering::Greater)
    {
        std::mem::swap(&mut pa, &mut pb);
    }
    let area_a = signed_area(&pa);
    let area_b = signed_area(&pb);

    let (ax0, ay0, ax1, ay1) = bounds(&pa);
    let (bx0, by0, bx1, by1) = bounds(&pb);
    if ax1 <= bx0 || bx1 <= ax0 || ay1 <= by0 || by1 <= ay0 {
        return (0.0, area_a, area_b);
    }
    let inter = clip_convex(&pa, &pb);
    if inter.is_empty() {
        return (0.0, area_a, area_b);
    }
    (signed_area(&inter).abs(), area_a, area_b)
}

/// Greedy suppression in descending score order. Equal scores keep the lower
/// index first. Returns kept indices in that processing order.
pub fn oriented_nms(dets: &[(QuadBox, f64)], iou_threshold: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&i, &j| dets[j].1.total_cmp(&dets[i].1).then(i.cmp(&j)));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        if kept
            .iter()
            .all(|&k| rotated_iou(&dets[k].0, &dets[i].0) <= iou_threshold)
        {
            kept.push(i);
        }
    }
    kept
}
