//! Central-difference checks of the analytic loss and network gradients.
//!
//! Relative error is `|a − n| / max(|a|, |n|, REL_FLOOR)`, so gradients that
//! are essentially zero are compared absolutely.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoding::{encode_regression, GridConfig, Heatmap};
use crate::geometry::{quad_to_polar, Point2, QuadBox};
use crate::losses::{
    polar_ring_loss, pole_focal_loss, smooth_l1, total_regression_loss, LossConfig, PolarParams,
};
use crate::toynet::{batch_loss, batch_loss_and_grad, Tensor, Topology, ToyNet, TrainingExample};

pub const REL_FLOOR: f64 = 1e-6;
pub const LOSS_TOLERANCE: f64 = 1e-4;
pub const NETWORK_TOLERANCE: f64 = 1e-3;
/// Step for the scalar losses.
const LOSS_STEP: f64 = 1e-5;
/// Step for network parameters.
const NETWORK_STEP: f64 = 1e-6;
/// Points closer than this to a kink of the smooth-L1 branch are skipped.
const KINK_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckKind {
    Focal,
    SmoothL1,
    Ring,
    Regression,
    Network,
}

impl CheckKind {
    pub const ALL: [CheckKind; 5] = [
        CheckKind::Focal,
        CheckKind::SmoothL1,
        CheckKind::Ring,
        CheckKind::Regression,
        CheckKind::Network,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CheckKind::Focal => "focal",
            CheckKind::SmoothL1 => "smooth-l1",
            CheckKind::Ring => "ring",
            CheckKind::Regression => "regression",
            CheckKind::Network => "network",
        }
    }
}

impl fmt::Display for CheckKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CheckKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CheckKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown check {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckResult {
    pub kind: CheckKind,
    /// Number of gradient components compared.
    pub compared: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

pub fn central_difference(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

#[derive(Default)]
struct MaxError {
    compared: usize,
    max: f64,
}

impl MaxError {
    fn push(&mut self, analytic: f64, numeric: f64) {
        self.compared += 1;
        let e = relative_error(analytic, numeric);
        // NaN must not slip through as a pass
        if e.is_nan() || e > self.max {
            self.max = if e.is_nan() { f64::INFINITY } else { e };
        }
    }
}

/// Focal loss of single cells; a fifth of the targets are exact peaks.
/// Predictions stay inside the clamp band.
pub fn check_focal(points: usize, seed: u64) -> (usize, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = LossConfig::default();
    let mut err = MaxError::default();
    for _ in 0..points {
        let p = rng.random_range(0.01..0.99);
        let mut target = Heatmap::zeros(1, 1, 1);
        let t = if rng.random_bool(0.2) {
            1.0
        } else {
            rng.random_range(0.0..0.999)
        };
        target.channels[0].set(0, 0, t);
        let n = rng.random_range(1..4);
        let loss = |v: f64| {
            let mut pred = Heatmap::zeros(1, 1, 1);
            pred.channels[0].set(0, 0, v);
            pole_focal_loss(&pred, &target, &cfg, n).expect("shapes match")
        };
        let analytic = loss(p).grad.channels[0].get(0, 0);
        err.push(
            analytic,
            central_difference(|v| loss(v).value, p, LOSS_STEP),
        );
    }
    (err.compared, err.max)
}

pub fn check_smooth_l1(points: usize, seed: u64) -> (usize, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut err = MaxError::default();
    while err.compared < points {
        let beta = rng.random_range(0.1..2.0);
        let u_star = rng.random_range(-3.0..3.0);
        let u: f64 = rng.random_range(-3.0..3.0);
        if ((u - u_star).abs() - beta).abs() < KINK_MARGIN {
            continue;
        }
        let numeric = central_difference(|v| smooth_l1(v, u_star, beta).value, u, LOSS_STEP);
        err.push(smooth_l1(u, u_star, beta).grad, numeric);
    }
    (err.compared, err.max)
}

fn polar_sample(rng: &mut ChaCha8Rng) -> (f64, f64, f64, f64) {
    (
        rng.random_range(0.5..5.0),
        rng.random_range(0.5..5.0),
        rng.random_range(0.0..std::f64::consts::PI),
        rng.random_range(0.0..std::f64::consts::PI),
    )
}

/// Ring loss in both ρ and θ. The smooth-L1 branch switch is the only kink.
pub fn check_ring(points: usize, seed: u64) -> (usize, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let beta = LossConfig::default().smooth_l1_beta;
    let mut err = MaxError::default();
    let mut used = 0;
    while used < points {
        let (rho, rho_s, th, th_s) = polar_sample(&mut rng);
        let x = ((rho * rho - rho_s * rho_s) * (th - th_s)).abs();
        if (x - beta).abs() < KINK_MARGIN {
            continue;
        }
        used += 1;
        let a = polar_ring_loss(rho, rho_s, th, th_s, beta).expect("positive radii");
        let f_rho =
            |v: f64| polar_ring_loss(v, rho_s, th, th_s, beta).map_or(f64::NAN, |l| l.value);
        let f_th =
            |v: f64| polar_ring_loss(rho, rho_s, v, th_s, beta).map_or(f64::NAN, |l| l.value);
        err.push(a.grad_rho, central_difference(f_rho, rho, LOSS_STEP));
        err.push(a.grad_theta, central_difference(f_th, th, LOSS_STEP));
    }
    (err.compared, err.max)
}

/// Weighted regression loss, gradient with respect to (ρ, θ1, θ2).
pub fn check_regression(points: usize, seed: u64) -> (usize, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = LossConfig::default();
    let beta = cfg.smooth_l1_beta;
    let mut err = MaxError::default();
    let mut used = 0;
    while used < points {
        let (rho, rho_s, t1, t1_s) = polar_sample(&mut rng);
        let (t2, t2_s) = (rng.random_range(0.0..3.1), rng.random_range(0.0..3.1));
        let near_kink = |d: f64| (d.abs() - beta).abs() < KINK_MARGIN;
        let dr2 = rho * rho - rho_s * rho_s;
        if [
            rho - rho_s,
            t1 - t1_s,
            t2 - t2_s,
            dr2 * (t1 - t1_s),
            dr2 * (t2 - t2_s),
        ]
        .into_iter()
        .any(near_kink)
        {
            continue;
        }
        used += 1;
        let pred = PolarParams {
            rho,
            theta1: t1,
            theta2: t2,
        };
        let truth = PolarParams {
            rho: rho_s,
            theta1: t1_s,
            theta2: t2_s,
        };
        let a = total_regression_loss(pred, truth, &cfg).expect("positive radii");
        let value =
            |p: PolarParams| total_regression_loss(p, truth, &cfg).map_or(f64::NAN, |l| l.value);
        let n_rho = central_difference(|v| value(PolarParams { rho: v, ..pred }), rho, LOSS_STEP);
        let n_t1 = central_difference(|v| value(PolarParams { theta1: v, ..pred }), t1, LOSS_STEP);
        let n_t2 = central_difference(|v| value(PolarParams { theta2: v, ..pred }), t2, LOSS_STEP);
        err.push(a.grad.rho, n_rho);
        err.push(a.grad.theta1, n_t1);
        err.push(a.grad.theta2, n_t2);
    }
    (err.compared, err.max)
}

/// Network small enough (under a thousand parameters) to check every
/// parameter, with a 16×16 input.
pub fn tiny_topology() -> Topology {
    Topology {
        in_channels: 1,
        stem_channels: 2,
        width: 4,
        num_classes: 1,
        block_dilations: [1, 2],
    }
}

/// One random image with one object, encoded for a 16×16 input.
pub fn tiny_example(seed: u64) -> TrainingExample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..256).map(|_| rng.random_range(0.0..1.0)).collect();
    let (cx, cy) = (rng.random_range(5.0..11.0), rng.random_range(5.0..11.0));
    let a: f64 = rng.random_range(0.0..std::f64::consts::PI);
    let (w, h) = (rng.random_range(4.0..8.0), rng.random_range(3.0..6.0));
    let (s, c) = a.sin_cos();
    let corners = [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)].map(|(p, q): (f64, f64)| {
        Point2::new(
            cx + p * c * w / 2.0 - q * s * h / 2.0,
            cy + p * s * w / 2.0 + q * c * h / 2.0,
        )
    });
    let quad = QuadBox::new(corners, 0).expect("valid rectangle");
    let pbox = quad_to_polar(&quad).expect("non-degenerate");
    let cfg = GridConfig::new(16, 16, 4, 1).expect("valid grid");
    TrainingExample {
        image: Tensor::from_vec(1, 16, 16, data),
        target: encode_regression(&[pbox], &cfg).expect("in bounds"),
        num_objects: 1,
    }
}

/// Backpropagated gradient of the full objective against central
/// differences over every parameter.
///
/// Parameters are jittered first: with zero biases a dead region feeds later
/// ReLUs exactly zero, and a difference quotient across that kink is
/// meaningless.
pub fn check_network(seed: u64) -> (usize, f64) {
    let mut net = ToyNet::new(tiny_topology(), seed, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for p in &mut net.params {
        *p += rng.random_range(-0.05..0.05);
    }
    let ex = tiny_example(seed.wrapping_add(1));
    let cfg = LossConfig::default();
    let (_, grads) = batch_loss_and_grad(&net, &[&ex], &cfg).expect("valid shapes");
    let mut err = MaxError::default();
    let mut probe = net.clone();
    for (i, &g) in grads.iter().enumerate() {
        let x = net.params[i];
        let mut at = |v: f64| {
            probe.params[i] = v;
            batch_loss(&probe, &[&ex], &cfg).map_or(f64::NAN, |l| l.total)
        };
        let hi = at(x + NETWORK_STEP);
        let lo = at(x - NETWORK_STEP);
        probe.params[i] = x;
        err.push(g, (hi - lo) / (2.0 * NETWORK_STEP));
    }
    (err.compared, err.max)
}

pub fn run_check(
    kind: CheckKind,
    points: usize,
    seed: u64,
    loss_tol: f64,
    net_tol: f64,
) -> CheckResult {
    let ((compared, max_rel_error), tolerance) = match kind {
        CheckKind::Focal => (check_focal(points, seed), loss_tol),
        CheckKind::SmoothL1 => (check_smooth_l1(points, seed), loss_tol),
        CheckKind::Ring => (check_ring(points, seed), loss_tol),
        CheckKind::Regression => (check_regression(points, seed), loss_tol),
        CheckKind::Network => (check_network(seed), net_tol),
    };
    CheckResult {
        kind,
        compared,
        max_rel_error,
        tolerance,
    }
}

pub fn results_csv(results: &[CheckResult]) -> String {
    let mut s = String::from("check,compared,max_rel_error,tolerance,passed\n");
    for r in results {
        let _ = writeln!(
            s,
            "{},{},{:e},{:e},{}",
            r.kind,
            r.compared,
            r.max_rel_error,
            r.tolerance,
            r.passed()
        );
    }
    s
}
