//! Training losses with analytic gradients.
//!
//! * pole loss: CornerNet-style penalty-reduced focal loss over the heatmap;
//! * Smooth-L1 on each regressed quantity;
//! * polar ring area loss, Smooth-L1 of `|(ρ² − ρ*²)(θ − θ*)|` against zero.
//!
//! The ring loss uses the unhalved product. The geometric ring-sector area
//! ([`ring_area`]) carries the factor ½; the loss does not.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoding::Heatmap;

/// Predictions are clamped to `[ε, 1 − ε]` before the focal logarithms.
pub const PROB_EPSILON: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("prediction and target shapes differ")]
    ShapeError,
    #[error("object count must be at least 1")]
    EmptyImage,
    #[error("radii must be positive (rho {rho}, rho* {rho_star})")]
    InvalidRadius { rho: f64, rho_star: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Focal exponent on the prediction term.
    pub alpha_focal: f64,
    /// Penalty-reduction exponent on `1 − p*` for negatives.
    pub beta_focal: f64,
    /// Weight of the ring loss inside the regression loss.
    pub lambda_ring: f64,
    /// Weight of the regression loss inside the total loss.
    pub reg_weight: f64,
    pub smooth_l1_beta: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha_focal: 2.0,
            beta_focal: 4.0,
            lambda_ring: 0.01,
            reg_weight: 0.1,
            smooth_l1_beta: 1.0,
        }
    }
}

/// Loss value with the gradient of each heatmap cell.
#[derive(Debug, Clone, PartialEq)]
pub struct FocalLoss {
    pub value: f64,
    pub grad: Heatmap,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarLoss {
    pub value: f64,
    pub grad: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RingLoss {
    pub value: f64,
    pub grad_rho: f64,
    pub grad_theta: f64,
}

/// Regression triple `(ρ, θ1, θ2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarParams {
    pub rho: f64,
    pub theta1: f64,
    pub theta2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionLoss {
    pub value: f64,
    pub grad: PolarParams,
}

pub fn pole_focal_loss(
    pred: &Heatmap,
    target: &Heatmap,
    cfg: &LossConfig,
    num_objects: usize,
) -> Result<FocalLoss, LossError> {
    if !pred.same_shape(target) {
        return Err(LossError::ShapeError);
    }
    if num_objects == 0 {
        return Err(LossError::EmptyImage);
    }
    let (a, b) = (cfg.alpha_focal, cfg.beta_focal);
    let scale = 1.0 / num_objects as f64;
    let mut grad = Heatmap::zeros(pred.num_classes(), pred.width(), pred.height());
    let mut sum = 0.0;

    for ((pc, tc), gc) in pred
        .channels
        .iter()
        .zip(&target.channels)
        .zip(&mut grad.channels)
    {
        let g = gc.as_mut_slice();
        for (i, (&raw, &t)) in pc.as_slice().iter().zip(tc.as_slice()).enumerate() {
            let p = raw.clamp(PROB_EPSILON, 1.0 - PROB_EPSILON);
            let clamped = p != raw;
            let (term, dterm) = if t == 1.0 {
                let q = 1.0 - p;
                let lp = p.ln();
                let term = q.powf(a) * lp;
                let d = -a * q.powf(a - 1.0) * lp + q.powf(a) / p;
                (term, d)
            } else {
                let w = (1.0 - t).powf(b);
                let lq = (1.0 - p).ln();
                let term = w * p.powf(a) * lq;
                let d = w * (a * p.powf(a - 1.0) * lq - p.powf(a) / (1.0 - p));
                (term, d)
            };
            sum += term;
            g[i] = if clamped { 0.0 } else { -scale * dterm };
        }
    }
    Ok(FocalLoss {
        value: -scale * sum,
        grad,
    })
}

pub fn smooth_l1(u: f64, u_star: f64, beta: f64) -> ScalarLoss {
    let d = u - u_star;
    if d.abs() < beta {
        ScalarLoss {
            value: 0.5 * d * d / beta,
            grad: d / beta,
        }
    } else {
        ScalarLoss {
            value: d.abs() - 0.5 * beta,
            grad: d.signum(),
        }
    }
}

fn check_radii(rho: f64, rho_star: f64) -> Result<(), LossError> {
    if rho > 0.0 && rho_star > 0.0 {
        Ok(())
    } else {
        Err(LossError::InvalidRadius { rho, rho_star })
    }
}

/// Area of the annular sector between `(ρ, θ)` and `(ρ*, θ*)`.
pub fn ring_area(rho: f64, rho_star: f64, theta: f64, theta_star: f64) -> Result<f64, LossError> {
    check_radii(rho, rho_star)?;
    Ok(0.5 * ((rho * rho - rho_star * rho_star) * (theta - theta_star)).abs())
}

pub fn polar_ring_loss(
    rho: f64,
    rho_star: f64,
    theta: f64,
    theta_star: f64,
    beta: f64,
) -> Result<RingLoss, LossError> {
    check_radii(rho, rho_star)?;
    let dr2 = rho * rho - rho_star * rho_star;
    let dt = theta - theta_star;
    let x = dr2 * dt;
    let a = x.abs();
    let (value, dx) = if a < beta {
        (0.5 * a * a / beta, x / beta)
    } else {
        (a - 0.5 * beta, x.signum())
    };
    Ok(RingLoss {
        value,
        grad_rho: dx * 2.0 * rho * dt,
        grad_theta: dx * dr2,
    })
}

/// `λ·Σ_θ L_pr(ρ, θ) + Σ_u SmoothL1(u, u*)` over `θ ∈ {θ1, θ2}`, `u ∈ {ρ, θ1, θ2}`.
pub fn total_regression_loss(
    pred: PolarParams,
    target: PolarParams,
    cfg: &LossConfig,
) -> Result<RegressionLoss, LossError> {
    let beta = cfg.smooth_l1_beta;
    let lam = cfg.lambda_ring;
    let ring1 = polar_ring_loss(pred.rho, target.rho, pred.theta1, target.theta1, beta)?;
    let ring2 = polar_ring_loss(pred.rho, target.rho, pred.theta2, target.theta2, beta)?;
    let s_rho = smooth_l1(pred.rho, target.rho, beta);
    let s_t1 = smooth_l1(pred.theta1, target.theta1, beta);
    let s_t2 = smooth_l1(pred.theta2, target.theta2, beta);

    let value = lam * (ring1.value + ring2.value) + s_rho.value + s_t1.value + s_t2.value;
    let grad = PolarParams {
        rho: lam * (ring1.grad_rho + ring2.grad_rho) + s_rho.grad,
        theta1: lam * ring1.grad_theta + s_t1.grad,
        theta2: lam * ring2.grad_theta + s_t2.grad,
    };
    Ok(RegressionLoss { value, grad })
}

pub fn total_loss(pole_loss: f64, reg_loss: f64, cfg: &LossConfig) -> f64 {
    pole_loss + cfg.reg_weight * reg_loss
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Plane;
    use std::f64::consts::LN_2;

    fn one_cell(v: f64) -> Heatmap {
        Heatmap {
            channels: vec![Plane::from_vec(1, 1, vec![v])],
        }
    }

    #[test]
    fn focal_positive_cell() {
        let l = pole_focal_loss(&one_cell(0.5), &one_cell(1.0), &LossConfig::default(), 1).unwrap();
        assert!((l.value - 0.25 * LN_2).abs() < 1e-15);
    }

    #[test]
    fn focal_shoulder_cell() {
        let l = pole_focal_loss(&one_cell(0.5), &one_cell(0.5), &LossConfig::default(), 1).unwrap();
        assert!((l.value - 0.015625 * LN_2).abs() < 1e-15);
    }

    #[test]
    fn focal_perfect_limit() {
        let cfg = LossConfig::default();
        let mut last = f64::INFINITY;
        for eps in [1e-2, 1e-3, 1e-4, 1e-5] {
            let pred = Heatmap {
                channels: vec![Plane::from_vec(2, 1, vec![1.0 - eps, eps])],
            };
            let target = Heatmap {
                channels: vec![Plane::from_vec(2, 1, vec![1.0, 0.0])],
            };
            let v = pole_focal_loss(&pred, &target, &cfg, 1).unwrap().value;
            assert!(v >= 0.0 && v < last);
            last = v;
        }
        assert!(last < 1e-8);
    }

    #[test]
    fn focal_errors() {
        let cfg = LossConfig::default();
        assert_eq!(
            pole_focal_loss(&one_cell(0.5), &one_cell(1.0), &cfg, 0).unwrap_err(),
            LossError::EmptyImage
        );
        let two = Heatmap {
            channels: vec![Plane::from_vec(2, 1, vec![0.5, 0.5])],
        };
        assert_eq!(
            pole_focal_loss(&two, &one_cell(1.0), &cfg, 1).unwrap_err(),
            LossError::ShapeError
        );
    }

    #[test]
    fn focal_clamped_cells_have_zero_gradient() {
        let l = pole_focal_loss(&one_cell(0.0), &one_cell(0.0), &LossConfig::default(), 1).unwrap();
        assert_eq!(l.grad.channels[0].get(0, 0), 0.0);
        assert!(l.value.is_finite());
    }

    #[test]
    fn smooth_l1_examples() {
        assert_eq!(
            smooth_l1(1.0, 1.0, 1.0),
            ScalarLoss {
                value: 0.0,
                grad: 0.0
            }
        );
        assert_eq!(smooth_l1(0.5, 0.0, 1.0).value, 0.125);
        assert_eq!(
            smooth_l1(3.0, 0.0, 1.0),
            ScalarLoss {
                value: 2.5,
                grad: 1.0
            }
        );
        assert_eq!(smooth_l1(-3.0, 0.0, 1.0).grad, -1.0);
    }

    #[test]
    fn ring_area_examples() {
        assert_eq!(ring_area(2.0, 2.0, 0.3, 0.1).unwrap(), 0.0);
        assert_eq!(ring_area(2.0, 1.0, 0.3, 0.3).unwrap(), 0.0);
        assert_eq!(ring_area(2.0, 1.0, 1.0, 0.5).unwrap(), 0.75);
        assert!(matches!(
            ring_area(0.0, 1.0, 0.0, 0.0),
            Err(LossError::InvalidRadius { .. })
        ));
        assert!(ring_area(1.0, -1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn ring_loss_examples() {
        assert_eq!(polar_ring_loss(1.5, 1.5, 0.9, 0.1, 1.0).unwrap().value, 0.0);
        // (4 - 3.5)·1 = 0.5
        let l = polar_ring_loss(2.0, 3.5f64.sqrt(), 1.0, 0.0, 1.0).unwrap();
        assert!((l.value - 0.125).abs() < 1e-15);
        // (4 - 1)·1 = 3
        let l = polar_ring_loss(2.0, 1.0, 1.0, 0.0, 1.0).unwrap();
        assert!((l.value - 2.5).abs() < 1e-15);
    }

    #[test]
    fn regression_loss_examples() {
        let cfg = LossConfig::default();
        let t = PolarParams {
            rho: 1.0,
            theta1: 0.4,
            theta2: 1.2,
        };
        assert_eq!(total_regression_loss(t, t, &cfg).unwrap().value, 0.0);

        let p = PolarParams {
            rho: 1.0,
            theta1: 0.9,
            theta2: 1.0,
        };
        let v = total_regression_loss(p, t, &cfg).unwrap().value;
        let want = smooth_l1(0.9, 0.4, 1.0).value + smooth_l1(1.0, 1.2, 1.0).value;
        assert!((v - want).abs() < 1e-15);

        let p = PolarParams {
            rho: 2.0,
            theta1: 0.5,
            theta2: 1.2,
        };
        let v = total_regression_loss(p, t, &cfg).unwrap().value;
        assert!((v - (0.00045 + 0.5 + 0.005)).abs() < 1e-12);
    }

    #[test]
    fn total_loss_examples() {
        let cfg = LossConfig::default();
        assert_eq!(total_loss(0.0, 0.0, &cfg), 0.0);
        assert!((total_loss(1.0, 2.0, &cfg) - 1.2).abs() < 1e-15);
        assert_eq!(
            total_loss(
                0.5,
                0.0,
                &LossConfig {
                    reg_weight: 7.0,
                    ..cfg
                }
            ),
            0.5
        );
    }
}
