//! Per-image objective, Adam, and the training loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::net::{HeadGrads, NetOutput, Tape, ToyNet};
use super::tensor::Tensor;
use super::NetError;
use crate::encoding::EncodedSample;
use crate::losses::{pole_focal_loss, total_loss, total_regression_loss, LossConfig, PolarParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.0025,
            batch_size: 8,
            iterations: 3000,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(NetError::InvalidConfig(
                "learning rate must be finite and non-negative",
            ));
        }
        if self.batch_size == 0 {
            return Err(NetError::InvalidConfig("batch size must be at least 1"));
        }
        Ok(())
    }
}

/// One training image with its encoded targets.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub image: Tensor,
    pub target: EncodedSample,
    pub num_objects: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub pole: f64,
    /// Regression loss before `reg_weight`, averaged over pole cells.
    pub regression: f64,
}

impl LossBreakdown {
    fn scaled_add(&mut self, other: &LossBreakdown, w: f64) {
        self.total += w * other.total;
        self.pole += w * other.pole;
        self.regression += w * other.regression;
    }
}

/// Loss of one image and the gradients with respect to the head outputs.
///
/// The pole loss divides by the object count (at least 1); the regression
/// loss is the mean of the per-pole regression losses.
pub fn head_loss(
    out: &NetOutput,
    target: &EncodedSample,
    num_objects: usize,
    cfg: &LossConfig,
) -> Result<(LossBreakdown, HeadGrads), NetError> {
    let focal = pole_focal_loss(
        &out.heatmap,
        &target.heatmap_target,
        cfg,
        num_objects.max(1),
    )?;
    let (w, h) = (out.rho.width(), out.rho.height());
    let mut grads = HeadGrads {
        heatmap: focal.grad,
        rho: crate::grid::Plane::new(w, h),
        theta1: crate::grid::Plane::new(w, h),
        theta2: crate::grid::Plane::new(w, h),
    };

    let cells = &target.pole_cells;
    let mut regression = 0.0;
    if !cells.is_empty() {
        let scale = 1.0 / cells.len() as f64;
        for c in cells {
            let (x, y) = (c.cell_x, c.cell_y);
            let pred = PolarParams {
                rho: out.rho.get(x, y),
                theta1: out.theta1.get(x, y),
                theta2: out.theta2.get(x, y),
            };
            let truth = PolarParams {
                rho: target.rho_plane.get(x, y),
                theta1: target.theta1_plane.get(x, y),
                theta2: target.theta2_plane.get(x, y),
            };
            let r = total_regression_loss(pred, truth, cfg)?;
            regression += scale * r.value;
            let k = cfg.reg_weight * scale;
            grads.rho.set(x, y, grads.rho.get(x, y) + k * r.grad.rho);
            grads
                .theta1
                .set(x, y, grads.theta1.get(x, y) + k * r.grad.theta1);
            grads
                .theta2
                .set(x, y, grads.theta2.get(x, y) + k * r.grad.theta2);
        }
    }
    let breakdown = LossBreakdown {
        total: total_loss(focal.value, regression, cfg),
        pole: focal.value,
        regression,
    };
    Ok((breakdown, grads))
}

/// Mean loss over `batch` without gradients.
pub fn batch_loss(
    net: &ToyNet,
    batch: &[&TrainingExample],
    cfg: &LossConfig,
) -> Result<LossBreakdown, NetError> {
    let mut acc = LossBreakdown::default();
    let w = 1.0 / batch.len().max(1) as f64;
    for ex in batch {
        let out = net.forward(&ex.image)?;
        let (l, _) = head_loss(&out, &ex.target, ex.num_objects, cfg)?;
        acc.scaled_add(&l, w);
    }
    Ok(acc)
}

/// Mean loss over `batch` and its parameter gradient. Per-image gradients are
/// summed in batch order.
pub fn batch_loss_and_grad(
    net: &ToyNet,
    batch: &[&TrainingExample],
    cfg: &LossConfig,
) -> Result<(LossBreakdown, Vec<f64>), NetError> {
    let mut acc = LossBreakdown::default();
    let mut grads = vec![0.0; net.num_params()];
    let w = 1.0 / batch.len().max(1) as f64;
    let mut tape = Tape::default();
    for ex in batch {
        let out = net.forward_recorded(&ex.image, &mut tape)?;
        let (l, head) = head_loss(&out, &ex.target, ex.num_objects, cfg)?;
        acc.scaled_add(&l, w);
        let g = net.backward(&tape, &head)?;
        for (a, b) in grads.iter_mut().zip(&g) {
            *a += w * b;
        }
    }
    Ok((acc, grads))
}

#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(num_params: usize, cfg: &TrainConfig) -> Self {
        Self {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
            step: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }

    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

/// Losses recorded at every iteration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub iterations: Vec<LossBreakdown>,
}

impl TrainHistory {
    /// Mean total loss over iterations `[start, end)`.
    pub fn mean_total(&self, start: usize, end: usize) -> f64 {
        let end = end.min(self.iterations.len());
        let start = start.min(end);
        let n = (end - start).max(1) as f64;
        self.iterations[start..end]
            .iter()
            .map(|l| l.total)
            .sum::<f64>()
            / n
    }
}

pub fn train(
    examples: &[TrainingExample],
    net: &mut ToyNet,
    cfg: &TrainConfig,
    loss_cfg: &LossConfig,
) -> Result<TrainHistory, NetError> {
    train_with_progress(examples, net, cfg, loss_cfg, |_, _| {})
}

/// Adam on minibatches drawn from per-epoch shuffles of `examples`.
pub fn train_with_progress(
    examples: &[TrainingExample],
    net: &mut ToyNet,
    cfg: &TrainConfig,
    loss_cfg: &LossConfig,
    mut on_iteration: impl FnMut(usize, &LossBreakdown),
) -> Result<TrainHistory, NetError> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(NetError::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(net.num_params(), cfg);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut cursor = order.len();
    let mut history = TrainHistory::default();

    for iteration in 0..cfg.iterations {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(&examples[order[cursor]]);
            cursor += 1;
        }
        let (loss, grads) = batch_loss_and_grad(net, &batch, loss_cfg)?;
        if !loss.total.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(NetError::Divergence { iteration });
        }
        adam.update(&mut net.params, &grads);
        on_iteration(iteration, &loss);
        history.iterations.push(loss);
    }
    Ok(history)
}
