//! Fixed fully-convolutional topology with output stride 4:
//!
//! ```text
//! stem 3×3/2 → ReLU → down 3×3/2 → ReLU
//!   → residual block (3×3 → ReLU → 3×3, + skip, ReLU) × 2
//!   → heads 1×1: heatmap (sigmoid), ρ (softplus), θ1/θ2 (π·sigmoid)
//! ```

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::conv::{conv_backward, conv_forward, ConvSpec};
use super::tensor::Tensor;
use super::NetError;
use crate::encoding::Heatmap;
use crate::grid::Plane;

pub const OUTPUT_STRIDE: usize = 4;

/// Heatmap bias so that the initial confidence is about 0.1 everywhere.
const HEATMAP_PRIOR_BIAS: f64 = -2.19;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    pub in_channels: usize,
    pub stem_channels: usize,
    pub width: usize,
    pub num_classes: usize,
    /// Dilation of the two convolutions in each residual block.
    pub block_dilations: [usize; 2],
}

impl Topology {
    pub fn new(num_classes: usize) -> Self {
        Self {
            in_channels: 1,
            stem_channels: 12,
            width: 24,
            num_classes,
            block_dilations: [1, 2],
        }
    }
}

const STEM: usize = 0;
const DOWN: usize = 1;
const BLOCKS: [[usize; 2]; 2] = [[2, 3], [4, 5]];
const HEAD_HEAT: usize = 6;
const HEAD_RHO: usize = 7;
const HEAD_ANGLE: usize = 8;

fn layer_specs(t: &Topology) -> Vec<ConvSpec> {
    let mut offset = 0;
    let mut make = |in_c: usize, out_c: usize, k: usize, s: usize, p: usize, d: usize| {
        let weight_offset = offset;
        let bias_offset = offset + out_c * in_c * k * k;
        offset = bias_offset + out_c;
        ConvSpec {
            in_channels: in_c,
            out_channels: out_c,
            kernel: k,
            stride: s,
            padding: p,
            dilation: d,
            weight_offset,
            bias_offset,
        }
    };
    let mut layers = vec![
        make(t.in_channels, t.stem_channels, 3, 2, 1, 1),
        make(t.stem_channels, t.width, 3, 2, 1, 1),
    ];
    for &d in &t.block_dilations {
        layers.push(make(t.width, t.width, 3, 1, d, d));
        layers.push(make(t.width, t.width, 3, 1, d, d));
    }
    layers.push(make(t.width, t.num_classes, 1, 1, 0, 1));
    layers.push(make(t.width, 1, 1, 1, 0, 1));
    layers.push(make(t.width, 2, 1, 1, 0, 1));
    layers
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyNet {
    topology: Topology,
    layers: Vec<ConvSpec>,
    pub params: Vec<f64>,
}

/// Head outputs on the stride-4 grid.
#[derive(Debug, Clone, PartialEq)]
pub struct NetOutput {
    pub heatmap: Heatmap,
    /// Radius in grid units.
    pub rho: Plane,
    pub theta1: Plane,
    pub theta2: Plane,
}

/// Gradients of a scalar objective with respect to the head outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrads {
    pub heatmap: Heatmap,
    pub rho: Plane,
    pub theta1: Plane,
    pub theta2: Plane,
}

impl HeadGrads {
    pub fn zeros(num_classes: usize, width: usize, height: usize) -> Self {
        Self {
            heatmap: Heatmap::zeros(num_classes, width, height),
            rho: Plane::new(width, height),
            theta1: Plane::new(width, height),
            theta2: Plane::new(width, height),
        }
    }
}

/// Activations recorded by a forward pass for the following backward pass.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    inner: Option<TapeInner>,
}

#[derive(Debug, Clone)]
struct TapeInner {
    input: Tensor,
    stem: Tensor,
    down: Tensor,
    /// Per block: hidden activation and block output.
    blocks: Vec<(Tensor, Tensor)>,
    heat_logits: Tensor,
    rho_logits: Tensor,
    angle_logits: Tensor,
}

impl Tape {
    pub fn is_empty(&self) -> bool {
        self.inner.is_none()
    }

    pub fn clear(&mut self) {
        self.inner = None;
    }
}

fn relu(mut t: Tensor) -> Tensor {
    t.data.iter_mut().for_each(|v| *v = v.max(0.0));
    t
}

/// Zeroes gradient entries where the activation was clamped by ReLU.
fn relu_mask(grad: &mut Tensor, activation: &Tensor) {
    for (g, &a) in grad.data.iter_mut().zip(&activation.data) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z + (-z).exp()
    } else {
        z.exp().ln_1p()
    }
}

fn inverse_softplus(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

fn plane_from(t: &Tensor, c: usize) -> Plane {
    Plane::from_vec(t.width, t.height, t.channel(c).to_vec())
}

impl ToyNet {
    /// He-normal weights scaled by fan-in, seeded. Head biases start at a
    /// low heatmap prior, a radius of `rho_prior` grid cells and angles of π/2.
    pub fn new(topology: Topology, seed: u64, rho_prior: f64) -> Self {
        let layers = layer_specs(&topology);
        let total: usize = layers.iter().map(|l| l.param_len()).sum();
        let mut params = vec![0.0; total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (i, l) in layers.iter().enumerate() {
            let std = if i >= HEAD_HEAT {
                0.01
            } else {
                (2.0 / l.fan_in() as f64).sqrt()
            };
            let normal = Normal::new(0.0, std).expect("positive std");
            for w in &mut params[l.weight_offset..l.weight_offset + l.weight_len()] {
                *w = normal.sample(&mut rng);
            }
        }
        let heat = layers[HEAD_HEAT];
        params[heat.bias_offset..heat.bias_offset + heat.out_channels].fill(HEATMAP_PRIOR_BIAS);
        params[layers[HEAD_RHO].bias_offset] = inverse_softplus(rho_prior.max(1e-3));
        Self {
            topology,
            layers,
            params,
        }
    }

    /// Rebuilds a network from stored parameters.
    pub fn from_params(topology: Topology, params: Vec<f64>) -> Result<Self, NetError> {
        let layers = layer_specs(&topology);
        let total: usize = layers.iter().map(|l| l.param_len()).sum();
        if params.len() != total {
            return Err(NetError::Shape(format!(
                "topology needs {total} parameters, got {}",
                params.len()
            )));
        }
        Ok(Self {
            topology,
            layers,
            params,
        })
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn check_input(&self, image: &Tensor) -> Result<(), NetError> {
        if image.channels != self.topology.in_channels {
            return Err(NetError::Shape(format!(
                "expected {} input channels, got {}",
                self.topology.in_channels, image.channels
            )));
        }
        if image.width == 0
            || image.height == 0
            || !image.width.is_multiple_of(OUTPUT_STRIDE)
            || !image.height.is_multiple_of(OUTPUT_STRIDE)
        {
            return Err(NetError::Shape(format!(
                "input {}x{} is not a positive multiple of {OUTPUT_STRIDE}",
                image.width, image.height
            )));
        }
        Ok(())
    }

    pub fn forward(&self, image: &Tensor) -> Result<NetOutput, NetError> {
        let mut tape = Tape::default();
        self.forward_recorded(image, &mut tape)
    }

    /// Forward pass that keeps the activations needed by [`ToyNet::backward`].
    pub fn forward_recorded(&self, image: &Tensor, tape: &mut Tape) -> Result<NetOutput, NetError> {
        self.check_input(image)?;
        let p = &self.params;
        let stem = relu(conv_forward(&self.layers[STEM], p, image));
        let down = relu(conv_forward(&self.layers[DOWN], p, &stem));
        let mut blocks = Vec::with_capacity(2);
        let mut x = down.clone();
        for [a, b] in BLOCKS {
            let hidden = relu(conv_forward(&self.layers[a], p, &x));
            let mut out = conv_forward(&self.layers[b], p, &hidden);
            for (o, s) in out.data.iter_mut().zip(&x.data) {
                *o += s;
            }
            let out = relu(out);
            blocks.push((hidden, out.clone()));
            x = out;
        }
        let heat_logits = conv_forward(&self.layers[HEAD_HEAT], p, &x);
        let rho_logits = conv_forward(&self.layers[HEAD_RHO], p, &x);
        let angle_logits = conv_forward(&self.layers[HEAD_ANGLE], p, &x);

        let heatmap = Heatmap {
            channels: (0..heat_logits.channels)
                .map(|c| {
                    let mut pl = plane_from(&heat_logits, c);
                    pl.as_mut_slice().iter_mut().for_each(|v| *v = sigmoid(*v));
                    pl
                })
                .collect(),
        };
        let mut rho = plane_from(&rho_logits, 0);
        rho.as_mut_slice()
            .iter_mut()
            .for_each(|v| *v = softplus(*v));
        let mut theta1 = plane_from(&angle_logits, 0);
        theta1
            .as_mut_slice()
            .iter_mut()
            .for_each(|v| *v = PI * sigmoid(*v));
        let mut theta2 = plane_from(&angle_logits, 1);
        theta2
            .as_mut_slice()
            .iter_mut()
            .for_each(|v| *v = PI * sigmoid(*v));

        tape.inner = Some(TapeInner {
            input: image.clone(),
            stem,
            down,
            blocks,
            heat_logits,
            rho_logits,
            angle_logits,
        });
        Ok(NetOutput {
            heatmap,
            rho,
            theta1,
            theta2,
        })
    }

    /// Parameter gradients for head-output gradients `upstream`, using the
    /// activations of the last recorded forward pass.
    pub fn backward(&self, tape: &Tape, upstream: &HeadGrads) -> Result<Vec<f64>, NetError> {
        let t = tape.inner.as_ref().ok_or(NetError::State(
            "backward called without a recorded forward pass",
        ))?;
        let (gh, gw) = (t.heat_logits.height, t.heat_logits.width);
        let heat_ok = upstream.heatmap.num_classes() == self.topology.num_classes
            && upstream.heatmap.width() == gw
            && upstream.heatmap.height() == gh;
        let planes_ok = [&upstream.rho, &upstream.theta1, &upstream.theta2]
            .iter()
            .all(|p| p.width() == gw && p.height() == gh);
        if !heat_ok || !planes_ok {
            return Err(NetError::Shape(
                "head gradients do not match the recorded outputs".into(),
            ));
        }

        // chain through the output activations to the logits
        let mut g_heat = Tensor::zeros(t.heat_logits.channels, gh, gw);
        for c in 0..g_heat.channels {
            let z = t.heat_logits.channel(c);
            let g = upstream.heatmap.channels[c].as_slice();
            for ((o, &zi), &gi) in g_heat.channel_mut(c).iter_mut().zip(z).zip(g) {
                let s = sigmoid(zi);
                *o = gi * s * (1.0 - s);
            }
        }
        let mut g_rho = Tensor::zeros(1, gh, gw);
        for ((o, &zi), &gi) in g_rho
            .data
            .iter_mut()
            .zip(&t.rho_logits.data)
            .zip(upstream.rho.as_slice())
        {
            *o = gi * sigmoid(zi);
        }
        let mut g_angle = Tensor::zeros(2, gh, gw);
        for (c, up) in [&upstream.theta1, &upstream.theta2].into_iter().enumerate() {
            let z = t.angle_logits.channel(c);
            for ((o, &zi), &gi) in g_angle.channel_mut(c).iter_mut().zip(z).zip(up.as_slice()) {
                let s = sigmoid(zi);
                *o = gi * PI * s * (1.0 - s);
            }
        }

        let p = &self.params;
        let mut grads = vec![0.0; p.len()];
        let features = &t.blocks[1].1;
        let mut g_x = conv_backward(
            &self.layers[HEAD_HEAT],
            p,
            features,
            &g_heat,
            &mut grads,
            true,
        )
        .expect("input gradient requested");
        for (layer, g) in [(HEAD_RHO, &g_rho), (HEAD_ANGLE, &g_angle)] {
            let gi = conv_backward(&self.layers[layer], p, features, g, &mut grads, true)
                .expect("input gradient requested");
            for (a, b) in g_x.data.iter_mut().zip(&gi.data) {
                *a += b;
            }
        }

        for (bi, [a, b]) in BLOCKS.iter().enumerate().rev() {
            let input = if bi == 0 {
                &t.down
            } else {
                &t.blocks[bi - 1].1
            };
            let (hidden, out) = &t.blocks[bi];
            relu_mask(&mut g_x, out);
            let mut g_hidden = conv_backward(&self.layers[*b], p, hidden, &g_x, &mut grads, true)
                .expect("input gradient requested");
            relu_mask(&mut g_hidden, hidden);
            let g_in = conv_backward(&self.layers[*a], p, input, &g_hidden, &mut grads, true)
                .expect("input gradient requested");
            // skip connection
            for (s, gi) in g_x.data.iter_mut().zip(&g_in.data) {
                *s += gi;
            }
        }

        relu_mask(&mut g_x, &t.down);
        let mut g_stem = conv_backward(&self.layers[DOWN], p, &t.stem, &g_x, &mut grads, true)
            .expect("input gradient requested");
        relu_mask(&mut g_stem, &t.stem);
        conv_backward(&self.layers[STEM], p, &t.input, &g_stem, &mut grads, false);
        Ok(grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Topology {
        Topology {
            in_channels: 1,
            stem_channels: 2,
            width: 3,
            num_classes: 2,
            block_dilations: [1, 2],
        }
    }

    #[test]
    fn output_shapes_and_ranges() {
        let net = ToyNet::new(Topology::new(2), 1, 3.0);
        let img = Tensor::from_vec(1, 64, 64, (0..4096).map(|i| (i % 7) as f64 / 7.0).collect());
        let out = net.forward(&img).unwrap();
        assert_eq!(out.heatmap.num_classes(), 2);
        assert_eq!((out.heatmap.width(), out.heatmap.height()), (16, 16));
        assert_eq!((out.rho.width(), out.rho.height()), (16, 16));
        for c in &out.heatmap.channels {
            assert!(c.as_slice().iter().all(|&v| v > 0.0 && v < 1.0));
        }
        assert!(out.rho.as_slice().iter().all(|&v| v > 0.0));
        for t in [&out.theta1, &out.theta2] {
            assert!(t.as_slice().iter().all(|&v| v > 0.0 && v < PI));
        }
    }

    #[test]
    fn rejects_indivisible_input() {
        let net = ToyNet::new(tiny(), 1, 3.0);
        let img = Tensor::zeros(1, 30, 32);
        assert!(matches!(net.forward(&img), Err(NetError::Shape(_))));
    }

    #[test]
    fn zero_weights_give_half_confidence() {
        let mut net = ToyNet::new(tiny(), 1, 3.0);
        net.params.fill(0.0);
        let img = Tensor::from_vec(1, 16, 16, vec![0.7; 256]);
        let out = net.forward(&img).unwrap();
        assert!(out
            .heatmap
            .channels
            .iter()
            .all(|c| c.as_slice().iter().all(|&v| v == 0.5)));
    }

    #[test]
    fn backward_without_forward_is_state_error() {
        let net = ToyNet::new(tiny(), 1, 3.0);
        let g = HeadGrads::zeros(2, 4, 4);
        assert!(matches!(
            net.backward(&Tape::default(), &g),
            Err(NetError::State(_))
        ));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let net = ToyNet::new(tiny(), 3, 3.0);
        let img = Tensor::from_vec(1, 16, 16, (0..256).map(|i| (i % 5) as f64 / 5.0).collect());
        let mut tape = Tape::default();
        net.forward_recorded(&img, &mut tape).unwrap();
        let grads = net.backward(&tape, &HeadGrads::zeros(2, 4, 4)).unwrap();
        assert!(grads.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn mismatched_head_grads_rejected() {
        let net = ToyNet::new(tiny(), 3, 3.0);
        let img = Tensor::zeros(1, 16, 16);
        let mut tape = Tape::default();
        net.forward_recorded(&img, &mut tape).unwrap();
        assert!(matches!(
            net.backward(&tape, &HeadGrads::zeros(2, 5, 4)),
            Err(NetError::Shape(_))
        ));
    }

    #[test]
    fn softplus_inverse() {
        for y in [0.01, 0.5, 3.0, 20.0] {
            assert!((softplus(inverse_softplus(y)) - y).abs() < 1e-12);
        }
    }
}
