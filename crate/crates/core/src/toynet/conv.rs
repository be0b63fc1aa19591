//! 2-D convolution through im2col, forward and backward.

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    /// Offset of the `[out][in][ky][kx]` weights in the flat parameter vector.
    pub weight_offset: usize,
    pub bias_offset: usize,
}

impl ConvSpec {
    pub fn weight_len(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel
    }

    pub fn param_len(&self) -> usize {
        self.weight_len() + self.out_channels
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn output_size(&self, height: usize, width: usize) -> (usize, usize) {
        let span = self.dilation * (self.kernel - 1) + 1;
        let oh = (height + 2 * self.padding - span) / self.stride + 1;
        let ow = (width + 2 * self.padding - span) / self.stride + 1;
        (oh, ow)
    }

    fn weights<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        &params[self.weight_offset..self.weight_offset + self.weight_len()]
    }

    fn bias<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        &params[self.bias_offset..self.bias_offset + self.out_channels]
    }
}

/// Rows are `(in_channel, ky, kx)`, columns are output positions.
fn im2col(spec: &ConvSpec, x: &Tensor, oh: usize, ow: usize) -> Vec<f64> {
    let k = spec.kernel;
    let positions = oh * ow;
    let mut col = vec![0.0; spec.fan_in() * positions];
    for ic in 0..spec.in_channels {
        let plane = x.channel(ic);
        for ky in 0..k {
            for kx in 0..k {
                let row = (ic * k + ky) * k + kx;
                let dst = &mut col[row * positions..(row + 1) * positions];
                for oy in 0..oh {
                    let iy =
                        (oy * spec.stride + ky * spec.dilation) as isize - spec.padding as isize;
                    if iy < 0 || iy >= x.height as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * x.width..(iy as usize + 1) * x.width];
                    let out = &mut dst[oy * ow..(oy + 1) * ow];
                    for (ox, o) in out.iter_mut().enumerate() {
                        let ix = (ox * spec.stride + kx * spec.dilation) as isize
                            - spec.padding as isize;
                        if ix >= 0 && ix < x.width as isize {
                            *o = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

fn col2im(spec: &ConvSpec, col: &[f64], gx: &mut Tensor, oh: usize, ow: usize) {
    let k = spec.kernel;
    let positions = oh * ow;
    let (h, w) = (gx.height, gx.width);
    for ic in 0..spec.in_channels {
        let plane = gx.channel_mut(ic);
        for ky in 0..k {
            for kx in 0..k {
                let row = (ic * k + ky) * k + kx;
                let src = &col[row * positions..(row + 1) * positions];
                for oy in 0..oh {
                    let iy =
                        (oy * spec.stride + ky * spec.dilation) as isize - spec.padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = (ox * spec.stride + kx * spec.dilation) as isize
                            - spec.padding as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
fn dot(x: &[f64], y: &[f64]) -> f64 {
    // four accumulators so the loop vectorizes
    let mut acc = [0.0; 4];
    let chunks = x.len() / 4;
    for i in 0..chunks {
        for l in 0..4 {
            acc[l] += x[4 * i + l] * y[4 * i + l];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..x.len() {
        s += x[i] * y[i];
    }
    s
}

pub fn conv_forward(spec: &ConvSpec, params: &[f64], x: &Tensor) -> Tensor {
    debug_assert_eq!(x.channels, spec.in_channels);
    let (oh, ow) = spec.output_size(x.height, x.width);
    let positions = oh * ow;
    let fan_in = spec.fan_in();
    let col = im2col(spec, x, oh, ow);
    let weights = spec.weights(params);
    let bias = spec.bias(params);
    let mut y = Tensor::zeros(spec.out_channels, oh, ow);
    for oc in 0..spec.out_channels {
        let out = y.channel_mut(oc);
        out.iter_mut().for_each(|v| *v = bias[oc]);
        let wrow = &weights[oc * fan_in..(oc + 1) * fan_in];
        for (r, &wv) in wrow.iter().enumerate() {
            if wv != 0.0 {
                axpy(wv, &col[r * positions..(r + 1) * positions], out);
            }
        }
    }
    y
}

/// Accumulates parameter gradients into `grads` and returns the input
/// gradient when `want_input` is set.
pub fn conv_backward(
    spec: &ConvSpec,
    params: &[f64],
    x: &Tensor,
    gy: &Tensor,
    grads: &mut [f64],
    want_input: bool,
) -> Option<Tensor> {
    let (oh, ow) = (gy.height, gy.width);
    let positions = oh * ow;
    let fan_in = spec.fan_in();
    let col = im2col(spec, x, oh, ow);

    for oc in 0..spec.out_channels {
        let g = gy.channel(oc);
        let base = spec.weight_offset + oc * fan_in;
        for r in 0..fan_in {
            grads[base + r] += dot(g, &col[r * positions..(r + 1) * positions]);
        }
        grads[spec.bias_offset + oc] += g.iter().sum::<f64>();
    }

    if !want_input {
        return None;
    }
    let weights = spec.weights(params);
    let mut gcol = vec![0.0; fan_in * positions];
    for oc in 0..spec.out_channels {
        let g = gy.channel(oc);
        let wrow = &weights[oc * fan_in..(oc + 1) * fan_in];
        for (r, &wv) in wrow.iter().enumerate() {
            if wv != 0.0 {
                axpy(wv, g, &mut gcol[r * positions..(r + 1) * positions]);
            }
        }
    }
    let mut gx = Tensor::zeros(x.channels, x.height, x.width);
    col2im(spec, &gcol, &mut gx, oh, ow);
    Some(gx)
}
