//! Minimal differentiable building blocks shared by the backbone, the pair
//! classifier and the dual-encoder network.
//!
//! Parameters of a model live in one flat `Vec<f64>`; every layer records the
//! offsets of its weights and biases inside that vector, so gradients and
//! optimizer state are plain vectors of the same length. Activations are
//! single-sample, channel-major (`c × h × w`).

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Hands out consecutive parameter ranges while a model is being assembled.
#[derive(Debug, Default)]
pub struct ParamAlloc {
    len: usize,
}

impl ParamAlloc {
    pub fn new() -> Self {
        Self::default()
    }

    /// Reserves `n` consecutive parameters and returns their offset.
    pub fn take(&mut self, n: usize) -> usize {
        let off = self.len;
        self.len += n;
        off
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// 2-D convolution with square kernel, zero padding and uniform stride.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv2d {
    pub in_c: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    w_off: usize,
    b_off: usize,
}

impl Conv2d {
    pub fn new(
        alloc: &mut ParamAlloc,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let w_off = alloc.take(out_c * in_c * kernel * kernel);
        let b_off = alloc.take(out_c);
        Self {
            in_c,
            out_c,
            kernel,
            stride,
            pad,
            w_off,
            b_off,
        }
    }

    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.kernel) / self.stride + 1,
            (w + 2 * self.pad - self.kernel) / self.stride + 1,
        )
    }

    fn weight_len(&self) -> usize {
        self.out_c * self.in_c * self.kernel * self.kernel
    }

    /// Uniform init scaled by fan-in (`gain` = 6 gives He-uniform).
    pub fn init<R: Rng>(&self, params: &mut [f64], rng: &mut R, gain: f64) {
        let fan_in = (self.in_c * self.kernel * self.kernel) as f64;
        let bound = (gain / fan_in).sqrt();
        for w in &mut params[self.w_off..self.w_off + self.weight_len()] {
            *w = rng.random_range(-bound..bound);
        }
        params[self.b_off..self.b_off + self.out_c].fill(0.0);
    }

    pub fn forward(&self, params: &[f64], input: &[f64], h: usize, w: usize) -> (Vec<f64>, usize, usize) {
        debug_assert_eq!(input.len(), self.in_c * h * w);
        let (oh, ow) = self.out_dims(h, w);
        let k = self.kernel;
        let weights = &params[self.w_off..self.w_off + self.weight_len()];
        let bias = &params[self.b_off..self.b_off + self.out_c];
        let mut out = vec![0.0; self.out_c * oh * ow];
        for oc in 0..self.out_c {
            let out_plane = &mut out[oc * oh * ow..(oc + 1) * oh * ow];
            out_plane.fill(bias[oc]);
            for ic in 0..self.in_c {
                let in_plane = &input[ic * h * w..(ic + 1) * h * w];
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = weights[((oc * self.in_c + ic) * k + ky) * k + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        for oy in 0..oh {
                            let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let row = &in_plane[iy as usize * w..(iy as usize + 1) * w];
                            let orow = &mut out_plane[oy * ow..(oy + 1) * ow];
                            for (ox, o) in orow.iter_mut().enumerate() {
                                let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                                if ix >= 0 && ix < w as isize {
                                    *o += wv * row[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        (out, oh, ow)
    }

    /// Accumulates parameter gradients into `grads` and, when requested,
    /// writes the gradient with respect to `input` into `grad_in`.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        params: &[f64],
        input: &[f64],
        h: usize,
        w: usize,
        grad_out: &[f64],
        grads: &mut [f64],
        mut grad_in: Option<&mut [f64]>,
    ) {
        let (oh, ow) = self.out_dims(h, w);
        let k = self.kernel;
        if let Some(gi) = grad_in.as_deref_mut() {
            gi.fill(0.0);
        }
        for oc in 0..self.out_c {
            let g_plane = &grad_out[oc * oh * ow..(oc + 1) * oh * ow];
            grads[self.b_off + oc] += g_plane.iter().sum::<f64>();
            for ic in 0..self.in_c {
                let in_plane = &input[ic * h * w..(ic + 1) * h * w];
                for ky in 0..k {
                    for kx in 0..k {
                        let widx = ((oc * self.in_c + ic) * k + ky) * k + kx;
                        let wv = params[self.w_off + widx];
                        let mut gw = 0.0;
                        for oy in 0..oh {
                            let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let iy = iy as usize;
                            for ox in 0..ow {
                                let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let g = g_plane[oy * ow + ox];
                                gw += g * in_plane[iy * w + ix as usize];
                                if let Some(gi) = grad_in.as_deref_mut() {
                                    gi[ic * h * w + iy * w + ix as usize] += g * wv;
                                }
                            }
                        }
                        grads[self.w_off + widx] += gw;
                    }
                }
            }
        }
    }
}

/// Fully connected layer, `out = W·x + b` with `W` stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    w_off: usize,
    b_off: usize,
}

impl Dense {
    pub fn new(alloc: &mut ParamAlloc, in_dim: usize, out_dim: usize) -> Self {
        let w_off = alloc.take(in_dim * out_dim);
        let b_off = alloc.take(out_dim);
        Self {
            in_dim,
            out_dim,
            w_off,
            b_off,
        }
    }

    pub fn init<R: Rng>(&self, params: &mut [f64], rng: &mut R, gain: f64) {
        let bound = (gain / self.in_dim as f64).sqrt();
        for w in &mut params[self.w_off..self.w_off + self.in_dim * self.out_dim] {
            *w = rng.random_range(-bound..bound);
        }
        params[self.b_off..self.b_off + self.out_dim].fill(0.0);
    }

    pub fn forward(&self, params: &[f64], input: &[f64]) -> Vec<f64> {
        debug_assert_eq!(input.len(), self.in_dim);
        let weights = &params[self.w_off..self.w_off + self.in_dim * self.out_dim];
        (0..self.out_dim)
            .map(|o| {
                let row = &weights[o * self.in_dim..(o + 1) * self.in_dim];
                params[self.b_off + o] + row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }

    pub fn backward(
        &self,
        params: &[f64],
        input: &[f64],
        grad_out: &[f64],
        grads: &mut [f64],
        mut grad_in: Option<&mut [f64]>,
    ) {
        if let Some(gi) = grad_in.as_deref_mut() {
            gi.fill(0.0);
        }
        for (o, &g) in grad_out.iter().enumerate() {
            grads[self.b_off + o] += g;
            let row_off = self.w_off + o * self.in_dim;
            for i in 0..self.in_dim {
                grads[row_off + i] += g * input[i];
            }
            if let Some(gi) = grad_in.as_deref_mut() {
                let row = &params[row_off..row_off + self.in_dim];
                for (gv, wv) in gi.iter_mut().zip(row) {
                    *gv += g * wv;
                }
            }
        }
    }
}

/// ELU with unit scale; continuously differentiable, which keeps finite
/// difference checks well behaved at the origin.
pub fn elu(xs: &mut [f64]) {
    for x in xs {
        if *x < 0.0 {
            *x = x.exp_m1();
        }
    }
}

/// Multiplies `grad` in place by ELU's derivative, evaluated from the
/// activation's output.
pub fn elu_backward(out: &[f64], grad: &mut [f64]) {
    for (g, &y) in grad.iter_mut().zip(out) {
        if y < 0.0 {
            *g *= y + 1.0;
        }
    }
}

pub fn relu(xs: &mut [f64]) {
    for x in xs {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

pub fn tanh(xs: &mut [f64]) {
    for x in xs {
        *x = x.tanh();
    }
}

pub fn tanh_backward(out: &[f64], grad: &mut [f64]) {
    for (g, &y) in grad.iter_mut().zip(out) {
        *g *= 1.0 - y * y;
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Nearest-neighbour 2× upsampling of a `c × h × w` map.
pub fn upsample2(input: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                out[(ch * oh + y) * ow + x] = input[(ch * h + y / 2) * w + x / 2];
            }
        }
    }
    out
}

pub fn upsample2_backward(grad_out: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut grad_in = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                grad_in[(ch * h + y / 2) * w + x / 2] += grad_out[(ch * oh + y) * ow + x];
            }
        }
    }
    grad_in
}

/// Adam optimizer over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}
