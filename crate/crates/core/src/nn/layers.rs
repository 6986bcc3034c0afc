//! Layers with hand-written reverse passes. Forward functions return plain
//! outputs; the caller keeps whatever the backward pass needs.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;

use super::tensor::{FeatureMap, Tensor};
use crate::error::{Error, Result};
use crate::math::{exp, sigmoid, sqrt, tanh};

pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        exp(x) - 1.0
    }
}

/// ELU derivative recovered from the activation output.
#[inline]
pub fn elu_grad_from_output(y: f64) -> f64 {
    if y > 0.0 {
        1.0
    } else {
        y + 1.0
    }
}

pub fn elu_in_place(map: &mut FeatureMap) {
    for v in &mut map.data {
        *v = elu(*v);
    }
}

pub fn elu_backward_in_place(grad: &mut FeatureMap, output: &FeatureMap) {
    for (g, &y) in grad.data.iter_mut().zip(&output.data) {
        *g *= elu_grad_from_output(y);
    }
}

fn shape_err(layer: usize, detail: alloc::string::String) -> Error {
    Error::Shape { layer, detail }
}

/// 2-D convolution, causal in time (padding `kt - 1` past frames), strided
/// and unpadded in frequency. Weights are `[out][in][kt][kf]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CausalConv2d {
    pub weight: Tensor,
    pub bias: Tensor,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kt: usize,
    pub kf: usize,
    pub stride_f: usize,
}

impl CausalConv2d {
    pub fn new(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        (kt, kf): (usize, usize),
        stride_f: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = in_channels * kt * kf;
        Self {
            weight: Tensor::uniform(
                format!("{name}.weight"),
                &[out_channels, in_channels, kt, kf],
                sqrt(1.0 / fan_in as f64),
                rng,
            ),
            bias: Tensor::zeros(format!("{name}.bias"), &[out_channels]),
            in_channels,
            out_channels,
            kt,
            kf,
            stride_f,
        }
    }

    pub fn out_bins(&self, in_bins: usize) -> Option<usize> {
        (in_bins >= self.kf).then(|| (in_bins - self.kf) / self.stride_f + 1)
    }

    #[inline]
    fn w(&self, co: usize, ci: usize, t: usize, f: usize) -> usize {
        ((co * self.in_channels + ci) * self.kt + t) * self.kf + f
    }

    pub fn forward(&self, layer: usize, x: &FeatureMap) -> Result<FeatureMap> {
        if x.channels != self.in_channels {
            return Err(shape_err(
                layer,
                format!("expected {} input channels, got {}", self.in_channels, x.channels),
            ));
        }
        let fout = self
            .out_bins(x.bins)
            .ok_or_else(|| shape_err(layer, format!("{} bins is narrower than the kernel", x.bins)))?;
        let frames = x.frames;
        let mut out = FeatureMap::zeros(self.out_channels, frames, fout);
        let sf = self.stride_f;
        for co in 0..self.out_channels {
            let b = self.bias.data[co];
            for t in 0..frames {
                out.row_mut(co, t).fill(b);
            }
            for ci in 0..self.in_channels {
                for dt in 0..self.kt {
                    let lag = self.kt - 1 - dt;
                    for df in 0..self.kf {
                        let w = self.weight.data[self.w(co, ci, dt, df)];
                        for t in lag..frames {
                            let src = x.row(ci, t - lag);
                            let dst = out.row_mut(co, t);
                            for (f, o) in dst.iter_mut().enumerate() {
                                *o += w * src[sf * f + df];
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Accumulates parameter gradients and returns the input gradient when
    /// `need_input` is set.
    pub fn backward(&mut self, x: &FeatureMap, gout: &FeatureMap, need_input: bool) -> Option<FeatureMap> {
        let frames = x.frames;
        let sf = self.stride_f;
        let mut gin = need_input.then(|| FeatureMap::zeros(x.channels, frames, x.bins));
        let mut gw = vec![0.0; self.weight.numel()];
        {
            let gb = self.bias.grad_mut();
            for (co, g) in gb.iter_mut().enumerate() {
                let s = gout.idx(co, 0, 0);
                *g += gout.data[s..s + frames * gout.bins].iter().sum::<f64>();
            }
        }
        for co in 0..self.out_channels {
            for ci in 0..self.in_channels {
                for dt in 0..self.kt {
                    let lag = self.kt - 1 - dt;
                    for df in 0..self.kf {
                        let wi = self.w(co, ci, dt, df);
                        let w = self.weight.data[wi];
                        let mut acc = 0.0;
                        for t in lag..frames {
                            let g = gout.row(co, t);
                            let src = x.row(ci, t - lag);
                            for (f, &gv) in g.iter().enumerate() {
                                acc += gv * src[sf * f + df];
                            }
                            if let Some(gin) = gin.as_mut() {
                                let dst = gin.row_mut(ci, t - lag);
                                for (f, &gv) in g.iter().enumerate() {
                                    dst[sf * f + df] += w * gv;
                                }
                            }
                        }
                        gw[wi] += acc;
                    }
                }
            }
        }
        for (a, b) in self.weight.grad_mut().iter_mut().zip(&gw) {
            *a += b;
        }
        gin
    }
}

/// Transposed counterpart of [`CausalConv2d`]: causal in time, upsampling
/// by `stride_f` in frequency with `out_pad` extra trailing bins. Weights
/// are `[in][out][kt][kf]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CausalConvTranspose2d {
    pub weight: Tensor,
    pub bias: Tensor,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kt: usize,
    pub kf: usize,
    pub stride_f: usize,
    pub out_pad: usize,
}

impl CausalConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        (kt, kf): (usize, usize),
        stride_f: usize,
        out_pad: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = in_channels * kt * kf;
        Self {
            weight: Tensor::uniform(
                format!("{name}.weight"),
                &[in_channels, out_channels, kt, kf],
                sqrt(1.0 / fan_in as f64),
                rng,
            ),
            bias: Tensor::zeros(format!("{name}.bias"), &[out_channels]),
            in_channels,
            out_channels,
            kt,
            kf,
            stride_f,
            out_pad,
        }
    }

    pub fn out_bins(&self, in_bins: usize) -> usize {
        (in_bins - 1) * self.stride_f + self.kf + self.out_pad
    }

    #[inline]
    fn w(&self, ci: usize, co: usize, t: usize, f: usize) -> usize {
        ((ci * self.out_channels + co) * self.kt + t) * self.kf + f
    }

    pub fn forward(&self, layer: usize, x: &FeatureMap) -> Result<FeatureMap> {
        if x.channels != self.in_channels {
            return Err(shape_err(
                layer,
                format!("expected {} input channels, got {}", self.in_channels, x.channels),
            ));
        }
        if x.bins == 0 {
            return Err(shape_err(layer, "empty frequency axis".into()));
        }
        let frames = x.frames;
        let fout = self.out_bins(x.bins);
        let sf = self.stride_f;
        let mut out = FeatureMap::zeros(self.out_channels, frames, fout);
        for co in 0..self.out_channels {
            let b = self.bias.data[co];
            for t in 0..frames {
                out.row_mut(co, t).fill(b);
            }
            for ci in 0..self.in_channels {
                for dt in 0..self.kt {
                    let lag = self.kt - 1 - dt;
                    for df in 0..self.kf {
                        let w = self.weight.data[self.w(ci, co, dt, df)];
                        for t in lag..frames {
                            let src = x.row(ci, t - lag);
                            let dst = out.row_mut(co, t);
                            for (i, &v) in src.iter().enumerate() {
                                dst[sf * i + df] += w * v;
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn backward(&mut self, x: &FeatureMap, gout: &FeatureMap) -> FeatureMap {
        let frames = x.frames;
        let sf = self.stride_f;
        let mut gin = FeatureMap::zeros(x.channels, frames, x.bins);
        let mut gw = vec![0.0; self.weight.numel()];
        {
            let gb = self.bias.grad_mut();
            for (co, g) in gb.iter_mut().enumerate() {
                let s = gout.idx(co, 0, 0);
                *g += gout.data[s..s + frames * gout.bins].iter().sum::<f64>();
            }
        }
        for co in 0..self.out_channels {
            for ci in 0..self.in_channels {
                for dt in 0..self.kt {
                    let lag = self.kt - 1 - dt;
                    for df in 0..self.kf {
                        let wi = self.w(ci, co, dt, df);
                        let w = self.weight.data[wi];
                        let mut acc = 0.0;
                        for t in lag..frames {
                            let g = gout.row(co, t);
                            let src = x.row(ci, t - lag);
                            for (i, &v) in src.iter().enumerate() {
                                acc += g[sf * i + df] * v;
                            }
                            let dst = gin.row_mut(ci, t - lag);
                            for (i, d) in dst.iter_mut().enumerate() {
                                *d += w * g[sf * i + df];
                            }
                        }
                        gw[wi] += acc;
                    }
                }
            }
        }
        for (a, b) in self.weight.grad_mut().iter_mut().zip(&gw) {
            *a += b;
        }
        gin
    }
}

/// Frame-wise affine map over a `[frames][in]` row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new(name: &str, in_features: usize, out_features: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            weight: Tensor::uniform(
                format!("{name}.weight"),
                &[out_features, in_features],
                sqrt(1.0 / in_features as f64),
                rng,
            ),
            bias: Tensor::zeros(format!("{name}.bias"), &[out_features]),
            in_features,
            out_features,
        }
    }

    pub fn forward(&self, layer: usize, x: &[f64]) -> Result<Vec<f64>> {
        if !x.len().is_multiple_of(self.in_features) {
            return Err(shape_err(
                layer,
                format!("{} values do not tile rows of {}", x.len(), self.in_features),
            ));
        }
        let rows = x.len() / self.in_features;
        let mut out = vec![0.0; rows * self.out_features];
        for (xr, or) in x
            .chunks_exact(self.in_features)
            .zip(out.chunks_exact_mut(self.out_features))
        {
            for (o, (wr, &b)) in or
                .iter_mut()
                .zip(self.weight.data.chunks_exact(self.in_features).zip(&self.bias.data))
            {
                *o = b + dot(wr, xr);
            }
        }
        debug_assert_eq!(rows * self.out_features, out.len());
        Ok(out)
    }

    pub fn backward(&mut self, x: &[f64], gout: &[f64], need_input: bool) -> Option<Vec<f64>> {
        let (nin, nout) = (self.in_features, self.out_features);
        let mut gin = need_input.then(|| vec![0.0; x.len()]);
        let gw = self.weight.grad.get_or_insert_with(|| vec![0.0; nin * nout]);
        for (r, (xr, gr)) in x.chunks_exact(nin).zip(gout.chunks_exact(nout)).enumerate() {
            for (o, &g) in gr.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                axpy(&mut gw[o * nin..(o + 1) * nin], g, xr);
                if let Some(gin) = gin.as_mut() {
                    axpy(
                        &mut gin[r * nin..(r + 1) * nin],
                        g,
                        &self.weight.data[o * nin..(o + 1) * nin],
                    );
                }
            }
        }
        let gb = self.bias.grad_mut();
        for gr in gout.chunks_exact(nout) {
            for (b, &g) in gb.iter_mut().zip(gr) {
                *b += g;
            }
        }
        gin
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (p, q) in (&mut ca).zip(&mut cb) {
        acc[0] += p[0] * q[0];
        acc[1] += p[1] * q[1];
        acc[2] += p[2] * q[2];
        acc[3] += p[3] * q[3];
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(p, q)| p * q).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (p, &q) in y.iter_mut().zip(x) {
        *p += a * q;
    }
}

/// One unidirectional LSTM layer. Gate blocks are ordered input, forget,
/// cell, output in `w_ih` (`[4H][in]`), `w_hh` (`[4H][H]`) and `bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    pub w_ih: Tensor,
    pub w_hh: Tensor,
    pub bias: Tensor,
    pub input_size: usize,
    pub hidden: usize,
}

/// Per-step activations kept for backpropagation through time.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCache {
    /// Post-nonlinearity gates `[T][4H]`.
    pub gates: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

impl Lstm {
    pub fn new(name: &str, input_size: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = sqrt(1.0 / hidden as f64);
        let mut bias = Tensor::zeros(format!("{name}.bias"), &[4 * hidden]);
        bias.data[hidden..2 * hidden].fill(1.0);
        Self {
            w_ih: Tensor::uniform(format!("{name}.w_ih"), &[4 * hidden, input_size], bound, rng),
            w_hh: Tensor::uniform(format!("{name}.w_hh"), &[4 * hidden, hidden], bound, rng),
            bias,
            input_size,
            hidden,
        }
    }

    pub fn forward(&self, layer: usize, x: &[f64]) -> Result<LstmCache> {
        if !x.len().is_multiple_of(self.input_size) {
            return Err(shape_err(
                layer,
                format!("{} values do not tile rows of {}", x.len(), self.input_size),
            ));
        }
        let h_n = self.hidden;
        let frames = x.len() / self.input_size;
        let mut cache = LstmCache {
            gates: vec![0.0; frames * 4 * h_n],
            c: vec![0.0; frames * h_n],
            tanh_c: vec![0.0; frames * h_n],
            h: vec![0.0; frames * h_n],
        };
        let zeros = vec![0.0; h_n];
        for t in 0..frames {
            let xt = &x[t * self.input_size..(t + 1) * self.input_size];
            let (h_prev, c_prev) = if t == 0 {
                (&zeros[..], &zeros[..])
            } else {
                (&cache.h[(t - 1) * h_n..t * h_n], &cache.c[(t - 1) * h_n..t * h_n])
            };
            let mut z = self.bias.data.clone();
            for (j, zj) in z.iter_mut().enumerate() {
                *zj += dot(&self.w_ih.data[j * self.input_size..(j + 1) * self.input_size], xt)
                    + dot(&self.w_hh.data[j * h_n..(j + 1) * h_n], h_prev);
            }
            let mut c_new = vec![0.0; h_n];
            let mut tc_new = vec![0.0; h_n];
            let mut h_new = vec![0.0; h_n];
            for u in 0..h_n {
                let i = sigmoid(z[u]);
                let f = sigmoid(z[h_n + u]);
                let g = tanh(z[2 * h_n + u]);
                let o = sigmoid(z[3 * h_n + u]);
                z[u] = i;
                z[h_n + u] = f;
                z[2 * h_n + u] = g;
                z[3 * h_n + u] = o;
                c_new[u] = f * c_prev[u] + i * g;
                tc_new[u] = tanh(c_new[u]);
                h_new[u] = o * tc_new[u];
            }
            cache.gates[t * 4 * h_n..(t + 1) * 4 * h_n].copy_from_slice(&z);
            cache.c[t * h_n..(t + 1) * h_n].copy_from_slice(&c_new);
            cache.tanh_c[t * h_n..(t + 1) * h_n].copy_from_slice(&tc_new);
            cache.h[t * h_n..(t + 1) * h_n].copy_from_slice(&h_new);
        }
        Ok(cache)
    }

    /// Backpropagation through time; returns the input gradient `[T][in]`.
    pub fn backward(&mut self, x: &[f64], cache: &LstmCache, gout: &[f64]) -> Vec<f64> {
        let h_n = self.hidden;
        let nin = self.input_size;
        let frames = x.len() / nin;
        let mut gx = vec![0.0; x.len()];
        let mut g_ih = vec![0.0; self.w_ih.numel()];
        let mut g_hh = vec![0.0; self.w_hh.numel()];
        let mut g_b = vec![0.0; 4 * h_n];
        let mut dh_next = vec![0.0; h_n];
        let mut dc_next = vec![0.0; h_n];
        let mut dz = vec![0.0; 4 * h_n];
        for t in (0..frames).rev() {
            let gates = &cache.gates[t * 4 * h_n..(t + 1) * 4 * h_n];
            let tc = &cache.tanh_c[t * h_n..(t + 1) * h_n];
            for u in 0..h_n {
                let (i, f, g, o) = (gates[u], gates[h_n + u], gates[2 * h_n + u], gates[3 * h_n + u]);
                let c_prev = if t == 0 { 0.0 } else { cache.c[(t - 1) * h_n + u] };
                let dh = gout[t * h_n + u] + dh_next[u];
                let d_o = dh * tc[u];
                let dc = dh * o * (1.0 - tc[u] * tc[u]) + dc_next[u];
                dc_next[u] = dc * f;
                dz[u] = dc * g * i * (1.0 - i);
                dz[h_n + u] = dc * c_prev * f * (1.0 - f);
                dz[2 * h_n + u] = dc * i * (1.0 - g * g);
                dz[3 * h_n + u] = d_o * o * (1.0 - o);
            }
            let xt = &x[t * nin..(t + 1) * nin];
            let gxt = &mut gx[t * nin..(t + 1) * nin];
            dh_next.fill(0.0);
            for (j, &d) in dz.iter().enumerate() {
                g_b[j] += d;
                if d == 0.0 {
                    continue;
                }
                axpy(&mut g_ih[j * nin..(j + 1) * nin], d, xt);
                axpy(gxt, d, &self.w_ih.data[j * nin..(j + 1) * nin]);
                if t > 0 {
                    axpy(&mut g_hh[j * h_n..(j + 1) * h_n], d, &cache.h[(t - 1) * h_n..t * h_n]);
                    axpy(&mut dh_next, d, &self.w_hh.data[j * h_n..(j + 1) * h_n]);
                }
            }
        }
        for (a, b) in self.w_ih.grad_mut().iter_mut().zip(&g_ih) {
            *a += b;
        }
        for (a, b) in self.w_hh.grad_mut().iter_mut().zip(&g_hh) {
            *a += b;
        }
        for (a, b) in self.bias.grad_mut().iter_mut().zip(&g_b) {
            *a += b;
        }
        gx
    }
}
