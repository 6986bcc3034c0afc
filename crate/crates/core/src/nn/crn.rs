//! Convolutional-recurrent controller: a causal conv encoder, a projected
//! two-layer LSTM bottleneck and a transposed-conv decoder with U-Net skips,
//! mapping the reference spectrum to the anti-noise spectrum.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{
    elu_backward_in_place, elu_in_place, CausalConv2d, CausalConvTranspose2d, Linear, Lstm, LstmCache,
};
use super::tensor::{FeatureMap, Tensor};
use crate::dsp::{ComplexSpectrogram, FrameSpec};
use crate::error::{Error, Result};
use crate::math::round;

/// Architecture description. Channel lists, `lstm_hidden` and the
/// projection sizes are base values multiplied by `scale`; the final decoder
/// entry is the output channel count and is never scaled.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CrnConfig {
    pub in_channels: usize,
    pub encoder_channels: Vec<usize>,
    /// `(time, freq)`.
    pub kernel: (usize, usize),
    /// `(time, freq)`; time stride must be 1.
    pub stride: (usize, usize),
    pub lstm_hidden: usize,
    pub lstm_layers: usize,
    pub projection_in: usize,
    pub projection_out: usize,
    pub decoder_channels: Vec<usize>,
    pub bins: usize,
    pub scale: f64,
}

impl Default for CrnConfig {
    fn default() -> Self {
        Self {
            in_channels: 2,
            encoder_channels: vec![16, 32, 64, 128, 256],
            kernel: (2, 3),
            stride: (1, 2),
            lstm_hidden: 256,
            lstm_layers: 2,
            projection_in: 1024,
            projection_out: 256,
            decoder_channels: vec![128, 64, 32, 16, 2],
            bins: 161,
            scale: 1.0,
        }
    }
}

/// Concrete layer sizes after scaling.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrnLayout {
    pub encoder_channels: Vec<usize>,
    pub decoder_channels: Vec<usize>,
    /// Frequency axis length entering each encoder layer, plus the
    /// bottleneck width at the end.
    pub freq_chain: Vec<usize>,
    pub output_padding: Vec<usize>,
    pub projection_in: usize,
    pub projection_out: usize,
    pub lstm_hidden: usize,
}

impl CrnConfig {
    /// Uniformly scaled variant of the default architecture.
    pub fn scaled(scale: f64) -> Self {
        Self {
            scale,
            ..Self::default()
        }
    }

    /// Smallest configuration used for gradient checks: encoder
    /// `[2, 4, 8, 16, 32]`, LSTM hidden 16.
    pub fn reduced() -> Self {
        Self {
            lstm_hidden: 128,
            projection_out: 128,
            scale: 0.125,
            ..Self::default()
        }
    }

    fn scale_count(&self, n: usize) -> usize {
        (round(n as f64 * self.scale) as usize).max(1)
    }

    pub fn layout(&self) -> Result<CrnLayout> {
        let invalid = |m: &str| Error::InvalidArgument(format!("crn config: {m}"));
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(invalid("scale must be positive"));
        }
        if self.encoder_channels.is_empty() || self.decoder_channels.len() != self.encoder_channels.len() {
            return Err(invalid("encoder and decoder need the same nonzero depth"));
        }
        if self.in_channels == 0 || self.lstm_layers == 0 || self.lstm_hidden == 0 {
            return Err(invalid("zero-sized layer"));
        }
        if self.kernel.0 == 0 || self.kernel.1 == 0 || self.stride.0 != 1 || self.stride.1 == 0 {
            return Err(invalid("kernel must be nonzero and the time stride 1"));
        }
        let depth = self.encoder_channels.len();
        let encoder_channels: Vec<usize> = self.encoder_channels.iter().map(|&c| self.scale_count(c)).collect();
        let mut decoder_channels: Vec<usize> = self.decoder_channels[..depth - 1]
            .iter()
            .map(|&c| self.scale_count(c))
            .collect();
        decoder_channels.push(self.decoder_channels[depth - 1]);
        if decoder_channels[depth - 1] != self.in_channels {
            return Err(invalid("decoder must emit as many channels as the input has"));
        }
        let (kf, sf) = (self.kernel.1, self.stride.1);
        let mut freq_chain = vec![self.bins];
        for l in 0..depth {
            let f = freq_chain[l];
            if f < kf {
                return Err(Error::Shape {
                    layer: l,
                    detail: format!("{f} bins is narrower than the kernel"),
                });
            }
            freq_chain.push((f - kf) / sf + 1);
        }
        let mut output_padding = Vec::with_capacity(depth);
        for l in (0..depth).rev() {
            let base = (freq_chain[l + 1] - 1) * sf + kf;
            let target = freq_chain[l];
            if target < base || target - base >= sf.max(1) {
                return Err(Error::Shape {
                    layer: depth + (depth - 1 - l),
                    detail: format!("cannot invert {} -> {}", freq_chain[l + 1], target),
                });
            }
            output_padding.push(target - base);
        }
        let projection_in = encoder_channels[depth - 1] * freq_chain[depth];
        if projection_in != self.scale_count(self.projection_in) {
            return Err(invalid(&format!(
                "bottleneck flattens to {projection_in}, configured projection_in is {}",
                self.scale_count(self.projection_in)
            )));
        }
        Ok(CrnLayout {
            encoder_channels,
            decoder_channels,
            freq_chain,
            output_padding,
            projection_in,
            projection_out: self.scale_count(self.projection_out),
            lstm_hidden: self.scale_count(self.lstm_hidden),
        })
    }
}

/// All learnable tensors of the controller plus the frozen secondary-path
/// kernel used during training.
#[derive(Debug, Clone, PartialEq)]
pub struct CrnParams {
    pub config: CrnConfig,
    pub layout: CrnLayout,
    pub encoder: Vec<CausalConv2d>,
    pub projection: Linear,
    pub lstm: Vec<Lstm>,
    pub expansion: Linear,
    pub decoder: Vec<CausalConvTranspose2d>,
    pub s_taps: Tensor,
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct CrnCache {
    input: FeatureMap,
    /// Post-ELU encoder outputs.
    encoder_out: Vec<FeatureMap>,
    flat: Vec<f64>,
    lstm_in: Vec<Vec<f64>>,
    lstm: Vec<LstmCache>,
    /// Concatenated decoder inputs.
    decoder_in: Vec<FeatureMap>,
    /// Decoder outputs (post-ELU except the last).
    decoder_out: Vec<FeatureMap>,
}

impl CrnCache {
    pub fn output(&self) -> &FeatureMap {
        self.decoder_out.last().expect("decoder has at least one layer")
    }
}

impl CrnParams {
    pub fn new(config: CrnConfig, s_taps: &[f64], seed: u64) -> Result<Self> {
        let layout = config.layout()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let depth = layout.encoder_channels.len();
        let (kt, kf) = config.kernel;
        let sf = config.stride.1;
        let mut encoder = Vec::with_capacity(depth);
        let mut cin = config.in_channels;
        for (l, &cout) in layout.encoder_channels.iter().enumerate() {
            encoder.push(CausalConv2d::new(&format!("enc{l}"), cin, cout, (kt, kf), sf, &mut rng));
            cin = cout;
        }
        let projection = Linear::new("proj", layout.projection_in, layout.projection_out, &mut rng);
        let mut lstm = Vec::with_capacity(config.lstm_layers);
        let mut lin = layout.projection_out;
        for l in 0..config.lstm_layers {
            lstm.push(Lstm::new(&format!("lstm{l}"), lin, layout.lstm_hidden, &mut rng));
            lin = layout.lstm_hidden;
        }
        let expansion = Linear::new("expand", layout.lstm_hidden, layout.projection_in, &mut rng);
        let mut decoder = Vec::with_capacity(depth);
        let mut prev = layout.encoder_channels[depth - 1];
        for (i, &cout) in layout.decoder_channels.iter().enumerate() {
            let skip = layout.encoder_channels[depth - 1 - i];
            decoder.push(CausalConvTranspose2d::new(
                &format!("dec{i}"),
                prev + skip,
                cout,
                (kt, kf),
                sf,
                layout.output_padding[i],
                &mut rng,
            ));
            prev = cout;
        }
        Ok(Self {
            config,
            layout,
            encoder,
            projection,
            lstm,
            expansion,
            decoder,
            s_taps: Tensor::frozen("s_taps", s_taps.to_vec()),
        })
    }

    /// Every tensor in a fixed order, including the frozen kernel last.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for l in &self.encoder {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        out.push(&self.projection.weight);
        out.push(&self.projection.bias);
        for l in &self.lstm {
            out.push(&l.w_ih);
            out.push(&l.w_hh);
            out.push(&l.bias);
        }
        out.push(&self.expansion.weight);
        out.push(&self.expansion.bias);
        for l in &self.decoder {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        out.push(&self.s_taps);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for l in &mut self.encoder {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out.push(&mut self.projection.weight);
        out.push(&mut self.projection.bias);
        for l in &mut self.lstm {
            out.push(&mut l.w_ih);
            out.push(&mut l.w_hh);
            out.push(&mut l.bias);
        }
        out.push(&mut self.expansion.weight);
        out.push(&mut self.expansion.bias);
        for l in &mut self.decoder {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out.push(&mut self.s_taps);
        out
    }

    /// The optimizer's parameter list: every tensor that takes gradients.
    pub fn trainable_mut(&mut self) -> Vec<&mut Tensor> {
        self.tensors_mut().into_iter().filter(|t| t.requires_grad).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors()
            .iter()
            .filter(|t| t.requires_grad)
            .map(|t| t.numel())
            .sum()
    }

    pub fn zero_grad(&mut self) {
        for t in self.tensors_mut() {
            t.zero_grad();
        }
    }

    pub fn s_taps(&self) -> &[f64] {
        &self.s_taps.data
    }

    /// Forward pass over a `[2][frames][bins]` feature map, keeping the
    /// activations for [`CrnParams::backward`].
    pub fn forward_cached(&self, input: &FeatureMap) -> Result<CrnCache> {
        if input.channels != self.config.in_channels || input.bins != self.config.bins {
            return Err(Error::Shape {
                layer: 0,
                detail: format!(
                    "input is {}x{} (channels x bins), expected {}x{}",
                    input.channels, input.bins, self.config.in_channels, self.config.bins
                ),
            });
        }
        if input.frames == 0 {
            return Err(Error::Shape {
                layer: 0,
                detail: "no frames".into(),
            });
        }
        let depth = self.encoder.len();
        let frames = input.frames;
        let mut encoder_out: Vec<FeatureMap> = Vec::with_capacity(depth);
        for (l, layer) in self.encoder.iter().enumerate() {
            let x = if l == 0 { input } else { &encoder_out[l - 1] };
            let mut y = layer.forward(l, x)?;
            elu_in_place(&mut y);
            encoder_out.push(y);
        }

        let last = &encoder_out[depth - 1];
        let flat = flatten(last);
        let mut layer_idx = depth;
        let mut h = self.projection.forward(layer_idx, &flat)?;
        let mut lstm_in = Vec::with_capacity(self.lstm.len());
        let mut lstm_caches = Vec::with_capacity(self.lstm.len());
        for layer in &self.lstm {
            layer_idx += 1;
            let cache = layer.forward(layer_idx, &h)?;
            lstm_in.push(h);
            h = cache.h.clone();
            lstm_caches.push(cache);
        }
        layer_idx += 1;
        let expanded = self.expansion.forward(layer_idx, &h)?;
        let mut prev = unflatten(&expanded, last.channels, frames, last.bins);

        let mut decoder_in = Vec::with_capacity(depth);
        let mut decoder_out = Vec::with_capacity(depth);
        for (i, layer) in self.decoder.iter().enumerate() {
            layer_idx += 1;
            let x = prev.concat(&encoder_out[depth - 1 - i])?;
            let mut y = layer.forward(layer_idx, &x)?;
            if y.bins != self.layout.freq_chain[depth - 1 - i] {
                return Err(Error::Shape {
                    layer: layer_idx,
                    detail: format!("decoder produced {} bins", y.bins),
                });
            }
            if i + 1 < depth {
                elu_in_place(&mut y);
            }
            decoder_in.push(x);
            prev = y.clone();
            decoder_out.push(y);
        }
        Ok(CrnCache {
            input: input.clone(),
            encoder_out,
            flat,
            lstm_in,
            lstm: lstm_caches,
            decoder_in,
            decoder_out,
        })
    }

    pub fn forward(&self, input: &FeatureMap) -> Result<FeatureMap> {
        let mut cache = self.forward_cached(input)?;
        Ok(cache.decoder_out.pop().expect("nonempty decoder"))
    }

    /// Accumulates `dL/dparam` into every trainable tensor given `dL/doutput`.
    pub fn backward(&mut self, cache: &CrnCache, grad_output: &FeatureMap) -> Result<()> {
        let depth = self.encoder.len();
        let mut skip_grads: Vec<Option<FeatureMap>> = vec![None; depth];
        let mut g = grad_output.clone();
        for i in (0..depth).rev() {
            if i + 1 < depth {
                elu_backward_in_place(&mut g, &cache.decoder_out[i]);
            }
            let gin = self.decoder[i].backward(&cache.decoder_in[i], &g);
            let prev_channels = cache.decoder_in[i].channels - cache.encoder_out[depth - 1 - i].channels;
            let (g_prev, g_skip) = gin.split(prev_channels);
            add_into(&mut skip_grads[depth - 1 - i], g_skip);
            g = g_prev;
        }

        let h_last = cache.lstm.last().map(|c| &c.h[..]).unwrap_or(&[]);
        let mut gh = self
            .expansion
            .backward(h_last, &flatten(&g), true)
            .expect("input gradient requested");
        for (l, layer) in self.lstm.iter_mut().enumerate().rev() {
            gh = layer.backward(&cache.lstm_in[l], &cache.lstm[l], &gh);
        }
        let gflat = self
            .projection
            .backward(&cache.flat, &gh, true)
            .expect("input gradient requested");
        let last = &cache.encoder_out[depth - 1];
        add_into(
            &mut skip_grads[depth - 1],
            unflatten(&gflat, last.channels, last.frames, last.bins),
        );

        let mut carry: Option<FeatureMap> = None;
        for l in (0..depth).rev() {
            let mut gl = skip_grads[l].take().expect("every encoder layer feeds a skip");
            if let Some(c) = carry.take() {
                for (a, b) in gl.data.iter_mut().zip(&c.data) {
                    *a += b;
                }
            }
            elu_backward_in_place(&mut gl, &cache.encoder_out[l]);
            let x = if l == 0 {
                &cache.input
            } else {
                &cache.encoder_out[l - 1]
            };
            carry = self.encoder[l].backward(x, &gl, l > 0);
        }
        for t in self.tensors() {
            if let Some(g) = &t.grad {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteGradient(t.name.clone()));
                }
            }
        }
        Ok(())
    }
}

fn add_into(slot: &mut Option<FeatureMap>, g: FeatureMap) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.data.iter_mut().zip(&g.data) {
                *a += b;
            }
        }
        None => *slot = Some(g),
    }
}

/// `[C][T][F]` to per-frame rows `[T][C*F]`.
fn flatten(map: &FeatureMap) -> Vec<f64> {
    let width = map.channels * map.bins;
    let mut out = vec![0.0; map.frames * width];
    for c in 0..map.channels {
        for t in 0..map.frames {
            out[t * width + c * map.bins..t * width + (c + 1) * map.bins].copy_from_slice(map.row(c, t));
        }
    }
    out
}

fn unflatten(rows: &[f64], channels: usize, frames: usize, bins: usize) -> FeatureMap {
    let width = channels * bins;
    let mut map = FeatureMap::zeros(channels, frames, bins);
    for c in 0..channels {
        for t in 0..frames {
            map.row_mut(c, t)
                .copy_from_slice(&rows[t * width + c * bins..t * width + (c + 1) * bins]);
        }
    }
    map
}

/// Splits a spectrogram into real and imaginary channels.
pub fn spectrogram_to_features(spec: &ComplexSpectrogram) -> FeatureMap {
    let (frames, bins) = (spec.frames(), spec.bins());
    let mut map = FeatureMap::zeros(2, frames, bins);
    for t in 0..frames {
        for (k, z) in spec.frame(t).iter().enumerate() {
            let re = map.idx(0, t, k);
            let im = map.idx(1, t, k);
            map.data[re] = z.re;
            map.data[im] = z.im;
        }
    }
    map
}

pub fn features_to_spectrogram(
    map: &FeatureMap,
    frame_spec: &FrameSpec,
    sample_rate: u32,
) -> Result<ComplexSpectrogram> {
    if map.channels != 2 {
        return Err(Error::Shape {
            layer: 0,
            detail: format!("{} channels cannot form a complex spectrum", map.channels),
        });
    }
    let mut data = Vec::with_capacity(map.frames * map.bins);
    for t in 0..map.frames {
        for (&re, &im) in map.row(0, t).iter().zip(map.row(1, t)) {
            data.push(Complex64::new(re, im));
        }
    }
    ComplexSpectrogram::new(map.frames, data, frame_spec.clone(), sample_rate)
}

/// Maps a reference spectrogram to the anti-noise spectrogram.
pub fn crn_forward(params: &CrnParams, spec_in: &ComplexSpectrogram) -> Result<ComplexSpectrogram> {
    let out = params.forward(&spectrogram_to_features(spec_in))?;
    features_to_spectrogram(&out, spec_in.frame_spec(), spec_in.sample_rate())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_input(frames: usize, bins: usize, seed: u64) -> FeatureMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = FeatureMap::zeros(2, frames, bins);
        for v in &mut m.data {
            *v = rng.random_range(-1.0..1.0);
        }
        m
    }

    #[test]
    fn default_layout_matches_the_table() {
        let layout = CrnConfig::default().layout().unwrap();
        assert_eq!(layout.freq_chain, vec![161, 80, 39, 19, 9, 4]);
        assert_eq!(layout.projection_in, 1024);
        assert_eq!(layout.output_padding, vec![0, 0, 0, 1, 0]);
        assert_eq!(layout.decoder_channels, vec![128, 64, 32, 16, 2]);
    }

    #[test]
    fn reduced_layout() {
        let layout = CrnConfig::reduced().layout().unwrap();
        assert_eq!(layout.encoder_channels, vec![2, 4, 8, 16, 32]);
        assert_eq!(layout.lstm_hidden, 16);
        assert_eq!(layout.projection_in, 128);
    }

    #[test]
    fn mismatched_projection_is_rejected() {
        let cfg = CrnConfig {
            projection_in: 512,
            ..CrnConfig::default()
        };
        assert!(cfg.layout().is_err());
        let cfg = CrnConfig {
            bins: 2,
            ..CrnConfig::reduced()
        };
        assert!(matches!(cfg.layout(), Err(Error::Shape { layer: 0, .. })));
    }

    #[test]
    fn output_shape_equals_input_shape() {
        let crn = CrnParams::new(CrnConfig::reduced(), &[1.0], 1).unwrap();
        for frames in [1, 2, 7] {
            let out = crn.forward(&random_input(frames, 161, frames as u64)).unwrap();
            assert_eq!((out.channels, out.frames, out.bins), (2, frames, 161));
        }
        let bad = random_input(3, 160, 0);
        assert!(matches!(crn.forward(&bad), Err(Error::Shape { .. })));
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let crn = CrnParams::new(CrnConfig::reduced(), &[1.0], 2).unwrap();
        let out = crn.forward(&FeatureMap::zeros(2, 5, 161)).unwrap();
        assert!(out.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn future_frames_do_not_leak() {
        let crn = CrnParams::new(CrnConfig::reduced(), &[1.0], 3).unwrap();
        let base = random_input(12, 161, 10);
        let ref_out = crn.forward(&base).unwrap();
        for t in [0, 4, 10] {
            let mut x = base.clone();
            let noise = random_input(12, 161, 100 + t as u64);
            for c in 0..2 {
                for tt in t + 1..12 {
                    let src = noise.row(c, tt).to_vec();
                    x.row_mut(c, tt).copy_from_slice(&src);
                }
            }
            let out = crn.forward(&x).unwrap();
            for c in 0..2 {
                for tt in 0..=t {
                    assert_eq!(out.row(c, tt), ref_out.row(c, tt));
                }
            }
        }
    }

    #[test]
    fn s_taps_are_frozen() {
        let mut crn = CrnParams::new(CrnConfig::reduced(), &[0.5, 0.1], 4).unwrap();
        assert!(crn.trainable_mut().iter().all(|t| t.name != "s_taps"));
        assert!(crn.parameter_count() > 0);
    }
}
