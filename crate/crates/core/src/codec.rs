//! Waveform encoder and decoder.
//!
//! The encoder is a stack of strided 1-D convolutions with residual units;
//! each stage doubles the channel count and downsamples by its stride. The
//! decoder is not a mirror of it: transposed convolutions followed by
//! HiFi-GAN style dilated residual blocks, halving the channel count per
//! stage. Both stride stacks must have the same product `M`, so a signal of
//! `T·M` samples maps to `T` latent frames and back.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::autograd::{Conv1dSpec, Graph, Var};
use crate::dsp::Waveform;
use crate::error::{invalid_config, invalid_input};
use crate::nn::{self, ModelRng, ParamStore};
use crate::{Result, Tensor};

pub const ENCODER_PREFIX: &str = "enc.";
pub const DECODER_PREFIX: &str = "dec.";
const LEAKY_SLOPE: f64 = 0.1;
const DECODER_DILATIONS: [usize; 2] = [1, 3];

#[derive(Debug, Clone, PartialEq)]
pub struct CodecConfig {
    pub sample_rate: u32,
    pub latent_dim: usize,
    pub encoder_strides: Vec<usize>,
    pub decoder_strides: Vec<usize>,
    /// Width of the first encoder stage; doubles per stage.
    pub base_channels: usize,
    /// Width of the first decoder stage; halves per stage.
    pub decoder_channels: usize,
    /// Resampling kernels are `kernel_scale × stride` taps.
    pub kernel_scale: usize,
    pub seed: u64,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            sample_rate: 24_000,
            latent_dim: 128,
            encoder_strides: vec![8, 5, 4, 2],
            decoder_strides: vec![5, 4, 4, 4],
            base_channels: 32,
            decoder_channels: 512,
            kernel_scale: 2,
            seed: 0,
        }
    }
}

impl CodecConfig {
    /// Total stride `M`.
    pub fn hop(&self) -> usize {
        self.encoder_strides.iter().product()
    }

    pub fn frame_rate(&self) -> f64 {
        self.sample_rate as f64 / self.hop() as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0
            || self.latent_dim == 0
            || self.base_channels == 0
            || self.decoder_channels == 0
        {
            return Err(invalid_config!(
                "sample_rate, latent_dim and channel widths must be positive"
            ));
        }
        if self.kernel_scale == 0 {
            return Err(invalid_config!("kernel_scale must be positive"));
        }
        if self.encoder_strides.is_empty() || self.decoder_strides.is_empty() {
            return Err(invalid_config!("stride lists must not be empty"));
        }
        if self
            .encoder_strides
            .iter()
            .chain(&self.decoder_strides)
            .any(|&s| s == 0)
        {
            return Err(invalid_config!("strides must be positive"));
        }
        let enc: usize = self.encoder_strides.iter().product();
        let dec: usize = self.decoder_strides.iter().product();
        if enc != dec {
            return Err(invalid_config!(
                "encoder stride product {enc} differs from decoder stride product {dec}"
            ));
        }
        Ok(())
    }

    fn decoder_width(&self, stage: usize) -> usize {
        (self.decoder_channels >> stage).max(1)
    }
}

/// Time-major latent `[T × D]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSequence {
    pub values: Tensor,
    pub frame_rate: f64,
}

impl LatentSequence {
    pub fn frames(&self) -> usize {
        self.values.dims2().0
    }

    pub fn dim(&self) -> usize {
        self.values.dims2().1
    }
}

fn resample_padding(kernel: usize, stride: usize) -> (usize, usize) {
    let total = kernel - stride;
    (total / 2, total - total / 2)
}

pub fn init_encoder(cfg: &CodecConfig, store: &mut ParamStore, rng: &mut ModelRng) {
    let c0 = cfg.base_channels;
    nn::conv1d_init(store, rng, "enc.pre", 1, c0, 7);
    let mut ch = c0;
    for (i, &s) in cfg.encoder_strides.iter().enumerate() {
        nn::conv1d_init(store, rng, &format!("enc.s{i}.res.c1"), ch, ch, 3);
        nn::conv1d_init(store, rng, &format!("enc.s{i}.res.c2"), ch, ch, 1);
        nn::conv1d_init(
            store,
            rng,
            &format!("enc.s{i}.down"),
            ch,
            2 * ch,
            cfg.kernel_scale * s,
        );
        ch *= 2;
    }
    nn::conv1d_init(store, rng, "enc.post", ch, cfg.latent_dim, 3);
}

/// `samples: [L]` with `L` a multiple of the hop → `[T, D]`.
pub fn encoder_forward(
    g: &mut Graph,
    cfg: &CodecConfig,
    store: &ParamStore,
    samples: Var,
) -> Result<Var> {
    let len = g.value(samples).numel();
    if len == 0 || !len.is_multiple_of(cfg.hop()) {
        return Err(invalid_input!(
            "encoder input length {len} is not a positive multiple of {}",
            cfg.hop()
        ));
    }
    let x = g.reshape(samples, &[1, len]);
    let mut x = nn::conv1d(g, store, "enc.pre", x, Conv1dSpec::same(7, 1))?;
    for (i, &s) in cfg.encoder_strides.iter().enumerate() {
        let y = g.elu(x);
        let y = nn::conv1d(
            g,
            store,
            &format!("enc.s{i}.res.c1"),
            y,
            Conv1dSpec::same(3, 1),
        )?;
        let y = g.elu(y);
        let y = nn::conv1d(
            g,
            store,
            &format!("enc.s{i}.res.c2"),
            y,
            Conv1dSpec::same(1, 1),
        )?;
        x = g.add(x, y);
        let y = g.elu(x);
        let k = cfg.kernel_scale * s;
        let (pl, pr) = resample_padding(k, s);
        let spec = Conv1dSpec {
            stride: s,
            dilation: 1,
            pad_left: pl,
            pad_right: pr,
            pad_mode: crate::autograd::PadMode::Zero,
        };
        x = nn::conv1d(g, store, &format!("enc.s{i}.down"), y, spec)?;
    }
    let y = g.elu(x);
    let z = nn::conv1d(g, store, "enc.post", y, Conv1dSpec::same(3, 1))?;
    Ok(g.transpose(z))
}

pub fn init_decoder(cfg: &CodecConfig, store: &mut ParamStore, rng: &mut ModelRng) {
    let c0 = cfg.decoder_width(0);
    nn::conv1d_init(store, rng, "dec.pre", cfg.latent_dim, c0, 7);
    for (i, &s) in cfg.decoder_strides.iter().enumerate() {
        let (cin, cout) = (cfg.decoder_width(i), cfg.decoder_width(i + 1));
        nn::conv_transpose1d_init(
            store,
            rng,
            &format!("dec.s{i}.up"),
            cin,
            cout,
            cfg.kernel_scale * s,
            s,
        );
        for (j, _) in DECODER_DILATIONS.iter().enumerate() {
            nn::conv1d_init(store, rng, &format!("dec.s{i}.rb{j}"), cout, cout, 3);
        }
    }
    let last = cfg.decoder_width(cfg.decoder_strides.len());
    nn::conv1d_init(store, rng, "dec.post", last, 1, 7);
}

/// `[T, D]` → `[T·M]` samples in `(-1, 1)`.
pub fn decoder_forward(
    g: &mut Graph,
    cfg: &CodecConfig,
    store: &ParamStore,
    latent: Var,
) -> Result<Var> {
    let shape = g.shape(latent).to_vec();
    if shape.len() != 2 || shape[1] != cfg.latent_dim || shape[0] == 0 {
        return Err(invalid_input!(
            "decoder expects [T, {}] latent, got {shape:?}",
            cfg.latent_dim
        ));
    }
    let x = g.transpose(latent);
    let mut x = nn::conv1d(g, store, "dec.pre", x, Conv1dSpec::same(7, 1))?;
    for (i, &s) in cfg.decoder_strides.iter().enumerate() {
        let y = g.leaky_relu(x, LEAKY_SLOPE);
        let k = cfg.kernel_scale * s;
        let (tl, tr) = resample_padding(k, s);
        x = nn::conv_transpose1d(g, store, &format!("dec.s{i}.up"), y, s, tl, tr)?;
        for (j, &d) in DECODER_DILATIONS.iter().enumerate() {
            let y = g.leaky_relu(x, LEAKY_SLOPE);
            let y = nn::conv1d(
                g,
                store,
                &format!("dec.s{i}.rb{j}"),
                y,
                Conv1dSpec::same(3, d),
            )?;
            x = g.add(x, y);
        }
    }
    let y = g.leaky_relu(x, LEAKY_SLOPE);
    let y = nn::conv1d(g, store, "dec.post", y, Conv1dSpec::same(7, 1))?;
    let y = g.tanh(y);
    let n = g.value(y).numel();
    Ok(g.reshape(y, &[n]))
}

/// Zero-pads `samples` up to the next multiple of `hop`.
pub fn pad_to_hop(samples: &[f64], hop: usize) -> Vec<f64> {
    let mut out = samples.to_vec();
    out.resize(samples.len().div_ceil(hop) * hop, 0.0);
    out
}

/// Runs the encoder on a whole waveform. `T = ceil(len / M)`.
pub fn encode_waveform(
    w: &Waveform,
    cfg: &CodecConfig,
    params: &ParamStore,
) -> Result<LatentSequence> {
    cfg.validate()?;
    if w.sample_rate() != cfg.sample_rate {
        return Err(invalid_input!(
            "sample rate {} does not match codec rate {}",
            w.sample_rate(),
            cfg.sample_rate
        ));
    }
    let hop = cfg.hop();
    if w.len() < hop {
        return Err(invalid_input!(
            "waveform of {} samples is shorter than one frame ({hop})",
            w.len()
        ));
    }
    let mut g = Graph::inference();
    let x = g.constant(Tensor::vector(pad_to_hop(w.samples(), hop)));
    let z = encoder_forward(&mut g, cfg, params, x)?;
    Ok(LatentSequence {
        values: g.value(z).clone(),
        frame_rate: cfg.frame_rate(),
    })
}

/// Runs the decoder; output has exactly `T·M` samples.
pub fn decode_latent(
    z: &LatentSequence,
    cfg: &CodecConfig,
    params: &ParamStore,
) -> Result<Waveform> {
    cfg.validate()?;
    if z.values.ndim() != 2 || z.dim() != cfg.latent_dim {
        return Err(invalid_input!(
            "latent has shape {:?}, expected [T, {}]",
            z.values.shape(),
            cfg.latent_dim
        ));
    }
    let mut g = Graph::inference();
    let x = g.constant(z.values.clone());
    let y = decoder_forward(&mut g, cfg, params, x)?;
    Waveform::new(g.value(y).data().to_vec(), cfg.sample_rate)
}
