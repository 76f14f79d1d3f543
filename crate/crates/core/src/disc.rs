//! Adversarial critics.
//!
//! The multi-period discriminator folds the waveform into `[rows × p]` for
//! each period `p` and runs a weight-normalized 2-D convolution stack along
//! the row axis. The multi-scale STFT discriminator feeds the real and
//! imaginary parts of a complex spectrogram as two input channels to a
//! dilated 2-D convolution stack, one per FFT size.
//!
//! Each critic returns its logits and every intermediate activation; the
//! logits are also the last entry of the feature list.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::autograd::{Conv2dSpec, Graph, Var};
use crate::error::{invalid_config, invalid_input};
use crate::nn::{self, ModelRng, ParamStore};
use crate::{Result, Tensor};

pub const MPD_PREFIX: &str = "mpd.";
pub const MSD_PREFIX: &str = "msd.";
const MPD_SLOPE: f64 = 0.1;
const MSD_SLOPE: f64 = 0.2;
const MSD_DILATIONS: [usize; 3] = [1, 2, 4];

#[derive(Debug, Clone, PartialEq)]
pub struct MpdConfig {
    pub periods: Vec<usize>,
    /// Output widths of the stacked convolutions; the last one keeps stride 1.
    pub channels: Vec<usize>,
}

impl Default for MpdConfig {
    fn default() -> Self {
        Self {
            periods: vec![2, 3, 5, 7, 11],
            channels: vec![32, 128, 512, 1024, 1024],
        }
    }
}

impl MpdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.periods.is_empty() || self.periods.iter().any(|&p| p < 2) {
            return Err(invalid_config!("MPD periods must be at least 2"));
        }
        let mut sorted = self.periods.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.periods.len() {
            return Err(invalid_config!("MPD periods must be distinct"));
        }
        if self.channels.len() < 2 || self.channels.contains(&0) {
            return Err(invalid_config!(
                "MPD needs at least two positive channel widths"
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MsstftdConfig {
    pub fft_sizes: Vec<usize>,
    pub channels: usize,
}

impl Default for MsstftdConfig {
    fn default() -> Self {
        Self {
            fft_sizes: vec![2048, 1024, 512, 256, 128],
            channels: 32,
        }
    }
}

impl MsstftdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fft_sizes.is_empty()
            || self
                .fft_sizes
                .iter()
                .any(|n| !n.is_power_of_two() || *n < 4)
        {
            return Err(invalid_config!(
                "STFT discriminator sizes must be powers of two >= 4"
            ));
        }
        let mut sorted = self.fft_sizes.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.fft_sizes.len() {
            return Err(invalid_config!("STFT discriminator sizes must be distinct"));
        }
        if self.channels == 0 {
            return Err(invalid_config!(
                "STFT discriminator channels must be positive"
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DiscriminatorConfig {
    pub mpd: MpdConfig,
    pub msd: MsstftdConfig,
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        self.mpd.validate()?;
        self.msd.validate()
    }

    /// Shortest waveform both critics accept.
    pub fn min_samples(&self) -> usize {
        let p = self.mpd.periods.iter().copied().max().unwrap_or(1);
        let n = self.msd.fft_sizes.iter().copied().min().unwrap_or(1);
        p.max(n)
    }
}

/// Logits and feature maps of one or more critics, in a fixed order.
#[derive(Debug, Clone, Default)]
pub struct DiscOutput {
    pub logits: Vec<Var>,
    pub features: Vec<Vec<Var>>,
}

impl DiscOutput {
    fn push(&mut self, logits: Var, features: Vec<Var>) {
        self.logits.push(logits);
        self.features.push(features);
    }

    pub fn extend(&mut self, other: DiscOutput) {
        self.logits.extend(other.logits);
        self.features.extend(other.features);
    }
}

fn mpd_name(p: usize, layer: &str) -> String {
    format!("mpd.p{p}.{layer}")
}

fn msd_name(n: usize, layer: &str) -> String {
    format!("msd.n{n}.{layer}")
}

pub fn init_discriminators(cfg: &DiscriminatorConfig, store: &mut ParamStore, rng: &mut ModelRng) {
    for &p in &cfg.mpd.periods {
        let mut cin = 1;
        for (i, &c) in cfg.mpd.channels.iter().enumerate() {
            nn::wn_conv2d_init(store, rng, &mpd_name(p, &format!("c{i}")), cin, c, (5, 1));
            cin = c;
        }
        nn::wn_conv2d_init(store, rng, &mpd_name(p, "post"), cin, 1, (3, 1));
    }
    let c = cfg.msd.channels;
    for &n in &cfg.msd.fft_sizes {
        nn::wn_conv2d_init(store, rng, &msd_name(n, "c0"), 2, c, (3, 9));
        for (i, _) in MSD_DILATIONS.iter().enumerate() {
            nn::wn_conv2d_init(
                store,
                rng,
                &msd_name(n, &format!("c{}", i + 1)),
                c,
                c,
                (3, 9),
            );
        }
        nn::wn_conv2d_init(store, rng, &msd_name(n, "c4"), c, c, (3, 3));
        nn::wn_conv2d_init(store, rng, &msd_name(n, "post"), c, 1, (3, 3));
    }
}

fn flatten(g: &mut Graph, x: Var) -> Var {
    let n = g.value(x).numel();
    g.reshape(x, &[n])
}

/// Rows of the period-`p` fold of an `len`-sample signal.
pub fn period_rows(len: usize, p: usize) -> usize {
    len.div_ceil(p)
}

/// `x: [L]`; one entry per period.
pub fn mpd_forward(
    g: &mut Graph,
    cfg: &MpdConfig,
    store: &ParamStore,
    x: Var,
) -> Result<DiscOutput> {
    cfg.validate()?;
    let len = g.value(x).numel();
    let pmax = cfg.periods.iter().copied().max().unwrap_or(0);
    if len < pmax {
        return Err(invalid_input!(
            "MPD needs at least {pmax} samples, got {len}"
        ));
    }
    let mut out = DiscOutput::default();
    let last = cfg.channels.len() - 1;
    for &p in &cfg.periods {
        let rows = period_rows(len, p);
        let padded = g.pad_end(x, rows * p - len);
        let mut h = g.reshape(padded, &[1, rows, p]);
        let mut feats = Vec::with_capacity(cfg.channels.len() + 1);
        for i in 0..cfg.channels.len() {
            let stride = if i == last { 1 } else { 3 };
            let spec = Conv2dSpec {
                stride: (stride, 1),
                padding: (2, 0),
                dilation: (1, 1),
            };
            h = nn::wn_conv2d(g, store, &mpd_name(p, &format!("c{i}")), h, spec)?;
            h = g.leaky_relu(h, MPD_SLOPE);
            feats.push(h);
        }
        let spec = Conv2dSpec {
            stride: (1, 1),
            padding: (1, 0),
            dilation: (1, 1),
        };
        let logits = nn::wn_conv2d(g, store, &mpd_name(p, "post"), h, spec)?;
        feats.push(logits);
        let flat = flatten(g, logits);
        out.push(flat, feats);
    }
    Ok(out)
}

/// `x: [L]`; one entry per FFT size.
pub fn msstftd_forward(
    g: &mut Graph,
    cfg: &MsstftdConfig,
    store: &ParamStore,
    x: Var,
) -> Result<DiscOutput> {
    cfg.validate()?;
    let len = g.value(x).numel();
    let nmin = cfg.fft_sizes.iter().copied().min().unwrap_or(0);
    if len < nmin {
        return Err(invalid_input!(
            "STFT discriminator needs at least {nmin} samples, got {len}"
        ));
    }
    let mut out = DiscOutput::default();
    for &n in &cfg.fft_sizes {
        let mut h = g.stft(x, n, n / 4, n);
        let mut feats = Vec::with_capacity(MSD_DILATIONS.len() + 3);
        let spec = Conv2dSpec {
            stride: (1, 1),
            padding: (1, 4),
            dilation: (1, 1),
        };
        h = nn::wn_conv2d(g, store, &msd_name(n, "c0"), h, spec)?;
        h = g.leaky_relu(h, MSD_SLOPE);
        feats.push(h);
        for (i, &d) in MSD_DILATIONS.iter().enumerate() {
            let spec = Conv2dSpec {
                stride: (1, 2),
                padding: (d, 4),
                dilation: (d, 1),
            };
            h = nn::wn_conv2d(g, store, &msd_name(n, &format!("c{}", i + 1)), h, spec)?;
            h = g.leaky_relu(h, MSD_SLOPE);
            feats.push(h);
        }
        let spec = Conv2dSpec {
            stride: (1, 1),
            padding: (1, 1),
            dilation: (1, 1),
        };
        h = nn::wn_conv2d(g, store, &msd_name(n, "c4"), h, spec)?;
        h = g.leaky_relu(h, MSD_SLOPE);
        feats.push(h);
        let logits = nn::wn_conv2d(g, store, &msd_name(n, "post"), h, spec)?;
        feats.push(logits);
        let flat = flatten(g, logits);
        out.push(flat, feats);
    }
    Ok(out)
}

/// Both critics, MPD entries first.
pub fn discriminators_forward(
    g: &mut Graph,
    cfg: &DiscriminatorConfig,
    store: &ParamStore,
    x: Var,
) -> Result<DiscOutput> {
    let mut out = mpd_forward(g, &cfg.mpd, store, x)?;
    out.extend(msstftd_forward(g, &cfg.msd, store, x)?);
    Ok(out)
}

/// Evaluated logits and features of both critics on plain samples.
pub fn discriminate(
    samples: &[f64],
    cfg: &DiscriminatorConfig,
    params: &ParamStore,
) -> Result<(Vec<Tensor>, Vec<Vec<Tensor>>)> {
    let mut g = Graph::inference();
    let x = g.constant(Tensor::vector(samples.to_vec()));
    let out = discriminators_forward(&mut g, cfg, params, x)?;
    let logits = out.logits.iter().map(|&v| g.value(v).clone()).collect();
    let feats = out
        .features
        .iter()
        .map(|f| f.iter().map(|&v| g.value(v).clone()).collect())
        .collect();
    Ok((logits, feats))
}
