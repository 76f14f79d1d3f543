//! Utterance-level prompt encoders.
//!
//! The conditional branch reads a log-Mel spectrogram: a 1-D convolution over
//! time, a stack of pre-norm self-attention blocks, a final layer norm and a
//! mean over time. The voice-print branch reads mean-normalized FBank
//! features through a small TDNN with statistics pooling, or takes an
//! externally supplied speaker vector. Each branch ends in its own MLP
//! aligner that maps to the codec latent width `D`.
//!
//! Parameter prefixes: `cond.` for the conditional branch, `vp.backend.` for
//! the voice-print extractor (frozen by default) and `vp.align.` for the
//! voice-print aligner, which always trains.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::autograd::{Conv1dSpec, Graph, PadMode, Var};
use crate::dsp::FeatureMatrix;
use crate::error::{invalid_config, invalid_input};
use crate::nn::{self, ModelRng, ParamStore};
use crate::{Error, Result, Tensor};

pub const CONDITIONAL_PREFIX: &str = "cond.";
pub const VOICEPRINT_BACKEND_PREFIX: &str = "vp.backend.";
pub const VOICEPRINT_ALIGN_PREFIX: &str = "vp.align.";
const STATS_EPS: f64 = 1e-14;
const TDNN_DILATIONS: [usize; 4] = [1, 2, 3, 1];
const TDNN_KERNELS: [usize; 4] = [5, 3, 3, 1];

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalEncoderConfig {
    /// Mel bins of the input.
    pub n_mels: usize,
    pub model_dim: usize,
    pub n_blocks: usize,
    pub n_heads: usize,
    pub conv_kernel: usize,
    /// Hidden width of the feed-forward sublayer.
    pub ff_dim: usize,
}

impl Default for ConditionalEncoderConfig {
    fn default() -> Self {
        Self {
            n_mels: 80,
            model_dim: 256,
            n_blocks: 6,
            n_heads: 4,
            conv_kernel: 3,
            ff_dim: 512,
        }
    }
}

impl ConditionalEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_mels == 0 || self.model_dim == 0 || self.ff_dim == 0 {
            return Err(invalid_config!(
                "conditional encoder widths must be positive"
            ));
        }
        if self.n_heads == 0 || !self.model_dim.is_multiple_of(self.n_heads) {
            return Err(invalid_config!(
                "model_dim {} is not divisible by n_heads {}",
                self.model_dim,
                self.n_heads
            ));
        }
        if self.n_blocks == 0 {
            return Err(invalid_config!(
                "conditional encoder needs at least one block"
            ));
        }
        if self.conv_kernel.is_multiple_of(2) {
            return Err(invalid_config!(
                "conv_kernel must be odd, got {}",
                self.conv_kernel
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VoiceprintKind {
    /// TDNN + statistics pooling over FBank features.
    Builtin,
    /// One precomputed vector per utterance.
    External,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoiceprintConfig {
    pub kind: VoiceprintKind,
    /// FBank bins of the input (builtin backend only).
    pub n_mels: usize,
    /// TDNN width (builtin backend only).
    pub channels: usize,
    pub embed_dim: usize,
    pub frozen: bool,
}

impl Default for VoiceprintConfig {
    fn default() -> Self {
        Self {
            kind: VoiceprintKind::Builtin,
            n_mels: 80,
            channels: 128,
            embed_dim: 192,
            frozen: true,
        }
    }
}

impl VoiceprintConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 {
            return Err(invalid_config!("voiceprint embed_dim must be positive"));
        }
        if self.kind == VoiceprintKind::Builtin && (self.n_mels == 0 || self.channels == 0) {
            return Err(invalid_config!(
                "builtin voiceprint backend needs positive n_mels and channels"
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptSource {
    Conditional,
    Voiceprint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptEmbedding {
    pub vector: Vec<f64>,
    pub source: PromptSource,
}

/// What the voice-print branch consumes.
#[derive(Debug, Clone, Copy)]
pub enum VoiceprintInput<'a> {
    Features(Var),
    /// An external embedding; `None` when the utterance has no record.
    External(Option<&'a [f64]>),
}

/// Two-layer aligner `in_dim → out_dim → out_dim`.
pub fn init_align_mlp(
    store: &mut ParamStore,
    rng: &mut ModelRng,
    prefix: &str,
    in_dim: usize,
    out_dim: usize,
) {
    nn::linear_init(store, rng, &format!("{prefix}fc0"), in_dim, out_dim);
    nn::linear_init(store, rng, &format!("{prefix}fc1"), out_dim, out_dim);
}

/// Applies `{prefix}fc0`, `{prefix}fc1`, ... in order with SiLU between
/// consecutive layers. `v: [in_dim]`.
pub fn align_mlp(g: &mut Graph, store: &ParamStore, prefix: &str, v: Var) -> Result<Var> {
    let in_dim = g.value(v).numel();
    let mut x = g.reshape(v, &[1, in_dim]);
    let mut i = 0;
    while store.contains(&format!("{prefix}fc{i}.weight")) {
        let name = format!("{prefix}fc{i}");
        let want = store
            .get(&format!("{name}.weight"))
            .map(|w| w.shape()[1])
            .unwrap_or(0);
        let have = g.shape(x)[1];
        if want != have {
            return Err(invalid_input!("{name} expects {want} inputs, got {have}"));
        }
        if i > 0 {
            x = g.silu(x);
        }
        x = nn::linear(g, store, &name, x)?;
        i += 1;
    }
    if i == 0 {
        return Err(invalid_input!("no aligner layers under {prefix}"));
    }
    let n = g.value(x).numel();
    Ok(g.reshape(x, &[n]))
}

fn block(i: usize, part: &str) -> String {
    format!("cond.b{i}.{part}")
}

pub fn init_conditional(
    cfg: &ConditionalEncoderConfig,
    latent_dim: usize,
    store: &mut ParamStore,
    rng: &mut ModelRng,
) {
    let d = cfg.model_dim;
    nn::conv1d_init(store, rng, "cond.in", cfg.n_mels, d, cfg.conv_kernel);
    for i in 0..cfg.n_blocks {
        nn::layer_norm_init(store, &block(i, "ln1"), d);
        for p in ["q", "k", "v", "o"] {
            nn::linear_init(store, rng, &block(i, p), d, d);
        }
        nn::layer_norm_init(store, &block(i, "ln2"), d);
        nn::linear_init(store, rng, &block(i, "ff1"), d, cfg.ff_dim);
        nn::linear_init(store, rng, &block(i, "ff2"), cfg.ff_dim, d);
    }
    nn::layer_norm_init(store, "cond.ln_out", d);
    init_align_mlp(store, rng, "cond.align.", d, latent_dim);
}

fn self_attention(
    g: &mut Graph,
    cfg: &ConditionalEncoderConfig,
    store: &ParamStore,
    i: usize,
    h: Var,
) -> Result<Var> {
    let q = nn::linear(g, store, &block(i, "q"), h)?;
    let k = nn::linear(g, store, &block(i, "k"), h)?;
    let v = nn::linear(g, store, &block(i, "v"), h)?;
    let dh = cfg.model_dim / cfg.n_heads;
    let scale = 1.0 / libm::sqrt(dh as f64);
    let mut heads = Vec::with_capacity(cfg.n_heads);
    for head in 0..cfg.n_heads {
        let (s, e) = (head * dh, (head + 1) * dh);
        let qh = g.slice_last(q, s, e);
        let kh = g.slice_last(k, s, e);
        let vh = g.slice_last(v, s, e);
        let kt = g.transpose(kh);
        let scores = g.matmul(qh, kt);
        let scores = g.scale(scores, scale);
        let p = g.softmax_rows(scores);
        heads.push(g.matmul(p, vh));
    }
    let cat = g.concat(&heads);
    nn::linear(g, store, &block(i, "o"), cat)
}

/// `x_m: [T, n_mels]` → `[D]`.
pub fn conditional_forward(
    g: &mut Graph,
    cfg: &ConditionalEncoderConfig,
    store: &ParamStore,
    x_m: Var,
) -> Result<Var> {
    cfg.validate()?;
    let shape = g.shape(x_m).to_vec();
    if shape.len() != 2 || shape[1] != cfg.n_mels {
        return Err(invalid_input!(
            "conditional encoder expects [T, {}] features, got {shape:?}",
            cfg.n_mels
        ));
    }
    if shape[0] == 0 {
        return Err(invalid_input!("conditional prompt has zero frames"));
    }
    let x = g.transpose(x_m);
    let spec = Conv1dSpec::same(cfg.conv_kernel, 1).with_mode(PadMode::Replicate);
    let x = nn::conv1d(g, store, "cond.in", x, spec)?;
    let mut h = g.transpose(x);
    for i in 0..cfg.n_blocks {
        let y = nn::layer_norm(g, store, &block(i, "ln1"), h)?;
        let y = self_attention(g, cfg, store, i, y)?;
        h = g.add(h, y);
        let y = nn::layer_norm(g, store, &block(i, "ln2"), h)?;
        let y = nn::linear(g, store, &block(i, "ff1"), y)?;
        let y = g.silu(y);
        let y = nn::linear(g, store, &block(i, "ff2"), y)?;
        h = g.add(h, y);
    }
    let h = nn::layer_norm(g, store, "cond.ln_out", h)?;
    let pooled = g.mean_rows(h);
    align_mlp(g, store, "cond.align.", pooled)
}

pub fn init_voiceprint(
    cfg: &VoiceprintConfig,
    latent_dim: usize,
    store: &mut ParamStore,
    rng: &mut ModelRng,
) {
    if cfg.kind == VoiceprintKind::Builtin {
        let mut cin = cfg.n_mels;
        for (i, &k) in TDNN_KERNELS.iter().enumerate() {
            nn::conv1d_init(
                store,
                rng,
                &format!("vp.backend.tdnn{i}"),
                cin,
                cfg.channels,
                k,
            );
            cin = cfg.channels;
        }
        nn::linear_init(
            store,
            rng,
            "vp.backend.embed",
            2 * cfg.channels,
            cfg.embed_dim,
        );
    }
    init_align_mlp(store, rng, "vp.align.", cfg.embed_dim, latent_dim);
}

/// Mean and standard deviation over time of `x: [T, C]`, concatenated to `[2C]`.
pub fn stats_pooling(g: &mut Graph, x: Var) -> Var {
    let t = g.shape(x)[0];
    let mean = g.mean_rows(x);
    let mb = g.broadcast_rows(mean, t);
    let centered = g.sub(x, mb);
    let sq = g.square(centered);
    let var = g.mean_rows(sq);
    let var = g.add_scalar(var, STATS_EPS);
    let std = g.sqrt(var);
    g.concat(&[mean, std])
}

/// Builtin backend up to the speaker vector. `x_f: [T, n_mels]` → `[embed_dim]`.
pub fn voiceprint_backend_forward(
    g: &mut Graph,
    cfg: &VoiceprintConfig,
    store: &ParamStore,
    x_f: Var,
) -> Result<Var> {
    let shape = g.shape(x_f).to_vec();
    if shape.len() != 2 || shape[1] != cfg.n_mels {
        return Err(invalid_input!(
            "voiceprint encoder expects [T, {}] features, got {shape:?}",
            cfg.n_mels
        ));
    }
    if shape[0] == 0 {
        return Err(invalid_input!("voiceprint input has zero frames"));
    }
    let mut x = g.transpose(x_f);
    for (i, (&k, &d)) in TDNN_KERNELS.iter().zip(&TDNN_DILATIONS).enumerate() {
        let spec = Conv1dSpec::same(k, d).with_mode(PadMode::Replicate);
        x = nn::conv1d(g, store, &format!("vp.backend.tdnn{i}"), x, spec)?;
        x = g.relu(x);
    }
    let x = g.transpose(x);
    let pooled = stats_pooling(g, x);
    let n = g.value(pooled).numel();
    let pooled = g.reshape(pooled, &[1, n]);
    let e = nn::linear(g, store, "vp.backend.embed", pooled)?;
    Ok(g.reshape(e, &[cfg.embed_dim]))
}

/// Full voice-print branch → `[D]`.
pub fn voiceprint_forward(
    g: &mut Graph,
    cfg: &VoiceprintConfig,
    store: &ParamStore,
    input: VoiceprintInput<'_>,
) -> Result<Var> {
    cfg.validate()?;
    let e = match (cfg.kind, input) {
        (VoiceprintKind::Builtin, VoiceprintInput::Features(x)) => {
            voiceprint_backend_forward(g, cfg, store, x)?
        }
        (VoiceprintKind::External, VoiceprintInput::External(Some(v))) => {
            if v.len() != cfg.embed_dim {
                return Err(invalid_input!(
                    "external embedding has {} values, expected {}",
                    v.len(),
                    cfg.embed_dim
                ));
            }
            g.constant(Tensor::vector(v.to_vec()))
        }
        (VoiceprintKind::External, VoiceprintInput::External(None)) => {
            return Err(Error::MissingPrompt(
                "no external voiceprint embedding for this utterance".into(),
            ));
        }
        (kind, _) => {
            return Err(invalid_input!(
                "voiceprint input does not match backend {kind:?}"
            ))
        }
    };
    align_mlp(g, store, "vp.align.", e)
}

fn features_tensor(x: &FeatureMatrix) -> Result<Tensor> {
    if !x.values.is_finite() {
        return Err(invalid_input!("prompt features contain non-finite values"));
    }
    Ok(x.values.clone())
}

/// Inference-only conditional prompt.
pub fn encode_conditional_prompt(
    x_m: &FeatureMatrix,
    cfg: &ConditionalEncoderConfig,
    params: &ParamStore,
) -> Result<PromptEmbedding> {
    let mut g = Graph::inference();
    let x = g.constant(features_tensor(x_m)?);
    let z = conditional_forward(&mut g, cfg, params, x)?;
    Ok(PromptEmbedding {
        vector: g.value(z).data().to_vec(),
        source: PromptSource::Conditional,
    })
}

/// Inference-only voice-print prompt. `x_f` feeds the builtin backend,
/// `external` the external one.
pub fn encode_voiceprint(
    x_f: Option<&FeatureMatrix>,
    external: Option<&[f64]>,
    cfg: &VoiceprintConfig,
    params: &ParamStore,
) -> Result<PromptEmbedding> {
    let mut g = Graph::inference();
    let input = match cfg.kind {
        VoiceprintKind::Builtin => {
            let x = x_f
                .ok_or_else(|| invalid_input!("builtin voiceprint backend needs FBank features"))?;
            VoiceprintInput::Features(g.constant(features_tensor(x)?))
        }
        VoiceprintKind::External => VoiceprintInput::External(external),
    };
    let z = voiceprint_forward(&mut g, cfg, params, input)?;
    Ok(PromptEmbedding {
        vector: g.value(z).data().to_vec(),
        source: PromptSource::Voiceprint,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn toy_cond() -> ConditionalEncoderConfig {
        ConditionalEncoderConfig {
            n_mels: 6,
            model_dim: 8,
            n_blocks: 2,
            n_heads: 2,
            conv_kernel: 3,
            ff_dim: 12,
        }
    }

    fn toy_vp() -> VoiceprintConfig {
        VoiceprintConfig {
            kind: VoiceprintKind::Builtin,
            n_mels: 6,
            channels: 5,
            embed_dim: 7,
            frozen: true,
        }
    }

    fn features(t: usize, bins: usize, seed: u64) -> FeatureMatrix {
        let mut rng = ModelRng::seed_from_u64(seed);
        FeatureMatrix {
            values: nn::normal(&mut rng, &[t, bins], 1.0),
            frame_rate: 100.0,
        }
    }

    fn cond_store(cfg: &ConditionalEncoderConfig, d: usize) -> ParamStore {
        let mut store = ParamStore::new();
        init_conditional(cfg, d, &mut store, &mut ModelRng::seed_from_u64(3));
        store
    }

    #[test]
    fn config_validation() {
        assert!(ConditionalEncoderConfig::default().validate().is_ok());
        let bad = ConditionalEncoderConfig {
            n_heads: 3,
            ..toy_cond()
        };
        assert!(matches!(bad.validate(), Err(Error::InvalidConfig(_))));
        let bad = ConditionalEncoderConfig {
            conv_kernel: 4,
            ..toy_cond()
        };
        assert!(bad.validate().is_err());
        let bad = ConditionalEncoderConfig {
            n_blocks: 0,
            ..toy_cond()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn constant_sequence_matches_single_frame() {
        let cfg = toy_cond();
        let store = cond_store(&cfg, 4);
        let row: Vec<f64> = (0..6).map(|i| 0.3 * i as f64 - 0.7).collect();
        let one = FeatureMatrix {
            values: Tensor::new(&[1, 6], row.clone()),
            frame_rate: 1.0,
        };
        let many = FeatureMatrix {
            values: Tensor::new(&[9, 6], row.repeat(9)),
            frame_rate: 1.0,
        };
        let a = encode_conditional_prompt(&one, &cfg, &store).unwrap();
        let b = encode_conditional_prompt(&many, &cfg, &store).unwrap();
        for (x, y) in a.vector.iter().zip(&b.vector) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    /// With one frame, attention reduces to `o(v(x))`; recompute by hand.
    #[test]
    fn single_frame_equals_attention_free_path() {
        let cfg = ConditionalEncoderConfig {
            n_blocks: 1,
            ..toy_cond()
        };
        let store = cond_store(&cfg, 4);
        let x = features(1, 6, 5);
        let got = encode_conditional_prompt(&x, &cfg, &store).unwrap().vector;

        let lin = |name: &str, v: &[f64]| -> Vec<f64> {
            let w = store.get(&format!("{name}.weight")).unwrap();
            let b = store.get(&format!("{name}.bias")).unwrap();
            let (o, i) = w.dims2();
            (0..o)
                .map(|r| b.data()[r] + (0..i).map(|c| w.data()[r * i + c] * v[c]).sum::<f64>())
                .collect()
        };
        let ln = |name: &str, v: &[f64]| -> Vec<f64> {
            let n = v.len() as f64;
            let m = v.iter().sum::<f64>() / n;
            let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
            let gm = store.get(&format!("{name}.weight")).unwrap().data();
            let bt = store.get(&format!("{name}.bias")).unwrap().data();
            v.iter()
                .enumerate()
                .map(|(i, x)| (x - m) / libm::sqrt(var + nn::LAYER_NORM_EPS) * gm[i] + bt[i])
                .collect()
        };
        let silu = |v: Vec<f64>| -> Vec<f64> {
            v.into_iter().map(|x| x / (1.0 + libm::exp(-x))).collect()
        };
        // Replicate padding makes every tap see the single frame.
        let w = store.get("cond.in.weight").unwrap();
        let (co, ci, k) = w.dims3();
        let h0: Vec<f64> = (0..co)
            .map(|o| {
                store.get("cond.in.bias").unwrap().data()[o]
                    + (0..ci)
                        .map(|c| {
                            (0..k).map(|j| w.data()[(o * ci + c) * k + j]).sum::<f64>()
                                * x.values.data()[c]
                        })
                        .sum::<f64>()
            })
            .collect();
        let a = lin("cond.b0.o", &lin("cond.b0.v", &ln("cond.b0.ln1", &h0)));
        let h1: Vec<f64> = h0.iter().zip(&a).map(|(x, y)| x + y).collect();
        let f = lin(
            "cond.b0.ff2",
            &silu(lin("cond.b0.ff1", &ln("cond.b0.ln2", &h1))),
        );
        let h2: Vec<f64> = h1.iter().zip(&f).map(|(x, y)| x + y).collect();
        let p = ln("cond.ln_out", &h2);
        let want = lin("cond.align.fc1", &silu(lin("cond.align.fc0", &p)));
        for (x, y) in got.iter().zip(&want) {
            assert!((x - y).abs() < 1e-10, "{x} vs {y}");
        }
    }

    #[test]
    fn one_vector_per_utterance_for_any_length() {
        let cfg = toy_cond();
        let store = cond_store(&cfg, 4);
        let vcfg = toy_vp();
        let mut vstore = ParamStore::new();
        init_voiceprint(&vcfg, 4, &mut vstore, &mut ModelRng::seed_from_u64(4));
        for t in [1, 7, 100] {
            let x = features(t, 6, t as u64);
            assert_eq!(
                encode_conditional_prompt(&x, &cfg, &store)
                    .unwrap()
                    .vector
                    .len(),
                4
            );
            let v = encode_voiceprint(Some(&x), None, &vcfg, &vstore).unwrap();
            assert_eq!(v.vector.len(), 4);
            assert_eq!(v.source, PromptSource::Voiceprint);
        }
    }

    #[test]
    fn large_inputs_stay_finite() {
        let cfg = toy_cond();
        let store = cond_store(&cfg, 4);
        let mut x = features(20, 6, 9);
        x.values = x.values.map(|v| 1e3 * v.signum());
        let z = encode_conditional_prompt(&x, &cfg, &store).unwrap();
        assert!(z.vector.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn zero_frames_rejected() {
        let cfg = toy_cond();
        let store = cond_store(&cfg, 4);
        let x = FeatureMatrix {
            values: Tensor::zeros(&[0, 6]),
            frame_rate: 1.0,
        };
        assert!(matches!(
            encode_conditional_prompt(&x, &cfg, &store),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn stats_pooling_on_constant_input_has_zero_std() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(&[12, 3], 0.4));
        let s = stats_pooling(&mut g, x);
        let v = g.value(s).data();
        assert_eq!(v.len(), 6);
        assert!(v[..3].iter().all(|m| (m - 0.4).abs() < 1e-12));
        assert!(v[3..].iter().all(|s| s.abs() < 1e-6));
    }

    #[test]
    fn voiceprint_is_deterministic() {
        let vcfg = toy_vp();
        let mut store = ParamStore::new();
        init_voiceprint(&vcfg, 4, &mut store, &mut ModelRng::seed_from_u64(4));
        let x = features(30, 6, 1);
        let a = encode_voiceprint(Some(&x), None, &vcfg, &store).unwrap();
        let b = encode_voiceprint(Some(&x), None, &vcfg, &store).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn external_backend() {
        let vcfg = VoiceprintConfig {
            kind: VoiceprintKind::External,
            ..toy_vp()
        };
        let mut store = ParamStore::new();
        init_voiceprint(&vcfg, 4, &mut store, &mut ModelRng::seed_from_u64(4));
        assert!(!store
            .names()
            .any(|n| n.starts_with(VOICEPRINT_BACKEND_PREFIX)));
        let e = [0.1; 7];
        assert_eq!(
            encode_voiceprint(None, Some(&e), &vcfg, &store)
                .unwrap()
                .vector
                .len(),
            4
        );
        assert!(matches!(
            encode_voiceprint(None, None, &vcfg, &store),
            Err(Error::MissingPrompt(_))
        ));
        assert!(matches!(
            encode_voiceprint(None, Some(&[0.0; 3]), &vcfg, &store),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn aligner_zero_and_identity() {
        let mut store = ParamStore::new();
        init_align_mlp(&mut store, &mut ModelRng::seed_from_u64(1), "a.", 3, 3);
        store.insert("a.fc1.weight", Tensor::zeros(&[3, 3]));
        let mut g = Graph::inference();
        let v = g.constant(Tensor::vector(alloc::vec![0.0; 3]));
        let y = align_mlp(&mut g, &store, "a.", v).unwrap();
        assert_eq!(g.value(y).data(), &[0.0; 3]);

        let mut single = ParamStore::new();
        let mut eye = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            eye.data_mut()[i * 4] = 1.0;
        }
        single.insert("id.fc0.weight", eye);
        single.insert("id.fc0.bias", Tensor::zeros(&[3]));
        let mut g = Graph::inference();
        let v = g.constant(Tensor::vector(alloc::vec![0.5, -2.0, 7.0]));
        let y = align_mlp(&mut g, &single, "id.", v).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, -2.0, 7.0]);

        let mut g = Graph::inference();
        let v = g.constant(Tensor::vector(alloc::vec![0.5, -2.0]));
        assert!(matches!(
            align_mlp(&mut g, &single, "id.", v),
            Err(Error::InvalidInput(_))
        ));
    }
}
