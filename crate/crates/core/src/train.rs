//! Alternating adversarial training of the generator and the two critics.
//!
//! Every step samples `batch_size` fixed-length segments, updates the critics
//! on the least-squares discriminator loss of the current reconstructions,
//! then updates the generator on the weighted total loss against the updated
//! critics, and finally moves the codebooks by EMA. Segment choice is a pure
//! function of `(seed, step)`.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use serde::Serialize;

use crate::autograd::Graph;
use crate::codec;
use crate::disc::{self, DiscriminatorConfig, MpdConfig, MsstftdConfig};
use crate::dsp::Waveform;
use crate::error::{invalid_config, invalid_input};
use crate::fusion;
use crate::grvq;
use crate::losses::{self, LossReport, LossWeights, ReconstructionLoss};
use crate::model::{ModelConfig, PromptCodec, PromptInputs};
use crate::nn::{ModelRng, ParamStore};
use crate::optim::{Adam, AdamConfig};
use crate::prompt;
use crate::{Error, Result, Tensor};

/// The four switches of the ablation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Ablation {
    pub use_drl: bool,
    pub use_afwf: bool,
    pub use_conditional_encoder: bool,
    pub use_voiceprint_encoder: bool,
}

impl Ablation {
    pub const FULL: Self = Self {
        use_drl: true,
        use_afwf: true,
        use_conditional_encoder: true,
        use_voiceprint_encoder: true,
    };
}

impl Default for Ablation {
    fn default() -> Self {
        Self::FULL
    }
}

/// Rows of the ablation table, in table order.
pub const ABLATION_VARIANTS: [(&str, Ablation); 5] = [
    ("PromptCodec", Ablation::FULL),
    (
        "w/o DRL",
        Ablation {
            use_drl: false,
            ..Ablation::FULL
        },
    ),
    (
        "w/o DRL, w/o AFWF",
        Ablation {
            use_drl: false,
            use_afwf: false,
            ..Ablation::FULL
        },
    ),
    (
        "w/o DRL, w/o AFWF, w/o ConditionEncoder",
        Ablation {
            use_drl: false,
            use_afwf: false,
            use_conditional_encoder: false,
            use_voiceprint_encoder: true,
        },
    ),
    (
        "w/o DRL, w/o AFWF, w/o VoiceprintEncoder",
        Ablation {
            use_drl: false,
            use_afwf: false,
            use_conditional_encoder: true,
            use_voiceprint_encoder: false,
        },
    ),
];

/// Looks up an ablation row by name.
pub fn ablation_variant(name: &str) -> Option<Ablation> {
    ABLATION_VARIANTS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, a)| *a)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub disc: DiscriminatorConfig,
    pub weights: LossWeights,
    pub learning_rate: f64,
    pub adam_betas: (f64, f64),
    pub batch_size: usize,
    pub steps: usize,
    /// Drives model init, segment sampling and codebook maintenance.
    pub seed: u64,
    pub segment_samples: usize,
    /// Windows of the multi-resolution log-Mel reconstruction term.
    pub mel_windows: Vec<usize>,
    pub use_drl: bool,
    /// Write a checkpoint every this many steps; 0 disables.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            disc: DiscriminatorConfig::default(),
            weights: LossWeights::default(),
            learning_rate: 1e-3,
            adam_betas: (0.9, 0.999),
            batch_size: 40,
            steps: 1000,
            seed: 0,
            segment_samples: 12_160,
            mel_windows: losses::MEL_WINDOWS.to_vec(),
            use_drl: true,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    /// Small model used for smoke runs and tests: `D = 64`, strides
    /// `[4, 4]`, `K = 64`, two codebooks, reduced critics.
    pub fn toy() -> Self {
        let model = ModelConfig {
            codec: codec::CodecConfig {
                sample_rate: 16_000,
                latent_dim: 64,
                encoder_strides: vec![4, 4],
                decoder_strides: vec![4, 4],
                base_channels: 16,
                decoder_channels: 64,
                kernel_scale: 2,
                seed: 0,
            },
            grvq: grvq::GrvqConfig {
                codebook_size: 64,
                ..grvq::GrvqConfig::for_codebooks(2)
            },
            prompt_features: crate::dsp::SpectrogramConfig {
                n_fft: 512,
                hop: 160,
                win: 400,
                n_mels: 40,
                fmin: 0.0,
                fmax: 8000.0,
                log_floor: 1e-5,
            },
            conditional: prompt::ConditionalEncoderConfig {
                n_mels: 40,
                model_dim: 32,
                n_blocks: 2,
                n_heads: 4,
                conv_kernel: 3,
                ff_dim: 64,
            },
            voiceprint: prompt::VoiceprintConfig {
                n_mels: 40,
                channels: 32,
                embed_dim: 32,
                ..Default::default()
            },
            ..ModelConfig::default()
        };
        Self {
            model,
            disc: DiscriminatorConfig {
                mpd: MpdConfig {
                    periods: vec![2, 3, 5],
                    channels: vec![4, 8, 16],
                },
                msd: MsstftdConfig {
                    fft_sizes: vec![256, 128, 64],
                    channels: 4,
                },
            },
            batch_size: 1,
            steps: 300,
            segment_samples: 2048,
            mel_windows: vec![64, 128, 256, 512],
            ..Self::default()
        }
    }

    pub fn ablation(&self) -> Ablation {
        Ablation {
            use_drl: self.use_drl,
            use_afwf: self.model.use_afwf,
            use_conditional_encoder: self.model.use_conditional_encoder,
            use_voiceprint_encoder: self.model.use_voiceprint_encoder,
        }
    }

    pub fn apply_ablation(&mut self, a: Ablation) {
        self.use_drl = a.use_drl;
        self.model.use_afwf = a.use_afwf;
        self.model.use_conditional_encoder = a.use_conditional_encoder;
        self.model.use_voiceprint_encoder = a.use_voiceprint_encoder;
    }

    /// Loss weights after the ablation switches: no DRL zeroes its weight.
    pub fn effective_weights(&self) -> LossWeights {
        let mut w = self.weights;
        if !self.use_drl {
            w.beta[4] = 0.0;
        }
        w
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.disc.validate()?;
        self.weights.validate()?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid_config!("learning_rate must be positive"));
        }
        let (b1, b2) = self.adam_betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return Err(invalid_config!("Adam moments must lie in [0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(invalid_config!("batch_size must be positive"));
        }
        let m = self.model.codec.hop();
        if self.segment_samples == 0 || !self.segment_samples.is_multiple_of(m) {
            return Err(invalid_config!(
                "segment_samples {} must be a positive multiple of the hop {m}",
                self.segment_samples
            ));
        }
        if self.segment_samples < self.disc.min_samples() {
            return Err(invalid_config!(
                "segment_samples {} is shorter than the critics need ({})",
                self.segment_samples,
                self.disc.min_samples()
            ));
        }
        if let Some(&w) = self
            .mel_windows
            .iter()
            .find(|&&w| w == 0 || w > self.segment_samples)
        {
            return Err(invalid_config!(
                "mel window {w} must be in 1..=segment_samples"
            ));
        }
        Ok(())
    }
}

/// One training utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainItem {
    pub id: String,
    pub waveform: Waveform,
    /// Speaker vector for an external voice-print backend.
    pub external: Option<Vec<f64>>,
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepLog {
    pub step: usize,
    #[serde(flatten)]
    pub losses: LossReport,
    pub l_disc: f64,
    pub alpha: [f64; 3],
}

/// Parameter group of a generator parameter name.
pub fn parameter_group(name: &str) -> &'static str {
    if name.starts_with(codec::ENCODER_PREFIX) {
        "encoder"
    } else if name.starts_with(codec::DECODER_PREFIX) {
        "decoder"
    } else if name.starts_with(prompt::CONDITIONAL_PREFIX) {
        "conditional_encoder"
    } else if name.starts_with(prompt::VOICEPRINT_BACKEND_PREFIX) {
        "voiceprint_backend"
    } else if name.starts_with(prompt::VOICEPRINT_ALIGN_PREFIX) {
        "voiceprint_aligner"
    } else if name == fusion::ALPHA_PARAM {
        "fusion"
    } else {
        "other"
    }
}

/// Groups reached by a set of parameter names.
pub fn parameter_groups<'a>(names: impl IntoIterator<Item = &'a str>) -> BTreeSet<&'static str> {
    names.into_iter().map(parameter_group).collect()
}

#[derive(Debug, Clone)]
pub struct Trainer {
    cfg: TrainConfig,
    weights: LossWeights,
    pub model: PromptCodec,
    pub disc_params: ParamStore,
    gen_opt: Adam,
    disc_opt: Adam,
    items: Vec<TrainItem>,
    prompts: Vec<PromptInputs>,
    recon: ReconstructionLoss,
    ema_rng: ModelRng,
    step: usize,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, items: Vec<TrainItem>) -> Result<Self> {
        let mut model_cfg = cfg.model.clone();
        model_cfg.codec.seed = cfg.seed;
        let model = PromptCodec::new(model_cfg)?;
        let mut rng = ModelRng::seed_from_u64(cfg.seed);
        rng.set_stream(1);
        let mut disc_params = ParamStore::new();
        disc::init_discriminators(&cfg.disc, &mut disc_params, &mut rng);
        Self::with_state(cfg, model, disc_params, items)
    }

    /// Continues from an existing generator and critics (fresh optimizer state).
    pub fn with_state(
        mut cfg: TrainConfig,
        model: PromptCodec,
        disc_params: ParamStore,
        items: Vec<TrainItem>,
    ) -> Result<Self> {
        cfg.model.codec.seed = model.config.codec.seed;
        cfg.validate()?;
        if model.config != cfg.model {
            return Err(invalid_config!("model does not match the training config"));
        }
        if items.is_empty() {
            return Err(invalid_input!("training needs at least one utterance"));
        }
        let sr = cfg.model.codec.sample_rate;
        let mut prompts = Vec::with_capacity(items.len());
        for it in &items {
            if it.waveform.sample_rate() != sr {
                return Err(invalid_input!(
                    "{}: sample rate {} does not match {sr}",
                    it.id,
                    it.waveform.sample_rate()
                ));
            }
            prompts.push(model.prompt_inputs(&it.waveform, it.external.as_deref())?);
        }
        let recon =
            ReconstructionLoss::new(sr, &losses::mel_configs_for_windows(sr, &cfg.mel_windows))?;
        let adam = AdamConfig {
            learning_rate: cfg.learning_rate,
            beta1: cfg.adam_betas.0,
            beta2: cfg.adam_betas.1,
            ..Default::default()
        };
        let mut ema_rng = ModelRng::seed_from_u64(cfg.seed);
        ema_rng.set_stream(2);
        Ok(Self {
            weights: cfg.effective_weights(),
            cfg,
            model,
            disc_params,
            gen_opt: Adam::new(adam),
            disc_opt: Adam::new(adam),
            items,
            prompts,
            recon,
            ema_rng,
            step: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Steps taken so far.
    pub fn step_count(&self) -> usize {
        self.step
    }

    /// Generator parameters the optimizer is allowed to move.
    pub fn optimizer_parameters(&self) -> BTreeSet<String> {
        let frozen_vp = self.cfg.model.use_voiceprint_encoder && self.cfg.model.voiceprint.frozen;
        self.model
            .params
            .names()
            .filter(|n| !(frozen_vp && n.starts_with(prompt::VOICEPRINT_BACKEND_PREFIX)))
            .map(ToString::to_string)
            .collect()
    }

    /// Names the generator optimizer has updated so far.
    pub fn updated_parameters(&self) -> BTreeSet<String> {
        self.gen_opt.tracked().map(ToString::to_string).collect()
    }

    /// `(utterance index, start sample)` of every segment in batch `step`.
    pub fn batch_plan(&self, step: usize) -> Vec<(usize, usize)> {
        let mut rng = ModelRng::seed_from_u64(self.cfg.seed);
        rng.set_stream(1000 + step as u64);
        (0..self.cfg.batch_size)
            .map(|_| {
                let i = rng.random_range(0..self.items.len());
                let room = self.items[i]
                    .waveform
                    .len()
                    .saturating_sub(self.cfg.segment_samples);
                let start = if room == 0 {
                    0
                } else {
                    rng.random_range(0..=room)
                };
                (i, start)
            })
            .collect()
    }

    fn segment(&self, i: usize, start: usize) -> Vec<f64> {
        let s = self.items[i].waveform.samples();
        let end = (start + self.cfg.segment_samples).min(s.len());
        let mut seg = s[start..end].to_vec();
        seg.resize(self.cfg.segment_samples, 0.0);
        seg
    }

    /// One discriminator update followed by one generator update.
    ///
    /// On a non-finite loss or gradient nothing is modified and
    /// [`Error::Numerical`] is returned.
    pub fn step(&mut self) -> Result<StepLog> {
        let plan = self.batch_plan(self.step);
        let segments: Vec<(usize, Vec<f64>)> =
            plan.iter().map(|&(i, s)| (i, self.segment(i, s))).collect();
        let mut model = self.model.clone();
        if !model.codebooks_initialized {
            let w = Waveform::new(segments[0].1.clone(), model.config.codec.sample_rate)?;
            let z = codec::encode_waveform(&w, &model.config.codec, &model.params)?;
            model.init_codebooks(&z, &mut self.ema_rng.clone())?;
        }
        let n = segments.len() as f64;

        // Critics on the current reconstructions.
        let mut fakes = Vec::with_capacity(segments.len());
        for (i, seg) in &segments {
            let mut g = Graph::inference();
            let out = model.forward(&mut g, seg, &self.prompts[*i])?;
            fakes.push(g.value(out.x_hat).data().to_vec());
        }
        let mut disc_params = self.disc_params.clone();
        let mut disc_grads: BTreeMap<String, Tensor> = BTreeMap::new();
        let mut l_disc = 0.0;
        for ((_, seg), fake) in segments.iter().zip(&fakes) {
            let mut g = Graph::new();
            let real = g.constant(Tensor::vector(seg.clone()));
            let fake = g.constant(Tensor::vector(fake.clone()));
            let dr = disc::discriminators_forward(&mut g, &self.cfg.disc, &disc_params, real)?;
            let df = disc::discriminators_forward(&mut g, &self.cfg.disc, &disc_params, fake)?;
            let loss = losses::discriminator_adversarial_graph(&mut g, &dr.logits, &df.logits)?;
            let loss = g.scale(loss, 1.0 / n);
            l_disc += g.value(loss).item();
            accumulate(&mut disc_grads, g.param_grads(&g.backward(loss)));
        }
        check_finite("l_disc", l_disc, &disc_grads)?;
        let mut disc_opt = self.disc_opt.clone();
        disc_opt.step(&mut disc_params, &disc_grads);

        // Generator against the updated critics.
        let mut gen_grads: BTreeMap<String, Tensor> = BTreeMap::new();
        let mut sums = [0.0; 6];
        let mut pairs = [None::<f64>; 3];
        let mut quantized = Vec::with_capacity(segments.len());
        for (i, seg) in &segments {
            let mut g = Graph::new();
            g.freeze_prefix(disc::MPD_PREFIX);
            g.freeze_prefix(disc::MSD_PREFIX);
            let out = model.forward(&mut g, seg, &self.prompts[*i])?;
            let l_rec = self.recon.graph(&mut g, seg, out.x_hat)?;
            let real = g.constant(Tensor::vector(seg.clone()));
            let dr = disc::discriminators_forward(&mut g, &self.cfg.disc, &disc_params, real)?;
            let df = disc::discriminators_forward(&mut g, &self.cfg.disc, &disc_params, out.x_hat)?;
            let l_f = losses::feature_matching_graph(&mut g, &dr.features, &df.features)?;
            let l_adv = losses::generator_adversarial_graph(&mut g, &df.logits)?;
            let l_drl = if self.cfg.use_drl {
                let d = losses::drl_loss_graph(&mut g, out.z_q, out.z_pc, out.z_pv, &self.weights)?;
                for (acc, p) in pairs.iter_mut().zip(d.pairs) {
                    if let Some(p) = p {
                        *acc = Some(acc.unwrap_or(0.0) + p / n);
                    }
                }
                d.loss
            } else {
                g.constant(Tensor::scalar(0.0))
            };
            let terms = [l_rec, l_f, out.l_vq, l_adv, l_drl];
            let total = losses::total_loss_graph(&mut g, terms, &self.weights);
            let total = g.scale(total, 1.0 / n);
            for (s, v) in sums.iter_mut().zip(terms.iter().chain([&total])) {
                *s += g.value(*v).item() / if *v == total { 1.0 } else { n };
            }
            accumulate(&mut gen_grads, g.param_grads(&g.backward(total)));
            quantized.push(out.quantized);
        }
        let names = ["l_rec", "l_f", "l_vq", "l_adv", "l_drl", "l_total"];
        for (v, name) in sums.iter().zip(names) {
            check_finite(name, *v, &BTreeMap::new())?;
        }
        check_finite("l_total", sums[5], &gen_grads)?;
        let mut gen_opt = self.gen_opt.clone();
        gen_opt.step(&mut model.params, &gen_grads);
        let mut ema_rng = self.ema_rng.clone();
        for q in &quantized {
            grvq::update_codebooks_ema(&mut model.codebooks, q, &model.config.grvq, &mut ema_rng);
        }
        let alpha = model.fusion_weights();
        if !alpha.is_finite() {
            return Err(Error::Numerical("fusion weights became non-finite".into()));
        }

        self.model = model;
        self.disc_params = disc_params;
        self.gen_opt = gen_opt;
        self.disc_opt = disc_opt;
        self.ema_rng = ema_rng;
        let log = StepLog {
            step: self.step,
            losses: LossReport {
                l_rec: sums[0],
                l_f: sums[1],
                l_vq: sums[2],
                l_adv: sums[3],
                l_drl: sums[4],
                l_total: sums[5],
                l_1: pairs[0],
                l_2: pairs[1],
                l_3: pairs[2],
            },
            l_disc,
            alpha: alpha.alpha,
        };
        self.step += 1;
        Ok(log)
    }

    /// Runs the remaining configured steps. `on_step` sees the trainer after
    /// each update; an error from it stops the run.
    pub fn run(
        &mut self,
        mut on_step: impl FnMut(&Self, &StepLog) -> Result<()>,
    ) -> Result<Vec<StepLog>> {
        let mut logs = Vec::with_capacity(self.cfg.steps.saturating_sub(self.step));
        while self.step < self.cfg.steps {
            let log = self.step()?;
            on_step(self, &log)?;
            logs.push(log);
        }
        Ok(logs)
    }
}

fn accumulate(acc: &mut BTreeMap<String, Tensor>, grads: BTreeMap<String, Tensor>) {
    for (name, g) in grads {
        match acc.get_mut(&name) {
            Some(a) => a
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .for_each(|(x, y)| *x += y),
            None => {
                acc.insert(name, g);
            }
        }
    }
}

fn check_finite(what: &str, loss: f64, grads: &BTreeMap<String, Tensor>) -> Result<()> {
    if !loss.is_finite() {
        return Err(Error::Numerical(alloc::format!("{what} is {loss}")));
    }
    if let Some((name, _)) = grads
        .iter()
        .find(|(_, g)| g.data().iter().any(|v| !v.is_finite()))
    {
        return Err(Error::Numerical(alloc::format!(
            "non-finite gradient for {name}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::SyntheticSpec;

    pub(crate) fn tiny() -> TrainConfig {
        let mut cfg = TrainConfig::toy();
        cfg.model = crate::model::tests::toy_config();
        cfg.disc = DiscriminatorConfig {
            mpd: MpdConfig {
                periods: vec![2, 3],
                channels: vec![2, 4],
            },
            msd: MsstftdConfig {
                fft_sizes: vec![32, 16],
                channels: 2,
            },
        };
        cfg.segment_samples = 64;
        cfg.mel_windows = vec![16, 32];
        cfg.batch_size = 2;
        cfg.steps = 2;
        cfg
    }

    fn items(sr: u32) -> Vec<TrainItem> {
        SyntheticSpec {
            n: 2,
            seed: 3,
            seconds: 0.02,
            sample_rate: sr,
        }
        .generate()
        .unwrap()
        .into_iter()
        .map(|(id, waveform)| TrainItem {
            id,
            waveform,
            external: None,
        })
        .collect()
    }

    #[test]
    fn table_variants_and_lookup() {
        assert_eq!(ABLATION_VARIANTS.len(), 5);
        let names: BTreeSet<_> = ABLATION_VARIANTS.iter().map(|(n, _)| *n).collect();
        assert_eq!(names.len(), 5);
        let a = ablation_variant("w/o DRL, w/o AFWF, w/o VoiceprintEncoder").unwrap();
        assert!(
            a.use_conditional_encoder && !a.use_voiceprint_encoder && !a.use_afwf && !a.use_drl
        );
        assert!(ablation_variant("nope").is_none());
    }

    #[test]
    fn config_validation() {
        TrainConfig::default().validate().unwrap();
        TrainConfig::toy().validate().unwrap();
        let mut c = tiny();
        c.segment_samples = 66;
        assert!(c.validate().is_err());
        let mut c = tiny();
        c.learning_rate = 0.0;
        assert!(c.validate().is_err());
        let mut c = tiny();
        c.mel_windows = vec![128];
        assert!(c.validate().is_err());
    }

    #[test]
    fn deterministic_steps_and_frozen_backend() {
        let run = || {
            let mut t = Trainer::new(tiny(), items(8000)).unwrap();
            let before = t
                .model
                .params
                .fingerprint(prompt::VOICEPRINT_BACKEND_PREFIX);
            let logs = t.run(|_, _| Ok(())).unwrap();
            assert_eq!(
                before,
                t.model
                    .params
                    .fingerprint(prompt::VOICEPRINT_BACKEND_PREFIX)
            );
            (logs, t.model.params.fingerprint(""))
        };
        let (a, fa) = run();
        let (b, fb) = run();
        assert_eq!(a, b);
        assert_eq!(fa, fb);
        assert_eq!(a.len(), 2);
        for l in &a {
            assert!(l.losses.l_total.is_finite() && l.l_disc.is_finite());
            assert!(l.losses.l_1.is_some() && l.losses.l_3.is_some());
        }
    }

    #[test]
    fn optimizer_touches_exactly_the_trainable_set() {
        for (_, ab) in ABLATION_VARIANTS {
            let mut cfg = tiny();
            cfg.apply_ablation(ab);
            cfg.steps = 1;
            let mut t = Trainer::new(cfg, items(8000)).unwrap();
            let log = t.step().unwrap();
            assert_eq!(t.updated_parameters(), t.optimizer_parameters());
            if !ab.use_drl {
                assert_eq!(log.losses.l_drl, 0.0);
            }
            if !ab.use_afwf {
                assert_eq!(log.alpha, [1.0; 3]);
            }
        }
    }

    #[test]
    fn rejects_bad_items() {
        assert!(Trainer::new(tiny(), Vec::new()).is_err());
        assert!(Trainer::new(tiny(), items(16_000)).is_err());
    }

    #[test]
    fn short_utterances_are_zero_padded() {
        let mut cfg = tiny();
        cfg.segment_samples = 400;
        let t = Trainer::new(cfg, items(8000)).unwrap();
        let seg = t.segment(0, 0);
        assert_eq!(seg.len(), 400);
        assert!(seg[160..].iter().all(|&v| v == 0.0));
    }
}
