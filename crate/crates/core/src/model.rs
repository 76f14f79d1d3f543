//! The assembled generator: encoder, quantizer, prompt branches, fusion and
//! decoder, plus inference-side encode/decode to and from streams.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;

use crate::autograd::{Graph, Var};
use crate::codec::{self, CodecConfig, LatentSequence};
use crate::dsp::{self, SpectrogramConfig, Waveform};
use crate::error::{invalid_config, invalid_input};
use crate::fusion::{self, FusionWeights};
use crate::grvq::{self, CodeIndices, Codebook, GrvqConfig, Quantized};
use crate::nn::{ModelRng, ParamStore};
use crate::prompt::{
    self, ConditionalEncoderConfig, PromptEmbedding, VoiceprintConfig, VoiceprintInput,
    VoiceprintKind,
};
use crate::stream::{self, PromptBlock, Stream, StreamHeader};
use crate::{Error, Result, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub codec: CodecConfig,
    pub grvq: GrvqConfig,
    pub conditional: ConditionalEncoderConfig,
    pub voiceprint: VoiceprintConfig,
    /// Front end for both prompt branches; `n_mels` must match theirs.
    pub prompt_features: SpectrogramConfig,
    /// Use only the first this-many seconds of an utterance as its prompt.
    pub prompt_seconds: Option<f64>,
    pub use_conditional_encoder: bool,
    pub use_voiceprint_encoder: bool,
    /// Learnable fusion weights; otherwise the fixed `(1, 1, 1)`.
    pub use_afwf: bool,
    pub fusion_init: FusionWeights,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let codec = CodecConfig::default();
        let prompt_features = SpectrogramConfig::analysis(codec.sample_rate);
        Self {
            codec,
            grvq: GrvqConfig::default(),
            conditional: ConditionalEncoderConfig::default(),
            voiceprint: VoiceprintConfig::default(),
            prompt_features,
            prompt_seconds: None,
            use_conditional_encoder: true,
            use_voiceprint_encoder: true,
            use_afwf: true,
            fusion_init: FusionWeights::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.codec.validate()?;
        self.grvq.validate(self.codec.latent_dim)?;
        self.prompt_features.validate(self.codec.sample_rate)?;
        if self.codec.hop() > u16::MAX as usize {
            return Err(invalid_config!(
                "hop {} does not fit the stream header",
                self.codec.hop()
            ));
        }
        if self.grvq.codebook_size > u16::MAX as usize
            || self.grvq.groups > 255
            || self.grvq.residual_layers > 255
        {
            return Err(invalid_config!(
                "quantizer shape does not fit the stream header"
            ));
        }
        if self.codec.latent_dim > u16::MAX as usize {
            return Err(invalid_config!("latent_dim does not fit the stream header"));
        }
        if self.use_conditional_encoder {
            self.conditional.validate()?;
            if self.conditional.n_mels != self.prompt_features.n_mels {
                return Err(invalid_config!(
                    "conditional encoder expects {} bands, front end has {}",
                    self.conditional.n_mels,
                    self.prompt_features.n_mels
                ));
            }
        }
        if self.use_voiceprint_encoder {
            self.voiceprint.validate()?;
            if self.voiceprint.kind == VoiceprintKind::Builtin
                && self.voiceprint.n_mels != self.prompt_features.n_mels
            {
                return Err(invalid_config!(
                    "voiceprint encoder expects {} bands, front end has {}",
                    self.voiceprint.n_mels,
                    self.prompt_features.n_mels
                ));
            }
        }
        if let Some(s) = self.prompt_seconds {
            if !(s > 0.0 && s.is_finite()) {
                return Err(invalid_config!("prompt_seconds must be positive"));
            }
        }
        if !self.fusion_init.is_finite() {
            return Err(invalid_config!("fusion weights must be finite"));
        }
        Ok(())
    }

    pub fn uses_prompts(&self) -> bool {
        self.use_conditional_encoder || self.use_voiceprint_encoder
    }
}

/// Prompt-branch inputs derived from one utterance.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PromptInputs {
    /// Log-Mel `[frames × n_mels]`.
    pub mel: Option<Tensor>,
    /// Mean-normalized FBank `[frames × n_mels]`.
    pub fbank: Option<Tensor>,
    /// External speaker vector.
    pub external: Option<Vec<f64>>,
}

/// Utterance-level prompt vectors; a disabled branch is `None`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Prompts {
    pub z_pc: Option<PromptEmbedding>,
    pub z_pv: Option<PromptEmbedding>,
}

/// Nodes of one generator forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub x_hat: Var,
    pub z: Var,
    pub z_q: Var,
    pub l_vq: Var,
    pub z_pc: Option<Var>,
    pub z_pv: Option<Var>,
    pub z_tilde: Var,
    pub quantized: Quantized,
}

/// Result of encoding one waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    pub indices: CodeIndices,
    pub prompts: Prompts,
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptCodec {
    pub config: ModelConfig,
    /// Gradient-trained generator parameters.
    pub params: ParamStore,
    pub codebooks: Vec<Codebook>,
    /// False until the codebooks have been seeded from data.
    pub codebooks_initialized: bool,
}

impl PromptCodec {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ModelRng::seed_from_u64(config.codec.seed);
        let mut params = ParamStore::new();
        codec::init_encoder(&config.codec, &mut params, &mut rng);
        codec::init_decoder(&config.codec, &mut params, &mut rng);
        let d = config.codec.latent_dim;
        if config.use_conditional_encoder {
            prompt::init_conditional(&config.conditional, d, &mut params, &mut rng);
        }
        if config.use_voiceprint_encoder {
            prompt::init_voiceprint(&config.voiceprint, d, &mut params, &mut rng);
        }
        if config.use_afwf {
            fusion::init_fusion(&mut params, config.fusion_init);
        }
        let cd = config.grvq.code_dim(d);
        let codebooks = (0..config.grvq.n_q())
            .map(|_| Codebook::random(&mut rng, config.grvq.codebook_size, cd, 1.0))
            .collect();
        Ok(Self {
            config,
            params,
            codebooks,
            codebooks_initialized: false,
        })
    }

    pub fn count_parameters(&self) -> usize {
        self.params.count_parameters()
    }

    pub fn fusion_weights(&self) -> FusionWeights {
        if self.config.use_afwf {
            FusionWeights::from_store(&self.params).unwrap_or(FusionWeights::UNIT)
        } else {
            FusionWeights::UNIT
        }
    }

    /// Front-end features for the prompt branches. `external` feeds an
    /// external voice-print backend.
    pub fn prompt_inputs(&self, w: &Waveform, external: Option<&[f64]>) -> Result<PromptInputs> {
        let cfg = &self.config;
        if w.sample_rate() != cfg.codec.sample_rate {
            return Err(invalid_input!(
                "prompt sample rate {} does not match codec rate {}",
                w.sample_rate(),
                cfg.codec.sample_rate
            ));
        }
        let clip = match cfg.prompt_seconds {
            Some(s) => {
                let n = ((s * w.sample_rate() as f64) as usize).clamp(1, w.len());
                Waveform::new(w.samples()[..n].to_vec(), w.sample_rate())?
            }
            None => w.clone(),
        };
        let mut out = PromptInputs::default();
        if cfg.use_conditional_encoder {
            out.mel = Some(dsp::mel_spectrogram(&clip, &cfg.prompt_features)?.values);
        }
        if cfg.use_voiceprint_encoder {
            match cfg.voiceprint.kind {
                VoiceprintKind::Builtin => {
                    out.fbank = Some(dsp::fbank(&clip, &cfg.prompt_features)?.values)
                }
                VoiceprintKind::External => out.external = external.map(<[f64]>::to_vec),
            }
        }
        Ok(out)
    }

    fn prompt_vars(
        &self,
        g: &mut Graph,
        inputs: &PromptInputs,
    ) -> Result<(Option<Var>, Option<Var>)> {
        let cfg = &self.config;
        let z_pc = if cfg.use_conditional_encoder {
            let mel = inputs.mel.clone().ok_or_else(|| {
                Error::MissingPrompt("no Mel features for the conditional prompt".into())
            })?;
            let x = g.constant(mel);
            Some(prompt::conditional_forward(
                g,
                &cfg.conditional,
                &self.params,
                x,
            )?)
        } else {
            None
        };
        let z_pv = if cfg.use_voiceprint_encoder {
            let input = match cfg.voiceprint.kind {
                VoiceprintKind::Builtin => {
                    let f = inputs.fbank.clone().ok_or_else(|| {
                        Error::MissingPrompt("no FBank features for the voiceprint prompt".into())
                    })?;
                    VoiceprintInput::Features(g.constant(f))
                }
                VoiceprintKind::External => VoiceprintInput::External(inputs.external.as_deref()),
            };
            Some(prompt::voiceprint_forward(
                g,
                &cfg.voiceprint,
                &self.params,
                input,
            )?)
        } else {
            None
        };
        Ok((z_pc, z_pv))
    }

    /// Full differentiable pass over `segment` (a multiple of the hop) with
    /// prompts from `prompts`. A frozen voice-print backend is bound as data.
    pub fn forward(
        &self,
        g: &mut Graph,
        segment: &[f64],
        prompts: &PromptInputs,
    ) -> Result<ForwardOutput> {
        let cfg = &self.config;
        if cfg.use_voiceprint_encoder && cfg.voiceprint.frozen {
            g.freeze_prefix(prompt::VOICEPRINT_BACKEND_PREFIX);
        }
        let x = g.constant(Tensor::vector(segment.to_vec()));
        let z = codec::encoder_forward(g, &cfg.codec, &self.params, x)?;
        let (z_q, l_vq, quantized) =
            grvq::quantize_graph(g, z, &cfg.grvq, &self.codebooks, cfg.codec.frame_rate())?;
        let (z_pc, z_pv) = self.prompt_vars(g, prompts)?;
        let alpha = fusion::alpha_var(g, &self.params, cfg.use_afwf)?;
        let z_tilde = fusion::fuse_graph(g, z_q, z_pc, z_pv, alpha)?;
        let x_hat = codec::decoder_forward(g, &cfg.codec, &self.params, z_tilde)?;
        Ok(ForwardOutput {
            x_hat,
            z,
            z_q,
            l_vq,
            z_pc,
            z_pv,
            z_tilde,
            quantized,
        })
    }

    /// Prompt vectors of an utterance.
    pub fn compute_prompts(&self, w: &Waveform, external: Option<&[f64]>) -> Result<Prompts> {
        if !self.config.uses_prompts() {
            return Ok(Prompts::default());
        }
        let inputs = self.prompt_inputs(w, external)?;
        let mut g = Graph::inference();
        let (pc, pv) = self.prompt_vars(&mut g, &inputs)?;
        let emb = |v: Option<Var>, source| {
            v.map(|v| PromptEmbedding {
                vector: g.value(v).data().to_vec(),
                source,
            })
        };
        Ok(Prompts {
            z_pc: emb(pc, prompt::PromptSource::Conditional),
            z_pv: emb(pv, prompt::PromptSource::Voiceprint),
        })
    }

    pub fn quantize(&self, z: &LatentSequence) -> Result<Quantized> {
        grvq::quantize(z, &self.config.grvq, &self.codebooks)
    }

    /// Waveform → codes and prompts.
    pub fn encode(&self, w: &Waveform, external: Option<&[f64]>) -> Result<Encoded> {
        let z = codec::encode_waveform(w, &self.config.codec, &self.params)?;
        let q = self.quantize(&z)?;
        let prompts = self.compute_prompts(w, external)?;
        Ok(Encoded {
            indices: q.indices,
            prompts,
            n_samples: w.len(),
        })
    }

    /// Codes and prompts → waveform of `T·M` samples.
    pub fn decode(&self, indices: &CodeIndices, prompts: &Prompts) -> Result<Waveform> {
        let cfg = &self.config;
        let z_q = grvq::dequantize(indices, &cfg.grvq, &self.codebooks, cfg.codec.frame_rate())?;
        if cfg.use_conditional_encoder && prompts.z_pc.is_none() {
            return Err(Error::MissingPrompt("conditional prompt required".into()));
        }
        if cfg.use_voiceprint_encoder && prompts.z_pv.is_none() {
            return Err(Error::MissingPrompt("voiceprint prompt required".into()));
        }
        let pc = prompts
            .z_pc
            .as_ref()
            .filter(|_| cfg.use_conditional_encoder);
        let pv = prompts.z_pv.as_ref().filter(|_| cfg.use_voiceprint_encoder);
        let z_tilde = fusion::fuse(&z_q, pc, pv, &self.fusion_weights())?;
        codec::decode_latent(&z_tilde, &cfg.codec, &self.params)
    }

    /// Encode then decode with the utterance's own prompts.
    pub fn reconstruct(&self, w: &Waveform, external: Option<&[f64]>) -> Result<Waveform> {
        let e = self.encode(w, external)?;
        self.decode(&e.indices, &e.prompts)
    }

    pub fn stream_header(&self, n_frames: usize, embedded: bool) -> Result<StreamHeader> {
        let cfg = &self.config;
        Ok(StreamHeader {
            version: stream::VERSION,
            sample_rate: cfg.codec.sample_rate,
            hop: cfg.codec.hop() as u16,
            groups: cfg.grvq.groups as u8,
            residuals: cfg.grvq.residual_layers as u8,
            codebook_size: cfg.grvq.codebook_size as u16,
            n_frames: u32::try_from(n_frames)
                .map_err(|_| invalid_input!("too many frames for one stream"))?,
            prompt_flag: embedded as u8,
        })
    }

    /// Half-precision prompt block; a disabled branch is sent as zeros.
    pub fn prompt_block(&self, prompts: &Prompts) -> PromptBlock {
        let d = self.config.codec.latent_dim;
        let pick = |p: &Option<PromptEmbedding>| {
            p.as_ref()
                .map_or_else(|| vec![0.0; d], |e| e.vector.clone())
        };
        PromptBlock::from_f64(&pick(&prompts.z_pc), &pick(&prompts.z_pv))
    }

    pub fn write_stream(&self, e: &Encoded, embed_prompts: bool) -> Result<Vec<u8>> {
        let embedded = embed_prompts && self.config.uses_prompts();
        let header = self.stream_header(e.indices.n_frames, embedded)?;
        let block = embedded.then(|| self.prompt_block(&e.prompts));
        stream::write_stream(&header, &e.indices, block.as_ref())
    }

    /// Checks that a parsed stream was produced by a model of this shape.
    pub fn check_stream(&self, s: &Stream) -> Result<()> {
        let want = self.stream_header(s.header.n_frames as usize, s.header.prompt_flag == 1)?;
        if s.header != want {
            return Err(invalid_input!(
                "stream header {:?} does not match model {:?}",
                s.header,
                want
            ));
        }
        if let Some(p) = &s.prompts {
            if p.dim() != self.config.codec.latent_dim {
                return Err(invalid_input!(
                    "embedded prompts have {} channels, model has {}",
                    p.dim(),
                    self.config.codec.latent_dim
                ));
            }
        }
        Ok(())
    }

    /// Decodes a stream. Prompts come from the stream if embedded, else from
    /// `prompt_wav` (and `external` for an external voice-print backend).
    pub fn decode_stream(
        &self,
        bytes: &[u8],
        prompt_wav: Option<&Waveform>,
        external: Option<&[f64]>,
    ) -> Result<Waveform> {
        let s = stream::read_stream(bytes)?;
        self.check_stream(&s)?;
        let prompts = match (&s.prompts, prompt_wav) {
            (_, Some(w)) => self.compute_prompts(w, external)?,
            (Some(p), None) => Prompts {
                z_pc: Some(PromptEmbedding {
                    vector: p.z_pc_f64(),
                    source: prompt::PromptSource::Conditional,
                }),
                z_pv: Some(PromptEmbedding {
                    vector: p.z_pv_f64(),
                    source: prompt::PromptSource::Voiceprint,
                }),
            },
            (None, None) if self.config.uses_prompts() => {
                return Err(Error::MissingPrompt(
                    "stream carries no prompts and no prompt audio was given".to_string(),
                ));
            }
            (None, None) => Prompts::default(),
        };
        self.decode(&s.indices, &prompts)
    }

    /// Seeds the codebooks from the latent of `w` (first training step).
    pub fn init_codebooks(&mut self, z: &LatentSequence, rng: &mut ModelRng) -> Result<()> {
        grvq::init_codebooks_from_data(&mut self.codebooks, z, &self.config.grvq, rng)?;
        self.codebooks_initialized = true;
        Ok(())
    }
}
