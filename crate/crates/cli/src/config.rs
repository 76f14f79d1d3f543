//! Flat `key = value` configuration files.
//!
//! Every field of [`TrainConfig`] has one key. A file starts from the
//! `preset` (`default` or `toy`) and overrides keys from there. Lists are
//! comma separated; `prompt_seconds = none` disables prompt clipping. Run
//! files add `manifest`, `out_dir` and `embeddings`, whose relative paths
//! resolve against the file's folder.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ini::Ini;
use promptcodec_core::prompt::VoiceprintKind;
use promptcodec_core::train::TrainConfig;

use crate::error::{CliError, Result};

/// Every training key, in file order.
pub const TRAIN_KEYS: &[&str] = &[
    "sample_rate",
    "latent_dim",
    "encoder_strides",
    "decoder_strides",
    "base_channels",
    "decoder_channels",
    "kernel_scale",
    "groups",
    "residual_layers",
    "codebook_size",
    "ema_decay",
    "commitment_weight",
    "dead_code_threshold",
    "use_conditional_encoder",
    "use_voiceprint_encoder",
    "use_afwf",
    "use_drl",
    "alpha_init",
    "prompt_n_fft",
    "prompt_hop",
    "prompt_win",
    "prompt_n_mels",
    "prompt_fmin",
    "prompt_fmax",
    "prompt_seconds",
    "cond_model_dim",
    "cond_blocks",
    "cond_heads",
    "cond_kernel",
    "cond_ff_dim",
    "vp_kind",
    "vp_channels",
    "vp_embed_dim",
    "vp_frozen",
    "mpd_periods",
    "mpd_channels",
    "msd_fft_sizes",
    "msd_channels",
    "beta",
    "lambda",
    "ssim_c1",
    "ssim_c2",
    "learning_rate",
    "adam_beta1",
    "adam_beta2",
    "batch_size",
    "steps",
    "seed",
    "segment_samples",
    "mel_windows",
    "checkpoint_every",
];

fn list<T: Display>(v: &[T]) -> String {
    v.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| CliError::Config(format!("{key}: cannot parse {v:?}")))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|p| parse(key, p)).collect()
}

fn parse_array<const N: usize>(key: &str, v: &str) -> Result<[f64; N]> {
    let items: Vec<f64> = parse_list(key, v)?;
    items
        .try_into()
        .map_err(|_| CliError::Config(format!("{key}: expected {N} values")))
}

/// Value of `key` in `cfg`, formatted for a file.
pub fn get(cfg: &TrainConfig, key: &str) -> Option<String> {
    let m = &cfg.model;
    let c = &m.codec;
    let q = &m.grvq;
    let p = &m.prompt_features;
    Some(match key {
        "sample_rate" => c.sample_rate.to_string(),
        "latent_dim" => c.latent_dim.to_string(),
        "encoder_strides" => list(&c.encoder_strides),
        "decoder_strides" => list(&c.decoder_strides),
        "base_channels" => c.base_channels.to_string(),
        "decoder_channels" => c.decoder_channels.to_string(),
        "kernel_scale" => c.kernel_scale.to_string(),
        "groups" => q.groups.to_string(),
        "residual_layers" => q.residual_layers.to_string(),
        "codebook_size" => q.codebook_size.to_string(),
        "ema_decay" => q.ema_decay.to_string(),
        "commitment_weight" => q.commitment_weight.to_string(),
        "dead_code_threshold" => q.dead_code_threshold.to_string(),
        "use_conditional_encoder" => m.use_conditional_encoder.to_string(),
        "use_voiceprint_encoder" => m.use_voiceprint_encoder.to_string(),
        "use_afwf" => m.use_afwf.to_string(),
        "use_drl" => cfg.use_drl.to_string(),
        "alpha_init" => list(&m.fusion_init.alpha),
        "prompt_n_fft" => p.n_fft.to_string(),
        "prompt_hop" => p.hop.to_string(),
        "prompt_win" => p.win.to_string(),
        "prompt_n_mels" => p.n_mels.to_string(),
        "prompt_fmin" => p.fmin.to_string(),
        "prompt_fmax" => p.fmax.to_string(),
        "prompt_seconds" => m
            .prompt_seconds
            .map_or_else(|| "none".into(), |s| s.to_string()),
        "cond_model_dim" => m.conditional.model_dim.to_string(),
        "cond_blocks" => m.conditional.n_blocks.to_string(),
        "cond_heads" => m.conditional.n_heads.to_string(),
        "cond_kernel" => m.conditional.conv_kernel.to_string(),
        "cond_ff_dim" => m.conditional.ff_dim.to_string(),
        "vp_kind" => match m.voiceprint.kind {
            VoiceprintKind::Builtin => "builtin".into(),
            VoiceprintKind::External => "external".into(),
        },
        "vp_channels" => m.voiceprint.channels.to_string(),
        "vp_embed_dim" => m.voiceprint.embed_dim.to_string(),
        "vp_frozen" => m.voiceprint.frozen.to_string(),
        "mpd_periods" => list(&cfg.disc.mpd.periods),
        "mpd_channels" => list(&cfg.disc.mpd.channels),
        "msd_fft_sizes" => list(&cfg.disc.msd.fft_sizes),
        "msd_channels" => cfg.disc.msd.channels.to_string(),
        "beta" => list(&cfg.weights.beta),
        "lambda" => list(&cfg.weights.lambda),
        "ssim_c1" => cfg.weights.ssim_c1.to_string(),
        "ssim_c2" => cfg.weights.ssim_c2.to_string(),
        "learning_rate" => cfg.learning_rate.to_string(),
        "adam_beta1" => cfg.adam_betas.0.to_string(),
        "adam_beta2" => cfg.adam_betas.1.to_string(),
        "batch_size" => cfg.batch_size.to_string(),
        "steps" => cfg.steps.to_string(),
        "seed" => cfg.seed.to_string(),
        "segment_samples" => cfg.segment_samples.to_string(),
        "mel_windows" => list(&cfg.mel_windows),
        "checkpoint_every" => cfg.checkpoint_every.to_string(),
        _ => return None,
    })
}

/// Sets one key. Band counts of both prompt branches follow `prompt_n_mels`.
pub fn set(cfg: &mut TrainConfig, key: &str, v: &str) -> Result<()> {
    let m = &mut cfg.model;
    match key {
        "sample_rate" => m.codec.sample_rate = parse(key, v)?,
        "latent_dim" => m.codec.latent_dim = parse(key, v)?,
        "encoder_strides" => m.codec.encoder_strides = parse_list(key, v)?,
        "decoder_strides" => m.codec.decoder_strides = parse_list(key, v)?,
        "base_channels" => m.codec.base_channels = parse(key, v)?,
        "decoder_channels" => m.codec.decoder_channels = parse(key, v)?,
        "kernel_scale" => m.codec.kernel_scale = parse(key, v)?,
        "groups" => m.grvq.groups = parse(key, v)?,
        "residual_layers" => m.grvq.residual_layers = parse(key, v)?,
        "codebook_size" => m.grvq.codebook_size = parse(key, v)?,
        "ema_decay" => m.grvq.ema_decay = parse(key, v)?,
        "commitment_weight" => m.grvq.commitment_weight = parse(key, v)?,
        "dead_code_threshold" => m.grvq.dead_code_threshold = parse(key, v)?,
        "use_conditional_encoder" => m.use_conditional_encoder = parse(key, v)?,
        "use_voiceprint_encoder" => m.use_voiceprint_encoder = parse(key, v)?,
        "use_afwf" => m.use_afwf = parse(key, v)?,
        "use_drl" => cfg.use_drl = parse(key, v)?,
        "alpha_init" => m.fusion_init.alpha = parse_array(key, v)?,
        "prompt_n_fft" => m.prompt_features.n_fft = parse(key, v)?,
        "prompt_hop" => m.prompt_features.hop = parse(key, v)?,
        "prompt_win" => m.prompt_features.win = parse(key, v)?,
        "prompt_n_mels" => {
            let n = parse(key, v)?;
            m.prompt_features.n_mels = n;
            m.conditional.n_mels = n;
            m.voiceprint.n_mels = n;
        }
        "prompt_fmin" => m.prompt_features.fmin = parse(key, v)?,
        "prompt_fmax" => m.prompt_features.fmax = parse(key, v)?,
        "prompt_seconds" => {
            m.prompt_seconds = if v.trim() == "none" {
                None
            } else {
                Some(parse(key, v)?)
            }
        }
        "cond_model_dim" => m.conditional.model_dim = parse(key, v)?,
        "cond_blocks" => m.conditional.n_blocks = parse(key, v)?,
        "cond_heads" => m.conditional.n_heads = parse(key, v)?,
        "cond_kernel" => m.conditional.conv_kernel = parse(key, v)?,
        "cond_ff_dim" => m.conditional.ff_dim = parse(key, v)?,
        "vp_kind" => {
            m.voiceprint.kind = match v.trim() {
                "builtin" => VoiceprintKind::Builtin,
                "external" => VoiceprintKind::External,
                other => {
                    return Err(CliError::Config(format!(
                        "vp_kind: expected builtin or external, got {other:?}"
                    )))
                }
            }
        }
        "vp_channels" => m.voiceprint.channels = parse(key, v)?,
        "vp_embed_dim" => m.voiceprint.embed_dim = parse(key, v)?,
        "vp_frozen" => m.voiceprint.frozen = parse(key, v)?,
        "mpd_periods" => cfg.disc.mpd.periods = parse_list(key, v)?,
        "mpd_channels" => cfg.disc.mpd.channels = parse_list(key, v)?,
        "msd_fft_sizes" => cfg.disc.msd.fft_sizes = parse_list(key, v)?,
        "msd_channels" => cfg.disc.msd.channels = parse(key, v)?,
        "beta" => cfg.weights.beta = parse_array(key, v)?,
        "lambda" => cfg.weights.lambda = parse_array(key, v)?,
        "ssim_c1" => cfg.weights.ssim_c1 = parse(key, v)?,
        "ssim_c2" => cfg.weights.ssim_c2 = parse(key, v)?,
        "learning_rate" => cfg.learning_rate = parse(key, v)?,
        "adam_beta1" => cfg.adam_betas.0 = parse(key, v)?,
        "adam_beta2" => cfg.adam_betas.1 = parse(key, v)?,
        "batch_size" => cfg.batch_size = parse(key, v)?,
        "steps" => cfg.steps = parse(key, v)?,
        "seed" => cfg.seed = parse(key, v)?,
        "segment_samples" => cfg.segment_samples = parse(key, v)?,
        "mel_windows" => cfg.mel_windows = parse_list(key, v)?,
        "checkpoint_every" => cfg.checkpoint_every = parse(key, v)?,
        _ => return Err(CliError::Config(format!("unknown key {key}"))),
    }
    Ok(())
}

/// Base config of a named preset.
pub fn preset(name: &str) -> Result<TrainConfig> {
    match name {
        "default" => Ok(TrainConfig::default()),
        "toy" => Ok(TrainConfig::toy()),
        other => Err(CliError::Config(format!("unknown preset {other:?}"))),
    }
}

/// Every training key with its value, in file order.
pub fn to_pairs(cfg: &TrainConfig) -> Vec<(&'static str, String)> {
    TRAIN_KEYS
        .iter()
        .map(|&k| (k, get(cfg, k).expect("every listed key has a getter")))
        .collect()
}

pub fn format_train_config(cfg: &TrainConfig) -> String {
    let mut out = String::new();
    for (k, v) in to_pairs(cfg) {
        out.push_str(k);
        out.push_str(" = ");
        out.push_str(&v);
        out.push('\n');
    }
    out
}

fn load_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let ini = Ini::load_from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    let mut out = Vec::new();
    for (section, props) in ini.iter() {
        if let Some(s) = section {
            return Err(CliError::Config(format!(
                "sections are not supported ([{s}])"
            )));
        }
        for (k, v) in props.iter() {
            if out.iter().any(|(seen, _): &(String, String)| seen == k) {
                return Err(CliError::Config(format!("duplicate key {k}")));
            }
            out.push((k.to_string(), v.to_string()));
        }
    }
    Ok(out)
}

/// Parses and validates a training config.
pub fn parse_train_config(text: &str) -> Result<TrainConfig> {
    let pairs = load_pairs(text)?;
    let base = pairs
        .iter()
        .find(|(k, _)| k == "preset")
        .map_or("default", |(_, v)| v.as_str());
    let mut cfg = preset(base)?;
    for (k, v) in pairs.iter().filter(|(k, _)| k != "preset") {
        set(&mut cfg, k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// A training run: config plus data and output locations.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    /// Folder, TSV file or `synthetic:` spec.
    pub manifest: String,
    pub out_dir: PathBuf,
    pub embeddings: Option<PathBuf>,
}

const RUN_KEYS: [&str; 3] = ["manifest", "out_dir", "embeddings"];

pub fn parse_run_config(text: &str, base_dir: &Path) -> Result<RunConfig> {
    let pairs = load_pairs(text)?;
    let run = |k: &str| {
        pairs
            .iter()
            .find(|(key, _)| key == k)
            .map(|(_, v)| v.clone())
    };
    let train_text: String = pairs
        .iter()
        .filter(|(k, _)| !RUN_KEYS.contains(&k.as_str()))
        .map(|(k, v)| format!("{k} = {v}\n"))
        .collect();
    let train = parse_train_config(&train_text)?;
    let manifest =
        run("manifest").ok_or_else(|| CliError::Config("missing key manifest".into()))?;
    let manifest = if manifest.starts_with("synthetic:") {
        manifest
    } else {
        base_dir.join(&manifest).to_string_lossy().into_owned()
    };
    let out_dir = base_dir
        .join(run("out_dir").ok_or_else(|| CliError::Config("missing key out_dir".into()))?);
    let embeddings = run("embeddings").map(|p| base_dir.join(p));
    Ok(RunConfig {
        train,
        manifest,
        out_dir,
        embeddings,
    })
}

pub fn load_run_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
    parse_run_config(&text, path.parent().unwrap_or(Path::new(".")))
}
