//! Command line: `train`, `encode`, `decode`, `eval`, `ablate` and `report`.
//!
//! Exit status is 0 on success, 1 on a usage error and 2 when the data or
//! model is at fault. Errors go to standard error as one line,
//! `promptcodec: error[<code>]: <message>`.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use promptcodec_core::dsp::Waveform;
use promptcodec_core::train::ablation_variant;

use crate::ablation::{self, AblationPlan};
use crate::checkpoint::Checkpoint;
use crate::config;
use crate::error::{CliError, Result};
use crate::manifest;
use crate::run;
use crate::wav;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "promptcodec",
    version,
    about = "Prompt-augmented neural speech codec"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model from a config file.
    Train {
        /// INI training config.
        #[arg(long)]
        config: PathBuf,
    },
    /// Compress a WAV file into a stream.
    Encode(EncodeArgs),
    /// Decode a stream into a WAV file.
    Decode {
        /// Checkpoint written by `train`.
        #[arg(long)]
        model: PathBuf,
        /// Input stream.
        #[arg(long = "in")]
        input: PathBuf,
        /// Output WAV.
        #[arg(long)]
        out: PathBuf,
        /// Prompt audio when the stream carries no prompts.
        #[arg(long)]
        prompt_wav: Option<PathBuf>,
        /// Speaker vector for an external voice-print backend.
        #[arg(long)]
        speaker_embedding: Option<PathBuf>,
    },
    /// Score a checkpoint on a corpus.
    Eval {
        /// Checkpoint written by `train`.
        #[arg(long)]
        model: PathBuf,
        /// Folder of WAVs, TSV listing or `synthetic:n=..,seed=..,seconds=..`.
        #[arg(long)]
        manifest: String,
        /// Receives metrics.csv and metrics.json.
        #[arg(long)]
        out_dir: PathBuf,
        /// Program called as `tool ref.wav deg.wav`, printing a PESQ score.
        #[arg(long)]
        pesq_tool: Option<PathBuf>,
        /// Speaker vectors, one `id v1 v2 ..` line per utterance.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Send prompts inside the stream instead of at the receiver.
        #[arg(long)]
        embed_prompts: bool,
    },
    /// Train and score every ablation variant.
    Ablate {
        /// INI training config shared by every cell.
        #[arg(long)]
        config: PathBuf,
        /// Receives ablation.json, .csv and .md.
        #[arg(long)]
        out_dir: PathBuf,
        /// Codebook counts, comma separated.
        #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 4])]
        n_q: Vec<usize>,
        /// Variant names; all table rows when omitted.
        #[arg(long)]
        variant: Vec<String>,
        /// Evaluation corpus; the training corpus when omitted.
        #[arg(long)]
        eval_manifest: Option<String>,
        /// Program called as `tool ref.wav deg.wav`, printing a PESQ score.
        #[arg(long)]
        pesq_tool: Option<PathBuf>,
    },
    /// Re-render ablation tables from their stored JSON.
    Report {
        /// Folder holding ablation.json.
        #[arg(long)]
        dir: PathBuf,
    },
}

#[derive(Debug, Args)]
#[group(multiple = false)]
struct PromptMode {
    /// Embed prompts of the input itself.
    #[arg(long)]
    embed_prompts: bool,
    /// Embed prompts computed from this audio.
    #[arg(long)]
    prompt_wav: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EncodeArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    model: PathBuf,
    /// Input WAV.
    #[arg(long = "in")]
    input: PathBuf,
    /// Output stream.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    prompts: PromptMode,
    /// Speaker vector for an external voice-print backend.
    #[arg(long)]
    speaker_embedding: Option<PathBuf>,
}

fn load_checkpoint_for(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path)
}

fn read_input(path: &Path, ck: &Checkpoint) -> Result<Waveform> {
    let w = wav::read_wav(path)?;
    let sr = ck.model.config.codec.sample_rate;
    if w.sample_rate() != sr {
        return Err(promptcodec_core::Error::InvalidInput(format!(
            "{}: sample rate {} Hz, model expects {sr} Hz",
            path.display(),
            w.sample_rate()
        ))
        .into());
    }
    Ok(w)
}

fn encode(a: &EncodeArgs) -> Result<()> {
    let ck = load_checkpoint_for(&a.model)?;
    let w = read_input(&a.input, &ck)?;
    let ext = a
        .speaker_embedding
        .as_deref()
        .map(manifest::read_vector)
        .transpose()?;
    let mut e = ck.model.encode(&w, ext.as_deref())?;
    let embed = a.prompts.embed_prompts || a.prompts.prompt_wav.is_some();
    if let Some(p) = &a.prompts.prompt_wav {
        e.prompts = ck
            .model
            .compute_prompts(&read_input(p, &ck)?, ext.as_deref())?;
    }
    let bytes = ck.model.write_stream(&e, embed)?;
    fs::write(&a.out, bytes).map_err(CliError::io(&a.out))
}

fn decode(
    model: &Path,
    input: &Path,
    out: &Path,
    prompt_wav: Option<&Path>,
    speaker: Option<&Path>,
) -> Result<()> {
    let ck = load_checkpoint_for(model)?;
    let bytes = fs::read(input).map_err(CliError::io(input))?;
    let prompt = prompt_wav.map(|p| read_input(p, &ck)).transpose()?;
    let ext = speaker.map(manifest::read_vector).transpose()?;
    let y = ck
        .model
        .decode_stream(&bytes, prompt.as_ref(), ext.as_deref())?;
    wav::write_wav(out, &y)
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train { config } => {
            let rc = config::load_run_config(&config)?;
            let out = run::train_from_config(&rc)?;
            println!(
                "trained {} steps, checkpoint {}",
                out.logs.len(),
                out.checkpoint.display()
            );
            Ok(())
        }
        Command::Encode(a) => encode(&a),
        Command::Decode {
            model,
            input,
            out,
            prompt_wav,
            speaker_embedding,
        } => decode(
            &model,
            &input,
            &out,
            prompt_wav.as_deref(),
            speaker_embedding.as_deref(),
        ),
        Command::Eval {
            model,
            manifest,
            out_dir,
            pesq_tool,
            embeddings,
            embed_prompts,
        } => {
            let ck = load_checkpoint_for(&model)?;
            let utts = run::load_corpus(
                &manifest,
                ck.model.config.codec.sample_rate,
                embeddings.as_deref(),
            )?;
            let pesq = pesq_tool.map(run::external_pesq);
            let t = run::evaluate(&ck, &utts, embed_prompts, pesq.as_ref())?;
            run::write_metrics(&t, &out_dir)?;
            println!(
                "mean stoi {} mcd {} bitrate {} bps",
                t.mean.stoi, t.mean.mcd, t.mean.bitrate_bps
            );
            Ok(())
        }
        Command::Ablate {
            config,
            out_dir,
            n_q,
            variant,
            eval_manifest,
            pesq_tool,
        } => {
            let rc = config::load_run_config(&config)?;
            let mut plan = AblationPlan::full(rc.train.clone());
            plan.n_q = n_q;
            if !variant.is_empty() {
                plan.variants = variant
                    .into_iter()
                    .map(|v| {
                        ablation_variant(&v)
                            .map(|a| (v.clone(), a))
                            .ok_or_else(|| CliError::Config(format!("unknown variant {v:?}")))
                    })
                    .collect::<Result<_>>()?;
            }
            let sr = rc.train.model.codec.sample_rate;
            let train = run::load_corpus(&rc.manifest, sr, rc.embeddings.as_deref())?;
            let test = match eval_manifest {
                Some(m) => run::load_corpus(&m, sr, rc.embeddings.as_deref())?,
                None => train.clone(),
            };
            let pesq = pesq_tool.map(run::external_pesq);
            let report = ablation::run_ablation(&plan, &train, &test, pesq.as_ref())?;
            ablation::write_report(&report, &out_dir)?;
            println!(
                "{} rows written to {}",
                report.rows.len(),
                out_dir.display()
            );
            Ok(())
        }
        Command::Report { dir } => ablation::regenerate(&dir),
    }
}

/// Runs the command line and returns the exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "promptcodec: error[{}]: {e}", e.code());
            EXIT_DATA
        }
    }
}
