//! Training and evaluation drivers that read corpora and write files.
//!
//! Training writes `train_log.ndjson` (one step record per line) and
//! `model.pckp` into the output folder, plus `checkpoint_{step}.pckp` every
//! `checkpoint_every` steps. Evaluation writes `metrics.csv` and
//! `metrics.json`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::Command;

use promptcodec_core::dsp::Waveform;
use promptcodec_core::eval::{self, EvalItem, MetricRow, MetricsTable, PesqFn, StreamCodec};
use promptcodec_core::train::{StepLog, TrainConfig, TrainItem, Trainer};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::manifest::{self, Manifest, Utterance};
use crate::wav;

pub const LOG_FILE: &str = "train_log.ndjson";
pub const MODEL_FILE: &str = "model.pckp";
pub const METRICS_CSV: &str = "metrics.csv";
pub const METRICS_JSON: &str = "metrics.json";
pub const METRICS_HEADER: &str = "utt_id,pesq,stoi,mcd,bitrate_bps";

/// Loads the corpus of a run.
pub fn load_corpus(
    manifest: &str,
    sample_rate: u32,
    embeddings: Option<&Path>,
) -> Result<Vec<Utterance>> {
    let m = Manifest::open(manifest, sample_rate)?;
    let table = embeddings.map(manifest::read_embeddings).transpose()?;
    m.load(table.as_ref())
}

/// Outcome of a training run.
#[derive(Debug)]
pub struct TrainOutcome {
    pub logs: Vec<StepLog>,
    pub checkpoint: PathBuf,
}

/// Trains on `utts`, streaming logs and checkpoints into `out_dir`.
///
/// On a numerical failure the state from the last good step is saved as
/// `model.pckp` before the error is returned.
pub fn train(cfg: &TrainConfig, utts: Vec<Utterance>, out_dir: &Path) -> Result<TrainOutcome> {
    fs::create_dir_all(out_dir).map_err(CliError::io(out_dir))?;
    let items = utts
        .into_iter()
        .map(|u| TrainItem {
            id: u.id,
            waveform: u.waveform,
            external: u.embedding,
        })
        .collect();
    let mut trainer = Trainer::new(cfg.clone(), items)?;
    let log_path = out_dir.join(LOG_FILE);
    let mut log = BufWriter::new(File::create(&log_path).map_err(CliError::io(&log_path))?);
    let every = cfg.checkpoint_every;
    let mut sink_err: Option<CliError> = None;
    let result = trainer.run(|t, step| {
        let line = serde_json::to_string(step)
            .map_err(|e| promptcodec_core::Error::InvalidInput(e.to_string()));
        let written = line
            .map_err(CliError::from)
            .and_then(|l| writeln!(log, "{l}").map_err(CliError::io(&log_path)));
        let saved = written.and_then(|_| {
            if every > 0 && t.step_count() % every == 0 {
                Checkpoint::from_trainer(t)
                    .save(&out_dir.join(format!("checkpoint_{}.pckp", t.step_count())))
            } else {
                Ok(())
            }
        });
        saved.map_err(|e| {
            let msg = e.to_string();
            sink_err = Some(e);
            promptcodec_core::Error::InvalidInput(msg)
        })
    });
    log.flush().map_err(CliError::io(&log_path))?;
    if let Some(e) = sink_err {
        return Err(e);
    }
    let checkpoint = out_dir.join(MODEL_FILE);
    Checkpoint::from_trainer(&trainer).save(&checkpoint)?;
    let logs = result?;
    Ok(TrainOutcome { logs, checkpoint })
}

/// Runs a training config file end to end.
pub fn train_from_config(run: &RunConfig) -> Result<TrainOutcome> {
    let utts = load_corpus(
        &run.manifest,
        run.train.model.codec.sample_rate,
        run.embeddings.as_deref(),
    )?;
    train(&run.train, utts, &run.out_dir)
}

/// PESQ through an external program called as `tool <ref.wav> <deg.wav>`;
/// the last number on its standard output is the score.
pub fn external_pesq(tool: PathBuf) -> PesqFn<'static> {
    Box::new(move |reference: &Waveform, degraded: &Waveform| {
        let to_core = |e: CliError| promptcodec_core::Error::InvalidInput(format!("pesq: {e}"));
        let dir = tempfile::tempdir()
            .map_err(|e| promptcodec_core::Error::InvalidInput(format!("pesq: {e}")))?;
        let (r, d) = (dir.path().join("ref.wav"), dir.path().join("deg.wav"));
        wav::write_wav(&r, reference).map_err(to_core)?;
        wav::write_wav(&d, degraded).map_err(to_core)?;
        let out = Command::new(&tool).arg(&r).arg(&d).output().map_err(|e| {
            promptcodec_core::Error::InvalidInput(format!(
                "pesq: cannot run {}: {e}",
                tool.display()
            ))
        })?;
        if !out.status.success() {
            return Err(promptcodec_core::Error::InvalidInput(format!(
                "pesq: {} exited with {}",
                tool.display(),
                out.status
            )));
        }
        let text = String::from_utf8_lossy(&out.stdout);
        let score = text
            .split(|c: char| c.is_whitespace() || c == '=' || c == ',')
            .filter_map(|t| t.parse::<f64>().ok())
            .next_back();
        score.map(Some).ok_or_else(|| {
            promptcodec_core::Error::InvalidInput(format!("pesq: no score in output {text:?}"))
        })
    })
}

/// Encodes and decodes every utterance with the checkpoint's model.
pub fn evaluate(
    ck: &Checkpoint,
    utts: &[Utterance],
    embed_prompts: bool,
    pesq: Option<&PesqFn<'_>>,
) -> Result<MetricsTable> {
    let items: Vec<EvalItem> = utts
        .iter()
        .map(|u| EvalItem {
            id: u.id.clone(),
            waveform: u.waveform.clone(),
            external: u.embedding.clone(),
        })
        .collect();
    Ok(eval::evaluate(
        &StreamCodec {
            model: &ck.model,
            embed_prompts,
        },
        &items,
        pesq,
    )?)
}

fn csv_row(r: &MetricRow) -> [String; 5] {
    let num = |v: f64| v.to_string();
    [
        r.utt_id.clone(),
        r.pesq.map_or_else(|| "null".to_string(), num),
        num(r.stoi),
        num(r.mcd),
        num(r.bitrate_bps),
    ]
}

/// CSV with one row per utterance and the mean row last.
pub fn metrics_csv(t: &MetricsTable) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(METRICS_HEADER.split(','))?;
    for r in t.rows.iter().chain(std::iter::once(&t.mean)) {
        w.write_record(csv_row(r))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| CliError::Csv(e.into_error().into()))?;
    Ok(String::from_utf8(bytes).expect("CSV of UTF-8 fields"))
}

pub fn write_metrics(t: &MetricsTable, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(CliError::io(out_dir))?;
    let csv_path = out_dir.join(METRICS_CSV);
    fs::write(&csv_path, metrics_csv(t)?).map_err(CliError::io(&csv_path))?;
    let json_path = out_dir.join(METRICS_JSON);
    fs::write(&json_path, serde_json::to_string_pretty(t)? + "\n").map_err(CliError::io(&json_path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkpoint::tests::tiny_config;

    fn corpus(n: usize) -> Vec<Utterance> {
        load_corpus(&format!("synthetic:n={n},seed=4,seconds=0.6"), 16_000, None).unwrap()
    }

    #[test]
    fn train_writes_logs_and_checkpoints() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config();
        cfg.steps = 2;
        cfg.checkpoint_every = 1;
        let out = train(&cfg, corpus(1), dir.path()).unwrap();
        assert_eq!(out.logs.len(), 2);
        let log = fs::read_to_string(dir.path().join(LOG_FILE)).unwrap();
        assert_eq!(log.lines().count(), 2);
        let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
        for k in [
            "step", "l_rec", "l_f", "l_vq", "l_adv", "l_drl", "l_total", "l_disc", "alpha",
        ] {
            assert!(first.get(k).is_some(), "missing {k}");
        }
        assert!(dir.path().join("checkpoint_1.pckp").exists());
        assert_eq!(Checkpoint::load(&out.checkpoint).unwrap().step, 2);
    }

    #[test]
    fn eval_table_shape() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config();
        cfg.steps = 1;
        let out = train(&cfg, corpus(1), dir.path()).unwrap();
        let ck = Checkpoint::load(&out.checkpoint).unwrap();
        let t = evaluate(&ck, &corpus(3), false, None).unwrap();
        write_metrics(&t, dir.path()).unwrap();
        let csv = fs::read_to_string(dir.path().join(METRICS_CSV)).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[0], METRICS_HEADER);
        assert!(lines[4].starts_with("mean,null,"));
        let json: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join(METRICS_JSON)).unwrap())
                .unwrap();
        assert_eq!(json["rows"].as_array().unwrap().len(), 3);
    }

    #[test]
    fn pesq_tool_output_is_parsed() {
        let dir = tempfile::tempdir().unwrap();
        let tool = dir.path().join("pesq.sh");
        fs::write(
            &tool,
            "#!/bin/sh\necho \"P.862 Prediction (Raw MOS, MOS-LQO): = 4.5 3.25\"\n",
        )
        .unwrap();
        let mut perm = fs::metadata(&tool).unwrap().permissions();
        std::os::unix::fs::PermissionsExt::set_mode(&mut perm, 0o755);
        fs::set_permissions(&tool, perm).unwrap();
        let f = external_pesq(tool);
        let w = Waveform::new(vec![0.0; 100], 16_000).unwrap();
        assert_eq!(f(&w, &w).unwrap(), Some(3.25));
        let missing = external_pesq(dir.path().join("nope"));
        assert!(missing(&w, &w).is_err());
    }
}
