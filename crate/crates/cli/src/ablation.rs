//! Ablation runs and their report tables.
//!
//! Each (variant, N_q) cell is trained, evaluated and reduced to the mean
//! metrics row. Results are stored as JSON; the CSV and Markdown tables are
//! rendered from that JSON alone, so they can be regenerated byte for byte.
//! The "published" columns hold the reported LibriTTS numbers for context.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use promptcodec_core::eval::{self, EvalItem, PesqFn, StreamCodec};
use promptcodec_core::grvq::GrvqConfig;
use promptcodec_core::train::{Ablation, TrainConfig, TrainItem, Trainer, ABLATION_VARIANTS};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::manifest::Utterance;

pub const REPORT_JSON: &str = "ablation.json";
pub const REPORT_CSV: &str = "ablation.csv";
pub const REPORT_MD: &str = "ablation.md";
pub const CSV_HEADER: &str =
    "n_q,variant,pesq,stoi,mcd,bitrate_bps,published_pesq,published_stoi,published_mcd,error";

/// Published `(variant, N_q, PESQ, STOI, MCD)` on LibriTTS.
pub const PUBLISHED: [(&str, usize, f64, f64, f64); 15] = [
    ("PromptCodec", 1, 2.728, 0.938, 0.847),
    ("w/o DRL", 1, 2.661, 0.934, 0.895),
    ("w/o DRL, w/o AFWF", 1, 2.620, 0.932, 0.901),
    (
        "w/o DRL, w/o AFWF, w/o ConditionEncoder",
        1,
        2.403,
        0.922,
        1.018,
    ),
    (
        "w/o DRL, w/o AFWF, w/o VoiceprintEncoder",
        1,
        2.530,
        0.93,
        0.944,
    ),
    ("PromptCodec", 2, 2.843, 0.947, 0.764),
    ("w/o DRL", 2, 2.742, 0.944, 0.811),
    ("w/o DRL, w/o AFWF", 2, 2.701, 0.941, 0.822),
    (
        "w/o DRL, w/o AFWF, w/o ConditionEncoder",
        2,
        2.566,
        0.937,
        0.866,
    ),
    (
        "w/o DRL, w/o AFWF, w/o VoiceprintEncoder",
        2,
        2.580,
        0.939,
        0.877,
    ),
    ("PromptCodec", 4, 3.720, 0.976, 0.561),
    ("w/o DRL", 4, 3.661, 0.976, 0.574),
    ("w/o DRL, w/o AFWF", 4, 3.646, 0.975, 0.574),
    (
        "w/o DRL, w/o AFWF, w/o ConditionEncoder",
        4,
        3.603,
        0.974,
        0.608,
    ),
    (
        "w/o DRL, w/o AFWF, w/o VoiceprintEncoder",
        4,
        3.613,
        0.975,
        0.611,
    ),
];

pub fn published(variant: &str, n_q: usize) -> Option<(f64, f64, f64)> {
    PUBLISHED
        .iter()
        .find(|r| r.0 == variant && r.1 == n_q)
        .map(|r| (r.2, r.3, r.4))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationPlan {
    pub base: TrainConfig,
    pub variants: Vec<(String, Ablation)>,
    pub n_q: Vec<usize>,
    /// Send prompts inside the stream during evaluation.
    pub embed_prompts: bool,
}

impl AblationPlan {
    /// All five table rows at `N_q ∈ {1, 2, 4}`.
    pub fn full(base: TrainConfig) -> Self {
        Self {
            base,
            variants: ABLATION_VARIANTS
                .iter()
                .map(|(n, a)| (n.to_string(), *a))
                .collect(),
            n_q: vec![1, 2, 4],
            embed_prompts: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let names: BTreeSet<&str> = self.variants.iter().map(|(n, _)| n.as_str()).collect();
        if names.len() != self.variants.len() {
            return Err(CliError::Config(
                "ablation variant names must be unique".into(),
            ));
        }
        if self.variants.is_empty() || self.n_q.is_empty() || self.n_q.contains(&0) {
            return Err(CliError::Config(
                "ablation plan needs variants and positive N_q values".into(),
            ));
        }
        Ok(())
    }

    /// Config of one cell: the variant's switches and an `N_q` split that
    /// keeps the base codebook settings.
    pub fn cell_config(&self, ablation: Ablation, n_q: usize) -> TrainConfig {
        let mut cfg = self.base.clone();
        cfg.apply_ablation(ablation);
        let split = GrvqConfig::for_codebooks(n_q);
        cfg.model.grvq.groups = split.groups;
        cfg.model.grvq.residual_layers = split.residual_layers;
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub n_q: usize,
    pub pesq: Option<f64>,
    pub stoi: Option<f64>,
    pub mcd: Option<f64>,
    pub bitrate_bps: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

fn run_cell(
    cfg: TrainConfig,
    train: &[Utterance],
    test: &[Utterance],
    embed: bool,
    pesq: Option<&PesqFn<'_>>,
) -> Result<eval::MetricRow> {
    let items = train
        .iter()
        .map(|u| TrainItem {
            id: u.id.clone(),
            waveform: u.waveform.clone(),
            external: u.embedding.clone(),
        })
        .collect();
    let mut t = Trainer::new(cfg, items)?;
    t.run(|_, _| Ok(()))?;
    let evals: Vec<EvalItem> = test
        .iter()
        .map(|u| EvalItem {
            id: u.id.clone(),
            waveform: u.waveform.clone(),
            external: u.embedding.clone(),
        })
        .collect();
    Ok(eval::evaluate(
        &StreamCodec {
            model: &t.model,
            embed_prompts: embed,
        },
        &evals,
        pesq,
    )?
    .mean)
}

/// Trains and evaluates every cell. A failing cell becomes a row carrying
/// the error and the run continues. Rows are grouped by `N_q`.
pub fn run_ablation(
    plan: &AblationPlan,
    train: &[Utterance],
    test: &[Utterance],
    pesq: Option<&PesqFn<'_>>,
) -> Result<AblationReport> {
    plan.validate()?;
    let mut rows = Vec::new();
    for &n_q in &plan.n_q {
        for (name, ab) in &plan.variants {
            let row = match run_cell(
                plan.cell_config(*ab, n_q),
                train,
                test,
                plan.embed_prompts,
                pesq,
            ) {
                Ok(m) => AblationRow {
                    variant: name.clone(),
                    n_q,
                    pesq: m.pesq,
                    stoi: Some(m.stoi),
                    mcd: Some(m.mcd),
                    bitrate_bps: Some(m.bitrate_bps),
                    error: None,
                },
                Err(e) => AblationRow {
                    variant: name.clone(),
                    n_q,
                    pesq: None,
                    stoi: None,
                    mcd: None,
                    bitrate_bps: None,
                    error: Some(e.to_string()),
                },
            };
            rows.push(row);
        }
    }
    Ok(AblationReport { rows })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

pub fn render_csv(r: &AblationReport) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(CSV_HEADER.split(','))?;
    for row in &r.rows {
        let pubd = published(&row.variant, row.n_q);
        w.write_record([
            row.n_q.to_string(),
            row.variant.clone(),
            opt(row.pesq),
            opt(row.stoi),
            opt(row.mcd),
            opt(row.bitrate_bps),
            opt(pubd.map(|p| p.0)),
            opt(pubd.map(|p| p.1)),
            opt(pubd.map(|p| p.2)),
            row.error.clone().unwrap_or_default(),
        ])?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| CliError::Csv(e.into_error().into()))?;
    Ok(String::from_utf8(bytes).expect("CSV of UTF-8 fields"))
}

pub fn render_markdown(r: &AblationReport) -> String {
    let f = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"));
    let mut out = String::from(
        "| N_q | Model | PESQ | STOI | MCD | bitrate (bps) | PESQ (published) | STOI (published) | MCD (published) |\n\
         |---|---|---|---|---|---|---|---|---|\n",
    );
    for row in &r.rows {
        let p = published(&row.variant, row.n_q);
        let model = match &row.error {
            Some(e) => format!("{} (failed: {})", row.variant, e.replace('|', "/")),
            None => row.variant.clone(),
        };
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} | {} | {} | {} |",
            row.n_q,
            model,
            f(row.pesq),
            f(row.stoi),
            f(row.mcd),
            row.bitrate_bps
                .map_or_else(|| "-".to_string(), |b| format!("{b:.1}")),
            f(p.map(|p| p.0)),
            f(p.map(|p| p.1)),
            f(p.map(|p| p.2)),
        );
    }
    out
}

/// Writes the JSON results and the tables rendered from them.
pub fn write_report(r: &AblationReport, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(CliError::io(out_dir))?;
    let json = out_dir.join(REPORT_JSON);
    fs::write(&json, serde_json::to_string_pretty(r)? + "\n").map_err(CliError::io(&json))?;
    regenerate(out_dir)
}

/// Re-renders the CSV and Markdown tables from the stored JSON.
pub fn regenerate(out_dir: &Path) -> Result<()> {
    let json = out_dir.join(REPORT_JSON);
    let r: AblationReport =
        serde_json::from_str(&fs::read_to_string(&json).map_err(CliError::io(&json))?)?;
    let csv = out_dir.join(REPORT_CSV);
    fs::write(&csv, render_csv(&r)?).map_err(CliError::io(&csv))?;
    let md = out_dir.join(REPORT_MD);
    fs::write(&md, render_markdown(&r)).map_err(CliError::io(&md))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkpoint::tests::tiny_config;
    use crate::run::load_corpus;

    #[test]
    fn every_reference_row_names_a_variant() {
        for (v, n, ..) in PUBLISHED {
            assert!(promptcodec_core::train::ablation_variant(v).is_some());
            assert!([1, 2, 4].contains(&n));
        }
        assert_eq!(published("PromptCodec", 4), Some((3.720, 0.976, 0.561)));
        assert_eq!(published("PromptCodec", 1), Some((2.728, 0.938, 0.847)));
    }

    #[test]
    fn full_plan_shape() {
        let p = AblationPlan::full(TrainConfig::toy());
        assert_eq!(p.variants.len() * p.n_q.len(), 15);
        let c = p.cell_config(p.variants[4].1, 4);
        assert_eq!((c.model.grvq.groups, c.model.grvq.residual_layers), (2, 2));
        assert!(!c.model.use_voiceprint_encoder && c.model.use_conditional_encoder);
        let mut dup = p.clone();
        dup.variants.push(dup.variants[0].clone());
        assert!(dup.validate().is_err());
    }

    #[test]
    fn single_cell_and_regeneration() {
        let mut base = tiny_config();
        base.steps = 1;
        let plan = AblationPlan {
            base,
            variants: vec![(
                "w/o DRL".into(),
                promptcodec_core::train::ablation_variant("w/o DRL").unwrap(),
            )],
            n_q: vec![2],
            embed_prompts: false,
        };
        let utts = load_corpus("synthetic:n=1,seed=2,seconds=0.6", 16_000, None).unwrap();
        let r = run_ablation(&plan, &utts, &utts, None).unwrap();
        assert_eq!(r.rows.len(), 1);
        assert!(r.rows[0].error.is_none(), "{:?}", r.rows[0].error);
        let dir = tempfile::tempdir().unwrap();
        write_report(&r, dir.path()).unwrap();
        let csv = fs::read(dir.path().join(REPORT_CSV)).unwrap();
        let md = fs::read(dir.path().join(REPORT_MD)).unwrap();
        regenerate(dir.path()).unwrap();
        assert_eq!(fs::read(dir.path().join(REPORT_CSV)).unwrap(), csv);
        assert_eq!(fs::read(dir.path().join(REPORT_MD)).unwrap(), md);
        let text = String::from_utf8(csv).unwrap();
        assert!(text.contains("2,w/o DRL,,"));
        assert!(text.contains(",2.742,0.944,0.811,"));
    }

    #[test]
    fn failing_cell_is_recorded() {
        let mut base = tiny_config();
        base.steps = 1;
        let plan = AblationPlan {
            base,
            variants: vec![("PromptCodec".into(), Ablation::FULL)],
            n_q: vec![1],
            embed_prompts: false,
        };
        let utts = load_corpus("synthetic:n=1,seed=2,seconds=0.6", 16_000, None).unwrap();
        let r = run_ablation(&plan, &[], &utts, None).unwrap();
        assert!(r.rows[0].error.is_some());
        assert!(render_markdown(&r).contains("failed"));
    }
}
