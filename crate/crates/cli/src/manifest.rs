//! Corpus manifests: a folder of WAVs, a TSV listing, or a synthetic spec.
//!
//! TSV rows are `id<TAB>path[<TAB>embedding_key]`; relative paths resolve
//! against the TSV's folder and `#` starts a comment line. A synthetic
//! corpus is written `synthetic:n=8,seed=7,seconds=1.0`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use promptcodec_core::dsp::Waveform;
use promptcodec_core::synth::SyntheticSpec;

use crate::error::{CliError, Result};
use crate::wav;

#[derive(Debug, Clone, PartialEq)]
pub enum AudioSource {
    File(PathBuf),
    Synthetic { spec: SyntheticSpec, index: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub source: AudioSource,
    /// Key into an embedding table; defaults to the id.
    pub embedding_key: Option<String>,
}

/// Entries sorted by id, all at one sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub sample_rate: u32,
    pub entries: Vec<ManifestEntry>,
}

/// A loaded utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub waveform: Waveform,
    pub embedding: Option<Vec<f64>>,
}

pub type Embeddings = BTreeMap<String, Vec<f64>>;

impl Manifest {
    /// Opens a directory, a TSV file or a `synthetic:` spec.
    pub fn open(spec: &str, sample_rate: u32) -> Result<Self> {
        if let Some(rest) = spec.strip_prefix("synthetic:") {
            return Self::synthetic(parse_synthetic(rest, sample_rate)?);
        }
        let path = Path::new(spec);
        if path.is_dir() {
            Self::from_dir(path, sample_rate)
        } else {
            Self::from_tsv(path, sample_rate)
        }
    }

    pub fn synthetic(spec: SyntheticSpec) -> Result<Self> {
        spec.validate()?;
        let entries = (0..spec.n)
            .map(|index| ManifestEntry {
                id: spec.id(index),
                source: AudioSource::Synthetic { spec, index },
                embedding_key: None,
            })
            .collect();
        Ok(Self {
            sample_rate: spec.sample_rate,
            entries,
        })
    }

    /// Every `*.wav` in `dir` (not recursive), id = file stem.
    pub fn from_dir(dir: &Path, sample_rate: u32) -> Result<Self> {
        let mut entries = Vec::new();
        for e in fs::read_dir(dir).map_err(CliError::io(dir))? {
            let path = e.map_err(CliError::io(dir))?.path();
            let is_wav = path
                .extension()
                .is_some_and(|x| x.eq_ignore_ascii_case("wav"));
            if !is_wav || !path.is_file() {
                continue;
            }
            let id = path
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| CliError::Manifest(format!("{}: non UTF-8 name", path.display())))?;
            entries.push(ManifestEntry {
                id: id.to_string(),
                source: AudioSource::File(path.clone()),
                embedding_key: None,
            });
        }
        Self::finish(entries, sample_rate)
    }

    pub fn from_tsv(path: &Path, sample_rate: u32) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(CliError::io(path))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if !(2..=3).contains(&cols.len()) || cols[0].is_empty() || cols[1].is_empty() {
                return Err(CliError::Manifest(format!(
                    "{}:{}: expected id, path and an optional embedding key",
                    path.display(),
                    n + 1
                )));
            }
            let audio = base.join(cols[1]);
            let embedding_key = cols.get(2).filter(|k| !k.is_empty()).map(|k| k.to_string());
            entries.push(ManifestEntry {
                id: cols[0].to_string(),
                source: AudioSource::File(audio),
                embedding_key,
            });
        }
        Self::finish(entries, sample_rate)
    }

    fn finish(mut entries: Vec<ManifestEntry>, sample_rate: u32) -> Result<Self> {
        if entries.is_empty() {
            return Err(promptcodec_core::Error::InvalidInput("empty corpus".into()).into());
        }
        entries.sort_by(|a, b| a.id.cmp(&b.id));
        let mut seen = BTreeSet::new();
        for e in &entries {
            if !seen.insert(e.id.as_str()) {
                return Err(CliError::Manifest(format!("duplicate id {}", e.id)));
            }
            if let AudioSource::File(p) = &e.source {
                let (sr, _) = wav::probe(p)?;
                if sr != sample_rate {
                    return Err(promptcodec_core::Error::InvalidInput(format!(
                        "{}: sample rate {sr} Hz, expected {sample_rate} Hz",
                        p.display()
                    ))
                    .into());
                }
            }
        }
        Ok(Self {
            sample_rate,
            entries,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn load_waveform(&self, i: usize) -> Result<Waveform> {
        let w = match &self.entries[i].source {
            AudioSource::File(p) => wav::read_wav(p)?,
            AudioSource::Synthetic { spec, index } => spec.utterance(*index)?,
        };
        if w.sample_rate() != self.sample_rate {
            return Err(promptcodec_core::Error::InvalidInput(format!(
                "{}: sample rate {} Hz, expected {} Hz",
                self.entries[i].id,
                w.sample_rate(),
                self.sample_rate
            ))
            .into());
        }
        Ok(w)
    }

    /// Loads every entry, attaching its embedding when a table is given.
    pub fn load(&self, embeddings: Option<&Embeddings>) -> Result<Vec<Utterance>> {
        (0..self.len())
            .map(|i| {
                let e = &self.entries[i];
                let embedding = match embeddings {
                    Some(table) => {
                        let key = e.embedding_key.as_deref().unwrap_or(&e.id);
                        Some(table.get(key).cloned().ok_or_else(|| {
                            CliError::Manifest(format!("no embedding for key {key}"))
                        })?)
                    }
                    None => None,
                };
                Ok(Utterance {
                    id: e.id.clone(),
                    waveform: self.load_waveform(i)?,
                    embedding,
                })
            })
            .collect()
    }
}

fn parse_synthetic(s: &str, sample_rate: u32) -> Result<SyntheticSpec> {
    let mut spec = SyntheticSpec {
        n: 8,
        seed: 0,
        seconds: 1.0,
        sample_rate,
    };
    for kv in s.split(',').filter(|kv| !kv.is_empty()) {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Manifest(format!("bad synthetic field {kv:?}")))?;
        let bad = |_| CliError::Manifest(format!("bad value for {k}: {v:?}"));
        match k.trim() {
            "n" => spec.n = v.trim().parse().map_err(bad)?,
            "seed" => spec.seed = v.trim().parse().map_err(bad)?,
            "seconds" => {
                spec.seconds = v
                    .trim()
                    .parse()
                    .map_err(|_| CliError::Manifest(format!("bad value for seconds: {v:?}")))?
            }
            other => {
                return Err(CliError::Manifest(format!(
                    "unknown synthetic field {other}"
                )))
            }
        }
    }
    Ok(spec)
}

/// Reads `key v1 v2 ...` lines (whitespace separated).
pub fn read_embeddings(path: &Path) -> Result<Embeddings> {
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    let mut out = Embeddings::new();
    for (n, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        let Some(key) = parts.next() else { continue };
        if key.starts_with('#') {
            continue;
        }
        let v = parse_floats(parts)
            .map_err(|e| CliError::Manifest(format!("{}:{}: {e}", path.display(), n + 1)))?;
        if v.is_empty() || out.insert(key.to_string(), v).is_some() {
            return Err(CliError::Manifest(format!(
                "{}:{}: empty or duplicate embedding {key}",
                path.display(),
                n + 1
            )));
        }
    }
    Ok(out)
}

/// Reads one whitespace-separated vector.
pub fn read_vector(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    let v = parse_floats(text.split_whitespace())
        .map_err(|e| CliError::Manifest(format!("{}: {e}", path.display())))?;
    if v.is_empty() {
        return Err(CliError::Manifest(format!(
            "{}: empty vector",
            path.display()
        )));
    }
    Ok(v)
}

fn parse_floats<'a>(parts: impl Iterator<Item = &'a str>) -> std::result::Result<Vec<f64>, String> {
    parts
        .map(|p| match p.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(format!("bad number {p:?}")),
        })
        .collect()
}
