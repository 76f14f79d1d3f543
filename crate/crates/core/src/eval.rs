//! Objective evaluation of a codec over a set of utterances.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

use serde::Serialize;

use crate::codec::CodecConfig;
use crate::dsp::Waveform;
use crate::error::invalid_input;
use crate::grvq::GrvqConfig;
use crate::metrics::{self, MetricReport};
use crate::model::PromptCodec;
use crate::stream;
use crate::Result;

/// Output of one pass through a codec.
#[derive(Debug, Clone, PartialEq)]
pub struct Coded {
    pub output: Waveform,
    pub n_frames: usize,
    /// Bits sent besides the code indices.
    pub side_info_bits: u64,
}

/// Anything that turns a waveform into a reconstruction at a known bitrate.
pub trait Codec {
    fn code(&self, w: &Waveform, external: Option<&[f64]>) -> Result<Coded>;
    fn bitrate(&self, n_frames: usize, side_info_bits: u64) -> f64;
}

/// Returns its input; bitrate is that of the given quantizer shape.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityCodec {
    pub codec: CodecConfig,
    pub grvq: GrvqConfig,
}

impl Codec for IdentityCodec {
    fn code(&self, w: &Waveform, _external: Option<&[f64]>) -> Result<Coded> {
        Ok(Coded {
            output: w.clone(),
            n_frames: w.len().div_ceil(self.codec.hop()),
            side_info_bits: 0,
        })
    }

    fn bitrate(&self, n_frames: usize, side_info_bits: u64) -> f64 {
        metrics::bitrate(&self.codec, &self.grvq, n_frames, side_info_bits)
    }
}

/// A trained model, run through the real stream format.
#[derive(Debug, Clone, Copy)]
pub struct StreamCodec<'a> {
    pub model: &'a PromptCodec,
    /// Send prompts in the stream; otherwise the utterance itself is the
    /// receiver-side prompt.
    pub embed_prompts: bool,
}

impl Codec for StreamCodec<'_> {
    fn code(&self, w: &Waveform, external: Option<&[f64]>) -> Result<Coded> {
        let e = self.model.encode(w, external)?;
        let bytes = self.model.write_stream(&e, self.embed_prompts)?;
        let s = stream::read_stream(&bytes)?;
        let side_info_bits = s.prompts.as_ref().map_or(0, |p| p.side_info_bits());
        let prompt_wav = s.prompts.is_none().then_some(w);
        let output = self.model.decode_stream(&bytes, prompt_wav, external)?;
        Ok(Coded {
            output,
            n_frames: e.indices.n_frames,
            side_info_bits,
        })
    }

    fn bitrate(&self, n_frames: usize, side_info_bits: u64) -> f64 {
        metrics::bitrate(
            &self.model.config.codec,
            &self.model.config.grvq,
            n_frames,
            side_info_bits,
        )
    }
}

/// One utterance to evaluate.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalItem {
    pub id: String,
    pub waveform: Waveform,
    pub external: Option<Vec<f64>>,
}

/// One row of the metrics table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub utt_id: String,
    pub pesq: Option<f64>,
    pub stoi: f64,
    pub mcd: f64,
    pub bitrate_bps: f64,
}

/// Per-utterance rows and their arithmetic mean.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsTable {
    pub rows: Vec<MetricRow>,
    pub mean: MetricRow,
}

/// Id of the aggregate row.
pub const MEAN_ROW_ID: &str = "mean";

impl MetricsTable {
    /// Builds the aggregate row. PESQ is averaged only if every row has it.
    pub fn from_rows(rows: Vec<MetricRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(invalid_input!("no utterances to aggregate"));
        }
        let n = rows.len() as f64;
        let avg = |f: &dyn Fn(&MetricRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
        let pesq = rows
            .iter()
            .map(|r| r.pesq)
            .collect::<Option<Vec<f64>>>()
            .map(|v| v.iter().sum::<f64>() / n);
        let mean = MetricRow {
            utt_id: MEAN_ROW_ID.into(),
            pesq,
            stoi: avg(&|r| r.stoi),
            mcd: avg(&|r| r.mcd),
            bitrate_bps: avg(&|r| r.bitrate_bps),
        };
        Ok(Self { rows, mean })
    }
}

/// Optional PESQ scorer: `(reference, degraded) → score`.
pub type PesqFn<'a> = Box<dyn Fn(&Waveform, &Waveform) -> Result<Option<f64>> + 'a>;

/// Codes every item and scores the output against its input.
pub fn evaluate(
    codec: &dyn Codec,
    items: &[EvalItem],
    pesq: Option<&PesqFn<'_>>,
) -> Result<MetricsTable> {
    let mut rows = Vec::with_capacity(items.len());
    for it in items {
        let c = codec.code(&it.waveform, it.external.as_deref())?;
        let deg = Waveform::new(
            c.output.samples()[..it.waveform.len().min(c.output.len())].to_vec(),
            c.output.sample_rate(),
        )?;
        let report = MetricReport::new(
            metrics::mcd(&it.waveform, &deg)?,
            metrics::stoi(&it.waveform, &deg)?,
            codec.bitrate(c.n_frames, c.side_info_bits),
            c.n_frames,
        );
        let pesq = match pesq {
            Some(f) => f(&it.waveform, &deg)?,
            None => None,
        };
        rows.push(MetricRow {
            utt_id: it.id.clone(),
            pesq,
            stoi: report.stoi,
            mcd: report.mcd,
            bitrate_bps: report.bitrate_bps,
        });
    }
    MetricsTable::from_rows(rows)
}
