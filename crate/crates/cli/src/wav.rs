//! WAV reading and writing.
//!
//! Integer and float PCM are accepted on input; multi-channel files are
//! averaged to mono. Output is 32-bit float mono.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use promptcodec_core::dsp::Waveform;

use crate::error::{CliError, Result};

pub fn read_wav(path: &Path) -> Result<Waveform> {
    let wav_err = |source| CliError::Wav {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    let interleaved: Vec<f64> = match spec.sample_format {
        SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>()
            .map_err(wav_err)?,
        SampleFormat::Int => {
            let scale = 2f64.powi(i32::from(spec.bits_per_sample) - 1);
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| f64::from(v) / scale))
                .collect::<Result<_, _>>()
                .map_err(wav_err)?
        }
    };
    let ch = usize::from(spec.channels.max(1));
    let mono = interleaved
        .chunks(ch)
        .map(|c| c.iter().sum::<f64>() / ch as f64)
        .collect();
    Ok(Waveform::new(mono, spec.sample_rate)?)
}

pub fn write_wav(path: &Path, w: &Waveform) -> Result<()> {
    let wav_err = |source| CliError::Wav {
        path: path.to_path_buf(),
        source,
    };
    let spec = WavSpec {
        channels: 1,
        sample_rate: w.sample_rate(),
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut writer = WavWriter::create(path, spec).map_err(wav_err)?;
    for &s in w.samples() {
        writer.write_sample(s as f32).map_err(wav_err)?;
    }
    writer.finalize().map_err(wav_err)
}

/// Sample rate and length without decoding the samples.
pub fn probe(path: &Path) -> Result<(u32, usize)> {
    let reader = WavReader::open(path).map_err(|source| CliError::Wav {
        path: path.to_path_buf(),
        source,
    })?;
    let spec = reader.spec();
    Ok((spec.sample_rate, reader.duration() as usize))
}
