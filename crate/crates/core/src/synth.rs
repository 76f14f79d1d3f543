//! Seeded pseudo-speech.
//!
//! Each utterance is a sum of three to five harmonics of a slowly wandering
//! fundamental with vibrato, shaped by a syllable-rate amplitude envelope,
//! over a faint Gaussian noise floor. Utterance `i` of a corpus draws from
//! ChaCha stream `i` of the corpus seed, so any entry can be regenerated on
//! its own.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dsp::Waveform;
use crate::error::invalid_input;
use crate::Result;

const NOISE_FLOOR: f64 = 1e-3;
const PEAK: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub n: usize,
    pub seed: u64,
    pub seconds: f64,
    pub sample_rate: u32,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(invalid_input!(
                "synthetic corpus must have at least one utterance"
            ));
        }
        if !(self.seconds > 0.0 && self.seconds.is_finite()) || self.sample_rate == 0 {
            return Err(invalid_input!(
                "synthetic utterances need a positive duration and rate"
            ));
        }
        if ((self.seconds * self.sample_rate as f64) as usize) == 0 {
            return Err(invalid_input!("synthetic utterances would be empty"));
        }
        Ok(())
    }

    pub fn id(&self, i: usize) -> String {
        format!("syn{i:04}")
    }

    pub fn utterance(&self, i: usize) -> Result<Waveform> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(i as u64);
        let len = (self.seconds * self.sample_rate as f64) as usize;
        Waveform::new(
            pseudo_speech(&mut rng, len, self.sample_rate),
            self.sample_rate,
        )
    }

    /// `(id, waveform)` pairs in id order.
    pub fn generate(&self) -> Result<Vec<(String, Waveform)>> {
        (0..self.n)
            .map(|i| Ok((self.id(i), self.utterance(i)?)))
            .collect()
    }
}

/// One utterance of `len` samples.
pub fn pseudo_speech<R: Rng>(rng: &mut R, len: usize, sample_rate: u32) -> Vec<f64> {
    let sr = sample_rate as f64;
    let f0 = rng.random_range(90.0..250.0);
    let drift = rng.random_range(-0.3..0.3);
    let vib_rate = rng.random_range(4.0..7.0);
    let vib_depth = rng.random_range(0.01..0.04);
    let syl_rate = rng.random_range(2.5..6.0);
    let syl_phase = rng.random_range(0.0..2.0 * PI);
    let n_harm = rng.random_range(3..=5usize);
    let amps: Vec<f64> = (1..=n_harm)
        .map(|k| rng.random_range(0.5..1.0) / k as f64)
        .collect();
    let phases: Vec<f64> = (0..n_harm)
        .map(|_| rng.random_range(0.0..2.0 * PI))
        .collect();
    let nyquist = sr / 2.0;
    let mut phase = 0.0;
    let mut out = Vec::with_capacity(len);
    for i in 0..len {
        let t = i as f64 / sr;
        let f = f0
            * (1.0 + drift * t / (1.0 + t))
            * (1.0 + vib_depth * libm::sin(2.0 * PI * vib_rate * t));
        phase += 2.0 * PI * f / sr;
        let env = 0.55 + 0.45 * libm::sin(2.0 * PI * syl_rate * t + syl_phase);
        let mut s = 0.0;
        for (k, (a, p)) in amps.iter().zip(&phases).enumerate() {
            if f * ((k + 1) as f64) < nyquist {
                s += a * libm::sin((k + 1) as f64 * phase + p);
            }
        }
        out.push(env * s);
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let gain = if peak > 0.0 { PEAK / peak } else { 0.0 };
    for v in &mut out {
        *v = *v * gain + NOISE_FLOOR * rng.sample::<f64, _>(StandardNormal);
    }
    out
}

/// Adds white Gaussian noise at the given signal-to-noise ratio.
pub fn add_noise<R: Rng>(rng: &mut R, x: &[f64], snr_db: f64) -> Vec<f64> {
    let noise: Vec<f64> = x
        .iter()
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let ps = x.iter().map(|v| v * v).sum::<f64>();
    let pn = noise
        .iter()
        .map(|v| v * v)
        .sum::<f64>()
        .max(f64::MIN_POSITIVE);
    let g = libm::sqrt(ps / pn / libm::pow(10.0, snr_db / 10.0));
    x.iter().zip(&noise).map(|(a, n)| a + g * n).collect()
}
