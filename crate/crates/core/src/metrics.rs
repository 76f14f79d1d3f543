//! Objective quality metrics and bitrate accounting.
//!
//! MCD compares the first thirteen mel-cepstral coefficients (excluding
//! `c₀`) of 80-band log-Mel amplitude frames, with no time warping. The log
//! floor sits 100 dB below each signal's loudest band, so a pure gain change
//! only moves `c₀`.
//!
//! STOI follows the reference algorithm: resample to 10 kHz, drop frames
//! more than 40 dB below the loudest one, 15 one-third-octave bands from
//! 150 Hz, 30-frame (384 ms) envelope segments, clipping at −15 dB SDR and
//! the mean clipped correlation.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{LN_10, PI, SQRT_2};

use serde::Serialize;

use crate::codec::CodecConfig;
use crate::dsp::{self, Fft, SpectrogramConfig, Waveform};
use crate::error::invalid_input;
use crate::grvq::{bits_for, GrvqConfig};
use crate::Result;

pub const MCD_COEFFS: usize = 13;
/// Mel power floor relative to the signal's own peak band power (-100 dB).
const MCD_RELATIVE_FLOOR: f64 = 1e-10;

const STOI_FS: u32 = 10_000;
const STOI_FRAME: usize = 256;
const STOI_NFFT: usize = 512;
const STOI_BANDS: usize = 15;
const STOI_MIN_FREQ: f64 = 150.0;
const STOI_SEGMENT: usize = 30;
const STOI_BETA_DB: f64 = -15.0;
const STOI_DYN_RANGE: f64 = 40.0;
const EPS: f64 = f64::EPSILON;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricReport {
    pub mcd: f64,
    /// Clipped to `[0, 1]`.
    pub stoi: f64,
    pub bitrate_bps: f64,
    pub n_frames: usize,
}

impl MetricReport {
    pub fn new(mcd: f64, raw_stoi: f64, bitrate_bps: f64, n_frames: usize) -> Self {
        Self {
            mcd,
            stoi: raw_stoi.clamp(0.0, 1.0),
            bitrate_bps,
            n_frames,
        }
    }
}

/// `frame_rate · N_q · ceil(log2 K) + side_bits · frame_rate / n_frames`.
pub fn bitrate(codec: &CodecConfig, grvq: &GrvqConfig, n_frames: usize, side_bits: u64) -> f64 {
    let fr = codec.frame_rate();
    let payload = fr * grvq.n_q() as f64 * bits_for(grvq.codebook_size) as f64;
    if n_frames == 0 {
        return payload;
    }
    payload + side_bits as f64 * fr / n_frames as f64
}

fn check_pair(r: &Waveform, d: &Waveform) -> Result<()> {
    if r.sample_rate() != d.sample_rate() {
        return Err(invalid_input!(
            "sample rates differ: {} vs {}",
            r.sample_rate(),
            d.sample_rate()
        ));
    }
    Ok(())
}

fn fit_length(x: &[f64], n: usize) -> Vec<f64> {
    let mut v = x[..x.len().min(n)].to_vec();
    v.resize(n, 0.0);
    v
}

/// Orthonormal DCT-II coefficients `0..=MCD_COEFFS` of each row of log-amplitude Mel frames.
fn mel_cepstra(samples: &[f64], sample_rate: u32) -> Vec<[f64; MCD_COEFFS + 1]> {
    let cfg = SpectrogramConfig::analysis(sample_rate);
    let power = dsp::mel_power(samples, sample_rate, &cfg);
    let (frames, m) = power.dims2();
    let peak = power.data().iter().copied().fold(0.0, f64::max);
    let floor = (peak * MCD_RELATIVE_FLOOR).max(f64::MIN_POSITIVE);
    let basis: Vec<Vec<f64>> = (0..=MCD_COEFFS)
        .map(|k| {
            let scale = if k == 0 {
                libm::sqrt(1.0 / m as f64)
            } else {
                libm::sqrt(2.0 / m as f64)
            };
            (0..m)
                .map(|j| scale * libm::cos(PI * k as f64 * (j as f64 + 0.5) / m as f64))
                .collect()
        })
        .collect();
    (0..frames)
        .map(|f| {
            let logamp: Vec<f64> = power
                .row(f)
                .iter()
                .map(|p| 0.5 * libm::log(p.max(floor)))
                .collect();
            let mut c = [0.0; MCD_COEFFS + 1];
            for (k, b) in basis.iter().enumerate() {
                c[k] = b.iter().zip(&logamp).map(|(x, y)| x * y).sum();
            }
            c
        })
        .collect()
}

/// Mel-cepstral distortion. `deg` is truncated or zero-padded to `ref`'s length.
pub fn mcd(reference: &Waveform, degraded: &Waveform) -> Result<f64> {
    check_pair(reference, degraded)?;
    let sr = reference.sample_rate();
    let deg = fit_length(degraded.samples(), reference.len());
    let a = mel_cepstra(reference.samples(), sr);
    let b = mel_cepstra(&deg, sr);
    let k = 10.0 * SQRT_2 / LN_10;
    let total: f64 = a
        .iter()
        .zip(&b)
        .map(|(x, y)| {
            libm::sqrt(
                (1..=MCD_COEFFS)
                    .map(|i| (x[i] - y[i]) * (x[i] - y[i]))
                    .sum::<f64>(),
            )
        })
        .sum();
    Ok(k * total / a.len() as f64)
}

/// `np.hanning(n + 2)[1:-1]`.
fn hanning_inner(n: usize) -> Vec<f64> {
    let m = (n + 1) as f64;
    (1..=n)
        .map(|i| 0.5 - 0.5 * libm::cos(2.0 * PI * i as f64 / m))
        .collect()
}

fn frame_starts(len: usize, frame: usize, hop: usize) -> impl Iterator<Item = usize> {
    (0..len.saturating_sub(frame)).step_by(hop)
}

fn remove_silent_frames(x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let hop = STOI_FRAME / 2;
    let w = hanning_inner(STOI_FRAME);
    let window = |s: &[f64], i: usize| -> Vec<f64> {
        w.iter()
            .zip(&s[i..i + STOI_FRAME])
            .map(|(a, b)| a * b)
            .collect()
    };
    let starts: Vec<usize> = frame_starts(x.len(), STOI_FRAME, hop).collect();
    let energies: Vec<f64> = starts
        .iter()
        .map(|&i| {
            20.0 * libm::log10(libm::sqrt(window(x, i).iter().map(|v| v * v).sum::<f64>()) + EPS)
        })
        .collect();
    let peak = energies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let kept: Vec<usize> = starts
        .iter()
        .zip(&energies)
        .filter(|(_, &e)| peak - STOI_DYN_RANGE - e < 0.0)
        .map(|(&i, _)| i)
        .collect();
    if kept.is_empty() {
        return (Vec::new(), Vec::new());
    }
    let out_len = (kept.len() - 1) * hop + STOI_FRAME;
    let mut xs = vec![0.0; out_len];
    let mut ys = vec![0.0; out_len];
    for (n, &i) in kept.iter().enumerate() {
        let (fx, fy) = (window(x, i), window(y, i));
        for j in 0..STOI_FRAME {
            xs[n * hop + j] += fx[j];
            ys[n * hop + j] += fy[j];
        }
    }
    (xs, ys)
}

/// One-third-octave band matrix `[bands][bins]` as 0/1 masks.
fn third_octave_bands() -> Vec<Vec<f64>> {
    let bins = STOI_NFFT / 2 + 1;
    let f: Vec<f64> = (0..bins)
        .map(|i| i as f64 * STOI_FS as f64 / STOI_NFFT as f64)
        .collect();
    let nearest = |target: f64| -> usize {
        let mut best = 0;
        for (i, v) in f.iter().enumerate() {
            if (v - target) * (v - target) < (f[best] - target) * (f[best] - target) {
                best = i;
            }
        }
        best
    };
    (0..STOI_BANDS)
        .map(|k| {
            let k = k as f64;
            let lo = nearest(STOI_MIN_FREQ * libm::pow(2.0, (2.0 * k - 1.0) / 6.0));
            let hi = nearest(STOI_MIN_FREQ * libm::pow(2.0, (2.0 * k + 1.0) / 6.0));
            (0..bins)
                .map(|i| if i >= lo && i < hi { 1.0 } else { 0.0 })
                .collect()
        })
        .collect()
}

/// Band envelopes `[bands][frames]`.
fn band_envelopes(x: &[f64], obm: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let hop = STOI_FRAME / 2;
    let w = hanning_inner(STOI_FRAME);
    let fft = Fft::new(STOI_NFFT);
    let bins = STOI_NFFT / 2 + 1;
    let mut power_frames = Vec::new();
    for i in frame_starts(x.len(), STOI_FRAME, hop) {
        let mut re = vec![0.0; STOI_NFFT];
        let mut im = vec![0.0; STOI_NFFT];
        for j in 0..STOI_FRAME {
            re[j] = w[j] * x[i + j];
        }
        fft.forward(&mut re, &mut im);
        power_frames.push(
            (0..bins)
                .map(|k| re[k] * re[k] + im[k] * im[k])
                .collect::<Vec<f64>>(),
        );
    }
    obm.iter()
        .map(|band| {
            power_frames
                .iter()
                .map(|p| libm::sqrt(band.iter().zip(p).map(|(a, b)| a * b).sum::<f64>()))
                .collect()
        })
        .collect()
}

fn norm(v: &[f64]) -> f64 {
    libm::sqrt(v.iter().map(|x| x * x).sum::<f64>())
}

/// Short-time objective intelligibility, unclipped.
pub fn stoi(reference: &Waveform, degraded: &Waveform) -> Result<f64> {
    check_pair(reference, degraded)?;
    let n = reference.len().min(degraded.len());
    let sr = reference.sample_rate();
    let x = dsp::resample(&reference.samples()[..n], sr, STOI_FS);
    let y = dsp::resample(&degraded.samples()[..n], sr, STOI_FS);
    let (x, y) = remove_silent_frames(&x, &y);
    let obm = third_octave_bands();
    let xe = band_envelopes(&x, &obm);
    let ye = band_envelopes(&y, &obm);
    let frames = xe.first().map_or(0, Vec::len);
    if frames < STOI_SEGMENT {
        return Err(invalid_input!(
            "STOI needs {STOI_SEGMENT} non-silent frames ({} ms), got {frames}",
            STOI_SEGMENT * STOI_FRAME / 2 * 1000 / STOI_FS as usize
        ));
    }
    let clip = libm::pow(10.0, -STOI_BETA_DB / 20.0);
    let mut total = 0.0;
    let mut count = 0usize;
    for m in STOI_SEGMENT..=frames {
        for (xb, yb) in xe.iter().zip(&ye) {
            let xs = &xb[m - STOI_SEGMENT..m];
            let ys = &yb[m - STOI_SEGMENT..m];
            let c = norm(xs) / (norm(ys) + EPS);
            let yp: Vec<f64> = ys
                .iter()
                .zip(xs)
                .map(|(yv, xv)| (yv * c).min(xv * (1.0 + clip)))
                .collect();
            let ym = yp.iter().sum::<f64>() / STOI_SEGMENT as f64;
            let xm = xs.iter().sum::<f64>() / STOI_SEGMENT as f64;
            let yc: Vec<f64> = yp.iter().map(|v| v - ym).collect();
            let xc: Vec<f64> = xs.iter().map(|v| v - xm).collect();
            let (ny, nx) = (norm(&yc) + EPS, norm(&xc) + EPS);
            total += yc
                .iter()
                .zip(&xc)
                .map(|(a, b)| (a / ny) * (b / nx))
                .sum::<f64>();
            count += 1;
        }
    }
    Ok(total / count as f64)
}
