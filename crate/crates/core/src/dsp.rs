//! Signal-processing front end: framing, STFT, log-Mel spectrogram, FBank
//! features and band-limited resampling.
//!
//! STFT frames are centered with reflect padding (`frames = 1 + len / hop`)
//! and use a periodic Hann window of length `win`, zero-padded to `n_fft`.
//! The Mel filterbank is triangular on the Slaney scale with Slaney area
//! normalization; log is natural with a configurable floor.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{invalid_config, invalid_input};
use crate::{Result, Tensor};

/// Mono PCM signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(invalid_input!("sample rate must be positive"));
        }
        if samples.is_empty() {
            return Err(invalid_input!("empty waveform"));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(invalid_input!("non-finite sample at index {i}"));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrogramConfig {
    pub n_fft: usize,
    pub hop: usize,
    pub win: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub log_floor: f64,
}

impl SpectrogramConfig {
    /// 1024-point FFT, hop 256, 80 bands over the full band.
    pub fn analysis(sample_rate: u32) -> Self {
        Self {
            n_fft: 1024,
            hop: 256,
            win: 1024,
            n_mels: 80,
            fmin: 0.0,
            fmax: sample_rate as f64 / 2.0,
            log_floor: 1e-5,
        }
    }

    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        if self.n_fft == 0 || self.hop == 0 || self.win == 0 || self.n_mels == 0 {
            return Err(invalid_config!(
                "n_fft, hop, win and n_mels must be positive"
            ));
        }
        if !(self.hop <= self.win && self.win <= self.n_fft) {
            return Err(invalid_config!(
                "need hop <= win <= n_fft, got hop={} win={} n_fft={}",
                self.hop,
                self.win,
                self.n_fft
            ));
        }
        let nyquist = sample_rate as f64 / 2.0;
        if !(self.fmin >= 0.0 && self.fmin < self.fmax && self.fmax <= nyquist) {
            return Err(invalid_config!(
                "need 0 <= fmin < fmax <= {nyquist}, got fmin={} fmax={}",
                self.fmin,
                self.fmax
            ));
        }
        if !(self.log_floor > 0.0 && self.log_floor.is_finite()) {
            return Err(invalid_config!("log_floor must be positive"));
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }
}

/// Time-major feature matrix `[frames × bins]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub values: Tensor,
    pub frame_rate: f64,
}

impl FeatureMatrix {
    pub fn frames(&self) -> usize {
        self.values.dims2().0
    }

    pub fn bins(&self) -> usize {
        self.values.dims2().1
    }
}

/// Complex STFT, `[frames × bins]` real and imaginary planes.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub frames: usize,
    pub bins: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl Spectrum {
    pub fn magnitude(&self, frame: usize, bin: usize) -> f64 {
        let i = frame * self.bins + bin;
        libm::hypot(self.re[i], self.im[i])
    }

    pub fn power(&self) -> Vec<f64> {
        self.re
            .iter()
            .zip(&self.im)
            .map(|(r, i)| r * r + i * i)
            .collect()
    }
}

/// In-place complex DFT. Radix-2 for powers of two, direct evaluation otherwise.
#[derive(Debug, Clone)]
pub struct Fft {
    n: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
    rev: Vec<usize>,
}

impl Fft {
    pub fn new(n: usize) -> Self {
        assert!(n > 0);
        let cos = (0..n)
            .map(|k| libm::cos(2.0 * PI * k as f64 / n as f64))
            .collect();
        let sin = (0..n)
            .map(|k| libm::sin(2.0 * PI * k as f64 / n as f64))
            .collect();
        let rev = if n.is_power_of_two() {
            let bits = n.trailing_zeros();
            (0..n)
                .map(|i| {
                    if bits == 0 {
                        0
                    } else {
                        i.reverse_bits() >> (usize::BITS - bits)
                    }
                })
                .collect()
        } else {
            Vec::new()
        };
        Self { n, cos, sin, rev }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// `X[k] = sum_n x[n] exp(-2πi kn/N)`.
    pub fn forward(&self, re: &mut [f64], im: &mut [f64]) {
        assert_eq!(re.len(), self.n);
        assert_eq!(im.len(), self.n);
        if self.n.is_power_of_two() {
            self.radix2(re, im);
        } else {
            self.direct(re, im);
        }
    }

    fn direct(&self, re: &mut [f64], im: &mut [f64]) {
        let n = self.n;
        let mut out_re = vec![0.0; n];
        let mut out_im = vec![0.0; n];
        for k in 0..n {
            let (mut sr, mut si) = (0.0, 0.0);
            for t in 0..n {
                let idx = (k * t) % n;
                let (c, s) = (self.cos[idx], self.sin[idx]);
                sr += re[t] * c + im[t] * s;
                si += im[t] * c - re[t] * s;
            }
            out_re[k] = sr;
            out_im[k] = si;
        }
        re.copy_from_slice(&out_re);
        im.copy_from_slice(&out_im);
    }

    fn radix2(&self, re: &mut [f64], im: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let j = self.rev[i];
            if j > i {
                re.swap(i, j);
                im.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= n {
            let step = n / len;
            for start in (0..n).step_by(len) {
                for k in 0..len / 2 {
                    let (c, s) = (self.cos[k * step], -self.sin[k * step]);
                    let (a, b) = (start + k, start + k + len / 2);
                    let tr = re[b] * c - im[b] * s;
                    let ti = re[b] * s + im[b] * c;
                    re[b] = re[a] - tr;
                    im[b] = im[a] - ti;
                    re[a] += tr;
                    im[a] += ti;
                }
            }
            len <<= 1;
        }
    }
}

/// Periodic Hann window.
pub fn hann_periodic(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * libm::cos(2.0 * PI * i as f64 / n as f64))
        .collect()
}

/// Maps any integer position onto `[0, len)` by repeated mirror reflection
/// about the edge samples (edge samples are not repeated).
pub fn reflect_index(idx: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let m = idx.rem_euclid(period);
    if m >= len as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

/// Number of centered frames for a signal of `len` samples.
pub fn frame_count(len: usize, hop: usize) -> usize {
    1 + len / hop
}

fn analysis_window(n_fft: usize, win: usize) -> Vec<f64> {
    let mut w = vec![0.0; n_fft];
    let off = (n_fft - win) / 2;
    w[off..off + win].copy_from_slice(&hann_periodic(win));
    w
}

/// Raw centered STFT of `x`; panics on an empty signal.
pub fn stft_complex(x: &[f64], n_fft: usize, hop: usize, win: usize) -> Spectrum {
    assert!(!x.is_empty(), "stft of empty signal");
    assert!(win <= n_fft && hop > 0);
    let frames = frame_count(x.len(), hop);
    let bins = n_fft / 2 + 1;
    let window = analysis_window(n_fft, win);
    let fft = Fft::new(n_fft);
    let mut re = vec![0.0; frames * bins];
    let mut im = vec![0.0; frames * bins];
    let mut buf_re = vec![0.0; n_fft];
    let mut buf_im = vec![0.0; n_fft];
    let half = (n_fft / 2) as isize;
    for f in 0..frames {
        let start = (f * hop) as isize - half;
        for n in 0..n_fft {
            buf_re[n] = window[n] * x[reflect_index(start + n as isize, x.len())];
        }
        buf_im.fill(0.0);
        fft.forward(&mut buf_re, &mut buf_im);
        re[f * bins..(f + 1) * bins].copy_from_slice(&buf_re[..bins]);
        im[f * bins..(f + 1) * bins].copy_from_slice(&buf_im[..bins]);
    }
    Spectrum {
        frames,
        bins,
        re,
        im,
    }
}

/// Vector-Jacobian product of [`stft_complex`] with respect to the signal.
pub fn stft_complex_backward(
    len: usize,
    n_fft: usize,
    hop: usize,
    win: usize,
    g_re: &[f64],
    g_im: &[f64],
) -> Vec<f64> {
    let frames = frame_count(len, hop);
    let bins = n_fft / 2 + 1;
    let window = analysis_window(n_fft, win);
    let fft = Fft::new(n_fft);
    let mut gx = vec![0.0; len];
    let mut buf_re = vec![0.0; n_fft];
    let mut buf_im = vec![0.0; n_fft];
    let half = (n_fft / 2) as isize;
    for f in 0..frames {
        buf_re.fill(0.0);
        buf_im.fill(0.0);
        // dL/dx[n] = Re(sum_k G[k] e^{+iθ}) = Re(FFT(conj G))[n]
        buf_re[..bins].copy_from_slice(&g_re[f * bins..(f + 1) * bins]);
        for (dst, src) in buf_im[..bins]
            .iter_mut()
            .zip(&g_im[f * bins..(f + 1) * bins])
        {
            *dst = -src;
        }
        fft.forward(&mut buf_re, &mut buf_im);
        let start = (f * hop) as isize - half;
        for n in 0..n_fft {
            if window[n] != 0.0 {
                gx[reflect_index(start + n as isize, len)] += window[n] * buf_re[n];
            }
        }
    }
    gx
}

/// Complex STFT of a waveform.
pub fn stft(w: &Waveform, cfg: &SpectrogramConfig) -> Result<Spectrum> {
    cfg.validate(w.sample_rate())?;
    if w.is_empty() {
        return Err(invalid_input!("empty waveform"));
    }
    Ok(stft_complex(w.samples(), cfg.n_fft, cfg.hop, cfg.win))
}

pub fn hz_to_mel(hz: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_HZ: f64 = 1000.0;
    let min_log_mel = MIN_LOG_HZ / F_SP;
    let logstep = libm::log(6.4) / 27.0;
    if hz >= MIN_LOG_HZ {
        min_log_mel + libm::log(hz / MIN_LOG_HZ) / logstep
    } else {
        hz / F_SP
    }
}

pub fn mel_to_hz(mel: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_HZ: f64 = 1000.0;
    let min_log_mel = MIN_LOG_HZ / F_SP;
    let logstep = libm::log(6.4) / 27.0;
    if mel >= min_log_mel {
        MIN_LOG_HZ * libm::exp(logstep * (mel - min_log_mel))
    } else {
        F_SP * mel
    }
}

/// Slaney-normalized triangular filterbank, `[n_mels × bins]`.
pub fn mel_filterbank(sample_rate: u32, cfg: &SpectrogramConfig) -> Tensor {
    let bins = cfg.bins();
    let sr = sample_rate as f64;
    let fft_freqs: Vec<f64> = (0..bins)
        .map(|k| k as f64 * sr / cfg.n_fft as f64)
        .collect();
    let (mlo, mhi) = (hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax));
    let hz: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(mlo + (mhi - mlo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let mut fb = vec![0.0; cfg.n_mels * bins];
    for m in 0..cfg.n_mels {
        let (lo, c, hi) = (hz[m], hz[m + 1], hz[m + 2]);
        let enorm = 2.0 / (hi - lo);
        for (k, &f) in fft_freqs.iter().enumerate() {
            let rise = (f - lo) / (c - lo);
            let fall = (hi - f) / (hi - c);
            fb[m * bins + k] = rise.min(fall).max(0.0) * enorm;
        }
    }
    Tensor::new(&[cfg.n_mels, bins], fb)
}

/// Mel-band power `[frames × n_mels]` before the log.
pub fn mel_power(samples: &[f64], sample_rate: u32, cfg: &SpectrogramConfig) -> Tensor {
    let spec = stft_complex(samples, cfg.n_fft, cfg.hop, cfg.win);
    let power = spec.power();
    let fb = mel_filterbank(sample_rate, cfg);
    let bins = cfg.bins();
    let mut out = vec![0.0; spec.frames * cfg.n_mels];
    for f in 0..spec.frames {
        let prow = &power[f * bins..(f + 1) * bins];
        for m in 0..cfg.n_mels {
            let frow = &fb.data()[m * bins..(m + 1) * bins];
            out[f * cfg.n_mels + m] = prow.iter().zip(frow).map(|(p, w)| p * w).sum();
        }
    }
    Tensor::new(&[spec.frames, cfg.n_mels], out)
}

/// `ln(max(mel_power, log_floor))`, `[frames × n_mels]`.
pub fn mel_spectrogram(w: &Waveform, cfg: &SpectrogramConfig) -> Result<FeatureMatrix> {
    cfg.validate(w.sample_rate())?;
    let floor = cfg.log_floor;
    let values = mel_power(w.samples(), w.sample_rate(), cfg).map(|p| libm::log(p.max(floor)));
    Ok(FeatureMatrix {
        values,
        frame_rate: w.sample_rate() as f64 / cfg.hop as f64,
    })
}

pub const PRE_EMPHASIS: f64 = 0.97;

/// `y[n] = x[n] - 0.97 x[n-1]`, `y[0] = x[0]`.
pub fn pre_emphasis(x: &[f64]) -> Vec<f64> {
    let mut y = Vec::with_capacity(x.len());
    let mut prev = 0.0;
    for &v in x {
        y.push(v - PRE_EMPHASIS * prev);
        prev = v;
    }
    y
}

/// Log-Mel of the pre-emphasized signal with per-band temporal mean removed.
pub fn fbank(w: &Waveform, cfg: &SpectrogramConfig) -> Result<FeatureMatrix> {
    cfg.validate(w.sample_rate())?;
    let emphasized = pre_emphasis(w.samples());
    let floor = cfg.log_floor;
    let mut values = mel_power(&emphasized, w.sample_rate(), cfg).map(|p| libm::log(p.max(floor)));
    let (frames, bands) = values.dims2();
    let data = values.data_mut();
    for b in 0..bands {
        let mean = (0..frames).map(|f| data[f * bands + b]).sum::<f64>() / frames as f64;
        for f in 0..frames {
            data[f * bands + b] -= mean;
        }
    }
    Ok(FeatureMatrix {
        values,
        frame_rate: w.sample_rate() as f64 / cfg.hop as f64,
    })
}

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..64 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Rational-ratio polyphase resampler. The anti-aliasing filter is a
/// Kaiser-windowed sinc (beta 5, ten zero crossings per side) with cutoff at
/// the Nyquist frequency of the lower of the two rates. Output length is
/// `ceil(len * to / from)`.
pub fn resample(x: &[f64], from: u32, to: u32) -> Vec<f64> {
    if from == to || x.is_empty() {
        return x.to_vec();
    }
    let g = gcd(from as u64, to as u64);
    let up = (to as u64 / g) as usize;
    let down = (from as u64 / g) as usize;
    let max_rate = up.max(down);
    let cutoff = 1.0 / max_rate as f64;
    let half_len = 10 * max_rate;
    let taps = 2 * half_len + 1;
    let beta = 5.0;
    let i0b = bessel_i0(beta);
    let mut h: Vec<f64> = (0..taps)
        .map(|n| {
            let t = n as f64 - half_len as f64;
            let sinc = if t == 0.0 {
                1.0
            } else {
                libm::sin(PI * cutoff * t) / (PI * cutoff * t)
            };
            let r = 2.0 * n as f64 / (taps - 1) as f64 - 1.0;
            let win = bessel_i0(beta * libm::sqrt((1.0 - r * r).max(0.0))) / i0b;
            cutoff * sinc * win
        })
        .collect();
    let sum: f64 = h.iter().sum();
    for v in &mut h {
        *v *= up as f64 / sum;
    }
    let out_len = (x.len() * up).div_ceil(down);
    let mut y = vec![0.0; out_len];
    for (m, out) in y.iter_mut().enumerate() {
        // y[m] = sum_k x[k] h[half_len + m*down - k*up]
        let center = (m * down + half_len) as isize;
        let k_min = ((center - (taps as isize - 1)).max(0) as usize).div_ceil(up);
        let k_max = ((center / up as isize) as usize).min(x.len() - 1);
        let mut acc = 0.0;
        let mut k = k_min;
        while k <= k_max {
            acc += x[k] * h[(center - (k * up) as isize) as usize];
            k += 1;
        }
        *out = acc;
    }
    y
}
