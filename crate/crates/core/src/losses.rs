//! Training objectives.
//!
//! Every loss comes in two forms: a graph builder used during training and a
//! plain function over tensors for inspection and tests. The generator
//! objective is the weighted sum
//! `β₁·L_rec + β₂·L_f + β₃·L_vq + β₄·L_adv + β₅·L_DRL`.
//!
//! The disentanglement penalty compares feature streams with a structural
//! similarity index computed per frame across channels (global statistics,
//! no sliding window) and averaged over frames.

use alloc::format;
use alloc::vec::Vec;

use serde::Serialize;

use crate::autograd::{Graph, Var};
use crate::dsp::{self, SpectrogramConfig, Waveform};
use crate::error::{invalid_config, invalid_input};
use crate::{Error, Result, Tensor};

pub const SSIM_C1: f64 = 1e-4;
pub const SSIM_C2: f64 = 9e-4;
const FM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossWeights {
    /// Reconstruction, feature matching, commitment, adversarial, disentanglement.
    pub beta: [f64; 5],
    /// Pairs (z_q, z_PC), (z_q, z_PV), (z_PV, z_PC).
    pub lambda: [f64; 3],
    pub ssim_c1: f64,
    pub ssim_c2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            beta: [45.0, 2.0, 1.0, 1.0, 1.0],
            lambda: [1.0, 1.0, 1.0],
            ssim_c1: SSIM_C1,
            ssim_c2: SSIM_C2,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !self.beta.iter().chain(&self.lambda).copied().all(ok) {
            return Err(invalid_config!(
                "loss weights must be finite and non-negative"
            ));
        }
        if !(self.ssim_c1 > 0.0
            && self.ssim_c2 > 0.0
            && self.ssim_c1.is_finite()
            && self.ssim_c2.is_finite())
        {
            return Err(invalid_config!("SSIM constants must be positive"));
        }
        Ok(())
    }
}

/// Unweighted generator loss terms.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LossComponents {
    pub l_rec: f64,
    pub l_f: f64,
    pub l_vq: f64,
    pub l_adv: f64,
    pub l_drl: f64,
}

impl LossComponents {
    pub fn as_array(&self) -> [f64; 5] {
        [self.l_rec, self.l_f, self.l_vq, self.l_adv, self.l_drl]
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LossReport {
    pub l_rec: f64,
    pub l_f: f64,
    pub l_vq: f64,
    pub l_adv: f64,
    pub l_drl: f64,
    pub l_total: f64,
    /// SSIM of each pair; `None` when a branch is disabled.
    pub l_1: Option<f64>,
    pub l_2: Option<f64>,
    pub l_3: Option<f64>,
}

/// Weighted sum of the components. Any non-finite term is an error.
pub fn total_loss(c: &LossComponents, w: &LossWeights) -> Result<LossReport> {
    let parts = c.as_array();
    let names = ["l_rec", "l_f", "l_vq", "l_adv", "l_drl"];
    for (v, n) in parts.iter().zip(names) {
        if !v.is_finite() {
            return Err(Error::Numerical(format!("{n} is {v}")));
        }
    }
    let l_total = parts.iter().zip(&w.beta).map(|(v, b)| v * b).sum();
    Ok(LossReport {
        l_rec: c.l_rec,
        l_f: c.l_f,
        l_vq: c.l_vq,
        l_adv: c.l_adv,
        l_drl: c.l_drl,
        l_total,
        ..Default::default()
    })
}

/// Graph form of [`total_loss`]. Terms with zero weight are left out.
pub fn total_loss_graph(g: &mut Graph, terms: [Var; 5], w: &LossWeights) -> Var {
    let mut acc: Option<Var> = None;
    for (v, &b) in terms.iter().zip(&w.beta) {
        if b == 0.0 {
            continue;
        }
        let t = g.scale(*v, b);
        acc = Some(match acc {
            Some(a) => g.add(a, t),
            None => t,
        });
    }
    acc.unwrap_or_else(|| g.constant(Tensor::scalar(0.0)))
}

fn ssim_frame(a: &[f64], b: &[f64], c1: f64, c2: f64) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (da, db) = (x - ma, y - mb);
        va += da * da;
        vb += db * db;
        cov += da * db;
    }
    let (va, vb, cov) = (va / n, vb / n, cov / n);
    ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
}

/// SSIM of two `[T, D]` matrices, per frame across channels, averaged over frames.
pub fn ssim(a: &Tensor, b: &Tensor, c1: f64, c2: f64) -> Result<f64> {
    if a.shape() != b.shape() || a.ndim() != 2 {
        return Err(invalid_input!(
            "ssim operands have shapes {:?} and {:?}",
            a.shape(),
            b.shape()
        ));
    }
    let (t, d) = a.dims2();
    if t == 0 || d == 0 {
        return Err(invalid_input!("ssim operands are empty"));
    }
    Ok((0..t)
        .map(|i| ssim_frame(a.row(i), b.row(i), c1, c2))
        .sum::<f64>()
        / t as f64)
}

/// Repeats a `[D]` vector over `t` frames.
pub fn broadcast_prompt(v: &[f64], t: usize) -> Tensor {
    Tensor::new(&[t, v.len()], v.repeat(t))
}

/// Graph form of [`ssim`].
pub fn ssim_graph(g: &mut Graph, a: Var, b: Var, c1: f64, c2: f64) -> Result<Var> {
    if g.shape(a) != g.shape(b) || g.shape(a).len() != 2 {
        return Err(invalid_input!(
            "ssim operands have shapes {:?} and {:?}",
            g.shape(a),
            g.shape(b)
        ));
    }
    let d = g.shape(a)[1];
    let ma = g.mean_cols(a);
    let mb = g.mean_cols(b);
    let da = {
        let m = g.broadcast_cols(ma, d);
        g.sub(a, m)
    };
    let db = {
        let m = g.broadcast_cols(mb, d);
        g.sub(b, m)
    };
    let va = {
        let sq = g.mul(da, da);
        g.mean_cols(sq)
    };
    let vb = {
        let sq = g.mul(db, db);
        g.mean_cols(sq)
    };
    let cov = {
        let p = g.mul(da, db);
        g.mean_cols(p)
    };
    let mm = g.mul(ma, mb);
    let num_l = g.scale(mm, 2.0);
    let num_l = g.add_scalar(num_l, c1);
    let num_c = g.scale(cov, 2.0);
    let num_c = g.add_scalar(num_c, c2);
    let ma2 = g.mul(ma, ma);
    let mb2 = g.mul(mb, mb);
    let den_l = g.add(ma2, mb2);
    let den_l = g.add_scalar(den_l, c1);
    let den_c = g.add(va, vb);
    let den_c = g.add_scalar(den_c, c2);
    let num = g.mul(num_l, num_c);
    let den = g.mul(den_l, den_c);
    let per_frame = g.div(num, den);
    Ok(g.mean(per_frame))
}

/// Disentanglement penalty and the per-pair SSIM values.
#[derive(Debug, Clone, Copy)]
pub struct DrlTerms {
    pub loss: Var,
    pub pairs: [Option<f64>; 3],
}

/// `λ₁·ssim(z_q, z_PC) + λ₂·ssim(z_q, z_PV) + λ₃·ssim(z_PV, z_PC)`, prompts
/// broadcast over time. Pairs involving a missing prompt are dropped.
pub fn drl_loss_graph(
    g: &mut Graph,
    z_q: Var,
    z_pc: Option<Var>,
    z_pv: Option<Var>,
    w: &LossWeights,
) -> Result<DrlTerms> {
    let t = g.shape(z_q)[0];
    let pc = z_pc.map(|p| g.broadcast_rows(p, t));
    let pv = z_pv.map(|p| g.broadcast_rows(p, t));
    let pairs = [(Some(z_q), pc), (Some(z_q), pv), (pv, pc)];
    let mut values = [None; 3];
    let mut acc: Option<Var> = None;
    for (i, (a, b)) in pairs.into_iter().enumerate() {
        let (Some(a), Some(b)) = (a, b) else { continue };
        let s = ssim_graph(g, a, b, w.ssim_c1, w.ssim_c2)?;
        values[i] = Some(g.value(s).item());
        let term = g.scale(s, w.lambda[i]);
        acc = Some(match acc {
            Some(x) => g.add(x, term),
            None => term,
        });
    }
    let loss = acc.unwrap_or_else(|| g.constant(Tensor::scalar(0.0)));
    Ok(DrlTerms {
        loss,
        pairs: values,
    })
}

/// Plain form of [`drl_loss_graph`]; returns the loss and the pair values.
pub fn drl_loss(
    z_q: &Tensor,
    z_pc: Option<&[f64]>,
    z_pv: Option<&[f64]>,
    w: &LossWeights,
) -> Result<(f64, [Option<f64>; 3])> {
    let t = z_q.dims2().0;
    let pc = z_pc.map(|p| broadcast_prompt(p, t));
    let pv = z_pv.map(|p| broadcast_prompt(p, t));
    let pairs = [
        (Some(z_q), pc.as_ref()),
        (Some(z_q), pv.as_ref()),
        (pv.as_ref(), pc.as_ref()),
    ];
    let mut values = [None; 3];
    let mut total = 0.0;
    for (i, (a, b)) in pairs.into_iter().enumerate() {
        let (Some(a), Some(b)) = (a, b) else { continue };
        let s = ssim(a, b, w.ssim_c1, w.ssim_c2)?;
        values[i] = Some(s);
        total += w.lambda[i] * s;
    }
    Ok((total, values))
}

/// Windows of the default multi-resolution reconstruction loss.
pub const MEL_WINDOWS: [usize; 6] = [64, 128, 256, 512, 1024, 2048];

/// Multi-resolution log-Mel configs: windows 64, 128, ..., 2048, hop a
/// quarter window, `min(80, win/8)` bands.
pub fn multi_scale_mel_configs(sample_rate: u32) -> Vec<SpectrogramConfig> {
    mel_configs_for_windows(sample_rate, &MEL_WINDOWS)
}

/// One log-Mel config per window, hop a quarter window, `min(80, win/8)` bands.
pub fn mel_configs_for_windows(sample_rate: u32, windows: &[usize]) -> Vec<SpectrogramConfig> {
    windows
        .iter()
        .map(|&win| SpectrogramConfig {
            n_fft: win,
            hop: (win / 4).max(1),
            win,
            n_mels: (win / 8).clamp(1, 80),
            fmin: 0.0,
            fmax: sample_rate as f64 / 2.0,
            log_floor: 1e-5,
        })
        .collect()
}

/// Log-Mel `[frames, n_mels]` of a rank-1 signal, built in the graph.
/// `fb` is the `[n_mels, bins]` filterbank for `cfg`.
pub fn log_mel_graph(g: &mut Graph, x: Var, cfg: &SpectrogramConfig, fb: &Tensor) -> Var {
    let spec = g.stft(x, cfg.n_fft, cfg.hop, cfg.win);
    let power = g.complex_power(spec);
    let fbt = g.constant(fb.transposed());
    let mel = g.matmul(power, fbt);
    g.log_clamp(mel, cfg.log_floor)
}

/// Precomputed pieces of the reconstruction loss.
#[derive(Debug, Clone)]
pub struct ReconstructionLoss {
    pub sample_rate: u32,
    scales: Vec<(SpectrogramConfig, Tensor)>,
}

impl ReconstructionLoss {
    pub fn new(sample_rate: u32, cfgs: &[SpectrogramConfig]) -> Result<Self> {
        let mut scales = Vec::with_capacity(cfgs.len());
        for c in cfgs {
            c.validate(sample_rate)?;
            scales.push((*c, dsp::mel_filterbank(sample_rate, c)));
        }
        Ok(Self {
            sample_rate,
            scales,
        })
    }

    pub fn configs(&self) -> impl Iterator<Item = &SpectrogramConfig> {
        self.scales.iter().map(|(c, _)| c)
    }

    /// `mean|x − x̂| + Σ_s mean|logmel_s(x) − logmel_s(x̂)|`. `target` is data.
    pub fn graph(&self, g: &mut Graph, target: &[f64], x_hat: Var) -> Result<Var> {
        let n = g.value(x_hat).numel();
        if n != target.len() {
            return Err(invalid_input!(
                "reconstruction of {n} samples against target of {}",
                target.len()
            ));
        }
        let tv = g.constant(Tensor::vector(target.to_vec()));
        let diff = g.sub(x_hat, tv);
        let diff = g.abs(diff);
        let mut loss = g.mean(diff);
        for (cfg, fb) in &self.scales {
            let want = dsp::mel_power(target, self.sample_rate, cfg)
                .map(|p| libm::log(p.max(cfg.log_floor)));
            let want = g.constant(want);
            let got = log_mel_graph(g, x_hat, cfg, fb);
            let d = g.sub(got, want);
            let d = g.abs(d);
            let m = g.mean(d);
            loss = g.add(loss, m);
        }
        Ok(loss)
    }
}

/// Plain form of the reconstruction loss.
pub fn reconstruction_loss(
    x: &Waveform,
    x_hat: &Waveform,
    cfgs: &[SpectrogramConfig],
) -> Result<f64> {
    if x.len() != x_hat.len() {
        return Err(invalid_input!(
            "length mismatch: {} vs {}",
            x.len(),
            x_hat.len()
        ));
    }
    if x.sample_rate() != x_hat.sample_rate() {
        return Err(invalid_input!("sample rate mismatch"));
    }
    let rl = ReconstructionLoss::new(x.sample_rate(), cfgs)?;
    let mut g = Graph::inference();
    let xh = g.constant(Tensor::vector(x_hat.samples().to_vec()));
    let l = rl.graph(&mut g, x.samples(), xh)?;
    Ok(g.value(l).item())
}

fn check_feature_lists<T>(
    real: &[Vec<T>],
    fake: &[Vec<T>],
    shape: impl Fn(&T) -> Vec<usize>,
) -> Result<()> {
    if real.len() != fake.len() || real.is_empty() {
        return Err(invalid_input!(
            "feature lists have {} and {} discriminators",
            real.len(),
            fake.len()
        ));
    }
    for (r, f) in real.iter().zip(fake) {
        if r.len() != f.len() || r.is_empty() {
            return Err(invalid_input!(
                "feature lists have {} and {} layers",
                r.len(),
                f.len()
            ));
        }
        for (a, b) in r.iter().zip(f) {
            if shape(a) != shape(b) {
                return Err(invalid_input!(
                    "feature shapes {:?} and {:?} differ",
                    shape(a),
                    shape(b)
                ));
            }
        }
    }
    Ok(())
}

/// Mean over discriminators and layers of `mean|r − f| / mean|r|`.
pub fn feature_matching_loss(real: &[Vec<Tensor>], fake: &[Vec<Tensor>]) -> Result<f64> {
    check_feature_lists(real, fake, |t| t.shape().to_vec())?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (r, f) in real.iter().zip(fake) {
        for (a, b) in r.iter().zip(f) {
            let n = a.numel() as f64;
            let l1 = a
                .data()
                .iter()
                .zip(b.data())
                .map(|(x, y)| (x - y).abs())
                .sum::<f64>()
                / n;
            let scale = (a.data().iter().map(|x| x.abs()).sum::<f64>() / n).max(FM_EPS);
            sum += l1 / scale;
            count += 1;
        }
    }
    Ok(sum / count as f64)
}

/// Graph form of [`feature_matching_loss`]; real features act as data.
pub fn feature_matching_graph(g: &mut Graph, real: &[Vec<Var>], fake: &[Vec<Var>]) -> Result<Var> {
    check_feature_lists(real, fake, |v| g.shape(*v).to_vec())?;
    let mut acc: Option<Var> = None;
    let mut count = 0usize;
    for (r, f) in real.iter().zip(fake) {
        for (&a, &b) in r.iter().zip(f) {
            let rv = g.value(a).clone();
            let n = rv.numel() as f64;
            let scale = (rv.data().iter().map(|x| x.abs()).sum::<f64>() / n).max(FM_EPS);
            let rc = g.constant(rv);
            let d = g.sub(b, rc);
            let d = g.abs(d);
            let m = g.mean(d);
            let term = g.scale(m, 1.0 / scale);
            acc = Some(match acc {
                Some(x) => g.add(x, term),
                None => term,
            });
            count += 1;
        }
    }
    let total = acc.expect("checked non-empty");
    Ok(g.scale(total, 1.0 / count as f64))
}

fn mean_sq_offset(t: &Tensor, target: f64) -> f64 {
    t.data()
        .iter()
        .map(|x| (x - target) * (x - target))
        .sum::<f64>()
        / t.numel() as f64
}

/// Least-squares GAN losses `(generator, discriminator)`:
/// `gen = Σ mean((f − 1)²)`, `disc = Σ mean((r − 1)²) + mean(f²)`.
pub fn adversarial_losses(real: &[Tensor], fake: &[Tensor]) -> Result<(f64, f64)> {
    if real.is_empty() || real.len() != fake.len() {
        return Err(invalid_input!(
            "logit lists have {} and {} entries",
            real.len(),
            fake.len()
        ));
    }
    let gen = fake.iter().map(|f| mean_sq_offset(f, 1.0)).sum();
    let disc = real
        .iter()
        .zip(fake)
        .map(|(r, f)| mean_sq_offset(r, 1.0) + mean_sq_offset(f, 0.0))
        .sum();
    Ok((gen, disc))
}

fn sum_vars(g: &mut Graph, terms: Vec<Var>) -> Var {
    let mut it = terms.into_iter();
    let first = it.next().expect("non-empty");
    it.fold(first, |acc, t| g.add(acc, t))
}

/// Generator side: `Σ mean((f − 1)²)`.
pub fn generator_adversarial_graph(g: &mut Graph, fake: &[Var]) -> Result<Var> {
    if fake.is_empty() {
        return Err(invalid_input!("no discriminator outputs"));
    }
    let terms = fake
        .iter()
        .map(|&f| {
            let d = g.add_scalar(f, -1.0);
            let s = g.square(d);
            g.mean(s)
        })
        .collect();
    Ok(sum_vars(g, terms))
}

/// Discriminator side: `Σ mean((r − 1)²) + mean(f²)`.
pub fn discriminator_adversarial_graph(g: &mut Graph, real: &[Var], fake: &[Var]) -> Result<Var> {
    if real.is_empty() || real.len() != fake.len() {
        return Err(invalid_input!(
            "logit lists have {} and {} entries",
            real.len(),
            fake.len()
        ));
    }
    let terms = real
        .iter()
        .zip(fake)
        .map(|(&r, &f)| {
            let d = g.add_scalar(r, -1.0);
            let s = g.square(d);
            let a = g.mean(s);
            let s = g.square(f);
            let b = g.mean(s);
            g.add(a, b)
        })
        .collect();
    Ok(sum_vars(g, terms))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn total_loss_arithmetic() {
        let c = LossComponents {
            l_rec: 1.0,
            l_f: 1.0,
            l_vq: 1.0,
            l_adv: 1.0,
            l_drl: 1.0,
        };
        let w = LossWeights {
            beta: [1.0, 2.0, 3.0, 4.0, 5.0],
            ..Default::default()
        };
        assert_eq!(total_loss(&c, &w).unwrap().l_total, 15.0);
        let w = LossWeights {
            beta: [0.0; 5],
            ..Default::default()
        };
        assert_eq!(total_loss(&c, &w).unwrap().l_total, 0.0);
        let c2 = LossComponents {
            l_rec: 2.5,
            l_f: 7.0,
            l_vq: 1.0,
            l_adv: 1.0,
            l_drl: -0.3,
        };
        let w = LossWeights {
            beta: [1.0, 0.0, 0.0, 0.0, 0.0],
            ..Default::default()
        };
        assert_eq!(total_loss(&c2, &w).unwrap().l_total, 2.5);
        let bad = LossComponents { l_f: f64::NAN, ..c };
        assert!(matches!(
            total_loss(&bad, &LossWeights::default()),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn total_loss_graph_matches_plain() {
        let c = LossComponents {
            l_rec: 0.3,
            l_f: 1.7,
            l_vq: 0.05,
            l_adv: 2.0,
            l_drl: -0.4,
        };
        let w = LossWeights::default();
        let mut g = Graph::new();
        let terms = c.as_array().map(|v| g.constant(Tensor::scalar(v)));
        let t = total_loss_graph(&mut g, terms, &w);
        assert!((g.value(t).item() - total_loss(&c, &w).unwrap().l_total).abs() < 1e-12);
    }

    #[test]
    fn weights_validation() {
        assert!(LossWeights::default().validate().is_ok());
        assert!(LossWeights {
            beta: [-1.0, 0.0, 0.0, 0.0, 0.0],
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(LossWeights {
            ssim_c2: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn ssim_degenerate_and_negated() {
        let z = Tensor::zeros(&[2, 4]);
        assert_eq!(ssim(&z, &z, SSIM_C1, SSIM_C2).unwrap(), 1.0);
        let a = Tensor::new(&[1, 4], vec![1.0, -2.0, 3.0, -2.0]);
        let b = a.map(|v| -v);
        // Zero mean, so the luminance factor is 1 and the rest is (c2 − 2σ²)/(2σ² + c2).
        let var = (1.0 + 4.0 + 9.0 + 4.0) / 4.0;
        let want = (-2.0 * var + SSIM_C2) / (2.0 * var + SSIM_C2);
        assert!((ssim(&a, &b, SSIM_C1, SSIM_C2).unwrap() - want).abs() < 1e-15);
        assert!(ssim(&a, &Tensor::zeros(&[1, 3]), SSIM_C1, SSIM_C2).is_err());
    }

    #[test]
    fn ssim_penalises_scale() {
        let a = Tensor::new(&[2, 3], vec![0.1, 0.5, -0.3, 1.0, 2.0, 0.0]);
        assert!(ssim(&a, &a.map(|v| 2.0 * v), SSIM_C1, SSIM_C2).unwrap() < 1.0);
    }

    #[test]
    fn drl_reductions() {
        let v = vec![0.3, -0.2, 0.9];
        let zq = broadcast_prompt(&v, 4);
        let w = LossWeights {
            lambda: [0.5, 2.0, 3.0],
            ..Default::default()
        };
        let (l, pairs) = drl_loss(&zq, Some(&v), Some(&v), &w).unwrap();
        assert!((l - 5.5).abs() < 1e-12);
        assert!(pairs.iter().all(|p| *p == Some(1.0)));

        let pc = vec![1.0, 0.0, -1.0];
        let pv = vec![0.2, 0.4, 0.1];
        let zq = Tensor::new(&[2, 3], vec![0.1, 0.2, 0.3, -0.5, 0.0, 0.5]);
        let w = LossWeights {
            lambda: [1.0, 0.0, 0.0],
            ..Default::default()
        };
        let (l, _) = drl_loss(&zq, Some(&pc), Some(&pv), &w).unwrap();
        assert_eq!(
            l,
            ssim(&zq, &broadcast_prompt(&pc, 2), SSIM_C1, SSIM_C2).unwrap()
        );

        let (l, pairs) = drl_loss(&zq, None, None, &LossWeights::default()).unwrap();
        assert_eq!(l, 0.0);
        assert_eq!(pairs, [None; 3]);
        let (_, pairs) = drl_loss(&zq, Some(&pc), None, &LossWeights::default()).unwrap();
        assert!(pairs[0].is_some() && pairs[1].is_none() && pairs[2].is_none());
    }

    #[test]
    fn drl_graph_matches_plain() {
        let pc = vec![1.0, 0.0, -1.0];
        let pv = vec![0.2, 0.4, 0.1];
        let zq = Tensor::new(&[2, 3], vec![0.1, 0.2, 0.3, -0.5, 0.0, 0.5]);
        let w = LossWeights {
            lambda: [0.3, 0.7, 1.1],
            ..Default::default()
        };
        let (want, want_pairs) = drl_loss(&zq, Some(&pc), Some(&pv), &w).unwrap();
        let mut g = Graph::new();
        let z = g.constant(zq);
        let a = g.constant(Tensor::vector(pc));
        let b = g.constant(Tensor::vector(pv));
        let terms = drl_loss_graph(&mut g, z, Some(a), Some(b), &w).unwrap();
        assert!((g.value(terms.loss).item() - want).abs() < 1e-14);
        for (x, y) in terms.pairs.iter().zip(&want_pairs) {
            assert!((x.unwrap() - y.unwrap()).abs() < 1e-14);
        }
    }

    #[test]
    fn multi_scale_schedule() {
        let cfgs = multi_scale_mel_configs(24_000);
        let wins: Vec<usize> = cfgs.iter().map(|c| c.win).collect();
        assert_eq!(wins, vec![64, 128, 256, 512, 1024, 2048]);
        assert!(cfgs.iter().all(|c| c.hop * 4 == c.win && c.n_fft == c.win));
        let mels: Vec<usize> = cfgs.iter().map(|c| c.n_mels).collect();
        assert_eq!(mels, vec![8, 16, 32, 64, 80, 80]);
    }

    #[test]
    fn reconstruction_identity_and_length() {
        let x = Waveform::new(
            (0..800).map(|i| libm::sin(i as f64 * 0.05)).collect(),
            16_000,
        )
        .unwrap();
        let cfgs = multi_scale_mel_configs(16_000);
        assert_eq!(reconstruction_loss(&x, &x, &cfgs).unwrap(), 0.0);
        let short = Waveform::new(vec![0.0; 799], 16_000).unwrap();
        assert!(matches!(
            reconstruction_loss(&x, &short, &cfgs),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn feature_matching_cases() {
        let r = vec![vec![Tensor::vector(vec![2.0])]];
        let f = vec![vec![Tensor::vector(vec![0.0])]];
        assert_eq!(feature_matching_loss(&r, &f).unwrap(), 1.0);
        assert_eq!(feature_matching_loss(&r, &r).unwrap(), 0.0);
        let bad = vec![vec![Tensor::vector(vec![0.0, 1.0])]];
        assert!(feature_matching_loss(&r, &bad).is_err());
        assert!(feature_matching_loss(&[], &[]).is_err());
    }

    #[test]
    fn adversarial_cases() {
        let ones = vec![Tensor::full(&[3], 1.0), Tensor::full(&[2, 2], 1.0)];
        let zeros = vec![Tensor::zeros(&[3]), Tensor::zeros(&[2, 2])];
        assert_eq!(adversarial_losses(&ones, &zeros).unwrap(), (2.0, 0.0));
        assert_eq!(adversarial_losses(&ones, &ones).unwrap().0, 0.0);
        assert!(adversarial_losses(&[], &[]).is_err());
    }

    #[test]
    fn adversarial_graph_matches_plain() {
        let real = vec![
            Tensor::vector(vec![0.3, 1.2]),
            Tensor::new(&[2, 2], vec![0.5, -0.5, 2.0, 0.0]),
        ];
        let fake = vec![
            Tensor::vector(vec![-0.1, 0.8]),
            Tensor::new(&[2, 2], vec![1.5, 0.25, 0.0, 1.0]),
        ];
        let (gen, disc) = adversarial_losses(&real, &fake).unwrap();
        let mut g = Graph::new();
        let r: Vec<Var> = real.iter().map(|t| g.constant(t.clone())).collect();
        let f: Vec<Var> = fake.iter().map(|t| g.constant(t.clone())).collect();
        let gv = generator_adversarial_graph(&mut g, &f).unwrap();
        let dv = discriminator_adversarial_graph(&mut g, &r, &f).unwrap();
        assert!((g.value(gv).item() - gen).abs() < 1e-14);
        assert!((g.value(dv).item() - disc).abs() < 1e-14);
        let fm =
            feature_matching_graph(&mut g, core::slice::from_ref(&r), core::slice::from_ref(&f))
                .unwrap();
        let want = feature_matching_loss(&[real], &[fake]).unwrap();
        assert!((g.value(fm).item() - want).abs() < 1e-14);
    }
}
