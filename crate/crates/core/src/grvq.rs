//! Group-residual vector quantization.
//!
//! The `D` latent channels are split into `G` contiguous groups. Each group is
//! quantized by a chain of `R` codebooks, stage `r` coding the residual left
//! by stages `< r`, and the group's reconstruction is the sum of the selected
//! entries. Codebooks are ordered group-major, residual-minor, which is also
//! the column order of [`CodeIndices`].
//!
//! Codebooks are learned by exponential moving averages of assigned vectors
//! rather than by gradient; codes whose running count drops below
//! `dead_code_threshold` are re-seeded from the current batch.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::autograd::{Graph, Var};
use crate::codec::LatentSequence;
use crate::error::{corrupt, invalid_config, invalid_input};
use crate::nn::{self, ModelRng};
use crate::{Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrvqConfig {
    pub groups: usize,
    pub residual_layers: usize,
    pub codebook_size: usize,
    pub ema_decay: f64,
    pub commitment_weight: f64,
    pub dead_code_threshold: f64,
}

impl Default for GrvqConfig {
    fn default() -> Self {
        Self::for_codebooks(4)
    }
}

impl GrvqConfig {
    /// Group/residual split for a total codebook count: 1 → (1,1), 2 → (2,1),
    /// 4 → (2,2); other even counts use two groups, odd counts one group.
    pub fn for_codebooks(n_q: usize) -> Self {
        let (groups, residual_layers) = match n_q {
            1 => (1, 1),
            2 => (2, 1),
            n if n % 2 == 0 => (2, n / 2),
            n => (1, n),
        };
        Self {
            groups,
            residual_layers,
            codebook_size: 1024,
            ema_decay: 0.99,
            commitment_weight: 0.25,
            dead_code_threshold: 0.5,
        }
    }

    pub fn n_q(&self) -> usize {
        self.groups * self.residual_layers
    }

    pub fn code_dim(&self, latent_dim: usize) -> usize {
        latent_dim / self.groups
    }

    /// `ceil(log2 K)`.
    pub fn bits_per_code(&self) -> u32 {
        bits_for(self.codebook_size)
    }

    pub fn validate(&self, latent_dim: usize) -> Result<()> {
        if self.groups == 0 || self.residual_layers == 0 {
            return Err(invalid_config!(
                "groups and residual_layers must be positive"
            ));
        }
        if !latent_dim.is_multiple_of(self.groups) {
            return Err(invalid_config!(
                "latent_dim {latent_dim} is not divisible by {} groups",
                self.groups
            ));
        }
        if self.codebook_size < 2 {
            return Err(invalid_config!("codebook_size must be at least 2"));
        }
        if !(self.ema_decay > 0.0 && self.ema_decay <= 1.0) {
            return Err(invalid_config!("ema_decay must lie in (0, 1]"));
        }
        if !(self.commitment_weight >= 0.0 && self.dead_code_threshold >= 0.0) {
            return Err(invalid_config!(
                "commitment_weight and dead_code_threshold must be non-negative"
            ));
        }
        Ok(())
    }
}

/// `ceil(log2 k)`, zero for `k <= 1`.
pub fn bits_for(k: usize) -> u32 {
    if k <= 1 {
        0
    } else {
        usize::BITS - (k - 1).leading_zeros()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    /// `[K × code_dim]`.
    pub entries: Tensor,
    pub ema_counts: Vec<f64>,
    /// `[K × code_dim]`.
    pub ema_sums: Tensor,
}

impl Codebook {
    pub fn from_entries(entries: Tensor) -> Self {
        let (k, _) = entries.dims2();
        Self {
            ema_counts: vec![1.0; k],
            ema_sums: entries.clone(),
            entries,
        }
    }

    pub fn random(rng: &mut ModelRng, k: usize, dim: usize, std: f64) -> Self {
        Self::from_entries(nn::normal(rng, &[k, dim], std))
    }

    pub fn size(&self) -> usize {
        self.entries.dims2().0
    }

    pub fn dim(&self) -> usize {
        self.entries.dims2().1
    }

    pub fn entry(&self, i: usize) -> &[f64] {
        self.entries.row(i)
    }

    /// Index of the closest entry in squared L2; the lowest index wins ties.
    pub fn nearest(&self, v: &[f64]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for k in 0..self.size() {
            let d: f64 = self
                .entry(k)
                .iter()
                .zip(v)
                .map(|(e, x)| (e - x) * (e - x))
                .sum();
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        best
    }

    fn reseed(&mut self, k: usize, v: &[f64]) {
        let dim = self.dim();
        self.entries.data_mut()[k * dim..(k + 1) * dim].copy_from_slice(v);
        self.ema_sums.data_mut()[k * dim..(k + 1) * dim].copy_from_slice(v);
        self.ema_counts[k] = 1.0;
    }
}

/// Code indices `[T × N_q]`, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeIndices {
    pub n_frames: usize,
    pub n_q: usize,
    pub data: Vec<u32>,
}

impl CodeIndices {
    pub fn new(n_frames: usize, n_q: usize, data: Vec<u32>) -> Self {
        assert_eq!(data.len(), n_frames * n_q);
        Self {
            n_frames,
            n_q,
            data,
        }
    }

    pub fn get(&self, frame: usize, book: usize) -> u32 {
        self.data[frame * self.n_q + book]
    }

    pub fn frame(&self, t: usize) -> &[u32] {
        &self.data[t * self.n_q..(t + 1) * self.n_q]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Quantized {
    pub z_q: LatentSequence,
    pub indices: CodeIndices,
    /// `commitment_weight · mean((z − z_q)²)`.
    pub l_vq: f64,
    /// Per codebook, the `[T × code_dim]` residuals it was asked to code.
    pub stage_inputs: Vec<Tensor>,
}

fn check_books(cfg: &GrvqConfig, books: &[Codebook], latent_dim: usize) -> Result<()> {
    cfg.validate(latent_dim)?;
    if books.len() != cfg.n_q() {
        return Err(invalid_input!(
            "expected {} codebooks, got {}",
            cfg.n_q(),
            books.len()
        ));
    }
    let cd = cfg.code_dim(latent_dim);
    for (j, b) in books.iter().enumerate() {
        if b.dim() != cd || b.size() != cfg.codebook_size {
            return Err(invalid_input!(
                "codebook {j} is {}×{}, expected {}×{cd}",
                b.size(),
                b.dim(),
                cfg.codebook_size
            ));
        }
    }
    Ok(())
}

pub fn quantize(z: &LatentSequence, cfg: &GrvqConfig, books: &[Codebook]) -> Result<Quantized> {
    if z.values.ndim() != 2 {
        return Err(invalid_input!("latent must be rank 2"));
    }
    let (t, d) = z.values.dims2();
    check_books(cfg, books, d)?;
    let cd = cfg.code_dim(d);
    let (g_count, r_count) = (cfg.groups, cfg.residual_layers);
    let n_q = cfg.n_q();
    let mut zq = vec![0.0; t * d];
    let mut idx = vec![0u32; t * n_q];
    let mut stage_inputs: Vec<Vec<f64>> = vec![Vec::with_capacity(t * cd); n_q];
    let mut residual = vec![0.0; cd];
    for frame in 0..t {
        let row = z.values.row(frame);
        for g in 0..g_count {
            residual.copy_from_slice(&row[g * cd..(g + 1) * cd]);
            let out = &mut zq[frame * d + g * cd..frame * d + (g + 1) * cd];
            for r in 0..r_count {
                let j = g * r_count + r;
                stage_inputs[j].extend_from_slice(&residual);
                let k = books[j].nearest(&residual);
                idx[frame * n_q + j] = k as u32;
                for ((o, res), e) in out
                    .iter_mut()
                    .zip(residual.iter_mut())
                    .zip(books[j].entry(k))
                {
                    *o += e;
                    *res -= e;
                }
            }
        }
    }
    let mse = z
        .values
        .data()
        .iter()
        .zip(&zq)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / (t * d).max(1) as f64;
    Ok(Quantized {
        z_q: LatentSequence {
            values: Tensor::new(&[t, d], zq),
            frame_rate: z.frame_rate,
        },
        indices: CodeIndices::new(t, n_q, idx),
        l_vq: cfg.commitment_weight * mse,
        stage_inputs: stage_inputs
            .into_iter()
            .map(|v| Tensor::new(&[t, cd], v))
            .collect(),
    })
}

/// Decoder-side reconstruction: per group, the sum of the indexed entries.
pub fn dequantize(
    idx: &CodeIndices,
    cfg: &GrvqConfig,
    books: &[Codebook],
    frame_rate: f64,
) -> Result<LatentSequence> {
    if books.is_empty() {
        return Err(invalid_input!("no codebooks"));
    }
    let cd = books[0].dim();
    let d = cd * cfg.groups;
    check_books(cfg, books, d)?;
    if idx.n_q != cfg.n_q() {
        return Err(corrupt!(
            "stream carries {} codebooks, model has {}",
            idx.n_q,
            cfg.n_q()
        ));
    }
    let mut out = vec![0.0; idx.n_frames * d];
    for t in 0..idx.n_frames {
        for g in 0..cfg.groups {
            let dst = &mut out[t * d + g * cd..t * d + (g + 1) * cd];
            for r in 0..cfg.residual_layers {
                let j = g * cfg.residual_layers + r;
                let k = idx.get(t, j) as usize;
                if k >= books[j].size() {
                    return Err(corrupt!(
                        "index {k} out of range for codebook of size {}",
                        books[j].size()
                    ));
                }
                for (o, e) in dst.iter_mut().zip(books[j].entry(k)) {
                    *o += e;
                }
            }
        }
    }
    Ok(LatentSequence {
        values: Tensor::new(&[idx.n_frames, d], out),
        frame_rate,
    })
}

/// Quantizes the value of `z` and returns `(z_q, l_vq)` nodes: `z_q` carries
/// the quantized value forward and passes gradients straight to `z`; `l_vq`
/// is the commitment loss against the stopped `z_q`.
pub fn quantize_graph(
    g: &mut Graph,
    z: Var,
    cfg: &GrvqConfig,
    books: &[Codebook],
    frame_rate: f64,
) -> Result<(Var, Var, Quantized)> {
    let latent = LatentSequence {
        values: g.value(z).clone(),
        frame_rate,
    };
    let q = quantize(&latent, cfg, books)?;
    let zq = g.straight_through(z, q.z_q.values.clone());
    let target = g.constant(q.z_q.values.clone());
    let diff = g.sub(z, target);
    let sq = g.square(diff);
    let mse = g.mean(sq);
    let l_vq = g.scale(mse, cfg.commitment_weight);
    Ok((zq, l_vq, q))
}

/// One EMA step for a single codebook from the vectors it coded.
pub fn update_codebook_ema(
    book: &mut Codebook,
    inputs: &Tensor,
    assignments: &[u32],
    cfg: &GrvqConfig,
    rng: &mut ModelRng,
) {
    let decay = cfg.ema_decay;
    if decay >= 1.0 {
        return;
    }
    let (n, dim) = inputs.dims2();
    assert_eq!(assignments.len(), n);
    let k_count = book.size();
    let mut counts = vec![0.0; k_count];
    let mut sums = vec![0.0; k_count * dim];
    for (i, &k) in assignments.iter().enumerate() {
        let k = k as usize;
        counts[k] += 1.0;
        for (s, x) in sums[k * dim..(k + 1) * dim].iter_mut().zip(inputs.row(i)) {
            *s += x;
        }
    }
    for k in 0..k_count {
        book.ema_counts[k] = decay * book.ema_counts[k] + (1.0 - decay) * counts[k];
        let es = &mut book.ema_sums.data_mut()[k * dim..(k + 1) * dim];
        for (e, s) in es.iter_mut().zip(&sums[k * dim..(k + 1) * dim]) {
            *e = decay * *e + (1.0 - decay) * s;
        }
        if book.ema_counts[k] > 1e-12 {
            let c = book.ema_counts[k];
            for j in 0..dim {
                book.entries.data_mut()[k * dim + j] = book.ema_sums.data()[k * dim + j] / c;
            }
        }
    }
    if n == 0 {
        return;
    }
    for k in 0..k_count {
        if book.ema_counts[k] < cfg.dead_code_threshold {
            let pick = rng.random_range(0..n);
            book.reseed(k, inputs.row(pick));
        }
    }
}

/// EMA step for every codebook, using the residuals and indices of the
/// most recent [`quantize`] call.
pub fn update_codebooks_ema(
    books: &mut [Codebook],
    q: &Quantized,
    cfg: &GrvqConfig,
    rng: &mut ModelRng,
) {
    for (j, book) in books.iter_mut().enumerate() {
        let assignments: Vec<u32> = (0..q.indices.n_frames)
            .map(|t| q.indices.get(t, j))
            .collect();
        update_codebook_ema(book, &q.stage_inputs[j], &assignments, cfg, rng);
    }
}

/// Seeds every codebook with randomly chosen residual vectors of `z`, stage
/// by stage, so training starts with codes that lie on the data.
pub fn init_codebooks_from_data(
    books: &mut [Codebook],
    z: &LatentSequence,
    cfg: &GrvqConfig,
    rng: &mut ModelRng,
) -> Result<()> {
    let (t, d) = z.values.dims2();
    check_books(cfg, books, d)?;
    if t == 0 {
        return Err(invalid_input!(
            "cannot initialize codebooks from an empty latent"
        ));
    }
    let cd = cfg.code_dim(d);
    for g in 0..cfg.groups {
        let mut residual: Vec<f64> = (0..t)
            .flat_map(|f| z.values.row(f)[g * cd..(g + 1) * cd].to_vec())
            .collect();
        for r in 0..cfg.residual_layers {
            let book = &mut books[g * cfg.residual_layers + r];
            for k in 0..book.size() {
                let pick = rng.random_range(0..t);
                let v = residual[pick * cd..(pick + 1) * cd].to_vec();
                book.reseed(k, &v);
            }
            for f in 0..t {
                let k = book.nearest(&residual[f * cd..(f + 1) * cd]);
                for (x, e) in residual[f * cd..(f + 1) * cd].iter_mut().zip(book.entry(k)) {
                    *x -= e;
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng() -> ModelRng {
        ModelRng::seed_from_u64(11)
    }

    fn cfg(groups: usize, residual_layers: usize, k: usize) -> GrvqConfig {
        GrvqConfig {
            groups,
            residual_layers,
            codebook_size: k,
            ..GrvqConfig::default()
        }
    }

    fn latent(values: Tensor) -> LatentSequence {
        LatentSequence {
            values,
            frame_rate: 75.0,
        }
    }

    #[test]
    fn codebook_count_mapping() {
        assert_eq!(
            (
                GrvqConfig::for_codebooks(1).groups,
                GrvqConfig::for_codebooks(1).residual_layers
            ),
            (1, 1)
        );
        assert_eq!(
            (
                GrvqConfig::for_codebooks(2).groups,
                GrvqConfig::for_codebooks(2).residual_layers
            ),
            (2, 1)
        );
        assert_eq!(
            (
                GrvqConfig::for_codebooks(4).groups,
                GrvqConfig::for_codebooks(4).residual_layers
            ),
            (2, 2)
        );
        assert_eq!(GrvqConfig::for_codebooks(4).codebook_size, 1024);
    }

    #[test]
    fn bit_widths() {
        assert_eq!(bits_for(1), 0);
        assert_eq!(bits_for(2), 1);
        assert_eq!(bits_for(1024), 10);
        assert_eq!(bits_for(1025), 11);
        assert_eq!(bits_for(64), 6);
    }

    #[test]
    fn exact_entry_is_reproduced() {
        let c = cfg(1, 1, 4);
        let book = Codebook::random(&mut rng(), 4, 3, 1.0);
        let z = latent(Tensor::new(&[1, 3], book.entry(2).to_vec()));
        let q = quantize(&z, &c, core::slice::from_ref(&book)).unwrap();
        assert_eq!(q.indices.data, vec![2]);
        assert_eq!(q.z_q.values, z.values);
        assert_eq!(q.l_vq, 0.0);
    }

    #[test]
    fn ties_pick_lowest_index() {
        let book = Codebook::from_entries(Tensor::new(&[3, 1], vec![1.0, -1.0, 1.0]));
        assert_eq!(book.nearest(&[0.0]), 0);
        assert_eq!(book.nearest(&[2.0]), 0);
    }

    #[test]
    fn zero_indices_dequantize_to_first_entries() {
        let c = cfg(2, 2, 4);
        let mut r = rng();
        let books: Vec<_> = (0..4)
            .map(|_| Codebook::random(&mut r, 4, 2, 1.0))
            .collect();
        let idx = CodeIndices::new(1, 4, vec![0; 4]);
        let z = dequantize(&idx, &c, &books, 75.0).unwrap();
        let expect: Vec<f64> = (0..2)
            .flat_map(|g| (0..2).map(move |i| (g, i)))
            .map(|(g, i)| books[2 * g].entry(0)[i] + books[2 * g + 1].entry(0)[i])
            .collect();
        assert_eq!(z.values.data(), &expect[..]);
    }

    #[test]
    fn out_of_range_index_is_corrupt() {
        let c = cfg(1, 1, 4);
        let books = vec![Codebook::random(&mut rng(), 4, 2, 1.0)];
        let idx = CodeIndices::new(1, 1, vec![4]);
        assert!(matches!(
            dequantize(&idx, &c, &books, 75.0),
            Err(crate::Error::CorruptStream(_))
        ));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let c = cfg(1, 1, 4);
        let books = vec![Codebook::random(&mut rng(), 4, 2, 1.0)];
        let z = latent(Tensor::zeros(&[2, 3]));
        assert!(quantize(&z, &c, &books).is_err());
        assert!(quantize(&latent(Tensor::zeros(&[2, 2])), &c, &[]).is_err());
    }

    #[test]
    fn unit_decay_leaves_books_unchanged() {
        let c = GrvqConfig {
            ema_decay: 1.0,
            dead_code_threshold: 10.0,
            ..cfg(1, 1, 4)
        };
        let mut book = Codebook::random(&mut rng(), 4, 2, 1.0);
        let before = book.clone();
        let inputs = Tensor::new(&[2, 2], vec![5.0, 5.0, -5.0, 1.0]);
        update_codebook_ema(&mut book, &inputs, &[0, 0], &c, &mut rng());
        assert_eq!(book, before);
    }

    #[test]
    fn ema_converges_to_cluster() {
        let c = GrvqConfig {
            dead_code_threshold: 0.0,
            ..cfg(1, 1, 4)
        };
        let mut book = Codebook::random(&mut rng(), 4, 2, 1.0);
        let target = [0.7, -1.3];
        let inputs = Tensor::new(&[8, 2], target.iter().cycle().take(16).copied().collect());
        let mut r = rng();
        for _ in 0..2000 {
            let k = book.nearest(&target) as u32;
            update_codebook_ema(&mut book, &inputs, &[k; 8], &c, &mut r);
        }
        let k = book.nearest(&target);
        let err: f64 = book
            .entry(k)
            .iter()
            .zip(&target)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn unused_codes_are_reseeded() {
        let c = GrvqConfig {
            dead_code_threshold: 1.0,
            ..cfg(1, 1, 4)
        };
        let mut book = Codebook::from_entries(Tensor::new(&[4, 1], vec![0.0, 10.0, 20.0, 30.0]));
        let inputs = Tensor::new(&[3, 1], vec![0.5, 0.25, 0.75]);
        update_codebook_ema(&mut book, &inputs, &[0, 0, 0], &c, &mut rng());
        for k in 1..4 {
            assert!(
                inputs.data().contains(&book.entry(k)[0]),
                "entry {k} = {}",
                book.entry(k)[0]
            );
            assert_eq!(book.ema_counts[k], 1.0);
        }
    }

    #[test]
    fn data_init_places_codes_on_data() {
        let c = cfg(2, 2, 8);
        let mut r = rng();
        let mut books: Vec<_> = (0..4)
            .map(|_| Codebook::random(&mut r, 8, 3, 1.0))
            .collect();
        let z = latent(nn::normal(&mut r, &[20, 6], 2.0));
        init_codebooks_from_data(&mut books, &z, &c, &mut r).unwrap();
        let rows: Vec<&[f64]> = (0..20).map(|t| &z.values.row(t)[..3]).collect();
        for k in 0..8 {
            assert!(rows.contains(&books[0].entry(k)));
        }
    }
}
