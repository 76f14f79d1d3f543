#![allow(dead_code)]

use promptcodec_core::autograd::{Graph, Var};
use promptcodec_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape,
        (0..n)
            .map(|_| scale * (2.0 * rng.random::<f64>() - 1.0))
            .collect(),
    )
}

/// `‖a − b‖ / max(‖a‖, ‖b‖, floor)`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}

/// Compares analytic gradients of the scalar built by `f` against central
/// differences for every element of every input (or `max_coords` sampled ones).
pub fn gradcheck(inputs: &[Tensor], f: impl Fn(&mut Graph, &[Var]) -> Var, h: f64) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let out = f(&mut g, &vars);
    let grads = g.backward(out);
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for (i, t) in inputs.iter().enumerate() {
        let ga = grads
            .get(vars[i])
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(t.shape()));
        for j in 0..t.numel() {
            let eval = |delta: f64| {
                let mut perturbed = inputs.to_vec();
                perturbed[i].data_mut()[j] += delta;
                let mut g = Graph::new();
                let vs: Vec<Var> = perturbed.iter().map(|t| g.constant(t.clone())).collect();
                let o = f(&mut g, &vs);
                g.value(o).item()
            };
            numeric.push((eval(h) - eval(-h)) / (2.0 * h));
            analytic.push(ga.data()[j]);
        }
    }
    rel_err(&analytic, &numeric)
}

/// Weighted sum of all elements, so every output position carries a distinct gradient.
pub fn weighted_sum(g: &mut Graph, v: Var, seed: u64) -> Var {
    let shape = g.shape(v).to_vec();
    let mut r = rng(seed);
    let w = random_tensor(&mut r, &shape, 1.0);
    let wv = g.constant(w);
    let p = g.mul(v, wv);
    g.sum(p)
}
