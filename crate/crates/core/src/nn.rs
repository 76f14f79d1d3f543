//! Named parameter storage and the layer helpers the models are built from.
//!
//! Every layer is a pair of functions: `*_init` registers its tensors in a
//! [`ParamStore`] under a dotted name, and the forward helper binds them into
//! a [`Graph`].

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autograd::{Conv1dSpec, Conv2dSpec, Graph, Var};
use crate::{Result, Tensor};

pub type ModelRng = ChaCha8Rng;

/// Ordered map of named parameter tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.params.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Exact number of scalars held.
    pub fn count_parameters(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// Scalars held under names starting with `prefix`.
    pub fn count_with_prefix(&self, prefix: &str) -> usize {
        self.iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(_, t)| t.numel())
            .sum()
    }

    /// FNV-1a over names, shapes and the bit patterns of every value.
    pub fn fingerprint(&self, prefix: &str) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for (name, t) in self.iter().filter(|(n, _)| n.starts_with(prefix)) {
            feed(name.as_bytes());
            for &d in t.shape() {
                feed(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                feed(&v.to_bits().to_le_bytes());
            }
        }
        h
    }
}

/// Convenience alias for [`ParamStore::count_parameters`].
pub fn count_parameters(store: &ParamStore) -> usize {
    store.count_parameters()
}

pub fn normal(rng: &mut ModelRng, shape: &[usize], std: f64) -> Tensor {
    let n = shape.iter().product();
    let data: Vec<f64> = (0..n)
        .map(|_| std * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Tensor::new(shape, data)
}

fn fan_in_normal(rng: &mut ModelRng, shape: &[usize], fan_in: usize) -> Tensor {
    normal(rng, shape, 1.0 / libm::sqrt(fan_in.max(1) as f64))
}

fn w(name: &str) -> String {
    format!("{name}.weight")
}

fn b(name: &str) -> String {
    format!("{name}.bias")
}

pub fn conv1d_init(
    store: &mut ParamStore,
    rng: &mut ModelRng,
    name: &str,
    cin: usize,
    cout: usize,
    k: usize,
) {
    store.insert(w(name), fan_in_normal(rng, &[cout, cin, k], cin * k));
    store.insert(b(name), Tensor::zeros(&[cout]));
}

pub fn conv1d(
    g: &mut Graph,
    store: &ParamStore,
    name: &str,
    x: Var,
    spec: Conv1dSpec,
) -> Result<Var> {
    let wv = g.param(store, &w(name))?;
    let bv = g.param(store, &b(name))?;
    Ok(g.conv1d(x, wv, Some(bv), spec))
}

/// Weight layout `[cin, cout, k]`.
pub fn conv_transpose1d_init(
    store: &mut ParamStore,
    rng: &mut ModelRng,
    name: &str,
    cin: usize,
    cout: usize,
    k: usize,
    stride: usize,
) {
    store.insert(
        w(name),
        fan_in_normal(rng, &[cin, cout, k], cin * k / stride.max(1)),
    );
    store.insert(b(name), Tensor::zeros(&[cout]));
}

pub fn conv_transpose1d(
    g: &mut Graph,
    store: &ParamStore,
    name: &str,
    x: Var,
    stride: usize,
    trim_left: usize,
    trim_right: usize,
) -> Result<Var> {
    let wv = g.param(store, &w(name))?;
    let bv = g.param(store, &b(name))?;
    Ok(g.conv_transpose1d(x, wv, Some(bv), stride, trim_left, trim_right))
}

pub fn linear_init(
    store: &mut ParamStore,
    rng: &mut ModelRng,
    name: &str,
    din: usize,
    dout: usize,
) {
    store.insert(w(name), fan_in_normal(rng, &[dout, din], din));
    store.insert(b(name), Tensor::zeros(&[dout]));
}

/// `x: [T, din] -> [T, dout]`.
pub fn linear(g: &mut Graph, store: &ParamStore, name: &str, x: Var) -> Result<Var> {
    let wv = g.param(store, &w(name))?;
    let bv = g.param(store, &b(name))?;
    Ok(g.linear(x, wv, Some(bv)))
}

pub fn layer_norm_init(store: &mut ParamStore, name: &str, d: usize) {
    store.insert(w(name), Tensor::full(&[d], 1.0));
    store.insert(b(name), Tensor::zeros(&[d]));
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

pub fn layer_norm(g: &mut Graph, store: &ParamStore, name: &str, x: Var) -> Result<Var> {
    let gamma = g.param(store, &w(name))?;
    let beta = g.param(store, &b(name))?;
    Ok(g.layer_norm(x, gamma, beta, LAYER_NORM_EPS))
}

/// Weight-normalized 2-D convolution; `g` starts at `||v||` so the initial
/// effective weight equals `v`.
pub fn wn_conv2d_init(
    store: &mut ParamStore,
    rng: &mut ModelRng,
    name: &str,
    cin: usize,
    cout: usize,
    kernel: (usize, usize),
) {
    let v = fan_in_normal(
        rng,
        &[cout, cin, kernel.0, kernel.1],
        cin * kernel.0 * kernel.1,
    );
    let per = cin * kernel.0 * kernel.1;
    let norms: Vec<f64> = (0..cout)
        .map(|o| {
            libm::sqrt(
                v.data()[o * per..(o + 1) * per]
                    .iter()
                    .map(|x| x * x)
                    .sum::<f64>(),
            )
        })
        .collect();
    store.insert(format!("{name}.weight_v"), v);
    store.insert(format!("{name}.weight_g"), Tensor::vector(norms));
    store.insert(b(name), Tensor::zeros(&[cout]));
}

pub fn wn_conv2d(
    g: &mut Graph,
    store: &ParamStore,
    name: &str,
    x: Var,
    spec: Conv2dSpec,
) -> Result<Var> {
    let v = g.param(store, &format!("{name}.weight_v"))?;
    let gn = g.param(store, &format!("{name}.weight_g"))?;
    let bv = g.param(store, &b(name))?;
    let wv = g.weight_norm(v, gn);
    Ok(g.conv2d(x, wv, Some(bv), spec))
}

/// Names in `store` that start with any of `prefixes`.
pub fn names_with_prefixes(store: &ParamStore, prefixes: &[&str]) -> Vec<String> {
    store
        .names()
        .filter(|n| prefixes.iter().any(|p| n.starts_with(p)))
        .map(ToString::to_string)
        .collect()
}
