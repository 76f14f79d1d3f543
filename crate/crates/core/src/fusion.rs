//! Adaptive feature-weighted fusion of the quantized latent with the prompts.
//!
//! `z̃[t] = α₁·z_q[t] + α₂·z_PC + α₃·z_PV`, with the prompt vectors broadcast
//! over time. The weights are three unconstrained learnable scalars stored as
//! `fusion.alpha`. With fusion disabled they are the constant `(1, 1, 1)`.

use alloc::vec::Vec;

use crate::autograd::{Graph, Var};
use crate::codec::LatentSequence;
use crate::error::invalid_input;
use crate::nn::ParamStore;
use crate::prompt::PromptEmbedding;
use crate::{Result, Tensor};

pub const ALPHA_PARAM: &str = "fusion.alpha";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionWeights {
    pub alpha: [f64; 3],
}

impl Default for FusionWeights {
    fn default() -> Self {
        Self {
            alpha: [1.0, 0.1, 0.1],
        }
    }
}

impl FusionWeights {
    /// Plain unweighted addition.
    pub const UNIT: Self = Self {
        alpha: [1.0, 1.0, 1.0],
    };

    pub fn to_tensor(self) -> Tensor {
        Tensor::vector(self.alpha.to_vec())
    }

    pub fn from_store(store: &ParamStore) -> Option<Self> {
        let t = store.get(ALPHA_PARAM)?;
        let d = t.data();
        (d.len() == 3).then(|| Self {
            alpha: [d[0], d[1], d[2]],
        })
    }

    pub fn is_finite(&self) -> bool {
        self.alpha.iter().all(|a| a.is_finite())
    }
}

pub fn init_fusion(store: &mut ParamStore, w: FusionWeights) {
    store.insert(ALPHA_PARAM, w.to_tensor());
}

/// The `α` node: the learnable parameter, or the unit constant when fusion is off.
pub fn alpha_var(g: &mut Graph, store: &ParamStore, learnable: bool) -> Result<Var> {
    if learnable {
        g.param(store, ALPHA_PARAM)
    } else {
        Ok(g.constant(FusionWeights::UNIT.to_tensor()))
    }
}

/// Differentiable fusion. `z_q: [T, D]`, prompts `[D]`, `alpha: [3]`.
/// A missing prompt drops its term.
pub fn fuse_graph(
    g: &mut Graph,
    z_q: Var,
    z_pc: Option<Var>,
    z_pv: Option<Var>,
    alpha: Var,
) -> Result<Var> {
    let shape = g.shape(z_q).to_vec();
    if shape.len() != 2 {
        return Err(invalid_input!("z_q must be [T, D], got {shape:?}"));
    }
    let (t, d) = (shape[0], shape[1]);
    if g.shape(alpha) != [3] {
        return Err(invalid_input!("alpha must have 3 entries"));
    }
    let a0 = g.index(alpha, 0);
    let mut out = g.scale_by(z_q, a0);
    for (slot, p) in [(1, z_pc), (2, z_pv)] {
        let Some(p) = p else { continue };
        if g.value(p).numel() != d || g.shape(p).len() != 1 {
            return Err(invalid_input!(
                "prompt has shape {:?}, expected [{d}]",
                g.shape(p)
            ));
        }
        let a = g.index(alpha, slot);
        let b = g.broadcast_rows(p, t);
        let term = g.scale_by(b, a);
        out = g.add(out, term);
    }
    Ok(out)
}

/// Inference-time fusion. Prompt terms that vanish leave `α₁·z_q` untouched,
/// so `α = (1, 0, 0)` returns `z_q` bit for bit.
pub fn fuse(
    z_q: &LatentSequence,
    z_pc: Option<&PromptEmbedding>,
    z_pv: Option<&PromptEmbedding>,
    w: &FusionWeights,
) -> Result<LatentSequence> {
    let (t, d) = z_q.values.dims2();
    for p in [z_pc, z_pv].into_iter().flatten() {
        if p.vector.len() != d {
            return Err(invalid_input!(
                "prompt has {} channels, latent has {d}",
                p.vector.len()
            ));
        }
    }
    let [a1, a2, a3] = w.alpha;
    let prompt: Vec<f64> = (0..d)
        .map(|c| z_pc.map_or(0.0, |p| a2 * p.vector[c]) + z_pv.map_or(0.0, |p| a3 * p.vector[c]))
        .collect();
    let mut out = Vec::with_capacity(t * d);
    for row in 0..t {
        for (c, &x) in z_q.values.row(row).iter().enumerate() {
            let base = a1 * x;
            out.push(if prompt[c] == 0.0 {
                base
            } else {
                base + prompt[c]
            });
        }
    }
    Ok(LatentSequence {
        values: Tensor::new(&[t, d], out),
        frame_rate: z_q.frame_rate,
    })
}
