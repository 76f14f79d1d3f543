//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! Every op appends a node to the [`Graph`]; [`Graph::backward`] walks the
//! tape in reverse. Nodes that do not depend on a trainable leaf are never
//! visited, so frozen parameters and constant inputs cost nothing on the
//! backward pass.

mod kernels;

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

pub use kernels::PadMode;
use kernels::*;

use crate::dsp;
use crate::nn::ParamStore;
use crate::{Error, Result, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv1dSpec {
    pub stride: usize,
    pub dilation: usize,
    pub pad_left: usize,
    pub pad_right: usize,
    pub pad_mode: PadMode,
}

impl Conv1dSpec {
    /// Stride-1 convolution whose output has the input's length.
    pub fn same(kernel: usize, dilation: usize) -> Self {
        let total = dilation * (kernel - 1);
        Self {
            stride: 1,
            dilation,
            pad_left: total / 2,
            pad_right: total - total / 2,
            pad_mode: PadMode::Zero,
        }
    }

    pub fn with_mode(mut self, mode: PadMode) -> Self {
        self.pad_mode = mode;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub dilation: (usize, usize),
}

#[derive(Debug, Clone, Copy)]
struct StftSpec {
    n_fft: usize,
    hop: usize,
    win: usize,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    ScaleBy(Var, Var),
    Square(Var),
    Sqrt(Var),
    Abs(Var),
    Log(Var),
    LogClamp(Var, f64),
    Tanh(Var),
    LeakyRelu(Var, f64),
    Elu(Var),
    Silu(Var),
    Relu(Var),
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    MeanCols(Var),
    BroadcastRows(Var),
    BroadcastCols(Var),
    Transpose(Var),
    MatMul(Var, Var),
    Linear(Var, Var, Option<Var>),
    Conv1d(Var, Var, Option<Var>, Conv1dSpec),
    ConvTranspose1d(Var, Var, Option<Var>, usize, usize),
    Conv2d(Var, Var, Option<Var>, Conv2dSpec),
    LayerNorm(Var, Var, Var, f64),
    SoftmaxRows(Var),
    Concat(Vec<Var>),
    SliceLast(Var, usize, usize),
    Index(Var, usize),
    Reshape(Var),
    PadEnd(Var),
    Stft(Var, StftSpec),
    ComplexPower(Var),
    WeightNorm(Var, Var),
    StraightThrough(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    bound: BTreeMap<String, Var>,
    frozen: Vec<String>,
    freeze_all: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// A graph in which every parameter is bound as a constant.
    pub fn inference() -> Self {
        Self {
            freeze_all: true,
            ..Self::default()
        }
    }

    /// Parameters whose name starts with `prefix` are bound as constants.
    pub fn freeze_prefix(&mut self, prefix: &str) {
        self.frozen.push(prefix.to_string());
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.freeze_all || self.frozen.iter().any(|p| name.starts_with(p.as_str()))
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf that receives a gradient.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Binds a named parameter from `store`. Repeated binds return the same node.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let value = store
            .get(name)
            .ok_or_else(|| Error::InvalidInput(alloc::format!("unknown parameter {name}")))?
            .clone();
        let trainable = !self.is_frozen(name);
        let v = self.push(value, Op::Leaf, trainable);
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    /// Gradients of every trainable bound parameter, keyed by name.
    pub fn param_grads(&self, grads: &Gradients) -> BTreeMap<String, Tensor> {
        self.bound
            .iter()
            .filter(|(_, v)| self.nodes[v.0].requires_grad)
            .map(|(name, &v)| {
                let g = grads
                    .get(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(self.nodes[v.0].value.shape()));
                (name.clone(), g)
            })
            .collect()
    }

    pub fn bound_names(&self) -> impl Iterator<Item = &str> {
        self.bound.keys().map(String::as_str)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.value(a).map(f);
        let rg = self.rg(&[a]);
        self.push(value, op, rg)
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "elementwise shape mismatch");
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(va.shape(), data);
        let rg = self.rg(&[a, b]);
        self.push(value, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Div(a, b), |x, y| x / y)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Scale(a, c), |x| x * c)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::AddScalar(a), |x| x + c)
    }

    /// Multiplies every element of `a` by the single-element node `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Var {
        let c = self.value(s).item();
        let value = self.value(a).map(|x| x * c);
        let rg = self.rg(&[a, s]);
        self.push(value, Op::ScaleBy(a, s), rg)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sqrt(a), libm::sqrt)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, Op::Abs(a), libm::fabs)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log(a), libm::log)
    }

    /// `ln(max(a, floor))`; no gradient below the floor.
    pub fn log_clamp(&mut self, a: Var, floor: f64) -> Var {
        self.unary(a, Op::LogClamp(a, floor), |x| libm::log(x.max(floor)))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), libm::tanh)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.unary(a, Op::LeakyRelu(a, slope), |x| {
            if x > 0.0 {
                x
            } else {
                slope * x
            }
        })
    }

    pub fn elu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Elu(a), |x| if x > 0.0 { x } else { libm::expm1(x) })
    }

    pub fn silu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Silu(a), |x| x * sigmoid(x))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(value, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let value = Tensor::scalar(t.sum() / t.numel() as f64);
        let rg = self.rg(&[a]);
        self.push(value, Op::Mean(a), rg)
    }

    /// `[T, D] -> [D]`, averaging over rows.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let (t, d) = self.value(a).dims2();
        let x = self.value(a).data();
        let mut out = vec![0.0; d];
        for r in 0..t {
            for (o, v) in out.iter_mut().zip(&x[r * d..(r + 1) * d]) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= t as f64;
        }
        let rg = self.rg(&[a]);
        self.push(Tensor::vector(out), Op::MeanRows(a), rg)
    }

    /// `[T, D] -> [T]`, averaging over columns.
    pub fn mean_cols(&mut self, a: Var) -> Var {
        let (t, d) = self.value(a).dims2();
        let x = self.value(a).data();
        let out = (0..t)
            .map(|r| x[r * d..(r + 1) * d].iter().sum::<f64>() / d as f64)
            .collect();
        let rg = self.rg(&[a]);
        self.push(Tensor::vector(out), Op::MeanCols(a), rg)
    }

    /// Repeats a `[D]` vector into `rows` rows: `[rows, D]`.
    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Var {
        let v = self.value(a);
        assert_eq!(v.ndim(), 1);
        let d = v.numel();
        let mut out = Vec::with_capacity(rows * d);
        for _ in 0..rows {
            out.extend_from_slice(v.data());
        }
        let rg = self.rg(&[a]);
        self.push(Tensor::new(&[rows, d], out), Op::BroadcastRows(a), rg)
    }

    /// Repeats a `[T]` vector across `cols` columns: `[T, cols]`.
    pub fn broadcast_cols(&mut self, a: Var, cols: usize) -> Var {
        let v = self.value(a);
        assert_eq!(v.ndim(), 1);
        let t = v.numel();
        let mut out = Vec::with_capacity(t * cols);
        for &x in v.data() {
            out.extend(core::iter::repeat_n(x, cols));
        }
        let rg = self.rg(&[a]);
        self.push(Tensor::new(&[t, cols], out), Op::BroadcastCols(a), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transposed();
        let rg = self.rg(&[a]);
        self.push(value, Op::Transpose(a), rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.value(a).dims2();
        let (k2, n) = self.value(b).dims2();
        assert_eq!(k, k2, "matmul inner dimension mismatch");
        let out = matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.rg(&[a, b]);
        self.push(Tensor::new(&[m, n], out), Op::MatMul(a, b), rg)
    }

    /// `x: [T, in]`, `w: [out, in]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let (t, din) = self.value(x).dims2();
        let (dout, din2) = self.value(w).dims2();
        assert_eq!(din, din2, "linear input dimension mismatch");
        let bias = b.map(|b| self.value(b).data());
        let out = linear_forward(
            self.value(x).data(),
            self.value(w).data(),
            bias,
            t,
            din,
            dout,
        );
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.rg(&deps);
        self.push(Tensor::new(&[t, dout], out), Op::Linear(x, w, b), rg)
    }

    /// `x: [Cin, L]`, `w: [Cout, Cin, K]`, `b: [Cout]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, spec: Conv1dSpec) -> Var {
        let (cin, l) = self.value(x).dims2();
        let (cout, cin2, k) = self.value(w).dims3();
        assert_eq!(cin, cin2, "conv1d channel mismatch");
        let xp = pad1d(
            self.value(x).data(),
            cin,
            l,
            spec.pad_left,
            spec.pad_right,
            spec.pad_mode,
        );
        let lp = l + spec.pad_left + spec.pad_right;
        let lout = conv_out_len(lp, k, spec.stride, spec.dilation)
            .expect("conv1d input shorter than kernel span");
        let dims = Conv1dDims {
            cin,
            lp,
            cout,
            k,
            stride: spec.stride,
            dilation: spec.dilation,
            lout,
        };
        let bias = b.map(|b| self.value(b).data());
        let out = conv1d_forward(&xp, self.value(w).data(), bias, &dims);
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.rg(&deps);
        self.push(
            Tensor::new(&[cout, lout], out),
            Op::Conv1d(x, w, b, spec),
            rg,
        )
    }

    /// Transposed convolution, `w: [Cin, Cout, K]`. The full output of length
    /// `(L-1)*stride + K` is trimmed by `trim_left` and `trim_right`.
    pub fn conv_transpose1d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        trim_left: usize,
        trim_right: usize,
    ) -> Var {
        let (cin, l) = self.value(x).dims2();
        let (cin2, cout, k) = self.value(w).dims3();
        assert_eq!(cin, cin2, "conv_transpose1d channel mismatch");
        let full = (l - 1) * stride + k;
        assert!(trim_left + trim_right < full);
        let dims = ConvT1dDims {
            cin,
            l,
            cout,
            k,
            stride,
            trim_left,
            lout: full - trim_left - trim_right,
        };
        let bias = b.map(|b| self.value(b).data());
        let out = conv_t1d_forward(self.value(x).data(), self.value(w).data(), bias, &dims);
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.rg(&deps);
        self.push(
            Tensor::new(&[cout, dims.lout], out),
            Op::ConvTranspose1d(x, w, b, stride, trim_left),
            rg,
        )
    }

    fn conv2d_dims(&self, x: Var, w: Var, spec: &Conv2dSpec) -> Conv2dDims {
        let (cin, h, wd) = self.value(x).dims3();
        let s = self.value(w).shape();
        assert_eq!(s.len(), 4);
        let (cout, cin2, kh, kw) = (s[0], s[1], s[2], s[3]);
        assert_eq!(cin, cin2, "conv2d channel mismatch");
        let ho = conv_out_len(h + 2 * spec.padding.0, kh, spec.stride.0, spec.dilation.0)
            .expect("conv2d input too short");
        let wo = conv_out_len(wd + 2 * spec.padding.1, kw, spec.stride.1, spec.dilation.1)
            .expect("conv2d input too narrow");
        Conv2dDims {
            cin,
            h,
            w: wd,
            cout,
            kh,
            kw,
            stride: spec.stride,
            padding: spec.padding,
            dilation: spec.dilation,
            ho,
            wo,
        }
    }

    /// `x: [Cin, H, W]`, `w: [Cout, Cin, KH, KW]`, zero padding.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: Conv2dSpec) -> Var {
        let dims = self.conv2d_dims(x, w, &spec);
        let xp = pad2d(self.value(x).data(), &dims);
        let bias = b.map(|b| self.value(b).data());
        let out = conv2d_forward(&xp, self.value(w).data(), bias, &dims);
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.rg(&deps);
        self.push(
            Tensor::new(&[dims.cout, dims.ho, dims.wo], out),
            Op::Conv2d(x, w, b, spec),
            rg,
        )
    }

    /// Row-wise layer normalization of `x: [T, D]` with affine `gamma`, `beta: [D]`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let (t, d) = self.value(x).dims2();
        let xv = self.value(x).data();
        let (mean, rstd) = layer_norm_stats(xv, t, d, eps);
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let mut out = vec![0.0; t * d];
        for r in 0..t {
            for c in 0..d {
                out[r * d + c] = (xv[r * d + c] - mean[r]) * rstd[r] * gv[c] + bv[c];
            }
        }
        let rg = self.rg(&[x, gamma, beta]);
        self.push(
            Tensor::new(&[t, d], out),
            Op::LayerNorm(x, gamma, beta, eps),
            rg,
        )
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let (t, d) = self.value(a).dims2();
        let x = self.value(a).data();
        let mut out = vec![0.0; t * d];
        for r in 0..t {
            let row = &x[r * d..(r + 1) * d];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for c in 0..d {
                let e = libm::exp(row[c] - m);
                out[r * d + c] = e;
                z += e;
            }
            for o in &mut out[r * d..(r + 1) * d] {
                *o /= z;
            }
        }
        let rg = self.rg(&[a]);
        self.push(Tensor::new(&[t, d], out), Op::SoftmaxRows(a), rg)
    }

    /// Concatenates along the last axis; leading dimensions must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let lead = {
            let s = self.shape(parts[0]);
            s[..s.len() - 1].to_vec()
        };
        let outer: usize = lead.iter().product();
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                let s = self.shape(p);
                assert_eq!(
                    &s[..s.len() - 1],
                    &lead[..],
                    "concat leading shape mismatch"
                );
                s[s.len() - 1]
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; outer * total];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.value(p).data();
            for o in 0..outer {
                out[o * total + off..o * total + off + w].copy_from_slice(&src[o * w..(o + 1) * w]);
            }
            off += w;
        }
        let mut shape = lead;
        shape.push(total);
        let rg = self.rg(parts);
        self.push(Tensor::new(&shape, out), Op::Concat(parts.to_vec()), rg)
    }

    /// Slices `[start, end)` of the last axis.
    pub fn slice_last(&mut self, a: Var, start: usize, end: usize) -> Var {
        let s = self.shape(a).to_vec();
        let w = s[s.len() - 1];
        assert!(start < end && end <= w);
        let outer = self.value(a).numel() / w;
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(outer * (end - start));
        for o in 0..outer {
            out.extend_from_slice(&src[o * w + start..o * w + end]);
        }
        let mut shape = s;
        *shape.last_mut().unwrap() = end - start;
        let rg = self.rg(&[a]);
        self.push(Tensor::new(&shape, out), Op::SliceLast(a, start, end), rg)
    }

    /// Element `i` of the flattened tensor, as a scalar.
    pub fn index(&mut self, a: Var, i: usize) -> Var {
        let value = Tensor::scalar(self.value(a).data()[i]);
        let rg = self.rg(&[a]);
        self.push(value, Op::Index(a, i), rg)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let value = self.value(a).clone().reshaped(shape);
        let rg = self.rg(&[a]);
        self.push(value, Op::Reshape(a), rg)
    }

    /// Appends `n` zeros to a rank-1 tensor.
    pub fn pad_end(&mut self, a: Var, n: usize) -> Var {
        let v = self.value(a);
        assert_eq!(v.ndim(), 1);
        let mut out = v.data().to_vec();
        out.resize(out.len() + n, 0.0);
        let rg = self.rg(&[a]);
        self.push(Tensor::vector(out), Op::PadEnd(a), rg)
    }

    /// Centered STFT of a rank-1 signal with reflect padding and a periodic
    /// Hann window. Output `[2, frames, n_fft/2 + 1]` holds real and imaginary
    /// parts.
    pub fn stft(&mut self, a: Var, n_fft: usize, hop: usize, win: usize) -> Var {
        let x = self.value(a);
        assert_eq!(x.ndim(), 1);
        let spec = dsp::stft_complex(x.data(), n_fft, hop, win);
        let frames = spec.frames;
        let bins = n_fft / 2 + 1;
        let mut out = spec.re;
        out.extend_from_slice(&spec.im);
        let rg = self.rg(&[a]);
        self.push(
            Tensor::new(&[2, frames, bins], out),
            Op::Stft(a, StftSpec { n_fft, hop, win }),
            rg,
        )
    }

    /// `[2, F, B] -> [F, B]`: squared magnitude of a real/imag pair.
    pub fn complex_power(&mut self, a: Var) -> Var {
        let (two, f, b) = self.value(a).dims3();
        assert_eq!(two, 2);
        let x = self.value(a).data();
        let n = f * b;
        let out = (0..n).map(|i| x[i] * x[i] + x[n + i] * x[n + i]).collect();
        let rg = self.rg(&[a]);
        self.push(Tensor::new(&[f, b], out), Op::ComplexPower(a), rg)
    }

    /// Weight normalization: `w[o] = g[o] * v[o] / ||v[o]||` over the leading axis.
    pub fn weight_norm(&mut self, v: Var, g: Var) -> Var {
        let vt = self.value(v);
        let rows = vt.shape()[0];
        let per = vt.numel() / rows;
        assert_eq!(self.value(g).numel(), rows);
        let gv = self.value(g).data();
        let mut out = vec![0.0; vt.numel()];
        for o in 0..rows {
            let row = &vt.data()[o * per..(o + 1) * per];
            let norm = libm::sqrt(row.iter().map(|x| x * x).sum::<f64>());
            for (dst, x) in out[o * per..(o + 1) * per].iter_mut().zip(row) {
                *dst = gv[o] * x / norm;
            }
        }
        let shape = vt.shape().to_vec();
        let rg = self.rg(&[v, g]);
        self.push(Tensor::new(&shape, out), Op::WeightNorm(v, g), rg)
    }

    /// Forward value `quantized`, backward identity into `z`.
    pub fn straight_through(&mut self, z: Var, quantized: Tensor) -> Var {
        assert_eq!(self.shape(z), quantized.shape());
        let rg = self.rg(&[z]);
        self.push(quantized, Op::StraightThrough(z), rg)
    }

    /// Reverse pass from a single-element node.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).numel(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(self.shape(loss), 1.0));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            for (v, contrib) in self.local_grads(i, &g) {
                if !self.nodes[v.0].requires_grad {
                    continue;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            }
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn local_grads(&self, i: usize, g: &Tensor) -> Vec<(Var, Tensor)> {
        let node = &self.nodes[i];
        let out = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        let need = |v: Var| self.nodes[v.0].requires_grad;
        let zip = |a: &Tensor, f: &dyn Fn(f64, f64) -> f64| -> Tensor {
            Tensor::new(
                a.shape(),
                a.data()
                    .iter()
                    .zip(g.data())
                    .map(|(&x, &gv)| f(x, gv))
                    .collect(),
            )
        };
        match &node.op {
            Op::Leaf => vec![],
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.map(|x| -x))],
            Op::Mul(a, b) => {
                let ga = Tensor::new(
                    g.shape(),
                    g.data()
                        .iter()
                        .zip(val(*b).data())
                        .map(|(x, y)| x * y)
                        .collect(),
                );
                let gb = Tensor::new(
                    g.shape(),
                    g.data()
                        .iter()
                        .zip(val(*a).data())
                        .map(|(x, y)| x * y)
                        .collect(),
                );
                vec![(*a, ga), (*b, gb)]
            }
            Op::Div(a, b) => {
                let (va, vb) = (val(*a).data(), val(*b).data());
                let ga = Tensor::new(
                    g.shape(),
                    g.data().iter().zip(vb).map(|(x, y)| x / y).collect(),
                );
                let gb = Tensor::new(
                    g.shape(),
                    g.data()
                        .iter()
                        .zip(va)
                        .zip(vb)
                        .map(|((gv, x), y)| -gv * x / (y * y))
                        .collect(),
                );
                vec![(*a, ga), (*b, gb)]
            }
            Op::Scale(a, c) => vec![(*a, g.map(|x| x * c))],
            Op::AddScalar(a) => vec![(*a, g.clone())],
            Op::ScaleBy(a, s) => {
                let c = val(*s).item();
                let ds: f64 = g
                    .data()
                    .iter()
                    .zip(val(*a).data())
                    .map(|(x, y)| x * y)
                    .sum();
                vec![
                    (*a, g.map(|x| x * c)),
                    (*s, Tensor::new(val(*s).shape(), vec![ds])),
                ]
            }
            Op::Square(a) => vec![(*a, zip(val(*a), &|x, gv| 2.0 * x * gv))],
            Op::Sqrt(a) => {
                let d = out
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(y, gv)| gv / (2.0 * y))
                    .collect();
                vec![(*a, Tensor::new(g.shape(), d))]
            }
            Op::Abs(a) => vec![(
                *a,
                zip(val(*a), &|x, gv| {
                    if x > 0.0 {
                        gv
                    } else if x < 0.0 {
                        -gv
                    } else {
                        0.0
                    }
                }),
            )],
            Op::Log(a) => vec![(*a, zip(val(*a), &|x, gv| gv / x))],
            Op::LogClamp(a, floor) => {
                let fl = *floor;
                vec![(*a, zip(val(*a), &|x, gv| if x > fl { gv / x } else { 0.0 }))]
            }
            Op::Tanh(a) => {
                let d = out
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(y, gv)| gv * (1.0 - y * y))
                    .collect();
                vec![(*a, Tensor::new(g.shape(), d))]
            }
            Op::LeakyRelu(a, slope) => {
                let s = *slope;
                vec![(*a, zip(val(*a), &|x, gv| if x > 0.0 { gv } else { s * gv }))]
            }
            Op::Elu(a) => vec![(
                *a,
                zip(val(*a), &|x, gv| {
                    if x > 0.0 {
                        gv
                    } else {
                        gv * libm::exp(x)
                    }
                }),
            )],
            Op::Silu(a) => vec![(
                *a,
                zip(val(*a), &|x, gv| {
                    let s = sigmoid(x);
                    gv * (s + x * s * (1.0 - s))
                }),
            )],
            Op::Relu(a) => vec![(*a, zip(val(*a), &|x, gv| if x > 0.0 { gv } else { 0.0 }))],
            Op::Sum(a) => vec![(*a, Tensor::full(val(*a).shape(), g.item()))],
            Op::Mean(a) => {
                let n = val(*a).numel() as f64;
                vec![(*a, Tensor::full(val(*a).shape(), g.item() / n))]
            }
            Op::MeanRows(a) => {
                let (t, d) = val(*a).dims2();
                let mut ga = Vec::with_capacity(t * d);
                for _ in 0..t {
                    ga.extend(g.data().iter().map(|x| x / t as f64));
                }
                vec![(*a, Tensor::new(&[t, d], ga))]
            }
            Op::MeanCols(a) => {
                let (t, d) = val(*a).dims2();
                let mut ga = Vec::with_capacity(t * d);
                for &x in g.data() {
                    ga.extend(core::iter::repeat_n(x / d as f64, d));
                }
                vec![(*a, Tensor::new(&[t, d], ga))]
            }
            Op::BroadcastRows(a) => {
                let (t, d) = g.dims2();
                let mut ga = vec![0.0; d];
                for r in 0..t {
                    for (o, x) in ga.iter_mut().zip(g.row(r)) {
                        *o += x;
                    }
                }
                vec![(*a, Tensor::vector(ga))]
            }
            Op::BroadcastCols(a) => {
                let (t, _) = g.dims2();
                let ga = (0..t).map(|r| g.row(r).iter().sum()).collect();
                vec![(*a, Tensor::vector(ga))]
            }
            Op::Transpose(a) => vec![(*a, g.transposed())],
            Op::MatMul(a, b) => {
                let (m, k) = val(*a).dims2();
                let (_, n) = val(*b).dims2();
                let mut res = Vec::new();
                if need(*a) {
                    let bt = transpose(val(*b).data(), k, n);
                    res.push((*a, Tensor::new(&[m, k], matmul(g.data(), &bt, m, n, k))));
                }
                if need(*b) {
                    let at = transpose(val(*a).data(), m, k);
                    res.push((*b, Tensor::new(&[k, n], matmul(&at, g.data(), k, m, n))));
                }
                res
            }
            Op::Linear(x, w, b) => {
                let (t, din) = val(*x).dims2();
                let (dout, _) = val(*w).dims2();
                let (xv, wv, gv) = (val(*x).data(), val(*w).data(), g.data());
                let mut res = Vec::new();
                if need(*x) {
                    res.push((*x, Tensor::new(&[t, din], matmul(gv, wv, t, dout, din))));
                }
                if need(*w) {
                    let gt = transpose(gv, t, dout);
                    res.push((*w, Tensor::new(&[dout, din], matmul(&gt, xv, dout, t, din))));
                }
                if let Some(b) = b {
                    let mut gb = vec![0.0; dout];
                    for r in 0..t {
                        for (o, x) in gb.iter_mut().zip(&gv[r * dout..(r + 1) * dout]) {
                            *o += x;
                        }
                    }
                    res.push((*b, Tensor::vector(gb)));
                }
                res
            }
            Op::Conv1d(x, w, b, spec) => {
                let (cin, l) = val(*x).dims2();
                let (cout, _, k) = val(*w).dims3();
                let xp = pad1d(
                    val(*x).data(),
                    cin,
                    l,
                    spec.pad_left,
                    spec.pad_right,
                    spec.pad_mode,
                );
                let lp = l + spec.pad_left + spec.pad_right;
                let (_, lout) = g.dims2();
                let dims = Conv1dDims {
                    cin,
                    lp,
                    cout,
                    k,
                    stride: spec.stride,
                    dilation: spec.dilation,
                    lout,
                };
                let (gxp, gw, gb) = conv1d_backward(&xp, val(*w).data(), g.data(), &dims, need(*x));
                let mut res = vec![(*w, Tensor::new(val(*w).shape(), gw))];
                if need(*x) {
                    let gx =
                        unpad1d_grad(&gxp, cin, l, spec.pad_left, spec.pad_right, spec.pad_mode);
                    res.push((*x, Tensor::new(&[cin, l], gx)));
                }
                if let Some(b) = b {
                    res.push((*b, Tensor::vector(gb)));
                }
                res
            }
            Op::ConvTranspose1d(x, w, b, stride, trim_left) => {
                let (cin, l) = val(*x).dims2();
                let (_, cout, k) = val(*w).dims3();
                let (_, lout) = g.dims2();
                let dims = ConvT1dDims {
                    cin,
                    l,
                    cout,
                    k,
                    stride: *stride,
                    trim_left: *trim_left,
                    lout,
                };
                let (gx, gw, gb) =
                    conv_t1d_backward(val(*x).data(), val(*w).data(), g.data(), &dims, need(*x));
                let mut res = vec![(*w, Tensor::new(val(*w).shape(), gw))];
                if need(*x) {
                    res.push((*x, Tensor::new(&[cin, l], gx)));
                }
                if let Some(b) = b {
                    res.push((*b, Tensor::vector(gb)));
                }
                res
            }
            Op::Conv2d(x, w, b, spec) => {
                let dims = self.conv2d_dims(*x, *w, spec);
                let xp = pad2d(val(*x).data(), &dims);
                let (gx, gw, gb) = conv2d_backward(&xp, val(*w).data(), g.data(), &dims, need(*x));
                let mut res = vec![(*w, Tensor::new(val(*w).shape(), gw))];
                if need(*x) {
                    res.push((*x, Tensor::new(val(*x).shape(), gx)));
                }
                if let Some(b) = b {
                    res.push((*b, Tensor::vector(gb)));
                }
                res
            }
            Op::LayerNorm(x, gamma, beta, eps) => {
                let (t, d) = val(*x).dims2();
                let xv = val(*x).data();
                let gam = val(*gamma).data();
                let (mean, rstd) = layer_norm_stats(xv, t, d, *eps);
                let gv = g.data();
                let mut gx = vec![0.0; t * d];
                let mut ggam = vec![0.0; d];
                let mut gbeta = vec![0.0; d];
                for r in 0..t {
                    let mut sum_dxh = 0.0;
                    let mut sum_dxh_xh = 0.0;
                    for c in 0..d {
                        let xh = (xv[r * d + c] - mean[r]) * rstd[r];
                        let gy = gv[r * d + c];
                        ggam[c] += gy * xh;
                        gbeta[c] += gy;
                        let dxh = gy * gam[c];
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * xh;
                    }
                    let (m1, m2) = (sum_dxh / d as f64, sum_dxh_xh / d as f64);
                    for c in 0..d {
                        let xh = (xv[r * d + c] - mean[r]) * rstd[r];
                        let dxh = gv[r * d + c] * gam[c];
                        gx[r * d + c] = rstd[r] * (dxh - m1 - xh * m2);
                    }
                }
                vec![
                    (*x, Tensor::new(&[t, d], gx)),
                    (*gamma, Tensor::vector(ggam)),
                    (*beta, Tensor::vector(gbeta)),
                ]
            }
            Op::SoftmaxRows(a) => {
                let (t, d) = out.dims2();
                let (y, gv) = (out.data(), g.data());
                let mut ga = vec![0.0; t * d];
                for r in 0..t {
                    let dot: f64 = (0..d).map(|c| y[r * d + c] * gv[r * d + c]).sum();
                    for c in 0..d {
                        ga[r * d + c] = y[r * d + c] * (gv[r * d + c] - dot);
                    }
                }
                vec![(*a, Tensor::new(&[t, d], ga))]
            }
            Op::Concat(parts) => {
                let total = *out.shape().last().unwrap();
                let outer = out.numel() / total;
                let mut off = 0;
                let mut res = Vec::with_capacity(parts.len());
                for &p in parts {
                    let shape = val(p).shape();
                    let w = shape[shape.len() - 1];
                    let mut gp = Vec::with_capacity(outer * w);
                    for o in 0..outer {
                        gp.extend_from_slice(&g.data()[o * total + off..o * total + off + w]);
                    }
                    res.push((p, Tensor::new(shape, gp)));
                    off += w;
                }
                res
            }
            Op::SliceLast(a, start, end) => {
                let shape = val(*a).shape();
                let w = shape[shape.len() - 1];
                let outer = val(*a).numel() / w;
                let n = end - start;
                let mut ga = vec![0.0; val(*a).numel()];
                for o in 0..outer {
                    ga[o * w + start..o * w + end].copy_from_slice(&g.data()[o * n..(o + 1) * n]);
                }
                vec![(*a, Tensor::new(shape, ga))]
            }
            Op::Index(a, idx) => {
                let mut ga = Tensor::zeros(val(*a).shape());
                ga.data_mut()[*idx] = g.item();
                vec![(*a, ga)]
            }
            Op::Reshape(a) => vec![(*a, g.clone().reshaped(val(*a).shape()))],
            Op::PadEnd(a) => {
                let n = val(*a).numel();
                vec![(*a, Tensor::vector(g.data()[..n].to_vec()))]
            }
            Op::Stft(a, spec) => {
                let (_, frames, bins) = g.dims3();
                let n = frames * bins;
                let gx = dsp::stft_complex_backward(
                    val(*a).numel(),
                    spec.n_fft,
                    spec.hop,
                    spec.win,
                    &g.data()[..n],
                    &g.data()[n..],
                );
                vec![(*a, Tensor::vector(gx))]
            }
            Op::ComplexPower(a) => {
                let x = val(*a).data();
                let n = g.numel();
                let mut ga = vec![0.0; 2 * n];
                for i in 0..n {
                    ga[i] = 2.0 * x[i] * g.data()[i];
                    ga[n + i] = 2.0 * x[n + i] * g.data()[i];
                }
                vec![(*a, Tensor::new(val(*a).shape(), ga))]
            }
            Op::WeightNorm(v, gn) => {
                let vt = val(*v);
                let rows = vt.shape()[0];
                let per = vt.numel() / rows;
                let gvals = val(*gn).data();
                let mut gv = vec![0.0; vt.numel()];
                let mut gg = vec![0.0; rows];
                for o in 0..rows {
                    let row = &vt.data()[o * per..(o + 1) * per];
                    let grow = &g.data()[o * per..(o + 1) * per];
                    let norm = libm::sqrt(row.iter().map(|x| x * x).sum::<f64>());
                    let dot: f64 = row.iter().zip(grow).map(|(x, y)| x * y).sum::<f64>() / norm;
                    gg[o] = dot;
                    for j in 0..per {
                        let vhat = row[j] / norm;
                        gv[o * per + j] = gvals[o] / norm * (grow[j] - dot * vhat);
                    }
                }
                vec![
                    (*v, Tensor::new(vt.shape(), gv)),
                    (*gn, Tensor::new(val(*gn).shape(), gg)),
                ]
            }
            Op::StraightThrough(z) => vec![(*z, g.clone())],
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}
