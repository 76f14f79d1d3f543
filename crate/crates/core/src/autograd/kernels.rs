//! Dense loops behind the differentiable ops. Layouts are channel-major:
//! 1-D signals are `[C, L]`, 2-D maps are `[C, H, W]`.

use alloc::vec;
use alloc::vec::Vec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PadMode {
    Zero,
    /// Repeat the edge sample.
    Replicate,
}

pub(crate) fn pad1d(
    x: &[f64],
    c: usize,
    l: usize,
    pl: usize,
    pr: usize,
    mode: PadMode,
) -> Vec<f64> {
    let lp = l + pl + pr;
    let mut out = vec![0.0; c * lp];
    for ch in 0..c {
        let src = &x[ch * l..(ch + 1) * l];
        let dst = &mut out[ch * lp..(ch + 1) * lp];
        dst[pl..pl + l].copy_from_slice(src);
        if mode == PadMode::Replicate {
            for v in &mut dst[..pl] {
                *v = src[0];
            }
            for v in &mut dst[pl + l..] {
                *v = src[l - 1];
            }
        }
    }
    out
}

pub(crate) fn unpad1d_grad(
    g: &[f64],
    c: usize,
    l: usize,
    pl: usize,
    pr: usize,
    mode: PadMode,
) -> Vec<f64> {
    let lp = l + pl + pr;
    let mut out = vec![0.0; c * l];
    for ch in 0..c {
        let src = &g[ch * lp..(ch + 1) * lp];
        let dst = &mut out[ch * l..(ch + 1) * l];
        dst.copy_from_slice(&src[pl..pl + l]);
        if mode == PadMode::Replicate {
            dst[0] += src[..pl].iter().sum::<f64>();
            dst[l - 1] += src[pl + l..].iter().sum::<f64>();
        }
    }
    out
}

pub(crate) fn conv_out_len(lp: usize, k: usize, stride: usize, dilation: usize) -> Option<usize> {
    let span = dilation * (k - 1) + 1;
    (lp >= span).then(|| (lp - span) / stride + 1)
}

pub(crate) struct Conv1dDims {
    pub cin: usize,
    pub lp: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub dilation: usize,
    pub lout: usize,
}

pub(crate) fn conv1d_forward(xp: &[f64], w: &[f64], b: Option<&[f64]>, d: &Conv1dDims) -> Vec<f64> {
    let mut out = vec![0.0; d.cout * d.lout];
    for co in 0..d.cout {
        let orow = &mut out[co * d.lout..(co + 1) * d.lout];
        if let Some(b) = b {
            orow.fill(b[co]);
        }
        for ci in 0..d.cin {
            let xrow = &xp[ci * d.lp..(ci + 1) * d.lp];
            for kk in 0..d.k {
                let wv = w[(co * d.cin + ci) * d.k + kk];
                let off = kk * d.dilation;
                if d.stride == 1 {
                    for (o, x) in orow.iter_mut().zip(&xrow[off..off + d.lout]) {
                        *o += wv * x;
                    }
                } else {
                    for (t, o) in orow.iter_mut().enumerate() {
                        *o += wv * xrow[t * d.stride + off];
                    }
                }
            }
        }
    }
    out
}

/// Returns gradients for the padded input, the weight and the bias.
pub(crate) fn conv1d_backward(
    xp: &[f64],
    w: &[f64],
    g: &[f64],
    d: &Conv1dDims,
    need_x: bool,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut gx = if need_x {
        vec![0.0; d.cin * d.lp]
    } else {
        Vec::new()
    };
    let mut gw = vec![0.0; w.len()];
    let mut gb = vec![0.0; d.cout];
    for co in 0..d.cout {
        let grow = &g[co * d.lout..(co + 1) * d.lout];
        gb[co] = grow.iter().sum();
        for ci in 0..d.cin {
            let xrow = &xp[ci * d.lp..(ci + 1) * d.lp];
            for kk in 0..d.k {
                let widx = (co * d.cin + ci) * d.k + kk;
                let off = kk * d.dilation;
                let mut acc = 0.0;
                if d.stride == 1 {
                    for (gv, x) in grow.iter().zip(&xrow[off..off + d.lout]) {
                        acc += gv * x;
                    }
                } else {
                    for (t, gv) in grow.iter().enumerate() {
                        acc += gv * xrow[t * d.stride + off];
                    }
                }
                gw[widx] += acc;
                if need_x {
                    let wv = w[widx];
                    let gxrow = &mut gx[ci * d.lp..(ci + 1) * d.lp];
                    if d.stride == 1 {
                        for (gxv, gv) in gxrow[off..off + d.lout].iter_mut().zip(grow) {
                            *gxv += wv * gv;
                        }
                    } else {
                        for (t, gv) in grow.iter().enumerate() {
                            gxrow[t * d.stride + off] += wv * gv;
                        }
                    }
                }
            }
        }
    }
    (gx, gw, gb)
}

pub(crate) struct ConvT1dDims {
    pub cin: usize,
    pub l: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub trim_left: usize,
    pub lout: usize,
}

impl ConvT1dDims {
    pub fn full_len(&self) -> usize {
        (self.l - 1) * self.stride + self.k
    }
}

/// Transposed convolution, weight layout `[Cin, Cout, K]`.
pub(crate) fn conv_t1d_forward(
    x: &[f64],
    w: &[f64],
    b: Option<&[f64]>,
    d: &ConvT1dDims,
) -> Vec<f64> {
    let lf = d.full_len();
    let mut full = vec![0.0; d.cout * lf];
    for ci in 0..d.cin {
        let xrow = &x[ci * d.l..(ci + 1) * d.l];
        for co in 0..d.cout {
            let frow = &mut full[co * lf..(co + 1) * lf];
            for kk in 0..d.k {
                let wv = w[(ci * d.cout + co) * d.k + kk];
                for (t, xv) in xrow.iter().enumerate() {
                    frow[t * d.stride + kk] += wv * xv;
                }
            }
        }
    }
    let mut out = vec![0.0; d.cout * d.lout];
    for co in 0..d.cout {
        let bias = b.map_or(0.0, |b| b[co]);
        for t in 0..d.lout {
            out[co * d.lout + t] = full[co * lf + t + d.trim_left] + bias;
        }
    }
    out
}

pub(crate) fn conv_t1d_backward(
    x: &[f64],
    w: &[f64],
    g: &[f64],
    d: &ConvT1dDims,
    need_x: bool,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let lf = d.full_len();
    let mut gfull = vec![0.0; d.cout * lf];
    let mut gb = vec![0.0; d.cout];
    for co in 0..d.cout {
        for t in 0..d.lout {
            let gv = g[co * d.lout + t];
            gfull[co * lf + t + d.trim_left] = gv;
            gb[co] += gv;
        }
    }
    let mut gx = if need_x {
        vec![0.0; d.cin * d.l]
    } else {
        Vec::new()
    };
    let mut gw = vec![0.0; w.len()];
    for ci in 0..d.cin {
        let xrow = &x[ci * d.l..(ci + 1) * d.l];
        for co in 0..d.cout {
            let grow = &gfull[co * lf..(co + 1) * lf];
            for kk in 0..d.k {
                let widx = (ci * d.cout + co) * d.k + kk;
                let wv = w[widx];
                let mut acc = 0.0;
                for (t, xv) in xrow.iter().enumerate() {
                    let gv = grow[t * d.stride + kk];
                    acc += xv * gv;
                    if need_x {
                        gx[ci * d.l + t] += wv * gv;
                    }
                }
                gw[widx] += acc;
            }
        }
    }
    (gx, gw, gb)
}

pub(crate) struct Conv2dDims {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub dilation: (usize, usize),
    pub ho: usize,
    pub wo: usize,
}

impl Conv2dDims {
    fn hp(&self) -> usize {
        self.h + 2 * self.padding.0
    }
    fn wp(&self) -> usize {
        self.w + 2 * self.padding.1
    }
}

pub(crate) fn pad2d(x: &[f64], d: &Conv2dDims) -> Vec<f64> {
    let (hp, wp) = (d.hp(), d.wp());
    let mut out = vec![0.0; d.cin * hp * wp];
    for c in 0..d.cin {
        for i in 0..d.h {
            let src = &x[(c * d.h + i) * d.w..(c * d.h + i + 1) * d.w];
            let start = (c * hp + i + d.padding.0) * wp + d.padding.1;
            out[start..start + d.w].copy_from_slice(src);
        }
    }
    out
}

fn unpad2d(g: &[f64], d: &Conv2dDims) -> Vec<f64> {
    let (hp, wp) = (d.hp(), d.wp());
    let mut out = vec![0.0; d.cin * d.h * d.w];
    for c in 0..d.cin {
        for i in 0..d.h {
            let start = (c * hp + i + d.padding.0) * wp + d.padding.1;
            out[(c * d.h + i) * d.w..(c * d.h + i + 1) * d.w]
                .copy_from_slice(&g[start..start + d.w]);
        }
    }
    out
}

pub(crate) fn conv2d_forward(xp: &[f64], w: &[f64], b: Option<&[f64]>, d: &Conv2dDims) -> Vec<f64> {
    let (hp, wp) = (d.hp(), d.wp());
    let (sh, sw) = d.stride;
    let (dh, dw) = d.dilation;
    let plane = d.ho * d.wo;
    let mut out = vec![0.0; d.cout * plane];
    for co in 0..d.cout {
        let oplane = &mut out[co * plane..(co + 1) * plane];
        if let Some(b) = b {
            oplane.fill(b[co]);
        }
        for ci in 0..d.cin {
            let xplane = &xp[ci * hp * wp..(ci + 1) * hp * wp];
            for i in 0..d.kh {
                for j in 0..d.kw {
                    let wv = w[((co * d.cin + ci) * d.kh + i) * d.kw + j];
                    if wv == 0.0 {
                        continue;
                    }
                    for ho in 0..d.ho {
                        let xrow = &xplane[(ho * sh + i * dh) * wp..];
                        let orow = &mut oplane[ho * d.wo..(ho + 1) * d.wo];
                        for (wo, o) in orow.iter_mut().enumerate() {
                            *o += wv * xrow[wo * sw + j * dw];
                        }
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn conv2d_backward(
    xp: &[f64],
    w: &[f64],
    g: &[f64],
    d: &Conv2dDims,
    need_x: bool,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (hp, wp) = (d.hp(), d.wp());
    let (sh, sw) = d.stride;
    let (dh, dw) = d.dilation;
    let plane = d.ho * d.wo;
    let mut gxp = if need_x {
        vec![0.0; d.cin * hp * wp]
    } else {
        Vec::new()
    };
    let mut gw = vec![0.0; w.len()];
    let mut gb = vec![0.0; d.cout];
    for co in 0..d.cout {
        let gplane = &g[co * plane..(co + 1) * plane];
        gb[co] = gplane.iter().sum();
        for ci in 0..d.cin {
            let xplane = &xp[ci * hp * wp..(ci + 1) * hp * wp];
            for i in 0..d.kh {
                for j in 0..d.kw {
                    let widx = ((co * d.cin + ci) * d.kh + i) * d.kw + j;
                    let wv = w[widx];
                    let mut acc = 0.0;
                    for ho in 0..d.ho {
                        let row0 = (ho * sh + i * dh) * wp;
                        let grow = &gplane[ho * d.wo..(ho + 1) * d.wo];
                        for (wo, gv) in grow.iter().enumerate() {
                            acc += gv * xplane[row0 + wo * sw + j * dw];
                        }
                        if need_x {
                            let gxplane = &mut gxp[ci * hp * wp..(ci + 1) * hp * wp];
                            for (wo, gv) in grow.iter().enumerate() {
                                gxplane[row0 + wo * sw + j * dw] += wv * gv;
                            }
                        }
                    }
                    gw[widx] += acc;
                }
            }
        }
    }
    let gx = if need_x { unpad2d(&gxp, d) } else { Vec::new() };
    (gx, gw, gb)
}

pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (o, bv) in orow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    out
}

pub(crate) fn transpose(a: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}

/// `y = x Wᵀ + b` with `x: [T, in]`, `W: [out, in]`.
pub(crate) fn linear_forward(
    x: &[f64],
    w: &[f64],
    b: Option<&[f64]>,
    t: usize,
    din: usize,
    dout: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; t * dout];
    for r in 0..t {
        let xrow = &x[r * din..(r + 1) * din];
        for o in 0..dout {
            let wrow = &w[o * din..(o + 1) * din];
            let mut acc = b.map_or(0.0, |b| b[o]);
            for (xv, wv) in xrow.iter().zip(wrow) {
                acc += xv * wv;
            }
            out[r * dout + o] = acc;
        }
    }
    out
}

pub(crate) fn layer_norm_stats(x: &[f64], t: usize, d: usize, eps: f64) -> (Vec<f64>, Vec<f64>) {
    let mut mean = vec![0.0; t];
    let mut rstd = vec![0.0; t];
    for r in 0..t {
        let row = &x[r * d..(r + 1) * d];
        let mu = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
        mean[r] = mu;
        rstd[r] = 1.0 / libm::sqrt(var + eps);
    }
    (mean, rstd)
}
