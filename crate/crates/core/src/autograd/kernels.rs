//! Forward and backward kernels for the heavier graph operations.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `c = beta * c + a · b` for an `m×k` by `k×n` product. `a` and `b` may be
/// strided views (row stride, column stride); `c` is contiguous row-major.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() >= m * n);
    if k == 0 {
        for v in &mut c[..m * n] {
            *v *= beta;
        }
        return;
    }
    assert!((m - 1) * rsa + (k - 1) * csa < a.len());
    assert!((k - 1) * rsb + (n - 1) * csb < b.len());
    // SAFETY: every index touched by the product lies inside the asserted bounds.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn out_size(n: usize, k: usize, s: usize, p: usize) -> Option<usize> {
    if n + 2 * p < k || s == 0 {
        None
    } else {
        Some((n + 2 * p - k) / s + 1)
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub ph: usize,
    pub pw: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(
        x: &Tensor,
        w: &Tensor,
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Result<Self> {
        let (batch, cin, h, wd) = x.dims4()?;
        let (cout, wcin, kh, kw) = w.dims4()?;
        if wcin != cin {
            return Err(Error::Shape(format!(
                "conv weight expects {wcin} input channels, input has {cin}"
            )));
        }
        let ho = out_size(h, kh, stride.0, pad.0);
        let wo = out_size(wd, kw, stride.1, pad.1);
        match (ho, wo) {
            (Some(ho), Some(wo)) => Ok(Self {
                batch,
                cin,
                h,
                w: wd,
                cout,
                kh,
                kw,
                sh: stride.0,
                sw: stride.1,
                ph: pad.0,
                pw: pad.1,
                ho,
                wo,
            }),
            _ => Err(Error::Shape(format!(
                "kernel {kh}x{kw} does not fit input {h}x{wd}"
            ))),
        }
    }

    fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn p(&self) -> usize {
        self.ho * self.wo
    }
}

fn im2col(x: &[f64], g: &ConvGeom, col: &mut [f64]) {
    let p = g.p();
    for ci in 0..g.cin {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = &mut col[((ci * g.kh + i) * g.kw + j) * p..][..p];
                for oh in 0..g.ho {
                    let ih = (oh * g.sh + i) as isize - g.ph as isize;
                    let dst = &mut row[oh * g.wo..(oh + 1) * g.wo];
                    if ih < 0 || ih >= g.h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[ih as usize * g.w..(ih as usize + 1) * g.w];
                    for (ow, d) in dst.iter_mut().enumerate() {
                        let iw = (ow * g.sw + j) as isize - g.pw as isize;
                        *d = if iw < 0 || iw >= g.w as isize {
                            0.0
                        } else {
                            src[iw as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(col: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let p = g.p();
    for ci in 0..g.cin {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = &col[((ci * g.kh + i) * g.kw + j) * p..][..p];
                for oh in 0..g.ho {
                    let ih = (oh * g.sh + i) as isize - g.ph as isize;
                    if ih < 0 || ih >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[ih as usize * g.w..(ih as usize + 1) * g.w];
                    for ow in 0..g.wo {
                        let iw = (ow * g.sw + j) as isize - g.pw as isize;
                        if iw >= 0 && iw < g.w as isize {
                            dst[iw as usize] += row[oh * g.wo + ow];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward(
    x: &Tensor,
    w: &Tensor,
    bias: Option<&Tensor>,
    g: &ConvGeom,
) -> Result<Tensor> {
    if let Some(b) = bias {
        if b.len() != g.cout {
            return Err(Error::Shape(format!(
                "conv bias has {} entries, expected {}",
                b.len(),
                g.cout
            )));
        }
    }
    let (k, p) = (g.k(), g.p());
    let in_len = g.cin * g.h * g.w;
    let out_len = g.cout * p;
    let mut out = vec![0.0; g.batch * out_len];
    let mut col = vec![0.0; k * p];
    for b in 0..g.batch {
        im2col(&x.data()[b * in_len..(b + 1) * in_len], g, &mut col);
        let ob = &mut out[b * out_len..(b + 1) * out_len];
        if let Some(bias) = bias {
            for (co, chunk) in ob.chunks_mut(p).enumerate() {
                chunk.fill(bias.data()[co]);
            }
        }
        gemm(g.cout, k, p, w.data(), (k, 1), &col, (p, 1), 1.0, ob);
    }
    Tensor::new(vec![g.batch, g.cout, g.ho, g.wo], out)
}

pub(crate) struct ConvGrads {
    pub dx: Option<Tensor>,
    pub dw: Option<Tensor>,
    pub db: Option<Tensor>,
}

pub(crate) fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    gout: &Tensor,
    g: &ConvGeom,
    (need_dx, need_dw, need_db): (bool, bool, bool),
) -> ConvGrads {
    let (k, p) = (g.k(), g.p());
    let in_len = g.cin * g.h * g.w;
    let out_len = g.cout * p;
    let mut dx = need_dx.then(|| vec![0.0; g.batch * in_len]);
    let mut dw = need_dw.then(|| vec![0.0; g.cout * k]);
    let mut db = need_db.then(|| vec![0.0; g.cout]);
    let mut col = vec![0.0; k * p];
    for b in 0..g.batch {
        let go = &gout.data()[b * out_len..(b + 1) * out_len];
        if let Some(db) = db.as_mut() {
            for (co, chunk) in go.chunks(p).enumerate() {
                db[co] += chunk.iter().sum::<f64>();
            }
        }
        if let Some(dw) = dw.as_mut() {
            im2col(&x.data()[b * in_len..(b + 1) * in_len], g, &mut col);
            // dW[co, k] += gout[co, p] · col[k, p]^T
            gemm(g.cout, p, k, go, (p, 1), &col, (1, p), 1.0, dw);
        }
        if let Some(dx) = dx.as_mut() {
            // dcol[k, p] = W[co, k]^T · gout[co, p]
            gemm(k, g.cout, p, w.data(), (1, k), go, (p, 1), 0.0, &mut col);
            col2im(&col, g, &mut dx[b * in_len..(b + 1) * in_len]);
        }
    }
    ConvGrads {
        dx: dx.map(|d| Tensor::new(x.shape().to_vec(), d).expect("dx shape")),
        dw: dw.map(|d| Tensor::new(w.shape().to_vec(), d).expect("dw shape")),
        db: db.map(|d| Tensor::new(vec![g.cout], d).expect("db shape")),
    }
}

/// Per-slice whitening over the trailing two axes. Returns the output and
/// the (possibly floored) standard deviation of each `(batch, channel)` slice.
pub(crate) fn instance_norm_forward(x: &Tensor, eps: f64) -> Result<(Tensor, Vec<f64>)> {
    let (b, c, h, w) = x.dims4()?;
    let n = h * w;
    let mut out = vec![0.0; x.len()];
    let mut sigmas = Vec::with_capacity(b * c);
    for (slice, dst) in x.data().chunks(n).zip(out.chunks_mut(n)) {
        let mean = slice.iter().sum::<f64>() / n as f64;
        let var = slice.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let sigma = var.sqrt().max(eps);
        for (d, v) in dst.iter_mut().zip(slice) {
            *d = (v - mean) / sigma;
        }
        sigmas.push(sigma);
    }
    Ok((Tensor::new(x.shape().to_vec(), out)?, sigmas))
}

pub(crate) fn instance_norm_backward(
    y: &Tensor,
    sigmas: &[f64],
    eps: f64,
    gout: &Tensor,
) -> Tensor {
    let n = y.shape()[2] * y.shape()[3];
    let mut dx = vec![0.0; y.len()];
    for (((ys, gs), dst), &sigma) in y
        .data()
        .chunks(n)
        .zip(gout.data().chunks(n))
        .zip(dx.chunks_mut(n))
        .zip(sigmas)
    {
        let g_mean = gs.iter().sum::<f64>() / n as f64;
        // A floored sigma is a constant, so the y·mean(g·y) term drops out.
        let gy_mean = if sigma > eps {
            gs.iter().zip(ys).map(|(g, y)| g * y).sum::<f64>() / n as f64
        } else {
            0.0
        };
        for ((d, g), y) in dst.iter_mut().zip(gs).zip(ys) {
            *d = (g - g_mean - y * gy_mean) / sigma;
        }
    }
    Tensor::new(y.shape().to_vec(), dx).expect("dx shape")
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn glu_forward(x: &Tensor) -> Result<Tensor> {
    let (b, c2, h, w) = x.dims4()?;
    if c2 % 2 != 0 {
        return Err(Error::Shape(format!("GLU needs an even channel count, got {c2}")));
    }
    let c = c2 / 2;
    let plane = c * h * w;
    let mut out = Vec::with_capacity(b * plane);
    for sample in x.data().chunks(2 * plane) {
        let (lin, gate) = sample.split_at(plane);
        out.extend(lin.iter().zip(gate).map(|(a, g)| a * sigmoid(*g)));
    }
    Tensor::new(vec![b, c, h, w], out)
}

pub(crate) fn glu_backward(x: &Tensor, gout: &Tensor) -> Tensor {
    let plane = gout.len() / x.shape()[0];
    let mut dx = vec![0.0; x.len()];
    for ((sample, gs), dst) in x
        .data()
        .chunks(2 * plane)
        .zip(gout.data().chunks(plane))
        .zip(dx.chunks_mut(2 * plane))
    {
        let (lin, gate) = sample.split_at(plane);
        let (dlin, dgate) = dst.split_at_mut(plane);
        for i in 0..plane {
            let s = sigmoid(gate[i]);
            dlin[i] = gs[i] * s;
            dgate[i] = gs[i] * lin[i] * s * (1.0 - s);
        }
    }
    Tensor::new(x.shape().to_vec(), dx).expect("dx shape")
}

/// `[B, C·r·r, H, W] -> [B, C, H·r, W·r]`.
pub(crate) fn pixel_shuffle_forward(x: &Tensor, r: usize) -> Result<Tensor> {
    let (b, crr, h, w) = x.dims4()?;
    if r == 0 || crr % (r * r) != 0 {
        return Err(Error::Shape(format!(
            "pixel shuffle by {r} needs channels divisible by {}, got {crr}",
            r * r
        )));
    }
    let c = crr / (r * r);
    let mut out = vec![0.0; x.len()];
    shuffle_indices(b, c, h, w, r, |src, dst| out[dst] = x.data()[src]);
    Tensor::new(vec![b, c, h * r, w * r], out)
}

pub(crate) fn pixel_shuffle_backward(x_shape: &[usize], gout: &Tensor, r: usize) -> Tensor {
    let (b, crr, h, w) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
    let c = crr / (r * r);
    let mut dx = vec![0.0; gout.len()];
    shuffle_indices(b, c, h, w, r, |src, dst| dx[src] = gout.data()[dst]);
    Tensor::new(x_shape.to_vec(), dx).expect("dx shape")
}

fn shuffle_indices(
    b: usize,
    c: usize,
    h: usize,
    w: usize,
    r: usize,
    mut f: impl FnMut(usize, usize),
) {
    let (ho, wo) = (h * r, w * r);
    for bi in 0..b {
        for ci in 0..c {
            for i in 0..r {
                for j in 0..r {
                    let src_c = ci * r * r + i * r + j;
                    for hi in 0..h {
                        for wi in 0..w {
                            let src = ((bi * c * r * r + src_c) * h + hi) * w + wi;
                            let dst = ((bi * c + ci) * ho + hi * r + i) * wo + wi * r + j;
                            f(src, dst);
                        }
                    }
                }
            }
        }
    }
}
