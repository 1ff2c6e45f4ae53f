//! A small reverse-mode automatic differentiation tape over [`Tensor`]s.
//!
//! A [`Graph`] records every operation applied to its variables. Calling
//! [`Graph::backward`] on a scalar variable returns gradients for every leaf
//! that was registered as trainable. Constants never receive gradients, which
//! is how the training loop freezes one network while updating another.

mod kernels;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use kernels::ConvGeom;

pub(crate) use kernels::sigmoid;

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Sigmoid(Var),
    Log(Var),
    Square(Var),
    Abs(Var),
    Mean(Var),
    Sum(Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    InstanceNorm {
        x: Var,
        sigmas: Vec<f64>,
        eps: f64,
    },
    ChannelAffine {
        x: Var,
        gamma: Var,
        beta: Var,
    },
    GatherRows {
        table: Var,
        idx: Vec<usize>,
    },
    Glu(Var),
    PixelShuffle(Var, usize),
    Reshape(Var),
    PadH(Var),
    CropH(Var),
    Concat(Var, Var),
    SumSpatial(Var),
    MatMul(Var, Var),
    AddRowBias(Var, Var),
    RowDot(Var, Var),
    LogSoftmax(Var),
    Pick(Var, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Operation tape. Build one per forward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to the trainable leaves of a graph.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` when `v` does not influence the output
    /// or was recorded as a constant.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// A constant copy of `v`: same value, no gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn zip_with(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(ta, tb, what)?;
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with(a, b, "add", |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let t = self.value(a).map(|v| v * s);
        self.push(t, Op::Scale(a, s), &[a])
    }

    pub fn offset(&mut self, a: Var, s: f64) -> Var {
        let t = self.value(a).map(|v| v + s);
        self.push(t, Op::Offset(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.value(a).map(sigmoid);
        self.push(t, Op::Sigmoid(a), &[a])
    }

    pub fn log(&mut self, a: Var) -> Var {
        let t = self.value(a).map(f64::ln);
        self.push(t, Op::Log(a), &[a])
    }

    pub fn square(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|v| v * v);
        self.push(t, Op::Square(a), &[a])
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let t = self.value(a).map(f64::abs);
        self.push(t, Op::Abs(a), &[a])
    }

    /// Mean over all elements, as a scalar.
    pub fn mean(&mut self, a: Var) -> Var {
        let t = Tensor::scalar(self.value(a).mean());
        self.push(t, Op::Mean(a), &[a])
    }

    /// Sum over all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let t = Tensor::scalar(self.value(a).sum());
        self.push(t, Op::Sum(a), &[a])
    }

    /// 2D cross-correlation with zero padding. `x: [B, Ci, H, W]`,
    /// `w: [Co, Ci, kh, kw]`, optional `b: [Co]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Result<Var> {
        let geom = ConvGeom::new(self.value(x), self.value(w), stride, pad)?;
        let out = kernels::conv2d_forward(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            &geom,
        )?;
        let mut parents = vec![x, w];
        parents.extend(b);
        Ok(self.push(out, Op::Conv2d { x, w, b, geom }, &parents))
    }

    /// Instance normalization over the spatial extent of each
    /// `(batch, channel)` slice, with the standard deviation floored at `eps`.
    pub fn instance_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        let (out, sigmas) = kernels::instance_norm_forward(self.value(x), eps)?;
        Ok(self.push(out, Op::InstanceNorm { x, sigmas, eps }, &[x]))
    }

    /// `y[b,c,..] = x[b,c,..] * gamma[b,c] + beta[b,c]`.
    pub fn channel_affine(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (b, c, h, w) = self.value(x).dims4()?;
        for t in [gamma, beta] {
            if self.value(t).shape() != [b, c] {
                return Err(Error::Shape(format!(
                    "channel affine expects [{b}, {c}], got {:?}",
                    self.value(t).shape()
                )));
            }
        }
        let n = h * w;
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let mut out = Vec::with_capacity(self.value(x).len());
        for (i, slice) in self.value(x).data().chunks(n).enumerate() {
            out.extend(slice.iter().map(|v| v * gv[i] + bv[i]));
        }
        let t = Tensor::new(vec![b, c, h, w], out)?;
        Ok(self.push(t, Op::ChannelAffine { x, gamma, beta }, &[x, gamma, beta]))
    }

    /// Selects rows of a `[R, C]` table, giving `[idx.len(), C]`.
    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Result<Var> {
        let (rows, cols) = self.value(table).dims2()?;
        let mut out = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            if i >= rows {
                return Err(Error::Shape(format!("row {i} out of range for {rows} rows")));
            }
            out.extend_from_slice(&self.value(table).data()[i * cols..(i + 1) * cols]);
        }
        let t = Tensor::new(vec![idx.len(), cols], out)?;
        Ok(self.push(
            t,
            Op::GatherRows {
                table,
                idx: idx.to_vec(),
            },
            &[table],
        ))
    }

    /// Gated linear unit along the channel axis: first half times the
    /// sigmoid of the second half.
    pub fn glu(&mut self, x: Var) -> Result<Var> {
        let t = kernels::glu_forward(self.value(x))?;
        Ok(self.push(t, Op::Glu(x), &[x]))
    }

    pub fn pixel_shuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let t = kernels::pixel_shuffle_forward(self.value(x), r)?;
        Ok(self.push(t, Op::PixelShuffle(x, r), &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        Ok(self.push(t, Op::Reshape(x), &[x]))
    }

    /// Zero-pads axis 2 of a rank-4 tensor at the end up to `height`.
    pub fn pad_height(&mut self, x: Var, height: usize) -> Result<Var> {
        let (b, c, h, w) = self.value(x).dims4()?;
        if height < h {
            return Err(Error::Shape(format!("cannot pad height {h} down to {height}")));
        }
        let mut out = vec![0.0; b * c * height * w];
        for (src, dst) in self
            .value(x)
            .data()
            .chunks(h * w)
            .zip(out.chunks_mut(height * w))
        {
            dst[..h * w].copy_from_slice(src);
        }
        let t = Tensor::new(vec![b, c, height, w], out)?;
        Ok(self.push(t, Op::PadH(x), &[x]))
    }

    /// Keeps the first `height` rows of axis 2 of a rank-4 tensor.
    pub fn crop_height(&mut self, x: Var, height: usize) -> Result<Var> {
        let (b, c, h, w) = self.value(x).dims4()?;
        if height > h {
            return Err(Error::Shape(format!("cannot crop height {h} up to {height}")));
        }
        let mut out = Vec::with_capacity(b * c * height * w);
        for src in self.value(x).data().chunks(h * w) {
            out.extend_from_slice(&src[..height * w]);
        }
        let t = Tensor::new(vec![b, c, height, w], out)?;
        Ok(self.push(t, Op::CropH(x), &[x]))
    }

    /// Concatenates two rank-4 tensors along the channel axis.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ba, ca, ha, wa) = self.value(a).dims4()?;
        let (bb, cb, hb, wb) = self.value(b).dims4()?;
        if (ba, ha, wa) != (bb, hb, wb) {
            return Err(Error::Shape("concat needs matching batch and spatial dims".into()));
        }
        let (pa, pb) = (ca * ha * wa, cb * hb * wb);
        let mut out = Vec::with_capacity(ba * (pa + pb));
        for (sa, sb) in self
            .value(a)
            .data()
            .chunks(pa)
            .zip(self.value(b).data().chunks(pb))
        {
            out.extend_from_slice(sa);
            out.extend_from_slice(sb);
        }
        let t = Tensor::new(vec![ba, ca + cb, ha, wa], out)?;
        Ok(self.push(t, Op::Concat(a, b), &[a, b]))
    }

    /// Global sum pooling: `[B, C, H, W] -> [B, C]`.
    pub fn sum_spatial(&mut self, x: Var) -> Result<Var> {
        let (b, c, h, w) = self.value(x).dims4()?;
        let out = self.value(x).data().chunks(h * w).map(|s| s.iter().sum()).collect();
        let t = Tensor::new(vec![b, c], out)?;
        Ok(self.push(t, Op::SumSpatial(x), &[x]))
    }

    /// `[M, K] · [K, N]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2()?;
        let (k2, n) = self.value(b).dims2()?;
        if k != k2 {
            return Err(Error::Shape(format!("matmul inner dims {k} vs {k2}")));
        }
        let mut out = vec![0.0; m * n];
        kernels::gemm(
            m,
            k,
            n,
            self.value(a).data(),
            (k, 1),
            self.value(b).data(),
            (n, 1),
            0.0,
            &mut out,
        );
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.push(t, Op::MatMul(a, b), &[a, b]))
    }

    /// `[M, N] + [N]` broadcast over rows.
    pub fn add_row_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (_, n) = self.value(a).dims2()?;
        if self.value(bias).len() != n {
            return Err(Error::Shape(format!("row bias needs {n} entries")));
        }
        let bv = self.value(bias).data();
        let out = self
            .value(a)
            .data()
            .chunks(n)
            .flat_map(|row| row.iter().zip(bv).map(|(x, y)| x + y))
            .collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), out)?;
        Ok(self.push(t, Op::AddRowBias(a, bias), &[a, bias]))
    }

    /// Row-wise inner product of two `[B, C]` tensors, giving `[B]`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "row_dot")?;
        let (rows, cols) = self.value(a).dims2()?;
        let out = self
            .value(a)
            .data()
            .chunks(cols)
            .zip(self.value(b).data().chunks(cols))
            .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum())
            .collect();
        let t = Tensor::new(vec![rows], out)?;
        Ok(self.push(t, Op::RowDot(a, b), &[a, b]))
    }

    /// Row-wise log-softmax of a `[B, N]` tensor.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let (_, n) = self.value(x).dims2()?;
        let mut out = Vec::with_capacity(self.value(x).len());
        for row in self.value(x).data().chunks(n) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            out.extend(row.iter().map(|v| v - lse));
        }
        let t = Tensor::new(self.value(x).shape().to_vec(), out)?;
        Ok(self.push(t, Op::LogSoftmax(x), &[x]))
    }

    /// Picks `x[b, idx[b]]` from a `[B, N]` tensor, giving `[B]`.
    pub fn pick(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (rows, n) = self.value(x).dims2()?;
        if idx.len() != rows || idx.iter().any(|&i| i >= n) {
            return Err(Error::Shape("pick indices do not match [B, N]".into()));
        }
        let out = idx
            .iter()
            .enumerate()
            .map(|(b, &i)| self.value(x).data()[b * n + i])
            .collect();
        let t = Tensor::new(vec![rows], out)?;
        Ok(self.push(t, Op::Pick(x, idx.to_vec()), &[x]))
    }

    /// Reverse pass from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar, got {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].needs_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) || !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn accum(&self, grads: &mut [Option<Tensor>], v: Var, t: Tensor) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => g.add_assign(&t),
            slot @ None => *slot = Some(t),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn backprop_node(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let val = |v: Var| self.value(v);
        let elementwise = |v: Var, f: &dyn Fn(f64, f64) -> f64| {
            let d = val(v).data().iter().zip(g.data()).map(|(x, gi)| f(*x, *gi)).collect();
            Tensor::new(val(v).shape().to_vec(), d).expect("grad shape")
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accum(grads, *a, g.clone());
                self.accum(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accum(grads, *a, g.clone());
                self.accum(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    let t = elementwise(*b, &|y, gi| y * gi);
                    self.accum(grads, *a, t);
                }
                if self.wants(*b) {
                    let t = elementwise(*a, &|x, gi| x * gi);
                    self.accum(grads, *b, t);
                }
            }
            Op::Scale(a, s) => self.accum(grads, *a, g.map(|v| v * s)),
            Op::Offset(a) => self.accum(grads, *a, g.clone()),
            Op::Sigmoid(a) => {
                let y = &node.value;
                let d = y.data().iter().zip(g.data()).map(|(y, gi)| gi * y * (1.0 - y)).collect();
                self.accum(grads, *a, Tensor::new(y.shape().to_vec(), d).expect("grad shape"));
            }
            Op::Log(a) => {
                let t = elementwise(*a, &|x, gi| gi / x);
                self.accum(grads, *a, t);
            }
            Op::Square(a) => {
                let t = elementwise(*a, &|x, gi| 2.0 * x * gi);
                self.accum(grads, *a, t);
            }
            Op::Abs(a) => {
                let t = elementwise(*a, &|x, gi| {
                    if x > 0.0 {
                        gi
                    } else if x < 0.0 {
                        -gi
                    } else {
                        0.0
                    }
                });
                self.accum(grads, *a, t);
            }
            Op::Mean(a) => {
                let n = val(*a).len() as f64;
                self.accum(grads, *a, Tensor::full(val(*a).shape(), g.item() / n));
            }
            Op::Sum(a) => {
                self.accum(grads, *a, Tensor::full(val(*a).shape(), g.item()));
            }
            Op::Conv2d { x, w, b, geom } => {
                let need = (self.wants(*x), self.wants(*w), b.is_some_and(|b| self.wants(b)));
                let cg = kernels::conv2d_backward(val(*x), val(*w), g, geom, need);
                if let Some(dx) = cg.dx {
                    self.accum(grads, *x, dx);
                }
                if let Some(dw) = cg.dw {
                    self.accum(grads, *w, dw);
                }
                if let (Some(b), Some(db)) = (b, cg.db) {
                    self.accum(grads, *b, db);
                }
            }
            Op::InstanceNorm { x, sigmas, eps } => {
                let dx = kernels::instance_norm_backward(&node.value, sigmas, *eps, g);
                self.accum(grads, *x, dx);
            }
            Op::ChannelAffine { x, gamma, beta } => {
                let xs = val(*x);
                let n = xs.shape()[2] * xs.shape()[3];
                let gv = val(*gamma).data();
                if self.wants(*x) {
                    let mut d = Vec::with_capacity(xs.len());
                    for (i, gs) in g.data().chunks(n).enumerate() {
                        d.extend(gs.iter().map(|v| v * gv[i]));
                    }
                    self.accum(grads, *x, Tensor::new(xs.shape().to_vec(), d).expect("grad"));
                }
                if self.wants(*gamma) {
                    let d = g
                        .data()
                        .chunks(n)
                        .zip(xs.data().chunks(n))
                        .map(|(gs, xs)| gs.iter().zip(xs).map(|(a, b)| a * b).sum())
                        .collect();
                    let t = Tensor::new(val(*gamma).shape().to_vec(), d).expect("grad");
                    self.accum(grads, *gamma, t);
                }
                if self.wants(*beta) {
                    let d = g.data().chunks(n).map(|gs| gs.iter().sum()).collect();
                    let t = Tensor::new(val(*beta).shape().to_vec(), d).expect("grad");
                    self.accum(grads, *beta, t);
                }
            }
            Op::GatherRows { table, idx } => {
                let cols = val(*table).shape()[1];
                let mut d = Tensor::zeros(val(*table).shape());
                for (row, &i) in g.data().chunks(cols).zip(idx) {
                    for (dst, v) in d.data_mut()[i * cols..(i + 1) * cols].iter_mut().zip(row) {
                        *dst += v;
                    }
                }
                self.accum(grads, *table, d);
            }
            Op::Glu(x) => {
                let dx = kernels::glu_backward(val(*x), g);
                self.accum(grads, *x, dx);
            }
            Op::PixelShuffle(x, r) => {
                let dx = kernels::pixel_shuffle_backward(val(*x).shape(), g, *r);
                self.accum(grads, *x, dx);
            }
            Op::Reshape(x) => {
                let dx = g.clone().reshape(val(*x).shape()).expect("reshape grad");
                self.accum(grads, *x, dx);
            }
            Op::PadH(x) => {
                let xs = val(*x).shape();
                let (h, w) = (xs[2], xs[3]);
                let hp = g.shape()[2];
                let mut d = Vec::with_capacity(val(*x).len());
                for src in g.data().chunks(hp * w) {
                    d.extend_from_slice(&src[..h * w]);
                }
                self.accum(grads, *x, Tensor::new(xs.to_vec(), d).expect("grad"));
            }
            Op::CropH(x) => {
                let xs = val(*x).shape();
                let (h, w) = (xs[2], xs[3]);
                let hc = g.shape()[2];
                let mut d = vec![0.0; val(*x).len()];
                for (src, dst) in g.data().chunks(hc * w).zip(d.chunks_mut(h * w)) {
                    dst[..hc * w].copy_from_slice(src);
                }
                self.accum(grads, *x, Tensor::new(xs.to_vec(), d).expect("grad"));
            }
            Op::Concat(a, b) => {
                let (sa, sb) = (val(*a).shape(), val(*b).shape());
                let pa = sa[1] * sa[2] * sa[3];
                let pb = sb[1] * sb[2] * sb[3];
                let mut da = Vec::with_capacity(val(*a).len());
                let mut db = Vec::with_capacity(val(*b).len());
                for chunk in g.data().chunks(pa + pb) {
                    da.extend_from_slice(&chunk[..pa]);
                    db.extend_from_slice(&chunk[pa..]);
                }
                self.accum(grads, *a, Tensor::new(sa.to_vec(), da).expect("grad"));
                self.accum(grads, *b, Tensor::new(sb.to_vec(), db).expect("grad"));
            }
            Op::SumSpatial(x) => {
                let xs = val(*x).shape();
                let n = xs[2] * xs[3];
                let d = g.data().iter().flat_map(|&v| std::iter::repeat_n(v, n)).collect();
                self.accum(grads, *x, Tensor::new(xs.to_vec(), d).expect("grad"));
            }
            Op::MatMul(a, b) => {
                let (m, k) = (val(*a).shape()[0], val(*a).shape()[1]);
                let n = val(*b).shape()[1];
                if self.wants(*a) {
                    let mut d = vec![0.0; m * k];
                    kernels::gemm(m, n, k, g.data(), (n, 1), val(*b).data(), (1, n), 0.0, &mut d);
                    self.accum(grads, *a, Tensor::new(vec![m, k], d).expect("grad"));
                }
                if self.wants(*b) {
                    let mut d = vec![0.0; k * n];
                    kernels::gemm(k, m, n, val(*a).data(), (1, k), g.data(), (n, 1), 0.0, &mut d);
                    self.accum(grads, *b, Tensor::new(vec![k, n], d).expect("grad"));
                }
            }
            Op::AddRowBias(a, bias) => {
                self.accum(grads, *a, g.clone());
                if self.wants(*bias) {
                    let n = val(*bias).len();
                    let mut d = vec![0.0; n];
                    for row in g.data().chunks(n) {
                        for (dst, v) in d.iter_mut().zip(row) {
                            *dst += v;
                        }
                    }
                    let t = Tensor::new(val(*bias).shape().to_vec(), d).expect("grad");
                    self.accum(grads, *bias, t);
                }
            }
            Op::RowDot(a, b) => {
                let cols = val(*a).shape()[1];
                let scaled = |other: Var| {
                    let d = val(other)
                        .data()
                        .chunks(cols)
                        .zip(g.data())
                        .flat_map(|(row, gi)| row.iter().map(move |v| v * gi))
                        .collect();
                    Tensor::new(val(other).shape().to_vec(), d).expect("grad")
                };
                if self.wants(*a) {
                    self.accum(grads, *a, scaled(*b));
                }
                if self.wants(*b) {
                    self.accum(grads, *b, scaled(*a));
                }
            }
            Op::LogSoftmax(x) => {
                let n = node.value.shape()[1];
                let mut d = Vec::with_capacity(node.value.len());
                for (ys, gs) in node.value.data().chunks(n).zip(g.data().chunks(n)) {
                    let gsum: f64 = gs.iter().sum();
                    d.extend(ys.iter().zip(gs).map(|(y, gi)| gi - y.exp() * gsum));
                }
                self.accum(grads, *x, Tensor::new(node.value.shape().to_vec(), d).expect("grad"));
            }
            Op::Pick(x, idx) => {
                let n = val(*x).shape()[1];
                let mut d = Tensor::zeros(val(*x).shape());
                for (b, (&i, gi)) in idx.iter().zip(g.data()).enumerate() {
                    d.data_mut()[b * n + i] += gi;
                }
                self.accum(grads, *x, d);
            }
        }
    }
}
