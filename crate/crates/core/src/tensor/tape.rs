use super::gemm::gemm;
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    pad: usize,
    h_out: usize,
    w_out: usize,
}

impl ConvGeom {
    fn patch_len(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn positions(&self) -> usize {
        self.h_out * self.w_out
    }

    /// Visits every (column row, output position, input index) triple of the
    /// unfolded input; padding taps are skipped.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize)) {
        let p = self.positions();
        for ci in 0..self.c_in {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (ci * self.k + ky) * self.k + kx;
                    for oy in 0..self.h_out {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let base_in = (ci * self.h + iy as usize) * self.w;
                        let base_col = row * p + oy * self.w_out;
                        for ox in 0..self.w_out {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix < 0 || ix >= self.w as isize {
                                continue;
                            }
                            f(base_col + ox, base_in + ix as usize);
                        }
                    }
                }
            }
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Max(Var, Var),
    Min(Var, Var),
    Sum(Var),
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    Transpose { x: Var, rows: usize, cols: usize },
    Reshape(Var),
    Concat(Vec<Var>),
    GlobalAvgPool { x: Var, hw: usize },
    Softmax { x: Var, outer: usize, len: usize, inner: usize },
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<f64>, classes: usize },
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom, cols: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Record of a forward computation, replayed in reverse by [`Tape::backward`].
///
/// Nodes are appended after their inputs, so reverse insertion order is a
/// reverse topological order and each node is visited once.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

fn shape_err(op: &'static str, detail: String) -> Error {
    Error::Shape { op, detail }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a leaf. Its gradient is tracked when `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let rg = t.requires_grad();
        let mut t = t;
        t.grad = None;
        self.push(t, Op::Leaf, rg)
    }

    /// Records a leaf that always tracks gradients.
    pub fn param(&mut self, t: &Tensor) -> Var {
        self.push(t.detached(), Op::Leaf, true)
    }

    /// Records a leaf that never tracks gradients.
    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.push(t.detached(), Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn zip(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, rec: Op) -> Result<Var> {
        self.same_shape(op, a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(ta.shape(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, rec, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Element-wise maximum; ties route the gradient to `a`.
    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("max", a, b, |x, y| if x.is_nan() || y.is_nan() { f64::NAN } else { x.max(y) }, Op::Max(a, b))
    }

    /// Element-wise minimum; ties route the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("min", a, b, |x, y| if x.is_nan() || y.is_nan() { f64::NAN } else { x.min(y) }, Op::Min(a, b))
    }

    /// Multiplication by a constant that is not differentiated.
    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let t = self.value(x);
        let out = Tensor::new(t.shape(), t.data().iter().map(|v| v * s).collect()).unwrap();
        let rg = self.rg(x);
        self.push(out, Op::Scale(x, s), rg)
    }

    /// NaN passes through, so non-finite inputs still surface in the loss.
    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let out = Tensor::new(t.shape(), t.data().iter().map(|&v| if v > 0.0 || v.is_nan() { v } else { 0.0 }).collect()).unwrap();
        let rg = self.rg(x);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, 1.0, self.value(a).data(), false, self.value(b).data(), false, 0.0, &mut out);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(&[m, n], out)?, Op::MatMul { a, b, m, k, n }, rg))
    }

    /// Transpose of a 2-D tensor.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(shape_err("transpose", format!("expected 2-D, got {s:?}")));
        }
        let (rows, cols) = (s[0], s[1]);
        let src = self.value(x).data();
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                out[c * rows + r] = src[r * cols + c];
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(&[cols, rows], out)?, Op::Transpose { x, rows, cols }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).detached().reshaped(shape)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    /// Concatenation along the leading axis; trailing dimensions must agree.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| shape_err("concat", "no inputs".into()))?;
        let tail = self.shape(*first).get(1..).unwrap_or(&[]).to_vec();
        if self.shape(*first).is_empty() {
            return Err(shape_err("concat", "cannot concatenate scalars".into()));
        }
        let mut lead = 0;
        let mut data = Vec::new();
        for &x in xs {
            let s = self.shape(x);
            if s.is_empty() || s[1..] != tail[..] {
                return Err(shape_err("concat", format!("{s:?} vs trailing {tail:?}")));
            }
            lead += s[0];
            data.extend_from_slice(self.value(x).data());
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        let rg = xs.iter().any(|&x| self.rg(x));
        Ok(self.push(Tensor::new(&shape, data)?, Op::Concat(xs.to_vec()), rg))
    }

    /// Mean over the spatial axes of a `C×H×W` tensor, giving shape `[C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 3 || s[1] * s[2] == 0 {
            return Err(shape_err("global_avg_pool", format!("expected C×H×W, got {s:?}")));
        }
        let (c, hw) = (s[0], s[1] * s[2]);
        let src = self.value(x).data();
        let out: Vec<f64> = (0..c)
            .map(|ci| src[ci * hw..(ci + 1) * hw].iter().sum::<f64>() / hw as f64)
            .collect();
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(&[c], out)?, Op::GlobalAvgPool { x, hw }, rg))
    }

    /// Softmax along `axis`, with the maximum subtracted for stability.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return Err(shape_err("softmax", format!("axis {axis} for shape {s:?}")));
        }
        let src = self.value(x).data();
        if src.iter().any(|v| v.is_nan()) {
            return Err(Error::NonFinite("softmax"));
        }
        let outer: usize = s[..axis].iter().product();
        let len = s[axis];
        let inner: usize = s[axis + 1..].iter().product();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * len + j) * inner + i;
                let mx = (0..len).map(|j| src[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for j in 0..len {
                    let e = (src[at(j)] - mx).exp();
                    out[at(j)] = e;
                    z += e;
                }
                for j in 0..len {
                    out[at(j)] /= z;
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(&s, out)?, Op::Softmax { x, outer, len, inner }, rg))
    }

    /// Mean negative log-likelihood of `labels` under softmax(`logits`).
    ///
    /// `logits` is `[n_classes]` with one label, or `[batch, n_classes]`
    /// with one label per row.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        let (rows, classes) = match s.as_slice() {
            [n] => (1, *n),
            [b, n] => (*b, *n),
            _ => return Err(shape_err("cross_entropy", format!("logits shape {s:?}"))),
        };
        if labels.len() != rows {
            return Err(shape_err(
                "cross_entropy",
                format!("{} labels for {rows} rows", labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidLabel {
                label: bad,
                classes,
            });
        }
        let src = self.value(logits).data();
        if src.iter().any(|v| v.is_nan()) {
            return Err(Error::NonFinite("cross_entropy"));
        }
        let mut probs = vec![0.0; src.len()];
        let mut loss = 0.0;
        for (r, &label) in labels.iter().enumerate() {
            let row = &src[r * classes..(r + 1) * classes];
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - mx).exp()).sum();
            let lse = mx + z.ln();
            loss += lse - row[label];
            for j in 0..classes {
                probs[r * classes + j] = (row[j] - lse).exp();
            }
        }
        loss /= rows as f64;
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
                classes,
            },
            rg,
        ))
    }

    /// Cross-correlation of a `C_in×H×W` input with `C_out×C_in×k×k` weights.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 3 || sw.len() != 4 || sw[1] != sx[0] || sw[2] != sw[3] || stride == 0 {
            return Err(shape_err("conv2d", format!("input {sx:?}, weight {sw:?}, stride {stride}")));
        }
        let (c_in, h, wd) = (sx[0], sx[1], sx[2]);
        let (c_out, k) = (sw[0], sw[2]);
        if h + 2 * pad < k || wd + 2 * pad < k {
            return Err(shape_err("conv2d", format!("kernel {k} larger than padded input {sx:?}")));
        }
        if let Some(b) = bias {
            if self.shape(b) != [c_out] {
                return Err(shape_err("conv2d", format!("bias {:?} for {c_out} outputs", self.shape(b))));
            }
        }
        let geom = ConvGeom {
            c_in,
            h,
            w: wd,
            c_out,
            k,
            stride,
            pad,
            h_out: (h + 2 * pad - k) / stride + 1,
            w_out: (wd + 2 * pad - k) / stride + 1,
        };
        let (kk, p) = (geom.patch_len(), geom.positions());
        let mut cols = vec![0.0; kk * p];
        let src = self.value(x).data();
        geom.for_each_tap(|col, input| cols[col] = src[input]);
        let mut out = vec![0.0; c_out * p];
        if let Some(b) = bias {
            for (co, &bv) in self.value(b).data().iter().enumerate() {
                out[co * p..(co + 1) * p].iter_mut().for_each(|o| *o = bv);
            }
        }
        gemm(c_out, kk, p, 1.0, self.value(w).data(), false, &cols, false, 1.0, &mut out);
        let rg = self.rg(x) || self.rg(w) || bias.is_some_and(|b| self.rg(b));
        let out = Tensor::new(&[c_out, geom.h_out, geom.w_out], out)?;
        Ok(self.push(out, Op::Conv2d { x, w, b: bias, geom, cols }, rg))
    }

    fn acc(&mut self, v: Var, g: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let n = self.nodes[v.0].value.numel();
        let buf = self.grads[v.0].get_or_insert_with(|| vec![0.0; n]);
        g(buf);
    }

    /// Back-propagates from the scalar `out`, filling gradients of every
    /// node that requires them.
    pub fn backward(&mut self, out: Var) -> Result<()> {
        if self.value(out).numel() != 1 {
            return Err(shape_err(
                "backward",
                format!("output must be scalar, got {:?}", self.shape(out)),
            ));
        }
        for g in self.grads.iter_mut() {
            *g = None;
        }
        if !self.rg(out) {
            return Ok(());
        }
        self.grads[out.0] = Some(vec![1.0]);
        for idx in (0..=out.0).rev() {
            let Some(gout) = self.grads[idx].take() else {
                continue;
            };
            // Detach the op so that input gradients can be borrowed mutably.
            let op = std::mem::replace(&mut self.nodes[idx].op, Op::Leaf);
            self.backward_node(idx, &op, &gout);
            self.nodes[idx].op = op;
            self.grads[idx] = Some(gout);
        }
        Ok(())
    }

    fn backward_node(&mut self, idx: usize, op: &Op, g: &[f64]) {
        match *op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc(a, |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
                self.acc(b, |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
            }
            Op::Sub(a, b) => {
                self.acc(a, |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
                self.acc(b, |d| d.iter_mut().zip(g).for_each(|(d, g)| *d -= g));
            }
            Op::Mul(a, b) => {
                let bv = self.value(b).data().to_vec();
                let av = self.value(a).data().to_vec();
                self.acc(a, |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * bv[i];
                    }
                });
                self.acc(b, |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * av[i];
                    }
                });
            }
            Op::Max(a, b) | Op::Min(a, b) => {
                let is_max = matches!(op, Op::Max(..));
                let mask: Vec<bool> = self
                    .value(a)
                    .data()
                    .iter()
                    .zip(self.value(b).data())
                    .map(|(x, y)| if is_max { x >= y } else { x <= y })
                    .collect();
                self.acc(a, |d| {
                    for i in 0..d.len() {
                        if mask[i] {
                            d[i] += g[i];
                        }
                    }
                });
                self.acc(b, |d| {
                    for i in 0..d.len() {
                        if !mask[i] {
                            d[i] += g[i];
                        }
                    }
                });
            }
            Op::Scale(x, s) => self.acc(x, |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += s * g)),
            Op::Relu(x) => {
                let xv = self.value(x).data().to_vec();
                self.acc(x, |d| {
                    for i in 0..d.len() {
                        if xv[i] > 0.0 {
                            d[i] += g[i];
                        }
                    }
                });
            }
            Op::Sum(x) => self.acc(x, |d| d.iter_mut().for_each(|d| *d += g[0])),
            Op::MatMul { a, b, m, k, n } => {
                if self.rg(a) {
                    let bv = self.value(b).data().to_vec();
                    self.acc(a, |d| gemm(m, n, k, 1.0, g, false, &bv, true, 1.0, d));
                }
                if self.rg(b) {
                    let av = self.value(a).data().to_vec();
                    self.acc(b, |d| gemm(k, m, n, 1.0, &av, true, g, false, 1.0, d));
                }
            }
            Op::Transpose { x, rows, cols } => self.acc(x, |d| {
                for r in 0..rows {
                    for c in 0..cols {
                        d[r * cols + c] += g[c * rows + r];
                    }
                }
            }),
            Op::Reshape(x) => self.acc(x, |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g)),
            Op::Concat(ref xs) => {
                let mut offset = 0;
                for &x in xs {
                    let n = self.value(x).numel();
                    let part = &g[offset..offset + n];
                    self.acc(x, |d| d.iter_mut().zip(part).for_each(|(d, g)| *d += g));
                    offset += n;
                }
            }
            Op::GlobalAvgPool { x, hw } => self.acc(x, |d| {
                for (i, dv) in d.iter_mut().enumerate() {
                    *dv += g[i / hw] / hw as f64;
                }
            }),
            Op::Softmax { x, outer, len, inner } => {
                let y = self.nodes[idx].value.data().to_vec();
                self.acc(x, |d| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |j: usize| (o * len + j) * inner + i;
                            let dot: f64 = (0..len).map(|j| g[at(j)] * y[at(j)]).sum();
                            for j in 0..len {
                                d[at(j)] += y[at(j)] * (g[at(j)] - dot);
                            }
                        }
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                ref labels,
                ref probs,
                classes,
            } => {
                let scale = g[0] / labels.len() as f64;
                self.acc(logits, |d| {
                    for (r, &label) in labels.iter().enumerate() {
                        for j in 0..classes {
                            let onehot = if j == label { 1.0 } else { 0.0 };
                            d[r * classes + j] += scale * (probs[r * classes + j] - onehot);
                        }
                    }
                });
            }
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                ref cols,
            } => {
                let (kk, p, c_out) = (geom.patch_len(), geom.positions(), geom.c_out);
                if let Some(b) = b {
                    self.acc(b, |d| {
                        for (co, dv) in d.iter_mut().enumerate() {
                            *dv += g[co * p..(co + 1) * p].iter().sum::<f64>();
                        }
                    });
                }
                if self.rg(w) {
                    self.acc(w, |d| gemm(c_out, p, kk, 1.0, g, false, cols, true, 1.0, d));
                }
                if self.rg(x) {
                    let mut dcols = vec![0.0; kk * p];
                    gemm(kk, c_out, p, 1.0, self.value(w).data(), true, g, false, 0.0, &mut dcols);
                    self.acc(x, |d| geom.for_each_tap(|col, input| d[input] += dcols[col]));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::new();
        let a = tape.constant(&t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let i = tape.constant(&t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let c = tape.matmul(a, i).unwrap();
        assert_eq!(tape.value(c).data(), &[1.0, 2.0, 3.0, 4.0]);
        let c = tape.matmul(i, a).unwrap();
        assert_eq!(tape.value(c).data(), &[1.0, 2.0, 3.0, 4.0]);
        let bad = tape.constant(&Tensor::zeros(&[3, 2]));
        assert!(tape.matmul(a, bad).is_err());
    }

    #[test]
    fn softmax_cases() {
        let mut tape = Tape::new();
        let u = tape.constant(&Tensor::filled(&[3], 0.7));
        let s = tape.softmax(u, 0).unwrap();
        for &v in tape.value(s).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let x = tape.constant(&t(&[2], &[0.0, 3f64.ln()]));
        let s = tape.softmax(x, 0).unwrap();
        assert!((tape.value(s).data()[0] - 0.25).abs() < 1e-15);
        assert!((tape.value(s).data()[1] - 0.75).abs() < 1e-15);
        let nan = tape.constant(&t(&[2], &[0.0, f64::NAN]));
        assert!(matches!(tape.softmax(nan, 0), Err(Error::NonFinite(_))));
        assert!(tape.softmax(x, 1).is_err());
    }

    #[test]
    fn softmax_along_each_axis_sums_to_one() {
        let mut tape = Tape::new();
        let x = tape.constant(&Tensor::from_fn(&[2, 3, 4], |i| (i as f64 * 1.3).sin() * 5.0));
        for axis in 0..3 {
            let s = tape.softmax(x, axis).unwrap();
            let y = tape.value(s).data();
            let shape = [2, 3, 4];
            let outer: usize = shape[..axis].iter().product();
            let inner: usize = shape[axis + 1..].iter().product();
            for o in 0..outer {
                for i in 0..inner {
                    let total: f64 = (0..shape[axis]).map(|j| y[(o * shape[axis] + j) * inner + i]).sum();
                    assert!((total - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn cross_entropy_limits() {
        let mut tape = Tape::new();
        let confident = tape.constant(&t(&[2], &[1000.0, 0.0]));
        let l = tape.cross_entropy(confident, &[0]).unwrap();
        assert!(tape.value(l).item().abs() < 1e-12);
        let uniform = tape.constant(&t(&[2], &[0.3, 0.3]));
        let l = tape.cross_entropy(uniform, &[1]).unwrap();
        assert!((tape.value(l).item() - 2f64.ln()).abs() < 1e-15);
        assert!(matches!(
            tape.cross_entropy(uniform, &[2]),
            Err(Error::InvalidLabel { label: 2, classes: 2 })
        ));
        let batch = tape.constant(&t(&[2, 2], &[0.0, 0.0, 1000.0, 0.0]));
        let l = tape.cross_entropy(batch, &[0, 0]).unwrap();
        assert!((tape.value(l).item() - 2f64.ln() / 2.0).abs() < 1e-12);
    }

    #[test]
    fn conv_identity_and_window_sum() {
        let mut tape = Tape::new();
        let x = tape.constant(&Tensor::from_fn(&[2, 4, 5], |i| i as f64));
        let mut ident = Tensor::zeros(&[2, 2, 1, 1]);
        ident.data_mut()[0] = 1.0;
        ident.data_mut()[3] = 1.0;
        let w = tape.constant(&ident);
        let y = tape.conv2d(x, w, None, 1, 0).unwrap();
        assert_eq!(tape.value(y), tape.value(x));

        let ones = tape.constant(&Tensor::filled(&[1, 5, 5], 1.0));
        let k = tape.constant(&Tensor::filled(&[1, 1, 3, 3], 1.0));
        let y = tape.conv2d(ones, k, None, 1, 1).unwrap();
        let out = tape.value(y);
        assert_eq!(out.shape(), &[1, 5, 5]);
        assert_eq!(out.data()[2 * 5 + 2], 9.0);
        assert_eq!(out.data()[0], 4.0);

        let y = tape.conv2d(ones, k, None, 2, 1).unwrap();
        assert_eq!(tape.shape(y), &[1, 3, 3]);
        assert!(tape.conv2d(ones, w, None, 1, 0).is_err());
    }

    #[test]
    fn shared_input_accumulates() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[3.0, -1.0]).with_grad());
        let y = tape.mul(x, x).unwrap();
        let z = tape.add(y, x).unwrap();
        let s = tape.sum(z);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[7.0, -1.0]);
    }

    #[test]
    fn backward_needs_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]).with_grad());
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]).with_grad());
        let c = tape.constant(&t(&[2], &[5.0, 6.0]));
        let y = tape.mul(x, c).unwrap();
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[5.0, 6.0]);
        assert!(tape.grad(c).is_none());
    }

    #[test]
    fn concat_and_pool_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(&Tensor::filled(&[2, 3, 3], 1.0));
        let b = tape.constant(&Tensor::filled(&[1, 3, 3], 4.0));
        let c = tape.concat(&[a, b]).unwrap();
        assert_eq!(tape.shape(c), &[3, 3, 3]);
        let p = tape.global_avg_pool(c).unwrap();
        assert_eq!(tape.value(p).data(), &[1.0, 1.0, 4.0]);
        let bad = tape.constant(&Tensor::zeros(&[1, 2, 3]));
        assert!(tape.concat(&[a, bad]).is_err());
        let tr = tape.constant(&t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let tt = tape.transpose(tr).unwrap();
        assert_eq!(tape.value(tt).data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        assert_eq!(tape.shape(tt), &[3, 2]);
    }
}
