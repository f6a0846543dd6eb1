//! Tape-based reverse-mode differentiation over row-major matrices.
//!
//! Every operation appends a node holding its value; [`Tape::backward`]
//! walks the nodes in reverse and accumulates adjoints. The graph is rebuilt
//! for every batch.

use super::{NnError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Linear { x: Var, w: Var, b: Option<Var> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Swish(Var),
    ConcatCols(Vec<Var>),
    GatherRows { src: Var, index: Vec<usize> },
    ColSlice { src: Var, start: usize },
    Sum(Var),
    WeightedSqErr { pred: Var, target: Tensor, col_weights: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints of the leaves reachable from the differentiated output.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the output with respect to `v`; zeros if `v` does not
    /// influence the output.
    pub fn wrt(&self, v: Var, shape_of: &Tape) -> Tensor {
        self.grads[v.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(&shape_of.value(v).shape))
    }

    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn dims(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> Result<Var, NnError> {
        if !value.is_finite() {
            return Err(NnError::NonFinite(name));
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Input or parameter. Vectors are treated as a single row.
    pub fn leaf(&mut self, value: Tensor) -> Result<Var, NnError> {
        self.push(value, Op::Leaf, "leaf")
    }

    /// `x · wᵀ + b` with `x: [n, in]`, `w: [out, in]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, NnError> {
        let (n, din) = dims(self.value(x));
        let (dout, win) = dims_weight(self.value(w));
        if din != win {
            return Err(NnError::Shape(format!(
                "linear: input width {din} vs weight {dout}x{win}"
            )));
        }
        if let Some(b) = b {
            if self.value(b).len() != dout {
                return Err(NnError::Shape(format!(
                    "linear: bias length {} vs {dout} outputs",
                    self.value(b).len()
                )));
            }
        }
        let xv = &self.value(x).data;
        let wv = &self.value(w).data;
        let mut out = vec![0.0; n * dout];
        for r in 0..n {
            let xr = &xv[r * din..(r + 1) * din];
            let orow = &mut out[r * dout..(r + 1) * dout];
            for (o, slot) in orow.iter_mut().enumerate() {
                let wr = &wv[o * din..(o + 1) * din];
                *slot = dot(xr, wr);
            }
        }
        if let Some(b) = b {
            let bv = &self.value(b).data;
            for row in out.chunks_exact_mut(dout) {
                for (o, bb) in row.iter_mut().zip(bv) {
                    *o += bb;
                }
            }
        }
        let t = Tensor::matrix(n, dout, out)?;
        self.push(t, Op::Linear { x, w, b }, "linear")
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<(), NnError> {
        let (sa, sb) = (dims(self.value(a)), dims(self.value(b)));
        if sa != sb {
            return Err(NnError::Shape(format!("{what}: {sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (av, bv) = (self.value(a), self.value(b));
        Tensor {
            shape: vec![av.rows(), av.cols()],
            data: av.data.iter().zip(&bv.data).map(|(x, y)| f(*x, *y)).collect(),
        }
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let av = self.value(a);
        Tensor {
            shape: vec![av.rows(), av.cols()],
            data: av.data.iter().map(|x| f(*x)).collect(),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.same_shape(a, b, "add")?;
        let t = self.zip_map(a, b, |x, y| x + y);
        self.push(t, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.same_shape(a, b, "sub")?;
        let t = self.zip_map(a, b, |x, y| x - y);
        self.push(t, Op::Sub(a, b), "sub")
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.same_shape(a, b, "mul")?;
        let t = self.zip_map(a, b, |x, y| x * y);
        self.push(t, Op::Mul(a, b), "mul")
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, NnError> {
        let t = self.map(a, |x| c * x);
        self.push(t, Op::Scale(a, c), "scale")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, NnError> {
        let t = self.map(a, sigmoid);
        self.push(t, Op::Sigmoid(a), "sigmoid")
    }

    /// `x · sigmoid(x)`.
    pub fn swish(&mut self, a: Var) -> Result<Var, NnError> {
        let t = self.map(a, |x| x * sigmoid(x));
        self.push(t, Op::Swish(a), "swish")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NnError> {
        let Some(&first) = parts.first() else {
            return Err(NnError::Shape("concat of zero tensors".into()));
        };
        let n = self.value(first).rows();
        if let Some(bad) = parts.iter().find(|p| self.value(**p).rows() != n) {
            return Err(NnError::Shape(format!(
                "concat: row counts {n} vs {}",
                self.value(*bad).rows()
            )));
        }
        let widths: Vec<usize> = parts.iter().map(|p| self.value(*p).cols()).collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(n * total);
        for r in 0..n {
            for p in parts {
                out.extend_from_slice(self.value(*p).row(r));
            }
        }
        let t = Tensor::matrix(n, total, out)?;
        self.push(t, Op::ConcatCols(parts.to_vec()), "concat")
    }

    /// Output row `i` is row `index[i]` of `src`.
    pub fn gather_rows(&mut self, src: Var, index: Vec<usize>) -> Result<Var, NnError> {
        let (n, c) = dims(self.value(src));
        if let Some(bad) = index.iter().find(|&&i| i >= n) {
            return Err(NnError::Shape(format!("gather: row {bad} out of {n}")));
        }
        let mut out = Vec::with_capacity(index.len() * c);
        for &i in &index {
            out.extend_from_slice(self.value(src).row(i));
        }
        let t = Tensor::matrix(index.len(), c, out)?;
        self.push(t, Op::GatherRows { src, index }, "gather")
    }

    /// Columns `start..end` of a matrix.
    pub fn col_slice(&mut self, src: Var, start: usize, end: usize) -> Result<Var, NnError> {
        let (n, c) = dims_weight(self.value(src));
        if start > end || end > c {
            return Err(NnError::Shape(format!("col_slice {start}..{end} of {c} columns")));
        }
        let v = &self.value(src).data;
        let mut out = Vec::with_capacity(n * (end - start));
        for r in 0..n {
            out.extend_from_slice(&v[r * c + start..r * c + end]);
        }
        let t = Tensor::matrix(n, end - start, out)?;
        self.push(t, Op::ColSlice { src, start }, "col_slice")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, NnError> {
        let s = self.value(a).data.iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), "sum")
    }

    /// `(1/rows) Σ_r Σ_c w_c (pred[r,c] − target[r,c])²`.
    pub fn weighted_sq_err(
        &mut self,
        pred: Var,
        target: Tensor,
        col_weights: Vec<f64>,
    ) -> Result<Var, NnError> {
        let (n, c) = dims(self.value(pred));
        if dims(&target) != (n, c) || col_weights.len() != c {
            return Err(NnError::Shape(format!(
                "weighted_sq_err: pred {n}x{c}, target {:?}, {} weights",
                target.shape,
                col_weights.len()
            )));
        }
        let pv = &self.value(pred).data;
        let mut s = 0.0;
        for (prow, trow) in pv.chunks_exact(c).zip(target.data.chunks_exact(c)) {
            for ((p, t), w) in prow.iter().zip(trow).zip(&col_weights) {
                let d = p - t;
                s += w * d * d;
            }
        }
        let loss = if n == 0 { 0.0 } else { s / n as f64 };
        self.push(
            Tensor::scalar(loss),
            Op::WeightedSqErr {
                pred,
                target,
                col_weights,
            },
            "weighted_sq_err",
        )
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, out: Var) -> Result<Gradients, NnError> {
        if self.value(out).len() != 1 {
            return Err(NnError::Shape(format!(
                "backward needs a scalar output, got shape {:?}",
                self.value(out).shape
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=out.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Linear { x, w, b } => {
                    let xv = self.value(*x);
                    let wv = self.value(*w);
                    let (n, din) = dims(xv);
                    let dout = g.cols();
                    let mut dx = vec![0.0; n * din];
                    let mut dw = vec![0.0; dout * din];
                    let mut db = vec![0.0; dout];
                    for r in 0..n {
                        let gr = g.row(r);
                        let xr = xv.row(r);
                        let dxr = &mut dx[r * din..(r + 1) * din];
                        for (o, &go) in gr.iter().enumerate() {
                            if go == 0.0 {
                                continue;
                            }
                            axpy(go, &wv.data[o * din..(o + 1) * din], dxr);
                            axpy(go, xr, &mut dw[o * din..(o + 1) * din]);
                            db[o] += go;
                        }
                    }
                    accumulate(&mut grads, *x, Tensor::matrix(n, din, dx)?);
                    accumulate(&mut grads, *w, Tensor::new(wv.shape.clone(), dw)?);
                    if let Some(b) = b {
                        let shape = self.value(*b).shape.clone();
                        accumulate(&mut grads, *b, Tensor::new(shape, db)?);
                    }
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    let neg = Tensor {
                        shape: g.shape.clone(),
                        data: g.data.iter().map(|x| -x).collect(),
                    };
                    accumulate(&mut grads, *a, g);
                    accumulate(&mut grads, *b, neg);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let ga = Tensor {
                        shape: g.shape.clone(),
                        data: g.data.iter().zip(&bv.data).map(|(x, y)| x * y).collect(),
                    };
                    let gb = Tensor {
                        shape: g.shape.clone(),
                        data: g.data.iter().zip(&av.data).map(|(x, y)| x * y).collect(),
                    };
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Scale(a, c) => {
                    let ga = Tensor {
                        shape: g.shape.clone(),
                        data: g.data.iter().map(|x| c * x).collect(),
                    };
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    let ga = Tensor {
                        shape: g.shape.clone(),
                        data: g
                            .data
                            .iter()
                            .zip(&y.data)
                            .map(|(gg, s)| gg * s * (1.0 - s))
                            .collect(),
                    };
                    accumulate(&mut grads, *a, ga);
                }
                Op::Swish(a) => {
                    let xv = self.value(*a);
                    let ga = Tensor {
                        shape: g.shape.clone(),
                        data: g
                            .data
                            .iter()
                            .zip(&xv.data)
                            .map(|(gg, x)| {
                                let s = sigmoid(*x);
                                gg * (s + x * s * (1.0 - s))
                            })
                            .collect(),
                    };
                    accumulate(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let n = g.rows();
                    let total = g.cols();
                    let mut offset = 0;
                    for p in parts {
                        let pv = self.value(*p);
                        let c = pv.cols();
                        let mut d = Vec::with_capacity(n * c);
                        for r in 0..n {
                            d.extend_from_slice(&g.data[r * total + offset..r * total + offset + c]);
                        }
                        accumulate(&mut grads, *p, Tensor::new(pv.shape.clone(), d)?);
                        offset += c;
                    }
                }
                Op::GatherRows { src, index } => {
                    let sv = self.value(*src);
                    let c = sv.cols();
                    let mut d = vec![0.0; sv.len()];
                    for (r, &i) in index.iter().enumerate() {
                        axpy(1.0, g.row(r), &mut d[i * c..(i + 1) * c]);
                    }
                    accumulate(&mut grads, *src, Tensor::new(sv.shape.clone(), d)?);
                }
                Op::ColSlice { src, start } => {
                    let sv = self.value(*src);
                    let (n, c) = dims_weight(sv);
                    let w = g.cols();
                    let mut d = vec![0.0; n * c];
                    for r in 0..n {
                        d[r * c + start..r * c + start + w].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads, *src, Tensor::new(sv.shape.clone(), d)?);
                }
                Op::Sum(a) => {
                    let av = self.value(*a);
                    let gg = g.item();
                    accumulate(
                        &mut grads,
                        *a,
                        Tensor {
                            shape: av.shape.clone(),
                            data: vec![gg; av.len()],
                        },
                    );
                }
                Op::WeightedSqErr {
                    pred,
                    target,
                    col_weights,
                } => {
                    let pv = self.value(*pred);
                    let (n, c) = dims(pv);
                    let scale = if n == 0 { 0.0 } else { 2.0 * g.item() / n as f64 };
                    let mut d = vec![0.0; n * c];
                    for (i, (p, t)) in pv.data.iter().zip(&target.data).enumerate() {
                        d[i] = scale * col_weights[i % c] * (p - t);
                    }
                    accumulate(&mut grads, *pred, Tensor::new(pv.shape.clone(), d)?);
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Weight matrices are `[out, in]`; 1-D tensors count as a single row.
fn dims_weight(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four partial sums; the fixed order keeps results reproducible.
    let mut s = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = 4 * i;
        s[0] += a[j] * b[j];
        s[1] += a[j + 1] * b[j + 1];
        s[2] += a[j + 2] * b[j + 2];
        s[3] += a[j + 3] * b[j + 3];
    }
    let mut tail = 0.0;
    for j in 4 * chunks..a.len() {
        tail += a[j] * b[j];
    }
    (s[0] + s[1]) + (s[2] + s[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
