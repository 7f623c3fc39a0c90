//! Reverse-mode differentiation over [`Matrix`] values.
//!
//! A [`Tape`] records operations eagerly; [`Tape::backward`] walks it in
//! reverse and returns the gradient of a scalar output with respect to every
//! recorded node. The op set is exactly what the date contextualizer, the
//! event-graph attention and the triplet objective need.

use crate::relevance;
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    AddConst(Var),
    Scale(Var, f64),
    MulScalar(Var, Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Matrix,
        inv_std: Vec<f64>,
    },
    Gelu(Var),
    Relu(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    ScatterRows {
        base: Var,
        src: Var,
        positions: Vec<usize>,
    },
    MeanRows(Var),
    TokenAttention(Var, Var),
    ElemMax(Vec<Var>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Tanh approximation of GELU.
pub fn gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    let inner = c * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * 0.044715 * x * x)
}

/// Row-wise layer normalization; returns (output, normalized input, 1/std).
pub fn layer_norm_rows(x: &Matrix, gamma: &[f64], beta: &[f64], eps: f64) -> (Matrix, Matrix, Vec<f64>) {
    let (n, d) = x.shape();
    let mut out = Matrix::zeros(n, d);
    let mut xhat = Matrix::zeros(n, d);
    let mut inv = Vec::with_capacity(n);
    for r in 0..n {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + eps).sqrt();
        inv.push(is);
        for c in 0..d {
            let h = (row[c] - mean) * is;
            xhat.set(r, c, h);
            out.set(r, c, gamma[c] * h + beta[c]);
        }
    }
    (out, xhat, inv)
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

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).scalar_value()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// `a * b^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul_nt(self.value(b));
        self.push(v, Op::MatMulNT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).add(self.value(b));
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).add(&self.value(b).scale(-1.0));
        self.push(v, Op::Sub(a, b))
    }

    /// Adds a `1 x cols` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (n, d) = self.value(a).shape();
        assert_eq!(self.value(row).shape(), (1, d), "add_row shape");
        let mut v = self.value(a).clone();
        let r = self.value(row).row(0).to_vec();
        for i in 0..n {
            for (x, b) in v.row_mut(i).iter_mut().zip(&r) {
                *x += b;
            }
        }
        self.push(v, Op::AddRow(a, row))
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let mut v = self.value(a).clone();
        v.data_mut().iter_mut().for_each(|x| *x += c);
        self.push(v, Op::AddConst(a))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).scale(s);
        self.push(v, Op::Scale(a, s))
    }

    /// `s * a` for a `1 x 1` variable `s`.
    pub fn mul_scalar(&mut self, s: Var, a: Var) -> Var {
        let k = self.scalar(s);
        let src = self.value(a);
        let v = Matrix::from_vec(src.rows(), src.cols(), src.data().iter().map(|x| k * x).collect());
        self.push(v, Op::MulScalar(s, a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let src = self.value(a);
        let mut v = Matrix::zeros(src.rows(), src.cols());
        for r in 0..src.rows() {
            v.row_mut(r).copy_from_slice(&relevance::normalize_attention(src.row(r)));
        }
        self.push(v, Op::SoftmaxRows(a))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let (v, xhat, inv_std) = layer_norm_rows(
            self.value(x),
            self.value(gamma).row(0),
            self.value(beta).row(0),
            LAYER_NORM_EPS,
        );
        self.push(v, Op::LayerNorm { x, gamma, beta, xhat, inv_std })
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let src = self.value(a);
        let v = Matrix::from_vec(src.rows(), src.cols(), src.data().iter().map(|&x| gelu(x)).collect());
        self.push(v, Op::Gelu(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let src = self.value(a);
        let v = Matrix::from_vec(src.rows(), src.cols(), src.data().iter().map(|&x| x.max(0.0)).collect());
        self.push(v, Op::Relu(a))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let src = self.value(a);
        let mut v = Matrix::zeros(src.rows(), len);
        for r in 0..src.rows() {
            v.row_mut(r).copy_from_slice(&src.row(r)[start..start + len]);
        }
        self.push(v, Op::SliceCols(a, start))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut v = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for p in parts {
                let m = self.value(*p);
                assert_eq!(m.rows(), rows, "concat rows");
                v.row_mut(r)[off..off + m.cols()].copy_from_slice(m.row(r));
                off += m.cols();
            }
        }
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    /// Copy of `base` with row `positions[k]` replaced by row `k` of `src`.
    pub fn scatter_rows(&mut self, base: Var, src: Var, positions: &[usize]) -> Var {
        let mut v = self.value(base).clone();
        let s = self.value(src);
        assert_eq!(s.rows(), positions.len(), "scatter rows");
        for (k, &p) in positions.iter().enumerate() {
            v.row_mut(p).copy_from_slice(s.row(k));
        }
        self.push(v, Op::ScatterRows { base, src, positions: positions.to_vec() })
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let v = self.value(a).mean_rows();
        self.push(v, Op::MeanRows(a))
    }

    /// Row of summed cosine similarities, see [`relevance::token_attention`].
    pub fn token_attention(&mut self, a: Var, b: Var) -> Var {
        let w = relevance::token_attention_rows(self.value(a), self.value(b));
        self.push(Matrix::row_vector(w), Op::TokenAttention(a, b))
    }

    /// Element-wise maximum over equally shaped inputs; ties go to the first.
    pub fn elem_max(&mut self, parts: &[Var]) -> Var {
        let mut v = self.value(parts[0]).clone();
        for p in &parts[1..] {
            for (x, y) in v.data_mut().iter_mut().zip(self.value(*p).data()) {
                if *y > *x {
                    *x = *y;
                }
            }
        }
        self.push(v, Op::ElemMax(parts.to_vec()))
    }

    /// Gradients of the scalar `out` with respect to every node.
    pub fn backward(&self, out: Var) -> Gradients {
        assert_eq!(self.value(out).shape(), (1, 1), "backward needs a scalar output");
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(Matrix::scalar(1.0));

        fn acc(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=out.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    acc(&mut grads, *a, g.matmul_nt(bv));
                    acc(&mut grads, *b, av.matmul_tn(&g));
                }
                Op::MatMulNT(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    acc(&mut grads, *a, g.matmul(bv));
                    acc(&mut grads, *b, g.matmul_tn(av));
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.scale(-1.0));
                }
                Op::AddRow(a, row) => {
                    acc(&mut grads, *row, g.column_sums());
                    acc(&mut grads, *a, g.clone());
                }
                Op::AddConst(a) => acc(&mut grads, *a, g.clone()),
                Op::Scale(a, s) => acc(&mut grads, *a, g.scale(*s)),
                Op::MulScalar(s, a) => {
                    let k = self.scalar(*s);
                    let av = self.value(*a);
                    let ds = crate::tensor::dot(g.data(), av.data());
                    acc(&mut grads, *s, Matrix::scalar(ds));
                    acc(&mut grads, *a, g.scale(k));
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut dx = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let s = crate::tensor::dot(yr, gr);
                        for c in 0..y.cols() {
                            dx.set(r, c, yr[c] * (gr[c] - s));
                        }
                    }
                    acc(&mut grads, *a, dx);
                }
                Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                    let gam = self.value(*gamma).row(0);
                    let (n, d) = xhat.shape();
                    let mut dx = Matrix::zeros(n, d);
                    let mut dgamma = vec![0.0; d];
                    let mut dbeta = vec![0.0; d];
                    for r in 0..n {
                        let gr = g.row(r);
                        let hr = xhat.row(r);
                        let gh: Vec<f64> = (0..d).map(|c| gr[c] * gam[c]).collect();
                        let mean_g = gh.iter().sum::<f64>() / d as f64;
                        let mean_gx = crate::tensor::dot(&gh, hr) / d as f64;
                        for c in 0..d {
                            dx.set(r, c, inv_std[r] * (gh[c] - mean_g - hr[c] * mean_gx));
                            dgamma[c] += gr[c] * hr[c];
                            dbeta[c] += gr[c];
                        }
                    }
                    acc(&mut grads, *x, dx);
                    acc(&mut grads, *gamma, Matrix::row_vector(dgamma));
                    acc(&mut grads, *beta, Matrix::row_vector(dbeta));
                }
                Op::Gelu(a) => {
                    let av = self.value(*a);
                    let d = av.data().iter().zip(g.data()).map(|(&x, &gv)| gv * gelu_grad(x)).collect();
                    acc(&mut grads, *a, Matrix::from_vec(av.rows(), av.cols(), d));
                }
                Op::Relu(a) => {
                    let av = self.value(*a);
                    let d = av
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&x, &gv)| if x > 0.0 { gv } else { 0.0 })
                        .collect();
                    acc(&mut grads, *a, Matrix::from_vec(av.rows(), av.cols(), d));
                }
                Op::SliceCols(a, start) => {
                    let av = self.value(*a);
                    let mut d = Matrix::zeros(av.rows(), av.cols());
                    for r in 0..g.rows() {
                        d.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                    }
                    acc(&mut grads, *a, d);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let cols = self.value(*p).cols();
                        let mut d = Matrix::zeros(g.rows(), cols);
                        for r in 0..g.rows() {
                            d.row_mut(r).copy_from_slice(&g.row(r)[off..off + cols]);
                        }
                        off += cols;
                        acc(&mut grads, *p, d);
                    }
                }
                Op::ScatterRows { base, src, positions } => {
                    let mut dbase = g.clone();
                    let mut dsrc = Matrix::zeros(positions.len(), g.cols());
                    for (k, &p) in positions.iter().enumerate() {
                        dsrc.row_mut(k).copy_from_slice(g.row(p));
                        dbase.row_mut(p).iter_mut().for_each(|x| *x = 0.0);
                    }
                    acc(&mut grads, *base, dbase);
                    acc(&mut grads, *src, dsrc);
                }
                Op::MeanRows(a) => {
                    let av = self.value(*a);
                    let n = av.rows().max(1) as f64;
                    let mut d = Matrix::zeros(av.rows(), av.cols());
                    for r in 0..av.rows() {
                        for c in 0..av.cols() {
                            d.set(r, c, g.get(0, c) / n);
                        }
                    }
                    acc(&mut grads, *a, d);
                }
                Op::TokenAttention(a, b) => {
                    let (da, db) = token_attention_grad(self.value(*a), self.value(*b), g.row(0));
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::ElemMax(parts) => {
                    let y = &node.value;
                    let mut claimed = vec![false; y.cols() * y.rows()];
                    for p in parts {
                        let pv = self.value(*p);
                        let mut d = Matrix::zeros(pv.rows(), pv.cols());
                        for (k, (&x, &ymax)) in pv.data().iter().zip(y.data()).enumerate() {
                            if !claimed[k] && x == ymax {
                                claimed[k] = true;
                                d.data_mut()[k] = g.data()[k];
                            }
                        }
                        acc(&mut grads, *p, d);
                    }
                }
            }
        }
        Gradients { grads }
    }
}

fn token_attention_grad(a: &Matrix, b: &Matrix, dw: &[f64]) -> (Matrix, Matrix) {
    let (n, d) = a.shape();
    let m = b.rows();
    let na: Vec<f64> = (0..n).map(|p| crate::tensor::norm(a.row(p))).collect();
    let nb: Vec<f64> = (0..m).map(|q| crate::tensor::norm(b.row(q))).collect();
    let mut da = Matrix::zeros(n, d);
    let mut db = Matrix::zeros(m, d);
    for p in 0..n {
        if na[p] == 0.0 || dw[p] == 0.0 {
            continue;
        }
        let ap = a.row(p);
        for q in 0..m {
            if nb[q] == 0.0 {
                continue;
            }
            let bq = b.row(q);
            let denom = na[p] * nb[q];
            let cos = crate::tensor::dot(ap, bq) / denom;
            let g = dw[p];
            for c in 0..d {
                let ga = g * (bq[c] / denom - cos * ap[c] / (na[p] * na[p]));
                let gb = g * (ap[c] / denom - cos * bq[c] / (nb[q] * nb[q]));
                da.set(p, c, da.get(p, c) + ga);
                db.set(q, c, db.get(q, c) + gb);
            }
        }
    }
    (da, db)
}

pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` when `v` does not influence the output.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for `v`, zero-filled to `shape` when absent.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Matrix {
        self.get(v).cloned().unwrap_or_else(|| Matrix::zeros(shape.0, shape.1))
    }
}
