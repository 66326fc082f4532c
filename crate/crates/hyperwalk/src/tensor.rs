//! Dense 2-D tensors with reverse-mode differentiation.
//!
//! A deliberately small op set (matmul, elementwise arithmetic, row
//! reductions, concatenation, layer norm, GELU, cos, sigmoid, log) backing
//! the walk-encoding networks. Everything is `f64` and row-major; the
//! networks here are tiny, so numeric fidelity beats throughput.
//!
//! Shape mismatches are programmer error and panic with a message naming
//! the op and both shapes. Gradient accumulation during [`Tape::backward`]
//! walks nodes in reverse insertion order, which is a stable topological
//! order because ops can only reference earlier vars.

use rand::Rng;
use rand_distr::StandardNormal;

/// Plain value: `rows x cols` of `f64`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, v: f64) -> Self {
        Tensor { rows, cols, data: vec![v; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "tensor data length {} != {}x{}", data.len(), rows, cols);
        Tensor { rows, cols, data }
    }

    pub fn row_vector(data: Vec<f64>) -> Self {
        Tensor { rows: 1, cols: data.len(), data }
    }

    /// Gaussian init with standard deviation `std`.
    pub fn randn(rows: usize, cols: usize, std: f64, rng: &mut impl Rng) -> Self {
        let data = (0..rows * cols).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect();
        Tensor { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(u32);

impl Var {
    #[inline]
    fn idx(self) -> usize {
        self.0 as usize
    }
}

enum Op {
    /// Trainable or otherwise grad-carrying input.
    Leaf,
    /// Input that never receives a gradient (masks, counts, constants).
    ConstLeaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    /// `(n x d) + (1 x d)`, bias broadcast over the leading axis.
    AddRow(Var, Var),
    Mul(Var, Var),
    AddScalar(Var),
    MulScalar(Var, f64),
    /// Mean over axis 0: `(n x d) -> (1 x d)`.
    MeanRows(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    /// Row-wise layer norm; carries `1/sqrt(var+eps)` per row for backward.
    LayerNorm(Var, Vec<f64>),
    Gelu(Var),
    Cos(Var),
    Sigmoid(Var),
    Log(Var),
}

struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    op: Op,
}

/// Eager computation graph; freshly built per forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops all nodes but keeps the allocation, for reuse across queries.
    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let id = self.nodes.len();
        assert!(id <= u32::MAX as usize, "tape overflow");
        self.nodes.push(Node { value, grad: None, op });
        Var(id as u32)
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn const_leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::ConstLeaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.idx()].value
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.idx()].grad.as_ref()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ar, ac) = self.value(a).shape();
        let (br, bc) = self.value(b).shape();
        if ac != br {
            panic!("shape error in matmul: lhs {ar}x{ac}, rhs {br}x{bc}");
        }
        let mut out = Tensor::zeros(ar, bc);
        matmul_nn(self.value(a), self.value(b), &mut out);
        self.push(out, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (r, c) = t.shape();
        let mut out = Tensor::zeros(c, r);
        for i in 0..r {
            for j in 0..c {
                out.set(j, i, t.get(i, j));
            }
        }
        self.push(out, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            panic!("shape error in add: lhs {}x{}, rhs {}x{}", sa.0, sa.1, sb.0, sb.1);
        }
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(out, Op::Add(a, b))
    }

    /// Adds a `1 x d` row vector to every row of an `n x d` tensor.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let (sa, sb) = (self.value(a).shape(), self.value(bias).shape());
        if sb.0 != 1 || sa.1 != sb.1 {
            panic!("shape error in add_row: lhs {}x{}, rhs {}x{}", sa.0, sa.1, sb.0, sb.1);
        }
        let mut out = self.value(a).clone();
        let b = self.value(bias).data().to_vec();
        for r in 0..out.rows {
            let row = &mut out.data[r * out.cols..(r + 1) * out.cols];
            for (x, bv) in row.iter_mut().zip(&b) {
                *x += bv;
            }
        }
        self.push(out, Op::AddRow(a, bias))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            panic!("shape error in mul: lhs {}x{}, rhs {}x{}", sa.0, sa.1, sb.0, sb.1);
        }
        let mut out = self.value(a).clone();
        for (x, y) in out.data.iter_mut().zip(self.value(b).data()) {
            *x *= y;
        }
        self.push(out, Op::Mul(a, b))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let mut out = self.value(a).clone();
        for x in out.data.iter_mut() {
            *x += c;
        }
        self.push(out, Op::AddScalar(a))
    }

    pub fn mul_scalar(&mut self, a: Var, c: f64) -> Var {
        let mut out = self.value(a).clone();
        for x in out.data.iter_mut() {
            *x *= c;
        }
        self.push(out, Op::MulScalar(a, c))
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (r, c) = t.shape();
        assert!(r >= 1, "mean_rows over empty tensor");
        let mut out = Tensor::zeros(1, c);
        for i in 0..r {
            for j in 0..c {
                out.data[j] += t.get(i, j);
            }
        }
        let inv = 1.0 / r as f64;
        for x in out.data.iter_mut() {
            *x *= inv;
        }
        self.push(out, Op::MeanRows(a))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows of zero parts");
        let cols = self.value(parts[0]).cols();
        let mut rows = 0;
        for &p in parts {
            let s = self.value(p).shape();
            if s.1 != cols {
                panic!("shape error in concat_rows: {}x{} vs expected cols {}", s.0, s.1, cols);
            }
            rows += s.0;
        }
        let mut data = Vec::with_capacity(rows * cols);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        self.push(Tensor::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols of zero parts");
        let rows = self.value(parts[0]).rows();
        let mut cols = 0;
        for &p in parts {
            let s = self.value(p).shape();
            if s.0 != rows {
                panic!("shape error in concat_cols: {}x{} vs expected rows {}", s.0, s.1, rows);
            }
            cols += s.1;
        }
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut at = 0;
            for &p in parts {
                let t = self.value(p);
                let w = t.cols();
                out.data[r * cols + at..r * cols + at + w].copy_from_slice(t.row(r));
                at += w;
            }
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    /// Row-wise layer norm without learned affine, eps = 1e-5.
    pub fn layer_norm(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (r, c) = t.shape();
        assert!(c >= 1, "layer_norm over zero columns");
        let mut out = Tensor::zeros(r, c);
        let mut inv_stds = Vec::with_capacity(r);
        for i in 0..r {
            let row = t.row(i);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_stds.push(inv);
            for j in 0..c {
                out.set(i, j, (row[j] - mean) * inv);
            }
        }
        self.push(out, Op::LayerNorm(a, inv_stds))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for x in out.data.iter_mut() {
            *x = gelu_val(*x);
        }
        self.push(out, Op::Gelu(a))
    }

    pub fn cos(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for x in out.data.iter_mut() {
            *x = x.cos();
        }
        self.push(out, Op::Cos(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for x in out.data.iter_mut() {
            *x = sigmoid_val(*x);
        }
        self.push(out, Op::Sigmoid(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for x in out.data.iter_mut() {
            *x = x.ln();
        }
        self.push(out, Op::Log(a))
    }

    /// Backward from a scalar output, seeding with 1.
    pub fn backward(&mut self, out: Var) {
        assert_eq!(self.value(out).shape(), (1, 1), "backward requires a scalar output");
        self.backward_seeded(out, &Tensor::filled(1, 1, 1.0));
    }

    /// Backward from `out` with an explicit seed gradient of the same shape.
    pub fn backward_seeded(&mut self, out: Var, seed: &Tensor) {
        assert_eq!(self.value(out).shape(), seed.shape(), "seed shape mismatch");
        for n in self.nodes.iter_mut() {
            n.grad = None;
        }
        self.nodes[out.idx()].grad = Some(seed.clone());

        for i in (0..self.nodes.len()).rev() {
            let (parents, rest) = self.nodes.split_at_mut(i);
            let node = &rest[0];
            let Some(grad) = node.grad.as_ref() else { continue };
            match &node.op {
                Op::Leaf | Op::ConstLeaf => {}
                Op::MatMul(a, b) => {
                    // dA += dC . B^T, dB += A^T . dC
                    let (av, bv) = read2(parents, *a, *b);
                    let mut da = Tensor::zeros(av.rows, av.cols);
                    matmul_nt(grad, bv, &mut da);
                    let mut db = Tensor::zeros(bv.rows, bv.cols);
                    matmul_tn(av, grad, &mut db);
                    accumulate(parents, *a, &da);
                    accumulate(parents, *b, &db);
                }
                Op::Transpose(a) => {
                    let (r, c) = grad.shape();
                    let mut da = Tensor::zeros(c, r);
                    for x in 0..r {
                        for y in 0..c {
                            da.set(y, x, grad.get(x, y));
                        }
                    }
                    accumulate(parents, *a, &da);
                }
                Op::Add(a, b) => {
                    accumulate(parents, *a, grad);
                    accumulate(parents, *b, grad);
                }
                Op::AddRow(a, bias) => {
                    accumulate(parents, *a, grad);
                    let mut db = Tensor::zeros(1, grad.cols());
                    for r in 0..grad.rows() {
                        for (acc, g) in db.data.iter_mut().zip(grad.row(r)) {
                            *acc += g;
                        }
                    }
                    accumulate(parents, *bias, &db);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = read2(parents, *a, *b);
                    let mut da = grad.clone();
                    for (x, y) in da.data.iter_mut().zip(bv.data()) {
                        *x *= y;
                    }
                    let mut db = grad.clone();
                    for (x, y) in db.data.iter_mut().zip(av.data()) {
                        *x *= y;
                    }
                    accumulate(parents, *a, &da);
                    accumulate(parents, *b, &db);
                }
                Op::AddScalar(a) => accumulate(parents, *a, grad),
                Op::MulScalar(a, c) => {
                    let mut da = grad.clone();
                    for x in da.data.iter_mut() {
                        *x *= c;
                    }
                    accumulate(parents, *a, &da);
                }
                Op::MeanRows(a) => {
                    let pr = parents[a.idx()].value.rows();
                    let inv = 1.0 / pr as f64;
                    let mut da = Tensor::zeros(pr, grad.cols());
                    for r in 0..pr {
                        for j in 0..grad.cols() {
                            da.set(r, j, grad.data[j] * inv);
                        }
                    }
                    accumulate(parents, *a, &da);
                }
                Op::ConcatRows(parts) => {
                    let mut at = 0;
                    let parts = parts.clone();
                    for p in parts {
                        let pr = parents[p.idx()].value.rows();
                        let c = grad.cols();
                        let slice = Tensor::from_vec(
                            pr,
                            c,
                            grad.data[at * c..(at + pr) * c].to_vec(),
                        );
                        accumulate(parents, p, &slice);
                        at += pr;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut at = 0;
                    let parts = parts.clone();
                    for p in parts {
                        let (pr, pc) = parents[p.idx()].value.shape();
                        let mut slice = Tensor::zeros(pr, pc);
                        for r in 0..pr {
                            for j in 0..pc {
                                slice.set(r, j, grad.get(r, at + j));
                            }
                        }
                        accumulate(parents, p, &slice);
                        at += pc;
                    }
                }
                Op::LayerNorm(a, inv_stds) => {
                    // dx = inv * (dy - mean(dy) - y * mean(dy * y))
                    let y = &node.value;
                    let (r, c) = y.shape();
                    let mut da = Tensor::zeros(r, c);
                    for i in 0..r {
                        let gy = grad.row(i);
                        let yy = y.row(i);
                        let m1 = gy.iter().sum::<f64>() / c as f64;
                        let m2 = gy.iter().zip(yy).map(|(g, v)| g * v).sum::<f64>() / c as f64;
                        let inv = inv_stds[i];
                        for j in 0..c {
                            da.set(i, j, inv * (gy[j] - m1 - yy[j] * m2));
                        }
                    }
                    accumulate(parents, *a, &da);
                }
                Op::Gelu(a) => {
                    let x = &parents[a.idx()].value;
                    let mut da = grad.clone();
                    for (g, xv) in da.data.iter_mut().zip(x.data()) {
                        *g *= gelu_grad(*xv);
                    }
                    accumulate(parents, *a, &da);
                }
                Op::Cos(a) => {
                    let x = &parents[a.idx()].value;
                    let mut da = grad.clone();
                    for (g, xv) in da.data.iter_mut().zip(x.data()) {
                        *g *= -xv.sin();
                    }
                    accumulate(parents, *a, &da);
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    let mut da = grad.clone();
                    for (g, yv) in da.data.iter_mut().zip(y.data()) {
                        *g *= yv * (1.0 - yv);
                    }
                    accumulate(parents, *a, &da);
                }
                Op::Log(a) => {
                    let x = &parents[a.idx()].value;
                    let mut da = grad.clone();
                    for (g, xv) in da.data.iter_mut().zip(x.data()) {
                        *g /= xv;
                    }
                    accumulate(parents, *a, &da);
                }
            }
        }
    }
}

fn read2<'a>(parents: &'a [Node], a: Var, b: Var) -> (&'a Tensor, &'a Tensor) {
    (&parents[a.idx()].value, &parents[b.idx()].value)
}

fn accumulate(parents: &mut [Node], v: Var, delta: &Tensor) {
    let node = &mut parents[v.idx()];
    if matches!(node.op, Op::ConstLeaf) {
        return;
    }
    match node.grad.as_mut() {
        Some(g) => g.add_assign(delta),
        None => node.grad = Some(delta.clone()),
    }
}

fn sigmoid_val(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn gelu_val(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// out = a . b
fn matmul_nn(a: &Tensor, b: &Tensor, out: &mut Tensor) {
    let (n, k) = a.shape();
    let m = b.cols();
    for i in 0..n {
        let arow = a.row(i);
        let orow = &mut out.data[i * m..(i + 1) * m];
        for (p, &av) in arow.iter().enumerate().take(k) {
            if av == 0.0 {
                continue;
            }
            let brow = b.row(p);
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// out = a . b^T
fn matmul_nt(a: &Tensor, b: &Tensor, out: &mut Tensor) {
    let (n, k) = a.shape();
    let m = b.rows();
    debug_assert_eq!(b.cols(), k);
    for i in 0..n {
        let arow = a.row(i);
        let orow = &mut out.data[i * m..(i + 1) * m];
        for (j, o) in orow.iter_mut().enumerate() {
            let brow = b.row(j);
            let mut acc = 0.0;
            for (&x, &y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            *o += acc;
        }
    }
}

/// out = a^T . b
fn matmul_tn(a: &Tensor, b: &Tensor, out: &mut Tensor) {
    let (n, k) = a.shape();
    let m = b.cols();
    debug_assert_eq!(b.rows(), n);
    for i in 0..n {
        let arow = a.row(i);
        let brow = b.row(i);
        for (p, &av) in arow.iter().enumerate().take(k) {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out.data[p * m..(p + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// Central-difference gradient checking, the oracle for every backward rule.
pub mod gradcheck {
    use super::Tensor;

    /// Numeric gradient of `f` w.r.t. every entry of every input.
    pub fn central_diff(
        mut f: impl FnMut(&[Tensor]) -> f64,
        inputs: &[Tensor],
    ) -> Vec<Tensor> {
        let mut work: Vec<Tensor> = inputs.to_vec();
        let mut grads = Vec::with_capacity(inputs.len());
        for ti in 0..inputs.len() {
            let mut g = Tensor::zeros(inputs[ti].rows(), inputs[ti].cols());
            for e in 0..inputs[ti].len() {
                let x = inputs[ti].data()[e];
                let h = 1e-5 * x.abs().max(1.0);
                work[ti].data_mut()[e] = x + h;
                let fp = f(&work);
                work[ti].data_mut()[e] = x - h;
                let fm = f(&work);
                work[ti].data_mut()[e] = x;
                g.data_mut()[e] = (fp - fm) / (2.0 * h);
            }
            grads.push(g);
        }
        grads
    }

    /// Relative error with an absolute floor for near-zero gradients.
    pub fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / (a.abs() + b.abs()).max(1e-4)
    }

    /// Max relative error across all entries of paired tensors.
    pub fn max_rel_err(analytic: &[Tensor], numeric: &[Tensor]) -> f64 {
        let mut worst = 0.0f64;
        for (a, n) in analytic.iter().zip(numeric) {
            assert_eq!(a.shape(), n.shape());
            for (&x, &y) in a.data().iter().zip(n.data()) {
                worst = worst.max(rel_err(x, y));
            }
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::gradcheck::{central_diff, max_rel_err};
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    /// Runs `build` on a tape seeded with `inputs` as leaves, sums the output
    /// into a scalar objective, and compares analytic vs numeric gradients.
    fn check_op(inputs: &[Tensor], build: impl Fn(&mut Tape, &[Var]) -> Var, tol: f64) {
        let eval = |ts: &[Tensor]| -> f64 {
            let mut tape = Tape::new();
            let vars: Vec<Var> = ts.iter().map(|t| tape.leaf(t.clone())).collect();
            let out = build(&mut tape, &vars);
            // weighted sum so the seed is not uniform
            tape.value(out)
                .data()
                .iter()
                .enumerate()
                .map(|(i, v)| (i as f64 * 0.37 + 1.0) * v)
                .sum()
        };
        let numeric = central_diff(eval, inputs);

        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = build(&mut tape, &vars);
        let (r, c) = tape.value(out).shape();
        let seed = Tensor::from_vec(
            r,
            c,
            (0..r * c).map(|i| i as f64 * 0.37 + 1.0).collect(),
        );
        tape.backward_seeded(out, &seed);
        let analytic: Vec<Tensor> = vars
            .iter()
            .map(|&v| tape.grad(v).cloned().unwrap_or_else(|| {
                Tensor::zeros(tape.value(v).rows(), tape.value(v).cols())
            }))
            .collect();

        let err = max_rel_err(&analytic, &numeric);
        assert!(err < tol, "gradient mismatch: rel err {err:.3e} >= {tol:.0e}");
    }

    #[test]
    fn backward_of_square_is_two_x() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::filled(1, 1, 3.0));
        let y = tape.mul(x, x);
        tape.backward(y);
        assert_eq!(tape.grad(x).unwrap().data()[0], 6.0);
    }

    #[test]
    fn backward_of_mean_is_uniform() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(4, 1, vec![1.0, 2.0, 3.0, 4.0]));
        let m = tape.mean_rows(x);
        tape.backward(m);
        for &g in tape.grad(x).unwrap().data() {
            assert_eq!(g, 0.25);
        }
    }

    #[test]
    fn matmul_matches_hand_values() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]));
        let b = tape.leaf(Tensor::from_vec(2, 2, vec![5.0, 6.0, 7.0, 8.0]));
        let c = tape.matmul(a, b);
        assert_eq!(tape.value(c).data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn gradcheck_matmul() {
        let mut r = rng(1);
        let a = Tensor::randn(3, 4, 1.0, &mut r);
        let b = Tensor::randn(4, 2, 1.0, &mut r);
        check_op(&[a, b], |t, v| t.matmul(v[0], v[1]), 1e-6);
    }

    #[test]
    fn gradcheck_transpose() {
        let a = Tensor::randn(3, 5, 1.0, &mut rng(2));
        check_op(&[a], |t, v| t.transpose(v[0]), 1e-6);
    }

    #[test]
    fn gradcheck_add_mul() {
        let mut r = rng(3);
        let a = Tensor::randn(2, 3, 1.0, &mut r);
        let b = Tensor::randn(2, 3, 1.0, &mut r);
        check_op(&[a.clone(), b.clone()], |t, v| t.add(v[0], v[1]), 1e-6);
        check_op(&[a, b], |t, v| t.mul(v[0], v[1]), 1e-6);
    }

    #[test]
    fn gradcheck_add_row() {
        let mut r = rng(4);
        let a = Tensor::randn(4, 3, 1.0, &mut r);
        let b = Tensor::randn(1, 3, 1.0, &mut r);
        check_op(&[a, b], |t, v| t.add_row(v[0], v[1]), 1e-6);
    }

    #[test]
    fn gradcheck_scalar_ops() {
        let a = Tensor::randn(2, 4, 1.0, &mut rng(5));
        check_op(&[a.clone()], |t, v| t.add_scalar(v[0], 1.7), 1e-6);
        check_op(&[a], |t, v| t.mul_scalar(v[0], -0.3), 1e-6);
    }

    #[test]
    fn gradcheck_mean_rows() {
        let a = Tensor::randn(5, 3, 1.0, &mut rng(6));
        check_op(&[a], |t, v| t.mean_rows(v[0]), 1e-6);
    }

    #[test]
    fn gradcheck_concat() {
        let mut r = rng(7);
        let a = Tensor::randn(2, 3, 1.0, &mut r);
        let b = Tensor::randn(1, 3, 1.0, &mut r);
        check_op(&[a.clone(), b.clone()], |t, v| t.concat_rows(&[v[0], v[1]]), 1e-6);
        let c = Tensor::randn(2, 2, 1.0, &mut r);
        check_op(&[a, c], |t, v| t.concat_cols(&[v[0], v[1]]), 1e-6);
    }

    #[test]
    fn gradcheck_layer_norm() {
        let a = Tensor::randn(3, 6, 2.0, &mut rng(8));
        check_op(&[a], |t, v| t.layer_norm(v[0]), 1e-6);
    }

    #[test]
    fn gradcheck_pointwise() {
        let a = Tensor::randn(2, 5, 1.0, &mut rng(9));
        check_op(&[a.clone()], |t, v| t.gelu(v[0]), 1e-6);
        check_op(&[a.clone()], |t, v| t.cos(v[0]), 1e-6);
        check_op(&[a], |t, v| t.sigmoid(v[0]), 1e-6);
        // log needs positive inputs
        let mut p = Tensor::randn(2, 5, 0.2, &mut rng(10));
        for x in p.data_mut() {
            *x = x.abs() + 0.5;
        }
        check_op(&[p], |t, v| t.log(v[0]), 1e-6);
    }

    #[test]
    fn gradcheck_random_composites() {
        // Three composite graphs exercising op interactions.
        let mut r = rng(11);
        let a = Tensor::randn(3, 4, 1.0, &mut r);
        let w = Tensor::randn(4, 4, 0.7, &mut r);
        let b = Tensor::randn(1, 4, 0.5, &mut r);
        check_op(&[a.clone(), w.clone(), b.clone()], |t, v| {
            let h = t.matmul(v[0], v[1]);
            let h = t.add_row(h, v[2]);
            let h = t.gelu(h);
            let n = t.layer_norm(h);
            let res = t.add(h, n);
            t.mean_rows(res)
        }, 1e-6);

        check_op(&[a.clone(), w.clone()], |t, v| {
            let x = t.matmul(v[0], v[1]);
            let xt = t.transpose(x);
            let y = t.matmul(xt, v[0]);
            let y = t.cos(y);
            let m = t.mean_rows(y);
            t.sigmoid(m)
        }, 1e-6);

        check_op(&[a, w, b], |t, v| {
            let x = t.matmul(v[0], v[1]);
            let s = t.mul_scalar(x, 0.5);
            let c = t.concat_cols(&[x, s]);
            let n = t.layer_norm(c);
            let m = t.mean_rows(n);
            let hd = t.concat_cols(&[v[2], v[2]]);
            let m2 = t.mul(m, hd);
            t.mean_rows(m2)
        }, 1e-6);
    }

    #[test]
    fn layer_norm_row_statistics() {
        // Large-variance rows so the eps in the denominator is negligible.
        let mut r = rng(12);
        let mut a = Tensor::randn(4, 64, 1.0, &mut r);
        for x in a.data_mut() {
            *x *= 1e4;
        }
        let mut tape = Tape::new();
        let v = tape.leaf(a);
        let n = tape.layer_norm(v);
        let out = tape.value(n);
        for i in 0..out.rows() {
            let row = out.row(i);
            let mean = row.iter().sum::<f64>() / row.len() as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / row.len() as f64;
            assert!(mean.abs() < 1e-10, "row mean {mean}");
            assert!((var - 1.0).abs() < 1e-10, "row var {var}");
        }
    }

    #[test]
    #[should_panic(expected = "shape error in matmul")]
    fn matmul_shape_mismatch_names_shapes() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(2, 3));
        let b = tape.leaf(Tensor::zeros(4, 5));
        tape.matmul(a, b);
    }

    #[test]
    fn const_leaves_receive_no_grad() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::filled(1, 2, 2.0));
        let c = tape.const_leaf(Tensor::filled(1, 2, 3.0));
        let y = tape.mul(a, c);
        let m = tape.mean_rows(y);
        let s = tape.transpose(m);
        let z = tape.matmul(m, s);
        tape.backward(z);
        assert!(tape.grad(c).is_none());
        assert!(tape.grad(a).is_some());
    }
}
