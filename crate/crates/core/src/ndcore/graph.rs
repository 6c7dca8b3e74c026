use std::collections::BTreeMap;

use rand::Rng;

use super::tensor::{log_sum_exp, softmax_slice};
use super::{Tensor, TensorError};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    MatVec(Var, Var),
    VecMat(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddRowBroadcast(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    Log(Var),
    Softmax(Var),
    Concat(Vec<Var>),
    Slice { input: Var, start: usize },
    Stack(Vec<Var>),
    Row { input: Var, row: usize },
    MulConst(Var, Tensor),
    Scale(Var, f64),
    Sum(Var),
    AddN(Vec<Var>),
    WeightedNll {
        logits: Var,
        targets: Vec<usize>,
        weights: Vec<f64>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients keyed by parameter name, produced by [`Graph::backward`].
pub type Gradients = BTreeMap<String, Tensor>;

/// Append-only tape for reverse-mode differentiation.
///
/// Every op validates shapes up front. In checked mode (the default) any
/// non-finite result is reported as an error naming the op.
#[derive(Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
    checked: bool,
    backward_done: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: Vec::new(),
            checked: true,
            backward_done: false,
        }
    }

    pub fn unchecked() -> Self {
        Self {
            checked: false,
            ..Self::new()
        }
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

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A named trainable leaf.
    pub fn param(&mut self, name: impl Into<String>, value: Tensor) -> Var {
        let v = self.push_raw(value, Op::Leaf, true);
        self.params.push((name.into(), v));
        v
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    fn push_raw(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op) -> Result<Var, TensorError> {
        if self.checked && !value.is_finite() {
            return Err(TensorError::NonFinite(name));
        }
        let requires_grad = op_inputs(&op).iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_raw(value, op, requires_grad))
    }

    fn dims2(&self, v: Var) -> Result<(usize, usize), TensorError> {
        self.value(v).dims2()
    }

    fn dims1(&self, v: Var) -> Result<usize, TensorError> {
        self.value(v).dims1()
    }

    /// `a[m×k] · b[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, k) = self.dims2(a)?;
        let (k2, n) = self.dims2(b)?;
        if k != k2 {
            return Err(mismatch("matmul", self.value(a), self.value(b)));
        }
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let t = Tensor::new(&[m, n], out)?;
        self.push("matmul", t, Op::MatMul(a, b))
    }

    /// `a[m×k] · b[n×k]ᵀ`, i.e. every row of `a` through the linear map `b`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, k) = self.dims2(a)?;
        let (n, k2) = self.dims2(b)?;
        if k != k2 {
            return Err(mismatch("matmul_nt", self.value(a), self.value(b)));
        }
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let ar = &ad[i * k..(i + 1) * k];
            for j in 0..n {
                out[i * n + j] = dot(ar, &bd[j * k..(j + 1) * k]);
            }
        }
        let t = Tensor::new(&[m, n], out)?;
        self.push("matmul_nt", t, Op::MatMulNT(a, b))
    }

    /// `w[m×k] · x[k]`.
    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var, TensorError> {
        let (m, k) = self.dims2(w)?;
        let k2 = self.dims1(x)?;
        if k != k2 {
            return Err(mismatch("matvec", self.value(w), self.value(x)));
        }
        let (wd, xd) = (self.value(w).data(), self.value(x).data());
        let out: Vec<f64> = (0..m).map(|i| dot(&wd[i * k..(i + 1) * k], xd)).collect();
        self.push("matvec", Tensor::vector(out), Op::MatVec(w, x))
    }

    /// `wᵀ · x` for `w[n]`, `x[n×d]`: a weighted sum of rows.
    pub fn vecmat(&mut self, w: Var, x: Var) -> Result<Var, TensorError> {
        let n = self.dims1(w)?;
        let (n2, d) = self.dims2(x)?;
        if n != n2 {
            return Err(mismatch("vecmat", self.value(w), self.value(x)));
        }
        let (wd, xd) = (self.value(w).data(), self.value(x).data());
        let mut out = vec![0.0; d];
        for i in 0..n {
            let wi = wd[i];
            for (o, xv) in out.iter_mut().zip(&xd[i * d..(i + 1) * d]) {
                *o += wi * xv;
            }
        }
        self.push("vecmat", Tensor::vector(out), Op::VecMat(w, x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("add", a, b)?;
        let out: Vec<f64> = zip_map(self.value(a), self.value(b), |x, y| x + y);
        let t = Tensor::new(self.value(a).shape(), out)?;
        self.push("add", t, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("mul", a, b)?;
        let out: Vec<f64> = zip_map(self.value(a), self.value(b), |x, y| x * y);
        let t = Tensor::new(self.value(a).shape(), out)?;
        self.push("mul", t, Op::Mul(a, b))
    }

    /// Adds vector `v[d]` to every row of `x[n×d]`.
    pub fn add_row_broadcast(&mut self, x: Var, v: Var) -> Result<Var, TensorError> {
        let (n, d) = self.dims2(x)?;
        if self.dims1(v)? != d {
            return Err(mismatch("add_row_broadcast", self.value(x), self.value(v)));
        }
        let vd = self.value(v).data();
        let mut out = self.value(x).data().to_vec();
        for i in 0..n {
            for (o, b) in out[i * d..(i + 1) * d].iter_mut().zip(vd) {
                *o += b;
            }
        }
        let t = Tensor::new(&[n, d], out)?;
        self.push("add_row_broadcast", t, Op::AddRowBroadcast(x, v))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, TensorError> {
        let t = self.value(x).map(f64::tanh);
        self.push("tanh", t, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, TensorError> {
        let t = self.value(x).map(sigmoid);
        self.push("sigmoid", t, Op::Sigmoid(x))
    }

    pub fn log(&mut self, x: Var) -> Result<Var, TensorError> {
        if let Some(&bad) = self.value(x).data().iter().find(|&&v| v <= 0.0) {
            return Err(TensorError::LogDomain(bad));
        }
        let t = self.value(x).map(f64::ln);
        self.push("log", t, Op::Log(x))
    }

    /// Softmax of a vector, computed with max subtraction.
    pub fn softmax(&mut self, x: Var) -> Result<Var, TensorError> {
        let n = self.dims1(x)?;
        if n == 0 {
            return Err(TensorError::EmptyAxis);
        }
        let t = Tensor::vector(softmax_slice(self.value(x).data()));
        self.push("softmax", t, Op::Softmax(x))
    }

    /// Concatenates vectors end to end.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let mut out = Vec::new();
        for &p in parts {
            self.dims1(p)?;
            out.extend_from_slice(self.value(p).data());
        }
        if out.is_empty() {
            return Err(TensorError::EmptyAxis);
        }
        self.push("concat", Tensor::vector(out), Op::Concat(parts.to_vec()))
    }

    /// `x[start..start+len]` of a vector.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let n = self.dims1(x)?;
        if len == 0 || start + len > n {
            return Err(TensorError::OutOfRange {
                index: start + len,
                bound: n,
            });
        }
        let t = Tensor::vector(self.value(x).data()[start..start + len].to_vec());
        self.push("slice", t, Op::Slice { input: x, start })
    }

    /// Stacks equal-length vectors into the rows of a matrix.
    pub fn stack(&mut self, rows: &[Var]) -> Result<Var, TensorError> {
        let first = rows.first().ok_or(TensorError::EmptyAxis)?;
        let d = self.dims1(*first)?;
        let mut out = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            if self.dims1(r)? != d {
                return Err(mismatch("stack", self.value(*first), self.value(r)));
            }
            out.extend_from_slice(self.value(r).data());
        }
        let t = Tensor::new(&[rows.len(), d], out)?;
        self.push("stack", t, Op::Stack(rows.to_vec()))
    }

    /// Row `row` of a matrix as a vector (embedding lookup).
    pub fn row(&mut self, x: Var, row: usize) -> Result<Var, TensorError> {
        let (n, _) = self.dims2(x)?;
        if row >= n {
            return Err(TensorError::OutOfRange {
                index: row,
                bound: n,
            });
        }
        let t = Tensor::vector(self.value(x).row(row).to_vec());
        self.push("row", t, Op::Row { input: x, row })
    }

    /// Elementwise product with a constant tensor.
    pub fn mul_const(&mut self, x: Var, c: Tensor) -> Result<Var, TensorError> {
        if self.value(x).shape() != c.shape() {
            return Err(mismatch("mul_const", self.value(x), &c));
        }
        let out = zip_map(self.value(x), &c, |a, b| a * b);
        let t = Tensor::new(c.shape(), out)?;
        self.push("mul_const", t, Op::MulConst(x, c))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var, TensorError> {
        let t = self.value(x).map(|v| v * s);
        self.push("scale", t, Op::Scale(x, s))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, TensorError> {
        let t = Tensor::scalar(self.value(x).sum());
        self.push("sum", t, Op::Sum(x))
    }

    /// Sum of same-shaped tensors.
    pub fn add_n(&mut self, xs: &[Var]) -> Result<Var, TensorError> {
        let first = *xs.first().ok_or(TensorError::EmptyAxis)?;
        let mut acc = self.value(first).clone();
        for &x in &xs[1..] {
            self.same_shape("add_n", first, x)?;
            acc.add_assign(self.value(x));
        }
        self.push("add_n", acc, Op::AddN(xs.to_vec()))
    }

    /// Inverted dropout: keeps each entry with probability `keep` and scales
    /// survivors by `1/keep`. Identity when `train` is false or `keep == 1`.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        keep: f64,
        train: bool,
        rng: &mut R,
    ) -> Result<Var, TensorError> {
        if !train || keep >= 1.0 {
            return Ok(x);
        }
        if keep <= 0.0 {
            return Err(TensorError::InvalidArgument(format!(
                "dropout keep probability {keep} must be in (0, 1]"
            )));
        }
        let shape = self.value(x).shape().to_vec();
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| {
                if rng.random::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        let mask = Tensor::new(&shape, mask)?;
        self.mul_const(x, mask)
    }

    /// `Σ_t w_t · (−log softmax(logits_t)[y_t])` over the rows of `logits[T×V]`.
    ///
    /// The weights are constants: no gradient flows into them.
    pub fn weighted_nll(
        &mut self,
        logits: Var,
        targets: &[usize],
        weights: &[f64],
    ) -> Result<Var, TensorError> {
        let (t_len, vocab) = self.dims2(logits)?;
        if targets.len() != t_len || weights.len() != t_len {
            return Err(TensorError::InvalidArgument(format!(
                "{} logit rows but {} targets and {} weights",
                t_len,
                targets.len(),
                weights.len()
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&y| y >= vocab) {
            return Err(TensorError::OutOfRange {
                index: bad,
                bound: vocab,
            });
        }
        let lv = self.value(logits);
        let mut probs = Vec::with_capacity(t_len * vocab);
        let mut total = 0.0;
        for (t, (&y, &w)) in targets.iter().zip(weights).enumerate() {
            let row = lv.row(t);
            let lse = log_sum_exp(row);
            total += w * (lse - row[y]);
            probs.extend(row.iter().map(|v| (v - lse).exp()));
        }
        let op = Op::WeightedNll {
            logits,
            targets: targets.to_vec(),
            weights: weights.to_vec(),
            probs,
        };
        self.push("weighted_nll", Tensor::scalar(total), op)
    }

    fn same_shape(&self, name: &'static str, a: Var, b: Var) -> Result<(), TensorError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(mismatch(name, self.value(a), self.value(b)));
        }
        Ok(())
    }

    /// Reverse pass from a scalar `loss`. Returns a gradient for every named
    /// parameter; parameters the loss does not reach get zeros.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients, TensorError> {
        if self.backward_done {
            return Err(TensorError::BackwardTwice);
        }
        if self.value(loss).len() != 1 {
            return Err(TensorError::NonScalarLoss(self.value(loss).shape().to_vec()));
        }
        self.backward_done = true;

        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::filled(self.value(loss).shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let node = &self.nodes[idx];
            for (input, contrib) in local_grads(&self.nodes, node, &g) {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            }
            // Leaves keep their gradient for collection below.
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }

        let mut out = Gradients::new();
        for (name, v) in &self.params {
            let g = grads
                .get_mut(v.0)
                .and_then(Option::take)
                .unwrap_or_else(|| Tensor::zeros(self.value(*v).shape()));
            if self.checked && !g.is_finite() {
                return Err(TensorError::NonFinite("backward"));
            }
            out.insert(name.clone(), g);
        }
        Ok(out)
    }
}

fn op_inputs(op: &Op) -> Vec<Var> {
    match op {
        Op::Leaf => vec![],
        Op::MatMul(a, b)
        | Op::MatMulNT(a, b)
        | Op::MatVec(a, b)
        | Op::VecMat(a, b)
        | Op::Add(a, b)
        | Op::Mul(a, b)
        | Op::AddRowBroadcast(a, b) => vec![*a, *b],
        Op::Tanh(x)
        | Op::Sigmoid(x)
        | Op::Log(x)
        | Op::Softmax(x)
        | Op::MulConst(x, _)
        | Op::Scale(x, _)
        | Op::Sum(x) => vec![*x],
        Op::Slice { input, .. } | Op::Row { input, .. } => vec![*input],
        Op::Concat(xs) | Op::Stack(xs) | Op::AddN(xs) => xs.clone(),
        Op::WeightedNll { logits, .. } => vec![*logits],
    }
}

/// Vector-Jacobian products of one node with respect to each of its inputs.
fn local_grads(nodes: &[Node], node: &Node, g: &Tensor) -> Vec<(Var, Tensor)> {
    let val = |v: Var| &nodes[v.0].value;
    let gd = g.data();
    match &node.op {
        Op::Leaf => vec![],
        Op::MatMul(a, b) => {
            let (m, k) = val(*a).dims2().unwrap();
            let n = val(*b).shape()[1];
            let (ad, bd) = (val(*a).data(), val(*b).data());
            // dA = dC · Bᵀ
            let mut da = vec![0.0; m * k];
            for i in 0..m {
                for p in 0..k {
                    da[i * k + p] = dot(&gd[i * n..(i + 1) * n], &bd[p * n..(p + 1) * n]);
                }
            }
            // dB = Aᵀ · dC
            let mut db = vec![0.0; k * n];
            for i in 0..m {
                for p in 0..k {
                    let a_ip = ad[i * k + p];
                    for j in 0..n {
                        db[p * n + j] += a_ip * gd[i * n + j];
                    }
                }
            }
            vec![
                (*a, Tensor::new(&[m, k], da).unwrap()),
                (*b, Tensor::new(&[k, n], db).unwrap()),
            ]
        }
        Op::MatMulNT(a, b) => {
            let (m, k) = val(*a).dims2().unwrap();
            let n = val(*b).shape()[0];
            let (ad, bd) = (val(*a).data(), val(*b).data());
            // C = A Bᵀ: dA = dC · B, dB = dCᵀ · A
            let mut da = vec![0.0; m * k];
            let mut db = vec![0.0; n * k];
            for i in 0..m {
                for j in 0..n {
                    let gij = gd[i * n + j];
                    if gij == 0.0 {
                        continue;
                    }
                    for p in 0..k {
                        da[i * k + p] += gij * bd[j * k + p];
                        db[j * k + p] += gij * ad[i * k + p];
                    }
                }
            }
            vec![
                (*a, Tensor::new(&[m, k], da).unwrap()),
                (*b, Tensor::new(&[n, k], db).unwrap()),
            ]
        }
        Op::MatVec(w, x) => {
            let (m, k) = val(*w).dims2().unwrap();
            let (wd, xd) = (val(*w).data(), val(*x).data());
            let mut dw = vec![0.0; m * k];
            let mut dx = vec![0.0; k];
            for i in 0..m {
                let gi = gd[i];
                for p in 0..k {
                    dw[i * k + p] = gi * xd[p];
                    dx[p] += wd[i * k + p] * gi;
                }
            }
            vec![
                (*w, Tensor::new(&[m, k], dw).unwrap()),
                (*x, Tensor::vector(dx)),
            ]
        }
        Op::VecMat(w, x) => {
            let (n, d) = val(*x).dims2().unwrap();
            let (wd, xd) = (val(*w).data(), val(*x).data());
            let dw: Vec<f64> = (0..n).map(|i| dot(&xd[i * d..(i + 1) * d], gd)).collect();
            let mut dx = vec![0.0; n * d];
            for i in 0..n {
                for j in 0..d {
                    dx[i * d + j] = wd[i] * gd[j];
                }
            }
            vec![
                (*w, Tensor::vector(dw)),
                (*x, Tensor::new(&[n, d], dx).unwrap()),
            ]
        }
        Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
        Op::Mul(a, b) => {
            let da = zip_map(g, val(*b), |x, y| x * y);
            let db = zip_map(g, val(*a), |x, y| x * y);
            vec![
                (*a, Tensor::new(g.shape(), da).unwrap()),
                (*b, Tensor::new(g.shape(), db).unwrap()),
            ]
        }
        Op::AddRowBroadcast(x, v) => {
            let (n, d) = g.dims2().unwrap();
            let mut dv = vec![0.0; d];
            for i in 0..n {
                for (acc, gv) in dv.iter_mut().zip(&gd[i * d..(i + 1) * d]) {
                    *acc += gv;
                }
            }
            vec![(*x, g.clone()), (*v, Tensor::vector(dv))]
        }
        Op::Tanh(x) => {
            let d = zip_map(g, &node.value, |gv, y| gv * (1.0 - y * y));
            vec![(*x, Tensor::new(g.shape(), d).unwrap())]
        }
        Op::Sigmoid(x) => {
            let d = zip_map(g, &node.value, |gv, y| gv * y * (1.0 - y));
            vec![(*x, Tensor::new(g.shape(), d).unwrap())]
        }
        Op::Log(x) => {
            let d = zip_map(g, val(*x), |gv, xv| gv / xv);
            vec![(*x, Tensor::new(g.shape(), d).unwrap())]
        }
        Op::Softmax(x) => {
            let y = node.value.data();
            let inner = dot(gd, y);
            let d: Vec<f64> = y.iter().zip(gd).map(|(yi, gi)| yi * (gi - inner)).collect();
            vec![(*x, Tensor::vector(d))]
        }
        Op::Concat(parts) => {
            let mut offset = 0;
            parts
                .iter()
                .map(|p| {
                    let n = val(*p).len();
                    let piece = Tensor::vector(gd[offset..offset + n].to_vec());
                    offset += n;
                    (*p, piece)
                })
                .collect()
        }
        Op::Slice { input, start } => {
            let mut d = vec![0.0; val(*input).len()];
            d[*start..*start + gd.len()].copy_from_slice(gd);
            vec![(*input, Tensor::vector(d))]
        }
        Op::Stack(rows) => {
            let d = g.shape()[1];
            rows.iter()
                .enumerate()
                .map(|(i, r)| (*r, Tensor::vector(gd[i * d..(i + 1) * d].to_vec())))
                .collect()
        }
        Op::Row { input, row } => {
            let mut d = Tensor::zeros(val(*input).shape());
            let cols = gd.len();
            d.data_mut()[row * cols..(row + 1) * cols].copy_from_slice(gd);
            vec![(*input, d)]
        }
        Op::MulConst(x, c) => {
            let d = zip_map(g, c, |a, b| a * b);
            vec![(*x, Tensor::new(g.shape(), d).unwrap())]
        }
        Op::Scale(x, s) => vec![(*x, g.map(|v| v * s))],
        Op::Sum(x) => vec![(*x, Tensor::filled(val(*x).shape(), gd[0]))],
        Op::AddN(xs) => xs.iter().map(|x| (*x, g.clone())).collect(),
        Op::WeightedNll {
            logits,
            targets,
            weights,
            probs,
        } => {
            let vocab = val(*logits).shape()[1];
            let mut d = probs.clone();
            for (t, (&y, &w)) in targets.iter().zip(weights).enumerate() {
                let row = &mut d[t * vocab..(t + 1) * vocab];
                row[y] -= 1.0;
                row.iter_mut().for_each(|v| *v *= w * gd[0]);
            }
            vec![(*logits, Tensor::new(val(*logits).shape(), d).unwrap())]
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let a_ip = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in out[i * n..(i + 1) * n].iter_mut().zip(brow) {
                *o += a_ip * bv;
            }
        }
    }
    out
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect()
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}
