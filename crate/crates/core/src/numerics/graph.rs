//! Dynamic tape for reverse-mode differentiation.
//!
//! Every primitive appends one node holding its forward value and the
//! handles of its parents. Nodes are only ever appended, so recording order
//! is already a topological order and [`Graph::backward`] walks the tape
//! once in reverse. A graph is rebuilt for every forward pass.

use super::{NumericsError, Tensor};

/// Layer-norm epsilon; population variance is used.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatVec(Var, Var),
    MatTVec(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normalized: Vec<f64>,
        inv_std: f64,
    },
    Sum(Var),
    Mean(Var),
    Dot(Var, Var),
    Index(Var, usize),
    Row(Var, usize),
    Concat(Vec<Var>),
    StackRows(Vec<Var>),
    BceWithLogits(Var, Vec<f64>),
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation, one per forward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by one call to [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`, if the loss depends on it.
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }
}

fn dim_err(op: &'static str, detail: String) -> NumericsError {
    NumericsError::Dimension { op, detail }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
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

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// Value of a single-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("recorded nodes are well formed")
    }

    fn push(
        &mut self,
        op_name: &'static str,
        shape: Vec<usize>,
        value: Vec<f64>,
        op: Op,
        requires_grad: bool,
    ) -> Result<Var, NumericsError> {
        if value.iter().any(|x| !x.is_finite()) {
            return Err(NumericsError::NonFinite { op: op_name });
        }
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn numel(&self, v: Var) -> usize {
        self.nodes[v.0].value.len()
    }

    fn matrix_dims(&self, op: &'static str, v: Var) -> Result<(usize, usize), NumericsError> {
        match self.nodes[v.0].shape.as_slice() {
            [m, n] => Ok((*m, *n)),
            s => Err(dim_err(op, format!("expected a matrix, got shape {s:?}"))),
        }
    }

    /// Trainable leaf holding a copy of `t`.
    pub fn param(&mut self, t: &Tensor) -> Var {
        self.nodes.push(Node {
            shape: t.shape().to_vec(),
            value: t.data().to_vec(),
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant leaf; no gradient is propagated into it.
    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.nodes.push(Node {
            shape: t.shape().to_vec(),
            value: t.data().to_vec(),
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn vector(&mut self, data: Vec<f64>) -> Result<Var, NumericsError> {
        let n = data.len();
        self.push("vector", vec![n], data, Op::Leaf, false)
    }

    pub fn scalar_const(&mut self, value: f64) -> Result<Var, NumericsError> {
        self.push("scalar", vec![], vec![value], Op::Leaf, false)
    }

    /// Copy of `v` cut off from the tape.
    pub fn detach(&mut self, v: Var) -> Var {
        let node = &self.nodes[v.0];
        let (shape, value) = (node.shape.clone(), node.value.clone());
        self.nodes.push(Node {
            shape,
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// `W x` for `W: [m, n]`, `x: [n]`.
    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var, NumericsError> {
        let (m, n) = self.matrix_dims("matvec", w)?;
        if self.numel(x) != n {
            return Err(dim_err(
                "matvec",
                format!("matrix {m}x{n} vs vector {}", self.numel(x)),
            ));
        }
        let wv = &self.nodes[w.0].value;
        let xv = &self.nodes[x.0].value;
        let out = (0..m)
            .map(|i| {
                wv[i * n..(i + 1) * n]
                    .iter()
                    .zip(xv)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect();
        let rg = self.rg(w) || self.rg(x);
        self.push("matvec", vec![m], out, Op::MatVec(w, x), rg)
    }

    /// `Wᵀ p` for `W: [m, n]`, `p: [m]`, i.e. the `p`-weighted sum of rows.
    pub fn mat_t_vec(&mut self, w: Var, p: Var) -> Result<Var, NumericsError> {
        let (m, n) = self.matrix_dims("mat_t_vec", w)?;
        if self.numel(p) != m {
            return Err(dim_err(
                "mat_t_vec",
                format!("matrix {m}x{n} vs weights {}", self.numel(p)),
            ));
        }
        let wv = &self.nodes[w.0].value;
        let pv = &self.nodes[p.0].value;
        let mut out = vec![0.0; n];
        for (i, &pi) in pv.iter().enumerate() {
            for (o, &wij) in out.iter_mut().zip(&wv[i * n..(i + 1) * n]) {
                *o += pi * wij;
            }
        }
        let rg = self.rg(w) || self.rg(p);
        self.push("mat_t_vec", vec![n], out, Op::MatTVec(w, p), rg)
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, NumericsError> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(dim_err(
                name,
                format!("{:?} vs {:?}", self.nodes[a.0].shape, self.nodes[b.0].shape),
            ));
        }
        let out = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| f(*x, *y))
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.rg(a) || self.rg(b);
        self.push(name, shape, out, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, NumericsError> {
        let out = self.nodes[a.0].value.iter().map(|x| x * c).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.rg(a);
        self.push("scale", shape, out, Op::Scale(a, c), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, NumericsError> {
        let out = self.nodes[a.0].value.iter().map(|x| x.tanh()).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.rg(a);
        self.push("tanh", shape, out, Op::Tanh(a), rg)
    }

    /// Numerically stable softmax over a non-empty vector.
    pub fn softmax(&mut self, a: Var) -> Result<Var, NumericsError> {
        let x = &self.nodes[a.0].value;
        if x.is_empty() {
            return Err(dim_err("softmax", "empty input".into()));
        }
        let out = softmax_values(x);
        let rg = self.rg(a);
        self.push("softmax", vec![out.len()], out, Op::Softmax(a), rg)
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var, NumericsError> {
        let x = &self.nodes[a.0].value;
        if x.is_empty() {
            return Err(dim_err("log_softmax", "empty input".into()));
        }
        let out = log_softmax_values(x);
        let rg = self.rg(a);
        self.push("log_softmax", vec![out.len()], out, Op::LogSoftmax(a), rg)
    }

    /// `gain ⊙ (x − mean) / sqrt(var + ε) + bias` with population variance.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var, NumericsError> {
        let n = self.numel(x);
        if n < 2 {
            return Err(dim_err(
                "layer_norm",
                format!("need at least 2 features, got {n}"),
            ));
        }
        if self.numel(gain) != n || self.numel(bias) != n {
            return Err(dim_err(
                "layer_norm",
                "gain/bias length differs from input".into(),
            ));
        }
        let xv = &self.nodes[x.0].value;
        let mean = xv.iter().sum::<f64>() / n as f64;
        let var = xv.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let inv_std = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        let normalized: Vec<f64> = xv.iter().map(|v| (v - mean) * inv_std).collect();
        let out = normalized
            .iter()
            .zip(&self.nodes[gain.0].value)
            .zip(&self.nodes[bias.0].value)
            .map(|((h, g), b)| g * h + b)
            .collect();
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        self.push(
            "layer_norm",
            vec![n],
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            },
            rg,
        )
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, NumericsError> {
        let s = self.nodes[a.0].value.iter().sum();
        let rg = self.rg(a);
        self.push("sum", vec![], vec![s], Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, NumericsError> {
        let n = self.numel(a);
        if n == 0 {
            return Err(dim_err("mean", "empty input".into()));
        }
        let s = self.nodes[a.0].value.iter().sum::<f64>() / n as f64;
        let rg = self.rg(a);
        self.push("mean", vec![], vec![s], Op::Mean(a), rg)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        if self.numel(a) != self.numel(b) {
            return Err(dim_err(
                "dot",
                format!("{} vs {}", self.numel(a), self.numel(b)),
            ));
        }
        let s = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x * y)
            .sum();
        let rg = self.rg(a) || self.rg(b);
        self.push("dot", vec![], vec![s], Op::Dot(a, b), rg)
    }

    /// Element `i` of a flattened node, as a scalar.
    pub fn index(&mut self, a: Var, i: usize) -> Result<Var, NumericsError> {
        let n = self.numel(a);
        if i >= n {
            return Err(dim_err(
                "index",
                format!("index {i} out of range for length {n}"),
            ));
        }
        let v = self.nodes[a.0].value[i];
        let rg = self.rg(a);
        self.push("index", vec![], vec![v], Op::Index(a, i), rg)
    }

    /// Row `i` of a matrix (embedding lookup).
    pub fn row(&mut self, w: Var, i: usize) -> Result<Var, NumericsError> {
        let (m, n) = self.matrix_dims("row", w)?;
        if i >= m {
            return Err(dim_err("row", format!("row {i} out of range for {m} rows")));
        }
        let out = self.nodes[w.0].value[i * n..(i + 1) * n].to_vec();
        let rg = self.rg(w);
        self.push("row", vec![n], out, Op::Row(w, i), rg)
    }

    /// Flattens and joins the inputs into one vector.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        if parts.is_empty() {
            return Err(dim_err("concat", "no inputs".into()));
        }
        let out: Vec<f64> = parts
            .iter()
            .flat_map(|p| self.nodes[p.0].value.iter().copied())
            .collect();
        let rg = parts.iter().any(|p| self.rg(*p));
        self.push(
            "concat",
            vec![out.len()],
            out,
            Op::Concat(parts.to_vec()),
            rg,
        )
    }

    /// Stacks equally sized vectors as the rows of a matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var, NumericsError> {
        let n = rows
            .first()
            .map(|r| self.numel(*r))
            .ok_or_else(|| dim_err("stack_rows", "no rows".into()))?;
        if rows.iter().any(|r| self.numel(*r) != n) {
            return Err(dim_err("stack_rows", "rows differ in length".into()));
        }
        let out: Vec<f64> = rows
            .iter()
            .flat_map(|r| self.nodes[r.0].value.iter().copied())
            .collect();
        let rg = rows.iter().any(|r| self.rg(*r));
        self.push(
            "stack_rows",
            vec![rows.len(), n],
            out,
            Op::StackRows(rows.to_vec()),
            rg,
        )
    }

    /// Mean binary cross-entropy of `logits` against 0/1 `targets`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Result<Var, NumericsError> {
        let x = &self.nodes[logits.0].value;
        if x.len() != targets.len() || x.is_empty() {
            return Err(dim_err(
                "bce_with_logits",
                format!("{} logits vs {} targets", x.len(), targets.len()),
            ));
        }
        let loss = x
            .iter()
            .zip(targets)
            .map(|(&l, &y)| l.max(0.0) - l * y + (-l.abs()).exp().ln_1p())
            .sum::<f64>()
            / x.len() as f64;
        let rg = self.rg(logits);
        self.push(
            "bce_with_logits",
            vec![],
            vec![loss],
            Op::BceWithLogits(logits, targets.to_vec()),
            rg,
        )
    }

    /// Reverse pass from a scalar `loss`. Each recorded node is visited once.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumericsError> {
        if self.numel(loss) != 1 {
            return Err(NumericsError::NonScalarLoss {
                shape: self.nodes[loss.0].shape.clone(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.requires_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        if grads.iter().flatten().flatten().any(|v| !v.is_finite()) {
            return Err(NumericsError::NonFinite { op: "backward" });
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.rg(v) {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
        f(slot);
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatVec(w, x) => {
                let n = self.nodes[x.0].value.len();
                let xv = &self.nodes[x.0].value;
                let wv = &self.nodes[w.0].value;
                self.accumulate(grads, *w, |gw| {
                    for (i, gi) in g.iter().enumerate() {
                        for (d, xj) in gw[i * n..(i + 1) * n].iter_mut().zip(xv) {
                            *d += gi * xj;
                        }
                    }
                });
                self.accumulate(grads, *x, |gx| {
                    for (i, gi) in g.iter().enumerate() {
                        for (d, wij) in gx.iter_mut().zip(&wv[i * n..(i + 1) * n]) {
                            *d += gi * wij;
                        }
                    }
                });
            }
            Op::MatTVec(w, p) => {
                let n = g.len();
                let pv = &self.nodes[p.0].value;
                let wv = &self.nodes[w.0].value;
                self.accumulate(grads, *w, |gw| {
                    for (i, pi) in pv.iter().enumerate() {
                        for (d, gj) in gw[i * n..(i + 1) * n].iter_mut().zip(g) {
                            *d += pi * gj;
                        }
                    }
                });
                self.accumulate(grads, *p, |gp| {
                    for (i, d) in gp.iter_mut().enumerate() {
                        *d += wv[i * n..(i + 1) * n]
                            .iter()
                            .zip(g)
                            .map(|(a, b)| a * b)
                            .sum::<f64>();
                    }
                });
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |ga| add_into(ga, g));
                self.accumulate(grads, *b, |gb| add_into(gb, g));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, |ga| add_into(ga, g));
                self.accumulate(grads, *b, |gb| {
                    for (d, s) in gb.iter_mut().zip(g) {
                        *d -= s;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                self.accumulate(grads, *a, |ga| {
                    for ((d, s), y) in ga.iter_mut().zip(g).zip(bv) {
                        *d += s * y;
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for ((d, s), x) in gb.iter_mut().zip(g).zip(av) {
                        *d += s * x;
                    }
                });
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, |ga| {
                for (d, s) in ga.iter_mut().zip(g) {
                    *d += s * c;
                }
            }),
            Op::Tanh(a) => self.accumulate(grads, *a, |ga| {
                for ((d, s), y) in ga.iter_mut().zip(g).zip(&node.value) {
                    *d += s * (1.0 - y * y);
                }
            }),
            Op::Softmax(a) => {
                let gy: f64 = g.iter().zip(&node.value).map(|(s, y)| s * y).sum();
                self.accumulate(grads, *a, |ga| {
                    for ((d, s), y) in ga.iter_mut().zip(g).zip(&node.value) {
                        *d += y * (s - gy);
                    }
                });
            }
            Op::LogSoftmax(a) => {
                let total: f64 = g.iter().sum();
                self.accumulate(grads, *a, |ga| {
                    for ((d, s), ly) in ga.iter_mut().zip(g).zip(&node.value) {
                        *d += s - ly.exp() * total;
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            } => {
                let n = normalized.len() as f64;
                let gv = &self.nodes[gain.0].value;
                let dh: Vec<f64> = g.iter().zip(gv).map(|(s, w)| s * w).collect();
                let sum_dh: f64 = dh.iter().sum();
                let sum_dh_h: f64 = dh.iter().zip(normalized).map(|(d, h)| d * h).sum();
                self.accumulate(grads, *x, |gx| {
                    for ((d, dhi), hi) in gx.iter_mut().zip(&dh).zip(normalized) {
                        *d += inv_std / n * (n * dhi - sum_dh - hi * sum_dh_h);
                    }
                });
                self.accumulate(grads, *gain, |gg| {
                    for ((d, s), h) in gg.iter_mut().zip(g).zip(normalized) {
                        *d += s * h;
                    }
                });
                self.accumulate(grads, *bias, |gb| add_into(gb, g));
            }
            Op::Sum(a) => self.accumulate(grads, *a, |ga| {
                for d in ga.iter_mut() {
                    *d += g[0];
                }
            }),
            Op::Mean(a) => {
                let n = self.nodes[a.0].value.len() as f64;
                self.accumulate(grads, *a, |ga| {
                    for d in ga.iter_mut() {
                        *d += g[0] / n;
                    }
                });
            }
            Op::Dot(a, b) => {
                let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                self.accumulate(grads, *a, |ga| {
                    for (d, y) in ga.iter_mut().zip(bv) {
                        *d += g[0] * y;
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for (d, x) in gb.iter_mut().zip(av) {
                        *d += g[0] * x;
                    }
                });
            }
            Op::Index(a, i) => self.accumulate(grads, *a, |ga| ga[*i] += g[0]),
            Op::Row(w, i) => {
                let n = g.len();
                self.accumulate(grads, *w, |gw| add_into(&mut gw[i * n..(i + 1) * n], g));
            }
            Op::Concat(parts) | Op::StackRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.nodes[p.0].value.len();
                    self.accumulate(grads, *p, |gp| add_into(gp, &g[offset..offset + len]));
                    offset += len;
                }
            }
            Op::BceWithLogits(logits, targets) => {
                let n = targets.len() as f64;
                let lv = &self.nodes[logits.0].value;
                self.accumulate(grads, *logits, |gl| {
                    for ((d, l), y) in gl.iter_mut().zip(lv).zip(targets) {
                        *d += g[0] * (sigmoid(*l) - y) / n;
                    }
                });
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Softmax with max subtraction.
pub fn softmax_values(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn log_softmax_values(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = x.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    x.iter().map(|v| v - lse).collect()
}
