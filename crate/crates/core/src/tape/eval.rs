use std::borrow::Cow;

use super::value::{column_sums, dot, value_matmul, LowRank, Value};
use super::{NodeId, Op, TapeError, TapeGraph};
use crate::tensor::{matmul, Tensor};

const NORM_EPS: f64 = 1e-12;

/// Whether dense products may be stored in factored form.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Factoring {
    /// Factor when the output is large relative to the inner dimension.
    #[default]
    Auto,
    Never,
    Always,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ForwardOptions {
    /// Reject non-finite values and out-of-domain inputs (log of x <= 0,
    /// normalizing a zero row) with an error naming the node.
    pub checked: bool,
    pub factoring: Factoring,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        Self {
            checked: true,
            factoring: Factoring::Auto,
        }
    }
}

impl ForwardOptions {
    pub fn unchecked() -> Self {
        Self {
            checked: false,
            ..Self::default()
        }
    }
}

fn should_factor(m: usize, k: usize, n: usize, policy: Factoring) -> bool {
    match policy {
        Factoring::Never => false,
        Factoring::Always => true,
        Factoring::Auto => m * n >= 1 << 16 && m * n >= 4 * k * (m + n),
    }
}

/// Values of every node after a forward pass.
#[derive(Clone, Debug)]
pub struct Evaluation {
    values: Vec<Value>,
    output: Option<NodeId>,
}

impl Evaluation {
    pub fn value(&self, id: NodeId) -> &Value {
        &self.values[id.0]
    }

    pub fn tensor(&self, id: NodeId) -> Cow<'_, Tensor> {
        self.values[id.0].dense()
    }

    pub fn output(&self) -> Result<Cow<'_, Tensor>, TapeError> {
        let id = self.output.ok_or(TapeError::NoOutput)?;
        Ok(self.tensor(id))
    }

    /// The output as a number; errors unless it is 1×1.
    pub fn scalar(&self) -> Result<f64, TapeError> {
        let id = self.output.ok_or(TapeError::NoOutput)?;
        match self.values[id.0].shape() {
            (1, 1) => Ok(self.tensor(id).item()),
            s => Err(TapeError::NonScalarOutput(s)),
        }
    }

    pub fn values(&self) -> &[Value] {
        &self.values
    }
}

/// Checked forward pass with automatic factoring.
pub fn forward(graph: &TapeGraph, inputs: &[&Tensor]) -> Result<Evaluation, TapeError> {
    forward_with(graph, inputs, ForwardOptions::default())
}

/// Evaluates every node in tape order. `inputs` bind positionally to
/// [`TapeGraph::inputs`].
pub fn forward_with(graph: &TapeGraph, inputs: &[&Tensor], opts: ForwardOptions) -> Result<Evaluation, TapeError> {
    run(graph, inputs.iter().map(|&t| Cow::Borrowed(t)).collect(), opts)
}

/// [`forward_with`] taking ownership of the inputs, which saves copying
/// large feature matrices into the evaluation.
pub fn forward_owned(graph: &TapeGraph, inputs: Vec<Tensor>, opts: ForwardOptions) -> Result<Evaluation, TapeError> {
    run(graph, inputs.into_iter().map(Cow::Owned).collect(), opts)
}

fn run(graph: &TapeGraph, inputs: Vec<Cow<'_, Tensor>>, opts: ForwardOptions) -> Result<Evaluation, TapeError> {
    if inputs.len() != graph.inputs().len() {
        return Err(TapeError::InputCount {
            expected: graph.inputs().len(),
            got: inputs.len(),
        });
    }
    let mut bound: Vec<Option<Cow<'_, Tensor>>> = vec![None; graph.len()];
    for (&id, t) in graph.inputs().iter().zip(inputs) {
        let expected = graph.shape(id);
        if t.shape() != expected {
            return Err(TapeError::InputShape {
                name: graph.input_name(id).unwrap_or_default().to_string(),
                expected,
                got: t.shape(),
            });
        }
        if opts.checked && !t.is_finite() {
            return Err(TapeError::NonFinite {
                node: graph.describe(id),
            });
        }
        bound[id.0] = Some(t);
    }

    let mut values: Vec<Value> = Vec::with_capacity(graph.len());
    for (idx, node) in graph.nodes().iter().enumerate() {
        let id = NodeId(idx);
        let domain = |message: &str| TapeError::Domain {
            node: graph.describe(id),
            message: message.to_string(),
        };
        let v = |n: NodeId| &values[n.0];
        let value = match &node.op {
            Op::Input { .. } => Value::Dense(bound[idx].take().expect("bound above").into_owned()),
            Op::Constant { value, .. } => Value::Dense(value.clone()),
            Op::DenseMatmul(a, b) => {
                let (m, k) = graph.shape(*a);
                let n = graph.shape(*b).1;
                match (v(*a), v(*b)) {
                    (Value::Dense(x), Value::Dense(y)) if should_factor(m, k, n, opts.factoring) => {
                        Value::LowRank(LowRank::outer(x.clone(), y.transpose()))
                    }
                    (x, y) => Value::Dense(value_matmul(x, false, y, false)),
                }
            }
            Op::Spmm { adj, input } => Value::Dense(adj.spmm(&v(*input).dense())),
            Op::Transpose(a) => v(*a).transpose(),
            Op::Add(a, b) => v(*a).clone().add(v(*b).clone()),
            Op::Sub(a, b) => v(*a).clone().add(v(*b).scaled(-1.0)),
            Op::ScaleByConstant(a, c) => v(*a).scaled(*c),
            Op::AddConstant(a, c) => Value::Dense(v(*a).dense().map(|x| x + c)),
            Op::ElemSquare(a) => Value::Dense(v(*a).dense().map(|x| x * x)),
            Op::ElemMul(a, b) => Value::Dense(v(*a).dense().zip_map(&v(*b).dense(), |x, y| x * y)),
            Op::Relu(a) => Value::Dense(v(*a).dense().map(|x| x.max(0.0))),
            Op::Exp(a) => {
                let mut t = v(*a).dense().into_owned();
                t.map_inplace(f64::exp);
                Value::Dense(t)
            }
            Op::Log(a) => {
                let x = v(*a).dense();
                if opts.checked && x.data().iter().any(|&e| e <= 0.0) {
                    return Err(domain("log of a non-positive entry"));
                }
                Value::Dense(x.map(f64::ln))
            }
            Op::RowL2Normalize(a) => {
                let x = v(*a).dense();
                let mut out = x.clone().into_owned();
                for i in 0..out.rows() {
                    let norm = dot(x.row(i), x.row(i)).sqrt();
                    if opts.checked && norm == 0.0 {
                        return Err(domain(&format!("row {i} has zero norm")));
                    }
                    let inv = 1.0 / norm.max(NORM_EPS);
                    out.row_mut(i).iter_mut().for_each(|e| *e *= inv);
                }
                Value::Dense(out)
            }
            Op::DiagOf(a) => {
                let d = match v(*a) {
                    Value::Dense(t) => (0..t.rows()).map(|i| t.get(i, i)).collect(),
                    Value::LowRank(l) => l.diag_entries(),
                };
                Value::Dense(Tensor::from_vec(node.shape.0, 1, d))
            }
            Op::MeanAll(a) => {
                let (r, c) = graph.shape(*a);
                Value::Dense(Tensor::scalar(v(*a).sum() / (r * c) as f64))
            }
            Op::SumAll(a) => Value::Dense(Tensor::scalar(v(*a).sum())),
            Op::FrobeniusSq(a) => Value::Dense(Tensor::scalar(v(*a).dense().frobenius_sq())),
            Op::OffDiagonalMean { input, margin } => {
                Value::Dense(Tensor::scalar(off_diagonal_mean(v(*input), *margin)))
            }
        };
        if opts.checked && !value.is_finite() {
            return Err(TapeError::NonFinite {
                node: graph.describe(id),
            });
        }
        values.push(value);
    }
    Ok(Evaluation {
        values,
        output: graph.output(),
    })
}

struct MarginStats {
    /// S_ii
    diag: Vec<f64>,
    /// Σ_j S_ij
    row_sum: Vec<f64>,
    /// Σ_j S_ij²
    row_sq: Vec<f64>,
}

fn margin_stats(u: &Tensor, v: &Tensor) -> MarginStats {
    let gram = matmul(v, true, v, false);
    let ug = matmul(u, false, &gram, false);
    let vsum = column_sums(v);
    let n = u.rows();
    MarginStats {
        diag: (0..n).map(|i| dot(u.row(i), v.row(i))).collect(),
        row_sum: (0..n).map(|i| dot(u.row(i), &vsum)).collect(),
        row_sq: (0..n).map(|i| dot(u.row(i), ug.row(i))).collect(),
    }
}

fn off_diagonal_mean(s: &Value, margin: f64) -> f64 {
    let n = s.shape().0;
    let pairs = (n * (n - 1)) as f64;
    if let Value::LowRank(l) = s {
        if let Some((u, v)) = l.single_term() {
            let st = margin_stats(u, v);
            let total: f64 = (0..n)
                .map(|i| {
                    // Σ_{j≠i} (S_ij - a)², a = S_ii - m
                    let sii = st.diag[i];
                    let a = sii - margin;
                    (st.row_sq[i] - sii * sii) - 2.0 * a * (st.row_sum[i] - sii) + (n - 1) as f64 * a * a
                })
                .sum();
            return total / pairs;
        }
    }
    let s = s.dense();
    let mut total = 0.0;
    for i in 0..n {
        let a = s.get(i, i) - margin;
        for (j, &sij) in s.row(i).iter().enumerate() {
            if j != i {
                let d = sij - a;
                total += d * d;
            }
        }
    }
    total / pairs
}

/// Adjoint of the margin mean w.r.t. its input, for output adjoint `g`.
fn off_diagonal_mean_grad(s: &Value, margin: f64, g: f64) -> Value {
    let n = s.shape().0;
    let c = 2.0 * g / (n * (n - 1)) as f64;
    if let Value::LowRank(l) = s {
        if let Some((u, v)) = l.single_term() {
            let st = margin_stats(u, v);
            // G = c·U Vᵀ - c·a 1ᵀ + diag(e)
            let a: Vec<f64> = st.diag.iter().map(|d| d - margin).collect();
            let e: Vec<f64> = (0..n)
                .map(|i| {
                    let gii = -c * ((st.row_sum[i] - st.diag[i]) - (n - 1) as f64 * a[i]);
                    gii - c * margin
                })
                .collect();
            let shift = Tensor::from_vec(n, 1, a.iter().map(|ai| -c * ai).collect());
            let ones = Tensor::filled(n, 1, 1.0);
            let grad = LowRank::outer(u.scaled(c), v.clone())
                .concat(LowRank::outer(shift, ones))
                .concat(LowRank::diagonal(e));
            return Value::LowRank(grad);
        }
    }
    let s = s.dense();
    let mut grad = Tensor::zeros(n, n);
    for i in 0..n {
        let a = s.get(i, i) - margin;
        let mut diag = 0.0;
        for j in 0..n {
            if j != i {
                let d = c * (s.get(i, j) - a);
                grad.set(i, j, d);
                diag -= d;
            }
        }
        grad.set(i, i, diag);
    }
    Value::Dense(grad)
}

/// Gradients of the scalar output w.r.t. each parameter input.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    grads: Vec<(NodeId, Tensor)>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.iter().find(|(n, _)| *n == id).map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &Tensor)> {
        self.grads.iter().map(|(n, t)| (*n, t))
    }

    pub fn into_vec(self) -> Vec<(NodeId, Tensor)> {
        self.grads
    }
}

fn accumulate(slot: &mut Option<Value>, contribution: Value) {
    *slot = Some(match slot.take() {
        None => contribution,
        Some(prev) => prev.add(contribution),
    });
}

/// Reverse sweep from the designated (scalar) output.
pub fn backward(graph: &TapeGraph, eval: &Evaluation) -> Result<Gradients, TapeError> {
    let out = graph.output().ok_or(TapeError::NoOutput)?;
    let shape = graph.shape(out);
    if shape != (1, 1) {
        return Err(TapeError::NonScalarOutput(shape));
    }
    let nodes = graph.nodes();
    let mut adj: Vec<Option<Value>> = vec![None; nodes.len()];
    adj[out.0] = Some(Value::Dense(Tensor::scalar(1.0)));
    let val = |id: NodeId| eval.value(id);
    let needs = |id: NodeId| nodes[id.0].requires_grad;

    for idx in (0..nodes.len()).rev() {
        if !nodes[idx].requires_grad {
            continue;
        }
        let g = match &nodes[idx].op {
            Op::Input { .. } => continue,
            _ => match adj[idx].take() {
                Some(g) => g,
                None => continue,
            },
        };
        match &nodes[idx].op {
            Op::Input { .. } | Op::Constant { .. } => {}
            Op::DenseMatmul(a, b) => {
                let (m, k) = graph.shape(*a);
                let n = graph.shape(*b).1;
                if needs(*a) {
                    // a thin inner dimension keeps G·Bᵀ factored
                    let ga = match (&g, val(*b)) {
                        (Value::Dense(gd), Value::Dense(bd)) if should_factor(m, n, k, Factoring::Auto) => {
                            Value::LowRank(LowRank::outer(gd.clone(), bd.clone()))
                        }
                        (g, b) => Value::Dense(value_matmul(g, false, b, true)),
                    };
                    accumulate(&mut adj[a.0], ga);
                }
                if needs(*b) {
                    let gb = match (val(*a), &g) {
                        (Value::Dense(ad), Value::Dense(gd)) if should_factor(k, m, n, Factoring::Auto) => {
                            Value::LowRank(LowRank::outer(ad.transpose(), gd.transpose()))
                        }
                        (a, g) => Value::Dense(value_matmul(a, true, g, false)),
                    };
                    accumulate(&mut adj[b.0], gb);
                }
            }
            Op::Spmm { adj: m, input } => {
                let gi = m.spmm_transposed(&g.dense());
                accumulate(&mut adj[input.0], Value::Dense(gi));
            }
            Op::Transpose(a) => accumulate(&mut adj[a.0], g.transpose()),
            Op::Add(a, b) => {
                if needs(*b) {
                    accumulate(&mut adj[b.0], g.clone());
                }
                if needs(*a) {
                    accumulate(&mut adj[a.0], g);
                }
            }
            Op::Sub(a, b) => {
                if needs(*b) {
                    accumulate(&mut adj[b.0], g.scaled(-1.0));
                }
                if needs(*a) {
                    accumulate(&mut adj[a.0], g);
                }
            }
            Op::ScaleByConstant(a, c) => accumulate(&mut adj[a.0], g.into_scaled(*c)),
            Op::AddConstant(a, _) => accumulate(&mut adj[a.0], g),
            Op::ElemSquare(a) => {
                let x = val(*a).dense();
                let gi = g.zip_dense(&x, |gv, xv| 2.0 * gv * xv);
                accumulate(&mut adj[a.0], Value::Dense(gi));
            }
            Op::ElemMul(a, b) => {
                if needs(*a) {
                    let gi = g.clone().zip_dense(&val(*b).dense(), |gv, y| gv * y);
                    accumulate(&mut adj[a.0], Value::Dense(gi));
                }
                if needs(*b) {
                    let gi = g.zip_dense(&val(*a).dense(), |gv, x| gv * x);
                    accumulate(&mut adj[b.0], Value::Dense(gi));
                }
            }
            Op::Relu(a) => {
                let x = val(*a).dense();
                let gi = g.zip_dense(&x, |gv, xv| if xv > 0.0 { gv } else { 0.0 });
                accumulate(&mut adj[a.0], Value::Dense(gi));
            }
            Op::Exp(a) => {
                let y = val(NodeId(idx)).dense();
                let gi = g.zip_dense(&y, |gv, yv| gv * yv);
                accumulate(&mut adj[a.0], Value::Dense(gi));
            }
            Op::Log(a) => {
                let x = val(*a).dense();
                let gi = g.zip_dense(&x, |gv, xv| gv / xv);
                accumulate(&mut adj[a.0], Value::Dense(gi));
            }
            Op::RowL2Normalize(a) => {
                let x = val(*a).dense();
                let y = val(NodeId(idx)).dense();
                let gd = g.dense();
                let mut gi = Tensor::zeros(x.rows(), x.cols());
                for i in 0..x.rows() {
                    let norm = dot(x.row(i), x.row(i)).sqrt().max(NORM_EPS);
                    let yg = dot(y.row(i), gd.row(i));
                    for ((o, &gv), &yv) in gi.row_mut(i).iter_mut().zip(gd.row(i)).zip(y.row(i)) {
                        *o = (gv - yv * yg) / norm;
                    }
                }
                accumulate(&mut adj[a.0], Value::Dense(gi));
            }
            Op::DiagOf(a) => {
                let d = g.dense().data().to_vec();
                accumulate(&mut adj[a.0], Value::LowRank(LowRank::diagonal(d)));
            }
            Op::MeanAll(a) | Op::SumAll(a) => {
                let (r, c) = graph.shape(*a);
                let mut gv = g.dense().item();
                if matches!(nodes[idx].op, Op::MeanAll(_)) {
                    gv /= (r * c) as f64;
                }
                let gi = match val(*a) {
                    Value::LowRank(_) => {
                        Value::LowRank(LowRank::outer(Tensor::filled(r, 1, gv), Tensor::filled(c, 1, 1.0)))
                    }
                    Value::Dense(_) => Value::Dense(Tensor::filled(r, c, gv)),
                };
                accumulate(&mut adj[a.0], gi);
            }
            Op::FrobeniusSq(a) => {
                let gv = g.dense().item();
                let gi = val(*a).dense().scaled(2.0 * gv);
                accumulate(&mut adj[a.0], Value::Dense(gi));
            }
            Op::OffDiagonalMean { input, margin } => {
                let gv = g.dense().item();
                accumulate(&mut adj[input.0], off_diagonal_mean_grad(val(*input), *margin, gv));
            }
        }
    }

    let grads = graph
        .parameters()
        .map(|id| {
            let (r, c) = graph.shape(id);
            let t = adj[id.0]
                .take()
                .map(Value::into_dense)
                .unwrap_or_else(|| Tensor::zeros(r, c));
            (id, t)
        })
        .collect();
    Ok(Gradients { grads })
}
