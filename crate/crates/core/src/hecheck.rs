//! Static HE-compatibility analysis of recorded circuits.
//!
//! Levels: encrypted inputs start at 0; a ct-pt product adds one level; a
//! ct-ct product adds one level and one ct-ct step; everything else takes
//! the max over its encrypted operands. Degrees (in the encrypted inputs) add
//! under ct-ct products, double under squaring, and are otherwise the max.
//! Nothing downstream of a non-polynomial node gets a level.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::tape::{forward, mult_kind, Circuit, CircuitNode, MultKind, NodeId, Op, OpKind, TapeError, TapeGraph};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct OffendingOp {
    pub id: usize,
    pub op: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeDepth {
    pub level: u32,
    pub ctct: u32,
    pub degree: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DepthReport {
    pub compatible: bool,
    pub ctct_depth: u32,
    pub total_levels: u32,
    pub max_degree: u64,
    pub offending_ops: Vec<OffendingOp>,
    /// Encrypted polynomial nodes only.
    pub per_node_level: BTreeMap<usize, u32>,
    #[serde(skip)]
    pub nodes: Vec<Option<NodeDepth>>,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("circuit is not HE-compatible; non-polynomial ops on the encrypted path: {}", list(.offending))]
pub struct IncompatibleError {
    pub offending: Vec<OffendingOp>,
    pub report: DepthReport,
}

fn list(ops: &[OffendingOp]) -> String {
    ops.iter()
        .map(|o| format!("#{} {}", o.id, o.op))
        .collect::<Vec<_>>()
        .join(", ")
}

fn is_squaring(op: OpKind) -> bool {
    matches!(op, OpKind::ElemSquare | OpKind::FrobeniusSq | OpKind::OffDiagonalMean)
}

fn ancestors(circuit: &Circuit, out: usize) -> Vec<bool> {
    let mut seen = vec![false; circuit.nodes.len()];
    let mut stack = vec![out];
    while let Some(i) = stack.pop() {
        if !std::mem::replace(&mut seen[i], true) {
            stack.extend(&circuit.nodes[i].inputs);
        }
    }
    seen
}

/// Analysis of a dumped (or parsed) circuit. Metrics are taken over the
/// ancestors of the output, or over every node when there is no output.
pub fn analyze_circuit(circuit: &Circuit) -> DepthReport {
    let mut nodes: Vec<Option<NodeDepth>> = Vec::with_capacity(circuit.nodes.len());
    let mut offending_ops = Vec::new();
    for n in &circuit.nodes {
        let depth = if !n.encrypted {
            None
        } else if n.op == OpKind::Input {
            Some(NodeDepth {
                level: 0,
                ctct: 0,
                degree: 1,
            })
        } else if !n.polynomial {
            offending_ops.push(OffendingOp {
                id: n.id,
                op: n.op.to_string(),
            });
            None
        } else {
            let enc: Vec<usize> = n
                .inputs
                .iter()
                .copied()
                .filter(|&i| circuit.nodes[i].encrypted)
                .collect();
            let ins: Option<Vec<NodeDepth>> = enc.iter().map(|&i| nodes[i]).collect();
            ins.filter(|v| !v.is_empty()).map(|ins| {
                let level = ins.iter().map(|d| d.level).max().unwrap_or(0);
                let ctct = ins.iter().map(|d| d.ctct).max().unwrap_or(0);
                let deg = ins.iter().map(|d| d.degree).max().unwrap_or(0);
                match n.mult {
                    MultKind::CtCt => NodeDepth {
                        level: level + 1,
                        ctct: ctct + 1,
                        degree: if is_squaring(n.op) {
                            deg.saturating_mul(2)
                        } else {
                            ins.iter().fold(0u64, |acc, d| acc.saturating_add(d.degree))
                        },
                    },
                    MultKind::CtPt => NodeDepth {
                        level: level + 1,
                        ctct,
                        degree: deg,
                    },
                    MultKind::None => NodeDepth {
                        level,
                        ctct,
                        degree: deg,
                    },
                }
            })
        };
        nodes.push(depth);
    }

    let considered = circuit
        .output
        .map(|o| ancestors(circuit, o))
        .unwrap_or_else(|| vec![true; circuit.nodes.len()]);
    let mut report = DepthReport {
        compatible: offending_ops.is_empty(),
        ctct_depth: 0,
        total_levels: 0,
        max_degree: 0,
        offending_ops,
        per_node_level: BTreeMap::new(),
        nodes: Vec::new(),
    };
    for (i, d) in nodes.iter().enumerate() {
        if let Some(d) = d {
            report.per_node_level.insert(i, d.level);
            if considered[i] {
                report.ctct_depth = report.ctct_depth.max(d.ctct);
                report.total_levels = report.total_levels.max(d.level);
                report.max_degree = report.max_degree.max(d.degree);
            }
        }
    }
    report.nodes = nodes;
    report
}

/// Structure-only analysis of a recorded tape.
pub fn analyze(tape: &TapeGraph) -> DepthReport {
    analyze_circuit(&tape.circuit())
}

/// Errors, listing the offenders, when a non-polynomial op sits on the
/// encrypted path.
pub fn assert_compatible(tape: &TapeGraph) -> Result<DepthReport, Box<IncompatibleError>> {
    let report = analyze(tape);
    if report.compatible {
        Ok(report)
    } else {
        Err(Box::new(IncompatibleError {
            offending: report.offending_ops.clone(),
            report,
        }))
    }
}

impl DepthReport {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("report serializes")
    }

    /// Fixed-width per-node table followed by the summary line.
    pub fn table(&self, circuit: &Circuit) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:>4}  {:<18} {:<10} {:>4} {:<6} {:>5} {:>4} {:>6}",
            "id", "op", "shape", "enc", "mult", "level", "ctct", "degree"
        );
        for n in &circuit.nodes {
            let d = self.nodes.get(n.id).copied().flatten();
            let show = |v: Option<String>| v.unwrap_or_else(|| "-".into());
            let _ = writeln!(
                out,
                "{:>4}  {:<18} {:<10} {:>4} {:<6} {:>5} {:>4} {:>6}{}",
                n.id,
                n.op.name(),
                format!("{}x{}", n.shape.0, n.shape.1),
                if n.encrypted { "yes" } else { "no" },
                n.mult.as_str(),
                show(d.map(|d| d.level.to_string())),
                show(d.map(|d| d.ctct.to_string())),
                show(d.map(|d| d.degree.to_string())),
                if n.encrypted && !n.polynomial {
                    "  <- non-polynomial"
                } else {
                    ""
                }
            );
        }
        let _ = writeln!(
            out,
            "compatible={} ctct_depth={} total_levels={} max_degree={}",
            self.compatible, self.ctct_depth, self.total_levels, self.max_degree
        );
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NodeMagnitude {
    pub id: usize,
    pub op: String,
    pub max_abs: f64,
}

/// Max |value| per node on concrete inputs: a plaintext stand-in for how far
/// values (and so CKKS noise budgets) stretch, not a noise estimate.
pub fn magnitude_probe(tape: &TapeGraph, inputs: &[&Tensor]) -> Result<Vec<NodeMagnitude>, TapeError> {
    let ev = forward(tape, inputs)?;
    Ok(tape
        .nodes()
        .iter()
        .enumerate()
        .map(|(i, n)| NodeMagnitude {
            id: i,
            op: n.kind().to_string(),
            max_abs: ev.tensor(NodeId(i)).max_abs(),
        })
        .collect())
}

/// The forward circuit followed by the structure of its reverse sweep, for
/// reporting what training under encryption would cost. Derivatives that
/// are not polynomial (relu mask, 1/x, the normalization Jacobian) appear
/// under the kind of the forward op they come from.
#[derive(Clone, Debug)]
pub struct BackwardCircuit {
    pub circuit: Circuit,
    /// Parameter name and the circuit node holding its gradient.
    pub gradients: Vec<(String, usize)>,
}

struct Builder {
    nodes: Vec<CircuitNode>,
}

impl Builder {
    fn push(&mut self, op: OpKind, inputs: Vec<usize>, shape: (usize, usize)) -> usize {
        let flags: Vec<bool> = inputs.iter().map(|&i| self.nodes[i].encrypted).collect();
        let id = self.nodes.len();
        self.nodes.push(CircuitNode {
            id,
            op,
            mult: mult_kind(op, &flags),
            encrypted: flags.iter().any(|&e| e),
            polynomial: op.is_polynomial(),
            inputs,
            shape,
        });
        id
    }

    fn plaintext(&mut self, shape: (usize, usize)) -> usize {
        self.push(OpKind::Constant, vec![], shape)
    }

    fn shape(&self, i: usize) -> (usize, usize) {
        self.nodes[i].shape
    }
}

pub fn backward_circuit(tape: &TapeGraph) -> Result<BackwardCircuit, TapeError> {
    let out = tape.output().ok_or(TapeError::NoOutput)?;
    if tape.shape(out) != (1, 1) {
        return Err(TapeError::NonScalarOutput(tape.shape(out)));
    }
    let fwd = tape.circuit();
    let count = fwd.nodes.len();
    let mut b = Builder { nodes: fwd.nodes };
    let mut adj: Vec<Option<usize>> = vec![None; count];
    adj[out.index()] = Some(b.plaintext((1, 1)));
    let needs = |i: NodeId| tape.node(i).requires_grad;

    fn acc(b: &mut Builder, adj: &mut [Option<usize>], target: NodeId, g: usize) {
        let t = target.index();
        adj[t] = Some(match adj[t] {
            None => g,
            Some(prev) => {
                let shape = b.shape(prev);
                b.push(OpKind::Add, vec![prev, g], shape)
            }
        });
    }

    for idx in (0..count).rev() {
        let node = tape.node(NodeId(idx));
        if !node.requires_grad {
            continue;
        }
        let Some(g) = adj[idx] else { continue };
        let shape_of = |i: NodeId| tape.shape(i);
        match &node.op {
            Op::Input { .. } | Op::Constant { .. } => {}
            Op::DenseMatmul(a, c) => {
                if needs(*a) {
                    let ct = b.push(OpKind::Transpose, vec![c.index()], (shape_of(*c).1, shape_of(*c).0));
                    let ga = b.push(OpKind::DenseMatmul, vec![g, ct], shape_of(*a));
                    acc(&mut b, &mut adj, *a, ga);
                }
                if needs(*c) {
                    let at = b.push(OpKind::Transpose, vec![a.index()], (shape_of(*a).1, shape_of(*a).0));
                    let gc = b.push(OpKind::DenseMatmul, vec![at, g], shape_of(*c));
                    acc(&mut b, &mut adj, *c, gc);
                }
            }
            Op::Spmm { input, .. } => {
                let gi = b.push(OpKind::Spmm, vec![g], shape_of(*input));
                acc(&mut b, &mut adj, *input, gi);
            }
            Op::Transpose(a) => {
                let gi = b.push(OpKind::Transpose, vec![g], shape_of(*a));
                acc(&mut b, &mut adj, *a, gi);
            }
            Op::Add(x, y) => {
                for t in [*x, *y] {
                    if needs(t) {
                        acc(&mut b, &mut adj, t, g);
                    }
                }
            }
            Op::Sub(x, y) => {
                if needs(*x) {
                    acc(&mut b, &mut adj, *x, g);
                }
                if needs(*y) {
                    let zero = b.plaintext(shape_of(*y));
                    let neg = b.push(OpKind::Sub, vec![zero, g], shape_of(*y));
                    acc(&mut b, &mut adj, *y, neg);
                }
            }
            Op::ScaleByConstant(a, _) => {
                let gi = b.push(OpKind::ScaleByConstant, vec![g], shape_of(*a));
                acc(&mut b, &mut adj, *a, gi);
            }
            Op::AddConstant(a, _) => acc(&mut b, &mut adj, *a, g),
            Op::ElemSquare(a) | Op::FrobeniusSq(a) => {
                // 2·x∘g, with the doubling as an addition
                let t = b.push(OpKind::ElemMul, vec![a.index(), g], shape_of(*a));
                let gi = b.push(OpKind::Add, vec![t, t], shape_of(*a));
                acc(&mut b, &mut adj, *a, gi);
            }
            Op::ElemMul(x, y) => {
                if needs(*x) {
                    let gi = b.push(OpKind::ElemMul, vec![g, y.index()], shape_of(*x));
                    acc(&mut b, &mut adj, *x, gi);
                }
                if needs(*y) {
                    let gi = b.push(OpKind::ElemMul, vec![g, x.index()], shape_of(*y));
                    acc(&mut b, &mut adj, *y, gi);
                }
            }
            Op::Exp(a) => {
                let gi = b.push(OpKind::ElemMul, vec![g, idx], shape_of(*a));
                acc(&mut b, &mut adj, *a, gi);
            }
            Op::Relu(a) | Op::Log(a) | Op::RowL2Normalize(a) => {
                let deriv = b.push(node.kind(), vec![a.index()], shape_of(*a));
                let gi = b.push(OpKind::ElemMul, vec![g, deriv], shape_of(*a));
                acc(&mut b, &mut adj, *a, gi);
            }
            Op::DiagOf(a) | Op::MeanAll(a) | Op::SumAll(a) => {
                // broadcast back to the operand's shape
                let gi = b.push(node.kind(), vec![g], shape_of(*a));
                acc(&mut b, &mut adj, *a, gi);
            }
            Op::OffDiagonalMean { input, .. } => {
                // c·(S − (diag(S) − m)1ᵀ) with the diagonal replaced by minus
                // its row sum; only S and the scalar adjoint are multiplied
                let s = input.index();
                let sh = shape_of(*input);
                let d = b.push(OpKind::DiagOf, vec![s], (sh.0, 1));
                let a = b.push(OpKind::AddConstant, vec![d], (sh.0, 1));
                let centered = b.push(OpKind::Sub, vec![s, a], sh);
                let rows = b.push(OpKind::SumAll, vec![centered], (sh.0, 1));
                let fixed = b.push(OpKind::Sub, vec![centered, rows], sh);
                let gi = b.push(OpKind::ElemMul, vec![g, fixed], sh);
                acc(&mut b, &mut adj, *input, gi);
            }
        }
    }

    let gradients = tape
        .parameters()
        .map(|p| {
            let id = adj[p.index()].unwrap_or_else(|| b.plaintext(tape.shape(p)));
            (tape.input_name(p).unwrap_or_default().to_string(), id)
        })
        .collect();
    Ok(BackwardCircuit {
        circuit: Circuit {
            nodes: b.nodes,
            output: None,
        },
        gradients,
    })
}
