//! Reverse-mode differentiation over a closed set of matrix ops.
//!
//! A [`TapeGraph`] is recorded once (shapes are checked at record time) and
//! evaluated with [`forward`] / [`backward`]. Every node also carries the
//! metadata the HE analyzer needs: whether it sits on the encrypted path,
//! whether it is polynomial, and what kind of multiplication it performs.

mod circuit;
mod eval;
mod gradcheck;
mod value;

use std::fmt;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::graphdata::SparseAdjacency;
use crate::tensor::Tensor;

pub use circuit::{Circuit, CircuitNode, CircuitParseError};
pub use eval::{backward, forward, forward_owned, forward_with, Evaluation, Factoring, ForwardOptions, Gradients};
pub use gradcheck::{check_gradients, op_cases, GradCase, GradCheckOptions, GradCheckReport};
pub use value::{LowRank, Value};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TapeError {
    #[error("node {node}: {message}")]
    Shape { node: String, message: String },
    #[error("expected {expected} input tensors, got {got}")]
    InputCount { expected: usize, got: usize },
    #[error("input {name:?} expects shape {expected:?}, got {got:?}")]
    InputShape {
        name: String,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("node {node} produced a non-finite value")]
    NonFinite { node: String },
    #[error("node {node}: {message}")]
    Domain { node: String, message: String },
    #[error("backward needs a scalar output, found shape {0:?}")]
    NonScalarOutput((usize, usize)),
    #[error("tape has no designated output")]
    NoOutput,
    #[error("unknown node id {0}")]
    UnknownNode(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// How an input is supplied at evaluation time.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputKind {
    /// Client data; everything computed from it is on the encrypted path.
    Encrypted,
    /// Server-side plaintext that is not trained.
    Plaintext,
    /// Trainable plaintext weight; [`backward`] returns its gradient.
    Parameter,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MultKind {
    None,
    CtCt,
    CtPt,
}

impl MultKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MultKind::None => "none",
            MultKind::CtCt => "ct_ct",
            MultKind::CtPt => "ct_pt",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" => Some(MultKind::None),
            "ct_ct" => Some(MultKind::CtCt),
            "ct_pt" => Some(MultKind::CtPt),
            _ => None,
        }
    }
}

/// Multiplication performed by an op given which operands are encrypted.
/// Binary products count ciphertext operands; squaring ops are ct-ct on a
/// ciphertext; products with a sparse matrix or scalar are ct-pt.
pub fn mult_kind(kind: OpKind, operand_encrypted: &[bool]) -> MultKind {
    let enc = operand_encrypted.iter().filter(|&&e| e).count();
    match kind {
        OpKind::DenseMatmul | OpKind::ElemMul => match enc {
            2 => MultKind::CtCt,
            1 => MultKind::CtPt,
            _ => MultKind::None,
        },
        OpKind::ElemSquare | OpKind::FrobeniusSq | OpKind::OffDiagonalMean if enc > 0 => MultKind::CtCt,
        OpKind::Spmm | OpKind::ScaleByConstant if enc > 0 => MultKind::CtPt,
        _ => MultKind::None,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeMeta {
    pub encrypted: bool,
    pub polynomial: bool,
    pub mult: MultKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Input,
    Constant,
    DenseMatmul,
    Spmm,
    Transpose,
    Add,
    Sub,
    ScaleByConstant,
    AddConstant,
    ElemSquare,
    ElemMul,
    Relu,
    Exp,
    Log,
    RowL2Normalize,
    DiagOf,
    MeanAll,
    SumAll,
    FrobeniusSq,
    OffDiagonalMean,
}

impl OpKind {
    pub const ALL: [OpKind; 20] = [
        OpKind::Input,
        OpKind::Constant,
        OpKind::DenseMatmul,
        OpKind::Spmm,
        OpKind::Transpose,
        OpKind::Add,
        OpKind::Sub,
        OpKind::ScaleByConstant,
        OpKind::AddConstant,
        OpKind::ElemSquare,
        OpKind::ElemMul,
        OpKind::Relu,
        OpKind::Exp,
        OpKind::Log,
        OpKind::RowL2Normalize,
        OpKind::DiagOf,
        OpKind::MeanAll,
        OpKind::SumAll,
        OpKind::FrobeniusSq,
        OpKind::OffDiagonalMean,
    ];

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Input => "input",
            OpKind::Constant => "const",
            OpKind::DenseMatmul => "dense_matmul",
            OpKind::Spmm => "spmm",
            OpKind::Transpose => "transpose",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::ScaleByConstant => "scale_by_constant",
            OpKind::AddConstant => "add_constant",
            OpKind::ElemSquare => "elem_square",
            OpKind::ElemMul => "elem_mul",
            OpKind::Relu => "relu",
            OpKind::Exp => "exp",
            OpKind::Log => "log",
            OpKind::RowL2Normalize => "row_l2_normalize",
            OpKind::DiagOf => "diag_of",
            OpKind::MeanAll => "mean_all",
            OpKind::SumAll => "sum_all",
            OpKind::FrobeniusSq => "frobenius_sq",
            OpKind::OffDiagonalMean => "off_diagonal_mean",
        }
    }

    pub fn is_polynomial(self) -> bool {
        !matches!(self, OpKind::Relu | OpKind::Exp | OpKind::Log | OpKind::RowL2Normalize)
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug)]
pub enum Op {
    Input {
        name: String,
        kind: InputKind,
    },
    Constant {
        name: String,
        value: Tensor,
    },
    DenseMatmul(NodeId, NodeId),
    /// Sparse plaintext constant times a dense operand; no gradient reaches the matrix.
    Spmm {
        adj: Arc<SparseAdjacency>,
        input: NodeId,
    },
    Transpose(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    ScaleByConstant(NodeId, f64),
    AddConstant(NodeId, f64),
    ElemSquare(NodeId),
    ElemMul(NodeId, NodeId),
    Relu(NodeId),
    Exp(NodeId),
    Log(NodeId),
    RowL2Normalize(NodeId),
    /// Square matrix to its diagonal as a column.
    DiagOf(NodeId),
    MeanAll(NodeId),
    SumAll(NodeId),
    FrobeniusSq(NodeId),
    /// Mean over ordered pairs `i != j` of `(S_ij - S_ii + margin)^2`.
    OffDiagonalMean {
        input: NodeId,
        margin: f64,
    },
}

impl Op {
    pub fn kind(&self) -> OpKind {
        match self {
            Op::Input { .. } => OpKind::Input,
            Op::Constant { .. } => OpKind::Constant,
            Op::DenseMatmul(..) => OpKind::DenseMatmul,
            Op::Spmm { .. } => OpKind::Spmm,
            Op::Transpose(_) => OpKind::Transpose,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::ScaleByConstant(..) => OpKind::ScaleByConstant,
            Op::AddConstant(..) => OpKind::AddConstant,
            Op::ElemSquare(_) => OpKind::ElemSquare,
            Op::ElemMul(..) => OpKind::ElemMul,
            Op::Relu(_) => OpKind::Relu,
            Op::Exp(_) => OpKind::Exp,
            Op::Log(_) => OpKind::Log,
            Op::RowL2Normalize(_) => OpKind::RowL2Normalize,
            Op::DiagOf(_) => OpKind::DiagOf,
            Op::MeanAll(_) => OpKind::MeanAll,
            Op::SumAll(_) => OpKind::SumAll,
            Op::FrobeniusSq(_) => OpKind::FrobeniusSq,
            Op::OffDiagonalMean { .. } => OpKind::OffDiagonalMean,
        }
    }

    pub fn inputs(&self) -> Vec<NodeId> {
        match *self {
            Op::Input { .. } | Op::Constant { .. } => vec![],
            Op::DenseMatmul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::ElemMul(a, b) => {
                vec![a, b]
            }
            Op::Spmm { input, .. } | Op::OffDiagonalMean { input, .. } => vec![input],
            Op::Transpose(a)
            | Op::ScaleByConstant(a, _)
            | Op::AddConstant(a, _)
            | Op::ElemSquare(a)
            | Op::Relu(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::RowL2Normalize(a)
            | Op::DiagOf(a)
            | Op::MeanAll(a)
            | Op::SumAll(a)
            | Op::FrobeniusSq(a) => vec![a],
        }
    }
}

#[derive(Clone, Debug)]
pub struct Node {
    pub op: Op,
    pub shape: (usize, usize),
    pub meta: NodeMeta,
    pub(crate) requires_grad: bool,
}

impl Node {
    pub fn kind(&self) -> OpKind {
        self.op.kind()
    }
}

/// A recorded computation: topologically ordered nodes, declared inputs and
/// one designated output.
#[derive(Clone, Debug, Default)]
pub struct TapeGraph {
    nodes: Vec<Node>,
    inputs: Vec<NodeId>,
    output: Option<NodeId>,
}

impl TapeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    /// Input nodes in declaration order; [`forward`] binds tensors positionally.
    pub fn inputs(&self) -> &[NodeId] {
        &self.inputs
    }

    pub fn parameters(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.inputs.iter().copied().filter(|&id| {
            matches!(
                self.nodes[id.0].op,
                Op::Input {
                    kind: InputKind::Parameter,
                    ..
                }
            )
        })
    }

    pub fn output(&self) -> Option<NodeId> {
        self.output
    }

    pub fn set_output(&mut self, id: NodeId) {
        assert!(id.0 < self.nodes.len(), "output id out of range");
        self.output = Some(id);
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        self.nodes[id.0].shape
    }

    pub fn input_name(&self, id: NodeId) -> Option<&str> {
        match &self.nodes[id.0].op {
            Op::Input { name, .. } | Op::Constant { name, .. } => Some(name),
            _ => None,
        }
    }

    /// Human-readable label such as `#7 dense_matmul`.
    pub fn describe(&self, id: NodeId) -> String {
        format!("#{} {}", id.0, self.nodes[id.0].kind())
    }

    fn push(&mut self, op: Op, shape: (usize, usize)) -> NodeId {
        let kind = op.kind();
        let inputs = op.inputs();
        let enc = |id: &NodeId| self.nodes[id.0].meta.encrypted;
        let (encrypted, requires_grad) = match &op {
            Op::Input { kind, .. } => (*kind == InputKind::Encrypted, *kind == InputKind::Parameter),
            Op::Constant { .. } => (false, false),
            _ => (
                inputs.iter().any(enc),
                inputs.iter().any(|id| self.nodes[id.0].requires_grad),
            ),
        };
        let flags: Vec<bool> = inputs.iter().map(enc).collect();
        let mult = mult_kind(kind, &flags);
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op,
            shape,
            meta: NodeMeta {
                encrypted,
                polynomial: kind.is_polynomial(),
                mult,
            },
            requires_grad,
        });
        id
    }

    fn shape_err(&self, kind: OpKind, message: String) -> TapeError {
        TapeError::Shape {
            node: format!("#{} {kind}", self.nodes.len()),
            message,
        }
    }

    fn check(&self, id: NodeId) -> Result<(usize, usize), TapeError> {
        self.nodes
            .get(id.0)
            .map(|n| n.shape)
            .ok_or(TapeError::UnknownNode(id.0))
    }

    pub fn input(&mut self, name: &str, rows: usize, cols: usize, kind: InputKind) -> NodeId {
        let id = self.push(
            Op::Input {
                name: name.to_string(),
                kind,
            },
            (rows, cols),
        );
        self.inputs.push(id);
        id
    }

    pub fn constant(&mut self, name: &str, value: Tensor) -> NodeId {
        let shape = value.shape();
        self.push(
            Op::Constant {
                name: name.to_string(),
                value,
            },
            shape,
        )
    }

    pub fn dense_matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TapeError> {
        let (sa, sb) = (self.check(a)?, self.check(b)?);
        if sa.1 != sb.0 {
            return Err(self.shape_err(OpKind::DenseMatmul, format!("cannot multiply {sa:?} by {sb:?}")));
        }
        Ok(self.push(Op::DenseMatmul(a, b), (sa.0, sb.1)))
    }

    pub fn spmm(&mut self, adj: Arc<SparseAdjacency>, x: NodeId) -> Result<NodeId, TapeError> {
        let sx = self.check(x)?;
        if adj.dim() != sx.0 {
            return Err(self.shape_err(OpKind::Spmm, format!("{0}x{0} sparse matrix times {sx:?}", adj.dim())));
        }
        Ok(self.push(Op::Spmm { adj, input: x }, sx))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        let s = self.check(a)?;
        Ok(self.push(Op::Transpose(a), (s.1, s.0)))
    }

    fn same_shape(&self, kind: OpKind, a: NodeId, b: NodeId) -> Result<(usize, usize), TapeError> {
        let (sa, sb) = (self.check(a)?, self.check(b)?);
        if sa != sb {
            return Err(self.shape_err(kind, format!("operand shapes {sa:?} and {sb:?} differ")));
        }
        Ok(sa)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TapeError> {
        let s = self.same_shape(OpKind::Add, a, b)?;
        Ok(self.push(Op::Add(a, b), s))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TapeError> {
        let s = self.same_shape(OpKind::Sub, a, b)?;
        Ok(self.push(Op::Sub(a, b), s))
    }

    pub fn elem_mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TapeError> {
        let s = self.same_shape(OpKind::ElemMul, a, b)?;
        Ok(self.push(Op::ElemMul(a, b), s))
    }

    pub fn scale_by_constant(&mut self, a: NodeId, c: f64) -> Result<NodeId, TapeError> {
        let s = self.check(a)?;
        Ok(self.push(Op::ScaleByConstant(a, c), s))
    }

    pub fn add_constant(&mut self, a: NodeId, c: f64) -> Result<NodeId, TapeError> {
        let s = self.check(a)?;
        Ok(self.push(Op::AddConstant(a, c), s))
    }

    fn unary(&mut self, a: NodeId, op: Op) -> Result<NodeId, TapeError> {
        let s = self.check(a)?;
        Ok(self.push(op, s))
    }

    pub fn elem_square(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        self.unary(a, Op::ElemSquare(a))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        self.unary(a, Op::Relu(a))
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        self.unary(a, Op::Exp(a))
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        self.unary(a, Op::Log(a))
    }

    pub fn row_l2_normalize(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        self.unary(a, Op::RowL2Normalize(a))
    }

    pub fn diag_of(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        let s = self.check(a)?;
        if s.0 != s.1 {
            return Err(self.shape_err(OpKind::DiagOf, format!("{s:?} is not square")));
        }
        Ok(self.push(Op::DiagOf(a), (s.0, 1)))
    }

    pub fn mean_all(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        self.check(a)?;
        Ok(self.push(Op::MeanAll(a), (1, 1)))
    }

    pub fn sum_all(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        self.check(a)?;
        Ok(self.push(Op::SumAll(a), (1, 1)))
    }

    pub fn frobenius_sq(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        self.check(a)?;
        Ok(self.push(Op::FrobeniusSq(a), (1, 1)))
    }

    pub fn off_diagonal_mean(&mut self, s: NodeId, margin: f64) -> Result<NodeId, TapeError> {
        let sh = self.check(s)?;
        if sh.0 != sh.1 || sh.0 < 2 {
            return Err(self.shape_err(
                OpKind::OffDiagonalMean,
                format!("needs a square matrix with at least 2 rows, got {sh:?}"),
            ));
        }
        Ok(self.push(Op::OffDiagonalMean { input: s, margin }, (1, 1)))
    }

    /// Nodes with `polynomial = false` that sit on the encrypted path.
    pub fn non_polynomial_encrypted(&self) -> Vec<(NodeId, OpKind)> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.meta.encrypted && !n.meta.polynomial)
            .map(|(i, n)| (NodeId(i), n.kind()))
            .collect()
    }
}
