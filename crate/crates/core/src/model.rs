//! Two-layer GCN encoder `Z = Â · act(Â X W1) · W2`, without biases.

use std::fs;
use std::io;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graphdata::SparseAdjacency;
use crate::rng::rng_from;
use crate::tape::{InputKind, NodeId, TapeError, TapeGraph};
use crate::tensor::Tensor;

pub const DEFAULT_HIDDEN: usize = 64;
pub const DEFAULT_OUT: usize = 128;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Square,
    Relu,
    /// `0.5·x²`, a tamer square for runs that blow up.
    HalfSquare,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Square => "square",
            Activation::Relu => "relu",
            Activation::HalfSquare => "half_square",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "square" => Some(Activation::Square),
            "relu" => Some(Activation::Relu),
            "half_square" => Some(Activation::HalfSquare),
            _ => None,
        }
    }

    fn code(self) -> u64 {
        match self {
            Activation::Square => 0,
            Activation::Relu => 1,
            Activation::HalfSquare => 2,
        }
    }

    fn from_code(c: u64) -> Option<Self> {
        [Activation::Square, Activation::Relu, Activation::HalfSquare]
            .into_iter()
            .find(|a| a.code() == c)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub w1: Tensor,
    pub w2: Tensor,
    pub activation: Activation,
}

impl EncoderParams {
    pub fn f_in(&self) -> usize {
        self.w1.rows()
    }

    pub fn hidden(&self) -> usize {
        self.w1.cols()
    }

    pub fn out(&self) -> usize {
        self.w2.cols()
    }
}

pub(crate) fn glorot(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::from_fn(rows, cols, |_, _| rng.gen_range(-bound..=bound))
}

/// Glorot-uniform weights, W1 drawn before W2 from one stream.
pub fn init_params(f_in: usize, hidden: usize, out: usize, activation: Activation, seed: u64) -> EncoderParams {
    assert!(f_in > 0 && hidden > 0 && out > 0, "encoder dims must be positive");
    let mut rng = rng_from(seed);
    let w1 = glorot(f_in, hidden, &mut rng);
    let w2 = glorot(hidden, out, &mut rng);
    EncoderParams { w1, w2, activation }
}

/// Tape handles for the two weight matrices.
#[derive(Clone, Copy, Debug)]
pub struct EncoderWeights {
    pub w1: NodeId,
    pub w2: NodeId,
}

impl EncoderWeights {
    /// Declares W1 and W2 as parameter inputs, in that order.
    pub fn declare(tape: &mut TapeGraph, f_in: usize, hidden: usize, out: usize) -> Self {
        Self {
            w1: tape.input("w1", f_in, hidden, InputKind::Parameter),
            w2: tape.input("w2", hidden, out, InputKind::Parameter),
        }
    }
}

/// Records `Â · act(Â X W1) · W2` and returns the embedding node.
pub fn encode(
    tape: &mut TapeGraph,
    adj: Arc<SparseAdjacency>,
    x: NodeId,
    weights: EncoderWeights,
    activation: Activation,
) -> Result<NodeId, TapeError> {
    // Â(XW1) rather than (ÂX)W1: same product and level count, but the
    // intermediate is N×H instead of a dense N×F
    let xw = tape.dense_matmul(x, weights.w1)?;
    let pre = tape.spmm(Arc::clone(&adj), xw)?;
    let h = match activation {
        Activation::Square => tape.elem_square(pre)?,
        Activation::Relu => tape.relu(pre)?,
        Activation::HalfSquare => {
            let sq = tape.elem_square(pre)?;
            tape.scale_by_constant(sq, 0.5)?
        }
    };
    let ah = tape.spmm(adj, h)?;
    tape.dense_matmul(ah, weights.w2)
}

/// Plain evaluation of the encoder on fixed inputs (no augmentation).
pub fn embed(adj: &Arc<SparseAdjacency>, x: &Tensor, p: &EncoderParams) -> Result<Tensor, TapeError> {
    let mut tape = TapeGraph::new();
    let xi = tape.input("x", x.rows(), x.cols(), InputKind::Encrypted);
    let w = EncoderWeights::declare(&mut tape, p.f_in(), p.hidden(), p.out());
    let z = encode(&mut tape, Arc::clone(adj), xi, w, p.activation)?;
    tape.set_output(z);
    let ev = crate::tape::forward(&tape, &[x, &p.w1, &p.w2])?;
    Ok(ev.output()?.into_owned())
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
}

const HEADER_LEN: usize = 4 * 8;

/// Little-endian `{f_in, hidden, out, activation}` as u64, then W1 and W2
/// row-major as f64.
pub fn checkpoint_bytes(p: &EncoderParams) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN + 8 * (p.w1.len() + p.w2.len()));
    for v in [p.f_in(), p.hidden(), p.out()] {
        buf.extend_from_slice(&(v as u64).to_le_bytes());
    }
    buf.extend_from_slice(&p.activation.code().to_le_bytes());
    for x in p.w1.data().iter().chain(p.w2.data()) {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    buf
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<EncoderParams, String> {
    if bytes.len() < HEADER_LEN {
        return Err(format!("truncated header ({} bytes)", bytes.len()));
    }
    let word = |i: usize| u64::from_le_bytes(bytes[8 * i..8 * i + 8].try_into().unwrap());
    let (f_in, hidden, out) = (word(0) as usize, word(1) as usize, word(2) as usize);
    let activation = Activation::from_code(word(3)).ok_or_else(|| format!("unknown activation code {}", word(3)))?;
    let n1 = f_in.checked_mul(hidden).ok_or("dimension overflow")?;
    let n2 = hidden.checked_mul(out).ok_or("dimension overflow")?;
    let expected = n1
        .checked_add(n2)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or("dimension overflow")?;
    if bytes.len() != expected {
        return Err(format!(
            "expected {expected} bytes for {f_in}x{hidden}x{out}, found {}",
            bytes.len()
        ));
    }
    let mut vals = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let w1 = Tensor::from_vec(f_in, hidden, vals.by_ref().take(n1).collect());
    let w2 = Tensor::from_vec(hidden, out, vals.collect());
    Ok(EncoderParams { w1, w2, activation })
}

pub fn save_checkpoint(path: &Path, p: &EncoderParams) -> Result<(), CheckpointError> {
    fs::write(path, checkpoint_bytes(p)).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<EncoderParams, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_checkpoint(&bytes).map_err(|message| CheckpointError::Format {
        path: path.display().to_string(),
        message,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = init_params(30, 8, 5, Activation::Square, 9);
        assert_eq!(a, init_params(30, 8, 5, Activation::Square, 9));
        assert_ne!(a.w1, init_params(30, 8, 5, Activation::Square, 10).w1);
        let b1 = (6.0f64 / 38.0).sqrt();
        assert!(a.w1.max_abs() <= b1);
        assert!(a.w2.max_abs() <= (6.0f64 / 13.0).sqrt());
    }

    #[test]
    fn single_node_square_encoder() {
        let adj = Arc::new(SparseAdjacency::identity(1));
        let p = EncoderParams {
            w1: Tensor::scalar(-2.0),
            w2: Tensor::scalar(3.0),
            activation: Activation::Square,
        };
        let z = embed(&adj, &Tensor::scalar(1.0), &p).unwrap();
        assert_eq!(z.item(), 12.0);
        let half = EncoderParams {
            activation: Activation::HalfSquare,
            ..p
        };
        assert_eq!(embed(&adj, &Tensor::scalar(1.0), &half).unwrap().item(), 6.0);
    }

    #[test]
    fn checkpoint_round_trip_and_errors() {
        let p = init_params(3, 2, 4, Activation::Relu, 1);
        let bytes = checkpoint_bytes(&p);
        assert_eq!(bytes.len(), 32 + 8 * (6 + 8));
        assert_eq!(parse_checkpoint(&bytes).unwrap(), p);
        assert!(parse_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[24] = 7;
        assert!(parse_checkpoint(&bad).unwrap_err().contains("activation"));
    }
}
