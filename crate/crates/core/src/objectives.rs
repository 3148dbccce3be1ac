//! Contrastive objectives recorded onto a tape: the polynomial margin loss
//! and the NT-Xent baseline.

use serde::{Deserialize, Serialize};

use crate::tape::{NodeId, TapeError, TapeGraph};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    Poly,
    Grace,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Poly => "poly",
            LossKind::Grace => "grace",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "poly" => Some(LossKind::Poly),
            "grace" => Some(LossKind::Grace),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub kind: LossKind,
    pub margin: f64,
    pub lambda: f64,
    /// Only used by the baseline.
    pub temperature: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            kind: LossKind::Poly,
            margin: 0.5,
            lambda: 1e-2,
            temperature: 0.4,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return Err(format!("loss.margin must be >= 0, got {}", self.margin));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(format!("loss.lambda must be >= 0, got {}", self.lambda));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(format!("loss.temperature must be > 0, got {}", self.temperature));
        }
        Ok(())
    }
}

fn same_shape(tape: &TapeGraph, z1: NodeId, z2: NodeId, what: &str) -> Result<usize, TapeError> {
    let (s1, s2) = (tape.shape(z1), tape.shape(z2));
    if s1 != s2 || s1.0 < 2 {
        return Err(TapeError::Shape {
            node: format!("#{} {what}", tape.len()),
            message: format!("needs two N×D views with N >= 2, got {s1:?} and {s2:?}"),
        });
    }
    Ok(s1.0)
}

/// `mean_{i≠j} (S_ij − S_ii + m)² + λ(‖Z1‖²/N + ‖Z2‖²/N)` with `S = Z1 Z2ᵀ`.
pub fn poly_loss(tape: &mut TapeGraph, z1: NodeId, z2: NodeId, margin: f64, lambda: f64) -> Result<NodeId, TapeError> {
    let n = same_shape(tape, z1, z2, "poly_loss")? as f64;
    let z2t = tape.transpose(z2)?;
    let s = tape.dense_matmul(z1, z2t)?;
    let contrast = tape.off_diagonal_mean(s, margin)?;
    let f1 = tape.frobenius_sq(z1)?;
    let r1 = tape.scale_by_constant(f1, lambda / n)?;
    let f2 = tape.frobenius_sq(z2)?;
    let r2 = tape.scale_by_constant(f2, lambda / n)?;
    let reg = tape.add(r1, r2)?;
    tape.add(contrast, reg)
}

/// Per-anchor terms `log(denominator) − positive/τ` as an N×1 column, from the
/// exponentiated cross-view and same-view similarity matrices.
fn nt_xent_side(
    tape: &mut TapeGraph,
    cross: NodeId,
    intra: NodeId,
    pos: NodeId,
    ones: NodeId,
) -> Result<NodeId, TapeError> {
    let inter_sum = tape.dense_matmul(cross, ones)?;
    let intra_sum = tape.dense_matmul(intra, ones)?;
    let self_sim = tape.diag_of(intra)?;
    let den = tape.add(inter_sum, intra_sum)?;
    let den = tape.sub(den, self_sim)?;
    let log_den = tape.log(den)?;
    tape.sub(log_den, pos)
}

/// Symmetric NT-Xent at temperature `tau` with inter- and intra-view negatives.
pub fn grace_loss(tape: &mut TapeGraph, z1: NodeId, z2: NodeId, tau: f64) -> Result<NodeId, TapeError> {
    let n = same_shape(tape, z1, z2, "grace_loss")?;
    let inv_tau = 1.0 / tau;
    let u = tape.row_l2_normalize(z1)?;
    let v = tape.row_l2_normalize(z2)?;
    let ut = tape.transpose(u)?;
    let vt = tape.transpose(v)?;

    let p = tape.dense_matmul(u, vt)?;
    let p = tape.scale_by_constant(p, inv_tau)?;
    let pos = tape.diag_of(p)?;
    let e = tape.exp(p)?;
    let et = tape.transpose(e)?;

    let uu = tape.dense_matmul(u, ut)?;
    let uu = tape.scale_by_constant(uu, inv_tau)?;
    let e1 = tape.exp(uu)?;
    let vv = tape.dense_matmul(v, vt)?;
    let vv = tape.scale_by_constant(vv, inv_tau)?;
    let e2 = tape.exp(vv)?;

    let ones = tape.constant("ones", Tensor::filled(n, 1, 1.0));
    let l1 = nt_xent_side(tape, e, e1, pos, ones)?;
    let l2 = nt_xent_side(tape, et, e2, pos, ones)?;
    let both = tape.add(l1, l2)?;
    let mean = tape.mean_all(both)?;
    // averaged over all 2N anchors
    tape.scale_by_constant(mean, 0.5)
}

/// Records the configured objective.
pub fn record_loss(tape: &mut TapeGraph, z1: NodeId, z2: NodeId, cfg: &LossConfig) -> Result<NodeId, TapeError> {
    match cfg.kind {
        LossKind::Poly => poly_loss(tape, z1, z2, cfg.margin, cfg.lambda),
        LossKind::Grace => grace_loss(tape, z1, z2, cfg.temperature),
    }
}
