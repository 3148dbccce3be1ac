use std::sync::Arc;

use rand::seq::index::sample;
use rand::Rng;

use super::eval::{backward, forward_with, Evaluation, ForwardOptions};
use super::{InputKind, NodeId, Op, OpKind, TapeError, TapeGraph};
use crate::graphdata::SparseAdjacency;
use crate::rng::rng_from;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub eps: f64,
    /// Denominator floor in the relative error, so entries whose true
    /// gradient is ~0 are compared on an absolute scale.
    pub floor: f64,
    /// Entries probed per parameter; `None` probes all of them.
    pub max_entries: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-6,
            floor: 1e-4,
            max_entries: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    /// Entries skipped because a relu input changed sign inside the stencil.
    pub skipped: usize,
}

fn relu_signs(graph: &TapeGraph, ev: &Evaluation) -> Vec<Vec<bool>> {
    graph
        .nodes()
        .iter()
        .filter_map(|n| match n.op {
            Op::Relu(a) => Some(ev.tensor(a).data().iter().map(|&x| x > 0.0).collect()),
            _ => None,
        })
        .collect()
}

/// Compares [`backward`] against central finite differences for every
/// parameter input. Relu kinks inside the stencil are excluded.
pub fn check_gradients(
    graph: &TapeGraph,
    inputs: &[&Tensor],
    opts: GradCheckOptions,
) -> Result<GradCheckReport, TapeError> {
    let fwd = ForwardOptions::default();
    let base = forward_with(graph, inputs, fwd)?;
    let grads = backward(graph, &base)?;
    let mut rng = rng_from(opts.seed);
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        checked: 0,
        skipped: 0,
    };
    let position = |id: NodeId| graph.inputs().iter().position(|&i| i == id).expect("input");

    for (param, analytic) in grads.iter() {
        let slot = position(param);
        let len = analytic.len();
        let entries: Vec<usize> = match opts.max_entries {
            Some(k) if k < len => {
                let mut v = sample(&mut rng, len, k).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..len).collect(),
        };
        let mut perturbed = inputs[slot].clone();
        for idx in entries {
            let orig = perturbed.data()[idx];
            let mut eval_at = |x: f64| -> Result<Evaluation, TapeError> {
                perturbed.data_mut()[idx] = x;
                let mut bound: Vec<&Tensor> = inputs.to_vec();
                bound[slot] = &perturbed;
                forward_with(graph, &bound, fwd)
            };
            let plus = eval_at(orig + opts.eps)?;
            let minus = eval_at(orig - opts.eps)?;
            perturbed.data_mut()[idx] = orig;
            if relu_signs(graph, &plus) != relu_signs(graph, &minus) {
                report.skipped += 1;
                continue;
            }
            let numeric = (plus.scalar()? - minus.scalar()?) / (2.0 * opts.eps);
            let a = analytic.data()[idx];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
            report.checked += 1;
            if rel > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = rel.max(report.max_rel_err);
                let name = graph.input_name(param).unwrap_or_default().to_string();
                report.worst = Some((name, idx));
            }
        }
    }
    Ok(report)
}

/// A small tape exercising one op, with the inputs to check it at.
#[derive(Clone, Debug)]
pub struct GradCase {
    pub name: String,
    pub tape: TapeGraph,
    pub inputs: Vec<Tensor>,
}

impl GradCase {
    pub fn check(&self, opts: GradCheckOptions) -> Result<GradCheckReport, TapeError> {
        let refs: Vec<&Tensor> = self.inputs.iter().collect();
        check_gradients(&self.tape, &refs, opts)
    }
}

/// One case per op kind on 3×4 parameters. Non-scalar results are reduced
/// with a random fixed weighting so every entry gets a distinct gradient.
pub fn op_cases(seed: u64) -> Vec<GradCase> {
    let mut rng = rng_from(seed);
    OpKind::ALL
        .into_iter()
        .map(|kind| op_case(kind, &mut rng).expect("op case shapes are fixed"))
        .collect()
}

fn op_case(kind: OpKind, rng: &mut impl Rng) -> Result<GradCase, TapeError> {
    let (r, c) = (3, 4);
    // magnitudes in [0.2, 1.2] with random sign keep relu away from its kink
    let mut draw = |rows: usize, cols: usize, positive: bool| {
        Tensor::from_fn(rows, cols, |_, _| {
            let m = rng.gen_range(0.2..1.2);
            if positive || rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
    };
    let mut g = TapeGraph::new();
    let mut inputs = vec![draw(r, c, kind == OpKind::Log)];
    let x = g.input("x", r, c, InputKind::Parameter);
    let mut second = |g: &mut TapeGraph, rows: usize, cols: usize| {
        inputs.push(draw(rows, cols, false));
        g.input("y", rows, cols, InputKind::Parameter)
    };
    let out = match kind {
        OpKind::Input => x,
        OpKind::Constant => {
            let k = g.constant("k", draw(r, c, false));
            g.add(x, k)?
        }
        OpKind::DenseMatmul => {
            let y = second(&mut g, c, 2);
            g.dense_matmul(x, y)?
        }
        OpKind::Spmm => {
            let adj = SparseAdjacency::normalized(r, &[(0, 1), (1, 2)]);
            g.spmm(Arc::new(adj), x)?
        }
        OpKind::Transpose => g.transpose(x)?,
        OpKind::Add => {
            let y = second(&mut g, r, c);
            g.add(x, y)?
        }
        OpKind::Sub => {
            let y = second(&mut g, r, c);
            g.sub(x, y)?
        }
        OpKind::ScaleByConstant => g.scale_by_constant(x, 1.7)?,
        OpKind::AddConstant => g.add_constant(x, 0.3)?,
        OpKind::ElemSquare => g.elem_square(x)?,
        OpKind::ElemMul => {
            let y = second(&mut g, r, c);
            g.elem_mul(x, y)?
        }
        OpKind::Relu => g.relu(x)?,
        OpKind::Exp => g.exp(x)?,
        OpKind::Log => g.log(x)?,
        OpKind::RowL2Normalize => g.row_l2_normalize(x)?,
        OpKind::DiagOf => {
            let y = second(&mut g, r, c);
            let yt = g.transpose(y)?;
            let s = g.dense_matmul(x, yt)?;
            g.diag_of(s)?
        }
        OpKind::MeanAll => g.mean_all(x)?,
        OpKind::SumAll => g.sum_all(x)?,
        OpKind::FrobeniusSq => g.frobenius_sq(x)?,
        OpKind::OffDiagonalMean => {
            let y = second(&mut g, r, c);
            let yt = g.transpose(y)?;
            let s = g.dense_matmul(x, yt)?;
            g.off_diagonal_mean(s, 0.5)?
        }
    };
    let loss = if g.shape(out) == (1, 1) {
        out
    } else {
        let (rows, cols) = g.shape(out);
        let w = g.constant("w", draw(rows, cols, false));
        let weighted = g.elem_mul(out, w)?;
        g.sum_all(weighted)?
    };
    g.set_output(loss);
    Ok(GradCase {
        name: kind.name().to_string(),
        tape: g,
        inputs,
    })
}

#[cfg(test)]
mod tests {
    use super::super::InputKind;
    use super::*;

    #[test]
    fn relu_at_zero_is_skipped() {
        let mut g = TapeGraph::new();
        let x = g.input("x", 1, 3, InputKind::Parameter);
        let r = g.relu(x).unwrap();
        let s = g.sum_all(r).unwrap();
        g.set_output(s);
        let at = Tensor::from_rows(&[[0.0, 1.0, -1.0]]);
        let rep = check_gradients(&g, &[&at], GradCheckOptions::default()).unwrap();
        assert_eq!(rep.checked, 2);
        assert_eq!(rep.skipped, 1);

        let at = Tensor::from_rows(&[[0.5, 1.0, -1.0]]);
        let rep = check_gradients(&g, &[&at], GradCheckOptions::default()).unwrap();
        assert_eq!(rep.checked, 3);
        assert!(rep.max_rel_err < 1e-8);
    }

    #[test]
    fn log_domain_error_surfaces() {
        let mut g = TapeGraph::new();
        let x = g.input("x", 1, 2, InputKind::Parameter);
        let l = g.log(x).unwrap();
        let s = g.sum_all(l).unwrap();
        g.set_output(s);
        let at = Tensor::from_rows(&[[-1.0, 2.0]]);
        assert!(matches!(
            check_gradients(&g, &[&at], GradCheckOptions::default()),
            Err(TapeError::Domain { .. })
        ));
    }

    #[test]
    fn every_op_case_passes() {
        let cases = op_cases(3);
        assert_eq!(cases.len(), OpKind::ALL.len());
        for case in cases {
            let rep = case.check(GradCheckOptions::default()).unwrap();
            assert!(rep.checked > 0, "{}", case.name);
            assert!(rep.max_rel_err < 1e-6, "{}: {:?}", case.name, rep);
        }
    }
}
