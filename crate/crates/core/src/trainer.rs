//! Full-batch contrastive pre-training with Adam.

use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{make_views, AugmentConfig};
use crate::graphdata::{SparseAdjacency, UnlabeledGraph};
use crate::model::{encode, init_params, Activation, EncoderParams, EncoderWeights};
use crate::objectives::{record_loss, LossConfig};
use crate::rng::derive_seed;
use crate::tape::{backward, forward_owned, ForwardOptions, InputKind, NodeId, TapeError, TapeGraph};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Apply weight decay directly to the weights instead of adding it to
    /// the gradient.
    pub decoupled: bool,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 5e-4,
            decoupled: false,
        }
    }
}

/// First and second moments, one pair per parameter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

/// One Adam update with bias correction, in place.
pub fn adam_step(params: &mut [&mut Tensor], grads: &[&Tensor], state: &mut AdamState, cfg: &AdamConfig) {
    assert_eq!(params.len(), grads.len(), "one gradient per parameter");
    if state.m.is_empty() {
        state.m = params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect();
        state.v = state.m.clone();
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        assert_eq!(p.shape(), g.shape(), "gradient shape differs from parameter");
        let (m, v) = (state.m[k].data_mut(), state.v[k].data_mut());
        for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
            let g = if cfg.decoupled { gi } else { gi + cfg.weight_decay * *w };
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * g;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * g * g;
            let update = (*mi / c1) / ((*vi / c2).sqrt() + cfg.eps);
            if cfg.decoupled {
                *w -= cfg.lr * cfg.weight_decay * *w;
            }
            *w -= cfg.lr * update;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub hidden: usize,
    pub out: usize,
    pub activation: Activation,
    pub loss: LossConfig,
    /// `augment.seed` is ignored; views draw from the stream derived from `seed`.
    pub augment: AugmentConfig,
    /// Rescale the joint gradient to at most this L2 norm.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            adam: AdamConfig::default(),
            seed: 0,
            hidden: crate::model::DEFAULT_HIDDEN,
            out: crate::model::DEFAULT_OUT,
            activation: Activation::Square,
            loss: LossConfig::default(),
            augment: AugmentConfig::default(),
            clip_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.adam.lr > 0.0 && self.adam.lr.is_finite()) {
            return Err(format!("train.lr must be > 0, got {}", self.adam.lr));
        }
        if self.hidden == 0 || self.out == 0 {
            return Err("model.hidden and model.out must be positive".into());
        }
        if let Some(c) = self.clip_norm {
            if c.is_nan() || c <= 0.0 {
                return Err(format!("train.clip_norm must be > 0, got {c}"));
            }
        }
        self.loss.validate()?;
        self.augment.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Loss at each epoch, evaluated before that epoch's update.
    pub losses: Vec<EpochLoss>,
    pub checkpoint: Option<String>,
    /// Kept out of the serialized log so identical runs give identical files.
    #[serde(skip)]
    pub wall_time: Duration,
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch} ({detail}); last finite loss: {}", fmt_last(.last_finite))]
    Divergence {
        epoch: usize,
        last_finite: Option<f64>,
        detail: String,
    },
    #[error(transparent)]
    Tape(#[from] TapeError),
}

fn fmt_last(v: &Option<f64>) -> String {
    v.map_or_else(|| "none".into(), |x| x.to_string())
}

/// One training step's circuit: two encoder passes sharing W1, W2, then the
/// loss. Inputs are declared as `x1, x2, w1, w2`.
#[derive(Clone, Debug)]
pub struct StepTape {
    pub tape: TapeGraph,
    pub weights: EncoderWeights,
    pub z1: NodeId,
    pub z2: NodeId,
    pub loss: NodeId,
}

pub fn build_step_tape(
    adj1: Arc<SparseAdjacency>,
    adj2: Arc<SparseAdjacency>,
    num_features: usize,
    cfg: &TrainConfig,
) -> Result<StepTape, TapeError> {
    let n = adj1.dim();
    let mut tape = TapeGraph::new();
    let x1 = tape.input("x1", n, num_features, InputKind::Encrypted);
    let x2 = tape.input("x2", n, num_features, InputKind::Encrypted);
    let weights = EncoderWeights::declare(&mut tape, num_features, cfg.hidden, cfg.out);
    let z1 = encode(&mut tape, adj1, x1, weights, cfg.activation)?;
    let z2 = encode(&mut tape, adj2, x2, weights, cfg.activation)?;
    let loss = record_loss(&mut tape, z1, z2, &cfg.loss)?;
    tape.set_output(loss);
    Ok(StepTape {
        tape,
        weights,
        z1,
        z2,
        loss,
    })
}

pub fn initial_params(num_features: usize, cfg: &TrainConfig) -> EncoderParams {
    init_params(
        num_features,
        cfg.hidden,
        cfg.out,
        cfg.activation,
        derive_seed(cfg.seed, "init"),
    )
}

/// Pre-trains from seeded initial weights. Labels are not reachable from
/// [`UnlabeledGraph`].
pub fn pretrain(g: &UnlabeledGraph<'_>, cfg: &TrainConfig) -> Result<(EncoderParams, TrainLog), TrainError> {
    pretrain_from(g, cfg, initial_params(g.features.cols(), cfg), &mut |_, _| {})
}

/// Pre-trains from `params`, calling `observe(epoch, loss)` after each epoch.
pub fn pretrain_from(
    g: &UnlabeledGraph<'_>,
    cfg: &TrainConfig,
    mut params: EncoderParams,
    observe: &mut dyn FnMut(usize, f64),
) -> Result<(EncoderParams, TrainLog), TrainError> {
    cfg.validate().map_err(TrainError::Config)?;
    let start = Instant::now();
    let base = Arc::new(SparseAdjacency::normalized(g.num_nodes, g.edges));
    let augment = AugmentConfig {
        seed: derive_seed(cfg.seed, "augment"),
        ..cfg.augment
    };
    let mut state = AdamState::default();
    let mut log = TrainLog::default();
    let mut last_finite = None;
    let diverged = |epoch: usize, last: Option<f64>, detail: String| TrainError::Divergence {
        epoch,
        last_finite: last,
        detail,
    };

    for epoch in 0..cfg.epochs {
        let (v1, v2) = make_views(g, &base, &augment, epoch as u64);
        let step = build_step_tape(v1.adj, v2.adj, g.features.cols(), cfg)?;
        let inputs = vec![v1.features, v2.features, params.w1.clone(), params.w2.clone()];
        // Unchecked: zero rows are normalized against an epsilon floor, as
        // reference NT-Xent implementations do. Blow-ups surface in the loss.
        let ev = forward_owned(&step.tape, inputs, ForwardOptions::unchecked())?;
        let loss = ev.scalar()?;
        if !loss.is_finite() {
            let first = ev
                .values()
                .iter()
                .position(|v| !v.is_finite())
                .map_or_else(|| "loss".to_string(), |i| step.tape.describe(NodeId(i)));
            return Err(diverged(epoch, last_finite, format!("non-finite value at {first}")));
        }
        let grads = backward(&step.tape, &ev)?;
        let mut g1 = grads.get(step.weights.w1).expect("w1 gradient").clone();
        let mut g2 = grads.get(step.weights.w2).expect("w2 gradient").clone();
        if !g1.is_finite() || !g2.is_finite() {
            return Err(diverged(epoch, last_finite, "non-finite gradient".into()));
        }
        if let Some(max) = cfg.clip_norm {
            let norm = (g1.frobenius_sq() + g2.frobenius_sq()).sqrt();
            if norm > max {
                g1.scale(max / norm);
                g2.scale(max / norm);
            }
        }
        adam_step(
            &mut [&mut params.w1, &mut params.w2],
            &[&g1, &g2],
            &mut state,
            &cfg.adam,
        );
        if !params.w1.is_finite() || !params.w2.is_finite() {
            return Err(diverged(epoch, Some(loss), "non-finite weights after update".into()));
        }
        last_finite = Some(loss);
        log.losses.push(EpochLoss { epoch, loss });
        observe(epoch, loss);
    }
    log.wall_time = start.elapsed();
    Ok((params, log))
}
