//! Linear evaluation of frozen embeddings: softmax regression on the train
//! mask, accuracy on the test mask.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graphdata::{normalize_adjacency, Graph, SplitMasks};
use crate::model::{embed, glorot, EncoderParams};
use crate::rng::rng_from;
use crate::tape::TapeError;
use crate::tensor::{matmul, Tensor};
use crate::trainer::{adam_step, AdamConfig, AdamState};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub lr: f64,
    pub epochs: usize,
    /// Coefficient of `½‖W‖²` (the bias is not penalized).
    pub l2: f64,
    pub seed: u64,
    /// Z-score each embedding dimension (statistics over all nodes).
    pub standardize: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            epochs: 300,
            l2: 1e-4,
            seed: 0,
            standardize: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub val_accuracy: Option<f64>,
    /// `None` for classes absent from the test mask.
    pub per_class_accuracy: Vec<Option<f64>>,
    pub train_size: usize,
    pub val_size: usize,
    pub test_size: usize,
    pub config: serde_json::Value,
}

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("empty {0} mask")]
    EmptyMask(&'static str),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Tape(#[from] TapeError),
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
}

fn standardized(z: &Tensor) -> Tensor {
    let (n, d) = z.shape();
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, x) in mean.iter_mut().zip(z.row(i)) {
            *m += x / n as f64;
        }
    }
    let mut var = vec![0.0; d];
    for i in 0..n {
        for ((v, x), m) in var.iter_mut().zip(z.row(i)).zip(&mean) {
            *v += (x - m) * (x - m) / n as f64;
        }
    }
    Tensor::from_fn(n, d, |i, j| {
        let sd = var[j].sqrt();
        if sd > 0.0 {
            (z.get(i, j) - mean[j]) / sd
        } else {
            0.0
        }
    })
}

fn logits(z: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    let mut out = matmul(z, false, w, false);
    for i in 0..out.rows() {
        for (o, bj) in out.row_mut(i).iter_mut().zip(b.data()) {
            *o += bj;
        }
    }
    out
}

fn softmax_rows(t: &mut Tensor) {
    for i in 0..t.rows() {
        let row = t.row_mut(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            sum += *x;
        }
        row.iter_mut().for_each(|x| *x /= sum);
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = j;
        }
    }
    best
}

/// A trained softmax classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearClassifier {
    pub w: Tensor,
    pub b: Tensor,
}

impl LinearClassifier {
    pub fn predict(&self, z: &Tensor) -> Vec<usize> {
        let l = logits(z, &self.w, &self.b);
        (0..l.rows()).map(|i| argmax(l.row(i))).collect()
    }
}

/// Full-batch Adam on mean cross-entropy over `rows`, starting from `w0`.
pub fn fit_softmax(z: &Tensor, labels: &[usize], rows: &[usize], w0: Tensor, cfg: &ProbeConfig) -> LinearClassifier {
    let c = w0.cols();
    let x = z.select_rows(rows);
    let n = rows.len() as f64;
    let mut w = w0;
    let mut b = Tensor::zeros(1, c);
    let adam = AdamConfig {
        lr: cfg.lr,
        weight_decay: 0.0,
        ..AdamConfig::default()
    };
    let mut state = AdamState::default();
    for _ in 0..cfg.epochs {
        let mut p = logits(&x, &w, &b);
        softmax_rows(&mut p);
        for (k, &r) in rows.iter().enumerate() {
            let y = labels[r];
            p.set(k, y, p.get(k, y) - 1.0);
        }
        p.scale(1.0 / n);
        let mut gw = matmul(&x, true, &p, false);
        gw.axpy(cfg.l2, &w);
        let mut gb = Tensor::zeros(1, c);
        for k in 0..p.rows() {
            for (g, v) in gb.data_mut().iter_mut().zip(p.row(k)) {
                *g += v;
            }
        }
        adam_step(&mut [&mut w, &mut b], &[&gw, &gb], &mut state, &adam);
    }
    LinearClassifier { w, b }
}

fn accuracy(pred: &[usize], labels: &[usize], rows: &[usize]) -> f64 {
    let correct = rows.iter().filter(|&&r| pred[r] == labels[r]).count();
    correct as f64 / rows.len() as f64
}

/// Trains the probe on the train mask and scores the test mask.
pub fn linear_probe(
    z: &Tensor,
    labels: &[usize],
    num_classes: usize,
    masks: &SplitMasks,
    cfg: &ProbeConfig,
) -> Result<EvalReport, ProbeError> {
    if masks.test.is_empty() {
        return Err(ProbeError::EmptyMask("test"));
    }
    if masks.train.is_empty() {
        return Err(ProbeError::EmptyMask("train"));
    }
    if labels.len() != z.rows() {
        return Err(ProbeError::Invalid(format!(
            "{} labels for {} embeddings",
            labels.len(),
            z.rows()
        )));
    }
    let out_of_range = masks
        .train
        .iter()
        .chain(&masks.val)
        .chain(&masks.test)
        .find(|&&i| i >= z.rows());
    if let Some(i) = out_of_range {
        return Err(ProbeError::Invalid(format!("mask index {i} out of range")));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(ProbeError::Invalid(format!("label {l} >= {num_classes} classes")));
    }
    let scaled;
    let z = if cfg.standardize {
        scaled = standardized(z);
        &scaled
    } else {
        z
    };
    let w0 = glorot(z.cols(), num_classes, &mut rng_from(cfg.seed));
    let clf = fit_softmax(z, labels, &masks.train, w0, cfg);
    let pred = clf.predict(z);

    let per_class_accuracy = (0..num_classes)
        .map(|c| {
            let rows: Vec<usize> = masks.test.iter().copied().filter(|&r| labels[r] == c).collect();
            (!rows.is_empty()).then(|| accuracy(&pred, labels, &rows))
        })
        .collect();
    Ok(EvalReport {
        accuracy: accuracy(&pred, labels, &masks.test),
        val_accuracy: (!masks.val.is_empty()).then(|| accuracy(&pred, labels, &masks.val)),
        per_class_accuracy,
        train_size: masks.train.len(),
        val_size: masks.val.len(),
        test_size: masks.test.len(),
        config: serde_json::json!({ "probe": cfg }),
    })
}

/// Encodes the un-augmented graph with frozen weights, then probes.
pub fn evaluate_pipeline(
    g: &Graph,
    params: &EncoderParams,
    masks: &SplitMasks,
    cfg: &ProbeConfig,
) -> Result<EvalReport, ProbeError> {
    let adj = Arc::new(normalize_adjacency(g));
    let z = embed(&adj, g.features(), params)?;
    linear_probe(&z, g.labels(), g.num_classes(), masks, cfg)
}

/// CSV `node_id,label,z_0,...` with shortest round-trip formatting.
pub fn embeddings_csv(z: &Tensor, labels: &[usize]) -> String {
    let mut out = String::from("node_id,label");
    for j in 0..z.cols() {
        let _ = write!(out, ",z_{j}");
    }
    out.push('\n');
    for (i, label) in labels.iter().enumerate().take(z.rows()) {
        let _ = write!(out, "{i},{label}");
        for x in z.row(i) {
            let _ = write!(out, ",{x:?}");
        }
        out.push('\n');
    }
    out
}

pub fn export_embeddings(z: &Tensor, labels: &[usize], path: &Path) -> Result<(), ProbeError> {
    fs::write(path, embeddings_csv(z, labels)).map_err(|source| ProbeError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Reads back an embedding CSV as `(labels, Z)`.
pub fn read_embeddings(path: &Path) -> Result<(Vec<usize>, Tensor), ProbeError> {
    let p = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|source| ProbeError::Io {
        path: p.clone(),
        source,
    })?;
    let parse_err = |line: usize, message: String| ProbeError::Parse {
        path: p.clone(),
        line,
        message,
    };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| parse_err(1, "missing header".into()))?;
    let d = header.split(',').count().saturating_sub(2);
    let mut labels = Vec::new();
    let mut data = Vec::new();
    for (k, line) in lines.enumerate() {
        let lineno = k + 2;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != d + 2 {
            return Err(parse_err(
                lineno,
                format!("expected {} fields, got {}", d + 2, fields.len()),
            ));
        }
        labels.push(
            fields[1]
                .parse()
                .map_err(|_| parse_err(lineno, format!("bad label {:?}", fields[1])))?,
        );
        for f in &fields[2..] {
            data.push(
                f.parse::<f64>()
                    .map_err(|_| parse_err(lineno, format!("bad value {f:?}")))?,
            );
        }
    }
    let n = labels.len();
    Ok((labels, Tensor::from_vec(n, d, data)))
}
