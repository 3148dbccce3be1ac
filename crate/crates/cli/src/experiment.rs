//! Experiment runners behind the CLI commands.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;

use polycl_core::graphdata::{
    load_canonical, load_content_cites, make_split, normalize_adjacency, DataError, Graph, IngestStats,
    SparseAdjacency, SplitMasks,
};
use polycl_core::hecheck::{analyze, DepthReport};
use polycl_core::model::{embed, save_checkpoint, Activation, CheckpointError, EncoderParams};
use polycl_core::objectives::LossKind;
use polycl_core::probe::{export_embeddings, linear_probe, EvalReport, ProbeError};
use polycl_core::rng::{derive_seed, rng_from};
use polycl_core::tape::{op_cases, GradCheckOptions, GradCheckReport, TapeError, TapeGraph};
use polycl_core::tensor::Tensor;
use polycl_core::trainer::{build_step_tape, initial_params, pretrain_from, TrainError, TrainLog};

use crate::config::{ConfigError, DataFormat, ExperimentConfig};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error(transparent)]
    Tape(#[from] TapeError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Failed(String),
    #[error("pipeline is not HE-compatible; offending ops: {0}")]
    Incompatible(String),
}

impl RunError {
    /// 1 usage/config/input, 2 runtime (including divergence), 3 HE-incompatible.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Data(_) => 1,
            RunError::Incompatible(_) => 3,
            _ => 2,
        }
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), RunError> {
    fs::write(path, contents).map_err(|source| RunError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn create_dir(path: &Path) -> Result<(), RunError> {
    fs::create_dir_all(path).map_err(|source| RunError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

/// A loaded graph and the split it is evaluated on.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub graph: Graph,
    pub masks: SplitMasks,
}

/// Reads the configured dataset. Canonical files with embedded masks keep
/// them; otherwise a split is drawn from the split seed.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset, RunError> {
    let path = cfg.data_path.as_ref().ok_or_else(|| {
        RunError::Config(ConfigError {
            origin: String::new(),
            message: "data.path is not set".into(),
        })
    })?;
    let (mut graph, masks) = match cfg.data_format {
        DataFormat::Canonical => load_canonical(path)?,
        DataFormat::ContentCites => {
            let (content, cites) = content_cites_paths(path);
            (load_content_cites(&content, &cites)?.0, None)
        }
    };
    if cfg.normalize_features {
        graph.row_normalize_features();
    }
    let masks = match masks {
        Some(m) => m,
        None => make_split(&graph, cfg.split_seed())?,
    };
    Ok(Dataset { graph, masks })
}

/// `data/raw/cora/cora` → (`cora.content`, `cora.cites`) next to it.
pub fn content_cites_paths(prefix: &Path) -> (PathBuf, PathBuf) {
    let with = |ext: &str| {
        let mut s = prefix.as_os_str().to_owned();
        s.push(ext);
        PathBuf::from(s)
    };
    (with(".content"), with(".cites"))
}

pub fn ingest(content: &Path, cites: &Path, out: &Path) -> Result<(Graph, IngestStats), RunError> {
    let (g, stats) = load_content_cites(content, cites)?;
    polycl_core::graphdata::save_canonical(out, &g, None)?;
    Ok((g, stats))
}

/// Result of one pretrain + probe run.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub params: EncoderParams,
    pub log: TrainLog,
    pub report: EvalReport,
    pub embeddings: Tensor,
}

pub fn pretrain(
    cfg: &ExperimentConfig,
    data: &Dataset,
    observe: &mut dyn FnMut(usize, f64),
) -> Result<(EncoderParams, TrainLog), RunError> {
    cfg.validate()?;
    let g = data.graph.unlabeled();
    let init = initial_params(data.graph.num_features(), &cfg.train);
    Ok(pretrain_from(&g, &cfg.train, init, observe)?)
}

/// Probes frozen `params` on the un-augmented graph.
pub fn evaluate(
    cfg: &ExperimentConfig,
    data: &Dataset,
    params: &EncoderParams,
) -> Result<(EvalReport, Tensor), RunError> {
    let adj = Arc::new(normalize_adjacency(&data.graph));
    let z = embed(&adj, data.graph.features(), params)?;
    let mut report = linear_probe(
        &z,
        data.graph.labels(),
        data.graph.num_classes(),
        &data.masks,
        &cfg.probe,
    )?;
    report.config = cfg.echo_json();
    Ok((report, z))
}

pub fn run(
    cfg: &ExperimentConfig,
    data: &Dataset,
    observe: &mut dyn FnMut(usize, f64),
) -> Result<RunOutcome, RunError> {
    let (params, log) = pretrain(cfg, data, observe)?;
    let (report, embeddings) = evaluate(cfg, data, &params)?;
    Ok(RunOutcome {
        params,
        log,
        report,
        embeddings,
    })
}

/// `train_log.json` with the config echo alongside the losses.
pub fn train_log_json(cfg: &ExperimentConfig, log: &TrainLog) -> String {
    to_json(&serde_json::json!({
        "config": cfg.echo_json(),
        "losses": log.losses,
        "checkpoint": log.checkpoint,
    }))
}

pub fn eval_report_json(report: &EvalReport) -> String {
    to_json(report)
}

/// Writes checkpoint, train log, config echo and timing into `dir`.
pub fn write_pretrain_artifacts(
    dir: &Path,
    cfg: &ExperimentConfig,
    params: &EncoderParams,
    log: &mut TrainLog,
) -> Result<(), RunError> {
    create_dir(dir)?;
    write_file(&dir.join("config.txt"), cfg.echo())?;
    save_checkpoint(&dir.join("checkpoint.bin"), params)?;
    log.checkpoint = Some("checkpoint.bin".into());
    write_file(&dir.join("train_log.json"), train_log_json(cfg, log))?;
    write_file(
        &dir.join("timing.json"),
        to_json(&serde_json::json!({ "pretrain_seconds": log.wall_time.as_secs_f64() })),
    )
}

pub fn write_eval_artifacts(
    dir: &Path,
    cfg: &ExperimentConfig,
    report: &EvalReport,
    z: &Tensor,
    labels: &[usize],
) -> Result<(), RunError> {
    create_dir(dir)?;
    write_file(&dir.join("config.txt"), cfg.echo())?;
    write_file(&dir.join("eval_report.json"), eval_report_json(report))?;
    export_embeddings(z, labels, &dir.join("embeddings.csv"))?;
    Ok(())
}

pub fn write_run_artifacts(
    dir: &Path,
    cfg: &ExperimentConfig,
    data: &Dataset,
    outcome: &mut RunOutcome,
) -> Result<(), RunError> {
    write_pretrain_artifacts(dir, cfg, &outcome.params, &mut outcome.log)?;
    write_eval_artifacts(dir, cfg, &outcome.report, &outcome.embeddings, data.graph.labels())
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub activation: Activation,
    pub loss: LossKind,
    pub accuracy: Option<f64>,
    pub error: Option<String>,
    /// Published accuracy for the cell, in percent.
    pub target: f64,
}

impl AblationRow {
    pub fn label(&self) -> String {
        format!("{}+{}", self.activation.name(), self.loss.name())
    }

    /// Accuracy minus target, in points.
    pub fn delta(&self) -> Option<f64> {
        self.accuracy.map(|a| 100.0 * a - self.target)
    }
}

pub const ABLATION_GRID: [(Activation, LossKind, f64); 4] = [
    (Activation::Relu, LossKind::Grace, 80.8),
    (Activation::Relu, LossKind::Poly, 82.8),
    (Activation::Square, LossKind::Grace, 81.2),
    (Activation::Square, LossKind::Poly, 80.8),
];

pub fn ablation_cell_config(cfg: &ExperimentConfig, act: Activation, loss: LossKind) -> ExperimentConfig {
    let mut c = cfg.clone();
    c.train.activation = act;
    c.train.loss.kind = loss;
    c.out_dir = cfg
        .out_dir
        .join("ablation")
        .join(format!("{}_{}", act.name(), loss.name()));
    c
}

/// Runs one cell; failures become rows with an error instead of aborting.
pub fn ablation_row(
    cfg: &ExperimentConfig,
    data: &Dataset,
    (act, loss, target): (Activation, LossKind, f64),
    write: bool,
) -> AblationRow {
    let c = ablation_cell_config(cfg, act, loss);
    let result = run(&c, data, &mut |_, _| {}).and_then(|mut o| {
        if write {
            write_run_artifacts(&c.out_dir, &c, data, &mut o)?;
        }
        Ok(o.report.accuracy)
    });
    AblationRow {
        activation: act,
        loss,
        accuracy: result.as_ref().ok().copied(),
        error: result.err().map(|e| e.to_string()),
        target,
    }
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("combination,activation,loss,accuracy,target,delta,error\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.label(),
            r.activation.name(),
            r.loss.name(),
            r.accuracy.map_or_else(|| "NaN".into(), |a| format!("{:.2}", 100.0 * a)),
            r.target,
            r.delta().map_or_else(|| "NaN".into(), |d| format!("{d:+.2}")),
            r.error.as_deref().unwrap_or("").replace(',', ";")
        );
    }
    out
}

pub fn ablate(cfg: &ExperimentConfig, data: &Dataset) -> Result<Vec<AblationRow>, RunError> {
    cfg.validate()?;
    let rows: Vec<AblationRow> = ABLATION_GRID
        .into_iter()
        .map(|cell| ablation_row(cfg, data, cell, true))
        .collect();
    create_dir(&cfg.out_dir)?;
    write_file(&cfg.out_dir.join("config.txt"), cfg.echo())?;
    write_file(&cfg.out_dir.join("ablation.csv"), ablation_csv(&rows))?;
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub lambda: f64,
    /// NaN when the run failed.
    pub accuracy: f64,
    pub failed: bool,
    pub error: Option<String>,
}

pub fn sweep_cell_config(cfg: &ExperimentConfig, lambda: f64) -> ExperimentConfig {
    let mut c = cfg.clone();
    c.train.loss.kind = LossKind::Poly;
    c.train.loss.lambda = lambda;
    c.out_dir = cfg.out_dir.join("sweep").join(format!("lambda_{lambda}"));
    c
}

pub fn sweep_row(cfg: &ExperimentConfig, data: &Dataset, lambda: f64, write: bool) -> SweepRow {
    let c = sweep_cell_config(cfg, lambda);
    let result = run(&c, data, &mut |_, _| {}).and_then(|mut o| {
        if write {
            write_run_artifacts(&c.out_dir, &c, data, &mut o)?;
        }
        Ok(o.report.accuracy)
    });
    match result {
        Ok(accuracy) => SweepRow {
            lambda,
            accuracy,
            failed: false,
            error: None,
        },
        Err(e) => SweepRow {
            lambda,
            accuracy: f64::NAN,
            failed: true,
            error: Some(e.to_string()),
        },
    }
}

/// Index of the best finite accuracy.
pub fn sweep_argmax(rows: &[SweepRow]) -> Option<usize> {
    rows.iter()
        .enumerate()
        .filter(|(_, r)| !r.failed)
        .fold(None, |best: Option<(usize, f64)>, (i, r)| match best {
            Some((_, a)) if a >= r.accuracy => best,
            _ => Some((i, r.accuracy)),
        })
        .map(|(i, _)| i)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let best = sweep_argmax(rows);
    let mut out = String::from("lambda,accuracy,failed,argmax\n");
    for (i, r) in rows.iter().enumerate() {
        let _ = writeln!(out, "{},{},{},{}", r.lambda, r.accuracy, r.failed, best == Some(i));
    }
    out
}

pub fn sweep_lambda(cfg: &ExperimentConfig, data: &Dataset, values: &[f64]) -> Result<Vec<SweepRow>, RunError> {
    cfg.validate()?;
    let rows: Vec<SweepRow> = values.iter().map(|&l| sweep_row(cfg, data, l, true)).collect();
    create_dir(&cfg.out_dir)?;
    write_file(&cfg.out_dir.join("config.txt"), cfg.echo())?;
    write_file(&cfg.out_dir.join("sweep_lambda.csv"), sweep_csv(&rows))?;
    Ok(rows)
}

/// Ring graph with `n` nodes; the structure, not the size, is what hecheck sees.
pub fn dummy_adjacency(n: usize) -> Arc<SparseAdjacency> {
    let edges: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).filter(|(u, v)| u != v).collect();
    Arc::new(SparseAdjacency::normalized(n, &edges))
}

/// The configured training step (both encoder passes and the loss) recorded
/// on a dummy graph.
pub fn pipeline_tape(cfg: &ExperimentConfig, nodes: usize, features: usize) -> Result<TapeGraph, TapeError> {
    let adj = dummy_adjacency(nodes);
    Ok(build_step_tape(Arc::clone(&adj), adj, features, &cfg.train)?.tape)
}

pub fn hecheck(cfg: &ExperimentConfig) -> Result<(TapeGraph, DepthReport), RunError> {
    cfg.validate()?;
    let tape = pipeline_tape(cfg, cfg.hecheck_nodes, 3)?;
    let report = analyze(&tape);
    Ok((tape, report))
}

#[derive(Clone, Debug)]
pub struct GradSuiteRow {
    pub name: String,
    pub report: GradCheckReport,
}

pub const GRAD_TOLERANCE: f64 = 1e-5;

/// Finite-difference check of every op plus the full poly pipeline on an
/// 8-node graph.
pub fn grad_suite(seed: u64) -> Result<Vec<GradSuiteRow>, RunError> {
    let opts = GradCheckOptions {
        seed,
        ..GradCheckOptions::default()
    };
    let mut rows = Vec::new();
    for case in op_cases(seed) {
        rows.push(GradSuiteRow {
            report: case.check(opts)?,
            name: case.name,
        });
    }

    let mut cfg = ExperimentConfig::default();
    cfg.train.hidden = 4;
    cfg.train.out = 3;
    cfg.train.loss.kind = LossKind::Poly;
    cfg.train.activation = Activation::Square;
    let (n, f) = (8, 5);
    let edges = [
        (0, 1),
        (1, 2),
        (2, 3),
        (3, 0),
        (4, 5),
        (5, 6),
        (6, 7),
        (7, 4),
        (0, 4),
        (2, 6),
    ];
    let adj = Arc::new(SparseAdjacency::normalized(n, &edges));
    let step = build_step_tape(Arc::clone(&adj), adj, f, &cfg.train)?;
    let mut rng = rng_from(derive_seed(seed, "gradcheck"));
    let x = Tensor::from_fn(n, f, |_, _| rand::Rng::gen_range(&mut rng, -1.0..1.0));
    let p = initial_params(f, &cfg.train);
    let inputs = [&x, &x, &p.w1, &p.w2];
    rows.push(GradSuiteRow {
        name: "poly_pipeline_8_nodes".into(),
        report: polycl_core::tape::check_gradients(&step.tape, &inputs, opts)?,
    });
    Ok(rows)
}

pub fn grad_suite_table(rows: &[GradSuiteRow]) -> String {
    let mut out = format!(
        "{:<24} {:>8} {:>8} {:>12}  status\n",
        "case", "checked", "skipped", "max_rel_err"
    );
    for r in rows {
        let ok = r.report.max_rel_err <= GRAD_TOLERANCE && r.report.checked > 0;
        let _ = writeln!(
            out,
            "{:<24} {:>8} {:>8} {:>12.3e}  {}",
            r.name,
            r.report.checked,
            r.report.skipped,
            r.report.max_rel_err,
            if ok { "ok" } else { "FAIL" }
        );
    }
    out
}
