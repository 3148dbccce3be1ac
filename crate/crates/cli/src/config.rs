//! Plain-text `key = value` experiment configuration with dotted keys.
//!
//! ```text
//! # comments and blank lines are ignored
//! data.path = data/raw/cora/cora
//! data.format = content_cites
//! loss.kind = poly
//! train.epochs = 200
//! ```
//!
//! Every key can also be given on the command line as `--key value`,
//! `--key=value` or `--set key=value`; later settings win.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use polycl_core::model::Activation;
use polycl_core::objectives::LossKind;
use polycl_core::probe::ProbeConfig;
use polycl_core::rng::derive_seed;
use polycl_core::trainer::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataFormat {
    /// Canonical JSON, optionally with embedded split masks.
    Canonical,
    /// `<path>.content` and `<path>.cites`.
    ContentCites,
}

impl DataFormat {
    fn name(self) -> &'static str {
        match self {
            DataFormat::Canonical => "canonical",
            DataFormat::ContentCites => "content_cites",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub data_path: Option<PathBuf>,
    pub data_format: DataFormat,
    /// Scale each feature row to sum to one.
    pub normalize_features: bool,
    pub out_dir: PathBuf,
    /// Master seed; training, probe and split streams are derived from it.
    pub seed: u64,
    pub train: TrainConfig,
    pub probe: ProbeConfig,
    pub sweep_lambdas: Vec<f64>,
    /// Node count of the dummy graph `hecheck` records on.
    pub hecheck_nodes: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut cfg = Self {
            data_path: None,
            data_format: DataFormat::Canonical,
            normalize_features: false,
            out_dir: PathBuf::from("runs/default"),
            seed: 0,
            train: TrainConfig::default(),
            probe: ProbeConfig::default(),
            sweep_lambdas: vec![1e-4, 1e-3, 1e-2, 1e-1, 1.0],
            hecheck_nodes: 4,
        };
        cfg.reseed();
        cfg
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigError {
    pub origin: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.origin.is_empty() {
            f.write_str(&self.message)
        } else {
            write!(f, "{}: {}", self.origin, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

/// Every recognized key, in echo order.
pub const KEYS: &[&str] = &[
    "data.path",
    "data.format",
    "data.normalize_features",
    "out_dir",
    "seed",
    "train.epochs",
    "train.lr",
    "train.weight_decay",
    "train.decoupled_decay",
    "train.beta1",
    "train.beta2",
    "train.eps",
    "train.clip_norm",
    "model.hidden",
    "model.out",
    "model.activation",
    "loss.kind",
    "loss.margin",
    "loss.lambda",
    "loss.temperature",
    "augment.edge_drop_1",
    "augment.edge_drop_2",
    "augment.feat_mask_1",
    "augment.feat_mask_2",
    "probe.lr",
    "probe.epochs",
    "probe.l2",
    "probe.standardize",
    "sweep.lambdas",
    "hecheck.nodes",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, String> {
    value.parse().map_err(|_| format!("{key}: cannot parse {value:?}"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, String> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!("{key}: expected true/false, got {value:?}")),
    }
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    /// Derived seeds follow the master seed; call after changing `seed`.
    fn reseed(&mut self) {
        self.train.seed = self.seed;
        self.probe.seed = derive_seed(self.seed, "probe");
    }

    pub fn split_seed(&self) -> u64 {
        derive_seed(self.seed, "split")
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let v = value.trim();
        let t = &mut self.train;
        match key {
            "data.path" => self.data_path = (!v.is_empty()).then(|| PathBuf::from(v)),
            "data.format" => {
                self.data_format = match v {
                    "canonical" => DataFormat::Canonical,
                    "content_cites" => DataFormat::ContentCites,
                    _ => return Err(format!("data.format: expected canonical or content_cites, got {v:?}")),
                }
            }
            "data.normalize_features" => self.normalize_features = parse_bool(key, v)?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            "seed" => {
                self.seed = parse(key, v)?;
                self.reseed();
            }
            "train.epochs" => t.epochs = parse(key, v)?,
            "train.lr" => t.adam.lr = parse(key, v)?,
            "train.weight_decay" => t.adam.weight_decay = parse(key, v)?,
            "train.decoupled_decay" => t.adam.decoupled = parse_bool(key, v)?,
            "train.beta1" => t.adam.beta1 = parse(key, v)?,
            "train.beta2" => t.adam.beta2 = parse(key, v)?,
            "train.eps" => t.adam.eps = parse(key, v)?,
            "train.clip_norm" => {
                t.clip_norm = match v {
                    "none" | "" => None,
                    _ => Some(parse(key, v)?),
                }
            }
            "model.hidden" => t.hidden = parse(key, v)?,
            "model.out" => t.out = parse(key, v)?,
            "model.activation" => {
                t.activation = Activation::parse(v)
                    .ok_or_else(|| format!("model.activation: expected square, relu or half_square, got {v:?}"))?
            }
            "loss.kind" => {
                t.loss.kind =
                    LossKind::parse(v).ok_or_else(|| format!("loss.kind: expected poly or grace, got {v:?}"))?
            }
            "loss.margin" => t.loss.margin = parse(key, v)?,
            "loss.lambda" => t.loss.lambda = parse(key, v)?,
            "loss.temperature" => t.loss.temperature = parse(key, v)?,
            "augment.edge_drop_1" => t.augment.edge_drop[0] = parse(key, v)?,
            "augment.edge_drop_2" => t.augment.edge_drop[1] = parse(key, v)?,
            "augment.feat_mask_1" => t.augment.feature_mask[0] = parse(key, v)?,
            "augment.feat_mask_2" => t.augment.feature_mask[1] = parse(key, v)?,
            "probe.lr" => self.probe.lr = parse(key, v)?,
            "probe.epochs" => self.probe.epochs = parse(key, v)?,
            "probe.l2" => self.probe.l2 = parse(key, v)?,
            "probe.standardize" => self.probe.standardize = parse_bool(key, v)?,
            "sweep.lambdas" => {
                self.sweep_lambdas = v.split(',').map(|s| parse(key, s.trim())).collect::<Result<_, _>>()?
            }
            "hecheck.nodes" => self.hecheck_nodes = parse(key, v)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let t = &self.train;
        Some(match key {
            "data.path" => self
                .data_path
                .as_ref()
                .map_or_else(String::new, |p| p.display().to_string()),
            "data.format" => self.data_format.name().into(),
            "data.normalize_features" => self.normalize_features.to_string(),
            "out_dir" => self.out_dir.display().to_string(),
            "seed" => self.seed.to_string(),
            "train.epochs" => t.epochs.to_string(),
            "train.lr" => t.adam.lr.to_string(),
            "train.weight_decay" => t.adam.weight_decay.to_string(),
            "train.decoupled_decay" => t.adam.decoupled.to_string(),
            "train.beta1" => t.adam.beta1.to_string(),
            "train.beta2" => t.adam.beta2.to_string(),
            "train.eps" => t.adam.eps.to_string(),
            "train.clip_norm" => t.clip_norm.map_or_else(|| "none".into(), |c| c.to_string()),
            "model.hidden" => t.hidden.to_string(),
            "model.out" => t.out.to_string(),
            "model.activation" => t.activation.name().into(),
            "loss.kind" => t.loss.kind.name().into(),
            "loss.margin" => t.loss.margin.to_string(),
            "loss.lambda" => t.loss.lambda.to_string(),
            "loss.temperature" => t.loss.temperature.to_string(),
            "augment.edge_drop_1" => t.augment.edge_drop[0].to_string(),
            "augment.edge_drop_2" => t.augment.edge_drop[1].to_string(),
            "augment.feat_mask_1" => t.augment.feature_mask[0].to_string(),
            "augment.feat_mask_2" => t.augment.feature_mask[1].to_string(),
            "probe.lr" => self.probe.lr.to_string(),
            "probe.epochs" => self.probe.epochs.to_string(),
            "probe.l2" => self.probe.l2.to_string(),
            "probe.standardize" => self.probe.standardize.to_string(),
            "sweep.lambdas" => fmt_list(&self.sweep_lambdas),
            "hecheck.nodes" => self.hecheck_nodes.to_string(),
            _ => return None,
        })
    }

    /// Applies `key = value` lines. Errors carry `origin:line`.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| ConfigError {
                origin: format!("{origin}:{}", i + 1),
                message,
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key = value, got {line:?}")))?;
            self.set(k.trim(), v).map_err(err)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| ConfigError {
            origin: path.display().to_string(),
            message: e.to_string(),
        })?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<(), ConfigError> {
        for o in overrides {
            let o = o.as_ref();
            let err = |message: String| ConfigError {
                origin: "command line".into(),
                message,
            };
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| err(format!("expected key=value, got {o:?}")))?;
            self.set(k.trim(), v).map_err(err)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |message: String| ConfigError {
            origin: String::new(),
            message,
        };
        self.train.validate().map_err(err)?;
        if self.probe.lr.is_nan() || self.probe.lr <= 0.0 || self.probe.epochs == 0 {
            return Err(err("probe.lr and probe.epochs must be positive".into()));
        }
        if self.sweep_lambdas.is_empty() {
            return Err(err("sweep.lambdas is empty".into()));
        }
        if self.hecheck_nodes < 2 {
            return Err(err("hecheck.nodes must be at least 2".into()));
        }
        Ok(())
    }

    /// Every key with its current value, one `key = value` per line.
    pub fn echo(&self) -> String {
        KEYS.iter()
            .map(|k| format!("{k} = {}\n", self.get(k).expect("listed key")))
            .collect()
    }

    /// The echo as a JSON object of strings.
    pub fn echo_json(&self) -> serde_json::Value {
        let map = KEYS
            .iter()
            .map(|k| {
                (
                    k.to_string(),
                    serde_json::Value::String(self.get(k).expect("listed key")),
                )
            })
            .collect();
        serde_json::Value::Object(map)
    }
}

/// Rewrites `--dotted.key value` and `--dotted.key=value` into
/// `--set dotted.key=value` so clap only has to know about `--set`.
pub fn expand_key_flags(args: Vec<String>) -> Vec<String> {
    let mut out = Vec::with_capacity(args.len());
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        let Some(rest) = a.strip_prefix("--") else {
            out.push(a);
            continue;
        };
        let (key, inline) = match rest.split_once('=') {
            Some((k, v)) => (k.to_string(), Some(v.to_string())),
            None => (rest.to_string(), None),
        };
        if !KEYS.contains(&key.as_str()) {
            out.push(a);
            continue;
        }
        match inline.or_else(|| it.next()) {
            Some(v) => {
                out.push("--set".into());
                out.push(format!("{key}={v}"));
            }
            None => out.push(a),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_round_trips() {
        let mut a = ExperimentConfig::default();
        a.apply_text(
            "seed = 7\nloss.kind = grace # baseline\n\nsweep.lambdas = 0.5, 2\n",
            "t",
        )
        .unwrap();
        let mut b = ExperimentConfig::default();
        b.apply_text(&a.echo(), "echo").unwrap();
        assert_eq!(a, b);
        assert_eq!(b.train.loss.kind, LossKind::Grace);
        assert_eq!(b.sweep_lambdas, vec![0.5, 2.0]);
        assert_eq!(b.probe.seed, derive_seed(7, "probe"));
    }

    #[test]
    fn errors_name_the_line() {
        let mut c = ExperimentConfig::default();
        let e = c.apply_text("seed = 1\ntrain.epochs = many\n", "cfg.txt").unwrap_err();
        assert_eq!(e.origin, "cfg.txt:2");
        let e = c.apply_text("bogus.key = 1", "cfg.txt").unwrap_err();
        assert!(e.message.contains("unknown key"));
    }

    #[test]
    fn key_flags_become_overrides() {
        let args = [
            "polycl",
            "run",
            "--train.epochs",
            "5",
            "--loss.kind=grace",
            "--config",
            "x",
        ]
        .map(String::from)
        .to_vec();
        assert_eq!(
            expand_key_flags(args),
            [
                "polycl",
                "run",
                "--set",
                "train.epochs=5",
                "--set",
                "loss.kind=grace",
                "--config",
                "x"
            ]
            .map(String::from)
            .to_vec()
        );
    }
}
