use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use polycl_cli::config::{expand_key_flags, ExperimentConfig};
use polycl_cli::experiment::{self as exp, RunError};
use polycl_core::hecheck::assert_compatible;
use polycl_core::model::load_checkpoint;

/// Polynomial graph contrastive learning experiments.
///
/// Any config key can be passed as a flag, e.g. `--train.epochs 50`.
#[derive(Parser, Debug)]
#[command(name = "polycl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// key = value config file
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a config key (repeatable), e.g. `--set loss.kind=grace`
    #[arg(long = "set", short = 's', value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Print per-epoch losses to stderr
    #[arg(long, short)]
    verbose: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Convert content/cites files into a canonical JSON graph
    Ingest {
        #[arg(long)]
        content: PathBuf,
        #[arg(long)]
        cites: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pre-train the encoder and write a checkpoint and training log
    Pretrain(Common),
    /// Probe a saved checkpoint
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Pre-train, probe and write every artifact
    Run(Common),
    /// Activation × loss grid
    Ablate(Common),
    /// Accuracy against the regularization weight
    SweepLambda {
        #[command(flatten)]
        common: Common,
        /// Comma-separated values; defaults to `sweep.lambdas`
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
    },
    /// Static HE-compatibility report of the configured pipeline
    Hecheck {
        #[command(flatten)]
        common: Common,
        /// Also write the circuit dump here
        #[arg(long)]
        dump: Option<PathBuf>,
        /// Print the report as JSON instead of a table
        #[arg(long)]
        json: bool,
    },
    /// Finite-difference check of every op and the poly pipeline
    GradCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load_config(c: &Common) -> Result<ExperimentConfig, RunError> {
    let mut cfg = ExperimentConfig::default();
    if let Some(path) = &c.config {
        cfg.apply_file(path)?;
    }
    cfg.apply_overrides(&c.overrides)?;
    cfg.validate()?;
    Ok(cfg)
}

fn progress(verbose: bool) -> impl FnMut(usize, f64) {
    move |epoch, loss| {
        if verbose {
            eprintln!("epoch {epoch:>4}  loss {loss:.6}");
        }
    }
}

fn execute(command: Command) -> Result<(), RunError> {
    match command {
        Command::Ingest { content, cites, out } => {
            let (g, stats) = exp::ingest(&content, &cites, &out)?;
            println!(
                "N={} F={} C={} E={}",
                g.num_nodes(),
                g.num_features(),
                g.num_classes(),
                g.edges().len()
            );
            if stats.dropped_edges + stats.duplicate_edges + stats.self_loops > 0 {
                eprintln!(
                    "skipped: {} dangling, {} duplicate, {} self-loop edges",
                    stats.dropped_edges, stats.duplicate_edges, stats.self_loops
                );
            }
        }
        Command::Pretrain(c) => {
            let cfg = load_config(&c)?;
            let data = exp::load_dataset(&cfg)?;
            let (params, mut log) = exp::pretrain(&cfg, &data, &mut progress(c.verbose))?;
            exp::write_pretrain_artifacts(&cfg.out_dir, &cfg, &params, &mut log)?;
            let last = log.losses.last().map_or(f64::NAN, |l| l.loss);
            println!(
                "epochs={} final_loss={last} time={:.1}s out={}",
                log.losses.len(),
                log.wall_time.as_secs_f64(),
                cfg.out_dir.display()
            );
        }
        Command::Eval { common, checkpoint } => {
            let cfg = load_config(&common)?;
            let data = exp::load_dataset(&cfg)?;
            let params = load_checkpoint(&checkpoint)?;
            let (report, z) = exp::evaluate(&cfg, &data, &params)?;
            exp::write_eval_artifacts(&cfg.out_dir, &cfg, &report, &z, data.graph.labels())?;
            println!("accuracy={:.4} test={}", report.accuracy, report.test_size);
        }
        Command::Run(c) => {
            let cfg = load_config(&c)?;
            let data = exp::load_dataset(&cfg)?;
            let mut outcome = exp::run(&cfg, &data, &mut progress(c.verbose))?;
            exp::write_run_artifacts(&cfg.out_dir, &cfg, &data, &mut outcome)?;
            println!(
                "accuracy={:.4} epochs={} time={:.1}s out={}",
                outcome.report.accuracy,
                outcome.log.losses.len(),
                outcome.log.wall_time.as_secs_f64(),
                cfg.out_dir.display()
            );
        }
        Command::Ablate(c) => {
            let cfg = load_config(&c)?;
            let data = exp::load_dataset(&cfg)?;
            let rows = exp::ablate(&cfg, &data)?;
            print!("{}", exp::ablation_csv(&rows));
            if rows.iter().any(|r| r.error.is_some()) {
                return Err(RunError::Failed("one or more ablation cells failed".into()));
            }
        }
        Command::SweepLambda { common, values } => {
            let cfg = load_config(&common)?;
            let data = exp::load_dataset(&cfg)?;
            let values = values.unwrap_or_else(|| cfg.sweep_lambdas.clone());
            let rows = exp::sweep_lambda(&cfg, &data, &values)?;
            print!("{}", exp::sweep_csv(&rows));
            if let Some(i) = exp::sweep_argmax(&rows) {
                println!("best lambda={}", rows[i].lambda);
            }
        }
        Command::Hecheck { common, dump, json } => {
            let cfg = load_config(&common)?;
            let (tape, report) = exp::hecheck(&cfg)?;
            let circuit = tape.circuit();
            if let Some(path) = dump {
                std::fs::write(&path, circuit.to_string()).map_err(|source| RunError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
            }
            if json {
                println!("{}", serde_json::to_string_pretty(&report.to_json()).expect("json"));
            } else {
                print!("{}", report.table(&circuit));
            }
            if let Err(e) = assert_compatible(&tape) {
                return Err(RunError::Incompatible(
                    e.offending
                        .iter()
                        .map(|o| format!("#{} {}", o.id, o.op))
                        .collect::<Vec<_>>()
                        .join(", "),
                ));
            }
        }
        Command::GradCheck { seed } => {
            let rows = exp::grad_suite(seed)?;
            print!("{}", exp::grad_suite_table(&rows));
            let worst = rows.iter().map(|r| r.report.max_rel_err).fold(0.0, f64::max);
            println!("max_rel_err={worst:.3e} tolerance={:e}", exp::GRAD_TOLERANCE);
            if worst > exp::GRAD_TOLERANCE {
                return Err(RunError::Failed("gradient check exceeded tolerance".into()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = expand_key_flags(std::env::args().collect());
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
