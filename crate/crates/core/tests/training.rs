use polycl_core::graphdata::Graph;
use polycl_core::rng::rng_from;
use polycl_core::tensor::Tensor;
use polycl_core::trainer::{
    adam_step, initial_params, pretrain, pretrain_from, AdamConfig, AdamState, TrainConfig, TrainError,
};
use rand::Rng;

fn toy_graph() -> Graph {
    let mut rng = rng_from(8);
    let edges = [(0, 1), (1, 2), (2, 3), (3, 0), (4, 5), (5, 6), (6, 7), (7, 4), (0, 4)];
    let x = Tensor::from_fn(8, 6, |_, _| rng.gen_range(0.0..1.0));
    Graph::new(8, edges, x, vec![0; 8], 1).unwrap()
}

fn small_cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        hidden: 8,
        out: 4,
        adam: AdamConfig {
            lr: 1e-2,
            ..AdamConfig::default()
        },
        ..TrainConfig::default()
    }
}

#[test]
fn adam_first_step_matches_closed_form() {
    let g = [0.3, -2.0, 1e-3];
    let mut p = Tensor::from_rows(&[[1.0, 1.0, 1.0]]);
    let cfg = AdamConfig {
        weight_decay: 0.0,
        ..AdamConfig::default()
    };
    adam_step(
        &mut [&mut p],
        &[&Tensor::from_rows(&[g])],
        &mut AdamState::default(),
        &cfg,
    );
    // bias-corrected m̂ = g, v̂ = g², so Δ = −lr·g/(|g| + ε)
    for (w, gi) in p.data().iter().zip(g) {
        let want = 1.0 - cfg.lr * gi / (gi.abs() + cfg.eps);
        assert!((w - want).abs() < 1e-15);
    }
}

#[test]
fn adam_runs_are_bitwise_repeatable() {
    let run = || {
        let mut rng = rng_from(3);
        let mut p = Tensor::from_fn(4, 4, |_, _| rng.gen_range(-1.0..1.0));
        let mut st = AdamState::default();
        for _ in 0..10 {
            let grad = p.map(|x| x.sin());
            adam_step(&mut [&mut p], &[&grad], &mut st, &AdamConfig::default());
        }
        p
    };
    assert_eq!(run(), run());
}

#[test]
fn zero_epochs_returns_initial_params() {
    let g = toy_graph();
    let cfg = small_cfg(0);
    let (p, log) = pretrain(&g.unlabeled(), &cfg).unwrap();
    assert_eq!(p, initial_params(6, &cfg));
    assert!(log.losses.is_empty());
}

#[test]
fn poly_training_reduces_loss_on_toy_graph() {
    let g = toy_graph();
    let (_, log) = pretrain(&g.unlabeled(), &small_cfg(50)).unwrap();
    assert_eq!(log.losses.len(), 50);
    assert!(log.losses.iter().all(|l| l.loss.is_finite()));
    let first = log.losses[0].loss;
    let last = log.losses[49].loss;
    assert!(last < first, "{first} -> {last}");
}

#[test]
fn pretraining_is_deterministic_per_seed() {
    let g = toy_graph();
    let a = pretrain(&g.unlabeled(), &small_cfg(10)).unwrap();
    let b = pretrain(&g.unlabeled(), &small_cfg(10)).unwrap();
    assert_eq!(a.0, b.0);
    assert_eq!(a.1.losses, b.1.losses);
    let c = pretrain(
        &g.unlabeled(),
        &TrainConfig {
            seed: 1,
            ..small_cfg(10)
        },
    )
    .unwrap();
    assert_ne!(a.0, c.0);
}

#[test]
fn divergence_reports_epoch_and_offending_node() {
    let g = toy_graph();
    let cfg = small_cfg(5);
    // square activation and S = Z1·Z2ᵀ push 1e40 features past f64 range
    let x = g.features().scaled(1e40);
    let big = Graph::new(8, g.edges().iter().copied(), x, vec![0; 8], 1).unwrap();
    let mut seen = 0;
    let err = pretrain_from(&big.unlabeled(), &cfg, initial_params(6, &cfg), &mut |_, _| seen += 1).unwrap_err();
    assert_eq!(seen, 0);
    match &err {
        TrainError::Divergence {
            epoch,
            last_finite,
            detail,
        } => {
            assert_eq!((*epoch, *last_finite), (0, None));
            assert!(detail.contains("non-finite value at #"), "{detail}");
        }
        other => panic!("expected divergence, got {other}"),
    }
    assert!(err.to_string().contains("last finite loss: none"));
}

#[test]
fn invalid_config_is_rejected_before_training() {
    let g = toy_graph();
    let mut cfg = small_cfg(1);
    cfg.adam.lr = 0.0;
    assert!(matches!(pretrain(&g.unlabeled(), &cfg), Err(TrainError::Config(_))));
}
