use polycl_core::graphdata::SplitMasks;
use polycl_core::probe::{fit_softmax, linear_probe, ProbeConfig};
use polycl_core::rng::rng_from;
use polycl_core::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::Rng;

fn masks(n: usize, train: usize) -> SplitMasks {
    SplitMasks {
        train: (0..train).collect(),
        val: vec![],
        test: (train..n).collect(),
    }
}

#[test]
fn shuffled_labels_score_at_chance() {
    let (n, c) = (1400, 7);
    let mut accs = Vec::new();
    for seed in 0..5 {
        let mut rng = rng_from(seed);
        let z = Tensor::from_fn(n, 16, |_, _| rng.gen_range(-1.0..1.0));
        let mut labels: Vec<usize> = (0..n).map(|i| i % c).collect();
        labels.shuffle(&mut rng);
        let cfg = ProbeConfig {
            seed,
            ..ProbeConfig::default()
        };
        accs.push(linear_probe(&z, &labels, c, &masks(n, 400), &cfg).unwrap().accuracy);
    }
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    assert!((mean - 1.0 / 7.0).abs() <= 0.05, "{accs:?}");
}

#[test]
fn permuting_dimensions_with_matching_init_keeps_accuracy() {
    let (n, d, c) = (300, 6, 3);
    let mut rng = rng_from(1);
    let labels: Vec<usize> = (0..n).map(|i| i % c).collect();
    let z = Tensor::from_fn(n, d, |i, j| {
        rng.gen_range(-1.0..1.0) + if j == labels[i] { 0.8 } else { 0.0 }
    });
    let w0 = Tensor::from_fn(d, c, |_, _| rng.gen_range(-0.5..0.5));
    let mut perm: Vec<usize> = (0..d).collect();
    perm.shuffle(&mut rng);
    let zp = z.select_columns(&perm);
    let w0p = w0.select_rows(&perm);
    let rows: Vec<usize> = (0..100).collect();
    let cfg = ProbeConfig::default();
    let a = fit_softmax(&z, &labels, &rows, w0, &cfg).predict(&z);
    let b = fit_softmax(&zp, &labels, &rows, w0p, &cfg).predict(&zp);
    assert_eq!(a, b);
}

#[test]
fn probe_is_deterministic_and_sized() {
    let mut rng = rng_from(4);
    let z = Tensor::from_fn(60, 5, |_, _| rng.gen_range(-1.0..1.0));
    let labels: Vec<usize> = (0..60).map(|i| i % 2).collect();
    let m = SplitMasks {
        train: (0..20).collect(),
        val: (20..30).collect(),
        test: (30..60).collect(),
    };
    let a = linear_probe(&z, &labels, 2, &m, &ProbeConfig::default()).unwrap();
    let b = linear_probe(&z, &labels, 2, &m, &ProbeConfig::default()).unwrap();
    assert_eq!(a, b);
    assert_eq!((a.train_size, a.val_size, a.test_size), (20, 10, 30));
    let correct = (a.accuracy * 30.0).round();
    assert!((a.accuracy - correct / 30.0).abs() < 1e-15);
}
