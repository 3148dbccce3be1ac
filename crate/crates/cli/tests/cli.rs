use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use polycl_core::graphdata::{save_canonical, Graph, SplitMasks};
use polycl_core::tensor::Tensor;

fn polycl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_polycl")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Two 20-node communities, each with its own feature block.
fn write_tiny_graph(path: &Path) {
    let n = 40;
    let mut edges = Vec::new();
    for c in 0..2 {
        for i in 0..20 {
            edges.push((c * 20 + i, c * 20 + (i + 1) % 20));
            edges.push((c * 20 + i, c * 20 + (i + 7) % 20));
        }
    }
    edges.push((0, 20));
    let x = Tensor::from_fn(n, 6, |i, j| {
        if (j < 3) == (i < 20) {
            1.0 + ((i * j) % 3) as f64
        } else {
            0.0
        }
    });
    let labels = (0..n).map(|i| usize::from(i >= 20)).collect();
    let g = Graph::new(n, edges, x, labels, 2).unwrap();
    let masks = SplitMasks {
        train: vec![0, 1, 2, 20, 21, 22],
        val: vec![3, 23],
        test: (4..20).chain(24..40).collect(),
    };
    save_canonical(path, &g, Some(&masks)).unwrap();
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        write_tiny_graph(&dir.path().join("g.json"));
        fs::write(
            dir.path().join("tiny.cfg"),
            format!(
                "# tiny graph\ndata.path = {}\ntrain.epochs = 5\nmodel.hidden = 8\nmodel.out = 4\nprobe.epochs = 50\n",
                dir.path().join("g.json").display()
            ),
        )
        .unwrap();
        Self { dir }
    }

    fn cfg(&self) -> String {
        self.dir.path().join("tiny.cfg").display().to_string()
    }

    fn out(&self, name: &str) -> String {
        self.dir.path().join(name).display().to_string()
    }
}

#[test]
fn help_and_version_exit_zero() {
    let out = polycl(&["--help"]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("hecheck"));
    assert_eq!(code(&polycl(&["--version"])), 0);
    assert_eq!(code(&polycl(&["run", "--help"])), 0);
}

#[test]
fn usage_and_config_errors_exit_one() {
    let f = Fixture::new();
    assert_eq!(code(&polycl(&["no-such-command"])), 1);
    let out = polycl(&["run", "-c", &f.cfg(), "--set", "train.nonsense=1"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("train.nonsense"));
    assert_eq!(code(&polycl(&["run", "-c", &f.cfg(), "--set", "train.lr=-1"])), 1);
    assert_eq!(
        code(&polycl(&["run", "--set", "data.path=/definitely/missing.json"])),
        1
    );
}

#[test]
fn run_writes_every_artifact() {
    let f = Fixture::new();
    let out_dir = f.out("run");
    let out = polycl(&["run", "-c", &f.cfg(), "--set", &format!("out_dir={out_dir}")]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).starts_with("accuracy="));
    for name in [
        "checkpoint.bin",
        "train_log.json",
        "eval_report.json",
        "embeddings.csv",
        "config.txt",
        "timing.json",
    ] {
        assert!(Path::new(&out_dir).join(name).exists(), "missing {name}");
    }
    let log: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(Path::new(&out_dir).join("train_log.json")).unwrap()).unwrap();
    assert_eq!(log["losses"].as_array().unwrap().len(), 5);
    assert_eq!(log["config"]["train.epochs"], "5");
    let csv = fs::read_to_string(Path::new(&out_dir).join("embeddings.csv")).unwrap();
    assert_eq!(csv.lines().count(), 41);
}

#[test]
fn key_flags_are_accepted_like_set() {
    let f = Fixture::new();
    let out_dir = f.out("flags");
    let out = polycl(&["pretrain", "-c", &f.cfg(), "--train.epochs", "2", "--out_dir", &out_dir]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).starts_with("epochs=2 "));
}

#[test]
fn eval_of_saved_checkpoint_matches_run() {
    let f = Fixture::new();
    let a = f.out("a");
    assert_eq!(
        code(&polycl(&["run", "-c", &f.cfg(), "--set", &format!("out_dir={a}")])),
        0
    );
    let b = f.out("b");
    let ckpt = Path::new(&a).join("checkpoint.bin").display().to_string();
    let out = polycl(&[
        "eval",
        "-c",
        &f.cfg(),
        "--set",
        &format!("out_dir={b}"),
        "--checkpoint",
        &ckpt,
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let acc = |dir: &str| {
        let v: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(Path::new(dir).join("eval_report.json")).unwrap()).unwrap();
        v["accuracy"].as_f64().unwrap()
    };
    assert_eq!(acc(&a), acc(&b));
}

#[test]
fn zero_epoch_run_equals_untrained_eval() {
    let f = Fixture::new();
    let out = polycl(&[
        "run",
        "-c",
        &f.cfg(),
        "--set",
        "train.epochs=0",
        "--set",
        &format!("out_dir={}", f.out("z")),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("epochs=0"));
}

#[test]
fn divergence_exits_two() {
    let f = Fixture::new();
    let path = f.dir.path().join("huge.json");
    let g = polycl_core::graphdata::load_canonical(&f.dir.path().join("g.json")).unwrap();
    let big = Graph::new(
        40,
        g.0.edges().iter().copied(),
        g.0.features().scaled(1e80),
        g.0.labels().to_vec(),
        2,
    )
    .unwrap();
    save_canonical(&path, &big, g.1.as_ref()).unwrap();
    let out = polycl(&[
        "run",
        "-c",
        &f.cfg(),
        "--set",
        &format!("data.path={}", path.display()),
        "--set",
        &format!("out_dir={}", f.out("d")),
    ]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("epoch 0"));
}

#[test]
fn hecheck_exit_codes_follow_compatibility() {
    let f = Fixture::new();
    let dump = f.out("circuit.txt");
    let out = polycl(&["hecheck", "--dump", &dump]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("ctct_depth"));
    let circuit = fs::read_to_string(&dump).unwrap();
    assert!(circuit.contains("mult=ct_ct"));

    let out = polycl(&["hecheck", "--set", "loss.kind=grace", "--set", "model.activation=relu"]);
    assert_eq!(code(&out), 3);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("relu") && err.contains("exp"), "{err}");

    let out = polycl(&["hecheck", "--json"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["ctct_depth"], 3);
    assert_eq!(v["total_levels"], 7);
}

#[test]
fn ingest_prints_counts() {
    let f = Fixture::new();
    let (c, e) = (f.dir.path().join("t.content"), f.dir.path().join("t.cites"));
    fs::write(&c, "a\t1\t0\tX\nb\t0\t1\tY\nc\t1\t1\tX\n").unwrap();
    fs::write(&e, "a\tb\nb\tc\nz\ta\n").unwrap();
    let out_path = f.out("t.json");
    let out = polycl(&[
        "ingest",
        "--content",
        &c.display().to_string(),
        "--cites",
        &e.display().to_string(),
        "--out",
        &out_path,
    ]);
    assert_eq!(code(&out), 0);
    assert_eq!(stdout(&out).trim(), "N=3 F=2 C=2 E=2");
    assert!(Path::new(&out_path).exists());
}

#[test]
fn grad_check_passes() {
    let out = polycl(&["grad-check"]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    assert!(stdout(&out).contains("max_rel_err="));
}
