use std::path::Path;
use std::process::{Command, Output};

fn ldrlab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ldrlab")).current_dir(dir).args(args).output().expect("binary runs")
}

fn manifest(dir: &Path, name: &str) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join(format!("{name}.manifest.json"))).unwrap()).unwrap()
}

const SMALL: &str = r#"
seed = 3
threads = 2

[distribution]
kind = "parity"
d = 4

[train]
m = 16
steps = 100
record_every = 50
eval_samples = 256
batch = 256
sqrt_alpha_bars = [0.3, 0.7]
"#;

#[test]
fn fourier_on_parity_lists_low_order_coefficients() {
    let dir = tempfile::tempdir().unwrap();
    let out = ldrlab(dir.path(), &["fourier", "--out", "o"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("o/fourier.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 37);
    for row in &rows[1..] {
        let c: f64 = row.split(',').nth(1).unwrap().parse().unwrap();
        assert!(c.abs() <= 1e-12, "{row}");
    }
    let m = manifest(&dir.path().join("o"), "fourier");
    assert_eq!(m["status"], "complete");
    assert_eq!(m["artifacts"].as_array().unwrap().len(), 2);
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(ldrlab(dir.path(), &["nonsense"]).status.code(), Some(2));
    assert_eq!(ldrlab(dir.path(), &["dist", "--dist", "parity:x"]).status.code(), Some(2));
    std::fs::write(dir.path().join("bad.toml"), "seed = 1\n[train]\nm = 4\netaa = 3\n").unwrap();
    let out = ldrlab(dir.path(), &["train", "--config", "bad.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 4"));
    // runtime failure: checkpoint does not exist
    let out = ldrlab(dir.path(), &["ldr", "--checkpoint", "missing.json", "--out", "l"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(manifest(&dir.path().join("l"), "ldr")["status"], "failed");
}

#[test]
fn train_probe_evaluate_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("small.toml"), SMALL).unwrap();
    let out = ldrlab(d, &["train", "--config", "small.toml", "--out", "t"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m = manifest(&d.join("t"), "train");
    let names: Vec<&str> = m["artifacts"].as_array().unwrap().iter().map(|a| a["path"].as_str().unwrap()).collect();
    assert!(names.contains(&"bank.json"));
    assert_eq!(names.iter().filter(|n| n.starts_with("history_t")).count(), 2);
    for n in &names {
        assert!(d.join("t").join(n).exists());
    }

    let out = ldrlab(
        d,
        &[
            "ldr",
            "--config",
            "small.toml",
            "--out",
            "l",
            "--checkpoint",
            "t/bank.json",
            "--region",
            "0,1",
            "--t-by-alphabar",
            "0.1",
            "--n",
            "64",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(d.join("l/ldr.csv")).unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[0], "0;1");
    let v: f64 = row[3].parse().unwrap();
    assert!((0.0..=1.0).contains(&v));

    let out = ldrlab(
        d,
        &[
            "eval",
            "--config",
            "small.toml",
            "--out",
            "e",
            "--checkpoint",
            "t/bank.json",
            "--checkpoint",
            "gone.json",
            "--n",
            "50",
            "--dump",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(d.join("e/eval.csv")).unwrap();
    assert!(csv.starts_with("checkpoint_step,invalid,hallucination,in_dataset,extrapolation\n100,"));
    assert_eq!(manifest(&d.join("e"), "eval")["diagnostics"].as_array().unwrap().len(), 1);
    let dump: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("e/eval_dump.json")).unwrap()).unwrap();
    assert_eq!(dump[0]["samples"].as_array().unwrap().len(), 50);
}

#[test]
fn same_seed_gives_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("small.toml"), SMALL).unwrap();
    for (out, threads) in [("a", "1"), ("b", "2")] {
        assert!(ldrlab(d, &["train", "--config", "small.toml", "--out", out, "--threads", threads]).status.success());
        assert!(ldrlab(d, &["sample", "--config", "small.toml", "--out", out, "--generator", "marginal", "--n", "100"])
            .status
            .success());
    }
    let (a, b) = (manifest(&d.join("a"), "train"), manifest(&d.join("b"), "train"));
    assert_eq!(a["config_hash"], b["config_hash"]);
    assert_eq!(a["artifacts"], b["artifacts"]);
    assert_eq!(manifest(&d.join("a"), "sample")["artifacts"], manifest(&d.join("b"), "sample")["artifacts"]);
    let other =
        ldrlab(d, &["sample", "--config", "small.toml", "--out", "c", "--seed", "4", "--generator", "marginal", "--n", "100"]);
    assert!(other.status.success());
    assert_ne!(manifest(&d.join("a"), "sample")["artifacts"], manifest(&d.join("c"), "sample")["artifacts"]);
}

#[test]
fn json_config_and_theory() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("cfg.json"), r#"{"seed": 1, "theory": {"alpha_bar": 0.3, "report": {"n_checks": 5, "replay": {"horizon": 1.0, "eta": 1e-3, "record_every": 10, "gh_nodes": 24}, "sigma_init": 1e-3, "seed": 0}}}"#).unwrap();
    let out = ldrlab(d, &["theory", "--config", "cfg.json", "--out", "th"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("th/theory.json")).unwrap()).unwrap();
    assert_eq!(v["alpha_bar"], 0.3);
    assert_eq!(v["K_checks"].as_array().unwrap().len(), 5);
}

#[test]
fn dist_writes_a_loadable_distribution() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(ldrlab(d, &["dist", "--dist", "sum_rule:10", "--out", "s"]).status.success());
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("s/distribution_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["support_size"], 670);
    // fourier needs a binary alphabet
    assert_eq!(ldrlab(d, &["fourier", "--dist", "file:s/distribution.json", "--out", "f"]).status.code(), Some(1));
    assert!(ldrlab(d, &["dist", "--dist", "dyck:3", "--out", "y"]).status.success());
    assert!(ldrlab(d, &["fourier", "--dist", "file:y/distribution.json", "--out", "y"]).status.success());
    let a1: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("y/assumption1.json")).unwrap()).unwrap();
    assert_eq!(a1["holds"], false);
}

#[test]
fn quick_replication_emits_stairs_within_ten_minutes() {
    let dir = tempfile::tempdir().unwrap();
    let start = std::time::Instant::now();
    let out = ldrlab(dir.path(), &["replicate", "--quick", "--out", "r"]);
    let elapsed = start.elapsed();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(elapsed.as_secs() < 600, "{elapsed:?}");
    let stairs = std::fs::read_to_string(dir.path().join("r/stairs.csv")).unwrap();
    assert!(stairs.starts_with("step,gf_time,loss,"));
    assert!(stairs.lines().count() > 100);
    let hall = std::fs::read_to_string(dir.path().join("r/hallucination.csv")).unwrap();
    let generators: Vec<&str> = hall.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(generators, ["exact_score", "independent_coordinates", "trained", "random"]);
}
