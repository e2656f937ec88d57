use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bde_core::io::container;

fn bde() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_bde"));
    c.env_remove("BDE_MAX_WORKERS");
    c
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

/// `y = 2 x1 - x2 + noise` with a deterministic pseudo-noise term.
fn write_regression_csv(dir: &Path, n: usize) -> PathBuf {
    let mut text = String::from("x1,x2,y\n");
    for i in 0..n {
        let x1 = (i as f64 * 0.37).sin() * 2.0;
        let x2 = (i as f64 * 0.11).cos();
        let noise = ((i * 7919) % 101) as f64 / 101.0 - 0.5;
        writeln!(text, "{x1},{x2},{}", 2.0 * x1 - x2 + 0.2 * noise).unwrap();
    }
    let path = dir.join("train.csv");
    std::fs::write(&path, text).unwrap();
    path
}

fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("config.toml");
    std::fs::write(
        &path,
        format!(
            "n_members = 2\nhidden_layers = [8]\nepochs = 200\nwarmup_steps = 200\n\
             n_samples = 30\nn_thinning = 3\nlr = 0.01\nmaster_seed = 5\n{extra}"
        ),
    )
    .unwrap();
    path
}

fn train(dir: &Path, config: &Path, data: &Path) -> (Output, PathBuf) {
    let model = dir.join("model.bde");
    let out = run(bde()
        .args(["train", "--config"])
        .arg(config)
        .arg("--data")
        .arg(data)
        .args(["--target", "y", "--out"])
        .arg(&model));
    (out, model)
}

#[test]
fn train_then_predict_with_intervals() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_regression_csv(dir.path(), 80);
    let config = write_config(dir.path(), "");
    let (out, model) = train(dir.path(), &config, &data);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let summary = stdout(&out);
    assert_eq!(summary.lines().count(), 3, "{summary}");
    assert!(summary.starts_with("member,seed,epochs"));

    let saved = container::load_saved_model(&model).unwrap();
    assert_eq!(saved.ensemble.num_samples(), 2 * 10);
    assert_eq!(saved.schema.unwrap().feature_names, ["x1", "x2"]);

    let raw = dir.path().join("raw.csv");
    let out = run(bde()
        .args(["predict", "--model"])
        .arg(&model)
        .arg("--data")
        .arg(&data)
        .args(["--mean-std", "--intervals", "0.1,0.9", "--raw-out"])
        .arg(&raw));
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("mean,std,q_0.1,q_0.9"));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 80);
    for r in &rows {
        assert!(r[2] <= r[0] && r[0] <= r[3], "{r:?}");
        assert!(r[1] > 0.0);
    }
    let raw_text = std::fs::read_to_string(&raw).unwrap();
    assert!(raw_text.starts_with("sample,row,mu,sigma\n"));
    assert_eq!(raw_text.lines().count(), 1 + 20 * 80);

    // Means only: a single column.
    let out = run(bde().args(["predict", "--model"]).arg(&model).arg("--data").arg(&data));
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).starts_with("mean\n"));
}

#[test]
fn training_is_reproducible_and_worker_independent() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_regression_csv(dir.path(), 60);
    let config = write_config(dir.path(), "max_workers = 1\n");
    let (out, model) = train(dir.path(), &config, &data);
    assert_eq!(code(&out), 0);
    let single = container::load_saved_model(&model).unwrap();

    let model2 = dir.path().join("model2.bde");
    let out = run(bde()
        .env("BDE_MAX_WORKERS", "2")
        .args(["train", "--config"])
        .arg(&config)
        .arg("--data")
        .arg(&data)
        .args(["--target", "y", "--out"])
        .arg(&model2));
    assert_eq!(code(&out), 0);
    let parallel = container::load_saved_model(&model2).unwrap();
    assert_eq!(single.ensemble.samples, parallel.ensemble.samples);
}

#[test]
fn bad_worker_env_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_regression_csv(dir.path(), 30);
    let config = write_config(dir.path(), "");
    let model = dir.path().join("m.bde");
    let out = run(bde()
        .env("BDE_MAX_WORKERS", "zero")
        .args(["train", "--config"])
        .arg(&config)
        .arg("--data")
        .arg(&data)
        .args(["--target", "y", "--out"])
        .arg(&model));
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("BDE_MAX_WORKERS"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_regression_csv(dir.path(), 30);

    assert_eq!(code(&run(bde().arg("--help"))), 0);
    assert_eq!(code(&run(bde().arg("--version"))), 0);
    assert_eq!(code(&run(bde().arg("frobnicate"))), 1);
    assert_eq!(code(&run(bde().args(["train", "--data", "x.csv"]))), 1);

    let unknown = write_config(dir.path(), "n_member = 3\n");
    let (out, _) = train(dir.path(), &unknown, &data);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_member"));

    let good = write_config(dir.path(), "");
    let bad_data = dir.path().join("bad.csv");
    std::fs::write(&bad_data, "x1,x2,y\n1,2,3\n1,2,3\n1,2,3\n1,oops,3\n1,2,3\n").unwrap();
    let (out, _) = train(dir.path(), &good, &bad_data);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("row 4"));

    let (out, _) = train(dir.path(), &good, &dir.path().join("missing.csv"));
    assert_eq!(code(&out), 2);

    let (out, model) = train(dir.path(), &good, &data);
    assert_eq!(code(&out), 0);
    let mut bytes = std::fs::read(&model).unwrap();
    let n = bytes.len();
    bytes[n - 20] ^= 0x10;
    std::fs::write(&model, bytes).unwrap();
    let out = run(bde().args(["predict", "--model"]).arg(&model).arg("--data").arg(&data));
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("checksum"));
}

#[test]
fn sampler_blow_up_is_a_numeric_failure() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_regression_csv(dir.path(), 40);
    let config = write_config(dir.path(), "step_size = 1e6\ndecoherence_length = 1.0\n");
    let (out, _) = train(dir.path(), &config, &data);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn classification_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::from("a,b,label\n");
    for i in 0..60 {
        let a = (i as f64 * 0.7).sin();
        let b = (i as f64 * 0.3).cos();
        let label = if a + b > 0.0 { "pos" } else { "neg" };
        writeln!(text, "{a},{b},{label}").unwrap();
    }
    let data = dir.path().join("cls.csv");
    std::fs::write(&data, text).unwrap();
    let config = write_config(dir.path(), "");
    let model = dir.path().join("cls.bde");
    let out = run(bde()
        .args(["train", "--task", "classification", "--config"])
        .arg(&config)
        .arg("--data")
        .arg(&data)
        .args(["--target", "label", "--out"])
        .arg(&model));
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let out = run(bde().args(["predict", "--model"]).arg(&model).arg("--data").arg(&data));
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    let first_label = if (0.0f64).sin() + 1.0 > 0.0 { "pos" } else { "neg" };
    let other = if first_label == "pos" { "neg" } else { "pos" };
    assert!(text.starts_with(&format!("class,p_{first_label},p_{other}\n")), "{text}");
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 60);
    for r in rows {
        let f: Vec<&str> = r.split(',').collect();
        let p: f64 = f[1].parse::<f64>().unwrap() + f[2].parse::<f64>().unwrap();
        assert!((p - 1.0).abs() < 1e-5);
    }
}

#[test]
fn benchmark_output_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out_dir in [&a, &b] {
        let out = run(bde()
            .args(["benchmark", "--suite", "smoke", "--seed", "11", "--out"])
            .arg(out_dir));
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    let ma = std::fs::read(a.join("metrics.csv")).unwrap();
    assert_eq!(ma, std::fs::read(b.join("metrics.csv")).unwrap());
    let text = String::from_utf8(ma).unwrap();
    assert!(text.starts_with("suite,method,seed,n_train,n_test,rmse,nll_distributional,nll_mean,coverage_80\n"));
    assert_eq!(text.lines().count(), 1 + 3 * 2);
    assert!(a.join("config.toml").exists());
}
