mod common;

use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_privknock"))
}

fn write_data(dir: &Path, n: usize, p: usize) -> (PathBuf, PathBuf) {
    let mut r = common::rng(42);
    let x = common::factor_design(&mut r, n, p, 0.1);
    let noise = common::gaussian_vector(&mut r, n);
    let mut xs = String::new();
    let mut ys = String::new();
    for i in 0..n {
        let row: Vec<String> = (0..p).map(|j| x[(i, j)].to_string()).collect();
        xs.push_str(&row.join(","));
        xs.push('\n');
        let y: f64 = (0..6).map(|j| 6.0 * x[(i, j)]).sum::<f64>() + noise[i];
        ys.push_str(&format!("{y}\n"));
    }
    let (xp, yp) = (dir.join("x.csv"), dir.join("y.csv"));
    std::fs::write(&xp, xs).unwrap();
    std::fs::write(&yp, ys).unwrap();
    (xp, yp)
}

fn json(out: std::process::Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn calibrate_prints_every_field() {
    let dir = tempfile::tempdir().unwrap();
    let (x, y) = write_data(dir.path(), 2000, 10);
    let v = json(
        bin()
            .args(["calibrate", "--x"])
            .arg(&x)
            .arg("--y")
            .arg(&y)
            .args(["--beta-norm-bound", "10", "--sigma2-bound", "1", "--delta2", "0.05"])
            .output()
            .unwrap(),
    );
    for key in [
        "eta2", "zeta", "gamma", "lambda_min_sens", "gram_frob_sens", "delta2_floor", "method1_sensitivity",
        "method2_sensitivity", "theta1_scale", "kappa1_sq", "kappa2_sq_or_kappa_sq", "total_eps", "total_delta",
        "lambda_min", "lambda_max", "s", "lemma_lambda_max_g", "lemma_lambda_min_g",
    ] {
        assert!(v.get(key).is_some_and(|x| !x.is_null()), "missing {key}: {v}");
    }
    assert_eq!(v["s"], v["lambda_min"]);
    assert!((v["total_eps"].as_f64().unwrap() - 0.2).abs() < 1e-12);
    assert!((v["total_delta"].as_f64().unwrap() - 0.07).abs() < 1e-12);
}

#[test]
fn run_nonprivate_and_private() {
    let dir = tempfile::tempdir().unwrap();
    let (x, y) = write_data(dir.path(), 2000, 10);
    let v = json(bin().arg("run").arg("--x").arg(&x).arg("--y").arg(&y).output().unwrap());
    let selected: Vec<u64> = v["selected"].as_array().unwrap().iter().map(|s| s.as_u64().unwrap()).collect();
    assert!([0, 1, 2, 3, 4, 5].iter().all(|j| selected.contains(j)), "{v}");
    assert_eq!(v["statistics"].as_array().unwrap().len(), 10);
    assert!(v["total_privacy"].is_null());

    for method in ["1", "2"] {
        let v = json(
            bin()
                .args(["run", "--method", method, "--stat", "lcd", "--seed", "3", "--x"])
                .arg(&x)
                .arg("--y")
                .arg(&y)
                .args(["--beta-norm-bound", "14.7", "--sigma2-bound", "1", "--delta2", "0.05"])
                .output()
                .unwrap(),
        );
        assert!(v["noise_scales"].is_object());
        assert!(v["total_privacy"]["eps"].as_f64().unwrap() > 0.0);
    }
}

#[test]
fn run_reports_errors() {
    let dir = tempfile::tempdir().unwrap();
    let (x, y) = write_data(dir.path(), 2000, 10);
    let out = bin().args(["run", "--method", "2", "--x"]).arg(&x).arg("--y").arg(&y).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("beta-norm-bound"));
    let out = bin().args(["run", "--method", "7", "--x"]).arg(&x).arg("--y").arg(&y).output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn simulate_writes_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sim.toml");
    std::fs::write(
        &cfg,
        "n_grid = [400, 200]\np = 10\nk = 3\namplitude = 3.5\nsigma2 = 1.0\nq = 0.2\ntrials = 6\n\
         method = \"none\"\nstat = \"csm\"\ndelta_rule = \"2p/n\"\n",
    )
    .unwrap();
    let out = dir.path().join("out.csv");
    let plot = dir.path().join("plot.csv");
    json(
        bin()
            .args(["simulate", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .args(["--seed", "5", "--threads", "2", "--emit-plot-data"])
            .arg(&plot)
            .output()
            .unwrap(),
    );
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "n,method,stat,trials,fdr_hat,fdr_se,power_hat,power_se,eps_total,delta_total,failures");
    assert!(lines[1].starts_with("200,none,csm,6,"));
    let plot_text = std::fs::read_to_string(&plot).unwrap();
    assert!(plot_text.starts_with("n,log10_n,"));
    assert!(plot_text.lines().nth(2).unwrap().starts_with("400,2.60206,"));
}
