mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const FAST: [&str; 10] = ["--chains", "2", "--warmup", "100", "--iterations", "100", "--thin", "2", "--temperatures", "3"];

fn lossdev(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lossdev")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn simulated(dir: &Path, seed: &str) -> PathBuf {
    let out = dir.join(format!("sim{seed}"));
    let o = lossdev(&["simulate", "--seed", seed, "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    out.join("triangle.csv")
}

fn data_lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().filter(|l| !l.starts_with('#')).map(String::from).collect()
}

#[test]
fn fit_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let tri = simulated(dir.path(), "5");
    let run = |out: &str| {
        let out = dir.path().join(out);
        let mut args = vec!["fit", "--triangle", s(&tri), "--variant", "hmm", "--seed", "7", "--test-mode", "lower-diagonal"];
        args.extend(FAST);
        args.extend(["--out", s(&out)]);
        let o = lossdev(&args);
        assert!(matches!(code(&o), 0 | 3), "{}", stderr(&o));
        out
    };
    let (a, b) = (run("a"), run("b"));
    for f in ["draws.csv", "diagnostics.json", "states.csv", "predictions.csv", "quantiles.csv"] {
        let (x, y) = (fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
        assert!(!x.is_empty());
        assert!(x == y, "{f} differs between reruns");
    }
    let draws = data_lines(&a.join("draws.csv"));
    assert!(draws[0].starts_with("chain,iteration,alpha[1]"));
    assert_eq!(draws.len(), 1 + 2 * 100);
    let preds = data_lines(&a.join("predictions.csv"));
    assert_eq!(preds[0], "i,j,draw,y_hat,state,log_density");
    // 45 held-out cells of a 10 x 10 triangle, one row per draw.
    assert_eq!(preds.len(), 1 + 45 * 200);
    assert!(preds[1..].iter().all(|l| !l.ends_with(',')), "every held-out cell is scored");
    let header = fs::read_to_string(a.join("draws.csv")).unwrap();
    assert!(header.starts_with("# run: {") && header.contains("\"seed\":7"));
}

#[test]
fn different_seeds_give_different_draws() {
    let dir = tempfile::tempdir().unwrap();
    let tri = simulated(dir.path(), "5");
    let run = |seed: &str| {
        let out = dir.path().join(seed);
        let mut args = vec!["fit", "--triangle", s(&tri), "--seed", seed];
        args.extend(FAST);
        args.extend(["--out", s(&out)]);
        lossdev(&args);
        data_lines(&out.join("draws.csv"))
    };
    assert_ne!(run("1"), run("2"));
}

#[test]
fn tau_is_rejected_for_hidden_markov_variants() {
    let dir = tempfile::tempdir().unwrap();
    let tri = simulated(dir.path(), "1");
    let o = lossdev(&["fit", "--triangle", s(&tri), "--variant", "hmm", "--tau", "6", "--out", s(dir.path())]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--tau"), "{}", stderr(&o));
    assert!(!dir.path().join("draws.csv").exists());
}

#[test]
fn two_step_baseline_fits_with_fixed_switch() {
    let dir = tempfile::tempdir().unwrap();
    let tri = simulated(dir.path(), "2");
    let out = dir.path().join("fit");
    let mut args = vec!["fit", "--triangle", s(&tri), "--variant", "twostep", "--tau", "6", "--rho", "6,10"];
    args.extend(FAST);
    args.extend(["--test-mode", "lower-diagonal", "--out", s(&out)]);
    let o = lossdev(&args);
    assert!(matches!(code(&o), 0 | 3), "{}", stderr(&o));
    let draws = data_lines(&out.join("draws.csv"));
    assert!(draws[0].contains("tail_gamma1"), "{}", draws[0]);
    for line in &data_lines(&out.join("states.csv"))[1..] {
        let f: Vec<&str> = line.split(',').collect();
        let j: usize = f[1].parse().unwrap();
        let expected = if j > 6 { "tail" } else { "body" };
        assert_eq!(f[4], expected, "{line}");
    }
    let o = lossdev(&["fit", "--triangle", s(&tri), "--variant", "twostep", "--tau", "6", "--out", s(&out)]);
    assert_eq!(code(&o), 1, "missing --rho");
    let o = lossdev(&["fit", "--triangle", s(&tri), "--variant", "twostep", "--tau", "12", "--rho", "6,10"]);
    assert_eq!(code(&o), 1, "tau beyond the triangle");
}

#[test]
fn simulate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = simulated(dir.path(), "3");
    let b_dir = dir.path().join("again");
    assert_eq!(code(&lossdev(&["simulate", "--seed", "3", "--out", s(&b_dir)])), 0);
    for f in ["triangle.csv", "states.csv", "theta.json"] {
        assert_eq!(fs::read(a.parent().unwrap().join(f)).unwrap(), fs::read(b_dir.join(f)).unwrap(), "{f}");
    }
    let states = data_lines(&b_dir.join("states.csv"));
    assert_eq!(states.len(), 1 + 100);
    let theta: serde_json::Value = serde_json::from_str(&fs::read_to_string(b_dir.join("theta.json")).unwrap()).unwrap();
    assert_eq!(theta["run"]["args"]["seed"], 3);
    assert!(theta["parameters"]["pi"].as_f64().unwrap() > 0.0);
}

#[test]
fn sbc_validates_and_writes_ranks() {
    let dir = tempfile::tempdir().unwrap();
    let o = lossdev(&["sbc", "--replications", "0", "--out", s(dir.path())]);
    assert_eq!(code(&o), 1);
    let o = lossdev(&["sbc", "--iterations", "1001", "--out", s(dir.path())]);
    assert_eq!(code(&o), 1, "thin must divide the draws");

    let o = lossdev(&[
        "sbc", "--replications", "3", "--n", "4", "--m", "4", "--chains", "2", "--warmup", "100", "--iterations", "100",
        "--sampler-thin", "2", "--thin", "10", "--temperatures", "3", "--seed", "9", "--out", s(dir.path()),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ranks = data_lines(&dir.path().join("ranks.csv"));
    assert_eq!(ranks[0], "replication,quantity,rank,converged");
    // alpha[1..3], omega, beta, gamma1, gamma2, pi, log likelihood, ultimate loss.
    assert_eq!(ranks.len(), 1 + 3 * 10);
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(dir.path().join("ranks.csv")).unwrap();
    for record in rdr.records() {
        let f = record.unwrap();
        if &f[3] == "true" {
            assert!(f[2].parse::<usize>().unwrap() <= 20, "max rank is 2 * 100 / 10");
        } else {
            assert!(f[2].is_empty());
        }
    }
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("sbc_report.json")).unwrap()).unwrap();
    assert_eq!(report["report"]["max_rank"], 20);
    assert_eq!(report["uniformity"].as_array().unwrap().len(), 10);
}

#[test]
fn evaluate_requires_test_cells_and_two_models() {
    let dir = tempfile::tempdir().unwrap();
    let upper = dir.path().join("upper.csv");
    let rows: Vec<Vec<f64>> = (0..4).map(|i| (0..4 - i).map(|j| 10.0 + j as f64).collect()).collect();
    common::write_long(&upper, &rows);
    let o = lossdev(&["evaluate", "--triangle", s(&upper), "--variant", "hmm", "--variant", "hmm-nu", "--out", s(dir.path())]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("no held-out cells"), "{}", stderr(&o));
    assert!(!dir.path().join("score_report.json").exists(), "no partial report");
    let o = lossdev(&["evaluate", "--triangle", s(&upper), "--variant", "hmm", "--out", s(dir.path())]);
    assert_eq!(code(&o), 1);
}

#[test]
fn evaluate_compares_models_on_shared_cells() {
    let dir = tempfile::tempdir().unwrap();
    let t1 = simulated(dir.path(), "11");
    let t2 = simulated(dir.path(), "12");
    let out = dir.path().join("eval");
    let mut args = vec![
        "evaluate", "--triangle", s(&t1), "--triangle", s(&t2), "--variant", "hmm", "--variant", "twostep", "--tau", "6",
        "--rho", "6,10",
    ];
    args.extend(FAST);
    args.extend(["--out", s(&out)]);
    let o = lossdev(&args);
    assert!(matches!(code(&o), 0 | 3), "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("score_report.json")).unwrap()).unwrap();
    let r = &report["report"];
    assert_eq!(r["triangles"].as_array().unwrap().len(), 4);
    assert_eq!(r["pairs"].as_array().unwrap().len(), 2);
    let c = &r["combined"][0]["elpd"];
    let (mean, se) = (c["mean_diff"].as_f64().unwrap(), c["mean_se"].as_f64().unwrap());
    assert!((c["interval"][0].as_f64().unwrap() - (mean - 2.0 * se)).abs() < 1e-9);
    assert_eq!(report["fits"].as_array().unwrap().len(), 4);
    let pit = data_lines(&out.join("pit.csv"));
    assert_eq!(pit.len(), 1 + 4 * 45);
}

#[test]
fn load_errors_name_the_cell() {
    let dir = tempfile::tempdir().unwrap();
    let zero = dir.path().join("zero.csv");
    common::write_long(&zero, &[vec![100.0, 0.0], vec![120.0]]);
    let o = lossdev(&["fit", "--triangle", s(&zero)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("(1, 2)"), "{}", stderr(&o));

    let gap = dir.path().join("gap.csv");
    fs::write(&gap, "experience_period,development_period,cumulative_loss\n1,1,100\n1,3,150\n2,1,120\n").unwrap();
    let o = lossdev(&["fit", "--triangle", s(&gap)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("gap at cell (1, 2)"), "{}", stderr(&o));

    let o = lossdev(&["fit", "--triangle", s(&dir.path().join("missing.csv"))]);
    assert_eq!(code(&o), 1);
}

#[test]
fn unconverged_fit_writes_outputs_and_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let tri = simulated(dir.path(), "4");
    let out = dir.path().join("fit");
    let o = lossdev(&[
        "fit", "--triangle", s(&tri), "--chains", "2", "--warmup", "20", "--iterations", "10", "--thin", "1", "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    let diag: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("diagnostics.json")).unwrap()).unwrap();
    assert_eq!(diag["converged"], false);
    assert!(out.join("draws.csv").exists());
}

#[test]
fn custom_priors_are_recorded_and_validated() {
    let dir = tempfile::tempdir().unwrap();
    let priors = dir.path().join("priors.json");
    fs::write(&priors, r#"{"gamma1_loc": -3.0, "gamma1_scale": 0.25}"#).unwrap();
    let o = lossdev(&["simulate", "--priors", s(&priors), "--out", s(dir.path())]);
    assert_eq!(code(&o), 0);
    let theta = fs::read_to_string(dir.path().join("theta.json")).unwrap();
    assert!(theta.contains("\"gamma1_scale\": 0.25"));
    fs::write(&priors, r#"{"gamma1_scale": -1.0}"#).unwrap();
    assert_eq!(code(&lossdev(&["simulate", "--priors", s(&priors), "--out", s(dir.path())])), 1);
    fs::write(&priors, r#"{"unknown_key": 1.0}"#).unwrap();
    assert_eq!(code(&lossdev(&["simulate", "--priors", s(&priors), "--out", s(dir.path())])), 1);
}

#[test]
fn convert_and_link_ratios() {
    let dir = tempfile::tempdir().unwrap();
    let wide = dir.path().join("wide.csv");
    fs::write(&wide, "d1,d2,d3\n100,150,165\n120,180,\n130,,\n").unwrap();
    let long = dir.path().join("long.csv");
    assert_eq!(code(&lossdev(&["convert", "--input", s(&wide), "--output", s(&long)])), 0);
    let lines = data_lines(&long);
    assert_eq!(lines, ["experience_period,development_period,cumulative_loss", "1,1,100", "1,2,150", "1,3,165", "2,1,120", "2,2,180", "3,1,130"]);

    let o = lossdev(&["link-ratios", "--triangle", s(&long), "--group", "auto", "--out", s(dir.path())]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let lr = data_lines(&dir.path().join("link_ratios.csv"));
    assert_eq!(lr[0], "group,transition,mean,sd,count");
    assert_eq!(lr[1], "auto,1,1.5,0,2");
    assert_eq!(lr[2], "auto,2,1.1,0,1");
    let o = lossdev(&["link-ratios", "--triangle", s(&long), "--group", "a", "--group", "b"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn usage_errors_are_validation_errors() {
    assert_eq!(code(&lossdev(&["fit"])), 1);
    assert_eq!(code(&lossdev(&["fit", "--triangle", "x.csv", "--variant", "arima"])), 1);
    assert_eq!(code(&lossdev(&["--help"])), 0);
}
