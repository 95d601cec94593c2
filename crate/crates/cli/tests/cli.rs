use std::path::Path;
use std::process::{Command, Output};

use nestmc::{problem1_truth, Problem1Spec};
use nestmc_cli::commands::RunArgs;
use nestmc_cli::config::Settings;
use proptest::prelude::*;
use serde_json::Value;

fn nestmc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nestmc"))
        .args(args)
        .env_remove("NESTMC_SEED")
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("JSON on stdout")
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut reader = csv::Reader::from_path(path).unwrap();
    let header = reader.headers().unwrap().iter().map(String::from).collect();
    let rows = reader
        .records()
        .map(|r| r.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

#[test]
fn estimate_prints_one_record() {
    let out = nestmc(&[
        "estimate",
        "--problem",
        "p1",
        "--M",
        "7",
        "--p",
        "0.7",
        "--method",
        "sparse_grid",
        "--m",
        "10",
        "--seed",
        "1",
    ]);
    let v = stdout_json(&out);
    assert_eq!(v["N"], 1024);
    assert_eq!(v["samples_used"], 1024);
    assert_eq!(v["m"], 10);
    assert_eq!(v["method"], "sparse_grid");
    assert_eq!(v["seed"], 1);
    assert_eq!(v["f_evals"], 2047 + 2046);
    assert!(v["estimate"].as_f64().unwrap().is_finite());
}

#[test]
fn estimate_uninformative_signal_is_centred() {
    let estimates: Vec<f64> = (1..=20)
        .map(|seed| {
            let out = nestmc(&[
                "estimate",
                "--problem",
                "p1",
                "--M",
                "1",
                "--p",
                "0.5",
                "--method",
                "sparse_grid",
                "--m",
                "14",
                "--seed",
                &seed.to_string(),
            ]);
            stdout_json(&out)["estimate"].as_f64().unwrap()
        })
        .collect();
    let n = estimates.len() as f64;
    let mean = estimates.iter().sum::<f64>() / n;
    let var = estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0);
    assert!(
        (mean - 0.5).abs() <= 3.0 * (var / n).sqrt(),
        "{estimates:?}"
    );
}

#[test]
fn estimate_nested_mc_and_simple() {
    let v = stdout_json(&nestmc(&[
        "estimate",
        "--method",
        "nested_mc",
        "--outer",
        "50",
        "--inner",
        "exact",
        "--seed",
        "3",
    ]));
    assert_eq!(v["N"], 50);
    assert_eq!(v["m"], Value::Null);
    let v = stdout_json(&nestmc(&["estimate", "--method", "simple", "--m", "6"]));
    assert_eq!(v["f_evals"], 8);
    assert_eq!(v["seed"], 0);
}

#[test]
fn seed_from_environment() {
    let out = Command::new(env!("CARGO_BIN_EXE_nestmc"))
        .args(["estimate", "--m", "4"])
        .env("NESTMC_SEED", "17")
        .output()
        .unwrap();
    assert_eq!(stdout_json(&out)["seed"], 17);
}

#[test]
fn negative_depth_is_a_config_error() {
    let out = nestmc(&["estimate", "--m", "-1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("m must be a nonnegative integer"));
}

#[test]
fn config_file_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"problem": "p1", "colour": "red"}"#).unwrap();
    let out = nestmc(&["estimate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));

    let out = nestmc(&[
        "estimate",
        "--config",
        dir.path().join("missing.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let out = nestmc(&["estimate", "--problem", "p3"]);
    assert_eq!(out.status.code(), Some(2));
    let out = nestmc(&["estimate", "--M", "2", "--p", "1.5"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bench_writes_schemas() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let out = nestmc(&[
        "bench",
        "--problem",
        "p1",
        "--M",
        "7",
        "--p",
        "0.7",
        "--methods",
        "sparse_grid,simple",
        "--m-values",
        "8..14",
        "--r",
        "100",
        "--seed",
        "1",
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let (header, rows) = read_csv(&out_dir.join("summary.csv"));
    assert_eq!(
        header,
        [
            "problem",
            "scenario",
            "method",
            "m",
            "N",
            "mse",
            "mse_stderr",
            "truth_or_ref",
            "ref_stderr",
            "slope"
        ]
    );
    assert_eq!(rows.len(), 14);
    for row in &rows {
        assert_eq!(row[0], "p1");
        assert_eq!(row[1], "M=7,p=0.7");
        let m: u32 = row[3].parse().unwrap();
        assert_eq!(row[4], (1u64 << m).to_string());
        let mse: f64 = row[5].parse().unwrap();
        assert!(mse > 0.0);
        let truth: f64 = row[7].parse().unwrap();
        assert_eq!(
            truth,
            problem1_truth(Problem1Spec { signals: 7, p: 0.7 }).unwrap()
        );
        assert_eq!(row[8].parse::<f64>().unwrap(), 0.0);
        assert!(row[9].parse::<f64>().unwrap() < 0.0);
    }

    let (header, rows) = read_csv(&out_dir.join("estimates.csv"));
    assert_eq!(
        header,
        [
            "problem",
            "scenario",
            "method",
            "m",
            "N",
            "replication",
            "estimate",
            "seed_path"
        ]
    );
    assert_eq!(rows.len(), 1400);
    assert!(rows.iter().all(|r| r[7].split(':').count() == 2));

    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap())
            .unwrap();
    assert_eq!(report["config"]["r"], 100);
    assert_eq!(report["report"]["cells"].as_array().unwrap().len(), 14);
}

#[test]
fn bench_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, threads: &str| {
        let out_dir = dir.path().join(name);
        let out = nestmc(&[
            "bench",
            "--M",
            "3",
            "--p",
            "0.8",
            "--methods",
            "sparse_grid,simple,nested_mc",
            "--m-values",
            "4,7",
            "--r",
            "10",
            "--seed",
            "5",
            "--threads",
            threads,
            "--out-dir",
            out_dir.to_str().unwrap(),
        ]);
        assert!(out.status.success());
        out_dir
    };
    let a = run("a", "1");
    let b = run("b", "3");
    for file in ["estimates.csv", "summary.csv"] {
        assert_eq!(
            std::fs::read(a.join(file)).unwrap(),
            std::fs::read(b.join(file)).unwrap(),
            "{file}"
        );
    }
}

#[test]
fn bench_problem2_reports_reference_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let out = nestmc(&[
        "bench",
        "--problem",
        "p2",
        "--scenario",
        "EvSvGvA",
        "--n",
        "500",
        "--methods",
        "sparse_grid",
        "--m-values",
        "6",
        "--r",
        "4",
        "--ref-outer",
        "3000",
        "--ref-inner",
        "50",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let (_, rows) = read_csv(&dir.path().join("summary.csv"));
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][1], "EvSvGvA,n=500");
    let ref_stderr: f64 = rows[0][8].parse().unwrap();
    assert!(ref_stderr.is_finite() && ref_stderr > 0.0);
    // a single budget has no slope
    assert_eq!(rows[0][9], "");
}

#[test]
fn bench_unwritable_output_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "").unwrap();
    let out = nestmc(&[
        "bench",
        "--m-values",
        "3",
        "--r",
        "2",
        "--out-dir",
        blocker.join("sub").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn diagnose_rows_satisfy_bounds() {
    let dir = tempfile::tempdir().unwrap();
    for (problem, k) in [("p1", 7usize), ("p2", 3)] {
        let path = dir.path().join(format!("{problem}.csv"));
        let out = nestmc(&[
            "diagnose",
            "--problem",
            problem,
            "--m",
            "9",
            "--seed",
            "2",
            "--output",
            path.to_str().unwrap(),
        ]);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        let (header, rows) = read_csv(&path);
        assert_eq!(
            header,
            ["d", "k", "W_dk", "lemma_lhs", "lemma_rhs", "satisfied"]
        );
        assert_eq!(rows.len(), 10 * k);
        for row in &rows {
            assert_eq!(row[5], "true");
            let d: u32 = row[0].parse().unwrap();
            let lhs: f64 = row[3].parse().unwrap();
            let rhs: f64 = row[4].parse().unwrap();
            if d == 0 {
                assert_eq!(rhs, 2.0 * k as f64);
            }
            if d == 9 {
                assert_eq!(lhs, 0.0);
            }
        }
    }
    let out = nestmc(&["diagnose", "--m", "3"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("d,k,W_dk"));
}

#[test]
fn plot_renders_and_rejects_empty_input() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("summary.csv");
    let svg = dir.path().join("out.svg");

    std::fs::write(
        &csv,
        "problem,scenario,method,m,N,mse,mse_stderr,truth_or_ref,ref_stderr,slope\n",
    )
    .unwrap();
    let out = nestmc(&["plot", csv.to_str().unwrap(), svg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    let out = nestmc(&[
        "plot",
        dir.path().join("nope.csv").to_str().unwrap(),
        svg.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));

    let mut text = String::from("method,N,mse\n");
    for method in ["sparse_grid", "simple"] {
        for e in 8..15 {
            text.push_str(&format!(
                "{method},{},{}\n",
                1u64 << e,
                3.0 / (1u64 << e) as f64
            ));
        }
    }
    std::fs::write(&csv, text).unwrap();
    let out = nestmc(&["plot", csv.to_str().unwrap(), svg.to_str().unwrap()]);
    assert!(out.status.success());
    let body = std::fs::read_to_string(&svg).unwrap();
    assert!(body.contains("<svg") && body.contains("version=\"1.1\""));
    assert_eq!(body.matches("<polyline").count(), 2);
    assert_eq!(body.matches("slope \u{2212}1.00").count(), 2);
}

#[derive(Debug, Clone)]
struct Layer {
    signals: Option<u32>,
    p: Option<f64>,
    m: Option<i64>,
    r: Option<i64>,
    seed: Option<u64>,
}

fn layer() -> impl Strategy<Value = Layer> {
    (
        proptest::option::of(1u32..10),
        proptest::option::of(0.5f64..1.0),
        proptest::option::of(0i64..20),
        proptest::option::of(1i64..500),
        proptest::option::of(any::<u64>()),
    )
        .prop_map(|(signals, p, m, r, seed)| Layer {
            signals,
            p,
            m,
            r,
            seed,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn flags_override_file_override_defaults(file in layer(), flags in layer()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        let on_disk = Settings {
            signals: file.signals,
            p: file.p,
            m: file.m,
            r: file.r,
            seed: file.seed,
            ..Settings::default()
        };
        std::fs::write(&path, serde_json::to_string(&on_disk).unwrap()).unwrap();
        let args = RunArgs {
            config: Some(path),
            signals: flags.signals,
            p: flags.p,
            m: flags.m,
            r: flags.r,
            seed: flags.seed,
            ..RunArgs::default()
        };
        let s = args.settings().unwrap();
        let exp = s.experiment().unwrap();
        let nestmc::ProblemSpec::P1(spec) = exp.problem else { panic!("p1 expected") };
        prop_assert_eq!(spec.signals, flags.signals.or(file.signals).unwrap_or(7));
        prop_assert_eq!(spec.p, flags.p.or(file.p).unwrap_or(0.7));
        prop_assert_eq!(s.depth().unwrap() as i64, flags.m.or(file.m).unwrap_or(10));
        prop_assert_eq!(exp.r as i64, flags.r.or(file.r).unwrap_or(100));
        if std::env::var("NESTMC_SEED").is_err() {
            prop_assert_eq!(exp.master_seed, flags.seed.or(file.seed).unwrap_or(0));
        }
    }
}
