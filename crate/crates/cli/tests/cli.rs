use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn nlcov(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nlcov")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Value {
    let out = nlcov(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn read_json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn fixture(dir: &Path, name: &str) -> PathBuf {
    let out = dir.join(format!("gen-{name}"));
    ok(&["gen-trace", "--fixture", name, "--out", s(&out)]);
    out.join("trace")
}

const NET: &str = r#"{"input_dim":4,"layer_widths":[8,6,3],"activation":["tanh","relu","identity"],"weight_seed":2}"#;
const DATASET: &str = r#"{"n":60,"dim":4,"generator":{"kind":"gaussian_blobs","k":2,"spread":0.1},"range":[-1.0,1.0],"seed":5}"#;

fn specs(dir: &Path) -> (PathBuf, PathBuf) {
    let net = dir.join("net.json");
    let data = dir.join("dataset.json");
    fs::write(&net, NET).unwrap();
    fs::write(&data, DATASET).unwrap();
    (net, data)
}

#[test]
fn compute_worked_example() {
    let tmp = tempfile::tempdir().unwrap();
    let trace = fixture(tmp.path(), "worked-example");
    let out = tmp.path().join("c");
    let printed = ok(&["compute", "--trace", s(&trace), "--criterion", "nlc", "--out", s(&out)]);
    assert_eq!(printed["value"], 62.5);
    assert_eq!(read_json(out.join("result.json"))["value"], 62.5);
    let csv = fs::read_to_string(out.join("result.csv")).unwrap();
    assert_eq!(csv, "criterion,layer,value,degenerate\nnlc,layer0,62.5,false\n");
}

#[test]
fn incremental_on_reversed_order() {
    let tmp = tempfile::tempdir().unwrap();
    let trace = fixture(tmp.path(), "reversed");
    let out = tmp.path().join("c");
    let printed = ok(&[
        "compute", "--trace", s(&trace), "--criterion", "nlc-inc", "--batch-size", "2", "--out", s(&out),
    ]);
    assert_eq!(printed["value"], 100.0);
    let forward = fixture(tmp.path(), "worked-example");
    let printed = ok(&[
        "compute", "--trace", s(&forward), "--criterion", "nlc-inc", "--batch-size", "2", "--out", s(&out),
    ]);
    assert_eq!(printed["value"], 62.5);
}

#[test]
fn unknown_criterion_fails_with_json_error() {
    let tmp = tempfile::tempdir().unwrap();
    let trace = fixture(tmp.path(), "worked-example");
    let out = nlcov(&["compute", "--trace", s(&trace), "--criterion", "nlcx", "--out", s(&tmp.path().join("c"))]);
    assert!(!out.status.success());
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "unknown_criterion");
    for name in ["nlc", "kmnc", "tknc"] {
        assert!(err["message"].as_str().unwrap().contains(name));
    }
}

#[test]
fn usage_errors_are_json_too() {
    let out = nlcov(&["compute", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "usage");

    let out = nlcov(&["compute", "--criterion", "nlc"]);
    assert!(!out.status.success());
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert!(err["message"].as_str().unwrap().contains("--trace"));
}

#[test]
fn axioms_witness_replays() {
    let tmp = tempfile::tempdir().unwrap();
    let trace = fixture(tmp.path(), "dominance");
    let out = tmp.path().join("a");
    let printed = ok(&["axioms", "--trace", s(&trace), "--criterion", "nlc", "--trials", "100", "--out", s(&out)]);
    assert!(printed["monotone_violations"].as_u64().unwrap() >= 1);
    let witness = out.join("witness.json");
    assert!(witness.exists());
    let replay = ok(&[
        "axioms", "--trace", s(&trace), "--criterion", "nlc", "--replay", s(&witness), "--out", s(&tmp.path().join("r")),
    ]);
    assert_eq!(replay["reproduced"], true);

    let nc = tmp.path().join("nc");
    let printed = ok(&["axioms", "--trace", s(&trace), "--criterion", "nc", "--trials", "100", "--out", s(&nc)]);
    assert_eq!(printed["monotone_violations"], 0);
    assert!(!nc.join("witness.json").exists());
    let csv = fs::read_to_string(nc.join("axioms.csv")).unwrap();
    assert!(csv.starts_with("criterion,monotone_trials,monotone_violations,"));
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let trace = fixture(tmp.path(), "dominance");
    let runs: Vec<(&str, Vec<&str>, Vec<&str>)> = vec![
        ("shuffle-study", vec!["--criterion", "nlc-inc"], vec!["stability.json", "stability.csv"]),
        (
            "axioms",
            vec!["--criterion", "nlc", "--trials", "50"],
            vec!["axioms.json", "axioms.csv", "witness.json"],
        ),
        ("layer-report", vec!["--criterion", "nlc"], vec!["layer_report.json", "layer_report.csv"]),
    ];
    for (cmd, extra, files) in runs {
        let dirs: Vec<PathBuf> = (0..2).map(|i| tmp.path().join(format!("{cmd}-{i}"))).collect();
        for d in &dirs {
            let mut args = vec![cmd, "--trace", s(&trace), "--seed", "9", "--out", s(d)];
            args.extend(&extra);
            ok(&args);
        }
        for f in files {
            assert_eq!(fs::read(dirs[0].join(f)).unwrap(), fs::read(dirs[1].join(f)).unwrap(), "{cmd}/{f}");
        }
    }
}

#[test]
fn shuffle_study_table_layout() {
    let tmp = tempfile::tempdir().unwrap();
    let trace = fixture(tmp.path(), "dominance");
    let out = tmp.path().join("s");
    ok(&["shuffle-study", "--trace", s(&trace), "--criterion", "nlc-inc", "--out", s(&out)]);
    let csv = fs::read_to_string(out.join("stability.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "criterion,shuffled,std,sem,relative_sem,max_pct_drop");
    assert_eq!(lines[1], "nlc-inc,false,0,0,0,0");
    let study = read_json(out.join("stability.json"));
    assert_eq!(study["shuffled"]["runs"], 20);
    assert!(study["shuffled"]["std"].as_f64().unwrap() > 0.0);
}

#[test]
fn run_json_echoes_defaults_and_config_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let trace = fixture(tmp.path(), "reversed");
    let config = tmp.path().join("cfg.json");
    fs::write(&config, r#"{"batch_size": 2, "criterion": "nlc-inc"}"#).unwrap();
    let out = tmp.path().join("c");
    let printed = ok(&[
        "compute", "--trace", s(&trace), "--criterion", "nlc", "--config", s(&config), "--out", s(&out),
    ]);
    assert_eq!(printed["criterion"], "nlc-inc");
    assert_eq!(printed["value"], 100.0);
    let run = read_json(out.join("run.json"));
    assert_eq!(run["command"], "compute");
    let cfg = &run["config"];
    assert_eq!(cfg["batch_size"], 2);
    assert_eq!(cfg["nc_threshold"], 0.75);
    assert_eq!(cfg["kmnc_sections"], 100);
    assert_eq!(cfg["tknc_k"], 1);
    assert_eq!(cfg["seed"], 0);
    assert!(cfg["ridge"].is_null());

    fs::write(&config, r#"{"batch_sise": 2}"#).unwrap();
    let bad = nlcov(&["compute", "--trace", s(&trace), "--criterion", "nlc", "--config", s(&config), "--out", s(&out)]);
    assert!(!bad.status.success());
    let err: Value = serde_json::from_slice(&bad.stderr).unwrap();
    assert_eq!(err["error"], "config");
}

#[test]
fn layer_report_svg_structure() {
    let tmp = tempfile::tempdir().unwrap();
    let trace = fixture(tmp.path(), "collision");
    let out = tmp.path().join("l");
    let printed = ok(&["layer-report", "--trace", s(&trace), "--out", s(&out), "--criterion", "nlc"]);
    assert_eq!(printed["shares"][0][1], 50.0);
    let svg = fs::read_to_string(out.join("layer_report.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    assert_eq!(svg.matches(r#"class="bar""#).count(), 2);
    assert!(svg.contains("50.00%"));
}

#[test]
fn format_flag_limits_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let trace = fixture(tmp.path(), "collision");
    let out = tmp.path().join("l");
    ok(&["layer-report", "--trace", s(&trace), "--criterion", "nlc", "--format", "csv", "--out", s(&out)]);
    assert!(out.join("layer_report.csv").exists());
    assert!(!out.join("layer_report.svg").exists());
    assert!(!out.join("layer_report.json").exists());
    assert!(out.join("run.json").exists());
}

#[test]
fn profile_criteria_need_a_training_trace() {
    let tmp = tempfile::tempdir().unwrap();
    let trace = fixture(tmp.path(), "collision");
    let out = tmp.path().join("k");
    let err = nlcov(&["compute", "--trace", s(&trace), "--criterion", "kmnc", "--out", s(&out)]);
    assert!(!err.status.success());
    let printed = ok(&[
        "compute", "--trace", s(&trace), "--criterion", "nbc", "--profile", s(&trace), "--out", s(&out),
    ]);
    assert_eq!(printed["value"], 0.0);
}

#[test]
fn gen_trace_from_network_then_compute() {
    let tmp = tempfile::tempdir().unwrap();
    let (net, data) = specs(tmp.path());
    let out = tmp.path().join("g");
    let printed = ok(&[
        "gen-trace", "--net", s(&net), "--dataset", s(&data), "--layers", "dense_0,dense_2", "--out", s(&out),
    ]);
    assert_eq!(printed["num_inputs"], 60);
    assert_eq!(printed["layers"].as_array().unwrap().len(), 2);
    let value = ok(&["compute", "--trace", s(&out.join("trace")), "--criterion", "nlc", "--out", s(&tmp.path().join("c"))]);
    assert!(value["value"].as_f64().unwrap() > 0.0);
}

#[test]
fn make_suites_cardinalities() {
    let tmp = tempfile::tempdir().unwrap();
    let (net, data) = specs(tmp.path());
    let out = tmp.path().join("m");
    let printed = ok(&[
        "make-suites", "--dataset", s(&data), "--net", s(&net), "--base-count", "10", "--out", s(&out),
    ]);
    assert_eq!(printed["x1_size"], 60);
    assert_eq!(printed["x10_size"], 600);
    assert_eq!(fs::read_to_string(out.join("x10_inputs.csv")).unwrap().lines().count(), 601);
    let manifest = read_json(out.join("x10").join("manifest.json"));
    assert_eq!(manifest["num_inputs"], 600);
    let too_many = nlcov(&["make-suites", "--dataset", s(&data), "--base-count", "61", "--out", s(&tmp.path().join("x"))]);
    assert!(!too_many.status.success());
}

#[test]
fn diversity_study_and_simplified_clusters() {
    let tmp = tempfile::tempdir().unwrap();
    let (net, data) = specs(tmp.path());
    let out = tmp.path().join("d");
    ok(&[
        "diversity", "--net", s(&net), "--dataset", s(&data), "--k", "6", "--bins", "20", "--simplified", "--max-k", "8",
        "--out", s(&out),
    ]);
    let csv = fs::read_to_string(out.join("diversity.csv")).unwrap();
    let strategies: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(strategies, ["centroid_subset", "centroid_dummy", "single_cluster_dummy", "random_dummy"]);
    let clusters = read_json(out.join("cluster_diversity.json"));
    assert!(clusters["method"].as_str().unwrap().starts_with("simplified"));
    let k = clusters["chosen_k"].as_u64().unwrap();
    assert!((2..=8).contains(&k));

    let trace = fixture(tmp.path(), "collision");
    let sub = tmp.path().join("sub");
    ok(&["diversity", "--trace", s(&trace), "--layer", "all", "--k", "4", "--out", s(&sub)]);
    assert!(read_json(sub.join("diversity.json"))["rows"].as_array().unwrap().len() == 3);
}
