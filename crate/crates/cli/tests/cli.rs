use std::fs;
use std::process::{Command, Output};

use serde_json::Value;

fn afdplan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_afdplan"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn json_of(args: &[&str]) -> Value {
    let out = afdplan(args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

const DSV3_H800: [&str; 6] = ["--model", "deepseek-v3", "--hardware", "h800", "--slo-ms", "50"];

#[test]
fn budget_prints_stage_budget() {
    let v = json_of(&[&["budget"][..], &DSV3_H800].concat());
    assert!((v["t_b_us"].as_f64().unwrap() - 402.2989).abs() < 1e-3);
    assert!((v["t_run_us"].as_f64().unwrap() - 85_000.0).abs() < 1e-6);
}

#[test]
fn unit_accept_rate_keeps_slo() {
    let v = json_of(&[&["budget"][..], &DSV3_H800, &["--l-accept", "1"]].concat());
    assert!((v["t_run_us"].as_f64().unwrap() - 50_000.0).abs() < 1e-6);
}

#[test]
fn budget_csv_format() {
    let out = afdplan(&[&["budget"][..], &DSV3_H800, &["--format", "csv"]].concat());
    assert_eq!(stdout(&out), "t_run_us,t_b_us,t_gap_us,n_overlap_layers,n_bo\n85000,402.299,15000,58,3\n");
}

#[test]
fn exit_codes() {
    let gap = afdplan(&[&["budget"][..], &DSV3_H800, &["--t-gap-ms", "100"]].concat());
    assert_eq!(gap.status.code(), Some(2));
    let unknown = afdplan(&["budget", "--model", "nope", "--hardware", "h800", "--slo-ms", "50"]);
    assert_eq!(unknown.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("nope"));
    assert_eq!(afdplan(&["budget", "--model", "deepseek-v3"]).status.code(), Some(1));
    assert_eq!(afdplan(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(afdplan(&["--help"]).status.code(), Some(0));
    let io = afdplan(&[&["intensity"][..], &DSV3_H800, &["--out", "/nonexistent/dir/x.csv"]].concat());
    assert_eq!(io.status.code(), Some(3));
    let range = afdplan(&[&["intensity"][..], &DSV3_H800, &["--nf-range", "9:3"]].concat());
    assert_eq!(range.status.code(), Some(1));
}

#[test]
fn config_files_are_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("model.json");
    fs::write(
        &model,
        r#"{"name":"tiny","hidden_size":4096,"num_layers":4,"num_dense_layers":0,
            "num_moe_layers":4,"num_routed_experts":64,"top_k":4,"moe_intermediate":1024}"#,
    )
    .unwrap();
    let scenario = dir.path().join("scenario.json");
    fs::write(&scenario, r#"{"slo_tpot":0.05,"l_accept":1.0,"t_gap":0.0}"#).unwrap();
    let v = json_of(&[
        "budget",
        "--model",
        model.to_str().unwrap(),
        "--hardware",
        "h800",
        "--scenario",
        scenario.to_str().unwrap(),
    ]);
    assert!((v["t_b_us"].as_f64().unwrap() - 50_000.0 / 12.0).abs() < 1e-6);

    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"name":"x","hidden_size":-1}"#).unwrap();
    let out = afdplan(&["budget", "--model", bad.to_str().unwrap(), "--hardware", "h800", "--slo-ms", "50"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn intensity_csv_schema_and_regimes() {
    let out = afdplan(&[&["intensity"][..], &DSV3_H800].concat());
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "nf,regime,rank_tokens,local_experts,tokens_per_expert,intensity_ub_norm,intensity_actual_norm"
    );
    let regimes: Vec<String> = lines.map(|l| l.split(',').nth(1).unwrap().to_string()).collect();
    assert_eq!(regimes.len(), 64);
    assert_eq!(regimes[1], "scaleup");
    assert_eq!(regimes[2], "stable");
    assert_eq!(regimes[7], "scaleout");
    assert_eq!(regimes[31], "max");

    let superpod = afdplan(&["intensity", "--model", "deepseek-v3", "--hardware", "gb200", "--slo-ms", "50"]);
    let kinds: std::collections::BTreeSet<String> = stdout(&superpod)
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().to_string())
        .collect();
    assert!(kinds.iter().all(|k| k == "scaleout" || k == "max"), "{kinds:?}");
}

#[test]
fn output_is_byte_stable() {
    let args = [&["hfu", "--model", "deepseek-v3,glm-4.7", "--hardware", "h800,gb300", "--slo-ms", "50"][..], &["-q"]].concat();
    assert_eq!(afdplan(&args).stdout, afdplan(&args).stdout);
    let p = ["penalty"];
    assert_eq!(afdplan(&p).stdout, afdplan(&p).stdout);
    let sim = [
        "simulate", "--mode", "2bo", "--ta-us", "400", "--tf-us", "420", "--tdispatch-us", "150",
        "--tcombine-us", "150", "--jitter", "lognormal:0.1", "--seed", "7", "--trials", "20",
    ];
    assert_eq!(afdplan(&sim).stdout, afdplan(&sim).stdout);
}

#[test]
fn hfu_writes_csv_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep.csv");
    let status = afdplan(&[
        "hfu", "--model", "deepseek-v3,kimi-k2", "--hardware", "gb200", "--slo-ms", "50",
        "--out", out.to_str().unwrap(), "--quiet",
    ]);
    assert!(status.status.success());
    assert!(status.stdout.is_empty());
    let csv = fs::read_to_string(&out).unwrap();
    assert!(csv.starts_with("model,hardware,nf,hfu,ofu,s_t,binding,feasible,reason\n"));
    assert_eq!(csv.lines().count(), 1 + 2 * 64);
    let sidecar: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("sweep.cap.json")).unwrap()).unwrap();
    let caps = sidecar["caps"].as_array().unwrap();
    assert_eq!(caps.len(), 2);
    for c in caps {
        assert!((c["hfu_cap_frac"].as_f64().unwrap() - 0.65536).abs() < 1e-9);
    }
}

#[test]
fn hfu_max_matches_cap_on_h800() {
    let out = afdplan(&[&["hfu"][..], &DSV3_H800, &["-q"]].concat());
    let max = stdout(&out)
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(3).unwrap().parse::<f64>().unwrap())
        .fold(0.0, f64::max);
    assert!((max - 0.331).abs() < 0.001, "{max}");
}

#[test]
fn penalty_defaults_and_invariants() {
    let text = stdout(&afdplan(&["penalty"]));
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "nf,sigma,lambda,alpha_ep,alpha_exact,alpha_floor,alpha_ceil,alpha_afd");
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|f| f.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 3 * 4 * 81);
    assert!(rows.iter().all(|r| r[7] <= r[4]));

    let unit = stdout(&afdplan(&["penalty", "--sigma", "1.0"]));
    for line in unit.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(&f[3..5], ["1", "1"], "{line}");
        // With sigma = 1 the discrete alphas are 1 only when n_a = lambda * n_f is whole.
        let n_a = f[0].parse::<f64>().unwrap() * f[2].parse::<f64>().unwrap();
        if (n_a - n_a.round()).abs() < 1e-9 {
            assert!(f[5..].iter().all(|v| *v == "1"), "{line}");
        }
    }
}

#[test]
fn simulate_summary_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.csv");
    let v = json_of(&[
        "simulate", "--mode", "3bo", "--layers", "58", "--ta-us", "400", "--tf-us", "400",
        "--tdispatch-us", "150", "--tcombine-us", "150", "--trace", trace.to_str().unwrap(),
    ]);
    for r in ["attention", "ffn"] {
        assert_eq!(v["resources"][r]["interior_utilization_frac"], 1.0);
        assert_eq!(v["resources"][r]["interior_bubble_total_us"], 0.0);
    }
    assert_eq!(v["p_violation"], 0.0);
    let trace = fs::read_to_string(trace).unwrap();
    assert!(trace.starts_with("resource,mb,layer,start_us,end_us\nattention,0,0,0,400\n"));
    assert_eq!(trace.lines().count(), 1 + 4 * 58 * 3);

    let v = json_of(&[
        "simulate", "--mode", "2bo", "--ta-us", "400", "--tf-us", "400", "--tdispatch-us", "150",
        "--tcombine-us", "150", "-q",
    ]);
    let bubble = v["resources"]["attention"]["interior_bubble_per_layer_us"].as_f64().unwrap();
    assert!((bubble - 300.0).abs() < 1e-3);

    let v = json_of(&[
        "simulate", "--ta-us", "400", "--tf-us", "400", "--tdispatch-us", "150", "--tcombine-us",
        "150", "--trials", "100", "--jitter", "uniform:0.1", "-q",
    ]);
    let p = v["p_violation"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&p));
    assert_eq!(v["jitter"]["trials"], 100);

    let bad = afdplan(&["simulate", "--mode", "4bo", "--ta-us", "1", "--tf-us", "1", "--tdispatch-us", "1", "--tcombine-us", "1"]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn simulate_with_slo_budget() {
    let v = json_of(&[
        "simulate", "--layers", "58", "--ta-us", "400", "--tf-us", "400", "--tdispatch-us", "150",
        "--tcombine-us", "150", "--slo-ms", "50",
    ]);
    assert_eq!(v["budget_source"], "slo");
    assert_eq!(v["slo_violation"], false);
}

#[test]
fn report_fields_carry_units() {
    let v = json_of(&[&["report"][..], &DSV3_H800, &["-q"]].concat());
    for key in ["tool_version", "hfu_cap_pct", "margin_pct", "verdict", "warnings", "budget"] {
        assert!(v.get(key).is_some(), "{key}");
    }
    assert!(v["budget"]["t_b_us"].is_f64());
    assert_eq!(v["inputs"]["scenario"]["slo_tpot_ms"], 50.0);
}

#[test]
fn compare_and_cap() {
    let v = json_of(&["compare", "--model", "deepseek-v3", "--hardware", "gb200", "--slo-ms", "50"]);
    assert_eq!(v["verdict"], "afd_favored");
    let v = json_of(&["compare", "--model", "deepseek-v3", "--hardware", "h800", "--slo-ms", "50", "--ep-reference", "0.33"]);
    assert_eq!(v["verdict"], "comparable");
    let v = json_of(&["cap", "--model", "glm-4.7", "--hardware", "gb300", "--slo-ms", "50"]);
    assert!((v["hfu_cap_frac"].as_f64().unwrap() - 0.49152).abs() < 1e-9);
}
