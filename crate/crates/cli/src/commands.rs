use std::fs;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use afdplan_core::budget::budget_for_layers;
use afdplan_core::imbalance::{lambda_grid, penalty_sweep};
use afdplan_core::pipeline_sim::{BubbleGrowth, SimResult};
use afdplan_core::roofline::{best_point, limiting_bandwidth};
use afdplan_core::{
    compare_vs_ep, hardware_preset, hfu_cap_closed_form, hfu_sweep, intensity_sweep,
    jitter_sensitivity, model_preset, stage_budget, BoMode, Budget, ConfigError,
    HardwareConfig, HfuPoint, JitterKind, ModelConfig, Resource, ScenarioConfig, SimSpec,
    StageTiming,
};

use crate::output::{emit, json, num, Csv};
use crate::{
    CapArgs, CliError, Common, Format, HfuArgs, PenaltyArgs, ReportArgs, ScenarioArgs,
    SimulateArgs, SweepArgs, Target,
};

type Result<T> = std::result::Result<T, CliError>;

const MS: f64 = 1e-3;
const US: f64 = 1e-6;
const DEFAULT_L_ACCEPT: f64 = 1.7;
const DEFAULT_T_GAP_MS: f64 = 15.0;

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(Some(path), e))
}

fn write(text: &str, path: Option<&Path>) -> Result<()> {
    emit(text, path).map_err(|e| CliError::io(path, e))
}

/// A preset name, or a path to a config file when no preset matches.
fn resolve<T>(
    spec: &str,
    preset: fn(&str) -> Option<T>,
    parse: fn(&str) -> std::result::Result<T, ConfigError>,
) -> Result<T> {
    if let Some(cfg) = preset(spec) {
        return Ok(cfg);
    }
    let path = Path::new(spec);
    if path.is_file() {
        return Ok(parse(&read_file(path)?)?);
    }
    Err(ConfigError::UnknownPreset(spec.to_string()).into())
}

fn resolve_model(spec: &str) -> Result<ModelConfig> {
    resolve(spec, model_preset, ModelConfig::from_json)
}

fn resolve_hardware(spec: &str) -> Result<HardwareConfig> {
    resolve(spec, hardware_preset, HardwareConfig::from_json)
}

fn resolve_target(t: &Target) -> Result<(ModelConfig, HardwareConfig)> {
    Ok((resolve_model(&t.model)?, resolve_hardware(&t.hardware)?))
}

fn resolve_scenario(a: &ScenarioArgs) -> Result<ScenarioConfig> {
    let mut s = match &a.scenario {
        Some(path) => ScenarioConfig::from_json(&read_file(path)?)?,
        None => {
            let slo = a
                .slo_ms
                .ok_or_else(|| CliError::Usage("--slo-ms or --scenario is required".into()))?;
            ScenarioConfig::new(
                slo * MS,
                DEFAULT_L_ACCEPT,
                DEFAULT_T_GAP_MS * MS,
            )
        }
    };
    if let Some(v) = a.slo_ms {
        s.slo_tpot = v * MS;
    }
    if let Some(v) = a.l_accept {
        s.l_accept = v;
    }
    if let Some(v) = a.t_gap_ms {
        s.t_gap = v * MS;
    }
    if let Some(v) = a.n_bo {
        s.n_bo = v;
    }
    if let Some(v) = a.gemm_efficiency {
        s.gemm_efficiency = v;
    }
    if let Some(v) = a.ep_reference {
        s.ep_reference_hfu = v;
    }
    if let Some(v) = a.memory_reserve {
        s.memory_reserve_fraction = v;
    }
    if let Some(v) = a.extra_bytes_per_token {
        s.extra_bytes_per_token = v;
    }
    s.validate()?;
    Ok(s)
}

fn parse_nf_range(s: &str) -> Result<RangeInclusive<u32>> {
    let bad = || CliError::Usage(format!("--nf-range `{s}` must be A:B with 1 <= A <= B"));
    let (a, b) = s.split_once(':').ok_or_else(bad)?;
    let a: u32 = a.trim().parse().map_err(|_| bad())?;
    let b: u32 = b.trim().parse().map_err(|_| bad())?;
    if a == 0 || a > b {
        return Err(bad());
    }
    Ok(a..=b)
}

fn parse_lambda_range(s: &str) -> Result<Vec<f64>> {
    let bad = || CliError::Usage(format!("--lambda-range `{s}` must be A:B:step"));
    let parts: Vec<f64> = s
        .split(':')
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    match parts[..] {
        [a, b, step] => Ok(lambda_grid(a, b, step)?),
        _ => Err(bad()),
    }
}

fn parse_jitter(s: &str) -> Result<(JitterKind, f64)> {
    let bad = || {
        CliError::Usage(format!(
            "--jitter `{s}` must be `none` or `uniform:M` / `lognormal:M`"
        ))
    };
    let (kind, mag) = match s.split_once(':') {
        Some((k, m)) => (k, Some(m.trim().parse::<f64>().map_err(|_| bad())?)),
        None => (s, None),
    };
    match (kind.trim().to_ascii_lowercase().as_str(), mag) {
        ("none", None) | ("none", Some(_)) => Ok((JitterKind::None, 0.0)),
        ("uniform", Some(m)) => Ok((JitterKind::UniformFraction, m)),
        ("lognormal", Some(m)) => Ok((JitterKind::LogNormal, m)),
        _ => Err(bad()),
    }
}

fn warn(common: &Common, msg: &str) {
    if !common.quiet {
        eprintln!("warning: {msg}");
    }
}

fn budget_json(b: &Budget) -> Value {
    json!({
        "t_run_us": b.run_batch_latency / US,
        "t_b_us": b.stage_budget / US,
        "t_gap_us": b.t_gap / US,
        "n_overlap_layers": b.n_overlap_layers,
        "n_bo": b.n_bo,
    })
}

fn model_json(m: &ModelConfig) -> Value {
    serde_json::to_value(m).expect("serializable")
}

fn hardware_json(h: &HardwareConfig) -> Value {
    json!({
        "name": h.name,
        "peak_fp8_tflops": h.peak_fp8 / 1e12,
        "mem_bandwidth_tbps": h.mem_bandwidth / 1e12,
        "mem_capacity_gb": h.mem_capacity / 1e9,
        "scaleout_bandwidth_gbps": h.scaleout_bandwidth / 1e9,
        "scaleup_bandwidth_gbps": h.scaleup_bandwidth / 1e9,
        "gpus_per_node": h.gpus_per_node,
        "superpod": h.superpod,
    })
}

fn scenario_json(s: &ScenarioConfig) -> Value {
    json!({
        "slo_tpot_ms": s.slo_tpot / MS,
        "l_accept_tokens": s.l_accept,
        "t_gap_ms": s.t_gap / MS,
        "n_bo": s.n_bo,
        "dispatch_bytes_per_element": s.dispatch_bytes_per_element,
        "combine_bytes_per_element": s.combine_bytes_per_element,
        "extra_bytes_per_token": s.extra_bytes_per_token,
        "ep_reference_hfu_frac": s.ep_reference_hfu,
        "memory_reserve_frac": s.memory_reserve_fraction,
        "gemm_efficiency_frac": s.gemm_efficiency,
    })
}

pub fn budget(target: &Target, scenario: &ScenarioArgs, common: &Common) -> Result<()> {
    let (model, _hw) = resolve_target(target)?;
    let s = resolve_scenario(scenario)?;
    let b = stage_budget(&s, &model)?;
    let text = match common.format.unwrap_or(Format::Json) {
        Format::Json => json(&budget_json(&b)),
        Format::Csv => {
            let mut csv = Csv::new("t_run_us,t_b_us,t_gap_us,n_overlap_layers,n_bo");
            csv.row([
                num(b.run_batch_latency / US),
                num(b.stage_budget / US),
                num(b.t_gap / US),
                b.n_overlap_layers.to_string(),
                b.n_bo.to_string(),
            ]);
            csv.into_string()
        }
    };
    write(&text, None)
}

pub fn intensity(a: &SweepArgs) -> Result<()> {
    let (model, hw) = resolve_target(&a.target)?;
    let s = resolve_scenario(&a.scenario)?;
    let rows = intensity_sweep(&model, &hw, &s, parse_nf_range(&a.nf_range)?)?;
    let text = match a.common.format.unwrap_or(Format::Csv) {
        Format::Csv => {
            let mut csv = Csv::new(
                "nf,regime,rank_tokens,local_experts,tokens_per_expert,\
                 intensity_ub_norm,intensity_actual_norm",
            );
            for r in &rows {
                csv.row([
                    r.n_f.to_string(),
                    r.regime.kind.as_str().to_string(),
                    num(r.rank_tokens),
                    r.local_experts.to_string(),
                    num(r.tokens_per_expert.floor()),
                    num(r.intensity_ub_norm),
                    num(r.intensity_actual_norm),
                ]);
            }
            csv.into_string()
        }
        Format::Json => json(
            &rows
                .iter()
                .map(|r| {
                    json!({
                        "nf": r.n_f,
                        "regime": r.regime.kind.as_str(),
                        "rank_tokens": r.rank_tokens,
                        "local_experts": r.local_experts,
                        "tokens_per_expert": r.tokens_per_expert.floor(),
                        "intensity_ub_flops_per_byte": r.intensity_upper_bound,
                        "intensity_actual_flops_per_byte": r.intensity_actual,
                        "intensity_ub_norm": r.intensity_ub_norm,
                        "intensity_actual_norm": r.intensity_actual_norm,
                    })
                })
                .collect::<Vec<_>>(),
        ),
    };
    write(&text, a.out.as_deref())
}

#[derive(Debug, Serialize)]
struct CapSummary {
    model: String,
    hardware: String,
    hfu_cap_frac: f64,
    limiting_bandwidth_gbps: f64,
    best_nf: Option<u32>,
    best_hfu_frac: Option<f64>,
}

fn cap_summary(model: &ModelConfig, hw: &HardwareConfig, points: &[HfuPoint]) -> CapSummary {
    let best = best_point(points);
    CapSummary {
        model: model.name.clone(),
        hardware: hw.name.clone(),
        hfu_cap_frac: hfu_cap_closed_form(model, hw),
        limiting_bandwidth_gbps: limiting_bandwidth(model, hw) / 1e9,
        best_nf: best.map(|p| p.n_f),
        best_hfu_frac: best.map(|p| p.hfu),
    }
}

fn hfu_point_json(model: &str, hw: &str, p: &HfuPoint) -> Value {
    json!({
        "model": model,
        "hardware": hw,
        "nf": p.n_f,
        "regime": p.regime.kind.as_str(),
        "rank_tokens": p.rank_tokens,
        "tokens_per_expert": p.tokens_per_expert,
        "operator_time_us": p.operator_time / US,
        "hfu_frac": p.hfu,
        "ofu_frac": p.ofu,
        "s_t_frac": p.temporal_sparsity,
        "binding": p.binding_constraint.as_str(),
        "memory_bound": p.memory_bound,
        "feasible": p.feasible,
        "reason": p.infeasibility_reason.map(|r| r.as_str()),
    })
}

fn sidecar_path(a: &HfuArgs) -> Option<PathBuf> {
    a.sidecar
        .clone()
        .or_else(|| a.out.as_ref().map(|p| p.with_extension("cap.json")))
}

pub fn hfu(a: &HfuArgs) -> Result<()> {
    let models = a
        .model
        .iter()
        .map(|m| resolve_model(m))
        .collect::<Result<Vec<_>>>()?;
    let hardware = a
        .hardware
        .iter()
        .map(|h| resolve_hardware(h))
        .collect::<Result<Vec<_>>>()?;
    let s = resolve_scenario(&a.scenario)?;
    let range = parse_nf_range(&a.nf_range)?;

    let mut sweeps = Vec::new();
    for m in &models {
        for h in &hardware {
            let points = hfu_sweep(m, h, &s, range.clone())?;
            let infeasible = points.iter().filter(|p| !p.feasible).count();
            if infeasible > 0 {
                warn(
                    &a.common,
                    &format!("{}/{}: {infeasible} infeasible n_f points", m.name, h.name),
                );
            }
            sweeps.push((m, h, points));
        }
    }
    let caps: Vec<CapSummary> = sweeps
        .iter()
        .map(|(m, h, points)| cap_summary(m, h, points))
        .collect();

    let text = match a.common.format.unwrap_or(Format::Csv) {
        Format::Csv => {
            let mut csv = Csv::new("model,hardware,nf,hfu,ofu,s_t,binding,feasible,reason");
            for (m, h, points) in &sweeps {
                for p in points {
                    csv.row([
                        m.name.clone(),
                        h.name.clone(),
                        p.n_f.to_string(),
                        num(p.hfu),
                        num(p.ofu),
                        num(p.temporal_sparsity),
                        p.binding_constraint.as_str().to_string(),
                        p.feasible.to_string(),
                        p.infeasibility_reason
                            .map_or("", |r| r.as_str())
                            .to_string(),
                    ]);
                }
            }
            csv.into_string()
        }
        Format::Json => {
            let points: Vec<Value> = sweeps
                .iter()
                .flat_map(|(m, h, points)| {
                    points.iter().map(|p| hfu_point_json(&m.name, &h.name, p))
                })
                .collect();
            json(&json!({ "points": points, "caps": caps }))
        }
    };
    write(&text, a.out.as_deref())?;
    if let Some(path) = sidecar_path(a) {
        write(&json(&json!({ "caps": caps })), Some(&path))?;
    }
    Ok(())
}

/// Ceiling used for the EP comparison: the closed-form cap can exceed the
/// achievable GEMM efficiency on compute-bound platforms.
fn effective_cap(cap: f64, s: &ScenarioConfig) -> f64 {
    cap.min(s.gemm_efficiency)
}

pub fn cap(a: &CapArgs) -> Result<()> {
    let (model, hw) = resolve_target(&a.target)?;
    let s = resolve_scenario(&a.scenario)?;
    let b = stage_budget(&s, &model)?;
    let cap = hfu_cap_closed_form(&model, &hw);
    if cap > s.gemm_efficiency {
        warn(&a.common, "cap exceeds GEMM efficiency; platform is compute bound");
    }
    let text = match a.common.format.unwrap_or(Format::Json) {
        Format::Json => json(&json!({
            "model": model.name,
            "hardware": hw.name,
            "t_b_us": b.stage_budget / US,
            "limiting_bandwidth_gbps": limiting_bandwidth(&model, &hw) / 1e9,
            "hfu_cap_frac": cap,
            "hfu_cap_pct": cap * 100.0,
        })),
        Format::Csv => {
            let mut csv = Csv::new("model,hardware,limiting_bandwidth_gbps,hfu_cap");
            csv.row([
                model.name.clone(),
                hw.name.clone(),
                num(limiting_bandwidth(&model, &hw) / 1e9),
                num(cap),
            ]);
            csv.into_string()
        }
    };
    write(&text, None)
}

pub fn compare(a: &CapArgs) -> Result<()> {
    let (model, hw) = resolve_target(&a.target)?;
    let s = resolve_scenario(&a.scenario)?;
    stage_budget(&s, &model)?;
    let cap = hfu_cap_closed_form(&model, &hw);
    let c = compare_vs_ep(effective_cap(cap, &s), &s);
    let text = match a.common.format.unwrap_or(Format::Json) {
        Format::Json => json(&json!({
            "model": model.name,
            "hardware": hw.name,
            "hfu_cap_pct": cap * 100.0,
            "ep_reference_hfu_pct": s.ep_reference_hfu * 100.0,
            "margin_pct": c.margin * 100.0,
            "verdict": c.verdict.as_str(),
        })),
        Format::Csv => {
            let mut csv = Csv::new("model,hardware,hfu_cap,ep_reference_hfu,margin,verdict");
            csv.row([
                model.name.clone(),
                hw.name.clone(),
                num(cap),
                num(s.ep_reference_hfu),
                num(c.margin),
                c.verdict.as_str().to_string(),
            ]);
            csv.into_string()
        }
    };
    write(&text, None)
}

pub fn penalty(a: &PenaltyArgs) -> Result<()> {
    let lambdas = parse_lambda_range(&a.lambda_range)?;
    let points = penalty_sweep(&a.nf, &a.sigma, &lambdas)?;
    let text = match a.common.format.unwrap_or(Format::Csv) {
        Format::Csv => {
            let mut csv =
                Csv::new("nf,sigma,lambda,alpha_ep,alpha_exact,alpha_floor,alpha_ceil,alpha_afd");
            for p in &points {
                csv.row([
                    num(p.query.n_f),
                    num(p.query.sigma),
                    num(p.query.lambda),
                    num(p.alpha_ep),
                    num(p.alpha_exact),
                    num(p.alpha_floor),
                    num(p.alpha_ceil),
                    num(p.alpha_afd),
                ]);
            }
            csv.into_string()
        }
        Format::Json => json(
            &points
                .iter()
                .map(|p| {
                    json!({
                        "nf": p.query.n_f,
                        "na": p.query.n_a,
                        "sigma": p.query.sigma,
                        "lambda": p.query.lambda,
                        "alpha_ep": p.alpha_ep,
                        "alpha_exact": p.alpha_exact,
                        "alpha_floor": p.alpha_floor,
                        "alpha_ceil": p.alpha_ceil,
                        "alpha_afd": p.alpha_afd,
                    })
                })
                .collect::<Vec<_>>(),
        ),
    };
    write(&text, a.out.as_deref())
}

fn sim_summary(spec: &SimSpec, r: &SimResult) -> Value {
    let budget = spec.reference_budget();
    let resources: serde_json::Map<String, Value> = Resource::ALL
        .iter()
        .map(|&res| {
            let s = r.stats(res);
            let v = json!({
                "busy_us": s.busy / US,
                "utilization_frac": s.utilization,
                "active_window_us": s.active_window / US,
                "bubble_total_us": s.bubble_total / US,
                "interior_window_us": s.interior_window / US,
                "interior_utilization_frac": s.interior_utilization,
                "interior_bubble_total_us": s.interior_bubble_total / US,
                "interior_bubble_per_layer_us": s.interior_bubble_per_layer / US,
            });
            (res.as_str().to_string(), v)
        })
        .collect();
    json!({
        "mode": spec.mode.as_str(),
        "layers": spec.n_layers,
        "microbatches": spec.n_microbatches,
        "t_a_us": spec.timings.t_a / US,
        "t_dispatch_us": spec.timings.t_dispatch / US,
        "t_f_us": spec.timings.t_f / US,
        "t_combine_us": spec.timings.t_combine / US,
        "budget": budget_json(&budget),
        "budget_source": if spec.budget.is_some() { "slo" } else { "timings" },
        "makespan_us": r.makespan / US,
        "attention_span_us": r.attention_span / US,
        "slo_violation": r.slo_violation,
        "resources": resources,
    })
}

fn trace_csv(r: &SimResult) -> String {
    let mut csv = Csv::new("resource,mb,layer,start_us,end_us");
    for e in &r.trace {
        csv.row([
            e.resource.as_str().to_string(),
            e.microbatch.to_string(),
            e.layer.to_string(),
            num(e.start / US),
            num(e.end / US),
        ]);
    }
    csv.into_string()
}

fn sim_spec(a: &SimulateArgs) -> Result<SimSpec> {
    let mode: BoMode = a.mode.parse().map_err(CliError::Usage)?;
    let timings = StageTiming::new(
        a.ta_us * US,
        a.tdispatch_us * US,
        a.tf_us * US,
        a.tcombine_us * US,
    );
    let (kind, mag) = parse_jitter(&a.jitter)?;
    let mut spec = SimSpec::new(mode, a.layers, timings).with_jitter(kind, mag, a.seed);
    if let Some(slo) = a.slo_ms {
        let s = ScenarioConfig::new(
            slo * MS,
            a.l_accept.unwrap_or(DEFAULT_L_ACCEPT),
            a.t_gap_ms.unwrap_or(DEFAULT_T_GAP_MS) * MS,
        )
        .with_n_bo(mode.microbatches());
        s.validate()?;
        spec = spec.with_budget(budget_for_layers(&s, a.layers)?);
    } else if a.l_accept.is_some() || a.t_gap_ms.is_some() {
        return Err(CliError::Usage(
            "--l-accept and --t-gap-ms need --slo-ms".into(),
        ));
    }
    Ok(spec)
}

pub fn simulate(a: &SimulateArgs) -> Result<()> {
    let spec = sim_spec(a)?;
    if a.trials == 0 {
        return Err(CliError::Usage("--trials must be at least 1".into()));
    }
    let r = afdplan_core::simulate(&spec)?;
    if r.slo_violation {
        warn(&a.common, "schedule overruns the budget");
    }
    if let Some(path) = &a.trace {
        write(&trace_csv(&r), Some(path))?;
    }

    let mut summary = sim_summary(&spec, &r);
    let jittered = spec.jitter.kind != JitterKind::None;
    let p_violation = if jittered && a.trials > 1 {
        let report = jitter_sensitivity(&spec, a.trials)?;
        let (ratio, abs_us) = match report.bubble_growth {
            BubbleGrowth::Ratio(x) => (Some(x), None),
            BubbleGrowth::AbsoluteSeconds(x) => (None, Some(x / US)),
        };
        summary["jitter"] = json!({
            "kind": a.jitter,
            "seed": spec.jitter.seed,
            "trials": report.trials,
            "mean_makespan_us": report.mean_makespan / US,
            "deterministic_makespan_us": report.deterministic_makespan / US,
            "bubble_growth_ratio": ratio,
            "bubble_growth_abs_us": abs_us,
        });
        report.p_violation
    } else if r.slo_violation {
        1.0
    } else {
        0.0
    };
    summary["p_violation"] = json!(p_violation);

    let text = match a.common.format.unwrap_or(Format::Json) {
        Format::Json => json(&summary),
        Format::Csv => {
            let mut csv = Csv::new(
                "resource,busy_us,utilization,bubble_total_us,\
                 interior_utilization,interior_bubble_per_layer_us",
            );
            for res in Resource::ALL {
                let s = r.stats(res);
                csv.row([
                    res.as_str().to_string(),
                    num(s.busy / US),
                    num(s.utilization),
                    num(s.bubble_total / US),
                    num(s.interior_utilization),
                    num(s.interior_bubble_per_layer / US),
                ]);
            }
            csv.into_string()
        }
    };
    write(&text, a.out.as_deref())
}

pub fn report(a: &ReportArgs) -> Result<()> {
    let (model, hw) = resolve_target(&a.target)?;
    let s = resolve_scenario(&a.scenario)?;
    let b = stage_budget(&s, &model)?;
    let range = parse_nf_range(&a.nf_range)?;
    let points = hfu_sweep(&model, &hw, &s, range)?;
    let cap = hfu_cap_closed_form(&model, &hw);
    let c = compare_vs_ep(effective_cap(cap, &s), &s);

    let mut warnings = Vec::new();
    let infeasible: Vec<String> = points
        .iter()
        .filter_map(|p| {
            p.infeasibility_reason
                .map(|r| format!("n_f={}: {}", p.n_f, r.as_str()))
        })
        .collect();
    if !infeasible.is_empty() {
        warnings.push(format!("infeasible points: {}", infeasible.join(", ")));
    }
    if cap > s.gemm_efficiency {
        warnings.push(format!(
            "closed-form cap {:.4} exceeds GEMM efficiency {:.4}; the platform is compute bound",
            cap, s.gemm_efficiency
        ));
    }
    let best = best_point(&points);
    if best.is_none() {
        warnings.push("no feasible n_f in range".to_string());
    }
    for w in &warnings {
        warn(&a.common, w);
    }

    let doc = json!({
        "tool_version": env!("CARGO_PKG_VERSION"),
        "inputs": {
            "model": model_json(&model),
            "hardware": hardware_json(&hw),
            "scenario": scenario_json(&s),
            "nf_range": a.nf_range,
        },
        "budget": budget_json(&b),
        "hfu_cap_pct": cap * 100.0,
        "limiting_bandwidth_gbps": limiting_bandwidth(&model, &hw) / 1e9,
        "best_hfu_pct": best.map(|p| p.hfu * 100.0),
        "best_nf": best.map(|p| p.n_f),
        "best_binding": best.map(|p| p.binding_constraint.as_str()),
        "ep_reference_hfu_pct": s.ep_reference_hfu * 100.0,
        "verdict": c.verdict.as_str(),
        "margin_pct": c.margin * 100.0,
        "warnings": warnings,
    });
    write(&json(&doc), a.out.as_deref())
}
