//! Roofline analysis of the FFN stage: grouped-GEMM work, operator time,
//! OFU / temporal sparsity / HFU, and sweeps over the FFN node count.
//!
//! Per FFN rank the stage runs two grouped GEMMs over `G` local experts with
//! `B = B_rank / G` tokens each:
//!
//! ```text
//! FLOPs = 6 · G · B · H · M        Mem = 3 · G · H · M   (fp8 weights)
//! I     = FLOPs / Mem = 2 · B_rank / G
//! ```
//!
//! Operator time is `max(FLOPs / (peak · eff), Mem / bw)`. Activation traffic
//! is ignored.

use std::ops::RangeInclusive;

use rayon::prelude::*;
use serde::Serialize;

use crate::budget::{stage_budget, Budget};
use crate::configs::{HardwareConfig, ModelConfig, ScenarioConfig};
use crate::error::{invalid, Result};
use crate::interconnect::{classify_regime, rank_inbound_tokens, Regime, TokenThroughput};

/// Bytes per fp8 weight element.
const WEIGHT_BYTES_PER_PARAM: f64 = 1.0;

/// Relative width of the band around the EP reference in which the two
/// deployments are called comparable.
pub const COMPARABLE_BAND: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GemmWorkload {
    /// `G`.
    pub local_experts: u32,
    pub tokens_per_rank: f64,
    pub tokens_per_expert: f64,
    pub flops: f64,
    pub weight_bytes: f64,
    /// FLOPs per weight byte.
    pub intensity: f64,
}

/// What caps HFU at a sweep point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Binding {
    /// The interconnect cannot deliver more tokens within `t_B`.
    Communication,
    /// The delivered tokens need more than `t_B` of compute.
    Compute,
    /// Streaming the local expert weights alone takes longer than `t_B`.
    MemoryBandwidth,
}

impl Binding {
    pub fn as_str(self) -> &'static str {
        match self {
            Binding::Communication => "communication",
            Binding::Compute => "compute",
            Binding::MemoryBandwidth => "memory_bandwidth",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Infeasibility {
    CapacityExceeded,
    BandwidthExceedsBudget,
}

impl Infeasibility {
    pub fn as_str(self) -> &'static str {
        match self {
            Infeasibility::CapacityExceeded => "capacity_exceeded",
            Infeasibility::BandwidthExceedsBudget => "bandwidth_exceeds_budget",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HfuPoint {
    pub n_f: u32,
    pub regime: Regime,
    pub local_experts: u32,
    /// Tokens the interconnect delivers to the rank within `t_B`.
    pub rank_tokens: f64,
    /// Tokens per expert actually processed (after any compute clamp).
    pub tokens_per_expert: f64,
    /// `t_G`, seconds.
    pub operator_time: f64,
    pub ofu: f64,
    pub temporal_sparsity: f64,
    pub hfu: f64,
    pub binding_constraint: Binding,
    /// `t_G` is dominated by weight streaming rather than math.
    pub memory_bound: bool,
    pub feasible: bool,
    pub infeasibility_reason: Option<Infeasibility>,
}

/// Local experts per FFN rank: `ceil(N_experts / (n_f · g))`.
pub fn local_experts(model: &ModelConfig, hw: &HardwareConfig, n_f: u32) -> u32 {
    assert!(n_f >= 1, "n_f must be at least 1");
    let ranks = u64::from(n_f) * u64::from(hw.gpus_per_node);
    u64::from(model.num_routed_experts).div_ceil(ranks) as u32
}

fn workload_for_tokens(model: &ModelConfig, local_experts: u32, tokens_per_rank: f64) -> GemmWorkload {
    let h = model.hidden_size as f64;
    let m = model.moe_intermediate as f64;
    let g = f64::from(local_experts);
    GemmWorkload {
        local_experts,
        tokens_per_rank,
        tokens_per_expert: tokens_per_rank / g,
        flops: 6.0 * tokens_per_rank * h * m,
        weight_bytes: 3.0 * g * h * m * WEIGHT_BYTES_PER_PARAM,
        intensity: 2.0 * tokens_per_rank / g,
    }
}

pub fn gemm_workload(
    model: &ModelConfig,
    hw: &HardwareConfig,
    throughput: &TokenThroughput,
    n_f: u32,
) -> GemmWorkload {
    workload_for_tokens(model, local_experts(model, hw, n_f), throughput.rank_tokens)
}

/// Compute and memory terms of the roofline, seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RooflineTerms {
    pub compute: f64,
    pub memory: f64,
}

impl RooflineTerms {
    pub fn time(&self) -> f64 {
        self.compute.max(self.memory)
    }

    pub fn memory_bound(&self) -> bool {
        self.memory > self.compute
    }
}

pub fn roofline_terms(workload: &GemmWorkload, hw: &HardwareConfig, efficiency: f64) -> RooflineTerms {
    RooflineTerms {
        compute: workload.flops / (hw.peak_fp8 * efficiency),
        memory: workload.weight_bytes / hw.mem_bandwidth,
    }
}

/// `t_G = max(FLOPs / (peak · efficiency), Mem / bw)`.
pub fn operator_time(workload: &GemmWorkload, hw: &HardwareConfig, efficiency: f64) -> f64 {
    roofline_terms(workload, hw, efficiency).time()
}

/// Whether the local experts' fp8 weights fit in the usable share of HBM.
pub fn capacity_check(
    model: &ModelConfig,
    hw: &HardwareConfig,
    scenario: &ScenarioConfig,
    n_f: u32,
) -> std::result::Result<(), Infeasibility> {
    let wl = workload_for_tokens(model, local_experts(model, hw, n_f), 0.0);
    if wl.weight_bytes <= hw.mem_capacity * scenario.memory_reserve_fraction {
        Ok(())
    } else {
        Err(Infeasibility::CapacityExceeded)
    }
}

/// HFU of the FFN stage at `n_f` FFN nodes.
///
/// When the delivered tokens would need more than `t_B` of compute, only
/// the tokens that fit are counted and the point is compute bound. When
/// weight streaming alone overruns `t_B` the point is infeasible and HFU is
/// the share of the work completed inside the window, so that
/// `hfu == ofu × temporal_sparsity` holds everywhere.
pub fn hfu_point(
    model: &ModelConfig,
    hw: &HardwareConfig,
    scenario: &ScenarioConfig,
    budget: &Budget,
    n_f: u32,
) -> HfuPoint {
    let t_b = budget.stage_budget;
    let eff = scenario.gemm_efficiency;
    let regime = classify_regime(model, hw, n_f);
    let throughput = rank_inbound_tokens(model, hw, t_b, n_f, scenario);
    let mut workload = gemm_workload(model, hw, &throughput, n_f);
    let mut terms = roofline_terms(&workload, hw, eff);

    let compute_clamped = terms.compute > t_b;
    if compute_clamped {
        let h = model.hidden_size as f64;
        let m = model.moe_intermediate as f64;
        let max_tokens = t_b * hw.peak_fp8 * eff / (6.0 * h * m);
        workload = workload_for_tokens(model, workload.local_experts, max_tokens);
        terms = roofline_terms(&workload, hw, eff);
    }

    let t_g = terms.time();
    let temporal_sparsity = (t_g / t_b).min(1.0);
    let ofu = if t_g > 0.0 {
        workload.flops / (t_g * hw.peak_fp8)
    } else {
        0.0
    };

    let bandwidth_ok = terms.memory <= t_b;
    let binding_constraint = if !bandwidth_ok {
        Binding::MemoryBandwidth
    } else if compute_clamped {
        Binding::Compute
    } else {
        Binding::Communication
    };
    let infeasibility_reason = match capacity_check(model, hw, scenario, n_f) {
        Err(reason) => Some(reason),
        Ok(()) if !bandwidth_ok => Some(Infeasibility::BandwidthExceedsBudget),
        Ok(()) => None,
    };

    HfuPoint {
        n_f,
        regime,
        local_experts: workload.local_experts,
        rank_tokens: throughput.rank_tokens,
        tokens_per_expert: workload.tokens_per_expert,
        operator_time: t_g,
        ofu,
        temporal_sparsity,
        hfu: ofu * temporal_sparsity,
        binding_constraint,
        memory_bound: terms.memory_bound(),
        feasible: infeasibility_reason.is_none(),
        infeasibility_reason,
    }
}

/// Communication-bound HFU ceiling `2 · bw · M / peak`.
///
/// `bw` is the scale-up bandwidth on a superpod, and otherwise the largest
/// per-rank token feed any `n_f` can reach, `min(scale-up, top_k · scale-out)`.
/// The value is not clipped to 1; a result above 1 means the platform is
/// compute bound before the interconnect saturates.
pub fn hfu_cap_closed_form(model: &ModelConfig, hw: &HardwareConfig) -> f64 {
    2.0 * limiting_bandwidth(model, hw) * model.moe_intermediate as f64 / hw.peak_fp8
}

pub fn limiting_bandwidth(model: &ModelConfig, hw: &HardwareConfig) -> f64 {
    if hw.superpod {
        hw.scaleup_bandwidth
    } else {
        hw.scaleup_bandwidth
            .min(f64::from(model.top_k) * hw.scaleout_bandwidth)
    }
}

fn check_range(range: &RangeInclusive<u32>) -> Result<()> {
    if range.is_empty() || *range.start() == 0 {
        Err(invalid("n_f range", format!("{range:?} must be non-empty and start at 1 or more")))
    } else {
        Ok(())
    }
}

/// One [`HfuPoint`] per `n_f`, sorted by `n_f`; infeasible points included.
pub fn hfu_sweep(
    model: &ModelConfig,
    hw: &HardwareConfig,
    scenario: &ScenarioConfig,
    n_f: RangeInclusive<u32>,
) -> Result<Vec<HfuPoint>> {
    check_range(&n_f)?;
    let budget = stage_budget(scenario, model)?;
    Ok(n_f
        .into_par_iter()
        .map(|n| hfu_point(model, hw, scenario, &budget, n))
        .collect())
}

/// Best feasible point of a sweep, if any.
pub fn best_point(points: &[HfuPoint]) -> Option<&HfuPoint> {
    points
        .iter()
        .filter(|p| p.feasible)
        .max_by(|a, b| a.hfu.total_cmp(&b.hfu).then(b.n_f.cmp(&a.n_f)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntensityRow {
    pub n_f: u32,
    pub regime: Regime,
    pub rank_tokens: f64,
    pub local_experts: u32,
    pub tokens_per_expert: f64,
    /// Intensity with a fractional expert count, floored at one expert.
    pub intensity_upper_bound: f64,
    /// Intensity with the ceiling expert count.
    pub intensity_actual: f64,
    pub intensity_ub_norm: f64,
    pub intensity_actual_norm: f64,
}

/// Arithmetic intensity versus `n_f`, with both curves normalised by the
/// largest upper-bound value in the sweep.
pub fn intensity_sweep(
    model: &ModelConfig,
    hw: &HardwareConfig,
    scenario: &ScenarioConfig,
    n_f: RangeInclusive<u32>,
) -> Result<Vec<IntensityRow>> {
    check_range(&n_f)?;
    let t_b = stage_budget(scenario, model)?.stage_budget;
    let mut rows: Vec<IntensityRow> = n_f
        .into_par_iter()
        .map(|n| {
            let tp = rank_inbound_tokens(model, hw, t_b, n, scenario);
            let g = local_experts(model, hw, n);
            let exact_experts = f64::from(model.num_routed_experts)
                / (f64::from(n) * f64::from(hw.gpus_per_node));
            IntensityRow {
                n_f: n,
                regime: classify_regime(model, hw, n),
                rank_tokens: tp.rank_tokens,
                local_experts: g,
                tokens_per_expert: tp.rank_tokens / f64::from(g),
                intensity_upper_bound: 2.0 * tp.rank_tokens / exact_experts.max(1.0),
                intensity_actual: 2.0 * tp.rank_tokens / f64::from(g),
                intensity_ub_norm: 0.0,
                intensity_actual_norm: 0.0,
            }
        })
        .collect();
    let peak = rows
        .iter()
        .map(|r| r.intensity_upper_bound)
        .fold(0.0, f64::max);
    if peak > 0.0 {
        for r in &mut rows {
            r.intensity_ub_norm = r.intensity_upper_bound / peak;
            r.intensity_actual_norm = r.intensity_actual / peak;
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    EpFavored,
    AfdFavored,
    Comparable,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::EpFavored => "ep_favored",
            Verdict::AfdFavored => "afd_favored",
            Verdict::Comparable => "comparable",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Comparison {
    pub verdict: Verdict,
    /// `cap - ep_reference_hfu`.
    pub margin: f64,
}

pub fn compare_vs_ep(cap: f64, scenario: &ScenarioConfig) -> Comparison {
    let margin = cap - scenario.ep_reference_hfu;
    let verdict = if margin.abs() <= COMPARABLE_BAND {
        Verdict::Comparable
    } else if margin < 0.0 {
        Verdict::EpFavored
    } else {
        Verdict::AfdFavored
    };
    Comparison { verdict, margin }
}
