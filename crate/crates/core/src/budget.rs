//! Latency budget derived from the decode SLO.
//!
//! The run-batch latency `T = slo × l_accept` is split into a fixed gap
//! `t_gap` plus `n_layers × n_bo` equal stage slots of length `t_B`. Only
//! MoE layers run overlapped; dense layers are accounted inside `t_gap`.

use serde::Serialize;

use crate::configs::{ModelConfig, ScenarioConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Budget {
    /// `T`, seconds.
    pub run_batch_latency: f64,
    /// `t_B`, seconds per micro-batch per stage.
    pub stage_budget: f64,
    pub t_gap: f64,
    pub n_overlap_layers: u32,
    pub n_bo: u32,
}

impl Budget {
    /// `t_gap + n_layers × n_bo × t_B`, which should give back `T`.
    pub fn reconstruct(&self) -> f64 {
        self.t_gap + f64::from(self.n_overlap_layers * self.n_bo) * self.stage_budget
    }

    /// Whether every stage fits its slot: `max(t_a, t_f, t_c) <= t_B`.
    pub fn admits(&self, t_a: f64, t_f: f64, t_c: f64) -> bool {
        t_a.max(t_f).max(t_c) <= self.stage_budget
    }
}

pub fn run_batch_latency(scenario: &ScenarioConfig) -> f64 {
    scenario.slo_tpot * scenario.l_accept
}

pub fn stage_budget(scenario: &ScenarioConfig, model: &ModelConfig) -> Result<Budget> {
    budget_for_layers(scenario, model.num_moe_layers)
}

/// Same as [`stage_budget`] for an explicit overlapped-layer count.
pub fn budget_for_layers(scenario: &ScenarioConfig, n_overlap_layers: u32) -> Result<Budget> {
    let run_batch_latency = run_batch_latency(scenario);
    if run_batch_latency <= scenario.t_gap {
        return Err(Error::NonPositiveBudget {
            run_batch_latency,
            t_gap: scenario.t_gap,
        });
    }
    if n_overlap_layers == 0 || scenario.n_bo == 0 {
        return Err(crate::error::invalid(
            "n_overlap_layers",
            "layer count and n_bo must be positive",
        ));
    }
    let slots = f64::from(n_overlap_layers * scenario.n_bo);
    Ok(Budget {
        run_batch_latency,
        stage_budget: (run_batch_latency - scenario.t_gap) / slots,
        t_gap: scenario.t_gap,
        n_overlap_layers,
        n_bo: scenario.n_bo,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::configs::model_preset;
    use proptest::prelude::*;

    fn ulps_apart(a: f64, b: f64) -> u64 {
        (a.to_bits() as i64 - b.to_bits() as i64).unsigned_abs()
    }

    #[test]
    fn run_batch_latency_examples() {
        let close = |a: f64, b: f64| (a - b).abs() < 1e-15;
        assert!(close(run_batch_latency(&ScenarioConfig::new(0.050, 1.7, 0.0)), 0.085));
        assert_eq!(run_batch_latency(&ScenarioConfig::new(0.050, 1.0, 0.0)), 0.050);
        assert!(close(run_batch_latency(&ScenarioConfig::new(0.030, 2.0, 0.0)), 0.060));
    }

    #[test]
    fn deepseek_and_kimi_stage_budgets() {
        let s = ScenarioConfig::new(0.050, 1.7, 0.015);
        let b = stage_budget(&s, &model_preset("deepseek-v3").unwrap()).unwrap();
        assert!((b.stage_budget - 0.070 / 174.0).abs() < 1e-15);
        assert!((b.stage_budget * 1e6 - 402.2989).abs() < 1e-3);
        assert!(ulps_apart(b.reconstruct(), b.run_batch_latency) <= 1);

        let b = stage_budget(&s, &model_preset("kimi-k2").unwrap()).unwrap();
        assert!((b.stage_budget * 1e6 - 388.8889).abs() < 1e-3);
    }

    #[test]
    fn gap_equal_to_latency_is_infeasible() {
        let s = ScenarioConfig::new(0.050, 1.7, 0.050 * 1.7);
        let err = stage_budget(&s, &model_preset("deepseek-v3").unwrap()).unwrap_err();
        assert!(matches!(err, Error::NonPositiveBudget { .. }));
    }

    #[test]
    fn admits_checks_every_stage() {
        let b = budget_for_layers(&ScenarioConfig::new(0.05, 1.0, 0.02), 10).unwrap();
        let t = b.stage_budget;
        assert!(b.admits(t, t, 0.8 * t));
        assert!(!b.admits(t, t, 1.01 * t));
    }

    proptest! {
        #[test]
        fn reconstruction_within_one_ulp(
            slo in 0.005f64..0.2, l_accept in 1.0f64..4.0, gap_frac in 0.0f64..0.95,
            layers in 1u32..128, n_bo in 1u32..6,
        ) {
            let t_gap = slo * l_accept * gap_frac;
            let s = ScenarioConfig::new(slo, l_accept, t_gap).with_n_bo(n_bo);
            let b = budget_for_layers(&s, layers).unwrap();
            prop_assert!(b.stage_budget > 0.0);
            prop_assert!(ulps_apart(b.reconstruct(), b.run_batch_latency) <= 1);
        }

        #[test]
        fn budget_monotonicity(
            slo in 0.01f64..0.1, l_accept in 1.0f64..3.0, layers in 2u32..100, n_bo in 2u32..5,
        ) {
            let s = ScenarioConfig::new(slo, l_accept, 0.005).with_n_bo(n_bo);
            let base = budget_for_layers(&s, layers).unwrap().stage_budget;
            prop_assert!(budget_for_layers(&s, layers + 1).unwrap().stage_budget < base);
            let more_bo = s.clone().with_n_bo(n_bo + 1);
            prop_assert!(budget_for_layers(&more_bo, layers).unwrap().stage_budget < base);
            let looser = ScenarioConfig::new(slo * 1.01, l_accept, 0.005).with_n_bo(n_bo);
            prop_assert!(budget_for_layers(&looser, layers).unwrap().stage_budget > base);
            let more_accept = ScenarioConfig::new(slo, l_accept * 1.01, 0.005).with_n_bo(n_bo);
            prop_assert!(budget_for_layers(&more_accept, layers).unwrap().stage_budget > base);
        }
    }
}
