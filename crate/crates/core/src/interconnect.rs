//! Token throughput over the scale-out and scale-up fabrics, and the
//! bandwidth regime a deployment falls into.
//!
//! A token moving from attention to FFN and back costs
//! `(dispatch_width + combine_width) × H` bytes, lumped into one
//! unidirectional budget. Token counts are kept as reals.

use serde::Serialize;

use crate::configs::{HardwareConfig, ModelConfig, ScenarioConfig};
use crate::roofline::local_experts;

/// Tokens deliverable to one FFN rank within one stage budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TokenThroughput {
    pub scaleout_tokens: f64,
    pub scaleup_tokens: f64,
    pub rank_tokens: f64,
    pub bytes_per_token: f64,
}

/// Bandwidth regime, in the order they appear as `n_f` grows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeKind {
    ScaleUpBound,
    StableIntensity,
    ScaleOutBound,
    MaxIntensity,
}

impl RegimeKind {
    /// Lowercase token used in CSV output.
    pub fn as_str(self) -> &'static str {
        match self {
            RegimeKind::ScaleUpBound => "scaleup",
            RegimeKind::StableIntensity => "stable",
            RegimeKind::ScaleOutBound => "scaleout",
            RegimeKind::MaxIntensity => "max",
        }
    }
}

impl std::fmt::Display for RegimeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Regime {
    pub kind: RegimeKind,
    pub n_f: u32,
}

pub fn token_bytes(model: &ModelConfig, scenario: &ScenarioConfig) -> f64 {
    (scenario.dispatch_bytes_per_element + scenario.combine_bytes_per_element)
        * model.hidden_size as f64
        + scenario.extra_bytes_per_token
}

/// Tokens a link of `bandwidth` bytes/s moves in `t_b` seconds.
pub fn link_tokens(bandwidth: f64, t_b: f64, token_bytes: f64) -> f64 {
    bandwidth * t_b / token_bytes
}

/// Inbound token ceiling for a single FFN rank with `n_f` FFN nodes.
///
/// Each attention token fans out to `top_k / n_f` destination buffers per
/// FFN node on average, so one scale-out transfer feeds up to that many
/// scale-up forwards; the scale-up link caps the total.
pub fn rank_inbound_tokens(
    model: &ModelConfig,
    hw: &HardwareConfig,
    t_b: f64,
    n_f: u32,
    scenario: &ScenarioConfig,
) -> TokenThroughput {
    assert!(n_f >= 1, "n_f must be at least 1");
    let bytes_per_token = token_bytes(model, scenario);
    let scaleout_tokens = link_tokens(hw.effective_scaleout(), t_b, bytes_per_token);
    let scaleup_tokens = link_tokens(hw.scaleup_bandwidth, t_b, bytes_per_token);
    let rank_tokens = if hw.superpod {
        scaleup_tokens
    } else {
        let fan_out = (f64::from(model.top_k) / f64::from(n_f)).max(1.0);
        (scaleout_tokens * fan_out).min(scaleup_tokens)
    };
    TokenThroughput {
        scaleout_tokens,
        scaleup_tokens,
        rank_tokens,
        bytes_per_token,
    }
}

/// Regime for `n_f` FFN nodes. Precedence when conditions overlap:
/// max intensity, then scale-out bound, then scale-up bound, then stable.
/// Superpods have no separate scale-out fabric and only distinguish
/// scale-out bound from max intensity.
pub fn classify_regime(model: &ModelConfig, hw: &HardwareConfig, n_f: u32) -> Regime {
    assert!(n_f >= 1, "n_f must be at least 1");
    let kind = if local_experts(model, hw, n_f) == 1 {
        RegimeKind::MaxIntensity
    } else if hw.superpod || n_f >= model.top_k {
        RegimeKind::ScaleOutBound
    } else if f64::from(model.top_k) / f64::from(n_f) > hw.bandwidth_ratio() {
        RegimeKind::ScaleUpBound
    } else {
        RegimeKind::StableIntensity
    };
    Regime { kind, n_f }
}
