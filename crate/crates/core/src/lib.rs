//! Analytical capacity planning for attention-FFN disaggregated (AFD) MoE
//! inference.
//!
//! The crate answers four questions for a model/hardware pair:
//!
//! - how long each overlapped stage may take under a decode SLO ([`budget`]);
//! - how many tokens the interconnect can feed one FFN rank in that time and
//!   which bandwidth regime applies ([`interconnect`]);
//! - what FFN utilization that token feed allows ([`roofline`]);
//! - how load imbalance degrades per-node throughput compared with
//!   large-scale expert parallelism ([`imbalance`]).
//!
//! [`pipeline_sim`] checks the micro-batch overlap reasoning against an
//! event-level schedule.

pub mod budget;
pub mod configs;
pub mod error;
pub mod imbalance;
pub mod interconnect;
pub mod pipeline_sim;
pub mod roofline;

pub use budget::{run_batch_latency, stage_budget, Budget};
pub use configs::{
    derived_metrics, hardware_preset, load_config, model_preset, preset, AnyConfig,
    DerivedMetrics, HardwareConfig, ModelConfig, Preset, ScenarioConfig,
};
pub use error::{ConfigError, Error, Result};
pub use imbalance::{
    alpha_afd_discrete, alpha_afd_exact, alpha_afd_oracle, alpha_ep, dp_penalty, penalty_sweep,
    DpMode, ImbalanceQuery, PenaltyPoint,
};
pub use interconnect::{
    classify_regime, link_tokens, rank_inbound_tokens, token_bytes, Regime, RegimeKind,
    TokenThroughput,
};
pub use pipeline_sim::{
    jitter_sensitivity, no_bubble_conditions, simulate, BoMode, JitterKind, Resource, SimResult,
    SimSpec, StageTiming,
};
pub use roofline::{
    compare_vs_ep, hfu_cap_closed_form, hfu_point, hfu_sweep, intensity_sweep, local_experts,
    Binding, GemmWorkload, HfuPoint, Verdict,
};
