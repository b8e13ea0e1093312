//! Model, hardware and scenario configurations.
//!
//! All rates and capacities are stored in base SI units: bytes, bytes per
//! second, FLOPs per second and seconds. The preset registry converts the
//! vendor datasheet figures (TFLOPS, TB/s, GB, GB/s) with exact decimal
//! scaling.
//!
//! Config documents are JSON objects whose keys are exactly the field names
//! of the corresponding struct. Loading goes through [`Record`] rather than a
//! plain `serde` derive so that every failure names the offending key.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::ConfigError;

const TERA: f64 = 1e12;
const GIGA: f64 = 1e9;

/// MoE architecture parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub name: String,
    /// Hidden size `H`.
    pub hidden_size: u64,
    pub num_layers: u32,
    pub num_dense_layers: u32,
    pub num_moe_layers: u32,
    pub num_routed_experts: u32,
    pub top_k: u32,
    /// MoE intermediate size `M`.
    pub moe_intermediate: u64,
}

/// Per-GPU compute, memory and network parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardwareConfig {
    pub name: String,
    /// Peak dense FP8 throughput, FLOPs/s.
    pub peak_fp8: f64,
    /// HBM bandwidth, bytes/s.
    pub mem_bandwidth: f64,
    /// HBM capacity, bytes.
    pub mem_capacity: f64,
    /// Amortized scale-out (NIC) bandwidth per GPU, bytes/s, unidirectional.
    pub scaleout_bandwidth: f64,
    /// Scale-up (NVLink-class) bandwidth per GPU, bytes/s, unidirectional.
    pub scaleup_bandwidth: f64,
    pub gpus_per_node: u32,
    /// The scale-up domain spans the whole deployment.
    pub superpod: bool,
}

impl HardwareConfig {
    /// Scale-out bandwidth as seen by the token-throughput model. On a
    /// superpod every peer is reachable over the scale-up fabric.
    pub fn effective_scaleout(&self) -> f64 {
        if self.superpod {
            self.scaleup_bandwidth
        } else {
            self.scaleout_bandwidth
        }
    }

    /// Scale-up to scale-out bandwidth ratio.
    pub fn bandwidth_ratio(&self) -> f64 {
        self.scaleup_bandwidth / self.effective_scaleout()
    }

    /// Roofline ridge point in FLOPs per byte.
    pub fn ridge_intensity(&self) -> f64 {
        self.peak_fp8 / self.mem_bandwidth
    }
}

/// Serving scenario: SLO, speculative acceptance, gap budget and the
/// constants shared by every analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    /// Time per output token target, seconds.
    pub slo_tpot: f64,
    /// Average accepted tokens per decode step (1 without MTP).
    pub l_accept: f64,
    /// Inter-batch gap plus non-overlapped layers, seconds.
    pub t_gap: f64,
    pub n_bo: u32,
    pub dispatch_bytes_per_element: f64,
    pub combine_bytes_per_element: f64,
    /// Routing metadata carried with each token, bytes. Zero by default.
    pub extra_bytes_per_token: f64,
    pub ep_reference_hfu: f64,
    pub memory_reserve_fraction: f64,
    pub gemm_efficiency: f64,
}

impl ScenarioConfig {
    pub const DEFAULT_N_BO: u32 = 3;
    pub const DEFAULT_EP_REFERENCE_HFU: f64 = 0.60;
    pub const DEFAULT_MEMORY_RESERVE: f64 = 0.8;

    /// Scenario with every optional field at its default.
    pub fn new(slo_tpot: f64, l_accept: f64, t_gap: f64) -> Self {
        Self {
            slo_tpot,
            l_accept,
            t_gap,
            n_bo: Self::DEFAULT_N_BO,
            dispatch_bytes_per_element: 1.0,
            combine_bytes_per_element: 2.0,
            extra_bytes_per_token: 0.0,
            ep_reference_hfu: Self::DEFAULT_EP_REFERENCE_HFU,
            memory_reserve_fraction: Self::DEFAULT_MEMORY_RESERVE,
            gemm_efficiency: 1.0,
        }
    }

    pub fn with_n_bo(mut self, n_bo: u32) -> Self {
        self.n_bo = n_bo;
        self
    }

    pub fn with_gemm_efficiency(mut self, efficiency: f64) -> Self {
        self.gemm_efficiency = efficiency;
        self
    }
}

/// Sparsity and granularity of an MoE layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DerivedMetrics {
    /// Routed experts per activated expert.
    pub sparsity: f64,
    /// Hidden size over expert intermediate size.
    pub granularity: f64,
}

pub fn derived_metrics(model: &ModelConfig) -> DerivedMetrics {
    DerivedMetrics {
        sparsity: f64::from(model.num_routed_experts) / f64::from(model.top_k),
        granularity: model.hidden_size as f64 / model.moe_intermediate as f64,
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        non_empty("name", &self.name)?;
        positive_int("hidden_size", self.hidden_size)?;
        positive_int("num_layers", u64::from(self.num_layers))?;
        positive_int("num_moe_layers", u64::from(self.num_moe_layers))?;
        positive_int("num_routed_experts", u64::from(self.num_routed_experts))?;
        positive_int("top_k", u64::from(self.top_k))?;
        positive_int("moe_intermediate", self.moe_intermediate)?;
        if self.num_dense_layers + self.num_moe_layers != self.num_layers {
            return Err(ConfigError::LayerMismatch {
                num_layers: self.num_layers,
                num_dense_layers: self.num_dense_layers,
                num_moe_layers: self.num_moe_layers,
            });
        }
        if self.top_k > self.num_routed_experts {
            return Err(ConfigError::OutOfRange {
                key: "top_k",
                reason: format!(
                    "{} exceeds num_routed_experts {}",
                    self.top_k, self.num_routed_experts
                ),
            });
        }
        Ok(())
    }

    pub fn from_json(document: &str) -> Result<Self, ConfigError> {
        let mut rec = Record::parse(document)?;
        let cfg = Self {
            name: rec.string("name")?,
            hidden_size: rec.uint("hidden_size")?,
            num_layers: rec.uint32("num_layers")?,
            num_dense_layers: rec.uint32("num_dense_layers")?,
            num_moe_layers: rec.uint32("num_moe_layers")?,
            num_routed_experts: rec.uint32("num_routed_experts")?,
            top_k: rec.uint32("top_k")?,
            moe_intermediate: rec.uint("moe_intermediate")?,
        };
        rec.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }
}

impl HardwareConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        non_empty("name", &self.name)?;
        positive("peak_fp8", self.peak_fp8)?;
        positive("mem_bandwidth", self.mem_bandwidth)?;
        positive("mem_capacity", self.mem_capacity)?;
        positive("scaleout_bandwidth", self.scaleout_bandwidth)?;
        positive("scaleup_bandwidth", self.scaleup_bandwidth)?;
        positive_int("gpus_per_node", u64::from(self.gpus_per_node))?;
        Ok(())
    }

    pub fn from_json(document: &str) -> Result<Self, ConfigError> {
        let mut rec = Record::parse(document)?;
        let cfg = Self {
            name: rec.string("name")?,
            peak_fp8: rec.number("peak_fp8")?,
            mem_bandwidth: rec.number("mem_bandwidth")?,
            mem_capacity: rec.number("mem_capacity")?,
            scaleout_bandwidth: rec.number("scaleout_bandwidth")?,
            scaleup_bandwidth: rec.number("scaleup_bandwidth")?,
            gpus_per_node: rec.uint32("gpus_per_node")?,
            superpod: rec.boolean("superpod")?,
        };
        rec.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        positive("slo_tpot", self.slo_tpot)?;
        if !(self.l_accept.is_finite() && self.l_accept >= 1.0) {
            return Err(ConfigError::OutOfRange {
                key: "l_accept",
                reason: format!("{} is below 1", self.l_accept),
            });
        }
        if !(self.t_gap.is_finite() && self.t_gap >= 0.0) {
            return Err(ConfigError::NonPositive { key: "t_gap" });
        }
        positive_int("n_bo", u64::from(self.n_bo))?;
        positive("dispatch_bytes_per_element", self.dispatch_bytes_per_element)?;
        positive("combine_bytes_per_element", self.combine_bytes_per_element)?;
        if !(self.extra_bytes_per_token.is_finite() && self.extra_bytes_per_token >= 0.0) {
            return Err(ConfigError::NonPositive {
                key: "extra_bytes_per_token",
            });
        }
        unit_fraction("ep_reference_hfu", self.ep_reference_hfu)?;
        unit_fraction("memory_reserve_fraction", self.memory_reserve_fraction)?;
        unit_fraction("gemm_efficiency", self.gemm_efficiency)?;
        Ok(())
    }

    pub fn from_json(document: &str) -> Result<Self, ConfigError> {
        let mut rec = Record::parse(document)?;
        let mut cfg = Self::new(
            rec.number("slo_tpot")?,
            rec.number("l_accept")?,
            rec.number("t_gap")?,
        );
        if let Some(v) = rec.optional_uint32("n_bo")? {
            cfg.n_bo = v;
        }
        if let Some(v) = rec.optional_number("dispatch_bytes_per_element")? {
            cfg.dispatch_bytes_per_element = v;
        }
        if let Some(v) = rec.optional_number("combine_bytes_per_element")? {
            cfg.combine_bytes_per_element = v;
        }
        if let Some(v) = rec.optional_number("extra_bytes_per_token")? {
            cfg.extra_bytes_per_token = v;
        }
        if let Some(v) = rec.optional_number("ep_reference_hfu")? {
            cfg.ep_reference_hfu = v;
        }
        if let Some(v) = rec.optional_number("memory_reserve_fraction")? {
            cfg.memory_reserve_fraction = v;
        }
        if let Some(v) = rec.optional_number("gemm_efficiency")? {
            cfg.gemm_efficiency = v;
        }
        rec.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Any of the three config kinds, as recognised by [`load_config`].
#[derive(Debug, Clone, PartialEq)]
pub enum AnyConfig {
    Model(ModelConfig),
    Hardware(HardwareConfig),
    Scenario(ScenarioConfig),
}

/// Load and validate a config document, inferring its kind from the keys it
/// carries (`hidden_size`, `peak_fp8` or `slo_tpot`).
pub fn load_config(document: &str) -> Result<AnyConfig, ConfigError> {
    let rec = Record::parse(document)?;
    if rec.has("hidden_size") {
        ModelConfig::from_json(document).map(AnyConfig::Model)
    } else if rec.has("peak_fp8") {
        HardwareConfig::from_json(document).map(AnyConfig::Hardware)
    } else if rec.has("slo_tpot") {
        ScenarioConfig::from_json(document).map(AnyConfig::Scenario)
    } else {
        Err(ConfigError::UnknownKind)
    }
}

/// A preset entry: either a model or a hardware row.
#[derive(Debug, Clone, PartialEq)]
pub enum Preset {
    Model(ModelConfig),
    Hardware(HardwareConfig),
}

pub const MODEL_PRESETS: [&str; 6] = [
    "deepseek-v3",
    "kimi-k2",
    "step3",
    "qwen3-coder",
    "ernie-4.5",
    "glm-4.7",
];

pub const HARDWARE_PRESETS: [&str; 8] =
    ["h20", "h100", "h200", "h800", "b200", "b300", "gb200", "gb300"];

pub fn preset(name: &str) -> Result<Preset, ConfigError> {
    if let Some(m) = model_preset(name) {
        Ok(Preset::Model(m))
    } else if let Some(h) = hardware_preset(name) {
        Ok(Preset::Hardware(h))
    } else {
        Err(ConfigError::UnknownPreset(name.to_string()))
    }
}

#[allow(clippy::too_many_arguments)]
fn model(
    name: &str,
    hidden_size: u64,
    num_layers: u32,
    num_dense_layers: u32,
    num_moe_layers: u32,
    num_routed_experts: u32,
    top_k: u32,
    moe_intermediate: u64,
) -> ModelConfig {
    ModelConfig {
        name: name.to_string(),
        hidden_size,
        num_layers,
        num_dense_layers,
        num_moe_layers,
        num_routed_experts,
        top_k,
        moe_intermediate,
    }
}

pub fn model_preset(name: &str) -> Option<ModelConfig> {
    let m = match name {
        "deepseek-v3" => model(name, 7168, 61, 3, 58, 256, 8, 2048),
        "kimi-k2" => model(name, 7168, 61, 1, 60, 384, 8, 2048),
        "step3" => model(name, 7168, 61, 5, 56, 48, 3, 5120),
        "qwen3-coder" => model(name, 6144, 62, 0, 62, 160, 8, 2560),
        "ernie-4.5" => model(name, 8192, 54, 3, 51, 64, 8, 3584),
        // The published row lists 92 MoE layers next to 92 total and 3
        // dense; the checkpoint has 89 MoE layers.
        "glm-4.7" => model(name, 5120, 92, 3, 89, 160, 8, 1536),
        _ => return None,
    };
    Some(m)
}

/// Datasheet row: TFLOPS, TB/s, GB, GB/s (scale-out), GB/s (scale-up).
fn hardware(
    name: &str,
    tflops: f64,
    mem_tbps: f64,
    mem_gb: f64,
    scaleout_gbps: Option<f64>,
    scaleup_gbps: f64,
    gpus_per_node: u32,
) -> HardwareConfig {
    HardwareConfig {
        name: name.to_string(),
        peak_fp8: tflops * TERA,
        mem_bandwidth: mem_tbps * TERA,
        mem_capacity: mem_gb * GIGA,
        scaleout_bandwidth: scaleout_gbps.unwrap_or(scaleup_gbps) * GIGA,
        scaleup_bandwidth: scaleup_gbps * GIGA,
        gpus_per_node,
        superpod: scaleout_gbps.is_none(),
    }
}

pub fn hardware_preset(name: &str) -> Option<HardwareConfig> {
    let h = match name {
        "h20" => hardware(name, 296.0, 4.0, 96.0, Some(50.0), 360.0, 8),
        "h100" => hardware(name, 1979.0, 3.35, 80.0, Some(50.0), 360.0, 8),
        "h200" => hardware(name, 1979.0, 4.0, 141.0, Some(50.0), 360.0, 8),
        "h800" => hardware(name, 1979.0, 3.35, 80.0, Some(50.0), 160.0, 8),
        "b200" => hardware(name, 4500.0, 7.7, 180.0, Some(50.0), 720.0, 8),
        "b300" => hardware(name, 4500.0, 8.0, 270.0, Some(100.0), 720.0, 8),
        // NVL72 compute trays carry four GPUs each.
        "gb200" => hardware(name, 4500.0, 7.7, 180.0, None, 720.0, 4),
        "gb300" => hardware(name, 4500.0, 8.0, 270.0, None, 720.0, 4),
        _ => return None,
    };
    Some(h)
}

/// Key-by-key view over a JSON object that tracks which keys were consumed.
#[derive(Debug)]
pub struct Record {
    fields: Map<String, Value>,
}

impl Record {
    pub fn parse(document: &str) -> Result<Self, ConfigError> {
        match serde_json::from_str::<Value>(document) {
            Ok(Value::Object(fields)) => Ok(Self { fields }),
            Ok(_) => Err(ConfigError::Malformed("document is not an object".into())),
            Err(e) => Err(ConfigError::Malformed(e.to_string())),
        }
    }

    fn has(&self, key: &str) -> bool {
        self.fields.contains_key(key)
    }

    fn take(&mut self, key: &'static str) -> Result<Value, ConfigError> {
        self.fields
            .remove(key)
            .ok_or(ConfigError::MissingField(key))
    }

    fn string(&mut self, key: &'static str) -> Result<String, ConfigError> {
        match self.take(key)? {
            Value::String(s) => Ok(s),
            _ => Err(ConfigError::WrongType { key, expected: "string" }),
        }
    }

    fn boolean(&mut self, key: &'static str) -> Result<bool, ConfigError> {
        match self.take(key)? {
            Value::Bool(b) => Ok(b),
            _ => Err(ConfigError::WrongType { key, expected: "boolean" }),
        }
    }

    fn number(&mut self, key: &'static str) -> Result<f64, ConfigError> {
        let v = self.take(key)?;
        v.as_f64()
            .ok_or(ConfigError::WrongType { key, expected: "number" })
    }

    fn uint(&mut self, key: &'static str) -> Result<u64, ConfigError> {
        let v = self.take(key)?;
        if let Some(u) = v.as_u64() {
            return Ok(u);
        }
        match v.as_f64() {
            Some(x) if x <= 0.0 => Err(ConfigError::NonPositive { key }),
            _ => Err(ConfigError::WrongType {
                key,
                expected: "non-negative integer",
            }),
        }
    }

    fn uint32(&mut self, key: &'static str) -> Result<u32, ConfigError> {
        let v = self.uint(key)?;
        u32::try_from(v).map_err(|_| ConfigError::OutOfRange {
            key,
            reason: format!("{v} does not fit in 32 bits"),
        })
    }

    fn optional_number(&mut self, key: &'static str) -> Result<Option<f64>, ConfigError> {
        if self.has(key) {
            self.number(key).map(Some)
        } else {
            Ok(None)
        }
    }

    fn optional_uint32(&mut self, key: &'static str) -> Result<Option<u32>, ConfigError> {
        if self.has(key) {
            self.uint32(key).map(Some)
        } else {
            Ok(None)
        }
    }

    /// Reject keys that no field consumed.
    fn finish(self) -> Result<(), ConfigError> {
        match self.fields.keys().next() {
            Some(k) => Err(ConfigError::UnknownField(k.clone())),
            None => Ok(()),
        }
    }
}

fn non_empty(key: &'static str, v: &str) -> Result<(), ConfigError> {
    if v.trim().is_empty() {
        Err(ConfigError::OutOfRange {
            key,
            reason: "empty identifier".into(),
        })
    } else {
        Ok(())
    }
}

fn positive(key: &'static str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(ConfigError::NonPositive { key })
    }
}

fn positive_int(key: &'static str, v: u64) -> Result<(), ConfigError> {
    if v > 0 {
        Ok(())
    } else {
        Err(ConfigError::NonPositive { key })
    }
}

fn unit_fraction(key: &'static str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v > 0.0 && v <= 1.0 {
        Ok(())
    } else {
        Err(ConfigError::OutOfRange {
            key,
            reason: format!("{v} is outside (0, 1]"),
        })
    }
}
