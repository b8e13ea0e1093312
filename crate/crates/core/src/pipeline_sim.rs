//! Discrete-event simulation of micro-batch overlap pipelines.
//!
//! Four single-server resources: the attention stream, the dispatch
//! channel, the FFN stream and the combine channel. Every micro-batch walks
//! `attention → dispatch → ffn → combine` per layer, then moves on to the
//! next layer's attention. A free resource takes the queued item with the
//! earliest ready time, ties broken by `(layer, micro-batch)`.
//!
//! Time is kept in integer picoseconds so that schedules which should abut
//! exactly do so; results are reported in seconds.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::budget::Budget;
use crate::error::{invalid, Error, Result};

type Ticks = u64;

const TICKS_PER_SECOND: f64 = 1e12;

fn to_ticks(seconds: f64) -> Ticks {
    (seconds * TICKS_PER_SECOND).round() as Ticks
}

fn to_seconds(ticks: Ticks) -> f64 {
    ticks as f64 / TICKS_PER_SECOND
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Resource {
    Attention,
    Dispatch,
    Ffn,
    Combine,
}

impl Resource {
    pub const ALL: [Resource; 4] = [
        Resource::Attention,
        Resource::Dispatch,
        Resource::Ffn,
        Resource::Combine,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Resource::Attention => "attention",
            Resource::Dispatch => "dispatch",
            Resource::Ffn => "ffn",
            Resource::Combine => "combine",
        }
    }

    fn index(self) -> usize {
        self as usize
    }

    /// The stage that follows this one for the same micro-batch.
    fn next(self) -> Option<Resource> {
        match self {
            Resource::Attention => Some(Resource::Dispatch),
            Resource::Dispatch => Some(Resource::Ffn),
            Resource::Ffn => Some(Resource::Combine),
            Resource::Combine => None,
        }
    }
}

/// Per-layer stage durations for one micro-batch, seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StageTiming {
    pub t_a: f64,
    pub t_dispatch: f64,
    pub t_f: f64,
    pub t_combine: f64,
}

impl StageTiming {
    pub fn new(t_a: f64, t_dispatch: f64, t_f: f64, t_combine: f64) -> Self {
        Self {
            t_a,
            t_dispatch,
            t_f,
            t_combine,
        }
    }

    /// Total communication time `t_c = t_dispatch + t_combine`.
    pub fn t_c(&self) -> f64 {
        self.t_dispatch + self.t_combine
    }

    pub fn duration(&self, resource: Resource) -> f64 {
        match resource {
            Resource::Attention => self.t_a,
            Resource::Dispatch => self.t_dispatch,
            Resource::Ffn => self.t_f,
            Resource::Combine => self.t_combine,
        }
    }

    pub fn with_duration(mut self, resource: Resource, seconds: f64) -> Self {
        match resource {
            Resource::Attention => self.t_a = seconds,
            Resource::Dispatch => self.t_dispatch = seconds,
            Resource::Ffn => self.t_f = seconds,
            Resource::Combine => self.t_combine = seconds,
        }
        self
    }

    fn validate(&self) -> Result<()> {
        for r in Resource::ALL {
            let d = self.duration(r);
            if !(d.is_finite() && d >= 0.0) {
                return Err(invalid("timings", format!("{} duration {d} is negative", r.as_str())));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BoMode {
    #[serde(rename = "nbo")]
    Nbo,
    #[serde(rename = "2bo")]
    TwoBo,
    #[serde(rename = "3bo")]
    ThreeBo,
}

impl BoMode {
    pub fn microbatches(self) -> u32 {
        match self {
            BoMode::Nbo => 1,
            BoMode::TwoBo => 2,
            BoMode::ThreeBo => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BoMode::Nbo => "nbo",
            BoMode::TwoBo => "2bo",
            BoMode::ThreeBo => "3bo",
        }
    }
}

impl std::str::FromStr for BoMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "nbo" | "1bo" => Ok(BoMode::Nbo),
            "2bo" | "twobo" => Ok(BoMode::TwoBo),
            "3bo" | "threebo" => Ok(BoMode::ThreeBo),
            other => Err(format!("unknown overlap mode `{other}` (expected nbo, 2bo or 3bo)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum JitterKind {
    None,
    /// Factor drawn uniformly from `[1 - m, 1 + m]`.
    UniformFraction,
    /// Mean-one log-normal factor with log-space standard deviation `m`.
    LogNormal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Jitter {
    pub kind: JitterKind,
    pub magnitude: f64,
    pub seed: u64,
}

impl Jitter {
    pub const NONE: Jitter = Jitter {
        kind: JitterKind::None,
        magnitude: 0.0,
        seed: 0,
    };

    fn validate(&self) -> Result<()> {
        let ok = match self.kind {
            JitterKind::None => true,
            JitterKind::UniformFraction => (0.0..=1.0).contains(&self.magnitude),
            JitterKind::LogNormal => self.magnitude.is_finite() && self.magnitude >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(invalid("jitter", format!("magnitude {} out of range", self.magnitude)))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimSpec {
    pub mode: BoMode,
    pub n_layers: u32,
    pub n_microbatches: u32,
    pub timings: StageTiming,
    pub jitter: Jitter,
    pub budget: Option<Budget>,
}

impl SimSpec {
    pub fn new(mode: BoMode, n_layers: u32, timings: StageTiming) -> Self {
        Self {
            mode,
            n_layers,
            n_microbatches: mode.microbatches(),
            timings,
            jitter: Jitter::NONE,
            budget: None,
        }
    }

    pub fn with_jitter(mut self, kind: JitterKind, magnitude: f64, seed: u64) -> Self {
        self.jitter = Jitter {
            kind,
            magnitude,
            seed,
        };
        self
    }

    pub fn with_budget(mut self, budget: Budget) -> Self {
        self.budget = Some(budget);
        self
    }

    fn validate(&self) -> Result<()> {
        let expected = self.mode.microbatches();
        if self.n_microbatches != expected {
            return Err(Error::MicrobatchCount {
                mode: self.mode.as_str(),
                expected,
                got: self.n_microbatches,
            });
        }
        if self.n_layers == 0 {
            return Err(invalid("n_layers", "must be at least 1"));
        }
        self.timings.validate()?;
        self.jitter.validate()
    }

    /// Budget the SLO check runs against: the configured one, or otherwise
    /// the tightest budget the timings admit (`t_B = max(t_a, t_f, t_c)`,
    /// no gap).
    pub fn reference_budget(&self) -> Budget {
        self.budget.unwrap_or_else(|| {
            let t = &self.timings;
            let stage_budget = t.t_a.max(t.t_f).max(t.t_c());
            let n_bo = self.n_microbatches;
            Budget {
                run_batch_latency: f64::from(self.n_layers * n_bo) * stage_budget,
                stage_budget,
                t_gap: 0.0,
                n_overlap_layers: self.n_layers,
                n_bo,
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceEntry {
    pub resource: Resource,
    pub microbatch: u32,
    pub layer: u32,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Bubble {
    pub resource: Resource,
    pub start: f64,
    pub duration: f64,
}

/// Occupancy of one resource.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResourceStats {
    pub busy: f64,
    /// `busy / makespan`.
    pub utilization: f64,
    /// From the resource's first start to its last end.
    pub active_window: f64,
    pub bubble_total: f64,
    /// Steady-state window: from the first layer-1 item to the first item
    /// of the last layer. Equals the active window with fewer than 3 layers.
    pub interior_window: f64,
    pub interior_busy: f64,
    pub interior_utilization: f64,
    pub interior_bubble_total: f64,
    /// Interior idle time per interior layer.
    pub interior_bubble_per_layer: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimResult {
    /// End of the last combine of the last layer, seconds from start.
    pub makespan: f64,
    /// End of the last attention item: the overlapped-forward span the
    /// budget's `n_layers × n_bo × t_B` term accounts for.
    pub attention_span: f64,
    pub resources: BTreeMap<Resource, ResourceStats>,
    pub bubbles: Vec<Bubble>,
    pub slo_violation: bool,
    pub trace: Vec<TraceEntry>,
}

impl SimResult {
    pub fn stats(&self, resource: Resource) -> &ResourceStats {
        &self.resources[&resource]
    }

    /// Idle time of the attention and FFN streams within their active
    /// windows.
    pub fn compute_bubble_total(&self) -> f64 {
        self.stats(Resource::Attention).bubble_total + self.stats(Resource::Ffn).bubble_total
    }
}

#[derive(Debug, Clone, Copy)]
struct Interval {
    layer: u32,
    mb: u32,
    start: Ticks,
    end: Ticks,
}

fn draw_durations(spec: &SimSpec) -> Vec<[Ticks; 4]> {
    let n = (spec.n_layers * spec.n_microbatches) as usize;
    let base = Resource::ALL.map(|r| spec.timings.duration(r));
    let mut rng = ChaCha8Rng::seed_from_u64(spec.jitter.seed);
    let m = spec.jitter.magnitude;
    let lognormal = match spec.jitter.kind {
        JitterKind::LogNormal if m > 0.0 => Some(LogNormal::new(-0.5 * m * m, m).expect("sigma >= 0")),
        _ => None,
    };
    (0..n)
        .map(|_| {
            base.map(|d| {
                let factor = match spec.jitter.kind {
                    JitterKind::None => 1.0,
                    JitterKind::UniformFraction if m > 0.0 => rng.gen_range(1.0 - m..=1.0 + m),
                    JitterKind::UniformFraction => 1.0,
                    JitterKind::LogNormal => lognormal.map_or(1.0, |ln| ln.sample(&mut rng)),
                };
                to_ticks(d * factor)
            })
        })
        .collect()
}

/// Run one simulation.
pub fn simulate(spec: &SimSpec) -> Result<SimResult> {
    spec.validate()?;
    let n_mb = spec.n_microbatches;
    let n_layers = spec.n_layers;
    // Indexed by layer * n_mb + mb; drawn in a fixed order for determinism.
    let durations = draw_durations(spec);
    let duration = |r: Resource, layer: u32, mb: u32| durations[(layer * n_mb + mb) as usize][r.index()];

    let mut queues: [Vec<(Ticks, u32, u32)>; 4] = Default::default();
    let mut running: [Option<Interval>; 4] = [None; 4];
    let mut done: [Vec<Interval>; 4] = Default::default();
    let mut trace = Vec::with_capacity((n_layers * n_mb * 4) as usize);
    queues[Resource::Attention.index()].extend((0..n_mb).map(|mb| (0, 0, mb)));
    let mut now: Ticks = 0;

    loop {
        for r in Resource::ALL {
            let i = r.index();
            if running[i].is_some() || queues[i].is_empty() {
                continue;
            }
            let pick = queues[i]
                .iter()
                .enumerate()
                .min_by_key(|(_, item)| **item)
                .map(|(k, _)| k)
                .expect("non-empty queue");
            let (_, layer, mb) = queues[i].swap_remove(pick);
            running[i] = Some(Interval {
                layer,
                mb,
                start: now,
                end: now + duration(r, layer, mb),
            });
        }

        let Some(next) = running.iter().flatten().map(|iv| iv.end).min() else {
            break;
        };
        now = next;
        for r in Resource::ALL {
            let i = r.index();
            let Some(iv) = running[i].filter(|iv| iv.end == now) else {
                continue;
            };
            running[i] = None;
            done[i].push(iv);
            trace.push(TraceEntry {
                resource: r,
                microbatch: iv.mb,
                layer: iv.layer,
                start: to_seconds(iv.start),
                end: to_seconds(iv.end),
            });
            match r.next() {
                Some(succ) => queues[succ.index()].push((now, iv.layer, iv.mb)),
                None if iv.layer + 1 < n_layers => {
                    queues[Resource::Attention.index()].push((now, iv.layer + 1, iv.mb))
                }
                None => {}
            }
        }
    }

    let makespan_ticks = done[Resource::Combine.index()]
        .iter()
        .map(|iv| iv.end)
        .max()
        .unwrap_or(0);
    let attention_span_ticks = done[Resource::Attention.index()]
        .iter()
        .map(|iv| iv.end)
        .max()
        .unwrap_or(0);

    let mut bubbles = Vec::new();
    let mut resources = BTreeMap::new();
    for r in Resource::ALL {
        let intervals = &mut done[r.index()];
        intervals.sort_by_key(|iv| (iv.start, iv.end));
        let stats = resource_stats(r, intervals, n_layers, makespan_ticks, &mut bubbles);
        resources.insert(r, stats);
    }
    trace.sort_by(|a, b| {
        a.start
            .total_cmp(&b.start)
            .then(a.resource.cmp(&b.resource))
            .then(a.layer.cmp(&b.layer))
            .then(a.microbatch.cmp(&b.microbatch))
    });

    let budget = spec.reference_budget();
    let allowed = budget.run_batch_latency - budget.t_gap;
    let attention_span = to_seconds(attention_span_ticks);
    Ok(SimResult {
        makespan: to_seconds(makespan_ticks),
        attention_span,
        resources,
        bubbles,
        slo_violation: attention_span > allowed * (1.0 + 1e-9),
        trace,
    })
}

fn resource_stats(
    resource: Resource,
    intervals: &[Interval],
    n_layers: u32,
    makespan: Ticks,
    bubbles: &mut Vec<Bubble>,
) -> ResourceStats {
    let busy: Ticks = intervals.iter().map(|iv| iv.end - iv.start).sum();
    let (first, last) = match (intervals.first(), intervals.iter().map(|iv| iv.end).max()) {
        (Some(f), Some(l)) => (f.start, l),
        _ => (0, 0),
    };
    let mut bubble_total: Ticks = 0;
    let mut cursor = first;
    for iv in intervals {
        if iv.start > cursor {
            bubbles.push(Bubble {
                resource,
                start: to_seconds(cursor),
                duration: to_seconds(iv.start - cursor),
            });
            bubble_total += iv.start - cursor;
        }
        cursor = cursor.max(iv.end);
    }

    let first_of_layer = |layer: u32| {
        intervals
            .iter()
            .filter(|iv| iv.layer == layer)
            .map(|iv| iv.start)
            .min()
    };
    let (win_start, win_end, interior_layers) = match (n_layers >= 3)
        .then(|| (first_of_layer(1), first_of_layer(n_layers - 1)))
    {
        Some((Some(a), Some(b))) => (a, b, n_layers - 2),
        _ => (first, last, n_layers),
    };
    let interior_busy: Ticks = intervals
        .iter()
        .map(|iv| iv.end.min(win_end).saturating_sub(iv.start.max(win_start)))
        .sum();
    let interior_window = win_end - win_start;
    let interior_bubble = interior_window - interior_busy;

    let ratio = |num: Ticks, den: Ticks| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    ResourceStats {
        busy: to_seconds(busy),
        utilization: ratio(busy, makespan),
        active_window: to_seconds(last - first),
        bubble_total: to_seconds(bubble_total),
        interior_window: to_seconds(interior_window),
        interior_busy: to_seconds(interior_busy),
        interior_utilization: if interior_window == 0 {
            1.0
        } else {
            ratio(interior_busy, interior_window)
        },
        interior_bubble_total: to_seconds(interior_bubble),
        interior_bubble_per_layer: to_seconds(interior_bubble) / f64::from(interior_layers),
    }
}

/// Static bubble-freedom checks for a stage timing against a budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BubbleConditions {
    /// `2 t_a >= t_f + t_c`.
    pub attention_ok: bool,
    /// `2 t_f >= t_a + t_c`.
    pub ffn_ok: bool,
    /// `max(t_a, t_f, t_c) <= t_B`.
    pub budget_ok: bool,
    /// `t_a == t_f == t_B` and `t_c <= t_B`.
    pub ideal: bool,
}

pub fn no_bubble_conditions(t: &StageTiming, t_b: f64) -> BubbleConditions {
    let t_c = t.t_c();
    BubbleConditions {
        attention_ok: 2.0 * t.t_a >= t.t_f + t_c,
        ffn_ok: 2.0 * t.t_f >= t.t_a + t_c,
        budget_ok: t.t_a.max(t.t_f).max(t_c) <= t_b,
        ideal: t.t_a == t_b && t.t_f == t_b && t_c <= t_b,
    }
}

/// Idle time growth under jitter relative to the deterministic schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BubbleGrowth {
    /// Mean jittered bubble time over deterministic bubble time.
    Ratio(f64),
    /// Mean jittered bubble time in seconds, when the deterministic
    /// schedule has none.
    AbsoluteSeconds(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JitterReport {
    pub trials: u32,
    pub p_violation: f64,
    pub mean_makespan: f64,
    pub deterministic_makespan: f64,
    pub bubble_growth: BubbleGrowth,
}

/// Monte-Carlo over seeds `seed .. seed + trials`.
pub fn jitter_sensitivity(spec: &SimSpec, trials: u32) -> Result<JitterReport> {
    if trials == 0 {
        return Err(invalid("trials", "must be at least 1"));
    }
    if spec.jitter.kind == JitterKind::None {
        return Err(invalid("jitter", "sensitivity needs a jitter distribution"));
    }
    let baseline = simulate(&SimSpec {
        jitter: Jitter::NONE,
        ..spec.clone()
    })?;
    let runs: Vec<(bool, f64, f64)> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut s = spec.clone();
            s.jitter.seed = spec.jitter.seed.wrapping_add(u64::from(i));
            simulate(&s).map(|r| (r.slo_violation, r.makespan, r.compute_bubble_total()))
        })
        .collect::<Result<_>>()?;

    let n = f64::from(trials);
    let violations = runs.iter().filter(|r| r.0).count();
    let mean_makespan = runs.iter().map(|r| r.1).sum::<f64>() / n;
    let mean_bubble = runs.iter().map(|r| r.2).sum::<f64>() / n;
    let base_bubble = baseline.compute_bubble_total();
    let bubble_growth = if base_bubble > 0.0 {
        BubbleGrowth::Ratio(mean_bubble / base_bubble)
    } else {
        BubbleGrowth::AbsoluteSeconds(mean_bubble)
    };
    Ok(JitterReport {
        trials,
        p_violation: violations as f64 / n,
        mean_makespan,
        deterministic_makespan: baseline.makespan,
        bubble_growth,
    })
}
