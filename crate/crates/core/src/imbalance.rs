//! Throughput penalties from load imbalance.
//!
//! `sigma <= 1` is the balancedness of a stage and `alpha` the resulting
//! per-node throughput relative to the balanced deployment. Under large-scale
//! EP the batch can be retuned continuously, giving
//!
//! ```text
//! alpha_ep = (lambda + 1) / (lambda + 1/sigma),   lambda = t_a / t_f
//! ```
//!
//! Under AFD the same form holds with `lambda = n_a / n_f` only when
//! `sigma · n_a` is a whole number of attention nodes. Otherwise the
//! attention instance is resized to a neighbouring integer `n`, which gives a
//! per-node throughput ratio of
//!
//! ```text
//! alpha(n) = [min(n, sigma · n_a) / (n + n_f)] / [n_a / (n_a + n_f)]
//! ```
//!
//! The `min` accounts for attention ranks left underutilized when rounding
//! up. [`alpha_afd_oracle`] maximises `alpha(n)` by enumeration and is the
//! check on [`alpha_afd_discrete`].

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};

/// `sigma · n_a` values this close to an integer are treated as integral.
const INTEGRAL_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ImbalanceQuery {
    pub sigma: f64,
    pub lambda: f64,
    pub n_a: f64,
    pub n_f: f64,
    /// Balanced attention batch, tokens. Cancels in every ratio.
    pub nominal_batch_attention: Option<f64>,
    /// Balanced FFN batch, tokens. Cancels in every ratio.
    pub nominal_batch_ffn: Option<f64>,
}

impl ImbalanceQuery {
    pub fn afd(sigma: f64, n_a: f64, n_f: f64) -> Self {
        Self {
            sigma,
            lambda: n_a / n_f,
            n_a,
            n_f,
            nominal_batch_attention: None,
            nominal_batch_ffn: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PenaltyPoint {
    pub query: ImbalanceQuery,
    pub alpha_ep: f64,
    pub alpha_exact: f64,
    pub alpha_floor: f64,
    pub alpha_ceil: f64,
    pub alpha_afd: f64,
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma.is_finite() && sigma > 0.0 && sigma <= 1.0 {
        Ok(())
    } else {
        Err(invalid("sigma", format!("{sigma} is outside (0, 1]")))
    }
}

fn check_positive(name: &'static str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(name, format!("{v} must be positive")))
    }
}

/// EP penalty `(lambda + 1) / (lambda + 1/sigma)`.
pub fn alpha_ep(sigma: f64, lambda: f64) -> f64 {
    (lambda + 1.0) / (lambda + 1.0 / sigma)
}

/// AFD penalty when the attention instance can shrink to exactly
/// `sigma · n_a` nodes. Evaluated through the `lambda` form so it agrees
/// with [`alpha_ep`] bit for bit.
pub fn alpha_afd_exact(sigma: f64, n_a: f64, n_f: f64) -> f64 {
    alpha_ep(sigma, n_a / n_f)
}

/// Per-node throughput ratio with `n` attention nodes after rescaling.
pub fn alpha_at(sigma: f64, n_a: f64, n_f: f64, n: f64) -> f64 {
    let served = n.min(sigma * n_a);
    (served / (n + n_f)) * ((n_a + n_f) / n_a)
}

/// Nearest integer if `x` is integral up to [`INTEGRAL_TOLERANCE`].
fn as_integral(x: f64) -> Option<f64> {
    let r = x.round();
    ((x - r).abs() <= INTEGRAL_TOLERANCE * r.abs().max(1.0)).then_some(r)
}

/// AFD penalty under discrete attention scaling.
///
/// Fails with [`Error::DegenerateScale`] when rounding down would leave no
/// attention node.
pub fn alpha_afd_discrete(sigma: f64, n_a: f64, n_f: f64) -> Result<PenaltyPoint> {
    check_sigma(sigma)?;
    check_positive("n_a", n_a)?;
    check_positive("n_f", n_f)?;
    let scaled = sigma * n_a;
    let alpha_exact = alpha_afd_exact(sigma, n_a, n_f);
    let (alpha_floor, alpha_ceil, alpha_afd) = match as_integral(scaled) {
        Some(n) if n >= 1.0 => {
            let a = alpha_at(sigma, n_a, n_f, n);
            (a, a, alpha_exact)
        }
        Some(_) => return Err(Error::DegenerateScale { sigma, n_a }),
        None => {
            let lo = scaled.floor();
            if lo < 1.0 {
                return Err(Error::DegenerateScale { sigma, n_a });
            }
            let floor = alpha_at(sigma, n_a, n_f, lo);
            let ceil = alpha_at(sigma, n_a, n_f, scaled.ceil());
            (floor, ceil, floor.max(ceil))
        }
    };
    Ok(PenaltyPoint {
        query: ImbalanceQuery::afd(sigma, n_a, n_f),
        alpha_ep: alpha_ep(sigma, n_a / n_f),
        alpha_exact,
        alpha_floor,
        alpha_ceil,
        alpha_afd,
    })
}

/// Brute-force AFD penalty: the best per-node throughput ratio over every
/// integer attention size `1..=n_a + n_f`. Returns the value and the
/// attention size that attains it (smallest on ties).
pub fn alpha_afd_oracle(sigma: f64, n_a: u32, n_f: u32) -> (f64, u32) {
    let mut best = (f64::NEG_INFINITY, 0);
    for n in 1..=n_a + n_f {
        let ratio = alpha_at(sigma, f64::from(n_a), f64::from(n_f), f64::from(n));
        if ratio > best.0 {
            best = (ratio, n);
        }
    }
    best
}

/// How a DP-imbalanced deployment responds to a smaller attention batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DpMode {
    /// EP keeps the reduced batch.
    EpNoReclaim,
    /// EP regrows the batch into the FFN slack, assuming linear latency.
    EpReclaimBound,
    /// AFD cannot reuse the FFN-side slack.
    Afd,
}

pub fn dp_penalty(mode: DpMode, sigma: f64, lambda: f64) -> f64 {
    match mode {
        DpMode::Afd | DpMode::EpNoReclaim => sigma,
        DpMode::EpReclaimBound => (sigma * lambda + 1.0) / (lambda + 1.0),
    }
}

/// `lambda` grid `start, start + step, ..., end` (inclusive of `end` up to
/// rounding).
pub fn lambda_grid(start: f64, end: f64, step: f64) -> Result<Vec<f64>> {
    check_positive("lambda start", start)?;
    check_positive("lambda step", step)?;
    if !(end.is_finite() && end >= start) {
        return Err(invalid("lambda end", format!("{end} is below start {start}")));
    }
    let count = ((end - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|i| start + i as f64 * step).collect())
}

/// Penalty curves for every `(n_f, sigma, lambda)` with `n_a = lambda · n_f`,
/// sorted by `(n_f, sigma, lambda)`.
pub fn penalty_sweep(
    n_f: &[u32],
    sigma: &[f64],
    lambdas: &[f64],
) -> Result<Vec<PenaltyPoint>> {
    if n_f.is_empty() || sigma.is_empty() || lambdas.is_empty() {
        return Err(invalid("penalty sweep", "empty parameter set"));
    }
    let mut n_f = n_f.to_vec();
    n_f.sort_unstable();
    let mut sigma = sigma.to_vec();
    sigma.sort_by(f64::total_cmp);
    let mut lambdas = lambdas.to_vec();
    lambdas.sort_by(f64::total_cmp);

    let grid: Vec<(u32, f64, f64)> = n_f
        .iter()
        .flat_map(|&nf| {
            let lambdas = &lambdas;
            sigma
                .iter()
                .flat_map(move |&s| lambdas.iter().map(move |&l| (nf, s, l)))
        })
        .collect();
    grid.into_par_iter()
        .map(|(nf, s, l)| {
            let nf = f64::from(nf);
            let mut p = alpha_afd_discrete(s, l * nf, nf)?;
            p.query.lambda = l;
            p.alpha_ep = alpha_ep(s, l);
            Ok(p)
        })
        .collect()
}

/// Share of points where AFD pays a strictly larger penalty than EP.
pub fn fraction_afd_worse(points: &[PenaltyPoint]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let worse = points.iter().filter(|p| p.alpha_afd < p.alpha_ep).count();
    worse as f64 / points.len() as f64
}

pub const DEFAULT_PENALTY_NF: [u32; 3] = [2, 4, 6];
pub const DEFAULT_PENALTY_SIGMA: [f64; 4] = [0.7, 0.75, 0.8, 0.85];

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn alpha_ep_examples() {
        assert_eq!(alpha_ep(1.0, 3.7), 1.0);
        assert!((alpha_ep(0.8, 4.0) - 5.0 / 5.25).abs() < 1e-15);
        for s in [0.3, 0.5, 0.9, 0.99] {
            assert!(alpha_ep(s, 2.0) > s);
        }
    }

    #[test]
    fn exact_examples() {
        assert_eq!(alpha_afd_exact(1.0, 6.0, 2.0), 1.0);
        assert!((alpha_afd_exact(0.75, 6.0, 2.0) - 6.0 / 6.5).abs() < 1e-15);
        let direct = 0.75 * (6.0 + 2.0) / (0.75 * 6.0 + 2.0);
        assert!((alpha_afd_exact(0.75, 6.0, 2.0) - direct).abs() < 1e-15);
        assert_eq!(alpha_afd_exact(0.75, 6.0, 2.0), alpha_ep(0.75, 3.0));
    }

    #[test]
    fn discrete_example() {
        let p = alpha_afd_discrete(0.75, 6.0, 2.0).unwrap();
        assert!((p.alpha_floor - (4.0 / 6.0) / 0.75).abs() < 1e-12);
        assert!((p.alpha_ceil - (4.5 / 7.0) / 0.75).abs() < 1e-12);
        assert!((p.alpha_floor - 0.8889).abs() < 1e-4);
        assert!((p.alpha_ceil - 0.8571).abs() < 1e-4);
        assert_eq!(p.alpha_afd, p.alpha_floor);
        assert!(p.alpha_afd < p.alpha_ep);
        let (oracle, at) = alpha_afd_oracle(0.75, 6, 2);
        assert_eq!(at, 4);
        assert_eq!(oracle, p.alpha_afd);
    }

    #[test]
    fn integral_scaling_matches_exact() {
        let p = alpha_afd_discrete(0.8, 10.0, 2.0).unwrap();
        assert_eq!(p.alpha_afd, p.alpha_exact);
        // 0.55 * 20 is 11.000000000000002 in binary.
        let p = alpha_afd_discrete(0.55, 20.0, 3.0).unwrap();
        assert_eq!(p.alpha_afd, p.alpha_exact);
    }

    #[test]
    fn degenerate_scale_is_reported() {
        let err = alpha_afd_discrete(0.5, 1.0, 2.0).unwrap_err();
        assert!(matches!(err, Error::DegenerateScale { .. }));
        assert!(alpha_afd_discrete(0.0, 4.0, 2.0).is_err());
        assert!(alpha_afd_discrete(1.1, 4.0, 2.0).is_err());
    }

    #[test]
    fn oracle_edge_cases() {
        let (a, n) = alpha_afd_oracle(1.0, 7, 3);
        assert_eq!(n, 7);
        assert!((a - 1.0).abs() < 1e-15);
    }

    #[test]
    fn oracle_profile_is_unimodal() {
        for n_a in 1..=24u32 {
            for n_f in 1..=6u32 {
                for k in 10..=20 {
                    let sigma = f64::from(k) * 0.05;
                    let s = sigma * f64::from(n_a);
                    let vals: Vec<f64> = (1..=n_a + n_f)
                        .map(|n| alpha_at(sigma, f64::from(n_a), f64::from(n_f), f64::from(n)))
                        .collect();
                    let peak = vals
                        .iter()
                        .enumerate()
                        .max_by(|a, b| a.1.total_cmp(b.1))
                        .unwrap()
                        .0;
                    assert!(vals[..=peak].windows(2).all(|w| w[1] >= w[0]));
                    assert!(vals[peak..].windows(2).all(|w| w[1] <= w[0]));
                    assert!((peak as f64 + 1.0 - s).abs() < 1.0 + 1e-9);
                }
            }
        }
    }

    #[test]
    fn dp_penalties() {
        assert_eq!(dp_penalty(DpMode::Afd, 0.8, 4.0), 0.8);
        assert_eq!(dp_penalty(DpMode::EpNoReclaim, 0.8, 4.0), 0.8);
        assert!((dp_penalty(DpMode::EpReclaimBound, 0.8, 4.0) - 0.84).abs() < 1e-15);
        for mode in [DpMode::Afd, DpMode::EpNoReclaim, DpMode::EpReclaimBound] {
            assert_eq!(dp_penalty(mode, 1.0, 2.5), 1.0);
        }
    }

    #[test]
    fn lambda_grid_is_inclusive() {
        let g = lambda_grid(1.0, 5.0, 0.05).unwrap();
        assert_eq!(g.len(), 81);
        assert_eq!(g[0], 1.0);
        assert!((g[80] - 5.0).abs() < 1e-12);
        assert!(lambda_grid(2.0, 1.0, 0.1).is_err());
    }

    #[test]
    fn default_sweep_shape() {
        let pts = penalty_sweep(
            &DEFAULT_PENALTY_NF,
            &DEFAULT_PENALTY_SIGMA,
            &lambda_grid(1.0, 5.0, 0.05).unwrap(),
        )
        .unwrap();
        assert_eq!(pts.len(), 12 * 81);
        assert!(pts.iter().all(|p| p.alpha_afd <= p.alpha_exact));
        assert!(fraction_afd_worse(&pts) > 0.5);
        for w in pts.windows(2) {
            let key = |p: &PenaltyPoint| (p.query.n_f, p.query.sigma, p.query.lambda);
            assert!(key(&w[0]) < key(&w[1]));
        }
    }

    proptest! {
        #[test]
        fn alpha_ep_bounds_and_monotone(sigma in 0.05f64..0.999, lambda in 0.01f64..50.0) {
            let a = alpha_ep(sigma, lambda);
            prop_assert!(sigma <= a && a < 1.0);
            prop_assert!(alpha_ep(sigma, lambda * 1.01) > a);
        }

        #[test]
        fn alphas_in_unit_interval(sigma in 0.3f64..=1.0, n_a in 4.0f64..64.0, n_f in 1.0f64..8.0) {
            let p = alpha_afd_discrete(sigma, n_a, n_f).unwrap();
            for a in [p.alpha_ep, p.alpha_exact, p.alpha_floor, p.alpha_ceil, p.alpha_afd] {
                prop_assert!(a > 0.0 && a <= 1.0 + 1e-15);
            }
            prop_assert!(p.alpha_afd <= p.alpha_exact);
        }
    }
}
