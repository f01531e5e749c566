//! Choice of the spectral cutoff m.
//!
//! * adaptive: the first frequency where |φ̂(u)| falls to
//!   `(Kn)^{-1/2} + sqrt(η·log n / K)·n^{-1/2}`, capped at `n^{1/K}`;
//! * oracle: the L2-optimal cutoff given the true density (simulation only);
//! * diagnostic: the population crossing u_n^{(γ,ε)} where
//!   `|φ_X(u)|^K = (1+ε)γ(n/log n)^{-1/2}`.

use serde::{Deserialize, Serialize};

use crate::charfn::{ecf_at, evaluate_grid, Rotors, UGrid};
use crate::error::{Error, Result};
use crate::inversion::{invert_many, l2_distance_values, XGrid};
use crate::rootlog::{distinguished_root_feasible, RootEstimate};
use crate::samples::{GroupedSample, TestLaw};

pub const DEFAULT_ETA: f64 = 1.1;
pub const DEFAULT_SCAN_RESOLUTION: f64 = 0.01;
pub const DEFAULT_UNIT_GROUP_CAP: f64 = 1e3;
pub const DEFAULT_DELTA: f64 = 0.1;
const BISECTION_TOLERANCE: f64 = 1e-6;
const SCAN_BLOCK: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "lowercase")]
pub enum CutoffRule {
    Adaptive { eta: f64 },
    Oracle,
    Fixed,
    Diagnostic { gamma: f64, eps: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffRecord {
    pub value: f64,
    #[serde(flatten)]
    pub rule: CutoffRule,
    /// False when the adaptive scan stopped at the cap.
    pub threshold_hit: bool,
    pub scan_resolution: f64,
}

impl CutoffRecord {
    pub fn fixed(value: f64) -> Self {
        Self {
            value,
            rule: CutoffRule::Fixed,
            threshold_hit: false,
            scan_resolution: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveSettings {
    pub eta: f64,
    pub scan_resolution: f64,
    /// Replaces the cap n^{1/K} when the group size is below 2.
    pub unit_group_cap: f64,
}

impl Default for AdaptiveSettings {
    fn default() -> Self {
        Self {
            eta: DEFAULT_ETA,
            scan_resolution: DEFAULT_SCAN_RESOLUTION,
            unit_group_cap: DEFAULT_UNIT_GROUP_CAP,
        }
    }
}

/// `(Kn)^{-1/2} + sqrt(η/K)·sqrt(log n)·n^{-1/2}`.
pub fn adaptive_threshold(n: usize, group_size: f64, eta: f64) -> f64 {
    let n = n as f64;
    (group_size * n).powf(-0.5) + (eta / group_size).sqrt() * (n.ln() / n).sqrt()
}

pub fn adaptive_cap(n: usize, group_size: f64, unit_group_cap: f64) -> f64 {
    let cap = (n as f64).powf(1.0 / group_size);
    if group_size < 2.0 {
        cap.min(unit_group_cap)
    } else {
        cap
    }
}

pub fn adaptive_cutoff(
    sample: &GroupedSample,
    eta: f64,
    scan_resolution: f64,
) -> Result<CutoffRecord> {
    adaptive_cutoff_with(
        sample,
        &AdaptiveSettings {
            eta,
            scan_resolution,
            ..AdaptiveSettings::default()
        },
    )
}

pub fn adaptive_cutoff_with(
    sample: &GroupedSample,
    settings: &AdaptiveSettings,
) -> Result<CutoffRecord> {
    let AdaptiveSettings {
        eta,
        scan_resolution: r,
        unit_group_cap,
    } = *settings;
    if !(eta.is_finite() && eta > 1.0) {
        return Err(Error::param(format!("eta must be > 1 (got {eta})")));
    }
    if !(r.is_finite() && r > 0.0) {
        return Err(Error::param(format!(
            "scan resolution must be > 0 (got {r})"
        )));
    }
    if !(unit_group_cap.is_finite() && unit_group_cap > 0.0) {
        return Err(Error::param(format!(
            "unit group cap must be > 0 (got {unit_group_cap})"
        )));
    }
    let n = sample.n();
    let k = sample.group_size();
    let threshold = adaptive_threshold(n, k, eta);
    let cap = adaptive_cap(n, k, unit_group_cap);
    let record = |value, threshold_hit| CutoffRecord {
        value,
        rule: CutoffRule::Adaptive { eta },
        threshold_hit,
        scan_resolution: r,
    };
    let below = |u: f64| ecf_at(sample, u).norm() <= threshold;

    // With tiny n the threshold can exceed |φ̂(0)| = 1; the smallest
    // positive scan point stands in for the degenerate crossing at 0.
    if threshold >= 1.0 {
        return Ok(record(r.min(cap), true));
    }

    let rotors = Rotors::new(sample.observations(), r);
    let inv_n = 1.0 / n as f64;
    let mut prev = 0.0;
    let mut k0 = 1;
    'scan: loop {
        let sums = rotors.sums(k0, SCAN_BLOCK, false);
        for (i, s) in sums.phi.iter().enumerate() {
            let u = (k0 + i) as f64 * r;
            if u >= cap {
                break 'scan;
            }
            if s.norm() * inv_n <= threshold {
                return Ok(record(bisect(prev, u, below), true));
            }
            prev = u;
        }
        k0 += SCAN_BLOCK;
    }
    if below(cap) {
        return Ok(record(bisect(prev, cap, below), true));
    }
    Ok(record(cap, false))
}

/// Shrink `[lo, hi]` with `!below(lo)` and `below(hi)`; returns the upper end.
fn bisect(mut lo: f64, mut hi: f64, below: impl Fn(f64) -> bool) -> f64 {
    while hi - lo > BISECTION_TOLERANCE {
        let mid = 0.5 * (lo + hi);
        if below(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Result of an oracle search.
#[derive(Debug, Clone)]
pub struct OracleSearch {
    pub record: CutoffRecord,
    pub risk: f64,
    /// (m, L2 risk) for every evaluated cutoff.
    pub risks: Vec<(f64, f64)>,
    pub warnings: Vec<String>,
}

/// `count` log-spaced values from `lo` to `hi`.
pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![hi],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..count)
                .map(|i| {
                    if i + 1 == count {
                        hi
                    } else {
                        (a + (b - a) * i as f64 / (count - 1) as f64).exp()
                    }
                })
                .collect()
        }
    }
}

/// Evaluate the sample's root on a grid of the given step up to max(m_grid)
/// and search the grid for the L2-optimal cutoff.
pub fn oracle_cutoff(
    law: &TestLaw,
    sample: &GroupedSample,
    m_grid: &[f64],
    xgrid: &XGrid,
    step: f64,
) -> Result<OracleSearch> {
    validate_m_grid(m_grid)?;
    let top = *m_grid.last().expect("nonempty");
    let half = (top / step - 1e-9).ceil().max(1.0) as usize;
    let grid = UGrid::with_half_count(step, half, false)?;
    let cf = evaluate_grid(sample, grid);
    let (root, _) = distinguished_root_feasible(&cf, grid.u_max(), sample.group_size())?;
    oracle_cutoff_from_root(law, &root, m_grid, xgrid)
}

/// Oracle search on a precomputed root. Cutoffs beyond the root's range
/// (e.g. after a denominator-floor truncation) are dropped with a warning.
pub fn oracle_cutoff_from_root(
    law: &TestLaw,
    root: &RootEstimate,
    m_grid: &[f64],
    xgrid: &XGrid,
) -> Result<OracleSearch> {
    validate_m_grid(m_grid)?;
    let limit = root.u_max() * (1.0 + 1e-12);
    let feasible: Vec<f64> = m_grid.iter().copied().filter(|&m| m <= limit).collect();
    let mut warnings = Vec::new();
    if feasible.len() < m_grid.len() {
        warnings.push(format!(
            "{} oracle cutoffs above the feasible range {:.6} dropped",
            m_grid.len() - feasible.len(),
            root.u_max()
        ));
    }
    if feasible.is_empty() {
        return Err(Error::CutoffExceedsRange {
            m: m_grid[0],
            max: root.u_max(),
        });
    }
    let f: Vec<f64> = xgrid.points().iter().map(|&x| law.pdf(x)).collect();
    let estimates = invert_many(root, &feasible, xgrid)?;
    let risks: Vec<(f64, f64)> = feasible
        .iter()
        .zip(&estimates)
        .map(|(&m, v)| (m, l2_distance_values(&f, v, xgrid.dx())))
        .collect();
    let (m, risk) = argmin_smallest(&risks);
    Ok(OracleSearch {
        record: CutoffRecord {
            value: m,
            rule: CutoffRule::Oracle,
            threshold_hit: false,
            scan_resolution: 0.0,
        },
        risk,
        risks,
        warnings,
    })
}

/// Minimum risk; ties go to the smaller m.
pub(crate) fn argmin_smallest(risks: &[(f64, f64)]) -> (f64, f64) {
    risks
        .iter()
        .copied()
        .fold((f64::NAN, f64::INFINITY), |best, (m, r)| {
            if r < best.1 || (r == best.1 && m < best.0) {
                (m, r)
            } else {
                best
            }
        })
}

fn validate_m_grid(m_grid: &[f64]) -> Result<()> {
    if m_grid.is_empty() {
        return Err(Error::param("oracle m grid is empty"));
    }
    if m_grid.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
        return Err(Error::param("oracle m grid must be positive"));
    }
    if m_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::param("oracle m grid must be sorted"));
    }
    Ok(())
}

/// γ = sqrt(1 + 2/K + δ).
pub fn theorem_gamma(group_size: f64, delta: f64) -> f64 {
    (1.0 + 2.0 / group_size + delta).sqrt()
}

/// `(1+ε)·γ·sqrt(log n / n)`.
pub fn diagnostic_level(n: usize, gamma: f64, eps: f64) -> f64 {
    let n = n as f64;
    (1.0 + eps) * gamma * (n.ln() / n).sqrt()
}

const DIAGNOSTIC_LIMIT: f64 = 1e6;

/// First u ≥ 0 where |φ_X(u)|^K reaches the diagnostic level.
pub fn diagnostic_threshold_u(
    law: &TestLaw,
    n: usize,
    k: f64,
    gamma: f64,
    eps: f64,
) -> Result<f64> {
    if n < 2 {
        return Err(Error::TooFewObservations(n));
    }
    let level = diagnostic_level(n, gamma, eps);
    if level >= 1.0 {
        return Ok(0.0);
    }
    let below = |u: f64| law.cf(u).norm().powf(k) <= level;
    // fine scan first, then geometric growth for slowly decaying laws
    let mut prev = 0.0;
    let mut u = 0.01;
    while u <= DIAGNOSTIC_LIMIT {
        if below(u) {
            let mut lo = prev;
            let mut hi = u;
            while hi - lo > 1e-10 * hi.max(1.0) {
                let mid = 0.5 * (lo + hi);
                if below(mid) {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return Ok(hi);
        }
        prev = u;
        u = if u < 100.0 { u + 0.01 } else { u * 1.5 };
    }
    Err(Error::LevelNotReached {
        level,
        limit: DIAGNOSTIC_LIMIT,
    })
}

/// Theory-side numbers for one (law, n, K) configuration.
#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    pub law: String,
    pub n: usize,
    pub group_size: f64,
    pub eps: f64,
    pub delta: f64,
    pub gamma: f64,
    pub level: f64,
    /// None when the level is never reached.
    pub u_n: Option<f64>,
    pub adaptive_threshold: f64,
    pub cap: f64,
    /// (1+ε)·log(1+1/ε)
    pub c1: f64,
    /// 9 + 4·∫|φ_X|²
    pub c2: f64,
    pub cf_l2_norm_sq: f64,
}

pub fn diagnose(
    law: &TestLaw,
    n: usize,
    k: f64,
    eps: f64,
    delta: f64,
    eta: f64,
) -> Result<Diagnostics> {
    if !(eps > 0.0 && delta > 0.0) {
        return Err(Error::param(format!(
            "eps and delta must be > 0 (got {eps}, {delta})"
        )));
    }
    crate::samples::validate_group_size(k)?;
    let gamma = theorem_gamma(k, delta);
    let u_n = match diagnostic_threshold_u(law, n, k, gamma, eps) {
        Ok(u) => Some(u),
        Err(Error::LevelNotReached { .. }) => None,
        Err(e) => return Err(e),
    };
    // Plancherel: ∫|φ_X|² = 2π ∫f²
    let cf_l2 = 2.0 * std::f64::consts::PI * law.l2_norm_sq();
    Ok(Diagnostics {
        law: law.to_string(),
        n,
        group_size: k,
        eps,
        delta,
        gamma,
        level: diagnostic_level(n, gamma, eps),
        u_n,
        adaptive_threshold: adaptive_threshold(n, k, eta),
        cap: adaptive_cap(n, k, DEFAULT_UNIT_GROUP_CAP),
        c1: (1.0 + eps) * (1.0 + 1.0 / eps).ln(),
        c2: 9.0 + 4.0 * cf_l2,
        cf_l2_norm_sq: cf_l2,
    })
}
