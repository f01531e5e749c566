//! Distinguished logarithm and distinguished K-th root of a characteristic
//! function sampled on a grid.
//!
//! The distinguished logarithm is the continuous branch ψ with ψ(0) = 0 and
//! exp(ψ) = φ. For a differentiable zero-free φ it equals ∫₀ᵘ φ′/φ, which is
//! what we integrate (composite trapezoid on the grid). The root is assembled
//! as |φ̂|^{1/K}·exp(i·Im ψ̂/K): the modulus is taken directly and only the
//! phase goes through the quadrature.

use std::f64::consts::FRAC_PI_4;

use num_complex::Complex64;

use crate::charfn::{steps_within, CfEvaluation};
use crate::error::{Error, Result};
use crate::samples::validate_group_size;

/// Integration aborts where |φ̂| drops below `max(1e-3·n^{-1/2}, 1e-12)`.
pub fn denominator_floor(n: Option<usize>) -> f64 {
    match n {
        Some(n) => (1e-3 / (n as f64).sqrt()).max(1e-12),
        None => 1e-12,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RootCondition {
    /// Phase moved by at least π/4 over one grid step.
    LargePhaseIncrement(f64),
    /// The requested range was cut short by the denominator floor.
    Truncated { modulus: f64, floor: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RootWarning {
    pub u: f64,
    pub condition: RootCondition,
}

/// φ̂_X on the nonnegative grid `k·step`, `k = 0..len`.
#[derive(Debug, Clone)]
pub struct RootEstimate {
    step: f64,
    modulus_pow: Vec<f64>,
    phase: Vec<f64>,
    group_size: f64,
    warnings: Vec<RootWarning>,
}

impl RootEstimate {
    /// Root of an analytic characteristic function sampled at `k·step`,
    /// `k = 0..=half`, with the phase unwrapped by continuity.
    pub fn from_analytic(
        step: f64,
        half: usize,
        group_size: f64,
        cf: impl Fn(f64) -> Complex64,
    ) -> Self {
        let mut modulus_pow = Vec::with_capacity(half + 1);
        let mut phase = Vec::with_capacity(half + 1);
        let mut prev_arg = 0.0;
        let mut acc = 0.0;
        for k in 0..=half {
            let c = cf(k as f64 * step);
            let arg = c.arg();
            if k > 0 {
                acc += wrap_angle(arg - prev_arg);
            }
            prev_arg = arg;
            modulus_pow.push(c.norm().powf(1.0 / group_size));
            phase.push(acc / group_size);
        }
        Self {
            step,
            modulus_pow,
            phase,
            group_size,
            warnings: Vec::new(),
        }
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.phase.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phase.is_empty()
    }

    /// Largest frequency covered.
    pub fn u_max(&self) -> f64 {
        (self.len() - 1) as f64 * self.step
    }

    pub fn modulus_pow(&self) -> &[f64] {
        &self.modulus_pow
    }

    pub fn phase(&self) -> &[f64] {
        &self.phase
    }

    pub fn group_size(&self) -> f64 {
        self.group_size
    }

    pub fn warnings(&self) -> &[RootWarning] {
        &self.warnings
    }

    /// φ̂_X(k·step).
    pub fn value(&self, k: usize) -> Complex64 {
        Complex64::from_polar(self.modulus_pow[k], self.phase[k])
    }

    /// φ̂_X at a signed grid index; negative indices by conjugation.
    pub fn value_signed(&self, k: isize) -> Complex64 {
        let v = self.value(k.unsigned_abs());
        if k < 0 {
            v.conj()
        } else {
            v
        }
    }

    pub fn values(&self) -> Vec<Complex64> {
        (0..self.len()).map(|k| self.value(k)).collect()
    }

    /// φ̂_X(u) for u in [−u_max, u_max] by linear interpolation of the
    /// complex values between grid points.
    pub fn interpolate(&self, u: f64) -> Complex64 {
        let a = u.abs();
        let pos = a / self.step;
        let k = (pos.floor() as usize).min(self.len() - 1);
        let v = if k + 1 >= self.len() {
            self.value(k)
        } else {
            let t = pos - k as f64;
            self.value(k) * (1.0 - t) + self.value(k + 1) * t
        };
        if u < 0.0 {
            v.conj()
        } else {
            v
        }
    }

    /// Largest index `k` with `k·step ≤ u` (within rounding).
    pub fn index_at_or_below(&self, u: f64) -> usize {
        steps_within(u, self.step).min(self.len() - 1)
    }
}

fn wrap_angle(mut a: f64) -> f64 {
    use std::f64::consts::PI;
    while a > PI {
        a -= 2.0 * PI;
    }
    while a <= -PI {
        a += 2.0 * PI;
    }
    a
}

fn last_index(cf: &CfEvaluation, u_limit: f64) -> Result<usize> {
    let grid = cf.grid();
    if !(u_limit.is_finite() && u_limit >= 0.0) {
        return Err(Error::param(format!("u_limit must be ≥ 0 (got {u_limit})")));
    }
    if u_limit > grid.u_max() * (1.0 + 1e-12) {
        return Err(Error::CutoffExceedsRange {
            m: u_limit,
            max: grid.u_max(),
        });
    }
    Ok(steps_within(u_limit, grid.step()).min(grid.half()))
}

struct LogPath {
    values: Vec<Complex64>,
    blocked: Option<Error>,
}

/// Cumulative trapezoid of φ̂′/φ̂, stopping before the first grid point
/// whose |φ̂| is below the floor.
fn integrate(cf: &CfEvaluation, last: usize) -> LogPath {
    let phi = cf.nonnegative_phi();
    let dphi = cf.nonnegative_dphi();
    let floor = denominator_floor(cf.n());
    let half_step = 0.5 * cf.grid().step();
    let mut values = Vec::with_capacity(last + 1);
    let mut acc = Complex64::new(0.0, 0.0);
    let mut prev = Complex64::new(0.0, 0.0);
    for k in 0..=last {
        let modulus = phi[k].norm();
        if modulus < floor {
            return LogPath {
                values,
                blocked: Some(Error::DenominatorTooSmall {
                    u: k as f64 * cf.grid().step(),
                    modulus,
                    floor,
                }),
            };
        }
        let g = dphi[k] / phi[k];
        if k > 0 {
            acc += (prev + g) * half_step;
        }
        prev = g;
        values.push(acc);
    }
    LogPath {
        values,
        blocked: None,
    }
}

/// ψ̂(k·step) for all grid points in [0, u_limit].
pub fn distinguished_log(cf: &CfEvaluation, u_limit: f64) -> Result<Vec<Complex64>> {
    let last = last_index(cf, u_limit)?;
    let path = integrate(cf, last);
    match path.blocked {
        Some(err) => Err(err),
        None => Ok(path.values),
    }
}

/// φ̂_X = |φ̂|^{1/K}·exp(i·Im ψ̂/K) on [0, u_limit].
pub fn distinguished_root(
    cf: &CfEvaluation,
    u_limit: f64,
    group_size: f64,
) -> Result<RootEstimate> {
    let (root, blocked) = distinguished_root_feasible(cf, u_limit, group_size)?;
    match blocked {
        Some(err) => Err(err),
        None => Ok(root),
    }
}

/// Like [`distinguished_root`], but when the floor is hit the root is
/// returned up to the last feasible point together with the error that
/// stopped it. Fails outright only if not even u = 0 is feasible.
pub fn distinguished_root_feasible(
    cf: &CfEvaluation,
    u_limit: f64,
    group_size: f64,
) -> Result<(RootEstimate, Option<Error>)> {
    validate_group_size(group_size)?;
    let last = last_index(cf, u_limit)?;
    let path = integrate(cf, last);
    if path.values.is_empty() {
        return Err(path.blocked.expect("empty path is always blocked"));
    }
    let phi = cf.nonnegative_phi();
    let step = cf.grid().step();
    let inv_k = 1.0 / group_size;

    let mut warnings = Vec::new();
    let mut phase = Vec::with_capacity(path.values.len());
    let mut modulus_pow = Vec::with_capacity(path.values.len());
    let unit = group_size == 1.0;
    for (k, psi) in path.values.iter().enumerate() {
        // With K = 1 the root is φ̂ itself: keep the branch picked by the
        // quadrature but take the angle exactly.
        let p = if unit {
            psi.im + wrap_angle(phi[k].arg() - psi.im)
        } else {
            psi.im * inv_k
        };
        if let Some(&before) = phase.last() {
            let increment: f64 = p - before;
            if increment.abs() >= FRAC_PI_4 {
                warnings.push(RootWarning {
                    u: k as f64 * step,
                    condition: RootCondition::LargePhaseIncrement(increment),
                });
            }
        }
        phase.push(p);
        modulus_pow.push(phi[k].norm().powf(inv_k));
    }
    if let Some(Error::DenominatorTooSmall { u, modulus, floor }) = &path.blocked {
        warnings.push(RootWarning {
            u: *u,
            condition: RootCondition::Truncated {
                modulus: *modulus,
                floor: *floor,
            },
        });
    }
    modulus_pow[0] = 1.0;
    Ok((
        RootEstimate {
            step,
            modulus_pow,
            phase,
            group_size,
            warnings,
        },
        path.blocked,
    ))
}
