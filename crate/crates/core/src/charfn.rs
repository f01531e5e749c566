//! Empirical characteristic function φ̂(u) = n⁻¹ Σ exp(iuY_j) and its
//! derivative φ̂′(u) = n⁻¹ Σ iY_j exp(iuY_j).
//!
//! Grid evaluation walks each observation's unit phasor along the grid by
//! repeated multiplication with exp(i·step·Y_j). The phasor is recomputed
//! from scratch every [`RENORM_PERIOD`] steps, which bounds the accumulated
//! drift far below 1e-10. Only the nonnegative half is computed; negative
//! frequencies follow by conjugation.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::samples::GroupedSample;

pub const RENORM_PERIOD: usize = 512;
const LANES: usize = 8;

/// Uniform frequency grid `{k·step}` for `k = -half..=half` (symmetric) or
/// `k = 0..=half` (nonnegative half).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UGrid {
    step: f64,
    half: usize,
    symmetric: bool,
}

impl UGrid {
    pub fn symmetric(u_max: f64, step: f64) -> Result<Self> {
        Self::from_range(u_max, step, true)
    }

    pub fn nonnegative(u_max: f64, step: f64) -> Result<Self> {
        Self::from_range(u_max, step, false)
    }

    fn from_range(u_max: f64, step: f64, symmetric: bool) -> Result<Self> {
        if !(step.is_finite() && step > 0.0) {
            return Err(Error::param(format!("grid step must be > 0 (got {step})")));
        }
        if !(u_max.is_finite() && u_max >= step) {
            return Err(Error::param(format!(
                "grid u_max must be ≥ step (got u_max={u_max}, step={step})"
            )));
        }
        Self::with_half_count(step, steps_within(u_max, step), symmetric)
    }

    /// Grid whose largest point is exactly `half·step`.
    pub fn with_half_count(step: f64, half: usize, symmetric: bool) -> Result<Self> {
        if !(step.is_finite() && step > 0.0) {
            return Err(Error::param(format!("grid step must be > 0 (got {step})")));
        }
        if half == 0 {
            return Err(Error::param("grid needs at least one nonzero point"));
        }
        Ok(Self {
            step,
            half,
            symmetric,
        })
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    /// Number of strictly positive grid points.
    pub fn half(&self) -> usize {
        self.half
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn u_max(&self) -> f64 {
        self.half as f64 * self.step
    }

    pub fn len(&self) -> usize {
        if self.symmetric {
            2 * self.half + 1
        } else {
            self.half + 1
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Position of u = 0 in [`UGrid::points`] order.
    pub fn zero_index(&self) -> usize {
        if self.symmetric {
            self.half
        } else {
            0
        }
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        let lo = if self.symmetric {
            -(self.half as i64)
        } else {
            0
        };
        (lo..=self.half as i64).map(move |k| k as f64 * self.step)
    }
}

/// `floor(u_max / step)`, snapping ratios within 1e-9 of an integer.
pub(crate) fn steps_within(u_max: f64, step: f64) -> usize {
    let ratio = u_max / step;
    let nearest = ratio.round();
    if (ratio - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest as usize
    } else {
        ratio.floor() as usize
    }
}

/// φ̂ and φ̂′ on every point of a [`UGrid`].
#[derive(Debug, Clone)]
pub struct CfEvaluation {
    grid: UGrid,
    phi: Vec<Complex64>,
    dphi: Vec<Complex64>,
    n: Option<usize>,
    group_size: f64,
}

impl CfEvaluation {
    /// Wrap values of an analytic characteristic function, e.g. an exact law
    /// of Y. There is no sample size, so only the absolute floor applies.
    pub fn from_fn(
        grid: UGrid,
        group_size: f64,
        phi: impl Fn(f64) -> Complex64,
        dphi: impl Fn(f64) -> Complex64,
    ) -> Self {
        let u: Vec<f64> = (0..=grid.half).map(|k| k as f64 * grid.step).collect();
        let pos_phi: Vec<Complex64> = u.iter().map(|&u| phi(u)).collect();
        let pos_dphi: Vec<Complex64> = u.iter().map(|&u| dphi(u)).collect();
        Self::from_halves(grid, pos_phi, pos_dphi, None, group_size)
    }

    fn from_halves(
        grid: UGrid,
        pos_phi: Vec<Complex64>,
        pos_dphi: Vec<Complex64>,
        n: Option<usize>,
        group_size: f64,
    ) -> Self {
        let (phi, dphi) = if grid.symmetric {
            (
                mirror(&pos_phi, |z| z.conj()),
                mirror(&pos_dphi, |z| -z.conj()),
            )
        } else {
            (pos_phi, pos_dphi)
        };
        Self {
            grid,
            phi,
            dphi,
            n,
            group_size,
        }
    }

    pub fn grid(&self) -> &UGrid {
        &self.grid
    }

    /// φ̂ in [`UGrid::points`] order.
    pub fn phi(&self) -> &[Complex64] {
        &self.phi
    }

    pub fn dphi(&self) -> &[Complex64] {
        &self.dphi
    }

    /// φ̂ at `k·step` for `k = 0..=half`.
    pub fn nonnegative_phi(&self) -> &[Complex64] {
        &self.phi[self.grid.zero_index()..]
    }

    pub fn nonnegative_dphi(&self) -> &[Complex64] {
        &self.dphi[self.grid.zero_index()..]
    }

    /// Sample size, `None` for analytic inputs.
    pub fn n(&self) -> Option<usize> {
        self.n
    }

    pub fn group_size(&self) -> f64 {
        self.group_size
    }
}

fn mirror(pos: &[Complex64], f: impl Fn(Complex64) -> Complex64) -> Vec<Complex64> {
    let mut out = Vec::with_capacity(2 * pos.len() - 1);
    out.extend(pos[1..].iter().rev().map(|&z| f(z)));
    out.extend_from_slice(pos);
    out
}

pub fn ecf_at(sample: &GroupedSample, u: f64) -> Complex64 {
    let (re, im) = sample
        .observations()
        .iter()
        .fold((0.0, 0.0), |(re, im), &y| {
            let (s, c) = (u * y).sin_cos();
            (re + c, im + s)
        });
    Complex64::new(re, im) / sample.n() as f64
}

pub fn ecf_derivative_at(sample: &GroupedSample, u: f64) -> Complex64 {
    let (re, im) = sample
        .observations()
        .iter()
        .fold((0.0, 0.0), |(re, im), &y| {
            let (s, c) = (u * y).sin_cos();
            (re - y * s, im + y * c)
        });
    Complex64::new(re, im) / sample.n() as f64
}

pub fn evaluate_grid(sample: &GroupedSample, grid: UGrid) -> CfEvaluation {
    let rotors = Rotors::new(sample.observations(), grid.step);
    let sums = rotors.sums(0, grid.half + 1, true);
    let n = sample.n() as f64;
    let phi = sums.phi.iter().map(|z| z / n).collect();
    let dphi = sums.dphi.iter().map(|z| z / n).collect();
    CfEvaluation::from_halves(grid, phi, dphi, Some(sample.n()), sample.group_size())
}

/// Per-observation step phasors exp(i·step·Y_j), laid out for the lane loop.
pub(crate) struct Rotors<'a> {
    y: &'a [f64],
    step: f64,
    w_re: Vec<f64>,
    w_im: Vec<f64>,
}

pub(crate) struct RotorSums {
    pub phi: Vec<Complex64>,
    pub dphi: Vec<Complex64>,
}

impl<'a> Rotors<'a> {
    pub fn new(y: &'a [f64], step: f64) -> Self {
        let (w_im, w_re) = y.iter().map(|&y| (step * y).sin_cos()).unzip();
        Self {
            y,
            step,
            w_re,
            w_im,
        }
    }

    /// Unnormalized Σ_j exp(i k step Y_j) (and Σ_j iY_j exp(…) when
    /// `derivative`) for `k = k0..k0 + len`.
    pub fn sums(&self, k0: usize, len: usize, derivative: bool) -> RotorSums {
        let mut phi = Vec::with_capacity(len);
        let mut dphi = Vec::with_capacity(if derivative { len } else { 0 });
        let mut block_start = 0;
        while block_start < len {
            let block_len = RENORM_PERIOD.min(len - block_start);
            self.block(k0 + block_start, block_len, derivative, &mut phi, &mut dphi);
            block_start += block_len;
        }
        RotorSums { phi, dphi }
    }

    fn block(
        &self,
        k0: usize,
        len: usize,
        derivative: bool,
        phi: &mut Vec<Complex64>,
        dphi: &mut Vec<Complex64>,
    ) {
        let mut acc_re = vec![0.0; len];
        let mut acc_im = vec![0.0; len];
        let mut dacc_re = vec![0.0; if derivative { len } else { 0 }];
        let mut dacc_im = vec![0.0; if derivative { len } else { 0 }];
        let u0 = k0 as f64 * self.step;

        for start in (0..self.y.len()).step_by(LANES) {
            let end = (start + LANES).min(self.y.len());
            let mut y = [0.0; LANES];
            let mut z_re = [0.0; LANES];
            let mut z_im = [0.0; LANES];
            let mut w_re = [1.0; LANES];
            let mut w_im = [0.0; LANES];
            for (l, j) in (start..end).enumerate() {
                y[l] = self.y[j];
                let (s, c) = (u0 * self.y[j]).sin_cos();
                z_re[l] = c;
                z_im[l] = s;
                w_re[l] = self.w_re[j];
                w_im[l] = self.w_im[j];
            }
            for k in 0..len {
                let mut s_re = 0.0;
                let mut s_im = 0.0;
                for l in 0..LANES {
                    s_re += z_re[l];
                    s_im += z_im[l];
                }
                acc_re[k] += s_re;
                acc_im[k] += s_im;
                if derivative {
                    let mut d_re = 0.0;
                    let mut d_im = 0.0;
                    for l in 0..LANES {
                        d_re -= y[l] * z_im[l];
                        d_im += y[l] * z_re[l];
                    }
                    dacc_re[k] += d_re;
                    dacc_im[k] += d_im;
                }
                for l in 0..LANES {
                    let re = z_re[l] * w_re[l] - z_im[l] * w_im[l];
                    let im = z_re[l] * w_im[l] + z_im[l] * w_re[l];
                    z_re[l] = re;
                    z_im[l] = im;
                }
            }
        }
        phi.extend(
            acc_re
                .iter()
                .zip(&acc_im)
                .map(|(&r, &i)| Complex64::new(r, i)),
        );
        if derivative {
            dphi.extend(
                dacc_re
                    .iter()
                    .zip(&dacc_im)
                    .map(|(&r, &i)| Complex64::new(r, i)),
            );
        }
    }
}
