//! Spectral cut-off Fourier inversion and L2 distances.
//!
//! f̂_m(x) = (1/2π) ∫_{−m}^{m} e^{−iux} φ̂_X(u) du = (1/π) Re ∫₀^m e^{−iux} φ̂_X(u) du,
//! evaluated by the trapezoid rule on the root's grid. When m is not a grid
//! point the last partial interval uses φ̂_X(m) interpolated linearly.
//!
//! Several cutoffs on the same root share a single pass over the grid: the
//! running trapezoid sums are read off at each requested index.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::bandwidth::CutoffRecord;
use crate::charfn::RENORM_PERIOD;
use crate::error::{Error, Result};
use crate::rootlog::RootEstimate;
use crate::samples::TestLaw;

const LANES: usize = 8;

/// Uniform grid of `count` points from `x_min` to `x_max` inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct XGrid {
    x_min: f64,
    x_max: f64,
    count: usize,
}

impl XGrid {
    pub fn new(x_min: f64, x_max: f64, count: usize) -> Result<Self> {
        if !(x_min.is_finite() && x_max.is_finite() && x_min < x_max) {
            return Err(Error::param(format!(
                "x grid needs x_min < x_max (got {x_min}, {x_max})"
            )));
        }
        if count < 16 {
            return Err(Error::param(format!(
                "x grid needs at least 16 points (got {count})"
            )));
        }
        Ok(Self {
            x_min,
            x_max,
            count,
        })
    }

    pub fn centered(center: f64, half_width: f64, count: usize) -> Result<Self> {
        Self::new(center - half_width, center + half_width, count)
    }

    /// Grid around E[X] = mean(Y)/K spanning ±`sds` standard deviations of X,
    /// with Var(X) = Var(Y)/K.
    pub fn for_sample(
        sample: &crate::samples::GroupedSample,
        sds: f64,
        count: usize,
    ) -> Result<Self> {
        let k = sample.group_size();
        let sd = (sample.variance() / k).sqrt();
        let half = if sd > 0.0 { sds * sd } else { 1.0 };
        Self::centered(sample.mean() / k, half, count)
    }

    pub fn for_law(law: &TestLaw, sds: f64, count: usize) -> Result<Self> {
        Self::centered(law.mean(), sds * law.variance().sqrt(), count)
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.count - 1) as f64
    }

    pub fn point(&self, i: usize) -> f64 {
        if i + 1 == self.count {
            self.x_max
        } else {
            self.x_min + i as f64 * self.dx()
        }
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.count).map(|i| self.point(i)).collect()
    }
}

/// Where an estimate came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data_path: Option<String>,
}

/// f̂_m on an x-grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DensityEstimate {
    pub xgrid: XGrid,
    pub cutoff: CutoffRecord,
    pub group_size: f64,
    pub provenance: Provenance,
    pub values: Vec<f64>,
}

impl DensityEstimate {
    pub fn cutoff_m(&self) -> f64 {
        self.cutoff.value
    }

    /// Set negative values to zero and rescale to unit mass on the grid.
    pub fn clip_and_renormalize(&mut self) {
        for v in &mut self.values {
            *v = v.max(0.0);
        }
        let mass = trapezoid(&self.values, self.xgrid.dx());
        if mass > 0.0 {
            for v in &mut self.values {
                *v /= mass;
            }
        }
    }

    pub fn l2_norm_sq(&self) -> f64 {
        let sq: Vec<f64> = self.values.iter().map(|v| v * v).collect();
        trapezoid(&sq, self.xgrid.dx())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        w.write_record(["x", "fhat"]).map_err(csv_err)?;
        for (i, v) in self.values.iter().enumerate() {
            w.write_record([self.xgrid.point(i).to_string(), v.to_string()])
                .map_err(csv_err)?;
        }
        w.flush().map_err(|e| csv_err(e.into()))?;
        Ok(())
    }

    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self)
            .map_err(|e| Error::param(format!("JSON serialization failed: {e}")))
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let f = create(path)?;
        self.write_json(std::io::BufWriter::new(f))
    }
}

pub(crate) fn create(path: &Path) -> Result<std::fs::File> {
    std::fs::File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::param(format!("CSV write failed: {e}"))
}

/// Anything that can be evaluated as a density on the real line.
pub trait Density {
    fn density(&self, x: f64) -> f64;
}

impl Density for TestLaw {
    fn density(&self, x: f64) -> f64 {
        self.pdf(x)
    }
}

/// Linear interpolation inside the estimate's grid, zero outside.
impl Density for DensityEstimate {
    fn density(&self, x: f64) -> f64 {
        let g = &self.xgrid;
        if x < g.x_min() || x > g.x_max() {
            return 0.0;
        }
        let pos = (x - g.x_min()) / g.dx();
        let i = (pos.floor() as usize).min(g.count() - 1);
        if i + 1 >= g.count() {
            return self.values[i];
        }
        let t = pos - i as f64;
        self.values[i] * (1.0 - t) + self.values[i + 1] * t
    }
}

/// Wrap a closure as a [`Density`].
pub struct FnDensity<F>(pub F);

impl<F: Fn(f64) -> f64> Density for FnDensity<F> {
    fn density(&self, x: f64) -> f64 {
        (self.0)(x)
    }
}

pub(crate) fn trapezoid(values: &[f64], dx: f64) -> f64 {
    match values {
        [] | [_] => 0.0,
        [first, .., last] => (values.iter().sum::<f64>() - 0.5 * (first + last)) * dx,
    }
}

/// Trapezoid approximation of ∫(a − b)² over `xgrid`.
pub fn l2_distance<A, B>(a: &A, b: &B, xgrid: &XGrid) -> f64
where
    A: Density + ?Sized,
    B: Density + ?Sized,
{
    let sq: Vec<f64> = xgrid
        .points()
        .into_iter()
        .map(|x| (a.density(x) - b.density(x)).powi(2))
        .collect();
    trapezoid(&sq, xgrid.dx())
}

/// Same as [`l2_distance`] for two value vectors on a shared grid.
pub fn l2_distance_values(a: &[f64], b: &[f64], dx: f64) -> f64 {
    let sq: Vec<f64> = a.iter().zip(b).map(|(a, b)| (a - b).powi(2)).collect();
    trapezoid(&sq, dx)
}

/// (1/2π) ∫_{−m}^{m} |φ̂_X|² du, the frequency-side squared norm of f̂_m.
pub fn spectral_norm_sq(root: &RootEstimate, m: f64) -> Result<f64> {
    let (j, rest) = split_cutoff(root, m)?;
    let sq: Vec<f64> = root.modulus_pow()[..=j].iter().map(|r| r * r).collect();
    let mut integral = trapezoid(&sq, root.step());
    if rest > 0.0 {
        let end = root.interpolate(m).norm_sqr();
        integral += 0.5 * rest * (sq[j] + end);
    }
    Ok(integral / PI)
}

/// Grid index at or below `m` and the leftover partial interval length.
fn split_cutoff(root: &RootEstimate, m: f64) -> Result<(usize, f64)> {
    if !(m.is_finite() && m > 0.0) {
        return Err(Error::param(format!("cutoff m must be > 0 (got {m})")));
    }
    let max = root.u_max();
    if m > max * (1.0 + 1e-12) {
        return Err(Error::CutoffExceedsRange { m, max });
    }
    let j = root.index_at_or_below(m);
    let rest = m - j as f64 * root.step();
    let rest = if rest <= 1e-9 * root.step() {
        0.0
    } else {
        rest
    };
    Ok((j, rest))
}

/// f̂_m on `xgrid` with the cutoff recorded as a fixed value.
pub fn invert(root: &RootEstimate, m: f64, xgrid: &XGrid) -> Result<DensityEstimate> {
    let values = invert_many(root, &[m], xgrid)?.pop().expect("one cutoff");
    Ok(DensityEstimate {
        xgrid: *xgrid,
        cutoff: CutoffRecord::fixed(m),
        group_size: root.group_size(),
        provenance: Provenance {
            n: None,
            seed: None,
            data_path: None,
        },
        values,
    })
}

/// f̂_m values on `xgrid` for each cutoff in `ms` (any order).
pub fn invert_many(root: &RootEstimate, ms: &[f64], xgrid: &XGrid) -> Result<Vec<Vec<f64>>> {
    let splits = ms
        .iter()
        .map(|&m| split_cutoff(root, m))
        .collect::<Result<Vec<_>>>()?;
    let mut checkpoints: Vec<usize> = splits.iter().map(|&(j, _)| j).collect();
    checkpoints.sort_unstable();
    checkpoints.dedup();

    let xs = xgrid.points();
    let integrals = cumulative_integrals(root, &xs, &checkpoints);

    Ok(ms
        .iter()
        .zip(&splits)
        .map(|(&m, &(j, rest))| {
            let slot = checkpoints.binary_search(&j).expect("checkpoint present");
            let base = &integrals[slot];
            if rest == 0.0 {
                return base.iter().map(|v| v / PI).collect();
            }
            let u_j = j as f64 * root.step();
            let at_j = root.value(j);
            let at_m = root.interpolate(m);
            xs.iter()
                .zip(base)
                .map(|(&x, &v)| {
                    let g_j = (Complex64::from_polar(1.0, -u_j * x) * at_j).re;
                    let g_m = (Complex64::from_polar(1.0, -m * x) * at_m).re;
                    (v + 0.5 * rest * (g_j + g_m)) / PI
                })
                .collect()
        })
        .collect())
}

/// For each checkpoint index j: ∫₀^{u_j} Re(e^{−iux} φ̂_X(u)) du per x
/// (trapezoid, not yet divided by π).
fn cumulative_integrals(root: &RootEstimate, xs: &[f64], checkpoints: &[usize]) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; xs.len()]; checkpoints.len()];
    let Some(&last) = checkpoints.last() else {
        return out;
    };
    let step = root.step();
    let values: Vec<Complex64> = (0..=last).map(|k| root.value(k)).collect();
    let g0 = values[0].re;

    for start in (0..xs.len()).step_by(LANES) {
        let end = (start + LANES).min(xs.len());
        let mut x = [0.0; LANES];
        let mut w_re = [1.0; LANES];
        let mut w_im = [0.0; LANES];
        for (l, i) in (start..end).enumerate() {
            x[l] = xs[i];
            let (s, c) = (-step * xs[i]).sin_cos();
            w_re[l] = c;
            w_im[l] = s;
        }
        let mut z_re = [1.0; LANES];
        let mut z_im = [0.0; LANES];
        let mut sum = [0.0; LANES];
        let mut next = 0;
        for (k, v) in values.iter().enumerate() {
            if k % RENORM_PERIOD == 0 && k > 0 {
                let u = k as f64 * step;
                for l in 0..LANES {
                    let (s, c) = (-u * x[l]).sin_cos();
                    z_re[l] = c;
                    z_im[l] = s;
                }
            }
            let mut g = [0.0; LANES];
            for l in 0..LANES {
                g[l] = z_re[l] * v.re - z_im[l] * v.im;
                sum[l] += g[l];
            }
            while next < checkpoints.len() && checkpoints[next] == k {
                for (l, i) in (start..end).enumerate() {
                    out[next][i] = if k == 0 {
                        0.0
                    } else {
                        step * (sum[l] - 0.5 * (g0 + g[l]))
                    };
                }
                next += 1;
            }
            for l in 0..LANES {
                let re = z_re[l] * w_re[l] - z_im[l] * w_im[l];
                let im = z_re[l] * w_im[l] + z_im[l] * w_re[l];
                z_re[l] = re;
                z_im[l] = im;
            }
        }
    }
    out
}
