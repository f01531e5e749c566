//! Monte-Carlo risk study: average L2 risks of the adaptive and oracle
//! estimators over replications for a grid of (law, n, K) scenarios.

use std::fmt::Write as _;
use std::io::Write;
use std::ops::Range;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bandwidth::{
    adaptive_cutoff_with, log_spaced, oracle_cutoff_from_root, AdaptiveSettings,
};
use crate::charfn::{evaluate_grid, UGrid};
use crate::error::{Error, Result};
use crate::inversion::{create, csv_err, XGrid};
use crate::rng::derive_seed;
use crate::rootlog::distinguished_root_feasible;
use crate::samples::{generate_grouped, TestLaw};

pub const DEFAULT_REPLICATIONS: usize = 500;
pub const QUICK_REPLICATIONS: usize = 50;
pub const DEFAULT_MASTER_SEED: u64 = 20_240_601;

/// Numerical knobs of one replication.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSettings {
    pub adaptive: AdaptiveSettings,
    /// Root grid step is `min(max_step, m̂ / points_per_cutoff)`.
    pub points_per_cutoff: usize,
    pub max_step: f64,
    /// Oracle cutoffs range up to `oracle_span · m̂` (or the feasible limit).
    pub oracle_span: f64,
    pub oracle_points: usize,
    pub oracle_min: f64,
    pub x_count: usize,
    /// Risk x-grid half-width in standard deviations of the true law.
    pub x_half_width_sd: f64,
}

impl Default for EstimatorSettings {
    fn default() -> Self {
        Self {
            adaptive: AdaptiveSettings::default(),
            points_per_cutoff: 1024,
            max_step: 0.01,
            oracle_span: 5.0,
            oracle_points: 60,
            oracle_min: 0.25,
            x_count: 1024,
            x_half_width_sd: 8.0,
        }
    }
}

impl EstimatorSettings {
    fn validate(&self) -> Result<()> {
        if self.points_per_cutoff < 1 {
            return Err(Error::param("points per cutoff must be ≥ 1"));
        }
        if !(self.max_step > 0.0 && self.oracle_span >= 1.0 && self.oracle_min > 0.0) {
            return Err(Error::param(format!(
                "need max_step > 0, oracle_span ≥ 1, oracle_min > 0 (got {}, {}, {})",
                self.max_step, self.oracle_span, self.oracle_min
            )));
        }
        if self.oracle_points < 1 {
            return Err(Error::param("oracle grid needs at least one point"));
        }
        if self.x_half_width_sd.is_nan() || self.x_half_width_sd <= 0.0 {
            return Err(Error::param(format!(
                "x half-width must be > 0 (got {})",
                self.x_half_width_sd
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicationOutcome {
    pub risk_adaptive: f64,
    pub risk_oracle: f64,
    pub m_adaptive: f64,
    pub m_oracle: f64,
    pub threshold_hit: bool,
}

pub fn replication_seed(master: u64, law: &TestLaw, n: usize, k: usize, rep: usize) -> u64 {
    let [a, b, c] = law.seed_tag();
    derive_seed(master, &[a, b, c, n as u64, k as u64, rep as u64])
}

pub fn run_replication(
    law: &TestLaw,
    n: usize,
    k: usize,
    eta: f64,
    seed: u64,
) -> Result<ReplicationOutcome> {
    let mut settings = EstimatorSettings::default();
    settings.adaptive.eta = eta;
    run_replication_with(law, n, k, &settings, seed)
}

/// Both estimators on one sample, sharing the root and the risk x-grid. The
/// adaptive cutoff is part of the oracle grid, so the oracle never loses.
pub fn run_replication_with(
    law: &TestLaw,
    n: usize,
    k: usize,
    settings: &EstimatorSettings,
    seed: u64,
) -> Result<ReplicationOutcome> {
    settings.validate()?;
    let context = || format!("{law}, n={n}, K={k}, seed={seed}");
    let inner = || -> Result<ReplicationOutcome> {
        let sample = generate_grouped(law, n, k, seed)?;
        let adaptive = adaptive_cutoff_with(&sample, &settings.adaptive)?;
        let m_hat = adaptive.value;
        let step = settings
            .max_step
            .min(m_hat / settings.points_per_cutoff as f64);
        let ceiling = settings.oracle_span * m_hat;
        let half = (ceiling / step - 1e-9).ceil() as usize;
        let grid = UGrid::with_half_count(step, half, false)?;
        let cf = evaluate_grid(&sample, grid);
        let (root, blocked) = distinguished_root_feasible(&cf, grid.u_max(), k as f64)?;
        if root.u_max() < m_hat * (1.0 - 1e-12) {
            return Err(blocked.unwrap_or(Error::CutoffExceedsRange {
                m: m_hat,
                max: root.u_max(),
            }));
        }
        let m_grid = oracle_grid(settings, m_hat, root.u_max(), step);
        let xgrid = XGrid::for_law(law, settings.x_half_width_sd, settings.x_count)?;
        let search = oracle_cutoff_from_root(law, &root, &m_grid, &xgrid)?;
        let risk_adaptive = search
            .risks
            .iter()
            .find(|(m, _)| *m == m_hat)
            .map(|&(_, r)| r)
            .expect("adaptive cutoff is on the oracle grid");
        Ok(ReplicationOutcome {
            risk_adaptive,
            risk_oracle: search.risk,
            m_adaptive: m_hat,
            m_oracle: search.record.value,
            threshold_hit: adaptive.threshold_hit,
        })
    };
    inner().map_err(|e| e.with_context(context()))
}

/// Log-spaced cutoffs snapped to root grid points, plus `m_hat` itself.
pub(crate) fn oracle_grid(
    settings: &EstimatorSettings,
    m_hat: f64,
    feasible: f64,
    step: f64,
) -> Vec<f64> {
    let top = (settings.oracle_span * m_hat).min(feasible).max(m_hat);
    let lo = settings.oracle_min.min(top / 16.0);
    let mut grid: Vec<f64> = log_spaced(lo, top, settings.oracle_points)
        .into_iter()
        .map(|m| ((m / step).round().max(1.0)) * step)
        .filter(|&m| m <= feasible)
        .collect();
    grid.push(m_hat);
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioGrid {
    pub laws: Vec<TestLaw>,
    pub ns: Vec<usize>,
    pub ks: Vec<usize>,
    pub replications: usize,
    pub eta: f64,
    pub master_seed: u64,
}

impl Default for ScenarioGrid {
    fn default() -> Self {
        Self {
            laws: TestLaw::study_laws().to_vec(),
            ns: vec![1000, 5000, 10_000],
            ks: vec![5, 10, 20, 50],
            replications: DEFAULT_REPLICATIONS,
            eta: crate::bandwidth::DEFAULT_ETA,
            master_seed: DEFAULT_MASTER_SEED,
        }
    }
}

impl ScenarioGrid {
    pub fn validate(&self) -> Result<()> {
        if self.replications < 1 {
            return Err(Error::param("replications must be ≥ 1 (got 0)"));
        }
        if self.laws.is_empty() || self.ns.is_empty() || self.ks.is_empty() {
            return Err(Error::param(
                "scenario grid needs at least one law, n and K",
            ));
        }
        if let Some(n) = self.ns.iter().find(|&&n| n < 2) {
            return Err(Error::param(format!("all n must be ≥ 2 (got {n})")));
        }
        if let Some(k) = self.ks.iter().find(|&&k| k < 1) {
            return Err(Error::param(format!("all K must be ≥ 1 (got {k})")));
        }
        if !(self.eta.is_finite() && self.eta > 1.0) {
            return Err(Error::param(format!("eta must be > 1 (got {})", self.eta)));
        }
        Ok(())
    }

    /// (law, n, K) in report order.
    pub fn cells(&self) -> Vec<(TestLaw, usize, usize)> {
        let mut out = Vec::new();
        for law in &self.laws {
            for &n in &self.ns {
                for &k in &self.ks {
                    out.push((*law, n, k));
                }
            }
        }
        out
    }
}

/// Replications `reps` of one cell, in index order. Seeds depend only on the
/// master seed, the cell and the replication index.
pub fn run_cell(
    law: &TestLaw,
    n: usize,
    k: usize,
    settings: &EstimatorSettings,
    master_seed: u64,
    reps: Range<usize>,
) -> Vec<Result<ReplicationOutcome>> {
    reps.into_par_iter()
        .map(|rep| {
            let seed = replication_seed(master_seed, law, n, k, rep);
            run_replication_with(law, n, k, settings, seed)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Oracle,
    Adaptive,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Oracle => "oracle",
            Method::Adaptive => "adaptive",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskRow {
    pub law: String,
    pub n: usize,
    pub k: usize,
    pub method: Method,
    pub mean_risk: f64,
    pub std_error: f64,
    /// Successful replications; 0 marks a failed cell.
    pub reps: usize,
    pub mean_cutoff: f64,
    /// Failure messages (first one per distinct message).
    pub failures: Vec<String>,
    pub failed_reps: usize,
}

impl RiskRow {
    pub fn failed(&self) -> bool {
        self.reps == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub grid: ScenarioGrid,
    pub settings: EstimatorSettings,
    pub rows: Vec<RiskRow>,
}

/// Mean and standard error (sd/√n) in index order.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (mean, (ss / (n - 1) as f64).sqrt() / (n as f64).sqrt())
}

/// Oracle and adaptive rows for one cell.
pub fn summarize_cell(
    law: &TestLaw,
    n: usize,
    k: usize,
    outcomes: &[Result<ReplicationOutcome>],
) -> [RiskRow; 2] {
    let ok: Vec<&ReplicationOutcome> = outcomes.iter().filter_map(|o| o.as_ref().ok()).collect();
    let mut failures: Vec<String> = Vec::new();
    for e in outcomes.iter().filter_map(|o| o.as_ref().err()) {
        let msg = e.to_string();
        if !failures.contains(&msg) {
            failures.push(msg);
        }
    }
    let failed_reps = outcomes.len() - ok.len();
    let row =
        |method, risk: fn(&ReplicationOutcome) -> f64, cut: fn(&ReplicationOutcome) -> f64| {
            let risks: Vec<f64> = ok.iter().map(|o| risk(o)).collect();
            let cuts: Vec<f64> = ok.iter().map(|o| cut(o)).collect();
            let (mean_risk, std_error) = mean_and_se(&risks);
            RiskRow {
                law: law.to_string(),
                n,
                k,
                method,
                mean_risk,
                std_error,
                reps: ok.len(),
                mean_cutoff: mean_and_se(&cuts).0,
                failures: failures.clone(),
                failed_reps,
            }
        };
    [
        row(Method::Oracle, |o| o.risk_oracle, |o| o.m_oracle),
        row(Method::Adaptive, |o| o.risk_adaptive, |o| o.m_adaptive),
    ]
}

pub fn run_grid(grid: &ScenarioGrid) -> Result<RiskReport> {
    run_grid_with(grid, &EstimatorSettings::default())
}

pub fn run_grid_with(grid: &ScenarioGrid, settings: &EstimatorSettings) -> Result<RiskReport> {
    grid.validate()?;
    let mut settings = *settings;
    settings.adaptive.eta = grid.eta;
    settings.validate()?;
    let mut rows = Vec::new();
    for (law, n, k) in grid.cells() {
        let outcomes = run_cell(
            &law,
            n,
            k,
            &settings,
            grid.master_seed,
            0..grid.replications,
        );
        rows.extend(summarize_cell(&law, n, k, &outcomes));
    }
    Ok(RiskReport {
        grid: grid.clone(),
        settings,
        rows,
    })
}

impl RiskReport {
    pub fn row(&self, law: &TestLaw, n: usize, k: usize, method: Method) -> Option<&RiskRow> {
        let name = law.to_string();
        self.rows
            .iter()
            .find(|r| r.law == name && r.n == n && r.k == k && r.method == method)
    }

    pub fn all_failed(&self) -> bool {
        self.rows.iter().all(RiskRow::failed)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        w.write_record([
            "law",
            "n",
            "K",
            "method",
            "mean_risk",
            "std_error",
            "reps",
            "mean_cutoff",
        ])
        .map_err(csv_err)?;
        for r in &self.rows {
            w.write_record([
                r.law.clone(),
                r.n.to_string(),
                r.k.to_string(),
                r.method.as_str().to_string(),
                r.mean_risk.to_string(),
                r.std_error.to_string(),
                r.reps.to_string(),
                r.mean_cutoff.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Io {
            path: "<csv>".into(),
            source: e,
        })
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(create(path)?)
    }

    /// One block per law with rows (n, K) and oracle/adaptive columns,
    /// standard errors and mean cutoffs.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let mut laws: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !laws.contains(&r.law.as_str()) {
                laws.push(&r.law);
            }
        }
        for law in laws {
            let _ = writeln!(s, "{law}");
            let _ = writeln!(
                s,
                "{:>7} {:>4} {:>10} {:>10} {:>10} {:>10} {:>8} {:>8} {:>6}",
                "n", "K", "oracle", "(se)", "adaptive", "(se)", "m_or", "m_ad", "reps"
            );
            let rows: Vec<&RiskRow> = self.rows.iter().filter(|r| r.law == law).collect();
            for pair in rows.chunks(2) {
                let (or, ad) = match pair {
                    [a, b] if a.method == Method::Oracle => (*a, *b),
                    [a, b] => (*b, *a),
                    _ => continue,
                };
                let _ = write!(
                    s,
                    "{:>7} {:>4} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>8.3} {:>8.3} {:>6}",
                    or.n,
                    or.k,
                    or.mean_risk,
                    or.std_error,
                    ad.mean_risk,
                    ad.std_error,
                    or.mean_cutoff,
                    ad.mean_cutoff,
                    ad.reps
                );
                if or.failed_reps > 0 {
                    let _ = write!(s, "  {} failed: {}", or.failed_reps, or.failures.join("; "));
                }
                s.push('\n');
            }
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn normal() -> TestLaw {
        TestLaw::normal(2.0, 1.0).unwrap()
    }

    #[test]
    fn replication_is_deterministic() {
        let a = run_replication(&normal(), 500, 5, 1.1, 42).unwrap();
        let b = run_replication(&normal(), 500, 5, 1.1, 42).unwrap();
        assert_eq!(a, b);
        assert!(a.risk_oracle <= a.risk_adaptive + 1e-12);
        assert!(a.m_adaptive <= 500f64.powf(0.2));
    }

    #[test]
    fn oracle_grid_contains_cutoff() {
        let s = EstimatorSettings::default();
        let step = 1.0 / 4096.0;
        let g = oracle_grid(&s, 1.0, 5.0, step);
        assert!(g.contains(&1.0));
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert!(*g.last().unwrap() <= 5.0);
        assert!(g
            .iter()
            .all(|m| (m / step - (m / step).round()).abs() < 1e-9));
        let g = oracle_grid(&s, 1.0, 2.0, step);
        assert!(*g.last().unwrap() <= 2.0);
    }

    #[test]
    fn single_cell_grid() {
        let grid = ScenarioGrid {
            laws: vec![normal()],
            ns: vec![200],
            ks: vec![5],
            replications: 1,
            ..ScenarioGrid::default()
        };
        let report = run_grid(&grid).unwrap();
        assert_eq!(report.rows.len(), 2);
        assert_eq!(report.rows[0].method, Method::Oracle);
        assert_eq!(report.rows[0].std_error, 0.0);
        let mut csv = Vec::new();
        report.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("law,n,K,method,mean_risk,std_error,reps,mean_cutoff\n"));
        assert_eq!(text.lines().count(), 3);
        assert!(report.to_table().contains("Normal(2,1)"));
    }

    #[test]
    fn invalid_grids() {
        let base = ScenarioGrid::default;
        assert!(ScenarioGrid {
            replications: 0,
            ..base()
        }
        .validate()
        .is_err());
        assert!(ScenarioGrid {
            ns: vec![1],
            ..base()
        }
        .validate()
        .is_err());
        assert!(ScenarioGrid {
            ks: vec![0],
            ..base()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn failed_cells_are_rows() {
        let outcomes = vec![Err(Error::param("boom")), Err(Error::param("boom"))];
        let [or, ad] = summarize_cell(&normal(), 10, 5, &outcomes);
        assert!(or.failed() && ad.failed());
        assert!(or.mean_risk.is_nan());
        assert_eq!(or.failures.len(), 1);
        assert_eq!(or.failed_reps, 2);
    }

    #[test]
    fn standard_error() {
        let (m, se) = mean_and_se(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((se - (5.0f64 / 3.0).sqrt() / 2.0).abs() < 1e-15);
    }

    #[test]
    fn default_grid_has_96_rows_worth_of_cells() {
        assert_eq!(ScenarioGrid::default().cells().len() * 2, 96);
    }
}
