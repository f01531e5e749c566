//! Command-line front end: `estimate`, `simulate` and `diagnose`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::bandwidth::{
    adaptive_cutoff_with, diagnose, oracle_cutoff_from_root, AdaptiveSettings, CutoffRecord,
    DEFAULT_DELTA, DEFAULT_ETA, DEFAULT_SCAN_RESOLUTION,
};
use crate::charfn::{evaluate_grid, UGrid};
use crate::error::{Error, Result};
use crate::experiments::{
    oracle_grid, run_grid_with, EstimatorSettings, ScenarioGrid, DEFAULT_MASTER_SEED,
    DEFAULT_REPLICATIONS, QUICK_REPLICATIONS,
};
use crate::inversion::{create, invert, DensityEstimate, Provenance, XGrid};
use crate::rootlog::{distinguished_root, distinguished_root_feasible, RootEstimate};
use crate::samples::{load_sample, GroupedSample, TestLaw};

pub const THREADS_ENV: &str = "GROUPDECONV_THREADS";

pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_ALL_FAILED: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "groupdeconv",
    version,
    about = "Density estimation from grouped sums"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the density of one summand from a file of group sums.
    Estimate(EstimateArgs),
    /// Run the Monte-Carlo risk study.
    Simulate(SimulateArgs),
    /// Report the theoretical threshold for a known law.
    Diagnose(DiagnoseArgs),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CutoffChoice {
    Adaptive,
    Oracle,
    Fixed(f64),
}

impl FromStr for CutoffChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "adaptive" => Ok(CutoffChoice::Adaptive),
            "oracle" => Ok(CutoffChoice::Oracle),
            _ => {
                let m = s
                    .strip_prefix("fixed:")
                    .ok_or_else(|| format!("expected adaptive, oracle or fixed:<m> (got {s:?})"))?;
                let m: f64 = m
                    .parse()
                    .map_err(|_| format!("fixed cutoff must be a number (got {m:?})"))?;
                if m.is_finite() && m > 0.0 {
                    Ok(CutoffChoice::Fixed(m))
                } else {
                    Err(format!("fixed cutoff must be > 0 (got {m})"))
                }
            }
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct XGridArgs {
    #[arg(long, allow_hyphen_values = true)]
    pub x_min: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub x_max: Option<f64>,
    #[arg(long, default_value_t = 1024)]
    pub x_count: usize,
}

#[derive(Debug, Clone, Args)]
pub struct EstimateArgs {
    /// One observation per line (first column of a CSV), optional header.
    #[arg(long)]
    pub input: PathBuf,
    /// Number of summands per observation (K, or Δ for real values).
    #[arg(long)]
    pub group_size: f64,
    #[arg(long, default_value_t = DEFAULT_ETA)]
    pub eta: f64,
    /// adaptive | oracle | fixed:<m>
    #[arg(long, default_value = "adaptive")]
    pub cutoff: CutoffChoice,
    /// Exact law for the oracle rule.
    #[arg(long)]
    pub law: Option<String>,
    #[arg(long, default_value_t = DEFAULT_SCAN_RESOLUTION)]
    pub scan_resolution: f64,
    #[command(flatten)]
    pub xgrid: XGridArgs,
    /// Clip negative values and renormalize to unit mass.
    #[arg(long)]
    pub clip: bool,
    /// CSV output; the JSON goes next to it.
    #[arg(long, default_value = "estimate.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// Flat `key = value` file (keys: laws, n, group-size, reps, eta, seed, out).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Repeatable; `normal`, `gumbel`, `gamma`, `laplace` or `name:a,b`.
    #[arg(long)]
    pub law: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    pub n: Vec<usize>,
    #[arg(long = "group-size", value_delimiter = ',')]
    pub group_size: Vec<usize>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// 50 replications per cell.
    #[arg(long)]
    pub quick: bool,
    /// CSV output; the text table and metadata go next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub law: String,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub group_size: f64,
    #[arg(long, default_value_t = 0.1)]
    pub eps: f64,
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    pub delta: f64,
    #[arg(long, default_value_t = DEFAULT_ETA)]
    pub eta: f64,
    #[arg(long, default_value_t = 201)]
    pub profile_points: usize,
    /// JSON output; the |φ| profile CSV goes next to it.
    #[arg(long, default_value = "diagnose.json")]
    pub out: PathBuf,
}

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err.root_cause() {
        Error::DenominatorTooSmall { .. }
        | Error::CutoffExceedsRange { .. }
        | Error::LevelNotReached { .. } => EXIT_NUMERICAL,
        _ => EXIT_INPUT,
    }
}

/// Size the global worker pool from `GROUPDECONV_THREADS`, if set.
pub fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = raw.trim().parse().ok().filter(|&t| t >= 1).ok_or_else(|| {
        Error::param(format!(
            "{THREADS_ENV} must be a positive integer (got {raw:?})"
        ))
    })?;
    // Fails only if a pool already exists, in which case it is kept.
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global();
    Ok(())
}

/// Parse arguments, run, and return the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { 0 };
        }
    };
    let result = configure_threads().and_then(|()| match &cli.command {
        Command::Estimate(a) => cmd_estimate(a).map(|_| 0),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Diagnose(a) => cmd_diagnose(a).map(|_| 0),
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn sibling(path: &Path, extension: &str) -> PathBuf {
    path.with_extension(extension)
}

#[derive(Debug, Serialize)]
struct EstimateOutput<'a> {
    #[serde(flatten)]
    estimate: &'a DensityEstimate,
    settings: EstimateSettingsRecord,
}

#[derive(Debug, Clone, Serialize)]
struct EstimateSettingsRecord {
    eta: f64,
    scan_resolution: f64,
    unit_group_cap: f64,
    x_grid_policy: String,
    root_points_per_cutoff: usize,
    clip: bool,
}

/// Estimate f̂ from a sample with the chosen cutoff rule.
pub fn estimate_density(
    sample: &GroupedSample,
    rule: CutoffChoice,
    law: Option<&TestLaw>,
    adaptive: &AdaptiveSettings,
    xgrid: &XGrid,
) -> Result<DensityEstimate> {
    let settings = EstimatorSettings {
        adaptive: *adaptive,
        ..EstimatorSettings::default()
    };
    let step_for = |m: f64| settings.max_step.min(m / settings.points_per_cutoff as f64);
    let k = sample.group_size();
    let (record, values) = match rule {
        CutoffChoice::Fixed(m) => {
            let root = root_up_to(sample, m, step_for(m))?;
            (CutoffRecord::fixed(m), invert(&root, m, xgrid)?.values)
        }
        CutoffChoice::Adaptive => {
            let record = adaptive_cutoff_with(sample, adaptive)?;
            let m = record.value;
            let root = root_up_to(sample, m, step_for(m))?;
            (record, invert(&root, m, xgrid)?.values)
        }
        CutoffChoice::Oracle => {
            let law = law.ok_or_else(|| Error::param("the oracle cutoff needs --law"))?;
            let m_hat = adaptive_cutoff_with(sample, adaptive)?.value;
            let step = step_for(m_hat);
            let half = (settings.oracle_span * m_hat / step - 1e-9).ceil() as usize;
            let grid = UGrid::with_half_count(step, half, false)?;
            let (root, _) =
                distinguished_root_feasible(&evaluate_grid(sample, grid), grid.u_max(), k)?;
            let m_grid = oracle_grid(&settings, m_hat, root.u_max(), step);
            let search = oracle_cutoff_from_root(law, &root, &m_grid, xgrid)?;
            for w in &search.warnings {
                eprintln!("warning: {w}");
            }
            let m = search.record.value;
            (search.record, invert(&root, m, xgrid)?.values)
        }
    };
    Ok(DensityEstimate {
        xgrid: *xgrid,
        cutoff: record,
        group_size: k,
        provenance: Provenance {
            n: Some(sample.n()),
            seed: None,
            data_path: None,
        },
        values,
    })
}

fn root_up_to(sample: &GroupedSample, m: f64, step: f64) -> Result<RootEstimate> {
    let half = ((m / step - 1e-9).ceil() as usize).max(1);
    let grid = UGrid::with_half_count(step, half, false)?;
    distinguished_root(&evaluate_grid(sample, grid), m, sample.group_size())
}

fn resolve_xgrid(args: &XGridArgs, sample: &GroupedSample) -> Result<XGrid> {
    let default = XGrid::for_sample(sample, 8.0, args.x_count)?;
    XGrid::new(
        args.x_min.unwrap_or(default.x_min()),
        args.x_max.unwrap_or(default.x_max()),
        args.x_count,
    )
}

pub fn cmd_estimate(args: &EstimateArgs) -> Result<DensityEstimate> {
    let law = args.law.as_deref().map(TestLaw::parse).transpose()?;
    if args.cutoff == CutoffChoice::Oracle && law.is_none() {
        return Err(Error::param("--cutoff oracle requires --law"));
    }
    let sample = load_sample(&args.input, args.group_size)?;
    let adaptive = AdaptiveSettings {
        eta: args.eta,
        scan_resolution: args.scan_resolution,
        ..AdaptiveSettings::default()
    };
    let xgrid = resolve_xgrid(&args.xgrid, &sample)?;
    let mut est = estimate_density(&sample, args.cutoff, law.as_ref(), &adaptive, &xgrid)?;
    est.provenance.data_path = Some(args.input.display().to_string());
    if args.clip {
        est.clip_and_renormalize();
    }
    est.save_csv(&args.out)?;
    let json_path = sibling(&args.out, "json");
    let output = EstimateOutput {
        estimate: &est,
        settings: EstimateSettingsRecord {
            eta: adaptive.eta,
            scan_resolution: adaptive.scan_resolution,
            unit_group_cap: adaptive.unit_group_cap,
            x_grid_policy: match (args.xgrid.x_min, args.xgrid.x_max) {
                (None, None) => "mean(Y)/K ± 8·sqrt(var(Y)/K)".into(),
                _ => "user".into(),
            },
            root_points_per_cutoff: EstimatorSettings::default().points_per_cutoff,
            clip: args.clip,
        },
    };
    let f = create(&json_path)?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(f), &output)
        .map_err(|e| Error::param(format!("JSON serialization failed: {e}")))?;
    eprintln!(
        "m = {:.6} ({:?}), n = {}, wrote {} and {}",
        est.cutoff.value,
        est.cutoff.rule,
        sample.n(),
        args.out.display(),
        json_path.display()
    );
    Ok(est)
}

/// Flat `key = value` lines; `#` starts a comment.
pub fn parse_config(text: &str, source: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Parse {
                path: source.to_path_buf(),
                line: i + 1,
                column: 1,
                token: line.to_string(),
            });
        };
        out.insert(key.trim().to_ascii_lowercase(), value.trim().to_string());
    }
    Ok(out)
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse()
                .map_err(|_| Error::param(format!("config key {key}: cannot parse {t:?}")))
        })
        .collect()
}

fn parse_one<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::param(format!("config key {key}: cannot parse {value:?}")))
}

/// Scenario grid from defaults, then the config file, then flags.
pub fn resolve_grid(args: &SimulateArgs) -> Result<(ScenarioGrid, PathBuf)> {
    let mut grid = ScenarioGrid::default();
    let mut out = PathBuf::from("risks.csv");
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.clone(),
            source,
        })?;
        for (key, value) in parse_config(&text, path)? {
            match key.as_str() {
                "laws" | "law" => {
                    grid.laws = value
                        .split_whitespace()
                        .map(TestLaw::parse)
                        .collect::<Result<_>>()?
                }
                "n" | "ns" => grid.ns = parse_list(&key, &value)?,
                "group-size" | "group_size" | "k" | "ks" => grid.ks = parse_list(&key, &value)?,
                "reps" | "replications" => grid.replications = parse_one(&key, &value)?,
                "eta" => grid.eta = parse_one(&key, &value)?,
                "seed" => grid.master_seed = parse_one(&key, &value)?,
                "out" => out = PathBuf::from(value),
                "quick" => {
                    if parse_one::<bool>(&key, &value)? {
                        grid.replications = QUICK_REPLICATIONS;
                    }
                }
                _ => return Err(Error::param(format!("unknown config key {key:?}"))),
            }
        }
    }
    if !args.law.is_empty() {
        grid.laws = args
            .law
            .iter()
            .map(|s| TestLaw::parse(s))
            .collect::<Result<_>>()?;
    }
    if !args.n.is_empty() {
        grid.ns = args.n.clone();
    }
    if !args.group_size.is_empty() {
        grid.ks = args.group_size.clone();
    }
    if args.quick {
        grid.replications = QUICK_REPLICATIONS;
    }
    if let Some(r) = args.reps {
        grid.replications = r;
    }
    if let Some(eta) = args.eta {
        grid.eta = eta;
    }
    if let Some(seed) = args.seed {
        grid.master_seed = seed;
    }
    if let Some(o) = &args.out {
        out = o.clone();
    }
    grid.validate()?;
    Ok((grid, out))
}

#[derive(Debug, Serialize)]
struct SimulateMeta<'a> {
    grid: &'a ScenarioGrid,
    settings: &'a EstimatorSettings,
    default_replications: usize,
    default_seed: u64,
    x_grid_policy: &'static str,
    risk: &'static str,
    failed_rows: usize,
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<i32> {
    let (grid, out) = resolve_grid(args)?;
    let report = run_grid_with(&grid, &EstimatorSettings::default())?;
    report.save_csv(&out)?;
    let table = report.to_table();
    std::fs::write(sibling(&out, "txt"), &table).map_err(|source| Error::Io {
        path: sibling(&out, "txt"),
        source,
    })?;
    let meta = SimulateMeta {
        grid: &report.grid,
        settings: &report.settings,
        default_replications: DEFAULT_REPLICATIONS,
        default_seed: DEFAULT_MASTER_SEED,
        x_grid_policy: "true mean ± 8 true sd, shared by all replications of a cell",
        risk: "trapezoid of (f - fhat)^2 on the x-grid",
        failed_rows: report.rows.iter().filter(|r| r.failed()).count(),
    };
    let meta_path = sibling(&out, "meta.json");
    let f = create(&meta_path)?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(f), &meta)
        .map_err(|e| Error::param(format!("JSON serialization failed: {e}")))?;
    print!("{table}");
    for row in report.rows.iter().filter(|r| r.failed_reps > 0) {
        eprintln!(
            "warning: {} n={} K={} {}: {} replications failed: {}",
            row.law,
            row.n,
            row.k,
            row.method.as_str(),
            row.failed_reps,
            row.failures.join("; ")
        );
    }
    Ok(if report.all_failed() {
        EXIT_ALL_FAILED
    } else {
        0
    })
}

#[derive(Debug, Serialize)]
pub struct DiagnoseOutput {
    #[serde(flatten)]
    pub diagnostics: crate::bandwidth::Diagnostics,
    pub warnings: Vec<String>,
    /// (u, |φ_X(u)|, |φ_X(u)|^K)
    pub profile: Vec<(f64, f64, f64)>,
}

pub fn cmd_diagnose(args: &DiagnoseArgs) -> Result<DiagnoseOutput> {
    let law = TestLaw::parse(&args.law)?;
    let d = diagnose(
        &law,
        args.n,
        args.group_size,
        args.eps,
        args.delta,
        args.eta,
    )?;
    let mut warnings = Vec::new();
    if d.u_n.is_none() {
        warnings.push(format!(
            "|phi_X|^K never reaches level {:.3e}; u_n undefined",
            d.level
        ));
    }
    let span = match d.u_n {
        Some(u) if u > 0.0 => 2.0 * u,
        _ => d.cap.min(10.0),
    };
    let count = args.profile_points.max(2);
    let profile: Vec<(f64, f64, f64)> = (0..count)
        .map(|i| {
            let u = span * i as f64 / (count - 1) as f64;
            let m = law.cf(u).norm();
            (u, m, m.powf(args.group_size))
        })
        .collect();
    let output = DiagnoseOutput {
        diagnostics: d,
        warnings,
        profile,
    };
    let f = create(&args.out)?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(f), &output)
        .map_err(|e| Error::param(format!("JSON serialization failed: {e}")))?;
    let csv_path = sibling(&args.out, "csv");
    let mut text = String::from("u,abs_phi_x,abs_phi\n");
    for (u, a, b) in &output.profile {
        text.push_str(&format!("{u},{a},{b}\n"));
    }
    std::fs::write(&csv_path, text).map_err(|source| Error::Io {
        path: csv_path.clone(),
        source,
    })?;
    let d = &output.diagnostics;
    println!("law        {}", d.law);
    println!("n, K       {}, {}", d.n, d.group_size);
    println!("gamma      {:.6}  (delta = {})", d.gamma, d.delta);
    println!("level      {:.6e}  (eps = {})", d.level, d.eps);
    match d.u_n {
        Some(u) => println!("u_n        {u:.6}"),
        None => println!("u_n        not reached"),
    }
    println!(
        "threshold  {:.6}  (eta = {})",
        d.adaptive_threshold, args.eta
    );
    println!("cap        {:.6}", d.cap);
    println!("C1, C2     {:.6}, {:.6}", d.c1, d.c2);
    for w in &output.warnings {
        eprintln!("warning: {w}");
    }
    Ok(output)
}
