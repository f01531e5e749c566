//! Grouped observations and the synthetic test laws.
//!
//! A grouped observation is a sum `Y = X_1 + … + X_K` of `K` independent
//! copies of the variable of interest `X`; only `Y` is recorded. The four
//! test laws carry exact densities and characteristic functions so that
//! every estimate can be scored against the truth.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;

use num_complex::Complex64;
use rand_distr::{Distribution, Exp, Gamma, Gumbel, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, Rng};
use crate::special::{digamma, ln_gamma, ln_gamma_real};

pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Observations of K-fold sums together with the group size.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedSample {
    observations: Vec<f64>,
    group_size: f64,
}

impl GroupedSample {
    pub fn new(observations: Vec<f64>, group_size: f64) -> Result<Self> {
        if observations.len() < 2 {
            return Err(Error::TooFewObservations(observations.len()));
        }
        validate_group_size(group_size)?;
        if let Some(i) = observations.iter().position(|y| !y.is_finite()) {
            return Err(Error::param(format!(
                "observation {} is not finite ({})",
                i + 1,
                observations[i]
            )));
        }
        Ok(Self {
            observations,
            group_size,
        })
    }

    pub fn observations(&self) -> &[f64] {
        &self.observations
    }

    pub fn group_size(&self) -> f64 {
        self.group_size
    }

    pub fn n(&self) -> usize {
        self.observations.len()
    }

    pub fn mean(&self) -> f64 {
        self.observations.iter().sum::<f64>() / self.n() as f64
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        let mean = self.mean();
        let ss: f64 = self.observations.iter().map(|y| (y - mean).powi(2)).sum();
        ss / (self.n() - 1) as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.observations.iter().fold(0.0, |m, y| m.max(y.abs()))
    }
}

pub(crate) fn validate_group_size(group_size: f64) -> Result<()> {
    if !(group_size.is_finite() && group_size >= 1.0) {
        return Err(Error::param(format!(
            "group size must be ≥ 1 (got {group_size})"
        )));
    }
    Ok(())
}

/// One of the four test distributions for X.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TestLaw {
    Normal {
        mean: f64,
        variance: f64,
    },
    /// Parameterized by its mean; the location is `mean − γ·scale`.
    Gumbel {
        mean: f64,
        scale: f64,
    },
    Gamma {
        shape: f64,
        rate: f64,
    },
    /// Density `exp(−|x − mean|/scale) / (2·scale)`.
    Laplace {
        mean: f64,
        scale: f64,
    },
}

impl TestLaw {
    pub fn normal(mean: f64, variance: f64) -> Result<Self> {
        positive("variance", variance)?;
        finite("mean", mean)?;
        Ok(TestLaw::Normal { mean, variance })
    }

    pub fn gumbel(mean: f64, scale: f64) -> Result<Self> {
        positive("scale", scale)?;
        finite("mean", mean)?;
        Ok(TestLaw::Gumbel { mean, scale })
    }

    pub fn gamma(shape: f64, rate: f64) -> Result<Self> {
        positive("shape", shape)?;
        positive("rate", rate)?;
        Ok(TestLaw::Gamma { shape, rate })
    }

    pub fn laplace(mean: f64, scale: f64) -> Result<Self> {
        positive("scale", scale)?;
        finite("mean", mean)?;
        Ok(TestLaw::Laplace { mean, scale })
    }

    /// The four laws of the simulation study: N(2,1), Gumbel with mean 3 and
    /// scale 1, Gamma with shape 6 and rate 3, Laplace with mean 0.5 and rate 3.
    pub fn study_laws() -> [TestLaw; 4] {
        [
            TestLaw::Normal {
                mean: 2.0,
                variance: 1.0,
            },
            TestLaw::Gumbel {
                mean: 3.0,
                scale: 1.0,
            },
            TestLaw::Gamma {
                shape: 6.0,
                rate: 3.0,
            },
            TestLaw::Laplace {
                mean: 0.5,
                scale: 1.0 / 3.0,
            },
        ]
    }

    /// Parse `normal`, `gumbel`, `gamma`, `laplace` (study parameters) or
    /// `name:p1,p2` with explicit parameters in the constructor order.
    pub fn parse(spec: &str) -> Result<Self> {
        let (name, params) = match spec.split_once(':') {
            Some((name, rest)) => (name.trim(), Some(rest)),
            None => (spec.trim(), None),
        };
        let name = name.to_ascii_lowercase();
        let index = match name.as_str() {
            "normal" => 0,
            "gumbel" => 1,
            "gamma" => 2,
            "laplace" => 3,
            _ => {
                return Err(Error::param(format!(
                    "unknown law {spec:?} (expected normal, gumbel, gamma or laplace)"
                )))
            }
        };
        let Some(params) = params else {
            return Ok(Self::study_laws()[index]);
        };
        let values = params
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::param(format!("bad law parameter {p:?} in {spec:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let [a, b] = values[..] else {
            return Err(Error::param(format!(
                "law {spec:?} needs exactly two parameters"
            )));
        };
        match index {
            0 => Self::normal(a, b),
            1 => Self::gumbel(a, b),
            2 => Self::gamma(a, b),
            _ => Self::laplace(a, b),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TestLaw::Normal { .. } => "Normal",
            TestLaw::Gumbel { .. } => "Gumbel",
            TestLaw::Gamma { .. } => "Gamma",
            TestLaw::Laplace { .. } => "Laplace",
        }
    }

    fn params(&self) -> (f64, f64) {
        match *self {
            TestLaw::Normal { mean, variance } => (mean, variance),
            TestLaw::Gumbel { mean, scale } => (mean, scale),
            TestLaw::Gamma { shape, rate } => (shape, rate),
            TestLaw::Laplace { mean, scale } => (mean, scale),
        }
    }

    /// Stable numeric identity used when deriving replication seeds.
    pub fn seed_tag(&self) -> [u64; 3] {
        let kind = match self {
            TestLaw::Normal { .. } => 1,
            TestLaw::Gumbel { .. } => 2,
            TestLaw::Gamma { .. } => 3,
            TestLaw::Laplace { .. } => 4,
        };
        let (a, b) = self.params();
        [kind, a.to_bits(), b.to_bits()]
    }

    pub fn mean(&self) -> f64 {
        match *self {
            TestLaw::Normal { mean, .. } => mean,
            TestLaw::Gumbel { mean, .. } => mean,
            TestLaw::Gamma { shape, rate } => shape / rate,
            TestLaw::Laplace { mean, .. } => mean,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            TestLaw::Normal { variance, .. } => variance,
            TestLaw::Gumbel { scale, .. } => PI * PI * scale * scale / 6.0,
            TestLaw::Gamma { shape, rate } => shape / (rate * rate),
            TestLaw::Laplace { scale, .. } => 2.0 * scale * scale,
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match *self {
            TestLaw::Normal { mean, variance } => {
                (-(x - mean).powi(2) / (2.0 * variance)).exp() / (2.0 * PI * variance).sqrt()
            }
            TestLaw::Gumbel { mean, scale } => {
                let z = (x - (mean - EULER_GAMMA * scale)) / scale;
                (-(z + (-z).exp())).exp() / scale
            }
            TestLaw::Gamma { shape, rate } => {
                if x <= 0.0 {
                    return 0.0;
                }
                (shape * rate.ln() + (shape - 1.0) * x.ln() - rate * x - ln_gamma_real(shape)).exp()
            }
            TestLaw::Laplace { mean, scale } => (-(x - mean).abs() / scale).exp() / (2.0 * scale),
        }
    }

    /// Exact characteristic function φ_X(u) = E[exp(iuX)].
    pub fn cf(&self, u: f64) -> Complex64 {
        match *self {
            TestLaw::Normal { mean, variance } => {
                Complex64::new(-variance * u * u / 2.0, mean * u).exp()
            }
            TestLaw::Gumbel { mean, scale } => {
                let location = mean - EULER_GAMMA * scale;
                (ln_gamma(Complex64::new(1.0, -scale * u)) + Complex64::new(0.0, location * u))
                    .exp()
            }
            TestLaw::Gamma { shape, rate } => (-shape * Complex64::new(1.0, -u / rate).ln()).exp(),
            TestLaw::Laplace { mean, scale } => {
                Complex64::new(0.0, mean * u).exp() / (1.0 + scale * scale * u * u)
            }
        }
    }

    /// Continuous logarithm of φ_X with value 0 at u = 0, so that
    /// `exp(K·log_cf(u))` is the characteristic function of a K-fold sum for
    /// any real K > 0.
    pub fn log_cf(&self, u: f64) -> Complex64 {
        match *self {
            TestLaw::Normal { mean, variance } => Complex64::new(-variance * u * u / 2.0, mean * u),
            TestLaw::Gumbel { mean, scale } => {
                let location = mean - EULER_GAMMA * scale;
                ln_gamma(Complex64::new(1.0, -scale * u)) + Complex64::new(0.0, location * u)
            }
            TestLaw::Gamma { shape, rate } => -shape * Complex64::new(1.0, -u / rate).ln(),
            TestLaw::Laplace { mean, scale } => {
                Complex64::new(-(scale * scale * u * u).ln_1p(), mean * u)
            }
        }
    }

    /// Exact characteristic function of the sum of `k` copies (real k > 0).
    pub fn sum_cf(&self, k: f64, u: f64) -> Complex64 {
        (k * self.log_cf(u)).exp()
    }

    pub fn sum_cf_derivative(&self, k: f64, u: f64) -> Complex64 {
        self.sum_cf(k, u) * k * self.cf_derivative(u) / self.cf(u)
    }

    /// d/du of the exact characteristic function.
    pub fn cf_derivative(&self, u: f64) -> Complex64 {
        let phi = self.cf(u);
        let log_derivative = match *self {
            TestLaw::Normal { mean, variance } => Complex64::new(-variance * u, mean),
            TestLaw::Gumbel { mean, scale } => {
                let location = mean - EULER_GAMMA * scale;
                Complex64::new(0.0, location)
                    - Complex64::new(0.0, scale) * digamma(Complex64::new(1.0, -scale * u))
            }
            TestLaw::Gamma { shape, rate } => {
                Complex64::new(0.0, shape / rate) / Complex64::new(1.0, -u / rate)
            }
            TestLaw::Laplace { mean, scale } => {
                let b2 = scale * scale;
                Complex64::new(-2.0 * b2 * u / (1.0 + b2 * u * u), mean)
            }
        };
        phi * log_derivative
    }

    /// ∫ f(x)² dx in closed form.
    pub fn l2_norm_sq(&self) -> f64 {
        match *self {
            TestLaw::Normal { variance, .. } => 1.0 / (2.0 * (PI * variance).sqrt()),
            TestLaw::Gumbel { scale, .. } => 0.25 / scale,
            TestLaw::Gamma { shape, rate } => (rate.ln() + ln_gamma_real(2.0 * shape - 1.0)
                - 2.0 * ln_gamma_real(shape)
                - (2.0 * shape - 1.0) * 2f64.ln())
            .exp(),
            TestLaw::Laplace { scale, .. } => 0.25 / scale,
        }
    }

    pub fn sampler(&self) -> LawSampler {
        match *self {
            TestLaw::Normal { mean, variance } => {
                LawSampler::Normal(Normal::new(mean, variance.sqrt()).expect("validated law"))
            }
            TestLaw::Gumbel { mean, scale } => LawSampler::Gumbel(
                Gumbel::new(mean - EULER_GAMMA * scale, scale).expect("validated law"),
            ),
            TestLaw::Gamma { shape, rate } => {
                LawSampler::Gamma(Gamma::new(shape, 1.0 / rate).expect("validated law"))
            }
            TestLaw::Laplace { mean, scale } => LawSampler::Laplace {
                mean,
                exp: Exp::new(1.0 / scale).expect("validated law"),
            },
        }
    }

    fn validate(&self) -> Result<()> {
        let (a, b) = self.params();
        match self {
            TestLaw::Gamma { .. } => {
                positive("shape", a)?;
                positive("rate", b)
            }
            TestLaw::Normal { .. } => {
                finite("mean", a)?;
                positive("variance", b)
            }
            _ => {
                finite("mean", a)?;
                positive("scale", b)
            }
        }
    }
}

impl fmt::Display for TestLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (a, b) = self.params();
        write!(f, "{}({},{})", self.name(), short(a), short(b))
    }
}

/// Up to six significant digits without trailing zeros.
fn short(v: f64) -> String {
    let s = format!("{:.6}", v);
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::param(format!("{name} must be > 0 (got {v})")))
    }
}

fn finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::param(format!("{name} must be finite (got {v})")))
    }
}

#[derive(Debug, Clone, Copy)]
pub enum LawSampler {
    Normal(Normal<f64>),
    Gumbel(Gumbel<f64>),
    Gamma(Gamma<f64>),
    Laplace { mean: f64, exp: Exp<f64> },
}

impl Distribution<f64> for LawSampler {
    fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            LawSampler::Normal(d) => d.sample(rng),
            LawSampler::Gumbel(d) => d.sample(rng),
            LawSampler::Gamma(d) => d.sample(rng),
            LawSampler::Laplace { mean, exp } => {
                // difference of two i.i.d. exponentials is Laplace
                mean + exp.sample(rng) - exp.sample(rng)
            }
        }
    }
}

/// Exact characteristic function of a test law.
pub fn true_cf(law: &TestLaw, u: f64) -> Complex64 {
    law.cf(u)
}

/// Draw `n` sums of `k` independent copies of `law`.
pub fn generate_grouped(law: &TestLaw, n: usize, k: usize, seed: u64) -> Result<GroupedSample> {
    law.validate()?;
    if n < 2 {
        return Err(Error::TooFewObservations(n));
    }
    if k < 1 {
        return Err(Error::param("group size must be ≥ 1 (got 0)"));
    }
    let mut rng = rng_from_seed(seed);
    let observations = sample_sums(law, n, k, &mut rng);
    GroupedSample::new(observations, k as f64)
}

fn sample_sums(law: &TestLaw, n: usize, k: usize, rng: &mut Rng) -> Vec<f64> {
    let sampler = law.sampler();
    (0..n)
        .map(|_| (0..k).map(|_| sampler.sample(rng)).sum())
        .collect()
}

/// Read one observation per line (the first field if the line has commas).
/// A non-numeric first line is treated as a header; blank lines are skipped.
pub fn load_sample(path: impl AsRef<Path>, group_size: f64) -> Result<GroupedSample> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_sample(&text, path, group_size)
}

pub fn parse_sample(text: &str, source: &Path, group_size: f64) -> Result<GroupedSample> {
    validate_group_size(group_size)?;
    let mut observations = Vec::new();
    let mut seen_content = false;
    for (index, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        let field = line.split(',').next().unwrap_or("");
        let token = field.trim();
        if token.is_empty() {
            continue;
        }
        let first = !seen_content;
        seen_content = true;
        match token.parse::<f64>() {
            Ok(v) if v.is_finite() => observations.push(v),
            _ if first && looks_like_header(token) => {}
            _ => {
                let column = field.len() - field.trim_start().len() + 1;
                return Err(Error::Parse {
                    path: source.to_path_buf(),
                    line: index + 1,
                    column,
                    token: token.to_string(),
                });
            }
        }
    }
    GroupedSample::new(observations, group_size)
}

fn looks_like_header(token: &str) -> bool {
    token.chars().any(|c| c.is_ascii_alphabetic() || c == '_')
        && !matches!(
            token.to_ascii_lowercase().as_str(),
            "nan" | "inf" | "-inf" | "+inf" | "infinity" | "-infinity"
        )
}
