//! Data-generating truth: regression function, noise level, design density
//! and noise law.
//!
//! A [`RegressionSpec`] describes the model `Y = s*(X) + σ(X) ε` with `X`
//! drawn from a density `f` on `[0, 1]` and `ε` centered with unit variance.
//! Every component is a named member of a small registry so that
//! configurations stay serializable.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::GaussLegendre;

/// Smallest noise level accepted anywhere on `[0, 1]`.
pub const SIGMA_FLOOR: f64 = 1e-6;

const SCAN_POINTS: usize = 4096;

fn scan_grid() -> impl Iterator<Item = f64> {
    (0..=SCAN_POINTS).map(|i| i as f64 / SCAN_POINTS as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegressionFunction {
    /// `Σ c_k x^k`.
    Polynomial { coefficients: Vec<f64> },
    /// `amplitude · sin(2π · frequency · x + phase)`.
    Sine {
        #[serde(default = "one")]
        amplitude: f64,
        #[serde(default = "one")]
        frequency: f64,
        #[serde(default)]
        phase: f64,
    },
    /// `|x − center|^alpha`, Hölder-continuous with exponent `alpha`.
    HolderCusp {
        alpha: f64,
        #[serde(default = "half")]
        center: f64,
    },
    /// `sin(2π · frequency · x) + jump · 1{x ≥ jump_at}`.
    PiecewiseSmooth {
        #[serde(default = "half")]
        jump_at: f64,
        #[serde(default = "one")]
        jump: f64,
        #[serde(default = "one")]
        frequency: f64,
    },
}

fn one() -> f64 {
    1.0
}

fn half() -> f64 {
    0.5
}

impl RegressionFunction {
    pub fn value(&self, x: f64) -> f64 {
        match self {
            Self::Polynomial { coefficients } => {
                coefficients.iter().rev().fold(0.0, |acc, &c| acc * x + c)
            }
            Self::Sine {
                amplitude,
                frequency,
                phase,
            } => amplitude * (2.0 * PI * frequency * x + phase).sin(),
            Self::HolderCusp { alpha, center } => (x - center).abs().powf(*alpha),
            Self::PiecewiseSmooth {
                jump_at,
                jump,
                frequency,
            } => {
                let base = (2.0 * PI * frequency * x).sin();
                if x >= *jump_at {
                    base + jump
                } else {
                    base
                }
            }
        }
    }

    /// Points where the function is not smooth; quadrature splits there.
    pub fn kinks(&self) -> Vec<f64> {
        match self {
            Self::HolderCusp { center, .. } => vec![*center],
            Self::PiecewiseSmooth { jump_at, .. } => vec![*jump_at],
            _ => Vec::new(),
        }
    }

    fn validate(&self) -> Result<()> {
        let finite = |v: f64, what: &str| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidSpec(format!("{what} must be finite")))
            }
        };
        match self {
            Self::Polynomial { coefficients } => {
                if coefficients.is_empty() {
                    return Err(Error::InvalidSpec(
                        "polynomial needs at least one coefficient".into(),
                    ));
                }
                coefficients
                    .iter()
                    .try_for_each(|&c| finite(c, "polynomial coefficient"))
            }
            Self::Sine {
                amplitude,
                frequency,
                phase,
            } => {
                finite(*amplitude, "amplitude")?;
                finite(*frequency, "frequency")?;
                finite(*phase, "phase")
            }
            Self::HolderCusp { alpha, center } => {
                if !(*alpha > 0.0 && alpha.is_finite()) {
                    return Err(Error::InvalidSpec(
                        "cusp exponent alpha must be positive".into(),
                    ));
                }
                finite(*center, "cusp center")
            }
            Self::PiecewiseSmooth {
                jump_at,
                jump,
                frequency,
            } => {
                if !(0.0..=1.0).contains(jump_at) {
                    return Err(Error::InvalidSpec(
                        "jump location must lie in [0, 1]".into(),
                    ));
                }
                finite(*jump, "jump size")?;
                finite(*frequency, "frequency")
            }
        }
    }
}

/// Heteroscedastic noise level `σ(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseLevel {
    Constant {
        value: f64,
    },
    /// `intercept + slope · x`.
    Affine {
        intercept: f64,
        slope: f64,
    },
    /// `base + amplitude · sin(2π · frequency · x)`.
    SineModulated {
        base: f64,
        amplitude: f64,
        #[serde(default = "one")]
        frequency: f64,
    },
}

impl NoiseLevel {
    pub fn value(&self, x: f64) -> f64 {
        match self {
            Self::Constant { value } => *value,
            Self::Affine { intercept, slope } => intercept + slope * x,
            Self::SineModulated {
                base,
                amplitude,
                frequency,
            } => base + amplitude * (2.0 * PI * frequency * x).sin(),
        }
    }

    /// `(min, max)` of σ over `[0, 1]`; exact for constant and affine levels.
    pub fn range(&self) -> (f64, f64) {
        match self {
            Self::Constant { value } => (*value, *value),
            Self::Affine { intercept, slope } => {
                let (a, b) = (*intercept, intercept + slope);
                (a.min(b), a.max(b))
            }
            Self::SineModulated { .. } => scan_grid()
                .map(|x| self.value(x))
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                    (lo.min(v), hi.max(v))
                }),
        }
    }
}

/// Design density `f` on `[0, 1]`; every member has a closed-form inverse CDF.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DesignDensity {
    #[default]
    Uniform,
    /// `1 + slope · (x − 1/2)`, positive when `|slope| < 2`.
    Linear { slope: f64 },
    /// Piecewise constant: cell `i` between consecutive `breakpoints` carries
    /// probability `masses[i]`.
    PiecewiseConstant {
        breakpoints: Vec<f64>,
        masses: Vec<f64>,
    },
}

impl DesignDensity {
    pub fn pdf(&self, x: f64) -> f64 {
        match self {
            Self::Uniform => 1.0,
            Self::Linear { slope } => 1.0 + slope * (x - 0.5),
            Self::PiecewiseConstant {
                breakpoints,
                masses,
            } => {
                let i = piece_index(breakpoints, x);
                masses[i] / (breakpoints[i + 1] - breakpoints[i])
            }
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let x = x.clamp(0.0, 1.0);
        match self {
            Self::Uniform => x,
            Self::Linear { slope } => x + 0.5 * slope * (x * x - x),
            Self::PiecewiseConstant {
                breakpoints,
                masses,
            } => {
                let i = piece_index(breakpoints, x);
                let below: f64 = masses[..i].iter().sum();
                below + masses[i] * (x - breakpoints[i]) / (breakpoints[i + 1] - breakpoints[i])
            }
        }
    }

    pub fn inverse_cdf(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        let x = match self {
            Self::Uniform => u,
            Self::Linear { slope } => {
                let a = *slope;
                let b = 1.0 - 0.5 * a;
                // Root of (a/2) x² + b x − u = 0 in the cancellation-free form.
                2.0 * u / (b + (b * b + 2.0 * a * u).sqrt())
            }
            Self::PiecewiseConstant {
                breakpoints,
                masses,
            } => {
                let mut acc = 0.0;
                let last = masses.len() - 1;
                let mut out = 1.0;
                for (i, &m) in masses.iter().enumerate() {
                    if u <= acc + m || i == last {
                        let frac = if m > 0.0 {
                            ((u - acc) / m).clamp(0.0, 1.0)
                        } else {
                            0.0
                        };
                        out = breakpoints[i] + frac * (breakpoints[i + 1] - breakpoints[i]);
                        break;
                    }
                    acc += m;
                }
                out
            }
        };
        x.clamp(0.0, 1.0)
    }

    /// Probability of `[a, b)`.
    pub fn mass(&self, a: f64, b: f64) -> f64 {
        self.cdf(b) - self.cdf(a)
    }

    pub fn kinks(&self) -> Vec<f64> {
        match self {
            Self::PiecewiseConstant { breakpoints, .. } => {
                breakpoints[1..breakpoints.len() - 1].to_vec()
            }
            _ => Vec::new(),
        }
    }

    /// `(c_min, c_max)` over `[0, 1]`.
    pub fn bounds(&self) -> (f64, f64) {
        match self {
            Self::Uniform => (1.0, 1.0),
            Self::Linear { slope } => {
                let h = 0.5 * slope.abs();
                (1.0 - h, 1.0 + h)
            }
            Self::PiecewiseConstant {
                breakpoints,
                masses,
            } => masses
                .iter()
                .zip(breakpoints.windows(2))
                .map(|(m, w)| m / (w[1] - w[0]))
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                    (lo.min(v), hi.max(v))
                }),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Self::Uniform => Ok(()),
            Self::Linear { slope } => {
                if slope.is_finite() && slope.abs() < 2.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidSpec(
                        "linear density slope must satisfy |slope| < 2 so the density is bounded below (Ad_leb)".into(),
                    ))
                }
            }
            Self::PiecewiseConstant {
                breakpoints,
                masses,
            } => {
                if breakpoints.len() < 2 || masses.len() + 1 != breakpoints.len() {
                    return Err(Error::InvalidSpec(
                        "piecewise density needs masses.len() + 1 breakpoints".into(),
                    ));
                }
                if breakpoints[0] != 0.0 || breakpoints[breakpoints.len() - 1] != 1.0 {
                    return Err(Error::InvalidSpec(
                        "piecewise density breakpoints must span [0, 1]".into(),
                    ));
                }
                if breakpoints.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(Error::InvalidSpec(
                        "piecewise density breakpoints must increase".into(),
                    ));
                }
                if masses.iter().any(|&m| !(m > 0.0 && m.is_finite())) {
                    return Err(Error::InvalidSpec(
                        "piecewise density masses must be positive so the density is bounded below (Ad_leb)".into(),
                    ));
                }
                let total: f64 = masses.iter().sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidSpec(format!(
                        "piecewise density masses sum to {total}, not 1"
                    )));
                }
                Ok(())
            }
        }
    }
}

fn piece_index(breakpoints: &[f64], x: f64) -> usize {
    let cells = breakpoints.len() - 1;
    breakpoints[1..cells].partition_point(|&b| b <= x)
}

/// Noise law of `ε`, always centered with unit variance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseLaw {
    /// Uniform on `[−√3, √3]`.
    #[default]
    Uniform,
    /// `±1` with equal probability.
    Rademacher,
    /// Standard normal conditioned on `|z| ≤ cutoff`, rescaled to unit variance.
    TruncatedGaussian {
        #[serde(default = "default_cutoff")]
        cutoff: f64,
    },
}

fn default_cutoff() -> f64 {
    3.0
}

impl NoiseLaw {
    /// Variance of the standard normal truncated to `[−c, c]`.
    pub fn truncated_gaussian_variance(cutoff: f64) -> f64 {
        let rule = GaussLegendre::standard();
        let phi = |t: f64| (-0.5 * t * t).exp();
        let splits: Vec<f64> = (1..8)
            .map(|k| -cutoff + 2.0 * cutoff * k as f64 / 8.0)
            .collect();
        let mass = rule.integrate_split(-cutoff, cutoff, &splits, phi);
        let second = rule.integrate_split(-cutoff, cutoff, &splits, |t| t * t * phi(t));
        second / mass
    }

    /// Draws one value; prefer [`NoiseLaw::sampler`] for repeated draws.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.sampler().sample(rng)
    }

    pub fn sampler(&self) -> NoiseSampler {
        let scale = match *self {
            Self::TruncatedGaussian { cutoff } => Self::truncated_gaussian_variance(cutoff).sqrt(),
            _ => 1.0,
        };
        NoiseSampler { law: *self, scale }
    }

    /// Almost-sure bound on `|ε|`.
    pub fn bound(&self) -> f64 {
        match *self {
            Self::Uniform => 3f64.sqrt(),
            Self::Rademacher => 1.0,
            Self::TruncatedGaussian { cutoff } => {
                cutoff / Self::truncated_gaussian_variance(cutoff).sqrt()
            }
        }
    }

    fn validate(&self) -> Result<()> {
        if let Self::TruncatedGaussian { cutoff } = self {
            if !(*cutoff >= 0.5 && cutoff.is_finite()) {
                return Err(Error::InvalidSpec(
                    "truncated Gaussian cutoff must be at least 0.5".into(),
                ));
            }
        }
        Ok(())
    }
}

/// A [`NoiseLaw`] with its normalization precomputed.
#[derive(Debug, Clone, Copy)]
pub struct NoiseSampler {
    law: NoiseLaw,
    scale: f64,
}

impl NoiseSampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.law {
            NoiseLaw::Uniform => {
                let s3 = 3f64.sqrt();
                rng.random_range(-s3..s3)
            }
            NoiseLaw::Rademacher => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            NoiseLaw::TruncatedGaussian { cutoff } => loop {
                let z: f64 = rng.sample(StandardNormal);
                if z.abs() <= cutoff {
                    return z / self.scale;
                }
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RawSpec {
    regression: RegressionFunction,
    noise_level: NoiseLevel,
    #[serde(default = "uniform_design")]
    design: DesignDensity,
    #[serde(default)]
    noise: NoiseLaw,
}

fn uniform_design() -> DesignDensity {
    DesignDensity::Uniform
}

/// The full data-generating truth. Construction validates the
/// noise floor, density bounds and parameter sanity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec", into = "RawSpec")]
pub struct RegressionSpec {
    regression: RegressionFunction,
    noise_level: NoiseLevel,
    design: DesignDensity,
    noise: NoiseLaw,
}

impl TryFrom<RawSpec> for RegressionSpec {
    type Error = Error;

    fn try_from(raw: RawSpec) -> Result<Self> {
        Self::new(raw.regression, raw.noise_level, raw.design, raw.noise)
    }
}

impl From<RegressionSpec> for RawSpec {
    fn from(spec: RegressionSpec) -> Self {
        RawSpec {
            regression: spec.regression,
            noise_level: spec.noise_level,
            design: spec.design,
            noise: spec.noise,
        }
    }
}

impl RegressionSpec {
    pub fn new(
        regression: RegressionFunction,
        noise_level: NoiseLevel,
        design: DesignDensity,
        noise: NoiseLaw,
    ) -> Result<Self> {
        regression.validate()?;
        design.validate()?;
        noise.validate()?;
        let (sigma_min, sigma_max) = noise_level.range();
        if !sigma_max.is_finite() || sigma_min.is_nan() {
            return Err(Error::InvalidSpec("noise level must be finite".into()));
        }
        if sigma_min < SIGMA_FLOOR {
            return Err(Error::InvalidSpec(format!(
                "noise level minimum {sigma_min} is below {SIGMA_FLOOR}; the noise level must be uniformly bounded below (An)"
            )));
        }
        Ok(Self {
            regression,
            noise_level,
            design,
            noise,
        })
    }

    /// Uniform design, uniform noise.
    pub fn simple(regression: RegressionFunction, noise_level: NoiseLevel) -> Result<Self> {
        Self::new(
            regression,
            noise_level,
            DesignDensity::Uniform,
            NoiseLaw::Uniform,
        )
    }

    pub fn regression(&self) -> &RegressionFunction {
        &self.regression
    }

    pub fn noise_level(&self) -> &NoiseLevel {
        &self.noise_level
    }

    pub fn design(&self) -> &DesignDensity {
        &self.design
    }

    pub fn noise(&self) -> NoiseLaw {
        self.noise
    }

    pub fn s_star(&self, x: f64) -> f64 {
        self.regression.value(x)
    }

    pub fn sigma(&self, x: f64) -> f64 {
        self.noise_level.value(x)
    }

    pub fn density(&self, x: f64) -> f64 {
        self.design.pdf(x)
    }

    /// Non-smooth points of `s*` and `f`.
    pub fn kinks(&self) -> Vec<f64> {
        let mut k = self.regression.kinks();
        k.extend(self.design.kinks());
        k.sort_by(f64::total_cmp);
        k.dedup();
        k
    }

    /// `∫ σ²(x) f(x) dx`, the risk of `s*` under the least-squares contrast.
    pub fn noise_variance(&self) -> f64 {
        let rule = GaussLegendre::standard();
        let kinks = self.kinks();
        let mut splits: Vec<f64> = (1..16).map(|i| i as f64 / 16.0).collect();
        splits.extend(kinks);
        rule.integrate_split(0.0, 1.0, &splits, |x| {
            let s = self.sigma(x);
            s * s * self.density(x)
        })
    }

    /// Bound `A` on `|Y|`: `sup |s*| + sup σ · sup |ε|` (grid estimate).
    pub fn data_bound(&self) -> f64 {
        let sup_s = scan_grid()
            .chain(self.kinks())
            .map(|x| self.s_star(x).abs())
            .fold(0.0, f64::max);
        let (_, sigma_max) = self.noise_level.range();
        sup_s + sigma_max * self.noise.bound()
    }
}
