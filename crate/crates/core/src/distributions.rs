//! Parent distributions: zero-mean Gaussian, q-exponential (generalized
//! Pareto) on `[0, ∞)`, and uniform on `[lo, hi]`.

use std::f64::consts::{PI, SQRT_2};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::erf;

use crate::error::{Error, Result};

/// Name recorded in experiment metadata for every seeded stream.
pub const GENERATOR_NAME: &str = "ChaCha8 (rand_chacha 0.9, seed_from_u64 + set_stream)";

/// Seeded generator for worker `stream` of experiment `seed`.
///
/// Streams with distinct indices are independent, so parallel workers can
/// each take one and the merged output does not depend on scheduling.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A parent distribution together with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum ParentSpec {
    /// Zero-mean normal law with standard deviation `sigma`.
    Gaussian { sigma: f64 },
    /// `g(x) = (1 + (q-1) x)^(q / (1-q))` for `x >= 0`, `q > 1`.
    #[serde(rename = "qexp")]
    QExponential { q: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl ParentSpec {
    pub fn gaussian(sigma: f64) -> Result<Self> {
        ParentSpec::Gaussian { sigma }.validated()
    }

    pub fn qexponential(q: f64) -> Result<Self> {
        ParentSpec::QExponential { q }.validated()
    }

    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        ParentSpec::Uniform { lo, hi }.validated()
    }

    /// Parses and validates a JSON object such as `{"family":"qexp","q":1.3}`.
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: ParentSpec = serde_json::from_str(text)?;
        spec.validated()
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ParentSpec::Gaussian { sigma } => {
                if !(sigma > 0.0 && sigma.is_finite()) {
                    return Err(Error::Parameter(format!(
                        "gaussian sigma must be positive and finite, got {sigma}"
                    )));
                }
            }
            ParentSpec::QExponential { q } => {
                if !(q > 1.0 && q.is_finite()) {
                    return Err(Error::Parameter(format!(
                        "q-exponential requires q > 1, got {q}"
                    )));
                }
            }
            ParentSpec::Uniform { lo, hi } => {
                if !(lo < hi && lo.is_finite() && hi.is_finite()) {
                    return Err(Error::Parameter(format!(
                        "uniform requires finite lo < hi, got [{lo}, {hi}]"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn validated(self) -> Result<Self> {
        self.validate()?;
        Ok(self)
    }

    /// Closed support `[inf, sup]`; unbounded ends are infinite.
    pub fn support(&self) -> (f64, f64) {
        match *self {
            ParentSpec::Gaussian { .. } => (f64::NEG_INFINITY, f64::INFINITY),
            ParentSpec::QExponential { .. } => (0.0, f64::INFINITY),
            ParentSpec::Uniform { lo, hi } => (lo, hi),
        }
    }

    /// Tail index `η = 1/(q-1)` of the q-exponential; `None` for other families.
    pub fn tail_index(&self) -> Option<f64> {
        match *self {
            ParentSpec::QExponential { q } => Some(1.0 / (q - 1.0)),
            _ => None,
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match *self {
            ParentSpec::Gaussian { sigma } => {
                let z = x / sigma;
                (-0.5 * z * z).exp() / (sigma * (2.0 * PI).sqrt())
            }
            ParentSpec::QExponential { q } => {
                if x < 0.0 {
                    0.0
                } else {
                    ((q - 1.0) * x).ln_1p().mul_add(q / (1.0 - q), 0.0).exp()
                }
            }
            ParentSpec::Uniform { lo, hi } => {
                if (lo..=hi).contains(&x) {
                    1.0 / (hi - lo)
                } else {
                    0.0
                }
            }
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            ParentSpec::Gaussian { sigma } => {
                let z = x / (SQRT_2 * sigma);
                // ½(1 + erf z); the negative half goes through erfc to avoid
                // cancellation in the lower tail.
                if z >= 0.0 {
                    0.5 * (1.0 + libm::erf(z))
                } else {
                    0.5 * libm::erfc(-z)
                }
            }
            ParentSpec::QExponential { q } => {
                if x <= 0.0 {
                    0.0
                } else {
                    -(-((q - 1.0) * x).ln_1p() / (q - 1.0)).exp_m1()
                }
            }
            ParentSpec::Uniform { lo, hi } => ((x - lo) / (hi - lo)).clamp(0.0, 1.0),
        }
    }

    /// Survival function `1 - cdf(x)`, accurate in the upper tail.
    pub fn sf(&self, x: f64) -> f64 {
        match *self {
            ParentSpec::Gaussian { sigma } => {
                let z = x / (SQRT_2 * sigma);
                if z <= 0.0 {
                    0.5 * (1.0 + libm::erf(-z))
                } else {
                    0.5 * libm::erfc(z)
                }
            }
            ParentSpec::QExponential { q } => {
                if x <= 0.0 {
                    1.0
                } else {
                    (-((q - 1.0) * x).ln_1p() / (q - 1.0)).exp()
                }
            }
            ParentSpec::Uniform { lo, hi } => ((hi - x) / (hi - lo)).clamp(0.0, 1.0),
        }
    }

    /// Inverse CDF. `p = 0` and `p = 1` map to the ends of the support.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Domain(format!(
                "quantile probability must lie in [0, 1], got {p}"
            )));
        }
        Ok(self.quantile_unchecked(p))
    }

    pub(crate) fn quantile_unchecked(&self, p: f64) -> f64 {
        let (inf, sup) = self.support();
        if p <= 0.0 {
            return inf;
        }
        if p >= 1.0 {
            return sup;
        }
        match *self {
            ParentSpec::Gaussian { sigma } => gaussian_quantile(p) * sigma,
            ParentSpec::QExponential { q } => {
                ((q - 1.0) * -(-p).ln_1p()).exp_m1() / (q - 1.0)
            }
            ParentSpec::Uniform { lo, hi } => lo + p * (hi - lo),
        }
    }

    /// Upper-tail quantile: the `x` with `sf(x) = s`, accurate for tiny `s`.
    pub fn upper_quantile(&self, s: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::Domain(format!(
                "tail probability must lie in [0, 1], got {s}"
            )));
        }
        Ok(match *self {
            ParentSpec::Gaussian { sigma } => {
                if s <= 0.0 {
                    f64::INFINITY
                } else if s >= 1.0 {
                    f64::NEG_INFINITY
                } else {
                    -gaussian_quantile(s) * sigma
                }
            }
            ParentSpec::QExponential { q } => {
                if s <= 0.0 {
                    f64::INFINITY
                } else if s >= 1.0 {
                    0.0
                } else {
                    ((q - 1.0) * -s.ln()).exp_m1() / (q - 1.0)
                }
            }
            ParentSpec::Uniform { .. } => self.quantile_unchecked(1.0 - s),
        })
    }

    /// Draws `n` values from a generator seeded with `seed`.
    pub fn sample(&self, seed: u64, n: usize) -> Result<Vec<f64>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(self.sample_with(&mut rng, n))
    }

    /// Draws `n` values from the caller's generator.
    pub fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.draw(rng)).collect()
    }

    #[inline]
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            ParentSpec::Gaussian { sigma } => sigma * rng.sample::<f64, _>(StandardNormal),
            ParentSpec::QExponential { .. } => {
                let u: f64 = rng.random();
                self.quantile_unchecked(u)
            }
            ParentSpec::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
        }
    }
}

/// Standard normal quantile, polished by Newton steps on the tail that
/// carries the precision.
fn gaussian_quantile(p: f64) -> f64 {
    let lower = p <= 0.5;
    // Work with the smaller tail probability.
    let t = if lower { p } else { 1.0 - p };
    let mut z = -SQRT_2 * erf::erfc_inv(2.0 * t);
    for _ in 0..2 {
        let tail = 0.5 * libm::erfc(-z / SQRT_2);
        let dens = (-0.5 * z * z).exp() / (2.0 * PI).sqrt();
        if dens <= 0.0 || !dens.is_finite() {
            break;
        }
        let step = (tail - t) / dens;
        if !step.is_finite() {
            break;
        }
        z -= step;
    }
    if lower {
        z
    } else {
        -z
    }
}
