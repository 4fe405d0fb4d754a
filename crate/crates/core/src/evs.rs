//! Classical extreme-value statistics: the law of the maximum of `N` iid
//! draws, the Weibull/Fréchet/Gumbel limits and their normalizing weights.

use serde::{Deserialize, Serialize};

use crate::distributions::ParentSpec;
use crate::error::{Error, Result};

/// Limit law of rescaled maxima.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum LimitFamily {
    /// `exp(-(-x)^β)` for `x <= 0`, bounded parents approaching their
    /// supremum as `(w - x)^β`, `β >= 1`.
    Weibull { beta: f64 },
    /// `exp(-x^(-α))` for `x > 0`, power-law tails.
    Frechet { alpha: f64 },
    /// `exp(-exp(-x))`, exponential or lighter unbounded tails.
    Gumbel,
    /// Point mass at the support supremum `w`.
    Degenerate { w: f64 },
}

/// Scale `a` and location `b` such that `G(a x + b)^N` approaches the limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizingWeights {
    pub a: f64,
    pub b: f64,
    pub n: usize,
}

impl LimitFamily {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LimitFamily::Weibull { beta } if !(beta >= 1.0 && beta.is_finite()) => Err(
                Error::Parameter(format!("weibull exponent must be >= 1, got {beta}")),
            ),
            LimitFamily::Frechet { alpha } if !(alpha > 0.0 && alpha.is_finite()) => Err(
                Error::Parameter(format!("frechet exponent must be > 0, got {alpha}")),
            ),
            LimitFamily::Degenerate { w } if !w.is_finite() => {
                Err(Error::Parameter(format!("degenerate location must be finite, got {w}")))
            }
            _ => Ok(()),
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            LimitFamily::Weibull { beta } => {
                if x > 0.0 {
                    1.0
                } else {
                    (-(-x).powf(beta)).exp()
                }
            }
            LimitFamily::Frechet { alpha } => {
                if x <= 0.0 {
                    0.0
                } else {
                    (-x.powf(-alpha)).exp()
                }
            }
            LimitFamily::Gumbel => (-(-x).exp()).exp(),
            LimitFamily::Degenerate { w } => {
                if x >= w {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Density of the limit law; the degenerate law has none and yields 0.
    pub fn density(&self, x: f64) -> f64 {
        match *self {
            LimitFamily::Weibull { beta } => {
                if x >= 0.0 {
                    if beta == 1.0 && x == 0.0 {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    let y = -x;
                    beta * y.powf(beta - 1.0) * (-y.powf(beta)).exp()
                }
            }
            LimitFamily::Frechet { alpha } => {
                if x <= 0.0 {
                    0.0
                } else {
                    let t = x.powf(-alpha);
                    alpha * t / x * (-t).exp()
                }
            }
            LimitFamily::Gumbel => (-x - (-x).exp()).exp(),
            LimitFamily::Degenerate { .. } => 0.0,
        }
    }

    /// Inverse of [`LimitFamily::cdf`] on `(0, 1)`.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Domain(format!(
                "limit quantile needs p in (0, 1), got {p}"
            )));
        }
        let e = -p.ln();
        Ok(match *self {
            LimitFamily::Weibull { beta } => -e.powf(1.0 / beta),
            LimitFamily::Frechet { alpha } => e.powf(-1.0 / alpha),
            LimitFamily::Gumbel => -e.ln(),
            LimitFamily::Degenerate { w } => w,
        })
    }

    fn same_kind(&self, other: &LimitFamily) -> bool {
        let close = |x: f64, y: f64| (x - y).abs() <= 1e-12 * x.abs().max(y.abs());
        match (self, other) {
            (LimitFamily::Weibull { beta: x }, LimitFamily::Weibull { beta: y }) => close(*x, *y),
            (LimitFamily::Frechet { alpha: x }, LimitFamily::Frechet { alpha: y }) => {
                close(*x, *y)
            }
            (LimitFamily::Gumbel, LimitFamily::Gumbel) => true,
            (LimitFamily::Degenerate { w: x }, LimitFamily::Degenerate { w: y }) => close(*x, *y),
            _ => false,
        }
    }
}

pub fn limiting_cdf(family: LimitFamily, x: f64) -> f64 {
    family.cdf(x)
}

fn check_block_size(n: usize, min: usize) -> Result<()> {
    if n < min {
        return Err(Error::Domain(format!(
            "sample size N must be at least {min}, got {n}"
        )));
    }
    Ok(())
}

/// `G(x)^N`, the CDF of the maximum of `N` iid draws.
pub fn finite_sample_max_cdf(spec: &ParentSpec, n: usize, x: f64) -> Result<f64> {
    spec.validate()?;
    check_block_size(n, 1)?;
    Ok(max_cdf_unchecked(spec, n, x))
}

pub(crate) fn max_cdf_unchecked(spec: &ParentSpec, n: usize, x: f64) -> f64 {
    if n == 1 {
        return spec.cdf(x);
    }
    let g = spec.cdf(x);
    if g <= 0.0 {
        return 0.0;
    }
    let log_g = if g > 0.5 { (-spec.sf(x)).ln_1p() } else { g.ln() };
    (n as f64 * log_g).exp()
}

/// `N g(x) G(x)^(N-1)`, the density of the maximum of `N` iid draws.
pub fn finite_sample_max_density(spec: &ParentSpec, n: usize, x: f64) -> Result<f64> {
    spec.validate()?;
    check_block_size(n, 1)?;
    let pdf = spec.pdf(x);
    if pdf == 0.0 {
        return Ok(0.0);
    }
    Ok(n as f64 * pdf * max_cdf_unchecked(spec, n - 1, x))
}

/// Domain of attraction of each supported parent.
pub fn classify_domain(spec: &ParentSpec) -> LimitFamily {
    match *spec {
        ParentSpec::Gaussian { .. } => LimitFamily::Gumbel,
        ParentSpec::QExponential { q } => LimitFamily::Frechet {
            alpha: 1.0 / (q - 1.0),
        },
        // The uniform CDF reaches 1 linearly.
        ParentSpec::Uniform { .. } => LimitFamily::Weibull { beta: 1.0 },
    }
}

/// Normalizing weights for `spec` in the domain of `family`.
///
/// The infimum sets defining the weights reduce to quantiles because every
/// supported parent has a continuous, strictly increasing CDF on its support.
pub fn weights(spec: &ParentSpec, family: LimitFamily, n: usize) -> Result<NormalizingWeights> {
    spec.validate()?;
    family.validate()?;
    check_block_size(n, 2)?;
    let expected = classify_domain(spec);
    if !family.same_kind(&expected) {
        return Err(Error::Classification(format!(
            "{spec:?} lies in the domain of {expected:?}, not {family:?}"
        )));
    }
    let nf = n as f64;
    let (a, b) = match family {
        LimitFamily::Weibull { .. } => {
            let b = spec.support().1;
            (b - spec.upper_quantile(1.0 / nf)?, b)
        }
        LimitFamily::Frechet { .. } => (spec.upper_quantile(1.0 / nf)?, 0.0),
        LimitFamily::Gumbel => {
            let b = spec.upper_quantile(1.0 / nf)?;
            (spec.upper_quantile(1.0 / (nf * std::f64::consts::E))? - b, b)
        }
        LimitFamily::Degenerate { .. } => {
            return Err(Error::Classification(
                "the degenerate limit has no normalizing weights".into(),
            ))
        }
    };
    if !(a > 0.0 && a.is_finite()) {
        return Err(Error::Numerical {
            achieved: a,
            requested: 0.0,
        });
    }
    Ok(NormalizingWeights { a, b, n })
}

/// `L((x - b)/a)`, the limit law placed on the scale of the raw maxima.
pub fn rescaled_limit_cdf(family: LimitFamily, w: &NormalizingWeights, x: f64) -> f64 {
    family.cdf((x - w.b) / w.a)
}

/// `L'((x - b)/a) / a`.
pub fn rescaled_limit_density(family: LimitFamily, w: &NormalizingWeights, x: f64) -> f64 {
    family.density((x - w.b) / w.a) / w.a
}

/// Largest gap `|G(a x + b)^N - L(x)|` over `points` values of `x` evenly
/// spaced between the limit's 1e-6 and 1-1e-6 quantiles.
pub fn sup_distance_to_limit(spec: &ParentSpec, n: usize, points: usize) -> Result<f64> {
    let family = classify_domain(spec);
    let w = weights(spec, family, n)?;
    let lo = family.quantile(1e-6)?;
    let hi = family.quantile(1.0 - 1e-6)?;
    let points = points.max(2);
    let step = (hi - lo) / (points - 1) as f64;
    Ok((0..points)
        .map(|i| {
            let x = lo + step * i as f64;
            (max_cdf_unchecked(spec, n, w.a * x + w.b) - family.cdf(x)).abs()
        })
        .fold(0.0, f64::max))
}
