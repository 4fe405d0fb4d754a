//! Near-extreme statistics: the distribution of distances `r = x_M - x_i`
//! between the maximum of a set of `N` values and the other members.
//!
//! The expected density for `N` iid draws from a parent `g`/`G` is
//!
//! ```text
//! ρ(r, N) = ∫ N g(x) G(x)^(N-2) g(x - r) dx = ∫₀¹ N u^(N-2) g(G⁻¹(u) - r) du
//! ```
//!
//! and its CDF is `P(r) = ∫₀¹ N u^(N-2) (u - G(G⁻¹(u) - r)) du`. Both are
//! evaluated in `u = G(x)` so no tail truncation is needed. For returns
//! with block-wise local variance the expected law is the equal-weight
//! mixture of Gaussian components, one per block.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::ParentSpec;
use crate::error::{Error, Result};
use crate::quadrature::Quadrature;

/// Whether distances are measured from the block maximum or minimum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[serde(rename = "max")]
    FromMax,
    #[serde(rename = "min")]
    FromMin,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::FromMax => "max",
            Mode::FromMin => "min",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(Mode::FromMax),
            "min" => Ok(Mode::FromMin),
            other => Err(Error::Domain(format!("mode must be max or min, got {other:?}"))),
        }
    }
}

/// Distances from the extreme of one block; exactly one extreme element is
/// removed even when it is tied.
pub fn empirical_near_extreme(block: &[f64], mode: Mode) -> Result<Vec<f64>> {
    if block.len() < 2 {
        return Err(Error::Domain(format!(
            "a block needs at least 2 values, got {}",
            block.len()
        )));
    }
    if block.iter().any(|x| x.is_nan()) {
        return Err(Error::Domain("block contains NaN".into()));
    }
    let mut out = Vec::with_capacity(block.len() - 1);
    extend_distances(block, mode, &mut out);
    Ok(out)
}

fn extend_distances(block: &[f64], mode: Mode, out: &mut Vec<f64>) {
    let pick = match mode {
        Mode::FromMax => block
            .iter()
            .enumerate()
            .fold(0, |best, (i, &x)| if x > block[best] { i } else { best }),
        Mode::FromMin => block
            .iter()
            .enumerate()
            .fold(0, |best, (i, &x)| if x < block[best] { i } else { best }),
    };
    let extreme = block[pick];
    out.extend(block.iter().enumerate().filter(|&(i, _)| i != pick).map(
        |(_, &x)| match mode {
            Mode::FromMax => extreme - x,
            Mode::FromMin => x - extreme,
        },
    ));
}

/// Pooled distances from `h` blocks of `N` values each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalNearExtreme {
    pub distances: Vec<f64>,
    pub block_count: usize,
    pub per_block_size: usize,
    pub mode: Mode,
}

impl EmpiricalNearExtreme {
    /// Pools the distances of every block, in block order.
    pub fn from_blocks<'a, I>(blocks: I, per_block_size: usize, mode: Mode) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        if per_block_size < 2 {
            return Err(Error::Domain(format!(
                "block size must be at least 2, got {per_block_size}"
            )));
        }
        let mut distances = Vec::new();
        let mut block_count = 0;
        for block in blocks {
            if block.len() != per_block_size {
                return Err(Error::Domain(format!(
                    "block {block_count} has {} values, expected {per_block_size}",
                    block.len()
                )));
            }
            if block.iter().any(|x| x.is_nan()) {
                return Err(Error::Domain(format!("block {block_count} contains NaN")));
            }
            extend_distances(block, mode, &mut distances);
            block_count += 1;
        }
        Ok(EmpiricalNearExtreme {
            distances,
            block_count,
            per_block_size,
            mode,
        })
    }

    pub fn len(&self) -> usize {
        self.distances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.distances.is_empty()
    }

    pub fn sorted(&self) -> Vec<f64> {
        let mut v = self.distances.clone();
        v.sort_by(f64::total_cmp);
        v
    }
}

fn check_args(spec: &ParentSpec, n: usize, r: f64) -> Result<()> {
    spec.validate()?;
    if n < 2 {
        return Err(Error::Domain(format!("N must be at least 2, got {n}")));
    }
    if !(r >= 0.0) {
        return Err(Error::Domain(format!("distance must be nonnegative, got {r}")));
    }
    Ok(())
}

/// Integrates `f(u, 1 - u, G⁻¹(u))` over `u ∈ (0, 1)`.
///
/// The upper half is mapped through `u = 1 - e^(-t)` so that the region
/// next to `u = 1`, where the maximum sits far in the parent's tail, keeps
/// its resolution; `G⁻¹(1)` may be infinite. `lower_edge` is a point where
/// the integrand jumps or kinks (see [`edge_break`]).
fn integrate_unit<F>(spec: &ParentSpec, quad: &Quadrature, lower_edge: Option<f64>, f: F) -> Result<f64>
where
    F: Fn(f64, f64, f64) -> f64,
{
    let mut lower = vec![0.0];
    let mut upper_break = None;
    if let Some(x) = lower_edge {
        let u = spec.cdf(x);
        if u > 0.0 && u < 0.5 {
            lower.push(u);
        } else if (0.5..1.0).contains(&u) {
            upper_break = Some(-spec.sf(x).ln());
        }
    }
    lower.push(0.5);
    let low = quad.integrate_with_breaks(|u| f(u, 1.0 - u, spec.quantile_unchecked(u)), &lower)?;

    let t0 = std::f64::consts::LN_2;
    let tail = |t: f64| {
        let s = (-t).exp();
        if s <= 0.0 {
            return 0.0;
        }
        let x = spec.upper_quantile(s).unwrap_or(f64::INFINITY);
        f(1.0 - s, s, x) * s
    };
    let high = match upper_break {
        Some(tb) if tb > t0 => {
            quad.integrate(tail, t0, tb)?.value + quad.integrate_to_infinity(tail, tb)?.value
        }
        _ => quad.integrate_to_infinity(tail, t0)?.value,
    };
    Ok(low.value + high)
}

/// Point where `G⁻¹(u) - r` crosses the lower end of a bounded-below support.
fn edge_break(spec: &ParentSpec, r: f64) -> Option<f64> {
    let (inf, _) = spec.support();
    inf.is_finite().then_some(inf + r)
}

/// Expected near-extreme density `ρ(r, N)` for `N` iid draws from `spec`.
pub fn exact_density(spec: &ParentSpec, n: usize, r: f64) -> Result<f64> {
    exact_density_with(spec, n, r, &Quadrature::default())
}

pub fn exact_density_with(spec: &ParentSpec, n: usize, r: f64, quad: &Quadrature) -> Result<f64> {
    check_args(spec, n, r)?;
    let (inf, sup) = spec.support();
    if r > sup - inf {
        return Ok(0.0);
    }
    let power = (n - 2) as i32;
    let value = integrate_unit(spec, quad, edge_break(spec, r), |u, _, x| {
        u.powi(power) * spec.pdf(x - r)
    })?;
    Ok((n as f64 * value).max(0.0))
}

/// Derivative `dρ/dr`, used to build interpolation tables.
fn exact_density_slope(spec: &ParentSpec, n: usize, r: f64, quad: &Quadrature) -> Result<f64> {
    let ParentSpec::Gaussian { sigma } = *spec else {
        return Err(Error::Domain("density slope is only available for gaussian parents".into()));
    };
    let power = (n - 2) as i32;
    // d/dr g(x - r) = (x - r)/σ² g(x - r)
    let value = integrate_unit(spec, quad, None, |u, _, x| {
        let y = x - r;
        u.powi(power) * y / (sigma * sigma) * spec.pdf(y)
    })?;
    Ok(n as f64 * value)
}

/// Probability that a distance from the maximum is at most `r`.
pub fn exact_cdf(spec: &ParentSpec, n: usize, r: f64) -> Result<f64> {
    exact_cdf_with(spec, n, r, &Quadrature::default())
}

pub fn exact_cdf_with(spec: &ParentSpec, n: usize, r: f64, quad: &Quadrature) -> Result<f64> {
    check_args(spec, n, r)?;
    if r == 0.0 {
        // Distances from a continuous parent are almost surely positive.
        return Ok(0.0);
    }
    let (inf, sup) = spec.support();
    if r >= sup - inf {
        return Ok(1.0);
    }
    let power = (n - 2) as i32;
    // u - G(x - r), written on whichever side keeps precision.
    let value = integrate_unit(spec, quad, edge_break(spec, r), |u, one_minus_u, x| {
        let gap = if u < 0.5 {
            u - spec.cdf(x - r)
        } else {
            spec.sf(x - r) - one_minus_u
        };
        u.powi(power) * gap.max(0.0)
    })?;
    Ok((n as f64 * value).clamp(0.0, 1.0))
}

/// `∫₀^∞ ρ(r, N) dr`; equals one for every valid parent.
pub fn density_mass(spec: &ParentSpec, n: usize) -> Result<f64> {
    check_args(spec, n, 0.0)?;
    let inner = Quadrature::with_abs_tol(1e-11);
    let outer = Quadrature::with_abs_tol(1e-9);
    let (inf, sup) = spec.support();
    let width = sup - inf;
    // The quadrature callback cannot fail, so the first inner error is kept aside.
    let failure = std::cell::Cell::new(None);
    let density = |r: f64| match exact_density_with(spec, n, r, &inner) {
        Ok(v) => v,
        Err(e) => {
            failure.set(Some(e.to_string()));
            0.0
        }
    };
    let est = if width.is_finite() {
        outer.integrate(density, 0.0, width)?
    } else {
        outer.integrate_to_infinity(density, 0.0)?
    };
    if let Some(msg) = failure.take() {
        return Err(Error::Domain(msg));
    }
    Ok(est.value)
}

/// Equal-weight mixture of Gaussian near-extreme laws, one component per
/// block of `n` returns with local standard deviation `sigmas[j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureModel {
    pub sigmas: Vec<f64>,
    pub n: usize,
}

impl MixtureModel {
    pub fn new(sigmas: Vec<f64>, n: usize) -> Result<Self> {
        let model = MixtureModel { sigmas, n };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigmas.is_empty() {
            return Err(Error::Parameter("mixture needs at least one component".into()));
        }
        if self.n < 2 {
            return Err(Error::Parameter(format!("mixture N must be >= 2, got {}", self.n)));
        }
        if let Some(s) = self.sigmas.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(Error::Parameter(format!("mixture sigma must be positive, got {s}")));
        }
        Ok(())
    }

    pub fn components(&self) -> usize {
        self.sigmas.len()
    }

    fn average<F>(&self, r: f64, f: F) -> Result<f64>
    where
        F: Fn(&ParentSpec) -> Result<f64> + Sync,
    {
        self.validate()?;
        if !(r >= 0.0) {
            return Err(Error::Domain(format!("distance must be nonnegative, got {r}")));
        }
        let parts: Vec<f64> = self
            .sigmas
            .par_iter()
            .map(|&s| f(&ParentSpec::Gaussian { sigma: s }))
            .collect::<Result<_>>()?;
        Ok(pairwise_sum(&parts) / parts.len() as f64)
    }

    /// Tabulated evaluator for many distances at once.
    pub fn evaluator(&self) -> Result<MixtureEvaluator> {
        self.validate()?;
        MixtureEvaluator::new(GaussianKernel::shared(self.n)?, self.sigmas.clone())
    }
}

pub fn mixture_density(model: &MixtureModel, r: f64) -> Result<f64> {
    model.average(r, |spec| exact_density(spec, model.n, r))
}

pub fn mixture_cdf(model: &MixtureModel, r: f64) -> Result<f64> {
    model.average(r, |spec| exact_cdf(spec, model.n, r))
}

/// Sum with a fixed pairwise reduction tree.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        len if len <= 8 => values.iter().sum(),
        len => {
            let (a, b) = values.split_at(len / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

/// The unit-variance Gaussian near-extreme law for a fixed `N`, tabulated
/// on `[0, S_MAX]` for cubic Hermite interpolation.
///
/// Every Gaussian component is a rescaling of this one:
/// `P_σ(r) = P_1(r/σ)` and `ρ_σ(r) = ρ_1(r/σ)/σ`. Nodes are exact
/// quadrature values, and the CDF is interpolated with the density as its
/// slope, so the interpolation error is below 1e-10.
#[derive(Debug, Clone)]
pub struct GaussianKernel {
    n: usize,
    cdf: Vec<f64>,
    pdf: Vec<f64>,
    slope: Vec<f64>,
}

const KERNEL_STEP: f64 = 1.0 / 128.0;
const KERNEL_SPAN: f64 = 16.0;

impl GaussianKernel {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::Domain(format!("N must be at least 2, got {n}")));
        }
        let spec = ParentSpec::Gaussian { sigma: 1.0 };
        let quad = Quadrature::with_abs_tol(1e-13);
        let nodes = (KERNEL_SPAN / KERNEL_STEP) as usize + 1;
        let rows: Vec<(f64, f64, f64)> = (0..nodes)
            .into_par_iter()
            .map(|i| {
                let s = i as f64 * KERNEL_STEP;
                Ok((
                    exact_cdf_with(&spec, n, s, &quad)?,
                    exact_density_with(&spec, n, s, &quad)?,
                    exact_density_slope(&spec, n, s, &quad)?,
                ))
            })
            .collect::<Result<_>>()?;
        let mut kernel = GaussianKernel {
            n,
            cdf: Vec::with_capacity(nodes),
            pdf: Vec::with_capacity(nodes),
            slope: Vec::with_capacity(nodes),
        };
        for (c, p, d) in rows {
            kernel.cdf.push(c);
            kernel.pdf.push(p);
            kernel.slope.push(d);
        }
        Ok(kernel)
    }

    /// Process-wide kernel for `n`, built on first use.
    pub fn shared(n: usize) -> Result<Arc<GaussianKernel>> {
        static CACHE: OnceLock<Mutex<HashMap<usize, Arc<GaussianKernel>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(Default::default);
        if let Some(k) = cache.lock().unwrap_or_else(|e| e.into_inner()).get(&n) {
            return Ok(Arc::clone(k));
        }
        let kernel = Arc::new(GaussianKernel::new(n)?);
        let mut map = cache.lock().unwrap_or_else(|e| e.into_inner());
        Ok(Arc::clone(map.entry(n).or_insert(kernel)))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Upper end of the tabulated range in units of σ.
    pub fn span(&self) -> f64 {
        KERNEL_SPAN
    }

    #[inline]
    fn locate(&self, s: f64) -> Option<(usize, f64)> {
        if !(s >= 0.0) {
            return None;
        }
        let pos = s / KERNEL_STEP;
        let i = pos as usize;
        if i + 1 >= self.cdf.len() {
            return None;
        }
        Some((i, pos - i as f64))
    }

    #[inline]
    fn hermite(f0: f64, f1: f64, m0: f64, m1: f64, t: f64) -> f64 {
        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * f0 + h10 * KERNEL_STEP * m0 + h01 * f1 + h11 * KERNEL_STEP * m1
    }

    /// `P_1(s)`.
    #[inline]
    pub fn cdf(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        match self.locate(s) {
            Some((i, t)) => Self::hermite(
                self.cdf[i],
                self.cdf[i + 1],
                self.pdf[i],
                self.pdf[i + 1],
                t,
            )
            .clamp(0.0, 1.0),
            None => 1.0,
        }
    }

    /// `ρ_1(s)`.
    #[inline]
    pub fn density(&self, s: f64) -> f64 {
        if s < 0.0 {
            return 0.0;
        }
        match self.locate(s) {
            Some((i, t)) => Self::hermite(
                self.pdf[i],
                self.pdf[i + 1],
                self.slope[i],
                self.slope[i + 1],
                t,
            )
            .max(0.0),
            None => 0.0,
        }
    }
}

/// Fast mixture CDF/density backed by a [`GaussianKernel`].
///
/// With `x = ln r`, each component CDF is `K(x - ln σ_j)` for one fixed
/// smooth `K`, so the mixture CDF is smooth in `x` with derivatives bounded
/// independently of the σ spread. It is tabulated exactly on a uniform `x`
/// grid together with `dF/dx` and interpolated by cubic Hermite.
#[derive(Debug, Clone)]
pub struct MixtureEvaluator {
    kernel: Arc<GaussianKernel>,
    sigmas: Vec<f64>,
    x0: f64,
    dx: f64,
    table_f: Vec<f64>,
    table_d: Vec<f64>,
}

const LOG_STEP: f64 = 1.0 / 256.0;
/// Below `σ_min·e^-LOG_DEPTH` the table is not used.
const LOG_DEPTH: f64 = 20.0;
const MAX_LOG_NODES: usize = 1 << 17;

impl MixtureEvaluator {
    pub fn new(kernel: Arc<GaussianKernel>, sigmas: Vec<f64>) -> Result<Self> {
        MixtureModel::new(sigmas.clone(), kernel.n)?;
        let lo = sigmas.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = sigmas.iter().cloned().fold(0.0, f64::max);
        let x0 = lo.ln() - LOG_DEPTH;
        let x1 = (hi * kernel.span()).ln();
        let mut nodes = ((x1 - x0) / LOG_STEP).ceil() as usize + 1;
        nodes = nodes.min(MAX_LOG_NODES);
        let dx = (x1 - x0) / (nodes - 1) as f64;
        let mut ev = MixtureEvaluator {
            kernel,
            sigmas,
            x0,
            dx,
            table_f: Vec::new(),
            table_d: Vec::new(),
        };
        let rows: Vec<(f64, f64)> = (0..nodes)
            .into_par_iter()
            .map(|i| {
                let r = (x0 + i as f64 * dx).exp();
                (ev.direct_cdf(r), ev.direct_log_slope(r))
            })
            .collect();
        (ev.table_f, ev.table_d) = rows.into_iter().unzip();
        Ok(ev)
    }

    pub fn n(&self) -> usize {
        self.kernel.n
    }

    fn direct_cdf(&self, r: f64) -> f64 {
        let terms: Vec<f64> = self.sigmas.iter().map(|s| self.kernel.cdf(r / s)).collect();
        pairwise_sum(&terms) / terms.len() as f64
    }

    /// `dF/d(ln r) = mean_j s_j ρ_1(s_j)` with `s_j = r/σ_j`.
    fn direct_log_slope(&self, r: f64) -> f64 {
        let terms: Vec<f64> = self
            .sigmas
            .iter()
            .map(|s| {
                let z = r / s;
                z * self.kernel.density(z)
            })
            .collect();
        pairwise_sum(&terms) / terms.len() as f64
    }

    pub fn cdf(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return 0.0;
        }
        let pos = (r.ln() - self.x0) / self.dx;
        if !(pos >= 0.0) {
            return self.direct_cdf(r);
        }
        let i = pos as usize;
        if i + 1 >= self.table_f.len() {
            return 1.0;
        }
        let t = pos - i as f64;
        let t2 = t * t;
        let t3 = t2 * t;
        let v = (2.0 * t3 - 3.0 * t2 + 1.0) * self.table_f[i]
            + (t3 - 2.0 * t2 + t) * self.dx * self.table_d[i]
            + (-2.0 * t3 + 3.0 * t2) * self.table_f[i + 1]
            + (t3 - t2) * self.dx * self.table_d[i + 1];
        v.clamp(0.0, 1.0)
    }

    pub fn density(&self, r: f64) -> f64 {
        if r < 0.0 {
            return 0.0;
        }
        let terms: Vec<f64> = self
            .sigmas
            .iter()
            .map(|s| self.kernel.density(r / s) / s)
            .collect();
        pairwise_sum(&terms) / terms.len() as f64
    }

    /// CDF at every point, in input order.
    pub fn cdf_many(&self, rs: &[f64]) -> Vec<f64> {
        rs.par_iter().map(|&r| self.cdf(r)).collect()
    }

    pub fn density_many(&self, rs: &[f64]) -> Vec<f64> {
        rs.par_iter().map(|&r| self.density(r)).collect()
    }

    /// Smallest `r` with `cdf(r) >= p`, by bisection to 1e-9 relative to
    /// the largest component scale.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Domain(format!("quantile needs p in [0, 1), got {p}")));
        }
        if p == 0.0 {
            return Ok(0.0);
        }
        let scale = self.sigmas.iter().cloned().fold(0.0, f64::max);
        let mut lo = 0.0;
        let mut hi = scale * self.kernel.span();
        let tol = 1e-9 * scale;
        while hi - lo > tol {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) >= p {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn gauss(s: f64) -> ParentSpec {
        ParentSpec::gaussian(s).unwrap()
    }

    #[test]
    fn empirical_examples() {
        assert_eq!(empirical_near_extreme(&[1.0, 3.0, 4.0], Mode::FromMax).unwrap(), vec![3.0, 1.0]);
        assert_eq!(empirical_near_extreme(&[1.0, 3.0, 4.0], Mode::FromMin).unwrap(), vec![2.0, 3.0]);
        assert_eq!(empirical_near_extreme(&[2.0, 2.0, 2.0], Mode::FromMax).unwrap(), vec![0.0, 0.0]);
        assert!(empirical_near_extreme(&[1.0], Mode::FromMax).is_err());
        assert!(empirical_near_extreme(&[], Mode::FromMin).is_err());
    }

    #[test]
    fn tied_maximum_removes_one_element() {
        let d = empirical_near_extreme(&[5.0, 1.0, 5.0, 2.0], Mode::FromMax).unwrap();
        assert_eq!(d, vec![4.0, 0.0, 3.0]);
    }

    #[test]
    fn pooled_blocks() {
        let blocks: [&[f64]; 2] = [&[1.0, 3.0, 4.0], &[0.0, 2.0, 2.0]];
        let e = EmpiricalNearExtreme::from_blocks(blocks, 3, Mode::FromMax).unwrap();
        assert_eq!(e.distances, vec![3.0, 1.0, 2.0, 0.0]);
        assert_eq!(e.block_count, 2);
        assert_eq!(e.len(), e.block_count * (e.per_block_size - 1));
        let short: [&[f64]; 1] = [&[1.0, 2.0]];
        assert!(EmpiricalNearExtreme::from_blocks(short, 3, Mode::FromMax).is_err());
    }

    #[test]
    fn uniform_pair_closed_form() {
        let u = ParentSpec::uniform(0.0, 1.0).unwrap();
        for i in 0..=10 {
            let r = i as f64 / 10.0;
            assert_abs_diff_eq!(exact_density(&u, 2, r).unwrap(), 2.0 * (1.0 - r), epsilon = 1e-7);
        }
        assert_eq!(exact_density(&u, 2, 1.5).unwrap(), 0.0);
        assert_abs_diff_eq!(exact_cdf(&u, 2, 0.5).unwrap(), 0.75, epsilon = 1e-9);
    }

    #[test]
    fn gaussian_pair_closed_form() {
        // For N = 2 the distance is |x1 - x2|, half-normal with scale σ√2.
        assert_abs_diff_eq!(exact_density(&gauss(1.0), 2, 0.0).unwrap(), 1.0 / PI.sqrt(), epsilon = 1e-9);
        for &(s, r) in &[(1.0, 0.7), (2.0, 1.0), (0.01, 0.013)] {
            let scale = s * 2f64.sqrt();
            let half_normal_pdf = 2.0 * (-(r / scale).powi(2) / 2.0).exp() / (scale * (2.0 * PI).sqrt());
            let half_normal_cdf = libm::erf(r / (scale * 2f64.sqrt()));
            let d = exact_density(&gauss(s), 2, r).unwrap();
            assert!(((d - half_normal_pdf) / half_normal_pdf).abs() < 1e-9);
            assert_abs_diff_eq!(exact_cdf(&gauss(s), 2, r).unwrap(), half_normal_cdf, epsilon = 1e-9);
        }
    }

    #[test]
    fn cdf_edge_values() {
        for spec in [gauss(1.0), ParentSpec::qexponential(1.3).unwrap(), ParentSpec::uniform(0.0, 1.0).unwrap()] {
            assert_eq!(exact_cdf(&spec, 5, 0.0).unwrap(), 0.0);
        }
        assert_abs_diff_eq!(exact_cdf(&gauss(1.0), 10, 20.0).unwrap(), 1.0, epsilon = 1e-7);
        assert!(exact_cdf(&gauss(1.0), 1, 0.5).is_err());
        assert!(exact_density(&gauss(1.0), 10, -0.1).is_err());
    }

    #[test]
    fn cdf_is_integral_of_density() {
        let q = Quadrature::with_abs_tol(1e-11);
        for spec in [gauss(1.0), ParentSpec::qexponential(1.3).unwrap(), ParentSpec::uniform(0.0, 1.0).unwrap()] {
            for n in [2usize, 10, 25] {
                for &r in &[0.05, 0.3, 0.9, 2.5] {
                    let integral = q
                        .integrate(|t| exact_density(&spec, n, t).unwrap(), 0.0, r)
                        .unwrap()
                        .value;
                    let c = exact_cdf(&spec, n, r).unwrap();
                    assert!((integral - c).abs() < 1e-7, "{spec:?} N={n} r={r}: {integral} vs {c}");
                }
            }
        }
    }

    #[test]
    fn cdf_derivative_is_density() {
        for spec in [gauss(1.0), ParentSpec::qexponential(1.3).unwrap()] {
            for n in [2usize, 10, 50] {
                for &r in &[0.1, 0.5, 1.0, 2.0] {
                    let h = 1e-4;
                    let d = (exact_cdf(&spec, n, r + h).unwrap() - exact_cdf(&spec, n, r - h).unwrap()) / (2.0 * h);
                    let rho = exact_density(&spec, n, r).unwrap();
                    assert!(((d - rho) / rho).abs() < 1e-5, "{spec:?} N={n} r={r}: {d} vs {rho}");
                }
            }
        }
    }

    #[test]
    fn cdf_is_monotone() {
        let spec = ParentSpec::qexponential(1.3).unwrap();
        let mut prev = 0.0;
        for i in 0..200 {
            let c = exact_cdf(&spec, 10, i as f64 * 0.1).unwrap();
            assert!(c >= prev - 1e-12);
            prev = c;
        }
    }

    #[test]
    fn mixture_examples() {
        let single = MixtureModel::new(vec![0.7], 10).unwrap();
        assert_eq!(mixture_density(&single, 0.4).unwrap(), exact_density(&gauss(0.7), 10, 0.4).unwrap());
        let twin = MixtureModel::new(vec![0.7, 0.7], 10).unwrap();
        assert_abs_diff_eq!(mixture_cdf(&twin, 0.4).unwrap(), exact_cdf(&gauss(0.7), 10, 0.4).unwrap(), epsilon = 1e-15);
        let pair = MixtureModel::new(vec![1.0, 2.0], 2).unwrap();
        let expected = 0.5 * (1.0 / PI.sqrt() + 1.0 / (2.0 * PI.sqrt()));
        assert_abs_diff_eq!(mixture_density(&pair, 0.0).unwrap(), expected, epsilon = 1e-9);
        assert_abs_diff_eq!(expected, 0.42314, epsilon = 1e-5);
        assert_eq!(mixture_cdf(&pair, 0.0).unwrap(), 0.0);
        // half-normal distance CDFs with scales √2 and 2√2 at r = 1
        let expected = 0.5 * (libm::erf(1.0 / 2.0) + libm::erf(1.0 / 4.0));
        assert_abs_diff_eq!(mixture_cdf(&pair, 1.0).unwrap(), expected, epsilon = 1e-9);
    }

    #[test]
    fn mixture_validation() {
        assert!(MixtureModel::new(vec![], 10).is_err());
        assert!(MixtureModel::new(vec![1.0, 0.0], 10).is_err());
        assert!(MixtureModel::new(vec![1.0], 1).is_err());
    }

    #[test]
    fn mixture_linearity() {
        let a = vec![0.01, 0.02, 0.015];
        let b = vec![0.03, 0.005];
        let joined: Vec<f64> = a.iter().chain(b.iter()).cloned().collect();
        for &r in &[0.001, 0.01, 0.05] {
            let ca = mixture_cdf(&MixtureModel::new(a.clone(), 25).unwrap(), r).unwrap();
            let cb = mixture_cdf(&MixtureModel::new(b.clone(), 25).unwrap(), r).unwrap();
            let cj = mixture_cdf(&MixtureModel::new(joined.clone(), 25).unwrap(), r).unwrap();
            assert_abs_diff_eq!(cj, (3.0 * ca + 2.0 * cb) / 5.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn kernel_matches_quadrature() {
        for n in [2usize, 10, 25, 50] {
            let kernel = GaussianKernel::new(n).unwrap();
            let spec = gauss(1.0);
            for i in 0..200 {
                // off-grid points
                let s = 0.0137 + i as f64 * 0.0411;
                let c = exact_cdf(&spec, n, s).unwrap();
                let d = exact_density(&spec, n, s).unwrap();
                assert!((kernel.cdf(s) - c).abs() < 1e-9, "N={n} s={s}");
                assert!((kernel.density(s) - d).abs() < 1e-8, "N={n} s={s}");
            }
        }
    }

    #[test]
    fn evaluator_matches_mixture() {
        let model = MixtureModel::new(vec![0.01, 0.02, 0.005], 25).unwrap();
        let ev = model.evaluator().unwrap();
        for &r in &[0.0, 0.002, 0.01, 0.03, 0.08] {
            assert!((ev.cdf(r) - mixture_cdf(&model, r).unwrap()).abs() < 1e-9);
            let d = mixture_density(&model, r).unwrap();
            assert!((ev.density(r) - d).abs() < 1e-8 * d.max(1.0));
        }
        let q = ev.quantile(0.5).unwrap();
        assert!((ev.cdf(q) - 0.5).abs() < 1e-6);
        assert_eq!(ev.quantile(0.0).unwrap(), 0.0);
        assert!(ev.quantile(1.0).is_err());
    }

    #[test]
    fn log_table_matches_direct_sum() {
        let sigmas: Vec<f64> = (0..300).map(|i| 1e-4 * (1.0 + (i as f64 * 0.37).sin().abs() * 500.0)).collect();
        let ev = MixtureModel::new(sigmas, 10).unwrap().evaluator().unwrap();
        let mut worst: f64 = 0.0;
        for i in 0..4000 {
            let r = 1e-9 * 1.006f64.powi(i);
            worst = worst.max((ev.cdf(r) - ev.direct_cdf(r)).abs());
        }
        assert!(worst < 1e-10, "{worst}");
    }

    #[test]
    fn pairwise_sum_is_exact_on_small_integers() {
        let v: Vec<f64> = (1..=1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&v), 500_500.0);
    }
}
