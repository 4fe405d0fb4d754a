//! Globally adaptive Gauss–Kronrod quadrature.
//!
//! Each panel is integrated with the 10-point Gauss–Legendre rule and its
//! 21-point Kronrod extension; the difference between the two drives the
//! error estimate. The panel with the largest estimated error is bisected
//! until the total estimate falls below `max(abs_tol, rel_tol * |I|)`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

#[allow(clippy::excessive_precision)]
const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689_003,
    0.973_906_528_517_171_720_077_964_012_084_452,
    0.930_157_491_355_708_226_001_207_180_059_508,
    0.865_063_366_688_984_510_732_096_688_423_493,
    0.780_817_726_586_416_897_063_717_578_345_042,
    0.679_409_568_299_024_406_234_327_365_114_874,
    0.562_757_134_668_604_683_339_000_099_272_694,
    0.433_395_394_129_247_190_799_265_943_165_784,
    0.294_392_862_701_460_198_131_126_603_103_866,
    0.148_874_338_981_631_210_884_826_001_129_720,
    0.0,
];

#[allow(clippy::excessive_precision)]
const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062_192,
    0.032_558_162_307_964_727_478_818_972_459_390,
    0.054_755_896_574_351_996_031_381_300_244_580,
    0.075_039_674_810_919_952_767_043_140_916_190,
    0.093_125_454_583_697_605_535_065_465_083_366,
    0.109_387_158_802_297_641_899_210_590_325_805,
    0.123_491_976_262_065_851_077_600_525_478_401,
    0.134_709_217_311_473_325_928_054_001_771_707,
    0.142_775_938_577_060_080_797_094_273_138_717,
    0.147_739_104_901_338_491_374_841_515_972_068,
    0.149_445_554_002_916_905_664_936_468_389_821,
];

// Gauss-Legendre weights for the odd-indexed nodes XGK[1], XGK[3], ..., XGK[9].
#[allow(clippy::excessive_precision)]
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893_332,
    0.149_451_349_150_580_593_145_776_339_657_697,
    0.219_086_362_515_982_043_995_534_934_228_163,
    0.269_266_719_309_996_355_091_226_921_569_469,
    0.295_524_224_714_752_870_173_892_994_651_146,
];

/// Integral value together with its estimated absolute error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

/// Tolerances and limits for adaptive integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_panels: usize,
}

impl Default for Quadrature {
    fn default() -> Self {
        Quadrature {
            abs_tol: 1e-9,
            rel_tol: 1e-12,
            max_panels: 4000,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}

impl Eq for Panel {}

impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn gauss_kronrod<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Result<Panel> {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);

    let fc = f(center);
    let mut kronrod = fc * WGK[10];
    let mut gauss = 0.0;
    let mut abs_sum = fc.abs() * WGK[10];
    let mut fv = [(0.0f64, 0.0f64); 10];
    for (j, slot) in fv.iter_mut().enumerate() {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        *slot = (f1, f2);
        kronrod += WGK[j] * (f1 + f2);
        abs_sum += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            gauss += WG[j / 2] * (f1 + f2);
        }
    }
    if !kronrod.is_finite() {
        return Err(Error::Domain(format!(
            "integrand is not finite on [{a}, {b}]"
        )));
    }

    let mean = 0.5 * kronrod;
    let mut asc = WGK[10] * (fc - mean).abs();
    for (j, (f1, f2)) in fv.iter().enumerate() {
        asc += WGK[j] * ((f1 - mean).abs() + (f2 - mean).abs());
    }

    let value = kronrod * half;
    let abs_value = abs_sum * half.abs();
    let asc = asc * half.abs();
    let mut error = ((kronrod - gauss) * half).abs();
    if asc != 0.0 && error != 0.0 {
        error = asc * (200.0 * error / asc).powf(1.5).min(1.0);
    }
    if abs_value > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        error = error.max(50.0 * f64::EPSILON * abs_value);
    }
    Ok(Panel { a, b, value, error })
}

impl Quadrature {
    pub fn with_abs_tol(abs_tol: f64) -> Self {
        Quadrature {
            abs_tol,
            ..Self::default()
        }
    }

    /// Integrates `f` over `[a, b]`.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F, a: f64, b: f64) -> Result<Estimate> {
        self.integrate_with_breaks(f, &[a, b])
    }

    /// Integrates `f` over `[points[0], points[last]]`, seeding the panel set
    /// with the given interior breakpoints (known kinks or jumps).
    pub fn integrate_with_breaks<F: Fn(f64) -> f64>(
        &self,
        f: F,
        points: &[f64],
    ) -> Result<Estimate> {
        if points.len() < 2 {
            return Err(Error::Domain("need at least two integration limits".into()));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::Domain("integration limits must be finite".into()));
        }
        if points.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Domain(
                "integration breakpoints must be nondecreasing".into(),
            ));
        }

        let mut heap = BinaryHeap::new();
        for w in points.windows(2) {
            if w[1] > w[0] {
                heap.push(gauss_kronrod(&f, w[0], w[1])?);
            }
        }
        if heap.is_empty() {
            return Ok(Estimate {
                value: 0.0,
                error: 0.0,
            });
        }

        // Panels that can no longer be bisected in floating point.
        let mut frozen: Vec<Panel> = Vec::new();
        let mut panels = heap.len();

        loop {
            let (value, error) = totals(heap.iter().chain(frozen.iter()));
            let tol = self.abs_tol.max(self.rel_tol * value.abs());
            if error <= tol {
                return Ok(Estimate { value, error });
            }
            if panels >= self.max_panels {
                return Err(Error::Numerical {
                    achieved: error,
                    requested: tol,
                });
            }
            let Some(worst) = heap.pop() else {
                return Err(Error::Numerical {
                    achieved: error,
                    requested: tol,
                });
            };
            let mid = 0.5 * (worst.a + worst.b);
            if !(mid > worst.a && mid < worst.b) || (worst.b - worst.a) < 1e-15 * worst.a.abs().max(worst.b.abs()) {
                frozen.push(worst);
                continue;
            }
            heap.push(gauss_kronrod(&f, worst.a, mid)?);
            heap.push(gauss_kronrod(&f, mid, worst.b)?);
            panels += 1;
        }
    }

    /// Integrates `f` over `[a, ∞)` via the map `x = a + t / (1 - t)`.
    pub fn integrate_to_infinity<F: Fn(f64) -> f64>(&self, f: F, a: f64) -> Result<Estimate> {
        let g = |t: f64| {
            let s = 1.0 - t;
            let x = a + t / s;
            if !x.is_finite() {
                return 0.0;
            }
            f(x) / (s * s)
        };
        self.integrate(g, 0.0, 1.0)
    }
}

// Summed in ascending order of the left endpoint so the result does not
// depend on heap layout.
fn totals<'a>(panels: impl Iterator<Item = &'a Panel>) -> (f64, f64) {
    let mut v: Vec<&Panel> = panels.collect();
    v.sort_by(|p, q| p.a.total_cmp(&q.a));
    v.iter()
        .fold((0.0, 0.0), |(s, e), p| (s + p.value, e + p.error))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_is_exact() {
        let q = Quadrature::default();
        let est = q.integrate(|x| 3.0 * x * x + 1.0, 0.0, 2.0).unwrap();
        assert!((est.value - 10.0).abs() < 1e-13);
    }

    #[test]
    fn gaussian_integral_over_half_line() {
        let q = Quadrature::default();
        let est = q
            .integrate_to_infinity(|x| (-x * x).exp(), 0.0)
            .unwrap();
        assert!((est.value - 0.5 * std::f64::consts::PI.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn endpoint_singularity_converges() {
        // ∫₀¹ x^(-1/2) dx = 2
        let q = Quadrature::default();
        let est = q.integrate(|x| x.powf(-0.5), 0.0, 1.0).unwrap();
        assert!((est.value - 2.0).abs() < 1e-8, "{}", est.value);
    }

    #[test]
    fn breakpoints_handle_jumps() {
        let q = Quadrature::default();
        let f = |x: f64| if x < 0.3 { 0.0 } else { 1.0 };
        let est = q.integrate_with_breaks(f, &[0.0, 0.3, 1.0]).unwrap();
        assert!((est.value - 0.7).abs() < 1e-14);
    }

    #[test]
    fn non_convergence_reports_achieved_error() {
        let q = Quadrature {
            abs_tol: 1e-14,
            rel_tol: 0.0,
            max_panels: 3,
        };
        let err = q.integrate(|x| (50.0 * x).sin().abs(), 0.0, 10.0).unwrap_err();
        match err {
            Error::Numerical { achieved, requested } => {
                assert!(achieved > requested);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn rejects_infinite_limits() {
        let q = Quadrature::default();
        assert!(q.integrate(|x| x, 0.0, f64::INFINITY).is_err());
    }
}
