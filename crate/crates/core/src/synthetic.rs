//! Seeded Monte Carlo drivers.
//!
//! Every draw comes from a [`substream`] keyed by `(seed, index)`, where the
//! index is the sample, block or day number. Results therefore do not
//! depend on how work is spread across threads.

use std::io::{self, Read};
use std::sync::Arc;

use chrono::{Duration, NaiveDate, NaiveDateTime, NaiveTime};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{substream, ParentSpec, GENERATOR_NAME};
use crate::error::{Error, Result};
use crate::evs::{self, LimitFamily, NormalizingWeights};
use crate::market_pipeline::{self, Analysis, FilterRules, TickRecord, VarianceConvention};
use crate::near_extreme::Mode;
use crate::stats_tests::{self, KsResult};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub x: f64,
    pub empirical_density: f64,
    pub finite_sample_density: f64,
    pub limiting_density: f64,
}

/// Maxima of `samples` sets of `n` iid draws, with the theoretical
/// finite-sample and limiting densities on the histogram's bin centers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaximaExperiment {
    pub spec: ParentSpec,
    pub n: usize,
    pub samples: usize,
    pub seed: u64,
    pub generator: String,
    pub binning: String,
    pub family: LimitFamily,
    pub weights: NormalizingWeights,
    pub maxima: Vec<f64>,
    pub curve: Vec<CurvePoint>,
}

impl MaximaExperiment {
    pub fn sorted_maxima(&self) -> Vec<f64> {
        let mut v = self.maxima.clone();
        v.sort_by(f64::total_cmp);
        v
    }

    /// K-S of the maxima against `G^N`.
    pub fn ks_vs_finite_sample(&self) -> Result<KsResult> {
        stats_tests::ks_statistic(
            |x| evs::max_cdf_unchecked(&self.spec, self.n, x),
            &self.sorted_maxima(),
        )
    }

    /// K-S of the maxima against `L((x - b)/a)`.
    pub fn ks_vs_limit(&self) -> Result<KsResult> {
        stats_tests::ks_statistic(
            |x| evs::rescaled_limit_cdf(self.family, &self.weights, x),
            &self.sorted_maxima(),
        )
    }
}

/// Freedman–Diaconis bin width `2·IQR·n^(-1/3)` of a sorted sample.
pub fn freedman_diaconis_width(sorted: &[f64]) -> Option<f64> {
    if sorted.len() < 2 {
        return None;
    }
    let q = |p: f64| stats_tests::empirical_quantile(sorted, p).ok();
    let iqr = q(0.75)? - q(0.25)?;
    let width = 2.0 * iqr / (sorted.len() as f64).cbrt();
    (width > 0.0 && width.is_finite()).then_some(width)
}

pub fn maxima_experiment(spec: &ParentSpec, n: usize, samples: usize, seed: u64) -> Result<MaximaExperiment> {
    spec.validate()?;
    if n < 2 {
        return Err(Error::Domain(format!("N must be at least 2, got {n}")));
    }
    if samples == 0 {
        return Err(Error::Domain("need at least one sample".into()));
    }
    let family = evs::classify_domain(spec);
    let weights = evs::weights(spec, family, n)?;
    let maxima: Vec<f64> = (0..samples as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, i);
            (0..n).map(|_| spec.draw(&mut rng)).fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();

    let mut sorted = maxima.clone();
    sorted.sort_by(f64::total_cmp);
    let lo = sorted[0];
    let hi = sorted[sorted.len() - 1];
    let width = freedman_diaconis_width(&sorted).unwrap_or_else(|| (hi - lo).max(1e-12));
    let histogram = stats_tests::histogram(&maxima, width, lo)?;
    let curve = histogram
        .iter()
        .map(|bin| CurvePoint {
            x: bin.center,
            empirical_density: bin.density,
            finite_sample_density: evs::finite_sample_max_density(spec, n, bin.center).unwrap_or(0.0),
            limiting_density: evs::rescaled_limit_density(family, &weights, bin.center),
        })
        .collect();
    Ok(MaximaExperiment {
        spec: *spec,
        n,
        samples,
        seed,
        generator: GENERATOR_NAME.to_string(),
        binning: format!("freedman-diaconis, width {width:e}, origin at the smallest maximum"),
        family,
        weights,
        maxima,
        curve,
    })
}

/// Returns `σ_j ε` for `n` standard normal draws per block `j`.
pub fn model_series(sigma_path: &[f64], n: usize, seed: u64) -> Result<Vec<f64>> {
    if let Some(s) = sigma_path.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
        return Err(Error::Parameter(format!("sigma must be positive, got {s}")));
    }
    if n == 0 {
        return Err(Error::Domain("block length must be positive".into()));
    }
    let blocks: Vec<Vec<f64>> = sigma_path
        .par_iter()
        .enumerate()
        .map(|(j, &sigma)| {
            let mut rng = substream(seed, j as u64);
            (0..n).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)).collect()
        })
        .collect();
    Ok(blocks.concat())
}

/// σ path drawn log-uniformly in `[lo, hi]`, one value per block.
pub fn log_uniform_sigmas(h: usize, lo: f64, hi: f64, seed: u64) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi >= lo) {
        return Err(Error::Parameter(format!("need 0 < lo <= hi, got [{lo}, {hi}]")));
    }
    // Stream index u64::MAX is reserved for the σ path so it never
    // collides with the per-block streams of model_series.
    let mut rng = substream(seed, u64::MAX);
    let (a, b) = (lo.ln(), hi.ln());
    Ok((0..h).map(|_| (a + (b - a) * rng.random::<f64>()).exp()).collect())
}

/// Rounds every price to the nearest multiple of `tick`.
pub fn discretization_series(prices: &[f64], tick: f64) -> Result<Vec<f64>> {
    if !(tick > 0.0 && tick.is_finite()) {
        return Err(Error::Domain(format!("tick must be positive, got {tick}")));
    }
    Ok(prices.iter().map(|p| (p / tick).round() * tick).collect())
}

fn session_start(date: NaiveDate) -> NaiveDateTime {
    date.and_time(NaiveTime::from_hms_opt(10, 0, 0).unwrap())
}

const SESSION_MILLIS: i64 = (5 * 3600 + 45 * 60) * 1000;

/// Turns a return series into quote records on one day whose event-time
/// mid-prices reproduce the returns with `τ = 1`.
pub fn ticks_from_returns(returns: &[f64], start_price: f64, date: NaiveDate, symbol: &str) -> Result<Vec<TickRecord>> {
    if !(start_price > 0.0) {
        return Err(Error::Parameter(format!("start price must be positive, got {start_price}")));
    }
    let count = returns.len() as i64 + 1;
    if count > SESSION_MILLIS {
        return Err(Error::Domain("too many events for one session at millisecond resolution".into()));
    }
    let symbol: Arc<str> = Arc::from(symbol);
    let step = SESSION_MILLIS / count.max(1);
    let start = session_start(date);
    let mut log_price = start_price.ln();
    let mut out = Vec::with_capacity(count as usize);
    for k in 0..count as usize {
        if k > 0 {
            log_price += returns[k - 1];
        }
        let mid = if k == 0 { start_price } else { log_price.exp() };
        out.push(TickRecord {
            timestamp: start + Duration::milliseconds(step * k as i64),
            bid: mid,
            ask: mid,
            trade_price: mid,
            symbol: Arc::clone(&symbol),
        });
    }
    Ok(out)
}

/// Parameters of a synthetic quote stream: a ±1-tick random walk of the
/// bid with a one- or two-tick spread, and trades that leave the quotes
/// unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickStreamConfig {
    pub seed: u64,
    pub start_date: NaiveDate,
    pub days: usize,
    pub records_per_day: usize,
    pub start_price: f64,
    pub tick_size: f64,
    /// Probability that a record repeats the previous quotes.
    pub repeat_probability: f64,
}

impl Default for TickStreamConfig {
    fn default() -> Self {
        TickStreamConfig {
            seed: 1,
            start_date: NaiveDate::from_ymd_opt(2007, 1, 3).unwrap(),
            days: 1,
            records_per_day: 100_000,
            start_price: 50.0,
            tick_size: 0.01,
            repeat_probability: 0.3,
        }
    }
}

impl TickStreamConfig {
    pub fn total_records(&self) -> usize {
        self.days * self.records_per_day
    }
}

/// Lazily generated tick CSV (`timestamp,bid,ask,trade_price`), readable
/// as a byte stream without materializing the file.
pub struct TickCsvStream {
    cfg: TickStreamConfig,
    rng: rand_chacha::ChaCha8Rng,
    day: usize,
    record: usize,
    bid_ticks: i64,
    spread_ticks: i64,
    buf: Vec<u8>,
    pos: usize,
    header_done: bool,
    date_text: String,
}

impl TickCsvStream {
    pub fn new(cfg: TickStreamConfig) -> Result<Self> {
        if !(cfg.tick_size > 0.0 && cfg.start_price > cfg.tick_size) {
            return Err(Error::Parameter("need start_price > tick_size > 0".into()));
        }
        if cfg.records_per_day as i64 > SESSION_MILLIS {
            return Err(Error::Parameter("records_per_day exceeds millisecond resolution".into()));
        }
        let bid_ticks = (cfg.start_price / cfg.tick_size).round() as i64;
        let rng = substream(cfg.seed, 0);
        let date_text = cfg.start_date.format("%Y-%m-%d").to_string();
        Ok(TickCsvStream {
            cfg,
            rng,
            day: 0,
            record: 0,
            bid_ticks,
            spread_ticks: 1,
            buf: Vec::with_capacity(1 << 16),
            pos: 0,
            header_done: false,
            date_text,
        })
    }

    fn refill(&mut self) {
        use std::io::Write;
        self.buf.clear();
        self.pos = 0;
        if !self.header_done {
            self.buf.extend_from_slice(b"timestamp,bid,ask,trade_price\n");
            self.header_done = true;
        }
        let floor = (1.0 / self.cfg.tick_size).ceil() as i64;
        while self.buf.len() < (1 << 16) - 128 && self.day < self.cfg.days {
            if self.cfg.repeat_probability <= 0.0 || self.rng.random::<f64>() >= self.cfg.repeat_probability {
                if self.rng.random::<bool>() {
                    self.bid_ticks += if self.rng.random::<bool>() { 1 } else { -1 };
                } else {
                    self.spread_ticks = if self.spread_ticks == 1 { 2 } else { 1 };
                }
                if self.bid_ticks < floor {
                    self.bid_ticks = floor + 1;
                }
            }
            let millis = (SESSION_MILLIS * self.record as i64) / self.cfg.records_per_day as i64;
            let secs = 36_000 + millis / 1000;
            let tick = self.cfg.tick_size;
            let bid = self.bid_ticks as f64 * tick;
            let ask = (self.bid_ticks + self.spread_ticks) as f64 * tick;
            let _ = writeln!(
                self.buf,
                "{}T{:02}:{:02}:{:02}.{:03},{:.2},{:.2},{:.2}",
                self.date_text,
                secs / 3600,
                (secs / 60) % 60,
                secs % 60,
                millis % 1000,
                bid,
                ask,
                bid
            );
            self.record += 1;
            if self.record == self.cfg.records_per_day {
                self.record = 0;
                self.day += 1;
                let date = self.cfg.start_date + Duration::days(self.day as i64);
                self.date_text = date.format("%Y-%m-%d").to_string();
            }
        }
    }
}

impl Read for TickCsvStream {
    fn read(&mut self, out: &mut [u8]) -> io::Result<usize> {
        if self.pos >= self.buf.len() {
            self.refill();
            if self.buf.is_empty() {
                return Ok(0);
            }
        }
        let n = out.len().min(self.buf.len() - self.pos);
        out[..n].copy_from_slice(&self.buf[self.pos..self.pos + n]);
        self.pos += n;
        Ok(n)
    }
}

/// Block sizes and σ range of a model-closure run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClosureConfig {
    pub h: usize,
    pub n: usize,
    pub sigma_lo: f64,
    pub sigma_hi: f64,
}

impl Default for ClosureConfig {
    fn default() -> Self {
        ClosureConfig {
            h: 500,
            n: 25,
            sigma_lo: 0.005,
            sigma_hi: 0.03,
        }
    }
}

/// One closure run: both extreme modes analysed on the same data.
#[derive(Debug, Clone)]
pub struct ClosureRun {
    pub seed: u64,
    pub sigma_path: Vec<f64>,
    pub from_max: Analysis,
    pub from_min: Analysis,
}

/// Generates block-constant-σ Gaussian returns, writes them as quotes in
/// event time, and sends them through ingestion and analysis with `τ = 1`.
///
/// The jump filter is off: with σ up to a few percent, legitimate model
/// returns exceed any fixed relative-jump threshold.
pub fn closure_run(cfg: &ClosureConfig, seed: u64) -> Result<ClosureRun> {
    let sigma_path = log_uniform_sigmas(cfg.h, cfg.sigma_lo, cfg.sigma_hi, seed)?;
    let returns = model_series(&sigma_path, cfg.n, seed)?;
    let date = NaiveDate::from_ymd_opt(2007, 1, 3).unwrap();
    let ticks = ticks_from_returns(&returns, 100.0, date, "SYN")?;
    let rules = FilterRules {
        jump_threshold: None,
        ..FilterRules::default()
    };
    let ingested = market_pipeline::ingest_records(ticks, &rules, 1)?;
    let recovered = ingested.returns();
    let analyze = |mode| {
        market_pipeline::analyze(&recovered, 1, cfg.n, VarianceConvention::ZeroMean, mode, 1e-4)
    };
    Ok(ClosureRun {
        seed,
        sigma_path,
        from_max: analyze(Mode::FromMax)?,
        from_min: analyze(Mode::FromMin)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosureRow {
    pub seed: u64,
    pub sample_size: usize,
    pub scaled_ks_max: f64,
    pub scaled_ks_min: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosureSummary {
    pub config: ClosureConfig,
    pub generator: String,
    pub runs: Vec<ClosureRow>,
    /// Fraction of runs where both modes pass at 5%.
    pub pass_rate: f64,
}

/// `runs` closure runs with seeds `seed, seed + 1, …`.
pub fn closure_experiment(cfg: &ClosureConfig, seed: u64, runs: usize) -> Result<ClosureSummary> {
    let rows: Vec<ClosureRow> = (0..runs as u64)
        .into_par_iter()
        .map(|i| {
            let run = closure_run(cfg, seed.wrapping_add(i))?;
            Ok(ClosureRow {
                seed: run.seed,
                sample_size: run.from_max.ks.sample_size,
                scaled_ks_max: run.from_max.ks.scaled,
                scaled_ks_min: run.from_min.ks.scaled,
                pass: !run.from_max.ks.reject_5pct && !run.from_min.ks.reject_5pct,
            })
        })
        .collect::<Result<_>>()?;
    let pass_rate = rows.iter().filter(|r| r.pass).count() as f64 / rows.len().max(1) as f64;
    Ok(ClosureSummary {
        config: *cfg,
        generator: GENERATOR_NAME.to_string(),
        runs: rows,
        pass_rate,
    })
}
