//! From raw ticks to pooled near-extreme statistics.
//!
//! Ticks are filtered per trading day, sampled in event time (a new event
//! each time the mid-price changes), turned into non-overlapping τ-lag
//! log-returns, and arranged into consecutive blocks of `N` returns with a
//! local variance each. Event series restart every day, so no return
//! straddles two days, but blocks may.

use std::io::Read;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{NaiveDate, NaiveDateTime, NaiveTime};
use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::near_extreme::{EmpiricalNearExtreme, MixtureModel, Mode};
use crate::stats_tests::{self, Bin, KsResult, QqPlotData};

#[derive(Debug, Clone, PartialEq)]
pub struct TickRecord {
    pub timestamp: NaiveDateTime,
    pub bid: f64,
    pub ask: f64,
    pub trade_price: f64,
    pub symbol: Arc<str>,
}

impl TickRecord {
    #[inline]
    pub fn mid(&self) -> f64 {
        0.5 * (self.bid + self.ask)
    }
}

/// Inclusive intraday window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SessionWindow {
    pub start: NaiveTime,
    pub end: NaiveTime,
}

impl SessionWindow {
    pub fn contains(&self, t: NaiveTime) -> bool {
        t >= self.start && t <= self.end
    }
}

impl Default for SessionWindow {
    fn default() -> Self {
        SessionWindow {
            start: NaiveTime::from_hms_opt(10, 0, 0).unwrap(),
            end: NaiveTime::from_hms_opt(15, 45, 0).unwrap(),
        }
    }
}

/// Which cleaning rules run, with their parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterRules {
    pub session: Option<SessionWindow>,
    pub drop_nonpositive: bool,
    pub drop_crossed: bool,
    /// Maximum relative move of the mid against the previous kept mid.
    pub jump_threshold: Option<f64>,
}

impl Default for FilterRules {
    fn default() -> Self {
        FilterRules {
            session: Some(SessionWindow::default()),
            drop_nonpositive: true,
            drop_crossed: true,
            jump_threshold: Some(0.10),
        }
    }
}

/// Drop counts per rule.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    pub read: u64,
    pub kept: u64,
    pub dropped_session: u64,
    pub dropped_nonpositive: u64,
    pub dropped_crossed: u64,
    pub dropped_jump: u64,
    pub days_unsorted: u64,
    /// Days where nothing survived filtering.
    pub days_skipped: Vec<String>,
}

impl FilterReport {
    pub fn merge(&mut self, other: &FilterReport) {
        self.read += other.read;
        self.kept += other.kept;
        self.dropped_session += other.dropped_session;
        self.dropped_nonpositive += other.dropped_nonpositive;
        self.dropped_crossed += other.dropped_crossed;
        self.dropped_jump += other.dropped_jump;
        self.days_unsorted += other.days_unsorted;
        self.days_skipped.extend(other.days_skipped.iter().cloned());
    }
}

/// Cleans `records`, returning them time-ordered. The jump reference
/// restarts at every new day.
pub fn filter_ticks(mut records: Vec<TickRecord>, rules: &FilterRules) -> (Vec<TickRecord>, FilterReport) {
    let mut report = FilterReport {
        read: records.len() as u64,
        ..Default::default()
    };
    if !records.windows(2).all(|w| w[0].timestamp <= w[1].timestamp) {
        records.sort_by_key(|r| r.timestamp);
        report.days_unsorted += 1;
    }

    let mut days_seen: Vec<NaiveDate> = Vec::new();
    let mut days_with_output: Vec<NaiveDate> = Vec::new();
    let mut reference: Option<(NaiveDate, f64)> = None;
    let mut out = Vec::with_capacity(records.len());
    for rec in records {
        let day = rec.timestamp.date();
        if days_seen.last() != Some(&day) {
            days_seen.push(day);
        }
        match screen(&rec, rules, &reference) {
            Some(Drop::Session) => report.dropped_session += 1,
            Some(Drop::NonPositive) => report.dropped_nonpositive += 1,
            Some(Drop::Crossed) => report.dropped_crossed += 1,
            Some(Drop::Jump) => report.dropped_jump += 1,
            None => {
                reference = Some((day, rec.mid()));
                if days_with_output.last() != Some(&day) {
                    days_with_output.push(day);
                }
                out.push(rec);
            }
        }
    }
    for day in days_seen {
        if !days_with_output.contains(&day) {
            warn!("no ticks survive filtering on {day}; day skipped");
            report.days_skipped.push(day.to_string());
        }
    }
    report.kept = out.len() as u64;
    (out, report)
}

enum Drop {
    Session,
    NonPositive,
    Crossed,
    Jump,
}

#[inline]
fn screen(rec: &TickRecord, rules: &FilterRules, reference: &Option<(NaiveDate, f64)>) -> Option<Drop> {
    if let Some(session) = rules.session {
        if !session.contains(rec.timestamp.time()) {
            return Some(Drop::Session);
        }
    }
    if rules.drop_nonpositive
        && !(rec.bid > 0.0 && rec.ask > 0.0 && rec.trade_price > 0.0 && rec.mid().is_finite())
    {
        return Some(Drop::NonPositive);
    }
    if rules.drop_crossed && rec.bid > rec.ask {
        return Some(Drop::Crossed);
    }
    if let (Some(threshold), Some((day, prev))) = (rules.jump_threshold, reference) {
        if *day == rec.timestamp.date() && ((rec.mid() - prev) / prev).abs() > threshold {
            return Some(Drop::Jump);
        }
    }
    None
}

/// Mid-prices sampled in event time.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EventSeries {
    pub mids: Vec<f64>,
}

impl EventSeries {
    pub fn event_count(&self) -> usize {
        self.mids.len()
    }

    #[inline]
    fn push_mid(&mut self, mid: f64) {
        if self.mids.last() != Some(&mid) {
            self.mids.push(mid);
        }
    }
}

/// Appends a mid each time it differs from the last appended one; trades
/// that leave the mid unchanged are not events.
pub fn build_event_series(records: &[TickRecord]) -> EventSeries {
    let mut series = EventSeries::default();
    for rec in records {
        series.push_mid(rec.mid());
    }
    series
}

/// Non-overlapping τ-lag log-returns `ln(S[(i+1)τ] / S[iτ])`.
pub fn compute_returns(series: &EventSeries, tau: usize) -> Result<Vec<f64>> {
    if tau == 0 {
        return Err(Error::Domain("tau must be at least 1".into()));
    }
    let len = series.mids.len();
    if len <= tau {
        if len > 0 {
            warn!("event series of length {len} is too short for tau = {tau}");
        }
        return Ok(Vec::new());
    }
    let count = (len - 1) / tau;
    Ok((0..count)
        .map(|i| (series.mids[(i + 1) * tau] / series.mids[i * tau]).ln())
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceConvention {
    /// Mean of squared returns: the model has no drift.
    #[default]
    ZeroMean,
    /// Mean-subtracted, `N - 1` denominator.
    Centered,
}

impl VarianceConvention {
    pub fn sigma(&self, xs: &[f64]) -> f64 {
        let n = xs.len() as f64;
        match self {
            VarianceConvention::ZeroMean => (xs.iter().map(|x| x * x).sum::<f64>() / n).sqrt(),
            VarianceConvention::Centered => {
                if xs.windows(2).all(|w| w[0] == w[1]) {
                    return 0.0;
                }
                let mean = xs.iter().sum::<f64>() / n;
                (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub returns: Vec<f64>,
    pub sigma: f64,
    pub max: f64,
    pub min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockedReturns {
    pub tau: usize,
    pub n: usize,
    pub variance_convention: VarianceConvention,
    pub blocks: Vec<Block>,
    /// Trailing returns that do not fill a block.
    pub dropped_tail: usize,
    /// Blocks excluded because their σ is zero.
    pub degenerate_blocks: usize,
    /// Indices (into `blocks`) of retained blocks whose values are all equal.
    pub constant_blocks: Vec<usize>,
}

impl BlockedReturns {
    pub fn h(&self) -> usize {
        self.blocks.len()
    }

    pub fn sigmas(&self) -> Vec<f64> {
        self.blocks.iter().map(|b| b.sigma).collect()
    }
}

/// Arranges consecutive returns into blocks of exactly `n`.
pub fn block_returns(
    returns: &[f64],
    n: usize,
    tau: usize,
    convention: VarianceConvention,
) -> Result<BlockedReturns> {
    if n < 2 {
        return Err(Error::Domain(format!("block size N must be at least 2, got {n}")));
    }
    if returns.iter().any(|r| !r.is_finite()) {
        return Err(Error::data("non-finite log-return (zero or invalid price?)"));
    }
    if returns.len() < n {
        warn!("{} returns cannot fill a block of {n}", returns.len());
    }
    let dropped_tail = returns.len() % n;
    let stats: Vec<Option<Block>> = returns
        .par_chunks_exact(n)
        .map(|chunk| {
            let sigma = convention.sigma(chunk);
            if !(sigma > 0.0) {
                return None;
            }
            let (min, max) = chunk
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
            Some(Block {
                returns: chunk.to_vec(),
                sigma,
                max,
                min,
            })
        })
        .collect();
    let degenerate_blocks = stats.iter().filter(|b| b.is_none()).count();
    if degenerate_blocks > 0 {
        warn!("{degenerate_blocks} blocks with zero variance excluded");
    }
    let blocks: Vec<Block> = stats.into_iter().flatten().collect();
    let constant_blocks = blocks
        .iter()
        .enumerate()
        .filter(|(_, b)| b.max == b.min)
        .map(|(i, _)| i)
        .collect();
    Ok(BlockedReturns {
        tau,
        n,
        variance_convention: convention,
        blocks,
        dropped_tail,
        degenerate_blocks,
        constant_blocks,
    })
}

/// Pools the `N - 1` distances of every block.
pub fn aggregate_near_extreme(blocked: &BlockedReturns, mode: Mode) -> Result<EmpiricalNearExtreme> {
    if blocked.blocks.is_empty() {
        return Err(Error::Domain("no complete blocks to aggregate".into()));
    }
    EmpiricalNearExtreme::from_blocks(
        blocked.blocks.iter().map(|b| b.returns.as_slice()),
        blocked.n,
        mode,
    )
}

/// One mixture component per block, in block order.
pub fn fit_mixture(blocked: &BlockedReturns) -> Result<MixtureModel> {
    if blocked.blocks.is_empty() {
        return Err(Error::Domain("no complete blocks to fit".into()));
    }
    MixtureModel::new(blocked.sigmas(), blocked.n)
}

/// Pipeline settings, readable from a JSON config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub session_start: String,
    pub session_end: String,
    pub jump_threshold: f64,
    pub tau: Option<usize>,
    #[serde(rename = "N", alias = "n")]
    pub n: Option<usize>,
    pub variance_convention: VarianceConvention,
    pub filter_session: bool,
    pub filter_nonpositive: bool,
    pub filter_crossed: bool,
    pub filter_jumps: bool,
    pub histogram_bin: f64,
    pub symbol: Option<String>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            session_start: "10:00:00".into(),
            session_end: "15:45:00".into(),
            jump_threshold: 0.10,
            tau: None,
            n: None,
            variance_convention: VarianceConvention::ZeroMean,
            filter_session: true,
            filter_nonpositive: true,
            filter_crossed: true,
            filter_jumps: true,
            histogram_bin: 1e-4,
            symbol: None,
        }
    }
}

fn parse_clock(s: &str) -> Result<NaiveTime> {
    NaiveTime::parse_from_str(s, "%H:%M:%S%.f")
        .or_else(|_| NaiveTime::parse_from_str(s, "%H:%M"))
        .map_err(|e| Error::Parameter(format!("bad session time {s:?}: {e}")))
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = serde_json::from_str(text)?;
        cfg.rules()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::Data {
            path: Some(path.to_path_buf()),
            line: None,
            message: e.to_string(),
        })
    }

    pub fn rules(&self) -> Result<FilterRules> {
        let session = SessionWindow {
            start: parse_clock(&self.session_start)?,
            end: parse_clock(&self.session_end)?,
        };
        if session.start > session.end {
            return Err(Error::Parameter("session_start is after session_end".into()));
        }
        if self.filter_jumps && !(self.jump_threshold > 0.0) {
            return Err(Error::Parameter(format!(
                "jump_threshold must be positive, got {}",
                self.jump_threshold
            )));
        }
        Ok(FilterRules {
            session: self.filter_session.then_some(session),
            drop_nonpositive: self.filter_nonpositive,
            drop_crossed: self.filter_crossed,
            jump_threshold: self.filter_jumps.then_some(self.jump_threshold),
        })
    }

    pub fn tau(&self) -> Result<usize> {
        match self.tau {
            Some(t) if t >= 1 => Ok(t),
            Some(t) => Err(Error::Parameter(format!("tau must be >= 1, got {t}"))),
            None => Err(Error::Parameter("tau is not set".into())),
        }
    }

    pub fn n(&self) -> Result<usize> {
        match self.n {
            Some(n) if n >= 2 => Ok(n),
            Some(n) => Err(Error::Parameter(format!("N must be >= 2, got {n}"))),
            None => Err(Error::Parameter("N is not set".into())),
        }
    }
}

/// Returns of one trading day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayReturns {
    pub date: NaiveDate,
    pub events: usize,
    pub returns: Vec<f64>,
}

/// Everything kept from one input after ingestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub symbol: String,
    pub source: Option<PathBuf>,
    pub days: Vec<DayReturns>,
    pub report: FilterReport,
}

impl IngestSummary {
    pub fn events(&self) -> usize {
        self.days.iter().map(|d| d.events).sum()
    }

    pub fn returns(&self) -> Vec<f64> {
        self.days.iter().flat_map(|d| d.returns.iter().copied()).collect()
    }
}

/// Filters one day of records and reduces it to τ-lag returns.
pub fn process_day(records: Vec<TickRecord>, rules: &FilterRules, tau: usize) -> Result<(Option<DayReturns>, FilterReport)> {
    let date = match records.first() {
        Some(r) => r.timestamp.date(),
        None => return Ok((None, FilterReport::default())),
    };
    let (kept, report) = filter_ticks(records, rules);
    if kept.is_empty() {
        return Ok((None, report));
    }
    let series = build_event_series(&kept);
    let returns = compute_returns(&series, tau)?;
    Ok((
        Some(DayReturns {
            date,
            events: series.event_count(),
            returns,
        }),
        report,
    ))
}

/// Symbol from a file name: the stem up to the first `_`.
pub fn symbol_from_path(path: &Path) -> String {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("UNKNOWN");
    stem.split('_').next().unwrap_or(stem).to_string()
}

struct Columns {
    timestamp: usize,
    bid: usize,
    ask: usize,
    trade_price: usize,
}

fn locate_columns(headers: &csv::ByteRecord, source: Option<&Path>) -> Result<Columns> {
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim_ascii() == name.as_bytes())
            .ok_or_else(|| Error::Data {
                path: source.map(Path::to_path_buf),
                line: Some(1),
                message: format!("missing column {name:?}; expected header timestamp,bid,ask,trade_price"),
            })
    };
    Ok(Columns {
        timestamp: find("timestamp")?,
        bid: find("bid")?,
        ask: find("ask")?,
        trade_price: find("trade_price")?,
    })
}

/// Reads a tick CSV (`timestamp,bid,ask,trade_price`) and reduces it day
/// by day. Only one day of records is held at a time.
pub fn ingest_reader<R: Read>(
    reader: R,
    source: Option<&Path>,
    symbol: &str,
    rules: &FilterRules,
    tau: usize,
) -> Result<IngestSummary> {
    if tau == 0 {
        return Err(Error::Domain("tau must be at least 1".into()));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .buffer_capacity(1 << 20)
        .from_reader(reader);
    let data_error = |line: Option<u64>, message: String| Error::Data {
        path: source.map(Path::to_path_buf),
        line,
        message,
    };
    let headers = rdr
        .byte_headers()
        .map_err(|e| data_error(Some(1), e.to_string()))?
        .clone();
    let cols = locate_columns(&headers, source)?;
    let symbol: Arc<str> = Arc::from(symbol);

    let mut summary = IngestSummary {
        symbol: symbol.to_string(),
        source: source.map(Path::to_path_buf),
        days: Vec::new(),
        report: FilterReport::default(),
    };
    let mut day_records: Vec<TickRecord> = Vec::new();
    let mut current_day: Option<NaiveDate> = None;
    let mut parser = TimestampParser::default();
    let mut record = csv::ByteRecord::new();
    let flush = |records: &mut Vec<TickRecord>, summary: &mut IngestSummary| -> Result<()> {
        let (day, report) = process_day(std::mem::take(records), rules, tau)?;
        summary.report.merge(&report);
        if let Some(day) = day {
            summary.days.push(day);
        }
        Ok(())
    };

    loop {
        match rdr.read_byte_record(&mut record) {
            Ok(true) => {}
            Ok(false) => break,
            Err(e) => {
                let line = e.position().map(|p| p.line());
                return Err(data_error(line, e.to_string()));
            }
        }
        let line = record.position().map(|p| p.line());
        let field = |i: usize| record.get(i).ok_or_else(|| data_error(line, format!("missing field {}", i + 1)));
        let timestamp = parser
            .parse(field(cols.timestamp)?)
            .ok_or_else(|| {
                data_error(line, format!("bad timestamp {:?}", String::from_utf8_lossy(record.get(cols.timestamp).unwrap_or_default())))
            })?;
        let number = |i: usize, name: &str| -> Result<f64> {
            let raw = field(i)?;
            std::str::from_utf8(raw)
                .ok()
                .and_then(|s| s.trim().parse::<f64>().ok())
                .ok_or_else(|| data_error(line, format!("bad {name} {:?}", String::from_utf8_lossy(raw))))
        };
        let bid = number(cols.bid, "bid")?;
        let ask = number(cols.ask, "ask")?;
        let trade_price = number(cols.trade_price, "trade_price")?;

        let date = timestamp.date();
        if current_day != Some(date) {
            if let Some(prev) = current_day {
                if date < prev {
                    return Err(data_error(
                        line,
                        format!("timestamps go back from {prev} to {date}; input must be grouped by day in order"),
                    ));
                }
            }
            flush(&mut day_records, &mut summary)?;
            current_day = Some(date);
        }
        day_records.push(TickRecord {
            timestamp,
            bid,
            ask,
            trade_price,
            symbol: Arc::clone(&symbol),
        });
    }
    flush(&mut day_records, &mut summary)?;
    Ok(summary)
}

pub fn ingest_file(path: &Path, cfg: &PipelineConfig) -> Result<IngestSummary> {
    let rules = cfg.rules()?;
    let tau = cfg.tau()?;
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let symbol = cfg.symbol.clone().unwrap_or_else(|| symbol_from_path(path));
    ingest_reader(file, Some(path), &symbol, &rules, tau)
}

/// Ingests several files in parallel; results keep the input order.
pub fn ingest_files(paths: &[PathBuf], cfg: &PipelineConfig) -> Result<Vec<IngestSummary>> {
    paths.par_iter().map(|p| ingest_file(p, cfg)).collect()
}

/// Day-by-day reduction of in-memory records (already grouped by day).
pub fn ingest_records(records: Vec<TickRecord>, rules: &FilterRules, tau: usize) -> Result<IngestSummary> {
    let symbol = records.first().map(|r| r.symbol.to_string()).unwrap_or_default();
    let mut summary = IngestSummary {
        symbol,
        source: None,
        days: Vec::new(),
        report: FilterReport::default(),
    };
    let mut by_day: Vec<Vec<TickRecord>> = Vec::new();
    for rec in records {
        match by_day.last_mut() {
            Some(day) if day[0].timestamp.date() == rec.timestamp.date() => day.push(rec),
            _ => by_day.push(vec![rec]),
        }
    }
    for day in by_day {
        let (returns, report) = process_day(day, rules, tau)?;
        summary.report.merge(&report);
        summary.days.extend(returns);
    }
    Ok(summary)
}

/// Parses `YYYY-MM-DD[T ]HH:MM:SS[.fff…][Z]`, reusing the date between
/// consecutive lines of the same day.
#[derive(Default)]
struct TimestampParser {
    cached: Option<([u8; 10], NaiveDate)>,
}

impl TimestampParser {
    fn parse(&mut self, raw: &[u8]) -> Option<NaiveDateTime> {
        let raw = raw.trim_ascii();
        self.parse_fast(raw).or_else(|| {
            let s = std::str::from_utf8(raw).ok()?;
            let s = s.strip_suffix('Z').unwrap_or(s);
            NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S%.f")
                .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S%.f"))
                .ok()
        })
    }

    #[inline]
    fn parse_fast(&mut self, raw: &[u8]) -> Option<NaiveDateTime> {
        if raw.len() < 19 || raw[4] != b'-' || raw[7] != b'-' || !(raw[10] == b'T' || raw[10] == b' ') || raw[13] != b':' || raw[16] != b':' {
            return None;
        }
        let digits = |s: &[u8]| -> Option<u32> {
            s.iter().try_fold(0u32, |acc, &c| c.is_ascii_digit().then(|| acc * 10 + (c - b'0') as u32))
        };
        let date_bytes: [u8; 10] = raw[..10].try_into().ok()?;
        let date = match self.cached {
            Some((bytes, date)) if bytes == date_bytes => date,
            _ => {
                let date = NaiveDate::from_ymd_opt(digits(&raw[0..4])? as i32, digits(&raw[5..7])?, digits(&raw[8..10])?)?;
                self.cached = Some((date_bytes, date));
                date
            }
        };
        let (h, m, s) = (digits(&raw[11..13])?, digits(&raw[14..16])?, digits(&raw[17..19])?);
        let mut rest = &raw[19..];
        if rest.last() == Some(&b'Z') {
            rest = &rest[..rest.len() - 1];
        }
        let nanos = match rest {
            [] => 0,
            [b'.', frac @ ..] if !frac.is_empty() && frac.len() <= 9 => {
                digits(frac)? * 10u32.pow(9 - frac.len() as u32)
            }
            _ => return None,
        };
        let time = NaiveTime::from_hms_nano_opt(h, m, s, nanos)?;
        Some(NaiveDateTime::new(date, time))
    }
}

/// Outputs of a full run on one return series.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub blocked: BlockedReturns,
    pub near_extreme: EmpiricalNearExtreme,
    pub mixture: MixtureModel,
    pub ks: KsResult,
    pub qq: QqPlotData,
    pub histogram: Vec<Bin>,
    /// Theoretical mixture CDF on an even grid over the observed range.
    pub mixture_curve: Vec<(f64, f64)>,
}

/// Number of points in [`Analysis::mixture_curve`].
pub const CURVE_POINTS: usize = 501;

/// Blocks `returns`, pools distances, fits the mixture and tests the fit.
pub fn analyze(returns: &[f64], tau: usize, n: usize, convention: VarianceConvention, mode: Mode, histogram_bin: f64) -> Result<Analysis> {
    let blocked = block_returns(returns, n, tau, convention)?;
    let near_extreme = aggregate_near_extreme(&blocked, mode)?;
    let mixture = fit_mixture(&blocked)?;
    let evaluator = mixture.evaluator()?;
    let sorted = near_extreme.sorted();
    let ks = stats_tests::ks_from_cdf_values(&evaluator.cdf_many(&sorted))?;
    let qq = stats_tests::qq_data(|p| evaluator.quantile(p), &sorted, &stats_tests::default_qq_grid())?;
    let histogram = stats_tests::histogram(&near_extreme.distances, histogram_bin, 0.0)?;
    let top = sorted.last().copied().unwrap_or(0.0);
    let grid: Vec<f64> = (0..CURVE_POINTS)
        .map(|i| top * i as f64 / (CURVE_POINTS - 1) as f64)
        .collect();
    let values = evaluator.cdf_many(&grid);
    Ok(Analysis {
        blocked,
        near_extreme,
        mixture,
        ks,
        qq,
        histogram,
        mixture_curve: grid.into_iter().zip(values).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn tick(ts: &str, bid: f64, ask: f64) -> TickRecord {
        TickRecord {
            timestamp: NaiveDateTime::parse_from_str(ts, "%Y-%m-%d %H:%M:%S%.f").unwrap(),
            bid,
            ask,
            trade_price: 0.5 * (bid + ask),
            symbol: Arc::from("TEST"),
        }
    }

    #[test]
    fn session_filter() {
        let recs = vec![
            tick("2007-03-01 09:59:59.900", 10.0, 10.02),
            tick("2007-03-01 10:00:00.000", 10.0, 10.02),
            tick("2007-03-01 15:45:00.000", 10.0, 10.02),
            tick("2007-03-01 15:45:00.001", 10.0, 10.02),
        ];
        let (kept, report) = filter_ticks(recs, &FilterRules::default());
        assert_eq!(kept.len(), 2);
        assert_eq!(report.dropped_session, 2);
    }

    #[test]
    fn crossed_and_nonpositive() {
        let recs = vec![
            tick("2007-03-01 11:00:00", 10.01, 10.00),
            tick("2007-03-01 11:00:01", 0.0, 10.00),
            tick("2007-03-01 11:00:02", 10.00, 10.01),
        ];
        let (kept, report) = filter_ticks(recs, &FilterRules::default());
        assert_eq!(kept.len(), 1);
        assert_eq!(report.dropped_crossed, 1);
        assert_eq!(report.dropped_nonpositive, 1);
    }

    #[test]
    fn jump_filter() {
        let recs = vec![
            tick("2007-03-01 11:00:00", 100.0, 100.0),
            tick("2007-03-01 11:00:01", 115.0, 115.0),
            tick("2007-03-01 11:00:02", 101.0, 101.0),
            // new day: the reference restarts
            tick("2007-03-02 11:00:00", 130.0, 130.0),
        ];
        let (kept, report) = filter_ticks(recs.clone(), &FilterRules::default());
        assert_eq!(kept.iter().map(|r| r.mid()).collect::<Vec<_>>(), vec![100.0, 101.0, 130.0]);
        assert_eq!(report.dropped_jump, 1);
        let off = FilterRules {
            jump_threshold: None,
            ..FilterRules::default()
        };
        assert_eq!(filter_ticks(recs, &off).0.len(), 4);
    }

    #[test]
    fn unsorted_input_is_sorted() {
        let recs = vec![tick("2007-03-01 11:00:02", 10.0, 10.0), tick("2007-03-01 11:00:01", 10.5, 10.5)];
        let (kept, report) = filter_ticks(recs, &FilterRules::default());
        assert_eq!(kept[0].mid(), 10.5);
        assert_eq!(report.days_unsorted, 1);
    }

    #[test]
    fn empty_day_is_flagged() {
        let recs = vec![tick("2007-03-01 09:00:00", 10.0, 10.0), tick("2007-03-02 11:00:00", 10.0, 10.0)];
        let (kept, report) = filter_ticks(recs, &FilterRules::default());
        assert_eq!(kept.len(), 1);
        assert_eq!(report.days_skipped, vec!["2007-03-01".to_string()]);
    }

    #[test]
    fn event_series_examples() {
        let mids = [10.0, 10.0, 10.5, 10.5, 10.0];
        let recs: Vec<_> = mids.iter().map(|&m| tick("2007-03-01 11:00:00", m, m)).collect();
        assert_eq!(build_event_series(&recs).mids, vec![10.0, 10.5, 10.0]);
        assert_eq!(build_event_series(&recs[..1]).event_count(), 1);
        let quotes = vec![tick("2007-03-01 11:00:00", 10.0, 11.0), tick("2007-03-01 11:00:01", 10.0, 12.0)];
        assert_eq!(build_event_series(&quotes).mids, vec![10.5, 11.0]);
    }

    #[test]
    fn event_series_is_idempotent() {
        let mids = [10.0, 10.0, 10.01, 10.02, 10.02, 10.01, 10.01];
        let recs: Vec<_> = mids.iter().map(|&m| tick("2007-03-01 11:00:00", m - 0.005, m + 0.005)).collect();
        let first = build_event_series(&recs);
        let replay: Vec<_> = first.mids.iter().map(|&m| tick("2007-03-01 11:00:00", m, m)).collect();
        assert_eq!(build_event_series(&replay), first);
    }

    #[test]
    fn returns_examples() {
        let s = EventSeries { mids: vec![100.0, 101.0] };
        let r = compute_returns(&s, 1).unwrap();
        assert_eq!(r.len(), 1);
        assert_abs_diff_eq!(r[0], 1.01f64.ln(), epsilon = 1e-15);

        let s = EventSeries { mids: (0..10).map(|i| 100.0 + i as f64).collect() };
        let r = compute_returns(&s, 3).unwrap();
        let expected: Vec<f64> = [(0, 3), (3, 6), (6, 9)].iter().map(|&(a, b)| ((100.0 + b as f64) / (100.0 + a as f64)).ln()).collect();
        assert_eq!(r, expected);

        let flat = EventSeries { mids: vec![5.0; 6] };
        assert!(compute_returns(&flat, 2).unwrap().iter().all(|&x| x == 0.0));
        assert!(compute_returns(&s, 10).unwrap().is_empty());
        assert!(compute_returns(&s, 0).is_err());
    }

    #[test]
    fn blocking_examples() {
        let r: Vec<f64> = (1..=7).map(|i| i as f64 * 0.001).collect();
        let b = block_returns(&r, 3, 1, VarianceConvention::ZeroMean).unwrap();
        assert_eq!(b.h(), 2);
        assert_eq!(b.dropped_tail, 1);

        let b = block_returns(&[0.01, -0.01, 0.02], 3, 1, VarianceConvention::ZeroMean).unwrap();
        assert_abs_diff_eq!(b.blocks[0].sigma.powi(2), 2e-4, epsilon = 1e-18);
        assert_abs_diff_eq!(b.blocks[0].sigma, 0.014142, epsilon = 1e-6);
        assert_eq!(b.blocks[0].max, 0.02);
        assert_eq!(b.blocks[0].min, -0.01);

        let b = block_returns(&[0.003, 0.003, 0.003], 3, 1, VarianceConvention::ZeroMean).unwrap();
        assert_eq!(b.h(), 1);
        assert_abs_diff_eq!(b.blocks[0].sigma, 0.003, epsilon = 1e-18);
        assert_eq!(b.constant_blocks, vec![0]);

        let b = block_returns(&[0.0, 0.0, 0.0, 0.01, 0.02, 0.03], 3, 1, VarianceConvention::ZeroMean).unwrap();
        assert_eq!(b.degenerate_blocks, 1);
        assert_eq!(b.h(), 1);

        let b = block_returns(&[0.01], 3, 1, VarianceConvention::ZeroMean).unwrap();
        assert_eq!(b.h(), 0);
        assert_eq!(b.dropped_tail, 1);
        assert!(block_returns(&[0.01; 4], 1, 1, VarianceConvention::ZeroMean).is_err());
    }

    #[test]
    fn centered_variance() {
        let b = block_returns(&[1.0, 2.0, 3.0], 3, 1, VarianceConvention::Centered).unwrap();
        assert_abs_diff_eq!(b.blocks[0].sigma, 1.0, epsilon = 1e-15);
        let b = block_returns(&[0.003; 3], 3, 1, VarianceConvention::Centered).unwrap();
        assert_eq!(b.degenerate_blocks, 1);
    }

    #[test]
    fn aggregation_examples() {
        let b = BlockedReturns {
            tau: 1,
            n: 3,
            variance_convention: VarianceConvention::ZeroMean,
            blocks: vec![
                Block { returns: vec![1.0, 3.0, 4.0], sigma: 1.0, max: 4.0, min: 1.0 },
                Block { returns: vec![0.0, 2.0, 2.0], sigma: 1.0, max: 2.0, min: 0.0 },
            ],
            dropped_tail: 0,
            degenerate_blocks: 0,
            constant_blocks: vec![],
        };
        let e = aggregate_near_extreme(&b, Mode::FromMax).unwrap();
        assert_eq!(e.distances, vec![3.0, 1.0, 2.0, 0.0]);
        assert_eq!(e.len(), b.h() * (b.n - 1));
        let single = BlockedReturns { blocks: b.blocks[..1].to_vec(), ..b.clone() };
        assert_eq!(
            aggregate_near_extreme(&single, Mode::FromMin).unwrap().distances,
            crate::near_extreme::empirical_near_extreme(&[1.0, 3.0, 4.0], Mode::FromMin).unwrap()
        );
    }

    #[test]
    fn mixture_pass_through() {
        let r = [0.01, -0.01, 0.01, -0.01, 0.02, -0.02, 0.02, -0.02];
        let b = block_returns(&r, 4, 1, VarianceConvention::ZeroMean).unwrap();
        let m = fit_mixture(&b).unwrap();
        assert_eq!(m.n, 4);
        assert_abs_diff_eq!(m.sigmas[0], 0.01, epsilon = 1e-15);
        assert_abs_diff_eq!(m.sigmas[1], 0.02, epsilon = 1e-15);
    }

    #[test]
    fn mixture_is_permutation_invariant() {
        let m1 = MixtureModel::new(vec![0.01, 0.02, 0.03], 10).unwrap();
        let m2 = MixtureModel::new(vec![0.03, 0.01, 0.02], 10).unwrap();
        for &r in &[0.005, 0.02, 0.05] {
            let a = crate::near_extreme::mixture_cdf(&m1, r).unwrap();
            let b = crate::near_extreme::mixture_cdf(&m2, r).unwrap();
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn timestamp_formats() {
        let mut p = TimestampParser::default();
        let t = p.parse(b"2007-01-03T10:00:00.123").unwrap();
        assert_eq!(t.to_string(), "2007-01-03 10:00:00.123");
        assert_eq!(p.parse(b"2007-01-03 10:00:01").unwrap().to_string(), "2007-01-03 10:00:01");
        assert_eq!(p.parse(b"2007-01-04T10:00:00.5Z").unwrap().to_string(), "2007-01-04 10:00:00.500");
        assert!(p.parse(b"2007-13-03T10:00:00").is_none());
        assert!(p.parse(b"yesterday").is_none());
    }

    #[test]
    fn config_defaults_and_parsing() {
        let cfg = PipelineConfig::from_json("{}").unwrap();
        assert_eq!(cfg.session_start, "10:00:00");
        assert_eq!(cfg.jump_threshold, 0.10);
        assert_eq!(cfg.variance_convention, VarianceConvention::ZeroMean);
        let cfg = PipelineConfig::from_json(r#"{"tau": 5, "N": 25, "variance_convention": "centered"}"#).unwrap();
        assert_eq!(cfg.tau().unwrap(), 5);
        assert_eq!(cfg.n().unwrap(), 25);
        assert_eq!(cfg.variance_convention, VarianceConvention::Centered);
        assert!(PipelineConfig::from_json(r#"{"session_start": "16:00:00"}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn ingest_csv() {
        let csv = "timestamp,bid,ask,trade_price\n\
            2007-01-03T09:30:00.000,10.00,10.02,10.01\n\
            2007-01-03T10:00:00.000,10.00,10.02,10.01\n\
            2007-01-03T10:00:01.000,10.00,10.02,10.02\n\
            2007-01-03T10:00:02.000,10.01,10.02,10.02\n\
            2007-01-03T10:00:03.000,10.02,10.03,10.02\n\
            2007-01-04T10:00:00.000,11.00,11.02,11.01\n\
            2007-01-04T10:00:01.000,11.01,11.03,11.01\n";
        let s = ingest_reader(csv.as_bytes(), None, "T", &FilterRules::default(), 1).unwrap();
        assert_eq!(s.days.len(), 2);
        assert_eq!(s.days[0].events, 3);
        assert_eq!(s.days[0].returns.len(), 2);
        assert_eq!(s.days[1].returns.len(), 1);
        assert_eq!(s.report.dropped_session, 1);
        assert_eq!(s.returns().len(), 3);
    }

    #[test]
    fn ingest_reports_bad_lines() {
        let csv = "timestamp,bid,ask,trade_price\n2007-01-03T10:00:00.000,10.00,x,10.01\n";
        let err = ingest_reader(csv.as_bytes(), Some(Path::new("f.csv")), "T", &FilterRules::default(), 1).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("f.csv:2"), "{msg}");
        let csv = "time,bid,ask\n";
        assert!(ingest_reader(csv.as_bytes(), None, "T", &FilterRules::default(), 1).is_err());
        let csv = "timestamp,bid,ask,trade_price\n2007-01-04T10:00:00,1,1,1\n2007-01-03T10:00:00,1,1,1\n";
        assert!(ingest_reader(csv.as_bytes(), None, "T", &FilterRules::default(), 1).is_err());
    }

    #[test]
    fn symbol_from_file_name() {
        assert_eq!(symbol_from_path(Path::new("/data/MSFT_2007-01-03.csv")), "MSFT");
        assert_eq!(symbol_from_path(Path::new("INTC.csv")), "INTC");
    }
}
