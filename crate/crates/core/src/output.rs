//! Artifact serialization and the pipeline/report drivers used by the CLI.
//!
//! CSV numbers carry 17 significant digits. JSON numbers use the shortest
//! representation that parses back to the same `f64`. Outputs are built in
//! memory first and only then written, each through a temporary file that is
//! renamed into place.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{ParentSpec, GENERATOR_NAME};
use crate::error::{Error, Result};
use crate::market_pipeline::{self, Analysis, FilterReport, IngestSummary, PipelineConfig};
use crate::near_extreme::{self, Mode};
use crate::stats_tests::{KsResult, Verdict};
use crate::synthetic::MaximaExperiment;

/// Parses `min:max:step` into `min, min + step, …` up to `max` inclusive.
pub fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 3 {
        return Err(Error::Parameter(format!("grid must be min:max:step, got {text:?}")));
    }
    let mut v = [0.0; 3];
    for (slot, part) in v.iter_mut().zip(&parts) {
        *slot = part
            .trim()
            .parse::<f64>()
            .map_err(|_| Error::Parameter(format!("bad grid number {part:?}")))?;
    }
    let [lo, hi, step] = v;
    if !(lo.is_finite() && hi.is_finite() && step.is_finite()) || step <= 0.0 || hi < lo {
        return Err(Error::Parameter(format!("grid needs finite min <= max and step > 0, got {text:?}")));
    }
    let span = (hi - lo) / step;
    if span > 1e8 {
        return Err(Error::Parameter(format!("grid {text:?} has too many points")));
    }
    let count = (span + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|i| (lo + i as f64 * step).min(hi)).collect())
}

/// 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// CSV text built column by column.
#[derive(Debug, Clone, Default)]
pub struct CsvText {
    text: String,
}

impl CsvText {
    pub fn with_header(columns: &[&str]) -> Self {
        let mut text = columns.join(",");
        text.push('\n');
        CsvText { text }
    }

    pub fn row(&mut self, values: &[f64]) {
        for (i, v) in values.iter().enumerate() {
            if i > 0 {
                self.text.push(',');
            }
            let _ = write!(self.text, "{v:.16e}");
        }
        self.text.push('\n');
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.text.into_bytes()
    }
}

pub fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Writes `bytes` to `path` via a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::Parameter(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

/// A named file that has been rendered but not yet written.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

impl Artifact {
    pub fn new(name: impl Into<String>, bytes: Vec<u8>) -> Self {
        Artifact { name: name.into(), bytes }
    }
}

/// Creates `dir` and writes every artifact atomically.
pub fn commit(dir: &Path, artifacts: &[Artifact]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    artifacts
        .iter()
        .map(|a| {
            let path = dir.join(&a.name);
            write_atomic(&path, &a.bytes)?;
            Ok(path)
        })
        .collect()
}

/// Density and CDF of the exact near-extreme law on `grid`.
pub fn exact_curve_csv(spec: &ParentSpec, n: usize, grid: &[f64]) -> Result<Vec<u8>> {
    spec.validate()?;
    let rows: Vec<[f64; 3]> = grid
        .par_iter()
        .map(|&r| Ok([r, near_extreme::exact_density(spec, n, r)?, near_extreme::exact_cdf(spec, n, r)?]))
        .collect::<Result<_>>()?;
    let mut csv = CsvText::with_header(&["r", "density", "cdf"]);
    for row in &rows {
        csv.row(row);
    }
    Ok(csv.into_bytes())
}

#[derive(Debug, Serialize)]
struct MaximaSummary<'a> {
    spec: &'a ParentSpec,
    n: usize,
    samples: usize,
    seed: u64,
    generator: &'a str,
    binning: &'a str,
    family: crate::evs::LimitFamily,
    weights: crate::evs::NormalizingWeights,
    ks_vs_finite_sample: KsReport,
    ks_vs_limit: KsReport,
}

/// K-S outcome with its verdict label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsReport {
    #[serde(flatten)]
    pub ks: KsResult,
    pub verdict: Verdict,
}

impl From<KsResult> for KsReport {
    fn from(ks: KsResult) -> Self {
        KsReport { ks, verdict: ks.verdict() }
    }
}

/// `maxima.csv`, `curves.csv` and `summary.json` of a maxima experiment.
pub fn maxima_artifacts(exp: &MaximaExperiment) -> Result<Vec<Artifact>> {
    let mut maxima = CsvText::with_header(&["maximum"]);
    for &m in &exp.maxima {
        maxima.row(&[m]);
    }
    let mut curves = CsvText::with_header(&["x", "empirical_density", "finite_sample_density", "limiting_density"]);
    for p in &exp.curve {
        curves.row(&[p.x, p.empirical_density, p.finite_sample_density, p.limiting_density]);
    }
    let summary = MaximaSummary {
        spec: &exp.spec,
        n: exp.n,
        samples: exp.samples,
        seed: exp.seed,
        generator: &exp.generator,
        binning: &exp.binning,
        family: exp.family,
        weights: exp.weights,
        ks_vs_finite_sample: exp.ks_vs_finite_sample()?.into(),
        ks_vs_limit: exp.ks_vs_limit()?.into(),
    };
    Ok(vec![
        Artifact::new("maxima.csv", maxima.into_bytes()),
        Artifact::new("curves.csv", curves.into_bytes()),
        Artifact::new("summary.json", json_bytes(&summary)?),
    ])
}

/// Inputs and outcome of `pipeline run` on one symbol.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub symbol: String,
    pub sources: Vec<PathBuf>,
    pub config: PipelineConfig,
    pub tau: usize,
    pub n: usize,
    pub mode: Mode,
    pub report: FilterReport,
    pub days: usize,
    pub events: usize,
    pub analysis: Analysis,
}

/// Ingests `inputs` in the given order as consecutive days of one symbol
/// and analyses the pooled returns.
pub fn run_pipeline(inputs: &[PathBuf], cfg: &PipelineConfig, mode: Mode) -> Result<PipelineRun> {
    if inputs.is_empty() {
        return Err(Error::Parameter("no input files".into()));
    }
    for path in inputs {
        if !path.is_file() {
            return Err(Error::Io {
                path: path.clone(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "input file not found"),
            });
        }
    }
    let tau = cfg.tau()?;
    let n = cfg.n()?;
    let summaries = market_pipeline::ingest_files(inputs, cfg)?;
    let symbol = cfg
        .symbol
        .clone()
        .unwrap_or_else(|| summaries[0].symbol.clone());
    let mut report = FilterReport::default();
    let mut returns = Vec::new();
    let mut days = 0;
    let mut events = 0;
    let mut last_date = None;
    for s in &summaries {
        report.merge(&s.report);
        for day in &s.days {
            if last_date.is_some_and(|d| day.date <= d) {
                return Err(Error::Data {
                    path: s.source.clone(),
                    line: None,
                    message: format!("day {} does not follow the previous input's days", day.date),
                });
            }
            last_date = Some(day.date);
        }
        days += s.days.len();
        events += s.events();
        returns.extend(s.returns());
    }
    let analysis = market_pipeline::analyze(&returns, tau, n, cfg.variance_convention, mode, cfg.histogram_bin)?;
    Ok(PipelineRun {
        symbol,
        sources: inputs.to_vec(),
        config: cfg.clone(),
        tau,
        n,
        mode,
        report,
        days,
        events,
        analysis,
    })
}

/// Runs the pipeline on in-memory summaries, for callers that generate data.
pub fn run_pipeline_on(summary: &IngestSummary, cfg: &PipelineConfig, mode: Mode) -> Result<PipelineRun> {
    let tau = cfg.tau()?;
    let n = cfg.n()?;
    let analysis = market_pipeline::analyze(&summary.returns(), tau, n, cfg.variance_convention, mode, cfg.histogram_bin)?;
    Ok(PipelineRun {
        symbol: cfg.symbol.clone().unwrap_or_else(|| summary.symbol.clone()),
        sources: summary.source.iter().cloned().collect(),
        config: cfg.clone(),
        tau,
        n,
        mode,
        report: summary.report.clone(),
        days: summary.days.len(),
        events: summary.events(),
        analysis,
    })
}

/// Contents of `ks.json`, also the row shape of [`report`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsArtifact {
    pub symbol: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub tau: usize,
    pub mode: Mode,
    pub d: f64,
    pub sample_size: usize,
    pub scaled: f64,
    pub reject_5pct: bool,
    pub reject_1pct: bool,
    pub verdict: Verdict,
}

#[derive(Debug, Serialize)]
struct BlockSummary {
    sigma: f64,
    max: f64,
    min: f64,
}

#[derive(Debug, Serialize)]
struct BlockedSummary<'a> {
    symbol: &'a str,
    tau: usize,
    #[serde(rename = "N")]
    n: usize,
    variance_convention: market_pipeline::VarianceConvention,
    h: usize,
    dropped_tail: usize,
    degenerate_blocks: usize,
    constant_blocks: &'a [usize],
    blocks: Vec<BlockSummary>,
}

#[derive(Debug, Serialize)]
struct NearExtremeSummary<'a> {
    symbol: &'a str,
    mode: Mode,
    block_count: usize,
    per_block_size: usize,
    sample_size: usize,
    distances_file: &'a str,
}

#[derive(Debug, Serialize)]
struct RunMetadata<'a> {
    symbol: &'a str,
    sources: Vec<String>,
    config: &'a PipelineConfig,
    tau: usize,
    #[serde(rename = "N")]
    n: usize,
    mode: Mode,
    days: usize,
    events: usize,
    returns: usize,
    filter: &'a FilterReport,
    generator: &'a str,
    crate_version: &'a str,
}

/// Every output file of a pipeline run, in a fixed order.
pub fn pipeline_artifacts(run: &PipelineRun) -> Result<Vec<Artifact>> {
    let a = &run.analysis;
    let blocked = BlockedSummary {
        symbol: &run.symbol,
        tau: a.blocked.tau,
        n: a.blocked.n,
        variance_convention: a.blocked.variance_convention,
        h: a.blocked.h(),
        dropped_tail: a.blocked.dropped_tail,
        degenerate_blocks: a.blocked.degenerate_blocks,
        constant_blocks: &a.blocked.constant_blocks,
        blocks: a
            .blocked
            .blocks
            .iter()
            .map(|b| BlockSummary { sigma: b.sigma, max: b.max, min: b.min })
            .collect(),
    };
    let mut returns_csv = CsvText::with_header(&["block", "return"]);
    for (j, b) in a.blocked.blocks.iter().enumerate() {
        for &r in &b.returns {
            returns_csv.row(&[j as f64, r]);
        }
    }
    let mut distances = CsvText::with_header(&["distance"]);
    for &d in &a.near_extreme.distances {
        distances.row(&[d]);
    }
    let near = NearExtremeSummary {
        symbol: &run.symbol,
        mode: run.mode,
        block_count: a.near_extreme.block_count,
        per_block_size: a.near_extreme.per_block_size,
        sample_size: a.near_extreme.len(),
        distances_file: "distances.csv",
    };
    let mut curve = CsvText::with_header(&["r", "cdf"]);
    for &(r, p) in &a.mixture_curve {
        curve.row(&[r, p]);
    }
    let ks = KsArtifact {
        symbol: run.symbol.clone(),
        n: run.n,
        tau: run.tau,
        mode: run.mode,
        d: a.ks.d,
        sample_size: a.ks.sample_size,
        scaled: a.ks.scaled,
        reject_5pct: a.ks.reject_5pct,
        reject_1pct: a.ks.reject_1pct,
        verdict: a.ks.verdict(),
    };
    let mut qq = CsvText::with_header(&["p", "theoretical", "empirical"]);
    for i in 0..a.qq.probabilities.len() {
        qq.row(&[a.qq.probabilities[i], a.qq.theoretical_q[i], a.qq.empirical_q[i]]);
    }
    let mut hist = CsvText::with_header(&["center", "count", "density"]);
    for b in &a.histogram {
        hist.row(&[b.center, b.count as f64, b.density]);
    }
    let meta = RunMetadata {
        symbol: &run.symbol,
        sources: run.sources.iter().map(|p| p.display().to_string()).collect(),
        config: &run.config,
        tau: run.tau,
        n: run.n,
        mode: run.mode,
        days: run.days,
        events: run.events,
        returns: a.blocked.h() * a.blocked.n + a.blocked.dropped_tail,
        filter: &run.report,
        generator: GENERATOR_NAME,
        crate_version: env!("CARGO_PKG_VERSION"),
    };
    Ok(vec![
        Artifact::new("blocked_returns.json", json_bytes(&blocked)?),
        Artifact::new("blocked_returns.csv", returns_csv.into_bytes()),
        Artifact::new("near_extreme.json", json_bytes(&near)?),
        Artifact::new("distances.csv", distances.into_bytes()),
        Artifact::new("mixture_cdf.csv", curve.into_bytes()),
        Artifact::new("ks.json", json_bytes(&ks)?),
        Artifact::new("qq.json", json_bytes(&a.qq)?),
        Artifact::new("qq.csv", qq.into_bytes()),
        Artifact::new("histogram.csv", hist.into_bytes()),
        Artifact::new("metadata.json", json_bytes(&meta)?),
    ])
}

/// Tick CSV in the ingestion format, prices with 17 significant digits.
pub fn tick_csv(records: &[market_pipeline::TickRecord]) -> Vec<u8> {
    let mut text = String::with_capacity(64 * (records.len() + 1));
    text.push_str("timestamp,bid,ask,trade_price\n");
    for r in records {
        let _ = writeln!(
            text,
            "{},{:.16e},{:.16e},{:.16e}",
            r.timestamp.format("%Y-%m-%dT%H:%M:%S%.3f"),
            r.bid,
            r.ask,
            r.trade_price
        );
    }
    text.into_bytes()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub symbol: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub mode: Mode,
    pub sample_size: usize,
    pub scaled_ks: f64,
    pub verdict: Verdict,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    /// Directories holding pipeline outputs whose `ks.json` is absent or
    /// unreadable.
    pub missing: Vec<String>,
    pub warnings: Vec<String>,
}

const PIPELINE_FILES: [&str; 4] = ["near_extreme.json", "distances.csv", "blocked_returns.json", "qq.json"];

fn scan_dir(dir: &Path, report: &mut Report) {
    let ks = dir.join("ks.json");
    if ks.is_file() {
        match fs::read_to_string(&ks)
            .map_err(|e| e.to_string())
            .and_then(|t| serde_json::from_str::<KsArtifact>(&t).map_err(|e| e.to_string()))
        {
            Ok(k) => report.rows.push(ReportRow {
                symbol: k.symbol,
                n: k.n,
                mode: k.mode,
                sample_size: k.sample_size,
                scaled_ks: k.scaled,
                verdict: Verdict::from_scaled(k.scaled),
                path: dir.display().to_string(),
            }),
            Err(e) => report.missing.push(format!("{}: {e}", ks.display())),
        }
    } else if PIPELINE_FILES.iter().any(|f| dir.join(f).is_file()) {
        report.missing.push(ks.display().to_string());
    }
}

/// Collects `ks.json` from `dir` and its immediate subdirectories.
pub fn report(dir: &Path) -> Result<Report> {
    let mut out = Report::default();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    scan_dir(dir, &mut out);
    let mut subdirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    for sub in &subdirs {
        scan_dir(sub, &mut out);
    }
    out.rows.sort_by(|a, b| {
        (&a.symbol, a.n, a.mode.as_str(), &a.path).cmp(&(&b.symbol, b.n, b.mode.as_str(), &b.path))
    });
    if out.rows.is_empty() {
        out.warnings.push(format!("no pipeline outputs found under {}", dir.display()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing() {
        let g = parse_grid("0:1:0.1").unwrap();
        assert_eq!(g.len(), 11);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[10], 1.0);
        assert!((g[5] - 0.5).abs() < 1e-15);
        assert_eq!(parse_grid("2:2:1").unwrap(), vec![2.0]);
        for bad in ["0:1", "0:1:0", "1:0:0.1", "a:1:0.1", "0:1:-1", "0:inf:1"] {
            assert!(parse_grid(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn seventeen_digits_round_trip() {
        for x in [0.1, 1.0 / 3.0, 1e-300, 123456.789, -2.5e17, 0.0] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap(), x);
            let mantissa = s.trim_start_matches('-').split('e').next().unwrap();
            assert_eq!(mantissa.chars().filter(|c| c.is_ascii_digit()).count(), 17);
        }
    }

    #[test]
    fn atomic_write_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        write_atomic(&path, b"x\n").unwrap();
        write_atomic(&path, b"y\n").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"y\n");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
        assert!(write_atomic(&dir.path().join("missing/a.csv"), b"z").is_err());
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn exact_curve_uniform() {
        let spec = ParentSpec::uniform(0.0, 1.0).unwrap();
        let text = String::from_utf8(exact_curve_csv(&spec, 2, &parse_grid("0:1:0.1").unwrap()).unwrap()).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("r,density,cdf"));
        let row: Vec<f64> = lines.nth(5).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
        assert!((row[0] - 0.5).abs() < 1e-15);
        assert!((row[1] - 1.0).abs() < 1e-9);
        assert!((row[2] - 0.75).abs() < 1e-9);
    }

    #[test]
    fn tick_csv_round_trip() {
        let returns = crate::synthetic::model_series(&[0.01], 30, 1).unwrap();
        let date = chrono::NaiveDate::from_ymd_opt(2007, 5, 2).unwrap();
        let ticks = crate::synthetic::ticks_from_returns(&returns, 20.0, date, "M").unwrap();
        let bytes = tick_csv(&ticks);
        let rules = market_pipeline::FilterRules { jump_threshold: None, ..Default::default() };
        let s = market_pipeline::ingest_reader(&bytes[..], None, "M", &rules, 1).unwrap();
        for (a, b) in s.returns().iter().zip(&returns) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn empty_report_warns() {
        let dir = tempfile::tempdir().unwrap();
        let r = report(dir.path()).unwrap();
        assert!(r.rows.is_empty());
        assert_eq!(r.warnings.len(), 1);
        fs::write(dir.path().join("distances.csv"), "distance\n").unwrap();
        assert_eq!(report(dir.path()).unwrap().missing.len(), 1);
    }
}
