use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::warn;
use nearex::market_pipeline::PipelineConfig;
use nearex::near_extreme::Mode;
use nearex::output::{self, Artifact};
use nearex::synthetic::{self, ClosureConfig, TickCsvStream, TickStreamConfig};
use nearex::{Error, ParentSpec};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(name = "nearex", version, about = "Extreme and near-extreme statistics of returns")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Maxima of iid samples against finite-sample and limiting laws.
    Evs {
        #[command(subcommand)]
        command: EvsCommand,
    },
    /// Exact near-extreme distributions.
    NearExtreme {
        #[command(subcommand)]
        command: NearExtremeCommand,
    },
    /// Tick data to K-S verdicts.
    Pipeline {
        #[command(subcommand)]
        command: PipelineCommand,
    },
    /// Monte Carlo checks of the whole procedure.
    Selftest {
        #[command(subcommand)]
        command: SelftestCommand,
    },
    /// Synthetic tick files.
    Synth {
        #[command(subcommand)]
        command: SynthCommand,
    },
    /// Summarises pipeline outputs under a directory as one JSON table.
    Report {
        #[arg(long)]
        dir: PathBuf,
        /// Also write the table to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum EvsCommand {
    Maxima {
        /// Parent distribution as JSON, inline or a file path,
        /// e.g. '{"family":"gaussian","sigma":1}'.
        #[arg(long)]
        dist: String,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum NearExtremeCommand {
    Exact {
        #[arg(long)]
        dist: String,
        #[arg(long)]
        n: usize,
        /// min:max:step
        #[arg(long)]
        grid: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum PipelineCommand {
    Run(PipelineArgs),
}

#[derive(Args)]
struct PipelineArgs {
    /// Tick CSV files, taken as consecutive days of one symbol.
    #[arg(long, num_args = 1.., required = true)]
    input: Vec<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `tau` from the config.
    #[arg(long)]
    tau: Option<usize>,
    /// Overrides `N` from the config.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, value_parser = parse_mode)]
    mode: Mode,
    #[arg(long)]
    out: PathBuf,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum SelftestCommand {
    Closure {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        runs: usize,
        #[arg(long, default_value_t = 500)]
        h: usize,
        #[arg(long, default_value_t = 25)]
        n: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum SynthCommand {
    /// Random-walk quotes with a one- or two-tick spread.
    Ticks {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        days: usize,
        #[arg(long, default_value_t = 100_000)]
        records_per_day: usize,
    },
    /// One session of quotes whose event-time returns are model returns
    /// with block-constant σ.
    Model {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 500)]
        h: usize,
        #[arg(long, default_value_t = 25)]
        n: usize,
        #[arg(long, default_value_t = 0.005)]
        sigma_lo: f64,
        #[arg(long, default_value_t = 0.03)]
        sigma_hi: f64,
    },
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Parameter(_) | Error::Domain(_) | Error::Classification(_) | Error::Json(_) => EXIT_USAGE,
        Error::Data { .. } | Error::Io { .. } => EXIT_DATA,
        Error::Numerical { .. } => EXIT_NUMERICAL,
    }
}

fn load_dist(arg: &str) -> nearex::Result<ParentSpec> {
    if arg.trim_start().starts_with('{') {
        return ParentSpec::from_json(arg);
    }
    let path = Path::new(arg);
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.into(), source: e })?;
    ParentSpec::from_json(&text)
}

fn write_file(path: &Path, bytes: &[u8]) -> nearex::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::Io { path: parent.into(), source: e })?;
    }
    output::write_atomic(path, bytes)
}

fn print_bytes(bytes: &[u8]) {
    print!("{}", String::from_utf8_lossy(bytes));
}

fn pipeline(args: PipelineArgs) -> nearex::Result<()> {
    let mut cfg = match &args.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if args.tau.is_some() {
        cfg.tau = args.tau;
    }
    if args.n.is_some() {
        cfg.n = args.n;
    }
    let run = || -> nearex::Result<Vec<Artifact>> {
        let run = output::run_pipeline(&args.input, &cfg, args.mode)?;
        if run.analysis.blocked.h() == 0 {
            warn!("no complete block of {} returns", run.n);
        }
        eprintln!(
            "{} {} N={} tau={}: {} events, {} blocks, scaled K-S {:.4} ({})",
            run.symbol,
            run.mode.as_str(),
            run.n,
            run.tau,
            run.events,
            run.analysis.blocked.h(),
            run.analysis.ks.scaled,
            run.analysis.ks.verdict().as_str()
        );
        output::pipeline_artifacts(&run)
    };
    let artifacts = match args.workers {
        Some(0) => return Err(Error::Parameter("--workers must be at least 1".into())),
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| Error::Parameter(e.to_string()))?
            .install(run)?,
        None => run()?,
    };
    output::commit(&args.out, &artifacts)?;
    Ok(())
}

fn run(cli: Cli) -> nearex::Result<()> {
    match cli.command {
        Command::Evs { command: EvsCommand::Maxima { dist, n, samples, seed, out } } => {
            let spec = load_dist(&dist)?;
            let exp = synthetic::maxima_experiment(&spec, n, samples, seed)?;
            output::commit(&out, &output::maxima_artifacts(&exp)?)?;
        }
        Command::NearExtreme { command: NearExtremeCommand::Exact { dist, n, grid, out } } => {
            let spec = load_dist(&dist)?;
            let grid = output::parse_grid(&grid)?;
            write_file(&out, &output::exact_curve_csv(&spec, n, &grid)?)?;
        }
        Command::Pipeline { command: PipelineCommand::Run(args) } => pipeline(args)?,
        Command::Selftest { command: SelftestCommand::Closure { seed, runs, h, n, out } } => {
            let cfg = ClosureConfig { h, n, ..ClosureConfig::default() };
            let summary = synthetic::closure_experiment(&cfg, seed, runs)?;
            let passed = summary.runs.iter().filter(|r| r.pass).count();
            eprintln!(
                "closure: {passed}/{} runs pass both modes at 5% ({:.1}%; target 90%): {}",
                summary.runs.len(),
                100.0 * summary.pass_rate,
                if summary.pass_rate >= 0.9 { "PASS" } else { "FAIL" }
            );
            match out {
                Some(path) => write_file(&path, &output::json_bytes(&summary)?)?,
                None => print_bytes(&output::json_bytes(&summary)?),
            }
        }
        Command::Synth { command: SynthCommand::Ticks { out, seed, days, records_per_day } } => {
            let mut stream = TickCsvStream::new(TickStreamConfig {
                seed,
                days,
                records_per_day,
                ..TickStreamConfig::default()
            })?;
            let mut bytes = Vec::new();
            std::io::Read::read_to_end(&mut stream, &mut bytes).map_err(|e| Error::Io { path: out.clone(), source: e })?;
            write_file(&out, &bytes)?;
        }
        Command::Synth { command: SynthCommand::Model { out, seed, h, n, sigma_lo, sigma_hi } } => {
            let sigmas = synthetic::log_uniform_sigmas(h, sigma_lo, sigma_hi, seed)?;
            let returns = synthetic::model_series(&sigmas, n, seed)?;
            let date = chrono::NaiveDate::from_ymd_opt(2007, 1, 3).expect("valid date");
            let ticks = synthetic::ticks_from_returns(&returns, 100.0, date, "SYN")?;
            write_file(&out, &output::tick_csv(&ticks))?;
        }
        Command::Report { dir, out } => {
            let report = output::report(&dir)?;
            for w in &report.warnings {
                warn!("{w}");
            }
            for m in &report.missing {
                warn!("missing artifact: {m}");
            }
            match out {
                Some(path) => write_file(&path, &output::json_bytes(&report)?)?,
                None => print_bytes(&output::json_bytes(&report)?),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
