// SPDX-License-Identifier: Apache-2.0

//! Command-line front end: `analyze`, `infer`, `reconstruct`, `verify` and
//! `compare`, each reading and writing file artifacts.

use std::error::Error as StdError;
use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::config::{format_duration_ns, parse_duration_ns, KeyValues};
use crate::distribution::{build_pdf, UtmostMode, DEFAULT_QUANTUM_NS};
use crate::grouping::{classify, DEFAULT_MIN_SAMPLES};
use crate::inference::{decompose, infer, DiffMode, InferenceConfig, LatencyModel};
use crate::ingest::{parse, write_canonical, FormatSpec};
use crate::postprocess::restore_async;
use crate::replay::{
    capture_trace, replay, Clock, DeviceBackend, ServiceModel, VirtualClock, WallClock,
};
use crate::trace::{inter_arrival_times, Decomposition, SourceFormat, Trace};
use crate::verify::{
    accelerate, fixed_threshold_decomposition, inject, plan_injection, revision_decomposition,
    score, InjectionConfig, DEFAULT_ACCELERATION_FACTOR, DEFAULT_FIXED_THRESHOLD_NS,
    DEFAULT_IDLE_MAX_NS, DEFAULT_IDLE_MIN_NS, DEFAULT_INJECT_FRACTION,
};

pub const VERSION: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    "\nformats: canonical-csv 1, latency-model 1, group-summary 1, cdf 1, verification-report 1, compare 1"
);

pub const SUMMARY_HEADER: &str = "key,count,min_intt_ns,median_intt_ns,max_intt_ns";
pub const CDF_HEADER: &str = "t_intt_ns,cumulative";
pub const COMPARE_HEADER: &str = "index,old_intt_ns,new_intt_ns,diff_ns";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        source: Box<dyn StdError + Send + Sync>,
    },
    #[error("{0}")]
    Usage(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
}

fn at<E: StdError + Send + Sync + 'static>(stage: &'static str) -> impl FnOnce(E) -> CliError {
    move |e| CliError::Stage {
        stage,
        source: Box::new(e),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Duration(pub u64);

impl FromStr for Duration {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_duration_ns(s)
            .map(Duration)
            .map_err(|e| e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "trace-revive", version = VERSION, about = "Infer idle time in legacy block I/O traces and replay them on new storage")]
pub struct Cli {
    /// Flat `key = value` file supplying defaults for tunables.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Group requests and summarize their inter-arrival times.
    Analyze(AnalyzeArgs),
    /// Fit a latency model and write it as a model file.
    Infer(InferArgs),
    /// Replay a trace with inferred idle times and capture the new trace.
    Reconstruct(ReconstructArgs),
    /// Inject known idles, infer them back and report detection metrics.
    Verify(VerifyArgs),
    /// Per-record inter-arrival difference between two aligned traces.
    Compare(CompareArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Msrc,
    Fiu,
    Canonical,
}

impl From<FormatArg> for SourceFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Msrc => SourceFormat::MsrcCsv,
            FormatArg::Fiu => SourceFormat::FiuText,
            FormatArg::Canonical => SourceFormat::CanonicalCsv,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    /// Input trace.
    pub trace: PathBuf,
    /// Input format [default: canonical].
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    /// Keep only this MSRC disk number.
    #[arg(long)]
    pub disk: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum UtmostArg {
    Mass,
    Distance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DiffArg {
    Signed,
    Absolute,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    /// PDF quantization step [default: 1us].
    #[arg(long)]
    pub quantum: Option<Duration>,
    /// Minimum samples for a group to be ranked [default: 30].
    #[arg(long)]
    pub min_samples: Option<usize>,
    /// Utmost-outlier rule [default: mass].
    #[arg(long, value_enum)]
    pub utmost: Option<UtmostArg>,
    /// Sign handling of the CDF gap [default: signed].
    #[arg(long, value_enum)]
    pub diff: Option<DiffArg>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    /// Group summary CSV [default: stdout].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory for per-group `<key>.cdf.csv` files.
    #[arg(long)]
    pub emit_cdf: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    /// Model file [default: stdout].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendArg {
    Sim,
    File,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ClockArg {
    Wall,
    Virtual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    /// Inferred idle times.
    Infer,
    /// No idle: every gap is latency.
    Revision,
    /// Idle is whatever exceeds `--threshold`.
    FixedTh,
    /// Divide every gap by `--factor`; no replay.
    Acceleration,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    /// Latency model of the source system [default: inferred from the trace].
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "sim")]
    pub backend: BackendArg,
    /// Service model of the simulated target (model-file keys plus optional `jitter_sigma_ns`).
    #[arg(long)]
    pub sim_model: Option<PathBuf>,
    /// File or device for `--backend file`. Its contents are overwritten by write requests.
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// Seed of the simulated device's jitter [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Clock for replay [default: virtual for sim, wall for file].
    #[arg(long, value_enum)]
    pub clock: Option<ClockArg>,
    #[arg(long, value_enum, default_value = "infer")]
    pub mode: ModeArg,
    /// Threshold for `--mode fixed-th` [default: 10ms].
    #[arg(long)]
    pub threshold: Option<Duration>,
    /// Factor for `--mode acceleration` [default: 100].
    #[arg(long)]
    pub factor: Option<f64>,
    /// Skip async-timing restoration.
    #[arg(long)]
    pub no_postprocess: bool,
    /// Output canonical CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    /// Fraction of records that get an injected idle [default: 0.1].
    #[arg(long)]
    pub inject_frac: Option<f64>,
    /// [default: 100us]
    #[arg(long)]
    pub idle_min: Option<Duration>,
    /// [default: 100ms]
    #[arg(long)]
    pub idle_max: Option<Duration>,
    /// Do not inject after records whose gap already exceeds this.
    #[arg(long)]
    pub exclude_gap_above: Option<Duration>,
    /// Recovered idle must exceed this to count as positive [default: 0].
    #[arg(long)]
    pub tp_threshold: Option<Duration>,
    /// [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Infer device time even when the trace records responses.
    #[arg(long)]
    pub ignore_response: bool,
    /// Report CSV [default: stdout].
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Reference canonical CSV.
    pub old: PathBuf,
    /// Reconstructed canonical CSV.
    pub new: PathBuf,
    /// Per-record CSV [default: none, summary only].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Resolves a value from the flag, then the config file, then the default.
struct Settings {
    file: KeyValues,
}

impl Settings {
    fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let file = match path {
            Some(p) => KeyValues::load(p).map_err(at("config"))?,
            None => KeyValues::default(),
        };
        Ok(Settings { file })
    }

    fn value<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, CliError> {
        if let Some(v) = flag {
            return Ok(v);
        }
        Ok(self
            .file
            .parse_value(key)
            .map_err(at("config"))?
            .unwrap_or(default))
    }

    fn duration(&self, flag: Option<Duration>, key: &str, default: u64) -> Result<u64, CliError> {
        if let Some(Duration(v)) = flag {
            return Ok(v);
        }
        Ok(self
            .file
            .duration(key)
            .map_err(at("config"))?
            .unwrap_or(default))
    }

    fn input(&self, input: &InputArgs) -> Result<FormatSpec, CliError> {
        let format = match input.format {
            Some(f) => f.into(),
            None => match self.file.get("format") {
                Some(v) => v.parse::<FormatSpec>().map_err(at("config"))?.format,
                None => SourceFormat::CanonicalCsv,
            },
        };
        let disk = match input.disk {
            Some(d) => Some(d),
            None => self.file.parse_value("disk").map_err(at("config"))?,
        };
        Ok(FormatSpec::new(format).with_disk(disk))
    }

    fn inference(&self, fit: &FitArgs) -> Result<InferenceConfig, CliError> {
        let utmost = match fit.utmost {
            Some(u) => u,
            None => match self.file.get("utmost") {
                Some(v) => UtmostArg::from_str(v, true).map_err(CliError::Usage)?,
                None => UtmostArg::Mass,
            },
        };
        let diff = match fit.diff {
            Some(d) => d,
            None => match self.file.get("diff") {
                Some(v) => DiffArg::from_str(v, true).map_err(CliError::Usage)?,
                None => DiffArg::Signed,
            },
        };
        Ok(InferenceConfig {
            quantum_ns: self.duration(fit.quantum, "quantum", DEFAULT_QUANTUM_NS)?,
            min_samples: self.value(fit.min_samples, "min_samples", DEFAULT_MIN_SAMPLES)?,
            utmost: match utmost {
                UtmostArg::Mass => UtmostMode::Mass,
                UtmostArg::Distance => UtmostMode::Distance,
            },
            diff: match diff {
                DiffArg::Signed => DiffMode::Signed,
                DiffArg::Absolute => DiffMode::Absolute,
            },
        })
    }
}

fn load_trace(settings: &Settings, input: &InputArgs) -> Result<Trace, CliError> {
    parse(&input.trace, settings.input(input)?).map_err(at("ingest"))
}

fn emit(out: Option<&Path>, text: &str, stdout: &mut dyn Write) -> Result<(), CliError> {
    match out {
        Some(p) => write_file(p, text),
        None => stdout
            .write_all(text.as_bytes())
            .map_err(|source| CliError::Io {
                path: PathBuf::from("<stdout>"),
                source,
            }),
    }
}

/// Run a parsed command line. Human-readable summaries go to `stdout`.
pub fn run(cli: Cli, stdout: &mut dyn Write) -> Result<(), CliError> {
    let settings = Settings::load(cli.config.as_deref())?;
    match cli.command {
        Command::Analyze(a) => analyze(&settings, a, stdout),
        Command::Infer(a) => infer_cmd(&settings, a, stdout),
        Command::Reconstruct(a) => reconstruct(&settings, a, stdout),
        Command::Verify(a) => verify_cmd(&settings, a, stdout),
        Command::Compare(a) => compare(a, stdout),
    }
}

fn median(sorted: &[u64]) -> u64 {
    sorted[(sorted.len() - 1) / 2]
}

fn analyze(settings: &Settings, a: AnalyzeArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let trace = load_trace(settings, &a.input)?;
    let cfg = settings.inference(&a.fit)?;
    let groups = classify(&trace).map_err(at("grouping"))?;
    let mut csv = format!("# trace-revive group-summary v1 (ns)\n{SUMMARY_HEADER}\n");
    for g in groups.iter().filter(|g| !g.intt_samples.is_empty()) {
        let mut s = g.intt_samples.clone();
        s.sort_unstable();
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            g.key,
            s.len(),
            s[0],
            median(&s),
            s[s.len() - 1]
        );
    }
    emit(a.out.as_deref(), &csv, stdout)?;

    if let Some(dir) = &a.emit_cdf {
        fs::create_dir_all(dir).map_err(|source| CliError::Io {
            path: dir.clone(),
            source,
        })?;
        for g in groups.iter().filter(|g| !g.intt_samples.is_empty()) {
            let cdf = build_pdf(&g.intt_samples, cfg.quantum_ns)
                .map_err(at("distribution"))?
                .to_cdf();
            let mut text = format!("{CDF_HEADER}\n");
            for (t, f) in cdf.support().iter().zip(cdf.cumulative()) {
                let _ = writeln!(text, "{t},{f}");
            }
            write_file(&dir.join(format!("{}.cdf.csv", g.key)), &text)?;
        }
    }
    Ok(())
}

fn infer_cmd(settings: &Settings, a: InferArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let trace = load_trace(settings, &a.input)?;
    let cfg = settings.inference(&a.fit)?;
    let model = infer(&trace, &cfg).map_err(at("inference"))?;
    emit(a.out.as_deref(), &model.to_file_string(), stdout)
}

/// Decomposition for the idle-inference mode: measured responses when the
/// trace has them for every record, else a model from file or inference.
fn inferred_decomposition(
    trace: &Trace,
    model_path: Option<&Path>,
    cfg: &InferenceConfig,
    use_response: bool,
) -> Result<Vec<Decomposition>, CliError> {
    let trace = if use_response {
        trace.clone()
    } else {
        trace.without_response()
    };
    let model = match model_path {
        Some(p) => Some(LatencyModel::load(p).map_err(at("model"))?),
        None if trace.has_full_response() => None,
        None => Some(infer(&trace, cfg).map_err(at("inference"))?),
    };
    decompose(&trace, model.as_ref()).map_err(at("inference"))
}

fn reconstruct(
    settings: &Settings,
    a: ReconstructArgs,
    stdout: &mut dyn Write,
) -> Result<(), CliError> {
    let trace = load_trace(settings, &a.input)?;
    if a.mode == ModeArg::Acceleration {
        let factor = settings.value(a.factor, "factor", DEFAULT_ACCELERATION_FACTOR)?;
        let out = accelerate(&trace, factor).map_err(at("baseline"))?;
        return write_canonical(&out.without_response(), &a.out).map_err(at("output"));
    }
    let cfg = settings.inference(&a.fit)?;
    let decomp = match a.mode {
        ModeArg::Infer => inferred_decomposition(&trace, a.model.as_deref(), &cfg, true)?,
        ModeArg::Revision => revision_decomposition(&trace),
        ModeArg::FixedTh => {
            let th = settings.duration(a.threshold, "threshold", DEFAULT_FIXED_THRESHOLD_NS)?;
            fixed_threshold_decomposition(&trace, th)
        }
        ModeArg::Acceleration => unreachable!(),
    };

    let mut backend = match a.backend {
        BackendArg::Sim => {
            let path = a
                .sim_model
                .as_deref()
                .ok_or_else(|| CliError::Usage("--backend sim requires --sim-model".into()))?;
            let model = ServiceModel::load(path).map_err(at("sim-model"))?;
            let seed = settings.value(a.seed, "seed", 0)?;
            DeviceBackend::simulated(model, seed).map_err(at("replay"))?
        }
        BackendArg::File => {
            let path = a
                .target
                .as_deref()
                .ok_or_else(|| CliError::Usage("--backend file requires --target".into()))?;
            DeviceBackend::real_file(path).map_err(at("replay"))?
        }
    };
    let clock_kind = a.clock.unwrap_or(match a.backend {
        BackendArg::Sim => ClockArg::Virtual,
        BackendArg::File => ClockArg::Wall,
    });
    if a.backend == BackendArg::File && clock_kind == ClockArg::Virtual {
        return Err(CliError::Usage("--backend file needs --clock wall".into()));
    }
    let mut wall = WallClock::new();
    let mut virt = VirtualClock::new();
    let clock: &mut dyn Clock = match clock_kind {
        ClockArg::Wall => &mut wall,
        ClockArg::Virtual => &mut virt,
    };
    let log = replay(&trace, &decomp, &mut backend, clock).map_err(at("replay"))?;
    let captured = capture_trace(&log, &trace).map_err(at("replay"))?;
    let out = if a.no_postprocess {
        captured
    } else {
        restore_async(&decomp, &captured).map_err(at("postprocess"))?
    };
    write_canonical(&out, &a.out).map_err(at("output"))?;
    let idle: u64 = decomp.iter().map(|d| d.t_idle_ns).sum();
    let asyncs = decomp.iter().filter(|d| d.is_async).count();
    let _ = writeln!(
        stdout,
        "{} records replayed, {} idle re-injected, {} async records{}",
        out.len(),
        format_duration_ns(idle),
        asyncs,
        if a.no_postprocess {
            " (not restored)"
        } else {
            ""
        }
    );
    Ok(())
}

fn verify_cmd(settings: &Settings, a: VerifyArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let trace = load_trace(settings, &a.input)?;
    let cfg = settings.inference(&a.fit)?;
    let exclude = match a.exclude_gap_above {
        Some(Duration(v)) => Some(v),
        None => settings
            .file
            .duration("exclude_gap_above")
            .map_err(at("config"))?,
    };
    let injection = InjectionConfig {
        fraction: settings.value(a.inject_frac, "inject_frac", DEFAULT_INJECT_FRACTION)?,
        idle_min_ns: settings.duration(a.idle_min, "idle_min", DEFAULT_IDLE_MIN_NS)?,
        idle_max_ns: settings.duration(a.idle_max, "idle_max", DEFAULT_IDLE_MAX_NS)?,
        seed: settings.value(a.seed, "seed", 0)?,
        exclude_gap_above_ns: exclude,
    };
    let threshold = settings.duration(a.tp_threshold, "tp_threshold", 0)?;
    let plan = plan_injection(&trace, &injection).map_err(at("verify"))?;
    let injected = inject(&trace, &plan).map_err(at("verify"))?;
    let decomp = inferred_decomposition(&injected, None, &cfg, !a.ignore_response)?;
    let report = score(&plan, &decomp, threshold).map_err(at("verify"))?;
    emit(a.report.as_deref(), &report.to_csv(), stdout)?;
    if a.report.is_some() {
        let _ = writeln!(
            stdout,
            "{} injected into {} records: detection_tp {:.4}, len_tp {:.4}, detection_fp {:.4}",
            plan.len(),
            trace.len(),
            report.overall.detection_tp,
            report.overall.len_tp,
            report.detection_fp
        );
    }
    Ok(())
}

fn compare(a: CompareArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let spec = FormatSpec::new(SourceFormat::CanonicalCsv);
    let old = parse(&a.old, spec).map_err(at("ingest"))?;
    let new = parse(&a.new, spec).map_err(at("ingest"))?;
    if old.len() != new.len() {
        return Err(CliError::Usage(format!(
            "traces are not aligned: {} vs {} records",
            old.len(),
            new.len()
        )));
    }
    let (og, ng) = if old.len() < 2 {
        (Vec::new(), Vec::new())
    } else {
        (
            inter_arrival_times(&old).map_err(at("compare"))?,
            inter_arrival_times(&new).map_err(at("compare"))?,
        )
    };
    let diffs: Vec<i128> = og
        .iter()
        .zip(&ng)
        .map(|(&o, &n)| n as i128 - o as i128)
        .collect();
    if let Some(out) = &a.out {
        let mut csv = format!("# trace-revive compare v1 (ns)\n{COMPARE_HEADER}\n");
        for (i, ((o, n), d)) in og.iter().zip(&ng).zip(&diffs).enumerate() {
            let _ = writeln!(csv, "{i},{o},{n},{d}");
        }
        write_file(out, &csv)?;
    }
    let count = diffs.len().max(1) as f64;
    let mean = diffs.iter().sum::<i128>() as f64 / count;
    let mean_abs = diffs.iter().map(|d| d.unsigned_abs()).sum::<u128>() as f64 / count;
    let max_abs = diffs.iter().map(|d| d.unsigned_abs()).max().unwrap_or(0);
    let _ = writeln!(
        stdout,
        "{} gaps: mean diff {mean:.1} ns, mean |diff| {mean_abs:.1} ns, max |diff| {max_abs} ns",
        diffs.len()
    );
    Ok(())
}
