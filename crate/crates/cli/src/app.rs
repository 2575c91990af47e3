//! Argument handling, the `run` command and exit-code mapping.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nli_core::cfm::{ConstantCorrection, CorrectionFactors, FintMode, IdentityCorrection};
use nli_core::fit::FitSettings;
use nli_core::link::{Link, Severity};
use nli_core::oracle::OracleOptions;
use nli_core::pipeline::{benchmark, run_pipeline, Artifacts, OracleMode, PipelineConfig};
use serde::Deserialize;

use crate::config::{load_link, ConfigError, LoadError};
use crate::report::{write_csv, write_json, RunReport};

#[derive(Debug, Parser)]
#[command(
    name = "nli-cfm",
    version,
    about = "Closed-form NLI estimation for links with inter-channel Raman scattering"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate G_NLI for every CUT of a link document.
    Run(RunArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Stage {
    /// Time every stage.
    All,
    /// Time only the closed form; SRS solutions come from the cache or a single solve.
    CfmOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Kernel {
    Asinh,
    Exact,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Link document (TOML).
    pub input: PathBuf,
    /// Output file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Add the numerical reference on the fitted profiles.
    #[arg(long)]
    pub oracle: bool,
    /// Reference on the sampled SRS solution instead of the fits (small links only).
    #[arg(long)]
    pub deep_oracle: bool,
    /// Power-weighting exponent of the fit cost.
    #[arg(long)]
    pub mc: Option<f64>,
    /// Golden-section bracket for σ as multiples of the intrinsic α.
    #[arg(long, value_name = "LO,HI", value_parser = parse_pair)]
    pub sigma_range: Option<(f64, f64)>,
    /// Relative golden-section tolerance.
    #[arg(long)]
    pub gs_tol: Option<f64>,
    /// Correction factors: `identity` or a TOML file with rho_cut, rho_mch, rho_coh.
    #[arg(long, default_value = "identity")]
    pub rho: String,
    #[arg(long, value_enum, default_value_t = Kernel::Asinh)]
    pub kernel: Kernel,
    /// Worker threads; all available cores when absent.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Treat validation warnings as errors.
    #[arg(long)]
    pub strict: bool,
    /// Benchmark with N repetitions (N >= 3).
    #[arg(long, value_name = "N")]
    pub bench: Option<usize>,
    #[arg(long, value_enum, default_value_t = Stage::All)]
    pub stage: Stage,
    /// Reuse SRS solutions and fits from this file, writing it when stale or absent.
    #[arg(long)]
    pub cache: Option<PathBuf>,
    /// Shift every launch power by this many dB.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub power_offset_db: f64,
    /// Keep the SRS solution and fits of the unshifted launch powers.
    #[arg(long)]
    pub freeze_profiles: bool,
    /// Include stage wall times in the report.
    #[arg(long)]
    pub timing: bool,
}

fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected LO,HI")?;
    let p = |x: &str| x.trim().parse::<f64>().map_err(|e| format!("{x:?}: {e}"));
    Ok((p(a)?, p(b)?))
}

/// Failure of a command, classified by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Numeric(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Numeric(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl From<nli_core::Error> for CliError {
    fn from(e: nli_core::Error) -> Self {
        if e.is_numeric() {
            CliError::Numeric(e.to_string())
        } else {
            CliError::Validation(e.to_string())
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<LoadError> for CliError {
    fn from(e: LoadError) -> Self {
        match e {
            LoadError::Config(c) => c.into(),
            LoadError::Invalid(e) => e.into(),
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RhoDoc {
    #[serde(default = "unit")]
    rho_cut: f64,
    #[serde(default = "unit")]
    rho_mch: f64,
    #[serde(default)]
    rho_coh: f64,
}

fn unit() -> f64 {
    1.0
}

/// Resolves `--rho`.
pub fn load_rho(spec: &str) -> Result<Box<dyn CorrectionFactors>, CliError> {
    if spec == "identity" {
        return Ok(Box::new(IdentityCorrection));
    }
    let path = Path::new(spec);
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let doc: RhoDoc = toml::from_str(&text).map_err(|e| io_err(path, e))?;
    let rho = ConstantCorrection {
        rho_cut: doc.rho_cut,
        rho_mch: doc.rho_mch,
        rho_coh: doc.rho_coh,
    };
    rho.validate()?;
    Ok(Box::new(rho))
}

/// Builds the pipeline configuration from the flags.
pub fn pipeline_config(args: &RunArgs) -> Result<PipelineConfig, CliError> {
    let mut fit = FitSettings::default();
    if let Some(m) = args.mc {
        fit.m_c = m;
    }
    if let Some((lo, hi)) = args.sigma_range {
        fit.sigma_lo_factor = lo;
        fit.sigma_hi_factor = hi;
    }
    if let Some(t) = args.gs_tol {
        fit.gs_tol = t;
    }
    fit.validate()?;
    let mut config = PipelineConfig {
        fit,
        power_offset_db: args.power_offset_db,
        freeze_profiles: args.freeze_profiles,
        ..PipelineConfig::default()
    };
    config.cfm.fint = match args.kernel {
        Kernel::Asinh => FintMode::Asinh,
        Kernel::Exact => FintMode::Exact,
    };
    config.oracle = if args.deep_oracle {
        Some((OracleMode::Deep, OracleOptions::default()))
    } else if args.oracle {
        Some((OracleMode::Fitted, OracleOptions::default()))
    } else {
        None
    };
    if !config.power_offset_db.is_finite() {
        return Err(CliError::Validation("--power-offset-db must be finite".into()));
    }
    Ok(config)
}

fn read_cache(path: &Path) -> Result<Option<Artifacts>, CliError> {
    match File::open(path) {
        Ok(f) => serde_json::from_reader(BufReader::new(f))
            .map(Some)
            .map_err(|e| io_err(path, format!("unreadable cache: {e}"))),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(io_err(path, e)),
    }
}

fn write_cache(path: &Path, artifacts: &Artifacts) -> Result<(), CliError> {
    let f = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer(&mut w, artifacts).map_err(|e| io_err(path, e))?;
    w.flush().map_err(|e| io_err(path, e))
}

fn check_strict(link: &Link, strict: bool) -> Result<(), CliError> {
    if !strict {
        return Ok(());
    }
    let warnings: Vec<String> = link
        .validate()
        .into_iter()
        .filter(|d| d.severity == Severity::Warning)
        .map(|d| d.message)
        .collect();
    if warnings.is_empty() {
        Ok(())
    } else {
        Err(CliError::Validation(format!(
            "strict validation: {}",
            warnings.join("; ")
        )))
    }
}

/// Executes `run` and returns the report it wrote.
pub fn run(args: &RunArgs) -> Result<RunReport, CliError> {
    let link = load_link(&args.input)?;
    check_strict(&link, args.strict)?;
    let config = pipeline_config(args)?;
    let rho = load_rho(&args.rho)?;
    let cache = match &args.cache {
        Some(p) => read_cache(p)?,
        None => None,
    };

    let execute = || -> Result<RunReport, CliError> {
        let out = run_pipeline(&link, &config, rho.as_ref(), cache.clone())?;
        if let (Some(p), false) = (&args.cache, out.cached) {
            write_cache(p, &out.artifacts)?;
        }
        let mut report = RunReport::new(&out, args.timing);
        if let Some(reps) = args.bench {
            let cfm_only = args.stage == Stage::CfmOnly;
            let bench_config = PipelineConfig { oracle: None, ..config };
            let cache = cfm_only.then(|| out.artifacts.clone());
            report.bench = Some(benchmark(&link, &bench_config, rho.as_ref(), reps, cfm_only, cache)?);
        }
        Ok(report)
    };
    let report = match args.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Validation(format!("--threads: {e}")))?
            .install(execute)?,
        None => execute()?,
    };

    let sink: Box<dyn Write> = match &args.out {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| io_err(p, e))?)),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut sink = sink;
    let target = args.out.as_deref().unwrap_or(Path::new("<stdout>"));
    match args.format {
        Format::Json => write_json(&report, &mut sink).map_err(|e| io_err(target, e))?,
        Format::Csv => write_csv(&report, &mut sink).map_err(|e| io_err(target, e))?,
    }
    sink.flush().map_err(|e| io_err(target, e))?;
    for d in &report.diagnostics {
        if d.severity != Severity::Info {
            eprintln!("{d}");
        }
    }
    Ok(report)
}
