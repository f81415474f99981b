//! `ris-sdm`: run BER sweeps, print presets, validate configs and dump
//! shaped-error spectra.
//!
//! Configs are JSON. Values are resolved as: preset (default `desk`), then
//! the `--config` file deep-merged on top, then `--set key=value` overrides,
//! then the dedicated flags (`--seed`, `--trials`, ...).

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use ris_sdm::harness::{
    average_shaped_spectrum, metadata_json, run_experiment_with, summarize, write_csv, Execution,
    ExperimentConfig, SpectrumConfig,
};
use ris_sdm::presets;

const EXIT_USAGE: u8 = 2;
const EXIT_CONFIG: u8 = 3;
const EXIT_RUNTIME: u8 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "ris-sdm",
    version,
    about = "Sigma-delta phase-quantized precoding simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a BER sweep and write CSV + JSON metadata.
    Run(RunArgs),
    /// Print (or write) a preset's resolved config.
    Preset {
        name: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Resolve and validate a config without running it.
    Validate(ConfigArgs),
    /// Averaged shaped-error spectrum as `angle_deg,power` CSV.
    Spectrum(SpectrumArgs),
}

#[derive(Debug, Args)]
struct ConfigArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    /// Dotted-path override, e.g. `scenario.n_users=6` or `schemes.2.levels=8`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<u64>,
    /// SNR grid `lo:step:hi` in dB.
    #[arg(long, allow_hyphen_values = true)]
    snr: Option<String>,
    #[arg(long)]
    early_stop_errors: Option<u64>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// CSV path; metadata goes to the same path with a `.json` extension.
    #[arg(long, default_value = "results.csv")]
    out: PathBuf,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    sequential: bool,
    #[arg(long)]
    quiet: bool,
}

#[derive(Debug, Args)]
struct SpectrumArgs {
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Config(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Config(_) => EXIT_CONFIG,
            Failure::Runtime(_) => EXIT_RUNTIME,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Config(m) | Failure::Runtime(m) => m,
        }
    }
}

impl From<ris_sdm::Error> for Failure {
    fn from(e: ris_sdm::Error) -> Self {
        match e {
            ris_sdm::Error::Config(_) | ris_sdm::Error::Domain(_) => Failure::Config(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::Run(args) => run(args),
        Command::Preset { name, out } => {
            let cfg = preset(&name)?;
            let text = to_pretty(&cfg)?;
            match out {
                Some(path) => std::fs::write(&path, text + "\n")
                    .map_err(|e| Failure::Runtime(format!("{}: {e}", path.display()))),
                None => {
                    println!("{text}");
                    Ok(())
                }
            }
        }
        Command::Validate(args) => {
            let cfg = resolve(&args)?;
            println!(
                "ok: {} schemes, {} SNR points, {} trials",
                cfg.schemes.len(),
                cfg.snr_grid_db.len(),
                cfg.n_trials
            );
            Ok(())
        }
        Command::Spectrum(args) => spectrum(args),
    }
}

fn preset(name: &str) -> CliResult<ExperimentConfig> {
    presets::by_name(name).ok_or_else(|| {
        Failure::Usage(format!(
            "unknown preset '{name}' (expected one of {})",
            presets::NAMES.join(", ")
        ))
    })
}

fn to_pretty<T: serde::Serialize>(v: &T) -> CliResult<String> {
    serde_json::to_string_pretty(v).map_err(|e| Failure::Runtime(e.to_string()))
}

fn read_json(path: &Path) -> CliResult<Value> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

/// Recursively overlays `patch` onto `base`; objects merge, anything else replaces.
fn deep_merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => deep_merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Applies `a.b.2.c=value`. The value is parsed as JSON, else taken as a string.
fn apply_override(root: &mut Value, spec: &str) -> CliResult<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Failure::Usage(format!("override '{spec}' is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    let mut node = root;
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        node = match node {
            Value::Object(map) => {
                if !map.contains_key(*part) {
                    if !last {
                        return Err(Failure::Config(format!("unknown config key '{key}'")));
                    }
                    map.insert(part.to_string(), Value::Null);
                }
                map.get_mut(*part).expect("key present")
            }
            Value::Array(items) => {
                let idx: usize = part
                    .parse()
                    .map_err(|_| Failure::Config(format!("'{part}' in '{key}' is not an index")))?;
                let len = items.len();
                items.get_mut(idx).ok_or_else(|| {
                    Failure::Config(format!("index {idx} in '{key}' out of range ({len} items)"))
                })?
            }
            _ => {
                return Err(Failure::Config(format!(
                    "'{key}' does not name a config field"
                )))
            }
        };
    }
    *node = value;
    Ok(())
}

fn parse_snr(spec: &str) -> CliResult<Vec<f64>> {
    let parts: Vec<f64> = spec
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Failure::Usage(format!("--snr expects lo:step:hi, got '{spec}'")))?;
    match parts.as_slice() {
        [lo, step, hi] => {
            presets::snr_range(*lo, *step, *hi).map_err(|e| Failure::Usage(e.to_string()))
        }
        _ => Err(Failure::Usage(format!(
            "--snr expects lo:step:hi, got '{spec}'"
        ))),
    }
}

fn base_value<T: serde::Serialize>(
    base: &T,
    config: Option<&Path>,
    overrides: &[String],
) -> CliResult<Value> {
    let mut value = serde_json::to_value(base).map_err(|e| Failure::Runtime(e.to_string()))?;
    if let Some(path) = config {
        deep_merge(&mut value, read_json(path)?);
    }
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    Ok(value)
}

fn resolve(args: &ConfigArgs) -> CliResult<ExperimentConfig> {
    let base = preset(args.preset.as_deref().unwrap_or("desk"))?;
    let value = base_value(&base, args.config.as_deref(), &args.overrides)?;
    let mut cfg: ExperimentConfig =
        serde_json::from_value(value).map_err(|e| Failure::Config(format!("config: {e}")))?;
    if let Some(seed) = args.seed {
        cfg.master_seed = seed;
    }
    if let Some(t) = args.trials {
        cfg.n_trials = t;
    }
    if let Some(snr) = &args.snr {
        cfg.snr_grid_db = parse_snr(snr)?;
    }
    if let Some(n) = args.early_stop_errors {
        cfg.early_stop_errors = Some(n);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execution(threads: Option<usize>, sequential: bool) -> CliResult<Execution> {
    if threads == Some(0) {
        return Err(Failure::Usage("--threads must be at least 1".into()));
    }
    Ok(if sequential {
        Execution::Sequential
    } else {
        Execution::Parallel { threads }
    })
}

fn print_constants(cfg: &ExperimentConfig) {
    let s = &cfg.scenario;
    eprintln!(
        "scenario: N={} K={} d/lambda={} theta_in={} deg, users in [{}, {}] deg (min sep {} deg), theta*={} deg",
        s.n_elements,
        s.n_users,
        s.spacing_over_wavelength,
        s.arrival_angle_deg,
        s.user_sector_deg[0],
        s.user_sector_deg[1],
        s.min_separation_deg,
        cfg.sector_center()
    );
    eprintln!(
        "gains: r0={} r1~U[{}, {}]; T={} trials={} {}-QAM seed={} sigma_q^2={}",
        s.gain_r0,
        s.gain_r1_range[0],
        s.gain_r1_range[1],
        cfg.block_len,
        cfg.n_trials,
        cfg.constellation_order,
        cfg.master_seed,
        cfg.noise_model.sigma_q_sq
    );
    let labels: Vec<String> = cfg.schemes.iter().map(|s| s.label()).collect();
    eprintln!("schemes: {}", labels.join(", "));
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn io_err(path: &Path) -> impl Fn(io::Error) -> Failure + '_ {
    move |e| Failure::Runtime(format!("{}: {e}", path.display()))
}

fn run(args: RunArgs) -> CliResult<()> {
    let cfg = resolve(&args.config)?;
    let exec = execution(args.threads, args.sequential)?;
    if !args.quiet {
        print_constants(&cfg);
    }
    let curves = run_experiment_with(&cfg, exec)?;

    let mut csv = create(&args.out)?;
    write_csv(&curves, &cfg, &mut csv).map_err(io_err(&args.out))?;
    csv.flush().map_err(io_err(&args.out))?;
    let meta_path = args.out.with_extension("json");
    std::fs::write(&meta_path, to_pretty(&metadata_json(&cfg))? + "\n")
        .map_err(io_err(&meta_path))?;

    if !args.quiet {
        print!("{}", summarize(&curves));
        eprintln!("wrote {} and {}", args.out.display(), meta_path.display());
    }
    Ok(())
}

fn spectrum(args: SpectrumArgs) -> CliResult<()> {
    let scenario = preset(args.preset.as_deref().unwrap_or("fig4"))?.scenario;
    let value = base_value(
        &SpectrumConfig::new(scenario),
        args.config.as_deref(),
        &args.overrides,
    )?;
    let mut cfg: SpectrumConfig =
        serde_json::from_value(value).map_err(|e| Failure::Config(format!("config: {e}")))?;
    if let Some(seed) = args.seed {
        cfg.master_seed = seed;
    }
    cfg.validate()?;
    let power = average_shaped_spectrum(&cfg, execution(args.threads, false)?)?;

    let mut out: Box<dyn Write> = match &args.out {
        Some(p) => Box::new(create(p)?),
        None => Box::new(io::stdout().lock()),
    };
    let write = |out: &mut Box<dyn Write>| -> io::Result<()> {
        writeln!(out, "angle_deg,power")?;
        for (a, p) in cfg.angle_grid_deg.iter().zip(&power) {
            writeln!(out, "{a},{p}")?;
        }
        out.flush()
    };
    write(&mut out).map_err(|e| Failure::Runtime(e.to_string()))
}
