//! Monte-Carlo BER engine.
//!
//! Each trial draws a fresh fading block (scene), one block of i.i.d.
//! symbols and one block of unit noise, then runs every configured scheme
//! at every SNR point on those same draws. Trials are independent and run
//! in parallel when the `parallel` feature is enabled; all randomness is
//! keyed by trial index, so results do not depend on the thread count.
//!
//! SNR is `10 log10(1 / σ_v²)`: unit-energy symbols, unit-modulus (or
//! peak-normalized) reflections.

use std::fmt;
use std::io::{self, Write};
use std::time::Instant;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::link::{
    count_bit_errors, detect, transmit_with_noise, unit_noise, Constellation, SymbolBlock,
};
use crate::precoder::{
    project_zf, sigma_delta_zf_precode_with, zf_precode_with, DitherOptions, NoiseModel,
    PrecodeBlock, SchemeId, SigmaDeltaOptions, SteeringInverse, DEFAULT_OVERLOAD_AMPLITUDE,
};
use crate::quantizer::PhaseAlphabet;
use crate::scene::{check_angle, draw_scene, ScenarioConfig, Scene};
use crate::seeds::{derive_seed, stream_rng, Stream};
use crate::sigma_delta::{modulate, shaped_error_spectrum, steer_phase_for, ModulatorConfig};

/// Exact header of the results CSV.
pub const CSV_HEADER: &str =
    "scheme,L,snr_db,bit_errors,total_bits,ber,trials,block_len,n_elements,n_users,seed";

/// Trials per scheduling chunk. Early stopping is checked between chunks.
pub const TRIAL_CHUNK: u64 = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeConfig {
    pub scheme: SchemeId,
    /// Phase levels `L`; `None` is continuous phase.
    #[serde(default)]
    pub levels: Option<u32>,
    /// Modulator amplitude for the overloaded variants (default √2).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overload_amplitude: Option<f64>,
}

impl SchemeConfig {
    pub fn new(scheme: SchemeId, levels: Option<u32>) -> Self {
        Self {
            scheme,
            levels,
            overload_amplitude: None,
        }
    }

    pub fn label(&self) -> String {
        match self.scheme {
            SchemeId::Zf | SchemeId::CeZf => self.scheme.to_string(),
            _ => format!(
                "{}@L={}",
                self.scheme,
                levels_field(self.scheme, self.levels)
            ),
        }
    }

    fn validate(&self) -> Result<()> {
        match self.scheme {
            SchemeId::Zf | SchemeId::CeZf => {
                if self.levels.is_some() {
                    return Err(Error::Config(format!(
                        "{} takes no phase levels",
                        self.scheme
                    )));
                }
            }
            SchemeId::ZfDce if self.levels.is_none() => {
                return Err(Error::Config(
                    "zf-dce needs a number of phase levels".into(),
                ));
            }
            _ => {}
        }
        if let Some(l) = self.levels {
            PhaseAlphabet::discrete(l).map_err(|e| Error::Config(e.to_string()))?;
        }
        match (self.overload_amplitude, self.scheme.is_overloaded()) {
            (Some(_), false) => Err(Error::Config(format!(
                "{} does not take an overload amplitude",
                self.scheme
            ))),
            (Some(a), true) if !(a > 0.0 && a.is_finite()) => {
                Err(Error::Config(format!("invalid overload amplitude {a}")))
            }
            _ => Ok(()),
        }
    }

    fn sigma_delta_options(&self, noise_model: NoiseModel, dither_seed: u64) -> SigmaDeltaOptions {
        SigmaDeltaOptions {
            overload_amplitude: self.scheme.is_overloaded().then(|| {
                self.overload_amplitude
                    .unwrap_or(DEFAULT_OVERLOAD_AMPLITUDE)
            }),
            dither: self.scheme.is_dithered().then(|| DitherOptions {
                seed: Some(dither_seed),
                ..Default::default()
            }),
            noise_model,
        }
    }
}

fn levels_field(scheme: SchemeId, levels: Option<u32>) -> String {
    match (scheme, levels) {
        (SchemeId::Zf, _) => "none".into(),
        (_, None) => "inf".into(),
        (_, Some(l)) => l.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    pub schemes: Vec<SchemeConfig>,
    pub snr_grid_db: Vec<f64>,
    pub n_trials: u64,
    pub block_len: usize,
    pub constellation_order: u32,
    pub master_seed: u64,
    /// Centre `θ*` of the noise-shaping notch; the user-sector midpoint when unset.
    #[serde(default)]
    pub sector_center_deg: Option<f64>,
    #[serde(default)]
    pub noise_model: NoiseModel,
    /// Stop accumulating a point once it has this many bit errors.
    #[serde(default)]
    pub early_stop_errors: Option<u64>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        if self.n_trials == 0 {
            return Err(Error::Config("n_trials must be at least 1".into()));
        }
        if self.block_len == 0 {
            return Err(Error::Config("block_len must be at least 1".into()));
        }
        if self.snr_grid_db.is_empty() {
            return Err(Error::Config("SNR grid is empty".into()));
        }
        if self.snr_grid_db.iter().any(|s| !s.is_finite())
            || self.snr_grid_db.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(Error::Config(
                "SNR grid must be finite and strictly increasing".into(),
            ));
        }
        if self.schemes.is_empty() {
            return Err(Error::Config("no schemes configured".into()));
        }
        for s in &self.schemes {
            s.validate()?;
        }
        Constellation::qam(self.constellation_order)?;
        check_angle(self.sector_center(), "sector centre")
            .map_err(|e| Error::Config(e.to_string()))?;
        if !(self.noise_model.sigma_q_sq >= 0.0 && self.noise_model.sigma_q_sq.is_finite()) {
            return Err(Error::Config(
                "sigma_q_sq must be a finite non-negative number".into(),
            ));
        }
        if self.early_stop_errors == Some(0) {
            return Err(Error::Config("early_stop_errors must be positive".into()));
        }
        Ok(())
    }

    pub fn sector_center(&self) -> f64 {
        self.sector_center_deg
            .unwrap_or_else(|| self.scenario.sector_center_deg())
    }

    pub fn bits_per_trial(&self) -> u64 {
        let bps = self.constellation_order.trailing_zeros() as u64;
        self.scenario.n_users as u64 * self.block_len as u64 * bps
    }
}

/// `σ_v` for an SNR in dB.
pub fn noise_std_for_snr(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 20.0)
}

/// BER against SNR for one scheme.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BerCurve {
    pub scheme: SchemeId,
    pub levels: Option<u32>,
    pub label: String,
    pub snr_db: Vec<f64>,
    pub ber: Vec<f64>,
    pub bit_errors: Vec<u64>,
    pub total_bits: Vec<u64>,
    pub trials: Vec<u64>,
    /// Summed worker time spent on each point, in seconds.
    pub elapsed_secs: Vec<f64>,
}

impl BerCurve {
    pub fn levels_field(&self) -> String {
        levels_field(self.scheme, self.levels)
    }

    pub fn point(&self, snr_db: f64) -> Option<usize> {
        self.snr_db.iter().position(|&s| s == snr_db)
    }
}

/// How trials are scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Rayon work-stealing over trials; `threads` sizes a dedicated pool.
    /// Falls back to sequential when built without the `parallel` feature.
    Parallel {
        threads: Option<usize>,
    },
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel { threads: None }
        } else {
            Execution::Sequential
        }
    }
}

#[derive(Debug, Clone)]
struct TrialTally {
    errors: Vec<u64>,
    nanos: Vec<u64>,
}

struct TrialRunner<'a> {
    config: &'a ExperimentConfig,
    constellation: Constellation,
    alphabets: Vec<PhaseAlphabet>,
    sigmas: Vec<f64>,
}

impl<'a> TrialRunner<'a> {
    fn new(config: &'a ExperimentConfig) -> Result<Self> {
        let alphabets = config
            .schemes
            .iter()
            .map(|s| PhaseAlphabet::from_levels(s.levels))
            .collect::<Result<_>>()?;
        Ok(Self {
            config,
            constellation: Constellation::qam(config.constellation_order)?,
            alphabets,
            sigmas: config
                .snr_grid_db
                .iter()
                .map(|&s| noise_std_for_snr(s))
                .collect(),
        })
    }

    fn n_points(&self) -> usize {
        self.sigmas.len()
    }

    fn run(&self, trial: u64, active: &[bool]) -> Result<TrialTally> {
        let cfg = self.config;
        let seed = cfg.master_seed;
        let scene = draw_scene(&cfg.scenario, &mut stream_rng(seed, trial, Stream::Scene))?;
        let block = SymbolBlock::random(
            &self.constellation,
            scene.n_users(),
            cfg.block_len,
            &mut stream_rng(seed, trial, Stream::Symbols),
        );
        let noise = unit_noise(
            scene.n_users(),
            cfg.block_len,
            &mut stream_rng(seed, trial, Stream::Noise),
        );
        let dither_seed = derive_seed(seed, trial, Stream::Dither);
        let inv = SteeringInverse::new(&scene)?;
        let steer = steer_phase_for(
            cfg.sector_center(),
            scene.arrival_angle_deg(),
            scene.geometry(),
        )?;

        let np = self.n_points();
        let mut tally = TrialTally {
            errors: vec![0; cfg.schemes.len() * np],
            nanos: vec![0; cfg.schemes.len() * np],
        };
        let mut zf: Option<PrecodeBlock> = None;

        for (si, scheme) in cfg.schemes.iter().enumerate() {
            let points = &active[si * np..(si + 1) * np];
            if !points.iter().any(|&a| a) {
                continue;
            }
            let alphabet = &self.alphabets[si];
            let shared = if scheme.scheme.is_sigma_delta() {
                None
            } else {
                let start = Instant::now();
                if zf.is_none() {
                    zf = Some(zf_precode_with(&scene, &inv, &block)?);
                }
                let base = zf.as_ref().expect("zf block computed above");
                let p = match scheme.scheme {
                    SchemeId::Zf => base.clone(),
                    _ => project_zf(&scene, base, &block, alphabet)?,
                };
                Some((p, start.elapsed().as_nanos() as u64 / np as u64))
            };
            for (pi, &sigma_v) in self.sigmas.iter().enumerate() {
                if !points[pi] {
                    continue;
                }
                let start = Instant::now();
                let owned;
                let precoded = match &shared {
                    Some((p, _)) => p,
                    None => {
                        let opts = scheme.sigma_delta_options(cfg.noise_model, dither_seed);
                        owned = sigma_delta_zf_precode_with(
                            &scene, &inv, &block, alphabet, steer, sigma_v, &opts,
                        )?;
                        &owned
                    }
                };
                let errors = self.count(&scene, precoded, &block, sigma_v, &noise)?;
                let idx = si * np + pi;
                tally.errors[idx] = errors;
                tally.nanos[idx] =
                    start.elapsed().as_nanos() as u64 + shared.as_ref().map_or(0, |(_, t)| *t);
            }
        }
        Ok(tally)
    }

    fn count(
        &self,
        scene: &Scene,
        precoded: &PrecodeBlock,
        block: &SymbolBlock,
        sigma_v: f64,
        noise: &nalgebra::DMatrix<Complex64>,
    ) -> Result<u64> {
        let rx = transmit_with_noise(scene, &precoded.reflections, sigma_v, noise)?;
        let decided = detect(&rx, precoded, scene, &self.constellation)?;
        Ok(count_bit_errors(&decided, &block.labels, &self.constellation)?.0)
    }
}

fn map_trials<T, F>(trials: std::ops::Range<u64>, execution: Execution, f: F) -> Vec<Result<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    match execution {
        Execution::Sequential => trials.map(f).collect(),
        #[cfg(feature = "parallel")]
        Execution::Parallel { .. } => {
            use rayon::prelude::*;
            trials.into_par_iter().map(f).collect()
        }
        #[cfg(not(feature = "parallel"))]
        Execution::Parallel { .. } => trials.map(f).collect(),
    }
}

/// Runs the experiment with the default execution mode.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<BerCurve>> {
    run_experiment_with(config, Execution::default())
}

pub fn run_experiment_with(
    config: &ExperimentConfig,
    execution: Execution,
) -> Result<Vec<BerCurve>> {
    config.validate()?;
    #[cfg(feature = "parallel")]
    if let Execution::Parallel { threads: Some(n) } = execution {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        return pool.install(|| run_inner(config, execution));
    }
    run_inner(config, execution)
}

fn run_inner(config: &ExperimentConfig, execution: Execution) -> Result<Vec<BerCurve>> {
    let runner = TrialRunner::new(config)?;
    let np = runner.n_points();
    let n_cells = config.schemes.len() * np;
    let mut errors = vec![0u64; n_cells];
    let mut trials = vec![0u64; n_cells];
    let mut nanos = vec![0u64; n_cells];
    let mut active = vec![true; n_cells];

    let mut next = 0u64;
    while next < config.n_trials && active.iter().any(|&a| a) {
        let end = (next + TRIAL_CHUNK).min(config.n_trials);
        let results = map_trials(next..end, execution, |t| runner.run(t, &active));
        for (offset, r) in results.into_iter().enumerate() {
            let tally = r.map_err(|e| Error::Trial {
                trial: next + offset as u64,
                seed: config.master_seed,
                source: Box::new(e),
            })?;
            for i in 0..n_cells {
                if active[i] {
                    errors[i] += tally.errors[i];
                    trials[i] += 1;
                    nanos[i] += tally.nanos[i];
                }
            }
        }
        if let Some(stop) = config.early_stop_errors {
            for i in 0..n_cells {
                if errors[i] >= stop {
                    active[i] = false;
                }
            }
        }
        next = end;
    }

    let bits_per_trial = config.bits_per_trial();
    Ok(config
        .schemes
        .iter()
        .enumerate()
        .map(|(si, s)| {
            let range = si * np..(si + 1) * np;
            let total_bits: Vec<u64> = trials[range.clone()]
                .iter()
                .map(|t| t * bits_per_trial)
                .collect();
            BerCurve {
                scheme: s.scheme,
                levels: s.levels,
                label: s.label(),
                snr_db: config.snr_grid_db.clone(),
                ber: errors[range.clone()]
                    .iter()
                    .zip(&total_bits)
                    .map(|(&e, &b)| e as f64 / b as f64)
                    .collect(),
                bit_errors: errors[range.clone()].to_vec(),
                total_bits,
                trials: trials[range.clone()].to_vec(),
                elapsed_secs: nanos[range].iter().map(|&n| n as f64 * 1e-9).collect(),
            }
        })
        .collect())
}

/// Inputs for an averaged shaped-error spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumConfig {
    pub scenario: ScenarioConfig,
    pub scheme: SchemeConfig,
    pub angle_grid_deg: Vec<f64>,
    /// Independent fading blocks to average over.
    pub n_blocks: u64,
    /// Symbol slots (modulator runs) per block.
    pub block_len: usize,
    pub snr_db: f64,
    pub constellation_order: u32,
    pub master_seed: u64,
    #[serde(default)]
    pub sector_center_deg: Option<f64>,
    #[serde(default)]
    pub noise_model: NoiseModel,
}

impl SpectrumConfig {
    /// Dithered, overloaded `L = 4` modulator on the given scenario, 0.5° grid.
    pub fn new(scenario: ScenarioConfig) -> Self {
        let limit = 89.5;
        let steps = (2.0 * limit / 0.5) as usize;
        Self {
            scenario,
            scheme: SchemeConfig::new(SchemeId::OlSdZfDith, Some(4)),
            angle_grid_deg: (0..=steps).map(|i| -limit + 0.5 * i as f64).collect(),
            n_blocks: 100,
            block_len: 4,
            snr_db: 10.0,
            constellation_order: 16,
            master_seed: crate::presets::DEFAULT_SEED,
            sector_center_deg: None,
            noise_model: NoiseModel::default(),
        }
    }

    pub fn sector_center(&self) -> f64 {
        self.sector_center_deg
            .unwrap_or_else(|| self.scenario.sector_center_deg())
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.scheme.validate()?;
        if !self.scheme.scheme.is_sigma_delta() {
            return Err(Error::Config(format!(
                "spectrum needs a sigma-delta scheme, got {}",
                self.scheme.scheme
            )));
        }
        if self.n_blocks == 0 || self.block_len == 0 {
            return Err(Error::Config(
                "n_blocks and block_len must be at least 1".into(),
            ));
        }
        if self.angle_grid_deg.is_empty() {
            return Err(Error::Config("angle grid is empty".into()));
        }
        for &a in &self.angle_grid_deg {
            check_angle(a, "grid angle").map_err(|e| Error::Config(e.to_string()))?;
        }
        check_angle(self.sector_center(), "sector centre")
            .map_err(|e| Error::Config(e.to_string()))?;
        if !self.snr_db.is_finite() {
            return Err(Error::Config("snr_db must be finite".into()));
        }
        Constellation::qam(self.constellation_order)?;
        Ok(())
    }
}

/// Shaped-error power on `angle_grid_deg`, averaged over every modulator
/// run of every block. Blocks draw scenes, symbols and dither exactly as
/// experiment trials do.
pub fn average_shaped_spectrum(config: &SpectrumConfig, execution: Execution) -> Result<Vec<f64>> {
    config.validate()?;
    let constellation = Constellation::qam(config.constellation_order)?;
    let alphabet = PhaseAlphabet::from_levels(config.scheme.levels)?;
    let sigma_v = noise_std_for_snr(config.snr_db);
    let per_block = |b: u64| -> Result<Vec<f64>> {
        let seed = config.master_seed;
        let scene = draw_scene(&config.scenario, &mut stream_rng(seed, b, Stream::Scene))?;
        let block = SymbolBlock::random(
            &constellation,
            scene.n_users(),
            config.block_len,
            &mut stream_rng(seed, b, Stream::Symbols),
        );
        let steer = steer_phase_for(
            config.sector_center(),
            scene.arrival_angle_deg(),
            scene.geometry(),
        )?;
        let inv = SteeringInverse::new(&scene)?;
        let opts = config
            .scheme
            .sigma_delta_options(config.noise_model, derive_seed(seed, b, Stream::Dither));
        let p =
            sigma_delta_zf_precode_with(&scene, &inv, &block, &alphabet, steer, sigma_v, &opts)?;
        let input = p
            .modulator_input
            .as_ref()
            .expect("sigma-delta block keeps its input");
        let mcfg = ModulatorConfig::with_cap(alphabet.clone(), steer, p.scale)?;
        let mut acc = vec![0.0; config.angle_grid_deg.len()];
        for col in input.column_iter() {
            let xb: Vec<Complex64> = col.iter().copied().collect();
            let run = modulate(&xb, &mcfg)?;
            let spec = shaped_error_spectrum(
                &run,
                &mcfg,
                &config.angle_grid_deg,
                scene.arrival_angle_deg(),
                scene.geometry(),
            )?;
            for (a, s) in acc.iter_mut().zip(spec) {
                *a += s;
            }
        }
        Ok(acc)
    };
    let mut total = vec![0.0; config.angle_grid_deg.len()];
    for (b, r) in map_trials(0..config.n_blocks, execution, per_block)
        .into_iter()
        .enumerate()
    {
        let acc = r.map_err(|e| Error::Trial {
            trial: b as u64,
            seed: config.master_seed,
            source: Box::new(e),
        })?;
        for (t, a) in total.iter_mut().zip(acc) {
            *t += a;
        }
    }
    let runs = (config.n_blocks * config.block_len as u64) as f64;
    Ok(total.into_iter().map(|t| t / runs).collect())
}

/// Writes the results CSV (one row per scheme and SNR point).
pub fn write_csv<W: Write>(
    curves: &[BerCurve],
    config: &ExperimentConfig,
    mut w: W,
) -> io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for c in curves {
        for i in 0..c.snr_db.len() {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{}",
                c.scheme,
                c.levels_field(),
                c.snr_db[i],
                c.bit_errors[i],
                c.total_bits[i],
                c.ber[i],
                c.trials[i],
                config.block_len,
                config.scenario.n_elements,
                config.scenario.n_users,
                config.master_seed
            )?;
        }
    }
    Ok(())
}

/// Metadata written next to the CSV: the fully resolved configuration.
pub fn metadata_json(config: &ExperimentConfig) -> serde_json::Value {
    serde_json::json!({
        "generator": concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION")),
        "csv_header": CSV_HEADER,
        "snr_definition": "10*log10(1/sigma_v^2), unit-energy constellation",
        "config": config,
    })
}

/// Wilson score interval for `errors` out of `trials` at normal quantile `z`.
pub fn wilson_interval(errors: u64, trials: u64, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = errors as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    let low = if errors == 0 {
        0.0
    } else {
        (center - half).max(0.0)
    };
    let high = if errors == trials {
        1.0
    } else {
        (center + half).min(1.0)
    };
    (low, high)
}

pub const Z_95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonCell {
    pub label: String,
    pub ber: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// `log10(ber / reference ber)`; the first curve is the reference.
    pub log10_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub snr_db: f64,
    pub cells: Vec<ComparisonCell>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

/// Per-SNR BER table with 95% Wilson intervals.
pub fn summarize(curves: &[BerCurve]) -> ComparisonTable {
    let Some(first) = curves.first() else {
        return ComparisonTable { rows: Vec::new() };
    };
    let rows = first
        .snr_db
        .iter()
        .enumerate()
        .map(|(i, &snr_db)| {
            let reference = first.ber[i];
            let cells = curves
                .iter()
                .map(|c| {
                    let (ci_low, ci_high) = wilson_interval(c.bit_errors[i], c.total_bits[i], Z_95);
                    let ber = c.ber[i];
                    let log10_ratio =
                        (ber > 0.0 && reference > 0.0).then(|| (ber / reference).log10());
                    ComparisonCell {
                        label: c.label.clone(),
                        ber,
                        ci_low,
                        ci_high,
                        log10_ratio,
                    }
                })
                .collect();
            ComparisonRow { snr_db, cells }
        })
        .collect();
    ComparisonTable { rows }
}

impl fmt::Display for ComparisonTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let Some(first) = self.rows.first() else {
            return Ok(());
        };
        write!(f, "{:>8}", "snr_db")?;
        for c in &first.cells {
            write!(f, " {:>30}", c.label)?;
        }
        writeln!(f)?;
        for row in &self.rows {
            write!(f, "{:>8.2}", row.snr_db)?;
            for c in &row.cells {
                let cell = format!("{:.2e} [{:.1e},{:.1e}]", c.ber, c.ci_low, c.ci_high);
                write!(f, " {cell:>30}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    fn tiny() -> ExperimentConfig {
        let mut c = presets::desk();
        c.scenario.n_elements = 32;
        c.scenario.n_users = 2;
        c.n_trials = 5;
        c.block_len = 10;
        c.snr_grid_db = vec![0.0, 10.0];
        c
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let mut c = tiny();
        c.n_trials = 0;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = tiny();
        c.block_len = 0;
        assert!(c.validate().is_err());
        let mut c = tiny();
        c.snr_grid_db = vec![3.0, 3.0];
        assert!(c.validate().is_err());
        let mut c = tiny();
        c.snr_grid_db.clear();
        assert!(c.validate().is_err());
        let mut c = tiny();
        c.schemes = vec![SchemeConfig::new(SchemeId::ZfDce, None)];
        assert!(c.validate().is_err());
        let mut c = tiny();
        c.schemes = vec![SchemeConfig::new(SchemeId::SdZf, Some(3))];
        assert!(c.validate().is_err());
        let mut c = tiny();
        c.schemes = vec![SchemeConfig {
            overload_amplitude: Some(1.2),
            ..SchemeConfig::new(SchemeId::SdZf, Some(4))
        }];
        assert!(c.validate().is_err());
        assert!(tiny().validate().is_ok());
    }

    #[test]
    fn curve_bookkeeping() {
        let c = tiny();
        let curves = run_experiment(&c).unwrap();
        assert_eq!(curves.len(), c.schemes.len());
        for curve in &curves {
            for i in 0..2 {
                assert_eq!(curve.trials[i], 5);
                assert_eq!(curve.total_bits[i], 5 * 2 * 10 * 4);
                assert!((0.0..=1.0).contains(&curve.ber[i]));
            }
        }
    }

    #[test]
    fn early_stop_limits_trials() {
        let mut c = tiny();
        c.n_trials = 200;
        c.snr_grid_db = vec![-10.0];
        c.schemes = vec![SchemeConfig::new(SchemeId::Zf, None)];
        c.early_stop_errors = Some(50);
        let curves = run_experiment(&c).unwrap();
        assert!(curves[0].bit_errors[0] >= 50);
        assert!(curves[0].trials[0] < 200);
        assert_eq!(curves[0].trials[0] % TRIAL_CHUNK, 0);
    }

    #[test]
    fn sequential_matches_parallel() {
        let c = tiny();
        let a = run_experiment_with(&c, Execution::Sequential).unwrap();
        let b = run_experiment_with(&c, Execution::Parallel { threads: Some(3) }).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.bit_errors, y.bit_errors);
        }
    }

    #[test]
    fn wilson_interval_shrinks() {
        let (lo1, hi1) = wilson_interval(10, 1_000, Z_95);
        let (lo2, hi2) = wilson_interval(1_000, 100_000, Z_95);
        assert!(lo1 < 0.01 && 0.01 < hi1);
        let ratio = (hi1 - lo1) / (hi2 - lo2);
        assert!((ratio - 10.0).abs() < 1.0, "{ratio}");
        assert_eq!(wilson_interval(0, 0, Z_95), (0.0, 1.0));
        let (lo, _) = wilson_interval(0, 100, Z_95);
        assert_eq!(lo, 0.0);
    }

    #[test]
    fn summary_of_identical_curves() {
        let curves = run_experiment(&tiny()).unwrap();
        let one = summarize(&curves[..1]);
        assert_eq!(one.rows.len(), 2);
        assert_eq!(one.rows[0].cells[0].ber, curves[0].ber[0]);
        let mut twice = vec![curves[2].clone(), curves[2].clone()];
        twice[1].label = "copy".into();
        let t = summarize(&twice);
        for row in &t.rows {
            if let Some(r) = row.cells[1].log10_ratio {
                assert_eq!(r, 0.0);
            }
        }
        assert!(summarize(&[]).rows.is_empty());
        assert!(t.to_string().contains("copy"));
    }

    #[test]
    fn spectrum_has_notch_at_sector_centre() {
        let scenario = ScenarioConfig {
            n_elements: 128,
            n_users: 4,
            ..ScenarioConfig::default()
        };
        let mut cfg = SpectrumConfig::new(scenario);
        cfg.n_blocks = 8;
        cfg.angle_grid_deg = vec![10.0, 40.0, 70.0];
        let s = average_shaped_spectrum(&cfg, Execution::default()).unwrap();
        assert!(s[1] < s[0] && s[1] < s[2], "{s:?}");
        cfg.scheme = SchemeConfig::new(SchemeId::ZfDce, Some(4));
        assert!(average_shaped_spectrum(&cfg, Execution::Sequential).is_err());
    }

    #[test]
    fn csv_layout() {
        let c = tiny();
        let curves = run_experiment(&c).unwrap();
        let mut buf = Vec::new();
        write_csv(&curves, &c, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER);
        let first = lines.next().unwrap();
        assert!(first.starts_with("zf,none,0,"), "{first}");
        assert_eq!(text.lines().count(), 1 + curves.len() * 2);
        assert!(text.contains("ce-zf,inf,"));
        assert!(text.contains("sd-zf,16,"));
    }
}
