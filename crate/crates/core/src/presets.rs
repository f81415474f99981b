//! Named experiment configurations.

use crate::error::{Error, Result};
use crate::harness::{ExperimentConfig, SchemeConfig};
use crate::precoder::{NoiseModel, SchemeId, DEFAULT_OVERLOAD_AMPLITUDE};
use crate::scene::ScenarioConfig;

pub const NAMES: [&str; 3] = ["fig4", "fig5", "desk"];

pub const DEFAULT_SEED: u64 = 20_240_601;

/// SNR grid `lo, lo + step, ..., hi` (inclusive, tolerant of rounding).
pub fn snr_range(lo: f64, step: f64, hi: f64) -> Result<Vec<f64>> {
    if !(lo.is_finite() && step.is_finite() && hi.is_finite()) || step <= 0.0 || hi < lo {
        return Err(Error::Config(format!("bad SNR range {lo}:{step}:{hi}")));
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| lo + i as f64 * step).collect())
}

fn grid(lo: f64, step: f64, hi: f64) -> Vec<f64> {
    snr_range(lo, step, hi).expect("static SNR grid")
}

fn full_scale(schemes: Vec<SchemeConfig>) -> ExperimentConfig {
    ExperimentConfig {
        scenario: ScenarioConfig::default(),
        schemes,
        snr_grid_db: grid(-20.0, 2.0, 10.0),
        n_trials: 1000,
        block_len: 500,
        constellation_order: 16,
        master_seed: DEFAULT_SEED,
        sector_center_deg: None,
        noise_model: NoiseModel::default(),
        early_stop_errors: None,
    }
}

fn phase_levels_schemes() -> Vec<SchemeConfig> {
    let mut s = vec![
        SchemeConfig::new(SchemeId::Zf, None),
        SchemeConfig::new(SchemeId::CeZf, None),
    ];
    s.extend([16, 8, 4].map(|l| SchemeConfig::new(SchemeId::SdZf, Some(l))));
    s
}

fn overload_dither_schemes() -> Vec<SchemeConfig> {
    vec![
        SchemeConfig::new(SchemeId::Zf, None),
        SchemeConfig::new(SchemeId::ZfDce, Some(4)),
        SchemeConfig::new(SchemeId::SdZf, Some(4)),
        SchemeConfig {
            overload_amplitude: Some(DEFAULT_OVERLOAD_AMPLITUDE),
            ..SchemeConfig::new(SchemeId::OlSdZf, Some(4))
        },
        SchemeConfig {
            overload_amplitude: Some(DEFAULT_OVERLOAD_AMPLITUDE),
            ..SchemeConfig::new(SchemeId::OlSdZfDith, Some(4))
        },
    ]
}

/// ZF, CE-ZF and sigma-delta ZF at L = 16, 8, 4.
pub fn fig4() -> ExperimentConfig {
    full_scale(phase_levels_schemes())
}

/// L = 4: ZF, quantized ZF, sigma-delta ZF, overloaded and dithered variants.
pub fn fig5() -> ExperimentConfig {
    full_scale(overload_dither_schemes())
}

/// Scaled-down run with every scheme of both figures.
pub fn desk() -> ExperimentConfig {
    let mut schemes = phase_levels_schemes();
    for s in overload_dither_schemes() {
        if !schemes.contains(&s) {
            schemes.push(s);
        }
    }
    ExperimentConfig {
        scenario: ScenarioConfig {
            n_elements: 128,
            n_users: 4,
            ..ScenarioConfig::default()
        },
        schemes,
        snr_grid_db: grid(0.0, 3.0, 30.0),
        n_trials: 200,
        block_len: 100,
        ..full_scale(Vec::new())
    }
}

pub fn by_name(name: &str) -> Option<ExperimentConfig> {
    match name {
        "fig4" => Some(fig4()),
        "fig5" => Some(fig5()),
        "desk" => Some(desk()),
        _ => None,
    }
}
