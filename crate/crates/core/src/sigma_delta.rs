//! Angle-steered first-order spatial sigma-delta modulator.
//!
//! Walking across the array, each quantizer input is the free-space sample
//! minus the previous element's quantization error rotated by `e^{jφ}`:
//!
//! ```text
//! b_n = x̄_n - e^{jφ} q_{n-1}
//! x_n = Q(b_n),  q_n = x_n - b_n,  q_{-1} = 0
//! ```
//!
//! so that `x_n = x̄_n + q_n - e^{jφ} q_{n-1}`. The error seen in direction
//! `ω` is shaped by `1 - e^{j(φ - ω)}`, which vanishes when `ω = φ`.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::quantizer::PhaseAlphabet;
use crate::scene::{check_angle, phase_ramp, ArrayGeometry};

#[derive(Debug, Clone, PartialEq)]
pub struct ModulatorConfig {
    pub alphabet: PhaseAlphabet,
    /// Feedback rotation `φ` in radians, in `[-π, π)`.
    pub steer_phase: f64,
    /// Nominal input amplitude. Not enforced by [`modulate`].
    pub amplitude_cap: f64,
}

impl ModulatorConfig {
    /// Config with the no-overload amplitude of `alphabet` as its cap.
    pub fn new(alphabet: PhaseAlphabet, steer_phase: f64) -> Result<Self> {
        let amplitude_cap = alphabet.no_overload_amplitude();
        Self::with_cap(alphabet, steer_phase, amplitude_cap)
    }

    pub fn with_cap(alphabet: PhaseAlphabet, steer_phase: f64, amplitude_cap: f64) -> Result<Self> {
        if !(-PI..PI).contains(&steer_phase) {
            return Err(Error::Domain(format!(
                "steer phase must lie in [-π, π), got {steer_phase}"
            )));
        }
        if !(amplitude_cap > 0.0 && amplitude_cap.is_finite()) {
            return Err(Error::Domain(format!(
                "amplitude cap must be positive, got {amplitude_cap}"
            )));
        }
        Ok(Self {
            alphabet,
            steer_phase,
            amplitude_cap,
        })
    }

    pub fn feedback(&self) -> Complex64 {
        Complex64::from_polar(1.0, self.steer_phase)
    }
}

/// One pass of the modulator over an input vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ModulatorRun {
    pub input: Vec<Complex64>,
    pub output: Vec<Complex64>,
    pub errors: Vec<Complex64>,
}

impl ModulatorRun {
    /// Largest `|x_n - x̄_n - q_n + e^{jφ} q_{n-1}|` over the run.
    pub fn end_to_end_residual(&self, steer_phase: f64) -> f64 {
        let fb = Complex64::from_polar(1.0, steer_phase);
        let mut prev = Complex64::new(0.0, 0.0);
        let mut worst = 0.0f64;
        for ((x, xb), q) in self.output.iter().zip(&self.input).zip(&self.errors) {
            worst = worst.max((x - xb - q + fb * prev).norm());
            prev = *q;
        }
        worst
    }

    pub fn max_error(&self) -> f64 {
        self.errors.iter().map(|q| q.norm()).fold(0.0, f64::max)
    }
}

/// Runs the recursion in place: writes outputs and, if given, errors.
/// Returns the largest error magnitude.
///
/// This is the allocation-free core used by the precoders.
#[inline]
pub fn modulate_into(
    input: &[Complex64],
    alphabet: &PhaseAlphabet,
    feedback: Complex64,
    output: &mut [Complex64],
    mut errors: Option<&mut [Complex64]>,
) -> f64 {
    debug_assert_eq!(input.len(), output.len());
    let mut q = Complex64::new(0.0, 0.0);
    let mut worst = 0.0f64;
    for (n, (xb, x)) in input.iter().zip(output.iter_mut()).enumerate() {
        let b = xb - feedback * q;
        let (point, err) = alphabet.quantize(b);
        *x = point;
        q = err;
        worst = worst.max(err.norm_sqr());
        if let Some(e) = errors.as_deref_mut() {
            e[n] = err;
        }
    }
    worst.sqrt()
}

/// Modulates `input` and returns the full run, including the error sequence.
pub fn modulate(input: &[Complex64], config: &ModulatorConfig) -> Result<ModulatorRun> {
    if input.is_empty() {
        return Err(Error::Domain("modulator input is empty".into()));
    }
    let mut output = vec![Complex64::new(0.0, 0.0); input.len()];
    let mut errors = output.clone();
    modulate_into(
        input,
        &config.alphabet,
        config.feedback(),
        &mut output,
        Some(&mut errors),
    );
    Ok(ModulatorRun {
        input: input.to_vec(),
        output,
        errors,
    })
}

/// Wraps an angle to `[-π, π)`.
pub fn wrap_phase(phase: f64) -> f64 {
    let w = (phase + PI).rem_euclid(TAU) - PI;
    if w >= PI {
        w - TAU
    } else {
        w
    }
}

/// Feedback phase that places the noise-shaping null on the sector centre
/// `θ*`: `φ* = 2π (d/λ) (sin θ_in + sin θ*)`, wrapped to `[-π, π)`.
pub fn steer_phase_for(
    sector_center_deg: f64,
    arrival_angle_deg: f64,
    geometry: &ArrayGeometry,
) -> Result<f64> {
    check_angle(sector_center_deg, "sector centre")?;
    check_angle(arrival_angle_deg, "arrival angle")?;
    Ok(wrap_phase(
        geometry.spatial_frequency(arrival_angle_deg)
            + geometry.spatial_frequency(sector_center_deg),
    ))
}

/// Power of the modulator's added noise `x - x̄` as seen through the
/// cascaded steering vector of each grid angle:
/// `|ã(θ)ᵀ (q_n - e^{jφ} q_{n-1})|²`, summed over all `N` elements.
pub fn shaped_error_spectrum(
    run: &ModulatorRun,
    config: &ModulatorConfig,
    angle_grid_deg: &[f64],
    arrival_angle_deg: f64,
    geometry: &ArrayGeometry,
) -> Result<Vec<f64>> {
    if run.errors.is_empty() {
        return Err(Error::Domain("empty modulator run".into()));
    }
    check_angle(arrival_angle_deg, "arrival angle")?;
    let shaped = shaped_error(&run.errors, config.feedback());
    angle_grid_deg
        .iter()
        .map(|&theta| {
            check_angle(theta, "grid angle")?;
            let omega =
                geometry.spatial_frequency(arrival_angle_deg) + geometry.spatial_frequency(theta);
            let a = phase_ramp(omega, shaped.len());
            let s: Complex64 = a.iter().zip(&shaped).map(|(a, e)| a * e).sum();
            Ok(s.norm_sqr())
        })
        .collect()
}

/// `q_n - e^{jφ} q_{n-1}` with `q_{-1} = 0`.
pub fn shaped_error(errors: &[Complex64], feedback: Complex64) -> Vec<Complex64> {
    let mut prev = Complex64::new(0.0, 0.0);
    errors
        .iter()
        .map(|q| {
            let e = q - feedback * prev;
            prev = *q;
            e
        })
        .collect()
}
