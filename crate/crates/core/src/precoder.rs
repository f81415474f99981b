//! Reflection-vector synthesis for every scheme.
//!
//! * `zf`: `x_t = H̃† s_t / max_{n,t} |[H̃† s_t]_n|`, not constant envelope.
//! * `ce-zf`, `zf-dce`: the phase of the `zf` output, continuous or on `L` levels.
//! * `sd-zf`: `x̄_t = C Ã† D s_t` fed through the steered modulator, with
//!   `D = diag(σ_{w,k} α̃_k* / |α̃_k|²)` and `C = A / max_{n,t} |[Ã† D s_t]_n|`.
//! * `ol-sd-zf`: `sd-zf` with `A` above the no-overload amplitude.
//! * `ol-sd-zf-dith`: additionally mixes in a subtractive dither,
//!   `x̄_t = 0.8 C Ã† D s_t + 0.2 u`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::link::SymbolBlock;
use crate::quantizer::PhaseAlphabet;
use crate::scene::Scene;
use crate::sigma_delta::modulate_into;

/// Singular values below this fraction of the largest count as zero.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Input amplitude of the overloaded modulator variants.
pub const DEFAULT_OVERLOAD_AMPLITUDE: f64 = std::f64::consts::SQRT_2;

/// Precoding scheme identifiers, as used on the command line and in CSV.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SchemeId {
    #[serde(rename = "zf")]
    Zf,
    #[serde(rename = "ce-zf")]
    CeZf,
    #[serde(rename = "zf-dce")]
    ZfDce,
    #[serde(rename = "sd-zf")]
    SdZf,
    #[serde(rename = "ol-sd-zf")]
    OlSdZf,
    #[serde(rename = "ol-sd-zf-dith")]
    OlSdZfDith,
}

impl SchemeId {
    pub const ALL: [SchemeId; 6] = [
        SchemeId::Zf,
        SchemeId::CeZf,
        SchemeId::ZfDce,
        SchemeId::SdZf,
        SchemeId::OlSdZf,
        SchemeId::OlSdZfDith,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SchemeId::Zf => "zf",
            SchemeId::CeZf => "ce-zf",
            SchemeId::ZfDce => "zf-dce",
            SchemeId::SdZf => "sd-zf",
            SchemeId::OlSdZf => "ol-sd-zf",
            SchemeId::OlSdZfDith => "ol-sd-zf-dith",
        }
    }

    pub fn is_sigma_delta(self) -> bool {
        matches!(
            self,
            SchemeId::SdZf | SchemeId::OlSdZf | SchemeId::OlSdZfDith
        )
    }

    pub fn is_dithered(self) -> bool {
        self == SchemeId::OlSdZfDith
    }

    pub fn is_overloaded(self) -> bool {
        matches!(self, SchemeId::OlSdZf | SchemeId::OlSdZfDith)
    }

    pub fn is_constant_envelope(self) -> bool {
        self != SchemeId::Zf
    }
}

impl fmt::Display for SchemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SchemeId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SchemeId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown scheme {s:?}")))
    }
}

/// Which gain factor multiplies the quantization term of `σ_w²`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GainForm {
    /// `|α̃_k|²`, the power of the cascaded gain.
    #[default]
    Squared,
    /// `|α̃_k|`, the unsquared modulus.
    Modulus,
}

/// Closed-form model of the per-user effective noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseModel {
    /// Quantization-error variance `σ_q²`.
    pub sigma_q_sq: f64,
    pub gain_form: GainForm,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            sigma_q_sq: 1.0 / 3.0,
            gain_form: GainForm::Squared,
        }
    }
}

/// `σ_{w,k} = sqrt(2 g_k σ_q² sin²((φ - ω_k)/2) + σ_v²)` with `g_k = |α̃_k|²`
/// (or `|α̃_k|` under [`GainForm::Modulus`]).
pub fn effective_noise_std(
    scene: &Scene,
    user: usize,
    steer_phase: f64,
    sigma_v: f64,
    model: &NoiseModel,
) -> Result<f64> {
    if user >= scene.n_users() {
        return Err(Error::Domain(format!(
            "user index {user} out of range for {} users",
            scene.n_users()
        )));
    }
    if !(sigma_v >= 0.0) {
        return Err(Error::Domain(format!(
            "noise std must be >= 0, got {sigma_v}"
        )));
    }
    let alpha = scene.cascaded_gains()[user].norm();
    let gain = match model.gain_form {
        GainForm::Squared => alpha * alpha,
        GainForm::Modulus => alpha,
    };
    let s = ((steer_phase - scene.spatial_freqs()[user]) / 2.0).sin();
    Ok((2.0 * gain * model.sigma_q_sq * s * s + sigma_v * sigma_v).sqrt())
}

/// Dither metadata shared by precoder and receiver.
#[derive(Debug, Clone, PartialEq)]
pub struct DitherMeta {
    pub seed: u64,
    pub signal_weight: f64,
    pub dither_weight: f64,
    pub samples: Vec<Complex64>,
}

/// Dither vector `u_n = ρ e^{jψ}`, `ρ ~ U[0, amplitude]`, `ψ ~ U[-π, π)`,
/// regenerated bit-identically from `seed`.
pub fn generate_dither(seed: u64, len: usize, amplitude: f64) -> Vec<Complex64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len)
        .map(|_| {
            let rho = rng.random_range(0.0..=amplitude);
            let psi = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            Complex64::from_polar(rho, psi)
        })
        .collect()
}

/// Reflections for one block plus everything the receiver is assumed to know.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecodeBlock {
    pub scheme: SchemeId,
    pub levels: Option<u32>,
    /// N×T reflection vectors `x_t`.
    pub reflections: DMatrix<Complex64>,
    /// Block scaling: `C` for sigma-delta schemes, `1/max|H̃† s|` for ZF schemes.
    pub scale: f64,
    /// `d_k`; for ZF schemes the implied `1/α̃_k`.
    pub per_user_comp: Vec<Complex64>,
    /// `σ_{w,k}`; all ones for ZF schemes.
    pub per_user_noise_std: Vec<f64>,
    /// Nominal `y_k / s_k` gain the receiver divides by.
    pub receive_gain: Vec<Complex64>,
    pub dither: Option<DitherMeta>,
    /// N×T modulator inputs `x̄_t` (sigma-delta schemes only).
    pub modulator_input: Option<DMatrix<Complex64>>,
    /// Largest `|q_n|` across the block (sigma-delta schemes only).
    pub max_modulator_error: Option<f64>,
}

/// Pseudo-inverse of the steering matrix `Ã`, computed once per scene.
#[derive(Debug, Clone)]
pub struct SteeringInverse {
    pinv: DMatrix<Complex64>,
    condition: f64,
}

impl SteeringInverse {
    /// SVD-based pseudo-inverse; fails when the smallest singular value is
    /// below [`RANK_TOLERANCE`] times the largest.
    pub fn new(scene: &Scene) -> Result<Self> {
        let a = scene.steering_matrix();
        if a.nrows() > a.ncols() {
            return Err(Error::Config("more users than array elements".into()));
        }
        let svd = a.clone().svd(true, true);
        let sv = &svd.singular_values;
        let max = sv.iter().cloned().fold(0.0, f64::max);
        let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(max > 0.0) || min < RANK_TOLERANCE * max {
            return Err(Error::RankDeficient {
                ratio: if max > 0.0 { min / max } else { 0.0 },
            });
        }
        let u = svd.u.expect("left singular vectors requested");
        let v_t = svd.v_t.expect("right singular vectors requested");
        // Ã† = V Σ⁻¹ Uᴴ
        let mut v = v_t.adjoint();
        for (j, mut col) in v.column_iter_mut().enumerate() {
            col /= Complex64::new(sv[j], 0.0);
        }
        Ok(Self {
            pinv: v * u.adjoint(),
            condition: max / min,
        })
    }

    /// N×K matrix `Ã†`.
    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.pinv
    }

    pub fn condition_number(&self) -> f64 {
        self.condition
    }

    /// `Ã† diag(weights) S`.
    pub fn apply_weighted(
        &self,
        weights: &[Complex64],
        symbols: &DMatrix<Complex64>,
    ) -> DMatrix<Complex64> {
        let mut ds = symbols.clone();
        for (k, mut row) in ds.row_iter_mut().enumerate() {
            row *= weights[k];
        }
        &self.pinv * ds
    }
}

fn max_modulus(m: &DMatrix<Complex64>) -> f64 {
    m.iter().map(|v| v.norm_sqr()).fold(0.0, f64::max).sqrt()
}

fn check_block(scene: &Scene, block: &SymbolBlock) -> Result<()> {
    if block.n_users() != scene.n_users() {
        return Err(Error::Config(format!(
            "symbol block has {} users, scene has {}",
            block.n_users(),
            scene.n_users()
        )));
    }
    if block.block_len() == 0 {
        return Err(Error::Config("empty symbol block".into()));
    }
    Ok(())
}

fn inverse_gains(scene: &Scene) -> Vec<Complex64> {
    scene.cascaded_gains().iter().map(|a| a.inv()).collect()
}

/// Unquantized ZF normalized to a peak modulus of 1 over the block.
pub fn zf_precode(scene: &Scene, block: &SymbolBlock) -> Result<PrecodeBlock> {
    let inv = SteeringInverse::new(scene)?;
    zf_precode_with(scene, &inv, block)
}

pub fn zf_precode_with(
    scene: &Scene,
    inv: &SteeringInverse,
    block: &SymbolBlock,
) -> Result<PrecodeBlock> {
    check_block(scene, block)?;
    // H̃† = Ã† diag(1/α̃) for full row rank
    let comp = inverse_gains(scene);
    let mut x = inv.apply_weighted(&comp, &block.symbols);
    let peak = max_modulus(&x);
    if !(peak > 0.0) {
        return Err(Error::Config("all-zero ZF output".into()));
    }
    x /= Complex64::new(peak, 0.0);
    let k = scene.n_users();
    Ok(PrecodeBlock {
        scheme: SchemeId::Zf,
        levels: None,
        reflections: x,
        scale: 1.0 / peak,
        per_user_comp: comp,
        per_user_noise_std: vec![1.0; k],
        receive_gain: vec![Complex64::new(1.0 / peak, 0.0); k],
        dither: None,
        modulator_input: None,
        max_modulator_error: None,
    })
}

/// Least-squares fit of `y_k ≈ g_k s_k` over the block, noiseless.
fn fitted_gains(
    scene: &Scene,
    reflections: &DMatrix<Complex64>,
    symbols: &DMatrix<Complex64>,
) -> Vec<Complex64> {
    let y = scene.channel_matrix() * reflections;
    (0..scene.n_users())
        .map(|k| {
            let num: Complex64 = y
                .row(k)
                .iter()
                .zip(symbols.row(k).iter())
                .map(|(y, s)| y * s.conj())
                .sum();
            let den: f64 = symbols.row(k).iter().map(|s| s.norm_sqr()).sum();
            if den > 0.0 {
                num / den
            } else {
                Complex64::new(1.0, 0.0)
            }
        })
        .collect()
}

/// Projects a ZF block elementwise onto `alphabet`.
///
/// The receiver gain is refitted to the projected signal, standing in for
/// what a pilot stage would measure.
pub fn project_zf(
    scene: &Scene,
    zf: &PrecodeBlock,
    block: &SymbolBlock,
    alphabet: &PhaseAlphabet,
) -> Result<PrecodeBlock> {
    if zf.scheme != SchemeId::Zf {
        return Err(Error::Config(format!(
            "phase projection needs a zf block, got {}",
            zf.scheme
        )));
    }
    let reflections = zf.reflections.map(|v| alphabet.quantize(v).0);
    let receive_gain = fitted_gains(scene, &reflections, &block.symbols);
    Ok(PrecodeBlock {
        scheme: if alphabet.is_continuous() {
            SchemeId::CeZf
        } else {
            SchemeId::ZfDce
        },
        levels: alphabet.levels(),
        reflections,
        receive_gain,
        ..zf.clone()
    })
}

/// Continuous-phase projection of the ZF output.
pub fn ce_zf_precode(scene: &Scene, block: &SymbolBlock) -> Result<PrecodeBlock> {
    let zf = zf_precode(scene, block)?;
    project_zf(scene, &zf, block, &PhaseAlphabet::continuous())
}

/// `L`-level phase quantization of the ZF output.
pub fn zf_dce_precode(
    scene: &Scene,
    block: &SymbolBlock,
    alphabet: &PhaseAlphabet,
) -> Result<PrecodeBlock> {
    let zf = zf_precode(scene, block)?;
    project_zf(scene, &zf, block, alphabet)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DitherOptions {
    pub seed: Option<u64>,
    pub signal_weight: f64,
    pub dither_weight: f64,
}

impl Default for DitherOptions {
    fn default() -> Self {
        Self {
            seed: None,
            signal_weight: 0.8,
            dither_weight: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SigmaDeltaOptions {
    /// Modulator amplitude `A`; the no-overload amplitude when `None`.
    pub overload_amplitude: Option<f64>,
    pub dither: Option<DitherOptions>,
    pub noise_model: NoiseModel,
}

impl SigmaDeltaOptions {
    pub fn scheme(&self) -> SchemeId {
        match (self.overload_amplitude.is_some(), self.dither.is_some()) {
            (_, true) => SchemeId::OlSdZfDith,
            (true, false) => SchemeId::OlSdZf,
            (false, false) => SchemeId::SdZf,
        }
    }
}

/// Sigma-delta ZF precoding of one block.
pub fn sigma_delta_zf_precode(
    scene: &Scene,
    block: &SymbolBlock,
    alphabet: &PhaseAlphabet,
    steer_phase: f64,
    sigma_v: f64,
    options: &SigmaDeltaOptions,
) -> Result<PrecodeBlock> {
    let inv = SteeringInverse::new(scene)?;
    sigma_delta_zf_precode_with(scene, &inv, block, alphabet, steer_phase, sigma_v, options)
}

pub fn sigma_delta_zf_precode_with(
    scene: &Scene,
    inv: &SteeringInverse,
    block: &SymbolBlock,
    alphabet: &PhaseAlphabet,
    steer_phase: f64,
    sigma_v: f64,
    options: &SigmaDeltaOptions,
) -> Result<PrecodeBlock> {
    check_block(scene, block)?;
    let no_overload = alphabet.no_overload_amplitude();
    let amplitude = options.overload_amplitude.unwrap_or(no_overload);
    if !(amplitude > 0.0 && amplitude.is_finite()) {
        return Err(Error::Config(format!(
            "invalid modulator amplitude {amplitude}"
        )));
    }
    let dither = match options.dither {
        None => None,
        Some(d) => {
            let seed = d.seed.ok_or_else(|| {
                Error::Config("subtractive dither requested without a seed".into())
            })?;
            Some(DitherMeta {
                seed,
                signal_weight: d.signal_weight,
                dither_weight: d.dither_weight,
                samples: generate_dither(seed, scene.n_elements(), no_overload),
            })
        }
    };

    let k_users = scene.n_users();
    let noise_std = (0..k_users)
        .map(|k| effective_noise_std(scene, k, steer_phase, sigma_v, &options.noise_model))
        .collect::<Result<Vec<_>>>()?;
    let comp: Vec<Complex64> = scene
        .cascaded_gains()
        .iter()
        .zip(&noise_std)
        .map(|(a, &sw)| a.conj() * (sw / a.norm_sqr()))
        .collect();

    let mut input = inv.apply_weighted(&comp, &block.symbols);
    let peak = max_modulus(&input);
    if !(peak > 0.0) {
        return Err(Error::Config(
            "free-space precoder output is identically zero".into(),
        ));
    }
    let scale = amplitude / peak;
    let signal_weight = dither.as_ref().map_or(1.0, |d| d.signal_weight);
    input *= Complex64::new(signal_weight * scale, 0.0);
    if let Some(d) = &dither {
        for mut col in input.column_iter_mut() {
            for (v, u) in col.iter_mut().zip(&d.samples) {
                *v += u * d.dither_weight;
            }
        }
    }

    let n = scene.n_elements();
    let feedback = Complex64::from_polar(1.0, steer_phase);
    let mut reflections = DMatrix::zeros(n, block.block_len());
    let mut worst = 0.0f64;
    for (xb, x) in input
        .as_slice()
        .chunks(n)
        .zip(reflections.as_mut_slice().chunks_mut(n))
    {
        worst = worst.max(modulate_into(xb, alphabet, feedback, x, None));
    }

    let receive_gain = noise_std
        .iter()
        .map(|&sw| Complex64::new(signal_weight * scale * sw, 0.0))
        .collect();
    Ok(PrecodeBlock {
        scheme: options.scheme(),
        levels: alphabet.levels(),
        reflections,
        scale,
        per_user_comp: comp,
        per_user_noise_std: noise_std,
        receive_gain,
        dither,
        modulator_input: Some(input),
        max_modulator_error: Some(worst),
    })
}
