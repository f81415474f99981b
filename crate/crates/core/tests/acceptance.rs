//! Acceptance criteria, one test per criterion.
//!
//! Every test writes a single `criterion N ... PASS|FAIL` line straight to
//! stderr (bypassing the test harness capture) and then asserts the outcome.
//! Tolerances are the constants below and are not tuned per run.

use std::f64::consts::{PI, SQRT_2};
use std::io::Write;
use std::sync::OnceLock;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ris_sdm::harness::{
    average_shaped_spectrum, run_experiment_with, wilson_interval, write_csv, BerCurve, Execution,
    ExperimentConfig, SchemeConfig, SpectrumConfig, Z_95,
};
use ris_sdm::link::{count_bit_errors, detect, transmit_with_noise, Constellation, SymbolBlock};
use ris_sdm::precoder::{
    effective_noise_std, generate_dither, sigma_delta_zf_precode_with, zf_precode_with, SchemeId,
    SigmaDeltaOptions, SteeringInverse,
};
use ris_sdm::presets;
use ris_sdm::quantizer::{no_overload_amplitude, PhaseAlphabet};
use ris_sdm::scene::{draw_scene, ScenarioConfig};
use ris_sdm::sigma_delta::{modulate, modulate_into, steer_phase_for, ModulatorConfig};

const NO_OVERLOAD_SLACK: f64 = 1e-12;
const IDENTITY_TOL: f64 = 1e-12;
const AMPLITUDE_TOL: f64 = 1e-12;
const ZF_RESIDUAL_TOL: f64 = 1e-9;
const NOTCH_DEPTH: f64 = 10.0;
const NOTCH_OFFSET_DEG: f64 = 30.0;
const NOTCH_LOCATION_TOL_DEG: f64 = 2.0;
const SIGMA_W_REL_TOL: f64 = 0.25;
const L16_VS_CE_MAX_RATIO: f64 = 3.0;
const BER_TARGET: f64 = 1e-3;
const SD4_VS_DCE_MIN_GAIN: f64 = 10.0;
const DITHER_VS_ZF_MAX_RATIO: f64 = 3.0;
const FLOOR_WINDOW_DB: f64 = 6.0;
const FLOOR_MAX_DROP: f64 = 2.0;

fn report(id: u32, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let line = format!("criterion {id:>2} {name:<28} {verdict}  {detail}\n");
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn random_in_disk(rng: &mut ChaCha8Rng, radius: f64) -> Complex64 {
    // a quarter of the draws sit exactly on the rim
    let r = if rng.random_bool(0.25) {
        radius
    } else {
        radius * rng.random::<f64>().sqrt()
    };
    Complex64::from_polar(r, rng.random_range(-PI..PI))
}

#[test]
fn c01_no_overload_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_all = 0.0f64;
    let mut detail = Vec::new();
    for l in [4u32, 8, 16, 64] {
        let alphabet = PhaseAlphabet::discrete(l).unwrap();
        let a = alphabet.no_overload_amplitude();
        let mut worst = 0.0f64;
        let run_len = 1000;
        let mut input = vec![Complex64::new(0.0, 0.0); run_len];
        let mut output = input.clone();
        for _ in 0..1000 {
            let phi = rng.random_range(-PI..PI);
            for v in input.iter_mut() {
                *v = random_in_disk(&mut rng, a);
            }
            let fb = Complex64::from_polar(1.0, phi);
            worst = worst.max(modulate_into(&input, &alphabet, fb, &mut output, None));
        }
        detail.push(format!("L={l}: {worst:.6}"));
        worst_all = worst_all.max(worst);
    }
    let pass = worst_all <= 1.0 + NO_OVERLOAD_SLACK;
    report(
        1,
        "no-overload bound",
        pass,
        &format!("max|q| {}", detail.join(", ")),
    );
    assert!(pass);
}

#[test]
fn c02_end_to_end_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for run in 0..10_000 {
        let alphabet = match run % 5 {
            0 => PhaseAlphabet::continuous(),
            i => PhaseAlphabet::discrete([4, 6, 8, 16][i - 1]).unwrap(),
        };
        let phi = if run % 2 == 0 {
            0.0
        } else {
            rng.random_range(-PI..PI)
        };
        let len = rng.random_range(1..=64);
        let amp = rng.random_range(0.01..3.0);
        let mut input: Vec<Complex64> = (0..len).map(|_| random_in_disk(&mut rng, amp)).collect();
        if run % 3 == 0 {
            let u = generate_dither(rng.random(), len, alphabet.no_overload_amplitude());
            for (x, d) in input.iter_mut().zip(u) {
                *x = 0.8 * *x + 0.2 * d;
            }
        }
        let cfg = ModulatorConfig::with_cap(alphabet, phi, amp).unwrap();
        let r = modulate(&input, &cfg).unwrap();
        worst = worst.max(r.end_to_end_residual(phi));
    }
    let pass = worst < IDENTITY_TOL;
    report(
        2,
        "end-to-end identity",
        pass,
        &format!("max residual {worst:.3e}"),
    );
    assert!(pass);
}

#[test]
fn c03_amplitude_values() {
    let checks = [
        (no_overload_amplitude(Some(4)).unwrap(), SQRT_2 - 1.0),
        (no_overload_amplitude(Some(6)).unwrap(), 3f64.sqrt() - 1.0),
        (no_overload_amplitude(None).unwrap(), 1.0),
    ];
    let mut worst = checks
        .iter()
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    for l in 4..=1024u32 {
        let a = no_overload_amplitude(Some(l)).unwrap();
        let lf = l as f64;
        worst = worst.max((a - (2.0 * (PI / lf).cos() - 1.0)).abs());
        worst = worst.max((a - ((2.0 * PI / lf).sin() / (PI / lf).sin() - 1.0)).abs());
    }
    let pass = worst <= AMPLITUDE_TOL;
    report(
        3,
        "no-overload amplitude",
        pass,
        &format!("max deviation {worst:.3e}"),
    );
    assert!(pass);
}

#[test]
fn c04_zf_residual_and_loopback() {
    let cfg = ScenarioConfig {
        n_elements: 128,
        n_users: 4,
        ..ScenarioConfig::default()
    };
    let constellation = Constellation::qam(16).unwrap();
    let alphabet = PhaseAlphabet::discrete(4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    let mut bit_errors = 0u64;
    let mut bits = 0u64;
    for _ in 0..100 {
        let scene = draw_scene(&cfg, &mut rng).unwrap();
        let block = SymbolBlock::random(&constellation, 4, 20, &mut rng);
        let inv = SteeringInverse::new(&scene).unwrap();
        let phi = steer_phase_for(40.0, -60.0, scene.geometry()).unwrap();
        let p = sigma_delta_zf_precode_with(
            &scene,
            &inv,
            &block,
            &alphabet,
            phi,
            0.1,
            &SigmaDeltaOptions::default(),
        )
        .unwrap();
        let lhs = scene.steering_matrix() * p.modulator_input.as_ref().unwrap();
        for t in 0..block.block_len() {
            let target: Vec<Complex64> = (0..4)
                .map(|k| p.scale * p.per_user_comp[k] * block.symbols[(k, t)])
                .collect();
            let num: f64 = (0..4).map(|k| (lhs[(k, t)] - target[k]).norm_sqr()).sum();
            let den: f64 = target.iter().map(|v| v.norm_sqr()).sum();
            worst = worst.max((num / den).sqrt());
        }

        let zf = zf_precode_with(&scene, &inv, &block).unwrap();
        let silent = DMatrix::zeros(4, block.block_len());
        let rx = transmit_with_noise(&scene, &zf.reflections, 0.0, &silent).unwrap();
        let decided = detect(&rx, &zf, &scene, &constellation).unwrap();
        let (e, b) = count_bit_errors(&decided, &block.labels, &constellation).unwrap();
        bit_errors += e;
        bits += b;
    }
    let pass = worst < ZF_RESIDUAL_TOL && bit_errors == 0;
    report(
        4,
        "zf residual + loopback",
        pass,
        &format!("max rel residual {worst:.3e}, loopback {bit_errors}/{bits} bit errors"),
    );
    assert!(pass);
}

#[test]
fn c05_noise_shaping_notch() {
    let mut cfg = SpectrumConfig::new(ScenarioConfig::default());
    cfg.sector_center_deg = Some(40.0);
    cfg.n_blocks = 100;
    let power = average_shaped_spectrum(&cfg, Execution::default()).unwrap();
    let at = |deg: f64| {
        let i = cfg.angle_grid_deg.iter().position(|&a| a == deg).unwrap();
        power[i]
    };
    let centre = at(40.0);
    let low = at(40.0 - NOTCH_OFFSET_DEG);
    let high = at(40.0 + NOTCH_OFFSET_DEG);
    let (imin, _) = power
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .unwrap();
    let argmin = cfg.angle_grid_deg[imin];
    let depth = (low / centre).min(high / centre);
    let pass = depth >= NOTCH_DEPTH && (argmin - 40.0).abs() <= NOTCH_LOCATION_TOL_DEG;
    report(
        5,
        "noise-shaping notch",
        pass,
        &format!("depth vs ±30° {depth:.1}x, grid minimum at {argmin}°"),
    );
    assert!(pass);
}

#[test]
fn c06_effective_noise_consistency() {
    let cfg = ScenarioConfig {
        n_elements: 128,
        n_users: 4,
        ..ScenarioConfig::default()
    };
    let constellation = Constellation::qam(16).unwrap();
    let alphabet = PhaseAlphabet::discrete(4).unwrap();
    let opts = SigmaDeltaOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let blocks = 100;
    let slots = 1000;
    let mut ratios = Vec::new();
    for _ in 0..blocks {
        let scene = draw_scene(&cfg, &mut rng).unwrap();
        let block = SymbolBlock::random(&constellation, cfg.n_users, slots, &mut rng);
        let inv = SteeringInverse::new(&scene).unwrap();
        let phi = steer_phase_for(cfg.sector_center_deg(), -60.0, scene.geometry()).unwrap();
        let p =
            sigma_delta_zf_precode_with(&scene, &inv, &block, &alphabet, phi, 0.0, &opts).unwrap();
        let y = scene.channel_matrix() * &p.reflections;
        for k in 0..cfg.n_users {
            let sw = p.per_user_noise_std[k];
            let closed = effective_noise_std(&scene, k, phi, 0.0, &opts.noise_model)
                .unwrap()
                .powi(2);
            let measured = (0..slots)
                .map(|t| (y[(k, t)] - p.scale * sw * block.symbols[(k, t)]).norm_sqr())
                .sum::<f64>()
                / slots as f64;
            ratios.push(measured / closed);
        }
    }
    ratios.sort_by(f64::total_cmp);
    let median = ratios[ratios.len() / 2];
    let within = ratios
        .iter()
        .filter(|r| (*r - 1.0).abs() <= SIGMA_W_REL_TOL)
        .count();
    let pass = within == ratios.len();
    report(
        6,
        "effective noise variance",
        pass,
        &format!(
            "measured/closed-form over {} user-blocks x {slots} slots: median {median:.1}, range [{:.1}, {:.1}], {within} within {SIGMA_W_REL_TOL}",
            ratios.len(),
            ratios[0],
            ratios[ratios.len() - 1]
        ),
    );
    assert!(pass);
}

fn desk_curves() -> &'static [BerCurve] {
    static CURVES: OnceLock<Vec<BerCurve>> = OnceLock::new();
    CURVES.get_or_init(|| run_experiment_with(&presets::desk(), Execution::default()).unwrap())
}

fn curve(scheme: SchemeId, levels: Option<u32>) -> &'static BerCurve {
    desk_curves()
        .iter()
        .find(|c| c.scheme == scheme && c.levels == levels)
        .unwrap()
}

fn ci(c: &BerCurve, i: usize) -> (f64, f64) {
    wilson_interval(c.bit_errors[i], c.total_bits[i], Z_95)
}

/// `a ≤ b`, or their 95% intervals overlap.
fn le_within_ci(a: &BerCurve, b: &BerCurve, i: usize) -> bool {
    a.ber[i] <= b.ber[i] || ci(a, i).0 <= ci(b, i).1
}

/// Index whose BER is closest to `target` in log distance (zeros excluded).
fn closest_to(c: &BerCurve, target: f64) -> Option<usize> {
    (0..c.ber.len())
        .filter(|&i| c.ber[i] > 0.0)
        .min_by(|&a, &b| {
            let da = (c.ber[a] / target).log10().abs();
            let db = (c.ber[b] / target).log10().abs();
            da.total_cmp(&db)
        })
}

#[test]
fn c07_phase_levels_ordering() {
    let zf = curve(SchemeId::Zf, None);
    let ce = curve(SchemeId::CeZf, None);
    let sd: Vec<_> = [16, 8, 4]
        .iter()
        .map(|&l| curve(SchemeId::SdZf, Some(l)))
        .collect();
    let top = zf.snr_db.len() - 1;
    let chain = [zf, ce, sd[0], sd[1], sd[2]];
    let mut broken = Vec::new();
    for w in chain.windows(2) {
        if !le_within_ci(w[0], w[1], top) {
            broken.push(format!("{} > {}", w[0].label, w[1].label));
        }
    }
    let at_top: Vec<String> = chain
        .iter()
        .map(|c| format!("{}={:.2e}", c.label, c.ber[top]))
        .collect();

    let mid = closest_to(ce, BER_TARGET).unwrap_or(top / 2);
    let ratio = sd[0].ber[mid] / ce.ber[mid];
    let ratio_ok = ratio <= L16_VS_CE_MAX_RATIO;
    let pass = broken.is_empty() && ratio_ok;
    report(
        7,
        "phase-level ordering",
        pass,
        &format!(
            "at {} dB: {}; order violations: [{}]; sd-zf@16/ce-zf at {} dB (ce-zf {:.2e}) = {:.2}",
            zf.snr_db[top],
            at_top.join(" "),
            broken.join(", "),
            ce.snr_db[mid],
            ce.ber[mid],
            ratio
        ),
    );
    assert!(pass);
}

#[test]
fn c08_overload_and_dither() {
    let zf = curve(SchemeId::Zf, None);
    let dce = curve(SchemeId::ZfDce, Some(4));
    let sd = curve(SchemeId::SdZf, Some(4));
    let dith = curve(SchemeId::OlSdZfDith, Some(4));
    let top = zf.snr_db.len() - 1;

    let gain = dce.ber[top] / sd.ber[top];
    let gain_ok = gain >= SD4_VS_DCE_MIN_GAIN;

    let at = closest_to(zf, BER_TARGET).expect("zf has errors somewhere on the grid");
    let dith_ratio = dith.ber[at] / zf.ber[at];
    let dith_ok = dith_ratio <= DITHER_VS_ZF_MAX_RATIO;

    let lower = sd
        .snr_db
        .iter()
        .position(|&s| s >= sd.snr_db[top] - FLOOR_WINDOW_DB)
        .unwrap();
    let drop = sd.ber[lower] / sd.ber[top];
    let floor_ok = drop < FLOOR_MAX_DROP;

    let pass = gain_ok && dith_ok && floor_ok;
    report(
        8,
        "overload / dither (L=4)",
        pass,
        &format!(
            "zf-dce/sd-zf at {} dB = {:.1}x (need >= {}); ol-sd-zf-dith/zf at {} dB = {:.2} (need <= {}); sd-zf drop over top {} dB = {:.2}x (need < {})",
            zf.snr_db[top], gain, SD4_VS_DCE_MIN_GAIN,
            zf.snr_db[at], dith_ratio, DITHER_VS_ZF_MAX_RATIO,
            FLOOR_WINDOW_DB, drop, FLOOR_MAX_DROP
        ),
    );
    assert!(pass);
}

fn small_config() -> ExperimentConfig {
    let mut c = presets::desk();
    c.scenario.n_elements = 64;
    c.n_trials = 40;
    c.block_len = 20;
    c.snr_grid_db = vec![0.0, 10.0, 20.0];
    c
}

fn csv_bytes(c: &ExperimentConfig, exec: Execution) -> Vec<u8> {
    let curves = run_experiment_with(c, exec).unwrap();
    let mut buf = Vec::new();
    write_csv(&curves, c, &mut buf).unwrap();
    buf
}

#[test]
fn c09_determinism_across_threads() {
    let c = small_config();
    let one = csv_bytes(&c, Execution::Parallel { threads: Some(1) });
    let four = csv_bytes(&c, Execution::Parallel { threads: Some(4) });
    let seq = csv_bytes(&c, Execution::Sequential);
    let pass = one == four && one == seq;
    report(
        9,
        "determinism",
        pass,
        &format!(
            "{} CSV bytes, 1 vs 4 threads vs sequential identical: {pass}",
            one.len()
        ),
    );
    assert!(pass);
}

#[test]
#[ignore = "full-scale run; hours on a single core"]
fn c10_full_scale_replication() {
    for name in ["fig4", "fig5"] {
        let cfg = presets::by_name(name).unwrap();
        let curves = run_experiment_with(&cfg, Execution::default()).unwrap();
        let mut out = Vec::new();
        write_csv(&curves, &cfg, &mut out).unwrap();
        std::io::stderr().write_all(&out).unwrap();
        let complete = curves
            .iter()
            .all(|c| c.trials.iter().all(|&t| t == cfg.n_trials));
        report(
            10,
            &format!("full-scale {name}"),
            complete,
            "completed; shapes to be read off the CSV",
        );
        assert!(complete);
    }
}

#[test]
fn scheme_configs_in_desk_preset() {
    // the curves used above must exist in the preset
    let d = presets::desk();
    for s in [
        SchemeConfig::new(SchemeId::Zf, None),
        SchemeConfig::new(SchemeId::CeZf, None),
        SchemeConfig::new(SchemeId::SdZf, Some(16)),
        SchemeConfig::new(SchemeId::SdZf, Some(8)),
        SchemeConfig::new(SchemeId::SdZf, Some(4)),
        SchemeConfig::new(SchemeId::ZfDce, Some(4)),
    ] {
        assert!(d.schemes.contains(&s), "{}", s.label());
    }
    assert!(d.schemes.iter().any(|s| s.scheme == SchemeId::OlSdZfDith));
}
