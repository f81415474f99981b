//! Gray-labelled square QAM, the downlink transmission `y = H̃ x + v`,
//! receiver-side detection and bit-error counting.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::precoder::PrecodeBlock;
use crate::scene::Scene;

/// Square M-QAM with a Gray label on each axis and unit average energy.
///
/// Point `i` carries the bit label `i`: the high half of the bits selects
/// the in-phase level, the low half the quadrature level, each Gray coded.
#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    order: u32,
    side: u32,
    bits_per_axis: u32,
    scale: f64,
    points: Vec<Complex64>,
}

fn gray(v: u32) -> u32 {
    v ^ (v >> 1)
}

fn gray_inverse(mut g: u32) -> u32 {
    let mut v = g;
    while g > 1 {
        g >>= 1;
        v ^= g;
    }
    v
}

impl Constellation {
    /// `order` must be an even power of two: 4, 16, 64, ...
    pub fn qam(order: u32) -> Result<Self> {
        if order < 4 || !order.is_power_of_two() || !order.trailing_zeros().is_multiple_of(2) {
            return Err(Error::Config(format!(
                "QAM order must be 4, 16, 64, ...; got {order}"
            )));
        }
        let bits_per_axis = order.trailing_zeros() / 2;
        let side = 1u32 << bits_per_axis;
        // mean |point|² of the odd-integer lattice is 2(M-1)/3
        let scale = (2.0 * (order as f64 - 1.0) / 3.0).sqrt();
        let level = |g: u32| (2.0 * gray_inverse(g) as f64 - (side as f64 - 1.0)) / scale;
        let mask = side - 1;
        let points = (0..order)
            .map(|label| Complex64::new(level(label >> bits_per_axis), level(label & mask)))
            .collect();
        Ok(Self {
            order,
            side,
            bits_per_axis,
            scale,
            points,
        })
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn bits_per_symbol(&self) -> u32 {
        2 * self.bits_per_axis
    }

    /// Points indexed by bit label.
    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    pub fn point(&self, label: u32) -> Complex64 {
        self.points[label as usize]
    }

    fn slice_axis(&self, v: f64) -> u32 {
        let half = (self.side as f64 - 1.0) / 2.0;
        let idx = (v * self.scale / 2.0 + half).round();
        let idx = if idx.is_nan() {
            0.0
        } else {
            idx.clamp(0.0, self.side as f64 - 1.0)
        };
        gray(idx as u32)
    }

    /// Label of the nearest point.
    pub fn decide(&self, y: Complex64) -> u32 {
        (self.slice_axis(y.re) << self.bits_per_axis) | self.slice_axis(y.im)
    }

    /// Maps a bit string (MSB first per symbol, values 0/1) to symbols.
    pub fn map_bits(&self, bits: &[u8]) -> Result<Vec<Complex64>> {
        let per = self.bits_per_symbol() as usize;
        if !bits.len().is_multiple_of(per) {
            return Err(Error::Domain(format!(
                "{} bits is not a multiple of {per}",
                bits.len()
            )));
        }
        bits.chunks(per)
            .map(|chunk| {
                let mut label = 0u32;
                for &b in chunk {
                    if b > 1 {
                        return Err(Error::Domain(format!("bit value {b} is not 0 or 1")));
                    }
                    label = (label << 1) | b as u32;
                }
                Ok(self.point(label))
            })
            .collect()
    }

    /// Nearest-point demapping back to bits, MSB first per symbol.
    pub fn demap_symbols(&self, symbols: &[Complex64]) -> Vec<u8> {
        let per = self.bits_per_symbol();
        symbols
            .iter()
            .flat_map(|&s| {
                let label = self.decide(s);
                (0..per).rev().map(move |i| ((label >> i) & 1) as u8)
            })
            .collect()
    }
}

/// K×T block of transmitted symbols, stored both as labels and values.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolBlock {
    pub labels: DMatrix<u32>,
    pub symbols: DMatrix<Complex64>,
    pub order: u32,
}

impl SymbolBlock {
    pub fn from_labels(labels: DMatrix<u32>, constellation: &Constellation) -> Result<Self> {
        if let Some(bad) = labels.iter().find(|&&l| l >= constellation.order()) {
            return Err(Error::Domain(format!(
                "label {bad} outside {}-QAM",
                constellation.order()
            )));
        }
        let symbols = labels.map(|l| constellation.point(l));
        Ok(Self {
            labels,
            symbols,
            order: constellation.order(),
        })
    }

    /// i.i.d. uniform symbols.
    pub fn random<R: Rng + ?Sized>(
        constellation: &Constellation,
        n_users: usize,
        block_len: usize,
        rng: &mut R,
    ) -> Self {
        let order = constellation.order();
        let labels = DMatrix::from_fn(n_users, block_len, |_, _| rng.random_range(0..order));
        let symbols = labels.map(|l| constellation.point(l));
        Self {
            labels,
            symbols,
            order,
        }
    }

    pub fn n_users(&self) -> usize {
        self.labels.nrows()
    }

    pub fn block_len(&self) -> usize {
        self.labels.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedBlock {
    /// K×T samples `y_{k,t}`.
    pub samples: DMatrix<Complex64>,
    pub noise_std: f64,
}

/// K×T circularly-symmetric complex Gaussian draws with unit variance.
pub fn unit_noise<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<Complex64> {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    DMatrix::from_fn(rows, cols, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        Complex64::new(re * h, im * h)
    })
}

/// `y_{k,t} = h̃_kᵀ x_t + σ_v n_{k,t}` with caller-supplied unit noise.
pub fn transmit_with_noise(
    scene: &Scene,
    reflections: &DMatrix<Complex64>,
    sigma_v: f64,
    noise: &DMatrix<Complex64>,
) -> Result<ReceivedBlock> {
    if reflections.nrows() != scene.n_elements() {
        return Err(Error::Domain(format!(
            "reflections have {} rows, array has {} elements",
            reflections.nrows(),
            scene.n_elements()
        )));
    }
    if noise.shape() != (scene.n_users(), reflections.ncols()) {
        return Err(Error::Domain("noise block has the wrong shape".into()));
    }
    let mut samples = noise * Complex64::new(sigma_v, 0.0);
    samples.gemm(
        Complex64::new(1.0, 0.0),
        &scene.channel_matrix(),
        reflections,
        Complex64::new(1.0, 0.0),
    );
    Ok(ReceivedBlock {
        samples,
        noise_std: sigma_v,
    })
}

/// `y_{k,t} = h̃_kᵀ x_t + v_{k,t}`, `v ~ CN(0, σ_v²)` i.i.d.
pub fn transmit<R: Rng + ?Sized>(
    scene: &Scene,
    reflections: &DMatrix<Complex64>,
    sigma_v: f64,
    rng: &mut R,
) -> Result<ReceivedBlock> {
    let noise = unit_noise(scene.n_users(), reflections.ncols(), rng);
    transmit_with_noise(scene, reflections, sigma_v, &noise)
}

/// Symbol decisions for a received block.
///
/// Each sample has the known dither contribution removed (when the block is
/// dithered) and is divided by the user's nominal gain before slicing.
pub fn detect(
    received: &ReceivedBlock,
    meta: &PrecodeBlock,
    scene: &Scene,
    constellation: &Constellation,
) -> Result<DMatrix<u32>> {
    let k_users = scene.n_users();
    if received.samples.nrows() != k_users || meta.receive_gain.len() != k_users {
        return Err(Error::Detection(format!(
            "expected {k_users} users, got {} rows and {} gains",
            received.samples.nrows(),
            meta.receive_gain.len()
        )));
    }
    let offsets = match (&meta.dither, meta.scheme.is_dithered()) {
        (Some(d), _) => {
            if d.samples.len() != scene.n_elements() {
                return Err(Error::Detection(
                    "dither length does not match the array".into(),
                ));
            }
            let u = nalgebra::DVector::from_column_slice(&d.samples);
            let hu = scene.channel_matrix() * u;
            hu.iter().map(|v| v * d.dither_weight).collect()
        }
        (None, true) => {
            return Err(Error::Detection(format!(
                "scheme {} needs dither metadata",
                meta.scheme
            )))
        }
        (None, false) => vec![Complex64::new(0.0, 0.0); k_users],
    };
    let inv_gain: Vec<Complex64> = meta.receive_gain.iter().map(|g| g.inv()).collect();
    Ok(DMatrix::from_fn(
        k_users,
        received.samples.ncols(),
        |k, t| constellation.decide((received.samples[(k, t)] - offsets[k]) * inv_gain[k]),
    ))
}

/// Hamming distance between decided and transmitted labels, and the
/// number of bits compared.
pub fn count_bit_errors(
    decided: &DMatrix<u32>,
    truth: &DMatrix<u32>,
    constellation: &Constellation,
) -> Result<(u64, u64)> {
    if decided.shape() != truth.shape() {
        return Err(Error::Domain(
            "decision and truth blocks differ in shape".into(),
        ));
    }
    let errors = decided
        .iter()
        .zip(truth.iter())
        .map(|(a, b)| (a ^ b).count_ones() as u64)
        .sum();
    let bits = (truth.len() as u64) * constellation.bits_per_symbol() as u64;
    Ok((errors, bits))
}
