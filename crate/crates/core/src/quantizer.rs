//! Discrete and continuous phase quantizers.
//!
//! An `L`-level alphabet holds the points `exp(j(2πℓ/L + offset))` for
//! `ℓ = 0..L`. Index 0 is the point `1 + 0j` when the offset is zero. The
//! continuous alphabet projects onto the unit circle.
//!
//! Quantization error follows the modulator convention: `point = input + error`.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Smallest number of levels covered by the no-overload bound.
pub const MIN_LEVELS: u32 = 4;

/// The output alphabet of a phase quantizer.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseAlphabet {
    levels: Option<u32>,
    offset: f64,
    points: Vec<Complex64>,
}

impl PhaseAlphabet {
    /// An `L`-point alphabet. `L` must be at least 4.
    pub fn discrete(levels: u32) -> Result<Self> {
        Self::discrete_with_offset(levels, 0.0)
    }

    pub fn discrete_with_offset(levels: u32, offset: f64) -> Result<Self> {
        if levels < MIN_LEVELS {
            return Err(Error::Domain(format!(
                "phase alphabet needs at least {MIN_LEVELS} levels, got {levels}"
            )));
        }
        if !offset.is_finite() {
            return Err(Error::Domain("phase offset must be finite".into()));
        }
        let step = TAU / levels as f64;
        let points = (0..levels)
            .map(|l| Complex64::from_polar(1.0, step * l as f64 + offset))
            .collect();
        Ok(Self {
            levels: Some(levels),
            offset,
            points,
        })
    }

    /// The continuous-phase limit: every unit-modulus value is a valid output.
    pub fn continuous() -> Self {
        Self {
            levels: None,
            offset: 0.0,
            points: Vec::new(),
        }
    }

    pub fn from_levels(levels: Option<u32>) -> Result<Self> {
        match levels {
            Some(l) => Self::discrete(l),
            None => Ok(Self::continuous()),
        }
    }

    /// Number of levels, or `None` for the continuous alphabet.
    pub fn levels(&self) -> Option<u32> {
        self.levels
    }

    pub fn is_continuous(&self) -> bool {
        self.levels.is_none()
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// The alphabet points in index order (empty for the continuous alphabet).
    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    /// True when `value` is an output this alphabet can produce.
    pub fn contains(&self, value: Complex64, tol: f64) -> bool {
        match self.levels {
            None => (value.norm() - 1.0).abs() <= tol,
            Some(_) => self.points.iter().any(|p| (p - value).norm() <= tol),
        }
    }

    /// Index of the nearest point in phase.
    ///
    /// Ties, including the zero input, resolve to the smallest index.
    /// Panics on the continuous alphabet.
    pub fn nearest_index(&self, a: Complex64) -> usize {
        let levels = self.levels.expect("nearest_index on a continuous alphabet") as usize;
        let step = TAU / levels as f64;
        let t = (a.arg() - self.offset) / step;
        let lo = t.floor().rem_euclid(levels as f64) as usize % levels;
        let hi = (lo + 1) % levels;
        let score = |i: usize| (self.points[i].conj() * a).re;
        let (s_lo, s_hi) = (score(lo), score(hi));
        // scores within rounding of each other count as a tie
        let tie = 8.0 * f64::EPSILON * a.norm();
        if s_hi - s_lo > tie || ((s_hi - s_lo).abs() <= tie && hi < lo) {
            hi
        } else {
            lo
        }
    }

    /// Quantizes `a`, returning the output point and the error `point - a`.
    #[inline]
    pub fn quantize(&self, a: Complex64) -> (Complex64, Complex64) {
        let point = match self.levels {
            Some(_) => self.points[self.nearest_index(a)],
            None => {
                let r = a.norm();
                if r > 0.0 {
                    a / r
                } else {
                    Complex64::new(1.0, 0.0)
                }
            }
        };
        (point, point - a)
    }

    /// Largest input amplitude for which a first-order modulator built on
    /// this alphabet keeps every error sample inside the unit disc.
    ///
    /// `sin(2π/L)/sin(π/L) - 1`, which equals `2cos(π/L) - 1`, and 1 in the
    /// continuous limit.
    pub fn no_overload_amplitude(&self) -> f64 {
        match self.levels {
            None => 1.0,
            Some(l) => amplitude_for_levels(l),
        }
    }

    /// Quantizer input radius at which the worst-case error reaches 1.
    pub fn error_radius(&self) -> f64 {
        self.no_overload_amplitude() + 1.0
    }
}

/// `A_L*` for a given level count, with the `L >= 4` domain check.
pub fn no_overload_amplitude(levels: Option<u32>) -> Result<f64> {
    match levels {
        None => Ok(1.0),
        Some(l) if l < MIN_LEVELS => Err(Error::Domain(format!(
            "no-overload bound needs at least {MIN_LEVELS} levels, got {l}"
        ))),
        Some(l) => Ok(amplitude_for_levels(l)),
    }
}

fn amplitude_for_levels(levels: u32) -> f64 {
    let l = levels as f64;
    (TAU / l).sin() / (PI / l).sin() - 1.0
}
