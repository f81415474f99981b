//! BS → RIS → user geometry and the cascaded channel.
//!
//! The RIS is a uniform linear array. With the base station at arrival angle
//! `θ_in` and user `k` at departure angle `θ_k`, the end-to-end channel of
//! user `k` is `h̃_k = α̃_k · ã_k` where `α̃_k = β α_k` and
//! `ã_k[n] = exp(-j ω_k n)`, `ω_k = 2π (d/λ) (sin θ_in + sin θ_k)`.
//! Antenna indices are 0-based.

use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rejection-sampling budget for drawing separated user angles.
pub const MAX_ANGLE_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub n_elements: usize,
    pub spacing_over_wavelength: f64,
}

impl ArrayGeometry {
    pub fn new(n_elements: usize, spacing_over_wavelength: f64) -> Result<Self> {
        let g = Self {
            n_elements,
            spacing_over_wavelength,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_elements == 0 {
            return Err(Error::Config("array needs at least one element".into()));
        }
        if !(self.spacing_over_wavelength > 0.0 && self.spacing_over_wavelength.is_finite()) {
            return Err(Error::Config(format!(
                "element spacing must be positive, got {}",
                self.spacing_over_wavelength
            )));
        }
        Ok(())
    }

    /// Spatial frequency `2π (d/λ) sin θ` for an angle in degrees.
    pub fn spatial_frequency(&self, angle_deg: f64) -> f64 {
        TAU * self.spacing_over_wavelength * angle_deg.to_radians().sin()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserChannel {
    pub angle_deg: f64,
    pub gain: Complex64,
}

/// Checks that an angle lies strictly inside (-90°, 90°).
pub fn check_angle(angle_deg: f64, what: &str) -> Result<()> {
    if angle_deg.is_finite() && angle_deg.abs() < 90.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "{what} must lie in (-90°, 90°), got {angle_deg}"
        )))
    }
}

/// `exp(-j ω n)` for `n = 0..len`.
pub fn phase_ramp(omega: f64, len: usize) -> DVector<Complex64> {
    DVector::from_iterator(
        len,
        (0..len).map(|n| Complex64::from_polar(1.0, -omega * n as f64)),
    )
}

/// Downlink steering vector of the RIS towards `angle_deg`.
pub fn steering_vector(angle_deg: f64, geometry: &ArrayGeometry) -> Result<DVector<Complex64>> {
    check_angle(angle_deg, "steering angle")?;
    geometry.validate()?;
    Ok(phase_ramp(
        geometry.spatial_frequency(angle_deg),
        geometry.n_elements,
    ))
}

/// Channel state of one coherence block. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    geometry: ArrayGeometry,
    arrival_angle_deg: f64,
    arrival_gain: Complex64,
    users: Vec<UserChannel>,
    cascaded_gains: Vec<Complex64>,
    spatial_freqs: Vec<f64>,
    steering: DMatrix<Complex64>,
}

/// Builds the cascaded channel for the given arrival and users.
pub fn cascaded_channel(
    arrival_angle_deg: f64,
    arrival_gain: Complex64,
    users: Vec<UserChannel>,
    geometry: ArrayGeometry,
) -> Result<Scene> {
    geometry.validate()?;
    check_angle(arrival_angle_deg, "arrival angle")?;
    if users.is_empty() {
        return Err(Error::Config("scene needs at least one user".into()));
    }
    if users.len() > geometry.n_elements {
        return Err(Error::Config(format!(
            "{} users exceed {} array elements",
            users.len(),
            geometry.n_elements
        )));
    }
    if !(arrival_gain.norm() > 0.0) {
        return Err(Error::Config("arrival gain must be nonzero".into()));
    }
    for u in &users {
        check_angle(u.angle_deg, "user angle")?;
        if !(u.gain.norm() > 0.0) {
            return Err(Error::Config("user gain must be nonzero".into()));
        }
    }

    let arrival_freq = geometry.spatial_frequency(arrival_angle_deg);
    let spatial_freqs: Vec<f64> = users
        .iter()
        .map(|u| arrival_freq + geometry.spatial_frequency(u.angle_deg))
        .collect();
    let cascaded_gains = users.iter().map(|u| arrival_gain * u.gain).collect();

    let n = geometry.n_elements;
    let steering = DMatrix::from_fn(users.len(), n, |k, i| {
        Complex64::from_polar(1.0, -spatial_freqs[k] * i as f64)
    });

    Ok(Scene {
        geometry,
        arrival_angle_deg,
        arrival_gain,
        users,
        cascaded_gains,
        spatial_freqs,
        steering,
    })
}

impl Scene {
    pub fn geometry(&self) -> &ArrayGeometry {
        &self.geometry
    }

    pub fn n_elements(&self) -> usize {
        self.geometry.n_elements
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn arrival_angle_deg(&self) -> f64 {
        self.arrival_angle_deg
    }

    pub fn arrival_gain(&self) -> Complex64 {
        self.arrival_gain
    }

    pub fn users(&self) -> &[UserChannel] {
        &self.users
    }

    /// `α̃_k = β α_k` per user.
    pub fn cascaded_gains(&self) -> &[Complex64] {
        &self.cascaded_gains
    }

    /// `ω_k` per user, in radians per element.
    pub fn spatial_freqs(&self) -> &[f64] {
        &self.spatial_freqs
    }

    /// The K×N unit-modulus matrix with rows `ã_k`.
    pub fn steering_matrix(&self) -> &DMatrix<Complex64> {
        &self.steering
    }

    /// The K×N channel matrix with rows `h̃_k = α̃_k ã_k`.
    pub fn channel_matrix(&self) -> DMatrix<Complex64> {
        let mut h = self.steering.clone();
        for (k, mut row) in h.row_iter_mut().enumerate() {
            row *= self.cascaded_gains[k];
        }
        h
    }

    /// Cascaded steering vector towards an arbitrary departure angle.
    pub fn cascaded_steering(&self, angle_deg: f64) -> Result<DVector<Complex64>> {
        check_angle(angle_deg, "departure angle")?;
        let omega = self.geometry.spatial_frequency(self.arrival_angle_deg)
            + self.geometry.spatial_frequency(angle_deg);
        Ok(phase_ramp(omega, self.geometry.n_elements))
    }
}

/// Random scenario distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n_elements: usize,
    pub spacing_over_wavelength: f64,
    pub arrival_angle_deg: f64,
    pub n_users: usize,
    pub user_sector_deg: [f64; 2],
    pub min_separation_deg: f64,
    pub gain_r0: f64,
    pub gain_r1_range: [f64; 2],
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n_elements: 512,
            spacing_over_wavelength: 0.125,
            arrival_angle_deg: -60.0,
            n_users: 8,
            user_sector_deg: [20.0, 60.0],
            min_separation_deg: 1.0,
            gain_r0: 30.0,
            gain_r1_range: [20.0, 100.0],
        }
    }
}

impl ScenarioConfig {
    pub fn geometry(&self) -> ArrayGeometry {
        ArrayGeometry {
            n_elements: self.n_elements,
            spacing_over_wavelength: self.spacing_over_wavelength,
        }
    }

    /// Midpoint of the user sector.
    pub fn sector_center_deg(&self) -> f64 {
        0.5 * (self.user_sector_deg[0] + self.user_sector_deg[1])
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry().validate()?;
        check_angle(self.arrival_angle_deg, "arrival angle")
            .map_err(|e| Error::Config(e.to_string()))?;
        if self.n_users == 0 {
            return Err(Error::Config("n_users must be at least 1".into()));
        }
        if self.n_users > self.n_elements {
            return Err(Error::Config(format!(
                "n_users ({}) exceeds n_elements ({})",
                self.n_users, self.n_elements
            )));
        }
        let [lo, hi] = self.user_sector_deg;
        for a in [lo, hi] {
            check_angle(a, "user sector bound").map_err(|e| Error::Config(e.to_string()))?;
        }
        if !(lo < hi) {
            return Err(Error::Config(format!("empty user sector [{lo}, {hi}]")));
        }
        if !(self.min_separation_deg >= 0.0 && self.min_separation_deg.is_finite()) {
            return Err(Error::Config("min_separation_deg must be >= 0".into()));
        }
        if (self.n_users - 1) as f64 * self.min_separation_deg > hi - lo {
            return Err(Error::Config(format!(
                "{} users cannot be separated by {}° inside [{lo}, {hi}]",
                self.n_users, self.min_separation_deg
            )));
        }
        let [r1_lo, r1_hi] = self.gain_r1_range;
        if !(self.gain_r0 > 0.0 && r1_lo > 0.0 && r1_lo <= r1_hi && r1_hi.is_finite()) {
            return Err(Error::Config(format!(
                "invalid gain model r0={} r1 in [{r1_lo}, {r1_hi}]",
                self.gain_r0
            )));
        }
        Ok(())
    }

    /// Complex gain with phase ~ U[-π, π] and modulus `r0 / r1`, r1 ~ U[r1_lo, r1_hi].
    pub fn draw_gain<R: Rng + ?Sized>(&self, rng: &mut R) -> Complex64 {
        let [r1_lo, r1_hi] = self.gain_r1_range;
        let phase = rng.random_range(-PI..=PI);
        let r1 = if r1_lo < r1_hi {
            rng.random_range(r1_lo..=r1_hi)
        } else {
            r1_lo
        };
        Complex64::from_polar(self.gain_r0 / r1, phase)
    }

    /// Draws `n_users` angles uniformly in the sector with the minimum
    /// pairwise separation, by rejection. Returned in ascending order.
    pub fn draw_angles<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        let [lo, hi] = self.user_sector_deg;
        let mut angles = vec![0.0; self.n_users];
        for _ in 0..MAX_ANGLE_ATTEMPTS {
            for a in angles.iter_mut() {
                *a = rng.random_range(lo..=hi);
            }
            angles.sort_by(f64::total_cmp);
            if angles
                .windows(2)
                .all(|w| w[1] - w[0] >= self.min_separation_deg)
            {
                return Ok(angles);
            }
        }
        Err(Error::Generation {
            attempts: MAX_ANGLE_ATTEMPTS,
            reason: format!(
                "no {} angles in [{lo}, {hi}] separated by {}°",
                self.n_users, self.min_separation_deg
            ),
        })
    }
}

/// Draws one fading block from the scenario distribution.
pub fn draw_scene<R: Rng + ?Sized>(config: &ScenarioConfig, rng: &mut R) -> Result<Scene> {
    config.validate()?;
    let arrival_gain = config.draw_gain(rng);
    let angles = config.draw_angles(rng)?;
    let users = angles
        .into_iter()
        .map(|angle_deg| UserChannel {
            angle_deg,
            gain: config.draw_gain(rng),
        })
        .collect();
    cascaded_channel(
        config.arrival_angle_deg,
        arrival_gain,
        users,
        config.geometry(),
    )
}
