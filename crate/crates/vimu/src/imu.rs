//! Per-IMU data model: noise densities, mounting extrinsics, raw samples,
//! biases, and synthetic measurement generation.
//!
//! Noise densities are continuous-time; conversion to per-sample values is
//! `σ/√dt` for measurement noise and `σ·√dt` for the bias random walk, so
//! that integrated statistics are independent of the sample rate.

use nalgebra::Vector3;

use crate::so3::Rot3;
use crate::{Error, Result};

/// Default gravity vector, m/s², z-up global frame.
pub const DEFAULT_GRAVITY: [f64; 3] = [0.0, 0.0, -9.81];

/// Continuous-time noise densities of one IMU.
///
/// Units: `sigma_g` rad/s/√Hz, `sigma_a` m/s²/√Hz, `sigma_wg` rad/s²/√Hz,
/// `sigma_wa` m/s³/√Hz. Defaults are consumer-MEMS class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuNoiseParams {
    pub sigma_g: f64,
    pub sigma_a: f64,
    pub sigma_wg: f64,
    pub sigma_wa: f64,
}

impl Default for ImuNoiseParams {
    fn default() -> Self {
        ImuNoiseParams {
            sigma_g: 1.7e-4,
            sigma_a: 2.0e-3,
            sigma_wg: 1.0e-5,
            sigma_wa: 1.0e-4,
        }
    }
}

impl ImuNoiseParams {
    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("sigma_g", self.sigma_g),
            ("sigma_a", self.sigma_a),
            ("sigma_wg", self.sigma_wg),
            ("sigma_wa", self.sigma_wa),
        ] {
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::ConfigInvalid(format!(
                    "noise density {name} must be strictly positive, got {value}"
                )));
            }
        }
        Ok(())
    }
}

/// Mounting of one IMU relative to the virtual frame `V`:
/// `r_iv` rotates V-frame vectors into the IMU frame, `p_vi` is the IMU
/// position expressed in `V`, meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuExtrinsics {
    pub r_iv: Rot3,
    pub p_vi: Vector3<f64>,
}

impl ImuExtrinsics {
    pub fn identity() -> Self {
        ImuExtrinsics {
            r_iv: Rot3::identity(),
            p_vi: Vector3::zeros(),
        }
    }
}

/// One raw measurement: body rate (rad/s) and specific force (m/s²) at
/// time `t` seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub t: f64,
    pub omega: Vector3<f64>,
    pub accel: Vector3<f64>,
}

impl ImuSample {
    pub fn is_finite(&self) -> bool {
        self.t.is_finite()
            && self.omega.iter().all(|v| v.is_finite())
            && self.accel.iter().all(|v| v.is_finite())
    }
}

/// Slowly varying measurement offsets of one IMU.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuBiases {
    pub gyro: Vector3<f64>,
    pub accel: Vector3<f64>,
}

impl ImuBiases {
    pub fn zero() -> Self {
        ImuBiases {
            gyro: Vector3::zeros(),
            accel: Vector3::zeros(),
        }
    }
}

/// One member of the array.
#[derive(Debug, Clone)]
pub struct ImuUnit {
    pub id: String,
    pub extrinsics: ImuExtrinsics,
    pub noise: ImuNoiseParams,
}

/// The full rigid array: members, shared sample clock, gravity.
#[derive(Debug, Clone)]
pub struct ImuArrayConfig {
    pub imus: Vec<ImuUnit>,
    pub rate_hz: f64,
    pub gravity: Vector3<f64>,
}

impl ImuArrayConfig {
    pub fn validate(&self) -> Result<()> {
        if self.imus.is_empty() {
            return Err(Error::ConfigInvalid("array needs at least one IMU".into()));
        }
        if !(self.rate_hz > 0.0) || !self.rate_hz.is_finite() {
            return Err(Error::ConfigInvalid(format!(
                "rate_hz must be strictly positive, got {}",
                self.rate_hz
            )));
        }
        for unit in &self.imus {
            unit.noise.validate()?;
        }
        let mut ids: Vec<&str> = self.imus.iter().map(|u| u.id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.imus.len() {
            return Err(Error::ConfigInvalid("IMU ids must be unique".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.imus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.imus.is_empty()
    }

    /// Sample spacing, seconds.
    pub fn dt(&self) -> f64 {
        1.0 / self.rate_hz
    }

    pub fn extrinsics(&self) -> Vec<ImuExtrinsics> {
        self.imus.iter().map(|u| u.extrinsics).collect()
    }
}

/// Synthesizes one measurement from ground truth.
///
/// `gyro_draw` and `accel_draw` are standard-normal draws supplied by the
/// caller (the RNG stays caller-owned), scaled here by `σ/√dt`:
///
/// * `omega = true_omega + b_g + σ_g/√dt · n₁`
/// * `accel = true_specific_force + b_a + σ_a/√dt · n₂`
pub fn measure(
    t: f64,
    true_omega: &Vector3<f64>,
    true_specific_force: &Vector3<f64>,
    biases: &ImuBiases,
    params: &ImuNoiseParams,
    dt: f64,
    gyro_draw: &Vector3<f64>,
    accel_draw: &Vector3<f64>,
) -> ImuSample {
    debug_assert!(dt > 0.0);
    let sqrt_dt = dt.sqrt();
    ImuSample {
        t,
        omega: true_omega + biases.gyro + gyro_draw * (params.sigma_g / sqrt_dt),
        accel: true_specific_force + biases.accel + accel_draw * (params.sigma_a / sqrt_dt),
    }
}

/// Advances the bias random walk by one sample interval:
/// `b ← b + σ_w·√dt · n`, so the variance grows linearly in elapsed time.
pub fn step_bias(
    biases: &ImuBiases,
    params: &ImuNoiseParams,
    dt: f64,
    gyro_draw: &Vector3<f64>,
    accel_draw: &Vector3<f64>,
) -> ImuBiases {
    debug_assert!(dt > 0.0);
    let sqrt_dt = dt.sqrt();
    ImuBiases {
        gyro: biases.gyro + gyro_draw * (params.sigma_wg * sqrt_dt),
        accel: biases.accel + accel_draw * (params.sigma_wa * sqrt_dt),
    }
}
