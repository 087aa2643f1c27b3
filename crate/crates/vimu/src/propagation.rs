//! Strapdown propagation of the virtual-IMU state and its 15-dimensional
//! error-state covariance.
//!
//! State ordering is `(q, b_g, v, b_a, p)`; the error state replaces the
//! quaternion with a local angle error `θ̃` defined through
//! `^V R_G ≈ (I − ⌊θ̃⌋) ^V R̂_G`, giving the 15 directions
//! `(θ̃, b̃_g, ṽ, b̃_a, p̃)`. Process noise is ordered
//! `(n_g, n_wg, n_a, n_wa)`.
//!
//! Compared to a single IMU, two extra couplings appear because the fused
//! accelerometer carries rotation-induced lever-arm terms evaluated at the
//! *measured* rate: gyro-bias error and gyro white noise leak into the
//! velocity error through `T Ψ` and `T Ξ` (see [`error_jacobians`]). With
//! all lever arms at zero both blocks vanish exactly and everything
//! reduces to the classical single-IMU matrices.
//!
//! Discretization: the nominal state advances with RK4 (measurements
//! linearly interpolated between the bracketing samples), the covariance
//! with `Φ P Φᵀ + Q_d` where `Φ = expm(F dt)` truncated at third order and
//! `Q_d = ½ dt (Φ G Q_c Gᵀ Φᵀ + G Q_c Gᵀ)`.

use nalgebra::{SMatrix, Vector3, Vector4};

use crate::fusion::{FusionModel, VirtualSample};
use crate::so3::{self, skew, UnitQuaternion};
use crate::{Error, Result};

pub type Matrix15 = SMatrix<f64, 15, 15>;
pub type Matrix15x12 = SMatrix<f64, 15, 12>;
pub type Matrix12 = SMatrix<f64, 12, 12>;

/// Largest propagation step accepted by [`propagate`], seconds.
pub const MAX_DT: f64 = 0.1;

/// Offsets of the error-state blocks.
pub mod idx {
    pub const THETA: usize = 0;
    pub const BG: usize = 3;
    pub const V: usize = 6;
    pub const BA: usize = 9;
    pub const P: usize = 12;
}

/// Nominal 16-dimensional state of the virtual IMU.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VimuState {
    /// Attitude quaternion; rotates V-frame vectors into the global frame.
    pub attitude: UnitQuaternion,
    pub gyro_bias: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub accel_bias: Vector3<f64>,
    pub position: Vector3<f64>,
}

impl VimuState {
    pub fn identity() -> Self {
        VimuState {
            attitude: UnitQuaternion::identity(),
            gyro_bias: Vector3::zeros(),
            velocity: Vector3::zeros(),
            accel_bias: Vector3::zeros(),
            position: Vector3::zeros(),
        }
    }
}

/// 15×15 error-state covariance. The propagation resymmetrizes it after
/// every step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorCovariance {
    pub matrix: Matrix15,
}

impl ErrorCovariance {
    pub fn zeros() -> Self {
        ErrorCovariance {
            matrix: Matrix15::zeros(),
        }
    }

    pub fn from_matrix(matrix: Matrix15) -> Self {
        ErrorCovariance { matrix }
    }

    pub fn symmetrize(&mut self) {
        self.matrix = (self.matrix + self.matrix.transpose()) * 0.5;
    }

    /// Checks the symmetry defect and an eigenvalue floor relative to the
    /// trace; `true` means the matrix is a usable covariance.
    pub fn is_well_formed(&self) -> bool {
        let defect = (self.matrix - self.matrix.transpose()).abs().max();
        if defect > 1e-12 {
            return false;
        }
        let min_eig = self.matrix.symmetric_eigenvalues().min();
        min_eig >= -1e-9 * self.matrix.trace().max(f64::MIN_POSITIVE)
    }
}

/// Block-diagonal continuous-time process noise
/// `diag(Q_gV, Q_wgV, Q_aV, Q_waV)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProcessNoiseSpec {
    pub q_c: Matrix12,
}

impl ProcessNoiseSpec {
    pub fn from_model(model: &FusionModel) -> Self {
        let mut q_c = Matrix12::zeros();
        q_c.fixed_view_mut::<3, 3>(0, 0).copy_from(&model.q_gv);
        q_c.fixed_view_mut::<3, 3>(3, 3).copy_from(&model.q_wgv);
        q_c.fixed_view_mut::<3, 3>(6, 6).copy_from(&model.q_av);
        q_c.fixed_view_mut::<3, 3>(9, 9).copy_from(&model.q_wav);
        ProcessNoiseSpec { q_c }
    }
}

/// Continuous-time state-transition and noise Jacobians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JacobianPair {
    pub f: Matrix15,
    pub g: Matrix15x12,
}

/// Time derivative of the nominal state (bias rates are zero in the
/// nominal path and omitted).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateDerivative {
    pub q_dot: Vector4<f64>,
    pub v_dot: Vector3<f64>,
    pub p_dot: Vector3<f64>,
}

/// Stacked lever-arm correction `R_i ζ̂ p_i` with
/// `ζ̂ = −⌊b̂⌋² + ⌊ω_m⌋⌊b̂⌋ + ⌊b̂⌋⌊ω_m⌋`, the bias-induced part of the
/// rotation terms baked into the fused accelerometer measurement.
///
/// Algebraically identical to `(⌊ω_m⌋² − ⌊ω_m − b̂⌋²) p_i` per block;
/// vanishes for zero bias estimate or zero lever arms.
pub fn lever_arm_bias_correction(
    model: &FusionModel,
    omega_mv: &Vector3<f64>,
    gyro_bias_hat: &Vector3<f64>,
) -> nalgebra::DVector<f64> {
    let b = skew(gyro_bias_hat);
    let w = skew(omega_mv);
    let zeta_hat = -b * b + w * b + b * w;
    let mut out = nalgebra::DVector::zeros(3 * model.n_imus);
    for (i, ext) in model.extrinsics.iter().enumerate() {
        let block = ext.r_iv.matrix() * (zeta_hat * ext.p_vi);
        out.fixed_rows_mut::<3>(3 * i).copy_from(&block);
    }
    out
}

/// Bias-corrected specific-force estimate `â_V = a_mV − b̂_aV + T Ŝ_a`,
/// shared by the dynamics and the Jacobians.
fn specific_force_estimate(
    x: &VimuState,
    u: &VirtualSample,
    model: &FusionModel,
) -> Vector3<f64> {
    let s_a_hat = lever_arm_bias_correction(model, &u.omega, &x.gyro_bias);
    let correction = &model.accel_map * s_a_hat;
    u.accel - x.accel_bias + Vector3::new(correction[0], correction[1], correction[2])
}

/// Continuous-time dynamics `f(x̂, ω_mV, a_mV)`:
///
/// * `q̇ = ½ Ω(ω_mV − b̂_g) q`
/// * `v̇ = R(q)(a_mV − b̂_a + T Ŝ_a) + g`
/// * `ṗ = v`
pub fn state_derivative(
    x: &VimuState,
    u: &VirtualSample,
    model: &FusionModel,
    gravity: &Vector3<f64>,
) -> StateDerivative {
    let omega_hat = u.omega - x.gyro_bias;
    let a_hat = specific_force_estimate(x, u, model);
    StateDerivative {
        q_dot: so3::quat_derivative(&x.attitude, &omega_hat),
        v_dot: x.attitude.to_rotation() * a_hat + gravity,
        p_dot: x.velocity,
    }
}

/// Continuous-time error-state Jacobians `F` and `G`, linearized at
/// `(x, u)`.
///
/// Nonzero rows:
///
/// ```text
/// θ̃̇ = −⌊ω̂⌋ θ̃ − b̃_g − n_g
/// ṽ̇ = −R̂⌊â_V⌋ θ̃ + R̂TΨ b̃_g − R̂ b̃_a + R̂TΞ n_g − R̂ n_a
/// ḃ̃_g = n_wg,   ḃ̃_a = n_wa,   p̃̇ = ṽ
/// ```
///
/// with `R̂` the body-to-global attitude estimate, `ω̂ = ω_mV − b̂_g`, and
/// the stacked blocks `Ψ = Ξ = [R_i(−⌊ω̂⌋⌊p_i⌋ − ⌊⌊ω̂⌋p_i⌋)]` — the
/// derivative of the fused lever-arm terms with respect to gyro bias and
/// gyro noise. The gyro-noise coupling sits in the first noise column,
/// next to the `−I` it shares a source with. Every block is pinned against
/// central finite differences of [`state_derivative`] in the test suites;
/// co-located IMUs give `Ψ = Ξ = 0` and the classical single-IMU matrices.
pub fn error_jacobians(x: &VimuState, u: &VirtualSample, model: &FusionModel) -> JacobianPair {
    let omega_hat = u.omega - x.gyro_bias;
    let r_hat = *x.attitude.to_rotation().matrix();
    let a_hat = specific_force_estimate(x, u, model);

    // Ψ (= Ξ) folded through T once: a 3×3 block reused in F and G.
    let w = skew(&omega_hat);
    let mut psi = nalgebra::DMatrix::<f64>::zeros(3 * model.n_imus, 3);
    for (i, ext) in model.extrinsics.iter().enumerate() {
        let block = ext.r_iv.matrix() * (-w * skew(&ext.p_vi) - skew(&(w * ext.p_vi)));
        psi.view_mut((3 * i, 0), (3, 3)).copy_from(&block);
    }
    let t_psi_d = &model.accel_map * psi;
    let t_psi = nalgebra::Matrix3::from_fn(|i, j| t_psi_d[(i, j)]);
    let eye = nalgebra::Matrix3::identity();

    let mut f = Matrix15::zeros();
    f.fixed_view_mut::<3, 3>(idx::THETA, idx::THETA).copy_from(&(-w));
    f.fixed_view_mut::<3, 3>(idx::THETA, idx::BG).copy_from(&(-eye));
    f.fixed_view_mut::<3, 3>(idx::V, idx::THETA)
        .copy_from(&(-r_hat * skew(&a_hat)));
    f.fixed_view_mut::<3, 3>(idx::V, idx::BG)
        .copy_from(&(r_hat * t_psi));
    f.fixed_view_mut::<3, 3>(idx::V, idx::BA).copy_from(&(-r_hat));
    f.fixed_view_mut::<3, 3>(idx::P, idx::V).copy_from(&eye);

    let mut g = Matrix15x12::zeros();
    g.fixed_view_mut::<3, 3>(idx::THETA, 0).copy_from(&(-eye));
    g.fixed_view_mut::<3, 3>(idx::BG, 3).copy_from(&eye);
    g.fixed_view_mut::<3, 3>(idx::V, 0).copy_from(&(r_hat * t_psi));
    g.fixed_view_mut::<3, 3>(idx::V, 6).copy_from(&(-r_hat));
    g.fixed_view_mut::<3, 3>(idx::BA, 9).copy_from(&eye);

    JacobianPair { f, g }
}

fn check_dt(dt: f64) -> Result<()> {
    if !dt.is_finite() || !(dt > 0.0 && dt <= MAX_DT) {
        return Err(Error::InvalidDt { dt_s: dt });
    }
    Ok(())
}

fn interpolate(u0: &VirtualSample, u1: &VirtualSample, alpha: f64) -> VirtualSample {
    VirtualSample {
        t: u0.t + alpha * (u1.t - u0.t),
        omega: u0.omega + alpha * (u1.omega - u0.omega),
        accel: u0.accel + alpha * (u1.accel - u0.accel),
    }
}

fn advance(x: &VimuState, d: &StateDerivative, h: f64) -> VimuState {
    VimuState {
        attitude: UnitQuaternion::from_vector(&(x.attitude.as_vector() + h * d.q_dot))
            .expect("quaternion stays normalizable over one stage"),
        gyro_bias: x.gyro_bias,
        velocity: x.velocity + h * d.v_dot,
        accel_bias: x.accel_bias,
        position: x.position + h * d.p_dot,
    }
}

/// Advances the nominal state over `[t, t+dt]` with RK4, interpolating the
/// measurement linearly between the bracketing samples and renormalizing
/// the quaternion at the end of the step.
pub fn propagate_state(
    x: &VimuState,
    u_pair: (&VirtualSample, &VirtualSample),
    dt: f64,
    model: &FusionModel,
    gravity: &Vector3<f64>,
) -> Result<VimuState> {
    check_dt(dt)?;
    let (u0, u1) = u_pair;
    let u_mid = interpolate(u0, u1, 0.5);

    let k1 = state_derivative(x, u0, model, gravity);
    let k2 = state_derivative(&advance(x, &k1, 0.5 * dt), &u_mid, model, gravity);
    let k3 = state_derivative(&advance(x, &k2, 0.5 * dt), &u_mid, model, gravity);
    let k4 = state_derivative(&advance(x, &k3, dt), u1, model, gravity);

    let combined = StateDerivative {
        q_dot: (k1.q_dot + 2.0 * k2.q_dot + 2.0 * k3.q_dot + k4.q_dot) / 6.0,
        v_dot: (k1.v_dot + 2.0 * k2.v_dot + 2.0 * k3.v_dot + k4.v_dot) / 6.0,
        p_dot: (k1.p_dot + 2.0 * k2.p_dot + 2.0 * k3.p_dot + k4.p_dot) / 6.0,
    };
    let mut out = advance(x, &combined, dt);
    out.attitude = out.attitude.normalized();
    Ok(out)
}

/// Propagates state and covariance over one step.
///
/// The Jacobians are evaluated at the incoming state with the midpoint
/// measurement. `Φ` is the third-order truncation of `expm(F dt)`; the
/// discrete noise uses the trapezoidal form
/// `Q_d = ½ dt (Φ G Q_c Gᵀ Φᵀ + G Q_c Gᵀ)`. The covariance is
/// resymmetrized before returning.
pub fn propagate(
    x: &VimuState,
    p: &ErrorCovariance,
    u_pair: (&VirtualSample, &VirtualSample),
    dt: f64,
    noise: &ProcessNoiseSpec,
    model: &FusionModel,
    gravity: &Vector3<f64>,
) -> Result<(VimuState, ErrorCovariance)> {
    check_dt(dt)?;
    let next = propagate_state(x, u_pair, dt, model, gravity)?;

    let u_mid = interpolate(u_pair.0, u_pair.1, 0.5);
    let jac = error_jacobians(x, &u_mid, model);

    let a = jac.f * dt;
    let a2 = a * a;
    let phi = Matrix15::identity() + a + a2 * 0.5 + a2 * a * (1.0 / 6.0);

    let gqg = jac.g * noise.q_c * jac.g.transpose();
    let q_d = (phi * gqg * phi.transpose() + gqg) * (0.5 * dt);

    let mut p_next = ErrorCovariance::from_matrix(phi * p.matrix * phi.transpose() + q_d);
    p_next.symmetrize();
    Ok((next, p_next))
}

/// Repeatedly propagates from `x0, p0` along a sample stream until
/// `horizon_s` past the first sample, returning state and covariance after
/// every step.
pub fn predict_horizon(
    x0: &VimuState,
    p0: &ErrorCovariance,
    stream: &[VirtualSample],
    horizon_s: f64,
    noise: &ProcessNoiseSpec,
    model: &FusionModel,
    gravity: &Vector3<f64>,
) -> Result<Vec<(VimuState, ErrorCovariance)>> {
    let start = stream.first().map_or(0.0, |s| s.t);
    let t_end = start + horizon_s;
    let stream_end = stream.last().map_or(start, |s| s.t);
    if stream.len() < 2 || stream_end < t_end - 1e-9 {
        return Err(Error::StreamExhausted {
            stream_end_s: stream_end,
            needed_s: t_end,
        });
    }
    let mut out = Vec::new();
    let mut x = *x0;
    let mut p = *p0;
    for pair in stream.windows(2) {
        if pair[0].t >= t_end - 1e-9 {
            break;
        }
        let dt = pair[1].t - pair[0].t;
        let (xn, pn) = propagate(&x, &p, (&pair[0], &pair[1]), dt, noise, model, gravity)?;
        x = xn;
        p = pn;
        out.push((x, p));
    }
    Ok(out)
}
