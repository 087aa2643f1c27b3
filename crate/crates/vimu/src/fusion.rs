//! Mapping stacked per-IMU measurements onto one virtual IMU.
//!
//! For an array of `n` IMUs with extrinsics `(R_iV, p_i)` the model stacks
//!
//! ```text
//! N = [R_1V; …; R_nV]            (3n×3)
//! Y = [R_1V⌊p_1⌋; …; R_nV⌊p_n⌋]  (3n×3)
//! S(w) = [R_1V⌊w⌋²p_1; …]        (3n)
//! ```
//!
//! The virtual gyro is the least-squares combination `ω_V = N⁺ ω_stack`.
//! The virtual accelerometer solves the stacked specific-force problem
//! after multiplying the residual by `Zᵀ` (orthonormal basis of the left
//! nullspace of `Y`), which removes the dependence on the unknown angular
//! acceleration: `a_V = T (a_stack − S(ω_V))` with `T = (ZᵀN)⁺Zᵀ`.
//!
//! Because the maps are linear, the virtual noise and bias-walk
//! covariances follow directly: `Q_gV = N⁺ diag(σ_g²) N⁺ᵀ` and
//! `Q_aV = T diag(σ_a²) Tᵀ` (and likewise for the walk densities). For
//! `n` identical IMUs with identity-equivalent rotations this reduces to
//! the `σ²/n` scaling that motivates using an array in the first place.
//!
//! All matrices depend only on the array geometry and noise densities, so
//! a [`FusionModel`] is built once per configuration and reused; it is
//! immutable and safe to share across threads.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::imu::{ImuArrayConfig, ImuBiases, ImuExtrinsics, ImuSample};
use crate::so3::{self, skew};
use crate::{Error, Result};

/// Maximum timestamp skew tolerated between samples fused together, s.
pub const ALIGNMENT_TOLERANCE: f64 = 1e-6;

/// One fused measurement expressed in the virtual frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VirtualSample {
    pub t: f64,
    pub omega: Vector3<f64>,
    pub accel: Vector3<f64>,
}

/// Virtual-frame biases induced by the per-IMU biases.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VirtualBiases {
    pub gyro: Vector3<f64>,
    pub accel: Vector3<f64>,
}

/// Precomputed fusion matrices and derived virtual noise covariances.
#[derive(Debug, Clone)]
pub struct FusionModel {
    pub n_imus: usize,
    pub extrinsics: Vec<ImuExtrinsics>,
    /// Stacked rotations, 3n×3.
    pub n_stack: DMatrix<f64>,
    /// Gyro fusion map, 3×3n. Moore–Penrose inverse of `n_stack` in the
    /// unweighted model, the weighted least-squares map otherwise.
    pub gyro_map: DMatrix<f64>,
    /// Stacked lever-arm matrix, 3n×3.
    pub y_stack: DMatrix<f64>,
    /// Orthonormal left-nullspace basis of `y_stack`, 3n×(3n−rank).
    pub z_basis: DMatrix<f64>,
    /// Accelerometer fusion map `T`, 3×3n.
    pub accel_map: DMatrix<f64>,
    /// Virtual gyro white-noise covariance.
    pub q_gv: Matrix3<f64>,
    /// Virtual gyro bias-walk covariance.
    pub q_wgv: Matrix3<f64>,
    /// Virtual accelerometer white-noise covariance.
    pub q_av: Matrix3<f64>,
    /// Virtual accelerometer bias-walk covariance.
    pub q_wav: Matrix3<f64>,
}

impl FusionModel {
    /// Builds the fusion model assuming equal weighting of all IMUs (the
    /// exact least-squares solution when all members share one noise
    /// class).
    pub fn build(array: &ImuArrayConfig) -> Result<Self> {
        Self::build_inner(array, false)
    }

    /// Builds the weighted model for arrays mixing noise classes: the gyro
    /// map becomes `(NᵀWN)⁻¹NᵀW` with `W = diag(1/σ_gᵢ²)`, and the
    /// accelerometer solves the generalized least-squares problem inside
    /// the nullspace-projected residual. Reduces to [`FusionModel::build`]
    /// when all densities are equal.
    pub fn build_weighted(array: &ImuArrayConfig) -> Result<Self> {
        Self::build_inner(array, true)
    }

    fn build_inner(array: &ImuArrayConfig, weighted: bool) -> Result<Self> {
        array.validate()?;
        let n = array.len();
        let rows = 3 * n;
        let extrinsics = array.extrinsics();

        let mut n_stack = DMatrix::<f64>::zeros(rows, 3);
        let mut y_stack = DMatrix::<f64>::zeros(rows, 3);
        for (i, ext) in extrinsics.iter().enumerate() {
            n_stack
                .view_mut((3 * i, 0), (3, 3))
                .copy_from(ext.r_iv.matrix());
            y_stack
                .view_mut((3 * i, 0), (3, 3))
                .copy_from(&(ext.r_iv.matrix() * skew(&ext.p_vi)));
        }

        let gyro_map = if weighted {
            let w = block_diagonal(array.imus.iter().map(|u| 1.0 / u.noise.sigma_g.powi(2)), n);
            let ntw = n_stack.transpose() * &w;
            let info = &ntw * &n_stack;
            let inv = info.try_inverse().ok_or(Error::RankDeficient {
                ratio: 0.0,
                threshold: so3::RANK_TOLERANCE,
            })?;
            inv * ntw
        } else {
            so3::pinv(&n_stack)?
        };

        let colocated = extrinsics.iter().all(|e| e.p_vi == Vector3::zeros());
        let (z_basis, accel_map) = if colocated {
            // No lever arms: nothing contaminates the accelerometers, the
            // projection is the full space and T degenerates to the gyro-style
            // least-squares map.
            let z = DMatrix::<f64>::identity(rows, rows);
            let t = if weighted {
                let w = block_diagonal(array.imus.iter().map(|u| 1.0 / u.noise.sigma_a.powi(2)), n);
                let ntw = n_stack.transpose() * &w;
                let info = &ntw * &n_stack;
                let inv = info.try_inverse().ok_or(Error::DegenerateGeometry { rank: 0 })?;
                inv * ntw
            } else {
                so3::pinv(&n_stack)?
            };
            (z, t)
        } else {
            let z = so3::left_nullspace(&y_stack)?;
            let zt_n = z.transpose() * &n_stack;
            let t = if weighted {
                // GLS in the projected space: residual covariance ZᵀDZ.
                let d = block_diagonal(array.imus.iter().map(|u| u.noise.sigma_a.powi(2)), n);
                let m = z.transpose() * &d * &z;
                let m_inv = m.try_inverse().ok_or(Error::DegenerateGeometry { rank: 0 })?;
                let a = zt_n.transpose() * &m_inv; // 3×(3n−r)
                let info = &a * &zt_n;
                let rank = so3::numerical_rank(&zt_n);
                let inv = info
                    .try_inverse()
                    .filter(|_| rank >= 3)
                    .ok_or(Error::DegenerateGeometry { rank })?;
                inv * a * z.transpose()
            } else {
                let zt_n_pinv = so3::pinv(&zt_n).map_err(|_| Error::DegenerateGeometry {
                    rank: so3::numerical_rank(&zt_n),
                })?;
                zt_n_pinv * z.transpose()
            };
            (z, t)
        };

        let cov3 = |map: &DMatrix<f64>, sigmas: Vec<f64>| -> Matrix3<f64> {
            let d = block_diagonal(sigmas.into_iter(), n);
            let full = map * d * map.transpose();
            let mut out = Matrix3::from_fn(|i, j| full[(i, j)]);
            // Resymmetrize against rounding.
            out = (out + out.transpose()) * 0.5;
            out
        };

        let q_gv = cov3(
            &gyro_map,
            array.imus.iter().map(|u| u.noise.sigma_g.powi(2)).collect(),
        );
        let q_wgv = cov3(
            &gyro_map,
            array.imus.iter().map(|u| u.noise.sigma_wg.powi(2)).collect(),
        );
        let q_av = cov3(
            &accel_map,
            array.imus.iter().map(|u| u.noise.sigma_a.powi(2)).collect(),
        );
        let q_wav = cov3(
            &accel_map,
            array.imus.iter().map(|u| u.noise.sigma_wa.powi(2)).collect(),
        );

        Ok(FusionModel {
            n_imus: n,
            extrinsics,
            n_stack,
            gyro_map,
            y_stack,
            z_basis,
            accel_map,
            q_gv,
            q_wgv,
            q_av,
            q_wav,
        })
    }

    fn check_count(&self, got: usize) -> Result<()> {
        if got != self.n_imus {
            return Err(Error::CountMismatch {
                expected: self.n_imus,
                got,
            });
        }
        Ok(())
    }

    /// Virtual gyro measurement from the per-IMU gyro readings.
    pub fn fuse_gyro(&self, omegas: &[Vector3<f64>]) -> Result<Vector3<f64>> {
        self.check_count(omegas.len())?;
        Ok(apply_map(&self.gyro_map, omegas))
    }

    /// Virtual accelerometer measurement from the per-IMU readings and the
    /// virtual gyro output at the same instant.
    pub fn fuse_accel(
        &self,
        accels: &[Vector3<f64>],
        omega_mv: &Vector3<f64>,
    ) -> Result<Vector3<f64>> {
        self.check_count(accels.len())?;
        let mut stacked = stack(accels);
        stacked -= self.centripetal_stack(omega_mv);
        Ok(map_times(&self.accel_map, &stacked))
    }

    /// Stacked rotation-induced accelerations `R_iV ⌊w⌋² p_i` each IMU
    /// would sense under the body rate `w` (zero lever arms give zeros).
    pub fn centripetal_stack(&self, w: &Vector3<f64>) -> DVector<f64> {
        let sq = skew(w) * skew(w);
        let mut out = DVector::zeros(3 * self.n_imus);
        for (i, ext) in self.extrinsics.iter().enumerate() {
            let block = ext.r_iv.matrix() * (sq * ext.p_vi);
            out.fixed_rows_mut::<3>(3 * i).copy_from(&block);
        }
        out
    }

    /// Virtual-frame biases implied by the per-IMU biases: the gyro bias
    /// maps through the gyro least squares, the accel bias through `T`.
    pub fn fuse_biases(&self, biases: &[ImuBiases]) -> Result<VirtualBiases> {
        self.check_count(biases.len())?;
        let gyros: Vec<Vector3<f64>> = biases.iter().map(|b| b.gyro).collect();
        let accels: Vec<Vector3<f64>> = biases.iter().map(|b| b.accel).collect();
        Ok(VirtualBiases {
            gyro: apply_map(&self.gyro_map, &gyros),
            accel: apply_map(&self.accel_map, &accels),
        })
    }

    /// Fuses one synchronized set of samples (one per IMU, array order)
    /// into a virtual sample. Rejects timestamp skews beyond
    /// [`ALIGNMENT_TOLERANCE`].
    pub fn fuse_sample(&self, samples: &[ImuSample]) -> Result<VirtualSample> {
        self.check_count(samples.len())?;
        let t0 = samples[0].t;
        let skew_s = samples
            .iter()
            .map(|s| (s.t - t0).abs())
            .fold(0.0, f64::max);
        if skew_s > ALIGNMENT_TOLERANCE {
            return Err(Error::MisalignedTimestamps { skew_s });
        }
        let omegas: Vec<Vector3<f64>> = samples.iter().map(|s| s.omega).collect();
        let accels: Vec<Vector3<f64>> = samples.iter().map(|s| s.accel).collect();
        let omega = self.fuse_gyro(&omegas)?;
        let accel = self.fuse_accel(&accels, &omega)?;
        Ok(VirtualSample { t: t0, omega, accel })
    }
}

fn stack(vectors: &[Vector3<f64>]) -> DVector<f64> {
    let mut out = DVector::zeros(3 * vectors.len());
    for (i, v) in vectors.iter().enumerate() {
        out.fixed_rows_mut::<3>(3 * i).copy_from(v);
    }
    out
}

fn map_times(map: &DMatrix<f64>, stacked: &DVector<f64>) -> Vector3<f64> {
    let v = map * stacked;
    Vector3::new(v[0], v[1], v[2])
}

fn apply_map(map: &DMatrix<f64>, vectors: &[Vector3<f64>]) -> Vector3<f64> {
    map_times(map, &stack(vectors))
}

/// 3n×3n diagonal with each scalar repeated over a 3-block.
fn block_diagonal(values: impl Iterator<Item = f64>, n: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(3 * n, 3 * n);
    for (i, v) in values.enumerate() {
        for k in 0..3 {
            out[(3 * i + k, 3 * i + k)] = v;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imu::{ImuNoiseParams, ImuUnit};
    use crate::so3::{exp_rot, Rot3};
    use approx::assert_relative_eq;
    use nalgebra::Matrix3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;
    use rand_distr::StandardNormal;

    fn array_from(units: Vec<(Rot3, Vector3<f64>)>) -> ImuArrayConfig {
        array_with_noise(units, ImuNoiseParams::default())
    }

    fn array_with_noise(
        units: Vec<(Rot3, Vector3<f64>)>,
        noise: ImuNoiseParams,
    ) -> ImuArrayConfig {
        ImuArrayConfig {
            imus: units
                .into_iter()
                .enumerate()
                .map(|(i, (r_iv, p_vi))| ImuUnit {
                    id: format!("imu{i}"),
                    extrinsics: ImuExtrinsics { r_iv, p_vi },
                    noise,
                })
                .collect(),
            rate_hz: 200.0,
            gravity: Vector3::new(0.0, 0.0, -9.81),
        }
    }

    fn random_vec(rng: &mut ChaCha12Rng) -> Vector3<f64> {
        Vector3::new(
            rng.random::<f64>() * 2.0 - 1.0,
            rng.random::<f64>() * 2.0 - 1.0,
            rng.random::<f64>() * 2.0 - 1.0,
        )
    }

    fn random_array(rng: &mut ChaCha12Rng, n: usize) -> ImuArrayConfig {
        let mut units = Vec::new();
        // First IMU at the virtual frame so the geometry stays observable.
        units.push((Rot3::identity(), Vector3::zeros()));
        for _ in 1..n {
            units.push((exp_rot(&(random_vec(rng) * 1.5)), random_vec(rng) * 0.05));
        }
        array_from(units)
    }

    #[test]
    fn single_imu_identity_reduces_to_passthrough() {
        let array = array_from(vec![(Rot3::identity(), Vector3::zeros())]);
        let model = FusionModel::build(&array).unwrap();
        let sigma = array.imus[0].noise;
        assert_eq!(model.n_stack, DMatrix::identity(3, 3));
        assert_eq!(model.gyro_map, DMatrix::identity(3, 3));
        assert_eq!(model.accel_map, DMatrix::identity(3, 3));
        assert_eq!(model.q_gv, Matrix3::identity() * sigma.sigma_g.powi(2));
        assert_eq!(model.q_av, Matrix3::identity() * sigma.sigma_a.powi(2));
    }

    #[test]
    fn two_identical_imus_halve_gyro_covariance() {
        let array = array_from(vec![
            (Rot3::identity(), Vector3::zeros()),
            (Rot3::identity(), Vector3::zeros()),
        ]);
        let model = FusionModel::build(&array).unwrap();
        let sigma_sq = array.imus[0].noise.sigma_g.powi(2);
        let expected = Matrix3::identity() * (sigma_sq / 2.0);
        assert_relative_eq!(model.q_gv, expected, epsilon = 1e-20);
    }

    #[test]
    fn nine_imus_scale_gyro_covariance_by_one_ninth() {
        let mut units = Vec::new();
        for i in 0..3 {
            for j in 0..3 {
                let p = Vector3::new((i as f64 - 1.0) * 0.02, (j as f64 - 1.0) * 0.02, 0.0);
                units.push((Rot3::identity(), p));
            }
        }
        let array = array_from(units);
        let model = FusionModel::build(&array).unwrap();
        let expected = Matrix3::identity() * (array.imus[0].noise.sigma_g.powi(2) / 9.0);
        let diff = (model.q_gv - expected).abs().max();
        assert!(diff < 1e-12 * expected[(0, 0)].max(1.0), "diff = {diff:.3e}");
        // Forced by N⁺ = Nᵀ/9 for identity rotations.
        assert_relative_eq!(
            model.gyro_map,
            model.n_stack.transpose() / 9.0,
            epsilon = 1e-14
        );
    }

    #[test]
    fn gyro_fusion_averages_identity_readings() {
        let array = array_from(vec![
            (Rot3::identity(), Vector3::zeros()),
            (Rot3::identity(), Vector3::zeros()),
        ]);
        let model = FusionModel::build(&array).unwrap();
        let both = Vector3::new(1.0, 2.0, 3.0);
        assert_relative_eq!(
            model.fuse_gyro(&[both, both]).unwrap(),
            both,
            epsilon = 1e-15
        );
        let fused = model
            .fuse_gyro(&[Vector3::new(1.0, 0.0, 0.0), Vector3::new(3.0, 0.0, 0.0)])
            .unwrap();
        assert_relative_eq!(fused, Vector3::new(2.0, 0.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn gyro_fusion_recovers_rate_under_random_rotations() {
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        for _ in 0..20 {
            let array = random_array(&mut rng, 4);
            let model = FusionModel::build(&array).unwrap();
            let omega_true = random_vec(&mut rng) * 3.0;
            let readings: Vec<Vector3<f64>> = array
                .imus
                .iter()
                .map(|u| u.extrinsics.r_iv * omega_true)
                .collect();
            let fused = model.fuse_gyro(&readings).unwrap();
            assert_relative_eq!(fused, omega_true, epsilon = 1e-12);
        }
    }

    #[test]
    fn accel_fusion_passes_through_colocated_mean() {
        let array = array_from(vec![
            (Rot3::identity(), Vector3::zeros()),
            (Rot3::identity(), Vector3::zeros()),
        ]);
        let model = FusionModel::build(&array).unwrap();
        let g = Vector3::new(0.0, 0.0, 9.81);
        let fused = model.fuse_accel(&[g, g], &Vector3::new(0.3, 0.2, 0.1)).unwrap();
        assert_relative_eq!(fused, g, epsilon = 1e-15);
    }

    #[test]
    fn accel_fusion_removes_unknown_angular_acceleration() {
        // Rigid-body oracle: per-IMU specific force
        //   s_i = R_iV (s_V + ⌊ω⌋² p_i + ⌊φ⌋ p_i)
        // with nonzero φ that the fuser never sees. Noise-free fusion must
        // return s_V exactly.
        let mut rng = ChaCha12Rng::seed_from_u64(22);
        for _ in 0..100 {
            let array = random_array(&mut rng, 4);
            let model = FusionModel::build(&array).unwrap();
            let s_v = random_vec(&mut rng) * 9.0;
            let omega = random_vec(&mut rng) * 4.0;
            let phi = random_vec(&mut rng) * 20.0;
            let readings: Vec<Vector3<f64>> = array
                .imus
                .iter()
                .map(|u| {
                    let p = u.extrinsics.p_vi;
                    u.extrinsics.r_iv * (s_v + skew(&omega) * (skew(&omega) * p) + skew(&phi) * p)
                })
                .collect();
            let fused = model.fuse_accel(&readings, &omega).unwrap();
            let rel = (fused - s_v).norm() / s_v.norm().max(1.0);
            assert!(rel < 1e-10, "relative error {rel:.3e}");
        }
    }

    #[test]
    fn accel_fusion_cancels_centripetal_term() {
        // Pure spin at 10 rad/s about z with a 0.05 m lever arm along x:
        // the off-center IMU senses ⌊ω⌋²p of magnitude 5 m/s²; the fused
        // output must not.
        let p = Vector3::new(0.05, 0.0, 0.0);
        let array = array_from(vec![
            (Rot3::identity(), Vector3::zeros()),
            (Rot3::identity(), p),
        ]);
        let model = FusionModel::build(&array).unwrap();
        let omega = Vector3::new(0.0, 0.0, 10.0);
        let centripetal = skew(&omega) * (skew(&omega) * p);
        assert_relative_eq!(centripetal, Vector3::new(-5.0, 0.0, 0.0), epsilon = 1e-12);

        let s_v = Vector3::zeros();
        let readings = vec![s_v, s_v + centripetal];
        let fused = model.fuse_accel(&readings, &omega).unwrap();
        assert!(fused.norm() < 1e-12, "fused = {fused:?}");
    }

    #[test]
    fn centripetal_stack_closed_forms() {
        let r = 0.05;
        let array = array_from(vec![
            (Rot3::identity(), Vector3::zeros()),
            (Rot3::identity(), Vector3::new(r, 0.0, 0.0)),
        ]);
        let model = FusionModel::build(&array).unwrap();
        assert_eq!(
            model.centripetal_stack(&Vector3::zeros()),
            DVector::zeros(6)
        );
        let w = 10.0;
        let stacked = model.centripetal_stack(&Vector3::new(0.0, 0.0, w));
        assert_relative_eq!(stacked[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(stacked[3], -w * w * r, epsilon = 1e-12);
        assert_relative_eq!(stacked[4], 0.0, epsilon = 1e-12);

        let colocated = array_from(vec![(Rot3::identity(), Vector3::zeros())]);
        let model = FusionModel::build(&colocated).unwrap();
        assert_eq!(
            model.centripetal_stack(&Vector3::new(1.0, 2.0, 3.0)),
            DVector::zeros(3)
        );
    }

    #[test]
    fn bias_fusion_matches_direct_products() {
        let array = array_from(vec![
            (Rot3::identity(), Vector3::zeros()),
            (Rot3::identity(), Vector3::new(0.03, -0.01, 0.0)),
        ]);
        let model = FusionModel::build(&array).unwrap();

        let zero = model.fuse_biases(&[ImuBiases::zero(), ImuBiases::zero()]).unwrap();
        assert_eq!(zero.gyro, Vector3::zeros());
        assert_eq!(zero.accel, Vector3::zeros());

        let b_a = ImuBiases {
            gyro: Vector3::new(0.02, 0.0, 0.0),
            accel: Vector3::new(0.1, -0.2, 0.3),
        };
        let b_b = ImuBiases {
            gyro: Vector3::zeros(),
            accel: Vector3::new(-0.05, 0.15, 0.0),
        };
        let fused = model.fuse_biases(&[b_a, b_b]).unwrap();
        assert_relative_eq!(fused.gyro, Vector3::new(0.01, 0.0, 0.0), epsilon = 1e-15);

        // Oracle: apply T to the stacked accel biases directly.
        let mut stacked = DVector::zeros(6);
        stacked.fixed_rows_mut::<3>(0).copy_from(&b_a.accel);
        stacked.fixed_rows_mut::<3>(3).copy_from(&b_b.accel);
        let expected = &model.accel_map * stacked;
        assert_relative_eq!(
            fused.accel,
            Vector3::new(expected[0], expected[1], expected[2]),
            epsilon = 1e-14
        );
    }

    #[test]
    fn weighted_build_reduces_to_unweighted_for_equal_sigmas() {
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        let array = random_array(&mut rng, 5);
        let plain = FusionModel::build(&array).unwrap();
        let weighted = FusionModel::build_weighted(&array).unwrap();
        assert_relative_eq!(plain.gyro_map, weighted.gyro_map, epsilon = 1e-12);
        assert_relative_eq!(plain.accel_map, weighted.accel_map, epsilon = 1e-12);
        assert_relative_eq!(plain.q_gv, weighted.q_gv, epsilon = 1e-18);
        assert_relative_eq!(plain.q_av, weighted.q_av, epsilon = 1e-18);
    }

    #[test]
    fn weighted_gyro_weights_follow_inverse_variance() {
        // σ_gB = 10 σ_gA: inverse-variance weights (100/101, 1/101).
        let noisy = ImuNoiseParams {
            sigma_g: 1.7e-3,
            ..ImuNoiseParams::default()
        };
        let array = ImuArrayConfig {
            imus: vec![
                ImuUnit {
                    id: "a".into(),
                    extrinsics: ImuExtrinsics::identity(),
                    noise: ImuNoiseParams::default(),
                },
                ImuUnit {
                    id: "b".into(),
                    extrinsics: ImuExtrinsics::identity(),
                    noise: noisy,
                },
            ],
            rate_hz: 200.0,
            gravity: Vector3::new(0.0, 0.0, -9.81),
        };
        let model = FusionModel::build_weighted(&array).unwrap();
        let fused = model
            .fuse_gyro(&[Vector3::new(1.0, 0.0, 0.0), Vector3::zeros()])
            .unwrap();
        assert_relative_eq!(fused.x, 100.0 / 101.0, epsilon = 1e-12);
        let fused_b = model
            .fuse_gyro(&[Vector3::zeros(), Vector3::new(1.0, 0.0, 0.0)])
            .unwrap();
        assert_relative_eq!(fused_b.x, 1.0 / 101.0, epsilon = 1e-12);
    }

    #[test]
    fn weighted_gyro_covariance_not_worse_than_best_imu() {
        let mut rng = ChaCha12Rng::seed_from_u64(24);
        for _ in 0..20 {
            let mut array = random_array(&mut rng, 3);
            let mut min_var = f64::INFINITY;
            for unit in &mut array.imus {
                let s = 1e-4 * (1.0 + 9.0 * rng.random::<f64>());
                unit.noise.sigma_g = s;
                min_var = min_var.min(s * s);
            }
            let model = FusionModel::build_weighted(&array).unwrap();
            // min σ² I − Q_gV must be positive semidefinite.
            let gap = Matrix3::identity() * min_var - model.q_gv;
            let eig = gap.symmetric_eigenvalues();
            assert!(eig.min() > -1e-15 * min_var, "eig = {:?}", eig);
        }
    }

    #[test]
    fn model_invariants_hold_on_random_geometries() {
        let mut rng = ChaCha12Rng::seed_from_u64(25);
        for n in [1usize, 2, 3, 6, 9] {
            let array = random_array(&mut rng, n);
            let model = FusionModel::build(&array).unwrap();
            let eye3 = DMatrix::<f64>::identity(3, 3);

            let zty = model.z_basis.transpose() * &model.y_stack;
            assert!(zty.abs().max() < 1e-12);

            let np_n = &model.gyro_map * &model.n_stack;
            assert!((np_n - &eye3).abs().max() < 1e-10);

            let tn = &model.accel_map * &model.n_stack;
            assert!((tn - &eye3).abs().max() < 1e-10, "T·N defect at n = {n}");

            for q in [model.q_gv, model.q_wgv, model.q_av, model.q_wav] {
                assert_relative_eq!(q, q.transpose(), epsilon = 1e-18);
                assert!(q.symmetric_eigenvalues().min() > 0.0);
            }
        }
    }

    #[test]
    fn empirical_fused_noise_matches_covariances() {
        let mut rng = ChaCha12Rng::seed_from_u64(26);
        let array = random_array(&mut rng, 3);
        let model = FusionModel::build(&array).unwrap();
        let draws = 100_000;
        let mut cov_g = Matrix3::<f64>::zeros();
        let mut cov_a = Matrix3::<f64>::zeros();
        for _ in 0..draws {
            let gyro_noise: Vec<Vector3<f64>> = array
                .imus
                .iter()
                .map(|u| {
                    Vector3::new(
                        rng.sample::<f64, _>(StandardNormal),
                        rng.sample::<f64, _>(StandardNormal),
                        rng.sample::<f64, _>(StandardNormal),
                    ) * u.noise.sigma_g
                })
                .collect();
            let accel_noise: Vec<Vector3<f64>> = array
                .imus
                .iter()
                .map(|u| {
                    Vector3::new(
                        rng.sample::<f64, _>(StandardNormal),
                        rng.sample::<f64, _>(StandardNormal),
                        rng.sample::<f64, _>(StandardNormal),
                    ) * u.noise.sigma_a
                })
                .collect();
            let g = model.fuse_gyro(&gyro_noise).unwrap();
            // Zero body rate: the fused accel noise is T times the stack.
            let a = model.fuse_accel(&accel_noise, &Vector3::zeros()).unwrap();
            cov_g += g * g.transpose();
            cov_a += a * a.transpose();
        }
        cov_g /= draws as f64;
        cov_a /= draws as f64;
        for i in 0..3 {
            for j in 0..3 {
                let scale_g = (model.q_gv[(i, i)] * model.q_gv[(j, j)]).sqrt();
                assert!(
                    (cov_g[(i, j)] - model.q_gv[(i, j)]).abs() < 0.05 * scale_g,
                    "gyro cov entry ({i},{j})"
                );
                let scale_a = (model.q_av[(i, i)] * model.q_av[(j, j)]).sqrt();
                assert!(
                    (cov_a[(i, j)] - model.q_av[(i, j)]).abs() < 0.05 * scale_a,
                    "accel cov entry ({i},{j})"
                );
            }
        }
    }

    #[test]
    fn degenerate_geometry_is_rejected() {
        // A single off-center IMU cannot separate specific force from the
        // unknown angular acceleration.
        let array = array_from(vec![(Rot3::identity(), Vector3::new(0.05, 0.0, 0.0))]);
        assert!(matches!(
            FusionModel::build(&array),
            Err(Error::DegenerateGeometry { .. })
        ));
    }

    #[test]
    fn count_and_alignment_errors() {
        let array = array_from(vec![
            (Rot3::identity(), Vector3::zeros()),
            (Rot3::identity(), Vector3::zeros()),
        ]);
        let model = FusionModel::build(&array).unwrap();
        assert!(matches!(
            model.fuse_gyro(&[Vector3::zeros()]),
            Err(Error::CountMismatch { expected: 2, got: 1 })
        ));
        let s0 = ImuSample {
            t: 0.0,
            omega: Vector3::zeros(),
            accel: Vector3::zeros(),
        };
        let s1 = ImuSample { t: 0.01, ..s0 };
        assert!(matches!(
            model.fuse_sample(&[s0, s1]),
            Err(Error::MisalignedTimestamps { .. })
        ));
    }

    #[test]
    fn single_imu_fused_sample_is_bit_identical_to_raw() {
        let array = array_from(vec![(Rot3::identity(), Vector3::zeros())]);
        let model = FusionModel::build(&array).unwrap();
        let raw = ImuSample {
            t: 1.23,
            omega: Vector3::new(0.11, -0.04, 0.72),
            accel: Vector3::new(-0.3, 9.79, 0.02),
        };
        let fused = model.fuse_sample(&[raw]).unwrap();
        assert_eq!(fused.t, raw.t);
        assert_eq!(fused.omega, raw.omega);
        assert_eq!(fused.accel, raw.accel);
    }
}
