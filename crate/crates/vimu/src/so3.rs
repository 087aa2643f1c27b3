//! Rotations, quaternions, and the small dense-matrix routines the fusion
//! and propagation layers are built on.
//!
//! Conventions, fixed once here and used everywhere else:
//!
//! * Quaternions store the vector part first, `(x, y, z, w)`, and represent
//!   the body-to-global rotation: [`UnitQuaternion::to_rotation`] returns
//!   the matrix that maps body-frame vectors into the global frame.
//! * The quaternion rate is `q̇ = ½ Ω(ω) q` with the body angular rate `ω`
//!   and the 4×4 operator of [`omega_matrix`], expressed in the same
//!   `(x, y, z, w)` component order. Integrating a constant rate about z
//!   yields the rotation about z by `ω_z·t`; the unit tests pin this
//!   against the axis-angle closed form.
//! * Rank decisions use a single relative singular-value threshold,
//!   [`RANK_TOLERANCE`].

use nalgebra::{DMatrix, Matrix3, Matrix4, Vector3, Vector4};

use crate::{Error, Result};

/// Relative singular-value threshold below which a direction is treated as
/// rank-deficient.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Skew-symmetric (cross-product) matrix `⌊v⌋` with `⌊v⌋ w = v × w`.
///
/// For any `a`, `b` the bilinear identity `⌊a⌋ b = −⌊b⌋ a` holds (note the
/// operator applies to the *left* vector).
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`skew`] for an antisymmetric matrix (reads the strictly
/// lower triangle).
pub fn unskew(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// The 4×4 quaternion-rate operator `Ω(w)`, laid out for `(x, y, z, w)`
/// component order:
///
/// ```text
/// Ω(w) = [ −⌊w⌋   w ]
///        [ −wᵀ    0 ]
/// ```
///
/// The matrix is antisymmetric and `q̇ = ½ Ω(w) q` advances the stored
/// body-to-global quaternion under the body rate `w`.
pub fn omega_matrix(w: &Vector3<f64>) -> Matrix4<f64> {
    let mut out = Matrix4::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-skew(w)));
    out.fixed_view_mut::<3, 1>(0, 3).copy_from(w);
    out.fixed_view_mut::<1, 3>(3, 0).copy_from(&(-w.transpose()));
    out
}

/// Quaternion time derivative `½ Ω(w) q` as a raw `(x, y, z, w)` 4-vector.
pub fn quat_derivative(q: &UnitQuaternion, w: &Vector3<f64>) -> Vector4<f64> {
    0.5 * omega_matrix(w) * q.as_vector()
}

/// Unit quaternion, vector part first.
///
/// Represents the body-to-global attitude; see the module docs for the
/// kinematic convention.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitQuaternion {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub w: f64,
}

impl UnitQuaternion {
    pub fn identity() -> Self {
        UnitQuaternion {
            x: 0.0,
            y: 0.0,
            z: 0.0,
            w: 1.0,
        }
    }

    /// Builds from components, normalizing. Fails on a near-zero norm.
    pub fn new(x: f64, y: f64, z: f64, w: f64) -> Result<Self> {
        let norm = (x * x + y * y + z * z + w * w).sqrt();
        if !norm.is_finite() || norm < 1e-12 {
            return Err(Error::ConfigInvalid(format!(
                "quaternion ({x}, {y}, {z}, {w}) cannot be normalized"
            )));
        }
        Ok(UnitQuaternion {
            x: x / norm,
            y: y / norm,
            z: z / norm,
            w: w / norm,
        })
    }

    /// Builds from a raw `(x, y, z, w)` vector, normalizing.
    pub fn from_vector(v: &Vector4<f64>) -> Result<Self> {
        Self::new(v.x, v.y, v.z, v.w)
    }

    pub fn as_vector(&self) -> Vector4<f64> {
        Vector4::new(self.x, self.y, self.z, self.w)
    }

    pub fn norm(&self) -> f64 {
        self.as_vector().norm()
    }

    /// Renormalized copy; use after integration steps.
    pub fn normalized(&self) -> Self {
        let n = self.norm();
        UnitQuaternion {
            x: self.x / n,
            y: self.y / n,
            z: self.z / n,
            w: self.w / n,
        }
    }

    /// Body-to-global rotation matrix.
    pub fn to_rotation(&self) -> Rot3 {
        let v = Vector3::new(self.x, self.y, self.z);
        let m = Matrix3::identity() * (2.0 * self.w * self.w - 1.0)
            + 2.0 * self.w * skew(&v)
            + 2.0 * v * v.transpose();
        Rot3(m)
    }

    /// Quaternion for a body-to-global rotation matrix.
    ///
    /// Uses the largest-diagonal branch and fixes the overall sign so that
    /// `w >= 0`, making the conversion deterministic. Round-trips with
    /// [`UnitQuaternion::to_rotation`] up to the global quaternion sign.
    pub fn from_rotation(rot: &Rot3) -> Self {
        let m = rot.matrix();
        let trace = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
        let (x, y, z, w);
        if trace > 0.0 {
            let s = (trace + 1.0).sqrt() * 2.0;
            w = 0.25 * s;
            x = (m[(2, 1)] - m[(1, 2)]) / s;
            y = (m[(0, 2)] - m[(2, 0)]) / s;
            z = (m[(1, 0)] - m[(0, 1)]) / s;
        } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
            let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
            w = (m[(2, 1)] - m[(1, 2)]) / s;
            x = 0.25 * s;
            y = (m[(0, 1)] + m[(1, 0)]) / s;
            z = (m[(0, 2)] + m[(2, 0)]) / s;
        } else if m[(1, 1)] > m[(2, 2)] {
            let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
            w = (m[(0, 2)] - m[(2, 0)]) / s;
            x = (m[(0, 1)] + m[(1, 0)]) / s;
            y = 0.25 * s;
            z = (m[(1, 2)] + m[(2, 1)]) / s;
        } else {
            let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
            w = (m[(1, 0)] - m[(0, 1)]) / s;
            x = (m[(0, 2)] + m[(2, 0)]) / s;
            y = (m[(1, 2)] + m[(2, 1)]) / s;
            z = 0.25 * s;
        }
        let q = UnitQuaternion { x, y, z, w }.normalized();
        if q.w < 0.0 {
            UnitQuaternion {
                x: -q.x,
                y: -q.y,
                z: -q.z,
                w: -q.w,
            }
        } else {
            q
        }
    }
}

/// A validated 3×3 rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rot3(Matrix3<f64>);

impl Rot3 {
    /// Orthonormality tolerance accepted by [`Rot3::new`].
    pub const ORTHONORMALITY_TOLERANCE: f64 = 1e-10;

    pub fn identity() -> Self {
        Rot3(Matrix3::identity())
    }

    /// Validates `R Rᵀ = I` and `det R = +1` to within
    /// [`Self::ORTHONORMALITY_TOLERANCE`].
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        let defect = (m * m.transpose() - Matrix3::identity()).abs().max();
        if defect > Self::ORTHONORMALITY_TOLERANCE {
            return Err(Error::ConfigInvalid(format!(
                "matrix is not orthonormal (max |R Rᵀ − I| = {defect:.3e})"
            )));
        }
        let det = m.determinant();
        if (det - 1.0).abs() > Self::ORTHONORMALITY_TOLERANCE {
            return Err(Error::ConfigInvalid(format!(
                "matrix is not a proper rotation (det = {det:.12})"
            )));
        }
        Ok(Rot3(m))
    }

    /// Wraps a matrix that is known to be a rotation (e.g. built from a
    /// product of rotations).
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Rot3(m)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Rot3 {
        Rot3(self.0.transpose())
    }

    /// Rotation about the x axis.
    pub fn about_x(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Rot3(Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c))
    }

    /// Rotation about the y axis.
    pub fn about_y(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Rot3(Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c))
    }

    /// Rotation about the z axis.
    pub fn about_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Rot3(Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }
}

impl std::ops::Mul for Rot3 {
    type Output = Rot3;
    fn mul(self, rhs: Rot3) -> Rot3 {
        Rot3(self.0 * rhs.0)
    }
}

impl std::ops::Mul<Vector3<f64>> for Rot3 {
    type Output = Vector3<f64>;
    fn mul(self, rhs: Vector3<f64>) -> Vector3<f64> {
        self.0 * rhs
    }
}

impl std::ops::Mul<&Vector3<f64>> for &Rot3 {
    type Output = Vector3<f64>;
    fn mul(self, rhs: &Vector3<f64>) -> Vector3<f64> {
        self.0 * rhs
    }
}

/// Rodrigues exponential: rotation vector to rotation matrix.
pub fn exp_rot(v: &Vector3<f64>) -> Rot3 {
    let angle = v.norm();
    let k = skew(v);
    if angle < 1e-9 {
        // 2nd-order series; error O(angle^3)
        return Rot3::from_matrix_unchecked(Matrix3::identity() + k + 0.5 * k * k);
    }
    let m = Matrix3::identity() + (angle.sin() / angle) * k
        + ((1.0 - angle.cos()) / (angle * angle)) * (k * k);
    Rot3::from_matrix_unchecked(m)
}

/// Rotation-matrix logarithm as a rotation vector (axis times angle).
///
/// Goes through the quaternion, which stays well conditioned for angles
/// near both 0 and π.
pub fn log_rot(r: &Rot3) -> Vector3<f64> {
    let q = UnitQuaternion::from_rotation(r);
    let v = Vector3::new(q.x, q.y, q.z);
    let v_norm = v.norm();
    if v_norm < 1e-12 {
        return 2.0 * v;
    }
    v * (2.0 * v_norm.atan2(q.w) / v_norm)
}

/// Geodesic angle between two rotations, in radians.
pub fn rotation_angle(a: &Rot3, b: &Rot3) -> f64 {
    log_rot(&Rot3::from_matrix_unchecked(a.matrix().transpose() * b.matrix())).norm()
}

/// Nearest orthonormal matrix in the Frobenius sense (sign of the
/// determinant is preserved; the caller decides whether −1 is acceptable).
pub fn orthonormalize(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd with u requested");
    let v_t = svd.v_t.expect("svd with v_t requested");
    u * v_t
}

/// Moore–Penrose inverse `(AᵀA)⁻¹Aᵀ` of a full-column-rank matrix.
///
/// Fails with [`Error::RankDeficient`] when the smallest singular value of
/// `A` drops below [`RANK_TOLERANCE`] times the largest.
pub fn pinv(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let svd = a.clone().svd(false, false);
    let max_sv = svd.singular_values.max();
    let min_sv = svd.singular_values.min();
    let ratio = if max_sv > 0.0 { min_sv / max_sv } else { 0.0 };
    if a.ncols() > a.nrows() || ratio < RANK_TOLERANCE {
        return Err(Error::RankDeficient {
            ratio,
            threshold: RANK_TOLERANCE,
        });
    }
    let ata = a.transpose() * a;
    let inv = ata.try_inverse().ok_or(Error::RankDeficient {
        ratio,
        threshold: RANK_TOLERANCE,
    })?;
    Ok(inv * a.transpose())
}

/// Numerical rank from singular values with the crate-wide relative
/// threshold.
pub fn numerical_rank(a: &DMatrix<f64>) -> usize {
    let svd = a.clone().svd(false, false);
    let max_sv = svd.singular_values.max();
    if max_sv == 0.0 {
        return 0;
    }
    svd.singular_values
        .iter()
        .filter(|&&s| s >= RANK_TOLERANCE * max_sv)
        .count()
}

/// Orthonormal basis `Z` of the left nullspace of `Y`: `Zᵀ Y = 0`,
/// `Zᵀ Z = I`, with `m − rank(Y)` columns.
///
/// Computed from a full column-pivoted Householder QR of `Y`, taking the
/// trailing columns of `Q`; the rank itself comes from the singular values
/// so that the column count matches [`numerical_rank`].
pub fn left_nullspace(y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let m = y.nrows();
    let rank = numerical_rank(y);
    if rank >= m {
        return Err(Error::NoNullspace);
    }
    let q = full_pivoted_qr_q(y);
    Ok(q.columns(rank, m - rank).into_owned())
}

/// Full `m×m` orthogonal factor of a column-pivoted Householder QR.
///
/// Pivoting keeps the leading columns of `Q` spanning the column space even
/// when `y` is rank-deficient.
fn full_pivoted_qr_q(y: &DMatrix<f64>) -> DMatrix<f64> {
    let m = y.nrows();
    let n = y.ncols();
    let mut r = y.clone();
    let mut q = DMatrix::<f64>::identity(m, m);
    let stop = 1e-14 * y.norm().max(f64::MIN_POSITIVE);

    for k in 0..n.min(m) {
        // Pivot: bring the remaining column with the largest tail norm next.
        let mut best = k;
        let mut best_norm = r.view((k, k), (m - k, 1)).norm();
        for j in (k + 1)..n {
            let nj = r.view((k, j), (m - k, 1)).norm();
            if nj > best_norm {
                best = j;
                best_norm = nj;
            }
        }
        if best_norm <= stop {
            break;
        }
        if best != k {
            r.swap_columns(k, best);
        }

        let x = r.view((k, k), (m - k, 1)).into_owned();
        let alpha = -x[0].signum() * x.norm();
        let mut v = x;
        v[0] -= alpha;
        let v_norm = v.norm();
        if v_norm == 0.0 {
            continue;
        }
        v /= v_norm;

        // r[k.., k..] <- (I − 2vvᵀ) r[k.., k..]
        for j in k..n {
            let mut col = r.view_mut((k, j), (m - k, 1));
            let s = 2.0 * v.dot(&col.column(0));
            for i in 0..(m - k) {
                col[(i, 0)] -= s * v[i];
            }
        }
        // q[:, k..] <- q[:, k..] (I − 2vvᵀ)
        for row in 0..m {
            let mut s = 0.0;
            for i in 0..(m - k) {
                s += q[(row, k + i)] * v[i];
            }
            s *= 2.0;
            for i in 0..(m - k) {
                q[(row, k + i)] -= s * v[i];
            }
        }
    }
    q
}
