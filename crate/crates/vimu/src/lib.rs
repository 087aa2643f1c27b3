//! Virtual-IMU fusion for rigidly mounted IMU arrays.
//!
//! An array of IMUs sharing one rigid body measures a single underlying
//! motion. This crate maps the synchronized measurements of all array
//! members onto one statistically optimal *virtual* IMU expressed in a
//! chosen body frame `V`:
//!
//! * gyroscopes are combined by linear least squares over the stacked
//!   rotation matrices,
//! * accelerometers are combined by least squares after projecting the
//!   stacked residual onto the left nullspace of the lever-arm matrix,
//!   which marginalizes the unmeasured angular acceleration,
//! * the virtual measurement noise and bias-walk covariances are derived
//!   from the per-IMU noise densities and the fusion matrices.
//!
//! On top of the fused measurements the crate provides strapdown state
//! propagation with a 15-state error-state covariance, including the
//! lever-arm coupling blocks that feed gyro bias and gyro noise into the
//! velocity error, plus a simulation harness that reproduces the
//! integration-accuracy trend of growing IMU counts by Monte Carlo.
//!
//! Entry points: [`fusion::FusionModel::build`] for the fusion matrices,
//! [`propagation::propagate`] for state/covariance propagation, and
//! [`sim::run_prediction_experiment`] for the Monte Carlo study.

pub mod config;
pub mod error;
pub mod fusion;
pub mod imu;
pub mod logs;
pub mod propagation;
pub mod sim;
pub mod so3;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
