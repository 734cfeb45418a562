//! Range bias of time-of-flight LIDARs as a function of depth and incidence
//! angle.
//!
//! The crate is organised bottom-up:
//!
//! * [`waveform`] simulates the return waveform of a Gaussian pulse hitting
//!   an oriented Lambertian plane by direct numerical integration. It is the
//!   ground truth every analytic result is checked against.
//! * [`closed_form`] evaluates the cubic approximation of the waveform peak,
//!   the peak-shift and shape metrics, and the per-sensor bias `e(d, θ)`.
//! * [`sensor`] holds the per-sensor scale factors and the key/value config
//!   format, with the three shipped presets.
//! * [`calibration`] ingests measurement tables, fits the scale factors by
//!   robust least squares and fits the empirical baseline model.
//! * [`cloud`] estimates normals and incidence angles and de-biases point
//!   clouds.
//! * [`corridor`] builds synthetic corridor scans with injected bias and
//!   measures how much the accumulated map bends.
//!
//! Units are SI throughout (meters, seconds, radians). Degrees only appear
//! at I/O boundaries and are suffixed `_deg`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod closed_form;
pub mod cloud;
pub mod corridor;
mod error;
pub mod quadrature;
pub mod sensor;
pub mod waveform;

pub use closed_form::{
    bias_error, cubic_coefficients, curvature_at_peak, delta_distance, delta_shape,
    BiasEvaluation, CubicCoefficients, DomainPolicy, TaylorIntermediates, ValidityDomain,
};
pub use error::{Error, Result};
pub use sensor::SensorModel;
pub use waveform::{BeamGeometry, PulseParams, SampledWaveform, SurfaceTarget};

/// Speed of light in vacuum, m/s (exact).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// 3D vector used for points, rays and normals.
pub type Vec3 = nalgebra::Vector3<f64>;
