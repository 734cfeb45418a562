use std::fmt::Write as _;

use rayon::prelude::*;

use super::Observation;
use crate::closed_form::{delta_distance, delta_shape};
use crate::error::{Error, Result};
use crate::sensor::SensorModel;
use crate::waveform::{BeamGeometry, PulseParams};

/// Normalised median absolute deviation of a Gaussian.
const MAD_TO_SIGMA: f64 = 0.6745;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RobustLoss {
    LeastSquares,
    /// Huber loss with threshold `tuning · scale`, scale from the MAD of
    /// the current residuals.
    Huber { tuning: f64 },
}

impl Default for RobustLoss {
    fn default() -> Self {
        RobustLoss::Huber { tuning: 1.345 }
    }
}

impl RobustLoss {
    pub fn name(&self) -> &'static str {
        match self {
            RobustLoss::LeastSquares => "least-squares",
            RobustLoss::Huber { .. } => "huber",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub loss: RobustLoss,
    pub max_iterations: usize,
    /// Relative parameter change below which IRLS stops.
    pub tolerance: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            loss: RobustLoss::default(),
            max_iterations: 200,
            tolerance: 1e-10,
        }
    }
}

impl FitOptions {
    pub fn with_loss(loss: RobustLoss) -> Self {
        Self { loss, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub s1: f64,
    pub s2: f64,
    pub residual_rms: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Final robust weight of each observation, all 1 for least squares.
    pub weights: Vec<f64>,
    pub loss: RobustLoss,
}

impl FitResult {
    pub fn to_model(&self, name: impl Into<String>, half_aperture: f64) -> Result<SensorModel> {
        SensorModel::new(name, half_aperture, self.s1, self.s2)
    }

    /// Number of observations whose weight was reduced below one.
    pub fn downweighted(&self) -> usize {
        self.weights.iter().filter(|&&w| w < 1.0).count()
    }

    /// Sensor config with the fit diagnostics appended as metadata keys.
    pub fn to_config(&self, name: &str, half_aperture: f64) -> Result<String> {
        let mut out = self.to_model(name, half_aperture)?.to_config();
        let _ = writeln!(out, "residual_rms_m = {:?}", self.residual_rms);
        let _ = writeln!(out, "iterations = {}", self.iterations);
        let _ = writeln!(out, "points = {}", self.weights.len());
        let _ = writeln!(out, "converged = {}", self.converged);
        let _ = writeln!(out, "loss = {}", self.loss.name());
        Ok(out)
    }
}

/// `[Δ_d, Δ_shape]` at one observation.
pub fn design_row(obs: &Observation, pulse: &PulseParams, beam: &BeamGeometry) -> Result<[f64; 2]> {
    Ok([
        delta_distance(obs.depth, obs.incidence, pulse, beam)?,
        delta_shape(obs.depth, obs.incidence, pulse, beam)?,
    ])
}

/// Fits `e ≈ s₁·Δ_d + s₂·Δ_shape` to the observations.
pub fn fit_scale_factors(
    data: &[Observation],
    half_aperture: f64,
    pulse: &PulseParams,
    loss: RobustLoss,
) -> Result<FitResult> {
    let beam = BeamGeometry::with_aperture(half_aperture)?;
    fit_scale_factors_with(data, pulse, &beam, FitOptions::with_loss(loss))
}

pub fn fit_scale_factors_with(
    data: &[Observation],
    pulse: &PulseParams,
    beam: &BeamGeometry,
    options: FitOptions,
) -> Result<FitResult> {
    let tilted = data.iter().filter(|o| o.incidence > 0.0).count();
    if tilted < 2 {
        return Err(Error::Precondition(format!(
            "need at least 2 observations with θ > 0, got {tilted}"
        )));
    }
    let rows = data
        .par_iter()
        .map(|o| design_row(o, pulse, beam))
        .collect::<Result<Vec<_>>>()?;
    let targets: Vec<f64> = data.iter().map(|o| o.error).collect();
    fit_design(&rows, &targets, options)
}

/// IRLS on a precomputed two-column design.
pub fn fit_design(rows: &[[f64; 2]], targets: &[f64], options: FitOptions) -> Result<FitResult> {
    if rows.len() != targets.len() {
        return Err(Error::Precondition(format!(
            "{} design rows for {} targets",
            rows.len(),
            targets.len()
        )));
    }
    if rows.iter().flatten().chain(targets).any(|v| !v.is_finite()) {
        return Err(Error::Precondition("non-finite design or target value".into()));
    }
    let mut weights = vec![1.0; rows.len()];
    let mut beta = weighted_solve(rows, targets, &weights)?;
    let mut iterations = 1;
    let mut converged = true;

    if let RobustLoss::Huber { tuning } = options.loss {
        converged = false;
        while iterations < options.max_iterations {
            let residuals = residuals(rows, targets, beta);
            let scale = mad_scale(&residuals);
            if !(scale > f64::MIN_POSITIVE) {
                converged = true;
                break;
            }
            let threshold = tuning * scale;
            for (w, r) in weights.iter_mut().zip(&residuals) {
                *w = if r.abs() <= threshold { 1.0 } else { threshold / r.abs() };
            }
            let next = weighted_solve(rows, targets, &weights)?;
            iterations += 1;
            let small = |new: f64, old: f64| (new - old).abs() <= options.tolerance * new.abs().max(old.abs());
            let done = small(next[0], beta[0]) && small(next[1], beta[1]);
            beta = next;
            if done {
                converged = true;
                break;
            }
        }
    }

    let r = residuals(rows, targets, beta);
    let residual_rms = (r.iter().map(|v| v * v).sum::<f64>() / r.len() as f64).sqrt();
    Ok(FitResult {
        s1: beta[0],
        s2: beta[1],
        residual_rms,
        iterations,
        converged,
        weights,
        loss: options.loss,
    })
}

fn residuals(rows: &[[f64; 2]], targets: &[f64], beta: [f64; 2]) -> Vec<f64> {
    rows.iter()
        .zip(targets)
        .map(|(x, y)| y - x[0] * beta[0] - x[1] * beta[1])
        .collect()
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn mad_scale(residuals: &[f64]) -> f64 {
    let mut r = residuals.to_vec();
    let centre = median(&mut r);
    let mut dev: Vec<f64> = residuals.iter().map(|v| (v - centre).abs()).collect();
    median(&mut dev) / MAD_TO_SIGMA
}

fn weighted_solve(rows: &[[f64; 2]], targets: &[f64], weights: &[f64]) -> Result<[f64; 2]> {
    let (mut xx00, mut xx01, mut xx11, mut xy0, mut xy1) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for ((x, y), w) in rows.iter().zip(targets).zip(weights) {
        xx00 += w * x[0] * x[0];
        xx01 += w * x[0] * x[1];
        xx11 += w * x[1] * x[1];
        xy0 += w * x[0] * y;
        xy1 += w * x[1] * y;
    }
    let det = xx00 * xx11 - xx01 * xx01;
    if !(det > 1e-12 * xx00 * xx11) {
        return Err(Error::DegenerateFit(format!(
            "design columns are collinear (normal matrix determinant {det:e})"
        )));
    }
    Ok([(xx11 * xy0 - xx01 * xy1) / det, (xx00 * xy1 - xx01 * xy0) / det])
}
