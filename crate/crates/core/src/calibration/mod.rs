//! Calibration data model and fitting.
//!
//! A calibration run measures a rotating board at a set of depths and
//! signed incidence angles. Every record compares the LIDAR reading `d`
//! with an interferometer distance `D` corrected for the rig geometry:
//!
//! `D_c = D − δ_z + δ_C / cos θ − δ_x · tan θ`, `e = d − D_c`.
//!
//! Records at `+θ` and `−θ` are averaged to cancel the residual yaw of the
//! sensor and the lateral offset `δ_x`, then the scale factors of the bias
//! model are fitted on the averaged table.

mod fit;
mod io;
mod isocurve;
mod pfister;

use std::f64::consts::FRAC_PI_2;

pub use fit::{
    design_row, fit_design, fit_scale_factors, fit_scale_factors_with, FitOptions, FitResult, RobustLoss,
};
pub use io::{read_records, write_records, INTERFEROMETER_COLUMN, RECORD_HEADER};
pub use isocurve::{isocurve_grid, IsocurveGrid};
pub use pfister::{fit_pfister, PfisterFit, PfisterModel};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::closed_form::{bias_error, DomainPolicy};
use crate::error::{invalid, Error, Result};
use crate::sensor::SensorModel;
use crate::waveform::PulseParams;

/// Board incidence angles of the reference measurement grid, degrees.
pub const GRID_INCIDENCES_DEG: [f64; 12] = [0.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 65.0, 70.0, 75.0, 80.0, 85.0];
/// Board depths of the reference measurement grid, meters.
pub const GRID_DEPTHS_M: [f64; 8] = [1.0, 2.0, 2.5, 3.0, 4.0, 5.0, 7.0, 10.0];
/// Two records pair as `±θ` when their `|θ|` differ by at most this much.
pub const PAIRING_TOLERANCE_DEG: f64 = 0.25;
/// Spread of depth readings that still count as one target position.
pub const PAIRING_DEPTH_TOLERANCE_M: f64 = 0.05;

/// The 96 `(d, θ)` tuples of the reference grid, θ in radians, depth-major.
pub fn measurement_grid() -> Vec<(f64, f64)> {
    GRID_DEPTHS_M
        .iter()
        .flat_map(|&d| GRID_INCIDENCES_DEG.iter().map(move |&t| (d, t.to_radians())))
        .collect()
}

/// Rig offsets: interferometer to LIDAR along the rail (`δ_z`), lateral
/// LIDAR offset (`δ_x`), board surface to rotation axis (`δ_C`).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SetupGeometry {
    pub delta_z: f64,
    pub delta_x: f64,
    pub delta_c: f64,
}

impl SetupGeometry {
    pub fn new(delta_z: f64, delta_x: f64, delta_c: f64) -> Result<Self> {
        if !(delta_z.is_finite() && delta_x.is_finite() && delta_c.is_finite()) {
            return Err(invalid("setup", "offsets must be finite"));
        }
        if delta_c < 0.0 {
            return Err(invalid("delta_c", format!("must be ≥ 0, got {delta_c}")));
        }
        Ok(Self {
            delta_z,
            delta_x,
            delta_c,
        })
    }
}

/// One aggregated measurement tuple.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementRecord {
    pub sensor: String,
    /// LIDAR reading `d`, meters.
    pub depth: f64,
    /// Signed board angle, degrees.
    pub incidence_deg: f64,
    /// Interferometer distance `D`, meters, when available.
    pub interferometer: Option<f64>,
    /// Precomputed error `d − D_c`, meters.
    pub error: Option<f64>,
    /// Sample standard deviation of the readings, meters.
    pub dispersion: f64,
}

impl MeasurementRecord {
    pub fn validate(&self) -> Result<()> {
        if !(self.depth > 0.0 && self.depth.is_finite()) {
            return Err(invalid("depth", format!("must be > 0, got {}", self.depth)));
        }
        if !(self.incidence_deg.abs() <= 89.0) {
            return Err(invalid(
                "incidence_deg",
                format!("|θ| must be ≤ 89°, got {}", self.incidence_deg),
            ));
        }
        if !(self.dispersion >= 0.0 && self.dispersion.is_finite()) {
            return Err(invalid("dispersion", format!("must be ≥ 0, got {}", self.dispersion)));
        }
        Ok(())
    }
}

/// `(d, θ, e)` sample for model fitting; θ in radians, non-negative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub depth: f64,
    pub incidence: f64,
    pub error: f64,
}

/// One `(d, |θ|)` group after `±θ` averaging.
#[derive(Debug, Clone, PartialEq)]
pub struct AveragedMeasurement {
    pub depth: f64,
    pub incidence_deg: f64,
    pub error: f64,
    /// Pooled dispersion `√(mean σᵢ²)`.
    pub dispersion: f64,
    /// False when only one sign of θ was measured.
    pub paired: bool,
}

impl AveragedMeasurement {
    pub fn observation(&self) -> Observation {
        Observation {
            depth: self.depth,
            incidence: self.incidence_deg.to_radians(),
            error: self.error,
        }
    }
}

/// Distance the LIDAR should report given the interferometer reading.
pub fn corrected_distance(interferometer: f64, incidence: f64, g: &SetupGeometry) -> Result<f64> {
    if !(incidence.abs() < FRAC_PI_2) {
        return Err(Error::Domain(format!("|θ| must be < π/2, got {incidence}")));
    }
    Ok(interferometer - g.delta_z + g.delta_c / incidence.cos() - g.delta_x * incidence.tan())
}

/// `e = d − D_c`; negative when the LIDAR under-ranges. Falls back to the
/// record's precomputed error when it has no interferometer reading.
pub fn measurement_error(rec: &MeasurementRecord, g: &SetupGeometry) -> Result<f64> {
    rec.validate()?;
    match (rec.interferometer, rec.error) {
        (Some(d_ref), _) => Ok(rec.depth - corrected_distance(d_ref, rec.incidence_deg.to_radians(), g)?),
        (None, Some(e)) => Ok(e),
        (None, None) => Err(invalid(
            "record",
            "needs an interferometer reading or a precomputed error",
        )),
    }
}

/// Interferometer offset from the normal-incidence records: the value that
/// makes their mean error zero, `mean(D + δ_C − d)`.
pub fn estimate_delta_z(records: &[MeasurementRecord], delta_c: f64) -> Result<f64> {
    let diffs: Vec<f64> = records
        .iter()
        .filter(|r| r.incidence_deg.abs() <= PAIRING_TOLERANCE_DEG)
        .filter_map(|r| r.interferometer.map(|d_ref| d_ref + delta_c - r.depth))
        .collect();
    if diffs.is_empty() {
        return Err(Error::Precondition(
            "no normal-incidence records with an interferometer reading".into(),
        ));
    }
    Ok(diffs.iter().sum::<f64>() / diffs.len() as f64)
}

/// Averages the errors of `+θ` and `−θ` records at each depth.
///
/// Records are grouped by depth within [`PAIRING_DEPTH_TOLERANCE_M`] and by
/// `|θ|` within [`PAIRING_TOLERANCE_DEG`]. Within a group, errors are first averaged per
/// sign and the two sign means are then averaged, so an unequal number of
/// repeats on either side does not tilt the result. Groups with a single
/// sign pass through with `paired = false`; normal-incidence groups count
/// as paired.
pub fn symmetric_average(
    records: &[MeasurementRecord],
    g: &SetupGeometry,
) -> Result<Vec<AveragedMeasurement>> {
    let mut rows = records
        .iter()
        .map(|r| Ok((r.depth, r.incidence_deg, measurement_error(r, g)?, r.dispersion)))
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.abs().total_cmp(&y.1.abs())));

    let mut out = Vec::new();
    let mut start = 0;
    while start < rows.len() {
        let (d0, t0) = (rows[start].0, rows[start].1.abs());
        let mut end = start + 1;
        while end < rows.len()
            && rows[end].0 - d0 <= PAIRING_DEPTH_TOLERANCE_M
            && rows[end].1.abs() - t0 <= PAIRING_TOLERANCE_DEG
        {
            end += 1;
        }
        out.push(average_group(&rows[start..end]));
        start = end;
    }
    Ok(out)
}

fn average_group(group: &[(f64, f64, f64, f64)]) -> AveragedMeasurement {
    let n = group.len() as f64;
    let depth = group.iter().map(|r| r.0).sum::<f64>() / n;
    let incidence_deg = group.iter().map(|r| r.1.abs()).sum::<f64>() / n;
    let dispersion = (group.iter().map(|r| r.3 * r.3).sum::<f64>() / n).sqrt();

    let mean = |rows: Vec<f64>| (!rows.is_empty()).then(|| rows.iter().sum::<f64>() / rows.len() as f64);
    let normal = incidence_deg <= PAIRING_TOLERANCE_DEG;
    let pos = mean(group.iter().filter(|r| r.1 >= 0.0).map(|r| r.2).collect());
    let neg = mean(group.iter().filter(|r| r.1 < 0.0).map(|r| r.2).collect());
    let (error, paired) = match (pos, neg) {
        (Some(p), Some(m)) => (0.5 * (p + m), true),
        (Some(v), None) | (None, Some(v)) => (v, normal),
        (None, None) => unreachable!("groups are never empty"),
    };
    AveragedMeasurement {
        depth,
        incidence_deg,
        error,
        dispersion,
        paired,
    }
}

/// Perturbations applied to synthetic calibration data.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SyntheticNoise {
    /// Standard deviation of the Gaussian error noise, meters.
    pub sigma: f64,
    /// Fraction of observations that receive a gross error.
    pub outlier_fraction: f64,
    /// Size of the gross error, added with a random sign, meters.
    pub outlier_magnitude: f64,
}

/// Observations `e(d, θ)` of `model` at the `(d, θ)` nodes, perturbed by
/// `noise`. The same seed always yields the same data.
pub fn synthetic_observations(
    nodes: &[(f64, f64)],
    model: &SensorModel,
    pulse: &PulseParams,
    noise: &SyntheticNoise,
    seed: u64,
) -> Result<Vec<Observation>> {
    if !(noise.sigma >= 0.0) || !(0.0..=1.0).contains(&noise.outlier_fraction) {
        return Err(invalid("noise", "need sigma ≥ 0 and outlier fraction in [0, 1]"));
    }
    let gauss = Normal::new(0.0, noise.sigma).map_err(|e| invalid("sigma", e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = nodes
        .iter()
        .map(|&(d, t)| {
            let e = bias_error(d, t, model, pulse, DomainPolicy::Strict)?.value;
            Ok(Observation {
                depth: d,
                incidence: t,
                error: e + gauss.sample(&mut rng),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n_out = (noise.outlier_fraction * out.len() as f64).round() as usize;
    for i in index::sample(&mut rng, out.len(), n_out) {
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        out[i].error += sign * noise.outlier_magnitude;
    }
    Ok(out)
}
