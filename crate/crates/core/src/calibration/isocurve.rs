use std::io::Write;

use rayon::prelude::*;

use crate::closed_form::{bias_error, DomainPolicy};
use crate::error::{invalid, Result};
use crate::sensor::SensorModel;
use crate::waveform::PulseParams;

/// Bias values on a rectangular `(θ, d)` grid, stored θ-major.
#[derive(Debug, Clone, PartialEq)]
pub struct IsocurveGrid {
    pub depths: Vec<f64>,
    pub incidences_deg: Vec<f64>,
    pub values: Vec<f64>,
}

impl IsocurveGrid {
    pub fn get(&self, incidence_index: usize, depth_index: usize) -> f64 {
        self.values[incidence_index * self.depths.len() + depth_index]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// CSV with header `d_m,theta_deg,error_m`, one row per grid node.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["d_m", "theta_deg", "error_m"]).map_err(csv_err)?;
        for (i, t) in self.incidences_deg.iter().enumerate() {
            for (j, d) in self.depths.iter().enumerate() {
                w.write_record([d.to_string(), t.to_string(), format!("{:e}", self.get(i, j))])
                    .map_err(csv_err)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> crate::Error {
    crate::Error::Io(e.to_string())
}

fn linspace(range: (f64, f64), n: usize, name: &'static str) -> Result<Vec<f64>> {
    let (lo, hi) = range;
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(invalid(name, format!("range [{lo}, {hi}] is not ordered")));
    }
    if n == 0 || (n == 1 && lo != hi) {
        return Err(invalid(name, format!("resolution {n} cannot cover [{lo}, {hi}]")));
    }
    if n == 1 {
        return Ok(vec![lo]);
    }
    let step = (hi - lo) / (n - 1) as f64;
    Ok((0..n).map(|i| if i + 1 == n { hi } else { lo + step * i as f64 }).collect())
}

/// Evaluates `e(d, θ)` on a `resolution.0 × resolution.1` (depth × angle)
/// grid. Ranges outside the validity domain are refused.
pub fn isocurve_grid(
    model: &SensorModel,
    pulse: &PulseParams,
    depth_range: (f64, f64),
    incidence_range_deg: (f64, f64),
    resolution: (usize, usize),
) -> Result<IsocurveGrid> {
    let depths = linspace(depth_range, resolution.0, "depth_range")?;
    let incidences_deg = linspace(incidence_range_deg, resolution.1, "incidence_range")?;
    let nodes: Vec<(f64, f64)> = incidences_deg
        .iter()
        .flat_map(|&t| depths.iter().map(move |&d| (d, t)))
        .collect();
    let values = nodes
        .par_iter()
        .map(|&(d, t)| Ok(bias_error(d, t.to_radians(), model, pulse, DomainPolicy::Strict)?.value))
        .collect::<Result<Vec<_>>>()?;
    Ok(IsocurveGrid {
        depths,
        incidences_deg,
        values,
    })
}
