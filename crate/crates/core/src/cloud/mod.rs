//! Point-cloud de-biasing.
//!
//! Normals come from a principal component analysis of each point's
//! neighbourhood; the incidence angle follows from the normal and the ray
//! back to the sensor, and each range is then lengthened by `|e(d, θ)|`
//! along its own ray.

mod io;
mod kdtree;
mod normals;

use std::fmt::Write as _;

use rayon::prelude::*;

pub use io::{read_csv, read_ply, write_csv, write_ply};
pub use kdtree::KdTree;
pub use normals::{estimate_normals, DEFAULT_NEIGHBOURS};

use crate::closed_form::{bias_error, DomainPolicy};
use crate::error::{Error, Result};
use crate::sensor::SensorModel;
use crate::waveform::PulseParams;
use crate::Vec3;

/// Largest deviation from unit length accepted for a supplied normal.
pub const UNIT_NORMAL_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Vec3>,
    /// One entry per point; `None` marks a normal that could not be estimated.
    normals: Option<Vec<Option<Vec3>>>,
    sensor_origin: Vec3,
    planar: bool,
    corrected: bool,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Self {
        Self {
            points,
            normals: None,
            sensor_origin: Vec3::zeros(),
            planar: false,
            corrected: false,
        }
    }

    pub fn with_origin(mut self, origin: Vec3) -> Self {
        self.sensor_origin = origin;
        self
    }

    /// Marks the cloud as a single-plane scan (all points share the sensor's
    /// `z`); normals are then estimated in the `xy` plane.
    pub fn with_planar(mut self, planar: bool) -> Self {
        self.planar = planar;
        self
    }

    /// Attaches normals; each must be unit length within
    /// [`UNIT_NORMAL_TOLERANCE`] or `None` for an invalid normal.
    pub fn with_normals(mut self, normals: Vec<Option<Vec3>>) -> Result<Self> {
        if normals.len() != self.points.len() {
            return Err(Error::Precondition(format!(
                "{} normals for {} points",
                normals.len(),
                self.points.len()
            )));
        }
        if let Some((i, n)) = normals
            .iter()
            .enumerate()
            .find_map(|(i, n)| n.filter(|n| !((n.norm() - 1.0).abs() <= UNIT_NORMAL_TOLERANCE)).map(|n| (i, n)))
        {
            return Err(Error::Precondition(format!("normal {i} is not unit length: |n| = {}", n.norm())));
        }
        self.normals = Some(normals);
        Ok(self)
    }

    pub fn without_normals(mut self) -> Self {
        self.normals = None;
        self
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn normals(&self) -> Option<&[Option<Vec3>]> {
        self.normals.as_deref()
    }

    pub fn normal(&self, i: usize) -> Option<Vec3> {
        self.normals.as_ref().and_then(|n| n[i])
    }

    pub fn sensor_origin(&self) -> Vec3 {
        self.sensor_origin
    }

    pub fn is_planar(&self) -> bool {
        self.planar
    }

    /// Set once the bias correction has been applied.
    pub fn is_corrected(&self) -> bool {
        self.corrected
    }

    pub(crate) fn mark_corrected(mut self, corrected: bool) -> Self {
        self.corrected = corrected;
        self
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn range(&self, i: usize) -> f64 {
        (self.points[i] - self.sensor_origin).norm()
    }

    /// Incidence angle of point `i`, `None` without a valid normal.
    pub fn incidence(&self, i: usize) -> Option<Result<f64>> {
        self.normal(i).map(|n| incidence_angle(&self.points[i], &n, &self.sensor_origin))
    }
}

/// Angle between the surface normal and the ray back to the sensor, in
/// `[0, π/2]`. Computed as `atan2(|n × u|, |n · u|)`, which equals
/// `acos(|n · u|)` but stays accurate near normal incidence.
pub fn incidence_angle(point: &Vec3, normal: &Vec3, sensor_origin: &Vec3) -> Result<f64> {
    let ray = sensor_origin - point;
    let len = ray.norm();
    if !(len > 0.0) || !len.is_finite() {
        return Err(Error::Domain("zero-length ray: point coincides with the sensor".into()));
    }
    let u = ray / len;
    Ok(normal.cross(&u).norm().atan2(normal.dot(&u).abs()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorrectionFlag {
    Corrected,
    /// Corrected with `(d, θ)` clamped into the model's domain.
    Clamped,
    /// Left unchanged because no valid normal was available.
    Skipped,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrectionOptions {
    /// Neighbours used when normals have to be estimated.
    pub neighbours: usize,
    /// Incidence angles above this are clamped before evaluating the bias.
    pub max_incidence: f64,
}

impl Default for CorrectionOptions {
    fn default() -> Self {
        Self {
            neighbours: DEFAULT_NEIGHBOURS,
            max_incidence: 85f64.to_radians(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointCorrection {
    pub point: Vec3,
    /// Range added along the ray, meters.
    pub correction: f64,
    pub flag: CorrectionFlag,
}

/// Moves `point` along its ray to range `d − e(d, θ)`.
pub fn correct_point(
    point: &Vec3,
    sensor_origin: &Vec3,
    incidence: f64,
    model: &SensorModel,
    pulse: &PulseParams,
    max_incidence: f64,
) -> Result<PointCorrection> {
    if !(0.0..=std::f64::consts::FRAC_PI_2).contains(&incidence) {
        return Err(Error::Domain(format!("incidence must lie in [0, π/2], got {incidence}")));
    }
    let ray = point - sensor_origin;
    let d = ray.norm();
    if !(d > 0.0) || !d.is_finite() {
        return Err(Error::Domain("zero-length ray: point coincides with the sensor".into()));
    }
    let theta = incidence.min(max_incidence);
    let eval = bias_error(d, theta, model, pulse, DomainPolicy::Clamp)?;
    let flag = if eval.clamped || theta < incidence {
        CorrectionFlag::Clamped
    } else {
        CorrectionFlag::Corrected
    };
    let corrected = d - eval.value;
    Ok(PointCorrection {
        point: sensor_origin + ray * (corrected / d),
        correction: -eval.value,
        flag,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionReport {
    pub corrected_count: usize,
    pub clamped_count: usize,
    pub skipped_count: usize,
    /// Largest range increase applied, meters.
    pub max_correction: f64,
    pub flags: Vec<CorrectionFlag>,
}

impl CorrectionReport {
    pub fn total(&self) -> usize {
        self.flags.len()
    }

    pub fn to_text(&self) -> String {
        format!(
            "points: {}\ncorrected: {}\nclamped: {}\nskipped: {}\nmax correction: {:.6} m\n",
            self.total(),
            self.corrected_count,
            self.clamped_count,
            self.skipped_count,
            self.max_correction
        )
    }

    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "points = {}", self.total());
        let _ = writeln!(out, "corrected_count = {}", self.corrected_count);
        let _ = writeln!(out, "clamped_count = {}", self.clamped_count);
        let _ = writeln!(out, "skipped_count = {}", self.skipped_count);
        let _ = writeln!(out, "max_correction_m = {:?}", self.max_correction);
        out
    }
}

/// Estimates normals when missing, then corrects every point with a valid
/// normal. Refuses clouds that are already corrected.
pub fn correct_cloud(
    cloud: &PointCloud,
    model: &SensorModel,
    pulse: &PulseParams,
    options: &CorrectionOptions,
) -> Result<(PointCloud, CorrectionReport)> {
    if cloud.is_corrected() {
        return Err(Error::AlreadyCorrected);
    }
    if cloud.is_empty() {
        return Err(Error::Precondition("cloud is empty".into()));
    }
    let estimated;
    let source = if cloud.normals().is_some() {
        cloud
    } else {
        estimated = estimate_normals(cloud, options.neighbours)?;
        &estimated
    };
    let origin = source.sensor_origin();
    let results = (0..source.len())
        .into_par_iter()
        .map(|i| {
            let p = source.points()[i];
            match source.incidence(i) {
                None => Ok(PointCorrection {
                    point: p,
                    correction: 0.0,
                    flag: CorrectionFlag::Skipped,
                }),
                Some(theta) => correct_point(&p, &origin, theta?, model, pulse, options.max_incidence),
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let count = |f: CorrectionFlag| results.iter().filter(|r| r.flag == f).count();
    let report = CorrectionReport {
        corrected_count: count(CorrectionFlag::Corrected),
        clamped_count: count(CorrectionFlag::Clamped),
        skipped_count: count(CorrectionFlag::Skipped),
        max_correction: results.iter().fold(0.0, |m, r| m.max(r.correction)),
        flags: results.iter().map(|r| r.flag).collect(),
    };
    let out = PointCloud {
        points: results.iter().map(|r| r.point).collect(),
        normals: source.normals.clone(),
        sensor_origin: origin,
        planar: source.planar,
        corrected: true,
    };
    Ok((out, report))
}

/// Keeps the points whose incidence angle is at most `max_incidence`.
/// Points without a valid normal are dropped.
pub fn angle_cutoff_filter(cloud: &PointCloud, max_incidence: f64) -> Result<PointCloud> {
    let normals = cloud
        .normals()
        .ok_or_else(|| Error::Precondition("angle cutoff needs normals".into()))?;
    let mut points = Vec::new();
    let mut kept = Vec::new();
    for (i, (p, n)) in cloud.points().iter().zip(normals).enumerate() {
        if let Some(n) = n {
            if incidence_angle(p, n, &cloud.sensor_origin)? <= max_incidence {
                points.push(cloud.points[i]);
                kept.push(Some(*n));
            }
        }
    }
    Ok(PointCloud {
        points,
        normals: Some(kept),
        sensor_origin: cloud.sensor_origin,
        planar: cloud.planar,
        corrected: cloud.corrected,
    })
}
