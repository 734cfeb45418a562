//! Per-sensor bias model and its key/value config format.
//!
//! ```text
//! # comment
//! name = LMS151
//! alpha_deg = 0.43
//! s1 = 6.08
//! s2 = 3.18e-3
//! ```
//!
//! Keys are case-sensitive; blank lines and `#` comments are ignored. Fit
//! outputs may carry extra metadata keys (`residual_rms_m`, `iterations`,
//! `points`, `converged`, `loss`), which are accepted and ignored on load.

use std::fmt::Write as _;
use std::path::Path;

use crate::closed_form::{bias_error, DomainPolicy};
use crate::error::{invalid, Error, Result};
use crate::waveform::{BeamGeometry, PulseParams};

const METADATA_KEYS: &[&str] = &["residual_rms_m", "iterations", "points", "converged", "loss"];

const PRESETS: &[(&str, &str)] = &[
    ("lms151", include_str!("../presets/lms151.conf")),
    ("rs-lidar-16", include_str!("../presets/rs-lidar-16.conf")),
    ("hdl-32e", include_str!("../presets/hdl-32e.conf")),
];

#[derive(Debug, Clone, PartialEq)]
pub struct SensorModel {
    pub name: String,
    /// Beam half-aperture α in radians.
    pub half_aperture: f64,
    /// Scale of the peak-shift metric (dimensionless).
    pub s1: f64,
    /// Scale of the shape metric, in meters.
    pub s2: f64,
}

impl SensorModel {
    pub fn new(name: impl Into<String>, half_aperture: f64, s1: f64, s2: f64) -> Result<Self> {
        if !(half_aperture > 0.0 && half_aperture < std::f64::consts::FRAC_PI_2) {
            return Err(invalid(
                "half_aperture",
                format!("must lie in (0, π/2), got {half_aperture}"),
            ));
        }
        if !s1.is_finite() || !s2.is_finite() {
            return Err(invalid("s1/s2", format!("must be finite, got {s1}, {s2}")));
        }
        Ok(Self {
            name: name.into(),
            half_aperture,
            s1,
            s2,
        })
    }

    /// 905 nm beam with this sensor's aperture.
    pub fn beam(&self) -> Result<BeamGeometry> {
        BeamGeometry::with_aperture(self.half_aperture)
    }

    /// `e(d, θ)` with the reference pulse, clamped to the validity domain.
    pub fn bias(&self, depth: f64, incidence: f64) -> Result<f64> {
        Ok(bias_error(depth, incidence, self, &PulseParams::reference(), DomainPolicy::Clamp)?.value)
    }

    /// Shipped presets: LMS151, RS-LiDAR-16, HDL-32E.
    pub fn presets() -> Vec<SensorModel> {
        PRESETS
            .iter()
            .map(|(_, text)| Self::parse(text).expect("shipped preset parses"))
            .collect()
    }

    /// Looks a preset up by its name or file stem, ignoring case.
    pub fn preset(name: &str) -> Option<SensorModel> {
        let wanted = name.to_ascii_lowercase();
        PRESETS.iter().find_map(|(stem, text)| {
            let model = Self::parse(text).expect("shipped preset parses");
            (wanted == *stem || wanted == model.name.to_ascii_lowercase()).then_some(model)
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut name = None;
        let mut alpha_deg = None;
        let mut s1 = None;
        let mut s2 = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse { line: i + 1, message };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| parse_err(format!("expected `key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            let number = || {
                value
                    .parse::<f64>()
                    .map_err(|_| parse_err(format!("`{key}` is not a number: `{value}`")))
            };
            match key {
                "name" => name = Some(value.to_string()),
                "alpha_deg" => alpha_deg = Some(number()?),
                "s1" => s1 = Some(number()?),
                "s2" => s2 = Some(number()?),
                k if METADATA_KEYS.contains(&k) => {}
                other => return Err(parse_err(format!("unknown key `{other}`"))),
            }
        }
        let missing = |k: &str| Error::Parse {
            line: 0,
            message: format!("missing key `{k}`"),
        };
        let alpha_deg = alpha_deg.ok_or_else(|| missing("alpha_deg"))?;
        Self::new(
            name.ok_or_else(|| missing("name"))?,
            alpha_deg.to_radians(),
            s1.ok_or_else(|| missing("s1"))?,
            s2.ok_or_else(|| missing("s2"))?,
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Config text; round-trips through [`SensorModel::parse`] exactly.
    pub fn to_config(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "name = {}", self.name);
        let _ = writeln!(out, "alpha_deg = {:?}", self.half_aperture.to_degrees());
        let _ = writeln!(out, "s1 = {:?}", self.s1);
        let _ = writeln!(out, "s2 = {:?}", self.s2);
        out
    }
}
