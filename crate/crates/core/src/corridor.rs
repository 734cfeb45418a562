//! Synthetic corridor scans with injected range bias.
//!
//! The corridor runs along world `x` over `[0, length]`. The right wall is
//! the plane `y = 0`, the left wall `y = width`, and in 3D the floor is
//! `z = 0` and the ceiling `z = height`. The ends are open. Sensor frames
//! have `x` forward, `y` left and `z` up.
//!
//! Every ray is intersected with the walls analytically, then its range is
//! shortened to the reading `d_m` that satisfies `d_m − e(d_m, θ) = d_true`,
//! so that correcting with the same model restores the true range exactly.
//! Scans are accumulated with their known poses, and the bend of the
//! resulting map is measured as the mean offset of the points from their
//! true walls in slices along the corridor.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::closed_form::{bias_error, DomainPolicy};
use crate::cloud::{correct_cloud, estimate_normals, CorrectionOptions, PointCloud};
use crate::error::{invalid, Error, Result};
use crate::sensor::SensorModel;
use crate::waveform::PulseParams;
use crate::Vec3;

/// Bins with fewer points are left out of the bend metric.
pub const MIN_BIN_POINTS: usize = 10;
const FIXED_POINT_TOL: f64 = 1e-13;
const FIXED_POINT_MAX_ITER: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorridorSpec {
    pub length: f64,
    pub width: f64,
    /// Zero for a 2D corridor without floor and ceiling.
    pub height: f64,
    /// Length of the slices the bend metric averages over.
    pub bin_length: f64,
}

impl CorridorSpec {
    pub fn new(length: f64, width: f64, height: f64, bin_length: f64) -> Result<Self> {
        for (name, v) in [("length", length), ("width", width), ("bin_length", bin_length)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(name, format!("must be > 0, got {v}")));
            }
        }
        if !(height >= 0.0 && height.is_finite()) {
            return Err(invalid("height", format!("must be ≥ 0, got {height}")));
        }
        Ok(Self {
            length,
            width,
            height,
            bin_length,
        })
    }

    pub fn is_3d(&self) -> bool {
        self.height > 0.0
    }

    /// Whether `p` lies inside the corridor (on the walls included).
    pub fn contains(&self, p: &Vec3) -> bool {
        (0.0..=self.length).contains(&p.x)
            && (0.0..=self.width).contains(&p.y)
            && (!self.is_3d() || (0.0..=self.height).contains(&p.z))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Surface {
    RightWall,
    LeftWall,
    Floor,
    Ceiling,
}

impl Surface {
    pub fn id(self) -> u8 {
        match self {
            Surface::RightWall => 0,
            Surface::LeftWall => 1,
            Surface::Floor => 2,
            Surface::Ceiling => 3,
        }
    }

    pub fn is_side_wall(self) -> bool {
        matches!(self, Surface::RightWall | Surface::LeftWall)
    }

    /// Unit normal pointing into the corridor.
    pub fn inward_normal(self) -> Vec3 {
        match self {
            Surface::RightWall => Vec3::y(),
            Surface::LeftWall => -Vec3::y(),
            Surface::Floor => Vec3::z(),
            Surface::Ceiling => -Vec3::z(),
        }
    }

    /// Signed offset of `p` from this surface along `y` or `z`.
    pub fn offset(self, p: &Vec3, spec: &CorridorSpec) -> f64 {
        match self {
            Surface::RightWall => p.y,
            Surface::LeftWall => p.y - spec.width,
            Surface::Floor => p.z,
            Surface::Ceiling => p.z - spec.height,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanPose {
    pub position: Vec3,
    /// Yaw about world `z`, radians.
    pub heading: f64,
}

impl ScanPose {
    pub fn new(position: Vec3, heading: f64) -> Result<Self> {
        if !(position.iter().all(|v| v.is_finite()) && heading.is_finite()) {
            return Err(invalid("pose", "position and heading must be finite"));
        }
        Ok(Self { position, heading })
    }

    pub fn to_world(&self, p: &Vec3) -> Vec3 {
        self.position + self.rotate(p)
    }

    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        let (s, c) = self.heading.sin_cos();
        Vec3::new(c * v.x - s * v.y, s * v.x + c * v.y, v.z)
    }

    pub fn unrotate(&self, v: &Vec3) -> Vec3 {
        let (s, c) = self.heading.sin_cos();
        Vec3::new(c * v.x + s * v.y, -s * v.x + c * v.y, v.z)
    }
}

/// Straight trajectory along the corridor at lateral offset `y` and
/// height `z`, one pose every `step` meters from `x = 0` to the end.
pub fn straight_trajectory(spec: &CorridorSpec, y: f64, z: f64, step: f64) -> Result<Vec<ScanPose>> {
    if !(step > 0.0) {
        return Err(invalid("step", format!("must be > 0, got {step}")));
    }
    let n = (spec.length / step + 1e-9).floor() as usize;
    (0..=n)
        .map(|i| ScanPose::new(Vec3::new(i as f64 * step, y, z), 0.0))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum RayPattern {
    /// Horizontal fan of `count` rays spread evenly over `field_of_view`
    /// radians, centred on the heading.
    Fan { count: usize, field_of_view: f64 },
    /// One full azimuth sweep per elevation, `azimuth_step` radians apart.
    Rings { elevations: Vec<f64>, azimuth_step: f64 },
}

impl RayPattern {
    /// Unit ray directions in the sensor frame.
    pub fn directions(&self) -> Result<Vec<Vec3>> {
        match self {
            RayPattern::Fan { count, field_of_view } => {
                if *count == 0 || !(*field_of_view > 0.0) {
                    return Err(invalid("fan", "needs at least one ray and a positive field of view"));
                }
                let step = if *count > 1 { field_of_view / (*count - 1) as f64 } else { 0.0 };
                let start = if *count > 1 { -0.5 * field_of_view } else { 0.0 };
                Ok((0..*count)
                    .map(|i| {
                        let a = start + step * i as f64;
                        Vec3::new(a.cos(), a.sin(), 0.0)
                    })
                    .collect())
            }
            RayPattern::Rings { elevations, azimuth_step } => {
                if elevations.is_empty() || !(*azimuth_step > 0.0) {
                    return Err(invalid("rings", "needs elevations and a positive azimuth step"));
                }
                let n = (std::f64::consts::TAU / azimuth_step).round().max(1.0) as usize;
                Ok(elevations
                    .iter()
                    .flat_map(|&el| {
                        (0..n).map(move |i| {
                            let az = i as f64 * azimuth_step;
                            Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin())
                        })
                    })
                    .collect())
            }
        }
    }

    pub fn is_planar(&self) -> bool {
        matches!(self, RayPattern::Fan { .. })
    }

    pub fn lms151() -> Self {
        RayPattern::Fan {
            count: 541,
            field_of_view: 270f64.to_radians(),
        }
    }

    /// 16 rings evenly spaced over ±15°, 1° azimuth step.
    pub fn sixteen_rings() -> Self {
        RayPattern::Rings {
            elevations: (0..16).map(|i| (-15.0 + 2.0 * i as f64).to_radians()).collect(),
            azimuth_step: 1f64.to_radians(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanOptions {
    pub max_range: f64,
    /// Fraction of floor returns kept, to emulate a floor that reflects
    /// differently from the ceiling.
    pub floor_keep_fraction: f64,
    /// Standard deviation of Gaussian range noise; zero disables it.
    pub range_noise: f64,
    pub seed: u64,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self {
            max_range: 30.0,
            floor_keep_fraction: 1.0,
            range_noise: 0.0,
            seed: 0,
        }
    }
}

/// One scan in the sensor frame plus its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedScan {
    pub pose: ScanPose,
    /// Biased points, sensor frame, sensor at the origin.
    pub cloud: PointCloud,
    pub surfaces: Vec<Surface>,
    pub true_ranges: Vec<f64>,
    pub true_incidences: Vec<f64>,
    /// Exact normals in the sensor frame, facing the sensor.
    pub exact_normals: Vec<Vec3>,
    /// Rays that hit nothing within range or left through an open end.
    pub dropped: usize,
}

/// Reading `d_m` that the sensor reports for a true range `d_true`, the
/// solution of `d_m − e(d_m, θ) = d_true`.
pub fn biased_range(d_true: f64, incidence: f64, model: &SensorModel, pulse: &PulseParams) -> Result<f64> {
    let mut d = d_true;
    for _ in 0..FIXED_POINT_MAX_ITER {
        let next = d_true + bias_error(d, incidence, model, pulse, DomainPolicy::Clamp)?.value;
        if !(next > 0.0) {
            return Err(Error::ModelValidity(format!(
                "bias exceeds the range at d = {d_true} m, θ = {incidence} rad"
            )));
        }
        if (next - d).abs() <= FIXED_POINT_TOL * d_true.max(1.0) {
            return Ok(next);
        }
        d = next;
    }
    Err(Error::ModelValidity(format!(
        "biased range did not converge at d = {d_true} m, θ = {incidence} rad"
    )))
}

fn intersect(origin: &Vec3, dir: &Vec3, spec: &CorridorSpec) -> Option<(f64, Surface)> {
    let mut best: Option<(f64, Surface)> = None;
    let mut consider = |t: f64, s: Surface| {
        if t > 0.0 && best.is_none_or(|(b, _)| t < b) {
            best = Some((t, s));
        }
    };
    if dir.y < 0.0 {
        consider(-origin.y / dir.y, Surface::RightWall);
    } else if dir.y > 0.0 {
        consider((spec.width - origin.y) / dir.y, Surface::LeftWall);
    }
    if spec.is_3d() {
        if dir.z < 0.0 {
            consider(-origin.z / dir.z, Surface::Floor);
        } else if dir.z > 0.0 {
            consider((spec.height - origin.z) / dir.z, Surface::Ceiling);
        }
    }
    best
}

/// Casts every ray of `pattern` from `pose` and injects the bias of `model`.
pub fn simulate_scan(
    pose: &ScanPose,
    spec: &CorridorSpec,
    model: &SensorModel,
    pulse: &PulseParams,
    pattern: &RayPattern,
    options: &ScanOptions,
) -> Result<SimulatedScan> {
    if !spec.contains(&pose.position) {
        return Err(Error::Precondition(format!("pose {:?} is outside the corridor", pose.position)));
    }
    if pattern.is_planar() == spec.is_3d() {
        return Err(Error::Precondition(
            "fan patterns need a 2D corridor and ring patterns a 3D one".into(),
        ));
    }
    if !(options.max_range > 0.0) || !(0.0..=1.0).contains(&options.floor_keep_fraction) || !(options.range_noise >= 0.0) {
        return Err(invalid("scan options", "need max_range > 0, keep fraction in [0, 1], noise ≥ 0"));
    }
    let noise = Normal::new(0.0, options.range_noise).map_err(|e| invalid("range_noise", e.to_string()))?;
    let seed = options.seed ^ pose.position.x.to_bits().rotate_left(17) ^ pose.position.y.to_bits();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut scan = SimulatedScan {
        pose: *pose,
        cloud: PointCloud::new(Vec::new()),
        surfaces: Vec::new(),
        true_ranges: Vec::new(),
        true_incidences: Vec::new(),
        exact_normals: Vec::new(),
        dropped: 0,
    };
    let mut points = Vec::new();
    let mut floor_seen = 0usize;
    for dir in pattern.directions()? {
        let world_dir = pose.rotate(&dir);
        let Some((t, surface)) = intersect(&pose.position, &world_dir, spec) else {
            scan.dropped += 1;
            continue;
        };
        let hit = pose.position + world_dir * t;
        if t > options.max_range || !(0.0..=spec.length).contains(&hit.x) {
            scan.dropped += 1;
            continue;
        }
        if surface == Surface::Floor {
            let before = (floor_seen as f64 * options.floor_keep_fraction).floor();
            floor_seen += 1;
            if (floor_seen as f64 * options.floor_keep_fraction).floor() == before {
                continue;
            }
        }
        let n_world = surface.inward_normal();
        let cos = n_world.dot(&world_dir).abs().min(1.0);
        let theta = n_world.cross(&world_dir).norm().atan2(cos);
        let mut d_m = biased_range(t, theta, model, pulse)?;
        if options.range_noise > 0.0 {
            d_m += noise.sample(&mut rng);
        }
        points.push(dir * d_m);
        scan.surfaces.push(surface);
        scan.true_ranges.push(t);
        scan.true_incidences.push(theta);
        scan.exact_normals.push(pose.unrotate(&n_world));
    }
    scan.cloud = PointCloud::new(points).with_planar(pattern.is_planar());
    Ok(scan)
}

impl SimulatedScan {
    /// The scan cloud with its exact normals attached.
    pub fn with_exact_normals(&self) -> Result<PointCloud> {
        self.cloud
            .clone()
            .with_normals(self.exact_normals.iter().map(|n| Some(*n)).collect())
    }
}

/// Transforms each scan into the world frame and concatenates them.
/// Normals are carried along only when every scan has them.
pub fn accumulate(scans: &[(ScanPose, PointCloud)]) -> Result<PointCloud> {
    let with_normals = !scans.is_empty() && scans.iter().all(|(_, c)| c.normals().is_some());
    let mut points = Vec::new();
    let mut normals = Vec::new();
    for (pose, cloud) in scans {
        let origin = cloud.sensor_origin();
        for (i, p) in cloud.points().iter().enumerate() {
            points.push(pose.to_world(&(p - origin)));
            if with_normals {
                normals.push(cloud.normal(i).map(|n| pose.rotate(&n)));
            }
        }
    }
    let planar = !scans.is_empty() && scans.iter().all(|(_, c)| c.is_planar());
    let mut out = PointCloud::new(points).with_planar(planar);
    if with_normals {
        out = out.with_normals(normals)?;
    }
    Ok(out)
}

/// Mean offset of the points in one slice of the corridor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BendBin {
    pub x_start: f64,
    pub x_end: f64,
    pub count: usize,
    /// Mean `y` offset of side-wall points from their wall.
    pub lateral: Option<f64>,
    /// Mean `z` offset of floor and ceiling points from their surface.
    pub vertical: Option<f64>,
}

impl BendBin {
    pub fn centre(&self) -> f64 {
        0.5 * (self.x_start + self.x_end)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BendMetric {
    pub max_lateral_dev: f64,
    pub max_vertical_dev: f64,
    /// `√(mean(lateral² + vertical²))` over the bins.
    pub rms_dev: f64,
    pub bins: Vec<BendBin>,
}

impl BendMetric {
    pub fn to_key_values(&self) -> String {
        format!(
            "max_lateral_dev_m = {:?}\nmax_vertical_dev_m = {:?}\nrms_dev_m = {:?}\nbins = {}\n",
            self.max_lateral_dev,
            self.max_vertical_dev,
            self.rms_dev,
            self.bins.len()
        )
    }

    /// Per-bin centreline offsets, CSV `x_start_m,x_end_m,count,lateral_m,vertical_m`.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "x_start_m,x_end_m,count,lateral_m,vertical_m")?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:e}"));
        for b in &self.bins {
            writeln!(out, "{},{},{},{},{}", b.x_start, b.x_end, b.count, opt(b.lateral), opt(b.vertical))?;
        }
        Ok(())
    }
}

/// Bend of a world-frame cloud whose points are labelled with the surface
/// they were sampled from.
pub fn bend_metric(cloud: &PointCloud, surfaces: &[Surface], spec: &CorridorSpec) -> Result<BendMetric> {
    if surfaces.len() != cloud.len() {
        return Err(Error::Precondition(format!(
            "{} labels for {} points",
            surfaces.len(),
            cloud.len()
        )));
    }
    let n_bins = (spec.length / spec.bin_length).ceil().max(1.0) as usize;
    // (count, lateral sum, lateral count, vertical sum, vertical count)
    let mut acc = vec![(0usize, 0.0, 0usize, 0.0, 0usize); n_bins];
    for (p, s) in cloud.points().iter().zip(surfaces) {
        if !(0.0..=spec.length).contains(&p.x) {
            continue;
        }
        let b = ((p.x / spec.bin_length) as usize).min(n_bins - 1);
        let a = &mut acc[b];
        a.0 += 1;
        let off = s.offset(p, spec);
        if s.is_side_wall() {
            a.1 += off;
            a.2 += 1;
        } else {
            a.3 += off;
            a.4 += 1;
        }
    }
    let bins: Vec<BendBin> = acc
        .iter()
        .enumerate()
        .filter(|(_, a)| a.0 >= MIN_BIN_POINTS)
        .map(|(i, a)| BendBin {
            x_start: i as f64 * spec.bin_length,
            x_end: ((i + 1) as f64 * spec.bin_length).min(spec.length),
            count: a.0,
            lateral: (a.2 > 0).then(|| a.1 / a.2 as f64),
            vertical: (a.4 > 0).then(|| a.3 / a.4 as f64),
        })
        .collect();
    if bins.is_empty() {
        return Err(Error::Precondition(format!("no bin holds {MIN_BIN_POINTS} points")));
    }
    let max_abs = |f: fn(&BendBin) -> Option<f64>| bins.iter().filter_map(f).fold(0.0, |m: f64, v| m.max(v.abs()));
    let sq = bins
        .iter()
        .map(|b| b.lateral.unwrap_or(0.0).powi(2) + b.vertical.unwrap_or(0.0).powi(2))
        .sum::<f64>();
    Ok(BendMetric {
        max_lateral_dev: max_abs(|b| b.lateral),
        max_vertical_dev: max_abs(|b| b.vertical),
        rms_dev: (sq / bins.len() as f64).sqrt(),
        bins,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormalSource {
    /// Ground-truth wall normals.
    Exact,
    /// PCA normals from `k` neighbours within each scan.
    Estimated { neighbours: usize },
}

/// A corridor, a trajectory and a scanner.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub spec: CorridorSpec,
    pub trajectory: Vec<ScanPose>,
    pub pattern: RayPattern,
    pub options: ScanOptions,
    pub sensor: SensorModel,
}

impl Scenario {
    /// 94 m × 2 m corridor, LMS151 fan, 0.5 m from the right wall, a scan
    /// every 0.5 m.
    pub fn planar_default() -> Self {
        let spec = CorridorSpec::new(94.0, 2.0, 0.0, 5.0).expect("valid spec");
        Self {
            trajectory: straight_trajectory(&spec, 0.5, 0.0, 0.5).expect("valid trajectory"),
            spec,
            pattern: RayPattern::lms151(),
            options: ScanOptions::default(),
            sensor: SensorModel::preset("lms151").expect("shipped preset"),
        }
    }

    /// 94 m × 2 m × 2.5 m corridor, 16-ring HDL-32E-like scanner in the
    /// middle of the cross-section, a scan every 2 m, half the floor
    /// returns dropped.
    pub fn volumetric_default() -> Self {
        let spec = CorridorSpec::new(94.0, 2.0, 2.5, 5.0).expect("valid spec");
        Self {
            trajectory: straight_trajectory(&spec, 1.0, 1.25, 2.0).expect("valid trajectory"),
            spec,
            pattern: RayPattern::sixteen_rings(),
            options: ScanOptions {
                floor_keep_fraction: 0.5,
                ..ScanOptions::default()
            },
            sensor: SensorModel::preset("hdl-32e").expect("shipped preset"),
        }
    }

    pub fn simulate(&self, pulse: &PulseParams) -> Result<Vec<SimulatedScan>> {
        self.trajectory
            .par_iter()
            .map(|pose| simulate_scan(pose, &self.spec, &self.sensor, pulse, &self.pattern, &self.options))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoOutcome {
    pub uncorrected: BendMetric,
    pub corrected: Option<BendMetric>,
    pub world_before: PointCloud,
    pub world_after: Option<PointCloud>,
    pub surfaces: Vec<Surface>,
    /// Largest `|corrected range − true range|` over all points, meters.
    pub closure_error: Option<f64>,
    /// Points whose normal could not be estimated.
    pub skipped: usize,
}

/// Simulates the scenario, accumulates the biased scans and, when `normals`
/// is given, corrects every scan before accumulating again.
pub fn demo_pipeline(
    scenario: &Scenario,
    pulse: &PulseParams,
    normals: Option<NormalSource>,
) -> Result<DemoOutcome> {
    let scans = scenario.simulate(pulse)?;
    let surfaces: Vec<Surface> = scans.iter().flat_map(|s| s.surfaces.iter().copied()).collect();
    let raw: Vec<(ScanPose, PointCloud)> = scans.iter().map(|s| (s.pose, s.cloud.clone())).collect();
    let world_before = accumulate(&raw)?;
    let uncorrected = bend_metric(&world_before, &surfaces, &scenario.spec)?;

    let Some(source) = normals else {
        return Ok(DemoOutcome {
            uncorrected,
            corrected: None,
            world_before,
            world_after: None,
            surfaces,
            closure_error: None,
            skipped: 0,
        });
    };

    let corrected = scans
        .par_iter()
        .map(|s| {
            let (with_normals, opts) = match source {
                NormalSource::Exact => (s.with_exact_normals()?, CorrectionOptions::default()),
                NormalSource::Estimated { neighbours } => (
                    estimate_normals(&s.cloud, neighbours)?,
                    CorrectionOptions {
                        neighbours,
                        ..CorrectionOptions::default()
                    },
                ),
            };
            let (out, report) = correct_cloud(&with_normals, &scenario.sensor, pulse, &opts)?;
            let closure = out
                .points()
                .iter()
                .zip(&s.true_ranges)
                .map(|(p, t)| (p.norm() - t).abs())
                .fold(0.0, f64::max);
            Ok(((s.pose, out), closure, report.skipped_count))
        })
        .collect::<Result<Vec<_>>>()?;
    let closure_error = corrected.iter().map(|c| c.1).fold(0.0, f64::max);
    let skipped = corrected.iter().map(|c| c.2).sum();
    let after: Vec<(ScanPose, PointCloud)> = corrected.into_iter().map(|c| c.0).collect();
    let world_after = accumulate(&after)?;
    let corrected_metric = bend_metric(&world_after, &surfaces, &scenario.spec)?;
    Ok(DemoOutcome {
        uncorrected,
        corrected: Some(corrected_metric),
        world_before,
        world_after: Some(world_after),
        surfaces,
        closure_error: Some(closure_error),
        skipped,
    })
}
