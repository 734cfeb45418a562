//! Numerical simulation of the return waveform.
//!
//! The sensor sits at the origin looking down `+z`. A plane parallel to `y`
//! is hit by the beam centre at depth `d`, its normal tilted by `θ` from the
//! beam axis. A point of the plane is addressed by its angular offsets `a`
//! (in the tilt plane `xz`) and `b` (in `yz`) from the beam centre.
//!
//! The returned intensity at time `t` integrates, over the illuminated
//! patch, the Lambertian factor, the Gaussian beam profile and the emitted
//! pulse delayed by the round trip `2ρ/c` to that point.

use std::f64::consts::{FRAC_PI_2, PI};

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::quadrature::{adaptive_simpson, composite_simpson};
use crate::SPEED_OF_LIGHT;

/// Samples in the default time window.
pub const DEFAULT_SAMPLES: usize = 512;
/// Minimum samples accepted by the waveform simulators.
pub const MIN_SAMPLES: usize = 64;
/// Default half-width of the time window, in pulse sigmas.
pub const WINDOW_SIGMAS: f64 = 4.0;
/// Absolute quadrature tolerance, relative to the peak sample value.
pub const QUADRATURE_REL_TOL: f64 = 1e-12;

/// Emitted Gaussian pulse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseParams {
    peak_power: f64,
    pulse_length: f64,
    sigma: f64,
}

impl PulseParams {
    /// `peak_power` is `I₀` in W/m², `pulse_length` is `τ` in seconds.
    pub fn new(peak_power: f64, pulse_length: f64) -> Result<Self> {
        if !(peak_power > 0.0 && peak_power.is_finite()) {
            return Err(invalid("peak_power", format!("must be > 0, got {peak_power}")));
        }
        if !(pulse_length > 0.0 && pulse_length.is_finite()) {
            return Err(invalid("pulse_length", format!("must be > 0, got {pulse_length}")));
        }
        Ok(Self {
            peak_power,
            pulse_length,
            sigma: pulse_length / (2.0 * PI).sqrt(),
        })
    }

    /// `I₀ = 0.39 W/m²`, `τ = 50 ns`.
    pub fn reference() -> Self {
        Self::new(0.39, 50e-9).expect("reference pulse is valid")
    }

    pub fn peak_power(&self) -> f64 {
        self.peak_power
    }

    pub fn pulse_length(&self) -> f64 {
        self.pulse_length
    }

    /// Gaussian standard deviation `τ/√(2π)` in seconds.
    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

/// Gaussian beam parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamGeometry {
    wavelength: f64,
    half_aperture: f64,
    waist: f64,
}

impl BeamGeometry {
    /// Reference wavelength of the shipped sensor models, 905 nm.
    pub const REFERENCE_WAVELENGTH: f64 = 905e-9;

    pub fn new(wavelength: f64, half_aperture: f64) -> Result<Self> {
        if !(wavelength > 0.0 && wavelength.is_finite()) {
            return Err(invalid("wavelength", format!("must be > 0, got {wavelength}")));
        }
        if !(half_aperture > 0.0 && half_aperture < FRAC_PI_2) {
            return Err(invalid(
                "half_aperture",
                format!("must lie in (0, π/2), got {half_aperture}"),
            ));
        }
        Ok(Self {
            wavelength,
            half_aperture,
            waist: wavelength / (PI * half_aperture),
        })
    }

    /// 905 nm beam with the given half-aperture.
    pub fn with_aperture(half_aperture: f64) -> Result<Self> {
        Self::new(Self::REFERENCE_WAVELENGTH, half_aperture)
    }

    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }

    pub fn half_aperture(&self) -> f64 {
        self.half_aperture
    }

    /// Beam waist `ω₀ = λ/(πα)`.
    pub fn waist(&self) -> f64 {
        self.waist
    }
}

/// Plane hit by the beam centre at `depth`, tilted by `incidence`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceTarget {
    pub depth: f64,
    pub incidence: f64,
}

impl SurfaceTarget {
    pub fn new(depth: f64, incidence: f64) -> Result<Self> {
        if !(depth > 0.0 && depth.is_finite()) {
            return Err(invalid("depth", format!("must be > 0, got {depth}")));
        }
        if !(0.0..FRAC_PI_2).contains(&incidence) {
            return Err(invalid(
                "incidence",
                format!("must lie in [0, π/2), got {incidence}"),
            ));
        }
        Ok(Self { depth, incidence })
    }

    /// The whole beam cone must intersect the plane.
    pub fn check_beam(&self, beam: &BeamGeometry) -> Result<()> {
        if self.incidence + beam.half_aperture() >= FRAC_PI_2 {
            return Err(Error::GrazingGeometry {
                a: beam.half_aperture(),
                theta: self.incidence,
            });
        }
        Ok(())
    }

    /// Round-trip time to the beam centre, `2d/c`.
    pub fn round_trip(&self) -> f64 {
        2.0 * self.depth / SPEED_OF_LIGHT
    }
}

/// Uniformly sampled intensity trace.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledWaveform {
    t0: f64,
    dt: f64,
    samples: Vec<f64>,
}

impl SampledWaveform {
    pub fn new(t0: f64, dt: f64, samples: Vec<f64>) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) || !t0.is_finite() {
            return Err(invalid("dt", format!("t0 = {t0}, dt = {dt}")));
        }
        if samples.is_empty() {
            return Err(invalid("samples", "waveform must not be empty"));
        }
        if let Some(bad) = samples.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(invalid(
                "samples",
                format!("intensities must be finite and non-negative, found {bad}"),
            ));
        }
        Ok(Self { t0, dt, samples })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn time(&self, index: usize) -> f64 {
        self.t0 + self.dt * index as f64
    }

    /// Index of the first maximal sample.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.samples.iter().enumerate() {
            if *v > self.samples[best] {
                best = i;
            }
        }
        best
    }

    /// Rectangle-rule energy `Σ sᵢ · dt`.
    pub fn total_energy(&self) -> f64 {
        self.samples.iter().sum::<f64>() * self.dt
    }

    /// Writes `t_seconds,intensity` CSV.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t_seconds,intensity")?;
        for (i, v) in self.samples.iter().enumerate() {
            writeln!(out, "{:e},{:e}", self.time(i), v)?;
        }
        Ok(())
    }
}

/// Which surface integral the simulator evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Integration {
    /// Single integral over `a ∈ [−α, α]` with `b = 0`.
    #[default]
    Restricted2d,
    /// Double integral over `a, b ∈ [−α, α]`.
    Full,
}

/// Sample times `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeWindow {
    pub start: f64,
    pub end: f64,
}

impl TimeWindow {
    /// `2d/c ± 4σ`.
    pub fn around_peak(target: &SurfaceTarget, pulse: &PulseParams) -> Self {
        let centre = target.round_trip();
        let half = WINDOW_SIGMAS * pulse.sigma();
        Self {
            start: centre - half,
            end: centre + half,
        }
    }
}

/// Emitted pulse `I₀·exp(−t²/(2σ²))`.
pub fn emitted_pulse(t: f64, pulse: &PulseParams) -> f64 {
    let s = pulse.sigma();
    pulse.peak_power() * (-(t * t) / (2.0 * s * s)).exp()
}

/// Gaussian beam intensity factor `(ω₀/(αz))²·exp(−2r²/(α²z²))`.
pub fn beam_intensity(r: f64, z: f64, beam: &BeamGeometry) -> Result<f64> {
    if !(z > 0.0) {
        return Err(Error::Domain(format!("beam_intensity needs z > 0, got {z}")));
    }
    let az = beam.half_aperture() * z;
    let on_axis = (beam.waist() / az).powi(2);
    Ok(on_axis * (-2.0 * r * r / (az * az)).exp())
}

/// Distances from the emitter to a point of the plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointGeometry {
    /// Emitter-to-point distance.
    pub rho: f64,
    /// Distance from the beam axis.
    pub r: f64,
    /// Distance along the beam axis.
    pub z: f64,
}

pub fn point_geometry(a: f64, b: f64, target: &SurfaceTarget) -> Result<PointGeometry> {
    if a.abs() >= FRAC_PI_2 || b.abs() >= FRAC_PI_2 {
        return Err(Error::Domain(format!(
            "beam offsets must satisfy |a|, |b| < π/2, got a = {a}, b = {b}"
        )));
    }
    let theta = target.incidence;
    if a + theta >= FRAC_PI_2 || a + theta <= -FRAC_PI_2 {
        return Err(Error::GrazingGeometry { a, theta });
    }
    let z = target.depth * a.cos() * theta.cos() / (a + theta).cos();
    let (ta, tb) = (a.tan(), b.tan());
    let r = z * (ta * ta + tb * tb).sqrt();
    let rho = (r * r + z * z).sqrt();
    Ok(PointGeometry { rho, r, z })
}

/// Lambertian-weighted, beam-weighted pulse reaching the point `(a, b)`,
/// evaluated at time `t` after the one-way delay `ρ/c`.
pub fn projected_energy(
    t: f64,
    a: f64,
    b: f64,
    target: &SurfaceTarget,
    pulse: &PulseParams,
    beam: &BeamGeometry,
) -> Result<f64> {
    let g = point_geometry(a, b, target)?;
    Ok(projected_with(t, a, b, &g, target, pulse, beam))
}

fn projected_with(
    t: f64,
    a: f64,
    b: f64,
    g: &PointGeometry,
    target: &SurfaceTarget,
    pulse: &PulseParams,
    beam: &BeamGeometry,
) -> f64 {
    // cos γ with γ = arccos(cos(a+θ)·cos b)
    let lambert = ((a + target.incidence).cos() * b.cos()).max(0.0);
    let az = beam.half_aperture() * g.z;
    let profile = (beam.waist() / az).powi(2) * (-2.0 * g.r * g.r / (az * az)).exp();
    lambert * emitted_pulse(t - g.rho / SPEED_OF_LIGHT, pulse) * profile
}

/// Integrand of the return waveform: the projected energy evaluated at
/// `t − ρ/c`, so the pulse is delayed by the full round trip `2ρ/c`.
fn returned(
    t: f64,
    a: f64,
    b: f64,
    target: &SurfaceTarget,
    pulse: &PulseParams,
    beam: &BeamGeometry,
) -> f64 {
    match point_geometry(a, b, target) {
        Ok(g) => projected_with(t - g.rho / SPEED_OF_LIGHT, a, b, &g, target, pulse, beam),
        Err(_) => f64::NAN,
    }
}

fn check_inputs(
    target: &SurfaceTarget,
    beam: &BeamGeometry,
    window: &TimeWindow,
    n_samples: usize,
) -> Result<()> {
    target.check_beam(beam)?;
    if n_samples < MIN_SAMPLES {
        return Err(invalid(
            "n_samples",
            format!("need at least {MIN_SAMPLES}, got {n_samples}"),
        ));
    }
    let peak = target.round_trip();
    if !(window.start < peak && peak < window.end) {
        return Err(invalid(
            "time_window",
            format!(
                "[{:e}, {:e}] s does not contain the round-trip time {peak:e} s",
                window.start, window.end
            ),
        ));
    }
    Ok(())
}

fn sample_times(window: &TimeWindow, n: usize) -> (f64, f64) {
    (window.start, (window.end - window.start) / (n - 1) as f64)
}

/// Evaluates single waveform samples with tolerances fixed once per target.
struct Sampler<'a> {
    target: &'a SurfaceTarget,
    pulse: &'a PulseParams,
    beam: &'a BeamGeometry,
    mode: Integration,
    tol: f64,
    inner_tol: f64,
}

impl<'a> Sampler<'a> {
    fn new(target: &'a SurfaceTarget, pulse: &'a PulseParams, beam: &'a BeamGeometry, mode: Integration) -> Self {
        let alpha = beam.half_aperture();
        let t = target.round_trip();
        let scale = match mode {
            Integration::Restricted2d => {
                composite_simpson(|a| returned(t, a, 0.0, target, pulse, beam), -alpha, alpha, 64)
            }
            Integration::Full => composite_simpson(
                |a| composite_simpson(|b| returned(t, a, b, target, pulse, beam), -alpha, alpha, 32),
                -alpha,
                alpha,
                32,
            ),
        };
        let tol = QUADRATURE_REL_TOL * scale.abs().max(f64::MIN_POSITIVE);
        Self {
            target,
            pulse,
            beam,
            mode,
            tol,
            // Inner errors are integrated over a span of 2α.
            inner_tol: 0.25 * tol / alpha,
        }
    }

    fn value(&self, t: f64) -> Result<f64> {
        let (target, pulse, beam) = (self.target, self.pulse, self.beam);
        let alpha = beam.half_aperture();
        let v = match self.mode {
            Integration::Restricted2d => {
                adaptive_simpson(|a| returned(t, a, 0.0, target, pulse, beam), -alpha, alpha, self.tol)?
            }
            Integration::Full => {
                let inner = |a: f64| {
                    adaptive_simpson(|b| returned(t, a, b, target, pulse, beam), -alpha, alpha, self.inner_tol)
                        .map(|r| r.value)
                        .unwrap_or(f64::NAN)
                };
                adaptive_simpson(inner, -alpha, alpha, self.tol)?
            }
        };
        Ok(v.value.max(0.0))
    }
}

fn sampled(
    target: &SurfaceTarget,
    pulse: &PulseParams,
    beam: &BeamGeometry,
    window: TimeWindow,
    n_samples: usize,
    mode: Integration,
) -> Result<SampledWaveform> {
    check_inputs(target, beam, &window, n_samples)?;
    let sampler = Sampler::new(target, pulse, beam, mode);
    let (t0, dt) = sample_times(&window, n_samples);
    let samples = (0..n_samples)
        .into_par_iter()
        .map(|i| sampler.value(t0 + dt * i as f64))
        .collect::<Result<Vec<_>>>()?;
    SampledWaveform::new(t0, dt, samples)
}

/// Return waveform restricted to the tilt plane (`b = 0`), integrated over
/// `a ∈ [−α, α]`.
pub fn return_waveform_2d(
    target: &SurfaceTarget,
    pulse: &PulseParams,
    beam: &BeamGeometry,
    window: TimeWindow,
    n_samples: usize,
) -> Result<SampledWaveform> {
    sampled(target, pulse, beam, window, n_samples, Integration::Restricted2d)
}

/// Return waveform over the whole illuminated patch, `a, b ∈ [−α, α]`.
pub fn return_waveform_full(
    target: &SurfaceTarget,
    pulse: &PulseParams,
    beam: &BeamGeometry,
    window: TimeWindow,
    n_samples: usize,
) -> Result<SampledWaveform> {
    sampled(target, pulse, beam, window, n_samples, Integration::Full)
}

/// Simulates with the default window and sample count.
pub fn simulate(
    target: &SurfaceTarget,
    pulse: &PulseParams,
    beam: &BeamGeometry,
    mode: Integration,
) -> Result<SampledWaveform> {
    sampled(target, pulse, beam, TimeWindow::around_peak(target, pulse), DEFAULT_SAMPLES, mode)
}

fn parabolic_offset(y0: f64, y1: f64, y2: f64) -> f64 {
    let curvature = y0 - 2.0 * y1 + y2;
    if curvature < 0.0 {
        (0.5 * (y0 - y2) / curvature).clamp(-0.5, 0.5)
    } else {
        0.0
    }
}

/// Time of the waveform maximum, refined by the vertex of the parabola
/// through the maximal sample and its two neighbours.
pub fn peak_time(w: &SampledWaveform) -> Result<f64> {
    let n = w.len();
    let i = w.argmax();
    if i == 0 || i + 1 >= n {
        return Err(Error::WindowTooNarrow { index: i, len: n });
    }
    let s = w.samples();
    Ok(w.time(i) + parabolic_offset(s[i - 1], s[i], s[i + 1]) * w.dt())
}

/// Same as `peak_time(&simulate(..))` for a single-peaked waveform, but
/// only evaluates the samples met while climbing from the round-trip time
/// to the maximum.
pub fn peak_time_sparse(
    target: &SurfaceTarget,
    pulse: &PulseParams,
    beam: &BeamGeometry,
    mode: Integration,
) -> Result<f64> {
    let window = TimeWindow::around_peak(target, pulse);
    let n = DEFAULT_SAMPLES;
    check_inputs(target, beam, &window, n)?;
    let sampler = Sampler::new(target, pulse, beam, mode);
    let (t0, dt) = sample_times(&window, n);
    let mut cache = std::collections::BTreeMap::new();
    let mut at = |i: usize| -> Result<f64> {
        if let Some(&v) = cache.get(&i) {
            return Ok(v);
        }
        let v = sampler.value(t0 + dt * i as f64)?;
        cache.insert(i, v);
        Ok(v)
    };
    let mut i = ((target.round_trip() - t0) / dt).round() as usize;
    loop {
        if i == 0 || i + 1 >= n {
            return Err(Error::WindowTooNarrow { index: i, len: n });
        }
        let (y0, y1, y2) = (at(i - 1)?, at(i)?, at(i + 1)?);
        // Ties resolve to the lower index, like `argmax`.
        if y0 >= y1 && y0 >= y2 {
            i -= 1;
        } else if y2 > y1 {
            i += 1;
        } else {
            return Ok(t0 + dt * i as f64 + parabolic_offset(y0, y1, y2) * dt);
        }
    }
}

/// Oracle peak shift expressed as a distance: how much closer the peak of
/// the waveform at `θ` appears than the peak at normal incidence, at the
/// same depth. Negative when the bias shortens the range.
pub fn peak_shift(
    depth: f64,
    incidence: f64,
    pulse: &PulseParams,
    beam: &BeamGeometry,
    mode: Integration,
) -> Result<f64> {
    let normal = SurfaceTarget::new(depth, 0.0)?;
    let tilted = SurfaceTarget::new(depth, incidence)?;
    let t_normal = peak_time_sparse(&normal, pulse, beam, mode)?;
    let t_tilted = peak_time_sparse(&tilted, pulse, beam, mode)?;
    Ok((t_tilted - t_normal) * SPEED_OF_LIGHT / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lms_beam() -> BeamGeometry {
        BeamGeometry::with_aperture(0.43f64.to_radians()).unwrap()
    }

    #[test]
    fn pulse_shape() {
        let p = PulseParams::new(0.39, 50e-9).unwrap();
        assert_eq!(emitted_pulse(0.0, &p), 0.39);
        let one_sigma = emitted_pulse(p.sigma(), &p);
        assert!((one_sigma - 0.39 * (-0.5f64).exp()).abs() < 1e-15);
        assert!(emitted_pulse(10.0 * p.sigma(), &p) < 1e-20 * 0.39);
        assert_eq!(p.sigma(), 50e-9 / (2.0 * PI).sqrt());
    }

    #[test]
    fn rejects_bad_params() {
        assert!(PulseParams::new(0.0, 1e-9).is_err());
        assert!(PulseParams::new(1.0, -1e-9).is_err());
        assert!(BeamGeometry::new(905e-9, 0.0).is_err());
        assert!(BeamGeometry::new(905e-9, FRAC_PI_2).is_err());
        assert!(SurfaceTarget::new(-1.0, 0.0).is_err());
        assert!(SurfaceTarget::new(1.0, FRAC_PI_2).is_err());
    }

    #[test]
    fn beam_profile() {
        let beam = lms_beam();
        let z = 3.0;
        let on_axis = beam_intensity(0.0, z, &beam).unwrap();
        let expected = (beam.waist() / (beam.half_aperture() * z)).powi(2);
        assert!((on_axis - expected).abs() <= 1e-15 * expected);
        let edge = beam_intensity(beam.half_aperture() * z, z, &beam).unwrap();
        assert!((edge - on_axis * (-2f64).exp()).abs() <= 1e-14 * on_axis);
        let far = beam_intensity(0.0, 2.0 * z, &beam).unwrap();
        assert!((far - 0.25 * on_axis).abs() <= 1e-15 * on_axis);
        assert!(beam_intensity(0.1, 0.0, &beam).is_err());
        assert!(beam_intensity(0.02, z, &beam).unwrap() > beam_intensity(0.03, z, &beam).unwrap());
    }

    #[test]
    fn centre_ray_geometry() {
        let t = SurfaceTarget::new(4.0, 0.7).unwrap();
        let g = point_geometry(0.0, 0.0, &t).unwrap();
        assert_eq!((g.rho, g.r, g.z), (4.0, 0.0, 4.0));

        let t = SurfaceTarget::new(4.0, 0.0).unwrap();
        let b0 = 0.01;
        let g = point_geometry(0.0, b0, &t).unwrap();
        assert!((g.z - 4.0).abs() < 1e-12 * 4.0);
        assert!((g.r - 4.0 * b0.tan()).abs() < 1e-12 * g.r);
        assert!((g.rho - 4.0 / b0.cos()).abs() < 1e-12 * g.rho);
    }

    #[test]
    fn off_centre_geometry_matches_hand_evaluation() {
        // a = 0.005, b = 0, d = 5, θ = 80°, evaluated with 40-digit arithmetic:
        // z = 5·cos(0.005)·cos(80°)/cos(0.005 + 80°), r = z·tan(0.005), ρ = √(r² + z²)
        let t = SurfaceTarget::new(5.0, 80f64.to_radians()).unwrap();
        let g = point_geometry(0.005, 0.0, &t).unwrap();
        let z = 5.145_921_058_738_919;
        let r = 0.025_729_819_709_216_2;
        let rho = 5.145_985_383_422_202;
        assert!((g.z - z).abs() < 1e-12 * z, "{}", g.z);
        assert!((g.r - r).abs() < 1e-12 * r, "{}", g.r);
        assert!((g.rho - rho).abs() < 1e-12 * rho, "{}", g.rho);
    }

    #[test]
    fn grazing_is_rejected() {
        let t = SurfaceTarget::new(5.0, 80f64.to_radians()).unwrap();
        let a = FRAC_PI_2 - t.incidence;
        assert!(matches!(
            point_geometry(a, 0.0, &t),
            Err(Error::GrazingGeometry { .. })
        ));
        assert!(point_geometry(0.0, FRAC_PI_2, &t).is_err());
    }

    #[test]
    fn projected_energy_on_axis() {
        let pulse = PulseParams::reference();
        let beam = lms_beam();
        let d = 5.0;
        let t = SurfaceTarget::new(d, 0.0).unwrap();
        let v = projected_energy(d / SPEED_OF_LIGHT, 0.0, 0.0, &t, &pulse, &beam).unwrap();
        let expected = 0.39 * (beam.waist() / (beam.half_aperture() * d)).powi(2);
        assert!((v - expected).abs() <= 1e-14 * expected);
    }

    #[test]
    fn projected_energy_vanishes_at_grazing() {
        let pulse = PulseParams::reference();
        // Wide enough that the beam profile does not underflow first.
        let beam = BeamGeometry::with_aperture(0.6).unwrap();
        let theta = 60f64.to_radians();
        let t = SurfaceTarget::new(5.0, theta).unwrap();
        let mut last = f64::INFINITY;
        for eps in [1e-1, 1e-2, 1e-3, 1e-4] {
            let a = FRAC_PI_2 - theta - eps;
            let g = point_geometry(a, 0.0, &t).unwrap();
            let v = projected_energy(g.rho / SPEED_OF_LIGHT, a, 0.0, &t, &pulse, &beam).unwrap();
            assert!(v >= 0.0 && v < last);
            last = v;
        }
        let centre = projected_energy(5.0 / SPEED_OF_LIGHT, 0.0, 0.0, &t, &pulse, &beam).unwrap();
        assert!(last < 1e-9 * centre);
    }

    #[test]
    fn projected_energy_mid_beam_composes() {
        let pulse = PulseParams::reference();
        let beam = lms_beam();
        let theta = 60f64.to_radians();
        let target = SurfaceTarget::new(5.0, theta).unwrap();
        let (a, b) = (0.002, 0.001);
        let t = 5.1 / SPEED_OF_LIGHT;
        let g = point_geometry(a, b, &target).unwrap();
        let gamma = ((a + theta).cos() * b.cos()).acos();
        let expected = gamma.cos()
            * emitted_pulse(t - g.rho / SPEED_OF_LIGHT, &pulse)
            * beam_intensity(g.r, g.z, &beam).unwrap();
        let v = projected_energy(t, a, b, &target, &pulse, &beam).unwrap();
        assert!((v - expected).abs() <= 1e-13 * expected);
    }

    #[test]
    fn parabolic_peak() {
        let w = SampledWaveform::new(1.0, 0.5, vec![1.0, 3.0, 1.0]).unwrap();
        assert_eq!(peak_time(&w).unwrap(), 1.5);
        let w = SampledWaveform::new(0.0, 1.0, vec![1.0, 3.0, 2.0]).unwrap();
        assert!((peak_time(&w).unwrap() - (1.0 + 1.0 / 6.0)).abs() < 1e-15);
        let w = SampledWaveform::new(0.0, 1.0, vec![3.0, 2.0, 1.0]).unwrap();
        assert!(matches!(peak_time(&w), Err(Error::WindowTooNarrow { index: 0, .. })));
        let w = SampledWaveform::new(0.0, 1.0, vec![1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(peak_time(&w), Err(Error::WindowTooNarrow { index: 2, .. })));
    }

    #[test]
    fn waveform_validation() {
        assert!(SampledWaveform::new(0.0, 1.0, vec![]).is_err());
        assert!(SampledWaveform::new(0.0, 0.0, vec![1.0]).is_err());
        assert!(SampledWaveform::new(0.0, 1.0, vec![-1.0]).is_err());
        assert!(SampledWaveform::new(0.0, 1.0, vec![f64::NAN]).is_err());
    }

    #[test]
    fn simulator_preconditions() {
        let pulse = PulseParams::reference();
        let beam = lms_beam();
        let t = SurfaceTarget::new(5.0, 0.3).unwrap();
        let w = TimeWindow::around_peak(&t, &pulse);
        assert!(return_waveform_2d(&t, &pulse, &beam, w, 10).is_err());
        let early = TimeWindow { start: 0.0, end: 1e-9 };
        assert!(return_waveform_2d(&t, &pulse, &beam, early, 64).is_err());
        let steep = SurfaceTarget::new(5.0, FRAC_PI_2 - 0.5 * beam.half_aperture()).unwrap();
        assert!(matches!(
            return_waveform_2d(&steep, &pulse, &beam, w, 64),
            Err(Error::GrazingGeometry { .. })
        ));
    }

    #[test]
    fn normal_incidence_peaks_at_round_trip() {
        let pulse = PulseParams::reference();
        let beam = lms_beam();
        for d in [0.5, 2.0, 10.0] {
            let t = SurfaceTarget::new(d, 0.0).unwrap();
            let w = simulate(&t, &pulse, &beam, Integration::Restricted2d).unwrap();
            let peak = peak_time(&w).unwrap();
            assert!((peak - t.round_trip()).abs() <= w.dt() / 10.0, "d = {d}");
        }
    }

    #[test]
    fn high_incidence_peaks_early_and_weaker() {
        let pulse = PulseParams::reference();
        let beam = lms_beam();
        let normal = SurfaceTarget::new(5.0, 0.0).unwrap();
        let tilted = SurfaceTarget::new(5.0, 80f64.to_radians()).unwrap();
        let w0 = simulate(&normal, &pulse, &beam, Integration::Restricted2d).unwrap();
        let w80 = simulate(&tilted, &pulse, &beam, Integration::Restricted2d).unwrap();
        assert!(peak_time(&w80).unwrap() < tilted.round_trip());
        assert!(w80.total_energy() < w0.total_energy());
    }

    #[test]
    fn quadrature_step_halving_is_stable() {
        let pulse = PulseParams::reference();
        let beam = lms_beam();
        let target = SurfaceTarget::new(5.0, 70f64.to_radians()).unwrap();
        let alpha = beam.half_aperture();
        let w = TimeWindow::around_peak(&target, &pulse);
        for k in 0..8 {
            let t = w.start + (w.end - w.start) * k as f64 / 7.0;
            let f = |a: f64| returned(t, a, 0.0, &target, &pulse, &beam);
            let coarse = composite_simpson(f, -alpha, alpha, 64);
            let fine = composite_simpson(f, -alpha, alpha, 128);
            assert!((coarse - fine).abs() < 1e-6 * fine.abs(), "t index {k}");
        }
    }

    #[test]
    fn sparse_peak_matches_dense() {
        let beam = lms_beam();
        let pulse = PulseParams::reference();
        for theta in [0.0, 60f64.to_radians(), 85f64.to_radians()] {
            let target = SurfaceTarget::new(5.0, theta).unwrap();
            let dense = peak_time(&simulate(&target, &pulse, &beam, Integration::Restricted2d).unwrap()).unwrap();
            let sparse = peak_time_sparse(&target, &pulse, &beam, Integration::Restricted2d).unwrap();
            assert_eq!(dense, sparse, "θ = {theta}");
        }
    }
}
