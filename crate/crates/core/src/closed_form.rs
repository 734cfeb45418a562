//! Closed-form bias model.
//!
//! Around the normal-incidence peak `T = t − 2d/c = 0`, the restricted
//! return waveform is approximated by a cubic `Σ aᵢTⁱ`. Two metrics are
//! read off the cubic:
//!
//! * `Δ_d`, the peak position converted to a distance (what an ideal
//!   detector would report as extra range),
//! * `Δ_shape = 1 − κ(d,0)/κ(d,θ)` with `κ = √(4a₂² − 12a₁a₃)` the peak
//!   curvature (a proxy for detector-dependent error),
//!
//! and combined per sensor as `e(d, θ) = s₁·Δ_d + s₂·Δ_shape`.

use std::f64::consts::{FRAC_PI_2, PI};

use crate::error::{Error, Result};
use crate::sensor::SensorModel;
use crate::waveform::{BeamGeometry, PulseParams};
use crate::SPEED_OF_LIGHT;

/// Below `|a₃| < DEGENERATE_CUBIC · |a₂|/σ` the cubic is treated as the
/// quadratic it degenerates into at normal incidence.
pub const DEGENERATE_CUBIC: f64 = 1e-18;

/// Taylor-expansion intermediates of the restricted waveform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaylorIntermediates {
    /// `A = 2d²tan²θ/(σ²c²) + 2/α²`, s⁻²-scaled quadratic coefficient in `a`.
    pub a: f64,
    /// `K₁ = cos³θ`
    pub k1: f64,
    /// `K₂ = 3cos²θ·sinθ`
    pub k2: f64,
    depth: f64,
    incidence: f64,
    sigma: f64,
}

impl TaylorIntermediates {
    pub fn new(depth: f64, incidence: f64, pulse: &PulseParams, beam: &BeamGeometry) -> Self {
        let sigma = pulse.sigma();
        let alpha = beam.half_aperture();
        let tan = incidence.tan();
        let (sin, cos) = incidence.sin_cos();
        let sc = sigma * SPEED_OF_LIGHT;
        Self {
            a: 2.0 * depth * depth * tan * tan / (sc * sc) + 2.0 / (alpha * alpha),
            k1: cos * cos * cos,
            k2: 3.0 * cos * cos * sin,
            depth,
            incidence,
            sigma,
        }
    }

    /// `B(T) = T·(2d·tanθ/c)/σ²`; only enters the derivation of the cubic.
    pub fn b(&self, t_offset: f64) -> f64 {
        t_offset * (2.0 * self.depth * self.incidence.tan() / SPEED_OF_LIGHT) / (self.sigma * self.sigma)
    }

    /// `C(T) = −T²/(2σ²)`; only enters the derivation of the cubic.
    pub fn c(&self, t_offset: f64) -> f64 {
        -t_offset * t_offset / (2.0 * self.sigma * self.sigma)
    }
}

/// Coefficients of `RP(T) ≈ a₀ + a₁T + a₂T² + a₃T³`, `T` in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CubicCoefficients {
    pub a0: f64,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub l1: f64,
    pub l2: f64,
    /// Pulse sigma the coefficients were built with; sets the scale of the
    /// degenerate-cubic test.
    pub sigma: f64,
}

impl CubicCoefficients {
    pub fn eval(&self, t: f64) -> f64 {
        ((self.a3 * t + self.a2) * t + self.a1) * t + self.a0
    }

    /// Discriminant of the derivative `3a₃T² + 2a₂T + a₁` (times 4).
    pub fn discriminant(&self) -> f64 {
        4.0 * self.a2 * self.a2 - 12.0 * self.a1 * self.a3
    }

    fn is_degenerate(&self) -> bool {
        self.a3.abs() < DEGENERATE_CUBIC * self.a2.abs() / self.sigma
    }

    /// Offset `T*` of the local maximum of the cubic closest to `T = 0`.
    pub fn peak_offset(&self) -> Result<f64> {
        let disc = self.discriminant();
        if !(disc >= 0.0) {
            return Err(Error::NoRealPeak { discriminant: disc });
        }
        if self.is_degenerate() {
            if !(self.a2 < 0.0) {
                return Err(Error::BranchSelection);
            }
            return Ok(-self.a1 / (2.0 * self.a2));
        }
        // Roots of 3a₃T² + 2a₂T + a₁ without cancellation.
        let root = disc.sqrt();
        let q = -(2.0 * self.a2 + self.a2.signum() * root) / 2.0;
        let mut candidates = [f64::NAN; 2];
        if q != 0.0 {
            candidates[0] = self.a1 / q;
            candidates[1] = q / (3.0 * self.a3);
        } else {
            // a₂ = 0 and a₁a₃ = 0
            candidates[0] = 0.0;
        }
        candidates
            .into_iter()
            .filter(|t| t.is_finite() && 6.0 * self.a3 * t + 2.0 * self.a2 < 0.0)
            .min_by(|x, y| x.abs().total_cmp(&y.abs()))
            .ok_or(Error::BranchSelection)
    }
}

fn check_geometry(depth: f64, incidence: f64) -> Result<()> {
    if !(depth > 0.0 && depth.is_finite()) {
        return Err(Error::Domain(format!("depth must be > 0, got {depth}")));
    }
    if !(0.0..FRAC_PI_2).contains(&incidence) {
        return Err(Error::Domain(format!(
            "incidence must lie in [0, π/2), got {incidence}"
        )));
    }
    Ok(())
}

/// Coefficients of the cubic peak approximation.
pub fn cubic_coefficients(
    depth: f64,
    incidence: f64,
    pulse: &PulseParams,
    beam: &BeamGeometry,
) -> Result<CubicCoefficients> {
    check_geometry(depth, incidence)?;
    let ti = TaylorIntermediates::new(depth, incidence, pulse, beam);
    let (a, k1, k2) = (ti.a, ti.k1, ti.k2);
    let d = depth;
    let alpha = beam.half_aperture();
    let sigma = pulse.sigma();
    let c = SPEED_OF_LIGHT;
    let cos = incidence.cos();
    let sin = incidence.sin();
    let tan = incidence.tan();
    let cos2 = cos * cos;
    let s2 = sigma * sigma;

    let prefactor = pulse.peak_power() * (beam.waist() / (alpha * d * cos)).powi(2);
    let l1 = prefactor * PI.sqrt() * libm::erf(alpha * a.sqrt()) / (2.0 * a.powf(1.5));
    let l2 = prefactor * k2 / (2.0 * a);

    let a0 = 2.0 * a * k1 * l1;
    let a1 = -(2.0 * d * tan * (-2.0 * l2 * alpha * (-a * alpha * alpha).exp() + l1 * k2)) / (s2 * c);
    // 2d²cos²θ − 2d² = −2d²sin²θ
    let a2 = -(2.0 * a * k1 * l1 * (s2 * c * c * a * cos2 - 2.0 * d * d * sin * sin))
        / (2.0 * cos2 * s2 * s2 * c * c * a);
    let a3 = l1 * k2 * d * tan * (s2 * c * c * a - 2.0 * d * d * tan * tan) / (s2 * s2 * s2 * c * c * c * a);

    let coeffs = CubicCoefficients {
        a0,
        a1,
        a2,
        a3,
        l1,
        l2,
        sigma,
    };
    if [a0, a1, a2, a3, l1, l2].iter().any(|v| !v.is_finite()) {
        return Err(Error::ModelValidity(format!(
            "non-finite cubic coefficients at d = {d} m, θ = {incidence} rad"
        )));
    }
    Ok(coeffs)
}

/// Peak shift of the waveform converted to a distance, in meters.
/// Negative when the apparent range is shorter than `d`.
pub fn delta_distance(
    depth: f64,
    incidence: f64,
    pulse: &PulseParams,
    beam: &BeamGeometry,
) -> Result<f64> {
    let coeffs = cubic_coefficients(depth, incidence, pulse, beam)?;
    Ok(coeffs.peak_offset()? * SPEED_OF_LIGHT / 2.0)
}

/// Peak curvature `κ = √(4a₂² − 12a₁a₃)`.
pub fn curvature_at_peak(coeffs: &CubicCoefficients) -> Result<f64> {
    let disc = coeffs.discriminant();
    if !(disc >= 0.0) {
        return Err(Error::NoRealPeak { discriminant: disc });
    }
    Ok(disc.sqrt())
}

/// Relative change of peak curvature, `1 − κ(d,0)/κ(d,θ)`.
pub fn delta_shape(
    depth: f64,
    incidence: f64,
    pulse: &PulseParams,
    beam: &BeamGeometry,
) -> Result<f64> {
    let tilted = curvature_at_peak(&cubic_coefficients(depth, incidence, pulse, beam)?)?;
    if !(tilted > 0.0) {
        return Err(Error::ModelValidity(format!(
            "zero peak curvature at d = {depth} m, θ = {incidence} rad"
        )));
    }
    if incidence == 0.0 {
        return Ok(0.0);
    }
    let normal = curvature_at_peak(&cubic_coefficients(depth, 0.0, pulse, beam)?)?;
    Ok(1.0 - normal / tilted)
}

/// Range of `(d, θ)` over which the model was measured.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidityDomain {
    pub depth_min: f64,
    pub depth_max: f64,
    pub incidence_max: f64,
}

impl Default for ValidityDomain {
    fn default() -> Self {
        Self {
            depth_min: 0.5,
            depth_max: 30.0,
            incidence_max: 85f64.to_radians(),
        }
    }
}

impl ValidityDomain {
    pub fn contains(&self, depth: f64, incidence: f64) -> bool {
        (self.depth_min..=self.depth_max).contains(&depth) && (0.0..=self.incidence_max).contains(&incidence)
    }
}

/// What `bias_error` does outside the validity domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DomainPolicy {
    /// Evaluate at the nearest in-domain point and flag the result.
    #[default]
    Clamp,
    /// Refuse with [`Error::Domain`].
    Strict,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasEvaluation {
    /// `e(d, θ)` in meters; negative means the sensor under-ranges.
    pub value: f64,
    /// The inputs were outside the validity domain and were clamped.
    pub clamped: bool,
    pub depth: f64,
    pub incidence: f64,
}

/// Bias `e(d, θ) = s₁·Δ_d + s₂·Δ_shape` of `model` at range `depth`
/// and incidence `incidence` (radians).
pub fn bias_error(
    depth: f64,
    incidence: f64,
    model: &SensorModel,
    pulse: &PulseParams,
    policy: DomainPolicy,
) -> Result<BiasEvaluation> {
    bias_error_in(depth, incidence, model, pulse, policy, &ValidityDomain::default())
}

pub fn bias_error_in(
    depth: f64,
    incidence: f64,
    model: &SensorModel,
    pulse: &PulseParams,
    policy: DomainPolicy,
    domain: &ValidityDomain,
) -> Result<BiasEvaluation> {
    if !(depth > 0.0 && depth.is_finite()) || !(incidence >= 0.0 && incidence.is_finite()) {
        return Err(Error::Domain(format!(
            "bias needs d > 0 and θ ≥ 0, got d = {depth}, θ = {incidence}"
        )));
    }
    let clamped = !domain.contains(depth, incidence);
    if clamped && policy == DomainPolicy::Strict {
        return Err(Error::Domain(format!(
            "(d = {depth} m, θ = {:.3}°) outside the validity domain d ∈ [{}, {}] m, θ ≤ {:.1}°",
            incidence.to_degrees(),
            domain.depth_min,
            domain.depth_max,
            domain.incidence_max.to_degrees()
        )));
    }
    let d = depth.clamp(domain.depth_min, domain.depth_max);
    let theta = incidence.min(domain.incidence_max);
    let beam = model.beam()?;
    let value = model.s1 * delta_distance(d, theta, pulse, &beam)? + model.s2 * delta_shape(d, theta, pulse, &beam)?;
    Ok(BiasEvaluation {
        value,
        clamped,
        depth: d,
        incidence: theta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lms() -> SensorModel {
        SensorModel::preset("LMS151").unwrap()
    }

    fn lms_beam() -> BeamGeometry {
        lms().beam().unwrap()
    }

    #[test]
    fn normal_incidence_collapses_to_quadratic() {
        let pulse = PulseParams::reference();
        let beam = lms_beam();
        let c = cubic_coefficients(5.0, 0.0, &pulse, &beam).unwrap();
        assert_eq!(c.a1, 0.0);
        assert_eq!(c.a3, 0.0);
        assert_eq!(c.a0, 2.0 * TaylorIntermediates::new(5.0, 0.0, &pulse, &beam).a * c.l1);
        assert!(c.a2 < 0.0);
        assert_eq!(curvature_at_peak(&c).unwrap(), 2.0 * c.a2.abs());
        assert_eq!(delta_distance(5.0, 0.0, &pulse, &beam).unwrap(), 0.0);
        assert_eq!(delta_shape(5.0, 0.0, &pulse, &beam).unwrap(), 0.0);
    }

    #[test]
    fn intermediates_invariants() {
        let pulse = PulseParams::reference();
        let beam = lms_beam();
        for deg in [0.0, 10.0, 45.0, 85.0, 89.0] {
            let ti = TaylorIntermediates::new(3.0, f64::to_radians(deg), &pulse, &beam);
            assert!(ti.a > 0.0);
            assert!(ti.k1 > 0.0 && ti.k1 <= 1.0);
            assert!(ti.k2 >= 0.0);
        }
        let ti = TaylorIntermediates::new(3.0, 0.3, &pulse, &beam);
        assert_eq!(ti.b(0.0), 0.0);
        assert_eq!(ti.c(0.0), 0.0);
        assert!(ti.c(1e-9) < 0.0);
    }

    #[test]
    fn golden_coefficients_lms151() {
        // d = 5 m, θ = 60°, α = 0.43°, τ = 50 ns, I₀ = 0.39, λ = 905 nm,
        // evaluated from the printed formulas at 40 significant digits.
        let pulse = PulseParams::reference();
        let c = cubic_coefficients(5.0, 60f64.to_radians(), &pulse, &lms_beam()).unwrap();
        let golden = [
            (c.a0, GOLDEN_A0),
            (c.a1, GOLDEN_A1),
            (c.a2, GOLDEN_A2),
            (c.a3, GOLDEN_A3),
            (c.l1, GOLDEN_L1),
            (c.l2, GOLDEN_L2),
        ];
        for (i, (got, want)) in golden.iter().enumerate() {
            assert!((got - want).abs() <= 1e-10 * want.abs(), "coefficient {i}: {got:e} vs {want:e}");
        }
    }

    const GOLDEN_A0: f64 = 1.831767927598204e-9;
    const GOLDEN_A1: f64 = -1.505679199256064e-5;
    const GOLDEN_A2: f64 = -2.301595583817675e6;
    const GOLDEN_A3: f64 = 2.444955942541907e10;
    const GOLDEN_L1: f64 = 2.0631974556923663e-13;
    const GOLDEN_L2: f64 = 1.492694597530156e-11;

    #[test]
    fn root_selection_picks_nearest_maximum() {
        // T³ − 3T has a maximum at −1 and a minimum at +1.
        let c = CubicCoefficients {
            a0: 0.0,
            a1: -3.0,
            a2: 0.0,
            a3: 1.0,
            l1: 0.0,
            l2: 0.0,
            sigma: 1.0,
        };
        assert_eq!(c.peak_offset().unwrap(), -1.0);
        // Mirrored: −T³ + 3T has its maximum at +1.
        let m = CubicCoefficients { a1: 3.0, a3: -1.0, ..c };
        assert_eq!(m.peak_offset().unwrap(), 1.0);
        // T³ − 3T² + 2.25T: maximum at 0.5, minimum at 1.5.
        let n = CubicCoefficients {
            a1: 2.25,
            a2: -3.0,
            a3: 1.0,
            ..c
        };
        assert!((n.peak_offset().unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn root_selection_errors() {
        let c = CubicCoefficients {
            a0: 0.0,
            a1: 3.0,
            a2: 0.0,
            a3: 1.0,
            l1: 0.0,
            l2: 0.0,
            sigma: 1.0,
        };
        assert!(matches!(c.peak_offset(), Err(Error::NoRealPeak { .. })));
        assert!(matches!(curvature_at_peak(&c), Err(Error::NoRealPeak { .. })));
        // Convex parabola: no maximum at all.
        let convex = CubicCoefficients { a1: 1.0, a2: 1.0, a3: 0.0, ..c };
        assert!(matches!(convex.peak_offset(), Err(Error::BranchSelection)));
    }

    #[test]
    fn degenerate_threshold_is_continuous() {
        let base = CubicCoefficients {
            a0: 1.0,
            a1: 1e-3,
            a2: -1.0,
            a3: 0.0,
            l1: 0.0,
            l2: 0.0,
            sigma: 1.0,
        };
        let below = CubicCoefficients { a3: 0.99 * DEGENERATE_CUBIC, ..base };
        let above = CubicCoefficients { a3: 1.01 * DEGENERATE_CUBIC, ..base };
        let tb = below.peak_offset().unwrap();
        let ta = above.peak_offset().unwrap();
        assert_eq!(tb, 5e-4);
        assert!((ta - tb).abs() < 1e-15);
    }

    #[test]
    fn bias_shortens_range() {
        let pulse = PulseParams::reference();
        let beam = lms_beam();
        let dd = delta_distance(5.0, 80f64.to_radians(), &pulse, &beam).unwrap();
        assert!(dd < 0.0);
        let ds = delta_shape(5.0, 85f64.to_radians(), &pulse, &beam).unwrap();
        assert!(ds.is_finite() && ds < 0.0);
    }

    #[test]
    fn curvature_flattens_with_incidence() {
        let pulse = PulseParams::reference();
        for model in SensorModel::presets() {
            let beam = model.beam().unwrap();
            for d in 1..=10 {
                let d = d as f64;
                let k0 = curvature_at_peak(&cubic_coefficients(d, 0.0, &pulse, &beam).unwrap()).unwrap();
                for deg in (0..=85).step_by(5) {
                    let c = cubic_coefficients(d, f64::to_radians(deg as f64), &pulse, &beam).unwrap();
                    let k = curvature_at_peak(&c).unwrap();
                    assert!(k > 0.0);
                    if deg >= 60 {
                        assert!(k < k0, "{} d={d} θ={deg}", model.name);
                    }
                }
            }
        }
    }

    #[test]
    fn strict_and_clamped_domain() {
        let pulse = PulseParams::reference();
        let m = lms();
        let inside = bias_error(10.0, 85f64.to_radians(), &m, &pulse, DomainPolicy::Strict).unwrap();
        assert!(!inside.clamped);
        let far = bias_error(100.0, 0.5, &m, &pulse, DomainPolicy::Clamp).unwrap();
        assert!(far.clamped);
        assert_eq!(far.depth, 30.0);
        let edge = bias_error(30.0, 0.5, &m, &pulse, DomainPolicy::Clamp).unwrap();
        assert_eq!(far.value, edge.value);
        assert!(matches!(
            bias_error(100.0, 0.5, &m, &pulse, DomainPolicy::Strict),
            Err(Error::Domain(_))
        ));
        let steep = bias_error(5.0, 88f64.to_radians(), &m, &pulse, DomainPolicy::Clamp).unwrap();
        let at_max = bias_error(5.0, 85f64.to_radians(), &m, &pulse, DomainPolicy::Clamp).unwrap();
        assert!(steep.clamped);
        assert_eq!(steep.value, at_max.value);
        assert!(bias_error(5.0, -0.1, &m, &pulse, DomainPolicy::Clamp).is_err());
        assert!(bias_error(0.0, 0.1, &m, &pulse, DomainPolicy::Clamp).is_err());
    }

    #[test]
    fn zero_at_normal_incidence_and_continuous() {
        let pulse = PulseParams::reference();
        for m in SensorModel::presets() {
            for d in [0.5, 1.0, 7.0, 30.0] {
                let e0 = bias_error(d, 0.0, &m, &pulse, DomainPolicy::Strict).unwrap().value;
                assert_eq!(e0, 0.0);
                let e = bias_error(d, 1e-6, &m, &pulse, DomainPolicy::Strict).unwrap().value;
                assert!(e.abs() < 1e-6, "{} d={d}: {e}", m.name);
            }
        }
    }
}
