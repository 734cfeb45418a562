use nalgebra::{DMatrix, DVector};

use super::Observation;
use crate::error::{Error, Result};

/// Search range for the exponential rate `k`, per radian.
const K_RANGE: (f64, f64) = (-30.0, 30.0);
const K_GRID_STEP: f64 = 0.05;

/// Empirical bias model `c₀ + b·d + a·e^{kθ}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PfisterModel {
    pub c0: f64,
    pub b: f64,
    pub a: f64,
    pub k: f64,
}

impl PfisterModel {
    pub fn eval(&self, depth: f64, incidence: f64) -> f64 {
        self.c0 + self.b * depth + self.a * (self.k * incidence).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PfisterFit {
    pub model: PfisterModel,
    pub residual_rms: f64,
}

/// Least-squares fit of [`PfisterModel`].
///
/// `k` is found by a grid search over `[-30, 30]` followed by golden-section
/// refinement; `c₀`, `b` and `a` come from a linear solve at each `k`. When
/// the exponential term does not lower the residual, the fit returns
/// `a = 0`, `k = 0`.
pub fn fit_pfister(data: &[Observation]) -> Result<PfisterFit> {
    if data.len() < 4 {
        return Err(Error::Precondition(format!("need at least 4 points, got {}", data.len())));
    }
    let distinct = |f: fn(&Observation) -> f64| {
        let mut v: Vec<f64> = data.iter().map(f).collect();
        v.sort_by(f64::total_cmp);
        v.dedup_by(|x, y| (*x - *y).abs() <= 1e-9 * y.abs().max(1.0));
        v.len()
    };
    if distinct(|o| o.depth) < 2 || distinct(|o| o.incidence) < 2 {
        return Err(Error::Precondition("points must span at least 2 depths and 2 angles".into()));
    }
    if data.iter().any(|o| !(o.depth.is_finite() && o.incidence.is_finite() && o.error.is_finite())) {
        return Err(Error::Precondition("non-finite observation".into()));
    }

    let y = DVector::from_iterator(data.len(), data.iter().map(|o| o.error));
    let (reduced, reduced_ssr) = solve(data, &y, None)?;
    let mean = y.mean();
    let spread = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    let tie = 1e-12 * spread + 1e-30;

    let ssr = |k: f64| solve(data, &y, Some(k)).map(|(_, s)| s).unwrap_or(f64::INFINITY);
    let steps = ((K_RANGE.1 - K_RANGE.0) / K_GRID_STEP).round() as usize;
    let grid: Vec<f64> = (0..=steps).map(|i| K_RANGE.0 + i as f64 * K_GRID_STEP).collect();
    let (best_i, best_ssr) = grid
        .iter()
        .map(|&k| ssr(k))
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("grid is not empty");

    if !(best_ssr < reduced_ssr - tie) {
        return finish(data, PfisterModel { c0: reduced[0], b: reduced[1], a: 0.0, k: 0.0 });
    }
    if best_i == 0 || best_i == steps {
        return Err(Error::FitFailure(format!(
            "exponential rate ran into the search bound k = {}",
            grid[best_i]
        )));
    }

    let k = golden_section(ssr, grid[best_i - 1], grid[best_i + 1]);
    let (p, _) = solve(data, &y, Some(k))?;
    finish(data, PfisterModel { c0: p[0], b: p[1], a: p[2], k })
}

fn finish(data: &[Observation], model: PfisterModel) -> Result<PfisterFit> {
    let ssr: f64 = data.iter().map(|o| (o.error - model.eval(o.depth, o.incidence)).powi(2)).sum();
    if ![model.c0, model.b, model.a, model.k].iter().all(|v| v.is_finite()) {
        return Err(Error::FitFailure("non-finite coefficients".into()));
    }
    Ok(PfisterFit {
        model,
        residual_rms: (ssr / data.len() as f64).sqrt(),
    })
}

/// Linear least squares for `c₀, b[, a]` at a fixed rate `k`. The exponential
/// column is normalised to unit maximum before solving.
fn solve(data: &[Observation], y: &DVector<f64>, k: Option<f64>) -> Result<(Vec<f64>, f64)> {
    let cols = if k.is_some() { 3 } else { 2 };
    let mut x = DMatrix::zeros(data.len(), cols);
    let mut norm = 1.0;
    if let Some(k) = k {
        norm = data.iter().map(|o| (k * o.incidence).exp()).fold(0.0, f64::max);
    }
    for (i, o) in data.iter().enumerate() {
        x[(i, 0)] = 1.0;
        x[(i, 1)] = o.depth;
        if let Some(k) = k {
            x[(i, 2)] = (k * o.incidence).exp() / norm;
        }
    }
    let svd = x.clone().svd(true, true);
    let p = svd
        .solve(y, 1e-12)
        .map_err(|e| Error::DegenerateFit(e.to_string()))?;
    let ssr = (y - &x * &p).norm_squared();
    let mut out: Vec<f64> = p.iter().copied().collect();
    if cols == 3 {
        out[2] /= norm;
    }
    Ok((out, ssr))
}

fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..200 {
        if hi - lo <= 1e-13 * hi.abs().max(1.0) {
            break;
        }
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = f(x2);
        }
    }
    0.5 * (lo + hi)
}
