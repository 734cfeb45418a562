//! Adaptive Simpson quadrature.
//!
//! Each panel is accepted once the Simpson estimate on the panel and the sum
//! of the estimates on its two halves agree to within `15 · tol` (the
//! classic Richardson bound). The accepted value carries the Richardson
//! correction term.

use crate::error::{Error, Result};

/// Panels the interval is split into before adaptation starts. Keeps the
/// first acceptance test from being fooled by a peaked integrand that
/// happens to look flat at five points.
const INITIAL_PANELS: usize = 8;
const MAX_DEPTH: u32 = 48;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integral {
    pub value: f64,
    /// Sum of the per-panel Richardson error estimates.
    pub error_bound: f64,
    pub evaluations: usize,
}

struct Panel {
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

/// Integrates `f` over `[a, b]` to an absolute tolerance `abs_tol`.
///
/// Fails with [`Error::Quadrature`] when some panel still disagrees with its
/// refinement at the maximum recursion depth, or the integrand produces a
/// non-finite value.
pub fn adaptive_simpson<F>(f: F, a: f64, b: f64, abs_tol: f64) -> Result<Integral>
where
    F: Fn(f64) -> f64,
{
    if !(a.is_finite() && b.is_finite()) || !(abs_tol > 0.0) {
        return Err(Error::Domain(format!(
            "quadrature bounds [{a}, {b}] and tolerance {abs_tol} must be finite and positive"
        )));
    }
    if a == b {
        return Ok(Integral {
            value: 0.0,
            error_bound: 0.0,
            evaluations: 0,
        });
    }

    let mut evaluations = 0usize;
    let mut eval = |x: f64| {
        evaluations += 1;
        f(x)
    };

    let h = (b - a) / INITIAL_PANELS as f64;
    let panel_tol = abs_tol / INITIAL_PANELS as f64;
    let mut value = 0.0;
    let mut error_bound = 0.0;
    let mut converged = true;

    let mut left = eval(a);
    for i in 0..INITIAL_PANELS {
        let pa = a + h * i as f64;
        let pb = if i + 1 == INITIAL_PANELS { b } else { pa + h };
        let fm = eval(0.5 * (pa + pb));
        let fb = eval(pb);
        let panel = Panel {
            a: pa,
            b: pb,
            fa: left,
            fm,
            fb,
            whole: simpson(pa, pb, left, fm, fb),
        };
        let (v, e, ok) = refine(&mut eval, panel, panel_tol, MAX_DEPTH);
        value += v;
        error_bound += e;
        converged &= ok;
        left = fb;
    }

    if !value.is_finite() || !converged {
        return Err(Error::Quadrature {
            estimate: value,
            error_bound,
        });
    }
    Ok(Integral {
        value,
        error_bound,
        evaluations,
    })
}

fn refine<F: FnMut(f64) -> f64>(f: &mut F, p: Panel, tol: f64, depth: u32) -> (f64, f64, bool) {
    let m = 0.5 * (p.a + p.b);
    let lm = 0.5 * (p.a + m);
    let rm = 0.5 * (m + p.b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(p.a, m, p.fa, flm, p.fm);
    let right = simpson(m, p.b, p.fm, frm, p.fb);
    let delta = left + right - p.whole;

    if delta.abs() <= 15.0 * tol {
        return (left + right + delta / 15.0, delta.abs() / 15.0, true);
    }
    if depth == 0 || !delta.is_finite() {
        return (left + right, delta.abs(), false);
    }
    let (lv, le, lok) = refine(
        f,
        Panel {
            a: p.a,
            b: m,
            fa: p.fa,
            fm: flm,
            fb: p.fm,
            whole: left,
        },
        0.5 * tol,
        depth - 1,
    );
    let (rv, re, rok) = refine(
        f,
        Panel {
            a: m,
            b: p.b,
            fa: p.fm,
            fm: frm,
            fb: p.fb,
            whole: right,
        },
        0.5 * tol,
        depth - 1,
    );
    (lv + rv, le + re, lok && rok)
}

/// Fixed-step composite Simpson rule with `panels` panels (each panel is
/// one Simpson parabola over three points).
pub fn composite_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panels: usize) -> f64 {
    let panels = panels.max(1);
    let h = (b - a) / panels as f64;
    let mut sum = f(a) + f(b);
    for i in 0..panels {
        let x = a + h * i as f64;
        sum += 4.0 * f(x + 0.5 * h);
        if i > 0 {
            sum += 2.0 * f(x);
        }
    }
    sum * h / 6.0
}
