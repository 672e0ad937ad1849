//! One-dimensional quadrature and root finding.

use crate::error::{Error, Result};

/// Relative tolerance used for every moment integral.
pub const QUAD_REL_TOL: f64 = 1e-10;
/// Absolute floor for integrands that are identically tiny.
pub const QUAD_ABS_FLOOR: f64 = 1e-14;
/// Maximum number of bracket doublings before giving up.
pub const MAX_DOUBLINGS: usize = 200;

const MAX_DEPTH: u32 = 48;
const INITIAL_PANELS: usize = 16;

/// Adaptive Simpson integration of `f` over `[a, b]`.
///
/// The tolerance is `max(rel_tol * |I_coarse|, abs_floor)` where `I_coarse`
/// is a 16-panel composite estimate; each subinterval is refined until its
/// Richardson error estimate fits its share of the budget.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64, abs_floor: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let h = (b - a) / INITIAL_PANELS as f64;
    let mut panels = Vec::with_capacity(INITIAL_PANELS);
    let mut coarse = 0.0;
    for k in 0..INITIAL_PANELS {
        let lo = a + k as f64 * h;
        let hi = if k + 1 == INITIAL_PANELS { b } else { lo + h };
        let mid = 0.5 * (lo + hi);
        let (flo, fmid, fhi) = (f(lo), f(mid), f(hi));
        let s = (hi - lo) / 6.0 * (flo + 4.0 * fmid + fhi);
        coarse += s;
        panels.push((lo, hi, flo, fmid, fhi, s));
    }
    let eps = (rel_tol * coarse.abs()).max(abs_floor) / INITIAL_PANELS as f64;
    panels.into_iter().map(|(lo, hi, flo, fmid, fhi, s)| refine(&f, lo, hi, flo, fmid, fhi, s, eps, MAX_DEPTH)).sum()
}

#[allow(clippy::too_many_arguments)]
fn refine<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    eps: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * eps {
        return left + right + delta / 15.0;
    }
    refine(f, a, m, fa, flm, fm, left, 0.5 * eps, depth - 1) + refine(f, m, b, fm, frm, fb, right, 0.5 * eps, depth - 1)
}

/// Integrates over `[a, b]` split at the given interior breakpoints, so
/// kinks and jumps of the integrand sit on panel edges.
pub fn integrate_pieces<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, breaks: &[f64], rel_tol: f64, abs_floor: f64) -> f64 {
    let mut knots: Vec<f64> = std::iter::once(a)
        .chain(breaks.iter().copied().filter(|&x| x > a && x < b))
        .chain(std::iter::once(b))
        .collect();
    knots.sort_by(f64::total_cmp);
    knots.dedup();
    knots.windows(2).map(|w| integrate(&f, w[0], w[1], rel_tol, abs_floor)).sum()
}

/// Bisection for a root of a function that is negative at `lo` and positive
/// at `hi` (or the reverse). Stops when the bracket is below `x_tol` wide or
/// after 400 halvings.
pub fn bisect<F: FnMut(f64) -> f64>(mut g: F, mut lo: f64, mut hi: f64, x_tol: f64) -> f64 {
    let glo = g(lo);
    let rising = glo < 0.0;
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || (hi - lo) <= x_tol {
            break;
        }
        let gm = g(mid);
        if gm == 0.0 {
            return mid;
        }
        if (gm < 0.0) == rising {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Root of an increasing function with `g(lo) < 0`: the upper end starts at
/// `hi0` and is doubled (at most 200 times) until `g(hi) > 0`, then the
/// bracket is bisected down to relative width `rel_tol`.
pub fn expanding_root<F: FnMut(f64) -> Result<f64>>(
    mut g: F,
    lo: f64,
    hi0: f64,
    rel_tol: f64,
    what: &str,
) -> Result<f64> {
    let mut lo = lo;
    let mut hi = hi0;
    let mut doublings = 0;
    loop {
        let v = g(hi)?;
        if v > 0.0 {
            break;
        }
        if v == 0.0 {
            return Ok(hi);
        }
        lo = hi;
        hi *= 2.0;
        doublings += 1;
        if doublings > MAX_DOUBLINGS || !hi.is_finite() {
            return Err(Error::Convergence(format!("{what}: no sign change after {MAX_DOUBLINGS} bracket doublings")));
        }
    }
    let mut err = None;
    let root = bisect(
        |x| match g(x) {
            Ok(v) => v,
            Err(e) => {
                err.get_or_insert(e);
                0.0
            }
        },
        lo,
        hi,
        rel_tol * hi,
    );
    match err {
        Some(e) => Err(e),
        None => Ok(root),
    }
}
