//! Large-deviation level of the maximum weighted degree.
//!
//! With `X` uniform in `[0,1]^d`, `x_0` the cube center and
//! `ξ_{n,δ} = f_{n,δ}(‖X − x_0‖)`, the rate function is
//!
//! ```text
//! I_{n,δ}(x) = sup_{θ>0} { θ x − (n−1) log E[e^{θ ξ}] }
//! ```
//!
//! and `k̄_{n,δ}` is the unique root of `I_{n,δ}(x) = log n` above
//! `(n−1) E[ξ]`. Equivalently `θ̄` solves
//!
//! ```text
//! (n−1) E[ξ e^{θ̄ξ}] / E[e^{θ̄ξ}] = (log n + (n−1) log E[e^{θ̄ξ}]) / θ̄ = k̄
//! ```
//!
//! When the support ball stays inside the cube (`(1+δ) r ≤ 1/2`) the moments
//! reduce to radial integrals, e.g.
//! `E[e^{θξ}] = 1 − π_d R^d + d π_d ∫_0^R e^{θ f(x)} x^{d−1} dx`.
//! Otherwise a midpoint cubature over the cube is used and flagged.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::unit_ball_volume;
use crate::kernel::Kernel;
use crate::numerics::{bisect, expanding_root, integrate, integrate_pieces, QUAD_ABS_FLOOR, QUAD_REL_TOL};

/// Bracket resolution of the θ solves.
const THETA_REL_TOL: f64 = 1e-15;
/// Above this `θ f(0)` the moments are evaluated in scaled form.
const SCALE_THRESHOLD: f64 = 300.0;
/// Midpoints per orthant used by the cubature fallback.
pub const CUBATURE_POINTS: usize = 1 << 18;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentTriple {
    /// `E[e^{θξ}]`; may overflow to infinity for huge `θ`.
    pub m0: f64,
    /// `E[ξ e^{θξ}]`; may overflow like `m0`.
    pub m1: f64,
    /// `E[ξ]`.
    pub mean: f64,
    /// `log E[e^{θξ}]`, accurate even when `m0 − 1` is tiny or `m0` overflows.
    pub log_m0: f64,
    /// `m1 / m0`, the mean of the tilted law.
    pub tilted_mean: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MomentMethod {
    /// Radial integrals (support ball inside the cube).
    Radial,
    /// Midpoint cubature over the cube.
    Cubature,
    /// `ξ` is almost surely `f(0)`.
    Constant,
}

/// The law of `ξ_{n,δ}` and its exponential moments.
pub struct XiLaw {
    kernel: Kernel,
    d: usize,
    repr: Repr,
    mean: f64,
}

enum Repr {
    Radial { scale: f64, breaks: Vec<f64>, upper: f64 },
    Cubature { xi: Vec<f64> },
    Constant,
}

impl XiLaw {
    /// Picks the radial representation when valid, the constant one when
    /// the kernel is flat over the whole cube, and cubature otherwise.
    pub fn new(kernel: &Kernel, d: usize) -> Result<Self> {
        if d < 1 {
            return Err(Error::arg("dimension must be at least 1"));
        }
        let half_diag = 0.5 * (d as f64).sqrt();
        if kernel.eval(half_diag) == kernel.peak() {
            return Ok(XiLaw { kernel: kernel.clone(), d, repr: Repr::Constant, mean: kernel.peak() });
        }
        match Self::radial(kernel, d) {
            Ok(law) => Ok(law),
            Err(Error::RadialFormulaInvalid { .. }) => Ok(Self::cubature(kernel, d)),
            Err(e) => Err(e),
        }
    }

    /// Radial representation only; errors when `(1+δ) r > 1/2`.
    pub fn radial(kernel: &Kernel, d: usize) -> Result<Self> {
        let support = kernel.support();
        if support > 0.5 {
            return Err(Error::RadialFormulaInvalid { support });
        }
        let r = kernel.radius();
        let scale = d as f64 * unit_ball_volume(d) * r.powi(d as i32);
        let breaks = kernel.breakpoints().iter().map(|b| b / r).collect();
        let mut law = XiLaw {
            kernel: kernel.clone(),
            d,
            repr: Repr::Radial { scale, breaks, upper: 1.0 + kernel.shift() },
            mean: 0.0,
        };
        law.mean = law.radial_integral(|f| f);
        Ok(law)
    }

    /// Midpoint cubature on one orthant of the cube (the law of `‖X − x_0‖`
    /// is symmetric under reflections through the center).
    pub fn cubature(kernel: &Kernel, d: usize) -> Self {
        let m = ((CUBATURE_POINTS as f64).powf(1.0 / d as f64).floor() as usize).max(2);
        let total = m.pow(d as u32);
        let h = 0.5 / m as f64;
        let mut xi = Vec::with_capacity(total);
        let mut idx = vec![0usize; d];
        for _ in 0..total {
            let r2: f64 = idx.iter().map(|&k| ((k as f64 + 0.5) * h).powi(2)).sum();
            xi.push(kernel.eval(r2.sqrt()));
            for slot in idx.iter_mut() {
                *slot += 1;
                if *slot < m {
                    break;
                }
                *slot = 0;
            }
        }
        let mean = xi.iter().sum::<f64>() / total as f64;
        XiLaw { kernel: kernel.clone(), d, repr: Repr::Cubature { xi }, mean }
    }

    pub fn method(&self) -> MomentMethod {
        match self.repr {
            Repr::Radial { .. } => MomentMethod::Radial,
            Repr::Cubature { .. } => MomentMethod::Cubature,
            Repr::Constant => MomentMethod::Constant,
        }
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn is_degenerate(&self) -> bool {
        matches!(self.repr, Repr::Constant)
    }

    /// `d π_d r^d ∫_0^{1+δ} g(f(r y)) y^{d-1} dy`
    fn radial_integral<G: Fn(f64) -> f64>(&self, g: G) -> f64 {
        let Repr::Radial { scale, breaks, upper } = &self.repr else { unreachable!("radial representation") };
        let r = self.kernel.radius();
        let dm1 = (self.d - 1) as i32;
        let v = integrate_pieces(
            |y| g(self.kernel.eval(r * y)) * y.powi(dm1),
            0.0,
            *upper,
            breaks,
            QUAD_REL_TOL,
            QUAD_ABS_FLOOR,
        );
        scale * v
    }

    pub fn moments(&self, theta: f64) -> MomentTriple {
        let f0 = self.kernel.peak();
        let mean = self.mean;
        match &self.repr {
            Repr::Constant => {
                let m0 = (theta * f0).exp();
                MomentTriple { m0, m1: f0 * m0, mean, log_m0: theta * f0, tilted_mean: f0 }
            }
            _ if theta * f0 <= SCALE_THRESHOLD => {
                let (excess, m1) = match &self.repr {
                    Repr::Radial { .. } => (
                        self.radial_integral(|f| (theta * f).exp_m1()),
                        self.radial_integral(|f| f * (theta * f).exp()),
                    ),
                    Repr::Cubature { xi } => {
                        let k = xi.len() as f64;
                        (
                            xi.iter().map(|&f| (theta * f).exp_m1()).sum::<f64>() / k,
                            xi.iter().map(|&f| f * (theta * f).exp()).sum::<f64>() / k,
                        )
                    }
                    Repr::Constant => unreachable!(),
                };
                let m0 = 1.0 + excess;
                MomentTriple { m0, m1, mean, log_m0: excess.ln_1p(), tilted_mean: m1 / m0 }
            }
            _ => {
                // factor out e^{θ f(0)}
                let s = theta * f0;
                let (m0s, m1s) = match &self.repr {
                    Repr::Radial { scale, upper, .. } => {
                        let ball = scale / self.d as f64 * upper.powi(self.d as i32);
                        (
                            (1.0 - ball) * (-s).exp() + self.radial_integral(|f| (theta * f - s).exp()),
                            self.radial_integral(|f| f * (theta * f - s).exp()),
                        )
                    }
                    Repr::Cubature { xi } => {
                        let k = xi.len() as f64;
                        (
                            xi.iter().map(|&f| (theta * f - s).exp()).sum::<f64>() / k,
                            xi.iter().map(|&f| f * (theta * f - s).exp()).sum::<f64>() / k,
                        )
                    }
                    Repr::Constant => unreachable!(),
                };
                let log_m0 = s + m0s.ln();
                MomentTriple { m0: log_m0.exp(), m1: (s + m1s.ln()).exp(), mean, log_m0, tilted_mean: m1s / m0s }
            }
        }
    }
}

/// Exponential moments of `ξ` by the radial formula; fails with
/// [`Error::RadialFormulaInvalid`] if the support leaves the cube.
pub fn moments(kernel: &Kernel, d: usize, theta: f64) -> Result<MomentTriple> {
    if !(theta >= 0.0) {
        return Err(Error::arg("theta must be nonnegative"));
    }
    Ok(XiLaw::radial(kernel, d)?.moments(theta))
}

/// `I_{n,δ}(x)`. Zero at or below `(n−1)E[ξ]`, infinite at or above
/// `(n−1) f(0)`.
pub fn rate_function(kernel: &Kernel, n: usize, d: usize, x: f64) -> Result<f64> {
    rate_function_with(&XiLaw::new(kernel, d)?, n, x)
}

pub fn rate_function_with(law: &XiLaw, n: usize, x: f64) -> Result<f64> {
    if law.is_degenerate() {
        return Err(Error::Degenerate("Var(ξ) = 0".into()));
    }
    let m = (n - 1) as f64;
    if x <= m * law.mean() {
        return Ok(0.0);
    }
    let f0 = law.kernel().peak();
    if x >= m * f0 {
        return Ok(f64::INFINITY);
    }
    let theta = expanding_root(
        |t| Ok(m * law.moments(t).tilted_mean - x),
        0.0,
        1.0 / f0,
        THETA_REL_TOL,
        "rate function stationarity",
    )?;
    let mt = law.moments(theta);
    Ok((theta * x - m * mt.log_m0).max(0.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    /// `|(n−1) m1/m0 − k̄| / k̄`
    pub tilted: f64,
    /// `|(log n + (n−1) log m0)/θ̄ − k̄| / k̄`
    pub legendre: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateSolution {
    pub kbar: f64,
    pub thetabar: Option<f64>,
    pub mean_xi: f64,
    pub degenerate: bool,
    pub method: MomentMethod,
    pub residuals: Residuals,
}

/// Solves for `(k̄_{n,δ}, θ̄_{n,δ})`; pass a shifted kernel for `δ > 0`.
pub fn solve_kbar(kernel: &Kernel, n: usize, d: usize) -> Result<RateSolution> {
    solve_kbar_with(&XiLaw::new(kernel, d)?, n)
}

pub fn solve_kbar_with(law: &XiLaw, n: usize) -> Result<RateSolution> {
    if n < 2 {
        return Err(Error::arg("solve_kbar needs n >= 2"));
    }
    let m = (n - 1) as f64;
    let f0 = law.kernel().peak();
    if law.is_degenerate() {
        return Ok(RateSolution {
            kbar: m * f0,
            thetabar: None,
            mean_xi: law.mean(),
            degenerate: true,
            method: MomentMethod::Constant,
            residuals: Residuals { tilted: 0.0, legendre: 0.0 },
        });
    }
    let log_n = (n as f64).ln();
    // θ m' (θ) − (n−1) log m0(θ) − log n is increasing with value −log n at 0
    let theta = expanding_root(
        |t| {
            let mt = law.moments(t);
            Ok(t * m * mt.tilted_mean - m * mt.log_m0 - log_n)
        },
        0.0,
        1.0 / f0,
        THETA_REL_TOL,
        "k̄ level equation",
    )?;
    let mt = law.moments(theta);
    let kbar = m * mt.tilted_mean;
    let tilted = (m * mt.m1 / mt.m0 - kbar).abs() / kbar;
    let legendre = ((log_n + m * mt.log_m0) / theta - kbar).abs() / kbar;
    let tilted = if tilted.is_finite() { tilted } else { 0.0 };
    Ok(RateSolution {
        kbar,
        thetabar: Some(theta),
        mean_xi: law.mean(),
        degenerate: false,
        method: law.method(),
        residuals: Residuals { tilted, legendre },
    })
}

/// `H(a) = 1 − a + a log a`, with `H(0) = 1`.
pub fn h_fn(a: f64) -> f64 {
    if a == 0.0 {
        1.0
    } else {
        1.0 - a + a * a.ln()
    }
}

/// Inverse of `H` restricted to `[0, 1]`.
pub fn h_minus_inv(y: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&y) {
        return Err(Error::arg(format!("H_-^-1 expects y in [0,1], got {y}")));
    }
    if y == 0.0 {
        return Ok(1.0);
    }
    if y == 1.0 {
        return Ok(0.0);
    }
    // H is decreasing on [0,1]
    Ok(bisect(|a| y - h_fn(a), 0.0, 1.0, 1e-15))
}

/// Inverse of `H` restricted to `[1, ∞)`.
pub fn h_plus_inv(y: f64) -> Result<f64> {
    if !(y >= 0.0 && y.is_finite()) {
        return Err(Error::arg(format!("H_+^-1 expects y >= 0, got {y}")));
    }
    if y == 0.0 {
        return Ok(1.0);
    }
    let a = expanding_root(|a| Ok(h_fn(a) - y), 1.0, 2.0, 1e-16, "H_+^-1")?;
    Ok(a)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Asymptotic {
    pub kbar: f64,
    pub theta: f64,
}

/// Leading-order `(k̄_n, θ̄_n)` for the indicator kernel `b_n 1{x ≤ r_n}` with
/// `r_n = c n^{-1/d} (log n)^{1/d}`.
pub fn indicator_asymptotic(c: f64, b: f64, d: usize, n: usize) -> Result<Asymptotic> {
    if !(c > 0.0 && b > 0.0) {
        return Err(Error::arg("c and b must be positive"));
    }
    let p = unit_ball_volume(d) * c.powi(d as i32);
    let a = h_plus_inv(1.0 / p)?;
    Ok(Asymptotic { kbar: a * p * b * (n as f64).ln(), theta: a.ln() / b })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TriangularAsymptotic {
    pub asymptotic: Asymptotic,
    pub x_star: f64,
    /// Absolute residual of the `x*` equation.
    pub residual: f64,
}

fn tri_integrals(x: f64, d: usize) -> (f64, f64) {
    let dm1 = (d - 1) as i32;
    let j0 = integrate(|y| (x * y).exp() * (1.0 - y).powi(dm1), 0.0, 1.0, 1e-13, 1e-300);
    let j1 = integrate(|y| y * (x * y).exp() * (1.0 - y).powi(dm1), 0.0, 1.0, 1e-13, 1e-300);
    (j0, j1)
}

/// Leading-order `(k̄_n, θ̄_n)` for the triangular kernel
/// `b_n (1 − x/r_n)` with `r_n = c n^{-1/d} (log n)^{1/d}`, through the root
/// `x*` of `x J_1(x) − J_0(x) = 1/(d π_d c^d) − 1/d`, where
/// `J_k(x) = ∫_0^1 y^k e^{xy} (1−y)^{d−1} dy`.
pub fn triangular_asymptotic(c: f64, b: f64, d: usize, n: usize) -> Result<TriangularAsymptotic> {
    if !(c > 0.0 && b > 0.0) {
        return Err(Error::arg("c and b must be positive"));
    }
    let dp = d as f64 * unit_ball_volume(d) * c.powi(d as i32);
    let rhs = 1.0 / dp - 1.0 / d as f64;
    let lhs = |x: f64| {
        let (j0, j1) = tri_integrals(x, d);
        x * j1 - j0
    };
    let x_star = expanding_root(|x| Ok(lhs(x) - rhs), 0.0, 1.0, 1e-15, "triangular asymptotic x*")?;
    let residual = (lhs(x_star) - rhs).abs();
    let (_, j1) = tri_integrals(x_star, d);
    Ok(TriangularAsymptotic {
        asymptotic: Asymptotic { kbar: dp * b * (n as f64).ln() * j1, theta: x_star / b },
        x_star,
        residual,
    })
}

/// The power-cap kernel with `r_n = n^{-1/d} (log n)^β` and
/// `c_n = c' / (π_d (log n)^{dβ})`.
pub fn scaled_power_cap(n: usize, d: usize, beta: f64, c_prime: f64, gamma: f64) -> Result<Kernel> {
    let ln = (n as f64).ln();
    let r = (n as f64).powf(-1.0 / d as f64) * ln.powf(beta);
    let c = c_prime / (unit_ball_volume(d) * ln.powf(d as f64 * beta));
    Kernel::power_cap(c, r, gamma)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub n: usize,
    pub radius: f64,
    pub peak: f64,
    pub kbar: f64,
    pub thetabar: Option<f64>,
    pub mean_xi: f64,
    /// `k̄_n / (n r^d f(0))`
    pub scale_ratio: f64,
    /// `k̄_n / (n E[ξ])`
    pub mean_ratio: f64,
    /// `θ̄_n f(0)`
    pub theta_peak: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaSlope {
    pub delta: f64,
    pub kbar_delta: f64,
    /// `(k̄_{n,δ}/k̄_n − 1)/δ`
    pub slope: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub d: usize,
    pub rows: Vec<ScalingRow>,
    /// max/min of `scale_ratio` over the grid
    pub scale_spread: f64,
    /// slopes at the largest `n` of the grid
    pub delta_slopes: Vec<DeltaSlope>,
}

pub const SCALING_DELTAS: [f64; 3] = [0.05, 0.1, 0.2];

/// Tabulates the scaling ratios of `k̄_n` along `n_grid` for a kernel family
/// (`family(n)` returns `f_n`), and the shift sensitivity at the last `n`.
pub fn scaling_checks<F: Fn(usize) -> Result<Kernel>>(family: F, d: usize, n_grid: &[usize]) -> Result<ScalingReport> {
    if n_grid.is_empty() || n_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::arg("n_grid must be non-empty and increasing"));
    }
    let mut rows = vec![];
    for &n in n_grid {
        let k = family(n)?;
        let sol = solve_kbar(&k, n, d)?;
        let nf = n as f64;
        let r = k.radius();
        rows.push(ScalingRow {
            n,
            radius: r,
            peak: k.peak(),
            kbar: sol.kbar,
            thetabar: sol.thetabar,
            mean_xi: sol.mean_xi,
            scale_ratio: sol.kbar / (nf * r.powi(d as i32) * k.peak()),
            mean_ratio: sol.kbar / (nf * sol.mean_xi),
            theta_peak: sol.thetabar.map(|t| t * k.peak()),
        });
    }
    let (lo, hi) =
        rows.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), r| (lo.min(r.scale_ratio), hi.max(r.scale_ratio)));
    let n_last = *n_grid.last().unwrap();
    let k = family(n_last)?;
    let base = rows.last().unwrap().kbar;
    let mut delta_slopes = vec![];
    for &delta in &SCALING_DELTAS {
        let kd = solve_kbar(&k.shifted(delta)?, n_last, d)?.kbar;
        delta_slopes.push(DeltaSlope { delta, kbar_delta: kd, slope: (kd / base - 1.0) / delta });
    }
    Ok(ScalingReport { d, rows, scale_spread: hi / lo, delta_slopes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::{E, PI};

    #[test]
    fn indicator_moment_closed_form() {
        let (b, r) = (0.3, 0.12);
        let k = Kernel::indicator(b, r).unwrap();
        for &theta in &[0.0, 0.5, 3.0, 20.0] {
            let m = moments(&k, 2, theta).unwrap();
            let want = 1.0 + ((theta * b).exp() - 1.0) * PI * r * r;
            assert_relative_eq!(m.m0, want, max_relative = 1e-10);
            let want1 = (theta * b).exp() * PI * r * r * b;
            assert_relative_eq!(m.m1, want1, max_relative = 1e-10);
        }
    }

    #[test]
    fn zero_theta_moments() {
        let k = Kernel::triangular(0.4, 0.2).unwrap();
        let m = moments(&k, 3, 0.0).unwrap();
        assert_eq!(m.m0, 1.0);
        assert_relative_eq!(m.m1, m.mean, max_relative = 1e-14);
    }

    #[test]
    fn power_cap_mean_closed_form() {
        for &(gamma, d) in &[(1.0, 2usize), (2.0, 2), (0.7, 3)] {
            let (c, r) = (0.05, 0.2);
            let k = Kernel::power_cap(c, r, gamma).unwrap();
            let m = moments(&k, d, 0.0).unwrap();
            let pd = unit_ball_volume(d);
            let want = gamma * c * pd * r.powi(d as i32) / (gamma + d as f64);
            assert_relative_eq!(m.mean, want, max_relative = 1e-10);
        }
    }

    #[test]
    fn radial_formula_rejects_large_support() {
        let k = Kernel::triangular(0.1, 0.4).unwrap().shifted(0.5).unwrap();
        assert!(matches!(moments(&k, 2, 1.0), Err(Error::RadialFormulaInvalid { .. })));
        let law = XiLaw::new(&k, 2).unwrap();
        assert_eq!(law.method(), MomentMethod::Cubature);
    }

    #[test]
    fn cubature_agrees_with_radial_when_both_valid() {
        let k = Kernel::triangular(0.5, 0.3).unwrap();
        let radial = XiLaw::radial(&k, 2).unwrap();
        let cub = XiLaw::cubature(&k, 2);
        for &t in &[0.0, 1.0, 4.0] {
            let a = radial.moments(t);
            let b = cub.moments(t);
            assert_relative_eq!(a.m0, b.m0, max_relative = 1e-5);
            assert_relative_eq!(a.m1, b.m1, max_relative = 1e-4);
        }
    }

    #[test]
    fn scaled_moments_continuous() {
        let k = Kernel::triangular(1.0, 0.1).unwrap();
        let law = XiLaw::new(&k, 2).unwrap();
        let lo = law.moments(SCALE_THRESHOLD * (1.0 - 1e-9));
        let hi = law.moments(SCALE_THRESHOLD * (1.0 + 1e-9));
        assert_relative_eq!(lo.log_m0, hi.log_m0, max_relative = 1e-8);
        assert_relative_eq!(lo.tilted_mean, hi.tilted_mean, max_relative = 1e-7);
    }

    #[test]
    fn degenerate_kbar() {
        let k = Kernel::indicator(0.05, 2f64.sqrt()).unwrap();
        let s = solve_kbar(&k, 10, 2).unwrap();
        assert!(s.degenerate);
        assert_eq!(s.kbar, 9.0 * 0.05);
        assert!(s.thetabar.is_none());
        assert!(rate_function(&k, 10, 2, 1.0).is_err());
    }

    #[test]
    fn kbar_identities() {
        let k = Kernel::triangular(0.02, 0.08).unwrap();
        let n = 5000;
        let s = solve_kbar(&k, n, 2).unwrap();
        let theta = s.thetabar.unwrap();
        let m = moments(&k, 2, theta).unwrap();
        let nm = (n - 1) as f64;
        assert_relative_eq!(nm * m.m1 / m.m0, s.kbar, max_relative = 1e-8);
        let rhs = ((n as f64).ln() + nm * m.m0.ln()) / theta;
        assert_relative_eq!(rhs, s.kbar, max_relative = 1e-8);
        assert!(s.kbar > nm * s.mean_xi);
        let i = rate_function(&k, n, 2, s.kbar).unwrap();
        assert_relative_eq!(i, (n as f64).ln(), max_relative = 1e-8);
    }

    #[test]
    fn rate_function_zero_at_and_below_mean() {
        let k = Kernel::indicator(0.1, 0.1).unwrap();
        let n = 100;
        let mean = moments(&k, 2, 0.0).unwrap().mean;
        let at = 99.0 * mean;
        assert_eq!(rate_function(&k, n, 2, at).unwrap(), 0.0);
        assert_eq!(rate_function(&k, n, 2, 0.5 * at).unwrap(), 0.0);
        assert_eq!(rate_function(&k, n, 2, 99.0 * 0.1).unwrap(), f64::INFINITY);
    }

    #[test]
    fn rate_function_matches_grid_search() {
        // independent oracle: closed-form log m0 for the indicator, maximized on a dense grid
        let (b, r, n) = (0.1, 0.1, 100usize);
        let k = Kernel::indicator(b, r).unwrap();
        let p = PI * r * r;
        let x = 2.0 * 99.0 * b * p;
        let obj = |t: f64| t * x - 99.0 * (1.0 + ((t * b).exp() - 1.0) * p).ln();
        let steps = 100_000;
        let hi = 50.0 / b;
        let (mut best_t, mut best) = (0.0, f64::NEG_INFINITY);
        for i in 1..=steps {
            let t = hi * i as f64 / steps as f64;
            let v = obj(t);
            if v > best {
                best = v;
                best_t = t;
            }
        }
        // polish the grid maximum with golden-section inside its cell
        let (mut a, mut c) = (best_t - hi / steps as f64, best_t + hi / steps as f64);
        let g = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..200 {
            let x1 = c - g * (c - a);
            let x2 = a + g * (c - a);
            if obj(x1) > obj(x2) {
                c = x2;
            } else {
                a = x1;
            }
        }
        best = best.max(obj(0.5 * (a + c)));
        let got = rate_function(&k, n, 2, x).unwrap();
        assert!((got - best).abs() < 1e-6, "got {got}, grid {best}");
    }

    #[test]
    fn h_values_and_inverses() {
        assert_eq!(h_fn(0.0), 1.0);
        assert_eq!(h_fn(1.0), 0.0);
        assert_relative_eq!(h_plus_inv(1.0).unwrap(), E, max_relative = 1e-12);
        let y = 2.0 * 2f64.ln() - 1.0;
        assert_relative_eq!(h_plus_inv(y).unwrap(), 2.0, max_relative = 1e-12);
        for i in 0..=50 {
            let y = i as f64 / 50.0;
            let a = h_minus_inv(y).unwrap();
            assert!((h_fn(a) - y).abs() < 1e-10);
            assert!((0.0..=1.0).contains(&a));
            let y2 = 20.0 * y;
            let a2 = h_plus_inv(y2).unwrap();
            assert!((h_fn(a2) - y2).abs() < 1e-10);
            assert!(a2 >= 1.0);
        }
        assert!(h_minus_inv(1.5).is_err());
        assert!(h_plus_inv(-0.1).is_err());
    }

    #[test]
    fn indicator_asymptotic_unit_mass() {
        let c = 1.0 / PI.sqrt();
        let a = indicator_asymptotic(c, 0.3, 2, 1000).unwrap();
        assert_relative_eq!(a.kbar, E * 0.3 * 1000f64.ln(), max_relative = 1e-10);
        let a2 = indicator_asymptotic(c, 7.0, 2, 1000).unwrap();
        assert_relative_eq!(a.theta * 0.3, a2.theta * 7.0, max_relative = 1e-12);
    }

    #[test]
    fn triangular_asymptotic_root() {
        let c = 1.0 / PI.sqrt();
        let e = triangular_asymptotic(c, 1.0, 2, 1000).unwrap();
        assert!(e.residual < 1e-10);
        // forward substitution with independent simple quadrature
        let x = e.x_star;
        let m = 200_000;
        let (mut j0, mut j1) = (0.0, 0.0);
        for i in 0..m {
            let y = (i as f64 + 0.5) / m as f64;
            let w = (x * y).exp() * (1.0 - y);
            j0 += w;
            j1 += y * w;
        }
        j0 /= m as f64;
        j1 /= m as f64;
        assert!((x * j1 - j0).abs() < 1e-8);
    }
}
