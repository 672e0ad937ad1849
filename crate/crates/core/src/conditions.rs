//! Checkers for the sufficient and necessary flocking conditions and the
//! adversarial initial velocities.
//!
//! The sufficient conditions hold up to an unspecified positive constant
//! `c` (and `c1` for the variant without a shift). Reports therefore carry
//! the raw right-hand side with `c` factored out, the ratio
//! `lhs / rhs_over_c`, and a verdict at a caller-supplied `c` that defaults
//! to 1 as a convention.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::l_functional;
use crate::error::{Error, Result};
use crate::geometry::{alpha_for_radius, build_graph, critical_alpha, critical_radius};
use crate::kernel::Kernel;
use crate::ldp::solve_kbar;
use crate::matrix::RowMatrix;

/// Relative band around the critical `α` reported as [`Regime::AtThreshold`].
const THRESHOLD_REL_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    SubCritical,
    SuperCritical,
    AtThreshold,
}

/// Position of `α` relative to `2^{d−1}/(d π_d)`.
pub fn classify_regime(alpha: f64, d: usize) -> Regime {
    let crit = critical_alpha(d);
    if (alpha - crit).abs() <= THRESHOLD_REL_TOL * crit {
        Regime::AtThreshold
    } else if alpha < crit {
        Regime::SubCritical
    } else {
        Regime::SuperCritical
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    /// `α ε^d ≤ (d+3)^{d/2}`
    I,
    /// `α ε^d > (d+3)^{d/2}`
    II,
}

pub fn branch(alpha: f64, epsilon: f64, d: usize) -> Branch {
    if alpha * epsilon.powi(d as i32) <= ((d + 3) as f64).powf(d as f64 / 2.0) {
        Branch::I
    } else {
        Branch::II
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub n: usize,
    pub d: usize,
    pub alpha: f64,
    pub radius: f64,
    pub regime: Regime,
    pub branch: Branch,
    pub delta: Option<f64>,
    pub epsilon: f64,
    /// `k̄_{n,δ}` (`k̄_n` without a shift).
    pub kbar_delta: f64,
    /// `k̄_{n,δ} ≤ 1 − ε`
    pub epsilon_feasible: bool,
    /// `L(V(0))`
    pub lhs: f64,
    pub rhs_over_c: f64,
    /// `lhs / rhs_over_c`
    pub ratio: f64,
    pub c: f64,
    pub c1: Option<f64>,
    pub c0: Option<f64>,
    /// All hypotheses other than the velocity bound hold.
    pub applicable: bool,
    /// `applicable` and `lhs ≤ c · rhs_over_c`.
    pub satisfied_at_c: bool,
}

fn log_power(n: usize, d: usize) -> f64 {
    (n as f64).ln().powf(2.0 * d as f64 / (d as f64 - 1.0))
}

fn check_dims(n: usize, d: usize) -> Result<()> {
    if n < 2 || d < 2 {
        return Err(Error::arg("conditions need n >= 2 and d >= 2"));
    }
    Ok(())
}

/// Right-hand side of the shifted sufficient condition with `c` factored out.
pub fn shifted_sufficient_rhs(kernel: &Kernel, n: usize, d: usize, delta: f64, epsilon: f64) -> f64 {
    let r = kernel.radius();
    let nf = n as f64;
    let alpha = alpha_for_radius(n, d, r);
    let f_inner = kernel.eval((delta + epsilon) * r);
    match branch(alpha, epsilon, d) {
        Branch::I => {
            let rc = critical_radius(n, d);
            let f_far = kernel.eval(rc + (delta + epsilon) * r);
            let a = r.powi(2 * d as i32 + 2) * f_inner * f_inner;
            let b = f_far * f_far / log_power(n, d);
            delta * nf * nf * r * a.min(b)
        }
        Branch::II => delta * f_inner * f_inner * nf * nf * r * r.powi(2 * d as i32 + 2).min(1.0),
    }
}

/// Shifted sufficient condition for an initial velocity matrix. `α` is
/// read off the kernel radius through `r = (α log n / n)^{1/d}`.
pub fn check_shifted_sufficient(
    kernel: &Kernel,
    n: usize,
    d: usize,
    delta: f64,
    epsilon: f64,
    v0: &RowMatrix,
    c: f64,
) -> Result<ConditionReport> {
    check_dims(n, d)?;
    if !(delta > 0.0 && epsilon > 0.0 && c > 0.0) {
        return Err(Error::arg("delta, epsilon and c must be positive"));
    }
    if kernel.shift() != 0.0 {
        return Err(Error::arg("pass the unshifted kernel; the shift is the delta argument"));
    }
    let r = kernel.radius();
    let alpha = alpha_for_radius(n, d, r);
    let kbar_delta = solve_kbar(&kernel.shifted(delta)?, n, d)?.kbar;
    let lhs = l_functional(v0);
    let rhs_over_c = shifted_sufficient_rhs(kernel, n, d, delta, epsilon);
    let regime = classify_regime(alpha, d);
    let epsilon_feasible = kbar_delta <= 1.0 - epsilon;
    let applicable = regime == Regime::SuperCritical && epsilon_feasible;
    Ok(ConditionReport {
        n,
        d,
        alpha,
        radius: r,
        regime,
        branch: branch(alpha, epsilon, d),
        delta: Some(delta),
        epsilon,
        kbar_delta,
        epsilon_feasible,
        lhs,
        rhs_over_c,
        ratio: lhs / rhs_over_c,
        c,
        c1: None,
        c0: None,
        applicable,
        satisfied_at_c: applicable && lhs <= c * rhs_over_c,
    })
}

/// Right-hand side of the unshifted sufficient condition with `c` factored out.
pub fn unshifted_sufficient_rhs(kernel: &Kernel, n: usize, d: usize, epsilon: f64, c1: f64) -> f64 {
    let r = kernel.radius();
    let nf = n as f64;
    let alpha = alpha_for_radius(n, d, r);
    let f_inner = kernel.eval(c1 * epsilon * r);
    match branch(alpha, epsilon, d) {
        Branch::I => {
            let rc = critical_radius(n, d);
            let f_far = kernel.eval(rc + c1 * epsilon * r);
            let a = r.powi(2 * d as i32 + 2) * f_inner * f_inner;
            let b = f_far * f_far / log_power(n, d);
            nf * nf * r * a.min(b)
        }
        Branch::II => nf * nf * r.powi(2 * d as i32 + 3) * f_inner * f_inner,
    }
}

/// Unshifted sufficient condition, requiring `c0 > 0` for the kernel.
pub fn check_unshifted_sufficient(
    kernel: &Kernel,
    n: usize,
    d: usize,
    epsilon: f64,
    v0: &RowMatrix,
    c: f64,
    c1: f64,
) -> Result<ConditionReport> {
    check_dims(n, d)?;
    if !(epsilon > 0.0 && c > 0.0 && c1 > 0.0) {
        return Err(Error::arg("epsilon, c and c1 must be positive"));
    }
    let r = kernel.radius();
    let alpha = alpha_for_radius(n, d, r);
    let c0 = kernel.c0_integral(d)?;
    let kbar = solve_kbar(kernel, n, d)?.kbar;
    let lhs = l_functional(v0);
    let rhs_over_c = unshifted_sufficient_rhs(kernel, n, d, epsilon, c1);
    let regime = classify_regime(alpha, d);
    let epsilon_feasible = kbar <= 1.0 - epsilon;
    let applicable = regime == Regime::SuperCritical && epsilon_feasible && c0 > 0.0;
    Ok(ConditionReport {
        n,
        d,
        alpha,
        radius: r,
        regime,
        branch: branch(alpha, epsilon, d),
        delta: None,
        epsilon,
        kbar_delta: kbar,
        epsilon_feasible,
        lhs,
        rhs_over_c,
        ratio: lhs / rhs_over_c,
        c,
        c1: Some(c1),
        c0: Some(c0),
        applicable,
        satisfied_at_c: applicable && lhs <= c * rhs_over_c,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightConditionsReport {
    pub n: usize,
    pub d: usize,
    pub alpha: f64,
    pub regime: Regime,
    pub epsilon: f64,
    pub kbar: f64,
    /// `ε ≤ k̄_n ≤ 1 − ε`
    pub kbar_in_band: bool,
    /// `f(ε r) > ε f(0)`
    pub inner_weight: bool,
    /// `f(R_c + ε r) > r² (log n)^{2d/(d−1)} n^{−2}`
    pub outer_weight: bool,
    pub all_hold: bool,
    /// `r³ / log n`; the guaranteed flocking velocity is `c` times this.
    pub velocity_scale_over_c: f64,
}

pub fn check_weight_conditions(kernel: &Kernel, n: usize, d: usize, epsilon: f64) -> Result<WeightConditionsReport> {
    check_dims(n, d)?;
    if !(epsilon > 0.0) {
        return Err(Error::arg("epsilon must be positive"));
    }
    let r = kernel.radius();
    let nf = n as f64;
    let alpha = alpha_for_radius(n, d, r);
    let kbar = solve_kbar(kernel, n, d)?.kbar;
    let regime = classify_regime(alpha, d);
    let kbar_in_band = epsilon <= kbar && kbar <= 1.0 - epsilon;
    let inner_weight = kernel.eval(epsilon * r) > epsilon * kernel.peak();
    let outer_weight = kernel.eval(critical_radius(n, d) + epsilon * r) > r * r * log_power(n, d) / (nf * nf);
    Ok(WeightConditionsReport {
        n,
        d,
        alpha,
        regime,
        epsilon,
        kbar,
        kbar_in_band,
        inner_weight,
        outer_weight,
        all_hold: regime == Regime::SuperCritical && kbar_in_band && inner_weight && outer_weight,
        velocity_scale_over_c: r.powi(3) / nf.ln(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NecessaryReport {
    pub n: usize,
    pub d: usize,
    pub alpha: f64,
    pub regime: Regime,
    /// `k̄_n`, absent in the sub-critical regime.
    pub kbar: Option<f64>,
    /// `k̄_n < 2^d`
    pub below_two_pow_d: Option<bool>,
    /// `2^{−d−1} k̄_n r`, the scale for `k̄_n = Θ(1)`.
    pub scale_bounded: Option<f64>,
    /// `k̄_n r / 2`, the scale for `k̄_n = o(1)`.
    pub scale_vanishing: Option<f64>,
    pub summary: String,
}

pub fn check_necessary(kernel: &Kernel, n: usize, d: usize) -> Result<NecessaryReport> {
    check_dims(n, d)?;
    let r = kernel.radius();
    let alpha = alpha_for_radius(n, d, r);
    let regime = classify_regime(alpha, d);
    if regime == Regime::SubCritical {
        return Ok(NecessaryReport {
            n,
            d,
            alpha,
            regime,
            kbar: None,
            below_two_pow_d: None,
            scale_bounded: None,
            scale_vanishing: None,
            summary: "sub-critical: no v-flocking for any v > 0".into(),
        });
    }
    let kbar = solve_kbar(kernel, n, d)?.kbar;
    let two_d = 2f64.powi(d as i32);
    let below = kbar < two_d;
    let summary = if regime == Regime::AtThreshold {
        "at the connectivity threshold: scales reported, regime not classified".to_string()
    } else if below {
        format!("no v-flocking above v = {:.6e} when k̄_n stays bounded", kbar * r / (2.0 * two_d))
    } else {
        "k̄_n >= 2^d: the bounded-k̄ scale does not apply".to_string()
    };
    Ok(NecessaryReport {
        n,
        d,
        alpha,
        regime,
        kbar: Some(kbar),
        below_two_pow_d: Some(below),
        scale_bounded: Some(kbar * r / (2.0 * two_d)),
        scale_vanishing: Some(0.5 * kbar * r),
        summary,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdversarialMode {
    /// The agent closest to the origin gets `−v0 (1,…,1)/√d`, all others the opposite.
    NearestOrigin,
    /// `−v0 e_1` for agents with first coordinate `≤ 1/2`, `+v0 e_1` otherwise.
    HalfSplit,
}

/// Index of the agent closest to the origin; lowest index on ties.
pub fn nearest_origin(positions: &RowMatrix) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (i, p) in positions.iter_rows().enumerate() {
        let q: f64 = p.iter().map(|x| x * x).sum();
        if q < best.0 {
            best = (q, i);
        }
    }
    best.1
}

pub fn adversarial_velocities(positions: &RowMatrix, mode: AdversarialMode, v0: f64) -> RowMatrix {
    let (n, d) = (positions.nrows(), positions.ncols());
    let mut v = RowMatrix::zeros(n, d);
    match mode {
        AdversarialMode::NearestOrigin => {
            let s = v0 / (d as f64).sqrt();
            let lone = nearest_origin(positions);
            for i in 0..n {
                let sign = if i == lone { -1.0 } else { 1.0 };
                v.row_mut(i).iter_mut().for_each(|x| *x = sign * s);
            }
        }
        AdversarialMode::HalfSplit => {
            for i in 0..n {
                v.row_mut(i)[0] = if positions.get(i, 0) <= 0.5 { -v0 } else { v0 };
            }
        }
    }
    v
}

/// A connected component of the initial graph whose members move with
/// `speed · u` while everyone else moves with `−speed · u`, chosen so that
/// no member ever comes within the interaction radius of a non-member.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsolatedCluster {
    pub members: Vec<usize>,
    pub direction: Vec<f64>,
    pub speed: f64,
    /// `min_{i∈C, j∉C} min_{s≥0} ‖X_i − X_j + 2 s speed u‖`
    pub clearance: f64,
}

impl IsolatedCluster {
    pub fn velocities(&self, n: usize) -> RowMatrix {
        let d = self.direction.len();
        let mut inside = vec![false; n];
        self.members.iter().for_each(|&i| inside[i] = true);
        let mut v = RowMatrix::zeros(n, d);
        for i in 0..n {
            let sign = if inside[i] { self.speed } else { -self.speed };
            for (x, u) in v.row_mut(i).iter_mut().zip(&self.direction) {
                *x = sign * u;
            }
        }
        v
    }
}

/// `min_{s≥0} ‖Δ + s w‖`
fn ray_clearance(delta: &[f64], w: &[f64]) -> f64 {
    let dw: f64 = delta.iter().zip(w).map(|(a, b)| a * b).sum();
    let d2: f64 = delta.iter().map(|a| a * a).sum();
    if dw >= 0.0 {
        return d2.sqrt();
    }
    let w2: f64 = w.iter().map(|a| a * a).sum();
    (d2 - dw * dw / w2).max(0.0).sqrt()
}

/// Minimum over cross pairs of the closest approach along straight lines.
pub fn isolation_clearance(positions: &RowMatrix, members: &[usize], direction: &[f64]) -> f64 {
    let n = positions.nrows();
    let mut inside = vec![false; n];
    members.iter().for_each(|&i| inside[i] = true);
    let mut best = f64::INFINITY;
    let mut delta = vec![0.0; direction.len()];
    for &i in members {
        for j in (0..n).filter(|&j| !inside[j]) {
            for (k, dk) in delta.iter_mut().enumerate() {
                *dk = positions.get(i, k) - positions.get(j, k);
            }
            best = best.min(ray_clearance(&delta, direction));
        }
    }
    best
}

fn candidate_cluster_directions(d: usize) -> Vec<Vec<f64>> {
    let mut out = vec![];
    let s = -1.0 / ((d - 1) as f64).sqrt();
    let mut u = vec![s; d];
    u[0] = 0.0;
    out.push(u);
    for k in 0..d {
        for sign in [1.0, -1.0] {
            let mut e = vec![0.0; d];
            e[k] = sign;
            out.push(e);
        }
    }
    out
}

/// Searches the components of `G(X; r)` (smallest first) for one that admits
/// a direction satisfying the isolation predicate with margin.
pub fn find_isolated_cluster(positions: &RowMatrix, radius: f64, speed: f64) -> Result<Option<IsolatedCluster>> {
    if !(speed > 0.0) {
        return Err(Error::arg("speed must be positive"));
    }
    let d = positions.ncols();
    if d < 2 {
        return Err(Error::arg("isolated clusters need d >= 2"));
    }
    let graph = build_graph(positions, radius)?;
    let mut comps = graph.components();
    if comps.len() < 2 {
        return Ok(None);
    }
    comps.sort_by(|a, b| a.len().cmp(&b.len()).then(a[0].cmp(&b[0])));
    let margin = radius * (1.0 + 1e-9);
    for members in comps {
        if 2 * members.len() > positions.nrows() {
            continue;
        }
        for u in candidate_cluster_directions(d) {
            let clearance = isolation_clearance(positions, &members, &u);
            if clearance > margin {
                return Ok(Some(IsolatedCluster { members, direction: u, speed, clearance }));
            }
        }
    }
    Ok(None)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPoint {
    pub v: f64,
    pub trials: usize,
    pub flocked: usize,
    pub frequency: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VThreshold {
    /// Largest tested `v` with frequency `≥ 0.9` and smallest larger `v`
    /// with frequency `≤ 0.1`. An upper bound on the critical velocity of
    /// the tested family only.
    pub interval: Option<(f64, f64)>,
    /// Every evaluated level, sorted by `v`.
    pub curve: Vec<ThresholdPoint>,
    pub warning: Option<String>,
}

pub const FLOCK_FREQUENCY: f64 = 0.9;
pub const NO_FLOCK_FREQUENCY: f64 = 0.1;
/// Allowed rise of the frequency between adjacent levels before the curve
/// is called non-monotone.
pub const MONOTONE_NOISE: f64 = 0.15;

/// Geometric bisection on `v` for the flocking frequency of a velocity
/// family. `run(v, trial)` reports whether that trial flocked; trials at
/// different levels should share their random draws.
pub fn estimate_v_threshold<F>(run: F, v_lo: f64, v_hi: f64, trials: usize, iterations: usize) -> Result<VThreshold>
where
    F: Fn(f64, usize) -> Result<bool> + Sync,
{
    if !(v_lo > 0.0 && v_lo < v_hi) || trials == 0 {
        return Err(Error::arg("need 0 < v_lo < v_hi and trials >= 1"));
    }
    let eval = |v: f64| -> Result<ThresholdPoint> {
        let outcomes: Vec<bool> = (0..trials).into_par_iter().map(|k| run(v, k)).collect::<Result<Vec<_>>>()?;
        let flocked = outcomes.iter().filter(|&&b| b).count();
        Ok(ThresholdPoint { v, trials, flocked, frequency: flocked as f64 / trials as f64 })
    };
    let mut curve = vec![eval(v_lo)?, eval(v_hi)?];
    let mut warning = None;
    let interval = if curve[0].frequency < FLOCK_FREQUENCY {
        warning = Some(format!("frequency {} at v_lo is below {FLOCK_FREQUENCY}", curve[0].frequency));
        Some((v_lo, v_lo))
    } else if curve[1].frequency > NO_FLOCK_FREQUENCY {
        warning = Some(format!("frequency {} at v_hi is above {NO_FLOCK_FREQUENCY}", curve[1].frequency));
        None
    } else {
        // lo: largest v known to flock often; hi: smallest v known to fail often
        let (mut lo, mut hi) = (v_lo, v_hi);
        let mut mid_hi = v_hi;
        for _ in 0..iterations {
            let mid = (lo * mid_hi).sqrt();
            let p = eval(mid)?;
            let f = p.frequency;
            curve.push(p);
            if f >= FLOCK_FREQUENCY {
                lo = mid;
            } else {
                mid_hi = mid;
                if f <= NO_FLOCK_FREQUENCY {
                    hi = mid;
                }
            }
        }
        // tighten hi from above through the points between lo and hi
        for _ in 0..iterations {
            let probe = curve.iter().filter(|p| p.v > lo && p.v < hi).map(|p| p.v).fold(f64::INFINITY, f64::min);
            let mid = if probe.is_finite() { (probe * hi).sqrt() } else { (lo * hi).sqrt() };
            if (hi / mid - 1.0).abs() < 1e-12 {
                break;
            }
            let p = eval(mid)?;
            let f = p.frequency;
            curve.push(p);
            if f <= NO_FLOCK_FREQUENCY {
                hi = mid;
            } else if f >= FLOCK_FREQUENCY {
                lo = mid;
            }
        }
        Some((lo, hi))
    };
    curve.sort_by(|a, b| a.v.total_cmp(&b.v));
    if curve.windows(2).any(|w| w[1].frequency > w[0].frequency + MONOTONE_NOISE) {
        warning = Some("flocking frequency is not monotone in v".into());
        return Ok(VThreshold { interval: None, curve, warning });
    }
    Ok(VThreshold { interval, curve, warning })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{radius_for_alpha, sample_positions, unit_ball_volume};
    use crate::matrix::norm;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn reference_kernel(n: usize, alpha: f64) -> Kernel {
        let r = radius_for_alpha(n, 2, alpha);
        Kernel::triangular(1.0 / (alpha * PI * (n as f64).ln()), r).unwrap()
    }

    #[test]
    fn regimes() {
        assert_eq!(classify_regime(0.2, 2), Regime::SubCritical);
        assert_eq!(classify_regime(1.0 / PI, 2), Regime::AtThreshold);
        assert_eq!(classify_regime(2.0, 2), Regime::SuperCritical);
        assert!((critical_alpha(2) - 1.0 / PI).abs() < 1e-12);
        assert_eq!(classify_regime(critical_alpha(3) * 1.01, 3), Regime::SuperCritical);
        let _ = unit_ball_volume(3);
    }

    #[test]
    fn branch_threshold_d2() {
        assert_eq!(branch(5.0, 1.0, 2), Branch::I);
        assert_eq!(branch(5.0 + 1e-9, 1.0, 2), Branch::II);
        assert_eq!(branch(20.0, 0.5, 2), Branch::I);
        for &(a, e) in &[(0.5, 0.1), (100.0, 0.5), (7.0, 0.9)] {
            let lhs = a * e * e <= 5.0;
            assert_eq!(branch(a, e, 2) == Branch::I, lhs);
        }
    }

    #[test]
    fn consensus_velocity_satisfies_shifted_condition() {
        let n = 600;
        let k = reference_kernel(n, 2.0);
        let v0 = RowMatrix::from_vec(n, 2, [0.1, 0.2].repeat(n));
        let rep = check_shifted_sufficient(&k, n, 2, 0.05, 0.1, &v0, 1.0).unwrap();
        assert!(rep.lhs < 1e-12);
        assert!(rep.epsilon_feasible);
        assert!(rep.satisfied_at_c);
    }

    #[test]
    fn rhs_scaling_exponent() {
        // for this kernel the first term of the minimum is active and the
        // bound scales as (log n / n)^{3/2}
        let (delta, eps) = (0.05, 0.1);
        let pts: Vec<(f64, f64)> = [600usize, 6000]
            .iter()
            .map(|&n| {
                let k = reference_kernel(n, 2.0);
                let x = (n as f64).ln() / n as f64;
                (x.ln(), shifted_sufficient_rhs(&k, n, 2, delta, eps).ln())
            })
            .collect();
        let slope = (pts[1].1 - pts[0].1) / (pts[1].0 - pts[0].0);
        assert!((slope - 1.5).abs() < 0.1, "slope {slope}");
    }

    #[test]
    fn unshifted_condition_indicator_and_infeasible() {
        let n = 1000;
        let r = radius_for_alpha(n, 2, 2.0);
        let k = Kernel::indicator(0.5, r).unwrap();
        let v0 = RowMatrix::zeros(n, 2);
        let rep = check_unshifted_sufficient(&k, n, 2, 0.1, &v0, 1.0, 1.0).unwrap();
        assert_relative_eq!(rep.c0.unwrap(), 0.5, max_relative = 1e-10);
        // k̄ is far above 1 with this amplitude
        assert!(!rep.epsilon_feasible);
        assert!(!rep.applicable);
    }

    #[test]
    fn necessary_condition_scales() {
        let n = 600;
        let sub = check_necessary(&reference_kernel(n, 0.2), n, 2).unwrap();
        assert_eq!(sub.regime, Regime::SubCritical);
        assert!(sub.kbar.is_none());
        let k = reference_kernel(n, 2.0);
        let rep = check_necessary(&k, n, 2).unwrap();
        let kbar = rep.kbar.unwrap();
        assert!(rep.below_two_pow_d.unwrap());
        assert_relative_eq!(rep.scale_bounded.unwrap(), kbar * k.radius() / 8.0, max_relative = 1e-15);
    }

    #[test]
    fn nearest_origin_velocities() {
        let x = sample_positions(50, 2, 3).points;
        let v = adversarial_velocities(&x, AdversarialMode::NearestOrigin, 1.0);
        let lone = nearest_origin(&x);
        let s = 1.0 / 2f64.sqrt();
        assert_eq!(v.row(lone), &[-s, -s]);
        for i in 0..50 {
            assert_relative_eq!(norm(v.row(i)), 1.0, max_relative = 1e-15);
            if i != lone {
                assert_eq!(v.row(i), &[s, s]);
            }
        }
    }

    #[test]
    fn nearest_origin_ties_pick_lowest_index() {
        let x = RowMatrix::from_rows(&[vec![0.5, 0.5], vec![0.1, 0.2], vec![0.2, 0.1]]).unwrap();
        assert_eq!(nearest_origin(&x), 1);
    }

    #[test]
    fn half_split_velocities() {
        let x = sample_positions(101, 2, 4).points;
        let v0 = 0.3;
        let v = adversarial_velocities(&x, AdversarialMode::HalfSplit, v0);
        let left = (0..101).filter(|&i| x.get(i, 0) <= 0.5).count() as f64;
        let sum: f64 = (0..101).map(|i| v.get(i, 0)).sum();
        assert_relative_eq!(sum, (101.0 - 2.0 * left) * v0, epsilon = 1e-12);
        for i in 0..101 {
            assert_eq!(norm(v.row(i)), v0);
        }
    }

    #[test]
    fn ray_clearance_cases() {
        assert_relative_eq!(ray_clearance(&[1.0, 0.0], &[1.0, 0.0]), 1.0);
        assert_relative_eq!(ray_clearance(&[1.0, 1.0], &[-1.0, 0.0]), 1.0);
        assert_relative_eq!(ray_clearance(&[1.0, 0.0], &[-1.0, 0.0]), 0.0);
    }

    #[test]
    fn isolated_pair_is_found() {
        // a pair far from a tight clump
        let mut rows = vec![vec![0.05, 0.9], vec![0.07, 0.9]];
        for i in 0..10 {
            rows.push(vec![0.6 + 0.01 * i as f64, 0.2]);
        }
        let x = RowMatrix::from_rows(&rows).unwrap();
        let c = find_isolated_cluster(&x, 0.1, 0.01).unwrap().unwrap();
        assert_eq!(c.members, vec![0, 1]);
        assert!(c.clearance > 0.1);
        let v = c.velocities(12);
        assert_eq!(norm(v.row(0)), 0.01);
    }

    #[test]
    fn threshold_on_synthetic_family() {
        // flocks exactly when v < 1
        let run = |v: f64, _k: usize| Ok(v < 1.0);
        let t = estimate_v_threshold(run, 0.01, 100.0, 4, 20).unwrap();
        let (lo, hi) = t.interval.unwrap();
        assert!(lo < 1.0 && hi >= 1.0);
        assert!(hi / lo < 1.01);
        let none = estimate_v_threshold(|_, _| Ok(false), 0.01, 100.0, 4, 5).unwrap();
        assert_eq!(none.interval, Some((0.01, 0.01)));
        assert!(none.warning.is_some());
    }
}
