//! The discrete-time system and its per-step diagnostics.
//!
//! Positions advance with the pre-update velocities and the velocities are
//! averaged through `P(t)`, which is built from the pre-update positions:
//!
//! ```text
//! X_i(t+1) = X_i(t) + V_i(t)
//! V_i(t+1) = V_i(t) + Σ_{j≠i} f(‖X_i(t) − X_j(t)‖) (V_j(t) − V_i(t))
//! ```
//!
//! Positions are never confined after `t = 0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::SpatialIndex;
use crate::kernel::Kernel;
use crate::matrix::{dist2, norm, RowMatrix};
use crate::spectral::{self, ContractionReport, StepSpectrum};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwarmState {
    pub t: usize,
    pub x: RowMatrix,
    pub v: RowMatrix,
}

impl SwarmState {
    pub fn new(x: RowMatrix, v: RowMatrix) -> Result<Self> {
        if x.nrows() != v.nrows() || x.ncols() != v.ncols() {
            return Err(Error::arg(format!(
                "positions are {}x{} but velocities are {}x{}",
                x.nrows(),
                x.ncols(),
                v.nrows(),
                v.ncols()
            )));
        }
        Ok(SwarmState { t: 0, x, v })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }
}

/// Sparse symmetric `P(t)`: off-diagonal rows sorted by column, diagonal
/// stored as the complement of the off-diagonal row sum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightMatrix {
    n: usize,
    rows: Vec<Vec<(u32, f64)>>,
    diag: Vec<f64>,
}

impl WeightMatrix {
    /// From pairs `(i, j, w)` with `i < j`, sorted lexicographically, `w > 0`.
    fn from_sorted_pairs(n: usize, pairs: impl Iterator<Item = (usize, usize, f64)>) -> Self {
        let mut rows: Vec<Vec<(u32, f64)>> = vec![vec![]; n];
        for (i, j, w) in pairs {
            rows[i].push((j as u32, w));
            rows[j].push((i as u32, w));
        }
        let diag = rows.iter().map(|r| 1.0 - r.iter().map(|&(_, w)| w).sum::<f64>()).collect();
        WeightMatrix { n, rows, diag }
    }

    /// Builds `P` from symmetric off-diagonal weights given once per pair.
    pub fn from_pairs(n: usize, pairs: &[(usize, usize, f64)]) -> Result<Self> {
        let mut sorted = Vec::with_capacity(pairs.len());
        for &(i, j, w) in pairs {
            if i == j || i >= n || j >= n {
                return Err(Error::arg(format!("invalid pair ({i}, {j}) for n = {n}")));
            }
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::arg(format!("weight of ({i}, {j}) must be finite and >= 0")));
            }
            if w > 0.0 {
                sorted.push((i.min(j), i.max(j), w));
            }
        }
        sorted.sort_by_key(|a| (a.0, a.1));
        if sorted.windows(2).any(|w| (w[0].0, w[0].1) == (w[1].0, w[1].1)) {
            return Err(Error::arg("duplicate pair"));
        }
        Ok(Self::from_sorted_pairs(n, sorted.into_iter()))
    }

    /// Reads the upper triangle of a dense symmetric matrix; the diagonal is
    /// recomputed as the complement.
    pub fn from_dense(m: &RowMatrix) -> Result<Self> {
        let n = m.nrows();
        if m.ncols() != n {
            return Err(Error::arg("weight matrix must be square"));
        }
        let mut pairs = vec![];
        for i in 0..n {
            for j in i + 1..n {
                let (a, b) = (m.get(i, j), m.get(j, i));
                if (a - b).abs() > 1e-12 {
                    return Err(Error::NotSymmetric((a - b).abs()));
                }
                pairs.push((i, j, a));
            }
        }
        Self::from_pairs(n, &pairs)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Off-diagonal nonzeros of row `i`, sorted by column.
    pub fn row(&self, i: usize) -> &[(u32, f64)] {
        &self.rows[i]
    }

    pub fn diagonal(&self, i: usize) -> f64 {
        self.diag[i]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return self.diag[i];
        }
        match self.rows[i].binary_search_by_key(&(j as u32), |&(k, _)| k) {
            Ok(p) => self.rows[i][p].1,
            Err(_) => 0.0,
        }
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.diag[i] + self.rows[i].iter().map(|&(_, w)| w).sum::<f64>()
    }

    /// `max_i Σ_{j≠i} p_ij`
    pub fn max_weighted_degree(&self) -> f64 {
        self.rows.iter().map(|r| r.iter().map(|&(_, w)| w).sum::<f64>()).fold(0.0, f64::max)
    }

    /// Nonnegative entries, equivalently `Δ_n(t) ≤ 1`.
    pub fn is_stochastic(&self) -> bool {
        self.diag.iter().all(|&p| p >= 0.0)
    }

    pub fn nnz_off_diagonal(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn to_dense(&self) -> RowMatrix {
        let mut m = RowMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            m.row_mut(i)[i] = self.diag[i];
            for &(j, w) in &self.rows[i] {
                m.row_mut(i)[j as usize] = w;
            }
        }
        m
    }

    /// `V ↦ P V`, evaluated as `V_i + Σ_j p_ij (V_j − V_i)`.
    pub fn apply(&self, v: &RowMatrix) -> RowMatrix {
        let d = v.ncols();
        let mut out = v.clone();
        let mut acc = vec![0.0; d];
        for i in 0..self.n {
            acc.iter_mut().for_each(|a| *a = 0.0);
            let vi = v.row(i);
            for &(j, w) in &self.rows[i] {
                let vj = v.row(j as usize);
                for k in 0..d {
                    acc[k] += w * (vj[k] - vi[k]);
                }
            }
            for (o, a) in out.row_mut(i).iter_mut().zip(&acc) {
                *o += a;
            }
        }
        out
    }
}

/// `P(t)` for positions `x`; pairs at distance `≥` the kernel support get 0.
pub fn weight_matrix(x: &RowMatrix, kernel: &Kernel) -> WeightMatrix {
    let support = kernel.support();
    let s2 = support * support;
    let index = SpatialIndex::new(x, support);
    let mut pairs = vec![];
    let mut js = vec![];
    for i in 0..x.nrows() {
        js.clear();
        index.for_each_candidate(i, |j, d2| {
            if j > i && d2 < s2 {
                js.push(j);
            }
        });
        js.sort_unstable();
        pairs.extend(js.iter().map(|&j| (i, j)));
    }
    WeightMatrix::from_sorted_pairs(x.nrows(), weighted(x, kernel, pairs.into_iter()))
}

fn weighted<'a>(
    x: &'a RowMatrix,
    kernel: &'a Kernel,
    pairs: impl Iterator<Item = (usize, usize)> + 'a,
) -> impl Iterator<Item = (usize, usize, f64)> + 'a {
    pairs.filter_map(move |(i, j)| {
        let w = kernel.eval(dist2(x.row(i), x.row(j)).sqrt());
        (w > 0.0).then_some((i, j, w))
    })
}

/// `Δ_n(t) = max_i Σ_{j≠i} f(‖X_i(t) − X_j(t)‖)`. Pass a shifted kernel at
/// `t = 0` to obtain `Δ_{n,δ}`.
pub fn max_weighted_degree(x: &RowMatrix, kernel: &Kernel) -> f64 {
    weight_matrix(x, kernel).max_weighted_degree()
}

/// One step of the system.
pub fn step(state: &SwarmState, kernel: &Kernel) -> SwarmState {
    let p = weight_matrix(&state.x, kernel);
    advance(state, &p)
}

fn advance(state: &SwarmState, p: &WeightMatrix) -> SwarmState {
    let mut x = state.x.clone();
    for (xi, vi) in x.as_mut_slice().iter_mut().zip(state.v.as_slice()) {
        *xi += vi;
    }
    SwarmState { t: state.t + 1, x, v: p.apply(&state.v) }
}

/// `L(V) = ‖V − V̄‖_max (log(‖V − V̄‖_F / ‖V − V̄‖_max) + 1)`, and 0 when
/// `V = V̄`.
pub fn l_functional(v0: &RowMatrix) -> f64 {
    let dev = v0.centered();
    let m = dev.max_abs();
    if m == 0.0 {
        return 0.0;
    }
    m * ((dev.frobenius() / m).ln() + 1.0)
}

/// `sqrt(Σ_k (max_i v_ik − min_i v_ik)²)`
pub fn coordinate_spread(v: &RowMatrix) -> f64 {
    coordinate_ranges(v).iter().map(|r| r * r).sum::<f64>().sqrt()
}

fn coordinate_ranges(v: &RowMatrix) -> Vec<f64> {
    let d = v.ncols();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for r in v.iter_rows() {
        for k in 0..d {
            lo[k] = lo[k].min(r[k]);
            hi[k] = hi[k].max(r[k]);
        }
    }
    if v.nrows() == 0 {
        return vec![0.0; d];
    }
    lo.iter().zip(&hi).map(|(a, b)| b - a).collect()
}

/// `max_{i,j} ‖p_i − p_j‖`. Exact; planar sets go through the convex hull.
pub fn diameter(p: &RowMatrix) -> f64 {
    let n = p.nrows();
    if n < 2 {
        return 0.0;
    }
    if p.ncols() == 2 && n > 64 {
        let hull = convex_hull_2d(p);
        let mut best = 0.0f64;
        for a in 0..hull.len() {
            for b in a + 1..hull.len() {
                best = best.max(dist2(&hull[a], &hull[b]));
            }
        }
        return best.sqrt();
    }
    let mut best = 0.0f64;
    for i in 0..n {
        for j in i + 1..n {
            best = best.max(dist2(p.row(i), p.row(j)));
        }
    }
    best.sqrt()
}

/// Andrew's monotone chain; collinear points are dropped.
fn convex_hull_2d(p: &RowMatrix) -> Vec<[f64; 2]> {
    let mut pts: Vec<[f64; 2]> = p.iter_rows().map(|r| [r[0], r[1]]).collect();
    akl_toussaint(&mut pts);
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() <= 2 {
        return pts;
    }
    let cross =
        |o: &[f64; 2], a: &[f64; 2], b: &[f64; 2]| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &[f64; 2]>> =
            if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for q in iter {
            while hull.len() >= start + 2 && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], q) <= 0.0 {
                hull.pop();
            }
            hull.push(*q);
        }
        hull.pop();
    }
    hull
}

/// Drops points strictly inside the quadrilateral spanned by the extremes
/// of `x + y` and `x − y`; none of them can be a hull vertex.
fn akl_toussaint(pts: &mut Vec<[f64; 2]>) {
    if pts.len() < 16 {
        return;
    }
    let key = |q: &[f64; 2], k: usize| match k {
        0 => q[0] + q[1],
        1 => q[0] - q[1],
        2 => -q[0] - q[1],
        _ => q[1] - q[0],
    };
    // counter-clockwise order: max x−y, max x+y, max y−x, max −x−y
    let mut ext = [pts[0]; 4];
    for (slot, k) in [1usize, 0, 3, 2].into_iter().enumerate() {
        ext[slot] = *pts.iter().max_by(|a, b| key(a, k).total_cmp(&key(b, k))).unwrap();
    }
    let cross =
        |o: &[f64; 2], a: &[f64; 2], b: &[f64; 2]| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    let span = (key(&ext[1], 0) + key(&ext[3], 2)).max(key(&ext[0], 1) + key(&ext[2], 3));
    // margin keeps points within rounding of an edge
    let eps = 1e-9 * span * span;
    let inside = |q: &[f64; 2]| (0..4).all(|e| cross(&ext[e], &ext[(e + 1) % 4], q) > eps);
    pts.retain(|q| !inside(q));
}

/// `(a(t), max_pair)` where `a(t)` is the norm of the coordinatewise
/// velocity ranges and `max_pair = max_{i,j} ‖V_i − V_j‖`.
/// Always `max_pair ≤ a(t) ≤ √d · max_pair`.
pub fn velocity_spread(v: &RowMatrix) -> (f64, f64) {
    (coordinate_spread(v), diameter(v))
}

/// Positions (and velocities) at every recorded step.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub x: Vec<RowMatrix>,
    pub v: Vec<RowMatrix>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

/// `d_ij(t) = ‖X_i(t) − X_j(t) − X_i(0) + X_j(0)‖`
pub fn drift(traj: &Trajectory, i: usize, j: usize, t: usize) -> f64 {
    let (x0, xt) = (&traj.x[0], &traj.x[t]);
    let mut s = 0.0;
    for k in 0..x0.ncols() {
        let e = xt.get(i, k) - xt.get(j, k) - x0.get(i, k) + x0.get(j, k);
        s += e * e;
    }
    s.sqrt()
}

/// `max_{i,j,t} d_ij(t)` over the recorded steps.
pub fn max_drift(traj: &Trajectory) -> f64 {
    (0..traj.len()).map(|t| displacement_diameter(&traj.x[0], &traj.x[t])).fold(0.0, f64::max)
}

/// `max_{i,j} d_ij` at one time: the diameter of the displacement cloud.
fn displacement_diameter(x0: &RowMatrix, xt: &RowMatrix) -> f64 {
    let mut disp = xt.clone();
    for (a, b) in disp.as_mut_slice().iter_mut().zip(x0.as_slice()) {
        *a -= b;
    }
    diameter(&disp)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DriftMode {
    /// Exact `max_{i,j} d_ij(t)` at every step.
    Exact,
    /// Coordinatewise upper bound `sqrt(Σ_k range_k²)` of the displacements.
    Bound,
    Off,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StopReason {
    /// `max_pair(t)` fell below the tolerance.
    Flocked,
    /// A separating hyperplane with diverging groups was found.
    Separated,
    /// `t` reached `T_max`.
    Horizon,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub t_max: usize,
    /// Relative to `max_pair(0)`.
    pub flock_tol: f64,
    pub drift: DriftMode,
    /// Dense eigen-decomposition of every `P(t)`.
    pub spectral: bool,
    /// Steps between separation checks; 0 disables them.
    pub certificate_interval: usize,
    pub record_trajectory: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            t_max: 10_000,
            flock_tol: 1e-9,
            drift: DriftMode::Exact,
            spectral: false,
            certificate_interval: 10,
            record_trajectory: false,
        }
    }
}

/// A direction `u` and a split of the agents into `left` (low `u·x`) and
/// the rest such that the groups are more than `r` apart along `u` and
/// `u·v` is no larger on the left than on the right.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Separation {
    pub t: usize,
    pub direction: Vec<f64>,
    pub left: Vec<usize>,
    pub gap: f64,
    /// `‖mean_left(V) − mean_right(V)‖`, a lower bound on every later `max_pair`.
    pub mean_gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralSeries {
    pub steps: Vec<StepSpectrum>,
    /// `‖V(t) − V̄‖_F` per step.
    pub deviation: Vec<f64>,
    pub contraction: ContractionReport,
    /// Every eigenvalue inside `[1 − 2Δ_n(t), 1]`, up to `1e-10`.
    pub gershgorin_holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub n: usize,
    pub d: usize,
    pub flocked: bool,
    pub t_flock: Option<usize>,
    pub stop: StopReason,
    /// Last recorded `t`.
    pub steps: usize,
    /// Absolute threshold `flock_tol · max_pair(0)`.
    pub flock_threshold: f64,
    pub initial_max_pair: f64,
    pub final_max_pair: f64,
    /// `a(t)` per step.
    pub spread_series: Vec<f64>,
    pub max_pair_series: Vec<f64>,
    /// `Δ_n(t)` per step.
    pub delta_series: Vec<f64>,
    pub max_drift: Option<f64>,
    pub stochastic_throughout: bool,
    pub separation: Option<Separation>,
    pub spectral: Option<SpectralSeries>,
}

/// Verlet neighbor lists: candidate pairs within `r + skin`, rebuilt once
/// some agent has moved more than `skin / 2` since the last build. Weights
/// live in a flat array parallel to the sorted pair list, so row `i` sees
/// its entries in increasing column order, exactly as in [`WeightMatrix`].
struct NeighborCache {
    support: f64,
    skin: f64,
    anchor: RowMatrix,
    pairs: Vec<(u32, u32)>,
    w: Vec<f64>,
    degree: Vec<f64>,
}

impl NeighborCache {
    fn new(x: &RowMatrix, support: f64) -> Self {
        let mut c = NeighborCache {
            support,
            skin: 0.25 * support,
            anchor: x.clone(),
            pairs: vec![],
            w: vec![],
            degree: vec![0.0; x.nrows()],
        };
        c.rebuild(x);
        c
    }

    fn rebuild(&mut self, x: &RowMatrix) {
        let reach = self.support + self.skin;
        let r2 = reach * reach;
        let index = SpatialIndex::new(x, reach);
        self.pairs.clear();
        let mut js = vec![];
        for i in 0..x.nrows() {
            js.clear();
            index.for_each_candidate(i, |j, d2| {
                if j > i && d2 < r2 {
                    js.push(j as u32);
                }
            });
            js.sort_unstable();
            self.pairs.extend(js.iter().map(|&j| (i as u32, j)));
        }
        self.w.resize(self.pairs.len(), 0.0);
        self.anchor = x.clone();
    }

    /// Refreshes the weights for `x` and returns `Δ_n(t)`.
    fn update(&mut self, x: &RowMatrix, kernel: &Kernel) -> f64 {
        let limit = 0.25 * self.skin * self.skin;
        let moved = x.iter_rows().zip(self.anchor.iter_rows()).any(|(a, b)| dist2(a, b) > limit);
        if moved {
            self.rebuild(x);
        }
        self.degree.iter_mut().for_each(|g| *g = 0.0);
        let s2 = self.support * self.support;
        let (xs, d) = (x.as_slice(), x.ncols());
        for (w, &(i, j)) in self.w.iter_mut().zip(&self.pairs) {
            let (a, b) = (i as usize * d, j as usize * d);
            let d2 = dist2(&xs[a..a + d], &xs[b..b + d]);
            // same predicate as `weight_matrix`
            *w = if d2 < s2 { kernel.eval(d2.sqrt()) } else { 0.0 };
        }
        // pairs (k, i) with k < i precede every (i, j), so each row sum
        // accumulates in increasing column order as in `WeightMatrix::row_sum`
        // adding a zero weight leaves the positive partial sums unchanged
        for (&(i, j), &w) in self.pairs.iter().zip(&self.w) {
            self.degree[i as usize] += w;
            self.degree[j as usize] += w;
        }
        self.degree.iter().copied().fold(0.0, f64::max)
    }

    fn matrix(&self, n: usize) -> WeightMatrix {
        let it =
            self.pairs.iter().zip(&self.w).filter(|(_, &w)| w > 0.0).map(|(&(i, j), &w)| (i as usize, j as usize, w));
        WeightMatrix::from_sorted_pairs(n, it)
    }

    /// `X ↦ X + V`, `V ↦ P V` with the current weights.
    fn advance(&self, state: &SwarmState) -> SwarmState {
        let d = state.d();
        let mut x = state.x.clone();
        for (xi, vi) in x.as_mut_slice().iter_mut().zip(state.v.as_slice()) {
            *xi += vi;
        }
        let vs = state.v.as_slice();
        let mut acc = vec![0.0; vs.len()];
        for (&(i, j), &w) in self.pairs.iter().zip(&self.w) {
            let (a, b) = (i as usize * d, j as usize * d);
            for k in 0..d {
                let diff = vs[b + k] - vs[a + k];
                acc[a + k] += w * diff;
                acc[b + k] += w * -diff;
            }
        }
        let mut out = state.v.clone();
        for (o, a) in out.as_mut_slice().iter_mut().zip(&acc) {
            *o += a;
        }
        SwarmState { t: state.t + 1, x, v: out }
    }
}

fn candidate_directions(state: &SwarmState) -> Vec<Vec<f64>> {
    let d = state.d();
    let mut dirs: Vec<Vec<f64>> = (0..d)
        .map(|k| {
            let mut e = vec![0.0; d];
            e[k] = 1.0;
            e
        })
        .collect();
    let s = 1.0 / (d as f64).sqrt();
    dirs.push(vec![s; d]);
    let mean = state.v.mean_row();
    let far = state
        .v
        .iter_rows()
        .map(|r| dist2(r, &mean))
        .enumerate()
        .fold((0, -1.0), |best, (i, q)| if q > best.1 { (i, q) } else { best })
        .0;
    let u: Vec<f64> = state.v.row(far).iter().zip(&mean).map(|(a, b)| a - b).collect();
    let nu = norm(&u);
    if nu > 0.0 {
        dirs.push(u.iter().map(|a| a / nu).collect());
    }
    dirs
}

/// Looks for a split certifying that the two groups never interact again
/// while `P(t)` stays stochastic: along `u` the groups are more than
/// `support` apart and no left agent is faster along `u` than any right
/// agent. Requires `mean_gap > threshold`.
pub fn find_separation(state: &SwarmState, support: f64, threshold: f64) -> Option<Separation> {
    let n = state.n();
    if n < 2 {
        return None;
    }
    for u in candidate_directions(state) {
        let dot = |r: &[f64]| r.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>();
        let mut order: Vec<(f64, f64, usize)> = (0..n).map(|i| (dot(state.x.row(i)), dot(state.v.row(i)), i)).collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)));
        // suffix minima of u·v
        let mut suffix_min = vec![f64::INFINITY; n + 1];
        for k in (0..n).rev() {
            suffix_min[k] = suffix_min[k + 1].min(order[k].1);
        }
        let mut prefix_max = f64::NEG_INFINITY;
        for k in 0..n - 1 {
            prefix_max = prefix_max.max(order[k].1);
            let gap = order[k + 1].0 - order[k].0;
            if gap > support && prefix_max <= suffix_min[k + 1] {
                let left: Vec<usize> = order[..=k].iter().map(|e| e.2).collect();
                let mean_gap = group_mean_gap(&state.v, &left);
                if mean_gap > threshold {
                    let mut left = left;
                    left.sort_unstable();
                    return Some(Separation { t: state.t, direction: u, left, gap, mean_gap });
                }
            }
        }
    }
    None
}

fn group_mean_gap(v: &RowMatrix, left: &[usize]) -> f64 {
    let d = v.ncols();
    let n = v.nrows();
    let mut in_left = vec![false; n];
    left.iter().for_each(|&i| in_left[i] = true);
    let (mut ml, mut mr) = (vec![0.0; d], vec![0.0; d]);
    for i in 0..n {
        let m = if in_left[i] { &mut ml } else { &mut mr };
        for (a, b) in m.iter_mut().zip(v.row(i)) {
            *a += b;
        }
    }
    let (nl, nr) = (left.len() as f64, (n - left.len()) as f64);
    ml.iter().zip(&mr).map(|(a, b)| (a / nl - b / nr).powi(2)).sum::<f64>().sqrt()
}

/// Runs from `initial` until flocking, a certified separation, or `t_max`.
pub fn simulate(initial: SwarmState, kernel: &Kernel, opts: &SimOptions) -> Result<RunReport> {
    Ok(simulate_inner(initial, kernel, opts)?.0)
}

/// Like [`simulate`], also returning the trajectory when
/// `opts.record_trajectory` is set.
pub fn simulate_with_trajectory(
    initial: SwarmState,
    kernel: &Kernel,
    opts: &SimOptions,
) -> Result<(RunReport, Trajectory)> {
    simulate_inner(initial, kernel, opts)
}

fn simulate_inner(initial: SwarmState, kernel: &Kernel, opts: &SimOptions) -> Result<(RunReport, Trajectory)> {
    if kernel.shift() != 0.0 {
        return Err(Error::arg("the dynamics use the unshifted kernel"));
    }
    if !(opts.flock_tol > 0.0) {
        return Err(Error::arg("flock_tol must be positive"));
    }
    let (n, d) = (initial.n(), initial.d());
    let support = kernel.support();
    let x0 = initial.x.clone();
    let mut state = initial;
    let mut cache = NeighborCache::new(&state.x, support);
    let mut traj = Trajectory::default();

    let initial_max_pair = diameter(&state.v);
    let threshold = opts.flock_tol * initial_max_pair;
    let mut spread_series = vec![];
    let mut max_pair_series = vec![];
    let mut delta_series = vec![];
    let mut max_drift = match opts.drift {
        DriftMode::Off => None,
        _ => Some(0.0f64),
    };
    let mut spectral_steps = vec![];
    let mut deviation = vec![];
    let mut gershgorin_holds = true;
    let mut separation = None;

    let stop = loop {
        if opts.record_trajectory {
            traj.x.push(state.x.clone());
            traj.v.push(state.v.clone());
        }
        let a_t = coordinate_spread(&state.v);
        let max_pair = diameter(&state.v);
        spread_series.push(a_t);
        max_pair_series.push(max_pair);
        if let Some(m) = max_drift.as_mut() {
            let dd = match opts.drift {
                DriftMode::Exact => displacement_diameter(&x0, &state.x),
                _ => {
                    let mut disp = state.x.clone();
                    for (a, b) in disp.as_mut_slice().iter_mut().zip(x0.as_slice()) {
                        *a -= b;
                    }
                    coordinate_spread(&disp)
                }
            };
            *m = m.max(dd);
        }
        let delta = cache.update(&state.x, kernel);
        delta_series.push(delta);
        if opts.spectral {
            let s = spectral::step_spectrum(&cache.matrix(n), state.t)?;
            let lo = 1.0 - 2.0 * delta - 1e-10;
            if s.lambda_min < lo || s.lambda_max > 1.0 + 1e-10 {
                gershgorin_holds = false;
            }
            spectral_steps.push(s);
            deviation.push(state.v.centered().frobenius());
        }
        if initial_max_pair == 0.0 || max_pair < threshold {
            break StopReason::Flocked;
        }
        if state.t >= opts.t_max {
            break StopReason::Horizon;
        }
        if opts.certificate_interval > 0
            && state.t > 0
            && state.t.is_multiple_of(opts.certificate_interval)
            && delta <= 1.0
        {
            if let Some(s) = find_separation(&state, support, threshold) {
                separation = Some(s);
                break StopReason::Separated;
            }
        }
        state = cache.advance(&state);
    };

    let stochastic_throughout = delta_series.iter().all(|&x| x <= 1.0);
    let spectral = if opts.spectral {
        let stochastic: Vec<bool> = delta_series.iter().map(|&x| x <= 1.0).collect();
        let contraction = spectral::contraction_check(&deviation, &spectral_steps, &stochastic);
        Some(SpectralSeries { steps: spectral_steps, deviation, contraction, gershgorin_holds })
    } else {
        None
    };
    let flocked = stop == StopReason::Flocked;
    let report = RunReport {
        n,
        d,
        flocked,
        t_flock: flocked.then_some(state.t),
        stop,
        steps: state.t,
        flock_threshold: threshold,
        initial_max_pair,
        final_max_pair: *max_pair_series.last().unwrap_or(&0.0),
        spread_series,
        max_pair_series,
        delta_series,
        max_drift,
        stochastic_throughout,
        separation,
        spectral,
    };
    Ok((report, traj))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::sample_positions;
    use crate::rng;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn m(rows: &[&[f64]]) -> RowMatrix {
        RowMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn random_state(n: usize, d: usize, seed: u64) -> SwarmState {
        let x = sample_positions(n, d, seed).points;
        let mut g = rng::stream(seed ^ 0xabc);
        let v = RowMatrix::from_vec(n, d, (0..n * d).map(|_| g.random::<f64>() - 0.5).collect());
        SwarmState::new(x, v).unwrap()
    }

    #[test]
    fn far_apart_agents_do_not_interact() {
        let k = Kernel::triangular(0.3, 0.1).unwrap();
        let x = m(&[&[0.0, 0.0], &[0.5, 0.0], &[0.0, 0.5]]);
        let p = weight_matrix(&x, &k);
        assert_eq!(p.to_dense(), {
            let mut id = RowMatrix::zeros(3, 3);
            (0..3).for_each(|i| id.row_mut(i)[i] = 1.0);
            id
        });
        assert_eq!(p.max_weighted_degree(), 0.0);
    }

    #[test]
    fn two_agent_closed_form() {
        let mut g = rng::stream(7);
        for _ in 0..20 {
            let r = 0.2;
            let b = g.random_range(0.01..0.5);
            let dist = g.random_range(0.0..r);
            let k = Kernel::indicator(b, r).unwrap();
            let u = [g.random::<f64>(), g.random::<f64>()];
            let x = m(&[&[0.3, 0.3], &[0.3 + dist, 0.3]]);
            let v = m(&[&u, &[-u[0], -u[1]]]);
            let p = weight_matrix(&x, &k);
            assert_eq!(p.get(0, 1), b);
            assert_eq!(p.get(0, 0), 1.0 - b);
            let s = step(&SwarmState::new(x, v).unwrap(), &k);
            for c in 0..2 {
                assert_relative_eq!(s.v.get(0, c), (1.0 - 2.0 * b) * u[c], max_relative = 1e-14);
                assert_relative_eq!(s.v.get(1, c), -(1.0 - 2.0 * b) * u[c], max_relative = 1e-14);
            }
        }
    }

    #[test]
    fn common_velocity_translates() {
        let k = Kernel::triangular(0.2, 0.3).unwrap();
        let x = sample_positions(30, 2, 1).points;
        let v = RowMatrix::from_vec(30, 2, [0.01, -0.02].repeat(30));
        let s = step(&SwarmState::new(x.clone(), v.clone()).unwrap(), &k);
        assert_eq!(s.v, v);
        for i in 0..30 {
            assert_eq!(s.x.row(i), &[x.get(i, 0) + 0.01, x.get(i, 1) - 0.02]);
        }
    }

    #[test]
    fn row_sums_and_mean_conservation() {
        let k = Kernel::triangular(0.05, 0.25).unwrap();
        let mut s = random_state(80, 2, 3);
        for _ in 0..10 {
            let p = weight_matrix(&s.x, &k);
            for i in 0..80 {
                assert!((p.row_sum(i) - 1.0).abs() <= 1e-14);
                for &(j, w) in p.row(i) {
                    assert_eq!(p.get(j as usize, i), w);
                }
            }
            let before = s.v.mean_row();
            s = step(&s, &k);
            let after = s.v.mean_row();
            assert!(before.iter().zip(&after).all(|(a, b)| (a - b).abs() <= 1e-12));
        }
    }

    #[test]
    fn weighted_degree_is_complement_of_diagonal() {
        let k = Kernel::triangular(0.05, 0.2).unwrap();
        let x = sample_positions(100, 2, 9).points;
        let p = weight_matrix(&x, &k);
        let via_diag = (0..100).map(|i| 1.0 - p.diagonal(i)).fold(0.0, f64::max);
        assert!((p.max_weighted_degree() - via_diag).abs() <= 1e-14);
    }

    #[test]
    fn shifted_degree_dominates() {
        let k = Kernel::triangular(0.05, 0.1).unwrap();
        let x = sample_positions(200, 2, 4).points;
        let base = max_weighted_degree(&x, &k);
        let shifted = max_weighted_degree(&x, &k.shifted(0.3).unwrap());
        assert!(shifted >= base);
    }

    #[test]
    fn l_functional_cases() {
        assert_eq!(l_functional(&m(&[&[1.0, 2.0], &[1.0, 2.0]])), 0.0);
        // one deviating entry of size m: mean shifts, so build the deviation directly
        let v = m(&[&[1.5, 0.0], &[-1.5, 0.0]]);
        // deviations ±1.5 in one column: F = 1.5√2, max = 1.5
        assert_relative_eq!(l_functional(&v), 1.5 * (0.5 * 2f64.ln() + 1.0), max_relative = 1e-14);
        let (n, d, mm) = (6usize, 3usize, 0.7);
        let rows: Vec<Vec<f64>> = (0..n).map(|i| vec![if i % 2 == 0 { mm } else { -mm }; d]).collect();
        let v = RowMatrix::from_rows(&rows).unwrap();
        let want = mm * (0.5 * ((n * d) as f64).ln() + 1.0);
        assert_relative_eq!(l_functional(&v), want, max_relative = 1e-14);
    }

    #[test]
    fn spread_examples() {
        assert_eq!(velocity_spread(&m(&[&[0.3, 0.3], &[0.3, 0.3]])), (0.0, 0.0));
        let (a, p) = velocity_spread(&m(&[&[1.0, 0.0], &[0.0, 1.0]]));
        assert_relative_eq!(a, 2f64.sqrt());
        assert_relative_eq!(p, 2f64.sqrt());
        let (a, p) = velocity_spread(&m(&[&[1.0, 0.0], &[-1.0, 0.0], &[0.0, 1.0]]));
        assert_relative_eq!(a, 5f64.sqrt());
        assert_relative_eq!(p, 2.0);
    }

    #[test]
    fn hull_diameter_matches_brute_force() {
        for seed in 0..30 {
            let v = random_state(300, 2, seed).v;
            let mut best = 0.0f64;
            for i in 0..300 {
                for j in 0..300 {
                    best = best.max(dist2(v.row(i), v.row(j)));
                }
            }
            assert_eq!(diameter(&v), best.sqrt());
        }
        // many near-extreme points on a circle
        let ring: Vec<Vec<f64>> = (0..400)
            .map(|i| {
                let a = i as f64 * 0.7;
                let rad = if i % 3 == 0 { 1.0 } else { 0.999 };
                vec![rad * a.cos(), rad * a.sin()]
            })
            .collect();
        let v = RowMatrix::from_rows(&ring).unwrap();
        let best = (0..400)
            .flat_map(|i| (0..400).map(move |j| (i, j)))
            .map(|(i, j)| dist2(v.row(i), v.row(j)))
            .fold(0.0, f64::max);
        assert_eq!(diameter(&v), best.sqrt());
        // collinear and duplicate points
        let rows: Vec<Vec<f64>> = (0..100).map(|i| vec![(i % 10) as f64, 2.0 * (i % 10) as f64]).collect();
        let v = RowMatrix::from_rows(&rows).unwrap();
        assert_relative_eq!(diameter(&v), 9.0 * 5f64.sqrt(), max_relative = 1e-15);
    }

    #[test]
    fn drift_cases() {
        let k = Kernel::triangular(0.1, 0.05).unwrap();
        let x = m(&[&[0.1, 0.1], &[0.9, 0.9]]);
        let v = m(&[&[0.01, 0.0], &[-0.02, 0.04]]);
        let opts = SimOptions { t_max: 5, record_trajectory: true, certificate_interval: 0, ..Default::default() };
        let (rep, traj) = simulate_with_trajectory(SwarmState::new(x, v).unwrap(), &k, &opts).unwrap();
        assert_eq!(traj.len(), 6);
        assert_eq!(drift(&traj, 0, 1, 0), 0.0);
        let u = (0.03f64 * 0.03 + 0.04 * 0.04).sqrt();
        for t in 0..=5 {
            assert_relative_eq!(drift(&traj, 0, 1, t), t as f64 * u, max_relative = 1e-12);
        }
        assert_relative_eq!(max_drift(&traj), 5.0 * u, max_relative = 1e-12);
        assert_relative_eq!(rep.max_drift.unwrap(), 5.0 * u, max_relative = 1e-12);
    }

    #[test]
    fn consensus_flocks_at_zero() {
        let k = Kernel::triangular(0.1, 0.2).unwrap();
        let x = sample_positions(10, 2, 2).points;
        let v = RowMatrix::from_vec(10, 2, [0.5, 0.5].repeat(10));
        let rep = simulate(SwarmState::new(x, v).unwrap(), &k, &SimOptions::default()).unwrap();
        assert!(rep.flocked);
        assert_eq!(rep.t_flock, Some(0));
    }

    #[test]
    fn cached_neighbors_match_fresh_steps() {
        let k = Kernel::triangular(0.04, 0.2).unwrap();
        let mut s = random_state(60, 2, 5);
        s.v.as_mut_slice().iter_mut().for_each(|x| *x *= 0.05);
        let opts = SimOptions { t_max: 40, record_trajectory: true, certificate_interval: 0, ..Default::default() };
        let (rep, traj) = simulate_with_trajectory(s.clone(), &k, &opts).unwrap();
        let mut fresh = s;
        for t in 0..traj.len() {
            assert_eq!(fresh.x, traj.x[t]);
            assert_eq!(fresh.v, traj.v[t]);
            assert_eq!(rep.delta_series[t], max_weighted_degree(&fresh.x, &k));
            fresh = step(&fresh, &k);
        }
    }

    #[test]
    fn spread_non_increasing_when_stochastic() {
        let k = Kernel::triangular(0.03, 0.2).unwrap();
        let s = random_state(100, 2, 11);
        let opts = SimOptions { t_max: 200, certificate_interval: 0, ..Default::default() };
        let rep = simulate(s, &k, &opts).unwrap();
        assert!(rep.stochastic_throughout);
        for w in rep.spread_series.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
    }

    #[test]
    fn opposite_groups_separate() {
        let k = Kernel::triangular(0.1, 0.1).unwrap();
        let x = m(&[&[0.40, 0.5], &[0.45, 0.5], &[0.55, 0.5], &[0.60, 0.5]]);
        let v = m(&[&[-0.2, 0.0], &[-0.2, 0.0], &[0.2, 0.0], &[0.2, 0.0]]);
        let rep = simulate(SwarmState::new(x, v).unwrap(), &k, &SimOptions::default()).unwrap();
        assert_eq!(rep.stop, StopReason::Separated);
        assert!(!rep.flocked);
        let sep = rep.separation.unwrap();
        assert_eq!(sep.left, vec![0, 1]);
        assert!(sep.gap > 0.1);
    }
}
