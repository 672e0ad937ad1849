//! Initial positions, the random geometric graph `G(X_n; r)`, connectivity
//! thresholds and their Monte Carlo estimates.

use std::collections::HashMap;
use std::f64::consts::PI;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{dist2, RowMatrix};
use crate::rng;
use crate::union_find::UnionFind;

/// Volume `π_d` of the unit ball in `R^d`.
pub fn unit_ball_volume(d: usize) -> f64 {
    assert!(d >= 1, "dimension must be at least 1");
    // π_d = π_{d-2} · 2π/d with π_0 = 1, π_1 = 2
    let mut v = if d.is_multiple_of(2) { 1.0 } else { 2.0 };
    let mut k = if d.is_multiple_of(2) { 2 } else { 3 };
    while k <= d {
        v *= 2.0 * PI / k as f64;
        k += 2;
    }
    v
}

/// Connectivity threshold on `α = n r^d / log n`: `2^{d-1} / (d π_d)`.
pub fn critical_alpha(d: usize) -> f64 {
    2f64.powi(d as i32 - 1) / (d as f64 * unit_ball_volume(d))
}

/// `R_c = (2^{d-1} log n / (d π_d n))^{1/d}`.
pub fn critical_radius(n: usize, d: usize) -> f64 {
    radius_for_alpha(n, d, critical_alpha(d))
}

/// Radius with `n r^d / log n = α`.
pub fn radius_for_alpha(n: usize, d: usize, alpha: f64) -> f64 {
    let n = n as f64;
    (alpha * n.ln() / n).powf(1.0 / d as f64)
}

/// `α = n r^d / log n` of a concrete radius.
pub fn alpha_for_radius(n: usize, d: usize, radius: f64) -> f64 {
    let nf = n as f64;
    nf * radius.powi(d as i32) / nf.ln()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositionSample {
    pub n: usize,
    pub d: usize,
    pub seed: u64,
    pub points: RowMatrix,
}

/// `n` points i.i.d. uniform in `[0,1]^d`, reproducible from `seed`.
pub fn sample_positions(n: usize, d: usize, seed: u64) -> PositionSample {
    let mut r = rng::stream(seed);
    let data: Vec<f64> = (0..n * d).map(|_| r.random::<f64>()).collect();
    PositionSample { n, d, seed, points: RowMatrix::from_vec(n, d, data) }
}

enum Layout {
    /// Every pair is a candidate.
    All,
    /// Cells numbered row-major over the bounding box, CSR storage.
    Dense {
        dims: Vec<i64>,
        start: Vec<u32>,
        items: Vec<u32>,
    },
    Sparse(HashMap<Vec<i64>, Vec<u32>>),
}

/// Uniform-grid index over a point set. Queries return candidates in the
/// `3^d` cells around a point; the cell side bounds the usable query radius.
pub struct SpatialIndex<'a> {
    points: &'a RowMatrix,
    cell: f64,
    origin: Vec<f64>,
    offsets: Vec<Vec<i64>>,
    layout: Layout,
}

impl<'a> SpatialIndex<'a> {
    pub fn new(points: &'a RowMatrix, cell: f64) -> Self {
        let (n, d) = (points.nrows(), points.ncols());
        let brute = !(cell > 0.0 && cell.is_finite()) || d > 12 || 3usize.pow(d as u32) >= n;
        let mut origin = vec![f64::INFINITY; d];
        let mut upper = vec![f64::NEG_INFINITY; d];
        for p in points.iter_rows() {
            for k in 0..d {
                origin[k] = origin[k].min(p[k]);
                upper[k] = upper[k].max(p[k]);
            }
        }
        if brute || n == 0 {
            return SpatialIndex { points, cell, origin, offsets: vec![], layout: Layout::All };
        }
        let mut offsets = vec![vec![]];
        for _ in 0..d {
            offsets = offsets
                .into_iter()
                .flat_map(|o: Vec<i64>| {
                    (-1..=1).map(move |s| {
                        let mut o = o.clone();
                        o.push(s);
                        o
                    })
                })
                .collect();
        }
        let mut index = SpatialIndex { points, cell, origin, offsets, layout: Layout::All };
        let dims: Vec<f64> = (0..d).map(|k| ((upper[k] - index.origin[k]) / cell).floor() + 1.0).collect();
        let total: f64 = dims.iter().product();
        if total <= (4 * n).max(64) as f64 {
            let dims: Vec<i64> = dims.iter().map(|&x| x as i64).collect();
            let ncell = total as usize;
            let mut count = vec![0u32; ncell + 1];
            let lin: Vec<usize> = (0..n)
                .map(|i| {
                    let c = index.cell_of(points.row(i));
                    linear(&c, &dims).expect("point inside bounding box")
                })
                .collect();
            for &l in &lin {
                count[l + 1] += 1;
            }
            for c in 0..ncell {
                count[c + 1] += count[c];
            }
            let mut fill = count.clone();
            let mut items = vec![0u32; n];
            for (i, &l) in lin.iter().enumerate() {
                items[fill[l] as usize] = i as u32;
                fill[l] += 1;
            }
            index.layout = Layout::Dense { dims, start: count, items };
        } else {
            let mut map: HashMap<Vec<i64>, Vec<u32>> = HashMap::new();
            for i in 0..n {
                map.entry(index.cell_of(points.row(i))).or_default().push(i as u32);
            }
            index.layout = Layout::Sparse(map);
        }
        index
    }

    fn cell_of(&self, p: &[f64]) -> Vec<i64> {
        p.iter().zip(&self.origin).map(|(x, o)| ((x - o) / self.cell).floor() as i64).collect()
    }

    /// Calls `f(j, squared_distance)` for every `j != i` that may lie within
    /// one cell side of point `i`, in a deterministic order.
    #[inline]
    pub fn for_each_candidate<F: FnMut(usize, f64)>(&self, i: usize, mut f: F) {
        let p = self.points.row(i);
        match &self.layout {
            Layout::All => {
                for j in 0..self.points.nrows() {
                    if j != i {
                        f(j, dist2(p, self.points.row(j)));
                    }
                }
            }
            Layout::Dense { dims, start, items } => {
                let c = self.cell_of(p);
                let mut nb = vec![0i64; c.len()];
                for off in &self.offsets {
                    for k in 0..c.len() {
                        nb[k] = c[k] + off[k];
                    }
                    if let Some(l) = linear(&nb, dims) {
                        for &j in &items[start[l] as usize..start[l + 1] as usize] {
                            let j = j as usize;
                            if j != i {
                                f(j, dist2(p, self.points.row(j)));
                            }
                        }
                    }
                }
            }
            Layout::Sparse(map) => {
                let c = self.cell_of(p);
                let mut nb = vec![0i64; c.len()];
                for off in &self.offsets {
                    for k in 0..c.len() {
                        nb[k] = c[k] + off[k];
                    }
                    if let Some(v) = map.get(&nb) {
                        for &j in v {
                            let j = j as usize;
                            if j != i {
                                f(j, dist2(p, self.points.row(j)));
                            }
                        }
                    }
                }
            }
        }
    }
}

#[inline]
fn linear(c: &[i64], dims: &[i64]) -> Option<usize> {
    let mut l = 0i64;
    for (&x, &m) in c.iter().zip(dims) {
        if x < 0 || x >= m {
            return None;
        }
        l = l * m + x;
    }
    Some(l as usize)
}

/// Undirected graph joining points at Euclidean distance `<= radius`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeighborGraph {
    pub n: usize,
    pub radius: f64,
    /// Sorted neighbor lists.
    pub adjacency: Vec<Vec<usize>>,
}

impl NeighborGraph {
    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn is_connected(&self) -> bool {
        self.component_labels().1 <= 1
    }

    /// Component label per vertex and the number of components.
    pub fn component_labels(&self) -> (Vec<usize>, usize) {
        let mut uf = UnionFind::new(self.n);
        for (i, nb) in self.adjacency.iter().enumerate() {
            for &j in nb {
                if j > i {
                    uf.union(i, j);
                }
            }
        }
        let k = uf.components();
        (uf.labels(), k)
    }

    /// Vertex sets of the components, ordered by smallest member.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let (labels, k) = self.component_labels();
        let mut out = vec![vec![]; k];
        for (i, &l) in labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }
}

pub fn build_graph(points: &RowMatrix, radius: f64) -> Result<NeighborGraph> {
    if !(radius > 0.0) {
        return Err(Error::arg(format!("radius must be positive, got {radius}")));
    }
    let n = points.nrows();
    let index = SpatialIndex::new(points, radius);
    let r2 = radius * radius;
    let adjacency = (0..n)
        .map(|i| {
            let mut nb = vec![];
            index.for_each_candidate(i, |j, d2| {
                if d2 <= r2 {
                    nb.push(j);
                }
            });
            nb.sort_unstable();
            nb
        })
        .collect();
    Ok(NeighborGraph { n, radius, adjacency })
}

/// Connectivity of `G(points; radius)` without materializing adjacency.
pub fn is_connected_at(points: &RowMatrix, radius: f64) -> bool {
    let n = points.nrows();
    if n <= 1 {
        return true;
    }
    let index = SpatialIndex::new(points, radius);
    let r2 = radius * radius;
    let mut uf = UnionFind::new(n);
    for i in 0..n {
        index.for_each_candidate(i, |j, d2| {
            if j > i && d2 <= r2 {
                uf.union(i, j);
            }
        });
        if uf.components() == 1 {
            return true;
        }
    }
    uf.components() == 1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConnectivityEstimate {
    pub n: usize,
    pub d: usize,
    pub alpha: f64,
    pub radius: f64,
    pub trials: usize,
    pub connected_count: usize,
    pub frequency: f64,
}

/// Fraction of `trials` independent samples whose graph at
/// `r = (α log n / n)^{1/d}` is connected. Trial `k` uses the seed
/// `derive_seed(seed, [k])`.
pub fn connectivity_probability(
    n: usize,
    d: usize,
    alpha: f64,
    trials: usize,
    seed: u64,
) -> Result<ConnectivityEstimate> {
    if !(alpha > 0.0) {
        return Err(Error::arg("alpha must be positive"));
    }
    connectivity_at_radius(n, d, radius_for_alpha(n, d, alpha), trials, seed)
}

pub fn connectivity_at_radius(
    n: usize,
    d: usize,
    radius: f64,
    trials: usize,
    seed: u64,
) -> Result<ConnectivityEstimate> {
    if trials == 0 {
        return Err(Error::arg("trials must be at least 1"));
    }
    if n < 2 || d < 1 {
        return Err(Error::arg("need n >= 2 and d >= 1"));
    }
    let hits: Vec<bool> = (0..trials)
        .into_par_iter()
        .map(|k| {
            let s = sample_positions(n, d, rng::derive_seed(seed, &[k as u64]));
            is_connected_at(&s.points, radius)
        })
        .collect();
    let connected_count = hits.iter().filter(|&&h| h).count();
    Ok(ConnectivityEstimate {
        n,
        d,
        alpha: alpha_for_radius(n, d, radius),
        radius,
        trials,
        connected_count,
        frequency: connected_count as f64 / trials as f64,
    })
}
