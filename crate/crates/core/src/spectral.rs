//! Spectra of `P(t)`, the contraction inequality and Cheeger constants.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::dynamics::WeightMatrix;
use crate::error::{Error, Result};
use crate::matrix::RowMatrix;
use crate::union_find::UnionFind;

/// Largest `n` accepted by [`cheeger_exact`].
pub const EXACT_CHEEGER_MAX_N: usize = 22;
const SYMMETRY_TOL: f64 = 1e-12;
/// Relative slack of the contraction inequality.
pub const CONTRACTION_SLACK: f64 = 1e-9;
/// Additive slack of the Cheeger inequality.
pub const CHEEGER_SLACK: f64 = 1e-9;

fn to_nalgebra(m: &RowMatrix) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::arg(format!("matrix is {}x{}, not square", n, m.ncols())));
    }
    let mut asym = 0.0f64;
    for i in 0..n {
        for j in i + 1..n {
            asym = asym.max((m.get(i, j) - m.get(j, i)).abs());
        }
    }
    if asym > SYMMETRY_TOL {
        return Err(Error::NotSymmetric(asym));
    }
    Ok(DMatrix::from_row_slice(n, n, m.as_slice()))
}

fn sorted_desc(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx
}

/// All eigenvalues of a symmetric matrix, descending.
pub fn eigen_symmetric_dense(m: &RowMatrix) -> Result<Vec<f64>> {
    let a = to_nalgebra(m)?;
    let vals: Vec<f64> = a.symmetric_eigenvalues().iter().copied().collect();
    Ok(sorted_desc(&vals).into_iter().map(|i| vals[i]).collect())
}

/// All eigenvalues of `P`, descending.
pub fn eigen_symmetric(p: &WeightMatrix) -> Result<Vec<f64>> {
    eigen_symmetric_dense(&p.to_dense())
}

/// Eigenvalues (descending) and matching unit eigenvectors, one per row.
pub fn eigen_pairs_dense(m: &RowMatrix) -> Result<(Vec<f64>, RowMatrix)> {
    let a = to_nalgebra(m)?;
    let n = a.nrows();
    let e = SymmetricEigen::new(a);
    let vals: Vec<f64> = e.eigenvalues.iter().copied().collect();
    let order = sorted_desc(&vals);
    let mut vecs = RowMatrix::zeros(n, n);
    for (row, &k) in order.iter().enumerate() {
        for i in 0..n {
            vecs.row_mut(row)[i] = e.eigenvectors[(i, k)];
        }
    }
    Ok((order.iter().map(|&k| vals[k]).collect(), vecs))
}

/// Summary of the spectrum of one `P(t)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepSpectrum {
    pub t: usize,
    pub lambda_max: f64,
    pub lambda2: f64,
    pub lambda_min: f64,
    /// `max(|λ_2|, |λ_n|)`
    pub lambda_bar: f64,
    pub stochastic: bool,
}

pub fn step_spectrum(p: &WeightMatrix, t: usize) -> Result<StepSpectrum> {
    let ev = eigen_symmetric(p)?;
    let n = ev.len();
    let (lambda2, lambda_min) = if n >= 2 { (ev[1], ev[n - 1]) } else { (f64::NAN, ev[0]) };
    Ok(StepSpectrum {
        t,
        lambda_max: ev[0],
        lambda2,
        lambda_min,
        lambda_bar: if n >= 2 { lambda2.abs().max(lambda_min.abs()) } else { 0.0 },
        stochastic: p.is_stochastic(),
    })
}

/// `λ̄ = max(|λ_2|, |λ_n|)` with a flag telling whether `P` is stochastic
/// (the value is meaningful as a contraction factor only then).
pub fn essential_spectral_radius(p: &WeightMatrix) -> Result<(f64, bool)> {
    let s = step_spectrum(p, 0)?;
    Ok((s.lambda_bar, s.stochastic))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractionReport {
    pub holds: bool,
    /// `min_k (bound_k − lhs_k) / ‖V(0) − V̄‖_F`; nonnegative when the
    /// inequality holds without slack.
    pub worst_margin: f64,
    /// Steps covered: those preceded only by stochastic `P(i)`.
    pub checked_steps: usize,
    pub margins: Vec<f64>,
}

/// Checks `‖V(k) − V̄‖_F ≤ ‖V(0) − V̄‖_F Π_{i<k} λ̄(i)` with relative slack
/// [`CONTRACTION_SLACK`], up to the first non-stochastic `P(i)`.
pub fn contraction_check(deviation: &[f64], spectra: &[StepSpectrum], stochastic: &[bool]) -> ContractionReport {
    let dev0 = deviation.first().copied().unwrap_or(0.0);
    let mut bound = dev0;
    let mut holds = true;
    let mut worst = f64::INFINITY;
    let mut margins = vec![];
    for k in 0..deviation.len() {
        if k > 0 {
            if !stochastic[k - 1] {
                break;
            }
            bound *= spectra[k - 1].lambda_bar;
        }
        let margin = if dev0 > 0.0 { (bound - deviation[k]) / dev0 } else { 0.0 };
        if deviation[k] > bound * (1.0 + CONTRACTION_SLACK) + dev0 * f64::EPSILON {
            holds = false;
        }
        worst = worst.min(margin);
        margins.push(margin);
    }
    ContractionReport {
        holds,
        worst_margin: if margins.is_empty() { 0.0 } else { worst },
        checked_steps: margins.len(),
        margins,
    }
}

fn off_diagonal_dense(p: &WeightMatrix) -> Vec<Vec<f64>> {
    let n = p.n();
    let mut w = vec![vec![0.0; n]; n];
    for (i, wi) in w.iter_mut().enumerate() {
        for &(j, x) in p.row(i) {
            wi[j as usize] = x;
        }
    }
    w
}

/// `min_{0<|F|≤n/2} (1/|F|) Σ_{i∈F, j∉F} p_ij` by enumerating all subsets
/// in Gray-code order.
pub fn cheeger_exact(p: &WeightMatrix) -> Result<f64> {
    let n = p.n();
    if n > EXACT_CHEEGER_MAX_N {
        return Err(Error::TooLarge(format!(
            "exact Cheeger enumeration is limited to n <= {EXACT_CHEEGER_MAX_N} (got {n}); use cheeger_sweep"
        )));
    }
    if n < 2 {
        return Err(Error::arg("Cheeger constant needs n >= 2"));
    }
    let w = off_diagonal_dense(p);
    let deg: Vec<f64> = w.iter().map(|r| r.iter().sum()).collect();
    // into[v] = Σ_{i∈F} w_vi
    let mut into = vec![0.0; n];
    let mut member = vec![false; n];
    let mut size = 0usize;
    let mut cut = 0.0f64;
    let mut best = f64::INFINITY;
    for g in 1u64..(1u64 << n) {
        let v = g.trailing_zeros() as usize;
        if member[v] {
            cut -= deg[v] - 2.0 * into[v];
            member[v] = false;
            size -= 1;
            for (u, iu) in into.iter_mut().enumerate() {
                *iu -= w[u][v];
            }
        } else {
            cut += deg[v] - 2.0 * into[v];
            member[v] = true;
            size += 1;
            for (u, iu) in into.iter_mut().enumerate() {
                *iu += w[u][v];
            }
        }
        if size > 0 && 2 * size <= n {
            best = best.min(cut.max(0.0) / size as f64);
        }
    }
    Ok(best)
}

fn is_weight_connected(p: &WeightMatrix) -> bool {
    let mut uf = UnionFind::new(p.n());
    for i in 0..p.n() {
        for &(j, _) in p.row(i) {
            uf.union(i, j as usize);
        }
    }
    uf.components() <= 1
}

/// Best ratio `cut(S)/min(|S|, n−|S|)` over the prefixes of the vertex order
/// given by the eigenvector of `λ_2`. An upper bound on the exact minimum;
/// 0 when the positive-weight graph is disconnected.
pub fn cheeger_sweep(p: &WeightMatrix) -> Result<f64> {
    let n = p.n();
    if n < 2 {
        return Err(Error::arg("Cheeger constant needs n >= 2"));
    }
    if !is_weight_connected(p) {
        return Ok(0.0);
    }
    let (_, vecs) = eigen_pairs_dense(&p.to_dense())?;
    let fiedler = vecs.row(1);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| fiedler[a].total_cmp(&fiedler[b]).then(a.cmp(&b)));
    let mut member = vec![false; n];
    let mut cut = 0.0f64;
    let mut best = f64::INFINITY;
    for (k, &v) in order.iter().enumerate().take(n - 1) {
        let mut to_in = 0.0;
        let mut deg = 0.0;
        for &(j, x) in p.row(v) {
            deg += x;
            if member[j as usize] {
                to_in += x;
            }
        }
        cut += deg - 2.0 * to_in;
        member[v] = true;
        let size = (k + 1).min(n - k - 1);
        best = best.min(cut.max(0.0) / size as f64);
    }
    Ok(best)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheegerCheck {
    pub lambda2: f64,
    pub phi: f64,
    /// `λ_2 ≤ 1 − Φ² + 1e-9`
    pub holds: bool,
}

/// Compares `λ_2` with `1 − Φ²` using the exact Cheeger constant.
pub fn cheeger_inequality_check(p: &WeightMatrix) -> Result<CheegerCheck> {
    let phi = cheeger_exact(p)?;
    let lambda2 = eigen_symmetric(p)?[1];
    Ok(CheegerCheck { lambda2, phi, holds: lambda2 <= 1.0 - phi * phi + CHEEGER_SLACK })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    /// Descending.
    pub eigenvalues: Vec<f64>,
    pub lambda_bar: f64,
    pub stochastic: bool,
    pub phi_exact: Option<f64>,
    /// Upper bound on the minimum cut ratio.
    pub phi_sweep: f64,
    pub cheeger_holds: Option<bool>,
}

pub fn spectral_report(p: &WeightMatrix) -> Result<SpectralReport> {
    let eigenvalues = eigen_symmetric(p)?;
    let n = eigenvalues.len();
    let lambda_bar = if n >= 2 { eigenvalues[1].abs().max(eigenvalues[n - 1].abs()) } else { 0.0 };
    let phi_sweep = if n >= 2 { cheeger_sweep(p)? } else { 0.0 };
    let phi_exact = if (2..=EXACT_CHEEGER_MAX_N).contains(&n) { Some(cheeger_exact(p)?) } else { None };
    let stochastic = p.is_stochastic();
    let cheeger_holds = match phi_exact {
        Some(phi) if stochastic => Some(eigenvalues[1] <= 1.0 - phi * phi + CHEEGER_SLACK),
        _ => None,
    };
    Ok(SpectralReport { eigenvalues, lambda_bar, stochastic, phi_exact, phi_sweep, cheeger_holds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::weight_matrix;
    use crate::geometry::sample_positions;
    use crate::kernel::Kernel;
    use approx::assert_relative_eq;

    fn two_agent(f: f64) -> WeightMatrix {
        let k = Kernel::indicator(f, 0.5).unwrap();
        let x = RowMatrix::from_rows(&[vec![0.1, 0.1], vec![0.2, 0.1]]).unwrap();
        weight_matrix(&x, &k)
    }

    #[test]
    fn identity_spectrum() {
        let k = Kernel::indicator(0.1, 0.01).unwrap();
        let x = RowMatrix::from_rows(&[vec![0.0, 0.0], vec![0.5, 0.0], vec![0.0, 0.5]]).unwrap();
        let p = weight_matrix(&x, &k);
        assert_eq!(eigen_symmetric(&p).unwrap(), vec![1.0; 3]);
        assert_eq!(essential_spectral_radius(&p).unwrap(), (1.0, true));
        assert_eq!(cheeger_exact(&p).unwrap(), 0.0);
        assert_eq!(cheeger_sweep(&p).unwrap(), 0.0);
        let c = cheeger_inequality_check(&p).unwrap();
        assert!(c.holds);
    }

    #[test]
    fn two_agent_closed_forms() {
        for &f in &[0.05, 0.25, 0.5] {
            let p = two_agent(f);
            let ev = eigen_symmetric(&p).unwrap();
            assert_relative_eq!(ev[0], 1.0, max_relative = 1e-14);
            assert_relative_eq!(ev[1], 1.0 - 2.0 * f, epsilon = 1e-14);
            assert_relative_eq!(cheeger_exact(&p).unwrap(), f, max_relative = 1e-14);
            assert!(cheeger_inequality_check(&p).unwrap().holds);
        }
        assert_relative_eq!(essential_spectral_radius(&two_agent(0.25)).unwrap().0, 0.5, epsilon = 1e-14);
    }

    #[test]
    fn uniform_complete_graph() {
        let k = Kernel::indicator(0.25, 2.0).unwrap();
        let x = sample_positions(4, 2, 1).points;
        let p = weight_matrix(&x, &k);
        let ev = eigen_symmetric(&p).unwrap();
        assert_relative_eq!(ev[0], 1.0, max_relative = 1e-14);
        assert!(essential_spectral_radius(&p).unwrap().0 < 1e-14);
    }

    #[test]
    fn path_cheeger() {
        let k = Kernel::triangular(0.5, 0.3).unwrap();
        // distances 0.2 and 0.1: weights 0.5/3 and 1/3
        let x = RowMatrix::from_rows(&[vec![0.0, 0.0], vec![0.2, 0.0], vec![0.3, 0.0]]).unwrap();
        let p = weight_matrix(&x, &k);
        let w1 = p.get(0, 1);
        assert!(w1 < p.get(1, 2));
        assert_relative_eq!(cheeger_exact(&p).unwrap(), w1, max_relative = 1e-14);
    }

    #[test]
    fn asymmetric_rejected() {
        let m = RowMatrix::from_rows(&[vec![1.0, 0.5], vec![0.4, 1.0]]).unwrap();
        assert!(matches!(eigen_symmetric_dense(&m), Err(Error::NotSymmetric(_))));
    }

    #[test]
    fn exact_cheeger_size_limit() {
        let k = Kernel::triangular(0.01, 0.2).unwrap();
        let p = weight_matrix(&sample_positions(23, 2, 1).points, &k);
        assert!(matches!(cheeger_exact(&p), Err(Error::TooLarge(_))));
    }

    #[test]
    fn eigenpairs_reconstruct() {
        let k = Kernel::triangular(0.05, 0.3).unwrap();
        let p = weight_matrix(&sample_positions(40, 2, 8).points, &k);
        let dense = p.to_dense();
        let (vals, vecs) = eigen_pairs_dense(&dense).unwrap();
        for (k, &lam) in vals.iter().enumerate() {
            let v = vecs.row(k);
            let mut res = 0.0f64;
            for i in 0..40 {
                let pv: f64 = (0..40).map(|j| dense.get(i, j) * v[j]).sum();
                res += (pv - lam * v[i]).powi(2);
            }
            assert!(res.sqrt() <= 1e-8);
        }
    }

    #[test]
    fn two_clusters_weak_link() {
        // two cliques of size m joined by one weak edge
        let m = 5;
        let n = 2 * m;
        let (strong, weak) = (0.08, 0.001);
        let mut pairs = vec![];
        for i in 0..n {
            for j in i + 1..n {
                let w = if (i < m) == (j < m) {
                    strong
                } else if i == m - 1 && j == m {
                    weak
                } else {
                    continue;
                };
                pairs.push((i, j, w));
            }
        }
        let p = WeightMatrix::from_pairs(n, &pairs).unwrap();
        let sweep = cheeger_sweep(&p).unwrap();
        assert_relative_eq!(sweep, weak / m as f64, max_relative = 1e-10);
        assert_relative_eq!(cheeger_exact(&p).unwrap(), sweep, max_relative = 1e-10);
    }
}
