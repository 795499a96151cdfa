//! Cluster-robust sandwich covariance, one- and two-way.
//!
//! One-way: `c · B (Σ_g s_g s_gᵀ) B` with bread `B = (XᵀX)⁻¹`, cluster score
//! `s_g = Σ_{i∈g} x_i u_i` and small-sample factor
//! `c = G/(G−1) · (N−1)/(N−K)`.
//!
//! Two-way: `V_a + V_b − V_ab`, where `V_ab` clusters on the intersection of
//! the two label sets and every term carries its own factor. The difference
//! need not be positive semidefinite; negative eigenvalues are then floored
//! at zero and the repair is flagged.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::within::GroupCodes;
use super::RegressionError;

/// Small-sample factor `G/(G−1) · (N−1)/(N−K)`.
pub fn cluster_factor(g: usize, n: usize, k: usize) -> f64 {
    let (g, n, k) = (g as f64, n as f64, k as f64);
    g / (g - 1.0) * (n - 1.0) / (n - k)
}

/// `Σ_g s_g s_gᵀ`, accumulated in cluster-code order.
pub fn meat(x: &DMatrix<f64>, residuals: &DVector<f64>, clusters: &GroupCodes) -> DMatrix<f64> {
    let k = x.ncols();
    let mut scores = DMatrix::<f64>::zeros(k, clusters.n_groups);
    for (i, &g) in clusters.codes.iter().enumerate() {
        let u = residuals[i];
        for j in 0..k {
            scores[(j, g)] += x[(i, j)] * u;
        }
    }
    &scores * scores.transpose()
}

/// One-way clustered covariance. `dof_k` is the parameter count in the factor.
pub fn one_way(
    x: &DMatrix<f64>,
    residuals: &DVector<f64>,
    bread: &DMatrix<f64>,
    clusters: &GroupCodes,
    dof_k: usize,
    dimension: &str,
) -> Result<DMatrix<f64>, RegressionError> {
    let n = x.nrows();
    if clusters.codes.len() != n {
        return Err(RegressionError::ClusterLength {
            expected: n,
            got: clusters.codes.len(),
        });
    }
    if clusters.n_groups < 2 {
        return Err(RegressionError::SingleCluster(dimension.to_string()));
    }
    if n <= dof_k {
        return Err(RegressionError::TooFewObservations { n, k: dof_k });
    }
    let m = meat(x, residuals, clusters);
    let v = bread * m * bread * cluster_factor(clusters.n_groups, n, dof_k);
    Ok(symmetrize(v))
}

/// Labels of the intersection clustering of `a` and `b`.
pub fn intersect(a: &GroupCodes, b: &GroupCodes) -> GroupCodes {
    let pairs: Vec<(usize, usize)> = a.codes.iter().copied().zip(b.codes.iter().copied()).collect();
    let mut index: HashMap<(usize, usize), usize> = HashMap::new();
    let mut sorted = pairs.clone();
    sorted.sort_unstable();
    sorted.dedup();
    for (i, p) in sorted.iter().enumerate() {
        index.insert(*p, i);
    }
    GroupCodes {
        codes: pairs.iter().map(|p| index[p]).collect(),
        n_groups: sorted.len(),
    }
}

#[derive(Debug, Clone)]
pub struct ClusteredCov {
    pub matrix: DMatrix<f64>,
    /// Before any PSD repair; equal to `matrix` unless `psd_repaired`.
    pub unrepaired: DMatrix<f64>,
    pub psd_repaired: bool,
    /// Cluster counts in the order the dimensions were given.
    pub n_clusters: Vec<usize>,
}

/// One- or two-way clustered covariance (`clusters.len()` is 1 or 2).
pub fn clustered_cov(
    x: &DMatrix<f64>,
    residuals: &DVector<f64>,
    bread: &DMatrix<f64>,
    clusters: &[(&str, &GroupCodes)],
    dof_k: usize,
) -> Result<ClusteredCov, RegressionError> {
    match clusters {
        [(name, one)] => {
            let v = one_way(x, residuals, bread, one, dof_k, name)?;
            Ok(ClusteredCov {
                unrepaired: v.clone(),
                matrix: v,
                psd_repaired: false,
                n_clusters: vec![one.n_groups],
            })
        }
        [(name_a, a), (name_b, b)] => {
            let both = intersect(a, b);
            let va = one_way(x, residuals, bread, a, dof_k, name_a)?;
            let vb = one_way(x, residuals, bread, b, dof_k, name_b)?;
            let vab = if both.n_groups < 2 {
                return Err(RegressionError::SingleCluster(format!("{name_a}×{name_b}")));
            } else {
                one_way(x, residuals, bread, &both, dof_k, "intersection")?
            };
            let v = symmetrize(va + vb - vab);
            let (matrix, psd_repaired) = repair_psd(&v);
            Ok(ClusteredCov {
                matrix,
                unrepaired: v,
                psd_repaired,
                n_clusters: vec![a.n_groups, b.n_groups],
            })
        }
        _ => Err(RegressionError::ClusterDims(clusters.len())),
    }
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Floor negative eigenvalues at zero. Returns the input unchanged when it is PSD.
pub fn repair_psd(v: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let eig = SymmetricEigen::new(v.clone());
    if eig.eigenvalues.iter().all(|&l| l >= 0.0) {
        return (v.clone(), false);
    }
    let floored = eig.eigenvalues.map(|l| l.max(0.0));
    let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&floored) * eig.eigenvectors.transpose();
    (symmetrize(rebuilt), true)
}
