//! Within transformation by alternating projections.
//!
//! One fixed effect is absorbed exactly by subtracting group means. With two
//! effects the firm and date demeaning steps are alternated until the firm
//! means left behind by the last date step are all below the tolerance; the
//! date means are exactly zero after every sweep. For balanced panels one
//! sweep suffices.

use nalgebra::{DMatrix, DVector};

use super::RegressionError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DemeanOptions {
    pub tolerance: f64,
    pub max_sweeps: usize,
}

impl Default for DemeanOptions {
    fn default() -> Self {
        DemeanOptions {
            tolerance: 1e-10,
            max_sweeps: 10_000,
        }
    }
}

/// Dense 0-based group codes for one fixed-effect dimension.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupCodes {
    pub codes: Vec<usize>,
    pub n_groups: usize,
}

impl GroupCodes {
    /// Codes assigned in order of first appearance of each sorted key.
    pub fn from_keys<K: Ord + Clone>(keys: &[K]) -> Self {
        let mut sorted: Vec<K> = keys.to_vec();
        sorted.sort();
        sorted.dedup();
        let codes = keys
            .iter()
            .map(|k| sorted.binary_search(k).expect("key present"))
            .collect();
        GroupCodes {
            codes,
            n_groups: sorted.len(),
        }
    }

    pub fn single(n: usize) -> Self {
        GroupCodes {
            codes: vec![0; n],
            n_groups: usize::from(n > 0),
        }
    }
}

/// Subtract group means of `col` in place; returns the largest absolute mean removed.
fn demean_column(col: &mut [f64], groups: &GroupCodes, sums: &mut [f64], counts: &[f64]) -> f64 {
    sums.iter_mut().for_each(|s| *s = 0.0);
    for (v, &g) in col.iter().zip(&groups.codes) {
        sums[g] += v;
    }
    let mut largest = 0.0f64;
    for (s, &c) in sums.iter_mut().zip(counts) {
        *s /= c;
        largest = largest.max(s.abs());
    }
    for (v, &g) in col.iter_mut().zip(&groups.codes) {
        *v -= sums[g];
    }
    largest
}

fn counts(groups: &GroupCodes) -> Vec<f64> {
    let mut c = vec![0.0; groups.n_groups];
    for &g in &groups.codes {
        c[g] += 1.0;
    }
    c
}

/// Demean one column against one or two dimensions. Returns the number of sweeps.
pub fn demean_in_place(
    col: &mut [f64],
    dims: &[&GroupCodes],
    options: &DemeanOptions,
) -> Result<usize, RegressionError> {
    match dims {
        [] => Ok(0),
        [one] => {
            let c = counts(one);
            let mut sums = vec![0.0; one.n_groups];
            demean_column(col, one, &mut sums, &c);
            Ok(1)
        }
        [first, second] => {
            let (c1, c2) = (counts(first), counts(second));
            let mut s1 = vec![0.0; first.n_groups];
            let mut s2 = vec![0.0; second.n_groups];
            demean_column(col, first, &mut s1, &c1);
            let mut residual = f64::INFINITY;
            for sweep in 1..=options.max_sweeps {
                demean_column(col, second, &mut s2, &c2);
                // Means the next first-dimension step would remove.
                residual = group_mean_max(col, first, &mut s1, &c1);
                if residual < options.tolerance {
                    return Ok(sweep);
                }
                demean_column(col, first, &mut s1, &c1);
            }
            Err(RegressionError::NoConvergence {
                sweeps: options.max_sweeps,
                residual,
            })
        }
        _ => unreachable!("at most two fixed-effect dimensions"),
    }
}

fn group_mean_max(col: &[f64], groups: &GroupCodes, sums: &mut [f64], counts: &[f64]) -> f64 {
    sums.iter_mut().for_each(|s| *s = 0.0);
    for (v, &g) in col.iter().zip(&groups.codes) {
        sums[g] += v;
    }
    sums.iter()
        .zip(counts)
        .map(|(s, c)| (s / c).abs())
        .fold(0.0, f64::max)
}

/// Largest absolute group mean of `col` in `groups`.
pub fn max_group_mean(col: &[f64], groups: &GroupCodes) -> f64 {
    let c = counts(groups);
    let mut sums = vec![0.0; groups.n_groups];
    group_mean_max(col, groups, &mut sums, &c)
}

/// Demeaned outcome and regressors.
#[derive(Debug, Clone)]
pub struct Demeaned {
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
    /// Largest sweep count over all columns.
    pub sweeps: usize,
}

/// Within-transform `y` and every column of `x`. With no dimensions the
/// overall mean is removed (an intercept).
pub fn within(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    dims: &[&GroupCodes],
    options: &DemeanOptions,
) -> Result<Demeaned, RegressionError> {
    let n = y.len();
    let overall = GroupCodes::single(n);
    let dims: Vec<&GroupCodes> = if dims.is_empty() { vec![&overall] } else { dims.to_vec() };
    let mut y = y.clone();
    let mut x = x.clone();
    let mut sweeps = demean_in_place(y.as_mut_slice(), &dims, options)?;
    for j in 0..x.ncols() {
        let mut col = x.column(j).clone_owned();
        sweeps = sweeps.max(demean_in_place(col.as_mut_slice(), &dims, options)?);
        x.set_column(j, &col);
    }
    Ok(Demeaned { y, x, sweeps })
}
