//! Fixed-effect panel regressions of next-day returns on sentiment scores.
//!
//! [`estimate`] composes the pieces:
//!
//! 1. restrict the panel to the requested size class and to rows where every
//!    regressor is present;
//! 2. absorb firm and/or date fixed effects with the within transformation
//!    ([`within_transform`]);
//! 3. solve least squares on the demeaned system ([`ols`]);
//! 4. compute one- or two-way cluster-robust covariance ([`clustered_cov`]);
//! 5. report R², adjusted R², AIC and BIC ([`fit_stats`]).
//!
//! The parameter count `k` used by adjusted R², AIC, BIC and the cluster
//! small-sample factor counts absorbed effects:
//! `(firms − 1) + (dates − 1) + regressors + 1` for the two-way model.

mod covariance;
mod fit;
mod ols;
mod within;

use std::collections::BTreeMap;
use std::fmt::{self, Write};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::market_data::SizeClass;
use crate::signal_builder::PanelObservation;

pub use covariance::{cluster_factor, clustered_cov, intersect, meat, one_way, repair_psd, ClusteredCov};
pub use fit::{fit_stats, FitStats};
pub use ols::{ols, OlsFit};
pub use within::{demean_in_place, max_group_mean, within, DemeanOptions, Demeaned, GroupCodes};

#[derive(Debug, Error)]
pub enum RegressionError {
    #[error("regression spec needs at least one regressor")]
    NoRegressors,
    #[error("regressor `{0}` listed twice")]
    DuplicateRegressor(String),
    #[error("unknown regressor `{0}` (expected chatgpt_score or vendor_score)")]
    UnknownRegressor(String),
    #[error("empty estimation sample")]
    EmptySample,
    #[error("design has no columns")]
    EmptyDesign,
    #[error("{n} observations cannot identify {k} parameters")]
    TooFewObservations { n: usize, k: usize },
    #[error("column `{column}` is collinear with the fixed effects or earlier regressors")]
    Collinear { column: String },
    #[error("within transformation did not converge after {sweeps} sweeps (residual {residual:e})")]
    NoConvergence { sweeps: usize, residual: f64 },
    #[error("clustering on {0} yields a single cluster; variance undefined")]
    SingleCluster(String),
    #[error("cluster labels cover {got} rows, expected {expected}")]
    ClusterLength { expected: usize, got: usize },
    #[error("expected one or two cluster dimensions, got {0}")]
    ClusterDims(usize),
    #[error("outcome has zero variance after demeaning")]
    DegenerateOutcome,
    #[error("residuals are identically zero; AIC/BIC undefined")]
    PerfectFit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dimension {
    Firm,
    Date,
}

impl Dimension {
    pub fn as_str(self) -> &'static str {
        match self {
            Dimension::Firm => "firm",
            Dimension::Date => "date",
        }
    }
}

impl FromStr for Dimension {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "firm" => Ok(Dimension::Firm),
            "date" => Ok(Dimension::Date),
            other => Err(format!("unknown dimension `{other}`")),
        }
    }
}

fn both() -> Vec<Dimension> {
    vec![Dimension::Firm, Dimension::Date]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionSpec {
    #[serde(default)]
    pub name: String,
    pub regressors: Vec<String>,
    #[serde(default = "both")]
    pub fixed_effects: Vec<Dimension>,
    #[serde(default = "both")]
    pub cluster_dims: Vec<Dimension>,
    #[serde(default)]
    pub sample_filter: Option<SizeClass>,
}

impl RegressionSpec {
    /// Firm and date effects, clustered by firm and date.
    pub fn two_way(name: impl Into<String>, regressors: &[&str]) -> Self {
        RegressionSpec {
            name: name.into(),
            regressors: regressors.iter().map(|s| s.to_string()).collect(),
            fixed_effects: both(),
            cluster_dims: both(),
            sample_filter: None,
        }
    }

    pub fn with_sample(mut self, class: SizeClass) -> Self {
        self.sample_filter = Some(class);
        self
    }

    pub fn validate(&self) -> Result<(), RegressionError> {
        if self.regressors.is_empty() {
            return Err(RegressionError::NoRegressors);
        }
        for (i, r) in self.regressors.iter().enumerate() {
            if self.regressors[..i].contains(r) {
                return Err(RegressionError::DuplicateRegressor(r.clone()));
            }
        }
        if self.cluster_dims.len() > 2 {
            return Err(RegressionError::ClusterDims(self.cluster_dims.len()));
        }
        Ok(())
    }
}

/// Outcome, named regressor columns, and firm/date group codes.
#[derive(Debug, Clone)]
pub struct PanelDesign {
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
    pub names: Vec<String>,
    pub firms: GroupCodes,
    pub dates: GroupCodes,
}

impl PanelDesign {
    pub fn new<F: Ord + Clone, D: Ord + Clone>(
        y: Vec<f64>,
        columns: Vec<(String, Vec<f64>)>,
        firm_keys: &[F],
        date_keys: &[D],
    ) -> Self {
        let n = y.len();
        assert!(columns.iter().all(|(_, c)| c.len() == n), "column lengths differ");
        assert!(firm_keys.len() == n && date_keys.len() == n, "key lengths differ");
        let names = columns.iter().map(|(name, _)| name.clone()).collect();
        let flat: Vec<f64> = columns.into_iter().flat_map(|(_, c)| c).collect();
        let k = flat.len() / n.max(1);
        PanelDesign {
            y: DVector::from_vec(y),
            x: DMatrix::from_vec(n, k, flat),
            names,
            firms: GroupCodes::from_keys(firm_keys),
            dates: GroupCodes::from_keys(date_keys),
        }
    }

    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    fn codes(&self, dim: Dimension) -> &GroupCodes {
        match dim {
            Dimension::Firm => &self.firms,
            Dimension::Date => &self.dates,
        }
    }

    /// Parameter count including absorbed effects and the intercept.
    pub fn parameter_count(&self, fixed_effects: &[Dimension]) -> usize {
        let absorbed: usize = dedup(fixed_effects)
            .iter()
            .map(|&d| self.codes(d).n_groups.saturating_sub(1))
            .sum();
        absorbed + self.x.ncols() + 1
    }
}

fn dedup(dims: &[Dimension]) -> Vec<Dimension> {
    let mut v = dims.to_vec();
    v.sort();
    v.dedup();
    v
}

/// Demean `y` and `x` within the requested fixed effects.
pub fn within_transform(
    design: &PanelDesign,
    effects: &[Dimension],
    options: &DemeanOptions,
) -> Result<Demeaned, RegressionError> {
    if design.n_obs() == 0 {
        return Err(RegressionError::EmptySample);
    }
    let dims: Vec<&GroupCodes> = dedup(effects).into_iter().map(|d| design.codes(d)).collect();
    within(&design.y, &design.x, &dims, options)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub t_stat: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub name: String,
    pub spec: RegressionSpec,
    pub coefficients: Vec<Coefficient>,
    pub n_obs: usize,
    pub n_firms: usize,
    pub n_dates: usize,
    /// Parameter count used for adjusted R², AIC, BIC and the cluster factor.
    pub k: usize,
    pub r2: f64,
    pub adj_r2: f64,
    pub aic: f64,
    pub bic: f64,
    pub n_clusters: BTreeMap<Dimension, usize>,
    /// Degrees of freedom behind the p-values.
    pub df: usize,
    pub psd_repaired: bool,
    pub demean_sweeps: usize,
    /// Rows dropped because a regressor was missing.
    pub dropped_missing: usize,
    pub covariance: Vec<Vec<f64>>,
}

impl RegressionResult {
    pub fn coefficient(&self, name: &str) -> Option<&Coefficient> {
        self.coefficients.iter().find(|c| c.name == name)
    }
}

/// Fit a prepared design. `spec.regressors` must name the design's columns.
pub fn fit_design(design: &PanelDesign, spec: &RegressionSpec, options: &DemeanOptions) -> Result<RegressionResult, RegressionError> {
    spec.validate()?;
    let n = design.n_obs();
    if n == 0 {
        return Err(RegressionError::EmptySample);
    }
    let demeaned = within_transform(design, &spec.fixed_effects, options)?;
    let fitted = ols(&demeaned.y, &demeaned.x, &design.names)?;
    let k = design.parameter_count(&spec.fixed_effects);

    let singletons = GroupCodes::from_keys(&(0..n).collect::<Vec<_>>());
    let clusters: Vec<(&str, &GroupCodes)> = match dedup(&spec.cluster_dims).as_slice() {
        [] => vec![("observation", &singletons)],
        dims => dims.iter().map(|&d| (d.as_str(), design.codes(d))).collect(),
    };
    let cov = clustered_cov(&demeaned.x, &fitted.residuals, &fitted.xtx_inv, &clusters, k)?;
    let stats = fit_stats(&demeaned.y, &fitted.residuals, k)?;

    let df = if spec.cluster_dims.is_empty() {
        n - k
    } else {
        cov.n_clusters.iter().copied().min().unwrap_or(2) - 1
    };
    let t_dist = StudentsT::new(0.0, 1.0, df.max(1) as f64).expect("valid t distribution");
    let coefficients = design
        .names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let estimate = fitted.coefficients[j];
            let std_error = cov.matrix[(j, j)].max(0.0).sqrt();
            let t_stat = estimate / std_error;
            Coefficient {
                name: name.clone(),
                estimate,
                std_error,
                t_stat,
                p_value: 2.0 * (1.0 - t_dist.cdf(t_stat.abs())),
            }
        })
        .collect();
    let n_clusters = if spec.cluster_dims.is_empty() {
        BTreeMap::new()
    } else {
        dedup(&spec.cluster_dims)
            .into_iter()
            .zip(cov.n_clusters.iter().copied())
            .collect()
    };
    let kx = design.x.ncols();
    Ok(RegressionResult {
        name: spec.name.clone(),
        spec: spec.clone(),
        coefficients,
        n_obs: n,
        n_firms: design.firms.n_groups,
        n_dates: design.dates.n_groups,
        k,
        r2: stats.r2,
        adj_r2: stats.adj_r2,
        aic: stats.aic,
        bic: stats.bic,
        n_clusters,
        df,
        psd_repaired: cov.psd_repaired,
        demean_sweeps: demeaned.sweeps,
        dropped_missing: 0,
        covariance: (0..kx).map(|i| (0..kx).map(|j| cov.matrix[(i, j)]).collect()).collect(),
    })
}

fn regressor_value(obs: &PanelObservation, name: &str) -> Result<Option<f64>, RegressionError> {
    match name {
        "chatgpt_score" => Ok(Some(obs.chatgpt_score)),
        "vendor_score" => Ok(obs.vendor_score),
        other => Err(RegressionError::UnknownRegressor(other.to_string())),
    }
}

/// Estimate `spec` on a signal panel.
pub fn estimate(panel: &[PanelObservation], spec: &RegressionSpec) -> Result<RegressionResult, RegressionError> {
    spec.validate()?;
    let mut y = Vec::new();
    let mut columns: Vec<(String, Vec<f64>)> = spec.regressors.iter().map(|r| (r.clone(), Vec::new())).collect();
    let mut firms = Vec::new();
    let mut dates = Vec::new();
    let mut dropped_missing = 0;
    'rows: for obs in panel {
        if let Some(class) = spec.sample_filter {
            if obs.size_class != Some(class) {
                continue;
            }
        }
        let mut row = Vec::with_capacity(columns.len());
        for name in &spec.regressors {
            match regressor_value(obs, name)? {
                Some(v) => row.push(v),
                None => {
                    dropped_missing += 1;
                    continue 'rows;
                }
            }
        }
        for ((_, col), v) in columns.iter_mut().zip(row) {
            col.push(v);
        }
        y.push(obs.ret_next);
        firms.push(obs.firm_id.clone());
        dates.push(obs.date);
    }
    if y.is_empty() {
        return Err(RegressionError::EmptySample);
    }
    let design = PanelDesign::new(y, columns, &firms, &dates);
    let mut result = fit_design(&design, spec, &DemeanOptions::default())?;
    result.dropped_missing = dropped_missing;
    Ok(result)
}

/// Text table: one column per result, coefficients with t-statistics in
/// parentheses beneath, then N, R², adjusted R², AIC and BIC.
pub fn render_table(results: &[RegressionResult]) -> String {
    let mut regressors: Vec<&str> = Vec::new();
    for r in results {
        for c in &r.coefficients {
            if !regressors.contains(&c.name.as_str()) {
                regressors.push(&c.name);
            }
        }
    }
    let label_width = 16;
    let col_width = 14;
    let mut rows: Vec<(String, Vec<String>)> = Vec::new();
    rows.push((
        String::new(),
        (1..=results.len()).map(|i| format!("({i})")).collect(),
    ));
    rows.push((String::new(), results.iter().map(|r| r.name.clone()).collect()));
    rows.push(("-".into(), Vec::new()));
    for name in &regressors {
        let coef = results
            .iter()
            .map(|r| r.coefficient(name).map(|c| format!("{:.6}", c.estimate)).unwrap_or_default())
            .collect();
        let t = results
            .iter()
            .map(|r| r.coefficient(name).map(|c| format!("({:.2})", c.t_stat)).unwrap_or_default())
            .collect();
        rows.push((name.to_string(), coef));
        rows.push((String::new(), t));
    }
    rows.push(("-".into(), Vec::new()));
    rows.push(("N".into(), results.iter().map(|r| r.n_obs.to_string()).collect()));
    rows.push(("R²".into(), results.iter().map(|r| format!("{:.4}", r.r2)).collect()));
    rows.push(("Adj. R²".into(), results.iter().map(|r| format!("{:.4}", r.adj_r2)).collect()));
    rows.push(("AIC".into(), results.iter().map(|r| format!("{:.1}", r.aic)).collect()));
    rows.push(("BIC".into(), results.iter().map(|r| format!("{:.1}", r.bic)).collect()));
    rows.push(("-".into(), Vec::new()));
    rows.push(("Firm FE".into(), results.iter().map(|r| yes_no(r.spec.fixed_effects.contains(&Dimension::Firm))).collect()));
    rows.push(("Date FE".into(), results.iter().map(|r| yes_no(r.spec.fixed_effects.contains(&Dimension::Date))).collect()));

    let total = label_width + col_width * results.len();
    let mut out = String::new();
    for (label, cells) in rows {
        if label == "-" && cells.is_empty() {
            let _ = writeln!(out, "{}", "-".repeat(total));
            continue;
        }
        let mut line = pad_right(&label, label_width);
        for cell in cells {
            line.push_str(&pad_left(&cell, col_width));
        }
        let _ = writeln!(out, "{}", line.trim_end());
    }
    let clusters: Vec<&str> = results
        .first()
        .map(|r| r.spec.cluster_dims.iter().map(|d| d.as_str()).collect())
        .unwrap_or_default();
    let _ = writeln!(
        out,
        "t-statistics in parentheses; standard errors clustered by {}.",
        if clusters.is_empty() { "observation".to_string() } else { clusters.join(" and ") }
    );
    out
}

fn yes_no(b: bool) -> String {
    if b { "Yes" } else { "No" }.to_string()
}

fn pad_right(s: &str, width: usize) -> String {
    let len = s.chars().count();
    format!("{s}{}", " ".repeat(width.saturating_sub(len)))
}

fn pad_left(s: &str, width: usize) -> String {
    let len = s.chars().count();
    format!("{}{s}", " ".repeat(width.saturating_sub(len)))
}

impl fmt::Display for RegressionResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render_table(std::slice::from_ref(self)))
    }
}
