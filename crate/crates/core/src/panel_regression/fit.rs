use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::RegressionError;

/// Goodness of fit on the demeaned system.
///
/// AIC and BIC use the Gaussian log-likelihood with constants dropped:
/// `n·ln(SSR/n) + 2k` and `n·ln(SSR/n) + k·ln(n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitStats {
    pub r2: f64,
    pub adj_r2: f64,
    pub aic: f64,
    pub bic: f64,
    pub ssr: f64,
    pub sst: f64,
}

pub fn fit_stats(y: &DVector<f64>, residuals: &DVector<f64>, k: usize) -> Result<FitStats, RegressionError> {
    let n = y.len();
    if n <= k {
        return Err(RegressionError::TooFewObservations { n, k });
    }
    let mean = y.mean();
    let sst: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    if sst == 0.0 {
        return Err(RegressionError::DegenerateOutcome);
    }
    let ssr = residuals.norm_squared();
    if ssr == 0.0 {
        return Err(RegressionError::PerfectFit);
    }
    let nf = n as f64;
    let kf = k as f64;
    let r2 = 1.0 - ssr / sst;
    let adj_r2 = 1.0 - (1.0 - r2) * (nf - 1.0) / (nf - kf);
    let log_term = nf * (ssr / nf).ln();
    Ok(FitStats {
        r2,
        adj_r2,
        aic: log_term + 2.0 * kf,
        bic: log_term + kf * nf.ln(),
        ssr,
        sst,
    })
}
