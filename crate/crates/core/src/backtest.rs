//! Daily long-short portfolios formed from signal signs.
//!
//! Each session the long leg holds firms with a positive score and the short
//! leg firms with a negative score; zero scores are left out. Legs are
//! equal-weighted unless value weighting is requested. A leg with no members
//! earns 0 that day and the day is flagged, so the date axis stays dense.

use std::collections::BTreeMap;
use std::io::Write;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market_data::{classify_cap, Breakpoints, SizeClass};
use crate::signal_builder::PanelObservation;

pub const TRADING_DAYS_PER_YEAR: f64 = 252.0;

#[derive(Debug, Error)]
pub enum BacktestError {
    #[error("cannot form portfolios from an empty panel")]
    EmptyPanel,
    #[error("transaction cost must be a finite, non-negative number of basis points, got {0}")]
    Cost(f64),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PortfolioRule {
    /// Long positive scores, short negative scores.
    #[default]
    SignSplit,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    #[default]
    Equal,
    /// Weights proportional to market cap; members without a cap are skipped.
    Value,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BacktestOptions {
    pub rule: PortfolioRule,
    pub weighting: Weighting,
    /// Cost per side in basis points. Each populated leg is opened and
    /// closed every session, so it pays two sides per day.
    pub cost_bps_per_side: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyReturn {
    pub date: NaiveDate,
    pub long_return: f64,
    pub short_return: f64,
    pub long_short_return: f64,
    pub n_long: usize,
    pub n_short: usize,
    /// At least one leg was empty.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n_days: usize,
    pub flagged_days: usize,
    pub mean_daily_return: f64,
    /// `mean / sd · √252`; absent with fewer than two days or zero variance.
    pub annualized_sharpe: Option<f64>,
    /// Largest peak-to-trough loss of the cumulative series, as a positive fraction.
    pub max_drawdown: f64,
    pub final_cumulative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioSeries {
    pub days: Vec<DailyReturn>,
    /// `1.0` followed by the running product of `1 + long_short_return`.
    pub cumulative: Vec<f64>,
    pub summary: Summary,
    /// Observations skipped under value weighting for lack of a market cap.
    pub missing_weight: usize,
}

fn leg_return(members: &[&PanelObservation], weighting: Weighting) -> (f64, usize, usize) {
    match weighting {
        Weighting::Equal => {
            let n = members.len();
            if n == 0 {
                return (0.0, 0, 0);
            }
            (members.iter().map(|o| o.ret_next).sum::<f64>() / n as f64, n, 0)
        }
        Weighting::Value => {
            let weighted: Vec<(f64, f64)> = members
                .iter()
                .filter_map(|o| o.market_cap.map(|c| (c, o.ret_next)))
                .collect();
            let missing = members.len() - weighted.len();
            let total: f64 = weighted.iter().map(|(c, _)| c).sum();
            if weighted.is_empty() || total <= 0.0 {
                return (0.0, 0, missing);
            }
            let r = weighted.iter().map(|(c, r)| c * r).sum::<f64>() / total;
            (r, weighted.len(), missing)
        }
    }
}

fn form_day(date: NaiveDate, obs: &[&PanelObservation], options: &BacktestOptions) -> (DailyReturn, usize) {
    let PortfolioRule::SignSplit = options.rule;
    let long: Vec<&PanelObservation> = obs.iter().copied().filter(|o| o.chatgpt_score > 0.0).collect();
    let short: Vec<&PanelObservation> = obs.iter().copied().filter(|o| o.chatgpt_score < 0.0).collect();
    let (mut long_return, n_long, miss_l) = leg_return(&long, options.weighting);
    let (mut short_return, n_short, miss_s) = leg_return(&short, options.weighting);
    let cost = 2.0 * options.cost_bps_per_side / 10_000.0;
    if n_long > 0 {
        long_return -= cost;
    }
    if n_short > 0 {
        short_return += cost;
    }
    let day = DailyReturn {
        date,
        long_return,
        short_return,
        long_short_return: long_return - short_return,
        n_long,
        n_short,
        flagged: n_long == 0 || n_short == 0,
    };
    (day, miss_l + miss_s)
}

/// Daily long-short series over every date present in `panel`.
pub fn form_portfolio(panel: &[PanelObservation], options: &BacktestOptions) -> Result<PortfolioSeries, BacktestError> {
    if panel.is_empty() {
        return Err(BacktestError::EmptyPanel);
    }
    if !options.cost_bps_per_side.is_finite() || options.cost_bps_per_side < 0.0 {
        return Err(BacktestError::Cost(options.cost_bps_per_side));
    }
    let mut by_date: BTreeMap<NaiveDate, Vec<&PanelObservation>> = BTreeMap::new();
    for o in panel {
        by_date.entry(o.date).or_default().push(o);
    }
    let groups: Vec<(NaiveDate, Vec<&PanelObservation>)> = by_date.into_iter().collect();
    let formed: Vec<(DailyReturn, usize)> = groups
        .par_iter()
        .map(|(date, obs)| form_day(*date, obs, options))
        .collect();
    let missing_weight = formed.iter().map(|(_, m)| m).sum();
    let days: Vec<DailyReturn> = formed.into_iter().map(|(d, _)| d).collect();
    let daily: Vec<f64> = days.iter().map(|d| d.long_short_return).collect();
    let cumulative = cumulative_series(&daily);
    let summary = summarize(&days, &cumulative);
    Ok(PortfolioSeries {
        days,
        cumulative,
        summary,
        missing_weight,
    })
}

pub fn cumulative_series(daily: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(daily.len() + 1);
    let mut level = 1.0;
    out.push(level);
    for r in daily {
        level *= 1.0 + r;
        out.push(level);
    }
    out
}

pub fn max_drawdown(cumulative: &[f64]) -> f64 {
    let mut peak = f64::NEG_INFINITY;
    let mut worst = 0.0f64;
    for &c in cumulative {
        peak = peak.max(c);
        if peak > 0.0 {
            worst = worst.max(1.0 - c / peak);
        }
    }
    worst
}

pub fn annualized_sharpe(daily: &[f64]) -> Option<f64> {
    let n = daily.len();
    if n < 2 {
        return None;
    }
    let mean = daily.iter().sum::<f64>() / n as f64;
    let var = daily.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1) as f64;
    if var <= 0.0 {
        return None;
    }
    Some(mean / var.sqrt() * TRADING_DAYS_PER_YEAR.sqrt())
}

fn summarize(days: &[DailyReturn], cumulative: &[f64]) -> Summary {
    let daily: Vec<f64> = days.iter().map(|d| d.long_short_return).collect();
    Summary {
        n_days: days.len(),
        flagged_days: days.iter().filter(|d| d.flagged).count(),
        mean_daily_return: daily.iter().sum::<f64>() / daily.len().max(1) as f64,
        annualized_sharpe: annualized_sharpe(&daily),
        max_drawdown: max_drawdown(cumulative),
        final_cumulative: *cumulative.last().unwrap_or(&1.0),
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SizeSplit {
    pub small: Vec<PanelObservation>,
    pub non_small: Vec<PanelObservation>,
    /// Observations without a market cap or without a breakpoint on their date.
    pub unclassified: usize,
}

/// Partition by size using the day's breakpoint, recomputed from `market_cap`.
pub fn split_by_size(panel: &[PanelObservation], breakpoints: &Breakpoints) -> SizeSplit {
    let mut split = SizeSplit::default();
    for o in panel {
        match (o.market_cap, breakpoints.get(o.date)) {
            (Some(cap), Some(bp)) => match classify_cap(cap, bp) {
                SizeClass::Small => split.small.push(o.clone()),
                SizeClass::NonSmall => split.non_small.push(o.clone()),
            },
            _ => split.unclassified += 1,
        }
    }
    split
}

/// Plot-ready CSV: one row per session plus the cumulative level after it.
pub fn write_series_csv<W: Write>(series: &PortfolioSeries, out: W) -> Result<(), BacktestError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "date",
        "long_return",
        "short_return",
        "long_short_return",
        "n_long",
        "n_short",
        "flagged",
        "cumulative",
    ])?;
    for (d, c) in series.days.iter().zip(&series.cumulative[1..]) {
        w.write_record([
            d.date.to_string(),
            d.long_return.to_string(),
            d.short_return.to_string(),
            d.long_short_return.to_string(),
            d.n_long.to_string(),
            d.n_short.to_string(),
            d.flagged.to_string(),
            c.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
