//! From per-headline scores to a firm-date panel of tradable signals.
//!
//! A headline published before the session close of trading day `d` (in the
//! exchange timezone) is assigned to `d`; one published at or after the close,
//! or on a non-trading day, goes to the next session. The signal for
//! effective date `t` is paired with the return realized on `t`, the first
//! session in which it can be traded.
//!
//! With [`ReturnConvention::OpenToOpen`] the cutoff moves to the session open,
//! and `extra_lag_sessions` pushes every signal a further number of sessions.

use std::collections::{BTreeMap, HashMap};
use std::io::Read;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, TimeZone};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market_data::{daily_breakpoints, classify_cap, FirmId, ReturnRecord, SizeClass, TradingCalendar};
use crate::news_ingest::HeadlineRecord;
use crate::sentiment_scorer::SentimentScore;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("timestamp {0} falls outside the trading calendar")]
    OutsideCalendar(String),
    #[error("score for story {0} does not match its headline")]
    Mismatched(String),
    #[error("panel file: {0}")]
    Csv(#[from] csv::Error),
}

/// Which daily return a signal is paired with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReturnConvention {
    /// Close-to-close return of the effective date; news must precede the close.
    #[default]
    CloseToClose,
    /// Open-to-open return starting at the effective date's open; news must precede the open.
    OpenToOpen,
}

impl FromStr for ReturnConvention {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "close_to_close" | "close-to-close" => Ok(ReturnConvention::CloseToClose),
            "open_to_open" | "open-to-open" => Ok(ReturnConvention::OpenToOpen),
            other => Err(format!("unknown return convention `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TimingOptions {
    pub return_convention: ReturnConvention,
    /// Additional whole sessions to delay every signal by.
    pub extra_lag_sessions: usize,
}

/// Trading date on which a headline first becomes tradable (default timing).
pub fn assign_effective_date<Tz: TimeZone>(
    published_at: &DateTime<Tz>,
    calendar: &TradingCalendar,
) -> Result<NaiveDate, SignalError> {
    assign_effective_date_with(published_at, calendar, &TimingOptions::default())
}

pub fn assign_effective_date_with<Tz: TimeZone>(
    published_at: &DateTime<Tz>,
    calendar: &TradingCalendar,
    timing: &TimingOptions,
) -> Result<NaiveDate, SignalError> {
    let local = published_at.with_timezone(&calendar.tz());
    let day = local.date_naive();
    let time = local.time();
    let outside = || SignalError::OutsideCalendar(local.to_rfc3339());
    if day < calendar.first_date() || day > calendar.last_date() {
        return Err(outside());
    }
    let same_session = calendar.session(day).is_some_and(|s| match timing.return_convention {
        ReturnConvention::CloseToClose => time < s.close,
        ReturnConvention::OpenToOpen => time < s.open,
    });
    let effective = if same_session {
        day
    } else {
        calendar.next_trading_day(day).ok_or_else(outside)?
    };
    calendar
        .advance(effective, timing.extra_lag_sessions)
        .ok_or_else(outside)
}

/// Mean headline score of one firm on one effective date.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirmDaySignal {
    pub firm_id: FirmId,
    pub effective_date: NaiveDate,
    pub chatgpt_score: f64,
    pub vendor_score: Option<f64>,
    pub n_headlines: usize,
}

/// Group scored headlines by (firm, effective date) and average them.
///
/// UNKNOWN (0) scores count toward the mean. The vendor score is the mean of
/// the headlines that carry one. Output is sorted by date, then firm.
pub fn aggregate_firm_day(
    scored: &[(HeadlineRecord, SentimentScore)],
    calendar: &TradingCalendar,
    timing: &TimingOptions,
) -> Result<Vec<FirmDaySignal>, SignalError> {
    #[derive(Default)]
    struct Acc {
        sum: i64,
        n: usize,
        vendor: Vec<f64>,
    }
    let mut groups: BTreeMap<(NaiveDate, FirmId), Acc> = BTreeMap::new();
    for (headline, score) in scored {
        if headline.story_id != score.story_id {
            return Err(SignalError::Mismatched(score.story_id.0.clone()));
        }
        let date = assign_effective_date_with(&headline.published_at, calendar, timing)?;
        let acc = groups.entry((date, headline.firm_id.clone())).or_default();
        acc.sum += i64::from(score.value);
        acc.n += 1;
        if let Some(v) = headline.vendor_sentiment {
            acc.vendor.push(v);
        }
    }
    Ok(groups
        .into_iter()
        .map(|((effective_date, firm_id), mut acc)| {
            // fixed summation order keeps the mean independent of input order
            acc.vendor.sort_by(f64::total_cmp);
            let vendor_score =
                (!acc.vendor.is_empty()).then(|| acc.vendor.iter().sum::<f64>() / acc.vendor.len() as f64);
            FirmDaySignal {
                firm_id,
                effective_date,
                chatgpt_score: acc.sum as f64 / acc.n as f64,
                vendor_score,
                n_headlines: acc.n,
            }
        })
        .collect())
}

/// One regression row: a signal and the return it predicts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelObservation {
    pub firm_id: FirmId,
    /// Session whose return is predicted (the signal's effective date).
    pub date: NaiveDate,
    pub ret_next: f64,
    pub chatgpt_score: f64,
    pub vendor_score: Option<f64>,
    pub market_cap: Option<f64>,
    pub size_class: Option<SizeClass>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PanelStats {
    pub signals: usize,
    pub matched: usize,
    /// Signals with no return on their effective date.
    pub dropped_signals: usize,
    /// Returns with no signal; these are not regression rows.
    pub returns_without_signal: usize,
    /// Matched rows that could not be size-classified (missing cap or breakpoint).
    pub unclassified: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub observations: Vec<PanelObservation>,
    pub stats: PanelStats,
}

/// Join signals to same-date returns.
///
/// `returns` should be the whole filtered universe: NYSE size breakpoints are
/// computed from its daily cross-sections. Signals dated outside the calendar
/// are dropped. Rows are sorted by date, then firm.
pub fn build_panel(signals: &[FirmDaySignal], returns: &[ReturnRecord], calendar: &TradingCalendar) -> Panel {
    let breakpoints = daily_breakpoints(returns);
    let by_key: HashMap<(&FirmId, NaiveDate), &ReturnRecord> =
        returns.iter().map(|r| ((&r.firm_id, r.date), r)).collect();

    let mut stats = PanelStats {
        signals: signals.len(),
        ..PanelStats::default()
    };
    let mut observations = Vec::with_capacity(signals.len());
    for s in signals {
        let matched = calendar
            .is_trading_day(s.effective_date)
            .then(|| by_key.get(&(&s.firm_id, s.effective_date)))
            .flatten();
        let Some(ret) = matched else {
            stats.dropped_signals += 1;
            continue;
        };
        let size_class = match (ret.market_cap, breakpoints.get(ret.date)) {
            (Some(cap), Some(bp)) => Some(classify_cap(cap, bp)),
            _ => {
                stats.unclassified += 1;
                None
            }
        };
        observations.push(PanelObservation {
            firm_id: s.firm_id.clone(),
            date: s.effective_date,
            ret_next: ret.ret,
            chatgpt_score: s.chatgpt_score,
            vendor_score: s.vendor_score,
            market_cap: ret.market_cap,
            size_class,
        });
    }
    stats.matched = observations.len();
    stats.returns_without_signal = returns.len() - stats.matched;
    observations.sort_by(|a, b| a.date.cmp(&b.date).then_with(|| a.firm_id.cmp(&b.firm_id)));
    Panel { observations, stats }
}

/// CSV columns: firm_id, date, ret_next, chatgpt_score, vendor_score, market_cap, size_class.
pub fn write_panel_csv<W: std::io::Write>(out: W, panel: &[PanelObservation]) -> std::io::Result<()> {
    crate::io::write_csv(out, panel)
}

pub fn read_panel_csv<R: Read>(source: R) -> Result<Vec<PanelObservation>, SignalError> {
    let mut reader = csv::Reader::from_reader(source);
    reader
        .deserialize()
        .collect::<Result<Vec<_>, _>>()
        .map_err(SignalError::from)
}
