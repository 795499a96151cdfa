//! Daily security returns, the common-stock universe filter, the trading
//! calendar, and NYSE size breakpoints.

mod calendar;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::Read;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{read_rows, DataFormat, RecordError};

pub use calendar::{Session, TradingCalendar, DEFAULT_OPEN};

#[derive(Debug, Error)]
pub enum MarketDataError {
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error("duplicate return for firm {firm_id} on {date} (line {line})")]
    DuplicateReturn {
        firm_id: FirmId,
        date: NaiveDate,
        line: u64,
    },
    #[error("NYSE size breakpoint undefined on {0}: no NYSE record with a market cap")]
    UndefinedBreakpoint(NaiveDate),
    #[error("firm {firm_id} on {date} has no market cap")]
    MissingMarketCap { firm_id: FirmId, date: NaiveDate },
    #[error("calendar: {0}")]
    Calendar(String),
}

/// Opaque security identifier (permno-like).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FirmId(pub String);

impl FirmId {
    pub fn new(id: impl Into<String>) -> Self {
        FirmId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for FirmId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for FirmId {
    fn from(s: &str) -> Self {
        FirmId(s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Exchange {
    Nyse,
    Amex,
    Nasdaq,
    Other,
}

impl Exchange {
    pub fn as_str(self) -> &'static str {
        match self {
            Exchange::Nyse => "NYSE",
            Exchange::Amex => "AMEX",
            Exchange::Nasdaq => "NASDAQ",
            Exchange::Other => "OTHER",
        }
    }
}

impl FromStr for Exchange {
    type Err = std::convert::Infallible;

    /// Unrecognized venues parse as `Other`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.trim().to_ascii_uppercase().as_str() {
            "NYSE" => Exchange::Nyse,
            "AMEX" => Exchange::Amex,
            "NASDAQ" => Exchange::Nasdaq,
            _ => Exchange::Other,
        })
    }
}

impl fmt::Display for Exchange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One firm-date row of the daily return file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnRecord {
    pub firm_id: FirmId,
    pub date: NaiveDate,
    /// Daily total return as a decimal fraction; always greater than -1.
    pub ret: f64,
    /// Dollars; strictly positive when present.
    pub market_cap: Option<f64>,
    pub share_code: i64,
    pub exchange: Exchange,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeClass {
    Small,
    NonSmall,
}

impl SizeClass {
    pub fn as_str(self) -> &'static str {
        match self {
            SizeClass::Small => "small",
            SizeClass::NonSmall => "non_small",
        }
    }
}

impl fmt::Display for SizeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SizeClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "small" | "Small" => Ok(SizeClass::Small),
            "non_small" | "NonSmall" | "non-small" => Ok(SizeClass::NonSmall),
            other => Err(format!("unknown size class `{other}`")),
        }
    }
}

pub const RETURN_FIELDS: [&str; 6] = ["firm_id", "date", "ret", "market_cap", "share_code", "exchange"];

/// Parse and validate a return file. Row order is preserved.
pub fn load_returns<R: Read>(source: R, format: DataFormat) -> Result<Vec<ReturnRecord>, MarketDataError> {
    // market_cap may be absent as a JSON key; only require it in CSV headers.
    let required: &[&str] = match format {
        DataFormat::Csv => &RETURN_FIELDS,
        DataFormat::Jsonl => &RETURN_FIELDS[..3],
    };
    let rows = read_rows(source, format, required)?;
    let mut seen = HashSet::with_capacity(rows.len());
    let mut out = Vec::with_capacity(rows.len());
    for row in rows {
        let firm_id = FirmId(row.str("firm_id")?);
        let date: NaiveDate = row.parse("date")?;
        let ret = row.f64("ret")?;
        if ret <= -1.0 {
            return Err(row.field_error("ret", format!("{ret} is not greater than -1")).into());
        }
        let market_cap = row.opt_f64("market_cap")?;
        if let Some(cap) = market_cap {
            if cap <= 0.0 {
                return Err(row.field_error("market_cap", format!("{cap} is not positive")).into());
            }
        }
        let share_code = row.i64("share_code")?;
        let exchange: Exchange = row.parse("exchange")?;
        if !seen.insert((firm_id.clone(), date)) {
            return Err(MarketDataError::DuplicateReturn {
                firm_id,
                date,
                line: row.line,
            });
        }
        out.push(ReturnRecord {
            firm_id,
            date,
            ret,
            market_cap,
            share_code,
            exchange,
        });
    }
    Ok(out)
}

/// Common stocks (share code 10 or 11) listed on NYSE, AMEX or NASDAQ.
pub fn filter_universe(records: &[ReturnRecord]) -> Vec<ReturnRecord> {
    records
        .iter()
        .filter(|r| in_universe(r))
        .cloned()
        .collect()
}

pub fn in_universe(record: &ReturnRecord) -> bool {
    matches!(record.share_code, 10 | 11)
        && matches!(record.exchange, Exchange::Nyse | Exchange::Amex | Exchange::Nasdaq)
}

/// Fraction of the NYSE cross-section defining "small".
pub const SIZE_PERCENTILE: f64 = 0.10;

/// Nearest-rank percentile: the `ceil(p * n)`-th smallest value (1-based).
pub fn nearest_rank(values: &mut [f64], p: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    let rank = ((p * n as f64).ceil() as usize).clamp(1, n);
    Some(values[rank - 1])
}

/// 10th percentile of NYSE market caps on `date`.
pub fn nyse_size_breakpoint(records: &[ReturnRecord], date: NaiveDate) -> Result<f64, MarketDataError> {
    let mut caps: Vec<f64> = records
        .iter()
        .filter(|r| r.date == date && r.exchange == Exchange::Nyse)
        .filter_map(|r| r.market_cap)
        .collect();
    nearest_rank(&mut caps, SIZE_PERCENTILE).ok_or(MarketDataError::UndefinedBreakpoint(date))
}

/// Daily breakpoints for every date that has at least one NYSE market cap.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Breakpoints(pub BTreeMap<NaiveDate, f64>);

impl Breakpoints {
    pub fn get(&self, date: NaiveDate) -> Option<f64> {
        self.0.get(&date).copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Recompute the breakpoint from each date's own cross-section.
pub fn daily_breakpoints(records: &[ReturnRecord]) -> Breakpoints {
    let mut by_date: BTreeMap<NaiveDate, Vec<f64>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.exchange == Exchange::Nyse) {
        if let Some(cap) = r.market_cap {
            by_date.entry(r.date).or_default().push(cap);
        }
    }
    Breakpoints(
        by_date
            .into_iter()
            .filter_map(|(date, mut caps)| nearest_rank(&mut caps, SIZE_PERCENTILE).map(|b| (date, b)))
            .collect(),
    )
}

/// Small iff the market cap is strictly below the breakpoint.
pub fn classify_size(record: &ReturnRecord, breakpoint: f64) -> Result<SizeClass, MarketDataError> {
    let cap = record.market_cap.ok_or_else(|| MarketDataError::MissingMarketCap {
        firm_id: record.firm_id.clone(),
        date: record.date,
    })?;
    Ok(classify_cap(cap, breakpoint))
}

pub fn classify_cap(cap: f64, breakpoint: f64) -> SizeClass {
    if cap < breakpoint {
        SizeClass::Small
    } else {
        SizeClass::NonSmall
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(firm: &str, cap: Option<f64>, share_code: i64, exchange: Exchange) -> ReturnRecord {
        ReturnRecord {
            firm_id: FirmId::from(firm),
            date: "2022-01-03".parse().unwrap(),
            ret: 0.01,
            market_cap: cap,
            share_code,
            exchange,
        }
    }

    #[test]
    fn empty_csv_with_header() {
        let csv = "firm_id,date,ret,market_cap,share_code,exchange\n";
        assert!(load_returns(csv.as_bytes(), DataFormat::Csv).unwrap().is_empty());
    }

    #[test]
    fn return_below_minus_one_is_rejected() {
        let csv = "firm_id,date,ret,market_cap,share_code,exchange\n10001,2022-01-03,-1.5,100,10,NYSE\n";
        let err = load_returns(csv.as_bytes(), DataFormat::Csv).unwrap_err();
        assert_eq!(err.to_string(), "line 2: field `ret`: -1.5 is not greater than -1");
    }

    #[test]
    fn nonpositive_cap_rejected_missing_cap_allowed() {
        let csv = "firm_id,date,ret,market_cap,share_code,exchange\n1,2022-01-03,0.1,0,10,NYSE\n";
        assert!(load_returns(csv.as_bytes(), DataFormat::Csv).is_err());
        let csv = "firm_id,date,ret,market_cap,share_code,exchange\n1,2022-01-03,0.1,,10,NYSE\n";
        let recs = load_returns(csv.as_bytes(), DataFormat::Csv).unwrap();
        assert_eq!(recs[0].market_cap, None);
    }

    #[test]
    fn duplicate_firm_date_rejected() {
        let csv = "firm_id,date,ret,market_cap,share_code,exchange\n\
                   1,2022-01-03,0.1,5,10,NYSE\n\
                   1,2022-01-03,0.2,5,10,NYSE\n";
        let err = load_returns(csv.as_bytes(), DataFormat::Csv).unwrap_err();
        assert!(matches!(err, MarketDataError::DuplicateReturn { line: 3, .. }), "{err}");
    }

    #[test]
    fn bad_date_names_line_and_field() {
        let csv = "firm_id,date,ret,market_cap,share_code,exchange\n1,2022-13-03,0.1,5,10,NYSE\n";
        let err = load_returns(csv.as_bytes(), DataFormat::Csv).unwrap_err().to_string();
        assert!(err.starts_with("line 2: field `date`"), "{err}");
    }

    #[test]
    fn jsonl_matches_csv() {
        let csv = "firm_id,date,ret,market_cap,share_code,exchange\n7,2022-01-03,0.0125,1.5e9,11,NASDAQ\n";
        let jsonl = r#"{"firm_id":"7","date":"2022-01-03","ret":0.0125,"market_cap":1.5e9,"share_code":11,"exchange":"NASDAQ"}"#;
        assert_eq!(
            load_returns(csv.as_bytes(), DataFormat::Csv).unwrap(),
            load_returns(jsonl.as_bytes(), DataFormat::Jsonl).unwrap()
        );
    }

    #[test]
    fn universe_filter_examples() {
        assert!(filter_universe(&[rec("a", Some(1.0), 12, Exchange::Nyse)]).is_empty());
        assert_eq!(filter_universe(&[rec("a", Some(1.0), 10, Exchange::Nyse)]).len(), 1);
        assert_eq!(filter_universe(&[rec("a", Some(1.0), 11, Exchange::Amex)]).len(), 1);
        assert!(filter_universe(&[rec("a", Some(1.0), 10, Exchange::Other)]).is_empty());
        assert!(filter_universe(&[]).is_empty());
    }

    #[test]
    fn breakpoint_nearest_rank() {
        let recs: Vec<_> = (1..=10)
            .map(|c| rec(&c.to_string(), Some(c as f64), 10, Exchange::Nyse))
            .collect();
        let date = recs[0].date;
        assert_eq!(nyse_size_breakpoint(&recs, date).unwrap(), 1.0);
        let small = recs
            .iter()
            .filter(|r| classify_size(r, 1.0).unwrap() == SizeClass::Small)
            .count();
        assert_eq!(small, 0);

        let single = [rec("x", Some(5.0), 10, Exchange::Nyse)];
        assert_eq!(nyse_size_breakpoint(&single, date).unwrap(), 5.0);

        let nasdaq_only = [rec("x", Some(5.0), 10, Exchange::Nasdaq)];
        assert!(matches!(
            nyse_size_breakpoint(&nasdaq_only, date),
            Err(MarketDataError::UndefinedBreakpoint(_))
        ));
        // missing caps are skipped
        let missing = [rec("x", None, 10, Exchange::Nyse)];
        assert!(nyse_size_breakpoint(&missing, date).is_err());
    }

    #[test]
    fn classify_boundaries() {
        let mut r = rec("a", Some(0.5), 10, Exchange::Nyse);
        assert_eq!(classify_size(&r, 1.0).unwrap(), SizeClass::Small);
        r.market_cap = Some(1.0);
        assert_eq!(classify_size(&r, 1.0).unwrap(), SizeClass::NonSmall);
        r.market_cap = None;
        assert!(classify_size(&r, 1.0).is_err());
    }

    // Independent oracle: sort, then take the ceil(0.1 n)-th order statistic by scanning.
    fn breakpoint_oracle(caps: &[f64]) -> f64 {
        let n = caps.len();
        let k = n.div_ceil(10);
        let k = k.max(1);
        // k-th smallest via counting: the value v with #{c < v} < k <= #{c <= v}
        *caps
            .iter()
            .find(|&&v| {
                let below = caps.iter().filter(|&&c| c < v).count();
                let at_most = caps.iter().filter(|&&c| c <= v).count();
                below < k && k <= at_most
            })
            .unwrap()
    }

    proptest! {
        #[test]
        fn filter_is_idempotent(codes in proptest::collection::vec((0i64..15, 0usize..4), 0..30)) {
            let exch = [Exchange::Nyse, Exchange::Amex, Exchange::Nasdaq, Exchange::Other];
            let recs: Vec<_> = codes.iter().enumerate()
                .map(|(i, &(c, e))| rec(&i.to_string(), Some(1.0), c, exch[e]))
                .collect();
            let once = filter_universe(&recs);
            prop_assert_eq!(filter_universe(&once), once.clone());
            prop_assert!(once.iter().all(|r| matches!(r.share_code, 10 | 11) && r.exchange != Exchange::Other));
        }

        #[test]
        fn breakpoint_matches_oracle_and_scales(
            caps in proptest::collection::vec(1.0f64..1e6, 1..60),
            scale in 0.01f64..100.0,
        ) {
            let recs: Vec<_> = caps.iter().enumerate()
                .map(|(i, &c)| rec(&i.to_string(), Some(c), 10, Exchange::Nyse))
                .collect();
            let date = recs[0].date;
            let bp = nyse_size_breakpoint(&recs, date).unwrap();
            prop_assert_eq!(bp, breakpoint_oracle(&caps));

            let mut reversed = recs.clone();
            reversed.reverse();
            prop_assert_eq!(nyse_size_breakpoint(&reversed, date).unwrap(), bp);

            let scaled: Vec<_> = recs.iter().map(|r| ReturnRecord { market_cap: r.market_cap.map(|c| c * scale), ..r.clone() }).collect();
            let scaled_bp = nyse_size_breakpoint(&scaled, date).unwrap();
            prop_assert!((scaled_bp - bp * scale).abs() <= 1e-12 * scaled_bp.abs());

            for r in &recs {
                let class = classify_size(r, bp).unwrap();
                prop_assert_eq!(class == SizeClass::Small, r.market_cap.unwrap() < bp);
            }
        }
    }
}
