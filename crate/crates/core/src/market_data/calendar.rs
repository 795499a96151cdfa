use std::io::Read;

use chrono::{DateTime, NaiveDate, NaiveTime, TimeZone, Utc};
use chrono_tz::Tz;
use serde::Serialize;

use crate::io::{read_rows, DataFormat, RecordError};

use super::MarketDataError;

pub const DEFAULT_OPEN: NaiveTime = match NaiveTime::from_hms_opt(9, 30, 0) {
    Some(t) => t,
    None => unreachable!(),
};

/// One trading session, in the calendar's local time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Session {
    pub date: NaiveDate,
    pub open: NaiveTime,
    pub close: NaiveTime,
}

/// Ordered trading sessions of one exchange plus its timezone.
#[derive(Debug, Clone)]
pub struct TradingCalendar {
    sessions: Vec<Session>,
    tz: Tz,
}

impl TradingCalendar {
    /// Build a calendar; session dates must be strictly increasing and every
    /// session must open before it closes.
    pub fn new(sessions: Vec<Session>, tz: Tz) -> Result<Self, MarketDataError> {
        if sessions.is_empty() {
            return Err(MarketDataError::Calendar("calendar has no sessions".into()));
        }
        for pair in sessions.windows(2) {
            if pair[1].date <= pair[0].date {
                return Err(MarketDataError::Calendar(format!(
                    "session dates not strictly increasing at {}",
                    pair[1].date
                )));
            }
        }
        if let Some(s) = sessions.iter().find(|s| s.open >= s.close) {
            return Err(MarketDataError::Calendar(format!(
                "session {} opens at or after its close",
                s.date
            )));
        }
        Ok(TradingCalendar { sessions, tz })
    }

    /// Weekday sessions between `first` and `last` inclusive with one close time.
    pub fn weekdays(
        first: NaiveDate,
        last: NaiveDate,
        close: NaiveTime,
        tz: Tz,
    ) -> Result<Self, MarketDataError> {
        use chrono::Datelike;
        let sessions = first
            .iter_days()
            .take_while(|d| *d <= last)
            .filter(|d| d.weekday().num_days_from_monday() < 5)
            .map(|date| Session {
                date,
                open: DEFAULT_OPEN,
                close,
            })
            .collect();
        TradingCalendar::new(sessions, tz)
    }

    /// Read the JSONL calendar file.
    ///
    /// Each line is `{"date": "YYYY-MM-DD", "close": "HH:MM", "timezone": "<IANA>"}`
    /// with an optional `"open": "HH:MM"` (default 09:30). All lines must
    /// share one timezone.
    pub fn load<R: Read>(source: R) -> Result<Self, MarketDataError> {
        let rows = read_rows(source, DataFormat::Jsonl, &["date", "close", "timezone"])?;
        let mut tz: Option<Tz> = None;
        let mut sessions = Vec::with_capacity(rows.len());
        for row in rows {
            let date: NaiveDate = row.parse("date")?;
            let close = parse_hhmm(&row.str("close")?)
                .ok_or_else(|| row.field_error("close", "expected HH:MM"))?;
            let open = match row.opt_str("open")? {
                Some(s) => parse_hhmm(&s).ok_or_else(|| row.field_error("open", "expected HH:MM"))?,
                None => DEFAULT_OPEN,
            };
            let zone_name = row.str("timezone")?;
            let zone: Tz = zone_name
                .parse()
                .map_err(|_| row.field_error("timezone", format!("unknown zone `{zone_name}`")))?;
            match tz {
                None => tz = Some(zone),
                Some(t) if t != zone => {
                    return Err(RecordError::field(row.line, "timezone", "calendar mixes timezones").into())
                }
                _ => {}
            }
            sessions.push(Session { date, open, close });
        }
        let tz = tz.ok_or_else(|| MarketDataError::Calendar("calendar has no sessions".into()))?;
        TradingCalendar::new(sessions, tz)
    }

    pub fn tz(&self) -> Tz {
        self.tz
    }

    pub fn sessions(&self) -> &[Session] {
        &self.sessions
    }

    pub fn first_date(&self) -> NaiveDate {
        self.sessions[0].date
    }

    pub fn last_date(&self) -> NaiveDate {
        self.sessions[self.sessions.len() - 1].date
    }

    fn index_of(&self, date: NaiveDate) -> Result<usize, usize> {
        self.sessions.binary_search_by_key(&date, |s| s.date)
    }

    pub fn session(&self, date: NaiveDate) -> Option<&Session> {
        self.index_of(date).ok().map(|i| &self.sessions[i])
    }

    pub fn is_trading_day(&self, date: NaiveDate) -> bool {
        self.index_of(date).is_ok()
    }

    /// First trading date strictly after `date`.
    pub fn next_trading_day(&self, date: NaiveDate) -> Option<NaiveDate> {
        let idx = match self.index_of(date) {
            Ok(i) => i + 1,
            Err(i) => i,
        };
        self.sessions.get(idx).map(|s| s.date)
    }

    /// First trading date on or after `date`.
    pub fn trading_day_on_or_after(&self, date: NaiveDate) -> Option<NaiveDate> {
        let idx = match self.index_of(date) {
            Ok(i) | Err(i) => i,
        };
        self.sessions.get(idx).map(|s| s.date)
    }

    /// The trading date `n` sessions after the trading date `date`.
    pub fn advance(&self, date: NaiveDate, n: usize) -> Option<NaiveDate> {
        let idx = self.index_of(date).ok()?;
        self.sessions.get(idx + n).map(|s| s.date)
    }

    /// Close of the session on `date` as an instant.
    pub fn close_instant(&self, date: NaiveDate) -> Option<DateTime<Utc>> {
        let session = self.session(date)?;
        self.tz
            .from_local_datetime(&date.and_time(session.close))
            .earliest()
            .map(|t| t.with_timezone(&Utc))
    }

    /// Open of the session on `date` as an instant.
    pub fn open_instant(&self, date: NaiveDate) -> Option<DateTime<Utc>> {
        let session = self.session(date)?;
        self.tz
            .from_local_datetime(&date.and_time(session.open))
            .earliest()
            .map(|t| t.with_timezone(&Utc))
    }
}

fn parse_hhmm(s: &str) -> Option<NaiveTime> {
    NaiveTime::parse_from_str(s.trim(), "%H:%M")
        .or_else(|_| NaiveTime::parse_from_str(s.trim(), "%H:%M:%S"))
        .ok()
}
