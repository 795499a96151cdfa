//! Headline feed parsing, the relevance/story-type/category/novelty filter,
//! and near-duplicate removal within firm-day groups.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::Read;
use std::str::FromStr;

use chrono::{DateTime, FixedOffset, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::io::{read_rows, DataFormat, RecordError};
use crate::market_data::FirmId;
use crate::text_distance::similarity_chars;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error("duplicate story_id `{story_id}` (line {line})")]
    DuplicateStory { story_id: StoryId, line: u64 },
    #[error("similarity threshold {0} outside [0, 1]")]
    Threshold(f64),
    #[error("no effective day for story `{0}`")]
    MissingDay(StoryId),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StoryId(pub String);

impl fmt::Display for StoryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for StoryId {
    fn from(s: &str) -> Self {
        StoryId(s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StoryType {
    FullArticle,
    PressRelease,
    Other,
}

impl FromStr for StoryType {
    type Err = std::convert::Infallible;

    /// Accepts vendor spellings such as `FULL-ARTICLE`, `full_article` or
    /// `PressRelease`; anything else is `Other`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| !matches!(c, '-' | '_' | ' '))
            .flat_map(char::to_uppercase)
            .collect();
        Ok(match key.as_str() {
            "FULLARTICLE" => StoryType::FullArticle,
            "PRESSRELEASE" => StoryType::PressRelease,
            _ => StoryType::Other,
        })
    }
}

/// One vendor headline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadlineRecord {
    pub story_id: StoryId,
    pub firm_id: FirmId,
    pub firm_name: String,
    pub published_at: DateTime<FixedOffset>,
    pub headline: String,
    /// 0..=100; 100 means the firm is the predominant subject.
    pub relevance: u8,
    pub category: String,
    /// Days since the vendor last saw a similar story about the firm.
    pub event_similarity_days: f64,
    pub story_type: StoryType,
    /// Vendor's own sentiment score, treated as an opaque regressor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vendor_sentiment: Option<f64>,
}

pub const HEADLINE_FIELDS: [&str; 9] = [
    "story_id",
    "firm_id",
    "firm_name",
    "published_at",
    "headline",
    "relevance",
    "category",
    "event_similarity_days",
    "story_type",
];

/// Parse a headline feed. Timestamps are RFC 3339 / ISO-8601 with an offset.
pub fn parse_headlines<R: Read>(source: R, format: DataFormat) -> Result<Vec<HeadlineRecord>, IngestError> {
    let rows = read_rows(source, format, &HEADLINE_FIELDS)?;
    let mut seen = HashSet::with_capacity(rows.len());
    let mut out = Vec::with_capacity(rows.len());
    for row in rows {
        let story_id = StoryId(row.str("story_id")?);
        let firm_id = FirmId(row.str("firm_id")?);
        let firm_name = row.str("firm_name")?;
        let stamp = row.str("published_at")?;
        let published_at = DateTime::parse_from_rfc3339(stamp.trim())
            .map_err(|e| row.field_error("published_at", format!("`{stamp}`: {e}")))?;
        let headline = row.opt_str("headline")?.unwrap_or_default();
        if headline.trim().is_empty() {
            return Err(row.field_error("headline", "headline is empty").into());
        }
        let relevance = row.i64("relevance")?;
        if !(0..=100).contains(&relevance) {
            return Err(row
                .field_error("relevance", format!("{relevance} outside 0..=100"))
                .into());
        }
        let category = row.opt_str("category")?.unwrap_or_default();
        let event_similarity_days = row.f64("event_similarity_days")?;
        if event_similarity_days < 0.0 {
            return Err(row
                .field_error("event_similarity_days", "must be nonnegative")
                .into());
        }
        let story_type: StoryType = row.parse("story_type")?;
        let vendor_sentiment = row.opt_f64("vendor_sentiment")?;
        if !seen.insert(story_id.clone()) {
            return Err(IngestError::DuplicateStory {
                story_id,
                line: row.line,
            });
        }
        out.push(HeadlineRecord {
            story_id,
            firm_id,
            firm_name,
            published_at,
            headline,
            relevance: relevance as u8,
            category,
            event_similarity_days,
            story_type,
            vendor_sentiment,
        });
    }
    Ok(out)
}

/// Categories that only restate the day's price move.
pub const EXCLUDED_CATEGORIES: [&str; 2] = ["stock-gain", "stock-loss"];
pub const REQUIRED_RELEVANCE: u8 = 100;
pub const MIN_EVENT_SIMILARITY_DAYS: f64 = 90.0;

/// First filter a headline fails, checked in declaration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FilterReason {
    Relevance,
    StoryType,
    Category,
    EventSimilarity,
}

impl FilterReason {
    pub fn as_str(self) -> &'static str {
        match self {
            FilterReason::Relevance => "relevance",
            FilterReason::StoryType => "story_type",
            FilterReason::Category => "category",
            FilterReason::EventSimilarity => "event_similarity",
        }
    }
}

pub fn filter_reason(r: &HeadlineRecord) -> Option<FilterReason> {
    if r.relevance != REQUIRED_RELEVANCE {
        Some(FilterReason::Relevance)
    } else if !matches!(r.story_type, StoryType::FullArticle | StoryType::PressRelease) {
        Some(FilterReason::StoryType)
    } else if EXCLUDED_CATEGORIES.contains(&r.category.as_str()) {
        Some(FilterReason::Category)
    } else if r.event_similarity_days <= MIN_EVENT_SIMILARITY_DAYS {
        Some(FilterReason::EventSimilarity)
    } else {
        None
    }
}

pub fn passes_filter(r: &HeadlineRecord) -> bool {
    filter_reason(r).is_none()
}

pub fn filter_headlines(records: &[HeadlineRecord]) -> Vec<HeadlineRecord> {
    records.iter().filter(|r| passes_filter(r)).cloned().collect()
}

/// NFC, case-fold, then collapse whitespace runs to one space (trimmed).
pub fn normalize_text(text: &str) -> String {
    let nfc: String = text.nfc().collect();
    let folded = caseless::default_case_fold_str(&nfc);
    folded.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub const DEFAULT_SIMILARITY_THRESHOLD: f64 = 0.6;

/// Which day a headline belongs to when grouping for deduplication.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DedupDay {
    /// Trading date after the after-close rule.
    #[default]
    Effective,
    /// Local calendar date in the exchange timezone.
    Calendar,
}

impl FromStr for DedupDay {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "effective" => Ok(DedupDay::Effective),
            "calendar" => Ok(DedupDay::Calendar),
            other => Err(format!("unknown dedup day `{other}` (expected effective|calendar)")),
        }
    }
}

/// Drop near-duplicate headlines within each (firm, day) group.
///
/// Records of a group are visited by `(published_at, story_id)`. A record is
/// kept unless its normalized similarity to an already kept record of the
/// same group exceeds `threshold`. Kept records are returned in input order.
pub fn dedup_firm_day(
    records: &[HeadlineRecord],
    threshold: f64,
    effective_day: &HashMap<StoryId, NaiveDate>,
) -> Result<Vec<HeadlineRecord>, IngestError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(IngestError::Threshold(threshold));
    }
    let mut groups: BTreeMap<(&FirmId, NaiveDate), Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        let day = *effective_day
            .get(&r.story_id)
            .ok_or_else(|| IngestError::MissingDay(r.story_id.clone()))?;
        groups.entry((&r.firm_id, day)).or_default().push(i);
    }

    let mut keep = vec![false; records.len()];
    for members in groups.values_mut() {
        members.sort_by(|&a, &b| {
            let (ra, rb) = (&records[a], &records[b]);
            ra.published_at
                .cmp(&rb.published_at)
                .then_with(|| ra.story_id.cmp(&rb.story_id))
        });
        let mut kept: Vec<Vec<char>> = Vec::new();
        for &i in members.iter() {
            let text: Vec<char> = normalize_text(&records[i].headline).chars().collect();
            let duplicate = kept
                .iter()
                .any(|prior| similarity_chars(&text, prior) > threshold);
            if !duplicate {
                keep[i] = true;
                kept.push(text);
            }
        }
    }
    Ok(records
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(r, _)| r.clone())
        .collect())
}
