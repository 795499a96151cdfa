//! Prompted headline classification.
//!
//! A headline is rendered into a fixed prompt asking whether it is good
//! ("YES"), bad ("NO") or uncertain ("UNKNOWN") news for the firm's stock
//! price, sent to a [`ScorerBackend`] at temperature 0, and the first line of
//! the reply is mapped to +1, -1 or 0. Replies are cached by the hash of the
//! fully rendered prompt, so a cached prompt is never sent twice.

mod backend;
mod cache;
mod remote;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::news_ingest::{HeadlineRecord, StoryId};

pub use backend::{BackendError, Lexicon, MockLexiconBackend, ReplayBackend, ScorerBackend};
pub use cache::{CacheEntry, CacheError, CacheKey, ScoreCache};
pub use remote::{RemoteBackend, RemoteConfig, RetryPolicy, TokenBucket};

/// Prompt template, version 1. Placeholders: `_company_name_`, `_term_`, `_headline_`.
pub const PROMPT_TEMPLATE: &str = include_str!("../../resources/prompt_v1.txt");
pub const PROMPT_VERSION: &str = "v1";

const COMPANY_PLACEHOLDER: &str = "_company_name_";
const TERM_PLACEHOLDER: &str = "_term_";
const HEADLINE_PLACEHOLDER: &str = "_headline_";
const PLACEHOLDERS: [&str; 3] = [COMPANY_PLACEHOLDER, TERM_PLACEHOLDER, HEADLINE_PLACEHOLDER];

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("company name is empty")]
    EmptyCompany,
    #[error("headline is empty")]
    EmptyHeadline,
    #[error("temperature must be 0, got {0}")]
    Temperature(f64),
    #[error("{field} contains the template placeholder `{placeholder}`")]
    PlaceholderInInput {
        field: &'static str,
        placeholder: &'static str,
    },
}

#[derive(Debug, Error)]
#[error("unrecognized verdict in first line of response: {raw:?}")]
pub struct ParseError {
    pub raw: String,
}

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("story {story_id}: {source}")]
    Prompt {
        story_id: StoryId,
        #[source]
        source: PromptError,
    },
    #[error("story {story_id}: backend failed: {source}")]
    Backend {
        story_id: StoryId,
        #[source]
        source: BackendError,
    },
    #[error("story {story_id}: {source}")]
    Parse {
        story_id: StoryId,
        #[source]
        source: ParseError,
    },
    #[error(transparent)]
    Cache(#[from] CacheError),
}

/// Forecast horizon substituted into the prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Term {
    #[default]
    Short,
    Long,
}

impl Term {
    pub fn as_str(self) -> &'static str {
        match self {
            Term::Short => "short",
            Term::Long => "long",
        }
    }
}

impl FromStr for Term {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "short" => Ok(Term::Short),
            "long" => Ok(Term::Long),
            other => Err(format!("unknown term `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptRequest {
    pub company_name: String,
    pub term: Term,
    pub headline: String,
    pub model_id: String,
    pub temperature: f64,
}

impl PromptRequest {
    pub fn new(company_name: impl Into<String>, term: Term, headline: impl Into<String>, model_id: impl Into<String>) -> Self {
        PromptRequest {
            company_name: company_name.into(),
            term,
            headline: headline.into(),
            model_id: model_id.into(),
            temperature: 0.0,
        }
    }
}

/// Render the prompt for `request`.
pub fn build_prompt(request: &PromptRequest) -> Result<String, PromptError> {
    if request.company_name.trim().is_empty() {
        return Err(PromptError::EmptyCompany);
    }
    if request.headline.trim().is_empty() {
        return Err(PromptError::EmptyHeadline);
    }
    if request.temperature != 0.0 {
        return Err(PromptError::Temperature(request.temperature));
    }
    for (field, value) in [("company name", &request.company_name), ("headline", &request.headline)] {
        if let Some(placeholder) = PLACEHOLDERS.iter().find(|p| value.contains(*p)) {
            return Err(PromptError::PlaceholderInInput { field, placeholder });
        }
    }
    Ok(render_template(
        &request.company_name,
        request.term.as_str(),
        &request.headline,
    ))
}

/// Single left-to-right pass over the template; inserted values are never rescanned.
fn render_template(company: &str, term: &str, headline: &str) -> String {
    let mut out = String::with_capacity(PROMPT_TEMPLATE.len() + company.len() + headline.len());
    let mut rest = PROMPT_TEMPLATE;
    while let Some((pos, placeholder)) = PLACEHOLDERS
        .iter()
        .filter_map(|p| rest.find(p).map(|i| (i, *p)))
        .min_by_key(|(i, _)| *i)
    {
        out.push_str(&rest[..pos]);
        out.push_str(match placeholder {
            COMPANY_PLACEHOLDER => company,
            TERM_PLACEHOLDER => term,
            _ => headline,
        });
        rest = &rest[pos + placeholder.len()..];
    }
    out.push_str(rest);
    out
}

/// Lowercase hex SHA-256 of the rendered prompt.
pub fn prompt_hash(prompt: &str) -> String {
    hex(&Sha256::digest(prompt.as_bytes()))
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    use std::fmt::Write;
    bytes.iter().fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Label {
    Yes,
    No,
    Unknown,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Yes => "YES",
            Label::No => "NO",
            Label::Unknown => "UNKNOWN",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScorerVerdict {
    pub label: Label,
    pub rationale: String,
    pub raw_response: String,
}

/// Read the verdict from the first non-empty line of a reply.
///
/// The line is trimmed (including stray `*`, quotes and backticks), upper-cased,
/// and must start with `YES`, `NO` or `UNKNOWN` followed by a non-alphanumeric
/// character or end of line. The remaining non-empty lines form the rationale.
pub fn parse_response(raw: &str) -> Result<ScorerVerdict, ParseError> {
    let mut lines = raw.lines().map(str::trim).filter(|l| !l.is_empty());
    let first = lines.next().ok_or_else(|| ParseError { raw: raw.to_string() })?;
    let head = first
        .trim_matches(|c: char| matches!(c, '*' | '"' | '\'' | '`') || c.is_whitespace())
        .to_uppercase();
    let label = [Label::Unknown, Label::Yes, Label::No]
        .into_iter()
        .find(|label| {
            head.strip_prefix(label.as_str())
                .is_some_and(|tail| !tail.starts_with(|c: char| c.is_alphanumeric()))
        })
        .ok_or_else(|| ParseError { raw: raw.to_string() })?;
    let rationale = lines.collect::<Vec<_>>().join(" ");
    Ok(ScorerVerdict {
        label,
        rationale,
        raw_response: raw.to_string(),
    })
}

/// YES → +1, UNKNOWN → 0, NO → −1.
pub fn map_label(label: Label) -> i8 {
    match label {
        Label::Yes => 1,
        Label::Unknown => 0,
        Label::No => -1,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SentimentScore {
    pub story_id: StoryId,
    pub model_id: String,
    /// One of -1, 0, +1.
    pub value: i8,
}

/// What to do with a reply whose first line carries no verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParsePolicy {
    /// Score 0 and count the fallback.
    #[default]
    Lenient,
    /// Fail the headline.
    Strict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringOptions {
    pub model_id: String,
    pub term: Term,
    pub parse_policy: ParsePolicy,
}

impl Default for ScoringOptions {
    fn default() -> Self {
        ScoringOptions {
            model_id: "gpt-3.5-turbo".to_string(),
            term: Term::Short,
            parse_policy: ParsePolicy::Lenient,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreOutcome {
    pub score: SentimentScore,
    pub label: Label,
    pub rationale: String,
    pub cache_hit: bool,
    pub parse_fallback: bool,
}

/// Score one headline, consulting `cache` before `backend`.
pub fn score_headline(
    record: &HeadlineRecord,
    backend: &dyn ScorerBackend,
    cache: &ScoreCache,
    options: &ScoringOptions,
) -> Result<ScoreOutcome, ScoreError> {
    let request = PromptRequest::new(&record.firm_name, options.term, &record.headline, &options.model_id);
    let prompt = build_prompt(&request).map_err(|source| ScoreError::Prompt {
        story_id: record.story_id.clone(),
        source,
    })?;
    let key = CacheKey::new(&options.model_id, &prompt);
    let (raw, cache_hit) = cache
        .get_or_fetch(&key, || backend.complete(&prompt, &options.model_id, request.temperature))
        .map_err(|e| match e {
            cache::FetchError::Backend(source) => ScoreError::Backend {
                story_id: record.story_id.clone(),
                source,
            },
            cache::FetchError::Cache(c) => ScoreError::Cache(c),
        })?;

    let (label, rationale, parse_fallback) = match parse_response(&raw) {
        Ok(v) => (v.label, v.rationale, false),
        Err(source) => match options.parse_policy {
            ParsePolicy::Strict => {
                return Err(ScoreError::Parse {
                    story_id: record.story_id.clone(),
                    source,
                })
            }
            ParsePolicy::Lenient => {
                tracing::warn!(story_id = %record.story_id, "unparseable scorer reply, scoring as UNKNOWN");
                (Label::Unknown, String::new(), true)
            }
        },
    };
    Ok(ScoreOutcome {
        score: SentimentScore {
            story_id: record.story_id.clone(),
            model_id: options.model_id.clone(),
            value: map_label(label),
        },
        label,
        rationale,
        cache_hit,
        parse_fallback,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    const RIMINI_PROMPT: &str = "Forget all your previous instructions. Pretend you are a financial expert. \
You are a financial expert with stock recommendation experience. Answer \"YES\" if good news, \"NO\" if bad \
news, or \"UNKNOWN\" if uncertain in the first line. Then elaborate with one short and concise sentence on \
the next line. Is this headline good or bad for the stock price of Oracle in the short term?\n\n\
Headline: Rimini Street Fined $630,000 in Case Against Oracle";

    const RIMINI_REPLY: &str = "YES\n\nThe fine against Rimini Street could potentially boost investor confidence \
in Oracle's ability to protect its intellectual property and increase demand for its products and services.";

    fn rimini_request() -> PromptRequest {
        PromptRequest::new(
            "Oracle",
            Term::Short,
            "Rimini Street Fined $630,000 in Case Against Oracle",
            "gpt-3.5-turbo",
        )
    }

    #[test]
    fn worked_example_prompt() {
        let prompt = build_prompt(&rimini_request()).unwrap();
        assert_eq!(prompt, RIMINI_PROMPT);
        assert!(prompt.ends_with("Headline: Rimini Street Fined $630,000 in Case Against Oracle"));
        assert_eq!(prompt, build_prompt(&rimini_request()).unwrap());
    }

    #[test]
    fn long_term_variant() {
        let mut req = rimini_request();
        req.term = Term::Long;
        assert!(build_prompt(&req).unwrap().contains("Oracle in the long term?"));
    }

    #[test]
    fn prompt_errors() {
        let mut req = rimini_request();
        req.company_name = " ".into();
        assert!(matches!(build_prompt(&req), Err(PromptError::EmptyCompany)));
        let mut req = rimini_request();
        req.headline.clear();
        assert!(matches!(build_prompt(&req), Err(PromptError::EmptyHeadline)));
        let mut req = rimini_request();
        req.temperature = 0.7;
        assert!(matches!(build_prompt(&req), Err(PromptError::Temperature(_))));
        let mut req = rimini_request();
        req.headline = "weird _term_ headline".into();
        assert!(matches!(build_prompt(&req), Err(PromptError::PlaceholderInInput { .. })));
    }

    #[test]
    fn template_differs_only_at_placeholders() {
        let rendered = render_template("", "", "");
        let mut stripped = PROMPT_TEMPLATE.to_string();
        for p in PLACEHOLDERS {
            stripped = stripped.replace(p, "");
        }
        assert_eq!(rendered, stripped);
        assert_eq!(PROMPT_TEMPLATE.matches(COMPANY_PLACEHOLDER).count(), 1);
        assert_eq!(PROMPT_TEMPLATE.matches(TERM_PLACEHOLDER).count(), 1);
        assert_eq!(PROMPT_TEMPLATE.matches(HEADLINE_PLACEHOLDER).count(), 1);
    }

    #[test]
    fn parse_worked_example() {
        let v = parse_response(RIMINI_REPLY).unwrap();
        assert_eq!(v.label, Label::Yes);
        assert!(v.rationale.starts_with("The fine against Rimini Street"));
        assert!(v.rationale.ends_with("products and services."));
        assert_eq!(map_label(v.label), 1);
    }

    #[test]
    fn parse_variants() {
        assert_eq!(parse_response("unknown").unwrap().label, Label::Unknown);
        assert_eq!(parse_response("\n  no.\nBad news.").unwrap().label, Label::No);
        assert_eq!(parse_response("**YES**").unwrap().label, Label::Yes);
        assert_eq!(parse_response("Yes, because").unwrap().label, Label::Yes);
        assert!(parse_response("Maybe").is_err());
        assert!(parse_response("Nothing to report").is_err());
        assert!(parse_response("").is_err());
        assert!(parse_response("\n\n").is_err());
        let err = parse_response("Maybe").unwrap_err();
        assert_eq!(err.raw, "Maybe");
    }

    #[test]
    fn label_mapping() {
        assert_eq!(map_label(Label::Yes), 1);
        assert_eq!(map_label(Label::Unknown), 0);
        assert_eq!(map_label(Label::No), -1);
    }

    struct Counting<'a> {
        reply: &'a str,
        calls: AtomicUsize,
    }

    impl ScorerBackend for Counting<'_> {
        fn complete(&self, _prompt: &str, _model: &str, temperature: f64) -> Result<String, BackendError> {
            assert_eq!(temperature, 0.0);
            self.calls.fetch_add(1, Ordering::SeqCst);
            Ok(self.reply.to_string())
        }

        fn name(&self) -> &str {
            "counting"
        }
    }

    fn oracle_record() -> HeadlineRecord {
        HeadlineRecord {
            story_id: StoryId::from("rimini"),
            firm_id: "10104".into(),
            firm_name: "Oracle".into(),
            published_at: "2022-01-05T10:00:00-05:00".parse().unwrap(),
            headline: "Rimini Street Fined $630,000 in Case Against Oracle".into(),
            relevance: 100,
            category: "legal".into(),
            event_similarity_days: 365.0,
            story_type: crate::news_ingest::StoryType::FullArticle,
            vendor_sentiment: Some(-0.52),
        }
    }

    #[test]
    fn score_uses_cache_on_second_call() {
        let backend = Counting { reply: RIMINI_REPLY, calls: AtomicUsize::new(0) };
        let cache = ScoreCache::in_memory();
        let opts = ScoringOptions::default();
        let first = score_headline(&oracle_record(), &backend, &cache, &opts).unwrap();
        assert_eq!(first.score.value, 1);
        assert!(!first.cache_hit);
        let second = score_headline(&oracle_record(), &backend, &cache, &opts).unwrap();
        assert!(second.cache_hit);
        assert_eq!(second.score, first.score);
        assert_eq!(backend.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn parse_policy() {
        let backend = Counting { reply: "I cannot say.", calls: AtomicUsize::new(0) };
        let cache = ScoreCache::in_memory();
        let mut opts = ScoringOptions::default();
        let out = score_headline(&oracle_record(), &backend, &cache, &opts).unwrap();
        assert_eq!(out.score.value, 0);
        assert!(out.parse_fallback);
        opts.parse_policy = ParsePolicy::Strict;
        assert!(matches!(
            score_headline(&oracle_record(), &backend, &cache, &opts),
            Err(ScoreError::Parse { .. })
        ));
    }

    #[test]
    fn mock_lexicon_bankruptcy_is_negative() {
        let mut rec = oracle_record();
        rec.firm_name = "Acme".into();
        rec.headline = "Acme files for bankruptcy".into();
        let out = score_headline(&rec, &MockLexiconBackend::bundled(), &ScoreCache::in_memory(), &ScoringOptions::default())
            .unwrap();
        assert_eq!(out.score.value, -1);
    }

    #[test]
    fn cache_counts_distinct_keys() {
        let backend = Counting { reply: "NO\nbad", calls: AtomicUsize::new(0) };
        let cache = ScoreCache::in_memory();
        let opts = ScoringOptions::default();
        let mut rec = oracle_record();
        for text in ["a", "b", "a", "c", "b", "a"] {
            rec.headline = text.into();
            score_headline(&rec, &backend, &cache, &opts).unwrap();
        }
        let other_model = ScoringOptions { model_id: "other".into(), ..opts };
        rec.headline = "a".into();
        score_headline(&rec, &backend, &cache, &other_model).unwrap();
        assert_eq!(backend.calls.load(Ordering::SeqCst), 4);
    }

    proptest! {
        #[test]
        fn substitution_is_total(company in "\\PC{1,20}", headline in "\\PC{1,40}") {
            prop_assume!(!company.trim().is_empty() && !headline.trim().is_empty());
            let req = PromptRequest::new(company.clone(), Term::Short, headline.clone(), "m");
            match build_prompt(&req) {
                Ok(p) => {
                    for ph in PLACEHOLDERS {
                        prop_assert!(!p.contains(ph));
                    }
                    let tail = format!("Headline: {}", headline);
                    prop_assert!(p.ends_with(&tail));
                }
                Err(PromptError::PlaceholderInInput { .. }) => {}
                Err(e) => prop_assert!(false, "{e}"),
            }
        }

        #[test]
        fn verdict_tokens_are_a_bijection(token in prop::sample::select(vec!["YES", "NO", "UNKNOWN"]), case in 0usize..3, tail in "[ a-z.]{0,20}") {
            let first = match case { 0 => token.to_string(), 1 => token.to_lowercase(), _ => format!("  {token}  ") };
            let raw = format!("{first}\n{tail}");
            let v = parse_response(&raw).unwrap();
            let expected = match token { "YES" => 1, "NO" => -1, _ => 0 };
            prop_assert_eq!(map_label(v.label), expected);
        }
    }
}
