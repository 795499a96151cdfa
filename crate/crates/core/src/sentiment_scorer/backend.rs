use std::collections::HashMap;
use std::io::Read;

use serde::Deserialize;
use thiserror::Error;

use crate::io::{read_rows, DataFormat, RecordError};
use crate::news_ingest::normalize_text;

use super::prompt_hash;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed backend response: {0}")]
    Malformed(String),
    #[error("no recorded response for prompt hash {0}")]
    NotRecorded(String),
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("gave up after {attempts} attempts: {last}")]
    Exhausted {
        attempts: u32,
        #[source]
        last: Box<BackendError>,
    },
}

impl BackendError {
    /// Transport failures, rate limiting and server errors are worth retrying.
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Transport(_) => true,
            BackendError::Http { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

/// Something that completes a prompt.
pub trait ScorerBackend: Send + Sync {
    fn complete(&self, prompt: &str, model_id: &str, temperature: f64) -> Result<String, BackendError>;

    fn name(&self) -> &str;
}

/// Signed keyword lexicon.
#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    weights: HashMap<String, i32>,
}

pub const BUNDLED_LEXICON: &str = include_str!("../../resources/mock_lexicon.txt");

impl Lexicon {
    /// Lines of `+word` or `-word`; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, BackendError> {
        let mut weights = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (sign, word) = line.split_at(1);
            let weight = match sign {
                "+" => 1,
                "-" => -1,
                _ => {
                    return Err(BackendError::Config(format!(
                        "lexicon line {}: expected +word or -word",
                        i + 1
                    )))
                }
            };
            weights.insert(normalize_text(word), weight);
        }
        Ok(Lexicon { weights })
    }

    pub fn bundled() -> Self {
        Lexicon::parse(BUNDLED_LEXICON).expect("bundled lexicon is well formed")
    }

    /// Net signed hit count and the words that hit, in order of appearance.
    pub fn score(&self, text: &str) -> (i32, Vec<String>) {
        let normalized = normalize_text(text);
        let mut net = 0;
        let mut hits = Vec::new();
        for word in normalized.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()) {
            if let Some(w) = self.weights.get(word) {
                net += w;
                hits.push(word.to_string());
            }
        }
        (net, hits)
    }
}

/// Offline scorer: YES when positive lexicon words outnumber negative ones,
/// NO for the reverse, UNKNOWN otherwise.
#[derive(Debug, Clone)]
pub struct MockLexiconBackend {
    lexicon: Lexicon,
}

impl MockLexiconBackend {
    pub fn new(lexicon: Lexicon) -> Self {
        MockLexiconBackend { lexicon }
    }

    pub fn bundled() -> Self {
        MockLexiconBackend::new(Lexicon::bundled())
    }
}

impl ScorerBackend for MockLexiconBackend {
    fn complete(&self, prompt: &str, _model_id: &str, _temperature: f64) -> Result<String, BackendError> {
        let headline = prompt
            .rsplit_once("Headline:")
            .map(|(_, h)| h.trim())
            .ok_or_else(|| BackendError::Malformed("prompt has no headline section".into()))?;
        let (net, hits) = self.lexicon.score(headline);
        let reply = match net.signum() {
            1 => format!("YES\nThe headline contains favorable terms ({}).", hits.join(", ")),
            -1 => format!("NO\nThe headline contains unfavorable terms ({}).", hits.join(", ")),
            _ if hits.is_empty() => "UNKNOWN\nThe headline contains no scored terms.".to_string(),
            _ => format!("UNKNOWN\nFavorable and unfavorable terms balance ({}).", hits.join(", ")),
        };
        Ok(reply)
    }

    fn name(&self) -> &str {
        "mock"
    }
}

/// Replays recorded replies keyed by prompt hash.
#[derive(Debug, Clone, Default)]
pub struct ReplayBackend {
    responses: HashMap<String, String>,
}

#[derive(Deserialize)]
struct Recorded {
    prompt_hash: String,
    raw_response: String,
}

impl ReplayBackend {
    /// JSONL of `{"prompt_hash": ..., "raw_response": ...}`.
    pub fn load<R: Read>(source: R) -> Result<Self, RecordError> {
        let mut responses = HashMap::new();
        for row in read_rows(source, DataFormat::Jsonl, &["prompt_hash", "raw_response"])? {
            let rec = Recorded {
                prompt_hash: row.str("prompt_hash")?,
                raw_response: row.opt_str("raw_response")?.unwrap_or_default(),
            };
            responses.insert(rec.prompt_hash, rec.raw_response);
        }
        Ok(ReplayBackend { responses })
    }

    pub fn insert(&mut self, prompt: &str, raw_response: impl Into<String>) {
        self.responses.insert(prompt_hash(prompt), raw_response.into());
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

impl ScorerBackend for ReplayBackend {
    fn complete(&self, prompt: &str, _model_id: &str, _temperature: f64) -> Result<String, BackendError> {
        let hash = prompt_hash(prompt);
        self.responses
            .get(&hash)
            .cloned()
            .ok_or(BackendError::NotRecorded(hash))
    }

    fn name(&self) -> &str {
        "replay"
    }
}
