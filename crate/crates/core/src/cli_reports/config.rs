//! TOML run configuration.
//!
//! ```toml
//! seed = 20230102
//! output_dir = "out"             # overridden by --output-dir
//!
//! [inputs]                       # relative paths resolve against this file
//! headlines = "headlines.csv"    # .csv or .jsonl
//! returns = "returns.csv"
//! calendar = "calendar.jsonl"
//!
//! [ingest]
//! similarity_threshold = 0.6
//! dedup_day = "effective"        # or "calendar"
//!
//! [scorer]
//! backend = "mock"               # mock | replay | remote
//! model_id = "gpt-3.5-turbo"
//! term = "short"
//! parse_policy = "lenient"       # or "strict"
//! replay = "replies.jsonl"       # replay backend only
//! cache = "cache/scores.jsonl"   # default: <output_dir>/cache/scores.jsonl
//!
//! [scorer.remote]                # remote backend only; key read from api_key_env
//! api_key_env = "OPENAI_API_KEY"
//!
//! [timing]
//! return_convention = "close_to_close"
//! extra_lag_sessions = 0
//!
//! [backtest]
//! weighting = "equal"            # or "value"
//! cost_bps_per_side = 0.0
//!
//! [[regressions]]                # default: the six-column size/vendor layout
//! name = "All"
//! regressors = ["chatgpt_score"]
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::CliError;
use crate::backtest::BacktestOptions;
use crate::market_data::SizeClass;
use crate::news_ingest::{DedupDay, DEFAULT_SIMILARITY_THRESHOLD};
use crate::panel_regression::RegressionSpec;
use crate::sentiment_scorer::{hex, ParsePolicy, RemoteConfig, Term};
use crate::signal_builder::TimingOptions;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inputs {
    pub headlines: PathBuf,
    pub returns: PathBuf,
    pub calendar: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    pub similarity_threshold: f64,
    pub dedup_day: DedupDay,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            similarity_threshold: DEFAULT_SIMILARITY_THRESHOLD,
            dedup_day: DedupDay::Effective,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Mock,
    Replay,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScorerConfig {
    pub backend: BackendKind,
    pub model_id: String,
    pub term: Term,
    pub parse_policy: ParsePolicy,
    pub replay: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    pub remote: RemoteConfig,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        ScorerConfig {
            backend: BackendKind::Mock,
            model_id: "gpt-3.5-turbo".into(),
            term: Term::Short,
            parse_policy: ParsePolicy::Lenient,
            replay: None,
            cache: None,
            remote: RemoteConfig::default(),
        }
    }
}

/// Regression columns: full, small and non-small samples, each without and
/// with the vendor score.
pub fn default_regressions() -> Vec<RegressionSpec> {
    let samples = [("All", None), ("Small", Some(SizeClass::Small)), ("Non-small", Some(SizeClass::NonSmall))];
    samples
        .iter()
        .flat_map(|&(name, sample)| {
            [&["chatgpt_score"][..], &["chatgpt_score", "vendor_score"][..]]
                .into_iter()
                .map(move |regs| {
                    let spec = RegressionSpec::two_way(name, regs);
                    match sample {
                        Some(class) => spec.with_sample(class),
                        None => spec,
                    }
                })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing)]
    pub output_dir: Option<PathBuf>,
    pub inputs: Inputs,
    #[serde(default)]
    pub ingest: IngestConfig,
    #[serde(default)]
    pub scorer: ScorerConfig,
    #[serde(default)]
    pub timing: TimingOptions,
    #[serde(default)]
    pub backtest: BacktestOptions,
    #[serde(default = "default_regressions")]
    pub regressions: Vec<RegressionSpec>,
    /// Directory relative paths resolve against; not part of the file.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, CliError> {
        let mut config: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.base_dir = base_dir.to_path_buf();
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
        RunConfig::from_toml(&text, &base)
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    /// Check invariants and that every referenced input exists.
    pub fn validate(&self) -> Result<(), CliError> {
        let t = self.ingest.similarity_threshold;
        if !(0.0..=1.0).contains(&t) {
            return Err(CliError::Config(format!("similarity_threshold {t} outside [0, 1]")));
        }
        let mut required = vec![
            ("inputs.headlines", &self.inputs.headlines),
            ("inputs.returns", &self.inputs.returns),
            ("inputs.calendar", &self.inputs.calendar),
        ];
        if self.scorer.backend == BackendKind::Replay {
            match &self.scorer.replay {
                Some(p) => required.push(("scorer.replay", p)),
                None => return Err(CliError::Config("replay backend needs scorer.replay".into())),
            }
        }
        for (key, path) in required {
            let full = self.resolve(path);
            if !full.is_file() {
                return Err(CliError::Config(format!("{key}: {} does not exist", full.display())));
            }
        }
        if self.regressions.is_empty() {
            return Err(CliError::Config("no regressions configured".into()));
        }
        for spec in &self.regressions {
            spec.validate().map_err(|e| CliError::Config(format!("regression `{}`: {e}", spec.name)))?;
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form. Output location and the config
    /// file's own directory do not contribute.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(&canonical))
    }
}
