//! Pipeline stages behind the `newsignal` subcommands.
//!
//! Each stage reads its upstream artifacts from the output directory, writes
//! its own artifacts plus a `report.json` with deterministic counters, and
//! records digests and counters in `manifest.json`. A stage whose inputs are
//! missing fails with an error naming the command that produces them.
//!
//! | stage    | reads                                   | writes |
//! |----------|-----------------------------------------|--------|
//! | ingest   | configured inputs                       | `ingest/headlines.jsonl`, `ingest/returns.jsonl` |
//! | score    | `ingest/headlines.jsonl`                | `score/scores.jsonl` |
//! | signal   | ingest + score artifacts, calendar      | `signal/signals.csv`, `signal/panel.csv` |
//! | regress  | `signal/panel.csv`                      | `regress/results.json`, `regress/table.txt` |
//! | backtest | `signal/panel.csv`, `ingest/returns.jsonl` | `backtest/{all,small,non_small}.csv`, `backtest/summary.json` |
//! | report   | regress + backtest artifacts            | `report/tables.txt`, `report/cumulative.csv` |

mod config;
mod manifest;

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{default_regressions, BackendKind, IngestConfig, Inputs, RunConfig, ScorerConfig};
pub use manifest::{sha256_file, Counters, Manifest, StageRecord, MANIFEST_FILE};

use crate::backtest::{form_portfolio, split_by_size, write_series_csv, BacktestError, BacktestOptions, Summary};
use crate::io::{write_csv, write_jsonl, DataFormat, RecordError};
use crate::market_data::{daily_breakpoints, filter_universe, load_returns, MarketDataError, ReturnRecord, TradingCalendar};
use crate::news_ingest::{dedup_firm_day, filter_reason, parse_headlines, DedupDay, HeadlineRecord, IngestError, StoryId};
use crate::panel_regression::{estimate, render_table, RegressionResult, RegressionSpec};
use crate::sentiment_scorer::{
    score_headline, BackendError, CacheError, Label, MockLexiconBackend, RemoteBackend, ReplayBackend, ScoreCache,
    ScoreError, ScorerBackend, ScoringOptions, SentimentScore,
};
use crate::signal_builder::{
    aggregate_firm_day, assign_effective_date_with, build_panel, read_panel_csv, write_panel_csv, SignalError,
};
use crate::synthetic::{generate, write_corpus, SyntheticSpec, CALENDAR_FILE, HEADLINES_FILE, RETURNS_FILE};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("missing {artifact}; run `newsignal {command}` first")]
    MissingArtifact { artifact: String, command: &'static str },
    #[error("artifacts changed since they were recorded: {}; rerun the producing commands", .0.join(", "))]
    ArtifactChanged(Vec<String>),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Corrupt { path: String, message: String },
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    MarketData(#[from] MarketDataError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Backtest(#[from] BacktestError),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Stable machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::MissingArtifact { .. } => "missing_artifact",
            CliError::ArtifactChanged(_) => "artifact_changed",
            CliError::Io { .. } => "io",
            CliError::Corrupt { .. } => "corrupt_artifact",
            CliError::Record(_) => "input_record",
            CliError::Ingest(_) => "ingest",
            CliError::MarketData(_) => "market_data",
            CliError::Score(_) => "score",
            CliError::Backend(_) => "backend",
            CliError::Cache(_) => "cache",
            CliError::Signal(_) => "signal",
            CliError::Backtest(_) => "backtest",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Ingest,
    Score,
    Signal,
    Regress,
    Backtest,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Ingest,
        Stage::Score,
        Stage::Signal,
        Stage::Regress,
        Stage::Backtest,
        Stage::Report,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Score => "score",
            Stage::Signal => "signal",
            Stage::Regress => "regress",
            Stage::Backtest => "backtest",
            Stage::Report => "report",
        }
    }
}

const HEADLINES_ARTIFACT: &str = "ingest/headlines.jsonl";
const RETURNS_ARTIFACT: &str = "ingest/returns.jsonl";
const SCORES_ARTIFACT: &str = "score/scores.jsonl";
const SIGNALS_ARTIFACT: &str = "signal/signals.csv";
const PANEL_ARTIFACT: &str = "signal/panel.csv";
const RESULTS_ARTIFACT: &str = "regress/results.json";
const TABLE_ARTIFACT: &str = "regress/table.txt";
const BACKTEST_SUMMARY_ARTIFACT: &str = "backtest/summary.json";
const REPORT_TABLES_ARTIFACT: &str = "report/tables.txt";
const REPORT_CUMULATIVE_ARTIFACT: &str = "report/cumulative.csv";
const PORTFOLIOS: [&str; 3] = ["all", "small", "non_small"];

/// Resolved config plus output location.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: RunConfig,
    pub out_dir: PathBuf,
    pub config_hash: String,
}

/// What a stage did: its deterministic counters and those that depend on
/// cache state (recorded only in the manifest).
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StageSummary {
    pub stage: String,
    pub counters: Counters,
    pub volatile: Counters,
    pub artifacts: Vec<String>,
}

#[derive(Serialize)]
struct StageReport<'a> {
    stage: &'a str,
    config_hash: &'a str,
    counters: &'a Counters,
}

impl Context {
    /// Validate `config` and pick the output directory: the explicit
    /// override, else `output_dir` from the config, else `./out`.
    pub fn new(config: RunConfig, out_dir: Option<PathBuf>) -> Result<Self, CliError> {
        config.validate()?;
        let out_dir = out_dir
            .or_else(|| config.output_dir.as_ref().map(|p| config.resolve(p)))
            .unwrap_or_else(|| PathBuf::from("out"));
        fs::create_dir_all(&out_dir).map_err(|e| CliError::io(&out_dir, e))?;
        let config_hash = config.hash();
        Ok(Context {
            config,
            out_dir,
            config_hash,
        })
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.out_dir.join(rel)
    }

    fn require(&self, rel: &str, producer: Stage) -> Result<PathBuf, CliError> {
        let path = self.path(rel);
        if !path.is_file() {
            return Err(CliError::MissingArtifact {
                artifact: rel.to_string(),
                command: producer.as_str(),
            });
        }
        Ok(path)
    }

    fn create(&self, rel: &str) -> Result<BufWriter<fs::File>, CliError> {
        let path = self.path(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        let file = fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
        Ok(BufWriter::new(file))
    }

    fn write_json<T: Serialize>(&self, rel: &str, value: &T) -> Result<(), CliError> {
        let mut w = self.create(rel)?;
        serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::io(&self.path(rel), e.into()))?;
        w.write_all(b"\n").map_err(|e| CliError::io(&self.path(rel), e))?;
        w.flush().map_err(|e| CliError::io(&self.path(rel), e))
    }

    fn write_text(&self, rel: &str, text: &str) -> Result<(), CliError> {
        let mut w = self.create(rel)?;
        w.write_all(text.as_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| CliError::io(&self.path(rel), e))
    }

    fn input(&self, path: &Path) -> Result<(fs::File, DataFormat), CliError> {
        let full = self.config.resolve(path);
        let file = fs::File::open(&full).map_err(|e| CliError::io(&full, e))?;
        Ok((file, DataFormat::from_path(&full)))
    }

    fn calendar(&self) -> Result<TradingCalendar, CliError> {
        let (file, _) = self.input(&self.config.inputs.calendar)?;
        Ok(TradingCalendar::load(BufReader::new(file))?)
    }

    /// Write the stage report, update the manifest and return the summary.
    fn finish(
        &self,
        stage: Stage,
        counters: Counters,
        volatile: Counters,
        mut artifacts: Vec<String>,
    ) -> Result<StageSummary, CliError> {
        let report_rel = format!("{}/report.json", stage.as_str());
        self.write_json(
            &report_rel,
            &StageReport {
                stage: stage.as_str(),
                config_hash: &self.config_hash,
                counters: &counters,
            },
        )?;
        artifacts.push(report_rel);
        let mut manifest = Manifest::load_or_default(&self.out_dir)?;
        if stage == Stage::Ingest {
            manifest.inputs.clear();
            let inputs = &self.config.inputs;
            for p in [&inputs.headlines, &inputs.returns, &inputs.calendar] {
                manifest
                    .inputs
                    .insert(p.display().to_string(), sha256_file(&self.config.resolve(p))?);
            }
            if let Some(replay) = &self.config.scorer.replay {
                manifest
                    .inputs
                    .insert(replay.display().to_string(), sha256_file(&self.config.resolve(replay))?);
            }
        }
        let mut all = counters.clone();
        all.extend(volatile.clone());
        manifest.record_stage(&self.out_dir, stage.as_str(), &self.config_hash, all, &artifacts)?;
        manifest.save(&self.out_dir)?;
        tracing::info!(stage = stage.as_str(), "stage complete");
        Ok(StageSummary {
            stage: stage.as_str().to_string(),
            counters,
            volatile,
            artifacts,
        })
    }

    fn check_upstream(&self, stage: Stage) -> Result<(), CliError> {
        let manifest = Manifest::load_or_default(&self.out_dir)?;
        if let Some(record) = manifest.stages.get(stage.as_str()) {
            if record.config_hash != self.config_hash {
                tracing::warn!(
                    upstream = stage.as_str(),
                    "upstream artifacts were produced under a different config; rerun `newsignal {}`",
                    stage.as_str()
                );
            }
        }
        Ok(())
    }
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| CliError::Corrupt {
            path: path.display().to_string(),
            message: format!("line {}: {e}", i + 1),
        })?);
    }
    Ok(out)
}

fn counters<const N: usize>(pairs: [(&str, usize); N]) -> Counters {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v as u64)).collect()
}

/// Parse, filter and deduplicate headlines; restrict returns to the universe.
///
/// Counters reconcile: `headlines_parsed` equals the sum of the
/// `filtered_*` counters, `outside_calendar`, `dedup_dropped` and
/// `headlines_kept`.
pub fn cmd_ingest(ctx: &Context) -> Result<StageSummary, CliError> {
    let cfg = &ctx.config;
    let (file, format) = ctx.input(&cfg.inputs.headlines)?;
    let headlines = parse_headlines(BufReader::new(file), format)?;
    let (file, format) = ctx.input(&cfg.inputs.returns)?;
    let returns = load_returns(BufReader::new(file), format)?;
    let calendar = ctx.calendar()?;

    let mut c: Counters = Counters::new();
    c.insert("headlines_parsed".into(), headlines.len() as u64);
    for key in ["relevance", "story_type", "category", "event_similarity"] {
        c.insert(format!("filtered_{key}"), 0);
    }
    let mut candidates = Vec::new();
    let mut day_of: HashMap<StoryId, NaiveDate> = HashMap::new();
    let mut outside = 0usize;
    for h in headlines {
        if let Some(reason) = filter_reason(&h) {
            *c.entry(format!("filtered_{}", reason.as_str())).or_default() += 1;
            continue;
        }
        let Ok(effective) = assign_effective_date_with(&h.published_at, &calendar, &cfg.timing) else {
            outside += 1;
            continue;
        };
        let day = match cfg.ingest.dedup_day {
            DedupDay::Effective => effective,
            DedupDay::Calendar => h.published_at.with_timezone(&calendar.tz()).date_naive(),
        };
        day_of.insert(h.story_id.clone(), day);
        candidates.push(h);
    }
    let kept = dedup_firm_day(&candidates, cfg.ingest.similarity_threshold, &day_of)?;
    c.insert("outside_calendar".into(), outside as u64);
    c.insert("dedup_dropped".into(), (candidates.len() - kept.len()) as u64);
    c.insert("headlines_kept".into(), kept.len() as u64);

    let universe = filter_universe(&returns);
    c.insert("returns_parsed".into(), returns.len() as u64);
    c.insert("returns_out_of_universe".into(), (returns.len() - universe.len()) as u64);
    c.insert("returns_kept".into(), universe.len() as u64);

    let mut w = ctx.create(HEADLINES_ARTIFACT)?;
    write_jsonl(&mut w, &kept).map_err(|e| CliError::io(&ctx.path(HEADLINES_ARTIFACT), e))?;
    w.flush().map_err(|e| CliError::io(&ctx.path(HEADLINES_ARTIFACT), e))?;
    let mut w = ctx.create(RETURNS_ARTIFACT)?;
    write_jsonl(&mut w, &universe).map_err(|e| CliError::io(&ctx.path(RETURNS_ARTIFACT), e))?;
    w.flush().map_err(|e| CliError::io(&ctx.path(RETURNS_ARTIFACT), e))?;

    ctx.finish(
        Stage::Ingest,
        c,
        Counters::new(),
        vec![HEADLINES_ARTIFACT.into(), RETURNS_ARTIFACT.into()],
    )
}

/// One line of `score/scores.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub story_id: StoryId,
    pub model_id: String,
    pub value: i8,
    pub label: Label,
    pub rationale: String,
    pub parse_fallback: bool,
}

fn backend(ctx: &Context) -> Result<Box<dyn ScorerBackend>, CliError> {
    let scorer = &ctx.config.scorer;
    Ok(match scorer.backend {
        BackendKind::Mock => Box::new(MockLexiconBackend::bundled()),
        BackendKind::Replay => {
            let path = ctx.config.resolve(scorer.replay.as_ref().expect("validated"));
            let file = fs::File::open(&path).map_err(|e| CliError::io(&path, e))?;
            Box::new(ReplayBackend::load(BufReader::new(file))?)
        }
        BackendKind::Remote => Box::new(RemoteBackend::from_env(scorer.remote.clone())?),
    })
}

/// Score every kept headline, consulting the reply cache first.
pub fn cmd_score(ctx: &Context) -> Result<StageSummary, CliError> {
    let path = ctx.require(HEADLINES_ARTIFACT, Stage::Ingest)?;
    ctx.check_upstream(Stage::Ingest)?;
    let headlines: Vec<HeadlineRecord> = read_jsonl(&path)?;
    let scorer = &ctx.config.scorer;
    let cache_path = match &scorer.cache {
        Some(p) => ctx.config.resolve(p),
        None => ctx.path("cache/scores.jsonl"),
    };
    let cache = ScoreCache::open(&cache_path)?;
    let backend = backend(ctx)?;
    let options = ScoringOptions {
        model_id: scorer.model_id.clone(),
        term: scorer.term,
        parse_policy: scorer.parse_policy,
    };
    let outcomes = headlines
        .par_iter()
        .map(|h| score_headline(h, backend.as_ref(), &cache, &options))
        .collect::<Result<Vec<_>, _>>()?;

    let mut labels = [0usize; 3];
    let mut hits = 0;
    let mut fallbacks = 0;
    let rows: Vec<ScoreRow> = outcomes
        .into_iter()
        .map(|o| {
            labels[match o.label {
                Label::Yes => 0,
                Label::No => 1,
                Label::Unknown => 2,
            }] += 1;
            hits += usize::from(o.cache_hit);
            fallbacks += usize::from(o.parse_fallback);
            ScoreRow {
                story_id: o.score.story_id,
                model_id: o.score.model_id,
                value: o.score.value,
                label: o.label,
                rationale: o.rationale,
                parse_fallback: o.parse_fallback,
            }
        })
        .collect();
    let mut w = ctx.create(SCORES_ARTIFACT)?;
    write_jsonl(&mut w, &rows).map_err(|e| CliError::io(&ctx.path(SCORES_ARTIFACT), e))?;
    w.flush().map_err(|e| CliError::io(&ctx.path(SCORES_ARTIFACT), e))?;

    let c = counters([
        ("headlines_scored", rows.len()),
        ("label_yes", labels[0]),
        ("label_no", labels[1]),
        ("label_unknown", labels[2]),
        ("parse_fallbacks", fallbacks),
    ]);
    let volatile = counters([("cache_hits", hits), ("backend_calls", rows.len() - hits)]);
    ctx.finish(Stage::Score, c, volatile, vec![SCORES_ARTIFACT.into()])
}

/// Aggregate scores to firm-days and join them to same-session returns.
pub fn cmd_signal(ctx: &Context) -> Result<StageSummary, CliError> {
    let headlines_path = ctx.require(HEADLINES_ARTIFACT, Stage::Ingest)?;
    let returns_path = ctx.require(RETURNS_ARTIFACT, Stage::Ingest)?;
    let scores_path = ctx.require(SCORES_ARTIFACT, Stage::Score)?;
    ctx.check_upstream(Stage::Score)?;
    let headlines: Vec<HeadlineRecord> = read_jsonl(&headlines_path)?;
    let returns: Vec<ReturnRecord> = read_jsonl(&returns_path)?;
    let rows: Vec<ScoreRow> = read_jsonl(&scores_path)?;
    let by_story: HashMap<&StoryId, &ScoreRow> = rows.iter().map(|r| (&r.story_id, r)).collect();
    let mut pairs = Vec::with_capacity(headlines.len());
    for h in headlines {
        let row = by_story.get(&h.story_id).ok_or_else(|| CliError::MissingArtifact {
            artifact: format!("{SCORES_ARTIFACT} entry for story {}", h.story_id),
            command: Stage::Score.as_str(),
        })?;
        let score = SentimentScore {
            story_id: row.story_id.clone(),
            model_id: row.model_id.clone(),
            value: row.value,
        };
        pairs.push((h, score));
    }
    let calendar = ctx.calendar()?;
    let signals = aggregate_firm_day(&pairs, &calendar, &ctx.config.timing)?;
    let panel = build_panel(&signals, &returns, &calendar);

    let mut w = ctx.create(SIGNALS_ARTIFACT)?;
    write_csv(&mut w, &signals).map_err(|e| CliError::io(&ctx.path(SIGNALS_ARTIFACT), e))?;
    w.flush().map_err(|e| CliError::io(&ctx.path(SIGNALS_ARTIFACT), e))?;
    let mut w = ctx.create(PANEL_ARTIFACT)?;
    write_panel_csv(&mut w, &panel.observations).map_err(|e| CliError::io(&ctx.path(PANEL_ARTIFACT), e))?;
    w.flush().map_err(|e| CliError::io(&ctx.path(PANEL_ARTIFACT), e))?;

    let s = &panel.stats;
    let c = counters([
        ("headlines_in", pairs.len()),
        ("firm_day_signals", s.signals),
        ("panel_rows", s.matched),
        ("dropped_signals", s.dropped_signals),
        ("returns_without_signal", s.returns_without_signal),
        ("unclassified_size", s.unclassified),
    ]);
    ctx.finish(
        Stage::Signal,
        c,
        Counters::new(),
        vec![SIGNALS_ARTIFACT.into(), PANEL_ARTIFACT.into()],
    )
}

fn load_panel(ctx: &Context) -> Result<Vec<crate::signal_builder::PanelObservation>, CliError> {
    let path = ctx.require(PANEL_ARTIFACT, Stage::Signal)?;
    ctx.check_upstream(Stage::Signal)?;
    let file = fs::File::open(&path).map_err(|e| CliError::io(&path, e))?;
    Ok(read_panel_csv(BufReader::new(file))?)
}

/// One configured regression: a result or the reason it could not be estimated.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionOutcome {
    pub spec: RegressionSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<RegressionResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Serialize)]
struct RegressionArtifact<'a> {
    config_hash: &'a str,
    regressions: &'a [RegressionOutcome],
}

/// Render estimated columns and list the ones that failed.
pub fn regression_report(outcomes: &[RegressionOutcome]) -> String {
    let done: Vec<RegressionResult> = outcomes.iter().filter_map(|o| o.result.clone()).collect();
    let mut out = if done.is_empty() {
        String::from("No regression could be estimated.\n")
    } else {
        render_table(&done)
    };
    for o in outcomes.iter().filter(|o| o.error.is_some()) {
        out.push_str(&format!(
            "Not estimated: {} [{}]: {}\n",
            o.spec.name,
            o.spec.regressors.join(", "),
            o.error.as_deref().unwrap_or_default()
        ));
    }
    out
}

/// Estimate every configured specification on the panel.
pub fn cmd_regress(ctx: &Context) -> Result<StageSummary, CliError> {
    let panel = load_panel(ctx)?;
    let outcomes: Vec<RegressionOutcome> = ctx
        .config
        .regressions
        .iter()
        .map(|spec| match estimate(&panel, spec) {
            Ok(r) => RegressionOutcome {
                spec: spec.clone(),
                result: Some(r),
                error: None,
            },
            Err(e) => {
                tracing::warn!(name = %spec.name, error = %e, "regression not estimated");
                RegressionOutcome {
                    spec: spec.clone(),
                    result: None,
                    error: Some(e.to_string()),
                }
            }
        })
        .collect();
    ctx.write_json(
        RESULTS_ARTIFACT,
        &RegressionArtifact {
            config_hash: &ctx.config_hash,
            regressions: &outcomes,
        },
    )?;
    ctx.write_text(TABLE_ARTIFACT, &regression_report(&outcomes))?;
    let estimated = outcomes.iter().filter(|o| o.result.is_some()).count();
    let c = counters([
        ("panel_rows", panel.len()),
        ("specs_estimated", estimated),
        ("specs_failed", outcomes.len() - estimated),
    ]);
    ctx.finish(
        Stage::Regress,
        c,
        Counters::new(),
        vec![RESULTS_ARTIFACT.into(), TABLE_ARTIFACT.into()],
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestSummary {
    pub config_hash: String,
    pub options: BacktestOptions,
    /// Portfolio name to summary; empty samples are absent.
    pub portfolios: BTreeMap<String, Summary>,
    pub small_rows: usize,
    pub non_small_rows: usize,
    pub unclassified_rows: usize,
}

/// Long-short series for the whole panel and each size class.
pub fn cmd_backtest(ctx: &Context) -> Result<StageSummary, CliError> {
    let panel = load_panel(ctx)?;
    let returns_path = ctx.require(RETURNS_ARTIFACT, Stage::Ingest)?;
    let returns: Vec<ReturnRecord> = read_jsonl(&returns_path)?;
    let split = split_by_size(&panel, &daily_breakpoints(&returns));
    let options = ctx.config.backtest;
    let mut portfolios = BTreeMap::new();
    let mut artifacts = Vec::new();
    for (name, rows) in PORTFOLIOS.into_iter().zip([&panel, &split.small, &split.non_small]) {
        let rel = format!("backtest/{name}.csv");
        if rows.is_empty() {
            // stale series from an earlier run must not survive
            let _ = fs::remove_file(ctx.path(&rel));
            continue;
        }
        let series = form_portfolio(rows, &options)?;
        let mut w = ctx.create(&rel)?;
        write_series_csv(&series, &mut w)?;
        portfolios.insert(name.to_string(), series.summary);
        artifacts.push(rel);
    }
    let summary = BacktestSummary {
        config_hash: ctx.config_hash.clone(),
        options,
        portfolios,
        small_rows: split.small.len(),
        non_small_rows: split.non_small.len(),
        unclassified_rows: split.unclassified,
    };
    ctx.write_json(BACKTEST_SUMMARY_ARTIFACT, &summary)?;
    artifacts.push(BACKTEST_SUMMARY_ARTIFACT.into());
    let mut c = counters([
        ("panel_rows", panel.len()),
        ("small_rows", split.small.len()),
        ("non_small_rows", split.non_small.len()),
        ("unclassified_rows", split.unclassified),
    ]);
    for (name, s) in &summary.portfolios {
        c.insert(format!("{name}_days"), s.n_days as u64);
        c.insert(format!("{name}_flagged_days"), s.flagged_days as u64);
    }
    ctx.finish(Stage::Backtest, c, Counters::new(), artifacts)
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map(|x| format!("{x:.digits$}")).unwrap_or_else(|| "n/a".into())
}

/// Plain-text summary of the long-short portfolios.
pub fn backtest_report(summary: &BacktestSummary) -> String {
    let names: Vec<&String> = summary.portfolios.keys().collect();
    let mut out = format!("{:<24}", "");
    for n in &names {
        out.push_str(&format!("{n:>14}"));
    }
    out.push('\n');
    type Cell = fn(&Summary) -> String;
    let rows: [(&str, Cell); 6] = [
        ("Days", |s| s.n_days.to_string()),
        ("Days with an empty leg", |s| s.flagged_days.to_string()),
        ("Mean daily return (%)", |s| format!("{:.4}", s.mean_daily_return * 100.0)),
        ("Annualized Sharpe", |s| opt(s.annualized_sharpe, 2)),
        ("Max drawdown (%)", |s| format!("{:.2}", s.max_drawdown * 100.0)),
        ("Final cumulative", |s| format!("{:.4}", s.final_cumulative)),
    ];
    for (label, cell) in rows {
        out.push_str(&format!("{label:<24}"));
        for n in &names {
            out.push_str(&format!("{:>14}", cell(&summary.portfolios[*n])));
        }
        out.push('\n');
    }
    out.push_str(&format!(
        "Weighting: {:?}; cost {} bps per side; {} small, {} non-small, {} unclassified panel rows.\n",
        summary.options.weighting,
        summary.options.cost_bps_per_side,
        summary.small_rows,
        summary.non_small_rows,
        summary.unclassified_rows
    ));
    out
}

#[derive(Deserialize)]
struct SeriesRow {
    date: NaiveDate,
    cumulative: f64,
}

/// Verify upstream digests, then write the formatted tables and a merged
/// cumulative-return series.
pub fn cmd_report(ctx: &Context) -> Result<StageSummary, CliError> {
    let table_path = ctx.require(TABLE_ARTIFACT, Stage::Regress)?;
    let summary_path = ctx.require(BACKTEST_SUMMARY_ARTIFACT, Stage::Backtest)?;
    ctx.check_upstream(Stage::Regress)?;
    ctx.check_upstream(Stage::Backtest)?;
    let manifest = Manifest::load_or_default(&ctx.out_dir)?;
    let changed: Vec<String> = manifest
        .verify(&ctx.out_dir)?
        .into_iter()
        .filter(|p| !p.starts_with("report/"))
        .collect();
    if !changed.is_empty() {
        return Err(CliError::ArtifactChanged(changed));
    }

    let table = fs::read_to_string(&table_path).map_err(|e| CliError::io(&table_path, e))?;
    let summary_text = fs::read_to_string(&summary_path).map_err(|e| CliError::io(&summary_path, e))?;
    let summary: BacktestSummary = serde_json::from_str(&summary_text).map_err(|e| CliError::Corrupt {
        path: summary_path.display().to_string(),
        message: e.to_string(),
    })?;
    let text = format!(
        "Config {}\n\nPanel regressions of next-day returns on headline scores\n\n{}\nLong-short portfolios (long positive scores, short negative scores)\n\n{}",
        ctx.config_hash,
        table,
        backtest_report(&summary)
    );
    ctx.write_text(REPORT_TABLES_ARTIFACT, &text)?;

    let mut merged: BTreeMap<NaiveDate, [Option<f64>; 3]> = BTreeMap::new();
    for (i, name) in PORTFOLIOS.iter().enumerate() {
        if !summary.portfolios.contains_key(*name) {
            continue;
        }
        let path = ctx.require(&format!("backtest/{name}.csv"), Stage::Backtest)?;
        let mut reader = csv::Reader::from_path(&path).map_err(|e| CliError::Corrupt {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        for row in reader.deserialize::<SeriesRow>() {
            let row = row.map_err(|e| CliError::Corrupt {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
            merged.entry(row.date).or_default()[i] = Some(row.cumulative);
        }
    }
    let mut w = ctx.create(REPORT_CUMULATIVE_ARTIFACT)?;
    let mut csv_out = String::from("date,all,small,non_small\n");
    for (date, values) in &merged {
        let cells: Vec<String> = values.iter().map(|v| v.map(|x| x.to_string()).unwrap_or_default()).collect();
        csv_out.push_str(&format!("{date},{}\n", cells.join(",")));
    }
    w.write_all(csv_out.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| CliError::io(&ctx.path(REPORT_CUMULATIVE_ARTIFACT), e))?;

    let c = counters([
        ("regression_columns", table.lines().next().map_or(0, |l| l.split_whitespace().filter(|t| t.starts_with('(')).count())),
        ("portfolios", summary.portfolios.len()),
        ("series_dates", merged.len()),
    ]);
    ctx.finish(
        Stage::Report,
        c,
        Counters::new(),
        vec![REPORT_TABLES_ARTIFACT.into(), REPORT_CUMULATIVE_ARTIFACT.into()],
    )
}

pub fn run_stage(ctx: &Context, stage: Stage) -> Result<StageSummary, CliError> {
    match stage {
        Stage::Ingest => cmd_ingest(ctx),
        Stage::Score => cmd_score(ctx),
        Stage::Signal => cmd_signal(ctx),
        Stage::Regress => cmd_regress(ctx),
        Stage::Backtest => cmd_backtest(ctx),
        Stage::Report => cmd_report(ctx),
    }
}

/// All six stages in order.
pub fn run_pipeline(ctx: &Context) -> Result<Vec<StageSummary>, CliError> {
    Stage::ALL.iter().map(|&s| run_stage(ctx, s)).collect()
}

pub const SYNTHETIC_CONFIG_FILE: &str = "run.toml";

/// Write a seeded synthetic corpus and a config that runs it with the mock scorer.
pub fn cmd_synth(dir: &Path, seed: u64) -> Result<PathBuf, CliError> {
    let spec = SyntheticSpec {
        seed,
        ..SyntheticSpec::default()
    };
    let corpus = generate(&spec);
    write_corpus(&corpus, dir).map_err(|e| CliError::io(dir, e))?;
    let config = format!(
        "seed = {seed}\n\n[inputs]\nheadlines = \"{HEADLINES_FILE}\"\nreturns = \"{RETURNS_FILE}\"\ncalendar = \"{CALENDAR_FILE}\"\n\n[scorer]\nbackend = \"mock\"\n"
    );
    let path = dir.join(SYNTHETIC_CONFIG_FILE);
    fs::write(&path, config).map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}

/// Artifacts that must be identical across runs: everything under the
/// output directory except the manifest (timestamps) and the reply cache.
pub fn deterministic_artifacts(out_dir: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for stage in Stage::ALL {
        let dir = out_dir.join(stage.as_str());
        if !dir.is_dir() {
            continue;
        }
        let mut entries: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| CliError::io(&dir, e))?
            .map(|e| e.map(|e| e.path()))
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::io(&dir, e))?;
        entries.sort();
        for path in entries.into_iter().filter(|p| p.is_file()) {
            let name = path.file_name().expect("file").to_string_lossy();
            out.insert(format!("{}/{name}", stage.as_str()), sha256_file(&path)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic_context() -> (tempfile::TempDir, Context) {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = cmd_synth(&dir.path().join("data"), 7).unwrap();
        let config = RunConfig::load(&cfg_path).unwrap();
        let ctx = Context::new(config, Some(dir.path().join("out"))).unwrap();
        (dir, ctx)
    }

    #[test]
    fn stages_require_upstream() {
        let (_dir, ctx) = synthetic_context();
        let err = cmd_regress(&ctx).unwrap_err();
        assert!(matches!(err, CliError::MissingArtifact { command: "signal", .. }), "{err}");
        assert!(err.to_string().contains("newsignal signal"));
        assert!(matches!(cmd_score(&ctx), Err(CliError::MissingArtifact { command: "ingest", .. })));
        assert!(matches!(cmd_report(&ctx), Err(CliError::MissingArtifact { command: "regress", .. })));
    }

    #[test]
    fn pipeline_counters_reconcile() {
        let (_dir, ctx) = synthetic_context();
        let summaries = run_pipeline(&ctx).unwrap();
        let ingest = &summaries[0].counters;
        let dropped: u64 = ingest
            .iter()
            .filter(|(k, _)| k.starts_with("filtered_"))
            .map(|(_, v)| v)
            .sum::<u64>()
            + ingest["outside_calendar"]
            + ingest["dedup_dropped"];
        assert_eq!(ingest["headlines_parsed"], dropped + ingest["headlines_kept"]);
        assert!(ingest["dedup_dropped"] > 0);
        assert!(ingest["returns_out_of_universe"] > 0);

        let score = &summaries[1];
        assert_eq!(score.counters["headlines_scored"], ingest["headlines_kept"]);
        // identical rendered prompts share one backend call
        assert_eq!(score.volatile["cache_hits"] + score.volatile["backend_calls"], score.counters["headlines_scored"]);

        let signal = &summaries[2].counters;
        assert_eq!(signal["headlines_in"], ingest["headlines_kept"]);
        assert_eq!(signal["firm_day_signals"], signal["panel_rows"] + signal["dropped_signals"]);

        let manifest = Manifest::load_or_default(&ctx.out_dir).unwrap();
        assert_eq!(manifest.stages.len(), 6);
        assert_eq!(manifest.inputs.len(), 3);
        assert!(manifest.verify(&ctx.out_dir).unwrap().is_empty());

        let table = fs::read_to_string(ctx.path(REPORT_TABLES_ARTIFACT)).unwrap();
        assert!(table.contains("chatgpt_score"));
        assert!(table.contains(&ctx.config_hash));

        // a rerun hits the cache and leaves every deterministic artifact unchanged
        let before = deterministic_artifacts(&ctx.out_dir).unwrap();
        let again = run_pipeline(&ctx).unwrap();
        assert_eq!(again[1].volatile["backend_calls"], 0);
        assert_eq!(before, deterministic_artifacts(&ctx.out_dir).unwrap());
    }

    #[test]
    fn tampered_artifact_blocks_report() {
        let (_dir, ctx) = synthetic_context();
        run_pipeline(&ctx).unwrap();
        fs::write(ctx.path(TABLE_ARTIFACT), "edited\n").unwrap();
        assert!(matches!(cmd_report(&ctx), Err(CliError::ArtifactChanged(v)) if v == vec![TABLE_ARTIFACT.to_string()]));
    }
}
