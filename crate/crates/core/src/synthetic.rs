//! Seeded synthetic corpus: headlines, daily returns and a trading calendar
//! whose returns load on the sign of the headline news.
//!
//! The generator is deterministic for a given [`SyntheticSpec`]. Besides
//! clean headlines it plants records the ingest filters must remove (low
//! relevance, price-move categories, recent similar events, other story
//! types), near-duplicate rewrites, a firm outside the common-stock universe
//! and a few missing market caps.

use std::collections::HashMap;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use chrono::{Duration, NaiveDate, NaiveTime, TimeZone};
use chrono_tz::Tz;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::io::write_csv;
use crate::market_data::{Exchange, FirmId, ReturnRecord, TradingCalendar};
use crate::news_ingest::{HeadlineRecord, StoryId, StoryType};
use crate::signal_builder::assign_effective_date;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub n_firms: usize,
    pub n_sessions: usize,
    pub n_headlines: usize,
    pub first_day: NaiveDate,
    /// Return loading on the mean news sign of a firm-day.
    pub beta: f64,
    pub noise_sd: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            seed: 20230102,
            n_firms: 20,
            n_sessions: 60,
            n_headlines: 200,
            first_day: NaiveDate::from_ymd_opt(2023, 1, 2).expect("valid date"),
            beta: 0.005,
            noise_sd: 0.01,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub headlines: Vec<HeadlineRecord>,
    pub returns: Vec<ReturnRecord>,
    pub calendar: TradingCalendar,
}

pub const TIMEZONE: Tz = chrono_tz::America::New_York;

const GOOD: [&str; 8] = [
    "{} reports record quarterly profit",
    "{} raises full-year revenue guidance",
    "{} wins multiyear defense contract",
    "{} announces new share buyback program",
    "{} shares surge after drug approval",
    "{} expands partnership with major retailer",
    "{} hikes quarterly dividend",
    "{} upgraded to buy at large broker",
];
const BAD: [&str; 8] = [
    "{} misses earnings estimates on weak demand",
    "{} cuts outlook as margins decline",
    "{} faces lawsuit over product safety",
    "{} announces layoffs at two plants",
    "{} recalls vehicles over brake defect",
    "{} chief financial officer resigns",
    "{} under investigation for accounting fraud",
    "{} downgraded after sales slump",
];
const NEUTRAL: [&str; 6] = [
    "{} to present at industry conference",
    "{} names new board member",
    "{} schedules annual shareholder meeting",
    "{} files quarterly report",
    "{} opens office in Denver",
    "{} comments on market rumors",
];
const FIRM_NAMES: [&str; 24] = [
    "Acme Robotics", "Borealis Energy", "Cobalt Pharma", "Dunmore Foods", "Eastgate Bank",
    "Fairlane Motors", "Granite Software", "Harbor Logistics", "Ironwood Mining", "Juniper Retail",
    "Keystone Insurance", "Lakeside Media", "Meridian Telecom", "Northstar Airlines", "Oakridge Chemicals",
    "Pinecrest Health", "Quarry Materials", "Redwood Semiconductors", "Summit Apparel", "Tidewater Utilities",
    "Union Rail", "Vantage Biotech", "Westfield Homes", "Yellowtail Games",
];

struct Firm {
    id: FirmId,
    name: String,
    exchange: Exchange,
    share_code: i64,
    cap: f64,
    alpha: f64,
}

fn fill(template: &str, name: &str) -> String {
    template.replacen("{}", name, 1)
}

/// Light rewrite that keeps a headline above the dedup threshold.
fn near_duplicate(headline: &str) -> String {
    match headline.rsplit_once(' ') {
        Some((head, last)) => format!("{head} {}s", last),
        None => format!("{headline}!"),
    }
}

pub fn generate(spec: &SyntheticSpec) -> SyntheticCorpus {
    assert!(spec.n_firms >= 2 && spec.n_sessions >= 3, "corpus too small");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let close = NaiveTime::from_hms_opt(16, 0, 0).expect("valid time");

    let mut last = spec.first_day;
    let mut count = 0;
    let mut day = spec.first_day;
    while count < spec.n_sessions {
        use chrono::Datelike;
        if day.weekday().num_days_from_monday() < 5 {
            count += 1;
            last = day;
        }
        day += Duration::days(1);
    }
    let calendar = TradingCalendar::weekdays(spec.first_day, last, close, TIMEZONE).expect("valid calendar");
    let dates: Vec<NaiveDate> = calendar.sessions().iter().map(|s| s.date).collect();

    // NYSE listings skew larger, so some NASDAQ/AMEX firms fall below the NYSE breakpoint
    let nyse_caps = Normal::new(21.5f64, 1.2).expect("valid normal");
    let other_caps = Normal::new(19.5f64, 1.2).expect("valid normal");
    let firms: Vec<Firm> = (0..spec.n_firms)
        .map(|i| {
            let exchange = match i % 10 {
                0..=5 => Exchange::Nyse,
                6..=8 => Exchange::Nasdaq,
                _ => Exchange::Amex,
            };
            Firm {
                id: FirmId(format!("F{:03}", i + 1)),
                name: FIRM_NAMES[i % FIRM_NAMES.len()].to_string(),
                exchange,
                // the last firm is not a common stock and leaves the universe
                share_code: if i + 1 == spec.n_firms { 31 } else { 10 + (i % 2) as i64 },
                cap: if exchange == Exchange::Nyse { nyse_caps.sample(&mut rng) } else { other_caps.sample(&mut rng) }.exp(),
                alpha: rng.gen_range(-0.0005..0.0005),
            }
        })
        .collect();

    // Headlines. Leave the final session free so every signal has a return.
    let mut headlines = Vec::with_capacity(spec.n_headlines);
    let mut latent: HashMap<(usize, NaiveDate), Vec<f64>> = HashMap::new();
    let mut i = 0;
    while headlines.len() < spec.n_headlines {
        i += 1;
        let f = rng.gen_range(0..firms.len());
        let firm = &firms[f];
        let d = dates[rng.gen_range(0..dates.len() - 2)];
        let minute = rng.gen_range(7 * 60..20 * 60);
        let local = d.and_time(NaiveTime::from_hms_opt(minute / 60, minute % 60, rng.gen_range(0..60)).expect("valid"));
        let published_at = TIMEZONE
            .from_local_datetime(&local)
            .single()
            .expect("no DST gap at these hours")
            .fixed_offset();
        let sign: i8 = *[-1, 0, 1, 1].choose(&mut rng).expect("non-empty");
        let template = match sign {
            1 => GOOD.choose(&mut rng),
            -1 => BAD.choose(&mut rng),
            _ => NEUTRAL.choose(&mut rng),
        }
        .expect("non-empty");
        let headline = fill(template, &firm.name);
        let roll: f64 = rng.gen();
        let mut record = HeadlineRecord {
            story_id: StoryId(format!("S{i:05}")),
            firm_id: firm.id.clone(),
            firm_name: firm.name.clone(),
            published_at,
            headline,
            relevance: 100,
            category: ["earnings", "corporate", "products", "legal"][rng.gen_range(0..4)].to_string(),
            event_similarity_days: 365.0,
            story_type: if rng.gen_bool(0.7) { StoryType::FullArticle } else { StoryType::PressRelease },
            vendor_sentiment: Some(((f64::from(sign) * 0.4 + rng.gen_range(-0.3..0.3)) * 100.0).round() / 100.0),
        };
        let mut informative = true;
        match roll {
            r if r < 0.03 => record.relevance = 75,
            r if r < 0.06 => record.category = if sign >= 0 { "stock-gain" } else { "stock-loss" }.into(),
            r if r < 0.09 => record.event_similarity_days = 12.0,
            r if r < 0.11 => record.story_type = StoryType::Other,
            _ => {}
        }
        if roll < 0.11 {
            informative = false;
        }
        if informative {
            if let Ok(eff) = assign_effective_date(&record.published_at, &calendar) {
                latent.entry((f, eff)).or_default().push(f64::from(sign));
            }
        }
        let duplicate = informative && roll > 0.93 && headlines.len() + 1 < spec.n_headlines;
        let copy = duplicate.then(|| {
            let mut dup = record.clone();
            i += 1;
            dup.story_id = StoryId(format!("S{i:05}"));
            dup.headline = near_duplicate(&record.headline);
            dup.published_at = record.published_at + Duration::minutes(rng.gen_range(1..30));
            dup
        });
        headlines.push(record);
        headlines.extend(copy);
    }
    headlines.sort_by(|a, b| a.published_at.cmp(&b.published_at).then_with(|| a.story_id.cmp(&b.story_id)));

    // Returns: firm drift + common day shock + news loading + noise.
    let noise = Normal::new(0.0f64, spec.noise_sd).expect("valid normal");
    let market = Normal::new(0.0f64, 0.008).expect("valid normal");
    let mut caps: Vec<f64> = firms.iter().map(|f| f.cap).collect();
    let mut returns = Vec::with_capacity(dates.len() * firms.len());
    for &d in &dates {
        let m = market.sample(&mut rng);
        for (f, firm) in firms.iter().enumerate() {
            let news = latent
                .get(&(f, d))
                .map(|v| v.iter().sum::<f64>() / v.len() as f64)
                .unwrap_or(0.0);
            let ret = (firm.alpha + m + spec.beta * news + noise.sample(&mut rng)).max(-0.5);
            caps[f] *= 1.0 + ret;
            let market_cap = if rng.gen_bool(0.01) { None } else { Some((caps[f] / 1e3).round() * 1e3) };
            returns.push(ReturnRecord {
                firm_id: firm.id.clone(),
                date: d,
                ret: (ret * 1e8).round() / 1e8,
                market_cap,
                share_code: firm.share_code,
                exchange: firm.exchange,
            });
        }
    }

    SyntheticCorpus {
        headlines,
        returns,
        calendar,
    }
}

pub const HEADLINES_FILE: &str = "headlines.csv";
pub const RETURNS_FILE: &str = "returns.csv";
pub const CALENDAR_FILE: &str = "calendar.jsonl";

#[derive(Serialize)]
struct CalendarLine<'a> {
    date: NaiveDate,
    open: String,
    close: String,
    timezone: &'a str,
}

/// Write `headlines.csv`, `returns.csv` and `calendar.jsonl` into `dir`.
pub fn write_corpus(corpus: &SyntheticCorpus, dir: &Path) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    write_csv(fs::File::create(dir.join(HEADLINES_FILE))?, &corpus.headlines)?;
    write_csv(fs::File::create(dir.join(RETURNS_FILE))?, &corpus.returns)?;
    let mut cal = io::BufWriter::new(fs::File::create(dir.join(CALENDAR_FILE))?);
    let tz = corpus.calendar.tz();
    for s in corpus.calendar.sessions() {
        let line = CalendarLine {
            date: s.date,
            open: s.open.format("%H:%M").to_string(),
            close: s.close.format("%H:%M").to_string(),
            timezone: tz.name(),
        };
        serde_json::to_writer(&mut cal, &line)?;
        cal.write_all(b"\n")?;
    }
    cal.flush()
}
