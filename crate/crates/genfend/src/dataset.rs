//! News corpus loading, splitting, and comment truncation.
//!
//! Corpora arrive as JSON Lines, one news record per line. A loaded
//! `Corpus` is immutable and safe to share across threads.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, BufReader};
use std::path::Path;

use chrono::{DateTime, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profiles::UserProfile;

/// Veracity label: 0 = real, 1 = fake.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Label {
    Real,
    Fake,
}

impl Label {
    pub fn as_u8(self) -> u8 {
        match self {
            Label::Real => 0,
            Label::Fake => 1,
        }
    }

    pub fn as_f64(self) -> f64 {
        f64::from(self.as_u8())
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(value: u8) -> std::result::Result<Self, String> {
        match value {
            0 => Ok(Label::Real),
            1 => Ok(Label::Fake),
            other => Err(format!("label must be 0 or 1, got {other}")),
        }
    }
}

impl From<Label> for u8 {
    fn from(value: Label) -> u8 {
        value.as_u8()
    }
}

/// Where a comment came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CommentSource {
    Actual,
    Generated,
}

/// One comment attached to a news item. Generated comments always carry
/// the profile that produced them; actual comments may carry a
/// pseudo-profile inferred later.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommentRecord {
    pub id: String,
    pub news_id: String,
    pub text: String,
    pub source: CommentSource,
    pub profile: Option<UserProfile>,
}

/// One news post with its label and actual comments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewsItem {
    pub id: String,
    pub text: String,
    pub label: Label,
    pub timestamp: Option<String>,
    pub actual_comments: Vec<CommentRecord>,
}

/// An immutable collection of news items with unique ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub name: String,
    pub items: Vec<NewsItem>,
}

#[derive(Deserialize)]
struct RawComment {
    id: String,
    text: String,
}

#[derive(Deserialize)]
struct RawNews {
    id: String,
    text: String,
    label: u8,
    #[serde(default)]
    timestamp: Option<String>,
    #[serde(default)]
    comments: Vec<RawComment>,
}

/// One row of a generated-comments file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedCommentRow {
    pub news_id: String,
    pub profile: UserProfile,
    pub text: String,
    pub model: String,
    pub temperature: f64,
}

fn parse_timestamp(raw: &str) -> std::result::Result<DateTime<Utc>, chrono::ParseError> {
    DateTime::parse_from_rfc3339(raw).map(|t| t.with_timezone(&Utc))
}

/// Load a corpus from a JSON Lines news file.
///
/// Each line must parse as one news record; `expect_comments` additionally
/// requires every record to carry at least one comment.
pub fn load_corpus(path: impl AsRef<Path>, expect_comments: bool) -> Result<Corpus> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| display.clone());
    let file = std::fs::File::open(path).map_err(|e| Error::io(&display, e))?;
    let reader = BufReader::new(file);

    let mut items = Vec::new();
    let mut seen_ids = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(&display, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawNews = serde_json::from_str(&line)
            .map_err(|e| Error::parse(&display, line_no, e.to_string()))?;
        if raw.id.is_empty() {
            return Err(Error::parse(&display, line_no, "empty news id"));
        }
        if raw.text.is_empty() {
            return Err(Error::parse(&display, line_no, format!("empty text for {}", raw.id)));
        }
        if !seen_ids.insert(raw.id.clone()) {
            return Err(Error::Validation(format!(
                "duplicate news id {} at {display}:{line_no}",
                raw.id
            )));
        }
        let label = Label::try_from(raw.label)
            .map_err(|e| Error::parse(&display, line_no, e))?;
        if let Some(ts) = &raw.timestamp {
            parse_timestamp(ts).map_err(|e| {
                Error::parse(&display, line_no, format!("bad timestamp {ts:?}: {e}"))
            })?;
        }
        if expect_comments && raw.comments.is_empty() {
            return Err(Error::Validation(format!(
                "news {} has no comments but comments were expected ({display}:{line_no})",
                raw.id
            )));
        }
        let mut comment_ids = HashSet::new();
        let actual_comments = raw
            .comments
            .into_iter()
            .map(|c| {
                if !comment_ids.insert(c.id.clone()) {
                    return Err(Error::Validation(format!(
                        "duplicate comment id {} under news {}",
                        c.id, raw.id
                    )));
                }
                Ok(CommentRecord {
                    id: c.id,
                    news_id: raw.id.clone(),
                    text: c.text,
                    source: CommentSource::Actual,
                    profile: None,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        items.push(NewsItem {
            id: raw.id,
            text: raw.text,
            label,
            timestamp: raw.timestamp,
            actual_comments,
        });
    }
    Ok(Corpus { name, items })
}

/// Load a generated-comments JSON Lines file.
pub fn load_generated_comments(path: impl AsRef<Path>) -> Result<Vec<GeneratedCommentRow>> {
    let display = path.as_ref().display().to_string();
    let file = std::fs::File::open(path.as_ref()).map_err(|e| Error::io(&display, e))?;
    let mut rows = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&display, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: GeneratedCommentRow = serde_json::from_str(&line)
            .map_err(|e| Error::parse(&display, idx + 1, e.to_string()))?;
        rows.push(row);
    }
    Ok(rows)
}

/// Attach deterministic ids to generated rows, grouped by news id.
///
/// The id of the `k`-th generated comment for a news item (in file order)
/// is `{news_id}#gen{k}`; embedding sidecars must key comment vectors the
/// same way.
pub fn generated_rows_to_records(
    rows: &[GeneratedCommentRow],
) -> HashMap<String, Vec<CommentRecord>> {
    let mut by_news: HashMap<String, Vec<CommentRecord>> = HashMap::new();
    for row in rows {
        let list = by_news.entry(row.news_id.clone()).or_default();
        let k = list.len();
        list.push(CommentRecord {
            id: generated_comment_id(&row.news_id, k),
            news_id: row.news_id.clone(),
            text: row.text.clone(),
            source: CommentSource::Generated,
            profile: Some(row.profile),
        });
    }
    by_news
}

pub fn generated_comment_id(news_id: &str, index: usize) -> String {
    format!("{news_id}#gen{index}")
}

fn validate_ratios(ratios: (f64, f64, f64)) -> Result<()> {
    let (a, b, c) = ratios;
    for r in [a, b, c] {
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::Validation(format!("ratio {r} out of [0,1]")));
        }
    }
    if (a + b + c - 1.0).abs() > 1e-9 {
        return Err(Error::Validation(format!(
            "ratios must sum to 1, got {}",
            a + b + c
        )));
    }
    Ok(())
}

/// Floor allocation for validation and test; the remainder goes to train.
fn split_sizes(n: usize, ratios: (f64, f64, f64)) -> (usize, usize, usize) {
    let n_val = (n as f64 * ratios.1).floor() as usize;
    let n_test = (n as f64 * ratios.2).floor() as usize;
    let n_train = n - n_val - n_test;
    (n_train, n_val, n_test)
}

fn partition(items: Vec<NewsItem>, ratios: (f64, f64, f64), name: &str) -> (Corpus, Corpus, Corpus) {
    let (n_train, n_val, _) = split_sizes(items.len(), ratios);
    let mut items = items;
    let test = items.split_off(n_train + n_val);
    let val = items.split_off(n_train);
    (
        Corpus { name: format!("{name}-train"), items },
        Corpus { name: format!("{name}-val"), items: val },
        Corpus { name: format!("{name}-test"), items: test },
    )
}

/// Split by ascending timestamp (ties broken by id) into contiguous
/// train/validation/test segments.
pub fn chronological_split(
    corpus: &Corpus,
    ratios: (f64, f64, f64),
) -> Result<(Corpus, Corpus, Corpus)> {
    validate_ratios(ratios)?;
    let mut keyed = Vec::with_capacity(corpus.items.len());
    for item in &corpus.items {
        let ts = item.timestamp.as_deref().ok_or_else(|| {
            Error::Validation(format!(
                "news {} has no timestamp; use random_split for corpora without timestamps",
                item.id
            ))
        })?;
        let parsed = parse_timestamp(ts)
            .map_err(|e| Error::Validation(format!("bad timestamp on {}: {e}", item.id)))?;
        keyed.push((parsed, item.clone()));
    }
    keyed.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.id.cmp(&b.1.id)));
    let items: Vec<NewsItem> = keyed.into_iter().map(|(_, item)| item).collect();
    Ok(partition(items, ratios, &corpus.name))
}

/// Seeded shuffle followed by the same floor-allocation partition.
pub fn random_split(
    corpus: &Corpus,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<(Corpus, Corpus, Corpus)> {
    validate_ratios(ratios)?;
    let mut items = corpus.items.clone();
    items.sort_by(|a, b| a.id.cmp(&b.id));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    items.shuffle(&mut rng);
    Ok(partition(items, ratios, &corpus.name))
}

/// Keep only the first `k` actual comments of every item, in stored order.
pub fn truncate_actual_comments(corpus: &Corpus, k: usize) -> Corpus {
    Corpus {
        name: corpus.name.clone(),
        items: corpus
            .items
            .iter()
            .map(|item| {
                let mut item = item.clone();
                item.actual_comments.truncate(k);
                item
            })
            .collect(),
    }
}

/// Item and comment counts by label, for reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CorpusCounts {
    pub total: usize,
    pub fake: usize,
    pub real: usize,
    pub comments: usize,
}

pub fn counts(corpus: &Corpus) -> CorpusCounts {
    let fake = corpus
        .items
        .iter()
        .filter(|i| i.label == Label::Fake)
        .count();
    CorpusCounts {
        total: corpus.items.len(),
        fake,
        real: corpus.items.len() - fake,
        comments: corpus.items.iter().map(|i| i.actual_comments.len()).sum(),
    }
}
