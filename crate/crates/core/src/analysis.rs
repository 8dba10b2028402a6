//! Rankings, rank-biased overlap, topic aggregates and cross-language
//! disagreement over a metrics table.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::hash::Hash;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{nearest_rank_threshold, Setting};
use crate::io::{csv_field, fixed6};
use crate::metrics::{ArticleMetrics, MetricsTable};

pub const DEFAULT_RBO_P: f64 = 0.9;
pub const DEFAULT_MIN_TOPIC_COUNT: usize = 50;
pub const DEFAULT_LENGTH_FRACTION: f64 = 0.25;

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("duplicate id '{0}' in ranked list")]
    DuplicateId(String),
    #[error("ranked lists must be non-empty")]
    EmptyList,
    #[error("persistence p must lie in (0, 1), got {0}")]
    InvalidP(f64),
    #[error("no articles for setting {setting} with a {kind} score")]
    EmptyRanking { setting: Setting, kind: ScoreKind },
    #[error("invalid length fraction {0}")]
    InvalidFraction(f64),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    Pf,
    Npf,
    Pc,
    Length,
}

impl ScoreKind {
    pub const ALL: [ScoreKind; 4] = [ScoreKind::Pf, ScoreKind::Npf, ScoreKind::Pc, ScoreKind::Length];

    pub fn code(self) -> &'static str {
        match self {
            ScoreKind::Pf => "pf",
            ScoreKind::Npf => "npf",
            ScoreKind::Pc => "pc",
            ScoreKind::Length => "length",
        }
    }

    fn score(self, a: &ArticleMetrics) -> Option<f64> {
        match self {
            ScoreKind::Pf => Some(a.pf),
            ScoreKind::Npf => a.npf,
            ScoreKind::Pc => Some(a.pc as f64),
            ScoreKind::Length => Some(a.word_count as f64),
        }
    }
}

impl std::fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.code())
    }
}

impl std::str::FromStr for ScoreKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ScoreKind::ALL
            .into_iter()
            .find(|k| k.code() == s)
            .ok_or_else(|| format!("unknown score kind '{s}'"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub setting: Setting,
    pub kind: ScoreKind,
    pub entries: Vec<(String, f64)>,
}

impl Ranking {
    pub fn ids(&self) -> Vec<&str> {
        self.entries.iter().map(|(id, _)| id.as_str()).collect()
    }
}

/// Rank one setting's articles by score, descending, ties by subject id.
/// With `length_fraction`, only the top fraction of articles by word count
/// (strictly above the nearest-rank quantile) take part.
pub fn rank_by_score(
    table: &MetricsTable,
    setting: Setting,
    kind: ScoreKind,
    length_fraction: Option<f64>,
) -> Result<Ranking, AnalysisError> {
    let mut pool: Vec<&ArticleMetrics> = table.articles.iter().filter(|a| a.setting == setting).collect();
    if let Some(f) = length_fraction {
        if pool.is_empty() {
            return Err(AnalysisError::EmptyRanking { setting, kind });
        }
        let counts: Vec<usize> = pool.iter().map(|a| a.word_count).collect();
        let t = nearest_rank_threshold(&counts, f).map_err(|_| AnalysisError::InvalidFraction(f))?;
        pool.retain(|a| t.is_none_or(|t| a.word_count > t));
    }
    let mut entries: Vec<(String, f64)> = pool
        .iter()
        .filter_map(|a| kind.score(a).map(|s| (a.subject_id.clone(), s)))
        .collect();
    if entries.is_empty() {
        return Err(AnalysisError::EmptyRanking { setting, kind });
    }
    entries.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(Ranking { setting, kind, entries })
}

fn check_unique<T: Eq + Hash + ToString>(items: &[T]) -> Result<(), AnalysisError> {
    let mut seen = HashSet::with_capacity(items.len());
    for x in items {
        if !seen.insert(x) {
            return Err(AnalysisError::DuplicateId(x.to_string()));
        }
    }
    Ok(())
}

/// Extrapolated rank-biased overlap of two rankings of possibly different
/// lengths.
///
/// With `s` the shorter and `l` the longer length and `X_d` the overlap of
/// the depth-`d` prefixes (the short list stops growing after `s`):
///
/// ```text
/// RBO_ext = (1-p)/p * ( sum_{d=1..l} X_d/d * p^d
///                     + sum_{d=s+1..l} X_s * (d-s)/(s*d) * p^d )
///         + ( (X_l - X_s)/l + X_s/s ) * p^l
/// ```
pub fn rbo<T: Eq + Hash + Clone + ToString>(a: &[T], b: &[T], p: f64) -> Result<f64, AnalysisError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(AnalysisError::InvalidP(p));
    }
    if a.is_empty() || b.is_empty() {
        return Err(AnalysisError::EmptyList);
    }
    check_unique(a)?;
    check_unique(b)?;
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let (s, l) = (short.len(), long.len());

    let mut seen_short: HashSet<&T> = HashSet::with_capacity(s);
    let mut seen_long: HashSet<&T> = HashSet::with_capacity(l);
    let mut overlap = 0usize;
    let mut x_s = 0usize;
    let mut sum = 0.0;
    let mut pd = 1.0;
    for d in 1..=l {
        pd *= p;
        let y = &long[d - 1];
        if d <= s {
            let x = &short[d - 1];
            if x == y {
                overlap += 1;
            } else {
                if seen_long.contains(x) {
                    overlap += 1;
                }
                if seen_short.contains(y) {
                    overlap += 1;
                }
            }
            seen_short.insert(x);
            seen_long.insert(y);
            if d == s {
                x_s = overlap;
            }
        } else if seen_short.contains(y) {
            overlap += 1;
        }
        sum += overlap as f64 / d as f64 * pd;
        if d > s {
            sum += x_s as f64 * (d - s) as f64 / (s * d) as f64 * pd;
        }
    }
    let x_l = overlap as f64;
    let tail = ((x_l - x_s as f64) / l as f64 + x_s as f64 / s as f64) * pd;
    Ok((1.0 - p) / p * sum + tail)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RboRow {
    pub kind: ScoreKind,
    pub a: Setting,
    pub b: Setting,
    pub p: f64,
    pub rbo: f64,
    pub len_a: usize,
    pub len_b: usize,
}

/// RBO between every pair of settings for each score kind. Rankings are
/// unfiltered; kinds a setting lacks (NPF on translations) are skipped.
pub fn rbo_matrix(table: &MetricsTable, kinds: &[ScoreKind], p: f64) -> Result<Vec<RboRow>, AnalysisError> {
    let mut out = Vec::new();
    for &kind in kinds {
        let rankings: Vec<Ranking> = Setting::ALL
            .iter()
            .filter_map(|&s| rank_by_score(table, s, kind, None).ok())
            .collect();
        for i in 0..rankings.len() {
            for j in i + 1..rankings.len() {
                let (ra, rb) = (&rankings[i], &rankings[j]);
                out.push(RboRow {
                    kind,
                    a: ra.setting,
                    b: rb.setting,
                    p,
                    rbo: rbo(&ra.ids(), &rb.ids(), p)?,
                    len_a: ra.entries.len(),
                    len_b: rb.entries.len(),
                });
            }
        }
    }
    Ok(out)
}

/// subject id -> [(P31 id, label)]
pub type TopicMap = BTreeMap<String, Vec<(String, String)>>;

/// Topic map file: tab-separated `subject_id, P31 id, label` lines; blank
/// lines and lines starting with `#` are ignored.
pub fn parse_topic_map(content: &str) -> Result<TopicMap, AnalysisError> {
    let mut map = TopicMap::new();
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 || f[0].is_empty() || f[1].is_empty() {
            return Err(AnalysisError::Malformed {
                line: i + 1,
                reason: "expected subject_id<TAB>topic_id<TAB>label".into(),
            });
        }
        let topics = map.entry(f[0].to_string()).or_default();
        if !topics.iter().any(|(t, _)| t == f[1]) {
            topics.push((f[1].to_string(), f[2].to_string()));
        }
    }
    Ok(map)
}

pub fn load_topic_map(path: &Path) -> Result<TopicMap, AnalysisError> {
    let content = std::fs::read_to_string(path).map_err(|source| AnalysisError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_topic_map(&content)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicAggregate {
    pub topic_id: String,
    pub label: String,
    pub subject_count: usize,
    pub mean_npf_ru: Option<f64>,
    pub mean_npf_en: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicReport {
    pub topics: Vec<TopicAggregate>,
    /// Subjects in the table with no topic.
    pub unmapped: Vec<String>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Mean NPF per language for every topic with at least `min_count` subjects.
/// A subject with several topics counts toward each. Topics are ordered by
/// the mean of their two language means, descending, then by topic id.
pub fn topic_aggregate(map: &TopicMap, table: &MetricsTable, min_count: usize) -> TopicReport {
    let mut npf: BTreeMap<&str, (Option<f64>, Option<f64>)> = BTreeMap::new();
    for a in &table.articles {
        let e = npf.entry(a.subject_id.as_str()).or_default();
        match a.setting {
            Setting::Ru => e.0 = a.npf,
            Setting::En => e.1 = a.npf,
            _ => {}
        }
    }
    let mut members: BTreeMap<&str, (String, BTreeSet<&str>)> = BTreeMap::new();
    let mut unmapped = Vec::new();
    for subject in npf.keys() {
        match map.get(*subject) {
            Some(topics) => {
                for (t, label) in topics {
                    members
                        .entry(t.as_str())
                        .or_insert_with(|| (label.clone(), BTreeSet::new()))
                        .1
                        .insert(subject);
                }
            }
            None => unmapped.push(subject.to_string()),
        }
    }
    if !unmapped.is_empty() {
        log::warn!("{} subjects have no topic", unmapped.len());
    }
    let mut topics: Vec<TopicAggregate> = members
        .into_iter()
        .filter(|(_, (_, subs))| subs.len() >= min_count)
        .map(|(t, (label, subs))| {
            let ru: Vec<f64> = subs.iter().filter_map(|s| npf[s].0).collect();
            let en: Vec<f64> = subs.iter().filter_map(|s| npf[s].1).collect();
            TopicAggregate {
                topic_id: t.to_string(),
                label,
                subject_count: subs.len(),
                mean_npf_ru: mean(&ru),
                mean_npf_en: mean(&en),
            }
        })
        .collect();
    let key = |t: &TopicAggregate| mean(&[t.mean_npf_ru, t.mean_npf_en].into_iter().flatten().collect::<Vec<_>>()).unwrap_or(f64::NEG_INFINITY);
    topics.sort_by(|a, b| key(b).total_cmp(&key(a)).then_with(|| a.topic_id.cmp(&b.topic_id)));
    TopicReport { topics, unmapped }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisagreementRow {
    pub subject_id: String,
    pub pf_ru: f64,
    pub pf_en: f64,
    pub delta: f64,
    pub npf_ru: Option<f64>,
    pub npf_en: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisagreementReport {
    pub rows: Vec<DisagreementRow>,
    pub skipped: Vec<String>,
}

/// Pair ru and en PF per subject; delta = pf_ru - pf_en. Sorted by |delta|
/// descending, then subject id.
pub fn disagreement(table: &MetricsTable) -> DisagreementReport {
    let mut by: BTreeMap<&str, (Option<&ArticleMetrics>, Option<&ArticleMetrics>)> = BTreeMap::new();
    for a in &table.articles {
        let e = by.entry(a.subject_id.as_str()).or_default();
        match a.setting {
            Setting::Ru => e.0 = Some(a),
            Setting::En => e.1 = Some(a),
            _ => {}
        }
    }
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for (subject, pair) in by {
        match pair {
            (Some(ru), Some(en)) => rows.push(DisagreementRow {
                subject_id: subject.to_string(),
                pf_ru: ru.pf,
                pf_en: en.pf,
                delta: ru.pf - en.pf,
                npf_ru: ru.npf,
                npf_en: en.npf,
            }),
            _ => {
                log::warn!("{subject}: missing ru or en metrics, skipped");
                skipped.push(subject.to_string());
            }
        }
    }
    rows.sort_by(|a, b| b.delta.abs().total_cmp(&a.delta.abs()).then_with(|| a.subject_id.cmp(&b.subject_id)));
    DisagreementReport { rows, skipped }
}

// Report writers. Every report is UTF-8 CSV with a header row, 6-decimal
// numbers, and a newline after every line, including the last.

pub fn render_ranking(r: &Ranking) -> String {
    let mut out = String::from("rank,subject_id,setting,kind,score\n");
    for (i, (id, score)) in r.entries.iter().enumerate() {
        let _ = writeln!(out, "{},{},{},{},{}", i + 1, csv_field(id), r.setting, r.kind, fixed6(*score));
    }
    out
}

pub fn render_rbo(rows: &[RboRow]) -> String {
    let mut out = String::from("kind,setting_a,setting_b,p,rbo,len_a,len_b\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{},{},{}", r.kind, r.a, r.b, fixed6(r.p), fixed6(r.rbo), r.len_a, r.len_b);
    }
    out
}

fn opt6(v: Option<f64>) -> String {
    v.map(fixed6).unwrap_or_default()
}

pub fn render_topics(r: &TopicReport) -> String {
    let mut out = String::from("topic_id,label,subject_count,mean_npf_ru,mean_npf_en\n");
    for t in &r.topics {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            csv_field(&t.topic_id),
            csv_field(&t.label),
            t.subject_count,
            opt6(t.mean_npf_ru),
            opt6(t.mean_npf_en)
        );
    }
    out
}

/// Main table, a blank line, then the `npf_ru,npf_en` scatter section.
pub fn render_disagreement(r: &DisagreementReport) -> String {
    let mut out = String::from("subject_id,pf_ru,pf_en,delta,more_persuasive\n");
    for row in &r.rows {
        let side = match row.delta.total_cmp(&0.0) {
            std::cmp::Ordering::Greater => "ru",
            std::cmp::Ordering::Less => "en",
            std::cmp::Ordering::Equal => "tie",
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{side}",
            csv_field(&row.subject_id),
            fixed6(row.pf_ru),
            fixed6(row.pf_en),
            fixed6(row.delta)
        );
    }
    out.push_str("\nsubject_id,npf_ru,npf_en\n");
    let mut scatter: Vec<&DisagreementRow> = r.rows.iter().collect();
    scatter.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
    for row in scatter {
        let _ = writeln!(out, "{},{},{}", csv_field(&row.subject_id), opt6(row.npf_ru), opt6(row.npf_en));
    }
    out
}

pub fn emit_report(path: &Path, body: &str) -> Result<(), AnalysisError> {
    crate::io::write_atomic(path, body.as_bytes()).map_err(|source| AnalysisError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn art(id: &str, setting: Setting, pf: f64, wc: usize) -> ArticleMetrics {
        ArticleMetrics {
            subject_id: id.into(),
            setting,
            word_count: wc,
            pc: (pf * wc as f64).round() as usize,
            pf,
            npf: Some(pf),
            flags: vec![],
        }
    }

    fn table(a: Vec<ArticleMetrics>) -> MetricsTable {
        MetricsTable {
            articles: a,
            npf_min: None,
            npf_max: None,
        }
    }

    #[test]
    fn ranking_tie_rule() {
        let t = table(vec![
            art("d", Setting::En, 0.9, 10),
            art("a", Setting::En, 0.1, 10),
            art("c", Setting::En, 0.9, 10),
            art("b", Setting::En, 0.5, 10),
        ]);
        let r = rank_by_score(&t, Setting::En, ScoreKind::Pf, None).unwrap();
        assert_eq!(r.ids(), ["c", "d", "b", "a"]);
    }

    #[test]
    fn length_filter_drops_short_article() {
        let mut arts: Vec<ArticleMetrics> = (0..8).map(|i| art(&format!("s{i}"), Setting::Ru, 0.1, 100 + i)).collect();
        arts.push(art("short", Setting::Ru, 0.99, 5));
        let t = table(arts);
        assert_eq!(rank_by_score(&t, Setting::Ru, ScoreKind::Pf, None).unwrap().ids()[0], "short");
        let filtered = rank_by_score(&t, Setting::Ru, ScoreKind::Pf, Some(0.25)).unwrap();
        assert!(!filtered.ids().contains(&"short"));
    }

    #[test]
    fn rbo_extremes() {
        let a = ["x", "y", "z"];
        assert!((rbo(&a, &a, 0.9).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(rbo(&a, &["p", "q"], 0.9).unwrap(), 0.0);
        assert!(matches!(rbo(&["x", "x"], &a, 0.9), Err(AnalysisError::DuplicateId(_))));
        assert!(rbo(&a, &a, 1.0).is_err());
    }

    #[test]
    fn topic_means() {
        let t = table(vec![art("s1", Setting::Ru, 0.2, 10), art("s2", Setting::Ru, 0.4, 10), art("s3", Setting::Ru, 0.9, 10)]);
        let map = parse_topic_map("s1\tQ1\tT\ns2\tQ1\tT\ns3\tQ2\tU\n").unwrap();
        let r = topic_aggregate(&map, &t, 2);
        assert_eq!(r.topics.len(), 1);
        assert!((r.topics[0].mean_npf_ru.unwrap() - 0.3).abs() < 1e-12);
        assert!(r.unmapped.is_empty());
    }

    #[test]
    fn disagreement_sign_and_order() {
        let t = table(vec![
            art("a", Setting::Ru, 0.8, 10),
            art("a", Setting::En, 0.2, 10),
            art("b", Setting::Ru, 0.3, 10),
            art("b", Setting::En, 0.3, 10),
            art("c", Setting::Ru, 0.3, 10),
        ]);
        let r = disagreement(&t);
        assert_eq!(r.rows[0].subject_id, "a");
        assert!((r.rows[0].delta - 0.6).abs() < 1e-12);
        assert_eq!(r.rows[1].delta, 0.0);
        assert_eq!(r.skipped, ["c"]);
        assert!(render_disagreement(&r).contains("\nsubject_id,npf_ru,npf_en\n"));
    }

    #[test]
    fn empty_ranking_is_header_only() {
        let r = Ranking {
            setting: Setting::En,
            kind: ScoreKind::Pc,
            entries: vec![],
        };
        assert_eq!(render_ranking(&r), "rank,subject_id,setting,kind,score\n");
    }
}
