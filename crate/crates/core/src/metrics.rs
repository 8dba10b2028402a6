//! Persuasive count (PC), persuasive frequency (PF) and the jointly
//! normalized NPF.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{word_count, Setting};
use crate::detect::{PtsEntry, PtsRow};
use crate::io::{csv_field, fixed6};

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("paragraph has no words")]
    ZeroLength,
    #[error("no paragraphs for article")]
    NoParagraphs,
    #[error("paragraphs from different articles: {0}")]
    Inconsistent(String),
    #[error("degenerate normalization")]
    Degenerate,
    #[error("weighted PF {weighted} differs from total PC / total WC {ratio}")]
    Identity { weighted: f64, ratio: f64 },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
}

/// Total word count of the PTS entries.
pub fn pc<S: AsRef<str>>(entries: &[S]) -> usize {
    entries.iter().map(|e| word_count(e.as_ref())).sum()
}

pub fn pc_entries(entries: &[PtsEntry]) -> usize {
    entries.iter().map(|e| word_count(&e.text)).sum()
}

pub fn pf_paragraph(pc: usize, wc: usize) -> Result<f64, MetricsError> {
    if wc == 0 {
        return Err(MetricsError::ZeroLength);
    }
    Ok(pc as f64 / wc as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParagraphMetrics {
    pub subject_id: String,
    pub setting: Setting,
    pub paragraph: usize,
    pub word_count: usize,
    pub pc: usize,
    pub pf: f64,
}

impl ParagraphMetrics {
    pub fn from_row(row: &PtsRow) -> Result<ParagraphMetrics, MetricsError> {
        let pc = pc_entries(&row.spans);
        Ok(ParagraphMetrics {
            subject_id: row.at.subject_id.clone(),
            setting: row.at.setting,
            paragraph: row.at.paragraph,
            word_count: row.word_count,
            pc,
            pf: pf_paragraph(pc, row.word_count)?,
        })
    }

    /// PC can exceed the word count when PTS entries overlap in the source.
    pub fn over_one(&self) -> bool {
        self.pf > 1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArticleMetrics {
    pub subject_id: String,
    pub setting: Setting,
    pub word_count: usize,
    pub pc: usize,
    pub pf: f64,
    pub npf: Option<f64>,
    pub flags: Vec<String>,
}

/// Article PF as the word-count weighted mean of paragraph PFs, checked
/// against total PC / total WC.
pub fn pf_article(paras: &[ParagraphMetrics]) -> Result<ArticleMetrics, MetricsError> {
    let first = paras.first().ok_or(MetricsError::NoParagraphs)?;
    if let Some(p) = paras.iter().find(|p| p.subject_id != first.subject_id || p.setting != first.setting) {
        return Err(MetricsError::Inconsistent(format!(
            "{}/{} vs {}/{}",
            first.subject_id, first.setting, p.subject_id, p.setting
        )));
    }
    let wc: usize = paras.iter().map(|p| p.word_count).sum();
    let pc: usize = paras.iter().map(|p| p.pc).sum();
    if wc == 0 {
        return Err(MetricsError::ZeroLength);
    }
    let weighted: f64 = paras.iter().map(|p| p.pf * (p.word_count as f64 / wc as f64)).sum();
    let ratio = pc as f64 / wc as f64;
    if (weighted - ratio).abs() > 1e-12 * ratio.abs().max(1.0) {
        return Err(MetricsError::Identity { weighted, ratio });
    }
    let over = paras.iter().filter(|p| p.over_one()).count();
    let mut flags = Vec::new();
    if over > 0 {
        flags.push(format!("paragraph_pf_over_1={over}"));
    }
    Ok(ArticleMetrics {
        subject_id: first.subject_id.clone(),
        setting: first.setting,
        word_count: wc,
        pc,
        pf: weighted,
        npf: None,
        flags,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedScores {
    pub min: f64,
    pub max: f64,
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

/// Min-max scale both lists over their concatenation.
pub fn npf(first: &[f64], second: &[f64]) -> Result<NormalizedScores, MetricsError> {
    let all = first.iter().chain(second);
    let min = all.clone().copied().fold(f64::INFINITY, f64::min);
    let max = all.copied().fold(f64::NEG_INFINITY, f64::max);
    if first.len() + second.len() < 2 || !(max > min) {
        return Err(MetricsError::Degenerate);
    }
    let range = max - min;
    let scale = |v: &f64| (v - min) / range;
    Ok(NormalizedScores {
        min,
        max,
        first: first.iter().map(scale).collect(),
        second: second.iter().map(scale).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub articles: Vec<ArticleMetrics>,
    /// Extremes of the en + ru PF values used for NPF.
    pub npf_min: Option<f64>,
    pub npf_max: Option<f64>,
}

/// Group PTS rows by article, compute PF, and normalize the original en and
/// ru articles jointly. Translated settings get no NPF.
pub fn compute_metrics(rows: &[PtsRow]) -> Result<MetricsTable, MetricsError> {
    let mut groups: BTreeMap<(String, Setting), Vec<ParagraphMetrics>> = BTreeMap::new();
    for r in rows {
        if r.word_count == 0 {
            log::warn!("{}/{}/{}: zero-word paragraph excluded", r.at.subject_id, r.at.setting, r.at.paragraph);
            continue;
        }
        groups
            .entry((r.at.subject_id.clone(), r.at.setting))
            .or_default()
            .push(ParagraphMetrics::from_row(r)?);
    }
    let mut articles: Vec<ArticleMetrics> = groups.values().map(|p| pf_article(p)).collect::<Result<_, _>>()?;
    let en: Vec<usize> = (0..articles.len()).filter(|&i| articles[i].setting == Setting::En).collect();
    let ru: Vec<usize> = (0..articles.len()).filter(|&i| articles[i].setting == Setting::Ru).collect();
    let (mut npf_min, mut npf_max) = (None, None);
    if !en.is_empty() || !ru.is_empty() {
        let a: Vec<f64> = en.iter().map(|&i| articles[i].pf).collect();
        let b: Vec<f64> = ru.iter().map(|&i| articles[i].pf).collect();
        let scores = npf(&a, &b)?;
        for (&i, v) in en.iter().zip(&scores.first) {
            articles[i].npf = Some(*v);
        }
        for (&i, v) in ru.iter().zip(&scores.second) {
            articles[i].npf = Some(*v);
        }
        npf_min = Some(scores.min);
        npf_max = Some(scores.max);
    }
    articles.sort_by(|a, b| a.subject_id.cmp(&b.subject_id).then(a.setting.cmp(&b.setting)));
    Ok(MetricsTable {
        articles,
        npf_min,
        npf_max,
    })
}

const HEADER: &str = "subject_id,setting,wc,pc,pf,npf,flags";

pub fn render_metrics(table: &MetricsTable) -> String {
    let mut out = format!("{HEADER}\n");
    for a in &table.articles {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            csv_field(&a.subject_id),
            a.setting,
            a.word_count,
            a.pc,
            fixed6(a.pf),
            a.npf.map(fixed6).unwrap_or_default(),
            csv_field(&a.flags.join(";"))
        );
    }
    out
}

/// Read a metrics table back. Values carry the 6-decimal precision of the
/// file.
pub fn parse_metrics(content: &str) -> Result<MetricsTable, MetricsError> {
    let mut articles = Vec::new();
    let mut lines = content.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end() == HEADER => {}
        _ => {
            return Err(MetricsError::Malformed {
                line: 1,
                reason: format!("expected header '{HEADER}'"),
            })
        }
    }
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| MetricsError::Malformed { line: i + 1, reason };
        let f = split_csv(line);
        if f.len() != 7 {
            return Err(bad(format!("expected 7 fields, got {}", f.len())));
        }
        let setting: Setting = f[1].parse().map_err(bad)?;
        let int = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("bad integer '{s}'")));
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("bad number '{s}'")));
        articles.push(ArticleMetrics {
            subject_id: f[0].clone(),
            setting,
            word_count: int(&f[2])?,
            pc: int(&f[3])?,
            pf: num(&f[4])?,
            npf: if f[5].is_empty() { None } else { Some(num(&f[5])?) },
            flags: if f[6].is_empty() { Vec::new() } else { f[6].split(';').map(str::to_string).collect() },
        });
    }
    let with_npf: Vec<&ArticleMetrics> = articles.iter().filter(|a| a.npf.is_some()).collect();
    let min = with_npf.iter().map(|a| a.pf).fold(f64::INFINITY, f64::min);
    let max = with_npf.iter().map(|a| a.pf).fold(f64::NEG_INFINITY, f64::max);
    let has = !with_npf.is_empty();
    Ok(MetricsTable {
        articles,
        npf_min: has.then_some(min),
        npf_max: has.then_some(max),
    })
}

/// Split one CSV line written by [`csv_field`] (double-quote escaping).
pub fn split_csv(line: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut quoted = false;
    let mut chars = line.chars().peekable();
    while let Some(c) = chars.next() {
        match (c, quoted) {
            ('"', true) if chars.peek() == Some(&'"') => {
                cur.push('"');
                chars.next();
            }
            ('"', true) => quoted = false,
            ('"', false) if cur.is_empty() => quoted = true,
            (',', false) => out.push(std::mem::take(&mut cur)),
            _ => cur.push(c),
        }
    }
    out.push(cur);
    out
}

pub fn load_metrics(path: &Path) -> Result<MetricsTable, MetricsError> {
    let content = std::fs::read_to_string(path).map_err(|source| MetricsError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_metrics(&content)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn para(pc: usize, wc: usize) -> ParagraphMetrics {
        ParagraphMetrics {
            subject_id: "s".into(),
            setting: Setting::En,
            paragraph: 0,
            word_count: wc,
            pc,
            pf: pf_paragraph(pc, wc).unwrap(),
        }
    }

    #[test]
    fn pc_examples() {
        assert_eq!(pc::<&str>(&[]), 0);
        assert_eq!(pc(&["fire engulfed", "tragedy"]), 3);
    }

    #[test]
    fn pf_examples() {
        assert_eq!(pf_paragraph(5, 20).unwrap(), 0.25);
        assert_eq!(pf_paragraph(0, 20).unwrap(), 0.0);
        assert!(pf_paragraph(1, 0).is_err());
        let a = pf_article(&[para(2, 10), para(15, 30)]).unwrap();
        assert!((a.pf - 0.425).abs() < 1e-15);
        let single = pf_article(&[para(3, 7)]).unwrap();
        assert_eq!(single.pf, 3.0 / 7.0);
        assert!(pf_article(&[para(3, 2)]).unwrap().flags[0].starts_with("paragraph_pf_over_1"));
    }

    #[test]
    fn npf_examples() {
        let s = npf(&[0.05, 0.6], &[0.1, 0.3]).unwrap();
        assert_eq!(s.first, [0.0, 1.0]);
        assert!((s.second[0] - 0.05 / 0.55).abs() < 1e-12);
        assert!((s.second[1] - 0.25 / 0.55).abs() < 1e-12);
        let s = npf(&[0.2, 0.2, 0.2], &[0.7]).unwrap();
        assert_eq!(s.first, [0.0; 3]);
        assert_eq!(s.second, [1.0]);
        assert_eq!(npf(&[0.3, 0.3], &[0.3]).unwrap_err().to_string(), "degenerate normalization");
    }

    #[test]
    fn csv_split_handles_quotes() {
        assert_eq!(split_csv("a,\"b,c\",\"d\"\"e\","), ["a", "b,c", "d\"e", ""]);
    }
}
