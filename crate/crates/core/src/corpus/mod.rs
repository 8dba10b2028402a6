//! Labeled persuasion datasets, paired bilingual article corpora and the
//! canonical word counter.
//!
//! Two on-disk formats are handled here:
//!
//! * **Labeled dataset**: UTF-8 TSV with a header row and the columns
//!   `context_id, article_id, language, techniques, text`. `techniques` is a
//!   semicolon-joined list of technique names (empty for the None class).
//!   Tabs, newlines and backslashes inside `text` are escaped as `\t`, `\n`
//!   and `\\`.
//! * **Paired corpus**: line-delimited JSON, one record per article:
//!   `{"subject_id", "title", "setting", "paragraphs": [..]}` with an optional
//!   `translation` provenance object on machine-translated articles. A corpus
//!   path may be a single file or a directory of `*.jsonl` files (read in
//!   file-name order).

pub mod tokenize;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::technique::Technique;

pub use tokenize::{split_sentences, tokenize, tokenize_sentence, word_count};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed row at line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("unknown technique '{token}' at line {line}")]
    UnknownTechnique { token: String, line: usize },
    #[error("duplicate context_id '{id}' at line {line}")]
    DuplicateContext { id: String, line: usize },
    #[error("duplicate article ({subject_id}, {setting})")]
    DuplicateArticle { subject_id: String, setting: Setting },
    #[error("empty article list")]
    EmptyArticles,
    #[error("top fraction must lie in (0, 1], got {0}")]
    InvalidFraction(f64),
}

impl CorpusError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Language of a text or a prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    En,
    Ru,
}

impl Language {
    pub fn code(self) -> &'static str {
        match self {
            Language::En => "en",
            Language::Ru => "ru",
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Language {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "en" => Ok(Language::En),
            "ru" => Ok(Language::Ru),
            other => Err(format!("unknown language '{other}'")),
        }
    }
}

/// One of the four corpus variants: the two original articles and their
/// machine translations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    En,
    Ru,
    En2Ru,
    Ru2En,
}

impl Setting {
    pub const ALL: [Setting; 4] = [Setting::En, Setting::Ru, Setting::En2Ru, Setting::Ru2En];

    pub fn code(self) -> &'static str {
        match self {
            Setting::En => "en",
            Setting::Ru => "ru",
            Setting::En2Ru => "en2ru",
            Setting::Ru2En => "ru2en",
        }
    }

    /// Language the text is written in, which is also the prompt language.
    pub fn language(self) -> Language {
        match self {
            Setting::En | Setting::Ru2En => Language::En,
            Setting::Ru | Setting::En2Ru => Language::Ru,
        }
    }

    /// For translated settings, the original setting they were produced from.
    pub fn source(self) -> Option<Setting> {
        match self {
            Setting::En2Ru => Some(Setting::En),
            Setting::Ru2En => Some(Setting::Ru),
            _ => None,
        }
    }

    pub fn is_translation(self) -> bool {
        self.source().is_some()
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Setting {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Setting::ALL
            .into_iter()
            .find(|x| x.code() == s)
            .ok_or_else(|| format!("unknown setting '{s}'"))
    }
}

/// A labeled paragraph from the persuasion dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledContext {
    pub context_id: String,
    pub article_id: String,
    pub text: String,
    pub gold_techniques: BTreeSet<Technique>,
    pub language: Language,
}

/// Binary collapse of the technique labels: true iff any technique is present.
pub fn collapse_to_binary(ctx: &LabeledContext) -> bool {
    !ctx.gold_techniques.is_empty()
}

const DATASET_HEADER: &str = "context_id\tarticle_id\tlanguage\ttechniques\ttext";

fn unescape_field(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('t') => out.push('\t'),
                Some('n') => out.push('\n'),
                Some('\\') => out.push('\\'),
                Some(other) => {
                    out.push('\\');
                    out.push(other);
                }
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}

fn escape_field(s: &str) -> String {
    s.replace('\\', "\\\\").replace('\t', "\\t").replace('\n', "\\n")
}

/// Parse the labeled-dataset TSV format from a string.
pub fn parse_labeled_dataset(content: &str) -> Result<Vec<LabeledContext>, CorpusError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    let mut lines = content.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim_end_matches('\r') == DATASET_HEADER => {}
        Some((_, header)) => {
            return Err(CorpusError::Malformed {
                line: 1,
                reason: format!("expected header '{DATASET_HEADER}', found '{header}'"),
            })
        }
        None => return Ok(out),
    }
    for (idx, raw) in lines {
        let line = idx + 1;
        let raw = raw.trim_end_matches('\r');
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.splitn(5, '\t').collect();
        if fields.len() != 5 {
            return Err(CorpusError::Malformed {
                line,
                reason: format!("expected 5 tab-separated fields, found {}", fields.len()),
            });
        }
        let context_id = fields[0].trim().to_string();
        if context_id.is_empty() {
            return Err(CorpusError::Malformed {
                line,
                reason: "empty context_id".into(),
            });
        }
        let language = fields[2]
            .trim()
            .parse::<Language>()
            .map_err(|reason| CorpusError::Malformed { line, reason })?;
        let mut gold_techniques = BTreeSet::new();
        for token in fields[3].split(';').map(str::trim).filter(|t| !t.is_empty()) {
            let t = token.parse::<Technique>().map_err(|_| CorpusError::UnknownTechnique {
                token: token.to_string(),
                line,
            })?;
            gold_techniques.insert(t);
        }
        let text = unescape_field(fields[4]);
        if text.trim().is_empty() {
            return Err(CorpusError::Malformed {
                line,
                reason: "empty text".into(),
            });
        }
        if !seen.insert(context_id.clone()) {
            return Err(CorpusError::DuplicateContext { id: context_id, line });
        }
        out.push(LabeledContext {
            context_id,
            article_id: fields[1].trim().to_string(),
            text,
            gold_techniques,
            language,
        });
    }
    Ok(out)
}

/// Load a labeled dataset file.
pub fn load_labeled_dataset(path: &Path) -> Result<Vec<LabeledContext>, CorpusError> {
    let content = fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
    let rows = parse_labeled_dataset(&content)?;
    log::info!("loaded {} labeled contexts from {}", rows.len(), path.display());
    Ok(rows)
}

pub fn render_labeled_dataset(rows: &[LabeledContext]) -> String {
    let mut out = String::from(DATASET_HEADER);
    out.push('\n');
    for r in rows {
        let techniques: Vec<&str> = r.gold_techniques.iter().map(|t| t.name()).collect();
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            r.context_id,
            r.article_id,
            r.language,
            techniques.join(";"),
            escape_field(&r.text)
        ));
    }
    out
}

pub fn save_labeled_dataset(path: &Path, rows: &[LabeledContext]) -> Result<(), CorpusError> {
    crate::io::write_atomic(path, render_labeled_dataset(rows).as_bytes())
        .map_err(|e| CorpusError::io(path, e))
}

/// A paragraph with its cached word count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Paragraph {
    pub index: usize,
    pub text: String,
    pub word_count: usize,
}

impl Paragraph {
    pub fn new(index: usize, text: impl Into<String>) -> Paragraph {
        let text = text.into();
        let word_count = word_count(&text);
        Paragraph {
            index,
            text,
            word_count,
        }
    }
}

/// Where a machine-translated article came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranslationProvenance {
    pub direction: Setting,
    pub model: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Article {
    pub subject_id: String,
    pub title: String,
    pub setting: Setting,
    pub paragraphs: Vec<Paragraph>,
    pub translation: Option<TranslationProvenance>,
}

impl Article {
    /// Build an article, indexing paragraphs densely in order.
    pub fn new(
        subject_id: impl Into<String>,
        title: impl Into<String>,
        setting: Setting,
        paragraphs: impl IntoIterator<Item = String>,
    ) -> Article {
        Article {
            subject_id: subject_id.into(),
            title: title.into(),
            setting,
            paragraphs: paragraphs
                .into_iter()
                .enumerate()
                .map(|(i, t)| Paragraph::new(i, t))
                .collect(),
            translation: None,
        }
    }

    pub fn word_count(&self) -> usize {
        self.paragraphs.iter().map(|p| p.word_count).sum()
    }
}

/// One subject's articles across settings. `en` and `ru` are always present.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArticlePair {
    pub subject_id: String,
    pub articles: BTreeMap<Setting, Article>,
}

impl ArticlePair {
    pub fn get(&self, setting: Setting) -> Option<&Article> {
        self.articles.get(&setting)
    }

    pub fn has_all_settings(&self) -> bool {
        Setting::ALL.iter().all(|s| self.articles.contains_key(s))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ArticleRecord {
    subject_id: String,
    title: String,
    setting: Setting,
    paragraphs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    translation: Option<TranslationProvenance>,
}

/// A loaded paired corpus plus the warnings raised while assembling it.
#[derive(Debug, Clone, Default)]
pub struct LoadedCorpus {
    pub pairs: Vec<ArticlePair>,
    pub warnings: Vec<String>,
}

fn corpus_files(path: &Path) -> Result<Vec<PathBuf>, CorpusError> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| CorpusError::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        files.sort();
        Ok(files)
    } else {
        Ok(vec![path.to_path_buf()])
    }
}

/// Parse paired-corpus records from line-delimited JSON text. `origin` names
/// the source in error messages.
pub fn parse_paired_corpus(content: &str, origin: &str) -> Result<LoadedCorpus, CorpusError> {
    assemble_pairs(parse_records(content, origin)?)
}

fn parse_records(content: &str, origin: &str) -> Result<Vec<(ArticleRecord, usize)>, CorpusError> {
    let mut out = Vec::new();
    for (idx, raw) in content.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let rec: ArticleRecord = serde_json::from_str(raw).map_err(|e| CorpusError::Malformed {
            line: idx + 1,
            reason: format!("{origin}: {e}"),
        })?;
        out.push((rec, idx + 1));
    }
    Ok(out)
}

fn assemble_pairs(records: Vec<(ArticleRecord, usize)>) -> Result<LoadedCorpus, CorpusError> {
    let mut warnings = Vec::new();
    let mut order: Vec<String> = Vec::new();
    let mut by_subject: HashMap<String, BTreeMap<Setting, Article>> = HashMap::new();
    for (rec, line) in records {
        let mut paragraphs = Vec::new();
        for text in rec.paragraphs {
            if text.trim().is_empty() {
                warnings.push(format!(
                    "{} ({}): dropped blank paragraph",
                    rec.subject_id, rec.setting
                ));
                continue;
            }
            paragraphs.push(Paragraph::new(paragraphs.len(), text));
        }
        if paragraphs.is_empty() {
            return Err(CorpusError::Malformed {
                line,
                reason: format!("article ({}, {}) has no paragraphs", rec.subject_id, rec.setting),
            });
        }
        let entry = by_subject.entry(rec.subject_id.clone()).or_insert_with(|| {
            order.push(rec.subject_id.clone());
            BTreeMap::new()
        });
        if entry.contains_key(&rec.setting) {
            return Err(CorpusError::DuplicateArticle {
                subject_id: rec.subject_id,
                setting: rec.setting,
            });
        }
        entry.insert(
            rec.setting,
            Article {
                subject_id: rec.subject_id,
                title: rec.title,
                setting: rec.setting,
                paragraphs,
                translation: rec.translation,
            },
        );
    }
    let mut pairs = Vec::new();
    for subject_id in order {
        let articles = by_subject.remove(&subject_id).unwrap_or_default();
        let missing: Vec<&str> = [Setting::En, Setting::Ru]
            .iter()
            .filter(|s| !articles.contains_key(s))
            .map(|s| s.code())
            .collect();
        if !missing.is_empty() {
            let msg = format!(
                "subject {subject_id}: missing {} article, excluded",
                missing.join(" and ")
            );
            log::warn!("{msg}");
            warnings.push(msg);
            continue;
        }
        pairs.push(ArticlePair { subject_id, articles });
    }
    Ok(LoadedCorpus { pairs, warnings })
}

/// Load a paired corpus from a `.jsonl` file or a directory of them.
pub fn load_paired_corpus(path: &Path) -> Result<LoadedCorpus, CorpusError> {
    let mut records = Vec::new();
    for file in corpus_files(path)? {
        let content = fs::read_to_string(&file).map_err(|e| CorpusError::io(&file, e))?;
        records.extend(parse_records(&content, &file.display().to_string())?);
    }
    let loaded = assemble_pairs(records)?;
    log::info!(
        "loaded {} article pairs from {} ({} warnings)",
        loaded.pairs.len(),
        path.display(),
        loaded.warnings.len()
    );
    Ok(loaded)
}

/// Serialize pairs to the line-delimited corpus format, settings in canonical
/// order.
pub fn render_paired_corpus(pairs: &[ArticlePair]) -> String {
    let mut out = String::new();
    for pair in pairs {
        for article in pair.articles.values() {
            let rec = ArticleRecord {
                subject_id: article.subject_id.clone(),
                title: article.title.clone(),
                setting: article.setting,
                paragraphs: article.paragraphs.iter().map(|p| p.text.clone()).collect(),
                translation: article.translation.clone(),
            };
            out.push_str(&serde_json::to_string(&rec).expect("article record serializes"));
            out.push('\n');
        }
    }
    out
}

pub fn save_paired_corpus(path: &Path, pairs: &[ArticlePair]) -> Result<(), CorpusError> {
    crate::io::write_atomic(path, render_paired_corpus(pairs).as_bytes())
        .map_err(|e| CorpusError::io(path, e))
}

/// Keep the articles whose word count is strictly above the nearest-rank
/// `(1 - top_fraction)` quantile. Input order is preserved.
pub fn length_percentile_filter<'a>(
    articles: &[&'a Article],
    top_fraction: f64,
) -> Result<Vec<&'a Article>, CorpusError> {
    if articles.is_empty() {
        return Err(CorpusError::EmptyArticles);
    }
    let counts: Vec<usize> = articles.iter().map(|a| a.word_count()).collect();
    let threshold = nearest_rank_threshold(&counts, top_fraction)?;
    Ok(articles
        .iter()
        .zip(&counts)
        .filter(|(_, &wc)| threshold.is_none_or(|t| wc > t))
        .map(|(a, _)| *a)
        .collect())
}

/// Nearest-rank quantile at `1 - top_fraction`; `None` when the rank is zero
/// (every value passes).
pub fn nearest_rank_threshold(values: &[usize], top_fraction: f64) -> Result<Option<usize>, CorpusError> {
    if !(top_fraction > 0.0 && top_fraction <= 1.0) {
        return Err(CorpusError::InvalidFraction(top_fraction));
    }
    if values.is_empty() {
        return Err(CorpusError::EmptyArticles);
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    let q = 1.0 - top_fraction;
    // Tolerance absorbs float noise such as (1 - 0.7) * 10 = 3.0000000000000004.
    let rank = (q * sorted.len() as f64 - 1e-9).ceil().max(0.0) as usize;
    Ok(if rank == 0 { None } else { Some(sorted[rank - 1]) })
}
