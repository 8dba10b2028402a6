//! High-level questions: generation, parsing, n-gram dedup and the bilingual
//! repository.
//!
//! Repository files are TOML: a `[provenance]` table followed by one
//! `[[question]]` table per HLQ (`id`, `text_en`, optional `text_ru`,
//! `source_technique`, `active`). Order in the file is the repository order.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::tokenize::tokenize;
use crate::corpus::Setting;
use crate::gateway::{vars, Gateway, GatewayError};
use crate::technique::{class_serde, Technique, NONE_DEFINITION, NONE_NAME};

pub const DEFAULT_NGRAM: usize = 3;
pub const DEFAULT_THRESHOLD: f64 = 0.7;

const PUBLISHED: &str = include_str!("../data/hlqs_published.toml");

#[derive(Debug, thiserror::Error)]
pub enum HlqError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{origin}: {message}")]
    Format { origin: String, message: String },
    #[error("invalid question id '{0}' (expected Q<number>)")]
    InvalidId(String),
    #[error("duplicate question id {0}")]
    DuplicateId(String),
    #[error("question {0} has empty English text")]
    EmptyText(String),
    #[error("no questions parsed")]
    NoQuestionsParsed { raw: String },
    #[error("question {0} is active but has no Russian text")]
    NotBilingual(String),
    #[error("no active questions in repository")]
    NoActive,
    #[error("overlay references unknown question {0}")]
    UnknownOverlayId(String),
    #[error("invalid dedup parameters: n={n}, threshold={threshold}")]
    InvalidDedupParams { n: usize, threshold: f64 },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hlq {
    pub id: String,
    pub text_en: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_ru: Option<String>,
    /// `None` is the "None" class.
    #[serde(with = "class_serde")]
    pub source_technique: Option<Technique>,
    #[serde(default)]
    pub active: bool,
}

impl Hlq {
    pub fn number(&self) -> Option<u32> {
        parse_id(&self.id)
    }

    pub fn text(&self, lang: crate::corpus::Language) -> Option<&str> {
        match lang {
            crate::corpus::Language::En => Some(&self.text_en),
            crate::corpus::Language::Ru => self.text_ru.as_deref(),
        }
    }
}

/// Numeric part of a `Q<number>` id.
pub fn parse_id(id: &str) -> Option<u32> {
    let digits = id.strip_prefix('Q')?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub model: String,
    pub date: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub note: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HlqRepository {
    pub provenance: Provenance,
    #[serde(default, rename = "question")]
    pub questions: Vec<Hlq>,
}

impl HlqRepository {
    /// The 12 published questions, all active and bilingual.
    pub fn published() -> HlqRepository {
        HlqRepository::parse(PUBLISHED, "builtin:published").expect("bundled repository is valid")
    }

    pub fn parse(content: &str, origin: &str) -> Result<HlqRepository, HlqError> {
        let repo: HlqRepository = toml::from_str(content).map_err(|e| HlqError::Format {
            origin: origin.to_string(),
            message: e.to_string(),
        })?;
        repo.validate()?;
        Ok(repo)
    }

    /// Load from a file; `builtin:published` names the bundled repository.
    pub fn load(path: &Path) -> Result<HlqRepository, HlqError> {
        if path.as_os_str() == "builtin:published" {
            return Ok(HlqRepository::published());
        }
        let content = std::fs::read_to_string(path).map_err(|source| HlqError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        HlqRepository::parse(&content, &path.display().to_string())
    }

    pub fn render(&self) -> String {
        toml::to_string(self).expect("repository serializes")
    }

    pub fn save(&self, path: &Path) -> Result<(), HlqError> {
        self.validate()?;
        crate::io::write_atomic(path, self.render().as_bytes()).map_err(|source| HlqError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn validate(&self) -> Result<(), HlqError> {
        let mut seen = HashSet::new();
        for q in &self.questions {
            if parse_id(&q.id).is_none() {
                return Err(HlqError::InvalidId(q.id.clone()));
            }
            if !seen.insert(q.id.as_str()) {
                return Err(HlqError::DuplicateId(q.id.clone()));
            }
            if q.text_en.trim().is_empty() {
                return Err(HlqError::EmptyText(q.id.clone()));
            }
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&Hlq> {
        self.questions.iter().find(|q| q.id == id)
    }

    /// Next unused id number (one past the largest).
    pub fn next_id(&self) -> u32 {
        self.questions.iter().filter_map(Hlq::number).max().map_or(1, |m| m + 1)
    }

    /// Active questions in repository order. Every one must carry both texts.
    pub fn active_for_detection(&self) -> Result<Vec<&Hlq>, HlqError> {
        let active: Vec<&Hlq> = self.questions.iter().filter(|q| q.active).collect();
        if active.is_empty() {
            return Err(HlqError::NoActive);
        }
        if let Some(q) = active.iter().find(|q| q.text_ru.as_deref().is_none_or(|t| t.trim().is_empty())) {
            return Err(HlqError::NotBilingual(q.id.clone()));
        }
        Ok(active)
    }

    /// Mark exactly the given ids active.
    pub fn set_active(&mut self, ids: &BTreeSet<String>) {
        for q in &mut self.questions {
            q.active = ids.contains(&q.id);
        }
    }
}

/// Human-reviewed Russian texts, kept apart from the generated repository.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RussianOverlay {
    #[serde(default, rename = "entry")]
    pub entries: Vec<OverlayEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlayEntry {
    pub id: String,
    pub text_ru: String,
    /// Set once a person has post-edited the machine translation.
    #[serde(default)]
    pub edited: bool,
}

impl RussianOverlay {
    pub fn load(path: &Path) -> Result<RussianOverlay, HlqError> {
        let content = std::fs::read_to_string(path).map_err(|source| HlqError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        toml::from_str(&content).map_err(|e| HlqError::Format {
            origin: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), HlqError> {
        let body = toml::to_string(self).expect("overlay serializes");
        crate::io::write_atomic(path, body.as_bytes()).map_err(|source| HlqError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn apply(&self, repo: &mut HlqRepository) -> Result<(), HlqError> {
        for e in &self.entries {
            let q = repo
                .questions
                .iter_mut()
                .find(|q| q.id == e.id)
                .ok_or_else(|| HlqError::UnknownOverlayId(e.id.clone()))?;
            q.text_ru = Some(e.text_ru.clone());
        }
        Ok(())
    }
}

/// Machine-translate every question lacking Russian text. Existing overlay
/// entries (edited or not) are kept as they are.
pub fn translate_repository(
    gateway: &Gateway,
    repo: &HlqRepository,
    existing: &RussianOverlay,
) -> Result<RussianOverlay, HlqError> {
    let known: BTreeMap<&str, &OverlayEntry> = existing.entries.iter().map(|e| (e.id.as_str(), e)).collect();
    let todo: Vec<&Hlq> = repo
        .questions
        .iter()
        .filter(|q| q.text_ru.is_none() && !known.contains_key(q.id.as_str()))
        .collect();
    let translated = gateway.map_bounded(&todo, |q| gateway.translate_paragraph(&q.text_en, Setting::En2Ru));
    let mut fresh: BTreeMap<&str, String> = BTreeMap::new();
    for (q, r) in todo.iter().zip(translated) {
        fresh.insert(q.id.as_str(), r?.trim().to_string());
    }
    let mut entries = Vec::new();
    for q in &repo.questions {
        if let Some(e) = known.get(q.id.as_str()) {
            entries.push((*e).clone());
        } else if let Some(text) = fresh.remove(q.id.as_str()) {
            entries.push(OverlayEntry {
                id: q.id.clone(),
                text_ru: text,
                edited: false,
            });
        }
    }
    Ok(RussianOverlay { entries })
}

fn task_for(technique: Option<Technique>) -> (&'static str, &'static str) {
    match technique {
        Some(t) => (t.name(), t.definition()),
        None => (NONE_NAME, NONE_DEFINITION),
    }
}

/// Ask the model for questions about one technique and parse the reply.
pub fn request_questions(gateway: &Gateway, technique: Option<Technique>) -> Result<Vec<String>, HlqError> {
    let (task, definition) = task_for(technique);
    let prompt = gateway.catalog().render(
        "hlq_gen",
        None,
        &vars([("task", task.to_string()), ("definition", definition.to_string())]),
    )?;
    let raw = gateway.complete(&prompt)?.response_text;
    let parsed = parse_question_list(&raw);
    if parsed.is_empty() {
        return Err(HlqError::NoQuestionsParsed { raw });
    }
    Ok(parsed)
}

/// Generate candidates for one technique, numbering from `next_id`.
pub fn generate_candidates(
    gateway: &Gateway,
    technique: Option<Technique>,
    next_id: &mut u32,
) -> Result<Vec<Hlq>, HlqError> {
    let texts = request_questions(gateway, technique)?;
    Ok(number_questions(texts, technique, next_id))
}

fn number_questions(texts: Vec<String>, technique: Option<Technique>, next_id: &mut u32) -> Vec<Hlq> {
    texts
        .into_iter()
        .map(|text_en| {
            let id = format!("Q{next_id}");
            *next_id += 1;
            Hlq {
                id,
                text_en,
                text_ru: None,
                source_technique: technique,
                active: false,
            }
        })
        .collect()
}

/// Generate for several techniques concurrently. Ids are assigned afterwards
/// in technique order, so numbering does not depend on completion order.
/// Techniques whose reply does not parse are reported, not fatal.
pub fn generate_all(
    gateway: &Gateway,
    techniques: &[Option<Technique>],
    first_id: u32,
) -> Result<(Vec<Hlq>, Vec<(Option<Technique>, HlqError)>), HlqError> {
    let replies = gateway.map_bounded(techniques, |t| request_questions(gateway, *t));
    let mut next = first_id;
    let mut out = Vec::new();
    let mut failed = Vec::new();
    for (t, r) in techniques.iter().zip(replies) {
        match r {
            Ok(texts) => out.extend(number_questions(texts, *t, &mut next)),
            Err(HlqError::NoQuestionsParsed { raw }) => {
                log::warn!("no questions parsed for {}", task_for(*t).0);
                failed.push((*t, HlqError::NoQuestionsParsed { raw }));
            }
            Err(e) => return Err(e),
        }
    }
    Ok((out, failed))
}

const QUOTES: &[char] = &['"', '\'', '“', '”', '«', '»', '‘', '’', '`'];

const OPENERS: &[&str] = &[
    "does", "do", "did", "is", "are", "was", "were", "can", "could", "would", "will", "should", "has",
    "have", "had", "may", "might", "must", "how", "what", "which", "who", "whom", "whose", "why",
    "when", "where", "to",
];

fn marker_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^(?:\(?\d{1,3}[.)]|\(\d{1,3}\)|[-*•–—]|[a-zA-Z][.)]\s|(?i:q(?:uestion)?\s*\d{1,3}\s*[:.)]))\s*")
            .expect("static regex")
    })
}

fn strip_markers(s: &str) -> &str {
    let mut s = s.trim();
    loop {
        let before = s;
        if let Some(m) = marker_re().find(s) {
            s = s[m.end()..].trim_start();
        }
        s = s.trim_matches(|c: char| QUOTES.contains(&c) || c.is_whitespace());
        if s == before {
            return s;
        }
    }
}

fn starts_like_question(s: &str) -> bool {
    let mut words = s.split_whitespace();
    let Some(first) = words.next() else { return false };
    let first = first.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase();
    if OPENERS.contains(&first.as_str()) {
        return true;
    }
    // Russian yes/no questions put "ли" second: "Использует ли ...".
    words.next().is_some_and(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase() == "ли")
        || matches!(first.as_str(), "есть" | "как" | "что" | "какие" | "какой" | "почему" | "можно" | "можете")
}

/// Drop a lead-in such as "Here are the questions:" or "Sure! " in front of
/// the question proper.
fn strip_preamble(piece: &str) -> &str {
    if starts_like_question(piece) {
        return piece;
    }
    let first_q = piece.find('?').unwrap_or(piece.len());
    let mut cut = None;
    for (i, c) in piece[..first_q].char_indices() {
        if matches!(c, ':' | '.' | '!') {
            let rest = &piece[i + c.len_utf8()..];
            if rest.starts_with(char::is_whitespace) {
                let rest = rest.trim_start();
                let rest = rest.trim_start_matches(|c: char| QUOTES.contains(&c));
                if rest.chars().next().is_some_and(char::is_uppercase) {
                    cut = Some(i + c.len_utf8());
                }
            }
        }
    }
    match cut {
        Some(at) => strip_markers(&piece[at..]),
        None => piece,
    }
}

/// Split a model reply into individual questions.
///
/// Pieces are separated by semicolons or newlines. Enumeration markers and
/// enclosing quotes are removed. When any piece contains a question mark,
/// pieces without one are dropped and trailing prose after the last `?` is
/// cut.
pub fn parse_question_list(text: &str) -> Vec<String> {
    let pieces: Vec<&str> = text
        .split([';', '\n'])
        .map(strip_markers)
        .filter(|p| !p.is_empty())
        .collect();
    let any_question = pieces.iter().any(|p| p.contains('?'));
    let mut out = Vec::new();
    for piece in pieces {
        let piece = if any_question {
            match piece.rfind('?') {
                Some(end) => &piece[..=end],
                None => continue,
            }
        } else if starts_like_question(piece) {
            piece
        } else {
            continue;
        };
        let q = strip_preamble(piece);
        let q = collapse_ws(strip_markers(q));
        if q.chars().any(char::is_alphanumeric) {
            out.push(q);
        }
    }
    out
}

fn collapse_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Lowercased word tokens (punctuation tokens removed).
pub fn words(text: &str) -> Vec<String> {
    tokenize(text)
        .into_iter()
        .map(|t| t.to_lowercase())
        .filter(|t| t.chars().any(char::is_alphanumeric))
        .collect()
}

/// Set of word n-grams. A text shorter than `n` words contributes one gram
/// made of all its words.
pub fn ngram_set(text: &str, n: usize) -> BTreeSet<Vec<String>> {
    let w = words(text);
    if w.is_empty() {
        return BTreeSet::new();
    }
    if w.len() < n {
        return BTreeSet::from([w]);
    }
    w.windows(n).map(<[String]>::to_vec).collect()
}

/// Jaccard similarity of two gram sets. Two empty sets count as identical.
pub fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

/// What happened to one input question.
#[derive(Debug, Clone, PartialEq)]
pub enum DedupDecision {
    Kept,
    /// Dropped as a near-copy of the kept question at this input index.
    Dropped { by: usize, similarity: f64 },
}

/// Greedy first-wins scan: an item is dropped iff its n-gram Jaccard with any
/// already kept item is at least `threshold`.
pub fn dedup_decisions<S: AsRef<str>>(
    texts: &[S],
    n: usize,
    threshold: f64,
) -> Result<Vec<DedupDecision>, HlqError> {
    if n == 0 || !(threshold > 0.0 && threshold <= 1.0) {
        return Err(HlqError::InvalidDedupParams { n, threshold });
    }
    let grams: Vec<BTreeSet<Vec<String>>> = texts.iter().map(|t| ngram_set(t.as_ref(), n)).collect();
    let mut kept: Vec<usize> = Vec::new();
    let mut out = Vec::with_capacity(texts.len());
    for (i, g) in grams.iter().enumerate() {
        let hit = kept
            .iter()
            .map(|&k| (k, jaccard(g, &grams[k])))
            .find(|&(_, s)| s >= threshold);
        match hit {
            Some((by, similarity)) => out.push(DedupDecision::Dropped { by, similarity }),
            None => {
                kept.push(i);
                out.push(DedupDecision::Kept);
            }
        }
    }
    Ok(out)
}

pub fn dedup_by_ngram_overlap(questions: &[Hlq], n: usize, threshold: f64) -> Result<Vec<Hlq>, HlqError> {
    let texts: Vec<&str> = questions.iter().map(|q| q.text_en.as_str()).collect();
    let decisions = dedup_decisions(&texts, n, threshold)?;
    Ok(questions
        .iter()
        .zip(decisions)
        .filter(|(_, d)| *d == DedupDecision::Kept)
        .map(|(q, _)| q.clone())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{MockProvider, ProviderConfig, ScriptRule};
    use std::sync::Arc;

    fn hlq(id: &str, text: &str) -> Hlq {
        Hlq {
            id: id.into(),
            text_en: text.into(),
            text_ru: None,
            source_technique: Some(Technique::Doubt),
            active: false,
        }
    }

    #[test]
    fn published_has_twelve_bilingual() {
        let repo = HlqRepository::published();
        assert_eq!(repo.questions.len(), 12);
        assert_eq!(repo.active_for_detection().unwrap().len(), 12);
        assert_eq!(repo.questions[0].id, "Q20");
        assert_eq!(repo.get("Q258").unwrap().source_technique, None);
        assert_eq!(repo.next_id(), 296);
    }

    #[test]
    fn repository_round_trip() {
        let mut repo = HlqRepository::published();
        repo.questions.push(hlq("Q400", "Is it?"));
        let back = HlqRepository::parse(&repo.render(), "t").unwrap();
        assert_eq!(back, repo);
        assert!(matches!(back.active_for_detection(), Ok(v) if v.len() == 12));
        repo.questions[12].active = true;
        assert!(matches!(repo.active_for_detection(), Err(HlqError::NotBilingual(id)) if id == "Q400"));
    }

    #[test]
    fn rejects_duplicate_and_bad_ids() {
        let mut repo = HlqRepository::default();
        repo.questions = vec![hlq("Q1", "a?"), hlq("Q1", "b?")];
        assert!(matches!(repo.validate(), Err(HlqError::DuplicateId(_))));
        repo.questions = vec![hlq("X1", "a?")];
        assert!(matches!(repo.validate(), Err(HlqError::InvalidId(_))));
    }

    #[test]
    fn parse_basic_lists() {
        assert_eq!(parse_question_list("A?; B? ; ;C?"), ["A?", "B?", "C?"]);
        assert_eq!(parse_question_list("1. A?; 2. B?"), ["A?", "B?"]);
        assert_eq!(parse_question_list("Here are questions: A?; B?"), ["A?", "B?"]);
        assert_eq!(
            parse_question_list("Does the text use X?; Is Y present?"),
            ["Does the text use X?", "Is Y present?"]
        );
        assert!(parse_question_list("").is_empty());
        assert!(parse_question_list("lorem ipsum").is_empty());
    }

    #[test]
    fn colon_inside_question_is_kept() {
        assert_eq!(
            parse_question_list("Does the text cite an expert: a doctor?"),
            ["Does the text cite an expert: a doctor?"]
        );
    }

    #[test]
    fn identical_dropped_disjoint_kept() {
        let qs = [hlq("Q1", "Is it loaded?"), hlq("Q2", "Is it loaded?")];
        assert_eq!(dedup_by_ngram_overlap(&qs, 3, 0.7).unwrap().len(), 1);
        let qs = [
            hlq("Q1", "Does the author use loaded words?"),
            hlq("Q2", "Is there imagery influencing feelings?"),
        ];
        assert_eq!(dedup_by_ngram_overlap(&qs, 3, 0.7).unwrap().len(), 2);
        assert!(dedup_decisions(&["a"], 0, 0.5).is_err());
        assert!(dedup_decisions(&["a"], 3, 0.0).is_err());
    }

    #[test]
    fn short_text_is_one_gram() {
        assert_eq!(ngram_set("Loaded words?", 3).len(), 1);
        assert_eq!(ngram_set("a b c d", 3).len(), 2);
    }

    #[test]
    fn generation_numbers_after_existing() {
        let mock = MockProvider::new(1).with_rule(ScriptRule::reply("hlq_gen", Some("Doubt"), "Does the text use X?; Is Y present?"));
        let gw = Gateway::with_provider(ProviderConfig::mock(1), Arc::new(mock)).unwrap();
        let mut next = 10;
        let qs = generate_candidates(&gw, Some(Technique::Doubt), &mut next).unwrap();
        assert_eq!(qs.iter().map(|q| q.id.as_str()).collect::<Vec<_>>(), ["Q10", "Q11"]);
        assert_eq!(next, 12);

        let mock = MockProvider::new(1).with_rule(ScriptRule::reply("hlq_gen", None, ""));
        let gw = Gateway::with_provider(ProviderConfig::mock(1), Arc::new(mock)).unwrap();
        let err = generate_candidates(&gw, Some(Technique::Doubt), &mut next).unwrap_err();
        assert_eq!(err.to_string(), "no questions parsed");
    }

    #[test]
    fn overlay_fills_russian() {
        let gw = Gateway::new(ProviderConfig::mock(1)).unwrap();
        let mut repo = HlqRepository::default();
        repo.questions = vec![hlq("Q1", "Is it?"), hlq("Q2", "Was it?")];
        let existing = RussianOverlay {
            entries: vec![OverlayEntry {
                id: "Q2".into(),
                text_ru: "Было ли?".into(),
                edited: true,
            }],
        };
        let overlay = translate_repository(&gw, &repo, &existing).unwrap();
        assert_eq!(overlay.entries.len(), 2);
        assert_eq!(overlay.entries[0].text_ru, "[mock-ru] Is it?");
        assert!(overlay.entries[1].edited);
        overlay.apply(&mut repo).unwrap();
        assert_eq!(repo.questions[1].text_ru.as_deref(), Some("Было ли?"));
    }
}
