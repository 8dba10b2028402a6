//! Identify-then-extract over paired corpora.
//!
//! `identify` asks every active HLQ about a paragraph in a single prompt;
//! `extract` runs one prompt per True (paragraph, HLQ) cell and the spans are
//! collapsed into a persuasive text set (PTS) per paragraph.
//!
//! Both stages commit one JSON line per paragraph to `<name>.partial` as soon
//! as the paragraph is done. A rerun after a crash skips committed paragraphs,
//! and the final file is written sorted by (subject, setting, paragraph), so
//! its bytes do not depend on scheduling.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use parking_lot::Mutex;
use regex::Regex;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::align::parse::is_total_failure;
use crate::align::{identify_prompt, parse_identify_response, Answer, AnswerCell, CellStatus};
use crate::corpus::{Article, ArticlePair, Language, Setting, TranslationProvenance};
use crate::gateway::{vars, ChatPrompt, Gateway, GatewayError};
use crate::hlq::{parse_id, Hlq};

pub const IDENTIFY_FILE: &str = "identify.jsonl";
pub const PTS_FILE: &str = "pts.jsonl";

#[derive(Debug, thiserror::Error)]
pub enum DetectError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {reason}")]
    Malformed { path: PathBuf, line: usize, reason: String },
    #[error("no active questions")]
    NoQuestions,
    #[error("question {id} has no {lang} text")]
    MissingText { id: String, lang: Language },
    #[error("identify row for {subject_id}/{setting}/{paragraph} has no paragraph in the corpus")]
    UnknownParagraph {
        subject_id: String,
        setting: Setting,
        paragraph: usize,
    },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DetectError + '_ {
    move |source| DetectError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectOptions {
    pub settings: Vec<Setting>,
    /// Force replies to open with the expected prefix (`Q<first>:` for
    /// identify, `"` for extract).
    pub pre_generation: bool,
    /// When set, a True cell only counts if its confidence reaches this value.
    pub confidence_threshold: Option<u8>,
    /// Fold a PTS entry into a longer entry that contains it.
    pub containment_collapse: bool,
}

impl Default for DetectOptions {
    fn default() -> Self {
        DetectOptions {
            settings: Setting::ALL.to_vec(),
            pre_generation: false,
            confidence_threshold: None,
            containment_collapse: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParagraphRef {
    pub subject_id: String,
    pub setting: Setting,
    pub paragraph: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentifyCell {
    pub id: String,
    pub answer: Answer,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<u8>,
    pub status: CellStatus,
}

impl IdentifyCell {
    pub fn cell(&self) -> AnswerCell {
        AnswerCell {
            answer: self.answer,
            confidence: self.confidence,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentifyRow {
    #[serde(flatten)]
    pub at: ParagraphRef,
    pub language: Language,
    pub cells: Vec<IdentifyCell>,
    pub attempts: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quarantine: Option<String>,
}

impl IdentifyRow {
    /// Ids whose cell counts as True under the options.
    pub fn true_ids(&self, threshold: Option<u8>) -> Vec<&str> {
        if self.quarantine.is_some() {
            return Vec::new();
        }
        self.cells
            .iter()
            .filter(|c| c.answer == Answer::True)
            .filter(|c| threshold.is_none_or(|t| c.confidence.is_some_and(|v| v >= t)))
            .map(|c| c.id.as_str())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionSpan {
    pub text: String,
    pub question_id: String,
    pub normalized: String,
    pub verbatim: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PtsEntry {
    pub text: String,
    pub questions: Vec<String>,
    pub verbatim: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PtsRow {
    #[serde(flatten)]
    pub at: ParagraphRef,
    pub word_count: usize,
    pub true_questions: Vec<String>,
    pub spans: Vec<PtsEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

fn quote_chars(c: char) -> bool {
    matches!(c, '"' | '\'' | '“' | '”' | '«' | '»' | '‘' | '’' | '`' | '„')
}

/// Lowercase, trim quotes and whitespace, collapse inner whitespace.
pub fn normalize_span(s: &str) -> String {
    let trimmed = s.trim_matches(|c: char| quote_chars(c) || c.is_whitespace());
    trimmed.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

fn none_found_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)^(?:none|none found|no instances(?: found)?|n/a|нет|не найдено|ничего не найдено)\.?$")
            .expect("static regex")
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Extraction {
    pub spans: Vec<ExtractionSpan>,
    /// The reply had nothing usable (empty or an explicit "None found.").
    pub empty: bool,
}

/// Split an extract reply on semicolons (and newlines) into spans of
/// `question_id`. Spans that do not occur in `paragraph` under a
/// case-insensitive match are kept with `verbatim = false`.
pub fn parse_extraction(reply: &str, question_id: &str, paragraph: &str) -> Extraction {
    let haystack = normalize_span(paragraph);
    let mut spans = Vec::new();
    for piece in reply.split([';', '\n']) {
        let text = piece.trim().trim_end_matches(',').trim();
        let normalized = normalize_span(text);
        if normalized.is_empty() || none_found_re().is_match(&normalized) {
            continue;
        }
        let raw = text.trim_matches(|c: char| quote_chars(c) || c.is_whitespace()).to_string();
        spans.push(ExtractionSpan {
            verbatim: haystack.contains(&normalized),
            text: raw,
            question_id: question_id.to_string(),
            normalized,
        });
    }
    Extraction {
        empty: spans.is_empty(),
        spans,
    }
}

fn id_key(id: &str) -> (u32, String) {
    (parse_id(id).unwrap_or(u32::MAX), id.to_string())
}

/// Collapse spans from all True HLQs of a paragraph into a PTS.
///
/// Groups are visited in question-id order whatever order they arrive in, so
/// the result does not depend on processing order. Entries are unique under
/// [`normalize_span`] and keep first-occurrence order; contributing ids are
/// merged. With `containment`, an entry contained in a longer entry is folded
/// into it.
pub fn collapse_to_pts(spans: &[ExtractionSpan], containment: bool) -> Vec<PtsEntry> {
    let mut ordered: Vec<&ExtractionSpan> = spans.iter().collect();
    ordered.sort_by_key(|s| id_key(&s.question_id));
    let mut entries: Vec<PtsEntry> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for s in ordered {
        if s.normalized.is_empty() {
            continue;
        }
        match index.get(&s.normalized) {
            Some(&i) => {
                let e = &mut entries[i];
                if !e.questions.contains(&s.question_id) {
                    e.questions.push(s.question_id.clone());
                }
                e.verbatim |= s.verbatim;
            }
            None => {
                index.insert(s.normalized.clone(), entries.len());
                entries.push(PtsEntry {
                    text: s.normalized.clone(),
                    questions: vec![s.question_id.clone()],
                    verbatim: s.verbatim,
                });
            }
        }
    }
    if containment {
        entries = fold_contained(entries);
    }
    for e in &mut entries {
        e.questions.sort_by_key(|q| id_key(q));
    }
    entries
}

fn fold_contained(entries: Vec<PtsEntry>) -> Vec<PtsEntry> {
    let host_of = |i: usize| -> Option<usize> {
        let t = &entries[i].text;
        entries
            .iter()
            .enumerate()
            .filter(|(j, e)| *j != i && e.text.len() > t.len() && e.text.contains(t.as_str()))
            .map(|(j, _)| j)
            .next()
    };
    let hosts: Vec<Option<usize>> = (0..entries.len()).map(host_of).collect();
    let mut out = entries.clone();
    for (i, h) in hosts.iter().enumerate() {
        if let Some(mut h) = *h {
            // Follow the chain to the outermost host.
            while let Some(next) = hosts[h] {
                h = next;
            }
            for q in &entries[i].questions {
                if !out[h].questions.contains(q) {
                    out[h].questions.push(q.clone());
                }
            }
        }
    }
    out.into_iter()
        .zip(hosts)
        .filter(|(_, h)| h.is_none())
        .map(|(e, _)| e)
        .collect()
}

/// Append-only per-paragraph commit log.
struct CommitLog {
    path: PathBuf,
    file: Mutex<File>,
}

fn fingerprint<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("fingerprint input serializes");
    hex::encode(Sha256::digest(json))
}

#[derive(Serialize, Deserialize)]
struct LogHeader {
    fingerprint: String,
}

impl CommitLog {
    /// Open `<final>.partial`, returning rows already committed under the same
    /// fingerprint. A torn trailing line is dropped; a log written for a
    /// different configuration is discarded.
    fn open<T: DeserializeOwned>(final_path: &Path, print: &str) -> Result<(Vec<T>, CommitLog), DetectError> {
        let path = PathBuf::from(format!("{}.partial", final_path.display()));
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        let mut rows = Vec::new();
        let mut valid_len = 0usize;
        if let Ok(content) = fs::read_to_string(&path) {
            let mut lines = content.split_inclusive('\n');
            let header_ok = lines
                .next()
                .and_then(|l| serde_json::from_str::<LogHeader>(l.trim_end()).ok())
                .is_some_and(|h| h.fingerprint == print);
            if header_ok {
                valid_len = content.split_inclusive('\n').next().map_or(0, str::len);
                for line in lines {
                    if !line.ends_with('\n') {
                        log::warn!("{}: dropping torn trailing line", path.display());
                        break;
                    }
                    match serde_json::from_str::<T>(line.trim_end()) {
                        Ok(r) => {
                            rows.push(r);
                            valid_len += line.len();
                        }
                        Err(e) => {
                            log::warn!("{}: dropping unreadable line: {e}", path.display());
                            break;
                        }
                    }
                }
                log::info!("{}: resuming with {} committed rows", path.display(), rows.len());
            } else {
                log::warn!("{}: stale commit log discarded", path.display());
            }
        }
        let file = if valid_len > 0 {
            let f = OpenOptions::new().write(true).open(&path).map_err(io_err(&path))?;
            f.set_len(valid_len as u64).map_err(io_err(&path))?;
            drop(f);
            OpenOptions::new().append(true).open(&path).map_err(io_err(&path))?
        } else {
            let mut f = File::create(&path).map_err(io_err(&path))?;
            let header = serde_json::to_string(&LogHeader {
                fingerprint: print.to_string(),
            })
            .expect("header serializes");
            writeln!(f, "{header}").map_err(io_err(&path))?;
            f
        };
        Ok((
            rows,
            CommitLog {
                path,
                file: Mutex::new(file),
            },
        ))
    }

    fn append<T: Serialize>(&self, row: &T) -> Result<(), DetectError> {
        let mut line = serde_json::to_string(row).expect("row serializes");
        line.push('\n');
        let mut f = self.file.lock();
        f.write_all(line.as_bytes()).map_err(io_err(&self.path))?;
        f.flush().map_err(io_err(&self.path))
    }

    fn finish(self, final_path: &Path, body: &str) -> Result<(), DetectError> {
        crate::io::write_atomic(final_path, body.as_bytes()).map_err(io_err(final_path))?;
        drop(self.file);
        fs::remove_file(&self.path).map_err(io_err(&self.path))
    }
}

fn render_rows<T: Serialize>(rows: &[T]) -> String {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r).expect("row serializes"));
        out.push('\n');
    }
    out
}

fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, DetectError> {
    let content = fs::read_to_string(path).map_err(io_err(path))?;
    content
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| DetectError::Malformed {
                path: path.to_path_buf(),
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

pub fn load_identify(path: &Path) -> Result<Vec<IdentifyRow>, DetectError> {
    read_rows(path)
}

pub fn load_pts(path: &Path) -> Result<Vec<PtsRow>, DetectError> {
    read_rows(path)
}

pub fn render_pts(rows: &[PtsRow]) -> String {
    render_rows(rows)
}

struct Job<'a> {
    at: ParagraphRef,
    text: &'a str,
}

fn paragraphs<'a>(pairs: &'a [ArticlePair], settings: &[Setting]) -> Vec<Job<'a>> {
    let mut jobs = Vec::new();
    for pair in pairs {
        for &s in settings {
            let Some(article) = pair.get(s) else { continue };
            for p in &article.paragraphs {
                if p.word_count == 0 {
                    log::warn!("{}/{s}/{}: empty paragraph skipped", pair.subject_id, p.index);
                    continue;
                }
                jobs.push(Job {
                    at: ParagraphRef {
                        subject_id: pair.subject_id.clone(),
                        setting: s,
                        paragraph: p.index,
                    },
                    text: &p.text,
                });
            }
        }
    }
    jobs.sort_by(|a, b| a.at.cmp(&b.at));
    jobs
}

const REMINDER_EN: &str = "Answer every question on its own, in the form \"Q<number>: True (conf:NN)\", separated by semicolons.";
const REMINDER_RU: &str = "Ответьте на каждый вопрос отдельно в форме \"Q<номер>: True (conf:NN)\", разделяя ответы точкой с запятой.";

fn reinforced(mut prompt: ChatPrompt) -> ChatPrompt {
    let reminder = match prompt.language {
        Language::En => REMINDER_EN,
        Language::Ru => REMINDER_RU,
    };
    prompt.system = format!("{}\n{reminder}", prompt.system);
    prompt
}

fn identify_one(gateway: &Gateway, job: &Job<'_>, hlqs: &[&Hlq], opts: &DetectOptions) -> Result<IdentifyRow, DetectError> {
    let lang = job.at.setting.language();
    let ids: Vec<String> = hlqs.iter().map(|q| q.id.clone()).collect();
    let first = identify_prompt(gateway.catalog(), hlqs, lang, job.text, opts.pre_generation).map_err(|e| match e {
        crate::align::AlignError::MissingText { id, lang } => DetectError::MissingText { id, lang },
        crate::align::AlignError::Gateway(g) => DetectError::Gateway(g),
        other => DetectError::Gateway(GatewayError::Template(other.to_string())),
    })?;
    let prompts = [first.clone(), reinforced(first)];
    let mut attempts = 0;
    let mut reason = String::new();
    for prompt in &prompts {
        attempts += 1;
        match gateway.complete(prompt) {
            Ok(rec) => {
                let parsed = parse_identify_response(&rec.response_text, &ids);
                if !is_total_failure(&parsed) {
                    return Ok(IdentifyRow {
                        at: job.at.clone(),
                        language: lang,
                        cells: parsed
                            .into_iter()
                            .map(|p| IdentifyCell {
                                id: p.id,
                                answer: p.cell.answer,
                                confidence: p.cell.confidence,
                                status: p.status,
                            })
                            .collect(),
                        attempts,
                        quarantine: None,
                    });
                }
                reason = "unparseable reply".to_string();
            }
            Err(e @ GatewayError::Exhausted { .. }) => {
                reason = e.to_string();
                break;
            }
            Err(e) => return Err(e.into()),
        }
    }
    log::warn!(
        "{}/{}/{}: quarantined ({reason})",
        job.at.subject_id,
        job.at.setting,
        job.at.paragraph
    );
    Ok(IdentifyRow {
        at: job.at.clone(),
        language: lang,
        cells: ids
            .into_iter()
            .map(|id| IdentifyCell {
                id,
                answer: Answer::NA,
                confidence: None,
                status: CellStatus::Missing,
            })
            .collect(),
        attempts,
        quarantine: Some(reason),
    })
}

fn check_questions(hlqs: &[&Hlq], settings: &[Setting]) -> Result<(), DetectError> {
    if hlqs.is_empty() {
        return Err(DetectError::NoQuestions);
    }
    let langs: BTreeSet<Language> = settings.iter().map(|s| s.language()).collect();
    for q in hlqs {
        for &l in &langs {
            if q.text(l).is_none_or(|t| t.trim().is_empty()) {
                return Err(DetectError::MissingText { id: q.id.clone(), lang: l });
            }
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct StagePrint<'a> {
    stage: &'a str,
    provider: &'a str,
    model: &'a str,
    questions: Vec<(&'a str, &'a str, Option<&'a str>)>,
    options: &'a DetectOptions,
}

fn stage_print(stage: &str, gateway: &Gateway, hlqs: &[&Hlq], opts: &DetectOptions) -> String {
    fingerprint(&StagePrint {
        stage,
        provider: gateway.config().kind.id(),
        model: &gateway.config().model,
        questions: hlqs
            .iter()
            .map(|q| (q.id.as_str(), q.text_en.as_str(), q.text_ru.as_deref()))
            .collect(),
        options: opts,
    })
}

/// Identify every paragraph of the selected settings and write
/// `out_dir/identify.jsonl`.
pub fn run_identify(
    gateway: &Gateway,
    pairs: &[ArticlePair],
    hlqs: &[&Hlq],
    opts: &DetectOptions,
    out_dir: &Path,
) -> Result<Vec<IdentifyRow>, DetectError> {
    check_questions(hlqs, &opts.settings)?;
    let final_path = out_dir.join(IDENTIFY_FILE);
    let (done, log) = CommitLog::open::<IdentifyRow>(&final_path, &stage_print("identify", gateway, hlqs, opts))?;
    let committed: BTreeSet<ParagraphRef> = done.iter().map(|r| r.at.clone()).collect();
    let jobs: Vec<Job<'_>> = paragraphs(pairs, &opts.settings)
        .into_iter()
        .filter(|j| !committed.contains(&j.at))
        .collect();
    log::info!("identify: {} paragraphs to do, {} already committed", jobs.len(), committed.len());
    let results = gateway.map_bounded(&jobs, |job| {
        let row = identify_one(gateway, job, hlqs, opts)?;
        log.append(&row)?;
        Ok::<_, DetectError>(row)
    });
    let mut rows = done;
    for r in results {
        rows.push(r?);
    }
    rows.sort_by(|a, b| a.at.cmp(&b.at));
    rows.dedup_by(|a, b| a.at == b.at);
    log.finish(&final_path, &render_rows(&rows))?;
    Ok(rows)
}

/// Render the extract prompt for one (paragraph, question) pair.
pub fn extract_prompt(gateway: &Gateway, hlq: &Hlq, lang: Language, text: &str, pre_generation: bool) -> Result<ChatPrompt, DetectError> {
    let question = hlq.text(lang).ok_or_else(|| DetectError::MissingText {
        id: hlq.id.clone(),
        lang,
    })?;
    let prompt = gateway.catalog().render(
        "extract",
        Some(lang),
        &vars([("question", question.to_string()), ("text", text.to_string())]),
    )?;
    Ok(if pre_generation { prompt.with_prefix("\"") } else { prompt })
}

/// Extract spans for every True cell and write `out_dir/pts.jsonl` with one
/// row per identified paragraph.
pub fn run_extract(
    gateway: &Gateway,
    pairs: &[ArticlePair],
    identify: &[IdentifyRow],
    hlqs: &[&Hlq],
    opts: &DetectOptions,
    out_dir: &Path,
) -> Result<Vec<PtsRow>, DetectError> {
    let by_id: HashMap<&str, &Hlq> = hlqs.iter().map(|q| (q.id.as_str(), *q)).collect();
    let mut texts: HashMap<ParagraphRef, (&str, usize)> = HashMap::new();
    for pair in pairs {
        for (s, a) in &pair.articles {
            for p in &a.paragraphs {
                texts.insert(
                    ParagraphRef {
                        subject_id: pair.subject_id.clone(),
                        setting: *s,
                        paragraph: p.index,
                    },
                    (&p.text, p.word_count),
                );
            }
        }
    }
    for row in identify {
        if !texts.contains_key(&row.at) {
            return Err(DetectError::UnknownParagraph {
                subject_id: row.at.subject_id.clone(),
                setting: row.at.setting,
                paragraph: row.at.paragraph,
            });
        }
    }

    let final_path = out_dir.join(PTS_FILE);
    let (done, log) = CommitLog::open::<PtsRow>(&final_path, &stage_print("extract", gateway, hlqs, opts))?;
    let committed: BTreeSet<ParagraphRef> = done.iter().map(|r| r.at.clone()).collect();
    let todo: Vec<&IdentifyRow> = identify.iter().filter(|r| !committed.contains(&r.at)).collect();

    let results = gateway.map_bounded(&todo, |row| {
        let (text, word_count) = texts[&row.at];
        let lang = row.at.setting.language();
        let mut flags = Vec::new();
        if let Some(reason) = &row.quarantine {
            flags.push(format!("quarantined: {reason}"));
        }
        let true_ids = row.true_ids(opts.confidence_threshold);
        let mut spans = Vec::new();
        for id in &true_ids {
            let Some(hlq) = by_id.get(id) else {
                flags.push(format!("unknown_question:{id}"));
                continue;
            };
            let prompt = extract_prompt(gateway, hlq, lang, text, opts.pre_generation)?;
            match gateway.complete(&prompt) {
                Ok(rec) => {
                    let ex = parse_extraction(&rec.response_text, id, text);
                    if ex.empty {
                        flags.push(format!("empty_extraction:{id}"));
                    }
                    if ex.spans.iter().any(|s| !s.verbatim) {
                        flags.push(format!("non_verbatim:{id}"));
                    }
                    spans.extend(ex.spans);
                }
                Err(e @ GatewayError::Exhausted { .. }) => {
                    log::warn!("{}/{}/{}: extract {id} failed: {e}", row.at.subject_id, row.at.setting, row.at.paragraph);
                    flags.push(format!("extract_failed:{id}"));
                }
                Err(e) => return Err(e.into()),
            }
        }
        let pts = PtsRow {
            at: row.at.clone(),
            word_count,
            true_questions: true_ids.iter().map(|s| s.to_string()).collect(),
            spans: collapse_to_pts(&spans, opts.containment_collapse),
            flags,
        };
        log.append(&pts)?;
        Ok::<_, DetectError>(pts)
    });
    let mut rows = done;
    for r in results {
        rows.push(r?);
    }
    rows.sort_by(|a, b| a.at.cmp(&b.at));
    rows.dedup_by(|a, b| a.at == b.at);
    log.finish(&final_path, &render_rows(&rows))?;
    Ok(rows)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SettingStats {
    pub paragraphs: usize,
    pub cells: usize,
    pub true_cells: usize,
    pub false_cells: usize,
    pub na_cells: usize,
    pub true_rate: f64,
    /// 1 - true_cells / cells: the share of (paragraph, HLQ) pairs that need
    /// no extraction.
    pub skip_rate: f64,
    pub paragraphs_with_spans: usize,
    pub spans: usize,
    pub non_verbatim_spans: usize,
    pub quarantined: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub settings: BTreeMap<Setting, SettingStats>,
    pub quarantine: Vec<QuarantineEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuarantineEntry {
    #[serde(flatten)]
    pub at: ParagraphRef,
    pub reason: String,
}

pub fn run_stats(identify: &[IdentifyRow], pts: &[PtsRow], threshold: Option<u8>) -> RunStats {
    let mut stats = RunStats::default();
    for row in identify {
        let s = stats.settings.entry(row.at.setting).or_default();
        s.paragraphs += 1;
        let t = row.true_ids(threshold).len();
        s.cells += row.cells.len();
        s.true_cells += t;
        s.na_cells += row.cells.iter().filter(|c| c.answer == Answer::NA).count();
        s.false_cells += row.cells.len() - t - row.cells.iter().filter(|c| c.answer == Answer::NA).count();
        if let Some(reason) = &row.quarantine {
            s.quarantined += 1;
            stats.quarantine.push(QuarantineEntry {
                at: row.at.clone(),
                reason: reason.clone(),
            });
        }
    }
    for row in pts {
        let s = stats.settings.entry(row.at.setting).or_default();
        if !row.spans.is_empty() {
            s.paragraphs_with_spans += 1;
        }
        s.spans += row.spans.len();
        s.non_verbatim_spans += row.spans.iter().filter(|e| !e.verbatim).count();
    }
    for s in stats.settings.values_mut() {
        if s.cells > 0 {
            s.true_rate = s.true_cells as f64 / s.cells as f64;
            s.skip_rate = 1.0 - s.true_rate;
        }
    }
    stats
}

/// Machine-translate the missing en2ru / ru2en articles of each pair,
/// paragraph by paragraph. An article with any failed paragraph is left out
/// and reported.
pub fn translate_corpus(gateway: &Gateway, pairs: &[ArticlePair]) -> (Vec<ArticlePair>, Vec<String>) {
    let mut jobs: Vec<(usize, Setting, usize, &str)> = Vec::new();
    for (pi, pair) in pairs.iter().enumerate() {
        for target in [Setting::En2Ru, Setting::Ru2En] {
            if pair.get(target).is_some() {
                continue;
            }
            let source = target.source().expect("translation has a source");
            if let Some(a) = pair.get(source) {
                for (k, p) in a.paragraphs.iter().enumerate() {
                    jobs.push((pi, target, k, &p.text));
                }
            }
        }
    }
    let results = gateway.map_bounded(&jobs, |(_, target, _, text)| gateway.translate_paragraph(text, *target));
    let mut collected: BTreeMap<(usize, Setting), Vec<Option<String>>> = BTreeMap::new();
    let mut failures = Vec::new();
    for ((pi, target, k, _), r) in jobs.iter().zip(results) {
        let slot = collected.entry((*pi, *target)).or_default();
        if slot.len() <= *k {
            slot.resize(k + 1, None);
        }
        match r {
            Ok(t) => slot[*k] = Some(t.trim().to_string()),
            Err(e) => failures.push(format!("{}/{target}/{k}: {e}", pairs[*pi].subject_id)),
        }
    }
    let mut out = pairs.to_vec();
    for ((pi, target), paras) in collected {
        if paras.iter().any(Option::is_none) {
            continue;
        }
        let source = pairs[pi].get(target.source().expect("source")).expect("source article");
        let mut article = Article::new(
            source.subject_id.clone(),
            source.title.clone(),
            target,
            paras.into_iter().map(|p| p.unwrap_or_default()),
        );
        article.translation = Some(TranslationProvenance {
            direction: target,
            model: gateway.config().model.clone(),
        });
        out[pi].articles.insert(target, article);
    }
    (out, failures)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn span(q: &str, t: &str) -> ExtractionSpan {
        ExtractionSpan {
            text: t.into(),
            question_id: q.into(),
            normalized: normalize_span(t),
            verbatim: true,
        }
    }

    #[test]
    fn extraction_reply() {
        let ex = parse_extraction("\"openly neo-Nazi\"; \"pro-Nazi\"", "Q20", "It is openly neo-Nazi and pro-Nazi.");
        assert_eq!(ex.spans.len(), 2);
        assert_eq!(ex.spans[0].text, "openly neo-Nazi");
        assert!(ex.spans.iter().all(|s| s.verbatim));
        let ex = parse_extraction("None found.", "Q20", "text");
        assert!(ex.empty && ex.spans.is_empty());
        let ex = parse_extraction("tragedy", "Q20", "A Tragedy unfolded.");
        assert!(ex.spans[0].verbatim);
        let ex = parse_extraction("\"calamity\"", "Q20", "A Tragedy unfolded.");
        assert!(!ex.spans[0].verbatim);
    }

    #[test]
    fn pts_merges_contributors() {
        let spans = vec![
            span("Q88", "tragedy"),
            span("Q88", "ruins"),
            span("Q20", "tragedy"),
            span("Q20", "lobotomy"),
        ];
        let pts = collapse_to_pts(&spans, false);
        let texts: Vec<&str> = pts.iter().map(|e| e.text.as_str()).collect();
        assert_eq!(texts, ["tragedy", "lobotomy", "ruins"]);
        assert_eq!(pts[0].questions, ["Q20", "Q88"]);
        assert!(collapse_to_pts(&[], false).is_empty());
        let pts = collapse_to_pts(&[span("Q1", "Fire"), span("Q1", "fire")], false);
        assert_eq!(pts.len(), 1);
    }

    #[test]
    fn containment_is_opt_in() {
        let spans = vec![span("Q1", "tragedy"), span("Q2", "cultural tragedy")];
        assert_eq!(collapse_to_pts(&spans, false).len(), 2);
        let folded = collapse_to_pts(&spans, true);
        assert_eq!(folded.len(), 1);
        assert_eq!(folded[0].text, "cultural tragedy");
        assert_eq!(folded[0].questions, ["Q1", "Q2"]);
    }

    #[test]
    fn commit_log_drops_torn_tail() {
        let dir = tempfile::tempdir().unwrap();
        let final_path = dir.path().join("x.jsonl");
        let (rows, log) = CommitLog::open::<u32>(&final_path, "fp").unwrap();
        assert!(rows.is_empty());
        log.append(&1u32).unwrap();
        log.append(&2u32).unwrap();
        drop(log);
        let partial = dir.path().join("x.jsonl.partial");
        let mut f = OpenOptions::new().append(true).open(&partial).unwrap();
        f.write_all(b"3").unwrap();
        drop(f);
        let (rows, log) = CommitLog::open::<u32>(&final_path, "fp").unwrap();
        assert_eq!(rows, [1, 2]);
        log.append(&4u32).unwrap();
        drop(log);
        let (rows, _log) = CommitLog::open::<u32>(&final_path, "fp").unwrap();
        assert_eq!(rows, [1, 2, 4]);
        let (rows, _log) = CommitLog::open::<u32>(&final_path, "other").unwrap();
        assert!(rows.is_empty());
    }
}
