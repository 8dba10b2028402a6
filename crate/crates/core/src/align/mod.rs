//! Answering HLQs over labeled data and picking the questions that agree
//! best with human labels.

pub mod anova;
pub mod forest;
pub mod parse;

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{collapse_to_binary, Language, LabeledContext};
use crate::gateway::{vars, Catalog, ChatPrompt, Gateway, GatewayError};
use crate::hlq::{parse_id, Hlq};
use crate::io::fixed6;

pub use anova::{f_statistic, FFlag, FResult};
pub use forest::{ForestParams, MaxFeatures, RandomForest};
pub use parse::{parse_baseline_response, parse_identify_response, ParsedCell};

#[derive(Debug, thiserror::Error)]
pub enum AlignError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("length mismatch: {0} predictions vs {1} gold labels")]
    LengthMismatch(usize, usize),
    #[error("need at least {need} questions, have {have}")]
    TooFewQuestions { need: usize, have: usize },
    #[error("question {id} has no {lang} text")]
    MissingText { id: String, lang: Language },
    #[error("no questions to ask")]
    NoQuestions,
    #[error("matrix has no gold labels")]
    NoGold,
    #[error(transparent)]
    Anova(#[from] anova::AnovaError),
    #[error(transparent)]
    Forest(#[from] forest::ForestError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Answer {
    True,
    False,
    NA,
}

impl Answer {
    fn code(self) -> char {
        match self {
            Answer::True => 'T',
            Answer::False => 'F',
            Answer::NA => 'N',
        }
    }
}

/// One answer. Confidence is only recorded when the reply gave one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AnswerCell {
    pub answer: Answer,
    pub confidence: Option<u8>,
}

impl AnswerCell {
    pub fn na() -> AnswerCell {
        AnswerCell {
            answer: Answer::NA,
            confidence: None,
        }
    }

    pub fn is_true(&self) -> bool {
        self.answer == Answer::True
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Parsed,
    /// The id never appeared (or the request failed); the cell is NA.
    Missing,
    /// The id appeared more than once; the first answer was kept.
    Duplicate,
}

/// Numeric coding of answers for ANOVA and the forest.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoding {
    /// True 1, False 0, N/A 0.
    #[default]
    Binary,
    /// True 1, False -1, N/A 0.
    Signed,
}

impl Encoding {
    pub fn encode(self, a: Answer) -> f64 {
        match (self, a) {
            (_, Answer::True) => 1.0,
            (Encoding::Binary, Answer::False) => 0.0,
            (Encoding::Signed, Answer::False) => -1.0,
            (_, Answer::NA) => 0.0,
        }
    }
}

/// Contexts by questions. `gold` is empty when the matrix was built without
/// labels.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AnswerMatrix {
    pub context_ids: Vec<String>,
    pub question_ids: Vec<String>,
    pub cells: Vec<Vec<AnswerCell>>,
    pub status: Vec<Vec<CellStatus>>,
    pub gold: Vec<bool>,
}

impl AnswerMatrix {
    pub fn has_gold(&self) -> bool {
        !self.context_ids.is_empty() && self.gold.len() == self.context_ids.len()
    }

    pub fn encoded(&self, encoding: Encoding) -> Vec<Vec<f64>> {
        self.cells
            .iter()
            .map(|row| row.iter().map(|c| encoding.encode(c.answer)).collect())
            .collect()
    }

    pub fn column(&self, q: usize, encoding: Encoding) -> Vec<f64> {
        self.cells.iter().map(|row| encoding.encode(row[q].answer)).collect()
    }

    /// Keep only the listed questions, in the given order.
    pub fn restrict(&self, ids: &[String]) -> AnswerMatrix {
        let pos: HashMap<&str, usize> = self.question_ids.iter().enumerate().map(|(i, q)| (q.as_str(), i)).collect();
        let cols: Vec<usize> = ids.iter().filter_map(|id| pos.get(id.as_str()).copied()).collect();
        AnswerMatrix {
            context_ids: self.context_ids.clone(),
            question_ids: cols.iter().map(|&c| self.question_ids[c].clone()).collect(),
            cells: self.cells.iter().map(|r| cols.iter().map(|&c| r[c]).collect()).collect(),
            status: self.status.iter().map(|r| cols.iter().map(|&c| r[c]).collect()).collect(),
            gold: self.gold.clone(),
        }
    }

    /// Line format: `context_id`, optional `gold=T|F`, then one
    /// `Qk=T|F|N[:conf][#missing|#dup]` token per question, tab separated.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (r, ctx) in self.context_ids.iter().enumerate() {
            out.push_str(ctx);
            if self.has_gold() {
                out.push_str(if self.gold[r] { "\tgold=T" } else { "\tgold=F" });
            }
            for (c, q) in self.question_ids.iter().enumerate() {
                let cell = self.cells[r][c];
                let _ = write!(out, "\t{q}={}", cell.answer.code());
                if let Some(conf) = cell.confidence {
                    let _ = write!(out, ":{conf}");
                }
                match self.status[r][c] {
                    CellStatus::Parsed => {}
                    CellStatus::Missing => out.push_str("#missing"),
                    CellStatus::Duplicate => out.push_str("#dup"),
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(content: &str) -> Result<AnswerMatrix, AlignError> {
        let mut m = AnswerMatrix::default();
        let mut any_gold = false;
        for (i, line) in content.lines().enumerate() {
            let lineno = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |reason: String| AlignError::Malformed { line: lineno, reason };
            let mut fields = line.split('\t');
            let ctx = fields.next().unwrap_or_default().to_string();
            let mut qids = Vec::new();
            let mut cells = Vec::new();
            let mut status = Vec::new();
            let mut gold = None;
            for tok in fields {
                if let Some(g) = tok.strip_prefix("gold=") {
                    gold = Some(match g {
                        "T" => true,
                        "F" => false,
                        other => return Err(bad(format!("bad gold value '{other}'"))),
                    });
                    continue;
                }
                let (q, rest) = tok.split_once('=').ok_or_else(|| bad(format!("bad token '{tok}'")))?;
                if parse_id(q).is_none() {
                    return Err(bad(format!("bad question id '{q}'")));
                }
                let (rest, st) = match rest.split_once('#') {
                    None => (rest, CellStatus::Parsed),
                    Some((r, "missing")) => (r, CellStatus::Missing),
                    Some((r, "dup")) => (r, CellStatus::Duplicate),
                    Some((_, other)) => return Err(bad(format!("bad status '{other}'"))),
                };
                let (ans, conf) = match rest.split_once(':') {
                    Some((a, c)) => {
                        let v: u8 = c.parse().map_err(|_| bad(format!("bad confidence '{c}'")))?;
                        if v > 100 {
                            return Err(bad(format!("confidence {v} above 100")));
                        }
                        (a, Some(v))
                    }
                    None => (rest, None),
                };
                let answer = match ans {
                    "T" => Answer::True,
                    "F" => Answer::False,
                    "N" => Answer::NA,
                    other => return Err(bad(format!("bad answer '{other}'"))),
                };
                qids.push(q.to_string());
                cells.push(AnswerCell { answer, confidence: conf });
                status.push(st);
            }
            if m.context_ids.is_empty() {
                m.question_ids = qids;
            } else if m.question_ids != qids {
                return Err(bad("question ids differ from the first row".into()));
            }
            if m.context_ids.is_empty() {
                any_gold = gold.is_some();
            } else if any_gold != gold.is_some() {
                return Err(bad("gold present on some rows only".into()));
            }
            m.context_ids.push(ctx);
            m.cells.push(cells);
            m.status.push(status);
            if let Some(g) = gold {
                m.gold.push(g);
            }
        }
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<AnswerMatrix, AlignError> {
        let content = std::fs::read_to_string(path).map_err(|source| AlignError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        AnswerMatrix::parse(&content)
    }

    pub fn save(&self, path: &Path) -> Result<(), AlignError> {
        crate::io::write_atomic(path, self.render().as_bytes()).map_err(|source| AlignError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// The one-shot agent answer shown in identify prompts.
pub fn example_answer(ids: &[&str]) -> String {
    ids.iter()
        .enumerate()
        .map(|(i, id)| match i {
            0 => format!("{id}: True (conf:70)"),
            1 => format!("{id}: False (conf:30)"),
            2 => format!("{id}: N/A"),
            _ => format!("{id}: False (conf:20)"),
        })
        .collect::<Vec<_>>()
        .join("; ")
}

/// Render the identify prompt for `hlqs` over `text` in `lang`.
/// With `pre_generation`, the reply is forced to open with the first label.
pub fn identify_prompt(
    catalog: &Catalog,
    hlqs: &[&Hlq],
    lang: Language,
    text: &str,
    pre_generation: bool,
) -> Result<ChatPrompt, AlignError> {
    if hlqs.is_empty() {
        return Err(AlignError::NoQuestions);
    }
    let mut listing = Vec::with_capacity(hlqs.len());
    for q in hlqs {
        let t = q.text(lang).ok_or_else(|| AlignError::MissingText {
            id: q.id.clone(),
            lang,
        })?;
        listing.push(format!("{}: {}", q.id, t));
    }
    let ids: Vec<&str> = hlqs.iter().map(|q| q.id.as_str()).collect();
    let prompt = catalog.render(
        "identify",
        Some(lang),
        &vars([
            ("questions", listing.join("\n")),
            ("example_answer", example_answer(&ids)),
            ("text", text.to_string()),
        ]),
    )?;
    Ok(if pre_generation {
        prompt.with_prefix(format!("{}:", ids[0]))
    } else {
        prompt
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AnswerStats {
    pub prompts: usize,
    pub failed_requests: usize,
    pub unparseable: usize,
}

/// Ask every question group over every context: one identify prompt per
/// (context, group), in the context's language. Failed requests and replies
/// that name no expected id leave NA cells marked `Missing`.
pub fn answer_hlqs_batched(
    gateway: &Gateway,
    contexts: &[LabeledContext],
    groups: &[Vec<Hlq>],
    pre_generation: bool,
) -> Result<(AnswerMatrix, AnswerStats), AlignError> {
    let question_ids: Vec<String> = groups.iter().flatten().map(|q| q.id.clone()).collect();
    if question_ids.is_empty() {
        return Err(AlignError::NoQuestions);
    }
    let mut jobs = Vec::new();
    for (ci, ctx) in contexts.iter().enumerate() {
        for (gi, g) in groups.iter().enumerate() {
            if g.is_empty() {
                continue;
            }
            let refs: Vec<&Hlq> = g.iter().collect();
            let prompt = identify_prompt(gateway.catalog(), &refs, ctx.language, &ctx.text, pre_generation)?;
            jobs.push((ci, gi, prompt));
        }
    }
    let replies = gateway.map_bounded(&jobs, |(_, _, p)| gateway.complete(p));

    let offsets: Vec<usize> = groups
        .iter()
        .scan(0, |acc, g| {
            let at = *acc;
            *acc += g.len();
            Some(at)
        })
        .collect();
    let width = question_ids.len();
    let mut cells = vec![vec![AnswerCell::na(); width]; contexts.len()];
    let mut status = vec![vec![CellStatus::Missing; width]; contexts.len()];
    let mut stats = AnswerStats {
        prompts: jobs.len(),
        ..AnswerStats::default()
    };
    for ((ci, gi, _), reply) in jobs.iter().zip(replies) {
        let ids: Vec<String> = groups[*gi].iter().map(|q| q.id.clone()).collect();
        let text = match reply {
            Ok(r) => r.response_text,
            Err(e) => {
                log::warn!("context {}: request failed: {e}", contexts[*ci].context_id);
                stats.failed_requests += 1;
                continue;
            }
        };
        let parsed = parse_identify_response(&text, &ids);
        if parse::is_total_failure(&parsed) {
            log::warn!("context {}: reply names none of the asked ids", contexts[*ci].context_id);
            stats.unparseable += 1;
        }
        for (k, p) in parsed.into_iter().enumerate() {
            cells[*ci][offsets[*gi] + k] = p.cell;
            status[*ci][offsets[*gi] + k] = p.status;
        }
    }
    Ok((
        AnswerMatrix {
            context_ids: contexts.iter().map(|c| c.context_id.clone()).collect(),
            question_ids,
            cells,
            status,
            gold: contexts.iter().map(collapse_to_binary).collect(),
        },
        stats,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Score {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Some denominator was zero and the affected value was set to 0.
    pub zero_division: bool,
}

pub fn binary_f1(predictions: &[bool], gold: &[bool]) -> Result<F1Score, AlignError> {
    if predictions.len() != gold.len() {
        return Err(AlignError::LengthMismatch(predictions.len(), gold.len()));
    }
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (&p, &g) in predictions.iter().zip(gold) {
        match (p, g) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
    }
    Ok(f1_from_counts(tp, fp, fneg))
}

fn f1_from_counts(tp: usize, fp: usize, fneg: usize) -> F1Score {
    let mut zero_division = false;
    let mut ratio = |num: usize, den: usize| {
        if den == 0 {
            zero_division = true;
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fneg);
    let f1 = ratio(2 * tp, 2 * tp + fp + fneg);
    F1Score {
        precision,
        recall,
        f1,
        zero_division,
    }
}

/// One context of a baseline prediction dump: the highest confidence over the
/// techniques it predicted (`None` when it predicted no technique).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictionRow {
    pub context_id: String,
    pub max_confidence: Option<u8>,
    pub gold: bool,
}

const DUMP_HEADER: &str = "context_id\tmax_confidence\tgold";

/// Prediction dump: TSV with header `context_id, max_confidence, gold`.
/// Empty `max_confidence` means no technique was predicted; gold is 1 or 0.
pub fn render_prediction_dump(rows: &[PredictionRow]) -> String {
    let mut out = format!("{DUMP_HEADER}\n");
    for r in rows {
        let conf = r.max_confidence.map(|c| c.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{}\t{}\t{}", r.context_id, conf, u8::from(r.gold));
    }
    out
}

/// Run the definition-prompting baseline over labeled contexts and keep the
/// highest technique confidence of each reply. A failed request leaves the
/// row with no prediction; the count of such rows is returned alongside.
pub fn run_baseline(gateway: &Gateway, contexts: &[LabeledContext]) -> Result<(Vec<PredictionRow>, usize), AlignError> {
    let listing = crate::technique::Technique::catalog_listing();
    let prompts = contexts
        .iter()
        .map(|c| {
            gateway
                .catalog()
                .render("baseline", None, &vars([("techniques", listing.clone()), ("text", c.text.clone())]))
        })
        .collect::<Result<Vec<ChatPrompt>, GatewayError>>()?;
    let replies = gateway.batch_complete(&prompts);
    let mut failed = 0;
    let rows = contexts
        .iter()
        .zip(replies)
        .map(|(c, r)| {
            let max_confidence = match r {
                Ok(rec) => parse::max_technique_confidence(&parse_baseline_response(&rec.response_text)),
                Err(e) => {
                    log::warn!("context {}: baseline request failed: {e}", c.context_id);
                    failed += 1;
                    None
                }
            };
            PredictionRow {
                context_id: c.context_id.clone(),
                max_confidence,
                gold: collapse_to_binary(c),
            }
        })
        .collect();
    Ok((rows, failed))
}

pub fn parse_prediction_dump(content: &str) -> Result<Vec<PredictionRow>, AlignError> {
    let mut rows = Vec::new();
    for (i, line) in content.lines().enumerate() {
        let lineno = i + 1;
        if lineno == 1 {
            if line.trim_end() != DUMP_HEADER {
                return Err(AlignError::Malformed {
                    line: 1,
                    reason: format!("expected header '{DUMP_HEADER}'"),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| AlignError::Malformed { line: lineno, reason };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 {
            return Err(bad(format!("expected 3 fields, got {}", f.len())));
        }
        let max_confidence = if f[1].is_empty() {
            None
        } else {
            let v: u8 = f[1].parse().map_err(|_| bad(format!("bad confidence '{}'", f[1])))?;
            if v > 100 {
                return Err(bad(format!("confidence {v} above 100")));
            }
            Some(v)
        };
        let gold = match f[2] {
            "1" => true,
            "0" => false,
            other => return Err(bad(format!("bad gold '{other}'"))),
        };
        rows.push(PredictionRow {
            context_id: f[0].to_string(),
            max_confidence,
            gold,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub x: u8,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub rows: Vec<SweepRow>,
    /// Threshold with the highest F1 (lowest x on ties).
    pub best_x: Option<u8>,
}

pub const DEFAULT_THRESHOLDS: [u8; 8] = [20, 30, 40, 50, 60, 80, 85, 90];

/// For each x, predict True iff the context's max confidence is >= x.
pub fn threshold_sweep(rows: &[PredictionRow], thresholds: &[u8]) -> Sweep {
    let mut out = Vec::with_capacity(thresholds.len());
    for &x in thresholds {
        let (mut tp, mut fp, mut fneg) = (0, 0, 0);
        for r in rows {
            let pred = r.max_confidence.is_some_and(|c| c >= x);
            match (pred, r.gold) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fneg += 1,
                _ => {}
            }
        }
        let s = f1_from_counts(tp, fp, fneg);
        out.push(SweepRow {
            x,
            precision: s.precision,
            recall: s.recall,
            f1: s.f1,
            true_count: tp + fp,
        });
    }
    let best_x = out
        .iter()
        .max_by(|a, b| a.f1.total_cmp(&b.f1).then(b.x.cmp(&a.x)))
        .map(|r| r.x);
    Sweep { rows: out, best_x }
}

pub fn render_sweep(s: &Sweep) -> String {
    let mut out = String::from("x,precision,recall,f1,true_count,best\n");
    for r in &s.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.x,
            fixed6(r.precision),
            fixed6(r.recall),
            fixed6(r.f1),
            r.true_count,
            u8::from(s.best_x == Some(r.x))
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScore {
    pub question_id: String,
    pub anova_f: f64,
    pub anova_flag: FFlag,
    pub rf_importance: f64,
    pub anova_rank: usize,
    pub rf_rank: usize,
}

fn id_order(a: &str, b: &str) -> Ordering {
    match (parse_id(a), parse_id(b)) {
        (Some(x), Some(y)) => x.cmp(&y),
        _ => a.cmp(b),
    }
}

/// Indices sorted by score descending (+inf first), ties by question id.
pub fn rank_order(ids: &[String], scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..ids.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then_with(|| id_order(&ids[a], &ids[b])));
    idx
}

fn ranks(ids: &[String], scores: &[f64]) -> Vec<usize> {
    let mut r = vec![0; ids.len()];
    for (pos, i) in rank_order(ids, scores).into_iter().enumerate() {
        r[i] = pos + 1;
    }
    r
}

/// One-way ANOVA F of every question column against the gold labels.
pub fn anova_f_scores(m: &AnswerMatrix, encoding: Encoding) -> Result<Vec<FResult>, AlignError> {
    if !m.has_gold() {
        return Err(AlignError::NoGold);
    }
    (0..m.question_ids.len())
        .map(|q| f_statistic(&m.column(q, encoding), &m.gold).map_err(AlignError::from))
        .collect()
}

pub fn rf_gini_importances(m: &AnswerMatrix, encoding: Encoding, params: &ForestParams) -> Result<Vec<f64>, AlignError> {
    if !m.has_gold() {
        return Err(AlignError::NoGold);
    }
    let forest = RandomForest::fit(&m.encoded(encoding), &m.gold, params)?;
    Ok(forest.importances()?)
}

pub fn feature_scores(m: &AnswerMatrix, encoding: Encoding, params: &ForestParams) -> Result<Vec<FeatureScore>, AlignError> {
    let f = anova_f_scores(m, encoding)?;
    let imp = rf_gini_importances(m, encoding, params)?;
    let fvals: Vec<f64> = f.iter().map(|r| r.f).collect();
    let ar = ranks(&m.question_ids, &fvals);
    let rr = ranks(&m.question_ids, &imp);
    Ok(m.question_ids
        .iter()
        .enumerate()
        .map(|(i, q)| FeatureScore {
            question_id: q.clone(),
            anova_f: f[i].f,
            anova_flag: f[i].flag,
            rf_importance: imp[i],
            anova_rank: ar[i],
            rf_rank: rr[i],
        })
        .collect())
}

pub fn render_feature_scores(scores: &[FeatureScore]) -> String {
    let mut out = String::from("question_id,anova_f,rf_importance,anova_rank,rf_rank\n");
    for s in scores {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            s.question_id,
            fixed6(s.anova_f),
            fixed6(s.rf_importance),
            s.anova_rank,
            s.rf_rank
        );
    }
    out
}

pub fn parse_feature_scores(content: &str) -> Result<Vec<FeatureScore>, AlignError> {
    let mut out = Vec::new();
    for (i, line) in content.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| AlignError::Malformed { line: i + 1, reason };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(bad(format!("expected 5 fields, got {}", f.len())));
        }
        let num = |s: &str| -> Result<f64, AlignError> {
            if s == "inf" {
                Ok(f64::INFINITY)
            } else {
                s.parse().map_err(|_| bad(format!("bad number '{s}'")))
            }
        };
        let rank = |s: &str| -> Result<usize, AlignError> { s.parse().map_err(|_| bad(format!("bad rank '{s}'"))) };
        let anova_f = num(f[1])?;
        out.push(FeatureScore {
            question_id: f[0].to_string(),
            anova_f,
            anova_flag: if anova_f.is_infinite() { FFlag::PerfectSeparation } else { FFlag::Finite },
            rf_importance: num(f[2])?,
            anova_rank: rank(f[3])?,
            rf_rank: rank(f[4])?,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub selected: BTreeSet<String>,
    pub k_anova: usize,
    pub k_rf: usize,
    pub seed: u64,
}

impl SelectionResult {
    /// Selected ids in numeric id order.
    pub fn ordered(&self) -> Vec<String> {
        let mut v: Vec<String> = self.selected.iter().cloned().collect();
        v.sort_by(|a, b| id_order(a, b));
        v
    }
}

/// Union of the top `k_anova` questions by F and the top `k_rf` by
/// importance.
pub fn select_top_union(
    scores: &[FeatureScore],
    k_anova: usize,
    k_rf: usize,
    seed: u64,
) -> Result<SelectionResult, AlignError> {
    let need = k_anova.max(k_rf).max(1);
    if scores.len() < need || k_anova == 0 || k_rf == 0 {
        return Err(AlignError::TooFewQuestions {
            need,
            have: scores.len(),
        });
    }
    let ids: Vec<String> = scores.iter().map(|s| s.question_id.clone()).collect();
    let f: Vec<f64> = scores.iter().map(|s| s.anova_f).collect();
    let imp: Vec<f64> = scores.iter().map(|s| s.rf_importance).collect();
    let mut selected = BTreeSet::new();
    for i in rank_order(&ids, &f).into_iter().take(k_anova) {
        selected.insert(ids[i].clone());
    }
    for i in rank_order(&ids, &imp).into_iter().take(k_rf) {
        selected.insert(ids[i].clone());
    }
    Ok(SelectionResult {
        selected,
        k_anova,
        k_rf,
        seed,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    AnyTrue,
    TrainedClassifier,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowPrediction {
    pub value: bool,
    /// Every cell was N/A.
    pub all_na: bool,
}

/// True iff at least one cell is True. An all-N/A row is False and flagged.
pub fn any_true(row: &[AnswerCell]) -> RowPrediction {
    let all_na = row.iter().all(|c| c.answer == Answer::NA);
    RowPrediction {
        value: !all_na && row.iter().any(AnswerCell::is_true),
        all_na,
    }
}

pub fn classifier_predict(forest: &RandomForest, row: &[AnswerCell], encoding: Encoding) -> RowPrediction {
    let all_na = row.iter().all(|c| c.answer == Answer::NA);
    if all_na {
        return RowPrediction { value: false, all_na };
    }
    let x: Vec<f64> = row.iter().map(|c| encoding.encode(c.answer)).collect();
    RowPrediction {
        value: forest.predict(&x),
        all_na,
    }
}

/// Seeded shuffle split of row indices into (train, test).
pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = ((n as f64) * train_fraction).round() as usize;
    let test = idx.split_off(cut.min(n));
    (idx, test)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleEvaluation {
    pub rule: Aggregation,
    pub test_rows: usize,
    pub score: F1Score,
    pub all_na_rows: usize,
}

/// Score an aggregation rule on the held-out part of a seeded split. The
/// classifier is trained on the remaining rows.
pub fn evaluate_rule(
    m: &AnswerMatrix,
    rule: Aggregation,
    encoding: Encoding,
    params: &ForestParams,
    train_fraction: f64,
) -> Result<RuleEvaluation, AlignError> {
    if !m.has_gold() {
        return Err(AlignError::NoGold);
    }
    let (train, test) = split_indices(m.context_ids.len(), train_fraction, params.seed);
    let preds: Vec<RowPrediction> = match rule {
        Aggregation::AnyTrue => test.iter().map(|&r| any_true(&m.cells[r])).collect(),
        Aggregation::TrainedClassifier => {
            let x: Vec<Vec<f64>> = train
                .iter()
                .map(|&r| m.cells[r].iter().map(|c| encoding.encode(c.answer)).collect())
                .collect();
            let y: Vec<bool> = train.iter().map(|&r| m.gold[r]).collect();
            let forest = RandomForest::fit(&x, &y, params)?;
            test.iter().map(|&r| classifier_predict(&forest, &m.cells[r], encoding)).collect()
        }
    };
    let values: Vec<bool> = preds.iter().map(|p| p.value).collect();
    let gold: Vec<bool> = test.iter().map(|&r| m.gold[r]).collect();
    Ok(RuleEvaluation {
        rule,
        test_rows: test.len(),
        score: binary_f1(&values, &gold)?,
        all_na_rows: preds.iter().filter(|p| p.all_na).count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(a: Answer) -> AnswerCell {
        AnswerCell { answer: a, confidence: None }
    }

    #[test]
    fn f1_examples() {
        let g = [true, false, true, true, false];
        let s = binary_f1(&g, &g).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
        let s = binary_f1(&[true, true, false, false], &[true, false, true, false]).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (0.5, 0.5, 0.5));
        let s = binary_f1(&[false, false], &[false, false]).unwrap();
        assert!(s.zero_division);
        assert_eq!(s.f1, 0.0);
        assert!(binary_f1(&[true], &[]).is_err());
    }

    #[test]
    fn sweep_all_confident() {
        let rows: Vec<PredictionRow> = (0..5)
            .map(|i| PredictionRow {
                context_id: i.to_string(),
                max_confidence: Some(100),
                gold: true,
            })
            .collect();
        let s = threshold_sweep(&rows, &[0, 50, 100]);
        assert!(s.rows.iter().all(|r| r.f1 == 1.0 && r.true_count == 5));
        let back = parse_prediction_dump(&render_prediction_dump(&rows)).unwrap();
        assert_eq!(back, rows);
    }

    #[test]
    fn aggregation_rules() {
        let r = any_true(&[cell(Answer::True), cell(Answer::False), cell(Answer::NA)]);
        assert!(r.value);
        assert!(!any_true(&[cell(Answer::False); 3]).value);
        let r = any_true(&[cell(Answer::NA); 2]);
        assert!(!r.value && r.all_na);
    }

    fn score(id: &str, f: f64, imp: f64) -> FeatureScore {
        FeatureScore {
            question_id: id.into(),
            anova_f: f,
            anova_flag: FFlag::Finite,
            rf_importance: imp,
            anova_rank: 0,
            rf_rank: 0,
        }
    }

    #[test]
    fn selection_bounds_and_ties() {
        let scores: Vec<FeatureScore> = (1..=4).map(|i| score(&format!("Q{i}"), i as f64, 5.0 - i as f64)).collect();
        let s = select_top_union(&scores, 1, 1, 0).unwrap();
        assert_eq!(s.ordered(), ["Q1", "Q4"]);
        let tied: Vec<FeatureScore> = ["Q10", "Q2", "Q3"].iter().map(|id| score(id, 1.0, 1.0)).collect();
        let s = select_top_union(&tied, 1, 1, 0).unwrap();
        assert_eq!(s.ordered(), ["Q2"]);
        let mut inf = tied.clone();
        inf[0].anova_f = f64::INFINITY;
        assert_eq!(select_top_union(&inf, 1, 1, 0).unwrap().ordered(), ["Q2", "Q10"]);
        assert!(select_top_union(&tied, 4, 1, 0).is_err());
    }

    #[test]
    fn matrix_round_trip() {
        let m = AnswerMatrix {
            context_ids: vec!["c1".into(), "c2".into()],
            question_ids: vec!["Q1".into(), "Q7".into()],
            cells: vec![
                vec![AnswerCell { answer: Answer::True, confidence: Some(70) }, cell(Answer::NA)],
                vec![cell(Answer::False), AnswerCell { answer: Answer::False, confidence: Some(0) }],
            ],
            status: vec![
                vec![CellStatus::Parsed, CellStatus::Missing],
                vec![CellStatus::Duplicate, CellStatus::Parsed],
            ],
            gold: vec![true, false],
        };
        let text = m.render();
        assert!(text.starts_with("c1\tgold=T\tQ1=T:70\tQ7=N#missing\n"));
        assert_eq!(AnswerMatrix::parse(&text).unwrap(), m);
    }

    #[test]
    fn prompt_lists_ids_and_example() {
        let repo = crate::hlq::HlqRepository::published();
        let qs: Vec<&Hlq> = repo.questions.iter().take(3).collect();
        let p = identify_prompt(&Catalog::builtin(), &qs, Language::Ru, "Текст.", true).unwrap();
        assert!(p.system.contains("Q20: Использует ли автор"));
        assert_eq!(p.exchanges[0].1, "Q20: True (conf:70); Q88: False (conf:30); Q92: N/A");
        assert_eq!(p.pre_generation_prefix.as_deref(), Some("Q20:"));
    }
}
