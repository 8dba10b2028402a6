//! Tolerant readers for identify and baseline replies.

use std::collections::HashMap;
use std::sync::OnceLock;

use regex::Regex;

use super::{Answer, AnswerCell, CellStatus};
use crate::technique::{Technique, NONE_NAME};

/// One expected question after parsing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedCell {
    pub id: String,
    pub cell: AnswerCell,
    pub status: CellStatus,
}

fn label_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b[qQ]\s?(\d{1,5})(?:\D|$)").expect("static regex"))
}

fn answer_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?i)\b(not\s+applicable|n\s*/\s*a|n\s*\\\s*a|na|true|yes|false|no|неприменимо|не\s+применимо|н\s*/\s*[дпа]|неверно|верно|истина|правда|да|нет|ложь)\b",
        )
        .expect("static regex")
    })
}

fn conf_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)(?:\b(?:confidence|conf|уверенность|увер)\.?\s*[:=]?\s*(\d{1,3})\b|\(\s*(\d{1,3})\s*%?\s*\))")
            .expect("static regex")
    })
}

fn classify(token: &str) -> Answer {
    let t: String = token.to_lowercase().chars().filter(|c| !c.is_whitespace()).collect();
    match t.as_str() {
        "true" | "yes" | "да" | "верно" | "истина" | "правда" => Answer::True,
        "false" | "no" | "нет" | "неверно" | "ложь" => Answer::False,
        _ => Answer::NA,
    }
}

/// Read the answer and confidence from the text following one label.
fn read_segment(segment: &str) -> Option<AnswerCell> {
    let m = answer_re().find(segment)?;
    let answer = classify(m.as_str());
    let confidence = if answer == Answer::NA {
        None
    } else {
        conf_re().captures(&segment[m.end()..]).and_then(|c| {
            let digits = c.get(1).or_else(|| c.get(2))?.as_str();
            digits.parse::<u8>().ok().filter(|v| *v <= 100)
        })
    };
    Some(AnswerCell { answer, confidence })
}

/// Parse a reply to an identify prompt.
///
/// `Q<k>` labels are matched anywhere in the text; the answer for a label is
/// the first True/False/N/A word (English or Russian) before the next label,
/// optionally followed by a confidence. Every expected id gets a cell: ids
/// that never appear are NA/`Missing`, repeated ids keep their first answer
/// and are flagged `Duplicate`. Labels for unexpected ids are ignored.
pub fn parse_identify_response(text: &str, expected_ids: &[String]) -> Vec<ParsedCell> {
    let expected: HashMap<u32, usize> = expected_ids
        .iter()
        .enumerate()
        .filter_map(|(i, id)| crate::hlq::parse_id(id).map(|n| (n, i)))
        .collect();

    // (id number, segment start) for every label, in text order.
    let labels: Vec<(Option<u32>, usize, usize)> = label_re()
        .captures_iter(text)
        .map(|c| {
            let whole = c.get(0).expect("match");
            let num = c.get(1).expect("group");
            (num.as_str().parse().ok(), whole.start(), num.end())
        })
        .collect();

    let mut found: Vec<Option<(AnswerCell, bool)>> = vec![None; expected_ids.len()];
    for (i, &(num, _, seg_start)) in labels.iter().enumerate() {
        let Some(slot) = num.and_then(|n| expected.get(&n)) else { continue };
        let seg_end = labels.get(i + 1).map_or(text.len(), |l| l.1);
        let segment = &text[seg_start..seg_end.max(seg_start)];
        match &mut found[*slot] {
            Some((_, dup)) => *dup = true,
            entry @ None => {
                if let Some(cell) = read_segment(segment) {
                    *entry = Some((cell, false));
                }
            }
        }
    }

    expected_ids
        .iter()
        .zip(found)
        .map(|(id, f)| match f {
            Some((cell, dup)) => ParsedCell {
                id: id.clone(),
                cell,
                status: if dup { CellStatus::Duplicate } else { CellStatus::Parsed },
            },
            None => ParsedCell {
                id: id.clone(),
                cell: AnswerCell::na(),
                status: CellStatus::Missing,
            },
        })
        .collect()
}

/// True when not a single expected id could be read.
pub fn is_total_failure(cells: &[ParsedCell]) -> bool {
    !cells.is_empty() && cells.iter().all(|c| c.status == CellStatus::Missing)
}

/// One entry of a baseline reply: a technique (or the None class) with its
/// confidence if given.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BaselineLabel {
    pub technique: Option<Technique>,
    pub confidence: Option<u8>,
}

fn baseline_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)([A-Za-z][A-Za-z_\-]*[A-Za-z])\s*(?:\(\s*conf(?:idence)?\s*[:=]?\s*(\d{1,3})\s*\))?")
            .expect("static regex")
    })
}

/// Parse a baseline reply of the form `Name (conf:NN); Name (conf:NN)`.
/// Unknown names are skipped.
pub fn parse_baseline_response(text: &str) -> Vec<BaselineLabel> {
    let mut out = Vec::new();
    for piece in text.split([';', '\n']) {
        let Some(c) = baseline_re().captures(piece.trim()) else { continue };
        let name = &c[1];
        let technique = if name.eq_ignore_ascii_case(NONE_NAME) {
            None
        } else {
            match Technique::ALL.iter().find(|t| t.name().eq_ignore_ascii_case(name)) {
                Some(t) => Some(*t),
                None => continue,
            }
        };
        let confidence = c.get(2).and_then(|m| m.as_str().parse::<u8>().ok()).filter(|v| *v <= 100);
        out.push(BaselineLabel { technique, confidence });
    }
    out
}

/// Highest confidence over real techniques (the None class does not count).
pub fn max_technique_confidence(labels: &[BaselineLabel]) -> Option<u8> {
    labels
        .iter()
        .filter(|l| l.technique.is_some())
        .filter_map(|l| l.confidence)
        .max()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: &[u32]) -> Vec<String> {
        n.iter().map(|i| format!("Q{i}")).collect()
    }

    fn cell(a: Answer, c: Option<u8>) -> AnswerCell {
        AnswerCell { answer: a, confidence: c }
    }

    #[test]
    fn published_grammar() {
        let got = parse_identify_response("Q1: True (conf:70); Q2: False (conf:30); Q3: N/A", &ids(&[1, 2, 3]));
        assert_eq!(got[0].cell, cell(Answer::True, Some(70)));
        assert_eq!(got[1].cell, cell(Answer::False, Some(30)));
        assert_eq!(got[2].cell, cell(Answer::NA, None));
        assert!(got.iter().all(|c| c.status == CellStatus::Parsed));
    }

    #[test]
    fn out_of_order_by_id() {
        let got = parse_identify_response("Q2: False; Q1: True", &ids(&[1, 2]));
        assert_eq!(got[0].cell.answer, Answer::True);
        assert_eq!(got[1].cell.answer, Answer::False);
    }

    #[test]
    fn first_wins_and_flags_duplicate() {
        let got = parse_identify_response("Q1: True Q1: False", &ids(&[1]));
        assert_eq!(got[0].cell, cell(Answer::True, None));
        assert_eq!(got[0].status, CellStatus::Duplicate);
    }

    #[test]
    fn q1_is_not_q10() {
        let got = parse_identify_response("Q10: True; Q1: False", &ids(&[1, 10]));
        assert_eq!(got[0].cell.answer, Answer::False);
        assert_eq!(got[1].cell.answer, Answer::True);
    }

    #[test]
    fn garbage_is_all_missing() {
        let got = parse_identify_response("I cannot help with that.", &ids(&[1, 2]));
        assert!(is_total_failure(&got));
        assert!(got.iter().all(|c| c.cell == AnswerCell::na()));
    }

    #[test]
    fn baseline_reply() {
        let labels = parse_baseline_response("Name_Calling-Labeling (conf:90); Loaded_Language (conf:85); Bogus (conf:99)");
        assert_eq!(labels.len(), 2);
        assert_eq!(max_technique_confidence(&labels), Some(90));
        let labels = parse_baseline_response("None (conf:95)");
        assert_eq!(labels, [BaselineLabel { technique: None, confidence: Some(95) }]);
        assert_eq!(max_technique_confidence(&labels), None);
    }
}
