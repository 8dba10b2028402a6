//! Hand-labeled replies covering the ways models break the answer format.

use std::panic::catch_unwind;

use persuasion_core::align::parse::{is_total_failure, parse_identify_response};
use persuasion_core::align::{Answer, AnswerCell, CellStatus};
use serde::Deserialize;

#[derive(Deserialize)]
struct Case {
    name: String,
    ids: Vec<String>,
    response: String,
    expected: Vec<(String, Option<u8>, String)>,
}

fn cases() -> Vec<Case> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures/parser_cases.jsonl");
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn expected_cell(e: &(String, Option<u8>, String)) -> (AnswerCell, CellStatus) {
    let answer = match e.0.as_str() {
        "T" => Answer::True,
        "F" => Answer::False,
        "N" => Answer::NA,
        other => panic!("bad label {other}"),
    };
    let status = match e.2.as_str() {
        "parsed" => CellStatus::Parsed,
        "missing" => CellStatus::Missing,
        "duplicate" => CellStatus::Duplicate,
        other => panic!("bad status {other}"),
    };
    (AnswerCell { answer, confidence: e.1 }, status)
}

#[test]
fn adversarial_suite_matches_hand_labels() {
    let cases = cases();
    assert!(cases.len() >= 30);
    let mut wrong = Vec::new();
    for c in &cases {
        let got = catch_unwind(|| parse_identify_response(&c.response, &c.ids))
            .unwrap_or_else(|_| panic!("{} panicked", c.name));
        assert_eq!(got.len(), c.ids.len(), "{}", c.name);
        for ((g, e), id) in got.iter().zip(&c.expected).zip(&c.ids) {
            let (cell, status) = expected_cell(e);
            assert_eq!(&g.id, id);
            if g.cell != cell || g.status != status {
                wrong.push(format!("{} {id}: got {:?}/{:?}, want {cell:?}/{status:?}", c.name, g.cell, g.status));
            }
        }
    }
    assert!(wrong.is_empty(), "{}", wrong.join("\n"));
}

#[test]
fn total_failure_only_when_nothing_parsed() {
    for c in cases() {
        let got = parse_identify_response(&c.response, &c.ids);
        let none = c.expected.iter().all(|e| e.2 == "missing");
        assert_eq!(is_total_failure(&got), none, "{}", c.name);
    }
}

#[test]
fn answer_order_in_reply_does_not_matter() {
    let ids: Vec<String> = ["Q3", "Q17", "Q42", "Q99"].iter().map(|s| s.to_string()).collect();
    let parts = ["Q3: True (conf:70)", "Q17: False (conf:20)", "Q42: N/A", "Q99: True (conf:95)"];
    let reference = parse_identify_response(&parts.join("; "), &ids);
    let mut order = [0, 1, 2, 3];
    // every permutation of four labels
    for _ in 0..24 {
        let text: Vec<&str> = order.iter().map(|&i| parts[i]).collect();
        assert_eq!(parse_identify_response(&text.join("\n"), &ids), reference);
        next_permutation(&mut order);
    }
}

fn next_permutation(v: &mut [usize]) {
    let Some(i) = (1..v.len()).rev().find(|&i| v[i - 1] < v[i]) else {
        v.reverse();
        return;
    };
    let j = (i..v.len()).rev().find(|&j| v[j] > v[i - 1]).unwrap();
    v.swap(i - 1, j);
    v[i..].reverse();
}
