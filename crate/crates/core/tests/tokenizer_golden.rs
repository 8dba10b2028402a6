//! The canonical tokenizer against frozen reference-tokenizer output.

use persuasion_core::corpus::{tokenize, word_count};
use serde::Deserialize;

#[derive(Deserialize)]
struct Golden {
    text: String,
    tokens: Vec<String>,
}

fn golden() -> Vec<Golden> {
    include_str!("data/tokenizer_golden.jsonl")
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).expect("golden line parses"))
        .collect()
}

#[test]
fn matches_reference_tokens() {
    let cases = golden();
    assert!(cases.len() >= 30);
    for case in &cases {
        assert_eq!(tokenize(&case.text), case.tokens, "text: {:?}", case.text);
        assert_eq!(word_count(&case.text), case.tokens.len());
    }
}

#[test]
fn spec_examples() {
    assert_eq!(word_count(""), 0);
    assert_eq!(word_count("fire engulfed, rapidly destroyed"), 5);
    assert_eq!(word_count("Трагедия музея"), 2);
}
