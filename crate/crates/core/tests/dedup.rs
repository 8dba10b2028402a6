use std::collections::HashSet;

use persuasion_core::hlq::{dedup_by_ngram_overlap, dedup_decisions, words, DedupDecision, Hlq};
use persuasion_core::Technique;
use proptest::prelude::*;

fn planted() -> Vec<(bool, String)> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures/dedup_planted.tsv");
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| {
            let (flag, text) = l.split_once('\t').unwrap();
            (flag == "keep", text.to_string())
        })
        .collect()
}

fn as_hlqs(texts: &[String]) -> Vec<Hlq> {
    texts
        .iter()
        .enumerate()
        .map(|(i, t)| Hlq {
            id: format!("Q{}", i + 1),
            text_en: t.clone(),
            text_ru: None,
            source_technique: Some(Technique::LoadedLanguage),
            active: false,
        })
        .collect()
}

// Grams as joined strings, built separately from the library's n-gram code.
fn grams(text: &str, n: usize) -> HashSet<String> {
    let w = words(text);
    if w.is_empty() {
        return HashSet::new();
    }
    if w.len() < n {
        return HashSet::from([w.join(" ")]);
    }
    (0..=w.len() - n).map(|i| w[i..i + n].join(" ")).collect()
}

fn jac(a: &HashSet<String>, b: &HashSet<String>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = a.iter().filter(|g| b.contains(*g)).count();
    inter as f64 / (a.len() + b.len() - inter) as f64
}

/// Greedy first-wins by brute force over the full pairwise matrix.
fn oracle_keep(texts: &[String], n: usize, t: f64) -> Vec<bool> {
    let g: Vec<_> = texts.iter().map(|x| grams(x, n)).collect();
    let mut keep = vec![false; texts.len()];
    for i in 0..texts.len() {
        keep[i] = (0..i).all(|k| !keep[k] || jac(&g[i], &g[k]) < t);
    }
    keep
}

#[test]
fn planted_fixture_keeps_fifteen() {
    let rows = planted();
    assert_eq!(rows.len(), 20);
    let texts: Vec<String> = rows.iter().map(|r| r.1.clone()).collect();
    let kept = dedup_by_ngram_overlap(&as_hlqs(&texts), 3, 0.7).unwrap();
    assert_eq!(kept.len(), 15);
    let kept_texts: Vec<&str> = kept.iter().map(|q| q.text_en.as_str()).collect();
    let want: Vec<&str> = rows.iter().filter(|r| r.0).map(|r| r.1.as_str()).collect();
    assert_eq!(kept_texts, want);
    assert_eq!(oracle_keep(&texts, 3, 0.7), rows.iter().map(|r| r.0).collect::<Vec<_>>());
}

#[test]
fn dropped_points_at_earlier_kept_item() {
    let texts: Vec<String> = planted().into_iter().map(|r| r.1).collect();
    let d = dedup_decisions(&texts, 3, 0.7).unwrap();
    for (i, dec) in d.iter().enumerate() {
        if let DedupDecision::Dropped { by, similarity } = dec {
            assert!(*by < i);
            assert_eq!(d[*by], DedupDecision::Kept);
            assert!(*similarity >= 0.7);
        }
    }
}

#[test]
fn bad_parameters_rejected() {
    assert!(dedup_decisions(&["a b c"], 0, 0.7).is_err());
    assert!(dedup_decisions(&["a b c"], 3, 0.0).is_err());
    assert!(dedup_decisions(&["a b c"], 3, 1.5).is_err());
}

const VOCAB: [&str; 9] = ["does", "the", "text", "use", "fear", "appeal", "to", "authority", "doubt"];

fn question() -> impl Strategy<Value = String> {
    prop::collection::vec(0..VOCAB.len(), 1..9).prop_map(|ix| ix.into_iter().map(|i| VOCAB[i]).collect::<Vec<_>>().join(" "))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn idempotent_bounded_and_matches_oracle(
        texts in prop::collection::vec(question(), 1..25),
        n in 1usize..4,
        t in prop::sample::select(vec![0.3, 0.5, 0.7, 0.9, 1.0]),
    ) {
        let qs = as_hlqs(&texts);
        let once = dedup_by_ngram_overlap(&qs, n, t).unwrap();
        let twice = dedup_by_ngram_overlap(&once, n, t).unwrap();
        prop_assert_eq!(&once, &twice);

        let g: Vec<_> = once.iter().map(|q| grams(&q.text_en, n)).collect();
        for i in 0..g.len() {
            for j in i + 1..g.len() {
                prop_assert!(jac(&g[i], &g[j]) < t);
            }
        }

        let keep = oracle_keep(&texts, n, t);
        let want: Vec<&String> = texts.iter().zip(&keep).filter(|(_, k)| **k).map(|(x, _)| x).collect();
        let got: Vec<&String> = once.iter().map(|q| &q.text_en).collect();
        prop_assert_eq!(got, want);
    }
}
