//! Canonical word tokenizer.
//!
//! A self-contained port of the Treebank-style word tokenizer (the improved
//! destructive variant) preceded by a light sentence splitter. Word counts for
//! every metric come from [`word_count`]; its behavior is pinned by the golden
//! file under `tests/data/tokenizer_golden.jsonl`.

use std::sync::OnceLock;

use fancy_regex::Regex;

struct Rule {
    re: Regex,
    rep: &'static str,
}

impl Rule {
    fn new(pattern: &str, rep: &'static str) -> Rule {
        Rule {
            re: Regex::new(pattern).expect("tokenizer rule compiles"),
            rep,
        }
    }

    fn apply(&self, text: String) -> String {
        match self.re.try_replacen(&text, 0, self.rep) {
            Ok(std::borrow::Cow::Owned(s)) => s,
            Ok(std::borrow::Cow::Borrowed(_)) => text,
            // Backtrack limit: leave the text untouched rather than panic.
            Err(_) => text,
        }
    }
}

struct Rules {
    starting_quotes: Vec<Rule>,
    punctuation: Vec<Rule>,
    parens: Rule,
    double_dashes: Rule,
    ending_quotes: Vec<Rule>,
    contractions: Vec<Rule>,
}

fn rules() -> &'static Rules {
    static RULES: OnceLock<Rules> = OnceLock::new();
    RULES.get_or_init(|| Rules {
        starting_quotes: vec![
            Rule::new(r"([«“‘„]|[`]+)", " ${1} "),
            Rule::new(r#"^""#, "``"),
            Rule::new(r"(``)", " ${1} "),
            Rule::new(r#"([ \(\[{<])("|'{2})"#, "${1} `` "),
            Rule::new(r"(?i)(?<!\w)(')(?!(?:re|ve|ll|m|t|s|d|n)\b)(?=\w)", "${1} "),
        ],
        punctuation: vec![
            Rule::new(r#"([^\.])(\.)([\]\)}>"'»”’ ]*)\s*$"#, "${1} ${2} ${3} "),
            Rule::new(r"([:,])([^\d])", " ${1} ${2}"),
            Rule::new(r"([:,])$", " ${1} "),
            Rule::new(r"\.{2,}", " ${0} "),
            Rule::new(r"[;@#$%&]", " ${0} "),
            Rule::new(r"[\x{2012}-\x{2015}]", " ${0} "),
            Rule::new(r#"([^\.])(\.)([\]\)}>"']*)\s*$"#, "${1} ${2}${3} "),
            Rule::new(r"[?!]", " ${0} "),
            Rule::new(r"([^'])' ", "${1} ' "),
            Rule::new(r"[*]", " ${0} "),
        ],
        parens: Rule::new(r"[\]\[\(\)\{\}<>]", " ${0} "),
        double_dashes: Rule::new(r"--", " -- "),
        ending_quotes: vec![
            Rule::new(r"([»”’])", " ${1} "),
            Rule::new(r"''", " '' "),
            Rule::new(r#"""#, " '' "),
            Rule::new(r"\s+", " "),
            Rule::new(r"([^' ])('[sS]|'[mM]|'[dD]|') ", "${1} ${2} "),
            Rule::new(r"([^' ])('ll|'LL|'re|'RE|'ve|'VE|n't|N'T) ", "${1} ${2} "),
        ],
        contractions: vec![
            Rule::new(r"(?i)\b(can)(not)\b", " ${1} ${2} "),
            Rule::new(r"(?i)\b(d)('ye)\b", " ${1} ${2} "),
            Rule::new(r"(?i)\b(gim)(me)\b", " ${1} ${2} "),
            Rule::new(r"(?i)\b(gon)(na)\b", " ${1} ${2} "),
            Rule::new(r"(?i)\b(got)(ta)\b", " ${1} ${2} "),
            Rule::new(r"(?i)\b(lem)(me)\b", " ${1} ${2} "),
            Rule::new(r"(?i)\b(more)('n)\b", " ${1} ${2} "),
            Rule::new(r"(?i)\b(wan)(na)(?=\s)", " ${1} ${2} "),
            Rule::new(r"(?i) ('t)(is)\b", " ${1} ${2} "),
            Rule::new(r"(?i) ('t)(was)\b", " ${1} ${2} "),
        ],
    })
}

/// Words that end in a period without ending the sentence.
const ABBREVIATIONS: &[&str] = &[
    "mr", "mrs", "ms", "dr", "prof", "st", "jr", "sr", "vs", "etc", "inc", "ltd", "co", "corp",
    "gen", "gov", "sen", "rep", "col", "lt", "sgt", "capt", "no", "vol", "fig", "approx", "jan",
    "feb", "mar", "apr", "jun", "jul", "aug", "sep", "sept", "oct", "nov", "dec", "ул", "им", "гг",
    "г", "т", "тыс", "млн", "млрд", "руб", "см", "др", "пр",
];

fn is_closing(c: char) -> bool {
    matches!(c, '"' | '\'' | '”' | '’' | '»' | ')' | ']' | '}')
}

fn opens_sentence(c: char) -> bool {
    c.is_uppercase() || c.is_numeric() || matches!(c, '"' | '“' | '«' | '(' | '[' | '\'' | '‘')
}

fn is_abbreviation(word: &str) -> bool {
    let word = word.trim_start_matches(|c: char| !c.is_alphanumeric());
    let stem = word.trim_end_matches('.');
    if stem.is_empty() {
        return false;
    }
    // Initials ("V.") and dotted acronyms ("U.S.").
    if stem.chars().count() == 1 && stem.chars().all(char::is_alphabetic) {
        return true;
    }
    if stem.contains('.') {
        return true;
    }
    let lower = stem.to_lowercase();
    ABBREVIATIONS.contains(&lower.as_str())
}

/// Split text into sentences at `.`, `?` or `!` followed by whitespace and a
/// sentence-opening character.
pub fn split_sentences(text: &str) -> Vec<&str> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut sentences = Vec::new();
    let mut start = 0usize;
    let mut i = 0usize;
    while i < chars.len() {
        let (_, c) = chars[i];
        if matches!(c, '.' | '?' | '!') {
            let mut j = i + 1;
            while j < chars.len() && (is_closing(chars[j].1) || matches!(chars[j].1, '.' | '?' | '!')) {
                j += 1;
            }
            let mut k = j;
            while k < chars.len() && chars[k].1.is_whitespace() {
                k += 1;
            }
            if k > j && k < chars.len() && opens_sentence(chars[k].1) {
                let end = chars[j - 1].0 + chars[j - 1].1.len_utf8();
                let word_start = text[..chars[i].0]
                    .rfind(char::is_whitespace)
                    .map(|p| p + 1)
                    .unwrap_or(0);
                let word = &text[word_start..chars[i].0 + 1];
                if !(c == '.' && is_abbreviation(word)) {
                    let sentence = text[start..end].trim();
                    if !sentence.is_empty() {
                        sentences.push(sentence);
                    }
                    start = chars[k].0;
                }
                i = k;
                continue;
            }
        }
        i += 1;
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        sentences.push(tail);
    }
    sentences
}

/// Tokenize one sentence with the Treebank rule cascade.
pub fn tokenize_sentence(sentence: &str) -> Vec<String> {
    let r = rules();
    let mut text = sentence.to_string();
    for rule in &r.starting_quotes {
        text = rule.apply(text);
    }
    for rule in &r.punctuation {
        text = rule.apply(text);
    }
    text = r.parens.apply(text);
    text = r.double_dashes.apply(text);
    text = format!(" {text} ");
    for rule in &r.ending_quotes {
        text = rule.apply(text);
    }
    for rule in &r.contractions {
        text = rule.apply(text);
    }
    text.split_whitespace().map(str::to_string).collect()
}

/// Tokenize text into words and punctuation tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    split_sentences(text)
        .into_iter()
        .flat_map(tokenize_sentence)
        .collect()
}

/// Number of tokens in `text` under the canonical tokenizer.
pub fn word_count(text: &str) -> usize {
    if text.trim().is_empty() {
        return 0;
    }
    tokenize(text).len()
}
