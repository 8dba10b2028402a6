//! Deterministic offline provider.
//!
//! Scripted rules (matched by template name and a substring of the final user
//! turn) take priority. Otherwise the reply is a canned answer in the output
//! grammar of the template, derived from a ChaCha stream seeded with
//! `sha256(seed || cache_key)`, so the same prompt and seed give the same text
//! in every process.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::OnceLock;
use std::time::Duration;

use parking_lot::Mutex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::provider::{Provider, ProviderRequest, TransportError};
use super::GatewayError;
use crate::technique::{Technique, NONE_NAME};

/// One scripted reply. `template` and `contains` are both optional filters;
/// a rule with `status` set fails with that HTTP status instead of replying.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptRule {
    #[serde(default)]
    pub template: Option<String>,
    #[serde(default)]
    pub contains: Option<String>,
    #[serde(default)]
    pub response: Option<String>,
    #[serde(default)]
    pub status: Option<u16>,
}

impl ScriptRule {
    pub fn reply(template: &str, contains: Option<&str>, response: &str) -> ScriptRule {
        ScriptRule {
            template: Some(template.to_string()),
            contains: contains.map(str::to_string),
            response: Some(response.to_string()),
            status: None,
        }
    }

    pub fn fail(template: Option<&str>, contains: Option<&str>, status: u16) -> ScriptRule {
        ScriptRule {
            template: template.map(str::to_string),
            contains: contains.map(str::to_string),
            response: None,
            status: Some(status),
        }
    }

    fn matches(&self, template: &str, final_user: &str) -> bool {
        self.template.as_deref().is_none_or(|t| t == template)
            && self.contains.as_deref().is_none_or(|c| final_user.contains(c))
    }
}

/// File form of a mock script (JSON).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MockScript {
    /// Probability that a canned identify answer is True.
    #[serde(default)]
    pub true_rate: Option<f64>,
    #[serde(default)]
    pub rules: Vec<ScriptRule>,
}

impl MockScript {
    pub fn load(path: &Path) -> Result<MockScript, GatewayError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::Config(format!("mock script {}: {e}", path.display())))?;
        serde_json::from_str(&raw).map_err(|e| GatewayError::Config(format!("mock script {}: {e}", path.display())))
    }
}

/// Default share of True cells in canned identify answers (about 85% of
/// cells come back False).
pub const DEFAULT_TRUE_RATE: f64 = 0.148;

pub struct MockProvider {
    seed: u64,
    rules: Vec<ScriptRule>,
    true_rate: f64,
    jitter_ms: u64,
    exit_after_calls: Option<u64>,
    calls: AtomicU64,
    inflight: AtomicUsize,
    peak_inflight: AtomicUsize,
    log: Mutex<Vec<(String, String)>>,
    per_template: Mutex<HashMap<String, u64>>,
}

impl std::fmt::Debug for MockProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MockProvider")
            .field("seed", &self.seed)
            .field("rules", &self.rules.len())
            .finish()
    }
}

impl MockProvider {
    pub fn new(seed: u64) -> MockProvider {
        MockProvider {
            seed,
            rules: Vec::new(),
            true_rate: DEFAULT_TRUE_RATE,
            jitter_ms: 0,
            exit_after_calls: None,
            calls: AtomicU64::new(0),
            inflight: AtomicUsize::new(0),
            peak_inflight: AtomicUsize::new(0),
            log: Mutex::new(Vec::new()),
            per_template: Mutex::new(HashMap::new()),
        }
    }

    pub fn with_script(mut self, script: MockScript) -> MockProvider {
        self.rules.extend(script.rules);
        if let Some(rate) = script.true_rate {
            self.true_rate = rate;
        }
        self
    }

    pub fn with_rule(mut self, rule: ScriptRule) -> MockProvider {
        self.rules.push(rule);
        self
    }

    pub fn with_true_rate(mut self, rate: f64) -> MockProvider {
        self.true_rate = rate;
        self
    }

    /// Sleep a random 0..=`ms` milliseconds per call to shake up scheduling.
    pub fn with_jitter_ms(mut self, ms: u64) -> MockProvider {
        self.jitter_ms = ms;
        self
    }

    /// Terminate the process once this many calls have been answered.
    /// Used to simulate a crash mid-run.
    pub fn with_exit_after_calls(mut self, calls: Option<u64>) -> MockProvider {
        self.exit_after_calls = calls;
        self
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn peak_inflight(&self) -> usize {
        self.peak_inflight.load(Ordering::SeqCst)
    }

    pub fn calls_for(&self, template: &str) -> u64 {
        self.per_template.lock().get(template).copied().unwrap_or(0)
    }

    /// (template, final user turn) of every call, in arrival order.
    pub fn prompt_log(&self) -> Vec<(String, String)> {
        self.log.lock().clone()
    }

    fn rng_for(&self, cache_key: &str) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(cache_key.as_bytes());
        let digest: [u8; 32] = h.finalize().into();
        ChaCha8Rng::from_seed(digest)
    }

    fn canned(&self, request: &ProviderRequest<'_>) -> String {
        let mut rng = self.rng_for(request.cache_key);
        let prompt = request.prompt;
        match prompt.template.as_str() {
            "identify" => canned_identify(&prompt.system, self.true_rate, &mut rng),
            "extract" => canned_extract(&prompt.final_user, &mut rng),
            "hlq_gen" => canned_questions(&prompt.final_user, &mut rng),
            "baseline" => canned_baseline(&mut rng),
            "mt_en2ru" => format!("[mock-ru] {}", prompt.final_user),
            "mt_ru2en" => format!("[mock-en] {}", prompt.final_user),
            _ => format!("mock-{}", &request.cache_key[..12.min(request.cache_key.len())]),
        }
    }
}

struct InflightGuard<'a>(&'a AtomicUsize);

impl Drop for InflightGuard<'_> {
    fn drop(&mut self) {
        self.0.fetch_sub(1, Ordering::SeqCst);
    }
}

impl Provider for MockProvider {
    fn id(&self) -> &str {
        "mock"
    }

    fn send(&self, request: &ProviderRequest<'_>) -> Result<String, TransportError> {
        let now = self.inflight.fetch_add(1, Ordering::SeqCst) + 1;
        let _guard = InflightGuard(&self.inflight);
        self.peak_inflight.fetch_max(now, Ordering::SeqCst);
        let prompt = request.prompt;
        self.log.lock().push((prompt.template.clone(), prompt.final_user.clone()));
        *self.per_template.lock().entry(prompt.template.clone()).or_default() += 1;

        if self.jitter_ms > 0 {
            let ms = rand::thread_rng().gen_range(0..=self.jitter_ms);
            std::thread::sleep(Duration::from_millis(ms));
        }

        let result = match self.rules.iter().find(|r| r.matches(&prompt.template, &prompt.final_user)) {
            Some(rule) => match (rule.status, &rule.response) {
                (Some(status), _) => {
                    let msg = format!("scripted failure for template {}", prompt.template);
                    if status == 429 || status >= 500 {
                        Err(TransportError::retryable(Some(status), msg))
                    } else {
                        Err(TransportError::fatal(Some(status), msg))
                    }
                }
                (None, Some(text)) => Ok(text.clone()),
                (None, None) => Ok(String::new()),
            },
            None => Ok(self.canned(request)),
        };

        let n = self.calls.fetch_add(1, Ordering::SeqCst) + 1;
        if self.exit_after_calls.is_some_and(|limit| n >= limit) {
            log::error!("mock provider: simulated crash after {n} calls");
            std::process::exit(137);
        }

        // Continuation semantics: drop the prefix the gateway will prepend.
        result.map(|text| match &prompt.pre_generation_prefix {
            Some(prefix) => text.strip_prefix(prefix.as_str()).map(str::to_string).unwrap_or(text),
            None => text,
        })
    }
}

fn question_ids(system: &str) -> Vec<String> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"(?m)^(Q\d+):").expect("static regex"));
    re.captures_iter(system).map(|c| c[1].to_string()).collect()
}

fn canned_identify(system: &str, true_rate: f64, rng: &mut ChaCha8Rng) -> String {
    let parts: Vec<String> = question_ids(system)
        .into_iter()
        .map(|id| {
            let roll: f64 = rng.gen();
            if roll < true_rate {
                format!("{id}: True (conf:{})", rng.gen_range(60..=95))
            } else if roll < true_rate + 0.02 {
                format!("{id}: N/A")
            } else {
                format!("{id}: False (conf:{})", rng.gen_range(10..=40))
            }
        })
        .collect();
    parts.join("; ")
}

fn canned_extract(paragraph: &str, rng: &mut ChaCha8Rng) -> String {
    let words: Vec<&str> = paragraph
        .split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()))
        .filter(|w| !w.is_empty())
        .collect();
    if words.is_empty() {
        return "None found.".to_string();
    }
    let n = rng.gen_range(1..=3);
    let spans: Vec<String> = (0..n)
        .map(|_| {
            let start = rng.gen_range(0..words.len());
            let len = rng.gen_range(1..=3).min(words.len() - start);
            format!("\"{}\"", words[start..start + len].join(" "))
        })
        .collect();
    spans.join("; ")
}

const QUALITIES: &[&str] = &[
    "emotional", "loaded", "exaggerated", "vague", "patriotic", "fearful", "repetitive", "misleading",
];
const THINGS: &[&str] = &[
    "language", "wording", "claims", "imagery", "appeals", "labels", "comparisons", "arguments",
];

fn canned_questions(final_user: &str, rng: &mut ChaCha8Rng) -> String {
    let task = final_user.split(':').next().unwrap_or("the task").trim().replace('_', " ");
    let n = rng.gen_range(4..=7);
    let questions: Vec<String> = (0..n)
        .map(|_| {
            let q = QUALITIES[rng.gen_range(0..QUALITIES.len())];
            let t = THINGS[rng.gen_range(0..THINGS.len())];
            match rng.gen_range(0..4) {
                0 => format!("Does the text use {q} {t}?"),
                1 => format!("Is there any {q} {t} in the text?"),
                2 => format!("Does the author rely on {q} {t}?"),
                _ => format!("Can you identify {q} {t} related to {task}?"),
            }
        })
        .collect();
    questions.join("; ")
}

fn canned_baseline(rng: &mut ChaCha8Rng) -> String {
    let n = rng.gen_range(0..=3);
    if n == 0 {
        return format!("{NONE_NAME} (conf:{})", rng.gen_range(50..=95));
    }
    let mut picked: Vec<Technique> = Vec::new();
    while picked.len() < n {
        let t = Technique::ALL[rng.gen_range(0..Technique::ALL.len())];
        if !picked.contains(&t) {
            picked.push(t);
        }
    }
    picked
        .iter()
        .map(|t| format!("{} (conf:{})", t.name(), rng.gen_range(20..=100)))
        .collect::<Vec<_>>()
        .join("; ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{vars, Catalog, DecodingParams};

    fn request<'a>(prompt: &'a crate::gateway::ChatPrompt, key: &'a str, decoding: &'a DecodingParams) -> ProviderRequest<'a> {
        ProviderRequest {
            prompt,
            model: "m",
            decoding,
            cache_key: key,
            seed: 3,
        }
    }

    #[test]
    fn canned_translation_marker() {
        let p = Catalog::builtin().render("mt_en2ru", None, &vars([("text", "Hello.".into())])).unwrap();
        let d = DecodingParams {
            temperature: 0.0,
            max_tokens: None,
        };
        let out = MockProvider::new(1).send(&request(&p, "k", &d)).unwrap();
        assert_eq!(out, "[mock-ru] Hello.");
    }

    #[test]
    fn same_seed_same_text() {
        let p = Catalog::builtin()
            .render("hlq_gen", None, &vars([("task", "Doubt".into()), ("definition", "d".into())]))
            .unwrap();
        let d = DecodingParams {
            temperature: 0.0,
            max_tokens: None,
        };
        let a = MockProvider::new(5).send(&request(&p, "key1", &d)).unwrap();
        let b = MockProvider::new(5).send(&request(&p, "key1", &d)).unwrap();
        let c = MockProvider::new(6).send(&request(&p, "key1", &d)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn scripted_rules_win() {
        let p = Catalog::builtin().render("mt_en2ru", None, &vars([("text", "Hello.".into())])).unwrap();
        let d = DecodingParams {
            temperature: 0.0,
            max_tokens: None,
        };
        let m = MockProvider::new(1).with_rule(ScriptRule::reply("mt_en2ru", Some("Hello"), "Привет."));
        assert_eq!(m.send(&request(&p, "k", &d)).unwrap(), "Привет.");
        let m = MockProvider::new(1).with_rule(ScriptRule::fail(Some("mt_en2ru"), None, 503));
        let err = m.send(&request(&p, "k", &d)).unwrap_err();
        assert_eq!(err.status, Some(503));
        assert!(err.retryable);
    }

    #[test]
    fn identify_ids_come_from_system() {
        let ids = question_ids("Questions:\nQ20: a?\nQ88: b?\n");
        assert_eq!(ids, ["Q20", "Q88"]);
    }
}
