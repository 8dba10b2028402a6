//! Run configuration: TOML file with one table per module, overridden by
//! `PERSUASION_<SECTION>_<KEY>` environment variables, overridden by
//! `--<section>-<key>` flags.
//!
//! Relative paths coming from the file resolve against the file's directory;
//! paths from the environment or flags resolve against the working directory.

use std::path::{Path, PathBuf};

use clap::{Arg, ArgAction, ArgMatches, Command};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// Master seed: mock provider, forest and split.
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            seed: 17,
            out_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderSection {
    pub kind: String,
    pub model: String,
    pub endpoint: String,
    pub api_key_env: String,
    pub max_inflight: usize,
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
    pub temperature: f64,
    pub max_tokens: Option<u32>,
    pub request_timeout_s: u64,
    /// Defaults to `<out_dir>/cache`.
    pub cache_dir: Option<PathBuf>,
    pub mock_script: Option<PathBuf>,
    pub mock_true_rate: Option<f64>,
    /// Crash hook for resumability tests.
    pub mock_exit_after_calls: Option<u64>,
}

impl Default for ProviderSection {
    fn default() -> Self {
        ProviderSection {
            kind: "remote_chat".into(),
            model: "gpt-4".into(),
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            max_inflight: 8,
            max_attempts: 3,
            backoff_base_ms: 500,
            temperature: 0.0,
            max_tokens: None,
            request_timeout_s: 120,
            cache_dir: None,
            mock_script: None,
            mock_true_rate: None,
            mock_exit_after_calls: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HlqSection {
    /// Question repository; `builtin:published` is the bundled set.
    pub repository: Option<PathBuf>,
    pub overlay_ru: Option<PathBuf>,
    pub dedup_n: usize,
    pub dedup_threshold: f64,
    pub first_id: u32,
    pub provenance_date: String,
}

impl Default for HlqSection {
    fn default() -> Self {
        HlqSection {
            repository: None,
            overlay_ru: None,
            dedup_n: persuasion_core::hlq::DEFAULT_NGRAM,
            dedup_threshold: persuasion_core::hlq::DEFAULT_THRESHOLD,
            first_id: 1,
            provenance_date: "unrecorded".into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    pub paired: Option<PathBuf>,
    pub labeled: Option<PathBuf>,
    pub topic_map: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StagesSection {
    pub translate: bool,
    pub identify: bool,
    pub extract: bool,
    pub metrics: bool,
    pub analyze: bool,
}

impl Default for StagesSection {
    fn default() -> Self {
        StagesSection {
            translate: true,
            identify: true,
            extract: true,
            metrics: true,
            analyze: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignSection {
    pub k_anova: usize,
    pub k_rf: usize,
    /// `binary` (T=1, F=0, NA=0) or `signed` (T=1, F=-1, NA=0).
    pub encoding: String,
    pub n_trees: usize,
    /// `sqrt`, `all` or a number.
    pub max_features: String,
    pub bootstrap: bool,
    pub aggregation: String,
    pub train_fraction: f64,
    pub thresholds: Vec<i64>,
    pub pre_generation: bool,
}

impl Default for AlignSection {
    fn default() -> Self {
        AlignSection {
            k_anova: 8,
            k_rf: 8,
            encoding: "binary".into(),
            n_trees: 200,
            max_features: "sqrt".into(),
            bootstrap: true,
            aggregation: "any_true".into(),
            train_fraction: 0.8,
            thresholds: persuasion_core::align::DEFAULT_THRESHOLDS.iter().map(|&x| x as i64).collect(),
            pre_generation: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectSection {
    pub settings: Vec<String>,
    pub pre_generation: bool,
    pub confidence_threshold: Option<u8>,
    pub containment_collapse: bool,
}

impl Default for DetectSection {
    fn default() -> Self {
        DetectSection {
            settings: ["en", "ru", "en2ru", "ru2en"].map(String::from).to_vec(),
            pre_generation: false,
            confidence_threshold: None,
            containment_collapse: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    pub rbo_p: f64,
    pub rbo_kinds: Vec<String>,
    /// Share of longest articles kept for rankings; 0 disables the filter.
    pub length_fraction: f64,
    pub min_topic_count: usize,
    pub rank_kind: String,
    pub rank_settings: Vec<String>,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            rbo_p: persuasion_core::analysis::DEFAULT_RBO_P,
            rbo_kinds: ["pc", "length", "pf"].map(String::from).to_vec(),
            length_fraction: persuasion_core::analysis::DEFAULT_LENGTH_FRACTION,
            min_topic_count: persuasion_core::analysis::DEFAULT_MIN_TOPIC_COUNT,
            rank_kind: "pf".into(),
            rank_settings: ["ru", "en"].map(String::from).to_vec(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub provider: ProviderSection,
    pub hlq: HlqSection,
    pub corpus: CorpusSection,
    pub stages: StagesSection,
    pub align: AlignSection,
    pub detect: DetectSection,
    pub analysis: AnalysisSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Int,
    Float,
    Bool,
    Str,
    Path,
    StrList,
    IntList,
    OptInt,
    OptFloat,
    OptPath,
}

struct Key {
    section: &'static str,
    key: &'static str,
    kind: Kind,
}

macro_rules! keys {
    ($($section:literal . $key:literal : $kind:ident),* $(,)?) => {
        &[$(Key { section: $section, key: $key, kind: Kind::$kind }),*]
    };
}

const KEYS: &[Key] = keys![
    "run"."seed": Int,
    "run"."out_dir": Path,
    "provider"."kind": Str,
    "provider"."model": Str,
    "provider"."endpoint": Str,
    "provider"."api_key_env": Str,
    "provider"."max_inflight": Int,
    "provider"."max_attempts": Int,
    "provider"."backoff_base_ms": Int,
    "provider"."temperature": Float,
    "provider"."max_tokens": OptInt,
    "provider"."request_timeout_s": Int,
    "provider"."cache_dir": OptPath,
    "provider"."mock_script": OptPath,
    "provider"."mock_true_rate": OptFloat,
    "provider"."mock_exit_after_calls": OptInt,
    "hlq"."repository": OptPath,
    "hlq"."overlay_ru": OptPath,
    "hlq"."dedup_n": Int,
    "hlq"."dedup_threshold": Float,
    "hlq"."first_id": Int,
    "hlq"."provenance_date": Str,
    "corpus"."paired": OptPath,
    "corpus"."labeled": OptPath,
    "corpus"."topic_map": OptPath,
    "stages"."translate": Bool,
    "stages"."identify": Bool,
    "stages"."extract": Bool,
    "stages"."metrics": Bool,
    "stages"."analyze": Bool,
    "align"."k_anova": Int,
    "align"."k_rf": Int,
    "align"."encoding": Str,
    "align"."n_trees": Int,
    "align"."max_features": Str,
    "align"."bootstrap": Bool,
    "align"."aggregation": Str,
    "align"."train_fraction": Float,
    "align"."thresholds": IntList,
    "align"."pre_generation": Bool,
    "detect"."settings": StrList,
    "detect"."pre_generation": Bool,
    "detect"."confidence_threshold": OptInt,
    "detect"."containment_collapse": Bool,
    "analysis"."rbo_p": Float,
    "analysis"."rbo_kinds": StrList,
    "analysis"."length_fraction": Float,
    "analysis"."min_topic_count": Int,
    "analysis"."rank_kind": Str,
    "analysis"."rank_settings": StrList,
];

impl Key {
    fn flag(&self) -> String {
        format!("{}-{}", self.section, self.key.replace('_', "-"))
    }

    fn env(&self) -> String {
        format!("PERSUASION_{}_{}", self.section.to_uppercase(), self.key.to_uppercase())
    }

    fn is_path(&self) -> bool {
        matches!(self.kind, Kind::Path | Kind::OptPath)
    }

    /// Parse a flag or environment value. `None` means "unset" for optional
    /// keys (written as `none` or an empty string).
    fn parse(&self, raw: &str, origin: &str) -> Result<Option<Value>, CliError> {
        let bad = |what: &str| CliError::usage(format!("{origin}: expected {what} for {}.{}, got '{raw}'", self.section, self.key));
        let unset = raw.is_empty() || raw.eq_ignore_ascii_case("none");
        let int = |s: &str| s.trim().parse::<i64>().map(Value::Integer).map_err(|_| bad("an integer"));
        let float = |s: &str| s.trim().parse::<f64>().map(Value::Float).map_err(|_| bad("a number"));
        Ok(Some(match self.kind {
            Kind::OptInt | Kind::OptFloat | Kind::OptPath if unset => return Ok(None),
            Kind::Int | Kind::OptInt => int(raw)?,
            Kind::Float | Kind::OptFloat => float(raw)?,
            Kind::Bool => match raw.trim().to_ascii_lowercase().as_str() {
                "true" | "1" | "yes" | "on" => Value::Boolean(true),
                "false" | "0" | "no" | "off" => Value::Boolean(false),
                _ => return Err(bad("true or false")),
            },
            Kind::Str | Kind::Path | Kind::OptPath => Value::String(raw.to_string()),
            Kind::StrList => Value::Array(split_list(raw).map(|s| Value::String(s.to_string())).collect()),
            Kind::IntList => Value::Array(split_list(raw).map(int).collect::<Result<_, _>>()?),
        }))
    }

    fn default_text(&self, defaults: &Table) -> String {
        match defaults.get(self.section).and_then(|s| s.get(self.key)) {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Array(a)) => a
                .iter()
                .map(|v| match v {
                    Value::String(s) => s.clone(),
                    other => other.to_string(),
                })
                .collect::<Vec<_>>()
                .join(","),
            Some(v) => v.to_string(),
            None => "unset".into(),
        }
    }
}

fn split_list(s: &str) -> impl Iterator<Item = &str> {
    s.split(',').map(str::trim).filter(|x| !x.is_empty())
}

fn defaults_table() -> Table {
    Table::try_from(RunConfig::default()).expect("default config serializes")
}

/// One global `--<section>-<key>` flag per config key; help shows the
/// default and the environment variable.
pub fn config_args() -> Vec<Arg> {
    let defaults = defaults_table();
    KEYS.iter()
        .map(|k| {
            Arg::new(k.flag())
                .long(k.flag())
                .value_name("VALUE")
                .global(true)
                .action(ArgAction::Set)
                .help_heading("Configuration")
                .help(format!("[env {}] [default: {}]", k.env(), k.default_text(&defaults)))
        })
        .collect()
}

fn section_mut<'a>(table: &'a mut Table, section: &str) -> &'a mut Table {
    let v = table.entry(section).or_insert_with(|| Value::Table(Table::new()));
    match v {
        Value::Table(t) => t,
        _ => unreachable!("sections are validated as tables"),
    }
}

fn set(table: &mut Table, k: &Key, value: Option<Value>) {
    let section = section_mut(table, k.section);
    match value {
        Some(v) => {
            section.insert(k.key.to_string(), v);
        }
        None => {
            section.remove(k.key);
        }
    }
}

fn file_table(path: &Path) -> Result<Table, CliError> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("config file {}: {e}", path.display())))?;
    let mut table: Table = toml::from_str(&raw).map_err(|e| CliError::usage(format!("config file {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    for (section, body) in table.iter_mut() {
        let Value::Table(body) = body else {
            return Err(CliError::usage(format!("config file {}: '{section}' must be a table", path.display())));
        };
        for (key, value) in body.iter_mut() {
            let Some(k) = KEYS.iter().find(|k| k.section == section && k.key == key) else {
                return Err(CliError::usage(format!("config file {}: unknown key {section}.{key}", path.display())));
            };
            if let (true, Value::String(s)) = (k.is_path(), &value) {
                if !s.starts_with("builtin:") && Path::new(s).is_relative() {
                    *value = Value::String(base.join(s).display().to_string());
                }
            }
        }
    }
    Ok(table)
}

/// Resolve the effective configuration: flag > env > file > default.
pub fn resolve(
    config_file: Option<&Path>,
    matches: &ArgMatches,
    env: impl Fn(&str) -> Option<String>,
) -> Result<RunConfig, CliError> {
    let mut table = match config_file {
        Some(p) => file_table(p)?,
        None => Table::new(),
    };
    for k in KEYS {
        if let Some(raw) = env(&k.env()) {
            let v = k.parse(&raw, &format!("environment variable {}", k.env()))?;
            set(&mut table, k, v);
        }
    }
    for k in KEYS {
        if let Some(raw) = matches.get_one::<String>(&k.flag()) {
            let v = k.parse(raw, &format!("flag --{}", k.flag()))?;
            set(&mut table, k, v);
        }
    }
    let cfg: RunConfig = Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| CliError::usage(format!("configuration: {e}")))?;
    Ok(cfg)
}

impl RunConfig {
    pub fn render(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Build the root command with the config flags attached.
pub fn with_config_args(cmd: Command) -> Command {
    cmd.args(config_args())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matches(args: &[&str]) -> ArgMatches {
        with_config_args(Command::new("t")).get_matches_from(std::iter::once("t").chain(args.iter().copied()))
    }

    #[test]
    fn every_field_has_a_key() {
        let defaults = defaults_table();
        let mut n = 0;
        for (section, body) in &defaults {
            for key in body.as_table().unwrap().keys() {
                assert!(KEYS.iter().any(|k| k.section == section && k.key == key), "{section}.{key}");
                n += 1;
            }
        }
        // Optional keys that default to unset do not appear in the table.
        assert!(n <= KEYS.len());
    }

    #[test]
    fn precedence() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.toml");
        std::fs::write(&file, "[analysis]\nrbo_p = 0.5\nmin_topic_count = 3\n[corpus]\npaired = \"data/p.jsonl\"\n").unwrap();
        let env = |name: &str| match name {
            "PERSUASION_ANALYSIS_RBO_P" => Some("0.6".to_string()),
            "PERSUASION_ANALYSIS_MIN_TOPIC_COUNT" => Some("4".to_string()),
            _ => None,
        };
        let cfg = resolve(Some(&file), &matches(&["--analysis-rbo-p", "0.7"]), env).unwrap();
        assert_eq!(cfg.analysis.rbo_p, 0.7);
        assert_eq!(cfg.analysis.min_topic_count, 4);
        assert_eq!(cfg.analysis.length_fraction, 0.25);
        assert_eq!(cfg.corpus.paired, Some(dir.path().join("data/p.jsonl")));
    }

    #[test]
    fn none_unsets_and_lists_split() {
        let cfg = resolve(
            None,
            &matches(&["--detect-confidence-threshold", "none", "--detect-settings", "en, ru"]),
            |_| None,
        )
        .unwrap();
        assert_eq!(cfg.detect.confidence_threshold, None);
        assert_eq!(cfg.detect.settings, ["en", "ru"]);
    }

    #[test]
    fn unknown_file_key_is_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.toml");
        std::fs::write(&file, "[analysis]\nrbo_q = 0.5\n").unwrap();
        let err = resolve(Some(&file), &matches(&[]), |_| None).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }
}
