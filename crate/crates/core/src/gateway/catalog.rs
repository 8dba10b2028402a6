//! Prompt catalog: versioned template files rendered with `{placeholder}`
//! substitution.
//!
//! A template file starts with `# key: value` metadata lines followed by
//! sections introduced by `### <name>`, where name is one of `system`,
//! `user`, `agent`, `final_user` or `prefix`. `user`/`agent` sections form the
//! few-shot exchanges in order. `{{` and `}}` render as literal braces.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use super::{ChatPrompt, GatewayError};
use crate::corpus::Language;

const BUILTIN: &[(&str, &str)] = &[
    ("baseline.en.txt", include_str!("../../prompts/v1/baseline.en.txt")),
    ("hlq_gen.en.txt", include_str!("../../prompts/v1/hlq_gen.en.txt")),
    ("identify.en.txt", include_str!("../../prompts/v1/identify.en.txt")),
    ("identify.ru.txt", include_str!("../../prompts/v1/identify.ru.txt")),
    ("extract.en.txt", include_str!("../../prompts/v1/extract.en.txt")),
    ("extract.ru.txt", include_str!("../../prompts/v1/extract.ru.txt")),
    ("mt_ru2en.en.txt", include_str!("../../prompts/v1/mt_ru2en.en.txt")),
    ("mt_en2ru.ru.txt", include_str!("../../prompts/v1/mt_en2ru.ru.txt")),
];

/// Catalog version shipped in the binary.
pub const BUILTIN_VERSION: &str = "v1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub name: String,
    pub language: Language,
    pub version: String,
    system: String,
    exchanges: Vec<(String, String)>,
    final_user: String,
    prefix: Option<String>,
}

impl Template {
    pub fn parse(source: &str) -> Result<Template, GatewayError> {
        let mut meta = BTreeMap::new();
        let mut sections: Vec<(String, Vec<&str>)> = Vec::new();
        for line in source.lines() {
            if let Some(name) = line.strip_prefix("### ") {
                sections.push((name.trim().to_string(), Vec::new()));
            } else if let Some((_, body)) = sections.last_mut() {
                body.push(line);
            } else if let Some(kv) = line.strip_prefix("# ") {
                if let Some((k, v)) = kv.split_once(':') {
                    meta.insert(k.trim().to_string(), v.trim().to_string());
                }
            } else if !line.trim().is_empty() {
                return Err(GatewayError::Template(format!("text before first section: '{line}'")));
            }
        }
        let name = meta
            .remove("template")
            .ok_or_else(|| GatewayError::Template("missing '# template:' header".into()))?;
        let language = meta
            .remove("language")
            .unwrap_or_else(|| "en".into())
            .parse::<Language>()
            .map_err(GatewayError::Template)?;
        let version = meta.remove("version").unwrap_or_else(|| "1".into());

        let mut system = None;
        let mut exchanges = Vec::new();
        let mut pending_user: Option<String> = None;
        let mut final_user = None;
        let mut prefix = None;
        for (section, body) in sections {
            let text = body.join("\n").trim_end_matches('\n').to_string();
            match section.as_str() {
                "system" => system = Some(text),
                "user" => {
                    if pending_user.replace(text).is_some() {
                        return Err(GatewayError::Template(format!("{name}: user section without agent reply")));
                    }
                }
                "agent" => {
                    let user = pending_user
                        .take()
                        .ok_or_else(|| GatewayError::Template(format!("{name}: agent section without user turn")))?;
                    exchanges.push((user, text));
                }
                "final_user" => final_user = Some(text),
                "prefix" => prefix = Some(text),
                other => return Err(GatewayError::Template(format!("{name}: unknown section '{other}'"))),
            }
        }
        if pending_user.is_some() {
            return Err(GatewayError::Template(format!("{name}: trailing user section without agent reply")));
        }
        let system = system
            .filter(|s| !s.trim().is_empty())
            .ok_or_else(|| GatewayError::Template(format!("{name}: missing system section")))?;
        let final_user = final_user.ok_or_else(|| GatewayError::Template(format!("{name}: missing final_user section")))?;
        Ok(Template {
            name,
            language,
            version,
            system,
            exchanges,
            final_user,
            prefix,
        })
    }

    /// Placeholder names referenced anywhere in the template.
    pub fn placeholders(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        let mut parts = vec![self.system.as_str(), self.final_user.as_str()];
        for (u, a) in &self.exchanges {
            parts.push(u);
            parts.push(a);
        }
        if let Some(p) = &self.prefix {
            parts.push(p);
        }
        for part in parts {
            let mut unbound = Vec::new();
            let _ = substitute(part, &BTreeMap::new(), &mut unbound);
            out.extend(unbound);
        }
        out
    }

    pub fn render(&self, vars: &BTreeMap<String, String>) -> Result<ChatPrompt, GatewayError> {
        let mut unbound = Vec::new();
        let system = substitute(&self.system, vars, &mut unbound);
        let exchanges = self
            .exchanges
            .iter()
            .map(|(u, a)| (substitute(u, vars, &mut unbound), substitute(a, vars, &mut unbound)))
            .collect();
        let final_user = substitute(&self.final_user, vars, &mut unbound);
        let prefix = self.prefix.as_ref().map(|p| substitute(p, vars, &mut unbound));
        if let Some(first) = unbound.into_iter().next() {
            return Err(GatewayError::UnboundPlaceholder(first));
        }
        Ok(ChatPrompt {
            template: self.name.clone(),
            language: self.language,
            system,
            exchanges,
            final_user,
            pre_generation_prefix: prefix,
        })
    }
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

/// Single-pass substitution: values are inserted verbatim and never
/// re-scanned for placeholders.
fn substitute(text: &str, vars: &BTreeMap<String, String>, unbound: &mut Vec<String>) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(pos) = rest.find(['{', '}']) {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        if tail.starts_with("{{") {
            out.push('{');
            rest = &tail[2..];
        } else if tail.starts_with("}}") {
            out.push('}');
            rest = &tail[2..];
        } else if tail.starts_with('{') {
            let close = tail[1..].find('}').map(|i| i + 1);
            match close {
                Some(end)
                    if end > 1
                        && tail[1..end].chars().all(is_ident_char)
                        && !tail[1..2].starts_with(|c: char| c.is_ascii_digit()) =>
                {
                    let name = &tail[1..end];
                    match vars.get(name) {
                        Some(v) => out.push_str(v),
                        None => {
                            if !unbound.iter().any(|u| u == name) {
                                unbound.push(name.to_string());
                            }
                        }
                    }
                    rest = &tail[end + 1..];
                }
                _ => {
                    out.push('{');
                    rest = &tail[1..];
                }
            }
        } else {
            out.push('}');
            rest = &tail[1..];
        }
    }
    out.push_str(rest);
    out
}

/// A set of templates keyed by (name, language).
#[derive(Debug, Clone)]
pub struct Catalog {
    templates: BTreeMap<(String, Language), Template>,
}

impl Catalog {
    /// The catalog compiled into the binary.
    pub fn builtin() -> Catalog {
        let mut templates = BTreeMap::new();
        for (file, src) in BUILTIN {
            let t = Template::parse(src).unwrap_or_else(|e| panic!("builtin template {file}: {e}"));
            templates.insert((t.name.clone(), t.language), t);
        }
        Catalog { templates }
    }

    /// Load every `*.txt` template from a directory; entries override the
    /// builtin ones with the same (name, language).
    pub fn with_overrides(dir: &Path) -> Result<Catalog, GatewayError> {
        let mut catalog = Catalog::builtin();
        let entries = fs::read_dir(dir).map_err(|e| GatewayError::Template(format!("{}: {e}", dir.display())))?;
        let mut files: Vec<_> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "txt"))
            .collect();
        files.sort();
        for file in files {
            let src = fs::read_to_string(&file).map_err(|e| GatewayError::Template(format!("{}: {e}", file.display())))?;
            let t = Template::parse(&src)?;
            catalog.templates.insert((t.name.clone(), t.language), t);
        }
        Ok(catalog)
    }

    pub fn get(&self, name: &str, language: Option<Language>) -> Result<&Template, GatewayError> {
        match language {
            Some(lang) => self
                .templates
                .get(&(name.to_string(), lang))
                .ok_or_else(|| GatewayError::UnknownTemplate(format!("{name} ({lang})"))),
            None => {
                let mut variants = self.templates.range((name.to_string(), Language::En)..=(name.to_string(), Language::Ru));
                variants
                    .next()
                    .map(|(_, t)| t)
                    .ok_or_else(|| GatewayError::UnknownTemplate(name.to_string()))
            }
        }
    }

    /// Render `name` in `language` (or its only / English variant when `None`).
    pub fn render(
        &self,
        name: &str,
        language: Option<Language>,
        vars: &BTreeMap<String, String>,
    ) -> Result<ChatPrompt, GatewayError> {
        self.get(name, language)?.render(vars)
    }

    pub fn names(&self) -> impl Iterator<Item = (&str, Language)> {
        self.templates.keys().map(|(n, l)| (n.as_str(), *l))
    }
}

/// Build a variable map from string pairs.
pub fn vars<'a>(pairs: impl IntoIterator<Item = (&'a str, String)>) -> BTreeMap<String, String> {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_parses() {
        let c = Catalog::builtin();
        assert_eq!(c.names().count(), 8);
        assert!(c.get("identify", Some(Language::Ru)).is_ok());
        assert!(c.get("identify", Some(Language::En)).is_ok());
    }

    #[test]
    fn hlq_gen_renders_task_and_definition() {
        let c = Catalog::builtin();
        let p = c
            .render(
                "hlq_gen",
                Some(Language::En),
                &vars([
                    ("task", "Loaded_Language".to_string()),
                    ("definition", "The text uses emotionally charged...".to_string()),
                ]),
            )
            .unwrap();
        assert!(p.final_user.contains("Loaded_Language"));
        assert!(p.final_user.contains("The text uses emotionally charged..."));
        assert!(p.system.contains("come up with a list of questions Y"));
        assert!(p.exchanges.is_empty());
    }

    #[test]
    fn translation_system_lines() {
        let c = Catalog::builtin();
        let p = c.render("mt_ru2en", None, &vars([("text", "Текст".to_string())])).unwrap();
        assert_eq!(p.system, "Your task is to translate into English the given Russian text.");
        assert_eq!(p.final_user, "Текст");
        let p = c.render("mt_en2ru", None, &vars([("text", "Text".to_string())])).unwrap();
        assert_eq!(p.system, "Ваша задача - перевести на русский язык данный английский текст.");
    }

    #[test]
    fn unbound_placeholder_is_named() {
        let c = Catalog::builtin();
        let err = c
            .render("hlq_gen", None, &vars([("task", "Doubt".to_string())]))
            .unwrap_err();
        assert_eq!(err.to_string(), "unbound placeholder 'definition'");
    }

    #[test]
    fn values_are_not_rescanned() {
        let c = Catalog::builtin();
        let p = c.render("mt_ru2en", None, &vars([("text", "{text} {{x}}".to_string())])).unwrap();
        assert_eq!(p.final_user, "{text} {{x}}");
    }

    #[test]
    fn brace_escapes_and_stray_braces() {
        let mut unbound = Vec::new();
        let out = substitute("{{a}} {b} {not valid} }", &vars([("b", "B".into())]), &mut unbound);
        assert_eq!(out, "{a} B {not valid} }");
        assert!(unbound.is_empty());
    }

    #[test]
    fn placeholders_listed() {
        let c = Catalog::builtin();
        let t = c.get("identify", Some(Language::En)).unwrap();
        let names: Vec<String> = t.placeholders().into_iter().collect();
        assert_eq!(names, ["example_answer", "questions", "text"]);
    }

    #[test]
    fn baseline_lists_techniques() {
        let c = Catalog::builtin();
        let p = c
            .render(
                "baseline",
                None,
                &vars([
                    ("techniques", crate::Technique::catalog_listing()),
                    ("text", "x".to_string()),
                ]),
            )
            .unwrap();
        assert!(p.system.starts_with("Your task is to assign PersuasionTech types"));
        assert!(p.system.contains("PersuasionTech has 24 possible values"));
        assert!(p.system.contains("15. Loaded_Language: The text uses emotionally charged words"));
        assert_eq!(p.exchanges.len(), 1);
    }
}
