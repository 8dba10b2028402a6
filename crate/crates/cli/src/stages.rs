//! One function per subcommand. Every stage reads its inputs from the
//! configured files or from upstream artifacts under the output directory and
//! writes its own artifacts there.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use persuasion_core::align::{
    self, Aggregation, AnswerMatrix, Encoding, FeatureScore, ForestParams, MaxFeatures,
};
use persuasion_core::analysis::{self, ScoreKind};
use persuasion_core::corpus::{self, ArticlePair, Setting};
use persuasion_core::detect::{self, DetectOptions};
use persuasion_core::gateway::mock::MockScript;
use persuasion_core::gateway::{Gateway, MockProvider, ProviderConfig, ProviderKind, RetryPolicy};
use persuasion_core::hlq::{self, DedupDecision, Hlq, HlqRepository, Provenance, RussianOverlay};
use persuasion_core::io::{fixed6, write_atomic};
use persuasion_core::metrics;
use persuasion_core::Technique;

use crate::config::RunConfig;
use crate::error::CliError;

pub const EFFECTIVE_CONFIG: &str = "effective_config.toml";

pub mod paths {
    pub const GENERATED: &str = "hlqs/generated.toml";
    pub const GENERATION_FAILURES: &str = "hlqs/generation_failures.txt";
    pub const DEDUPED: &str = "hlqs/deduped.toml";
    pub const DEDUP_REPORT: &str = "hlqs/dedup_report.csv";
    pub const SELECTED: &str = "hlqs/selected.toml";
    pub const OVERLAY_RU: &str = "hlqs/overlay_ru.toml";
    pub const ANSWERS: &str = "align/answers.tsv";
    pub const ANSWER_STATS: &str = "align/answer_stats.json";
    pub const FEATURE_SCORES: &str = "align/feature_scores.csv";
    pub const SELECTION: &str = "align/selection.json";
    pub const RULE_EVALUATION: &str = "align/rule_evaluation.json";
    pub const PREDICTIONS: &str = "baseline/predictions.tsv";
    pub const SWEEP: &str = "baseline/sweep.csv";
    pub const TRANSLATED: &str = "corpus/translated.jsonl";
    pub const TRANSLATION_FAILURES: &str = "corpus/translation_failures.txt";
    pub const DETECT_DIR: &str = "detect";
    pub const RUN_STATS: &str = "detect/run_stats.json";
    pub const METRICS: &str = "metrics/articles.csv";
    pub const TOPICS: &str = "analysis/topics.csv";
    pub const TOPICS_UNMAPPED: &str = "analysis/topics_unmapped.txt";
    pub const DISAGREEMENT: &str = "analysis/disagreement.csv";
    pub const RBO: &str = "analysis/rbo.csv";
}

pub struct Ctx {
    pub cfg: RunConfig,
    gateway: OnceLock<Gateway>,
}

impl Ctx {
    pub fn new(cfg: RunConfig) -> Ctx {
        Ctx {
            cfg,
            gateway: OnceLock::new(),
        }
    }

    pub fn out(&self, rel: &str) -> PathBuf {
        self.cfg.run.out_dir.join(rel)
    }

    fn write(&self, rel: &str, body: &str) -> Result<PathBuf, CliError> {
        let path = self.out(rel);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| CliError::data(format!("{}: {e}", dir.display())))?;
        }
        write_atomic(&path, body.as_bytes()).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        println!("wrote {}", path.display());
        Ok(path)
    }

    pub fn echo_config(&self) -> Result<(), CliError> {
        self.write(EFFECTIVE_CONFIG, &self.cfg.render()).map(|_| ())
    }

    pub fn gateway(&self) -> Result<&Gateway, CliError> {
        if let Some(g) = self.gateway.get() {
            return Ok(g);
        }
        let g = build_gateway(&self.cfg)?;
        Ok(self.gateway.get_or_init(|| g))
    }

    /// Counters of the gateway, if this command used one.
    pub fn gateway_line(&self) -> Option<String> {
        self.gateway.get().map(|g| {
            let s = g.stats();
            format!(
                "gateway: provider_calls={} cache_hits={} failures={}",
                s.provider_calls, s.cache_hits, s.failures
            )
        })
    }

    fn require_file(&self, path: Option<&Path>, what: &str, key: &str) -> Result<PathBuf, CliError> {
        let p = path.ok_or_else(|| CliError::missing(what, &format!("set {key}")))?;
        if !p.exists() && !p.as_os_str().to_string_lossy().starts_with("builtin:") {
            return Err(CliError::missing(what, &format!("{} does not exist", p.display())));
        }
        Ok(p.to_path_buf())
    }

    fn require_artifact(&self, rel: &str, what: &str, producer: &str) -> Result<PathBuf, CliError> {
        let p = self.out(rel);
        if !p.exists() {
            return Err(CliError::missing(what, &format!("{} not found; run `{producer}` first", p.display())));
        }
        Ok(p)
    }

    fn repository(&self) -> Result<HlqRepository, CliError> {
        let path = self.require_file(self.cfg.hlq.repository.as_deref(), "HLQ repository", "hlq.repository")?;
        let mut repo = HlqRepository::load(&path)?;
        if let Some(overlay) = &self.cfg.hlq.overlay_ru {
            let overlay = self.require_file(Some(overlay), "Russian overlay", "hlq.overlay_ru")?;
            RussianOverlay::load(&overlay)?.apply(&mut repo)?;
        }
        Ok(repo)
    }

    /// Translated corpus when the translate stage has run, else the input.
    fn detection_corpus(&self) -> Result<Vec<ArticlePair>, CliError> {
        let translated = self.out(paths::TRANSLATED);
        let path = if translated.exists() {
            translated
        } else {
            self.require_file(self.cfg.corpus.paired.as_deref(), "paired corpus", "corpus.paired")?
        };
        let loaded = corpus::load_paired_corpus(&path)?;
        for w in &loaded.warnings {
            log::warn!("{w}");
        }
        Ok(loaded.pairs)
    }

    fn detect_options(&self) -> Result<DetectOptions, CliError> {
        let d = &self.cfg.detect;
        let mut settings = Vec::new();
        for s in &d.settings {
            settings.push(s.parse::<Setting>().map_err(|e| CliError::usage(format!("detect.settings: {e}")))?);
        }
        settings.sort();
        settings.dedup();
        if settings.is_empty() {
            return Err(CliError::usage("detect.settings is empty"));
        }
        if d.confidence_threshold.is_some_and(|t| t > 100) {
            return Err(CliError::usage("detect.confidence_threshold must be at most 100"));
        }
        Ok(DetectOptions {
            settings,
            pre_generation: d.pre_generation,
            confidence_threshold: d.confidence_threshold,
            containment_collapse: d.containment_collapse,
        })
    }

    fn encoding(&self) -> Result<Encoding, CliError> {
        match self.cfg.align.encoding.as_str() {
            "binary" => Ok(Encoding::Binary),
            "signed" => Ok(Encoding::Signed),
            other => Err(CliError::usage(format!("align.encoding: unknown encoding '{other}'"))),
        }
    }

    fn forest_params(&self) -> Result<ForestParams, CliError> {
        let a = &self.cfg.align;
        let max_features = match a.max_features.as_str() {
            "sqrt" => MaxFeatures::Sqrt,
            "all" => MaxFeatures::All,
            n => MaxFeatures::Count(
                n.parse()
                    .map_err(|_| CliError::usage(format!("align.max_features: expected sqrt, all or a number, got '{n}'")))?,
            ),
        };
        Ok(ForestParams {
            n_trees: a.n_trees,
            max_features,
            bootstrap: a.bootstrap,
            seed: self.cfg.run.seed,
            ..ForestParams::default()
        })
    }

    fn metrics_table(&self) -> Result<metrics::MetricsTable, CliError> {
        let p = self.require_artifact(paths::METRICS, "metrics table", "metrics")?;
        Ok(metrics::load_metrics(&p)?)
    }
}

fn build_gateway(cfg: &RunConfig) -> Result<Gateway, CliError> {
    let p = &cfg.provider;
    let kind = match p.kind.as_str() {
        "mock" => ProviderKind::Mock,
        "remote_chat" | "remote" => ProviderKind::RemoteChat,
        other => return Err(CliError::usage(format!("provider.kind: unknown provider '{other}' (mock or remote_chat)"))),
    };
    let config = ProviderConfig {
        kind,
        model: p.model.clone(),
        endpoint: p.endpoint.clone(),
        api_key_env: p.api_key_env.clone(),
        max_inflight: p.max_inflight,
        retry: RetryPolicy {
            max_attempts: p.max_attempts,
            backoff_base_ms: p.backoff_base_ms,
        },
        temperature: p.temperature,
        max_tokens: p.max_tokens,
        seed: cfg.run.seed,
        cache_dir: Some(p.cache_dir.clone().unwrap_or_else(|| cfg.run.out_dir.join("cache"))),
        request_timeout_s: p.request_timeout_s,
    };
    match kind {
        ProviderKind::Mock => {
            let mut mock = MockProvider::new(cfg.run.seed).with_exit_after_calls(p.mock_exit_after_calls);
            if let Some(script) = &p.mock_script {
                mock = mock.with_script(MockScript::load(script)?);
            }
            if let Some(rate) = p.mock_true_rate {
                mock = mock.with_true_rate(rate);
            }
            Ok(Gateway::with_provider(config, Arc::new(mock))?)
        }
        ProviderKind::RemoteChat => Ok(Gateway::new(config)?),
    }
}

fn lines(items: impl IntoIterator<Item = String>) -> String {
    items.into_iter().map(|s| s + "\n").collect()
}

fn json(v: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(v).expect("serializes") + "\n"
}

pub fn gen_hlqs(ctx: &Ctx) -> Result<(), CliError> {
    let gw = ctx.gateway()?;
    let techniques: Vec<Option<Technique>> = Technique::ALL.iter().copied().map(Some).chain([None]).collect();
    let (questions, failed) = hlq::generate_all(gw, &techniques, ctx.cfg.hlq.first_id)?;
    println!("gen-hlqs: {} questions, {} techniques without parseable reply", questions.len(), failed.len());
    let repo = HlqRepository {
        provenance: Provenance {
            model: gw.config().model.clone(),
            date: ctx.cfg.hlq.provenance_date.clone(),
            seed: ctx.cfg.run.seed,
            note: format!("generated for {} techniques", techniques.len()),
        },
        questions,
    };
    ctx.write(paths::GENERATED, &repo.render())?;
    ctx.write(
        paths::GENERATION_FAILURES,
        &lines(failed.iter().map(|(t, _)| t.map_or(persuasion_core::technique::NONE_NAME, |t| t.name()).to_string())),
    )?;
    Ok(())
}

/// Generated questions if `gen-hlqs` has run, else the configured repository.
fn candidate_source(ctx: &Ctx) -> Result<PathBuf, CliError> {
    let generated = ctx.out(paths::GENERATED);
    if generated.exists() {
        return Ok(generated);
    }
    ctx.require_file(ctx.cfg.hlq.repository.as_deref(), "candidate questions", "hlq.repository or run `gen-hlqs`")
}

pub fn dedup(ctx: &Ctx, input: Option<&Path>) -> Result<(), CliError> {
    let input = match input {
        Some(p) => ctx.require_file(Some(p), "candidate questions", "--input")?,
        None => candidate_source(ctx)?,
    };
    let repo = HlqRepository::load(&input)?;
    let (n, t) = (ctx.cfg.hlq.dedup_n, ctx.cfg.hlq.dedup_threshold);
    let texts: Vec<&str> = repo.questions.iter().map(|q| q.text_en.as_str()).collect();
    let decisions = hlq::dedup_decisions(&texts, n, t)?;
    let mut report = String::from("question_id,decision,dropped_by,similarity\n");
    let mut kept = Vec::new();
    for (q, d) in repo.questions.iter().zip(&decisions) {
        match d {
            DedupDecision::Kept => {
                kept.push(q.clone());
                let _ = writeln!(report, "{},kept,,", q.id);
            }
            DedupDecision::Dropped { by, similarity } => {
                let _ = writeln!(report, "{},dropped,{},{}", q.id, repo.questions[*by].id, fixed6(*similarity));
            }
        }
    }
    println!("dedup: kept {} of {} (n={n}, threshold={t})", kept.len(), repo.questions.len());
    let out = HlqRepository {
        provenance: repo.provenance.clone(),
        questions: kept,
    };
    ctx.write(paths::DEDUPED, &out.render())?;
    ctx.write(paths::DEDUP_REPORT, &report)?;
    Ok(())
}

/// Questions to answer over labeled data: deduplicated candidates when
/// available, else the configured repository.
fn question_source(ctx: &Ctx) -> Result<PathBuf, CliError> {
    let deduped = ctx.out(paths::DEDUPED);
    if deduped.exists() {
        return Ok(deduped);
    }
    ctx.require_file(ctx.cfg.hlq.repository.as_deref(), "HLQ repository", "hlq.repository or run `dedup`")
}

/// Group questions by source technique, keeping first-seen order.
fn technique_groups(questions: &[Hlq]) -> Vec<Vec<Hlq>> {
    let mut groups: Vec<(Option<Technique>, Vec<Hlq>)> = Vec::new();
    for q in questions {
        match groups.iter_mut().find(|(t, _)| *t == q.source_technique) {
            Some((_, g)) => g.push(q.clone()),
            None => groups.push((q.source_technique, vec![q.clone()])),
        }
    }
    groups.into_iter().map(|(_, g)| g).collect()
}

pub fn answer(ctx: &Ctx) -> Result<(), CliError> {
    let labeled = ctx.require_file(ctx.cfg.corpus.labeled.as_deref(), "labeled dataset", "corpus.labeled")?;
    let source = question_source(ctx)?;
    let contexts = corpus::load_labeled_dataset(&labeled)?;
    let repo = HlqRepository::load(&source)?;
    let gw = ctx.gateway()?;
    let (matrix, stats) = align::answer_hlqs_batched(gw, &contexts, &technique_groups(&repo.questions), ctx.cfg.align.pre_generation)?;
    println!(
        "answer: {} contexts x {} questions, {} prompts, {} failed, {} unparseable",
        matrix.context_ids.len(),
        matrix.question_ids.len(),
        stats.prompts,
        stats.failed_requests,
        stats.unparseable
    );
    ctx.write(paths::ANSWERS, &matrix.render())?;
    ctx.write(
        paths::ANSWER_STATS,
        &json(&serde_json::json!({
            "prompts": stats.prompts,
            "failed_requests": stats.failed_requests,
            "unparseable": stats.unparseable,
        })),
    )?;
    Ok(())
}

pub struct SelectArgs<'a> {
    pub k: Option<usize>,
    pub input: Option<&'a Path>,
    pub scores: Option<&'a Path>,
}

pub fn select(ctx: &Ctx, args: SelectArgs<'_>) -> Result<(), CliError> {
    let (k_anova, k_rf) = match args.k {
        Some(k) => (k, k),
        None => (ctx.cfg.align.k_anova, ctx.cfg.align.k_rf),
    };
    let matrix_path = match (args.input, args.scores) {
        (Some(p), _) => Some(ctx.require_file(Some(p), "answer matrix", "--input")?),
        (None, Some(_)) => None,
        (None, None) => Some(ctx.require_artifact(paths::ANSWERS, "answer matrix", "answer")?),
    };
    let matrix = matrix_path.as_deref().map(AnswerMatrix::load).transpose()?;
    let encoding = ctx.encoding()?;
    let params = ctx.forest_params()?;

    let scores: Vec<FeatureScore> = match args.scores {
        Some(p) => {
            let p = ctx.require_file(Some(p), "feature scores", "--scores")?;
            let raw = std::fs::read_to_string(&p)?;
            align::parse_feature_scores(&raw)?
        }
        None => {
            let m = matrix.as_ref().expect("matrix loaded when no scores are given");
            align::feature_scores(m, encoding, &params)?
        }
    };
    ctx.write(paths::FEATURE_SCORES, &align::render_feature_scores(&scores))?;
    let selection = align::select_top_union(&scores, k_anova, k_rf, ctx.cfg.run.seed)?;
    let ordered = selection.ordered();
    println!("select: {} questions from top {k_anova} ANOVA + top {k_rf} forest: {}", ordered.len(), ordered.join(" "));
    ctx.write(
        paths::SELECTION,
        &json(&serde_json::json!({
            "selected": ordered,
            "k_anova": k_anova,
            "k_rf": k_rf,
            "seed": selection.seed,
        })),
    )?;

    if let Some(m) = matrix.as_ref().filter(|m| m.has_gold()) {
        let restricted = m.restrict(&ordered);
        let mut evals = serde_json::Map::new();
        for rule in [Aggregation::AnyTrue, Aggregation::TrainedClassifier] {
            let name = serde_json::to_value(rule).expect("serializes");
            let name = name.as_str().unwrap_or("rule").to_string();
            let v = match align::evaluate_rule(&restricted, rule, encoding, &params, ctx.cfg.align.train_fraction) {
                Ok(e) => serde_json::to_value(e).expect("serializes"),
                Err(e) => serde_json::json!({ "error": e.to_string() }),
            };
            evals.insert(name, v);
        }
        ctx.write(paths::RULE_EVALUATION, &json(&evals))?;
    }

    // Mark the selection active in the question repository, translating
    // selected questions that lack Russian text.
    let source = question_source(ctx).ok();
    if let Some(source) = source {
        let mut repo = HlqRepository::load(&source)?;
        let wanted: BTreeSet<String> = ordered.iter().cloned().collect();
        if !wanted.iter().all(|id| repo.get(id).is_some()) {
            log::warn!("selected ids not all in {}; repository not updated", source.display());
            return Ok(());
        }
        repo.set_active(&wanted);
        let existing = match &ctx.cfg.hlq.overlay_ru {
            Some(p) if p.exists() => RussianOverlay::load(p)?,
            _ => RussianOverlay::default(),
        };
        let active_only = HlqRepository {
            provenance: repo.provenance.clone(),
            questions: repo.questions.iter().filter(|q| q.active).cloned().collect(),
        };
        let overlay = if active_only.questions.iter().all(|q| q.text_ru.is_some()) {
            existing
        } else {
            hlq::translate_repository(ctx.gateway()?, &active_only, &existing)?
        };
        overlay.apply(&mut repo)?;
        if !overlay.entries.is_empty() {
            ctx.write(paths::OVERLAY_RU, &toml::to_string(&overlay).expect("overlay serializes"))?;
        }
        ctx.write(paths::SELECTED, &repo.render())?;
    }
    Ok(())
}

fn thresholds(ctx: &Ctx) -> Result<Vec<u8>, CliError> {
    ctx.cfg
        .align
        .thresholds
        .iter()
        .map(|&x| {
            u8::try_from(x)
                .ok()
                .filter(|x| *x <= 100)
                .ok_or_else(|| CliError::usage(format!("align.thresholds: {x} is not in 0..=100")))
        })
        .collect()
}

pub fn baseline_sweep(ctx: &Ctx, dump: Option<&Path>) -> Result<(), CliError> {
    let xs = thresholds(ctx)?;
    let rows = match dump {
        Some(p) => {
            let p = ctx.require_file(Some(p), "prediction dump", "--dump")?;
            align::parse_prediction_dump(&std::fs::read_to_string(&p)?)?
        }
        None => {
            let labeled = ctx.require_file(ctx.cfg.corpus.labeled.as_deref(), "labeled dataset", "corpus.labeled or --dump")?;
            let contexts = corpus::load_labeled_dataset(&labeled)?;
            let (rows, failed) = align::run_baseline(ctx.gateway()?, &contexts)?;
            if failed > 0 {
                log::warn!("baseline: {failed} requests failed");
            }
            ctx.write(paths::PREDICTIONS, &align::render_prediction_dump(&rows))?;
            rows
        }
    };
    let sweep = align::threshold_sweep(&rows, &xs);
    for r in &sweep.rows {
        println!("x={:>3} precision={} recall={} f1={} true_count={}", r.x, fixed6(r.precision), fixed6(r.recall), fixed6(r.f1), r.true_count);
    }
    if let Some(x) = sweep.best_x {
        println!("best threshold: {x}");
    }
    ctx.write(paths::SWEEP, &align::render_sweep(&sweep))?;
    Ok(())
}

pub fn translate(ctx: &Ctx) -> Result<(), CliError> {
    let input = ctx.require_file(ctx.cfg.corpus.paired.as_deref(), "paired corpus", "corpus.paired")?;
    let loaded = corpus::load_paired_corpus(&input)?;
    let (pairs, failures) = detect::translate_corpus(ctx.gateway()?, &loaded.pairs);
    println!("translate: {} pairs, {} failed paragraphs", pairs.len(), failures.len());
    ctx.write(paths::TRANSLATED, &corpus::render_paired_corpus(&pairs))?;
    ctx.write(paths::TRANSLATION_FAILURES, &lines(failures))?;
    Ok(())
}

pub fn identify(ctx: &Ctx) -> Result<(), CliError> {
    let repo = ctx.repository()?;
    let pairs = ctx.detection_corpus()?;
    let opts = ctx.detect_options()?;
    let active = repo.active_for_detection()?;
    let dir = ctx.out(paths::DETECT_DIR);
    std::fs::create_dir_all(&dir)?;
    let rows = detect::run_identify(ctx.gateway()?, &pairs, &active, &opts, &dir)?;
    let quarantined = rows.iter().filter(|r| r.quarantine.is_some()).count();
    println!("identify: {} paragraphs, {} quarantined", rows.len(), quarantined);
    println!("wrote {}", dir.join(detect::IDENTIFY_FILE).display());
    Ok(())
}

pub fn extract(ctx: &Ctx) -> Result<(), CliError> {
    let identify_path = ctx.require_artifact(&format!("{}/{}", paths::DETECT_DIR, detect::IDENTIFY_FILE), "identify results", "identify")?;
    let repo = ctx.repository()?;
    let pairs = ctx.detection_corpus()?;
    let opts = ctx.detect_options()?;
    let active = repo.active_for_detection()?;
    let identified = detect::load_identify(&identify_path)?;
    let dir = ctx.out(paths::DETECT_DIR);
    let pts = detect::run_extract(ctx.gateway()?, &pairs, &identified, &active, &opts, &dir)?;
    println!("extract: {} PTS rows", pts.len());
    println!("wrote {}", dir.join(detect::PTS_FILE).display());
    let stats = detect::run_stats(&identified, &pts, opts.confidence_threshold);
    for (s, st) in &stats.settings {
        println!(
            "{s}: paragraphs={} cells={} true={} skip_rate={} spans={} quarantined={}",
            st.paragraphs,
            st.cells,
            st.true_cells,
            fixed6(st.skip_rate),
            st.spans,
            st.quarantined
        );
    }
    ctx.write(paths::RUN_STATS, &json(&stats))?;
    Ok(())
}

pub fn metrics(ctx: &Ctx) -> Result<(), CliError> {
    let p = ctx.require_artifact(&format!("{}/{}", paths::DETECT_DIR, detect::PTS_FILE), "PTS store", "extract")?;
    let rows = detect::load_pts(&p)?;
    let table = metrics::compute_metrics(&rows)?;
    println!("metrics: {} articles", table.articles.len());
    ctx.write(paths::METRICS, &metrics::render_metrics(&table))?;
    Ok(())
}

fn parse_list<T: std::str::FromStr<Err = String>>(items: &[String], key: &str) -> Result<Vec<T>, CliError> {
    items
        .iter()
        .map(|s| s.parse::<T>().map_err(|e| CliError::usage(format!("{key}: {e}"))))
        .collect()
}

pub fn rank(ctx: &Ctx) -> Result<(), CliError> {
    let table = ctx.metrics_table()?;
    let a = &ctx.cfg.analysis;
    let kind: ScoreKind = a.rank_kind.parse().map_err(|e| CliError::usage(format!("analysis.rank_kind: {e}")))?;
    let fraction = (a.length_fraction > 0.0).then_some(a.length_fraction);
    for setting in parse_list::<Setting>(&a.rank_settings, "analysis.rank_settings")? {
        let all = analysis::rank_by_score(&table, setting, kind, None)?;
        ctx.write(&format!("analysis/ranking_{setting}_{kind}_all.csv"), &analysis::render_ranking(&all))?;
        let filtered = analysis::rank_by_score(&table, setting, kind, fraction)?;
        ctx.write(&format!("analysis/ranking_{setting}_{kind}.csv"), &analysis::render_ranking(&filtered))?;
        let top: Vec<&str> = filtered.ids().into_iter().take(5).collect();
        println!("rank {setting} by {kind}: {} articles, top: {}", filtered.entries.len(), top.join(", "));
    }
    Ok(())
}

pub fn topics(ctx: &Ctx) -> Result<(), CliError> {
    let map_path = ctx.require_file(ctx.cfg.corpus.topic_map.as_deref(), "topic map", "corpus.topic_map")?;
    let table = ctx.metrics_table()?;
    let map = analysis::load_topic_map(&map_path)?;
    let report = analysis::topic_aggregate(&map, &table, ctx.cfg.analysis.min_topic_count);
    println!(
        "topics: {} topics with at least {} subjects, {} unmapped subjects",
        report.topics.len(),
        ctx.cfg.analysis.min_topic_count,
        report.unmapped.len()
    );
    ctx.write(paths::TOPICS, &analysis::render_topics(&report))?;
    ctx.write(paths::TOPICS_UNMAPPED, &lines(report.unmapped.iter().cloned()))?;
    Ok(())
}

pub fn disagreement(ctx: &Ctx) -> Result<(), CliError> {
    let table = ctx.metrics_table()?;
    let report = analysis::disagreement(&table);
    println!("disagreement: {} subjects, {} skipped", report.rows.len(), report.skipped.len());
    ctx.write(paths::DISAGREEMENT, &analysis::render_disagreement(&report))?;
    Ok(())
}

pub fn rbo(ctx: &Ctx) -> Result<(), CliError> {
    let table = ctx.metrics_table()?;
    let a = &ctx.cfg.analysis;
    let kinds = parse_list::<ScoreKind>(&a.rbo_kinds, "analysis.rbo_kinds")?;
    let rows = analysis::rbo_matrix(&table, &kinds, a.rbo_p)?;
    for r in &rows {
        println!("rbo {} {}~{} = {}", r.kind, r.a, r.b, fixed6(r.rbo));
    }
    ctx.write(paths::RBO, &analysis::render_rbo(&rows))?;
    Ok(())
}

pub fn report(ctx: &Ctx) -> Result<(), CliError> {
    rank(ctx)?;
    disagreement(ctx)?;
    rbo(ctx)?;
    topics(ctx)
}

/// Stages in dependency order; a disabled stage is skipped and the next one
/// fails if it needed that stage's output.
pub fn run_all(ctx: &Ctx) -> Result<(), CliError> {
    let s = ctx.cfg.stages.clone();
    if s.translate {
        translate(ctx)?;
    }
    if s.identify {
        identify(ctx)?;
    }
    if s.extract {
        extract(ctx)?;
    }
    if s.metrics {
        metrics(ctx)?;
    }
    if s.analyze {
        report(ctx)?;
    }
    Ok(())
}
