mod config;
mod error;
mod stages;

use std::path::PathBuf;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};

use crate::error::CliError;
use crate::stages::Ctx;

/// Persuasion detection over paired English/Russian articles.
///
/// Configuration precedence: flag > PERSUASION_<SECTION>_<KEY> environment
/// variable > config file > built-in default.
#[derive(Debug, Parser)]
#[command(name = "persuasion", version)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, env = "PERSUASION_CONFIG")]
    config: Option<PathBuf>,

    /// Shorthand for --provider-kind (mock or remote_chat).
    #[arg(long, global = true)]
    provider: Option<String>,

    /// Shorthand for --run-out-dir.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Ask the model for candidate questions for every technique.
    GenHlqs,
    /// Drop near-duplicate candidate questions (n-gram Jaccard).
    Dedup {
        /// Repository to deduplicate [default: generated questions, else hlq.repository].
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Answer candidate questions over the labeled dataset.
    Answer,
    /// Score questions (ANOVA F, forest importance) and select the union of both top-k lists.
    Select {
        /// Sets both align.k_anova and align.k_rf.
        #[arg(long)]
        k: Option<usize>,
        /// Answer matrix [default: <out>/align/answers.tsv].
        #[arg(long)]
        input: Option<PathBuf>,
        /// Precomputed feature-score CSV; skips scoring.
        #[arg(long)]
        scores: Option<PathBuf>,
    },
    /// Confidence-threshold sweep of the definition-prompting baseline.
    BaselineSweep {
        /// Replay a stored prediction dump instead of querying the model.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Machine-translate the paired corpus (en2ru, ru2en).
    Translate,
    /// Answer the active questions for every paragraph.
    Identify,
    /// Extract persuasive spans for every True (paragraph, question) cell.
    Extract,
    /// Persuasive word counts and frequencies per article.
    Metrics,
    /// Rank articles per language.
    Rank,
    /// Mean NPF per Wikidata P31 topic.
    Topics,
    /// Subjects whose ru and en PF differ most.
    Disagreement,
    /// Rank-biased overlap between settings.
    Rbo,
    /// rank, disagreement, rbo and topics.
    Report,
    /// translate, identify, extract, metrics and report, in that order.
    RunAll,
}

impl Cmd {
    fn name(&self) -> &'static str {
        match self {
            Cmd::GenHlqs => "gen-hlqs",
            Cmd::Dedup { .. } => "dedup",
            Cmd::Answer => "answer",
            Cmd::Select { .. } => "select",
            Cmd::BaselineSweep { .. } => "baseline-sweep",
            Cmd::Translate => "translate",
            Cmd::Identify => "identify",
            Cmd::Extract => "extract",
            Cmd::Metrics => "metrics",
            Cmd::Rank => "rank",
            Cmd::Topics => "topics",
            Cmd::Disagreement => "disagreement",
            Cmd::Rbo => "rbo",
            Cmd::Report => "report",
            Cmd::RunAll => "run-all",
        }
    }
}

fn run(cli: &Cli, matches: &clap::ArgMatches) -> Result<(), CliError> {
    let sub = matches.subcommand().map_or(matches, |(_, m)| m);
    let mut cfg = config::resolve(cli.config.as_deref(), sub, |k| std::env::var(k).ok())?;
    if let Some(kind) = &cli.provider {
        cfg.provider.kind = kind.clone();
    }
    if let Some(out) = &cli.out {
        cfg.run.out_dir = out.clone();
    }
    let ctx = Ctx::new(cfg);
    ctx.echo_config()?;
    let result = match &cli.command {
        Cmd::GenHlqs => stages::gen_hlqs(&ctx),
        Cmd::Dedup { input } => stages::dedup(&ctx, input.as_deref()),
        Cmd::Answer => stages::answer(&ctx),
        Cmd::Select { k, input, scores } => stages::select(
            &ctx,
            stages::SelectArgs {
                k: *k,
                input: input.as_deref(),
                scores: scores.as_deref(),
            },
        ),
        Cmd::BaselineSweep { dump } => stages::baseline_sweep(&ctx, dump.as_deref()),
        Cmd::Translate => stages::translate(&ctx),
        Cmd::Identify => stages::identify(&ctx),
        Cmd::Extract => stages::extract(&ctx),
        Cmd::Metrics => stages::metrics(&ctx),
        Cmd::Rank => stages::rank(&ctx),
        Cmd::Topics => stages::topics(&ctx),
        Cmd::Disagreement => stages::disagreement(&ctx),
        Cmd::Rbo => stages::rbo(&ctx),
        Cmd::Report => stages::report(&ctx),
        Cmd::RunAll => stages::run_all(&ctx),
    };
    if let Some(line) = ctx.gateway_line() {
        println!("{line}");
    }
    result
}

fn main() {
    let cmd = config::with_config_args(Cli::command());
    let matches = match cmd.try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                std::process::exit(0);
            }
            let _ = e.print();
            let text = e.to_string();
            let first = text.lines().next().unwrap_or_default();
            let err = CliError::usage(first.strip_prefix("error: ").unwrap_or(first));
            eprintln!("{}", err.summary(""));
            std::process::exit(err.exit_code());
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let err = CliError::usage(e.to_string());
            eprintln!("{}", err.summary(""));
            std::process::exit(err.exit_code());
        }
    };

    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match run(&cli, &matches) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            eprintln!("{}", e.summary(cli.command.name()));
            std::process::exit(e.exit_code());
        }
    }
}
