//! Command-line front end. Each subcommand maps to one `cmd_*` function.
//!
//! Results are written to files and summaries to standard error. Only
//! `inspect` prints to standard output.

pub mod config;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;
use std::time::Duration;

use clap::{Parser, Subcommand};
use zsl_kep_core::corpus::{load_claims, load_store, read_predictions, write_predictions, ClaimRecord};
use zsl_kep_core::keypoints::{build_keypoint_prompt, make_keypoints, KeyPointOutcome};
use zsl_kep_core::llm_gateway::{Gateway, HttpBackend, MockBackend};
use zsl_kep_core::pipeline::{build_unified_string, run_claims, run_retrieval, QueryKind};
use zsl_kep_core::prompts::PromptTemplates;
use zsl_kep_core::scoring::{score_run, ScoreReport};
use zsl_kep_core::{Bm25Index, MeteorParams};

pub use config::{BackendKind, ConfigFlags, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
/// Some claim fell back to the placeholder report.
pub const EXIT_DEGRADED: i32 = 2;
pub const EXIT_INTERRUPTED: i32 = 130;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("knowledge store not found: {}", .0.display())]
    MissingStore(PathBuf),
    #[error("unknown claim id {claim_id} (claims file has {count} claims)")]
    UnknownClaim { claim_id: usize, count: usize },
    #[error(transparent)]
    Core(#[from] zsl_kep_core::Error),
}

#[derive(Debug, Parser)]
#[command(name = "zsl-kep", version, about = "Zero-shot key-point fact verification")]
pub struct Cli {
    /// Log more (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Verify every claim and write a predictions file.
    Run {
        /// TOML configuration file.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        flags: ConfigFlags,
        /// Print the effective configuration as TOML and exit.
        #[arg(long)]
        print_config: bool,
    },
    /// Score a predictions file against annotated claims.
    Score {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        /// Also match suffix-stripped tokens.
        #[arg(long)]
        stemming: bool,
        /// Where to write the JSON score report (default: next to --pred).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Print the intermediate artifacts for one claim.
    Inspect {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        flags: ConfigFlags,
        #[arg(long)]
        claim: usize,
        /// Skip the key point call and retrieve with the claim alone.
        #[arg(long)]
        no_llm: bool,
    },
}

/// Parses `args` and runs the selected command. Returns the process exit code.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write, cancel: &AtomicBool) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let rendered = e.render().to_string();
            let _ = if e.use_stderr() {
                write!(err, "{rendered}")
            } else {
                write!(out, "{rendered}")
            };
            return code;
        }
    };
    match dispatch(cli.command, out, err, cancel) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_ERROR
        }
    }
}

fn dispatch(command: Command, out: &mut dyn Write, err: &mut dyn Write, cancel: &AtomicBool) -> Result<i32, CliError> {
    match command {
        Command::Run {
            config,
            flags,
            print_config,
        } => {
            let config = RunConfig::resolve(config.as_deref(), &flags)?;
            if print_config {
                write!(out, "{}", config.to_toml()).map_err(stdout_error)?;
                return Ok(EXIT_OK);
            }
            Ok(cmd_run(&config, cancel, err)?.exit_code())
        }
        Command::Score {
            pred,
            gold,
            stemming,
            report,
        } => {
            cmd_score(&pred, &gold, stemming, report.as_deref(), err)?;
            Ok(EXIT_OK)
        }
        Command::Inspect {
            config,
            flags,
            claim,
            no_llm,
        } => {
            let config = RunConfig::resolve(config.as_deref(), &flags)?;
            cmd_inspect(&config, claim, no_llm, out)?;
            Ok(EXIT_OK)
        }
    }
}

fn stdout_error(e: std::io::Error) -> CliError {
    CliError::Io {
        path: PathBuf::from("<stdout>"),
        source: e,
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RunSummary {
    pub claims_total: usize,
    pub claims_processed: usize,
    pub truncated: usize,
    pub parse_fallbacks: usize,
    pub keypoint_fallbacks: usize,
    pub failures: usize,
    pub cancelled: bool,
}

impl RunSummary {
    pub fn exit_code(&self) -> i32 {
        if self.cancelled {
            EXIT_INTERRUPTED
        } else if self.failures > 0 {
            EXIT_DEGRADED
        } else {
            EXIT_OK
        }
    }
}

fn build_gateway(config: &RunConfig) -> Result<Gateway, CliError> {
    let gateway_config = config.gateway_config();
    Ok(match config.backend {
        BackendKind::Mock => {
            let path = config.mock_script_path.as_ref().expect("validated");
            Gateway::new(MockBackend::from_file(path)?, gateway_config)
        }
        BackendKind::Http => {
            let backend = HttpBackend::from_env(
                config.base_url.as_deref().expect("validated"),
                config.model_name.as_deref().expect("validated"),
                Duration::from_secs(config.request_timeout_secs),
            );
            Gateway::new(backend, gateway_config)
        }
    })
}

fn load_templates(config: &RunConfig) -> Result<PromptTemplates, CliError> {
    let templates = PromptTemplates::with_overrides(&config.prompt_overrides)?;
    templates.validate()?;
    Ok(templates)
}

fn load_claim_file(config: &RunConfig) -> Result<Vec<ClaimRecord>, CliError> {
    Ok(load_claims(config.claims_path.as_ref().expect("validated"))?)
}

/// Runs the pipeline over every claim and writes the predictions file.
///
/// When `cancel` is raised mid-run, claims already finished are still
/// written and the summary is marked cancelled.
pub fn cmd_run(config: &RunConfig, cancel: &AtomicBool, err: &mut dyn Write) -> Result<RunSummary, CliError> {
    config.validate()?;
    let output = config
        .output_path
        .as_ref()
        .ok_or_else(|| CliError::Config("`output_path` is required for run".into()))?;
    let claims = load_claim_file(config)?;
    for claim in &claims {
        let path = config.store_path(claim.claim_id);
        if !path.is_file() {
            return Err(CliError::MissingStore(path));
        }
    }
    let templates = load_templates(config)?;
    let gateway = build_gateway(config)?;
    let pipeline = config.pipeline_config();

    let outcome = run_claims(
        &gateway,
        &claims,
        |id| load_store(config.store_path(id), id),
        &pipeline,
        &templates,
        cancel,
    )?;
    write_predictions(output, &outcome.reports)?;

    let reports = &outcome.reports;
    let summary = RunSummary {
        claims_total: claims.len(),
        claims_processed: reports.len(),
        truncated: reports.iter().filter(|r| r.diagnostics.truncated).count(),
        parse_fallbacks: reports.iter().map(|r| r.diagnostics.parse_fallbacks).sum(),
        keypoint_fallbacks: reports.iter().filter(|r| r.diagnostics.keypoint_fallback.is_some()).count(),
        failures: reports.iter().filter(|r| r.diagnostics.failure.is_some()).count(),
        cancelled: outcome.cancelled,
    };
    let _ = writeln!(
        err,
        "claims processed: {}/{}\ntruncated retrievals: {}\nparse fallbacks: {}\nkey point fallbacks: {}\nfailed predictions: {}\npredictions: {}",
        summary.claims_processed,
        summary.claims_total,
        summary.truncated,
        summary.parse_fallbacks,
        summary.keypoint_fallbacks,
        summary.failures,
        output.display()
    );
    if summary.cancelled {
        let _ = writeln!(err, "interrupted: remaining claims were not processed");
    }
    Ok(summary)
}

/// Default location of the score report: `preds.json` gives `preds.scores.json`.
pub fn default_report_path(pred: &Path) -> PathBuf {
    pred.with_extension("scores.json")
}

/// Scores predictions against gold claims and writes the JSON report.
pub fn cmd_score(
    pred: &Path,
    gold: &Path,
    stemming: bool,
    report_path: Option<&Path>,
    err: &mut dyn Write,
) -> Result<ScoreReport, CliError> {
    let reports = read_predictions(pred)?;
    let gold = load_claims(gold)?;
    let report = score_run(&reports, &gold, &MeteorParams::with_stemming(stemming))?;
    let path = report_path.map_or_else(|| default_report_path(pred), Path::to_path_buf);
    std::fs::write(&path, report.to_json()).map_err(|e| CliError::Io {
        path: path.clone(),
        source: e,
    })?;
    let a = &report.aggregate;
    let _ = writeln!(
        err,
        "q_only={:.4}\nq_plus_a={:.4}\naveritec={:.4}\nscore report: {}",
        a.q_only,
        a.q_plus_a,
        a.averitec,
        path.display()
    );
    Ok(report)
}

/// Dumps the intermediate retrieval artifacts for one claim.
pub fn cmd_inspect(config: &RunConfig, claim_id: usize, no_llm: bool, out: &mut dyn Write) -> Result<(), CliError> {
    if no_llm {
        config.validate_offline()?;
    } else {
        config.validate()?;
    }
    let claims = load_claim_file(config)?;
    let claim = claims.get(claim_id).ok_or(CliError::UnknownClaim {
        claim_id,
        count: claims.len(),
    })?;
    let store_path = config.store_path(claim_id);
    if !store_path.is_file() {
        return Err(CliError::MissingStore(store_path));
    }
    let store = load_store(&store_path, claim_id)?;
    let templates = load_templates(config)?;
    let pipeline = config.pipeline_config();

    let mut text = String::new();
    let mut line = |s: String| {
        text.push_str(&s);
        text.push('\n');
    };
    line(format!("claim {claim_id}: {}", claim.text));
    line(format!(
        "store: {} passages ({} retrievable)",
        store.passage_count(),
        store.retrievable().count()
    ));

    let outcome = if no_llm {
        let (_, user) = build_keypoint_prompt(&templates, &claim.text);
        line("key points: not requested (--no-llm); the key point prompt would be:".into());
        line(user.trim_end().to_string());
        KeyPointOutcome::default()
    } else {
        let gateway = build_gateway(config)?;
        let outcome = make_keypoints(&gateway, claim_id, &claim.text, &templates, &pipeline.keypoint_generation);
        line(format!("key points ({} backend):", gateway.backend().name()));
        line(outcome.keypoints.render().trim_end().to_string());
        if let Some(reason) = &outcome.fallback {
            line(format!("key point fallback: {reason}"));
        }
        outcome
    };

    let index = Bm25Index::build(&store, pipeline.bm25);
    let groups = run_retrieval(&index, &store, &outcome.keypoints, &claim.text, &pipeline);
    line(format!(
        "groups: {} ({} key points + claim)",
        groups.len(),
        outcome.keypoints.len()
    ));
    for (i, g) in groups.iter().enumerate() {
        let kind = match g.kind {
            QueryKind::KeyPoint => "key_point",
            QueryKind::Claim => "claim",
        };
        line(format!(
            "group {}/{} {kind} cap={} docs={} query: {}",
            i + 1,
            groups.len(),
            g.cap,
            g.docs.len(),
            g.query
        ));
        for d in &g.docs {
            line(format!("  {} {:.6}", d.doc, d.score));
        }
    }
    line("unified retrieval string:".into());
    line(build_unified_string(&groups));
    out.write_all(text.as_bytes()).map_err(stdout_error)?;
    Ok(())
}
