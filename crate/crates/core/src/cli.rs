//! `vcop` command line.
//!
//! Exit codes: 0 success, 1 corpus findings or parse errors (ingest), 2 usage,
//! input or I/O errors, 3 provider errors.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::config::AppConfig;
use crate::evaluation::{
    ablation, error_breakdown, load_dataset, load_replay, render_table, replay_reports,
    write_trial_records, ErrorStage, EvaluationError, SettingReport,
};
use crate::manual::{Corpus, Document};
use crate::pipeline::{InputSetting, PipelineError, ProcedureResponse};
use crate::situation::DisplayKind;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FINDINGS: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_PROVIDER: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "vcop", version, about = "Quick-access flight procedures")]
pub struct Cli {
    /// TOML config; defaults to the bundled corpus and rules.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse and validate manuals.
    Ingest {
        /// Manual files; the bundled manuals when omitted.
        paths: Vec<PathBuf>,
    },
    /// Interpret a panel dump and print the applicable procedure.
    Query {
        #[arg(long)]
        setting: Option<InputSetting>,
        #[arg(long)]
        panel: PathBuf,
        #[arg(long, default_value = "ENGINE_WARNING")]
        display: DisplayKind,
        #[arg(long)]
        instruction: Option<String>,
        /// Print the response as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Score a dataset across input settings, or replay recorded scores.
    Evaluate {
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Comma-separated settings; all three when omitted.
        #[arg(long, value_delimiter = ',')]
        settings: Vec<InputSetting>,
        /// Per-trial score records to aggregate instead of running the pipeline.
        #[arg(long)]
        replay: Option<PathBuf>,
        /// Write per-trial score records here.
        #[arg(long)]
        records: Option<PathBuf>,
        /// Print an error breakdown for this stage.
        #[arg(long)]
        breakdown: Option<ErrorStage>,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        port: Option<u16>,
    },
}

/// Parse arguments and run; returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                write!(err, "{text}")
            } else {
                write!(out, "{text}")
            };
            return code;
        }
    };
    match execute(cli, out) {
        Ok(code) => code,
        Err(Failure { code, message }) => {
            let _ = writeln!(err, "error: {message}");
            code
        }
    }
}

struct Failure {
    code: i32,
    message: String,
}

fn fail(code: i32, message: impl ToString) -> Failure {
    Failure {
        code,
        message: message.to_string(),
    }
}

fn load_config(path: Option<&Path>) -> Result<AppConfig, Failure> {
    match path {
        None => Ok(AppConfig::default()),
        Some(p) => AppConfig::load(p).map_err(|e| fail(EXIT_USAGE, e)),
    }
}

fn read_file(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| fail(EXIT_USAGE, format!("{}: {e}", path.display())))
}

fn execute(cli: Cli, out: &mut dyn Write) -> Result<i32, Failure> {
    let config = load_config(cli.config.as_deref())?;
    let io = |e: std::io::Error| fail(EXIT_USAGE, e);
    match cli.command {
        Command::Ingest { paths } => ingest(&paths, out),
        Command::Query {
            setting,
            panel,
            display,
            instruction,
            json,
        } => {
            let setting = setting.unwrap_or(config.default_setting);
            let panel = read_file(&panel)?;
            let engine = config.engine().map_err(|e| fail(EXIT_USAGE, e))?;
            let response = engine
                .query_from_panel(setting, &panel, display, instruction.as_deref())
                .and_then(|ctx| engine.respond(&ctx))
                .map_err(pipeline_failure)?;
            if json {
                let text = serde_json::to_string_pretty(&response).expect("response serializes");
                writeln!(out, "{text}").map_err(io)?;
            } else {
                write!(out, "{}", render_response(&response)).map_err(io)?;
            }
            Ok(EXIT_OK)
        }
        Command::Evaluate {
            dataset,
            settings,
            replay,
            records,
            breakdown,
        } => {
            let reports = match replay {
                Some(path) => {
                    replay_reports(&load_replay(&read_file(&path)?).map_err(eval_failure)?)
                        .map_err(eval_failure)?
                }
                None => {
                    let samples = match dataset.or(config.dataset_path.clone()) {
                        Some(path) => load_dataset(&read_file(&path)?).map_err(eval_failure)?,
                        None => crate::bundled::dataset(),
                    };
                    let settings = if settings.is_empty() {
                        InputSetting::ALL.to_vec()
                    } else {
                        settings
                    };
                    let engine = config.engine().map_err(|e| fail(EXIT_USAGE, e))?;
                    ablation(
                        &samples,
                        &settings,
                        engine.provider(),
                        engine.index(),
                        engine.corpus(),
                    )
                    .map_err(eval_failure)?
                }
            };
            write!(out, "{}", render_table(&reports)).map_err(io)?;
            if let Some(stage) = breakdown {
                for r in &reports {
                    writeln!(out, "\n{}", r.setting.table_label()).map_err(io)?;
                    write!(out, "{}", error_breakdown(r, stage).render()).map_err(io)?;
                }
            }
            if let Some(path) = records {
                write_records(&path, &reports)?;
            }
            Ok(EXIT_OK)
        }
        Command::Serve { port } => {
            let mut config = config;
            if let Some(port) = port {
                config.port = port;
            }
            config.validate().map_err(|e| fail(EXIT_USAGE, e))?;
            let runtime = tokio::runtime::Runtime::new().map_err(io)?;
            runtime
                .block_on(crate::service::serve(&config))
                .map_err(|e| fail(EXIT_USAGE, format!("{e:#}")))?;
            Ok(EXIT_OK)
        }
    }
}

fn write_records(path: &Path, reports: &[SettingReport]) -> Result<(), Failure> {
    std::fs::write(path, write_trial_records(reports))
        .map_err(|e| fail(EXIT_USAGE, format!("{}: {e}", path.display())))
}

fn pipeline_failure(e: PipelineError) -> Failure {
    let code = match e {
        PipelineError::Provider { .. } | PipelineError::GroundingViolation { .. } => EXIT_PROVIDER,
        _ => EXIT_USAGE,
    };
    fail(code, format!("{}: {e}", e.code()))
}

fn eval_failure(e: EvaluationError) -> Failure {
    match e {
        EvaluationError::Pipeline { source, .. } => pipeline_failure(*source),
        other => fail(EXIT_USAGE, format!("{}: {other}", other.code())),
    }
}

fn ingest(paths: &[PathBuf], out: &mut dyn Write) -> Result<i32, Failure> {
    let io = |e: std::io::Error| fail(EXIT_USAGE, e);
    let mut documents = Vec::new();
    if paths.is_empty() {
        documents = crate::bundled::corpus().documents().to_vec();
    }
    for path in paths {
        let text = read_file(path)?;
        let doc = Document::parse(text).map_err(|e| {
            fail(
                EXIT_FINDINGS,
                format!("{}: {}: {e}", path.display(), e.code()),
            )
        })?;
        documents.push(doc);
    }
    let corpus = Corpus::new(documents);
    let report = corpus.validate();
    for finding in &report.findings {
        writeln!(out, "finding: {finding}").map_err(io)?;
    }
    writeln!(
        out,
        "{} manuals, {} procedures",
        corpus.documents().len(),
        corpus.procedure_count()
    )
    .map_err(io)?;
    Ok(if report.is_empty() {
        EXIT_OK
    } else {
        EXIT_FINDINGS
    })
}

/// Human-readable response: condition, verbatim procedure, citation.
pub fn render_response(r: &ProcedureResponse) -> String {
    let mut out = format!("Condition: {}\n", r.condition);
    if r.condition.is_normal() {
        out.push_str("No anomaly detected\n");
        return out;
    }
    match &r.citation {
        None => out.push_str("No matching procedure in the corpus\n"),
        Some(c) => {
            out.push_str(&format!("Procedure: {}\n\n", r.hits[0].procedure_id));
            out.push_str(&r.excerpt);
            out.push_str(&format!(
                "\n\n{}, section {}, page {}\n",
                c.manual_id, c.section_number, c.page
            ));
            if r.hits.len() > 1 {
                let alternatives: Vec<&str> = r.hits[1..]
                    .iter()
                    .map(|h| h.procedure_id.as_str())
                    .collect();
                out.push_str(&format!("Alternatives: {}\n", alternatives.join(", ")));
            }
        }
    }
    out
}
