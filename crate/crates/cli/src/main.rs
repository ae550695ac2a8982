//! `grim`: generate, check, edit and export branching narrative projects.

mod grid;
mod output;

use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use grim_core::edit::{EditError, EditOptions};
use grim_core::gateway::{Gateway, GatewayError, Mode, ProviderConfig};
use grim_core::graph::build_render_payload;
use grim_core::model::{AddedNode, BeatId, EditSet, GenerationSpec};
use grim_core::pipeline::{generate, graphify, PipelineError};
use grim_core::prompt::{next_beat_id, TemplateSet};
use grim_core::store::{check_id, Project, Provenance, StoreError, Version, FILE_SUFFIX};
use grim_core::validate::{validate_with, ValidatorConfig};
use serde_json::json;

use output::{emit, print_report, report_status, Status};

#[derive(Debug, Parser)]
#[command(name = "grim", version, about = "Branching narrative graphs from a language model")]
struct Cli {
    /// Print tables instead of JSON.
    #[arg(long, global = true)]
    human: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate storylines and save them as version 1 of a new project.
    Generate(GenerateArgs),
    /// Re-run the validator on a stored version.
    Validate(ValidateArgs),
    /// Write the render payload of a stored version.
    Graph(GraphArgs),
    /// Apply designer edits and save the regenerated storylines as a new version.
    Edit(EditArgs),
    /// Write the stored render payload of one version.
    Export(ExportArgs),
    /// Generate one project per combination of stories, settings and constraints.
    Grid(grid::GridArgs),
    /// Start the HTTP server.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Args)]
struct ProviderArgs {
    /// live, record or replay.
    #[arg(long, default_value = "live")]
    mode: Mode,
    /// Fixture directory for record and replay.
    #[arg(long)]
    fixtures: Option<PathBuf>,
    /// Directory with generate.tmpl, graphify.tmpl and edit.tmpl overrides.
    #[arg(long)]
    templates: Option<PathBuf>,
}

impl ProviderArgs {
    fn gateway(&self) -> Result<Gateway> {
        let config = ProviderConfig {
            mode: self.mode,
            fixture_dir: self.fixtures.clone(),
            ..ProviderConfig::default()
        }
        .with_env_overrides();
        Gateway::new(config).map_err(|e| usage(e.to_string()))
    }

    fn templates(&self) -> Result<TemplateSet> {
        match &self.templates {
            Some(dir) => TemplateSet::load_dir(dir).map_err(|e| usage(e.to_string())),
            None => Ok(TemplateSet::default()),
        }
    }
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long)]
    story: String,
    #[arg(long)]
    setting: String,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    starts: u32,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    ends: u32,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    storylines: u32,
    #[command(flatten)]
    provider: ProviderArgs,
    /// Project file to create; its name (minus .grim.json) becomes the project id.
    #[arg(short = 'o', long = "output")]
    output: PathBuf,
    /// Replace an existing project file.
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    project: PathBuf,
    /// Treat warnings as errors for the exit code.
    #[arg(long)]
    strict: bool,
    /// Version to check; defaults to the latest.
    #[arg(long)]
    version: Option<u32>,
}

#[derive(Debug, Args)]
struct GraphArgs {
    project: PathBuf,
    /// Ask the model for the payload and repair it against the storylines.
    #[arg(long)]
    via_llm: bool,
    #[arg(long)]
    version: Option<u32>,
    #[command(flatten)]
    provider: ProviderArgs,
    /// Payload file; stdout when omitted.
    #[arg(short = 'o', long = "output")]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EditArgs {
    project: PathBuf,
    /// New beat description; numbered after the highest existing beat.
    #[arg(long = "add-node", value_name = "DESC")]
    add_node: Vec<String>,
    /// Transition to add, as A:B.
    #[arg(long = "add-edge", value_name = "A:B", value_parser = parse_edge)]
    add_edge: Vec<(BeatId, BeatId)>,
    /// Beat number to delete.
    #[arg(long = "del-node", value_name = "N")]
    del_node: Vec<u32>,
    /// Transition to delete, as A:B.
    #[arg(long = "del-edge", value_name = "A:B", value_parser = parse_edge)]
    del_edge: Vec<(BeatId, BeatId)>,
    /// Regeneration attempts before giving up.
    #[arg(long, default_value_t = grim_core::edit::DEFAULT_MAX_ATTEMPTS,
          value_parser = clap::value_parser!(u32).range(1..))]
    max_attempts: u32,
    #[command(flatten)]
    provider: ProviderArgs,
}

#[derive(Debug, Args)]
struct ExportArgs {
    project: PathBuf,
    #[arg(long)]
    version: Option<u32>,
    #[arg(short = 'o', long = "output")]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: IpAddr,
    /// Built web client to serve at /.
    #[arg(long = "static")]
    static_dir: Option<PathBuf>,
    /// Where project files live.
    #[arg(long, default_value = "projects")]
    projects: PathBuf,
    #[command(flatten)]
    provider: ProviderArgs,
}

fn parse_edge(s: &str) -> Result<(BeatId, BeatId), String> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| format!("expected A:B, got {s:?}"))?;
    let beat = |t: &str| {
        t.trim()
            .parse::<u32>()
            .map(BeatId)
            .map_err(|_| format!("{t:?} is not a beat number"))
    };
    Ok((beat(a)?, beat(b)?))
}

/// Bad input from the caller; exits with 2 instead of 3.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn store_err(e: StoreError) -> anyhow::Error {
    match e {
        StoreError::VersionUnknown { .. } | StoreError::InvalidId(_) => usage(e.to_string()),
        e => anyhow::Error::new(e),
    }
}

fn pipeline_err(e: PipelineError) -> anyhow::Error {
    match e {
        PipelineError::Parse { diagnostics, .. } => {
            for d in &diagnostics {
                eprintln!("{d}");
            }
            anyhow::anyhow!("PARSE: the model reply is not a usable storyline document")
        }
        PipelineError::Gateway(GatewayError::Config(m)) => usage(m),
        PipelineError::Prompt(e) => usage(e.to_string()),
        e => coded(e.code(), &e),
    }
}

/// Prefixes the machine code unless the message already starts with it.
fn coded(code: &str, e: &dyn std::fmt::Display) -> anyhow::Error {
    let msg = e.to_string();
    if msg.starts_with(code) {
        anyhow::anyhow!(msg)
    } else {
        anyhow::anyhow!("{code}: {msg}")
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("GRIM_LOG")
                .unwrap_or_else(|_| "warn".into()),
        )
        .init();
    match run(cli) {
        Ok(Status::Clean) => ExitCode::SUCCESS,
        Ok(Status::Invalid) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}

fn run(cli: Cli) -> Result<Status> {
    let human = cli.human;
    match cli.command {
        Command::Generate(a) => cmd_generate(a, human),
        Command::Validate(a) => cmd_validate(a, human),
        Command::Graph(a) => cmd_graph(a),
        Command::Edit(a) => cmd_edit(a, human),
        Command::Export(a) => cmd_export(a),
        Command::Grid(a) => grid::run(a, human),
        Command::Serve(a) => cmd_serve(a),
    }
}

/// `frankenstein.grim.json` gives the id `frankenstein`, so replayed runs
/// produce identical files.
fn project_id_for(path: &Path) -> Result<String> {
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| usage(format!("{} has no usable file name", path.display())))?;
    let id = name
        .strip_suffix(FILE_SUFFIX)
        .or_else(|| name.strip_suffix(".json"))
        .unwrap_or(name);
    check_id(id).map_err(store_err)?;
    Ok(id.to_string())
}

fn load(path: &Path) -> Result<Project> {
    Project::load(path).map_err(store_err)
}

fn pick(project: &Project, version: Option<u32>) -> Result<&Version> {
    match version {
        Some(v) => project.version(v).map_err(store_err),
        None => project
            .current()
            .ok_or_else(|| usage(format!("project {} has no versions", project.id))),
    }
}

fn validator_for(version: &Version) -> ValidatorConfig {
    match version.provenance {
        Provenance::Generated => ValidatorConfig::default(),
        Provenance::Edited { .. } => ValidatorConfig::for_edits(),
    }
}

fn cmd_generate(a: GenerateArgs, human: bool) -> Result<Status> {
    if a.output.exists() && !a.force {
        return Err(usage(format!(
            "{} exists; pass --force to replace it",
            a.output.display()
        )));
    }
    let id = project_id_for(&a.output)?;
    let spec = GenerationSpec::new(a.story, a.setting, a.starts, a.ends, a.storylines);
    let gateway = a.provider.gateway()?;
    let templates = a.provider.templates()?;
    let generation = generate(&spec, &gateway, &templates, &ValidatorConfig::default())
        .map_err(pipeline_err)?;
    for w in &generation.parse_warnings {
        eprintln!("{w}");
    }
    let mut project = Project::new(id, spec).map_err(store_err)?;
    project.push_generation(&generation);
    project.save(&a.output).map_err(store_err)?;
    print_report(&generation.validation, human)?;
    Ok(report_status(&generation.validation, false))
}

fn cmd_validate(a: ValidateArgs, human: bool) -> Result<Status> {
    let project = load(&a.project)?;
    let version = pick(&project, a.version)?;
    let report = validate_with(&version.bundle, &validator_for(version));
    print_report(&report, human)?;
    Ok(report_status(&report, a.strict))
}

fn cmd_graph(a: GraphArgs) -> Result<Status> {
    let project = load(&a.project)?;
    let version = pick(&project, a.version)?;
    let (payload, summary) = if a.via_llm {
        let gateway = a.provider.gateway()?;
        let templates = a.provider.templates()?;
        let g = graphify(&version.bundle, &gateway, &templates).map_err(pipeline_err)?;
        let summary = json!({
            "version": version.version,
            "reconcile": g.reconcile,
            "warnings": g.warnings,
            "unparsed_reason": g.unparsed_reason,
        });
        (g.payload, summary)
    } else {
        let payload = build_render_payload(&version.bundle).context("building the payload")?;
        (payload, json!({ "version": version.version }))
    };
    match a.output {
        Some(path) => {
            std::fs::write(&path, payload.to_json_text())
                .with_context(|| format!("writing {}", path.display()))?;
            emit(&summary)?;
        }
        None => print!("{}", payload.to_json_text()),
    }
    Ok(Status::Clean)
}

fn cmd_edit(a: EditArgs, human: bool) -> Result<Status> {
    let mut project = load(&a.project)?;
    let current = project
        .current()
        .ok_or_else(|| usage(format!("project {} has no versions", project.id)))?;
    let mut edits = EditSet {
        nodes_deleted: a.del_node.iter().copied().map(BeatId).collect(),
        edges_added: a.add_edge.into_iter().collect(),
        edges_deleted: a.del_edge.into_iter().collect(),
        ..EditSet::default()
    };
    for description in a.add_node {
        let id = next_beat_id(&current.bundle, &edits);
        edits.nodes_added.push(AddedNode { id, description });
    }
    let gateway = a.provider.gateway()?;
    let options = EditOptions {
        max_attempts: a.max_attempts,
        templates: a.provider.templates()?,
        ..EditOptions::default()
    };
    let (new_version, outcome) = match project.apply_edit(&edits, &gateway, &options) {
        Ok(r) => r,
        Err(EditError::Exhausted { attempts, last, .. }) => {
            eprintln!("EDIT-EXHAUSTED: no acceptable reply after {attempts} attempt(s)");
            for line in last.feedback() {
                eprintln!("  {line}");
            }
            return Ok(Status::Invalid);
        }
        Err(EditError::Prompt(e)) => return Err(usage(e.to_string())),
        Err(EditError::Gateway(GatewayError::Config(m))) => return Err(usage(m)),
        Err(e) => return Err(coded(e.code(), &e)),
    };
    project.save(&a.project).map_err(store_err)?;
    let value = json!({
        "new_version": new_version,
        "added_beats": edits.nodes_added,
        "attempts": outcome.attempts,
        "edit_report": outcome.edit_report,
        "validation": outcome.validation,
        "diff": outcome.diff,
    });
    if human {
        output::print_edit(new_version, &edits, &outcome);
    } else {
        emit(&value)?;
    }
    Ok(report_status(&outcome.validation, false))
}

fn cmd_export(a: ExportArgs) -> Result<Status> {
    let project = load(&a.project)?;
    let version = pick(&project, a.version)?;
    let text = version.payload.to_json_text();
    match a.output {
        Some(path) => std::fs::write(&path, text)
            .with_context(|| format!("writing {}", path.display()))?,
        None => print!("{text}"),
    }
    Ok(Status::Clean)
}

fn cmd_serve(a: ServeArgs) -> Result<Status> {
    let gateway = a.provider.gateway()?;
    let config = grim_server::ServerConfig {
        addr: SocketAddr::new(a.host, a.port),
        project_dir: a.projects,
        static_dir: a.static_dir,
    };
    let runtime = tokio::runtime::Runtime::new().context("starting the async runtime")?;
    runtime
        .block_on(grim_server::serve(config, Arc::new(gateway)))
        .context("server failed")?;
    Ok(Status::Clean)
}
