//! Cartesian sweep over stories, settings and structural constraints.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{Context, Result};
use clap::Args;
use grim_core::gateway::Provider;
use grim_core::model::GenerationSpec;
use grim_core::pipeline::generate;
use grim_core::prompt::TemplateSet;
use grim_core::store::Project;
use grim_core::validate::ValidatorConfig;
use serde::Serialize;

use crate::output::{emit, Status};
use crate::{usage, ProviderArgs};

#[derive(Debug, Args)]
pub struct GridArgs {
    /// One story per line.
    #[arg(long)]
    stories: PathBuf,
    /// One setting per line.
    #[arg(long)]
    settings: PathBuf,
    /// One `starts endings storylines` triple per line.
    #[arg(long)]
    constraints: PathBuf,
    /// Directory for the project files and summary.json.
    #[arg(long)]
    out: PathBuf,
    /// Cells generated concurrently.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    parallel: u16,
    #[command(flatten)]
    provider: ProviderArgs,
}

#[derive(Debug, Clone, Serialize)]
pub struct Row {
    pub cell: String,
    pub story: String,
    pub setting: String,
    pub starts: u32,
    pub endings: u32,
    pub storylines: u32,
    /// `valid`, `invalid` (validator errors) or `failed` (no project written).
    pub status: &'static str,
    pub failure: Option<String>,
    pub errors: usize,
    pub warnings: usize,
    pub codes: Vec<String>,
    pub unique_beats: usize,
    pub max_pairwise_run: usize,
    pub common_beats: usize,
}

/// Non-empty lines that are not `#` comments.
fn read_list(path: &Path) -> Result<Vec<(usize, String)>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let items: Vec<(usize, String)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim().to_string()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .collect();
    if items.is_empty() {
        return Err(usage(format!("{} lists no values", path.display())));
    }
    Ok(items)
}

fn parse_constraints(path: &Path) -> Result<Vec<(u32, u32, u32)>> {
    read_list(path)?
        .into_iter()
        .map(|(line, text)| {
            let nums: Vec<u32> = text
                .split(|c: char| c.is_whitespace() || c == ',')
                .filter(|t| !t.is_empty())
                .map(str::parse)
                .collect::<Result<_, _>>()
                .map_err(|_| usage(format!("{}:{line}: expected three numbers", path.display())))?;
            match nums[..] {
                [s, e, n] if s > 0 && e > 0 && n > 0 => Ok((s, e, n)),
                _ => Err(usage(format!(
                    "{}:{line}: expected `starts endings storylines`, all positive",
                    path.display()
                ))),
            }
        })
        .collect()
}

fn slug(s: &str) -> String {
    let mut out = String::new();
    for c in s.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
        } else if !out.ends_with('-') {
            out.push('-');
        }
    }
    out.trim_matches('-').to_string()
}

pub fn cells(
    stories: &[String],
    settings: &[String],
    constraints: &[(u32, u32, u32)],
) -> Vec<(String, GenerationSpec)> {
    let mut out = Vec::new();
    for story in stories {
        for setting in settings {
            for &(s, e, n) in constraints {
                let id = format!("{}-{}-{s}-{e}-{n}", slug(story), slug(setting));
                out.push((id, GenerationSpec::new(story, setting, s, e, n)));
            }
        }
    }
    out
}

fn run_cell(
    id: &str,
    spec: &GenerationSpec,
    provider: &dyn Provider,
    templates: &TemplateSet,
    out: &Path,
) -> Row {
    let mut row = Row {
        cell: id.to_string(),
        story: spec.story.clone(),
        setting: spec.setting.clone(),
        starts: spec.n_starts,
        endings: spec.n_endings,
        storylines: spec.n_storylines,
        status: "failed",
        failure: None,
        errors: 0,
        warnings: 0,
        codes: Vec::new(),
        unique_beats: 0,
        max_pairwise_run: 0,
        common_beats: 0,
    };
    let generation = match generate(spec, provider, templates, &ValidatorConfig::default()) {
        Ok(g) => g,
        Err(e) => {
            row.failure = Some(e.code().to_string());
            return row;
        }
    };
    let saved = Project::new(id, spec.clone()).and_then(|mut p| {
        p.push_generation(&generation);
        p.save(&out.join(p.file_name()))
    });
    if let Err(e) = saved {
        row.failure = Some(e.code().to_string());
        return row;
    }
    let report = &generation.validation;
    row.errors = report.errors().count();
    row.warnings = report.warnings().count();
    row.codes = report.codes().iter().map(|c| c.to_string()).collect();
    row.unique_beats = report.stats.unique_beats;
    row.max_pairwise_run = report.stats.max_pairwise_run;
    row.common_beats = report.stats.computed_common_beats.len();
    row.status = if row.errors > 0 { "invalid" } else { "valid" };
    row
}

pub fn run(a: GridArgs, human: bool) -> Result<Status> {
    let stories: Vec<String> = read_list(&a.stories)?.into_iter().map(|(_, s)| s).collect();
    let settings: Vec<String> = read_list(&a.settings)?.into_iter().map(|(_, s)| s).collect();
    let constraints = parse_constraints(&a.constraints)?;
    let cells = cells(&stories, &settings, &constraints);
    let mut seen = BTreeSet::new();
    for (id, _) in &cells {
        if !seen.insert(id) {
            return Err(usage(format!("two grid cells share the name {id}")));
        }
    }
    let gateway = a.provider.gateway()?;
    let templates = a.provider.templates()?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;

    let next = AtomicUsize::new(0);
    let rows: Mutex<Vec<Option<Row>>> = Mutex::new(vec![None; cells.len()]);
    let workers = usize::from(a.parallel).min(cells.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some((id, spec)) = cells.get(i) else { break };
                let row = run_cell(id, spec, &gateway, &templates, &a.out);
                eprintln!("{:>4}/{} {} {}", i + 1, cells.len(), row.cell, row.status);
                rows.lock().unwrap()[i] = Some(row);
            });
        }
    });
    let rows: Vec<Row> = rows
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every cell ran"))
        .collect();

    let summary = a.out.join("summary.json");
    let text = serde_json::to_string_pretty(&rows)? + "\n";
    std::fs::write(&summary, text).with_context(|| format!("writing {}", summary.display()))?;
    if human {
        print_table(&rows);
    } else {
        emit(&rows)?;
    }

    let failed = rows.iter().filter(|r| r.status == "failed").count();
    if failed > 0 {
        anyhow::bail!("{failed} of {} cell(s) failed", rows.len());
    }
    if rows.iter().any(|r| r.status == "invalid") {
        return Ok(Status::Invalid);
    }
    Ok(Status::Clean)
}

fn print_table(rows: &[Row]) {
    println!(
        "{:<48} {:<8} {:>6} {:>8} {:>5} {:>7} {:>6}  failure",
        "cell", "status", "errors", "warnings", "beats", "maxrun", "common"
    );
    for r in rows {
        println!(
            "{:<48} {:<8} {:>6} {:>8} {:>5} {:>7} {:>6}  {}",
            r.cell,
            r.status,
            r.errors,
            r.warnings,
            r.unique_beats,
            r.max_pairwise_run,
            r.common_beats,
            r.failure.as_deref().unwrap_or("-")
        );
    }
    let count = |s: &str| rows.iter().filter(|r| r.status == s).count();
    println!(
        "{} cells: {} valid, {} invalid, {} failed",
        rows.len(),
        count("valid"),
        count("invalid"),
        count("failed")
    );
}
