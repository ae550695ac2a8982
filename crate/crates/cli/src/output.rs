//! Stdout rendering: pretty JSON by default, plain tables with `--human`.

use std::io::Write;

use anyhow::Result;
use grim_core::edit::EditOutcome;
use grim_core::model::EditSet;
use grim_core::validate::ValidationReport;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Clean,
    /// Validation errors present (exit 1).
    Invalid,
}

pub fn report_status(report: &ValidationReport, strict: bool) -> Status {
    if report.has_errors() || (strict && report.warnings().next().is_some()) {
        Status::Invalid
    } else {
        Status::Clean
    }
}

pub fn emit<T: Serialize>(value: &T) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn join<T: ToString>(items: impl IntoIterator<Item = T>) -> String {
    let v: Vec<String> = items.into_iter().map(|x| x.to_string()).collect();
    if v.is_empty() {
        "-".into()
    } else {
        v.join(",")
    }
}

pub fn print_report(report: &ValidationReport, human: bool) -> Result<()> {
    if !human {
        return emit(report);
    }
    let s = &report.stats;
    println!(
        "beats {}  longest shared run {}  common beats {}",
        s.unique_beats,
        s.max_pairwise_run,
        join(&s.computed_common_beats)
    );
    if report.violations.is_empty() {
        println!("no violations");
    }
    for v in &report.violations {
        println!("{:<8} {:<28} {}", v.severity, v.code, v.detail);
    }
    Ok(())
}

pub fn print_edit(new_version: u32, edits: &EditSet, outcome: &EditOutcome) {
    println!("version {new_version} saved after {} attempt(s)", outcome.attempts);
    for n in &edits.nodes_added {
        println!("added beat {}: {}", n.id, n.description);
    }
    for c in &outcome.edit_report.checks {
        let mark = if c.passed { "ok" } else { "FAILED" };
        println!("{:?} {mark} {}", c.check, c.problems.join("; "));
    }
    let d = &outcome.diff;
    println!("beats added    {}", join(&d.beats_added));
    println!("beats removed  {}", join(&d.beats_removed));
    println!("storylines added {}", join(&d.storylines_added));
    println!("storylines removed {}", join(&d.storylines_removed));
    println!("storylines changed {}", join(&d.storylines_changed));
    let edges = |set: &std::collections::BTreeSet<_>| {
        join(set.iter().map(|(a, b): &(_, _)| format!("{a}->{b}")))
    };
    println!("edges added    {}", edges(&d.edges_added));
    println!("edges removed  {}", edges(&d.edges_removed));
    for v in &outcome.validation.violations {
        println!("{:<8} {:<28} {}", v.severity, v.code, v.detail);
    }
}
