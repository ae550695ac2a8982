//! Reader and writer for the generator's storyline document.
//!
//! The document carries, in order: an optional echo of the input options,
//! the detailed storylines (each beat with its description), `START_k` and
//! `END_k` pointer lines, the master `Beats:` list, the declared common
//! beats, and the storylines again as bare number sequences. Only the master
//! list and the numeric sequences are mandatory; the detailed section is
//! cross-checked against the sequences when present.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fmt::Write as _;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::model::{
    normalize_description, tidy_description, BeatId, EndLabel, GenerationSpec, NodeRef,
    StartLabel, StoryBundle, Storyline,
};
use crate::Severity;

pub mod codes {
    pub const SEQ_MISMATCH: &str = "SEQ-MISMATCH";
    pub const DESC_CONFLICT: &str = "DESC-CONFLICT";
    pub const DANGLING_REF: &str = "DANGLING-REF";
    pub const MISSING_SECTION: &str = "MISSING-SECTION";
    pub const MALFORMED_LINE: &str = "MALFORMED-LINE";
    // warnings
    pub const UNKNOWN_LINE: &str = "UNKNOWN-LINE";
    pub const POINTER_MISMATCH: &str = "POINTER-MISMATCH";
    pub const HEADER_MISMATCH: &str = "HEADER-MISMATCH";
    pub const MISSING_COMMON: &str = "MISSING-COMMON";
    pub const UNUSED_BEAT: &str = "UNUSED-BEAT";
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseDiagnostic {
    pub severity: Severity,
    pub code: String,
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ParseDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} line {}: {}", self.severity, self.code, self.line, self.message)
    }
}

#[derive(Debug, Clone)]
pub struct ParseOutcome {
    pub bundle: Option<StoryBundle>,
    pub diagnostics: Vec<ParseDiagnostic>,
}

impl ParseOutcome {
    pub fn errors(&self) -> impl Iterator<Item = &ParseDiagnostic> {
        self.diagnostics
            .iter()
            .filter(|d| d.severity == Severity::Error)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &ParseDiagnostic> {
        self.diagnostics
            .iter()
            .filter(|d| d.severity == Severity::Warning)
    }

    pub fn has_errors(&self) -> bool {
        self.errors().next().is_some()
    }

    pub fn into_result(self) -> Result<StoryBundle, Vec<ParseDiagnostic>> {
        match self.bundle {
            Some(b) => Ok(b),
            None => Err(self
                .diagnostics
                .into_iter()
                .filter(|d| d.severity == Severity::Error)
                .collect()),
        }
    }
}

struct Patterns {
    header: Regex,
    storyline: Regex,
    storylines_section: Regex,
    beats_section: Regex,
    beat: Regex,
    beat_prefix: Regex,
    common: Regex,
    pointer: Regex,
    points: Regex,
}

fn patterns() -> &'static Patterns {
    static P: OnceLock<Patterns> = OnceLock::new();
    P.get_or_init(|| Patterns {
        header: Regex::new(r"(?i)^(story|starts|endings|storylines|setting)\s*:\s*(.*?)\s*,?\s*$")
            .unwrap(),
        storyline: Regex::new(r"(?i)^storyline\s*(\d+)\s*[:.)-]?\s*(.*)$").unwrap(),
        storylines_section: Regex::new(r"(?i)^storylines\b").unwrap(),
        beats_section: Regex::new(r"(?i)^beats\b").unwrap(),
        beat: Regex::new(r"(?i)^beat[\s_-]*(\d+)\s*[:.)-]\s*(.*)$").unwrap(),
        beat_prefix: Regex::new(r"(?i)^beat[\s_-]*\d").unwrap(),
        common: Regex::new(r"(?i)^common\s+(?:intermediate\s+)?beats?\s*[:-]?\s*(.*)$").unwrap(),
        pointer: Regex::new(r"(?i)^(start|end)[\s_-]*(\d+)\s*:\s*(.*)$").unwrap(),
        points: Regex::new(r"(?i)points?\s+(?:to|from)\s+beat[\s_-]*(\d+)").unwrap(),
    })
}

/// Strips list bullets and markdown emphasis around the line's label.
fn clean_line(raw: &str) -> String {
    let mut line = raw.trim();
    line = line.trim_start_matches('#').trim_start();
    for bullet in ["- ", "* ", "• ", "+ "] {
        if let Some(rest) = line.strip_prefix(bullet) {
            line = rest.trim_start();
            break;
        }
    }
    match line.find(':') {
        Some(pos) if line.starts_with('*') || line[..pos].contains('*') => {
            let label: String = line[..pos].chars().filter(|c| *c != '*').collect();
            let rest = line[pos + 1..].trim_start_matches('*');
            format!("{}:{}", label.trim(), rest)
        }
        _ => line.trim_matches('*').trim().to_string(),
    }
}

/// Accepts `7`, `Beat 7`, `Beat_7`.
fn parse_beat_token(tok: &str) -> Option<BeatId> {
    let t = tok.trim().trim_end_matches('.');
    let n: u32 = match t.parse() {
        Ok(n) => n,
        Err(_) => NodeRef::parse_render_id(t)?.as_beat()?.0,
    };
    (n > 0).then_some(BeatId(n))
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Section {
    Preamble,
    StorylineBlock,
    Detailed,
    Pointers,
    Beats,
    Numeric,
}

struct NumericLine {
    line: usize,
    storyline: Storyline,
}

#[derive(Default)]
struct Detailed {
    line: usize,
    beats: Vec<(BeatId, usize)>,
}

struct Collector {
    diags: Vec<ParseDiagnostic>,
}

impl Collector {
    fn push(&mut self, severity: Severity, code: &str, line: usize, message: impl Into<String>) {
        self.diags.push(ParseDiagnostic {
            severity,
            code: code.to_string(),
            line,
            message: message.into(),
        });
    }

    fn error(&mut self, code: &str, line: usize, message: impl Into<String>) {
        self.push(Severity::Error, code, line, message);
    }

    fn warn(&mut self, code: &str, line: usize, message: impl Into<String>) {
        self.push(Severity::Warning, code, line, message);
    }
}

fn parse_numeric(rest: &str, index: u32) -> Result<Storyline, String> {
    let tokens: Vec<&str> = rest
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .collect();
    if tokens.len() < 3 {
        return Err("expected START, at least one beat, and END".into());
    }
    let start: StartLabel = tokens[0]
        .parse()
        .map_err(|_| format!("{:?} is not a START label", tokens[0]))?;
    let last = tokens[tokens.len() - 1].trim_end_matches('.');
    let end: EndLabel = last
        .parse()
        .map_err(|_| format!("{last:?} is not an END label"))?;
    let beats = tokens[1..tokens.len() - 1]
        .iter()
        .map(|t| parse_beat_token(t).ok_or_else(|| format!("{t:?} is not a beat number")))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Storyline {
        index,
        start,
        beats,
        end,
    })
}

/// Parses a storyline document. Any error diagnostic means no bundle.
pub fn parse_storyline_document(text: &str, spec: &GenerationSpec) -> ParseOutcome {
    let p = patterns();
    let mut c = Collector { diags: Vec::new() };
    let line_count = text.lines().count().max(1);

    let mut section = Section::Preamble;
    let mut header: BTreeMap<String, (String, usize)> = BTreeMap::new();
    let mut master: BTreeMap<BeatId, (String, usize)> = BTreeMap::new();
    let mut master_seen = false;
    // master-list descriptions: id -> (normalized, line)
    let mut descs: BTreeMap<BeatId, (String, usize)> = BTreeMap::new();
    // descriptions given inside detailed storylines: (id, normalized, line)
    let mut detailed_descs: Vec<(BeatId, String, usize)> = Vec::new();
    let mut detailed: BTreeMap<u32, Detailed> = BTreeMap::new();
    let mut current_detailed: Option<u32> = None;
    let mut numeric: Vec<NumericLine> = Vec::new();
    let mut common: Option<(BTreeSet<BeatId>, usize)> = None;
    let mut start_ptrs: Vec<(StartLabel, BeatId, usize)> = Vec::new();
    let mut end_ptrs: Vec<(EndLabel, BeatId, usize)> = Vec::new();

    let mut record_desc = |c: &mut Collector, id: BeatId, desc: &str, line: usize| {
        let norm = normalize_description(desc);
        match descs.get(&id) {
            Some((prev, prev_line)) if *prev != norm => c.error(
                codes::DESC_CONFLICT,
                line,
                format!("beat {id} is listed again with a different description (first on line {prev_line})"),
            ),
            Some(_) => {}
            None => {
                descs.insert(id, (norm, line));
            }
        }
    };

    for (i, raw) in text.lines().enumerate() {
        let ln = i + 1;
        let line = clean_line(raw);
        if line.is_empty() {
            continue;
        }

        if let Some(caps) = p.header.captures(&line) {
            let key = caps[1].to_ascii_lowercase();
            let value = caps[2].to_string();
            let numeric_key = matches!(key.as_str(), "starts" | "endings" | "storylines");
            if !numeric_key || value.parse::<u32>().is_ok() {
                header.insert(key, (value, ln));
                continue;
            }
            if key != "storylines" {
                c.warn(codes::UNKNOWN_LINE, ln, format!("unrecognised line: {line}"));
                continue;
            }
        }

        if let Some(caps) = p.storyline.captures(&line) {
            let Ok(index) = caps[1].parse::<u32>() else {
                c.error(codes::MALFORMED_LINE, ln, "storyline number out of range");
                continue;
            };
            let rest = caps[2].trim();
            if rest.contains(',') {
                section = Section::Numeric;
                current_detailed = None;
                match parse_numeric(rest, index) {
                    Ok(_) if numeric.iter().any(|n| n.storyline.index == index) => c.error(
                        codes::MALFORMED_LINE,
                        ln,
                        format!("storyline {index} listed twice"),
                    ),
                    Ok(storyline) => numeric.push(NumericLine {
                        line: ln,
                        storyline,
                    }),
                    Err(why) => c.error(
                        codes::MALFORMED_LINE,
                        ln,
                        format!("storyline {index}: {why}"),
                    ),
                }
            } else {
                section = Section::Detailed;
                match detailed.entry(index) {
                    std::collections::btree_map::Entry::Occupied(_) => {
                        c.error(
                            codes::MALFORMED_LINE,
                            ln,
                            format!("storyline {index} detailed twice"),
                        );
                        current_detailed = None;
                    }
                    std::collections::btree_map::Entry::Vacant(slot) => {
                        slot.insert(Detailed {
                            line: ln,
                            beats: Vec::new(),
                        });
                        current_detailed = Some(index);
                    }
                }
            }
            continue;
        }

        if p.storylines_section.is_match(&line) {
            section = Section::StorylineBlock;
            current_detailed = None;
            continue;
        }

        if let Some(caps) = p.beat.captures(&line) {
            let id = caps[1].parse::<u32>().ok().filter(|n| *n > 0).map(BeatId);
            let desc = tidy_description(&caps[2]);
            let Some(id) = id else {
                c.error(codes::MALFORMED_LINE, ln, "beat numbers start at 1");
                continue;
            };
            if desc.is_empty() {
                c.error(codes::MALFORMED_LINE, ln, format!("beat {id} has no description"));
                continue;
            }
            match section {
                Section::Beats => {
                    record_desc(&mut c, id, &desc, ln);
                    master.entry(id).or_insert((desc, ln));
                }
                Section::Detailed if current_detailed.is_some() => {
                    detailed_descs.push((id, normalize_description(&desc), ln));
                    let idx = current_detailed.unwrap();
                    detailed.get_mut(&idx).unwrap().beats.push((id, ln));
                }
                _ => c.warn(
                    codes::UNKNOWN_LINE,
                    ln,
                    format!("beat {id} outside any storyline or beat list; ignored"),
                ),
            }
            continue;
        }
        if p.beat_prefix.is_match(&line) {
            c.error(codes::MALFORMED_LINE, ln, format!("unparseable beat line: {line}"));
            continue;
        }

        if p.beats_section.is_match(&line) {
            section = Section::Beats;
            master_seen = true;
            current_detailed = None;
            continue;
        }

        if let Some(caps) = p.common.captures(&line) {
            let body = caps[1].trim().trim_end_matches('.');
            let mut set = BTreeSet::new();
            let lowered = body.to_ascii_lowercase();
            if !(body.is_empty() || lowered == "none" || lowered == "(none)") {
                let mut bad = None;
                for tok in body.split([',', ';']).flat_map(|t| t.split(" and ")) {
                    if tok.trim().is_empty() {
                        continue;
                    }
                    match parse_beat_token(tok) {
                        Some(b) => {
                            set.insert(b);
                        }
                        None => bad = Some(tok.trim().to_string()),
                    }
                }
                if let Some(tok) = bad {
                    c.error(
                        codes::MALFORMED_LINE,
                        ln,
                        format!("{tok:?} is not a beat reference"),
                    );
                    continue;
                }
            }
            common = Some((set, ln));
            current_detailed = None;
            continue;
        }

        if let Some(caps) = p.pointer.captures(&line) {
            section = Section::Pointers;
            current_detailed = None;
            let is_start = caps[1].eq_ignore_ascii_case("start");
            let k = caps[2].parse::<u32>().ok().filter(|k| *k > 0);
            let Some(k) = k else {
                c.error(codes::MALFORMED_LINE, ln, "dummy labels start at 1");
                continue;
            };
            // placeholder descriptions ("This is a dummy node...") carry no pointer
            if let Some(pc) = p.points.captures(&caps[3]) {
                match pc[1].parse::<u32>().ok().filter(|n| *n > 0) {
                    Some(b) if is_start => start_ptrs.push((StartLabel(k), BeatId(b), ln)),
                    Some(b) => end_ptrs.push((EndLabel(k), BeatId(b), ln)),
                    None => c.error(codes::MALFORMED_LINE, ln, "bad beat number in pointer"),
                }
            }
            continue;
        }

        c.warn(codes::UNKNOWN_LINE, ln, format!("unrecognised line: {line}"));
    }

    let last_line = line_count;
    if !master_seen || master.is_empty() {
        c.error(codes::MISSING_SECTION, last_line, "no \"Beats:\" list found");
    }
    if numeric.is_empty() {
        c.error(
            codes::MISSING_SECTION,
            last_line,
            "no numeric storyline sequences found",
        );
    }
    if common.is_none() {
        c.warn(
            codes::MISSING_COMMON,
            last_line,
            "no \"Common intermediate Beats:\" line; declared set left empty",
        );
    }

    // the master list is authoritative; drift inside detailed storylines
    // is reported but does not block parsing
    for (id, norm, ln) in &detailed_descs {
        if let Some((master_norm, master_line)) = descs.get(id) {
            if master_norm != norm {
                c.warn(
                    codes::DESC_CONFLICT,
                    *ln,
                    format!(
                        "beat {id} is described differently here and in the beat list (line {master_line}); the beat list wins"
                    ),
                );
            }
        }
    }
    let used: BTreeSet<BeatId> = numeric
        .iter()
        .flat_map(|n| n.storyline.beats.iter().copied())
        .collect();
    for (id, (_, ln)) in &master {
        if !numeric.is_empty() && !used.contains(id) {
            c.warn(
                codes::UNUSED_BEAT,
                *ln,
                format!("beat {id} is listed but no storyline uses it"),
            );
        }
    }

    // references must resolve against the master list
    if !master.is_empty() {
        let dangling = |c: &mut Collector, id: BeatId, ln: usize, what: &str| {
            if !master.contains_key(&id) {
                c.error(
                    codes::DANGLING_REF,
                    ln,
                    format!("{what} references beat {id}, missing from the beat list"),
                );
            }
        };
        for n in &numeric {
            for b in &n.storyline.beats {
                dangling(&mut c, *b, n.line, &format!("storyline {}", n.storyline.index));
            }
        }
        for (idx, d) in &detailed {
            for (b, ln) in &d.beats {
                dangling(&mut c, *b, *ln, &format!("detailed storyline {idx}"));
            }
        }
        for (_, b, ln) in &start_ptrs {
            dangling(&mut c, *b, *ln, "start pointer");
        }
        for (_, b, ln) in &end_ptrs {
            dangling(&mut c, *b, *ln, "end pointer");
        }
        if let Some((set, ln)) = &common {
            for b in set {
                dangling(&mut c, *b, *ln, "common beats line");
            }
        }
    }

    // detailed storylines must agree with the numeric sequences
    if !detailed.is_empty() {
        for n in &numeric {
            let idx = n.storyline.index;
            match detailed.get(&idx) {
                None => c.error(
                    codes::SEQ_MISMATCH,
                    n.line,
                    format!("storyline {idx} has a sequence but no detailed listing"),
                ),
                Some(d) => {
                    let listed: Vec<BeatId> = d.beats.iter().map(|(b, _)| *b).collect();
                    if listed != n.storyline.beats {
                        c.error(
                            codes::SEQ_MISMATCH,
                            n.line,
                            format!(
                                "storyline {idx}: sequence {} differs from detailed listing {} (line {})",
                                join_ids(&n.storyline.beats),
                                join_ids(&listed),
                                d.line
                            ),
                        );
                    }
                }
            }
        }
        for (idx, d) in &detailed {
            if !numeric.iter().any(|n| n.storyline.index == *idx) {
                c.error(
                    codes::SEQ_MISMATCH,
                    d.line,
                    format!("storyline {idx} is detailed but has no numeric sequence"),
                );
            }
        }
    }

    check_header(&mut c, &header, spec);

    if c.diags.iter().any(|d| d.severity == Severity::Error) {
        return ParseOutcome {
            bundle: None,
            diagnostics: c.diags,
        };
    }

    let mut storylines: Vec<Storyline> = numeric.into_iter().map(|n| n.storyline).collect();
    storylines.sort_by_key(|s| s.index);
    let beats: BTreeMap<BeatId, String> = master.into_iter().map(|(k, (d, _))| (k, d)).collect();
    let declared = common.map(|(s, _)| s).unwrap_or_default();
    let bundle = match StoryBundle::from_parts(
        spec.clone(),
        beats,
        storylines,
        declared,
        text.to_string(),
    ) {
        Ok(b) => b,
        Err(e) => {
            c.error(codes::MALFORMED_LINE, last_line, e.to_string());
            return ParseOutcome {
                bundle: None,
                diagnostics: c.diags,
            };
        }
    };

    for (label, beat, ln) in &start_ptrs {
        match bundle.starts.get(label) {
            Some(b) if b == beat => {}
            Some(b) => c.warn(
                codes::POINTER_MISMATCH,
                *ln,
                format!("{label} points to beat {beat} but its storylines begin at beat {b}"),
            ),
            None => c.warn(
                codes::POINTER_MISMATCH,
                *ln,
                format!("{label} is not used by any storyline"),
            ),
        }
    }
    for (label, beat, ln) in &end_ptrs {
        match bundle.ends.get(label) {
            Some(b) if b == beat => {}
            Some(b) => c.warn(
                codes::POINTER_MISMATCH,
                *ln,
                format!("{label} is pointed from beat {beat} but its storylines end at beat {b}"),
            ),
            None => c.warn(
                codes::POINTER_MISMATCH,
                *ln,
                format!("{label} is not used by any storyline"),
            ),
        }
    }

    ParseOutcome {
        bundle: Some(bundle),
        diagnostics: c.diags,
    }
}

fn check_header(c: &mut Collector, header: &BTreeMap<String, (String, usize)>, spec: &GenerationSpec) {
    let expected = [
        ("starts", spec.n_starts),
        ("endings", spec.n_endings),
        ("storylines", spec.n_storylines),
    ];
    for (key, want) in expected {
        if let Some((v, ln)) = header.get(key) {
            if v.parse::<u32>().ok() != Some(want) {
                c.warn(
                    codes::HEADER_MISMATCH,
                    *ln,
                    format!("document says {key}: {v}, requested {want}"),
                );
            }
        }
    }
}

fn join_ids(ids: &[BeatId]) -> String {
    ids.iter()
        .map(|b| b.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Writes a bundle back out in the generator's document layout.
pub fn serialize_story_bundle(bundle: &StoryBundle) -> String {
    let mut out = String::new();
    let spec = &bundle.spec;
    let _ = writeln!(out, "Story: {}", one_line(&spec.story));
    let _ = writeln!(out, "Starts: {}", spec.n_starts);
    let _ = writeln!(out, "Endings: {}", spec.n_endings);
    let _ = writeln!(out, "Storylines: {}", spec.n_storylines);
    let _ = writeln!(out, "Setting: {}", one_line(&spec.setting));
    out.push('\n');

    let _ = writeln!(out, "Storylines ({}):", bundle.storylines.len());
    for s in &bundle.storylines {
        let _ = writeln!(out, "Storyline {}:", s.index);
        for b in &s.beats {
            let _ = writeln!(out, "Beat {}: {}", b, bundle.beat(*b).unwrap_or_default());
        }
        out.push('\n');
    }

    for (label, beat) in &bundle.starts {
        let _ = writeln!(out, "{label}: Points to Beat {beat}");
    }
    for (label, beat) in &bundle.ends {
        let _ = writeln!(out, "{label}: Points from Beat {beat}");
    }
    out.push('\n');

    out.push_str("Beats:\n");
    for (id, desc) in &bundle.beats {
        let _ = writeln!(out, "Beat {id}: {desc}");
    }
    out.push('\n');

    let common = if bundle.declared_common_beats.is_empty() {
        "none".to_string()
    } else {
        bundle
            .declared_common_beats
            .iter()
            .map(|b| format!("Beat {b}"))
            .collect::<Vec<_>>()
            .join(", ")
    };
    let _ = writeln!(out, "Common intermediate Beats: {common}");
    out.push('\n');

    let _ = writeln!(out, "Storylines ({})", bundle.storylines.len());
    for s in &bundle.storylines {
        let seq = s
            .beats
            .iter()
            .map(|b| b.to_string())
            .collect::<Vec<_>>()
            .join(", ");
        let _ = writeln!(out, "Storyline {}: {}, {}, {}", s.index, s.start, seq, s.end);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> GenerationSpec {
        GenerationSpec::new("Test", "Nowhere", 1, 1, 1)
    }

    const MINIMAL: &str = "\
Storylines (1):
Storyline 1:
Beat 1: Opening.
Beat 2: Closing.

Beats:
Beat 1: Opening.
Beat 2: Closing.
Common intermediate Beats: Beat 1
Storylines (1)
Storyline 1: START_1, 1, 2, END_1
";

    fn codes_of(o: &ParseOutcome) -> Vec<&str> {
        o.errors().map(|d| d.code.as_str()).collect()
    }

    #[test]
    fn minimal_document_parses() {
        let o = parse_storyline_document(MINIMAL, &spec());
        let b = o.bundle.expect("bundle");
        assert_eq!(b.beats.len(), 2);
        assert_eq!(b.storylines, vec![Storyline::new(1, 1, [1, 2], 1)]);
        assert_eq!(b.beat(BeatId(1)), Some("Opening."));
    }

    #[test]
    fn sequence_mismatch_names_storyline() {
        let doc = MINIMAL.replace("START_1, 1, 2, END_1", "START_1, 1, END_1");
        let o = parse_storyline_document(&doc, &spec());
        assert!(o.bundle.is_none());
        let d = o.errors().next().unwrap();
        assert_eq!(d.code, codes::SEQ_MISMATCH);
        assert!(d.message.contains("storyline 1"), "{}", d.message);
    }

    #[test]
    fn conflicting_descriptions() {
        // a detailed storyline drifting from the beat list only warns
        let doc = MINIMAL.replacen("Beat 2: Closing.", "Beat 2: Something else.", 1);
        let o = parse_storyline_document(&doc, &spec());
        assert!(codes_of(&o).is_empty());
        let w = o.warnings().next().unwrap();
        assert_eq!((w.code.as_str(), w.line), (codes::DESC_CONFLICT, 4));
        assert_eq!(o.bundle.unwrap().beat(BeatId(2)), Some("Closing."));

        // the beat list contradicting itself is an error
        let doc = MINIMAL.replace(
            "Beat 2: Closing.\nCommon",
            "Beat 2: Closing.\nBeat 2: Something else.\nCommon",
        );
        let o = parse_storyline_document(&doc, &spec());
        assert_eq!(codes_of(&o), [codes::DESC_CONFLICT]);
    }

    #[test]
    fn unused_beat_warns() {
        let doc = MINIMAL.replace("Beat 2: Closing.\nCommon", "Beat 2: Closing.\nBeat 3: Spare.\nCommon");
        let o = parse_storyline_document(&doc, &spec());
        assert!(o.warnings().any(|w| w.code == codes::UNUSED_BEAT && w.message.contains("beat 3")));
        assert!(o.bundle.is_some());
    }

    #[test]
    fn whitespace_and_period_drift_is_not_a_conflict() {
        let doc = MINIMAL.replacen("Beat 2: Closing.", "Beat 2:   Closing", 1);
        assert!(parse_storyline_document(&doc, &spec()).bundle.is_some());
    }

    #[test]
    fn dangling_reference() {
        let doc = MINIMAL
            .replace("Beat 1: Opening.\nBeat 2: Closing.\nCommon", "Beat 1: Opening.\nCommon");
        let o = parse_storyline_document(&doc, &spec());
        assert!(codes_of(&o).contains(&codes::DANGLING_REF));
    }

    #[test]
    fn missing_sections() {
        let o = parse_storyline_document("Storyline 1: START_1, 1, END_1\n", &spec());
        assert_eq!(codes_of(&o), [codes::MISSING_SECTION]);
        let o = parse_storyline_document("Beats:\nBeat 1: x\n", &spec());
        assert_eq!(codes_of(&o), [codes::MISSING_SECTION]);
    }

    #[test]
    fn malformed_lines() {
        let doc = MINIMAL.replace("START_1, 1, 2, END_1", "START_1, 1, two, END_1");
        assert!(codes_of(&parse_storyline_document(&doc, &spec())).contains(&codes::MALFORMED_LINE));
        let doc = MINIMAL.replace("START_1, 1, 2, END_1", "1, 2, END_1");
        assert!(codes_of(&parse_storyline_document(&doc, &spec())).contains(&codes::MALFORMED_LINE));
        let doc = MINIMAL.replacen("Beat 1: Opening.", "Beat 0: Opening.", 1);
        assert!(codes_of(&parse_storyline_document(&doc, &spec())).contains(&codes::MALFORMED_LINE));
    }

    #[test]
    fn unknown_lines_only_warn() {
        let doc = format!("Some chatter from the model.\n{MINIMAL}\nHope this helps!\n");
        let o = parse_storyline_document(&doc, &spec());
        assert!(o.bundle.is_some());
        assert_eq!(o.warnings().filter(|d| d.code == codes::UNKNOWN_LINE).count(), 2);
    }

    #[test]
    fn markdown_decoration_is_tolerated() {
        let doc = MINIMAL
            .replace("Storyline 1:\n", "**Storyline 1:**\n")
            .replace("Beat 1: Opening.\nBeat 2: Closing.\n\nBeats", "- **Beat 1:** Opening.\n- Beat_2: Closing.\n\nBeats");
        let o = parse_storyline_document(&doc, &spec());
        assert!(o.bundle.is_some(), "{:?}", o.diagnostics);
    }

    #[test]
    fn pointer_mismatch_warns() {
        let doc = MINIMAL.replace("Beats:\n", "START_1: Points to Beat 2\nBeats:\n");
        let o = parse_storyline_document(&doc, &spec());
        assert!(o.bundle.is_some());
        assert!(o.warnings().any(|d| d.code == codes::POINTER_MISMATCH));
    }

    #[test]
    fn single_storyline_serializes_one_heading_per_section() {
        let b = parse_storyline_document(MINIMAL, &spec()).bundle.unwrap();
        let text = serialize_story_bundle(&b);
        assert_eq!(text.matches("Storyline 1:").count(), 2);
        assert_eq!(text, serialize_story_bundle(&b));
        let again = parse_storyline_document(&text, &spec()).bundle.unwrap();
        assert_eq!(again, b.with_raw_text(text));
    }

    #[test]
    fn diagnostics_stay_in_range_on_empty_input() {
        let o = parse_storyline_document("", &spec());
        assert!(o.bundle.is_none());
        assert!(o.diagnostics.iter().all(|d| d.line == 1));
    }
}
