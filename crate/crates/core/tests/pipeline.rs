mod common;

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use common::*;
use grim_core::edit::{apply_edit, verify_edit, EditCheck, EditError, EditOptions};
use grim_core::gateway::{
    prompt_digest, Completion, FixtureStore, Gateway, GatewayError, Mode, Provider,
    ProviderConfig, Transcript,
};
use grim_core::graph::parse_render_payload;
use grim_core::model::{BeatId, EditSet, NodeRef};
use grim_core::pipeline::{generate, graphify};
use grim_core::prompt::{PromptText, TemplateSet};
use grim_core::store::{Project, Provenance};
use grim_core::validate::ValidatorConfig;
use grim_core::serialize_story_bundle;

fn replay() -> Gateway {
    Gateway::new(ProviderConfig::replay(replay_dir())).unwrap()
}

/// Provider returning canned replies in order, repeating the last one.
struct Scripted {
    replies: Vec<String>,
    calls: AtomicUsize,
    prompts: Mutex<Vec<String>>,
}

impl Scripted {
    fn new(replies: &[&str]) -> Self {
        Scripted {
            replies: replies.iter().map(|s| s.to_string()).collect(),
            calls: AtomicUsize::new(0),
            prompts: Mutex::new(Vec::new()),
        }
    }
}

impl Provider for Scripted {
    fn complete(&self, prompt: &PromptText) -> Result<Completion, GatewayError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        self.prompts.lock().unwrap().push(prompt.text.clone());
        let text = self.replies[n.min(self.replies.len() - 1)].clone();
        Ok(Completion {
            transcript: Transcript {
                prompt_digest: prompt_digest(&prompt.text),
                prompt_text: prompt.text.clone(),
                response_text: text.clone(),
                model_name: "scripted".into(),
                template_version: prompt.template_version.clone(),
                timestamp: chrono::DateTime::from_timestamp(0, 0).unwrap(),
                latency_ms: 0,
            },
            text,
        })
    }
}

#[test]
fn replay_generation_frankenstein_1_2_4() {
    let g = generate(
        &frankenstein_spec(),
        &replay(),
        &TemplateSet::default(),
        &ValidatorConfig::default(),
    )
    .unwrap();
    assert_eq!(g.bundle.storylines.len(), 4);
    let ids = g.payload.node_ids();
    assert_eq!(ids.iter().filter(|i| i.starts_with("START_")).count(), 1);
    assert_eq!(ids.iter().filter(|i| i.starts_with("END_")).count(), 2);
    assert!(!g.validation.has_errors());
    assert_eq!(g.transcript.latency_ms, 0);
}

#[test]
fn replay_is_byte_stable() {
    let p = TemplateSet::default().generation_prompt(&frankenstein_spec());
    let gw = replay();
    let first = gw.complete(&p).unwrap().text;
    for _ in 0..5 {
        assert_eq!(gw.complete(&p).unwrap().text, first);
    }
}

#[test]
fn worked_edit_accepted_first_time() {
    let old = frankenstein();
    let edits = adam_edit();
    let out = apply_edit(&old, &edits, &replay(), &EditOptions::default()).unwrap();
    assert_eq!(out.attempts, 1);
    assert_eq!(out.transcripts.len(), 1);
    let s5 = out.new_bundle.storyline(5).expect("storyline 5");
    let seq: Vec<u32> = s5.beats.iter().map(|b| b.0).collect();
    assert_eq!(seq, [1, 2, 18, 19, 20, 3, 4, 21, 22, 23]);
    for c in [EditCheck::E1, EditCheck::E2, EditCheck::E3, EditCheck::E4] {
        assert!(out.edit_report.passed(c), "{c:?}");
    }
    assert!(out.diff.edges_added.contains(&(NodeRef::beat(2), NodeRef::beat(18))));
    assert_eq!(out.diff.storylines_added, [5].into());
    assert!((18..=23).all(|b| out.diff.beats_added.contains(&BeatId(b))));
    assert!(!out.validation.has_errors());
}

#[test]
fn edit_exhausts_after_k_unparseable_replies() {
    let old = frankenstein();
    let provider = Scripted::new(&["I cannot help with that."]);
    let err = apply_edit(&old, &adam_edit(), &provider, &EditOptions::default()).unwrap_err();
    match err {
        EditError::Exhausted {
            attempts,
            transcripts,
            ..
        } => {
            assert_eq!(attempts, 3);
            assert_eq!(transcripts.len(), 3);
        }
        other => panic!("unexpected {other}"),
    }
    assert_eq!(provider.calls.load(Ordering::SeqCst), 3);
    let prompts = provider.prompts.lock().unwrap();
    assert!(!prompts[0].contains("previous reply was rejected"));
    assert!(prompts[1].contains("previous reply was rejected"));
    assert!(prompts[1].contains("MISSING-SECTION"));
}

#[test]
fn edit_recovers_on_second_attempt_with_feedback() {
    let old = frankenstein();
    let good = read_fixture("frankenstein_edit_response.txt");
    // first reply ignores the requested transition entirely
    let bad = serialize_story_bundle(&old);
    let provider = Scripted::new(&[&bad, &good]);
    let out = apply_edit(&old, &adam_edit(), &provider, &EditOptions::default()).unwrap();
    assert_eq!(out.attempts, 2);
    assert_eq!(out.transcripts.len(), 2);
    let prompts = provider.prompts.lock().unwrap();
    assert!(prompts[1].contains("E1: added beat 18 is missing"), "{}", prompts[1]);
    assert!(prompts[1].contains("E3: no storyline goes directly from beat 2 to beat 18"));
}

#[test]
fn noop_edit_rejected_before_any_call() {
    let provider = Scripted::new(&["x"]);
    let err = apply_edit(&frankenstein(), &EditSet::default(), &provider, &EditOptions::default())
        .unwrap_err();
    assert_eq!(err.code(), "PRECONDITION");
    assert_eq!(provider.calls.load(Ordering::SeqCst), 0);
}

#[test]
fn verify_edit_catches_vacuous_output() {
    let old = frankenstein();
    let mut empty = old.clone();
    empty.storylines.clear();
    empty.beats.clear();
    let r = verify_edit(&old, &empty, &adam_edit());
    assert!(!r.passed(EditCheck::E1) && !r.passed(EditCheck::E3));
}

#[test]
fn renumbered_reply_is_aligned() {
    let old = frankenstein();
    let good = read_fixture("frankenstein_edit_response.txt");
    // the model numbered the requested beat 30 instead of 18
    let drifted = good
        .replace("Beat 18:", "Beat 30:")
        .replace(", 18,", ", 30,");
    let provider = Scripted::new(&[&drifted]);
    let out = apply_edit(&old, &adam_edit(), &provider, &EditOptions::default()).unwrap();
    assert_eq!(out.edit_report.renumbered, vec![(BeatId(30), BeatId(18))]);
    assert!(out.new_bundle.storyline(5).unwrap().has_transition(BeatId(2), BeatId(18)));
}

#[test]
fn graphify_repairs_the_hand_written_payload() {
    let b = minecraft_draft();
    let g = graphify(&b, &replay(), &TemplateSet::default()).unwrap();
    let report = g.reconcile.expect("payload parsed");
    assert_eq!(report.missing_edges.len(), 6);
    assert!(report.extra_edges.is_empty());
    assert_eq!(g.payload.edge_set().len(), 19);
    g.payload.check_invariants().unwrap();
}

#[test]
fn graphify_falls_back_on_garbage() {
    let b = minecraft_draft();
    let g = graphify(&b, &Scripted::new(&["no json here"]), &TemplateSet::default()).unwrap();
    assert!(g.reconcile.is_none() && g.unparsed_reason.is_some());
    assert_eq!(g.payload.nodes.len(), 10);
}

#[test]
fn project_versions_and_export() {
    let dir = tempfile::tempdir().unwrap();
    let gw = replay();
    let g = generate(&frankenstein_spec(), &gw, &TemplateSet::default(), &Default::default())
        .unwrap();
    let mut p = Project::new("franken", frankenstein_spec()).unwrap();
    assert_eq!(p.push_generation(&g), 1);
    let (v, _) = p.apply_edit(&adam_edit(), &gw, &EditOptions::default()).unwrap();
    assert_eq!(v, 2);
    assert!(matches!(p.versions[1].provenance, Provenance::Edited { from_version: 1, .. }));

    let path = dir.path().join(p.file_name());
    p.save(&path).unwrap();
    let back = Project::load(&path).unwrap();
    assert_eq!(back, p);

    let out = dir.path().join("payload.json");
    back.export_render_payload(2, &out).unwrap();
    let text = std::fs::read_to_string(&out).unwrap();
    let (parsed, warnings) = parse_render_payload(&text).unwrap();
    assert!(warnings.is_empty());
    assert_eq!(parsed, back.versions[1].payload);
    assert_eq!(
        back.export_render_payload(7, &out).unwrap_err().code(),
        "VERSION-UNKNOWN"
    );

    // replaying the recorded digests reproduces every version
    let store = FixtureStore::new(replay_dir());
    for v in &back.versions {
        for t in &v.transcripts {
            let fx = store.load(&t.prompt_digest).unwrap().expect("fixture");
            assert_eq!(fx.response_text, t.response_text);
        }
    }
}

#[test]
fn cyberpunk_sample_project_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let b = cyberpunk_sample();
    let mut p = Project::new("lrrh", cyberpunk_spec()).unwrap();
    let payload = grim_core::graph::build_render_payload(&b).unwrap();
    p.push_version(b, payload, Provenance::Generated, vec![]);
    let path = dir.path().join(p.file_name());
    p.save(&path).unwrap();
    let back = Project::load(&path).unwrap();
    assert_eq!(back.versions[0].bundle.beats.len(), 35);
}

fn stub_server(responses: Vec<(u16, String)>) -> (String, Arc<AtomicUsize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    std::thread::spawn(move || {
        for (status, body) in responses {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            let req: serde_json::Value = serde_json::from_slice(&buf).unwrap();
            assert_eq!(req["messages"][0]["role"], "user");
            counter.fetch_add(1, Ordering::SeqCst);
            let reply = format!(
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(reply.as_bytes()).unwrap();
        }
    });
    (url, hits)
}

fn chat_body(text: &str) -> String {
    serde_json::json!({ "choices": [{ "message": { "role": "assistant", "content": text } }] })
        .to_string()
}

#[test]
fn record_then_replay_through_a_stub_provider() {
    let dir = tempfile::tempdir().unwrap();
    let reply = read_fixture("frankenstein_21st_century.txt");
    let (url, hits) = stub_server(vec![
        (429, "{}".into()),
        (503, "{}".into()),
        (200, chat_body(&reply)),
    ]);
    std::env::set_var("GRIM_TEST_RECORD_KEY", "sk-test");
    let record = Gateway::new(ProviderConfig {
        endpoint: url,
        mode: Mode::Record,
        fixture_dir: Some(dir.path().to_path_buf()),
        credential_env: "GRIM_TEST_RECORD_KEY".into(),
        backoff_base_ms: 1,
        ..Default::default()
    })
    .unwrap();
    let prompt = TemplateSet::default().generation_prompt(&frankenstein_spec());
    let live = record.complete(&prompt).unwrap();
    assert_eq!(hits.load(Ordering::SeqCst), 3);
    assert_eq!(live.text, reply);

    let replay = Gateway::new(ProviderConfig::replay(dir.path())).unwrap();
    let again = replay.complete(&prompt).unwrap();
    assert_eq!(again.text.as_bytes(), live.text.as_bytes());
    assert_eq!(again.transcript.prompt_digest, prompt_digest(&prompt.text));
    assert_eq!(hits.load(Ordering::SeqCst), 3);
}

#[test]
fn rate_limit_surfaces_after_retries() {
    let (url, hits) = stub_server(vec![(429, "{}".into()); 3]);
    std::env::set_var("GRIM_TEST_RATE_KEY", "sk-test");
    let gw = Gateway::new(ProviderConfig {
        endpoint: url,
        max_retries: 2,
        credential_env: "GRIM_TEST_RATE_KEY".into(),
        backoff_base_ms: 1,
        ..Default::default()
    })
    .unwrap();
    let prompt = TemplateSet::default().generation_prompt(&frankenstein_spec());
    let err = gw.complete(&prompt).unwrap_err();
    assert_eq!(err.code(), "RATE-LIMITED");
    assert_eq!(hits.load(Ordering::SeqCst), 3);
}

#[test]
fn empty_completion_is_an_error() {
    let (url, _) = stub_server(vec![(200, chat_body("   "))]);
    std::env::set_var("GRIM_TEST_EMPTY_KEY", "sk-test");
    let gw = Gateway::new(ProviderConfig {
        endpoint: url,
        credential_env: "GRIM_TEST_EMPTY_KEY".into(),
        ..Default::default()
    })
    .unwrap();
    let prompt = TemplateSet::default().generation_prompt(&frankenstein_spec());
    assert_eq!(gw.complete(&prompt).unwrap_err().code(), "EMPTY-RESPONSE");
}
