//! Writes the checked-in replay fixtures under `fixtures/replay`.
//!
//! Each canned reply in `fixtures/` is stored against the prompt the
//! pipeline would send for it. Rerun after changing a template:
//!
//! ```text
//! cargo run -p grim-core --example seed_fixtures
//! ```

use std::path::PathBuf;

use chrono::DateTime;
use grim_core::gateway::FixtureStore;
use grim_core::model::{AddedNode, BeatId, EditSet, GenerationSpec};
use grim_core::parse_storyline_document;
use grim_core::prompt::TemplateSet;
use grim_core::serialize_story_bundle;

fn main() {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures");
    let read = |name: &str| std::fs::read_to_string(root.join(name)).expect(name);
    let store = FixtureStore::new(root.join("replay"));
    let templates = TemplateSet::default();
    let when = DateTime::from_timestamp(1_700_000_000, 0).unwrap();

    let franken = GenerationSpec::new("Frankenstein", "21st century", 1, 2, 4);
    let v1_text = read("frankenstein_21st_century.txt");
    let p = templates.generation_prompt(&franken);
    println!("{}", store.put(&p, &v1_text, "gpt-4", when).unwrap().display());

    let v1 = parse_storyline_document(&v1_text, &franken)
        .into_result()
        .expect("Frankenstein fixture parses");
    let edits = EditSet {
        nodes_added: vec![AddedNode {
            id: BeatId(18),
            description: "Adam decides to help Dr. Frank on his next project".into(),
        }],
        edges_added: [(BeatId(2), BeatId(18))].into(),
        ..Default::default()
    };
    let p = templates.edit_prompt(&v1, &edits, &[]).unwrap();
    let reply = read("frankenstein_edit_response.txt");
    println!("{}", store.put(&p, &reply, "gpt-4", when).unwrap().display());

    let minecraft = GenerationSpec::new("Little Red Riding Hood", "Minecraft", 1, 1, 8);
    let draft = parse_storyline_document(&read("minecraft_draft.txt"), &minecraft)
        .into_result()
        .expect("Minecraft draft parses");
    let p = templates
        .graphify_prompt(&serialize_story_bundle(&draft))
        .unwrap();
    let reply = read("minecraft_draft_payload.txt");
    println!("{}", store.put(&p, &reply, "gpt-4", when).unwrap().display());
}
