use std::hint::black_box;
use std::path::PathBuf;

use criterion::{criterion_group, criterion_main, Criterion};
use grim_core::graph::{build_render_payload, parse_render_payload};
use grim_core::model::{BeatId, GenerationSpec};
use grim_core::parse_storyline_document;
use grim_core::validate::{longest_common_run, validate};

fn fixture(name: &str) -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn cyberpunk() -> GenerationSpec {
    GenerationSpec::new("Little Red Riding Hood", "Cyberpunk", 2, 4, 8)
}

fn bench_parse(c: &mut Criterion) {
    let text = fixture("cyberpunk_sample.txt");
    let spec = cyberpunk();
    c.bench_function("parse cyberpunk sample", |b| {
        b.iter(|| parse_storyline_document(black_box(&text), &spec))
    });
}

fn bench_validate_and_build(c: &mut Criterion) {
    let bundle = parse_storyline_document(&fixture("cyberpunk_sample.txt"), &cyberpunk())
        .into_result()
        .expect("fixture parses");
    c.bench_function("validate cyberpunk sample", |b| b.iter(|| validate(black_box(&bundle))));
    c.bench_function("build payload cyberpunk sample", |b| {
        b.iter(|| build_render_payload(black_box(&bundle)).unwrap())
    });
    let payload = fixture("minecraft_draft_payload.txt");
    c.bench_function("parse payload minecraft draft", |b| {
        b.iter(|| parse_render_payload(black_box(&payload)).unwrap())
    });
}

fn bench_longest_run(c: &mut Criterion) {
    // Two 200-beat sequences sharing a 40-beat block in the middle.
    let a: Vec<BeatId> = (1..=200).map(BeatId).collect();
    let b: Vec<BeatId> = (1000..1080).chain(81..=120).chain(2000..2080).map(BeatId).collect();
    assert_eq!(longest_common_run(&a, &b).len, 40);
    c.bench_function("longest common run 200x200", |bench| {
        bench.iter(|| longest_common_run(black_box(&a), black_box(&b)))
    });
}

criterion_group!(benches, bench_parse, bench_validate_and_build, bench_longest_run);
criterion_main!(benches);
