use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;
use taintaudit_bench::{page, synthetic_trace, word};
use taintaudit_core::explicit_tracker::{lcs_score, run_cascade, CascadeFlags};
use taintaudit_core::{audit_trace, AuditOptions, HashingEmbedder, Policy, Providers, ScriptedJudge, TaintLabel, ThresholdProfile};

fn label() -> TaintLabel {
    TaintLabel {
        id: "lbl:s:0".into(),
        source_session: "s".into(),
        source_index: 0,
        origin_tool: "web_search".into(),
        confidence: 1.0,
        canary: None,
    }
}

fn string_overlap(c: &mut Criterion) {
    let source = page(0, 8);
    let sink = page(20, 2);
    c.bench_function("lcs_score 48w x 12w", |b| b.iter(|| lcs_score(black_box(&source), black_box(&sink))));
}

fn cascade(c: &mut Criterion) {
    let source = page(0, 6);
    let profile = ThresholdProfile::default();
    let embedder = HashingEmbedder::new();
    let copied = format!("note: {}", page(12, 1));
    let restated: Vec<String> = (0..12).rev().map(word).collect();
    let restated = restated.join(", ");
    let unrelated = page(900, 2);
    let mut group = c.benchmark_group("cascade");
    for (name, sink) in [("tier2 hit", &copied), ("tier3 hit", &restated), ("no flow", &unrelated)] {
        group.bench_function(name, |b| {
            b.iter(|| run_cascade(&label(), &source, black_box(sink), &embedder, &profile, 3, CascadeFlags::default()))
        });
    }
    group.finish();
}

fn audit(c: &mut Criterion) {
    let trace = synthetic_trace(100);
    let policy = Policy::default();
    let embedder = HashingEmbedder::new();
    let judge = ScriptedJudge::default();
    c.bench_function("audit 100 events", |b| {
        b.iter(|| {
            audit_trace("bench", &trace, &policy, Providers { embedder: &embedder, judge: &judge }, AuditOptions::default())
                .expect("audit")
        })
    });
}

criterion_group!(benches, string_overlap, cascade, audit);
criterion_main!(benches);
