//! Hot primitives: tokenization, mask computation, and top-k search.

use criterion::{criterion_group, criterion_main, Criterion};

use std::sync::Arc;

use tecod_bench::{join_template, sample_sqls, JOIN_SQL};
use tecod_core::grammar::{compile_flexible, GuideSpec};
use tecod_core::lm::build_vocab;
use tecod_core::matcher::{build_index, HashEmbedder};
use tecod_core::nlq::MaskedNlq;
use tecod_core::tokenize;

fn lexer(c: &mut Criterion) {
    c.bench_function("tokenize_join_sql", |b| b.iter(|| tokenize(JOIN_SQL).unwrap()));
}

fn masks(c: &mut Criterion) {
    let mut corpus = sample_sqls(40, 7);
    corpus.push(JOIN_SQL.to_string());
    let vocab = build_vocab(&corpus, 250);
    let guide = compile_flexible(&join_template(), &GuideSpec::flexible()).unwrap();
    // Mid-template state right before the string literal.
    let prefix = &JOIN_SQL[..JOIN_SQL.find("'%Y'").unwrap()];
    let state = guide.advance(guide.start(), prefix.as_bytes()).unwrap();
    c.bench_function("allowed_tokens_mid_template", |b| {
        b.iter(|| guide.allowed_tokens(state, &vocab))
    });
}

fn search(c: &mut Criterion) {
    let annotations: Vec<(MaskedNlq, String)> = (0..500)
        .map(|i| {
            let text = format!("how many records of kind {} exceed [number] in group {}", i % 37, i % 11);
            (MaskedNlq::identity(&text), format!("T{}", i % 50))
        })
        .collect();
    let texts: Vec<String> = annotations.iter().map(|(m, _)| m.text.clone()).collect();
    let embedder = Arc::new(HashEmbedder::fitted(1024, &texts));
    let index = build_index(annotations, embedder).unwrap();
    c.bench_function("top5_search_500", |b| {
        b.iter(|| index.search("how many records of kind 9 exceed 41 in group 3", 5))
    });
}

criterion_group!(benches, lexer, masks, search);
criterion_main!(benches);
