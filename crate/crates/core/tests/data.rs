use std::collections::HashMap;
use std::io::Write;

use nse_core::data::{
    gen_synthetic, load_embeddings, pad_or_crop, read_labeled, read_pairs, write_labeled, write_pairs, Labeled, Pair,
    SynthData, SynthSpec, SynthTask, Vocabulary, PAD, QUERY_MARKER,
};
use nse_core::Error;
use proptest::prelude::*;
use proptest::test_runner::{Config, RngSeed};

fn config(cases: u32) -> Config {
    Config {
        cases,
        rng_seed: RngSeed::Fixed(0xda7a),
        failure_persistence: None,
        ..Config::default()
    }
}

fn word() -> impl Strategy<Value = String> {
    "[a-e]{1,2}"
}

proptest! {
    #![proptest_config(config(300))]

    #[test]
    fn pad_or_crop_has_exact_length(tokens in prop::collection::vec(word(), 0..20), len in 0usize..25) {
        let out = pad_or_crop(&tokens, len, PAD.to_string());
        prop_assert_eq!(out.len(), len);
        let kept = len.min(tokens.len());
        prop_assert_eq!(&out[..kept], &tokens[..kept]);
        prop_assert!(out[kept..].iter().all(|t| t == PAD));
    }

    /// Capping keeps the top-N tokens by count, ties broken lexicographically.
    #[test]
    fn vocabulary_cap_keeps_top_counts(tokens in prop::collection::vec(word(), 1..60), cap in 1usize..12) {
        let v = Vocabulary::build(tokens.iter().map(String::as_str), Some(cap));
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for t in &tokens {
            *counts.entry(t.as_str()).or_default() += 1;
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        ranked.truncate(cap);
        let kept: Vec<&str> = v.tokens()[4..].iter().map(String::as_str).collect();
        prop_assert_eq!(kept, ranked.iter().map(|r| r.0).collect::<Vec<_>>());
    }

    #[test]
    fn tsv_round_trip(rows in prop::collection::vec((word(), prop::collection::vec(word(), 1..6), prop::collection::vec(word(), 1..6)), 1..20)) {
        let dir = tempfile::tempdir().unwrap();
        let pairs: Vec<Pair> = rows.iter().map(|(l, a, b)| Pair { label: l.clone(), a: a.clone(), b: b.clone() }).collect();
        let path = dir.path().join("pairs.tsv");
        write_pairs(&path, &pairs).unwrap();
        let back = read_pairs(&path, false).unwrap();
        prop_assert_eq!(back.skipped, 0);
        prop_assert_eq!(back.records, pairs);

        let labeled: Vec<Labeled> = rows.iter().map(|(l, a, _)| Labeled { label: l.clone(), tokens: a.clone() }).collect();
        let path = dir.path().join("labeled.tsv");
        write_labeled(&path, &labeled).unwrap();
        prop_assert_eq!(read_labeled(&path, false).unwrap().records, labeled);
    }
}

/// The recall target is the value that follows the queried key.
#[test]
fn recall_targets_follow_the_queried_key() {
    let SynthData::Sequences(data) = gen_synthetic(&SynthSpec::new(SynthTask::AssociativeRecall, 500, 30, 1, 6, 3)).unwrap() else {
        panic!("recall data are sequences")
    };
    for ex in &data {
        let n = ex.source.len();
        assert_eq!(ex.source[n - 2], QUERY_MARKER);
        let pairs: Vec<&[String]> = ex.source[..n - 2].chunks(2).collect();
        assert!((1..=6).contains(&pairs.len()));
        let q = &ex.source[n - 1];
        let hits: Vec<_> = pairs.iter().filter(|p| &p[0] == q).collect();
        assert_eq!(hits.len(), 1, "keys must be distinct");
        assert_eq!(hits[0][1], ex.target[0]);
    }
}

#[test]
fn embeddings_give_zero_for_unknown_tokens_and_name_bad_lines() {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    writeln!(f, "cat 0.5 -1 2").unwrap();
    writeln!(f, "dog 1 1 1").unwrap();
    f.flush().unwrap();
    let table = load_embeddings(f.path(), 3).unwrap();
    assert_eq!(table.lookup("cat"), &[0.5, -1.0, 2.0]);
    assert_eq!(table.lookup("zebra"), &[0.0; 3]);
    assert_eq!(table.lookup(PAD), &[0.0; 3]);

    writeln!(f, "emu 1 2").unwrap();
    f.flush().unwrap();
    match load_embeddings(f.path(), 3) {
        Err(Error::Format { line: 3, detail }) => assert!(detail.contains("found 2")),
        other => panic!("expected a line-3 format error, got {other:?}"),
    }
}
