use nse_core::cells::Init;
use nse_core::heads::Embedder;
use nse_core::introspect::{build_graph, dump_memory_states, emit_dot};
use nse_core::nse::{EncodeOptions, NseConfig, NseEncoder, Trace};
use nse_core::{Graph, ParameterSet};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngSeed};

fn config(cases: u32) -> Config {
    Config {
        cases,
        rng_seed: RngSeed::Fixed(0x91a9),
        failure_persistence: None,
        ..Config::default()
    }
}

fn encode(ids: &[usize], seed: u64, forced: Option<Vec<usize>>) -> Trace {
    let mut p = ParameterSet::<f64>::new();
    let mut init = Init::new(&mut p, seed);
    let emb = Embedder::new(&mut init, "emb", 20, 6, 1.5).unwrap();
    let enc = NseEncoder::new(&mut init, "enc", NseConfig::new(6)).unwrap();
    let mut g = Graph::with_params(&p);
    let xs = emb.lookup(&mut g, ids).unwrap();
    let labels = ids.iter().map(|i| format!("w{i}")).collect();
    let mut opts = EncodeOptions::traced(Some(labels));
    opts.forced_slots = forced;
    enc.encode_sequence(&mut g, &xs, vec![], &opts).unwrap().trace.unwrap()
}

/// First index of the maximum.
fn first_max(z: &[f64], skip: Option<usize>) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in z.iter().enumerate() {
        if Some(i) != skip && best.is_none_or(|b| v > z[b]) {
            best = Some(i);
        }
    }
    best
}

proptest! {
    #![proptest_config(config(200))]

    #[test]
    fn edges_follow_the_key_vectors(ids in prop::collection::vec(0usize..20, 1..10), seed in 0u64..1000, mask in any::<bool>()) {
        let trace = encode(&ids, seed, None);
        let g = build_graph(&trace, mask).unwrap();
        prop_assert_eq!(g.edges.len(), ids.len());
        for (e, r) in g.edges.iter().zip(&trace.records) {
            let top = first_max(&r.z, None).unwrap();
            let want = if mask && top == r.step { first_max(&r.z, Some(r.step)).unwrap_or(0) } else { top };
            prop_assert_eq!((e.from, e.to), (r.step, want));
        }
        let dot = emit_dot(&g);
        prop_assert_eq!(dot.lines().filter(|l| l.contains("->")).count(), ids.len());
        prop_assert_eq!(dot, emit_dot(&build_graph(&trace, mask).unwrap()));
    }

    #[test]
    fn first_table_row_is_the_input(ids in prop::collection::vec(0usize..20, 1..10), seed in 0u64..1000) {
        let trace = encode(&ids, seed, None);
        let table = dump_memory_states(&trace).unwrap();
        prop_assert_eq!(&table.rows[0].slots, trace.tokens.as_ref().unwrap());
        prop_assert_eq!(table.rows.len(), ids.len() + 1);
    }

    #[test]
    fn trace_text_round_trips_the_graph(ids in prop::collection::vec(0usize..20, 1..10), seed in 0u64..1000) {
        let trace = encode(&ids, seed, None);
        let back = Trace::parse(&trace.to_text()).unwrap();
        prop_assert_eq!(back.to_text(), trace.to_text());
        prop_assert_eq!(build_graph(&back, false).unwrap().edges, build_graph(&trace, false).unwrap().edges);
    }
}

#[test]
fn forced_addresses_rebuild_the_bracket_pattern() {
    let words = [
        "<S>", "A", "little", "child", "sits", "quietly", "on", "a", "hand", "built", "rock", "wall", "in", "autumn",
    ];
    let slots = vec![1, 0, 5, 5, 13, 4, 13, 9, 11, 11, 11, 4, 10, 9];
    let mut p = ParameterSet::<f64>::new();
    let mut init = Init::new(&mut p, 2);
    let emb = Embedder::new(&mut init, "emb", words.len(), 6, 1.0).unwrap();
    let enc = NseEncoder::new(&mut init, "enc", NseConfig::new(6)).unwrap();
    let mut g = Graph::with_params(&p);
    let ids: Vec<usize> = (0..words.len()).collect();
    let xs = emb.lookup(&mut g, &ids).unwrap();
    let mut opts = EncodeOptions::traced(Some(words.iter().map(|w| w.to_string()).collect()));
    opts.forced_slots = Some(slots.clone());
    let trace = enc.encode_sequence(&mut g, &xs, vec![], &opts).unwrap().trace.unwrap();

    let edges: Vec<usize> = build_graph(&trace, false).unwrap().edges.iter().map(|e| e.to).collect();
    assert_eq!(edges, slots);
    let table = dump_memory_states(&trace).unwrap();
    assert_eq!(table.rows[0].slots, words);
    assert_eq!(table.cell(2, 0), Some("(A <S>)"));
    assert_eq!(table.cell(3, 5), Some("(little quietly)"));
    assert_eq!(table.cell(6, 4), Some("(quietly sits)"));
    assert_eq!(table.cell(4, 5), Some("(child (little quietly))"));
}
