mod common;

use common::*;
use proptest::prelude::*;

use pathrec::agents::{PolicyDims, PolicyParams};
use pathrec::inference::{recommend, Origin, RecommendConfig, Walker};
use pathrec::kg::EntityId;
use pathrec::kg_embed::EmbeddingTable;
use pathrec::model::Model;
use pathrec::session_encoder::{EncoderKind, ItemVocab};

#[test]
fn wide_beam_equals_brute_force() {
    for seed in 0..5u64 {
        let g = random_graph(seed, 30);
        let dims = PolicyDims {
            d: 4,
            d_se: 3,
            d_proj: 4,
        };
        let table = EmbeddingTable::init(g.num_entities(), dims.d, seed).unwrap();
        let params = PolicyParams::new(dims, seed + 100);
        let s_se = random_vec(dims.d_se, seed);
        let w = max_out_degree(&g);
        let walker = Walker {
            graph: &g,
            table: &table,
            params: &params,
            a_max: w,
        };
        for start in g.items().into_iter().take(5) {
            let beam = walker.beam_search(&s_se, start, &[w, w]).unwrap();
            let brute = brute_paths(&g, &table, &params, &s_se, start);
            assert_eq!(beam.len(), brute.len(), "seed {seed}");
            for p in &beam {
                let lp = brute[&p.hops];
                assert!(
                    (p.log_prob - lp).abs() <= 1e-9,
                    "seed {seed}: {} vs {lp}",
                    p.log_prob
                );
            }
        }
    }
}

#[test]
fn narrow_beam_keeps_top_first_hops() {
    let g = random_graph(7, 25);
    let dims = PolicyDims {
        d: 4,
        d_se: 3,
        d_proj: 4,
    };
    let table = EmbeddingTable::init(g.num_entities(), dims.d, 1).unwrap();
    let params = PolicyParams::new(dims, 2);
    let s_se = random_vec(3, 0);
    let walker = Walker {
        graph: &g,
        table: &table,
        params: &params,
        a_max: 200,
    };
    let start = g.items()[0];
    let beam = walker.beam_search(&s_se, start, &[2, 1]).unwrap();
    let step = brute_step(&g, &table, &params, &s_se, start, start);
    let mut first: Vec<_> = step.iter().collect();
    first.sort_by(|a, b| b.1.total_cmp(a.1).then(a.0.cmp(b.0)));
    let kept: std::collections::BTreeSet<_> = beam.iter().map(|p| p.hops[0]).collect();
    let expect: std::collections::BTreeSet<_> = first.iter().take(2).map(|(a, _)| **a).collect();
    assert_eq!(kept, expect);
    assert_eq!(beam.len(), 2);
}

#[test]
fn isolated_start_is_an_error() {
    let mut reg = pathrec::kg::Registry::new();
    let a = reg.intern(pathrec::kg::EntityKind::Product, "a");
    let g = pathrec::kg::KnowledgeGraph::finalize(reg, []).unwrap();
    let table = EmbeddingTable::init(1, 2, 0).unwrap();
    let params = PolicyParams::new(
        PolicyDims {
            d: 2,
            d_se: 2,
            d_proj: 2,
        },
        0,
    );
    let walker = Walker {
        graph: &g,
        table: &table,
        params: &params,
        a_max: 5,
    };
    assert!(walker.beam_search(&[0.0, 0.0], a, &[1, 1]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn recommendation_lists_are_well_formed(seed in 0u64..1000, k in 1usize..12, plen in 1usize..4, session_agent: bool) {
        let g = random_graph(seed, 24);
        let dims = PolicyDims { d: 3, d_se: 4, d_proj: 3 };
        let table = EmbeddingTable::init(g.num_entities(), dims.d, seed).unwrap();
        let vocab = ItemVocab::from_graph(&g);
        let model = Model::new(EncoderKind::Recurrent, vocab.len(), dims, seed);
        let items = g.items();
        let prefix: Vec<EntityId> = (0..plen).map(|i| items[(seed as usize + 3 * i) % items.len()]).collect();
        let cfg = RecommendConfig { k, widths: vec![10, 2], session_agent, ..Default::default() };
        let recs = recommend(&g, &table, &vocab, &model, &prefix, &cfg).unwrap();
        let distinct_prefix: std::collections::BTreeSet<_> = prefix.iter().collect();
        prop_assert_eq!(recs.len(), k.min(items.len() - distinct_prefix.len()));
        let mut seen = std::collections::BTreeSet::new();
        for r in &recs {
            prop_assert!(seen.insert(r.item));
            prop_assert!(!prefix.contains(&r.item));
            match &r.best_path {
                Some(p) => {
                    prop_assert!(p.is_valid(&g));
                    prop_assert_eq!(p.terminal(), r.item);
                    prop_assert!(r.score > 0.0 && r.score <= 1.0);
                    prop_assert!(r.origin != Origin::Fallback);
                }
                None => prop_assert_eq!(r.origin, Origin::Fallback),
            }
        }
        for w in recs.windows(2) {
            let key = |r: &pathrec::inference::Recommendation| (r.origin != Origin::Fallback, r.score);
            let (a, b) = (key(&w[0]), key(&w[1]));
            prop_assert!((a.0 && !b.0) || (a.0 == b.0 && a.1 >= b.1));
        }
    }
}
