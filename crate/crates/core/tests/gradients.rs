mod common;

use common::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pathrec::agents::{self, ActionSpace, PolicyDims, PolicyParams};
use pathrec::data_io::TrainInstance;
use pathrec::kg::{EntityKind, KnowledgeGraph, Registry, Relation, Triple};
use pathrec::kg_embed::{transe_loss, transe_loss_grad, EmbeddingTable};
use pathrec::model::Model;
use pathrec::rewards::MidpointIndex;
use pathrec::session_encoder::{ce_loss, ce_loss_grad, EncoderKind, ItemVocab};
use pathrec::trainer::{loss_and_grad, rollout, Context, TrainConfig};

const TOL: f64 = 1e-4;

#[test]
fn transe_gradient_matches_finite_differences() {
    let d = 5;
    let mut checked = 0;
    for seed in 0..40u64 {
        let v: Vec<Vec<f64>> = (0..5).map(|i| random_vec(d, seed * 10 + i)).collect();
        let g = transe_loss_grad(&v[0], &v[1], &v[2], &v[3], &v[4], 1.0).unwrap();
        if g.loss < 1e-3 {
            continue; // at or past the hinge
        }
        let flat: Vec<f64> = v.concat();
        let num = numeric_grad(&flat, 1e-6, |x| {
            let p: Vec<&[f64]> = x.chunks(d).collect();
            transe_loss(p[0], p[1], p[2], p[3], p[4], 1.0).unwrap()
        });
        let ana = [g.h, g.r, g.t, g.h_neg, g.t_neg].concat();
        let e = rel_err(&num, &ana);
        assert!(e <= TOL, "seed {seed}: rel err {e}");
        checked += 1;
        if checked == 10 {
            break;
        }
    }
    assert_eq!(checked, 10);
}

#[test]
fn ce_gradient_wrt_logits() {
    let logits = random_vec(7, 3);
    let ana = ce_loss_grad(&logits, 2);
    let num = numeric_grad(&logits, 1e-6, |x| ce_loss(x, 2));
    assert!(rel_err(&num, &ana) <= TOL);
}

fn encoder_check(kind: EncoderKind) {
    let vocab = ItemVocab::new((0..6).map(pathrec::kg::EntityId).collect());
    let dims = PolicyDims {
        d: 3,
        d_se: 4,
        d_proj: 3,
    };
    let model = Model::new(kind, vocab.len(), dims, 11);
    let prefix: Vec<_> = [1u32, 4, 2, 4].map(pathrec::kg::EntityId).to_vec();
    let c = random_vec(4, 5);
    let loss = |m: &Model| {
        let cache = m.encoder.forward(&vocab, &prefix).unwrap();
        ce_loss(&cache.state.item_scores, 3) + pathrec::tensor::dot(&c, &cache.state.s_se)
    };
    let cache = model.encoder.forward(&vocab, &prefix).unwrap();
    let mut grads = model.zeros_like();
    let d_logits = ce_loss_grad(&cache.state.item_scores, 3);
    model
        .encoder
        .backward(&cache, &c, &d_logits, &mut grads.encoder);
    for (name, num, ana) in model_fd(&model, &grads, 1e-6, loss) {
        if !name.starts_with("enc.") {
            continue;
        }
        let e = rel_err(&num, &ana);
        assert!(e <= TOL, "{kind:?} {name}: rel err {e}");
    }
}

#[test]
fn recurrent_encoder_gradient() {
    encoder_check(EncoderKind::Recurrent);
}

#[test]
fn attention_encoder_gradient() {
    encoder_check(EncoderKind::Attention);
}

fn small_table(n: usize, d: usize) -> EmbeddingTable {
    EmbeddingTable::init(n, d, 9).unwrap()
}

#[test]
fn log_policy_gradients_wrt_w1_to_w4() {
    let g = random_graph(1, 12);
    let dims = PolicyDims {
        d: 3,
        d_se: 2,
        d_proj: 4,
    };
    let table = small_table(g.num_entities(), dims.d);
    let params = PolicyParams::new(dims, 4);
    let s_se = random_vec(dims.d_se, 8);

    let cands: Vec<_> = g.items().into_iter().take(3).collect();
    let chosen = 1;
    let f_se = |p: &PolicyParams, s: &[f64]| {
        agents::session_eval(p, s, &cands, &table)
            .unwrap()
            .log_probs[chosen]
    };
    let eval = agents::session_eval(&params, &s_se, &cands, &table).unwrap();
    let mut grads = params.zeros_like();
    let ds = agents::session_log_prob_backward(
        &params, &eval, &s_se, &cands, &table, chosen, 1.0, &mut grads,
    )
    .unwrap();
    for (which, ana) in [("w1", &grads.w1), ("w2", &grads.w2)] {
        let base = if which == "w1" {
            &params.w1
        } else {
            &params.w2
        };
        let num = numeric_grad(base.data(), 1e-6, |x| {
            let mut p = params.clone();
            let m = if which == "w1" { &mut p.w1 } else { &mut p.w2 };
            m.data_mut().copy_from_slice(x);
            f_se(&p, &s_se)
        });
        assert!(rel_err(&num, ana.data()) <= TOL, "{which}");
    }
    let num = numeric_grad(&s_se, 1e-6, |x| f_se(&params, x));
    assert!(rel_err(&num, &ds) <= TOL, "d s_se");

    let start = g
        .items()
        .into_iter()
        .max_by_key(|&e| g.neighbors(e).len())
        .unwrap();
    assert!(g.neighbors(start).len() >= 3);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let actions = agents::build_action_space(&g, start, &table, 3, None, &mut rng).unwrap();
    assert_eq!(actions.len(), 3);
    let mut state = s_se.clone();
    state.extend_from_slice(table.lookup(start).unwrap());
    state.extend_from_slice(table.lookup(start).unwrap());
    let f_path = |p: &PolicyParams, x: &[f64], acts: &ActionSpace| {
        agents::path_eval(p, x, acts, &table).unwrap().0.log_probs[2]
    };
    let (eval, vecs) = agents::path_eval(&params, &state, &actions, &table).unwrap();
    let mut grads = params.zeros_like();
    let dx = agents::path_log_prob_backward(&params, &eval, &vecs, &state, 2, 1.0, &mut grads);
    for which in ["w3", "w4"] {
        let (base, ana) = if which == "w3" {
            (&params.w3, &grads.w3)
        } else {
            (&params.w4, &grads.w4)
        };
        let num = numeric_grad(base.data(), 1e-6, |x| {
            let mut p = params.clone();
            let m = if which == "w3" { &mut p.w3 } else { &mut p.w4 };
            m.data_mut().copy_from_slice(x);
            f_path(&p, &state, &actions)
        });
        assert!(rel_err(&num, ana.data()) <= TOL, "{which}");
    }
    let num = numeric_grad(&state, 1e-6, |x| f_path(&params, x, &actions));
    assert!(rel_err(&num, &dx) <= TOL, "d state");
}

/// Two brands of three products plus a buyer, so walks have choices.
fn toy_graph() -> KnowledgeGraph {
    let mut reg = Registry::new();
    let mut triples = Vec::new();
    let u = reg.intern(EntityKind::User, "u");
    for b in 0..2 {
        let brand = reg.intern(EntityKind::Brand, &format!("b{b}"));
        for i in 0..3 {
            let p = reg.intern(EntityKind::Product, &format!("p{b}{i}"));
            triples.push(Triple::new(p, Relation::ProducedBy, brand));
            if i < 2 {
                triples.push(Triple::new(u, Relation::Purchase, p));
            }
        }
    }
    KnowledgeGraph::finalize(reg, triples).unwrap()
}

#[test]
fn joint_loss_gradient_on_frozen_rollout() {
    let g = toy_graph();
    let dims = PolicyDims {
        d: 3,
        d_se: 3,
        d_proj: 2,
    };
    let table = small_table(g.num_entities(), dims.d);
    let vocab = ItemVocab::from_graph(&g);
    let mids = MidpointIndex::new();
    let ctx = Context {
        graph: &g,
        table: &table,
        vocab: &vocab,
        midpoints: &mids,
    };
    let items = g.items();
    let user = g.registry().get(EntityKind::User, "u").unwrap();
    let inst = TrainInstance {
        prefix: vec![items[0], items[3], items[1]],
        t_list: vec![items[2], items[4]],
        user,
    };
    let cfg = TrainConfig {
        alpha: 0.7,
        beta: 0.4,
        action_dropout: 0.0,
        ..Default::default()
    };

    for kind in [EncoderKind::Recurrent, EncoderKind::Attention] {
        let mut model = Model::new(kind, vocab.len(), dims, 21);
        model.policy.v_se = random_matrix(1, dims.d_se, 1);
        model.policy.v_path = random_matrix(1, dims.state(), 2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ro = rollout(&ctx, &model, &cfg, &inst, &mut rng).unwrap();
        assert!(ro.session.is_some() && ro.long.is_some() && ro.short.is_some());

        let first = loss_and_grad(&ctx, &model, &cfg, &ro, None, None).unwrap();
        let adv = first.advantages.clone();
        assert_eq!(adv.len(), 5);
        let mut grads = model.zeros_like();
        let at = loss_and_grad(&ctx, &model, &cfg, &ro, Some(&adv), Some(&mut grads)).unwrap();
        assert_eq!(at.total, first.total);
        let loss = |m: &Model| {
            loss_and_grad(&ctx, m, &cfg, &ro, Some(&adv), None)
                .unwrap()
                .total
        };
        for (name, num, ana) in model_fd(&model, &grads, 1e-6, loss) {
            let e = rel_err(&num, &ana);
            assert!(e <= TOL, "{kind:?} {name}: rel err {e}");
        }
    }
}
