//! Oracles and fixtures shared by the integration test targets.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pathrec::agents::PolicyParams;
use pathrec::kg::{EntityId, EntityKind, KnowledgeGraph, Registry, Relation, RelationKind, Triple};
use pathrec::kg_embed::EmbeddingTable;
use pathrec::model::Model;
use pathrec::tensor::{dot, Matrix};

/// Random products and brands with also_bought, co_occur and produced_by
/// edges. Every entity gets at least one edge.
pub fn random_graph(seed: u64, n: usize) -> KnowledgeGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reg = Registry::new();
    let n_brands = (n / 5).max(1);
    let n_products = n - n_brands;
    let products: Vec<_> = (0..n_products)
        .map(|i| reg.intern(EntityKind::Product, &format!("p{i}")))
        .collect();
    let brands: Vec<_> = (0..n_brands)
        .map(|i| reg.intern(EntityKind::Brand, &format!("b{i}")))
        .collect();
    let mut triples = Vec::new();
    for (i, &p) in products.iter().enumerate() {
        triples.push(Triple::new(p, Relation::ProducedBy, brands[i % n_brands]));
    }
    for _ in 0..2 * n {
        let a = products[rng.gen_range(0..n_products)];
        let b = products[rng.gen_range(0..n_products)];
        if a != b {
            let rel = if rng.gen_bool(0.5) {
                Relation::AlsoBought
            } else {
                Relation::CoOccur
            };
            triples.push(Triple::new(a, rel, b));
        }
    }
    KnowledgeGraph::finalize(reg, triples).unwrap()
}

/// Directed edges (forward and inverse) straight from the stored triples.
pub fn directed_edges(g: &KnowledgeGraph) -> Vec<(EntityId, RelationKind, EntityId)> {
    let mut out = Vec::new();
    for t in g.triples() {
        out.push((t.head, t.rel.forward(), t.tail));
        out.push((t.tail, t.rel.inverse(), t.head));
    }
    out.sort();
    out.dedup();
    out
}

/// All `(r, m)` with `start -r-> m -any-> goal`, by enumerating edge pairs.
pub fn brute_midpoints(
    g: &KnowledgeGraph,
    start: EntityId,
    goal: EntityId,
) -> BTreeSet<(RelationKind, EntityId)> {
    let edges = directed_edges(g);
    let mut out = BTreeSet::new();
    for &(h1, r1, m) in &edges {
        if h1 != start {
            continue;
        }
        if edges.iter().any(|&(h2, _, t2)| h2 == m && t2 == goal) {
            out.insert((r1, m));
        }
    }
    out
}

/// Path-policy log-probabilities at `curr`, computed from scratch over every
/// outgoing edge.
pub fn brute_step(
    g: &KnowledgeGraph,
    table: &EmbeddingTable,
    params: &PolicyParams,
    s_se: &[f64],
    start: EntityId,
    curr: EntityId,
) -> BTreeMap<(RelationKind, EntityId), f64> {
    let mut state = s_se.to_vec();
    state.extend_from_slice(table.lookup(start).unwrap());
    state.extend_from_slice(table.lookup(curr).unwrap());
    let sp = params.w4.matvec(&state);
    let acts: Vec<_> = directed_edges(g)
        .into_iter()
        .filter(|e| e.0 == curr)
        .map(|e| (e.1, e.2))
        .collect();
    let scores: Vec<f64> = acts
        .iter()
        .map(|&(r, e)| {
            let mut a = table.lookup_rel(r);
            a.extend_from_slice(table.lookup(e).unwrap());
            dot(&params.w3.matvec(&a), &sp)
        })
        .collect();
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + scores.iter().map(|s| (s - m).exp()).sum::<f64>().ln();
    acts.into_iter()
        .zip(scores)
        .map(|(a, s)| (a, s - lse))
        .collect()
}

/// Every length-2 walk from `start` with its log-probability.
pub fn brute_paths(
    g: &KnowledgeGraph,
    table: &EmbeddingTable,
    params: &PolicyParams,
    s_se: &[f64],
    start: EntityId,
) -> BTreeMap<[(RelationKind, EntityId); 2], f64> {
    let mut out = BTreeMap::new();
    for (a1, lp1) in brute_step(g, table, params, s_se, start, start) {
        for (a2, lp2) in brute_step(g, table, params, s_se, start, a1.1) {
            out.insert([a1, a2], lp1 + lp2);
        }
    }
    out
}

pub fn max_out_degree(g: &KnowledgeGraph) -> usize {
    g.registry()
        .ids()
        .map(|e| g.neighbors(e).len())
        .max()
        .unwrap_or(0)
}

/// Norm-wise relative error `‖a − b‖ / max(‖a‖, ‖b‖)`; 0 when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale < 1e-12 {
        0.0
    } else {
        diff / scale
    }
}

/// Central differences of `f` with respect to every entry of `x`.
pub fn numeric_grad(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(&x);
            x[i] = orig - h;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Per-matrix `(name, numeric, analytic)` gradients of `loss` over a model.
pub fn model_fd(
    model: &Model,
    analytic: &Model,
    h: f64,
    loss: impl Fn(&Model) -> f64,
) -> Vec<(&'static str, Vec<f64>, Vec<f64>)> {
    let mut names = Vec::new();
    analytic.for_each(|n, m| names.push((n, m.data().to_vec())));
    let mut out = Vec::new();
    for (idx, (name, ana)) in names.into_iter().enumerate() {
        let mut num = vec![0.0; ana.len()];
        for (j, slot) in num.iter_mut().enumerate() {
            let eval = |delta: f64| {
                let mut m = model.clone();
                let mut k = 0;
                m.for_each_mut(|_, mat| {
                    if k == idx {
                        mat.data_mut()[j] += delta;
                    }
                    k += 1;
                });
                loss(&m)
            };
            *slot = (eval(h) - eval(-h)) / (2.0 * h);
        }
        out.push((name, num, ana));
    }
    out
}

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::uniform(rows, cols, 0.5, &mut rng)
}

pub fn random_vec(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}
