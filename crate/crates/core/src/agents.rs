//! Session-level and path-level agents.
//!
//! Both policies score actions with the same bilinear form
//! `score_i = (W_a · a_i) · (W_s · s)` followed by a softmax over the action
//! list. The session-level agent picks the walk's start item from the prefix;
//! the path-level agent picks `(relation, entity)` hops. `W3`/`W4` are shared
//! by the long-start and short-start walks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, RelationKind};
use crate::kg_embed::EmbeddingTable;
use crate::tensor::{axpy, dot, softmax, Matrix, TensorSet};

pub const DEFAULT_A_MAX: usize = 200;
pub const DEFAULT_ACTION_DROPOUT: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Session,
    Path,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PolicyDims {
    /// KG embedding width.
    pub d: usize,
    /// Session-state width.
    pub d_se: usize,
    /// Shared projection width.
    pub d_proj: usize,
}

impl PolicyDims {
    pub fn state(&self) -> usize {
        self.d_se + 2 * self.d
    }

    pub fn action(&self) -> usize {
        2 * self.d
    }
}

/// Path-level state: the session vector, the walk's start entity and the
/// entity the walk currently stands on.
#[derive(Debug, Clone, PartialEq)]
pub struct PathState {
    pub s_se: Vec<f64>,
    pub s_start: Vec<f64>,
    pub s_curr: Vec<f64>,
    pub t: usize,
}

impl PathState {
    pub fn vector(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.s_se.len() + 2 * self.s_start.len());
        v.extend_from_slice(&self.s_se);
        v.extend_from_slice(&self.s_start);
        v.extend_from_slice(&self.s_curr);
        v
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionSpace {
    pub actions: Vec<(RelationKind, EntityId)>,
}

impl ActionSpace {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub w1: Matrix,
    pub w2: Matrix,
    pub w3: Matrix,
    pub w4: Matrix,
    pub v_se: Matrix,
    pub v_path: Matrix,
}

impl PolicyParams {
    pub fn new(dims: PolicyDims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let PolicyDims { d, d_se, d_proj } = dims;
        PolicyParams {
            w1: Matrix::xavier(d_proj, d, &mut rng),
            w2: Matrix::xavier(d_proj, d_se, &mut rng),
            w3: Matrix::xavier(d_proj, dims.action(), &mut rng),
            w4: Matrix::xavier(d_proj, dims.state(), &mut rng),
            v_se: Matrix::zeros(1, d_se),
            v_path: Matrix::zeros(1, dims.state()),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut p = self.clone();
        p.for_each_mut(|_, m| m.fill(0.0));
        p
    }

    pub fn dims(&self) -> PolicyDims {
        PolicyDims {
            d: self.w1.cols(),
            d_se: self.w2.cols(),
            d_proj: self.w1.rows(),
        }
    }

    pub fn for_each(&self, mut f: impl FnMut(&'static str, &Matrix)) {
        f("pol.w1", &self.w1);
        f("pol.w2", &self.w2);
        f("pol.w3", &self.w3);
        f("pol.w4", &self.w4);
        f("pol.v_se", &self.v_se);
        f("pol.v_path", &self.v_path);
    }

    pub fn for_each_mut(&mut self, mut f: impl FnMut(&'static str, &mut Matrix)) {
        f("pol.w1", &mut self.w1);
        f("pol.w2", &mut self.w2);
        f("pol.w3", &mut self.w3);
        f("pol.w4", &mut self.w4);
        f("pol.v_se", &mut self.v_se);
        f("pol.v_path", &mut self.v_path);
    }

    pub fn to_tensors(&self, set: &mut TensorSet) {
        self.for_each(|name, m| set.push(name, m.clone()));
    }

    pub fn from_tensors(set: &mut TensorSet) -> Result<Self> {
        let p = PolicyParams {
            w1: set.take("pol.w1")?,
            w2: set.take("pol.w2")?,
            w3: set.take("pol.w3")?,
            w4: set.take("pol.w4")?,
            v_se: set.take("pol.v_se")?,
            v_path: set.take("pol.v_path")?,
        };
        let dims = p.dims();
        let expect = PolicyParams::new(dims, 0);
        let mut bad = None;
        p.for_each(|name, m| {
            let mut shape = (0, 0);
            expect.for_each(|n2, e| {
                if n2 == name {
                    shape = (e.rows(), e.cols());
                }
            });
            if (m.rows(), m.cols()) != shape && bad.is_none() {
                bad = Some(Error::Dim {
                    what: name,
                    expected: shape.0 * shape.1,
                    got: m.rows() * m.cols(),
                });
            }
        });
        bad.map_or(Ok(p), Err)
    }

    pub fn is_finite(&self) -> bool {
        let mut ok = true;
        self.for_each(|_, m| ok &= m.is_finite());
        ok
    }
}

/// `s_se ⊕ s_start ⊕ s_curr` as plain concatenation.
pub fn assemble_state(
    dims: PolicyDims,
    s_se: &[f64],
    s_start: &[f64],
    s_curr: &[f64],
) -> Result<Vec<f64>> {
    for (what, v, want) in [
        ("session state", s_se, dims.d_se),
        ("start entity state", s_start, dims.d),
        ("current entity state", s_curr, dims.d),
    ] {
        if v.len() != want {
            return Err(Error::Dim {
                what,
                expected: want,
                got: v.len(),
            });
        }
    }
    let mut v = Vec::with_capacity(dims.state());
    v.extend_from_slice(s_se);
    v.extend_from_slice(s_start);
    v.extend_from_slice(s_curr);
    Ok(v)
}

/// Forward pass of a bilinear softmax policy, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct PolicyEval {
    /// `W_s · state`
    state_proj: Vec<f64>,
    /// `W_a · a_i` per action
    action_proj: Vec<Vec<f64>>,
    pub scores: Vec<f64>,
    pub probs: Vec<f64>,
    pub log_probs: Vec<f64>,
}

fn bilinear(wa: &Matrix, ws: &Matrix, actions: &[Vec<f64>], state: &[f64]) -> PolicyEval {
    let state_proj = ws.matvec(state);
    let action_proj: Vec<Vec<f64>> = actions.iter().map(|a| wa.matvec(a)).collect();
    let scores: Vec<f64> = action_proj.iter().map(|q| dot(q, &state_proj)).collect();
    let (probs, log_probs) = softmax(&scores);
    PolicyEval {
        state_proj,
        action_proj,
        scores,
        probs,
        log_probs,
    }
}

/// Accumulates `scale · ∂ log π(chosen)/∂{W_a, W_s}` and returns
/// `scale · ∂ log π(chosen)/∂state`.
#[allow(clippy::too_many_arguments)]
fn bilinear_backward(
    eval: &PolicyEval,
    ws: &Matrix,
    actions: &[Vec<f64>],
    state: &[f64],
    chosen: usize,
    scale: f64,
    g_wa: &mut Matrix,
    g_ws: &mut Matrix,
) -> Vec<f64> {
    let mut a_mix = vec![0.0; actions.first().map_or(0, Vec::len)];
    let mut q_mix = vec![0.0; eval.state_proj.len()];
    for (i, (a, q)) in actions.iter().zip(&eval.action_proj).enumerate() {
        let c = scale * ((i == chosen) as u8 as f64 - eval.probs[i]);
        if c != 0.0 {
            axpy(&mut a_mix, c, a);
            axpy(&mut q_mix, c, q);
        }
    }
    g_wa.add_outer(1.0, &eval.state_proj, &a_mix);
    g_ws.add_outer(1.0, &q_mix, state);
    ws.matvec_t(&q_mix)
}

fn entity_vectors(table: &EmbeddingTable, ids: &[EntityId]) -> Result<Vec<Vec<f64>>> {
    ids.iter()
        .map(|&e| table.lookup(e).map(<[f64]>::to_vec))
        .collect()
}

/// `[relation vector ; entity vector]`
pub fn action_embedding(
    table: &EmbeddingTable,
    action: (RelationKind, EntityId),
) -> Result<Vec<f64>> {
    let mut v = table.lookup_rel(action.0);
    v.extend_from_slice(table.lookup(action.1)?);
    Ok(v)
}

fn action_vectors(table: &EmbeddingTable, actions: &ActionSpace) -> Result<Vec<Vec<f64>>> {
    actions
        .actions
        .iter()
        .map(|&a| action_embedding(table, a))
        .collect()
}

/// Session-level policy evaluation over candidate start items.
pub fn session_eval(
    params: &PolicyParams,
    s_se: &[f64],
    candidates: &[EntityId],
    table: &EmbeddingTable,
) -> Result<PolicyEval> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument(
            "session policy needs candidates".into(),
        ));
    }
    if s_se.len() != params.w2.cols() {
        return Err(Error::Dim {
            what: "session state",
            expected: params.w2.cols(),
            got: s_se.len(),
        });
    }
    let vecs = entity_vectors(table, candidates)?;
    Ok(bilinear(&params.w1, &params.w2, &vecs, s_se))
}

/// `P^se = softmax((W1 · e_i) · (W2 · s_se))`
pub fn session_policy(
    params: &PolicyParams,
    s_se: &[f64],
    candidates: &[EntityId],
    table: &EmbeddingTable,
) -> Result<Vec<f64>> {
    Ok(session_eval(params, s_se, candidates, table)?.probs)
}

/// Accumulates `scale · ∇ log P^se(chosen)` into `grads`; returns the part
/// flowing into `s_se`.
#[allow(clippy::too_many_arguments)]
pub fn session_log_prob_backward(
    params: &PolicyParams,
    eval: &PolicyEval,
    s_se: &[f64],
    candidates: &[EntityId],
    table: &EmbeddingTable,
    chosen: usize,
    scale: f64,
    grads: &mut PolicyParams,
) -> Result<Vec<f64>> {
    let vecs = entity_vectors(table, candidates)?;
    Ok(bilinear_backward(
        eval,
        &params.w2,
        &vecs,
        s_se,
        chosen,
        scale,
        &mut grads.w1,
        &mut grads.w2,
    ))
}

/// Path-level policy evaluation. Returns the eval and the action vectors.
pub fn path_eval(
    params: &PolicyParams,
    state: &[f64],
    actions: &ActionSpace,
    table: &EmbeddingTable,
) -> Result<(PolicyEval, Vec<Vec<f64>>)> {
    if actions.is_empty() {
        return Err(Error::InvalidArgument("path policy needs actions".into()));
    }
    if state.len() != params.w4.cols() {
        return Err(Error::Dim {
            what: "path state",
            expected: params.w4.cols(),
            got: state.len(),
        });
    }
    let vecs = action_vectors(table, actions)?;
    Ok((bilinear(&params.w3, &params.w4, &vecs, state), vecs))
}

/// `P = softmax((W3 · [r ; e]) · (W4 · state))`
pub fn path_policy(
    params: &PolicyParams,
    state: &PathState,
    actions: &ActionSpace,
    table: &EmbeddingTable,
) -> Result<Vec<f64>> {
    let dims = params.dims();
    let x = assemble_state(dims, &state.s_se, &state.s_start, &state.s_curr)?;
    Ok(path_eval(params, &x, actions, table)?.0.probs)
}

/// Accumulates `scale · ∇ log P(chosen)` for the path-level agent; returns the
/// gradient with respect to the full state vector.
#[allow(clippy::too_many_arguments)]
pub fn path_log_prob_backward(
    params: &PolicyParams,
    eval: &PolicyEval,
    action_vecs: &[Vec<f64>],
    state: &[f64],
    chosen: usize,
    scale: f64,
    grads: &mut PolicyParams,
) -> Vec<f64> {
    bilinear_backward(
        eval,
        &params.w4,
        action_vecs,
        state,
        chosen,
        scale,
        &mut grads.w3,
        &mut grads.w4,
    )
}

/// Linear value head.
pub fn value(params: &PolicyParams, state: &[f64], level: Level) -> Result<f64> {
    let head = match level {
        Level::Session => &params.v_se,
        Level::Path => &params.v_path,
    };
    if head.cols() != state.len() {
        return Err(Error::Dim {
            what: "value head",
            expected: head.cols(),
            got: state.len(),
        });
    }
    Ok(dot(head.row(0), state))
}

/// Outgoing edges of `current` (inverse edges included), capped at `a_max`
/// by translational plausibility `−‖e_cur + r − e‖`. Output is sorted by
/// plausibility, ties by (relation name, entity index). With `dropout`,
/// each action except the most plausible one is removed with that
/// probability.
pub fn build_action_space<R: Rng + ?Sized>(
    graph: &KnowledgeGraph,
    current: EntityId,
    table: &EmbeddingTable,
    a_max: usize,
    dropout: Option<f64>,
    rng: &mut R,
) -> Result<ActionSpace> {
    if !graph.registry().contains(current) {
        return Err(Error::UnknownEntity(format!("entity {}", current.0)));
    }
    let edges = graph.neighbors(current);
    if edges.is_empty() {
        return Err(Error::MalformedGraph(format!(
            "entity {} ({}) has no edges",
            current.0,
            graph.registry().key(current)
        )));
    }
    let mut scored: Vec<(f64, (RelationKind, EntityId))> = edges
        .iter()
        .map(|&(r, e)| (-table.distance(current, r, e), (r, e)))
        .collect();
    // adjacency is already in (name, index) order, so a stable sort keeps the tie rule
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    scored.truncate(a_max.max(1));
    let mut actions: Vec<(RelationKind, EntityId)> = scored.into_iter().map(|(_, a)| a).collect();
    if let Some(p) = dropout {
        let mut first = true;
        actions.retain(|_| {
            let keep = first || !rng.gen_bool(p.clamp(0.0, 1.0));
            first = false;
            keep
        });
    }
    Ok(ActionSpace { actions })
}
