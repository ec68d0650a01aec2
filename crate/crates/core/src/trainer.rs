//! Joint training of the session encoder and both agents.
//!
//! Per instance: encode the prefix, let the session-level agent sample the
//! long start item, roll a two-hop walk from it and another from the last
//! prefix item, then minimize
//! `L = L_ce + alpha * (L_path(long) + L_path(short)) + beta * L_se`.
//! Rollouts are sampled first ([`rollout`]); [`loss_and_grad`] then
//! re-evaluates the frozen episode against the current parameters.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::agents::{
    self, build_action_space, path_eval, path_log_prob_backward, session_eval,
    session_log_prob_backward, ActionSpace, Level, PolicyParams,
};
use crate::data_io::TrainInstance;
use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph};
use crate::kg_embed::EmbeddingTable;
use crate::model::{Adam, Model};
use crate::rewards::{multi_target_reward, path_midpoint_reward, MidpointIndex, RewardConfig};
use crate::session_encoder::{ce_loss, ce_loss_grad, ItemVocab};
use crate::tensor::axpy;

/// Walk length; walks always take exactly this many hops.
pub const PATH_LEN: usize = 2;

/// Instances per gradient shard inside a batch.
const GRAD_SHARD: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub a_max: usize,
    pub action_dropout: f64,
    pub reward: RewardConfig,
    /// Off: only the last prefix item starts a walk and `L_se` vanishes.
    pub session_agent: bool,
    /// Off: the intermediate hop earns nothing.
    pub midpoint_reward: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            alpha: 0.01,
            beta: 0.005,
            gamma: 0.99,
            epochs: 150,
            batch_size: 256,
            seed: 0,
            a_max: agents::DEFAULT_A_MAX,
            action_dropout: agents::DEFAULT_ACTION_DROPOUT,
            reward: RewardConfig::default(),
            session_agent: true,
            midpoint_reward: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.reward.validate()?;
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "gamma {} not in (0, 1]",
                self.gamma
            )));
        }
        if self.alpha < 0.0 || self.beta < 0.0 {
            return Err(Error::InvalidArgument("alpha and beta must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.action_dropout) {
            return Err(Error::InvalidArgument(format!(
                "action dropout {} not in [0, 1)",
                self.action_dropout
            )));
        }
        if self.batch_size == 0 || self.a_max == 0 {
            return Err(Error::InvalidArgument(
                "batch size and a_max must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// `G_t = R_{t+1} + γ G_{t+1}`, with `rewards[t]` holding the reward earned by
/// the action taken at step `t`.
pub fn returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum WalkKind {
    Long,
    Short,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub current: EntityId,
    pub actions: ActionSpace,
    pub action_index: usize,
    /// State vector at sampling time.
    pub state: Vec<f64>,
    pub log_prob: f64,
    pub reward: f64,
}

impl Step {
    pub fn action(&self) -> (crate::kg::RelationKind, EntityId) {
        self.actions.actions[self.action_index]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub kind: WalkKind,
    pub start: EntityId,
    pub steps: Vec<Step>,
}

impl Episode {
    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }

    pub fn terminal(&self) -> Option<EntityId> {
        self.steps.last().map(|s| s.action().1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionChoice {
    pub candidates: Vec<EntityId>,
    pub chosen: usize,
    pub log_prob: f64,
}

/// One sampled training instance: the session-level choice and both walks.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub prefix: Vec<EntityId>,
    pub target_slot: usize,
    pub session: Option<SessionChoice>,
    pub long: Option<Episode>,
    pub short: Option<Episode>,
}

impl Rollout {
    pub fn episodes(&self) -> impl Iterator<Item = &Episode> {
        self.long.iter().chain(self.short.iter())
    }
}

/// Read-only context shared by rollouts and losses.
pub struct Context<'a> {
    pub graph: &'a KnowledgeGraph,
    pub table: &'a EmbeddingTable,
    pub vocab: &'a ItemVocab,
    pub midpoints: &'a MidpointIndex,
}

/// Distinct prefix items in first-occurrence order.
pub fn start_candidates(prefix: &[EntityId]) -> Vec<EntityId> {
    let mut out: Vec<EntityId> = Vec::with_capacity(prefix.len());
    for &e in prefix {
        if !out.contains(&e) {
            out.push(e);
        }
    }
    out
}

fn sample<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

fn path_state(
    s_se: &[f64],
    table: &EmbeddingTable,
    start: EntityId,
    curr: EntityId,
) -> Result<Vec<f64>> {
    let mut x = s_se.to_vec();
    x.extend_from_slice(table.lookup(start)?);
    x.extend_from_slice(table.lookup(curr)?);
    Ok(x)
}

/// Samples one two-hop walk with action dropout. Returns `None` when the
/// start entity has no edges.
#[allow(clippy::too_many_arguments)]
pub fn roll_walk<R: Rng + ?Sized>(
    ctx: &Context<'_>,
    params: &PolicyParams,
    cfg: &TrainConfig,
    s_se: &[f64],
    kind: WalkKind,
    start: EntityId,
    t_list: &[EntityId],
    rng: &mut R,
) -> Result<Option<Episode>> {
    if ctx.graph.neighbors(start).is_empty() {
        return Ok(None);
    }
    let mut steps = Vec::with_capacity(PATH_LEN);
    let mut curr = start;
    for t in 0..PATH_LEN {
        let actions = build_action_space(
            ctx.graph,
            curr,
            ctx.table,
            cfg.a_max,
            Some(cfg.action_dropout),
            rng,
        )?;
        let state = path_state(s_se, ctx.table, start, curr)?;
        let (eval, _) = path_eval(params, &state, &actions, ctx.table)?;
        let idx = sample(&eval.probs, rng);
        let action = actions.actions[idx];
        let reward = if t + 1 < PATH_LEN {
            if cfg.midpoint_reward {
                path_midpoint_reward(action, start, t_list, ctx.midpoints, ctx.graph, &cfg.reward)
            } else {
                0.0
            }
        } else {
            multi_target_reward(action.1, t_list, ctx.table, &cfg.reward)?
        };
        steps.push(Step {
            current: curr,
            actions,
            action_index: idx,
            state,
            log_prob: eval.log_probs[idx],
            reward,
        });
        curr = action.1;
    }
    Ok(Some(Episode { kind, start, steps }))
}

/// Samples the session-level choice and both walks for one instance.
pub fn rollout<R: Rng + ?Sized>(
    ctx: &Context<'_>,
    model: &Model,
    cfg: &TrainConfig,
    inst: &TrainInstance<EntityId>,
    rng: &mut R,
) -> Result<Rollout> {
    let cache = model.encoder.forward(ctx.vocab, &inst.prefix)?;
    let s_se = &cache.state.s_se;
    let target_slot = ctx.vocab.slot(*inst.target())?;
    let last = *inst.prefix.last().expect("non-empty prefix");

    let (session, long) = if cfg.session_agent {
        let candidates = start_candidates(&inst.prefix);
        let eval = session_eval(&model.policy, s_se, &candidates, ctx.table)?;
        let chosen = sample(&eval.probs, rng);
        let start = candidates[chosen];
        let long = roll_walk(
            ctx,
            &model.policy,
            cfg,
            s_se,
            WalkKind::Long,
            start,
            &inst.t_list,
            rng,
        )?;
        let choice = SessionChoice {
            candidates,
            chosen,
            log_prob: eval.log_probs[chosen],
        };
        (Some(choice), long)
    } else {
        (None, None)
    };
    let short = roll_walk(
        ctx,
        &model.policy,
        cfg,
        s_se,
        WalkKind::Short,
        last,
        &inst.t_list,
        rng,
    )?;
    Ok(Rollout {
        prefix: inst.prefix.clone(),
        target_slot,
        session,
        long,
        short,
    })
}

/// Policy-gradient and value-fit parts of one agent loss.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossTerms {
    /// `Σ (v̂ − G) · ln π`
    pub policy: f64,
    /// `½ Σ (v̂ − G)²`
    pub value: f64,
}

impl LossTerms {
    pub fn total(&self) -> f64 {
        self.policy + self.value
    }
}

/// Path-level loss of a recorded episode, using the stored state vectors and
/// log-probabilities.
pub fn path_loss(episode: &Episode, params: &PolicyParams, gamma: f64) -> Result<LossTerms> {
    let g = returns(&episode.rewards(), gamma);
    let mut out = LossTerms::default();
    for (step, g_t) in episode.steps.iter().zip(g) {
        let v = agents::value(params, &step.state, Level::Path)?;
        out.policy += (v - g_t) * step.log_prob;
        out.value += 0.5 * (v - g_t).powi(2);
    }
    Ok(out)
}

/// Session-level loss: advantage against the long walk's final return.
pub fn session_loss(
    s_se: &[f64],
    log_prob: f64,
    long_return: f64,
    params: &PolicyParams,
) -> Result<LossTerms> {
    let v = agents::value(params, s_se, Level::Session)?;
    Ok(LossTerms {
        policy: (v - long_return) * log_prob,
        value: 0.5 * (v - long_return).powi(2),
    })
}

/// The long walk's `G_{M-1}`.
pub fn final_return(episode: &Episode, gamma: f64) -> f64 {
    returns(&episode.rewards(), gamma)
        .last()
        .copied()
        .unwrap_or(0.0)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossBreakdown {
    pub ce: f64,
    pub path: LossTerms,
    pub session: LossTerms,
    /// Weighted total `ce + α·path + β·session`.
    pub total: f64,
    /// Advantages `v̂ − G` in evaluation order: long steps, short steps, session.
    pub advantages: Vec<f64>,
}

/// Re-evaluates a frozen rollout under `model`. Advantages are treated as
/// constants in the policy terms; pass `frozen` to pin them (finite-difference
/// checks), otherwise they are computed from the current value heads.
/// Gradients of the weighted total accumulate into `grads` when given.
pub fn loss_and_grad(
    ctx: &Context<'_>,
    model: &Model,
    cfg: &TrainConfig,
    ro: &Rollout,
    frozen: Option<&[f64]>,
    mut grads: Option<&mut Model>,
) -> Result<LossBreakdown> {
    let cache = model.encoder.forward(ctx.vocab, &ro.prefix)?;
    let s_se = cache.state.s_se.clone();
    let d_se = s_se.len();
    let logits = &cache.state.item_scores;
    let mut out = LossBreakdown {
        ce: ce_loss(logits, ro.target_slot),
        ..Default::default()
    };
    let mut d_s = vec![0.0; d_se];
    let mut adv_i = 0;
    let mut next_adv = |computed: f64| -> f64 {
        let a = frozen.map_or(computed, |f| f[adv_i]);
        adv_i += 1;
        a
    };

    for ep in ro.episodes() {
        let g = returns(&ep.rewards(), cfg.gamma);
        for (step, g_t) in ep.steps.iter().zip(g) {
            let x = path_state(&s_se, ctx.table, ep.start, step.current)?;
            let (eval, vecs) = path_eval(&model.policy, &x, &step.actions, ctx.table)?;
            let log_pi = eval.log_probs[step.action_index];
            let v = agents::value(&model.policy, &x, Level::Path)?;
            let adv = next_adv(v - g_t);
            out.advantages.push(v - g_t);
            out.path.policy += adv * log_pi;
            out.path.value += 0.5 * (v - g_t).powi(2);
            if let Some(gr) = grads.as_deref_mut() {
                let mut dx = path_log_prob_backward(
                    &model.policy,
                    &eval,
                    &vecs,
                    &x,
                    step.action_index,
                    cfg.alpha * adv,
                    &mut gr.policy,
                );
                let fit = cfg.alpha * (v - g_t);
                axpy(gr.policy.v_path.row_mut(0), fit, &x);
                axpy(&mut dx, fit, model.policy.v_path.row(0));
                axpy(&mut d_s, 1.0, &dx[..d_se]);
            }
        }
    }

    if let (Some(choice), Some(long)) = (&ro.session, &ro.long) {
        let g = final_return(long, cfg.gamma);
        let eval = session_eval(&model.policy, &s_se, &choice.candidates, ctx.table)?;
        let log_pi = eval.log_probs[choice.chosen];
        let v = agents::value(&model.policy, &s_se, Level::Session)?;
        let adv = next_adv(v - g);
        out.advantages.push(v - g);
        out.session.policy = adv * log_pi;
        out.session.value = 0.5 * (v - g).powi(2);
        if let Some(gr) = grads.as_deref_mut() {
            let ds = session_log_prob_backward(
                &model.policy,
                &eval,
                &s_se,
                &choice.candidates,
                ctx.table,
                choice.chosen,
                cfg.beta * adv,
                &mut gr.policy,
            )?;
            axpy(&mut d_s, 1.0, &ds);
            let fit = cfg.beta * (v - g);
            axpy(gr.policy.v_se.row_mut(0), fit, &s_se);
            axpy(&mut d_s, fit, model.policy.v_se.row(0));
        }
    }

    out.total = out.ce + cfg.alpha * out.path.total() + cfg.beta * out.session.total();
    if let Some(gr) = grads {
        let d_logits = ce_loss_grad(logits, ro.target_slot);
        model
            .encoder
            .backward(&cache, &d_s, &d_logits, &mut gr.encoder);
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub l_ce: f64,
    pub l_path: f64,
    pub l_se: f64,
    pub mean_terminal_reward: f64,
    pub mean_midpoint_reward: f64,
    pub skipped_walks: usize,
}

impl EpochMetrics {
    pub const CSV_HEADER: &'static str =
        "epoch,L_ce,L_path,L_se,mean_terminal_reward,mean_midpoint_reward";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.epoch,
            self.l_ce,
            self.l_path,
            self.l_se,
            self.mean_terminal_reward,
            self.mean_midpoint_reward
        )
    }
}

/// Owns the model and optimizer across epochs.
pub struct Trainer<'a> {
    ctx: Context<'a>,
    cfg: TrainConfig,
    model: Model,
    adam: Adam,
    epoch: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(ctx: Context<'a>, model: Model, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if model.dims().d != ctx.table.dim() {
            return Err(Error::Dim {
                what: "policy d vs embedding width",
                expected: ctx.table.dim(),
                got: model.dims().d,
            });
        }
        let adam = Adam::new(cfg.lr);
        Ok(Trainer {
            ctx,
            cfg,
            model,
            adam,
            epoch: 0,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Gradient sum and metric sums (not yet averaged) over a shard of
    /// instance indices.
    fn shard_grad(
        &self,
        shard: &[usize],
        instances: &[TrainInstance<EntityId>],
        epoch_seed: u64,
    ) -> Result<(Model, EpochMetrics, usize)> {
        let mut grads = self.model.zeros_like();
        let mut m = EpochMetrics::default();
        let mut walks = 0;
        for &i in shard {
            let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed);
            rng.set_stream(i as u64 + 1);
            let ro = rollout(&self.ctx, &self.model, &self.cfg, &instances[i], &mut rng)?;
            let loss = loss_and_grad(
                &self.ctx,
                &self.model,
                &self.cfg,
                &ro,
                None,
                Some(&mut grads),
            )?;
            if !loss.total.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss at epoch {} instance {i}: ce={} path={:?} se={:?}",
                    self.epoch, loss.ce, loss.path, loss.session
                )));
            }
            m.l_ce += loss.ce;
            m.l_path += loss.path.total();
            m.l_se += loss.session.total();
            let expected_walks = 1 + self.cfg.session_agent as usize;
            m.skipped_walks += expected_walks - ro.episodes().count();
            for ep in ro.episodes() {
                walks += 1;
                m.mean_terminal_reward += ep.steps[PATH_LEN - 1].reward;
                m.mean_midpoint_reward += ep.steps[0].reward;
            }
        }
        Ok((grads, m, walks))
    }

    /// One pass over `instances` in a seeded shuffled order, one Adam step per
    /// batch. Each instance draws from its own RNG stream derived from
    /// (seed, epoch, instance index).
    pub fn train_epoch(&mut self, instances: &[TrainInstance<EntityId>]) -> Result<EpochMetrics> {
        self.epoch += 1;
        let epoch_seed = self
            .cfg
            .seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(self.epoch as u64);
        let mut order: Vec<usize> = (0..instances.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));

        let mut m = EpochMetrics {
            epoch: self.epoch,
            ..Default::default()
        };
        let (mut walks, mut n) = (0usize, 0usize);
        for batch in order.chunks(self.cfg.batch_size) {
            // fixed-size shards summed in order keep results independent of thread count
            let shards: Vec<Result<(Model, EpochMetrics, usize)>> = batch
                .par_chunks(GRAD_SHARD)
                .map(|shard| self.shard_grad(shard, instances, epoch_seed))
                .collect();
            let mut grads: Option<Model> = None;
            for shard in shards {
                let (g, part, w) = shard?;
                match grads.as_mut() {
                    Some(acc) => acc.add_scaled(1.0, &g),
                    None => grads = Some(g),
                }
                m.l_ce += part.l_ce;
                m.l_path += part.l_path;
                m.l_se += part.l_se;
                m.mean_terminal_reward += part.mean_terminal_reward;
                m.mean_midpoint_reward += part.mean_midpoint_reward;
                m.skipped_walks += part.skipped_walks;
                walks += w;
            }
            n += batch.len();
            let mut grads = grads.expect("non-empty batch");
            grads.for_each_mut(|_, g| g.scale(1.0 / batch.len() as f64));
            self.adam.step(&mut self.model, &grads);
            let bad = self.model.non_finite();
            if !bad.is_empty() {
                return Err(Error::NonFinite(format!(
                    "parameters {bad:?} after epoch {} step {}",
                    self.epoch,
                    self.adam.steps()
                )));
            }
        }
        let nf = n.max(1) as f64;
        m.l_ce /= nf;
        m.l_path /= nf;
        m.l_se /= nf;
        let wf = walks.max(1) as f64;
        m.mean_terminal_reward /= wf;
        m.mean_midpoint_reward /= wf;
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::PolicyDims;
    use crate::kg::{EntityKind, Registry, Relation, Triple};
    use crate::session_encoder::EncoderKind;

    #[test]
    fn returns_examples() {
        let g = returns(&[0.0, 4.0], 0.99);
        assert_eq!(g, vec![3.96, 4.0]);
        assert_eq!(returns(&[1.0, 1.0], 1.0), vec![2.0, 1.0]);
        assert_eq!(returns(&[2.5], 0.9), vec![2.5]);
    }

    fn one_step_episode(reward: f64, log_prob: f64, d_state: usize) -> Episode {
        Episode {
            kind: WalkKind::Short,
            start: EntityId(0),
            steps: vec![Step {
                current: EntityId(0),
                actions: ActionSpace { actions: vec![] },
                action_index: 0,
                state: vec![0.0; d_state],
                log_prob,
                reward,
            }],
        }
    }

    #[test]
    fn path_loss_examples() {
        let dims = PolicyDims {
            d: 2,
            d_se: 2,
            d_proj: 2,
        };
        let params = PolicyParams::new(dims, 0);
        let ep = one_step_episode(2.0, 0.5f64.ln(), dims.state());
        let l = path_loss(&ep, &params, 0.99).unwrap();
        assert!((l.policy - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert!((l.value - 2.0).abs() < 1e-12);
        let det = one_step_episode(2.0, 0.0, dims.state());
        assert_eq!(path_loss(&det, &params, 0.99).unwrap().policy, 0.0);
    }

    #[test]
    fn zero_advantage_is_zero_loss() {
        let dims = PolicyDims {
            d: 1,
            d_se: 1,
            d_proj: 1,
        };
        let mut params = PolicyParams::new(dims, 0);
        params.v_path.set(0, 0, 1.0);
        let mut ep = one_step_episode(3.0, -0.7, 3);
        ep.steps[0].state = vec![3.0, 0.0, 0.0];
        let l = path_loss(&ep, &params, 0.99).unwrap();
        assert_eq!((l.policy, l.value), (0.0, 0.0));
    }

    #[test]
    fn session_loss_examples() {
        let dims = PolicyDims {
            d: 1,
            d_se: 2,
            d_proj: 1,
        };
        let params = PolicyParams::new(dims, 0);
        let l = session_loss(&[0.3, 0.1], 0.25f64.ln(), 5.0, &params).unwrap();
        assert!((l.total() - (5.0 * 4f64.ln() + 12.5)).abs() < 1e-12);
        assert!((l.total() - 19.43).abs() < 5e-3);
        assert_eq!(
            session_loss(&[0.3, 0.1], 0.0, 5.0, &params).unwrap().policy,
            0.0
        );
    }

    /// Two brands with three products each; users buy within a brand.
    fn toy() -> (KnowledgeGraph, Vec<TrainInstance<EntityId>>) {
        let mut reg = Registry::new();
        let mut triples = Vec::new();
        let mut products = Vec::new();
        for b in 0..2 {
            let brand = reg.intern(EntityKind::Brand, &format!("b{b}"));
            for i in 0..3 {
                let p = reg.intern(EntityKind::Product, &format!("p{b}{i}"));
                triples.push(Triple::new(p, Relation::ProducedBy, brand));
                products.push(p);
            }
        }
        let u = reg.intern(EntityKind::User, "u");
        triples.push(Triple::new(u, Relation::Purchase, products[0]));
        let g = KnowledgeGraph::finalize(reg, triples).unwrap();
        let insts = vec![
            TrainInstance {
                prefix: vec![products[0], products[3]],
                t_list: vec![products[1], products[2]],
                user: u,
            },
            TrainInstance {
                prefix: vec![products[4]],
                t_list: vec![products[5]],
                user: u,
            },
        ];
        (g, insts)
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            lr: 0.01,
            alpha: 0.5,
            beta: 0.5,
            batch_size: 2,
            action_dropout: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn epochs_are_deterministic() {
        let (g, insts) = toy();
        let table = EmbeddingTable::init(g.num_entities(), 4, 0).unwrap();
        let vocab = ItemVocab::from_graph(&g);
        let mids = MidpointIndex::new();
        let dims = PolicyDims {
            d: 4,
            d_se: 4,
            d_proj: 4,
        };
        let run = || {
            let ctx = Context {
                graph: &g,
                table: &table,
                vocab: &vocab,
                midpoints: &mids,
            };
            let model = Model::new(EncoderKind::Recurrent, vocab.len(), dims, 3);
            let mut tr = Trainer::new(ctx, model, small_cfg()).unwrap();
            let metrics: Vec<_> = (0..3).map(|_| tr.train_epoch(&insts).unwrap()).collect();
            (metrics, tr.into_model())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn zero_weights_reduce_to_supervised_training() {
        let (g, insts) = toy();
        let table = EmbeddingTable::init(g.num_entities(), 4, 0).unwrap();
        let vocab = ItemVocab::from_graph(&g);
        let mids = MidpointIndex::new();
        let dims = PolicyDims {
            d: 4,
            d_se: 4,
            d_proj: 4,
        };
        let cfg = TrainConfig {
            alpha: 0.0,
            beta: 0.0,
            batch_size: 8,
            ..small_cfg()
        };
        let init = Model::new(EncoderKind::Attention, vocab.len(), dims, 9);

        let ctx = Context {
            graph: &g,
            table: &table,
            vocab: &vocab,
            midpoints: &mids,
        };
        let mut tr = Trainer::new(ctx, init.clone(), cfg.clone()).unwrap();
        tr.train_epoch(&insts).unwrap();
        let joint = tr.into_model();

        // supervised-only reference: CE gradient alone, same optimizer
        let mut reference = init.clone();
        let mut grads = init.zeros_like();
        for inst in &insts {
            let cache = init.encoder.forward(&vocab, &inst.prefix).unwrap();
            let slot = vocab.slot(inst.t_list[0]).unwrap();
            let d_logits = ce_loss_grad(&cache.state.item_scores, slot);
            init.encoder
                .backward(&cache, &[0.0; 4], &d_logits, &mut grads.encoder);
        }
        grads.for_each_mut(|_, m| m.scale(1.0 / insts.len() as f64));
        Adam::new(cfg.lr).step(&mut reference, &grads);
        let mut a = Vec::new();
        joint.for_each(|_, m| a.extend_from_slice(m.data()));
        let mut b = Vec::new();
        reference.for_each(|_, m| b.extend_from_slice(m.data()));
        // batch order differs, so sums may differ in the last bits
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-9, "{x} vs {y}");
        }
        assert_eq!(joint.policy, init.policy);
    }

    #[test]
    fn walks_have_two_steps() {
        let (g, insts) = toy();
        let table = EmbeddingTable::init(g.num_entities(), 4, 0).unwrap();
        let vocab = ItemVocab::from_graph(&g);
        let mids = MidpointIndex::new();
        let ctx = Context {
            graph: &g,
            table: &table,
            vocab: &vocab,
            midpoints: &mids,
        };
        let dims = PolicyDims {
            d: 4,
            d_se: 4,
            d_proj: 4,
        };
        let model = Model::new(EncoderKind::Recurrent, vocab.len(), dims, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for inst in &insts {
            let ro = rollout(&ctx, &model, &small_cfg(), inst, &mut rng).unwrap();
            assert_eq!(ro.episodes().count(), 2);
            for ep in ro.episodes() {
                assert_eq!(ep.steps.len(), PATH_LEN);
                let mut at = ep.start;
                for s in &ep.steps {
                    assert_eq!(s.current, at);
                    let (r, e) = s.action();
                    assert!(g.has_edge(at, r, e));
                    at = e;
                }
                assert!(ep.steps.iter().all(|s| s.reward.is_finite()));
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig {
            gamma: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            action_dropout: 1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }
}
