//! Probabilistic beam search over the trained policies and top-K assembly
//! with explanation paths.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{build_action_space, path_eval, session_eval, PolicyParams};
use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, Registry, RelationKind};
use crate::kg_embed::EmbeddingTable;
use crate::model::Model;
use crate::session_encoder::ItemVocab;
use crate::tensor::sigmoid;

type Scored = ((RelationKind, EntityId), f64);
use crate::trainer::{start_candidates, PATH_LEN};

pub const DEFAULT_WIDTHS: [usize; 2] = [100, 1];

#[derive(Debug, Clone, PartialEq)]
pub struct ReasonPath {
    pub start: EntityId,
    pub hops: [(RelationKind, EntityId); PATH_LEN],
    pub log_prob: f64,
}

impl ReasonPath {
    pub fn terminal(&self) -> EntityId {
        self.hops[PATH_LEN - 1].1
    }

    pub fn prob(&self) -> f64 {
        self.log_prob.exp()
    }

    pub fn is_valid(&self, graph: &KnowledgeGraph) -> bool {
        let mut at = self.start;
        for &(r, e) in &self.hops {
            if !graph.has_edge(at, r, e) {
                return false;
            }
            at = e;
        }
        true
    }
}

/// Everything a walk needs besides the start entity.
pub struct Walker<'a> {
    pub graph: &'a KnowledgeGraph,
    pub table: &'a EmbeddingTable,
    pub params: &'a PolicyParams,
    pub a_max: usize,
}

/// How walk candidates are selected at each hop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchMode {
    /// Keep the highest-probability actions.
    Beam,
    /// Draw each hop's actions from the policy with a seeded RNG.
    Sample { seed: u64 },
}

impl Walker<'_> {
    /// Log-probabilities of every eval-mode action at `curr`.
    fn step(
        &self,
        s_se: &[f64],
        start: EntityId,
        curr: EntityId,
    ) -> Result<Vec<((RelationKind, EntityId), f64)>> {
        let mut never = rand::rngs::mock::StepRng::new(0, 0);
        let actions =
            build_action_space(self.graph, curr, self.table, self.a_max, None, &mut never)?;
        let mut state = s_se.to_vec();
        state.extend_from_slice(self.table.lookup(start)?);
        state.extend_from_slice(self.table.lookup(curr)?);
        let (eval, _) = path_eval(self.params, &state, &actions, self.table)?;
        Ok(actions.actions.into_iter().zip(eval.log_probs).collect())
    }

    /// Highest-probability expansion: `widths[0]` first hops, then
    /// `widths[1]` second hops from each. Ties break on (relation name,
    /// entity index). Output is sorted by log-probability, best first.
    pub fn beam_search(
        &self,
        s_se: &[f64],
        start: EntityId,
        widths: &[usize],
    ) -> Result<Vec<ReasonPath>> {
        self.search(s_se, start, widths, &mut |scored, w| top(scored, w))
    }

    /// Like [`Walker::beam_search`] but each hop draws `widths[i]` actions
    /// (with replacement, deduplicated) from the policy distribution.
    pub fn sample_paths<R: Rng + ?Sized>(
        &self,
        s_se: &[f64],
        start: EntityId,
        widths: &[usize],
        rng: &mut R,
    ) -> Result<Vec<ReasonPath>> {
        self.search(s_se, start, widths, &mut |scored, w| {
            let mut picked: Vec<usize> = (0..w)
                .map(|_| {
                    let u: f64 = rng.gen();
                    let mut acc = 0.0;
                    scored
                        .iter()
                        .position(|(_, lp)| {
                            acc += lp.exp();
                            u < acc
                        })
                        .unwrap_or(scored.len() - 1)
                })
                .collect();
            picked.sort_unstable();
            picked.dedup();
            picked.into_iter().map(|i| scored[i]).collect()
        })
    }

    fn search(
        &self,
        s_se: &[f64],
        start: EntityId,
        widths: &[usize],
        select: &mut dyn FnMut(&[Scored], usize) -> Vec<Scored>,
    ) -> Result<Vec<ReasonPath>> {
        if widths.len() != PATH_LEN || widths.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "beam widths must be {PATH_LEN} positive integers, got {widths:?}"
            )));
        }
        let mut out = Vec::new();
        for (a1, lp1) in select(&self.step(s_se, start, start)?, widths[0]) {
            for (a2, lp2) in select(&self.step(s_se, start, a1.1)?, widths[1]) {
                out.push(ReasonPath {
                    start,
                    hops: [a1, a2],
                    log_prob: lp1 + lp2,
                });
            }
        }
        out.sort_by(|a, b| {
            b.log_prob
                .total_cmp(&a.log_prob)
                .then_with(|| a.hops.cmp(&b.hops))
        });
        Ok(out)
    }
}

fn top(
    scored: &[((RelationKind, EntityId), f64)],
    w: usize,
) -> Vec<((RelationKind, EntityId), f64)> {
    let mut v = scored.to_vec();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    v.truncate(w);
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Long,
    Short,
    Fallback,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recommendation {
    pub item: EntityId,
    /// Best path probability, or the encoder's sigmoid score for fallbacks.
    pub score: f64,
    pub origin: Origin,
    pub best_path: Option<ReasonPath>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecommendConfig {
    pub k: usize,
    pub widths: Vec<usize>,
    pub a_max: usize,
    /// Off: only the last prefix item starts a walk.
    pub session_agent: bool,
    pub mode: SearchMode,
}

impl Default for RecommendConfig {
    fn default() -> Self {
        RecommendConfig {
            k: 20,
            widths: DEFAULT_WIDTHS.to_vec(),
            a_max: crate::agents::DEFAULT_A_MAX,
            session_agent: true,
            mode: SearchMode::Beam,
        }
    }
}

/// Top-K list for one prefix. Path-backed items come first, by best path
/// probability; remaining slots are filled from encoder scores. The list is
/// shorter than K only when the catalog runs out.
pub fn recommend(
    graph: &KnowledgeGraph,
    table: &EmbeddingTable,
    vocab: &ItemVocab,
    model: &Model,
    prefix: &[EntityId],
    cfg: &RecommendConfig,
) -> Result<Vec<Recommendation>> {
    if cfg.k == 0 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    let Some(&last) = prefix.last() else {
        return Err(Error::InvalidArgument("empty prefix".into()));
    };
    let state = crate::session_encoder::encode(&model.encoder, vocab, prefix)?;
    let walker = Walker {
        graph,
        table,
        params: &model.policy,
        a_max: cfg.a_max,
    };

    let mut starts = Vec::new();
    if cfg.session_agent {
        let cands = start_candidates(prefix);
        let eval = session_eval(&model.policy, &state.s_se, &cands, table)?;
        let best = (0..cands.len())
            .max_by(|&a, &b| eval.probs[a].total_cmp(&eval.probs[b]).then(b.cmp(&a)))
            .expect("non-empty candidates");
        starts.push((Origin::Long, cands[best]));
    }
    starts.push((Origin::Short, last));

    let mut best: HashMap<EntityId, (Origin, ReasonPath)> = HashMap::new();
    for (i, &(origin, start)) in starts.iter().enumerate() {
        if graph.neighbors(start).is_empty() {
            continue;
        }
        let paths = match cfg.mode {
            SearchMode::Beam => walker.beam_search(&state.s_se, start, &cfg.widths)?,
            SearchMode::Sample { seed } => {
                use rand::SeedableRng;
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
                walker.sample_paths(&state.s_se, start, &cfg.widths, &mut rng)?
            }
        };
        for p in paths {
            let t = p.terminal();
            if !graph.kind(t).is_item() || prefix.contains(&t) {
                continue;
            }
            match best.get(&t) {
                Some((_, q)) if q.log_prob >= p.log_prob => {}
                _ => {
                    best.insert(t, (origin, p));
                }
            }
        }
    }

    let mut recs: Vec<Recommendation> = best
        .into_iter()
        .map(|(item, (origin, p))| Recommendation {
            item,
            score: p.prob(),
            origin,
            best_path: Some(p),
        })
        .collect();
    recs.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.item.cmp(&b.item)));
    recs.truncate(cfg.k);

    if recs.len() < cfg.k {
        let mut fallback: Vec<(f64, EntityId)> = state
            .item_scores
            .iter()
            .enumerate()
            .map(|(slot, &l)| (sigmoid(l), vocab.item(slot)))
            .filter(|(_, e)| !prefix.contains(e) && !recs.iter().any(|r| r.item == *e))
            .collect();
        fallback.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let need = cfg.k - recs.len();
        recs.extend(
            fallback
                .into_iter()
                .take(need)
                .map(|(score, item)| Recommendation {
                    item,
                    score,
                    origin: Origin::Fallback,
                    best_path: None,
                }),
        );
    }
    Ok(recs)
}

/// 1-based rank of `target` in a recommendation list.
pub fn rank_of(recs: &[Recommendation], target: EntityId) -> Option<usize> {
    recs.iter().position(|r| r.item == target).map(|i| i + 1)
}

/// Arrow notation with original directions restored:
/// `a --belong_to--> c <--belong_to-- b`.
pub fn render_explanation(path: &ReasonPath, registry: &Registry) -> String {
    let mut s = registry.key(path.start).to_string();
    for &(r, e) in &path.hops {
        let name = r.rel.name();
        if r.inverse {
            s.push_str(&format!(" <--{name}-- "));
        } else {
            s.push_str(&format!(" --{name}--> "));
        }
        s.push_str(registry.key(e));
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HopJson {
    pub rel: &'static str,
    pub dir: &'static str,
    pub entity: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathJson {
    pub start: String,
    pub hops: Vec<HopJson>,
    pub terminal: String,
    pub log_prob: f64,
}

pub fn explanation_json(path: &ReasonPath, registry: &Registry) -> PathJson {
    PathJson {
        start: registry.key(path.start).to_string(),
        hops: path
            .hops
            .iter()
            .map(|&(r, e)| HopJson {
                rel: r.rel.name(),
                dir: if r.inverse { "backward" } else { "forward" },
                entity: registry.key(e).to_string(),
            })
            .collect(),
        terminal: registry.key(path.terminal()).to_string(),
        log_prob: path.log_prob,
    }
}
