//! Terminal multi-target reward, intermediate path-midpoint reward, and the
//! memoized midpoint index they read from.

use std::collections::{HashMap, HashSet};
use std::sync::{Arc, RwLock};

use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, RelationKind};
use crate::kg_embed::EmbeddingTable;
use crate::tensor::{dot, log_sigmoid};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardConfig {
    /// Number of successive targets.
    pub t: usize,
    /// Floor of the miss-branch similarity before the log.
    pub eps: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig { t: 5, eps: 1e-8 }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t == 0 {
            return Err(Error::InvalidArgument("T must be at least 1".into()));
        }
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "eps {} not in (0, 1)",
                self.eps
            )));
        }
        Ok(())
    }
}

/// `T − index` when `v_end` is among the first `T` targets; otherwise
/// `ln σ(e_end · e_tar0)`, floored at `ln eps`.
pub fn multi_target_reward(
    v_end: EntityId,
    t_list: &[EntityId],
    table: &EmbeddingTable,
    cfg: &RewardConfig,
) -> Result<f64> {
    let Some(&tar0) = t_list.first() else {
        return Err(Error::InvalidArgument("empty target list".into()));
    };
    if let Some(i) = t_list.iter().take(cfg.t).position(|&x| x == v_end) {
        return Ok((cfg.t - i) as f64);
    }
    let sim = dot(table.lookup(v_end)?, table.lookup(tar0)?);
    Ok(log_sigmoid(sim).max(cfg.eps.ln()))
}

type MidpointSet = Arc<[(RelationKind, EntityId)]>;

/// `(start, goal) → {(r, e)}` with `(start, r, e)` an edge and `e` adjacent to
/// `goal`. Filled lazily; concurrent readers share one lock-guarded map.
#[derive(Debug, Default)]
pub struct MidpointIndex {
    map: RwLock<HashMap<(EntityId, EntityId), MidpointSet>>,
}

impl MidpointIndex {
    pub fn new() -> Self {
        Self::default()
    }

    fn compute(graph: &KnowledgeGraph, start: EntityId, goal: EntityId) -> MidpointSet {
        // inverse closure: e → goal exists iff goal → e exists
        let near_goal: HashSet<EntityId> = graph.neighbors(goal).iter().map(|&(_, e)| e).collect();
        graph
            .neighbors(start)
            .iter()
            .filter(|(_, e)| near_goal.contains(e))
            .copied()
            .collect()
    }

    pub fn midpoints(
        &self,
        graph: &KnowledgeGraph,
        start: EntityId,
        goal: EntityId,
    ) -> MidpointSet {
        if let Some(found) = self.map.read().unwrap().get(&(start, goal)) {
            return found.clone();
        }
        let set = Self::compute(graph, start, goal);
        self.map
            .write()
            .unwrap()
            .entry((start, goal))
            .or_insert(set)
            .clone()
    }

    pub fn contains(
        &self,
        graph: &KnowledgeGraph,
        start: EntityId,
        goal: EntityId,
        action: (RelationKind, EntityId),
    ) -> bool {
        self.midpoints(graph, start, goal).contains(&action)
    }

    pub fn len(&self) -> usize {
        self.map.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(start, goal, relation, midpoint)` rows in sorted order, for debugging dumps.
    pub fn to_tsv(&self, graph: &KnowledgeGraph) -> String {
        let map = self.map.read().unwrap();
        let mut keys: Vec<_> = map.keys().copied().collect();
        keys.sort();
        let reg = graph.registry();
        let mut out = String::new();
        for k in keys {
            for &(r, e) in map[&k].iter() {
                out.push_str(&format!(
                    "{}\t{}\t{}\t{}\n",
                    reg.key(k.0),
                    reg.key(k.1),
                    r,
                    reg.key(e)
                ));
            }
        }
        out
    }
}

/// Eagerly fills the index for every `(start, goal)` pair.
pub fn build_midpoint_index(
    graph: &KnowledgeGraph,
    starts: &[EntityId],
    goals: &[EntityId],
) -> MidpointIndex {
    let index = MidpointIndex::new();
    for &s in starts {
        for &g in goals {
            index.midpoints(graph, s, g);
        }
    }
    index
}

/// `max(0, max_i {T − i : action is a midpoint from start toward t_list[i]})`
pub fn path_midpoint_reward(
    action: (RelationKind, EntityId),
    start: EntityId,
    t_list: &[EntityId],
    index: &MidpointIndex,
    graph: &KnowledgeGraph,
    cfg: &RewardConfig,
) -> f64 {
    t_list
        .iter()
        .take(cfg.t)
        .position(|&goal| index.contains(graph, start, goal, action))
        .map_or(0.0, |i| (cfg.t - i) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{EntityKind, Registry, Relation, Triple};
    use crate::tensor::Matrix;

    fn table_with(rows: Vec<Vec<f64>>) -> EmbeddingTable {
        let d = rows[0].len();
        let n = rows.len();
        let entity = Matrix::from_vec(n, d, rows.concat()).unwrap();
        EmbeddingTable::from_parts(entity, Matrix::zeros(Relation::ALL.len(), d)).unwrap()
    }

    #[test]
    fn hits_earn_t_minus_index() {
        let table = table_with(vec![vec![1.0]; 6]);
        let cfg = RewardConfig::default();
        let tl: Vec<EntityId> = (0..5).map(EntityId).collect();
        assert_eq!(
            multi_target_reward(EntityId(0), &tl, &table, &cfg).unwrap(),
            5.0
        );
        assert_eq!(
            multi_target_reward(EntityId(2), &tl, &table, &cfg).unwrap(),
            3.0
        );
        assert!(multi_target_reward(EntityId(0), &[], &table, &cfg).is_err());
    }

    #[test]
    fn miss_is_log_sigmoid_of_similarity() {
        let table = table_with(vec![vec![1.0, 0.0], vec![1.0, 5.0], vec![-50.0, 0.0]]);
        let cfg = RewardConfig::default();
        let r = multi_target_reward(EntityId(1), &[EntityId(0)], &table, &cfg).unwrap();
        assert!((r - (-0.31326168751822286)).abs() < 1e-12);
        let floor = multi_target_reward(EntityId(2), &[EntityId(0)], &table, &cfg).unwrap();
        assert_eq!(floor, cfg.eps.ln());
    }

    /// Entities 6, 32, 76, 7, 28 with edges 6→32, 6→76, 32→7, 32→28, 76→28,
    /// plus an isolated entity.
    fn fig5() -> (KnowledgeGraph, [EntityId; 6]) {
        let mut reg = Registry::new();
        let ids = ["6", "32", "76", "7", "28", "iso"].map(|k| reg.intern(EntityKind::Product, k));
        let [s, m1, m2, goal, other, _] = ids;
        let g = KnowledgeGraph::finalize(
            reg,
            [
                Triple::new(s, Relation::AlsoBought, m1),
                Triple::new(s, Relation::AlsoBought, m2),
                Triple::new(m1, Relation::AlsoBought, goal),
                Triple::new(m1, Relation::AlsoBought, other),
                Triple::new(m2, Relation::AlsoBought, other),
            ],
        )
        .unwrap();
        (g, ids)
    }

    #[test]
    fn midpoint_toward_goal() {
        let (g, [s, m1, m2, goal, _, _]) = fig5();
        let idx = build_midpoint_index(&g, &[s], &[goal]);
        let r = Relation::AlsoBought.forward();
        assert_eq!(&*idx.midpoints(&g, s, goal), &[(r, m1)]);
        let cfg = RewardConfig::default();
        assert_eq!(
            path_midpoint_reward((r, m1), s, &[goal], &idx, &g, &cfg),
            5.0
        );
        assert_eq!(
            path_midpoint_reward((r, m2), s, &[goal], &idx, &g, &cfg),
            0.0
        );
    }

    #[test]
    fn no_two_hop_connection_is_empty() {
        let (g, [s, m1, _, _, _, iso]) = fig5();
        let idx = MidpointIndex::new();
        assert!(idx.midpoints(&g, s, iso).is_empty());
        let cfg = RewardConfig::default();
        let r = Relation::AlsoBought.forward();
        assert_eq!(
            path_midpoint_reward((r, m1), s, &[iso], &idx, &g, &cfg),
            0.0
        );
    }

    #[test]
    fn inner_max_takes_earliest_target() {
        let (g, [s, m1, _, goal, other, iso]) = fig5();
        let idx = MidpointIndex::new();
        let cfg = RewardConfig::default();
        let r = Relation::AlsoBought.forward();
        // m1 leads toward tar_1 and tar_3 only
        let tl = [iso, goal, iso, other];
        assert_eq!(path_midpoint_reward((r, m1), s, &tl, &idx, &g, &cfg), 4.0);
    }
}
