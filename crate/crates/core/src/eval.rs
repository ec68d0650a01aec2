//! Ranking metrics and the evaluation harness.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::data_io::TrainInstance;
use crate::error::{Error, Result};
use crate::inference::{rank_of, recommend, RecommendConfig};
use crate::kg::{EntityId, KnowledgeGraph};
use crate::kg_embed::EmbeddingTable;
use crate::model::Model;
use crate::session_encoder::ItemVocab;

pub const DEFAULT_KS: [usize; 3] = [5, 10, 20];

/// 1 iff the target sits within the first `k` positions.
pub fn hit_rate(rank: Option<usize>, k: usize) -> f64 {
    match rank {
        Some(r) if r >= 1 && r <= k => 1.0,
        _ => 0.0,
    }
}

/// `1 / log2(rank + 1)` within the cutoff; a single relevant item makes the
/// ideal DCG 1.
pub fn ndcg(rank: Option<usize>, k: usize) -> f64 {
    match rank {
        Some(r) if r >= 1 && r <= k => 1.0 / ((r + 1) as f64).log2(),
        _ => 0.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub hr: BTreeMap<usize, f64>,
    pub ndcg: BTreeMap<usize, f64>,
    pub n_instances: usize,
}

impl MetricReport {
    /// Averages over 1-based target ranks (`None` = not in the list).
    pub fn from_ranks(ranks: &[Option<usize>], ks: &[usize]) -> Result<Self> {
        if ranks.is_empty() {
            return Err(Error::InvalidArgument("empty test set".into()));
        }
        if ks.contains(&0) {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        let n = ranks.len() as f64;
        let mean =
            |f: fn(Option<usize>, usize) -> f64, k| ranks.iter().map(|&r| f(r, k)).sum::<f64>() / n;
        Ok(MetricReport {
            hr: ks.iter().map(|&k| (k, mean(hit_rate, k))).collect(),
            ndcg: ks.iter().map(|&k| (k, mean(ndcg, k))).collect(),
            n_instances: ranks.len(),
        })
    }

    pub fn hr_at(&self, k: usize) -> f64 {
        self.hr.get(&k).copied().unwrap_or(f64::NAN)
    }

    pub fn ndcg_at(&self, k: usize) -> f64 {
        self.ndcg.get(&k).copied().unwrap_or(f64::NAN)
    }
}

/// Ranks each instance's first target in a top-`max(ks)` list.
pub fn target_ranks(
    graph: &KnowledgeGraph,
    table: &EmbeddingTable,
    vocab: &ItemVocab,
    model: &Model,
    instances: &[TrainInstance<EntityId>],
    rec: &RecommendConfig,
) -> Result<Vec<Option<usize>>> {
    instances
        .par_iter()
        .map(|inst| {
            let recs = recommend(graph, table, vocab, model, &inst.prefix, rec)?;
            Ok(rank_of(&recs, *inst.target()))
        })
        .collect()
}

pub fn evaluate(
    graph: &KnowledgeGraph,
    table: &EmbeddingTable,
    vocab: &ItemVocab,
    model: &Model,
    instances: &[TrainInstance<EntityId>],
    ks: &[usize],
    rec: &RecommendConfig,
) -> Result<MetricReport> {
    if instances.is_empty() {
        return Err(Error::InvalidArgument("empty test set".into()));
    }
    let k_max = ks.iter().copied().max().unwrap_or(1);
    let rec = RecommendConfig {
        k: k_max.max(rec.k),
        ..rec.clone()
    };
    let ranks = target_ranks(graph, table, vocab, model, instances, &rec)?;
    MetricReport::from_ranks(&ranks, ks)
}

/// Component toggles compared in the ablation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Components {
    pub image_features: bool,
    pub merge_edges: bool,
    pub session_agent: bool,
    pub midpoint_reward: bool,
    pub multi_target: bool,
}

impl Default for Components {
    fn default() -> Self {
        Components {
            image_features: true,
            merge_edges: true,
            session_agent: true,
            midpoint_reward: true,
            multi_target: true,
        }
    }
}

/// The full model and one variant per disabled component.
pub fn ablation_variants() -> Vec<(&'static str, Components)> {
    let full = Components::default();
    vec![
        ("PR4SR", full),
        (
            "PR4SR-Image",
            Components {
                image_features: false,
                ..full
            },
        ),
        (
            "PR4SR-Merge_Edge",
            Components {
                merge_edges: false,
                ..full
            },
        ),
        (
            "PR4SR-Session_Level_Agent",
            Components {
                session_agent: false,
                ..full
            },
        ),
        (
            "PR4SR-Midpoint_Reward",
            Components {
                midpoint_reward: false,
                ..full
            },
        ),
        (
            "PR4SR-Multi_Target_Reward",
            Components {
                multi_target: false,
                ..full
            },
        ),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub k: usize,
    pub hr: f64,
    pub ndcg: f64,
    pub n: usize,
    pub seed: u64,
}

pub const ABLATION_HEADER: &str = "variant,k,hr,ndcg,n,seed";

pub fn ablation_rows(variant: &str, seed: u64, report: &MetricReport) -> Vec<AblationRow> {
    report
        .hr
        .keys()
        .map(|&k| AblationRow {
            variant: variant.to_string(),
            k,
            hr: report.hr_at(k),
            ndcg: report.ndcg_at(k),
            n: report.n_instances,
            seed,
        })
        .collect()
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = format!("{ABLATION_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{:.6},{:.6},{},{}",
            r.variant, r.k, r.hr, r.ndcg, r.n, r.seed
        );
    }
    s
}

/// Median of a non-empty sample (mean of the middle pair for even sizes).
pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn metric_examples() {
        assert_eq!(hit_rate(Some(3), 5), 1.0);
        assert_eq!(hit_rate(Some(6), 5), 0.0);
        assert_eq!(hit_rate(None, 5), 0.0);
        assert_eq!(ndcg(Some(1), 5), 1.0);
        assert_eq!(ndcg(Some(3), 5), 0.5);
        assert_eq!(ndcg(Some(3), 2), 0.0);
    }

    #[test]
    fn averaging() {
        let r = MetricReport::from_ranks(&[Some(1), None], &DEFAULT_KS).unwrap();
        assert_eq!(r.hr_at(5), 0.5);
        assert_eq!(r.ndcg_at(5), 0.5);
        let all = MetricReport::from_ranks(&[Some(1); 4], &DEFAULT_KS).unwrap();
        assert!(all.hr.values().chain(all.ndcg.values()).all(|&v| v == 1.0));
        assert!(MetricReport::from_ranks(&[], &DEFAULT_KS).is_err());
    }

    #[test]
    fn random_ranker_hit_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ranks: Vec<_> = (0..1000).map(|_| Some(rng.gen_range(1..=100))).collect();
        let r = MetricReport::from_ranks(&ranks, &[5]).unwrap();
        assert!((r.hr_at(5) - 0.05).abs() <= 0.02, "{}", r.hr_at(5));
    }

    #[test]
    fn six_named_variants() {
        let v = ablation_variants();
        assert_eq!(v.len(), 6);
        assert_eq!(v[3].0, "PR4SR-Session_Level_Agent");
        assert!(!v[3].1.session_agent);
    }

    #[test]
    fn csv_schema() {
        let r = MetricReport::from_ranks(&[Some(2)], &[5, 10]).unwrap();
        let csv = ablation_csv(&ablation_rows("PR4SR", 3, &r));
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], "variant,k,hr,ndcg,n,seed");
        assert_eq!(lines[1], "PR4SR,5,1.000000,0.630930,1,3");
    }

    #[test]
    fn median_examples() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    proptest! {
        #[test]
        fn metrics_are_monotone_and_bounded(ranks in proptest::collection::vec(proptest::option::of(1usize..40), 1..50)) {
            let r = MetricReport::from_ranks(&ranks, &DEFAULT_KS).unwrap();
            let ks = DEFAULT_KS;
            for w in ks.windows(2) {
                prop_assert!(r.hr_at(w[0]) <= r.hr_at(w[1]));
                prop_assert!(r.ndcg_at(w[0]) <= r.ndcg_at(w[1]));
            }
            for k in ks {
                prop_assert!((0.0..=1.0).contains(&r.hr_at(k)));
                prop_assert!(r.ndcg_at(k) <= r.hr_at(k) + 1e-15);
            }
        }
    }
}
