//! Typed knowledge graph: entity registry, relation schema, and the frozen
//! adjacency-indexed graph that path reasoning walks over.

mod build;
mod io;

pub use build::{
    add_cooccur, add_purchases, ingest_image_features, ingest_metadata, merge_duplicate_edges,
    relation_counts, split_relations, title_tokens, MergeReport,
};
pub use io::{
    read_graph, write_graph, write_stats, GraphStats, ENTITIES_FILE, STATS_FILE, TRIPLES_FILE,
};

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    User,
    Product,
    Brand,
    Category,
    ImageFeature,
    TitleFeature,
    RelatedProduct,
    Movie,
    Genre,
    Director,
    Actor,
    Tag,
    Region,
}

impl EntityKind {
    pub const ALL: [EntityKind; 13] = [
        EntityKind::User,
        EntityKind::Product,
        EntityKind::Brand,
        EntityKind::Category,
        EntityKind::ImageFeature,
        EntityKind::TitleFeature,
        EntityKind::RelatedProduct,
        EntityKind::Movie,
        EntityKind::Genre,
        EntityKind::Director,
        EntityKind::Actor,
        EntityKind::Tag,
        EntityKind::Region,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EntityKind::User => "user",
            EntityKind::Product => "product",
            EntityKind::Brand => "brand",
            EntityKind::Category => "category",
            EntityKind::ImageFeature => "image_feature",
            EntityKind::TitleFeature => "title_feature",
            EntityKind::RelatedProduct => "related_product",
            EntityKind::Movie => "movie",
            EntityKind::Genre => "genre",
            EntityKind::Director => "director",
            EntityKind::Actor => "actor",
            EntityKind::Tag => "tag",
            EntityKind::Region => "region",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    /// Kinds that can be recommended (and that sessions are made of).
    pub fn is_item(self) -> bool {
        matches!(self, EntityKind::Product | EntityKind::Movie)
    }
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Dense entity index. The entity's kind lives in the [`Registry`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct EntityId(pub u32);

impl EntityId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Forward relation types: the e-commerce set plus the movie-only relations.
/// `belong_to` and `produced_by` are shared between the two domains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Relation {
    Purchase,
    ProducedBy,
    BelongTo,
    ImageSim,
    TitleSim,
    AlsoBought,
    AlsoViewed,
    ViewedBought,
    BoughtTogether,
    AlsoBoughtDiff,
    AlsoViewedDiff,
    BoughtViewedDiff,
    BoughtTogetherDiff,
    CoOccur,
    DirectedBy,
    ActedBy,
    DescribedAs,
}

use EntityKind as K;

impl Relation {
    pub const ALL: [Relation; 17] = [
        Relation::Purchase,
        Relation::ProducedBy,
        Relation::BelongTo,
        Relation::ImageSim,
        Relation::TitleSim,
        Relation::AlsoBought,
        Relation::AlsoViewed,
        Relation::ViewedBought,
        Relation::BoughtTogether,
        Relation::AlsoBoughtDiff,
        Relation::AlsoViewedDiff,
        Relation::BoughtViewedDiff,
        Relation::BoughtTogetherDiff,
        Relation::CoOccur,
        Relation::DirectedBy,
        Relation::ActedBy,
        Relation::DescribedAs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Relation::Purchase => "purchase",
            Relation::ProducedBy => "produced_by",
            Relation::BelongTo => "belong_to",
            Relation::ImageSim => "image_sim",
            Relation::TitleSim => "title_sim",
            Relation::AlsoBought => "also_bought",
            Relation::AlsoViewed => "also_viewed",
            Relation::ViewedBought => "viewed_bought",
            Relation::BoughtTogether => "bought_together",
            Relation::AlsoBoughtDiff => "also_bought_diff",
            Relation::AlsoViewedDiff => "also_viewed_diff",
            Relation::BoughtViewedDiff => "bought_viewed_diff",
            Relation::BoughtTogetherDiff => "bought_together_diff",
            Relation::CoOccur => "co_occur",
            Relation::DirectedBy => "directed_by",
            Relation::ActedBy => "acted_by",
            Relation::DescribedAs => "described_as",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.name() == s)
    }

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&r| r == self).unwrap()
    }

    /// Allowed (head kind, tail kind) pairs.
    pub fn signatures(self) -> &'static [(EntityKind, EntityKind)] {
        match self {
            Relation::Purchase => &[(K::User, K::Product), (K::User, K::Movie)],
            Relation::ProducedBy => &[(K::Product, K::Brand), (K::Movie, K::Region)],
            Relation::BelongTo => &[(K::Product, K::Category), (K::Movie, K::Genre)],
            Relation::ImageSim => &[(K::Product, K::ImageFeature)],
            Relation::TitleSim => &[(K::Product, K::TitleFeature)],
            Relation::AlsoBought
            | Relation::AlsoViewed
            | Relation::ViewedBought
            | Relation::BoughtTogether => &[(K::Product, K::Product)],
            Relation::AlsoBoughtDiff
            | Relation::AlsoViewedDiff
            | Relation::BoughtViewedDiff
            | Relation::BoughtTogetherDiff => &[(K::Product, K::RelatedProduct)],
            Relation::CoOccur => &[(K::Product, K::Product), (K::Movie, K::Movie)],
            Relation::DirectedBy => &[(K::Movie, K::Director)],
            Relation::ActedBy => &[(K::Movie, K::Actor)],
            Relation::DescribedAs => &[(K::Movie, K::Tag)],
        }
    }

    pub fn accepts(self, head: EntityKind, tail: EntityKind) -> bool {
        self.signatures().contains(&(head, tail))
    }

    pub fn forward(self) -> RelationKind {
        RelationKind {
            rel: self,
            inverse: false,
        }
    }

    pub fn inverse(self) -> RelationKind {
        RelationKind {
            rel: self,
            inverse: true,
        }
    }
}

/// A walkable edge label: a forward relation or its materialized inverse twin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RelationKind {
    pub rel: Relation,
    pub inverse: bool,
}

impl RelationKind {
    pub fn name(self) -> String {
        if self.inverse {
            format!("{}_inverse", self.rel.name())
        } else {
            self.rel.name().to_string()
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s.strip_suffix("_inverse") {
            Some(base) => Relation::from_name(base).map(Relation::inverse),
            None => Relation::from_name(s).map(Relation::forward),
        }
    }

    pub fn twin(self) -> Self {
        RelationKind {
            rel: self.rel,
            inverse: !self.inverse,
        }
    }
}

impl PartialOrd for RelationKind {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

// Ordered by name so adjacency and tie-breaking follow (relation name, entity index).
impl Ord for RelationKind {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.rel.name(), self.inverse).cmp(&(other.rel.name(), other.inverse))
    }
}

impl fmt::Display for RelationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// A forward (head, relation, tail) fact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: EntityId,
    pub rel: Relation,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: EntityId, rel: Relation, tail: EntityId) -> Self {
        Triple { head, rel, tail }
    }
}

/// Interns `(kind, external key)` pairs to dense ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Registry {
    entries: Vec<(EntityKind, String)>,
    index: HashMap<(EntityKind, String), EntityId>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, kind: EntityKind, key: &str) -> EntityId {
        let key = sanitize_key(key);
        if let Some(&id) = self.index.get(&(kind, key.clone())) {
            return id;
        }
        let id = EntityId(self.entries.len() as u32);
        self.entries.push((kind, key.clone()));
        self.index.insert((kind, key), id);
        id
    }

    pub fn get(&self, kind: EntityKind, key: &str) -> Option<EntityId> {
        self.index.get(&(kind, key.to_string())).copied()
    }

    /// Resolves an item key to a product or movie entity.
    pub fn item(&self, key: &str) -> Option<EntityId> {
        self.get(EntityKind::Product, key)
            .or_else(|| self.get(EntityKind::Movie, key))
    }

    pub fn kind(&self, id: EntityId) -> EntityKind {
        self.entries[id.index()].0
    }

    pub fn key(&self, id: EntityId) -> &str {
        &self.entries[id.index()].1
    }

    pub fn contains(&self, id: EntityId) -> bool {
        id.index() < self.entries.len()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = EntityId> {
        (0..self.entries.len() as u32).map(EntityId)
    }

    pub fn ids_of(&self, kind: EntityKind) -> impl Iterator<Item = EntityId> + '_ {
        self.ids().filter(move |&id| self.kind(id) == kind)
    }

    /// Restores a registry from `(kind, key)` rows in index order.
    pub fn from_entries(rows: Vec<(EntityKind, String)>) -> Result<Self> {
        let mut reg = Registry::new();
        for (kind, key) in rows {
            let before = reg.len();
            reg.intern(kind, &key);
            if reg.len() == before {
                return Err(Error::Schema(format!("duplicate entity {kind}:{key}")));
            }
        }
        Ok(reg)
    }
}

fn sanitize_key(key: &str) -> String {
    key.trim()
        .chars()
        .map(|c| {
            if c == '\t' || c == '\n' || c == '\r' {
                ' '
            } else {
                c
            }
        })
        .collect()
}

/// Frozen graph. Adjacency holds every forward edge and its inverse twin,
/// sorted by (relation name, direction, entity index).
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeGraph {
    registry: Registry,
    triples: Vec<Triple>,
    adjacency: Vec<Vec<(RelationKind, EntityId)>>,
    edge_counts: BTreeMap<String, usize>,
}

impl KnowledgeGraph {
    /// Validates, deduplicates, materializes inverses and freezes.
    pub fn finalize(registry: Registry, triples: impl IntoIterator<Item = Triple>) -> Result<Self> {
        let mut triples: Vec<Triple> = triples.into_iter().collect();
        for t in &triples {
            for id in [t.head, t.tail] {
                if !registry.contains(id) {
                    return Err(Error::MalformedGraph(format!(
                        "dangling entity id {} in {} triple",
                        id.0,
                        t.rel.name()
                    )));
                }
            }
            let (hk, tk) = (registry.kind(t.head), registry.kind(t.tail));
            if !t.rel.accepts(hk, tk) {
                return Err(Error::Schema(format!(
                    "{} does not accept {hk} -> {tk} ({} -> {})",
                    t.rel.name(),
                    registry.key(t.head),
                    registry.key(t.tail)
                )));
            }
        }
        triples.sort();
        triples.dedup();

        let mut adjacency = vec![Vec::new(); registry.len()];
        let mut edge_counts = BTreeMap::new();
        for t in &triples {
            adjacency[t.head.index()].push((t.rel.forward(), t.tail));
            adjacency[t.tail.index()].push((t.rel.inverse(), t.head));
            *edge_counts.entry(t.rel.forward().name()).or_insert(0) += 1;
            *edge_counts.entry(t.rel.inverse().name()).or_insert(0) += 1;
        }
        for adj in &mut adjacency {
            adj.sort();
            adj.dedup();
        }
        Ok(KnowledgeGraph {
            registry,
            triples,
            adjacency,
            edge_counts,
        })
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    /// Sorted, deduplicated forward triples.
    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn neighbors(&self, e: EntityId) -> &[(RelationKind, EntityId)] {
        &self.adjacency[e.index()]
    }

    pub fn has_edge(&self, head: EntityId, rel: RelationKind, tail: EntityId) -> bool {
        self.registry.contains(head)
            && self.adjacency[head.index()]
                .binary_search(&(rel, tail))
                .is_ok()
    }

    pub fn num_entities(&self) -> usize {
        self.registry.len()
    }

    /// Directed edge counts keyed by relation-kind name (inverse twins included).
    pub fn edge_counts(&self) -> &BTreeMap<String, usize> {
        &self.edge_counts
    }

    pub fn num_directed_edges(&self) -> usize {
        self.triples.len() * 2
    }

    pub fn kind(&self, e: EntityId) -> EntityKind {
        self.registry.kind(e)
    }

    /// Item entities (products and movies), in index order.
    pub fn items(&self) -> Vec<EntityId> {
        self.registry
            .ids()
            .filter(|&id| self.registry.kind(id).is_item())
            .collect()
    }
}
