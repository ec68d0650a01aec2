//! Construction transforms: metadata and image-label ingestion, domain-based
//! relation splitting, duplicate-edge merging, and session-derived edges.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use super::{EntityId, EntityKind, Registry, Relation, Triple};
use crate::data_io::Session;
use crate::error::{Error, Result};

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "by", "for", "from", "in", "into", "is", "it",
    "its", "of", "on", "or", "the", "this", "to", "with", "x", "oz", "pack", "pcs", "set",
];

/// Lowercased alphanumeric tokens with stopwords removed, first occurrence order.
pub fn title_tokens(title: &str) -> Vec<String> {
    let mut seen = HashSet::new();
    title
        .split(|c: char| !c.is_alphanumeric())
        .map(str::to_lowercase)
        .filter(|t| t.len() > 1 && !STOPWORDS.contains(&t.as_str()))
        .filter(|t| !t.chars().all(|c| c.is_ascii_digit()))
        .filter(|t| seen.insert(t.clone()))
        .collect()
}

fn str_list(v: Option<&Value>) -> Vec<String> {
    let mut out = Vec::new();
    fn walk(v: &Value, out: &mut Vec<String>) {
        match v {
            Value::String(s) if !s.trim().is_empty() => out.push(s.trim().to_string()),
            Value::Array(xs) => xs.iter().for_each(|x| walk(x, out)),
            _ => {}
        }
    }
    if let Some(v) = v {
        walk(v, &mut out);
    }
    out
}

/// Looks a field up at top level, then under `related` (the raw Amazon layout).
fn related_field<'a>(obj: &'a Value, name: &str) -> Option<&'a Value> {
    obj.get(name)
        .or_else(|| obj.get("related").and_then(|r| r.get(name)))
}

fn product_id(obj: &Value) -> Option<String> {
    ["asin", "id", "item"]
        .iter()
        .find_map(|k| obj.get(*k).and_then(Value::as_str))
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
}

/// Parses product metadata (JSON lines) into attribute and raw co-behaviour
/// triples. Referenced ids that are not in the metadata become
/// `related_product` entities; ids already registered as products (e.g. from
/// the interaction log) stay products.
pub fn ingest_metadata(path: &Path, registry: &mut Registry) -> Result<Vec<Triple>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let obj: Value =
            serde_json::from_str(&line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        let Some(id) = product_id(&obj) else {
            return Err(Error::parse(
                path,
                i + 1,
                "object has no product id (asin/id)",
            ));
        };
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateProduct(id));
        }
        rows.push((id, obj));
    }

    // Register every described product first so forward references resolve.
    let products: Vec<EntityId> = rows
        .iter()
        .map(|(id, _)| registry.intern(EntityKind::Product, id))
        .collect();

    let mut triples = Vec::new();
    for (&p, (_, obj)) in products.iter().zip(&rows) {
        if let Some(brand) = obj.get("brand").and_then(Value::as_str) {
            if !brand.trim().is_empty() {
                let b = registry.intern(EntityKind::Brand, brand);
                triples.push(Triple::new(p, Relation::ProducedBy, b));
            }
        }
        for cat in str_list(obj.get("categories")) {
            let c = registry.intern(EntityKind::Category, &cat);
            triples.push(Triple::new(p, Relation::BelongTo, c));
        }
        let mut tokens = str_list(obj.get("title_tokens"));
        if tokens.is_empty() {
            if let Some(title) = obj.get("title").and_then(Value::as_str) {
                tokens = title_tokens(title);
            }
        }
        for tok in tokens {
            let f = registry.intern(EntityKind::TitleFeature, &tok.to_lowercase());
            triples.push(Triple::new(p, Relation::TitleSim, f));
        }
        for (field, rel) in [
            ("also_viewed", Relation::AlsoViewed),
            ("also_bought", Relation::AlsoBought),
            ("bought_together", Relation::BoughtTogether),
        ] {
            for other in str_list(related_field(obj, field)) {
                let tail = registry
                    .get(EntityKind::Product, &other)
                    .unwrap_or_else(|| registry.intern(EntityKind::RelatedProduct, &other));
                triples.push(Triple::new(p, rel, tail));
            }
        }
    }
    Ok(triples)
}

/// Keeps at most `top_k` labels per item whose confidence exceeds `min_conf`.
/// Labels for items that are not registered products are skipped.
pub fn ingest_image_features(
    path: &Path,
    registry: &mut Registry,
    min_conf: f64,
    top_k: usize,
) -> Result<Vec<Triple>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut per_item: BTreeMap<EntityId, Vec<(f64, String)>> = BTreeMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.trim_end_matches('\r').split('\t').collect();
        if cols.len() != 3 {
            return Err(Error::parse(
                path,
                i + 1,
                "expected item, label, confidence",
            ));
        }
        let conf: f64 = cols[2]
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, i + 1, format!("bad confidence '{}'", cols[2])))?;
        if !(0.0..=1.0).contains(&conf) {
            return Err(Error::parse(
                path,
                i + 1,
                format!("confidence {conf} outside [0, 1]"),
            ));
        }
        let Some(item) = registry.get(EntityKind::Product, cols[0].trim()) else {
            continue;
        };
        if conf > min_conf {
            per_item
                .entry(item)
                .or_default()
                .push((conf, cols[1].trim().to_string()));
        }
    }

    let mut triples = Vec::new();
    for (item, mut labels) in per_item {
        labels.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
        for (_, label) in labels.into_iter().take(top_k) {
            let f = registry.intern(EntityKind::ImageFeature, &label);
            triples.push(Triple::new(item, Relation::ImageSim, f));
        }
    }
    Ok(triples)
}

fn diff_of(rel: Relation) -> Option<Relation> {
    match rel {
        Relation::AlsoViewed => Some(Relation::AlsoViewedDiff),
        Relation::AlsoBought => Some(Relation::AlsoBoughtDiff),
        Relation::BoughtTogether => Some(Relation::BoughtTogetherDiff),
        _ => None,
    }
}

/// Renames co-behaviour edges whose tail is outside `product_domain` to their
/// `_diff` variant, re-keying the tail as a `related_product` entity.
pub fn split_relations(
    triples: Vec<Triple>,
    product_domain: &HashSet<EntityId>,
    registry: &mut Registry,
) -> Vec<Triple> {
    triples
        .into_iter()
        .map(|t| match diff_of(t.rel) {
            Some(diff) if !product_domain.contains(&t.tail) => {
                let tail = match registry.kind(t.tail) {
                    EntityKind::RelatedProduct => t.tail,
                    _ => {
                        let key = registry.key(t.tail).to_string();
                        registry.intern(EntityKind::RelatedProduct, &key)
                    }
                };
                Triple::new(t.head, diff, tail)
            }
            _ => t,
        })
        .collect()
}

/// Counts from [`merge_duplicate_edges`], mirroring the overlap statistics of
/// the construction report.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MergeReport {
    /// Unordered product pairs joined by both also_viewed and also_bought.
    pub overlapping_pairs: usize,
    /// (product, related_product) pairs joined by both `_diff` relations.
    pub overlapping_diff_pairs: usize,
    pub edges_before: usize,
    pub edges_after: usize,
    /// Share of also_viewed pairs that also carry also_bought.
    pub also_viewed_overlap: f64,
    /// Share of also_bought pairs that also carry also_viewed.
    pub also_bought_overlap: f64,
}

fn unordered(t: &Triple) -> (EntityId, EntityId) {
    (t.head.min(t.tail), t.head.max(t.tail))
}

/// Collapses product pairs carrying both also_viewed and also_bought into one
/// `viewed_bought` edge (head = lower index), and the `_diff` analogue into
/// `bought_viewed_diff`. Everything else passes through in input order.
pub fn merge_duplicate_edges(triples: Vec<Triple>) -> (Vec<Triple>, MergeReport) {
    let mut viewed = BTreeSet::new();
    let mut bought = BTreeSet::new();
    let mut viewed_diff = BTreeSet::new();
    let mut bought_diff = BTreeSet::new();
    for t in &triples {
        match t.rel {
            Relation::AlsoViewed => {
                viewed.insert(unordered(t));
            }
            Relation::AlsoBought => {
                bought.insert(unordered(t));
            }
            Relation::AlsoViewedDiff => {
                viewed_diff.insert((t.head, t.tail));
            }
            Relation::AlsoBoughtDiff => {
                bought_diff.insert((t.head, t.tail));
            }
            _ => {}
        }
    }
    let overlap: BTreeSet<_> = viewed.intersection(&bought).copied().collect();
    let overlap_diff: BTreeSet<_> = viewed_diff.intersection(&bought_diff).copied().collect();

    let frac = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
    let mut report = MergeReport {
        overlapping_pairs: overlap.len(),
        overlapping_diff_pairs: overlap_diff.len(),
        edges_before: triples.len(),
        also_viewed_overlap: frac(overlap.len(), viewed.len()),
        also_bought_overlap: frac(overlap.len(), bought.len()),
        ..Default::default()
    };

    let mut out: Vec<Triple> = triples
        .into_iter()
        .filter(|t| match t.rel {
            Relation::AlsoViewed | Relation::AlsoBought => !overlap.contains(&unordered(t)),
            Relation::AlsoViewedDiff | Relation::AlsoBoughtDiff => {
                !overlap_diff.contains(&(t.head, t.tail))
            }
            _ => true,
        })
        .collect();
    out.extend(
        overlap
            .iter()
            .map(|&(a, b)| Triple::new(a, Relation::ViewedBought, b)),
    );
    out.extend(
        overlap_diff
            .iter()
            .map(|&(p, r)| Triple::new(p, Relation::BoughtViewedDiff, r)),
    );
    report.edges_after = out.len();
    (out, report)
}

/// `co_occur` edges between adjacent items of the given (training) sessions,
/// deduplicated, self-pairs skipped.
pub fn add_cooccur(sessions: &[Session<EntityId>]) -> Vec<Triple> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for s in sessions {
        for w in s.items.windows(2) {
            if w[0] != w[1] && seen.insert((w[0], w[1])) {
                out.push(Triple::new(w[0], Relation::CoOccur, w[1]));
            }
        }
    }
    out
}

/// `purchase` edges from users to the items of the given (training) sessions.
pub fn add_purchases(sessions: &[Session<EntityId>]) -> Vec<Triple> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for s in sessions {
        for &item in &s.items {
            if seen.insert((s.user, item)) {
                out.push(Triple::new(s.user, Relation::Purchase, item));
            }
        }
    }
    out
}

/// Per-relation forward counts of a triple list.
pub fn relation_counts(triples: &[Triple]) -> HashMap<Relation, usize> {
    let mut counts = HashMap::new();
    for t in triples {
        *counts.entry(t.rel).or_insert(0) += 1;
    }
    counts
}
