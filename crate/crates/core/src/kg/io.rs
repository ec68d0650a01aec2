use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use super::{EntityId, EntityKind, KnowledgeGraph, MergeReport, Registry, Relation, Triple};
use crate::data_io::SessionReport;
use crate::error::{Error, Result};

pub const ENTITIES_FILE: &str = "entities.tsv";
pub const TRIPLES_FILE: &str = "triples.tsv";
pub const STATS_FILE: &str = "stats.json";

/// Writes `entities.tsv` (index, kind, key) and `triples.tsv` (forward triples).
pub fn write_graph(dir: &Path, graph: &KnowledgeGraph) -> Result<()> {
    let path = dir.join(ENTITIES_FILE);
    let mut w = BufWriter::new(fs::File::create(&path).map_err(|e| Error::io(&path, e))?);
    let reg = graph.registry();
    for id in reg.ids() {
        writeln!(w, "{}\t{}\t{}", id.0, reg.kind(id), reg.key(id))
            .map_err(|e| Error::io(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join(TRIPLES_FILE);
    let mut w = BufWriter::new(fs::File::create(&path).map_err(|e| Error::io(&path, e))?);
    for t in graph.triples() {
        writeln!(w, "{}\t{}\t{}", t.head.0, t.rel.name(), t.tail.0)
            .map_err(|e| Error::io(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

pub fn read_graph(dir: &Path) -> Result<KnowledgeGraph> {
    let path = dir.join(ENTITIES_FILE);
    let mut rows = Vec::new();
    for (i, line) in read_lines(&path)?.into_iter().enumerate() {
        let cols: Vec<&str> = line.splitn(3, '\t').collect();
        if cols.len() != 3 {
            return Err(Error::parse(&path, i + 1, "expected index, kind, key"));
        }
        let idx: usize = cols[0]
            .parse()
            .map_err(|_| Error::parse(&path, i + 1, "bad index"))?;
        if idx != rows.len() {
            return Err(Error::parse(
                &path,
                i + 1,
                "indices must be dense and ordered",
            ));
        }
        let kind = EntityKind::from_name(cols[1])
            .ok_or_else(|| Error::parse(&path, i + 1, format!("unknown kind '{}'", cols[1])))?;
        rows.push((kind, cols[2].to_string()));
    }
    let registry = Registry::from_entries(rows)?;

    let path = dir.join(TRIPLES_FILE);
    let mut triples = Vec::new();
    for (i, line) in read_lines(&path)?.into_iter().enumerate() {
        let cols: Vec<&str> = line.split('\t').collect();
        let parsed = (cols.len() == 3)
            .then(|| {
                Some(Triple::new(
                    EntityId(cols[0].parse().ok()?),
                    Relation::from_name(cols[1])?,
                    EntityId(cols[2].parse().ok()?),
                ))
            })
            .flatten();
        triples.push(parsed.ok_or_else(|| Error::parse(&path, i + 1, "bad triple row"))?);
    }
    KnowledgeGraph::finalize(registry, triples)
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(f)
        .lines()
        .filter(|l| l.as_ref().map(|s| !s.is_empty()).unwrap_or(true))
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Serialize)]
pub struct GraphStats {
    /// Forward triple count per relation.
    pub relations: BTreeMap<String, usize>,
    pub entities: BTreeMap<String, usize>,
    pub num_entities: usize,
    pub num_triples: usize,
    pub num_directed_edges: usize,
    pub merge: Option<MergeReport>,
    pub sessions: Option<SessionReport>,
}

impl GraphStats {
    pub fn new(
        graph: &KnowledgeGraph,
        merge: Option<MergeReport>,
        sessions: Option<SessionReport>,
    ) -> Self {
        let mut relations = BTreeMap::new();
        for t in graph.triples() {
            *relations.entry(t.rel.name().to_string()).or_insert(0) += 1;
        }
        let mut entities = BTreeMap::new();
        for id in graph.registry().ids() {
            *entities
                .entry(graph.kind(id).name().to_string())
                .or_insert(0) += 1;
        }
        GraphStats {
            relations,
            entities,
            num_entities: graph.num_entities(),
            num_triples: graph.triples().len(),
            num_directed_edges: graph.num_directed_edges(),
            merge,
            sessions,
        }
    }
}

pub fn write_stats(dir: &Path, stats: &GraphStats) -> Result<()> {
    let path = dir.join(STATS_FILE);
    let mut body = serde_json::to_string_pretty(stats)?;
    body.push('\n');
    fs::write(&path, body).map_err(|e| Error::io(&path, e))
}
