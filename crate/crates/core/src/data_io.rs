//! Raw interaction ingestion, day-bucketed sessionization, corpus splitting and
//! training-instance generation.
//!
//! Sessions and instances are keyed by external string ids here; the graph
//! registry maps them onto entity ids once the knowledge graph exists.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SECONDS_PER_DAY: u64 = 86_400;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Interaction {
    pub user_id: String,
    pub item_id: String,
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session<K = String> {
    pub user: K,
    pub day: u64,
    pub items: Vec<K>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainInstance<K = String> {
    pub prefix: Vec<K>,
    pub t_list: Vec<K>,
    pub user: K,
}

impl<K> TrainInstance<K> {
    /// The ground-truth next item.
    pub fn target(&self) -> &K {
        &self.t_list[0]
    }
}

/// Counts emitted by [`build_sessions`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SessionReport {
    pub events: usize,
    pub raw_sessions: usize,
    pub rare_items_removed: usize,
    pub events_removed: usize,
    pub short_sessions_dropped: usize,
    pub sessions: usize,
}

pub fn load_interactions(path: &Path) -> Result<Vec<Interaction>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_interaction(&line).map_err(|msg| Error::parse(path, i + 1, msg))?);
    }
    Ok(out)
}

fn parse_interaction(line: &str) -> std::result::Result<Interaction, String> {
    let cols: Vec<&str> = line.trim_end_matches('\r').split('\t').collect();
    if cols.len() != 3 {
        return Err(format!(
            "expected 3 tab-separated columns, found {}",
            cols.len()
        ));
    }
    let (user, item, ts) = (cols[0].trim(), cols[1].trim(), cols[2].trim());
    if user.is_empty() || item.is_empty() {
        return Err("empty user or item id".into());
    }
    let timestamp = ts
        .parse::<u64>()
        .map_err(|_| format!("unparsable timestamp '{ts}'"))?;
    Ok(Interaction {
        user_id: user.to_string(),
        item_id: item.to_string(),
        timestamp,
    })
}

/// Groups events into per-user UTC days, drops globally rare items, then drops
/// sessions shorter than two. Both filters run once, in that order.
pub fn build_sessions(
    events: &[Interaction],
    min_item_count: usize,
) -> (Vec<Session>, SessionReport) {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for ev in events {
        *counts.entry(ev.item_id.as_str()).or_default() += 1;
    }

    // (user, day) -> (timestamp, input order, item)
    type Group<'a> = Vec<(u64, usize, &'a str)>;
    let mut groups: BTreeMap<(&str, u64), Group> = BTreeMap::new();
    for (order, ev) in events.iter().enumerate() {
        groups
            .entry((ev.user_id.as_str(), ev.timestamp / SECONDS_PER_DAY))
            .or_default()
            .push((ev.timestamp, order, ev.item_id.as_str()));
    }

    let mut report = SessionReport {
        events: events.len(),
        raw_sessions: groups.len(),
        rare_items_removed: counts.values().filter(|&&c| c < min_item_count).count(),
        ..Default::default()
    };

    let mut sessions = Vec::new();
    for ((user, day), mut evs) in groups {
        evs.sort_by_key(|&(ts, order, _)| (ts, order));
        let before = evs.len();
        let items: Vec<String> = evs
            .into_iter()
            .filter(|(_, _, item)| counts[item] >= min_item_count)
            .map(|(_, _, item)| item.to_string())
            .collect();
        report.events_removed += before - items.len();
        if items.len() < 2 {
            report.short_sessions_dropped += 1;
            continue;
        }
        sessions.push(Session {
            user: user.to_string(),
            day,
            items,
        });
    }
    report.sessions = sessions.len();
    (sessions, report)
}

/// Sizes of the 75/10/15 split: train and valid are floored, test takes the rest.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = n * 75 / 100;
    let valid = n * 10 / 100;
    (train, valid, n - train - valid)
}

/// Train, validation and test sessions.
pub type Split<K> = (Vec<Session<K>>, Vec<Session<K>>, Vec<Session<K>>);

/// Seeded random partition by session. Each part keeps the input order.
pub fn split_corpus<K: Clone>(sessions: &[Session<K>], seed: u64) -> Result<Split<K>> {
    if sessions.len() < 4 {
        return Err(Error::InvalidArgument(format!(
            "need at least 4 sessions to split, got {}",
            sessions.len()
        )));
    }
    let (n_train, n_valid, _) = split_sizes(sessions.len());
    let mut idx: Vec<usize> = (0..sessions.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut bucket = vec![2u8; sessions.len()];
    for &i in &idx[..n_train] {
        bucket[i] = 0;
    }
    for &i in &idx[n_train..n_train + n_valid] {
        bucket[i] = 1;
    }
    let mut parts = (Vec::new(), Vec::new(), Vec::new());
    for (s, b) in sessions.iter().zip(bucket) {
        match b {
            0 => parts.0.push(s.clone()),
            1 => parts.1.push(s.clone()),
            _ => parts.2.push(s.clone()),
        }
    }
    Ok(parts)
}

/// One instance per in-session position `p ≥ 1`. Targets run along the user's
/// concatenated chronological stream (sessions ordered by day, then input
/// order), so they may continue into the user's later sessions.
pub fn make_instances<K>(sessions: &[Session<K>], t: usize) -> Result<Vec<TrainInstance<K>>>
where
    K: Clone + Ord,
{
    if t == 0 {
        return Err(Error::InvalidArgument("T must be at least 1".into()));
    }
    let mut by_user: BTreeMap<&K, Vec<(u64, usize)>> = BTreeMap::new();
    for (i, s) in sessions.iter().enumerate() {
        by_user.entry(&s.user).or_default().push((s.day, i));
    }

    let mut out = Vec::new();
    for (user, mut order) in by_user {
        order.sort();
        let stream: Vec<&K> = order
            .iter()
            .flat_map(|&(_, i)| sessions[i].items.iter())
            .collect();
        let mut offset = 0;
        for &(_, i) in &order {
            let items = &sessions[i].items;
            for p in 1..items.len() {
                let start = offset + p;
                let end = (start + t).min(stream.len());
                out.push(TrainInstance {
                    prefix: items[..p].to_vec(),
                    t_list: stream[start..end].iter().map(|&k| k.clone()).collect(),
                    user: user.clone(),
                });
            }
            offset += items.len();
        }
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for row in rows {
        serde_json::to_writer(&mut w, row)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?,
        );
    }
    Ok(out)
}
