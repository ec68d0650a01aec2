//! Workdir-based stages behind the CLI. Each stage reads its upstream
//! artifacts, writes its own directory and a `manifest.json` with the config
//! hash, seeds and content hashes of inputs and outputs.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agents::PolicyDims;
use crate::config::Config;
use crate::data_io::{self, Session, TrainInstance};
use crate::error::{Error, Result};
use crate::eval::{self, AblationRow, MetricReport};
use crate::inference::{self, explanation_json, render_explanation, Origin};
use crate::kg::{self, EntityId, EntityKind, KnowledgeGraph, Registry};
use crate::kg_embed::{self, EmbeddingTable};
use crate::model::Model;
use crate::rewards::MidpointIndex;
use crate::session_encoder::ItemVocab;
use crate::trainer::{Context, EpochMetrics, Trainer};

pub const KG_DIR: &str = "kg";
pub const EMBED_DIR: &str = "embed";
pub const MODEL_DIR: &str = "model";
pub const EVAL_DIR: &str = "eval";
pub const RECS_DIR: &str = "recs";
pub const ABLATION_DIR: &str = "ablation";

pub const TRAIN_SESSIONS: &str = "sessions_train.jsonl";
pub const VALID_SESSIONS: &str = "sessions_valid.jsonl";
pub const TEST_SESSIONS: &str = "sessions_test.jsonl";
pub const EMBEDDINGS: &str = "embeddings.bin";
pub const ENTITY_INDEX: &str = "entity_index.tsv";
pub const PRETRAIN_LOSS: &str = "loss.csv";
pub const CHECKPOINT: &str = "checkpoint.bin";
pub const CHECKPOINT_META: &str = "checkpoint.json";
pub const METRICS_CSV: &str = "metrics.csv";
pub const METRICS_JSON: &str = "metrics.json";
pub const RECOMMENDATIONS: &str = "recommendations.jsonl";
pub const EXPLANATIONS: &str = "explanations.txt";
pub const ABLATION_CSV: &str = "ablation.csv";
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
    /// Canonical config text; `pathrec <command> --config` on it reproduces the run.
    pub config: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn require(path: &Path, hint: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::MissingArtifact {
            path: path.to_path_buf(),
            hint: hint.to_string(),
        })
    }
}

fn write_manifest(
    cfg: &Config,
    command: &str,
    dir: &Path,
    inputs: &[PathBuf],
    outputs: &[PathBuf],
) -> Result<()> {
    let rel = |p: &Path| {
        p.strip_prefix(&cfg.workdir)
            .unwrap_or(p)
            .display()
            .to_string()
    };
    let hashes = |ps: &[PathBuf]| -> Result<BTreeMap<String, String>> {
        ps.iter().map(|p| Ok((rel(p), sha256_file(p)?))).collect()
    };
    let m = Manifest {
        command: command.to_string(),
        config_sha256: cfg.hash(),
        seed: cfg.seed,
        config: cfg.render(),
        inputs: hashes(inputs)?,
        outputs: hashes(outputs)?,
    };
    let mut body = serde_json::to_string_pretty(&m)?;
    body.push('\n');
    write_text(&dir.join(MANIFEST), &body)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn dir(cfg: &Config, name: &str) -> PathBuf {
    cfg.workdir.join(name)
}

fn input_file(p: &Option<PathBuf>, key: &str) -> Result<PathBuf> {
    let Some(p) = p else {
        return Err(Error::Config(format!("{key} is not set")));
    };
    if !p.is_file() {
        return Err(Error::MissingArtifact {
            path: p.clone(),
            hint: format!("input file named by {key}"),
        });
    }
    Ok(p.clone())
}

#[derive(Debug, Clone, Serialize)]
pub struct BuildSummary {
    pub stats: kg::GraphStats,
    pub train_sessions: usize,
    pub valid_sessions: usize,
    pub test_sessions: usize,
}

/// Sessionizes the log, splits it, and builds the graph. Session items and
/// users are registered first; co-occurrence and purchase edges come from the
/// training split only.
pub fn build_kg(cfg: &Config) -> Result<BuildSummary> {
    let interactions = input_file(&cfg.interactions, "paths.interactions")?;
    let mut inputs = vec![interactions.clone()];
    let events = data_io::load_interactions(&interactions)?;
    let (sessions, report) = data_io::build_sessions(&events, cfg.min_item_count);
    let (train, valid, test) = data_io::split_corpus(&sessions, cfg.seed)?;

    let mut reg = Registry::new();
    for s in &sessions {
        reg.intern(EntityKind::User, &s.user);
        for it in &s.items {
            reg.intern(EntityKind::Product, it);
        }
    }
    let mut triples = Vec::new();
    if cfg.metadata.is_some() {
        let meta = input_file(&cfg.metadata, "paths.metadata")?;
        triples.extend(kg::ingest_metadata(&meta, &mut reg)?);
        inputs.push(meta);
    }
    if cfg.components.image_features && cfg.image_labels.is_some() {
        let labels = input_file(&cfg.image_labels, "paths.image_labels")?;
        triples.extend(kg::ingest_image_features(
            &labels,
            &mut reg,
            cfg.image_min_conf,
            cfg.image_top_k,
        )?);
        inputs.push(labels);
    }
    let domain: HashSet<EntityId> = reg.ids_of(EntityKind::Product).collect();
    let triples = kg::split_relations(triples, &domain, &mut reg);
    let (mut triples, merge) = if cfg.components.merge_edges {
        let (t, r) = kg::merge_duplicate_edges(triples);
        (t, Some(r))
    } else {
        (triples, None)
    };
    let train_ids = sessions_to_ids(&train, &reg)?;
    triples.extend(kg::add_cooccur(&train_ids));
    triples.extend(kg::add_purchases(&train_ids));
    let graph = KnowledgeGraph::finalize(reg, triples)?;

    let out = dir(cfg, KG_DIR);
    ensure_dir(&out)?;
    kg::write_graph(&out, &graph)?;
    let stats = kg::GraphStats::new(&graph, merge, Some(report));
    kg::write_stats(&out, &stats)?;
    data_io::write_jsonl(&out.join(TRAIN_SESSIONS), &train)?;
    data_io::write_jsonl(&out.join(VALID_SESSIONS), &valid)?;
    data_io::write_jsonl(&out.join(TEST_SESSIONS), &test)?;
    let outputs: Vec<PathBuf> = [
        kg::ENTITIES_FILE,
        kg::TRIPLES_FILE,
        kg::STATS_FILE,
        TRAIN_SESSIONS,
        VALID_SESSIONS,
        TEST_SESSIONS,
    ]
    .iter()
    .map(|f| out.join(f))
    .collect();
    write_manifest(cfg, "build-kg", &out, &inputs, &outputs)?;
    Ok(BuildSummary {
        stats,
        train_sessions: train.len(),
        valid_sessions: valid.len(),
        test_sessions: test.len(),
    })
}

fn sessions_to_ids(sessions: &[Session], reg: &Registry) -> Result<Vec<Session<EntityId>>> {
    let user = |k: &str| {
        reg.get(EntityKind::User, k)
            .ok_or_else(|| Error::UnknownEntity(format!("user {k}")))
    };
    sessions
        .iter()
        .map(|s| {
            Ok(Session {
                user: user(&s.user)?,
                day: s.day,
                items: s
                    .items
                    .iter()
                    .map(|k| item_id(reg, k))
                    .collect::<Result<_>>()?,
            })
        })
        .collect()
}

fn item_id(reg: &Registry, key: &str) -> Result<EntityId> {
    reg.item(key)
        .ok_or_else(|| Error::UnknownEntity(format!("item {key}")))
}

fn load_graph(cfg: &Config) -> Result<(KnowledgeGraph, Vec<PathBuf>)> {
    let d = dir(cfg, KG_DIR);
    let files = [d.join(kg::ENTITIES_FILE), d.join(kg::TRIPLES_FILE)];
    for f in &files {
        require(f, "run `build-kg` first")?;
    }
    Ok((kg::read_graph(&d)?, files.to_vec()))
}

fn load_sessions(
    cfg: &Config,
    name: &str,
    graph: &KnowledgeGraph,
) -> Result<(Vec<Session<EntityId>>, PathBuf)> {
    let p = dir(cfg, KG_DIR).join(name);
    require(&p, "run `build-kg` first")?;
    let sessions: Vec<Session> = data_io::read_jsonl(&p)?;
    Ok((sessions_to_ids(&sessions, graph.registry())?, p))
}

pub fn pretrain(cfg: &Config) -> Result<Vec<f64>> {
    let (graph, inputs) = load_graph(cfg)?;
    let (table, losses) = kg_embed::pretrain(&graph, &cfg.pretrain_config())?;
    let out = dir(cfg, EMBED_DIR);
    ensure_dir(&out)?;
    let (emb, index, loss) = (
        out.join(EMBEDDINGS),
        out.join(ENTITY_INDEX),
        out.join(PRETRAIN_LOSS),
    );
    table.save(&emb, &index, &graph)?;
    let mut csv = String::from("epoch,loss\n");
    for (i, l) in losses.iter().enumerate() {
        csv.push_str(&format!("{},{l:.6}\n", i + 1));
    }
    write_text(&loss, &csv)?;
    write_manifest(cfg, "pretrain", &out, &inputs, &[emb, index, loss])?;
    Ok(losses)
}

fn load_table(cfg: &Config) -> Result<(EmbeddingTable, PathBuf)> {
    let p = dir(cfg, EMBED_DIR).join(EMBEDDINGS);
    require(&p, "run `pretrain` first")?;
    let table = EmbeddingTable::load(&p)?;
    if table.dim() != cfg.d {
        return Err(Error::Dim {
            what: "embedding width vs model.d",
            expected: cfg.d,
            got: table.dim(),
        });
    }
    Ok((table, p))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub epoch: usize,
    pub encoder: String,
    pub d: usize,
    pub d_se: usize,
    pub d_proj: usize,
    pub config_sha256: String,
    pub config: String,
}

/// Trains for `training.epochs` epochs, calling `on_epoch` after each.
pub fn train(cfg: &Config, on_epoch: &mut dyn FnMut(&EpochMetrics)) -> Result<Vec<EpochMetrics>> {
    let (graph, mut inputs) = load_graph(cfg)?;
    let (table, emb) = load_table(cfg)?;
    inputs.push(emb);
    let (sessions, sp) = load_sessions(cfg, TRAIN_SESSIONS, &graph)?;
    inputs.push(sp);
    let instances = data_io::make_instances(&sessions, cfg.effective_t())?;
    let vocab = ItemVocab::from_graph(&graph);
    let midpoints = MidpointIndex::new();
    let dims = PolicyDims {
        d: cfg.d,
        d_se: cfg.d_se,
        d_proj: cfg.d_proj,
    };
    let model = Model::new(cfg.encoder, vocab.len(), dims, cfg.seed);
    let ctx = Context {
        graph: &graph,
        table: &table,
        vocab: &vocab,
        midpoints: &midpoints,
    };
    let mut trainer = Trainer::new(ctx, model, cfg.train_config())?;
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let m = trainer.train_epoch(&instances)?;
        on_epoch(&m);
        history.push(m);
    }

    let out = dir(cfg, MODEL_DIR);
    ensure_dir(&out)?;
    let (ckpt, meta_path, csv_path) = (
        out.join(CHECKPOINT),
        out.join(CHECKPOINT_META),
        out.join(METRICS_CSV),
    );
    trainer.model().save(&ckpt)?;
    let meta = CheckpointMeta {
        epoch: trainer.epoch(),
        encoder: cfg.encoder.name().to_string(),
        d: cfg.d,
        d_se: cfg.d_se,
        d_proj: cfg.d_proj,
        config_sha256: cfg.hash(),
        config: cfg.render(),
    };
    let mut body = serde_json::to_string_pretty(&meta)?;
    body.push('\n');
    write_text(&meta_path, &body)?;
    let mut csv = format!("{}\n", EpochMetrics::CSV_HEADER);
    for m in &history {
        csv.push_str(&m.csv_row());
        csv.push('\n');
    }
    write_text(&csv_path, &csv)?;
    write_manifest(cfg, "train", &out, &inputs, &[ckpt, meta_path, csv_path])?;
    Ok(history)
}

/// Graph, embeddings, vocabulary and trained model loaded from the workdir.
pub struct Artifacts {
    pub graph: KnowledgeGraph,
    pub table: EmbeddingTable,
    pub vocab: ItemVocab,
    pub model: Model,
    pub inputs: Vec<PathBuf>,
}

impl Artifacts {
    pub fn load(cfg: &Config) -> Result<Self> {
        let (graph, mut inputs) = load_graph(cfg)?;
        let (table, emb) = load_table(cfg)?;
        inputs.push(emb);
        let ckpt = dir(cfg, MODEL_DIR).join(CHECKPOINT);
        require(&ckpt, "run `train` first")?;
        let model = Model::load(&ckpt)?;
        inputs.push(ckpt);
        let vocab = ItemVocab::from_graph(&graph);
        if model.encoder.vocab_size() != vocab.len() {
            return Err(Error::Dim {
                what: "checkpoint vocabulary vs graph items",
                expected: vocab.len(),
                got: model.encoder.vocab_size(),
            });
        }
        Ok(Artifacts {
            graph,
            table,
            vocab,
            model,
            inputs,
        })
    }

    /// Recommendations for one prefix of item keys, without touching the workdir.
    pub fn recommend_keys(&self, cfg: &Config, prefix: &[String]) -> Result<Vec<RecRow>> {
        let reg = self.graph.registry();
        let ids = prefix
            .iter()
            .map(|k| item_id(reg, k))
            .collect::<Result<Vec<_>>>()?;
        let recs = inference::recommend(
            &self.graph,
            &self.table,
            &self.vocab,
            &self.model,
            &ids,
            &cfg.recommend_config(),
        )?;
        Ok(rec_rows(&recs, reg))
    }

    pub fn test_instances(&mut self, cfg: &Config) -> Result<Vec<TrainInstance<EntityId>>> {
        let (sessions, p) = load_sessions(cfg, TEST_SESSIONS, &self.graph)?;
        self.inputs.push(p);
        data_io::make_instances(&sessions, cfg.effective_t())
    }
}

pub fn evaluate(cfg: &Config) -> Result<MetricReport> {
    let mut art = Artifacts::load(cfg)?;
    let instances = art.test_instances(cfg)?;
    let report = eval::evaluate(
        &art.graph,
        &art.table,
        &art.vocab,
        &art.model,
        &instances,
        &eval::DEFAULT_KS,
        &cfg.recommend_config(),
    )?;
    let out = dir(cfg, EVAL_DIR);
    ensure_dir(&out)?;
    let p = out.join(METRICS_JSON);
    let mut body = serde_json::to_string_pretty(&report)?;
    body.push('\n');
    write_text(&p, &body)?;
    write_manifest(cfg, "evaluate", &out, &art.inputs, &[p])?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecRow {
    pub item: String,
    pub score: f64,
    pub origin: Origin,
    pub path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecLine {
    pub prefix: Vec<String>,
    pub recommendations: Vec<RecRow>,
}

#[derive(Deserialize)]
struct PrefixLine {
    prefix: Vec<String>,
}

fn prefixes(cfg: &Config, art: &mut Artifacts, input: Option<&Path>) -> Result<Vec<Vec<EntityId>>> {
    match input {
        Some(p) => {
            let lines: Vec<PrefixLine> = data_io::read_jsonl(p)?;
            art.inputs.push(p.to_path_buf());
            lines
                .iter()
                .map(|l| {
                    l.prefix
                        .iter()
                        .map(|k| item_id(art.graph.registry(), k))
                        .collect()
                })
                .collect()
        }
        None => Ok(art
            .test_instances(cfg)?
            .into_iter()
            .map(|i| i.prefix)
            .collect()),
    }
}

fn recommend_all(
    cfg: &Config,
    art: &Artifacts,
    prefixes: &[Vec<EntityId>],
) -> Result<Vec<Vec<inference::Recommendation>>> {
    use rayon::prelude::*;
    let rc = cfg.recommend_config();
    prefixes
        .par_iter()
        .map(|p| inference::recommend(&art.graph, &art.table, &art.vocab, &art.model, p, &rc))
        .collect()
}

fn rec_rows(recs: &[inference::Recommendation], reg: &Registry) -> Vec<RecRow> {
    recs.iter()
        .map(|r| RecRow {
            item: reg.key(r.item).to_string(),
            score: r.score,
            origin: r.origin,
            path: r.best_path.as_ref().map(|p| render_explanation(p, reg)),
        })
        .collect()
}

/// Top-K lists with explanation paths, one JSON line per prefix. Prefixes come
/// from `input` (lines of `{"prefix": [...]}`) or the test split.
pub fn recommend(cfg: &Config, input: Option<&Path>) -> Result<Vec<RecLine>> {
    let mut art = Artifacts::load(cfg)?;
    let prefixes = prefixes(cfg, &mut art, input)?;
    let recs = recommend_all(cfg, &art, &prefixes)?;
    let reg = art.graph.registry();
    let lines: Vec<RecLine> = prefixes
        .iter()
        .zip(recs)
        .map(|(p, rs)| RecLine {
            prefix: p.iter().map(|&e| reg.key(e).to_string()).collect(),
            recommendations: rec_rows(&rs, reg),
        })
        .collect();
    let out = dir(cfg, RECS_DIR);
    ensure_dir(&out)?;
    let p = out.join(RECOMMENDATIONS);
    data_io::write_jsonl(&p, &lines)?;
    write_manifest(cfg, "recommend", &out, &art.inputs, &[p])?;
    Ok(lines)
}

/// Human-readable explanations (or path JSON lines with `json`).
pub fn explain(cfg: &Config, input: Option<&Path>, json: bool) -> Result<String> {
    let mut art = Artifacts::load(cfg)?;
    let prefixes = prefixes(cfg, &mut art, input)?;
    let recs = recommend_all(cfg, &art, &prefixes)?;
    let reg = art.graph.registry();
    let mut text = String::new();
    for (p, rs) in prefixes.iter().zip(&recs) {
        if json {
            for r in rs {
                if let Some(path) = &r.best_path {
                    text.push_str(&serde_json::to_string(&explanation_json(path, reg))?);
                    text.push('\n');
                }
            }
            continue;
        }
        let keys: Vec<&str> = p.iter().map(|&e| reg.key(e)).collect();
        text.push_str(&format!("session: {}\n", keys.join(" ")));
        for (i, r) in rs.iter().enumerate() {
            let why = match &r.best_path {
                Some(path) => render_explanation(path, reg),
                None => "(no path; encoder score)".to_string(),
            };
            text.push_str(&format!(
                "  {:>2}. {} [{:.4}] {}\n",
                i + 1,
                reg.key(r.item),
                r.score,
                why
            ));
        }
    }
    let out = dir(cfg, RECS_DIR);
    ensure_dir(&out)?;
    let p = out.join(EXPLANATIONS);
    write_text(&p, &text)?;
    Ok(text)
}

/// build-kg, pretrain, train and evaluate in sequence.
pub fn run_all(
    cfg: &Config,
    on_epoch: &mut dyn FnMut(&EpochMetrics),
) -> Result<(Vec<EpochMetrics>, MetricReport)> {
    build_kg(cfg)?;
    pretrain(cfg)?;
    let history = train(cfg, on_epoch)?;
    Ok((history, evaluate(cfg)?))
}

/// Runs the full pipeline for every ablation variant and seed under
/// `workdir/ablation/<variant>/seed<k>` and writes the comparison CSV.
pub fn ablate(
    cfg: &Config,
    variants: Option<&[&str]>,
    log: &mut dyn FnMut(&str, u64, &MetricReport),
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    let root = dir(cfg, ABLATION_DIR);
    for (name, comps) in eval::ablation_variants() {
        if variants.is_some_and(|v| !v.contains(&name)) {
            continue;
        }
        for &seed in &cfg.ablation_seeds {
            let mut sub = cfg.clone();
            sub.components = comps;
            sub.seed = seed;
            sub.workdir = root.join(name).join(format!("seed{seed}"));
            let (_, report) = run_all(&sub, &mut |_| {})?;
            log(name, seed, &report);
            rows.extend(eval::ablation_rows(name, seed, &report));
        }
    }
    ensure_dir(&root)?;
    let p = root.join(ABLATION_CSV);
    write_text(&p, &eval::ablation_csv(&rows))?;
    write_manifest(cfg, "ablate", &root, &[], &[p])?;
    Ok(rows)
}
