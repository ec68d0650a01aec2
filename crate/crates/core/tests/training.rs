use std::path::Path;

use pathrec::config::Config;
use pathrec::kg::{EntityKind, KnowledgeGraph, Registry, Relation, Triple};
use pathrec::kg_embed::{pretrain, PretrainConfig};
use pathrec::pipeline;
use pathrec::synth::{generate, PlantedConfig};

#[test]
fn transe_loss_falls_on_twenty_triples() {
    let mut reg = Registry::new();
    let ps: Vec<_> = (0..10)
        .map(|i| reg.intern(EntityKind::Product, &format!("p{i}")))
        .collect();
    let bs: Vec<_> = (0..3)
        .map(|i| reg.intern(EntityKind::Brand, &format!("b{i}")))
        .collect();
    let mut triples = Vec::new();
    for (i, &p) in ps.iter().enumerate() {
        triples.push(Triple::new(p, Relation::ProducedBy, bs[i % 3]));
        triples.push(Triple::new(p, Relation::AlsoBought, ps[(i + 1) % 10]));
    }
    let g = KnowledgeGraph::finalize(reg, triples).unwrap();
    assert_eq!(g.triples().len(), 20);
    let cfg = PretrainConfig {
        dim: 8,
        epochs: 200,
        lr: 0.01,
        margin: 1.0,
        seed: 0,
    };
    let (_, losses) = pretrain(&g, &cfg).unwrap();
    assert_eq!(losses.len(), 200);
    assert!(losses[199] < losses[0], "{} !< {}", losses[199], losses[0]);
}

fn toy_config(dir: &Path, epochs: usize) -> Config {
    let paths = generate(&PlantedConfig::toy())
        .unwrap()
        .write(&dir.join("corpus"))
        .unwrap();
    Config {
        interactions: Some(paths.interactions),
        metadata: Some(paths.metadata),
        image_labels: Some(paths.image_labels),
        workdir: dir.join("work"),
        d: 16,
        d_se: 16,
        d_proj: 16,
        lr: 0.01,
        alpha: 0.5,
        beta: 0.5,
        batch: 32,
        epochs,
        min_item_count: 1,
        pretrain_epochs: 30,
        ..Default::default()
    }
}

#[test]
fn terminal_reward_rises_on_planted_toy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_config(dir.path(), 50);
    let (history, report) = pipeline::run_all(&cfg, &mut |_| {}).unwrap();
    assert_eq!(history.len(), 50);
    let (first, last) = (&history[0], &history[49]);
    assert!(
        last.mean_terminal_reward > first.mean_terminal_reward,
        "{} !> {}",
        last.mean_terminal_reward,
        first.mean_terminal_reward
    );
    assert!(history
        .iter()
        .all(|m| m.l_ce.is_finite() && m.l_path.is_finite()));
    assert!(report.hr_at(5) <= report.hr_at(10) && report.hr_at(10) <= report.hr_at(20));
}

#[test]
fn stages_are_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_config(dir.path(), 3);
    let snapshot = |root: &Path| {
        let mut files = Vec::new();
        let mut stack = vec![root.to_path_buf()];
        while let Some(d) = stack.pop() {
            for e in std::fs::read_dir(&d).unwrap() {
                let p = e.unwrap().path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    files.push((p.clone(), std::fs::read(&p).unwrap()));
                }
            }
        }
        files.sort();
        files
    };
    pipeline::run_all(&cfg, &mut |_| {}).unwrap();
    pipeline::recommend(&cfg, None).unwrap();
    let a = snapshot(&cfg.workdir);
    pipeline::run_all(&cfg, &mut |_| {}).unwrap();
    pipeline::recommend(&cfg, None).unwrap();
    assert_eq!(a, snapshot(&cfg.workdir));
}

#[test]
fn train_before_pretrain_names_the_embeddings() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_config(dir.path(), 1);
    pipeline::build_kg(&cfg).unwrap();
    let err = pipeline::train(&cfg, &mut |_| {}).unwrap_err().to_string();
    assert!(err.contains(pipeline::EMBEDDINGS), "{err}");
}
