//! Synthetic corpora with a planted brand pattern: every session stays
//! within one brand, so the next item always shares the brand of the
//! session's items. Categories, purchases and image labels cut across brands
//! and act as distractor relations.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::data_io::{Interaction, SECONDS_PER_DAY};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedConfig {
    pub brands: usize,
    pub products_per_brand: usize,
    pub users: usize,
    pub categories: usize,
    pub sessions_per_user: usize,
    pub min_session_len: usize,
    pub max_session_len: usize,
    /// also_bought links from each product to brand-mates.
    pub also_bought_per_item: usize,
    /// Probability that an also_bought link points to a random other brand.
    pub noise_link_prob: f64,
    pub labels: usize,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig {
            brands: 20,
            products_per_brand: 10,
            users: 50,
            categories: 10,
            sessions_per_user: 8,
            min_session_len: 3,
            max_session_len: 5,
            also_bought_per_item: 3,
            noise_link_prob: 0.2,
            labels: 12,
            seed: 0,
        }
    }
}

impl PlantedConfig {
    /// A corpus small enough to bundle and train in seconds.
    pub fn toy() -> Self {
        PlantedConfig {
            brands: 6,
            products_per_brand: 6,
            users: 10,
            categories: 4,
            sessions_per_user: 6,
            labels: 6,
            ..Default::default()
        }
    }

    pub fn num_products(&self) -> usize {
        self.brands * self.products_per_brand
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedCorpus {
    pub interactions: Vec<Interaction>,
    /// One JSON object per product.
    pub metadata: Vec<serde_json::Value>,
    /// (item, label, confidence)
    pub image_labels: Vec<(String, String, f64)>,
}

pub fn product_key(i: usize) -> String {
    format!("p{i:04}")
}

pub fn brand_of(cfg: &PlantedConfig, product: usize) -> usize {
    product / cfg.products_per_brand
}

pub fn generate(cfg: &PlantedConfig) -> Result<PlantedCorpus> {
    if cfg.brands < 2 || cfg.products_per_brand < 2 || cfg.users == 0 || cfg.categories == 0 {
        return Err(Error::InvalidArgument(
            "planted corpus needs >= 2 brands of >= 2 products, users and categories".into(),
        ));
    }
    if cfg.min_session_len < 2 || cfg.max_session_len < cfg.min_session_len {
        return Err(Error::InvalidArgument(
            "session lengths must satisfy 2 <= min <= max".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.num_products();
    let ppb = cfg.products_per_brand;

    let mut metadata = Vec::with_capacity(n);
    for p in 0..n {
        let b = brand_of(cfg, p);
        let mut also = Vec::new();
        for _ in 0..cfg.also_bought_per_item {
            let q = if rng.gen_bool(cfg.noise_link_prob) {
                rng.gen_range(0..n)
            } else {
                b * ppb + rng.gen_range(0..ppb)
            };
            if q != p && !also.contains(&product_key(q)) {
                also.push(product_key(q));
            }
        }
        let cat = rng.gen_range(0..cfg.categories);
        metadata.push(json!({
            "asin": product_key(p),
            "brand": format!("brand{b:02}"),
            "categories": [[format!("cat{cat:02}")]],
            "title": format!("item {p} of brand {b}"),
            "related": { "also_bought": also },
        }));
    }

    let mut image_labels = Vec::new();
    for p in 0..n {
        let k = rng.gen_range(2..=6);
        for _ in 0..k {
            let label = format!("label{:02}", rng.gen_range(0..cfg.labels.max(1)));
            let conf = (rng.gen_range(0.3..1.0f64) * 1000.0).round() / 1000.0;
            image_labels.push((product_key(p), label, conf));
        }
    }

    let mut interactions = Vec::new();
    for u in 0..cfg.users {
        for s in 0..cfg.sessions_per_user {
            let b = rng.gen_range(0..cfg.brands);
            let len = rng
                .gen_range(cfg.min_session_len..=cfg.max_session_len)
                .min(ppb);
            let mut items: Vec<usize> = (b * ppb..(b + 1) * ppb).collect();
            items.shuffle(&mut rng);
            let day = (u * cfg.sessions_per_user + s) as u64;
            for (j, &p) in items[..len].iter().enumerate() {
                interactions.push(Interaction {
                    user_id: format!("u{u:03}"),
                    item_id: product_key(p),
                    timestamp: day * SECONDS_PER_DAY + 60 * j as u64,
                });
            }
        }
    }
    Ok(PlantedCorpus {
        interactions,
        metadata,
        image_labels,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusPaths {
    pub interactions: PathBuf,
    pub metadata: PathBuf,
    pub image_labels: PathBuf,
}

impl PlantedCorpus {
    /// Writes `interactions.tsv`, `metadata.jsonl` and `image_labels.tsv`.
    pub fn write(&self, dir: &Path) -> Result<CorpusPaths> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let paths = CorpusPaths {
            interactions: dir.join("interactions.tsv"),
            metadata: dir.join("metadata.jsonl"),
            image_labels: dir.join("image_labels.tsv"),
        };
        let mut s = String::new();
        for ev in &self.interactions {
            s.push_str(&format!(
                "{}\t{}\t{}\n",
                ev.user_id, ev.item_id, ev.timestamp
            ));
        }
        write(&paths.interactions, s.as_bytes())?;
        let mut s = Vec::new();
        for m in &self.metadata {
            serde_json::to_writer(&mut s, m)?;
            s.push(b'\n');
        }
        write(&paths.metadata, &s)?;
        let mut s = String::new();
        for (item, label, conf) in &self.image_labels {
            s.push_str(&format!("{item}\t{label}\t{conf}\n"));
        }
        write(&paths.image_labels, s.as_bytes())?;
        Ok(paths)
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sessions_stay_in_one_brand() {
        let cfg = PlantedConfig::default();
        let c = generate(&cfg).unwrap();
        assert_eq!(c.metadata.len(), 200);
        let mut by_day = std::collections::BTreeMap::new();
        for ev in &c.interactions {
            let p: usize = ev.item_id[1..].parse().unwrap();
            by_day
                .entry((ev.user_id.clone(), ev.timestamp / SECONDS_PER_DAY))
                .or_insert_with(Vec::new)
                .push(brand_of(&cfg, p));
        }
        assert_eq!(by_day.len(), 50 * 8);
        for brands in by_day.values() {
            assert!(brands.len() >= 3);
            assert!(brands.iter().all(|&b| b == brands[0]));
        }
    }

    #[test]
    fn seeded() {
        let a = generate(&PlantedConfig::toy()).unwrap();
        assert_eq!(a, generate(&PlantedConfig::toy()).unwrap());
        let other = generate(&PlantedConfig {
            seed: 1,
            ..PlantedConfig::toy()
        })
        .unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn writes_loadable_files() {
        let dir = tempfile::tempdir().unwrap();
        let paths = generate(&PlantedConfig::toy())
            .unwrap()
            .write(dir.path())
            .unwrap();
        let evs = crate::data_io::load_interactions(&paths.interactions).unwrap();
        assert_eq!(
            evs.len(),
            generate(&PlantedConfig::toy()).unwrap().interactions.len()
        );
    }
}
