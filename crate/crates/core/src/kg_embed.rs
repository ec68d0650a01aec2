//! Translational (TransE-style) entity and relation embeddings, pretrained
//! with a margin ranking loss and frozen afterwards.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, Relation, RelationKind};
use crate::tensor::{axpy, norm2, Matrix, TensorSet};

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    entity: Matrix,
    relation: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub dim: usize,
    pub epochs: usize,
    pub lr: f64,
    pub margin: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            dim: 100,
            epochs: 100,
            lr: 0.01,
            margin: 1.0,
            seed: 0,
        }
    }
}

fn check_dims(vs: &[&[f64]]) -> Result<usize> {
    let d = vs[0].len();
    for v in vs {
        if v.len() != d {
            return Err(Error::Dim {
                what: "translational embedding",
                expected: d,
                got: v.len(),
            });
        }
    }
    Ok(d)
}

fn translation(h: &[f64], r: &[f64], t: &[f64]) -> Vec<f64> {
    h.iter()
        .zip(r)
        .zip(t)
        .map(|((h, r), t)| h + r - t)
        .collect()
}

/// `max(0, margin + ‖h + r − t‖ − ‖h' + r − t'‖)`
pub fn transe_loss(
    h: &[f64],
    r: &[f64],
    t: &[f64],
    h_neg: &[f64],
    t_neg: &[f64],
    margin: f64,
) -> Result<f64> {
    check_dims(&[h, r, t, h_neg, t_neg])?;
    let pos = norm2(&translation(h, r, t));
    let neg = norm2(&translation(h_neg, r, t_neg));
    Ok((margin + pos - neg).max(0.0))
}

/// Loss gradients with respect to `[h, r, t, h', t']`.
#[derive(Debug, Clone, PartialEq)]
pub struct TranseGrad {
    pub loss: f64,
    pub h: Vec<f64>,
    pub r: Vec<f64>,
    pub t: Vec<f64>,
    pub h_neg: Vec<f64>,
    pub t_neg: Vec<f64>,
}

pub fn transe_loss_grad(
    h: &[f64],
    r: &[f64],
    t: &[f64],
    h_neg: &[f64],
    t_neg: &[f64],
    margin: f64,
) -> Result<TranseGrad> {
    let d = check_dims(&[h, r, t, h_neg, t_neg])?;
    let pos = translation(h, r, t);
    let neg = translation(h_neg, r, t_neg);
    let (pn, nn) = (norm2(&pos), norm2(&neg));
    let loss = (margin + pn - nn).max(0.0);
    let zero = vec![0.0; d];
    if loss <= 0.0 {
        return Ok(TranseGrad {
            loss,
            h: zero.clone(),
            r: zero.clone(),
            t: zero.clone(),
            h_neg: zero.clone(),
            t_neg: zero,
        });
    }
    let unit = |v: &[f64], n: f64| -> Vec<f64> {
        if n > 0.0 {
            v.iter().map(|x| x / n).collect()
        } else {
            vec![0.0; v.len()]
        }
    };
    let up = unit(&pos, pn);
    let un = unit(&neg, nn);
    Ok(TranseGrad {
        loss,
        h: up.clone(),
        r: up.iter().zip(&un).map(|(a, b)| a - b).collect(),
        t: up.iter().map(|x| -x).collect(),
        h_neg: un.iter().map(|x| -x).collect(),
        t_neg: un,
    })
}

fn normalize_rows(m: &mut Matrix) {
    for r in 0..m.rows() {
        let row = m.row_mut(r);
        let n = norm2(row);
        if n > 0.0 {
            row.iter_mut().for_each(|x| *x /= n);
        }
    }
}

impl EmbeddingTable {
    /// Uniform `±6/√d` init with unit-norm rows.
    pub fn init(num_entities: usize, dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument(
                "embedding dimension must be > 0".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 6.0 / (dim as f64).sqrt();
        let mut entity = Matrix::uniform(num_entities, dim, scale, &mut rng);
        let mut relation = Matrix::uniform(Relation::ALL.len(), dim, scale, &mut rng);
        normalize_rows(&mut entity);
        normalize_rows(&mut relation);
        Ok(EmbeddingTable { entity, relation })
    }

    pub fn from_parts(entity: Matrix, relation: Matrix) -> Result<Self> {
        if entity.cols() != relation.cols() {
            return Err(Error::Dim {
                what: "relation table width",
                expected: entity.cols(),
                got: relation.cols(),
            });
        }
        if relation.rows() != Relation::ALL.len() {
            return Err(Error::Dim {
                what: "relation table rows",
                expected: Relation::ALL.len(),
                got: relation.rows(),
            });
        }
        Ok(EmbeddingTable { entity, relation })
    }

    pub fn dim(&self) -> usize {
        self.entity.cols()
    }

    pub fn num_entities(&self) -> usize {
        self.entity.rows()
    }

    pub fn entity_matrix(&self) -> &Matrix {
        &self.entity
    }

    pub fn relation_matrix(&self) -> &Matrix {
        &self.relation
    }

    pub fn lookup(&self, e: EntityId) -> Result<&[f64]> {
        if e.index() >= self.entity.rows() {
            return Err(Error::UnknownEntity(format!(
                "entity {} outside embedding table of {} rows",
                e.0,
                self.entity.rows()
            )));
        }
        Ok(self.entity.row(e.index()))
    }

    /// Inverse relations are the negated forward vector.
    pub fn lookup_rel(&self, r: RelationKind) -> Vec<f64> {
        let row = self.relation.row(r.rel.index());
        if r.inverse {
            row.iter().map(|x| -x).collect()
        } else {
            row.to_vec()
        }
    }

    /// `‖h + r − t‖₂`
    pub fn distance(&self, h: EntityId, r: RelationKind, t: EntityId) -> f64 {
        let rv = self.lookup_rel(r);
        let (hv, tv) = (self.entity.row(h.index()), self.entity.row(t.index()));
        hv.iter()
            .zip(&rv)
            .zip(tv)
            .map(|((h, r), t)| (h + r - t).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// 1-based rank of `t` among all entities by translational distance from `h + r`
    /// (ties counted pessimistically).
    pub fn tail_rank(&self, h: EntityId, r: RelationKind, t: EntityId) -> usize {
        let target = self.distance(h, r, t);
        1 + (0..self.num_entities() as u32)
            .map(EntityId)
            .filter(|&e| e != t && self.distance(h, r, e) <= target)
            .count()
    }

    pub fn is_finite(&self) -> bool {
        self.entity.is_finite() && self.relation.is_finite()
    }

    pub fn to_tensors(&self) -> TensorSet {
        let mut set = TensorSet::new();
        set.push("entity", self.entity.clone());
        set.push("relation", self.relation.clone());
        set
    }

    pub fn from_tensors(mut set: TensorSet) -> Result<Self> {
        let entity = set.take("entity")?;
        let relation = set.take("relation")?;
        Self::from_parts(entity, relation)
    }

    /// Writes the tensor container plus a TSV mapping rows to external keys.
    pub fn save(&self, path: &Path, index_path: &Path, graph: &KnowledgeGraph) -> Result<()> {
        self.to_tensors().save(path)?;
        let mut w =
            BufWriter::new(fs::File::create(index_path).map_err(|e| Error::io(index_path, e))?);
        let reg = graph.registry();
        for id in reg.ids() {
            writeln!(w, "entity\t{}\t{}\t{}", id.0, reg.kind(id), reg.key(id))
                .map_err(|e| Error::io(index_path, e))?;
        }
        for r in Relation::ALL {
            writeln!(w, "relation\t{}\trelation\t{}", r.index(), r.name())
                .map_err(|e| Error::io(index_path, e))?;
        }
        w.flush().map_err(|e| Error::io(index_path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_tensors(TensorSet::load(path)?)
    }
}

/// Epoch-at-a-time trainer; [`pretrain`] drives it to completion.
pub struct EmbeddingTrainer<'g> {
    graph: &'g KnowledgeGraph,
    table: EmbeddingTable,
    cfg: PretrainConfig,
    rng: ChaCha8Rng,
    order: Vec<usize>,
}

impl<'g> EmbeddingTrainer<'g> {
    pub fn new(graph: &'g KnowledgeGraph, cfg: PretrainConfig) -> Result<Self> {
        if cfg.margin <= 0.0 {
            return Err(Error::InvalidArgument("margin must be positive".into()));
        }
        let table = EmbeddingTable::init(graph.num_entities(), cfg.dim, cfg.seed)?;
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
        Ok(EmbeddingTrainer {
            graph,
            table,
            cfg,
            rng,
            order: (0..graph.triples().len()).collect(),
        })
    }

    pub fn table(&self) -> &EmbeddingTable {
        &self.table
    }

    /// One SGD pass over the forward triples; returns the mean hinge loss.
    pub fn epoch(&mut self) -> f64 {
        let n = self.graph.num_entities();
        if self.order.is_empty() || n == 0 {
            return 0.0;
        }
        self.order.shuffle(&mut self.rng);
        let lr = self.cfg.lr;
        let mut total = 0.0;
        for &i in &self.order {
            let t = self.graph.triples()[i];
            let corrupt = self.rng.gen_range(0..n as u32);
            let (h_neg, t_neg) = if self.rng.gen_bool(0.5) {
                (EntityId(corrupt), t.tail)
            } else {
                (t.head, EntityId(corrupt))
            };
            let ent = &self.table.entity;
            let rel = self.table.relation.row(t.rel.index());
            let g = transe_loss_grad(
                ent.row(t.head.index()),
                rel,
                ent.row(t.tail.index()),
                ent.row(h_neg.index()),
                ent.row(t_neg.index()),
                self.cfg.margin,
            )
            .expect("table rows share one width");
            total += g.loss;
            if g.loss <= 0.0 {
                continue;
            }
            let ent = &mut self.table.entity;
            axpy(ent.row_mut(t.head.index()), -lr, &g.h);
            axpy(ent.row_mut(t.tail.index()), -lr, &g.t);
            axpy(ent.row_mut(h_neg.index()), -lr, &g.h_neg);
            axpy(ent.row_mut(t_neg.index()), -lr, &g.t_neg);
            axpy(self.table.relation.row_mut(t.rel.index()), -lr, &g.r);
        }
        normalize_rows(&mut self.table.entity);
        total / self.order.len() as f64
    }

    pub fn into_table(self) -> EmbeddingTable {
        self.table
    }
}

/// Trains for `cfg.epochs` epochs; returns the table and per-epoch mean loss.
pub fn pretrain(
    graph: &KnowledgeGraph,
    cfg: &PretrainConfig,
) -> Result<(EmbeddingTable, Vec<f64>)> {
    let mut trainer = EmbeddingTrainer::new(graph, cfg.clone())?;
    let history: Vec<f64> = (0..cfg.epochs).map(|_| trainer.epoch()).collect();
    let table = trainer.into_table();
    if !table.is_finite() {
        return Err(Error::NonFinite("pretrained embeddings".into()));
    }
    Ok((table, history))
}
