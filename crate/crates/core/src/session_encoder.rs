//! Session-level state encoder: maps a session prefix to a state vector and
//! to per-item logits trained with pointwise binary cross-entropy.
//!
//! Two interchangeable variants sit behind [`EncoderWeights`]:
//!
//! * `Recurrent` - a GRU over item embeddings; the state is the last hidden
//!   vector.
//! * `Attention` - a NARM-style read-out: bilinear attention of every item
//!   keyed on the last item, combined with the last item itself through a
//!   `tanh` layer.
//!
//! Backpropagation is written out by hand; gradients accumulate into an
//! `EncoderWeights` of the same shape.

use std::collections::HashMap;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph};
use crate::tensor::{axpy, dot, log_sigmoid, sigmoid, softmax, Matrix, TensorSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderKind {
    Recurrent,
    Attention,
}

impl FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gru" | "recurrent" => Ok(EncoderKind::Recurrent),
            "attention" | "narm" => Ok(EncoderKind::Attention),
            other => Err(Error::Config(format!(
                "unknown encoder '{other}' (expected gru or attention)"
            ))),
        }
    }
}

impl EncoderKind {
    pub fn name(self) -> &'static str {
        match self {
            EncoderKind::Recurrent => "gru",
            EncoderKind::Attention => "attention",
        }
    }
}

/// Maps item entities to dense output slots.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemVocab {
    items: Vec<EntityId>,
    slot: HashMap<EntityId, usize>,
}

impl ItemVocab {
    pub fn new(items: Vec<EntityId>) -> Self {
        let slot = items.iter().enumerate().map(|(i, &e)| (e, i)).collect();
        ItemVocab { items, slot }
    }

    pub fn from_graph(graph: &KnowledgeGraph) -> Self {
        Self::new(graph.items())
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn slot(&self, e: EntityId) -> Result<usize> {
        self.slot
            .get(&e)
            .copied()
            .ok_or_else(|| Error::UnknownEntity(format!("item {} not in vocabulary", e.0)))
    }

    pub fn item(&self, slot: usize) -> EntityId {
        self.items[slot]
    }

    pub fn items(&self) -> &[EntityId] {
        &self.items
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Core {
    Recurrent {
        wz: Matrix,
        wr: Matrix,
        wn: Matrix,
        uz: Matrix,
        ur: Matrix,
        un: Matrix,
        bz: Matrix,
        br: Matrix,
        bn: Matrix,
    },
    Attention {
        query: Matrix,
        global: Matrix,
        local: Matrix,
        bias: Matrix,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderWeights {
    input: Matrix,
    core: Core,
    output: Matrix,
    output_bias: Matrix,
}

/// Output of [`encode`].
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderState {
    pub s_se: Vec<f64>,
    pub item_scores: Vec<f64>,
}

/// Forward intermediates kept for the backward pass.
#[derive(Debug, Clone)]
pub struct EncoderCache {
    slots: Vec<usize>,
    steps: StepCache,
    pub state: EncoderState,
}

#[derive(Debug, Clone)]
enum StepCache {
    Recurrent {
        // per step: previous hidden, z, r, n
        hidden: Vec<Vec<f64>>,
        z: Vec<Vec<f64>>,
        r: Vec<Vec<f64>>,
        n: Vec<Vec<f64>>,
    },
    Attention {
        alpha: Vec<f64>,
        context: Vec<f64>,
    },
}

impl EncoderWeights {
    pub fn new(kind: EncoderKind, vocab: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = Matrix::uniform(vocab, dim, 0.5 / (dim as f64).sqrt(), &mut rng);
        let core = match kind {
            EncoderKind::Recurrent => Core::Recurrent {
                wz: Matrix::xavier(dim, dim, &mut rng),
                wr: Matrix::xavier(dim, dim, &mut rng),
                wn: Matrix::xavier(dim, dim, &mut rng),
                uz: Matrix::xavier(dim, dim, &mut rng),
                ur: Matrix::xavier(dim, dim, &mut rng),
                un: Matrix::xavier(dim, dim, &mut rng),
                bz: Matrix::zeros(1, dim),
                br: Matrix::zeros(1, dim),
                bn: Matrix::zeros(1, dim),
            },
            EncoderKind::Attention => Core::Attention {
                query: Matrix::xavier(dim, dim, &mut rng),
                global: Matrix::xavier(dim, dim, &mut rng),
                local: Matrix::xavier(dim, dim, &mut rng),
                bias: Matrix::zeros(1, dim),
            },
        };
        EncoderWeights {
            input,
            core,
            output: Matrix::xavier(vocab, dim, &mut rng),
            output_bias: Matrix::zeros(1, vocab),
        }
    }

    pub fn zeros(kind: EncoderKind, vocab: usize, dim: usize) -> Self {
        let mut w = Self::new(kind, vocab, dim, 0);
        w.for_each_mut(|_, m| m.fill(0.0));
        w
    }

    pub fn zeros_like(&self) -> Self {
        let mut w = self.clone();
        w.for_each_mut(|_, m| m.fill(0.0));
        w
    }

    pub fn kind(&self) -> EncoderKind {
        match self.core {
            Core::Recurrent { .. } => EncoderKind::Recurrent,
            Core::Attention { .. } => EncoderKind::Attention,
        }
    }

    pub fn dim(&self) -> usize {
        self.input.cols()
    }

    pub fn vocab_size(&self) -> usize {
        self.input.rows()
    }

    /// Item input embeddings (vocab × d).
    pub fn input_mut(&mut self) -> &mut Matrix {
        &mut self.input
    }

    pub fn for_each(&self, mut f: impl FnMut(&'static str, &Matrix)) {
        f("enc.input", &self.input);
        match &self.core {
            Core::Recurrent {
                wz,
                wr,
                wn,
                uz,
                ur,
                un,
                bz,
                br,
                bn,
            } => {
                for (name, m) in [
                    ("enc.wz", wz),
                    ("enc.wr", wr),
                    ("enc.wn", wn),
                    ("enc.uz", uz),
                    ("enc.ur", ur),
                    ("enc.un", un),
                    ("enc.bz", bz),
                    ("enc.br", br),
                    ("enc.bn", bn),
                ] {
                    f(name, m);
                }
            }
            Core::Attention {
                query,
                global,
                local,
                bias,
            } => {
                for (name, m) in [
                    ("enc.query", query),
                    ("enc.global", global),
                    ("enc.local", local),
                    ("enc.bias", bias),
                ] {
                    f(name, m);
                }
            }
        }
        f("enc.output", &self.output);
        f("enc.output_bias", &self.output_bias);
    }

    pub fn for_each_mut(&mut self, mut f: impl FnMut(&'static str, &mut Matrix)) {
        f("enc.input", &mut self.input);
        match &mut self.core {
            Core::Recurrent {
                wz,
                wr,
                wn,
                uz,
                ur,
                un,
                bz,
                br,
                bn,
            } => {
                for (name, m) in [
                    ("enc.wz", wz),
                    ("enc.wr", wr),
                    ("enc.wn", wn),
                    ("enc.uz", uz),
                    ("enc.ur", ur),
                    ("enc.un", un),
                    ("enc.bz", bz),
                    ("enc.br", br),
                    ("enc.bn", bn),
                ] {
                    f(name, m);
                }
            }
            Core::Attention {
                query,
                global,
                local,
                bias,
            } => {
                for (name, m) in [
                    ("enc.query", query),
                    ("enc.global", global),
                    ("enc.local", local),
                    ("enc.bias", bias),
                ] {
                    f(name, m);
                }
            }
        }
        f("enc.output", &mut self.output);
        f("enc.output_bias", &mut self.output_bias);
    }

    pub fn to_tensors(&self, set: &mut TensorSet) {
        self.for_each(|name, m| set.push(name, m.clone()));
    }

    pub fn from_tensors(set: &mut TensorSet) -> Result<Self> {
        let kind = if set.get("enc.wz").is_some() {
            EncoderKind::Recurrent
        } else {
            EncoderKind::Attention
        };
        let (vocab, dim) = set
            .get("enc.input")
            .map(|m| (m.rows(), m.cols()))
            .ok_or_else(|| Error::InvalidArgument("tensor 'enc.input' missing".into()))?;
        let mut w = Self::zeros(kind, vocab, dim);
        let mut err = None;
        w.for_each_mut(|name, m| {
            if err.is_some() {
                return;
            }
            match set.take(name) {
                Ok(t) if t.rows() == m.rows() && t.cols() == m.cols() => *m = t,
                Ok(t) => {
                    err = Some(Error::Dim {
                        what: name,
                        expected: m.rows() * m.cols(),
                        got: t.rows() * t.cols(),
                    })
                }
                Err(e) => err = Some(e),
            }
        });
        err.map_or(Ok(w), Err)
    }

    /// Runs the encoder and keeps what the backward pass needs.
    pub fn forward(&self, vocab: &ItemVocab, prefix: &[EntityId]) -> Result<EncoderCache> {
        if prefix.is_empty() {
            return Err(Error::InvalidArgument("empty session prefix".into()));
        }
        let slots = prefix
            .iter()
            .map(|&e| vocab.slot(e))
            .collect::<Result<Vec<_>>>()?;
        if let Some(&bad) = slots.iter().find(|&&s| s >= self.input.rows()) {
            return Err(Error::UnknownEntity(format!(
                "vocab slot {bad} out of range"
            )));
        }
        let d = self.dim();
        let (s_se, steps) = match &self.core {
            Core::Recurrent {
                wz,
                wr,
                wn,
                uz,
                ur,
                un,
                bz,
                br,
                bn,
            } => {
                let mut h = vec![0.0; d];
                let (mut hidden, mut zs, mut rs, mut ns) = (vec![], vec![], vec![], vec![]);
                for &s in &slots {
                    let x = self.input.row(s);
                    let gate = |w: &Matrix, u: &Matrix, b: &Matrix, hv: &[f64]| -> Vec<f64> {
                        let mut a = w.matvec(x);
                        axpy(&mut a, 1.0, &u.matvec(hv));
                        axpy(&mut a, 1.0, b.row(0));
                        a
                    };
                    let z: Vec<f64> = gate(wz, uz, bz, &h).into_iter().map(sigmoid).collect();
                    let r: Vec<f64> = gate(wr, ur, br, &h).into_iter().map(sigmoid).collect();
                    let rh: Vec<f64> = r.iter().zip(&h).map(|(a, b)| a * b).collect();
                    let n: Vec<f64> = gate(wn, un, bn, &rh).into_iter().map(f64::tanh).collect();
                    let next: Vec<f64> =
                        (0..d).map(|i| (1.0 - z[i]) * n[i] + z[i] * h[i]).collect();
                    hidden.push(std::mem::replace(&mut h, next));
                    zs.push(z);
                    rs.push(r);
                    ns.push(n);
                }
                (
                    h,
                    StepCache::Recurrent {
                        hidden,
                        z: zs,
                        r: rs,
                        n: ns,
                    },
                )
            }
            Core::Attention {
                query,
                global,
                local,
                bias,
            } => {
                let q = self.input.row(*slots.last().unwrap());
                let scores: Vec<f64> = slots
                    .iter()
                    .map(|&s| dot(q, &query.matvec(self.input.row(s))))
                    .collect();
                let (alpha, _) = softmax(&scores);
                let mut context = vec![0.0; d];
                for (&s, &a) in slots.iter().zip(&alpha) {
                    axpy(&mut context, a, self.input.row(s));
                }
                let mut pre = global.matvec(&context);
                axpy(&mut pre, 1.0, &local.matvec(q));
                axpy(&mut pre, 1.0, bias.row(0));
                (
                    pre.into_iter().map(f64::tanh).collect(),
                    StepCache::Attention { alpha, context },
                )
            }
        };
        let mut item_scores = self.output.matvec(&s_se);
        axpy(&mut item_scores, 1.0, self.output_bias.row(0));
        Ok(EncoderCache {
            slots,
            steps,
            state: EncoderState { s_se, item_scores },
        })
    }

    /// Accumulates parameter gradients given `dL/ds_se` and `dL/dlogits`.
    pub fn backward(
        &self,
        cache: &EncoderCache,
        d_state: &[f64],
        d_scores: &[f64],
        grads: &mut EncoderWeights,
    ) {
        let d = self.dim();
        let s_se = &cache.state.s_se;
        grads.output.add_outer(1.0, d_scores, s_se);
        axpy(grads.output_bias.row_mut(0), 1.0, d_scores);
        let mut ds = self.output.matvec_t(d_scores);
        axpy(&mut ds, 1.0, d_state);

        match (&self.core, &mut grads.core, &cache.steps) {
            (
                Core::Recurrent {
                    wz,
                    wr,
                    wn,
                    uz,
                    ur,
                    un,
                    ..
                },
                Core::Recurrent {
                    wz: gwz,
                    wr: gwr,
                    wn: gwn,
                    uz: guz,
                    ur: gur,
                    un: gun,
                    bz: gbz,
                    br: gbr,
                    bn: gbn,
                },
                StepCache::Recurrent { hidden, z, r, n },
            ) => {
                let mut dh = ds;
                for t in (0..cache.slots.len()).rev() {
                    let x = self.input.row(cache.slots[t]);
                    let (h, z, r, n) = (&hidden[t], &z[t], &r[t], &n[t]);
                    let mut dh_prev: Vec<f64> = (0..d).map(|i| dh[i] * z[i]).collect();
                    let da_n: Vec<f64> = (0..d)
                        .map(|i| dh[i] * (1.0 - z[i]) * (1.0 - n[i] * n[i]))
                        .collect();
                    let da_z: Vec<f64> = (0..d)
                        .map(|i| dh[i] * (h[i] - n[i]) * z[i] * (1.0 - z[i]))
                        .collect();
                    let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
                    gwn.add_outer(1.0, &da_n, x);
                    gun.add_outer(1.0, &da_n, &rh);
                    axpy(gbn.row_mut(0), 1.0, &da_n);
                    let d_rh = un.matvec_t(&da_n);
                    let da_r: Vec<f64> = (0..d)
                        .map(|i| d_rh[i] * h[i] * r[i] * (1.0 - r[i]))
                        .collect();
                    for i in 0..d {
                        dh_prev[i] += d_rh[i] * r[i];
                    }
                    gwr.add_outer(1.0, &da_r, x);
                    gur.add_outer(1.0, &da_r, h);
                    axpy(gbr.row_mut(0), 1.0, &da_r);
                    gwz.add_outer(1.0, &da_z, x);
                    guz.add_outer(1.0, &da_z, h);
                    axpy(gbz.row_mut(0), 1.0, &da_z);
                    axpy(&mut dh_prev, 1.0, &ur.matvec_t(&da_r));
                    axpy(&mut dh_prev, 1.0, &uz.matvec_t(&da_z));

                    let mut dx = wn.matvec_t(&da_n);
                    axpy(&mut dx, 1.0, &wr.matvec_t(&da_r));
                    axpy(&mut dx, 1.0, &wz.matvec_t(&da_z));
                    axpy(grads.input.row_mut(cache.slots[t]), 1.0, &dx);
                    dh = dh_prev;
                }
            }
            (
                Core::Attention {
                    query,
                    global,
                    local,
                    ..
                },
                Core::Attention {
                    query: gq,
                    global: gg,
                    local: gl,
                    bias: gb,
                },
                StepCache::Attention { alpha, context },
            ) => {
                let last = *cache.slots.last().unwrap();
                let q = self.input.row(last);
                let dpre: Vec<f64> = (0..d).map(|i| ds[i] * (1.0 - s_se[i] * s_se[i])).collect();
                gg.add_outer(1.0, &dpre, context);
                gl.add_outer(1.0, &dpre, q);
                axpy(gb.row_mut(0), 1.0, &dpre);
                let dc = global.matvec_t(&dpre);
                let mut dq = local.matvec_t(&dpre);

                let d_alpha: Vec<f64> = cache
                    .slots
                    .iter()
                    .map(|&s| dot(&dc, self.input.row(s)))
                    .collect();
                let mean: f64 = alpha.iter().zip(&d_alpha).map(|(a, g)| a * g).sum();
                let qt_query = query.matvec_t(q);
                for (j, &s) in cache.slots.iter().enumerate() {
                    let x = self.input.row(s);
                    let da = alpha[j] * (d_alpha[j] - mean);
                    gq.add_outer(da, q, x);
                    axpy(&mut dq, da, &query.matvec(x));
                    let row = grads.input.row_mut(s);
                    axpy(row, alpha[j], &dc);
                    axpy(row, da, &qt_query);
                }
                axpy(grads.input.row_mut(last), 1.0, &dq);
            }
            _ => unreachable!("gradient buffer built from a different encoder variant"),
        }
    }

    pub fn is_finite(&self) -> bool {
        let mut ok = true;
        self.for_each(|_, m| ok &= m.is_finite());
        ok
    }
}

/// Encodes a prefix of item entities.
pub fn encode(
    weights: &EncoderWeights,
    vocab: &ItemVocab,
    prefix: &[EntityId],
) -> Result<EncoderState> {
    Ok(weights.forward(vocab, prefix)?.state)
}

/// Pointwise binary cross-entropy over every vocabulary slot, one positive.
pub fn ce_loss(item_scores: &[f64], target: usize) -> f64 {
    item_scores
        .iter()
        .enumerate()
        .map(|(j, &l)| {
            if j == target {
                -log_sigmoid(l)
            } else {
                -log_sigmoid(-l)
            }
        })
        .sum()
}

/// `dL/dlogit_j = σ(l_j) − y_j`
pub fn ce_loss_grad(item_scores: &[f64], target: usize) -> Vec<f64> {
    item_scores
        .iter()
        .enumerate()
        .map(|(j, &l)| sigmoid(l) - if j == target { 1.0 } else { 0.0 })
        .collect()
}
