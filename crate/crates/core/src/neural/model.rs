use std::collections::BTreeSet;
use std::path::Path;
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{gelu, layer_norm_rows};
use super::{build_mask, Graph, Mat, MaskSpec, ParamId, ParamStore, Var, Vocab};
use crate::textsim::EmbeddingTable;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub max_seq: usize,
    /// Number of latent categories.
    pub latent_k: usize,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_heads: 4,
            n_layers: 2,
            d_ff: 256,
            max_seq: 256,
            latent_k: 5,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "d_model={} must be a positive multiple of n_heads={}",
                self.d_model, self.n_heads
            )));
        }
        if self.n_layers == 0 || self.d_ff == 0 || self.max_seq == 0 || self.latent_k == 0 {
            return Err(Error::InvalidConfig("layer, width, length and latent counts must be ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Layer {
    ln1: (ParamId, ParamId),
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: Linear,
    ln2: (ParamId, ParamId),
    ff1: Linear,
    ff2: Linear,
}

/// Task heads sharing one encoder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Heads {
    /// Pooled state plus the knowledge flag → logit.
    pub detect: Linear,
    pub rank: Linear,
    pub domain: Linear,
    pub entity: Linear,
    pub document: Linear,
    pub lang_hidden: Linear,
    pub lang_out: Linear,
    pub gate: Linear,
    pub bow: Linear,
    pub posterior: Linear,
    pub prior: Linear,
    /// Latent embedding matrix, one row per category.
    pub latent: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiniModel {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub params: ParamStore,
    pub heads: Heads,
    tok_emb: ParamId,
    pos_emb: ParamId,
    layers: Vec<Layer>,
    final_ln: (ParamId, ParamId),
    trained: BTreeSet<String>,
}

/// Encoder output for one sequence.
pub struct Forward {
    /// `seq_len × d_model` top-layer states.
    pub hidden: Var,
    /// `[layer][head]`, each `seq_len × seq_len`.
    pub attention: Vec<Vec<Var>>,
}

/// Value-only encoder output.
#[derive(Debug, Clone)]
pub struct Encoding {
    pub hidden: Mat,
    pub attention: Vec<Vec<Mat>>,
}

impl Encoding {
    /// Head-averaged attention of the last layer.
    pub fn last_layer_mean(&self) -> Mat {
        let heads = self.attention.last().expect("at least one layer");
        let mut out = Mat::zeros(heads[0].rows(), heads[0].cols());
        for h in heads {
            out.add_assign(h);
        }
        out.scale_assign(1.0 / heads.len() as f64);
        out
    }
}

struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    fn uniform(&mut self, rows: usize, cols: usize, std: f64) -> Mat {
        let a = std * 3f64.sqrt();
        Mat::from_vec(rows, cols, (0..rows * cols).map(|_| self.rng.gen_range(-a..a)).collect())
    }
}

impl MiniModel {
    pub fn new(config: ModelConfig, vocab: Vocab) -> Result<Self> {
        config.validate()?;
        let mut init = Init {
            rng: ChaCha8Rng::seed_from_u64(config.init_seed),
        };
        let mut p = ParamStore::default();
        let d = config.d_model;
        let v = vocab.len();

        let linear = |p: &mut ParamStore, init: &mut Init, name: &str, i: usize, o: usize| Linear {
            w: p.add(format!("{name}.w"), init.uniform(i, o, 1.0 / (i as f64).sqrt())),
            b: p.add(format!("{name}.b"), Mat::zeros(1, o)),
        };
        let ln = |p: &mut ParamStore, name: &str| {
            (
                p.add(format!("{name}.g"), Mat::filled(1, d, 1.0)),
                p.add(format!("{name}.b"), Mat::zeros(1, d)),
            )
        };

        let tok_emb = p.add("tok_emb", init.uniform(v, d, 0.5));
        let pos_emb = p.add("pos_emb", init.uniform(config.max_seq, d, 0.1));
        let mut layers = Vec::new();
        for l in 0..config.n_layers {
            let s = 1.0 / (d as f64).sqrt();
            layers.push(Layer {
                ln1: ln(&mut p, &format!("l{l}.ln1")),
                wq: p.add(format!("l{l}.wq"), init.uniform(d, d, s)),
                wk: p.add(format!("l{l}.wk"), init.uniform(d, d, s)),
                wv: p.add(format!("l{l}.wv"), init.uniform(d, d, s)),
                wo: linear(&mut p, &mut init, &format!("l{l}.wo"), d, d),
                ln2: ln(&mut p, &format!("l{l}.ln2")),
                ff1: linear(&mut p, &mut init, &format!("l{l}.ff1"), d, config.d_ff),
                ff2: linear(&mut p, &mut init, &format!("l{l}.ff2"), config.d_ff, d),
            });
        }
        let final_ln = ln(&mut p, "ln_f");
        let k = config.latent_k;
        let heads = Heads {
            detect: linear(&mut p, &mut init, "head.detect", d + 1, 1),
            rank: linear(&mut p, &mut init, "head.rank", d, 1),
            domain: linear(&mut p, &mut init, "head.domain", d, 1),
            entity: linear(&mut p, &mut init, "head.entity", d, 1),
            document: linear(&mut p, &mut init, "head.document", d, 1),
            lang_hidden: linear(&mut p, &mut init, "head.lang_hidden", d, d),
            lang_out: linear(&mut p, &mut init, "head.lang_out", d, v),
            gate: linear(&mut p, &mut init, "head.gate", 3 * d, 1),
            bow: linear(&mut p, &mut init, "head.bow", d, v),
            posterior: linear(&mut p, &mut init, "head.posterior", d, k),
            prior: linear(&mut p, &mut init, "head.prior", d, k),
            latent: p.add("head.latent", init.uniform(k, d, 0.5)),
        };
        Ok(Self {
            config,
            vocab,
            params: p,
            heads,
            tok_emb,
            pos_emb,
            layers,
            final_ln,
            trained: BTreeSet::new(),
        })
    }

    pub fn graph(&self) -> Graph<'_> {
        Graph::new(&self.params)
    }

    pub fn mark_trained(&mut self, head: &str) {
        self.trained.insert(head.to_string());
    }

    pub fn is_trained(&self, head: &str) -> bool {
        self.trained.contains(head)
    }

    pub fn require_trained(&self, head: &str) -> Result<()> {
        if self.is_trained(head) {
            Ok(())
        } else {
            Err(Error::NotTrained(head.to_string()))
        }
    }

    pub fn trained_heads(&self) -> impl Iterator<Item = &str> {
        self.trained.iter().map(String::as_str)
    }

    /// Runs the encoder. `bos_shift`, when given, is a `1 × d_model` vector
    /// added to the first position's input embedding.
    pub fn forward<'m>(
        &'m self,
        g: &mut Graph<'m>,
        ids: &[usize],
        mask: &MaskSpec,
        bos_shift: Option<Var>,
    ) -> Result<Forward> {
        let n = ids.len();
        if n == 0 {
            return Err(Error::Contract("empty input sequence".into()));
        }
        if n > self.config.max_seq {
            return Err(Error::TooLong {
                len: n,
                max_seq: self.config.max_seq,
            });
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.vocab.len()) {
            return Err(Error::Contract(format!("token id {bad} outside vocabulary of {}", self.vocab.len())));
        }
        let visible = Rc::new(build_mask(mask, n)?);

        let tok_table = g.param(self.tok_emb);
        let tok = g.gather(tok_table, ids);
        let pos_table = g.param(self.pos_emb);
        let positions: Vec<usize> = (0..n).collect();
        let pos = g.gather(pos_table, &positions);
        let mut x = g.add(tok, pos);
        if let Some(shift) = bos_shift {
            let first = g.slice_rows(x, 0, 1);
            let first = g.add(first, shift);
            x = if n > 1 {
                let rest = g.slice_rows(x, 1, n);
                g.concat_rows(&[first, rest])
            } else {
                first
            };
        }

        let d = self.config.d_model;
        let h = self.config.n_heads;
        let dh = d / h;
        let inv_sqrt = 1.0 / (dh as f64).sqrt();
        let mut attention = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let a = self.norm(g, x, layer.ln1);
            let wq = g.param(layer.wq);
            let wk = g.param(layer.wk);
            let wv = g.param(layer.wv);
            let q = g.matmul(a, wq);
            let k = g.matmul(a, wk);
            let v = g.matmul(a, wv);
            let mut outs = Vec::with_capacity(h);
            let mut probs = Vec::with_capacity(h);
            for head in 0..h {
                let (s, e) = (head * dh, (head + 1) * dh);
                let qh = g.slice_cols(q, s, e);
                let kh = g.slice_cols(k, s, e);
                let vh = g.slice_cols(v, s, e);
                let scores = g.matmul_t(qh, kh);
                let scores = g.scale(scores, inv_sqrt);
                let p = g.softmax(scores, Some(visible.clone()));
                outs.push(g.matmul(p, vh));
                probs.push(p);
            }
            let cat = g.concat_cols(&outs);
            let proj = g.linear(cat, layer.wo.w, layer.wo.b);
            x = g.add(x, proj);

            let b = self.norm(g, x, layer.ln2);
            let f = g.linear(b, layer.ff1.w, layer.ff1.b);
            let f = g.gelu(f);
            let f = g.linear(f, layer.ff2.w, layer.ff2.b);
            x = g.add(x, f);
            attention.push(probs);
        }
        let hidden = self.norm(g, x, self.final_ln);
        Ok(Forward { hidden, attention })
    }

    fn norm<'m>(&'m self, g: &mut Graph<'m>, x: Var, (gain, bias): (ParamId, ParamId)) -> Var {
        let n = g.layer_norm(x);
        let gain = g.param(gain);
        let bias = g.param(bias);
        let n = g.mul_row(n, gain);
        g.add_row(n, bias)
    }

    /// Forward pass returning plain values.
    pub fn encode(&self, ids: &[usize], mask: &MaskSpec, bos_shift: Option<&Mat>) -> Result<Encoding> {
        let mut g = self.graph();
        let shift = bos_shift.map(|m| g.constant(m.clone()));
        let f = self.forward(&mut g, ids, mask, shift)?;
        Ok(Encoding {
            hidden: g.value(f.hidden).clone(),
            attention: f
                .attention
                .iter()
                .map(|l| l.iter().map(|v| g.value(*v).clone()).collect())
                .collect(),
        })
    }

    /// Static token embeddings for similarity scoring.
    pub fn embedding_table(&self) -> EmbeddingTable {
        let emb = self.params.get(self.tok_emb);
        let vectors = self
            .vocab
            .tokens()
            .iter()
            .enumerate()
            .skip(super::SPECIALS.len())
            .map(|(i, t)| (t.clone(), emb.row(i).to_vec()))
            .collect();
        EmbeddingTable::new(vectors, emb.row(super::UNK).to_vec())
    }

    pub fn apply_linear(&self, x: &Mat, lin: Linear) -> Mat {
        let mut out = x.matmul(self.params.get(lin.w));
        let b = self.params.get(lin.b);
        for i in 0..out.rows() {
            for (o, v) in out.row_mut(i).iter_mut().zip(b.data()) {
                *o += v;
            }
        }
        out
    }

    /// Value-level layer norm with this model's final gain/bias; exposed for
    /// cross-checking graph results.
    pub fn final_norm_value(&self, x: &Mat) -> Mat {
        let (mut n, _) = layer_norm_rows(x);
        let g = self.params.get(self.final_ln.0);
        let b = self.params.get(self.final_ln.1);
        for i in 0..n.rows() {
            for (j, o) in n.row_mut(i).iter_mut().enumerate() {
                *o = *o * g.data()[j] + b.data()[j];
            }
        }
        n
    }

    /// `GELU` as used by the feed-forward and vocabulary heads.
    pub fn gelu_value(x: &Mat) -> Mat {
        x.map(gelu)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let ckpt = Checkpoint {
            format_version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            trained: self.trained.iter().cloned().collect(),
            params: self.params.clone(),
        };
        let json = serde_json::to_string(&ckpt)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    /// Loads a checkpoint; `expect` guards against dimension mismatches.
    pub fn load(path: impl AsRef<Path>, expect: Option<&ModelConfig>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::parse(path, &e))?;
        if ckpt.format_version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {} (expected {CHECKPOINT_VERSION})",
                ckpt.format_version
            )));
        }
        if let Some(exp) = expect {
            if exp.d_model != ckpt.config.d_model || exp.latent_k != ckpt.config.latent_k {
                return Err(Error::Checkpoint(format!(
                    "checkpoint has d_model={} K={}, expected d_model={} K={}",
                    ckpt.config.d_model, ckpt.config.latent_k, exp.d_model, exp.latent_k
                )));
            }
        }
        let mut model = MiniModel::new(ckpt.config, ckpt.vocab)?;
        if model.params.len() != ckpt.params.len() {
            return Err(Error::Checkpoint(format!(
                "{} parameter tensors, expected {}",
                ckpt.params.len(),
                model.params.len()
            )));
        }
        for ((name, fresh), (cname, saved)) in model.params.iter().zip(ckpt.params.iter()) {
            if name != cname || fresh.shape() != saved.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {cname} {:?} does not match {name} {:?}",
                    saved.shape(),
                    fresh.shape()
                )));
            }
        }
        if !ckpt.params.is_finite() {
            return Err(Error::Checkpoint("non-finite parameter values".into()));
        }
        model.params = ckpt.params;
        model.trained = ckpt.trained.into_iter().collect();
        Ok(model)
    }
}

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format_version: u32,
    config: ModelConfig,
    vocab: Vocab,
    trained: Vec<String>,
    params: ParamStore,
}
