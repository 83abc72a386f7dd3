use std::ops::Range;

use super::dist::LOG_EPS;
use super::latent::{posterior_graph, prior_graph};
use super::{split_response, CopySource, GenerationInput, LossWeights};
use crate::corpus::{DialogueLog, KnowledgeBase};
use crate::neural::{train, Encoded, Graph, Mat, MiniModel, Objective, TrainConfig, TrainReport, Var};
use crate::textsim::tokenize;
use crate::{Error, Result};

/// Decoder distributions for a block of consecutive predicting positions.
pub struct DecoderOut {
    /// `T × V` vocabulary distribution.
    pub p_lang: Var,
    /// `T × V′` copy distribution, when copying is possible.
    pub p_att: Option<Var>,
    /// `T × 1` generation gate, when copying is possible.
    pub gates: Option<Var>,
    /// `T × V′` mixture.
    pub mixed: Var,
}

/// Runs the encoder with `h_z` added at `<bos>` and reads the output
/// distributions at `rows`.
pub fn decoder_outputs<'m>(
    model: &'m MiniModel,
    g: &mut Graph<'m>,
    enc: &Encoded,
    copy: &CopySource,
    h_z: Var,
    rows: Range<usize>,
) -> Result<DecoderOut> {
    let f = model.forward(g, &enc.ids, &enc.mask, Some(h_z))?;
    let t = rows.len();
    let h = g.slice_rows(f.hidden, rows.start, rows.end);
    let heads = &model.heads;
    let a = g.linear(h, heads.lang_hidden.w, heads.lang_hidden.b);
    let a = g.gelu(a);
    let logits = g.linear(a, heads.lang_out.w, heads.lang_out.b);
    let p_lang = g.softmax(logits, None);
    let n_oov = copy.oov.len();
    let padded = if n_oov > 0 {
        let zeros = g.constant(Mat::zeros(t, n_oov));
        g.concat_cols(&[p_lang, zeros])
    } else {
        p_lang
    };
    if !copy.is_enabled() {
        return Ok(DecoderOut {
            p_lang,
            p_att: None,
            gates: None,
            mixed: padded,
        });
    }

    let mut select = Mat::zeros(enc.len(), copy.ext_len());
    for (&p, &id) in copy.positions.iter().zip(&copy.ext_ids) {
        select.set(p, id, 1.0);
    }
    let mass = if copy.uniform {
        let mut u = Mat::zeros(t, enc.len());
        for i in 0..t {
            for &p in &copy.positions {
                u.set(i, p, 1.0);
            }
        }
        g.constant(u.matmul(&select))
    } else {
        let last = f.attention.last().expect("at least one layer");
        let mut att = last[0];
        for &head in &last[1..] {
            att = g.add(att, head);
        }
        let att = g.scale(att, 1.0 / last.len() as f64);
        let att = g.slice_rows(att, rows.start, rows.end);
        let select = g.constant(select);
        g.matmul(att, select)
    };
    let p_att = g.row_normalize(mass);

    let kh = g.slice_rows(f.hidden, copy.knowledge.start, copy.knowledge.end);
    let km = g.mean_rows(kh);
    let prod = g.mul_row(h, km);
    let ones = g.constant(Mat::filled(t, 1, 1.0));
    let km_rows = g.matmul(ones, km);
    let feat = g.concat_cols(&[prod, km_rows, h]);
    let z = g.linear(feat, heads.gate.w, heads.gate.b);
    let gates = g.sigmoid(z);
    let keep = g.affine(gates, -1.0, 1.0);
    let from_lang = g.mul_col(padded, gates);
    let from_att = g.mul_col(p_att, keep);
    let mixed = g.add(from_lang, from_att);
    Ok(DecoderOut {
        p_lang,
        p_att: Some(p_att),
        gates: Some(gates),
        mixed,
    })
}

/// A teacher-forcing example.
#[derive(Debug, Clone)]
pub struct GenExample {
    /// Full input under the trapezoidal mask.
    pub encoded: Encoded,
    /// The same input without the response, bidirectional.
    pub prior: Encoded,
    pub copy: CopySource,
    /// Extended ids of the response tokens followed by `<eos>`.
    pub targets: Vec<usize>,
    /// Vocabulary ids of the response tokens.
    pub bow_targets: Vec<usize>,
}

impl GenExample {
    pub fn new(model: &MiniModel, input: &GenerationInput, copy: bool) -> Result<Self> {
        let response = input
            .response
            .as_ref()
            .ok_or_else(|| Error::Contract("training example needs a response".into()))?;
        let encoded = input.encode(&model.vocab, model.config.max_seq)?;
        let r0 = encoded.mask.response.start;
        let mut prior = encoded.clone();
        prior.ids.truncate(r0);
        prior.tokens.truncate(r0);
        prior.mask = crate::neural::MaskSpec {
            kind: crate::neural::MaskKind::Bidirectional,
            knowledge: encoded.mask.knowledge.clone(),
            context: encoded.mask.context.clone(),
            response: r0..r0,
        };
        let vocab = &model.vocab;
        let source = if copy {
            CopySource::new(&encoded, vocab)
        } else {
            CopySource::disabled(vocab)
        };
        let targets = encoded.tokens[encoded.mask.response.clone()]
            .iter()
            .map(|t| source.ext_id(vocab, t))
            .collect();
        let bow_targets = response.iter().map(|t| vocab.id(t)).collect();
        Ok(Self {
            encoded,
            prior,
            copy: source,
            targets,
            bow_targets,
        })
    }

    /// Rows whose outputs predict the response tokens and `<eos>`.
    pub fn predicting_rows(&self) -> Range<usize> {
        let r = &self.encoded.mask.response;
        r.start - 1..r.end - 1
    }
}

/// Per-latent losses for one example.
pub struct LatentLosses {
    pub nll: Var,
    pub bow: Var,
    /// Absent when the gate is fixed at 1.
    pub norm: Option<Var>,
}

/// Losses with the latent fixed to `z`.
pub fn latent_losses<'m>(model: &'m MiniModel, g: &mut Graph<'m>, ex: &GenExample, z: usize) -> Result<LatentLosses> {
    let table = g.param(model.heads.latent);
    let h_z = g.slice_rows(table, z, z + 1);
    let out = decoder_outputs(model, g, &ex.encoded, &ex.copy, h_z, ex.predicting_rows())?;
    let at: Vec<(usize, usize)> = ex.targets.iter().enumerate().map(|(t, &w)| (t, w)).collect();
    let picked = g.pick(out.mixed, &at);
    let logs = g.log(picked, LOG_EPS);
    let sum = g.sum(logs);
    let nll = g.scale(sum, -1.0);

    let bow = bow_graph(model, g, h_z, &ex.bow_targets);
    let norm = out.gates.map(|gt| {
        let sq = g.mul(gt, gt);
        g.sum(sq)
    });
    Ok(LatentLosses { nll, bow, norm })
}

/// `−Σ ln softmax(W_1 h_z + b_1)[r_t]`.
pub fn bow_graph<'m>(model: &'m MiniModel, g: &mut Graph<'m>, h_z: Var, gold: &[usize]) -> Var {
    let logits = g.linear(h_z, model.heads.bow.w, model.heads.bow.b);
    let f = g.softmax(logits, None);
    if gold.is_empty() {
        return g.constant(Mat::scalar(0.0));
    }
    let at: Vec<(usize, usize)> = gold.iter().map(|&w| (0, w)).collect();
    let picked = g.pick(f, &at);
    let logs = g.log(picked, LOG_EPS);
    let sum = g.sum(logs);
    g.scale(sum, -1.0)
}

/// `Σ q (ln q − ln p)` on `1 × K` rows.
pub fn kld_graph(g: &mut Graph<'_>, q: Var, p: Var) -> Var {
    let lq = g.log(q, LOG_EPS);
    let lp = g.log(p, LOG_EPS);
    let diff = g.sub(lq, lp);
    let w = g.mul(q, diff);
    g.sum(w)
}

/// Loss components, each already averaged over the posterior.
pub struct GenLosses {
    pub nll: Var,
    pub bow: Var,
    pub kld: Var,
    pub norm: Var,
    pub total: Var,
}

/// Exact expectation over the K latent values under the posterior.
pub fn generation_losses<'m>(
    model: &'m MiniModel,
    g: &mut Graph<'m>,
    ex: &GenExample,
    w: &LossWeights,
) -> Result<GenLosses> {
    let q = posterior_graph(model, g, &ex.encoded)?;
    let p = prior_graph(model, g, &ex.prior)?;
    let k = model.config.latent_k;
    let (mut nlls, mut bows, mut norms) = (Vec::with_capacity(k), Vec::with_capacity(k), Vec::with_capacity(k));
    for z in 0..k {
        let l = latent_losses(model, g, ex, z)?;
        nlls.push(l.nll);
        bows.push(l.bow);
        norms.push(l.norm.unwrap_or_else(|| g.constant(Mat::scalar(0.0))));
    }
    let expect = |g: &mut Graph<'m>, parts: &[Var]| {
        let row = g.concat_cols(parts);
        let weighted = g.mul(q, row);
        g.sum(weighted)
    };
    let nll = expect(g, &nlls);
    let bow = expect(g, &bows);
    let norm = expect(g, &norms);
    let kld = kld_graph(g, q, p);
    let terms = [(nll, w.nll), (bow, w.bow), (kld, w.kld), (norm, w.norm)];
    let mut total = g.scale(terms[0].0, terms[0].1);
    for &(v, s) in &terms[1..] {
        let sv = g.scale(v, s);
        total = g.add(total, sv);
    }
    Ok(GenLosses {
        nll,
        bow,
        kld,
        norm,
        total,
    })
}

pub const GENERATOR_HEAD: &str = "generator";

pub struct GenObjective {
    pub weights: LossWeights,
}

impl Objective for GenObjective {
    type Example = GenExample;

    fn heads(&self) -> &[&'static str] {
        &[GENERATOR_HEAD]
    }

    fn loss<'m>(&self, model: &'m MiniModel, g: &mut Graph<'m>, ex: &GenExample) -> Result<Var> {
        Ok(generation_losses(model, g, ex, &self.weights)?.total)
    }
}

/// Which part of the gold response a generator learns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResponsePart {
    Full,
    Knowledge,
    Greeting,
}

/// Inputs for knowledge-seeking dialogues with a gold snippet and response.
/// Greeting inputs carry the gold knowledge part as their prefix.
pub fn generation_inputs(dialogues: &[DialogueLog], kb: &KnowledgeBase, part: ResponsePart) -> Result<Vec<GenerationInput>> {
    let mut out = Vec::new();
    for d in dialogues {
        if d.target() != Some(true) {
            continue;
        }
        let (Some(key), Some(response)) = (d.gold_knowledge(), d.gold_response()) else {
            continue;
        };
        let snippet = kb
            .get(key)
            .ok_or_else(|| Error::Integrity(format!("gold {key} not in knowledge base")))?;
        let base = GenerationInput::from_dialogue(d, &snippet.answer, None);
        let (kpart, greeting) = split_response(response, &snippet.answer);
        out.push(match part {
            ResponsePart::Full => base.with_response(tokenize(response).tokens),
            ResponsePart::Knowledge => base.with_response(tokenize(&kpart).tokens),
            ResponsePart::Greeting => base
                .with_prefix(tokenize(&kpart).tokens)
                .with_response(tokenize(&greeting).tokens),
        });
    }
    Ok(out)
}

pub fn train_generator(
    model: &mut MiniModel,
    inputs: &[GenerationInput],
    copy: bool,
    weights: &LossWeights,
    tcfg: &TrainConfig,
) -> Result<TrainReport> {
    let examples = inputs
        .iter()
        .map(|i| GenExample::new(model, i, copy))
        .collect::<Result<Vec<_>>>()?;
    train(model, &examples, &GenObjective { weights: *weights }, tcfg)
}
