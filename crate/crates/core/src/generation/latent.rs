use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::GenerationInput;
use crate::neural::{Encoded, Graph, MaskKind, MiniModel, Var};
use crate::{Error, Result};

/// `1 × K` posterior from the last position of a trapezoidal pass over an
/// input that includes the response.
pub fn posterior_graph<'m>(model: &'m MiniModel, g: &mut Graph<'m>, enc: &Encoded) -> Result<Var> {
    if enc.mask.response.is_empty() || enc.mask.kind != MaskKind::Trapezoidal {
        return Err(Error::Contract("posterior needs a response under a trapezoidal mask".into()));
    }
    let f = model.forward(g, &enc.ids, &enc.mask, None)?;
    let last = enc.len() - 1;
    let h = g.slice_rows(f.hidden, last, last + 1);
    let logits = g.linear(h, model.heads.posterior.w, model.heads.posterior.b);
    Ok(g.softmax(logits, None))
}

/// `1 × K` prior from the `<bos>` state of an input without a response.
pub fn prior_graph<'m>(model: &'m MiniModel, g: &mut Graph<'m>, enc: &Encoded) -> Result<Var> {
    if !enc.mask.response.is_empty() {
        return Err(Error::Contract("prior input must not contain response tokens".into()));
    }
    let f = model.forward(g, &enc.ids, &enc.mask, None)?;
    let h = g.slice_rows(f.hidden, 0, 1);
    let logits = g.linear(h, model.heads.prior.w, model.heads.prior.b);
    Ok(g.softmax(logits, None))
}

pub fn posterior_z(model: &MiniModel, input: &GenerationInput) -> Result<Vec<f64>> {
    if input.response.is_none() {
        return Err(Error::Contract("posterior needs the gold response".into()));
    }
    let enc = input.encode(&model.vocab, model.config.max_seq)?;
    let mut g = model.graph();
    let q = posterior_graph(model, &mut g, &enc)?;
    Ok(g.value(q).data().to_vec())
}

pub fn prior_z(model: &MiniModel, input: &GenerationInput) -> Result<Vec<f64>> {
    if input.response.is_some() {
        return Err(Error::Contract("prior input must not contain response tokens".into()));
    }
    let enc = input.encode(&model.vocab, model.config.max_seq)?;
    let mut g = model.graph();
    let p = prior_graph(model, &mut g, &enc)?;
    Ok(g.value(p).data().to_vec())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentState {
    pub posterior: Option<Vec<f64>>,
    pub prior: Vec<f64>,
    pub z: usize,
    pub h_z: Vec<f64>,
}

/// Index of the largest probability; the lowest index wins ties.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in p.iter().enumerate() {
        if *v > p[best] {
            best = i;
        }
    }
    best
}

/// Inference-time latent: the prior's argmax, or a draw from it when `rng`
/// is given. Any response in `input` feeds only the posterior.
pub fn latent_state<R: Rng + ?Sized>(
    model: &MiniModel,
    input: &GenerationInput,
    rng: Option<&mut R>,
) -> Result<LatentState> {
    let prior = prior_z(model, &input.without_response())?;
    let posterior = match input.response {
        Some(_) => Some(posterior_z(model, input)?),
        None => None,
    };
    let z = match rng {
        Some(rng) => WeightedIndex::new(&prior)
            .map_err(|e| Error::Contract(format!("prior is not a distribution: {e}")))?
            .sample(rng),
        None => argmax(&prior),
    };
    let h_z = model.params.get(model.heads.latent).row(z).to_vec();
    Ok(LatentState { posterior, prior, z, h_z })
}
