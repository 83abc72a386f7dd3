use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Graph, MiniModel, ParamId, Var};
use crate::Result;

pub const FD_STEP: f64 = 1e-4;
/// Denominator floor for relative errors, so that gradients that are zero
/// up to rounding do not blow the ratio up.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Largest analytic gradient magnitude among checked entries.
    pub max_abs_grad: f64,
}

/// Compares analytic gradients of `loss` with central finite differences on
/// `samples` randomly chosen parameter entries. Half the samples come from
/// entries with a nonzero analytic gradient (when there are any).
pub fn grad_check<F>(model: &MiniModel, loss: F, samples: usize, seed: u64) -> Result<GradCheck>
where
    F: for<'m> Fn(&'m MiniModel, &mut Graph<'m>) -> Result<Var>,
{
    let grads = {
        let mut g = model.graph();
        let l = loss(model, &mut g)?;
        g.backward(l)
    };
    let eval = |m: &MiniModel| -> Result<f64> {
        let mut g = m.graph();
        let l = loss(m, &mut g)?;
        Ok(g.scalar(l))
    };

    let mut nonzero: Vec<(ParamId, usize)> = Vec::new();
    for (id, g) in grads.iter() {
        for (i, v) in g.data().iter().enumerate() {
            if *v != 0.0 {
                nonzero.push((id, i));
            }
        }
    }
    let all: Vec<(ParamId, usize)> = model
        .params
        .ids()
        .flat_map(|id| (0..model.params.get(id).data().len()).map(move |i| (id, i)))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = model.clone();
    let mut report = GradCheck {
        max_rel_error: 0.0,
        checked: 0,
        max_abs_grad: 0.0,
    };
    for s in 0..samples {
        let pool = if s % 2 == 0 && !nonzero.is_empty() { &nonzero } else { &all };
        let (id, i) = pool[rng.gen_range(0..pool.len())];
        let analytic = grads.get(id).map_or(0.0, |g| g.data()[i]);
        let orig = probe.params.get(id).data()[i];
        probe.params.get_mut(id).data_mut()[i] = orig + FD_STEP;
        let up = eval(&probe)?;
        probe.params.get_mut(id).data_mut()[i] = orig - FD_STEP;
        let down = eval(&probe)?;
        probe.params.get_mut(id).data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR);
        report.max_rel_error = report.max_rel_error.max(rel);
        report.max_abs_grad = report.max_abs_grad.max(analytic.abs());
        report.checked += 1;
    }
    Ok(report)
}
