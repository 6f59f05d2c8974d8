//! Finite-difference verification of analytic gradients.
//!
//! The loss closure gets a read-only view of the store and must return both
//! the scalar loss and the analytic gradient of every parameter it touched
//! (missing entries are treated as structurally zero). The harness perturbs
//! one scalar at a time, so it is O(params) forward passes per check and
//! meant for small test models only.

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::tensor::ParameterStore;

pub type LossAndGrads = (f64, IndexMap<String, Vec<f64>>);
pub type LossFn<'a> = &'a dyn Fn(&ParameterStore) -> Result<LossAndGrads>;

#[derive(Debug)]
pub struct GradCheckReport {
    /// Worst relative error per parameter, in store order.
    pub per_param: IndexMap<String, f64>,
    pub max_rel_error: f64,
    pub entries_checked: usize,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<(&str, f64)> {
        self.per_param
            .iter()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(k, v)| (k.as_str(), *v))
    }
}

/// Compare the closure's analytic gradients against central differences with
/// step `h`. Relative error uses |fd| + |analytic| as denominator, floored at
/// 1e-8. The closure is called twice up front at the unperturbed point and
/// must reproduce its results bit-for-bit, otherwise finite differences are
/// meaningless and a determinism error is returned.
pub fn grad_check(
    f: LossFn,
    params: &mut ParameterStore,
    h: f64,
) -> Result<GradCheckReport> {
    let (loss_a, grads_a) = f(params)?;
    let (loss_b, grads_b) = f(params)?;
    if loss_a.to_bits() != loss_b.to_bits() {
        return Err(Error::Determinism(format!(
            "loss differs between repeated evaluations at the same point: {loss_a:?} vs {loss_b:?}"
        )));
    }
    for (name, ga) in &grads_a {
        let same = grads_b.get(name).is_some_and(|gb| {
            ga.len() == gb.len() && ga.iter().zip(gb).all(|(x, y)| x.to_bits() == y.to_bits())
        });
        if !same {
            return Err(Error::Determinism(format!(
                "gradient of {name:?} differs between repeated evaluations"
            )));
        }
    }

    let mut per_param = IndexMap::new();
    let mut max_rel = 0.0f64;
    let mut entries = 0usize;
    for name in params.names() {
        let n = params.get(&name)?.numel();
        let mut worst = 0.0f64;
        for i in 0..n {
            let old = params.get(&name)?.values[i];
            params.get_mut(&name)?.values[i] = old + h;
            let (lp, _) = f(params)?;
            params.get_mut(&name)?.values[i] = old - h;
            let (lm, _) = f(params)?;
            params.get_mut(&name)?.values[i] = old;
            let fd = (lp - lm) / (2.0 * h);
            let g = grads_a.get(&name).map_or(0.0, |v| v[i]);
            let rel = (fd - g).abs() / (fd.abs() + g.abs()).max(1e-8);
            worst = worst.max(rel);
            entries += 1;
        }
        max_rel = max_rel.max(worst);
        per_param.insert(name, worst);
    }
    Ok(GradCheckReport {
        per_param,
        max_rel_error: max_rel,
        entries_checked: entries,
    })
}
