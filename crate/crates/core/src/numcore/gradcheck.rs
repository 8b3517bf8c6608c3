//! Central-difference verification of reverse-mode gradients.

use serde::Serialize;

use super::graph::{Graph, Var};
use super::param::{ParamId, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    /// Finite-difference step.
    pub step: f64,
    /// Pass threshold on the relative error.
    pub tolerance: f64,
    /// Lower bound on the relative-error denominator, so gradients that are
    /// numerically zero are compared on an absolute scale.
    pub denom_floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            denom_floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub elements: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub max_rel_err: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(|p| !p.passed)
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn eval_scalar<F>(store: &ParamStore<f64>, objective: &mut F) -> Result<f64>
where
    F: FnMut(&ParamStore<f64>, &mut Graph<f64>) -> Result<Var>,
{
    let mut g = Graph::new();
    let out = objective(store, &mut g)?;
    let v = g.value(out);
    if v.len() != 1 {
        return Err(Error::Contract(format!(
            "grad_check objective must be scalar, got shape {:?}",
            v.shape()
        )));
    }
    Ok(v.data()[0])
}

/// Compares autodiff gradients of `objective` against central differences for
/// every parameter in `ids` (all parameters when `None`).
///
/// The store's gradient accumulators are reset before and after the check.
pub fn grad_check<F>(
    store: &mut ParamStore<f64>,
    ids: Option<&[ParamId]>,
    mut objective: F,
    cfg: GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore<f64>, &mut Graph<f64>) -> Result<Var>,
{
    let ids: Vec<ParamId> = match ids {
        Some(ids) => ids.to_vec(),
        None => store.ids().collect(),
    };

    store.zero_grads();
    let mut g = Graph::new();
    let out = objective(store, &mut g)?;
    if g.value(out).len() != 1 {
        return Err(Error::Contract(format!(
            "grad_check objective must be scalar, got shape {:?}",
            g.shape(out)
        )));
    }
    g.backward(out)?;
    g.accumulate_into(store)?;

    let mut params = Vec::with_capacity(ids.len());
    for id in ids {
        let analytic = store.grad(id).clone();
        let mut max_rel: f64 = 0.0;
        let mut max_abs: f64 = 0.0;
        for k in 0..analytic.len() {
            let orig = store.value(id).data()[k];
            store.value_mut(id).data_mut()[k] = orig + cfg.step;
            let up = eval_scalar(store, &mut objective)?;
            store.value_mut(id).data_mut()[k] = orig - cfg.step;
            let down = eval_scalar(store, &mut objective)?;
            store.value_mut(id).data_mut()[k] = orig;

            let numeric = (up - down) / (2.0 * cfg.step);
            let a = analytic.data()[k];
            max_abs = max_abs.max((a - numeric).abs());
            max_rel = max_rel.max(relative_error(a, numeric, cfg.denom_floor));
        }
        params.push(ParamCheck {
            name: store.name(id).to_string(),
            elements: analytic.len(),
            max_rel_err: max_rel,
            max_abs_err: max_abs,
            passed: max_rel < cfg.tolerance,
        });
    }
    store.zero_grads();

    let max_rel_err = params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max);
    let passed = params.iter().all(|p| p.passed);
    Ok(GradCheckReport {
        params,
        max_rel_err,
        passed,
    })
}
