//! Central finite-difference verification of tape gradients.

use crate::error::{Error, Result};
use crate::numcore::params::ParamStore;
use crate::numcore::tape::{Tape, VarId};
use crate::numcore::tensor::Tensor;

/// Outcome of one gradient check.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// `max |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
    pub max_rel_err: f64,
    /// Where the worst element lives, e.g. `input 0 [17]` or `param enc.w [3]`.
    pub worst: String,
    pub checked: usize,
    pub pass: bool,
}

const REL_FLOOR: f64 = 1e-8;

struct Tracker {
    max_rel_err: f64,
    worst: String,
    checked: usize,
}

impl Tracker {
    fn observe(&mut self, analytic: f64, numeric: f64, at: impl FnOnce() -> String) {
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR);
        self.checked += 1;
        if rel > self.max_rel_err || self.checked == 1 {
            self.max_rel_err = self.max_rel_err.max(rel);
            self.worst = at();
        }
    }
}

fn evaluate<F>(store: &ParamStore<f64>, inputs: &[Tensor<f64>], f: &F) -> Result<f64>
where
    F: Fn(&mut Tape<'_, f64>, &[VarId]) -> Result<VarId>,
{
    let mut tape = Tape::new(store);
    let vars: Vec<VarId> = inputs.iter().map(|x| tape.constant(x.clone())).collect();
    let out = f(&mut tape, &vars)?;
    scalar_of(&tape, out)
}

fn scalar_of(tape: &Tape<'_, f64>, out: VarId) -> Result<f64> {
    let v = tape.value(out);
    if v.len() != 1 {
        return Err(Error::Usage(format!("gradcheck closure must return a scalar, got shape {:?}", v.shape())));
    }
    Ok(v.data()[0])
}

/// Checks the gradient of `f` w.r.t. every element of `inputs`.
pub fn gradcheck<F>(inputs: &[Tensor<f64>], f: F, eps: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'_, f64>, &[VarId]) -> Result<VarId>,
{
    gradcheck_with_params(&ParamStore::new(), inputs, f, eps, tol)
}

/// Checks the gradient of `f` w.r.t. every element of `inputs` and of every
/// parameter in `store` (the closure binds parameters through the tape).
pub fn gradcheck_with_params<F>(
    store: &ParamStore<f64>,
    inputs: &[Tensor<f64>],
    f: F,
    eps: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'_, f64>, &[VarId]) -> Result<VarId>,
{
    if !(1e-6..=1e-4).contains(&eps) {
        return Err(Error::Usage(format!("gradcheck step {eps} outside [1e-6, 1e-4]")));
    }

    let (input_grads, param_grads) = {
        let mut tape = Tape::new(store);
        let vars: Vec<VarId> = inputs.iter().map(|x| tape.input(x.clone())).collect();
        let out = f(&mut tape, &vars)?;
        scalar_of(&tape, out)?;
        let grads = tape.backward(out)?;
        let ig: Vec<Tensor<f64>> = vars
            .iter()
            .zip(inputs)
            .map(|(&v, x)| grads.wrt(v).unwrap_or_else(|| Tensor::zeros(x.shape())))
            .collect();
        let mut pg: Vec<Tensor<f64>> = store.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
        for (pid, g) in grads.params() {
            pg[pid.index()] = g;
        }
        (ig, pg)
    };

    let mut tracker = Tracker {
        max_rel_err: 0.0,
        worst: String::new(),
        checked: 0,
    };

    let mut probe = inputs.to_vec();
    for (i, grad) in input_grads.iter().enumerate() {
        for j in 0..probe[i].len() {
            let orig = probe[i].data()[j];
            probe[i].data_mut()[j] = orig + eps;
            let plus = evaluate(store, &probe, &f)?;
            probe[i].data_mut()[j] = orig - eps;
            let minus = evaluate(store, &probe, &f)?;
            probe[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            tracker.observe(grad.data()[j], numeric, || format!("input {i} [{j}]"));
        }
    }

    let mut pstore = store.clone();
    for (pid, grad) in store.ids().zip(&param_grads) {
        for j in 0..grad.len() {
            let orig = pstore.value(pid).data()[j];
            pstore.value_mut(pid).data_mut()[j] = orig + eps;
            let plus = evaluate(&pstore, inputs, &f)?;
            pstore.value_mut(pid).data_mut()[j] = orig - eps;
            let minus = evaluate(&pstore, inputs, &f)?;
            pstore.value_mut(pid).data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            tracker.observe(grad.data()[j], numeric, || format!("param {} [{j}]", store.get(pid).name));
        }
    }

    Ok(GradCheckReport {
        pass: tracker.max_rel_err < tol,
        max_rel_err: tracker.max_rel_err,
        worst: tracker.worst,
        checked: tracker.checked,
    })
}
