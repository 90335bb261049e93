//! Adam with bias correction.

use crate::error::{Error, Result};
use crate::numcore::{ParamId, ParamStore, Tensor};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T: Scalar> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Completed updates.
    pub t: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    /// Zero moments for every parameter in `store`.
    pub fn new(store: &ParamStore<T>) -> Self {
        let zeros: Vec<Vec<T>> = store.iter().map(|(_, p)| vec![T::zero(); p.value.len()]).collect();
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One update. Parameters missing from `grads` are treated as having a
    /// zero gradient. Nothing is modified when any gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[(ParamId, Tensor<T>)], lr: f64) -> Result<()> {
        if self.m.len() != store.len() {
            return Err(Error::Usage(format!(
                "optimizer holds {} moment slots for {} parameters",
                self.m.len(),
                store.len()
            )));
        }
        for (id, g) in grads {
            if !g.all_finite() {
                return Err(Error::Numeric(format!("non-finite gradient for `{}`", store.get(*id).name)));
            }
            if g.len() != self.m[id.index()].len() {
                return Err(Error::dim("adam", format!("gradient size {} for `{}`", g.len(), store.get(*id).name)));
            }
        }
        let mut dense: Vec<Option<&[T]>> = vec![None; store.len()];
        for (id, g) in grads {
            dense[id.index()] = Some(g.data());
        }
        self.t += 1;
        let t = self.t as i32;
        let c = T::from_f64_lossy;
        let (b1, b2) = (c(self.beta1), c(self.beta2));
        let (one_b1, one_b2) = (c(1.0 - self.beta1), c(1.0 - self.beta2));
        let bc1 = c(1.0 - self.beta1.powi(t));
        let bc2 = c(1.0 - self.beta2.powi(t));
        let (lr, eps) = (c(lr), c(self.eps));
        let ids: Vec<ParamId> = store.ids().collect();
        for id in ids {
            let i = id.index();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let p = store.value_mut(id).data_mut();
            match dense[i] {
                Some(g) => {
                    for j in 0..p.len() {
                        m[j] = b1 * m[j] + one_b1 * g[j];
                        v[j] = b2 * v[j] + one_b2 * g[j] * g[j];
                        p[j] -= lr * (m[j] / bc1) / ((v[j] / bc2).sqrt() + eps);
                    }
                }
                None => {
                    for j in 0..p.len() {
                        m[j] *= b1;
                        v[j] *= b2;
                        p[j] -= lr * (m[j] / bc1) / ((v[j] / bc2).sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
