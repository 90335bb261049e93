//! SI-SDR, the multi-task training loss and the SI-SDR improvement metric.

use crate::error::{Error, Result};
use crate::numcore::{Tape, Tensor, VarId, NORM_EPS};
use crate::scalar::Scalar;

/// Weights of the multi-task loss: the small, middle and large SI-SDR terms
/// get `1 - alpha - beta`, `alpha` and `beta`; cross-entropy gets `gamma`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 0.1,
            beta: 0.1,
            gamma: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha >= 0.0 && self.beta >= 0.0 && self.alpha + self.beta < 1.0 && self.gamma >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "loss weights need alpha, beta >= 0, alpha + beta < 1, gamma >= 0; got {self:?}"
            )))
        }
    }

    /// Per-scale SI-SDR weights, small first.
    pub fn scale_weights(&self) -> [f64; 3] {
        [1.0 - self.alpha - self.beta, self.alpha, self.beta]
    }
}

/// SI-SDR in dB, evaluated in f64.
pub fn si_sdr<T: Scalar>(est: &[T], target: &[T], eps: f64) -> Result<f64> {
    let mut tape = Tape::<f64>::detached();
    let e = tape.constant(Tensor::from_vec(est.iter().map(|v| v.to_f64_lossy()).collect()));
    let t: Vec<f64> = target.iter().map(|v| v.to_f64_lossy()).collect();
    let out = tape.si_sdr(e, &t, eps)?;
    Ok(tape.value(out).data()[0])
}

/// `si_sdr(est, target) - si_sdr(mixture, target)`.
pub fn si_sdr_improvement<T: Scalar>(est: &[T], mixture: &[T], target: &[T]) -> Result<f64> {
    Ok(si_sdr(est, target, NORM_EPS)? - si_sdr(mixture, target, NORM_EPS)?)
}

/// Loop-by-loop SI-SDR kept deliberately independent of [`si_sdr`].
pub fn si_sdr_oracle(est: &[f64], target: &[f64], eps: f64) -> Result<f64> {
    let n = target.len();
    if est.len() != n {
        return Err(Error::dim("si_sdr_oracle", format!("lengths {} and {n}", est.len())));
    }
    let mut mean_e = 0.0;
    let mut mean_t = 0.0;
    for i in 0..n {
        mean_e += est[i];
        mean_t += target[i];
    }
    mean_e /= n as f64;
    mean_t /= n as f64;
    let mut dot = 0.0;
    let mut tt = 0.0;
    for i in 0..n {
        dot += (est[i] - mean_e) * (target[i] - mean_t);
        tt += (target[i] - mean_t) * (target[i] - mean_t);
    }
    if tt == 0.0 {
        return Err(Error::Degenerate("SI-SDR target is all zero".into()));
    }
    let a = dot / (tt + eps);
    let mut sig = 0.0;
    let mut noise = 0.0;
    for i in 0..n {
        let s = a * (target[i] - mean_t);
        let r = (est[i] - mean_e) - s;
        sig += s * s;
        noise += r * r;
    }
    Ok(10.0 * ((sig + eps) / (noise + eps)).log10())
}

/// `-[(1-a-b) sisdr(s) + a sisdr(m) + b sisdr(l)]` over the three estimates.
pub fn si_sdr_loss<T: Scalar>(
    tape: &mut Tape<'_, T>,
    estimates: [VarId; 3],
    target: &[T],
    weights: &LossWeights,
) -> Result<VarId> {
    let eps = T::from_f64_lossy(NORM_EPS);
    let mut total: Option<VarId> = None;
    for (est, w) in estimates.into_iter().zip(weights.scale_weights()) {
        if w == 0.0 {
            continue;
        }
        let s = tape.si_sdr(est, target, eps)?;
        let term = tape.scale(s, T::from_f64_lossy(-w))?;
        total = Some(match total {
            Some(acc) => tape.add(acc, term)?,
            None => term,
        });
    }
    match total {
        Some(t) => Ok(t),
        None => Err(Error::Config("all SI-SDR weights are zero".into())),
    }
}

/// `si_part + gamma * ce_part`.
pub fn total_loss<T: Scalar>(tape: &mut Tape<'_, T>, si_part: VarId, ce_part: VarId, weights: &LossWeights) -> Result<VarId> {
    if weights.gamma == 0.0 {
        return Ok(si_part);
    }
    let ce = tape.scale(ce_part, T::from_f64_lossy(weights.gamma))?;
    tape.add(si_part, ce)
}
