//! Parameter construction and the small layers shared by every model part.

use rand::RngCore;

use crate::error::{Error, Result};
use crate::numcore::{Conv1dGeom, ParamId, ParamStore, Tape, Tensor, VarId, NORM_EPS};
use crate::scalar::Scalar;

/// Registers named parameters under a dotted prefix.
pub struct Builder<'a, T: Scalar> {
    store: &'a mut ParamStore<T>,
    rng: &'a mut dyn RngCore,
    prefix: String,
}

impl<'a, T: Scalar> Builder<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, rng: &'a mut dyn RngCore) -> Self {
        Builder {
            store,
            rng,
            prefix: String::new(),
        }
    }

    pub fn scope(&mut self, name: &str) -> Builder<'_, T> {
        Builder {
            prefix: self.name(name),
            store: &mut *self.store,
            rng: &mut *self.rng,
        }
    }

    fn name(&self, leaf: &str) -> String {
        if self.prefix.is_empty() {
            leaf.to_string()
        } else {
            format!("{}.{leaf}", self.prefix)
        }
    }

    /// Uniform in `±1/sqrt(fan_in)`.
    pub fn uniform(&mut self, name: &str, shape: &[usize], fan_in: usize) -> Result<ParamId> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let value = Tensor::uniform(shape, bound, &mut *self.rng);
        self.store.register(self.name(name), value)
    }

    pub fn fill(&mut self, name: &str, shape: &[usize], value: f64) -> Result<ParamId> {
        self.store.register(self.name(name), Tensor::full(shape, T::from_f64_lossy(value)))
    }
}

pub(crate) fn eps<T: Scalar>() -> T {
    T::from_f64_lossy(NORM_EPS)
}

/// 1-D convolution with bias; weights `[C_out, C_in/groups, K]`.
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub geom: Conv1dGeom,
}

impl Conv1d {
    pub fn new<T: Scalar>(
        b: &mut Builder<'_, T>,
        cin: usize,
        cout: usize,
        k: usize,
        geom: Conv1dGeom,
        bias: bool,
    ) -> Result<Self> {
        let cin_g = cin / geom.groups;
        Ok(Conv1d {
            w: b.uniform("w", &[cout, cin_g, k], cin_g * k)?,
            b: if bias { Some(b.fill("b", &[cout], 0.0)?) } else { None },
            geom,
        })
    }

    pub fn pointwise<T: Scalar>(b: &mut Builder<'_, T>, cin: usize, cout: usize) -> Result<Self> {
        Self::new(b, cin, cout, 1, Conv1dGeom::default(), true)
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: VarId) -> Result<VarId> {
        let w = tape.param(self.w);
        let b = tape.opt_param(self.b);
        tape.conv1d(x, w, b, self.geom)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, fin: usize, fout: usize) -> Result<Self> {
        Ok(Linear {
            w: b.uniform("w", &[fout, fin], fin)?,
            b: b.fill("b", &[fout], 0.0)?,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: VarId) -> Result<VarId> {
        let w = tape.param(self.w);
        let b = tape.param(self.b);
        tape.linear(x, w, Some(b))
    }
}

/// Gain and bias of a normalization layer, initialized to 1 and 0.
#[derive(Clone, Debug)]
pub struct Affine {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl Affine {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, features: usize) -> Result<Self> {
        Ok(Affine {
            gain: b.fill("gain", &[features], 1.0)?,
            bias: b.fill("bias", &[features], 0.0)?,
        })
    }

    pub fn layer_norm<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: VarId, axis: usize) -> Result<VarId> {
        let (g, b) = (tape.param(self.gain), tape.param(self.bias));
        tape.layer_norm(x, axis, g, b, eps())
    }

    pub fn global_layer_norm<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: VarId) -> Result<VarId> {
        let (g, b) = (tape.param(self.gain), tape.param(self.bias));
        tape.global_layer_norm(x, g, b, eps())
    }
}

#[derive(Clone, Debug)]
pub struct PRelu {
    pub slope: ParamId,
}

impl PRelu {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, channels: usize) -> Result<Self> {
        Ok(PRelu {
            slope: b.fill("slope", &[channels], 0.25)?,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: VarId) -> Result<VarId> {
        let a = tape.param(self.slope);
        tape.prelu(x, a)
    }
}

/// One 2-D block: same-padded conv, ELU, and optionally a layer norm over
/// the feature axis of the `[channels, C, T]` image.
#[derive(Clone, Debug)]
pub struct Conv2dBlock {
    pub w: ParamId,
    pub b: ParamId,
    pub norm: Option<Affine>,
}

/// A stack of 2-D blocks following a channel schedule.
#[derive(Clone, Debug)]
pub struct Conv2dStack {
    pub blocks: Vec<Conv2dBlock>,
}

/// Per-block `(c_in, c_out)` pairs for `blocks` blocks over the schedule
/// `channels`. Block `i` maps `channels[min(i, L)]` to `channels[min(i+1, L)]`
/// where `L` is the last index, so a schedule shorter than `blocks + 1` holds
/// its final width for the remaining blocks.
pub fn channel_plan(
    what: &str,
    channels: &[usize],
    kernels: &[usize],
    first: usize,
    last: usize,
) -> Result<Vec<(usize, usize)>> {
    let blocks = kernels.len();
    if blocks == 0 {
        return Err(Error::Config(format!("{what}: at least one block is required")));
    }
    if channels.len() < 2 || channels.len() > blocks + 1 {
        return Err(Error::Config(format!(
            "{what}: {} channel entries do not fit {blocks} blocks",
            channels.len()
        )));
    }
    if channels[0] != first || channels[channels.len() - 1] != last {
        return Err(Error::Config(format!(
            "{what}: channel schedule {channels:?} must run from {first} to {last}"
        )));
    }
    if channels.contains(&0) {
        return Err(Error::Config(format!("{what}: zero channel count")));
    }
    if let Some(k) = kernels.iter().find(|&&k| k % 2 == 0) {
        return Err(Error::Config(format!("{what}: kernel size {k} is even; same padding needs odd sizes")));
    }
    let l = channels.len() - 1;
    Ok((0..blocks).map(|i| (channels[i.min(l)], channels[(i + 1).min(l)])).collect())
}

impl Conv2dStack {
    /// `features` is the size of the C axis when `with_norm` is set.
    pub fn new<T: Scalar>(
        b: &mut Builder<'_, T>,
        plan: &[(usize, usize)],
        kernels: &[usize],
        with_norm: Option<usize>,
    ) -> Result<Self> {
        let blocks = plan
            .iter()
            .zip(kernels)
            .enumerate()
            .map(|(i, (&(cin, cout), &k))| {
                let mut s = b.scope(&format!("block{i}"));
                Ok(Conv2dBlock {
                    w: s.uniform("w", &[cout, cin, k, k], cin * k * k)?,
                    b: s.fill("b", &[cout], 0.0)?,
                    norm: match with_norm {
                        Some(f) => Some(Affine::new(&mut s.scope("norm"), f)?),
                        None => None,
                    },
                })
            })
            .collect::<Result<_>>()?;
        Ok(Conv2dStack { blocks })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, mut x: VarId) -> Result<VarId> {
        for blk in &self.blocks {
            let (w, b) = (tape.param(blk.w), tape.param(blk.b));
            x = tape.conv2d_same(x, w, Some(b))?;
            x = tape.elu(x, T::one())?;
            if let Some(n) = &blk.norm {
                x = n.layer_norm(tape, x, 1)?;
            }
        }
        Ok(x)
    }
}
