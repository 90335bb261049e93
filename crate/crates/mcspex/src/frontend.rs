//! Twin multi-scale speech encoders, scale fusion and the multi-scale decoder.

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{channel_plan, Affine, Builder, Conv1d, Conv2dStack};
use crate::numcore::{Conv1dGeom, ParamId, Tape, Tensor, VarId};
use crate::scalar::Scalar;

/// Frame-aligned `[C, T]` maps, small, middle and large scale in that order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MultiScaleFeatures {
    pub maps: [VarId; 3],
}

/// Three bias-free ReLU filter banks sharing one stride.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub banks: [ParamId; 3],
    pub lengths: [usize; 3],
    pub stride: usize,
}

const SCALE_NAMES: [&str; 3] = ["small", "middle", "large"];

impl Encoder {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, cfg: &ModelConfig) -> Result<Self> {
        let mut bank = |i: usize| {
            let k = cfg.filter_lengths[i];
            b.uniform(&format!("{}.w", SCALE_NAMES[i]), &[cfg.filters, 1, k], k)
        };
        Ok(Encoder {
            banks: [bank(0)?, bank(1)?, bank(2)?],
            lengths: cfg.filter_lengths,
            stride: cfg.stride,
        })
    }

    /// `wave` is `[1, len]`. The middle and large banks see the input
    /// right-padded by `L2 - L1` and `L3 - L1` so all scales emit
    /// `floor((len - L1)/stride) + 1` frames.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, wave: VarId) -> Result<MultiScaleFeatures> {
        let len = tape.shape(wave)[1];
        if len < self.lengths[2] {
            return Err(Error::TooShort {
                len,
                min: self.lengths[2],
            });
        }
        let mut maps = [wave; 3];
        for (i, map) in maps.iter_mut().enumerate() {
            let padded = tape.fit_length(wave, len + self.lengths[i] - self.lengths[0])?;
            let w = tape.param(self.banks[i]);
            let y = tape.conv1d(padded, w, None, Conv1dGeom::strided(self.stride))?;
            *map = tape.relu(y)?;
        }
        Ok(MultiScaleFeatures { maps })
    }
}

/// Fusion of the three scales into one `[C, T]` map.
#[derive(Clone, Debug)]
pub enum Fuser {
    /// Stacked 2-D conv blocks over the scales as image channels.
    Scale(Conv2dStack),
    /// Concatenation, channel layer norm and a 1x1 projection.
    Concat { norm: Affine, proj: Conv1d },
}

impl Fuser {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, cfg: &ModelConfig) -> Result<Self> {
        if cfg.toggles.use_scalefuser {
            let plan = channel_plan("fuser", &cfg.fuser_channels, &cfg.fuser_kernels, 3, 1)?;
            Ok(Fuser::Scale(Conv2dStack::new(b, &plan, &cfg.fuser_kernels, None)?))
        } else {
            let c = cfg.filters;
            Ok(Fuser::Concat {
                norm: Affine::new(&mut b.scope("norm"), 3 * c)?,
                proj: Conv1d::pointwise(&mut b.scope("proj"), 3 * c, c)?,
            })
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, ms: &MultiScaleFeatures) -> Result<VarId> {
        let [c, t] = [tape.shape(ms.maps[0])[0], tape.shape(ms.maps[0])[1]];
        match self {
            Fuser::Scale(stack) => {
                let mut chans = [ms.maps[0]; 3];
                for (dst, &m) in chans.iter_mut().zip(&ms.maps) {
                    *dst = tape.reshape(m, &[1, c, t])?;
                }
                let img = tape.concat(&chans)?;
                let y = stack.forward(tape, img)?;
                tape.reshape(y, &[c, t])
            }
            Fuser::Concat { norm, proj } => {
                let x = tape.concat(&ms.maps)?;
                let x = norm.layer_norm(tape, x, 0)?;
                proj.forward(tape, x)
            }
        }
    }
}

/// Encoder bank plus the fusers of the mixture and reference paths; with
/// sharing on, both paths hold the same parameter ids.
#[derive(Clone, Debug)]
pub struct Frontend {
    pub encoder: Encoder,
    pub mix_fuser: Fuser,
    pub ref_fuser: Fuser,
}

#[derive(Clone, Copy, Debug)]
pub struct TwinOutput {
    pub s: VarId,
    pub r: VarId,
    pub s_mul: MultiScaleFeatures,
}

impl Frontend {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, cfg: &ModelConfig) -> Result<Self> {
        let encoder = Encoder::new(&mut b.scope("encoder"), cfg)?;
        let (mix_fuser, ref_fuser) = if cfg.toggles.share_fuser_weights {
            let f = Fuser::new(&mut b.scope("fuser"), cfg)?;
            (f.clone(), f)
        } else {
            (
                Fuser::new(&mut b.scope("mix_fuser"), cfg)?,
                Fuser::new(&mut b.scope("ref_fuser"), cfg)?,
            )
        };
        Ok(Frontend {
            encoder,
            mix_fuser,
            ref_fuser,
        })
    }

    /// Encodes and fuses both waveforms. With `detach_reference` the fused
    /// reference is cut from the graph, so no gradient flows back through
    /// the reference path.
    pub fn twin_encode<T: Scalar>(
        &self,
        tape: &mut Tape<'_, T>,
        mix: &[T],
        reference: &[T],
        detach_reference: bool,
    ) -> Result<TwinOutput> {
        let m = tape.constant(Tensor::new(vec![1, mix.len()], mix.to_vec())?);
        let s_mul = self.encoder.forward(tape, m)?;
        let s = self.mix_fuser.forward(tape, &s_mul)?;
        let r = self.encode_reference(tape, reference)?;
        let r = if detach_reference { tape.detach(r) } else { r };
        Ok(TwinOutput { s, r, s_mul })
    }

    pub fn encode_reference<T: Scalar>(&self, tape: &mut Tape<'_, T>, reference: &[T]) -> Result<VarId> {
        let x = tape.constant(Tensor::new(vec![1, reference.len()], reference.to_vec())?);
        let r_mul = self.encoder.forward(tape, x)?;
        self.ref_fuser.forward(tape, &r_mul)
    }
}

/// Three transposed-convolution banks mapping masked features back to audio.
#[derive(Clone, Debug)]
pub struct Decoder {
    pub banks: [(ParamId, ParamId); 3],
    pub stride: usize,
}

impl Decoder {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, cfg: &ModelConfig) -> Result<Self> {
        let mut bank = |i: usize| -> Result<(ParamId, ParamId)> {
            let k = cfg.filter_lengths[i];
            let mut s = b.scope(SCALE_NAMES[i]);
            Ok((s.uniform("w", &[cfg.filters, 1, k], cfg.filters)?, s.fill("b", &[1], 0.0)?))
        };
        Ok(Decoder {
            banks: [bank(0)?, bank(1)?, bank(2)?],
            stride: cfg.stride,
        })
    }

    /// Returns three `[1, out_len]` waveforms.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<'_, T>,
        masked: &MultiScaleFeatures,
        out_len: usize,
    ) -> Result<[VarId; 3]> {
        if out_len == 0 {
            return Err(Error::Usage("decoder output length must be positive".into()));
        }
        let mut out = masked.maps;
        for (i, o) in out.iter_mut().enumerate() {
            let (w, b) = (tape.param(self.banks[i].0), tape.param(self.banks[i].1));
            let y = tape.conv_transpose1d(masked.maps[i], w, Some(b), self.stride, 0)?;
            *o = tape.fit_length(y, out_len)?;
        }
        Ok(out)
    }
}
