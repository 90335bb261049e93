//! Mask generation from the extractor output and mask application.

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::frontend::MultiScaleFeatures;
use crate::nn::{channel_plan, Builder, Conv1d, Conv2dStack};
use crate::numcore::{Tape, VarId};
use crate::scalar::Scalar;

/// Nonnegative `[C, T]` masks, small, middle and large.
#[derive(Clone, Copy, Debug)]
pub struct MaskSet {
    pub masks: [VarId; 3],
}

#[derive(Clone, Debug)]
pub enum MaskGenerator {
    /// One 2-D conv stack whose three output channels are the masks.
    ScaleInter(Conv2dStack),
    /// Three independent `1x1 conv + ReLU` heads.
    Branches([Conv1d; 3]),
}

impl MaskGenerator {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, cfg: &ModelConfig) -> Result<Self> {
        if cfg.toggles.use_scaleintermg {
            let plan = channel_plan("mask generator", &cfg.mg_channels, &cfg.mg_kernels, 1, 3)?;
            Ok(MaskGenerator::ScaleInter(Conv2dStack::new(
                b,
                &plan,
                &cfg.mg_kernels,
                Some(cfg.filters),
            )?))
        } else {
            let c = cfg.filters;
            let mut head = |name: &str| Conv1d::pointwise(&mut b.scope(name), c, c);
            Ok(MaskGenerator::Branches([head("small")?, head("middle")?, head("large")?]))
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: VarId) -> Result<MaskSet> {
        let mut masks = [x; 3];
        match self {
            MaskGenerator::ScaleInter(stack) => {
                let [c, t] = [tape.shape(x)[0], tape.shape(x)[1]];
                let img = tape.reshape(x, &[1, c, t])?;
                let y = stack.forward(tape, img)?;
                let y = tape.relu(y)?;
                for (i, m) in masks.iter_mut().enumerate() {
                    *m = tape.select(y, i)?;
                }
            }
            MaskGenerator::Branches(heads) => {
                for (m, head) in masks.iter_mut().zip(heads) {
                    let y = head.forward(tape, x)?;
                    *m = tape.relu(y)?;
                }
            }
        }
        Ok(MaskSet { masks })
    }
}

/// Elementwise `M_x * S_x` per scale.
pub fn apply_masks<T: Scalar>(tape: &mut Tape<'_, T>, s_mul: &MultiScaleFeatures, masks: &MaskSet) -> Result<MultiScaleFeatures> {
    let mut maps = s_mul.maps;
    for (i, m) in maps.iter_mut().enumerate() {
        if tape.shape(s_mul.maps[i]) != tape.shape(masks.masks[i]) {
            return Err(Error::dim(
                "apply_masks",
                format!("features {:?} vs mask {:?}", tape.shape(s_mul.maps[i]), tape.shape(masks.masks[i])),
            ));
        }
        *m = tape.mul(s_mul.maps[i], masks.masks[i])?;
    }
    Ok(MultiScaleFeatures { maps })
}
