//! ResNet speaker encoder and the speaker classification head.

use crate::config::ModelConfig;
use crate::error::Result;
use crate::nn::{Affine, Builder, Conv1d, Linear, PRelu};
use crate::numcore::{Conv1dGeom, Tape, VarId};
use crate::scalar::Scalar;

/// `conv3 -> gLN -> PReLU -> conv3 -> gLN -> +x -> PReLU`.
#[derive(Clone, Debug)]
pub struct ResBlock {
    pub conv1: Conv1d,
    pub norm1: Affine,
    pub act1: PRelu,
    pub conv2: Conv1d,
    pub norm2: Affine,
    pub act2: PRelu,
}

impl ResBlock {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, d: usize) -> Result<Self> {
        let geom = Conv1dGeom::same(3, 1);
        Ok(ResBlock {
            conv1: Conv1d::new(&mut b.scope("conv1"), d, d, 3, geom, true)?,
            norm1: Affine::new(&mut b.scope("norm1"), d)?,
            act1: PRelu::new(&mut b.scope("act1"), d)?,
            conv2: Conv1d::new(&mut b.scope("conv2"), d, d, 3, geom, true)?,
            norm2: Affine::new(&mut b.scope("norm2"), d)?,
            act2: PRelu::new(&mut b.scope("act2"), d)?,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: VarId) -> Result<VarId> {
        let y = self.conv1.forward(tape, x)?;
        let y = self.norm1.global_layer_norm(tape, y)?;
        let y = self.act1.forward(tape, y)?;
        let y = self.conv2.forward(tape, y)?;
        let y = self.norm2.global_layer_norm(tape, y)?;
        let y = tape.add(y, x)?;
        self.act2.forward(tape, y)
    }
}

/// `1x1 conv C->D -> ResNet blocks -> mean over time -> linear D->D`.
#[derive(Clone, Debug)]
pub struct SpeakerEncoder {
    pub proj_in: Conv1d,
    pub blocks: Vec<ResBlock>,
    pub proj_out: Linear,
}

impl SpeakerEncoder {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, cfg: &ModelConfig) -> Result<Self> {
        let d = cfg.embedding_dim;
        Ok(SpeakerEncoder {
            proj_in: Conv1d::pointwise(&mut b.scope("proj_in"), cfg.filters, d)?,
            blocks: (0..cfg.resnet_blocks)
                .map(|i| ResBlock::new(&mut b.scope(&format!("block{i}")), d))
                .collect::<Result<_>>()?,
            proj_out: Linear::new(&mut b.scope("proj_out"), d, d)?,
        })
    }

    /// `r: [C, T]` to the embedding `[D]`.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, r: VarId) -> Result<VarId> {
        let mut x = self.proj_in.forward(tape, r)?;
        for blk in &self.blocks {
            x = blk.forward(tape, x)?;
        }
        let pooled = tape.mean_pool_time(x)?;
        self.proj_out.forward(tape, pooled)
    }
}

/// Linear `D -> num_speakers`.
#[derive(Clone, Debug)]
pub struct SpeakerClassifier {
    pub linear: Linear,
}

impl SpeakerClassifier {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, cfg: &ModelConfig) -> Result<Self> {
        Ok(SpeakerClassifier {
            linear: Linear::new(b, cfg.embedding_dim, cfg.num_speakers)?,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, e: VarId) -> Result<VarId> {
        self.linear.forward(tape, e)
    }
}
