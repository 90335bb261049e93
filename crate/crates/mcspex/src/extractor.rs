//! Speaker-conditioned extractor: groups of a conditioning step and dilated
//! TCN blocks.

use crate::config::{ConditioningMode, ModelConfig};
use crate::error::{Error, Result};
use crate::nn::{Affine, Builder, Conv1d, Linear, PRelu};
use crate::numcore::{Conv1dGeom, Tape, VarId};
use crate::scalar::Scalar;

/// Embedding-driven modulation of `[C, T]` features. `norm` is absent in
/// FiLM mode.
#[derive(Clone, Debug)]
pub struct Consm {
    pub mode: ConditioningMode,
    pub scale_map: Linear,
    pub bias_map: Linear,
    pub norm: Option<Affine>,
}

impl Consm {
    /// Maps start as `alpha = 1`, `beta = 0`.
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, mode: ConditioningMode, d: usize, c: usize) -> Result<Self> {
        if !mode.modulates() {
            return Err(Error::Config("conditioning mode `none` has no modulation block".into()));
        }
        let mut s = b.scope("scale_map");
        let scale_map = Linear {
            w: s.fill("w", &[c, d], 0.0)?,
            b: s.fill("b", &[c], 1.0)?,
        };
        let mut s = b.scope("bias_map");
        let bias_map = Linear {
            w: s.fill("w", &[c, d], 0.0)?,
            b: s.fill("b", &[c], 0.0)?,
        };
        let norm = match mode {
            ConditioningMode::Film => None,
            _ => Some(Affine::new(&mut b.scope("norm"), c)?),
        };
        Ok(Consm {
            mode,
            scale_map,
            bias_map,
            norm,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, s: VarId, e: VarId) -> Result<VarId> {
        let alpha = self.scale_map.forward(tape, e)?;
        let beta = self.bias_map.forward(tape, e)?;
        match (self.mode, &self.norm) {
            (ConditioningMode::Consm, Some(n)) => {
                let y = tape.channel_affine(s, alpha, beta)?;
                n.layer_norm(tape, y, 0)
            }
            (ConditioningMode::ConditionalLn, Some(n)) => {
                let y = n.layer_norm(tape, s, 0)?;
                tape.channel_affine(y, alpha, beta)
            }
            (ConditioningMode::Film, None) => tape.channel_affine(s, alpha, beta),
            (mode, _) => Err(Error::Config(format!("modulation block is inconsistent with mode `{mode}`"))),
        }
    }
}

/// `y = x + out(gLN(PReLU(depthwise(gLN(PReLU(in([x; e])))))))`; the
/// embedding is concatenated only when `takes_embedding` is set.
#[derive(Clone, Debug)]
pub struct TcnBlock {
    pub in_conv: Conv1d,
    pub act1: PRelu,
    pub norm1: Affine,
    pub depthwise: Conv1d,
    pub act2: PRelu,
    pub norm2: Affine,
    pub out_conv: Conv1d,
    pub dilation: usize,
    pub takes_embedding: bool,
}

impl TcnBlock {
    pub fn new<T: Scalar>(
        b: &mut Builder<'_, T>,
        cfg: &ModelConfig,
        dilation: usize,
        takes_embedding: bool,
    ) -> Result<Self> {
        let (c, h, k) = (cfg.filters, cfg.tcn_width, cfg.tcn_kernel);
        let cin = if takes_embedding { c + cfg.embedding_dim } else { c };
        let geom = Conv1dGeom {
            groups: h,
            ..Conv1dGeom::same(k, dilation)
        };
        Ok(TcnBlock {
            in_conv: Conv1d::pointwise(&mut b.scope("in_conv"), cin, h)?,
            act1: PRelu::new(&mut b.scope("act1"), h)?,
            norm1: Affine::new(&mut b.scope("norm1"), h)?,
            depthwise: Conv1d::new(&mut b.scope("depthwise"), h, h, k, geom, true)?,
            act2: PRelu::new(&mut b.scope("act2"), h)?,
            norm2: Affine::new(&mut b.scope("norm2"), h)?,
            out_conv: Conv1d::pointwise(&mut b.scope("out_conv"), h, c)?,
            dilation,
            takes_embedding,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: VarId, e: Option<VarId>) -> Result<VarId> {
        let input = match (self.takes_embedding, e) {
            (true, Some(e)) => {
                let t = tape.shape(x)[1];
                let eb = tape.broadcast_time(e, t)?;
                tape.concat(&[x, eb])?
            }
            (true, None) => return Err(Error::Usage("TCN block expects a speaker embedding".into())),
            (false, _) => x,
        };
        let y = self.in_conv.forward(tape, input)?;
        let y = self.act1.forward(tape, y)?;
        let y = self.norm1.global_layer_norm(tape, y)?;
        let y = self.depthwise.forward(tape, y)?;
        let y = self.act2.forward(tape, y)?;
        let y = self.norm2.global_layer_norm(tape, y)?;
        let y = self.out_conv.forward(tape, y)?;
        tape.add(x, y)
    }
}

#[derive(Clone, Debug)]
pub struct Group {
    pub consm: Option<Consm>,
    pub blocks: Vec<TcnBlock>,
}

#[derive(Clone, Debug)]
pub struct Extractor {
    pub groups: Vec<Group>,
}

impl Extractor {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, cfg: &ModelConfig) -> Result<Self> {
        if cfg.tcn_groups == 0 || cfg.tcn_blocks == 0 {
            return Err(Error::Config("extractor needs at least one group and one block".into()));
        }
        let mode = cfg.toggles.consm_mode;
        let groups = (0..cfg.tcn_groups)
            .map(|g| {
                let mut gb = b.scope(&format!("group{g}"));
                let consm = if mode.modulates() {
                    Some(Consm::new(&mut gb.scope("consm"), mode, cfg.embedding_dim, cfg.filters)?)
                } else {
                    None
                };
                let blocks = (0..cfg.tcn_blocks)
                    .map(|n| TcnBlock::new(&mut gb.scope(&format!("tcn{n}")), cfg, 1 << n, n == 0 && !mode.modulates()))
                    .collect::<Result<_>>()?;
                Ok(Group { consm, blocks })
            })
            .collect::<Result<_>>()?;
        Ok(Extractor { groups })
    }

    /// `s: [C, T]`, `e: [D]`; returns `[C, T]`.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, s: VarId, e: VarId) -> Result<VarId> {
        let mut x = s;
        for g in &self.groups {
            if let Some(c) = &g.consm {
                x = c.forward(tape, x, e)?;
            }
            for blk in &g.blocks {
                x = blk.forward(tape, x, Some(e))?;
            }
        }
        Ok(x)
    }
}
