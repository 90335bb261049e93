//! Architecture hyperparameters, ablation variants and presets.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kvconfig::{join_list, KvDoc};
use crate::nn::channel_plan;
use crate::objective::LossWeights;

/// How the speaker embedding enters the extractor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConditioningMode {
    /// Concatenation before the first TCN block of every group.
    None,
    /// `LN(alpha * S + beta)`.
    Consm,
    /// `alpha * LN(S) + beta`.
    ConditionalLn,
    /// `alpha * S + beta`.
    Film,
}

impl ConditioningMode {
    pub const ALL: [ConditioningMode; 4] = [Self::None, Self::Consm, Self::ConditionalLn, Self::Film];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Consm => "consm",
            Self::ConditionalLn => "conditional_ln",
            Self::Film => "film",
        }
    }

    pub fn modulates(self) -> bool {
        self != Self::None
    }
}

impl fmt::Display for ConditioningMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConditioningMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown conditioning mode `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Toggles {
    pub use_scalefuser: bool,
    pub share_fuser_weights: bool,
    pub use_scaleintermg: bool,
    pub consm_mode: ConditioningMode,
}

impl Toggles {
    /// Ablation rows 1 to 6; row 1 is the SpEx+ baseline, row 6 the full model.
    pub fn variant(n: u8) -> Result<Self> {
        use ConditioningMode::{Consm, None};
        let (sf, share, mg, mode) = match n {
            1 => (false, false, false, None),
            2 => (true, true, false, None),
            3 => (false, false, true, None),
            4 => (true, true, true, None),
            5 => (false, false, false, Consm),
            6 => (true, true, true, Consm),
            _ => return Err(Error::Usage(format!("variant must be 1..=6, got {n}"))),
        };
        Ok(Toggles {
            use_scalefuser: sf,
            share_fuser_weights: share,
            use_scaleintermg: mg,
            consm_mode: mode,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Encoder/decoder filter lengths in samples, small to large.
    pub filter_lengths: [usize; 3],
    pub stride: usize,
    /// C: filters per scale, also the extractor's bottleneck width.
    pub filters: usize,
    /// D: speaker embedding size.
    pub embedding_dim: usize,
    pub resnet_blocks: usize,
    /// M: extractor groups.
    pub tcn_groups: usize,
    /// N: TCN blocks per group, dilations `1, 2, ..., 2^(N-1)`.
    pub tcn_blocks: usize,
    /// H: TCN hidden width.
    pub tcn_width: usize,
    pub tcn_kernel: usize,
    pub fuser_channels: Vec<usize>,
    pub fuser_kernels: Vec<usize>,
    pub mg_channels: Vec<usize>,
    pub mg_kernels: Vec<usize>,
    pub num_speakers: usize,
    pub loss: LossWeights,
    pub toggles: Toggles,
}

impl ModelConfig {
    /// Published hyperparameters; the classifier covers the 291 speakers of
    /// the published training subset.
    pub fn full(variant: u8) -> Result<Self> {
        Ok(ModelConfig {
            filter_lengths: [20, 80, 160],
            stride: 10,
            filters: 256,
            embedding_dim: 256,
            resnet_blocks: 3,
            tcn_groups: 4,
            tcn_blocks: 8,
            tcn_width: 512,
            tcn_kernel: 3,
            fuser_channels: vec![3, 32, 32, 1],
            fuser_kernels: vec![3; 4],
            mg_channels: vec![1, 32, 32, 3],
            mg_kernels: vec![3; 4],
            num_speakers: 291,
            loss: LossWeights::default(),
            toggles: Toggles::variant(variant)?,
        })
    }

    /// Small configuration that trains on one CPU core in minutes.
    pub fn toy(variant: u8, num_speakers: usize) -> Result<Self> {
        Ok(ModelConfig {
            filters: 32,
            embedding_dim: 32,
            resnet_blocks: 3,
            tcn_groups: 2,
            tcn_blocks: 4,
            tcn_width: 64,
            fuser_channels: vec![3, 8, 8, 1],
            mg_channels: vec![1, 8, 8, 3],
            num_speakers,
            ..Self::full(variant)?
        })
    }

    pub fn with_variant(mut self, variant: u8) -> Result<Self> {
        self.toggles = Toggles::variant(variant)?;
        Ok(self)
    }

    /// Shortest waveform the encoder accepts.
    pub fn min_samples(&self) -> usize {
        self.filter_lengths[2]
    }

    /// Encoder frames for a waveform of `len` samples.
    pub fn frames(&self, len: usize) -> usize {
        (len - self.filter_lengths[0]) / self.stride + 1
    }

    pub fn validate(&self) -> Result<()> {
        let [l1, l2, l3] = self.filter_lengths;
        if l1 == 0 || l1 > l2 || l2 > l3 {
            return Err(Error::Config(format!(
                "filter lengths must be positive and non-decreasing, got {:?}",
                self.filter_lengths
            )));
        }
        let positive = [
            ("stride", self.stride),
            ("filters", self.filters),
            ("embedding_dim", self.embedding_dim),
            ("tcn_groups", self.tcn_groups),
            ("tcn_blocks", self.tcn_blocks),
            ("tcn_width", self.tcn_width),
            ("num_speakers", self.num_speakers),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if self.tcn_kernel.is_multiple_of(2) {
            return Err(Error::Config(format!("tcn_kernel {} must be odd", self.tcn_kernel)));
        }
        if self.tcn_blocks > 16 {
            return Err(Error::Config(format!("tcn_blocks {} exceeds 16", self.tcn_blocks)));
        }
        self.loss.validate()?;
        channel_plan("fuser", &self.fuser_channels, &self.fuser_kernels, 3, 1)?;
        channel_plan("mask generator", &self.mg_channels, &self.mg_kernels, 1, 3)?;
        Ok(())
    }

    pub const KEYS: &'static [&'static str] = &[
        "filter_lengths",
        "stride",
        "filters",
        "embedding_dim",
        "resnet_blocks",
        "tcn_groups",
        "tcn_blocks",
        "tcn_width",
        "tcn_kernel",
        "fuser_channels",
        "fuser_kernels",
        "mg_channels",
        "mg_kernels",
        "num_speakers",
        "loss_alpha",
        "loss_beta",
        "loss_gamma",
        "use_scalefuser",
        "share_fuser_weights",
        "use_scaleintermg",
        "consm_mode",
    ];

    /// Overrides fields present in `doc`; other keys are left to the caller.
    pub fn apply_kv(&mut self, doc: &KvDoc) -> Result<()> {
        let mut lengths = self.filter_lengths.to_vec();
        doc.set_list("filter_lengths", &mut lengths)?;
        self.filter_lengths = lengths.try_into().map_err(|v: Vec<usize>| {
            doc.error(doc.get("filter_lengths").unwrap(), format!("need 3 filter lengths, got {}", v.len()))
        })?;
        doc.set("stride", &mut self.stride)?;
        doc.set("filters", &mut self.filters)?;
        doc.set("embedding_dim", &mut self.embedding_dim)?;
        doc.set("resnet_blocks", &mut self.resnet_blocks)?;
        doc.set("tcn_groups", &mut self.tcn_groups)?;
        doc.set("tcn_blocks", &mut self.tcn_blocks)?;
        doc.set("tcn_width", &mut self.tcn_width)?;
        doc.set("tcn_kernel", &mut self.tcn_kernel)?;
        doc.set_list("fuser_channels", &mut self.fuser_channels)?;
        doc.set_list("fuser_kernels", &mut self.fuser_kernels)?;
        doc.set_list("mg_channels", &mut self.mg_channels)?;
        doc.set_list("mg_kernels", &mut self.mg_kernels)?;
        doc.set("num_speakers", &mut self.num_speakers)?;
        doc.set("loss_alpha", &mut self.loss.alpha)?;
        doc.set("loss_beta", &mut self.loss.beta)?;
        doc.set("loss_gamma", &mut self.loss.gamma)?;
        doc.set("use_scalefuser", &mut self.toggles.use_scalefuser)?;
        doc.set("share_fuser_weights", &mut self.toggles.share_fuser_weights)?;
        doc.set("use_scaleintermg", &mut self.toggles.use_scaleintermg)?;
        doc.set("consm_mode", &mut self.toggles.consm_mode)?;
        Ok(())
    }

    pub fn from_kv(doc: &KvDoc) -> Result<Self> {
        doc.reject_unknown(Self::KEYS)?;
        let mut c = Self::full(6)?;
        c.apply_kv(doc)?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_kv_pairs(&self) -> Vec<(&'static str, String)> {
        let t = &self.toggles;
        vec![
            ("filter_lengths", join_list(&self.filter_lengths)),
            ("stride", self.stride.to_string()),
            ("filters", self.filters.to_string()),
            ("embedding_dim", self.embedding_dim.to_string()),
            ("resnet_blocks", self.resnet_blocks.to_string()),
            ("tcn_groups", self.tcn_groups.to_string()),
            ("tcn_blocks", self.tcn_blocks.to_string()),
            ("tcn_width", self.tcn_width.to_string()),
            ("tcn_kernel", self.tcn_kernel.to_string()),
            ("fuser_channels", join_list(&self.fuser_channels)),
            ("fuser_kernels", join_list(&self.fuser_kernels)),
            ("mg_channels", join_list(&self.mg_channels)),
            ("mg_kernels", join_list(&self.mg_kernels)),
            ("num_speakers", self.num_speakers.to_string()),
            ("loss_alpha", self.loss.alpha.to_string()),
            ("loss_beta", self.loss.beta.to_string()),
            ("loss_gamma", self.loss.gamma.to_string()),
            ("use_scalefuser", t.use_scalefuser.to_string()),
            ("share_fuser_weights", t.share_fuser_weights.to_string()),
            ("use_scaleintermg", t.use_scaleintermg.to_string()),
            ("consm_mode", t.consm_mode.to_string()),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kvconfig::render;

    #[test]
    fn kv_round_trip() {
        for v in 1..=6 {
            let c = ModelConfig::toy(v, 5).unwrap();
            let doc = KvDoc::parse("cfg", &render(&c.to_kv_pairs())).unwrap();
            assert_eq!(ModelConfig::from_kv(&doc).unwrap(), c);
        }
    }

    #[test]
    fn variant_rows() {
        let t1 = Toggles::variant(1).unwrap();
        assert!(!t1.use_scalefuser && !t1.use_scaleintermg && t1.consm_mode == ConditioningMode::None);
        let t6 = Toggles::variant(6).unwrap();
        assert!(t6.use_scalefuser && t6.share_fuser_weights && t6.use_scaleintermg);
        assert_eq!(t6.consm_mode, ConditioningMode::Consm);
        assert!(Toggles::variant(0).is_err() && Toggles::variant(7).is_err());
    }

    #[test]
    fn unknown_key_names_its_line() {
        let doc = KvDoc::parse("cfg", "filters=8\n\nbogus=1\n").unwrap();
        match ModelConfig::from_kv(&doc) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let base = ModelConfig::full(6).unwrap();
        assert!(base.validate().is_ok());
        let zero_m = ModelConfig {
            tcn_groups: 0,
            ..base.clone()
        };
        assert!(matches!(zero_m.validate(), Err(Error::Config(_))));
        let bad_fuser = ModelConfig {
            fuser_channels: vec![2, 32, 1],
            ..base.clone()
        };
        assert!(matches!(bad_fuser.validate(), Err(Error::Config(_))));
        let bad_mg = ModelConfig {
            mg_channels: vec![1, 32, 32, 2],
            ..base.clone()
        };
        assert!(matches!(bad_mg.validate(), Err(Error::Config(_))));
        let even = ModelConfig {
            fuser_kernels: vec![3, 4, 3, 3],
            ..base
        };
        assert!(matches!(even.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn framing_formula() {
        let c = ModelConfig::full(6).unwrap();
        assert_eq!(c.frames(24000), 2399);
    }
}
