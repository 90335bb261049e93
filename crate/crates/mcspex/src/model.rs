//! The full extraction network and its parameter registry.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::error::Result;
use crate::extractor::Extractor;
use crate::frontend::{Decoder, Frontend, MultiScaleFeatures};
use crate::maskgen::{apply_masks, MaskGenerator, MaskSet};
use crate::nn::Builder;
use crate::numcore::{ParamStore, Tape, VarId};
use crate::objective::{si_sdr_loss, total_loss};
use crate::scalar::Scalar;
use crate::spkenc::{SpeakerClassifier, SpeakerEncoder};

/// Parameter layout of every part of the network.
#[derive(Clone, Debug)]
pub struct Network {
    pub frontend: Frontend,
    pub speaker: SpeakerEncoder,
    pub classifier: SpeakerClassifier,
    pub extractor: Extractor,
    pub masker: MaskGenerator,
    pub decoder: Decoder,
}

/// Top-level registry prefixes, in registration order.
pub const PARTS: [&str; 6] = ["frontend", "speaker", "classifier", "extractor", "masker", "decoder"];

impl Network {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Network {
            frontend: Frontend::new(&mut b.scope(PARTS[0]), cfg)?,
            speaker: SpeakerEncoder::new(&mut b.scope(PARTS[1]), cfg)?,
            classifier: SpeakerClassifier::new(&mut b.scope(PARTS[2]), cfg)?,
            extractor: Extractor::new(&mut b.scope(PARTS[3]), cfg)?,
            masker: MaskGenerator::new(&mut b.scope(PARTS[4]), cfg)?,
            decoder: Decoder::new(&mut b.scope(PARTS[5]), cfg)?,
        })
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ForwardOptions {
    /// Cut the gradient path through the reference encoder.
    pub detach_reference: bool,
}

#[derive(Clone, Copy, Debug)]
pub struct ForwardOutput {
    /// `[1, len]` waveforms for the small, middle and large scales.
    pub estimates: [VarId; 3],
    pub logits: VarId,
    pub embedding: VarId,
    pub fused_mix: VarId,
    pub fused_ref: VarId,
    pub s_mul: MultiScaleFeatures,
    pub extracted: VarId,
    pub masks: MaskSet,
}

#[derive(Clone, Debug)]
pub struct Model<T: Scalar> {
    pub config: ModelConfig,
    pub store: ParamStore<T>,
    pub net: Network,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamCount {
    pub total: usize,
    /// Scalars per top-level part, in [`PARTS`] order.
    pub breakdown: Vec<(String, usize)>,
}

impl<T: Scalar> Model<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Network::new(&mut Builder::new(&mut store, &mut rng), &config)?;
        Ok(Model { config, store, net })
    }

    pub fn param_count(&self) -> ParamCount {
        ParamCount {
            total: self.store.num_scalars(),
            breakdown: PARTS
                .iter()
                .map(|p| (p.to_string(), self.store.num_scalars_with_prefix(&format!("{p}."))))
                .collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            store: self.store.cast(),
            net: self.net.clone(),
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape<'_, T>,
        mix: &[T],
        reference: &[T],
        opts: ForwardOptions,
    ) -> Result<ForwardOutput> {
        let net = &self.net;
        let twin = net.frontend.twin_encode(tape, mix, reference, opts.detach_reference)?;
        let embedding = net.speaker.forward(tape, twin.r)?;
        let logits = net.classifier.forward(tape, embedding)?;
        let extracted = net.extractor.forward(tape, twin.s, embedding)?;
        let masks = net.masker.forward(tape, extracted)?;
        let masked = apply_masks(tape, &twin.s_mul, &masks)?;
        let estimates = net.decoder.forward(tape, &masked, mix.len())?;
        Ok(ForwardOutput {
            estimates,
            logits,
            embedding,
            fused_mix: twin.s,
            fused_ref: twin.r,
            s_mul: twin.s_mul,
            extracted,
            masks,
        })
    }

    /// Multi-task loss for one training example.
    pub fn loss(
        &self,
        tape: &mut Tape<'_, T>,
        out: &ForwardOutput,
        target: &[T],
        speaker_id: usize,
    ) -> Result<VarId> {
        let si = si_sdr_loss(tape, out.estimates, target, &self.config.loss)?;
        let ce = tape.cross_entropy(out.logits, speaker_id)?;
        total_loss(tape, si, ce, &self.config.loss)
    }

    /// Small-scale estimate of the target speech, same length as `mix`.
    pub fn infer(&self, mix: &[T], reference: &[T]) -> Result<Vec<T>> {
        let mut tape = Tape::new(&self.store);
        let out = self.forward(&mut tape, mix, reference, ForwardOptions::default())?;
        Ok(tape.value(out.estimates[0]).data().to_vec())
    }
}

/// Parameter count of a configuration, shared parameters counted once.
pub fn count_parameters(config: &ModelConfig) -> Result<ParamCount> {
    Ok(Model::<f32>::new(config.clone(), 0)?.param_count())
}
