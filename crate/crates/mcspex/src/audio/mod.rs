//! Waveform I/O, mixing, segmentation, manifests and the synthetic corpus.

pub mod corpus;
pub mod manifest;
pub mod mixture;
pub mod synth;
pub mod wav;

pub use corpus::{generate_corpus, CorpusSummary, GeneratorConfig};
pub use manifest::{read_manifest, write_manifest, MixtureRecord};
pub use mixture::{make_mixture, mixture_gain, segment, SegmentMode};
pub use synth::{synth_utterance, SynthSpeakerSpec};
pub use wav::{read_wav, write_wav};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Sample rate every pipeline entry point expects.
pub const SAMPLE_RATE_HZ: u32 = 8000;

/// Mono waveform.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioBuffer<T> {
    samples: Vec<T>,
    sample_rate_hz: u32,
}

impl<T: Scalar> AudioBuffer<T> {
    pub fn new(samples: Vec<T>, sample_rate_hz: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Usage("audio buffer must hold at least one sample".into()));
        }
        if sample_rate_hz == 0 {
            return Err(Error::Usage("sample rate must be positive".into()));
        }
        Ok(AudioBuffer {
            samples,
            sample_rate_hz,
        })
    }

    /// 8 kHz buffer.
    pub fn at_8k(samples: Vec<T>) -> Result<Self> {
        Self::new(samples, SAMPLE_RATE_HZ)
    }

    pub fn samples(&self) -> &[T] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<T> {
        self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    pub fn energy(&self) -> T {
        self.samples.iter().map(|&v| v * v).sum()
    }

    pub fn cast<U: Scalar>(&self) -> AudioBuffer<U> {
        AudioBuffer {
            samples: self.samples.iter().map(|v| U::from_f64_lossy(v.to_f64_lossy())).collect(),
            sample_rate_hz: self.sample_rate_hz,
        }
    }

    /// Fails unless the buffer is at the pipeline rate.
    pub fn require_pipeline_rate(&self) -> Result<()> {
        if self.sample_rate_hz != SAMPLE_RATE_HZ {
            return Err(Error::Usage(format!(
                "expected {SAMPLE_RATE_HZ} Hz audio, got {} Hz",
                self.sample_rate_hz
            )));
        }
        Ok(())
    }
}
