//! Harmonic "speaker" synthesis for desk-scale training data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::{AudioBuffer, SAMPLE_RATE_HZ};
use crate::error::{Error, Result};

/// Voice model of one synthetic speaker.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpeakerSpec {
    pub speaker_id: usize,
    pub fundamental_hz: f64,
    pub harmonic_weights: Vec<f64>,
    /// Amplitude-modulation rate; `0` disables modulation.
    pub am_rate_hz: f64,
}

pub const MIN_F0_HZ: f64 = 80.0;
pub const MAX_F0_HZ: f64 = 400.0;
/// Minimum spacing between the fundamentals of two distinct speakers.
pub const MIN_F0_SPACING_HZ: f64 = 20.0;

const PEAK: f64 = 0.7;
const AM_DEPTH: f64 = 0.5;

impl SynthSpeakerSpec {
    pub fn validate(&self) -> Result<()> {
        if !(MIN_F0_HZ..=MAX_F0_HZ).contains(&self.fundamental_hz) {
            return Err(Error::Config(format!(
                "speaker {}: fundamental {} Hz outside [{MIN_F0_HZ}, {MAX_F0_HZ}]",
                self.speaker_id, self.fundamental_hz
            )));
        }
        if self.harmonic_weights.is_empty() || self.am_rate_hz < 0.0 {
            return Err(Error::Config(format!(
                "speaker {}: needs at least one harmonic and a non-negative AM rate",
                self.speaker_id
            )));
        }
        Ok(())
    }

    /// Draws `count` speakers with fundamentals at least
    /// [`MIN_F0_SPACING_HZ`] apart.
    pub fn draw_set(count: usize, harmonics: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Self>> {
        let max_speakers = ((MAX_F0_HZ - MIN_F0_HZ) / MIN_F0_SPACING_HZ) as usize + 1;
        if count > max_speakers {
            return Err(Error::Config(format!(
                "at most {max_speakers} synthetic speakers fit in [{MIN_F0_HZ}, {MAX_F0_HZ}] Hz"
            )));
        }
        // Evenly spaced slots with bounded jitter keep the spacing invariant
        // without rejection sampling.
        let slot = (MAX_F0_HZ - MIN_F0_HZ) / count.max(2).saturating_sub(1) as f64;
        let jitter = ((slot - MIN_F0_SPACING_HZ) / 2.0).clamp(0.0, 10.0);
        let mut f0s: Vec<f64> = (0..count)
            .map(|i| {
                let centre = if count == 1 { 200.0 } else { MIN_F0_HZ + slot * i as f64 };
                (centre + rng.gen_range(-jitter..=jitter)).clamp(MIN_F0_HZ, MAX_F0_HZ)
            })
            .collect();
        // shuffle so speaker ids do not sort by pitch
        for i in (1..f0s.len()).rev() {
            let j = rng.gen_range(0..=i);
            f0s.swap(i, j);
        }
        Ok(f0s
            .into_iter()
            .enumerate()
            .map(|(speaker_id, fundamental_hz)| SynthSpeakerSpec {
                speaker_id,
                fundamental_hz,
                harmonic_weights: (1..=harmonics).map(|k| rng.gen_range(0.3..1.0) / k as f64).collect(),
                am_rate_hz: rng.gen_range(2.0..6.0),
            })
            .collect())
    }
}

/// Renders one utterance: harmonics at `k * f0` with seed-dependent phases,
/// optionally amplitude-modulated, peak-normalized to 0.7.
pub fn synth_utterance(spec: &SynthSpeakerSpec, duration_s: f64, rng_seed: u64) -> Result<AudioBuffer<f32>> {
    if duration_s <= 0.0 || !duration_s.is_finite() {
        return Err(Error::Usage(format!("duration must be positive, got {duration_s}")));
    }
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let sr = SAMPLE_RATE_HZ as f64;
    let len = ((duration_s * sr).round() as usize).max(1);
    let nyquist = sr / 2.0;
    let phases: Vec<f64> = spec
        .harmonic_weights
        .iter()
        .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
        .collect();
    let am_phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let tau = std::f64::consts::TAU;
    let mut wave: Vec<f64> = (0..len)
        .map(|n| {
            let t = n as f64 / sr;
            let tone: f64 = spec
                .harmonic_weights
                .iter()
                .zip(&phases)
                .enumerate()
                .filter(|(k, _)| (*k + 1) as f64 * spec.fundamental_hz < nyquist)
                .map(|(k, (&w, &ph))| w * (tau * (k + 1) as f64 * spec.fundamental_hz * t + ph).sin())
                .sum();
            let env = if spec.am_rate_hz > 0.0 {
                1.0 - AM_DEPTH / 2.0 + AM_DEPTH / 2.0 * (tau * spec.am_rate_hz * t + am_phase).sin()
            } else {
                1.0
            };
            tone * env
        })
        .collect();
    let peak = wave.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        for v in &mut wave {
            *v *= PEAK / peak;
        }
    }
    AudioBuffer::at_8k(wave.into_iter().map(|v| v as f32).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rustfft::{num_complex::Complex, FftPlanner};

    fn pure(f0: f64) -> SynthSpeakerSpec {
        SynthSpeakerSpec {
            speaker_id: 0,
            fundamental_hz: f0,
            harmonic_weights: vec![1.0],
            am_rate_hz: 0.0,
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = &SynthSpeakerSpec::draw_set(4, 6, &mut rng).unwrap()[2];
        let a = synth_utterance(spec, 0.5, 11).unwrap();
        let b = synth_utterance(spec, 0.5, 11).unwrap();
        let c = synth_utterance(spec, 0.5, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn single_harmonic_is_a_sinusoid_with_peak_0_7() {
        let buf = synth_utterance(&pure(200.0), 1.0, 5).unwrap();
        let peak = buf.samples().iter().fold(0.0f32, |m, v| m.max(v.abs()));
        assert!((peak - 0.7).abs() < 1e-6);
        // a sinusoid satisfies x[n+1] + x[n-1] = 2 cos(w) x[n]
        let c = 2.0 * (std::f64::consts::TAU * 200.0 / 8000.0).cos();
        let s = buf.samples();
        for n in 1..s.len() - 1 {
            let lhs = s[n + 1] as f64 + s[n - 1] as f64;
            assert!((lhs - c * s[n] as f64).abs() < 1e-5);
        }
    }

    #[test]
    fn spectral_peak_sits_at_the_fundamental() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut spec = SynthSpeakerSpec::draw_set(3, 1, &mut rng).unwrap().remove(1);
        spec.harmonic_weights = vec![1.0, 0.4, 0.2];
        let buf = synth_utterance(&spec, 2.0, 1).unwrap();
        let n = buf.len();
        let mut bins: Vec<Complex<f64>> = buf.samples().iter().map(|&v| Complex::new(v as f64, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut bins);
        let (peak_bin, _) = bins[..n / 2]
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
            .unwrap();
        let bin_hz = 8000.0 / n as f64;
        let expected = spec.fundamental_hz / bin_hz;
        assert!((peak_bin as f64 - expected).abs() <= 1.0, "{peak_bin} vs {expected}");
    }

    #[test]
    fn drawn_speakers_are_spaced() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for count in [2, 8, 16, 17] {
            let set = SynthSpeakerSpec::draw_set(count, 4, &mut rng).unwrap();
            for a in &set {
                a.validate().unwrap();
                for b in &set {
                    if a.speaker_id != b.speaker_id {
                        assert!((a.fundamental_hz - b.fundamental_hz).abs() >= MIN_F0_SPACING_HZ - 1e-9);
                    }
                }
            }
        }
        assert!(SynthSpeakerSpec::draw_set(18, 4, &mut rng).is_err());
    }
}
