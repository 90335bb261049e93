use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Gain applied to `b` so that `10 log10(|a|^2 / |g b|^2) = snr_db` over the
/// first `len` samples of each.
pub fn mixture_gain<T: Scalar>(a: &[T], b: &[T], snr_db: f64) -> Result<T> {
    let ea: f64 = a.iter().map(|v| v.to_f64_lossy().powi(2)).sum();
    let eb: f64 = b.iter().map(|v| v.to_f64_lossy().powi(2)).sum();
    if ea == 0.0 || eb == 0.0 {
        return Err(Error::Degenerate("cannot mix a silent source".into()));
    }
    Ok(T::from_f64_lossy((ea / (eb * 10f64.powf(snr_db / 10.0))).sqrt()))
}

/// Mixes two sources in "minimum" mode: both are truncated to the shorter
/// length and `b` is rescaled to the requested SNR relative to `a`.
pub fn make_mixture<T: Scalar>(a: &AudioBuffer<T>, b: &AudioBuffer<T>, snr_db: f64) -> Result<AudioBuffer<T>> {
    if a.sample_rate_hz() != b.sample_rate_hz() {
        return Err(Error::Usage(format!(
            "cannot mix {} Hz with {} Hz audio",
            a.sample_rate_hz(),
            b.sample_rate_hz()
        )));
    }
    let rate = a.sample_rate_hz();
    let len = a.len().min(b.len());
    let (a, b) = (&a.samples()[..len], &b.samples()[..len]);
    let gain = mixture_gain(a, b, snr_db)?;
    let mix = a.iter().zip(b).map(|(&x, &y)| x + gain * y).collect();
    AudioBuffer::new(mix, rate)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SegmentMode {
    /// Keep a zero-padded final remainder.
    Training,
    /// Drop the final remainder.
    Validation,
}

/// Cuts fixed-length windows every `hop_seconds`.
pub fn segment<T: Scalar>(
    buf: &AudioBuffer<T>,
    seconds: f64,
    hop_seconds: f64,
    mode: SegmentMode,
) -> Result<Vec<AudioBuffer<T>>> {
    if !(seconds > 0.0 && hop_seconds > 0.0) {
        return Err(Error::Usage("segment and hop lengths must be positive".into()));
    }
    let sr = buf.sample_rate_hz() as f64;
    let win = ((seconds * sr).round() as usize).max(1);
    let hop = ((hop_seconds * sr).round() as usize).max(1);
    let s = buf.samples();
    let mut out = Vec::new();
    let mut start = 0;
    while start + win <= s.len() {
        out.push(AudioBuffer::new(s[start..start + win].to_vec(), buf.sample_rate_hz())?);
        start += hop;
    }
    let covered = if out.is_empty() { 0 } else { start - hop + win };
    if mode == SegmentMode::Training && covered < s.len() && start < s.len() {
        let mut tail = s[start..].to_vec();
        tail.resize(win, T::zero());
        out.push(AudioBuffer::new(tail, buf.sample_rate_hz())?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(len: usize, seed: u64) -> AudioBuffer<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        AudioBuffer::at_8k((0..len).map(|_| rng.gen_range(-0.5..0.5)).collect()).unwrap()
    }

    fn snr(a: &[f64], b: &[f64]) -> f64 {
        let ea: f64 = a.iter().map(|v| v * v).sum();
        let eb: f64 = b.iter().map(|v| v * v).sum();
        10.0 * (ea / eb).log10()
    }

    #[test]
    fn equal_energy_at_zero_db_leaves_b_unscaled() {
        let a = AudioBuffer::at_8k(vec![1.0, -1.0, 1.0]).unwrap();
        let b = AudioBuffer::at_8k(vec![-1.0, -1.0, 1.0]).unwrap();
        assert!((mixture_gain(a.samples(), b.samples(), 0.0).unwrap() - 1.0f64).abs() < 1e-15);
        assert_eq!(make_mixture(&a, &b, 0.0).unwrap().samples(), &[0.0, -2.0, 2.0]);
    }

    #[test]
    fn minimum_mode_truncates() {
        let m = make_mixture(&noise(24000, 1), &noise(20000, 2), 0.0).unwrap();
        assert_eq!(m.len(), 20000);
    }

    #[test]
    fn six_db_scales_energy() {
        let (a, b) = (noise(1000, 3), noise(1000, 4));
        let g = mixture_gain(a.samples(), b.samples(), 6.0).unwrap();
        let scaled: f64 = b.samples().iter().map(|v| (g * v).powi(2)).sum();
        assert!((scaled - a.energy() / 10f64.powf(0.6)).abs() < 1e-9);
    }

    #[test]
    fn silent_input_is_degenerate() {
        let z = AudioBuffer::at_8k(vec![0.0; 10]).unwrap();
        assert!(matches!(make_mixture(&noise(10, 1), &z, 0.0), Err(Error::Degenerate(_))));
    }

    #[test]
    fn segmentation_examples() {
        let count = |secs: f64, mode| segment(&noise((secs * 8000.0) as usize, 0), 3.0, 3.0, mode).unwrap();
        assert_eq!(count(9.0, SegmentMode::Training).len(), 3);
        let seven = count(7.0, SegmentMode::Training);
        assert_eq!(seven.len(), 3);
        assert!(seven.iter().all(|s| s.len() == 24000));
        assert!(seven[2].samples()[8000..].iter().all(|&v| v == 0.0));
        assert_eq!(count(2.0, SegmentMode::Validation).len(), 0);
        assert_eq!(count(2.0, SegmentMode::Training).len(), 1);
    }

    proptest! {
        #[test]
        fn mixture_hits_requested_snr(snr_db in -10.0f64..10.0, seed in any::<u64>(), la in 50usize..400, lb in 50usize..400) {
            let (a, b) = (noise(la, seed), noise(lb, seed ^ 1));
            let m = make_mixture(&a, &b, snr_db).unwrap();
            let n = la.min(lb);
            let interferer: Vec<f64> = m.samples().iter().zip(&a.samples()[..n]).map(|(x, y)| x - y).collect();
            prop_assert!((snr(&a.samples()[..n], &interferer) - snr_db).abs() < 0.01);
        }

        #[test]
        fn segment_count_matches_formula(len in 1usize..40000, mode_train in any::<bool>()) {
            let buf = noise(len, 0);
            let mode = if mode_train { SegmentMode::Training } else { SegmentMode::Validation };
            let segs = segment(&buf, 0.5, 0.5, mode).unwrap();
            let hop = 4000;
            let expected = len / hop + usize::from(mode_train && len % hop != 0);
            prop_assert_eq!(segs.len(), expected);
        }
    }
}
