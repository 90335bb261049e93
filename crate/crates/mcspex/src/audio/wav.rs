//! RIFF/WAVE PCM16 mono reader and writer.

use std::path::Path;

use crate::audio::{AudioBuffer, SAMPLE_RATE_HZ};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const HEADER_LEN: usize = 44;

fn fmt_err(path: &Path, field: &'static str, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        field,
        msg: msg.into(),
    }
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Decodes PCM16 mono 8 kHz audio, scaling samples by 1/32768.
pub fn read_wav<T: Scalar>(path: &Path) -> Result<AudioBuffer<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    decode_wav(path, &bytes)
}

pub(crate) fn decode_wav<T: Scalar>(path: &Path, bytes: &[u8]) -> Result<AudioBuffer<T>> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" {
        return Err(fmt_err(path, "riff", "missing RIFF magic"));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(fmt_err(path, "wave", "missing WAVE form type"));
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let body_end = body_start
            .checked_add(size)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| fmt_err(path, "chunk_size", format!("chunk `{}` overruns file", String::from_utf8_lossy(id))))?;
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(fmt_err(path, "fmt", "fmt chunk shorter than 16 bytes"));
                }
                fmt = Some((u16_at(body, 0), u16_at(body, 2), u32_at(body, 4), u16_at(body, 14)));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        // chunks are word aligned
        pos = body_end + (size & 1);
    }
    let (format, channels, rate, bits) = fmt.ok_or_else(|| fmt_err(path, "fmt", "no fmt chunk"))?;
    if format != 1 {
        return Err(fmt_err(path, "audio_format", format!("expected PCM (1), got {format}")));
    }
    if channels != 1 {
        return Err(fmt_err(path, "channels", format!("expected mono, got {channels} channels")));
    }
    if bits != 16 {
        return Err(fmt_err(path, "bits_per_sample", format!("expected 16, got {bits}")));
    }
    if rate != SAMPLE_RATE_HZ {
        return Err(fmt_err(path, "sample_rate", format!("expected {SAMPLE_RATE_HZ} Hz, got {rate}")));
    }
    let data = data.ok_or_else(|| fmt_err(path, "data", "no data chunk"))?;
    let scale = T::from_f64_lossy(1.0 / 32768.0);
    let samples: Vec<T> = data
        .chunks_exact(2)
        .map(|c| T::from_i16(i16::from_le_bytes([c[0], c[1]])).unwrap() * scale)
        .collect();
    if samples.is_empty() {
        return Err(fmt_err(path, "data", "no samples"));
    }
    AudioBuffer::new(samples, rate)
}

/// `round_half_away_from_zero(x * 32768)`, saturated to the int16 range.
pub fn quantize<T: Scalar>(x: T) -> i16 {
    let v = (x.to_f64_lossy() * 32768.0).round();
    v.clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

pub(crate) fn encode_wav<T: Scalar>(buf: &AudioBuffer<T>) -> Vec<u8> {
    let data_len = buf.len() * 2;
    let mut out = Vec::with_capacity(HEADER_LEN + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&buf.sample_rate_hz().to_le_bytes());
    out.extend_from_slice(&(buf.sample_rate_hz() * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in buf.samples() {
        out.extend_from_slice(&quantize(s).to_le_bytes());
    }
    out
}

pub fn write_wav<T: Scalar>(path: &Path, buf: &AudioBuffer<T>) -> Result<()> {
    std::fs::write(path, encode_wav(buf)).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn one_second_file_size() {
        let buf = AudioBuffer::<f32>::at_8k(vec![0.0; 8000]).unwrap();
        assert_eq!(encode_wav(&buf).len(), 16044);
    }

    #[test]
    fn full_scale_negative_maps_to_minus_one() {
        assert_eq!(quantize(-1.0f64), i16::MIN);
        let buf = AudioBuffer::<f64>::at_8k(vec![-1.0, 0.5]).unwrap();
        let back: AudioBuffer<f64> = decode_wav(Path::new("mem"), &encode_wav(&buf)).unwrap();
        assert_eq!(back.samples(), &[-1.0, 0.5]);
    }

    #[test]
    fn rounding_is_half_away_from_zero() {
        assert_eq!(quantize(0.5f64 / 32768.0), 1);
        assert_eq!(quantize(-0.5f64 / 32768.0), -1);
        assert_eq!(quantize(1.0f64), i16::MAX);
    }

    fn header_with(channels: u16, format: u16, rate: u32) -> Vec<u8> {
        let buf = AudioBuffer::<f32>::at_8k(vec![0.0; 4]).unwrap();
        let mut bytes = encode_wav(&buf);
        bytes[20..22].copy_from_slice(&format.to_le_bytes());
        bytes[22..24].copy_from_slice(&channels.to_le_bytes());
        bytes[24..28].copy_from_slice(&rate.to_le_bytes());
        bytes
    }

    #[test]
    fn rejects_stereo_non_pcm_and_wrong_rate() {
        let field = |bytes: Vec<u8>| match decode_wav::<f32>(Path::new("x.wav"), &bytes) {
            Err(Error::Format { field, .. }) => field,
            other => panic!("expected format error, got {other:?}"),
        };
        assert_eq!(field(header_with(2, 1, 8000)), "channels");
        assert_eq!(field(header_with(1, 3, 8000)), "audio_format");
        assert_eq!(field(header_with(1, 1, 16000)), "sample_rate");
        assert_eq!(field(b"RIFX".to_vec()), "riff");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn quantized_samples_round_trip(codes in proptest::collection::vec(any::<i16>(), 1..200)) {
            let samples: Vec<f32> = codes.iter().map(|&c| c as f32 / 32768.0).collect();
            let buf = AudioBuffer::at_8k(samples).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("a.wav");
            write_wav(&path, &buf).unwrap();
            let back: AudioBuffer<f32> = read_wav(&path).unwrap();
            prop_assert_eq!(back, buf);
        }
    }
}
