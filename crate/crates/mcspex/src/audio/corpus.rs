//! Synthetic two-speaker corpus: clean utterances, mixtures and manifests.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::manifest::{write_manifest, MixtureRecord};
use crate::audio::mixture::make_mixture;
use crate::audio::synth::{synth_utterance, SynthSpeakerSpec};
use crate::audio::wav::write_wav;
use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::kvconfig::{render, KvDoc};

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorConfig {
    pub speakers: usize,
    /// Total utterances across all speakers.
    pub utts: usize,
    pub seed: u64,
    pub duration_s: f64,
    pub snr_min_db: f64,
    pub snr_max_db: f64,
    pub dev_fraction: f64,
    pub harmonics: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            speakers: 8,
            utts: 200,
            seed: 0,
            duration_s: 4.0,
            snr_min_db: -2.0,
            snr_max_db: 2.0,
            dev_fraction: 0.1,
            harmonics: 8,
        }
    }
}

const KEYS: &[&str] = &[
    "speakers",
    "utts",
    "seed",
    "duration_s",
    "snr_min_db",
    "snr_max_db",
    "dev_fraction",
    "harmonics",
];

const MIN_UTTS_PER_SPEAKER: usize = 4;
const CLIP_LIMIT: f32 = 0.99;

impl GeneratorConfig {
    pub fn from_kv(doc: &KvDoc) -> Result<Self> {
        doc.reject_unknown(KEYS)?;
        let mut c = Self::default();
        doc.set("speakers", &mut c.speakers)?;
        doc.set("utts", &mut c.utts)?;
        doc.set("seed", &mut c.seed)?;
        doc.set("duration_s", &mut c.duration_s)?;
        doc.set("snr_min_db", &mut c.snr_min_db)?;
        doc.set("snr_max_db", &mut c.snr_max_db)?;
        doc.set("dev_fraction", &mut c.dev_fraction)?;
        doc.set("harmonics", &mut c.harmonics)?;
        Ok(c)
    }

    pub fn to_kv(&self) -> String {
        render(&[
            ("speakers", self.speakers.to_string()),
            ("utts", self.utts.to_string()),
            ("seed", self.seed.to_string()),
            ("duration_s", self.duration_s.to_string()),
            ("snr_min_db", self.snr_min_db.to_string()),
            ("snr_max_db", self.snr_max_db.to_string()),
            ("dev_fraction", self.dev_fraction.to_string()),
            ("harmonics", self.harmonics.to_string()),
        ])
    }

    pub fn validate(&self) -> Result<()> {
        if self.speakers < 2 {
            return Err(Error::Config(format!(
                "need at least 2 speakers to build mixtures, got {}",
                self.speakers
            )));
        }
        if self.utts < self.speakers * MIN_UTTS_PER_SPEAKER {
            return Err(Error::Config(format!(
                "need at least {MIN_UTTS_PER_SPEAKER} utterances per speaker ({} total)",
                self.speakers * MIN_UTTS_PER_SPEAKER
            )));
        }
        if self.snr_min_db > self.snr_max_db || !(0.0..1.0).contains(&self.dev_fraction) {
            return Err(Error::Config("bad SNR range or dev fraction".into()));
        }
        if self.harmonics == 0 || self.duration_s <= 0.0 {
            return Err(Error::Config("harmonics and duration must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct CorpusSummary {
    pub speakers: Vec<SynthSpeakerSpec>,
    pub train_manifest: PathBuf,
    pub dev_manifest: PathBuf,
    pub train_records: usize,
    pub dev_records: usize,
}

struct Utterance {
    speaker: usize,
    path: PathBuf,
    audio: AudioBuffer<f32>,
}

fn mkdir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(format!("creating {}", p.display()), e))
}

/// Writes the corpus under `out`: `utts/`, `mix/`, `train.tsv`, `dev.tsv`,
/// `speakers.tsv` and `generator.cfg`. Output is a pure function of `cfg`.
pub fn generate_corpus(out: &Path, cfg: &GeneratorConfig) -> Result<CorpusSummary> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let speakers = SynthSpeakerSpec::draw_set(cfg.speakers, cfg.harmonics, &mut rng)?;
    let (utt_dir, mix_dir) = (out.join("utts"), out.join("mix"));
    mkdir(&utt_dir)?;
    mkdir(&mix_dir)?;

    let mut train: Vec<Utterance> = Vec::new();
    let mut dev: Vec<Utterance> = Vec::new();
    for spec in &speakers {
        let k = spec.speaker_id;
        let count = cfg.utts / cfg.speakers + usize::from(k < cfg.utts % cfg.speakers);
        let n_dev = ((count as f64 * cfg.dev_fraction).round() as usize).clamp(2, count - 2);
        for u in 0..count {
            let audio = synth_utterance(spec, cfg.duration_s, rng.gen())?;
            let path = utt_dir.join(format!("spk{k:02}_{u:03}.wav"));
            write_wav(&path, &audio)?;
            let utt = Utterance {
                speaker: k,
                path,
                audio,
            };
            if u < count - n_dev {
                train.push(utt);
            } else {
                dev.push(utt);
            }
        }
    }

    let mut records_for = |split: &str, pool: &[Utterance]| -> Result<Vec<MixtureRecord>> {
        let mut records = Vec::with_capacity(pool.len());
        for (i, target) in pool.iter().enumerate() {
            let others: Vec<&Utterance> = pool.iter().filter(|u| u.speaker != target.speaker).collect();
            let same: Vec<&Utterance> = pool
                .iter()
                .enumerate()
                .filter(|(j, u)| u.speaker == target.speaker && *j != i)
                .map(|(_, u)| u)
                .collect();
            let interferer = others[rng.gen_range(0..others.len())];
            let reference = same[rng.gen_range(0..same.len())];
            let snr = rng.gen_range(cfg.snr_min_db..=cfg.snr_max_db);
            let mix = make_mixture(&target.audio, &interferer.audio, snr)?;
            let mut clean = target.audio.samples()[..mix.len()].to_vec();
            let mut mixed = mix.into_samples();
            let peak = mixed.iter().fold(0.0f32, |m, v| m.max(v.abs()));
            if peak > CLIP_LIMIT {
                let g = CLIP_LIMIT / peak;
                mixed.iter_mut().chain(clean.iter_mut()).for_each(|v| *v *= g);
            }
            let mixture_path = mix_dir.join(format!("{split}_{i:04}_mix.wav"));
            let target_path = mix_dir.join(format!("{split}_{i:04}_target.wav"));
            write_wav(&mixture_path, &AudioBuffer::at_8k(mixed)?)?;
            write_wav(&target_path, &AudioBuffer::at_8k(clean)?)?;
            records.push(MixtureRecord {
                mixture_path,
                reference_path: reference.path.clone(),
                target_path,
                speaker_id: target.speaker,
            });
        }
        Ok(records)
    };
    let train_records = records_for("train", &train)?;
    let dev_records = records_for("dev", &dev)?;

    let train_manifest = out.join("train.tsv");
    let dev_manifest = out.join("dev.tsv");
    write_manifest(&train_manifest, &train_records)?;
    write_manifest(&dev_manifest, &dev_records)?;
    let write = |name: &str, text: String| {
        let p = out.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(format!("writing {}", p.display()), e))
    };
    write("generator.cfg", cfg.to_kv())?;
    write(
        "speakers.tsv",
        speakers
            .iter()
            .map(|s| format!("{}\t{:.3}\t{:.3}\n", s.speaker_id, s.fundamental_hz, s.am_rate_hz))
            .collect(),
    )?;
    Ok(CorpusSummary {
        speakers,
        train_manifest,
        dev_manifest,
        train_records: train_records.len(),
        dev_records: dev_records.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{read_manifest, read_wav};

    fn small() -> GeneratorConfig {
        GeneratorConfig {
            speakers: 3,
            utts: 12,
            duration_s: 0.25,
            ..Default::default()
        }
    }

    #[test]
    fn defaults_match_the_documented_corpus() {
        let c = GeneratorConfig::default();
        assert_eq!((c.speakers, c.utts), (8, 200));
        assert_eq!((c.snr_min_db, c.snr_max_db), (-2.0, 2.0));
        let doc = KvDoc::parse("gen", &c.to_kv()).unwrap();
        assert_eq!(GeneratorConfig::from_kv(&doc).unwrap(), c);
    }

    #[test]
    fn single_speaker_is_rejected() {
        let cfg = GeneratorConfig {
            speakers: 1,
            ..small()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn generation_is_deterministic_and_well_formed() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let sa = generate_corpus(a.path(), &small()).unwrap();
        generate_corpus(b.path(), &small()).unwrap();
        for name in ["train.tsv", "dev.tsv", "mix/train_0003_mix.wav", "mix/dev_0001_target.wav", "utts/spk02_001.wav"] {
            assert_eq!(
                std::fs::read(a.path().join(name)).unwrap(),
                std::fs::read(b.path().join(name)).unwrap(),
                "{name}"
            );
        }
        assert_eq!(sa.train_records + sa.dev_records, 12);
        let recs = read_manifest(&sa.train_manifest).unwrap();
        for r in &recs {
            assert!(r.speaker_id < 3);
            assert_ne!(r.reference_path, r.target_path);
            let utt_name = r.reference_path.file_name().unwrap().to_string_lossy().to_string();
            assert!(utt_name.starts_with(&format!("spk{:02}", r.speaker_id)));
            let m: AudioBuffer<f32> = read_wav(&r.mixture_path).unwrap();
            let t: AudioBuffer<f32> = read_wav(&r.target_path).unwrap();
            assert_eq!(m.len(), t.len());
        }
    }
}
