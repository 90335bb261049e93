//! Training loop: data loading, Adam, plateau schedule, validation,
//! checkpoints and the metrics log.

pub mod adam;
pub mod checkpoint;
pub mod scheduler;

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::audio::{read_manifest, read_wav, segment, AudioBuffer, MixtureRecord, SegmentMode};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::kvconfig::KvDoc;
use crate::model::{ForwardOptions, Model};
use crate::numcore::{ParamId, Tape, Tensor, NORM_EPS};
use crate::objective::si_sdr;

pub use adam::Adam;
pub use checkpoint::Checkpoint;
pub use scheduler::{Plateau, PlateauAction};

const MAX_SKIP_RATE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub lr: f64,
    pub steps_per_epoch: usize,
    pub max_epochs: usize,
    /// 0 means no step limit.
    pub max_steps: usize,
    pub segment_seconds: f64,
    /// Validation records per epoch; 0 means all.
    pub val_limit: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            lr: 1e-3,
            steps_per_epoch: 1000,
            max_epochs: 100,
            max_steps: 0,
            segment_seconds: 3.0,
            val_limit: 0,
        }
    }
}

impl TrainConfig {
    pub const KEYS: &'static [&'static str] = &[
        "seed",
        "lr",
        "steps_per_epoch",
        "max_epochs",
        "max_steps",
        "segment_seconds",
        "val_limit",
    ];

    pub fn apply_kv(&mut self, doc: &KvDoc) -> Result<()> {
        doc.set("seed", &mut self.seed)?;
        doc.set("lr", &mut self.lr)?;
        doc.set("steps_per_epoch", &mut self.steps_per_epoch)?;
        doc.set("max_epochs", &mut self.max_epochs)?;
        doc.set("max_steps", &mut self.max_steps)?;
        doc.set("segment_seconds", &mut self.segment_seconds)?;
        doc.set("val_limit", &mut self.val_limit)?;
        Ok(())
    }

    pub fn from_kv(doc: &KvDoc) -> Result<Self> {
        doc.reject_unknown(Self::KEYS)?;
        let mut c = Self::default();
        c.apply_kv(doc)?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_kv_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("seed", self.seed.to_string()),
            ("lr", self.lr.to_string()),
            ("steps_per_epoch", self.steps_per_epoch.to_string()),
            ("max_epochs", self.max_epochs.to_string()),
            ("max_steps", self.max_steps.to_string()),
            ("segment_seconds", self.segment_seconds.to_string()),
            ("val_limit", self.val_limit.to_string()),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.steps_per_epoch == 0 || self.max_epochs == 0 {
            return Err(Error::Config("steps_per_epoch and max_epochs must be positive".into()));
        }
        if !(self.segment_seconds > 0.0) {
            return Err(Error::Config("segment_seconds must be positive".into()));
        }
        Ok(())
    }
}

/// Everything besides parameters and optimizer moments needed to resume.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub step: u64,
    pub epoch: u64,
    pub lr: f64,
    pub plateau: Plateau,
    pub stopped: bool,
    pub rng_seed: [u8; 32],
    pub rng_stream: u64,
    pub rng_word_pos: u128,
}

/// One loaded training or validation example.
#[derive(Clone, Debug)]
pub struct Example {
    pub name: String,
    pub mix: AudioBuffer<f32>,
    pub reference: AudioBuffer<f32>,
    pub target: AudioBuffer<f32>,
    pub speaker_id: usize,
}

#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub examples: Vec<Example>,
    /// One message per record that could not be used.
    pub skipped: Vec<String>,
}

impl Dataset {
    /// Loads every record of `manifest`. Unusable records are skipped and
    /// noted; more than 10% skipped, or none left, is a data error.
    pub fn load(manifest: &Path, config: &ModelConfig) -> Result<Self> {
        Self::load_with(manifest, config, true)
    }

    /// As [`Dataset::load`] but accepts speakers the classifier never saw.
    pub fn load_for_eval(manifest: &Path, config: &ModelConfig) -> Result<Self> {
        Self::load_with(manifest, config, false)
    }

    fn load_with(manifest: &Path, config: &ModelConfig, check_speakers: bool) -> Result<Self> {
        let records = read_manifest(manifest)?;
        let mut ds = Dataset::default();
        for rec in &records {
            match load_example(rec, config, check_speakers) {
                Ok(ex) => ds.examples.push(ex),
                Err(e) => ds.skipped.push(format!("{}: {e}", rec.mixture_path.display())),
            }
        }
        if ds.examples.is_empty() {
            return Err(Error::Data(format!("{}: no usable records", manifest.display())));
        }
        if ds.skipped.len() as f64 > MAX_SKIP_RATE * records.len() as f64 {
            return Err(Error::Data(format!(
                "{}: {} of {} records unusable, first: {}",
                manifest.display(),
                ds.skipped.len(),
                records.len(),
                ds.skipped[0]
            )));
        }
        Ok(ds)
    }
}

fn load_example(rec: &MixtureRecord, config: &ModelConfig, check_speakers: bool) -> Result<Example> {
    let mix: AudioBuffer<f32> = read_wav(&rec.mixture_path)?;
    let reference: AudioBuffer<f32> = read_wav(&rec.reference_path)?;
    let target: AudioBuffer<f32> = read_wav(&rec.target_path)?;
    for b in [&mix, &reference, &target] {
        b.require_pipeline_rate()?;
    }
    let min = config.min_samples();
    if mix.len() < min || reference.len() < min {
        return Err(Error::TooShort {
            len: mix.len().min(reference.len()),
            min,
        });
    }
    if target.len() < mix.len() {
        return Err(Error::Data(format!("target has {} samples, mixture {}", target.len(), mix.len())));
    }
    if check_speakers && rec.speaker_id >= config.num_speakers {
        return Err(Error::Data(format!(
            "speaker id {} outside the {} classes of the model",
            rec.speaker_id, config.num_speakers
        )));
    }
    let target = AudioBuffer::at_8k(target.samples()[..mix.len()].to_vec())?;
    Ok(Example {
        name: rec.mixture_path.display().to_string(),
        mix,
        reference,
        target,
        speaker_id: rec.speaker_id,
    })
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricRecord {
    pub step: u64,
    pub epoch: u64,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_sisdr: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Validation {
    pub loss: f64,
    pub sisdr: f64,
    pub sisdri: f64,
    pub records: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochReport {
    pub epoch: u64,
    pub validation: Validation,
    pub action: PlateauAction,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    pub step: u64,
    pub train_loss: f64,
    pub epoch_end: Option<EpochReport>,
}

pub struct Trainer {
    pub model: Model<f32>,
    pub adam: Adam<f32>,
    pub config: TrainConfig,
    pub train: Dataset,
    pub dev: Dataset,
    pub metrics: Vec<MetricRecord>,
    step: u64,
    epoch: u64,
    lr: f64,
    plateau: Plateau,
    stopped: bool,
    rng: ChaCha8Rng,
    attempts: usize,
    data_errors: usize,
}

fn data_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

impl Trainer {
    pub fn new(model: Model<f32>, config: TrainConfig, train: Dataset, dev: Dataset) -> Result<Self> {
        config.validate()?;
        Ok(Trainer {
            adam: Adam::new(&model.store),
            model,
            lr: config.lr,
            rng: data_rng(config.seed),
            config,
            train,
            dev,
            metrics: Vec::new(),
            step: 0,
            epoch: 0,
            plateau: Plateau::default(),
            stopped: false,
            attempts: 0,
            data_errors: 0,
        })
    }

    /// Resumes exactly where `ckpt` was taken.
    pub fn from_checkpoint(ckpt: &Checkpoint, train: Dataset, dev: Dataset) -> Result<Self> {
        let model = ckpt.to_model()?;
        let s = &ckpt.state;
        let mut rng = ChaCha8Rng::from_seed(s.rng_seed);
        rng.set_stream(s.rng_stream);
        rng.set_word_pos(s.rng_word_pos);
        Ok(Trainer {
            model,
            adam: ckpt.adam.clone(),
            config: ckpt.train_config.clone(),
            train,
            dev,
            metrics: Vec::new(),
            step: s.step,
            epoch: s.epoch,
            lr: s.lr,
            plateau: s.plateau.clone(),
            stopped: s.stopped,
            rng,
            attempts: 0,
            data_errors: 0,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model_config: self.model.config.clone(),
            train_config: self.config.clone(),
            params: self.model.store.iter().map(|(_, p)| (p.name.clone(), p.value.clone())).collect(),
            adam: self.adam.clone(),
            state: TrainState {
                step: self.step,
                epoch: self.epoch,
                lr: self.lr,
                plateau: self.plateau.clone(),
                stopped: self.stopped,
                rng_seed: self.rng.get_seed(),
                rng_stream: self.rng.get_stream(),
                rng_word_pos: self.rng.get_word_pos(),
            },
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn is_done(&self) -> bool {
        self.stopped
    }

    pub fn best_val_loss(&self) -> f64 {
        self.plateau.best
    }

    /// Draws a training segment triple: aligned mixture and target segments
    /// plus an independent reference segment.
    fn draw(&mut self) -> Result<(usize, Vec<f32>, Vec<f32>, Vec<f32>)> {
        let idx = self.rng.gen_range(0..self.train.examples.len());
        let ex = &self.train.examples[idx];
        let secs = self.config.segment_seconds;
        let mixes = segment(&ex.mix, secs, secs, SegmentMode::Training)?;
        let targets = segment(&ex.target, secs, secs, SegmentMode::Training)?;
        let refs = segment(&ex.reference, secs, secs, SegmentMode::Training)?;
        let k = self.rng.gen_range(0..mixes.len());
        let j = self.rng.gen_range(0..refs.len());
        Ok((
            idx,
            mixes[k].samples().to_vec(),
            refs[j].samples().to_vec(),
            targets[k].samples().to_vec(),
        ))
    }

    fn train_once(&self, idx: usize, mix: &[f32], reference: &[f32], target: &[f32]) -> Result<(f64, Vec<(ParamId, Tensor<f32>)>)> {
        let model = &self.model;
        let mut tape = Tape::new(&model.store);
        let out = model.forward(&mut tape, mix, reference, ForwardOptions::default())?;
        let loss = model.loss(&mut tape, &out, target, self.train.examples[idx].speaker_id)?;
        let grads = tape.backward(loss)?;
        Ok((f64::from(tape.value(loss).data()[0]), grads.params()))
    }

    /// One optimizer step, followed by validation and scheduling when it
    /// closes an epoch.
    pub fn step(&mut self) -> Result<StepReport> {
        if self.stopped {
            return Err(Error::Usage("training has already stopped".into()));
        }
        let (loss, grads) = loop {
            let (idx, mix, reference, target) = self.draw()?;
            self.attempts += 1;
            match self.train_once(idx, &mix, &reference, &target) {
                Ok(r) => break r,
                Err(e @ (Error::Degenerate(_) | Error::TooShort { .. })) => {
                    self.data_errors += 1;
                    if self.attempts >= 10 && self.data_errors as f64 > MAX_SKIP_RATE * self.attempts as f64 {
                        return Err(Error::Data(format!(
                            "{} of {} training draws unusable, last: {e}",
                            self.data_errors, self.attempts
                        )));
                    }
                }
                Err(e) => return Err(e),
            }
        };
        self.adam.step(&mut self.model.store, &grads, self.lr)?;
        self.step += 1;
        let lr_used = self.lr;
        let mut report = StepReport {
            step: self.step,
            train_loss: loss,
            epoch_end: None,
        };
        let mut record = MetricRecord {
            step: self.step,
            epoch: self.epoch,
            lr: lr_used,
            train_loss: loss,
            val_loss: None,
            val_sisdr: None,
        };
        if self.step.is_multiple_of(self.config.steps_per_epoch as u64) {
            self.epoch += 1;
            let v = self.validate()?;
            let action = self.plateau.observe(v.loss, &mut self.lr);
            if action == PlateauAction::Stop || self.epoch >= self.config.max_epochs as u64 {
                self.stopped = true;
            }
            record.epoch = self.epoch;
            record.val_loss = Some(v.loss);
            record.val_sisdr = Some(v.sisdr);
            report.epoch_end = Some(EpochReport {
                epoch: self.epoch,
                validation: v,
                action,
            });
        }
        if self.config.max_steps > 0 && self.step >= self.config.max_steps as u64 {
            self.stopped = true;
        }
        self.metrics.push(record);
        Ok(report)
    }

    /// Full-length validation: mean loss, mean SI-SDR and SI-SDRi of the
    /// small-scale estimate.
    pub fn validate(&self) -> Result<Validation> {
        let limit = match self.config.val_limit {
            0 => self.dev.examples.len(),
            n => n.min(self.dev.examples.len()),
        };
        let (mut loss, mut sisdr, mut sisdri) = (0.0, 0.0, 0.0);
        for ex in &self.dev.examples[..limit] {
            let model = &self.model;
            let mut tape = Tape::new(&model.store);
            let out = model.forward(&mut tape, ex.mix.samples(), ex.reference.samples(), ForwardOptions::default())?;
            let l = model.loss(&mut tape, &out, ex.target.samples(), ex.speaker_id)?;
            loss += f64::from(tape.value(l).data()[0]);
            let est = tape.value(out.estimates[0]).data();
            let s = si_sdr(est, ex.target.samples(), NORM_EPS)?;
            sisdr += s;
            sisdri += s - si_sdr(ex.mix.samples(), ex.target.samples(), NORM_EPS)?;
        }
        let n = limit as f64;
        Ok(Validation {
            loss: loss / n,
            sisdr: sisdr / n,
            sisdri: sisdri / n,
            records: limit,
        })
    }

    /// Trains until the schedule stops or a limit is hit. With `out_dir`,
    /// appends to `metrics.jsonl` and writes `last.ckpt` after every epoch
    /// and `best.ckpt` on improvement.
    pub fn run(&mut self, out_dir: Option<&Path>) -> Result<TrainSummary> {
        let mut log = match out_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
                let p = dir.join("metrics.jsonl");
                Some(
                    std::fs::OpenOptions::new()
                        .create(true)
                        .append(true)
                        .open(&p)
                        .map_err(|e| Error::io(format!("opening {}", p.display()), e))?,
                )
            }
            None => None,
        };
        let mut last_val = None;
        while !self.stopped {
            let r = self.step()?;
            if let Some(f) = log.as_mut() {
                let line = serde_json::to_string(self.metrics.last().unwrap()).expect("metrics serialize");
                writeln!(f, "{line}").map_err(|e| Error::io("writing metrics", e))?;
            }
            if let Some(ep) = r.epoch_end {
                last_val = Some(ep.validation);
                if let Some(dir) = out_dir {
                    let ckpt = self.checkpoint();
                    ckpt.save(&dir.join("last.ckpt"))?;
                    if ep.action == PlateauAction::Improved {
                        ckpt.save(&dir.join("best.ckpt"))?;
                    }
                }
            }
        }
        if let (Some(dir), None) = (out_dir, last_val) {
            self.checkpoint().save(&dir.join("last.ckpt"))?;
        }
        Ok(TrainSummary {
            steps: self.step,
            epochs: self.epoch,
            final_lr: self.lr,
            best_val_loss: self.plateau.best,
            last_validation: last_val,
            out_dir: out_dir.map(Path::to_path_buf),
        })
    }
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub steps: u64,
    pub epochs: u64,
    pub final_lr: f64,
    pub best_val_loss: f64,
    pub last_validation: Option<Validation>,
    pub out_dir: Option<PathBuf>,
}

/// Loads both manifests, builds the model from `train_config.seed`, and
/// runs to completion.
pub fn train(
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    train_manifest: &Path,
    val_manifest: &Path,
    out_dir: &Path,
) -> Result<TrainSummary> {
    let train = Dataset::load(train_manifest, model_config)?;
    let dev = Dataset::load(val_manifest, model_config)?;
    let model = Model::new(model_config.clone(), train_config.seed)?;
    Trainer::new(model, train_config.clone(), train, dev)?.run(Some(out_dir))
}
