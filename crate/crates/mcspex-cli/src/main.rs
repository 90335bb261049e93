use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mcspex::audio::{generate_corpus, read_manifest, read_wav, write_wav, AudioBuffer, GeneratorConfig};
use mcspex::checks;
use mcspex::kvconfig::KvDoc;
use mcspex::numcore::NORM_EPS;
use mcspex::objective::si_sdr;
use mcspex::trainer::{Checkpoint, Dataset, TrainConfig, Trainer};
use mcspex::{count_parameters, Error, Model32, ModelConfig, Result};

#[derive(Parser)]
#[command(name = "mcspex", version, about = "Multi-scale target speaker extraction")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize a two-speaker corpus with train and dev manifests.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        speakers: usize,
        #[arg(long, default_value_t = 200)]
        utts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train on DIR/train.tsv, validating on DIR/dev.tsv.
    Train {
        /// key=value file: `preset` (full or toy), model and training keys.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Ablation row 1..=6; overrides toggles from the config file.
        #[arg(long)]
        variant: Option<u8>,
        /// Continue from a checkpoint instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Extract the reference speaker from a mixture.
    Extract {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        mix: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-record and mean SI-SDR / SI-SDRi over a manifest.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Parameter count of an ablation variant.
    ParamCount {
        #[arg(long, default_value_t = 6)]
        variant: u8,
        /// full or toy.
        #[arg(long, default_value = "full")]
        preset: String,
    },
    /// Finite-difference gradient checks.
    Gradcheck {
        /// One of the check groups, or `all`.
        #[arg(long, default_value = "all")]
        module: String,
    },
}

fn preset(name: &str, variant: u8, num_speakers: usize) -> Result<ModelConfig> {
    match name {
        "full" => Ok(ModelConfig {
            num_speakers,
            ..ModelConfig::full(variant)?
        }),
        "toy" => ModelConfig::toy(variant, num_speakers),
        other => Err(Error::Usage(format!("unknown preset `{other}`; expected full or toy"))),
    }
}

fn num_speakers_in(manifest: &Path) -> Result<usize> {
    let records = read_manifest(manifest)?;
    records
        .iter()
        .map(|r| r.speaker_id + 1)
        .max()
        .ok_or_else(|| Error::Data(format!("{}: empty manifest", manifest.display())))
}

fn load_run_config(path: Option<&Path>, variant: Option<u8>, train_manifest: &Path) -> Result<(ModelConfig, TrainConfig)> {
    let doc = match path {
        Some(p) => KvDoc::load(p)?,
        None => KvDoc::default(),
    };
    let mut known = vec!["preset"];
    known.extend_from_slice(ModelConfig::KEYS);
    known.extend_from_slice(TrainConfig::KEYS);
    doc.reject_unknown(&known)?;
    let mut preset_name = String::from("full");
    doc.set("preset", &mut preset_name)?;
    let mut model = preset(&preset_name, 6, 1)?;
    model.apply_kv(&doc)?;
    if doc.get("num_speakers").is_none() {
        model.num_speakers = num_speakers_in(train_manifest)?;
    }
    if let Some(v) = variant {
        model = model.with_variant(v)?;
    }
    model.validate()?;
    let mut train = TrainConfig::default();
    train.apply_kv(&doc)?;
    train.validate()?;
    Ok((model, train))
}

fn require_dir(dir: &Path) -> Result<()> {
    if dir.is_dir() {
        Ok(())
    } else {
        Err(Error::Usage(format!("data directory {} does not exist", dir.display())))
    }
}

fn train(config: Option<&Path>, data: &Path, out: &Path, variant: Option<u8>, resume: Option<&Path>) -> Result<()> {
    require_dir(data)?;
    let (train_tsv, dev_tsv) = (data.join("train.tsv"), data.join("dev.tsv"));
    let mut trainer = match resume {
        Some(ckpt_path) => {
            let ckpt = Checkpoint::load(ckpt_path)?;
            let train = Dataset::load(&train_tsv, &ckpt.model_config)?;
            let dev = Dataset::load(&dev_tsv, &ckpt.model_config)?;
            Trainer::from_checkpoint(&ckpt, train, dev)?
        }
        None => {
            let (model_cfg, train_cfg) = load_run_config(config, variant, &train_tsv)?;
            let train = Dataset::load(&train_tsv, &model_cfg)?;
            let dev = Dataset::load(&dev_tsv, &model_cfg)?;
            let model = Model32::new(model_cfg, train_cfg.seed)?;
            Trainer::new(model, train_cfg, train, dev)?
        }
    };
    for msg in trainer.train.skipped.iter().chain(&trainer.dev.skipped) {
        eprintln!("skipped {msg}");
    }
    eprintln!(
        "training {} parameters on {} records, validating on {}",
        trainer.model.param_count().total,
        trainer.train.examples.len(),
        trainer.dev.examples.len()
    );
    let summary = trainer.run(Some(out))?;
    println!(
        "steps {} epochs {} final lr {:e} best val loss {:.4}",
        summary.steps, summary.epochs, summary.final_lr, summary.best_val_loss
    );
    if let Some(v) = summary.last_validation {
        println!("last validation: SI-SDR {:.3} dB, SI-SDRi {:.3} dB", v.sisdr, v.sisdri);
    }
    Ok(())
}

fn extract(ckpt: &Path, mix: &Path, reference: &Path, out: &Path) -> Result<()> {
    let model = Checkpoint::load(ckpt)?.to_model()?;
    let mix: AudioBuffer<f32> = read_wav(mix)?;
    let reference: AudioBuffer<f32> = read_wav(reference)?;
    mix.require_pipeline_rate()?;
    reference.require_pipeline_rate()?;
    let est = model.infer(mix.samples(), reference.samples())?;
    write_wav(out, &AudioBuffer::at_8k(est)?)
}

fn evaluate(ckpt: &Path, manifest: &Path) -> Result<()> {
    let model = Checkpoint::load(ckpt)?.to_model()?;
    let data = Dataset::load_for_eval(manifest, &model.config)?;
    for msg in &data.skipped {
        eprintln!("skipped {msg}");
    }
    println!("{:<48} {:>10} {:>10}", "record", "SI-SDR", "SI-SDRi");
    let (mut total, mut total_i) = (0.0, 0.0);
    for ex in &data.examples {
        let est = model.infer(ex.mix.samples(), ex.reference.samples())?;
        let s = si_sdr(&est, ex.target.samples(), NORM_EPS)?;
        let si = s - si_sdr(ex.mix.samples(), ex.target.samples(), NORM_EPS)?;
        total += s;
        total_i += si;
        println!("{:<48} {s:>10.3} {si:>10.3}", ex.name);
    }
    let n = data.examples.len() as f64;
    println!("{:<48} {:>10.3} {:>10.3}", "mean", total / n, total_i / n);
    Ok(())
}

fn param_count(variant: u8, preset_name: &str) -> Result<()> {
    let cfg = match preset_name {
        "toy" => ModelConfig::toy(variant, 8)?,
        _ => preset(preset_name, variant, 291)?,
    };
    let count = count_parameters(&cfg)?;
    for (part, n) in &count.breakdown {
        println!("{part:<12} {n:>10}");
    }
    println!("{:<12} {:>10}", "total", count.total);
    Ok(())
}

fn gradcheck(module: &str) -> Result<()> {
    let outcomes = checks::run(module, &[0, 1, 2])?;
    let mut failed = 0;
    for o in &outcomes {
        let verdict = if o.report.pass { "pass" } else { "FAIL" };
        println!(
            "{verdict} {:<48} max_rel_err {:.3e} (tol {:e}, {} elements, worst at {})",
            o.name, o.report.max_rel_err, o.tol, o.report.checked, o.report.worst
        );
        failed += usize::from(!o.report.pass);
    }
    if failed > 0 {
        return Err(Error::Numeric(format!("{failed} of {} gradient checks failed", outcomes.len())));
    }
    println!("all {} gradient checks passed", outcomes.len());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::GenData {
            out,
            speakers,
            utts,
            seed,
        } => {
            let cfg = GeneratorConfig {
                speakers,
                utts,
                seed,
                ..Default::default()
            };
            let s = generate_corpus(&out, &cfg)?;
            println!(
                "wrote {} train and {} dev mixtures for {} speakers under {}",
                s.train_records,
                s.dev_records,
                s.speakers.len(),
                out.display()
            );
            Ok(())
        }
        Cmd::Train {
            config,
            data,
            out,
            variant,
            resume,
        } => train(config.as_deref(), &data, &out, variant, resume.as_deref()),
        Cmd::Extract {
            ckpt,
            mix,
            reference,
            out,
        } => extract(&ckpt, &mix, &reference, &out),
        Cmd::Evaluate { ckpt, manifest } => evaluate(&ckpt, &manifest),
        Cmd::ParamCount { variant, preset } => param_count(variant, &preset),
        Cmd::Gradcheck { module } => gradcheck(&module),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
