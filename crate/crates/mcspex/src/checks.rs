//! Named finite-difference gradient checks over every differentiable
//! operation and composite block, evaluated in f64.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{ConditioningMode, ModelConfig};
use crate::error::{Error, Result};
use crate::extractor::{Consm, TcnBlock};
use crate::frontend::{Fuser, MultiScaleFeatures};
use crate::maskgen::MaskGenerator;
use crate::model::{ForwardOptions, Model};
use crate::nn::Builder;
use crate::numcore::{gradcheck_with_params, Conv1dGeom, GradCheckReport, ParamStore, Tape, Tensor, VarId};
use crate::objective::{si_sdr_loss, LossWeights};
use crate::spkenc::ResBlock;

pub const EPS: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
pub const PIPELINE_TOL: f64 = 1e-3;
const KINK_MARGIN: f64 = 1e-4;

/// Selectable check groups.
pub const MODULES: &[&str] = &[
    "ops",
    "scalefuser",
    "consm",
    "tcn",
    "resnet",
    "scaleintermg",
    "mask_branches",
    "sisdr_loss",
    "ce_loss",
    "pipeline",
];

#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub name: String,
    pub tol: f64,
    pub report: GradCheckReport,
}

type Closure<'a> = Box<dyn Fn(&mut Tape<'_, f64>, &[VarId]) -> Result<VarId> + 'a>;

fn rand_t(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::uniform(shape, 1.0, rng)
}

/// Values bounded away from zero so ReLU-type kinks stay out of reach of
/// the finite-difference step.
fn off_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.1..1.0);
            if rng.gen::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches")
}

/// Fixed random weighted sum; a plain sum is degenerate for normalized
/// outputs, whose gradient then vanishes identically.
fn project(tape: &mut Tape<'_, f64>, y: VarId, seed: u64) -> Result<VarId> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let w = rand_t(tape.shape(y), &mut rng);
    tape.weighted_sum(y, w)
}

fn randomize(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng, scale: f64) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for v in store.value_mut(id).data_mut() {
            *v = rng.gen_range(-scale..scale);
        }
    }
}

fn jitter(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng, scale: f64) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for v in store.value_mut(id).data_mut() {
            *v += rng.gen_range(-scale..scale);
        }
    }
}

fn run_one(
    out: &mut Vec<CheckOutcome>,
    name: String,
    store: &ParamStore<f64>,
    inputs: &[Tensor<f64>],
    tol: f64,
    f: Closure<'_>,
) -> Result<()> {
    let report = gradcheck_with_params(store, inputs, f, EPS, tol)?;
    out.push(CheckOutcome { name, tol, report });
    Ok(())
}

fn tiny_config(mode: ConditioningMode, scalefuser: bool, intermg: bool) -> ModelConfig {
    let mut c = ModelConfig::toy(6, 3).expect("toy preset is valid");
    c.filter_lengths = [4, 8, 16];
    c.stride = 2;
    c.filters = 4;
    c.embedding_dim = 4;
    c.resnet_blocks = 1;
    c.tcn_groups = 1;
    c.tcn_blocks = 2;
    c.tcn_width = 6;
    c.fuser_channels = vec![3, 2, 1];
    c.fuser_kernels = vec![3, 3];
    c.mg_channels = vec![1, 2, 3];
    c.mg_kernels = vec![3, 3];
    c.toggles.consm_mode = mode;
    c.toggles.use_scalefuser = scalefuser;
    c.toggles.share_fuser_weights = scalefuser;
    c.toggles.use_scaleintermg = intermg;
    c
}

fn ops(out: &mut Vec<CheckOutcome>, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let empty = ParamStore::new();
    let mut add = |name: &str, inputs: Vec<Tensor<f64>>, f: Closure<'_>| {
        run_one(out, format!("op {name} (seed {seed})"), &empty, &inputs, TOL, f)
    };
    let geom = Conv1dGeom {
        stride: 2,
        dilation: 2,
        padding: 1,
        groups: 1,
    };
    add(
        "conv1d",
        vec![rand_t(&[2, 9], &mut rng), rand_t(&[3, 2, 3], &mut rng), rand_t(&[3], &mut rng)],
        Box::new(move |t, v| {
            let y = t.conv1d(v[0], v[1], Some(v[2]), geom)?;
            project(t, y, seed)
        }),
    )?;
    let depthwise = Conv1dGeom {
        groups: 4,
        ..Conv1dGeom::same(3, 2)
    };
    add(
        "conv1d_depthwise",
        vec![rand_t(&[4, 7], &mut rng), rand_t(&[4, 1, 3], &mut rng), rand_t(&[4], &mut rng)],
        Box::new(move |t, v| {
            let y = t.conv1d(v[0], v[1], Some(v[2]), depthwise)?;
            project(t, y, seed)
        }),
    )?;
    add(
        "conv_transpose1d",
        vec![rand_t(&[2, 4], &mut rng), rand_t(&[2, 3, 5], &mut rng), rand_t(&[3], &mut rng)],
        Box::new(move |t, v| {
            let y = t.conv_transpose1d(v[0], v[1], Some(v[2]), 2, 1)?;
            project(t, y, seed)
        }),
    )?;
    add(
        "conv2d",
        vec![rand_t(&[2, 4, 5], &mut rng), rand_t(&[3, 2, 3, 3], &mut rng), rand_t(&[3], &mut rng)],
        Box::new(move |t, v| {
            let y = t.conv2d_same(v[0], v[1], Some(v[2]))?;
            project(t, y, seed)
        }),
    )?;
    for axis in 0..3 {
        let shape = [3, 4, 5];
        add(
            &format!("layer_norm axis {axis}"),
            vec![rand_t(&shape, &mut rng), rand_t(&[shape[axis]], &mut rng), rand_t(&[shape[axis]], &mut rng)],
            Box::new(move |t, v| {
                let y = t.layer_norm(v[0], axis, v[1], v[2], 1e-8)?;
                project(t, y, seed)
            }),
        )?;
    }
    add(
        "global_layer_norm",
        vec![rand_t(&[3, 5], &mut rng), rand_t(&[3], &mut rng), rand_t(&[3], &mut rng)],
        Box::new(move |t, v| {
            let y = t.global_layer_norm(v[0], v[1], v[2], 1e-8)?;
            project(t, y, seed)
        }),
    )?;
    add(
        "relu",
        vec![off_zero(&[3, 4], &mut rng)],
        Box::new(move |t, v| {
            let y = t.relu(v[0])?;
            project(t, y, seed)
        }),
    )?;
    add(
        "elu",
        vec![off_zero(&[3, 4], &mut rng)],
        Box::new(move |t, v| {
            let y = t.elu(v[0], 1.0)?;
            project(t, y, seed)
        }),
    )?;
    add(
        "prelu",
        vec![off_zero(&[3, 4], &mut rng), rand_t(&[3], &mut rng)],
        Box::new(move |t, v| {
            let y = t.prelu(v[0], v[1])?;
            project(t, y, seed)
        }),
    )?;
    add(
        "linear",
        vec![rand_t(&[4], &mut rng), rand_t(&[3, 4], &mut rng), rand_t(&[3], &mut rng)],
        Box::new(move |t, v| {
            let y = t.linear(v[0], v[1], Some(v[2]))?;
            project(t, y, seed)
        }),
    )?;
    add(
        "mean_pool_time",
        vec![rand_t(&[3, 6], &mut rng)],
        Box::new(move |t, v| {
            let y = t.mean_pool_time(v[0])?;
            project(t, y, seed)
        }),
    )?;
    add(
        "add_mul_scale",
        vec![rand_t(&[2, 3], &mut rng), rand_t(&[2, 3], &mut rng)],
        Box::new(move |t, v| {
            let a = t.add(v[0], v[1])?;
            let m = t.mul(a, v[1])?;
            let y = t.scale(m, -1.5)?;
            project(t, y, seed)
        }),
    )?;
    add(
        "channel_affine",
        vec![rand_t(&[3, 4], &mut rng), rand_t(&[3], &mut rng), rand_t(&[3], &mut rng)],
        Box::new(move |t, v| {
            let y = t.channel_affine(v[0], v[1], v[2])?;
            project(t, y, seed)
        }),
    )?;
    add(
        "broadcast_concat_select",
        vec![rand_t(&[2, 4], &mut rng), rand_t(&[3], &mut rng)],
        Box::new(move |t, v| {
            let e = t.broadcast_time(v[1], 4)?;
            let c = t.concat(&[v[0], e])?;
            let s = t.select(c, 3)?;
            let a = project(t, c, seed)?;
            let b = project(t, s, seed + 1)?;
            t.add(a, b)
        }),
    )?;
    add(
        "reshape_fit_length",
        vec![rand_t(&[2, 6], &mut rng)],
        Box::new(move |t, v| {
            let r = t.reshape(v[0], &[3, 4])?;
            let short = t.fit_length(r, 3)?;
            let long = t.fit_length(r, 6)?;
            let a = project(t, short, seed)?;
            let b = project(t, long, seed + 1)?;
            t.add(a, b)
        }),
    )?;
    let target: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
    add(
        "si_sdr",
        vec![rand_t(&[16], &mut rng)],
        Box::new(move |t, v| t.si_sdr(v[0], &target, 1e-8)),
    )?;
    add(
        "cross_entropy",
        vec![rand_t(&[5], &mut rng)],
        Box::new(move |t, v| t.cross_entropy(v[0], 2)),
    )?;
    Ok(())
}

fn blocks(out: &mut Vec<CheckOutcome>, module: &str, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = tiny_config(ConditioningMode::Consm, true, true);
    let (c, t_len, d) = (cfg.filters, 6, cfg.embedding_dim);
    let tag = |name: &str| format!("{name} (seed {seed})");
    match module {
        "scalefuser" => {
            let mut store = ParamStore::new();
            let fuser = Fuser::new(&mut Builder::new(&mut store, &mut rng), &cfg)?;
            randomize(&mut store, &mut rng, 0.5);
            let inputs: Vec<_> = (0..3).map(|_| rand_t(&[c, t_len], &mut rng)).collect();
            run_one(
                out,
                tag("scalefuser"),
                &store,
                &inputs,
                TOL,
                Box::new(move |t, v| {
                    let y = fuser.forward(t, &MultiScaleFeatures { maps: [v[0], v[1], v[2]] })?;
                    project(t, y, seed)
                }),
            )
        }
        "consm" => {
            for mode in [ConditioningMode::Consm, ConditioningMode::ConditionalLn, ConditioningMode::Film] {
                let mut store = ParamStore::new();
                let block = Consm::new(&mut Builder::new(&mut store, &mut rng), mode, d, c)?;
                randomize(&mut store, &mut rng, 0.8);
                let inputs = vec![rand_t(&[c, t_len], &mut rng), rand_t(&[d], &mut rng)];
                run_one(
                    out,
                    tag(&format!("consm mode {mode}")),
                    &store,
                    &inputs,
                    TOL,
                    Box::new(move |t, v| {
                        let y = block.forward(t, v[0], v[1])?;
                        project(t, y, seed)
                    }),
                )?;
            }
            Ok(())
        }
        "tcn" => {
            for takes in [false, true] {
                let mut store = ParamStore::new();
                let block = TcnBlock::new(&mut Builder::new(&mut store, &mut rng), &cfg, 2, takes)?;
                randomize(&mut store, &mut rng, 0.5);
                let inputs = vec![rand_t(&[c, t_len], &mut rng), rand_t(&[d], &mut rng)];
                run_one(
                    out,
                    tag(&format!("tcn block{}", if takes { " with embedding" } else { "" })),
                    &store,
                    &inputs,
                    TOL,
                    Box::new(move |t, v| {
                        let y = block.forward(t, v[0], Some(v[1]))?;
                        project(t, y, seed)
                    }),
                )?;
            }
            Ok(())
        }
        "resnet" => {
            let mut store = ParamStore::new();
            let block = ResBlock::new(&mut Builder::new(&mut store, &mut rng), d)?;
            randomize(&mut store, &mut rng, 0.5);
            let inputs = vec![rand_t(&[d, t_len], &mut rng)];
            run_one(
                out,
                tag("resnet block"),
                &store,
                &inputs,
                TOL,
                Box::new(move |t, v| {
                    let y = block.forward(t, v[0])?;
                    project(t, y, seed)
                }),
            )
        }
        "scaleintermg" | "mask_branches" => {
            let cfg = tiny_config(ConditioningMode::Consm, true, module == "scaleintermg");
            let mut store = ParamStore::new();
            let mg = MaskGenerator::new(&mut Builder::new(&mut store, &mut rng), &cfg)?;
            randomize(&mut store, &mut rng, 0.5);
            let inputs = vec![rand_t(&[c, t_len], &mut rng)];
            run_one(
                out,
                tag(module),
                &store,
                &inputs,
                TOL,
                Box::new(move |t, v| {
                    let m = mg.forward(t, v[0])?;
                    let mut acc = project(t, m.masks[0], seed)?;
                    for (i, &mask) in m.masks.iter().enumerate().skip(1) {
                        let p = project(t, mask, seed + i as u64)?;
                        acc = t.add(acc, p)?;
                    }
                    Ok(acc)
                }),
            )
        }
        "sisdr_loss" => {
            let n = 24;
            let target: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let inputs: Vec<_> = (0..3).map(|_| rand_t(&[1, n], &mut rng)).collect();
            let weights = LossWeights::default();
            run_one(
                out,
                tag("sisdr loss"),
                &ParamStore::new(),
                &inputs,
                TOL,
                Box::new(move |t, v| si_sdr_loss(t, [v[0], v[1], v[2]], &target, &weights)),
            )
        }
        "ce_loss" => {
            let inputs = vec![rand_t(&[8], &mut rng)];
            let class = rng.gen_range(0..8);
            run_one(
                out,
                tag("cross-entropy loss"),
                &ParamStore::new(),
                &inputs,
                TOL,
                Box::new(move |t, v| t.cross_entropy(v[0], class)),
            )
        }
        "pipeline" => {
            for (variant, mut cfg) in [
                (6, tiny_config(ConditioningMode::Consm, true, true)),
                (1, tiny_config(ConditioningMode::None, false, false)),
            ] {
                cfg.filters = 8;
                cfg.embedding_dim = 8;
                cfg.tcn_width = 8;
                let len = (16 - 1) * cfg.stride + cfg.filter_lengths[0];
                let wave = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect() };
                // Redraw until every ReLU/PReLU input clears the step by a
                // wide margin; a kink inside the stencil is not a gradient bug.
                let (model, mix, reference, speaker) = loop {
                    let mut model = Model::<f64>::new(cfg.clone(), rng.gen())?;
                    jitter(&mut model.store, &mut rng, 0.1);
                    let (mix, reference) = (wave(&mut rng), wave(&mut rng));
                    let speaker = rng.gen_range(0..cfg.num_speakers);
                    let mut tape = Tape::new(&model.store);
                    model.forward(&mut tape, &mix, &reference, ForwardOptions::default())?;
                    if tape.kink_margin().is_none_or(|m| m > KINK_MARGIN) {
                        break (model, mix, reference, speaker);
                    }
                };
                let m = &model;
                run_one(
                    out,
                    tag(&format!("full tiny pipeline, variant {variant}")),
                    &model.store,
                    &[],
                    PIPELINE_TOL,
                    Box::new(move |t, _| {
                        // Projections of the estimates instead of the SI-SDR loss:
                        // mean removal leaves the decoder bias with an exactly zero
                        // gradient, which a relative error cannot judge.
                        let fwd = m.forward(t, &mix, &reference, ForwardOptions::default())?;
                        let mut acc = t.cross_entropy(fwd.logits, speaker)?;
                        for (i, &est) in fwd.estimates.iter().enumerate() {
                            let p = project(t, est, seed + 100 + i as u64)?;
                            acc = t.add(acc, p)?;
                        }
                        Ok(acc)
                    }),
                )?;
            }
            Ok(())
        }
        other => Err(Error::Usage(format!("unknown gradcheck module `{other}`"))),
    }
}

/// Runs the named group, or every group for `"all"`, over `seeds`.
pub fn run(module: &str, seeds: &[u64]) -> Result<Vec<CheckOutcome>> {
    let selected: Vec<&str> = match module {
        "all" => MODULES.to_vec(),
        m if MODULES.contains(&m) => vec![m],
        other => {
            return Err(Error::Usage(format!(
                "unknown gradcheck module `{other}`; expected one of all, {}",
                MODULES.join(", ")
            )))
        }
    };
    let mut out = Vec::new();
    for m in selected {
        for &seed in seeds {
            if m == "ops" {
                ops(&mut out, seed)?;
            } else {
                blocks(&mut out, m, seed)?;
            }
        }
    }
    Ok(out)
}
