mod common;

use common::small;
use mcspex::extractor::{Consm, Extractor, TcnBlock};
use mcspex::nn::Builder;
use mcspex::numcore::{ParamStore, Tape, Tensor, NORM_EPS};
use mcspex::{ConditioningMode, Error, Model64};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const C: usize = 6;
const D: usize = 4;
const T: usize = 9;

struct Instance {
    store: ParamStore<f64>,
    block: Consm,
}

fn consm(mode: ConditioningMode) -> Instance {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let block = Consm::new(&mut Builder::new(&mut store, &mut rng), mode, D, C).unwrap();
    Instance { store, block }
}

impl Instance {
    /// Makes the maps emit exactly `alpha` and `beta` for any embedding.
    fn set_maps(&mut self, alpha: &[f64], beta: &[f64]) {
        *self.store.value_mut(self.block.scale_map.w) = Tensor::zeros(&[C, D]);
        *self.store.value_mut(self.block.scale_map.b) = Tensor::from_vec(alpha.to_vec());
        *self.store.value_mut(self.block.bias_map.w) = Tensor::zeros(&[C, D]);
        *self.store.value_mut(self.block.bias_map.b) = Tensor::from_vec(beta.to_vec());
    }

    fn run(&self, s: &Tensor<f64>, e: &[f64]) -> Tensor<f64> {
        let mut tape = Tape::new(&self.store);
        let sv = tape.constant(s.clone());
        let ev = tape.constant(Tensor::from_vec(e.to_vec()));
        let y = self.block.forward(&mut tape, sv, ev).unwrap();
        tape.value(y).clone()
    }
}

/// Per-frame layer norm over channels, written out loop by loop.
fn ln_oracle(s: &Tensor<f64>) -> Tensor<f64> {
    let (c, t) = (s.dim(0), s.dim(1));
    let mut out = s.clone();
    for j in 0..t {
        let col: Vec<f64> = (0..c).map(|i| s.data()[i * t + j]).collect();
        let mean = col.iter().sum::<f64>() / c as f64;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
        for i in 0..c {
            out.data_mut()[i * t + j] = (col[i] - mean) / (var + NORM_EPS).sqrt();
        }
    }
    out
}

fn features(seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..C * T).map(|_| rng.gen_range(-3.0..3.0) + 0.5).collect();
    Tensor::new(vec![C, T], data).unwrap()
}

fn embedding(seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..D).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

#[test]
fn identity_maps_reduce_consm_and_conditional_ln_to_layer_norm() {
    let s = features(1);
    let e = embedding(2);
    for mode in [ConditioningMode::Consm, ConditioningMode::ConditionalLn] {
        let inst = consm(mode);
        assert!(inst.run(&s, &e).max_abs_diff(&ln_oracle(&s)) < 1e-12, "{mode}");
    }
}

#[test]
fn identity_film_is_exact_identity() {
    let s = features(3);
    assert_eq!(consm(ConditioningMode::Film).run(&s, &embedding(4)).data(), s.data());
}

#[test]
fn zero_scale_leaves_only_the_norm_bias() {
    let mut inst = consm(ConditioningMode::Consm);
    // Every frame becomes the same constant vector, which normalizes to zero.
    inst.set_maps(&[0.0; C], &[0.7; C]);
    let nb: Vec<f64> = (0..C).map(|i| 0.1 * i as f64).collect();
    let bias_id = inst.block.norm.as_ref().unwrap().bias;
    *inst.store.value_mut(bias_id) = Tensor::from_vec(nb.clone());
    let y = inst.run(&features(5), &embedding(6));
    for i in 0..C {
        for j in 0..T {
            assert!((y.data()[i * T + j] - nb[i]).abs() < 1e-9);
        }
    }
}

fn discriminating_instance() -> (Vec<f64>, Vec<f64>) {
    let alpha = vec![2.0, 0.5, -1.0, 1.5, 0.25, 3.0];
    let beta = vec![0.3, -0.2, 0.1, 0.0, 0.5, -0.4];
    (alpha, beta)
}

#[test]
fn the_three_orders_are_pairwise_distinct() {
    let (alpha, beta) = discriminating_instance();
    let s = features(7);
    let outs: Vec<Tensor<f64>> = [ConditioningMode::Consm, ConditioningMode::ConditionalLn, ConditioningMode::Film]
        .into_iter()
        .map(|mode| {
            let mut inst = consm(mode);
            inst.set_maps(&alpha, &beta);
            inst.run(&s, &embedding(8))
        })
        .collect();
    for a in 0..3 {
        for b in a + 1..3 {
            assert!(outs[a].max_abs_diff(&outs[b]) > 1e-3, "{a} vs {b}");
        }
    }
}

/// Zero mean and unit variance per frame, and also zero mean within each of
/// the two channel halves so that `alpha * s` stays standardized for
/// `alpha` in {+1, -1} constant on each half.
fn standardized(seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = C / 2;
    let mut data = vec![0.0; C * T];
    for j in 0..T {
        let mut col: Vec<f64> = (0..C).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for half in [0..h, h..C] {
            let m = col[half.clone()].iter().sum::<f64>() / h as f64;
            col[half].iter_mut().for_each(|v| *v -= m);
        }
        let rms = (col.iter().map(|v| v * v).sum::<f64>() / C as f64).sqrt();
        for i in 0..C {
            data[i * T + j] = col[i] / rms;
        }
    }
    Tensor::new(vec![C, T], data).unwrap()
}

#[test]
fn consm_equals_conditional_ln_on_standardized_input_without_bias() {
    let s = standardized(9);
    let alpha: Vec<f64> = (0..C).map(|i| if i < C / 2 { 1.0 } else { -1.0 }).collect();
    let run = |mode| {
        let mut inst = consm(mode);
        inst.set_maps(&alpha, &[0.0; C]);
        inst.run(&s, &embedding(10))
    };
    let (a, b) = (run(ConditioningMode::Consm), run(ConditioningMode::ConditionalLn));
    assert!(a.max_abs_diff(&b) < 1e-12, "{}", a.max_abs_diff(&b));
    // Not a trivial instance: the output is not the input itself.
    assert!(a.max_abs_diff(&s) > 0.5);
}

#[test]
fn consm_needs_a_modulating_mode() {
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let r = Consm::new(&mut Builder::new(&mut store, &mut rng), ConditioningMode::None, D, C);
    assert!(matches!(r, Err(Error::Config(_))));
}

#[test]
fn zero_out_conv_makes_tcn_block_the_identity() {
    let cfg = small(6);
    for dilation in [1, 2, 4, 8, 16, 32, 64, 128] {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(dilation as u64);
        let blk = TcnBlock::new(&mut Builder::new(&mut store, &mut rng), &cfg, dilation, false).unwrap();
        *store.value_mut(blk.out_conv.w) = Tensor::zeros(store.value(blk.out_conv.w).shape());
        if let Some(b) = blk.out_conv.b {
            *store.value_mut(b) = Tensor::zeros(store.value(b).shape());
        }
        let x = Tensor::uniform(&[cfg.filters, 40], 1.0, &mut rng);
        let mut tape = Tape::new(&store);
        let xv = tape.constant(x.clone());
        let y = blk.forward(&mut tape, xv, None).unwrap();
        assert_eq!(tape.value(y).data(), x.data());
    }
}

#[test]
fn dilated_depthwise_stack_spans_511_frames() {
    let mut cfg = small(6);
    cfg.tcn_groups = 1;
    cfg.tcn_blocks = 8;
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let ex = Extractor::new(&mut Builder::new(&mut store, &mut rng), &cfg).unwrap();
    let blocks = &ex.groups[0].blocks;
    assert_eq!(blocks.iter().map(|b| b.dilation).collect::<Vec<_>>(), [1, 2, 4, 8, 16, 32, 64, 128]);
    let h = cfg.tcn_width;
    let len = 1201;
    let mut tape = Tape::new(&store);
    let mut impulse = Tensor::zeros(&[h, len]);
    for c in 0..h {
        impulse.data_mut()[c * len + len / 2] = 1.0;
    }
    let mut x = tape.constant(impulse);
    for b in blocks {
        // Positive weights so no tap cancels another.
        let w = tape.constant(Tensor::full(store.value(b.depthwise.w).shape(), 1.0));
        x = tape.conv1d(x, w, None, b.depthwise.geom).unwrap();
        assert_eq!(tape.shape(x), &[h, len]);
    }
    let row = &tape.value(x).data()[..len];
    let support = row.iter().filter(|v| **v != 0.0).count();
    assert_eq!(support, 1 + 2 * (256 - 1));
    let first = row.iter().position(|v| *v != 0.0).unwrap();
    assert_eq!(first, len / 2 - 255);
}

#[test]
fn baseline_injects_embedding_by_concatenation_only() {
    let m = Model64::new(small(1), 0).unwrap();
    let names: Vec<String> = m.store.iter().map(|(_, p)| p.name.clone()).collect();
    assert!(!names.iter().any(|n| n.contains("consm")));
    let cfg = &m.config;
    for g in &m.net.extractor.groups {
        assert!(g.consm.is_none());
        assert!(g.blocks[0].takes_embedding);
        assert!(g.blocks[1..].iter().all(|b| !b.takes_embedding));
        assert_eq!(m.store.value(g.blocks[0].in_conv.w).shape()[1], cfg.filters + cfg.embedding_dim);
    }
    let m = Model64::new(small(6), 0).unwrap();
    for g in &m.net.extractor.groups {
        assert!(g.consm.is_some());
        assert!(g.blocks.iter().all(|b| !b.takes_embedding));
    }
}

#[test]
fn zero_groups_is_a_config_error() {
    let mut cfg = small(6);
    cfg.tcn_groups = 0;
    assert!(matches!(Model64::new(cfg, 0), Err(Error::Config(_))));
}

fn randomized_extractor(mode: ConditioningMode, seed: u64) -> (ParamStore<f64>, Extractor, usize) {
    let mut cfg = small(6);
    cfg.toggles.consm_mode = mode;
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ex = Extractor::new(&mut Builder::new(&mut store, &mut rng), &cfg).unwrap();
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for v in store.value_mut(id).data_mut() {
            *v += rng.gen_range(-0.3..0.3);
        }
    }
    (store, ex, cfg.embedding_dim)
}

#[test]
fn different_embeddings_give_different_outputs() {
    for mode in [ConditioningMode::Consm, ConditioningMode::None, ConditioningMode::Film, ConditioningMode::ConditionalLn] {
        let (store, ex, d) = randomized_extractor(mode, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = Tensor::uniform(&[8, 20], 1.0, &mut rng);
        let out = |e: Tensor<f64>| {
            let mut tape = Tape::new(&store);
            let (sv, ev) = (tape.constant(s.clone()), tape.constant(e));
            let y = ex.forward(&mut tape, sv, ev).unwrap();
            assert_eq!(tape.shape(y), &[8, 20]);
            tape.value(y).clone()
        };
        let a = out(Tensor::uniform(&[d], 1.0, &mut rng));
        let b = out(Tensor::uniform(&[d], 1.0, &mut rng));
        assert!(a.max_abs_diff(&b) > 1e-6, "{mode}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn consm_is_pointwise_in_time(seed in any::<u64>(), t in 0usize..T, other in 0usize..T, mode_ix in 0usize..3) {
        prop_assume!(t != other);
        let mode = [ConditioningMode::Consm, ConditioningMode::ConditionalLn, ConditioningMode::Film][mode_ix];
        let mut inst = consm(mode);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let alpha: Vec<f64> = (0..C).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let beta: Vec<f64> = (0..C).map(|_| rng.gen_range(-1.0..1.0)).collect();
        inst.set_maps(&alpha, &beta);
        let s = features(seed);
        let mut zeroed = s.clone();
        for i in 0..C {
            zeroed.data_mut()[i * T + other] = 0.0;
        }
        let e = embedding(seed ^ 1);
        let (a, b) = (inst.run(&s, &e), inst.run(&zeroed, &e));
        for i in 0..C {
            prop_assert_eq!(a.data()[i * T + t], b.data()[i * T + t]);
        }
    }
}
