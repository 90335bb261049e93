#![allow(dead_code)]

use mcspex::ModelConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A toy configuration shrunk further so whole-model tests stay fast.
pub fn small(variant: u8) -> ModelConfig {
    let mut c = ModelConfig::toy(variant, 4).unwrap();
    c.filters = 8;
    c.embedding_dim = 6;
    c.resnet_blocks = 1;
    c.tcn_groups = 2;
    c.tcn_blocks = 3;
    c.tcn_width = 12;
    c.fuser_channels = vec![3, 4, 1];
    c.fuser_kernels = vec![3, 3];
    c.mg_channels = vec![1, 4, 3];
    c.mg_kernels = vec![3, 3];
    c
}

pub fn noise<T: mcspex::Scalar>(len: usize, seed: u64) -> Vec<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| T::from_f64_lossy(rng.gen_range(-0.5..0.5))).collect()
}

/// Three speakers, eight one-second utterances each.
pub fn tiny_corpus(dir: &std::path::Path) -> mcspex::audio::CorpusSummary {
    let cfg = mcspex::audio::GeneratorConfig {
        speakers: 3,
        utts: 24,
        seed: 7,
        duration_s: 1.0,
        ..Default::default()
    };
    mcspex::audio::generate_corpus(dir, &cfg).unwrap()
}
