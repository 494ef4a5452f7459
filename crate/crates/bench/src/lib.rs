//! Fixtures shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rcn_core::data::synth_generate;
use rcn_core::training::init_params;
use rcn_core::{Architecture, Config, ModelParams, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Toy architecture with freshly initialised parameters.
pub fn toy_model() -> (Architecture, ModelParams) {
    let arch = Architecture::new(&Config::toy()).expect("toy config is valid");
    let params = init_params(&arch, &mut rng(0));
    (arch, params)
}

/// Two toy-resolution sequences of the configured length.
pub fn toy_sequences(arch: &Architecture) -> (Vec<Tensor>, Vec<Tensor>) {
    let cfg = &arch.config;
    let ds = synth_generate(2, cfg.seq_len, (cfg.height, cfg.width), 0).expect("valid synth size");
    let frames = |i: usize| ds.samples[i].frames.clone();
    (frames(0), frames(1))
}
