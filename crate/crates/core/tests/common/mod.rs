//! Helpers shared by the integration tests and the acceptance target.
#![allow(dead_code)]

pub mod e2e;
pub mod gradcheck;
pub mod oracles;
pub mod suites;

use minimaxad::model::{ModelConfig, StageDepth};
use ndarray::{Array3, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform4(rng: &mut ChaCha8Rng, shape: (usize, usize, usize, usize), lo: f64, hi: f64) -> Array4<f64> {
    Array4::from_shape_fn(shape, |_| rng.gen_range(lo..hi))
}

pub fn uniform3(rng: &mut ChaCha8Rng, shape: (usize, usize, usize), lo: f64, hi: f64) -> Array3<f64> {
    Array3::from_shape_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Smallest valid architecture: 32×32 inputs, channels 4/8/16.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        stage_depths: vec![
            StageDepth { lark: 0, smak: 1 },
            StageDepth { lark: 1, smak: 0 },
            StageDepth { lark: 1, smak: 0 },
        ],
        stage_channels: vec![4, 8, 16],
        bottleneck_depth: 1,
        input_resolution: (32, 32),
        lark_kernel: 13,
        expansion: 2,
    }
}
