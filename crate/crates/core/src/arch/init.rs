use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::weight_manifest;
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::io::WeightStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FanMode {
    /// `in_c * kh * kw` for a `(out_c, in_c, kh, kw)` kernel.
    In,
    /// `out_c * kh * kw`.
    Out,
}

impl FanMode {
    pub fn fan(self, shape: [usize; 4]) -> usize {
        let receptive = shape[2] * shape[3];
        match self {
            FanMode::In => shape[1] * receptive,
            FanMode::Out => shape[0] * receptive,
        }
    }
}

/// Normal samples with standard deviation `sqrt(2 / fan)`.
pub fn kaiming_init(shape: [usize; 4], mode: FanMode, seed: u64) -> Result<Tensor> {
    let fan = mode.fan(shape);
    if fan == 0 {
        return Err(Error::Config(format!("zero fan for shape {shape:?}")));
    }
    let normal = Normal::new(0.0, (2.0 / fan as f64).sqrt()).expect("positive std");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = shape.iter().product();
    let data = (0..count).map(|_| normal.sample(&mut rng) as f32).collect();
    Tensor::new(shape, data)
}

/// Fresh weights for `config`: Kaiming (fan-in) kernels and zero biases.
/// Each tensor draws from its own stream seeded off `seed`.
pub fn init_weights(config: &ModelConfig, seed: u64) -> Result<WeightStore> {
    config.validate()?;
    let mut seeds = ChaCha8Rng::seed_from_u64(seed);
    let mut store = WeightStore::new();
    for (name, shape) in weight_manifest(config) {
        let tensor_seed = seeds.next_u64();
        let tensor = if name.ends_with(".bias") {
            Tensor::zeros(shape)
        } else if shape[0] == 1 && shape[1] == 1 && name.contains(".fc") {
            // (1, 1, in, out) matrix: fan-in is `in`.
            let [_, _, k, m] = shape;
            kaiming_init([m, k, 1, 1], FanMode::In, tensor_seed)?.reshape(shape)?
        } else {
            kaiming_init(shape, FanMode::In, tensor_seed)?
        };
        store.insert(name, tensor)?;
    }
    Ok(store)
}
