//! The seven reference architectures with seeded random weights.

use alloc::string::ToString;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ApproxRelu, Conv, ConvKind, Fc, LayerSpec, ModelSpec, Shape};
use crate::error::{Error, Result};

pub const BUILTIN_NAMES: [&str; 7] = ["M1", "M2", "M3", "M4", "M5", "M6", "M7"];

enum Proto {
    Conv2d(usize, usize, usize, usize),
    Conv1d(usize, usize, usize, usize),
    Pool(usize),
    Square,
    Relu,
    Flatten,
    Dense(usize, usize),
}

use Proto::*;

fn architecture(name: &str) -> Option<(Shape, Vec<Proto>)> {
    let arch = match name {
        "M1" => (
            Shape::new(1, 28, 28),
            alloc::vec![Conv2d(1, 8, 4, 3), Square, Flatten, Dense(648, 64), Square, Dense(64, 10)],
        ),
        // LeNet-1 with square activations.
        "M2" => (
            Shape::new(1, 28, 28),
            alloc::vec![
                Conv2d(1, 4, 5, 1),
                Square,
                Pool(2),
                Conv2d(4, 12, 5, 1),
                Square,
                Pool(2),
                Flatten,
                Dense(192, 10),
            ],
        ),
        "M3" => (
            Shape::new(1, 28, 28),
            alloc::vec![Conv2d(1, 6, 3, 1), Relu, Pool(2), Flatten, Dense(1014, 120), Relu, Dense(120, 10)],
        ),
        // LeNet-5 takes 32x32 inputs (MNIST zero-padded by 2 on each side),
        // which is what makes the third convolution produce 1x1x120.
        "M4" => (
            Shape::new(1, 32, 32),
            alloc::vec![
                Conv2d(1, 6, 5, 1),
                Square,
                Pool(2),
                Conv2d(6, 16, 5, 1),
                Square,
                Pool(2),
                Conv2d(16, 120, 5, 1),
                Square,
                Flatten,
                Dense(120, 84),
                Square,
                Dense(84, 10),
            ],
        ),
        // CIFAR-10.
        "M5" => (
            Shape::new(3, 32, 32),
            alloc::vec![
                Conv2d(3, 16, 3, 1),
                Square,
                Pool(2),
                Conv2d(16, 64, 4, 1),
                Square,
                Pool(2),
                Conv2d(64, 128, 3, 1),
                Square,
                Pool(4),
                Flatten,
                Dense(128, 10),
            ],
        ),
        // USPS.
        "M6" => (
            Shape::new(1, 16, 16),
            alloc::vec![Conv2d(1, 6, 4, 2), Square, Flatten, Dense(294, 64), Square, Dense(64, 10)],
        ),
        // 1-D ECG classifier.
        "M7" => (
            Shape::new(1, 1, 128),
            alloc::vec![
                Conv1d(1, 2, 2, 2),
                Square,
                Conv1d(2, 4, 2, 2),
                Flatten,
                Dense(128, 32),
                Square,
                Dense(32, 5),
            ],
        ),
        _ => return None,
    };
    Some(arch)
}

fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect()
}

fn conv(rng: &mut ChaCha8Rng, kind: ConvKind, ch_in: usize, ch_out: usize, kernel: usize, stride: usize) -> LayerSpec {
    let mut c = Conv {
        kind,
        ch_in,
        ch_out,
        kernel,
        stride,
        padding: 0,
        weights: Vec::new(),
        bias: Vec::new(),
    };
    c.weights = uniform(rng, c.weight_len());
    c.bias = uniform(rng, ch_out);
    LayerSpec::Conv(c)
}

/// Instantiate a reference architecture by name (`M1`..`M7`) with weights
/// and biases drawn uniformly from `[-0.5, 0.5)` in layer order.
pub fn builtin(name: &str, seed: u64) -> Result<ModelSpec> {
    let (input, protos) = architecture(name).ok_or_else(|| Error::UnknownModel(name.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = protos
        .into_iter()
        .map(|p| match p {
            Conv2d(i, o, k, s) => conv(&mut rng, ConvKind::TwoD, i, o, k, s),
            Conv1d(i, o, k, s) => conv(&mut rng, ConvKind::OneD, i, o, k, s),
            Pool(c) => LayerSpec::AvgPool2d { kernel: c },
            Square => LayerSpec::Square,
            Relu => LayerSpec::ApproxRelu(ApproxRelu::default()),
            Flatten => LayerSpec::Flatten,
            Dense(dat_in, dat_out) => LayerSpec::Fc(Fc {
                dat_in,
                dat_out,
                weights: uniform(&mut rng, dat_in * dat_out),
                bias: uniform(&mut rng, dat_out),
            }),
        })
        .collect();
    Ok(ModelSpec {
        name: name.to_string(),
        input,
        layers,
    })
}
