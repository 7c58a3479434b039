//! Shared fixtures for the benchmarks.

use rlab_core::{Model, ModelSpec, Tensor};

/// He-initialized MNIST conv net with a deterministic batch of `n` images.
pub fn conv_fixture(n: usize) -> (Model, Tensor, Vec<usize>) {
    let model = Model::init(ModelSpec::mnist_conv(), 0);
    let data: Vec<f64> = (0..n * 784).map(|i| ((i * 7919) % 256) as f64 / 255.0).collect();
    let x = Tensor::new(vec![n, 1, 28, 28], data).expect("fixture shape");
    let y = (0..n).map(|i| i % 10).collect();
    (model, x, y)
}

/// Small MLP over flat inputs, for attack-loop overhead.
pub fn mlp_fixture(n: usize, dim: usize) -> (Model, Tensor, Vec<usize>) {
    let model = Model::init(ModelSpec::mlp(dim, &[64, 64], 10).expect("valid widths"), 0);
    let data: Vec<f64> = (0..n * dim).map(|i| ((i * 31) % 97) as f64 / 96.0).collect();
    let x = Tensor::new(vec![n, dim], data).expect("fixture shape");
    let y = (0..n).map(|i| i % 10).collect();
    (model, x, y)
}
