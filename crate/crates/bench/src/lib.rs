//! Shared fixtures for the benchmarks: the rotated-moons setup at full size.

use drain_core::data::make_rotated_moons;
use drain_core::{Activation, DomainDataset, GeneratorConfig, NetSchema, Task, TrainConfig};

pub fn moons_schema() -> NetSchema {
    NetSchema::mlp(2, &[50, 50], Activation::Relu, 1, Activation::Sigmoid, true).expect("valid schema")
}

pub fn moons_generator(schema: &NetSchema) -> GeneratorConfig {
    let mut g = GeneratorConfig::new(schema.param_count());
    g.lstm_depth = 10;
    g
}

pub fn moons_train_config(iters_per_domain: usize) -> TrainConfig {
    TrainConfig {
        iters_per_domain,
        learning_rate: 1e-4,
        ..TrainConfig::new(Task::Classification, 0)
    }
}

pub fn moons_domains() -> Vec<DomainDataset> {
    make_rotated_moons(10, 200, 18.0, 0.1, 0).expect("valid moons")
}
