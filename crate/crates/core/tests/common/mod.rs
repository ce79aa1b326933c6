#![allow(dead_code)]

use fima_core::data::{gen_synthetic_classification, partition_dirichlet, partition_iid, Dataset, Partition};
use fima_core::federation::{Aggregator, FederationConfig};
use fima_core::nn::{init_params, Activation, LossKind, LrSchedule, ModelSpec, ParamVector};
use fima_core::rng::rng_from;
use rand::Rng as _;

pub struct Toy {
    pub spec: ModelSpec,
    pub train: Dataset,
    pub test: Dataset,
    pub partition: Partition,
}

/// Small 3-class task split over `k` clients.
pub fn toy(k: usize, alpha: Option<f64>, seed: u64) -> Toy {
    let spec = ModelSpec::mlp(&[4, 6, 3], Activation::Relu, LossKind::SoftmaxCrossEntropy).unwrap();
    let train = gen_synthetic_classification(seed, 3, 40, 4, 2.0).unwrap();
    let test = gen_synthetic_classification(seed + 99, 3, 20, 4, 2.0).unwrap();
    let partition = match alpha {
        Some(a) => partition_dirichlet(&train, k, a, seed).unwrap(),
        None => partition_iid(&train, k, seed).unwrap(),
    };
    Toy { spec, train, test, partition }
}

pub fn config(k: usize, rounds: u32, seed: u64) -> FederationConfig {
    FederationConfig {
        num_clients: k,
        participation: 0.5,
        rounds,
        local_epochs: 2,
        batch_size: 8,
        lr_schedule: LrSchedule::Exponential { lr0: 0.05, rate: 0.01 },
        momentum: 0.9,
        aggregator: Aggregator::FedAvg,
        prox_mu: 0.0,
        ima: None,
        checkpoint_every: 0,
        seed,
    }
}

/// Random parameters with entries drawn from `U(-scale, scale)`.
pub fn random_params(spec: &ModelSpec, scale: f64, seed: u64) -> ParamVector {
    let mut rng = rng_from(seed);
    let values = (0..spec.param_count()).map(|_| rng.random_range(-scale..scale)).collect();
    ParamVector::new(values, spec.fingerprint())
}

pub fn perturbed(base: &ParamVector, scale: f64, seed: u64) -> ParamVector {
    let mut rng = rng_from(seed);
    let values = base.values.iter().map(|v| v + rng.random_range(-scale..scale)).collect();
    ParamVector::new(values, base.spec_fingerprint)
}

pub fn init(spec: &ModelSpec, seed: u64) -> ParamVector {
    init_params(spec, seed)
}
pub mod ensembles;
pub mod grad;
