use rand::seq::SliceRandom;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{loss_and_grad, sgd_step, Batch, LossKind, ModelSpec, OptimizerState, ParamVector, Targets};
use crate::rng::Rng;

/// Result of one client's local training in a round.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    /// `final_params - init`.
    pub delta: Vec<f64>,
    pub n_k: usize,
    /// Local SGD steps, `E * ceil(n_k / B)`.
    pub tau_k: usize,
    pub final_params: ParamVector,
}

/// Uniform sample of `count` distinct client ids via a seeded shuffle.
pub fn sample_clients(rng: &mut Rng, k: usize, count: usize) -> Result<Vec<usize>> {
    if count < 1 || count > k {
        return Err(Error::InvalidArgument(format!(
            "cannot sample {count} of {k} clients"
        )));
    }
    let mut ids: Vec<usize> = (0..k).collect();
    ids.shuffle(rng);
    ids.truncate(count);
    Ok(ids)
}

/// Local training hyperparameters for one round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalTraining {
    pub epochs: u32,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub prox_mu: f64,
}

/// Mini-batch SGD with momentum from `init`, reshuffling every epoch.
///
/// With `prox_mu > 0` each step also descends `(mu/2) * ||w - init||^2`.
pub fn local_train(
    init: &ParamVector,
    spec: &ModelSpec,
    data: &Dataset,
    hp: LocalTraining,
    rng: &mut Rng,
) -> Result<ClientUpdate> {
    if data.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if hp.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be >= 1".into()));
    }
    init.check_spec(spec)?;
    let n = data.len();
    let mut params = init.clone();
    let mut opt = OptimizerState::new(params.len(), hp.momentum)?;
    let mut order: Vec<usize> = (0..n).collect();
    let mut tau = 0;
    for _ in 0..hp.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(hp.batch_size) {
            let inputs = data.features.select(ndarray::Axis(0), chunk);
            let (dense, classes);
            let targets = match spec.loss_kind() {
                LossKind::Mse => {
                    dense = data.one_hot_targets.select(ndarray::Axis(0), chunk);
                    Targets::Dense(dense.view())
                }
                LossKind::SoftmaxCrossEntropy => {
                    classes = chunk.iter().map(|&i| data.labels[i]).collect::<Vec<_>>();
                    Targets::Classes(&classes)
                }
            };
            let (_, mut grad) = loss_and_grad(
                &params,
                spec,
                Batch {
                    inputs: inputs.view(),
                    targets,
                },
            )?;
            if hp.prox_mu > 0.0 {
                for ((g, w), w0) in grad.iter_mut().zip(&params.values).zip(&init.values) {
                    *g += hp.prox_mu * (w - w0);
                }
            }
            sgd_step(&mut params, &grad, hp.lr, &mut opt)?;
            tau += 1;
        }
    }
    if !params.is_finite() {
        return Err(Error::NonFinite("client parameters after local training"));
    }
    Ok(ClientUpdate {
        delta: params.sub(init),
        n_k: n,
        tau_k: tau,
        final_params: params,
    })
}
