//! The federated training loop with optional iterative moving averaging.
//!
//! Rounds are numbered `1..=R`; `w(0)` is the initial model. Before round
//! `t_s` clients start from the latest global model `w(t-1)`; from `t_s` on
//! they start from `w_ima(t-1)`, the mean of the last `P` global models, and
//! train under the mild-exploration learning rate. The server always
//! aggregates the returned client models into `w(t)`, which is the only kind
//! of model kept in the history window.

use std::collections::VecDeque;

use rayon::prelude::*;

use super::aggregate::{
    adaptive_step, apply_step, check_updates, fedgma_mask, fednova_aggregate, fma_aggregate,
    ima_average, weighted_delta, SecondMoment, ServerMoments,
};
use super::client::{local_train, sample_clients, ClientUpdate, LocalTraining};
use super::config::{Aggregator, FederationConfig};
use crate::data::{Dataset, Partition};
use crate::error::{Error, Result};
use crate::nn::{evaluate, init_params, ModelSpec, ParamVector};
use crate::rng::{derive_seed, derived_rng};

const INIT_STREAM: u64 = 0x1A17;
const SAMPLING_STREAM: u64 = 0x5A3F;
const REPLICA_STREAM: u64 = 0x4E71;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Fma,
    Ima,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Fma => "fma",
            ModelKind::Ima => "ima",
        }
    }
}

/// Server state after a round.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalState {
    pub round: u32,
    /// Latest aggregated model `w(t)`.
    pub global: ParamVector,
    /// Recent aggregated models, newest first; never holds IMA models.
    pub history: VecDeque<ParamVector>,
    pub history_capacity: usize,
    /// `w_ima(t)`, present once `t >= t_s`.
    pub ima_model: Option<ParamVector>,
    pub server_m: Vec<f64>,
    pub server_v: Vec<f64>,
}

impl GlobalState {
    pub fn new(initial: ParamVector, history_capacity: usize) -> Self {
        let len = initial.len();
        let capacity = history_capacity.max(1);
        let mut history = VecDeque::with_capacity(capacity);
        history.push_front(initial.clone());
        GlobalState {
            round: 0,
            global: initial,
            history,
            history_capacity: capacity,
            ima_model: None,
            server_m: vec![0.0; len],
            server_v: vec![0.0; len],
        }
    }

    fn push_history(&mut self, model: ParamVector) {
        self.history.push_front(model);
        self.history.truncate(self.history_capacity);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: u32,
    pub lr: f64,
    pub test_loss: f64,
    pub test_acc: f64,
    /// `max_k ||w_k - w(t)||_2` over the participating clients.
    pub locality: f64,
    /// Kind of model broadcast this round (and evaluated after it).
    pub broadcast_kind: ModelKind,
    pub clients: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckpointKind {
    Periodic,
    FinalFma,
    FinalIma,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub round: u32,
    pub kind: CheckpointKind,
    pub params: ParamVector,
}

impl Checkpoint {
    pub fn file_name(&self) -> String {
        match self.kind {
            CheckpointKind::Periodic => format!("round_{:05}.fima", self.round),
            CheckpointKind::FinalFma => "final_fma.fima".to_string(),
            CheckpointKind::FinalIma => "final_ima.fima".to_string(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FederationOutcome {
    pub trajectory: Vec<RoundRecord>,
    pub state: GlobalState,
    pub checkpoints: Vec<Checkpoint>,
    /// Client updates of the final round, ascending client id.
    pub last_round: Vec<(usize, ClientUpdate)>,
}

/// Hooks into the training loop; all methods default to no-ops.
pub trait RoundObserver {
    fn on_broadcast(&mut self, _round: u32, _kind: ModelKind, _model: &ParamVector) {}

    fn on_round_end(
        &mut self,
        _round: u32,
        _broadcast: &ParamVector,
        _updates: &[(usize, ClientUpdate)],
        _state: &GlobalState,
    ) {
    }
}

impl RoundObserver for () {}

/// Training data and evaluation set shared by all rounds.
#[derive(Debug, Clone, Copy)]
pub struct FederationTask<'a> {
    pub spec: &'a ModelSpec,
    pub train: &'a Dataset,
    pub partition: &'a Partition,
    pub test: &'a Dataset,
}

pub fn initial_model(spec: &ModelSpec, seed: u64) -> ParamVector {
    init_params(spec, derive_seed(seed, &[INIT_STREAM]))
}

/// Seed of client `client`'s local-training stream in `round`.
pub fn client_seed(seed: u64, round: u32, client: usize) -> u64 {
    derive_seed(seed, &[u64::from(round), client as u64])
}

/// Seed of an extra replica of a client's training in `round`.
pub fn replica_seed(seed: u64, round: u32, client: usize, replica: usize) -> u64 {
    derive_seed(seed, &[REPLICA_STREAM, u64::from(round), client as u64, replica as u64])
}

fn client_datasets(task: &FederationTask) -> Result<Vec<Dataset>> {
    task.partition
        .client_indices
        .iter()
        .enumerate()
        .map(|(k, idx)| {
            if idx.is_empty() {
                return Err(Error::InvalidConfig(format!("client {k} has no samples")));
            }
            task.train.subset(idx)
        })
        .collect()
}

pub fn run_federation(config: &FederationConfig, task: FederationTask) -> Result<FederationOutcome> {
    run_federation_observed(config, task, &mut ())
}

pub fn run_federation_observed(
    config: &FederationConfig,
    task: FederationTask,
    observer: &mut dyn RoundObserver,
) -> Result<FederationOutcome> {
    config.validate()?;
    if task.partition.num_clients() != config.num_clients {
        return Err(Error::InvalidConfig(format!(
            "partition has {} clients, config expects {}",
            task.partition.num_clients(),
            config.num_clients
        )));
    }
    if task.train.dim() != task.spec.input_dim() || task.test.dim() != task.spec.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: task.spec.input_dim(),
            actual: task.train.dim(),
        });
    }
    let clients = client_datasets(&task)?;
    let window = config.ima.map_or(1, |ima| ima.window);
    let mut state = GlobalState::new(initial_model(task.spec, config.seed), window);
    let per_round = config.clients_per_round();
    let mut trajectory = Vec::with_capacity(config.rounds as usize);
    let mut checkpoints = Vec::new();
    let mut last_round = Vec::new();

    for t in 1..=config.rounds {
        let ima_phase = config.ima_active(t);
        if ima_phase && state.ima_model.is_none() {
            // w_ima(t_s - 1) over w(t_s - P) .. w(t_s - 1)
            state.ima_model = Some(ima_average(&state.history, window)?);
        }
        let (kind, broadcast) = if ima_phase {
            (ModelKind::Ima, state.ima_model.clone().unwrap())
        } else {
            (ModelKind::Fma, state.global.clone())
        };
        observer.on_broadcast(t, kind, &broadcast);

        let mut selected = sample_clients(
            &mut derived_rng(config.seed, &[SAMPLING_STREAM, u64::from(t)]),
            config.num_clients,
            per_round,
        )?;
        selected.sort_unstable();

        let (lr, epochs) = config.round_schedule(t);
        let hp = LocalTraining {
            epochs: epochs.unwrap_or(config.local_epochs),
            batch_size: config.batch_size,
            lr,
            momentum: config.momentum,
            prox_mu: config.prox_mu,
        };
        let updates: Vec<(usize, ClientUpdate)> = selected
            .par_iter()
            .map(|&k| {
                let mut rng = crate::rng::rng_from(client_seed(config.seed, t, k));
                local_train(&broadcast, task.spec, &clients[k], hp, &mut rng).map(|u| (k, u))
            })
            .collect::<Result<_>>()?;
        let plain: Vec<ClientUpdate> = updates.iter().map(|(_, u)| u.clone()).collect();

        let new_global = aggregate(config.aggregator, &plain, &broadcast, &mut state)?;
        if !new_global.is_finite() {
            return Err(Error::NonFinite("aggregated global model"));
        }
        let locality = plain
            .iter()
            .map(|u| u.final_params.l2_distance(&new_global))
            .fold(0.0, f64::max);
        state.round = t;
        state.global = new_global.clone();
        state.push_history(new_global);
        if ima_phase {
            state.ima_model = Some(ima_average(&state.history, window)?);
        }

        let eval_model = state.ima_model.as_ref().unwrap_or(&state.global);
        let (test_loss, test_acc) = evaluate(
            eval_model,
            task.spec,
            task.test.features.view(),
            task.test.one_hot_targets.view(),
            &task.test.labels,
        )?;
        trajectory.push(RoundRecord {
            round: t,
            lr,
            test_loss,
            test_acc,
            locality,
            broadcast_kind: kind,
            clients: selected,
        });
        if config.checkpoint_every > 0 && t % config.checkpoint_every == 0 {
            checkpoints.push(Checkpoint {
                round: t,
                kind: CheckpointKind::Periodic,
                params: state.global.clone(),
            });
        }
        observer.on_round_end(t, &broadcast, &updates, &state);
        if t == config.rounds {
            last_round = updates;
        }
    }

    checkpoints.push(Checkpoint {
        round: config.rounds,
        kind: CheckpointKind::FinalFma,
        params: state.global.clone(),
    });
    if let Some(ima) = &state.ima_model {
        checkpoints.push(Checkpoint {
            round: config.rounds,
            kind: CheckpointKind::FinalIma,
            params: ima.clone(),
        });
    }
    Ok(FederationOutcome {
        trajectory,
        state,
        checkpoints,
        last_round,
    })
}

fn aggregate(
    rule: Aggregator,
    updates: &[ClientUpdate],
    broadcast: &ParamVector,
    state: &mut GlobalState,
) -> Result<ParamVector> {
    match rule {
        Aggregator::FedAvg => fma_aggregate(updates, broadcast),
        Aggregator::FedNova => fednova_aggregate(updates, broadcast),
        Aggregator::FedAdam(hp) | Aggregator::FedYogi(hp) => {
            check_updates(updates, broadcast)?;
            let pseudo = weighted_delta(updates);
            let mut moments = ServerMoments {
                m: std::mem::take(&mut state.server_m),
                v: std::mem::take(&mut state.server_v),
            };
            let second = if matches!(rule, Aggregator::FedAdam(_)) {
                SecondMoment::Adam
            } else {
                SecondMoment::Yogi
            };
            let out = adaptive_step(broadcast, &mut moments, &pseudo, hp, second);
            state.server_m = moments.m;
            state.server_v = moments.v;
            out
        }
        Aggregator::FedGma { epsilon, server_lr } => {
            check_updates(updates, broadcast)?;
            apply_step(broadcast, &fedgma_mask(updates, epsilon)?, server_lr)
        }
    }
}

fn train_every_client(
    config: &FederationConfig,
    task: FederationTask,
    broadcast: &ParamVector,
    round: u32,
    seed_of: impl Fn(usize) -> u64 + Sync,
) -> Result<Vec<ClientUpdate>> {
    let clients = client_datasets(&task)?;
    let (lr, epochs) = config.round_schedule(round.max(1));
    let hp = LocalTraining {
        epochs: epochs.unwrap_or(config.local_epochs),
        batch_size: config.batch_size,
        lr,
        momentum: config.momentum,
        prox_mu: config.prox_mu,
    };
    clients
        .par_iter()
        .enumerate()
        .map(|(k, data)| {
            let mut rng = crate::rng::rng_from(seed_of(k));
            local_train(broadcast, task.spec, data, hp, &mut rng)
        })
        .collect()
}

/// Trains all `K` clients from `broadcast` on their round-`round` streams.
///
/// Participating clients reproduce their actual update of that round; the
/// others yield the update they would have produced.
pub fn train_round_clients(
    config: &FederationConfig,
    task: FederationTask,
    broadcast: &ParamVector,
    round: u32,
) -> Result<Vec<ClientUpdate>> {
    train_every_client(config, task, broadcast, round, |k| client_seed(config.seed, round, k))
}

/// Retrains every client from `broadcast` on an independent replica stream.
///
/// Used to build seed-replicated joint ensembles for the loss decomposition.
pub fn train_replica(
    config: &FederationConfig,
    task: FederationTask,
    broadcast: &ParamVector,
    round: u32,
    replica: usize,
) -> Result<Vec<ClientUpdate>> {
    train_every_client(config, task, broadcast, round, |k| {
        replica_seed(config.seed, round, k, replica)
    })
}
