//! Federated training: client updates, server aggregation and IMA.

pub mod aggregate;
pub mod client;
pub mod config;
pub mod run;

pub use aggregate::{
    apply_step, client_weights, fedadam_step, fedgma_mask, fednova_aggregate, fedyogi_step,
    fma_aggregate, ima_average, weighted_delta, ServerMoments,
};
pub use client::{local_train, sample_clients, ClientUpdate, LocalTraining};
pub use config::{AdaptiveParams, Aggregator, FederationConfig, ImaConfig, MildExploration};
pub use run::{
    client_seed, initial_model, run_federation, run_federation_observed, train_replica, train_round_clients,
    Checkpoint, CheckpointKind, FederationOutcome, FederationTask, GlobalState, ModelKind,
    RoundObserver, RoundRecord,
};
