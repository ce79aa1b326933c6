//! Dense feed-forward networks with manual backpropagation.

pub mod checkpoint;
pub mod net;
pub mod optim;
pub mod schedule;
pub mod spec;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use net::{argmax, evaluate, forward, loss_and_grad, Batch, Targets};
pub use optim::{sgd_step, OptimizerState};
pub use schedule::{effective_epochs, schedule_lr, LrSchedule};
pub use spec::{init_params, Activation, LossKind, ModelSpec, ParamVector};
