use crate::error::{Error, Result};
use crate::nn::LrSchedule;

/// Server-side aggregation rule applied to the round's client updates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Aggregator {
    FedAvg,
    FedNova,
    FedAdam(AdaptiveParams),
    FedYogi(AdaptiveParams),
    FedGma { epsilon: f64, server_lr: f64 },
}

/// Server learning rate, moment decays and adaptivity degree.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveParams {
    pub eta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub tau: f64,
}

impl Default for AdaptiveParams {
    fn default() -> Self {
        AdaptiveParams {
            eta: 0.01,
            beta1: 0.9,
            beta2: 0.99,
            tau: 0.001,
        }
    }
}

impl Aggregator {
    pub const FEDGMA_DEFAULT_EPSILON: f64 = 0.8;

    pub fn name(&self) -> &'static str {
        match self {
            Aggregator::FedAvg => "fedavg",
            Aggregator::FedNova => "fednova",
            Aggregator::FedAdam(_) => "fedadam",
            Aggregator::FedYogi(_) => "fedyogi",
            Aggregator::FedGma { .. } => "fedgma",
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Aggregator::FedAdam(p) | Aggregator::FedYogi(p) => {
                if !(p.eta > 0.0 && p.tau > 0.0)
                    || !(0.0..1.0).contains(&p.beta1)
                    || !(0.0..=1.0).contains(&p.beta2)
                {
                    return Err(Error::InvalidConfig(format!("bad adaptive parameters {p:?}")));
                }
            }
            Aggregator::FedGma { epsilon, server_lr } => {
                if !(0.0..=1.0).contains(&epsilon) || !(server_lr > 0.0) {
                    return Err(Error::InvalidConfig(format!(
                        "fedgma needs epsilon in [0, 1] and server_lr > 0, got {epsilon}, {server_lr}"
                    )));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Client learning-rate policy once IMA has started.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MildExploration {
    /// Keep following the base schedule (no additional decay).
    Base,
    /// Exponential decay per round, restarting from the base learning rate in
    /// effect at the IMA start round.
    Decay { rate: f64 },
    /// A separate schedule, indexed by rounds since the IMA start round.
    Schedule(LrSchedule),
}

impl Default for MildExploration {
    fn default() -> Self {
        MildExploration::Decay { rate: 0.03 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImaConfig {
    /// First round (1-based) whose clients start from the IMA model.
    pub start_round: u32,
    /// Number of most recent global models averaged.
    pub window: usize,
    pub mild: MildExploration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FederationConfig {
    pub num_clients: usize,
    pub participation: f64,
    pub rounds: u32,
    pub local_epochs: u32,
    pub batch_size: usize,
    pub lr_schedule: LrSchedule,
    pub momentum: f64,
    pub aggregator: Aggregator,
    /// FedProx coefficient; zero disables the proximal term.
    pub prox_mu: f64,
    pub ima: Option<ImaConfig>,
    /// Periodic checkpoint cadence in rounds; zero keeps only the final models.
    pub checkpoint_every: u32,
    pub seed: u64,
}

impl FederationConfig {
    /// Number of clients sampled per round, `ceil(participation * K)`.
    pub fn clients_per_round(&self) -> usize {
        (self.participation * self.num_clients as f64).ceil() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.num_clients == 0 {
            return bad("num_clients must be >= 1".into());
        }
        if !(self.participation > 0.0 && self.participation <= 1.0) {
            return bad(format!("participation must lie in (0, 1], got {}", self.participation));
        }
        let m = self.clients_per_round();
        if m < 1 || m > self.num_clients {
            return bad(format!("{m} clients per round out of range"));
        }
        if self.rounds < 1 || self.local_epochs < 1 || self.batch_size < 1 {
            return bad("rounds, local_epochs and batch_size must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.prox_mu >= 0.0) {
            return bad(format!("prox_mu must be >= 0, got {}", self.prox_mu));
        }
        self.lr_schedule.validate()?;
        self.aggregator.validate()?;
        if let Some(ima) = &self.ima {
            if ima.window < 1 {
                return bad("IMA window must be >= 1".into());
            }
            if (ima.start_round as usize) < ima.window {
                return bad(format!(
                    "IMA start round {} must be >= window {}",
                    ima.start_round, ima.window
                ));
            }
            match ima.mild {
                MildExploration::Decay { rate } if !(0.0..1.0).contains(&rate) => {
                    return bad(format!("mild decay rate must lie in [0, 1), got {rate}"));
                }
                MildExploration::Schedule(s) => s.validate()?,
                _ => {}
            }
        }
        Ok(())
    }

    /// Learning rate and optional epoch override for round `t` (1-based).
    pub fn round_schedule(&self, t: u32) -> (f64, Option<u32>) {
        let base = &self.lr_schedule;
        match self.ima {
            Some(ima) if t >= ima.start_round => match ima.mild {
                MildExploration::Base => (base.lr_at(t - 1), base.effective_epochs(t - 1)),
                MildExploration::Decay { rate } => {
                    let lr0 = base.lr_at(ima.start_round - 1);
                    (lr0 * (1.0 - rate).powi((t - ima.start_round) as i32), None)
                }
                MildExploration::Schedule(s) => {
                    let r = t - ima.start_round;
                    (s.lr_at(r), s.effective_epochs(r))
                }
            },
            _ => (base.lr_at(t - 1), base.effective_epochs(t - 1)),
        }
    }

    pub fn ima_active(&self, t: u32) -> bool {
        self.ima.is_some_and(|ima| t >= ima.start_round)
    }
}
