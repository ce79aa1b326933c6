use crate::error::{Error, Result};

/// Per-round client learning-rate schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrSchedule {
    Constant { lr: f64 },
    /// `lr0 * (1 - rate)^round`.
    Exponential { lr0: f64, rate: f64 },
    /// Log-linear sweep from `lr_hi` towards `lr_lo`, restarting every `period` rounds.
    Cyclic { lr_hi: f64, lr_lo: f64, period: u32 },
    /// Constant lr; the local epoch count drops by one every `rounds_per_drop`
    /// rounds, starting from `epochs0` and never below one.
    EpochDecay { lr: f64, epochs0: u32, rounds_per_drop: u32 },
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        match *self {
            LrSchedule::Constant { lr } if !(lr > 0.0) => bad(format!("lr must be > 0, got {lr}")),
            LrSchedule::Exponential { lr0, rate } => {
                if !(lr0 > 0.0) {
                    bad(format!("lr0 must be > 0, got {lr0}"))
                } else if !(0.0..1.0).contains(&rate) {
                    bad(format!("decay rate must lie in [0, 1), got {rate}"))
                } else {
                    Ok(())
                }
            }
            LrSchedule::Cyclic { lr_hi, lr_lo, period } => {
                if !(lr_hi > 0.0 && lr_lo > 0.0) {
                    bad("cyclic learning rates must be > 0".into())
                } else if period < 1 {
                    bad("cyclic period must be >= 1".into())
                } else {
                    Ok(())
                }
            }
            LrSchedule::EpochDecay {
                lr,
                epochs0,
                rounds_per_drop,
            } => {
                if !(lr > 0.0) {
                    bad(format!("lr must be > 0, got {lr}"))
                } else if epochs0 < 1 || rounds_per_drop < 1 {
                    bad("epoch decay needs epochs0 >= 1 and rounds_per_drop >= 1".into())
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// Learning rate at round `round` (0-based within the schedule).
    pub fn lr_at(&self, round: u32) -> f64 {
        match *self {
            LrSchedule::Constant { lr } => lr,
            LrSchedule::Exponential { lr0, rate } => lr0 * (1.0 - rate).powi(round as i32),
            LrSchedule::Cyclic { lr_hi, lr_lo, period } => {
                let pos = f64::from(round % period) / f64::from(period);
                (lr_hi.ln() + pos * (lr_lo.ln() - lr_hi.ln())).exp()
            }
            LrSchedule::EpochDecay { lr, .. } => lr,
        }
    }

    /// Local epochs at `round`; `None` means "use the configured epoch count".
    pub fn effective_epochs(&self, round: u32) -> Option<u32> {
        match *self {
            LrSchedule::EpochDecay {
                epochs0,
                rounds_per_drop,
                ..
            } => Some(epochs0.saturating_sub(round / rounds_per_drop).max(1)),
            _ => None,
        }
    }
}

/// Free-function form of [`LrSchedule::lr_at`].
pub fn schedule_lr(s: &LrSchedule, round: u32) -> f64 {
    s.lr_at(round)
}

pub fn effective_epochs(s: &LrSchedule, round: u32) -> Option<u32> {
    s.effective_epochs(round)
}
