use serde::{Deserialize, Serialize};

use crate::error::{AuditError, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Terminal {
    Running,
    RejectedCertain,
    Frozen,
}

/// Wealth process `M_t = prod_j [1 + lambda_j (X_j - eta_j)]` with the running
/// draw statistics that predictable strategies read.
///
/// Wealth is held as a logarithm: long audits with a losing bet would
/// otherwise underflow to an exact zero that looks like a wipe-out.
#[derive(Debug, Clone, PartialEq)]
pub struct TsmState<T> {
    t: usize,
    log_wealth: T,
    log_max_wealth: T,
    running_sum: T,
    mean: T,
    sum_sq_dev: T,
    terminal: Terminal,
}

impl<T: Real> Default for TsmState<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> TsmState<T> {
    pub fn new() -> Self {
        Self {
            t: 0,
            log_wealth: T::zero(),
            log_max_wealth: T::zero(),
            running_sum: T::zero(),
            mean: T::zero(),
            sum_sq_dev: T::zero(),
            terminal: Terminal::Running,
        }
    }

    #[inline]
    pub fn t(&self) -> usize {
        self.t
    }

    #[inline]
    pub fn wealth(&self) -> T {
        self.log_wealth.exp()
    }

    #[inline]
    pub fn max_wealth(&self) -> T {
        self.log_max_wealth.exp()
    }

    /// `ln M_t`; `-inf` once a factor of zero has been hit.
    #[inline]
    pub fn log_wealth(&self) -> T {
        self.log_wealth
    }

    #[inline]
    pub fn log_max_wealth(&self) -> T {
        self.log_max_wealth
    }

    #[inline]
    pub fn running_sum(&self) -> T {
        self.running_sum
    }

    #[inline]
    pub fn terminal(&self) -> Terminal {
        self.terminal
    }

    /// Mean of the draws processed so far, `None` before the first draw.
    pub fn history_mean(&self) -> Option<T> {
        (self.t > 0).then_some(self.mean)
    }

    /// Population-style variance (divisor `t`) of the draws so far.
    pub fn history_var(&self) -> Option<T> {
        (self.t > 0).then(|| self.sum_sq_dev / T::from_count(self.t))
    }

    /// Sequential p-value `min(1, 1 / max_t M_t)`.
    pub fn p_value(&self) -> T {
        match self.terminal {
            Terminal::RejectedCertain => T::zero(),
            _ => (-self.log_max_wealth).exp().min(T::one()),
        }
    }

    pub fn mark_rejected_certain(&mut self) {
        self.terminal = Terminal::RejectedCertain;
    }

    pub fn freeze(&mut self) {
        if self.terminal == Terminal::Running {
            self.terminal = Terminal::Frozen;
        }
    }

    /// Multiplies wealth by `1 + bet (x - eta_j)`.
    ///
    /// The bet must already lie in `[0, 1/eta_j]`; out-of-range bets are an
    /// error, never clipped. A frozen or certainly-rejected process keeps its
    /// wealth but still records the draw.
    pub fn step(&mut self, x: T, bet: T, eta_j: T) -> Result<()> {
        if !(x >= T::zero() && x <= T::one()) {
            return Err(AuditError::ValueOutOfRange {
                index: self.t,
                value: x.to_f64_lossy(),
                upper: 1.0,
            });
        }
        let max_bet = if eta_j > T::zero() {
            T::one() / eta_j
        } else {
            T::infinity()
        };
        if !(bet >= T::zero() && bet <= max_bet) {
            return Err(AuditError::BetOutOfRange {
                bet: bet.to_f64_lossy(),
                max: max_bet.to_f64_lossy(),
                draw: self.t + 1,
            });
        }

        if self.terminal == Terminal::Running {
            // 1 + (1/eta)(0 - eta) can round to -1e-17.
            let factor = (T::one() + bet * (x - eta_j)).max(T::zero());
            self.log_wealth = self.log_wealth + factor.ln();
            self.log_max_wealth = self.log_max_wealth.max(self.log_wealth);
        }

        self.t += 1;
        self.running_sum = self.running_sum + x;
        let delta = x - self.mean;
        self.mean = self.mean + delta / T::from_count(self.t);
        self.sum_sq_dev = self.sum_sq_dev + delta * (x - self.mean);
        Ok(())
    }
}

/// Functional form of [`TsmState::step`].
pub fn tsm_step<T: Real>(state: &TsmState<T>, x: T, bet: T, eta_j: T) -> Result<TsmState<T>> {
    let mut next = state.clone();
    next.step(x, bet, eta_j)?;
    Ok(next)
}

pub fn p_value<T: Real>(state: &TsmState<T>) -> T {
    state.p_value()
}
