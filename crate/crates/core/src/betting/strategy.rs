//! Predictable betting strategies.
//!
//! A [`BetStrategy`] is the configuration; [`BetStrategy::prepare`] binds it to
//! the population under audit and yields a [`Bettor`], which emits one bet per
//! draw from the history strictly before that draw. Every bet is computed as
//! if sampling were IID at the initial null mean `eta` and then capped at
//! `1/eta_j` for the conditional null mean actually in force.

use serde::{Deserialize, Serialize};

use crate::assorter::AssorterPopulation;
use crate::betting::kelly::{cobra_bet, Support};
use crate::betting::portfolio::PortfolioGrid;
use crate::betting::tsm::TsmState;
use crate::error::{AuditError, Result};
use crate::scalar::Real;

pub const DEFAULT_AGRAPA_C: f64 = 0.99;
pub const DEFAULT_GRID_SIZE: usize = 100;
pub const DEFAULT_SHRINK_D: f64 = 20.0;
pub const SHRINK_TRUNC_EPSILON: f64 = 1e-6;
pub const DEFAULT_COBRA_P2: f64 = 0.001;

/// Offset of the AGRAPA opening mean above the null.
const AGRAPA_STARTUP_OFFSET: f64 = 0.01;
const AGRAPA_STARTUP_VAR: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BetStrategy<T> {
    Fixed {
        bet: T,
    },
    /// Kelly bet for an assumed population, fixed for the whole audit.
    AprioriKelly {
        postulated: Vec<T>,
    },
    /// Kelly bet for the true population under audit.
    OracleKelly,
    Agrapa {
        c: T,
    },
    UniversalPortfolio {
        grid_size: usize,
    },
    /// Bet implied by a truncated shrinkage estimate of the mean. `c = None`
    /// uses `(eta0 - eta) / 2`.
    ShrinkTrunc {
        d: T,
        c: Option<T>,
        eta0: T,
    },
    Cobra {
        p1: T,
        p2: T,
    },
}

impl<T: Real> BetStrategy<T> {
    pub fn agrapa() -> Self {
        BetStrategy::Agrapa {
            c: T::lit(DEFAULT_AGRAPA_C),
        }
    }

    pub fn universal_portfolio() -> Self {
        BetStrategy::UniversalPortfolio {
            grid_size: DEFAULT_GRID_SIZE,
        }
    }

    /// Shrinkage toward `eta0` with `d = 20` and the default truncation.
    pub fn shrink_trunc(eta0: T) -> Self {
        BetStrategy::ShrinkTrunc {
            d: T::lit(DEFAULT_SHRINK_D),
            c: None,
            eta0,
        }
    }

    pub fn cobra() -> Self {
        BetStrategy::Cobra {
            p1: T::zero(),
            p2: T::lit(DEFAULT_COBRA_P2),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            BetStrategy::Fixed { .. } => "fixed",
            BetStrategy::AprioriKelly { .. } => "apriori_kelly",
            BetStrategy::OracleKelly => "oracle_kelly",
            BetStrategy::Agrapa { .. } => "agrapa",
            BetStrategy::UniversalPortfolio { .. } => "universal_portfolio",
            BetStrategy::ShrinkTrunc { .. } => "shrink_trunc",
            BetStrategy::Cobra { .. } => "cobra",
        }
    }

    /// Binds the strategy to `population` (whose null mean is the `eta` the
    /// bets are computed against).
    pub fn prepare(&self, population: &AssorterPopulation<T>) -> Result<Bettor<T>> {
        let eta = population.null_mean();
        let rule = match self {
            BetStrategy::Fixed { bet } => {
                if !(*bet >= T::zero()) {
                    return Err(AuditError::invalid("bet", "must be non-negative"));
                }
                BetRule::Constant(*bet)
            }
            BetStrategy::AprioriKelly { postulated } => {
                if postulated.is_empty() {
                    return Err(AuditError::invalid("postulated", "population is empty"));
                }
                BetRule::Constant(Support::from_values(postulated).kelly_bet(eta))
            }
            BetStrategy::OracleKelly => {
                BetRule::Constant(Support::from_values(population.values()).kelly_bet(eta))
            }
            BetStrategy::Agrapa { c } => {
                if !(*c >= T::zero() && *c <= T::one()) {
                    return Err(AuditError::invalid("c", "must lie in [0, 1]"));
                }
                BetRule::Agrapa { c: *c }
            }
            BetStrategy::UniversalPortfolio { grid_size } => {
                if *grid_size == 0 {
                    return Err(AuditError::invalid("grid_size", "must be at least 1"));
                }
                BetRule::Portfolio(PortfolioGrid::new(eta, *grid_size))
            }
            BetStrategy::ShrinkTrunc { d, c, eta0 } => {
                if !(*d > T::zero()) {
                    return Err(AuditError::invalid("d", "must be positive"));
                }
                let c = c.unwrap_or_else(|| ((*eta0 - eta) / T::two()).max(T::zero()));
                BetRule::ShrinkTrunc {
                    d: *d,
                    c,
                    eta0: *eta0,
                }
            }
            BetStrategy::Cobra { p1, p2 } => {
                if !(*p1 >= T::zero() && *p2 >= T::zero() && *p1 + *p2 <= T::one()) {
                    return Err(AuditError::invalid(
                        "p1/p2",
                        "must be rates summing to at most 1",
                    ));
                }
                // rescaled null mean is (2 - v) / 4
                let margin = T::two() - T::lit(4.0) * eta;
                BetRule::Constant(cobra_bet(margin, *p1, *p2))
            }
        };
        Ok(Bettor { eta, rule })
    }
}

#[derive(Debug, Clone, PartialEq)]
enum BetRule<T> {
    Constant(T),
    Agrapa { c: T },
    ShrinkTrunc { d: T, c: T, eta0: T },
    Portfolio(PortfolioGrid<T>),
}

/// A strategy bound to one audit.
#[derive(Debug, Clone, PartialEq)]
pub struct Bettor<T> {
    eta: T,
    rule: BetRule<T>,
}

impl<T: Real> Bettor<T> {
    pub fn eta(&self) -> T {
        self.eta
    }

    /// Bet for the next draw, given the state after the previous draws.
    pub fn bet(&self, state: &TsmState<T>, eta_j: T) -> T {
        let raw = match &self.rule {
            BetRule::Constant(bet) => *bet,
            BetRule::Agrapa { c } => {
                let (mean_lag, var_lag) = agrapa_history(state, self.eta);
                agrapa_bet(mean_lag, var_lag, self.eta, *c)
            }
            BetRule::ShrinkTrunc { d, c, eta0 } => {
                shrink_trunc_bet(state.running_sum(), state.t(), self.eta, *d, *c, *eta0)
            }
            BetRule::Portfolio(grid) => grid.implied_bet(eta_j),
        };
        clip_bet(raw, eta_j)
    }

    /// Feeds the draw just processed to stateful rules.
    pub fn observe(&mut self, x: T, eta_j: T) {
        if let BetRule::Portfolio(grid) = &mut self.rule {
            grid.observe(x, eta_j);
        }
    }

    /// Constant bet, if the rule has one.
    pub fn fixed_bet(&self) -> Option<T> {
        match self.rule {
            BetRule::Constant(bet) => Some(bet),
            _ => None,
        }
    }
}

#[inline]
fn clip_bet<T: Real>(bet: T, eta_j: T) -> T {
    let cap = T::one() / eta_j;
    if bet.is_nan() {
        return T::zero();
    }
    bet.max(T::zero()).min(cap)
}

/// Lagged mean and variance for AGRAPA, with the startup values before there
/// is enough history.
fn agrapa_history<T: Real>(state: &TsmState<T>, eta: T) -> (T, T) {
    let mean = state
        .history_mean()
        .unwrap_or_else(|| eta + T::lit(AGRAPA_STARTUP_OFFSET));
    let var = if state.t() < 2 {
        T::lit(AGRAPA_STARTUP_VAR)
    } else {
        state.history_var().unwrap_or(T::lit(AGRAPA_STARTUP_VAR))
    };
    (mean, var)
}

/// `0 v (m - eta) / (s^2 + (m - eta)^2) ^ c/eta`.
pub fn agrapa_bet<T: Real>(mean_lag: T, var_lag: T, eta_j: T, c: T) -> T {
    let gap = mean_lag - eta_j;
    let cap = c / eta_j;
    if gap <= T::zero() {
        return T::zero();
    }
    let denom = var_lag + gap * gap;
    let raw = if denom > T::zero() { gap / denom } else { cap };
    raw.max(T::zero()).min(cap)
}

/// Bet implied by the truncated shrinkage estimate
/// `min(max((d eta0 + S) / (d + n), eta + c / sqrt(d + n)), 1 - eps)`.
pub fn shrink_trunc_bet<T: Real>(running_sum: T, n: usize, eta_j: T, d: T, c: T, eta0: T) -> T {
    let dn = d + T::from_count(n);
    let shrunk = (d * eta0 + running_sum) / dn;
    let floor = eta_j + c / dn.sqrt();
    let estimate = shrunk
        .max(floor)
        .min(T::one() - T::lit(SHRINK_TRUNC_EPSILON));
    let bet = (estimate / eta_j - T::one()) / (T::one() - eta_j);
    bet.max(T::zero()).min(T::one() / eta_j)
}
