//! Betting test supermartingales and the strategies that drive them.

pub mod kelly;
pub mod portfolio;
pub mod strategy;
pub mod tracker;
pub mod tsm;

pub use kelly::{cobra_bet, expected_log_growth, kelly_bet_bisection, Support};
pub use portfolio::{
    portfolio_grid, universal_portfolio_log_wealth, universal_portfolio_wealth, PortfolioGrid,
};
pub use strategy::{agrapa_bet, shrink_trunc_bet, BetStrategy, Bettor};
pub use tracker::{NullMean, NullTracker, SamplingMode};
pub use tsm::{p_value, tsm_step, Terminal, TsmState};
