//! Discrete universal portfolio: a uniform mixture of constant-bet TSMs over an
//! equispaced grid of bets.
//!
//! Mixing wealths is the same as betting, at each step, the wealth-weighted
//! average of the grid bets, which is how [`PortfolioGrid`] turns the mixture
//! into a predictable single bet.

use crate::scalar::{log_sum_exp, Real};

/// Grid `lambda_j = (j / D) / eta`, `j = 1..=D`.
pub fn portfolio_grid<T: Real>(eta: T, grid_size: usize) -> Vec<T> {
    let d = T::from_count(grid_size);
    (1..=grid_size)
        .map(|j| T::from_count(j) / d / eta)
        .collect()
}

/// Log-wealth of every grid bet, kept in log space so long trajectories
/// neither overflow nor underflow.
#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioGrid<T> {
    bets: Vec<T>,
    log_wealth: Vec<T>,
}

impl<T: Real> PortfolioGrid<T> {
    pub fn new(eta: T, grid_size: usize) -> Self {
        let bets = portfolio_grid(eta, grid_size.max(1));
        let log_wealth = vec![T::zero(); bets.len()];
        Self { bets, log_wealth }
    }

    pub fn bets(&self) -> &[T] {
        &self.bets
    }

    /// Wealth-weighted average of the grid bets, each capped at `1/eta_j`.
    pub fn implied_bet(&self, eta_j: T) -> T {
        let cap = T::one() / eta_j;
        let top = self
            .log_wealth
            .iter()
            .copied()
            .fold(T::neg_infinity(), T::max);
        if top == T::neg_infinity() {
            return T::zero();
        }
        let (mut num, mut den) = (T::zero(), T::zero());
        for (&bet, &lw) in self.bets.iter().zip(&self.log_wealth) {
            let w = (lw - top).exp();
            num = num + w * bet.min(cap);
            den = den + w;
        }
        (num / den).max(T::zero()).min(cap)
    }

    pub fn observe(&mut self, x: T, eta_j: T) {
        let cap = T::one() / eta_j;
        for (&bet, lw) in self.bets.iter().zip(self.log_wealth.iter_mut()) {
            let factor = (T::one() + bet.min(cap) * (x - eta_j)).max(T::zero());
            *lw = *lw + factor.ln();
        }
    }

    /// Log of the mixture wealth `(1/D) sum_j W_j`.
    pub fn log_mixture_wealth(&self) -> T {
        log_sum_exp(&self.log_wealth) - T::from_count(self.bets.len()).ln()
    }
}

/// Mixture wealth `(1/D) sum_j prod_i [1 + lambda_j (X_i - eta)]` for a fixed
/// null mean.
pub fn universal_portfolio_wealth<T: Real>(draws: &[T], eta: T, grid_size: usize) -> T {
    universal_portfolio_log_wealth(draws, eta, grid_size).exp()
}

pub fn universal_portfolio_log_wealth<T: Real>(draws: &[T], eta: T, grid_size: usize) -> T {
    let mut grid = PortfolioGrid::new(eta, grid_size);
    for &x in draws {
        grid.observe(x, eta);
    }
    grid.log_mixture_wealth()
}
