use serde::{Deserialize, Serialize};

use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    WithReplacement,
    WithoutReplacement,
}

/// Conditional null mean for the next draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NullMean<T> {
    Open(T),
    /// The observed draws already exceed the null total: the null is false.
    Impossible,
    /// The conditional null mean reached the upper bound, so no future draw
    /// can count as evidence against it.
    Unfalsifiable,
    /// Every card has been drawn without contradicting the null.
    Exhausted,
}

impl<T: Real> NullMean<T> {
    pub fn open(self) -> Option<T> {
        match self {
            NullMean::Open(eta) => Some(eta),
            _ => None,
        }
    }
}

/// Tracks the null mean of the not-yet-drawn part of the population.
///
/// With replacement the null mean is constant. Without replacement, before
/// draw `j` it is `(N eta - sum_{l<j} X_l) / (N - j + 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NullTracker<T> {
    eta0: T,
    total_null: T,
    running_sum: T,
    n_drawn: usize,
    population_size: usize,
    upper_bound: T,
    mode: SamplingMode,
}

impl<T: Real> NullTracker<T> {
    pub fn new(eta0: T, population_size: usize, mode: SamplingMode) -> Self {
        Self {
            eta0,
            total_null: T::from_count(population_size) * eta0,
            running_sum: T::zero(),
            n_drawn: 0,
            population_size,
            upper_bound: T::one(),
            mode,
        }
    }

    pub fn eta0(&self) -> T {
        self.eta0
    }

    pub fn mode(&self) -> SamplingMode {
        self.mode
    }

    pub fn n_drawn(&self) -> usize {
        self.n_drawn
    }

    pub fn population_size(&self) -> usize {
        self.population_size
    }

    pub fn running_sum(&self) -> T {
        self.running_sum
    }

    /// Rounding slack on the remaining null total; sums over large
    /// populations drift by a few ulps of the total.
    fn slack(&self) -> T {
        T::lit(1024.0) * T::epsilon() * self.total_null.max(T::one())
    }

    /// Null mean in force for the next draw.
    pub fn current(&self) -> NullMean<T> {
        match self.mode {
            SamplingMode::WithReplacement => NullMean::Open(self.eta0),
            SamplingMode::WithoutReplacement => {
                let remaining_total = self.total_null - self.running_sum;
                if remaining_total < -self.slack() {
                    return NullMean::Impossible;
                }
                let remaining = self.population_size.saturating_sub(self.n_drawn);
                if remaining == 0 {
                    return NullMean::Exhausted;
                }
                let eta = remaining_total.max(T::zero()) / T::from_count(remaining);
                if eta >= self.upper_bound {
                    NullMean::Unfalsifiable
                } else {
                    NullMean::Open(eta)
                }
            }
        }
    }

    /// Records draw `x` and returns the null mean for the following draw.
    pub fn null_mean_update(&mut self, x: T) -> NullMean<T> {
        self.running_sum = self.running_sum + x;
        self.n_drawn += 1;
        self.current()
    }
}
