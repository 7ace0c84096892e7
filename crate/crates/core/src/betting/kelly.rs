//! Kelly-optimal constant bets for a postulated population sampled IID.
//!
//! The bet maximises `E log[1 + lambda (X - eta)]` over `[0, 1/eta]`. The
//! objective is concave, so its derivative
//! `sum_i (x_i - eta) / (1 + lambda (x_i - eta))` is decreasing and the root
//! is bracketed by bisection.

use crate::assorter::AssorterPopulation;
use crate::scalar::Real;

const BISECTION_TOL: f64 = 1e-10;
const BISECTION_MAX_ITER: usize = 200;

/// Distinct population values with their probability mass.
#[derive(Debug, Clone, PartialEq)]
pub struct Support<T> {
    points: Vec<(T, T)>,
}

impl<T: Real> Support<T> {
    /// Groups equal values; overstatement populations have only a handful of
    /// distinct values, so this keeps bisection cheap for large `N`.
    pub fn from_values(values: &[T]) -> Self {
        let mut sorted: Vec<T> = values.iter().copied().filter(|x| !x.is_nan()).collect();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("NaN filtered"));
        let n = T::from_count(sorted.len().max(1));
        let mut points: Vec<(T, T)> = Vec::new();
        let mut i = 0;
        while i < sorted.len() {
            let mut j = i;
            while j < sorted.len() && sorted[j] == sorted[i] {
                j += 1;
            }
            points.push((sorted[i], T::from_count(j - i) / n));
            i = j;
        }
        Self { points }
    }

    /// Builds a support from `(value, mass)` pairs; masses are normalised.
    pub fn from_weighted(points: impl IntoIterator<Item = (T, T)>) -> Self {
        let points: Vec<(T, T)> = points.into_iter().filter(|&(_, w)| w > T::zero()).collect();
        let total = points.iter().fold(T::zero(), |acc, &(_, w)| acc + w);
        Self {
            points: points.into_iter().map(|(x, w)| (x, w / total)).collect(),
        }
    }

    pub fn points(&self) -> &[(T, T)] {
        &self.points
    }

    pub fn mean(&self) -> T {
        self.points
            .iter()
            .fold(T::zero(), |acc, &(x, w)| acc + w * x)
    }

    /// Derivative of the expected log growth at `bet`; `-inf` once some
    /// outcome would wipe out the wealth.
    pub fn growth_derivative(&self, eta: T, bet: T) -> T {
        let mut total = T::zero();
        for &(x, w) in &self.points {
            let d = x - eta;
            let denom = T::one() + bet * d;
            if denom <= T::zero() {
                if d < T::zero() {
                    return T::neg_infinity();
                }
                continue;
            }
            total = total + w * d / denom;
        }
        total
    }

    /// Expected log growth `E log[1 + bet (X - eta)]`.
    pub fn expected_log_growth(&self, eta: T, bet: T) -> T {
        self.points.iter().fold(T::zero(), |acc, &(x, w)| {
            let factor = (T::one() + bet * (x - eta)).max(T::zero());
            acc + w * factor.ln()
        })
    }

    /// Kelly bet on `[0, 1/eta]`; see [`kelly_bet_bisection`].
    pub fn kelly_bet(&self, eta: T) -> T {
        if self.points.is_empty() || !(eta > T::zero()) {
            return T::zero();
        }
        let max_bet = T::one() / eta;
        if self.growth_derivative(eta, T::zero()) <= T::zero() {
            return T::zero();
        }
        if self.growth_derivative(eta, max_bet) >= T::zero() {
            return max_bet;
        }
        let tol = T::lit(BISECTION_TOL).max(T::lit(4.0) * T::epsilon() * max_bet);
        let (mut lo, mut hi) = (T::zero(), max_bet);
        for _ in 0..BISECTION_MAX_ITER {
            if hi - lo <= tol {
                break;
            }
            let mid = T::half() * (lo + hi);
            if self.growth_derivative(eta, mid) > T::zero() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        T::half() * (lo + hi)
    }
}

/// A-priori (or oracle) Kelly bet for `postulated` at null mean `eta`.
///
/// Returns 0 when the game is not favourable and `1/eta` when the growth rate
/// is still increasing at the maximum bet.
pub fn kelly_bet_bisection<T: Real>(postulated: &AssorterPopulation<T>, eta: T) -> T {
    Support::from_values(postulated.values()).kelly_bet(eta)
}

pub fn expected_log_growth<T: Real>(values: &[T], eta: T, bet: T) -> T {
    Support::from_values(values).expected_log_growth(eta, bet)
}

/// Comparison-optimal bet for a rescaled population with 1-vote overstatement
/// rate `p1` and 2-vote overstatement rate `p2`, at reported margin `v`.
pub fn cobra_bet<T: Real>(margin: T, p1: T, p2: T) -> T {
    let eta = (T::two() - margin) / T::lit(4.0);
    let correct = (T::one() - p1 - p2).max(T::zero());
    Support::from_weighted([(T::half(), correct), (T::lit(0.25), p1), (T::zero(), p2)])
        .kelly_bet(eta)
}
