//! Sequential audit driver: bets, wealth updates and stopping rules composed
//! into a single stepper shared by simulations and live sessions.

use serde::{Deserialize, Serialize};

use crate::assorter::AssorterPopulation;
use crate::betting::{BetStrategy, Bettor, NullMean, NullTracker, SamplingMode, TsmState};
use crate::error::{AuditError, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Escalation {
    WealthExhausted,
    NullUnfalsifiable,
    PopulationExhausted,
    CapReached,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditStatus {
    InProgress,
    Confirmed,
    Escalate(Escalation),
}

impl AuditStatus {
    pub fn is_finished(self) -> bool {
        self != AuditStatus::InProgress
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord<T> {
    /// 1-based draw number.
    pub t: usize,
    pub x: T,
    pub eta_j: T,
    pub bet: T,
    pub wealth: T,
    pub log_wealth: T,
    pub p_value: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditOutcome<T> {
    /// Draws examined at confirmation, or `cap` when the audit escalates.
    pub stopping_time: usize,
    pub draws: usize,
    pub status: AuditStatus,
    pub trajectory: Vec<StepRecord<T>>,
}

impl<T> AuditOutcome<T> {
    pub fn confirmed(&self) -> bool {
        self.status == AuditStatus::Confirmed
    }
}

/// One audit in progress. Values are fed one draw at a time.
#[derive(Debug, Clone, PartialEq)]
pub struct SequentialAudit<T> {
    bettor: Bettor<T>,
    tracker: NullTracker<T>,
    state: TsmState<T>,
    alpha: T,
    cap: usize,
    status: AuditStatus,
}

impl<T: Real> SequentialAudit<T> {
    pub fn new(
        population: &AssorterPopulation<T>,
        strategy: &BetStrategy<T>,
        alpha: T,
        cap: usize,
        mode: SamplingMode,
    ) -> Result<Self> {
        if !(alpha > T::zero() && alpha < T::one()) {
            return Err(AuditError::invalid(
                "alpha",
                format!("{alpha} not in (0, 1)"),
            ));
        }
        if population.upper_bound() != T::one() {
            return Err(AuditError::invalid(
                "population",
                "audits run on rescaled populations with upper bound 1",
            ));
        }
        let bettor = strategy.prepare(population)?;
        let tracker = NullTracker::new(population.null_mean(), population.size(), mode);
        let cap = match mode {
            SamplingMode::WithoutReplacement => cap.min(population.size()),
            SamplingMode::WithReplacement => cap,
        };
        let status = if cap == 0 {
            AuditStatus::Escalate(Escalation::CapReached)
        } else {
            AuditStatus::InProgress
        };
        Ok(Self {
            bettor,
            tracker,
            state: TsmState::new(),
            alpha,
            cap,
            status,
        })
    }

    pub fn status(&self) -> AuditStatus {
        self.status
    }

    pub fn state(&self) -> &TsmState<T> {
        &self.state
    }

    pub fn bettor(&self) -> &Bettor<T> {
        &self.bettor
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn alpha(&self) -> T {
        self.alpha
    }

    pub fn p_value(&self) -> T {
        self.state.p_value()
    }

    /// Bet that will be placed on the next draw.
    pub fn next_bet(&self) -> Option<T> {
        let eta_j = self.tracker.current().open()?;
        Some(self.bettor.bet(&self.state, eta_j))
    }

    pub fn stopping_time(&self) -> usize {
        match self.status {
            AuditStatus::Confirmed => self.state.t(),
            _ => self.cap,
        }
    }

    /// Processes one rescaled draw.
    pub fn step(&mut self, x: T) -> Result<StepRecord<T>> {
        if self.status.is_finished() {
            return Err(AuditError::invalid("step", "audit already finished"));
        }
        let eta_j = match self.tracker.current() {
            NullMean::Open(eta) => eta,
            _ => unreachable!("status is updated whenever the null closes"),
        };
        let bet = self.bettor.bet(&self.state, eta_j);
        self.state.step(x, bet, eta_j)?;
        self.bettor.observe(x, eta_j);
        let next = self.tracker.null_mean_update(x);

        self.status = if self.state.p_value() <= self.alpha {
            AuditStatus::Confirmed
        } else {
            match next {
                NullMean::Impossible => {
                    self.state.mark_rejected_certain();
                    AuditStatus::Confirmed
                }
                NullMean::Unfalsifiable => {
                    self.state.freeze();
                    AuditStatus::Escalate(Escalation::NullUnfalsifiable)
                }
                NullMean::Exhausted => AuditStatus::Escalate(Escalation::PopulationExhausted),
                NullMean::Open(_) if self.state.log_wealth() == T::neg_infinity() => {
                    AuditStatus::Escalate(Escalation::WealthExhausted)
                }
                NullMean::Open(_) if self.state.t() >= self.cap => {
                    AuditStatus::Escalate(Escalation::CapReached)
                }
                NullMean::Open(_) => AuditStatus::InProgress,
            }
        };

        Ok(StepRecord {
            t: self.state.t(),
            x,
            eta_j,
            bet,
            wealth: self.state.wealth(),
            log_wealth: self.state.log_wealth(),
            p_value: self.state.p_value(),
        })
    }
}

/// Runs an audit over the population values addressed by `sample_stream`
/// until it confirms, escalates, or the stream runs out.
pub fn run_audit<T: Real>(
    population: &AssorterPopulation<T>,
    sample_stream: impl IntoIterator<Item = usize>,
    strategy: &BetStrategy<T>,
    alpha: T,
    cap: usize,
    mode: SamplingMode,
) -> Result<AuditOutcome<T>> {
    let mut audit = SequentialAudit::new(population, strategy, alpha, cap, mode)?;
    let values = population.values();
    let mut trajectory = Vec::new();
    for index in sample_stream {
        if audit.status().is_finished() {
            break;
        }
        let x = *values.get(index).ok_or_else(|| {
            AuditError::invalid("sample_stream", format!("index {index} out of range"))
        })?;
        trajectory.push(audit.step(x)?);
    }
    let status = match audit.status() {
        AuditStatus::InProgress => AuditStatus::Escalate(Escalation::CapReached),
        s => s,
    };
    Ok(AuditOutcome {
        stopping_time: if status == AuditStatus::Confirmed {
            audit.state().t()
        } else {
            audit.cap()
        },
        draws: audit.state().t(),
        status,
        trajectory,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pop(values: Vec<f64>, eta: f64) -> AssorterPopulation<f64> {
        AssorterPopulation::new(values, eta, 1.0).unwrap()
    }

    #[test]
    fn max_bet_on_all_ones_stops_at_four() {
        let p = pop(vec![1.0; 10], 0.45);
        let strategy = BetStrategy::Fixed { bet: 1.0 / 0.45 };
        let out = run_audit(
            &p,
            std::iter::repeat(0),
            &strategy,
            0.05,
            100,
            SamplingMode::WithReplacement,
        )
        .unwrap();
        assert!(out.confirmed());
        assert_eq!(out.stopping_time, 4);
        // (1/0.45)^3 < 20 <= (1/0.45)^4
        assert!((1.0f64 / 0.45).powi(3) < 20.0);
    }

    #[test]
    fn fair_population_runs_to_cap() {
        let p = pop(vec![0.45; 10], 0.45);
        let out = run_audit(
            &p,
            std::iter::repeat(3),
            &BetStrategy::agrapa(),
            0.05,
            250,
            SamplingMode::WithReplacement,
        )
        .unwrap();
        assert!(!out.confirmed());
        assert_eq!(out.stopping_time, 250);
        assert_eq!(out.draws, 250);
        assert!(out.trajectory.iter().all(|s| s.wealth == 1.0));
    }

    #[test]
    fn wealth_exhaustion_escalates() {
        let p = pop(vec![0.0, 1.0], 0.45);
        let strategy = BetStrategy::Fixed { bet: 1.0 / 0.45 };
        let out = run_audit(
            &p,
            [0, 1, 1, 1],
            &strategy,
            0.05,
            50,
            SamplingMode::WithReplacement,
        )
        .unwrap();
        assert_eq!(
            out.status,
            AuditStatus::Escalate(Escalation::WealthExhausted)
        );
        assert_eq!(out.stopping_time, 50);
        assert_eq!(out.draws, 1);
    }

    #[test]
    fn impossible_null_confirms_with_zero_p() {
        let p = pop(vec![0.9, 0.9], 0.4);
        let strategy = BetStrategy::Fixed { bet: 0.0 };
        let out = run_audit(
            &p,
            [0, 1],
            &strategy,
            0.05,
            2,
            SamplingMode::WithoutReplacement,
        )
        .unwrap();
        assert!(out.confirmed());
        assert_eq!(out.stopping_time, 1);
        assert_eq!(out.trajectory[0].p_value, 0.0);
    }

    #[test]
    fn stream_shorter_than_cap_escalates_at_cap() {
        let p = pop(vec![0.5; 4], 0.45);
        let out = run_audit(
            &p,
            [0, 1],
            &BetStrategy::OracleKelly,
            0.05,
            4,
            SamplingMode::WithoutReplacement,
        )
        .unwrap();
        assert_eq!(out.status, AuditStatus::Escalate(Escalation::CapReached));
        assert_eq!(out.stopping_time, 4);
    }

    #[test]
    fn finished_audit_refuses_more_draws() {
        let p = pop(vec![1.0; 3], 0.45);
        let mut audit = SequentialAudit::new(
            &p,
            &BetStrategy::Fixed { bet: 1.0 / 0.45 },
            0.05,
            10,
            SamplingMode::WithReplacement,
        )
        .unwrap();
        for _ in 0..4 {
            audit.step(1.0).unwrap();
        }
        assert_eq!(audit.status(), AuditStatus::Confirmed);
        assert!(audit.step(1.0).is_err());
    }

    #[test]
    fn rejects_bad_alpha() {
        let p = pop(vec![1.0; 3], 0.45);
        for alpha in [0.0, 1.0, -0.1] {
            assert!(SequentialAudit::new(
                &p,
                &BetStrategy::OracleKelly,
                alpha,
                10,
                SamplingMode::WithReplacement
            )
            .is_err());
        }
    }
}
