//! Risk-limiting audit engine for ONEAudit overstatement populations.
//!
//! Numerics are generic over [`Real`] (`f32` or `f64`); the aliases below fix
//! the scalar to `f64`, which is what the simulation and CLI crates use.

pub mod assorter;
pub mod audit;
pub mod betting;
pub mod error;
pub mod scalar;
pub mod stratified;

pub use assorter::{
    batch_cvr_pools, oneaudit_references, overstatement_assort, overstatement_population,
    overstatement_upper_bound, plurality_assorter, reported_margin, rescale, rescaled_null_mean,
    CardRecord, Vote,
};
pub use audit::{run_audit, AuditStatus, Escalation, SequentialAudit};
pub use betting::{kelly_bet_bisection, SamplingMode};
pub use error::{AuditError, Result};
pub use scalar::Real;

pub type Assorter = assorter::Assorter<f64>;
pub type ReferenceValueSet = assorter::ReferenceValueSet<f64>;
pub type AssorterPopulation = assorter::AssorterPopulation<f64>;
pub type BetStrategy = betting::BetStrategy<f64>;
pub type Bettor = betting::Bettor<f64>;
pub type TsmState = betting::TsmState<f64>;
pub type NullTracker = betting::NullTracker<f64>;
pub type Audit = audit::SequentialAudit<f64>;
pub type AuditOutcome = audit::AuditOutcome<f64>;
pub type StepRecord = audit::StepRecord<f64>;
pub type NullBand = stratified::NullBand<f64>;
pub type UitsState = stratified::UitsState<f64>;
