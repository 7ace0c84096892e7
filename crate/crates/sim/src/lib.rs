//! Population generation and Monte Carlo stopping-time experiments for
//! ONEAudit betting tests.

pub mod error;
pub mod harness;
pub mod popgen;
pub mod presets;
pub mod report;

pub use error::{Result, SimError};
pub use harness::{
    draw_sample_stream, estimate_stopping, replication_seed, simulate, DesignKind, Method,
    PreparedTest, SamplingDesign, SimulationConfig, SimulationReport, StoppingSummary,
};
pub use popgen::{
    build_election, build_population, inject_tally_error, Election, ErrorModel,
    GeneratedPopulation, PopulationSpec,
};
pub use presets::{preset, run_scenarios, Scenario};
pub use report::{table_emit, write_reports};
