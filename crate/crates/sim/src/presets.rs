//! Named experiment grids.
//!
//! `table1` compares the unstratified oracle-Kelly TSM (sampling with
//! replacement) to the stratified UI-TS on 20,000 cards. `table2-*` compares
//! the betting strategies under sampling without replacement, on 200,000
//! cards (`full`) or 20,000 cards (`desk`).

use oneaudit_core::stratified::DEFAULT_BANDS;

use crate::error::Result;
use crate::harness::{simulate, Method, SamplingDesign, SimulationConfig, SimulationReport};
use crate::popgen::{build_population, ErrorModel, PopulationSpec};

pub const DEFAULT_ALPHA: f64 = 0.05;
pub const DEFAULT_SEED: u64 = 20_250_301;

pub const REPORTED_MEANS: [f64; 4] = [0.505, 0.51, 0.55, 0.6];
pub const GAPS: [(f64, f64); 4] = [(0.0, 0.0), (0.0, 0.5), (0.5, 0.0), (0.5, 0.5)];

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub population: PopulationSpec,
    pub config: SimulationConfig,
}

pub fn table1_spec(reported_mean: f64, across_gap: f64, within_gap: f64) -> PopulationSpec {
    PopulationSpec::new(reported_mean, across_gap, within_gap, 10_000, 10_000, 1_000)
}

pub fn table2_full_spec(reported_mean: f64, across_gap: f64, within_gap: f64) -> PopulationSpec {
    PopulationSpec::new(
        reported_mean,
        across_gap,
        within_gap,
        100_000,
        100_000,
        1_000,
    )
}

pub fn table2_desk_spec(reported_mean: f64, across_gap: f64, within_gap: f64) -> PopulationSpec {
    table1_spec(reported_mean, across_gap, within_gap)
}

/// Unstratified and stratified runs for one population, sharing seeds.
pub fn table1_scenarios(spec: PopulationSpec, reps: usize, seed: u64) -> Vec<Scenario> {
    let cap = spec.total_cards();
    let config = |design, method| SimulationConfig {
        replications: reps,
        alpha: DEFAULT_ALPHA,
        master_seed: seed,
        design,
        strategies: vec![method],
    };
    vec![
        Scenario {
            population: spec.clone(),
            config: config(SamplingDesign::with_replacement(cap), Method::OracleKelly),
        },
        Scenario {
            population: spec,
            config: config(
                SamplingDesign::stratified(cap),
                Method::StratifiedUits {
                    bands: DEFAULT_BANDS,
                },
            ),
        },
    ]
}

/// Every betting strategy on one population, without replacement.
pub fn table2_scenario(spec: PopulationSpec, reps: usize, seed: u64) -> Scenario {
    Scenario {
        config: SimulationConfig {
            replications: reps,
            alpha: DEFAULT_ALPHA,
            master_seed: seed,
            design: SamplingDesign::without_replacement(spec.total_cards()),
            strategies: Method::betting_suite(),
        },
        population: spec,
    }
}

fn parse_table1_row(rest: &str) -> Option<(f64, f64, f64)> {
    let parts: Vec<f64> = rest
        .split('-')
        .map(|p| p.parse().ok())
        .collect::<Option<_>>()?;
    match parts[..] {
        [m] => Some((m, 0.0, 0.0)),
        [m, a, w] => Some((m, a, w)),
        _ => None,
    }
}

/// Scenarios of a named preset, or `None` for an unknown name.
///
/// Names: `table1`, `table1-<mean>[-<across>-<within>]`, `table2-desk`,
/// `table2-spot`, `table2-full`.
pub fn preset(name: &str, seed: u64) -> Option<Vec<Scenario>> {
    let grid = |means: &[f64]| -> Vec<(f64, f64, f64)> {
        means
            .iter()
            .flat_map(|&m| GAPS.iter().map(move |&(a, w)| (m, a, w)))
            .collect()
    };
    let scenarios = match name {
        "table1" => grid(&REPORTED_MEANS)
            .into_iter()
            .flat_map(|(m, a, w)| table1_scenarios(table1_spec(m, a, w), 1_000, seed))
            .collect(),
        "table2-desk" => grid(&[0.55, 0.6])
            .into_iter()
            .map(|(m, a, w)| table2_scenario(table2_desk_spec(m, a, w), 500, seed))
            .collect(),
        "table2-spot" => [0.55, 0.6]
            .into_iter()
            .map(|m| table2_scenario(table2_full_spec(m, 0.0, 0.0), 1_000, seed))
            .collect(),
        "table2-full" => REPORTED_MEANS
            .iter()
            .flat_map(|&m| {
                [ErrorModel::HalveMargin, ErrorModel::None]
                    .into_iter()
                    .flat_map(move |e| GAPS.iter().map(move |&(a, w)| (m, e, a, w)))
            })
            .map(|(m, e, a, w)| {
                table2_scenario(table2_full_spec(m, a, w).with_error_model(e), 1_000, seed)
            })
            .collect(),
        _ => {
            let (m, a, w) = parse_table1_row(name.strip_prefix("table1-")?)?;
            table1_scenarios(table1_spec(m, a, w), 1_000, seed)
        }
    };
    Some(scenarios)
}

/// Generates each scenario's population and runs its strategies, reusing
/// the population across consecutive scenarios with the same spec.
pub fn run_scenarios(scenarios: &[Scenario]) -> Result<Vec<SimulationReport>> {
    let mut reports = Vec::new();
    let mut cached = None;
    for scenario in scenarios {
        let generated = match cached.take() {
            Some((spec, g)) if spec == scenario.population => (spec, g),
            _ => (
                scenario.population.clone(),
                build_population(&scenario.population)?,
            ),
        };
        reports.extend(simulate(&scenario.config, &generated.1)?);
        cached = Some(generated);
    }
    Ok(reports)
}
