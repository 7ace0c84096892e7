//! Monte Carlo estimation of stopping times.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use oneaudit_core::audit::{AuditStatus, Escalation};
use oneaudit_core::betting::strategy::{DEFAULT_GRID_SIZE, DEFAULT_SHRINK_D};
use oneaudit_core::stratified::{
    band_partition, null_boundary, run_uits, RoundRobin, DEFAULT_BANDS,
};
use oneaudit_core::{
    kelly_bet_bisection, run_audit, AssorterPopulation, BetStrategy, NullBand, SamplingMode,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::popgen::GeneratedPopulation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignKind {
    SrsWithReplacement,
    SrsWithoutReplacement,
    StratifiedProportionalRoundRobin,
}

impl DesignKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DesignKind::SrsWithReplacement => "srs_with_replacement",
            DesignKind::SrsWithoutReplacement => "srs_without_replacement",
            DesignKind::StratifiedProportionalRoundRobin => "stratified_proportional_round_robin",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingDesign {
    pub kind: DesignKind,
    pub cap: usize,
}

impl SamplingDesign {
    pub fn with_replacement(cap: usize) -> Self {
        Self {
            kind: DesignKind::SrsWithReplacement,
            cap,
        }
    }

    pub fn without_replacement(cap: usize) -> Self {
        Self {
            kind: DesignKind::SrsWithoutReplacement,
            cap,
        }
    }

    pub fn stratified(cap: usize) -> Self {
        Self {
            kind: DesignKind::StratifiedProportionalRoundRobin,
            cap,
        }
    }

    pub fn mode(&self) -> SamplingMode {
        match self.kind {
            DesignKind::SrsWithoutReplacement => SamplingMode::WithoutReplacement,
            _ => SamplingMode::WithReplacement,
        }
    }
}

enum StreamKind {
    WithReplacement {
        n: usize,
    },
    /// Fisher-Yates with the permuted prefix held sparsely, so a short audit
    /// of a large population costs O(draws).
    WithoutReplacement {
        n: usize,
        swapped: HashMap<usize, usize>,
    },
    Stratified {
        members: Vec<Vec<usize>>,
        schedule: RoundRobin<f64>,
    },
}

/// Lazily drawn sample of population indices.
pub struct SampleStream<R> {
    kind: StreamKind,
    drawn: usize,
    len: usize,
    rng: R,
}

impl<R: Rng> Iterator for SampleStream<R> {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        if self.drawn >= self.len {
            return None;
        }
        let i = self.drawn;
        self.drawn += 1;
        let index = match &mut self.kind {
            StreamKind::WithReplacement { n } => self.rng.random_range(0..*n),
            StreamKind::WithoutReplacement { n, swapped } => {
                let j = self.rng.random_range(i..*n);
                let at_j = swapped.get(&j).copied().unwrap_or(j);
                let at_i = swapped.remove(&i).unwrap_or(i);
                if j != i {
                    swapped.insert(j, at_i);
                }
                at_j
            }
            StreamKind::Stratified { members, schedule } => {
                let k = schedule.next()?;
                let pool = &members[k];
                pool[self.rng.random_range(0..pool.len())]
            }
        };
        Some(index)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.len - self.drawn;
        (left, Some(left))
    }
}

/// Members of each stratum, in population order.
fn stratum_members(population: &AssorterPopulation) -> Result<Vec<Vec<usize>>> {
    let labels = population.labels().ok_or_else(|| {
        SimError::InvalidConfig("stratified sampling needs a labelled population".into())
    })?;
    let strata = labels.iter().max().map_or(0, |&m| m as usize + 1);
    let mut members = vec![Vec::new(); strata];
    for (i, &l) in labels.iter().enumerate() {
        members[l as usize].push(i);
    }
    Ok(members)
}

/// Sample stream for one replication. Stratified designs draw with
/// replacement within each stratum and interleave strata in proportion to
/// their sizes.
pub fn draw_sample_stream<R: Rng>(
    design: &SamplingDesign,
    population: &AssorterPopulation,
    rng: R,
) -> Result<SampleStream<R>> {
    let n = population.size();
    let (kind, len) = match design.kind {
        DesignKind::SrsWithReplacement => (StreamKind::WithReplacement { n }, design.cap),
        DesignKind::SrsWithoutReplacement => (
            StreamKind::WithoutReplacement {
                n,
                swapped: HashMap::new(),
            },
            design.cap.min(n),
        ),
        DesignKind::StratifiedProportionalRoundRobin => {
            let members = stratum_members(population)?;
            let weights: Vec<f64> = members.iter().map(|m| m.len() as f64 / n as f64).collect();
            (
                StreamKind::Stratified {
                    members,
                    schedule: RoundRobin::new(&weights),
                },
                design.cap,
            )
        }
    };
    Ok(SampleStream {
        kind,
        drawn: 0,
        len,
        rng,
    })
}

/// Seed of replication `rep`: two rounds of the splitmix64 finalizer over
/// the master seed and the replication index.
pub fn replication_seed(master_seed: u64, rep: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(master_seed ^ mix(rep))
}

/// A test as the harness runs it: a betting TSM, or the stratified UI-TS.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Method {
    OracleKelly,
    AprioriKelly,
    Agrapa,
    UniversalPortfolio {
        grid_size: usize,
    },
    ShrinkTrunc,
    Cobra,
    /// UI-TS over the CVR/batch strata with oracle Kelly bets per band.
    StratifiedUits {
        bands: usize,
    },
}

impl Method {
    /// The betting strategies compared on unstratified samples.
    pub fn betting_suite() -> Vec<Method> {
        vec![
            Method::OracleKelly,
            Method::AprioriKelly,
            Method::UniversalPortfolio {
                grid_size: DEFAULT_GRID_SIZE,
            },
            Method::Agrapa,
            Method::ShrinkTrunc,
            Method::Cobra,
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            Method::OracleKelly => "oracle_kelly",
            Method::AprioriKelly => "apriori_kelly",
            Method::Agrapa => "agrapa",
            Method::UniversalPortfolio { .. } => "universal_portfolio",
            Method::ShrinkTrunc => "shrink_trunc",
            Method::Cobra => "cobra",
            Method::StratifiedUits { .. } => "stratified_uits",
        }
    }

    pub fn with_grid_size(self, grid_size: usize) -> Self {
        match self {
            Method::UniversalPortfolio { .. } => Method::UniversalPortfolio { grid_size },
            m => m,
        }
    }

    pub fn with_bands(self, bands: usize) -> Self {
        match self {
            Method::StratifiedUits { .. } => Method::StratifiedUits { bands },
            m => m,
        }
    }

    /// Binds the method to a generated population. Constant bets are solved
    /// once here rather than per replication.
    pub fn prepare(&self, generated: &GeneratedPopulation) -> Result<PreparedTest> {
        let population = &generated.population;
        let eta = population.null_mean();
        let tsm = |strategy: BetStrategy| Ok(PreparedTest::Tsm(strategy));
        match *self {
            Method::OracleKelly => tsm(BetStrategy::Fixed {
                bet: kelly_bet_bisection(population, eta),
            }),
            Method::AprioriKelly => tsm(BetStrategy::Fixed {
                bet: kelly_bet_bisection(&generated.postulated, eta),
            }),
            Method::Agrapa => tsm(BetStrategy::agrapa()),
            Method::UniversalPortfolio { grid_size } => {
                tsm(BetStrategy::UniversalPortfolio { grid_size })
            }
            Method::ShrinkTrunc => tsm(BetStrategy::ShrinkTrunc {
                d: DEFAULT_SHRINK_D,
                c: None,
                eta0: generated.postulated.mean(),
            }),
            Method::Cobra => {
                let bettor = BetStrategy::cobra().prepare(population)?;
                tsm(BetStrategy::Fixed {
                    bet: bettor.fixed_bet().unwrap_or(0.0),
                })
            }
            Method::StratifiedUits { bands } => {
                let segment = null_boundary(generated.weights(), eta)?;
                let strata = &generated.strata;
                let bands =
                    band_partition(&segment, bands, [strata[0].values(), strata[1].values()])?;
                Ok(PreparedTest::Uits(UitsSetup::new(population, bands)?))
            }
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(
            match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
                "oracle_kelly" | "oracle" | "kelly" => Method::OracleKelly,
                "apriori_kelly" | "ap_kelly" | "apriori" => Method::AprioriKelly,
                "agrapa" => Method::Agrapa,
                "universal_portfolio" | "up" => Method::UniversalPortfolio {
                    grid_size: DEFAULT_GRID_SIZE,
                },
                "shrink_trunc" | "truncated_shrinkage" => Method::ShrinkTrunc,
                "cobra" => Method::Cobra,
                "stratified_uits" | "uits" => Method::StratifiedUits {
                    bands: DEFAULT_BANDS,
                },
                other => return Err(format!("unknown strategy `{other}`")),
            },
        )
    }
}

/// Band bets plus the map from population index to (stratum, index within
/// stratum).
#[derive(Debug, Clone)]
pub struct UitsSetup {
    pub bands: Vec<NullBand>,
    strata: [AssorterPopulation; 2],
    position: Vec<(usize, usize)>,
}

impl UitsSetup {
    pub fn new(population: &AssorterPopulation, bands: Vec<NullBand>) -> Result<Self> {
        let members = stratum_members(population)?;
        if members.len() != 2 {
            return Err(SimError::InvalidConfig(format!(
                "the UI-TS needs exactly two strata, found {}",
                members.len()
            )));
        }
        let mut position = vec![(0, 0); population.size()];
        for (k, m) in members.iter().enumerate() {
            for (local, &i) in m.iter().enumerate() {
                position[i] = (k, local);
            }
        }
        let strata = [0, 1].map(|k| population.stratum(k as u32).expect("non-empty stratum"));
        Ok(Self {
            bands,
            strata,
            position,
        })
    }
}

#[derive(Debug, Clone)]
pub enum PreparedTest {
    Tsm(BetStrategy),
    Uits(UitsSetup),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Replication {
    pub stopping_time: usize,
    pub confirmed: bool,
    pub capped: bool,
}

/// Runs one replication with its own seeded stream.
pub fn run_replication(
    population: &AssorterPopulation,
    test: &PreparedTest,
    design: &SamplingDesign,
    alpha: f64,
    seed: u64,
) -> Result<Replication> {
    let stream = draw_sample_stream(design, population, ChaCha8Rng::seed_from_u64(seed))?;
    let (stopping_time, status) = match test {
        PreparedTest::Tsm(strategy) => {
            let out = run_audit(
                population,
                stream,
                strategy,
                alpha,
                design.cap,
                design.mode(),
            )?;
            (out.stopping_time, out.status)
        }
        PreparedTest::Uits(setup) => {
            let stream = stream.map(|i| setup.position[i]);
            let strata = [&setup.strata[0], &setup.strata[1]];
            let out = run_uits(strata, setup.bands.clone(), stream, alpha, design.cap)?;
            (out.stopping_time, out.status)
        }
    };
    Ok(Replication {
        stopping_time,
        confirmed: status == AuditStatus::Confirmed,
        capped: matches!(
            status,
            AuditStatus::Escalate(Escalation::CapReached | Escalation::PopulationExhausted)
        ),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub replications: usize,
    pub alpha: f64,
    pub master_seed: u64,
    pub design: SamplingDesign,
    pub strategies: Vec<Method>,
}

impl SimulationConfig {
    pub fn validate(&self, population_size: usize) -> Result<()> {
        if self.replications == 0 {
            return Err(SimError::InvalidConfig(
                "replications must be at least 1".into(),
            ));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(SimError::InvalidConfig(format!(
                "alpha = {} is not in (0, 1)",
                self.alpha
            )));
        }
        if self.design.cap == 0 {
            return Err(SimError::InvalidConfig("cap must be at least 1".into()));
        }
        if self.design.kind == DesignKind::SrsWithoutReplacement
            && self.design.cap > population_size
        {
            return Err(SimError::InvalidConfig(format!(
                "cap = {} exceeds N = {population_size} for sampling without replacement",
                self.design.cap
            )));
        }
        Ok(())
    }
}

/// Stopping-time summary over replications.
#[derive(Debug, Clone, PartialEq)]
pub struct StoppingSummary {
    pub mean: f64,
    /// Sample standard deviation of the stopping times.
    pub sd: f64,
    pub q90: usize,
    pub capped_fraction: f64,
    pub rejection_rate: f64,
    pub reps: usize,
    pub seed: u64,
}

/// Nearest-rank empirical quantile of unsorted data.
pub fn nearest_rank_quantile(data: &[usize], q: f64) -> usize {
    if data.is_empty() {
        return 0;
    }
    let mut sorted = data.to_vec();
    sorted.sort_unstable();
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// Runs `config.replications` replications in parallel. Replication `r`
/// uses [`replication_seed`]`(master_seed, r)` whatever the test, so
/// different tests see the same samples.
pub fn estimate_stopping(
    config: &SimulationConfig,
    population: &AssorterPopulation,
    test: &PreparedTest,
) -> Result<StoppingSummary> {
    config.validate(population.size())?;
    let reps: Vec<Replication> = (0..config.replications as u64)
        .into_par_iter()
        .map(|r| {
            let seed = replication_seed(config.master_seed, r);
            run_replication(population, test, &config.design, config.alpha, seed)
        })
        .collect::<Result<_>>()?;
    let n = reps.len() as f64;
    let times: Vec<usize> = reps.iter().map(|r| r.stopping_time).collect();
    let mean = times.iter().map(|&t| t as f64).sum::<f64>() / n;
    let ss = times
        .iter()
        .map(|&t| (t as f64 - mean).powi(2))
        .sum::<f64>();
    Ok(StoppingSummary {
        mean,
        sd: if reps.len() > 1 {
            (ss / (n - 1.0)).sqrt()
        } else {
            0.0
        },
        q90: nearest_rank_quantile(&times, 0.9),
        capped_fraction: reps.iter().filter(|r| r.capped).count() as f64 / n,
        rejection_rate: reps.iter().filter(|r| r.confirmed).count() as f64 / n,
        reps: reps.len(),
        seed: config.master_seed,
    })
}

/// One row of a results table.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationReport {
    pub reported_mean: f64,
    pub true_mean: f64,
    pub across_gap: f64,
    pub within_gap: f64,
    pub strategy: String,
    pub design: DesignKind,
    pub summary: StoppingSummary,
}

/// Runs every strategy of `config` on one generated population.
pub fn simulate(
    config: &SimulationConfig,
    generated: &GeneratedPopulation,
) -> Result<Vec<SimulationReport>> {
    config.validate(generated.size())?;
    config
        .strategies
        .iter()
        .map(|method| {
            let test = method.prepare(generated)?;
            let summary = estimate_stopping(config, &generated.population, &test)?;
            Ok(SimulationReport {
                reported_mean: generated.spec.reported_mean,
                true_mean: generated.spec.true_mean(),
                across_gap: generated.spec.across_gap,
                within_gap: generated.spec.within_gap,
                strategy: method.name().to_string(),
                design: config.design.kind,
                summary,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pop(n: usize) -> AssorterPopulation {
        AssorterPopulation::new(vec![0.5; n], 0.45, 1.0).unwrap()
    }

    #[test]
    fn single_card_with_replacement() {
        let s = draw_sample_stream(
            &SamplingDesign::with_replacement(50),
            &pop(1),
            ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        assert_eq!(s.collect::<Vec<_>>(), vec![0; 50]);
    }

    #[test]
    fn full_draw_without_replacement_is_a_permutation() {
        for seed in 0..20 {
            let mut s: Vec<usize> = draw_sample_stream(
                &SamplingDesign::without_replacement(1000),
                &pop(37),
                ChaCha8Rng::seed_from_u64(seed),
            )
            .unwrap()
            .collect();
            assert_eq!(s.len(), 37);
            s.sort_unstable();
            assert_eq!(s, (0..37).collect::<Vec<_>>());
        }
    }

    #[test]
    fn streams_replay() {
        let design = SamplingDesign::without_replacement(100);
        let a: Vec<usize> = draw_sample_stream(&design, &pop(500), ChaCha8Rng::seed_from_u64(9))
            .unwrap()
            .collect();
        let b: Vec<usize> = draw_sample_stream(&design, &pop(500), ChaCha8Rng::seed_from_u64(9))
            .unwrap()
            .collect();
        assert_eq!(a, b);
    }

    #[test]
    fn stratified_stream_alternates_strata() {
        let p = pop(6).with_labels(vec![0, 1, 0, 1, 0, 1]).unwrap();
        let s: Vec<usize> = draw_sample_stream(
            &SamplingDesign::stratified(10),
            &p,
            ChaCha8Rng::seed_from_u64(2),
        )
        .unwrap()
        .collect();
        let strata: Vec<usize> = s.iter().map(|i| i % 2).collect();
        assert_eq!(strata, vec![0, 1, 0, 1, 0, 1, 0, 1, 0, 1]);
    }

    #[test]
    fn quantile_nearest_rank() {
        let data: Vec<usize> = (1..=10).collect();
        assert_eq!(nearest_rank_quantile(&data, 0.9), 9);
        assert_eq!(nearest_rank_quantile(&[5], 0.9), 5);
        assert_eq!(
            nearest_rank_quantile(&(1..=1000).rev().collect::<Vec<_>>(), 0.9),
            900
        );
    }

    #[test]
    fn all_ones_stop_at_four() {
        let p = AssorterPopulation::new(vec![1.0; 10], 0.45, 1.0).unwrap();
        let config = SimulationConfig {
            replications: 50,
            alpha: 0.05,
            master_seed: 3,
            design: SamplingDesign::with_replacement(100),
            strategies: vec![],
        };
        let test = PreparedTest::Tsm(BetStrategy::Fixed { bet: 1.0 / 0.45 });
        let s = estimate_stopping(&config, &p, &test).unwrap();
        assert_eq!(s.mean, 4.0);
        assert_eq!(s.q90, 4);
        assert_eq!(s.rejection_rate, 1.0);
        assert_eq!(s.capped_fraction, 0.0);
    }

    #[test]
    fn config_validation() {
        let mut config = SimulationConfig {
            replications: 1,
            alpha: 0.0,
            master_seed: 0,
            design: SamplingDesign::with_replacement(10),
            strategies: vec![],
        };
        assert!(config.validate(10).is_err());
        config.alpha = 0.05;
        assert!(config.validate(10).is_ok());
        config.design = SamplingDesign::without_replacement(11);
        assert!(config.validate(10).is_err());
        config.design.cap = 10;
        config.replications = 0;
        assert!(config.validate(10).is_err());
    }

    #[test]
    fn method_names_round_trip() {
        let mut all = Method::betting_suite();
        all.push(Method::StratifiedUits {
            bands: DEFAULT_BANDS,
        });
        for m in all {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("martingale".parse::<Method>().is_err());
    }
}
