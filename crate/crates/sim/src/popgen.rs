//! Two-stratum ONEAudit elections: a stratum of cards with linked CVRs and a
//! stratum of reporting batches, parameterized by the global reported mean
//! and the across/within gaps.

use oneaudit_core::{
    batch_cvr_pools, oneaudit_references, overstatement_population, plurality_assorter, rescale,
    AssorterPopulation, CardRecord, ReferenceValueSet, Vote,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{infeasible, Result};

pub const CVR_STRATUM: u32 = 0;
pub const BATCH_STRATUM: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorModel {
    #[default]
    None,
    /// Batch tallies overstate the winner so the true margin is half the
    /// reported one.
    HalveMargin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationSpec {
    pub reported_mean: f64,
    pub across_gap: f64,
    pub within_gap: f64,
    pub n_cvr: usize,
    pub n_batch_cards: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub error_model: ErrorModel,
    #[serde(default)]
    pub seed: u64,
}

impl PopulationSpec {
    /// Error-free spec with the given shape.
    pub fn new(
        reported_mean: f64,
        across_gap: f64,
        within_gap: f64,
        n_cvr: usize,
        n_batch_cards: usize,
        batch_size: usize,
    ) -> Self {
        Self {
            reported_mean,
            across_gap,
            within_gap,
            n_cvr,
            n_batch_cards,
            batch_size,
            error_model: ErrorModel::None,
            seed: 0,
        }
    }

    pub fn with_error_model(mut self, error_model: ErrorModel) -> Self {
        self.error_model = error_model;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn total_cards(&self) -> usize {
        self.n_cvr + self.n_batch_cards
    }

    pub fn n_batches(&self) -> usize {
        self.n_batch_cards.checked_div(self.batch_size).unwrap_or(0)
    }

    pub fn cvr_stratum_mean(&self) -> f64 {
        self.reported_mean + self.across_gap / 2.0
    }

    pub fn batch_stratum_mean(&self) -> f64 {
        self.reported_mean - self.across_gap / 2.0
    }

    /// Reported batch means, an arithmetic progression over
    /// `[m - within_gap/2, m + within_gap/2]`.
    pub fn batch_means(&self) -> Vec<f64> {
        let m = self.batch_stratum_mean();
        let n = self.n_batches();
        if n <= 1 {
            return vec![m; n];
        }
        let lo = m - self.within_gap / 2.0;
        let step = self.within_gap / (n - 1) as f64;
        (0..n).map(|b| lo + step * b as f64).collect()
    }

    /// Target true assorter mean under the error model.
    pub fn true_mean(&self) -> f64 {
        match self.error_model {
            ErrorModel::None => self.reported_mean,
            ErrorModel::HalveMargin => halved_margin_mean(self.reported_mean),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, x: f64| {
            if (0.0..=1.0).contains(&x) {
                Ok(())
            } else {
                Err(infeasible(format!("{name} = {x} is outside [0, 1]")))
            }
        };
        unit("reported_mean", self.reported_mean)?;
        if !(self.across_gap >= 0.0 && self.within_gap >= 0.0) {
            return Err(infeasible("gaps must be non-negative"));
        }
        if self.n_cvr == 0 || self.n_batch_cards == 0 {
            return Err(infeasible("both strata need at least one card"));
        }
        if self.batch_size == 0 || !self.n_batch_cards.is_multiple_of(self.batch_size) {
            return Err(infeasible(format!(
                "n_batch_cards = {} is not divisible by batch_size = {}",
                self.n_batch_cards, self.batch_size
            )));
        }
        unit("CVR stratum mean", self.cvr_stratum_mean())?;
        unit("batch stratum mean", self.batch_stratum_mean())?;
        for (b, m) in self.batch_means().into_iter().enumerate() {
            unit(&format!("mean of batch {b}"), m)?;
        }
        Ok(())
    }
}

/// Half-way between the reported mean and 1/2.
pub fn halved_margin_mean(reported_mean: f64) -> f64 {
    (reported_mean + 0.5) / 2.0
}

/// Cards with their reported (CVR) votes and the votes a manual inspection
/// would find.
#[derive(Debug, Clone, PartialEq)]
pub struct Election {
    pub spec: PopulationSpec,
    pub cards: Vec<CardRecord>,
    pub mvr_votes: Vec<Vote>,
}

fn batch_id(b: usize) -> String {
    format!("b{b:03}")
}

fn votes_for(winners: usize, size: usize, rng: &mut ChaCha8Rng) -> Vec<Vote> {
    let mut votes: Vec<Vote> = (0..size)
        .map(|i| {
            if i < winners {
                Vote::Winner
            } else {
                Vote::Loser
            }
        })
        .collect();
    votes.shuffle(rng);
    votes
}

/// Winner count `round(mean * size)`.
fn rounded_count(mean: f64, size: usize) -> usize {
    (mean * size as f64).round() as usize
}

/// Error-free election for `spec`; every MVR matches its CVR.
pub fn build_election(spec: &PopulationSpec) -> Result<Election> {
    spec.validate()?;
    let n = spec.total_cards();
    let cvr_winners = rounded_count(spec.cvr_stratum_mean(), spec.n_cvr);
    let mut batch_winners: Vec<usize> = spec
        .batch_means()
        .iter()
        .map(|&m| rounded_count(m, spec.batch_size))
        .collect();

    // the residual goes to the last batch so the global count is exact
    let target = rounded_count(spec.reported_mean, n) as i64;
    let have = (cvr_winners + batch_winners.iter().sum::<usize>()) as i64;
    if (target - have).unsigned_abs() as usize > batch_winners.len() + 1 {
        return Err(infeasible(format!(
            "stratum means {} and {} do not average to reported_mean = {} with {} CVR and {} batch cards",
            spec.cvr_stratum_mean(),
            spec.batch_stratum_mean(),
            spec.reported_mean,
            spec.n_cvr,
            spec.n_batch_cards
        )));
    }
    let last = batch_winners.last_mut().expect("validated non-empty");
    let adjusted = *last as i64 + target - have;
    if adjusted < 0 || adjusted > spec.batch_size as i64 {
        return Err(infeasible(format!(
            "rounding residual {} does not fit in the last batch",
            target - have
        )));
    }
    *last = adjusted as usize;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut cards = Vec::with_capacity(n);
    for (i, vote) in votes_for(cvr_winners, spec.n_cvr, &mut rng)
        .into_iter()
        .enumerate()
    {
        cards.push(CardRecord::linked(format!("cvr-{i:06}"), vote));
    }
    for (b, &winners) in batch_winners.iter().enumerate() {
        let id = batch_id(b);
        for (j, vote) in votes_for(winners, spec.batch_size, &mut rng)
            .into_iter()
            .enumerate()
        {
            cards.push(CardRecord::batched(
                format!("{id}-{j:04}"),
                id.clone(),
                vote,
            ));
        }
    }
    let mvr_votes = cards.iter().map(|c| c.vote).collect();
    Ok(Election {
        spec: spec.clone(),
        cards,
        mvr_votes,
    })
}

impl Election {
    pub fn len(&self) -> usize {
        self.cards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cards.is_empty()
    }

    fn mean_of(votes: impl Iterator<Item = Vote>, n: usize) -> f64 {
        let a = plurality_assorter::<f64>();
        votes.map(|v| a.value(v)).sum::<f64>() / n as f64
    }

    pub fn reported_mean(&self) -> f64 {
        Self::mean_of(self.cards.iter().map(|c| c.vote), self.len())
    }

    pub fn true_mean(&self) -> f64 {
        Self::mean_of(self.mvr_votes.iter().copied(), self.len())
    }

    /// Flips `winner` MVRs to `loser` in batch cards until the true mean is
    /// `round(target * N) / N`. Flips are apportioned across batches by
    /// largest remainder on batch size; CVRs and reported tallies are left
    /// alone.
    pub fn with_true_mean(&self, target: f64) -> Result<Election> {
        let n = self.len();
        let current: usize = self
            .mvr_votes
            .iter()
            .filter(|&&v| v == Vote::Winner)
            .count();
        let goal = rounded_count(target, n);
        if goal > current {
            return Err(infeasible(format!(
                "target true mean {target} is above the current true mean {}",
                self.true_mean()
            )));
        }
        let flips = current - goal;

        // positions of batch cards, grouped per batch in card order
        let mut batches: Vec<(String, Vec<usize>)> = Vec::new();
        for (i, card) in self.cards.iter().enumerate() {
            if let Some(id) = &card.batch_id {
                match batches.last_mut() {
                    Some((last, members)) if last == id => members.push(i),
                    _ => batches.push((id.clone(), vec![i])),
                }
            }
        }
        let batch_cards: usize = batches.iter().map(|(_, m)| m.len()).sum();
        let available: Vec<usize> = batches
            .iter()
            .map(|(_, m)| {
                m.iter()
                    .filter(|&&i| self.mvr_votes[i] == Vote::Winner)
                    .count()
            })
            .collect();
        if flips > available.iter().sum::<usize>() {
            return Err(infeasible(format!(
                "{flips} winner-to-loser flips needed but the batch stratum has only {} winner votes",
                available.iter().sum::<usize>()
            )));
        }

        let sizes: Vec<usize> = batches.iter().map(|(_, m)| m.len()).collect();
        let mut quota = largest_remainder(flips, &sizes, batch_cards);
        // batches short of winners pass the overflow on, in batch order
        let mut overflow = 0;
        for (q, &avail) in quota.iter_mut().zip(&available) {
            if *q > avail {
                overflow += *q - avail;
                *q = avail;
            }
        }
        for (q, &avail) in quota.iter_mut().zip(&available) {
            let take = overflow.min(avail - *q);
            *q += take;
            overflow -= take;
        }

        let mut mvr_votes = self.mvr_votes.clone();
        for ((_, members), &q) in batches.iter().zip(&quota) {
            let mut left = q;
            for &i in members {
                if left == 0 {
                    break;
                }
                if mvr_votes[i] == Vote::Winner {
                    mvr_votes[i] = Vote::Loser;
                    left -= 1;
                }
            }
        }
        Ok(Election {
            spec: self.spec.clone(),
            cards: self.cards.clone(),
            mvr_votes,
        })
    }

    /// Reference values, overstatement values and rescaled populations.
    pub fn assemble(&self) -> Result<GeneratedPopulation> {
        let assorter = plurality_assorter::<f64>();
        let refs = oneaudit_references(&self.cards, &batch_cvr_pools(&self.cards), &assorter)?;
        let labels: Vec<u32> = self
            .cards
            .iter()
            .map(|c| {
                if c.has_linked_cvr() {
                    CVR_STRATUM
                } else {
                    BATCH_STRATUM
                }
            })
            .collect();
        let rescaled = |votes: &mut dyn Iterator<Item = Vote>| -> Result<AssorterPopulation> {
            let mvr: Vec<f64> = votes.map(|v| assorter.value(v)).collect();
            let raw = overstatement_population(&refs, &mvr, assorter.upper_bound)?;
            Ok(rescale(&raw.with_labels(labels.clone())?)?)
        };
        let population = rescaled(&mut self.mvr_votes.iter().copied())?;
        let postulated = rescaled(&mut self.cards.iter().map(|c| c.vote))?;
        let strata = [CVR_STRATUM, BATCH_STRATUM].map(|label| {
            population
                .stratum(label)
                .expect("both strata are non-empty")
        });
        Ok(GeneratedPopulation {
            spec: self.spec.clone(),
            election: self.clone(),
            refs,
            population,
            strata,
            postulated,
        })
    }
}

/// Splits `total` across parts proportional to `sizes` (summing to `denom`)
/// by largest remainder, ties to the lower index.
fn largest_remainder(total: usize, sizes: &[usize], denom: usize) -> Vec<usize> {
    if denom == 0 {
        return vec![0; sizes.len()];
    }
    let exact: Vec<(usize, usize)> = sizes
        .iter()
        .map(|&s| {
            let num = total as u128 * s as u128;
            (
                (num / denom as u128) as usize,
                (num % denom as u128) as usize,
            )
        })
        .collect();
    let mut quota: Vec<usize> = exact.iter().map(|&(q, _)| q).collect();
    let short = total - quota.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&i, &j| exact[j].1.cmp(&exact[i].1).then(i.cmp(&j)));
    for &i in order.iter().take(short) {
        quota[i] += 1;
    }
    quota
}

/// Applies the halve-margin error model: the true mean moves to
/// `(Ā^c + 1/2) / 2` through batch-stratum tally errors only.
pub fn inject_tally_error(spec: &PopulationSpec, election: &Election) -> Result<Election> {
    election.with_true_mean(halved_margin_mean(spec.reported_mean))
}

/// A generated election in every form the tests consume.
#[derive(Debug, Clone)]
pub struct GeneratedPopulation {
    pub spec: PopulationSpec,
    pub election: Election,
    pub refs: ReferenceValueSet,
    /// Rescaled true overstatement population, labelled by stratum.
    pub population: AssorterPopulation,
    /// The CVR and batch strata of `population`.
    pub strata: [AssorterPopulation; 2],
    /// Rescaled population the reported results imply (every MVR equal to
    /// its CVR), used for a-priori bets.
    pub postulated: AssorterPopulation,
}

impl GeneratedPopulation {
    pub fn eta(&self) -> f64 {
        self.population.null_mean()
    }

    pub fn margin(&self) -> f64 {
        self.refs.reported_margin
    }

    pub fn size(&self) -> usize {
        self.population.size()
    }

    /// Stratum weights `N_k / N`.
    pub fn weights(&self) -> [f64; 2] {
        let n = self.size() as f64;
        self.strata.each_ref().map(|s| s.size() as f64 / n)
    }
}

/// Builds the election for `spec`, applies its error model and assembles the
/// populations.
pub fn build_population(spec: &PopulationSpec) -> Result<GeneratedPopulation> {
    let election = build_election(spec)?;
    let election = match spec.error_model {
        ErrorModel::None => election,
        ErrorModel::HalveMargin => inject_tally_error(spec, &election)?,
    };
    election.assemble()
}
