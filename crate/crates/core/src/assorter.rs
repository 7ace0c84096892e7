//! Assorters, ONEAudit reference values and overstatement-assorter populations.
//!
//! The pipeline for one assertion is
//! `cards -> reference values -> overstatement values -> rescaled population`.
//! The rescaled population lives on `[0, 1]` with null mean
//! `eta = (2u - v) / (4u)`, and every test in [`crate::betting`] and
//! [`crate::stratified`] consumes that form.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{AuditError, Result};
use crate::scalar::Real;

/// Vote class of a card relative to one (winner, loser) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Vote {
    Winner,
    Loser,
    Other,
}

impl Vote {
    pub fn as_str(self) -> &'static str {
        match self {
            Vote::Winner => "winner",
            Vote::Loser => "loser",
            Vote::Other => "other",
        }
    }
}

impl std::str::FromStr for Vote {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "winner" | "w" => Ok(Vote::Winner),
            "loser" | "l" => Ok(Vote::Loser),
            "other" | "o" => Ok(Vote::Other),
            other => Err(format!("unknown vote `{other}`")),
        }
    }
}

impl std::fmt::Display for Vote {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A physical ballot card and the CVR vote the voting system reported for it.
///
/// Cards without a linked CVR carry the identifier of the reporting batch they
/// were tabulated in; for those, `vote` is one of the batch's unlinked CVRs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CardRecord {
    pub card_id: String,
    pub vote: Vote,
    pub batch_id: Option<String>,
}

impl CardRecord {
    pub fn linked(card_id: impl Into<String>, vote: Vote) -> Self {
        Self {
            card_id: card_id.into(),
            vote,
            batch_id: None,
        }
    }

    pub fn batched(card_id: impl Into<String>, batch_id: impl Into<String>, vote: Vote) -> Self {
        Self {
            card_id: card_id.into(),
            vote,
            batch_id: Some(batch_id.into()),
        }
    }

    #[inline]
    pub fn has_linked_cvr(&self) -> bool {
        self.batch_id.is_none()
    }
}

/// Maps a vote class to a value in `[0, upper_bound]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Assorter<T> {
    pub upper_bound: T,
    pub winner: T,
    pub loser: T,
    pub other: T,
}

impl<T: Real> Assorter<T> {
    #[inline]
    pub fn value(&self, vote: Vote) -> T {
        match vote {
            Vote::Winner => self.winner,
            Vote::Loser => self.loser,
            Vote::Other => self.other,
        }
    }
}

/// Two-candidate plurality assorter: winner 1, loser 0, anything else 1/2.
pub fn plurality_assorter<T: Real>() -> Assorter<T> {
    Assorter {
        upper_bound: T::one(),
        winner: T::one(),
        loser: T::zero(),
        other: T::half(),
    }
}

/// Per-card reference values with their mean and implied margin.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceValueSet<T> {
    pub values: Vec<T>,
    pub reported_mean: T,
    pub reported_margin: T,
}

impl<T: Real> ReferenceValueSet<T> {
    pub fn from_values(values: Vec<T>) -> Result<Self> {
        if values.is_empty() {
            return Err(AuditError::EmptyPopulation);
        }
        let mean = mean(&values);
        Ok(Self {
            reported_margin: T::two() * mean - T::one(),
            reported_mean: mean,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Returns the reported assorter margin `2 r̄ - 1`, refusing non-positive margins.
pub fn reported_margin<T: Real>(refs: &ReferenceValueSet<T>) -> Result<T> {
    if refs.is_empty() {
        return Err(AuditError::EmptyPopulation);
    }
    let v = T::two() * refs.reported_mean - T::one();
    if v <= T::zero() {
        return Err(AuditError::NonPositiveMargin {
            margin: v.to_f64_lossy(),
        });
    }
    Ok(v)
}

/// Collects the unlinked CVR votes reported for each batch from the cards
/// that carry them.
pub fn batch_cvr_pools(cards: &[CardRecord]) -> BTreeMap<String, Vec<Vote>> {
    let mut pools: BTreeMap<String, Vec<Vote>> = BTreeMap::new();
    for card in cards {
        if let Some(batch) = &card.batch_id {
            pools.entry(batch.clone()).or_default().push(card.vote);
        }
    }
    pools
}

/// ONEAudit reference values: `A(c_i)` for linked cards, the batch mean of the
/// assorter over the batch's CVRs for everything else.
pub fn oneaudit_references<T: Real>(
    cards: &[CardRecord],
    batch_cvrs: &BTreeMap<String, Vec<Vote>>,
    assorter: &Assorter<T>,
) -> Result<ReferenceValueSet<T>> {
    let mut batch_means: BTreeMap<&str, T> = BTreeMap::new();
    for (batch, votes) in batch_cvrs {
        if votes.is_empty() {
            continue;
        }
        let total = votes
            .iter()
            .fold(T::zero(), |acc, &v| acc + assorter.value(v));
        batch_means.insert(batch.as_str(), total / T::from_count(votes.len()));
    }

    let values = cards
        .iter()
        .map(|card| match &card.batch_id {
            None => Ok(assorter.value(card.vote)),
            Some(batch) => {
                batch_means
                    .get(batch.as_str())
                    .copied()
                    .ok_or_else(|| AuditError::EmptyBatch {
                        batch: batch.clone(),
                    })
            }
        })
        .collect::<Result<Vec<_>>>()?;
    ReferenceValueSet::from_values(values)
}

/// Overstatement assorter `(1 - (r - a)/u) / (2 - v/u)` for one card.
#[inline]
pub fn overstatement_assort<T: Real>(reference: T, mvr_value: T, upper: T, margin: T) -> T {
    let omega = reference - mvr_value;
    (T::one() - omega / upper) / (T::two() - margin / upper)
}

/// Upper bound `2u / (2u - v)` of the overstatement assorter.
#[inline]
pub fn overstatement_upper_bound<T: Real>(upper: T, margin: T) -> T {
    T::two() * upper / (T::two() * upper - margin)
}

/// A finite list of assorter values together with the null mean under test.
#[derive(Debug, Clone, PartialEq)]
pub struct AssorterPopulation<T> {
    values: Vec<T>,
    null_mean: T,
    upper_bound: T,
    labels: Option<Vec<u32>>,
}

impl<T: Real> AssorterPopulation<T> {
    pub fn new(values: Vec<T>, null_mean: T, upper_bound: T) -> Result<Self> {
        if values.is_empty() {
            return Err(AuditError::EmptyPopulation);
        }
        if !(upper_bound > T::zero()) || !upper_bound.is_finite() {
            return Err(AuditError::invalid(
                "upper_bound",
                "must be positive and finite",
            ));
        }
        if !(null_mean > T::zero() && null_mean < upper_bound) {
            return Err(AuditError::invalid(
                "null_mean",
                format!("{null_mean} must lie strictly inside (0, {upper_bound})"),
            ));
        }
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, &x)| !(x >= T::zero() && x <= upper_bound))
        {
            return Err(AuditError::ValueOutOfRange {
                index,
                value: value.to_f64_lossy(),
                upper: upper_bound.to_f64_lossy(),
            });
        }
        Ok(Self {
            values,
            null_mean,
            upper_bound,
            labels: None,
        })
    }

    /// Attaches one stratum/batch tag per value.
    pub fn with_labels(mut self, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != self.values.len() {
            return Err(AuditError::invalid(
                "labels",
                format!(
                    "expected {} labels, got {}",
                    self.values.len(),
                    labels.len()
                ),
            ));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    #[inline]
    pub fn values(&self) -> &[T] {
        &self.values
    }

    #[inline]
    pub fn null_mean(&self) -> T {
        self.null_mean
    }

    #[inline]
    pub fn upper_bound(&self) -> T {
        self.upper_bound
    }

    #[inline]
    pub fn size(&self) -> usize {
        self.values.len()
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    pub fn mean(&self) -> T {
        mean(&self.values)
    }

    /// Same values tested against a different null mean.
    pub fn with_null_mean(&self, null_mean: T) -> Result<Self> {
        let mut pop = Self::new(self.values.clone(), null_mean, self.upper_bound)?;
        pop.labels = self.labels.clone();
        Ok(pop)
    }

    /// Sub-population of the values carrying `label`.
    pub fn stratum(&self, label: u32) -> Option<Self> {
        let labels = self.labels.as_ref()?;
        let values: Vec<T> = self
            .values
            .iter()
            .zip(labels)
            .filter(|(_, &l)| l == label)
            .map(|(&x, _)| x)
            .collect();
        Self::new(values, self.null_mean, self.upper_bound).ok()
    }
}

/// Raw (unrescaled) overstatement population for one assertion: null mean 1/2,
/// upper bound `2u / (2u - v)`.
pub fn overstatement_population<T: Real>(
    refs: &ReferenceValueSet<T>,
    mvr_values: &[T],
    upper: T,
) -> Result<AssorterPopulation<T>> {
    if mvr_values.len() != refs.len() {
        return Err(AuditError::invalid(
            "mvr_values",
            format!("expected {} values, got {}", refs.len(), mvr_values.len()),
        ));
    }
    let margin = reported_margin(refs)?;
    let bound = overstatement_upper_bound(upper, margin);
    let values = refs
        .values
        .iter()
        .zip(mvr_values)
        .map(|(&r, &a)| {
            overstatement_assort(r, a, upper, margin)
                .max(T::zero())
                .min(bound)
        })
        .collect();
    AssorterPopulation::new(values, T::half(), bound)
}

/// Maps a raw overstatement population onto `[0, 1]` by dividing through by
/// its upper bound; the null mean moves to `(2u - v) / (4u)`.
pub fn rescale<T: Real>(raw: &AssorterPopulation<T>) -> Result<AssorterPopulation<T>> {
    let scale = raw.upper_bound();
    let values = raw
        .values()
        .iter()
        .map(|&x| (x / scale).max(T::zero()).min(T::one()))
        .collect();
    let pop = AssorterPopulation::new(values, raw.null_mean() / scale, T::one())?;
    match raw.labels() {
        Some(labels) => pop.with_labels(labels.to_vec()),
        None => Ok(pop),
    }
}

/// Rescaled null mean `(2u - v) / (4u)`.
#[inline]
pub fn rescaled_null_mean<T: Real>(upper: T, margin: T) -> T {
    (T::two() * upper - margin) / (T::lit(4.0) * upper)
}

pub(crate) fn mean<T: Real>(values: &[T]) -> T {
    if values.is_empty() {
        return T::nan();
    }
    values.iter().fold(T::zero(), |acc, &x| acc + x) / T::from_count(values.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOL: f64 = 1e-12;

    #[test]
    fn plurality_values() {
        let a = plurality_assorter::<f64>();
        assert_eq!(a.value(Vote::Winner), 1.0);
        assert_eq!(a.value(Vote::Loser), 0.0);
        assert_eq!(a.value(Vote::Other), 0.5);
        assert_eq!(a.upper_bound, 1.0);
    }

    #[test]
    fn margin_examples() {
        let unanimous = ReferenceValueSet::from_values(vec![1.0f64; 5]).unwrap();
        assert_eq!(reported_margin(&unanimous).unwrap(), 1.0);

        let sixty = ReferenceValueSet::from_values(vec![1.0f64, 1.0, 1.0, 0.0, 0.0]).unwrap();
        assert!((reported_margin(&sixty).unwrap() - 0.2).abs() < TOL);

        let tie = ReferenceValueSet::from_values(vec![1.0f64, 0.0]).unwrap();
        assert!(matches!(
            reported_margin(&tie),
            Err(AuditError::NonPositiveMargin { .. })
        ));
    }

    #[test]
    fn references_from_batches_and_linked_cvrs() {
        let mut cards = Vec::new();
        for i in 0..1000 {
            let vote = if i < 600 { Vote::Winner } else { Vote::Loser };
            cards.push(CardRecord::batched(format!("b{i}"), "B1", vote));
        }
        cards.push(CardRecord::linked("c1", Vote::Winner));
        cards.push(CardRecord::batched("s1", "single", Vote::Loser));

        let pools = batch_cvr_pools(&cards);
        let refs = oneaudit_references(&cards, &pools, &plurality_assorter::<f64>()).unwrap();
        assert!(refs.values[..1000].iter().all(|&r| (r - 0.6).abs() < TOL));
        assert_eq!(refs.values[1000], 1.0);
        assert_eq!(refs.values[1001], 0.0);
    }

    #[test]
    fn missing_batch_pool_is_an_error() {
        let cards = vec![CardRecord::batched("x", "ghost", Vote::Winner)];
        let mut pools = BTreeMap::new();
        pools.insert("ghost".to_string(), Vec::new());
        let err = oneaudit_references(&cards, &pools, &plurality_assorter::<f64>()).unwrap_err();
        assert_eq!(
            err,
            AuditError::EmptyBatch {
                batch: "ghost".into()
            }
        );
    }

    #[test]
    fn overstatement_examples() {
        let x = overstatement_assort(0.3f64, 0.3, 1.0, 0.2);
        assert!((x - 1.0 / 1.8).abs() < TOL);
        assert_eq!(overstatement_assort(1.0f64, 0.0, 1.0, 0.2), 0.0);
        assert!((overstatement_assort(0.0f64, 1.0, 1.0, 0.2) - 2.0 / 1.8).abs() < TOL);
    }

    #[test]
    fn rescale_examples() {
        for &v in &[0.01f64, 0.2, 0.5, 1.0] {
            let correct = 1.0 / (2.0 - v);
            let bound = overstatement_upper_bound(1.0, v);
            let raw = AssorterPopulation::new(vec![correct, 0.0, bound], 0.5, bound).unwrap();
            let scaled = rescale(&raw).unwrap();
            assert!((scaled.values()[0] - 0.5).abs() < TOL);
            assert_eq!(scaled.values()[1], 0.0);
            assert!((scaled.values()[2] - 1.0).abs() < TOL);
            assert!((scaled.null_mean() - (2.0 - v) / 4.0).abs() < TOL);
            assert_eq!(scaled.upper_bound(), 1.0);
        }
        assert!((rescaled_null_mean(1.0f64, 0.2) - 0.45).abs() < TOL);
    }

    #[test]
    fn population_validation() {
        assert!(AssorterPopulation::<f64>::new(vec![], 0.5, 1.0).is_err());
        assert!(AssorterPopulation::new(vec![0.2f64, 1.2], 0.5, 1.0).is_err());
        assert!(AssorterPopulation::new(vec![0.2f64], 1.0, 1.0).is_err());
        assert!(AssorterPopulation::new(vec![0.2f64], 0.0, 1.0).is_err());
        let pop = AssorterPopulation::new(vec![0.2f64, 0.8], 0.45, 1.0)
            .unwrap()
            .with_labels(vec![0, 1])
            .unwrap();
        assert_eq!(pop.stratum(1).unwrap().values(), &[0.8]);
    }

    #[test]
    fn generic_over_f32() {
        let x = overstatement_assort(1.0f32, 1.0, 1.0, 0.2);
        assert!((x - 1.0 / 1.8).abs() < 1e-6);
        let a = plurality_assorter::<f32>();
        assert_eq!(a.value(Vote::Other), 0.5f32);
    }
}
