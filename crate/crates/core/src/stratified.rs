//! Two-stratum union-of-intersections test sequence (UI-TS) with banding.
//!
//! The complementary null `w1 eta1 + w2 eta2 <= eta` is covered by the
//! boundary segment `w1 eta1 + w2 eta2 = eta`, cut into `G` bands. Each band
//! fixes one bet per stratum (Kelly at the band centroid); the product of the
//! stratum TSMs is log-concave in `eta1` along a band, so its minimum over the
//! band is attained at one of the two vertices. The UI-TS is the minimum over
//! all `2G` vertices.

use crate::assorter::AssorterPopulation;
use crate::audit::{AuditStatus, Escalation};
use crate::betting::Support;
use crate::error::{AuditError, Result};
use crate::scalar::Real;

pub const DEFAULT_BANDS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct StratumSpec<T> {
    pub population: AssorterPopulation<T>,
    pub weight: T,
}

impl<T: Real> StratumSpec<T> {
    /// Weights `N_k / N` for a set of strata.
    pub fn from_populations(populations: Vec<AssorterPopulation<T>>) -> Vec<Self> {
        let total = T::from_count(populations.iter().map(|p| p.size()).sum());
        populations
            .into_iter()
            .map(|population| StratumSpec {
                weight: T::from_count(population.size()) / total,
                population,
            })
            .collect()
    }
}

/// Feasible first-stratum null means on the face `w1 eta1 + w2 eta2 = eta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NullSegment<T> {
    pub weights: [T; 2],
    pub eta: T,
    pub lo: T,
    pub hi: T,
}

impl<T: Real> NullSegment<T> {
    /// Second-stratum null mean paired with `eta1`.
    pub fn eta2(&self, eta1: T) -> T {
        let [w1, w2] = self.weights;
        if w2 == T::zero() {
            return self.eta;
        }
        ((self.eta - w1 * eta1) / w2).max(T::zero()).min(T::one())
    }

    pub fn point(&self, eta1: T) -> [T; 2] {
        [eta1, self.eta2(eta1)]
    }
}

pub fn null_boundary<T: Real>(weights: [T; 2], global_eta: T) -> Result<NullSegment<T>> {
    let [w1, w2] = weights;
    if !(w1 >= T::zero() && w2 >= T::zero()) || (w1 + w2 - T::one()).abs() > T::lit(1e-9) {
        return Err(AuditError::invalid(
            "weights",
            format!("({w1}, {w2}) must be non-negative and sum to 1"),
        ));
    }
    if !(global_eta > T::zero() && global_eta < T::one()) {
        return Err(AuditError::EmptyNull {
            reason: format!("global null mean {global_eta} outside (0, 1)"),
        });
    }
    if w1 == T::zero() || w2 == T::zero() {
        return Ok(NullSegment {
            weights,
            eta: global_eta,
            lo: global_eta,
            hi: global_eta,
        });
    }
    let lo = ((global_eta - w2) / w1).max(T::zero());
    let hi = (global_eta / w1).min(T::one());
    if lo > hi {
        return Err(AuditError::EmptyNull {
            reason: format!("eta1 range [{lo}, {hi}] is empty"),
        });
    }
    Ok(NullSegment {
        weights,
        eta: global_eta,
        lo,
        hi,
    })
}

/// One band of the boundary segment with its fixed per-stratum bets.
#[derive(Debug, Clone, PartialEq)]
pub struct NullBand<T> {
    pub eta1_interval: [T; 2],
    pub centroid: [T; 2],
    pub vertices: [[T; 2]; 2],
    pub bets: [T; 2],
}

/// `G` equal-width bands over `segment` with Kelly bets at each centroid.
///
/// `bet_populations` are the stratum populations the bets are optimised for:
/// the true strata for oracle bets, postulated ones for a-priori bets. Bets
/// are capped so that they stay admissible at both vertices.
pub fn band_partition<T: Real>(
    segment: &NullSegment<T>,
    g: usize,
    bet_populations: [&[T]; 2],
) -> Result<Vec<NullBand<T>>> {
    if g == 0 {
        return Err(AuditError::invalid("bands", "need at least one band"));
    }
    let supports = bet_populations.map(Support::from_values);
    let width = (segment.hi - segment.lo) / T::from_count(g);
    let bands = (0..g)
        .map(|i| {
            let a = segment.lo + width * T::from_count(i);
            let b = if i + 1 == g {
                segment.hi
            } else {
                segment.lo + width * T::from_count(i + 1)
            };
            let centroid = segment.point(T::half() * (a + b));
            let vertices = [segment.point(a), segment.point(b)];
            let bets = [0, 1].map(|k| {
                let kelly = supports[k].kelly_bet(centroid[k]);
                let worst = vertices[0][k].max(vertices[1][k]);
                if worst > T::zero() {
                    kelly.min(T::one() / worst)
                } else {
                    kelly
                }
            });
            NullBand {
                eta1_interval: [a, b],
                centroid,
                vertices,
                bets,
            }
        })
        .collect();
    Ok(bands)
}

/// Deterministic proportional interleaving of strata, as an endless
/// iterator of stratum indices.
///
/// Each stratum is due at times `(count + 1) / w`; among the strata that
/// would not overshoot their upper quota `ceil(w t)`, the one due earliest
/// draws next, ties going to the lower index. This is the Balinski-Young
/// quota method, so per-stratum counts stay between `floor(w t)` and
/// `ceil(w t)` for every prefix and any number of strata.
#[derive(Debug, Clone)]
pub struct RoundRobin<T> {
    weights: Vec<T>,
    counts: Vec<usize>,
    t: usize,
}

impl<T: Real> RoundRobin<T> {
    pub fn new(weights: &[T]) -> Self {
        Self {
            weights: weights.to_vec(),
            counts: vec![0; weights.len()],
            t: 0,
        }
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }
}

impl<T: Real> Iterator for RoundRobin<T> {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        let tol = T::lit(1e-9);
        let t = T::from_count(self.t + 1);
        let mut best: Option<(usize, T)> = None;
        for (k, &w) in self.weights.iter().enumerate() {
            if !(w > T::zero()) || T::from_count(self.counts[k]) >= w * t + tol {
                continue;
            }
            let due = T::from_count(self.counts[k] + 1) / w;
            if best.is_none_or(|(_, d)| due < d * (T::one() - tol)) {
                best = Some((k, due));
            }
        }
        let (k, _) = best?;
        self.counts[k] += 1;
        self.t += 1;
        Some(k)
    }
}

/// The first `len` strata of [`RoundRobin`].
pub fn interleave_round_robin<T: Real>(weights: &[T], len: usize) -> Vec<usize> {
    RoundRobin::new(weights).take(len).collect()
}

/// Interleaves per-stratum streams into `(stratum, index)` pairs, stopping
/// when the stream the schedule calls for runs dry.
pub fn interleave_streams<T: Real>(streams: &[Vec<usize>], weights: &[T]) -> Vec<(usize, usize)> {
    let total: usize = streams.iter().map(Vec::len).sum();
    let mut cursors = vec![0usize; streams.len()];
    let mut out = Vec::with_capacity(total);
    for k in interleave_round_robin(weights, total) {
        match streams.get(k).and_then(|s| s.get(cursors[k])) {
            Some(&index) => {
                cursors[k] += 1;
                out.push((k, index));
            }
            None => break,
        }
    }
    out
}

/// Log wealth of one stratum's TSM at a fixed bet and null mean.
pub fn stratum_log_wealth<T: Real>(draws: &[T], bet: T, eta: T) -> T {
    draws.iter().fold(T::zero(), |acc, &x| {
        acc + (T::one() + bet * (x - eta)).max(T::zero()).ln()
    })
}

/// Product-of-strata log wealth at the intersection null `etas`.
pub fn intersection_log_wealth<T: Real>(draws: [&[T]; 2], bets: [T; 2], etas: [T; 2]) -> T {
    stratum_log_wealth(draws[0], bets[0], etas[0]) + stratum_log_wealth(draws[1], bets[1], etas[1])
}

/// Running UI-TS over a fixed set of bands.
#[derive(Debug, Clone, PartialEq)]
pub struct UitsState<T> {
    bands: Vec<NullBand<T>>,
    /// `[band][vertex][stratum]`
    log_wealth: Vec<[[T; 2]; 2]>,
    t: usize,
    log_value: T,
    log_max_value: T,
}

impl<T: Real> UitsState<T> {
    pub fn new(bands: Vec<NullBand<T>>) -> Result<Self> {
        if bands.is_empty() {
            return Err(AuditError::invalid("bands", "need at least one band"));
        }
        let n = bands.len();
        Ok(Self {
            bands,
            log_wealth: vec![[[T::zero(); 2]; 2]; n],
            t: 0,
            log_value: T::zero(),
            log_max_value: T::zero(),
        })
    }

    pub fn bands(&self) -> &[NullBand<T>] {
        &self.bands
    }

    pub fn t(&self) -> usize {
        self.t
    }

    /// Current UI-TS value: minimum over vertices of the product wealth.
    pub fn value(&self) -> T {
        self.log_value.exp()
    }

    pub fn log_value(&self) -> T {
        self.log_value
    }

    pub fn max_value(&self) -> T {
        self.log_max_value.exp()
    }

    pub fn p_value(&self) -> T {
        (-self.log_max_value).exp().min(T::one())
    }

    /// Product wealth of `band` at vertex `vertex`.
    pub fn vertex_log_wealth(&self, band: usize, vertex: usize) -> T {
        let lw = self.log_wealth[band][vertex];
        lw[0] + lw[1]
    }

    /// Updates every band's TSM for the drawn stratum and recomputes the
    /// minimum over vertices.
    pub fn uits_step(&mut self, stratum: usize, x: T) -> Result<()> {
        if stratum > 1 {
            return Err(AuditError::invalid(
                "stratum",
                format!("label {stratum} not in {{0, 1}}"),
            ));
        }
        if !(x >= T::zero() && x <= T::one()) {
            return Err(AuditError::ValueOutOfRange {
                index: self.t,
                value: x.to_f64_lossy(),
                upper: 1.0,
            });
        }
        self.t += 1;
        let mut min = T::infinity();
        for (band, lw) in self.bands.iter().zip(self.log_wealth.iter_mut()) {
            let bet = band.bets[stratum];
            for (vertex, wealth) in band.vertices.iter().zip(lw.iter_mut()) {
                let eta = vertex[stratum];
                let max_bet = if eta > T::zero() {
                    T::one() / eta
                } else {
                    T::infinity()
                };
                if !(bet >= T::zero() && bet <= max_bet) {
                    return Err(AuditError::BetOutOfRange {
                        bet: bet.to_f64_lossy(),
                        max: max_bet.to_f64_lossy(),
                        draw: self.t,
                    });
                }
                let factor = (T::one() + bet * (x - eta)).max(T::zero());
                wealth[stratum] = wealth[stratum] + factor.ln();
                min = min.min(wealth[0] + wealth[1]);
            }
        }
        self.log_value = min;
        self.log_max_value = self.log_max_value.max(min);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UitsOutcome<T> {
    pub stopping_time: usize,
    pub draws: usize,
    pub status: AuditStatus,
    pub p_value: T,
}

/// Runs the UI-TS over a labelled stream of `(stratum, index)` draws.
pub fn run_uits<T: Real>(
    strata: [&AssorterPopulation<T>; 2],
    bands: Vec<NullBand<T>>,
    stream: impl IntoIterator<Item = (usize, usize)>,
    alpha: T,
    cap: usize,
) -> Result<UitsOutcome<T>> {
    if !(alpha > T::zero() && alpha < T::one()) {
        return Err(AuditError::invalid(
            "alpha",
            format!("{alpha} not in (0, 1)"),
        ));
    }
    let mut state = UitsState::new(bands)?;
    let mut status = AuditStatus::Escalate(Escalation::CapReached);
    for (stratum, index) in stream {
        if state.t() >= cap {
            break;
        }
        let population = strata.get(stratum).ok_or_else(|| {
            AuditError::invalid("stream", format!("stratum {stratum} out of range"))
        })?;
        let x = *population
            .values()
            .get(index)
            .ok_or_else(|| AuditError::invalid("stream", format!("index {index} out of range")))?;
        state.uits_step(stratum, x)?;
        if state.p_value() <= alpha {
            status = AuditStatus::Confirmed;
            break;
        }
        if state.log_value() == T::neg_infinity() {
            status = AuditStatus::Escalate(Escalation::WealthExhausted);
            break;
        }
    }
    Ok(UitsOutcome {
        stopping_time: if status == AuditStatus::Confirmed {
            state.t()
        } else {
            cap
        },
        draws: state.t(),
        status,
        p_value: state.p_value(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOL: f64 = 1e-12;

    #[test]
    fn boundary_examples() {
        let seg = null_boundary([0.5f64, 0.5], 0.45).unwrap();
        assert_eq!(seg.lo, 0.0);
        assert!((seg.hi - 0.9).abs() < TOL);
        assert!((seg.eta2(0.3) - 0.6).abs() < TOL);
        assert!(seg.eta2(0.9).abs() < TOL);

        let single = null_boundary([1.0f64, 0.0], 0.45).unwrap();
        assert_eq!((single.lo, single.hi), (0.45, 0.45));
        assert_eq!(single.eta2(0.45), 0.45);

        assert!(matches!(
            null_boundary([0.5f64, 0.5], 1.2),
            Err(AuditError::EmptyNull { .. })
        ));
        assert!(null_boundary([0.7f64, 0.5], 0.45).is_err());
    }

    #[test]
    fn two_bands_geometry() {
        let seg = null_boundary([0.5f64, 0.5], 0.45).unwrap();
        let ones = vec![1.0; 4];
        let bands = band_partition(&seg, 2, [&ones, &ones]).unwrap();
        assert_eq!(bands.len(), 2);
        assert!((bands[0].eta1_interval[1] - 0.45).abs() < TOL);
        assert!((bands[0].centroid[0] - 0.225).abs() < TOL);
        assert!((bands[1].centroid[0] - 0.675).abs() < TOL);
        assert!((bands[1].centroid[1] - 0.225).abs() < TOL);
        let vertex_eta1: Vec<f64> = bands
            .iter()
            .flat_map(|b| b.vertices.iter().map(|v| v[0]))
            .collect();
        assert!((vertex_eta1[0] - 0.0).abs() < TOL);
        assert!((vertex_eta1[3] - 0.9).abs() < TOL);
        for band in &bands {
            for v in band.vertices.iter().chain([&band.centroid]) {
                assert!((0.5 * v[0] + 0.5 * v[1] - 0.45).abs() < TOL);
            }
            // all-ones strata bet the most admissible amount at both vertices
            for k in 0..2 {
                let worst = band.vertices[0][k].max(band.vertices[1][k]);
                assert!((band.bets[k] - 1.0 / worst).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn single_band_and_hundred_bands() {
        let seg = null_boundary([0.5f64, 0.5], 0.45).unwrap();
        let vals = vec![0.5, 0.2, 0.7];
        let one = band_partition(&seg, 1, [&vals, &vals]).unwrap();
        assert!((one[0].centroid[0] - 0.45).abs() < TOL);
        let many = band_partition(&seg, 100, [&vals, &vals]).unwrap();
        assert_eq!(many.iter().map(|b| b.vertices.len()).sum::<usize>(), 200);
    }

    #[test]
    fn interleaving_examples() {
        assert_eq!(
            interleave_round_robin(&[0.5f64, 0.5], 6),
            vec![0, 1, 0, 1, 0, 1]
        );
        assert_eq!(
            interleave_round_robin(&[2.0f64 / 3.0, 1.0 / 3.0], 9),
            vec![0, 0, 1, 0, 0, 1, 0, 0, 1]
        );
        assert_eq!(interleave_round_robin(&[1.0f64], 4), vec![0; 4]);
        let streams = vec![vec![7, 8, 9], vec![1, 2, 3]];
        assert_eq!(
            interleave_streams(&streams, &[0.5f64, 0.5]),
            vec![(0, 7), (1, 1), (0, 8), (1, 2), (0, 9), (1, 3)]
        );
    }

    #[test]
    fn fresh_state_has_unit_value() {
        let seg = null_boundary([0.5f64, 0.5], 0.45).unwrap();
        let vals = vec![0.5];
        let state = UitsState::new(band_partition(&seg, 3, [&vals, &vals]).unwrap()).unwrap();
        assert_eq!(state.value(), 1.0);
        assert_eq!(state.p_value(), 1.0);
    }

    #[test]
    fn all_ones_strata_reject() {
        // hand simulation on two bands: vertices (0, .9), (.45, .45), (.9, 0)
        let seg = null_boundary([0.5f64, 0.5], 0.45).unwrap();
        let ones = vec![1.0; 8];
        let bands = band_partition(&seg, 2, [&ones, &ones]).unwrap();
        let mut state = UitsState::new(bands.clone()).unwrap();
        let mut draws: [Vec<f64>; 2] = [vec![], vec![]];
        for t in 0..40 {
            let k = t % 2;
            state.uits_step(k, 1.0).unwrap();
            draws[k].push(1.0);
            let expected = bands
                .iter()
                .flat_map(|b| {
                    let d = [&draws[0][..], &draws[1][..]];
                    b.vertices
                        .iter()
                        .map(move |v| intersection_log_wealth(d, b.bets, *v))
                })
                .fold(f64::INFINITY, f64::min);
            assert!((state.log_value() - expected).abs() < 1e-9);
        }
        assert!(state.p_value() <= 0.05);
    }

    #[test]
    fn vertex_at_upper_bound_shrinks_wealth() {
        // w = (.5, .5), eta = .6: eta1 in [.2, 1], vertex (1, .2)
        let seg = null_boundary([0.5f64, 0.5], 0.6).unwrap();
        assert!((seg.hi - 1.0).abs() < TOL);
        let mixed = vec![0.9, 0.95, 0.8];
        let bands = band_partition(&seg, 1, [&mixed, &mixed]).unwrap();
        assert!(bands[0].bets[0] <= 1.0);
        let mut state = UitsState::new(bands).unwrap();
        state.uits_step(0, 0.9).unwrap();
        // stratum 0 at eta1 = 1 loses on a 0.9 draw, so the min sits there
        assert!(state.vertex_log_wealth(0, 1) <= 0.0);
        assert_eq!(state.log_value(), state.vertex_log_wealth(0, 1));
    }

    #[test]
    fn bad_custom_band_is_rejected() {
        let band = NullBand {
            eta1_interval: [0.4, 0.5],
            centroid: [0.45f64, 0.45],
            vertices: [[0.4, 0.5], [0.5, 0.4]],
            bets: [3.0, 0.0],
        };
        let mut state = UitsState::new(vec![band]).unwrap();
        assert!(matches!(
            state.uits_step(0, 1.0),
            Err(AuditError::BetOutOfRange { .. })
        ));
    }
}
