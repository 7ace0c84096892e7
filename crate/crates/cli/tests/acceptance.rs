//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails that is not listed in `KNOWN_RED`.
//!
//! Run alone with `cargo test -p oneaudit-cli --test acceptance`.

use std::collections::BTreeMap;
use std::time::Instant;

use oneaudit_cli::{AuditSession, SessionStrategy, StartRequest};
use oneaudit_core::{
    batch_cvr_pools, kelly_bet_bisection, oneaudit_references, overstatement_population,
    plurality_assorter, rescale, run_audit, AssorterPopulation, Audit, BetStrategy, CardRecord,
    SamplingMode, Vote,
};
use oneaudit_sim::presets::{table1_scenarios, table1_spec, DEFAULT_SEED};
use oneaudit_sim::{
    build_election, preset, run_scenarios, simulate, GeneratedPopulation, Method, PopulationSpec,
    SamplingDesign, SimulationConfig, SimulationReport,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Criteria that cannot be met as stated; see the decisions log.
const KNOWN_RED: &[&str] = &["table1 direction"];

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn check(name: &'static str, f: impl FnOnce() -> (bool, String)) -> Outcome {
    let start = Instant::now();
    let (pass, detail) = f();
    let line = Outcome {
        name,
        pass,
        detail: format!("{detail} [{:.1}s]", start.elapsed().as_secs_f64()),
    };
    println!(
        "{} {}: {}",
        if line.pass { "PASS" } else { "FAIL" },
        line.name,
        line.detail
    );
    line
}

fn within(value: f64, target: f64, tol: f64) -> bool {
    (value - target).abs() <= tol * target
}

// ---- assorter properties -------------------------------------------------

fn random_vote(rng: &mut ChaCha8Rng) -> Vote {
    match rng.random_range(0..3) {
        0 => Vote::Winner,
        1 => Vote::Loser,
        _ => Vote::Other,
    }
}

/// Rescaled overstatement population of `cards` against manual votes `mvrs`.
fn rescaled(cards: &[CardRecord], mvrs: &[Vote]) -> Option<AssorterPopulation> {
    let a = plurality_assorter::<f64>();
    let refs = oneaudit_references(cards, &batch_cvr_pools(cards), &a).ok()?;
    let values: Vec<f64> = mvrs.iter().map(|&v| a.value(v)).collect();
    rescale(&overstatement_population(&refs, &values, 1.0).ok()?).ok()
}

fn equivalence() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = plurality_assorter::<f64>();
    let (mut instances, mut agree) = (0, 0);
    while instances < 1_000 {
        let n = rng.random_range(1..=50);
        let batches = rng.random_range(0..4);
        let cards: Vec<CardRecord> = (0..n)
            .map(|i| {
                let vote = random_vote(&mut rng);
                match rng.random_range(0..=batches) {
                    0 => CardRecord::linked(format!("c{i}"), vote),
                    b => CardRecord::batched(format!("c{i}"), format!("b{b}"), vote),
                }
            })
            .collect();
        let mvrs: Vec<Vote> = (0..n).map(|_| random_vote(&mut rng)).collect();
        // brute-force assorter means over the raw votes
        let reported = cards.iter().map(|c| a.value(c.vote)).sum::<f64>() / n as f64;
        let true_mean = mvrs.iter().map(|&v| a.value(v)).sum::<f64>() / n as f64;
        if reported <= 0.5 || (true_mean - 0.5).abs() < 1e-12 {
            continue;
        }
        let pop = rescaled(&cards, &mvrs).expect("valid instance");
        let eta = (2.0 - (2.0 * reported - 1.0)) / 4.0;
        instances += 1;
        if (pop.mean() > eta) == (true_mean > 0.5) {
            agree += 1;
        }
    }
    (
        agree == instances,
        format!("{agree}/{instances} instances agree"),
    )
}

fn batch_means() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let mut cards = Vec::new();
        let mut mvrs = Vec::new();
        for i in 0..rng.random_range(0..30) {
            let v = random_vote(&mut rng);
            cards.push(CardRecord::linked(format!("c{i}"), v));
            mvrs.push(v);
        }
        let n_batches = rng.random_range(1..6);
        for b in 0..n_batches {
            let size = rng.random_range(1..60);
            let votes: Vec<Vote> = (0..size).map(|_| random_vote(&mut rng)).collect();
            // same subtotals, different card-level reading
            let mut manual = votes.clone();
            for i in (1..size).rev() {
                manual.swap(i, rng.random_range(0..=i));
            }
            for (i, (&cvr, &mvr)) in votes.iter().zip(&manual).enumerate() {
                cards.push(CardRecord::batched(
                    format!("b{b}-{i}"),
                    format!("b{b}"),
                    cvr,
                ));
                mvrs.push(mvr);
            }
        }
        // a winner-leaning linked block keeps v > 0
        for i in 0..40 {
            cards.push(CardRecord::linked(format!("w{i}"), Vote::Winner));
            mvrs.push(Vote::Winner);
        }
        let pop = rescaled(&cards, &mvrs).expect("valid population");
        let mut sums: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
        for (card, &x) in cards.iter().zip(pop.values()) {
            if let Some(b) = &card.batch_id {
                let e = sums.entry(b.as_str()).or_default();
                e.0 += x;
                e.1 += 1;
            }
        }
        for (sum, count) in sums.values() {
            worst = worst.max((sum / *count as f64 - 0.5).abs());
        }
    }
    (
        worst <= 1e-12,
        format!("max |batch mean - 1/2| = {worst:.2e} over 100 populations"),
    )
}

// ---- betting engine ------------------------------------------------------

fn strategies(values: &[f64], eta: f64, rng: &mut ChaCha8Rng) -> Vec<BetStrategy> {
    let shift = rng.random_range(0.0..0.3);
    vec![
        BetStrategy::Fixed {
            bet: rng.random_range(0.0..1.0 / eta),
        },
        BetStrategy::AprioriKelly {
            postulated: values.iter().map(|x| (x + shift).min(1.0)).collect(),
        },
        BetStrategy::OracleKelly,
        BetStrategy::agrapa(),
        BetStrategy::universal_portfolio(),
        BetStrategy::shrink_trunc((eta + shift).min(0.99)),
        BetStrategy::cobra(),
    ]
}

/// Exact conditional expectation of next-step wealth, by enumeration.
fn supermartingale() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    let mut pairs = 0;
    while pairs < 100 {
        let n = rng.random_range(4..40);
        let values: Vec<f64> = (0..n)
            .map(|_| match rng.random_range(0..4) {
                0 => 0.5,
                1 => 0.0,
                _ => rng.random::<f64>(),
            })
            .collect();
        let eta = values.iter().sum::<f64>() / n as f64;
        if !(eta > 0.01 && eta < 0.99) {
            continue;
        }
        let pop = AssorterPopulation::new(values.clone(), eta, 1.0).unwrap();
        let all = strategies(&values, eta, &mut rng);
        let strategy = &all[pairs % all.len()];
        let mode = if pairs % 2 == 0 {
            SamplingMode::WithReplacement
        } else {
            SamplingMode::WithoutReplacement
        };

        let mut audit = Audit::new(&pop, strategy, 1e-12, n, mode).unwrap();
        let mut remaining: Vec<f64> = values.clone();
        let history = rng.random_range(0..n / 2);
        for _ in 0..history {
            if audit.status().is_finished() {
                break;
            }
            let i = rng.random_range(0..remaining.len());
            let x = match mode {
                SamplingMode::WithReplacement => remaining[i],
                SamplingMode::WithoutReplacement => remaining.swap_remove(i),
            };
            audit.step(x).unwrap();
        }
        let Some(bet) = audit.next_bet() else {
            continue;
        };
        // the null mean of what is left, and the wealth it implies
        let eta_j = match mode {
            SamplingMode::WithReplacement => eta,
            SamplingMode::WithoutReplacement => {
                remaining.iter().sum::<f64>() / remaining.len() as f64
            }
        };
        let wealth = audit.state().wealth();
        let expected = remaining
            .iter()
            .map(|&x| wealth * (1.0 + bet * (x - eta_j)))
            .sum::<f64>()
            / remaining.len() as f64;
        worst = worst.max((expected - wealth).abs() / wealth.max(1.0));
        pairs += 1;
    }
    (
        worst <= 1e-12,
        format!("max |E[M_t+1] - M_t| / max(M_t, 1) = {worst:.2e} over {pairs} pairs"),
    )
}

/// Reported mean 0.6, with tally errors putting the true mean at exactly 1/2.
fn null_population() -> GeneratedPopulation {
    build_election(&PopulationSpec::new(0.6, 0.0, 0.0, 40, 60, 20).with_seed(5))
        .unwrap()
        .with_true_mean(0.5)
        .unwrap()
        .assemble()
        .unwrap()
}

fn ville() -> (bool, String) {
    let gen = null_population();
    assert!((gen.population.mean() - gen.eta()).abs() < 1e-12);
    let reps = 10_000;
    let bound = 0.05 + 3.0 * (0.05f64 * 0.95 / reps as f64).sqrt();
    let mut worst = (0.0, String::new());
    let mut pass = true;
    for design in [
        SamplingDesign::with_replacement(1_000),
        SamplingDesign::without_replacement(gen.size()),
    ] {
        let config = SimulationConfig {
            replications: reps,
            alpha: 0.05,
            master_seed: 77,
            design,
            strategies: Method::betting_suite(),
        };
        for r in simulate(&config, &gen).unwrap() {
            let rate = r.summary.rejection_rate;
            pass &= rate <= bound;
            if rate >= worst.0 {
                worst = (rate, format!("{} {}", r.strategy, design.kind.as_str()));
            }
        }
    }
    (
        pass,
        format!(
            "max rejection rate {:.4} ({}) vs bound {bound:.4}",
            worst.0, worst.1
        ),
    )
}

fn kelly_oracle() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut worst_bet, mut worst_growth): (f64, f64) = (0.0, 0.0);
    let growth = |values: &[f64], eta: f64, l: f64| {
        values
            .iter()
            .map(|&x| (1.0 + l * (x - eta)).max(0.0).ln())
            .sum::<f64>()
            / values.len() as f64
    };
    for _ in 0..100 {
        let n = rng.random_range(5..200);
        let values: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let eta = rng.random_range(0.2..0.6);
        let bet = kelly_bet_bisection(
            &AssorterPopulation::new(values.clone(), eta, 1.0).unwrap(),
            eta,
        );
        let points = 100_000;
        let (mut best, mut best_growth) = (0.0, f64::NEG_INFINITY);
        for i in 0..=points {
            let l = i as f64 / points as f64 / eta;
            let g = growth(&values, eta, l);
            if g > best_growth {
                (best, best_growth) = (l, g);
            }
        }
        worst_bet = worst_bet.max((bet - best).abs());
        worst_growth = worst_growth.max((growth(&values, eta, bet) - best_growth).abs());
    }
    let eta = 0.45;
    let mut two_point = vec![0.5; 999];
    two_point.push(0.0);
    let root = kelly_bet_bisection(&AssorterPopulation::new(two_point, eta, 1.0).unwrap(), eta);
    let boundary = kelly_bet_bisection(
        &AssorterPopulation::new(vec![1.0; 10], eta, 1.0).unwrap(),
        eta,
    );
    let pass = worst_bet <= 1e-3
        && worst_growth <= 1e-8
        && (root - 2.2).abs() <= 1e-9
        && boundary == 1.0 / eta;
    (
        pass,
        format!(
            "max |bet - grid| = {worst_bet:.1e}, max growth gap = {worst_growth:.1e}, two-point {root:.10}, boundary {boundary:.10}"
        ),
    )
}

fn portfolio_identity() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    let d = 100;
    for _ in 0..100 {
        let n = 40;
        let values: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let eta = rng.random_range(0.3..0.55);
        let pop = AssorterPopulation::new(values.clone(), eta, 1.0).unwrap();
        let len = rng.random_range(1..120);
        let stream: Vec<usize> = (0..len).map(|_| rng.random_range(0..n)).collect();
        let out = run_audit(
            &pop,
            stream.iter().copied(),
            &BetStrategy::UniversalPortfolio { grid_size: d },
            1e-300,
            len,
            SamplingMode::WithReplacement,
        )
        .unwrap();
        let engine = out.trajectory.last().unwrap().wealth;
        let mixture = (1..=d)
            .map(|j| {
                let bet = j as f64 / d as f64 / eta;
                stream
                    .iter()
                    .map(|&i| 1.0 + bet * (values[i] - eta))
                    .product::<f64>()
            })
            .sum::<f64>()
            / d as f64;
        worst = worst.max((engine - mixture).abs() / mixture);
    }
    (
        worst <= 1e-9,
        format!("max relative gap {worst:.2e} over 100 trajectories"),
    )
}

// ---- simulation experiments ----------------------------------------------

fn find<'a>(reports: &'a [SimulationReport], strategy: &str) -> &'a SimulationReport {
    reports.iter().find(|r| r.strategy == strategy).unwrap()
}

fn table2_spot() -> (bool, String) {
    let mut scenarios = preset("table2-spot", DEFAULT_SEED).unwrap();
    for s in &mut scenarios {
        s.config.strategies = vec![Method::OracleKelly, Method::ShrinkTrunc];
    }
    let reports = run_scenarios(&scenarios).unwrap();
    let mut pass = true;
    let mut detail = Vec::new();
    // (reported mean, oracle mean, oracle q90, shrinkage mean)
    for (m, oracle, q90, shrink) in [(0.55, 309.0, 616.0, None), (0.6, 80.0, 155.0, Some(300.0))] {
        let rows: Vec<_> = reports
            .iter()
            .filter(|r| r.reported_mean == m)
            .cloned()
            .collect();
        let o = &find(&rows, "oracle_kelly").summary;
        let s = &find(&rows, "shrink_trunc").summary;
        pass &= within(o.mean, oracle, 0.15) && within(o.q90 as f64, q90, 0.15);
        if let Some(target) = shrink {
            pass &= within(s.mean, target, 0.15);
        }
        detail.push(format!(
            "{m}: oracle {:.1} (q90 {}) vs {oracle} ({q90}), shrink {:.1}{}",
            o.mean,
            o.q90,
            s.mean,
            shrink.map(|t| format!(" vs {t}")).unwrap_or_default()
        ));
    }
    (pass, detail.join("; "))
}

fn table2_desk() -> (bool, String) {
    let mut scenarios = preset("table2-desk", DEFAULT_SEED).unwrap();
    for s in &mut scenarios {
        s.config.strategies = vec![
            Method::OracleKelly,
            Method::AprioriKelly,
            Method::UniversalPortfolio { grid_size: 100 },
            Method::ShrinkTrunc,
        ];
    }
    let reports = run_scenarios(&scenarios).unwrap();
    let mut pass = true;
    let mut detail = Vec::new();
    for chunk in reports.chunks(4) {
        let mean = |name| find(chunk, name).summary.mean;
        let (oracle, ap, up, shrink) = (
            mean("oracle_kelly"),
            mean("apriori_kelly"),
            mean("universal_portfolio"),
            mean("shrink_trunc"),
        );
        let ok = ap <= up && up <= shrink && (ap - oracle).abs() <= 0.1 * oracle;
        pass &= ok;
        detail.push(format!(
            "{}/{}/{}: {ap:.0} {up:.0} {shrink:.0} (oracle {oracle:.0}){}",
            chunk[0].reported_mean,
            chunk[0].across_gap,
            chunk[0].within_gap,
            if ok { "" } else { " !" }
        ));
    }
    (pass, detail.join("; "))
}

/// Unstratified and stratified means for the four gap settings at 0.6.
fn table1_rows() -> Vec<(f64, f64, f64, f64)> {
    let mut rows = Vec::new();
    for (a, w) in [(0.0, 0.0), (0.0, 0.5), (0.5, 0.0), (0.5, 0.5)] {
        let reports = run_scenarios(&table1_scenarios(
            table1_spec(0.6, a, w),
            1_000,
            DEFAULT_SEED,
        ))
        .unwrap();
        rows.push((a, w, reports[0].summary.mean, reports[1].summary.mean));
    }
    rows
}

// ---- sessions ------------------------------------------------------------

fn session_replay() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let names = [
        "apriori_kelly",
        "agrapa",
        "universal_portfolio",
        "shrink_trunc",
        "cobra",
    ];
    let mut worst: f64 = 0.0;
    let mut entries = 0;
    for s in 0..100 {
        let batch = rng.random_range(5..25);
        let n_batch = batch * rng.random_range(1..6);
        let spec = PopulationSpec::new(
            rng.random_range(0.52..0.7),
            0.0,
            rng.random_range(0.0..0.4),
            n_batch,
            n_batch,
            batch,
        )
        .with_seed(rng.random());
        let Ok(election) = build_election(&spec) else {
            continue;
        };
        let mvrs = if rng.random_bool(0.5) {
            election.mvr_votes.clone()
        } else {
            // random disagreements
            election
                .mvr_votes
                .iter()
                .map(|&v| {
                    if rng.random_bool(0.1) {
                        random_vote(&mut rng)
                    } else {
                        v
                    }
                })
                .collect()
        };
        let mode = if rng.random_bool(0.5) {
            SamplingMode::WithoutReplacement
        } else {
            SamplingMode::WithReplacement
        };
        let request = StartRequest {
            cards: Some(election.cards.clone()),
            cards_path: None,
            strategy: SessionStrategy::Named(names[s % names.len()].into()),
            alpha: 0.05,
            seed: rng.random(),
            cap: None,
            sampling: Some(mode),
            grid_size: None,
        };
        let mut session = AuditSession::start(format!("s{s}"), request).unwrap();
        let pop = rescaled(&election.cards, &mvrs).unwrap();
        let k = rng.random_range(1..=session.sample().len());
        let mut entered = 0;
        while entered < k {
            let Some(card) = session.next_card().cloned() else {
                break;
            };
            let index = session.sample()[entered];
            session
                .enter_mvr(&card.card_id, mvrs[index].as_str())
                .unwrap();
            entered += 1;
        }
        let replay = run_audit(
            &pop,
            session.sample()[..entered].iter().copied(),
            session.strategy(),
            0.05,
            session.sample().len(),
            mode,
        )
        .unwrap();
        let p = replay.trajectory.last().unwrap().p_value;
        worst = worst.max((session.p_value() - p).abs() / p);
        entries += entered;
    }
    (
        worst <= 1e-12,
        format!("max relative p-value gap {worst:.2e} over 100 sessions, {entries} entries"),
    )
}

fn main() {
    println!("acceptance criteria");
    let mut outcomes = vec![
        check("equivalence", equivalence),
        check("batch mean", batch_means),
        check("supermartingale", supermartingale),
        check("ville", ville),
        check("kelly oracle", kelly_oracle),
        check("universal portfolio identity", portfolio_identity),
        check("session replay", session_replay),
        check("table2 spot", table2_spot),
        check("table2 desk ordering", table2_desk),
    ];
    let rows = table1_rows();
    let (_, _, unstratified, stratified) = rows[0];
    outcomes.push(check("table1 spot", || {
        (
            within(unstratified, 85.0, 0.15) && within(stratified, 88.0, 0.15),
            format!(
                "0.6/0/0: unstratified {unstratified:.1} vs 85, stratified {stratified:.1} vs 88"
            ),
        )
    }));
    outcomes.push(check("table1 direction", || {
        let pass = rows.iter().all(|&(_, _, u, s)| u <= s);
        let detail = rows
            .iter()
            .map(|(a, w, u, s)| format!("{a}/{w}: {u:.1} vs {s:.1}"))
            .collect::<Vec<_>>()
            .join("; ");
        (pass, detail)
    }));

    let failed: Vec<&Outcome> = outcomes.iter().filter(|o| !o.pass).collect();
    let unexpected: Vec<&&Outcome> = failed
        .iter()
        .filter(|o| !KNOWN_RED.contains(&o.name))
        .collect();
    println!(
        "{} passed, {} failed ({} known red)",
        outcomes.len() - failed.len(),
        failed.len(),
        failed.len() - unexpected.len()
    );
    for o in &unexpected {
        eprintln!("unexpected failure: {}: {}", o.name, o.detail);
    }
    if !unexpected.is_empty() {
        std::process::exit(1);
    }
}
