//! CSV and JSON file formats.
//!
//! * `cards.csv`: `card_id,batch_id,vote,mvr,reference_value,stratum`; an
//!   empty `batch_id` marks a card with a linked CVR. Only the first three
//!   columns are needed to start an audit.
//! * `population.csv`: `index,card_id,stratum,value`, the rescaled
//!   overstatement values. `kelly` only reads `value`.
//! * `manifest.json`: null mean, margin, upper bound, size and seed.

use std::fs::File;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use oneaudit_core::{AssorterPopulation, CardRecord, Vote};
use oneaudit_sim::{GeneratedPopulation, PopulationSpec};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CardRow {
    pub card_id: String,
    #[serde(default)]
    pub batch_id: Option<String>,
    pub vote: Vote,
    #[serde(default)]
    pub mvr: Option<Vote>,
    #[serde(default)]
    pub reference_value: Option<f64>,
    #[serde(default)]
    pub stratum: Option<u32>,
}

impl CardRow {
    pub fn record(&self) -> CardRecord {
        match &self.batch_id {
            Some(b) => CardRecord::batched(self.card_id.clone(), b.clone(), self.vote),
            None => CardRecord::linked(self.card_id.clone(), self.vote),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationRow {
    #[serde(default)]
    pub index: Option<usize>,
    #[serde(default)]
    pub card_id: Option<String>,
    #[serde(default)]
    pub stratum: Option<u32>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// Null mean of the rescaled population, `(2u - v) / (4u)`.
    pub eta: f64,
    /// Reported assorter margin `v`.
    pub margin: f64,
    /// Assorter upper bound `u`.
    pub upper_bound: f64,
    /// Upper bound `2u / (2u - v)` of the overstatement values before rescaling.
    pub overstatement_upper_bound: f64,
    pub n: usize,
    pub seed: u64,
    pub reported_mean: f64,
    pub true_mean: f64,
    pub spec: PopulationSpec,
}

impl Manifest {
    pub fn for_population(generated: &GeneratedPopulation) -> Self {
        let u = 1.0;
        let v = generated.margin();
        Self {
            eta: generated.eta(),
            margin: v,
            upper_bound: u,
            overstatement_upper_bound: 2.0 * u / (2.0 * u - v),
            n: generated.size(),
            seed: generated.spec.seed,
            reported_mean: generated.election.reported_mean(),
            true_mean: generated.election.true_mean(),
            spec: generated.spec.clone(),
        }
    }
}

fn create(path: &Path) -> Result<File> {
    File::create(path).with_context(|| format!("cannot create {}", path.display()))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    Ok(csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file))
}

/// Deserializes every row of a CSV file, naming the file, line and field of
/// the first bad record.
pub fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut reader = csv_reader(path)?;
    let mut rows = Vec::new();
    for row in reader.deserialize() {
        rows.push(row.with_context(|| format!("{}: bad record", path.display()))?);
    }
    Ok(rows)
}

pub fn read_cards(path: &Path) -> Result<Vec<CardRow>> {
    let rows: Vec<CardRow> = read_rows(path)?;
    if rows.is_empty() {
        bail!("{}: no cards", path.display());
    }
    Ok(rows)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("{}: invalid JSON", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

pub fn write_cards(path: &Path, generated: &GeneratedPopulation) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let e = &generated.election;
    let labels = generated.population.labels().unwrap_or_default();
    for (i, (card, mvr)) in e.cards.iter().zip(&e.mvr_votes).enumerate() {
        w.serialize(CardRow {
            card_id: card.card_id.clone(),
            batch_id: card.batch_id.clone(),
            vote: card.vote,
            mvr: Some(*mvr),
            reference_value: Some(generated.refs.values[i]),
            stratum: labels.get(i).copied(),
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_population(path: &Path, generated: &GeneratedPopulation) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let pop = &generated.population;
    let labels = pop.labels().unwrap_or_default();
    for (i, (&value, card)) in pop
        .values()
        .iter()
        .zip(&generated.election.cards)
        .enumerate()
    {
        w.serialize(PopulationRow {
            index: Some(i),
            card_id: Some(card.card_id.clone()),
            stratum: labels.get(i).copied(),
            value,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Values (and stratum labels, when every row has one) of a population file.
pub fn read_population_values(path: &Path) -> Result<(Vec<f64>, Option<Vec<u32>>)> {
    let rows: Vec<PopulationRow> = read_rows(path)?;
    if rows.is_empty() {
        bail!("{}: no values", path.display());
    }
    let values = rows.iter().map(|r| r.value).collect();
    let labels = rows.iter().map(|r| r.stratum).collect::<Option<Vec<_>>>();
    Ok((values, labels))
}

/// Rebuilds the rescaled population written by `generate`.
pub fn load_population(population_csv: &Path, manifest_json: &Path) -> Result<AssorterPopulation> {
    let manifest: Manifest = read_json(manifest_json)?;
    let (values, labels) = read_population_values(population_csv)?;
    if values.len() != manifest.n {
        bail!(
            "{} has {} values but the manifest says N = {}",
            population_csv.display(),
            values.len(),
            manifest.n
        );
    }
    let pop = AssorterPopulation::new(values, manifest.eta, 1.0)
        .with_context(|| population_csv.display().to_string())?;
    Ok(match labels {
        Some(l) => pop.with_labels(l)?,
        None => pop,
    })
}

/// Output paths of `generate` inside `dir`.
pub struct GeneratedFiles {
    pub cards: PathBuf,
    pub population: PathBuf,
    pub manifest: PathBuf,
}

impl GeneratedFiles {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            cards: dir.join("cards.csv"),
            population: dir.join("population.csv"),
            manifest: dir.join("manifest.json"),
        }
    }
}
