//! Live audit sessions: the sample is drawn up front from a recorded seed and
//! the auditor enters one manual vote record per drawn card, in order.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use oneaudit_core::betting::strategy::DEFAULT_GRID_SIZE;
use oneaudit_core::{
    batch_cvr_pools, oneaudit_references, overstatement_assort, overstatement_population,
    overstatement_upper_bound, plurality_assorter, rescale, rescaled_null_mean, Audit, AuditStatus,
    BetStrategy, CardRecord, ReferenceValueSet, SamplingMode, Vote,
};
use oneaudit_sim::{draw_sample_stream, replication_seed, SamplingDesign};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::files::read_cards;

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("OutOfOrderEntry: the next card to enter is {expected}, not {got}")]
    OutOfOrderEntry { expected: String, got: String },
    #[error("SessionNotFound: no session {0}")]
    SessionNotFound(String),
    #[error("InvalidVote: {0}")]
    InvalidVote(String),
    #[error("SessionClosed: session is {0}, no further entries are accepted")]
    SessionClosed(SessionStatus),
    #[error("InvalidRequest: {0}")]
    InvalidRequest(String),
    #[error("entry log: {0}")]
    Log(String),
}

impl SessionError {
    pub fn code(&self) -> &'static str {
        match self {
            SessionError::OutOfOrderEntry { .. } => "OutOfOrderEntry",
            SessionError::SessionNotFound(_) => "SessionNotFound",
            SessionError::InvalidVote(_) => "InvalidVote",
            SessionError::SessionClosed(_) => "SessionClosed",
            SessionError::InvalidRequest(_) => "InvalidRequest",
            SessionError::Log(_) => "LogError",
        }
    }
}

fn invalid(msg: impl Into<String>) -> SessionError {
    SessionError::InvalidRequest(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    AwaitingMvr,
    StoppedConfirmed,
    EscalateFullCount,
}

impl SessionStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SessionStatus::AwaitingMvr => "awaiting_mvr",
            SessionStatus::StoppedConfirmed => "stopped_confirmed",
            SessionStatus::EscalateFullCount => "escalate_full_count",
        }
    }

    fn of(status: AuditStatus) -> Self {
        match status {
            AuditStatus::InProgress => SessionStatus::AwaitingMvr,
            AuditStatus::Confirmed => SessionStatus::StoppedConfirmed,
            AuditStatus::Escalate(_) => SessionStatus::EscalateFullCount,
        }
    }
}

impl std::fmt::Display for SessionStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A strategy by name, or spelled out in full.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SessionStrategy {
    Named(String),
    Explicit(BetStrategy),
}

impl SessionStrategy {
    /// Resolves a named strategy against the reported (postulated) population.
    fn resolve(&self, postulated: &[f64], grid_size: usize) -> Result<BetStrategy, SessionError> {
        let name = match self {
            SessionStrategy::Explicit(s) => return Ok(s.clone()),
            SessionStrategy::Named(name) => name.trim().to_ascii_lowercase().replace('-', "_"),
        };
        Ok(match name.as_str() {
            "apriori_kelly" | "ap_kelly" | "apriori" => BetStrategy::AprioriKelly {
                postulated: postulated.to_vec(),
            },
            "agrapa" => BetStrategy::agrapa(),
            "universal_portfolio" | "up" => BetStrategy::UniversalPortfolio { grid_size },
            "shrink_trunc" | "truncated_shrinkage" => {
                BetStrategy::shrink_trunc(postulated.iter().sum::<f64>() / postulated.len() as f64)
            }
            "cobra" => BetStrategy::cobra(),
            "oracle_kelly" => {
                return Err(invalid(
                    "oracle_kelly needs the true votes, which a live audit does not have",
                ))
            }
            other => return Err(invalid(format!("unknown strategy `{other}`"))),
        })
    }
}

/// Body of `POST /sessions`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartRequest {
    /// Cards with their reported votes; alternatively `cards_path`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cards: Option<Vec<CardRecord>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cards_path: Option<PathBuf>,
    pub strategy: SessionStrategy,
    pub alpha: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cap: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampling: Option<SamplingMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_size: Option<usize>,
}

/// Body of `POST /sessions/{id}/mvr`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntryRequest {
    pub card_id: String,
    pub vote: String,
}

/// Decimal string with 12 significant digits.
pub fn sig12(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.11e}");
    let exp: i32 = sci
        .rsplit('e')
        .next()
        .and_then(|e| e.parse().ok())
        .unwrap_or(0);
    if (-7..16).contains(&exp) {
        format!("{x:.*}", (11 - exp).max(0) as usize)
    } else {
        sci
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextCard {
    pub draw: usize,
    pub card_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryView {
    pub draw: usize,
    pub card_id: String,
    pub vote: Vote,
    pub p_value: String,
    pub wealth: String,
}

/// JSON view of a session, as returned by every endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub status: SessionStatus,
    pub strategy: String,
    pub alpha: String,
    pub eta: String,
    pub margin: String,
    pub population_size: usize,
    pub sample_size: usize,
    pub seed: u64,
    pub draws: usize,
    pub p_value: String,
    pub wealth: String,
    pub next_card: Option<NextCard>,
    pub entries: Vec<EntryView>,
}

#[derive(Debug, Clone)]
struct Entry {
    card_id: String,
    vote: Vote,
    p_value: f64,
    wealth: f64,
}

pub struct AuditSession {
    id: String,
    request: StartRequest,
    cards: Vec<CardRecord>,
    refs: ReferenceValueSet,
    strategy: BetStrategy,
    stream: Vec<usize>,
    audit: Audit,
    entries: Vec<Entry>,
}

impl AuditSession {
    pub fn start(id: impl Into<String>, request: StartRequest) -> Result<Self, SessionError> {
        let cards = match (&request.cards, &request.cards_path) {
            (Some(cards), None) => cards.clone(),
            (None, Some(path)) => read_cards(path)
                .map_err(|e| invalid(format!("{e:#}")))?
                .iter()
                .map(|r| r.record())
                .collect(),
            _ => return Err(invalid("give exactly one of `cards` and `cards_path`")),
        };
        if cards.is_empty() {
            return Err(invalid("no cards"));
        }
        let assorter = plurality_assorter::<f64>();
        let refs = oneaudit_references(&cards, &batch_cvr_pools(&cards), &assorter)
            .map_err(|e| invalid(e.to_string()))?;
        let reported: Vec<f64> = cards.iter().map(|c| assorter.value(c.vote)).collect();
        let postulated = overstatement_population(&refs, &reported, assorter.upper_bound)
            .and_then(|raw| rescale(&raw))
            .map_err(|e| invalid(e.to_string()))?;

        let grid_size = request.grid_size.unwrap_or(DEFAULT_GRID_SIZE);
        let strategy = request.strategy.resolve(postulated.values(), grid_size)?;
        let mode = request.sampling.unwrap_or(SamplingMode::WithoutReplacement);
        let n = cards.len();
        let cap = request.cap.unwrap_or(n);
        let design = match mode {
            SamplingMode::WithoutReplacement => SamplingDesign::without_replacement(cap.min(n)),
            SamplingMode::WithReplacement => SamplingDesign::with_replacement(cap),
        };
        let stream: Vec<usize> = draw_sample_stream(
            &design,
            &postulated,
            ChaCha8Rng::seed_from_u64(request.seed),
        )
        .map_err(|e| invalid(e.to_string()))?
        .collect();
        let audit = Audit::new(&postulated, &strategy, request.alpha, stream.len(), mode)
            .map_err(|e| invalid(e.to_string()))?;
        Ok(Self {
            id: id.into(),
            request,
            cards,
            refs,
            strategy,
            stream,
            audit,
            entries: Vec::new(),
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn request(&self) -> &StartRequest {
        &self.request
    }

    pub fn status(&self) -> SessionStatus {
        SessionStatus::of(self.audit.status())
    }

    /// Population indices of the pre-drawn sample.
    pub fn sample(&self) -> &[usize] {
        &self.stream
    }

    pub fn strategy(&self) -> &BetStrategy {
        &self.strategy
    }

    pub fn p_value(&self) -> f64 {
        self.audit.p_value()
    }

    pub fn next_card(&self) -> Option<&CardRecord> {
        if self.status() != SessionStatus::AwaitingMvr {
            return None;
        }
        self.stream.get(self.entries.len()).map(|&i| &self.cards[i])
    }

    /// Rescaled overstatement value of card `index` given its manual vote.
    pub fn card_value(&self, index: usize, vote: Vote) -> f64 {
        let assorter = plurality_assorter::<f64>();
        let u = assorter.upper_bound;
        let v = self.refs.reported_margin;
        let bound = overstatement_upper_bound(u, v);
        let raw = overstatement_assort(self.refs.values[index], assorter.value(vote), u, v)
            .max(0.0)
            .min(bound);
        (raw / bound).max(0.0).min(1.0)
    }

    /// Records the manual vote for the next drawn card. Nothing changes on
    /// error.
    pub fn enter_mvr(&mut self, card_id: &str, vote: &str) -> Result<(), SessionError> {
        let status = self.status();
        if status != SessionStatus::AwaitingMvr {
            return Err(SessionError::SessionClosed(status));
        }
        let vote: Vote = vote.parse().map_err(SessionError::InvalidVote)?;
        let index = self.stream[self.entries.len()];
        let expected = &self.cards[index].card_id;
        if card_id != expected {
            return Err(SessionError::OutOfOrderEntry {
                expected: expected.clone(),
                got: card_id.to_string(),
            });
        }
        let x = self.card_value(index, vote);
        let step = self.audit.step(x).map_err(|e| invalid(e.to_string()))?;
        self.entries.push(Entry {
            card_id: card_id.to_string(),
            vote,
            p_value: step.p_value,
            wealth: step.wealth,
        });
        Ok(())
    }

    pub fn view(&self) -> SessionView {
        let name = match &self.request.strategy {
            SessionStrategy::Named(n) => n.clone(),
            SessionStrategy::Explicit(s) => s.name().to_string(),
        };
        SessionView {
            session_id: self.id.clone(),
            status: self.status(),
            strategy: name,
            alpha: sig12(self.audit.alpha()),
            eta: sig12(rescaled_null_mean(1.0, self.refs.reported_margin)),
            margin: sig12(self.refs.reported_margin),
            population_size: self.cards.len(),
            sample_size: self.stream.len(),
            seed: self.request.seed,
            draws: self.entries.len(),
            p_value: sig12(self.audit.p_value()),
            wealth: sig12(self.audit.state().wealth()),
            next_card: self.next_card().map(|c| NextCard {
                draw: self.entries.len() + 1,
                card_id: c.card_id.clone(),
                batch_id: c.batch_id.clone(),
            }),
            entries: self
                .entries
                .iter()
                .enumerate()
                .map(|(i, e)| EntryView {
                    draw: i + 1,
                    card_id: e.card_id.clone(),
                    vote: e.vote,
                    p_value: sig12(e.p_value),
                    wealth: sig12(e.wealth),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum LogLine {
    Start {
        session_id: String,
        request: StartRequest,
    },
    Mvr(EntryRequest),
}

/// All sessions of one service, with an optional append-only entry log per
/// session.
///
/// Each session sits behind its own mutex: entries are serialized and a
/// status read never sees a half-applied entry.
#[derive(Default)]
pub struct SessionStore {
    sessions: RwLock<HashMap<String, Arc<Mutex<AuditSession>>>>,
    log_dir: Option<PathBuf>,
    counter: AtomicU64,
}

impl SessionStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Store logging to `dir`, rebuilt from any logs already there.
    pub fn with_log_dir(dir: impl Into<PathBuf>) -> Result<Self, SessionError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)
            .map_err(|e| SessionError::Log(format!("{}: {e}", dir.display())))?;
        let store = Self {
            log_dir: Some(dir.clone()),
            ..Self::default()
        };
        store.replay(&dir)?;
        Ok(store)
    }

    fn log_path(&self, id: &str) -> Option<PathBuf> {
        self.log_dir.as_ref().map(|d| d.join(format!("{id}.jsonl")))
    }

    fn append(&self, id: &str, line: &LogLine) -> Result<(), SessionError> {
        let Some(path) = self.log_path(id) else {
            return Ok(());
        };
        let err = |e: std::io::Error| SessionError::Log(format!("{}: {e}", path.display()));
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(err)?;
        let mut text = serde_json::to_string(line).expect("log lines serialize");
        text.push('\n');
        file.write_all(text.as_bytes()).map_err(err)?;
        file.sync_data().map_err(err)
    }

    fn replay(&self, dir: &Path) -> Result<(), SessionError> {
        let mut logs: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| SessionError::Log(format!("{}: {e}", dir.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        logs.sort();
        for path in logs {
            let file = File::open(&path)
                .map_err(|e| SessionError::Log(format!("{}: {e}", path.display())))?;
            let mut session: Option<AuditSession> = None;
            for (n, line) in BufReader::new(file).lines().enumerate() {
                let line =
                    line.map_err(|e| SessionError::Log(format!("{}: {e}", path.display())))?;
                let bad =
                    |e: String| SessionError::Log(format!("{}:{}: {e}", path.display(), n + 1));
                match serde_json::from_str(&line).map_err(|e| bad(e.to_string()))? {
                    LogLine::Start {
                        session_id,
                        request,
                    } => {
                        session = Some(
                            AuditSession::start(session_id, request)
                                .map_err(|e| bad(e.to_string()))?,
                        );
                    }
                    LogLine::Mvr(entry) => session
                        .as_mut()
                        .ok_or_else(|| bad("entry before start".into()))?
                        .enter_mvr(&entry.card_id, &entry.vote)
                        .map_err(|e| bad(e.to_string()))?,
                }
            }
            if let Some(s) = session {
                self.counter.fetch_add(1, Ordering::Relaxed);
                self.sessions
                    .write()
                    .expect("session map poisoned")
                    .insert(s.id.clone(), Arc::new(Mutex::new(s)));
            }
        }
        Ok(())
    }

    fn get(&self, id: &str) -> Result<Arc<Mutex<AuditSession>>, SessionError> {
        self.sessions
            .read()
            .expect("session map poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| SessionError::SessionNotFound(id.to_string()))
    }

    pub fn session_start(&self, request: StartRequest) -> Result<SessionView, SessionError> {
        let mut sessions = self.sessions.write().expect("session map poisoned");
        let id = loop {
            let n = self.counter.fetch_add(1, Ordering::Relaxed);
            let id = format!("{:016x}", replication_seed(request.seed, n));
            if !sessions.contains_key(&id) {
                break id;
            }
        };
        let session = AuditSession::start(id.clone(), request.clone())?;
        self.append(
            &id,
            &LogLine::Start {
                session_id: id.clone(),
                request,
            },
        )?;
        let view = session.view();
        sessions.insert(id, Arc::new(Mutex::new(session)));
        Ok(view)
    }

    pub fn session_enter_mvr(
        &self,
        id: &str,
        entry: EntryRequest,
    ) -> Result<SessionView, SessionError> {
        let session = self.get(id)?;
        let mut session = session.lock().expect("session poisoned");
        session.enter_mvr(&entry.card_id, &entry.vote)?;
        self.append(id, &LogLine::Mvr(entry))?;
        Ok(session.view())
    }

    pub fn session_status(&self, id: &str) -> Result<SessionView, SessionError> {
        let session = self.get(id)?;
        let view = session.lock().expect("session poisoned").view();
        Ok(view)
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self
            .sessions
            .read()
            .expect("session map poisoned")
            .keys()
            .cloned()
            .collect();
        ids.sort();
        ids
    }
}
