//! Interactive audit at the terminal.
//!
//! Each prompt names the next card to pull. Answer with its manual vote
//! (`winner`, `loser`, `other`, or `w`/`l`/`o`), optionally preceded by the
//! card id as a check. `status` reprints the state, `quit` stops.

use std::io::{BufRead, Write};

use crate::session::{sig12, AuditSession, SessionError, SessionStatus};

pub fn run_terminal<R: BufRead, W: Write>(
    session: &mut AuditSession,
    input: R,
    mut out: W,
) -> std::io::Result<SessionStatus> {
    let view = session.view();
    writeln!(
        out,
        "session {}: N = {}, margin {}, eta {}, alpha {}, {} cards drawn with seed {}",
        view.session_id,
        view.population_size,
        view.margin,
        view.eta,
        view.alpha,
        view.sample_size,
        view.seed
    )?;
    prompt(session, &mut out)?;
    for line in input.lines() {
        let line = line?;
        let words: Vec<&str> = line.split_whitespace().collect();
        let Some(expected) = session.next_card().map(|c| c.card_id.clone()) else {
            break;
        };
        let result = match words[..] {
            [] => continue,
            ["quit"] | ["q"] | ["exit"] => break,
            ["status"] => {
                status(session, &mut out)?;
                continue;
            }
            [vote] => session.enter_mvr(&expected, vote),
            [card_id, vote] => session.enter_mvr(card_id, vote),
            _ => Err(SessionError::InvalidVote(line.trim().to_string())),
        };
        match result {
            Ok(()) => {
                let p = session.p_value();
                let wealth = session.view().wealth;
                writeln!(out, "  p-value {}  wealth {}", sig12(p), wealth)?;
            }
            Err(e) => writeln!(out, "  {e}")?,
        }
        if session.status() != SessionStatus::AwaitingMvr {
            break;
        }
        prompt(session, &mut out)?;
    }
    status(session, &mut out)?;
    Ok(session.status())
}

fn prompt<W: Write>(session: &AuditSession, out: &mut W) -> std::io::Result<()> {
    if let Some(card) = session.next_card() {
        let draw = session.view().draws + 1;
        match &card.batch_id {
            Some(b) => write!(out, "draw {draw}: card {} (batch {b}) > ", card.card_id)?,
            None => write!(out, "draw {draw}: card {} > ", card.card_id)?,
        }
        out.flush()?;
    }
    Ok(())
}

fn status<W: Write>(session: &AuditSession, out: &mut W) -> std::io::Result<()> {
    let view = session.view();
    let verdict = match view.status {
        SessionStatus::AwaitingMvr => "awaiting manual vote records",
        SessionStatus::StoppedConfirmed => "risk limit met: the reported outcome stands",
        SessionStatus::EscalateFullCount => "risk limit not met: escalate to a full hand count",
    };
    writeln!(
        out,
        "{} draws, p-value {}, wealth {}: {verdict}",
        view.draws, view.p_value, view.wealth
    )
}
