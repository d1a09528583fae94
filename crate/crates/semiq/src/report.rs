use crate::stats::StatReport;
use semiq_core::apps::GameRecord;
use semiq_core::ramobf::Transcript;
use serde::Serialize;
use std::io::{self, Write};

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct GameRow<'a> {
    trial: u64,
    circuit_id: &'a str,
    x1: u64,
    x2: u64,
    b1: String,
    b2: String,
    win: bool,
}

/// One row per pirate game: `trial,circuitId,x1,x2,b1,b2,win`.
pub fn write_games<W: Write>(w: W, games: &[GameRecord]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for g in games {
        out.serialize(GameRow {
            trial: g.trial,
            circuit_id: &g.circuit_id,
            x1: g.x1,
            x2: g.x2,
            b1: g.b1.to_string(),
            b2: g.b2.to_string(),
            win: g.win,
        })?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct TranscriptLine {
    round: u64,
    direction: &'static str,
    message_type: &'static str,
    byte_length: usize,
    outcome: &'static str,
}

/// One JSON object per line, in message order.
pub fn write_transcript<W: Write>(mut w: W, t: &Transcript) -> io::Result<()> {
    for e in &t.entries {
        let line = TranscriptLine {
            round: e.round,
            direction: e.direction.as_str(),
            message_type: e.message_type.as_str(),
            byte_length: e.byte_length,
            outcome: e.outcome.as_str(),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_report<W: Write>(mut w: W, r: &StatReport) -> io::Result<()> {
    w.write_all(r.to_json().as_bytes())?;
    w.write_all(b"\n")
}
