//! Persisted traces: one JSON [`TraceRecord`] per line.

use std::collections::HashMap;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::TransitionEvent;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRecord {
    pub seq: u64,
    pub session: String,
    pub ts: u64,
    pub state: String,
    pub action: String,
    pub next_state: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<f64>,
}

impl TraceRecord {
    pub fn from_event(seq: u64, session: &str, ev: &TransitionEvent) -> Self {
        Self {
            seq,
            session: session.to_owned(),
            ts: ev.timestamp.unwrap_or(0),
            state: ev.state.clone(),
            action: ev.action.clone(),
            next_state: ev.next_state.clone(),
            reward: ev.reward,
        }
    }

    pub fn event(&self) -> TransitionEvent {
        TransitionEvent {
            state: self.state.clone(),
            action: self.action.clone(),
            next_state: self.next_state.clone(),
            reward: self.reward,
            timestamp: Some(self.ts),
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("records always serialize")
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line} (byte {offset}): {message}")]
    Malformed { line: usize, offset: u64, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Streams records from JSONL. In strict mode the first bad line is an
/// error; otherwise bad lines are logged and counted in [`TraceReader::skipped`].
pub struct TraceReader<R> {
    input: R,
    strict: bool,
    line: usize,
    offset: u64,
    buf: String,
    last_seq: HashMap<String, u64>,
    pub skipped: u64,
}

impl<R: BufRead> TraceReader<R> {
    pub fn new(input: R, strict: bool) -> Self {
        Self {
            input,
            strict,
            line: 0,
            offset: 0,
            buf: String::new(),
            last_seq: HashMap::new(),
            skipped: 0,
        }
    }

    fn parse_line(&mut self, start: u64) -> Result<TraceRecord, TraceError> {
        let text = self.buf.trim_end_matches(['\n', '\r']);
        let rec: TraceRecord = serde_json::from_str(text).map_err(|e| {
            // column is 1-based and counts bytes within the line
            let at = if e.is_eof() { text.len() as u64 } else { e.column().saturating_sub(1) as u64 };
            TraceError::Malformed {
                line: self.line,
                offset: start + at,
                message: e.to_string(),
            }
        })?;
        if let Some(&prev) = self.last_seq.get(&rec.session) {
            if rec.seq <= prev {
                return Err(TraceError::Malformed {
                    line: self.line,
                    offset: start,
                    message: format!("seq {} of session `{}` does not increase (previous {prev})", rec.seq, rec.session),
                });
            }
        }
        self.last_seq.insert(rec.session.clone(), rec.seq);
        Ok(rec)
    }
}

impl<R: BufRead> Iterator for TraceReader<R> {
    type Item = Result<TraceRecord, TraceError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.buf.clear();
            let start = self.offset;
            let n = match self.input.read_line(&mut self.buf) {
                Ok(0) => return None,
                Ok(n) => n,
                Err(e) => return Some(Err(e.into())),
            };
            self.offset += n as u64;
            self.line += 1;
            if self.buf.trim().is_empty() {
                continue;
            }
            match self.parse_line(start) {
                Ok(rec) => return Some(Ok(rec)),
                Err(e) if self.strict => return Some(Err(e)),
                Err(e) => {
                    log::warn!("skipping trace {e}");
                    self.skipped += 1;
                }
            }
        }
    }
}

pub fn write_trace<'a, W: Write>(mut out: W, records: impl IntoIterator<Item = &'a TraceRecord>) -> io::Result<()> {
    for r in records {
        writeln!(out, "{}", r.to_json_line())?;
    }
    out.flush()
}
