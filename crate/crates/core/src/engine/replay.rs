//! Deterministic reprocessing of a persisted trace.

use std::io::BufRead;
use std::time::Duration;

use super::guard::{Guard, StopReport};
use super::{EngineError, Lifecycle};
use crate::trace::TraceReader;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Speed {
    AsFastAsPossible,
    /// Replays with the recorded gaps between timestamps, read as
    /// milliseconds, divided by this factor.
    Multiplier(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplayOptions {
    /// Abort on the first malformed line instead of skipping it.
    pub strict: bool,
    pub speed: Speed,
}

impl Default for ReplayOptions {
    fn default() -> Self {
        Self {
            strict: true,
            speed: Speed::AsFastAsPossible,
        }
    }
}

/// Feeds every record of `input` through `guard`'s logger and stops it.
///
/// Starts the guard if it has not been started. Build it with
/// [`Guard::with_queue_policy`] and `Some(QueueFullPolicy::Block)` so that
/// no event is lost and the result depends on the trace alone.
///
/// [`Guard::with_queue_policy`]: super::Guard::with_queue_policy
pub fn replay_trace<R: BufRead>(guard: &Guard, input: R, opts: ReplayOptions) -> Result<StopReport, EngineError> {
    if guard.lifecycle() == Lifecycle::Created {
        guard.start()?;
    }
    let mut reader = TraceReader::new(input, opts.strict);
    let mut prev_ts: Option<u64> = None;
    for rec in reader.by_ref() {
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                let _ = guard.stop();
                return Err(e.into());
            }
        };
        if let (Speed::Multiplier(m), Some(p)) = (opts.speed, prev_ts) {
            if m > 0.0 && rec.ts > p {
                std::thread::sleep(Duration::from_secs_f64((rec.ts - p) as f64 / 1000.0 / m));
            }
        }
        prev_ts = Some(rec.ts);
        guard.log_event(rec.event())?;
    }
    if reader.skipped > 0 {
        log::warn!("skipped {} malformed trace lines", reader.skipped);
    }
    guard.stop()
}
