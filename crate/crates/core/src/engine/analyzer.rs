//! The single owner of the mutable model.

use std::sync::Arc;
use std::time::Instant;

use crate::checker::{check, VerificationResult};
use crate::config::GuardConfig;
use crate::mdp::{LearnedMdp, MdpError, ModelSnapshot, TransitionEvent};

/// Output of one analysis cycle.
#[derive(Debug, Clone)]
pub struct CycleReport {
    pub cycle: u64,
    pub revision: u64,
    pub snapshot: Arc<ModelSnapshot>,
    /// One per configured property, in configuration order.
    pub results: Vec<VerificationResult>,
    pub micros: u64,
}

/// Applies events and runs cycles. Used directly for synchronous
/// processing and by [`super::Guard`]'s analyzer thread.
pub struct Analyzer {
    cfg: Arc<GuardConfig>,
    model: LearnedMdp,
    applied: u64,
    invalid: u64,
    pending: u64,
    cycles: u64,
    last_ts: u64,
}

impl Analyzer {
    pub fn new(cfg: Arc<GuardConfig>) -> Self {
        let model = cfg.learned_mdp();
        Self {
            cfg,
            model,
            applied: 0,
            invalid: 0,
            pending: 0,
            cycles: 0,
            last_ts: 0,
        }
    }

    pub fn config(&self) -> &GuardConfig {
        &self.cfg
    }

    pub fn model(&self) -> &LearnedMdp {
        &self.model
    }

    pub fn applied(&self) -> u64 {
        self.applied
    }

    pub fn invalid(&self) -> u64 {
        self.invalid
    }

    pub fn cycles(&self) -> u64 {
        self.cycles
    }

    /// Events applied since the last cycle.
    pub fn pending(&self) -> u64 {
        self.pending
    }

    pub fn last_ts(&self) -> u64 {
        self.last_ts
    }

    /// Records one event, then decays if the decay period has elapsed.
    /// Rejected events leave the model untouched.
    pub fn apply(&mut self, ev: &TransitionEvent) -> Result<(), MdpError> {
        if let Err(e) = self.model.record_transition(ev) {
            self.invalid += 1;
            return Err(e);
        }
        self.applied += 1;
        self.pending += 1;
        if let Some(ts) = ev.timestamp {
            self.last_ts = ts;
        }
        if let Some(decay) = self.cfg.learner.decay {
            if self.applied % decay.every == 0 {
                self.model.apply_forgetting(decay.lambda)?;
            }
        }
        Ok(())
    }

    pub fn cycle_due(&self) -> bool {
        self.pending >= self.cfg.analysis.every_events
    }

    /// Snapshots the model and checks every configured property. A failing
    /// property yields a result carrying the error; the cycle always
    /// completes.
    pub fn run_cycle(&mut self) -> CycleReport {
        let started = Instant::now();
        let snapshot = Arc::new(self.model.snapshot());
        let results = check_all(&self.cfg, &snapshot);
        self.pending = 0;
        self.cycles += 1;
        CycleReport {
            cycle: self.cycles,
            revision: snapshot.revision(),
            snapshot,
            results,
            micros: started.elapsed().as_micros() as u64,
        }
    }
}

/// Checks every configured property against `snap`, applying configured
/// thresholds to quantity forms.
pub fn check_all(cfg: &GuardConfig, snap: &ModelSnapshot) -> Vec<VerificationResult> {
    let settings = cfg.check_settings();
    cfg.properties
        .iter()
        .map(|spec| match check(snap, &spec.property, &settings) {
            Ok(mut r) => {
                if let Some(t) = spec.threshold {
                    r.apply_bound(t);
                }
                r
            }
            Err(e) => VerificationResult::failed(spec.name(), snap.revision(), e),
        })
        .collect()
}
