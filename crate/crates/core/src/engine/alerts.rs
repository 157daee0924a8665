//! Edge-triggered threshold alerts.
//!
//! A property raises an alert when its result is a violated threshold and
//! it is not already latched. A later satisfied result or acknowledging the
//! alert re-arms it. Undefined results leave the latch untouched.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::checker::{Value, VerificationResult};
use crate::config::{GuardConfig, Severity};
use crate::pctl::Bound;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alert {
    pub id: u64,
    pub property: String,
    pub severity: Severity,
    pub value: Value,
    pub threshold: Bound,
    pub revision: u64,
    pub cycle: u64,
    /// Timestamp of the last event applied before the cycle.
    pub ts: u64,
    pub acknowledged: bool,
    /// Command dispatched for this alert, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub on_violation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub callback_error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct AlertBook {
    alerts: VecDeque<Alert>,
    limit: usize,
    latched: HashMap<String, u64>,
    next_id: u64,
}

impl AlertBook {
    pub fn new(limit: usize) -> Self {
        Self {
            alerts: VecDeque::new(),
            limit: limit.max(1),
            latched: HashMap::new(),
            next_id: 1,
        }
    }

    pub fn newest_first(&self) -> Vec<Alert> {
        self.alerts.iter().rev().cloned().collect()
    }

    pub fn get(&self, id: u64) -> Option<&Alert> {
        self.alerts.iter().find(|a| a.id == id)
    }

    pub fn is_latched(&self, property: &str) -> bool {
        self.latched.contains_key(property)
    }

    /// Marks the alert acknowledged and re-arms its property.
    pub fn acknowledge(&mut self, id: u64) -> Option<Alert> {
        let alert = self.alerts.iter_mut().find(|a| a.id == id)?;
        alert.acknowledged = true;
        if self.latched.get(&alert.property) == Some(&id) {
            self.latched.remove(&alert.property);
        }
        Some(alert.clone())
    }

    pub fn set_callback_error(&mut self, id: u64, error: String) {
        if let Some(a) = self.alerts.iter_mut().find(|a| a.id == id) {
            a.callback_error = Some(error);
        }
    }

    fn push(&mut self, alert: Alert) {
        if self.alerts.len() == self.limit {
            self.alerts.pop_front();
        }
        self.alerts.push_back(alert);
    }
}

/// Raises alerts for this cycle's results and records them in `book`.
pub fn evaluate_thresholds(
    results: &[VerificationResult],
    cfg: &GuardConfig,
    book: &mut AlertBook,
    cycle: u64,
    ts: u64,
) -> Vec<Alert> {
    let mut raised = Vec::new();
    for spec in &cfg.properties {
        let Some(threshold) = spec.threshold else { continue };
        let Some(r) = results.iter().find(|r| r.property == spec.name()) else { continue };
        match r.satisfied {
            Some(true) => {
                book.latched.remove(spec.name());
            }
            Some(false) if !book.is_latched(spec.name()) => {
                let alert = Alert {
                    id: book.next_id,
                    property: spec.name().to_owned(),
                    severity: spec.severity,
                    value: r.value,
                    threshold,
                    revision: r.revision,
                    cycle,
                    ts,
                    acknowledged: false,
                    on_violation: spec.on_violation.clone(),
                    callback_error: None,
                };
                book.next_id += 1;
                book.latched.insert(spec.name().to_owned(), alert.id);
                book.push(alert.clone());
                raised.push(alert);
            }
            _ => {}
        }
    }
    raised
}
