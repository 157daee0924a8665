//! Compressed sparse form of a snapshot, with dead ends and terminal states
//! closed off by a synthetic self-loop.

use crate::mdp::{ModelSnapshot, StateId};

#[derive(Debug, Clone)]
pub(crate) struct SparseMdp {
    /// Choices of state `s` are `state_start[s]..state_start[s + 1]`.
    pub state_start: Vec<usize>,
    /// Entries of choice `c` are `choice_start[c]..choice_start[c + 1]`.
    pub choice_start: Vec<usize>,
    /// Index into `snap.choices(s)`, or `None` for a synthetic self-loop.
    pub choice_origin: Vec<Option<usize>>,
    pub cols: Vec<usize>,
    pub probs: Vec<f64>,
}

impl SparseMdp {
    pub fn from_snapshot(snap: &ModelSnapshot) -> Self {
        let n = snap.num_states();
        let mut m = SparseMdp {
            state_start: Vec::with_capacity(n + 1),
            choice_start: vec![0],
            choice_origin: Vec::new(),
            cols: Vec::new(),
            probs: Vec::new(),
        };
        for s in 0..n {
            m.state_start.push(m.choice_origin.len());
            let choices = snap.choices(StateId(s));
            if choices.is_empty() || snap.is_terminal(StateId(s)) {
                m.cols.push(s);
                m.probs.push(1.0);
                m.choice_origin.push(None);
                m.choice_start.push(m.cols.len());
                continue;
            }
            for (i, c) in choices.iter().enumerate() {
                for (t, p) in c.distribution() {
                    m.cols.push(t);
                    m.probs.push(p);
                }
                m.choice_origin.push(Some(i));
                m.choice_start.push(m.cols.len());
            }
        }
        m.state_start.push(m.choice_origin.len());
        m
    }

    pub fn num_states(&self) -> usize {
        self.state_start.len() - 1
    }

    pub fn choices(&self, s: usize) -> std::ops::Range<usize> {
        self.state_start[s]..self.state_start[s + 1]
    }

    pub fn entries(&self, c: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.choice_start[c]..self.choice_start[c + 1];
        self.cols[r.clone()].iter().copied().zip(self.probs[r].iter().copied())
    }

    /// `Σ_{s'} P(s'|c) x(s')`
    pub fn dot(&self, c: usize, x: &[f64]) -> f64 {
        let r = self.choice_start[c]..self.choice_start[c + 1];
        self.cols[r.clone()]
            .iter()
            .zip(&self.probs[r])
            .map(|(&t, &p)| p * x[t])
            .sum()
    }

    /// For every state, the `(source state, choice)` pairs that can move to it.
    pub fn predecessors(&self) -> Vec<Vec<(usize, usize)>> {
        let mut pred = vec![Vec::new(); self.num_states()];
        for s in 0..self.num_states() {
            for c in self.choices(s) {
                for (t, _) in self.entries(c) {
                    if pred[t].last() != Some(&(s, c)) {
                        pred[t].push((s, c));
                    }
                }
            }
        }
        pred
    }
}
