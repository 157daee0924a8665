//! Value iteration for reachability and expected total reward.

use super::graph;
use super::matrix::SparseMdp;

#[derive(Debug, Clone)]
pub(crate) struct Iterated {
    pub values: Vec<f64>,
    pub iterations: u64,
    pub converged: bool,
    pub residual: f64,
}

fn best(values: impl Iterator<Item = f64>, maximize: bool) -> f64 {
    if maximize {
        values.fold(f64::NEG_INFINITY, f64::max)
    } else {
        values.fold(f64::INFINITY, f64::min)
    }
}

/// Stopping rule for the unbounded iterations. The max-norm change must be
/// at most `epsilon`, and so must the remaining error it implies under the
/// observed contraction rate, `delta * rate / (1 - rate)`. Slowly
/// contracting systems therefore iterate past the first small change.
struct Stop {
    epsilon: f64,
    prev: f64,
}

impl Stop {
    fn new(epsilon: f64) -> Self {
        Self { epsilon, prev: f64::INFINITY }
    }

    fn done(&mut self, delta: f64) -> bool {
        let rate = delta / self.prev;
        self.prev = delta;
        if delta > self.epsilon {
            return false;
        }
        // at the rounding floor the rate estimate is noise
        if delta <= self.epsilon * 1e-6 {
            return true;
        }
        rate < 1.0 && delta * rate / (1.0 - rate) <= self.epsilon
    }
}

/// Optimal probability of `hold U goal` from every state.
pub(crate) fn reach_unbounded(
    m: &SparseMdp,
    hold: &[bool],
    goal: &[bool],
    maximize: bool,
    epsilon: f64,
    max_iterations: u64,
) -> Iterated {
    let n = m.num_states();
    let (prob0, prob1) = graph::precompute(m, hold, goal, maximize);
    let mut x: Vec<f64> = prob1.iter().map(|&one| if one { 1.0 } else { 0.0 }).collect();
    let maybe: Vec<usize> = (0..n).filter(|&s| !prob0[s] && !prob1[s]).collect();
    let mut out = Iterated {
        values: Vec::new(),
        iterations: 0,
        converged: true,
        residual: 0.0,
    };
    if !maybe.is_empty() {
        let mut next = x.clone();
        let mut stop = Stop::new(epsilon);
        out.converged = false;
        while out.iterations < max_iterations {
            let mut delta: f64 = 0.0;
            for &s in &maybe {
                let v = best(m.choices(s).map(|c| m.dot(c, &x)), maximize);
                delta = delta.max((v - x[s]).abs());
                next[s] = v;
            }
            std::mem::swap(&mut x, &mut next);
            out.iterations += 1;
            out.residual = delta;
            if stop.done(delta) {
                out.converged = true;
                break;
            }
        }
    }
    out.values = x;
    out
}

/// Optimal probability of `hold U<=k goal`: exactly `k` synchronous steps.
pub(crate) fn reach_bounded(m: &SparseMdp, hold: &[bool], goal: &[bool], maximize: bool, steps: u64) -> Iterated {
    let n = m.num_states();
    let mut x: Vec<f64> = goal.iter().map(|&g| if g { 1.0 } else { 0.0 }).collect();
    let mut next = x.clone();
    for _ in 0..steps {
        for s in 0..n {
            next[s] = if goal[s] {
                1.0
            } else if !hold[s] {
                0.0
            } else {
                best(m.choices(s).map(|c| m.dot(c, &x)), maximize)
            };
        }
        std::mem::swap(&mut x, &mut next);
    }
    Iterated {
        values: x,
        iterations: steps,
        converged: true,
        residual: 0.0,
    }
}

/// Optimal expected total reward until `goal`, `+inf` where goal is not
/// reached almost surely under the optimising regime.
///
/// Minimisation ranges over schedulers that reach `goal` almost surely:
/// the iteration is restricted to choices that stay inside the region where
/// `Pmax(F goal) = 1`. Maximisation requires every scheduler to reach `goal`
/// almost surely, otherwise the value is `+inf`.
pub(crate) fn total_reward(
    m: &SparseMdp,
    rewards: &[f64],
    goal: &[bool],
    maximize: bool,
    gamma: f64,
    epsilon: f64,
    max_iterations: u64,
) -> Iterated {
    let n = m.num_states();
    let all = vec![true; n];
    let pred = m.predecessors();
    let region = if maximize {
        let (prob0_min, _) = graph::precompute(m, &all, goal, false);
        graph::prob1_min(m, &pred, &all, goal, &prob0_min)
    } else {
        graph::prob1_max(m, &pred, &all, goal)
    };
    let allowed: Vec<bool> = (0..m.choice_origin.len())
        .map(|c| m.entries(c).all(|(t, _)| region[t]))
        .collect();
    let mut y: Vec<f64> = (0..n)
        .map(|s| if region[s] { 0.0 } else { f64::INFINITY })
        .collect();
    let maybe: Vec<usize> = (0..n).filter(|&s| region[s] && !goal[s]).collect();
    let mut out = Iterated {
        values: Vec::new(),
        iterations: 0,
        converged: true,
        residual: 0.0,
    };
    if !maybe.is_empty() {
        let mut next = y.clone();
        let mut stop = Stop::new(epsilon);
        out.converged = false;
        while out.iterations < max_iterations {
            let mut delta: f64 = 0.0;
            for &s in &maybe {
                let v = best(
                    m.choices(s)
                        .filter(|&c| allowed[c])
                        .map(|c| rewards[c] + gamma * m.dot(c, &y)),
                    maximize,
                );
                delta = delta.max((v - y[s]).abs());
                next[s] = v;
            }
            std::mem::swap(&mut y, &mut next);
            out.iterations += 1;
            out.residual = delta;
            if stop.done(delta) {
                out.converged = true;
                break;
            }
        }
    }
    out.values = y;
    out
}
