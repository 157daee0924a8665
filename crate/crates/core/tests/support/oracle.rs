//! Brute-force reference solutions for small MDPs: every memoryless
//! deterministic policy is enumerated and its chain solved as a linear
//! system.

#![allow(dead_code)]

use agentguard_core::mdp::{ModelSnapshot, StateId};
use nalgebra::{DMatrix, DVector};

/// Per-state transition rows of the chain induced by choosing, in each
/// state, the choice at the given index. States without choices loop.
pub fn chain(snap: &ModelSnapshot, policy: &[usize]) -> Vec<Vec<(usize, f64)>> {
    (0..snap.num_states())
        .map(|s| match snap.choices(StateId(s)).get(policy[s]) {
            Some(c) => c.distribution().collect(),
            None => vec![(s, 1.0)],
        })
        .collect()
}

pub fn policies(snap: &ModelSnapshot) -> Vec<Vec<usize>> {
    let widths: Vec<usize> = (0..snap.num_states())
        .map(|s| snap.choices(StateId(s)).len().max(1))
        .collect();
    let mut out = vec![vec![]];
    for w in widths {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..w).map(move |i| {
                    let mut q = p.clone();
                    q.push(i);
                    q
                })
            })
            .collect();
    }
    out
}

pub fn reaches(rows: &[Vec<(usize, f64)>], goal: &[bool]) -> Vec<bool> {
    let mut can = goal.to_vec();
    loop {
        let mut changed = false;
        for s in 0..rows.len() {
            if !can[s] && rows[s].iter().any(|&(t, p)| p > 0.0 && can[t]) {
                can[s] = true;
                changed = true;
            }
        }
        if !changed {
            return can;
        }
    }
}

/// Exact reachability probabilities of a chain.
pub fn solve_reach(rows: &[Vec<(usize, f64)>], goal: &[bool]) -> Vec<f64> {
    let n = rows.len();
    let can = reaches(rows, goal);
    let mut a = DMatrix::<f64>::identity(n, n);
    let mut b = DVector::<f64>::zeros(n);
    for s in 0..n {
        if goal[s] {
            b[s] = 1.0;
        } else if can[s] {
            for &(t, p) in &rows[s] {
                a[(s, t)] -= p;
            }
        }
    }
    let x = a.lu().solve(&b).unwrap();
    x.iter().copied().collect()
}

/// Expected steps to the goal; `None` when the goal is missed with positive
/// probability.
pub fn solve_steps(rows: &[Vec<(usize, f64)>], goal: &[bool], init: usize) -> Option<f64> {
    let n = rows.len();
    let p = solve_reach(rows, goal);
    if p[init] < 1.0 - 1e-9 {
        return None;
    }
    let sure: Vec<bool> = p.iter().map(|&x| x > 1.0 - 1e-9).collect();
    let mut a = DMatrix::<f64>::identity(n, n);
    let mut b = DVector::<f64>::zeros(n);
    for s in 0..n {
        if sure[s] && !goal[s] {
            b[s] = 1.0;
            for &(t, q) in &rows[s] {
                a[(s, t)] -= q;
            }
        }
    }
    Some(a.lu().solve(&b).unwrap()[init])
}

/// Optimal probability of reaching `goal` within `k` steps, by explicit
/// finite-horizon recursion. Dead ends stay put.
pub fn bounded_reach(snap: &ModelSnapshot, goal: &[bool], k: u64, maximize: bool) -> Vec<f64> {
    let n = snap.num_states();
    let mut v: Vec<f64> = goal.iter().map(|&g| if g { 1.0 } else { 0.0 }).collect();
    for _ in 0..k {
        v = (0..n)
            .map(|s| {
                if goal[s] {
                    return 1.0;
                }
                let choices = snap.choices(StateId(s));
                if choices.is_empty() {
                    return v[s];
                }
                let vals = choices.iter().map(|c| c.distribution().map(|(t, p)| p * v[t]).sum::<f64>());
                if maximize {
                    vals.fold(f64::NEG_INFINITY, f64::max)
                } else {
                    vals.fold(f64::INFINITY, f64::min)
                }
            })
            .collect();
    }
    v
}

/// `(min, max)` over all policies of the probability of reaching `goal`
/// from `init`.
pub fn extremal_reach(snap: &ModelSnapshot, goal: &[bool], init: usize) -> (f64, f64) {
    policies(snap)
        .iter()
        .map(|p| solve_reach(&chain(snap, p), goal)[init])
        .fold((1.0, 0.0), |(lo, hi), v| (f64::min(lo, v), f64::max(hi, v)))
}

/// `(min, max)` expected steps to `goal` from `init`. The minimum ranges
/// over policies reaching the goal almost surely; the maximum is infinite
/// if any policy misses it with positive probability.
pub fn extremal_steps(snap: &ModelSnapshot, goal: &[bool], init: usize) -> (f64, f64) {
    let all: Vec<Option<f64>> = policies(snap).iter().map(|p| solve_steps(&chain(snap, p), goal, init)).collect();
    let min = all.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    let max = if all.iter().any(Option::is_none) {
        f64::INFINITY
    } else {
        all.iter().flatten().copied().fold(0.0, f64::max)
    };
    (min, max)
}
