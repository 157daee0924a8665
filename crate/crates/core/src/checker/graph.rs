//! Graph-based qualitative analysis: the states whose optimal probability of
//! reaching `goal` while staying in `hold` is exactly 0 or exactly 1.
//! No arithmetic on probabilities happens here.

use std::collections::VecDeque;

use super::matrix::SparseMdp;

/// States from which some scheduler reaches `goal` with positive probability.
pub(crate) fn exists_reach(pred: &[Vec<(usize, usize)>], hold: &[bool], goal: &[bool]) -> Vec<bool> {
    let mut reach = goal.to_vec();
    let mut queue: VecDeque<usize> = (0..goal.len()).filter(|&s| goal[s]).collect();
    while let Some(t) = queue.pop_front() {
        for &(s, _) in &pred[t] {
            if !reach[s] && hold[s] {
                reach[s] = true;
                queue.push_back(s);
            }
        }
    }
    reach
}

/// States from which every scheduler reaches `goal` with positive probability.
pub(crate) fn forall_reach(m: &SparseMdp, pred: &[Vec<(usize, usize)>], hold: &[bool], goal: &[bool]) -> Vec<bool> {
    let n = m.num_states();
    let mut reach = goal.to_vec();
    let mut choice_hit = vec![false; m.choice_origin.len()];
    let mut hits = vec![0usize; n];
    let mut queue: VecDeque<usize> = (0..n).filter(|&s| goal[s]).collect();
    while let Some(t) = queue.pop_front() {
        for &(s, c) in &pred[t] {
            if choice_hit[c] {
                continue;
            }
            choice_hit[c] = true;
            hits[s] += 1;
            if !reach[s] && hold[s] && hits[s] == m.choices(s).len() {
                reach[s] = true;
                queue.push_back(s);
            }
        }
    }
    reach
}

/// `Pmax = 1`: the nested fixpoint over "can stay in U and make progress
/// towards goal".
pub(crate) fn prob1_max(m: &SparseMdp, pred: &[Vec<(usize, usize)>], hold: &[bool], goal: &[bool]) -> Vec<bool> {
    let n = m.num_states();
    let mut u = exists_reach(pred, hold, goal);
    loop {
        let stays: Vec<bool> = (0..m.choice_origin.len())
            .map(|c| m.entries(c).all(|(t, _)| u[t]))
            .collect();
        let mut r = goal.to_vec();
        let mut queue: VecDeque<usize> = (0..n).filter(|&s| goal[s]).collect();
        while let Some(t) = queue.pop_front() {
            for &(s, c) in &pred[t] {
                if !r[s] && u[s] && hold[s] && stays[c] {
                    r[s] = true;
                    queue.push_back(s);
                }
            }
        }
        if r == u {
            return u;
        }
        u = r;
    }
}

/// `Pmin = 1`: complement of the states that can reach, through
/// non-goal `hold` states, a state where goal is avoidable for sure.
pub(crate) fn prob1_min(
    m: &SparseMdp,
    pred: &[Vec<(usize, usize)>],
    hold: &[bool],
    goal: &[bool],
    prob0_min: &[bool],
) -> Vec<bool> {
    let n = m.num_states();
    let mut bad = prob0_min.to_vec();
    let mut queue: VecDeque<usize> = (0..n).filter(|&s| bad[s]).collect();
    while let Some(t) = queue.pop_front() {
        for &(s, _) in &pred[t] {
            if !bad[s] && hold[s] && !goal[s] {
                bad[s] = true;
                queue.push_back(s);
            }
        }
    }
    bad.iter().map(|b| !b).collect()
}

/// `(prob0, prob1)` for the maximising or minimising scheduler.
pub(crate) fn precompute(m: &SparseMdp, hold: &[bool], goal: &[bool], maximize: bool) -> (Vec<bool>, Vec<bool>) {
    let pred = m.predecessors();
    if maximize {
        let prob0: Vec<bool> = exists_reach(&pred, hold, goal).iter().map(|r| !r).collect();
        let prob1 = prob1_max(m, &pred, hold, goal);
        (prob0, prob1)
    } else {
        let prob0: Vec<bool> = forall_reach(m, &pred, hold, goal).iter().map(|r| !r).collect();
        let prob1 = prob1_min(m, &pred, hold, goal, &prob0);
        (prob0, prob1)
    }
}
