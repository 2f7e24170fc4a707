//! Independent reference computations for key-rate objectives.
//!
//! `cut_oracle` is exact for graphs of at most four nodes: every metric on
//! four points embeds in L1, so the cut condition alone decides feasibility
//! of an undirected multicommodity flow there. `max_flow` is plain
//! Edmonds-Karp over integer capacities.

#![allow(dead_code)]

use std::collections::VecDeque;

use num_bigint::BigInt;
use num_rational::BigRational;

/// Undirected graph on nodes `0..n` with integer capacities.
#[derive(Debug, Clone)]
pub struct OracleGraph {
    pub n: usize,
    pub edges: Vec<(usize, usize, i64)>,
}

pub fn connected(n: usize, edges: &[(usize, usize)]) -> bool {
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(v) = stack.pop() {
        for &(a, b) in edges {
            let w = if a == v {
                b
            } else if b == v {
                a
            } else {
                continue;
            };
            if !seen[w] {
                seen[w] = true;
                stack.push(w);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// Largest `t` such that every demand pair can carry `t` at once, by the
/// sparsest cut: `min over S of cap(S) / demands crossing S`.
pub fn cut_oracle(g: &OracleGraph, demands: &[(usize, usize)]) -> BigRational {
    let mut best: Option<BigRational> = None;
    // Sets containing node 0 cover every cut once.
    for mask in (1u32..(1 << g.n)).filter(|m| m & 1 == 1 && *m != (1 << g.n) - 1) {
        let inside = |v: usize| mask & (1 << v) != 0;
        let crossing = demands.iter().filter(|&&(a, b)| inside(a) != inside(b)).count() as i64;
        if crossing == 0 {
            continue;
        }
        let cap: i64 = g.edges.iter().filter(|&&(a, b, _)| inside(a) != inside(b)).map(|e| e.2).sum();
        let ratio = BigRational::new(BigInt::from(cap), BigInt::from(crossing));
        if best.as_ref().map_or(true, |b| ratio < *b) {
            best = Some(ratio);
        }
    }
    best.expect("some cut separates a demand")
}

pub fn max_flow(g: &OracleGraph, s: usize, t: usize) -> i64 {
    let mut cap = vec![vec![0i64; g.n]; g.n];
    for &(a, b, c) in &g.edges {
        cap[a][b] += c;
        cap[b][a] += c;
    }
    let mut flow = 0;
    loop {
        let mut prev = vec![usize::MAX; g.n];
        prev[s] = s;
        let mut queue = VecDeque::from([s]);
        while let Some(v) = queue.pop_front() {
            for w in 0..g.n {
                if prev[w] == usize::MAX && cap[v][w] > 0 {
                    prev[w] = v;
                    queue.push_back(w);
                }
            }
        }
        if prev[t] == usize::MAX {
            return flow;
        }
        let mut push = i64::MAX;
        let mut v = t;
        while v != s {
            push = push.min(cap[prev[v]][v]);
            v = prev[v];
        }
        let mut v = t;
        while v != s {
            cap[prev[v]][v] -= push;
            cap[v][prev[v]] += push;
            v = prev[v];
        }
        flow += push;
    }
}
