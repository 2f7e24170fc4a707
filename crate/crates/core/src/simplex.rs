//! Dense tableau simplex over exact rationals.
//!
//! Only the shape needed here is supported: maximize `c·x` subject to
//! `A x <= b`, `x >= 0`, with `b >= 0`, so the all-slack basis is feasible
//! and no phase one is needed. Bland's rule guarantees termination.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, Zero};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SimplexError {
    #[error("constraint {0} has a negative right-hand side")]
    NegativeRhs(usize),
    #[error("objective is unbounded")]
    Unbounded,
    #[error("no optimum after {0} pivots")]
    IterationLimit(usize),
}

/// Sparse row: `(variable, coefficient)` pairs.
pub type Row = Vec<(usize, BigRational)>;

#[derive(Debug, Clone, Default)]
pub struct LinearProgram {
    pub num_vars: usize,
    pub objective: Row,
    /// `row · x <= rhs`
    pub constraints: Vec<(Row, BigRational)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub x: Vec<BigRational>,
    pub value: BigRational,
    pub pivots: usize,
}

pub const DEFAULT_PIVOT_LIMIT: usize = 50_000;

impl LinearProgram {
    pub fn new(num_vars: usize) -> Self {
        LinearProgram {
            num_vars,
            ..Default::default()
        }
    }

    pub fn add_le(&mut self, row: Row, rhs: BigRational) {
        self.constraints.push((row, rhs));
    }

    pub fn maximize(&self, pivot_limit: usize) -> Result<Solution, SimplexError> {
        let m = self.constraints.len();
        let n = self.num_vars;
        let width = n + m;
        for (i, (_, rhs)) in self.constraints.iter().enumerate() {
            if rhs.is_negative() {
                return Err(SimplexError::NegativeRhs(i));
            }
        }

        // tableau[i] = [coefficients (n + m) | rhs]
        let zero = BigRational::zero();
        let one = BigRational::from_integer(BigInt::from(1));
        let mut tableau: Vec<Vec<BigRational>> = Vec::with_capacity(m);
        for (i, (row, rhs)) in self.constraints.iter().enumerate() {
            let mut r = vec![zero.clone(); width + 1];
            for (j, c) in row {
                r[*j] += c;
            }
            r[n + i] = one.clone();
            r[width] = rhs.clone();
            tableau.push(r);
        }
        // Reduced costs for maximization: entering columns have positive cost.
        let mut cost = vec![zero.clone(); width + 1];
        for (j, c) in &self.objective {
            cost[*j] += c;
        }
        let mut basis: Vec<usize> = (n..n + m).collect();

        let mut pivots = 0;
        loop {
            let Some(enter) = (0..width).find(|&j| cost[j].is_positive()) else {
                break;
            };
            let mut leave: Option<(usize, BigRational)> = None;
            for (i, row) in tableau.iter().enumerate() {
                if !row[enter].is_positive() {
                    continue;
                }
                let ratio = &row[width] / &row[enter];
                let better = match &leave {
                    None => true,
                    Some((li, best)) => ratio < *best || (ratio == *best && basis[i] < basis[*li]),
                };
                if better {
                    leave = Some((i, ratio));
                }
            }
            let Some((pivot_row, _)) = leave else {
                return Err(SimplexError::Unbounded);
            };
            if pivots >= pivot_limit {
                return Err(SimplexError::IterationLimit(pivots));
            }
            pivot(&mut tableau, &mut cost, pivot_row, enter);
            basis[pivot_row] = enter;
            pivots += 1;
        }

        let mut x = vec![zero.clone(); n];
        for (i, &b) in basis.iter().enumerate() {
            if b < n {
                x[b] = tableau[i][width].clone();
            }
        }
        let value = self
            .objective
            .iter()
            .fold(zero, |acc, (j, c)| acc + c * &x[*j]);
        Ok(Solution { x, value, pivots })
    }
}

fn pivot(tableau: &mut [Vec<BigRational>], cost: &mut [BigRational], row: usize, col: usize) {
    let p = tableau[row][col].clone();
    for v in tableau[row].iter_mut() {
        if !v.is_zero() {
            *v /= &p;
        }
    }
    let pivot_row = tableau[row].clone();
    let nonzero: Vec<usize> = (0..pivot_row.len()).filter(|&j| !pivot_row[j].is_zero()).collect();
    for (i, r) in tableau.iter_mut().enumerate() {
        if i == row || r[col].is_zero() {
            continue;
        }
        let factor = r[col].clone();
        for &j in &nonzero {
            let delta = &factor * &pivot_row[j];
            r[j] -= delta;
        }
    }
    if !cost[col].is_zero() {
        let factor = cost[col].clone();
        for &j in &nonzero {
            let delta = &factor * &pivot_row[j];
            cost[j] -= delta;
        }
    }
}
