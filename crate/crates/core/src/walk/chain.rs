//! Exact absorption probabilities of the discrete walk on a small grid.
//!
//! The walk's state is the count vector k (Σk = M); alive states are exactly
//! the positive entries, so the process is a finite Markov chain on
//! compositions of M. Absorption probabilities at each vertex solve the
//! harmonic system h(k) = Σ P(k→k′) h(k′) with h = indicator on vertices,
//! which is solved here by dense LU. This is independent of the Monte Carlo
//! engine and serves as its oracle.

use std::collections::HashMap;

use nalgebra::DMatrix;
use thiserror::Error;

/// Chains larger than this are refused rather than factorised densely.
pub const MAX_CHAIN_STATES: usize = 4000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChainError {
    #[error("start grid needs at least 2 entries and a positive total")]
    InvalidStart,
    #[error("chain has {0} states, more than the {MAX_CHAIN_STATES} supported")]
    TooLarge(usize),
    #[error("absorption system is singular")]
    Singular,
}

fn compositions(total: u64, parts: usize) -> Vec<Vec<u64>> {
    fn rec(left: u64, parts: usize, prefix: &mut Vec<u64>, out: &mut Vec<Vec<u64>>) {
        if parts == 1 {
            prefix.push(left);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for k in 0..=left {
            prefix.push(k);
            rec(left - k, parts - 1, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(total, parts, &mut Vec::with_capacity(parts), &mut out);
    out
}

fn binomial(n: u64, k: u64) -> u128 {
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Probability that each state ends up as the winner, starting from `start`.
pub fn exact_absorption(start: &[u64]) -> Result<Vec<f64>, ChainError> {
    let n = start.len();
    let total: u64 = start.iter().sum();
    if n < 2 || total == 0 {
        return Err(ChainError::InvalidStart);
    }
    let size = binomial(total + n as u64 - 1, n as u64 - 1);
    if size > MAX_CHAIN_STATES as u128 {
        return Err(ChainError::TooLarge(size.min(usize::MAX as u128) as usize));
    }
    let states = compositions(total, n);
    let index: HashMap<&[u64], usize> = states.iter().enumerate().map(|(i, s)| (s.as_slice(), i)).collect();

    // (I − P) h = 0 on transient states, h = e_winner on vertices.
    let size = states.len();
    let mut a = DMatrix::<f64>::zeros(size, size);
    let mut b = DMatrix::<f64>::zeros(size, n);
    for (row, k) in states.iter().enumerate() {
        a[(row, row)] = 1.0;
        let live: Vec<usize> = (0..n).filter(|&i| k[i] > 0).collect();
        if live.len() == 1 {
            b[(row, live[0])] = 1.0;
            continue;
        }
        let p = 1.0 / (live.len() * (live.len() - 1)) as f64;
        let mut next = k.clone();
        for &donor in &live {
            for &receiver in &live {
                if donor == receiver {
                    continue;
                }
                next[donor] -= 1;
                next[receiver] += 1;
                a[(row, index[next.as_slice()])] -= p;
                next[donor] += 1;
                next[receiver] -= 1;
            }
        }
    }
    let h = a.lu().solve(&b).ok_or(ChainError::Singular)?;
    let row = index[start];
    Ok((0..n).map(|i| h[(row, i)]).collect())
}
