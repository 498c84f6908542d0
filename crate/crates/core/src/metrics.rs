//! Partition agreement: adjusted Rand index and misclassification rate.

use crate::error::{Error, Result};
use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;
use std::collections::BTreeMap;

/// Relabels arbitrary class ids to `0..K` in order of first appearance.
fn canonical(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut map = BTreeMap::new();
    let mut next = 0;
    let out = labels
        .iter()
        .map(|l| {
            *map.entry(*l).or_insert_with(|| {
                next += 1;
                next - 1
            })
        })
        .collect();
    (out, next)
}

fn contingency(truth: &[usize], pred: &[usize]) -> Result<(Vec<Vec<u64>>, usize, usize)> {
    if truth.len() != pred.len() {
        return Err(Error::Shape(format!(
            "partitions have {} and {} entries",
            truth.len(),
            pred.len()
        )));
    }
    let (t, kt) = canonical(truth);
    let (p, kp) = canonical(pred);
    let mut table = vec![vec![0u64; kp]; kt];
    for (a, b) in t.iter().zip(&p) {
        table[*a][*b] += 1;
    }
    Ok((table, kt, kp))
}

fn pairs(n: u64) -> f64 {
    (n as f64) * (n as f64 - 1.0) / 2.0
}

/// Adjusted Rand index (Hubert and Arabie).
pub fn ari(truth: &[usize], pred: &[usize]) -> Result<f64> {
    let (table, _, _) = contingency(truth, pred)?;
    let n = truth.len() as u64;
    let index: f64 = table.iter().flatten().map(|&c| pairs(c)).sum();
    let rows: f64 = table.iter().map(|r| pairs(r.iter().sum())).sum();
    let kp = table.first().map_or(0, |r| r.len());
    let cols: f64 = (0..kp).map(|j| pairs(table.iter().map(|r| r[j]).sum())).sum();
    let total = pairs(n);
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = rows * cols / total;
    let max = 0.5 * (rows + cols);
    if max == expected {
        // both partitions trivial in the same way
        return Ok(if index == expected { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / (max - expected))
}

/// Largest total weight of a one-to-one matching between rows and columns.
fn max_matching(table: &[Vec<u64>]) -> u64 {
    let rows = table.len();
    let cols = table.first().map_or(0, |r| r.len());
    let k = rows.max(cols);
    if k == 0 {
        return 0;
    }
    if k <= 8 {
        return exhaustive(table, rows, cols, k);
    }
    let weights = Matrix::from_fn(k, k, |(i, j)| if i < rows && j < cols { table[i][j] as i64 } else { 0 });
    kuhn_munkres(&weights).0 as u64
}

fn exhaustive(table: &[Vec<u64>], rows: usize, cols: usize, k: usize) -> u64 {
    fn go(depth: usize, k: usize, used: &mut Vec<bool>, acc: u64, best: &mut u64, w: &dyn Fn(usize, usize) -> u64) {
        if depth == k {
            *best = (*best).max(acc);
            return;
        }
        for j in 0..k {
            if !used[j] {
                used[j] = true;
                go(depth + 1, k, used, acc + w(depth, j), best, w);
                used[j] = false;
            }
        }
    }
    let w = |i: usize, j: usize| if i < rows && j < cols { table[i][j] } else { 0 };
    let mut best = 0;
    go(0, k, &mut vec![false; k], 0, &mut best, &w);
    best
}

/// Misclassification rate under the best one-to-one matching of labels.
pub fn mcr(truth: &[usize], pred: &[usize]) -> Result<f64> {
    let (table, _, _) = contingency(truth, pred)?;
    if truth.is_empty() {
        return Ok(0.0);
    }
    let matched = max_matching(&table);
    Ok(1.0 - matched as f64 / truth.len() as f64)
}
