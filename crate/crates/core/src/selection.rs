//! Free-parameter counts, BIC and the grid search over family × G × q × r.

use crate::aecm::{fit, FitOptions, FitResult};
use crate::error::{Error, Result};
use crate::family::Family;
use crate::sample::MatrixSample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::ops::RangeInclusive;

/// Rounds of factor-range extension before the search gives up growing.
pub const MAX_EXTENSION_ROUNDS: usize = 10;

/// ρ = (G−1) + G·[np + np (skewness, not for Gauss) + (nq − q(q−1)/2 + n) + (pr − r(r−1)/2 + p) + dim θ].
pub fn count_free_params(family: Family, g: usize, n: usize, p: usize, q: usize, r: usize) -> usize {
    let skew = if family.is_skewed() { n * p } else { 0 };
    let row = n * q + n - q * q.saturating_sub(1) / 2;
    let col = p * r + p - r * r.saturating_sub(1) / 2;
    g.saturating_sub(1) + g * (n * p + skew + row + col + family.theta_dim())
}

/// Reduction in free scale parameters relative to an unstructured `dim×dim` matrix.
pub fn scale_reduction(dim: usize, k: usize) -> i64 {
    let (d, k) = (dim as i64, k as i64);
    d * (d + 1) / 2 - (d * k - k * (k - 1) / 2 + d)
}

/// `(dim − k)² > dim + k`: the factor structure saves parameters.
pub fn parsimonious(dim: usize, k: usize) -> bool {
    let diff = dim as i64 - k as i64;
    diff * diff > (dim + k) as i64
}

pub fn bic(loglik: f64, rho: usize, n_obs: usize) -> f64 {
    2.0 * loglik - rho as f64 * (n_obs as f64).ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGridSpec {
    pub families: Vec<Family>,
    pub g_range: RangeInclusive<usize>,
    pub q_range: RangeInclusive<usize>,
    pub r_range: RangeInclusive<usize>,
    pub options: FitOptions,
    /// Grow q or r past the range when the winner sits on its upper edge.
    pub extend: bool,
}

/// One grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub family: Family,
    pub g: usize,
    pub q: usize,
    pub r: usize,
}

impl Cell {
    /// Seed for this cell's starts, independent of evaluation order.
    pub fn seed(&self, base: u64) -> u64 {
        let id = (Family::ALL.iter().position(|f| *f == self.family).unwrap_or(0) as u64) << 48
            | (self.g as u64) << 32
            | (self.q as u64) << 16
            | self.r as u64;
        let mut x = base ^ id.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        // splitmix64 finalizer
        x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        x ^ (x >> 31)
    }
}

/// Score of one cell; `loglik`/`bic` are `None` when every start failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellScore {
    pub cell: Cell,
    pub loglik: Option<f64>,
    pub rho: usize,
    pub bic: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ScoredModel {
    pub cell: Cell,
    pub fit: FitResult,
    pub rho: usize,
    pub bic: f64,
}

#[derive(Debug, Clone)]
pub struct GridOutcome {
    pub best: ScoredModel,
    /// Every scored cell, sorted by cell.
    pub table: Vec<CellScore>,
    pub extension_rounds: usize,
}

fn fit_cell(data: &MatrixSample, cell: Cell, options: &FitOptions, labels: Option<&[usize]>) -> (CellScore, Option<FitResult>) {
    let (n, p) = data.dims();
    let rho = count_free_params(cell.family, cell.g, n, p, cell.q, cell.r);
    let opts = FitOptions { seed: cell.seed(options.seed), ..options.clone() };
    match fit(data, cell.family, cell.g, cell.q, cell.r, labels, &opts) {
        Ok(res) => {
            let score = CellScore {
                cell,
                loglik: Some(res.final_loglik),
                rho,
                bic: Some(bic(res.final_loglik, rho, data.len())),
                error: None,
            };
            (score, Some(res))
        }
        Err(e) => (CellScore { cell, loglik: None, rho, bic: None, error: Some(e.to_string()) }, None),
    }
}

fn better(a: &CellScore, b: &CellScore) -> bool {
    match (a.bic, b.bic) {
        (Some(x), Some(y)) => x > y || (x == y && a.cell < b.cell),
        (Some(_), None) => true,
        _ => false,
    }
}

/// Fits every cell and returns the BIC winner. `done` holds scores from an
/// earlier, interrupted run; those cells are not refit (unless one wins).
/// `on_cell` observes each newly scored cell.
pub fn grid_search_resume(
    data: &MatrixSample,
    spec: &ModelGridSpec,
    labels: Option<&[usize]>,
    done: &[CellScore],
    on_cell: &(dyn Fn(&CellScore) + Sync),
) -> Result<GridOutcome> {
    if spec.families.is_empty() || spec.g_range.is_empty() || spec.q_range.is_empty() || spec.r_range.is_empty() {
        return Err(Error::Domain("grid ranges must be nonempty".into()));
    }
    let (n, p) = data.dims();
    let mut table: Vec<CellScore> = done.to_vec();
    let mut best_fit: Option<(Cell, FitResult)> = None;
    let (mut q_hi, mut r_hi) = (*spec.q_range.end(), *spec.r_range.end());
    let q_lo = *spec.q_range.start();
    let r_lo = *spec.r_range.start();
    let mut rounds = 0;
    loop {
        let mut cells = Vec::new();
        for &family in &spec.families {
            for g in spec.g_range.clone() {
                for q in q_lo..=q_hi {
                    for r in r_lo..=r_hi {
                        let cell = Cell { family, g, q, r };
                        if q < n && r < p && !table.iter().any(|s| s.cell == cell) {
                            cells.push(cell);
                        }
                    }
                }
            }
        }
        let results: Vec<(CellScore, Option<FitResult>)> = cells
            .par_iter()
            .map(|&cell| {
                let out = fit_cell(data, cell, &spec.options, labels);
                on_cell(&out.0);
                out
            })
            .collect();
        for (score, res) in results {
            if let Some(res) = res {
                let wins = match &best_fit {
                    None => true,
                    Some((c, _)) => {
                        let current = table.iter().find(|s| s.cell == *c).expect("best cell is scored");
                        better(&score, current)
                    }
                };
                if wins {
                    best_fit = Some((score.cell, res));
                }
            }
            table.push(score);
        }
        table.sort_by(|a, b| a.cell.cmp(&b.cell));
        let Some(winner) = table.iter().filter(|s| s.bic.is_some()).fold(None::<&CellScore>, |acc, s| match acc {
            Some(a) if !better(s, a) => Some(a),
            _ => Some(s),
        }) else {
            return Err(Error::SelectionFailed(
                table.iter().map(|s| format!("{:?}: {}", s.cell, s.error.clone().unwrap_or_default())).collect(),
            ));
        };
        let winner = winner.cell;
        let grow_q = spec.extend && winner.q == q_hi && q_hi + 1 < n && parsimonious(n, q_hi + 1);
        let grow_r = spec.extend && winner.r == r_hi && r_hi + 1 < p && parsimonious(p, r_hi + 1);
        if (grow_q || grow_r) && rounds < MAX_EXTENSION_ROUNDS {
            rounds += 1;
            q_hi += grow_q as usize;
            r_hi += grow_r as usize;
            continue;
        }
        let fit = match best_fit {
            Some((c, res)) if c == winner => res,
            _ => fit_cell(data, winner, &spec.options, labels)
                .1
                .ok_or_else(|| Error::SelectionFailed(vec![format!("refit of {winner:?} failed")]))?,
        };
        let rho = count_free_params(winner.family, winner.g, n, p, winner.q, winner.r);
        let best = ScoredModel { cell: winner, bic: bic(fit.final_loglik, rho, data.len()), rho, fit };
        return Ok(GridOutcome { best, table, extension_rounds: rounds });
    }
}

pub fn grid_search(data: &MatrixSample, spec: &ModelGridSpec, labels: Option<&[usize]>) -> Result<GridOutcome> {
    grid_search_resume(data, spec, labels, &[], &|_| {})
}
