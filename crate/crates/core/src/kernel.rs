//! Monte-Carlo estimate of the forest's projection kernel from observed covariates.
//!
//! For a branch draw `ω` the cell `A_k(x0, ω)` is the dyadic box with the
//! drawn split counts around `x0`. Its covariate mass `p(ω)` is estimated by
//! the fraction of covariates inside it (floored at `1/n`), and
//! `K(x0, X_i)` by the average over draws of `1{X_i ∈ A_k(x0, ω)} / p(ω)`.

use std::collections::HashMap;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::partition::{dyadic_index, SplitRule};
use crate::points::PointSet;
use crate::rng::{label, stream};

/// Kernel values `K̂(x0_g, X_i)` for a set of query points `g` and covariates `i`.
#[derive(Debug, Clone)]
pub struct KernelEstimate {
    /// Row `g` holds the kernel of query point `g` against every covariate.
    pub values: DMatrix<f64>,
    /// Number of (query point, draw) pairs whose cell held no covariate.
    pub floored_cells: u64,
    pub n_draws: usize,
}

/// Concatenates the per-axis dyadic indices into one `k`-bit cell key.
fn cell_key(x: &[f64], counts: &[u32]) -> u64 {
    x.iter().zip(counts).fold(0u64, |key, (&v, &s)| {
        if s == 0 {
            key
        } else {
            (key << s) | dyadic_index(v, s)
        }
    })
}

pub fn estimate_kernel(
    queries: &PointSet,
    covariates: &PointSet,
    n_draws: usize,
    rule: &SplitRule,
    k: u32,
    seed: u64,
) -> Result<KernelEstimate> {
    let p = covariates.dim();
    if queries.dim() != p {
        return Err(Error::Shape("query points and covariates differ in dimension".into()));
    }
    if covariates.is_empty() {
        return Err(Error::Estimation("no covariates given".into()));
    }
    if n_draws == 0 {
        return Err(Error::Config("need at least one tree draw".into()));
    }
    if k > 62 {
        return Err(Error::Config(format!("depth {k} too large")));
    }
    rule.validate(p)?;
    let n = covariates.len();
    let mut rng = stream(seed, &[label::PSI]);
    let draws = (0..n_draws)
        .map(|_| rule.sample_counts(k, p, &mut rng))
        .collect::<Result<Vec<_>>>()?;

    // Per draw: covariates grouped by cell.
    let groups: Vec<HashMap<u64, Vec<u32>>> = draws
        .par_iter()
        .map(|s| {
            let mut map: HashMap<u64, Vec<u32>> = HashMap::new();
            for (i, x) in covariates.rows().enumerate() {
                map.entry(cell_key(x, s.as_slice())).or_default().push(i as u32);
            }
            map
        })
        .collect();

    let floor = 1.0 / n as f64;
    let rows: Vec<(Vec<f64>, u64)> = queries
        .rows()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|x0| {
            let mut acc = vec![0.0; n];
            let mut floored = 0;
            for (s, map) in draws.iter().zip(&groups) {
                match map.get(&cell_key(x0, s.as_slice())) {
                    Some(members) => {
                        let mass = (members.len() as f64 / n as f64).max(floor);
                        for &i in members {
                            acc[i as usize] += 1.0 / mass;
                        }
                    }
                    None => floored += 1,
                }
            }
            for a in &mut acc {
                *a /= n_draws as f64;
            }
            (acc, floored)
        })
        .collect();

    let floored_cells = rows.iter().map(|r| r.1).sum();
    let values = DMatrix::from_fn(queries.len(), n, |g, i| rows[g].0[i]);
    Ok(KernelEstimate { values, floored_cells, n_draws })
}

impl KernelEstimate {
    /// `Ψ̂(x0_g)`: mean over covariates of the squared kernel.
    pub fn second_moments(&self) -> Vec<f64> {
        let n = self.values.ncols() as f64;
        self.values
            .row_iter()
            .map(|r| r.iter().map(|v| v * v).sum::<f64>() / n)
            .collect()
    }
}
