//! Covariance of the limiting Gaussian process and quantiles of its supremum.
//!
//! For uniform covariates the covariance between grid points `x1, x2` is the
//! expected overlap of two independent cells around them, normalized by the
//! expected self-overlap `V_∩,k`. The overlap only depends on the sorted
//! closeness vector of the pair, so [`approximate_covariance`] estimates one
//! value per element of [`OmegaS`] from simulated pairs of split counts, and
//! [`covariance_matrix`] spreads those values over an evaluation grid.

use std::io::{BufRead, Write};

use faer::{Mat, Side};
use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::estimate_kernel;
use crate::partition::{axis_closeness, EhrenfestConfig, OmegaS, SplitRule};
use crate::points::PointSet;
use crate::rng::{label, stream};

/// Default number of simulated split-count pairs.
pub const DEFAULT_PAIRS: u64 = 50_000;
/// Default number of simulated suprema.
pub const DEFAULT_SUPREMA: usize = 100_000;
pub const DEFAULT_JITTER: f64 = 1e-10;
pub const DEFAULT_EIG_FLOOR: f64 = 1e-10;
/// Default tolerance for "covariance reasonably close to one".
pub const DEFAULT_UNDIVIDABLE_TOL: f64 = 1e-3;
/// Largest evaluation grid that will be materialized as a dense matrix.
pub const DEFAULT_MAX_GRID_POINTS: usize = 4096;

const PAIR_CHUNK: u64 = 4096;
const SUP_CHUNK: usize = 512;
const TRI_BLOCK: usize = 256;

/// Normalized expected cell overlaps, one per sorted closeness vector.
#[derive(Debug, Clone, PartialEq)]
pub struct CovTable {
    rule: SplitRule,
    k: u32,
    dim: usize,
    n_pairs: u64,
    seed: u64,
    v_cap: f64,
    v_cap_se: f64,
    values: Vec<f64>,
    omega: OmegaS,
}

/// Runs the pair simulation: for each pair of independent split-count
/// vectors, adds the intersection volume implied by every closeness vector.
pub fn approximate_covariance(rule: &SplitRule, k: u32, dim: usize, n_pairs: u64, seed: u64) -> Result<CovTable> {
    rule.validate(dim)?;
    if n_pairs == 0 {
        return Err(Error::Config("need at least one simulated pair".into()));
    }
    let omega = OmegaS::enumerate(k, dim)?;
    let top = omega.top_index();
    let n_chunks = n_pairs.div_ceil(PAIR_CHUNK);

    // Per-chunk partial sums, merged in chunk order.
    let partials = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = stream(seed, &[label::PAIRS, chunk]);
            let len = PAIR_CHUNK.min(n_pairs - chunk * PAIR_CHUNK);
            let mut sums = vec![0.0; omega.len()];
            let mut top_sq = 0.0;
            let mut mins = vec![0u32; dim];
            for _ in 0..len {
                let s1 = rule.sample_counts(k, dim, &mut rng)?;
                let s2 = rule.sample_counts(k, dim, &mut rng)?;
                let mut finest = 0;
                for l in 0..dim {
                    let (a, b) = (s1.get(l), s2.get(l));
                    mins[l] = a.min(b);
                    finest += a.max(b);
                }
                let vol = (-(finest as f64)).exp2();
                for (sum, c) in sums.iter_mut().zip(omega.iter()) {
                    if mins.iter().zip(c).all(|(m, c)| m <= c) {
                        *sum += vol;
                    }
                }
                top_sq += vol * vol;
            }
            Ok((sums, top_sq))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut sums = vec![0.0; omega.len()];
    let mut top_sq = 0.0;
    for (part, sq) in &partials {
        for (s, v) in sums.iter_mut().zip(part) {
            *s += v;
        }
        top_sq += sq;
    }
    let n = n_pairs as f64;
    let mean: Vec<f64> = sums.iter().map(|s| s / n).collect();
    let v_cap = mean[top];
    let var = (top_sq / n - v_cap * v_cap).max(0.0) * n / (n - 1.0).max(1.0);
    let v_cap_se = (var / n).sqrt();
    let values = mean.iter().map(|v| (v / v_cap).min(1.0)).collect();
    Ok(CovTable { rule: *rule, k, dim, n_pairs, seed, v_cap, v_cap_se, values, omega })
}

impl CovTable {
    pub fn rule(&self) -> &SplitRule {
        &self.rule
    }

    pub fn depth(&self) -> u32 {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_pairs(&self) -> u64 {
        self.n_pairs
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Estimated expected self-intersection volume `V̂_∩,k`.
    pub fn v_cap(&self) -> f64 {
        self.v_cap
    }

    /// Monte-Carlo standard error of [`CovTable::v_cap`].
    pub fn v_cap_std_error(&self) -> f64 {
        self.v_cap_se
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn omega(&self) -> &OmegaS {
        &self.omega
    }

    /// Normalized covariance for a sorted closeness vector.
    pub fn value(&self, sorted_closeness: &[u32]) -> Option<f64> {
        self.omega.index_of(sorted_closeness).map(|i| self.values[i])
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# cprf covariance table")?;
        writeln!(w, "version {TABLE_VERSION}")?;
        writeln!(w, "kind {}", self.rule.name())?;
        if let SplitRule::Ehrenfest(cfg) = &self.rule {
            writeln!(w, "ehrenfest_b {}", cfg.particles)?;
            writeln!(w, "ehrenfest_delta {}", cfg.slack)?;
        }
        writeln!(w, "k {}", self.k)?;
        writeln!(w, "p {}", self.dim)?;
        writeln!(w, "pairs {}", self.n_pairs)?;
        writeln!(w, "v_cap {}", self.v_cap)?;
        writeln!(w, "v_cap_se {}", self.v_cap_se)?;
        writeln!(w, "seed {}", self.seed)?;
        writeln!(w, "entries {}", self.values.len())?;
        for (i, (c, v)) in self.omega.iter().zip(&self.values).enumerate() {
            let c: Vec<String> = c.iter().map(u32::to_string).collect();
            writeln!(w, "{} {} {}", i + 1, c.join(","), v)?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut header = std::collections::HashMap::new();
        let mut entries: Vec<(u64, Vec<u32>, f64)> = Vec::new();
        let mut expected_entries = None;
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            let lineno = lineno as u64 + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let parse_err = |message: String| Error::Parse { line: lineno, message };
            let fields: Vec<&str> = trimmed.split_whitespace().collect();
            if expected_entries.is_none() {
                if fields.len() != 2 {
                    return Err(parse_err(format!("expected `key value`, got `{trimmed}`")));
                }
                if fields[0] == "entries" {
                    expected_entries =
                        Some(fields[1].parse::<usize>().map_err(|e| parse_err(e.to_string()))?);
                } else {
                    header.insert(fields[0].to_string(), (fields[1].to_string(), lineno));
                }
                continue;
            }
            if fields.len() != 3 {
                return Err(parse_err(format!("expected `index vector value`, got `{trimmed}`")));
            }
            let idx = fields[0].parse::<u64>().map_err(|e| parse_err(e.to_string()))?;
            let c = fields[1]
                .split(',')
                .map(|v| v.parse::<u32>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| parse_err(e.to_string()))?;
            let v = fields[2].parse::<f64>().map_err(|e| parse_err(e.to_string()))?;
            entries.push((idx, c, v));
        }

        let get = |key: &str| -> Result<(String, u64)> {
            header
                .get(key)
                .cloned()
                .ok_or_else(|| Error::Parse { line: 0, message: format!("missing header `{key}`") })
        };
        fn num<T: std::str::FromStr>(v: (String, u64)) -> Result<T>
        where
            T::Err: std::fmt::Display,
        {
            v.0.parse::<T>().map_err(|e| Error::Parse { line: v.1, message: e.to_string() })
        }
        let version: u32 = num(get("version")?)?;
        if version != TABLE_VERSION {
            return Err(Error::Config(format!("unsupported covariance table version {version}")));
        }
        let rule = match get("kind")?.0.as_str() {
            "uniform" => SplitRule::Uniform,
            "ehrenfest" => SplitRule::Ehrenfest(EhrenfestConfig::new(
                num(get("ehrenfest_b")?)?,
                num(get("ehrenfest_delta")?)?,
            )),
            other => return Err(Error::Config(format!("unknown split rule `{other}`"))),
        };
        let k: u32 = num(get("k")?)?;
        let dim: usize = num(get("p")?)?;
        rule.validate(dim)?;
        let omega = OmegaS::enumerate(k, dim)?;
        if expected_entries != Some(omega.len()) || entries.len() != omega.len() {
            return Err(Error::Shape(format!(
                "table for k={k}, p={dim} needs {} entries, found {}",
                omega.len(),
                entries.len()
            )));
        }
        let mut values = vec![f64::NAN; omega.len()];
        for (idx, c, v) in entries {
            let pos = omega
                .index_of(&c)
                .filter(|&pos| pos as u64 + 1 == idx)
                .ok_or_else(|| Error::Shape(format!("entry {idx} has a mismatched closeness vector {c:?}")))?;
            values[pos] = v;
        }
        Ok(Self {
            rule,
            k,
            dim,
            n_pairs: num(get("pairs")?)?,
            seed: num(get("seed")?)?,
            v_cap: num(get("v_cap")?)?,
            v_cap_se: num(get("v_cap_se")?)?,
            values,
            omega,
        })
    }
}

pub const TABLE_VERSION: u32 = 1;

/// One point per level-`depth` dyadic cell, at the cell midpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalGrid {
    depth: u32,
    points: PointSet,
}

impl EvalGrid {
    /// Tensor grid of midpoints; the first axis varies slowest.
    pub fn new(depth: u32, dim: usize, max_points: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidDimension("p must be at least 1".into()));
        }
        let per_axis = 1usize
            .checked_shl(depth)
            .filter(|_| depth < 32)
            .ok_or_else(|| Error::Resource(format!("grid depth {depth} is too deep")))?;
        let total = per_axis
            .checked_pow(dim as u32)
            .filter(|&t| t <= max_points)
            .ok_or_else(|| {
                Error::Resource(format!(
                    "grid of depth {depth} in p = {dim} exceeds {max_points} points; choose a smaller depth"
                ))
            })?;
        let step = (-(depth as f64)).exp2();
        let axis: Vec<f64> = (0..per_axis).map(|a| a as f64 * step + step / 2.0).collect();
        let mut coords = Vec::with_capacity(total * dim);
        for g in 0..total {
            let mut rem = g;
            let mut row = vec![0.0; dim];
            for l in (0..dim).rev() {
                row[l] = axis[rem % per_axis];
                rem /= per_axis;
            }
            coords.extend_from_slice(&row);
        }
        Ok(Self { depth, points: PointSet::new(dim, coords)? })
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn points(&self) -> &PointSet {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Covariance matrix of the process on `grid`, read off the table through
/// each pair's sorted closeness vector.
pub fn covariance_matrix(table: &CovTable, grid: &EvalGrid) -> Result<DMatrix<f64>> {
    let p = table.dim();
    if grid.points().dim() != p {
        return Err(Error::Shape(format!("grid in p = {} for a table in p = {p}", grid.points().dim())));
    }
    if grid.depth() > table.depth() {
        return Err(Error::Config(format!(
            "grid depth {} exceeds the forest depth {}",
            grid.depth(),
            table.depth()
        )));
    }
    let per_axis = 1usize << grid.depth();
    let g = grid.len();
    let k = table.depth();
    let step = (-(grid.depth() as f64)).exp2();
    let mids: Vec<f64> = (0..per_axis).map(|a| a as f64 * step + step / 2.0).collect();
    // Closeness of two grid coordinates along one axis.
    let axis: Vec<u32> = (0..per_axis * per_axis)
        .map(|ab| axis_closeness(mids[ab / per_axis], mids[ab % per_axis], k))
        .collect();
    let digits: Vec<usize> = (0..g)
        .flat_map(|i| {
            let mut rem = i;
            let mut d = vec![0; p];
            for l in (0..p).rev() {
                d[l] = rem % per_axis;
                rem /= per_axis;
            }
            d
        })
        .collect();

    let rows: Vec<Vec<f64>> = (0..g)
        .into_par_iter()
        .map(|i| {
            let mut c = vec![0u32; p];
            (i..g)
                .map(|j| {
                    for l in 0..p {
                        c[l] = axis[digits[i * p + l] * per_axis + digits[j * p + l]];
                    }
                    c.sort_unstable();
                    table.value(&c).expect("closeness vectors lie in the table")
                })
                .collect()
        })
        .collect();
    let mut m = DMatrix::zeros(g, g);
    for (i, row) in rows.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            m[(i, i + off)] = v;
            m[(i + off, i)] = v;
        }
    }
    Ok(m)
}

/// Correlation matrix of the process for a general covariate density,
/// estimated from observed covariates and `n_draws` simulated branches.
pub fn empirical_covariance_matrix(
    grid: &PointSet,
    covariates: &PointSet,
    n_draws: usize,
    rule: &SplitRule,
    k: u32,
    seed: u64,
) -> Result<DMatrix<f64>> {
    let est = estimate_kernel(grid, covariates, n_draws, rule, k, seed)?;
    let n = covariates.len() as f64;
    let gram = &est.values * est.values.transpose() / n;
    let scale: Vec<f64> = (0..gram.nrows()).map(|i| gram[(i, i)].sqrt()).collect();
    if let Some(i) = scale.iter().position(|&s| s <= 0.0) {
        return Err(Error::Estimation(format!("grid point {i} has zero kernel variance")));
    }
    let mut m = DMatrix::from_fn(gram.nrows(), gram.ncols(), |i, j| gram[(i, j)] / (scale[i] * scale[j]));
    for i in 0..m.nrows() {
        m[(i, i)] = 1.0;
        for j in 0..i {
            let v = m[(j, i)];
            m[(i, j)] = v;
        }
    }
    Ok(m)
}

/// How [`psd_repair`] obtained its factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Repair {
    /// Cholesky succeeded after adding the jitter to the diagonal.
    Jitter,
    /// Eigenvalues were clamped to the floor before factoring.
    EigenClamp { clamped: usize, min_eigenvalue: f64 },
}

#[derive(Debug, Clone)]
pub struct PsdFactor {
    /// Lower-triangular `L` with `L Lᵀ` approximating the input.
    pub lower: DMatrix<f64>,
    pub repair: Repair,
}

/// Factors a symmetric matrix, repairing it to positive definiteness if needed.
///
/// First tries Cholesky on `M + jitter·I`. If that fails, rebuilds the
/// matrix from its eigendecomposition with eigenvalues raised to
/// `eig_floor` and factors the result.
pub fn psd_repair(matrix: &DMatrix<f64>, jitter: f64, eig_floor: f64) -> Result<PsdFactor> {
    let n = matrix.nrows();
    if matrix.ncols() != n {
        return Err(Error::Shape(format!("matrix is {}x{}", n, matrix.ncols())));
    }
    let scale = matrix.amax().max(1.0);
    for i in 0..n {
        for j in 0..i {
            if (matrix[(i, j)] - matrix[(j, i)]).abs() > 1e-12 * scale {
                return Err(Error::Shape(format!("matrix is not symmetric at ({i}, {j})")));
            }
        }
    }
    if !(jitter >= 0.0 && eig_floor > 0.0) {
        return Err(Error::Config("jitter must be >= 0 and the eigenvalue floor > 0".into()));
    }

    let to_faer = |m: &DMatrix<f64>, shift: f64| {
        Mat::<f64>::from_fn(n, n, |i, j| m[(i, j)] + if i == j { shift } else { 0.0 })
    };
    let lower_of = |chol: &faer::linalg::solvers::Llt<f64>| {
        let l = chol.L();
        DMatrix::from_fn(n, n, |i, j| if j <= i { l[(i, j)] } else { 0.0 })
    };
    if let Ok(chol) = to_faer(matrix, jitter).llt(Side::Lower) {
        return Ok(PsdFactor { lower: lower_of(&chol), repair: Repair::Jitter });
    }

    let eig = to_faer(matrix, 0.0)
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Numerical(format!("eigendecomposition failed: {e:?}")))?;
    let values = eig.S().column_vector();
    let min_eigenvalue = (0..n).map(|i| values[i]).fold(f64::INFINITY, f64::min);
    let clamped = (0..n).filter(|&i| values[i] < eig_floor).count();
    let q = eig.U();
    let scaled = Mat::<f64>::from_fn(n, n, |i, j| q[(i, j)] * values[j].max(eig_floor));
    let rebuilt = &scaled * q.transpose();
    // Rounding in the reconstruction can undercut the floor slightly.
    let mut extra = 0.0;
    for attempt in 0..8 {
        let candidate = Mat::<f64>::from_fn(n, n, |i, j| {
            let v = 0.5 * (rebuilt[(i, j)] + rebuilt[(j, i)]);
            if i == j { v + extra } else { v }
        });
        if let Ok(chol) = candidate.llt(Side::Lower) {
            return Ok(PsdFactor { lower: lower_of(&chol), repair: Repair::EigenClamp { clamped, min_eigenvalue } });
        }
        extra = eig_floor * 10f64.powi(attempt);
    }
    Err(Error::Numerical(format!(
        "Cholesky failed after eigenvalue repair (n = {n}, smallest eigenvalue {min_eigenvalue:e}, {clamped} clamped)"
    )))
}

/// Empirical quantiles of the simulated supremum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpQuantiles {
    pub betas: Vec<f64>,
    /// `quantiles[i]` is the `(1 - betas[i])`-quantile.
    pub quantiles: Vec<f64>,
    pub n_sup: usize,
    /// Depth of the evaluation grid the process was simulated on.
    pub grid_depth: u32,
    pub grid_points: usize,
    pub seed: u64,
}

impl GpQuantiles {
    pub fn quantile(&self, beta: f64) -> Option<f64> {
        self.betas
            .iter()
            .position(|&b| (b - beta).abs() < 1e-12)
            .map(|i| self.quantiles[i])
    }
}

/// Order statistic at rank `ceil((1 - beta) n)` of the sorted values.
pub fn empirical_quantile(sorted: &[f64], beta: f64) -> f64 {
    let n = sorted.len();
    let rank = (((1.0 - beta) * n as f64) - 1e-9).ceil().max(1.0) as usize;
    sorted[rank.min(n) - 1]
}

/// Simulates `max_i |(L Z)_i|` for `n_sup` standard normal vectors `Z`.
///
/// The draws are split into fixed chunks with their own streams, so the
/// suprema depend only on `(factor, n_sup, seed)`.
pub fn simulate_suprema(factor: &DMatrix<f64>, n_sup: usize, seed: u64) -> Result<Vec<f64>> {
    let g = factor.nrows();
    if factor.ncols() != g || g == 0 {
        return Err(Error::Shape(format!("factor is {}x{}", g, factor.ncols())));
    }
    if n_sup == 0 {
        return Err(Error::Config("need at least one simulated supremum".into()));
    }
    let lower = (0..g).all(|j| (0..j).all(|i| factor[(i, j)] == 0.0));
    let n_chunks = n_sup.div_ceil(SUP_CHUNK);
    let chunks: Vec<Vec<f64>> = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = stream(seed, &[label::SUPREMA, chunk as u64]);
            let len = SUP_CHUNK.min(n_sup - chunk * SUP_CHUNK);
            let z = DMatrix::<f64>::from_fn(g, len, |_, _| StandardNormal.sample(&mut rng));
            if !lower {
                return (factor * z).column_iter().map(|col| col.amax()).collect();
            }
            // Row block `[r0, r1)` of a lower-triangular factor only sees the first `r1` columns.
            let mut sup = vec![0.0f64; len];
            for r0 in (0..g).step_by(TRI_BLOCK) {
                let r1 = (r0 + TRI_BLOCK).min(g);
                let y = factor.view((r0, 0), (r1 - r0, r1)) * z.rows(0, r1);
                for (s, col) in sup.iter_mut().zip(y.column_iter()) {
                    *s = s.max(col.amax());
                }
            }
            sup
        })
        .collect();
    Ok(chunks.concat())
}

pub fn simulate_sup_quantiles(
    factor: &DMatrix<f64>,
    n_sup: usize,
    betas: &[f64],
    seed: u64,
    grid_depth: u32,
) -> Result<GpQuantiles> {
    if betas.is_empty() {
        return Err(Error::Config("no levels requested".into()));
    }
    if let Some(b) = betas.iter().find(|&&b| !(b > 0.0 && b < 1.0)) {
        return Err(Error::Config(format!("level {b} is not in (0, 1)")));
    }
    let mut sups = simulate_suprema(factor, n_sup, seed)?;
    sups.sort_unstable_by(f64::total_cmp);
    Ok(GpQuantiles {
        betas: betas.to_vec(),
        quantiles: betas.iter().map(|&b| empirical_quantile(&sups, b)).collect(),
        n_sup,
        grid_depth,
        grid_points: factor.nrows(),
        seed,
    })
}

/// Smallest level `c*` whose diagonal closeness `(c*, ..., c*)` already has
/// covariance within `tol` of one; returns `k` if no coarser level qualifies.
pub fn detect_undividable_resolution(table: &CovTable, tol: f64) -> u32 {
    let p = table.dim();
    (0..=table.depth())
        .find(|&c| table.value(&vec![c; p]).is_some_and(|v| v >= 1.0 - tol))
        .unwrap_or(table.depth())
}

/// Deepest grid not exceeding `c*` that fits in `max_points`.
pub fn choose_grid_depth(table: &CovTable, tol: f64, max_points: usize) -> u32 {
    let target = detect_undividable_resolution(table, tol);
    (0..=target)
        .rev()
        .find(|&d| {
            1usize
                .checked_shl(d)
                .and_then(|a| a.checked_pow(table.dim() as u32))
                .is_some_and(|t| t <= max_points)
        })
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn top_entry_is_one() {
        let t = approximate_covariance(&SplitRule::Uniform, 4, 2, 2000, 1).unwrap();
        assert_eq!(t.values()[t.omega().top_index()], 1.0);
        assert_eq!(t.value(&[4, 4]), Some(1.0));
    }

    #[test]
    fn one_point_grid() {
        let t = approximate_covariance(&SplitRule::Uniform, 3, 2, 1000, 1).unwrap();
        let grid = EvalGrid::new(0, 2, 16).unwrap();
        let m = covariance_matrix(&t, &grid).unwrap();
        assert_eq!(m, DMatrix::from_element(1, 1, 1.0));
    }

    #[test]
    fn two_point_grid_uses_zero_closeness() {
        let t = approximate_covariance(&SplitRule::Uniform, 3, 1, 1000, 1).unwrap();
        let grid = EvalGrid::new(1, 1, 16).unwrap();
        assert_eq!(grid.points().as_flat(), &[0.25, 0.75]);
        let m = covariance_matrix(&t, &grid).unwrap();
        assert_eq!(m[(0, 1)], t.value(&[0]).unwrap());
        assert_eq!(m[(1, 0)], m[(0, 1)]);
        assert_eq!(m[(0, 0)], 1.0);
    }

    #[test]
    fn grid_deeper_than_forest_is_rejected() {
        let t = approximate_covariance(&SplitRule::Uniform, 2, 2, 100, 1).unwrap();
        let grid = EvalGrid::new(3, 2, 1 << 12).unwrap();
        assert!(matches!(covariance_matrix(&t, &grid), Err(Error::Config(_))));
        assert!(matches!(EvalGrid::new(7, 2, 4096), Err(Error::Resource(_))));
    }

    #[test]
    fn identity_factor() {
        let f = psd_repair(&DMatrix::identity(4, 4), 0.0, 1e-10).unwrap();
        assert_eq!(f.lower, DMatrix::identity(4, 4));
        assert_eq!(f.repair, Repair::Jitter);
    }

    #[test]
    fn rank_one_matrix_is_repaired() {
        let m = DMatrix::from_element(2, 2, 1.0);
        let f = psd_repair(&m, 0.0, 1e-10).unwrap();
        let back = &f.lower * f.lower.transpose();
        assert!((back - m).norm() < 1e-8);
    }

    #[test]
    fn asymmetric_input_is_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.2, 1.0]);
        assert!(matches!(psd_repair(&m, 1e-10, 1e-10), Err(Error::Shape(_))));
    }

    #[test]
    fn quantile_rank_convention() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(empirical_quantile(&v, 0.05), 95.0);
        assert_eq!(empirical_quantile(&v, 0.1), 90.0);
        assert_eq!(empirical_quantile(&v, 0.01), 99.0);
        assert_eq!(empirical_quantile(&v, 0.999), 1.0);
    }

    #[test]
    fn undividable_resolution_edge_cases() {
        let t = approximate_covariance(&SplitRule::Uniform, 3, 2, 20_000, 3).unwrap();
        assert_eq!(detect_undividable_resolution(&t, DEFAULT_UNDIVIDABLE_TOL), 3);
        assert_eq!(detect_undividable_resolution(&t, 1.0), 0);
    }

    #[test]
    fn table_text_round_trip() {
        let rule = SplitRule::Ehrenfest(EhrenfestConfig::new(12, 7.0));
        let t = approximate_covariance(&rule, 3, 2, 500, 9).unwrap();
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        let back = CovTable::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn malformed_table_reports_line() {
        let text = "version 1\nkind uniform\nk 1\np 1\npairs 10\nv_cap 0.5\nv_cap_se 0\nseed 1\nentries 2\n1 0 0.5\n2 x 1\n";
        match CovTable::read_from(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 11),
            other => panic!("unexpected {other:?}"),
        }
    }
}
