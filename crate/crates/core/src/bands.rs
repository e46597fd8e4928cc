//! Simultaneous confidence bands around a fitted forest.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::{FittedForest, TrainingSample};
use crate::gpcov::{CovTable, GpQuantiles};
use crate::kernel::estimate_kernel;
use crate::partition::SplitRule;
use crate::points::PointSet;

/// Default half-width of the offsets around dyadic boundaries in [`make_sup_grid`].
pub const DEFAULT_SUP_EPS: f64 = 1.0 / (1u64 << 30) as f64;

/// Pairs farther apart than this many bandwidths along the first axis are
/// skipped by the kernel variance estimator; their weight is below `e^-72`.
const SHEN_CUTOFF: f64 = 12.0;

/// Second moment `Ψ_k` of the projection kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum PsiEstimate {
    /// Closed form for uniform covariates, `2^{2k} V̂_∩,k`.
    Uniform { value: f64, k: u32, v_cap: f64 },
    /// Per-point Monte-Carlo estimate from observed covariates.
    Empirical { values: Vec<f64>, n_draws: usize, floored_cells: u64, seed: u64 },
}

impl PsiEstimate {
    /// `Ψ̂` at grid point `i`.
    pub fn at(&self, i: usize) -> f64 {
        match self {
            Self::Uniform { value, .. } => *value,
            Self::Empirical { values, .. } => values[i],
        }
    }

    pub fn mode(&self) -> &'static str {
        match self {
            Self::Uniform { .. } => "uniform",
            Self::Empirical { .. } => "empirical",
        }
    }
}

pub fn psi_uniform(table: &CovTable) -> PsiEstimate {
    let k = table.depth();
    PsiEstimate::Uniform { value: (2.0 * k as f64).exp2() * table.v_cap(), k, v_cap: table.v_cap() }
}

pub fn psi_empirical(
    points: &PointSet,
    covariates: &PointSet,
    n_draws: usize,
    rule: &SplitRule,
    k: u32,
    seed: u64,
) -> Result<PsiEstimate> {
    let est = estimate_kernel(points, covariates, n_draws, rule, k, seed)?;
    let values = est.second_moments();
    if let Some(i) = values.iter().position(|&v| v <= 0.0) {
        return Err(Error::Estimation(format!(
            "every simulated cell around point {i} is empty; cannot estimate Ψ there"
        )));
    }
    Ok(PsiEstimate::Empirical { values, n_draws, floored_cells: est.floored_cells, seed })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SigmaMethod {
    /// Gaussian-kernel U-statistic over covariate-close pairs.
    #[default]
    Shen,
    /// Mean squared forest residual.
    Residual,
}

impl std::str::FromStr for SigmaMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shen" | "shen-kernel" => Ok(Self::Shen),
            "residual" => Ok(Self::Residual),
            other => Err(Error::Config(format!("unknown variance estimator `{other}`"))),
        }
    }
}

/// `Σ w_ij (Y_i - Y_j)² / 2 / Σ w_ij` over pairs `i < j`, with
/// `w_ij = exp(-|X_i - X_j|² / (2h²))`.
pub fn shen_sigma2(sample: &TrainingSample, bandwidth: f64) -> Result<f64> {
    let n = sample.len();
    if n < 2 {
        return Err(Error::Estimation("need at least two observations".into()));
    }
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::Config(format!("bandwidth must be positive, got {bandwidth}")));
    }
    let x = sample.x();
    let y = sample.y();
    let scale = -0.5 / (bandwidth * bandwidth);
    let pair = |i: usize, j: usize| {
        let d2: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
        let w = (scale * d2).exp();
        let dy = y[i] - y[j];
        (w, w * dy * dy / 2.0)
    };

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| x.row(a)[0].total_cmp(&x.row(b)[0]));
    let reach = SHEN_CUTOFF * bandwidth;
    let (mut wsum, mut num) = (0.0, 0.0);
    for (a, &i) in order.iter().enumerate() {
        let xi = x.row(i)[0];
        for &j in &order[a + 1..] {
            if x.row(j)[0] - xi > reach {
                break;
            }
            let (w, v) = pair(i, j);
            wsum += w;
            num += v;
        }
    }
    if wsum < 1e-6 {
        // Sparse design: no truncation.
        (wsum, num) = (0.0, 0.0);
        for i in 0..n {
            for j in i + 1..n {
                let (w, v) = pair(i, j);
                wsum += w;
                num += v;
            }
        }
    }
    if wsum <= 0.0 {
        return Err(Error::Estimation(format!(
            "all kernel weights vanish at bandwidth {bandwidth}"
        )));
    }
    Ok(num / wsum)
}

pub fn residual_sigma2(sample: &TrainingSample, forest: &FittedForest) -> Result<f64> {
    if sample.len() < 2 {
        return Err(Error::Estimation("need at least two observations".into()));
    }
    let fitted = forest.predict_many(sample.x())?;
    let ss: f64 = fitted.iter().zip(sample.y()).map(|(f, y)| (y - f) * (y - f)).sum();
    Ok(ss / sample.len() as f64)
}

/// Noise variance `σ̂²` by the chosen method. Shen's estimator defaults to `h = n^{-1/2}`.
pub fn estimate_sigma2(
    sample: &TrainingSample,
    method: SigmaMethod,
    bandwidth: Option<f64>,
    forest: Option<&FittedForest>,
) -> Result<f64> {
    match method {
        SigmaMethod::Shen => {
            shen_sigma2(sample, bandwidth.unwrap_or(1.0 / (sample.len() as f64).sqrt()))
        }
        SigmaMethod::Residual => {
            let forest = forest
                .ok_or_else(|| Error::Config("the residual estimator needs a fitted forest".into()))?;
            residual_sigma2(sample, forest)
        }
    }
}

/// Points just inside every dyadic boundary of level `depth`: per axis
/// `{ε, 1 - ε} ∪ {a 2^-depth ± ε : 0 < a < 2^depth}`, tensorized with the
/// first axis varying slowest.
pub fn make_sup_grid(depth: u32, eps: f64, dim: usize) -> Result<PointSet> {
    if dim == 0 {
        return Err(Error::InvalidDimension("p must be at least 1".into()));
    }
    if depth >= 30 {
        return Err(Error::Resource(format!("sup grid depth {depth} is too deep")));
    }
    let half_cell = (-(depth as f64) - 1.0).exp2();
    if !(eps > 0.0 && eps < half_cell) {
        return Err(Error::Config(format!("ε = {eps} must lie in (0, {half_cell})")));
    }
    let per = 1usize << depth;
    let step = 1.0 / per as f64;
    let mut axis = Vec::with_capacity(2 * per);
    axis.push(eps);
    for a in 1..per {
        axis.push(a as f64 * step - eps);
        axis.push(a as f64 * step + eps);
    }
    axis.push(1.0 - eps);
    let total = axis
        .len()
        .checked_pow(dim as u32)
        .filter(|&t| t <= 1 << 26)
        .ok_or_else(|| Error::Resource(format!("sup grid of depth {depth} in p = {dim} is too large")))?;
    let mut coords = Vec::with_capacity(total * dim);
    let mut digits = vec![0usize; dim];
    for _ in 0..total {
        coords.extend(digits.iter().map(|&d| axis[d]));
        for l in (0..dim).rev() {
            digits[l] += 1;
            if digits[l] < axis.len() {
                break;
            }
            digits[l] = 0;
        }
    }
    PointSet::new(dim, coords)
}

/// Descriptive fields carried into the band output.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BandMeta {
    pub k: u32,
    pub n: usize,
    pub subsample_size: usize,
    pub n_trees: usize,
    pub kind: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceBand {
    pub points: PointSet,
    pub center: Vec<f64>,
    pub radius: Vec<f64>,
    pub psi: Vec<f64>,
    pub beta: f64,
    pub critical_value: f64,
    pub sigma_hat: f64,
    pub meta: BandMeta,
}

/// Radii `σ̂ c_k(β) √(Ψ̂(x)/n)` for already computed centers.
pub fn band_from_centers(
    points: PointSet,
    center: Vec<f64>,
    psi: &PsiEstimate,
    quantiles: &GpQuantiles,
    sigma_hat: f64,
    beta: f64,
    meta: BandMeta,
) -> Result<ConfidenceBand> {
    if center.len() != points.len() {
        return Err(Error::Shape(format!("{} centers for {} points", center.len(), points.len())));
    }
    if let PsiEstimate::Empirical { values, .. } = psi {
        if values.len() != points.len() {
            return Err(Error::Shape(format!("{} Ψ values for {} points", values.len(), points.len())));
        }
    }
    if !(sigma_hat >= 0.0 && sigma_hat.is_finite()) {
        return Err(Error::Estimation(format!("σ̂ = {sigma_hat} is not a valid standard deviation")));
    }
    if meta.n == 0 {
        return Err(Error::Config("sample size must be positive".into()));
    }
    let c = quantiles
        .quantile(beta)
        .ok_or_else(|| Error::Config(format!("no simulated quantile for β = {beta}")))?;
    let n = meta.n as f64;
    let psi_values: Vec<f64> = (0..points.len()).map(|i| psi.at(i)).collect();
    let radius = psi_values.iter().map(|&v| sigma_hat * c * (v / n).sqrt()).collect();
    Ok(ConfidenceBand { points, center, radius, psi: psi_values, beta, critical_value: c, sigma_hat, meta })
}

/// Evaluates the forest on `points` and attaches radii.
pub fn build_band(
    forest: &FittedForest,
    psi: &PsiEstimate,
    quantiles: &GpQuantiles,
    sigma_hat: f64,
    beta: f64,
    points: &PointSet,
) -> Result<ConfidenceBand> {
    let cfg = forest.config();
    let meta = BandMeta {
        k: cfg.depth,
        n: forest.n_samples(),
        subsample_size: cfg.subsample_size,
        n_trees: cfg.n_trees,
        kind: cfg.rule.name().to_string(),
        seed: cfg.seed,
    };
    let center = forest.predict_many(points)?;
    band_from_centers(points.clone(), center, psi, quantiles, sigma_hat, beta, meta)
}

impl ConfidenceBand {
    pub fn lower(&self, i: usize) -> f64 {
        self.center[i] - self.radius[i]
    }

    pub fn upper(&self, i: usize) -> f64 {
        self.center[i] + self.radius[i]
    }

    /// Largest `|center(x) - m(x)| / radius(x)` over the grid; the band covers `m` iff this is at most 1.
    pub fn max_scaled_error<F: Fn(&[f64]) -> f64>(&self, m: F) -> f64 {
        self.points
            .rows()
            .zip(self.center.iter().zip(&self.radius))
            .map(|(x, (&c, &r))| {
                let err = (c - m(x)).abs();
                if err == 0.0 { 0.0 } else { err / r }
            })
            .fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let m = &self.meta;
        writeln!(w, "# k={}", m.k)?;
        writeln!(w, "# n={}", m.n)?;
        writeln!(w, "# r_n={}", m.subsample_size)?;
        writeln!(w, "# N={}", m.n_trees)?;
        writeln!(w, "# kind={}", m.kind)?;
        writeln!(w, "# beta={}", self.beta)?;
        writeln!(w, "# sigma_hat={}", self.sigma_hat)?;
        writeln!(w, "# c_k={}", self.critical_value)?;
        writeln!(w, "# seed={}", m.seed)?;
        let p = self.points.dim();
        let mut header: Vec<String> = (1..=p).map(|l| format!("x{l}")).collect();
        header.extend(["estimate", "lower", "upper", "psi", "radius"].map(String::from));
        writeln!(w, "{}", header.join(","))?;
        for (i, x) in self.points.rows().enumerate() {
            let mut fields: Vec<String> = x.iter().map(f64::to_string).collect();
            fields.extend(
                [self.center[i], self.lower(i), self.upper(i), self.psi[i], self.radius[i]]
                    .map(|v| v.to_string()),
            );
            writeln!(w, "{}", fields.join(","))?;
        }
        Ok(())
    }
}

/// True iff `|center(x) - m(x)| <= radius(x)` at every grid point.
pub fn check_coverage<F: Fn(&[f64]) -> f64>(band: &ConfidenceBand, m: F) -> bool {
    band.points
        .rows()
        .zip(band.center.iter().zip(&band.radius))
        .all(|(x, (&c, &r))| (c - m(x)).abs() <= r)
}
