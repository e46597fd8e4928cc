//! Synthetic regression data and coverage experiments.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bands::{
    band_from_centers, check_coverage, estimate_sigma2, make_sup_grid, psi_uniform, BandMeta,
    PsiEstimate, SigmaMethod, DEFAULT_SUP_EPS,
};
use crate::error::{Error, Result};
use crate::forest::{fit_forest, ForestConfig, SubsampleMode, TrainingSample};
use crate::gpcov::{
    approximate_covariance, choose_grid_depth, covariance_matrix, psd_repair, simulate_sup_quantiles,
    CovTable, EvalGrid, GpQuantiles, Repair, DEFAULT_EIG_FLOOR, DEFAULT_JITTER,
    DEFAULT_MAX_GRID_POINTS, DEFAULT_PAIRS, DEFAULT_SUPREMA, DEFAULT_UNDIVIDABLE_TOL,
};
use crate::io::write_atomic;
use crate::partition::SplitRule;
use crate::points::PointSet;
use crate::rng::{derive_seed, label, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegressionFn {
    /// `(sin(2π x1) + x2) / 10`
    M2,
    /// `(sin(2π x1) + x2 + x3 x4) / 10`
    M4,
    Zero,
}

impl RegressionFn {
    pub fn min_dim(self) -> usize {
        match self {
            Self::M2 => 2,
            Self::M4 => 4,
            Self::Zero => 1,
        }
    }

    pub fn eval(self, x: &[f64]) -> f64 {
        match self {
            Self::M2 => ((2.0 * std::f64::consts::PI * x[0]).sin() + x[1]) / 10.0,
            Self::M4 => ((2.0 * std::f64::consts::PI * x[0]).sin() + x[1] + x[2] * x[3]) / 10.0,
            Self::Zero => 0.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::M2 => "m2",
            Self::M4 => "m4",
            Self::Zero => "zero",
        }
    }
}

/// Error family; every family is rescaled to standard deviation `σ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ErrorDist {
    Normal,
    Uniform,
    StudentT(f64),
}

impl FromStr for ErrorDist {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(Self::Normal),
            "uniform" => Ok(Self::Uniform),
            _ => {
                let nu = s
                    .strip_prefix('t')
                    .and_then(|v| v.parse::<f64>().ok())
                    .ok_or_else(|| Error::Config(format!("unknown error distribution `{s}`")))?;
                if !(nu > 2.0) {
                    return Err(Error::Config(format!(
                        "t distribution with ν = {nu} has infinite variance"
                    )));
                }
                Ok(Self::StudentT(nu))
            }
        }
    }
}

impl TryFrom<String> for ErrorDist {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ErrorDist> for String {
    fn from(d: ErrorDist) -> String {
        d.to_string()
    }
}

impl fmt::Display for ErrorDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Normal => f.write_str("normal"),
            Self::Uniform => f.write_str("uniform"),
            Self::StudentT(nu) => write!(f, "t{nu}"),
        }
    }
}

impl ErrorDist {
    /// One draw with standard deviation `sigma`.
    pub fn sample<R: Rng + ?Sized>(&self, sigma: f64, rng: &mut R) -> f64 {
        match *self {
            Self::Normal => sigma * rng.sample::<f64, _>(StandardNormal),
            Self::Uniform => sigma * 3f64.sqrt() * rng.random_range(-1.0..1.0),
            Self::StudentT(nu) => {
                let t = StudentT::new(nu).expect("ν > 2 checked at parse time");
                sigma * t.sample(rng) / (nu / (nu - 2.0)).sqrt()
            }
        }
    }
}

fn default_betas() -> Vec<f64> {
    vec![0.1, 0.05, 0.01]
}
fn default_replications() -> usize {
    1000
}
fn default_pairs() -> u64 {
    DEFAULT_PAIRS
}
fn default_sups() -> usize {
    DEFAULT_SUPREMA
}
fn default_max_grid() -> usize {
    DEFAULT_MAX_GRID_POINTS
}
fn default_eps() -> f64 {
    DEFAULT_SUP_EPS
}
fn default_tol() -> f64 {
    DEFAULT_UNDIVIDABLE_TOL
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub p: usize,
    pub n: usize,
    /// Subsample size `r_n`.
    pub rn: usize,
    pub k: u32,
    /// Number of trees `N`.
    pub trees: usize,
    pub rule: SplitRule,
    pub sigma: f64,
    pub distribution: ErrorDist,
    pub regression: RegressionFn,
    #[serde(default = "default_betas")]
    pub betas: Vec<f64>,
    #[serde(default = "default_replications")]
    pub replications: usize,
    pub seed: u64,
    #[serde(default)]
    pub subsample_mode: SubsampleMode,
    #[serde(default)]
    pub sigma_method: SigmaMethod,
    #[serde(default = "default_pairs")]
    pub pairs: u64,
    #[serde(default = "default_sups")]
    pub sups: usize,
    /// Depth of the process grid; chosen from the table when absent.
    #[serde(default)]
    pub gp_depth: Option<u32>,
    #[serde(default = "default_max_grid")]
    pub max_grid_points: usize,
    #[serde(default = "default_tol")]
    pub undividable_tol: f64,
    #[serde(default = "default_eps")]
    pub sup_eps: f64,
    /// Seed for the covariance table and suprema; defaults to one derived from `seed`.
    #[serde(default)]
    pub critical_seed: Option<u64>,
}

impl ExperimentConfig {
    /// Default settings for everything but the model.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        p: usize,
        n: usize,
        k: u32,
        trees: usize,
        rule: SplitRule,
        sigma: f64,
        distribution: ErrorDist,
        regression: RegressionFn,
        seed: u64,
    ) -> Self {
        Self {
            p,
            n,
            rn: n * 3 / 4,
            k,
            trees,
            rule,
            sigma,
            distribution,
            regression,
            betas: default_betas(),
            replications: default_replications(),
            seed,
            subsample_mode: SubsampleMode::default(),
            sigma_method: SigmaMethod::default(),
            pairs: DEFAULT_PAIRS,
            sups: DEFAULT_SUPREMA,
            gp_depth: None,
            max_grid_points: DEFAULT_MAX_GRID_POINTS,
            undividable_tol: DEFAULT_UNDIVIDABLE_TOL,
            sup_eps: DEFAULT_SUP_EPS,
            critical_seed: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 {
            return Err(Error::InvalidDimension("p must be at least 1".into()));
        }
        if self.p < self.regression.min_dim() {
            return Err(Error::InvalidDimension(format!(
                "regression {} needs p >= {}",
                self.regression.name(),
                self.regression.min_dim()
            )));
        }
        if self.replications == 0 {
            return Err(Error::Config("an experiment needs at least one replication".into()));
        }
        if self.n < 2 || self.rn == 0 || self.rn > self.n {
            return Err(Error::Config(format!("need 0 < r_n <= n and n >= 2, got r_n = {}, n = {}", self.rn, self.n)));
        }
        if self.trees == 0 || self.pairs == 0 || self.sups == 0 {
            return Err(Error::Config("tree, pair and supremum counts must be positive".into()));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("σ must be positive, got {}", self.sigma)));
        }
        if self.betas.is_empty() || self.betas.iter().any(|&b| !(b > 0.0 && b < 1.0)) {
            return Err(Error::Config("levels must lie in (0, 1)".into()));
        }
        self.rule.validate(self.p)?;
        self.forest_config(0).validate(self.p)
    }

    pub fn forest_config(&self, replication: usize) -> ForestConfig {
        ForestConfig {
            rule: self.rule,
            depth: self.k,
            n_trees: self.trees,
            subsample_size: self.rn,
            mode: self.subsample_mode,
            seed: derive_seed(self.seed, &[label::FOREST, replication as u64]),
        }
    }

    fn critical_seed(&self) -> u64 {
        self.critical_seed.unwrap_or_else(|| derive_seed(self.seed, &[label::SUPREMA]))
    }
}

/// Training sample of replication `r`. Depends on the seed, the model and
/// the noise only, so runs differing in forest settings see identical data.
pub fn gen_data(cfg: &ExperimentConfig, replication: usize) -> Result<TrainingSample> {
    let mut rng = stream(cfg.seed, &[label::DATA, replication as u64]);
    sample_model(cfg.p, cfg.n, cfg.regression, cfg.distribution, cfg.sigma, &mut rng)
}

pub fn sample_model<R: Rng + ?Sized>(
    p: usize,
    n: usize,
    regression: RegressionFn,
    dist: ErrorDist,
    sigma: f64,
    rng: &mut R,
) -> Result<TrainingSample> {
    let coords: Vec<f64> = (0..n * p).map(|_| rng.random::<f64>()).collect();
    let x = PointSet::new(p, coords)?;
    let y = x.rows().map(|row| regression.eval(row) + dist.sample(sigma, rng)).collect();
    TrainingSample::new(x, y)
}

/// Everything a band needs besides the data: `Ψ̂`, the supremum
/// quantiles and the grid the supremum is taken over.
#[derive(Debug, Clone)]
pub struct CriticalValues {
    pub table: CovTable,
    pub psi: PsiEstimate,
    pub quantiles: GpQuantiles,
    pub gp_depth: u32,
    pub sup_depth: u32,
    pub repair: Option<Repair>,
}

/// Sup-grid depth matching a process grid of depth `gp_depth`: both place
/// one point in each level-`gp_depth` cell.
pub fn sup_depth_for(gp_depth: u32) -> u32 {
    gp_depth.saturating_sub(1)
}

fn cache_key(cfg: &ExperimentConfig) -> String {
    let key = serde_json::json!({
        "rule": cfg.rule,
        "k": cfg.k,
        "p": cfg.p,
        "pairs": cfg.pairs,
        "sups": cfg.sups,
        "gp_depth": cfg.gp_depth,
        "max_grid_points": cfg.max_grid_points,
        "undividable_tol": cfg.undividable_tol,
        "betas": cfg.betas,
        "seed": cfg.critical_seed(),
    });
    let digest = Sha256::digest(key.to_string().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Covariance table and quantiles for `cfg`, reusing files in `cache_dir`
/// when present.
pub fn prepare_critical_values(cfg: &ExperimentConfig, cache_dir: Option<&Path>) -> Result<CriticalValues> {
    cfg.validate()?;
    let seed = cfg.critical_seed();
    let paths = cache_dir.map(|d| {
        let key = cache_key(cfg);
        (d.join(format!("{key}.cov")), d.join(format!("{key}.quantiles.json")))
    });
    if let Some((tp, qp)) = &paths {
        if tp.exists() && qp.exists() {
            let table = CovTable::read_from(std::io::BufReader::new(std::fs::File::open(tp)?))?;
            let quantiles: GpQuantiles = serde_json::from_slice(&std::fs::read(qp)?)?;
            let gp_depth = quantiles.grid_depth;
            return Ok(CriticalValues {
                psi: psi_uniform(&table),
                table,
                quantiles,
                gp_depth,
                sup_depth: sup_depth_for(gp_depth),
                repair: None,
            });
        }
    }

    let table = approximate_covariance(&cfg.rule, cfg.k, cfg.p, cfg.pairs, derive_seed(seed, &[label::PAIRS]))?;
    let gp_depth = match cfg.gp_depth {
        Some(d) => d,
        None => choose_grid_depth(&table, cfg.undividable_tol, cfg.max_grid_points),
    };
    let grid = EvalGrid::new(gp_depth, cfg.p, cfg.max_grid_points)?;
    let matrix = covariance_matrix(&table, &grid)?;
    let factor = psd_repair(&matrix, DEFAULT_JITTER, DEFAULT_EIG_FLOOR)?;
    let quantiles = simulate_sup_quantiles(&factor.lower, cfg.sups, &cfg.betas, seed, gp_depth)?;

    if let Some((tp, qp)) = &paths {
        std::fs::create_dir_all(cache_dir.expect("paths imply a cache dir"))?;
        write_atomic(tp, |w| table.write_to(w))?;
        write_atomic(qp, |w| Ok(serde_json::to_writer_pretty(w, &quantiles)?))?;
    }
    Ok(CriticalValues {
        psi: psi_uniform(&table),
        table,
        quantiles,
        gp_depth,
        sup_depth: sup_depth_for(gp_depth),
        repair: Some(factor.repair),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub beta: f64,
    pub coverage: f64,
    pub mean_radius: f64,
    pub critical_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub levels: Vec<LevelSummary>,
    pub replications: usize,
    pub psi: f64,
    pub v_cap: f64,
    pub gp_depth: u32,
    pub sup_depth: u32,
    /// Per replication, `sup |estimate - m| / (σ̂ √(Ψ̂/n))` over the sup grid.
    pub standardized_sups: Vec<f64>,
    /// Per replication, the estimated noise variance.
    pub sigma2_hats: Vec<f64>,
    pub fallback_moves: u64,
    pub wall_clock_secs: f64,
    pub seed: u64,
}

struct Replication {
    covered: Vec<bool>,
    radius: Vec<f64>,
    standardized_sup: f64,
    sigma2: f64,
    fallback_moves: u64,
}

fn run_replication(cfg: &ExperimentConfig, cv: &CriticalValues, grid: &PointSet, r: usize) -> Result<Replication> {
    let sample = gen_data(cfg, r)?;
    let forest = fit_forest(&cfg.forest_config(r), &sample)?;
    let sigma2 = estimate_sigma2(&sample, cfg.sigma_method, None, Some(&forest))?;
    let sigma_hat = sigma2.sqrt();
    let center = forest.predict_many(grid)?;
    let meta = BandMeta {
        k: cfg.k,
        n: cfg.n,
        subsample_size: cfg.rn,
        n_trees: cfg.trees,
        kind: cfg.rule.name().into(),
        seed: cfg.seed,
    };
    let m = |x: &[f64]| cfg.regression.eval(x);
    let mut covered = Vec::with_capacity(cfg.betas.len());
    let mut radius = Vec::with_capacity(cfg.betas.len());
    let mut band = None;
    for &beta in &cfg.betas {
        let b = band_from_centers(grid.clone(), center.clone(), &cv.psi, &cv.quantiles, sigma_hat, beta, meta.clone())?;
        covered.push(check_coverage(&b, m));
        radius.push(b.radius.iter().sum::<f64>() / b.radius.len() as f64);
        band = Some(b);
    }
    let band = band.expect("at least one level");
    let standardized_sup = band.max_scaled_error(m) * band.critical_value;
    Ok(Replication { covered, radius, standardized_sup, sigma2, fallback_moves: forest.fallback_moves() })
}

pub fn run_experiment_with(cfg: &ExperimentConfig, cv: &CriticalValues) -> Result<ExperimentResult> {
    cfg.validate()?;
    if cv.table.depth() != cfg.k || cv.table.dim() != cfg.p || cv.table.rule() != &cfg.rule {
        return Err(Error::Config("critical values were computed for a different forest".into()));
    }
    let start = Instant::now();
    let grid = make_sup_grid(cv.sup_depth, cfg.sup_eps, cfg.p)?;
    let reps: Vec<Result<Replication>> =
        (0..cfg.replications).into_par_iter().map(|r| run_replication(cfg, cv, &grid, r)).collect();
    let mut ok = Vec::with_capacity(reps.len());
    for (index, rep) in reps.into_iter().enumerate() {
        ok.push(rep.map_err(|e| Error::Replication { index, source: Box::new(e) })?);
    }
    let count = ok.len() as f64;
    let levels = cfg
        .betas
        .iter()
        .enumerate()
        .map(|(i, &beta)| LevelSummary {
            beta,
            coverage: ok.iter().filter(|r| r.covered[i]).count() as f64 / count,
            mean_radius: ok.iter().map(|r| r.radius[i]).sum::<f64>() / count,
            critical_value: cv.quantiles.quantile(beta).expect("levels simulated together"),
        })
        .collect();
    Ok(ExperimentResult {
        config: cfg.clone(),
        levels,
        replications: ok.len(),
        psi: cv.psi.at(0),
        v_cap: cv.table.v_cap(),
        gp_depth: cv.gp_depth,
        sup_depth: cv.sup_depth,
        standardized_sups: ok.iter().map(|r| r.standardized_sup).collect(),
        sigma2_hats: ok.iter().map(|r| r.sigma2).collect(),
        fallback_moves: ok.iter().map(|r| r.fallback_moves).sum(),
        wall_clock_secs: start.elapsed().as_secs_f64(),
        seed: cfg.seed,
    })
}

pub fn run_experiment(cfg: &ExperimentConfig, cache_dir: Option<&Path>) -> Result<ExperimentResult> {
    let cv = prepare_critical_values(cfg, cache_dir)?;
    run_experiment_with(cfg, &cv)
}

pub const RESULTS_HEADER: &str = "kind,sigma,N,distribution,beta,coverage,radius,reps,seed,p,n,k,regression";

/// One CSV row per level, in the column order of [`RESULTS_HEADER`].
pub fn write_results_csv<W: Write>(mut w: W, results: &[ExperimentResult]) -> Result<()> {
    writeln!(w, "{RESULTS_HEADER}")?;
    for res in results {
        let c = &res.config;
        for level in &res.levels {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                c.rule.name(),
                c.sigma,
                c.trees,
                c.distribution,
                level.beta,
                level.coverage,
                level.mean_radius,
                res.replications,
                res.seed,
                c.p,
                c.n,
                c.k,
                c.regression.name()
            )?;
        }
    }
    Ok(())
}

/// A file of experiment configs: either one object or a list.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum ConfigFile {
    One(ExperimentConfig),
    Many(Vec<ExperimentConfig>),
}

impl ConfigFile {
    pub fn into_vec(self) -> Vec<ExperimentConfig> {
        match self {
            Self::One(c) => vec![c],
            Self::Many(v) => v,
        }
    }
}

pub fn read_configs(path: &Path) -> Result<Vec<ExperimentConfig>> {
    let text = std::fs::read_to_string(path)?;
    let file: ConfigFile = serde_json::from_str(&text)?;
    Ok(file.into_vec())
}

/// Default cache location below `dir`.
pub fn cache_dir_in(dir: &Path) -> PathBuf {
    dir.join("cprf-cache")
}
