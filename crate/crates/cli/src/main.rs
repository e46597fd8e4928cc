use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use cprf::bands::{build_band, estimate_sigma2, make_sup_grid, psi_uniform, SigmaMethod, DEFAULT_SUP_EPS};
use cprf::gpcov::{
    approximate_covariance, choose_grid_depth, covariance_matrix, detect_undividable_resolution, psd_repair,
    simulate_sup_quantiles, EvalGrid, Repair, DEFAULT_EIG_FLOOR, DEFAULT_JITTER, DEFAULT_MAX_GRID_POINTS,
    DEFAULT_UNDIVIDABLE_TOL,
};
use cprf::io::{read_training_csv, write_atomic};
use cprf::simlab::{read_configs, run_experiment, write_results_csv, ExperimentResult};
use cprf::{fit_forest, CovTable, EhrenfestConfig, ForestConfig, GpQuantiles, SplitRule, SubsampleMode};

#[derive(Parser)]
#[command(name = "cprf", version, about = "Centered purely random forests with simultaneous confidence bands")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "CPRF_WORKERS")]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the covariance table of the limiting Gaussian process.
    Cov(CovArgs),
    /// Simulate supremum quantiles from a covariance table.
    Quantiles(QuantileArgs),
    /// Fit a forest and write its manifest.
    Fit(FitArgs),
    /// Fit a forest and write a confidence band on the sup grid.
    Band(BandArgs),
    /// Run coverage experiments from a JSON config.
    Simulate(SimulateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Uniform,
    Ehrenfest,
}

#[derive(Args)]
struct RuleArgs {
    #[arg(long, value_enum)]
    kind: Kind,
    /// Particles per container for the Ehrenfest rule.
    #[arg(long, default_value_t = 12)]
    ehr_b: u32,
    /// Threshold slack for the Ehrenfest rule.
    #[arg(long, default_value_t = 7.0)]
    ehr_delta: f64,
}

impl RuleArgs {
    fn rule(&self) -> SplitRule {
        match self.kind {
            Kind::Uniform => SplitRule::Uniform,
            Kind::Ehrenfest => SplitRule::Ehrenfest(EhrenfestConfig::new(self.ehr_b, self.ehr_delta)),
        }
    }
}

#[derive(Args)]
struct CovArgs {
    #[command(flatten)]
    rule: RuleArgs,
    #[arg(long)]
    k: u32,
    #[arg(long)]
    p: usize,
    #[arg(long, default_value_t = 50_000)]
    pairs: u64,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct QuantileArgs {
    #[arg(long)]
    cov: PathBuf,
    /// Grid depth; chosen from the table when omitted.
    #[arg(long)]
    ktilde: Option<u32>,
    #[arg(long, default_value_t = 100_000)]
    sups: usize,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.05,0.01")]
    betas: Vec<f64>,
    #[arg(long, default_value_t = DEFAULT_MAX_GRID_POINTS)]
    max_grid_points: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ForestArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    rule: RuleArgs,
    #[arg(long)]
    k: u32,
    /// Subsample size.
    #[arg(long)]
    rn: usize,
    #[arg(long, default_value_t = 100)]
    trees: usize,
    /// Draw a Poisson number of trees.
    #[arg(long)]
    poissonized: bool,
    #[arg(long)]
    seed: u64,
}

impl ForestArgs {
    fn config(&self) -> ForestConfig {
        ForestConfig {
            rule: self.rule.rule(),
            depth: self.k,
            n_trees: self.trees,
            subsample_size: self.rn,
            mode: if self.poissonized { SubsampleMode::Poissonized } else { SubsampleMode::FixedN },
            seed: self.seed,
        }
    }
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    forest: ForestArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum SigmaEst {
    Shen,
    Residual,
}

#[derive(Args)]
struct BandArgs {
    #[command(flatten)]
    forest: ForestArgs,
    #[arg(long)]
    cov: PathBuf,
    #[arg(long)]
    quantiles: PathBuf,
    #[arg(long)]
    beta: f64,
    #[arg(long, value_enum, default_value = "shen")]
    sigma_est: SigmaEst,
    /// Kernel bandwidth for the Shen estimator; `n^{-1/2}` when omitted.
    #[arg(long)]
    bandwidth: Option<f64>,
    /// Sup-grid depth; one below the quantile grid depth when omitted.
    #[arg(long)]
    grid_depth: Option<u32>,
    #[arg(long, default_value_t = DEFAULT_SUP_EPS)]
    eps: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON file with one config or a list of configs.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed of every config.
    #[arg(long)]
    seed: Option<u64>,
    /// 200 replications per config.
    #[arg(long)]
    fast: bool,
    #[arg(long)]
    replications: Option<usize>,
    /// Directory for cached covariance tables and quantiles.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Also write the full results as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

fn read_table(path: &Path) -> Result<CovTable> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    CovTable::read_from(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}

fn cmd_cov(a: CovArgs) -> Result<()> {
    let table = approximate_covariance(&a.rule.rule(), a.k, a.p, a.pairs, a.seed)?;
    write_atomic(&a.out, |w| table.write_to(w))?;
    println!("entries      {}", table.values().len());
    println!("V_cap        {:.6e} (se {:.2e})", table.v_cap(), table.v_cap_std_error());
    println!("c*           {}", detect_undividable_resolution(&table, DEFAULT_UNDIVIDABLE_TOL));
    Ok(())
}

fn cmd_quantiles(a: QuantileArgs) -> Result<()> {
    let table = read_table(&a.cov)?;
    let depth = a
        .ktilde
        .unwrap_or_else(|| choose_grid_depth(&table, DEFAULT_UNDIVIDABLE_TOL, a.max_grid_points));
    let grid = EvalGrid::new(depth, table.dim(), a.max_grid_points)?;
    let matrix = covariance_matrix(&table, &grid)?;
    let factor = psd_repair(&matrix, DEFAULT_JITTER, DEFAULT_EIG_FLOOR)?;
    if let Repair::EigenClamp { clamped, min_eigenvalue } = factor.repair {
        eprintln!("note: clamped {clamped} eigenvalues (smallest {min_eigenvalue:.3e})");
    }
    let q = simulate_sup_quantiles(&factor.lower, a.sups, &a.betas, a.seed, depth)?;
    write_atomic(&a.out, |w| Ok(serde_json::to_writer_pretty(w, &q)?))?;
    println!("grid depth {depth} ({} points)", grid.len());
    for (b, c) in q.betas.iter().zip(&q.quantiles) {
        println!("beta {b:<6} c = {c:.4}");
    }
    Ok(())
}

fn load_data(path: &Path) -> Result<cprf::TrainingSample> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_training_csv(file).with_context(|| format!("reading {}", path.display()))
}

fn cmd_fit(a: FitArgs) -> Result<()> {
    let sample = load_data(&a.forest.data)?;
    let forest = fit_forest(&a.forest.config(), &sample)?;
    write_atomic(&a.out, |w| Ok(serde_json::to_writer_pretty(w, &forest.manifest())?))?;
    println!("fitted {} trees on {} observations", forest.trees().len(), sample.len());
    Ok(())
}

fn cmd_band(a: BandArgs) -> Result<()> {
    let sample = load_data(&a.forest.data)?;
    let table = read_table(&a.cov)?;
    let quantiles: GpQuantiles = serde_json::from_reader(BufReader::new(
        File::open(&a.quantiles).with_context(|| format!("opening {}", a.quantiles.display()))?,
    ))?;
    let cfg = a.forest.config();
    if table.depth() != cfg.depth || table.dim() != sample.dim() || table.rule() != &cfg.rule {
        bail!(
            "covariance table is for {} k={} p={}, forest is {} k={} p={}",
            table.rule().name(),
            table.depth(),
            table.dim(),
            cfg.rule.name(),
            cfg.depth,
            sample.dim()
        );
    }
    let forest = fit_forest(&cfg, &sample)?;
    let method = match a.sigma_est {
        SigmaEst::Shen => SigmaMethod::Shen,
        SigmaEst::Residual => SigmaMethod::Residual,
    };
    let sigma2 = estimate_sigma2(&sample, method, a.bandwidth, Some(&forest))?;
    let depth = a.grid_depth.unwrap_or(quantiles.grid_depth.saturating_sub(1));
    let grid = make_sup_grid(depth, a.eps, sample.dim())?;
    let band = build_band(&forest, &psi_uniform(&table), &quantiles, sigma2.sqrt(), a.beta, &grid)?;
    write_atomic(&a.out, |w| band.write_csv(w))?;
    println!(
        "{} points, sigma_hat {:.4}, c_k {:.4}, radius {:.4}",
        grid.len(),
        band.sigma_hat,
        band.critical_value,
        band.radius[0]
    );
    Ok(())
}

fn print_summary(results: &[ExperimentResult]) {
    println!("{:<10} {:>6} {:>5} {:>12} {:>6} {:>9} {:>8} {:>6}", "kind", "sigma", "N", "distribution", "beta", "coverage", "radius", "reps");
    for r in results {
        for l in &r.levels {
            println!(
                "{:<10} {:>6} {:>5} {:>12} {:>6} {:>9.3} {:>8.3} {:>6}",
                r.config.rule.name(),
                r.config.sigma,
                r.config.trees,
                r.config.distribution.to_string(),
                l.beta,
                l.coverage,
                l.mean_radius,
                r.replications
            );
        }
    }
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    if a.fast && a.replications.is_some() {
        bail!("--fast and --replications are mutually exclusive");
    }
    let mut configs = read_configs(&a.config).with_context(|| format!("reading {}", a.config.display()))?;
    if configs.is_empty() {
        bail!("{} holds no experiment configs", a.config.display());
    }
    let mut results = Vec::with_capacity(configs.len());
    for cfg in &mut configs {
        if let Some(seed) = a.seed {
            cfg.seed = seed;
        }
        if a.fast {
            cfg.replications = 200;
        }
        if let Some(r) = a.replications {
            cfg.replications = r;
        }
        results.push(run_experiment(cfg, a.cache_dir.as_deref())?);
    }
    write_atomic(&a.out, |w| write_results_csv(w, &results))?;
    if let Some(path) = &a.json {
        write_atomic(path, |w| Ok(serde_json::to_writer_pretty(w, &results)?))?;
    }
    print_summary(&results);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.workers {
        if n == 0 {
            bail!("--workers must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::Cov(a) => cmd_cov(a),
        Command::Quantiles(a) => cmd_quantiles(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Band(a) => cmd_band(a),
        Command::Simulate(a) => cmd_simulate(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
