//! Centered purely random trees and their subsampled ensemble.
//!
//! A tree of depth `k` is stored as the split direction of each of its
//! `2^k - 1` internal nodes in level order; node `i` has children `2i+1`
//! (lower half) and `2i+2` (upper half). Partitions never look at the data,
//! so a tree is fully determined by its RNG stream.
//!
//! The forest averages trees fitted on size-`r_n` subsamples, i.e. it is an
//! incomplete generalized U-statistic. Trees whose cell around the query
//! point holds no subsampled observation contribute zero.

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::partition::{dyadic_index, DyadicCell, EhrenfestState, SplitCounts, SplitDirections, SplitRule};
use crate::points::{check_unit_cube, PointSet};
use crate::rng::{label, stream, StreamRng};

/// Deepest tree that will be materialized.
pub const MAX_TREE_DEPTH: u32 = 24;

#[derive(Debug, Clone, PartialEq)]
pub struct CenteredTree {
    depth: u32,
    dim: usize,
    dirs: Vec<u16>,
    fallback_moves: u64,
}

/// Grows a complete centered tree of depth `k` in `[0,1]^p`.
///
/// Uniform trees draw every node's direction independently. Ehrenfest trees
/// run the particle model down each branch: a node applies one move to the
/// state it inherited and both children start from the result.
pub fn build_tree<R: Rng + ?Sized>(rule: &SplitRule, k: u32, dim: usize, rng: &mut R) -> Result<CenteredTree> {
    rule.validate(dim)?;
    if k > MAX_TREE_DEPTH {
        return Err(Error::Resource(format!("tree depth {k} exceeds {MAX_TREE_DEPTH}")));
    }
    if dim > u16::MAX as usize {
        return Err(Error::InvalidDimension(format!("p = {dim} is too large")));
    }
    let internal = (1usize << k) - 1;
    let mut dirs = Vec::with_capacity(internal);
    let mut fallback_moves = 0;
    match rule {
        SplitRule::Uniform => {
            dirs.extend((0..internal).map(|_| rng.random_range(0..dim) as u16));
        }
        SplitRule::Ehrenfest(cfg) => {
            let mut level = vec![EhrenfestState::new(cfg, dim)?];
            for _ in 0..k {
                let mut next = Vec::with_capacity(level.len() * 2);
                for mut state in level {
                    let before = state.fallback_moves();
                    dirs.push(state.step(cfg, rng) as u16);
                    fallback_moves += (state.fallback_moves() - before) as u64;
                    next.push(state.clone());
                    next.push(state);
                }
                level = next;
            }
        }
    }
    debug_assert_eq!(dirs.len(), internal);
    Ok(CenteredTree { depth: k, dim, dirs, fallback_moves })
}

impl CenteredTree {
    /// A tree with explicitly given level-order directions.
    pub fn from_directions(depth: u32, dim: usize, dirs: Vec<usize>) -> Result<Self> {
        if depth > MAX_TREE_DEPTH {
            return Err(Error::Resource(format!("tree depth {depth} exceeds {MAX_TREE_DEPTH}")));
        }
        if dim == 0 || dim > u16::MAX as usize {
            return Err(Error::InvalidDimension(format!("p = {dim}")));
        }
        if dirs.len() != (1usize << depth) - 1 {
            return Err(Error::Shape(format!(
                "depth {depth} needs {} directions, got {}",
                (1usize << depth) - 1,
                dirs.len()
            )));
        }
        if dirs.iter().any(|&d| d >= dim) {
            return Err(Error::Config(format!("direction out of range for p = {dim}")));
        }
        Ok(Self {
            depth,
            dim,
            dirs: dirs.into_iter().map(|d| d as u16).collect(),
            fallback_moves: 0,
        })
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_leaves(&self) -> usize {
        1 << self.depth
    }

    /// Split direction of internal node `node` (level order).
    pub fn direction(&self, node: usize) -> usize {
        self.dirs[node] as usize
    }

    /// Ehrenfest moves that fell back to the least-split container while growing.
    pub fn fallback_moves(&self) -> u64 {
        self.fallback_moves
    }

    /// Leaf reached by a point given its per-axis level-`depth` dyadic indices.
    #[inline]
    pub(crate) fn leaf_from_indices(&self, idx: &[u64], splits: &mut [u32]) -> usize {
        splits.fill(0);
        let mut node = 0usize;
        for _ in 0..self.depth {
            let d = self.dirs[node] as usize;
            splits[d] += 1;
            let bit = (idx[d] >> (self.depth - splits[d])) & 1;
            node = 2 * node + 1 + bit as usize;
        }
        node - (self.n_leaves() - 1)
    }

    pub fn leaf_of(&self, x: &[f64]) -> Result<usize> {
        self.check_point(x)?;
        let idx: Vec<u64> = x.iter().map(|&v| dyadic_index(v, self.depth)).collect();
        let mut splits = vec![0u32; self.dim];
        Ok(self.leaf_from_indices(&idx, &mut splits))
    }

    /// The leaf cell containing `x0` and its leaf index.
    pub fn locate_cell(&self, x0: &[f64]) -> Result<(DyadicCell, usize)> {
        let leaf = self.leaf_of(x0)?;
        let counts = self.branch_directions(leaf).counts();
        Ok((DyadicCell::new(x0.to_vec(), counts)?, leaf))
    }

    /// Split directions from the root down to `leaf`.
    pub fn branch_directions(&self, leaf: usize) -> SplitDirections {
        let mut node = leaf + self.n_leaves() - 1;
        let mut dirs = Vec::with_capacity(self.depth as usize);
        while node > 0 {
            node = (node - 1) / 2;
            dirs.push(self.dirs[node] as usize);
        }
        dirs.reverse();
        SplitDirections::new(dirs, self.dim).expect("tree directions are in range")
    }

    pub fn branch_counts(&self, leaf: usize) -> SplitCounts {
        self.branch_directions(leaf).counts()
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::Shape(format!("point of dimension {} for a tree in p = {}", x.len(), self.dim)));
        }
        check_unit_cube(x)
    }
}

/// Observations `(X_i, Y_i)` with covariates in the unit cube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    x: PointSet,
    y: Vec<f64>,
}

impl TrainingSample {
    pub fn new(x: PointSet, y: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::Shape(format!("{} covariate rows but {} responses", x.len(), y.len())));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::Config(format!("response {i} is not finite")));
        }
        Ok(Self { x, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.dim()
    }

    pub fn x(&self) -> &PointSet {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            x: self.x.permuted(order),
            y: order.iter().map(|&i| self.y[i]).collect(),
        }
    }
}

/// Prediction of one tree trained on the observations indexed by `subset`.
///
/// Averages the responses of subsampled points sharing `x0`'s leaf, and
/// returns 0 when that leaf holds none of them.
pub fn tree_predict(tree: &CenteredTree, sample: &TrainingSample, subset: &[usize], x0: &[f64]) -> Result<f64> {
    if sample.dim() != tree.dim() {
        return Err(Error::Shape("sample and tree dimensions differ".into()));
    }
    let target = tree.leaf_of(x0)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for &i in subset {
        if i >= sample.len() {
            return Err(Error::Shape(format!("subsample index {i} out of range")));
        }
        if tree.leaf_of(sample.x().row(i))? == target {
            sum += sample.y()[i];
            count += 1;
        }
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SubsampleMode {
    /// Exactly `N` subsets, each uniform over all size-`r_n` subsets.
    #[default]
    FixedN,
    /// A Poisson(`N`) number of such subsets.
    Poissonized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub rule: SplitRule,
    pub depth: u32,
    pub n_trees: usize,
    pub subsample_size: usize,
    #[serde(default)]
    pub mode: SubsampleMode,
    pub seed: u64,
}

impl ForestConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        self.rule.validate(dim)?;
        if self.n_trees == 0 {
            return Err(Error::Config("a forest needs at least one tree".into()));
        }
        if self.subsample_size == 0 {
            return Err(Error::Config("subsample size must be positive".into()));
        }
        if self.depth > MAX_TREE_DEPTH {
            return Err(Error::Resource(format!("tree depth {} exceeds {MAX_TREE_DEPTH}", self.depth)));
        }
        Ok(())
    }
}

/// RNG stream of tree `j` of a forest with master seed `seed`.
pub fn tree_rng(seed: u64, j: usize) -> StreamRng {
    stream(seed, &[label::TREE, j as u64])
}

#[derive(Debug, Clone)]
pub struct FittedTree {
    pub tree: CenteredTree,
    pub subsample: Vec<usize>,
    leaf_means: Vec<f64>,
}

impl FittedTree {
    /// Mean response per leaf; 0 for leaves without subsampled points.
    pub fn leaf_means(&self) -> &[f64] {
        &self.leaf_means
    }
}

#[derive(Debug, Clone)]
pub struct FittedForest {
    config: ForestConfig,
    n_samples: usize,
    dim: usize,
    trees: Vec<FittedTree>,
    forced_subsets: bool,
}

/// Level-`k` dyadic indices of every covariate row.
fn point_indices(x: &PointSet, k: u32) -> Vec<u64> {
    x.as_flat().iter().map(|&v| dyadic_index(v, k)).collect()
}

fn fit_one(
    tree: CenteredTree,
    subsample: Vec<usize>,
    indices: &[u64],
    sample: &TrainingSample,
) -> FittedTree {
    let p = sample.dim();
    let mut sums = vec![0.0; tree.n_leaves()];
    let mut counts = vec![0u32; tree.n_leaves()];
    let mut splits = vec![0u32; p];
    for &i in &subsample {
        let leaf = tree.leaf_from_indices(&indices[i * p..(i + 1) * p], &mut splits);
        sums[leaf] += sample.y()[i];
        counts[leaf] += 1;
    }
    let leaf_means = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
        .collect();
    FittedTree { tree, subsample, leaf_means }
}

/// Fits a forest on random size-`r_n` subsamples.
///
/// Tree `j` draws its subsample and then its partition from [`tree_rng`],
/// so the result depends only on the configuration and the sample.
pub fn fit_forest(config: &ForestConfig, sample: &TrainingSample) -> Result<FittedForest> {
    let p = sample.dim();
    config.validate(p)?;
    let n = sample.len();
    if config.subsample_size > n {
        return Err(Error::Config(format!(
            "subsample size {} exceeds sample size {n}",
            config.subsample_size
        )));
    }
    let n_trees = match config.mode {
        SubsampleMode::FixedN => config.n_trees,
        SubsampleMode::Poissonized => {
            let mut rng = stream(config.seed, &[label::POISSON]);
            let draw = Poisson::new(config.n_trees as f64)
                .map_err(|e| Error::Config(e.to_string()))?
                .sample(&mut rng);
            draw as usize
        }
    };
    if n_trees == 0 {
        return Err(Error::EmptyForest);
    }
    let indices = point_indices(sample.x(), config.depth);
    let trees = (0..n_trees)
        .into_par_iter()
        .map(|j| {
            let mut rng = tree_rng(config.seed, j);
            let mut subsample = index::sample(&mut rng, n, config.subsample_size).into_vec();
            subsample.sort_unstable();
            let tree = build_tree(&config.rule, config.depth, p, &mut rng)?;
            Ok(fit_one(tree, subsample, &indices, sample))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FittedForest {
        config: config.clone(),
        n_samples: n,
        dim: p,
        trees,
        forced_subsets: false,
    })
}

/// Fits one tree per given subset; tree `j` uses the stream [`tree_rng`]`(seed, j)`.
///
/// With every size-`r_n` subset supplied this is the complete U-statistic.
pub fn fit_forest_with_subsets(
    config: &ForestConfig,
    sample: &TrainingSample,
    subsets: Vec<Vec<usize>>,
) -> Result<FittedForest> {
    let p = sample.dim();
    config.validate(p)?;
    let n = sample.len();
    if subsets.is_empty() {
        return Err(Error::EmptyForest);
    }
    for s in &subsets {
        if s.len() != config.subsample_size {
            return Err(Error::Config(format!(
                "subset of size {} for subsample size {}",
                s.len(),
                config.subsample_size
            )));
        }
        let mut sorted = s.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != s.len() || sorted.last().is_some_and(|&i| i >= n) {
            return Err(Error::Config("subsets need distinct in-range indices".into()));
        }
    }
    let indices = point_indices(sample.x(), config.depth);
    let trees = subsets
        .into_par_iter()
        .enumerate()
        .map(|(j, subset)| {
            let mut rng = tree_rng(config.seed, j);
            let tree = build_tree(&config.rule, config.depth, p, &mut rng)?;
            Ok(fit_one(tree, subset, &indices, sample))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FittedForest {
        config: config.clone(),
        n_samples: n,
        dim: p,
        trees,
        forced_subsets: true,
    })
}

impl FittedForest {
    pub fn config(&self) -> &ForestConfig {
        &self.config
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn trees(&self) -> &[FittedTree] {
        &self.trees
    }

    pub fn fallback_moves(&self) -> u64 {
        self.trees.iter().map(|t| t.tree.fallback_moves()).sum()
    }

    fn predict_indices(&self, idx: &[u64], splits: &mut [u32]) -> f64 {
        let total: f64 = self
            .trees
            .iter()
            .map(|t| t.leaf_means[t.tree.leaf_from_indices(idx, splits)])
            .sum();
        total / self.trees.len() as f64
    }

    pub fn predict(&self, x0: &[f64]) -> Result<f64> {
        if x0.len() != self.dim {
            return Err(Error::Shape(format!("point of dimension {} for p = {}", x0.len(), self.dim)));
        }
        check_unit_cube(x0)?;
        let idx: Vec<u64> = x0.iter().map(|&v| dyadic_index(v, self.config.depth)).collect();
        let mut splits = vec![0u32; self.dim];
        Ok(self.predict_indices(&idx, &mut splits))
    }

    /// Predictions at every point of `points`, in order.
    pub fn predict_many(&self, points: &PointSet) -> Result<Vec<f64>> {
        if points.dim() != self.dim {
            return Err(Error::Shape(format!("points of dimension {} for p = {}", points.dim(), self.dim)));
        }
        let indices = point_indices(points, self.config.depth);
        let p = self.dim;
        Ok(indices
            .par_chunks(p * 64)
            .flat_map_iter(|block| {
                let mut splits = vec![0u32; p];
                block
                    .chunks_exact(p)
                    .map(|idx| self.predict_indices(idx, &mut splits))
                    .collect::<Vec<_>>()
            })
            .collect())
    }

    pub fn manifest(&self) -> ForestManifest {
        ForestManifest {
            format: MANIFEST_FORMAT.to_string(),
            version: MANIFEST_VERSION,
            config: self.config.clone(),
            n_samples: self.n_samples,
            dim: self.dim,
            n_trees_fitted: self.trees.len(),
            subsets: self
                .forced_subsets
                .then(|| self.trees.iter().map(|t| t.subsample.clone()).collect()),
        }
    }
}

pub const MANIFEST_FORMAT: &str = "cprf-forest";
pub const MANIFEST_VERSION: u32 = 1;

/// Everything needed to rebuild a fitted forest from its training sample.
///
/// Trees are not stored; they are regrown from the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestManifest {
    pub format: String,
    pub version: u32,
    pub config: ForestConfig,
    pub n_samples: usize,
    pub dim: usize,
    pub n_trees_fitted: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subsets: Option<Vec<Vec<usize>>>,
}

impl ForestManifest {
    pub fn rebuild(&self, sample: &TrainingSample) -> Result<FittedForest> {
        if self.format != MANIFEST_FORMAT || self.version != MANIFEST_VERSION {
            return Err(Error::Config(format!(
                "unsupported manifest {} v{}",
                self.format, self.version
            )));
        }
        if sample.len() != self.n_samples || sample.dim() != self.dim {
            return Err(Error::Shape(format!(
                "manifest expects {} points in p = {}, got {} in p = {}",
                self.n_samples,
                self.dim,
                sample.len(),
                sample.dim()
            )));
        }
        let forest = match &self.subsets {
            Some(subsets) => fit_forest_with_subsets(&self.config, sample, subsets.clone())?,
            None => fit_forest(&self.config, sample)?,
        };
        if forest.trees.len() != self.n_trees_fitted {
            return Err(Error::Config("rebuilt forest has a different tree count".into()));
        }
        Ok(forest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::EhrenfestConfig;

    fn sample_from(rows: &[[f64; 2]], y: &[f64]) -> TrainingSample {
        TrainingSample::new(PointSet::from_rows(rows).unwrap(), y.to_vec()).unwrap()
    }

    #[test]
    fn depth_zero_tree_is_one_cell() {
        let mut rng = stream(1, &[]);
        let tree = build_tree(&SplitRule::Uniform, 0, 3, &mut rng).unwrap();
        assert_eq!(tree.n_leaves(), 1);
        let (cell, leaf) = tree.locate_cell(&[0.2, 0.9, 1.0]).unwrap();
        assert_eq!(leaf, 0);
        assert_eq!(cell.volume(), 1.0);
    }

    #[test]
    fn one_dimensional_tree_gives_quarters() {
        let mut rng = stream(2, &[]);
        let tree = build_tree(&SplitRule::Uniform, 2, 1, &mut rng).unwrap();
        assert!((0..3).all(|i| tree.direction(i) == 0));
        for (x, leaf) in [(0.1, 0), (0.3, 1), (0.6, 2), (0.9, 3), (1.0, 3)] {
            let (cell, l) = tree.locate_cell(&[x]).unwrap();
            assert_eq!(l, leaf);
            assert_eq!(cell.lower(0), leaf as f64 * 0.25);
            assert_eq!(cell.upper(0), (leaf + 1) as f64 * 0.25);
        }
    }

    #[test]
    fn first_split_sends_lower_half_left() {
        let tree = CenteredTree::from_directions(1, 2, vec![0]).unwrap();
        let (cell, leaf) = tree.locate_cell(&[0.3, 0.8]).unwrap();
        assert_eq!(leaf, 0);
        assert_eq!((cell.lower(0), cell.upper(0)), (0.0, 0.5));
        assert_eq!((cell.lower(1), cell.upper(1)), (0.0, 1.0));
    }

    #[test]
    fn one_split_per_axis() {
        // Root splits axis 0; x0 = (0.2, 0.7) goes to node 1, which splits axis 1.
        let tree = CenteredTree::from_directions(2, 2, vec![0, 1, 0]).unwrap();
        let (cell, leaf) = tree.locate_cell(&[0.2, 0.7]).unwrap();
        assert_eq!(leaf, 1);
        assert_eq!(cell.axis_length(0), 0.5);
        assert_eq!(cell.axis_length(1), 0.5);
        assert_eq!(cell.volume(), 0.25);
        assert_eq!(tree.branch_directions(leaf).as_slice(), &[0, 1]);
    }

    #[test]
    fn locate_rejects_points_outside() {
        let tree = CenteredTree::from_directions(1, 1, vec![0]).unwrap();
        assert!(matches!(tree.locate_cell(&[-0.1]), Err(Error::Domain(_))));
    }

    #[test]
    fn ehrenfest_tree_branches_respect_bounds() {
        let cfg = EhrenfestConfig::new(1, 1.01);
        let mut rng = stream(3, &[]);
        let tree = build_tree(&SplitRule::Ehrenfest(cfg), 12, 2, &mut rng).unwrap();
        for leaf in 0..tree.n_leaves() {
            assert!(cfg.counts_within_bounds(&tree.branch_counts(leaf)));
        }
    }

    #[test]
    fn tree_predict_examples() {
        let tree = CenteredTree::from_directions(1, 2, vec![0]).unwrap();
        let s = sample_from(&[[0.1, 0.1], [0.2, 0.5], [0.3, 0.9], [0.8, 0.5]], &[1.0, 2.0, 6.0, 100.0]);
        assert_eq!(tree_predict(&tree, &s, &[0, 1, 2, 3], &[0.4, 0.4]).unwrap(), 3.0);
        assert_eq!(tree_predict(&tree, &s, &[0, 1, 2], &[0.9, 0.4]).unwrap(), 0.0);
        let c = sample_from(&[[0.1, 0.1], [0.2, 0.5]], &[4.0, 4.0]);
        assert_eq!(tree_predict(&tree, &c, &[0, 1], &[0.3, 0.3]).unwrap(), 4.0);
    }

    #[test]
    fn fit_rejects_oversized_subsample() {
        let s = sample_from(&[[0.1, 0.1], [0.2, 0.5]], &[1.0, 2.0]);
        let cfg = ForestConfig {
            rule: SplitRule::Uniform,
            depth: 2,
            n_trees: 3,
            subsample_size: 3,
            mode: SubsampleMode::FixedN,
            seed: 1,
        };
        assert!(matches!(fit_forest(&cfg, &s), Err(Error::Config(_))));
    }

    #[test]
    fn single_tree_forest_matches_tree_predict() {
        let rows: Vec<[f64; 2]> = (0..40).map(|i| [(i as f64 * 0.37) % 1.0, (i as f64 * 0.61) % 1.0]).collect();
        let y: Vec<f64> = (0..40).map(|i| (i as f64).sin()).collect();
        let s = sample_from(&rows, &y);
        let cfg = ForestConfig {
            rule: SplitRule::Uniform,
            depth: 3,
            n_trees: 1,
            subsample_size: 25,
            mode: SubsampleMode::FixedN,
            seed: 9,
        };
        let forest = fit_forest(&cfg, &s).unwrap();
        let t = &forest.trees()[0];
        for x0 in [[0.1, 0.2], [0.5, 0.5], [0.9, 0.3]] {
            let direct = tree_predict(&t.tree, &s, &t.subsample, &x0).unwrap();
            assert_eq!(forest.predict(&x0).unwrap(), direct);
        }
    }

    #[test]
    fn poissonized_forest_draws_a_tree_count() {
        let rows: Vec<[f64; 2]> = (0..20).map(|i| [i as f64 / 20.0, 0.5]).collect();
        let s = sample_from(&rows, &vec![1.0; 20]);
        let cfg = ForestConfig {
            rule: SplitRule::Uniform,
            depth: 2,
            n_trees: 30,
            subsample_size: 10,
            mode: SubsampleMode::Poissonized,
            seed: 5,
        };
        let forest = fit_forest(&cfg, &s).unwrap();
        assert!(forest.trees().len() > 5);
        let again = fit_forest(&cfg, &s).unwrap();
        assert_eq!(forest.trees().len(), again.trees().len());
    }

    #[test]
    fn manifest_rebuilds_identical_forest() {
        let rows: Vec<[f64; 2]> = (0..30).map(|i| [(i as f64 * 0.13) % 1.0, (i as f64 * 0.29) % 1.0]).collect();
        let y: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let s = sample_from(&rows, &y);
        let cfg = ForestConfig {
            rule: SplitRule::Ehrenfest(EhrenfestConfig::new(12, 7.0)),
            depth: 3,
            n_trees: 7,
            subsample_size: 20,
            mode: SubsampleMode::FixedN,
            seed: 11,
        };
        let forest = fit_forest(&cfg, &s).unwrap();
        let json = serde_json::to_string(&forest.manifest()).unwrap();
        let manifest: ForestManifest = serde_json::from_str(&json).unwrap();
        let rebuilt = manifest.rebuild(&s).unwrap();
        for x0 in [[0.05, 0.95], [0.5, 0.5]] {
            assert_eq!(forest.predict(&x0).unwrap(), rebuilt.predict(&x0).unwrap());
        }
    }
}
