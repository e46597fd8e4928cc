//! Split-direction samplers and dyadic cell geometry.
//!
//! A centered tree splits every cell at its midpoint, so a leaf is fully
//! described by how many times each axis was cut on the way down. Axis `l`
//! of a leaf reached with `S_l` cuts is one of the dyadic intervals
//! `[a 2^-S_l, (a+1) 2^-S_l)`; the last interval on each axis is closed so
//! that `1.0` belongs to it. All geometry below works on those integer
//! indices, which keeps membership tests exact.
//!
//! Directions are 0-based (`0..p`) throughout the crate.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::points::check_unit_cube;

/// Deepest dyadic level supported by the integer cell indexing.
pub const MAX_LEVEL: u32 = 62;

/// Index of the level-`level` dyadic interval containing `x`.
///
/// `floor(x 2^level)`, clamped so that `x == 1.0` falls in the last interval.
#[inline]
pub fn dyadic_index(x: f64, level: u32) -> u64 {
    debug_assert!(level <= MAX_LEVEL);
    let cells = 1u64 << level;
    let idx = (x * cells as f64).floor() as u64;
    idx.min(cells - 1)
}

/// The direction chosen at each of the `k` splits along one branch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitDirections {
    dirs: Vec<usize>,
    dim: usize,
}

impl SplitDirections {
    pub fn new(dirs: Vec<usize>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidDimension("p must be at least 1".into()));
        }
        if let Some(&bad) = dirs.iter().find(|&&d| d >= dim) {
            return Err(Error::Config(format!("direction {bad} out of range for p = {dim}")));
        }
        Ok(Self { dirs, dim })
    }

    pub fn depth(&self) -> u32 {
        self.dirs.len() as u32
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.dirs
    }

    /// Per-direction tallies after the first `t` splits.
    pub fn prefix_counts(&self, t: usize) -> SplitCounts {
        let mut counts = vec![0u32; self.dim];
        for &d in &self.dirs[..t] {
            counts[d] += 1;
        }
        SplitCounts { counts }
    }

    pub fn counts(&self) -> SplitCounts {
        self.prefix_counts(self.dirs.len())
    }
}

/// Number of splits per direction along one branch; sums to the depth.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SplitCounts {
    counts: Vec<u32>,
}

impl SplitCounts {
    pub fn new(counts: Vec<u32>) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::InvalidDimension("p must be at least 1".into()));
        }
        if counts.iter().any(|&c| c > MAX_LEVEL) {
            return Err(Error::Config(format!("split counts above {MAX_LEVEL} are not supported")));
        }
        Ok(Self { counts })
    }

    pub fn depth(&self) -> u32 {
        self.counts.iter().sum()
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn get(&self, l: usize) -> u32 {
        self.counts[l]
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.counts
    }
}

/// Euclidean diameter of a cell with the given split counts.
pub fn cell_diameter(s: &SplitCounts) -> f64 {
    s.counts
        .iter()
        .map(|&c| (-2.0 * c as f64).exp2())
        .sum::<f64>()
        .sqrt()
}

/// Parameters of the particle (Ehrenfest) split sampler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EhrenfestConfig {
    /// Particles initially placed in each container (`B`).
    pub particles: u32,
    /// Slack of the split threshold (`Δ`); must exceed `B / p`.
    pub slack: f64,
}

impl EhrenfestConfig {
    pub fn new(particles: u32, slack: f64) -> Self {
        Self { particles, slack }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if dim == 0 {
            return Err(Error::InvalidDimension("p must be at least 1".into()));
        }
        if self.particles == 0 {
            return Err(Error::Config("Ehrenfest sampler needs B >= 1 particles".into()));
        }
        let min_slack = self.particles as f64 / dim as f64;
        if !self.slack.is_finite() || self.slack <= min_slack {
            return Err(Error::Config(format!(
                "Ehrenfest slack {} must exceed B/p = {min_slack}",
                self.slack
            )));
        }
        Ok(())
    }

    /// Upper deviation bound `Δ + pB` of the split counts above `k/p`.
    pub fn upper_slack(&self, dim: usize) -> f64 {
        self.slack + (dim as u64 * self.particles as u64) as f64
    }

    /// Lower deviation bound `(p-1)(Δ + pB)` of the split counts below `k/p`.
    pub fn lower_slack(&self, dim: usize) -> f64 {
        (dim as f64 - 1.0) * self.upper_slack(dim)
    }

    /// Whether `counts` respects both deviation bounds around `k/p`.
    pub fn counts_within_bounds(&self, counts: &SplitCounts) -> bool {
        let p = counts.dim();
        let center = counts.depth() as f64 / p as f64;
        let hi = center + self.upper_slack(p);
        let lo = center - self.lower_slack(p);
        counts.as_slice().iter().all(|&c| {
            let c = c as f64;
            c >= lo && c <= hi
        })
    }
}

/// Particle state of the Ehrenfest sampler along one branch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EhrenfestState {
    containers: Vec<u32>,
    counts: Vec<u32>,
    steps: u32,
    fallback_moves: u32,
}

impl EhrenfestState {
    pub fn new(cfg: &EhrenfestConfig, dim: usize) -> Result<Self> {
        cfg.validate(dim)?;
        Ok(Self {
            containers: vec![cfg.particles; dim],
            counts: vec![0; dim],
            steps: 0,
            fallback_moves: 0,
        })
    }

    pub fn containers(&self) -> &[u32] {
        &self.containers
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn steps(&self) -> u32 {
        self.steps
    }

    /// Moves that found no eligible destination and used the fallback rule.
    pub fn fallback_moves(&self) -> u32 {
        self.fallback_moves
    }

    /// Draws the next split direction and moves the selected particle.
    pub fn step<R: Rng + ?Sized>(&mut self, cfg: &EhrenfestConfig, rng: &mut R) -> usize {
        let p = self.containers.len();
        let total: u32 = self.containers.iter().sum();
        let mut ticket = rng.random_range(0..total);
        let mut source = 0;
        for (l, &b) in self.containers.iter().enumerate() {
            if ticket < b {
                source = l;
                break;
            }
            ticket -= b;
        }

        if p > 1 {
            // Threshold p*S_j < t + p*Δ on the counts before this split.
            let threshold = self.steps as f64 + p as f64 * cfg.slack;
            let eligible = (0..p)
                .filter(|&j| j != source && ((p as u64 * self.counts[j] as u64) as f64) < threshold)
                .count();
            let dest = if eligible > 0 {
                let pick = rng.random_range(0..eligible);
                (0..p)
                    .filter(|&j| {
                        j != source && ((p as u64 * self.counts[j] as u64) as f64) < threshold
                    })
                    .nth(pick)
                    .expect("pick is below the eligible count")
            } else {
                self.fallback_moves += 1;
                (0..p)
                    .filter(|&j| j != source)
                    .min_by_key(|&j| (self.counts[j], j))
                    .expect("p > 1 leaves another container")
            };
            self.containers[source] -= 1;
            self.containers[dest] += 1;
        }

        self.counts[source] += 1;
        self.steps += 1;
        source
    }
}

/// Distribution of the split directions of a centered purely random tree.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SplitRule {
    /// Every split picks a direction uniformly at random.
    Uniform,
    /// Directions follow the particle model with the given parameters.
    Ehrenfest(EhrenfestConfig),
}

impl SplitRule {
    pub fn name(&self) -> &'static str {
        match self {
            SplitRule::Uniform => "uniform",
            SplitRule::Ehrenfest(_) => "ehrenfest",
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if dim == 0 {
            return Err(Error::InvalidDimension("p must be at least 1".into()));
        }
        match self {
            SplitRule::Uniform => Ok(()),
            SplitRule::Ehrenfest(cfg) => cfg.validate(dim),
        }
    }

    /// Split directions of one branch of depth `k`.
    pub fn sample_directions<R: Rng + ?Sized>(
        &self,
        k: u32,
        dim: usize,
        rng: &mut R,
    ) -> Result<SplitDirections> {
        match self {
            SplitRule::Uniform => sample_uniform_splits(k, dim, rng),
            SplitRule::Ehrenfest(cfg) => Ok(sample_ehrenfest_splits(k, dim, cfg, rng)?.directions),
        }
    }

    /// Split counts of one branch of depth `k`.
    pub fn sample_counts<R: Rng + ?Sized>(&self, k: u32, dim: usize, rng: &mut R) -> Result<SplitCounts> {
        Ok(self.sample_directions(k, dim, rng)?.counts())
    }
}

pub fn sample_uniform_splits<R: Rng + ?Sized>(k: u32, dim: usize, rng: &mut R) -> Result<SplitDirections> {
    if dim == 0 {
        return Err(Error::InvalidDimension("p must be at least 1".into()));
    }
    let dirs = (0..k).map(|_| rng.random_range(0..dim)).collect();
    Ok(SplitDirections { dirs, dim })
}

/// Output of [`sample_ehrenfest_splits`].
#[derive(Debug, Clone)]
pub struct EhrenfestSample {
    pub directions: SplitDirections,
    /// Steps where no container was eligible and the fallback move was used.
    pub fallback_moves: u32,
}

pub fn sample_ehrenfest_splits<R: Rng + ?Sized>(
    k: u32,
    dim: usize,
    cfg: &EhrenfestConfig,
    rng: &mut R,
) -> Result<EhrenfestSample> {
    let mut state = EhrenfestState::new(cfg, dim)?;
    let dirs = (0..k).map(|_| state.step(cfg, rng)).collect();
    Ok(EhrenfestSample {
        directions: SplitDirections { dirs, dim },
        fallback_moves: state.fallback_moves(),
    })
}

/// A leaf cell: the dyadic box with the given split counts containing `anchor`.
#[derive(Debug, Clone, PartialEq)]
pub struct DyadicCell {
    anchor: Vec<f64>,
    counts: SplitCounts,
}

impl DyadicCell {
    pub fn new(anchor: Vec<f64>, counts: SplitCounts) -> Result<Self> {
        if anchor.len() != counts.dim() {
            return Err(Error::Shape(format!(
                "anchor has {} coordinates, counts have {}",
                anchor.len(),
                counts.dim()
            )));
        }
        check_unit_cube(&anchor)?;
        Ok(Self { anchor, counts })
    }

    pub fn anchor(&self) -> &[f64] {
        &self.anchor
    }

    pub fn counts(&self) -> &SplitCounts {
        &self.counts
    }

    pub fn axis_index(&self, l: usize) -> u64 {
        dyadic_index(self.anchor[l], self.counts.get(l))
    }

    pub fn axis_length(&self, l: usize) -> f64 {
        (-(self.counts.get(l) as f64)).exp2()
    }

    pub fn lower(&self, l: usize) -> f64 {
        self.axis_index(l) as f64 * self.axis_length(l)
    }

    pub fn upper(&self, l: usize) -> f64 {
        (self.axis_index(l) + 1) as f64 * self.axis_length(l)
    }

    pub fn volume(&self) -> f64 {
        (-(self.counts.depth() as f64)).exp2()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.anchor.len()
            && x.iter().all(|v| (0.0..=1.0).contains(v))
            && (0..x.len()).all(|l| dyadic_index(x[l], self.counts.get(l)) == self.axis_index(l))
    }
}

/// Per-axis deepest level (capped at `k`) at which two points share a dyadic interval.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ClosenessVector {
    levels: Vec<u32>,
}

impl ClosenessVector {
    pub fn as_slice(&self) -> &[u32] {
        &self.levels
    }

    /// The nondecreasing rearrangement, which indexes the covariance table.
    pub fn sorted(&self) -> Vec<u32> {
        let mut v = self.levels.clone();
        v.sort_unstable();
        v
    }
}

/// Deepest common dyadic level of two coordinates, capped at `k`.
#[inline]
pub fn axis_closeness(a: f64, b: f64, k: u32) -> u32 {
    // Dyadic intervals are nested, so the shared levels form a prefix 0..=c.
    let mut c = 0;
    while c < k && dyadic_index(a, c + 1) == dyadic_index(b, c + 1) {
        c += 1;
    }
    c
}

pub fn closeness_vector(x1: &[f64], x2: &[f64], k: u32) -> Result<ClosenessVector> {
    if x1.len() != x2.len() {
        return Err(Error::Shape(format!("points of dimension {} and {}", x1.len(), x2.len())));
    }
    if k > MAX_LEVEL {
        return Err(Error::Config(format!("depth {k} exceeds {MAX_LEVEL}")));
    }
    check_unit_cube(x1)?;
    check_unit_cube(x2)?;
    let levels = x1.iter().zip(x2).map(|(&a, &b)| axis_closeness(a, b, k)).collect();
    Ok(ClosenessVector { levels })
}

/// Lebesgue volume of the intersection of the cells `(x1, s1)` and `(x2, s2)`.
pub fn intersection_volume(x1: &[f64], s1: &SplitCounts, x2: &[f64], s2: &SplitCounts) -> Result<f64> {
    let p = s1.dim();
    if s2.dim() != p || x1.len() != p || x2.len() != p {
        return Err(Error::Shape("points and split counts must share one dimension".into()));
    }
    if s1.depth() != s2.depth() {
        return Err(Error::Shape(format!(
            "split counts of depth {} and {}",
            s1.depth(),
            s2.depth()
        )));
    }
    check_unit_cube(x1)?;
    check_unit_cube(x2)?;
    let mut finest = 0u32;
    for l in 0..p {
        let (a, b) = (s1.get(l), s2.get(l));
        let coarse = a.min(b);
        if dyadic_index(x1[l], coarse) != dyadic_index(x2[l], coarse) {
            return Ok(0.0);
        }
        finest += a.max(b);
    }
    Ok((-(finest as f64)).exp2())
}

/// `C(n, r)` computed exactly; `None` on overflow.
pub fn binomial(n: u64, r: u64) -> Option<u64> {
    if r > n {
        return Some(0);
    }
    let r = r.min(n - r);
    let mut acc: u128 = 1;
    for i in 0..r {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return None;
        }
    }
    Some(acc as u64)
}

/// All nondecreasing vectors in `{0..=k}^p`, in lexicographic order.
///
/// The position of a vector in this list is its table index; [`OmegaS::index_of`]
/// computes it directly by combinatorial ranking.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OmegaS {
    k: u32,
    dim: usize,
    flat: Vec<u32>,
}

impl OmegaS {
    pub fn enumerate(k: u32, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidDimension("p must be at least 1".into()));
        }
        let size = binomial(k as u64 + dim as u64, dim as u64)
            .filter(|&s| s <= 1 << 26)
            .ok_or_else(|| Error::Resource(format!("closeness set for k={k}, p={dim} is too large")))?;
        let mut flat = Vec::with_capacity(size as usize * dim);
        let mut current = vec![0u32; dim];
        loop {
            flat.extend_from_slice(&current);
            // Advance to the lexicographic successor among nondecreasing vectors.
            let Some(pos) = (0..dim).rev().find(|&i| current[i] < k) else {
                break;
            };
            let v = current[pos] + 1;
            for c in &mut current[pos..] {
                *c = v;
            }
        }
        debug_assert_eq!(flat.len(), size as usize * dim);
        Ok(Self { k, dim, flat })
    }

    pub fn depth(&self) -> u32 {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.flat.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    pub fn vector(&self, index: usize) -> &[u32] {
        &self.flat[index * self.dim..(index + 1) * self.dim]
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[u32]> + '_ {
        self.flat.chunks_exact(self.dim)
    }

    /// Index of the top vector `(k, ..., k)`.
    pub fn top_index(&self) -> usize {
        self.len() - 1
    }

    /// Position of a nondecreasing vector in the enumeration.
    pub fn index_of(&self, c: &[u32]) -> Option<usize> {
        if c.len() != self.dim || c.windows(2).any(|w| w[0] > w[1]) || c.iter().any(|&v| v > self.k) {
            return None;
        }
        // Count vectors that are lexicographically smaller: at position i,
        // every value v in [c[i-1], c[i]) leaves dim-i-1 free nondecreasing
        // entries in {v..=k}.
        let k = self.k as u64;
        let mut rank = 0u64;
        let mut prev = 0u64;
        for (i, &ci) in c.iter().enumerate() {
            let rest = (self.dim - i - 1) as u64;
            for v in prev..ci as u64 {
                rank += binomial(k - v + rest, rest)?;
            }
            prev = ci as u64;
        }
        Some(rank as usize)
    }
}
