use std::collections::HashMap;

use cprf::forest::build_tree;
use cprf::partition::{
    axis_closeness, binomial, closeness_vector, intersection_volume, sample_ehrenfest_splits, DyadicCell,
    EhrenfestConfig, OmegaS, SplitCounts, SplitRule,
};
use cprf::rng::stream;
use proptest::prelude::*;
use rand::Rng;

/// Bounds of the cell around `x` with `s` halvings, from first principles.
fn interval(x: f64, s: u32) -> (f64, f64) {
    let width = 1.0 / (1u64 << s) as f64;
    let mut lo = 0.0;
    while lo + width <= x && lo + width < 1.0 {
        lo += width;
    }
    (lo, lo + width)
}

fn oracle_volume(x1: &[f64], s1: &[u32], x2: &[f64], s2: &[u32]) -> f64 {
    x1.iter()
        .zip(x2)
        .zip(s1.iter().zip(s2))
        .map(|((&a, &b), (&sa, &sb))| {
            let (l1, u1) = interval(a, sa);
            let (l2, u2) = interval(b, sb);
            (u1.min(u2) - l1.max(l2)).max(0.0)
        })
        .product()
}

fn random_counts<R: Rng>(k: u32, p: usize, rng: &mut R) -> SplitCounts {
    let mut c = vec![0u32; p];
    for _ in 0..k {
        c[rng.random_range(0..p)] += 1;
    }
    SplitCounts::new(c).unwrap()
}

#[test]
fn intersection_volume_matches_interval_oracle() {
    let mut rng = stream(11, &[1]);
    for _ in 0..5000 {
        let p = rng.random_range(1..=4);
        let k = rng.random_range(0..=8);
        let x1: Vec<f64> = (0..p).map(|_| rng.random()).collect();
        // Half the cases share a coarse cell so the volume is nonzero.
        let x2: Vec<f64> = if rng.random_bool(0.5) {
            x1.iter().map(|&v| (v + rng.random_range(-0.05..0.05f64)).clamp(0.0, 1.0)).collect()
        } else {
            (0..p).map(|_| rng.random()).collect()
        };
        let s1 = random_counts(k, p, &mut rng);
        let s2 = random_counts(k, p, &mut rng);
        let got = intersection_volume(&x1, &s1, &x2, &s2).unwrap();
        let want = oracle_volume(&x1, s1.as_slice(), &x2, s2.as_slice());
        assert!((got - want).abs() <= 1e-12, "{x1:?} {s1:?} {x2:?} {s2:?}: {got} vs {want}");
    }
}

#[test]
fn cells_match_interval_oracle() {
    let mut rng = stream(12, &[1]);
    for _ in 0..2000 {
        let p = rng.random_range(1..=3);
        let x: Vec<f64> = (0..p).map(|_| rng.random()).collect();
        let s = random_counts(rng.random_range(0..=10), p, &mut rng);
        let cell = DyadicCell::new(x.clone(), s.clone()).unwrap();
        for l in 0..p {
            let (lo, hi) = interval(x[l], s.get(l));
            assert_eq!((cell.lower(l), cell.upper(l)), (lo, hi));
        }
        assert!(cell.contains(&x));
    }
}

#[test]
fn omega_size_is_binomial() {
    for k in 0..=7 {
        for p in 1..=4 {
            let omega = OmegaS::enumerate(k, p).unwrap();
            assert_eq!(omega.len() as u64, binomial(k as u64 + p as u64, p as u64).unwrap());
        }
    }
}

/// Upper 0.999 quantile of a chi-square with `df` degrees of freedom (Wilson-Hilferty).
fn chi2_crit(df: f64) -> f64 {
    let z = 3.0902;
    let a = 2.0 / (9.0 * df);
    df * (1.0 - a + z * a.sqrt()).powi(3)
}

fn multinomial_pmf(counts: &[u32]) -> f64 {
    let k: u32 = counts.iter().sum();
    let p = counts.len() as f64;
    let mut log = (1..=k).map(|i| (i as f64).ln()).sum::<f64>();
    for &c in counts {
        log -= (1..=c).map(|i| (i as f64).ln()).sum::<f64>();
    }
    (log - k as f64 * p.ln()).exp()
}

fn chi2_against_multinomial(observed: &HashMap<Vec<u32>, u64>, k: u32, p: usize, total: u64) -> (f64, f64) {
    let omega_all: Vec<Vec<u32>> = {
        // All compositions of k into p parts.
        let mut out = Vec::new();
        let mut cur = vec![0u32; p];
        fn rec(l: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
            if l + 1 == cur.len() {
                cur[l] = left;
                out.push(cur.clone());
                return;
            }
            for v in 0..=left {
                cur[l] = v;
                rec(l + 1, left - v, cur, out);
            }
        }
        rec(0, k, &mut cur, &mut out);
        out
    };
    let mut stat = 0.0;
    for c in &omega_all {
        let expected = multinomial_pmf(c) * total as f64;
        let obs = *observed.get(c).unwrap_or(&0) as f64;
        stat += (obs - expected).powi(2) / expected;
    }
    (stat, chi2_crit(omega_all.len() as f64 - 1.0))
}

#[test]
fn uniform_split_counts_are_multinomial() {
    let (k, p, total) = (6, 3, 40_000u64);
    let mut rng = stream(13, &[1]);
    let mut seen = HashMap::new();
    for _ in 0..total {
        let s = SplitRule::Uniform.sample_counts(k, p, &mut rng).unwrap();
        *seen.entry(s.as_slice().to_vec()).or_insert(0) += 1;
    }
    let (stat, crit) = chi2_against_multinomial(&seen, k, p, total);
    assert!(stat < crit, "chi-square {stat} above {crit}");
}

#[test]
fn tree_branches_are_multinomial() {
    let (k, p, total) = (5u32, 2usize, 20_000u64);
    let mut rng = stream(14, &[1]);
    let mut seen = HashMap::new();
    for i in 0..total {
        let tree = build_tree(&SplitRule::Uniform, k, p, &mut rng).unwrap();
        let leaf = (i as usize * 7) % tree.n_leaves();
        *seen.entry(tree.branch_counts(leaf).as_slice().to_vec()).or_insert(0) += 1;
    }
    let (stat, crit) = chi2_against_multinomial(&seen, k, p, total);
    assert!(stat < crit, "chi-square {stat} above {crit}");
}

#[test]
fn ehrenfest_counts_respect_bounds() {
    for (p, b, delta, k) in [(2usize, 12u32, 7.0, 5u32), (2, 12, 7.0, 40), (4, 12, 7.0, 40), (2, 1, 1.01, 20)] {
        let cfg = EhrenfestConfig::new(b, delta);
        let mut rng = stream(15, &[p as u64, k as u64]);
        for _ in 0..5000 {
            let s = sample_ehrenfest_splits(k, p, &cfg, &mut rng).unwrap();
            let counts = s.directions.counts();
            assert_eq!(counts.depth(), k);
            assert!(cfg.counts_within_bounds(&counts), "{counts:?}");
        }
    }
}

#[test]
fn small_particle_bound_is_tight() {
    // B = 1, Δ = 1.01, p = 2: every count stays within 3.01 of k/2.
    let cfg = EhrenfestConfig::new(1, 1.01);
    let mut rng = stream(16, &[1]);
    for _ in 0..20_000 {
        let c = sample_ehrenfest_splits(20, 2, &cfg, &mut rng).unwrap().directions.counts();
        assert!(c.as_slice().iter().all(|&v| (v as f64 - 10.0).abs() <= 3.01), "{c:?}");
    }
}

proptest! {
    #[test]
    fn intersection_is_symmetric_and_bounded(
        x1 in prop::collection::vec(0.0..=1.0f64, 3),
        x2 in prop::collection::vec(0.0..=1.0f64, 3),
        d1 in prop::collection::vec(0usize..3, 6),
        d2 in prop::collection::vec(0usize..3, 6),
    ) {
        let counts = |d: &[usize]| {
            let mut c = vec![0u32; 3];
            for &l in d { c[l] += 1; }
            SplitCounts::new(c).unwrap()
        };
        let (s1, s2) = (counts(&d1), counts(&d2));
        let a = intersection_volume(&x1, &s1, &x2, &s2).unwrap();
        let b = intersection_volume(&x2, &s2, &x1, &s1).unwrap();
        prop_assert_eq!(a, b);
        prop_assert!(a >= 0.0);
        prop_assert!(a <= (-6.0f64).exp2());
        let self_vol = intersection_volume(&x1, &s1, &x1, &s1).unwrap();
        prop_assert_eq!(self_vol, (-6.0f64).exp2());
    }

    #[test]
    fn closeness_is_symmetric_and_capped(
        x1 in prop::collection::vec(0.0..=1.0f64, 4),
        x2 in prop::collection::vec(0.0..=1.0f64, 4),
        k in 0u32..12,
    ) {
        let a = closeness_vector(&x1, &x2, k).unwrap();
        let b = closeness_vector(&x2, &x1, k).unwrap();
        prop_assert_eq!(a.as_slice(), b.as_slice());
        prop_assert!(a.as_slice().iter().all(|&c| c <= k));
        prop_assert!(closeness_vector(&x1, &x1, k).unwrap().as_slice().iter().all(|&c| c == k));
        for (l, &c) in a.as_slice().iter().enumerate() {
            prop_assert_eq!(c, axis_closeness(x1[l], x2[l], k));
        }
    }

    #[test]
    fn tau_is_a_bijection(k in 0u32..7, p in 1usize..5) {
        let omega = OmegaS::enumerate(k, p).unwrap();
        for (i, c) in omega.iter().enumerate() {
            prop_assert_eq!(omega.index_of(c), Some(i));
            prop_assert!(c.windows(2).all(|w| w[0] <= w[1]));
        }
        let top = vec![k; p];
        prop_assert_eq!(omega.vector(omega.top_index()), top.as_slice());
    }

    #[test]
    fn cell_contains_its_anchor(
        x in prop::collection::vec(0.0..=1.0f64, 2),
        a in 0u32..10,
        b in 0u32..10,
    ) {
        let cell = DyadicCell::new(x.clone(), SplitCounts::new(vec![a, b]).unwrap()).unwrap();
        prop_assert!(cell.contains(&x));
        prop_assert_eq!(cell.volume(), (-((a + b) as f64)).exp2());
    }
}
