//! Named MDP, policy and feature generators.
//!
//! Feature generators make rank deficiency explicit: duplicated columns,
//! zero padding and low-rank random products.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::instance::Instance;
use crate::linalg::{svd, FeatureMap};
use crate::markov::{Mdp, Policy};

fn require_positive(name: &str, n: usize) -> Result<()> {
    if n == 0 {
        Err(Error::InvalidParameter(format!("{name} must be positive")))
    } else {
        Ok(())
    }
}

/// Deterministic cycle `s → s + 1 mod n`, one action, `r(s) = (-1)^s`.
pub fn cycle(n: usize, discount: f64) -> Result<Mdp> {
    require_positive("cycle length", n)?;
    let p = DMatrix::from_fn(n, n, |s, t| if t == (s + 1) % n { 1.0 } else { 0.0 });
    let r = DMatrix::from_fn(n, 1, |s, _| if s % 2 == 0 { 1.0 } else { -1.0 });
    Mdp::new(vec![p], r, discount)
}

/// Continuing random walk on `n` states with actions left (0) and right (1).
///
/// Stepping off either end returns the walk to the centre state `n / 2`;
/// leaving through the right end pays reward 1, everything else pays 0.
pub fn random_walk(n: usize, discount: f64) -> Result<Mdp> {
    require_positive("random walk length", n)?;
    let centre = n / 2;
    let left = DMatrix::from_fn(n, n, |s, t| {
        let dest = if s == 0 { centre } else { s - 1 };
        if t == dest {
            1.0
        } else {
            0.0
        }
    });
    let right = DMatrix::from_fn(n, n, |s, t| {
        let dest = if s + 1 == n { centre } else { s + 1 };
        if t == dest {
            1.0
        } else {
            0.0
        }
    });
    let reward = DMatrix::from_fn(n, 2, |s, a| if a == 1 && s + 1 == n { 1.0 } else { 0.0 });
    Mdp::new(vec![left, right], reward, discount)
}

/// Random MDP with sparse rows. Every action keeps a small edge
/// `s → s + 1 mod n`, so any policy induces an irreducible chain.
/// Rewards are uniform on `[-1, 1]`.
pub fn random_mdp(n: usize, n_actions: usize, seed: u64, discount: f64) -> Result<Mdp> {
    require_positive("state count", n)?;
    require_positive("action count", n_actions)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let transition = (0..n_actions)
        .map(|_| {
            let mut p = DMatrix::from_fn(n, n, |_, _| {
                if rng.random::<f64>() < 0.4 {
                    0.0
                } else {
                    rng.random::<f64>()
                }
            });
            for s in 0..n {
                p[(s, (s + 1) % n)] += 0.1;
                let total = p.row(s).sum();
                p.row_mut(s).unscale_mut(total);
            }
            p
        })
        .collect();
    let reward = DMatrix::from_fn(n, n_actions, |_, _| rng.random_range(-1.0..1.0));
    Mdp::new(transition, reward, discount)
}

/// Random policy with every action probability at least `0.05 / |A|`.
pub fn random_policy(n_states: usize, n_actions: usize, seed: u64) -> Result<Policy> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probs = DMatrix::from_fn(n_states, n_actions, |_, _| 0.05 + rng.random::<f64>());
    for s in 0..n_states {
        let total = probs.row(s).sum();
        probs.row_mut(s).unscale_mut(total);
    }
    Policy::new(probs)
}

pub fn tabular(n_states: usize) -> DMatrix<f64> {
    DMatrix::identity(n_states, n_states)
}

/// `[B | B | ... | B]` with `k` extra copies of `base`.
pub fn duplicate_columns(base: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let (n, d) = base.shape();
    DMatrix::from_fn(n, d * (k + 1), |i, j| base[(i, j % d)])
}

/// `base` followed by `k` zero columns.
pub fn zero_pad(base: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    base.clone().resize_horizontally(base.ncols() + k, 0.0)
}

/// `L R` with standard-normal `L` (`n×r`) and `R` (`r×d`): rank `min(n, r, d)`
/// almost surely.
pub fn random_rank(n_states: usize, rank: usize, d: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let left = DMatrix::from_fn(n_states, rank, |_, _| rng.sample::<f64, _>(StandardNormal));
    let right = DMatrix::from_fn(rank, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    left * right
}

/// Nonzero singular values of generated instance features stay within this
/// ratio of the largest one.
pub const MIN_FEATURE_CONDITION: f64 = 1e-2;

/// [`random_rank`] redrawn until `σ_r / σ_1 ≥ MIN_FEATURE_CONDITION`.
fn conditioned_rank(rng: &mut ChaCha8Rng, n: usize, r: usize, d: usize) -> DMatrix<f64> {
    loop {
        let x = random_rank(n, r, d, rng.random());
        let sigma = svd(&x).sigma;
        if sigma[r - 1] >= MIN_FEATURE_CONDITION * sigma[0] {
            return x;
        }
    }
}

/// Feature families used by [`random_instance`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    Tabular,
    Duplicated,
    RandomRank,
    Zero,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 4] = [
        FeatureKind::Tabular,
        FeatureKind::Duplicated,
        FeatureKind::RandomRank,
        FeatureKind::Zero,
    ];
}

pub const DISCOUNTS: [f64; 3] = [0.5, 0.9, 0.99];

/// A random instance with `|S| ∈ [2, 8]`, `|A| ∈ [1, 3]`, `d ∈ [1, 12]` and
/// `γ ∈ {0.5, 0.9, 0.99}`; the feature family cycles with `seed`.
pub fn random_instance(seed: u64) -> Result<Instance> {
    let kind = FeatureKind::ALL[(seed % 4) as usize];
    random_instance_with(seed, kind)
}

pub fn random_instance_with(seed: u64, kind: FeatureKind) -> Result<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7d1a_b5e3_0c42_9f17);
    let n = rng.random_range(2..=8);
    let n_actions = rng.random_range(1..=3);
    let gamma = DISCOUNTS[rng.random_range(0..DISCOUNTS.len())];
    let mdp = random_mdp(n, n_actions, rng.random(), gamma)?;
    let policy = random_policy(n, n_actions, rng.random())?;
    let x = match kind {
        FeatureKind::Tabular => tabular(n),
        FeatureKind::Duplicated => {
            let d0 = rng.random_range(1..=n.min(6));
            let k = rng.random_range(1..=(12 / d0 - 1));
            let base = conditioned_rank(&mut rng, n, d0, d0);
            duplicate_columns(&base, k)
        }
        FeatureKind::RandomRank => {
            let d = rng.random_range(1..=12);
            let r = rng.random_range(1..=n.min(d));
            conditioned_rank(&mut rng, n, r, d)
        }
        FeatureKind::Zero => DMatrix::zeros(n, rng.random_range(1..=12)),
    };
    Instance::new(mdp, policy, FeatureMap::new(x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::numerical_rank;
    use crate::markov::induce_chain;

    #[test]
    fn cycle_two_matches_hand_fixture() {
        let mdp = cycle(2, 0.9).unwrap();
        assert_eq!(mdp.transition(0), &DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
        assert_eq!(mdp.reward(0, 0), 1.0);
        assert_eq!(mdp.reward(1, 0), -1.0);
    }

    #[test]
    fn random_walk_is_irreducible() {
        let mdp = random_walk(5, 0.9).unwrap();
        let chain = induce_chain(&mdp, &Policy::uniform(5, 2)).unwrap();
        assert!(chain.stationary().iter().all(|&m| m > 0.0));
        assert_eq!(mdp.prob(4, 1, 2), 1.0);
        assert_eq!(mdp.prob(0, 0, 2), 1.0);
        assert_eq!(mdp.reward(4, 1), 1.0);
    }

    #[test]
    fn random_mdp_is_irreducible_under_any_policy() {
        for seed in 0..20 {
            let mdp = random_mdp(6, 3, seed, 0.9).unwrap();
            let policy = random_policy(6, 3, seed + 100).unwrap();
            assert!(induce_chain(&mdp, &policy).is_ok());
            let greedy = Policy::new(DMatrix::from_fn(6, 3, |_, a| if a == 2 { 1.0 } else { 0.0 }))
                .unwrap();
            assert!(induce_chain(&mdp, &greedy).is_ok());
        }
    }

    #[test]
    fn feature_generators_have_expected_shape_and_rank() {
        let dup = duplicate_columns(&tabular(2), 1);
        assert_eq!(dup, DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0]));
        assert_eq!(numerical_rank(&duplicate_columns(&tabular(5), 1)), 5);
        let padded = zero_pad(&tabular(3), 2);
        assert_eq!(padded.shape(), (3, 5));
        assert_eq!(numerical_rank(&padded), 3);
        let low = random_rank(6, 2, 5, 9);
        assert_eq!(low.shape(), (6, 5));
        assert_eq!(numerical_rank(&low), 2);
    }

    #[test]
    fn random_instances_respect_ranges() {
        for seed in 0..200 {
            let inst = random_instance(seed).unwrap();
            let n = inst.chain.n_states();
            assert!((2..=8).contains(&n));
            assert!((1..=3).contains(&inst.mdp.n_actions()));
            assert!((1..=12).contains(&inst.dim()));
            assert!(DISCOUNTS.contains(&inst.gamma()));
        }
    }
}
