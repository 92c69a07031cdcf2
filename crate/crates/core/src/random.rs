//! Random finite states and channels for law checking.

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::prob::{FiniteChannel, FiniteDist, FiniteSpace};

/// Floor per atom used when full-support priors are required.
pub const PRIOR_FLOOR: f64 = 1e-3;

/// Flat-Dirichlet draw on `space`, mixed with a floor so every atom has at
/// least `floor` mass.
pub fn full_support_dist(rng: &mut impl Rng, space: FiniteSpace, floor: f64) -> FiniteDist {
    let n = space.size();
    let w = dirichlet(rng, n);
    let floor = floor.min(1.0 / n as f64);
    let scale = 1.0 - floor * n as f64;
    let probs = w.iter().map(|p| floor + scale * p).collect();
    FiniteDist::new(space, probs).expect("floored dirichlet is a distribution")
}

/// Random row-stochastic channel. Each entry is zeroed with probability
/// `zero_prob`, but every row keeps at least one positive entry.
pub fn channel(rng: &mut impl Rng, domain: FiniteSpace, codomain: FiniteSpace, zero_prob: f64) -> FiniteChannel {
    let m = codomain.size();
    let rows = (0..domain.size())
        .map(|_| {
            let mut w: Vec<f64> = (0..m)
                .map(|_| {
                    let g: f64 = Exp1.sample(rng);
                    if rng.random::<f64>() < zero_prob {
                        0.0
                    } else {
                        g
                    }
                })
                .collect();
            if w.iter().all(|&x| x == 0.0) {
                w[rng.random_range(0..m)] = 1.0;
            }
            let s: f64 = w.iter().sum();
            w.iter().map(|x| x / s).collect()
        })
        .collect();
    FiniteChannel::new(domain, codomain, rows).expect("normalized rows")
}

/// Random deterministic channel from a permutation of `0..n`.
pub fn permutation(rng: &mut impl Rng, n: usize) -> FiniteChannel {
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        perm.swap(i, rng.random_range(0..=i));
    }
    let space = FiniteSpace::range(n);
    FiniteChannel::deterministic(space.clone(), space, |x| perm[x]).expect("permutation stays in range")
}

fn dirichlet(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let g: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    let s: f64 = g.iter().sum();
    g.iter().map(|x| x / s).collect()
}
