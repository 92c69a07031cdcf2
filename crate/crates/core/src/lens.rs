//! Bayesian lenses: a forward channel `X ⇸ Y` paired with a backward channel
//! `B ⇸ A` that depends on a prior state on `X`.
//!
//! Backward parts are opaque functions of the prior, so lens equality is only
//! ever checked pointwise at sampled priors.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::prob::{self, Channel, FiniteChannel, FiniteDist, FiniteSpace, Space, State};
use crate::{random, rng};

type BackwardFn = dyn Fn(&State) -> Result<Channel> + Send + Sync;

/// A channel `B ⇸ A` for every state on `base`.
#[derive(Clone)]
pub struct StateDependentChannel {
    base: Space,
    domain: Space,
    codomain: Space,
    f: Arc<BackwardFn>,
}

impl StateDependentChannel {
    pub fn new(base: Space, domain: Space, codomain: Space, f: impl Fn(&State) -> Result<Channel> + Send + Sync + 'static) -> Self {
        Self {
            base,
            domain,
            codomain,
            f: Arc::new(f),
        }
    }

    /// Ignores the prior.
    pub fn constant(base: Space, channel: Channel) -> Self {
        let (domain, codomain) = (channel.domain(), channel.codomain());
        Self::new(base, domain, codomain, move |_| Ok(channel.clone()))
    }

    pub fn base(&self) -> &Space {
        &self.base
    }

    pub fn domain(&self) -> &Space {
        &self.domain
    }

    pub fn codomain(&self) -> &Space {
        &self.codomain
    }

    /// The channel at `prior`; checks that `prior` lives on the base space and
    /// that the result has the declared shape.
    pub fn at(&self, prior: &State) -> Result<Channel> {
        if prior.space() != self.base {
            return Err(Error::SpaceMismatch {
                context: "backward channel",
                detail: "prior does not live on the base space".into(),
            });
        }
        let c = (self.f)(prior)?;
        if c.domain() != self.domain || c.codomain() != self.codomain {
            return Err(Error::SpaceMismatch {
                context: "backward channel",
                detail: "returned channel has the wrong shape".into(),
            });
        }
        Ok(c)
    }
}

impl fmt::Debug for StateDependentChannel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StateDependentChannel")
            .field("base", &self.base)
            .field("domain", &self.domain)
            .field("codomain", &self.codomain)
            .finish_non_exhaustive()
    }
}

/// A lens `(X, A) ↦ (Y, B)`: forward `X ⇸ Y`, backward `B ⇸ A` indexed by
/// states on `X`.
#[derive(Debug, Clone)]
pub struct BayesLens {
    forward: Channel,
    backward: StateDependentChannel,
}

impl BayesLens {
    pub fn new(forward: Channel, backward: StateDependentChannel) -> Result<Self> {
        if *backward.base() != forward.domain() {
            return Err(Error::SpaceMismatch {
                context: "lens",
                detail: "backward part is not indexed by states on the forward domain".into(),
            });
        }
        Ok(Self { forward, backward })
    }

    pub fn forward(&self) -> &Channel {
        &self.forward
    }

    pub fn backward(&self) -> &StateDependentChannel {
        &self.backward
    }

    pub fn backward_at(&self, prior: &State) -> Result<Channel> {
        self.backward.at(prior)
    }

    /// `(X, A)`.
    pub fn dom(&self) -> (Space, Space) {
        (self.forward.domain(), self.backward.codomain().clone())
    }

    /// `(Y, B)`.
    pub fn cod(&self) -> (Space, Space) {
        (self.forward.codomain(), self.backward.domain().clone())
    }
}

pub fn identity_lens(space: &Space) -> BayesLens {
    let id = Channel::identity(space);
    BayesLens {
        backward: StateDependentChannel::constant(space.clone(), id.clone()),
        forward: id,
    }
}

/// `g ∘ f`: forward `g.fwd ∘ f.fwd`, backward at `π` is
/// `f.back(π) ∘ g.back(f.fwd ∘ π)`.
pub fn compose_lens(g: &BayesLens, f: &BayesLens) -> Result<BayesLens> {
    if f.cod() != g.dom() {
        return Err(Error::SpaceMismatch {
            context: "compose_lens",
            detail: "middle objects differ".into(),
        });
    }
    let forward = prob::compose_channels(&g.forward, &f.forward)?;
    let (f2, g2) = (f.clone(), g.clone());
    let backward = StateDependentChannel::new(
        f.forward.domain(),
        g.backward.domain().clone(),
        f.backward.codomain().clone(),
        move |pi| {
            let pushed = prob::pushforward(&f2.forward, pi)?;
            let gb = g2.backward.at(&pushed)?;
            let fb = f2.backward.at(pi)?;
            prob::compose_channels(&fb, &gb)
        },
    );
    Ok(BayesLens { forward, backward })
}

/// `f ⊗ g`. The backward part is evaluated at the marginals of the prior,
/// so at correlated priors it is a mean-field approximation.
pub fn tensor_lens(f: &BayesLens, g: &BayesLens) -> Result<BayesLens> {
    let forward = prob::tensor(&f.forward, &g.forward)?;
    let base = forward.domain();
    let n1 = f.forward.domain().factor_count();
    let n2 = g.forward.domain().factor_count();
    let domain = f.backward.domain().product(g.backward.domain())?;
    let codomain = f.backward.codomain().product(g.backward.codomain())?;
    let (f2, g2) = (f.clone(), g.clone());
    let backward = StateDependentChannel::new(base, domain, codomain, move |pi| {
        let p1 = prob::marginalize_range(pi, 0..n1)?;
        let p2 = prob::marginalize_range(pi, n1..n1 + n2)?;
        prob::tensor(&f2.backward.at(&p1)?, &g2.backward.at(&p2)?)
    });
    Ok(BayesLens { forward, backward })
}

/// The simple lens `(c, π ↦ c†_π)`.
pub fn exact_lens_of(c: &Channel) -> BayesLens {
    let c2 = c.clone();
    let backward = StateDependentChannel::new(c.domain(), c.codomain(), c.domain(), move |pi| prob::bayes_invert(&c2, pi));
    BayesLens {
        forward: c.clone(),
        backward,
    }
}

/// Whether `lens` agrees with the exact inversion of its forward channel at
/// every prior, up to `tol` on outcomes the pushforward charges.
pub fn is_exact(lens: &BayesLens, priors: &[State], tol: f64) -> Result<bool> {
    for pi in priors {
        let reference = prob::pushforward(&lens.forward, pi)?;
        let exact = prob::bayes_invert(&lens.forward, pi)?;
        if !prob::almost_equal(&lens.backward.at(pi)?, &exact, &reference, tol)? {
            return Ok(false);
        }
    }
    Ok(true)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VerifyConfig {
    pub trials: usize,
    pub max_dim: usize,
    pub seed: u64,
    pub tol: f64,
}

/// A failing instance, in the serialized forms of the probability types.
#[derive(Debug, Clone, Serialize)]
pub struct Witness {
    pub trial: usize,
    pub prior: FiniteDist,
    pub c: FiniteChannel,
    pub d: FiniteChannel,
    pub composite_backward: FiniteChannel,
    pub direct_inverse: FiniteChannel,
    pub deviation: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct OpticalBayesReport {
    pub trials: usize,
    pub passes: usize,
    pub failures: Vec<Witness>,
    pub worst_tv: f64,
    pub seed: u64,
    pub max_dim: usize,
    pub tol: f64,
    /// Draws rejected because the pushforward had empty support.
    pub resampled: usize,
}

/// Hook applied to the composite backward channel before comparison; used
/// for negative controls.
pub type Corruption = dyn Fn(&mut FiniteChannel, &FiniteDist) + Sync;

/// Swaps the largest and smallest entries of the most heavily charged row
/// that has two distinct entries.
pub fn swap_corruption(ch: &mut FiniteChannel, reference: &FiniteDist) {
    let mut rows: Vec<usize> = reference.support().collect();
    rows.sort_by(|a, b| reference.prob(*b).total_cmp(&reference.prob(*a)));
    let n = ch.codomain().size();
    for y in rows {
        let row = ch.row(y);
        let (hi, lo) = (argmax(row), argmax(&row.iter().map(|x| -x).collect::<Vec<_>>()));
        if row[hi] != row[lo] {
            ch.table_mut().swap(y * n + hi, y * n + lo);
            return;
        }
    }
}

fn argmax(xs: &[f64]) -> usize {
    (0..xs.len()).fold(0, |best, i| if xs[i] > xs[best] { i } else { best })
}

/// Checks `(d∘c)†_π ≈ c†_π ∘ d†_{c∘π}` on random finite instances.
///
/// Each trial draws from its own stream of `seed`, so the report does not
/// depend on the number of worker threads.
pub fn verify_optical_bayes(cfg: VerifyConfig) -> Result<OpticalBayesReport> {
    verify_optical_bayes_with(cfg, None)
}

pub fn verify_optical_bayes_with(cfg: VerifyConfig, corrupt: Option<&Corruption>) -> Result<OpticalBayesReport> {
    if cfg.trials == 0 {
        return Err(Error::Config("trials must be at least 1".into()));
    }
    if !(2..=8).contains(&cfg.max_dim) {
        return Err(Error::Config(format!("max_dim must be in 2..=8, got {}", cfg.max_dim)));
    }
    if !(cfg.tol >= 0.0) {
        return Err(Error::Config("tol must be nonnegative".into()));
    }
    let outcomes: Vec<Result<(f64, usize, Option<Witness>)>> =
        (0..cfg.trials).into_par_iter().map(|t| optical_trial(cfg, t, corrupt)).collect();
    let mut report = OpticalBayesReport {
        trials: cfg.trials,
        passes: 0,
        failures: Vec::new(),
        worst_tv: 0.0,
        seed: cfg.seed,
        max_dim: cfg.max_dim,
        tol: cfg.tol,
        resampled: 0,
    };
    for o in outcomes {
        let (dev, resampled, witness) = o?;
        report.worst_tv = report.worst_tv.max(dev);
        report.resampled += resampled;
        match witness {
            Some(w) => report.failures.push(w),
            None => report.passes += 1,
        }
    }
    Ok(report)
}

fn optical_trial(cfg: VerifyConfig, t: usize, corrupt: Option<&Corruption>) -> Result<(f64, usize, Option<Witness>)> {
    let mut r = rng::stream(cfg.seed, t as u64);
    let mut resampled = 0;
    loop {
        let dims: Vec<usize> = (0..3).map(|_| rand::Rng::random_range(&mut r, 2..=cfg.max_dim)).collect();
        let (x, y, z) = (
            FiniteSpace::range(dims[0]),
            FiniteSpace::range(dims[1]),
            FiniteSpace::range(dims[2]),
        );
        let prior = random::full_support_dist(&mut r, x.clone(), random::PRIOR_FLOOR);
        let c = random::channel(&mut r, x, y.clone(), 0.25);
        let d = random::channel(&mut r, y, z, 0.25);
        let dc = c.then(&d)?;
        let reference = dc.pushforward(&prior)?;
        if reference.support().next().is_none() {
            resampled += 1;
            continue;
        }
        let pi = State::Finite(prior.clone());
        let composite = compose_lens(&exact_lens_of(&d.clone().into()), &exact_lens_of(&c.clone().into()))?;
        let mut back = composite.backward_at(&pi)?.as_finite()?.clone();
        if let Some(hook) = corrupt {
            hook(&mut back, &reference);
        }
        let direct = dc.invert(&prior)?;
        let dev = back.max_deviation(&direct, &reference)?;
        let witness = (!(dev <= cfg.tol)).then_some(Witness {
            trial: t,
            prior,
            c,
            d,
            composite_backward: back,
            direct_inverse: direct,
            deviation: dev,
        });
        return Ok((dev, resampled, witness));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prob::{GaussianChannel, GaussianState};

    fn c() -> Channel {
        FiniteChannel::from_rows(vec![vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap().into()
    }

    fn d() -> Channel {
        FiniteChannel::from_rows(vec![vec![0.3, 0.7], vec![0.6, 0.4]]).unwrap().into()
    }

    fn half() -> State {
        FiniteDist::from_probs(vec![0.5, 0.5]).unwrap().into()
    }

    fn dev(a: &BayesLens, b: &BayesLens, pi: &State) -> f64 {
        let reference = prob::pushforward(a.forward(), pi).unwrap();
        prob::max_deviation(&a.backward_at(pi).unwrap(), &b.backward_at(pi).unwrap(), &reference).unwrap()
    }

    #[test]
    fn identity_lens_is_identity() {
        let s = c().domain();
        let id = identity_lens(&s);
        assert_eq!(id.backward_at(&half()).unwrap(), Channel::identity(&s));
        assert_eq!(prob::pushforward(id.forward(), &half()).unwrap(), half());
        let l = exact_lens_of(&c());
        let l2 = compose_lens(&id, &l).unwrap();
        assert_eq!(l2.forward(), l.forward());
        assert!(dev(&l, &l2, &half()) <= 1e-15);
    }

    #[test]
    fn exact_lens_matches_hand_bayes() {
        let back = exact_lens_of(&c()).backward_at(&half()).unwrap();
        let back = back.as_finite().unwrap();
        assert!((back.prob(0, 0) - 9.0 / 11.0).abs() < 1e-15);
        assert!((back.prob(1, 0) - 2.0 / 11.0).abs() < 1e-15);
        let id = Channel::identity(&c().domain());
        assert_eq!(exact_lens_of(&id).backward_at(&half()).unwrap(), id);
    }

    #[test]
    fn composite_matches_enumerated_inversion() {
        let l = compose_lens(&exact_lens_of(&d()), &exact_lens_of(&c())).unwrap();
        let (cf, df) = (c().as_finite().unwrap().clone(), d().as_finite().unwrap().clone());
        let back = l.backward_at(&half()).unwrap();
        let back = back.as_finite().unwrap();
        for z in 0..2 {
            // p(x | z) ∝ Σ_y π(x) c(y|x) d(z|y)
            let w: Vec<f64> = (0..2).map(|x| (0..2).map(|y| 0.5 * cf.prob(y, x) * df.prob(z, y)).sum()).collect();
            let s: f64 = w.iter().sum();
            for x in 0..2 {
                assert!((back.prob(x, z) - w[x] / s).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn is_exact_examples() {
        let pis = vec![half(), FiniteDist::from_probs(vec![0.1, 0.9]).unwrap().into()];
        assert!(is_exact(&exact_lens_of(&c()), &pis, 1e-12).unwrap());
        assert!(is_exact(&exact_lens_of(&c()), &[], 1e-12).unwrap());
        let uniform = FiniteChannel::constant(FiniteSpace::range(2), &FiniteDist::uniform(FiniteSpace::range(2)));
        let approx = BayesLens::new(c(), StateDependentChannel::constant(c().domain(), uniform.into())).unwrap();
        assert!(!is_exact(&approx, &pis, 1e-3).unwrap());
    }

    #[test]
    fn tensor_at_product_prior_is_componentwise() {
        let l = tensor_lens(&exact_lens_of(&c()), &exact_lens_of(&d())).unwrap();
        let p1: State = FiniteDist::from_probs(vec![0.3, 0.7]).unwrap().into();
        let p2: State = FiniteDist::from_probs(vec![0.6, 0.4]).unwrap().into();
        let joint = p1.tensor(&p2).unwrap();
        let got = l.backward_at(&joint).unwrap();
        let want = prob::tensor(&prob::bayes_invert(&c(), &p1).unwrap(), &prob::bayes_invert(&d(), &p2).unwrap()).unwrap();
        let everywhere: State = FiniteDist::uniform(got.domain().as_finite().unwrap().clone()).into();
        assert!(prob::max_deviation(&got, &want, &everywhere).unwrap() <= 1e-15);
        // and it is exact on the product, since the prior factorizes
        assert!(is_exact(&l, &[joint], 1e-12).unwrap());

        let id = identity_lens(&d().domain());
        let l = tensor_lens(&exact_lens_of(&c()), &id).unwrap();
        let got = l.backward_at(&p1.tensor(&p2).unwrap()).unwrap();
        let want = prob::tensor(&prob::bayes_invert(&c(), &p1).unwrap(), &Channel::identity(&d().domain())).unwrap();
        assert!(prob::max_deviation(&got, &want, &everywhere).unwrap() <= 1e-15);
    }

    #[test]
    fn gaussian_exact_lens() {
        let g: Channel = GaussianChannel::scalar(1.0, 0.0, 1.0).unwrap().into();
        let pi: State = GaussianState::scalar(0.0, 1.0).unwrap().into();
        let back = exact_lens_of(&g).backward_at(&pi).unwrap();
        assert_eq!(back, prob::bayes_invert(&g, &pi).unwrap());
    }

    #[test]
    fn mismatched_composition_is_rejected() {
        let l3 = exact_lens_of(&FiniteChannel::from_rows(vec![vec![1.0], vec![1.0], vec![1.0]]).unwrap().into());
        assert!(compose_lens(&l3, &exact_lens_of(&c())).is_err());
    }

    #[test]
    fn permutation_channels_invert_without_error() {
        let mut r = rng::seeded(1);
        let (pc, pd) = (random::permutation(&mut r, 4), random::permutation(&mut r, 4));
        let prior = random::full_support_dist(&mut r, FiniteSpace::range(4), random::PRIOR_FLOOR);
        let l = compose_lens(&exact_lens_of(&pd.clone().into()), &exact_lens_of(&pc.clone().into())).unwrap();
        let direct = pc.then(&pd).unwrap().invert(&prior).unwrap();
        let back = l.backward_at(&prior.clone().into()).unwrap();
        let reference = pc.then(&pd).unwrap().pushforward(&prior).unwrap();
        assert_eq!(back.as_finite().unwrap().max_deviation(&direct, &reference).unwrap(), 0.0);
    }

    #[test]
    fn verification_passes_and_is_deterministic() {
        let cfg = VerifyConfig {
            trials: 200,
            max_dim: 5,
            seed: 42,
            tol: 1e-9,
        };
        let a = verify_optical_bayes(cfg).unwrap();
        assert_eq!(a.passes, 200);
        assert!(a.worst_tv <= 1e-9);
        let b = verify_optical_bayes(cfg).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn corruption_is_caught() {
        let cfg = VerifyConfig {
            trials: 20,
            max_dim: 4,
            seed: 7,
            tol: 1e-9,
        };
        let r = verify_optical_bayes_with(cfg, Some(&swap_corruption)).unwrap();
        assert!(!r.failures.is_empty());
        let w = serde_json::to_value(&r.failures[0]).unwrap();
        assert!(w["c"]["rows"].is_array());
        assert!(w["prior"]["probs"].is_array());
    }

    #[test]
    fn bad_configs() {
        let mut cfg = VerifyConfig {
            trials: 0,
            max_dim: 5,
            seed: 0,
            tol: 1e-9,
        };
        assert!(verify_optical_bayes(cfg).is_err());
        cfg.trials = 1;
        cfg.max_dim = 9;
        assert!(verify_optical_bayes(cfg).is_err());
    }
}
