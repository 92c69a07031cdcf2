//! Invariants of the probability and lens layers on random instances.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use statgames::lens::{compose_lens, exact_lens_of, identity_lens, is_exact, tensor_lens};
use statgames::prob::{self, Channel, FiniteChannel, FiniteDist, FiniteSpace, GaussianChannel, GaussianState, State};
use statgames::random::{self, PRIOR_FLOOR};
use statgames::{rng, TOL};

fn sp(n: usize) -> FiniteSpace {
    FiniteSpace::range(n)
}

fn stochastic(c: &FiniteChannel) -> bool {
    c.rows()
        .all(|r| r.iter().all(|&p| p >= 0.0) && (r.iter().sum::<f64>() - 1.0).abs() <= TOL.norm)
}

fn dims() -> impl Strategy<Value = (usize, usize, usize)> {
    (1usize..=5, 1usize..=5, 1usize..=5)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn composition_and_tensor_stay_stochastic(seed in any::<u64>(), (a, b, c) in dims(), zero in 0.0f64..0.8) {
        let mut r = rng::seeded(seed);
        let f = random::channel(&mut r, sp(a), sp(b), zero);
        let g = random::channel(&mut r, sp(b), sp(c), zero);
        prop_assert!(stochastic(&f.then(&g).unwrap()));
        prop_assert!(stochastic(&f.tensor(&g)));
        let pi = random::full_support_dist(&mut r, sp(a), 0.0);
        let pushed = f.pushforward(&pi).unwrap();
        prop_assert!((pushed.probs().iter().sum::<f64>() - 1.0).abs() <= TOL.norm);
    }

    #[test]
    fn channel_composition_is_associative(seed in any::<u64>(), (a, b, c) in dims(), d in 1usize..=5) {
        let mut r = rng::seeded(seed);
        let f = random::channel(&mut r, sp(a), sp(b), 0.3);
        let g = random::channel(&mut r, sp(b), sp(c), 0.3);
        let h = random::channel(&mut r, sp(c), sp(d), 0.3);
        let left = f.then(&g).unwrap().then(&h).unwrap();
        let right = f.then(&g.then(&h).unwrap()).unwrap();
        let all = FiniteDist::uniform(sp(a));
        prop_assert!(left.max_deviation(&right, &all).unwrap() <= 1e-12);
    }

    #[test]
    fn bayes_inverse_satisfies_the_joint_identity(seed in any::<u64>(), (a, b, _) in dims(), zero in 0.0f64..0.6) {
        let mut r = rng::seeded(seed);
        let c = random::channel(&mut r, sp(a), sp(b), zero);
        let pi = random::full_support_dist(&mut r, sp(a), PRIOR_FLOOR);
        let inv = c.invert(&pi).unwrap();
        prop_assert!(stochastic(&inv));
        let evidence = c.pushforward(&pi).unwrap();
        for x in 0..a {
            for y in 0..b {
                let joint = pi.prob(x) * c.prob(y, x);
                prop_assert!((inv.prob(x, y) * evidence.prob(y) - joint).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn null_rows_fall_back_to_the_prior(seed in any::<u64>(), a in 2usize..=5) {
        let mut r = rng::seeded(seed);
        // every x maps to outcome 0, so outcome 1 has no evidence
        let c = FiniteChannel::deterministic(sp(a), sp(2), |_| 0).unwrap();
        let pi = random::full_support_dist(&mut r, sp(a), PRIOR_FLOOR);
        let inv = c.invert(&pi).unwrap();
        prop_assert_eq!(inv.row(1), pi.probs());
    }

    #[test]
    fn kl_is_nonnegative_and_vanishes_on_the_diagonal(seed in any::<u64>(), n in 1usize..=6) {
        let mut r = rng::seeded(seed);
        let p = random::full_support_dist(&mut r, sp(n), 0.0);
        let q = random::full_support_dist(&mut r, sp(n), PRIOR_FLOOR);
        prop_assert!(p.kl(&q).unwrap() >= -TOL.div);
        prop_assert!(p.kl(&p).unwrap().abs() <= TOL.div);
    }

    #[test]
    fn marginals_of_a_product_are_the_factors(seed in any::<u64>(), n in 1usize..=5, m in 1usize..=5) {
        let mut r = rng::seeded(seed);
        let p = random::full_support_dist(&mut r, sp(n), 0.0);
        let q = random::full_support_dist(&mut r, sp(m), 0.0);
        let pq = p.tensor(&q);
        prop_assert!(pq.marginalize(0..1).unwrap().total_variation(&p) <= 1e-12);
        prop_assert!(pq.marginalize(1..2).unwrap().total_variation(&q) <= 1e-12);
    }

    #[test]
    fn exact_lenses_compose_to_the_exact_lens(seed in any::<u64>(), (a, b, c) in dims()) {
        let mut r = rng::seeded(seed);
        let f: Channel = random::channel(&mut r, sp(a), sp(b), 0.25).into();
        let g: Channel = random::channel(&mut r, sp(b), sp(c), 0.25).into();
        let composite = compose_lens(&exact_lens_of(&g), &exact_lens_of(&f)).unwrap();
        let priors: Vec<State> = (0..3).map(|_| random::full_support_dist(&mut r, sp(a), PRIOR_FLOOR).into()).collect();
        prop_assert!(is_exact(&composite, &priors, 1e-9).unwrap());
    }

    #[test]
    fn lens_unit_and_associativity_laws(seed in any::<u64>(), (a, b, c) in dims(), d in 1usize..=4) {
        let mut r = rng::seeded(seed);
        let f = exact_lens_of(&random::channel(&mut r, sp(a), sp(b), 0.3).into());
        let g = exact_lens_of(&random::channel(&mut r, sp(b), sp(c), 0.3).into());
        let h = exact_lens_of(&random::channel(&mut r, sp(c), sp(d), 0.3).into());
        let pi: State = random::full_support_dist(&mut r, sp(a), PRIOR_FLOOR).into();
        let close = |x: &statgames::lens::BayesLens, y: &statgames::lens::BayesLens| {
            let fwd = prob::max_deviation(x.forward(), y.forward(), &pi).unwrap();
            let reference = prob::pushforward(x.forward(), &pi).unwrap();
            let back = prob::max_deviation(&x.backward_at(&pi).unwrap(), &y.backward_at(&pi).unwrap(), &reference).unwrap();
            fwd.max(back)
        };
        let left = compose_lens(&h, &compose_lens(&g, &f).unwrap()).unwrap();
        let right = compose_lens(&compose_lens(&h, &g).unwrap(), &f).unwrap();
        prop_assert!(close(&left, &right) <= 1e-12);
        let id_a = identity_lens(&sp(a).into());
        let id_b = identity_lens(&sp(b).into());
        prop_assert!(close(&compose_lens(&f, &id_a).unwrap(), &f) <= 1e-12);
        prop_assert!(close(&compose_lens(&id_b, &f).unwrap(), &f) <= 1e-12);
    }

    #[test]
    fn tensor_of_exact_lenses_is_exact_at_product_priors(seed in any::<u64>(), (a, b, c) in dims(), d in 1usize..=4) {
        let mut r = rng::seeded(seed);
        let f: Channel = random::channel(&mut r, sp(a), sp(b), 0.3).into();
        let g: Channel = random::channel(&mut r, sp(c), sp(d), 0.3).into();
        let lens = tensor_lens(&exact_lens_of(&f), &exact_lens_of(&g)).unwrap();
        let p = random::full_support_dist(&mut r, sp(a), PRIOR_FLOOR);
        let q = random::full_support_dist(&mut r, sp(c), PRIOR_FLOOR);
        prop_assert!(is_exact(&lens, &[State::Finite(p.tensor(&q))], 1e-9).unwrap());
    }

    #[test]
    fn gaussian_posterior_matches_a_grid_oracle(
        mean in -2.0f64..2.0, var in 0.2f64..3.0, a in -2.0f64..2.0, b in -1.0f64..1.0, noise in 0.2f64..2.0, y in -3.0f64..3.0,
    ) {
        let prior = GaussianState::scalar(mean, var).unwrap();
        let c = GaussianChannel::scalar(a, b, noise).unwrap();
        let post = c.invert(&prior).unwrap().at(&DVector::from_element(1, y));
        // unnormalized posterior density on a fine grid around the prior
        let sd = var.sqrt();
        let n = 40_000;
        let (lo, hi) = (mean - 12.0 * sd, mean + 12.0 * sd);
        let dx = (hi - lo) / n as f64;
        let (mut z, mut m1, mut m2) = (0.0, 0.0, 0.0);
        for i in 0..=n {
            let x = lo + i as f64 * dx;
            let w = (-(x - mean).powi(2) / (2.0 * var) - (y - a * x - b).powi(2) / (2.0 * noise)).exp();
            z += w;
            m1 += w * x;
            m2 += w * x * x;
        }
        let mu = m1 / z;
        let v = m2 / z - mu * mu;
        prop_assert!((post.mean()[0] - mu).abs() <= 1e-6);
        prop_assert!((post.cov()[(0, 0)] - v).abs() <= 1e-6);
    }

    #[test]
    fn gaussian_exact_lenses_compose(seed in any::<u64>(), n in 1usize..=3, m in 1usize..=3, k in 1usize..=3) {
        use rand::Rng;
        let mut r = rng::seeded(seed);
        let mut mat = |rows: usize, cols: usize| DMatrix::from_fn(rows, cols, |_, _| r.random_range(-1.0..1.0));
        let spd = |a: DMatrix<f64>| &a * a.transpose() + DMatrix::identity(a.nrows(), a.nrows()) * 0.1;
        let f = GaussianChannel::new(mat(m, n), DVector::zeros(m), spd(mat(m, m))).unwrap();
        let g = GaussianChannel::new(mat(k, m), DVector::zeros(k), spd(mat(k, k))).unwrap();
        let prior = GaussianState::new(DVector::from_fn(n, |i, _| i as f64 * 0.5), spd(mat(n, n))).unwrap();
        let composite = compose_lens(&exact_lens_of(&g.into()), &exact_lens_of(&f.into())).unwrap();
        prop_assert!(is_exact(&composite, &[State::Gaussian(prior)], 1e-9).unwrap());
    }
}
