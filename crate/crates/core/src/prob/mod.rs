//! States and channels of a concrete Markov category.
//!
//! Two backends sit behind one interface: [`finite`] (exact probability
//! tables) and [`gaussian`] (linear-Gaussian kernels). Mixing them in one
//! operation is a [`Error::BackendMismatch`].

pub mod finite;
pub mod gaussian;

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

pub use finite::{FiniteChannel, FiniteDist, FiniteSpace};
pub use gaussian::{EuclideanSpace, GaussianChannel, GaussianState, MonteCarlo};

use crate::error::{Error, Result};
use crate::TOL;

/// Log density of an impossible outcome. Adding it to any finite number
/// yields it again, so impossible outcomes poison sums deterministically.
pub const LOG_ZERO: f64 = f64::NEG_INFINITY;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Space {
    Finite(FiniteSpace),
    Euclidean(EuclideanSpace),
}

impl Space {
    pub fn unit_like(&self) -> Space {
        match self {
            Space::Finite(_) => Space::Finite(FiniteSpace::unit()),
            Space::Euclidean(_) => Space::Euclidean(EuclideanSpace::unit()),
        }
    }

    pub fn product(&self, other: &Space) -> Result<Space> {
        match (self, other) {
            (Space::Finite(a), Space::Finite(b)) => Ok(Space::Finite(a.product(b))),
            (Space::Euclidean(a), Space::Euclidean(b)) => Ok(Space::Euclidean(a.product(b))),
            _ => Err(Error::BackendMismatch("space product")),
        }
    }

    pub fn factor_count(&self) -> usize {
        match self {
            Space::Finite(s) => s.factor_count(),
            Space::Euclidean(s) => s.factor_count(),
        }
    }

    pub fn sub_space(&self, factors: std::ops::Range<usize>) -> Result<Space> {
        Ok(match self {
            Space::Finite(s) => Space::Finite(s.sub_space(factors)?),
            Space::Euclidean(s) => Space::Euclidean(s.sub_space(factors)?),
        })
    }

    pub fn as_finite(&self) -> Result<&FiniteSpace> {
        match self {
            Space::Finite(s) => Ok(s),
            Space::Euclidean(_) => Err(Error::BackendMismatch("expected a finite space")),
        }
    }

    pub fn as_euclidean(&self) -> Result<&EuclideanSpace> {
        match self {
            Space::Euclidean(s) => Ok(s),
            Space::Finite(_) => Err(Error::BackendMismatch("expected a euclidean space")),
        }
    }

    /// Number of outcomes (finite) or dimension (Euclidean).
    pub fn size(&self) -> usize {
        match self {
            Space::Finite(s) => s.size(),
            Space::Euclidean(s) => s.dim(),
        }
    }
}

impl From<FiniteSpace> for Space {
    fn from(s: FiniteSpace) -> Self {
        Space::Finite(s)
    }
}

impl From<EuclideanSpace> for Space {
    fn from(s: EuclideanSpace) -> Self {
        Space::Euclidean(s)
    }
}

/// A state `π : I ⇸ X`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum State {
    Finite(FiniteDist),
    Gaussian(GaussianState),
}

impl From<FiniteDist> for State {
    fn from(d: FiniteDist) -> Self {
        State::Finite(d)
    }
}

impl From<GaussianState> for State {
    fn from(d: GaussianState) -> Self {
        State::Gaussian(d)
    }
}

impl State {
    pub fn space(&self) -> Space {
        match self {
            State::Finite(d) => Space::Finite(d.space().clone()),
            State::Gaussian(g) => Space::Euclidean(g.space().clone()),
        }
    }

    pub fn as_finite(&self) -> Result<&FiniteDist> {
        match self {
            State::Finite(d) => Ok(d),
            State::Gaussian(_) => Err(Error::BackendMismatch("expected a finite state")),
        }
    }

    pub fn as_gaussian(&self) -> Result<&GaussianState> {
        match self {
            State::Gaussian(g) => Ok(g),
            State::Finite(_) => Err(Error::BackendMismatch("expected a gaussian state")),
        }
    }

    /// The unique state on the unit space of this backend.
    pub fn unit_like(&self) -> State {
        match self {
            State::Finite(_) => State::Finite(FiniteDist::point(FiniteSpace::unit(), 0)),
            State::Gaussian(_) => State::Gaussian(GaussianState::standard(0)),
        }
    }

    pub fn tensor(&self, other: &State) -> Result<State> {
        match (self, other) {
            (State::Finite(a), State::Finite(b)) => Ok(State::Finite(a.tensor(b))),
            (State::Gaussian(a), State::Gaussian(b)) => Ok(State::Gaussian(a.tensor(b))),
            _ => Err(Error::BackendMismatch("tensor of states")),
        }
    }

    /// Draw one outcome.
    pub fn sample(&self, rng: &mut impl rand::Rng) -> Point {
        match self {
            State::Finite(d) => Point::Atom(d.sample(rng)),
            State::Gaussian(g) => Point::Vector(g.sample(rng)),
        }
    }
}

/// A channel `c : X ⇸ Y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Channel {
    Finite(FiniteChannel),
    Gaussian(GaussianChannel),
}

impl From<FiniteChannel> for Channel {
    fn from(c: FiniteChannel) -> Self {
        Channel::Finite(c)
    }
}

impl From<GaussianChannel> for Channel {
    fn from(c: GaussianChannel) -> Self {
        Channel::Gaussian(c)
    }
}

impl Channel {
    pub fn identity(space: &Space) -> Channel {
        match space {
            Space::Finite(s) => FiniteChannel::identity(s.clone()).into(),
            Space::Euclidean(s) => GaussianChannel::identity(s.clone()).into(),
        }
    }

    /// Ignores its input (on `domain`) and emits `state`.
    pub fn constant(domain: &Space, state: &State) -> Result<Channel> {
        match (domain, state) {
            (Space::Finite(d), State::Finite(s)) => Ok(FiniteChannel::constant(d.clone(), s).into()),
            (Space::Euclidean(d), State::Gaussian(s)) => Ok(GaussianChannel::constant(d.clone(), s).into()),
            _ => Err(Error::BackendMismatch("constant channel")),
        }
    }

    pub fn discard(domain: &Space) -> Channel {
        match domain {
            Space::Finite(d) => FiniteChannel::discard(d.clone()).into(),
            Space::Euclidean(d) => GaussianChannel::discard(d.clone()).into(),
        }
    }

    /// Deterministic projection of a product space onto the factors `keep`.
    pub fn projection(space: &Space, keep: std::ops::Range<usize>) -> Result<Channel> {
        Ok(match space {
            Space::Finite(s) => FiniteChannel::projection(s, keep)?.into(),
            Space::Euclidean(s) => GaussianChannel::projection(s, keep)?.into(),
        })
    }

    /// `y ↦ δ_y ⊗ state`, or `state ⊗ δ_y` when `state_first`.
    pub fn attach(space: &Space, state: &State, state_first: bool) -> Result<Channel> {
        match (space, state) {
            (Space::Finite(s), State::Finite(d)) => Ok(FiniteChannel::attach(s, d, state_first).into()),
            (Space::Euclidean(s), State::Gaussian(d)) => Ok(GaussianChannel::attach(s, d, state_first).into()),
            _ => Err(Error::BackendMismatch("attach")),
        }
    }

    pub fn domain(&self) -> Space {
        match self {
            Channel::Finite(c) => Space::Finite(c.domain().clone()),
            Channel::Gaussian(c) => Space::Euclidean(c.domain().clone()),
        }
    }

    pub fn codomain(&self) -> Space {
        match self {
            Channel::Finite(c) => Space::Finite(c.codomain().clone()),
            Channel::Gaussian(c) => Space::Euclidean(c.codomain().clone()),
        }
    }

    pub fn as_finite(&self) -> Result<&FiniteChannel> {
        match self {
            Channel::Finite(c) => Ok(c),
            Channel::Gaussian(_) => Err(Error::BackendMismatch("expected a finite channel")),
        }
    }

    pub fn as_gaussian(&self) -> Result<&GaussianChannel> {
        match self {
            Channel::Gaussian(c) => Ok(c),
            Channel::Finite(_) => Err(Error::BackendMismatch("expected a gaussian channel")),
        }
    }

    /// The output state at a point input.
    pub fn at(&self, x: &Point) -> Result<State> {
        match (self, x) {
            (Channel::Finite(c), Point::Atom(i)) if *i < c.domain().size() => Ok(c.row_dist(*i).into()),
            (Channel::Gaussian(c), Point::Vector(v)) if v.len() == c.domain().dim() => Ok(c.at(v).into()),
            _ => Err(Error::SpaceMismatch {
                context: "channel at point",
                detail: format!("{x:?} is not in the domain"),
            }),
        }
    }
}

/// An outcome: an atom of a finite space or a vector in `ℝⁿ`.
#[derive(Debug, Clone, PartialEq)]
pub enum Point {
    Atom(usize),
    Vector(DVector<f64>),
}

/// `c∘π`.
pub fn pushforward(c: &Channel, pi: &State) -> Result<State> {
    match (c, pi) {
        (Channel::Finite(c), State::Finite(p)) => Ok(c.pushforward(p)?.into()),
        (Channel::Gaussian(c), State::Gaussian(p)) => Ok(c.pushforward(p)?.into()),
        _ => Err(Error::BackendMismatch("pushforward")),
    }
}

/// `d∘c` (run `c` first).
pub fn compose_channels(d: &Channel, c: &Channel) -> Result<Channel> {
    match (d, c) {
        (Channel::Finite(d), Channel::Finite(c)) => Ok(c.then(d)?.into()),
        (Channel::Gaussian(d), Channel::Gaussian(c)) => Ok(c.then(d)?.into()),
        _ => Err(Error::BackendMismatch("compose_channels")),
    }
}

/// `c1 ⊗ c2`.
pub fn tensor(c1: &Channel, c2: &Channel) -> Result<Channel> {
    match (c1, c2) {
        (Channel::Finite(a), Channel::Finite(b)) => Ok(a.tensor(b).into()),
        (Channel::Gaussian(a), Channel::Gaussian(b)) => Ok(a.tensor(b).into()),
        _ => Err(Error::BackendMismatch("tensor")),
    }
}

/// The Bayesian inversion `c†_π : Y ⇸ X` as a channel.
///
/// For finite channels the rows of outcomes with no mass under `c∘π` are not
/// determined by Bayes' rule and are filled with the prior; they are ignored
/// by [`almost_equal`]. Use [`bayes_update`] to condition on one outcome.
pub fn bayes_invert(c: &Channel, pi: &State) -> Result<Channel> {
    match (c, pi) {
        (Channel::Finite(c), State::Finite(p)) => Ok(c.invert(p)?.into()),
        (Channel::Gaussian(c), State::Gaussian(p)) => Ok(c.invert(p)?.into()),
        _ => Err(Error::BackendMismatch("bayes_invert")),
    }
}

/// The Bayesian update of `pi` along `c` given `y`; conditioning on a
/// zero-mass outcome is [`Error::UnsupportedOutcome`].
pub fn bayes_update(c: &Channel, pi: &State, y: &Point) -> Result<State> {
    match (c, pi, y) {
        (Channel::Finite(c), State::Finite(p), Point::Atom(y)) => Ok(c.posterior(p, *y)?.into()),
        (Channel::Gaussian(c), State::Gaussian(p), Point::Vector(y)) => Ok(c.invert(p)?.at(y).into()),
        _ => Err(Error::BackendMismatch("bayes_update")),
    }
}

/// `ln p_c(y | x)`, with [`LOG_ZERO`] for impossible pairs.
pub fn log_density(c: &Channel, y: &Point, x: &Point) -> Result<f64> {
    match (c, y, x) {
        (Channel::Finite(c), Point::Atom(y), Point::Atom(x)) => {
            if *x >= c.domain().size() || *y >= c.codomain().size() {
                return Err(Error::SpaceMismatch {
                    context: "log_density",
                    detail: format!("({y}|{x}) out of range"),
                });
            }
            Ok(c.log_density(*y, *x))
        }
        (Channel::Gaussian(c), Point::Vector(y), Point::Vector(x)) => c.log_density(y, x),
        _ => Err(Error::BackendMismatch("log_density")),
    }
}

/// Log density of a state at a point.
pub fn state_log_density(pi: &State, x: &Point) -> Result<f64> {
    match (pi, x) {
        (State::Finite(d), Point::Atom(i)) => Ok(if d.prob(*i) > 0.0 { d.prob(*i).ln() } else { LOG_ZERO }),
        (State::Gaussian(g), Point::Vector(v)) => g.log_density(v),
        _ => Err(Error::BackendMismatch("state_log_density")),
    }
}

/// `KL(p ‖ q)`.
pub fn kl(p: &State, q: &State) -> Result<f64> {
    match (p, q) {
        (State::Finite(p), State::Finite(q)) => p.kl(q),
        (State::Gaussian(p), State::Gaussian(q)) => p.kl(q),
        _ => Err(Error::BackendMismatch("kl")),
    }
}

/// Monte Carlo settings used whenever an expectation has no closed form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct McOptions {
    pub samples: usize,
    pub seed: u64,
}

impl Default for McOptions {
    fn default() -> Self {
        Self { samples: 20_000, seed: 0 }
    }
}

/// An expectation value; Monte Carlo results carry their sample count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    /// `None` for exact evaluation.
    pub samples: Option<usize>,
    pub std_error: f64,
}

/// `E_π[f]`: exact for finite states, seeded Monte Carlo for Gaussian ones.
pub fn expectation(pi: &State, f: impl Fn(&Point) -> f64, mc: McOptions) -> Estimate {
    match pi {
        State::Finite(d) => Estimate {
            value: d.expectation(|i| f(&Point::Atom(i))),
            samples: None,
            std_error: 0.0,
        },
        State::Gaussian(g) => {
            let r = g.expectation_mc(|v| f(&Point::Vector(v.clone())), mc.samples, mc.seed);
            Estimate {
                value: r.estimate,
                samples: Some(r.samples),
                std_error: r.std_error,
            }
        }
    }
}

/// Marginal of a state on a product space onto factor `factor` (0-based).
pub fn marginalize(pi: &State, factor: usize) -> Result<State> {
    marginalize_range(pi, factor..factor + 1)
}

/// Marginal onto a contiguous range of factors.
pub fn marginalize_range(pi: &State, factors: std::ops::Range<usize>) -> Result<State> {
    match pi {
        State::Finite(d) => Ok(d.marginalize(factors)?.into()),
        State::Gaussian(g) => Ok(g.marginalize(factors)?.into()),
    }
}

/// Worst deviation between two outcome-indexed families of states over the
/// support of `reference`: total variation for finite families, sup-norm of
/// mean and covariance for Gaussian ones.
pub fn max_deviation(f1: &Channel, f2: &Channel, reference: &State) -> Result<f64> {
    match (f1, f2, reference) {
        (Channel::Finite(a), Channel::Finite(b), State::Finite(r)) => a.max_deviation(b, r),
        (Channel::Gaussian(a), Channel::Gaussian(b), State::Gaussian(r)) => a.max_deviation(b, r),
        _ => Err(Error::BackendMismatch("almost_equal")),
    }
}

/// `reference`-almost-equality of two families of states within `tol`.
/// Outcomes outside the support of `reference` are ignored.
pub fn almost_equal(f1: &Channel, f2: &Channel, reference: &State, tol: f64) -> Result<bool> {
    Ok(max_deviation(f1, f2, reference)? <= tol)
}

/// A divergence between states on the same space.
#[derive(Clone)]
pub enum Divergence {
    KullbackLeibler,
    /// Scores every pair as zero, leaving only reconstruction terms.
    Zero,
    Custom {
        name: String,
        score: Arc<dyn Fn(&State, &State) -> Result<f64> + Send + Sync>,
    },
}

impl Divergence {
    pub fn custom(name: impl Into<String>, score: impl Fn(&State, &State) -> Result<f64> + Send + Sync + 'static) -> Self {
        Divergence::Custom {
            name: name.into(),
            score: Arc::new(score),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            Divergence::KullbackLeibler => "kl",
            Divergence::Zero => "zero",
            Divergence::Custom { name, .. } => name,
        }
    }

    pub fn eval(&self, p: &State, q: &State) -> Result<f64> {
        match self {
            Divergence::KullbackLeibler => kl(p, q),
            Divergence::Zero => Ok(0.0),
            Divergence::Custom { score, .. } => score(p, q),
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "kl" => Ok(Divergence::KullbackLeibler),
            "zero" => Ok(Divergence::Zero),
            other => Err(Error::Config(format!("unknown divergence {other:?}"))),
        }
    }
}

impl fmt::Debug for Divergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Divergence({})", self.name())
    }
}

/// True if `x` is within the slack allowed below zero for divergences.
pub fn divergence_is_valid(x: f64) -> bool {
    x >= -TOL.div
}
