//! Gradient realisations of optimization games.
//!
//! A realisation runs gradient descent on the parameters of a game's play
//! function inside a closed dynamical system: the forward component holds
//! the parameters and takes one descent step per tick, the static context is
//! lifted to a constant emitter of its prior plus a responder that applies
//! the continuation, and the backward component samples the played
//! recognition channel. Fixed points are detected on the parameter
//! coordinates and compared against static equilibria (the cybernetic check).
//!
//! Objectives are losses, so "fitness-maximising" means loss-minimising and
//! the check passes when the dynamic loss is at most the static one plus a
//! tolerance.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{self, close, ClosedSystem, DynContext, DynLens, DynSystem, FnSystem, SampledSystem, Trajectory, Value};
use crate::error::{Error, Result};
use crate::games::family::{softmax, RowSimplexGrid};
use crate::games::objectives::{data_state, inference_objective, vae_objective};
use crate::games::{make_inference_game, Context};
use crate::lens::{identity_lens, BayesLens, StateDependentChannel};
use crate::prob::{
    Channel, Divergence, EuclideanSpace, FiniteChannel, FiniteDist, FiniteSpace, GaussianChannel, GaussianState, McOptions, Point, Space,
    State,
};
use crate::rng::StdRng;

/// Objectives above this (or non-finite) count as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e9;
/// Allowed per-step increase of the objective in a monotone run.
pub const EPS_MONO: f64 = 1e-7;
/// Default finite-difference step.
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradMode {
    Analytic,
    /// Central differences with step `h`.
    Fd {
        h: f64,
    },
}

/// Projected gradient descent `θ' = proj(θ − η∇L(θ))`, optionally with
/// Armijo backtracking starting from `η`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientDynamics {
    pub eta: f64,
    pub grad: GradMode,
    pub line_search: bool,
    /// Box constraints per coordinate.
    pub bounds: Option<Vec<(f64, f64)>>,
}

impl GradientDynamics {
    pub fn new(eta: f64, grad: GradMode) -> Self {
        Self {
            eta,
            grad,
            line_search: false,
            bounds: None,
        }
    }

    pub fn with_line_search(mut self) -> Self {
        self.line_search = true;
        self
    }

    pub fn gradient(&self, game: &dyn ParametricGame, theta: &[f64]) -> Result<Vec<f64>> {
        match self.grad {
            GradMode::Analytic => game
                .gradient(theta)
                .unwrap_or_else(|| Err(Error::Config(format!("{} has no analytic gradient", game.name())))),
            GradMode::Fd { h } => fd_gradient(|t| game.objective(t), theta, h),
        }
    }

    fn project(&self, theta: &mut [f64]) {
        if let Some(b) = &self.bounds {
            for (t, (lo, hi)) in theta.iter_mut().zip(b) {
                *t = t.clamp(*lo, *hi);
            }
        }
    }

    /// One descent step.
    pub fn step(&self, game: &dyn ParametricGame, theta: &[f64]) -> Result<Vec<f64>> {
        let g = self.gradient(game, theta)?;
        let trial = |t: f64| {
            let mut next: Vec<f64> = theta.iter().zip(&g).map(|(x, d)| x - t * d).collect();
            self.project(&mut next);
            next
        };
        if !self.line_search {
            return Ok(trial(self.eta));
        }
        let f0 = game.objective(theta)?;
        let slope: f64 = g.iter().map(|d| d * d).sum();
        let mut t = self.eta;
        loop {
            let next = trial(t);
            let f = game.objective(&next)?;
            if f <= f0 - 1e-4 * t * slope || t < 1e-12 {
                return Ok(if f <= f0 { next } else { theta.to_vec() });
            }
            t *= 0.5;
        }
    }
}

/// Central finite-difference gradient.
pub fn fd_gradient(f: impl Fn(&[f64]) -> Result<f64>, theta: &[f64], h: f64) -> Result<Vec<f64>> {
    let mut x = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            x[i] = theta[i] + h;
            let up = f(&x)?;
            x[i] = theta[i] - h;
            let down = f(&x)?;
            x[i] = theta[i];
            Ok((up - down) / (2.0 * h))
        })
        .collect()
}

/// Largest coordinate deviation relative to the analytic gradient's size.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic.iter().zip(numeric).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let scale = analytic.iter().fold(0.0f64, |m, a| m.max(a.abs())).max(1e-8);
    diff / scale
}

/// A static optimum with its loss.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StaticSolution {
    pub theta: Vec<f64>,
    pub phi: f64,
}

/// A game whose strategies are parameter vectors.
pub trait ParametricGame: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn param_names(&self) -> Vec<String> {
        (0..self.dim()).map(|i| format!("theta_{i}")).collect()
    }
    fn context(&self) -> &Context;
    /// The loss of the played lens in the context.
    fn objective(&self, theta: &[f64]) -> Result<f64>;
    fn gradient(&self, _theta: &[f64]) -> Option<Result<Vec<f64>>> {
        None
    }
    /// The play function.
    fn play(&self, theta: &[f64]) -> Result<BayesLens>;
    /// A static equilibrium, by closed form or enumeration.
    fn static_equilibrium(&self) -> Result<StaticSolution>;
}

fn check_dim(theta: &[f64], n: usize) -> Result<()> {
    if theta.len() != n {
        return Err(Error::DimensionMismatch {
            context: "game parameters",
            expected: n,
            found: theta.len(),
        });
    }
    Ok(())
}

fn unit_context() -> Context {
    let unit = FiniteSpace::unit();
    Context::new(FiniteDist::point(unit.clone(), 0).into(), FiniteChannel::identity(unit).into()).expect("unit context")
}

/// `Σ (θ_i − c)²`, a convex toy whose play is the identity lens on the
/// one-point space.
#[derive(Debug, Clone)]
pub struct Quadratic {
    pub target: f64,
    pub dim: usize,
    ctx: Context,
}

impl Quadratic {
    pub fn new(target: f64, dim: usize) -> Self {
        Self {
            target,
            dim,
            ctx: unit_context(),
        }
    }
}

impl ParametricGame for Quadratic {
    fn name(&self) -> &str {
        "quadratic"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn context(&self) -> &Context {
        &self.ctx
    }

    fn objective(&self, theta: &[f64]) -> Result<f64> {
        check_dim(theta, self.dim)?;
        Ok(theta.iter().map(|t| (t - self.target).powi(2)).sum())
    }

    fn gradient(&self, theta: &[f64]) -> Option<Result<Vec<f64>>> {
        Some(check_dim(theta, self.dim).map(|_| theta.iter().map(|t| 2.0 * (t - self.target)).collect()))
    }

    fn play(&self, _: &[f64]) -> Result<BayesLens> {
        Ok(identity_lens(&FiniteSpace::unit().into()))
    }

    fn static_equilibrium(&self) -> Result<StaticSolution> {
        Ok(StaticSolution {
            theta: vec![self.target; self.dim],
            phi: 0.0,
        })
    }
}

/// One-dimensional VAE game: prior `N(m₀, p)`, fixed generative channel
/// `z ↦ N(a·z, s)` and recognition channels `x ↦ N(w·x + b, e^ℓ)` with
/// parameters `[w, b, ℓ]`. The continuation is constant at the model's own
/// data distribution, so the true model lies in the family.
#[derive(Debug, Clone)]
pub struct GaussianVae1d {
    pub prior_mean: f64,
    pub prior_var: f64,
    pub gain: f64,
    pub noise: f64,
    forward: Channel,
    ctx: Context,
    data: GaussianState,
}

impl GaussianVae1d {
    pub fn new(prior_mean: f64, prior_var: f64, gain: f64, noise: f64) -> Result<Self> {
        let prior = GaussianState::scalar(prior_mean, prior_var)?;
        let forward: Channel = GaussianChannel::scalar(gain, 0.0, noise)?.into();
        let data = forward.as_gaussian()?.pushforward(&prior)?;
        let k = Channel::constant(&forward.codomain(), &data.clone().into())?;
        let ctx = Context::new(prior.into(), k)?;
        Ok(Self {
            prior_mean,
            prior_var,
            gain,
            noise,
            forward,
            ctx,
            data,
        })
    }

    /// The conjugate setting: standard prior, unit gain and noise.
    pub fn standard() -> Self {
        Self::new(0.0, 1.0, 1.0, 1.0).expect("valid parameters")
    }

    fn backward(&self, theta: &[f64]) -> Result<StateDependentChannel> {
        let r = GaussianChannel::scalar(theta[0], theta[1], theta[2].exp())?;
        Ok(StateDependentChannel::constant(self.forward.domain(), r.into()))
    }

    /// Exact posterior parameters `[w, b, ln v]`.
    pub fn posterior_params(&self) -> Vec<f64> {
        let v = 1.0 / (self.gain * self.gain / self.noise + 1.0 / self.prior_var);
        vec![v * self.gain / self.noise, v * self.prior_mean / self.prior_var, v.ln()]
    }
}

impl ParametricGame for GaussianVae1d {
    fn name(&self) -> &str {
        "gaussian_vae"
    }

    fn dim(&self) -> usize {
        3
    }

    fn param_names(&self) -> Vec<String> {
        ["w", "b", "log_var"].map(String::from).to_vec()
    }

    fn context(&self) -> &Context {
        &self.ctx
    }

    fn objective(&self, theta: &[f64]) -> Result<f64> {
        check_dim(theta, 3)?;
        vae_objective(&self.forward, &self.backward(theta)?, &self.ctx)
    }

    fn gradient(&self, theta: &[f64]) -> Option<Result<Vec<f64>>> {
        if let Err(e) = check_dim(theta, 3) {
            return Some(Err(e));
        }
        let (w, b, v) = (theta[0], theta[1], theta[2].exp());
        let (a, s, m0, p) = (self.gain, self.noise, self.prior_mean, self.prior_var);
        let (md, sd) = (self.data.mean()[0], self.data.cov()[(0, 0)]);
        // reconstruction residual x − a·z has mean eu and spread (1 − aw)²·sd + a²v
        let eu = (1.0 - a * w) * md - a * b;
        // code mean minus prior mean
        let ez = w * md + b - m0;
        let dw = (-a * (1.0 - a * w) * sd - a * md * eu) / s + (w * sd + ez * md) / p;
        let db = -a * eu / s + ez / p;
        let dl = v * (a * a / (2.0 * s) + 1.0 / (2.0 * p)) - 0.5;
        Some(Ok(vec![dw, db, dl]))
    }

    fn play(&self, theta: &[f64]) -> Result<BayesLens> {
        check_dim(theta, 3)?;
        BayesLens::new(self.forward.clone(), self.backward(theta)?)
    }

    fn static_equilibrium(&self) -> Result<StaticSolution> {
        let theta = self.posterior_params();
        let phi = self.objective(&theta)?;
        Ok(StaticSolution { theta, phi })
    }
}

/// Finite inference game with KL divergence whose backward rows are
/// `softmax(θ_x)`, one row of logits per observation.
#[derive(Debug, Clone)]
pub struct SoftmaxInference {
    forward: FiniteChannel,
    ctx: Context,
    grid_step: f64,
}

impl SoftmaxInference {
    /// `grid_step` sets the row grid enumerated for the static equilibrium
    /// (the exact inverse is always added to it).
    pub fn new(forward: FiniteChannel, ctx: Context, grid_step: f64) -> Result<Self> {
        let prior = ctx.prior.as_finite()?;
        if prior.space() != forward.domain() || ctx.continuation.domain() != Space::from(forward.codomain().clone()) {
            return Err(Error::SpaceMismatch {
                context: "softmax inference",
                detail: "context does not fit the forward channel".into(),
            });
        }
        if prior.probs().iter().any(|&p| p <= 0.0) {
            return Err(Error::Config("softmax inference needs a full-support prior".into()));
        }
        RowSimplexGrid::new(forward.codomain().clone(), forward.domain().clone(), grid_step)?;
        Ok(Self { forward, ctx, grid_step })
    }

    fn rows(&self, theta: &[f64]) -> Vec<Vec<f64>> {
        theta.chunks(self.forward.domain().size()).map(softmax).collect()
    }

    fn backward_channel(&self, theta: &[f64]) -> Result<FiniteChannel> {
        FiniteChannel::new(self.forward.codomain().clone(), self.forward.domain().clone(), self.rows(theta))
    }

    /// The exact inverse at the context prior.
    pub fn exact_inverse(&self) -> Result<FiniteChannel> {
        self.forward.invert(self.ctx.prior.as_finite()?)
    }

    /// Worst total variation between the played rows and the exact inverse
    /// over observations with positive data mass.
    pub fn tv_to_exact(&self, theta: &[f64]) -> Result<f64> {
        let exact = self.exact_inverse()?;
        let data = data_state(&self.forward.clone().into(), &self.ctx)?;
        let data = data.as_finite()?;
        let played = self.backward_channel(theta)?;
        Ok(data
            .support()
            .map(|x| 0.5 * played.row(x).iter().zip(exact.row(x)).map(|(a, b)| (a - b).abs()).sum::<f64>())
            .fold(0.0, f64::max))
    }
}

impl ParametricGame for SoftmaxInference {
    fn name(&self) -> &str {
        "softmax_inference"
    }

    fn dim(&self) -> usize {
        self.forward.domain().size() * self.forward.codomain().size()
    }

    fn context(&self) -> &Context {
        &self.ctx
    }

    fn objective(&self, theta: &[f64]) -> Result<f64> {
        check_dim(theta, self.dim())?;
        let back = StateDependentChannel::constant(self.forward.domain().clone().into(), self.backward_channel(theta)?.into());
        inference_objective(
            &self.forward.clone().into(),
            &back,
            &Divergence::KullbackLeibler,
            &self.ctx,
            McOptions::default(),
        )
    }

    fn gradient(&self, theta: &[f64]) -> Option<Result<Vec<f64>>> {
        let run = || -> Result<Vec<f64>> {
            check_dim(theta, self.dim())?;
            let data = data_state(&self.forward.clone().into(), &self.ctx)?;
            let data = data.as_finite()?;
            let prior = self.ctx.prior.as_finite()?;
            let mut grad = Vec::with_capacity(theta.len());
            for (x, r) in self.rows(theta).iter().enumerate() {
                // per-atom integrand log r − log c(x|z) − log π(z)
                let g: Vec<f64> = r
                    .iter()
                    .enumerate()
                    .map(|(z, rz)| rz.ln() - self.forward.log_density(x, z) - prior.prob(z).ln())
                    .collect();
                let mean: f64 = r.iter().zip(&g).map(|(a, b)| a * b).sum();
                let q = data.prob(x);
                grad.extend(r.iter().zip(&g).map(|(rz, gz)| if q > 0.0 { q * rz * (gz - mean) } else { 0.0 }));
            }
            Ok(grad)
        };
        Some(run())
    }

    fn play(&self, theta: &[f64]) -> Result<BayesLens> {
        check_dim(theta, self.dim())?;
        let back = StateDependentChannel::constant(self.forward.domain().clone().into(), self.backward_channel(theta)?.into());
        BayesLens::new(self.forward.clone().into(), back)
    }

    /// Brute force over the row grid plus the exact inverse.
    fn static_equilibrium(&self) -> Result<StaticSolution> {
        let family = RowSimplexGrid::new(self.forward.codomain().clone(), self.forward.domain().clone(), self.grid_step)?;
        let game = make_inference_game(&self.forward.clone().into(), &family, Divergence::KullbackLeibler, true)?;
        let solved = game.solve(&self.ctx)?;
        let phi = solved
            .objective
            .ok_or_else(|| Error::EmptyStrategySpace("no static equilibrium".into()))?;
        let exact = self.exact_inverse()?;
        let theta = exact.rows().flat_map(|r| r.iter().map(|p| p.ln().max(-50.0))).collect();
        Ok(StaticSolution { theta, phi })
    }
}

/// Whether the thermostat learns only belief modes (variances fixed at
/// their Laplace values) or full Gaussian beliefs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThermostatMode {
    #[default]
    Fep,
    DeepAi,
}

/// A level above the sensory one: `x_{i−1} | x_i ∼ N(gain·x_i, var)`.
/// A level with zero variance is deterministic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelSpec {
    pub gain: f64,
    pub var: f64,
}

/// The thermostat: a latent temperature sensed as `s = x + ε`, an action
/// shifting the room temperature from `x0` to `x0 + a`, and a goal prior
/// `N(goal, goal_var)` on the top latent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThermostatConfig {
    pub x0: f64,
    pub goal: f64,
    pub goal_var: f64,
    pub sensor_var: f64,
    /// Variance of the sensed temperature around `x0 + a`.
    pub env_var: f64,
    /// Quadratic penalty `λa²/2` on the action.
    pub action_cost: f64,
    /// Levels above the sensory one, bottom first.
    pub levels: Vec<LevelSpec>,
    pub mode: ThermostatMode,
}

impl Default for ThermostatConfig {
    fn default() -> Self {
        Self {
            x0: 15.0,
            goal: 21.0,
            goal_var: 0.1,
            sensor_var: 1.0,
            env_var: 0.5,
            action_cost: 0.05,
            levels: Vec::new(),
            mode: ThermostatMode::Fep,
        }
    }
}

/// The thermostat as a parametric game. Deterministic levels are folded
/// into their neighbours, so only stochastic levels carry beliefs.
///
/// The loss is the mean-field free energy of the linear-Gaussian hierarchy
/// with beliefs `N(μ_i, v_i)` per level:
/// `Σ_i E[(x_{i−1} − w_i x_i)²]/2σ_i² + E[(x_N − g)²]/2σ_g² − Σ_i H(N(μ_i, v_i)) + λa²/2`
/// plus normalizing constants, where `x_0` is the sensed temperature.
#[derive(Debug, Clone)]
pub struct Thermostat {
    pub config: ThermostatConfig,
    /// Stochastic levels bottom first, the sensory level included.
    levels: Vec<LevelSpec>,
    top_mean: f64,
    top_var: f64,
    ctx: Context,
}

impl Thermostat {
    pub fn new(config: ThermostatConfig) -> Result<Self> {
        if !(config.sensor_var > 0.0) || !(config.goal_var > 0.0) || config.env_var < 0.0 || config.action_cost < 0.0 {
            return Err(Error::Config("thermostat needs positive sensor and goal variances".into()));
        }
        let all: Vec<LevelSpec> = std::iter::once(LevelSpec {
            gain: 1.0,
            var: config.sensor_var,
        })
        .chain(config.levels.iter().copied())
        .collect();
        if all.iter().any(|l| l.var < 0.0 || !l.gain.is_finite()) {
            return Err(Error::Config("level variances must be nonnegative".into()));
        }
        // fold from the top: a deterministic level merges into the level
        // above it, or into the goal prior at the top
        let (mut top_mean, mut top_var) = (config.goal, config.goal_var);
        let mut stack: Vec<LevelSpec> = Vec::new();
        for l in all.iter().rev() {
            if l.var > 0.0 {
                stack.push(*l);
            } else if let Some(above) = stack.last_mut() {
                *above = LevelSpec {
                    gain: l.gain * above.gain,
                    var: l.gain * l.gain * above.var,
                };
            } else {
                top_mean *= l.gain;
                top_var *= l.gain * l.gain;
            }
        }
        stack.reverse();
        let ctx = Self::context_for(&config, top_mean, top_var)?;
        Ok(Self {
            config,
            levels: stack,
            top_mean,
            top_var,
            ctx,
        })
    }

    fn context_for(cfg: &ThermostatConfig, top_mean: f64, top_var: f64) -> Result<Context> {
        let prior = GaussianState::scalar(top_mean, top_var)?;
        // (s, a) ↦ (N(x0 + a, env_var), a)
        let k = GaussianChannel::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 1.0]),
            DVector::from_vec(vec![cfg.x0, 0.0]),
            DMatrix::from_diagonal(&DVector::from_vec(vec![cfg.env_var, 0.0])),
        )?;
        Context::new(prior.into(), k.into())
    }

    /// Number of stochastic latent levels.
    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    fn per_level(&self) -> usize {
        match self.config.mode {
            ThermostatMode::Fep => 1,
            ThermostatMode::DeepAi => 2,
        }
    }

    /// Index of the action parameter.
    pub fn action_index(&self) -> usize {
        self.depth() * self.per_level()
    }

    /// Mean sensed temperature `x0 + a`.
    pub fn sensed_mean(&self, theta: &[f64]) -> f64 {
        self.config.x0 + theta[self.action_index()]
    }

    /// Optimal belief variances, which are also the Laplace variances.
    pub fn laplace_vars(&self) -> Vec<f64> {
        let n = self.depth();
        (0..n)
            .map(|i| {
                let below = self.levels[i].gain.powi(2) / self.levels[i].var;
                let above = if i + 1 < n {
                    1.0 / self.levels[i + 1].var
                } else {
                    1.0 / self.top_var
                };
                1.0 / (below + above)
            })
            .collect()
    }

    /// Beliefs `(μ_i, v_i)` and action from a parameter vector.
    fn decode(&self, theta: &[f64]) -> (Vec<f64>, Vec<f64>, f64) {
        let n = self.depth();
        match self.config.mode {
            ThermostatMode::Fep => (theta[..n].to_vec(), self.laplace_vars(), theta[n]),
            ThermostatMode::DeepAi => (
                (0..n).map(|i| theta[2 * i]).collect(),
                (0..n).map(|i| theta[2 * i + 1].exp()).collect(),
                theta[2 * n],
            ),
        }
    }

    /// Initial parameters: beliefs at `x0` with unit variance, no action.
    pub fn default_theta0(&self) -> Vec<f64> {
        let mut t = Vec::new();
        for _ in 0..self.depth() {
            t.push(self.config.x0);
            if self.config.mode == ThermostatMode::DeepAi {
                t.push(0.0);
            }
        }
        t.push(0.0);
        t
    }

    /// Free energy with gradients of the means (`m_0` being the sensed
    /// mean) and variances (`V_0` the environment variance).
    fn energy(&self, mu: &[f64], v: &[f64], a: f64) -> (f64, Vec<f64>, Vec<f64>) {
        let n = self.depth();
        let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
        let m: Vec<f64> = std::iter::once(self.config.x0 + a).chain(mu.iter().copied()).collect();
        let var: Vec<f64> = std::iter::once(self.config.env_var).chain(v.iter().copied()).collect();
        let (mut f, mut gm, mut gv) = (0.0, vec![0.0; n + 1], vec![0.0; n + 1]);
        for i in 1..=n {
            let LevelSpec { gain: w, var: s } = self.levels[i - 1];
            let r = m[i - 1] - w * m[i];
            f += (r * r + var[i - 1] + w * w * var[i]) / (2.0 * s) + 0.5 * s.ln() + half_ln_2pi;
            gm[i - 1] += r / s;
            gm[i] -= w * r / s;
            gv[i - 1] += 1.0 / (2.0 * s);
            gv[i] += w * w / (2.0 * s);
        }
        let r = m[n] - self.top_mean;
        f += (r * r + var[n]) / (2.0 * self.top_var) + 0.5 * self.top_var.ln() + half_ln_2pi;
        gm[n] += r / self.top_var;
        gv[n] += 1.0 / (2.0 * self.top_var);
        for vi in v {
            f -= 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * vi).ln();
        }
        f += 0.5 * self.config.action_cost * a * a;
        gm[0] += self.config.action_cost * a;
        (f, gm, gv)
    }

    /// Minimizer of the free energy: optimal variances in closed form, then
    /// Newton steps on the (quadratic) means and action.
    fn solve_static(&self) -> Result<Vec<f64>> {
        let mut theta = self.default_theta0();
        let per = self.per_level();
        if self.config.mode == ThermostatMode::DeepAi {
            for (i, v) in self.laplace_vars().iter().enumerate() {
                theta[per * i + 1] = v.ln();
            }
        }
        let idx: Vec<usize> = (0..self.depth()).map(|i| per * i).chain([self.action_index()]).collect();
        let h = 1e-3;
        for _ in 0..3 {
            let g0 = self.analytic(&theta)?;
            let mut hess = DMatrix::zeros(idx.len(), idx.len());
            for (c, &j) in idx.iter().enumerate() {
                let (mut up, mut down) = (theta.clone(), theta.clone());
                up[j] += h;
                down[j] -= h;
                let (gu, gd) = (self.analytic(&up)?, self.analytic(&down)?);
                for (r, &i) in idx.iter().enumerate() {
                    hess[(r, c)] = (gu[i] - gd[i]) / (2.0 * h);
                }
            }
            let rhs = DVector::from_iterator(idx.len(), idx.iter().map(|&i| -g0[i]));
            let step = hess.lu().solve(&rhs).ok_or_else(|| Error::Singular("thermostat Hessian".into()))?;
            for (r, &i) in idx.iter().enumerate() {
                theta[i] += step[r];
            }
        }
        Ok(theta)
    }

    fn analytic(&self, theta: &[f64]) -> Result<Vec<f64>> {
        check_dim(theta, self.dim())?;
        let (mu, v, a) = self.decode(theta);
        let (_, gm, gv) = self.energy(&mu, &v, a);
        let n = self.depth();
        let mut g = Vec::with_capacity(self.dim());
        for i in 0..n {
            g.push(gm[i + 1]);
            if self.config.mode == ThermostatMode::DeepAi {
                g.push(v[i] * gv[i + 1] - 0.5);
            }
        }
        g.push(gm[0]);
        Ok(g)
    }
}

impl ParametricGame for Thermostat {
    fn name(&self) -> &str {
        match self.config.mode {
            ThermostatMode::Fep => "thermostat_fep",
            ThermostatMode::DeepAi => "thermostat_deep_ai",
        }
    }

    fn dim(&self) -> usize {
        self.action_index() + 1
    }

    fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for i in 1..=self.depth() {
            names.push(format!("mu_{i}"));
            if self.config.mode == ThermostatMode::DeepAi {
                names.push(format!("log_var_{i}"));
            }
        }
        names.push("action".into());
        names
    }

    fn context(&self) -> &Context {
        &self.ctx
    }

    fn objective(&self, theta: &[f64]) -> Result<f64> {
        check_dim(theta, self.dim())?;
        let (mu, v, a) = self.decode(theta);
        Ok(self.energy(&mu, &v, a).0)
    }

    fn gradient(&self, theta: &[f64]) -> Option<Result<Vec<f64>>> {
        Some(self.analytic(theta))
    }

    /// Forward: the generative chain from the top latent to the sensed
    /// temperature, paired with the action. Backward: the top-level belief.
    fn play(&self, theta: &[f64]) -> Result<BayesLens> {
        check_dim(theta, self.dim())?;
        let (mu, v, a) = self.decode(theta);
        let n = self.depth();
        let (mut gain, mut var) = (1.0, 0.0);
        for l in &self.levels {
            var += gain * gain * l.var;
            gain *= l.gain;
        }
        let forward = GaussianChannel::new(
            DMatrix::from_column_slice(2, 1, &[gain, 0.0]),
            DVector::from_vec(vec![0.0, a]),
            DMatrix::from_diagonal(&DVector::from_vec(vec![var, 0.0])),
        )?;
        let belief = GaussianChannel::new(
            DMatrix::zeros(1, 2),
            DVector::from_element(1, mu[n - 1]),
            DMatrix::from_element(1, 1, v[n - 1]),
        )?;
        BayesLens::new(
            forward.into(),
            StateDependentChannel::constant(EuclideanSpace::new(1).into(), belief.into()),
        )
    }

    fn static_equilibrium(&self) -> Result<StaticSolution> {
        let theta = self.solve_static()?;
        let phi = self.objective(&theta)?;
        Ok(StaticSolution { theta, phi })
    }
}

fn point_of(v: &Value) -> Result<Point> {
    match v {
        Value::Atom(i) => Ok(Point::Atom(*i)),
        Value::Real(x) => Ok(Point::Vector(DVector::from_column_slice(x))),
        other => Err(Error::Config(format!("{other:?} is not a point"))),
    }
}

fn value_of(p: &Point) -> Value {
    match p {
        Point::Atom(i) => Value::Atom(*i),
        Point::Vector(x) => Value::Real(x.iter().copied().collect()),
    }
}

/// A placeholder point of a space, used for initial wire states.
pub fn origin(space: &Space) -> Value {
    match space {
        Space::Finite(_) => Value::Atom(0),
        Space::Euclidean(e) => Value::Real(vec![0.0; e.dim()]),
    }
}

/// Samples `c(v)`; finite channels give their exact successor rows.
fn channel_successors(c: &Channel, v: &Value) -> Option<dynamics::Dist> {
    let c = c.as_finite().ok()?;
    Some(c.row(v.as_atom()).iter().enumerate().map(|(j, &p)| (Value::Atom(j), p)).collect())
}

fn channel_system(c: Channel, input_of: fn(&Value) -> &Value) -> Arc<dyn DynSystem> {
    if c.as_finite().is_ok() {
        FnSystem::new(
            |s| s.clone(),
            move |_, i| channel_successors(&c, input_of(i)).expect("finite channel"),
        )
    } else {
        SampledSystem::new(
            |s| s.clone(),
            move |s, i, rng| match point_of(input_of(i)).and_then(|p| c.at(&p)) {
                Ok(state) => value_of(&state.sample(rng)),
                Err(_) => s.clone(),
            },
        )
    }
}

/// Lifts a static context: the autonomous part emits a fresh draw from the
/// prior every step (exactly the prior in exact mode), the responder applies
/// the continuation to the observed `y` of its input `(y, m)`.
pub fn lift_context(ctx: &Context) -> DynContext {
    let prior = ctx.prior.clone();
    let autonomous: Arc<dyn DynSystem> = match &prior {
        State::Finite(p) => {
            let p = p.clone();
            FnSystem::new(
                |s| Value::pair(s.clone(), Value::Unit),
                move |_, _| p.probs().iter().enumerate().map(|(i, &q)| (Value::Atom(i), q)).collect(),
            )
        }
        State::Gaussian(_) => SampledSystem::new(
            |s| Value::pair(s.clone(), Value::Unit),
            move |_, _, rng| value_of(&prior.sample(rng)),
        ),
    };
    DynContext {
        autonomous,
        responder: channel_system(ctx.continuation.clone(), |i| i.get(0)),
    }
}

/// Forward component: state `(θ, [L(θ)], y)`, reads out `((θ, [L]), y)`.
struct ParamForward {
    game: Arc<dyn ParametricGame>,
    dynamics: GradientDynamics,
}

impl DynSystem for ParamForward {
    fn readout(&self, state: &Value) -> Value {
        Value::pair(Value::pair(state.get(0).clone(), state.get(1).clone()), state.get(2).clone())
    }

    fn successors(&self, _: &Value, _: &Value) -> Option<dynamics::Dist> {
        None
    }

    fn sample(&self, state: &Value, x: &Value, rng: &mut StdRng) -> Value {
        let theta = state.get(0).as_real();
        let next = self
            .dynamics
            .step(self.game.as_ref(), theta)
            .unwrap_or_else(|_| vec![f64::NAN; theta.len()]);
        let loss = self.game.objective(&next).unwrap_or(f64::NAN);
        let y = self
            .game
            .play(theta)
            .and_then(|l| l.forward().at(&point_of(x)?))
            .map(|s| value_of(&s.sample(rng)))
            .unwrap_or_else(|_| state.get(2).clone());
        Value::Tuple(vec![Value::Real(next), Value::real(loss), y])
    }
}

/// Backward component: samples the played recognition channel at the
/// responder's output, using the parameters carried in the residual.
struct ParamBackward {
    game: Arc<dyn ParametricGame>,
}

impl DynSystem for ParamBackward {
    fn readout(&self, state: &Value) -> Value {
        state.clone()
    }

    fn successors(&self, _: &Value, _: &Value) -> Option<dynamics::Dist> {
        None
    }

    fn sample(&self, state: &Value, input: &Value, rng: &mut StdRng) -> Value {
        let theta = input.get(0).get(0).as_real();
        let prior = &self.game.context().prior;
        self.game
            .play(theta)
            .and_then(|l| l.backward_at(prior))
            .and_then(|c| c.at(&point_of(input.get(1))?))
            .map(|s| value_of(&s.sample(rng)))
            .unwrap_or_else(|_| state.clone())
    }
}

/// Run limits for a realisation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub max_steps: usize,
    /// Quiescence threshold on the parameter coordinates.
    pub eps_fix: f64,
    /// Consecutive quiet steps required.
    pub window: usize,
    pub seed: u64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            max_steps: 5000,
            eps_fix: 1e-9,
            window: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Realised {
    pub trajectory: Trajectory,
    /// Parameters per recorded step.
    pub params: Vec<Vec<f64>>,
    pub objectives: Vec<f64>,
    pub theta_star: Option<Vec<f64>>,
    pub steps_to_fix: Option<usize>,
    /// Objectives never rose by more than [`EPS_MONO`] in one step.
    pub monotone: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum RealiseError {
    #[error("objective diverged at step {step} (value {objective})")]
    Diverged {
        step: usize,
        objective: f64,
        trajectory: Box<Trajectory>,
    },
    #[error(transparent)]
    Core(#[from] Error),
}

fn names(prefix: &str, n: usize) -> Vec<String> {
    if n == 1 {
        vec![prefix.to_string()]
    } else {
        (0..n).map(|i| format!("{prefix}_{i}")).collect()
    }
}

/// The closed system of a realisation and its initial state.
pub fn realisation_system(game: Arc<dyn ParametricGame>, dynamics: &GradientDynamics, theta0: &[f64]) -> Result<(ClosedSystem, Value)> {
    check_dim(theta0, game.dim())?;
    let lens0 = game.play(theta0)?;
    let ctx = game.context().clone();
    let (x_space, y_space) = (ctx.prior.space(), lens0.forward().codomain());
    let lens = DynLens {
        forward: Arc::new(ParamForward {
            game: game.clone(),
            dynamics: dynamics.clone(),
        }),
        backward: Arc::new(ParamBackward { game: game.clone() }),
    };
    let loss0 = game.objective(theta0).unwrap_or(f64::NAN);
    let (x0, y0, a0) = (origin(&x_space), origin(&y_space), origin(&x_space));
    let z0 = Value::Tuple(vec![
        x0.clone(),
        Value::Tuple(vec![Value::Real(theta0.to_vec()), Value::real(loss0), y0.clone()]),
        y0.clone(),
        a0.clone(),
    ]);
    let count = |v: &Value| v.flatten().len();
    let mut state_names = names("x", count(&x0));
    state_names.extend(game.param_names());
    state_names.push("objective".into());
    state_names.extend(names("y", count(&y0)));
    state_names.extend(names("b", count(&y0)));
    state_names.extend(names("a", count(&a0)));
    let observable_names = state_names.iter().map(|n| format!("wire_{n}")).collect();
    let sys = close(&lens, &lift_context(&ctx))
        .with_state_names(state_names)
        .with_observable_names(observable_names)
        .with_metric(|z| z.get(1).get(0).clone());
    Ok((sys, z0))
}

/// Runs the realisation to a fixed point or `max_steps`.
pub fn realise_gradient(
    game: Arc<dyn ParametricGame>,
    dynamics: &GradientDynamics,
    theta0: &[f64],
    opts: RunOptions,
) -> std::result::Result<Realised, RealiseError> {
    let (sys, z0) = realisation_system(game, dynamics, theta0)?;
    let fixed = dynamics::find_fixed_point(&sys, &z0, opts.max_steps, opts.eps_fix, opts.window, opts.seed);
    let steps = fixed.as_ref().map_or(opts.max_steps, |f| f.step);
    let mut trajectory = dynamics::run(&sys, &z0, steps, opts.seed);
    let params: Vec<Vec<f64>> = trajectory
        .records
        .iter()
        .map(|r| r.state.get(1).get(0).as_real().to_vec())
        .collect();
    let objectives: Vec<f64> = trajectory.records.iter().map(|r| r.state.get(1).get(1).as_real()[0]).collect();
    if let Some(t) = objectives.iter().position(|f| !f.is_finite() || *f > DIVERGENCE_LIMIT) {
        trajectory.records.truncate(t + 1);
        return Err(RealiseError::Diverged {
            step: t,
            objective: objectives[t],
            trajectory: Box::new(trajectory),
        });
    }
    let monotone = objectives.windows(2).all(|w| w[1] <= w[0] + EPS_MONO);
    Ok(Realised {
        trajectory,
        theta_star: fixed.as_ref().map(|_| params[steps].clone()),
        steps_to_fix: fixed.map(|f| f.step),
        params,
        objectives,
        monotone,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckStatus {
    Pass,
    Fail,
    Inconclusive,
}

impl CheckStatus {
    /// Process exit code for the status.
    pub fn exit_code(self) -> i32 {
        match self {
            CheckStatus::Pass => 0,
            CheckStatus::Fail => 1,
            CheckStatus::Inconclusive => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CyberReport {
    pub game: String,
    pub status: CheckStatus,
    /// Loss at the dynamic fixed point.
    pub phi_dynamic: Option<f64>,
    /// Loss at the static equilibrium.
    pub phi_static: f64,
    pub steps_to_fix: Option<usize>,
    pub theta_star: Option<Vec<f64>>,
    pub theta_static: Vec<f64>,
    pub tol: f64,
    pub monotone: bool,
    pub diverged: bool,
    #[serde(skip)]
    pub trajectory: Trajectory,
}

/// Compares the realisation's fixed point with a static equilibrium:
/// pass iff `φ(θ*) ≤ φ_G(σ*) + tol`; no fixed point (or divergence) is
/// inconclusive.
pub fn cybernetic_check(
    game: Arc<dyn ParametricGame>,
    dynamics: &GradientDynamics,
    theta0: &[f64],
    opts: RunOptions,
    tol: f64,
) -> Result<CyberReport> {
    let stat = game.static_equilibrium()?;
    let name = game.name().to_string();
    let (realised, diverged) = match realise_gradient(game.clone(), dynamics, theta0, opts) {
        Ok(r) => (r, false),
        Err(RealiseError::Diverged { trajectory, .. }) => {
            return Ok(CyberReport {
                game: name,
                status: CheckStatus::Inconclusive,
                phi_dynamic: None,
                phi_static: stat.phi,
                steps_to_fix: None,
                theta_star: None,
                theta_static: stat.theta,
                tol,
                monotone: false,
                diverged: true,
                trajectory: *trajectory,
            })
        }
        Err(RealiseError::Core(e)) => return Err(e),
    };
    let phi_dynamic = match &realised.theta_star {
        Some(t) => Some(game.objective(t)?),
        None => None,
    };
    let status = match phi_dynamic {
        None => CheckStatus::Inconclusive,
        Some(p) if p <= stat.phi + tol => CheckStatus::Pass,
        Some(_) => CheckStatus::Fail,
    };
    Ok(CyberReport {
        game: name,
        status,
        phi_dynamic,
        phi_static: stat.phi,
        steps_to_fix: realised.steps_to_fix,
        theta_star: realised.theta_star,
        theta_static: stat.theta,
        tol,
        monotone: realised.monotone,
        diverged,
        trajectory: realised.trajectory,
    })
}

/// Thermostat outcome: the cybernetic check plus the sensed temperature.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThermostatReport {
    pub check: CyberReport,
    pub goal: f64,
    /// `x0 + a` at the fixed point.
    pub sensed_mean: Option<f64>,
    pub goal_error: Option<f64>,
}

/// Realises the thermostat with its analytic free-energy gradient.
pub fn realise_thermostat(
    config: ThermostatConfig,
    dynamics: &GradientDynamics,
    theta0: Option<Vec<f64>>,
    opts: RunOptions,
    tol: f64,
) -> Result<ThermostatReport> {
    let game = Arc::new(Thermostat::new(config)?);
    let theta0 = theta0.unwrap_or_else(|| game.default_theta0());
    let check = cybernetic_check(game.clone(), dynamics, &theta0, opts, tol)?;
    let sensed_mean = check.theta_star.as_ref().map(|t| game.sensed_mean(t));
    let goal = game.config.goal;
    Ok(ThermostatReport {
        goal_error: sensed_mean.map(|s| (s - goal).abs()),
        sensed_mean,
        goal,
        check,
    })
}

/// Mode-learning realisation (variances at their Laplace values).
pub fn realise_fep(mut config: ThermostatConfig, dynamics: &GradientDynamics, opts: RunOptions, tol: f64) -> Result<ThermostatReport> {
    config.mode = ThermostatMode::Fep;
    realise_thermostat(config, dynamics, None, opts, tol)
}

/// Full variational realisation (means and variances learned).
pub fn realise_deep_ai(mut config: ThermostatConfig, dynamics: &GradientDynamics, opts: RunOptions, tol: f64) -> Result<ThermostatReport> {
    config.mode = ThermostatMode::DeepAi;
    realise_thermostat(config, dynamics, None, opts, tol)
}
