//! Optimization games over Bayesian lenses.
//!
//! An atomic game is a finite list of strategies, each played as a lens, and
//! an objective (a loss) evaluated in a context. Best responses are the
//! strategies within [`TOL.tie`](crate::TOL) of the minimal loss, and do not
//! depend on the current strategy. Composite games combine atoms sequentially
//! or in parallel; each atom is then judged in its *local* context, the
//! outer context pre- and post-composed with the lenses its neighbours play.

pub mod active;
pub mod family;
pub mod objectives;

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::lens::{compose_lens, exact_lens_of, tensor_lens, BayesLens, StateDependentChannel};
use crate::prob::{self, Channel, Divergence, McOptions, Space, State};
use crate::TOL;

pub use active::{make_active_inference_game, ActiveInferenceGame, AiLevel};
pub use family::{ChannelFamily, Enumerated, LinearGaussian, RowSimplexGrid, SoftmaxKernel};
pub use objectives::{autoencoder_objective, inference_objective, mle_objective, vae_objective, AeForm, MleScore};

/// Largest number of joint profiles an equilibrium search will enumerate.
pub const MAX_PROFILES: usize = 5_000_000;

/// A context `⟨π|k⟩` for a simple game `(X, X) ↦ (Y, Y)`: a prior on `X`
/// and a continuation `k : Y ⇸ Y`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Context {
    pub prior: State,
    pub continuation: Channel,
}

impl Context {
    pub fn new(prior: State, continuation: Channel) -> Result<Self> {
        if continuation.domain() != continuation.codomain() {
            return Err(Error::SpaceMismatch {
                context: "context",
                detail: "continuation must be an endochannel".into(),
            });
        }
        Ok(Self { prior, continuation })
    }
}

/// The backward half of a strategy.
#[derive(Debug, Clone)]
pub enum Backward {
    /// A fixed channel, whatever the prior.
    Kernel(Channel),
    /// The exact Bayesian inversion of the forward channel at the prior.
    ExactInverse,
    Dependent(StateDependentChannel),
}

#[derive(Debug, Clone)]
pub struct Strategy {
    pub forward: Channel,
    pub backward: Backward,
    /// How the strategy is reported in results.
    pub label: Value,
}

impl Strategy {
    /// The play function.
    pub fn lens(&self) -> Result<BayesLens> {
        match &self.backward {
            Backward::Kernel(k) => BayesLens::new(
                self.forward.clone(),
                StateDependentChannel::constant(self.forward.domain(), k.clone()),
            ),
            Backward::ExactInverse => Ok(exact_lens_of(&self.forward)),
            Backward::Dependent(s) => BayesLens::new(self.forward.clone(), s.clone()),
        }
    }
}

fn backward_label(b: &Backward, i: usize) -> Value {
    match b {
        Backward::Kernel(k) => serde_json::to_value(k).unwrap_or(Value::Null),
        Backward::ExactInverse => json!("exact"),
        Backward::Dependent(_) => json!(format!("dependent#{i}")),
    }
}

#[derive(Debug, Clone)]
pub enum Objective {
    Mle(MleScore),
    Inference(Divergence),
    Vae,
    Autoencoder(Divergence, AeForm),
}

/// A game with an enumerated strategy space and a constant best response.
#[derive(Debug)]
pub struct AtomicGame {
    pub name: String,
    pub objective: Objective,
    strategies: Vec<Strategy>,
    lenses: Vec<BayesLens>,
    mc: McOptions,
}

impl AtomicGame {
    pub fn new(name: impl Into<String>, objective: Objective, strategies: Vec<Strategy>, mc: McOptions) -> Result<Self> {
        let name = name.into();
        if strategies.is_empty() {
            return Err(Error::EmptyStrategySpace(name));
        }
        let lenses = strategies.iter().map(Strategy::lens).collect::<Result<Vec<_>>>()?;
        let (dom, cod) = (lenses[0].dom(), lenses[0].cod());
        if lenses.iter().any(|l| l.dom() != dom || l.cod() != cod) {
            return Err(Error::GameShape(format!("strategies of {name} play lenses of different shapes")));
        }
        Ok(Self {
            name,
            objective,
            strategies,
            lenses,
            mc,
        })
    }

    pub fn strategies(&self) -> &[Strategy] {
        &self.strategies
    }

    pub fn lens(&self, i: usize) -> &BayesLens {
        &self.lenses[i]
    }

    pub fn dom(&self) -> (Space, Space) {
        self.lenses[0].dom()
    }

    pub fn cod(&self) -> (Space, Space) {
        self.lenses[0].cod()
    }

    /// Loss of strategy `i` in `ctx`. Non-finite values other than `+∞` are
    /// reported as `+∞`.
    pub fn fitness(&self, i: usize, ctx: &Context) -> Result<f64> {
        let lens = &self.lenses[i];
        let v = match &self.objective {
            Objective::Mle(score) => {
                let pi = prob::pushforward(lens.forward(), &ctx.prior)?;
                mle_objective(&pi, &ctx.continuation, *score)?
            }
            Objective::Inference(d) => inference_objective(lens.forward(), lens.backward(), d, ctx, self.mc)?,
            Objective::Vae => vae_objective(lens.forward(), lens.backward(), ctx)?,
            Objective::Autoencoder(d, form) => autoencoder_objective(lens.forward(), lens.backward(), d, ctx, *form, self.mc)?,
        };
        Ok(if v.is_nan() { f64::INFINITY } else { v })
    }

    /// Loss of every strategy, in strategy order.
    pub fn objective_table(&self, ctx: &Context) -> Result<Vec<f64>> {
        (0..self.strategies.len()).into_par_iter().map(|i| self.fitness(i, ctx)).collect()
    }

    /// The best response set; it is the same whatever strategy is current.
    pub fn best_response(&self, ctx: &Context) -> Result<Vec<usize>> {
        Ok(argmin_set(&self.objective_table(ctx)?, TOL.tie))
    }
}

/// Indices within `tie` of the minimum, in index order.
pub fn argmin_set(values: &[f64], tie: f64) -> Vec<usize> {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    (0..values.len())
        .filter(|&i| values[i] <= min + tie || (min == f64::INFINITY && values[i] == f64::INFINITY))
        .collect()
}

/// An open game built from atoms. A profile assigns a strategy index to each
/// atom, in left-to-right order.
#[derive(Debug, Clone)]
pub enum Game {
    Atomic(Arc<AtomicGame>),
    /// `Seq(g, h)` plays `g` first.
    Seq(Box<Game>, Box<Game>),
    Par(Box<Game>, Box<Game>),
}

impl From<AtomicGame> for Game {
    fn from(g: AtomicGame) -> Self {
        Game::Atomic(Arc::new(g))
    }
}

/// Sequential composite `h ∘ g`: `g`'s codomain feeds `h`.
pub fn compose_seq(g: Game, h: Game) -> Result<Game> {
    if g.cod() != h.dom() {
        return Err(Error::GameShape("sequential composite: middle objects differ".into()));
    }
    Ok(Game::Seq(Box::new(g), Box::new(h)))
}

pub fn compose_par(g: Game, h: Game) -> Result<Game> {
    g.dom().0.product(&h.dom().0)?;
    Ok(Game::Par(Box::new(g), Box::new(h)))
}

/// Equilibria together with the composite objective at the first of them.
#[derive(Debug, Clone, Serialize)]
pub struct GameResult {
    pub equilibria: Vec<Value>,
    pub profiles: Vec<Vec<usize>>,
    pub objective: Option<f64>,
}

impl Game {
    pub fn atoms(&self) -> Vec<&AtomicGame> {
        match self {
            Game::Atomic(a) => vec![a.as_ref()],
            Game::Seq(g, h) | Game::Par(g, h) => {
                let mut v = g.atoms();
                v.extend(h.atoms());
                v
            }
        }
    }

    pub fn atom_count(&self) -> usize {
        match self {
            Game::Atomic(_) => 1,
            Game::Seq(g, h) | Game::Par(g, h) => g.atom_count() + h.atom_count(),
        }
    }

    pub fn dom(&self) -> (Space, Space) {
        match self {
            Game::Atomic(a) => a.dom(),
            Game::Seq(g, _) => g.dom(),
            Game::Par(g, h) => product_pair(g.dom(), h.dom()),
        }
    }

    pub fn cod(&self) -> (Space, Space) {
        match self {
            Game::Atomic(a) => a.cod(),
            Game::Seq(_, h) => h.cod(),
            Game::Par(g, h) => product_pair(g.cod(), h.cod()),
        }
    }

    fn check_profile(&self, profile: &[usize]) -> Result<()> {
        let atoms = self.atoms();
        if profile.len() != atoms.len() {
            return Err(Error::DimensionMismatch {
                context: "strategy profile",
                expected: atoms.len(),
                found: profile.len(),
            });
        }
        if let Some((a, &s)) = atoms.iter().zip(profile).find(|(a, &s)| s >= a.strategies.len()) {
            return Err(Error::GameShape(format!("{} has no strategy {s}", a.name)));
        }
        Ok(())
    }

    /// The lens played by `profile`.
    pub fn play(&self, profile: &[usize]) -> Result<BayesLens> {
        self.check_profile(profile)?;
        self.play_unchecked(profile)
    }

    fn play_unchecked(&self, profile: &[usize]) -> Result<BayesLens> {
        match self {
            Game::Atomic(a) => Ok(a.lens(profile[0]).clone()),
            Game::Seq(g, h) => {
                let (pg, ph) = profile.split_at(g.atom_count());
                compose_lens(&h.play_unchecked(ph)?, &g.play_unchecked(pg)?)
            }
            Game::Par(g, h) => {
                let (pg, ph) = profile.split_at(g.atom_count());
                tensor_lens(&g.play_unchecked(pg)?, &h.play_unchecked(ph)?)
            }
        }
    }

    /// The context each atom sees when the others play `profile`.
    pub fn local_contexts(&self, ctx: &Context, profile: &[usize]) -> Result<Vec<Context>> {
        self.check_profile(profile)?;
        let mut out = Vec::with_capacity(profile.len());
        self.collect_contexts(ctx, profile, &mut out)?;
        Ok(out)
    }

    fn collect_contexts(&self, ctx: &Context, profile: &[usize], out: &mut Vec<Context>) -> Result<()> {
        match self {
            Game::Atomic(_) => out.push(ctx.clone()),
            Game::Seq(g, h) => {
                let (pg, ph) = profile.split_at(g.atom_count());
                let (lg, lh) = (g.play_unchecked(pg)?, h.play_unchecked(ph)?);
                let pushed = prob::pushforward(lg.forward(), &ctx.prior)?;
                // g sees h's forward, then the outer continuation, then h's backward
                let k_after = prob::compose_channels(&ctx.continuation, lh.forward())?;
                let k_g = prob::compose_channels(&lh.backward_at(&pushed)?, &k_after)?;
                g.collect_contexts(&Context::new(ctx.prior.clone(), k_g)?, pg, out)?;
                h.collect_contexts(&Context::new(pushed, ctx.continuation.clone())?, ph, out)?;
            }
            Game::Par(g, h) => {
                let (pg, ph) = profile.split_at(g.atom_count());
                let (lg, lh) = (g.play_unchecked(pg)?, h.play_unchecked(ph)?);
                let n1 = lg.forward().domain().factor_count();
                let n2 = lh.forward().domain().factor_count();
                let p1 = prob::marginalize_range(&ctx.prior, 0..n1)?;
                let p2 = prob::marginalize_range(&ctx.prior, n1..n1 + n2)?;
                let (y1, y2) = (lg.forward().codomain(), lh.forward().codomain());
                let (m1, m2) = (y1.factor_count(), y2.factor_count());
                let joint = y1.product(&y2)?;
                let out1 = prob::pushforward(lg.forward(), &p1)?;
                let out2 = prob::pushforward(lh.forward(), &p2)?;
                let k1 = prob::compose_channels(
                    &Channel::projection(&joint, 0..m1)?,
                    &prob::compose_channels(&ctx.continuation, &Channel::attach(&y1, &out2, false)?)?,
                )?;
                let k2 = prob::compose_channels(
                    &Channel::projection(&joint, m1..m1 + m2)?,
                    &prob::compose_channels(&ctx.continuation, &Channel::attach(&y2, &out1, true)?)?,
                )?;
                g.collect_contexts(&Context::new(p1, k1)?, pg, out)?;
                h.collect_contexts(&Context::new(p2, k2)?, ph, out)?;
            }
        }
        Ok(())
    }

    /// Per-atom best response sets at `profile`, each in its local context.
    pub fn best_response(&self, ctx: &Context, profile: &[usize]) -> Result<Vec<Vec<usize>>> {
        let locals = self.local_contexts(ctx, profile)?;
        self.atoms().iter().zip(&locals).map(|(a, c)| a.best_response(c)).collect()
    }

    /// Whether `profile` is a fixed point of the best response.
    pub fn is_equilibrium(&self, ctx: &Context, profile: &[usize]) -> Result<bool> {
        let br = self.best_response(ctx, profile)?;
        Ok(br.iter().zip(profile).all(|(set, s)| set.contains(s)))
    }

    /// Sum of the atoms' losses in their local contexts.
    pub fn total_objective(&self, ctx: &Context, profile: &[usize]) -> Result<f64> {
        let locals = self.local_contexts(ctx, profile)?;
        let mut total = 0.0;
        for ((a, c), &s) in self.atoms().iter().zip(&locals).zip(profile) {
            total += a.fitness(s, c)?;
        }
        Ok(total)
    }

    /// Every profile, in lexicographic order.
    pub fn profiles(&self) -> Result<Vec<Vec<usize>>> {
        let sizes: Vec<usize> = self.atoms().iter().map(|a| a.strategies.len()).collect();
        let total = sizes
            .iter()
            .try_fold(1usize, |acc, &n| acc.checked_mul(n).filter(|&t| t <= MAX_PROFILES));
        let total = total.ok_or_else(|| Error::GameShape(format!("more than {MAX_PROFILES} strategy profiles")))?;
        Ok((0..total)
            .map(|mut idx| {
                let mut p = vec![0; sizes.len()];
                for (slot, &n) in p.iter_mut().zip(&sizes).rev() {
                    *slot = idx % n;
                    idx /= n;
                }
                p
            })
            .collect())
    }

    /// All fixed points of the best response, by exhaustive search.
    pub fn equilibria(&self, ctx: &Context) -> Result<Vec<Vec<usize>>> {
        let profiles = self.profiles()?;
        if let Game::Atomic(a) = self {
            return Ok(a.best_response(ctx)?.into_iter().map(|i| vec![i]).collect());
        }
        let flags = profiles
            .par_iter()
            .map(|p| self.is_equilibrium(ctx, p))
            .collect::<Result<Vec<bool>>>()?;
        Ok(profiles.into_iter().zip(flags).filter(|(_, f)| *f).map(|(p, _)| p).collect())
    }

    /// Profiles minimizing [`Game::total_objective`], with the minimum.
    pub fn total_argmin(&self, ctx: &Context) -> Result<(Vec<Vec<usize>>, f64)> {
        let profiles = self.profiles()?;
        let values = profiles
            .par_iter()
            .map(|p| self.total_objective(ctx, p).map(|v| if v.is_nan() { f64::INFINITY } else { v }))
            .collect::<Result<Vec<f64>>>()?;
        let best = argmin_set(&values, TOL.tie);
        let min = best.first().map_or(f64::INFINITY, |&i| values[i]);
        Ok((best.into_iter().map(|i| profiles[i].clone()).collect(), min))
    }

    /// Reporting form of a profile: one label per atom, keyed by atom name.
    pub fn encode(&self, profile: &[usize]) -> Value {
        let atoms = self.atoms();
        if atoms.len() == 1 {
            return atoms[0].strategies[profile[0]].label.clone();
        }
        Value::Array(
            atoms
                .iter()
                .zip(profile)
                .map(|(a, &s)| json!({"game": a.name, "strategy": a.strategies[s].label}))
                .collect(),
        )
    }

    pub fn solve(&self, ctx: &Context) -> Result<GameResult> {
        let profiles = self.equilibria(ctx)?;
        let objective = match profiles.first() {
            Some(p) => Some(self.total_objective(ctx, p)?),
            None => None,
        };
        Ok(GameResult {
            equilibria: profiles.iter().map(|p| self.encode(p)).collect(),
            profiles,
            objective,
        })
    }
}

fn product_pair(a: (Space, Space), b: (Space, Space)) -> (Space, Space) {
    (a.0.product(&b.0).expect("same backend"), a.1.product(&b.1).expect("same backend"))
}

/// Maximum-likelihood game over candidate states; each plays `⟨π|!⟩`.
pub fn make_mle_game(candidates: Vec<State>, score: MleScore) -> Result<Game> {
    let first = candidates
        .first()
        .ok_or_else(|| Error::EmptyStrategySpace("no candidate states".into()))?;
    let unit = first.space().unit_like();
    let strategies = candidates
        .iter()
        .map(|pi| {
            Ok(Strategy {
                forward: Channel::constant(&unit, pi)?,
                backward: Backward::Kernel(Channel::discard(&pi.space())),
                label: serde_json::to_value(pi).unwrap_or(Value::Null),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AtomicGame::new("mle", Objective::Mle(score), strategies, McOptions::default())?.into())
}

/// Inference game for a fixed forward channel `c` over the given backward
/// strategies.
pub fn make_inference_game_from(c: &Channel, backs: Vec<Backward>, d: Divergence) -> Result<Game> {
    let strategies = backs
        .into_iter()
        .enumerate()
        .map(|(i, b)| Strategy {
            forward: c.clone(),
            label: backward_label(&b, i),
            backward: b,
        })
        .collect();
    Ok(AtomicGame::new("inference", Objective::Inference(d), strategies, McOptions::default())?.into())
}

/// Inference game whose backward strategies are the grid of `family`,
/// optionally with the exact inversion added last.
pub fn make_inference_game(c: &Channel, family: &dyn ChannelFamily, d: Divergence, include_exact: bool) -> Result<Game> {
    make_inference_game_from(c, family_backwards(family, include_exact)?, d)
}

fn family_backwards(family: &dyn ChannelFamily, include_exact: bool) -> Result<Vec<Backward>> {
    let mut v: Vec<Backward> = family.members()?.into_iter().map(Backward::Kernel).collect();
    if include_exact {
        v.push(Backward::ExactInverse);
    }
    Ok(v)
}

fn pair_strategies(forwards: &[Channel], backs: &[Backward]) -> Vec<Strategy> {
    forwards
        .iter()
        .enumerate()
        .flat_map(|(i, f)| {
            backs.iter().enumerate().map(move |(j, b)| Strategy {
                forward: f.clone(),
                backward: b.clone(),
                label: json!({"forward": serde_json::to_value(f).unwrap_or(json!(i)), "backward": backward_label(b, j)}),
            })
        })
        .collect()
}

/// Variational autoencoder game over `forwards × backs`.
pub fn make_vae_game_from(forwards: &[Channel], backs: &[Backward]) -> Result<Game> {
    Ok(AtomicGame::new("vae", Objective::Vae, pair_strategies(forwards, backs), McOptions::default())?.into())
}

pub fn make_vae_game(f: &dyn ChannelFamily, p: &dyn ChannelFamily, include_exact: bool) -> Result<Game> {
    make_vae_game_from(&f.members()?, &family_backwards(p, include_exact)?)
}

/// Generalized autoencoder game over `forwards × backs`.
pub fn make_autoencoder_game_from(forwards: &[Channel], backs: &[Backward], d: Divergence, form: AeForm) -> Result<Game> {
    Ok(AtomicGame::new(
        "autoencoder",
        Objective::Autoencoder(d, form),
        pair_strategies(forwards, backs),
        McOptions::default(),
    )?
    .into())
}

pub fn make_autoencoder_game(
    f: &dyn ChannelFamily,
    p: &dyn ChannelFamily,
    d: Divergence,
    form: AeForm,
    include_exact: bool,
) -> Result<Game> {
    make_autoencoder_game_from(&f.members()?, &family_backwards(p, include_exact)?, d, form)
}
