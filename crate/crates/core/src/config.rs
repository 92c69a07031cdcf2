//! JSON configurations for static games and realisation scenarios.

use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::games::active::{make_active_inference_game, AiLevel};
use crate::games::family::RowSimplexGrid;
use crate::games::{
    make_autoencoder_game_from, make_inference_game_from, make_mle_game, make_vae_game_from, AeForm, Backward, Context, Game, MleScore,
};
use crate::prob::{Channel, Divergence, FiniteChannel, FiniteDist, FiniteSpace, Space, State};
use crate::realisation::{
    cybernetic_check, CyberReport, GaussianVae1d, GradMode, GradientDynamics, ParametricGame, Quadratic, RunOptions, SoftmaxInference,
    Thermostat, ThermostatConfig, FD_STEP,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GameKind {
    Mle,
    Inference,
    Vae,
    Autoencoder,
    ActiveInference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    #[default]
    Finite,
    Gaussian,
}

/// A continuation: `"identity"` or an explicit channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ContinuationConfig {
    Named(String),
    Channel(Channel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextConfig {
    /// Omitted for maximum-likelihood games, whose prior lives on the unit.
    #[serde(default)]
    pub prior: Option<State>,
    pub continuation: ContinuationConfig,
}

/// Backward strategies: a row grid (finite only), explicit kernels, or
/// nothing but the exact inverse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BackwardConfig {
    Grid { grid: f64 },
    Kernels { kernels: Vec<Channel> },
}

/// An autoencoder-shaped atom, used for active-inference levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomConfig {
    pub forwards: Vec<Channel>,
    #[serde(default)]
    pub backward: Option<BackwardConfig>,
    #[serde(default = "yes")]
    pub include_exact: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelConfig {
    pub sensory: AtomConfig,
    pub action: AtomConfig,
}

fn yes() -> bool {
    true
}

fn kl() -> String {
    "kl".into()
}

/// A static game and its context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameConfig {
    pub game: GameKind,
    #[serde(default)]
    pub backend: Backend,
    pub context: ContextConfig,
    /// Maximum likelihood: candidate states.
    #[serde(default)]
    pub candidates: Option<Vec<State>>,
    #[serde(default)]
    pub score: MleScore,
    /// Inference: the fixed forward channel.
    #[serde(default)]
    pub forward: Option<Channel>,
    /// Autoencoder and VAE: the forward family.
    #[serde(default)]
    pub forwards: Option<Vec<Channel>>,
    #[serde(default)]
    pub backward: Option<BackwardConfig>,
    #[serde(default = "yes")]
    pub include_exact: bool,
    #[serde(default = "kl")]
    pub divergence: String,
    #[serde(default)]
    pub ae_form: AeForm,
    /// Active inference: levels, bottom first.
    #[serde(default)]
    pub levels: Option<Vec<LevelConfig>>,
    #[serde(default)]
    pub seed: u64,
    /// Also emit the objective of every profile.
    #[serde(default)]
    pub objective_table: bool,
}

fn missing(field: &str, game: GameKind) -> Error {
    Error::Config(format!("{game:?} game needs \"{field}\""))
}

fn backwards(cfg: Option<&BackwardConfig>, dom: &Space, cod: &Space, include_exact: bool) -> Result<Vec<Backward>> {
    let mut out: Vec<Backward> = match cfg {
        None => Vec::new(),
        Some(BackwardConfig::Kernels { kernels }) => kernels.iter().cloned().map(Backward::Kernel).collect(),
        Some(BackwardConfig::Grid { grid }) => {
            let family = RowSimplexGrid::new(dom.as_finite()?.clone(), cod.as_finite()?.clone(), *grid)?;
            use crate::games::family::ChannelFamily;
            family.members()?.into_iter().map(Backward::Kernel).collect()
        }
    };
    if include_exact {
        out.push(Backward::ExactInverse);
    }
    if out.is_empty() {
        return Err(Error::EmptyStrategySpace("no backward strategies".into()));
    }
    Ok(out)
}

fn forward_pair(forwards: &[Channel]) -> Result<(Space, Space)> {
    let f = forwards
        .first()
        .ok_or_else(|| Error::EmptyStrategySpace("no forward channels".into()))?;
    Ok((f.domain(), f.codomain()))
}

impl AtomConfig {
    fn build(&self) -> Result<Game> {
        let (x, y) = forward_pair(&self.forwards)?;
        let backs = backwards(self.backward.as_ref(), &y, &x, self.include_exact)?;
        make_autoencoder_game_from(&self.forwards, &backs, Divergence::KullbackLeibler, AeForm::Joint)
    }
}

impl GameConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    fn check_backend(&self, states: &[&State]) -> Result<()> {
        let ok = states.iter().all(|s| {
            matches!(
                (self.backend, s),
                (Backend::Finite, State::Finite(_)) | (Backend::Gaussian, State::Gaussian(_))
            )
        });
        if !ok {
            return Err(Error::Config(format!("states do not match backend {:?}", self.backend)));
        }
        Ok(())
    }

    fn continuation(&self, space: &Space) -> Result<Channel> {
        match &self.context.continuation {
            ContinuationConfig::Named(n) if n == "identity" => Ok(Channel::identity(space)),
            ContinuationConfig::Named(n) => Err(Error::Config(format!("unknown continuation {n:?}"))),
            ContinuationConfig::Channel(c) => Ok(c.clone()),
        }
    }

    fn prior(&self) -> Result<State> {
        self.context
            .prior
            .clone()
            .ok_or_else(|| Error::Config("context needs a prior".into()))
    }

    /// The game and its context.
    pub fn build(&self) -> Result<(Game, Context)> {
        let kind = self.game;
        match kind {
            GameKind::Mle => {
                let candidates = self.candidates.clone().ok_or_else(|| missing("candidates", kind))?;
                self.check_backend(&candidates.iter().collect::<Vec<_>>())?;
                let first = candidates
                    .first()
                    .ok_or_else(|| Error::EmptyStrategySpace("no candidate states".into()))?;
                let prior = match &self.context.prior {
                    Some(p) => p.clone(),
                    None => match first {
                        State::Finite(_) => FiniteDist::point(FiniteSpace::unit(), 0).into(),
                        State::Gaussian(g) => State::Gaussian(crate::prob::GaussianState::standard(0).tensor(&g.marginalize(0..0)?)),
                    },
                };
                let k = self.continuation(&first.space())?;
                Ok((make_mle_game(candidates, self.score)?, Context::new(prior, k)?))
            }
            GameKind::Inference => {
                let c = self.forward.clone().ok_or_else(|| missing("forward", kind))?;
                let prior = self.prior()?;
                self.check_backend(&[&prior])?;
                let backs = backwards(self.backward.as_ref(), &c.codomain(), &c.domain(), self.include_exact)?;
                let d = Divergence::parse(&self.divergence)?;
                let k = self.continuation(&c.codomain())?;
                Ok((make_inference_game_from(&c, backs, d)?, Context::new(prior, k)?))
            }
            GameKind::Vae | GameKind::Autoencoder => {
                let forwards = self.forwards.clone().ok_or_else(|| missing("forwards", kind))?;
                let (x, y) = forward_pair(&forwards)?;
                let prior = self.prior()?;
                self.check_backend(&[&prior])?;
                let backs = backwards(self.backward.as_ref(), &y, &x, self.include_exact)?;
                let k = self.continuation(&y)?;
                let game = if kind == GameKind::Vae {
                    make_vae_game_from(&forwards, &backs)?
                } else {
                    make_autoencoder_game_from(&forwards, &backs, Divergence::parse(&self.divergence)?, self.ae_form)?
                };
                Ok((game, Context::new(prior, k)?))
            }
            GameKind::ActiveInference => {
                let levels = self.levels.clone().ok_or_else(|| missing("levels", kind))?;
                let levels = levels
                    .iter()
                    .map(|l| {
                        Ok(AiLevel {
                            sensory: l.sensory.build()?,
                            action: l.action.build()?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let ai = make_active_inference_game(levels)?;
                let prior = self.prior()?;
                let k = self.continuation(&ai.game.cod().0)?;
                Ok((ai.game, Context::new(prior, k)?))
            }
        }
    }

    /// Equilibria and objective as JSON. Active-inference games report the
    /// argmin of the summed loss.
    pub fn solve(&self) -> Result<Value> {
        let (game, ctx) = self.build()?;
        let (profiles, objective) = if self.game == GameKind::ActiveInference {
            let (p, v) = game.total_argmin(&ctx)?;
            (p, Some(v))
        } else {
            let r = game.solve(&ctx)?;
            (r.profiles, r.objective)
        };
        Ok(json!({
            "game": self.game,
            "equilibria": profiles.iter().map(|p| game.encode(p)).collect::<Vec<_>>(),
            "profiles": profiles,
            "objective": objective,
        }))
    }

    /// CSV of the total objective of every profile.
    pub fn objective_table_csv(&self) -> Result<String> {
        let (game, ctx) = self.build()?;
        let profiles = game.profiles()?;
        let values = profiles
            .par_iter()
            .map(|p| game.total_objective(&ctx, p))
            .collect::<Result<Vec<f64>>>()?;
        let n = game.atom_count();
        let mut out = String::new();
        let header: Vec<String> = (0..n).map(|i| format!("strategy_{i}")).chain(["objective".to_string()]).collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for (p, v) in profiles.iter().zip(values) {
            for s in p {
                let _ = write!(out, "{s},");
            }
            let _ = writeln!(out, "{v:.16e}");
        }
        Ok(out)
    }
}

/// The parametric game of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "game", rename_all = "snake_case")]
pub enum ScenarioGame {
    Quadratic {
        #[serde(default = "three")]
        target: f64,
        #[serde(default = "one")]
        dim: usize,
    },
    GaussianVae {
        #[serde(default)]
        prior_mean: f64,
        #[serde(default = "unit_f")]
        prior_var: f64,
        #[serde(default = "unit_f")]
        gain: f64,
        #[serde(default = "unit_f")]
        noise: f64,
    },
    SoftmaxInference {
        forward: FiniteChannel,
        prior: FiniteDist,
        #[serde(default)]
        continuation: Option<FiniteChannel>,
        #[serde(default = "tenth")]
        grid: f64,
    },
    Thermostat(ThermostatConfig),
}

fn three() -> f64 {
    3.0
}
fn one() -> usize {
    1
}
fn unit_f() -> f64 {
    1.0
}
fn tenth() -> f64 {
    0.1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradKind {
    #[default]
    Analytic,
    Fd,
}

/// A realisation scenario: a parametric game plus run settings. Omitted
/// settings take per-game defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(flatten)]
    pub game: ScenarioGame,
    #[serde(default)]
    pub eta: Option<f64>,
    #[serde(default)]
    pub max_steps: Option<usize>,
    #[serde(default)]
    pub eps_fix: Option<f64>,
    #[serde(default)]
    pub window: Option<usize>,
    #[serde(default)]
    pub grad: GradKind,
    #[serde(default)]
    pub h: Option<f64>,
    #[serde(default)]
    pub line_search: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub theta0: Option<Vec<f64>>,
    #[serde(default)]
    pub tol: Option<f64>,
}

/// A built scenario.
pub struct Scenario {
    pub game: Arc<dyn ParametricGame>,
    pub dynamics: GradientDynamics,
    pub theta0: Vec<f64>,
    pub opts: RunOptions,
    pub tol: f64,
    thermostat: Option<Arc<Thermostat>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioReport {
    #[serde(flatten)]
    pub check: CyberReport,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sensed_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub goal_error: Option<f64>,
}

impl ScenarioReport {
    /// Report JSON with the path of the trajectory file.
    pub fn to_json(&self, trajectory_csv: &str) -> Value {
        let mut v = serde_json::to_value(self).unwrap_or(Value::Null);
        v["trajectory_csv"] = json!(trajectory_csv);
        v
    }
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn build(&self) -> Result<Scenario> {
        // per-game defaults: (eta, max_steps, eps_fix)
        let (game, defaults, thermostat): (Arc<dyn ParametricGame>, (f64, usize, f64), Option<Arc<Thermostat>>) = match &self.game {
            ScenarioGame::Quadratic { target, dim } => (Arc::new(Quadratic::new(*target, *dim)), (0.1, 5000, 1e-9), None),
            ScenarioGame::GaussianVae {
                prior_mean,
                prior_var,
                gain,
                noise,
            } => (
                Arc::new(GaussianVae1d::new(*prior_mean, *prior_var, *gain, *noise)?),
                (0.05, 5000, 1e-9),
                None,
            ),
            ScenarioGame::SoftmaxInference {
                forward,
                prior,
                continuation,
                grid,
            } => {
                let k = continuation
                    .clone()
                    .unwrap_or_else(|| FiniteChannel::identity(forward.codomain().clone()));
                let ctx = Context::new(prior.clone().into(), k.into())?;
                (
                    Arc::new(SoftmaxInference::new(forward.clone(), ctx, *grid)?),
                    (1.0, 20_000, 1e-10),
                    None,
                )
            }
            ScenarioGame::Thermostat(cfg) => {
                let t = Arc::new(Thermostat::new(cfg.clone())?);
                (t.clone(), (0.1, 500, 1e-9), Some(t))
            }
        };
        let theta0 = match (&self.theta0, &thermostat) {
            (Some(t), _) => t.clone(),
            (None, Some(t)) => t.default_theta0(),
            (None, None) => vec![0.0; game.dim()],
        };
        if theta0.len() != game.dim() {
            return Err(Error::Config(format!(
                "theta0 has {} entries, the game has {} parameters",
                theta0.len(),
                game.dim()
            )));
        }
        let eta = self.eta.unwrap_or(defaults.0);
        if !(eta > 0.0) {
            return Err(Error::Config("eta must be positive".into()));
        }
        let grad = match self.grad {
            GradKind::Analytic => GradMode::Analytic,
            GradKind::Fd => GradMode::Fd {
                h: self.h.unwrap_or(FD_STEP),
            },
        };
        let mut dynamics = GradientDynamics::new(eta, grad);
        dynamics.line_search = self.line_search;
        let opts = RunOptions {
            max_steps: self.max_steps.unwrap_or(defaults.1),
            eps_fix: self.eps_fix.unwrap_or(defaults.2),
            window: self.window.unwrap_or(RunOptions::default().window),
            seed: self.seed,
        };
        Ok(Scenario {
            game,
            dynamics,
            theta0,
            opts,
            tol: self.tol.unwrap_or(1e-3),
            thermostat,
        })
    }

    pub fn run(&self) -> Result<ScenarioReport> {
        self.build()?.run()
    }
}

impl Scenario {
    pub fn run(&self) -> Result<ScenarioReport> {
        let check = cybernetic_check(self.game.clone(), &self.dynamics, &self.theta0, self.opts, self.tol)?;
        let sensed_mean = match (&self.thermostat, &check.theta_star) {
            (Some(t), Some(theta)) => Some(t.sensed_mean(theta)),
            _ => None,
        };
        let goal_error = sensed_mean.zip(self.thermostat.as_ref()).map(|(s, t)| (s - t.config.goal).abs());
        Ok(ScenarioReport {
            check,
            seed: self.opts.seed,
            sensed_mean,
            goal_error,
        })
    }
}

/// Runs scenarios in parallel; results keep the input order.
pub fn run_sweep(configs: &[ScenarioConfig]) -> Vec<Result<ScenarioReport>> {
    configs.par_iter().map(ScenarioConfig::run).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::realisation::CheckStatus;

    #[test]
    fn mle_config_selects_the_matching_candidate() {
        let cfg = GameConfig::from_json(
            r#"{"game": "mle",
                "candidates": [{"probs": [0.5, 0.5]}, {"probs": [1.0, 0.0]}],
                "context": {"continuation": {"rows": [[1.0, 0.0], [1.0, 0.0]]}}}"#,
        )
        .unwrap();
        let out = cfg.solve().unwrap();
        assert_eq!(out["profiles"], json!([[1]]));
        assert_eq!(out["equilibria"][0]["probs"], json!([1.0, 0.0]));
        assert!(cfg.objective_table_csv().unwrap().starts_with("strategy_0,objective\n0,"));
    }

    #[test]
    fn inference_config_with_grid() {
        let cfg = GameConfig::from_json(
            r#"{"game": "inference",
                "forward": {"rows": [[0.9, 0.1], [0.2, 0.8]]},
                "backward": {"grid": 0.5},
                "context": {"prior": {"probs": [0.3, 0.7]}, "continuation": "identity"}}"#,
        )
        .unwrap();
        let out = cfg.solve().unwrap();
        // 3 × 3 grid rows, exact inverse last
        assert_eq!(out["profiles"], json!([[9]]));
        assert_eq!(out["equilibria"][0], json!("exact"));
    }

    #[test]
    fn singleton_and_malformed_configs() {
        let cfg = GameConfig::from_json(
            r#"{"game": "vae", "include_exact": false,
                "forwards": [{"rows": [[1.0, 0.0], [0.0, 1.0]]}],
                "backward": {"kernels": [{"rows": [[1.0, 0.0], [0.0, 1.0]]}]},
                "context": {"prior": {"probs": [0.5, 0.5]}, "continuation": "identity"}}"#,
        )
        .unwrap();
        assert_eq!(cfg.solve().unwrap()["profiles"], json!([[0]]));
        assert!(GameConfig::from_json("{").is_err());
        assert!(GameConfig::from_json(r#"{"game": "poker", "context": {"continuation": "identity"}}"#).is_err());
        let no_forward = GameConfig::from_json(r#"{"game": "inference", "context": {"continuation": "identity"}}"#).unwrap();
        assert!(matches!(no_forward.build(), Err(Error::Config(_))));
    }

    #[test]
    fn active_inference_config() {
        // action a senses state 1 - a; the goal is state 0, so action 1 wins
        let cfg = GameConfig::from_json(
            r#"{"game": "active_inference",
                "levels": [{
                    "sensory": {"forwards": [{"rows": [[0.9, 0.1], [0.1, 0.9]]}]},
                    "action": {"forwards": [{"rows": [[1.0, 0.0]]}, {"rows": [[0.0, 1.0]]}]}
                }],
                "context": {
                    "prior": {"factors": [["0", "1"], ["0"]], "probs": [1.0, 0.0]},
                    "continuation": {"domain_factors": [["0", "1"], ["0", "1"]],
                                     "codomain_factors": [["0", "1"], ["0", "1"]],
                                     "rows": [[0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0]]}}}"#,
        )
        .unwrap();
        assert_eq!(cfg.solve().unwrap()["profiles"], json!([[0, 1]]));
    }

    #[test]
    fn scenario_configs_run() {
        let vae = ScenarioConfig::from_json(r#"{"game": "gaussian_vae", "seed": 7}"#).unwrap();
        let r = vae.run().unwrap();
        assert_eq!(r.check.status, CheckStatus::Pass);
        assert_eq!(r.seed, 7);
        let json = r.to_json("trajectory.csv");
        assert_eq!(json["status"], "pass");
        assert!(json["phi_dynamic"].is_number() && json["steps_to_fix"].is_number());

        let osc = ScenarioConfig::from_json(r#"{"game": "quadratic", "eta": 1.0, "max_steps": 100}"#).unwrap();
        assert_eq!(osc.run().unwrap().check.status, CheckStatus::Inconclusive);

        let thermo = ScenarioConfig::from_json(r#"{"game": "thermostat", "mode": "deep_ai"}"#).unwrap();
        let r = thermo.run().unwrap();
        assert_eq!(r.check.status, CheckStatus::Pass);
        assert!(r.goal_error.unwrap() <= 0.5);

        assert!(ScenarioConfig::from_json(r#"{"game": "quadratic", "theta0": [1, 2]}"#)
            .unwrap()
            .build()
            .is_err());
        let fd = ScenarioConfig::from_json(r#"{"game": "quadratic", "grad": "fd"}"#).unwrap();
        assert_eq!(fd.run().unwrap().check.status, CheckStatus::Pass);
    }

    #[test]
    fn sweeps_keep_input_order() {
        let cfgs: Vec<ScenarioConfig> = [0.05, 1.0, 0.2]
            .iter()
            .map(|eta| ScenarioConfig::from_json(&format!(r#"{{"game": "quadratic", "eta": {eta}, "max_steps": 300}}"#)).unwrap())
            .collect();
        let out = run_sweep(&cfgs);
        let statuses: Vec<CheckStatus> = out.into_iter().map(|r| r.unwrap().check.status).collect();
        assert_eq!(statuses, vec![CheckStatus::Pass, CheckStatus::Inconclusive, CheckStatus::Pass]);
    }
}
