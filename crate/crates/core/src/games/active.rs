//! Hierarchical active inference.
//!
//! Level `i` pairs a sensory game `S_{i+1} ↦ S_i` with an action game
//! `A_{i+1} ↦ A_i` in parallel, so posteriors factorize over sensations and
//! actions. Levels are stacked sequentially from the top, giving a game
//! `(S_N ⊗ A_N) ↦ (S_0 ⊗ A_0)`.
//!
//! An action game on its own only sees its own outputs in its local context;
//! the sensory consequences of an action reach it through the environment
//! continuation and are scored by the sensory games. The best response is
//! therefore the argmin of the summed losses of all atoms in their local
//! contexts.

use serde_json::Value;

use super::{compose_par, compose_seq, Context, Game};
use crate::error::{Error, Result};

/// One level of the hierarchy. Spaces are read off the games.
#[derive(Debug, Clone)]
pub struct AiLevel {
    pub sensory: Game,
    pub action: Game,
}

#[derive(Debug, Clone)]
pub struct ActiveInferenceGame {
    pub game: Game,
    pub levels: usize,
}

/// Builds the composite from levels listed bottom first (level 0 emits
/// `S_0 ⊗ A_0`).
pub fn make_active_inference_game(levels: Vec<AiLevel>) -> Result<ActiveInferenceGame> {
    if levels.is_empty() {
        return Err(Error::GameShape("active inference needs at least one level".into()));
    }
    let n = levels.len();
    let mut pairs = levels
        .into_iter()
        .map(|l| compose_par(l.sensory, l.action))
        .collect::<Result<Vec<_>>>()?;
    let mut game = pairs.pop().expect("nonempty");
    while let Some(lower) = pairs.pop() {
        game = compose_seq(game, lower).map_err(|_| Error::GameShape("adjacent levels do not share objects".into()))?;
    }
    Ok(ActiveInferenceGame { game, levels: n })
}

impl ActiveInferenceGame {
    /// Profiles minimizing the composite loss, with its value.
    pub fn best_response(&self, ctx: &Context) -> Result<(Vec<Vec<usize>>, f64)> {
        self.game.total_argmin(ctx)
    }

    /// The best response is constant, so its fixed points are its values.
    pub fn equilibria(&self, ctx: &Context) -> Result<Vec<Vec<usize>>> {
        Ok(self.best_response(ctx)?.0)
    }

    pub fn encode(&self, profile: &[usize]) -> Value {
        self.game.encode(profile)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::games::{make_autoencoder_game_from, AeForm, Backward};
    use crate::prob::{self, Channel, Divergence, FiniteChannel, FiniteDist, FiniteSpace, State};

    fn s(n: usize) -> FiniteSpace {
        FiniteSpace::range(n)
    }

    fn sensor() -> Channel {
        FiniteChannel::from_rows(vec![vec![0.9, 0.1], vec![0.1, 0.9]]).unwrap().into()
    }

    /// Actions as constant maps from a one-point intention space.
    fn actions(n: usize) -> Vec<Channel> {
        (0..n)
            .map(|a| FiniteChannel::deterministic(s(1), s(n), move |_| a).unwrap().into())
            .collect()
    }

    fn level(sensory: Channel, action_fwds: Vec<Channel>) -> AiLevel {
        AiLevel {
            sensory: make_autoencoder_game_from(&[sensory], &[Backward::ExactInverse], Divergence::KullbackLeibler, AeForm::Joint).unwrap(),
            action: make_autoencoder_game_from(&action_fwds, &[Backward::ExactInverse], Divergence::KullbackLeibler, AeForm::Joint)
                .unwrap(),
        }
    }

    /// `(s, a) ↦ (env(a), a)`.
    fn environment(env: impl Fn(usize) -> usize) -> Channel {
        let space = s(2).product(&s(2));
        FiniteChannel::deterministic(space.clone(), space.clone(), |i| {
            let a = space.split_index(i)[1];
            space.join_index(&[env(a), a])
        })
        .unwrap()
        .into()
    }

    fn ctx(goal: Vec<f64>, k: Channel) -> Context {
        let intention = FiniteDist::point(s(1), 0);
        let prior: State = FiniteDist::from_probs(goal).unwrap().tensor(&intention).into();
        Context::new(prior, k).unwrap()
    }

    #[test]
    fn picks_the_action_that_produces_the_goal() {
        let g = make_active_inference_game(vec![level(sensor(), actions(2))]).unwrap();
        // action a senses state 1 − a; goal is state 0, so action 1 wins
        let k = environment(|a| 1 - a);
        let eq = g.equilibria(&ctx(vec![1.0, 0.0], k.clone())).unwrap();
        assert_eq!(eq, vec![vec![0, 1]]);
        let eq = g.equilibria(&ctx(vec![0.0, 1.0], k)).unwrap();
        assert_eq!(eq, vec![vec![0, 0]]);
    }

    #[test]
    fn uniform_goal_makes_actions_tie() {
        let g = make_active_inference_game(vec![level(sensor(), actions(2))]).unwrap();
        let eq = g.equilibria(&ctx(vec![0.5, 0.5], environment(|a| 1 - a))).unwrap();
        assert_eq!(eq, vec![vec![0, 0], vec![0, 1]]);
    }

    #[test]
    fn identity_upper_level_preserves_equilibrium() {
        let one = make_active_inference_game(vec![level(sensor(), actions(2))]).unwrap();
        let upper = level(Channel::identity(&s(2).into()), vec![Channel::identity(&s(1).into())]);
        let two = make_active_inference_game(vec![level(sensor(), actions(2)), upper]).unwrap();
        assert_eq!(two.levels, 2);
        for goal in [vec![0.95, 0.05], vec![1.0, 0.0], vec![0.2, 0.8]] {
            let k = environment(|a| 1 - a);
            let e1 = one.equilibria(&ctx(goal.clone(), k.clone())).unwrap();
            let e2 = two.equilibria(&ctx(goal, k)).unwrap();
            // upper atoms have singleton strategy spaces and come first
            let lifted: Vec<Vec<usize>> = e1.iter().map(|p| [vec![0, 0], p.clone()].concat()).collect();
            assert_eq!(e2, lifted);
        }
    }

    #[test]
    fn composite_shape() {
        let g = make_active_inference_game(vec![level(sensor(), actions(2))]).unwrap();
        let (x, _) = g.game.dom();
        let (y, _) = g.game.cod();
        assert_eq!(x.size(), 2);
        assert_eq!(y.size(), 4);
        assert!(make_active_inference_game(vec![]).is_err());
        let _ = prob::LOG_ZERO;
    }
}
