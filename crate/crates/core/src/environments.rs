//! Simulation environments: classic control (CartPole, MountainCar),
//! exact tabular MDPs (binary tree), and a linear toy domain.
//!
//! Environments are pure: `step` maps a state and action to the next
//! state and reward without hidden mutability, so trajectories can be
//! replayed from any recorded state (ground-truth rollouts depend on
//! this). All stochasticity comes through the caller's RNG in `reset`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Static description of an environment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnvSpec {
    pub name: String,
    pub state_dim: usize,
    pub action_count: usize,
    /// Hard cap on episode length.
    pub horizon: usize,
}

/// A point-in-time environment state.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub observation: Vec<f64>,
    pub t: usize,
    pub terminal: bool,
}

pub trait Environment: Send + Sync {
    fn spec(&self) -> &EnvSpec;

    /// Sample an initial state.
    fn reset(&self, rng: &mut ChaCha8Rng) -> EnvState;

    /// Deterministically advance one step (tabular environments with
    /// stochastic transitions take an RNG via [`Environment::step_rng`]).
    fn step(&self, state: &EnvState, action: usize) -> Result<(EnvState, f64)>;

    /// Step with access to randomness; the default ignores the RNG.
    fn step_rng(
        &self,
        state: &EnvState,
        action: usize,
        _rng: &mut ChaCha8Rng,
    ) -> Result<(EnvState, f64)> {
        self.step(state, action)
    }
}

fn check_step(spec: &EnvSpec, state: &EnvState, action: usize) -> Result<()> {
    if state.terminal {
        return Err(Error::TerminalStep { t: state.t });
    }
    if action >= spec.action_count {
        return Err(Error::InvalidAction { action, action_count: spec.action_count });
    }
    Ok(())
}

/// Instantiate an environment by registry name: `cartpole`,
/// `mountaincar`, `lineartoy`, or `tree:<depth>`.
pub fn make_env(name: &str) -> Result<Box<dyn Environment>> {
    match name {
        "cartpole" => Ok(Box::new(CartPole::new())),
        "mountaincar" => Ok(Box::new(MountainCar::new())),
        "lineartoy" => Ok(Box::new(LinearToy::new())),
        _ => {
            if let Some(depth) = name.strip_prefix("tree:") {
                let depth: usize = depth
                    .parse()
                    .map_err(|_| Error::UnknownEnvironment(name.to_string()))?;
                let mdp = TabularMdp::tree(depth)?;
                return Ok(Box::new(TabularEnv::new(format!("tree:{depth}"), mdp)));
            }
            Err(Error::UnknownEnvironment(name.to_string()))
        }
    }
}

/// Cart-pole balancing with the classic physics constants: a cart of
/// mass 1 kg, pole of mass 0.1 kg and half-length 0.5 m, ±10 N force,
/// Euler integration at 0.02 s. The episode ends when |x| > 2.4 or
/// |θ| > 12°, with reward 1 per step and a 200-step cap.
pub struct CartPole {
    spec: EnvSpec,
}

impl CartPole {
    const GRAVITY: f64 = 9.8;
    const MASS_CART: f64 = 1.0;
    const MASS_POLE: f64 = 0.1;
    const TOTAL_MASS: f64 = Self::MASS_CART + Self::MASS_POLE;
    const HALF_LENGTH: f64 = 0.5;
    const POLE_MASS_LENGTH: f64 = Self::MASS_POLE * Self::HALF_LENGTH;
    const FORCE_MAG: f64 = 10.0;
    const TAU: f64 = 0.02;
    const X_THRESHOLD: f64 = 2.4;
    const THETA_THRESHOLD: f64 = 12.0 * 2.0 * std::f64::consts::PI / 360.0;

    pub fn new() -> Self {
        Self {
            spec: EnvSpec {
                name: "cartpole".into(),
                state_dim: 4,
                action_count: 2,
                horizon: 200,
            },
        }
    }
}

impl Default for CartPole {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for CartPole {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&self, rng: &mut ChaCha8Rng) -> EnvState {
        let observation = (0..4).map(|_| rng.random_range(-0.05..0.05)).collect();
        EnvState { observation, t: 0, terminal: false }
    }

    fn step(&self, state: &EnvState, action: usize) -> Result<(EnvState, f64)> {
        check_step(&self.spec, state, action)?;
        let [x, x_dot, theta, theta_dot]: [f64; 4] =
            state.observation.as_slice().try_into().map_err(|_| Error::ShapeMismatch {
                op: "cartpole_step",
                detail: format!("state has {} features, expected 4", state.observation.len()),
            })?;

        let force = if action == 1 { Self::FORCE_MAG } else { -Self::FORCE_MAG };
        let cos_theta = theta.cos();
        let sin_theta = theta.sin();
        let temp =
            (force + Self::POLE_MASS_LENGTH * theta_dot * theta_dot * sin_theta) / Self::TOTAL_MASS;
        let theta_acc = (Self::GRAVITY * sin_theta - cos_theta * temp)
            / (Self::HALF_LENGTH
                * (4.0 / 3.0 - Self::MASS_POLE * cos_theta * cos_theta / Self::TOTAL_MASS));
        let x_acc = temp - Self::POLE_MASS_LENGTH * theta_acc * cos_theta / Self::TOTAL_MASS;

        let next = vec![
            x + Self::TAU * x_dot,
            x_dot + Self::TAU * x_acc,
            theta + Self::TAU * theta_dot,
            theta_dot + Self::TAU * theta_acc,
        ];
        let fell = next[0].abs() > Self::X_THRESHOLD || next[2].abs() > Self::THETA_THRESHOLD;
        Ok((
            EnvState { observation: next, t: state.t + 1, terminal: fell },
            1.0,
        ))
    }
}

/// Mountain car with two actions (push left / push right), reward −1
/// per step, a 200-step cap, and the goal at position 0.5.
pub struct MountainCar {
    spec: EnvSpec,
}

impl MountainCar {
    const FORCE: f64 = 0.001;
    const GRAVITY: f64 = 0.0025;
    const MIN_POSITION: f64 = -1.2;
    const MAX_POSITION: f64 = 0.6;
    const MAX_SPEED: f64 = 0.07;
    const GOAL_POSITION: f64 = 0.5;

    pub fn new() -> Self {
        Self {
            spec: EnvSpec {
                name: "mountaincar".into(),
                state_dim: 2,
                action_count: 2,
                horizon: 200,
            },
        }
    }
}

impl Default for MountainCar {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for MountainCar {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&self, rng: &mut ChaCha8Rng) -> EnvState {
        EnvState {
            observation: vec![rng.random_range(-0.6..-0.4), 0.0],
            t: 0,
            terminal: false,
        }
    }

    fn step(&self, state: &EnvState, action: usize) -> Result<(EnvState, f64)> {
        check_step(&self.spec, state, action)?;
        let (position, velocity) = (state.observation[0], state.observation[1]);
        let push = if action == 1 { Self::FORCE } else { -Self::FORCE };
        let mut velocity = velocity + push - Self::GRAVITY * (3.0 * position).cos();
        velocity = velocity.clamp(-Self::MAX_SPEED, Self::MAX_SPEED);
        let mut position = position + velocity;
        position = position.clamp(Self::MIN_POSITION, Self::MAX_POSITION);
        if position == Self::MIN_POSITION && velocity < 0.0 {
            velocity = 0.0;
        }
        let reached = position >= Self::GOAL_POSITION;
        Ok((
            EnvState {
                observation: vec![position, velocity],
                t: state.t + 1,
                terminal: reached,
            },
            -1.0,
        ))
    }
}

/// Deterministic 2-D domain with affine dynamics and rewards, small
/// enough that a one-hidden-layer model can represent it exactly.
/// Initial states are uniform on [−1, 1]²; nothing terminates early.
pub struct LinearToy {
    spec: EnvSpec,
}

impl LinearToy {
    pub const DRIFT: [[f64; 2]; 2] = [[0.12, -0.06], [-0.10, 0.14]];
    pub const REWARD_W: [[f64; 2]; 2] = [[0.6, -0.4], [-0.3, 0.5]];
    pub const REWARD_B: [f64; 2] = [0.2, -0.1];

    pub fn new() -> Self {
        Self {
            spec: EnvSpec {
                name: "lineartoy".into(),
                state_dim: 2,
                action_count: 2,
                horizon: 5,
            },
        }
    }

    pub fn reward(s: &[f64], action: usize) -> f64 {
        Self::REWARD_W[action][0] * s[0] + Self::REWARD_W[action][1] * s[1]
            + Self::REWARD_B[action]
    }
}

impl Default for LinearToy {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for LinearToy {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&self, rng: &mut ChaCha8Rng) -> EnvState {
        let observation = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
        EnvState { observation, t: 0, terminal: false }
    }

    fn step(&self, state: &EnvState, action: usize) -> Result<(EnvState, f64)> {
        check_step(&self.spec, state, action)?;
        let s = &state.observation;
        let reward = Self::reward(s, action);
        let next = vec![s[0] + Self::DRIFT[action][0], s[1] + Self::DRIFT[action][1]];
        Ok((EnvState { observation: next, t: state.t + 1, terminal: false }, reward))
    }
}

/// Finite MDP given by explicit tables. Used by the oracle module for
/// exact enumeration and wrapped by [`TabularEnv`] for sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    pub state_count: usize,
    pub action_count: usize,
    /// `transition[s][a][s']`, each row a distribution.
    pub transition: Vec<Vec<Vec<f64>>>,
    /// Mean reward for taking `a` in `s`.
    pub reward: Vec<Vec<f64>>,
    /// Initial state distribution.
    pub initial: Vec<f64>,
    pub horizon: usize,
    /// Optional Gaussian noise on sampled rewards (enumeration always
    /// uses the mean).
    pub reward_noise_std: Option<f64>,
}

impl TabularMdp {
    pub fn new(
        transition: Vec<Vec<Vec<f64>>>,
        reward: Vec<Vec<f64>>,
        initial: Vec<f64>,
        horizon: usize,
    ) -> Result<Self> {
        let state_count = transition.len();
        if state_count == 0 {
            return Err(Error::InvalidArgument("MDP needs at least one state".into()));
        }
        let action_count = transition[0].len();
        if action_count == 0 {
            return Err(Error::InvalidArgument("MDP needs at least one action".into()));
        }
        let mdp = Self {
            state_count,
            action_count,
            transition,
            reward,
            initial,
            horizon,
            reward_noise_std: None,
        };
        mdp.validate()?;
        Ok(mdp)
    }

    fn validate(&self) -> Result<()> {
        let check_dist = |row: &[f64], what: String| -> Result<()> {
            if row.len() != self.state_count {
                return Err(Error::InvalidArgument(format!(
                    "{what}: length {} vs {} states",
                    row.len(),
                    self.state_count
                )));
            }
            if row.iter().any(|&p| !(0.0..=1.0 + 1e-9).contains(&p)) {
                return Err(Error::InvalidArgument(format!("{what}: probability out of range")));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!("{what}: sums to {total}")));
            }
            Ok(())
        };
        check_dist(&self.initial, "initial distribution".into())?;
        if self.reward.len() != self.state_count {
            return Err(Error::InvalidArgument("reward table has wrong state count".into()));
        }
        for (s, per_action) in self.transition.iter().enumerate() {
            if per_action.len() != self.action_count || self.reward[s].len() != self.action_count {
                return Err(Error::InvalidArgument(format!(
                    "state {s}: table rows do not match {} actions",
                    self.action_count
                )));
            }
            for (a, row) in per_action.iter().enumerate() {
                check_dist(row, format!("transition[{s}][{a}]"))?;
            }
        }
        Ok(())
    }

    /// Binary tree of the given depth: states are the nodes of a full
    /// binary tree indexed breadth-first (root 0, children of `i` at
    /// `2i+1`, `2i+2`), transitions are deterministic, leaves absorb,
    /// and only the step into the leftmost leaf (taking action 0 all
    /// the way down) pays reward 1.
    pub fn tree(depth: usize) -> Result<Self> {
        if depth == 0 {
            return Err(Error::InvalidArgument("tree depth must be at least 1".into()));
        }
        // The tables are dense (S×A×S), so depth is capped where the
        // tree still fits comfortably in memory.
        if depth > 10 {
            return Err(Error::InvalidArgument(format!(
                "tree depth {depth} needs a {}-state dense table",
                (1u64 << (depth + 1)) - 1
            )));
        }
        let state_count = (1usize << (depth + 1)) - 1;
        let internal = (1usize << depth) - 1; // nodes with children
        let mut transition =
            vec![vec![vec![0.0; state_count]; 2]; state_count];
        let mut reward = vec![vec![0.0; 2]; state_count];
        for s in 0..state_count {
            if s < internal {
                transition[s][0][2 * s + 1] = 1.0;
                transition[s][1][2 * s + 2] = 1.0;
            } else {
                transition[s][0][s] = 1.0;
                transition[s][1][s] = 1.0;
            }
        }
        // Leftmost node at depth k is 2^k − 1; reward on the last hop
        // of the all-zeros path.
        reward[(1 << (depth - 1)) - 1][0] = 1.0;
        let mut initial = vec![0.0; state_count];
        initial[0] = 1.0;
        Self::new(transition, reward, initial, depth)
    }
}

/// Samples episodes from a [`TabularMdp`]. Observations are the state
/// index as a single `f64` feature.
pub struct TabularEnv {
    spec: EnvSpec,
    mdp: TabularMdp,
}

impl TabularEnv {
    pub fn new(name: String, mdp: TabularMdp) -> Self {
        let spec = EnvSpec {
            name,
            state_dim: 1,
            action_count: mdp.action_count,
            horizon: mdp.horizon,
        };
        Self { spec, mdp }
    }

    pub fn mdp(&self) -> &TabularMdp {
        &self.mdp
    }

    fn state_index(&self, state: &EnvState) -> usize {
        state.observation[0] as usize
    }
}

fn sample_categorical(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

impl Environment for TabularEnv {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&self, rng: &mut ChaCha8Rng) -> EnvState {
        let s = sample_categorical(&self.mdp.initial, rng);
        EnvState { observation: vec![s as f64], t: 0, terminal: false }
    }

    fn step(&self, state: &EnvState, action: usize) -> Result<(EnvState, f64)> {
        // Deterministic path: valid when every transition row is a
        // point mass (the tree is); otherwise `step_rng` must be used.
        check_step(&self.spec, state, action)?;
        let s = self.state_index(state);
        let row = &self.mdp.transition[s][action];
        let next = row
            .iter()
            .position(|&p| (p - 1.0).abs() < 1e-12)
            .ok_or_else(|| Error::InvalidArgument(format!(
                "transition[{s}][{action}] is stochastic; step needs an RNG"
            )))?;
        self.advance(state, s, action, next)
    }

    fn step_rng(
        &self,
        state: &EnvState,
        action: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<(EnvState, f64)> {
        check_step(&self.spec, state, action)?;
        let s = self.state_index(state);
        let next = sample_categorical(&self.mdp.transition[s][action], rng);
        self.advance(state, s, action, next)
    }
}

impl TabularEnv {
    fn advance(
        &self,
        state: &EnvState,
        s: usize,
        action: usize,
        next: usize,
    ) -> Result<(EnvState, f64)> {
        let reward = self.mdp.reward[s][action];
        let t = state.t + 1;
        Ok((
            EnvState {
                observation: vec![next as f64],
                t,
                terminal: t >= self.mdp.horizon,
            },
            reward,
        ))
    }
}
