//! The representation-balanced MDP model: a shared representation
//! feeding per-action reward, transition-delta, and terminal heads,
//! trained by minimizing the combined behavior/reweighted empirical
//! risk plus a per-time-step MMD balance penalty and a weight-decay
//! term scaled by `n^(-3/8)`.
//!
//! Training is plain full-batch (or minibatch) Adam over a freshly
//! built graph each step, with the epoch minimizing the validation
//! empirical risk kept as the final model. The RBF bandwidth is
//! resolved once, from the representations under the initial
//! parameters, and frozen for the whole run.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::rc::Rc;

use crate::autodiff::{bind_params, collect_grads, Adam, AdamConfig, Graph, Parameter, Tensor, Var};
use crate::balance::{mmd_estimate, mmd_node, KernelSpec, MmdOutcome, ResolvedKernel};
use crate::dataset::Dataset;
use crate::environments::make_env;
use crate::error::{Error, Result};
use crate::policies::Policy;
use crate::rng;

const MODEL_SCHEMA_VERSION: u32 = 1;

/// Probability clamp for the terminal head's cross-entropy.
const BCE_CLAMP: f64 = 1e-7;

/// Most rows fed to the median-bandwidth heuristic; the exact median
/// needs all-pairs distances, which is quadratic in rows.
const MEDIAN_POOL_CAP: usize = 2048;

/// Which risk terms the training objective includes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelObjective {
    /// Behavior risk + reweighted risk + balance penalty.
    RepBm,
    /// Behavior risk only: the plain regression baseline.
    Am,
    /// Reweighted risk + balance penalty, without the behavior term.
    AmPi,
}

impl ModelObjective {
    fn behavior_risk(self) -> bool {
        matches!(self, ModelObjective::RepBm | ModelObjective::Am)
    }

    fn reweighted_risk(self) -> bool {
        matches!(self, ModelObjective::RepBm | ModelObjective::AmPi)
    }

    fn balance_penalty(self) -> bool {
        matches!(self, ModelObjective::RepBm | ModelObjective::AmPi)
    }
}

/// Full-batch gradient steps or shuffled minibatches per epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum BatchMode {
    Full,
    Minibatch { size: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepBmConfig {
    pub objective: ModelObjective,
    /// Balance penalty weight, shared across time steps.
    pub alpha: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch: BatchMode,
    /// Coefficient of the squared-weight regularizer; the term enters
    /// the objective as `weight_decay · Σ‖W‖² / n^(3/8)`.
    pub weight_decay: f64,
    pub kernel: KernelSpec,
    pub seed: u64,
    pub rep_dim: usize,
    /// Lipschitz factor on the transition loss.
    pub lipschitz: f64,
}

impl RepBmConfig {
    pub fn new(objective: ModelObjective, alpha: f64) -> Self {
        Self {
            objective,
            alpha,
            lr: 0.01,
            epochs: 100,
            batch: BatchMode::Full,
            weight_decay: 1e-3,
            kernel: KernelSpec::rbf_median(),
            seed: 0,
            rep_dim: 32,
            lipschitz: 1.0,
        }
    }

    pub fn repbm(alpha: f64) -> Self {
        Self::new(ModelObjective::RepBm, alpha)
    }

    pub fn am() -> Self {
        Self::new(ModelObjective::Am, 0.0)
    }

    pub fn am_pi(alpha: f64) -> Self {
        Self::new(ModelObjective::AmPi, alpha)
    }

    fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!("alpha {} must be ≥ 0", self.alpha)));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be ≥ 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::InvalidArgument(format!("learning rate {} must be > 0", self.lr)));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::InvalidArgument("weight decay must be ≥ 0".into()));
        }
        if self.rep_dim == 0 {
            return Err(Error::InvalidArgument("representation dimension must be ≥ 1".into()));
        }
        if self.lipschitz < 0.0 {
            return Err(Error::InvalidArgument("lipschitz factor must be ≥ 0".into()));
        }
        if let BatchMode::Minibatch { size: 0 } = self.batch {
            return Err(Error::InvalidArgument("minibatch size must be ≥ 1".into()));
        }
        Ok(())
    }

    fn effective_alpha(&self) -> f64 {
        if self.objective.balance_penalty() {
            self.alpha
        } else {
            0.0
        }
    }
}

impl Default for RepBmConfig {
    fn default() -> Self {
        Self::repbm(0.01)
    }
}

/// The learned model. All heads read the shared representation
/// `z = relu(s·w1 + b1)`; the transition head predicts the state
/// delta, so the next-state prediction is `s + delta`.
///
/// Parameter layout (fixed order): `w1 (d×k)`, `b1 (k)`, `wr (k×A)`,
/// `br (A)`, `wt ((A·k)×d)` stacked per action, `bt (A×d)`,
/// `wterm (k×A)`, `bterm (A)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepBmModel {
    pub state_dim: usize,
    pub action_count: usize,
    pub rep_dim: usize,
    pub lipschitz: f64,
    pub params: Vec<Parameter>,
    /// RBF bandwidth resolved at the start of training, if any.
    pub bandwidth: Option<f64>,
}

/// One-step model prediction for a state/action pair.
#[derive(Debug, Clone, PartialEq)]
pub struct StepPrediction {
    pub reward: f64,
    pub terminal_prob: f64,
    pub next_state: Vec<f64>,
}

/// Behavior and reweighted empirical risks evaluated at fixed
/// parameters (no penalty, no regularizer).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskReport {
    pub behavior: f64,
    pub reweighted: f64,
}

/// Per-epoch record of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub train_loss: Vec<f64>,
    pub validation_risk: Vec<f64>,
    pub best_epoch: usize,
    pub bandwidth: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    schema_version: u32,
    config: RepBmConfig,
    model: RepBmModel,
}

impl RepBmModel {
    pub fn init(
        state_dim: usize,
        action_count: usize,
        rep_dim: usize,
        lipschitz: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let uniform = |rng: &mut ChaCha8Rng, fan_in: usize, len: usize| -> Vec<f64> {
            let bound = (1.0 / fan_in as f64).sqrt();
            (0..len).map(|_| rng.random_range(-bound..bound)).collect()
        };
        let (d, k, a) = (state_dim, rep_dim, action_count);
        let params = vec![
            Parameter::new("w1", vec![d, k], uniform(rng, d, d * k)).unwrap(),
            Parameter::new("b1", vec![k], vec![0.0; k]).unwrap(),
            Parameter::new("wr", vec![k, a], uniform(rng, k, k * a)).unwrap(),
            Parameter::new("br", vec![a], vec![0.0; a]).unwrap(),
            Parameter::new("wt", vec![a * k, d], uniform(rng, k, a * k * d)).unwrap(),
            Parameter::new("bt", vec![a, d], vec![0.0; a * d]).unwrap(),
            Parameter::new("wterm", vec![k, a], uniform(rng, k, k * a)).unwrap(),
            Parameter::new("bterm", vec![a], vec![0.0; a]).unwrap(),
        ];
        Self { state_dim, action_count, rep_dim, lipschitz, params, bandwidth: None }
    }

    /// Build a model from explicit parameters (tests hand-craft exact
    /// models this way).
    pub fn from_params(
        state_dim: usize,
        action_count: usize,
        rep_dim: usize,
        lipschitz: f64,
        params: Vec<Parameter>,
    ) -> Result<Self> {
        let (d, k, a) = (state_dim, rep_dim, action_count);
        let expect = [
            ("w1", vec![d, k]),
            ("b1", vec![k]),
            ("wr", vec![k, a]),
            ("br", vec![a]),
            ("wt", vec![a * k, d]),
            ("bt", vec![a, d]),
            ("wterm", vec![k, a]),
            ("bterm", vec![a]),
        ];
        if params.len() != expect.len() {
            return Err(Error::InvalidArgument(format!(
                "model takes {} parameters, got {}",
                expect.len(),
                params.len()
            )));
        }
        for (p, (name, shape)) in params.iter().zip(expect) {
            if p.shape != shape {
                return Err(Error::ShapeMismatch {
                    op: "repbm_model",
                    detail: format!("{name} has shape {:?}, expected {shape:?}", p.shape),
                });
            }
        }
        Ok(Self { state_dim, action_count, rep_dim, lipschitz, params, bandwidth: None })
    }

    fn check_action(&self, action: usize) -> Result<()> {
        if action >= self.action_count {
            return Err(Error::InvalidAction { action, action_count: self.action_count });
        }
        Ok(())
    }

    /// The shared representation `z = relu(s·w1 + b1)` (no graph).
    pub fn representation(&self, state: &[f64]) -> Vec<f64> {
        let (w1, b1) = (&self.params[0], &self.params[1]);
        let k = self.rep_dim;
        let mut z = b1.data.clone();
        for (i, &s) in state.iter().enumerate() {
            if s == 0.0 {
                continue;
            }
            for (j, zj) in z.iter_mut().enumerate() {
                *zj += s * w1.data[i * k + j];
            }
        }
        for zj in &mut z {
            *zj = zj.max(0.0);
        }
        z
    }

    /// Reward, terminal probability, and next-state prediction for
    /// one state/action pair.
    pub fn step_prediction(&self, state: &[f64], action: usize) -> Result<StepPrediction> {
        self.check_action(action)?;
        let z = self.representation(state);
        let (k, a_count, d) = (self.rep_dim, self.action_count, self.state_dim);
        let (wr, br) = (&self.params[2], &self.params[3]);
        let (wt, bt) = (&self.params[4], &self.params[5]);
        let (wterm, bterm) = (&self.params[6], &self.params[7]);

        let mut reward = br.data[action];
        let mut logit = bterm.data[action];
        for (j, &zj) in z.iter().enumerate() {
            reward += zj * wr.data[j * a_count + action];
            logit += zj * wterm.data[j * a_count + action];
        }
        let mut next_state = state.to_vec();
        for (c, x) in next_state.iter_mut().enumerate() {
            let mut delta = bt.data[action * d + c];
            for (j, &zj) in z.iter().enumerate() {
                delta += zj * wt.data[(action * k + j) * d + c];
            }
            *x += delta;
        }
        Ok(StepPrediction { reward, terminal_prob: sigmoid(logit), next_state })
    }

    /// Squared reward prediction error for one logged step.
    pub fn loss_reward(&self, state: &[f64], action: usize, reward: f64) -> Result<f64> {
        let pred = self.step_prediction(state, action)?;
        Ok((pred.reward - reward).powi(2))
    }

    /// Lipschitz-scaled squared next-state error for one logged step.
    pub fn loss_transition(&self, state: &[f64], action: usize, next: &[f64]) -> Result<f64> {
        let pred = self.step_prediction(state, action)?;
        let sq: f64 = pred
            .next_state
            .iter()
            .zip(next)
            .map(|(p, s)| (p - s) * (p - s))
            .sum();
        Ok(self.lipschitz * sq)
    }

    /// Binary cross-entropy of the terminal head for one logged step,
    /// with the probability clamped away from 0 and 1.
    pub fn loss_terminal(&self, state: &[f64], action: usize, done: bool) -> Result<f64> {
        let pred = self.step_prediction(state, action)?;
        Ok(bce(pred.terminal_prob, done))
    }

    /// Deterministic rollout inside the model: apply `pi`, accumulate
    /// the predicted reward, and stop when the terminal head fires
    /// (probability > 0.5) or the horizon runs out.
    pub fn value(&self, s0: &[f64], pi: &Policy, horizon: usize) -> Result<f64> {
        let mut state = s0.to_vec();
        let mut total = 0.0;
        for _ in 0..horizon {
            let action = pi.deterministic_action(&state).ok_or_else(|| {
                Error::InvalidArgument("model rollouts require a deterministic policy".into())
            })?;
            let pred = self.step_prediction(&state, action)?;
            total += pred.reward;
            if pred.terminal_prob > 0.5 {
                break;
            }
            state = pred.next_state;
        }
        Ok(total)
    }

    /// The training objective evaluated at the current parameters over
    /// the training split (the whole dataset when no split exists).
    pub fn objective(&self, dataset: &Dataset, cfg: &RepBmConfig) -> Result<f64> {
        cfg.validate()?;
        let indices = train_indices(dataset);
        let table = StepTable::new(dataset, &indices, self)?;
        let kernel = self.resolve_kernel(&cfg.kernel, &table)?;
        let mut g = Graph::new();
        let vars = bind_params(&mut g, &self.params);
        let terms = build_objective(
            &mut g,
            &vars,
            &table,
            self,
            cfg.objective,
            cfg.effective_alpha(),
            &kernel,
            cfg.weight_decay,
            indices.len(),
        )?;
        Ok(g.value(terms.total).data()[0])
    }

    /// Gradient of [`RepBmModel::objective`] with respect to each
    /// parameter, in parameter order.
    pub fn objective_gradients(
        &self,
        dataset: &Dataset,
        cfg: &RepBmConfig,
    ) -> Result<Vec<Vec<f64>>> {
        cfg.validate()?;
        let indices = train_indices(dataset);
        let table = StepTable::new(dataset, &indices, self)?;
        let kernel = self.resolve_kernel(&cfg.kernel, &table)?;
        let mut g = Graph::new();
        let vars = bind_params(&mut g, &self.params);
        let terms = build_objective(
            &mut g,
            &vars,
            &table,
            self,
            cfg.objective,
            cfg.effective_alpha(),
            &kernel,
            cfg.weight_decay,
            indices.len(),
        )?;
        g.backward(terms.total)?;
        vars.iter()
            .map(|&v| {
                g.grad(v).map(<[f64]>::to_vec).ok_or_else(|| {
                    Error::InvalidArgument("objective is constant in a parameter".into())
                })
            })
            .collect()
    }

    /// Behavior and reweighted risks over an explicit set of
    /// trajectories (no penalty or regularizer).
    pub fn risks(&self, dataset: &Dataset, indices: &[usize]) -> Result<RiskReport> {
        let table = StepTable::new(dataset, indices, self)?;
        let mut g = Graph::new();
        let vars = bind_params(&mut g, &self.params);
        let terms = build_objective(
            &mut g,
            &vars,
            &table,
            self,
            ModelObjective::RepBm,
            0.0,
            &ResolvedKernel::Linear,
            0.0,
            indices.len(),
        )?;
        Ok(RiskReport {
            behavior: terms.behavior.unwrap_or(0.0),
            reweighted: terms.reweighted.unwrap_or(0.0),
        })
    }

    /// The risk used for epoch selection: behavior + reweighted risk
    /// over the validation split, with the û frozen at annotation.
    pub fn validation_risk(&self, dataset: &Dataset) -> Result<f64> {
        let split = dataset
            .split
            .as_ref()
            .ok_or_else(|| Error::Dataset("validation risk requires a split".into()))?;
        let report = self.risks(dataset, &split.validation)?;
        Ok(report.behavior + report.reweighted)
    }

    /// Per-time-step MMD between factual and counterfactual
    /// representation groups at the current parameters.
    pub fn balance_report(
        &self,
        dataset: &Dataset,
        cfg: &RepBmConfig,
    ) -> Result<Vec<(usize, MmdOutcome)>> {
        let indices = train_indices(dataset);
        let table = StepTable::new(dataset, &indices, self)?;
        let kernel = self.resolve_kernel(&cfg.kernel, &table)?;
        let rep_of = |row: usize| self.representation(table.state_row(row));
        let mut out = Vec::new();
        for t in 0..table.group_f.len() {
            let f: Vec<Vec<f64>> = table.group_f[t].iter().map(|&r| rep_of(r)).collect();
            let c: Vec<Vec<f64>> = table.group_c[t].iter().map(|&r| rep_of(r)).collect();
            if f.is_empty() && c.is_empty() {
                continue;
            }
            out.push((t, mmd_estimate(&kernel, &f, &c)?));
        }
        Ok(out)
    }

    /// Pin the kernel: an explicit bandwidth wins, then a bandwidth
    /// frozen by a previous training run, then the median heuristic
    /// over step representations in `table`. The heuristic is exact
    /// up to [`MEDIAN_POOL_CAP`] rows; past that it reads every k-th
    /// row, since the full pairwise distance set grows quadratically.
    fn resolve_kernel(&self, spec: &KernelSpec, table: &StepTable) -> Result<ResolvedKernel> {
        if let KernelSpec::Rbf { bandwidth: None } = spec {
            if let Some(sigma) = self.bandwidth {
                return Ok(ResolvedKernel::Rbf { sigma });
            }
            let stride = table.rows.div_ceil(MEDIAN_POOL_CAP);
            let pooled: Vec<Vec<f64>> = (0..table.rows)
                .step_by(stride.max(1))
                .map(|r| self.representation(table.state_row(r)))
                .collect();
            return spec.resolve(&pooled);
        }
        spec.resolve(&[])
    }

    pub fn save(&self, path: &Path, cfg: &RepBmConfig) -> Result<()> {
        let file = ModelFile {
            schema_version: MODEL_SCHEMA_VERSION,
            config: cfg.clone(),
            model: self.clone(),
        };
        std::fs::write(path, serde_json::to_string_pretty(&file)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(RepBmModel, RepBmConfig)> {
        let text = std::fs::read_to_string(path)?;
        let file: ModelFile = serde_json::from_str(&text)?;
        if file.schema_version != MODEL_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: file.schema_version,
                expected: MODEL_SCHEMA_VERSION,
            });
        }
        Ok((file.model, file.config))
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Clamped binary cross-entropy, matching the graph path.
fn bce(p: f64, label: bool) -> f64 {
    let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    if label {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

fn train_indices(dataset: &Dataset) -> Vec<usize> {
    match &dataset.split {
        Some(split) => split.train.clone(),
        None => (0..dataset.len()).collect(),
    }
}

/// Logged steps of a set of trajectories, flattened row-wise with the
/// per-step risk weights and the per-time-step balance groups.
struct StepTable {
    rows: usize,
    state_dim: usize,
    states: Vec<f64>,
    next_states: Vec<f64>,
    actions: Vec<usize>,
    rewards: Vec<f64>,
    /// 1.0 where the step ended the episode in an environment-terminal
    /// state.
    done: Vec<f64>,
    /// Behavior-risk weight `1/n` per row.
    w_behavior: Vec<f64>,
    /// Reweighted-risk weight `mask/(n·û_t)` per row (0 when the
    /// prefix deviates or `û_t = 0`).
    w_reweight: Vec<f64>,
    /// Factual row indices per time step: prefix matches through `t`.
    group_f: Vec<Vec<usize>>,
    /// Counterfactual rows per time step: prefix matched through
    /// `t − 1`, action at `t` deviates.
    group_c: Vec<Vec<usize>>,
}

impl StepTable {
    fn new(dataset: &Dataset, indices: &[usize], model: &RepBmModel) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Dataset("objective over an empty trajectory set".into()));
        }
        let u_hat = dataset
            .u_hat
            .as_ref()
            .ok_or_else(|| Error::Dataset("objective requires an annotated dataset".into()))?;
        let d = model.state_dim;
        let n = indices.len() as f64;
        let mut table = StepTable {
            rows: 0,
            state_dim: d,
            states: Vec::new(),
            next_states: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            done: Vec::new(),
            w_behavior: Vec::new(),
            w_reweight: Vec::new(),
            group_f: vec![Vec::new(); dataset.horizon],
            group_c: vec![Vec::new(); dataset.horizon],
        };
        for &i in indices {
            let traj = &dataset.trajectories[i];
            let mask = traj
                .mask
                .as_ref()
                .ok_or_else(|| Error::Dataset("objective requires an annotated dataset".into()))?;
            if traj.states[0].len() != d {
                return Err(Error::ShapeMismatch {
                    op: "step_table",
                    detail: format!(
                        "trajectory state has {} features, model expects {d}",
                        traj.states[0].len()
                    ),
                });
            }
            for t in 0..traj.len() {
                if traj.actions[t] >= model.action_count {
                    return Err(Error::InvalidAction {
                        action: traj.actions[t],
                        action_count: model.action_count,
                    });
                }
                let row = table.rows;
                table.states.extend_from_slice(&traj.states[t]);
                table.next_states.extend_from_slice(&traj.states[t + 1]);
                table.actions.push(traj.actions[t]);
                table.rewards.push(traj.rewards[t]);
                table.done.push(f64::from(t + 1 == traj.len() && traj.terminal));
                table.w_behavior.push(1.0 / n);
                let factual = mask[t];
                table.w_reweight.push(if factual && u_hat[t] > 0.0 {
                    1.0 / (n * u_hat[t])
                } else {
                    0.0
                });
                if factual {
                    table.group_f[t].push(row);
                } else if t == 0 || mask[t - 1] {
                    table.group_c[t].push(row);
                }
                table.rows += 1;
            }
        }
        Ok(table)
    }

    fn state_row(&self, row: usize) -> &[f64] {
        &self.states[row * self.state_dim..(row + 1) * self.state_dim]
    }

    fn state_tensor(&self) -> Tensor {
        Tensor::new(vec![self.rows, self.state_dim], self.states.clone()).expect("table is rectangular")
    }
}

/// The assembled objective with the scalar value of each present term
/// (read back for divergence diagnostics and reports).
struct ObjectiveTerms {
    total: Var,
    behavior: Option<f64>,
    reweighted: Option<f64>,
    penalty: Option<f64>,
    regularizer: Option<f64>,
}

/// Build the differentiable objective over one step table.
///
/// Both risks share the forward pass; they differ only in the per-row
/// weight vectors. The balance penalty selects representation rows
/// into per-time-step groups and skips any group pair smaller than
/// the V-statistic needs.
#[allow(clippy::too_many_arguments)]
fn build_objective(
    g: &mut Graph,
    vars: &[Var],
    table: &StepTable,
    model: &RepBmModel,
    objective: ModelObjective,
    alpha: f64,
    kernel: &ResolvedKernel,
    weight_decay: f64,
    reg_n: usize,
) -> Result<ObjectiveTerms> {
    let (m, d, k, a_count) = (table.rows, table.state_dim, model.rep_dim, model.action_count);
    let actions = Rc::new(table.actions.clone());

    let states = g.constant(table.state_tensor());
    let z_pre = g.matmul(states, vars[0])?;
    let z_pre = g.add_bias(z_pre, vars[1])?;
    let z = g.relu(z_pre)?;

    // Reward head: per-row squared error.
    let q_r = g.matmul(z, vars[2])?;
    let q_r = g.add_bias(q_r, vars[3])?;
    let r_hat = g.take_per_row(q_r, Rc::clone(&actions))?;
    let r_obs = g.constant(Tensor::new(vec![m], table.rewards.clone())?);
    let r_err = g.sub(r_hat, r_obs)?;
    let r_sq = g.square(r_err)?;

    // Terminal head: per-row clamped cross-entropy.
    let q_term = g.matmul(z, vars[6])?;
    let q_term = g.add_bias(q_term, vars[7])?;
    let logit = g.take_per_row(q_term, Rc::clone(&actions))?;
    let prob = g.sigmoid(logit)?;
    let prob = g.clamp(prob, BCE_CLAMP, 1.0 - BCE_CLAMP)?;
    let ln_p = g.ln(prob)?;
    let ones = g.constant(Tensor::new(vec![m], vec![1.0; m])?);
    let one_minus = g.sub(ones, prob)?;
    let ln_1p = g.ln(one_minus)?;
    let labels = g.constant(Tensor::new(vec![m], table.done.clone())?);
    let flipped: Vec<f64> = table.done.iter().map(|&y| 1.0 - y).collect();
    let not_labels = g.constant(Tensor::new(vec![m], flipped)?);
    let hit = g.mul(labels, ln_p)?;
    let miss = g.mul(not_labels, ln_1p)?;
    let ll = g.add(hit, miss)?;
    let bce_rows = g.scale(ll, -1.0)?;

    // Weighted sums of the per-row reward and terminal losses.
    let weight_vec = |g: &mut Graph, w: &[f64]| -> Var {
        g.constant(Tensor::new(vec![m], w.to_vec()).expect("weights cover every row"))
    };
    let weighted_sum = |g: &mut Graph, rows: Var, w: Var| -> Result<Var> {
        let v = g.mul(rows, w)?;
        g.sum(v)
    };
    let wb = weight_vec(g, &table.w_behavior);
    let ww = weight_vec(g, &table.w_reweight);

    // Transition head, grouped by action so each group multiplies its
    // own (k×d) block of `wt`. Each group contributes its weighted
    // squared next-state errors directly to both risk accumulators.
    let mut t_beh: Option<Var> = None;
    let mut t_rw: Option<Var> = None;
    for action in 0..a_count {
        let rows: Vec<usize> = (0..m).filter(|&r| table.actions[r] == action).collect();
        if rows.is_empty() {
            continue;
        }
        let ma = rows.len();
        let z_a = g.index_select(z, Rc::new(rows.clone()))?;
        let block: Vec<usize> = (action * k..(action + 1) * k).collect();
        let wt_a = g.index_select(vars[4], Rc::new(block))?;
        let delta = g.matmul(z_a, wt_a)?;
        let bt_a = g.index_select(vars[5], Rc::new(vec![action]))?;
        let ones_col = g.constant(Tensor::new(vec![ma, 1], vec![1.0; ma])?);
        let bias = g.matmul(ones_col, bt_a)?;
        let delta = g.add(delta, bias)?;

        let gather = |src: &[f64]| -> Tensor {
            let mut data = Vec::with_capacity(ma * d);
            for &r in &rows {
                data.extend_from_slice(&src[r * d..(r + 1) * d]);
            }
            Tensor::new(vec![ma, d], data).expect("group rows are rectangular")
        };
        let s_a = g.constant(gather(&table.states));
        let next_a = g.constant(gather(&table.next_states));
        let pred = g.add(s_a, delta)?;
        let t_err = g.sub(pred, next_a)?;
        let t_sq = g.square(t_err)?;

        let spread = |w: &[f64]| -> Tensor {
            let mut data = Vec::with_capacity(ma * d);
            for &r in &rows {
                data.extend(std::iter::repeat(w[r]).take(d));
            }
            Tensor::new(vec![ma, d], data).expect("group rows are rectangular")
        };
        let wb_a = g.constant(spread(&table.w_behavior));
        let ww_a = g.constant(spread(&table.w_reweight));
        for (acc, w_mat) in [(&mut t_beh, wb_a), (&mut t_rw, ww_a)] {
            let contrib = weighted_sum(g, t_sq, w_mat)?;
            *acc = Some(match *acc {
                Some(prev) => g.add(prev, contrib)?,
                None => contrib,
            });
        }
    }

    let risk = |g: &mut Graph, w: Var, t_term: Option<Var>| -> Result<Var> {
        let r_part = weighted_sum(g, r_sq, w)?;
        let b_part = weighted_sum(g, bce_rows, w)?;
        let mut total = g.add(r_part, b_part)?;
        if let Some(t) = t_term {
            let t = g.scale(t, model.lipschitz)?;
            total = g.add(total, t)?;
        }
        Ok(total)
    };

    let scalar_of = |g: &Graph, v: Var| g.value(v).data()[0];
    let mut terms = ObjectiveTerms {
        total: g.scalar(0.0),
        behavior: None,
        reweighted: None,
        penalty: None,
        regularizer: None,
    };
    let mut total: Option<Var> = None;
    let mut push = |g: &mut Graph, node: Var| -> Result<Var> {
        total = Some(match total {
            Some(prev) => g.add(prev, node)?,
            None => node,
        });
        Ok(node)
    };

    if objective.behavior_risk() {
        let node = risk(g, wb, t_beh)?;
        let node = push(g, node)?;
        terms.behavior = Some(scalar_of(g, node));
    }
    if objective.reweighted_risk() {
        let node = risk(g, ww, t_rw)?;
        let node = push(g, node)?;
        terms.reweighted = Some(scalar_of(g, node));
    }

    if alpha > 0.0 {
        let mut penalty: Option<Var> = None;
        for t in 0..table.group_f.len() {
            let (f_rows, c_rows) = (&table.group_f[t], &table.group_c[t]);
            if f_rows.len() < 2 || c_rows.len() < 2 {
                continue;
            }
            let f = g.index_select(z, Rc::new(f_rows.clone()))?;
            let c = g.index_select(z, Rc::new(c_rows.clone()))?;
            let term = mmd_node(g, kernel, f, c)?;
            penalty = Some(match penalty {
                Some(prev) => g.add(prev, term)?,
                None => term,
            });
        }
        if let Some(p) = penalty {
            let node = g.scale(p, alpha)?;
            let node = push(g, node)?;
            terms.penalty = Some(scalar_of(g, node));
        }
    }

    if weight_decay > 0.0 {
        let mut acc: Option<Var> = None;
        for &w in &[vars[0], vars[2], vars[4], vars[6]] {
            let sq = g.square(w)?;
            let s = g.sum(sq)?;
            acc = Some(match acc {
                Some(prev) => g.add(prev, s)?,
                None => s,
            });
        }
        let scale = weight_decay / (reg_n as f64).powf(0.375);
        let node = g.scale(acc.expect("weight list is non-empty"), scale)?;
        let node = push(g, node)?;
        terms.regularizer = Some(scalar_of(g, node));
    }

    terms.total = total.unwrap_or_else(|| g.scalar(0.0));
    Ok(terms)
}

/// Adam-train a model on the dataset's training split, keeping the
/// epoch with the best validation risk.
pub fn train(dataset: &Dataset, cfg: &RepBmConfig) -> Result<(RepBmModel, TrainingReport)> {
    cfg.validate()?;
    let split = dataset
        .split
        .as_ref()
        .ok_or_else(|| Error::Dataset("training requires a train/validation split".into()))?;
    let state_dim = dataset
        .trajectories
        .first()
        .map(|t| t.initial_state().len())
        .ok_or_else(|| Error::Dataset("training on an empty dataset".into()))?;
    // The environment registry knows the action arity; fall back to
    // the largest logged action for synthetic datasets.
    let action_count = match make_env(&dataset.env) {
        Ok(env) => env.spec().action_count,
        Err(_) => {
            1 + dataset
                .trajectories
                .iter()
                .flat_map(|t| t.actions.iter().copied())
                .max()
                .unwrap_or(0)
        }
    };

    let mut init_rng = rng::stream(cfg.seed, 0, "model-init");
    let mut model =
        RepBmModel::init(state_dim, action_count, cfg.rep_dim, cfg.lipschitz, &mut init_rng);
    let train_table = StepTable::new(dataset, &split.train, &model)?;
    let kernel = model.resolve_kernel(&cfg.kernel, &train_table)?;
    if let ResolvedKernel::Rbf { sigma } = kernel {
        model.bandwidth = Some(sigma);
    }

    let n_train = split.train.len();
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr));
    let mut report = TrainingReport {
        train_loss: Vec::with_capacity(cfg.epochs),
        validation_risk: Vec::with_capacity(cfg.epochs),
        best_epoch: 0,
        bandwidth: model.bandwidth,
    };
    let mut best_risk = f64::INFINITY;
    let mut best_params = model.params.clone();

    for epoch in 0..cfg.epochs {
        let epoch_loss = match cfg.batch {
            BatchMode::Full => train_step(
                &mut model,
                &mut adam,
                &train_table,
                cfg,
                &kernel,
                n_train,
                epoch,
            )?,
            BatchMode::Minibatch { size } => {
                let mut order = split.train.clone();
                let mut shuffle_rng = rng::stream(cfg.seed, epoch as u64, "shuffle");
                for i in (1..order.len()).rev() {
                    let j = shuffle_rng.random_range(0..=i);
                    order.swap(i, j);
                }
                let mut total = 0.0;
                let mut batches = 0.0;
                for chunk in order.chunks(size) {
                    let table = StepTable::new(dataset, chunk, &model)?;
                    total += train_step(&mut model, &mut adam, &table, cfg, &kernel, n_train, epoch)?;
                    batches += 1.0;
                }
                total / batches
            }
        };
        report.train_loss.push(epoch_loss);

        let risk = model.validation_risk(dataset)?;
        if !risk.is_finite() {
            return Err(Error::TrainingDiverged {
                epoch,
                detail: format!("validation risk {risk}"),
            });
        }
        report.validation_risk.push(risk);
        if risk < best_risk {
            best_risk = risk;
            best_params = model.params.clone();
            report.best_epoch = epoch;
        }
    }

    model.params = best_params;
    Ok((model, report))
}

fn train_step(
    model: &mut RepBmModel,
    adam: &mut Adam,
    table: &StepTable,
    cfg: &RepBmConfig,
    kernel: &ResolvedKernel,
    reg_n: usize,
    epoch: usize,
) -> Result<f64> {
    let mut g = Graph::new();
    let vars = bind_params(&mut g, &model.params);
    let terms = build_objective(
        &mut g,
        &vars,
        table,
        model,
        cfg.objective,
        cfg.effective_alpha(),
        kernel,
        cfg.weight_decay,
        reg_n,
    )?;
    let loss = g.value(terms.total).data()[0];
    if !loss.is_finite() {
        let part = |v: Option<f64>| v.map_or("absent".into(), |x| format!("{x}"));
        return Err(Error::TrainingDiverged {
            epoch,
            detail: format!(
                "loss {loss}; behavior={}, reweighted={}, penalty={}, regularizer={}",
                part(terms.behavior),
                part(terms.reweighted),
                part(terms.penalty),
                part(terms.regularizer)
            ),
        });
    }
    g.backward(terms.total)?;
    let grads = collect_grads(&g, &vars, &model.params)?;
    adam.step(&mut model.params, &grads)?;
    Ok(loss)
}
