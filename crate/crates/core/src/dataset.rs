//! Trajectory collection, target-policy annotation, splitting, and
//! JSONL storage.
//!
//! A dataset is collected once under a behavior policy μ and then
//! annotated against a deterministic evaluation policy π: per-step
//! factual masks `1(a_{0:t} = π)` and the empirical match fractions
//! `û_{0:t}` drive the reweighted risk and the balance penalty during
//! model training. Episodes that end before the horizon keep their
//! final mask value for later `t` (a finished trajectory can no longer
//! deviate), which keeps `û` non-increasing in `t`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::environments::Environment;
use crate::error::{Error, Result};
use crate::policies::Policy;
use crate::rng;

const DATASET_SCHEMA_VERSION: u32 = 1;

/// One logged episode. `states` has one more entry than the parallel
/// action/reward/probability vectors (the final observed state).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    /// μ(a_t | s_t) as reported by the behavior policy when acting.
    pub behavior_probs: Vec<f64>,
    /// Whether the episode ended in an environment-terminal state
    /// (as opposed to hitting the horizon).
    pub terminal: bool,
    /// Factual mask against the annotated target policy:
    /// `mask[t] = 1(a_0 = π(s_0), …, a_t = π(s_t))`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<Vec<bool>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn initial_state(&self) -> &[f64] {
        &self.states[0]
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }

    fn check(&self) -> Result<()> {
        let l = self.actions.len();
        if self.states.len() != l + 1
            || self.rewards.len() != l
            || self.behavior_probs.len() != l
            || l == 0
        {
            return Err(Error::Dataset(format!(
                "inconsistent trajectory: {} states, {} actions, {} rewards, {} probs",
                self.states.len(),
                l,
                self.rewards.len(),
                self.behavior_probs.len()
            )));
        }
        if let Some(mask) = &self.mask {
            if mask.len() != l {
                return Err(Error::Dataset(format!(
                    "mask length {} does not match {} actions",
                    mask.len(),
                    l
                )));
            }
        }
        Ok(())
    }

    /// Mask at `t` with the carry-forward convention for `t` past the
    /// end of the episode.
    pub fn mask_at(&self, t: usize) -> Option<bool> {
        let mask = self.mask.as_ref()?;
        Some(if t < mask.len() { mask[t] } else { *mask.last().unwrap() })
    }
}

/// How the trajectories are divided for model fitting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub env: String,
    pub horizon: usize,
    pub seed: u64,
    pub behavior_policy_hash: String,
    pub trajectories: Vec<Trajectory>,
    /// Hash of the policy the masks were annotated against.
    pub target_policy_hash: Option<String>,
    /// `û_{0:t}` for `t = 0..horizon`; by default estimated on the
    /// training split (see [`Dataset::split_with_options`]).
    pub u_hat: Option<Vec<f64>>,
    pub split: Option<Split>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn initial_states(&self) -> Vec<Vec<f64>> {
        self.trajectories
            .iter()
            .map(|t| t.initial_state().to_vec())
            .collect()
    }

    pub fn mean_length(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.trajectories.iter().map(|t| t.len() as f64).sum::<f64>() / self.len() as f64
    }

    /// û over a subset of trajectory indices (carry-forward masks).
    fn u_hat_over(&self, indices: &[usize]) -> Result<Vec<f64>> {
        let n = indices.len() as f64;
        (0..self.horizon)
            .map(|t| {
                let mut count = 0usize;
                for &i in indices {
                    let m = self.trajectories[i].mask_at(t).ok_or_else(|| {
                        Error::Dataset("û requested before annotation".into())
                    })?;
                    count += m as usize;
                }
                Ok(count as f64 / n)
            })
            .collect()
    }
}

/// Roll out `n` episodes of `mu` in `env`. Each trajectory draws from
/// its own RNG stream derived from `(seed, index)`, so collection is
/// order-independent and parallelizes across trajectories.
pub fn collect(
    env: &dyn Environment,
    mu: &Policy,
    n: usize,
    seed: u64,
) -> Result<Dataset> {
    let spec = env.spec();
    if mu.action_count() != spec.action_count {
        return Err(Error::InvalidArgument(format!(
            "behavior policy has {} actions, environment {}",
            mu.action_count(),
            spec.action_count
        )));
    }
    let trajectories: Vec<Trajectory> = (0..n)
        .into_par_iter()
        .map(|i| -> Result<Trajectory> {
            let mut rng = rng::stream(seed, i as u64, "trajectory");
            let mut state = env.reset(&mut rng);
            let mut traj = Trajectory {
                states: vec![state.observation.clone()],
                actions: Vec::new(),
                rewards: Vec::new(),
                behavior_probs: Vec::new(),
                terminal: false,
                mask: None,
            };
            while !state.terminal && state.t < spec.horizon {
                let action = mu.sample(&state.observation, &mut rng);
                let prob = mu.action_prob(&state.observation, action);
                let (next, reward) = env.step_rng(&state, action, &mut rng)?;
                traj.actions.push(action);
                traj.rewards.push(reward);
                traj.behavior_probs.push(prob);
                traj.states.push(next.observation.clone());
                state = next;
            }
            traj.terminal = state.terminal;
            Ok(traj)
        })
        .collect::<Result<_>>()?;

    Ok(Dataset {
        env: spec.name.clone(),
        horizon: spec.horizon,
        seed,
        behavior_policy_hash: mu.content_hash(),
        trajectories,
        target_policy_hash: None,
        u_hat: None,
        split: None,
    })
}

impl Dataset {
    /// Mark each step with whether the logged prefix matches the
    /// deterministic policy `pi`, and estimate `û_{0:t}` over the full
    /// dataset (a later split re-estimates it on the training side).
    pub fn annotate(&mut self, pi: &Policy) -> Result<()> {
        if self.is_empty() {
            return Err(Error::Dataset("cannot annotate an empty dataset".into()));
        }
        for traj in &mut self.trajectories {
            let mut matched = true;
            let mask = traj
                .states
                .iter()
                .zip(&traj.actions)
                .map(|(s, &a)| {
                    let pi_action = pi.deterministic_action(s).ok_or_else(|| {
                        Error::InvalidArgument(
                            "annotation requires a deterministic evaluation policy".into(),
                        )
                    })?;
                    matched = matched && a == pi_action;
                    Ok(matched)
                })
                .collect::<Result<Vec<bool>>>()?;
            traj.mask = Some(mask);
        }
        self.target_policy_hash = Some(pi.content_hash());
        let all: Vec<usize> = (0..self.len()).collect();
        self.u_hat = Some(self.u_hat_over(&all)?);
        Ok(())
    }

    /// Split into train/validation by shuffling with a derived seed.
    /// With `u_hat_on_train` (the default used by [`Dataset::split`])
    /// `û` is re-estimated from the training side only.
    pub fn split_with_options(
        &mut self,
        train_fraction: f64,
        seed: u64,
        u_hat_on_train: bool,
    ) -> Result<()> {
        if !(0.0..=1.0).contains(&train_fraction) {
            return Err(Error::InvalidArgument(format!(
                "train fraction {train_fraction} outside [0, 1]"
            )));
        }
        let n = self.len();
        let n_train = (n as f64 * train_fraction).floor() as usize;
        if n_train == 0 || n_train == n {
            return Err(Error::Dataset(format!(
                "splitting {n} trajectories at {train_fraction} leaves an empty side"
            )));
        }
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = rng::stream(seed, 0, "split");
        // Fisher–Yates on the index vector.
        for i in (1..n).rev() {
            let j = rand::Rng::random_range(&mut rng, 0..=i);
            order.swap(i, j);
        }
        let (train, validation) = order.split_at(n_train);
        let mut train = train.to_vec();
        let mut validation = validation.to_vec();
        train.sort_unstable();
        validation.sort_unstable();
        if u_hat_on_train && self.trajectories[0].mask.is_some() {
            self.u_hat = Some(self.u_hat_over(&train)?);
        }
        self.split = Some(Split { train, validation });
        Ok(())
    }

    pub fn split(&mut self, train_fraction: f64, seed: u64) -> Result<()> {
        self.split_with_options(train_fraction, seed, true)
    }

    /// Write as JSON lines: one header record, then one trajectory
    /// per line.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        let header = DatasetHeader {
            schema_version: DATASET_SCHEMA_VERSION,
            env: self.env.clone(),
            horizon: self.horizon,
            seed: self.seed,
            behavior_policy_hash: self.behavior_policy_hash.clone(),
            n: self.len(),
            target_policy_hash: self.target_policy_hash.clone(),
            u_hat: self.u_hat.clone(),
            split: self.split.clone(),
        };
        writeln!(file, "{}", serde_json::to_string(&header)?)?;
        for traj in &self.trajectories {
            writeln!(file, "{}", serde_json::to_string(traj)?)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Dataset> {
        let file = std::fs::File::open(path)?;
        let mut lines = BufReader::new(file).lines().enumerate();
        let (_, header_line) = lines.next().ok_or_else(|| Error::Parse {
            line: 1,
            msg: "empty file (missing header record)".into(),
        })?;
        let header: DatasetHeader =
            serde_json::from_str(&header_line?).map_err(|e| Error::Parse {
                line: 1,
                msg: e.to_string(),
            })?;
        if header.schema_version != DATASET_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: header.schema_version,
                expected: DATASET_SCHEMA_VERSION,
            });
        }
        let mut trajectories = Vec::with_capacity(header.n);
        let mut last_line = 1;
        for (idx, line) in lines {
            let line_no = idx + 1;
            last_line = line_no;
            let text = line?;
            if text.trim().is_empty() {
                continue;
            }
            let traj: Trajectory = serde_json::from_str(&text).map_err(|e| Error::Parse {
                line: line_no,
                msg: e.to_string(),
            })?;
            traj.check().map_err(|e| Error::Parse { line: line_no, msg: e.to_string() })?;
            trajectories.push(traj);
        }
        if trajectories.len() != header.n {
            return Err(Error::Parse {
                line: last_line,
                msg: format!(
                    "header promises {} trajectories, file has {}",
                    header.n,
                    trajectories.len()
                ),
            });
        }
        Ok(Dataset {
            env: header.env,
            horizon: header.horizon,
            seed: header.seed,
            behavior_policy_hash: header.behavior_policy_hash,
            trajectories,
            target_policy_hash: header.target_policy_hash,
            u_hat: header.u_hat,
            split: header.split,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct DatasetHeader {
    schema_version: u32,
    env: String,
    horizon: usize,
    seed: u64,
    behavior_policy_hash: String,
    n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    target_policy_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    u_hat: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<Split>,
}
