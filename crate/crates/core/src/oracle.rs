//! Exact computations on small tabular MDPs: policy values by dynamic
//! programming, full-support enumeration of importance-weight
//! distributions, the simulation identity relating model error to
//! value error, and the bias induced by a misestimated behavior
//! policy.
//!
//! Everything here is independent of the learned-model stack — these
//! are the reference answers the estimators are tested against.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::environments::TabularMdp;
use crate::error::{Error, Result};
use crate::policies::Policy;

/// Cap on exhaustive enumeration: at most `2^16` action sequences and
/// `2^20` full trajectory branches.
const ACTION_SEQ_CAP: u128 = 1 << 16;
const PATH_CAP: u128 = 1 << 20;

/// A finite distribution over real values, with exact probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    /// `(value, probability)` pairs; equal values are merged.
    pub support: Vec<(f64, f64)>,
}

impl Distribution {
    fn from_atoms(mut atoms: Vec<(f64, f64)>) -> Self {
        atoms.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite values"));
        let mut support: Vec<(f64, f64)> = Vec::new();
        for (v, p) in atoms {
            match support.last_mut() {
                Some((lv, lp)) if *lv == v => *lp += p,
                _ => support.push((v, p)),
            }
        }
        Self { support }
    }

    pub fn total_probability(&self) -> f64 {
        self.support.iter().map(|(_, p)| p).sum()
    }

    pub fn mean(&self) -> f64 {
        self.support.iter().map(|(v, p)| v * p).sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.support.iter().map(|(v, p)| p * (v - m) * (v - m)).sum()
    }
}

fn policy_probs(policy: &Policy, state: usize) -> Vec<f64> {
    policy.probs(&[state as f64])
}

/// `V^π_h(s)` for every state, by backward induction over `horizon`
/// steps (undiscounted, mean rewards).
pub fn exact_state_values(
    mdp: &TabularMdp,
    policy: &Policy,
    horizon: usize,
) -> Result<Vec<f64>> {
    if policy.action_count() != mdp.action_count {
        return Err(Error::InvalidArgument(format!(
            "policy has {} actions, MDP {}",
            policy.action_count(),
            mdp.action_count
        )));
    }
    let mut values = vec![0.0; mdp.state_count];
    for _ in 0..horizon {
        let mut next = vec![0.0; mdp.state_count];
        for s in 0..mdp.state_count {
            let probs = policy_probs(policy, s);
            let mut v = 0.0;
            for a in 0..mdp.action_count {
                if probs[a] == 0.0 {
                    continue;
                }
                let continuation: f64 = mdp.transition[s][a]
                    .iter()
                    .zip(&values)
                    .map(|(&p, &vv)| p * vv)
                    .sum();
                v += probs[a] * (mdp.reward[s][a] + continuation);
            }
            next[s] = v;
        }
        values = next;
    }
    Ok(values)
}

/// Exact policy value from the initial distribution.
pub fn exact_value(mdp: &TabularMdp, policy: &Policy, horizon: usize) -> Result<f64> {
    let values = exact_state_values(mdp, policy, horizon)?;
    Ok(mdp.initial.iter().zip(&values).map(|(&p, &v)| p * v).sum())
}

fn check_enumeration_size(mdp: &TabularMdp, horizon: usize) -> Result<()> {
    let seqs = (mdp.action_count as u128)
        .checked_pow(horizon as u32)
        .unwrap_or(u128::MAX);
    if seqs > ACTION_SEQ_CAP {
        return Err(Error::EnumerationTooLarge { size: seqs, cap: ACTION_SEQ_CAP });
    }
    Ok(())
}

/// Verify that `mu` can produce every trajectory `pi` can, over the
/// states reachable under `pi` within `horizon` steps.
pub fn check_tabular_support(
    mdp: &TabularMdp,
    mu: &Policy,
    pi: &Policy,
    horizon: usize,
) -> Result<()> {
    let mut reach = mdp.initial.clone();
    for _ in 0..horizon {
        let mut next = vec![0.0; mdp.state_count];
        for s in 0..mdp.state_count {
            if reach[s] == 0.0 {
                continue;
            }
            let pi_probs = policy_probs(pi, s);
            let mu_probs = policy_probs(mu, s);
            for a in 0..mdp.action_count {
                if pi_probs[a] > 0.0 && mu_probs[a] == 0.0 {
                    return Err(Error::SupportViolation {
                        detail: format!("state {s}, action {a}"),
                    });
                }
                if pi_probs[a] == 0.0 {
                    continue;
                }
                for (sp, &tp) in mdp.transition[s][a].iter().enumerate() {
                    if tp > 0.0 {
                        next[sp] += reach[s] * pi_probs[a] * tp;
                    }
                }
            }
        }
        reach = next;
    }
    Ok(())
}

/// Walk every positive-probability trajectory under `(mu, mdp)` and
/// fold `(probability, state/action path)` into `f`.
fn enumerate_trajectories<F>(
    mdp: &TabularMdp,
    mu: &Policy,
    horizon: usize,
    f: &mut F,
) -> Result<()>
where
    F: FnMut(f64, &[(usize, usize)]),
{
    check_enumeration_size(mdp, horizon)?;
    let mut visited: u128 = 0;
    let mut path: Vec<(usize, usize)> = Vec::with_capacity(horizon);

    fn recurse<F>(
        mdp: &TabularMdp,
        mu: &Policy,
        horizon: usize,
        state: usize,
        prob: f64,
        path: &mut Vec<(usize, usize)>,
        visited: &mut u128,
        f: &mut F,
    ) -> Result<()>
    where
        F: FnMut(f64, &[(usize, usize)]),
    {
        if path.len() == horizon {
            *visited += 1;
            if *visited > PATH_CAP {
                return Err(Error::EnumerationTooLarge { size: *visited, cap: PATH_CAP });
            }
            f(prob, path);
            return Ok(());
        }
        let mu_probs = policy_probs(mu, state);
        for a in 0..mdp.action_count {
            if mu_probs[a] == 0.0 {
                continue;
            }
            for (sp, &tp) in mdp.transition[state][a].iter().enumerate() {
                if tp == 0.0 {
                    continue;
                }
                path.push((state, a));
                recurse(mdp, mu, horizon, sp, prob * mu_probs[a] * tp, path, visited, f)?;
                path.pop();
            }
        }
        Ok(())
    }

    for (s0, &p0) in mdp.initial.iter().enumerate() {
        if p0 > 0.0 {
            recurse(mdp, mu, horizon, s0, p0, &mut path, &mut visited, f)?;
        }
    }
    Ok(())
}

/// The two weight distributions compared by the variance analysis.
#[derive(Debug, Clone)]
pub struct WeightDistributions {
    /// Trajectory-wise importance weight `Π_t π(a_t|s_t)/μ(a_t|s_t)`
    /// under trajectories drawn from `(μ, M)`.
    pub is_weights: Distribution,
    /// Marginal action-sequence ratio
    /// `p_{π,M}(a_{0:H−1}) / p_{μ,M}(a_{0:H−1})` under the same draw.
    pub marginal_ratios: Distribution,
}

/// Enumerate both weight distributions exactly.
pub fn weight_distributions(
    mdp: &TabularMdp,
    mu: &Policy,
    pi: &Policy,
    horizon: usize,
) -> Result<WeightDistributions> {
    check_tabular_support(mdp, mu, pi, horizon)?;
    check_enumeration_size(mdp, horizon)?;

    // Trajectory-wise importance weights.
    let mut atoms: Vec<(f64, f64)> = Vec::new();
    enumerate_trajectories(mdp, mu, horizon, &mut |prob, path| {
        let mut w = 1.0;
        for &(s, a) in path {
            let pi_p = policy_probs(pi, s)[a];
            let mu_p = policy_probs(mu, s)[a];
            w *= pi_p / mu_p;
        }
        atoms.push((w, prob));
    })?;
    let is_weights = Distribution::from_atoms(atoms);

    // Marginal probability of each action sequence under both
    // policies, by forward DP over states.
    let seq_count = (mdp.action_count as u128).pow(horizon as u32) as usize;
    let mut atoms = Vec::with_capacity(seq_count);
    let mut seq = vec![0usize; horizon];
    for code in 0..seq_count {
        let mut rem = code;
        for slot in seq.iter_mut() {
            *slot = rem % mdp.action_count;
            rem /= mdp.action_count;
        }
        let marginal = |policy: &Policy| -> f64 {
            let mut dist = mdp.initial.clone();
            let mut prob_acc = 1.0;
            for &a in &seq {
                let mut next = vec![0.0; mdp.state_count];
                let mut step_mass = 0.0;
                for s in 0..mdp.state_count {
                    if dist[s] == 0.0 {
                        continue;
                    }
                    let pa = policy_probs(policy, s)[a];
                    if pa == 0.0 {
                        continue;
                    }
                    step_mass += dist[s] * pa;
                    for (sp, &tp) in mdp.transition[s][a].iter().enumerate() {
                        next[sp] += dist[s] * pa * tp;
                    }
                }
                if step_mass == 0.0 {
                    return 0.0;
                }
                // Renormalize so `dist` stays conditional on the
                // sequence so far; accumulate the sequence mass.
                prob_acc *= step_mass;
                for v in next.iter_mut() {
                    *v /= step_mass;
                }
                dist = next;
            }
            prob_acc
        };
        let p_mu = marginal(mu);
        if p_mu == 0.0 {
            continue;
        }
        let p_pi = marginal(pi);
        atoms.push((p_pi / p_mu, p_mu));
    }
    let marginal_ratios = Distribution::from_atoms(atoms);

    Ok(WeightDistributions { is_weights, marginal_ratios })
}

/// Expected value of the step-IS estimator
/// `E_{τ∼(μ,M)}[Π_t π(a_t|s_t)/μ̂(a_t|s_t) · R(τ)]`, with the weight
/// computed against `mu_hat` (pass `mu` itself for the well-specified
/// case).
pub fn is_expected_value(
    mdp: &TabularMdp,
    mu: &Policy,
    mu_hat: &Policy,
    pi: &Policy,
    horizon: usize,
) -> Result<f64> {
    check_tabular_support(mdp, mu, pi, horizon)?;
    let mut expectation = 0.0;
    enumerate_trajectories(mdp, mu, horizon, &mut |prob, path| {
        let mut w = 1.0;
        let mut ret = 0.0;
        for &(s, a) in path {
            w *= policy_probs(pi, s)[a] / policy_probs(mu_hat, s)[a];
            ret += mdp.reward[s][a];
        }
        expectation += prob * w * ret;
    })?;
    Ok(expectation)
}

/// Both sides of the simulation identity
///
/// ```text
/// V̂_H(s) − V_H(s) =
///   E_{π,M} [ Σ_t ( r̂(s_t,a_t) − r̄(s_t,a_t)
///                 + Σ_{s'} (T̂ − T)(s'|s_t,a_t) · V̂_{H−t−1}(s') ) ]
/// ```
///
/// evaluated exactly for every initial state; returns the largest
/// absolute difference between the two sides.
pub fn simulation_identity_gap(
    mdp: &TabularMdp,
    model: &TabularMdp,
    policy: &Policy,
    horizon: usize,
) -> Result<f64> {
    if mdp.state_count != model.state_count || mdp.action_count != model.action_count {
        return Err(Error::InvalidArgument(format!(
            "model is {}×{}, MDP {}×{}",
            model.state_count, model.action_count, mdp.state_count, mdp.action_count
        )));
    }
    // Model values at every remaining horizon 0..=H.
    let mut model_values = Vec::with_capacity(horizon + 1);
    for h in 0..=horizon {
        model_values.push(exact_state_values(model, policy, h)?);
    }
    let true_values = exact_state_values(mdp, policy, horizon)?;

    let mut gap: f64 = 0.0;
    for s0 in 0..mdp.state_count {
        let lhs = model_values[horizon][s0] - true_values[s0];

        // State occupancy under (π, M) from s0, stepped forward.
        let mut dist = vec![0.0; mdp.state_count];
        dist[s0] = 1.0;
        let mut rhs = 0.0;
        for t in 0..horizon {
            let v_next = &model_values[horizon - t - 1];
            let mut next = vec![0.0; mdp.state_count];
            for s in 0..mdp.state_count {
                if dist[s] == 0.0 {
                    continue;
                }
                let probs = policy_probs(policy, s);
                for a in 0..mdp.action_count {
                    if probs[a] == 0.0 {
                        continue;
                    }
                    let w = dist[s] * probs[a];
                    let mut term = model.reward[s][a] - mdp.reward[s][a];
                    for sp in 0..mdp.state_count {
                        term += (model.transition[s][a][sp] - mdp.transition[s][a][sp])
                            * v_next[sp];
                        next[sp] += w * mdp.transition[s][a][sp];
                    }
                    rhs += w * term;
                }
            }
            dist = next;
        }
        gap = gap.max((lhs - rhs).abs());
    }
    Ok(gap)
}

/// Exact expectation of the IS estimator on the depth-`depth` binary
/// tree when the behavior policy is uniform but the weights divide by
/// a misestimate that puts `1/2 − δ/2` on the rewarded path. The
/// closed form is `(1 − δ)^{−depth}`.
pub fn is_bias_with_estimated_mu(depth: usize, delta: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&delta) {
        return Err(Error::InvalidArgument(format!("δ = {delta} outside [0, 1)")));
    }
    let mdp = TabularMdp::tree(depth)?;
    let uniform = Policy::Tabular { probs: vec![vec![0.5, 0.5]; mdp.state_count] };
    // Misestimate μ̂ only along the leftmost path (nodes 2^k − 1).
    let mut hat = vec![vec![0.5, 0.5]; mdp.state_count];
    for k in 0..depth {
        let node = (1usize << k) - 1;
        hat[node] = vec![0.5 - delta / 2.0, 0.5 + delta / 2.0];
    }
    let mu_hat = Policy::Tabular { probs: hat };
    let always_left = Policy::Tabular {
        probs: (0..mdp.state_count).map(|_| vec![1.0, 0.0]).collect(),
    };
    is_expected_value(&mdp, &uniform, &mu_hat, &always_left, depth)
}

/// Random dense MDP with strictly positive transition rows — small
/// enough for enumeration, generic enough to exercise the identities.
pub fn random_mdp(
    state_count: usize,
    action_count: usize,
    horizon: usize,
    rng: &mut ChaCha8Rng,
) -> TabularMdp {
    let row = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let raw: Vec<f64> = (0..state_count).map(|_| rng.random_range(0.05..1.0)).collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|x| x / total).collect()
    };
    let transition = (0..state_count)
        .map(|_| (0..action_count).map(|_| row(rng)).collect())
        .collect();
    let reward = (0..state_count)
        .map(|_| (0..action_count).map(|_| rng.random_range(0.0..1.0)).collect())
        .collect();
    let initial = row(rng);
    TabularMdp::new(transition, reward, initial, horizon).expect("rows normalized")
}

/// Random strictly positive tabular policy.
pub fn random_positive_policy(
    state_count: usize,
    action_count: usize,
    rng: &mut ChaCha8Rng,
) -> Policy {
    let probs = (0..state_count)
        .map(|_| {
            let raw: Vec<f64> = (0..action_count).map(|_| rng.random_range(0.1..1.0)).collect();
            let total: f64 = raw.iter().sum();
            raw.into_iter().map(|x| x / total).collect()
        })
        .collect();
    Policy::Tabular { probs }
}

/// Random deterministic tabular policy.
pub fn random_deterministic_policy(
    state_count: usize,
    action_count: usize,
    rng: &mut ChaCha8Rng,
) -> Policy {
    let probs = (0..state_count)
        .map(|_| {
            let pick = rng.random_range(0..action_count);
            (0..action_count).map(|a| (a == pick) as usize as f64).collect()
        })
        .collect();
    Policy::Tabular { probs }
}
