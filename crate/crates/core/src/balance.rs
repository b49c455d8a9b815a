//! Kernel two-sample discrepancies between groups of representation
//! vectors.
//!
//! The balance penalty compares, at each time step, the factual group
//! (trajectories that followed the evaluated policy so far) against
//! the counterfactual group (those that just deviated) using the
//! biased V-statistic MMD estimate
//!
//! ```text
//! MMD²(F, C) = mean k(f, f') + mean k(c, c') − 2 mean k(f, c)
//! ```
//!
//! clamped at zero before the square root. The RBF bandwidth comes
//! from the median heuristic over the pooled samples and is frozen
//! once per training run.

use serde::{Deserialize, Serialize};


use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};

/// Kernel choice for the balance penalty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kernel", rename_all = "snake_case")]
pub enum KernelSpec {
    /// `k(x, y) = exp(−‖x − y‖² / (2σ²))`. With `bandwidth: None` the
    /// median heuristic picks σ when the kernel is resolved.
    Rbf { bandwidth: Option<f64> },
    /// `k(x, y) = ⟨x, y⟩`; its MMD is exactly the distance between
    /// group means.
    Linear,
}

impl KernelSpec {
    pub fn rbf_median() -> Self {
        KernelSpec::Rbf { bandwidth: None }
    }

    /// Fix any data-dependent scale against the pooled samples so the
    /// same kernel applies for a whole training run.
    pub fn resolve(&self, pooled: &[Vec<f64>]) -> Result<ResolvedKernel> {
        match self {
            KernelSpec::Rbf { bandwidth: Some(s) } => {
                if *s <= 0.0 {
                    return Err(Error::InvalidArgument(format!("bandwidth {s} must be positive")));
                }
                Ok(ResolvedKernel::Rbf { sigma: *s })
            }
            KernelSpec::Rbf { bandwidth: None } => {
                Ok(ResolvedKernel::Rbf { sigma: median_bandwidth(pooled)? })
            }
            KernelSpec::Linear => Ok(ResolvedKernel::Linear),
        }
    }
}

/// A kernel with all scales pinned down.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ResolvedKernel {
    Rbf { sigma: f64 },
    Linear,
}

impl ResolvedKernel {
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        if x.len() != y.len() {
            return Err(Error::ShapeMismatch {
                op: "kernel_eval",
                detail: format!("{} vs {} dimensions", x.len(), y.len()),
            });
        }
        Ok(match self {
            ResolvedKernel::Rbf { sigma } => {
                let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                (-d2 / (2.0 * sigma * sigma)).exp()
            }
            ResolvedKernel::Linear => x.iter().zip(y).map(|(a, b)| a * b).sum(),
        })
    }
}

/// Median of the pairwise Euclidean distances among the pooled
/// samples; falls back to 1 when the median is 0 (all points equal).
pub fn median_bandwidth(pooled: &[Vec<f64>]) -> Result<f64> {
    if pooled.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "median bandwidth needs at least 2 samples, got {}",
            pooled.len()
        )));
    }
    let mut dists = Vec::with_capacity(pooled.len() * (pooled.len() - 1) / 2);
    for i in 0..pooled.len() {
        for j in (i + 1)..pooled.len() {
            if pooled[i].len() != pooled[j].len() {
                return Err(Error::ShapeMismatch {
                    op: "median_bandwidth",
                    detail: format!("{} vs {} dimensions", pooled[i].len(), pooled[j].len()),
                });
            }
            let d2: f64 = pooled[i]
                .iter()
                .zip(&pooled[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            dists.push(d2.sqrt());
        }
    }
    dists.sort_by(|a, b| a.partial_cmp(b).expect("distances are finite"));
    let m = dists.len();
    let median = if m % 2 == 1 {
        dists[m / 2]
    } else {
        0.5 * (dists[m / 2 - 1] + dists[m / 2])
    };
    Ok(if median > 0.0 { median } else { 1.0 })
}

/// Result of an MMD evaluation; groups with fewer than two members
/// cannot support the V-statistic and are skipped, not failed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MmdOutcome {
    Value(f64),
    SkippedSmallGroup,
}

impl MmdOutcome {
    pub fn value(&self) -> Option<f64> {
        match self {
            MmdOutcome::Value(v) => Some(*v),
            MmdOutcome::SkippedSmallGroup => None,
        }
    }
}

/// Biased V-statistic MMD between two sample groups, clamped at zero
/// before the root.
pub fn mmd_estimate(
    kernel: &ResolvedKernel,
    group_f: &[Vec<f64>],
    group_c: &[Vec<f64>],
) -> Result<MmdOutcome> {
    if group_f.len() < 2 || group_c.len() < 2 {
        return Ok(MmdOutcome::SkippedSmallGroup);
    }
    let mean_kernel = |xs: &[Vec<f64>], ys: &[Vec<f64>]| -> Result<f64> {
        let mut total = 0.0;
        for x in xs {
            for y in ys {
                total += kernel.eval(x, y)?;
            }
        }
        Ok(total / (xs.len() * ys.len()) as f64)
    };
    let ff = mean_kernel(group_f, group_f)?;
    let cc = mean_kernel(group_c, group_c)?;
    let fc = mean_kernel(group_f, group_c)?;
    let mmd2 = (ff + cc - 2.0 * fc).max(0.0);
    Ok(MmdOutcome::Value(mmd2.sqrt()))
}

/// Differentiable MMD between two `(m×d)` nodes already in a graph.
/// Matches [`mmd_estimate`] in value and is differentiable with
/// respect to both sample matrices. Group-size checks are the
/// caller's job (training skips small groups before building nodes).
pub fn mmd_node(
    g: &mut Graph,
    kernel: &ResolvedKernel,
    group_f: Var,
    group_c: Var,
) -> Result<Var> {
    let mmd2 = match kernel {
        ResolvedKernel::Rbf { sigma } => {
            let scale = -1.0 / (2.0 * sigma * sigma);
            let gram_mean = |a: Var, b: Var, g: &mut Graph| -> Result<Var> {
                let d = g.pairwise_sqdist(a, b)?;
                let e = g.scale(d, scale)?;
                let k = g.exp(e)?;
                g.mean(k)
            };
            let ff = gram_mean(group_f, group_f, g)?;
            let cc = gram_mean(group_c, group_c, g)?;
            let fc = gram_mean(group_f, group_c, g)?;
            let cross = g.scale(fc, -2.0)?;
            let partial = g.add(ff, cc)?;
            g.add(partial, cross)?
        }
        ResolvedKernel::Linear => {
            // ‖mean(F) − mean(C)‖² via mean rows from constant 1/m row
            // vectors.
            let mean_row = |a: Var, g: &mut Graph| -> Result<Var> {
                let m = g.value(a).shape()[0];
                let ones = crate::autodiff::Tensor::new(vec![1, m], vec![1.0 / m as f64; m])?;
                let w = g.constant(ones);
                g.matmul(w, a)
            };
            let mf = mean_row(group_f, g)?;
            let mc = mean_row(group_c, g)?;
            let diff = g.sub(mf, mc)?;
            let sq = g.square(diff)?;
            g.sum(sq)?
        }
    };
    // Clamp negatives (floating-point artifacts of the V-statistic)
    // to zero, then take the root; sqrt'(0) is treated as 0.
    let clamped = g.relu(mmd2)?;
    g.sqrt(clamped)
}

/// Convenience: run [`mmd_node`] on plain vectors (used to cross-check
/// the graph path against [`mmd_estimate`] and by reports).
pub fn mmd_via_graph(
    kernel: &ResolvedKernel,
    group_f: &[Vec<f64>],
    group_c: &[Vec<f64>],
) -> Result<MmdOutcome> {
    if group_f.len() < 2 || group_c.len() < 2 {
        return Ok(MmdOutcome::SkippedSmallGroup);
    }
    let mut g = Graph::new();
    let f = to_matrix(&mut g, group_f)?;
    let c = to_matrix(&mut g, group_c)?;
    let out = mmd_node(&mut g, kernel, f, c)?;
    Ok(MmdOutcome::Value(g.value(out).data()[0]))
}

fn to_matrix(g: &mut Graph, rows: &[Vec<f64>]) -> Result<Var> {
    let d = rows[0].len();
    let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
    let t = crate::autodiff::Tensor::new(vec![rows.len(), d], flat)?;
    Ok(g.constant(t))
}
