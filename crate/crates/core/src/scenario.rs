//! Scenario reduction by fast-forward selection under the transport
//! distance.
//!
//! Out of `N` weighted joint paths, the reducer greedily selects the path
//! that minimizes the total weighted distance of the still-unselected paths
//! to the selected set, repeats until `S` paths are chosen, and then moves
//! each unselected path's probability to its nearest selected one. Ties
//! break towards the lower path index, so the result is deterministic and
//! permutation-equivariant up to that rule.
//!
//! Distances are Euclidean over the concatenated (load, generation)
//! trajectories in raw kW. The N x N distance matrix fill is the hot spot
//! and runs on the rayon pool when the `parallel` feature is enabled.

use thiserror::Error;

use crate::series::PowerPoint;

#[derive(Debug, Error, PartialEq)]
pub enum ReduceError {
    #[error("paths have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("cannot reduce {n} paths to {target}")]
    BadTarget { n: usize, target: usize },
    #[error("weights must be nonnegative and sum to 1 (sum = {0})")]
    BadWeights(f64),
    #[error("no paths given")]
    Empty,
}

/// Reduced scenario set: `S` equal-length joint paths with probabilities
/// summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSet {
    pub paths: Vec<Vec<PowerPoint>>,
    pub probabilities: Vec<f64>,
}

impl ScenarioSet {
    /// Single scenario with probability one.
    pub fn certain(path: Vec<PowerPoint>) -> Self {
        Self {
            paths: vec![path],
            probabilities: vec![1.0],
        }
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn horizon(&self) -> usize {
        self.paths.first().map(Vec::len).unwrap_or(0)
    }

    pub fn validate(&self) -> Result<(), ReduceError> {
        if self.paths.is_empty() {
            return Err(ReduceError::Empty);
        }
        let len = self.paths[0].len();
        for p in &self.paths {
            if p.len() != len {
                return Err(ReduceError::LengthMismatch(len, p.len()));
            }
        }
        let sum = kahan_sum(&self.probabilities);
        if self.probabilities.iter().any(|&p| p < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(ReduceError::BadWeights(sum));
        }
        Ok(())
    }
}

/// Euclidean distance between two joint paths of equal length.
pub fn path_distance(a: &[PowerPoint], b: &[PowerPoint]) -> Result<f64, ReduceError> {
    if a.len() != b.len() {
        return Err(ReduceError::LengthMismatch(a.len(), b.len()));
    }
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let dl = x.load_kw - y.load_kw;
        let dr = x.res_kw - y.res_kw;
        acc += dl * dl + dr * dr;
    }
    Ok(acc.sqrt())
}

/// Full pairwise distance matrix, row-major.
pub fn distance_matrix_seq(paths: &[Vec<PowerPoint>]) -> Result<Vec<f64>, ReduceError> {
    let n = paths.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let v = path_distance(&paths[i], &paths[j])?;
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    Ok(d)
}

#[cfg(feature = "parallel")]
pub fn distance_matrix_par(paths: &[Vec<PowerPoint>]) -> Result<Vec<f64>, ReduceError> {
    use rayon::prelude::*;
    let n = paths.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let len = paths[0].len();
    for p in paths {
        if p.len() != len {
            return Err(ReduceError::LengthMismatch(len, p.len()));
        }
    }
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| path_distance(&paths[i], &paths[j]).expect("checked lengths"))
                .collect()
        })
        .collect();
    Ok(rows.into_iter().flatten().collect())
}

fn distance_matrix(paths: &[Vec<PowerPoint>]) -> Result<Vec<f64>, ReduceError> {
    #[cfg(feature = "parallel")]
    {
        distance_matrix_par(paths)
    }
    #[cfg(not(feature = "parallel"))]
    {
        distance_matrix_seq(paths)
    }
}

/// Neumaier-compensated sum; keeps probability bookkeeping at 1e-12 scale.
fn kahan_sum(values: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for &v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Fast-forward reduction of `paths` with probabilities `weights` down to
/// `target` scenarios. Selected scenarios are a subset of the input; each
/// unselected path's probability moves to its nearest selected path.
pub fn reduce(
    paths: &[Vec<PowerPoint>],
    weights: &[f64],
    target: usize,
) -> Result<ScenarioSet, ReduceError> {
    let n = paths.len();
    if n == 0 {
        return Err(ReduceError::Empty);
    }
    if target == 0 || target > n {
        return Err(ReduceError::BadTarget { n, target });
    }
    if weights.len() != n {
        return Err(ReduceError::LengthMismatch(weights.len(), n));
    }
    let wsum = kahan_sum(weights);
    if weights.iter().any(|&w| w < 0.0) || (wsum - 1.0).abs() > 1e-9 {
        return Err(ReduceError::BadWeights(wsum));
    }

    if target == n {
        return Ok(ScenarioSet {
            paths: paths.to_vec(),
            probabilities: weights.to_vec(),
        });
    }

    let d = distance_matrix(paths)?;
    let mut selected: Vec<usize> = Vec::with_capacity(target);
    let mut chosen = vec![false; n];
    // Distance of each path to the current selected set.
    let mut to_selected = vec![f64::INFINITY; n];

    for _ in 0..target {
        let mut best: Option<(usize, f64)> = None;
        for u in 0..n {
            if chosen[u] {
                continue;
            }
            // Transport cost if u joins the selection.
            let mut cost = 0.0;
            for k in 0..n {
                if chosen[k] || k == u {
                    continue;
                }
                cost += weights[k] * to_selected[k].min(d[k * n + u]);
            }
            let better = match best {
                None => true,
                Some((_, bc)) => cost < bc - 1e-15,
            };
            if better {
                best = Some((u, cost));
            }
        }
        let (u, _) = best.expect("at least one unselected path remains");
        chosen[u] = true;
        selected.push(u);
        for k in 0..n {
            to_selected[k] = to_selected[k].min(d[k * n + u]);
        }
    }
    selected.sort_unstable();

    // Redistribute probability mass to the nearest selected scenario.
    let mut probs = vec![0.0; target];
    let mut parts: Vec<Vec<f64>> = vec![Vec::new(); target];
    for k in 0..n {
        let mut nearest = 0usize;
        let mut best = f64::INFINITY;
        for (s, &u) in selected.iter().enumerate() {
            let dist = d[k * n + u];
            if dist < best - 1e-15 {
                best = dist;
                nearest = s;
            }
        }
        parts[nearest].push(weights[k]);
    }
    for (s, part) in parts.iter().enumerate() {
        probs[s] = kahan_sum(part);
    }

    Ok(ScenarioSet {
        paths: selected.iter().map(|&u| paths[u].clone()).collect(),
        probabilities: probs,
    })
}
