//! Exact branch-and-bound over the LP relaxation, plus the external-solver
//! file bridge.
//!
//! The search is deterministic by construction: branching picks the most
//! fractional binary (lowest id on ties), nodes are explored depth-first
//! with best-bound then creation-order tie-breaks, and node LPs warm start
//! from the parent basis. Ordered interpolation groups left unencoded by the
//! model builder are enforced by interval branching on the group itself;
//! when a model carries an explicit binary encoding those groups are already
//! adjacent at any integral point and never trigger a branch.
//!
//! A dive heuristic runs once at the root to seed the incumbent: it fixes
//! every fractional binary to its rounding in one shot, then falls back to
//! fixing them one at a time (flipping on infeasibility), and finally
//! narrows violated groups around their weighted mean breakpoint.

use std::process::Command;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::milp::{mps, MilpModel, ModelError, VarKind};
use crate::simplex::{solve_lp_problem, Basis, LpProblem, LpResult, LpStatus};

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("invalid model: {0}")]
    Model(#[from] ModelError),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("external solver bridge: {0}")]
    Bridge(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    /// A node or time limit fired; the solution carries the best incumbent
    /// found so far (empty values if none).
    Limit,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub status: SolveStatus,
    pub objective: f64,
    pub values: Vec<f64>,
    pub node_count: u64,
    pub wall: Duration,
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub node_limit: Option<u64>,
    pub time_limit: Option<Duration>,
    /// Absolute optimality gap for pruning and termination.
    pub absolute_gap: f64,
    /// Residual below which a binary counts as integral.
    pub integrality_tol: f64,
    /// Seed the incumbent with a root dive before branching.
    pub dive_heuristic: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            node_limit: None,
            time_limit: None,
            absolute_gap: 1e-6,
            integrality_tol: 1e-6,
            dive_heuristic: true,
        }
    }
}

/// Constraint, bound, integrality and ordered-group checks applied to any
/// assignment claimed feasible (solver output, imported solution files).
pub fn verify_assignment(model: &MilpModel, values: &[f64], tol: f64) -> Result<(), String> {
    if values.len() != model.n_variables() {
        return Err(format!(
            "assignment has {} values, model has {} variables",
            values.len(),
            model.n_variables()
        ));
    }
    let worst = model.max_violation(values);
    if worst > tol {
        return Err(format!("constraint/bound residual {worst:.3e} exceeds {tol:.1e}"));
    }
    for (j, v) in model.variables.iter().enumerate() {
        if v.kind == VarKind::Binary {
            let r = (values[j] - values[j].round()).abs();
            if r > tol {
                return Err(format!("binary x{j} has integrality residual {r:.3e}"));
            }
        }
    }
    for (g, group) in model.sos2_groups.iter().enumerate() {
        if let Some((lo, hi)) = support_span(group, values, tol) {
            if hi - lo > 1 {
                return Err(format!(
                    "ordered group {g} has non-adjacent support [{lo}, {hi}]"
                ));
            }
        }
    }
    Ok(())
}

/// Index span of the nonzero members of a group, if any.
fn support_span(group: &[usize], values: &[f64], tol: f64) -> Option<(usize, usize)> {
    let mut span = None;
    for (i, &j) in group.iter().enumerate() {
        if values[j].abs() > tol {
            span = Some(match span {
                None => (i, i),
                Some((lo, _)) => (lo, i),
            });
        }
    }
    span
}

fn map_lp(lp: LpResult, wall: Duration) -> Result<Solution, SolveError> {
    let status = match lp.status {
        LpStatus::Optimal => SolveStatus::Optimal,
        LpStatus::Infeasible => SolveStatus::Infeasible,
        LpStatus::Unbounded => SolveStatus::Unbounded,
        LpStatus::Failed => {
            return Err(SolveError::Numerical(format!(
                "simplex failed after {} iterations",
                lp.iterations
            )))
        }
    };
    Ok(Solution {
        status,
        objective: lp.objective,
        values: lp.values,
        node_count: 0,
        wall,
    })
}

/// Solve the continuous relaxation (integrality dropped, groups ignored).
pub fn solve_lp(model: &MilpModel, _options: &SolverOptions) -> Result<Solution, SolveError> {
    model.validate()?;
    let t0 = Instant::now();
    let lp = solve_lp_problem(&LpProblem::from_model(model), None);
    map_lp(lp, t0.elapsed())
}

#[derive(Debug, Clone)]
struct Node {
    /// Variable bound overrides relative to the root problem.
    overrides: Vec<(usize, f64, f64)>,
    /// Allowed breakpoint window per ordered group.
    windows: Vec<(usize, usize)>,
    bound: f64,
    depth: u32,
    seq: u64,
    basis: Basis,
}

/// Heap ordering: depth-first, then best bound, then creation order.
struct Open(Node);

impl PartialEq for Open {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == std::cmp::Ordering::Equal
    }
}
impl Eq for Open {}
impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Open {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0
            .depth
            .cmp(&other.0.depth)
            .then_with(|| other.0.bound.total_cmp(&self.0.bound))
            .then_with(|| other.0.seq.cmp(&self.0.seq))
    }
}

struct Search<'a> {
    model: &'a MilpModel,
    opts: &'a SolverOptions,
    root: LpProblem,
    binaries: Vec<usize>,
    incumbent: Option<(f64, Vec<f64>)>,
    node_count: u64,
    seq: u64,
    started: Instant,
}

impl<'a> Search<'a> {
    fn hit_limit(&self) -> bool {
        if let Some(n) = self.opts.node_limit {
            if self.node_count >= n {
                return true;
            }
        }
        if let Some(t) = self.opts.time_limit {
            if self.started.elapsed() >= t {
                return true;
            }
        }
        false
    }

    /// Materialize a node into a solvable problem.
    fn problem_for(&self, overrides: &[(usize, f64, f64)], windows: &[(usize, usize)]) -> LpProblem {
        let mut p = self.root.clone();
        for (g, group) in self.model.sos2_groups.iter().enumerate() {
            let (lo, hi) = windows[g];
            for (i, &j) in group.iter().enumerate() {
                if i < lo || i > hi {
                    p.set_bounds(j, 0.0, 0.0);
                }
            }
        }
        for &(j, lo, hi) in overrides {
            p.set_bounds(j, lo, hi);
        }
        p
    }

    fn most_fractional_binary(&self, values: &[f64]) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for &j in &self.binaries {
            let v = values[j];
            let frac = (v - v.round()).abs();
            if frac > self.opts.integrality_tol {
                let better = match best {
                    None => true,
                    Some((_, bf)) => frac > bf + 1e-12,
                };
                if better {
                    best = Some((j, frac));
                }
            }
        }
        best.map(|(j, _)| (j, values[j]))
    }

    /// First group whose support is not contained in an adjacent pair inside
    /// its window, together with the split index.
    fn violated_group(&self, values: &[f64], windows: &[(usize, usize)]) -> Option<(usize, usize)> {
        for (g, group) in self.model.sos2_groups.iter().enumerate() {
            if let Some((slo, shi)) = support_span(group, values, self.opts.integrality_tol) {
                if shi - slo > 1 {
                    let (wlo, whi) = windows[g];
                    let mut mass = 0.0;
                    let mut mean = 0.0;
                    for (i, &j) in group.iter().enumerate() {
                        mass += values[j].abs();
                        mean += values[j].abs() * i as f64;
                    }
                    let r = if mass > 0.0 {
                        (mean / mass).round() as usize
                    } else {
                        (wlo + whi) / 2
                    };
                    let r = r.clamp(wlo + 1, whi - 1);
                    return Some((g, r));
                }
            }
        }
        None
    }

    fn offer_incumbent(&mut self, objective: f64, values: Vec<f64>) {
        let better = match &self.incumbent {
            None => true,
            Some((best, _)) => objective < *best,
        };
        if better {
            let mut snapped = values;
            for &j in &self.binaries {
                snapped[j] = snapped[j].round();
            }
            self.incumbent = Some((objective, snapped));
        }
    }

    /// Root dive: one-shot rounding fix, then variable-by-variable fixing
    /// with a flip retry, then group window narrowing.
    fn dive(&mut self, root_lp: &LpResult) {
        let mut overrides: Vec<(usize, f64, f64)> = Vec::new();
        let mut windows: Vec<(usize, usize)> = self
            .model
            .sos2_groups
            .iter()
            .map(|g| (0, g.len().saturating_sub(1)))
            .collect();
        let mut basis = root_lp.basis.clone();
        let mut current = root_lp.clone();
        let mut budget = 64usize;

        // One-shot: pin every binary to its rounding.
        let shot: Vec<(usize, f64, f64)> = self
            .binaries
            .iter()
            .map(|&j| {
                let v = current.values[j].round();
                (j, v, v)
            })
            .collect();
        let p = self.problem_for(&shot, &windows);
        let r = solve_lp_problem(&p, Some(&basis));
        if r.status == LpStatus::Optimal {
            overrides = shot;
            basis = r.basis.clone();
            current = r;
        } else {
            // Incremental: fix the most fractional binary first, flipping
            // the assignment when the fix is infeasible.
            loop {
                let frac = self.most_fractional_binary(&current.values);
                let Some((j, v)) = frac else { break };
                if budget == 0 {
                    return;
                }
                budget -= 1;
                let first = v.round();
                let mut fixed = overrides.clone();
                fixed.push((j, first, first));
                let p = self.problem_for(&fixed, &windows);
                let r = solve_lp_problem(&p, Some(&basis));
                let accepted = if r.status == LpStatus::Optimal {
                    Some((fixed, r))
                } else {
                    let other = 1.0 - first;
                    let mut flipped = overrides.clone();
                    flipped.push((j, other, other));
                    let p = self.problem_for(&flipped, &windows);
                    let r = solve_lp_problem(&p, Some(&basis));
                    (r.status == LpStatus::Optimal).then_some((flipped, r))
                };
                match accepted {
                    Some((fixed, r)) => {
                        overrides = fixed;
                        basis = r.basis.clone();
                        current = r;
                    }
                    None => return,
                }
            }
        }

        // Narrow violated groups around their weighted mean.
        while let Some((g, r)) = self.violated_group(&current.values, &windows) {
            if budget == 0 {
                return;
            }
            budget -= 1;
            let (lo, hi) = windows[g];
            // Keep the adjacent pair nearest the mean split.
            let pair_lo = r.saturating_sub(1).max(lo);
            windows[g] = (pair_lo, (pair_lo + 1).min(hi));
            let p = self.problem_for(&overrides, &windows);
            let sol = solve_lp_problem(&p, Some(&basis));
            if sol.status != LpStatus::Optimal {
                return;
            }
            basis = sol.basis.clone();
            current = sol;
        }

        if self.most_fractional_binary(&current.values).is_none()
            && verify_assignment(self.model, &current.values, self.opts.integrality_tol).is_ok()
        {
            self.offer_incumbent(current.objective, current.values);
        }
    }

    fn run(mut self) -> Result<Solution, SolveError> {
        let root_windows: Vec<(usize, usize)> = self
            .model
            .sos2_groups
            .iter()
            .map(|g| (0, g.len().saturating_sub(1)))
            .collect();
        let root_lp = solve_lp_problem(&self.root, None);
        self.node_count = 1;
        match root_lp.status {
            LpStatus::Infeasible => {
                return Ok(self.finish(SolveStatus::Infeasible));
            }
            LpStatus::Unbounded => {
                return Ok(Solution {
                    status: SolveStatus::Unbounded,
                    objective: f64::NEG_INFINITY,
                    values: Vec::new(),
                    node_count: self.node_count,
                    wall: self.started.elapsed(),
                });
            }
            LpStatus::Failed => {
                return Err(SolveError::Numerical("root relaxation failed".into()));
            }
            LpStatus::Optimal => {}
        }

        if self.opts.dive_heuristic
            && (!self.binaries.is_empty() || !self.model.sos2_groups.is_empty())
        {
            self.dive(&root_lp);
        }

        let mut heap = std::collections::BinaryHeap::new();
        heap.push(Open(Node {
            overrides: Vec::new(),
            windows: root_windows,
            bound: root_lp.objective,
            depth: 0,
            seq: 0,
            basis: root_lp.basis.clone(),
        }));
        self.seq = 1;

        while let Some(Open(node)) = heap.pop() {
            if self.hit_limit() {
                return Ok(self.finish(SolveStatus::Limit));
            }
            if let Some((best, _)) = &self.incumbent {
                if node.bound >= best - self.opts.absolute_gap {
                    continue;
                }
            }
            let lp = if node.depth == 0 {
                root_lp.clone()
            } else {
                self.node_count += 1;
                let p = self.problem_for(&node.overrides, &node.windows);
                let mut r = solve_lp_problem(&p, Some(&node.basis));
                if r.status == LpStatus::Failed {
                    r = solve_lp_problem(&p, None);
                }
                r
            };
            match lp.status {
                LpStatus::Infeasible => continue,
                LpStatus::Failed | LpStatus::Unbounded => {
                    return Err(SolveError::Numerical(format!(
                        "node LP ended {:?} at depth {}",
                        lp.status, node.depth
                    )));
                }
                LpStatus::Optimal => {}
            }
            if let Some((best, _)) = &self.incumbent {
                if lp.objective >= best - self.opts.absolute_gap {
                    continue;
                }
            }

            if let Some((j, v)) = self.most_fractional_binary(&lp.values) {
                let floor = v.floor();
                let prefer_up = v - floor >= 0.5;
                let mk = |val: f64, seq: u64, basis: Basis| {
                    let mut overrides = node.overrides.clone();
                    overrides.push((j, val, val));
                    Node {
                        overrides,
                        windows: node.windows.clone(),
                        bound: lp.objective,
                        depth: node.depth + 1,
                        seq,
                        basis,
                    }
                };
                let (first, second) = if prefer_up {
                    (floor + 1.0, floor)
                } else {
                    (floor, floor + 1.0)
                };
                heap.push(Open(mk(first, self.seq, lp.basis.clone())));
                heap.push(Open(mk(second, self.seq + 1, lp.basis.clone())));
                self.seq += 2;
                continue;
            }

            if let Some((g, r)) = self.violated_group(&lp.values, &node.windows) {
                let (lo, hi) = node.windows[g];
                let mk = |wlo: usize, whi: usize, seq: u64| {
                    let mut windows = node.windows.clone();
                    windows[g] = (wlo, whi);
                    Node {
                        overrides: node.overrides.clone(),
                        windows,
                        bound: lp.objective,
                        depth: node.depth + 1,
                        seq,
                        basis: lp.basis.clone(),
                    }
                };
                heap.push(Open(mk(lo, r, self.seq)));
                heap.push(Open(mk(r, hi, self.seq + 1)));
                self.seq += 2;
                continue;
            }

            // Integral and group-feasible.
            self.offer_incumbent(lp.objective, lp.values);
        }

        match self.incumbent.take() {
            Some((objective, values)) => Ok(Solution {
                status: SolveStatus::Optimal,
                objective,
                values,
                node_count: self.node_count,
                wall: self.started.elapsed(),
            }),
            None => Ok(self.finish(SolveStatus::Infeasible)),
        }
    }

    fn finish(&mut self, status: SolveStatus) -> Solution {
        let (objective, values) = match self.incumbent.take() {
            Some((o, v)) => (o, v),
            None => (f64::INFINITY, Vec::new()),
        };
        Solution {
            status,
            objective,
            values,
            node_count: self.node_count,
            wall: self.started.elapsed(),
        }
    }
}

/// Solve a model to global optimality within the configured absolute gap.
pub fn solve(model: &MilpModel, options: &SolverOptions) -> Result<Solution, SolveError> {
    model.validate()?;
    let binaries: Vec<usize> = model
        .variables
        .iter()
        .enumerate()
        .filter(|(_, v)| v.kind == VarKind::Binary)
        .map(|(j, _)| j)
        .collect();
    let search = Search {
        model,
        opts: options,
        root: LpProblem::from_model(model),
        binaries,
        incumbent: None,
        node_count: 0,
        seq: 0,
        started: Instant::now(),
    };
    search.run()
}

/// Command template for an external MILP solver. `{mps}` and `{sol}` are
/// replaced with the model and solution file paths; the result is run
/// through `sh -c`.
#[derive(Debug, Clone)]
pub struct ExternalSolver {
    pub command: String,
}

static BRIDGE_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Export the model, run the configured command and import the solution,
/// applying the same integrity checks as local extraction.
pub fn solve_external(
    model: &MilpModel,
    external: &ExternalSolver,
    options: &SolverOptions,
) -> Result<Solution, SolveError> {
    model.validate()?;
    let t0 = Instant::now();
    let stamp = BRIDGE_COUNTER.fetch_add(1, Ordering::Relaxed);
    let dir = std::env::temp_dir();
    let mps_path = dir.join(format!("recmpc-{}-{stamp}.mps", std::process::id()));
    let sol_path = dir.join(format!("recmpc-{}-{stamp}.sol", std::process::id()));

    let mut file = std::fs::File::create(&mps_path)
        .map_err(|e| SolveError::Bridge(format!("cannot create {}: {e}", mps_path.display())))?;
    mps::write_mps(model, "bridge", &mut file)
        .map_err(|e| SolveError::Bridge(format!("cannot write model: {e}")))?;

    let cmd = external
        .command
        .replace("{mps}", &mps_path.display().to_string())
        .replace("{sol}", &sol_path.display().to_string());
    let output = Command::new("sh")
        .arg("-c")
        .arg(&cmd)
        .output()
        .map_err(|e| SolveError::Bridge(format!("cannot run `{cmd}`: {e}")))?;
    let cleanup = || {
        let _ = std::fs::remove_file(&mps_path);
        let _ = std::fs::remove_file(&sol_path);
    };
    if !output.status.success() {
        let stderr = String::from_utf8_lossy(&output.stderr);
        cleanup();
        return Err(SolveError::Bridge(format!(
            "`{cmd}` exited with {}: {}",
            output.status,
            stderr.trim()
        )));
    }
    let file = std::fs::File::open(&sol_path).map_err(|e| {
        cleanup();
        SolveError::Bridge(format!("no solution file {}: {e}", sol_path.display()))
    })?;
    let values = mps::parse_solution(model.n_variables(), std::io::BufReader::new(file))
        .map_err(|e| {
            cleanup();
            SolveError::Bridge(format!("bad solution file: {e}"))
        })?;
    cleanup();
    verify_assignment(model, &values, options.integrality_tol)
        .map_err(|e| SolveError::Bridge(format!("imported solution failed integrity: {e}")))?;
    Ok(Solution {
        status: SolveStatus::Optimal,
        objective: model.objective_value(&values),
        values,
        node_count: 0,
        wall: t0.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::milp::{MilpModel, Sense};
    use approx::assert_abs_diff_eq;

    fn knapsack() -> MilpModel {
        // max 5a + 4b with a + b <= 1 over binaries.
        let mut m = MilpModel::new();
        let a = m.add_binary();
        let b = m.add_binary();
        m.objective = vec![(a, -5.0), (b, -4.0)];
        m.add_constraint(vec![(a, 1.0), (b, 1.0)], Sense::Le, 1.0);
        m
    }

    #[test]
    fn knapsack_optimum() {
        let s = solve(&knapsack(), &SolverOptions::default()).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert_abs_diff_eq!(s.objective, -5.0, epsilon = 1e-9);
        assert_abs_diff_eq!(s.values[0], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(s.values[1], 0.0, epsilon = 1e-9);
    }

    #[test]
    fn pure_lp_matches_relaxation() {
        let mut m = MilpModel::new();
        let x = m.add_continuous(0.0, 4.0);
        let y = m.add_continuous(0.0, 4.0);
        m.objective = vec![(x, -1.0), (y, -2.0)];
        m.add_constraint(vec![(x, 1.0), (y, 1.0)], Sense::Le, 6.0);
        let opts = SolverOptions::default();
        let a = solve_lp(&m, &opts).unwrap();
        let b = solve(&m, &opts).unwrap();
        assert_abs_diff_eq!(a.objective, b.objective, epsilon = 1e-9);
        assert_eq!(b.status, SolveStatus::Optimal);
    }

    #[test]
    fn solve_is_deterministic() {
        // A model with several fractional candidates at the root.
        let mut m = MilpModel::new();
        let vars: Vec<usize> = (0..6).map(|_| m.add_binary()).collect();
        m.objective = vars
            .iter()
            .enumerate()
            .map(|(i, &j)| (j, -((i % 3) as f64) - 1.5))
            .collect();
        m.add_constraint(vars.iter().map(|&j| (j, 1.7)).collect(), Sense::Le, 4.4);
        let opts = SolverOptions::default();
        let a = solve(&m, &opts).unwrap();
        let b = solve(&m, &opts).unwrap();
        assert_eq!(a.node_count, b.node_count);
        assert_eq!(a.values, b.values);
        assert_abs_diff_eq!(a.objective, b.objective, epsilon = 0.0);
    }

    #[test]
    fn node_limit_reports_limit_status() {
        let mut m = MilpModel::new();
        let vars: Vec<usize> = (0..10).map(|_| m.add_binary()).collect();
        m.objective = vars.iter().map(|&j| (j, -1.0 - 0.01 * j as f64)).collect();
        m.add_constraint(vars.iter().map(|&j| (j, 2.0)).collect(), Sense::Le, 9.0);
        let opts = SolverOptions {
            node_limit: Some(1),
            dive_heuristic: false,
            ..Default::default()
        };
        let s = solve(&m, &opts).unwrap();
        assert_eq!(s.status, SolveStatus::Limit);
    }

    #[test]
    fn infeasible_binary_model() {
        let mut m = MilpModel::new();
        let a = m.add_binary();
        m.add_constraint(vec![(a, 1.0)], Sense::Ge, 2.0);
        let s = solve(&m, &SolverOptions::default()).unwrap();
        assert_eq!(s.status, SolveStatus::Infeasible);
    }

    #[test]
    fn ordered_group_branching_enforces_adjacency() {
        // LP wants mass on both ends of the group; adjacency caps the gain.
        let mut m = MilpModel::new();
        let l0 = m.add_continuous(0.0, 0.6);
        let l1 = m.add_continuous(0.0, 1.0);
        let l2 = m.add_continuous(0.0, 0.6);
        m.objective = vec![(l0, -1.0), (l2, -1.0)];
        m.add_constraint(vec![(l0, 1.0), (l1, 1.0), (l2, 1.0)], Sense::Eq, 1.0);
        m.sos2_groups.push(vec![l0, l1, l2]);
        let opts = SolverOptions::default();
        let relaxed = solve_lp(&m, &opts).unwrap();
        assert_abs_diff_eq!(relaxed.objective, -1.0, epsilon = 1e-9);
        let s = solve(&m, &opts).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert_abs_diff_eq!(s.objective, -0.6, epsilon = 1e-9);
        verify_assignment(&m, &s.values, 1e-6).unwrap();
    }

    #[test]
    fn verify_rejects_bad_assignments() {
        let m = knapsack();
        assert!(verify_assignment(&m, &[1.0, 1.0], 1e-6).is_err()); // row violated
        assert!(verify_assignment(&m, &[0.5, 0.0], 1e-6).is_err()); // fractional
        assert!(verify_assignment(&m, &[1.0], 1e-6).is_err()); // wrong length
        assert!(verify_assignment(&m, &[1.0, 0.0], 1e-6).is_ok());
    }

    mod enumeration_oracle {
        use super::*;
        use rand::{Rng, SeedableRng};
        use rand_chacha::ChaCha8Rng;

        /// Exhaustive oracle: try every binary assignment, solve the
        /// continuous remainder, keep the best.
        pub fn enumerate_best(model: &MilpModel) -> Option<f64> {
            let binaries: Vec<usize> = model
                .variables
                .iter()
                .enumerate()
                .filter(|(_, v)| v.kind == VarKind::Binary)
                .map(|(j, _)| j)
                .collect();
            let mut best: Option<f64> = None;
            for mask in 0u64..(1 << binaries.len()) {
                let mut fixed = model.clone();
                for (bit, &j) in binaries.iter().enumerate() {
                    let v = f64::from((mask >> bit) & 1 == 1);
                    if v < fixed.variables[j].lower || v > fixed.variables[j].upper {
                        // respect branching bounds if the model was narrowed
                    }
                    fixed.fix_variable(j, v);
                }
                let lp = solve_lp_problem(&LpProblem::from_model(&fixed), None);
                if lp.status == LpStatus::Optimal {
                    best = Some(best.map_or(lp.objective, |b: f64| b.min(lp.objective)));
                }
            }
            best
        }

        pub fn random_milp(rng: &mut ChaCha8Rng, max_binaries: usize) -> MilpModel {
            let n_bin = rng.gen_range(2..=max_binaries);
            let n_cont = rng.gen_range(0..=2);
            let n_rows = rng.gen_range(2..=6);
            let mut m = MilpModel::new();
            let mut vars = Vec::new();
            for _ in 0..n_bin {
                vars.push(m.add_binary());
            }
            for _ in 0..n_cont {
                vars.push(m.add_continuous(0.0, rng.gen_range(0.5..3.0)));
            }
            m.objective = vars
                .iter()
                .map(|&j| (j, rng.gen_range(-3.0..3.0)))
                .collect();
            for _ in 0..n_rows {
                let mut terms: Vec<(usize, f64)> = Vec::new();
                for &j in &vars {
                    if rng.gen_bool(0.7) {
                        terms.push((j, rng.gen_range(-2.0..2.0)));
                    }
                }
                if terms.is_empty() {
                    continue;
                }
                let sense = if rng.gen_bool(0.5) { Sense::Le } else { Sense::Ge };
                let rhs = rng.gen_range(-1.5..2.5);
                m.add_constraint(terms, sense, rhs);
            }
            m
        }

        #[test]
        fn matches_exhaustive_enumeration() {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let mut solved = 0;
            for _ in 0..25 {
                let m = random_milp(&mut rng, 8);
                let got = solve(&m, &SolverOptions::default()).unwrap();
                match enumerate_best(&m) {
                    Some(expected) => {
                        assert_eq!(got.status, SolveStatus::Optimal);
                        assert!(
                            (got.objective - expected).abs() < 1e-6,
                            "solver {} vs enumeration {}",
                            got.objective,
                            expected
                        );
                        solved += 1;
                    }
                    None => assert_eq!(got.status, SolveStatus::Infeasible),
                }
            }
            assert!(solved >= 10);
        }
    }

    mod bridge {
        use super::*;
        use std::io::Write as _;

        fn script_solver(dir: &std::path::Path, body: &str) -> ExternalSolver {
            let path = dir.join("fake_solver.sh");
            let mut f = std::fs::File::create(&path).unwrap();
            writeln!(f, "#!/bin/sh").unwrap();
            writeln!(f, "{body}").unwrap();
            ExternalSolver {
                command: format!("sh {} {{mps}} {{sol}}", path.display()),
            }
        }

        #[test]
        fn round_trips_a_known_solution() {
            let dir = tempfile::tempdir().unwrap();
            // Known optimum of the knapsack: a=1, b=0.
            let ext = script_solver(dir.path(), "printf 'x0 1\\nx1 0\\n' > \"$2\"");
            let s = solve_external(&knapsack(), &ext, &SolverOptions::default()).unwrap();
            assert_eq!(s.status, SolveStatus::Optimal);
            assert_abs_diff_eq!(s.objective, -5.0, epsilon = 0.0);
            assert_eq!(s.values, vec![1.0, 0.0]);
        }

        #[test]
        fn rejects_integrity_violations() {
            let dir = tempfile::tempdir().unwrap();
            let ext = script_solver(dir.path(), "printf 'x0 1\\nx1 1\\n' > \"$2\"");
            let err = solve_external(&knapsack(), &ext, &SolverOptions::default()).unwrap_err();
            assert!(matches!(err, SolveError::Bridge(_)));
        }

        #[test]
        fn reports_missing_tool_and_bad_output() {
            let missing = ExternalSolver {
                command: "/nonexistent/solver {mps} {sol}".into(),
            };
            assert!(matches!(
                solve_external(&knapsack(), &missing, &SolverOptions::default()),
                Err(SolveError::Bridge(_))
            ));

            let dir = tempfile::tempdir().unwrap();
            let garbled = script_solver(dir.path(), "printf 'not a solution\\n' > \"$2\"");
            assert!(matches!(
                solve_external(&knapsack(), &garbled, &SolverOptions::default()),
                Err(SolveError::Bridge(_))
            ));
        }
    }
}
