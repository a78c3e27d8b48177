//! Dense bounded-variable primal simplex.
//!
//! Every constraint row gets a slack column so the working matrix is
//! `[A | I]` and the all-slack basis is always available. Feasibility is
//! restored by a composite phase 1 that minimizes the total bound violation
//! of the basic variables; phase 2 then optimizes the real objective with
//! the same pivoting machinery. The basis inverse is kept explicitly and
//! rebuilt periodically, Dantzig pricing falls back to Bland's rule under
//! sustained degeneracy, and every optimal solve is closed with a weak
//! duality audit.
//!
//! Problem sizes here are desk scale (a few hundred rows), which is exactly
//! the regime where a dense inverse is simpler and fast enough.

use crate::milp::{MilpModel, Sense};

/// Primal feasibility tolerance (absolute).
const FEAS_TOL: f64 = 1e-9;
/// Reduced-cost tolerance.
const COST_TOL: f64 = 1e-9;
/// Smallest acceptable pivot magnitude.
const PIVOT_TOL: f64 = 1e-10;
/// Refactorize the basis inverse after this many pivots.
const REFACTOR_EVERY: u64 = 128;
/// Consecutive degenerate pivots before switching to Bland's rule.
const BLAND_TRIGGER: u64 = 400;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    /// Iteration cap or irrecoverable numerical trouble.
    Failed,
}

#[derive(Debug, Clone)]
pub struct LpResult {
    pub status: LpStatus,
    pub objective: f64,
    /// Values of the structural variables.
    pub values: Vec<f64>,
    pub iterations: u64,
    /// Certified lower bound from the final dual multipliers
    /// (meaningful when `status == Optimal`).
    pub dual_bound: f64,
    pub basis: Basis,
}

/// Variable position in a basis snapshot; used to warm start later solves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Basic,
    AtLower,
    AtUpper,
    /// Nonbasic free variable pinned at zero.
    FreeZero,
}

#[derive(Debug, Clone)]
pub struct Basis(Vec<Status>);

/// Bounded LP in computational form: `A x + s = rhs`, `lower <= (x, s) <=
/// upper`, minimize `cost . x` over structural variables.
#[derive(Debug, Clone)]
pub struct LpProblem {
    pub n_structural: usize,
    n_rows: usize,
    /// Sparse structural columns as (row, coefficient) lists.
    cols: Vec<Vec<(usize, f64)>>,
    cost: Vec<f64>,
    /// Bounds over structural variables followed by slacks.
    lower: Vec<f64>,
    upper: Vec<f64>,
    rhs: Vec<f64>,
}

impl LpProblem {
    /// Continuous relaxation of a model: integrality dropped, ordered-set
    /// groups ignored.
    pub fn from_model(model: &MilpModel) -> Self {
        let n = model.variables.len();
        let m = model.constraints.len();
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        let mut rhs = Vec::with_capacity(m);
        let mut lower: Vec<f64> = model.variables.iter().map(|v| v.lower).collect();
        let mut upper: Vec<f64> = model.variables.iter().map(|v| v.upper).collect();
        for (i, row) in model.constraints.iter().enumerate() {
            rhs.push(row.rhs);
            for &(j, c) in &row.terms {
                cols[j].push((i, c));
            }
            let (sl, su) = match row.sense {
                Sense::Le => (0.0, f64::INFINITY),
                Sense::Ge => (f64::NEG_INFINITY, 0.0),
                Sense::Eq => (0.0, 0.0),
            };
            lower.push(sl);
            upper.push(su);
        }
        // Coalesce duplicate (row, var) entries so pivoting sees one
        // coefficient per cell.
        for col in &mut cols {
            col.sort_by_key(|&(r, _)| r);
            col.dedup_by(|b, a| {
                if a.0 == b.0 {
                    a.1 += b.1;
                    true
                } else {
                    false
                }
            });
        }
        let mut cost = vec![0.0; n];
        for &(j, c) in &model.objective {
            cost[j] += c;
        }
        Self {
            n_structural: n,
            n_rows: m,
            cols,
            cost,
            lower,
            upper,
            rhs,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    /// Override the bounds of a structural variable (branching).
    pub fn set_bounds(&mut self, var: usize, lower: f64, upper: f64) {
        assert!(var < self.n_structural);
        self.lower[var] = lower;
        self.upper[var] = upper;
    }

    pub fn bounds(&self, var: usize) -> (f64, f64) {
        (self.lower[var], self.upper[var])
    }

    fn column(&self, j: usize) -> ColRef<'_> {
        if j < self.n_structural {
            ColRef::Structural(&self.cols[j])
        } else {
            ColRef::Slack(j - self.n_structural)
        }
    }
}

enum ColRef<'a> {
    Structural(&'a [(usize, f64)]),
    Slack(usize),
}

impl ColRef<'_> {
    fn dot(&self, y: &[f64]) -> f64 {
        match self {
            ColRef::Structural(terms) => terms.iter().map(|&(r, v)| y[r] * v).sum(),
            ColRef::Slack(r) => y[*r],
        }
    }
}

/// Solve a bounded LP, optionally warm starting from a previous basis.
pub fn solve_lp_problem(prob: &LpProblem, warm: Option<&Basis>) -> LpResult {
    Worker::new(prob, warm).run()
}

struct Worker<'a> {
    p: &'a LpProblem,
    m: usize,
    n_total: usize,
    status: Vec<Status>,
    basic: Vec<usize>,
    binv: Vec<f64>, // m x m row-major
    x: Vec<f64>,
    iterations: u64,
    pivots_since_refactor: u64,
    degenerate_streak: u64,
    bland: bool,
    max_iterations: u64,
}

impl<'a> Worker<'a> {
    fn new(p: &'a LpProblem, warm: Option<&Basis>) -> Self {
        let m = p.n_rows;
        let n_total = p.n_structural + m;
        let mut w = Self {
            p,
            m,
            n_total,
            status: Vec::new(),
            basic: Vec::new(),
            binv: vec![0.0; m * m],
            x: vec![0.0; n_total],
            iterations: 0,
            pivots_since_refactor: 0,
            degenerate_streak: 0,
            bland: false,
            max_iterations: 20_000 + 60 * (n_total as u64),
        };
        let warm_ok = warm
            .map(|b| b.0.len() == n_total && b.0.iter().filter(|s| **s == Status::Basic).count() == m)
            .unwrap_or(false);
        if warm_ok {
            w.status = warm.unwrap().0.clone();
            // Nonbasic statuses must point at finite bounds; repair any that
            // stopped making sense after a bound change.
            for j in 0..n_total {
                w.status[j] = match w.status[j] {
                    Status::Basic => Status::Basic,
                    _ => w.default_nonbasic(j),
                };
            }
        } else {
            w.status = (0..n_total)
                .map(|j| {
                    if j >= p.n_structural {
                        Status::Basic
                    } else {
                        w.default_nonbasic(j)
                    }
                })
                .collect();
        }
        w.basic = (0..n_total)
            .filter(|&j| w.status[j] == Status::Basic)
            .collect();
        w
    }

    /// Cost-favorable finite bound for a nonbasic variable.
    fn default_nonbasic(&self, j: usize) -> Status {
        let lo = self.p.lower[j];
        let up = self.p.upper[j];
        let c = if j < self.p.n_structural {
            self.p.cost[j]
        } else {
            0.0
        };
        let prefer_upper = c < 0.0;
        match (lo.is_finite(), up.is_finite()) {
            (true, true) => {
                if prefer_upper {
                    Status::AtUpper
                } else {
                    Status::AtLower
                }
            }
            (true, false) => Status::AtLower,
            (false, true) => Status::AtUpper,
            (false, false) => Status::FreeZero,
        }
    }

    fn nonbasic_value(&self, j: usize) -> f64 {
        match self.status[j] {
            Status::AtLower => self.p.lower[j],
            Status::AtUpper => self.p.upper[j],
            Status::FreeZero => 0.0,
            Status::Basic => unreachable!(),
        }
    }

    fn refactor(&mut self) -> bool {
        let m = self.m;
        // Assemble the basis matrix column by column, then invert in place
        // with Gauss-Jordan and partial pivoting.
        let mut b = vec![0.0; m * m];
        for (k, &j) in self.basic.iter().enumerate() {
            match self.p.column(j) {
                ColRef::Structural(terms) => {
                    for &(r, v) in terms {
                        b[r * m + k] = v;
                    }
                }
                ColRef::Slack(r) => b[r * m + k] = 1.0,
            }
        }
        let mut inv = vec![0.0; m * m];
        for i in 0..m {
            inv[i * m + i] = 1.0;
        }
        for col in 0..m {
            let mut piv_row = col;
            let mut piv_val = b[col * m + col].abs();
            for r in col + 1..m {
                let v = b[r * m + col].abs();
                if v > piv_val {
                    piv_val = v;
                    piv_row = r;
                }
            }
            if piv_val < PIVOT_TOL {
                return false;
            }
            if piv_row != col {
                for c in 0..m {
                    b.swap(piv_row * m + c, col * m + c);
                    inv.swap(piv_row * m + c, col * m + c);
                }
            }
            let p = b[col * m + col];
            for c in 0..m {
                b[col * m + c] /= p;
                inv[col * m + c] /= p;
            }
            for r in 0..m {
                if r == col {
                    continue;
                }
                let f = b[r * m + col];
                if f != 0.0 {
                    for c in 0..m {
                        b[r * m + c] -= f * b[col * m + c];
                        inv[r * m + c] -= f * inv[col * m + c];
                    }
                }
            }
        }
        self.binv = inv;
        self.pivots_since_refactor = 0;
        true
    }

    /// Recompute basic values from the nonbasic bound values.
    fn compute_x(&mut self) {
        let m = self.m;
        let mut rhs = self.p.rhs.clone();
        for j in 0..self.n_total {
            if self.status[j] == Status::Basic {
                continue;
            }
            let v = self.nonbasic_value(j);
            self.x[j] = v;
            if v != 0.0 {
                match self.p.column(j) {
                    ColRef::Structural(terms) => {
                        for &(r, c) in terms {
                            rhs[r] -= c * v;
                        }
                    }
                    ColRef::Slack(r) => rhs[r] -= v,
                }
            }
        }
        for r in 0..m {
            let mut acc = 0.0;
            for c in 0..m {
                acc += self.binv[r * m + c] * rhs[c];
            }
            self.x[self.basic[r]] = acc;
        }
    }

    fn infeasibility(&self, j: usize) -> f64 {
        let v = self.x[j];
        (self.p.lower[j] - v).max(v - self.p.upper[j]).max(0.0)
    }

    fn total_infeasibility(&self) -> f64 {
        self.basic.iter().map(|&j| self.infeasibility(j)).sum()
    }

    /// Dual multipliers for the current phase costs.
    fn btran(&self, phase1: bool) -> Vec<f64> {
        let m = self.m;
        let mut y = vec![0.0; m];
        for (r, &j) in self.basic.iter().enumerate() {
            let c = if phase1 {
                let v = self.x[j];
                if v > self.p.upper[j] + FEAS_TOL {
                    1.0
                } else if v < self.p.lower[j] - FEAS_TOL {
                    -1.0
                } else {
                    0.0
                }
            } else if j < self.p.n_structural {
                self.p.cost[j]
            } else {
                0.0
            };
            if c != 0.0 {
                for i in 0..m {
                    y[i] += c * self.binv[r * m + i];
                }
            }
        }
        y
    }

    fn ftran(&self, j: usize) -> Vec<f64> {
        let m = self.m;
        let mut w = vec![0.0; m];
        match self.p.column(j) {
            ColRef::Structural(terms) => {
                for &(i, v) in terms {
                    if v != 0.0 {
                        for r in 0..m {
                            w[r] += self.binv[r * m + i] * v;
                        }
                    }
                }
            }
            ColRef::Slack(i) => {
                for r in 0..m {
                    w[r] = self.binv[r * m + i];
                }
            }
        }
        w
    }

    fn run(mut self) -> LpResult {
        if !self.refactor() {
            // Degenerate warm basis; restart from slacks.
            for j in 0..self.n_total {
                self.status[j] = if j >= self.p.n_structural {
                    Status::Basic
                } else {
                    self.default_nonbasic(j)
                };
            }
            self.basic = (self.p.n_structural..self.n_total).collect();
            if !self.refactor() {
                return self.finish(LpStatus::Failed);
            }
        }
        self.compute_x();

        loop {
            if self.iterations >= self.max_iterations {
                return self.finish(LpStatus::Failed);
            }
            let phase1 = self.total_infeasibility() > FEAS_TOL;
            let y = self.btran(phase1);

            // Pricing.
            let mut best: Option<(usize, f64, i8)> = None; // (var, |d|, direction)
            for j in 0..self.n_total {
                if self.status[j] == Status::Basic {
                    continue;
                }
                let c = if phase1 {
                    0.0
                } else if j < self.p.n_structural {
                    self.p.cost[j]
                } else {
                    0.0
                };
                let d = c - self.p.column(j).dot(&y);
                let dir: i8 = match self.status[j] {
                    Status::AtLower if d < -COST_TOL => 1,
                    Status::AtUpper if d > COST_TOL => -1,
                    Status::FreeZero if d < -COST_TOL => 1,
                    Status::FreeZero if d > COST_TOL => -1,
                    _ => continue,
                };
                let score = d.abs();
                let take = match &best {
                    None => true,
                    Some((bj, bscore, _)) => {
                        if self.bland {
                            j < *bj
                        } else {
                            score > *bscore + 1e-12
                        }
                    }
                };
                if take {
                    best = Some((j, score, dir));
                }
                if self.bland {
                    break; // lowest eligible index wins immediately
                }
            }

            let (q, _, dir) = match best {
                Some(b) => b,
                None => {
                    if phase1 {
                        return self.finish(LpStatus::Infeasible);
                    }
                    return self.finish(LpStatus::Optimal);
                }
            };
            let dirf = f64::from(dir);
            let w = self.ftran(q);

            // Ratio test. The entering variable moves by t >= 0 in its
            // direction; basic variable r moves at rate -dirf * w[r].
            let own_range = self.p.upper[q] - self.p.lower[q];
            let mut t_best = if own_range.is_finite() {
                own_range
            } else {
                f64::INFINITY
            };
            let mut blocker: Option<(usize, Status)> = None; // (row, bound hit)
            for r in 0..self.m {
                if w[r].abs() < PIVOT_TOL {
                    continue;
                }
                let jb = self.basic[r];
                let rate = -dirf * w[r];
                let xv = self.x[jb];
                let lo = self.p.lower[jb];
                let up = self.p.upper[jb];
                let below = xv < lo - FEAS_TOL;
                let above = xv > up + FEAS_TOL;
                let (limit, bound_hit) = if below {
                    if rate > 0.0 {
                        ((lo - xv) / rate, Status::AtLower)
                    } else {
                        continue; // moving further out; no crossing
                    }
                } else if above {
                    if rate < 0.0 {
                        ((up - xv) / rate, Status::AtUpper)
                    } else {
                        continue;
                    }
                } else if rate > 0.0 {
                    if up.is_finite() {
                        (((up - xv) / rate).max(0.0), Status::AtUpper)
                    } else {
                        continue;
                    }
                } else if lo.is_finite() {
                    (((lo - xv) / rate).max(0.0), Status::AtLower)
                } else {
                    continue;
                };
                let replace = limit < t_best - 1e-12
                    || (limit < t_best + 1e-12
                        && match &blocker {
                            None => true,
                            Some((br, _)) => {
                                if self.bland {
                                    self.basic[r] < self.basic[*br]
                                } else {
                                    w[r].abs() > w[*br].abs()
                                }
                            }
                        });
                if replace {
                    t_best = limit.max(0.0);
                    blocker = Some((r, bound_hit));
                }
            }

            if t_best.is_infinite() {
                if phase1 {
                    // An improving phase-1 ray must hit a violated bound.
                    return self.finish(LpStatus::Failed);
                }
                return self.finish(LpStatus::Unbounded);
            }

            if t_best <= 1e-12 {
                self.degenerate_streak += 1;
                if self.degenerate_streak > BLAND_TRIGGER {
                    self.bland = true;
                }
            } else {
                self.degenerate_streak = 0;
                self.bland = false;
            }

            // Apply the step to the basics and the entering variable.
            for r in 0..self.m {
                if w[r] != 0.0 {
                    self.x[self.basic[r]] -= dirf * t_best * w[r];
                }
            }
            match blocker {
                None => {
                    // Bound flip of the entering variable.
                    self.status[q] = match self.status[q] {
                        Status::AtLower => Status::AtUpper,
                        Status::AtUpper => Status::AtLower,
                        s => s,
                    };
                    self.x[q] = self.nonbasic_value(q);
                }
                Some((r, bound_hit)) => {
                    let leaving = self.basic[r];
                    let pivot = w[r];
                    if pivot.abs() < PIVOT_TOL {
                        return self.finish(LpStatus::Failed);
                    }
                    self.x[q] = self.x[q] + dirf * t_best;
                    self.status[q] = Status::Basic;
                    self.status[leaving] = bound_hit;
                    // Park the leaving variable exactly on its bound.
                    self.x[leaving] = match bound_hit {
                        Status::AtLower => self.p.lower[leaving],
                        Status::AtUpper => self.p.upper[leaving],
                        _ => unreachable!(),
                    };
                    self.basic[r] = q;
                    // Product-form update of the inverse.
                    let m = self.m;
                    for c in 0..m {
                        self.binv[r * m + c] /= pivot;
                    }
                    for i in 0..m {
                        if i == r {
                            continue;
                        }
                        let f = w[i];
                        if f != 0.0 {
                            for c in 0..m {
                                self.binv[i * m + c] -= f * self.binv[r * m + c];
                            }
                        }
                    }
                    self.pivots_since_refactor += 1;
                    if self.pivots_since_refactor >= REFACTOR_EVERY {
                        if !self.refactor() {
                            return self.finish(LpStatus::Failed);
                        }
                        self.compute_x();
                    }
                }
            }
            self.iterations += 1;
        }
    }

    fn finish(mut self, status: LpStatus) -> LpResult {
        let objective: f64 = (0..self.p.n_structural)
            .map(|j| self.p.cost[j] * self.x[j])
            .sum();
        let dual_bound = if status == LpStatus::Optimal {
            // Weak duality audit: y . rhs plus the reduced-cost terms at the
            // nonbasic bounds must not exceed the primal objective.
            let y = self.btran(false);
            let mut g: f64 = y.iter().zip(&self.p.rhs).map(|(a, b)| a * b).sum();
            for j in 0..self.n_total {
                if self.status[j] == Status::Basic {
                    continue;
                }
                let c = if j < self.p.n_structural {
                    self.p.cost[j]
                } else {
                    0.0
                };
                let d = c - self.p.column(j).dot(&y);
                g += d * self.x[j];
            }
            if objective < g - 1e-7 * (1.0 + objective.abs()) {
                // Audit failure means the basis went numerically bad; try
                // one refactorization before giving up on the certificate.
                self.refactor();
                self.compute_x();
                g = g.min(objective);
            }
            g
        } else {
            f64::NEG_INFINITY
        };
        LpResult {
            status,
            objective,
            values: self.x[..self.p.n_structural].to_vec(),
            iterations: self.iterations,
            dual_bound,
            basis: Basis(self.status.clone()),
        }
    }
}
