//! Two-stage stochastic program for one control step.
//!
//! Given the current tank level, the previously applied mode, the recent
//! mode history, a reduced scenario set and the price window, [`build`]
//! assembles a MILP over the horizon `k = 0..T-1` whose first stage decides
//! export, stack powers and mode per step, and whose second stage prices the
//! expected violation of the load-matching and power-balance constraints
//! across scenarios through nonnegative recourse variables.
//!
//! The nonlinear tank flows are piecewise-linearized on breakpoint tables
//! through ordered interpolation weights: per step and curve, weights
//! `lambda` satisfy `sum(lambda) = mode binary`, so an inactive mode forces
//! both the power and the flow to zero, and the dispatch bounds
//! `P_min * delta <= P <= P_max * delta` pin the active interpolation onto
//! the admissible range. Adjacency is either compiled to segment binaries
//! (`Sos2Encoding::Binary`, the default) or left to the solver's ordered-set
//! branching (`Sos2Encoding::Native`); both give identical optima.
//!
//! Stack power and tank flow are kept as interpolation expressions rather
//! than standalone columns; extraction recomputes them from the weights.

use thiserror::Error;

use crate::milp::{MilpModel, Sense};
use crate::plant::{self, Mode, PlantError, PlantParams};
use crate::scenario::{ReduceError, ScenarioSet};
use crate::solver::{verify_assignment, Solution};

#[derive(Debug, Error)]
pub enum BuildError {
    #[error(transparent)]
    Params(#[from] PlantError),
    #[error(transparent)]
    Scenarios(#[from] ReduceError),
    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error("price vector has {got} entries, horizon needs {expected}")]
    PriceCount { expected: usize, got: usize },
    #[error("initial state of hydrogen {h0} outside [{min}, {max}]")]
    SohOutOfRange { h0: f64, min: f64, max: f64 },
    #[error("breakpoint table invalid: {0}")]
    BadTable(String),
    #[error("mode history has {len} entries, window allows {max}")]
    HistoryTooLong { len: usize, max: usize },
    #[error("mode history must end with the previously applied mode")]
    HistoryMismatch,
    #[error("mode history already exceeds the switch budget for {kind}")]
    SwitchBudget { kind: Mode },
}

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error("solution carries no values")]
    NoValues,
    #[error("integrity: {0}")]
    Integrity(String),
}

/// Piecewise-linearization support points for one flow curve: `powers[0]`
/// is always 0 and `flows[l] = g(powers[l])`.
#[derive(Debug, Clone, PartialEq)]
pub struct BreakpointTable {
    pub powers: Vec<f64>,
    pub flows: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurveTag {
    /// Electrolysis: power absorbed -> tank inflow.
    El,
    /// Fuel cell: power produced -> tank outflow.
    F,
}

/// Table with `{0}` plus `l - 1` uniformly spaced points over the curve's
/// admissible power range.
pub fn breakpoint_table(
    tag: CurveTag,
    l: usize,
    params: &PlantParams,
) -> Result<BreakpointTable, BuildError> {
    if l < 3 {
        return Err(BuildError::BadTable(format!(
            "need at least 3 breakpoints, got {l}"
        )));
    }
    params.validate()?;
    let (min, max) = match tag {
        CurveTag::El => (params.p_el_min, params.p_el_max),
        CurveTag::F => (params.p_f_min, params.p_f_max),
    };
    let g = |p: f64| match tag {
        CurveTag::El => plant::g_el(p, params),
        CurveTag::F => plant::g_f(p, params),
    };
    let mut powers = Vec::with_capacity(l);
    let mut flows = Vec::with_capacity(l);
    powers.push(0.0);
    flows.push(0.0);
    let step = (max - min) / (l - 2) as f64;
    for i in 0..l - 1 {
        let p = if i == l - 2 { max } else { min + step * i as f64 };
        powers.push(p);
        flows.push(g(p)?);
    }
    Ok(BreakpointTable { powers, flows })
}

impl BreakpointTable {
    pub fn len(&self) -> usize {
        self.powers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.powers.is_empty()
    }

    fn validate(&self) -> Result<(), BuildError> {
        if self.powers.len() < 3 || self.powers.len() != self.flows.len() {
            return Err(BuildError::BadTable("need >= 3 (power, flow) pairs".into()));
        }
        if self.powers[0] != 0.0 || self.flows[0] != 0.0 {
            return Err(BuildError::BadTable("table must start at (0, 0)".into()));
        }
        for w in self.powers.windows(2) {
            if w[1] <= w[0] {
                return Err(BuildError::BadTable(format!(
                    "powers must be strictly increasing ({} then {})",
                    w[0], w[1]
                )));
            }
        }
        Ok(())
    }

    /// Piecewise-linear interpolant of the table at a power value.
    pub fn value_at(&self, p: f64) -> f64 {
        let n = self.powers.len();
        if p <= self.powers[0] {
            return self.flows[0];
        }
        if p >= self.powers[n - 1] {
            return self.flows[n - 1];
        }
        let seg = self.powers.partition_point(|&x| x <= p).min(n - 1);
        let (p0, p1) = (self.powers[seg - 1], self.powers[seg]);
        let (f0, f1) = (self.flows[seg - 1], self.flows[seg]);
        f0 + (p - p0) / (p1 - p0) * (f1 - f0)
    }
}

/// Power and flow implied by a vector of interpolation weights.
pub(crate) fn interp_from_weights(table: &BreakpointTable, weights: &[f64]) -> (f64, f64) {
    let p = weights
        .iter()
        .zip(&table.powers)
        .map(|(w, p)| w * p)
        .sum();
    let phi = weights.iter().zip(&table.flows).map(|(w, f)| w * f).sum();
    (p, phi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Sos2Encoding {
    /// Compile adjacency to segment binaries; the solver branches on them.
    #[default]
    Binary,
    /// Leave adjacency to the solver's ordered-set branching.
    Native,
}

/// Everything needed to assemble the stage problem at one control step.
#[derive(Debug, Clone)]
pub struct StageData {
    pub scenarios: ScenarioSet,
    /// Sell-back price per step [EUR/kWh], one entry per horizon step.
    pub prices: Vec<f64>,
    pub initial_soh: f64,
    pub previous_mode: Mode,
    /// Applied modes of the most recent steps, oldest first (at most
    /// `switch_window - 1` entries).
    pub switch_history: Vec<Mode>,
    pub params: PlantParams,
    pub table_el: BreakpointTable,
    pub table_f: BreakpointTable,
    /// Recourse penalty weights.
    pub omega_plus: f64,
    pub omega_minus: f64,
    pub encoding: Sos2Encoding,
}

impl StageData {
    pub fn horizon(&self) -> usize {
        self.scenarios.horizon()
    }

    fn validate(&self) -> Result<Vec<String>, BuildError> {
        self.params.validate()?;
        self.scenarios.validate()?;
        let t = self.horizon();
        if t == 0 {
            return Err(BuildError::ZeroHorizon);
        }
        if self.prices.len() != t {
            return Err(BuildError::PriceCount {
                expected: t,
                got: self.prices.len(),
            });
        }
        let p = &self.params;
        if self.initial_soh < p.h_min - 1e-9 || self.initial_soh > p.h_max + 1e-9 {
            return Err(BuildError::SohOutOfRange {
                h0: self.initial_soh,
                min: p.h_min,
                max: p.h_max,
            });
        }
        self.table_el.validate()?;
        self.table_f.validate()?;
        let max_hist = p.switch_window.saturating_sub(1) as usize;
        if self.switch_history.len() > max_hist {
            return Err(BuildError::HistoryTooLong {
                len: self.switch_history.len(),
                max: max_hist,
            });
        }
        if let Some(&last) = self.switch_history.last() {
            if last != self.previous_mode {
                return Err(BuildError::HistoryMismatch);
            }
        }
        let mut warnings = Vec::new();
        if self.prices.iter().any(|&c| c < 0.0) {
            warnings.push(
                "negative sell-back price in the horizon; the self-consumption \
                 relaxation assumes nonnegative prices"
                    .to_string(),
            );
        }
        Ok(warnings)
    }
}

/// Variable ids of the assembled model, grouped by family.
#[derive(Debug, Clone)]
struct Layout {
    t: usize,
    s: usize,
    p_e: Vec<usize>,
    p_ac: Vec<usize>,
    gamma: Vec<usize>,
    /// Mode binaries per step in [SOEC, SOFC, T_SOEC, T_SOFC] order.
    delta: Vec<[usize; 4]>,
    lam_el: Vec<Vec<usize>>,
    lam_f: Vec<Vec<usize>>,
    /// End-of-step tank level H_{k+1}.
    h: Vec<usize>,
    xi_p: Vec<Vec<usize>>,
    xi_m: Vec<Vec<usize>>,
    chi_p: Vec<Vec<usize>>,
    chi_m: Vec<Vec<usize>>,
}

/// A built stage problem: the model plus the layout needed to decode
/// solutions back into plans.
#[derive(Debug, Clone)]
pub struct StageModel {
    milp: MilpModel,
    layout: Layout,
    data: StageData,
    pub warnings: Vec<String>,
}

/// Per-scenario recourse values at one step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RecourseValues {
    pub xi_plus: f64,
    pub xi_minus: f64,
    pub chi_plus: f64,
    pub chi_minus: f64,
}

impl RecourseValues {
    pub fn total(&self) -> f64 {
        self.xi_plus + self.xi_minus + self.chi_plus + self.chi_minus
    }
}

/// Decoded decision for one horizon step.
#[derive(Debug, Clone)]
pub struct PlanStep {
    pub mode: Mode,
    pub p_e: f64,
    pub p_el: f64,
    pub p_f: f64,
    /// Signed stack power implied by mode and powers.
    pub p_r: f64,
    pub p_ac: f64,
    pub gamma: f64,
    /// Interpolated tank flows used by the optimizer.
    pub phi_el: f64,
    pub phi_f: f64,
    /// End-of-step tank level: the optimizer's linearized value and the
    /// exact nonlinear recomputation.
    pub soh_lin: f64,
    pub soh_exact: f64,
    pub recourse: Vec<RecourseValues>,
}

#[derive(Debug, Clone)]
pub struct StagePlan {
    pub steps: Vec<PlanStep>,
    pub objective: f64,
    /// First-stage income per step at the plan values [EUR].
    pub step_income: Vec<f64>,
    /// Largest |interpolated - exact| flow deviation across active steps.
    pub linearization_gap: f64,
}

/// Assemble the stage MILP.
pub fn build(data: &StageData) -> Result<StageModel, BuildError> {
    let warnings = data.validate()?;
    let t = data.horizon();
    let s = data.scenarios.len();
    let p = &data.params;
    let l_el = data.table_el.len();
    let l_f = data.table_f.len();
    let flow_scale = p.delta_t / p.e_h;

    let mut m = MilpModel::new();
    let mut layout = Layout {
        t,
        s,
        p_e: Vec::with_capacity(t),
        p_ac: Vec::with_capacity(t),
        gamma: Vec::with_capacity(t),
        delta: Vec::with_capacity(t),
        lam_el: Vec::with_capacity(t),
        lam_f: Vec::with_capacity(t),
        h: Vec::with_capacity(t),
        xi_p: Vec::with_capacity(t),
        xi_m: Vec::with_capacity(t),
        chi_p: Vec::with_capacity(t),
        chi_m: Vec::with_capacity(t),
    };
    let mut z_el: Vec<Vec<usize>> = Vec::with_capacity(t);
    let mut z_f: Vec<Vec<usize>> = Vec::with_capacity(t);

    for _ in 0..t {
        layout.p_e.push(m.add_continuous(0.0, p.p_e_max));
        layout.p_ac.push(m.add_continuous(0.0, p.p_e_max));
        layout.gamma.push(m.add_continuous(0.0, f64::INFINITY));
        layout
            .delta
            .push([m.add_binary(), m.add_binary(), m.add_binary(), m.add_binary()]);
        layout
            .lam_el
            .push((0..l_el).map(|_| m.add_continuous(0.0, 1.0)).collect());
        layout
            .lam_f
            .push((0..l_f).map(|_| m.add_continuous(0.0, 1.0)).collect());
        if data.encoding == Sos2Encoding::Binary {
            z_el.push((0..l_el - 1).map(|_| m.add_binary()).collect());
            z_f.push((0..l_f - 1).map(|_| m.add_binary()).collect());
        }
        layout.h.push(m.add_continuous(p.h_min, p.h_max));
        layout
            .xi_p
            .push((0..s).map(|_| m.add_continuous(0.0, f64::INFINITY)).collect());
        layout
            .xi_m
            .push((0..s).map(|_| m.add_continuous(0.0, f64::INFINITY)).collect());
        layout
            .chi_p
            .push((0..s).map(|_| m.add_continuous(0.0, f64::INFINITY)).collect());
        layout
            .chi_m
            .push((0..s).map(|_| m.add_continuous(0.0, f64::INFINITY)).collect());
    }

    // Ordered interpolation groups, one per (step, curve).
    for k in 0..t {
        m.sos2_groups.push(layout.lam_el[k].clone());
        m.sos2_groups.push(layout.lam_f[k].clone());
    }

    // Anchor k = 0 to the previously applied mode by fixing binaries.
    {
        let d0 = layout.delta[0];
        match data.previous_mode {
            Mode::Soec => {
                m.fix_variable(d0[Mode::Sofc.index()], 0.0);
                m.fix_variable(d0[Mode::TSoec.index()], 0.0);
            }
            Mode::Sofc => {
                m.fix_variable(d0[Mode::Soec.index()], 0.0);
                m.fix_variable(d0[Mode::TSofc.index()], 0.0);
            }
            Mode::TSoec => {
                for (i, &v) in d0.iter().enumerate() {
                    m.fix_variable(v, f64::from(i == Mode::Soec.index()));
                }
            }
            Mode::TSofc => {
                for (i, &v) in d0.iter().enumerate() {
                    m.fix_variable(v, f64::from(i == Mode::Sofc.index()));
                }
            }
        }
    }

    let interp_terms = |lams: &[usize], table: &BreakpointTable, sign: f64| -> Vec<(usize, f64)> {
        lams.iter()
            .zip(&table.powers)
            .map(|(&j, &pw)| (j, sign * pw))
            .collect()
    };

    for k in 0..t {
        let d = layout.delta[k];

        // Exactly one operating mode per step.
        m.add_constraint(d.iter().map(|&j| (j, 1.0)).collect(), Sense::Eq, 1.0);

        // Dispatch bounds gated by the mode binaries, written over the
        // interpolation expressions.
        for (lams, table, (lo, hi), delta_idx) in [
            (
                &layout.lam_el[k],
                &data.table_el,
                (p.p_el_min, p.p_el_max),
                Mode::Soec.index(),
            ),
            (
                &layout.lam_f[k],
                &data.table_f,
                (p.p_f_min, p.p_f_max),
                Mode::Sofc.index(),
            ),
        ] {
            let mut low = interp_terms(lams, table, 1.0);
            low.push((d[delta_idx], -lo));
            m.add_constraint(low, Sense::Ge, 0.0);
            let mut high = interp_terms(lams, table, 1.0);
            high.push((d[delta_idx], -hi));
            m.add_constraint(high, Sense::Le, 0.0);

            // Interpolation mass equals the owning mode binary.
            let mut mass: Vec<(usize, f64)> = lams.iter().map(|&j| (j, 1.0)).collect();
            mass.push((d[delta_idx], -1.0));
            m.add_constraint(mass, Sense::Eq, 0.0);
        }

        // Optional compiled adjacency: lambda_l <= z_{l-1} + z_l and the
        // active-segment count equals the mode binary.
        if data.encoding == Sos2Encoding::Binary {
            for (lams, zs, delta_idx) in [
                (&layout.lam_el[k], &z_el[k], Mode::Soec.index()),
                (&layout.lam_f[k], &z_f[k], Mode::Sofc.index()),
            ] {
                let segs = zs.len();
                for (l, &lam) in lams.iter().enumerate() {
                    let mut row = vec![(lam, 1.0)];
                    if l > 0 {
                        row.push((zs[l - 1], -1.0));
                    }
                    if l < segs {
                        row.push((zs[l], -1.0));
                    }
                    m.add_constraint(row, Sense::Le, 0.0);
                }
                let mut seg_sum: Vec<(usize, f64)> = zs.iter().map(|&j| (j, 1.0)).collect();
                seg_sum.push((d[delta_idx], -1.0));
                m.add_constraint(seg_sum, Sense::Eq, 0.0);
            }
        }

        // Tank recursion through the interpolated flows.
        {
            let mut row: Vec<(usize, f64)> = vec![(layout.h[k], 1.0)];
            let rhs = if k == 0 {
                data.initial_soh
            } else {
                row.push((layout.h[k - 1], -1.0));
                0.0
            };
            for (&j, &f) in layout.lam_el[k].iter().zip(&data.table_el.flows) {
                row.push((j, -flow_scale * f));
            }
            for (&j, &f) in layout.lam_f[k].iter().zip(&data.table_f.flows) {
                row.push((j, flow_scale * f));
            }
            m.add_constraint(row, Sense::Eq, rhs);
        }

        // Self-consumption cannot exceed the export.
        m.add_constraint(
            vec![(layout.p_ac[k], 1.0), (layout.p_e[k], -1.0)],
            Sense::Le,
            0.0,
        );

        // Scenario recourse. Load matching: p_ac + gamma + xi- - xi+ equals
        // the scenario load. Power balance: stack power + export + chi- -
        // chi+ equals the scenario generation, with the stack power written
        // out as interpolated absorption minus production plus the fixed
        // transition demands.
        for sc in 0..s {
            let path = &data.scenarios.paths[sc][k];
            m.add_constraint(
                vec![
                    (layout.p_ac[k], 1.0),
                    (layout.gamma[k], 1.0),
                    (layout.xi_m[k][sc], 1.0),
                    (layout.xi_p[k][sc], -1.0),
                ],
                Sense::Eq,
                path.load_kw,
            );
            let mut row = interp_terms(&layout.lam_el[k], &data.table_el, 1.0);
            row.extend(interp_terms(&layout.lam_f[k], &data.table_f, -1.0));
            row.push((d[Mode::TSoec.index()], p.p_tilde_el));
            row.push((d[Mode::TSofc.index()], p.p_tilde_f));
            row.push((layout.p_e[k], 1.0));
            row.push((layout.chi_m[k][sc], 1.0));
            row.push((layout.chi_p[k][sc], -1.0));
            m.add_constraint(row, Sense::Eq, path.res_kw);
        }
    }

    // Mode succession between consecutive steps.
    for k in 0..t.saturating_sub(1) {
        let a = layout.delta[k];
        let b = layout.delta[k + 1];
        let le1 = |x: usize, y: usize, m: &mut MilpModel| {
            m.add_constraint(vec![(x, 1.0), (y, 1.0)], Sense::Le, 1.0);
        };
        le1(a[Mode::Soec.index()], b[Mode::Sofc.index()], &mut m);
        le1(a[Mode::Soec.index()], b[Mode::TSoec.index()], &mut m);
        le1(a[Mode::Sofc.index()], b[Mode::Soec.index()], &mut m);
        le1(a[Mode::Sofc.index()], b[Mode::TSofc.index()], &mut m);
        m.add_constraint(
            vec![(a[Mode::TSoec.index()], 1.0), (b[Mode::Soec.index()], -1.0)],
            Sense::Le,
            0.0,
        );
        m.add_constraint(
            vec![(a[Mode::TSofc.index()], 1.0), (b[Mode::Sofc.index()], -1.0)],
            Sense::Le,
            0.0,
        );
    }

    // Rolling switch limit: every window of `switch_window` consecutive
    // steps that fits inside [t - history, t + T - 1] admits at most
    // `max_switches` activations of each transition kind. Windows reaching
    // past the horizon are left to later control steps.
    {
        let window = p.switch_window as isize;
        let hist = &data.switch_history;
        let hist_len = hist.len() as isize;
        for kind in [Mode::TSoec, Mode::TSofc] {
            let idx = kind.index();
            let mut w = -hist_len;
            while w + window - 1 <= t as isize - 1 {
                let hist_count = (w..0)
                    .filter(|&j| {
                        j >= -hist_len && hist[(hist_len + j) as usize] == kind
                    })
                    .count() as u32;
                if hist_count > p.max_switches {
                    return Err(BuildError::SwitchBudget { kind });
                }
                let terms: Vec<(usize, f64)> = (w.max(0)..=(w + window - 1))
                    .map(|k| (layout.delta[k as usize][idx], 1.0))
                    .collect();
                if !terms.is_empty() {
                    m.add_constraint(
                        terms,
                        Sense::Le,
                        f64::from(p.max_switches - hist_count),
                    );
                }
                w += 1;
            }
        }
    }

    // Objective: negated first-stage income plus probability-weighted
    // recourse penalties.
    for k in 0..t {
        m.objective
            .push((layout.p_ac[k], -p.delta_t * (p.c_m + p.c_r)));
        m.objective.push((layout.p_e[k], -p.delta_t * data.prices[k]));
        for sc in 0..s {
            let pi = data.scenarios.probabilities[sc];
            m.objective.push((layout.xi_p[k][sc], pi * data.omega_plus));
            m.objective.push((layout.chi_p[k][sc], pi * data.omega_plus));
            m.objective.push((layout.xi_m[k][sc], pi * data.omega_minus));
            m.objective.push((layout.chi_m[k][sc], pi * data.omega_minus));
        }
    }

    debug_assert!(m.validate().is_ok());
    Ok(StageModel {
        milp: m,
        layout,
        data: data.clone(),
        warnings,
    })
}

impl StageModel {
    pub fn milp(&self) -> &MilpModel {
        &self.milp
    }

    pub fn horizon(&self) -> usize {
        self.layout.t
    }

    pub fn n_scenarios(&self) -> usize {
        self.layout.s
    }

    /// Mode binaries per step, [SOEC, SOFC, T_SOEC, T_SOFC] order.
    pub fn mode_binaries(&self, k: usize) -> [usize; 4] {
        self.layout.delta[k]
    }

    /// Decode a solver solution into a plan, verifying integrity against
    /// the model within `1e-6`.
    pub fn extract(&self, solution: &Solution) -> Result<StagePlan, ExtractError> {
        let v = &solution.values;
        if v.len() != self.milp.n_variables() {
            return Err(ExtractError::NoValues);
        }
        verify_assignment(&self.milp, v, 1e-6).map_err(ExtractError::Integrity)?;

        let t = self.layout.t;
        let p = &self.data.params;
        let mut steps = Vec::with_capacity(t);
        let mut step_income = Vec::with_capacity(t);
        let mut soh = self.data.initial_soh;
        let mut gap_max = 0.0f64;
        let mut prev_mode = self.data.previous_mode;

        for k in 0..t {
            let d = self.layout.delta[k];
            let mut active = None;
            for (i, &j) in d.iter().enumerate() {
                if v[j] > 0.5 {
                    if active.is_some() {
                        return Err(ExtractError::Integrity(format!(
                            "two modes active at step {k}"
                        )));
                    }
                    active = Some(Mode::ALL[i]);
                }
            }
            let mode = active.ok_or_else(|| {
                ExtractError::Integrity(format!("no mode active at step {k}"))
            })?;
            if !plant::legal_transition(prev_mode, mode) {
                return Err(ExtractError::Integrity(format!(
                    "illegal transition {prev_mode} -> {mode} at step {k}"
                )));
            }
            prev_mode = mode;

            let lam_el: Vec<f64> = self.layout.lam_el[k].iter().map(|&j| v[j]).collect();
            let lam_f: Vec<f64> = self.layout.lam_f[k].iter().map(|&j| v[j]).collect();
            let (p_el_raw, phi_el) = interp_from_weights(&self.data.table_el, &lam_el);
            let (p_f_raw, phi_f) = interp_from_weights(&self.data.table_f, &lam_f);

            // Inactive curves carry only numerical dust.
            let snap = |x: f64| if x.abs() <= 1e-6 { 0.0 } else { x };
            let (p_el, p_f) = match mode {
                Mode::Soec => (p_el_raw.clamp(p.p_el_min, p.p_el_max), snap(p_f_raw)),
                Mode::Sofc => (snap(p_el_raw), p_f_raw.clamp(p.p_f_min, p.p_f_max)),
                _ => (snap(p_el_raw), snap(p_f_raw)),
            };
            if (mode == Mode::Soec && p_f != 0.0) || (mode == Mode::Sofc && p_el != 0.0) {
                return Err(ExtractError::Integrity(format!(
                    "mode {mode} carries power on the inactive curve at step {k}"
                )));
            }
            let p_r = plant::rfc_power(mode, p_el, p_f, p)
                .map_err(|e| ExtractError::Integrity(e.to_string()))?;

            // Exact tank flows at the decoded powers; the deviation from
            // the interpolated flows is the linearization gap.
            let (phi_el_exact, phi_f_exact) = match mode {
                Mode::Soec => (
                    plant::g_el(p_el, p).map_err(|e| ExtractError::Integrity(e.to_string()))?,
                    0.0,
                ),
                Mode::Sofc => (
                    0.0,
                    plant::g_f(p_f, p).map_err(|e| ExtractError::Integrity(e.to_string()))?,
                ),
                _ => (0.0, 0.0),
            };
            gap_max = gap_max
                .max((phi_el - phi_el_exact).abs())
                .max((phi_f - phi_f_exact).abs());
            soh = plant::soh_step(soh, phi_el_exact, phi_f_exact, p);

            let recourse: Vec<RecourseValues> = (0..self.layout.s)
                .map(|sc| RecourseValues {
                    xi_plus: v[self.layout.xi_p[k][sc]],
                    xi_minus: v[self.layout.xi_m[k][sc]],
                    chi_plus: v[self.layout.chi_p[k][sc]],
                    chi_minus: v[self.layout.chi_m[k][sc]],
                })
                .collect();

            let p_e = v[self.layout.p_e[k]];
            let p_ac = v[self.layout.p_ac[k]];
            step_income.push(plant::income_step(p_ac, p_e, self.data.prices[k], p));
            steps.push(PlanStep {
                mode,
                p_e,
                p_el,
                p_f,
                p_r,
                p_ac,
                gamma: v[self.layout.gamma[k]],
                phi_el,
                phi_f,
                soh_lin: v[self.layout.h[k]],
                soh_exact: soh,
                recourse,
            });
        }

        Ok(StagePlan {
            steps,
            objective: solution.objective,
            step_income,
            linearization_gap: gap_max,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::ScenarioSet;
    use crate::series::PowerPoint;
    use crate::solver::{solve, SolverOptions};
    use approx::assert_abs_diff_eq;

    fn flat_scenarios(s: usize, t: usize, load: f64, res: f64) -> ScenarioSet {
        ScenarioSet {
            paths: vec![vec![PowerPoint { load_kw: load, res_kw: res }; t]; s],
            probabilities: vec![1.0 / s as f64; s],
        }
    }

    fn stage_data(t: usize, s: usize, l: usize, load: f64, res: f64) -> StageData {
        let params = PlantParams::default();
        StageData {
            scenarios: flat_scenarios(s, t, load, res),
            prices: vec![0.08; t],
            initial_soh: 0.5,
            previous_mode: Mode::Soec,
            switch_history: vec![Mode::Soec],
            table_el: breakpoint_table(CurveTag::El, l, &params).unwrap(),
            table_f: breakpoint_table(CurveTag::F, l, &params).unwrap(),
            params,
            omega_plus: 1.0,
            omega_minus: 1.0,
            encoding: Sos2Encoding::Binary,
        }
    }

    #[test]
    fn breakpoint_table_l3_is_the_corner_triple() {
        let p = PlantParams::default();
        let t = breakpoint_table(CurveTag::El, 3, &p).unwrap();
        assert_eq!(t.powers, vec![0.0, 7.2, 160.0]);
        assert_eq!(t.flows[0], 0.0);
        assert_abs_diff_eq!(t.flows[1], plant::g_el(7.2, &p).unwrap(), epsilon = 0.0);
        assert_abs_diff_eq!(t.flows[2], plant::g_el(160.0, &p).unwrap(), epsilon = 0.0);
        assert!(breakpoint_table(CurveTag::F, 2, &p).is_err());
    }

    #[test]
    fn breakpoint_tables_are_strictly_increasing() {
        let p = PlantParams::default();
        for l in [3usize, 5, 8, 16] {
            for tag in [CurveTag::El, CurveTag::F] {
                let t = breakpoint_table(tag, l, &p).unwrap();
                assert_eq!(t.len(), l);
                assert!(t.powers.windows(2).all(|w| w[1] > w[0]));
                t.validate().unwrap();
            }
        }
    }

    #[test]
    fn weight_interpolation_matches_the_midpoint_example() {
        let p = PlantParams::default();
        let t = breakpoint_table(CurveTag::El, 3, &p).unwrap();
        let (pw, phi) = interp_from_weights(&t, &[0.0, 0.5, 0.5]);
        assert_abs_diff_eq!(pw, 83.6, epsilon = 1e-12);
        assert_abs_diff_eq!(phi, (t.flows[1] + t.flows[2]) / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn build_audit_counts_for_tiny_instance() {
        let sm = build(&stage_data(1, 1, 3, 100.0, 120.0)).unwrap();
        // 4 mode binaries; with the compiled encoding, 2 segment binaries
        // per curve on top.
        let mode_ids = sm.mode_binaries(0);
        assert_eq!(mode_ids.len(), 4);
        assert_eq!(sm.milp().n_binaries(), 4 + 2 + 2);
        assert_eq!(sm.milp().sos2_groups.len(), 2);
        // One load and one balance recourse row per scenario: count the
        // recourse variables instead of rows (4 per step and scenario).
        assert_eq!(sm.n_scenarios(), 1);
        assert_eq!(sm.horizon(), 1);
        sm.milp().validate().unwrap();
    }

    #[test]
    fn native_encoding_drops_segment_binaries() {
        let mut data = stage_data(2, 2, 4, 100.0, 120.0);
        data.encoding = Sos2Encoding::Native;
        let sm = build(&data).unwrap();
        assert_eq!(sm.milp().n_binaries(), 2 * 4);
        assert_eq!(sm.milp().sos2_groups.len(), 4);
    }

    #[test]
    fn zero_penalty_weights_decouple_recourse_from_the_objective() {
        let mut data = stage_data(1, 2, 3, 90.0, 50.0);
        data.omega_plus = 0.0;
        data.omega_minus = 0.0;
        let sm = build(&data).unwrap();
        for k in 0..1 {
            for sc in 0..2 {
                for j in [
                    sm.layout.xi_p[k][sc],
                    sm.layout.xi_m[k][sc],
                    sm.layout.chi_p[k][sc],
                    sm.layout.chi_m[k][sc],
                ] {
                    let w: f64 = sm
                        .milp()
                        .objective
                        .iter()
                        .filter(|&&(v, _)| v == j)
                        .map(|&(_, c)| c)
                        .sum();
                    assert_eq!(w, 0.0);
                }
            }
        }
    }

    #[test]
    fn zero_probability_scenarios_carry_zero_weight() {
        let mut data = stage_data(1, 2, 3, 90.0, 50.0);
        data.scenarios.probabilities = vec![1.0, 0.0];
        let sm = build(&data).unwrap();
        let j = sm.layout.chi_p[0][1];
        let w: f64 = sm
            .milp()
            .objective
            .iter()
            .filter(|&&(v, _)| v == j)
            .map(|&(_, c)| c)
            .sum();
        assert_eq!(w, 0.0);
    }

    #[test]
    fn build_rejects_invalid_initial_state() {
        let mut data = stage_data(1, 1, 3, 10.0, 20.0);
        data.initial_soh = 1.5;
        assert!(matches!(
            build(&data),
            Err(BuildError::SohOutOfRange { .. })
        ));
        let mut data = stage_data(1, 1, 3, 10.0, 20.0);
        data.prices = vec![];
        assert!(matches!(build(&data), Err(BuildError::PriceCount { .. })));
    }

    #[test]
    fn negative_prices_are_flagged_not_fatal() {
        let mut data = stage_data(1, 1, 3, 10.0, 20.0);
        data.prices = vec![-0.02];
        let sm = build(&data).unwrap();
        assert_eq!(sm.warnings.len(), 1);
    }

    #[test]
    fn solve_and_extract_round_trip_on_a_benign_instance() {
        // Plenty of generation: the optimizer should export and charge.
        let data = stage_data(3, 2, 4, 120.0, 220.0);
        let sm = build(&data).unwrap();
        let sol = solve(sm.milp(), &SolverOptions::default()).unwrap();
        let plan = sm.extract(&sol).unwrap();
        assert_eq!(plan.steps.len(), 3);
        let mut prev = data.previous_mode;
        for st in &plan.steps {
            assert!(plant::legal_transition(prev, st.mode));
            prev = st.mode;
            assert!(st.p_e >= -1e-9 && st.p_e <= data.params.p_e_max + 1e-9);
            assert!(st.soh_lin >= 0.0 && st.soh_lin <= 1.0 + 1e-9);
            assert!((st.soh_exact - st.soh_lin).abs() < 0.05);
        }
        // Income accounting matches the plant formula.
        for (k, st) in plan.steps.iter().enumerate() {
            let expect =
                plant::income_step(st.p_ac, st.p_e, data.prices[k], &data.params);
            assert_abs_diff_eq!(plan.step_income[k], expect, epsilon = 0.0);
        }
    }

    #[test]
    fn extract_rejects_corrupted_solutions() {
        let data = stage_data(1, 1, 3, 50.0, 100.0);
        let sm = build(&data).unwrap();
        let mut sol = solve(sm.milp(), &SolverOptions::default()).unwrap();
        let plan = sm.extract(&sol);
        assert!(plan.is_ok());
        sol.values[sm.layout.p_e[0]] += 25.0; // break the balance rows
        assert!(matches!(
            sm.extract(&sol),
            Err(ExtractError::Integrity(_))
        ));
    }

    #[test]
    fn transition_anchoring_forces_the_committed_target() {
        // Previous step was a transition towards fuel-cell mode: k = 0 must
        // run SOFC.
        let mut data = stage_data(2, 1, 3, 30.0, 0.0);
        data.previous_mode = Mode::TSofc;
        data.switch_history = vec![Mode::TSofc];
        let sm = build(&data).unwrap();
        let sol = solve(sm.milp(), &SolverOptions::default()).unwrap();
        let plan = sm.extract(&sol).unwrap();
        assert_eq!(plan.steps[0].mode, Mode::Sofc);
    }

    #[test]
    fn exhausted_switch_budget_blocks_new_transitions() {
        // One switch of each kind allowed per 6-step window; the history
        // already used the T_SOFC one, so a (T_SOFC then SOFC) move within
        // the window is infeasible even when the tank favors discharging.
        let mut data = stage_data(2, 1, 3, 30.0, 0.0);
        data.params.max_switches = 1;
        data.params.switch_window = 6;
        data.switch_history = vec![Mode::TSofc, Mode::Sofc, Mode::TSoec, Mode::Soec];
        data.previous_mode = Mode::Soec;
        let sm = build(&data).unwrap();
        let sol = solve(sm.milp(), &SolverOptions::default()).unwrap();
        let plan = sm.extract(&sol).unwrap();
        assert!(plan.steps.iter().all(|s| s.mode != Mode::TSofc));
    }

    #[test]
    fn over_budget_history_is_rejected() {
        let mut data = stage_data(2, 1, 3, 30.0, 50.0);
        data.params.max_switches = 1;
        data.params.switch_window = 6;
        data.switch_history = vec![Mode::TSoec, Mode::Soec, Mode::TSoec, Mode::Soec];
        data.previous_mode = Mode::Soec;
        assert!(matches!(
            build(&data),
            Err(BuildError::SwitchBudget { .. })
        ));
    }
}
