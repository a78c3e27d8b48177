//! Receding-horizon controller: plan over the horizon, apply the first
//! step, then reconcile the applied powers with the measured generation and
//! demand outside the optimizer.
//!
//! Compensation never changes the committed mode. On a generation surplus
//! the export rises first (up to the grid limit) and any rest is absorbed
//! by the electrolyzer when it is running and the tank has headroom; what
//! remains is curtailed. On a deficit the plant gives way first — the
//! electrolyzer backs off towards its minimum, or the fuel cell ramps up
//! within its bounds and the tank content — and the export shrinks last.
//! Within-plant adjustments re-evaluate the exact nonlinear flow curves
//! rather than the optimizer's interpolation, and the applied tank level is
//! always advanced with the exact curves, so the balance and the tank
//! bounds hold at the applied powers, not just the planned ones.

use std::time::Duration;

use thiserror::Error;

use crate::plant::{self, Mode, PlantParams, PlantState};
use crate::scenario::ScenarioSet;
use crate::solver::{self, SolveError, SolveStatus, SolverOptions};
use crate::stage::{
    self, BreakpointTable, BuildError, ExtractError, PlanStep, RecourseValues, Sos2Encoding,
    StageData, StagePlan,
};

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("stage build: {0}")]
    Build(#[from] BuildError),
    #[error("stage solve: {0}")]
    Solve(#[from] SolveError),
    #[error("plan extraction: {0}")]
    Extract(#[from] ExtractError),
    #[error("solver finished {0:?} without a usable plan")]
    NoPlan(SolveStatus),
}

/// Static controller configuration shared across steps.
#[derive(Debug, Clone)]
pub struct ControllerConfig {
    pub table_el: BreakpointTable,
    pub table_f: BreakpointTable,
    pub omega_plus: f64,
    pub omega_minus: f64,
    pub encoding: Sos2Encoding,
    pub solver: SolverOptions,
}

#[derive(Debug, Clone)]
pub struct PlanOutcome {
    pub plan: StagePlan,
    pub node_count: u64,
    pub wall: Duration,
    /// True when the solver stopped on a limit and the plan comes from the
    /// best incumbent rather than a proven optimum.
    pub from_incumbent: bool,
}

/// Build and solve the stage problem for the current state.
pub fn plan_step(
    state: &PlantState,
    scenarios: &ScenarioSet,
    prices: &[f64],
    params: &PlantParams,
    cfg: &ControllerConfig,
) -> Result<PlanOutcome, ControlError> {
    let data = StageData {
        scenarios: scenarios.clone(),
        prices: prices.to_vec(),
        initial_soh: state.soh,
        previous_mode: state.mode,
        switch_history: state.history().collect(),
        params: params.clone(),
        table_el: cfg.table_el.clone(),
        table_f: cfg.table_f.clone(),
        omega_plus: cfg.omega_plus,
        omega_minus: cfg.omega_minus,
        encoding: cfg.encoding,
    };
    let model = stage::build(&data)?;
    let solution = solver::solve(model.milp(), &cfg.solver)?;
    let usable = matches!(solution.status, SolveStatus::Optimal)
        || (solution.status == SolveStatus::Limit && !solution.values.is_empty());
    if !usable {
        return Err(ControlError::NoPlan(solution.status));
    }
    let plan = model.extract(&solution)?;
    Ok(PlanOutcome {
        plan,
        node_count: solution.node_count,
        wall: solution.wall,
        from_incumbent: solution.status == SolveStatus::Limit,
    })
}

/// Decision actually applied over one step, after compensation.
#[derive(Debug, Clone)]
pub struct AppliedDecision {
    pub mode: Mode,
    pub p_e: f64,
    pub p_el: f64,
    pub p_f: f64,
    pub p_r: f64,
    pub p_ac: f64,
    /// Generation absorbed by the balance: `p_r + p_e` by construction.
    pub p_res_used: f64,
    /// Generation beyond what export and absorption could take [kW].
    pub curtailed_kw: f64,
    /// Exact tank flows at the applied powers.
    pub phi_el: f64,
    pub phi_f: f64,
    pub soh_next: f64,
    pub gamma: f64,
    /// Probability-weighted first-step recourse from the plan.
    pub recourse: RecourseValues,
    /// Set when no in-bounds adjustment could restore the balance; the
    /// shortfall is the uncovered deficit [kW].
    pub balance_infeasible: bool,
    pub balance_shortfall_kw: f64,
}

/// Largest `x` in `[lo, hi]` with `f(x) <= cap`, for monotone increasing
/// `f`. Falls back to `lo` when even that exceeds the cap.
fn invert_monotone(f: impl Fn(f64) -> f64, lo: f64, hi: f64, cap: f64) -> f64 {
    if f(hi) <= cap {
        return hi;
    }
    if f(lo) > cap {
        return lo;
    }
    let (mut lo, mut hi) = (lo, hi);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if f(mid) <= cap {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Reconcile the first planned step with the measured generation and load.
pub fn compensate(
    plan0: &PlanStep,
    probabilities: &[f64],
    actual_res: f64,
    actual_load: f64,
    state: &PlantState,
    params: &PlantParams,
) -> AppliedDecision {
    let mode = plan0.mode;
    let g_el = |p: f64| plant::g_el(p, params).expect("p within dispatch range");
    let g_f = |p: f64| plant::g_f(p, params).expect("p within dispatch range");

    let mut p_e = plan0.p_e.clamp(0.0, params.p_e_max);
    let mut p_el = if mode == Mode::Soec { plan0.p_el } else { 0.0 };
    let mut p_f = if mode == Mode::Sofc { plan0.p_f } else { 0.0 };

    // Tank headroom/content expressed as flow caps for this step.
    let inflow_cap = (params.h_max - state.soh) * params.e_h / params.delta_t;
    let outflow_cap = (state.soh - params.h_min) * params.e_h / params.delta_t;

    // The plan kept the interpolated flow inside the tank; the exact curve
    // can overshoot near its kink, so cap the electrolyzer before anything
    // else. Discharging is safe as-planned: the interpolated outflow
    // overestimates the exact one.
    if mode == Mode::Soec {
        p_el = invert_monotone(g_el, params.p_el_min, p_el.max(params.p_el_min), inflow_cap);
    }

    let mut curtailed = 0.0;
    let mut shortfall = 0.0;
    let flow = plant::rfc_power(mode, p_el, p_f, params).expect("consistent mode powers") + p_e;

    if actual_res >= flow {
        let mut surplus = actual_res - flow;
        let dp = surplus.min(params.p_e_max - p_e);
        p_e += dp;
        surplus -= dp;
        if surplus > 0.0 && mode == Mode::Soec {
            let target = (p_el + surplus).min(params.p_el_max);
            let raised = invert_monotone(g_el, p_el, target.max(p_el), inflow_cap);
            surplus -= raised - p_el;
            p_el = raised;
        }
        curtailed = surplus.max(0.0);
    } else {
        let mut deficit = flow - actual_res;
        match mode {
            Mode::Soec => {
                let red = deficit.min((p_el - params.p_el_min).max(0.0));
                p_el -= red;
                deficit -= red;
            }
            Mode::Sofc => {
                let cap_power =
                    invert_monotone(g_f, params.p_f_min, params.p_f_max, outflow_cap);
                let raise = deficit.min((cap_power - p_f).max(0.0));
                p_f += raise;
                deficit -= raise;
            }
            Mode::TSoec | Mode::TSofc => {}
        }
        let red = deficit.min(p_e);
        p_e -= red;
        deficit -= red;
        if deficit > 1e-9 {
            shortfall = deficit;
        }
    }

    let p_r = plant::rfc_power(mode, p_el, p_f, params).expect("consistent mode powers");
    let p_res_used = p_r + p_e;
    let p_ac = p_e.min(actual_load.max(0.0));
    let (phi_el, phi_f) = match mode {
        Mode::Soec => (g_el(p_el), 0.0),
        Mode::Sofc => (0.0, g_f(p_f)),
        _ => (0.0, 0.0),
    };
    let soh_next = plant::soh_step(state.soh, phi_el, phi_f, params);

    let mut recourse = RecourseValues::default();
    for (pi, r) in probabilities.iter().zip(&plan0.recourse) {
        recourse.xi_plus += pi * r.xi_plus;
        recourse.xi_minus += pi * r.xi_minus;
        recourse.chi_plus += pi * r.chi_plus;
        recourse.chi_minus += pi * r.chi_minus;
    }

    AppliedDecision {
        mode,
        p_e,
        p_el,
        p_f,
        p_r,
        p_ac,
        p_res_used,
        curtailed_kw: curtailed,
        phi_el,
        phi_f,
        soh_next,
        gamma: plan0.gamma,
        recourse,
        balance_infeasible: shortfall > 0.0,
        balance_shortfall_kw: shortfall,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::ScenarioSet;
    use crate::series::PowerPoint;
    use crate::stage::{breakpoint_table, CurveTag};
    use approx::assert_abs_diff_eq;

    fn params() -> PlantParams {
        PlantParams::default()
    }

    fn cfg() -> ControllerConfig {
        let p = params();
        ControllerConfig {
            table_el: breakpoint_table(CurveTag::El, 4, &p).unwrap(),
            table_f: breakpoint_table(CurveTag::F, 4, &p).unwrap(),
            omega_plus: 1.0,
            omega_minus: 1.0,
            encoding: Sos2Encoding::Binary,
            solver: SolverOptions::default(),
        }
    }

    fn plan0(mode: Mode, p_e: f64, p_el: f64, p_f: f64, params: &PlantParams) -> PlanStep {
        let p_r = plant::rfc_power(mode, p_el, p_f, params).unwrap();
        PlanStep {
            mode,
            p_e,
            p_el,
            p_f,
            p_r,
            p_ac: 0.0,
            gamma: 0.0,
            phi_el: 0.0,
            phi_f: 0.0,
            soh_lin: 0.5,
            soh_exact: 0.5,
            recourse: vec![RecourseValues::default()],
        }
    }

    fn flat(s: usize, t: usize, load: f64, res: f64) -> ScenarioSet {
        ScenarioSet {
            paths: vec![vec![PowerPoint { load_kw: load, res_kw: res }; t]; s],
            probabilities: vec![1.0 / s as f64; s],
        }
    }

    #[test]
    fn exact_forecast_passes_through() {
        let p = params();
        let state = PlantState::new(0.5, Mode::Soec, &p).unwrap();
        let pl = plan0(Mode::Soec, 50.0, 20.0, 0.0, &p);
        let a = compensate(&pl, &[1.0], 70.0, 100.0, &state, &p);
        assert_abs_diff_eq!(a.p_e, 50.0, epsilon = 0.0);
        assert_abs_diff_eq!(a.p_el, 20.0, epsilon = 0.0);
        assert_eq!(a.p_res_used, a.p_r + a.p_e);
        assert_abs_diff_eq!(a.curtailed_kw, 0.0, epsilon = 0.0);
        assert!(!a.balance_infeasible);
        assert_abs_diff_eq!(a.p_ac, 50.0, epsilon = 0.0); // min(p_e, load)
    }

    #[test]
    fn surplus_raises_export_first() {
        let p = params();
        let state = PlantState::new(0.5, Mode::Soec, &p).unwrap();
        let pl = plan0(Mode::Soec, 50.0, 20.0, 0.0, &p);
        let a = compensate(&pl, &[1.0], 80.0, 10.0, &state, &p);
        assert_abs_diff_eq!(a.p_e, 60.0, epsilon = 1e-12);
        assert_abs_diff_eq!(a.p_el, 20.0, epsilon = 0.0);
        assert_abs_diff_eq!(a.p_ac, 10.0, epsilon = 0.0);
    }

    #[test]
    fn surplus_beyond_grid_limit_charges_then_curtails() {
        let p = params();
        let state = PlantState::new(0.2, Mode::Soec, &p).unwrap();
        let pl = plan0(Mode::Soec, 335.0, 20.0, 0.0, &p);
        // 70 kW surplus: 5 into export (hits 340), then electrolyzer up to
        // its maximum, remainder curtailed.
        let a = compensate(&pl, &[1.0], 425.0, 0.0, &state, &p);
        assert_abs_diff_eq!(a.p_e, 340.0, epsilon = 1e-12);
        assert!((a.p_el - 85.0).abs() < 1e-9, "p_el = {}", a.p_el);
        assert_abs_diff_eq!(a.curtailed_kw, 0.0, epsilon = 1e-9);
        let b = compensate(&pl, &[1.0], 600.0, 0.0, &state, &p);
        assert_abs_diff_eq!(b.p_el, p.p_el_max, epsilon = 1e-9);
        assert!(b.curtailed_kw > 0.0);
        assert_abs_diff_eq!(
            b.p_res_used + b.curtailed_kw,
            600.0,
            epsilon = 1e-9
        );
    }

    #[test]
    fn deficit_backs_off_electrolyzer_then_export() {
        let p = params();
        let state = PlantState::new(0.5, Mode::Soec, &p).unwrap();
        let pl = plan0(Mode::Soec, 30.0, 10.0, 0.0, &p);
        // Deficit of 5: electrolysis gives 2.8 (down to 7.2), export the
        // remaining 2.2.
        let a = compensate(&pl, &[1.0], 35.0, 50.0, &state, &p);
        assert_abs_diff_eq!(a.p_el, 7.2, epsilon = 1e-12);
        assert_abs_diff_eq!(a.p_e, 27.8, epsilon = 1e-12);
        assert!(!a.balance_infeasible);
    }

    #[test]
    fn deficit_raises_fuel_cell_within_tank_content() {
        let p = params();
        // Tank nearly empty: content allows only a little extra discharge.
        let state = PlantState::new(0.004, Mode::Sofc, &p).unwrap();
        let pl = plan0(Mode::Sofc, 10.0, 0.0, 3.5, &p);
        // flow = -3.5 + 10 = 6.5; actual 0 -> deficit 6.5.
        let a = compensate(&pl, &[1.0], 0.0, 20.0, &state, &p);
        assert!(a.p_f > 3.5 && a.p_f < p.p_f_max);
        // Applied discharge must respect the content cap exactly.
        assert!(a.soh_next >= p.h_min - 1e-12, "soh_next = {}", a.soh_next);
        // Whatever the fuel cell could not cover came out of the export.
        assert_eq!(a.p_res_used, a.p_r + a.p_e);
        assert!(!a.balance_infeasible);
    }

    #[test]
    fn transition_mode_moves_export_only_and_flags_dead_ends() {
        let p = params();
        let state = PlantState::new(0.5, Mode::TSofc, &p).unwrap();
        let pl = plan0(Mode::TSofc, 5.0, 0.0, 0.0, &p);
        // Surplus: all into export.
        let a = compensate(&pl, &[1.0], 20.0, 0.0, &state, &p);
        assert_abs_diff_eq!(a.p_e, 20.0 - p.p_tilde_f, epsilon = 1e-12);
        // Total deficit: export to zero, remainder is an uncoverable
        // shortfall (the transition demand cannot be shed).
        let b = compensate(&pl, &[1.0], 0.0, 0.0, &state, &p);
        assert_abs_diff_eq!(b.p_e, 0.0, epsilon = 0.0);
        assert!(b.balance_infeasible);
        assert_abs_diff_eq!(b.balance_shortfall_kw, p.p_tilde_f, epsilon = 1e-12);
    }

    #[test]
    fn charging_respects_tank_headroom() {
        let p = params();
        // Headroom flow = (1 - 0.97) * 400 / 0.25 = 48 kW, slightly below
        // the exact inflow at the planned 60 kW. The optimizer accepted the
        // plan on the interpolated curve; the applied power must back off
        // so the exact curve stays inside the tank.
        let state = PlantState::new(0.97, Mode::Soec, &p).unwrap();
        let phi_exact_60 = plant::g_el(60.0, &p).unwrap();
        assert!(phi_exact_60 > 48.0);
        let pl = plan0(Mode::Soec, 0.0, 60.0, 0.0, &p);
        let a = compensate(&pl, &[1.0], 60.0, 0.0, &state, &p);
        assert!(a.p_el < 60.0);
        assert!(a.soh_next <= p.h_max + 1e-12, "soh_next = {}", a.soh_next);
        // The freed generation went to export; nothing is lost.
        assert_abs_diff_eq!(
            a.p_res_used + a.curtailed_kw,
            60.0,
            epsilon = 1e-9
        );
    }

    #[test]
    fn perfect_flat_scenario_plans_without_recourse() {
        let p = params();
        let state = PlantState::new(0.5, Mode::Soec, &p).unwrap();
        let scen = flat(1, 3, 120.0, 180.0);
        let prices = vec![0.08, 0.09, 0.1];
        let out = plan_step(&state, &scen, &prices, &p, &cfg()).unwrap();
        for st in &out.plan.steps {
            for r in &st.recourse {
                assert!(r.total() < 1e-7, "recourse {r:?}");
            }
        }
        // Balance met exactly by the plan: export plus stack power equals
        // the scenario generation at every step.
        for st in &out.plan.steps {
            assert!((st.p_r + st.p_e - 180.0).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_generation_with_empty_tank_exports_nothing() {
        let p = params();
        let state = PlantState::new(0.0, Mode::Soec, &p).unwrap();
        let scen = flat(1, 2, 150.0, 0.0);
        let out = plan_step(&state, &scen, &[0.08, 0.08], &p, &cfg()).unwrap();
        let k0 = &out.plan.steps[0];
        assert_abs_diff_eq!(k0.p_e, 0.0, epsilon = 1e-9);
        // The forced minimum electrolysis load cannot be balanced: the
        // balance recourse absorbs it, while the load slack keeps the
        // demand-matching recourse at zero.
        assert!(k0.recourse[0].chi_plus > 1.0);
        assert!(k0.recourse[0].xi_plus.abs() < 1e-9);
        assert!(k0.recourse[0].xi_minus.abs() < 1e-9);
    }

    #[test]
    fn planning_is_deterministic() {
        let p = params();
        let state = PlantState::new(0.4, Mode::Sofc, &p).unwrap();
        let scen = flat(2, 4, 100.0, 60.0);
        let prices = vec![0.05, 0.06, 0.11, 0.04];
        let a = plan_step(&state, &scen, &prices, &p, &cfg()).unwrap();
        let b = plan_step(&state, &scen, &prices, &p, &cfg()).unwrap();
        assert_eq!(a.node_count, b.node_count);
        assert_eq!(a.plan.objective.to_bits(), b.plan.objective.to_bits());
        for (x, y) in a.plan.steps.iter().zip(&b.plan.steps) {
            assert_eq!(x.mode, y.mode);
            assert_eq!(x.p_e.to_bits(), y.p_e.to_bits());
        }
    }
}
