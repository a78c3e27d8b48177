//! Closed-loop simulation harness.
//!
//! Per quarter hour: sample forecast paths from the trained chain (or take
//! the actual future under perfect foresight), reduce them to the scenario
//! budget, plan over the horizon, apply the first step with compensation
//! against the measured values, advance the plant state, and account the
//! income. A no-storage baseline (export the generation up to the grid
//! limit, nothing else) is folded alongside every run for comparison.
//!
//! Steps are strictly sequential — the plant state carries over. Everything
//! is deterministic for a fixed seed except the wall-clock solve times
//! recorded per step.

use std::time::Instant;

use chrono::{DateTime, Utc};
use thiserror::Error;

use crate::forecaster::{DmcGraph, ForecastError, Observation};
use crate::mpc::{self, AppliedDecision, ControlError, ControllerConfig};
use crate::plant::{self, Mode, PlantParams, PlantState};
use crate::scenario::{self, ReduceError, ScenarioSet};
use crate::series::{format_timestamp, step, PowerSeries, PriceSeries};
use crate::solver::SolverOptions;
use crate::stage::{breakpoint_table, BuildError, CurveTag, Sos2Encoding};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Table(#[from] BuildError),
    #[error(transparent)]
    Forecast(#[from] ForecastError),
    #[error(transparent)]
    Reduce(#[from] ReduceError),
    #[error("step {index} ({timestamp}): {source}")]
    Step {
        index: usize,
        timestamp: String,
        source: ControlError,
        /// Trace of the steps completed before the failure.
        partial_trace: Vec<StepTrace>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForecastMode {
    /// Sample the trained chain and reduce to the scenario budget.
    Igsc,
    /// Single scenario equal to the actual future (testing/benchmarking).
    Perfect,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
    /// Horizon length in steps.
    pub horizon: usize,
    /// Scenario budget after reduction.
    pub scenario_count: usize,
    /// Paths sampled from the chain before reduction.
    pub sample_count: usize,
    pub seed: u64,
    pub params: PlantParams,
    /// Chain spawn threshold (normalized plane).
    pub tau: f64,
    /// Breakpoints per flow curve.
    pub breakpoints: usize,
    pub omega_plus: f64,
    pub omega_minus: f64,
    pub encoding: Sos2Encoding,
    pub solver: SolverOptions,
    pub rfc_enabled: bool,
    pub forecast: ForecastMode,
    pub initial_soh: f64,
    pub initial_mode: Mode,
}

impl RunConfig {
    /// Study-case defaults over a given window: 4 h horizon, 5 scenarios
    /// from 100 paths, compiled adjacency left to ordered-set branching.
    pub fn defaults(start: DateTime<Utc>, end: DateTime<Utc>) -> Self {
        Self {
            start,
            end,
            horizon: 16,
            scenario_count: 5,
            sample_count: 100,
            seed: 1,
            params: PlantParams::default(),
            tau: crate::forecaster::DEFAULT_TAU,
            breakpoints: 8,
            omega_plus: 1.0,
            omega_minus: 1.0,
            encoding: Sos2Encoding::Native,
            solver: SolverOptions::default(),
            rfc_enabled: true,
            forecast: ForecastMode::Igsc,
            initial_soh: 0.5,
            initial_mode: Mode::Soec,
        }
    }
}

/// One quarter-hour record of the closed loop.
#[derive(Debug, Clone)]
pub struct StepTrace {
    pub timestamp: DateTime<Utc>,
    /// Measured values.
    pub load_kw: f64,
    pub res_kw: f64,
    /// Probability-weighted first-step forecast.
    pub forecast_load_kw: f64,
    pub forecast_res_kw: f64,
    pub applied: AppliedDecision,
    /// Tank level after the step.
    pub soh: f64,
    pub income_eur: f64,
    pub solver_nodes: u64,
    pub solve_ms: f64,
}

#[derive(Debug, Clone)]
pub struct Kpi {
    pub steps: usize,
    pub total_income_eur: f64,
    /// Same window without the storage: export the generation up to the
    /// grid limit and self-consume against the actual load.
    pub baseline_income_eur: f64,
    pub income_delta_eur: f64,
    pub switch_count_tsoec: u64,
    pub switch_count_tsofc: u64,
    pub curtailed_energy_kwh: f64,
    pub mean_recourse_kw: f64,
    pub flagged_steps: usize,
    pub mean_solve_ms: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: Vec<StepTrace>,
    pub kpi: Kpi,
}

/// Neumaier-compensated sum.
fn csum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
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

/// Total realized income of a trace [EUR]; a pure fold.
pub fn kpi_income(trace: &[StepTrace]) -> f64 {
    csum(trace.iter().map(|s| s.income_eur))
}

fn grid_index(series_start: DateTime<Utc>, len: usize, t: DateTime<Utc>) -> Option<usize> {
    let delta = t - series_start;
    let quarter = step().num_seconds();
    if delta.num_seconds() < 0 || delta.num_seconds() % quarter != 0 {
        return None;
    }
    let idx = (delta.num_seconds() / quarter) as usize;
    (idx < len).then_some(idx)
}

/// Income of the no-storage operation over the run window.
fn baseline_income(config: &RunConfig, actuals: &PowerSeries, prices: &PriceSeries) -> f64 {
    let a0 = grid_index(actuals.start, actuals.len(), config.start).expect("validated");
    let p0 = grid_index(prices.start, prices.len(), config.start).expect("validated");
    let steps = run_steps(config);
    let p = &config.params;
    csum((0..steps).map(|i| {
        let pt = &actuals.points[a0 + i];
        let p_e = pt.res_kw.min(p.p_e_max);
        let p_ac = p_e.min(pt.load_kw);
        plant::income_step(p_ac, p_e, prices.values[p0 + i], p)
    }))
}

fn run_steps(config: &RunConfig) -> usize {
    ((config.end - config.start).num_seconds() / step().num_seconds()) as usize
}

fn validate(
    config: &RunConfig,
    history: Option<&PowerSeries>,
    actuals: &PowerSeries,
    prices: &PriceSeries,
) -> Result<(usize, usize), SimError> {
    let cfg_err = |msg: String| SimError::Config(msg);
    config
        .params
        .validate()
        .map_err(|e| cfg_err(e.to_string()))?;
    if config.end <= config.start {
        return Err(cfg_err("end must be after start".into()));
    }
    if config.horizon == 0 {
        return Err(cfg_err("horizon must be at least 1".into()));
    }
    if config.scenario_count == 0 || config.scenario_count > config.sample_count {
        return Err(cfg_err(format!(
            "scenario count {} must be in 1..={}",
            config.scenario_count, config.sample_count
        )));
    }
    if !(config.params.h_min..=config.params.h_max).contains(&config.initial_soh) {
        return Err(cfg_err(format!(
            "initial state of hydrogen {} outside bounds",
            config.initial_soh
        )));
    }
    let steps = run_steps(config);
    let a0 = grid_index(actuals.start, actuals.len(), config.start)
        .ok_or_else(|| cfg_err("actuals do not cover the start timestamp".into()))?;
    let needed_actuals = match config.forecast {
        ForecastMode::Perfect => steps + config.horizon,
        ForecastMode::Igsc => steps,
    };
    if a0 + needed_actuals > actuals.len() {
        return Err(cfg_err(format!(
            "actuals end before the run needs them ({} rows short)",
            a0 + needed_actuals - actuals.len()
        )));
    }
    let p0 = grid_index(prices.start, prices.len(), config.start)
        .ok_or_else(|| cfg_err("prices do not cover the start timestamp".into()))?;
    if p0 + steps - 1 + config.horizon > prices.len() {
        return Err(cfg_err("prices end before the last horizon".into()));
    }
    if config.forecast == ForecastMode::Igsc {
        match history {
            None => return Err(cfg_err("chain forecasting needs a history series".into())),
            Some(h) if h.is_empty() => {
                return Err(cfg_err("history series is empty".into()))
            }
            _ => {}
        }
    }
    Ok((a0, p0))
}

/// Run the closed loop. `history` trains the chain (and anchors the first
/// step) when chain forecasting is active; it may be `None` under perfect
/// foresight.
pub fn run(
    config: &RunConfig,
    history: Option<&PowerSeries>,
    actuals: &PowerSeries,
    prices: &PriceSeries,
) -> Result<RunOutput, SimError> {
    let (a0, p0) = validate(config, history, actuals, prices)?;
    let steps = run_steps(config);
    let p = &config.params;

    if !config.rfc_enabled {
        return run_without_storage(config, actuals, prices, a0, p0, steps);
    }

    let graph = match config.forecast {
        ForecastMode::Igsc => {
            let h = history.expect("validated");
            let mut g = DmcGraph::new(config.tau);
            for (i, pt) in h.points.iter().enumerate() {
                g.ingest(&Observation::at(pt.load_kw, pt.res_kw, h.timestamp(i)))?;
            }
            Some(g)
        }
        ForecastMode::Perfect => None,
    };
    let controller = ControllerConfig {
        table_el: breakpoint_table(CurveTag::El, config.breakpoints, p)?,
        table_f: breakpoint_table(CurveTag::F, config.breakpoints, p)?,
        omega_plus: config.omega_plus,
        omega_minus: config.omega_minus,
        encoding: config.encoding,
        solver: config.solver.clone(),
    };
    let mut state = PlantState::new(config.initial_soh, config.initial_mode, p)
        .map_err(|e| SimError::Config(e.to_string()))?;
    let mut trace: Vec<StepTrace> = Vec::with_capacity(steps);

    for i in 0..steps {
        let t = config.start + step() * i as i32;
        let idx = a0 + i;
        let actual = actuals.points[idx];

        let scenarios: ScenarioSet = match &graph {
            None => ScenarioSet::certain(
                actuals.points[idx..idx + config.horizon].to_vec(),
            ),
            Some(g) => {
                // Anchor on the latest completed measurement.
                let anchor = if i == 0 {
                    let h = history.expect("validated");
                    let last = h.points[h.len() - 1];
                    Observation::new(last.load_kw, last.res_kw)
                } else {
                    let prev = actuals.points[idx - 1];
                    Observation::new(prev.load_kw, prev.res_kw)
                };
                let paths = g.sample_paths(
                    &anchor,
                    config.horizon,
                    config.sample_count,
                    config.seed.wrapping_add(i as u64),
                )?;
                // Drop the anchor emission; the horizon starts now.
                let future: Vec<_> = paths.into_iter().map(|p| p[1..].to_vec()).collect();
                let weights = vec![1.0 / config.sample_count as f64; config.sample_count];
                scenario::reduce(&future, &weights, config.scenario_count)?
            }
        };

        let price_window = &prices.values[p0 + i..p0 + i + config.horizon];
        let t_solve = Instant::now();
        let outcome = mpc::plan_step(&state, &scenarios, price_window, p, &controller);
        let solve_ms = t_solve.elapsed().as_secs_f64() * 1e3;
        let outcome = match outcome {
            Ok(o) => o,
            Err(source) => {
                return Err(SimError::Step {
                    index: i,
                    timestamp: format_timestamp(t),
                    source,
                    partial_trace: trace,
                })
            }
        };

        let applied = mpc::compensate(
            &outcome.plan.steps[0],
            &scenarios.probabilities,
            actual.res_kw,
            actual.load_kw,
            &state,
            p,
        );
        let income = plant::income_step(applied.p_ac, applied.p_e, prices.values[p0 + i], p);
        let forecast0: (f64, f64) = scenarios
            .paths
            .iter()
            .zip(&scenarios.probabilities)
            .fold((0.0, 0.0), |acc, (path, pi)| {
                (acc.0 + pi * path[0].load_kw, acc.1 + pi * path[0].res_kw)
            });

        state.advance(applied.mode, applied.soh_next, p);
        trace.push(StepTrace {
            timestamp: t,
            load_kw: actual.load_kw,
            res_kw: actual.res_kw,
            forecast_load_kw: forecast0.0,
            forecast_res_kw: forecast0.1,
            soh: state.soh,
            income_eur: income,
            solver_nodes: outcome.node_count,
            solve_ms,
            applied,
        });
    }

    let kpi = build_kpi(config, &trace, actuals, prices);
    Ok(RunOutput { trace, kpi })
}

/// The storage-free comparison run: export generation up to the grid
/// limit; no planning, no hydrogen path.
fn run_without_storage(
    config: &RunConfig,
    actuals: &PowerSeries,
    prices: &PriceSeries,
    a0: usize,
    p0: usize,
    steps: usize,
) -> Result<RunOutput, SimError> {
    let p = &config.params;
    let mut trace = Vec::with_capacity(steps);
    for i in 0..steps {
        let t = config.start + step() * i as i32;
        let pt = actuals.points[a0 + i];
        let p_e = pt.res_kw.min(p.p_e_max);
        let p_ac = p_e.min(pt.load_kw);
        let applied = AppliedDecision {
            mode: config.initial_mode,
            p_e,
            p_el: 0.0,
            p_f: 0.0,
            p_r: 0.0,
            p_ac,
            p_res_used: p_e,
            curtailed_kw: pt.res_kw - p_e,
            phi_el: 0.0,
            phi_f: 0.0,
            soh_next: config.initial_soh,
            gamma: 0.0,
            recourse: Default::default(),
            balance_infeasible: false,
            balance_shortfall_kw: 0.0,
        };
        let income = plant::income_step(p_ac, p_e, prices.values[p0 + i], p);
        trace.push(StepTrace {
            timestamp: t,
            load_kw: pt.load_kw,
            res_kw: pt.res_kw,
            forecast_load_kw: pt.load_kw,
            forecast_res_kw: pt.res_kw,
            soh: config.initial_soh,
            income_eur: income,
            solver_nodes: 0,
            solve_ms: 0.0,
            applied,
        });
    }
    let kpi = build_kpi(config, &trace, actuals, prices);
    Ok(RunOutput { trace, kpi })
}

fn build_kpi(
    config: &RunConfig,
    trace: &[StepTrace],
    actuals: &PowerSeries,
    prices: &PriceSeries,
) -> Kpi {
    let total = kpi_income(trace);
    let baseline = baseline_income(config, actuals, prices);
    let p = &config.params;
    Kpi {
        steps: trace.len(),
        total_income_eur: total,
        baseline_income_eur: baseline,
        income_delta_eur: total - baseline,
        switch_count_tsoec: trace
            .iter()
            .filter(|s| s.applied.mode == Mode::TSoec)
            .count() as u64,
        switch_count_tsofc: trace
            .iter()
            .filter(|s| s.applied.mode == Mode::TSofc)
            .count() as u64,
        curtailed_energy_kwh: csum(trace.iter().map(|s| s.applied.curtailed_kw * p.delta_t)),
        mean_recourse_kw: if trace.is_empty() {
            0.0
        } else {
            csum(trace.iter().map(|s| s.applied.recourse.total())) / trace.len() as f64
        },
        flagged_steps: trace
            .iter()
            .filter(|s| s.applied.balance_infeasible)
            .count(),
        mean_solve_ms: if trace.is_empty() {
            0.0
        } else {
            trace.iter().map(|s| s.solve_ms).sum::<f64>() / trace.len() as f64
        },
    }
}

/// Trace CSV, one row per step:
/// `timestamp,p_load,p_res,p_e,p_el,p_f,p_r,p_ac,mode,soh,income_eur,xi_plus,xi_minus,chi_plus,chi_minus,solve_ms`.
pub fn write_trace_csv<W: std::io::Write>(trace: &[StepTrace], w: &mut W) -> std::io::Result<()> {
    writeln!(
        w,
        "timestamp,p_load,p_res,p_e,p_el,p_f,p_r,p_ac,mode,soh,income_eur,\
         xi_plus,xi_minus,chi_plus,chi_minus,solve_ms"
    )?;
    for s in trace {
        let a = &s.applied;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            format_timestamp(s.timestamp),
            s.load_kw,
            s.res_kw,
            a.p_e,
            a.p_el,
            a.p_f,
            a.p_r,
            a.p_ac,
            a.mode,
            s.soh,
            s.income_eur,
            a.recourse.xi_plus,
            a.recourse.xi_minus,
            a.recourse.chi_plus,
            a.recourse.chi_minus,
            s.solve_ms
        )?;
    }
    Ok(())
}

/// KPI summary as `key: value` lines.
pub fn write_kpi<W: std::io::Write>(kpi: &Kpi, w: &mut W) -> std::io::Result<()> {
    writeln!(w, "steps: {}", kpi.steps)?;
    writeln!(w, "total_income_eur: {:.4}", kpi.total_income_eur)?;
    writeln!(w, "baseline_income_eur: {:.4}", kpi.baseline_income_eur)?;
    writeln!(w, "income_delta_eur: {:.4}", kpi.income_delta_eur)?;
    writeln!(w, "switch_count_tsoec: {}", kpi.switch_count_tsoec)?;
    writeln!(w, "switch_count_tsofc: {}", kpi.switch_count_tsofc)?;
    writeln!(w, "curtailed_energy_kwh: {:.4}", kpi.curtailed_energy_kwh)?;
    writeln!(w, "mean_recourse_kw: {:.6}", kpi.mean_recourse_kw)?;
    writeln!(w, "flagged_steps: {}", kpi.flagged_steps)?;
    writeln!(w, "mean_solve_ms: {:.3}", kpi.mean_solve_ms)?;
    Ok(())
}
