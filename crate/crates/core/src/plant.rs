//! Reversible solid-oxide cell plant: efficiency laws, hydrogen tank
//! dynamics, operating-mode rules and the community tariff model.
//!
//! Conventions used throughout the crate:
//!
//! * powers are plant totals in kW, energies in kWh, tariffs in EUR/kWh;
//! * the stack efficiency laws are per-cell fits: the electrolysis threshold
//!   polynomial yields W per cell, while the linear electrolysis branch and
//!   the fuel-cell quadratic take kW per cell;
//! * hydrogen is accounted in kWh-equivalent; [`hydrogen_kg`] converts to
//!   mass for reporting only;
//! * tank flows are positive: `phi_el` into the tank (electrolysis),
//!   `phi_f` out of it (fuel cell).

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Electrolysis efficiency below the per-cell power threshold.
const ETA_EL_FLAT: f64 = 0.74;

/// Efficiencies are clamped into this interval so that the fuel-cell flow
/// `p / eta` stays finite outside the fitted range.
const ETA_FLOOR: f64 = 1e-6;

/// Slack applied to admissible-power range checks.
const RANGE_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum PlantError {
    #[error("power must be nonnegative, got {0} kW")]
    NegativePower(f64),
    #[error("power {value} kW outside admissible set {{0}} ∪ [{min}, {max}] kW")]
    PowerOutOfRange { value: f64, min: f64, max: f64 },
    #[error("{mode} mode is inconsistent with p_el={p_el} kW, p_f={p_f} kW")]
    ModePowerMismatch { mode: Mode, p_el: f64, p_f: f64 },
    #[error("state of hydrogen {0} outside [{1}, {2}]")]
    SohOutOfBounds(f64, f64, f64),
    #[error("invalid plant parameters: {0}")]
    InvalidParams(String),
}

/// Grid, stack, tank and tariff constants.
///
/// Defaults are the study-case values. `switch_window` is the length (in
/// quarter-hour steps) of the rolling window over which at most
/// `max_switches` transitions of each kind are allowed.
#[derive(Debug, Clone)]
pub struct PlantParams {
    /// Grid export limit [kW].
    pub p_e_max: f64,
    /// Electrolysis power range [kW].
    pub p_el_min: f64,
    pub p_el_max: f64,
    /// Fuel-cell power range [kW].
    pub p_f_min: f64,
    pub p_f_max: f64,
    /// Fixed power demand while transitioning towards electrolysis [kW].
    pub p_tilde_el: f64,
    /// Fixed power demand while transitioning towards fuel-cell mode [kW].
    pub p_tilde_f: f64,
    /// Tank capacity [kWh].
    pub e_h: f64,
    /// State-of-hydrogen bounds [p.u.].
    pub h_min: f64,
    pub h_max: f64,
    /// Number of cells in the stack.
    pub n_cells: u32,
    /// Stack temperature [K]; held constant.
    pub theta: f64,
    /// Step length [h].
    pub delta_t: f64,
    /// Maximum transitions of each kind per rolling window.
    pub max_switches: u32,
    /// Rolling window length [steps].
    pub switch_window: u32,
    /// Self-consumption incentive [EUR/kWh].
    pub c_m: f64,
    /// Grid-charge restitution [EUR/kWh].
    pub c_r: f64,
    /// Electrolysis threshold polynomial coefficients (W per cell).
    pub alpha: [f64; 3],
    /// Electrolysis efficiency branch coefficients (kW per cell).
    pub beta: [f64; 3],
}

impl Default for PlantParams {
    fn default() -> Self {
        Self {
            p_e_max: 340.0,
            p_el_min: 7.2,
            p_el_max: 160.0,
            p_f_min: 3.5,
            p_f_max: 40.0,
            p_tilde_el: 2.6,
            p_tilde_f: 1.3,
            e_h: 400.0,
            h_min: 0.0,
            h_max: 1.0,
            n_cells: 100,
            theta: 1123.0,
            delta_t: 0.25,
            max_switches: 3,
            switch_window: 16,
            c_m: 0.11,
            c_r: 0.009,
            alpha: [4.87e-4, 9.46e-2, 46.34],
            beta: [2.32e-4, 0.33, 7.7e-4],
        }
    }
}

impl PlantParams {
    pub fn validate(&self) -> Result<(), PlantError> {
        let check = |ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(PlantError::InvalidParams(msg.to_string()))
            }
        };
        check(self.p_el_min < self.p_el_max, "p_el_min < p_el_max required")?;
        check(self.p_f_min < self.p_f_max, "p_f_min < p_f_max required")?;
        check(
            0.0 <= self.h_min && self.h_min < self.h_max,
            "0 <= h_min < h_max required",
        )?;
        check(self.e_h > 0.0, "e_h must be positive")?;
        check(self.delta_t > 0.0, "delta_t must be positive")?;
        check(self.p_e_max > 0.0, "p_e_max must be positive")?;
        check(self.n_cells > 0, "n_cells must be positive")?;
        check(
            self.c_m >= 0.0 && self.c_r >= 0.0,
            "tariffs must be nonnegative",
        )?;
        check(self.max_switches >= 1, "max_switches >= 1 required")?;
        check(self.switch_window >= 1, "switch_window >= 1 required")?;
        check(
            self.p_tilde_el >= 0.0 && self.p_tilde_f >= 0.0,
            "transition demands must be nonnegative",
        )?;
        Ok(())
    }
}

/// Operating mode of the reversible stack. Exactly one mode is active at any
/// step; `TSoec`/`TSofc` are the transition steps taken when switching
/// direction, during which the stack only draws its fixed maintenance power.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Soec,
    Sofc,
    TSoec,
    TSofc,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Soec, Mode::Sofc, Mode::TSoec, Mode::TSofc];

    pub fn is_transition(self) -> bool {
        matches!(self, Mode::TSoec | Mode::TSofc)
    }

    /// Position in the canonical [SOEC, SOFC, T_SOEC, T_SOFC] order.
    pub fn index(self) -> usize {
        match self {
            Mode::Soec => 0,
            Mode::Sofc => 1,
            Mode::TSoec => 2,
            Mode::TSofc => 3,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Mode::Soec => "SOEC",
            Mode::Sofc => "SOFC",
            Mode::TSoec => "T_SOEC",
            Mode::TSofc => "T_SOFC",
        };
        f.write_str(s)
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "SOEC" => Ok(Mode::Soec),
            "SOFC" => Ok(Mode::Sofc),
            "T_SOEC" => Ok(Mode::TSoec),
            "T_SOFC" => Ok(Mode::TSofc),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

/// Current plant state carried between control steps: tank level, the mode
/// applied in the previous step, and the recent mode history feeding the
/// rolling switch limit (at most `switch_window - 1` entries, newest last).
#[derive(Debug, Clone)]
pub struct PlantState {
    pub soh: f64,
    pub mode: Mode,
    history: VecDeque<Mode>,
}

impl PlantState {
    pub fn new(soh: f64, mode: Mode, params: &PlantParams) -> Result<Self, PlantError> {
        if soh < params.h_min - RANGE_TOL || soh > params.h_max + RANGE_TOL {
            return Err(PlantError::SohOutOfBounds(soh, params.h_min, params.h_max));
        }
        let mut history = VecDeque::new();
        history.push_back(mode);
        Ok(Self { soh, mode, history })
    }

    /// Record the decision applied over the step just completed.
    pub fn advance(&mut self, mode: Mode, soh: f64, params: &PlantParams) {
        let cap = params.switch_window.saturating_sub(1) as usize;
        while self.history.len() >= cap.max(1) {
            self.history.pop_front();
        }
        if cap > 0 {
            self.history.push_back(mode);
        }
        self.mode = mode;
        self.soh = soh;
    }

    /// Applied modes of the most recent steps, oldest first.
    pub fn history(&self) -> impl Iterator<Item = Mode> + '_ {
        self.history.iter().copied()
    }
}

/// Per-cell power threshold [W] below which the electrolysis efficiency is
/// flat at 0.74.
pub fn eta_el_threshold_w(theta: f64, params: &PlantParams) -> f64 {
    let [a1, a2, a3] = params.alpha;
    a1 * theta * theta - a2 * theta + a3
}

fn clamp_eta(eta: f64) -> f64 {
    eta.min(1.0).max(ETA_FLOOR)
}

/// Electrolysis efficiency at a per-cell power [kW] and temperature [K].
pub fn eta_el(p_per_cell_kw: f64, theta: f64, params: &PlantParams) -> Result<f64, PlantError> {
    if !(p_per_cell_kw >= 0.0) {
        return Err(PlantError::NegativePower(p_per_cell_kw));
    }
    let eta = if p_per_cell_kw * 1e3 <= eta_el_threshold_w(theta, params) {
        ETA_EL_FLAT
    } else {
        let [b1, b2, b3] = params.beta;
        b1 * theta * p_per_cell_kw - b2 * p_per_cell_kw + b3 * theta
    };
    Ok(clamp_eta(eta))
}

/// Fuel-cell efficiency at a per-cell power [kW] and temperature [K].
/// The quadratic fit is fixed; `_params` is kept for signature symmetry
/// with [`eta_el`].
pub fn eta_f(p_per_cell_kw: f64, theta: f64, _params: &PlantParams) -> Result<f64, PlantError> {
    if !(p_per_cell_kw >= 0.0) {
        return Err(PlantError::NegativePower(p_per_cell_kw));
    }
    let x = p_per_cell_kw;
    let eta = 8.06e-3 * theta * x - 8.89 * x + 1.85e-2 * theta
        - 9.29e-1 * x * x
        - 8.95e-6 * theta * theta
        - 8.88;
    Ok(clamp_eta(eta))
}

fn check_dispatch_power(p: f64, min: f64, max: f64) -> Result<(), PlantError> {
    if p == 0.0 || (p >= min - RANGE_TOL && p <= max + RANGE_TOL) {
        Ok(())
    } else {
        Err(PlantError::PowerOutOfRange {
            value: p,
            min,
            max,
        })
    }
}

/// Tank inflow [kW] produced by electrolysis at plant power `p_el` [kW].
pub fn g_el(p_el: f64, params: &PlantParams) -> Result<f64, PlantError> {
    check_dispatch_power(p_el, params.p_el_min, params.p_el_max)?;
    if p_el == 0.0 {
        return Ok(0.0);
    }
    let eta = eta_el(p_el / f64::from(params.n_cells), params.theta, params)?;
    Ok(eta * p_el)
}

/// Tank outflow [kW] consumed by the fuel cell to produce `p_f` [kW].
pub fn g_f(p_f: f64, params: &PlantParams) -> Result<f64, PlantError> {
    check_dispatch_power(p_f, params.p_f_min, params.p_f_max)?;
    if p_f == 0.0 {
        return Ok(0.0);
    }
    let eta = eta_f(p_f / f64::from(params.n_cells), params.theta, params)?;
    Ok(p_f / eta)
}

/// One-step state-of-hydrogen update. No clamping: keeping the result inside
/// `[h_min, h_max]` is the caller's constraint.
pub fn soh_step(h: f64, phi_el: f64, phi_f: f64, params: &PlantParams) -> f64 {
    h + params.delta_t / params.e_h * (phi_el - phi_f)
}

/// Signed power exchanged by the stack: positive when absorbing, negative
/// when generating. Powers must be zero unless the matching mode is active.
pub fn rfc_power(mode: Mode, p_el: f64, p_f: f64, params: &PlantParams) -> Result<f64, PlantError> {
    let consistent = match mode {
        Mode::Soec => p_f.abs() <= RANGE_TOL,
        Mode::Sofc => p_el.abs() <= RANGE_TOL,
        Mode::TSoec | Mode::TSofc => p_el.abs() <= RANGE_TOL && p_f.abs() <= RANGE_TOL,
    };
    if !consistent {
        return Err(PlantError::ModePowerMismatch { mode, p_el, p_f });
    }
    Ok(match mode {
        Mode::Soec => p_el,
        Mode::Sofc => -p_f,
        Mode::TSoec => params.p_tilde_el,
        Mode::TSofc => params.p_tilde_f,
    })
}

/// Mode succession rule: switching direction requires the matching
/// transition step, and a transition step must complete into its target.
pub fn legal_transition(prev: Mode, next: Mode) -> bool {
    match prev {
        Mode::Soec => matches!(next, Mode::Soec | Mode::TSofc),
        Mode::Sofc => matches!(next, Mode::Sofc | Mode::TSoec),
        Mode::TSoec => next == Mode::Soec,
        Mode::TSofc => next == Mode::Sofc,
    }
}

/// Manager income over one step [EUR]: incentive plus grid-charge
/// restitution on the self-consumed power, plus the sell-back revenue on the
/// exported power at price `c_e` [EUR/kWh].
pub fn income_step(p_ac: f64, p_e: f64, c_e: f64, params: &PlantParams) -> f64 {
    debug_assert!(p_ac >= -RANGE_TOL && p_ac <= p_e + RANGE_TOL);
    params.delta_t * ((params.c_m + params.c_r) * p_ac + c_e * p_e)
}

/// kWh-equivalent to kilograms of hydrogen (1 MWh = 30 kg). Reporting only.
pub fn hydrogen_kg(kwh: f64) -> f64 {
    kwh * 30.0 / 1000.0
}
