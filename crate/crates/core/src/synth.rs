//! Built-in synthetic data: a daily half-sine PV profile, a two-level
//! weekday/weekend industrial load, and a repeating daily price shape.
//!
//! The generators are seeded and fully deterministic, so the shipped CSV
//! files can be regenerated bit-identically and the test suites can build
//! their fixtures in-process.

use chrono::{DateTime, Datelike, Timelike, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::series::{step, PowerPoint, PowerSeries, PriceSeries};

/// Nameplate PV power [kW].
pub const PV_NOMINAL_KW: f64 = 150.0;
/// Nameplate aggregated demand [kW].
pub const LOAD_NOMINAL_KW: f64 = 163.0;

/// Hourly sell-back price shape [EUR/kWh], repeated daily. Spans the
/// 0.03..0.12 band with a morning ridge and an evening peak.
const PRICE_SHAPE: [f64; 24] = [
    0.040, 0.036, 0.033, 0.030, 0.031, 0.035, 0.045, 0.060, 0.075, 0.085, 0.080, 0.070, 0.060,
    0.055, 0.052, 0.055, 0.065, 0.080, 0.100, 0.120, 0.110, 0.085, 0.060, 0.048,
];

fn hour_fraction(t: DateTime<Utc>) -> f64 {
    f64::from(t.hour()) + f64::from(t.minute()) / 60.0
}

fn is_weekend(t: DateTime<Utc>) -> bool {
    t.weekday().number_from_monday() >= 6
}

fn pv_clear_sky(h: f64) -> f64 {
    if (6.0..=18.0).contains(&h) {
        PV_NOMINAL_KW * (std::f64::consts::PI * (h - 6.0) / 12.0).sin()
    } else {
        0.0
    }
}

fn load_shape(t: DateTime<Utc>) -> f64 {
    let h = hour_fraction(t);
    let (night, day) = if is_weekend(t) { (45.0, 85.0) } else { (60.0, LOAD_NOMINAL_KW) };
    // Morning ramp 7-9, evening ramp 17-20.
    if h < 7.0 {
        night
    } else if h < 9.0 {
        night + (day - night) * (h - 7.0) / 2.0
    } else if h < 17.0 {
        day
    } else if h < 20.0 {
        day + (night - day) * (h - 17.0) / 3.0
    } else {
        night
    }
}

/// Joint load/PV series of `days` days starting at `start`, with seeded
/// multiplicative noise.
pub fn synthetic_power(start: DateTime<Utc>, days: u32, seed: u64) -> PowerSeries {
    let mut load_rng = ChaCha8Rng::seed_from_u64(seed);
    load_rng.set_stream(0);
    let mut pv_rng = ChaCha8Rng::seed_from_u64(seed);
    pv_rng.set_stream(1);

    let n = days as usize * 96;
    let mut points = Vec::with_capacity(n);
    for i in 0..n {
        let t = start + step() * i as i32;
        let zl: f64 = load_rng.sample(StandardNormal);
        let zp: f64 = pv_rng.sample(StandardNormal);
        let load = (load_shape(t) * (1.0 + 0.03 * zl)).max(0.0);
        let pv = (pv_clear_sky(hour_fraction(t)) * (1.0 + 0.08 * zp)).max(0.0);
        points.push(PowerPoint {
            load_kw: load,
            res_kw: pv,
        });
    }
    PowerSeries { start, points }
}

/// Deterministic daily price profile of `days` days starting at `start`.
pub fn synthetic_prices(start: DateTime<Utc>, days: u32) -> PriceSeries {
    let n = days as usize * 96;
    let values = (0..n)
        .map(|i| PRICE_SHAPE[(start + step() * i as i32).hour() as usize])
        .collect();
    PriceSeries { start, values }
}
