//! Economic dispatch toolkit for a small renewable energy community built
//! around a PV plant, a reversible solid-oxide cell stack with a hydrogen
//! tank, and an aggregated consumer.
//!
//! The crate provides the full planning pipeline:
//!
//! * [`plant`] — device physics: efficiency laws, tank dynamics, operating
//!   modes and the tariff model;
//! * [`forecaster`] — an online-growing discrete Markov chain over the joint
//!   (load, generation) plane, with stochastic path sampling;
//! * [`scenario`] — fast-forward scenario reduction under the transport
//!   distance;
//! * [`milp`] — a solver-neutral MILP representation plus an MPS file bridge;
//! * [`stage`] — the two-stage stochastic program built for one control step;
//! * [`simplex`] / [`solver`] — a dense bounded-variable simplex and an exact
//!   branch-and-bound solver, plus an external-solver bridge;
//! * [`mpc`] — the receding-horizon controller with out-of-loop forecast
//!   error compensation;
//! * [`sim`] — the closed-loop simulation harness with trace/KPI output.
//!
//! The `parallel` feature (on by default) runs path sampling and the
//! scenario-reduction distance matrix on a rayon pool; without it the same
//! entry points fall back to sequential loops with identical results.

pub mod forecaster;
pub mod milp;
pub mod mpc;
pub mod plant;
pub mod scenario;
pub mod series;
pub mod sim;
pub mod simplex;
pub mod solver;
pub mod stage;
pub mod synth;
