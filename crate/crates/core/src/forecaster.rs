//! Online-growing discrete Markov chain over the joint (load, generation)
//! plane, trained one observation at a time and sampled for stochastic
//! forecast paths.
//!
//! Each incoming observation goes through four steps: match the two nearest
//! states, optionally spawn a new state at the observation, fold the
//! observation into the assigned state's running moments (mean first, then
//! variance and covariance against the updated mean), and count the
//! transition edge from the previously assigned state.
//!
//! Distances and the spawn threshold `tau` live on a normalized plane: both
//! variables are affinely mapped to [0, 1] by the running min/max of the
//! training data. State moments are kept in raw kW.
//!
//! Training is strictly sequential — the order of observations defines the
//! chain. Sampling is read-only; each path owns a random stream derived
//! from `(seed, path index)`, so path sets are reproducible and identical
//! whether sampled sequentially or on a thread pool.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};

use chrono::{DateTime, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::series::PowerPoint;

pub const DEFAULT_TAU: f64 = 0.1;

#[derive(Debug, Error)]
pub enum ForecastError {
    #[error("observation must be finite and nonnegative: load={0}, res={1}")]
    BadObservation(f64, f64),
    #[error("the chain has no states")]
    EmptyGraph,
    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("graph file line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

fn perr<T>(line: usize, msg: impl Into<String>) -> Result<T, ForecastError> {
    Err(ForecastError::Parse {
        line,
        msg: msg.into(),
    })
}

/// One joint measurement. The timestamp is carried for bookkeeping; the
/// chain only uses arrival order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub load_kw: f64,
    pub res_kw: f64,
    pub timestamp: Option<DateTime<Utc>>,
}

impl Observation {
    pub fn new(load_kw: f64, res_kw: f64) -> Self {
        Self {
            load_kw,
            res_kw,
            timestamp: None,
        }
    }

    pub fn at(load_kw: f64, res_kw: f64, timestamp: DateTime<Utc>) -> Self {
        Self {
            load_kw,
            res_kw,
            timestamp: Some(timestamp),
        }
    }

    fn raw(&self) -> [f64; 2] {
        [self.load_kw, self.res_kw]
    }
}

/// A chain state: running mean, per-variable variance, covariance and the
/// number of observations assigned so far.
#[derive(Debug, Clone, PartialEq)]
pub struct DmcState {
    pub mean: [f64; 2],
    pub variance: [f64; 2],
    pub covariance: f64,
    pub count: u64,
}

#[derive(Debug, Clone)]
pub struct DmcGraph {
    states: Vec<DmcState>,
    /// Outgoing transition counts per state, keyed by target id.
    edges: Vec<BTreeMap<usize, u64>>,
    last_state: Option<usize>,
    tau: f64,
    /// Running (min, max) of each variable over the training data.
    bounds: Option<[(f64, f64); 2]>,
}

impl DmcGraph {
    pub fn new(tau: f64) -> Self {
        Self {
            states: Vec::new(),
            edges: Vec::new(),
            last_state: None,
            tau,
            bounds: None,
        }
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn states(&self) -> &[DmcState] {
        &self.states
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.iter().map(BTreeMap::len).sum()
    }

    pub fn edge_count(&self, from: usize, to: usize) -> u64 {
        self.edges
            .get(from)
            .and_then(|m| m.get(&to))
            .copied()
            .unwrap_or(0)
    }

    /// Outgoing transition distribution of a state, derived on demand from
    /// the integer edge counts. Empty for dead-end states.
    pub fn transition_probabilities(&self, state: usize) -> Vec<(usize, f64)> {
        let total: u64 = self.edges[state].values().sum();
        if total == 0 {
            return Vec::new();
        }
        self.edges[state]
            .iter()
            .filter(|(_, &c)| c > 0)
            .map(|(&to, &c)| (to, c as f64 / total as f64))
            .collect()
    }

    fn normalize(&self, raw: [f64; 2]) -> [f64; 2] {
        let bounds = self.bounds.expect("normalization requires training data");
        let map = |v: f64, (lo, hi): (f64, f64)| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 };
        [map(raw[0], bounds[0]), map(raw[1], bounds[1])]
    }

    fn normalized_mean(&self, state: usize) -> [f64; 2] {
        self.normalize(self.states[state].mean)
    }

    fn check(obs: &Observation) -> Result<(), ForecastError> {
        let [l, r] = obs.raw();
        if !l.is_finite() || !r.is_finite() || l < 0.0 || r < 0.0 {
            return Err(ForecastError::BadObservation(l, r));
        }
        Ok(())
    }

    /// The two states nearest to the observation on the normalized plane,
    /// ties broken towards the lower state id.
    pub fn match_states(&self, obs: &Observation) -> Result<(usize, Option<usize>), ForecastError> {
        Self::check(obs)?;
        if self.states.is_empty() {
            return Err(ForecastError::EmptyGraph);
        }
        let o = self.normalize(obs.raw());
        let mut first: Option<(usize, f64)> = None;
        let mut second: Option<(usize, f64)> = None;
        for id in 0..self.states.len() {
            let m = self.normalized_mean(id);
            let d = dist2(o, m);
            match first {
                None => first = Some((id, d)),
                Some((_, fd)) if d < fd => {
                    second = first;
                    first = Some((id, d));
                }
                _ => match second {
                    None => second = Some((id, d)),
                    Some((_, sd)) if d < sd => second = Some((id, d)),
                    _ => {}
                },
            }
        }
        Ok((first.unwrap().0, second.map(|(id, _)| id)))
    }

    /// Spawn test: the observation must lie strictly outside the circle
    /// whose diameter joins the two matched states, and farther than `tau`
    /// from the nearest one. With a single state only the `tau` test
    /// applies. All on the normalized plane.
    pub fn should_spawn(&self, obs: &Observation, first: usize, second: Option<usize>) -> bool {
        let o = self.normalize(obs.raw());
        let f = self.normalized_mean(first);
        if dist2(o, f).sqrt() <= self.tau {
            return false;
        }
        match second {
            None => true,
            Some(s) => {
                let s = self.normalized_mean(s);
                let center = [(f[0] + s[0]) / 2.0, (f[1] + s[1]) / 2.0];
                let radius2 = dist2(f, s) / 4.0;
                dist2(o, center) > radius2
            }
        }
    }

    /// Fold one observation into the chain; returns the id of the state the
    /// observation was assigned to.
    pub fn ingest(&mut self, obs: &Observation) -> Result<usize, ForecastError> {
        Self::check(obs)?;
        let raw = obs.raw();
        self.bounds = Some(match self.bounds {
            None => [(raw[0], raw[0]), (raw[1], raw[1])],
            Some(b) => [
                (b[0].0.min(raw[0]), b[0].1.max(raw[0])),
                (b[1].0.min(raw[1]), b[1].1.max(raw[1])),
            ],
        });

        if self.states.is_empty() {
            self.push_state(raw);
            self.last_state = Some(0);
            return Ok(0);
        }

        let (first, second) = self.match_states(obs)?;
        let assigned = if self.should_spawn(obs, first, second) {
            let id = self.push_state(raw);
            // Topological link from the nearest state; it gains probability
            // mass only from observed transitions.
            self.edges[first].entry(id).or_insert(0);
            id
        } else {
            self.adapt_weights(first, raw);
            first
        };
        if let Some(prev) = self.last_state {
            *self.edges[prev].entry(assigned).or_insert(0) += 1;
        }
        self.last_state = Some(assigned);
        Ok(assigned)
    }

    fn push_state(&mut self, raw: [f64; 2]) -> usize {
        self.states.push(DmcState {
            mean: raw,
            variance: [0.0, 0.0],
            covariance: 0.0,
            count: 1,
        });
        self.edges.push(BTreeMap::new());
        self.states.len() - 1
    }

    /// Running-moment update: mean first, then variance and covariance
    /// against the updated mean.
    fn adapt_weights(&mut self, id: usize, raw: [f64; 2]) {
        let st = &mut self.states[id];
        let n = st.count as f64;
        for i in 0..2 {
            st.mean[i] = (st.mean[i] * n + raw[i]) / (n + 1.0);
        }
        let d = [raw[0] - st.mean[0], raw[1] - st.mean[1]];
        for i in 0..2 {
            st.variance[i] = (st.variance[i] * n + d[i] * d[i]) / (n + 1.0);
        }
        st.covariance = (st.covariance * n + d[0] * d[1]) / (n + 1.0);
        st.count += 1;
    }

    /// Sample `n_paths` joint paths of length `horizon + 1`, starting from
    /// the state matched to `current`. Entry 0 is the anchor state's
    /// emission; entries `1..=horizon` follow the chain. Dead-end states
    /// self-loop. Deterministic for a fixed seed.
    pub fn sample_paths(
        &self,
        current: &Observation,
        horizon: usize,
        n_paths: usize,
        seed: u64,
    ) -> Result<Vec<Vec<PowerPoint>>, ForecastError> {
        #[cfg(feature = "parallel")]
        {
            self.sample_paths_par(current, horizon, n_paths, seed)
        }
        #[cfg(not(feature = "parallel"))]
        {
            self.sample_paths_seq(current, horizon, n_paths, seed)
        }
    }

    pub fn sample_paths_seq(
        &self,
        current: &Observation,
        horizon: usize,
        n_paths: usize,
        seed: u64,
    ) -> Result<Vec<Vec<PowerPoint>>, ForecastError> {
        let anchor = self.sampling_anchor(current, horizon)?;
        Ok((0..n_paths)
            .map(|i| self.walk(anchor, horizon, seed, i as u64))
            .collect())
    }

    #[cfg(feature = "parallel")]
    pub fn sample_paths_par(
        &self,
        current: &Observation,
        horizon: usize,
        n_paths: usize,
        seed: u64,
    ) -> Result<Vec<Vec<PowerPoint>>, ForecastError> {
        use rayon::prelude::*;
        let anchor = self.sampling_anchor(current, horizon)?;
        Ok((0..n_paths)
            .into_par_iter()
            .map(|i| self.walk(anchor, horizon, seed, i as u64))
            .collect())
    }

    fn sampling_anchor(
        &self,
        current: &Observation,
        horizon: usize,
    ) -> Result<usize, ForecastError> {
        if horizon == 0 {
            return Err(ForecastError::ZeroHorizon);
        }
        Ok(self.match_states(current)?.0)
    }

    fn walk(&self, anchor: usize, horizon: usize, seed: u64, path_index: u64) -> Vec<PowerPoint> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(path_index);
        let mut path = Vec::with_capacity(horizon + 1);
        let mut state = anchor;
        for step in 0..=horizon {
            path.push(self.emit(state, &mut rng));
            if step < horizon {
                state = self.next_state(state, &mut rng);
            }
        }
        path
    }

    /// State emission: mean plus a bivariate normal draw with the state's
    /// (repaired) covariance matrix, clamped to nonnegative powers.
    fn emit(&self, state: usize, rng: &mut ChaCha8Rng) -> PowerPoint {
        let st = &self.states[state];
        let [v1, v2] = st.variance;
        // Shrink the covariance towards zero until the 2x2 moment matrix is
        // positive semidefinite.
        let cap = (v1 * v2).sqrt();
        let rho = st.covariance.clamp(-cap, cap);
        let l11 = v1.max(0.0).sqrt();
        let l21 = if l11 > 0.0 { rho / l11 } else { 0.0 };
        let l22 = (v2 - l21 * l21).max(0.0).sqrt();
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        PowerPoint {
            load_kw: (st.mean[0] + l11 * z1).max(0.0),
            res_kw: (st.mean[1] + l21 * z1 + l22 * z2).max(0.0),
        }
    }

    fn next_state(&self, state: usize, rng: &mut ChaCha8Rng) -> usize {
        let total: u64 = self.edges[state].values().sum();
        if total == 0 {
            return state; // dead end: self-loop
        }
        let mut pick = rng.gen_range(0..total);
        for (&to, &c) in &self.edges[state] {
            if pick < c {
                return to;
            }
            pick -= c;
        }
        state
    }

    /// Versioned plain-text serialization; see `docs/formats.md`.
    pub fn save<W: Write>(&self, w: &mut W) -> io::Result<()> {
        writeln!(w, "dmc-graph v1")?;
        writeln!(w, "tau {}", self.tau)?;
        if let Some(b) = self.bounds {
            writeln!(w, "bounds {} {} {} {}", b[0].0, b[0].1, b[1].0, b[1].1)?;
        }
        match self.last_state {
            Some(id) => writeln!(w, "last_state {id}")?,
            None => writeln!(w, "last_state -")?,
        }
        writeln!(w, "states {}", self.states.len())?;
        for (id, s) in self.states.iter().enumerate() {
            writeln!(
                w,
                "{id} {} {} {} {} {} {}",
                s.mean[0], s.mean[1], s.variance[0], s.variance[1], s.covariance, s.count
            )?;
        }
        writeln!(w, "edges {}", self.n_edges())?;
        for (from, targets) in self.edges.iter().enumerate() {
            for (&to, &count) in targets {
                writeln!(w, "{from} {to} {count}")?;
            }
        }
        Ok(())
    }

    pub fn load<R: BufRead>(reader: R) -> Result<Self, ForecastError> {
        let mut lines = reader.lines().enumerate();
        let mut next = || -> Result<(usize, String), ForecastError> {
            match lines.next() {
                Some((i, l)) => Ok((i + 1, l?)),
                None => perr(0, "unexpected end of file"),
            }
        };
        let (ln, header) = next()?;
        if header.trim() != "dmc-graph v1" {
            return perr(ln, "expected header `dmc-graph v1`");
        }
        let (ln, tau_line) = next()?;
        let tau = match tau_line.split_whitespace().collect::<Vec<_>>()[..] {
            ["tau", v] => v
                .parse()
                .or_else(|_| perr(ln, format!("bad tau value `{v}`")))?,
            _ => return perr(ln, "expected `tau <value>`"),
        };
        let mut graph = DmcGraph::new(tau);

        let (ln, line) = next()?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        let (ln, line) = if toks.first() == Some(&"bounds") {
            if toks.len() != 5 {
                return perr(ln, "expected `bounds <4 values>`");
            }
            let mut v = [0.0f64; 4];
            for (i, t) in toks[1..].iter().enumerate() {
                v[i] = t
                    .parse()
                    .or_else(|_| perr(ln, format!("bad bounds value `{t}`")))?;
            }
            graph.bounds = Some([(v[0], v[1]), (v[2], v[3])]);
            next()?
        } else {
            (ln, line)
        };

        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks[..] {
            ["last_state", "-"] => graph.last_state = None,
            ["last_state", id] => {
                graph.last_state =
                    Some(id.parse().or_else(|_| perr(ln, "bad last_state id"))?)
            }
            _ => return perr(ln, "expected `last_state <id|->`"),
        }

        let (ln, line) = next()?;
        let n_states: usize = match line.split_whitespace().collect::<Vec<_>>()[..] {
            ["states", n] => n.parse().or_else(|_| perr(ln, "bad state count"))?,
            _ => return perr(ln, "expected `states <count>`"),
        };
        for k in 0..n_states {
            let (ln, line) = next()?;
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() != 7 {
                return perr(ln, "state lines are `id mean1 mean2 var1 var2 cov count`");
            }
            let id: usize = toks[0].parse().or_else(|_| perr(ln, "bad state id"))?;
            if id != k {
                return perr(ln, format!("state ids must be dense, expected {k}"));
            }
            let mut f = [0.0f64; 5];
            for (i, t) in toks[1..6].iter().enumerate() {
                f[i] = t
                    .parse()
                    .or_else(|_| perr(ln, format!("bad state field `{t}`")))?;
            }
            let count: u64 = toks[6].parse().or_else(|_| perr(ln, "bad state count"))?;
            if count == 0 {
                return perr(ln, "state count must be at least 1");
            }
            graph.states.push(DmcState {
                mean: [f[0], f[1]],
                variance: [f[2], f[3]],
                covariance: f[4],
                count,
            });
            graph.edges.push(BTreeMap::new());
        }
        let (ln, line) = next()?;
        let n_edges: usize = match line.split_whitespace().collect::<Vec<_>>()[..] {
            ["edges", n] => n.parse().or_else(|_| perr(ln, "bad edge count"))?,
            _ => return perr(ln, "expected `edges <count>`"),
        };
        for _ in 0..n_edges {
            let (ln, line) = next()?;
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() != 3 {
                return perr(ln, "edge lines are `from to count`");
            }
            let from: usize = toks[0].parse().or_else(|_| perr(ln, "bad edge source"))?;
            let to: usize = toks[1].parse().or_else(|_| perr(ln, "bad edge target"))?;
            let count: u64 = toks[2].parse().or_else(|_| perr(ln, "bad edge weight"))?;
            if from >= n_states || to >= n_states {
                return perr(ln, "edge endpoint out of range");
            }
            graph.edges[from].insert(to, count);
        }
        if let Some(id) = graph.last_state {
            if id >= n_states {
                return perr(0, "last_state out of range");
            }
        }
        Ok(graph)
    }
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn obs(load: f64, res: f64) -> Observation {
        Observation::new(load, res)
    }

    #[test]
    fn bootstrap_creates_one_state_without_edges() {
        let mut g = DmcGraph::new(DEFAULT_TAU);
        g.ingest(&obs(5.0, 3.0)).unwrap();
        assert_eq!(g.n_states(), 1);
        assert_eq!(g.states()[0].mean, [5.0, 3.0]);
        assert_eq!(g.states()[0].count, 1);
        assert_eq!(g.n_edges(), 0);
    }

    #[test]
    fn repeated_observation_keeps_zero_variance() {
        let mut g = DmcGraph::new(DEFAULT_TAU);
        g.ingest(&obs(4.0, 4.0)).unwrap();
        g.ingest(&obs(4.0, 4.0)).unwrap();
        assert_eq!(g.n_states(), 1);
        let s = &g.states()[0];
        assert_eq!(s.count, 2);
        assert_eq!(s.mean, [4.0, 4.0]);
        assert_eq!(s.variance, [0.0, 0.0]);
        assert_eq!(g.edge_count(0, 0), 1); // observed self transition
    }

    #[test]
    fn moment_update_uses_the_updated_mean() {
        // 1-D view: second variable pinned, first goes 4 -> 6.
        let mut g = DmcGraph::new(10.0); // large tau: never spawn
        g.ingest(&obs(4.0, 1.0)).unwrap();
        g.ingest(&obs(6.0, 1.0)).unwrap();
        let s = &g.states()[0];
        assert_abs_diff_eq!(s.mean[0], 5.0, epsilon = 0.0);
        assert_abs_diff_eq!(s.variance[0], 0.5, epsilon = 0.0);
        assert_abs_diff_eq!(s.variance[1], 0.0, epsilon = 0.0);
        assert_abs_diff_eq!(s.covariance, 0.0, epsilon = 0.0);
    }

    #[test]
    fn match_orders_by_distance_with_id_tie_break() {
        let mut g = DmcGraph::new(1e-6);
        g.ingest(&obs(0.0, 0.0)).unwrap();
        g.ingest(&obs(10.0, 10.0)).unwrap();
        let (f, s) = g.match_states(&obs(1.0, 1.0)).unwrap();
        assert_eq!((f, s), (0, Some(1)));
        // Equidistant: lower id wins.
        let (f, _) = g.match_states(&obs(5.0, 5.0)).unwrap();
        assert_eq!(f, 0);
    }

    #[test]
    fn single_state_has_no_second_match() {
        let mut g = DmcGraph::new(DEFAULT_TAU);
        g.ingest(&obs(2.0, 2.0)).unwrap();
        let (f, s) = g.match_states(&obs(1.0, 1.0)).unwrap();
        assert_eq!((f, s), (0, None));
    }

    #[test]
    fn spawn_requires_strictly_outside_the_diameter_circle() {
        let mut g = DmcGraph::new(0.05);
        g.ingest(&obs(0.0, 0.0)).unwrap();
        g.ingest(&obs(10.0, 0.0)).unwrap();
        // Normalized plane: states at (0, 0) and (1, 0) (the second variable
        // is degenerate and maps to 0); circle center (0.5, 0), radius 0.5.
        // Midpoint of the diameter: strictly inside.
        assert!(!g.should_spawn(&obs(5.0, 0.0), 0, Some(1)));
        // Exactly on the boundary: "outside" is strict, so no spawn.
        assert!(!g.should_spawn(&obs(10.0, 0.0), 1, Some(0)));
        // Same coordinates as the matched state: distance zero <= tau.
        assert!(!g.should_spawn(&obs(0.0, 0.0), 0, Some(1)));
        // Far beyond both tests.
        assert!(g.should_spawn(&obs(20.0, 0.0), 1, Some(0)));
    }

    #[test]
    fn spawned_state_copies_the_observation() {
        let mut g = DmcGraph::new(0.01);
        g.ingest(&obs(0.0, 0.0)).unwrap();
        g.ingest(&obs(100.0, 50.0)).unwrap();
        assert_eq!(g.n_states(), 2);
        assert_eq!(g.states()[1].mean, [100.0, 50.0]);
        assert_eq!(g.states()[1].count, 1);
        assert_eq!(g.states()[1].variance, [0.0, 0.0]);
        // Observed transition 0 -> 1 from edge adaptation.
        assert_eq!(g.edge_count(0, 1), 1);
    }

    #[test]
    fn counts_total_matches_observations() {
        let mut g = DmcGraph::new(DEFAULT_TAU);
        let data = [
            (5.0, 1.0),
            (100.0, 3.0),
            (5.5, 1.2),
            (98.0, 2.0),
            (5.2, 0.8),
            (50.0, 40.0),
        ];
        for (l, r) in data {
            g.ingest(&obs(l, r)).unwrap();
        }
        let total: u64 = g.states().iter().map(|s| s.count).sum();
        assert_eq!(total, data.len() as u64);
    }

    #[test]
    fn transition_probabilities_are_row_stochastic() {
        let mut g = DmcGraph::new(0.2);
        for i in 0..200 {
            let phase = (i % 4) as f64;
            g.ingest(&obs(10.0 + 30.0 * phase, 5.0 * phase)).unwrap();
        }
        for id in 0..g.n_states() {
            let probs = g.transition_probabilities(id);
            if probs.is_empty() {
                continue;
            }
            let sum: f64 = probs.iter().map(|(_, p)| p).sum();
            assert!((sum - 1.0).abs() < 1e-12, "row {id} sums to {sum}");
        }
    }

    #[test]
    fn rejects_bad_observations() {
        let mut g = DmcGraph::new(DEFAULT_TAU);
        assert!(g.ingest(&obs(f64::NAN, 0.0)).is_err());
        assert!(g.ingest(&obs(1.0, f64::INFINITY)).is_err());
        assert!(g.ingest(&obs(-1.0, 0.0)).is_err());
        assert!(g.match_states(&obs(1.0, 1.0)).is_err()); // still empty
    }

    fn two_state_cycle() -> DmcGraph {
        // A -> B -> A with zero variance, built through the public API.
        let mut g = DmcGraph::new(0.01);
        for _ in 0..3 {
            g.ingest(&obs(5.0, 3.0)).unwrap();
            g.ingest(&obs(50.0, 30.0)).unwrap();
        }
        g
    }

    #[test]
    fn sampling_walks_deterministic_cycles() {
        let g = two_state_cycle();
        let paths = g
            .sample_paths_seq(&obs(5.0, 3.0), 4, 3, 9)
            .unwrap();
        for p in &paths {
            assert_eq!(p.len(), 5);
            for (k, pt) in p.iter().enumerate() {
                if k % 2 == 0 {
                    assert_eq!((pt.load_kw, pt.res_kw), (5.0, 3.0));
                } else {
                    assert_eq!((pt.load_kw, pt.res_kw), (50.0, 30.0));
                }
            }
        }
    }

    #[test]
    fn single_state_self_loops_constant() {
        let mut g = DmcGraph::new(DEFAULT_TAU);
        g.ingest(&obs(5.0, 3.0)).unwrap();
        let paths = g.sample_paths_seq(&obs(5.0, 3.0), 6, 2, 1).unwrap();
        for p in paths {
            assert!(p.iter().all(|pt| pt.load_kw == 5.0 && pt.res_kw == 3.0));
        }
    }

    #[test]
    fn same_seed_reproduces_path_sets() {
        let mut g = DmcGraph::new(0.1);
        for i in 0..500u32 {
            let l = 40.0 + 30.0 * f64::from(i % 7) + 0.3 * f64::from(i % 11);
            let r = 20.0 + 10.0 * f64::from(i % 5);
            g.ingest(&obs(l, r)).unwrap();
        }
        let a = g.sample_paths_seq(&obs(60.0, 25.0), 8, 40, 123).unwrap();
        let b = g.sample_paths_seq(&obs(60.0, 25.0), 8, 40, 123).unwrap();
        assert_eq!(a, b);
        let c = g.sample_paths_seq(&obs(60.0, 25.0), 8, 40, 124).unwrap();
        assert_ne!(a, c);
        // All emissions nonnegative and the right length.
        for p in &a {
            assert_eq!(p.len(), 9);
            assert!(p.iter().all(|pt| pt.load_kw >= 0.0 && pt.res_kw >= 0.0));
        }
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn parallel_sampling_matches_sequential() {
        let mut g = DmcGraph::new(0.1);
        for i in 0..300u32 {
            g.ingest(&obs(
                40.0 + 25.0 * f64::from(i % 6),
                15.0 * f64::from(i % 4),
            ))
            .unwrap();
        }
        let seq = g.sample_paths_seq(&obs(55.0, 20.0), 12, 64, 7).unwrap();
        let par = g.sample_paths_par(&obs(55.0, 20.0), 12, 64, 7).unwrap();
        assert_eq!(seq, par);
    }

    #[test]
    fn emission_covariance_is_repaired_to_psd() {
        // Force an inconsistent covariance through the text format and make
        // sure sampling still works and stays finite.
        let text = "dmc-graph v1\ntau 0.1\nbounds 0 10 0 10\nlast_state 0\nstates 1\n0 5 5 1 1 5 3\nedges 1\n0 0 3\n";
        let g = DmcGraph::load(text.as_bytes()).unwrap();
        let paths = g.sample_paths_seq(&obs(5.0, 5.0), 3, 8, 2).unwrap();
        for p in paths {
            assert!(p.iter().all(|pt| pt.load_kw.is_finite() && pt.res_kw.is_finite()));
        }
    }

    #[test]
    fn save_load_round_trip_preserves_everything() {
        let mut g = DmcGraph::new(0.07);
        for i in 0..120u32 {
            g.ingest(&obs(
                30.0 + 20.0 * f64::from(i % 5) + 0.01 * f64::from(i),
                10.0 + 5.0 * f64::from(i % 3),
            ))
            .unwrap();
        }
        let mut buf = Vec::new();
        g.save(&mut buf).unwrap();
        let loaded = DmcGraph::load(buf.as_slice()).unwrap();
        let mut buf2 = Vec::new();
        loaded.save(&mut buf2).unwrap();
        assert_eq!(buf, buf2);
        assert_eq!(loaded.n_states(), g.n_states());
        assert_eq!(loaded.last_state, g.last_state);
        // Continued training diverges identically from both copies.
        let a = g.sample_paths_seq(&obs(45.0, 12.0), 5, 10, 3).unwrap();
        let b = loaded.sample_paths_seq(&obs(45.0, 12.0), 5, 10, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn load_rejects_malformed_files() {
        assert!(DmcGraph::load("nonsense\n".as_bytes()).is_err());
        let bad_state = "dmc-graph v1\ntau 0.1\nlast_state -\nstates 1\n0 1 2 3\nedges 0\n";
        assert!(matches!(
            DmcGraph::load(bad_state.as_bytes()),
            Err(ForecastError::Parse { line: 5, .. })
        ));
        let bad_edge = "dmc-graph v1\ntau 0.1\nlast_state -\nstates 1\n0 1 1 0 0 0 1\nedges 1\n0 5 1\n";
        assert!(DmcGraph::load(bad_edge.as_bytes()).is_err());
    }
}
