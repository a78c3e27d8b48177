use recmpc::forecaster::{DmcGraph, Observation};
use recmpc::mpc::{plan_step, ControllerConfig};
use recmpc::plant::{Mode, PlantParams, PlantState};
use recmpc::scenario;
use recmpc::series::parse_timestamp;
use recmpc::solver::SolverOptions;
use recmpc::stage::{breakpoint_table, CurveTag, Sos2Encoding};
use recmpc::synth;

fn main() {
    let start = parse_timestamp("2021-06-07T00:00:00Z").unwrap();
    let params = PlantParams::default();
    let history = synth::synthetic_power(start - chrono::Duration::days(14), 14, 2);
    let actuals = synth::synthetic_power(start, 2, 3);
    let prices = synth::synthetic_prices(start, 2);
    let mut graph = DmcGraph::new(0.1);
    let t0 = std::time::Instant::now();
    for (i, pt) in history.points.iter().enumerate() {
        graph
            .ingest(&Observation::at(pt.load_kw, pt.res_kw, history.timestamp(i)))
            .unwrap();
    }
    println!(
        "train: {} states {} edges in {:.0} ms",
        graph.n_states(),
        graph.n_edges(),
        t0.elapsed().as_secs_f64() * 1e3
    );
    let cfg = ControllerConfig {
        table_el: breakpoint_table(CurveTag::El, 8, &params).unwrap(),
        table_f: breakpoint_table(CurveTag::F, 8, &params).unwrap(),
        omega_plus: 1.0,
        omega_minus: 1.0,
        encoding: Sos2Encoding::Native,
        solver: SolverOptions::default(),
    };
    let mut state = PlantState::new(0.5, Mode::Soec, &params).unwrap();
    for i in 0..16 {
        let anchor = if i == 0 {
            let last = history.points[history.len() - 1];
            Observation::new(last.load_kw, last.res_kw)
        } else {
            let prev = actuals.points[i - 1];
            Observation::new(prev.load_kw, prev.res_kw)
        };
        let t0 = std::time::Instant::now();
        let paths = graph.sample_paths(&anchor, 16, 100, 1 + i as u64).unwrap();
        let future: Vec<_> = paths.into_iter().map(|p| p[1..].to_vec()).collect();
        let t_sample = t0.elapsed().as_secs_f64() * 1e3;
        let t0 = std::time::Instant::now();
        let scen = scenario::reduce(&future, &vec![0.01; 100], 5).unwrap();
        let t_reduce = t0.elapsed().as_secs_f64() * 1e3;
        let t0 = std::time::Instant::now();
        let out = plan_step(&state, &scen, &prices.values[i..i + 16], &params, &cfg).unwrap();
        let t_plan = t0.elapsed().as_secs_f64() * 1e3;
        println!(
            "step {i:2}: sample {t_sample:5.1} ms, reduce {t_reduce:5.1} ms, plan {t_plan:8.1} ms, nodes {:5}, mode {}, soh {:.3}",
            out.node_count, out.plan.steps[0].mode, state.soh
        );
        let applied = recmpc::mpc::compensate(
            &out.plan.steps[0],
            &scen.probabilities,
            actuals.points[i].res_kw,
            actuals.points[i].load_kw,
            &state,
            &params,
        );
        state.advance(applied.mode, applied.soh_next, &params);
    }
}
