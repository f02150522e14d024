//! Cross-module properties on randomly generated networks: coordinate
//! changes, convergence to the routed equilibrium, and scaling behaviour of
//! the metering optimum.

mod common;

use common::{bundled, scale_instance, NetGen};
use proptest::prelude::*;
use trafficnet::analysis::StateSampler;
use trafficnet::diagram::{Demand, Supply};
use trafficnet::dynamics::{flows, vector_field, State};
use trafficnet::equilibrium::freeflow_equilibrium;
use trafficnet::metering::{optimal_metering, settled_throughput};
use trafficnet::sim::{
    settle, simulate, simulate_compactified, CompactState, InputSchedule, SettleOptions,
    SimOptions,
};

#[test]
fn compact_and_plain_runs_agree_on_random_networks() {
    let mut gen = NetGen::seeded(401);
    let mut sampler = StateSampler::seeded(402);
    for _ in 0..3 {
        let net = gen.random_dag(3, false);
        let d = gen.feasible_demand(&net, 0.7);
        let init = sampler.sample(&net);
        let opts = SimOptions { dt: 1e-3, record_every: 200 };
        let plain = simulate(&net, &init, &InputSchedule::constant(d.clone()), 2.0, &opts)
            .expect("feasible plain run");
        let compact = simulate_compactified(
            &net,
            &CompactState::from_state(&net, &init),
            &d,
            2.0,
            &opts,
        )
        .expect("compact run");
        let last = plain.densities(&net, plain.len() - 1);
        let compact_last = compact.densities(&net, compact.len() - 1);
        for l in 0..net.num_links() {
            let scale = net.link(l).jam().unwrap_or(100.0);
            assert!(
                (last[l] - compact_last[l]).abs() <= 1e-5 * scale,
                "link {} diverged between charts: {} vs {}",
                net.link(l).id,
                last[l],
                compact_last[l]
            );
        }
    }
}

#[test]
fn merge_chains_settle_to_the_routed_equilibrium_from_any_start() {
    let mut gen = NetGen::seeded(403);
    let mut sampler = StateSampler::seeded(404);
    for _ in 0..3 {
        let net = gen.random_merge_chain();
        let d = gen.feasible_demand(&net, 0.8);
        let reference = freeflow_equilibrium(&net, &d).expect("strictly feasible input");
        let expected = reference.densities.unwrap();
        for _ in 0..4 {
            let init = CompactState::from_state(&net, &sampler.sample(&net));
            let opts = SettleOptions { init: Some(init), ..SettleOptions::default() };
            let outcome = settle(&net, &d, &opts).expect("settle runs");
            assert!(outcome.converged, "stuck at t={} residual={}", outcome.time, outcome.residual);
            let state = outcome.state.to_state(&net);
            for (l, density) in expected.iter().enumerate() {
                let rho_e = density.finite().expect("feasible equilibrium is finite");
                assert!(
                    (state.rho(l) - rho_e).abs() <= 1e-3 * rho_e.max(1.0),
                    "link {} settled at {} instead of {}",
                    net.link(l).id,
                    state.rho(l),
                    rho_e
                );
            }
        }
    }
}

#[test]
fn metering_optimum_scales_with_the_instance() {
    let mut gen = NetGen::seeded(405);
    let lambda = 7.3;
    for _ in 0..4 {
        let net = gen.random_dag(4, true);
        let d = gen.feasible_demand(&net, 1.6);
        let base = optimal_metering(&net, &d).expect("base instance solves");
        let scaled_net = scale_instance(&net, lambda);
        let d_scaled: Vec<f64> = d.iter().map(|x| lambda * x).collect();
        let scaled = optimal_metering(&scaled_net, &d_scaled).expect("scaled instance solves");
        assert!(
            (scaled.throughput - lambda * base.throughput).abs()
                <= 1e-7 * (1.0 + lambda * base.throughput),
            "throughput {} does not scale to {}",
            base.throughput,
            scaled.throughput
        );
    }
}

#[test]
fn unmetered_throughput_never_beats_the_lp_bound() {
    for name in ["example1.json", "example2.json", "freeway.json"] {
        let net = bundled(name);
        let d = net.default_demands().to_vec();
        let plan = optimal_metering(&net, &d).expect("lp solves");
        let baseline = settled_throughput(&net, &d, &SettleOptions::default()).expect("settles");
        assert!(
            baseline <= plan.throughput + 1e-6 * plan.throughput.max(1.0),
            "{name}: baseline {baseline} exceeds bound {}",
            plan.throughput
        );
    }
}

#[test]
fn vector_field_is_lipschitz_between_sampled_states() {
    let net = bundled("example2.json");
    // Slope bound: every flow term is a composition of diagram slopes and
    // ratios bounded by the smallest split; triple fan-in margin on top.
    let k = 3.0 * (100.0 / 3.0 + (100.0 / 9.0) / (1.0 / 3.0));
    let d = vec![1000.0, 800.0];
    let mut sampler = StateSampler::seeded(406);
    for _ in 0..200 {
        let a = sampler.sample(&net);
        let b = sampler.sample(&net);
        let fa = vector_field(&net, &a, &d);
        let fb = vector_field(&net, &b, &d);
        let df = fa
            .iter()
            .zip(&fb)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        let dx = (0..net.num_links())
            .map(|l| (a.rho(l) - b.rho(l)).abs())
            .fold(0.0, f64::max);
        assert!(df <= k * dx + 1e-9, "|dF|={df} exceeds K|dx|={}", k * dx);
    }
}

proptest! {
    // Junction flows on the diverge sample stay inside their bounds for
    // arbitrary densities, with proportional priority exact.
    #[test]
    fn junction_flows_stay_bounded(
        q1 in 0.0..2000.0f64,
        rho2 in 0.0..360.0f64,
        rho3 in 0.0..360.0f64,
        q4 in 0.0..2000.0f64,
        rho5 in 0.0..360.0f64,
    ) {
        let net = bundled("example2.json");
        let state = State::new(&net, vec![q1, rho2, rho3, q4, rho5]);
        let sol = flows(&net, &state);
        for v in 0..net.num_junctions() {
            prop_assert!(sol.alpha[v] >= 0.0 && sol.alpha[v] <= 1.0);
        }
        for l in 0..net.num_links() {
            let link = net.link(l);
            prop_assert!(sol.outflow[l] <= link.demand_at(state.rho(l), false) + 1e-9);
            if let Some(supply) = &link.supply {
                prop_assert!(sol.inflow[l] <= supply.value(state.rho(l)) + 1e-9);
            }
        }
        // Proportional priority at the merge junction feeding link 5.
        let l2 = net.link_by_id("2").unwrap();
        let l4 = net.link_by_id("4").unwrap();
        let d2 = net.link(l2).demand_at(state.rho(l2), false);
        let d4 = net.link(l4).demand_at(state.rho(l4), false);
        if d2 > 1e-9 && d4 > 1e-9 {
            prop_assert!(
                (sol.outflow[l2] / d2 - sol.outflow[l4] / d4).abs() <= 1e-12
                    * (sol.outflow[l2] / d2).max(1.0)
            );
        }
    }

    // Diagram primitives: monotone branches and inversion roundtrips.
    #[test]
    fn diagrams_are_monotone_and_invertible(
        v in 0.5..50.0f64,
        cap in 0.5..4000.0f64,
        w in 0.3..20.0f64,
        frac in 0.01..0.99f64,
        rho_lo in 0.0..300.0f64,
        bump in 0.0..60.0f64,
    ) {
        let demand = Demand::PiecewiseLinear { v, cap };
        prop_assert!(demand.value(rho_lo) <= demand.value(rho_lo + bump) + 1e-12);
        let flow = frac * cap;
        let rho = demand.invert(flow).unwrap();
        prop_assert!((demand.value(rho) - flow).abs() <= 1e-9 * cap);

        let jam = cap / v + cap / w + 1.0;
        let supply = Supply::PiecewiseLinear { w, jam, cap: None };
        let hi = (rho_lo + bump).min(jam);
        prop_assert!(supply.value(hi) <= supply.value(rho_lo.min(jam)) + 1e-12);
        prop_assert!(supply.value(jam).abs() <= 1e-12 * cap);

        let exp = Demand::Exponential { a: cap, b: v / cap };
        let rho = exp.invert(flow).unwrap();
        prop_assert!((exp.value(rho) - flow).abs() <= 1e-9 * cap);
    }
}
