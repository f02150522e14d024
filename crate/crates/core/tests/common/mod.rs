#![allow(dead_code)] // each test target uses its own slice of this module

//! Generators and oracles shared by the integration suite: random layered
//! networks, demand scaling against the routed-flow map, a full
//! finite-difference Jacobian, and an exhaustive vertex-enumeration LP
//! oracle for small metering instances.

use std::collections::BTreeMap;
use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use trafficnet::analysis::fd_jacobian_entry;
use trafficnet::diagram::{Demand, Supply};
use trafficnet::dynamics::State;
use trafficnet::network::{
    critical_points, routing_matrices, LinkFile, LinkKind, Network, SplitEntry,
};

pub fn bundled(name: &str) -> Network {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../networks")
        .join(name);
    Network::from_file(&path).unwrap_or_else(|e| panic!("load {}: {e}", path.display()))
}

/// Full Jacobian by central differences, for checking the analytic one.
pub fn fd_jacobian(net: &Network, state: &State) -> DMatrix<f64> {
    let n = net.num_links();
    DMatrix::from_fn(n, n, |l, k| fd_jacobian_entry(net, state, l, k))
}

pub struct NetGen {
    rng: ChaCha8Rng,
}

impl NetGen {
    pub fn seeded(seed: u64) -> Self {
        NetGen { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    fn ordinary_link(&mut self, id: String, tail: &str, head: &str, unit: bool) -> LinkFile {
        let (v, cap, w, slack) = if unit {
            (
                self.rng.random_range(0.5..1.5),
                self.rng.random_range(0.5..2.0),
                self.rng.random_range(0.3..0.8),
                self.rng.random_range(0.5..2.0),
            )
        } else {
            (
                self.rng.random_range(25.0..40.0),
                self.rng.random_range(2000.0..4000.0),
                self.rng.random_range(8.0..15.0),
                self.rng.random_range(50.0..150.0),
            )
        };
        // jam past both kinks so the diagram is a proper trapezoid.
        let jam = cap / v + cap / w + slack;
        LinkFile {
            id,
            kind: LinkKind::Ordinary,
            tail: Some(tail.into()),
            head: head.into(),
            demand: Demand::PiecewiseLinear { v, cap },
            supply: Some(Supply::PiecewiseLinear { w, jam, cap: None }),
            meter: None,
        }
    }

    fn onramp_link(&mut self, id: String, head: &str, unit: bool) -> LinkFile {
        let (v, cap) = if unit {
            (self.rng.random_range(0.5..2.0), self.rng.random_range(0.5..2.0))
        } else {
            (self.rng.random_range(10.0..40.0), self.rng.random_range(1500.0..3000.0))
        };
        let demand = if self.rng.random_range(0.0..1.0) < 0.25 {
            Demand::Exponential { a: cap, b: v / cap }
        } else {
            Demand::PiecewiseLinear { v, cap }
        };
        LinkFile { id, kind: LinkKind::Onramp, tail: None, head: head.into(), demand, supply: None, meter: None }
    }

    /// Layered acyclic network: every link splits onto all out-links of its
    /// head with positive ratios, off-network fraction up to 0.3.
    pub fn random_dag(&mut self, max_onramps: usize, unit: bool) -> Network {
        let n_layers = self.rng.random_range(3..=4usize);
        let mut layers: Vec<Vec<usize>> = Vec::new();
        let mut junctions: Vec<String> = Vec::new();
        for li in 0..n_layers {
            let width = if li == 0 { 1 } else { self.rng.random_range(1..=2usize) };
            let mut layer = Vec::new();
            for _ in 0..width {
                layer.push(junctions.len());
                junctions.push(format!("v{}", junctions.len()));
            }
            layers.push(layer);
        }

        let mut links: Vec<LinkFile> = Vec::new();
        for li in 0..n_layers - 1 {
            for &v in &layers[li] {
                let out_degree = self.rng.random_range(1..=2usize);
                let mut heads: Vec<usize> = layers[li + 1..].concat();
                for _ in 0..out_degree.min(heads.len()) {
                    let pick = self.rng.random_range(0..heads.len());
                    let head = heads.swap_remove(pick);
                    let id = format!("l{}", links.len());
                    let l = self.ordinary_link(id, &junctions[v], &junctions[head], unit);
                    links.push(l);
                }
            }
        }
        let n_onramps = self.rng.random_range(1..=max_onramps.max(1));
        let interior: Vec<usize> = layers[..n_layers - 1].concat();
        for i in 0..n_onramps {
            let v = interior[self.rng.random_range(0..interior.len())];
            let r = self.onramp_link(format!("r{i}"), &junctions[v], unit);
            links.push(r);
        }

        // Out-links per junction id, for the split table.
        let mut outs: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for l in &links {
            if let Some(t) = &l.tail {
                outs.entry(t.clone()).or_default().push(l.id.clone());
            }
        }
        let mut split = Vec::new();
        for l in &links {
            let Some(outgoing) = outs.get(&l.head) else { continue };
            let gamma = self.rng.random_range(0.0..0.3);
            let weights: Vec<f64> =
                (0..outgoing.len()).map(|_| self.rng.random_range(0.2..1.0)).collect();
            let total: f64 = weights.iter().sum();
            for (k, w) in outgoing.iter().zip(&weights) {
                split.push(SplitEntry {
                    from: l.id.clone(),
                    to: k.clone(),
                    beta: (1.0 - gamma) * w / total,
                });
            }
        }
        Network::from_parts(junctions, links, split, BTreeMap::new()).expect("generated network is valid")
    }

    /// Mainline chain with onramps merging in; single out-link per junction
    /// and a common off-network fraction per junction, so the
    /// weighted-compartmental conditions hold.
    pub fn random_merge_chain(&mut self) -> Network {
        let n = self.rng.random_range(4..=6usize);
        let junctions: Vec<String> = (0..n).map(|i| format!("j{i}")).collect();
        let mut links = vec![self.onramp_link("r0".into(), &junctions[0], false)];
        for i in 0..n - 1 {
            let l = self.ordinary_link(format!("m{i}"), &junctions[i], &junctions[i + 1], false);
            links.push(l);
            if i > 0 && self.rng.random_range(0.0..1.0) < 0.6 {
                links.push(self.onramp_link(format!("r{i}"), &junctions[i], false));
            }
        }
        let mut split = Vec::new();
        for i in 0..n - 1 {
            let gamma =
                if self.rng.random_range(0.0..1.0) < 0.3 { 0.0 } else { self.rng.random_range(0.0..0.3) };
            let out = format!("m{i}");
            for l in &links {
                if l.head == junctions[i] {
                    split.push(SplitEntry { from: l.id.clone(), to: out.clone(), beta: 1.0 - gamma });
                }
            }
        }
        Network::from_parts(junctions, links, split, BTreeMap::new()).expect("generated chain is valid")
    }

    /// Demand vector whose routed equilibrium flows sit at `frac` of the
    /// tightest capacity; `frac < 1` gives a strictly feasible input.
    pub fn feasible_demand(&mut self, net: &Network, frac: f64) -> Vec<f64> {
        let d0: Vec<f64> = net
            .onramps()
            .iter()
            .map(|&r| self.rng.random_range(0.5..1.0) * net.link(r).demand_sup())
            .collect();
        let ratio = capacity_ratio(net, &d0);
        let scale = if ratio > 0.0 { frac / ratio } else { 1.0 };
        net.onramps()
            .iter()
            .zip(&d0)
            .map(|(&r, &d)| (scale * d).min(0.9 * net.link(r).demand_sup()))
            .collect()
    }

    /// Admissible demand overloading at least one link, when the onramp
    /// capacities allow it.
    pub fn infeasible_demand(&mut self, net: &Network) -> Option<Vec<f64>> {
        let d: Vec<f64> = net
            .onramps()
            .iter()
            .map(|&r| {
                let link = net.link(r);
                if link.demand.sup_attained() {
                    link.demand_sup()
                } else {
                    0.999 * link.demand_sup()
                }
            })
            .collect();
        (capacity_ratio(net, &d) > 1.02).then_some(d)
    }
}

/// Largest routed-flow to critical-flow ratio over ordinary links.
pub fn capacity_ratio(net: &Network, d: &[f64]) -> f64 {
    let rm = routing_matrices(net).expect("generated networks are acyclic");
    let crits = critical_points(net).expect("generated diagrams are valid");
    let fe = rm.equilibrium_flows(d);
    rm.ordinary
        .iter()
        .zip(&fe)
        .map(|(&l, &f)| f / crits[l].expect("ordinary link has a critical point").1)
        .fold(0.0, f64::max)
}

/// The metering feasible set is `0 <= s <= u`, `0 <= Gs <= cap`. Enumerate
/// every basic solution (choice of n active constraints and sides), keep the
/// feasible ones, and return the best throughput. Exponential in size; only
/// for small instances.
pub fn vertex_oracle_throughput(net: &Network, d: &[f64]) -> f64 {
    let rm = routing_matrices(net).expect("oracle needs an acyclic network");
    let crits = critical_points(net).expect("oracle needs valid diagrams");
    let n = rm.onramps.len();
    let m = rm.ordinary.len();
    let mut g = DMatrix::<f64>::zeros(m, n);
    for pos in 0..n {
        let mut unit = vec![0.0; n];
        unit[pos] = 1.0;
        g.set_column(pos, &DVector::from_vec(rm.equilibrium_flows(&unit)));
    }
    let u: Vec<f64> = rm
        .onramps
        .iter()
        .zip(d)
        .map(|(&r, &dr)| dr.min(net.link(r).demand_sup()))
        .collect();
    let cap: Vec<f64> = rm.ordinary.iter().map(|&l| crits[l].unwrap().1).collect();

    let scale = u.iter().chain(&cap).fold(1.0_f64, |a, &b| a.max(b));
    let tol = 1e-9 * scale;
    let rows = n + m;
    let row = |i: usize| -> DVector<f64> {
        if i < n {
            DVector::from_fn(n, |j, _| if j == i { 1.0 } else { 0.0 })
        } else {
            g.row(i - n).transpose()
        }
    };
    let upper = |i: usize| if i < n { u[i] } else { cap[i - n] };

    let feasible = |s: &DVector<f64>| -> bool {
        (0..n).all(|i| s[i] >= -tol && s[i] <= u[i] + tol) && {
            let gs = &g * s;
            (0..m).all(|k| gs[k] >= -tol && gs[k] <= cap[k] + tol)
        }
    };

    let mut best = 0.0_f64; // s = 0 is always feasible
    let mut subset = vec![0usize; n];
    enumerate_subsets(rows, n, &mut subset, 0, 0, &mut |chosen: &[usize]| {
        for sides in 0u32..(1 << n) {
            let mut a = DMatrix::<f64>::zeros(n, n);
            let mut rhs = DVector::<f64>::zeros(n);
            for (pos, &i) in chosen.iter().enumerate() {
                a.set_row(pos, &row(i).transpose());
                rhs[pos] = if sides & (1 << pos) != 0 { upper(i) } else { 0.0 };
            }
            let lu = a.clone().lu();
            let Some(s) = lu.solve(&rhs) else { continue };
            if (&a * &s - &rhs).amax() > tol {
                continue;
            }
            if feasible(&s) {
                best = best.max(s.sum());
            }
        }
    });
    best
}

fn enumerate_subsets(
    rows: usize,
    want: usize,
    subset: &mut Vec<usize>,
    depth: usize,
    start: usize,
    visit: &mut impl FnMut(&[usize]),
) {
    if depth == want {
        visit(subset);
        return;
    }
    for i in start..rows {
        subset[depth] = i;
        enumerate_subsets(rows, want, subset, depth + 1, i + 1, visit);
    }
}

/// Scale a network's flow axis by `lambda`: caps, jams, and default demands
/// all scale, slopes stay. Routing is untouched, so the metering optimum
/// must scale by exactly `lambda`.
pub fn scale_instance(net: &Network, lambda: f64) -> Network {
    let mut file = net.to_file_schema();
    for l in &mut file.links {
        l.demand = match l.demand {
            Demand::PiecewiseLinear { v, cap } => Demand::PiecewiseLinear { v, cap: lambda * cap },
            Demand::Exponential { a, b } => Demand::Exponential { a: lambda * a, b: b / lambda },
        };
        l.supply = l.supply.as_ref().map(|s| match *s {
            Supply::PiecewiseLinear { w, jam, cap } => Supply::PiecewiseLinear {
                w,
                jam: lambda * jam,
                cap: cap.map(|c| lambda * c),
            },
            Supply::Exponential { c, b, jam } => Supply::Exponential {
                c: lambda * c,
                b: b / lambda,
                jam: lambda * jam,
            },
        });
        if let Some(m) = l.meter {
            l.meter = Some(lambda * m);
        }
    }
    for d in file.demands.values_mut() {
        *d *= lambda;
    }
    Network::from_parts(file.junctions, file.links, file.split, file.demands)
        .expect("scaling preserves validity")
}
