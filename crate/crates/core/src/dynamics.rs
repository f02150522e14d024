//! Flow dynamics on a network: proportional-priority junction flows, the
//! density vector field, and per-regime analytic Jacobians.
//!
//! At each junction the incoming links send their demands, scaled by a
//! common factor `alpha` in `[0, 1]`, the largest one keeping every
//! downstream supply constraint satisfied: `alpha = min(1, min_k
//! supply_k / sum_j beta_jk demand_j)`, constraints with zero aggregate
//! demand being inactive. Sinks accept everything.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::network::Network;
use crate::tolerances::ALPHA_TIE_REL;

/// Density profile. Onramp entries may be flagged saturated, meaning the
/// queue is treated as arbitrarily long and sends its demand supremum.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    rho: Vec<f64>,
    saturated: Vec<bool>,
}

impl State {
    pub fn new(net: &Network, rho: Vec<f64>) -> Self {
        assert_eq!(rho.len(), net.num_links(), "one density per link");
        State { rho, saturated: vec![false; net.num_links()] }
    }

    pub fn zero(net: &Network) -> Self {
        State::new(net, vec![0.0; net.num_links()])
    }

    /// Build from `(link id, density)` pairs; omitted links start empty.
    pub fn from_pairs(net: &Network, pairs: &[(&str, f64)]) -> Self {
        let mut s = State::zero(net);
        for &(id, rho) in pairs {
            let l = net.link_by_id(id).unwrap_or_else(|| panic!("unknown link {id:?}"));
            s.rho[l] = rho;
        }
        s
    }

    pub fn rho(&self, l: usize) -> f64 {
        self.rho[l]
    }

    pub fn densities(&self) -> &[f64] {
        &self.rho
    }

    pub fn set_rho(&mut self, l: usize, value: f64) {
        self.rho[l] = value;
    }

    pub fn is_saturated(&self, l: usize) -> bool {
        self.saturated[l]
    }

    pub fn set_saturated(&mut self, net: &Network, l: usize, value: bool) {
        assert!(net.link(l).is_onramp(), "only onramp queues saturate");
        self.saturated[l] = value;
    }

    /// Effective demand of link `l` at this state.
    pub fn demand(&self, net: &Network, l: usize) -> f64 {
        net.link(l).demand_at(self.rho[l], self.saturated[l])
    }

    /// Supply of ordinary link `l` at this state.
    pub fn supply(&self, net: &Network, l: usize) -> f64 {
        net.link(l)
            .supply
            .as_ref()
            .expect("supply queried on an onramp")
            .value(self.rho[l])
    }
}

/// Scaling factor of one junction together with which downstream supplies
/// attain it.
#[derive(Debug, Clone)]
pub struct JunctionAlpha {
    pub alpha: f64,
    /// Out-links whose constraint attains `alpha` within the tie tolerance;
    /// empty when the junction is unconstrained.
    pub binding: Vec<usize>,
    /// Relative gap separating the winning constraint from the nearest
    /// alternative (other constraint or the unconstrained branch). Zero on a
    /// tie, infinite when there is no alternative.
    pub margin: f64,
}

/// Largest admissible demand scaling at junction `v`.
pub fn junction_alpha(net: &Network, state: &State, v: usize) -> JunctionAlpha {
    if net.is_sink(v) {
        return JunctionAlpha { alpha: 1.0, binding: Vec::new(), margin: f64::INFINITY };
    }
    let mut ratios: Vec<(usize, f64)> = Vec::new();
    for &k in net.out_links(v) {
        let mut agg = 0.0;
        for &l in net.in_links(v) {
            agg += net.beta(l, k) * state.demand(net, l);
        }
        if agg > 0.0 {
            ratios.push((k, state.supply(net, k) / agg));
        }
    }
    let rmin = ratios.iter().map(|&(_, r)| r).fold(f64::INFINITY, f64::min);
    if rmin >= 1.0 {
        // Unconstrained; margin is the headroom of the tightest constraint.
        return JunctionAlpha {
            alpha: 1.0,
            binding: Vec::new(),
            margin: if rmin.is_finite() { rmin - 1.0 } else { f64::INFINITY },
        };
    }
    let mut binding: Vec<usize> = ratios
        .iter()
        .filter(|&&(_, r)| r <= rmin * (1.0 + ALPHA_TIE_REL))
        .map(|&(k, _)| k)
        .collect();
    binding.sort_unstable();
    let runner_up = ratios
        .iter()
        .map(|&(_, r)| r)
        .filter(|&r| r > rmin * (1.0 + ALPHA_TIE_REL))
        .fold(f64::INFINITY, f64::min)
        .min(1.0);
    let margin = if binding.len() > 1 { 0.0 } else { (runner_up - rmin) / rmin };
    JunctionAlpha { alpha: rmin, binding, margin }
}

/// Junction regimes of the piecewise dynamics: either every demand passes,
/// or one downstream supply pins the scaling.
#[derive(Debug, Clone, PartialEq)]
pub enum Regime {
    Unconstrained,
    /// Out-links attaining the junction alpha. A resolved regime has exactly
    /// one entry; ties keep the full set.
    SupplyBound { binding: Vec<usize> },
}

#[derive(Debug, Clone)]
pub struct Mode {
    /// Per junction, in network order.
    pub regimes: Vec<Regime>,
    /// Smallest junction margin encountered; near zero means the state sits
    /// on a regime boundary.
    pub margin: f64,
}

impl Mode {
    pub fn is_degenerate(&self) -> bool {
        self.regimes.iter().any(|r| matches!(r, Regime::SupplyBound { binding } if binding.len() != 1))
    }

    /// Collapse ties deterministically onto the binding link of smallest
    /// enumeration rank.
    pub fn resolve(&self, net: &Network) -> Mode {
        let regimes = self
            .regimes
            .iter()
            .map(|r| match r {
                Regime::Unconstrained => Regime::Unconstrained,
                Regime::SupplyBound { binding } => {
                    let k = *binding
                        .iter()
                        .min_by_key(|&&k| net.link_rank(k).unwrap_or(k))
                        .expect("supply-bound regime with empty binding set");
                    Regime::SupplyBound { binding: vec![k] }
                }
            })
            .collect();
        Mode { regimes, margin: self.margin }
    }
}

/// Flows through every link at one state.
#[derive(Debug, Clone)]
pub struct FlowSolution {
    /// Demand scaling per junction; one at sinks.
    pub alpha: Vec<f64>,
    /// Outflow per link.
    pub outflow: Vec<f64>,
    /// Inflow per link routed from upstream outflows; zero for onramps,
    /// whose input is exogenous.
    pub inflow: Vec<f64>,
}

pub fn flows(net: &Network, state: &State) -> FlowSolution {
    let mut alpha = vec![1.0; net.num_junctions()];
    let mut outflow = vec![0.0; net.num_links()];
    for v in 0..net.num_junctions() {
        let a = junction_alpha(net, state, v).alpha;
        alpha[v] = a;
        for &l in net.in_links(v) {
            outflow[l] = a * state.demand(net, l);
        }
    }
    let mut inflow = vec![0.0; net.num_links()];
    for l in 0..net.num_links() {
        for &(to, beta) in net.split_out(l) {
            inflow[to] += beta * outflow[l];
        }
    }
    FlowSolution { alpha, outflow, inflow }
}

/// Density drift under exogenous inputs `d` (onramp declaration order):
/// `d - outflow` on queues, `inflow - outflow` on ordinary links.
pub fn vector_field(net: &Network, state: &State, d: &[f64]) -> Vec<f64> {
    assert_eq!(d.len(), net.onramps().len(), "one input per onramp");
    let sol = flows(net, state);
    let mut f = vec![0.0; net.num_links()];
    for l in 0..net.num_links() {
        f[l] = sol.inflow[l] - sol.outflow[l];
    }
    for (pos, &r) in net.onramps().iter().enumerate() {
        f[r] = d[pos] - sol.outflow[r];
    }
    f
}

/// The regime the state currently sits in, junction by junction.
pub fn active_mode(net: &Network, state: &State) -> Mode {
    let mut regimes = Vec::with_capacity(net.num_junctions());
    let mut margin = f64::INFINITY;
    for v in 0..net.num_junctions() {
        let ja = junction_alpha(net, state, v);
        margin = margin.min(ja.margin);
        regimes.push(if ja.binding.is_empty() {
            Regime::Unconstrained
        } else {
            Regime::SupplyBound { binding: ja.binding }
        });
    }
    Mode { regimes, margin }
}

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("junction {junction:?} has a degenerate (tied) regime; resolve the mode first")]
    DegenerateMode { junction: String },
}

/// Jacobian of the vector field within the given regime, as a dense matrix
/// over all links in network index order.
///
/// The regime fixes which branch of each junction min is differentiated;
/// ties must be resolved (see [`Mode::resolve`]) before calling.
pub fn mode_jacobian(
    net: &Network,
    state: &State,
    mode: &Mode,
) -> Result<DMatrix<f64>, DynamicsError> {
    let n = net.num_links();
    // d(outflow_l)/d(rho_m), filled junction by junction.
    let mut dout = DMatrix::<f64>::zeros(n, n);
    for v in 0..net.num_junctions() {
        match &mode.regimes[v] {
            Regime::Unconstrained => {
                for &l in net.in_links(v) {
                    dout[(l, l)] = net.link(l).demand_deriv_at(state.rho(l), state.is_saturated(l));
                }
            }
            Regime::SupplyBound { binding } => {
                if binding.len() != 1 {
                    return Err(DynamicsError::DegenerateMode {
                        junction: net.junction_id(v).to_string(),
                    });
                }
                let k = binding[0];
                let mut agg = 0.0;
                for &l in net.in_links(v) {
                    agg += net.beta(l, k) * state.demand(net, l);
                }
                assert!(agg > 0.0, "supply-bound regime with zero aggregate demand");
                let s = state.supply(net, k);
                let sd = net
                    .link(k)
                    .supply
                    .as_ref()
                    .expect("binding link has supply")
                    .deriv(state.rho(k));
                let alpha = s / agg;
                for &l in net.in_links(v) {
                    let dem_l = state.demand(net, l);
                    dout[(l, k)] += sd * dem_l / agg;
                    for &j in net.in_links(v) {
                        let dj = net.link(j).demand_deriv_at(state.rho(j), state.is_saturated(j));
                        if j == l {
                            dout[(l, l)] +=
                                alpha * dj * (agg - net.beta(l, k) * dem_l) / agg;
                        } else {
                            dout[(l, j)] -= alpha * dem_l * net.beta(j, k) * dj / agg;
                        }
                    }
                }
            }
        }
    }
    // Rows of the drift: routed inflow minus own outflow; queues lose only
    // their outflow (their input is exogenous).
    let mut jac = -dout.clone();
    for l in 0..n {
        for &(to, beta) in net.split_out(l) {
            for m in 0..n {
                jac[(to, m)] += beta * dout[(l, m)];
            }
        }
    }
    Ok(jac)
}
