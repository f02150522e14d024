//! Throughput-optimal constant ramp metering.
//!
//! The steady throughput of admissible onramp discharges `s` is `sum(s)`,
//! constrained by the boxes `0 <= s_l <= min(d_l, discharge bound)` and by
//! the routed ordinary-link flows `(I - A)^{-1} B s` staying within critical
//! flows. Eliminating the ordinary flows leaves a small LP over `s` alone;
//! its maximizer yields meter rates that hold every ordinary link in
//! freeflow while passing as much input as the network can ever move.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::diagram::DiagramError;
use crate::dynamics::flows;
use crate::network::{critical_points, routing_matrices, Network, NetworkError};
use crate::sim::{settle, SettleOptions, SimError};
use crate::simplex::{certify, solve, BoundedLp, LpError};
use crate::tolerances::LP_PIVOT;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MeterRate {
    Metered(f64),
    /// The optimum passes this queue's whole input; any rate at or above
    /// the input works, so no restriction is imposed.
    Unmetered,
}

#[derive(Debug, Clone)]
pub struct MeteringPlan {
    /// Per onramp, in declaration order.
    pub rates: Vec<MeterRate>,
    /// LP maximizer; equilibrium onramp discharges.
    pub s_star: Vec<f64>,
    /// Induced equilibrium outflow per link.
    pub predicted_flows: Vec<f64>,
    /// Steady rate of vehicles leaving the network, `sum(s_star)`.
    pub throughput: f64,
    /// The throughput is unique; the maximizer need not be.
    pub alternative_optima: bool,
    pub lp_iterations: usize,
}

/// Settled behavior of the metered network compared against a plan.
#[derive(Debug, Clone)]
pub struct PlanVerification {
    pub settled_flows: Vec<f64>,
    /// Per link: |settled - predicted| / capacity scale.
    pub flow_deltas: Vec<f64>,
    pub max_delta: f64,
    pub throughput: f64,
    /// Every ordinary link at or below its critical density.
    pub freeflow: bool,
    /// Smallest junction demand scaling at the settled state; one means no
    /// supply constraint is active.
    pub min_alpha: f64,
    pub time: f64,
}

#[derive(Debug, Error)]
pub enum MeteringError {
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error("lp solution failed its optimality certificate: {0}")]
    LpCertificate(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Diagram(#[from] DiagramError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("metered network did not settle by t = {time} (residual {residual:.3e})")]
    NotConverged { time: f64, residual: f64 },
    #[error("plan verification failed: {reason}")]
    VerificationFailed { report: Box<PlanVerification>, reason: String },
}

/// Copy of the network with onramp discharges capped at the given rates
/// (pointwise min with the queue demand). Existing caps are replaced.
pub fn metered_network(net: &Network, rates: &[MeterRate]) -> Result<Network, NetworkError> {
    assert_eq!(rates.len(), net.onramps().len(), "one rate per onramp");
    let mut file = net.to_file_schema();
    for (pos, &r) in net.onramps().iter().enumerate() {
        let id = net.link_id(r);
        let link = file
            .links
            .iter_mut()
            .find(|l| l.id == id)
            .expect("schema lists every link");
        link.meter = match rates[pos] {
            MeterRate::Metered(m) => Some(m),
            MeterRate::Unmetered => None,
        };
    }
    Network::from_parts(file.junctions, file.links, file.split, file.demands)
}

/// Maximize steady throughput over constant metering rates.
pub fn optimal_metering(net: &Network, d: &[f64]) -> Result<MeteringPlan, MeteringError> {
    assert_eq!(d.len(), net.onramps().len(), "one input per onramp");
    let rm = routing_matrices(net)?;
    let crit = critical_points(net)?;
    let ns = net.onramps().len();
    let m = rm.ordinary.len();

    // Routed ordinary flows per unit discharge of each onramp.
    let mut g = DMatrix::<f64>::zeros(m, ns);
    for pos in 0..ns {
        let mut unit = vec![0.0; ns];
        unit[pos] = 1.0;
        let fe = rm.equilibrium_flows(&unit);
        g.set_column(pos, &DVector::from_vec(fe));
    }

    let mut a = DMatrix::<f64>::zeros(m, ns + m);
    a.view_mut((0, 0), (m, ns)).copy_from(&g);
    for k in 0..m {
        a[(k, ns + k)] = -1.0;
    }
    let mut upper = DVector::zeros(ns + m);
    for (pos, &r) in net.onramps().iter().enumerate() {
        upper[pos] = d[pos].min(net.link(r).demand_sup());
    }
    for k in 0..m {
        let (_, phi_crit) = crit[rm.ordinary[k]].expect("ordinary links have critical points");
        upper[ns + k] = phi_crit;
    }
    let mut c = DVector::zeros(ns + m);
    for pos in 0..ns {
        c[pos] = 1.0;
    }
    let lp = BoundedLp { a, b: DVector::zeros(m), c, lower: DVector::zeros(ns + m), upper };
    let slack_basis: Vec<usize> = (ns..ns + m).collect();
    let sol = solve(&lp, &slack_basis)?;
    certify(&lp, &sol).map_err(MeteringError::LpCertificate)?;

    let s_star: Vec<f64> = (0..ns).map(|pos| sol.x[pos]).collect();
    let mut predicted_flows = vec![0.0; net.num_links()];
    for (pos, &r) in net.onramps().iter().enumerate() {
        predicted_flows[r] = s_star[pos];
    }
    for (k, &l) in rm.ordinary.iter().enumerate() {
        predicted_flows[l] = sol.x[ns + k];
    }
    let rates = (0..ns)
        .map(|pos| {
            let tie = LP_PIVOT * d[pos].abs().max(1.0);
            if s_star[pos] >= d[pos] - tie {
                MeterRate::Unmetered
            } else {
                MeterRate::Metered(s_star[pos])
            }
        })
        .collect();
    Ok(MeteringPlan {
        rates,
        s_star,
        predicted_flows,
        throughput: sol.objective,
        alternative_optima: sol.alternative_optima,
        lp_iterations: sol.iterations,
    })
}

/// Settle the metered network from the empty state and compare against the
/// plan: flows within one percent of each link's capacity scale, ordinary
/// links in freeflow, no junction supply-bound.
pub fn verify_plan(
    net: &Network,
    d: &[f64],
    plan: &MeteringPlan,
    opts: &SettleOptions,
) -> Result<PlanVerification, MeteringError> {
    let metered = metered_network(net, &plan.rates)?;
    let outcome = settle(&metered, d, opts)?;
    if !outcome.converged {
        return Err(MeteringError::NotConverged {
            time: outcome.time,
            residual: outcome.residual,
        });
    }
    let crit = critical_points(net)?;
    let state = outcome.state.to_state(&metered);
    let sol = flows(&metered, &state);

    let mut flow_deltas = vec![0.0; net.num_links()];
    let mut max_delta = 0.0_f64;
    let mut worst: Option<usize> = None;
    for l in 0..net.num_links() {
        let scale = match crit[l] {
            Some((_, phi_crit)) => phi_crit,
            None => net.link(l).demand_sup(),
        };
        let delta = (sol.outflow[l] - plan.predicted_flows[l]).abs() / scale.max(1e-9);
        flow_deltas[l] = delta;
        if delta > max_delta {
            max_delta = delta;
            worst = Some(l);
        }
    }
    let mut congested: Option<usize> = None;
    for &l in net.ordinaries() {
        let (rho_crit, _) = crit[l].expect("ordinary links have critical points");
        if state.rho(l) > rho_crit + 1e-3 * net.link(l).jam().expect("ordinary links have jam") {
            congested = Some(l);
            break;
        }
    }
    let min_alpha = sol.alpha.iter().copied().fold(f64::INFINITY, f64::min);
    let throughput: f64 = net.onramps().iter().map(|&r| sol.outflow[r]).sum();

    let report = PlanVerification {
        settled_flows: sol.outflow,
        flow_deltas,
        max_delta,
        throughput,
        freeflow: congested.is_none(),
        min_alpha,
        time: outcome.time,
    };
    if max_delta > 0.01 {
        let l = worst.unwrap();
        let reason = format!(
            "flow on {:?} off by {:.3}% of capacity (settled {} vs predicted {})",
            net.link_id(l),
            100.0 * max_delta,
            report.settled_flows[l],
            plan.predicted_flows[l]
        );
        return Err(MeteringError::VerificationFailed { report: Box::new(report), reason });
    }
    if let Some(l) = congested {
        let reason = format!(
            "ordinary link {:?} settled congested (rho = {})",
            net.link_id(l),
            state.rho(l)
        );
        return Err(MeteringError::VerificationFailed { report: Box::new(report), reason });
    }
    if min_alpha < 1.0 - 1e-6 {
        let reason = format!("a junction is still supply-bound (alpha = {min_alpha})");
        return Err(MeteringError::VerificationFailed { report: Box::new(report), reason });
    }
    Ok(report)
}

/// Throughput of the unmetered network settled under the same inputs; the
/// baseline a plan should beat or match.
pub fn settled_throughput(
    net: &Network,
    d: &[f64],
    opts: &SettleOptions,
) -> Result<f64, MeteringError> {
    let outcome = settle(net, d, opts)?;
    if !outcome.converged {
        return Err(MeteringError::NotConverged {
            time: outcome.time,
            residual: outcome.residual,
        });
    }
    Ok(net.onramps().iter().map(|&r| outcome.flows.outflow[r]).sum())
}
