//! Equilibria of the network under constant inputs.
//!
//! Input flows split three ways: strictly feasible inputs admit a freeflow
//! equilibrium with a triangular Hurwitz linearization; feasible-but-tight
//! inputs pin some link at its critical flow; infeasible inputs overload at
//! least one link and the network instead settles with diverging onramp
//! queues discharging below their arrival rates.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::diagram::DiagramError;
use crate::dynamics::{active_mode, mode_jacobian, DynamicsError, Regime, State};
use crate::network::{
    critical_points, is_polytree, max_critical_flow, routing_matrices, Network, NetworkError,
};
use crate::sim::{settle, SettleOptions, SimError};
use crate::tolerances::FEASIBILITY_SLACK_REL;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Feasibility {
    StrictlyFeasible,
    Feasible,
    Infeasible,
}

impl std::fmt::Display for Feasibility {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Feasibility::StrictlyFeasible => write!(f, "strictly feasible"),
            Feasibility::Feasible => write!(f, "feasible (tight)"),
            Feasibility::Infeasible => write!(f, "infeasible"),
        }
    }
}

/// Equilibrium density of one link; only onramp queues can diverge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Density {
    Finite(f64),
    Infinite,
}

impl Density {
    pub fn finite(&self) -> Option<f64> {
        match self {
            Density::Finite(x) => Some(*x),
            Density::Infinite => None,
        }
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, Density::Infinite)
    }
}

/// Ordinary link whose routed flow exceeds its critical flow.
#[derive(Debug, Clone)]
pub struct CapacityViolation {
    pub link: usize,
    pub flow: f64,
    pub critical_flow: f64,
}

/// Triangularity witness for the linearization at a freeflow equilibrium.
/// `lower_triangular` together with `diagonal_max < 0` certifies every
/// eigenvalue sits strictly in the left half plane.
#[derive(Debug, Clone)]
pub struct JacobianCertificate {
    /// Link indices by enumeration rank; row/column order of `jacobian`.
    pub order: Vec<usize>,
    pub jacobian: DMatrix<f64>,
    pub lower_triangular: bool,
    pub diagonal_max: f64,
}

#[derive(Debug, Clone)]
pub struct EquilibriumResult {
    pub classification: Feasibility,
    /// Equilibrium outflow per link; absent when only classification ran
    /// on an infeasible input.
    pub flows: Option<Vec<f64>>,
    /// Equilibrium density per link; absent until an equilibrium is built.
    pub densities: Option<Vec<Density>>,
    /// Overloaded links under the routed linear flows; empty unless
    /// infeasible.
    pub violations: Vec<CapacityViolation>,
    /// None means unknown (equilibria off polytrees need not be unique).
    pub flows_unique: Option<bool>,
    pub densities_unique: Option<bool>,
    pub certificate: Option<JacobianCertificate>,
}

#[derive(Debug, Error)]
pub enum EquilibriumError {
    #[error(
        "onramp {onramp:?} input {demand} is not admissible: queue discharge \
         bound {bound} (attained at finite density: {attained})"
    )]
    InadmissibleDemand { onramp: String, demand: f64, bound: f64, attained: bool },
    #[error("input flow is infeasible; no freeflow equilibrium exists")]
    InfeasibleInput,
    #[error("stability certificate failed: {reason}")]
    CertificateFailed { reason: String },
    #[error("settling run did not converge by t = {time} (residual {residual:.3e})")]
    NotConverged { time: f64, residual: f64 },
    #[error(transparent)]
    Diagram(#[from] DiagramError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Inputs must not exceed what the queue can ever discharge: `d <= bound`,
/// strictly when the bound is a supremum the demand never attains.
pub fn check_admissible(net: &Network, d: &[f64]) -> Result<(), EquilibriumError> {
    assert_eq!(d.len(), net.onramps().len(), "one input per onramp");
    for (pos, &r) in net.onramps().iter().enumerate() {
        let link = net.link(r);
        let bound = link.demand_sup();
        let attained = link.demand_sup_attained();
        let ok = if attained { d[pos] <= bound } else { d[pos] < bound };
        if !(ok && d[pos] >= 0.0) {
            return Err(EquilibriumError::InadmissibleDemand {
                onramp: link.id.clone(),
                demand: d[pos],
                bound,
                attained,
            });
        }
    }
    Ok(())
}

/// Classify a constant input flow and, when feasible, return the unique
/// equilibrium flows. Ordinary-link flows solve the routing system by
/// forward substitution; feasibility compares them against critical flows
/// with a small relative slack, so a flow within slack of critical counts
/// as tight rather than strict or violating.
pub fn classify(net: &Network, d: &[f64]) -> Result<EquilibriumResult, EquilibriumError> {
    check_admissible(net, d)?;
    let rm = routing_matrices(net)?;
    let fe_ordinary = rm.equilibrium_flows(d);
    let crit = critical_points(net)?;

    let mut flows = vec![0.0; net.num_links()];
    for (pos, &r) in net.onramps().iter().enumerate() {
        flows[r] = d[pos];
    }
    for (k, &l) in rm.ordinary.iter().enumerate() {
        flows[l] = fe_ordinary[k];
    }

    let mut strict = true;
    let mut violations = Vec::new();
    for &l in net.ordinaries() {
        let (_, phi_crit) = crit[l].expect("ordinary links have a critical point");
        let slack = FEASIBILITY_SLACK_REL * phi_crit;
        if flows[l] > phi_crit + slack {
            violations.push(CapacityViolation { link: l, flow: flows[l], critical_flow: phi_crit });
        } else if flows[l] >= phi_crit - slack {
            strict = false;
        }
    }

    let classification = if !violations.is_empty() {
        Feasibility::Infeasible
    } else if strict {
        Feasibility::StrictlyFeasible
    } else {
        Feasibility::Feasible
    };
    let feasible = classification != Feasibility::Infeasible;
    Ok(EquilibriumResult {
        classification,
        flows: feasible.then_some(flows),
        densities: None,
        violations,
        flows_unique: feasible.then_some(true),
        densities_unique: None,
        certificate: None,
    })
}

/// The unique equilibrium with every ordinary link in freeflow: densities
/// recovered by inverting each link's demand at its equilibrium flow.
/// Strict feasibility makes this the unique equilibrium outright; a tight
/// input still has this freeflow equilibrium but may admit congested ones
/// with the same flows, so density uniqueness stays unknown.
pub fn freeflow_equilibrium(
    net: &Network,
    d: &[f64],
) -> Result<EquilibriumResult, EquilibriumError> {
    let mut result = classify(net, d)?;
    if result.classification == Feasibility::Infeasible {
        return Err(EquilibriumError::InfeasibleInput);
    }
    let flows = result.flows.as_ref().expect("feasible classification carries flows");
    let densities = net
        .links()
        .iter()
        .enumerate()
        .map(|(l, link)| Ok(Density::Finite(link.demand.invert(flows[l])?)))
        .collect::<Result<Vec<_>, DiagramError>>()?;
    result.densities = Some(densities);
    result.densities_unique = match result.classification {
        Feasibility::StrictlyFeasible => Some(true),
        _ => None,
    };
    Ok(result)
}

/// Certify local asymptotic stability of a strictly feasible freeflow
/// equilibrium: under the link enumeration the linearization must be lower
/// triangular with a strictly negative diagonal.
pub fn stability_certificate(
    net: &Network,
    equilibrium: &EquilibriumResult,
) -> Result<JacobianCertificate, EquilibriumError> {
    if equilibrium.classification != Feasibility::StrictlyFeasible {
        return Err(EquilibriumError::CertificateFailed {
            reason: format!(
                "requires a strictly feasible equilibrium, got {}",
                equilibrium.classification
            ),
        });
    }
    let densities = equilibrium.densities.as_ref().ok_or_else(|| {
        EquilibriumError::CertificateFailed { reason: "equilibrium carries no densities".into() }
    })?;
    let rho = densities
        .iter()
        .map(|d| {
            d.finite().ok_or_else(|| EquilibriumError::CertificateFailed {
                reason: "diverging queue in a feasible equilibrium".into(),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let state = State::new(net, rho);
    let mode = active_mode(net, &state);
    if let Some(v) = mode
        .regimes
        .iter()
        .position(|r| matches!(r, Regime::SupplyBound { .. }))
    {
        return Err(EquilibriumError::CertificateFailed {
            reason: format!(
                "junction {:?} is supply-bound at the claimed freeflow equilibrium",
                net.junction_id(v)
            ),
        });
    }
    let jac = mode_jacobian(net, &state, &mode)?;

    let n = net.num_links();
    let mut order = vec![0; n];
    for l in 0..n {
        order[net.link_rank(l).expect("acyclic network has ranks")] = l;
    }
    let mut reordered = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            reordered[(i, j)] = jac[(order[i], order[j])];
        }
    }

    let scale = reordered.amax().max(1.0);
    let mut offenders = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if reordered[(i, j)].abs() > 1e-12 * scale {
                offenders.push(format!(
                    "({}, {}) = {:.3e}",
                    net.link_id(order[i]),
                    net.link_id(order[j]),
                    reordered[(i, j)]
                ));
            }
        }
    }
    let diagonal_max = (0..n).map(|i| reordered[(i, i)]).fold(f64::NEG_INFINITY, f64::max);
    if !offenders.is_empty() {
        return Err(EquilibriumError::CertificateFailed {
            reason: format!("entries above the diagonal: {}", offenders.join(", ")),
        });
    }
    if !(diagonal_max < 0.0) {
        return Err(EquilibriumError::CertificateFailed {
            reason: format!("diagonal not strictly negative (max {diagonal_max})"),
        });
    }
    Ok(JacobianCertificate { order, jacobian: reordered, lower_triangular: true, diagonal_max })
}

/// Equilibrium for an overloaded input, found by settling the compactified
/// dynamics: onramps that cannot pass their arrivals diverge and discharge
/// at their bound. Unique when the network is a polytree; otherwise the
/// reached equilibrium is reported with uniqueness unknown.
pub fn equilibrium_infeasible(
    net: &Network,
    d: &[f64],
    opts: &SettleOptions,
) -> Result<EquilibriumResult, EquilibriumError> {
    let (classification, violations) = match classify(net, d) {
        Ok(r) => (r.classification, r.violations),
        // An arrival rate beyond the queue's discharge bound overloads the
        // network just the same; the settled run still makes sense.
        Err(EquilibriumError::InadmissibleDemand { .. }) => (Feasibility::Infeasible, Vec::new()),
        Err(other) => return Err(other),
    };
    let tol = match opts.tol {
        Some(t) => t,
        None => 1e-4 * max_critical_flow(net)?.max(1.0),
    };
    let outcome = settle(net, d, opts)?;
    if !outcome.converged {
        return Err(EquilibriumError::NotConverged {
            time: outcome.time,
            residual: outcome.residual,
        });
    }
    let state = outcome.state.to_state(net);
    let densities = net
        .links()
        .iter()
        .enumerate()
        .map(|(l, link)| {
            if link.is_onramp() {
                let pos = net.onramps().iter().position(|&r| r == l).unwrap();
                let deficit = d[pos] - outcome.flows.outflow[l];
                if state.is_saturated(l) || deficit > tol {
                    Density::Infinite
                } else {
                    Density::Finite(state.rho(l))
                }
            } else {
                Density::Finite(state.rho(l))
            }
        })
        .collect();
    let unique = if is_polytree(net) { Some(true) } else { None };
    Ok(EquilibriumResult {
        classification,
        flows: Some(outcome.flows.outflow),
        densities: Some(densities),
        violations,
        flows_unique: unique,
        densities_unique: unique,
        certificate: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::vector_field;
    use crate::samples;

    #[test]
    fn classification_covers_the_trichotomy() {
        let net = samples::example2();

        let r = classify(&net, &[2500.0, 2500.0]).unwrap();
        assert_eq!(r.classification, Feasibility::Infeasible);
        assert!(r.flows.is_none());
        assert_eq!(r.violations.len(), 1);
        let v = &r.violations[0];
        assert_eq!(net.link_id(v.link), "5");
        assert_eq!(v.flow, 3750.0);
        assert_eq!(v.critical_flow, 3000.0);

        let r = classify(&net, &[2500.0, 1750.0]).unwrap();
        assert_eq!(r.classification, Feasibility::Feasible);
        let flows = r.flows.unwrap();
        let f = |id: &str| flows[net.link_by_id(id).unwrap()];
        assert_eq!(f("2"), 1250.0);
        assert_eq!(f("3"), 1250.0);
        assert_eq!(f("5"), 3000.0);
        assert_eq!(r.flows_unique, Some(true));

        let r = classify(&net, &[0.0, 0.0]).unwrap();
        assert_eq!(r.classification, Feasibility::StrictlyFeasible);
        assert!(r.flows.unwrap().iter().all(|&x| x == 0.0));

        let r = classify(&net, &[1000.0, 1000.0]).unwrap();
        assert_eq!(r.classification, Feasibility::StrictlyFeasible);
    }

    #[test]
    fn admissibility_respects_attained_and_unattained_bounds() {
        let net = samples::example2();
        // Queue demand caps at 3000, attained: equality is admissible.
        assert!(classify(&net, &[3000.0, 0.0]).is_ok());
        match classify(&net, &[3000.1, 0.0]) {
            Err(EquilibriumError::InadmissibleDemand { onramp, bound, attained, .. }) => {
                assert_eq!(onramp, "1");
                assert_eq!(bound, 3000.0);
                assert!(attained);
            }
            other => panic!("expected inadmissible, got {other:?}"),
        }

        // Exponential queue demand approaches 2 but never reaches it.
        let net = samples::single_ramp_exp();
        assert!(classify(&net, &[1.99]).is_ok());
        match classify(&net, &[2.0]) {
            Err(EquilibriumError::InadmissibleDemand { attained, .. }) => assert!(!attained),
            other => panic!("expected inadmissible, got {other:?}"),
        }
    }

    #[test]
    fn freeflow_densities_invert_the_demands() {
        let net = samples::example2();
        let r = freeflow_equilibrium(&net, &[2500.0, 1750.0]).unwrap();
        let densities = r.densities.unwrap();
        let rho = |id: &str| densities[net.link_by_id(id).unwrap()].finite().unwrap();
        assert!((rho("2") - 37.5).abs() < 1e-9);
        assert!((rho("3") - 37.5).abs() < 1e-9);
        assert!((rho("5") - 90.0).abs() < 1e-9);
        assert!((rho("1") - 2500.0 / 30.0).abs() < 1e-9);
        assert!((rho("4") - 1750.0 / 30.0).abs() < 1e-9);
        assert_eq!(r.densities_unique, None, "tight input: congested twins unknown");

        // The returned state really is stationary.
        let state = State::new(&net, densities.iter().map(|d| d.finite().unwrap()).collect());
        let drift = vector_field(&net, &state, &[2500.0, 1750.0]);
        for (l, f) in drift.iter().enumerate() {
            assert!(f.abs() < 1e-9, "drift {} on {}", f, net.link_id(l));
        }

        assert!(matches!(
            freeflow_equilibrium(&net, &[2500.0, 2500.0]),
            Err(EquilibriumError::InfeasibleInput)
        ));
    }

    #[test]
    fn zero_input_has_the_empty_equilibrium() {
        let net = samples::example2();
        let r = freeflow_equilibrium(&net, &[0.0, 0.0]).unwrap();
        assert_eq!(r.classification, Feasibility::StrictlyFeasible);
        for d in r.densities.unwrap() {
            assert_eq!(d.finite(), Some(0.0));
        }
    }

    #[test]
    fn certificate_passes_and_matches_direct_derivatives_on_a_chain() {
        let net = samples::single_ramp();
        let eq = freeflow_equilibrium(&net, &[1000.0]).unwrap();
        let cert = stability_certificate(&net, &eq).unwrap();
        assert!(cert.lower_triangular);
        // Diagonal is minus each link's demand slope at its equilibrium.
        let q = net.link_by_id("q").unwrap();
        let m = net.link_by_id("m").unwrap();
        let rq = cert.order.iter().position(|&l| l == q).unwrap();
        let rm = cert.order.iter().position(|&l| l == m).unwrap();
        assert!((cert.jacobian[(rq, rq)] - (-30.0)).abs() < 1e-12);
        assert!((cert.jacobian[(rm, rm)] - (-100.0 / 3.0)).abs() < 1e-12);
        assert!(cert.diagonal_max < 0.0);
    }

    #[test]
    fn certificate_eigenvalues_sit_in_the_left_half_plane() {
        let net = samples::example2();
        let eq = freeflow_equilibrium(&net, &[1000.0, 1000.0]).unwrap();
        let cert = stability_certificate(&net, &eq).unwrap();
        for ev in cert.jacobian.complex_eigenvalues().iter() {
            assert!(ev.re < 0.0, "eigenvalue {ev} not stable");
        }
        // Tight inputs are refused: no strictness, no certificate.
        let eq = freeflow_equilibrium(&net, &[2500.0, 1750.0]).unwrap();
        assert!(matches!(
            stability_certificate(&net, &eq),
            Err(EquilibriumError::CertificateFailed { .. })
        ));
    }

    #[test]
    fn overloaded_network_settles_to_the_congested_equilibrium() {
        let net = samples::example2();
        let r = equilibrium_infeasible(&net, &[2500.0, 2500.0], &SettleOptions::default())
            .unwrap();
        assert_eq!(r.classification, Feasibility::Infeasible);
        let flows = r.flows.unwrap();
        let densities = r.densities.unwrap();
        let f = |id: &str| flows[net.link_by_id(id).unwrap()];
        let expect = [("1", 2000.0), ("2", 1000.0), ("3", 1000.0), ("4", 2000.0), ("5", 3000.0)];
        for (id, want) in expect {
            assert!((f(id) - want).abs() < 1.0, "flow on {id}: {} want {want}", f(id));
        }
        for (id, want) in [("2", 270.0), ("3", 30.0), ("5", 90.0)] {
            let got = densities[net.link_by_id(id).unwrap()].finite().unwrap();
            assert!((got - want).abs() < 0.01 * want, "rho on {id}: {got} want {want}");
        }
        assert!(densities[net.link_by_id("1").unwrap()].is_infinite());
        assert!(densities[net.link_by_id("4").unwrap()].is_infinite());
        assert_eq!(r.flows_unique, Some(true), "polytree equilibrium is unique");

        // Def.-4 balance: settled flows are stationary for the dynamics.
        let state = {
            let mut s = State::zero(&net);
            for (l, d) in densities.iter().enumerate() {
                match d {
                    Density::Finite(x) => s.set_rho(l, *x),
                    Density::Infinite => s.set_saturated(&net, l, true),
                }
            }
            s
        };
        let drift = vector_field(&net, &state, &[2500.0, 2500.0]);
        for &l in net.ordinaries() {
            assert!(drift[l].abs() < 1.0, "drift {} on {}", drift[l], net.link_id(l));
        }
    }

    #[test]
    fn inadmissible_arrivals_still_settle_to_a_capped_discharge() {
        let net = samples::single_ramp_capped();
        assert!(matches!(
            classify(&net, &[3000.0]),
            Err(EquilibriumError::InadmissibleDemand { .. })
        ));
        let r = equilibrium_infeasible(&net, &[3000.0], &SettleOptions::default()).unwrap();
        let flows = r.flows.unwrap();
        let q = net.link_by_id("q").unwrap();
        assert!((flows[q] - 2000.0).abs() < 1.0);
        assert!(r.densities.unwrap()[q].is_infinite());
    }
}
