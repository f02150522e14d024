//! Qualitative structure of the dynamics: where cooperativity fails, and
//! the weighted-compartmental certificate for merge-only networks.
//!
//! A supply-bound junction couples its incoming links through the shared
//! demand scaling, so raising one density can cut another link's flow: a
//! negative off-diagonal Jacobian entry. The scan samples states, collects
//! such entries from the analytic mode Jacobian, and keeps only those a
//! finite-difference probe confirms. Merge-only networks with uniform
//! off-network fractions escape this: a diagonal weighting turns every mode
//! Jacobian compartmental, giving the weighted drift norm as a global
//! Lyapunov function.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dynamics::{active_mode, mode_jacobian, vector_field, Regime, State};
use crate::network::{is_merge_only, junction_gammas, Network};
use crate::sim::Trajectory;
use crate::tolerances::{COMPARTMENTAL_ABS, FD_AGREE, FD_STEP, REGIME_MARGIN};

/// Distance to a diagram kink below which a state is not probed; finite
/// differences would straddle the corner.
const KINK_SKIP: f64 = 1e-3;

/// Stored violation cap; counts keep accumulating past it.
const KEEP_VIOLATIONS: usize = 64;

/// Uniform state sampler: ordinary links over their density box, onramp
/// queues up to 1.5 times the density where demand is effectively at its
/// supremum, so both freeflow and saturated regimes appear.
pub struct StateSampler {
    rng: ChaCha8Rng,
}

impl StateSampler {
    pub fn seeded(seed: u64) -> Self {
        StateSampler { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn sample(&mut self, net: &Network) -> State {
        let rho = net
            .links()
            .iter()
            .map(|link| match link.jam() {
                Some(jam) => self.rng.random_range(0.0..jam),
                None => self.rng.random_range(0.0..1.5 * link.demand.near_sup_density(1e-3)),
            })
            .collect();
        State::new(net, rho)
    }
}

/// One finite-difference-confirmed negative off-diagonal entry.
#[derive(Debug, Clone)]
pub struct CooperativityViolation {
    pub densities: Vec<f64>,
    /// The supply-bound junction coupling the pair, when identifiable.
    pub junction: Option<usize>,
    /// Row and column links: dF_pair.0 / drho_pair.1 < 0.
    pub pair: (usize, usize),
    pub value: f64,
    pub fd_value: f64,
}

#[derive(Debug, Clone)]
pub struct CooperativityReport {
    pub samples: usize,
    /// States skipped for sitting on a regime boundary or diagram kink.
    pub skipped: usize,
    /// Candidates the finite-difference probe did not confirm (boundary
    /// effects); never reported as violations.
    pub unconfirmed: usize,
    pub freeflow_samples: usize,
    /// No sampled all-freeflow state showed a negative off-diagonal.
    pub cooperative_in_freeflow: bool,
    pub violating_states: usize,
    /// Confirmed (row, column) pairs with occurrence counts.
    pub pair_counts: BTreeMap<(usize, usize), usize>,
    /// Detailed records, capped at a fixed number.
    pub violations: Vec<CooperativityViolation>,
}

impl CooperativityReport {
    pub fn is_cooperative(&self) -> bool {
        self.pair_counts.is_empty()
    }
}

/// Central (or one-sided at the box edge) difference of F_l along rho_k.
pub fn fd_jacobian_entry(net: &Network, state: &State, l: usize, k: usize) -> f64 {
    let d = vec![0.0; net.onramps().len()];
    let h = FD_STEP * state.rho(k).abs().max(1.0);
    let probe = |rho_k: f64| {
        let mut s = state.clone();
        s.set_rho(k, rho_k);
        vector_field(net, &s, &d)[l]
    };
    let lo = state.rho(k) - h;
    if lo >= 0.0 {
        (probe(state.rho(k) + h) - probe(lo)) / (2.0 * h)
    } else {
        (probe(state.rho(k) + h) - probe(state.rho(k))) / h
    }
}

/// True when the state is clear of regime boundaries (by `margin`) and of
/// diagram kinks, so analytic and finite-difference derivatives both exist
/// and agree.
pub fn probe_safe(net: &Network, state: &State, margin: f64) -> bool {
    active_mode(net, state).margin >= margin && !near_kink(net, state)
}

fn near_kink(net: &Network, state: &State) -> bool {
    use crate::diagram::{Demand, Supply};
    net.links().iter().enumerate().any(|(l, link)| {
        let rho = state.rho(l);
        if state.is_saturated(l) {
            return false;
        }
        let demand_kink = match link.demand {
            Demand::PiecewiseLinear { v, cap } => Some(cap / v),
            Demand::Exponential { .. } => None,
        };
        let supply_kink = match link.supply {
            Some(Supply::PiecewiseLinear { w, jam, cap: Some(cap) }) => Some(jam - cap / w),
            _ => None,
        };
        let meter_kink = link.meter.and_then(|m| link.demand.invert(m).ok());
        [demand_kink, supply_kink, meter_kink]
            .into_iter()
            .flatten()
            .any(|k| (rho - k).abs() < KINK_SKIP)
    })
}

/// Junction whose supply-bound regime makes column `k` throttle other
/// links: either `k` feeds it, or `k` is its binding out-link.
fn coupling_junction(net: &Network, regimes: &[Regime], k: usize) -> Option<usize> {
    let head = net.link(k).head;
    if matches!(regimes[head], Regime::SupplyBound { .. }) {
        return Some(head);
    }
    if let Some(tail) = net.link(k).tail {
        if let Regime::SupplyBound { binding } = &regimes[tail] {
            if binding.contains(&k) {
                return Some(tail);
            }
        }
    }
    None
}

/// Sample interior states and report negative off-diagonal entries of the
/// active mode's Jacobian, each confirmed by finite differences. States on
/// regime boundaries or diagram kinks are skipped; candidates the probe
/// cannot confirm are counted but never reported.
pub fn cooperativity_scan(
    net: &Network,
    sampler: &mut StateSampler,
    n_samples: usize,
) -> CooperativityReport {
    let mut report = CooperativityReport {
        samples: n_samples,
        skipped: 0,
        unconfirmed: 0,
        freeflow_samples: 0,
        cooperative_in_freeflow: true,
        violating_states: 0,
        pair_counts: BTreeMap::new(),
        violations: Vec::new(),
    };
    let n = net.num_links();
    for _ in 0..n_samples {
        let state = sampler.sample(net);
        let mode = active_mode(net, &state);
        if mode.margin < REGIME_MARGIN || near_kink(net, &state) {
            report.skipped += 1;
            continue;
        }
        let resolved = mode.resolve(net);
        let Ok(jac) = mode_jacobian(net, &state, &resolved) else {
            report.skipped += 1;
            continue;
        };
        let freeflow = resolved.regimes.iter().all(|r| matches!(r, Regime::Unconstrained));
        if freeflow {
            report.freeflow_samples += 1;
        }
        let mut confirmed_here = false;
        for l in 0..n {
            for k in 0..n {
                if l == k || jac[(l, k)] >= -1e-9 {
                    continue;
                }
                if freeflow {
                    // Freeflow dynamics are cooperative; a negative entry
                    // here would be an implementation fault.
                    if jac[(l, k)] < -COMPARTMENTAL_ABS {
                        report.cooperative_in_freeflow = false;
                    }
                    continue;
                }
                let fd = fd_jacobian_entry(net, &state, l, k);
                let agree =
                    (fd - jac[(l, k)]).abs() <= FD_AGREE * jac[(l, k)].abs().max(1.0);
                if !(agree && fd < 0.0) {
                    report.unconfirmed += 1;
                    continue;
                }
                confirmed_here = true;
                *report.pair_counts.entry((l, k)).or_insert(0) += 1;
                if report.violations.len() < KEEP_VIOLATIONS {
                    report.violations.push(CooperativityViolation {
                        densities: state.densities().to_vec(),
                        junction: coupling_junction(net, &resolved.regimes, k),
                        pair: (l, k),
                        value: jac[(l, k)],
                        fd_value: fd,
                    });
                }
            }
        }
        if confirmed_here {
            report.violating_states += 1;
        }
    }
    report
}

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("weighted-compartmental conditions not met: {condition}")]
    ConditionsNotMet { condition: String },
}

/// Diagonal weights making every mode Jacobian compartmental: each link
/// carries the product of the split ratios along its unique path to a sink
/// (the surviving fraction of its flow).
#[derive(Debug, Clone)]
pub struct CompartmentalWeights {
    pub per_link: Vec<f64>,
}

impl CompartmentalWeights {
    /// W * M with W diagonal.
    pub fn scale_rows(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = m.clone();
        for (l, &w) in self.per_link.iter().enumerate() {
            for j in 0..m.ncols() {
                out[(l, j)] *= w;
            }
        }
        out
    }
}

/// Weights for a merge-only network with uniform off-network fractions.
/// The recursion multiplies each link's own split ratio, so the weighted
/// column sums cancel to roundoff rather than to the gamma tolerance.
pub fn compartmental_weights(net: &Network) -> Result<CompartmentalWeights, AnalysisError> {
    if !is_merge_only(net) {
        let v = (0..net.num_junctions())
            .find(|&v| net.out_links(v).len() > 1)
            .expect("a non-merge-only network has a diverging junction");
        return Err(AnalysisError::ConditionsNotMet {
            condition: format!(
                "junction {:?} has {} outgoing links (merge-only required)",
                net.junction_id(v),
                net.out_links(v).len()
            ),
        });
    }
    junction_gammas(net).map_err(|e| AnalysisError::ConditionsNotMet {
        condition: e.to_string(),
    })?;

    let n = net.num_links();
    let mut by_rank: Vec<usize> = (0..n).collect();
    by_rank.sort_by_key(|&l| net.link_rank(l).expect("merge-only networks are acyclic"));
    let mut per_link = vec![1.0; n];
    // Downstream links have larger ranks; walk them first.
    for &l in by_rank.iter().rev() {
        let head = net.link(l).head;
        per_link[l] = match net.out_links(head).first() {
            None => 1.0,
            Some(&next) => net.beta(l, next) * per_link[next],
        };
    }
    Ok(CompartmentalWeights { per_link })
}

#[derive(Debug, Clone)]
pub struct CompartmentalCheck {
    pub ok: bool,
    pub violations: Vec<String>,
}

/// Off-diagonals nonnegative and column sums nonpositive, to roundoff.
pub fn is_compartmental(m: &DMatrix<f64>) -> CompartmentalCheck {
    assert_eq!(m.nrows(), m.ncols(), "compartmental check needs a square matrix");
    let mut violations = Vec::new();
    for j in 0..m.ncols() {
        let mut sum = 0.0;
        for i in 0..m.nrows() {
            sum += m[(i, j)];
            if i != j && m[(i, j)] < -COMPARTMENTAL_ABS {
                violations.push(format!("entry ({i}, {j}) = {}", m[(i, j)]));
            }
        }
        if sum > COMPARTMENTAL_ABS {
            violations.push(format!("column {j} sums to {sum}"));
        }
    }
    CompartmentalCheck { ok: violations.is_empty(), violations }
}

#[derive(Debug, Clone)]
pub struct LyapunovTrace {
    pub times: Vec<f64>,
    /// Weighted drift norm per sample.
    pub values: Vec<f64>,
    pub max_increment: f64,
    pub nonincreasing: bool,
}

/// Weighted drift norm V = sum_l W_l |F_l| along a trajectory; decreasing
/// for merge-only uniform-fraction networks. The per-step tolerance absorbs
/// integration error, with a small absolute floor for trajectories that
/// start at (or reach) an equilibrium.
pub fn lyapunov_trace(
    net: &Network,
    traj: &Trajectory,
    weights: &CompartmentalWeights,
) -> LyapunovTrace {
    assert_eq!(weights.per_link.len(), net.num_links());
    let values: Vec<f64> = traj
        .drifts
        .iter()
        .map(|drift| {
            drift
                .iter()
                .zip(&weights.per_link)
                .map(|(f, w)| w * f.abs())
                .sum()
        })
        .collect();
    let max_increment = values
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::NEG_INFINITY, f64::max)
        .max(0.0);
    let tol = 1e-6 * values.first().copied().unwrap_or(0.0) + 1e-9;
    LyapunovTrace {
        times: traj.times.clone(),
        values,
        max_increment,
        nonincreasing: max_increment <= tol,
    }
}
