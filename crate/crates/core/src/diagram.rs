//! Fundamental diagrams: per-link demand (sending) and supply (receiving)
//! functions, and their crossing point.
//!
//! Two parametric families are supported. Piecewise-linear demand is
//! `min(v*rho, cap)`; piecewise-linear supply is `min(w*(jam - rho), cap)`
//! with an optional cap. The exponential family uses `a*(1 - exp(-b*rho))`
//! for demand and `c*(exp(-b*rho) - exp(-b*jam))` for supply.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tolerances::{BISECTION_FLOW_REL, FEASIBILITY_SLACK_REL};

/// Demand (sending) function of a link. Nondecreasing, zero at zero density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Demand {
    /// `min(v*rho, cap)`.
    PiecewiseLinear { v: f64, cap: f64 },
    /// `a*(1 - exp(-b*rho))`; approaches `a` without attaining it.
    Exponential { a: f64, b: f64 },
}

/// Supply (receiving) function of a bounded link. Nonincreasing, zero at the
/// jam density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Supply {
    /// `min(w*(jam - rho), cap)`; `cap = None` means uncapped.
    PiecewiseLinear {
        w: f64,
        jam: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cap: Option<f64>,
    },
    /// `c*(exp(-b*rho) - exp(-b*jam))`.
    Exponential { c: f64, b: f64, jam: f64 },
}

#[derive(Debug, Error)]
pub enum DiagramError {
    #[error("invalid diagram parameters: {0}")]
    InvalidParameters(String),
    #[error("demand and supply do not cross on (0, jam)")]
    NoCrossing,
    #[error("flow {flow} is not attained by the demand function (supremum {sup})")]
    NotAttained { flow: f64, sup: f64 },
}

impl Demand {
    /// Demand at density `rho`. Negative densities evaluate as zero so that
    /// intermediate integrator stages stay well defined.
    pub fn value(&self, rho: f64) -> f64 {
        let rho = rho.max(0.0);
        match *self {
            Demand::PiecewiseLinear { v, cap } => (v * rho).min(cap),
            Demand::Exponential { a, b } => a * (1.0 - (-b * rho).exp()),
        }
    }

    /// One-sided derivative at `rho` (the saturated branch wins at the kink).
    pub fn deriv(&self, rho: f64) -> f64 {
        let rho = rho.max(0.0);
        match *self {
            Demand::PiecewiseLinear { v, cap } => {
                if v * rho < cap {
                    v
                } else {
                    0.0
                }
            }
            Demand::Exponential { a, b } => a * b * (-b * rho).exp(),
        }
    }

    /// Supremum of the demand over all densities.
    pub fn sup(&self) -> f64 {
        match *self {
            Demand::PiecewiseLinear { cap, .. } => cap,
            Demand::Exponential { a, .. } => a,
        }
    }

    /// Whether the supremum is attained at a finite density.
    pub fn sup_attained(&self) -> bool {
        matches!(self, Demand::PiecewiseLinear { .. })
    }

    /// Smallest density where the demand reaches `flow`.
    ///
    /// Accepts flows up to the supremum within a small relative slack;
    /// rejects flows the function never attains.
    pub fn invert(&self, flow: f64) -> Result<f64, DiagramError> {
        let sup = self.sup();
        if flow < 0.0 || flow > sup * (1.0 + FEASIBILITY_SLACK_REL) {
            return Err(DiagramError::NotAttained { flow, sup });
        }
        match *self {
            Demand::PiecewiseLinear { v, cap } => Ok(flow.min(cap) / v),
            Demand::Exponential { a, b } => {
                if flow >= a {
                    return Err(DiagramError::NotAttained { flow, sup });
                }
                Ok(-(1.0 - flow / a).ln() / b)
            }
        }
    }

    /// Density past which the demand stays within `1 - frac` of its
    /// supremum. Used to size sampling boxes for unbounded queues.
    pub fn near_sup_density(&self, frac: f64) -> f64 {
        match *self {
            Demand::PiecewiseLinear { v, cap } => cap / v,
            Demand::Exponential { b, .. } => -frac.ln() / b,
        }
    }

    /// Parameter violations, if any.
    pub fn check(&self) -> Vec<String> {
        let mut out = Vec::new();
        match *self {
            Demand::PiecewiseLinear { v, cap } => {
                if !(v > 0.0 && v.is_finite()) {
                    out.push(format!("demand slope v = {v} must be positive"));
                }
                if !(cap > 0.0 && cap.is_finite()) {
                    out.push(format!("demand cap = {cap} must be positive"));
                }
            }
            Demand::Exponential { a, b } => {
                if !(a > 0.0 && a.is_finite()) {
                    out.push(format!("demand scale a = {a} must be positive"));
                }
                if !(b > 0.0 && b.is_finite()) {
                    out.push(format!("demand rate b = {b} must be positive"));
                }
            }
        }
        out
    }
}

impl Supply {
    /// Supply at density `rho`, clamped into `[0, jam]`.
    pub fn value(&self, rho: f64) -> f64 {
        match *self {
            Supply::PiecewiseLinear { w, jam, cap } => {
                let rho = rho.clamp(0.0, jam);
                let s = w * (jam - rho);
                match cap {
                    Some(c) => s.min(c),
                    None => s,
                }
            }
            Supply::Exponential { c, b, jam } => {
                let rho = rho.clamp(0.0, jam);
                c * ((-b * rho).exp() - (-b * jam).exp())
            }
        }
    }

    /// One-sided derivative at `rho` (the capped branch wins at the kink).
    pub fn deriv(&self, rho: f64) -> f64 {
        match *self {
            Supply::PiecewiseLinear { w, jam, cap } => {
                let rho = rho.clamp(0.0, jam);
                match cap {
                    Some(c) if w * (jam - rho) >= c => 0.0,
                    _ => -w,
                }
            }
            Supply::Exponential { c, b, jam } => {
                let rho = rho.clamp(0.0, jam);
                -c * b * (-b * rho).exp()
            }
        }
    }

    pub fn jam(&self) -> f64 {
        match *self {
            Supply::PiecewiseLinear { jam, .. } => jam,
            Supply::Exponential { jam, .. } => jam,
        }
    }

    /// Parameter violations, if any.
    pub fn check(&self) -> Vec<String> {
        let mut out = Vec::new();
        match *self {
            Supply::PiecewiseLinear { w, jam, cap } => {
                if !(w > 0.0 && w.is_finite()) {
                    out.push(format!("supply slope w = {w} must be positive"));
                }
                if !(jam > 0.0 && jam.is_finite()) {
                    out.push(format!("jam density = {jam} must be positive"));
                }
                if let Some(c) = cap {
                    if !(c > 0.0 && c.is_finite()) {
                        out.push(format!("supply cap = {c} must be positive"));
                    }
                }
            }
            Supply::Exponential { c, b, jam } => {
                if !(c > 0.0 && c.is_finite()) {
                    out.push(format!("supply scale c = {c} must be positive"));
                }
                if !(b > 0.0 && b.is_finite()) {
                    out.push(format!("supply rate b = {b} must be positive"));
                }
                if !(jam > 0.0 && jam.is_finite()) {
                    out.push(format!("jam density = {jam} must be positive"));
                }
            }
        }
        out
    }
}

/// Critical density and flow: the crossing of demand and supply on
/// `(0, jam)`. Piecewise-linear pairs are solved in closed form; any
/// combination involving an exponential falls back to bisection on the
/// monotone difference.
pub fn critical_point(demand: &Demand, supply: &Supply) -> Result<(f64, f64), DiagramError> {
    let mut issues = demand.check();
    issues.extend(supply.check());
    if !issues.is_empty() {
        return Err(DiagramError::InvalidParameters(issues.join("; ")));
    }
    if let (&Demand::PiecewiseLinear { v, cap: dcap }, &Supply::PiecewiseLinear { w, jam, cap }) =
        (demand, supply)
    {
        return critical_point_linear(v, dcap, w, jam, cap);
    }
    let jam = supply.jam();
    // g(rho) = demand - supply is nondecreasing with g(0) < 0 < g(jam).
    let g = |rho: f64| demand.value(rho) - supply.value(rho);
    if !(g(0.0) < 0.0 && g(jam) > 0.0) {
        return Err(DiagramError::NoCrossing);
    }
    let tol = BISECTION_FLOW_REL * demand.sup();
    let (mut lo, mut hi) = (0.0_f64, jam);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let gm = g(mid);
        if gm.abs() <= tol && (hi - lo) <= 1e-12 * jam {
            return Ok((mid, demand.value(mid)));
        }
        if gm < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mid = 0.5 * (lo + hi);
    Ok((mid, demand.value(mid)))
}

/// Case analysis for a piecewise-linear pair. Candidate crossings of the four
/// segment combinations are screened with a small relative slack (the kink
/// may sit exactly on the crossing in floating point) and the candidate with
/// the smallest demand/supply mismatch wins.
fn critical_point_linear(
    v: f64,
    dcap: f64,
    w: f64,
    jam: f64,
    scap: Option<f64>,
) -> Result<(f64, f64), DiagramError> {
    let scap_v = scap.unwrap_or(f64::INFINITY);
    let slack = 1e-9;
    let dem = |rho: f64| (v * rho).min(dcap);
    let sup = |rho: f64| (w * (jam - rho)).min(scap_v);
    let mut best: Option<(f64, f64, f64)> = None; // (mismatch, rho, flow)
    let mut consider = |rho: f64, flow: f64, ok: bool| {
        if !ok || !(0.0..=jam).contains(&rho) {
            return;
        }
        let mismatch = (dem(rho) - sup(rho)).abs();
        if best.map_or(true, |(m, _, _)| mismatch < m) {
            best = Some((mismatch, rho, flow));
        }
    };
    // Rising demand meets falling supply.
    let r = w * jam / (v + w);
    consider(
        r,
        v * r,
        v * r <= dcap * (1.0 + slack) && w * (jam - r) <= scap_v * (1.0 + slack),
    );
    // Demand cap meets falling supply.
    let r = jam - dcap / w;
    consider(
        r,
        dcap,
        v * r >= dcap * (1.0 - slack) && dcap <= scap_v * (1.0 + slack),
    );
    // Rising demand meets the supply cap.
    if scap_v.is_finite() {
        let r = scap_v / v;
        consider(
            r,
            scap_v,
            scap_v <= dcap * (1.0 + slack) && w * (jam - r) >= scap_v * (1.0 - slack),
        );
        // Both capped and equal: a plateau of crossings; report its left edge.
        if (dcap - scap_v).abs() <= slack * dcap {
            consider(dcap / v, dcap, w * (jam - dcap / v) >= dcap * (1.0 - slack));
        }
    }
    best.map(|(_, rho, flow)| (rho, flow))
        .ok_or(DiagramError::NoCrossing)
}
