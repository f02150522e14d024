//! Time integration of the network dynamics.
//!
//! Fixed-step fourth-order Runge-Kutta, no event location: regime switches
//! are handled by the continuity of the flow map, and densities are clamped
//! back into their boxes after each step. A clamp beyond a small fraction of
//! the jam density rejects the run (the step size is too coarse).
//!
//! Unbounded onramp queues can be integrated in compactified coordinates
//! `x / (1 + x)`, mapping `[0, inf]` onto `[0, 1]` so diverging queues settle
//! against the boundary instead of escaping. Queue coordinates attract
//! drifts on the scale of the raw inputs while their chart box has unit
//! size, so compact runs split each output step into deterministic substeps
//! bounding the per-substep movement; the compact box is invariant, so
//! compact runs clamp silently and never reject.

use std::io::Write;

use thiserror::Error;

use crate::diagram::DiagramError;
use crate::dynamics::{flows, vector_field, FlowSolution, State};
use crate::network::{max_critical_flow, Network};
use crate::tolerances::{CLAMP_REJECT_FRAC, QUEUE_DIVERGED_CUT};

/// Compactified coordinate of an onramp density.
pub fn compactify(rho: f64) -> f64 {
    rho / (1.0 + rho)
}

/// Inverse map; saturates to infinity at one.
pub fn decompactify(hat: f64) -> f64 {
    if hat >= 1.0 {
        f64::INFINITY
    } else {
        hat / (1.0 - hat)
    }
}

/// Queue coordinates this close to one are treated as saturated.
const SAT_EPS: f64 = 1e-12;

/// Largest queue-coordinate movement allowed per compact substep.
const HAT_SUBSTEP: f64 = 0.02;

/// Hard cap on substeps per output step; unreachable for validated inputs.
const MAX_SUBSTEPS: usize = 1_000_000;

/// State in mixed coordinates: ordinary entries are densities, onramp
/// entries live in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompactState {
    coords: Vec<f64>,
}

impl CompactState {
    pub fn zero(net: &Network) -> Self {
        CompactState { coords: vec![0.0; net.num_links()] }
    }

    pub fn new(net: &Network, coords: Vec<f64>) -> Self {
        assert_eq!(coords.len(), net.num_links(), "one coordinate per link");
        for (pos, &c) in coords.iter().enumerate() {
            if net.link(pos).is_onramp() {
                assert!((0.0..=1.0).contains(&c), "queue coordinate {c} outside [0,1]");
            }
        }
        CompactState { coords }
    }

    pub fn from_state(net: &Network, state: &State) -> Self {
        let coords = (0..net.num_links())
            .map(|l| {
                if net.link(l).is_onramp() {
                    if state.is_saturated(l) {
                        1.0
                    } else {
                        compactify(state.rho(l))
                    }
                } else {
                    state.rho(l)
                }
            })
            .collect();
        CompactState { coords }
    }

    /// Back to plain coordinates; queues at the boundary become saturated
    /// states rather than infinite densities.
    pub fn to_state(&self, net: &Network) -> State {
        let mut rho = Vec::with_capacity(self.coords.len());
        let mut sat = Vec::new();
        for (l, &c) in self.coords.iter().enumerate() {
            if net.link(l).is_onramp() && c >= 1.0 - SAT_EPS {
                rho.push(0.0);
                sat.push(l);
            } else if net.link(l).is_onramp() {
                rho.push(decompactify(c));
            } else {
                rho.push(c);
            }
        }
        let mut state = State::new(net, rho);
        for l in sat {
            state.set_saturated(net, l, true);
        }
        state
    }

    pub fn coord(&self, l: usize) -> f64 {
        self.coords[l]
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("bad options: {0}")]
    BadOptions(String),
    #[error("step at t = {t} clamped link {link:?} by {amount:.3e}; reduce dt")]
    StepRejected { t: f64, link: String, amount: f64 },
    #[error(transparent)]
    Diagram(#[from] DiagramError),
}

/// Piecewise-constant exogenous inputs, one value vector per interval.
/// `values[i]` applies on `[times[i], times[i+1])`; the last value holds
/// forever. Jumps should sit on the step grid; steps never straddle them
/// exactly anyway since the integrator samples the left value.
#[derive(Debug, Clone)]
pub struct InputSchedule {
    times: Vec<f64>,
    values: Vec<Vec<f64>>,
}

impl InputSchedule {
    pub fn constant(d: Vec<f64>) -> Self {
        InputSchedule { times: vec![0.0], values: vec![d] }
    }

    pub fn steps(times: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self, SimError> {
        if times.is_empty() || times.len() != values.len() {
            return Err(SimError::BadOptions("schedule needs one value row per time".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(SimError::BadOptions("schedule times must increase".into()));
        }
        Ok(InputSchedule { times, values })
    }

    pub fn value_at(&self, t: f64) -> &[f64] {
        let idx = match self.times.binary_search_by(|probe| probe.total_cmp(&t)) {
            Ok(i) => i,
            Err(0) => 0,
            Err(i) => i - 1,
        };
        &self.values[idx]
    }
}

/// Which coordinates a trajectory stores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coordinates {
    Plain,
    Compact,
}

/// Sampled run: states, link outflows, the plain-coordinate drift, and the
/// largest ordinary-link drift magnitude per sample.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub coords: Coordinates,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub outflows: Vec<Vec<f64>>,
    /// Drift of every link in plain coordinates (queue drifts unscaled even
    /// for compact runs).
    pub drifts: Vec<Vec<f64>>,
    /// max |drift| over ordinary links per sample.
    pub residuals: Vec<f64>,
    /// Largest post-step clamp applied, relative to the link's box size.
    pub max_clamp_rel: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Densities of sample `i` in plain coordinates (infinite for saturated
    /// queues of a compact run).
    pub fn densities(&self, net: &Network, i: usize) -> Vec<f64> {
        match self.coords {
            Coordinates::Plain => self.states[i].clone(),
            Coordinates::Compact => self.states[i]
                .iter()
                .enumerate()
                .map(|(l, &c)| if net.link(l).is_onramp() { decompactify(c) } else { c })
                .collect(),
        }
    }

    pub fn state_at(&self, net: &Network, i: usize) -> State {
        match self.coords {
            Coordinates::Plain => State::new(net, self.states[i].clone()),
            Coordinates::Compact => {
                CompactState { coords: self.states[i].clone() }.to_state(net)
            }
        }
    }

    pub fn last_state(&self, net: &Network) -> State {
        self.state_at(net, self.len() - 1)
    }

    /// `t,rho_<id>...,out_<id>...,residual` with full double precision.
    pub fn write_csv(&self, net: &Network, mut w: impl Write) -> std::io::Result<()> {
        write!(w, "t")?;
        for l in net.links() {
            write!(w, ",rho_{}", l.id)?;
        }
        for l in net.links() {
            write!(w, ",out_{}", l.id)?;
        }
        writeln!(w, ",residual")?;
        for i in 0..self.len() {
            write!(w, "{}", self.times[i])?;
            for rho in self.densities(net, i) {
                write!(w, ",{rho}")?;
            }
            for out in &self.outflows[i] {
                write!(w, ",{out}")?;
            }
            writeln!(w, ",{}", self.residuals[i])?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SimOptions {
    pub dt: f64,
    /// Record every n-th step (the initial state is always recorded).
    pub record_every: usize,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions { dt: 1e-3, record_every: 1 }
    }
}

fn check_options(opts: &SimOptions, horizon: f64) -> Result<(), SimError> {
    if !(opts.dt > 0.0 && opts.dt.is_finite()) {
        return Err(SimError::BadOptions(format!("dt = {} must be positive", opts.dt)));
    }
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(SimError::BadOptions(format!("horizon = {horizon} must be nonnegative")));
    }
    if opts.record_every == 0 {
        return Err(SimError::BadOptions("record_every must be at least 1".into()));
    }
    Ok(())
}

/// One classic Runge-Kutta step returning the increment.
fn rk4_increment(f: &impl Fn(f64, &[f64]) -> Vec<f64>, t: f64, y: &[f64], dt: f64) -> Vec<f64> {
    let k1 = f(t, y);
    let mid1: Vec<f64> = y.iter().zip(&k1).map(|(a, k)| a + 0.5 * dt * k).collect();
    let k2 = f(t + 0.5 * dt, &mid1);
    let mid2: Vec<f64> = y.iter().zip(&k2).map(|(a, k)| a + 0.5 * dt * k).collect();
    let k3 = f(t + 0.5 * dt, &mid2);
    let end: Vec<f64> = y.iter().zip(&k3).map(|(a, k)| a + dt * k).collect();
    let k4 = f(t + dt, &end);
    (0..y.len())
        .map(|i| dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

/// Shared stepping core over either coordinate chart.
struct Stepper<'a> {
    net: &'a Network,
    compact: bool,
    jam_scale: f64,
}

impl<'a> Stepper<'a> {
    fn new(net: &'a Network, compact: bool) -> Self {
        Stepper { net, compact, jam_scale: net.max_jam().max(1.0) }
    }

    fn to_state(&self, y: &[f64]) -> State {
        if self.compact {
            CompactState { coords: y.to_vec() }.to_state(self.net)
        } else {
            State::new(self.net, y.to_vec())
        }
    }

    /// Drift in chart coordinates plus the plain drift.
    fn drift(&self, y: &[f64], d: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let state = self.to_state(y);
        let plain = vector_field(self.net, &state, d);
        if !self.compact {
            return (plain.clone(), plain);
        }
        let chart = plain
            .iter()
            .enumerate()
            .map(|(l, &f)| {
                if self.net.link(l).is_onramp() {
                    let scale = 1.0 - y[l];
                    scale * scale * f
                } else {
                    f
                }
            })
            .collect();
        (chart, plain)
    }

    /// Clamp `y` into the chart box; returns the worst relative clamp and
    /// the offending link.
    fn clamp(&self, y: &mut [f64]) -> (f64, usize) {
        let mut worst = (0.0, 0);
        for l in 0..y.len() {
            let link = self.net.link(l);
            let (lo, hi, scale) = if link.is_onramp() {
                if self.compact {
                    (0.0, 1.0, 1.0)
                } else {
                    (0.0, f64::INFINITY, self.jam_scale)
                }
            } else {
                let jam = link.jam().unwrap_or(self.jam_scale);
                (0.0, jam, jam)
            };
            let clamped = y[l].clamp(lo, hi);
            let rel = (y[l] - clamped).abs() / scale;
            if rel > worst.0 {
                worst = (rel, l);
            }
            y[l] = clamped;
        }
        worst
    }

    /// Advance one output step of size `dt`. Compact runs subdivide so no
    /// substep moves a queue coordinate much beyond [`HAT_SUBSTEP`]; plain
    /// runs take the step whole and reject on an oversized clamp.
    fn advance(
        &self,
        f: &impl Fn(f64, &[f64]) -> Vec<f64>,
        t: f64,
        y: &mut Vec<f64>,
        dt: f64,
    ) -> Result<f64, SimError> {
        let substeps = if self.compact {
            let drift = f(t, y);
            let fastest = self
                .net
                .onramps()
                .iter()
                .map(|&r| drift[r].abs())
                .fold(0.0, f64::max);
            ((dt * fastest / HAT_SUBSTEP).ceil() as usize).clamp(1, MAX_SUBSTEPS)
        } else {
            1
        };
        let h = dt / substeps as f64;
        let mut worst = 0.0_f64;
        for sub in 0..substeps {
            let ts = t + sub as f64 * h;
            let inc = rk4_increment(f, ts, y, h);
            for (a, b) in y.iter_mut().zip(&inc) {
                *a += b;
            }
            let (clamp_rel, link) = self.clamp(y);
            worst = worst.max(clamp_rel);
            if !self.compact && clamp_rel > CLAMP_REJECT_FRAC {
                return Err(SimError::StepRejected {
                    t: ts + h,
                    link: self.net.link_id(link).to_string(),
                    amount: clamp_rel,
                });
            }
        }
        Ok(worst)
    }
}

fn run(
    stepper: &Stepper,
    y0: Vec<f64>,
    inputs: &InputSchedule,
    horizon: f64,
    opts: &SimOptions,
    coords: Coordinates,
) -> Result<Trajectory, SimError> {
    check_options(opts, horizon)?;
    let steps = (horizon / opts.dt).round() as usize;
    let mut traj = Trajectory {
        coords,
        times: Vec::new(),
        states: Vec::new(),
        outflows: Vec::new(),
        drifts: Vec::new(),
        residuals: Vec::new(),
        max_clamp_rel: 0.0,
    };
    let mut y = y0;
    let record = |traj: &mut Trajectory, t: f64, y: &[f64]| {
        let state = stepper.to_state(y);
        let sol = flows(stepper.net, &state);
        let (_, plain) = stepper.drift(y, inputs.value_at(t));
        let residual = stepper
            .net
            .ordinaries()
            .iter()
            .map(|&l| plain[l].abs())
            .fold(0.0, f64::max);
        traj.times.push(t);
        traj.states.push(y.to_vec());
        traj.outflows.push(sol.outflow);
        traj.drifts.push(plain);
        traj.residuals.push(residual);
    };
    record(&mut traj, 0.0, &y);
    let f = |tt: f64, yy: &[f64]| stepper.drift(yy, inputs.value_at(tt)).0;
    for step in 0..steps {
        let t = step as f64 * opts.dt;
        let clamp_rel = stepper.advance(&f, t, &mut y, opts.dt)?;
        traj.max_clamp_rel = traj.max_clamp_rel.max(clamp_rel);
        if (step + 1) % opts.record_every == 0 || step + 1 == steps {
            record(&mut traj, (step + 1) as f64 * opts.dt, &y);
        }
    }
    Ok(traj)
}

/// Integrate in plain coordinates from `init` under `inputs` for `horizon`
/// time units.
pub fn simulate(
    net: &Network,
    init: &State,
    inputs: &InputSchedule,
    horizon: f64,
    opts: &SimOptions,
) -> Result<Trajectory, SimError> {
    let stepper = Stepper::new(net, false);
    run(&stepper, init.densities().to_vec(), inputs, horizon, opts, Coordinates::Plain)
}

/// Integrate with onramp queues in compactified coordinates under constant
/// inputs `d`.
pub fn simulate_compactified(
    net: &Network,
    init: &CompactState,
    d: &[f64],
    horizon: f64,
    opts: &SimOptions,
) -> Result<Trajectory, SimError> {
    let stepper = Stepper::new(net, true);
    run(
        &stepper,
        init.coords().to_vec(),
        &InputSchedule::constant(d.to_vec()),
        horizon,
        opts,
        Coordinates::Compact,
    )
}

#[derive(Debug, Clone)]
pub struct SettleOptions {
    /// Flow tolerance; defaults to 1e-4 times the largest critical flow.
    pub tol: Option<f64>,
    pub dt: f64,
    /// Trailing window over which onramp outflows must be stable.
    pub window: f64,
    pub max_horizon: f64,
    /// Start state; defaults to the empty network.
    pub init: Option<CompactState>,
}

impl Default for SettleOptions {
    fn default() -> Self {
        SettleOptions { tol: None, dt: 1e-3, window: 1.0, max_horizon: 50.0, init: None }
    }
}

/// Outcome of [`settle`]; `converged = false` means the horizon ran out
/// (callers may retry with a longer one).
#[derive(Debug, Clone)]
pub struct SettleOutcome {
    pub state: CompactState,
    pub flows: FlowSolution,
    pub time: f64,
    pub converged: bool,
    /// Ordinary-link drift magnitude at the final state.
    pub residual: f64,
}

/// Run the compactified dynamics under constant inputs until the network
/// settles: ordinary drifts below tolerance, onramp outflows stable over the
/// trailing window, and every queue with a persistent outflow deficit pushed
/// against the saturated boundary (a diverging queue has not settled while
/// its coordinate still moves).
pub fn settle(net: &Network, d: &[f64], opts: &SettleOptions) -> Result<SettleOutcome, SimError> {
    assert_eq!(d.len(), net.onramps().len(), "one input per onramp");
    if !(opts.dt > 0.0) || !(opts.window > 0.0) || !(opts.max_horizon > 0.0) {
        return Err(SimError::BadOptions("settle needs positive dt, window, horizon".into()));
    }
    let tol = match opts.tol {
        Some(t) if t > 0.0 => t,
        Some(t) => return Err(SimError::BadOptions(format!("tol = {t} must be positive"))),
        None => 1e-4 * max_critical_flow(net)?.max(1.0),
    };
    let stepper = Stepper::new(net, true);
    let mut y = opts
        .init
        .clone()
        .unwrap_or_else(|| CompactState::zero(net))
        .coords()
        .to_vec();
    let window_steps = (opts.window / opts.dt).ceil() as usize;
    let mut ramp_history: Vec<Vec<f64>> = Vec::new();
    let steps = (opts.max_horizon / opts.dt).ceil() as usize;
    let mut t = 0.0;
    let mut converged = false;
    for step in 0..=steps {
        t = step as f64 * opts.dt;
        let state = stepper.to_state(&y);
        let sol = flows(net, &state);
        let (_, plain) = stepper.drift(&y, d);
        let residual =
            net.ordinaries().iter().map(|&l| plain[l].abs()).fold(0.0, f64::max);
        let ramp_out: Vec<f64> =
            net.onramps().iter().map(|&r| sol.outflow[r]).collect();
        ramp_history.push(ramp_out);
        if ramp_history.len() > window_steps + 1 {
            ramp_history.remove(0);
        }
        if ramp_history.len() > window_steps && residual <= tol {
            let stable = (0..net.onramps().len()).all(|pos| {
                let lo =
                    ramp_history.iter().map(|h| h[pos]).fold(f64::INFINITY, f64::min);
                let hi =
                    ramp_history.iter().map(|h| h[pos]).fold(f64::NEG_INFINITY, f64::max);
                hi - lo <= tol
            });
            let deficits_pinned = net.onramps().iter().enumerate().all(|(pos, &r)| {
                d[pos] - sol.outflow[r] <= tol || y[r] >= QUEUE_DIVERGED_CUT
            });
            if stable && deficits_pinned {
                converged = true;
                break;
            }
        }
        if step == steps {
            break;
        }
        let f = |_tt: f64, yy: &[f64]| stepper.drift(yy, d).0;
        stepper.advance(&f, t, &mut y, opts.dt)?;
    }
    let state = CompactState { coords: y };
    let plain_state = state.to_state(net);
    let sol = flows(net, &plain_state);
    let (_, plain) = stepper.drift(state.coords(), d);
    let residual = net.ordinaries().iter().map(|&l| plain[l].abs()).fold(0.0, f64::max);
    Ok(SettleOutcome { state, flows: sol, time: t, converged, residual })
}
