//! Command-line front end: validate network files, integrate the dynamics,
//! classify input flows, compute metering plans, and run the qualitative
//! analyses. Tables use six significant digits; CSV files keep full double
//! precision. Exit codes: 0 success, 1 analysis or validation failure,
//! 2 bad arguments, 3 no convergence within the horizon.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use trafficnet::analysis::{
    compartmental_weights, cooperativity_scan, is_compartmental, lyapunov_trace, probe_safe,
    AnalysisError, StateSampler,
};
use trafficnet::dynamics::{active_mode, mode_jacobian, State};
use trafficnet::equilibrium::{
    classify, equilibrium_infeasible, freeflow_equilibrium, stability_certificate, Density,
    EquilibriumError, EquilibriumResult, Feasibility,
};
use trafficnet::metering::{optimal_metering, verify_plan, MeterRate, MeteringError};
use trafficnet::network::{validate, Network, NetworkError};
use trafficnet::sim::{
    simulate, simulate_compactified, CompactState, InputSchedule, SettleOptions, SimError,
    SimOptions,
};

/// Default directory for generated CSV files when `--output` is not given.
const OUTDIR_VAR: &str = "TRAFFICNET_OUTDIR";

#[derive(Parser)]
#[command(
    name = "trafficnet",
    version,
    about = "Macroscopic traffic network dynamics, equilibria, and ramp metering"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct NetArgs {
    /// Network description (JSON).
    network: PathBuf,
    /// Constant input override `<onramp id>=<veh/hr>`; repeatable.
    #[arg(long = "demand", value_name = "ID=FLOW")]
    demand: Vec<String>,
}

#[derive(Args)]
struct SettleArgs {
    /// Flow tolerance; defaults to 1e-4 of the largest critical flow.
    #[arg(long)]
    tol: Option<f64>,
    /// Integration step (hours).
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    /// Give up after this many hours without convergence.
    #[arg(long, default_value_t = 50.0)]
    max_horizon: f64,
}

#[derive(Subcommand)]
enum Command {
    /// Check a network file against the model's structural assumptions.
    Validate {
        /// Network description (JSON).
        network: PathBuf,
    },
    /// Integrate the dynamics and write a trajectory CSV.
    Simulate {
        #[command(flatten)]
        net: NetArgs,
        /// Run length in hours.
        #[arg(long, default_value_t = 10.0)]
        horizon: f64,
        /// Integration step (hours).
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        /// Keep every n-th sample in the CSV.
        #[arg(long, default_value_t = 100)]
        record_every: usize,
        /// Initial density `<link id>=<veh/mi>`; unlisted links start empty.
        #[arg(long = "init", value_name = "ID=DENSITY")]
        init: Vec<String>,
        /// Integrate onramp queues in compact coordinates; never rejects a
        /// step, so overloaded queues grow without bound instead of erroring.
        #[arg(long)]
        compact: bool,
        /// Trajectory CSV path.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Classify an input flow and compute the equilibrium it admits.
    Equilibrium {
        #[command(flatten)]
        net: NetArgs,
        #[command(flatten)]
        settle: SettleArgs,
    },
    /// Compute the throughput-optimal ramp metering plan.
    Meter {
        #[command(flatten)]
        net: NetArgs,
        /// Settle the metered network and check it lands on the plan.
        #[arg(long)]
        verify: bool,
        #[command(flatten)]
        settle: SettleArgs,
    },
    /// Scan for cooperativity violations; certify merge-only networks.
    Analyze {
        #[command(flatten)]
        net: NetArgs,
        /// States to sample.
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Lyapunov trace CSV path (merge-only networks).
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

struct Failure {
    code: u8,
    message: String,
}

fn fail(code: u8, message: impl Into<String>) -> Failure {
    Failure { code, message: message.into() }
}

impl From<NetworkError> for Failure {
    fn from(e: NetworkError) -> Self {
        fail(2, e.to_string())
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::BadOptions(_) => fail(2, e.to_string()),
            SimError::StepRejected { .. } => {
                fail(1, format!("{e}; rerun with --compact or a smaller --dt"))
            }
            _ => fail(1, e.to_string()),
        }
    }
}

impl From<EquilibriumError> for Failure {
    fn from(e: EquilibriumError) -> Self {
        match e {
            EquilibriumError::NotConverged { time, residual } => fail(
                3,
                format!("no convergence by t={time} h (residual {residual}); raise --max-horizon"),
            ),
            _ => fail(1, e.to_string()),
        }
    }
}

impl From<MeteringError> for Failure {
    fn from(e: MeteringError) -> Self {
        match e {
            MeteringError::NotConverged { time, residual } => fail(
                3,
                format!("no convergence by t={time} h (residual {residual}); raise --max-horizon"),
            ),
            _ => fail(1, e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    // Die quietly on SIGPIPE like other unix filters instead of panicking
    // when a downstream `head` closes the pipe.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Validate { network } => cmd_validate(&network),
        Command::Simulate { net, horizon, dt, record_every, init, compact, output } => {
            cmd_simulate(&net, horizon, dt, record_every, &init, compact, output)
        }
        Command::Equilibrium { net, settle } => cmd_equilibrium(&net, &settle),
        Command::Meter { net, verify, settle } => cmd_meter(&net, verify, &settle),
        Command::Analyze { net, samples, seed, output } => {
            cmd_analyze(&net, samples, seed, output)
        }
    }
}

/// Six significant digits; decimal notation at table scales, scientific
/// below them.
fn sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    if x.abs() < 1e-4 {
        return format!("{x:.5e}");
    }
    let decimals = (5 - x.abs().log10().floor() as i64).max(0) as usize;
    format!("{x:.decimals$}")
}

fn load(net_args: &NetArgs) -> Result<(Network, Vec<f64>), Failure> {
    let net = Network::from_file(&net_args.network)?;
    let mut overrides = BTreeMap::new();
    for pair in &net_args.demand {
        let (id, value) = split_pair(pair)?;
        if overrides.insert(id.to_string(), value).is_some() {
            return Err(fail(2, format!("demand for {id:?} given twice")));
        }
    }
    let d = net.demands_with_overrides(&overrides)?;
    if let Some(bad) = d.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
        return Err(fail(2, format!("input flow {bad} must be finite and nonnegative")));
    }
    Ok((net, d))
}

fn split_pair(pair: &str) -> Result<(&str, f64), Failure> {
    let (id, raw) = pair
        .split_once('=')
        .ok_or_else(|| fail(2, format!("expected <id>=<value>, got {pair:?}")))?;
    let value = raw
        .parse::<f64>()
        .map_err(|_| fail(2, format!("{raw:?} is not a number in {pair:?}")))?;
    Ok((id, value))
}

/// `--output` wins; otherwise `$TRAFFICNET_OUTDIR/<stem>-<suffix>`, falling
/// back to the working directory.
fn output_path(explicit: Option<PathBuf>, network: &Path, suffix: &str) -> PathBuf {
    if let Some(p) = explicit {
        return p;
    }
    let stem = network.file_stem().and_then(|s| s.to_str()).unwrap_or("network");
    let dir = std::env::var_os(OUTDIR_VAR).map(PathBuf::from).unwrap_or_default();
    dir.join(format!("{stem}-{suffix}"))
}

fn cmd_validate(path: &Path) -> Result<(), Failure> {
    let net = Network::from_file(path)?;
    let report = validate(&net);
    print!("{report}");
    if report.is_ok() {
        Ok(())
    } else {
        Err(fail(1, format!("{} assumption violation(s)", report.violations.len())))
    }
}

fn cmd_simulate(
    net_args: &NetArgs,
    horizon: f64,
    dt: f64,
    record_every: usize,
    init: &[String],
    compact: bool,
    output: Option<PathBuf>,
) -> Result<(), Failure> {
    let (net, d) = load(net_args)?;
    let mut rho = vec![0.0; net.num_links()];
    for pair in init {
        let (id, value) = split_pair(pair)?;
        let l = net
            .link_by_id(id)
            .ok_or_else(|| fail(2, format!("no link named {id:?}")))?;
        if value < 0.0 || net.link(l).jam().is_some_and(|jam| value > jam) {
            return Err(fail(2, format!("density {value} out of range for link {id:?}")));
        }
        rho[l] = value;
    }
    let state = State::new(&net, rho);
    let opts = SimOptions { dt, record_every };
    let traj = if compact {
        let cinit = CompactState::from_state(&net, &state);
        simulate_compactified(&net, &cinit, &d, horizon, &opts)?
    } else {
        simulate(&net, &state, &InputSchedule::constant(d), horizon, &opts)?
    };
    let path = output_path(output, &net_args.network, "trajectory.csv");
    let file = File::create(&path).map_err(|e| fail(2, format!("{}: {e}", path.display())))?;
    traj.write_csv(&net, BufWriter::new(file))
        .map_err(|e| fail(1, format!("writing {}: {e}", path.display())))?;
    println!("{} samples over {} h -> {}", traj.len(), sig6(horizon), path.display());
    Ok(())
}

fn print_equilibrium_table(net: &Network, result: &EquilibriumResult) {
    if let (Some(flows), Some(densities)) = (&result.flows, &result.densities) {
        println!("{:<10} {:>14} {:>14}", "link", "flow veh/h", "density veh/mi");
        for (l, link) in net.links().iter().enumerate() {
            let rho = match densities[l] {
                Density::Finite(x) => sig6(x),
                Density::Infinite => "inf".into(),
            };
            println!("{:<10} {:>14} {:>14}", link.id, sig6(flows[l]), rho);
        }
    }
    let describe = |u: Option<bool>| match u {
        Some(true) => "unique",
        Some(false) => "not unique",
        None => "unknown",
    };
    println!("flows: {}; densities: {}", describe(result.flows_unique), describe(result.densities_unique));
}

fn settle_options(settle: &SettleArgs) -> SettleOptions {
    SettleOptions {
        tol: settle.tol,
        dt: settle.dt,
        max_horizon: settle.max_horizon,
        ..SettleOptions::default()
    }
}

fn cmd_equilibrium(net_args: &NetArgs, settle: &SettleArgs) -> Result<(), Failure> {
    let (net, d) = load(net_args)?;
    for (&r, flow) in net.onramps().iter().zip(&d) {
        println!("input {} = {} veh/h", net.link(r).id, sig6(*flow));
    }

    let classified = match classify(&net, &d) {
        Ok(result) => result,
        Err(EquilibriumError::InadmissibleDemand { onramp, demand, bound, .. }) => {
            println!(
                "input {} = {} exceeds the queue's discharge bound {}; queue cannot drain",
                onramp,
                sig6(demand),
                sig6(bound)
            );
            // Fall through to the diverging-queue equilibrium.
            EquilibriumResult {
                classification: Feasibility::Infeasible,
                flows: None,
                densities: None,
                violations: Vec::new(),
                flows_unique: None,
                densities_unique: None,
                certificate: None,
            }
        }
        Err(e) => return Err(e.into()),
    };
    println!("classification: {}", classified.classification);

    if classified.classification == Feasibility::Infeasible {
        for v in &classified.violations {
            println!(
                "  link {} routed flow {} exceeds capacity {}",
                net.link(v.link).id,
                sig6(v.flow),
                sig6(v.critical_flow)
            );
        }
        let result = equilibrium_infeasible(&net, &d, &settle_options(settle))?;
        println!("diverging-queue equilibrium (settled):");
        print_equilibrium_table(&net, &result);
        return Ok(());
    }

    let result = freeflow_equilibrium(&net, &d)?;
    print_equilibrium_table(&net, &result);
    if classified.classification == Feasibility::StrictlyFeasible {
        let cert = stability_certificate(&net, &result)?;
        println!(
            "stability: triangular jacobian, slowest decay rate {} /h",
            sig6(cert.diagonal_max)
        );
    }
    Ok(())
}

fn cmd_meter(net_args: &NetArgs, verify: bool, settle: &SettleArgs) -> Result<(), Failure> {
    let (net, d) = load(net_args)?;
    let plan = optimal_metering(&net, &d)?;
    println!("{:<10} {:>12} {:>12} {:>12}", "onramp", "input", "admitted", "rate");
    for (pos, &r) in net.onramps().iter().enumerate() {
        let rate = match plan.rates[pos] {
            MeterRate::Metered(m) => sig6(m),
            MeterRate::Unmetered => "unmetered".into(),
        };
        println!(
            "{:<10} {:>12} {:>12} {:>12}",
            net.link(r).id,
            sig6(d[pos]),
            sig6(plan.s_star[pos]),
            rate
        );
    }
    println!("throughput: {} veh/h", sig6(plan.throughput));
    if plan.alternative_optima {
        println!("note: other admitted-flow vectors reach the same throughput");
    }

    if verify {
        let report = verify_plan(&net, &d, &plan, &settle_options(settle))?;
        println!("verified: settled within {} of capacity per link", sig6(report.max_delta));
        println!("{:<10} {:>14}", "link", "settled veh/h");
        for (l, link) in net.links().iter().enumerate() {
            println!("{:<10} {:>14}", link.id, sig6(report.settled_flows[l]));
        }
        println!(
            "freeflow: {}; junction scaling min {}",
            if report.freeflow { "yes" } else { "no" },
            sig6(report.min_alpha)
        );
    }
    Ok(())
}

fn cmd_analyze(
    net_args: &NetArgs,
    samples: usize,
    seed: u64,
    output: Option<PathBuf>,
) -> Result<(), Failure> {
    let (net, d) = load(net_args)?;
    let mut sampler = StateSampler::seeded(seed);
    let report = cooperativity_scan(&net, &mut sampler, samples);
    println!(
        "sampled {} states ({} skipped near boundaries, {} unconfirmed candidates)",
        report.samples, report.skipped, report.unconfirmed
    );
    println!(
        "freeflow states: {} of {}, all cooperative: {}",
        report.freeflow_samples,
        report.samples,
        if report.cooperative_in_freeflow { "yes" } else { "no" }
    );
    if report.pair_counts.is_empty() {
        println!("no negative flow coupling found");
    } else {
        println!("{} states with negative coupling:", report.violating_states);
        for (&(l, k), count) in &report.pair_counts {
            println!(
                "  dF_{}/drho_{} < 0 at {count} state(s)",
                net.link(l).id,
                net.link(k).id
            );
        }
        if let Some(worst) = report
            .violations
            .iter()
            .min_by(|a, b| a.value.total_cmp(&b.value))
        {
            let junction = worst
                .junction
                .map(|v| net.junction_id(v).to_string())
                .unwrap_or_else(|| "?".into());
            println!(
                "  steepest: dF_{}/drho_{} = {} (junction {})",
                net.link(worst.pair.0).id,
                net.link(worst.pair.1).id,
                sig6(worst.value),
                junction
            );
        }
    }

    match compartmental_weights(&net) {
        Err(AnalysisError::ConditionsNotMet { condition }) => {
            println!("weighted-compartmental certificate not applicable: {condition}");
            Ok(())
        }
        Ok(weights) => {
            println!("compartmental weights:");
            for (l, link) in net.links().iter().enumerate() {
                println!("  {:<10} {}", link.id, sig6(weights.per_link[l]));
            }
            let mut checked = 0usize;
            let mut bad = 0usize;
            while checked < 200 {
                let state = sampler.sample(&net);
                if !probe_safe(&net, &state, 1e-9) {
                    continue;
                }
                let mode = active_mode(&net, &state).resolve(&net);
                let Ok(jac) = mode_jacobian(&net, &state, &mode) else { continue };
                if !is_compartmental(&weights.scale_rows(&jac)).ok {
                    bad += 1;
                }
                checked += 1;
            }
            println!("weighted jacobian compartmental at {}/{checked} sampled states", checked - bad);
            if bad > 0 {
                return Err(fail(1, "weighted jacobian lost the compartmental property"));
            }

            let traj = simulate_compactified(
                &net,
                &CompactState::zero(&net),
                &d,
                8.0,
                &SimOptions { dt: 1e-3, record_every: 100 },
            )?;
            let trace = lyapunov_trace(&net, &traj, &weights);
            println!(
                "weighted drift norm from the empty state: {} -> {} over {} h ({})",
                sig6(trace.values.first().copied().unwrap_or(0.0)),
                sig6(trace.values.last().copied().unwrap_or(0.0)),
                sig6(trace.times.last().copied().unwrap_or(0.0)),
                if trace.nonincreasing { "nonincreasing" } else { "NOT nonincreasing" }
            );
            let path = output_path(output, &net_args.network, "lyapunov.csv");
            let file =
                File::create(&path).map_err(|e| fail(2, format!("{}: {e}", path.display())))?;
            let mut w = BufWriter::new(file);
            (|| -> std::io::Result<()> {
                writeln!(w, "t,v")?;
                for (t, v) in trace.times.iter().zip(&trace.values) {
                    writeln!(w, "{t},{v}")?;
                }
                w.flush()
            })()
            .map_err(|e| fail(1, format!("writing {}: {e}", path.display())))?;
            println!("trace -> {}", path.display());
            if !trace.nonincreasing {
                return Err(fail(1, "weighted drift norm increased along the trajectory"));
            }
            Ok(())
        }
    }
}
