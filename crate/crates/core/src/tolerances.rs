//! Numeric tolerances shared across the library.
//!
//! Every comparison against a threshold goes through one of these constants so
//! the contracts stay auditable in one place. Values are relative unless the
//! name says otherwise.

/// Tie detection between supply constraints competing for the same junction.
pub const ALPHA_TIE_REL: f64 = 1e-12;

/// Slack for the feasibility trichotomy: flows within this relative band of
/// the critical flow are classified on the boundary rather than strictly
/// inside or outside.
pub const FEASIBILITY_SLACK_REL: f64 = 1e-9;

/// Bisection stops when |demand - supply| drops below this fraction of the
/// demand supremum.
pub const BISECTION_FLOW_REL: f64 = 1e-10;

/// Post-step density clamp larger than this fraction of the jam density
/// rejects the step (the integrator left the admissible box by too much).
pub const CLAMP_REJECT_FRAC: f64 = 1e-6;

/// Pivot and feasibility tolerance of the simplex solver.
pub const LP_PIVOT: f64 = 1e-9;

/// Slack allowed in the simplex optimality certificate (complementary
/// slackness and sign conditions on reduced costs).
pub const LP_CERTIFICATE: f64 = 1e-8;

/// Step for central finite differences used to cross-check analytic
/// derivative entries.
pub const FD_STEP: f64 = 1e-6;

/// Agreement required between analytic and finite-difference derivative
/// entries, scaled by max(1, |entry|).
pub const FD_AGREE: f64 = 1e-5;

/// States closer than this (relative) to a regime boundary are skipped by
/// derivative-based scans; one-sided formulas are meaningless there.
pub const REGIME_MARGIN: f64 = 1e-9;

/// Absolute threshold on off-diagonal sign and column sums when testing a
/// matrix for compartmental structure.
pub const COMPARTMENTAL_ABS: f64 = 1e-12;

/// Off-ramp fractions at a junction must agree to this absolute tolerance to
/// count as uniform.
pub const GAMMA_UNIFORM_ABS: f64 = 1e-12;

/// Onramp queue coordinate (in [0,1]) at or above this value is treated as a
/// diverging queue when deciding whether a run has settled.
pub const QUEUE_DIVERGED_CUT: f64 = 0.9995;
