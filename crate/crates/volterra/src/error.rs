//! Crate-wide error type.
//!
//! Every fallible operation returns [`Result`].  Variants carry enough context
//! (offending value, threshold, name of the missing piece) for the CLI to print
//! an actionable one-line message; none of them are ever produced for
//! conditions a caller could not have predicted from the documented contract.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Kernel evaluation at t = 0 when the kernel diverges there.
    #[error("kernel is singular at the origin (H = {hurst} < 1/2); evaluate at t > 0 or use cell integrals")]
    SingularAtOrigin { hurst: f64 },

    /// Kernel evaluation at negative time.
    #[error("kernel argument must be nonnegative, got t = {t}")]
    NonPositiveTime { t: f64 },

    /// Resolvent grid too coarse for the requested coefficient magnitude.
    #[error("time step {dt} too coarse for resolvent with |a| = {a_norm}: first-cell mass {mass} exceeds 0.5")]
    GridTooCoarse { dt: f64, a_norm: f64, mass: f64 },

    /// First-kind resolvent requires a nonnegative kernel.
    #[error("scalar resolvent requires a nonnegative kernel; node {index} has value {value}")]
    NegativeKernel { index: usize, value: f64 },

    /// Grönwall verification called with data violating x ≤ f + k⋆x.
    #[error("Gronwall hypothesis x <= f + k*x fails at node {index}: lhs {lhs} > rhs {rhs}")]
    HypothesisViolated { index: usize, lhs: f64, rhs: f64 },

    /// Two objects built on different grids were combined.
    #[error("grid mismatch: {context}")]
    GridMismatch { context: String },

    /// Curve evaluation outside [0, X_max] for a grid-backed curve.
    #[error("evaluation point x = {x} outside curve domain [0, {x_max}]")]
    OutOfDomain { x: f64, x_max: f64 },

    /// Weight parameters outside the admissible range.
    #[error("weight w(x) = x^beta e^(-cx) not admissible: {reason}")]
    WeightNotAdmissible { reason: String },

    /// A simulation produced non-finite state.
    #[error("simulation diverged at step {step} (path {path}): state is not finite; reduce the step or the coefficients")]
    UnstableConfig { step: usize, path: usize },

    /// An operation needed the lifted curve but only a scalar ensemble was given.
    #[error("operation requires a companion lift ensemble (curve values λ(r, t-r)); simulate the lift first")]
    MissingLift,

    /// Restart requested past the stored increments.
    #[error("stored increments end at step {available}, restart needs step {requested}")]
    IncrementMissing { requested: usize, available: usize },

    /// Forward-curve (resolvent) check only applies to linear drift.
    #[error("forward-curve check requires linear drift b(x) = a x; model has {drift}")]
    NonlinearDrift { drift: String },

    /// Completely monotone quadrature requested for a kernel without a
    /// nonnegative Laplace representation in this crate.
    #[error("kernel {kind} has no completely monotone representation supported here")]
    UnsupportedKernel { kind: String },

    /// OU-lift started from a curve that is not a finite mixture of the
    /// quadrature exponentials.
    #[error("initial curve is not representable as sum_i rho_i y0_i e^(-z_i x): {reason}")]
    InitialCurveNotRepresentable { reason: String },

    /// Coupled comparison called on ensembles with different seeds/grids.
    #[error("ensembles are not coupled: {context}")]
    CouplingMismatch { context: String },

    /// Tangent process requested for coefficients without the needed derivatives.
    #[error("coefficients are not twice differentiable: {which}")]
    CoefficientsNotDifferentiable { which: String },

    /// Second variation (or Hessian) with multiplicative noise needs H > 1/4.
    #[error("second-order objects with non-constant sigma need H > 1/4; model has H = {hurst}")]
    HurstBelowThreshold { hurst: f64 },

    /// Backward-PDE operations require bounded C^2 coefficients.
    #[error("model violates the bounded twice-differentiable coefficient requirement: {reason}")]
    ModelNotCompliant { reason: String },

    /// Nested Monte Carlo request above the configured budget.
    #[error("nested budget exceeded: outer {outer} x inner {inner} > cap {cap}")]
    NestedBudgetExceeded { outer: usize, inner: usize, cap: usize },

    /// Finite-difference stencil for ∂t u leaves [0, T].
    #[error("time stencil t ± {dt_fd} leaves [0, {t_max}] at t = {t}")]
    DegenerateStencil { t: f64, dt_fd: f64, t_max: f64 },

    /// Fokker–Planck test function outside the supported families.
    #[error("test function not in a supported family: {reason}")]
    TestFunctionNotCompliant { reason: String },

    /// Configuration file problems (CLI).
    #[error("config: {0}")]
    Config(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
