//! Monte Carlo toolkit for stochastic Volterra equations (SVEs) with singular
//! kernels and for their infinite-dimensional forward-curve lift.
//!
//! The central object is the d-dimensional convolution equation
//!
//! ```text
//! X_t = X_0(t) + ∫_0^t K(t-s) b(X_s) ds + ∫_0^t K(t-s) σ(X_s) dW_s,
//! ```
//!
//! driven by an m-dimensional Brownian motion, where the kernel `K` may blow
//! up at the origin (power law `t^{H-1/2}` with `H < 1/2` being the prototypical
//! rough case).  `X` is neither Markovian nor a semimartingale, but the forward
//! curve `λ(t, x)` — the time-t history integrated against the kernel shifted
//! `x` into the future — solves a stochastic transport equation on a weighted
//! Sobolev space and *is* Markovian.  The crate simulates both objects on a common
//! probability space and verifies the structural identities connecting them:
//! the lift property `λ(t, 0) = X_t`, the flow/Markov property, variation-of-
//! constants formulas, tangent (first/second variation) processes, and the
//! backward Kolmogorov and Fokker–Planck equations in mild and singular form.
//!
//! Module map:
//!
//! * [`kernels`] — kernel evaluation, exact cell integrals, resolvents of the
//!   first and second kind, Volterra–Grönwall checks, integrability checks.
//! * [`wspace`] — the weighted spaces `L²_w` / `H¹_w` with `w(x) = x^β e^{-cx}`:
//!   quadrature, shifts, RKHS evaluation bounds.
//! * [`sve`] — Euler-type simulation of the SVE itself, mollified variants,
//!   moment estimators, and a pathwise Itô-formula residual.
//! * [`lift`] — simulation of the forward curve on a space grid, flow-property
//!   restart checks, forward-curve (mean) checks, Markov-property statistics.
//! * [`ou_lift`] — the Laplace-transform representation of completely monotone
//!   kernels by a mixture of Ornstein–Uhlenbeck factors.
//! * [`tangent`] — first and second variation processes of the lift.
//! * [`kolmogorov`] — value functions, singular gradients/Hessians, backward
//!   PDE and Fokker–Planck residuals, martingale and tower-property checks.
//! * [`io`] — CSV and binary export of ensembles and reports.
//!
//! Everything is deterministic: randomness comes from a counter-based
//! generator keyed by `(seed, stream, path, step, coordinate)` ([`rng`]), and
//! all cross-path reductions are serial compensated sums, so results are
//! bitwise reproducible for a fixed seed regardless of thread count.

pub mod error;
pub mod grids;
pub mod io;
pub mod kernels;
pub mod kolmogorov;
pub mod lift;
pub mod mc;
pub mod ou_lift;
pub mod rng;
pub mod sve;
pub mod tangent;
pub mod wspace;

pub use error::{Error, Result};
pub use grids::TimeGrid;
pub use kernels::KernelSpec;
pub use mc::MCEstimate;
pub use wspace::{Curve, SpaceGrid, WeightSpec};
