//! First and second variation (tangent) processes of the forward-curve lift
//!
//! Differentiating the lift's solution map in its initial curve produces the
//! first variation ζ_h — the pathwise directional derivative of λ in a curve
//! direction h — and, one order up, the second variation ζ_{h₁,h₂}.  Both
//! solve *linear* transport equations driven by the same kernel impulses and
//! the same Brownian increments as the lift they differentiate:
//!
//! ```text
//! ζ_h(t) = S(t−s)h + ∫ₛᵗ S(t−r)K ∇b(λ(r,0))·ζ_h(r,0) dr
//!                  + ∫ₛᵗ S(t−r)K ∇σ(λ(r,0))·ζ_h(r,0) dW_r,       ζ_h(s) = h,
//! ```
//!
//! while ζ_{h₁,h₂} starts from zero and adds the bilinear source
//! `D²b(λ(r,0))(ζ_{h₁}(r,0), ζ_{h₂}(r,0))` (same shape for σ) on top of the
//! identical first-order feedback in ζ_{h₁,h₂} itself.  The coefficients
//! enter only through spot values — the Fréchet derivatives of the composed
//! coefficients reduce to finite-dimensional gradients against the
//! evaluation-at-zero projection — so the discretisation is the lift's own
//! lattice of shifted schemes with the coefficient values replaced by their
//! directional derivatives: per space offset, the exact kernel cell integrals
//! weight the drift sources, the cell L² means weight the diffusion impulses,
//! and increments and spot states are read from the coupled [`LiftEnsemble`].
//! Because the recursion is the exact derivative of the simulation scheme, a
//! common-random-numbers bump of the initial curve reproduces ζ up to O(ε)
//! Taylor remainder — that consistency is this module's main oracle.
//!
//! Singular directions.  The canonical direction is a kernel column K e_i,
//! which for H < 1/2 is not a curve-space element: it blows up at x = 0.  It
//! transports into the space instantly — S(θ)K is finite for every θ > 0 —
//! and once t > s the recursion only evaluates the direction at strictly
//! positive arguments.  The stored initial row keeps an honest `+∞` marker at
//! the origin node, [`TangentEnsemble::spot`] refuses at the start time, and
//! the first source cell [s, s+Δt] — whose left endpoint would read
//! ev₀(ζ(s)) = ∞ — is dropped.  The exact contribution of that cell is an
//! integrable-singularity term of order Δt^{H+1/2}, so omitting it preserves
//! the scheme's order without manufacturing a finite stand-in for an infinite
//! value.  Finite directions keep their left-point first-cell source, which
//! is exactly what the derivative of the discrete scheme does.
//!
//! Mixed second variations are assembled by polarization,
//! `ζ_{h₁,h₂} = ¼(ζ_{h₁+h₂,h₁+h₂} − ζ_{h₁−h₂,h₁−h₂})` — the representation
//! the theory itself uses to define them — so the polarization identity holds
//! bitwise by construction and the diagonal recursion is the only code path
//! touching second-derivative sources.  Linearity of h ↦ ζ_h (and
//! bilinearity of the pair map) holds bitwise under power-of-two scalings of
//! the directions, because every operation in the recursion commutes with
//! exact binary rescaling; the tests pin both identities at full precision.
//!
//! The moment-bound and mollification reports deliberately evaluate their
//! reference norms through the same discrete pipeline as the ensembles
//! (node rows, the same weighted quadrature): the bound
//! `E|ζ(t)|ᵖ ≤ C|S(t−s)h|ᵖ` is then tested in the space where ζ actually
//! lives, and the source-free cases collapse to exact equalities instead of
//! interpolation-error ones.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grids::TimeGrid;
use crate::kernels::KernelSpec;
use crate::lift::LiftEnsemble;
use crate::sve::{SVEModel, SchemeWeights};
use crate::wspace::{Curve, SpaceGrid, WQuad};

/// A differentiation direction for the lift's solution map.  Kernel columns
/// are only ever consumed through shifted evaluation at strictly positive
/// arguments; everything else must be a genuine curve-space element.
#[derive(Debug, Clone, PartialEq)]
pub enum Direction {
    /// The kernel column K e_c itself (singular at the origin when H < 1/2).
    Kernel { component: usize },
    /// The mollified column S(δ)K e_c = K(δ + ·) e_c, finite for δ > 0.
    ShiftedKernel { delta: f64, component: usize },
    /// An arbitrary curve (grid-backed curves decay to zero past their grid).
    Curve(Curve),
    /// Finite linear combination Σ cᵢ hᵢ; an empty list is the zero direction.
    Combination(Vec<(f64, Direction)>),
}

impl Direction {
    fn validate(&self, d: usize) -> Result<()> {
        match self {
            Direction::Kernel { component } => {
                if *component >= d {
                    return Err(Error::Config(format!(
                        "kernel direction component {component} out of range for d = {d}"
                    )));
                }
            }
            Direction::ShiftedKernel { delta, component } => {
                if *component >= d {
                    return Err(Error::Config(format!(
                        "kernel direction component {component} out of range for d = {d}"
                    )));
                }
                if !(*delta >= 0.0) {
                    return Err(Error::Config(format!("kernel shift must be >= 0, got {delta}")));
                }
            }
            Direction::Curve(c) => {
                if c.dim != d {
                    return Err(Error::Config(format!(
                        "direction curve has dimension {} but the model needs {d}",
                        c.dim
                    )));
                }
            }
            Direction::Combination(terms) => {
                for (_, h) in terms {
                    h.validate(d)?;
                }
            }
        }
        Ok(())
    }

    /// Does ev₀ of this direction fail to exist (kernel column with a
    /// singular origin, possibly inside a combination)?
    pub fn singular_at_zero(&self, kernel: &KernelSpec) -> bool {
        match self {
            Direction::Kernel { component } => kernel.entry(*component).is_singular_at_origin(),
            Direction::ShiftedKernel { delta, component } => {
                *delta == 0.0 && kernel.entry(*component).is_singular_at_origin()
            }
            Direction::Curve(c) => c.is_singular_at_origin(),
            Direction::Combination(terms) => {
                terms.iter().any(|(c, h)| *c != 0.0 && h.singular_at_zero(kernel))
            }
        }
    }

    /// `(S(t_rel) h)(x) = h(t_rel + x)`, with `±∞` standing in for a singular
    /// evaluation at `t_rel + x = 0` (mirrors the analytic-curve convention).
    pub fn eval_transported(&self, kernel: &KernelSpec, t_rel: f64, x: f64, out: &mut [f64]) {
        let arg = t_rel + x;
        match self {
            Direction::Kernel { component } => {
                out.fill(0.0);
                out[*component] = kernel.entry(*component).eval(arg).unwrap_or(f64::INFINITY);
            }
            Direction::ShiftedKernel { delta, component } => {
                out.fill(0.0);
                out[*component] =
                    kernel.entry(*component).eval(*delta + arg).unwrap_or(f64::INFINITY);
            }
            Direction::Curve(c) => c.eval_into(arg, out),
            Direction::Combination(terms) => {
                out.fill(0.0);
                let mut buf = vec![0.0; out.len()];
                for (coef, h) in terms {
                    if *coef == 0.0 {
                        continue;
                    }
                    h.eval_transported(kernel, t_rel, x, &mut buf);
                    for (o, b) in out.iter_mut().zip(&buf) {
                        *o += coef * b;
                    }
                }
            }
        }
    }
}

/// A variation ensemble on the lift's lattice: ζ(path, t_n, x_j) ∈ R^d for
/// every time node and space offset, zero-extended before its start time.
#[derive(Debug, Clone)]
pub struct TangentEnsemble {
    pub grid: TimeGrid,
    pub xgrid: Arc<SpaceGrid>,
    pub offsets: Vec<f64>,
    /// Index of the start time s on the time grid.
    pub start_idx: usize,
    pub n_paths: usize,
    pub dim: usize,
    /// `[h]` for a first variation, `[h₁, h₂]` for a second variation.
    pub directions: Vec<Direction>,
    /// Kernel the directions evaluate against (the coupled model's).
    pub kernel: KernelSpec,
    /// Coupling metadata of the lift this ensemble differentiates.
    pub seed: u64,
    pub fingerprint: String,
    /// The initial row carries a `+∞` marker at x = 0 (singular direction);
    /// spot evaluation at the start time is refused in that case.
    pub singular_start: bool,
    values: Vec<f64>,
}

impl TangentEnsemble {
    pub fn n_offsets(&self) -> usize {
        self.offsets.len()
    }

    fn value_stride(&self) -> usize {
        (self.grid.n_steps + 1) * self.offsets.len() * self.dim
    }

    /// ζ(t_n, x_j) of one path as a d-slice.
    #[inline]
    pub fn value(&self, path: usize, n: usize, j: usize) -> &[f64] {
        let d = self.dim;
        let base = path * self.value_stride() + (n * self.offsets.len() + j) * d;
        &self.values[base..base + d]
    }

    /// The whole row ζ(t_n, ·) on the space grid (`n_offsets × d` values).
    #[inline]
    pub fn row(&self, path: usize, n: usize) -> &[f64] {
        let d = self.dim;
        let n_off = self.offsets.len();
        let base = path * self.value_stride() + n * n_off * d;
        &self.values[base..base + n_off * d]
    }

    /// ev₀ ζ(t_n).  Refused at the start time of a singular direction, where
    /// the true value is not finite and the stored marker is `+∞`.
    pub fn spot(&self, path: usize, n: usize) -> Result<&[f64]> {
        if n == self.start_idx && self.singular_start {
            return Err(Error::SingularAtOrigin { hurst: self.kernel.min_hurst() });
        }
        Ok(self.value(path, n, 0))
    }
}

fn couple_check(model: &SVEModel, lift: &LiftEnsemble) -> Result<()> {
    if model.fingerprint() != lift.paths.fingerprint {
        return Err(Error::CouplingMismatch {
            context: format!(
                "tangent model [{}] is not the lift's [{}]",
                model.fingerprint(),
                lift.paths.fingerprint
            ),
        });
    }
    Ok(())
}

fn variation_couple_check(
    z: &TangentEnsemble,
    lift: &LiftEnsemble,
    start_idx: usize,
    which: &str,
) -> Result<()> {
    if z.seed != lift.paths.seed
        || z.fingerprint != lift.paths.fingerprint
        || z.grid != lift.paths.grid
        || z.n_paths != lift.paths.n_paths
        || z.offsets != lift.offsets
    {
        return Err(Error::CouplingMismatch {
            context: format!("first variation {which} was not built from this lift ensemble"),
        });
    }
    if z.start_idx != start_idx {
        return Err(Error::CouplingMismatch {
            context: format!(
                "first variation {which} starts at index {} but the second variation needs {start_idx}",
                z.start_idx
            ),
        });
    }
    Ok(())
}

/// Transported term (S(t_n − t_s) h)(x_j) for every node and offset, zero
/// before the start row.
fn transported_table(
    h: &Direction,
    kernel: &KernelSpec,
    grid: &TimeGrid,
    offsets: &[f64],
    start_idx: usize,
    d: usize,
) -> Vec<f64> {
    let n_off = offsets.len();
    let mut table = vec![0.0; (grid.n_steps + 1) * n_off * d];
    for n in start_idx..=grid.n_steps {
        let t_rel = (n - start_idx) as f64 * grid.dt();
        for (j, &x) in offsets.iter().enumerate() {
            let base = (n * n_off + j) * d;
            h.eval_transported(kernel, t_rel, x, &mut table[base..base + d]);
        }
    }
    table
}

/// First variation ζ_h of the lift in the direction h, started at grid index
/// `start_idx`, coupled pathwise to `lift` (same states, same increments).
pub fn first_variation(
    model: &SVEModel,
    h: &Direction,
    start_idx: usize,
    lift: &LiftEnsemble,
) -> Result<TangentEnsemble> {
    model.twice_differentiable()?;
    couple_check(model, lift)?;
    h.validate(model.dim())?;
    let grid = lift.paths.grid;
    if start_idx > grid.n_steps {
        return Err(Error::IncrementMissing { requested: start_idx, available: grid.n_steps });
    }
    let d = model.dim();
    let m = model.noise_dim();
    let n = grid.n_steps;
    let dt = grid.dt();
    let n_off = lift.offsets.len();
    let singular = h.singular_at_zero(&model.kernel);
    let wt: Vec<SchemeWeights> =
        lift.offsets.iter().map(|&x| SchemeWeights::build(&model.kernel, dt, n, x)).collect();
    let trans = transported_table(h, &model.kernel, &grid, &lift.offsets, start_idx, d);

    let v_stride = (n + 1) * n_off * d;
    let mut values = vec![0.0; lift.paths.n_paths * v_stride];
    let first_bad: Vec<Option<usize>> = values
        .par_chunks_mut(v_stride)
        .enumerate()
        .map(|(p, vals)| {
            vals.copy_from_slice(&trans);
            let mut tb = vec![0.0; n * d];
            let mut tv = vec![0.0; n * d];
            let mut dsig = vec![0.0; d * m];
            let mut bad = None;
            'steps: for nn in (start_idx + 1)..=n {
                let k = nn - 1;
                let (head, tail) = vals.split_at_mut(nn * n_off * d);
                // source at the cell's left point r = t_k; dropped for the
                // first cell of a singular direction where ev₀ ζ(s) = ∞
                if !(k == start_idx && singular) {
                    let state = lift.value(p, k, 0);
                    let zk = &head[k * n_off * d..k * n_off * d + d];
                    model.drift.deriv(state, zk, &mut tb[k * d..nn * d]);
                    model.sigma.deriv(state, zk, &mut dsig);
                    let dwk = lift.paths.increments(p, k);
                    for i in 0..d {
                        let mut acc = 0.0;
                        for j in 0..m {
                            acc += dsig[i * m + j] * dwk[j];
                        }
                        tv[k * d + i] = acc;
                    }
                }
                for j in 0..n_off {
                    let w = &wt[j];
                    let cell = &mut tail[j * d..(j + 1) * d];
                    for kk in start_idx..nn {
                        let dr = w.drift_row(nn - kk);
                        let df = w.diff_row(nn - kk);
                        for i in 0..d {
                            cell[i] += dr[i] * tb[kk * d + i] + df[i] * tv[kk * d + i];
                        }
                    }
                }
                if !tail[..d].iter().all(|v| v.is_finite()) {
                    bad = Some(nn);
                    break 'steps;
                }
            }
            bad
        })
        .collect();
    for (p, bad) in first_bad.iter().enumerate() {
        if let Some(step) = bad {
            return Err(Error::UnstableConfig { step: *step, path: p });
        }
    }

    Ok(TangentEnsemble {
        grid,
        xgrid: lift.xgrid.clone(),
        offsets: lift.offsets.clone(),
        start_idx,
        n_paths: lift.paths.n_paths,
        dim: d,
        directions: vec![h.clone()],
        kernel: model.kernel.clone(),
        seed: lift.paths.seed,
        fingerprint: lift.paths.fingerprint.clone(),
        singular_start: singular,
        values,
    })
}

/// Diagonal second variation ζ_{h,h}: zero initial condition, bilinear
/// source from the given first variations plus the first-order feedback.
fn run_second_diagonal(
    model: &SVEModel,
    lift: &LiftEnsemble,
    start_idx: usize,
    z1: &TangentEnsemble,
    z2: &TangentEnsemble,
) -> Vec<f64> {
    let grid = lift.paths.grid;
    let d = model.dim();
    let m = model.noise_dim();
    let n = grid.n_steps;
    let dt = grid.dt();
    let n_off = lift.offsets.len();
    let skip_first = z1.singular_start || z2.singular_start;
    let wt: Vec<SchemeWeights> =
        lift.offsets.iter().map(|&x| SchemeWeights::build(&model.kernel, dt, n, x)).collect();

    let v_stride = (n + 1) * n_off * d;
    let mut values = vec![0.0; lift.paths.n_paths * v_stride];
    values
        .par_chunks_mut(v_stride)
        .enumerate()
        .for_each(|(p, vals)| {
            let mut tb = vec![0.0; n * d];
            let mut tv = vec![0.0; n * d];
            let mut b1 = vec![0.0; d];
            let mut s2 = vec![0.0; d * m];
            let mut s1 = vec![0.0; d * m];
            for nn in (start_idx + 1)..=n {
                let k = nn - 1;
                let (head, tail) = vals.split_at_mut(nn * n_off * d);
                if !(k == start_idx && skip_first) {
                    let state = lift.value(p, k, 0);
                    let v = z1.value(p, k, 0);
                    let w = z2.value(p, k, 0);
                    let eta = &head[k * n_off * d..k * n_off * d + d];
                    model.drift.second_deriv(state, v, w, &mut tb[k * d..nn * d]);
                    model.drift.deriv(state, eta, &mut b1);
                    for i in 0..d {
                        tb[k * d + i] += b1[i];
                    }
                    model.sigma.second_deriv(state, v, w, &mut s2);
                    model.sigma.deriv(state, eta, &mut s1);
                    let dwk = lift.paths.increments(p, k);
                    for i in 0..d {
                        let mut acc = 0.0;
                        for j in 0..m {
                            acc += (s2[i * m + j] + s1[i * m + j]) * dwk[j];
                        }
                        tv[k * d + i] = acc;
                    }
                }
                for j in 0..n_off {
                    let w = &wt[j];
                    let cell = &mut tail[j * d..(j + 1) * d];
                    for kk in start_idx..nn {
                        let dr = w.drift_row(nn - kk);
                        let df = w.diff_row(nn - kk);
                        for i in 0..d {
                            cell[i] += dr[i] * tb[kk * d + i] + df[i] * tv[kk * d + i];
                        }
                    }
                }
            }
        });
    values
}

/// Second variation ζ_{h₁,h₂} started at `start_idx` with zero initial
/// condition.  Equal directions run the direct recursion; distinct
/// directions are assembled by polarization from the diagonal runs
/// ¼(ζ_{h₁+h₂,h₁+h₂} − ζ_{h₁−h₂,h₁−h₂}), whose first variations are built
/// internally with unit-coefficient combinations — the identity the tests
/// pin is therefore exact.
pub fn second_variation(
    model: &SVEModel,
    h1: &Direction,
    h2: &Direction,
    start_idx: usize,
    lift: &LiftEnsemble,
    z1: &TangentEnsemble,
    z2: &TangentEnsemble,
) -> Result<TangentEnsemble> {
    model.twice_differentiable()?;
    couple_check(model, lift)?;
    h1.validate(model.dim())?;
    h2.validate(model.dim())?;
    let hurst = model.kernel.min_hurst();
    if hurst <= 0.25 && !model.sigma.is_constant() {
        return Err(Error::HurstBelowThreshold { hurst });
    }
    let grid = lift.paths.grid;
    if start_idx > grid.n_steps {
        return Err(Error::IncrementMissing { requested: start_idx, available: grid.n_steps });
    }
    variation_couple_check(z1, lift, start_idx, "zeta_h1")?;
    variation_couple_check(z2, lift, start_idx, "zeta_h2")?;

    let values = if h1 == h2 {
        run_second_diagonal(model, lift, start_idx, z1, z2)
    } else {
        let sum = Direction::Combination(vec![(1.0, h1.clone()), (1.0, h2.clone())]);
        let dif = Direction::Combination(vec![(1.0, h1.clone()), (-1.0, h2.clone())]);
        let zs = first_variation(model, &sum, start_idx, lift)?;
        let zd = first_variation(model, &dif, start_idx, lift)?;
        let vs = run_second_diagonal(model, lift, start_idx, &zs, &zs);
        let vd = run_second_diagonal(model, lift, start_idx, &zd, &zd);
        vs.iter().zip(&vd).map(|(a, b)| 0.25 * (a - b)).collect()
    };

    Ok(TangentEnsemble {
        grid,
        xgrid: lift.xgrid.clone(),
        offsets: lift.offsets.clone(),
        start_idx,
        n_paths: lift.paths.n_paths,
        dim: model.dim(),
        directions: vec![h1.clone(), h2.clone()],
        kernel: model.kernel.clone(),
        seed: lift.paths.seed,
        fingerprint: lift.paths.fingerprint.clone(),
        singular_start: false,
        values,
    })
}

/// One time node of the moment-bound check.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MomentBoundRow {
    pub t: f64,
    /// E |ζ(t)|ᵖ in the discrete H¹_w norm.
    pub moment: f64,
    /// |S(t−s)h|ᵖ through the same grid row and quadrature.
    pub bound: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentBoundReport {
    pub p: f64,
    /// Largest finite ratio across the time nodes.
    pub max_ratio: f64,
    pub rows: Vec<MomentBoundRow>,
}

/// Ratio check for the moment estimate E|ζ^{s,y}_h(t)|ᵖ ≤ C |S(t−s)h|ᵖ_{H¹_w}.
/// Both sides are evaluated through the same node rows and weighted
/// quadrature, so the source-free case is an exact equality.  For singular
/// directions the start row (whose norm is infinite on both sides) is
/// skipped.
pub fn moment_bound_check(
    zeta: &TangentEnsemble,
    wq: &WQuad,
    p: f64,
    h: &Direction,
) -> Result<MomentBoundReport> {
    if wq.grid.nodes() != zeta.xgrid.nodes() {
        return Err(Error::GridMismatch {
            context: "moment-bound quadrature grid differs from the tangent ensemble's".into(),
        });
    }
    if !(p >= 1.0) {
        return Err(Error::Config(format!("moment order must satisfy p >= 1, got {p}")));
    }
    let d = zeta.dim;
    let n_off = zeta.offsets.len();
    let dt = zeta.grid.dt();
    let first = if h.singular_at_zero(&zeta.kernel) { zeta.start_idx + 1 } else { zeta.start_idx };
    let mut rows = Vec::new();
    let mut hrow = vec![0.0; n_off * d];
    for n in first..=zeta.grid.n_steps {
        let t_rel = (n - zeta.start_idx) as f64 * dt;
        for (j, &x) in zeta.offsets.iter().enumerate() {
            h.eval_transported(&zeta.kernel, t_rel, x, &mut hrow[j * d..(j + 1) * d]);
        }
        let hp = wq.project_row(&hrow, d);
        let bound = wq.inner_h1(&hp, &hp).max(0.0).sqrt().powf(p);
        let mut sum = 0.0;
        for path in 0..zeta.n_paths {
            let zp = wq.project_row(zeta.row(path, n), d);
            sum += wq.inner_h1(&zp, &zp).max(0.0).sqrt().powf(p);
        }
        let moment = sum / zeta.n_paths as f64;
        let ratio = if bound > 0.0 { moment / bound } else { f64::NAN };
        rows.push(MomentBoundRow { t: zeta.grid.node(n), moment, bound, ratio });
    }
    let max_ratio = rows
        .iter()
        .map(|r| r.ratio)
        .filter(|r| r.is_finite())
        .fold(f64::NAN, |a, b| if a.is_nan() || b > a { b } else { a });
    Ok(MomentBoundReport { p, max_ratio, rows })
}

/// One shift δ of the mollified-tangent convergence study.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MollifiedRateRow {
    pub delta: f64,
    /// Δt · Σ_r E|ζ^{r}_{S(δ)K}(t_end) − ζ^{r}_K(t_end)|²_{H¹_w} over start
    /// indices r ∈ [start, end) — the start-time-integrated gap.
    pub start_integrated_gap: f64,
    /// E|ζ^{s}_{S(δ)K}(t_end) − ζ^{s}_K(t_end)|²_{H¹_w} for the single start s.
    pub terminal_gap: f64,
}

/// Coupled comparison of the first variation in the kernel direction against
/// its mollified versions S(δ)K, summed over the kernel columns.  Both gaps
/// shrink as δ ↓ 0 until δ reaches a small multiple of Δt, where the
/// discretisation floor takes over: the mollified run's first-cell source is
/// the left-point value K(δ), which grows as δ ↓ 0 at fixed Δt, while the
/// singular run's first cell is dropped — meaningful sweeps therefore end at
/// δ ≳ 4Δt.  A δ = 0 entry is exactly zero since the mollified run then
/// reproduces the singular one bitwise.
pub fn mollified_convergence_study(
    model: &SVEModel,
    lift: &LiftEnsemble,
    wq: &WQuad,
    deltas: &[f64],
    start_idx: usize,
    end_idx: usize,
) -> Result<Vec<MollifiedRateRow>> {
    if wq.grid.nodes() != lift.xgrid.nodes() {
        return Err(Error::GridMismatch {
            context: "mollification-study quadrature grid differs from the lift's".into(),
        });
    }
    if end_idx > lift.paths.grid.n_steps || start_idx >= end_idx {
        return Err(Error::Config(format!(
            "study window needs start < end <= n_steps, got [{start_idx}, {end_idx}] with {} steps",
            lift.paths.grid.n_steps
        )));
    }
    for &delta in deltas {
        if !(delta >= 0.0) {
            return Err(Error::Config(format!("mollification shifts must be >= 0, got {delta}")));
        }
    }
    let d = model.dim();
    let n_off = lift.offsets.len();
    let dt = lift.paths.grid.dt();
    let mut integrated = vec![0.0; deltas.len()];
    let mut terminal = vec![0.0; deltas.len()];
    let mut diff = vec![0.0; n_off * d];
    for component in 0..d {
        for r in start_idx..end_idx {
            let base =
                first_variation(model, &Direction::Kernel { component }, r, lift)?;
            for (di, &delta) in deltas.iter().enumerate() {
                let moll = first_variation(
                    model,
                    &Direction::ShiftedKernel { delta, component },
                    r,
                    lift,
                )?;
                let mut sum = 0.0;
                for path in 0..lift.paths.n_paths {
                    let a = moll.row(path, end_idx);
                    let b = base.row(path, end_idx);
                    for (o, (x, y)) in diff.iter_mut().zip(a.iter().zip(b)) {
                        *o = x - y;
                    }
                    let pr = wq.project_row(&diff, d);
                    sum += wq.inner_h1(&pr, &pr);
                }
                let mean = sum / lift.paths.n_paths as f64;
                integrated[di] += dt * mean;
                if r == start_idx {
                    terminal[di] = mean;
                }
            }
        }
    }
    Ok(deltas
        .iter()
        .zip(integrated.iter().zip(&terminal))
        .map(|(&delta, (&ig, &tg))| MollifiedRateRow {
            delta,
            start_integrated_gap: ig,
            terminal_gap: tg,
        })
        .collect())
}
