//! Ornstein–Uhlenbeck (multifactor) lift for completely monotone kernels.
//!
//! A completely monotone kernel is the Laplace transform of a nonnegative
//! measure on frequencies,
//!
//! ```text
//!     K(t) = ∫₀^∞ e^{−t z} μ(dz),
//! ```
//!
//! so the Volterra solution `X_t = X₀(t) + ∫₀ᵗ K(t−s)[b(X_s)ds + σ(X_s)dW_s]`
//! disintegrates over `z`: the field
//!
//! ```text
//!     Y_t(z) = e^{−z t} y₀(z) + ∫₀ᵗ e^{−z(t−s)} [b(X_s) ds + σ(X_s) dW_s]
//! ```
//!
//! solves the *local* SDE `dY_t(z) = (−z·Y_t(z) + b(X_t))dt + σ(X_t)dW_t` per
//! frequency, and `X_t = ⟨Y_t, 1⟩ = ∫ Y_t(z)μ(dz)` whenever the initial curve
//! is itself a mixture `X₀(t) = ∫ y₀(z)e^{−t z}μ(dz)`.  Each `Y(z)` is an
//! Ornstein–Uhlenbeck process with reversion rate `z`; the family is the
//! classical Markovian multifactor lift of `X`.
//!
//! The connection with the forward-curve lift is a Laplace transform in the
//! *space* variable: `λ(t, x) = ∫ e^{−z x} Y_t(z) μ(dz)`.  Shifting the curve
//! by `x` is multiplication by `e^{−z x}` under the integral — exponential
//! mixtures transport analytically — which is why the two lifts can be
//! cross-checked without ever inverting a Laplace transform.
//!
//! Numerically, [`cm_quadrature`] replaces `μ` by finitely many atoms: the
//! frequency axis is cut into geometric cells, each cell keeps its exact
//! density mass as the weight and its density centroid as the node, and the
//! lowest cell is extended down to `z = 0` so that no slow-frequency mass is
//! lost (for the fractional density `z^{−H−1/2}` that tail carries most of
//! the kernel's long-time behaviour).  [`simulate_ou`] then advances every
//! node with the *exact* exponential integrator over each step, reusing the
//! common Brownian increments of the path ensembles bitwise, so a run is
//! coupled pathwise with [`simulate`](crate::sve::simulate) and
//! [`simulate_lift`](crate::lift::simulate_lift) at equal seeds.
//!
//! One structural fact matters when comparing the two lifts at a fixed time
//! step: in the newest cell `(0, Δt]` the curve scheme weighs the noise with
//! the L²-mean of `K` itself, while the node-exact OU update weighs it with
//! `Σᵢ ρᵢ ‖e^{−zᵢ·}‖` — a sum of norms instead of the norm of the sum.  For
//! singular kernels the two differ by a few percent *no matter how fine the
//! frequency quadrature is*; refinement in `n` removes the smooth-lag error
//! but not this Δt-controlled floor.  [`ou_coupling_oracle`] computes the
//! exact mean-square gap for drift-free unit-volatility models so tests can
//! separate the two effects.

use rayon::prelude::*;
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::grids::TimeGrid;
use crate::kernels::{KernelSpec, ScalarKernel};
use crate::lift::LiftEnsemble;
use crate::rng::{standard_normal, Stream};
use crate::sve::{fill_increments, InitialCurve, SVEModel};

/// Finite-atom approximation of the frequency measure: `K(t) ≈ Σᵢ ρᵢ e^{−t zᵢ}`.
#[derive(Debug, Clone)]
pub struct CMQuadrature {
    /// Frequencies `zᵢ > 0`, increasing.
    pub nodes: Vec<f64>,
    /// Atom masses `ρᵢ > 0`.
    pub weights: Vec<f64>,
    /// Max of `|Σ ρ e^{−t z} − K(t)| / K(t)` over the reference grid the
    /// quadrature was built for (log-spaced on `[Δt, T]`).
    pub max_rel_error: f64,
}

impl CMQuadrature {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Mixture kernel `Σᵢ ρᵢ e^{−t zᵢ}`.
    pub fn kernel_value(&self, t: f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(z, r)| r * (-z * t).exp()).sum()
    }

    /// Shifted mixture `Σᵢ ρᵢ e^{−δ zᵢ} e^{−x zᵢ}`: shifting multiplies the
    /// atoms, no re-approximation is involved.
    pub fn shifted_value(&self, delta: f64, x: f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(z, r)| r * (-z * delta).exp() * (-z * x).exp()).sum()
    }
}

/// Build the frequency quadrature for a completely monotone scalar kernel.
///
/// `horizon` and `dt` fix the resolvable band `[1/(10·horizon), 10/dt]`:
/// geometric cell boundaries span that band, the lowest cell absorbs
/// `[0, z_min]`, weights are exact density masses and nodes are density
/// centroids.  An exponential kernel *is* a single atom, so it returns one
/// node exactly regardless of `n`.
pub fn cm_quadrature(kernel: &KernelSpec, n: usize, horizon: f64, dt: f64) -> Result<CMQuadrature> {
    if kernel.dim() != 1 {
        return Err(Error::UnsupportedKernel {
            kind: format!("{}-component diagonal ({})", kernel.dim(), kernel.kind_name()),
        });
    }
    if n == 0 {
        return Err(Error::Config("frequency quadrature needs at least one node".into()));
    }
    if !(horizon > 0.0 && dt > 0.0 && dt < horizon) {
        return Err(Error::Config(format!(
            "frequency band needs 0 < dt < horizon, got dt = {dt}, horizon = {horizon}"
        )));
    }

    let scalar = kernel.entry(0);
    let (nodes, weights) = match scalar {
        ScalarKernel::Exponential { rate } => (vec![*rate], vec![1.0]),
        ScalarKernel::PowerLaw { hurst, .. } if *hurst < 0.5 => {
            // density  N·z^{−H−1/2}/Γ(1/2−H):  ∫₀^∞ e^{−tz} of it is N·t^{H−1/2}
            let p = 0.5 - hurst;
            let scale = scalar.norm_const() / gamma(p);
            let z_min = 1.0 / (10.0 * horizon);
            let z_max = 10.0 / dt;
            let ratio = (z_max / z_min).powf(1.0 / n as f64);
            let mut nodes = Vec::with_capacity(n);
            let mut weights = Vec::with_capacity(n);
            for k in 1..=n {
                let lo = if k == 1 { 0.0 } else { z_min * ratio.powi(k as i32 - 1) };
                let hi = if k == n { z_max } else { z_min * ratio.powi(k as i32) };
                let mass = scale * (hi.powf(p) - lo.powf(p)) / p;
                let mom1 = scale * (hi.powf(p + 1.0) - lo.powf(p + 1.0)) / (p + 1.0);
                weights.push(mass);
                nodes.push(mom1 / mass);
            }
            (nodes, weights)
        }
        other => {
            return Err(Error::UnsupportedKernel { kind: other_kind_name(other).to_string() });
        }
    };

    // record the reproduction quality on the band the caller asked for
    let mut max_rel_error = 0.0f64;
    let log_step = (horizon / dt).ln() / 199.0;
    for j in 0..200 {
        let t = dt * (log_step * j as f64).exp();
        let exact = scalar.eval(t)?;
        let approx: f64 = nodes.iter().zip(&weights).map(|(z, r)| r * (-z * t).exp()).sum();
        max_rel_error = max_rel_error.max(((approx - exact) / exact).abs());
    }

    Ok(CMQuadrature { nodes, weights, max_rel_error })
}

fn other_kind_name(k: &ScalarKernel) -> &'static str {
    match k {
        ScalarKernel::PowerLaw { .. } => "power-law with H >= 1/2",
        ScalarKernel::Exponential { .. } => "exponential",
        ScalarKernel::Tabulated { .. } => "tabulated",
    }
}

/// The simulated frequency field `Y(path, t_n, zᵢ)` together with its
/// projection `X = Σᵢ ρᵢ Y(·, zᵢ)` and the Brownian increments that drove it.
pub struct OUField {
    pub grid: TimeGrid,
    pub quad: CMQuadrature,
    pub n_paths: usize,
    pub seed: u64,
    pub fingerprint: String,
    /// `Y` values, path-major: `[path][node n][frequency i]`.
    values: Vec<f64>,
    /// Projection `Σ ρᵢ Yᵢ` at every node, path-major.
    proj: Vec<f64>,
    dw: Vec<f64>,
}

impl OUField {
    /// Frequency row `Y(t_n, ·)` of one path.
    pub fn node_values(&self, path: usize, n: usize) -> &[f64] {
        let nq = self.quad.len();
        let base = (path * (self.grid.n_steps + 1) + n) * nq;
        &self.values[base..base + nq]
    }

    /// `⟨Y_{t_n}, 1⟩ = Σᵢ ρᵢ Y(t_n, zᵢ)` — the reconstructed driving state.
    pub fn projection(&self, path: usize, n: usize) -> f64 {
        self.proj[path * (self.grid.n_steps + 1) + n]
    }

    /// Forward-curve value `Σᵢ ρᵢ e^{−zᵢ x} Y(t_n, zᵢ)` at offset `x ≥ 0`.
    pub fn curve_value(&self, path: usize, n: usize, x: f64) -> f64 {
        let row = self.node_values(path, n);
        self.quad
            .nodes
            .iter()
            .zip(&self.quad.weights)
            .zip(row)
            .map(|((z, r), y)| r * (-z * x).exp() * y)
            .sum()
    }

    pub fn dw_raw(&self) -> &[f64] {
        &self.dw
    }
}

#[derive(Clone, Copy)]
enum StartSpec {
    Zero,
    Stationary { sd: f64 },
}

/// Advance the OU field with the exact per-node exponential integrator,
/// sharing the Brownian increments of the path ensembles bitwise.
///
/// Over one step the update is
/// `Yᵢ ← e^{−zᵢΔt} Yᵢ + b(X_n)·(1−e^{−zᵢΔt})/zᵢ + σ(X_n)·nwᵢ·ΔW_n` with
/// `nwᵢ = √((1−e^{−2zᵢΔt})/(2zᵢΔt))`, so for frozen coefficients every node
/// is exact in law and the zero-offset projection of an exponential kernel
/// reproduces the curve scheme identically.
pub fn simulate_ou(
    model: &SVEModel,
    quad: &CMQuadrature,
    grid: TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<OUField> {
    let (d, m) = (model.dim(), model.noise_dim());
    if d != 1 || m != 1 {
        return Err(Error::Config(format!("the OU lift is scalar; model has d = {d}, m = {m}")));
    }
    let nq = quad.len();
    if nq == 0 {
        return Err(Error::Config("frequency quadrature is empty".into()));
    }

    let start = match &model.initial {
        InitialCurve::Deterministic(c) => {
            let horizon = grid.node(grid.n_steps);
            let zero = (0..=32).all(|j| {
                c.evaluate(horizon * j as f64 / 32.0).map(|v| v.iter().all(|&u| u == 0.0)).unwrap_or(false)
            });
            if !zero {
                return Err(Error::InitialCurveNotRepresentable {
                    reason: "a nonzero deterministic curve is not an exact mixture of the quadrature exponentials"
                        .into(),
                });
            }
            StartSpec::Zero
        }
        InitialCurve::StationaryOu { rate } => {
            let matches = nq == 1
                && (quad.nodes[0] - rate).abs() <= 1e-12 * rate.max(1.0)
                && (quad.weights[0] - 1.0).abs() <= 1e-12;
            if !matches {
                return Err(Error::InitialCurveNotRepresentable {
                    reason: format!(
                        "the stationary prehistory decays at rate {rate}; it needs the single-node quadrature of that exponential kernel"
                    ),
                });
            }
            StartSpec::Stationary { sd: 1.0 / (2.0 * rate).sqrt() }
        }
        InitialCurve::TypeOneFbm { .. } => {
            return Err(Error::InitialCurveNotRepresentable {
                reason: "the fractional prehistory curve is not a finite exponential mixture".into(),
            });
        }
    };

    let n = grid.n_steps;
    let dt = grid.dt();
    let sqdt = dt.sqrt();
    let decay: Vec<f64> = quad.nodes.iter().map(|z| (-z * dt).exp()).collect();
    let bw: Vec<f64> = quad.nodes.iter().map(|z| -(-z * dt).exp_m1() / z).collect();
    let nw: Vec<f64> =
        quad.nodes.iter().map(|z| (-(-2.0 * z * dt).exp_m1() / (2.0 * z * dt)).sqrt()).collect();

    let v_stride = (n + 1) * nq;
    let p_stride = n + 1;
    let mut values = vec![0.0; n_paths * v_stride];
    let mut proj = vec![0.0; n_paths * p_stride];
    let mut dw = vec![0.0; n_paths * n];

    let first_bad: Vec<Option<usize>> = values
        .par_chunks_mut(v_stride)
        .zip(proj.par_chunks_mut(p_stride))
        .zip(dw.par_chunks_mut(n))
        .enumerate()
        .map(|(p, ((ys, xs), ws))| {
            fill_increments(ws, seed, p as u64, n, 1, sqdt);
            if let StartSpec::Stationary { sd } = start {
                ys[0] = sd * standard_normal(seed, Stream::Prehistory, p as u64, 0, 0);
            }
            xs[0] = dot(&quad.weights, &ys[..nq]);
            let mut bout = [0.0];
            let mut sout = [0.0];
            for k in 0..n {
                let x = xs[k];
                if !x.is_finite() {
                    return Some(k);
                }
                model.drift.eval(&[x], &mut bout);
                model.sigma.eval(&[x], &mut sout);
                let noise = sout[0] * ws[k];
                let (done, rest) = ys.split_at_mut((k + 1) * nq);
                let prev = &done[k * nq..];
                for i in 0..nq {
                    rest[i] = decay[i] * prev[i] + bout[0] * bw[i] + noise * nw[i];
                }
                xs[k + 1] = dot(&quad.weights, &rest[..nq]);
            }
            if xs[n].is_finite() {
                None
            } else {
                Some(n)
            }
        })
        .collect();

    for (p, bad) in first_bad.iter().enumerate() {
        if let Some(step) = bad {
            return Err(Error::UnstableConfig { step: *step, path: p });
        }
    }

    Ok(OUField {
        grid,
        quad: quad.clone(),
        n_paths,
        seed,
        fingerprint: model.fingerprint(),
        values,
        proj,
        dw,
    })
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Worst-case gap between the Laplace reconstruction of the curve and the
/// directly simulated one.
#[derive(Debug, Clone)]
pub struct OUCurveReport {
    /// `sup |Σᵢ ρᵢ e^{−zᵢ x_j} Y(t_n, zᵢ) − λ(t_n, x_j)|` over paths, nodes, offsets.
    pub sup_abs: f64,
    /// `sup |λ|` over the same set, for scale.
    pub scale: f64,
    /// `(path, time index, offset index)` attaining the sup.
    pub worst: (usize, usize, usize),
    pub n_paths: usize,
}

/// Compare `x ↦ Σᵢ ρᵢ e^{−zᵢ x} Y_t(zᵢ)` against the curve lift pointwise on
/// the lift's offset lattice.  Both ensembles must be coupled: same seed,
/// grid, path count and model.
pub fn ou_curve_equivalence(ou: &OUField, lift: &LiftEnsemble) -> Result<OUCurveReport> {
    if lift.paths.dim != 1 {
        return Err(Error::CouplingMismatch {
            context: format!("the OU lift is scalar; curve ensemble has d = {}", lift.paths.dim),
        });
    }
    if ou.seed != lift.paths.seed {
        return Err(Error::CouplingMismatch {
            context: format!("seeds differ: {} vs {}", ou.seed, lift.paths.seed),
        });
    }
    if ou.grid.n_steps != lift.paths.grid.n_steps || ou.grid.dt() != lift.paths.grid.dt() {
        return Err(Error::CouplingMismatch { context: "time grids differ".into() });
    }
    if ou.n_paths != lift.paths.n_paths {
        return Err(Error::CouplingMismatch {
            context: format!("path counts differ: {} vs {}", ou.n_paths, lift.paths.n_paths),
        });
    }
    if ou.fingerprint != lift.paths.fingerprint {
        return Err(Error::CouplingMismatch { context: "model fingerprints differ".into() });
    }

    let nq = ou.quad.len();
    let n_off = lift.n_offsets();
    // e_mat[i·n_off + j] = ρᵢ e^{−zᵢ x_j}
    let mut e_mat = vec![0.0; nq * n_off];
    for i in 0..nq {
        for (j, &x) in lift.offsets.iter().enumerate() {
            e_mat[i * n_off + j] = ou.quad.weights[i] * (-ou.quad.nodes[i] * x).exp();
        }
    }

    let mut sup_abs = 0.0f64;
    let mut scale = 0.0f64;
    let mut worst = (0, 0, 0);
    let mut recon = vec![0.0; n_off];
    for p in 0..ou.n_paths {
        for nn in 0..=ou.grid.n_steps {
            let row = ou.node_values(p, nn);
            recon.iter_mut().for_each(|v| *v = 0.0);
            for i in 0..nq {
                let y = row[i];
                let block = &e_mat[i * n_off..(i + 1) * n_off];
                for j in 0..n_off {
                    recon[j] += block[j] * y;
                }
            }
            for j in 0..n_off {
                let lam = lift.value(p, nn, j)[0];
                scale = scale.max(lam.abs());
                let gap = (recon[j] - lam).abs();
                if gap > sup_abs {
                    sup_abs = gap;
                    worst = (p, nn, j);
                }
            }
        }
    }

    Ok(OUCurveReport { sup_abs, scale, worst, n_paths: ou.n_paths })
}

/// Exact root-mean-square of `⟨Y_T, 1⟩ − X_T` for a drift-free model with
/// `σ ≡ 1`: both sides are then linear in the same Gaussian increments, so
///
/// ```text
///     RMS² = Σ_ℓ Δt · ( Σᵢ ρᵢ e^{−zᵢ(ℓ−1)Δt} nwᵢ  −  K̂_ℓ )²,
/// ```
///
/// where `K̂_ℓ` is the curve scheme's L²-mean of `K` over the lag-`ℓ` cell.
/// The `ℓ = 1` term is the newest-cell floor discussed in the module docs;
/// the `ℓ ≥ 2` terms shrink with the quadrature's kernel error.
pub fn ou_coupling_oracle(kernel: &KernelSpec, quad: &CMQuadrature, grid: TimeGrid) -> Result<f64> {
    if kernel.dim() != 1 {
        return Err(Error::Config(format!("the OU lift is scalar; kernel has {} components", kernel.dim())));
    }
    let dt = grid.dt();
    let scalar = kernel.entry(0);
    let nw: Vec<f64> =
        quad.nodes.iter().map(|z| (-(-2.0 * z * dt).exp_m1() / (2.0 * z * dt)).sqrt()).collect();
    let mut acc = 0.0;
    for lag in 1..=grid.n_steps {
        let age = (lag - 1) as f64 * dt;
        let ou_w: f64 =
            quad.nodes.iter().zip(&quad.weights).zip(&nw).map(|((z, r), w)| r * (-z * age).exp() * w).sum();
        let curve_w = scalar.cell_l2_mean(age, lag as f64 * dt);
        acc += dt * (ou_w - curve_w) * (ou_w - curve_w);
    }
    Ok(acc.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lift::simulate_lift;
    use crate::mc::MCEstimate;
    use crate::sve::{simulate, DriftSpec, SigmaSpec};
    use crate::wspace::{Curve, SpaceGrid, WeightSpec};

    fn scalar_model(kernel: KernelSpec, drift: DriftSpec, sigma_value: f64) -> SVEModel {
        SVEModel::new(
            kernel,
            WeightSpec::for_kernel(0.65, 1.0, 0.35),
            drift,
            SigmaSpec::Constant { dim: 1, noise_dim: 1, values: vec![sigma_value] },
            InitialCurve::Deterministic(Curve::constant(vec![0.0])),
        )
        .unwrap()
    }

    #[test]
    fn exponential_kernels_collapse_to_a_single_exact_node() {
        let q = cm_quadrature(&KernelSpec::exponential(1.3), 40, 10.0, 0.01).unwrap();
        assert_eq!(q.nodes, vec![1.3], "an exponential kernel is already one atom");
        assert_eq!(q.weights, vec![1.0]);
        assert!(q.max_rel_error <= 1e-12, "single-atom reproduction error {} should be fp-level", q.max_rel_error);

        let tab = KernelSpec::tabulated(vec![0.0, 1.0], vec![1.0, 0.5]);
        assert!(matches!(cm_quadrature(&tab, 10, 1.0, 0.01), Err(Error::UnsupportedKernel { .. })));
        let smooth = KernelSpec::power_law(0.7, true);
        assert!(matches!(cm_quadrature(&smooth, 10, 1.0, 0.01), Err(Error::UnsupportedKernel { .. })));
        let pair = KernelSpec::diagonal(vec![
            ScalarKernel::Exponential { rate: 1.0 },
            ScalarKernel::Exponential { rate: 2.0 },
        ]);
        assert!(matches!(cm_quadrature(&pair, 10, 1.0, 0.01), Err(Error::UnsupportedKernel { .. })));
        assert!(matches!(cm_quadrature(&KernelSpec::power_law(0.3, true), 0, 1.0, 0.01), Err(Error::Config(_))));
    }

    #[test]
    fn fractional_mixture_reproduces_the_kernel_and_refines() {
        let kernel = KernelSpec::power_law(0.3, true);
        let errs: Vec<f64> = [25usize, 50, 100]
            .iter()
            .map(|&n| cm_quadrature(&kernel, n, 10.0, 1e-2).unwrap().max_rel_error)
            .collect();
        // independent sweep at a resolution the constructor does not use
        let q50 = cm_quadrature(&kernel, 50, 10.0, 1e-2).unwrap();
        let mut dense = 0.0f64;
        for j in 0..301 {
            let t = 1e-2 * (1000.0f64).powf(j as f64 / 300.0);
            let exact = kernel.entry(0).eval(t).unwrap();
            dense = dense.max(((q50.kernel_value(t) - exact) / exact).abs());
        }
        assert!(dense <= 1e-2, "50-node mixture error {dense} exceeds 1e-2 on t in [1e-2, 10]");
        assert!(
            q50.max_rel_error <= dense * 1.05,
            "recorded error {} cannot exceed a denser sweep {dense}",
            q50.max_rel_error
        );
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "doubling nodes must shrink the error: {errs:?}");

        // mixtures shift analytically: factored and direct forms agree
        for &(t, x) in &[(0.04, 0.3), (1.0, 0.0), (2.5, 1.7)] {
            let direct = q50.kernel_value(t + x);
            let factored = q50.shifted_value(t, x);
            assert!(
                ((direct - factored) / direct).abs() <= 1e-13,
                "shift at (t, x) = ({t}, {x}): {factored} vs {direct}"
            );
        }
    }

    #[test]
    fn single_node_field_is_the_exact_discrete_ou() {
        let c = 0.7;
        let model = scalar_model(KernelSpec::exponential(c), DriftSpec::Zero { dim: 1 }, 1.0);
        let grid = TimeGrid::new(1.0, 64);
        let quad = cm_quadrature(&model.kernel, 1, 1.0, grid.dt()).unwrap();
        let ou = simulate_ou(&model, &quad, grid, 8192, 211).unwrap();

        // the scheme's accumulated variance telescopes to the OU closed form
        let dt = grid.dt();
        let nw2 = -(-2.0 * c * dt).exp_m1() / (2.0 * c * dt);
        for n in [16usize, 64] {
            let mut scheme_var = 0.0;
            for k in 0..n {
                scheme_var += nw2 * dt * (-2.0 * c * dt * k as f64).exp();
            }
            let closed = -(-2.0 * c * grid.node(n)).exp_m1() / (2.0 * c);
            assert!(
                ((scheme_var - closed) / closed).abs() <= 1e-12,
                "geometric sum {scheme_var} vs closed form {closed} at n = {n}"
            );
            let samples: Vec<f64> = (0..8192).map(|p| ou.projection(p, n)).collect();
            let est = MCEstimate::from_samples(&samples.iter().map(|x| x * x).collect::<Vec<_>>());
            let z = est.z_score(closed);
            assert!(z < 3.0, "Var X_{n} = {} vs {closed} is {z} standard errors off", est.mean);
        }

        // coupled increments are bitwise those of the plain ensemble
        let plain = simulate(&model, grid, 8192, 211).unwrap();
        assert_eq!(ou.dw_raw().len(), plain.dw_raw().len());
        for (a, b) in ou.dw_raw().iter().zip(plain.dw_raw()) {
            assert_eq!(a.to_bits(), b.to_bits(), "OU field must consume the ensemble's increments");
        }
    }

    #[test]
    fn stationary_prehistory_keeps_variance_flat() {
        let model = SVEModel::stationary_ou();
        let grid = TimeGrid::new(2.0, 64);
        let quad = cm_quadrature(&model.kernel, 9, 2.0, grid.dt()).unwrap();
        let ou = simulate_ou(&model, &quad, grid, 8192, 223).unwrap();
        for n in [0usize, 32, 64] {
            let sq: Vec<f64> = (0..8192).map(|p| ou.projection(p, n).powi(2)).collect();
            let est = MCEstimate::from_samples(&sq);
            let z = est.z_score(0.5);
            assert!(z < 3.0, "stationary Var at node {n} = {} vs 1/2 is {z} standard errors off", est.mean);
        }

        // single-node exponential: the OU recursion and the curve scheme are
        // the same algebra, fp-close along whole paths, and the start value
        // is shared bitwise
        let plain = simulate(&model, grid, 8192, 223).unwrap();
        let mut sup = 0.0f64;
        for p in 0..8192 {
            assert_eq!(
                ou.projection(p, 0).to_bits(),
                plain.state(p, 0)[0].to_bits(),
                "the stationary start draw must match bitwise"
            );
            for n in 0..=64 {
                sup = sup.max((ou.projection(p, n) - plain.state(p, n)[0]).abs());
            }
        }
        assert!(sup <= 1e-10, "single-node OU projection should track the scheme exactly, sup gap {sup}");
    }

    #[test]
    fn single_node_equivalence_with_the_curve_lift() {
        let model = scalar_model(
            KernelSpec::exponential(0.8),
            DriftSpec::Linear { dim: 1, a: vec![-0.5] },
            0.5,
        );
        let grid = TimeGrid::new(1.0, 64);
        let xgrid = SpaceGrid::default_lift();
        let lifted = simulate_lift(&model, grid, xgrid, 256, 233).unwrap();
        let quad = cm_quadrature(&model.kernel, 1, 1.0, grid.dt()).unwrap();
        let ou = simulate_ou(&model, &quad, grid, 256, 233).unwrap();
        let rep = ou_curve_equivalence(&ou, &lifted).unwrap();
        assert!(
            rep.sup_abs <= 1e-10,
            "exponential kernel: both lifts run the same recursion, sup gap {} at {:?}",
            rep.sup_abs,
            rep.worst
        );

        // deterministic transport: zero noise leaves only the (exactly
        // representable) initial curve on both sides
        let frozen = SVEModel::new(
            KernelSpec::exponential(1.0),
            WeightSpec::for_kernel(0.65, 1.0, 0.35),
            DriftSpec::Zero { dim: 1 },
            SigmaSpec::Constant { dim: 1, noise_dim: 1, values: vec![0.0] },
            InitialCurve::StationaryOu { rate: 1.0 },
        )
        .unwrap();
        let fr_lift = simulate_lift(&frozen, grid, SpaceGrid::default_lift(), 64, 239).unwrap();
        let fr_quad = cm_quadrature(&frozen.kernel, 1, 1.0, grid.dt()).unwrap();
        let fr_ou = simulate_ou(&frozen, &fr_quad, grid, 64, 239).unwrap();
        let fr_rep = ou_curve_equivalence(&fr_ou, &fr_lift).unwrap();
        assert!(
            fr_rep.sup_abs <= 1e-12,
            "transported prehistory is e^(-z(t+x))·y0 on both sides, sup gap {}",
            fr_rep.sup_abs
        );

        // decoupled inputs are rejected
        let other_seed = simulate_ou(&model, &quad, grid, 256, 234).unwrap();
        assert!(matches!(
            ou_curve_equivalence(&other_seed, &lifted),
            Err(Error::CouplingMismatch { .. })
        ));
        let other_grid = simulate_ou(&model, &quad, TimeGrid::new(1.0, 32), 256, 233).unwrap();
        assert!(matches!(
            ou_curve_equivalence(&other_grid, &lifted),
            Err(Error::CouplingMismatch { .. })
        ));
    }

    #[test]
    fn fractional_coupling_tracks_the_exact_oracle() {
        let model = SVEModel::fbm_type_two(0.3);
        let grid = TimeGrid::new(1.0, 64);
        let n_paths = 1024;
        let plain = simulate(&model, grid, n_paths, 241).unwrap();
        let xgrid = SpaceGrid::default_lift();
        let lifted = simulate_lift(&model, grid, xgrid, n_paths, 241).unwrap();

        let mut oracles = Vec::new();
        let mut sups = Vec::new();
        let mut kernel_errs = Vec::new();
        for nqn in [25usize, 50, 100] {
            let quad = cm_quadrature(&model.kernel, nqn, 1.0, grid.dt()).unwrap();
            let ou = simulate_ou(&model, &quad, grid, n_paths, 241).unwrap();
            let oracle = ou_coupling_oracle(&model.kernel, &quad, grid).unwrap();

            // the coupled difference is Gaussian with exactly that variance:
            // compare the sample mean square against it (chi-square se)
            let mut msq = 0.0;
            for p in 0..n_paths {
                let d = ou.projection(p, 64) - plain.state(p, 64)[0];
                msq += d * d;
            }
            msq /= n_paths as f64;
            let se = oracle * oracle * (2.0 / n_paths as f64).sqrt();
            let z = (msq - oracle * oracle).abs() / se;
            assert!(
                z < 3.5,
                "nq = {nqn}: mean-square gap {msq} vs oracle {} is {z} standard errors off",
                oracle * oracle
            );

            let rep = ou_curve_equivalence(&ou, &lifted).unwrap();

            // the newest-cell term alone explains almost all of the gap: the
            // per-node noise weights sum norms where the curve scheme takes
            // the norm of the sum, and no frequency refinement removes that
            let dt = grid.dt();
            let nw1: f64 = quad
                .nodes
                .iter()
                .zip(&quad.weights)
                .map(|(z, r)| r * (-(-2.0 * z * dt).exp_m1() / (2.0 * z * dt)).sqrt())
                .sum();
            let floor = dt.sqrt() * (nw1 - model.kernel.entry(0).cell_l2_mean(0.0, dt)).abs();
            assert!(
                floor >= 0.9 * oracle,
                "nq = {nqn}: the newest-cell floor {floor} should dominate the coupling gap {oracle}"
            );
            oracles.push(oracle);
            sups.push(rep.sup_abs);
            kernel_errs.push(quad.max_rel_error);
        }
        assert!(oracles[0] > oracles[1] && oracles[1] > oracles[2], "refinement must shrink the coupling gap: {oracles:?}");
        assert!(sups[0] > sups[1] && sups[1] > sups[2], "refinement must shrink the curve gap: {sups:?}");
        // the kernel reproduction error at least halves per node doubling
        // (measured 2.7x and 1.85x); the coupled RMS does not inherit that
        // rate because of the newest-cell floor asserted above
        assert!(
            kernel_errs[0] >= 1.4 * kernel_errs[1] && kernel_errs[1] >= 1.4 * kernel_errs[2],
            "kernel error should drop by at least 1.4x per doubling: {kernel_errs:?}"
        );
    }

    #[test]
    fn unrepresentable_initial_curves_are_rejected() {
        let grid = TimeGrid::new(1.0, 32);
        let frac = cm_quadrature(&KernelSpec::power_law(0.3, true), 25, 1.0, grid.dt()).unwrap();

        let fbm1 = SVEModel::fbm_type_one(0.3);
        assert!(matches!(
            simulate_ou(&fbm1, &cm_quadrature(&fbm1.kernel, 25, 1.0, grid.dt()).unwrap(), grid, 8, 1),
            Err(Error::InitialCurveNotRepresentable { .. })
        ));

        let mut nonzero = SVEModel::fbm_type_two(0.3);
        nonzero.initial = InitialCurve::Deterministic(Curve::constant(vec![0.3]));
        assert!(matches!(
            simulate_ou(&nonzero, &frac, grid, 8, 1),
            Err(Error::InitialCurveNotRepresentable { .. })
        ));

        // stationary prehistory against a non-matching quadrature
        let mut stat = SVEModel::stationary_ou();
        stat.kernel = KernelSpec::power_law(0.3, true);
        assert!(matches!(
            simulate_ou(&stat, &frac, grid, 8, 1),
            Err(Error::InitialCurveNotRepresentable { .. })
        ));

        // multi-dimensional models have no scalar frequency field
        let bergomi = SVEModel::rough_bergomi(0.3, 0.5, -0.7, 0.0);
        assert!(matches!(simulate_ou(&bergomi, &frac, grid, 8, 1), Err(Error::Config(_))));
    }
}
