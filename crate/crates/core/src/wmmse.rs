//! Classical weighted-MMSE beamforming by block-coordinate descent.
//!
//! One sweep updates, in order: the receive filters `U` (MMSE receivers
//! for the current beamformers), the weights `W` (inverses of the
//! per-node error matrices), and the transmit beamformers `V` through a
//! regularized linear solve whose multiplier `mu_i` enforces the power
//! budget `Tr(V_i V_i^H) <= Pmax`. The multiplier is found by bisection
//! on the power curve, which is strictly decreasing in `mu`.
//!
//! The solver works on a single CSI instance; callers parallelize across
//! instances. Per-node updates within a sweep are independent.

use crate::channel::{CsiTensor, NetworkConfig};
use crate::linalg::{self, CMatrix, LinalgError};
use num_complex::Complex64;
use thiserror::Error;

/// One `T x d` transmit beamformer per node.
pub type BeamformerSet = Vec<CMatrix>;
/// One `R x d` receive filter per node.
pub type ReceiverSet = Vec<CMatrix>;
/// One `d x d` weight matrix per node.
pub type WeightSet = Vec<CMatrix>;

#[derive(Debug, Error)]
pub enum WmmseError {
    #[error("linear solve failed at node {node}: {source}")]
    NodeSolve { node: usize, source: LinalgError },
    #[error("{context}: {source}")]
    Domain {
        context: &'static str,
        source: LinalgError,
    },
    #[error("power bisection at node {node} found no bracket after {doublings} doublings")]
    Bracket { node: usize, doublings: usize },
}

/// Index set used to couple node `i` to the rest of the network in the
/// beamformer update.
///
/// `ReceiverChannels` builds the quadratic term from `H_ij`, the channels
/// arriving at receiver `i`; this mirrors the index pattern of the
/// receiver update and is what the unfolded model uses.
/// `TransmitterChannels` builds it from `H_ji`, the channels transmitter
/// `i` actually drives; this variant is the exact block minimizer of the
/// surrogate objective, so descent is guaranteed only under it.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum VUpdateConvention {
    #[default]
    ReceiverChannels,
    TransmitterChannels,
}

/// Knobs for [`run_wmmse`] and friends.
#[derive(Clone, Debug)]
pub struct SolverOptions {
    /// Sweep cap.
    pub max_iters: usize,
    /// Largest allowed gap between `Tr(V V^H)` and `Pmax` at a saturated
    /// node. Bisection keeps halving to a machine-width bracket anyway, so
    /// the achieved gap is normally far smaller.
    pub bisection_tol: f64,
    /// Cap on bracket doublings and on bisection halvings, separately.
    pub bisection_max_steps: usize,
    /// Record the surrogate objective after every sweep.
    pub objective_trace: bool,
    /// Stop early once `|V_t - V_{t-1}|_F < 1e-8 sqrt(M Pmax)`.
    pub early_exit: bool,
    pub v_update_convention: VUpdateConvention,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iters: 100,
            bisection_tol: 1e-8,
            bisection_max_steps: 200,
            objective_trace: false,
            early_exit: true,
            v_update_convention: VUpdateConvention::default(),
        }
    }
}

/// Solver output. `objective_trace` is empty unless requested.
#[derive(Clone, Debug)]
pub struct WmmseRun {
    pub v: BeamformerSet,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
}

/// Beamformer update output; `mu[i]` is the accepted power multiplier.
#[derive(Clone, Debug)]
pub struct VUpdate {
    pub v: BeamformerSet,
    pub mu: Vec<f64>,
}

/// Per-sweep state of the fixed-multiplier solver.
#[derive(Clone, Debug)]
pub struct SweepState {
    pub u: ReceiverSet,
    pub w_hat: WeightSet,
    pub v: BeamformerSet,
}

/// Uniform starting beamformer entry: every coefficient is
/// `sqrt(Pmax / (2 T d)) (1 + i)`, so the initial power is exactly `Pmax`.
pub fn v_init(t: usize, d: usize, pmax: f64) -> CMatrix {
    let a = (pmax / (2.0 * (t * d) as f64)).sqrt();
    CMatrix::from_fn(t, d, |_, _| Complex64::new(a, a))
}

pub fn initial_beamformers(config: &NetworkConfig) -> BeamformerSet {
    vec![v_init(config.t, config.d, config.pmax); config.m]
}

/// Undershoot applied when scaling onto the power sphere. Keeps the scaled
/// power strictly below the budget despite rounding, so reapplying the
/// projection is a bitwise no-op. The deficit is ~1e-12 relative, far below
/// every tolerance layered on top.
pub(crate) const SATURATION_MARGIN: f64 = 1.0 - 1e-12;

/// Scales `v` back onto the power sphere when it exceeds the budget;
/// identity otherwise (boundary included).
pub fn project_power(v: &CMatrix, pmax: f64) -> CMatrix {
    let tr = v.frob_norm_sqr();
    if tr <= pmax {
        v.clone()
    } else {
        let factor = (1.0 / tr.sqrt()) * (pmax.sqrt() * SATURATION_MARGIN);
        v.scale(Complex64::new(factor, 0.0))
    }
}

/// Tags a shape failure with the solver step it came from.
fn domain(context: &'static str) -> impl Fn(LinalgError) -> WmmseError {
    move |source| WmmseError::Domain { context, source }
}

/// Received-signal covariance at receiver `i`:
/// `sigma^2 I_R + sum_j H_ij V_j V_j^H H_ij^H`, optionally without the
/// own-signal term `j = i`.
fn received_covariance(
    csi: &CsiTensor,
    v: &[CMatrix],
    sigma: f64,
    i: usize,
    skip_own: bool,
) -> Result<CMatrix, LinalgError> {
    let mut a = CMatrix::scaled_identity(csi.r, Complex64::new(sigma * sigma, 0.0));
    for j in 0..csi.m {
        if skip_own && j == i {
            continue;
        }
        let hv = csi.block(i, j).gemm(&v[j])?;
        a = a.add(&hv.gemm(&hv.adjoint())?)?;
    }
    Ok(a)
}

/// MMSE receiver update: per node,
/// `U_i = (sum_j H_ij V_j V_j^H H_ij^H + sigma^2 I_R)^{-1} H_ii V_i`.
pub fn update_u(csi: &CsiTensor, v: &[CMatrix], sigma: f64) -> Result<ReceiverSet, WmmseError> {
    (0..csi.m)
        .map(|i| {
            let a = received_covariance(csi, v, sigma, i, false)
                .map_err(domain("received covariance"))?;
            let rhs = csi
                .block(i, i)
                .gemm(&v[i])
                .map_err(domain("receiver update right-hand side"))?;
            linalg::hermitian_solve(&a, &rhs)
                .map_err(|source| WmmseError::NodeSolve { node: i, source })
        })
        .collect()
}

/// Weight update: per node, `W_i = (I_d - U_i^H H_ii V_i)^{-1}`.
///
/// At the MMSE receiver the gap equals the Hermitian error matrix, so it is
/// symmetrized before inversion. Skipping that step lets cancellation noise
/// in `1 - U^H H V` (absolute size ~1e-16) blow up into an `O(1)` skew part
/// of `W` once the gap shrinks below ~1e-8 near convergence at high SNR.
pub fn update_w_hat(
    csi: &CsiTensor,
    u: &[CMatrix],
    v: &[CMatrix],
) -> Result<WeightSet, WmmseError> {
    let d = v[0].cols();
    (0..csi.m)
        .map(|i| {
            let hv = csi
                .block(i, i)
                .gemm(&v[i])
                .map_err(domain("weight update signal term"))?;
            let uhv = u[i]
                .adjoint()
                .gemm(&hv)
                .map_err(domain("weight update signal term"))?;
            let g = CMatrix::identity(d)
                .sub(&uhv)
                .map_err(domain("weight update gap"))?;
            let gh = g
                .add(&g.adjoint())
                .map_err(domain("weight update gap"))?
                .scale(Complex64::new(0.5, 0.0));
            linalg::hermitian_solve(&gh, &CMatrix::identity(d))
                .map_err(|source| WmmseError::NodeSolve { node: i, source })
        })
        .collect()
}

/// Error matrix of the linear receiver at node `i`:
/// `E_i = (I - U_i^H H_ii V_i)(I - U_i^H H_ii V_i)^H
///        + sum_{j != i} U_i^H H_ij V_j V_j^H H_ij^H U_i
///        + sigma^2 U_i^H U_i`.
///
/// Inputs must conform to one network (U_i is R x d, V_j is T x d).
pub fn mse_matrix(csi: &CsiTensor, u: &[CMatrix], v: &[CMatrix], sigma: f64, i: usize) -> CMatrix {
    let shapes = "conforming receiver and beamformer shapes";
    let d = v[i].cols();
    let hv = csi.block(i, i).gemm(&v[i]).expect(shapes);
    let g = CMatrix::identity(d)
        .sub(&u[i].adjoint().gemm(&hv).expect(shapes))
        .expect(shapes);
    let mut e = g.gemm(&g.adjoint()).expect(shapes);
    for j in 0..csi.m {
        if j == i {
            continue;
        }
        let hv = csi.block(i, j).gemm(&v[j]).expect(shapes);
        let x = u[i].adjoint().gemm(&hv).expect(shapes);
        e = e.add(&x.gemm(&x.adjoint()).expect(shapes)).expect(shapes);
    }
    let un = u[i].adjoint().gemm(&u[i]).expect(shapes);
    e.add(&un.scale(Complex64::new(sigma * sigma, 0.0)))
        .expect(shapes)
}

/// Surrogate objective `sum_i (Tr(W_i E_i) - ln det W_i)`. Natural log;
/// only differences of this value are meaningful downstream.
pub fn surrogate_objective(
    csi: &CsiTensor,
    u: &[CMatrix],
    w: &[CMatrix],
    v: &[CMatrix],
    sigma: f64,
) -> Result<f64, WmmseError> {
    let mut total = 0.0;
    for i in 0..csi.m {
        let e = mse_matrix(csi, u, v, sigma, i);
        let tr = w[i]
            .gemm(&e)
            .map_err(domain("weighted error trace"))?
            .trace()
            .re;
        let logdet = linalg::log2_det(&w[i]).map_err(|source| WmmseError::Domain {
            context: "surrogate objective needs positive definite weights",
            source,
        })? * std::f64::consts::LN_2;
        total += tr - logdet;
    }
    Ok(total)
}

/// The quadratic coupling of the beamformer update,
/// `sum_j G_j^H U_j W_j U_j^H G_j` with `G_j` selected by the convention.
fn v_update_gram(
    csi: &CsiTensor,
    u: &[CMatrix],
    w: &[CMatrix],
    i: usize,
    convention: VUpdateConvention,
) -> Result<CMatrix, LinalgError> {
    let mut a = CMatrix::zeros(csi.t, csi.t);
    for j in 0..csi.m {
        let g = match convention {
            VUpdateConvention::ReceiverChannels => csi.block(i, j),
            VUpdateConvention::TransmitterChannels => csi.block(j, i),
        };
        let p = g.adjoint().gemm(&u[j])?; // T x d
        a = a.add(&p.gemm(&w[j])?.gemm(&p.adjoint())?)?;
    }
    Ok(a)
}

/// Beamformer update with the power constraint enforced exactly: per node
/// `V_i(mu) = (gram_i + mu I_T)^{-1} H_ii^H U_i W_i`, with `mu = 0` when
/// the unconstrained solution fits the budget and otherwise the unique
/// root of `Tr(V(mu) V(mu)^H) = Pmax`.
pub fn update_v_classical(
    csi: &CsiTensor,
    u: &[CMatrix],
    w: &[CMatrix],
    config: &NetworkConfig,
    opts: &SolverOptions,
) -> Result<VUpdate, WmmseError> {
    let pmax = config.pmax;
    let mut v = Vec::with_capacity(csi.m);
    let mut mu = Vec::with_capacity(csi.m);
    for i in 0..csi.m {
        let a0 = v_update_gram(csi, u, w, i, opts.v_update_convention)
            .map_err(domain("beamformer coupling"))?;
        let uw = u[i]
            .gemm(&w[i])
            .map_err(domain("beamformer update right-hand side"))?;
        let rhs = csi
            .block(i, i)
            .adjoint()
            .gemm(&uw)
            .map_err(domain("beamformer update right-hand side"))?;
        if rhs.max_abs() == 0.0 {
            v.push(CMatrix::zeros(csi.t, config.d));
            mu.push(0.0);
            continue;
        }

        let solve_at = |m: f64| -> Result<CMatrix, WmmseError> {
            let shifted = a0
                .add(&CMatrix::scaled_identity(csi.t, Complex64::new(m, 0.0)))
                .map_err(domain("beamformer coupling shift"))?;
            linalg::hermitian_solve(&shifted, &rhs)
                .map_err(|source| WmmseError::NodeSolve { node: i, source })
        };

        // Unconstrained first. A singular gram (rank-deficient coupling,
        // e.g. a lone node with d < T) has no unique mu = 0 solution;
        // a relative shift keeps the solve stable while staying far below
        // the gram's working eigenvalues, and bisection handles the rest.
        match linalg::hermitian_solve(&a0, &rhs) {
            Ok(v0) => {
                if v0.frob_norm_sqr() <= pmax {
                    v.push(v0);
                    mu.push(0.0);
                    continue;
                }
            }
            Err(_) => {
                let shift = a0.max_abs() * 1e-9;
                if let Ok(vf) = solve_at(shift) {
                    if vf.frob_norm_sqr() <= pmax {
                        v.push(vf);
                        mu.push(shift);
                        continue;
                    }
                }
            }
        }

        // A solve that fails below the gram's numerical noise floor sits on
        // the same side of the bracket as an over-budget solution: power(mu)
        // blows up as mu drops toward -lambda_min. Other failures propagate.
        let over_budget = |m: f64| -> Result<bool, WmmseError> {
            match solve_at(m) {
                Ok(vm) => Ok(vm.frob_norm_sqr() >= pmax),
                Err(WmmseError::NodeSolve {
                    source: LinalgError::NotPositiveDefinite { .. } | LinalgError::Singular { .. },
                    ..
                }) => Ok(true),
                Err(e) => Err(e),
            }
        };

        // Bracket: power(mu) decreases strictly, so double until feasible.
        let mut lo = 0.0;
        let mut hi = 1.0;
        let mut doublings = 0;
        while over_budget(hi)? {
            lo = hi;
            hi *= 2.0;
            doublings += 1;
            if doublings > opts.bisection_max_steps {
                return Err(WmmseError::Bracket {
                    node: i,
                    doublings,
                });
            }
        }
        // Halve to a machine-width bracket. Stopping at bisection_tol on
        // power would leave an O(mu * tol) objective increase on the
        // table; machine width keeps BCD descent intact to roundoff.
        for _ in 0..opts.bisection_max_steps {
            if hi - lo <= 1e-14 * hi.max(1.0) {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if over_budget(mid)? {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        // The upper end is the feasible side of the bracket.
        v.push(solve_at(hi)?);
        mu.push(hi);
    }
    Ok(VUpdate { v, mu })
}

/// Power projection with the same scalar operation sequence as the
/// network's saturation stage (reciprocal of the norm, then one complex
/// scaling), so the pinned update below stays bitwise equal to it.
fn saturate_power(bar: &CMatrix, pmax: f64) -> CMatrix {
    if bar.frob_norm_sqr() <= pmax {
        return bar.clone();
    }
    let inv = Complex64::new(1.0, 0.0) / Complex64::new(bar.frob_norm(), 0.0);
    let factor = inv * Complex64::new(pmax.sqrt() * SATURATION_MARGIN, 0.0);
    bar.scale(factor)
}

/// Beamformer update with a fixed multiplier instead of bisection; any
/// budget violation is handled by scaling back onto the power sphere.
///
/// This is the bridge the unfolded network is checked against, so it
/// mirrors the network's beamformer stage operation for operation: the
/// gram accumulates onto `mu I` (not onto zero with a final shift), the
/// system is solved by pivoted LU (the network's multiplier is complex, so
/// its stage cannot use the Cholesky path), and saturation runs through
/// [`saturate_power`]. A zeroed network then reproduces this update float
/// for float.
pub fn update_v_pinned(
    csi: &CsiTensor,
    u: &[CMatrix],
    w: &[CMatrix],
    mu: f64,
    config: &NetworkConfig,
    convention: VUpdateConvention,
) -> Result<BeamformerSet, WmmseError> {
    (0..csi.m)
        .map(|i| {
            let mut a = CMatrix::scaled_identity(csi.t, Complex64::new(mu, 0.0));
            for j in 0..csi.m {
                let g = match convention {
                    VUpdateConvention::ReceiverChannels => csi.block(i, j),
                    VUpdateConvention::TransmitterChannels => csi.block(j, i),
                };
                let p = g
                    .adjoint()
                    .gemm(&u[j])
                    .map_err(domain("beamformer coupling"))?;
                let term = p
                    .gemm(&w[j])
                    .and_then(|pw| pw.gemm(&p.adjoint()))
                    .map_err(domain("beamformer coupling"))?;
                a = a.add(&term).map_err(domain("beamformer coupling"))?;
            }
            let uw = u[i]
                .gemm(&w[i])
                .map_err(domain("beamformer update right-hand side"))?;
            let rhs = csi
                .block(i, i)
                .adjoint()
                .gemm(&uw)
                .map_err(domain("beamformer update right-hand side"))?;
            let bar = linalg::solve(&a, &rhs)
                .map_err(|source| WmmseError::NodeSolve { node: i, source })?;
            Ok(saturate_power(&bar, config.pmax))
        })
        .collect()
}

/// Weighted sum rate in bits:
/// `sum_i alpha_i log2 det(I + H_ii V_i V_i^H H_ii^H B_i^{-1})` with
/// `B_i` the interference-plus-noise covariance. Evaluated as
/// `log2 det(B_i + S_i) - log2 det(B_i)`, which keeps every determinant
/// over a Hermitian positive definite matrix.
pub fn sum_rate(
    csi: &CsiTensor,
    v: &[CMatrix],
    sigma: f64,
    alpha: &[f64],
) -> Result<f64, WmmseError> {
    let mut total = 0.0;
    for i in 0..csi.m {
        let b = received_covariance(csi, v, sigma, i, true)
            .map_err(domain("interference covariance"))?;
        let hv = csi
            .block(i, i)
            .gemm(&v[i])
            .map_err(domain("signal covariance"))?;
        let s = hv
            .gemm(&hv.adjoint())
            .map_err(domain("signal covariance"))?;
        let bs = b.add(&s).map_err(domain("signal covariance"))?;
        let ld_b = linalg::log2_det(&b).map_err(|source| WmmseError::Domain {
            context: "interference-plus-noise covariance must be positive definite",
            source,
        })?;
        let ld_bs = linalg::log2_det(&bs).map_err(|source| WmmseError::Domain {
            context: "signal-plus-interference covariance must be positive definite",
            source,
        })?;
        total += alpha[i] * (ld_bs - ld_b);
    }
    Ok(total)
}

fn beamformer_delta(a: &[CMatrix], b: &[CMatrix]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.sub(y).expect("matching beamformer shapes").frob_norm_sqr())
        .sum::<f64>()
        .sqrt()
}

fn run_sweeps(
    csi: &CsiTensor,
    config: &NetworkConfig,
    opts: &SolverOptions,
    mut on_sweep: impl FnMut(&ReceiverSet, &WeightSet, &BeamformerSet),
) -> Result<WmmseRun, WmmseError> {
    let mut v = initial_beamformers(config);
    let mut trace = Vec::new();
    let mut iterations = 0;
    let exit_threshold = 1e-8 * (config.m as f64 * config.pmax).sqrt();
    for _ in 0..opts.max_iters {
        let u = update_u(csi, &v, config.sigma)?;
        let w = update_w_hat(csi, &u, &v)?;
        let upd = update_v_classical(csi, &u, &w, config, opts)?;
        let delta = beamformer_delta(&v, &upd.v);
        v = upd.v;
        iterations += 1;
        if opts.objective_trace {
            trace.push(surrogate_objective(csi, &u, &w, &v, config.sigma)?);
        }
        on_sweep(&u, &w, &v);
        if opts.early_exit && delta < exit_threshold {
            break;
        }
    }
    Ok(WmmseRun {
        v,
        objective_trace: trace,
        iterations,
    })
}

/// Full solver: uniform start, then up to `max_iters` sweeps of
/// `update_u`, `update_w_hat`, `update_v_classical`.
pub fn run_wmmse(
    csi: &CsiTensor,
    config: &NetworkConfig,
    opts: &SolverOptions,
) -> Result<WmmseRun, WmmseError> {
    run_sweeps(csi, config, opts, |_, _, _| {})
}

/// Like [`run_wmmse`] but returns the complete state of every sweep.
pub fn run_wmmse_states(
    csi: &CsiTensor,
    config: &NetworkConfig,
    opts: &SolverOptions,
) -> Result<Vec<SweepState>, WmmseError> {
    let mut states = Vec::new();
    run_sweeps(csi, config, opts, |u, w, v| {
        states.push(SweepState {
            u: u.clone(),
            w_hat: w.clone(),
            v: v.clone(),
        })
    })?;
    Ok(states)
}

/// Like [`run_wmmse`] but also returns the beamformers after every sweep.
pub fn run_wmmse_sweeps(
    csi: &CsiTensor,
    config: &NetworkConfig,
    opts: &SolverOptions,
) -> Result<(WmmseRun, Vec<BeamformerSet>), WmmseError> {
    let mut snaps = Vec::new();
    let run = run_sweeps(csi, config, opts, |_, _, v| snaps.push(v.to_vec()))?;
    Ok((run, snaps))
}

/// The truncated baseline: [`run_wmmse`] capped at `k` sweeps.
pub fn run_truncated(
    csi: &CsiTensor,
    config: &NetworkConfig,
    opts: &SolverOptions,
    k: usize,
) -> Result<WmmseRun, WmmseError> {
    let mut capped = opts.clone();
    capped.max_iters = k;
    run_wmmse(csi, config, &capped)
}

/// Truncated solver with the multiplier pinned to a fixed real value and
/// the power budget enforced by projection. Returns the complete state of
/// every sweep.
pub fn run_pinned_mu(
    csi: &CsiTensor,
    config: &NetworkConfig,
    k: usize,
    mu: f64,
    convention: VUpdateConvention,
) -> Result<Vec<SweepState>, WmmseError> {
    let mut v = initial_beamformers(config);
    let mut states = Vec::with_capacity(k);
    for _ in 0..k {
        let u = update_u(csi, &v, config.sigma)?;
        let w_hat = update_w_hat(csi, &u, &v)?;
        v = update_v_pinned(csi, &u, &w_hat, mu, config, convention)?;
        states.push(SweepState {
            u,
            w_hat,
            v: v.clone(),
        });
    }
    Ok(states)
}
