//! Unrolled beamforming network.
//!
//! A forward pass runs K solver layers with shared parameters. Each layer
//! repeats the alternating receiver/weight/beamformer updates of the
//! classical solver, but perturbs the weights with a learned correction and
//! replaces the per-node power search with one learned multiplier:
//!
//! * `gamma` compresses the CSI tensor into a dense M x M graph matrix S,
//!   one learned scalar per channel block, rows normalized to unit L1 mass.
//! * `psi` is a two-hop graph convolution over S that turns per-node
//!   features Q = [u^T v^T] into a parameter vector per node.
//! * That vector is unpacked into a small one-hidden-layer complex MLP
//!   `phi` which maps the exact weight W_hat_i to an additive correction.
//! * The beamformer solve uses a single learned complex multiplier mu in
//!   place of the bisection, then `beta` scales any over-budget node back
//!   onto the power sphere.
//!
//! Everything is written against [`Algebra`], so the plain evaluation path
//! and the taped differentiable path execute identical float operations.

use num_complex::Complex64;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Algebra, AutodiffError, DirectAlgebra, Program};
use crate::channel::{CsiTensor, NetworkConfig};
use crate::linalg::{self, CMatrix};
use crate::seed;
use crate::wmmse::{v_init, BeamformerSet, SATURATION_MARGIN};

/// Architecture widths: `f` is the graph-convolution feature width, `g` the
/// hidden width of the per-node MLP.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HyperParams {
    pub f: usize,
    pub g: usize,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams { f: 32, g: 16 }
    }
}

impl HyperParams {
    /// Width of one node feature row: one column per receive and transmit
    /// antenna.
    pub fn feature_width(&self, config: &NetworkConfig) -> usize {
        config.r + config.t
    }

    /// Entries needed to fill one per-node MLP: W1 (g x d^2), b1 (g),
    /// W2 (d^2 x g), b2 (d^2), all flattened row-major in that order.
    pub fn mlp_param_count(&self, d: usize) -> usize {
        let d2 = d * d;
        self.g * d2 + self.g + d2 * self.g + d2
    }
}

/// Complex parameter counts by block family.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamCount {
    pub theta: usize,
    pub omega: usize,
    pub mu: usize,
    pub total: usize,
}

/// All learnable blocks. Shared across layers, so one set runs at any depth.
#[derive(Clone, Debug)]
pub struct ModelParams {
    pub hyper: HyperParams,
    /// f x (r + t), self-loop mix of the first convolution hop.
    pub theta11: CMatrix,
    /// f x (r + t), neighbor mix of the first hop.
    pub theta12: CMatrix,
    /// p x f, self-loop mix of the second hop.
    pub theta21: CMatrix,
    /// p x f, neighbor mix of the second hop.
    pub theta22: CMatrix,
    /// r x t, per-coefficient channel compression weights.
    pub omega: CMatrix,
    /// 1 x 1, beamformer regularization multiplier.
    pub mu: CMatrix,
}

impl ModelParams {
    /// Block order used everywhere parameters travel as a flat list.
    pub const BLOCK_NAMES: [&'static str; 6] =
        ["theta11", "theta12", "theta21", "theta22", "omega", "mu"];

    pub fn block_names() -> Vec<String> {
        Self::BLOCK_NAMES.iter().map(|s| (*s).to_string()).collect()
    }

    /// Glorot-style draw: each real component N(0, 1/(fan_in + fan_out)),
    /// one named stream per block so layouts can change independently.
    /// `mu` starts at the fixed value 0.1.
    pub fn init(config: &NetworkConfig, hyper: HyperParams, seed_value: u64) -> ModelParams {
        let fp = hyper.feature_width(config);
        let p = hyper.mlp_param_count(config.d);
        let draw = |label: &str, rows: usize, cols: usize, fan_in: usize, fan_out: usize| {
            let mut rng = seed::rng(seed_value, label);
            let sd = (1.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Normal::new(0.0, sd).expect("positive spread");
            CMatrix::from_fn(rows, cols, |_, _| {
                Complex64::new(dist.sample(&mut rng), dist.sample(&mut rng))
            })
        };
        ModelParams {
            hyper,
            theta11: draw("theta11", hyper.f, fp, fp, hyper.f),
            theta12: draw("theta12", hyper.f, fp, fp, hyper.f),
            theta21: draw("theta21", p, hyper.f, hyper.f, p),
            theta22: draw("theta22", p, hyper.f, hyper.f, p),
            omega: draw("omega", config.r, config.t, config.r * config.t, 1),
            mu: CMatrix::scalar(Complex64::new(0.1, 0.0)),
        }
    }

    /// All-zero convolution and compression blocks with a pinned mu. With
    /// these parameters every layer collapses to the exact solver update
    /// with a fixed multiplier.
    pub fn zero_theta(config: &NetworkConfig, hyper: HyperParams, mu: Complex64) -> ModelParams {
        let fp = hyper.feature_width(config);
        let p = hyper.mlp_param_count(config.d);
        ModelParams {
            hyper,
            theta11: CMatrix::zeros(hyper.f, fp),
            theta12: CMatrix::zeros(hyper.f, fp),
            theta21: CMatrix::zeros(p, hyper.f),
            theta22: CMatrix::zeros(p, hyper.f),
            omega: CMatrix::zeros(config.r, config.t),
            mu: CMatrix::scalar(mu),
        }
    }

    pub fn validate(&self, config: &NetworkConfig) -> Result<(), AutodiffError> {
        let fp = self.hyper.feature_width(config);
        let p = self.hyper.mlp_param_count(config.d);
        let want = [
            ("theta11", self.theta11.shape(), (self.hyper.f, fp)),
            ("theta12", self.theta12.shape(), (self.hyper.f, fp)),
            ("theta21", self.theta21.shape(), (p, self.hyper.f)),
            ("theta22", self.theta22.shape(), (p, self.hyper.f)),
            ("omega", self.omega.shape(), (config.r, config.t)),
            ("mu", self.mu.shape(), (1, 1)),
        ];
        for (name, got, expect) in want {
            if got != expect {
                return Err(AutodiffError::Unsupported(format!(
                    "{name} has shape {}x{}, expected {}x{}",
                    got.0, got.1, expect.0, expect.1
                )));
            }
        }
        Ok(())
    }

    pub fn count_parameters(&self) -> ParamCount {
        let len = |m: &CMatrix| m.data().len();
        let theta = len(&self.theta11) + len(&self.theta12) + len(&self.theta21) + len(&self.theta22);
        let omega = len(&self.omega);
        let mu = len(&self.mu);
        ParamCount {
            theta,
            omega,
            mu,
            total: theta + omega + mu,
        }
    }

    /// Blocks in [`Self::BLOCK_NAMES`] order.
    pub fn to_blocks(&self) -> Vec<CMatrix> {
        vec![
            self.theta11.clone(),
            self.theta12.clone(),
            self.theta21.clone(),
            self.theta22.clone(),
            self.omega.clone(),
            self.mu.clone(),
        ]
    }

    pub fn from_blocks(hyper: HyperParams, blocks: &[CMatrix]) -> Result<ModelParams, AutodiffError> {
        if blocks.len() != Self::BLOCK_NAMES.len() {
            return Err(AutodiffError::ParamCount {
                declared: Self::BLOCK_NAMES.len(),
                got: blocks.len(),
            });
        }
        Ok(ModelParams {
            hyper,
            theta11: blocks[0].clone(),
            theta12: blocks[1].clone(),
            theta21: blocks[2].clone(),
            theta22: blocks[3].clone(),
            omega: blocks[4].clone(),
            mu: blocks[5].clone(),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.theta11.is_finite()
            && self.theta12.is_finite()
            && self.theta21.is_finite()
            && self.theta22.is_finite()
            && self.omega.is_finite()
            && self.mu.is_finite()
    }
}

/// One node's unpacked MLP blocks.
#[derive(Clone, Debug)]
pub struct NodeMlpParams {
    pub w1: CMatrix,
    pub b1: CMatrix,
    pub w2: CMatrix,
    pub b2: CMatrix,
}

impl NodeMlpParams {
    /// Splits one convolution output row into MLP blocks. Layout: W1
    /// row-major, then b1, then W2 row-major, then b2.
    pub fn from_row(row: &[Complex64], g: usize, d: usize) -> Result<NodeMlpParams, AutodiffError> {
        let d2 = d * d;
        let expect = g * d2 + g + d2 * g + d2;
        if row.len() != expect {
            return Err(AutodiffError::Unsupported(format!(
                "mlp parameter row has {} entries, expected {}",
                row.len(),
                expect
            )));
        }
        let mut at = 0;
        let mut take = |n: usize| {
            let piece = &row[at..at + n];
            at += n;
            piece
        };
        Ok(NodeMlpParams {
            w1: CMatrix::from_rows(g, d2, take(g * d2)),
            b1: CMatrix::from_rows(g, 1, take(g)),
            w2: CMatrix::from_rows(d2, g, take(d2 * g)),
            b2: CMatrix::from_rows(d2, 1, take(d2)),
        })
    }

    /// Inverse of [`Self::from_row`].
    pub fn flatten(&self) -> Vec<Complex64> {
        let mut out = Vec::with_capacity(
            self.w1.data().len() + self.b1.data().len() + self.w2.data().len() + self.b2.data().len(),
        );
        out.extend_from_slice(self.w1.data());
        out.extend_from_slice(self.b1.data());
        out.extend_from_slice(self.w2.data());
        out.extend_from_slice(self.b2.data());
        out
    }
}

/// Every intermediate of one layer, in computation order. `V` is [`CMatrix`]
/// on the plain path and a tape node id on the differentiable one.
#[derive(Clone, Debug)]
pub struct LayerStages<V> {
    /// Normalized graph matrix, m x m.
    pub s: V,
    /// Node features entering the convolution, m x (r + t).
    pub q: V,
    /// First-hop activations, m x f.
    pub z: V,
    /// Second-hop activations holding the packed MLP parameters, m x p.
    pub xi: V,
    /// Receivers, r x d each.
    pub u: Vec<V>,
    /// Exact inverse-mse weights, d x d each.
    pub w_hat: Vec<V>,
    /// Learned weight corrections, d x d each.
    pub phi: Vec<V>,
    /// Corrected weights W_hat + phi, d x d each.
    pub w: Vec<V>,
    /// Beamformers before the power projection, t x d each.
    pub v_bar: Vec<V>,
    /// Emitted beamformers, t x d each.
    pub v: Vec<V>,
}

/// Concrete per-layer record returned by [`forward`].
pub type LayerTrace = LayerStages<CMatrix>;

/// Parameter values in block order, after arity checking.
struct NetValues<V> {
    th11: V,
    th12: V,
    th21: V,
    th22: V,
    omega: V,
    mu: V,
}

impl<V: Clone> NetValues<V> {
    fn from_slice(params: &[V]) -> Result<NetValues<V>, AutodiffError> {
        if params.len() != ModelParams::BLOCK_NAMES.len() {
            return Err(AutodiffError::ParamCount {
                declared: ModelParams::BLOCK_NAMES.len(),
                got: params.len(),
            });
        }
        Ok(NetValues {
            th11: params[0].clone(),
            th12: params[1].clone(),
            th21: params[2].clone(),
            th22: params[3].clone(),
            omega: params[4].clone(),
            mu: params[5].clone(),
        })
    }
}

#[derive(Clone, Copy)]
struct Dims {
    m: usize,
    r: usize,
    t: usize,
    d: usize,
    sigma: f64,
    pmax: f64,
    g: usize,
}

impl Dims {
    fn new(config: &NetworkConfig, hyper: &HyperParams) -> Dims {
        Dims {
            m: config.m,
            r: config.r,
            t: config.t,
            d: config.d,
            sigma: config.sigma,
            pmax: config.pmax,
            g: hyper.g,
        }
    }
}

/// Fixed matrices reused by every layer.
struct LayerConsts<V> {
    /// sigma^2 I_r
    noise: V,
    ident_d: V,
    ident_t: V,
}

fn make_consts<A: Algebra>(alg: &mut A, dims: &Dims) -> LayerConsts<A::Value> {
    let var = Complex64::new(dims.sigma * dims.sigma, 0.0);
    LayerConsts {
        noise: alg.constant(CMatrix::scaled_identity(dims.r, var)),
        ident_d: alg.constant(CMatrix::identity(dims.d)),
        ident_t: alg.constant(CMatrix::identity(dims.t)),
    }
}

/// Lifts the channel blocks into the algebra, row-major over (i, j).
fn lift_csi<A: Algebra>(alg: &mut A, csi: &CsiTensor) -> Vec<A::Value> {
    let mut h = Vec::with_capacity(csi.m * csi.m);
    for i in 0..csi.m {
        for j in 0..csi.m {
            h.push(alg.constant(csi.block(i, j)));
        }
    }
    h
}

/// MMSE receivers: U_i = (sum_j H_ij V_j V_j^H H_ij^H + sigma^2 I)^-1 H_ii V_i.
fn u_body<A: Algebra>(
    alg: &mut A,
    h: &[A::Value],
    v: &[A::Value],
    m: usize,
    noise: &A::Value,
) -> Result<Vec<A::Value>, AutodiffError> {
    let mut u = Vec::with_capacity(m);
    for i in 0..m {
        let mut cov = noise.clone();
        for j in 0..m {
            let hv = alg.gemm(&h[i * m + j], &v[j])?;
            let hvh = alg.adjoint(&hv);
            let outer = alg.gemm(&hv, &hvh)?;
            cov = alg.add(&cov, &outer)?;
        }
        let rhs = alg.gemm(&h[i * m + i], &v[i])?;
        u.push(alg.hermitian_solve(&cov, &rhs)?);
    }
    Ok(u)
}

/// Exact weights: W_hat_i = (I - U_i^H H_ii V_i)^-1.
fn w_hat_body<A: Algebra>(
    alg: &mut A,
    h: &[A::Value],
    u: &[A::Value],
    v: &[A::Value],
    m: usize,
    ident_d: &A::Value,
) -> Result<Vec<A::Value>, AutodiffError> {
    let mut w = Vec::with_capacity(m);
    for i in 0..m {
        let hv = alg.gemm(&h[i * m + i], &v[i])?;
        let uh = alg.adjoint(&u[i]);
        let uhv = alg.gemm(&uh, &hv)?;
        let gap = alg.sub(ident_d, &uhv)?;
        // Same symmetrization as the solver's weight update, in the same
        // operation order, so a zeroed network reproduces it float for float.
        let gap_h = alg.adjoint(&gap);
        let sym = alg.add(&gap, &gap_h)?;
        let sym = alg.scale(&sym, Complex64::new(0.5, 0.0));
        w.push(alg.hermitian_solve(&sym, ident_d)?);
    }
    Ok(w)
}

/// Graph matrix: raw scores s_ij = sum(omega .* H_ij), then each row is
/// divided by its L1 mass (plus a tiny floor, so an all-zero row stays zero).
fn gamma_body<A: Algebra>(
    alg: &mut A,
    h: &[A::Value],
    m: usize,
    omega: &A::Value,
) -> Result<A::Value, AutodiffError> {
    let mut rows: Option<A::Value> = None;
    for i in 0..m {
        let mut row: Option<A::Value> = None;
        for j in 0..m {
            let score = alg.sum_hadamard(omega, &h[i * m + j])?;
            row = Some(match row {
                None => score,
                Some(acc) => alg.hcat(&acc, &score)?,
            });
        }
        let row = row.expect("m >= 1");
        rows = Some(match rows {
            None => row,
            Some(acc) => alg.vcat(&acc, &row)?,
        });
    }
    let raw = rows.expect("m >= 1");
    Ok(alg.row_normalize(&raw))
}

/// Node feature rows q_i = [u_i^T, v_i^T], stacked into an m x (r + t) matrix.
fn features_body<A: Algebra>(
    alg: &mut A,
    u: &[A::Value],
    v: &[A::Value],
) -> Result<A::Value, AutodiffError> {
    let mut rows: Option<A::Value> = None;
    for (ui, vi) in u.iter().zip(v) {
        let ut = alg.transpose(ui);
        let vt = alg.transpose(vi);
        let row = alg.hcat(&ut, &vt)?;
        rows = Some(match rows {
            None => row,
            Some(acc) => alg.vcat(&acc, &row)?,
        });
    }
    rows.ok_or_else(|| AutodiffError::Unsupported("feature builder needs at least one node".into()))
}

/// Two graph-convolution hops with split self/neighbor weights:
/// Z = relu(diag(S) Q Th11^H + S Q Th12^H), Xi likewise from Z.
fn psi_body<A: Algebra>(
    alg: &mut A,
    s: &A::Value,
    q: &A::Value,
    th11: &A::Value,
    th12: &A::Value,
    th21: &A::Value,
    th22: &A::Value,
    m: usize,
) -> Result<(A::Value, A::Value), AutodiffError> {
    let mask = CMatrix::identity(m);
    let ds = alg.hadamard_const(s, &mask)?;

    let th11h = alg.adjoint(th11);
    let th12h = alg.adjoint(th12);
    let dq = alg.gemm(&ds, q)?;
    let self_mix = alg.gemm(&dq, &th11h)?;
    let sq = alg.gemm(s, q)?;
    let neighbor_mix = alg.gemm(&sq, &th12h)?;
    let pre = alg.add(&self_mix, &neighbor_mix)?;
    let z = alg.relu(&pre);

    let th21h = alg.adjoint(th21);
    let th22h = alg.adjoint(th22);
    let dz = alg.gemm(&ds, &z)?;
    let self_mix = alg.gemm(&dz, &th21h)?;
    let sz = alg.gemm(s, &z)?;
    let neighbor_mix = alg.gemm(&sz, &th22h)?;
    let pre = alg.add(&self_mix, &neighbor_mix)?;
    let xi = alg.relu(&pre);

    Ok((z, xi))
}

/// Unpacks row i of Xi into the per-node MLP and applies it to W_hat_i,
/// giving the correction phi_i and the perturbed weight W_i = W_hat_i + phi_i.
fn phi_body<A: Algebra>(
    alg: &mut A,
    xi: &A::Value,
    w_hat: &[A::Value],
    m: usize,
    g: usize,
    d: usize,
) -> Result<(Vec<A::Value>, Vec<A::Value>), AutodiffError> {
    let d2 = d * d;
    let mut phi = Vec::with_capacity(m);
    let mut w = Vec::with_capacity(m);
    for i in 0..m {
        let row = alg.slice_rows(xi, i, i + 1);
        let col = alg.transpose(&row);
        let w1_flat = alg.slice_rows(&col, 0, g * d2);
        let w1 = alg.reshape(&w1_flat, g, d2);
        let b1 = alg.slice_rows(&col, g * d2, g * d2 + g);
        let w2_flat = alg.slice_rows(&col, g * d2 + g, g * d2 + g + d2 * g);
        let w2 = alg.reshape(&w2_flat, d2, g);
        let b2 = alg.slice_rows(&col, g * d2 + g + d2 * g, g * d2 + g + d2 * g + d2);

        let vec_w = alg.reshape(&w_hat[i], d2, 1);
        let lin1 = alg.gemm(&w1, &vec_w)?;
        let pre1 = alg.add(&lin1, &b1)?;
        let hidden = alg.relu(&pre1);
        let lin2 = alg.gemm(&w2, &hidden)?;
        let pre2 = alg.add(&lin2, &b2)?;
        let out = alg.relu(&pre2);
        let phi_i = alg.reshape(&out, d, d);

        let w_i = alg.add(&w_hat[i], &phi_i)?;
        phi.push(phi_i);
        w.push(w_i);
    }
    Ok((phi, w))
}

/// Beamformer solve with the learned multiplier:
/// V_bar_i = (sum_j H_ij^H U_j W_j U_j^H H_ij + mu I)^-1 H_ii^H U_i W_i.
/// mu is complex, so the system goes through the general LU path.
fn v_bar_body<A: Algebra>(
    alg: &mut A,
    h: &[A::Value],
    u: &[A::Value],
    w: &[A::Value],
    mu_ident: &A::Value,
    m: usize,
) -> Result<Vec<A::Value>, AutodiffError> {
    let mut v_bar = Vec::with_capacity(m);
    for i in 0..m {
        let mut gram = mu_ident.clone();
        for j in 0..m {
            let hh = alg.adjoint(&h[i * m + j]);
            let p = alg.gemm(&hh, &u[j])?;
            let pw = alg.gemm(&p, &w[j])?;
            let ph = alg.adjoint(&p);
            let term = alg.gemm(&pw, &ph)?;
            gram = alg.add(&gram, &term)?;
        }
        let hh = alg.adjoint(&h[i * m + i]);
        let uw = alg.gemm(&u[i], &w[i])?;
        let rhs = alg.gemm(&hh, &uw)?;
        v_bar.push(alg.solve(&gram, &rhs)?);
    }
    Ok(v_bar)
}

/// Power projection. Feasible inputs pass through untouched; over-budget
/// ones scale onto the sphere with a one-ulp-scale margin so reapplying the
/// projection is an exact no-op. The branch is taken on the forward value,
/// so the saturated branch differentiates the actual scaling expression.
fn beta_body<A: Algebra>(
    alg: &mut A,
    v_bar: &A::Value,
    pmax: f64,
) -> Result<A::Value, AutodiffError> {
    let power = alg.peek(v_bar).frob_norm_sqr();
    if power <= pmax {
        return Ok(v_bar.clone());
    }
    let norm = alg.frob_norm(v_bar);
    let inv = alg.reciprocal(&norm);
    let factor = alg.scale(&inv, Complex64::new(pmax.sqrt() * SATURATION_MARGIN, 0.0));
    alg.scale_by(v_bar, &factor)
}

fn layer_body<A: Algebra>(
    alg: &mut A,
    h: &[A::Value],
    v_prev: &[A::Value],
    nv: &NetValues<A::Value>,
    dims: &Dims,
    consts: &LayerConsts<A::Value>,
) -> Result<LayerStages<A::Value>, AutodiffError> {
    let u = u_body(alg, h, v_prev, dims.m, &consts.noise)?;
    let w_hat = w_hat_body(alg, h, &u, v_prev, dims.m, &consts.ident_d)?;
    let s = gamma_body(alg, h, dims.m, &nv.omega)?;
    let q = features_body(alg, &u, v_prev)?;
    let (z, xi) = psi_body(alg, &s, &q, &nv.th11, &nv.th12, &nv.th21, &nv.th22, dims.m)?;
    let (phi, w) = phi_body(alg, &xi, &w_hat, dims.m, dims.g, dims.d)?;
    let mu_ident = alg.scale_by(&consts.ident_t, &nv.mu)?;
    let v_bar = v_bar_body(alg, h, &u, &w, &mu_ident, dims.m)?;
    let mut v = Vec::with_capacity(dims.m);
    for vb in &v_bar {
        v.push(beta_body(alg, vb, dims.pmax)?);
    }
    Ok(LayerStages {
        s,
        q,
        z,
        xi,
        u,
        w_hat,
        phi,
        w,
        v_bar,
        v,
    })
}

fn network_body<A: Algebra>(
    alg: &mut A,
    h: &[A::Value],
    nv: &NetValues<A::Value>,
    dims: &Dims,
    layers: usize,
) -> Result<(Vec<A::Value>, Vec<LayerStages<A::Value>>), AutodiffError> {
    let consts = make_consts(alg, dims);
    let v0 = alg.constant(v_init(dims.t, dims.d, dims.pmax));
    let mut v: Vec<A::Value> = vec![v0; dims.m];
    let mut stages = Vec::with_capacity(layers);
    for _ in 0..layers {
        let stage = layer_body(alg, h, &v, nv, dims, &consts)?;
        v = stage.v.clone();
        stages.push(stage);
    }
    Ok((v, stages))
}

/// Weighted sum rate of a beamformer set, treating all other nodes' signals
/// as noise.
fn sum_rate_body<A: Algebra>(
    alg: &mut A,
    h: &[A::Value],
    v: &[A::Value],
    dims: &Dims,
    alpha: &[f64],
) -> Result<A::Value, AutodiffError> {
    let m = dims.m;
    let var = Complex64::new(dims.sigma * dims.sigma, 0.0);
    let noise = alg.constant(CMatrix::scaled_identity(dims.r, var));
    let mut total: Option<A::Value> = None;
    for i in 0..m {
        let mut floor = noise.clone();
        for j in 0..m {
            if j == i {
                continue;
            }
            let hv = alg.gemm(&h[i * m + j], &v[j])?;
            let hvh = alg.adjoint(&hv);
            let outer = alg.gemm(&hv, &hvh)?;
            floor = alg.add(&floor, &outer)?;
        }
        let own = alg.gemm(&h[i * m + i], &v[i])?;
        let ownh = alg.adjoint(&own);
        let signal = alg.gemm(&own, &ownh)?;
        let covered = alg.add(&floor, &signal)?;
        let full = alg.log2_det(&covered)?;
        let base = alg.log2_det(&floor)?;
        let rate = alg.sub(&full, &base)?;
        let weighted = alg.scale(&rate, Complex64::new(alpha[i], 0.0));
        total = Some(match total {
            None => weighted,
            Some(acc) => alg.add(&acc, &weighted)?,
        });
    }
    total.ok_or_else(|| AutodiffError::Unsupported("sum rate needs at least one node".into()))
}

fn check_blocks<A: Algebra>(
    alg: &A,
    params: &[A::Value],
    config: &NetworkConfig,
    hyper: &HyperParams,
) -> Result<(), AutodiffError> {
    if params.len() != ModelParams::BLOCK_NAMES.len() {
        return Err(AutodiffError::ParamCount {
            declared: ModelParams::BLOCK_NAMES.len(),
            got: params.len(),
        });
    }
    let fp = hyper.feature_width(config);
    let p = hyper.mlp_param_count(config.d);
    let want = [
        (hyper.f, fp),
        (hyper.f, fp),
        (p, hyper.f),
        (p, hyper.f),
        (config.r, config.t),
        (1, 1),
    ];
    for ((name, value), expect) in ModelParams::BLOCK_NAMES.iter().zip(params).zip(want) {
        let got = alg.peek(value).shape();
        if got != expect {
            return Err(AutodiffError::Unsupported(format!(
                "{name} has shape {}x{}, expected {}x{}",
                got.0, got.1, expect.0, expect.1
            )));
        }
    }
    Ok(())
}

fn check_sample(
    csi: &CsiTensor,
    config: &NetworkConfig,
    layers: usize,
) -> Result<(), AutodiffError> {
    if layers == 0 {
        return Err(AutodiffError::Unsupported(
            "the network needs at least one layer".into(),
        ));
    }
    if config.d != 1 {
        return Err(AutodiffError::Unsupported(format!(
            "node features are defined for single-stream links, got d = {}",
            config.d
        )));
    }
    if csi.shape() != (config.m, config.r, config.t) {
        let (m, r, t) = csi.shape();
        return Err(AutodiffError::Unsupported(format!(
            "csi tensor has m = {m} blocks of {r}x{t}, config expects m = {} of {}x{}",
            config.m, config.r, config.t
        )));
    }
    Ok(())
}

/// Negated weighted sum rate of the K-layer forward, as a real 1 x 1 value.
fn loss_body<A: Algebra>(
    alg: &mut A,
    csi: &CsiTensor,
    params: &[A::Value],
    config: &NetworkConfig,
    hyper: &HyperParams,
    layers: usize,
) -> Result<A::Value, AutodiffError> {
    check_sample(csi, config, layers)?;
    check_blocks(alg, params, config, hyper)?;
    let dims = Dims::new(config, hyper);
    let nv = NetValues::from_slice(params)?;
    let h = lift_csi(alg, csi);
    let (v, _) = network_body(alg, &h, &nv, &dims, layers)?;
    let rate = sum_rate_body(alg, &h, &v, &dims, &config.alpha)?;
    let neg = alg.scale(&rate, Complex64::new(-1.0, 0.0));
    Ok(alg.real_part(&neg))
}

/// Runs the K-layer network and returns the emitted beamformers together
/// with every layer's intermediates.
pub fn forward(
    csi: &CsiTensor,
    params: &ModelParams,
    config: &NetworkConfig,
    layers: usize,
) -> Result<(BeamformerSet, Vec<LayerTrace>), AutodiffError> {
    check_sample(csi, config, layers)?;
    params.validate(config)?;
    let mut alg = DirectAlgebra;
    let dims = Dims::new(config, &params.hyper);
    let nv = NetValues::from_slice(&params.to_blocks())?;
    let h = lift_csi(&mut alg, csi);
    network_body(&mut alg, &h, &nv, &dims, layers)
}

/// Compresses the CSI tensor into the normalized m x m graph matrix.
pub fn gamma_transform(csi: &CsiTensor, omega: &CMatrix) -> Result<CMatrix, AutodiffError> {
    if omega.shape() != (csi.r, csi.t) {
        return Err(AutodiffError::Unsupported(format!(
            "omega has shape {}x{}, csi blocks are {}x{}",
            omega.rows(),
            omega.cols(),
            csi.r,
            csi.t
        )));
    }
    let mut alg = DirectAlgebra;
    let h = lift_csi(&mut alg, csi);
    gamma_body(&mut alg, &h, csi.m, omega)
}

/// Stacks per-node receiver/beamformer columns into convolution features.
pub fn build_features(u: &[CMatrix], v: &[CMatrix]) -> Result<CMatrix, AutodiffError> {
    if u.len() != v.len() {
        return Err(AutodiffError::Unsupported(format!(
            "got {} receivers and {} beamformers",
            u.len(),
            v.len()
        )));
    }
    for (ui, vi) in u.iter().zip(v) {
        if ui.cols() != 1 || vi.cols() != 1 {
            return Err(AutodiffError::Unsupported(
                "node features are defined for single-stream links".into(),
            ));
        }
    }
    features_body(&mut DirectAlgebra, u, v)
}

/// Runs the two-hop graph convolution and returns the packed per-node MLP
/// parameter matrix Xi.
pub fn psi_gcn(
    s: &CMatrix,
    q: &CMatrix,
    theta11: &CMatrix,
    theta12: &CMatrix,
    theta21: &CMatrix,
    theta22: &CMatrix,
) -> Result<CMatrix, AutodiffError> {
    if s.rows() != s.cols() || s.rows() != q.rows() {
        return Err(AutodiffError::Unsupported(format!(
            "graph matrix is {}x{} but features are {}x{}",
            s.rows(),
            s.cols(),
            q.rows(),
            q.cols()
        )));
    }
    let mut alg = DirectAlgebra;
    psi_body(&mut alg, s, q, theta11, theta12, theta21, theta22, s.rows()).map(|(_, xi)| xi)
}

/// Applies one node's MLP to its exact weight, returning the correction.
pub fn phi_mlp(mlp: &NodeMlpParams, w_hat: &CMatrix) -> Result<CMatrix, AutodiffError> {
    let d = w_hat.rows();
    let d2 = d * d;
    if w_hat.cols() != d {
        return Err(AutodiffError::Unsupported(format!(
            "weight must be square, got {}x{}",
            w_hat.rows(),
            w_hat.cols()
        )));
    }
    if mlp.w1.cols() != d2 || mlp.w2.rows() != d2 {
        return Err(AutodiffError::Unsupported(format!(
            "mlp blocks sized for d^2 = {}, weight has d^2 = {}",
            mlp.w1.cols(),
            d2
        )));
    }
    let mut alg = DirectAlgebra;
    let vec_w = alg.reshape(w_hat, d2, 1);
    let lin1 = alg.gemm(&mlp.w1, &vec_w)?;
    let pre1 = alg.add(&lin1, &mlp.b1)?;
    let hidden = alg.relu(&pre1);
    let lin2 = alg.gemm(&mlp.w2, &hidden)?;
    let pre2 = alg.add(&lin2, &mlp.b2)?;
    let out = alg.relu(&pre2);
    Ok(alg.reshape(&out, d, d))
}

/// Beamformer solve with a fixed multiplier in place of the power search.
pub fn update_v_unfolded(
    csi: &CsiTensor,
    u: &[CMatrix],
    w: &[CMatrix],
    mu: Complex64,
) -> Result<BeamformerSet, AutodiffError> {
    if u.len() != csi.m || w.len() != csi.m {
        return Err(AutodiffError::Unsupported(format!(
            "expected {} receivers and weights, got {} and {}",
            csi.m,
            u.len(),
            w.len()
        )));
    }
    let mut alg = DirectAlgebra;
    let h = lift_csi(&mut alg, csi);
    let mu_ident = CMatrix::scaled_identity(csi.t, mu);
    v_bar_body(&mut alg, &h, u, w, &mu_ident, csi.m)
}

/// Scales every over-budget beamformer back onto the power sphere.
pub fn beta_saturate(v_bar: &[CMatrix], pmax: f64) -> BeamformerSet {
    v_bar
        .iter()
        .map(|vb| beta_body(&mut DirectAlgebra, vb, pmax).expect("1x1 factor shapes are static"))
        .collect()
}

/// Reorders a beamformer set the same way [`CsiTensor::permute`] reorders
/// nodes: entry i of the output is entry perm[i] of the input.
pub fn permute_beamformers(v: &[CMatrix], perm: &[usize]) -> BeamformerSet {
    perm.iter().map(|&p| v[p].clone()).collect()
}

/// Training loss for one sample: the negated weighted sum rate after
/// `layers` unrolled iterations.
pub struct SumRateLoss<'a> {
    pub csi: &'a CsiTensor,
    pub config: &'a NetworkConfig,
    pub hyper: HyperParams,
    pub layers: usize,
}

impl Program for SumRateLoss<'_> {
    fn param_names(&self) -> Vec<String> {
        ModelParams::block_names()
    }

    fn run<A: Algebra>(
        &self,
        alg: &mut A,
        _inputs: &[A::Value],
        params: &[A::Value],
    ) -> Result<A::Value, AutodiffError> {
        loss_body(alg, self.csi, params, self.config, &self.hyper, self.layers)
    }
}

/// Mean of [`SumRateLoss`] over a batch, in sample order.
pub struct BatchSumRateLoss<'a> {
    pub batch: &'a [CsiTensor],
    pub config: &'a NetworkConfig,
    pub hyper: HyperParams,
    pub layers: usize,
}

impl Program for BatchSumRateLoss<'_> {
    fn param_names(&self) -> Vec<String> {
        ModelParams::block_names()
    }

    fn run<A: Algebra>(
        &self,
        alg: &mut A,
        _inputs: &[A::Value],
        params: &[A::Value],
    ) -> Result<A::Value, AutodiffError> {
        if self.batch.is_empty() {
            return Err(AutodiffError::Unsupported("empty batch".into()));
        }
        let mut total: Option<A::Value> = None;
        for csi in self.batch {
            let loss = loss_body(alg, csi, params, self.config, &self.hyper, self.layers)?;
            total = Some(match total {
                None => loss,
                Some(acc) => alg.add(&acc, &loss)?,
            });
        }
        let sum = total.expect("nonempty batch");
        let mean = alg.scale(&sum, Complex64::new(1.0 / self.batch.len() as f64, 0.0));
        Ok(mean)
    }
}

/// Per-layer, per-node convergence residual.
///
/// For layer k and node i this is the Frobenius norm of
/// A_i^-1 [ sum_{j != i} H_ij^H U_j^(k) (w_j^* phi_i^(k) - w_i^* phi_j^(k))
/// U_j^(k)H H_ij ] C_i^-1 B_i, where A_i couples layer-k receivers and
/// weights, C_i and B_i = H_ii^H U_i^* use the final layer's values, and
/// starred scalars come from the final layer. `mu_shift` optionally adds
/// mu I to both A_i and C_i, matching a run with a regularized solve. A
/// singular A_i or C_i yields `None` for that entry. With all corrections
/// at zero the residual is exactly zero.
pub fn fixed_point_residual(
    csi: &CsiTensor,
    trace: &[LayerTrace],
    mu_shift: Option<Complex64>,
) -> Vec<Vec<Option<f64>>> {
    let Some(last) = trace.last() else {
        return Vec::new();
    };
    let m = csi.m;
    let t = csi.t;
    let shift = mu_shift.unwrap_or_else(|| Complex64::new(0.0, 0.0));

    // t x t coupling gram for node i under the given receivers and weights.
    let gram = |u: &[CMatrix], w: &[CMatrix], i: usize| -> CMatrix {
        let mut acc = CMatrix::scaled_identity(t, shift);
        for j in 0..m {
            let p = csi
                .block(i, j)
                .adjoint()
                .gemm(&u[j])
                .expect("conforming trace shapes");
            let pw = p.gemm(&w[j]).expect("conforming trace shapes");
            let term = pw.gemm(&p.adjoint()).expect("conforming trace shapes");
            acc = acc.add(&term).expect("conforming trace shapes");
        }
        acc
    };

    trace
        .iter()
        .map(|layer| {
            (0..m)
                .map(|i| {
                    let mut mismatch = CMatrix::zeros(t, t);
                    for j in 0..m {
                        if j == i {
                            continue;
                        }
                        let swapped = last.w[j]
                            .gemm(&layer.phi[i])
                            .expect("conforming trace shapes")
                            .sub(&last.w[i].gemm(&layer.phi[j]).expect("conforming trace shapes"))
                            .expect("conforming trace shapes");
                        let p = csi
                            .block(i, j)
                            .adjoint()
                            .gemm(&layer.u[j])
                            .expect("conforming trace shapes");
                        let contrib = p
                            .gemm(&swapped)
                            .expect("conforming trace shapes")
                            .gemm(&p.adjoint())
                            .expect("conforming trace shapes");
                        mismatch = mismatch.add(&contrib).expect("conforming trace shapes");
                    }
                    let a = gram(&layer.u, &layer.w, i);
                    let c = gram(&last.u, &last.w, i);
                    let b_bar = csi
                        .block(i, i)
                        .adjoint()
                        .gemm(&last.u[i])
                        .expect("conforming trace shapes");
                    let left = linalg::solve(&a, &mismatch).ok()?;
                    let tail = linalg::solve(&c, &b_bar).ok()?;
                    let prod = left.gemm(&tail).expect("conforming trace shapes");
                    Some(prod.frob_norm())
                })
                .collect()
        })
        .collect()
}
