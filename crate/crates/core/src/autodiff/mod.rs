//! Reverse-mode automatic differentiation over complex matrices.
//!
//! A [`Tape`] records a sequence of primitive operations on `CMatrix`
//! values; [`Tape::backward`] then propagates cotangents from a real scalar
//! loss back to the parameter leaves. Gradients follow the convention
//!
//! ```text
//! grad(p) = dL/dRe(p) + i * dL/dIm(p)    (= 2 dL/d conj(p))
//! ```
//!
//! so a gradient-descent step is plain `p -= lr * grad(p)`. For holomorphic
//! primitives this is the familiar conjugate-transpose-Jacobian rule; the
//! non-holomorphic primitives (adjoint, Frobenius norm, real part, the
//! componentwise ReLU, row normalization) carry their own rules.
//!
//! Programs are written once against the [`Algebra`] trait and executed
//! either directly on matrices ([`DirectAlgebra`]) or recorded on a tape
//! ([`TapeAlgebra`]); both paths run the same kernels, so recorded forward
//! values equal direct evaluation exactly.
//!
//! Linear-system nodes keep their factorization so the backward pass reuses
//! it: for `X = solve(A, B)` the input cotangents are
//! `gB = solve(A^H, gX)` and `gA = -gB X^H`.

mod algebra;
mod check;

pub use algebra::{Algebra, DirectAlgebra, TapeAlgebra};
pub use check::{check_gradients, CheckOptions, Component, CoordCheck, GradCheckReport};

use crate::linalg::{CMatrix, CholeskyFactor, LinalgError, LuFactor};
use num_complex::Complex64;
use thiserror::Error;

/// Epsilon inside row normalization: `out_ij = a_ij / (EPS + sum_k |a_ik|)`.
pub const ROW_NORM_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("{context}: {source}")]
    LinalgAt {
        context: String,
        source: LinalgError,
    },
    #[error("loss must be a real 1x1 scalar, got {rows}x{cols} with imaginary part {im:.3e}")]
    NonRealLoss { rows: usize, cols: usize, im: f64 },
    #[error("parameter count mismatch: program declares {declared}, got {got}")]
    ParamCount { declared: usize, got: usize },
    #[error("finite-difference step {h:.3e} outside [1e-8, 1e-4]")]
    BadStep { h: f64 },
    #[error("unsupported configuration: {0}")]
    Unsupported(String),
}

impl AutodiffError {
    /// Attaches a call-site description to a linear-algebra failure, e.g.
    /// which network node's system was singular.
    pub fn with_context(self, context: &str) -> Self {
        match self {
            AutodiffError::Linalg(source) => AutodiffError::LinalgAt {
                context: context.to_string(),
                source,
            },
            other => other,
        }
    }

    /// True when the underlying cause is a singular or indefinite system.
    pub fn is_singularity(&self) -> bool {
        matches!(
            self,
            AutodiffError::Linalg(LinalgError::Singular { .. })
                | AutodiffError::Linalg(LinalgError::NotPositiveDefinite { .. })
                | AutodiffError::LinalgAt {
                    source: LinalgError::Singular { .. },
                    ..
                }
                | AutodiffError::LinalgAt {
                    source: LinalgError::NotPositiveDefinite { .. },
                    ..
                }
        )
    }
}

/// Handle to a tape node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

/// Primitive operations. Operands are node handles; constant coefficients
/// are stored inline for the backward pass.
#[derive(Clone, Debug)]
enum Op {
    Const,
    Input,
    Param,
    Add(NodeId, NodeId),
    Scale(NodeId, Complex64),
    HadamardConst(NodeId, CMatrix),
    ScaleByScalar { mat: NodeId, s: NodeId },
    Gemm(NodeId, NodeId),
    Adjoint(NodeId),
    Transpose(NodeId),
    HermitianSolve { a: NodeId, b: NodeId },
    Solve { a: NodeId, b: NodeId },
    FrobNorm(NodeId),
    Log2Det(NodeId),
    CartesianRelu(NodeId),
    Trace(NodeId),
    RealPart(NodeId),
    Reciprocal(NodeId),
    SumHadamard(NodeId, NodeId),
    Hcat(NodeId, NodeId),
    Vcat(NodeId, NodeId),
    SliceRows { src: NodeId, start: usize, end: usize },
    Reshape(NodeId),
    RowNormalize(NodeId),
}

/// Factorization cached by a forward solve, reused in backward.
enum NodeFactor {
    None,
    Chol(CholeskyFactor),
    Lu(LuFactor),
}

struct Node {
    op: Op,
    value: CMatrix,
    needs_grad: bool,
    factor: NodeFactor,
}

/// Recorded forward computation with cached values for every node.
pub struct Tape {
    nodes: Vec<Node>,
    param_ids: Vec<NodeId>,
    param_names: Vec<String>,
}

impl Tape {
    fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            param_ids: Vec::new(),
            param_names: Vec::new(),
        }
    }

    fn push(&mut self, op: Op, value: CMatrix, needs_grad: bool, factor: NodeFactor) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
            factor,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Cached forward value of a node.
    pub fn value(&self, id: NodeId) -> &CMatrix {
        &self.nodes[id.0].value
    }

    pub fn param_names(&self) -> &[String] {
        &self.param_names
    }

    /// Re-executes every recorded operation from the leaf values and
    /// returns the recomputed value of `id`. Used to validate that the tape
    /// is a faithful transcript of the forward pass.
    pub fn replay(&self, id: NodeId) -> Result<CMatrix, AutodiffError> {
        let mut vals: Vec<CMatrix> = Vec::with_capacity(id.0 + 1);
        for node in &self.nodes[..=id.0] {
            let v = |n: NodeId| &vals[n.0];
            let recomputed = match &node.op {
                Op::Const | Op::Input | Op::Param => node.value.clone(),
                Op::Add(a, b) => v(*a).add(v(*b))?,
                Op::Scale(a, c) => v(*a).scale(*c),
                Op::HadamardConst(a, coef) => v(*a).hadamard(coef)?,
                Op::ScaleByScalar { mat, s } => v(*mat).scale(v(*s).as_scalar()),
                Op::Gemm(a, b) => v(*a).gemm(v(*b))?,
                Op::Adjoint(a) => v(*a).adjoint(),
                Op::Transpose(a) => v(*a).transpose(),
                Op::HermitianSolve { a, b } => kernels::hermitian_solve(v(*a), v(*b))?.0,
                Op::Solve { a, b } => kernels::solve(v(*a), v(*b))?.0,
                Op::FrobNorm(a) => kernels::frob_norm(v(*a)),
                Op::Log2Det(a) => kernels::log2_det(v(*a))?.0,
                Op::CartesianRelu(a) => kernels::relu(v(*a)),
                Op::Trace(a) => kernels::trace(v(*a))?,
                Op::RealPart(a) => kernels::real_part(v(*a)),
                Op::Reciprocal(a) => kernels::reciprocal(v(*a)),
                Op::SumHadamard(a, b) => kernels::sum_hadamard(v(*a), v(*b))?,
                Op::Hcat(a, b) => v(*a).hcat(v(*b))?,
                Op::Vcat(a, b) => v(*a).vcat(v(*b))?,
                Op::SliceRows { src, start, end } => v(*src).slice_rows(*start, *end),
                Op::Reshape(a) => {
                    let (r, c) = node.value.shape();
                    v(*a).reshape(r, c)
                }
                Op::RowNormalize(a) => kernels::row_normalize(v(*a)),
            };
            vals.push(recomputed);
        }
        Ok(vals[id.0].clone())
    }

    /// Propagates the cotangent `seed` from the scalar node `output` back to
    /// the parameters. `output` must hold a real 1x1 value.
    pub fn backward(&self, output: NodeId, seed: f64) -> Result<GradientSet, AutodiffError> {
        let out = &self.nodes[output.0];
        let (rows, cols) = out.value.shape();
        let im = if (rows, cols) == (1, 1) {
            out.value.as_scalar().im
        } else {
            f64::NAN
        };
        if (rows, cols) != (1, 1) || im.abs() > 1e-12 * (1.0 + out.value.as_scalar().re.abs()) {
            return Err(AutodiffError::NonRealLoss { rows, cols, im });
        }

        let mut adj: Vec<Option<CMatrix>> = (0..=output.0).map(|_| None).collect();
        if out.needs_grad {
            adj[output.0] = Some(CMatrix::scalar(Complex64::new(seed, 0.0)));
        }

        for id in (0..=output.0).rev() {
            let Some(g) = adj[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Const | Op::Input | Op::Param => {
                    // Leaves: parameter gradients are collected below from
                    // the final accumulator state.
                    adj[id] = Some(g);
                }
                Op::Add(a, b) => {
                    self.acc(&mut adj, *a, g.clone());
                    self.acc(&mut adj, *b, g);
                }
                Op::Scale(a, c) => self.acc(&mut adj, *a, g.scale(c.conj())),
                Op::HadamardConst(a, coef) => {
                    let delta = g.hadamard(&coef.map(|z| z.conj()))?;
                    self.acc(&mut adj, *a, delta);
                }
                Op::ScaleByScalar { mat, s } => {
                    let sv = self.nodes[s.0].value.as_scalar();
                    if self.needs(*mat) {
                        self.acc(&mut adj, *mat, g.scale(sv.conj()));
                    }
                    if self.needs(*s) {
                        let mv = &self.nodes[mat.0].value;
                        let dot: Complex64 = mv
                            .data()
                            .iter()
                            .zip(g.data())
                            .map(|(&m, &gz)| m.conj() * gz)
                            .sum();
                        self.acc(&mut adj, *s, CMatrix::scalar(dot));
                    }
                }
                Op::Gemm(a, b) => {
                    if self.needs(*a) {
                        let delta = g.gemm(&self.nodes[b.0].value.adjoint())?;
                        self.acc(&mut adj, *a, delta);
                    }
                    if self.needs(*b) {
                        let delta = self.nodes[a.0].value.adjoint().gemm(&g)?;
                        self.acc(&mut adj, *b, delta);
                    }
                }
                Op::Adjoint(a) => self.acc(&mut adj, *a, g.adjoint()),
                Op::Transpose(a) => self.acc(&mut adj, *a, g.transpose()),
                Op::HermitianSolve { a, b } | Op::Solve { a, b } => {
                    let gb = match &node.factor {
                        // A Hermitian: A^H = A, same factorization solves both.
                        NodeFactor::Chol(f) => f.solve(&g)?,
                        NodeFactor::Lu(f) => f.solve_adjoint(&g)?,
                        NodeFactor::None => unreachable!("solve node without factor"),
                    };
                    if self.needs(*a) {
                        let delta = gb.gemm(&node.value.adjoint())?.scale(-crate::linalg::ONE);
                        self.acc(&mut adj, *a, delta);
                    }
                    self.acc(&mut adj, *b, gb);
                }
                Op::FrobNorm(a) => {
                    let norm = node.value.as_scalar().re;
                    if norm > 0.0 {
                        let f = Complex64::new(g.as_scalar().re / norm, 0.0);
                        self.acc(&mut adj, *a, self.nodes[a.0].value.scale(f));
                    }
                }
                Op::Log2Det(a) => {
                    let NodeFactor::Chol(f) = &node.factor else {
                        unreachable!("log2_det node without factor")
                    };
                    let inv = f.inverse()?;
                    let c = Complex64::new(g.as_scalar().re / std::f64::consts::LN_2, 0.0);
                    self.acc(&mut adj, *a, inv.scale(c));
                }
                Op::CartesianRelu(a) => {
                    let x = &self.nodes[a.0].value;
                    let delta = CMatrix::from_vec(
                        x.rows(),
                        x.cols(),
                        x.data()
                            .iter()
                            .zip(g.data())
                            .map(|(&xv, &gv)| {
                                Complex64::new(
                                    if xv.re > 0.0 { gv.re } else { 0.0 },
                                    if xv.im > 0.0 { gv.im } else { 0.0 },
                                )
                            })
                            .collect(),
                    );
                    self.acc(&mut adj, *a, delta);
                }
                Op::Trace(a) => {
                    let n = self.nodes[a.0].value.rows();
                    self.acc(&mut adj, *a, CMatrix::scaled_identity(n, g.as_scalar()));
                }
                Op::RealPart(a) => {
                    self.acc(&mut adj, *a, g.map(|z| Complex64::new(z.re, 0.0)));
                }
                Op::Reciprocal(a) => {
                    // y = 1/x, dy/dx = -y^2; cotangent rule conj(-y^2) * g.
                    let y = &node.value;
                    let delta = CMatrix::from_vec(
                        y.rows(),
                        y.cols(),
                        y.data()
                            .iter()
                            .zip(g.data())
                            .map(|(&yv, &gv)| {
                                let c = yv.conj();
                                -(c * c) * gv
                            })
                            .collect(),
                    );
                    self.acc(&mut adj, *a, delta);
                }
                Op::SumHadamard(a, b) => {
                    let gs = g.as_scalar();
                    if self.needs(*a) {
                        self.acc(&mut adj, *a, self.nodes[b.0].value.map(|z| z.conj() * gs));
                    }
                    if self.needs(*b) {
                        self.acc(&mut adj, *b, self.nodes[a.0].value.map(|z| z.conj() * gs));
                    }
                }
                Op::Hcat(a, b) => {
                    let ca = self.nodes[a.0].value.cols();
                    if self.needs(*a) {
                        let da = CMatrix::from_fn(g.rows(), ca, |i, j| g[(i, j)]);
                        self.acc(&mut adj, *a, da);
                    }
                    if self.needs(*b) {
                        let cb = g.cols() - ca;
                        let db = CMatrix::from_fn(g.rows(), cb, |i, j| g[(i, j + ca)]);
                        self.acc(&mut adj, *b, db);
                    }
                }
                Op::Vcat(a, b) => {
                    let ra = self.nodes[a.0].value.rows();
                    if self.needs(*a) {
                        self.acc(&mut adj, *a, g.slice_rows(0, ra));
                    }
                    if self.needs(*b) {
                        self.acc(&mut adj, *b, g.slice_rows(ra, g.rows()));
                    }
                }
                Op::SliceRows { src, start, end } => {
                    let s = &self.nodes[src.0].value;
                    let mut delta = CMatrix::zeros(s.rows(), s.cols());
                    for i in *start..*end {
                        for j in 0..s.cols() {
                            delta[(i, j)] = g[(i - start, j)];
                        }
                    }
                    self.acc(&mut adj, *src, delta);
                }
                Op::Reshape(a) => {
                    let (r, c) = self.nodes[a.0].value.shape();
                    self.acc(&mut adj, *a, g.reshape(r, c));
                }
                Op::RowNormalize(a) => {
                    let s = &self.nodes[a.0].value;
                    let (rows, cols) = s.shape();
                    let mut delta = CMatrix::zeros(rows, cols);
                    for i in 0..rows {
                        let r: f64 = ROW_NORM_EPS
                            + (0..cols).map(|k| s[(i, k)].norm()).sum::<f64>();
                        // dot = sum_j Re(g_ij * conj(out_ij)) with out = s / r.
                        let dot: f64 = (0..cols)
                            .map(|j| (g[(i, j)] * s[(i, j)].conj()).re)
                            .sum::<f64>()
                            / r;
                        for k in 0..cols {
                            let sik = s[(i, k)];
                            let mut d = g[(i, k)] / r;
                            let mag = sik.norm();
                            if mag > 0.0 {
                                d -= sik * (dot / (r * mag));
                            }
                            delta[(i, k)] = d;
                        }
                    }
                    self.acc(&mut adj, *a, delta);
                }
            }
        }

        let mut blocks = Vec::with_capacity(self.param_ids.len());
        for &pid in &self.param_ids {
            let shape = self.nodes[pid.0].value.shape();
            match adj[pid.0].take() {
                Some(g) => blocks.push(g),
                None => blocks.push(CMatrix::zeros(shape.0, shape.1)),
            }
        }
        Ok(GradientSet {
            names: self.param_names.clone(),
            blocks,
        })
    }

    fn acc(&self, adj: &mut [Option<CMatrix>], target: NodeId, delta: CMatrix) {
        if !self.nodes[target.0].needs_grad {
            return;
        }
        match &mut adj[target.0] {
            Some(g) => *g = g.add(&delta).expect("cotangent shape mismatch"),
            slot @ None => *slot = Some(delta),
        }
    }
}

/// Per-parameter-block gradients, shape-congruent with the parameters that
/// produced them.
#[derive(Clone, Debug)]
pub struct GradientSet {
    names: Vec<String>,
    blocks: Vec<CMatrix>,
}

impl GradientSet {
    pub fn new(names: Vec<String>, blocks: Vec<CMatrix>) -> Self {
        assert_eq!(names.len(), blocks.len());
        GradientSet { names, blocks }
    }

    pub fn zeros_like(names: &[String], shapes: &[(usize, usize)]) -> Self {
        GradientSet {
            names: names.to_vec(),
            blocks: shapes.iter().map(|&(r, c)| CMatrix::zeros(r, c)).collect(),
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn blocks(&self) -> &[CMatrix] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [CMatrix] {
        &mut self.blocks
    }

    pub fn get(&self, name: &str) -> Option<&CMatrix> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.blocks[i])
    }

    /// Entrywise sum; shapes must match.
    pub fn add_assign(&mut self, other: &GradientSet) {
        assert_eq!(self.names, other.names, "gradient block mismatch");
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            *a = a.add(b).expect("gradient shape mismatch");
        }
    }

    pub fn scale_assign(&mut self, f: f64) {
        let c = Complex64::new(f, 0.0);
        for b in &mut self.blocks {
            *b = b.scale(c);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.blocks.iter().all(CMatrix::is_finite)
    }

    pub fn max_abs(&self) -> f64 {
        self.blocks.iter().map(CMatrix::max_abs).fold(0.0, f64::max)
    }
}

/// A parameterized computation expressed against the [`Algebra`] trait so it
/// can be evaluated directly or recorded on a tape.
pub trait Program {
    /// Parameter block names, in the order `run` expects them.
    fn param_names(&self) -> Vec<String>;

    /// Runs the computation and returns the output value (a real scalar for
    /// anything that will be differentiated).
    fn run<A: Algebra>(
        &self,
        alg: &mut A,
        inputs: &[A::Value],
        params: &[A::Value],
    ) -> Result<A::Value, AutodiffError>;
}

/// Records `program` on a fresh tape. Returns the tape and the output node;
/// the recorded output equals direct evaluation exactly (same kernels run in
/// the same order).
pub fn record_forward<P: Program>(
    program: &P,
    inputs: &[CMatrix],
    params: &[CMatrix],
) -> Result<(Tape, NodeId), AutodiffError> {
    let names = program.param_names();
    if names.len() != params.len() {
        return Err(AutodiffError::ParamCount {
            declared: names.len(),
            got: params.len(),
        });
    }
    let mut alg = TapeAlgebra::new();
    let ins: Vec<NodeId> = inputs.iter().map(|m| alg.input(m.clone())).collect();
    let ps: Vec<NodeId> = params
        .iter()
        .zip(names)
        .map(|(m, name)| alg.param(name, m.clone()))
        .collect();
    let out = program.run(&mut alg, &ins, &ps)?;
    Ok((alg.into_tape(), out))
}

/// Evaluates `program` directly, without recording.
pub fn evaluate<P: Program>(
    program: &P,
    inputs: &[CMatrix],
    params: &[CMatrix],
) -> Result<CMatrix, AutodiffError> {
    let names = program.param_names();
    if names.len() != params.len() {
        return Err(AutodiffError::ParamCount {
            declared: names.len(),
            got: params.len(),
        });
    }
    let mut alg = DirectAlgebra;
    program.run(&mut alg, inputs, params)
}

/// Shared forward kernels. Both algebra implementations and tape replay run
/// these, which is what makes the recorded and direct paths bit-identical.
pub(crate) mod kernels {
    use super::*;

    pub fn hermitian_solve(
        a: &CMatrix,
        b: &CMatrix,
    ) -> Result<(CMatrix, CholeskyFactor), LinalgError> {
        let f = CholeskyFactor::factor(a)?;
        let x = f.solve(b)?;
        Ok((x, f))
    }

    pub fn solve(a: &CMatrix, b: &CMatrix) -> Result<(CMatrix, LuFactor), LinalgError> {
        let f = LuFactor::factor(a)?;
        let x = f.solve(b)?;
        Ok((x, f))
    }

    pub fn frob_norm(a: &CMatrix) -> CMatrix {
        CMatrix::scalar(Complex64::new(a.frob_norm(), 0.0))
    }

    pub fn log2_det(a: &CMatrix) -> Result<(CMatrix, CholeskyFactor), LinalgError> {
        let f = CholeskyFactor::factor(a)?;
        let v = f.log2_det();
        Ok((CMatrix::scalar(Complex64::new(v, 0.0)), f))
    }

    pub fn relu(a: &CMatrix) -> CMatrix {
        a.map(|z| Complex64::new(z.re.max(0.0), z.im.max(0.0)))
    }

    pub fn trace(a: &CMatrix) -> Result<CMatrix, LinalgError> {
        if !a.is_square() {
            return Err(LinalgError::NotSquare {
                op: "trace",
                rows: a.rows(),
                cols: a.cols(),
            });
        }
        Ok(CMatrix::scalar(a.trace()))
    }

    pub fn real_part(a: &CMatrix) -> CMatrix {
        a.map(|z| Complex64::new(z.re, 0.0))
    }

    pub fn reciprocal(a: &CMatrix) -> CMatrix {
        a.map(|z| Complex64::new(1.0, 0.0) / z)
    }

    pub fn sum_hadamard(a: &CMatrix, b: &CMatrix) -> Result<CMatrix, LinalgError> {
        if a.shape() != b.shape() {
            return Err(LinalgError::ShapeMismatch {
                op: "sum_hadamard",
                lhs_rows: a.rows(),
                lhs_cols: a.cols(),
                rhs_rows: b.rows(),
                rhs_cols: b.cols(),
            });
        }
        let s: Complex64 = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| x * y)
            .sum();
        Ok(CMatrix::scalar(s))
    }

    pub fn row_normalize(a: &CMatrix) -> CMatrix {
        let (rows, cols) = a.shape();
        let mut out = CMatrix::zeros(rows, cols);
        for i in 0..rows {
            let r: f64 = ROW_NORM_EPS + (0..cols).map(|k| a[(i, k)].norm()).sum::<f64>();
            for j in 0..cols {
                out[(i, j)] = a[(i, j)] / r;
            }
        }
        out
    }

    pub fn scale_by(mat: &CMatrix, s: &CMatrix) -> CMatrix {
        mat.scale(s.as_scalar())
    }
}
