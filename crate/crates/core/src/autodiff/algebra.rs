//! Execution backends for taped programs.
//!
//! [`DirectAlgebra`] evaluates each primitive immediately on matrices;
//! [`TapeAlgebra`] runs the same kernel and additionally records the
//! operation. A program generic over [`Algebra`] therefore produces
//! identical values on both backends.

use super::{kernels, AutodiffError, NodeFactor, NodeId, Op, Tape};
use crate::linalg::CMatrix;
use num_complex::Complex64;

const NEG_ONE: Complex64 = Complex64::new(-1.0, 0.0);

/// Primitive operation set shared by the direct and recorded execution
/// paths. All matrix-valued operations are on dense complex matrices;
/// "scalar" values are 1x1 matrices.
pub trait Algebra {
    type Value: Clone;

    /// Injects a constant (no gradient flows into it).
    fn constant(&mut self, m: CMatrix) -> Self::Value;

    /// Numeric value of `v`, for branching on forward results and tracing.
    fn peek<'a>(&'a self, v: &'a Self::Value) -> &'a CMatrix;

    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value, AutodiffError>;
    fn scale(&mut self, a: &Self::Value, c: Complex64) -> Self::Value;
    /// Entrywise product with a constant coefficient matrix.
    fn hadamard_const(
        &mut self,
        a: &Self::Value,
        coef: &CMatrix,
    ) -> Result<Self::Value, AutodiffError>;
    /// Product of a matrix with a 1x1 scalar value.
    fn scale_by(&mut self, a: &Self::Value, s: &Self::Value) -> Result<Self::Value, AutodiffError>;
    fn gemm(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value, AutodiffError>;
    fn adjoint(&mut self, a: &Self::Value) -> Self::Value;
    fn transpose(&mut self, a: &Self::Value) -> Self::Value;
    /// Solves `A X = B` for Hermitian positive definite `A`.
    fn hermitian_solve(
        &mut self,
        a: &Self::Value,
        b: &Self::Value,
    ) -> Result<Self::Value, AutodiffError>;
    /// Solves `A X = B` for general square `A`.
    fn solve(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value, AutodiffError>;
    /// Frobenius norm as a real 1x1 value.
    fn frob_norm(&mut self, a: &Self::Value) -> Self::Value;
    /// Base-2 log-determinant of a Hermitian positive definite matrix.
    fn log2_det(&mut self, a: &Self::Value) -> Result<Self::Value, AutodiffError>;
    /// Componentwise ReLU on real and imaginary parts separately.
    fn relu(&mut self, a: &Self::Value) -> Self::Value;
    fn trace(&mut self, a: &Self::Value) -> Result<Self::Value, AutodiffError>;
    fn real_part(&mut self, a: &Self::Value) -> Self::Value;
    /// Entrywise reciprocal.
    fn reciprocal(&mut self, a: &Self::Value) -> Self::Value;
    /// `sum_ij a_ij * b_ij` as a 1x1 value.
    fn sum_hadamard(
        &mut self,
        a: &Self::Value,
        b: &Self::Value,
    ) -> Result<Self::Value, AutodiffError>;
    fn hcat(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value, AutodiffError>;
    fn vcat(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value, AutodiffError>;
    fn slice_rows(&mut self, a: &Self::Value, start: usize, end: usize) -> Self::Value;
    fn reshape(&mut self, a: &Self::Value, rows: usize, cols: usize) -> Self::Value;
    /// Divides each row by `ROW_NORM_EPS` plus its absolute row sum.
    fn row_normalize(&mut self, a: &Self::Value) -> Self::Value;

    fn sub(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value, AutodiffError> {
        let nb = self.scale(b, NEG_ONE);
        self.add(a, &nb)
    }
}

/// Immediate evaluation on plain matrices.
pub struct DirectAlgebra;

impl Algebra for DirectAlgebra {
    type Value = CMatrix;

    fn constant(&mut self, m: CMatrix) -> CMatrix {
        m
    }

    fn peek<'a>(&'a self, v: &'a CMatrix) -> &'a CMatrix {
        v
    }

    fn add(&mut self, a: &CMatrix, b: &CMatrix) -> Result<CMatrix, AutodiffError> {
        Ok(a.add(b)?)
    }

    fn scale(&mut self, a: &CMatrix, c: Complex64) -> CMatrix {
        a.scale(c)
    }

    fn hadamard_const(&mut self, a: &CMatrix, coef: &CMatrix) -> Result<CMatrix, AutodiffError> {
        Ok(a.hadamard(coef)?)
    }

    fn scale_by(&mut self, a: &CMatrix, s: &CMatrix) -> Result<CMatrix, AutodiffError> {
        Ok(kernels::scale_by(a, s))
    }

    fn gemm(&mut self, a: &CMatrix, b: &CMatrix) -> Result<CMatrix, AutodiffError> {
        Ok(a.gemm(b)?)
    }

    fn adjoint(&mut self, a: &CMatrix) -> CMatrix {
        a.adjoint()
    }

    fn transpose(&mut self, a: &CMatrix) -> CMatrix {
        a.transpose()
    }

    fn hermitian_solve(&mut self, a: &CMatrix, b: &CMatrix) -> Result<CMatrix, AutodiffError> {
        Ok(kernels::hermitian_solve(a, b)?.0)
    }

    fn solve(&mut self, a: &CMatrix, b: &CMatrix) -> Result<CMatrix, AutodiffError> {
        Ok(kernels::solve(a, b)?.0)
    }

    fn frob_norm(&mut self, a: &CMatrix) -> CMatrix {
        kernels::frob_norm(a)
    }

    fn log2_det(&mut self, a: &CMatrix) -> Result<CMatrix, AutodiffError> {
        Ok(kernels::log2_det(a)?.0)
    }

    fn relu(&mut self, a: &CMatrix) -> CMatrix {
        kernels::relu(a)
    }

    fn trace(&mut self, a: &CMatrix) -> Result<CMatrix, AutodiffError> {
        Ok(kernels::trace(a)?)
    }

    fn real_part(&mut self, a: &CMatrix) -> CMatrix {
        kernels::real_part(a)
    }

    fn reciprocal(&mut self, a: &CMatrix) -> CMatrix {
        kernels::reciprocal(a)
    }

    fn sum_hadamard(&mut self, a: &CMatrix, b: &CMatrix) -> Result<CMatrix, AutodiffError> {
        Ok(kernels::sum_hadamard(a, b)?)
    }

    fn hcat(&mut self, a: &CMatrix, b: &CMatrix) -> Result<CMatrix, AutodiffError> {
        Ok(a.hcat(b)?)
    }

    fn vcat(&mut self, a: &CMatrix, b: &CMatrix) -> Result<CMatrix, AutodiffError> {
        Ok(a.vcat(b)?)
    }

    fn slice_rows(&mut self, a: &CMatrix, start: usize, end: usize) -> CMatrix {
        a.slice_rows(start, end)
    }

    fn reshape(&mut self, a: &CMatrix, rows: usize, cols: usize) -> CMatrix {
        a.reshape(rows, cols)
    }

    fn row_normalize(&mut self, a: &CMatrix) -> CMatrix {
        kernels::row_normalize(a)
    }
}

/// Recording backend: evaluates each primitive and appends it to a tape.
pub struct TapeAlgebra {
    tape: Tape,
}

impl TapeAlgebra {
    pub fn new() -> Self {
        TapeAlgebra { tape: Tape::new() }
    }

    /// Registers an input leaf (no gradient).
    pub fn input(&mut self, m: CMatrix) -> NodeId {
        self.tape.push(Op::Input, m, false, NodeFactor::None)
    }

    /// Registers a named parameter leaf (gradient target).
    pub fn param(&mut self, name: String, m: CMatrix) -> NodeId {
        let id = self.tape.push(Op::Param, m, true, NodeFactor::None);
        self.tape.param_ids.push(id);
        self.tape.param_names.push(name);
        id
    }

    pub fn into_tape(self) -> Tape {
        self.tape
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.tape.nodes[id.0].needs_grad)
    }

    fn val(&self, id: NodeId) -> &CMatrix {
        &self.tape.nodes[id.0].value
    }
}

impl Default for TapeAlgebra {
    fn default() -> Self {
        Self::new()
    }
}

impl Algebra for TapeAlgebra {
    type Value = NodeId;

    fn constant(&mut self, m: CMatrix) -> NodeId {
        self.tape.push(Op::Const, m, false, NodeFactor::None)
    }

    fn peek<'a>(&'a self, v: &'a NodeId) -> &'a CMatrix {
        self.val(*v)
    }

    fn add(&mut self, a: &NodeId, b: &NodeId) -> Result<NodeId, AutodiffError> {
        let value = self.val(*a).add(self.val(*b))?;
        let needs = self.needs(&[*a, *b]);
        Ok(self.tape.push(Op::Add(*a, *b), value, needs, NodeFactor::None))
    }

    fn scale(&mut self, a: &NodeId, c: Complex64) -> NodeId {
        let value = self.val(*a).scale(c);
        let needs = self.needs(&[*a]);
        self.tape.push(Op::Scale(*a, c), value, needs, NodeFactor::None)
    }

    fn hadamard_const(&mut self, a: &NodeId, coef: &CMatrix) -> Result<NodeId, AutodiffError> {
        let value = self.val(*a).hadamard(coef)?;
        let needs = self.needs(&[*a]);
        Ok(self
            .tape
            .push(Op::HadamardConst(*a, coef.clone()), value, needs, NodeFactor::None))
    }

    fn scale_by(&mut self, a: &NodeId, s: &NodeId) -> Result<NodeId, AutodiffError> {
        let value = kernels::scale_by(self.val(*a), self.val(*s));
        let needs = self.needs(&[*a, *s]);
        Ok(self
            .tape
            .push(Op::ScaleByScalar { mat: *a, s: *s }, value, needs, NodeFactor::None))
    }

    fn gemm(&mut self, a: &NodeId, b: &NodeId) -> Result<NodeId, AutodiffError> {
        let value = self.val(*a).gemm(self.val(*b))?;
        let needs = self.needs(&[*a, *b]);
        Ok(self.tape.push(Op::Gemm(*a, *b), value, needs, NodeFactor::None))
    }

    fn adjoint(&mut self, a: &NodeId) -> NodeId {
        let value = self.val(*a).adjoint();
        let needs = self.needs(&[*a]);
        self.tape.push(Op::Adjoint(*a), value, needs, NodeFactor::None)
    }

    fn transpose(&mut self, a: &NodeId) -> NodeId {
        let value = self.val(*a).transpose();
        let needs = self.needs(&[*a]);
        self.tape.push(Op::Transpose(*a), value, needs, NodeFactor::None)
    }

    fn hermitian_solve(&mut self, a: &NodeId, b: &NodeId) -> Result<NodeId, AutodiffError> {
        let (value, factor) = kernels::hermitian_solve(self.val(*a), self.val(*b))?;
        let needs = self.needs(&[*a, *b]);
        Ok(self.tape.push(
            Op::HermitianSolve { a: *a, b: *b },
            value,
            needs,
            NodeFactor::Chol(factor),
        ))
    }

    fn solve(&mut self, a: &NodeId, b: &NodeId) -> Result<NodeId, AutodiffError> {
        let (value, factor) = kernels::solve(self.val(*a), self.val(*b))?;
        let needs = self.needs(&[*a, *b]);
        Ok(self
            .tape
            .push(Op::Solve { a: *a, b: *b }, value, needs, NodeFactor::Lu(factor)))
    }

    fn frob_norm(&mut self, a: &NodeId) -> NodeId {
        let value = kernels::frob_norm(self.val(*a));
        let needs = self.needs(&[*a]);
        self.tape.push(Op::FrobNorm(*a), value, needs, NodeFactor::None)
    }

    fn log2_det(&mut self, a: &NodeId) -> Result<NodeId, AutodiffError> {
        let (value, factor) = kernels::log2_det(self.val(*a))?;
        let needs = self.needs(&[*a]);
        Ok(self
            .tape
            .push(Op::Log2Det(*a), value, needs, NodeFactor::Chol(factor)))
    }

    fn relu(&mut self, a: &NodeId) -> NodeId {
        let value = kernels::relu(self.val(*a));
        let needs = self.needs(&[*a]);
        self.tape
            .push(Op::CartesianRelu(*a), value, needs, NodeFactor::None)
    }

    fn trace(&mut self, a: &NodeId) -> Result<NodeId, AutodiffError> {
        let value = kernels::trace(self.val(*a))?;
        let needs = self.needs(&[*a]);
        Ok(self.tape.push(Op::Trace(*a), value, needs, NodeFactor::None))
    }

    fn real_part(&mut self, a: &NodeId) -> NodeId {
        let value = kernels::real_part(self.val(*a));
        let needs = self.needs(&[*a]);
        self.tape.push(Op::RealPart(*a), value, needs, NodeFactor::None)
    }

    fn reciprocal(&mut self, a: &NodeId) -> NodeId {
        let value = kernels::reciprocal(self.val(*a));
        let needs = self.needs(&[*a]);
        self.tape
            .push(Op::Reciprocal(*a), value, needs, NodeFactor::None)
    }

    fn sum_hadamard(&mut self, a: &NodeId, b: &NodeId) -> Result<NodeId, AutodiffError> {
        let value = kernels::sum_hadamard(self.val(*a), self.val(*b))?;
        let needs = self.needs(&[*a, *b]);
        Ok(self
            .tape
            .push(Op::SumHadamard(*a, *b), value, needs, NodeFactor::None))
    }

    fn hcat(&mut self, a: &NodeId, b: &NodeId) -> Result<NodeId, AutodiffError> {
        let value = self.val(*a).hcat(self.val(*b))?;
        let needs = self.needs(&[*a, *b]);
        Ok(self.tape.push(Op::Hcat(*a, *b), value, needs, NodeFactor::None))
    }

    fn vcat(&mut self, a: &NodeId, b: &NodeId) -> Result<NodeId, AutodiffError> {
        let value = self.val(*a).vcat(self.val(*b))?;
        let needs = self.needs(&[*a, *b]);
        Ok(self.tape.push(Op::Vcat(*a, *b), value, needs, NodeFactor::None))
    }

    fn slice_rows(&mut self, a: &NodeId, start: usize, end: usize) -> NodeId {
        let value = self.val(*a).slice_rows(start, end);
        let needs = self.needs(&[*a]);
        self.tape.push(
            Op::SliceRows {
                src: *a,
                start,
                end,
            },
            value,
            needs,
            NodeFactor::None,
        )
    }

    fn reshape(&mut self, a: &NodeId, rows: usize, cols: usize) -> NodeId {
        let value = self.val(*a).reshape(rows, cols);
        let needs = self.needs(&[*a]);
        self.tape.push(Op::Reshape(*a), value, needs, NodeFactor::None)
    }

    fn row_normalize(&mut self, a: &NodeId) -> NodeId {
        let value = kernels::row_normalize(self.val(*a));
        let needs = self.needs(&[*a]);
        self.tape
            .push(Op::RowNormalize(*a), value, needs, NodeFactor::None)
    }
}
