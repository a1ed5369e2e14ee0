//! Semidefinite relaxation of the unbalanced optimal power flow problem.
//!
//! The power-flow equations are quadratic in the stacked bus-phase voltage
//! phasor `v`: every injection, squared magnitude, branch flow, and squared
//! current is `v^H F v = Tr(F v v^H)` for some Hermitian coefficient matrix
//! `F`. Replacing the rank-one outer product `v v^H` by a positive
//! semidefinite matrix variable `V` turns the problem into a semidefinite
//! program; when the optimal `V` is (numerically) rank one, its leading
//! eigenpair recovers a globally optimal voltage profile.
//!
//! This module provides
//!
//! * [`HermMat`] — a sparse upper-triangular Hermitian coefficient matrix
//!   with the trace pairings used everywhere else,
//! * builders for the coefficient matrices of active/reactive injections,
//!   squared voltage magnitudes, directed branch flows, and squared branch
//!   and neutral currents,
//! * [`PccReduction`] — the substitution `V = U W U^H` that folds the fixed
//!   voltage at the point of common coupling into the variable, shrinking
//!   the matrix block and replacing the fixed-phasor condition by a single
//!   scalar pin `W[0,0] = 1`,
//! * the solver-facing problem description ([`SdpProblem`], [`Constraint`],
//!   [`Objective`]) shared by the central and distributed solvers, and
//! * [`relax_opf`] — assembly of the full relaxed OPF over a network.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;

use nalgebra::SymmetricEigen;
use thiserror::Error;

use crate::netmodel::{
    series_admittance, BusId, Indexing, Line, ModelError, Network, Phase,
};
use crate::{C64, CMat, CVec, RMat};

/// Errors produced while assembling a relaxation.
#[derive(Debug, Error)]
pub enum SdpError {
    /// The supply-cost objective needs a price at the point of common
    /// coupling, but the network does not define one.
    #[error("supply-cost objective requires a supply price on the network")]
    MissingSupplyPrice,
    /// The reference magnitude override must be a positive voltage.
    #[error("reference magnitude must be positive, got {0}")]
    BadReferenceMagnitude(f64),
    /// The network cannot be expressed in this form.
    #[error("cannot assemble relaxation: {0}")]
    Unsupported(String),
    /// A structural inconsistency in an assembled problem.
    #[error("inconsistent problem: {0}")]
    Inconsistent(String),
    /// An underlying network-model error.
    #[error(transparent)]
    Model(#[from] ModelError),
}

// ---------------------------------------------------------------------------
// Sparse Hermitian coefficient matrices
// ---------------------------------------------------------------------------

/// A sparse Hermitian matrix stored as its upper triangle.
///
/// Entries are kept in a sorted map from `(row, col)` with `row <= col`;
/// the lower triangle is implied by conjugate symmetry and diagonal entries
/// are kept exactly real. The main operation is the real-valued trace
/// pairing [`HermMat::trace_with`] / [`HermMat::quad_form`].
#[derive(Debug, Clone, PartialEq)]
pub struct HermMat {
    dim: usize,
    entries: BTreeMap<(usize, usize), C64>,
}

impl HermMat {
    /// An all-zero matrix of side `dim`.
    pub fn zeros(dim: usize) -> Self {
        HermMat {
            dim,
            entries: BTreeMap::new(),
        }
    }

    /// The unit coefficient matrix `e_k e_k^T` (selects `|v_k|^2`).
    pub fn unit(dim: usize, k: usize) -> Self {
        let mut m = HermMat::zeros(dim);
        m.add(k, k, C64::new(1.0, 0.0));
        m
    }

    /// Side length.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of stored upper-triangular entries.
    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    /// True when no entry is stored.
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Stored entries `(row, col, value)` with `row <= col`, sorted.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        self.entries.iter().map(|(&(r, c), &v)| (r, c, v))
    }

    /// Accumulates `value` at `(row, col)`, normalizing lower-triangular
    /// positions to their conjugate mirror. Diagonal accumulation keeps the
    /// real part only; Hermitian construction always cancels the imaginary
    /// part there up to round-off.
    pub fn add(&mut self, row: usize, col: usize, value: C64) {
        assert!(row < self.dim && col < self.dim, "entry out of range");
        let (r, c, v) = if row <= col {
            (row, col, value)
        } else {
            (col, row, value.conj())
        };
        let v = if r == c {
            debug_assert!(
                v.im.abs() <= 1e-9 * (1.0 + v.re.abs()),
                "diagonal entry has a non-trivial imaginary part: {v}"
            );
            C64::new(v.re, 0.0)
        } else {
            v
        };
        let slot = self.entries.entry((r, c)).or_insert_with(|| C64::new(0.0, 0.0));
        *slot += v;
        if slot.norm_sqr() == 0.0 {
            self.entries.remove(&(r, c));
        }
    }

    /// Adds `factor * other` into `self` (dimensions must match).
    pub fn add_scaled(&mut self, other: &HermMat, factor: f64) {
        assert_eq!(self.dim, other.dim, "dimension mismatch");
        for (r, c, v) in other.entries() {
            self.add(r, c, v * factor);
        }
    }

    /// Returns `factor * self`.
    pub fn scaled(&self, factor: f64) -> HermMat {
        let mut out = HermMat::zeros(self.dim);
        out.add_scaled(self, factor);
        out
    }

    /// Builds from a dense Hermitian matrix, dropping entries with
    /// magnitude at or below `drop_tol`.
    pub fn from_dense(m: &CMat, drop_tol: f64) -> HermMat {
        assert_eq!(m.nrows(), m.ncols(), "matrix must be square");
        let n = m.nrows();
        let mut out = HermMat::zeros(n);
        for r in 0..n {
            let d = m[(r, r)];
            if d.re.abs() > drop_tol {
                out.add(r, r, C64::new(d.re, 0.0));
            }
            for c in (r + 1)..n {
                // Average the two triangles so tiny asymmetries cancel.
                let v = (m[(r, c)] + m[(c, r)].conj()) * 0.5;
                if v.norm() > drop_tol {
                    out.add(r, c, v);
                }
            }
        }
        out
    }

    /// Expands into a dense Hermitian matrix.
    pub fn to_dense(&self) -> CMat {
        let mut m = CMat::zeros(self.dim, self.dim);
        for (r, c, v) in self.entries() {
            m[(r, c)] = v;
            if r != c {
                m[(c, r)] = v.conj();
            }
        }
        m
    }

    /// The real trace pairing `Tr(self * x)` for Hermitian `x`.
    pub fn trace_with(&self, x: &CMat) -> f64 {
        debug_assert_eq!(x.nrows(), self.dim);
        debug_assert_eq!(x.ncols(), self.dim);
        let mut acc = 0.0;
        for (r, c, v) in self.entries() {
            if r == c {
                acc += v.re * x[(r, r)].re;
            } else {
                // Both triangles: v * conj(x_rc) + conj(v) * x_rc.
                acc += 2.0 * (v * x[(r, c)].conj()).re;
            }
        }
        acc
    }

    /// The quadratic form `w^H * self * w = Tr(self * w w^H)`.
    pub fn quad_form(&self, w: &CVec) -> f64 {
        debug_assert_eq!(w.len(), self.dim);
        let mut acc = 0.0;
        for (r, c, v) in self.entries() {
            if r == c {
                acc += v.re * w[r].norm_sqr();
            } else {
                acc += 2.0 * (v * w[r].conj() * w[c]).re;
            }
        }
        acc
    }
}

// ---------------------------------------------------------------------------
// Injection and voltage-magnitude coefficient matrices
// ---------------------------------------------------------------------------

/// Coefficient matrix of the active injection at stacked index `k`:
/// `Tr(phi_active * v v^H) = Re(v_k conj((Y v)_k))`.
///
/// With `A = e_k e_k^T Y` this is the Hermitian part `(A + A^H) / 2`.
pub fn phi_active(y: &CMat, k: usize) -> HermMat {
    let n = y.nrows();
    let mut m = HermMat::zeros(n);
    for c in 0..n {
        let v = y[(k, c)];
        if v.norm_sqr() == 0.0 {
            continue;
        }
        if c == k {
            m.add(k, k, C64::new(v.re, 0.0));
        } else {
            // Row k of A contributes Y[k,c] / 2; column k of A^H mirrors it.
            m.add(k, c, v * 0.5);
        }
    }
    m
}

/// Coefficient matrix of the reactive injection at stacked index `k`:
/// `Tr(phi_reactive * v v^H) = Im(v_k conj((Y v)_k))`.
///
/// With `A = e_k e_k^T Y` this is `j (A - A^H) / 2`.
pub fn phi_reactive(y: &CMat, k: usize) -> HermMat {
    let n = y.nrows();
    let j = C64::new(0.0, 1.0);
    let mut m = HermMat::zeros(n);
    for c in 0..n {
        let v = y[(k, c)];
        if v.norm_sqr() == 0.0 {
            continue;
        }
        if c == k {
            m.add(k, k, C64::new(-v.im, 0.0));
        } else {
            m.add(k, c, j * v * 0.5);
        }
    }
    m
}

/// Coefficient matrix of a squared voltage magnitude:
/// `Tr(phi_voltage * v v^H) = |v_k|^2`.
pub fn phi_voltage(dim: usize, k: usize) -> HermMat {
    HermMat::unit(dim, k)
}

// ---------------------------------------------------------------------------
// Branch quantities as small linear operators on the voltage vector
// ---------------------------------------------------------------------------

/// A small dense linear map from the stacked voltage vector into some
/// branch quantity (phase currents, end voltages), stored together with
/// the global column indices it touches.
#[derive(Debug, Clone)]
pub struct LinOp {
    /// Global stacked-voltage indices of the operator's columns.
    pub cols: Vec<usize>,
    /// Dense coefficients, `rows x cols.len()`.
    pub m: CMat,
}

impl LinOp {
    /// Number of output rows.
    pub fn rows(&self) -> usize {
        self.m.nrows()
    }

    /// Applies the operator to a full stacked voltage vector.
    pub fn apply(&self, v: &CVec) -> CVec {
        let mut out = CVec::zeros(self.m.nrows());
        for (j, &g) in self.cols.iter().enumerate() {
            for r in 0..self.m.nrows() {
                out[r] += self.m[(r, j)] * v[g];
            }
        }
        out
    }

    /// Composes `t * self` for a dense `t` with matching inner dimension.
    pub fn composed(&self, t: &CMat) -> LinOp {
        assert_eq!(t.ncols(), self.m.nrows(), "composition dimension mismatch");
        LinOp {
            cols: self.cols.clone(),
            m: t * &self.m,
        }
    }
}

/// The operator mapping stacked voltages to the phase currents leaving one
/// end of a line. With the end's half of the charging shunt included
/// (`series_only = false`) this matches the network model's line current;
/// with `series_only = true` it is the series (conductor) current used for
/// ampacity, which is equal and opposite at the two ends.
pub fn line_current_op(
    idx: &Indexing,
    line: &Line,
    from_end: bool,
    series_only: bool,
) -> Result<LinOp, ModelError> {
    let yl = series_admittance(&line.z)?;
    let p = line.phases.len();
    let (near, far) = if from_end {
        (line.from, line.to)
    } else {
        (line.to, line.from)
    };
    let mut cols = Vec::with_capacity(2 * p);
    for ph in line.phases.iter() {
        cols.push(idx.index_of(near, ph));
    }
    for ph in line.phases.iter() {
        cols.push(idx.index_of(far, ph));
    }
    let near_block = if series_only {
        yl.clone()
    } else {
        &yl + &line.y_shunt * C64::new(0.5, 0.0)
    };
    let mut m = CMat::zeros(p, 2 * p);
    m.view_mut((0, 0), (p, p)).copy_from(&near_block);
    m.view_mut((0, p), (p, p)).copy_from(&(-&yl));
    Ok(LinOp { cols, m })
}

/// The operator selecting the voltages of one line end, in the line's
/// phase order.
pub fn line_voltage_op(idx: &Indexing, line: &Line, from_end: bool) -> LinOp {
    let bus = if from_end { line.from } else { line.to };
    let p = line.phases.len();
    let cols: Vec<usize> = line.phases.iter().map(|ph| idx.index_of(bus, ph)).collect();
    LinOp {
        cols,
        m: CMat::identity(p, p),
    }
}

/// The Hermitian part of the pairing `A^H B`:
/// `Tr(result * v v^H) = Re((A v)^H (B v))`.
pub fn herm_pairing(a: &LinOp, b: &LinOp, dim: usize) -> HermMat {
    assert_eq!(a.rows(), b.rows(), "pairing operators disagree on rows");
    let rows = a.rows();
    let mut acc: BTreeMap<(usize, usize), C64> = BTreeMap::new();
    for (ia, &ga) in a.cols.iter().enumerate() {
        for (ib, &gb) in b.cols.iter().enumerate() {
            let mut val = C64::new(0.0, 0.0);
            for r in 0..rows {
                val += a.m[(r, ia)].conj() * b.m[(r, ib)];
            }
            if val.norm_sqr() != 0.0 {
                *acc.entry((ga, gb)).or_insert_with(|| C64::new(0.0, 0.0)) += val;
            }
        }
    }
    let mut out = HermMat::zeros(dim);
    for (&(r, c), &v) in &acc {
        if r == c {
            out.add(r, r, C64::new(v.re, 0.0));
        } else if r < c {
            let mirror = acc.get(&(c, r)).copied().unwrap_or_else(|| C64::new(0.0, 0.0));
            out.add(r, c, (v + mirror.conj()) * 0.5);
        } else if !acc.contains_key(&(c, r)) {
            // Lower-triangular entry with no stored mirror.
            out.add(c, r, v.conj() * 0.5);
        }
    }
    out
}

/// The squared magnitude of one output row of an operator:
/// `Tr(result * v v^H) = |(A v)_row|^2`.
pub fn gram_row(a: &LinOp, row: usize, dim: usize) -> HermMat {
    assert!(row < a.rows(), "row out of range");
    let mut out = HermMat::zeros(dim);
    for (i1, &g1) in a.cols.iter().enumerate() {
        let x1 = a.m[(row, i1)].conj();
        if x1.norm_sqr() == 0.0 {
            continue;
        }
        for (i2, &g2) in a.cols.iter().enumerate() {
            if g1 > g2 {
                continue; // the swapped pair supplies the conjugate mirror
            }
            let val = x1 * a.m[(row, i2)];
            if val.norm_sqr() == 0.0 {
                continue;
            }
            if g1 == g2 {
                out.add(g1, g1, C64::new(val.re, 0.0));
            } else {
                out.add(g1, g2, val);
            }
        }
    }
    out
}

/// Coefficient matrix of the active power entering a line at one end
/// (including that end's half of the charging shunt):
/// `Tr(result * v v^H) = Re(sum_k v_k conj(i_k))` over the line's phases.
pub fn flow_matrix(
    idx: &Indexing,
    line: &Line,
    from_end: bool,
) -> Result<HermMat, ModelError> {
    let current = line_current_op(idx, line, from_end, false)?;
    let voltage = line_voltage_op(idx, line, from_end);
    Ok(herm_pairing(&current, &voltage, idx.total()))
}

/// Coefficient matrix of one conductor's squared series current.
pub fn ampacity_matrix(
    idx: &Indexing,
    line: &Line,
    conductor: usize,
) -> Result<HermMat, ModelError> {
    let series = line_current_op(idx, line, true, true)?;
    Ok(gram_row(&series, conductor, idx.total()))
}

/// Coefficient matrices of the squared neutral currents of a line (one per
/// neutral conductor row), derived from the series phase currents through
/// the line's neutral coupling map. Empty when the line has no neutral.
pub fn neutral_matrices(
    idx: &Indexing,
    line: &Line,
) -> Result<Vec<HermMat>, ModelError> {
    let Some(nm) = &line.neutral else {
        return Ok(Vec::new());
    };
    let series = line_current_op(idx, line, true, true)?;
    let mapped = series.composed(&nm.t);
    Ok((0..mapped.rows())
        .map(|r| gram_row(&mapped, r, idx.total()))
        .collect())
}

// ---------------------------------------------------------------------------
// Folding the fixed reference voltage into the matrix variable
// ---------------------------------------------------------------------------

/// The substitution `V = U W U^H` that eliminates the fixed voltage at the
/// point of common coupling.
///
/// `U` has one column holding the fixed phasor `v0` on the reference span
/// and an identity column for every other stacked index, so `W` is one plus
/// the number of non-reference indices on a side. Feasible voltage matrices
/// correspond exactly to `W >= 0` with the single scalar pin `W[0,0] = 1`,
/// and `V` is positive semidefinite if and only if `W` is, because `U` has
/// full column rank.
#[derive(Debug, Clone)]
pub struct PccReduction {
    span: Range<usize>,
    v0: CVec,
    full_dim: usize,
}

/// A voltage profile recovered from a solved matrix block, together with
/// the two leading eigenvalues that gauge how close the block is to rank
/// one.
#[derive(Debug, Clone)]
pub struct Recovered {
    /// Full stacked voltage phasor (reference span included).
    pub v: CVec,
    /// Leading eigenvalue of the matrix block.
    pub lambda1: f64,
    /// Second eigenvalue; `lambda1 / lambda2 >> 1` signals rank one.
    pub lambda2: f64,
}

impl Recovered {
    /// Ratio of the two leading eigenvalues (infinite when `lambda2 <= 0`).
    pub fn eigen_ratio(&self) -> f64 {
        if self.lambda2 > 0.0 {
            self.lambda1 / self.lambda2
        } else {
            f64::INFINITY
        }
    }
}

impl PccReduction {
    /// Builds the reduction for a reference `span` of the stacked index
    /// range carrying the fixed phasor `v0` (`v0.len() == span.len()`).
    pub fn new(span: Range<usize>, v0: CVec, full_dim: usize) -> Self {
        assert!(span.end <= full_dim, "span exceeds dimension");
        assert_eq!(span.len(), v0.len(), "fixed phasor must fill the span");
        assert!(!span.is_empty(), "reference span cannot be empty");
        PccReduction {
            span,
            v0,
            full_dim,
        }
    }

    /// Side length of the original matrix.
    pub fn full_dim(&self) -> usize {
        self.full_dim
    }

    /// Side length of the reduced matrix: index 0 is the reference scalar,
    /// the rest are the non-reference stacked indices in order.
    pub fn reduced_dim(&self) -> usize {
        self.full_dim - self.span.len() + 1
    }

    /// The reference span in the full stacked index range.
    pub fn span(&self) -> Range<usize> {
        self.span.clone()
    }

    /// The fixed reference phasor.
    pub fn v0(&self) -> &CVec {
        &self.v0
    }

    /// Maps a full stacked index to its reduced index (`None` on the
    /// reference span, which folds into index 0).
    pub fn reduced_index(&self, full: usize) -> Option<usize> {
        assert!(full < self.full_dim, "index out of range");
        if full < self.span.start {
            Some(1 + full)
        } else if full < self.span.end {
            None
        } else {
            Some(1 + full - self.span.len())
        }
    }

    fn row_weight(&self, full: usize) -> (usize, C64) {
        match self.reduced_index(full) {
            Some(i) => (i, C64::new(1.0, 0.0)),
            None => (0, self.v0[full - self.span.start].conj()),
        }
    }

    fn col_weight(&self, full: usize) -> (usize, C64) {
        match self.reduced_index(full) {
            Some(i) => (i, C64::new(1.0, 0.0)),
            None => (0, self.v0[full - self.span.start]),
        }
    }

    /// Transforms a coefficient matrix: `Tr(F * U w (U w)^H)` equals
    /// `Tr(reduce(F) * w w^H)` for every reduced vector `w`.
    pub fn reduce(&self, f: &HermMat) -> HermMat {
        assert_eq!(f.dim(), self.full_dim, "coefficient dimension mismatch");
        let mut acc: BTreeMap<(usize, usize), C64> = BTreeMap::new();
        let mut visit = |r: usize, c: usize, v: C64| {
            let (ri, rw) = self.row_weight(r);
            let (ci, cw) = self.col_weight(c);
            if ri <= ci {
                *acc.entry((ri, ci)).or_insert_with(|| C64::new(0.0, 0.0)) += v * rw * cw;
            }
            // Lower-triangular targets are implied by the conjugate of the
            // mirrored visit, which this loop always performs as well.
        };
        for (r, c, v) in f.entries() {
            visit(r, c, v);
            if r != c {
                visit(c, r, v.conj());
            }
        }
        let mut out = HermMat::zeros(self.reduced_dim());
        for (&(r, c), &v) in &acc {
            if v.norm_sqr() == 0.0 {
                continue;
            }
            if r == c {
                out.add(r, r, C64::new(v.re, 0.0));
            } else {
                out.add(r, c, v);
            }
        }
        out
    }

    /// The pin coefficient in reduced coordinates: `Tr(pin * W) = W[0,0]`.
    pub fn pin_matrix(&self) -> HermMat {
        HermMat::unit(self.reduced_dim(), 0)
    }

    /// Expands a reduced vector `w` into a full voltage vector `U w`.
    pub fn expand(&self, w: &CVec) -> CVec {
        assert_eq!(w.len(), self.reduced_dim(), "reduced dimension mismatch");
        let mut v = CVec::zeros(self.full_dim);
        for full in 0..self.full_dim {
            v[full] = match self.reduced_index(full) {
                Some(i) => w[i],
                None => self.v0[full - self.span.start] * w[0],
            };
        }
        v
    }

    /// Recovers a voltage profile from a solved (dense Hermitian) reduced
    /// block: takes the leading eigenpair, rescales so the reference scalar
    /// is exactly one, and expands through `U`.
    pub fn recover(&self, w_block: &CMat) -> Recovered {
        let (lambda1, lambda2, u) = hermitian_top_pair(w_block);
        let mut w = u * C64::new(lambda1.max(0.0).sqrt(), 0.0);
        let w0 = w[0];
        if w0.norm() > 1e-8 * (1.0 + w.norm()) {
            // Dividing by the reference entry fixes both the arbitrary
            // phase of the eigenvector and the residual scale in one step.
            w /= w0;
        }
        Recovered {
            v: self.expand(&w),
            lambda1,
            lambda2,
        }
    }
}

/// The two leading eigenvalues and the leading eigenvector of a dense
/// Hermitian matrix, computed through the real symmetric embedding
/// `[[Re, -Im], [Im, Re]]` (whose spectrum doubles every eigenvalue).
pub fn hermitian_top_pair(h: &CMat) -> (f64, f64, CVec) {
    let n = h.nrows();
    assert_eq!(h.ncols(), n, "matrix must be square");
    assert!(n > 0, "matrix must be non-empty");
    let mut m = RMat::zeros(2 * n, 2 * n);
    for r in 0..n {
        for c in 0..n {
            let v = (h[(r, c)] + h[(c, r)].conj()) * 0.5;
            m[(r, c)] = v.re;
            m[(r + n, c + n)] = v.re;
            m[(r, c + n)] = -v.im;
            m[(r + n, c)] = v.im;
        }
    }
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..2 * n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let lambda1 = eig.eigenvalues[order[0]];
    // Eigenvalues come in pairs, so the third sorted value is the second
    // distinct one (robust to round-off splitting the top pair).
    let lambda2 = if 2 * n >= 4 {
        eig.eigenvalues[order[2]]
    } else {
        0.0
    };
    let top = eig.eigenvectors.column(order[0]);
    let u = CVec::from_iterator(n, (0..n).map(|k| C64::new(top[k], top[k + n])));
    (lambda1, lambda2, u)
}

// ---------------------------------------------------------------------------
// Solver-facing problem description
// ---------------------------------------------------------------------------

/// How a matrix block is to be interpreted by a solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    /// Complex Hermitian positive semidefinite block.
    ComplexHermitian,
    /// Real symmetric positive semidefinite block.
    RealSymmetric,
}

/// One positive semidefinite matrix block of a problem.
#[derive(Debug, Clone)]
pub struct Block {
    /// Display name (used in logs and reports).
    pub name: String,
    /// Side length.
    pub dim: usize,
    /// Field the block lives over.
    pub kind: BlockKind,
}

/// A free scalar variable.
#[derive(Debug, Clone)]
pub struct ScalarVar {
    /// Display name (used in logs and reports).
    pub name: String,
}

/// Direction of a scalar constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    /// `lhs == rhs`.
    Eq,
    /// `lhs <= rhs`.
    Le,
}

/// Identifies what a constraint encodes, for reporting and for slicing the
/// problem by physical meaning.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConstraintTag {
    /// The reference scalar pin of a reduced block.
    ReferencePin,
    /// Active power balance at a bus phase.
    ActiveBalance { bus: BusId, phase: Phase },
    /// Reactive power balance at a bus phase.
    ReactiveBalance { bus: BusId, phase: Phase },
    /// Lower voltage-magnitude bound at a bus phase.
    VoltageFloor { bus: BusId, phase: Phase },
    /// Upper voltage-magnitude bound at a bus phase.
    VoltageCeiling { bus: BusId, phase: Phase },
    /// Lower active dispatch bound of a generator phase.
    DgActiveMin { unit: usize, phase: Phase },
    /// Upper active dispatch bound of a generator phase.
    DgActiveMax { unit: usize, phase: Phase },
    /// Lower reactive dispatch bound of a generator phase.
    DgReactiveMin { unit: usize, phase: Phase },
    /// Upper reactive dispatch bound of a generator phase.
    DgReactiveMax { unit: usize, phase: Phase },
    /// Squared series-current limit of a line conductor.
    Ampacity { line: usize, conductor: usize },
    /// Squared neutral-current limit of a line.
    NeutralAmpacity { line: usize, conductor: usize },
    /// Total active-loss cap of a line.
    LossCap { line: usize },
    /// Anything else (toy problems, solver tests).
    Other(String),
}

impl fmt::Display for ConstraintTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConstraintTag::ReferencePin => write!(f, "pin"),
            ConstraintTag::ActiveBalance { bus, phase } => {
                write!(f, "balance-p[{}:{}]", bus.0, phase.letter())
            }
            ConstraintTag::ReactiveBalance { bus, phase } => {
                write!(f, "balance-q[{}:{}]", bus.0, phase.letter())
            }
            ConstraintTag::VoltageFloor { bus, phase } => {
                write!(f, "v-min[{}:{}]", bus.0, phase.letter())
            }
            ConstraintTag::VoltageCeiling { bus, phase } => {
                write!(f, "v-max[{}:{}]", bus.0, phase.letter())
            }
            ConstraintTag::DgActiveMin { unit, phase } => {
                write!(f, "pg-min[{}:{}]", unit, phase.letter())
            }
            ConstraintTag::DgActiveMax { unit, phase } => {
                write!(f, "pg-max[{}:{}]", unit, phase.letter())
            }
            ConstraintTag::DgReactiveMin { unit, phase } => {
                write!(f, "qg-min[{}:{}]", unit, phase.letter())
            }
            ConstraintTag::DgReactiveMax { unit, phase } => {
                write!(f, "qg-max[{}:{}]", unit, phase.letter())
            }
            ConstraintTag::Ampacity { line, conductor } => {
                write!(f, "amp[{}:{}]", line, conductor)
            }
            ConstraintTag::NeutralAmpacity { line, conductor } => {
                write!(f, "amp-n[{}:{}]", line, conductor)
            }
            ConstraintTag::LossCap { line } => write!(f, "loss-cap[{}]", line),
            ConstraintTag::Other(s) => write!(f, "{s}"),
        }
    }
}

/// One scalar constraint
/// `sum_b Tr(mats_b * X_b) + sum_i lin_i * x_i (==|<=) rhs`.
#[derive(Debug, Clone)]
pub struct Constraint {
    /// What the constraint encodes.
    pub tag: ConstraintTag,
    /// Coefficient matrices, paired with their block index.
    pub mats: Vec<(usize, HermMat)>,
    /// Coefficients of the free scalar variables, `(variable, weight)`.
    pub lin: Vec<(usize, f64)>,
    /// Right-hand side.
    pub rhs: f64,
    /// Equality or inequality.
    pub sense: Sense,
}

impl Constraint {
    /// Evaluates the left-hand side at dense block values and scalars.
    pub fn lhs(&self, blocks: &[CMat], scalars: &[f64]) -> f64 {
        let mats: f64 = self
            .mats
            .iter()
            .map(|(b, m)| m.trace_with(&blocks[*b]))
            .sum();
        let lin: f64 = self.lin.iter().map(|&(i, w)| w * scalars[i]).sum();
        mats + lin
    }

    /// Constraint violation at a point: `|lhs - rhs|` for equalities,
    /// `max(0, lhs - rhs)` for inequalities.
    pub fn violation(&self, blocks: &[CMat], scalars: &[f64]) -> f64 {
        let gap = self.lhs(blocks, scalars) - self.rhs;
        match self.sense {
            Sense::Eq => gap.abs(),
            Sense::Le => gap.max(0.0),
        }
    }
}

/// The objective `sum_b Tr(mats_b * X_b) + sum_i lin_i * x_i + constant`,
/// to be minimized.
#[derive(Debug, Clone, Default)]
pub struct Objective {
    /// Coefficient matrices, paired with their block index.
    pub mats: Vec<(usize, HermMat)>,
    /// Coefficients of the free scalar variables.
    pub lin: Vec<(usize, f64)>,
    /// Constant offset (from dispatch pinned at fixed values).
    pub constant: f64,
}

impl Objective {
    /// Evaluates the objective at dense block values and scalars.
    pub fn value(&self, blocks: &[CMat], scalars: &[f64]) -> f64 {
        let mats: f64 = self
            .mats
            .iter()
            .map(|(b, m)| m.trace_with(&blocks[*b]))
            .sum();
        let lin: f64 = self.lin.iter().map(|&(i, w)| w * scalars[i]).sum();
        mats + lin + self.constant
    }
}

/// A conic problem over positive semidefinite matrix blocks and free
/// scalars: minimize [`Objective`] subject to [`Constraint`]s and
/// `X_b >= 0` for every block.
#[derive(Debug, Clone)]
pub struct SdpProblem {
    /// Matrix blocks (each constrained positive semidefinite).
    pub blocks: Vec<Block>,
    /// Free scalar variables.
    pub scalars: Vec<ScalarVar>,
    /// Scalar equality and inequality constraints.
    pub constraints: Vec<Constraint>,
    /// Objective to minimize.
    pub objective: Objective,
}

impl SdpProblem {
    /// Number of equality constraints.
    pub fn eq_count(&self) -> usize {
        self.constraints
            .iter()
            .filter(|c| c.sense == Sense::Eq)
            .count()
    }

    /// Number of inequality constraints.
    pub fn le_count(&self) -> usize {
        self.constraints
            .iter()
            .filter(|c| c.sense == Sense::Le)
            .count()
    }

    /// Structural sanity checks: all indices in range, all coefficient
    /// dimensions matching their block.
    pub fn validate(&self) -> Result<(), SdpError> {
        let check = |mats: &[(usize, HermMat)], what: &str| -> Result<(), SdpError> {
            for (b, m) in mats {
                let block = self.blocks.get(*b).ok_or_else(|| {
                    SdpError::Inconsistent(format!("{what} references missing block {b}"))
                })?;
                if m.dim() != block.dim {
                    return Err(SdpError::Inconsistent(format!(
                        "{what} has a {} coefficient on block '{}' of side {}",
                        m.dim(),
                        block.name,
                        block.dim
                    )));
                }
            }
            Ok(())
        };
        let check_lin = |lin: &[(usize, f64)], what: &str| -> Result<(), SdpError> {
            for (i, _) in lin {
                if *i >= self.scalars.len() {
                    return Err(SdpError::Inconsistent(format!(
                        "{what} references missing scalar {i}"
                    )));
                }
            }
            Ok(())
        };
        for con in &self.constraints {
            let what = format!("constraint '{}'", con.tag);
            check(&con.mats, &what)?;
            check_lin(&con.lin, &what)?;
            if con.mats.is_empty() && con.lin.is_empty() {
                return Err(SdpError::Inconsistent(format!("{what} has no terms")));
            }
        }
        check(&self.objective.mats, "objective")?;
        check_lin(&self.objective.lin, "objective")?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Assembly of the relaxed OPF
// ---------------------------------------------------------------------------

/// What the relaxation minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ObjectiveKind {
    /// Total active line losses (per unit).
    Loss,
    /// Cost of supply-point import plus priced generator dispatch
    /// (price units per megawatt-hour, evaluated per hour).
    #[default]
    SupplyCost,
}

/// Assembly options for [`relax_opf`].
#[derive(Debug, Clone, Default)]
pub struct RelaxOptions {
    /// Objective to minimize.
    pub objective: ObjectiveKind,
    /// Overrides the magnitude (per unit) of the reference phasor at the
    /// point of common coupling, keeping its angles.
    pub reference_magnitude: Option<f64>,
}

/// A relaxed OPF instance: the solver-facing problem plus everything
/// needed to interpret a solution physically.
#[derive(Debug, Clone)]
pub struct OpfRelaxation {
    /// The assembled conic problem.
    pub problem: SdpProblem,
    /// Index of the voltage matrix block (always 0 here).
    pub v_block: usize,
    /// The reference-voltage substitution used by the block.
    pub reduction: PccReduction,
    /// Objective the problem was assembled with.
    pub objective: ObjectiveKind,
    /// Per generator unit and phase slot, the scalar index of its active
    /// dispatch variable (`None` when the bound is pinned or the phase is
    /// absent).
    pub pg: Vec<[Option<usize>; 3]>,
    /// Like `pg`, for reactive dispatch.
    pub qg: Vec<[Option<usize>; 3]>,
    /// Pinned active dispatch per unit and phase slot (zero where a
    /// variable exists or the phase is absent).
    pub pg_fixed: Vec<[f64; 3]>,
    /// Pinned reactive dispatch per unit and phase slot.
    pub qg_fixed: Vec<[f64; 3]>,
}

impl OpfRelaxation {
    /// Splits a scalar solution vector into per-unit, per-phase dispatch
    /// `(active, reactive)`, merging variable values with pinned bounds.
    pub fn dispatch(&self, scalars: &[f64]) -> (Vec<[f64; 3]>, Vec<[f64; 3]>) {
        let merge = |vars: &[[Option<usize>; 3]], fixed: &[[f64; 3]]| {
            vars.iter()
                .zip(fixed)
                .map(|(v, f)| {
                    let mut out = *f;
                    for (slot, idx) in v.iter().enumerate() {
                        if let Some(i) = idx {
                            out[slot] = scalars[*i];
                        }
                    }
                    out
                })
                .collect()
        };
        (
            merge(&self.pg, &self.pg_fixed),
            merge(&self.qg, &self.qg_fixed),
        )
    }
}

/// Assembles the semidefinite relaxation of optimal power flow over a
/// network: one reduced Hermitian voltage block, one free scalar per
/// non-pinned generator bound pair, power balances at every non-reference
/// bus phase, voltage-band, dispatch-box, ampacity, neutral-current, and
/// loss-cap constraints, and the requested objective.
pub fn relax_opf(
    net: &Network,
    idx: &Indexing,
    opts: &RelaxOptions,
) -> Result<OpfRelaxation, SdpError> {
    let total = idx.total();
    let span = idx.bus_span(net.pcc);
    let mut v0 = net.v0.clone();
    if let Some(mag) = opts.reference_magnitude {
        if mag <= 0.0 || !mag.is_finite() {
            return Err(SdpError::BadReferenceMagnitude(mag));
        }
        for e in v0.iter_mut() {
            let n = e.norm();
            if n > 0.0 {
                *e *= mag / n;
            }
        }
    }
    let reduction = PccReduction::new(span.clone(), v0, total);
    let ybus = net.ybus(idx);

    let mut problem = SdpProblem {
        blocks: vec![Block {
            name: "V".to_string(),
            dim: reduction.reduced_dim(),
            kind: BlockKind::ComplexHermitian,
        }],
        scalars: Vec::new(),
        constraints: Vec::new(),
        objective: Objective::default(),
    };
    let v_block = 0usize;

    // Scalar dispatch variables: one per generator phase and bound pair
    // with actual freedom; degenerate bounds fold into the balances.
    let unit_count = net.dg.len();
    let mut pg: Vec<[Option<usize>; 3]> = vec![[None; 3]; unit_count];
    let mut qg: Vec<[Option<usize>; 3]> = vec![[None; 3]; unit_count];
    let mut pg_fixed: Vec<[f64; 3]> = vec![[0.0; 3]; unit_count];
    let mut qg_fixed: Vec<[f64; 3]> = vec![[0.0; 3]; unit_count];
    for (u, unit) in net.dg.iter().enumerate() {
        if unit.bus == net.pcc {
            return Err(SdpError::Unsupported(
                "a generator at the point of common coupling is not supported".to_string(),
            ));
        }
        let phases = net
            .bus(unit.bus)
            .ok_or_else(|| {
                SdpError::Inconsistent(format!("generator {u} sits at an unknown bus"))
            })?
            .phases;
        for phase in phases.iter() {
            let slot = phase.index();
            if unit.p_max > unit.p_min {
                pg[u][slot] = Some(problem.scalars.len());
                problem.scalars.push(ScalarVar {
                    name: format!("pg[{}:{}]", unit.bus.0, phase.letter()),
                });
            } else {
                pg_fixed[u][slot] = unit.p_min;
            }
            if unit.q_max > unit.q_min {
                qg[u][slot] = Some(problem.scalars.len());
                problem.scalars.push(ScalarVar {
                    name: format!("qg[{}:{}]", unit.bus.0, phase.letter()),
                });
            } else {
                qg_fixed[u][slot] = unit.q_min;
            }
        }
    }
    let unit_at = |bus: BusId| net.dg.iter().position(|u| u.bus == bus);

    // Reference pin.
    problem.constraints.push(Constraint {
        tag: ConstraintTag::ReferencePin,
        mats: vec![(v_block, reduction.pin_matrix())],
        lin: Vec::new(),
        rhs: 1.0,
        sense: Sense::Eq,
    });

    // Power balances and voltage bands at every non-reference bus phase.
    for bus in &net.buses {
        if bus.id == net.pcc {
            continue;
        }
        let unit = unit_at(bus.id);
        for phase in bus.phases.iter() {
            let k = idx.index_of(bus.id, phase);
            let slot = phase.index();

            let p_mat = reduction.reduce(&phi_active(&ybus, k));
            let (p_lin, p_pin) = match unit {
                Some(u) => match pg[u][slot] {
                    Some(var) => (vec![(var, -1.0)], 0.0),
                    None => (Vec::new(), pg_fixed[u][slot]),
                },
                None => (Vec::new(), 0.0),
            };
            problem.constraints.push(Constraint {
                tag: ConstraintTag::ActiveBalance {
                    bus: bus.id,
                    phase,
                },
                mats: vec![(v_block, p_mat)],
                lin: p_lin,
                rhs: p_pin - bus.p_load[slot],
                sense: Sense::Eq,
            });

            // Capacitor banks are kept out of the admittance matrix; their
            // injection `y_cap |v|^2` folds into the coefficient instead.
            let mut q_full = phi_reactive(&ybus, k);
            if bus.y_cap[slot] != 0.0 {
                q_full.add_scaled(&phi_voltage(total, k), -bus.y_cap[slot]);
            }
            let q_mat = reduction.reduce(&q_full);
            let (q_lin, q_pin) = match unit {
                Some(u) => match qg[u][slot] {
                    Some(var) => (vec![(var, -1.0)], 0.0),
                    None => (Vec::new(), qg_fixed[u][slot]),
                },
                None => (Vec::new(), 0.0),
            };
            problem.constraints.push(Constraint {
                tag: ConstraintTag::ReactiveBalance {
                    bus: bus.id,
                    phase,
                },
                mats: vec![(v_block, q_mat)],
                lin: q_lin,
                rhs: q_pin - bus.q_load[slot],
                sense: Sense::Eq,
            });

            let v_mat = reduction.reduce(&phi_voltage(total, k));
            problem.constraints.push(Constraint {
                tag: ConstraintTag::VoltageFloor {
                    bus: bus.id,
                    phase,
                },
                mats: vec![(v_block, v_mat.scaled(-1.0))],
                lin: Vec::new(),
                rhs: -(bus.v_min * bus.v_min),
                sense: Sense::Le,
            });
            problem.constraints.push(Constraint {
                tag: ConstraintTag::VoltageCeiling {
                    bus: bus.id,
                    phase,
                },
                mats: vec![(v_block, v_mat)],
                lin: Vec::new(),
                rhs: bus.v_max * bus.v_max,
                sense: Sense::Le,
            });
        }
    }

    // Dispatch boxes for the free scalar variables.
    for (u, unit) in net.dg.iter().enumerate() {
        for slot in 0..3 {
            let phase = [Phase::A, Phase::B, Phase::C][slot];
            if let Some(var) = pg[u][slot] {
                problem.constraints.push(Constraint {
                    tag: ConstraintTag::DgActiveMin { unit: u, phase },
                    mats: Vec::new(),
                    lin: vec![(var, -1.0)],
                    rhs: -unit.p_min,
                    sense: Sense::Le,
                });
                problem.constraints.push(Constraint {
                    tag: ConstraintTag::DgActiveMax { unit: u, phase },
                    mats: Vec::new(),
                    lin: vec![(var, 1.0)],
                    rhs: unit.p_max,
                    sense: Sense::Le,
                });
            }
            if let Some(var) = qg[u][slot] {
                problem.constraints.push(Constraint {
                    tag: ConstraintTag::DgReactiveMin { unit: u, phase },
                    mats: Vec::new(),
                    lin: vec![(var, -1.0)],
                    rhs: -unit.q_min,
                    sense: Sense::Le,
                });
                problem.constraints.push(Constraint {
                    tag: ConstraintTag::DgReactiveMax { unit: u, phase },
                    mats: Vec::new(),
                    lin: vec![(var, 1.0)],
                    rhs: unit.q_max,
                    sense: Sense::Le,
                });
            }
        }
    }

    // Line limits: conductor ampacities (series current), neutral-current
    // limits, and per-line loss caps.
    for (l, line) in net.lines.iter().enumerate() {
        if let Some(i_max) = line.i_max {
            for conductor in 0..line.phases.len() {
                let m = reduction.reduce(&ampacity_matrix(idx, line, conductor)?);
                problem.constraints.push(Constraint {
                    tag: ConstraintTag::Ampacity { line: l, conductor },
                    mats: vec![(v_block, m)],
                    lin: Vec::new(),
                    rhs: i_max * i_max,
                    sense: Sense::Le,
                });
            }
        }
        if let Some(nm) = &line.neutral {
            if let Some(i_max) = nm.i_max {
                for (conductor, m) in neutral_matrices(idx, line)?.into_iter().enumerate() {
                    problem.constraints.push(Constraint {
                        tag: ConstraintTag::NeutralAmpacity { line: l, conductor },
                        mats: vec![(v_block, reduction.reduce(&m))],
                        lin: Vec::new(),
                        rhs: i_max * i_max,
                        sense: Sense::Le,
                    });
                }
            }
        }
        if let Some(cap) = line.loss_cap {
            let mut loss = flow_matrix(idx, line, true)?;
            loss.add_scaled(&flow_matrix(idx, line, false)?, 1.0);
            problem.constraints.push(Constraint {
                tag: ConstraintTag::LossCap { line: l },
                mats: vec![(v_block, reduction.reduce(&loss))],
                lin: Vec::new(),
                rhs: cap,
                sense: Sense::Le,
            });
        }
    }

    // Objective.
    match opts.objective {
        ObjectiveKind::Loss => {
            let mut loss = HermMat::zeros(total);
            for line in &net.lines {
                loss.add_scaled(&flow_matrix(idx, line, true)?, 1.0);
                loss.add_scaled(&flow_matrix(idx, line, false)?, 1.0);
            }
            problem.objective.mats.push((v_block, reduction.reduce(&loss)));
        }
        ObjectiveKind::SupplyCost => {
            let c0 = net.c0.ok_or(SdpError::MissingSupplyPrice)?;
            // Per-unit power times this factor is megawatts, so prices per
            // megawatt-hour multiply directly into cost per hour.
            let to_mw = net.base.s_va / 1e6;
            let mut import = HermMat::zeros(total);
            for k in span.clone() {
                import.add_scaled(&phi_active(&ybus, k), c0 * to_mw);
            }
            problem.objective.mats.push((v_block, reduction.reduce(&import)));
            for (u, unit) in net.dg.iter().enumerate() {
                for var in pg[u].iter().flatten() {
                    problem.objective.lin.push((*var, unit.cost * to_mw));
                }
                let pinned: f64 = pg_fixed[u].iter().sum();
                problem.objective.constant += unit.cost * to_mw * pinned;
            }
        }
    }

    problem.validate()?;
    Ok(OpfRelaxation {
        problem,
        v_block,
        reduction,
        objective: opts.objective,
        pg,
        qg,
        pg_fixed,
        qg_fixed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{kron_reduce, select_phases, NeutralModel};
    use crate::testutil::{backfill_loads, path_network, random_network, randomize_loads};
    use crate::verify::{line_flows, OperatingPoint};
    use crate::netmodel::DgUnit;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn random_hermitian(rng: &mut ChaCha8Rng, n: usize) -> CMat {
        let m = CMat::from_fn(n, n, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        (&m + &m.adjoint()) * c(0.5, 0.0)
    }

    fn random_cvec(rng: &mut ChaCha8Rng, n: usize) -> CVec {
        CVec::from_fn(n, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
    }

    /// A voltage profile that is exact at the reference span and randomly
    /// perturbed (in magnitude and angle) everywhere else.
    fn perturbed_profile(net: &Network, idx: &Indexing, rng: &mut ChaCha8Rng) -> CVec {
        let mut v = net.nominal_profile(idx);
        let span = idx.bus_span(net.pcc);
        for k in 0..idx.total() {
            if span.contains(&k) {
                continue;
            }
            v[k] *= C64::from_polar(
                1.0 + rng.gen_range(-0.05..0.05),
                rng.gen_range(-0.04..0.04),
            );
        }
        v
    }

    /// The reduced vector whose expansion reproduces `v` (requires the
    /// reference span of `v` to hold exactly the reduction's phasor).
    fn reduce_vector(red: &PccReduction, v: &CVec) -> CVec {
        let mut w = CVec::zeros(red.reduced_dim());
        w[0] = c(1.0, 0.0);
        for full in 0..red.full_dim() {
            if let Some(i) = red.reduced_index(full) {
                w[i] = v[full];
            }
        }
        w
    }

    #[test]
    fn herm_matrix_round_trips_and_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in [1usize, 2, 5, 9] {
            let h = random_hermitian(&mut rng, n);
            let sp = HermMat::from_dense(&h, 0.0);
            assert_eq!(sp.dim(), n);
            assert!((sp.to_dense() - &h).norm() < 1e-12);

            let x = random_hermitian(&mut rng, n);
            let prod = &h * &x;
            let dense_trace: C64 = (0..n).map(|k| prod[(k, k)]).sum();
            assert!(dense_trace.im.abs() < 1e-10);
            assert!((sp.trace_with(&x) - dense_trace.re).abs() < 1e-10);

            let w = random_cvec(&mut rng, n);
            let quad = (w.adjoint() * &h * &w)[(0, 0)];
            assert!(quad.im.abs() < 1e-10);
            assert!((sp.quad_form(&w) - quad.re).abs() < 1e-10);
        }
    }

    #[test]
    fn herm_matrix_normalizes_lower_triangle() {
        let mut a = HermMat::zeros(3);
        a.add(2, 0, c(1.5, -0.5));
        let mut b = HermMat::zeros(3);
        b.add(0, 2, c(1.5, 0.5));
        assert_eq!(a, b);

        // Accumulation that cancels removes the entry.
        a.add(0, 2, c(-1.5, -0.5));
        assert!(a.is_empty());

        let mut s = HermMat::unit(2, 1).scaled(3.0);
        s.add_scaled(&HermMat::unit(2, 1), -1.0);
        assert_eq!(s.to_dense()[(1, 1)], c(2.0, 0.0));
    }

    #[test]
    fn injection_matrices_match_power_flow_quantities() {
        for seed in 0..8u64 {
            let mut net = random_network(seed, seed % 2 == 0);
            randomize_loads(&mut net, seed + 100);
            let idx = net.indexing();
            let y = net.ybus(&idx);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 200);
            let v = perturbed_profile(&net, &idx, &mut rng);
            let op = OperatingPoint::from_voltages(&net, &idx, v.clone());
            for k in 0..idx.total() {
                let p = phi_active(&y, k).quad_form(&v);
                let q = phi_reactive(&y, k).quad_form(&v);
                assert!(
                    (p - op.s[k].re).abs() < 1e-10,
                    "active injection mismatch at index {k} (seed {seed})"
                );
                assert!(
                    (q - op.s[k].im).abs() < 1e-10,
                    "reactive injection mismatch at index {k} (seed {seed})"
                );
                let m = phi_voltage(idx.total(), k).quad_form(&v);
                assert!((m - v[k].norm_sqr()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn branch_matrices_match_flow_and_current_calculations() {
        for seed in [1u64, 3, 5, 11] {
            let mut net = random_network(seed, true);
            randomize_loads(&mut net, seed + 7);
            let idx = net.indexing();
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 40);
            let v = perturbed_profile(&net, &idx, &mut rng);
            for line in &net.lines {
                let (fwd, rev) = line_flows(&net, &idx, line, &v);
                let pf = flow_matrix(&idx, line, true).unwrap().quad_form(&v);
                let pr = flow_matrix(&idx, line, false).unwrap().quad_form(&v);
                assert!((pf - fwd).abs() < 1e-10, "forward flow mismatch (seed {seed})");
                assert!((pr - rev).abs() < 1e-10, "reverse flow mismatch (seed {seed})");

                // Independent series current: Y (v_from - v_to) on the
                // line's phases.
                let fp = net.bus(line.from).unwrap().phases;
                let tp = net.bus(line.to).unwrap().phases;
                let vf = CVec::from_iterator(fp.len(), idx.bus_span(line.from).map(|k| v[k]));
                let vt = CVec::from_iterator(tp.len(), idx.bus_span(line.to).map(|k| v[k]));
                let ys = series_admittance(&line.z).unwrap();
                let i_series =
                    &ys * (select_phases(&vf, fp, line.phases) - select_phases(&vt, tp, line.phases));
                for r in 0..line.phases.len() {
                    let m = ampacity_matrix(&idx, line, r).unwrap().quad_form(&v);
                    assert!(
                        (m - i_series[r].norm_sqr()).abs() < 1e-10,
                        "series current mismatch on conductor {r} (seed {seed})"
                    );
                }
            }
        }
    }

    #[test]
    fn neutral_matrices_match_reduced_neutral_current() {
        // Two-bus segment with two phases and one neutral conductor,
        // eliminated into the phase frame.
        let mut net = path_network(2);
        let mut z_full = CMat::zeros(3, 3);
        for r in 0..3 {
            for s in 0..3 {
                z_full[(r, s)] = if r == s { c(0.06, 0.12) } else { c(0.02, 0.04) };
            }
        }
        let (z_red, t) = kron_reduce(&z_full, 2).unwrap();
        net.lines[0].z = z_red;
        net.lines[0].neutral = Some(NeutralModel {
            t: t.clone(),
            i_max: Some(0.8),
        });
        net.validate().unwrap();

        let idx = net.indexing();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let v = perturbed_profile(&net, &idx, &mut rng);
        let line = &net.lines[0];
        let fp = net.bus(line.from).unwrap().phases;
        let tp = net.bus(line.to).unwrap().phases;
        let vf = CVec::from_iterator(fp.len(), idx.bus_span(line.from).map(|k| v[k]));
        let vt = CVec::from_iterator(tp.len(), idx.bus_span(line.to).map(|k| v[k]));
        let ys = series_admittance(&line.z).unwrap();
        let i_series =
            &ys * (select_phases(&vf, fp, line.phases) - select_phases(&vt, tp, line.phases));
        let i_neutral = &t * &i_series;

        let mats = neutral_matrices(&idx, line).unwrap();
        assert_eq!(mats.len(), 1);
        assert!((mats[0].quad_form(&v) - i_neutral[0].norm_sqr()).abs() < 1e-10);
    }

    #[test]
    fn reduction_preserves_quadratic_forms() {
        for seed in [0u64, 2, 6, 9] {
            let mut net = random_network(seed, seed % 2 == 1);
            randomize_loads(&mut net, seed + 31);
            let idx = net.indexing();
            let y = net.ybus(&idx);
            let span = idx.bus_span(net.pcc);
            let red = PccReduction::new(span.clone(), net.v0.clone(), idx.total());
            assert_eq!(red.reduced_dim(), idx.total() - span.len() + 1);

            let mut rng = ChaCha8Rng::seed_from_u64(seed + 77);
            let w = random_cvec(&mut rng, red.reduced_dim());
            let v = red.expand(&w);
            for (off, k) in span.clone().enumerate() {
                assert!((v[k] - net.v0[off] * w[0]).norm() < 1e-15);
            }

            // Injection coefficients and a dense random Hermitian matrix
            // all pair identically before and after the substitution.
            for k in 0..idx.total() {
                for f in [phi_active(&y, k), phi_reactive(&y, k)] {
                    let direct = f.quad_form(&v);
                    let reduced = red.reduce(&f).quad_form(&w);
                    assert!(
                        (direct - reduced).abs() < 1e-9 * (1.0 + direct.abs()),
                        "reduction changed a pairing (seed {seed}, index {k})"
                    );
                }
            }
            let f = HermMat::from_dense(&random_hermitian(&mut rng, idx.total()), 0.0);
            let direct = f.quad_form(&v);
            let reduced = red.reduce(&f).quad_form(&w);
            assert!((direct - reduced).abs() < 1e-9 * (1.0 + direct.abs()));

            // The pin selects the squared reference scalar.
            assert!((red.pin_matrix().quad_form(&w) - w[0].norm_sqr()).abs() < 1e-12);
        }
    }

    #[test]
    fn rank_one_block_recovers_voltages() {
        let mut net = random_network(4, true);
        randomize_loads(&mut net, 21);
        let idx = net.indexing();
        let span = idx.bus_span(net.pcc);
        let red = PccReduction::new(span, net.v0.clone(), idx.total());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = perturbed_profile(&net, &idx, &mut rng);
        let w = reduce_vector(&red, &v);

        let w_block = CMat::from_fn(w.len(), w.len(), |r, s| w[r] * w[s].conj());
        let rec = red.recover(&w_block);
        assert!((rec.lambda1 - w.norm_squared()).abs() < 1e-9);
        assert!(rec.lambda2.abs() < 1e-9);
        assert!(rec.eigen_ratio() > 1e6);
        assert!((&rec.v - &v).norm() < 1e-7, "recovered profile drifted");
    }

    #[test]
    fn top_eigenpair_matches_construction() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let n = 6;
        let a = random_cvec(&mut rng, n);
        // Orthogonalize a second direction against the first.
        let mut b = random_cvec(&mut rng, n);
        let overlap = (a.adjoint() * &b)[(0, 0)] / a.norm_squared();
        b -= &a * overlap;
        let h = CMat::from_fn(n, n, |r, s| {
            a[r] * a[s].conj() + b[r] * b[s].conj() * 0.01
        });
        let (l1, l2, u) = hermitian_top_pair(&h);
        assert!((l1 - a.norm_squared()).abs() < 1e-9);
        assert!((l2 - 0.01 * b.norm_squared()).abs() < 1e-9);
        // The leading eigenvector matches `a` up to a global phase.
        let inner = (a.adjoint() * &u)[(0, 0)].norm();
        assert!((inner - a.norm()).abs() < 1e-9);
    }

    #[test]
    fn relaxation_structure_matches_network() {
        let mut net = path_network(4);
        net.dg.push(DgUnit {
            bus: BusId(3),
            p_min: 0.0,
            p_max: 0.1,
            q_min: -0.05,
            q_max: 0.05,
            cost: 10.0,
        });
        net.validate().unwrap();
        let idx = net.indexing();
        let rel = relax_opf(&net, &idx, &RelaxOptions::default()).unwrap();

        // One complex block, reduced by the two reference indices.
        assert_eq!(rel.problem.blocks.len(), 1);
        assert_eq!(rel.problem.blocks[0].kind, BlockKind::ComplexHermitian);
        assert_eq!(rel.problem.blocks[0].dim, idx.total() - 2 + 1);

        // One active and one reactive variable per generator phase.
        assert_eq!(rel.problem.scalars.len(), 4);
        assert_eq!(rel.pg[0].iter().flatten().count(), 2);
        assert_eq!(rel.qg[0].iter().flatten().count(), 2);

        // Pin + 2 balances per non-reference bus phase (6 of them) = 13
        // equalities; 2 band bounds each + 2 boxes per scalar = 20
        // inequalities.
        assert_eq!(rel.problem.eq_count(), 13);
        assert_eq!(rel.problem.le_count(), 12 + 8);

        // Supply-cost objective: block term plus the priced dispatch.
        assert_eq!(rel.objective, ObjectiveKind::SupplyCost);
        assert_eq!(rel.problem.objective.mats.len(), 1);
        assert_eq!(rel.problem.objective.lin.len(), 2);

        // Loss objective drops the priced terms.
        let loss = relax_opf(
            &net,
            &idx,
            &RelaxOptions {
                objective: ObjectiveKind::Loss,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(loss.problem.objective.lin.is_empty());
        assert_eq!(loss.problem.objective.constant, 0.0);

        // Unity-power-factor generators get no reactive variable.
        let mut unity = path_network(3);
        unity.dg.push(DgUnit {
            bus: BusId(2),
            p_min: 0.0,
            p_max: 0.1,
            q_min: 0.0,
            q_max: 0.0,
            cost: 10.0,
        });
        unity.validate().unwrap();
        let idx2 = unity.indexing();
        let rel2 = relax_opf(&unity, &idx2, &RelaxOptions::default()).unwrap();
        assert_eq!(rel2.problem.scalars.len(), 2);
        assert!(rel2.qg[0].iter().all(|s| s.is_none()));

        // Reference-magnitude override rescales the folded phasor.
        let boosted = relax_opf(
            &net,
            &idx,
            &RelaxOptions {
                reference_magnitude: Some(1.02),
                ..Default::default()
            },
        )
        .unwrap();
        for e in boosted.reduction.v0().iter() {
            assert!((e.norm() - 1.02).abs() < 1e-12);
        }
        assert!(matches!(
            relax_opf(
                &net,
                &idx,
                &RelaxOptions {
                    reference_magnitude: Some(-1.0),
                    ..Default::default()
                },
            ),
            Err(SdpError::BadReferenceMagnitude(_))
        ));

        // Missing supply price only matters for the cost objective.
        let mut unpriced = path_network(3);
        unpriced.c0 = None;
        let idx3 = unpriced.indexing();
        assert!(matches!(
            relax_opf(&unpriced, &idx3, &RelaxOptions::default()),
            Err(SdpError::MissingSupplyPrice)
        ));
        assert!(relax_opf(
            &unpriced,
            &idx3,
            &RelaxOptions {
                objective: ObjectiveKind::Loss,
                ..Default::default()
            },
        )
        .is_ok());

        // A generator at the reference bus has no balance row to live in.
        let mut bad = path_network(3);
        bad.dg.push(DgUnit {
            bus: BusId(0),
            p_min: 0.0,
            p_max: 0.1,
            q_min: 0.0,
            q_max: 0.0,
            cost: 10.0,
        });
        let idx4 = bad.indexing();
        assert!(matches!(
            relax_opf(&bad, &idx4, &RelaxOptions::default()),
            Err(SdpError::Unsupported(_))
        ));
    }

    #[test]
    fn constraint_tags_render_compactly() {
        assert_eq!(
            ConstraintTag::ActiveBalance {
                bus: BusId(3),
                phase: Phase::B
            }
            .to_string(),
            "balance-p[3:b]"
        );
        assert_eq!(
            ConstraintTag::Ampacity {
                line: 2,
                conductor: 1
            }
            .to_string(),
            "amp[2:1]"
        );
        assert_eq!(ConstraintTag::ReferencePin.to_string(), "pin");
    }

    #[test]
    fn problem_validation_catches_structural_errors() {
        let mut problem = SdpProblem {
            blocks: vec![Block {
                name: "V".to_string(),
                dim: 3,
                kind: BlockKind::ComplexHermitian,
            }],
            scalars: Vec::new(),
            constraints: vec![Constraint {
                tag: ConstraintTag::Other("toy".to_string()),
                mats: vec![(0, HermMat::unit(3, 0))],
                lin: Vec::new(),
                rhs: 1.0,
                sense: Sense::Eq,
            }],
            objective: Objective::default(),
        };
        assert!(problem.validate().is_ok());

        problem.constraints[0].mats[0].0 = 1; // missing block
        assert!(problem.validate().is_err());
        problem.constraints[0].mats[0].0 = 0;

        problem.constraints[0].mats[0].1 = HermMat::unit(2, 0); // wrong side
        assert!(problem.validate().is_err());
        problem.constraints[0].mats[0].1 = HermMat::unit(3, 0);

        problem.constraints[0].lin.push((0, 1.0)); // missing scalar
        assert!(problem.validate().is_err());
        problem.constraints[0].lin.clear();

        problem.constraints[0].mats.clear(); // no terms at all
        assert!(problem.validate().is_err());
    }

    /// At an exact power-flow point, every equality of the assembled
    /// relaxation holds, every inequality's left side equals the physical
    /// quantity it bounds, and both objectives evaluate to their reported
    /// counterparts.
    #[test]
    fn relaxation_agrees_with_power_flow_points() {
        for seed in 0..10u64 {
            let mut net = random_network(seed, seed % 3 == 0);
            randomize_loads(&mut net, seed * 13 + 1);
            // Give the generator a genuine reactive range so the implied
            // dispatch at the probe point stays representable.
            if let Some(unit) = net.dg.first_mut() {
                unit.q_min = -2.0;
                unit.q_max = 2.0;
            }
            // Emit every kind of limit constraint with slack bounds.
            for line in net.lines.iter_mut() {
                line.i_max = Some(1e3);
                line.loss_cap = Some(1e3);
            }
            net.validate().unwrap();

            let idx = net.indexing();
            let mut rng = ChaCha8Rng::seed_from_u64(seed * 3 + 11);
            let v = perturbed_profile(&net, &idx, &mut rng);
            backfill_loads(&mut net, &v);
            let op = OperatingPoint::from_voltages(&net, &idx, v.clone());

            let rel = relax_opf(&net, &idx, &RelaxOptions::default()).unwrap();
            let w = reduce_vector(&rel.reduction, &v);
            let w_block = CMat::from_fn(w.len(), w.len(), |r, s| w[r] * w[s].conj());
            let blocks = vec![w_block];

            // Scalars take the dispatch implied by the probe point.
            let mut scalars = vec![0.0; rel.problem.scalars.len()];
            for (u, _) in net.dg.iter().enumerate() {
                for slot in 0..3 {
                    if let Some(i) = rel.pg[u][slot] {
                        scalars[i] = op.dg_p[u][slot];
                    }
                    if let Some(i) = rel.qg[u][slot] {
                        scalars[i] = op.dg_q[u][slot];
                    }
                }
            }

            // Physical values per inequality tag.
            let mags: Vec<f64> = (0..idx.total()).map(|k| v[k].norm_sqr()).collect();
            let mut series: Vec<Vec<f64>> = Vec::new();
            let mut flows: Vec<(f64, f64)> = Vec::new();
            for line in &net.lines {
                let fp = net.bus(line.from).unwrap().phases;
                let tp = net.bus(line.to).unwrap().phases;
                let vf = CVec::from_iterator(fp.len(), idx.bus_span(line.from).map(|k| v[k]));
                let vt = CVec::from_iterator(tp.len(), idx.bus_span(line.to).map(|k| v[k]));
                let ys = series_admittance(&line.z).unwrap();
                let i_series = &ys
                    * (select_phases(&vf, fp, line.phases)
                        - select_phases(&vt, tp, line.phases));
                series.push(i_series.iter().map(|i| i.norm_sqr()).collect());
                flows.push(line_flows(&net, &idx, line, &v));
            }

            for con in &rel.problem.constraints {
                let lhs = con.lhs(&blocks, &scalars);
                match con.sense {
                    Sense::Eq => {
                        assert!(
                            (lhs - con.rhs).abs() < 1e-9 * (1.0 + con.rhs.abs()),
                            "equality '{}' violated at power-flow point (seed {seed}): \
                             lhs {lhs}, rhs {}",
                            con.tag,
                            con.rhs
                        );
                    }
                    Sense::Le => {
                        let expected = match &con.tag {
                            ConstraintTag::VoltageFloor { bus, phase } => {
                                -mags[idx.index_of(*bus, *phase)]
                            }
                            ConstraintTag::VoltageCeiling { bus, phase } => {
                                mags[idx.index_of(*bus, *phase)]
                            }
                            ConstraintTag::Ampacity { line, conductor } => {
                                series[*line][*conductor]
                            }
                            ConstraintTag::LossCap { line } => {
                                flows[*line].0 + flows[*line].1
                            }
                            ConstraintTag::DgActiveMin { unit, phase } => {
                                -op.dg_p[*unit][phase.index()]
                            }
                            ConstraintTag::DgActiveMax { unit, phase } => {
                                op.dg_p[*unit][phase.index()]
                            }
                            ConstraintTag::DgReactiveMin { unit, phase } => {
                                -op.dg_q[*unit][phase.index()]
                            }
                            ConstraintTag::DgReactiveMax { unit, phase } => {
                                op.dg_q[*unit][phase.index()]
                            }
                            other => panic!("unexpected inequality tag {other}"),
                        };
                        assert!(
                            (lhs - expected).abs() < 1e-9 * (1.0 + expected.abs()),
                            "inequality '{}' drifted from its physical value \
                             (seed {seed}): lhs {lhs}, expected {expected}",
                            con.tag
                        );
                    }
                }
            }

            // Both objectives reproduce the reported quantities.
            let to_mw = net.base.s_va / 1e6;
            let c0 = net.c0.unwrap();
            let (dispatch_p, _) = rel.dispatch(&scalars);
            let priced: f64 = net
                .dg
                .iter()
                .zip(&dispatch_p)
                .map(|(u, p)| u.cost * p.iter().sum::<f64>())
                .sum();
            let expected_cost = (c0 * op.p0 + priced) * to_mw;
            let cost = rel.problem.objective.value(&blocks, &scalars);
            assert!(
                (cost - expected_cost).abs() < 1e-9 * (1.0 + expected_cost.abs()),
                "cost objective mismatch (seed {seed}): {cost} vs {expected_cost}"
            );

            let loss_rel = relax_opf(
                &net,
                &idx,
                &RelaxOptions {
                    objective: ObjectiveKind::Loss,
                    ..Default::default()
                },
            )
            .unwrap();
            let loss = loss_rel.problem.objective.value(&blocks, &scalars);
            assert!(
                (loss - op.p_loss).abs() < 1e-9 * (1.0 + op.p_loss.abs()),
                "loss objective mismatch (seed {seed}): {loss} vs {}",
                op.p_loss
            );
        }
    }
}
