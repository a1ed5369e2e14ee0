//! Dense primal-dual interior-point solver for the conic problems
//! assembled by the relaxation layer.
//!
//! The solver handles problems of the form
//!
//! ```text
//! minimize    sum_b <C_b, X_b>  +  f' v
//! subject to  sum_b <A_ib, X_b> +  E_i v  (= | <=)  b_i,   i = 1..m
//!             X_b  positive semidefinite,   v free
//! ```
//!
//! Complex Hermitian blocks are embedded into real symmetric blocks of
//! twice the side (`[[Re, -Im], [Im, Re]]`), which preserves semidefinite
//! feasibility exactly; inequality rows receive nonnegative slacks. The
//! resulting standard-form problem is solved with a homogeneous self-dual
//! embedding, so infeasibility is detected through Farkas certificates
//! instead of divergence. Search directions use Nesterov-Todd scaling with
//! a Mehrotra predictor-corrector step, and the Schur complement is formed
//! as a Gram matrix of the scaled constraint matrices, which turns the
//! dominant cost into one dense matrix product per iteration.
//!
//! Every run records an iteration log (residuals, gap, step sizes) that
//! downstream tools export as CSV. The algorithm is fully deterministic:
//! identical problems produce identical iterates.

use nalgebra::{Cholesky, SymmetricEigen, SVD};

use crate::sdpcore::{BlockKind, Sense, SdpError, SdpProblem};
use crate::{C64, CMat, RMat, RVec};

/// Solver parameters.
#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Iteration cap.
    pub max_iters: usize,
    /// Relative tolerance on primal/dual residuals and duality gap.
    pub tol: f64,
    /// Relative tolerance on infeasibility certificates.
    pub infeas_tol: f64,
    /// Fraction of the distance to the cone boundary taken per step.
    pub step_fraction: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iters: 120,
            tol: 1e-8,
            infeas_tol: 1e-9,
            step_fraction: 0.99,
        }
    }
}

/// How a solve ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    /// Converged to the requested tolerance.
    Optimal,
    /// The constraints admit no point in the cone; `y` holds a Farkas
    /// certificate (`b'y = 1`, `A'y` in the dual cone's negative).
    PrimalInfeasible,
    /// The objective is unbounded below; the blocks and scalars hold a
    /// ray (`A x = 0`, `x` in the cone, objective `-1`).
    DualInfeasible,
    /// Ran out of iterations before reaching the tolerance.
    IterationLimit,
    /// Numerical breakdown (singular scaling or vanishing steps).
    NumericalTrouble,
}

/// One row of the iteration log.
#[derive(Debug, Clone)]
pub struct IterationRow {
    /// Iteration number, starting at 1.
    pub iter: usize,
    /// Complementarity measure.
    pub mu: f64,
    /// Relative primal residual.
    pub primal_res: f64,
    /// Relative dual residual.
    pub dual_res: f64,
    /// Relative duality gap.
    pub gap: f64,
    /// Combined step length taken.
    pub step: f64,
    /// Homogenization variables.
    pub tau: f64,
    /// See `tau`.
    pub kappa: f64,
}

/// Result of a solve.
#[derive(Debug, Clone)]
pub struct Solution {
    /// Termination status.
    pub status: SolveStatus,
    /// Primal matrix blocks in their original field: complex Hermitian
    /// blocks are extracted from their real embedding, real blocks carry a
    /// zero imaginary part. For `DualInfeasible` these hold the ray.
    pub blocks: Vec<CMat>,
    /// Free scalar values (the ray for `DualInfeasible`).
    pub scalars: Vec<f64>,
    /// Constraint multipliers (the Farkas certificate for
    /// `PrimalInfeasible`).
    pub y: Vec<f64>,
    /// Primal objective including the problem's constant term
    /// (`NaN` when no optimal point was produced).
    pub primal_objective: f64,
    /// Dual objective including the constant term.
    pub dual_objective: f64,
    /// Iterations performed.
    pub iterations: usize,
    /// Per-iteration progress log.
    pub log: Vec<IterationRow>,
}

// ---------------------------------------------------------------------------
// Embedded standard form
// ---------------------------------------------------------------------------

/// Sparse symmetric coefficient: upper-triangular `(row, col, value)`
/// entries; off-diagonal entries imply their mirror.
type SparseSym = Vec<(usize, usize, f64)>;

struct RowData {
    /// Per-block coefficients, aligned with `Embedded::dims`.
    mats: Vec<(usize, SparseSym)>,
    /// Free-variable coefficients.
    free: Vec<(usize, f64)>,
    /// Slack index for inequality rows.
    slack: Option<usize>,
    rhs: f64,
}

struct Embedded {
    /// Real side lengths of the embedded blocks.
    dims: Vec<usize>,
    /// Original kinds and sides, for extraction.
    kinds: Vec<BlockKind>,
    orig_dims: Vec<usize>,
    rows: Vec<RowData>,
    /// Objective in the same sparse shape (rhs unused).
    obj: RowData,
    n_free: usize,
    n_slack: usize,
    /// Row equilibration factors (original row / factor = embedded row).
    row_scale: Vec<f64>,
    /// Objective normalization factor.
    cost_scale: f64,
    constant: f64,
}

/// Converts a Hermitian coefficient on a complex block into the sparse
/// symmetric coefficient on its real embedding, scaled so that the real
/// pairing equals the complex trace pairing.
fn embed_hermitian(m: &crate::sdpcore::HermMat, n: usize) -> SparseSym {
    let mut out = SparseSym::new();
    for (r, c, v) in m.entries() {
        if r == c {
            out.push((r, r, 0.5 * v.re));
            out.push((r + n, r + n, 0.5 * v.re));
        } else {
            if v.re != 0.0 {
                out.push((r, c, 0.5 * v.re));
                out.push((r + n, c + n, 0.5 * v.re));
            }
            if v.im != 0.0 {
                out.push((r, c + n, -0.5 * v.im));
                out.push((c, r + n, 0.5 * v.im));
            }
        }
    }
    out
}

fn real_coefficient(m: &crate::sdpcore::HermMat) -> SparseSym {
    let mut out = SparseSym::new();
    for (r, c, v) in m.entries() {
        debug_assert!(
            v.im.abs() <= 1e-12 * (1.0 + v.re.abs()),
            "real-symmetric block carries a complex coefficient"
        );
        if v.re != 0.0 {
            out.push((r, c, v.re));
        }
    }
    out
}

fn sparse_norm_sq(m: &SparseSym) -> f64 {
    m.iter()
        .map(|&(r, c, v)| if r == c { v * v } else { 2.0 * v * v })
        .sum()
}

/// Sparse-dense trace pairing (off-diagonal entries counted twice).
fn sparse_dot(m: &SparseSym, x: &RMat) -> f64 {
    m.iter()
        .map(|&(r, c, v)| {
            if r == c {
                v * x[(r, r)]
            } else {
                2.0 * v * x[(r, c)]
            }
        })
        .sum()
}

fn embed(problem: &SdpProblem) -> Result<Embedded, SdpError> {
    problem.validate()?;
    if problem.constraints.is_empty() {
        return Err(SdpError::Inconsistent(
            "the solver needs at least one constraint".to_string(),
        ));
    }
    let dims: Vec<usize> = problem
        .blocks
        .iter()
        .map(|b| match b.kind {
            BlockKind::ComplexHermitian => 2 * b.dim,
            BlockKind::RealSymmetric => b.dim,
        })
        .collect();
    let kinds: Vec<BlockKind> = problem.blocks.iter().map(|b| b.kind).collect();
    let orig_dims: Vec<usize> = problem.blocks.iter().map(|b| b.dim).collect();

    let convert = |mats: &[(usize, crate::sdpcore::HermMat)]| -> Vec<(usize, SparseSym)> {
        mats.iter()
            .map(|(b, m)| {
                let sp = match kinds[*b] {
                    BlockKind::ComplexHermitian => embed_hermitian(m, m.dim()),
                    BlockKind::RealSymmetric => real_coefficient(m),
                };
                (*b, sp)
            })
            .collect()
    };

    let mut n_slack = 0usize;
    let mut rows = Vec::with_capacity(problem.constraints.len());
    let mut row_scale = Vec::with_capacity(problem.constraints.len());
    for con in &problem.constraints {
        let mut mats = convert(&con.mats);
        let mut free: Vec<(usize, f64)> = con.lin.clone();
        let norm_sq: f64 = mats.iter().map(|(_, m)| sparse_norm_sq(m)).sum::<f64>()
            + free.iter().map(|&(_, w)| w * w).sum::<f64>();
        let scale = norm_sq.sqrt().max(1e-8);
        for (_, m) in mats.iter_mut() {
            for e in m.iter_mut() {
                e.2 /= scale;
            }
        }
        for e in free.iter_mut() {
            e.1 /= scale;
        }
        let slack = match con.sense {
            Sense::Eq => None,
            Sense::Le => {
                n_slack += 1;
                Some(n_slack - 1)
            }
        };
        rows.push(RowData {
            mats,
            free,
            slack,
            rhs: con.rhs / scale,
        });
        row_scale.push(scale);
    }

    let mut obj_mats = convert(&problem.objective.mats);
    let mut obj_free = problem.objective.lin.clone();
    let obj_norm_sq: f64 = obj_mats.iter().map(|(_, m)| sparse_norm_sq(m)).sum::<f64>()
        + obj_free.iter().map(|&(_, w)| w * w).sum::<f64>();
    let cost_scale = obj_norm_sq.sqrt().max(1.0);
    for (_, m) in obj_mats.iter_mut() {
        for e in m.iter_mut() {
            e.2 /= cost_scale;
        }
    }
    for e in obj_free.iter_mut() {
        e.1 /= cost_scale;
    }

    Ok(Embedded {
        dims,
        kinds,
        orig_dims,
        rows,
        obj: RowData {
            mats: obj_mats,
            free: obj_free,
            slack: None,
            rhs: 0.0,
        },
        n_free: problem.scalars.len(),
        n_slack,
        row_scale,
        cost_scale,
        constant: problem.objective.constant,
    })
}

// ---------------------------------------------------------------------------
// Cone points and Nesterov-Todd scaling
// ---------------------------------------------------------------------------

/// A point in the cone part of the embedded space: matrix blocks plus
/// nonnegative slacks.
#[derive(Clone)]
struct Point {
    mats: Vec<RMat>,
    slacks: RVec,
}

impl Point {
    fn identity(dims: &[usize], n_slack: usize) -> Point {
        Point {
            mats: dims.iter().map(|&n| RMat::identity(n, n)).collect(),
            slacks: RVec::from_element(n_slack, 1.0),
        }
    }

    fn zeros(dims: &[usize], n_slack: usize) -> Point {
        Point {
            mats: dims.iter().map(|&n| RMat::zeros(n, n)).collect(),
            slacks: RVec::zeros(n_slack),
        }
    }

    fn inner(&self, other: &Point) -> f64 {
        let m: f64 = self
            .mats
            .iter()
            .zip(&other.mats)
            .map(|(a, b)| a.dot(b))
            .sum();
        m + self.slacks.dot(&other.slacks)
    }

    fn axpy(&mut self, alpha: f64, other: &Point) {
        for (a, b) in self.mats.iter_mut().zip(&other.mats) {
            *a += b * alpha;
        }
        self.slacks.axpy(alpha, &other.slacks, 1.0);
    }

    fn norm(&self) -> f64 {
        self.inner(self).sqrt()
    }
}

/// Nesterov-Todd scaling for one matrix block: a factor `R` with
/// `x = R L R'` and `z = R^-T L R^-1` for the same positive diagonal `L`.
struct BlockScaling {
    r: RMat,
    r_inv: RMat,
    lambda: RVec,
}

impl BlockScaling {
    /// Builds the scaling from a strictly feasible pair `(x, z)`.
    fn new(x: &RMat, z: &RMat) -> Option<BlockScaling> {
        let lx = Cholesky::new(x.clone())?;
        let lz = Cholesky::new(z.clone())?;
        // L_z' L_x = U S V'; then R = L_x V S^-1/2 satisfies both
        // factorizations with L = S.
        let m = lz.l().transpose() * lx.l();
        let svd = SVD::new(m, true, true);
        let u = svd.u.as_ref()?;
        let vt = svd.v_t.as_ref()?;
        let lambda = svd.singular_values.clone();
        if lambda.iter().any(|&s| s <= 0.0 || !s.is_finite()) {
            return None;
        }
        let n = x.nrows();
        let mut r = lx.l() * vt.transpose();
        let mut r_inv_t = lz.l() * u;
        for c in 0..n {
            let s = lambda[c].sqrt();
            for rr in 0..n {
                r[(rr, c)] /= s;
                r_inv_t[(rr, c)] /= s;
            }
        }
        Some(BlockScaling {
            r,
            r_inv: r_inv_t.transpose(),
            lambda,
        })
    }

    /// `H(z) = W z W` with `W = R R'`.
    fn apply_h(&self, z: &RMat) -> RMat {
        let inner = self.r.transpose() * z * &self.r;
        &self.r * inner * self.r.transpose()
    }

    /// Scaled image of a primal direction: `R^-1 dx R^-T`.
    fn scale_x(&self, dx: &RMat) -> RMat {
        &self.r_inv * dx * self.r_inv.transpose()
    }

    /// Scaled image of a dual direction: `R' dz R`.
    fn scale_z(&self, dz: &RMat) -> RMat {
        self.r.transpose() * dz * &self.r
    }

    /// Solves the scaled complementarity equation `L_lambda(u) = rhs` and
    /// maps back: returns `R u R'` where `u_pq = 2 rhs_pq / (l_p + l_q)`.
    fn unscale_centering(&self, rhs: &RMat) -> RMat {
        let n = rhs.nrows();
        let mut u = RMat::zeros(n, n);
        for p in 0..n {
            for q in 0..n {
                u[(p, q)] = 2.0 * rhs[(p, q)] / (self.lambda[p] + self.lambda[q]);
            }
        }
        &self.r * u * self.r.transpose()
    }
}

/// Largest step `a` keeping `lambda + a * d_scaled` positive semidefinite,
/// where `lambda` is the diagonal scaling spectrum: the minimum eigenvalue
/// of `L^-1/2 d L^-1/2` decides it.
fn max_step_scaled(lambda: &RVec, d_scaled: &RMat) -> f64 {
    let n = d_scaled.nrows();
    if n == 0 {
        return f64::INFINITY;
    }
    let mut m = RMat::zeros(n, n);
    for p in 0..n {
        for q in 0..n {
            m[(p, q)] = d_scaled[(p, q)] / (lambda[p].sqrt() * lambda[q].sqrt());
        }
    }
    // Symmetrize against round-off before the eigensolve.
    let m = (&m + &m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(m);
    let min = eig.eigenvalues.min();
    if min >= 0.0 {
        f64::INFINITY
    } else {
        1.0 / (-min)
    }
}

fn max_step_scalars(x: &RVec, dx: &RVec) -> f64 {
    let mut a = f64::INFINITY;
    for i in 0..x.len() {
        if dx[i] < 0.0 {
            a = a.min(-x[i] / dx[i]);
        }
    }
    a
}

// ---------------------------------------------------------------------------
// Packed symmetric vectorization
// ---------------------------------------------------------------------------

fn svec_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Packs the upper triangle of `m` column-wise into column `col` of `t`,
/// scaling off-diagonals by `sqrt(2)` so packed dot products equal trace
/// pairings. Only the upper triangle of `m` is read.
fn svec_upper_into_col(m: &RMat, t: &mut RMat, col: usize) {
    let n = m.nrows();
    let rt2 = std::f64::consts::SQRT_2;
    let mut k = 0;
    for q in 0..n {
        for p in 0..q {
            t[(k, col)] = m[(p, q)] * rt2;
            k += 1;
        }
        t[(k, col)] = m[(q, q)];
        k += 1;
    }
    debug_assert_eq!(k, svec_len(n));
}

// ---------------------------------------------------------------------------
// The solver
// ---------------------------------------------------------------------------

struct Residuals {
    rp: RVec,
    rd: Point,
    rd_free: RVec,
    rg: f64,
}

struct Workspace<'a> {
    emb: &'a Embedded,
    m: usize,
    nu: f64,
    b: RVec,
    c_free: RVec,
    b_norm: f64,
    c_norm: f64,
}

impl<'a> Workspace<'a> {
    fn new(emb: &'a Embedded) -> Workspace<'a> {
        let m = emb.rows.len();
        let b = RVec::from_iterator(m, emb.rows.iter().map(|r| r.rhs));
        let mut c_free = RVec::zeros(emb.n_free);
        for &(i, w) in &emb.obj.free {
            c_free[i] += w;
        }
        let deg: usize = emb.dims.iter().sum::<usize>() + emb.n_slack;
        let c_norm_sq: f64 = emb
            .obj
            .mats
            .iter()
            .map(|(_, m)| sparse_norm_sq(m))
            .sum::<f64>()
            + c_free.norm_squared();
        Workspace {
            emb,
            m,
            nu: (deg + 1) as f64,
            b_norm: b.norm(),
            c_norm: c_norm_sq.sqrt(),
            b,
            c_free,
        }
    }

    /// `A x-bar` over all rows (cone blocks, slacks, free part).
    fn apply_a(&self, x: &Point, v: &RVec) -> RVec {
        let mut out = RVec::zeros(self.m);
        for (i, row) in self.emb.rows.iter().enumerate() {
            let mut acc = 0.0;
            for (b, sp) in &row.mats {
                acc += sparse_dot(sp, &x.mats[*b]);
            }
            for &(j, w) in &row.free {
                acc += w * v[j];
            }
            if let Some(s) = row.slack {
                acc += x.slacks[s];
            }
            out[i] = acc;
        }
        out
    }

    /// `A' y` assembled into dense cone blocks, slack part, and free part.
    fn apply_at(&self, y: &RVec) -> (Point, RVec) {
        let mut out = Point::zeros(&self.emb.dims, self.emb.n_slack);
        let mut free = RVec::zeros(self.emb.n_free);
        for (i, row) in self.emb.rows.iter().enumerate() {
            let w = y[i];
            if w == 0.0 {
                continue;
            }
            for (b, sp) in &row.mats {
                let mat = &mut out.mats[*b];
                for &(r, c, v) in sp {
                    mat[(r, c)] += v * w;
                    if r != c {
                        mat[(c, r)] += v * w;
                    }
                }
            }
            for &(j, fw) in &row.free {
                free[j] += fw * w;
            }
            if let Some(s) = row.slack {
                out.slacks[s] += w;
            }
        }
        (out, free)
    }

    /// The objective coefficient as a dense cone point plus free part.
    fn cost_point(&self) -> Point {
        let mut out = Point::zeros(&self.emb.dims, self.emb.n_slack);
        for (b, sp) in &self.emb.obj.mats {
            let mat = &mut out.mats[*b];
            for &(r, c, v) in sp {
                mat[(r, c)] += v;
                if r != c {
                    mat[(c, r)] += v;
                }
            }
        }
        out
    }

    fn cost_dot(&self, x: &Point, v: &RVec) -> f64 {
        let mats: f64 = self
            .emb
            .obj
            .mats
            .iter()
            .map(|(b, sp)| sparse_dot(sp, &x.mats[*b]))
            .sum();
        mats + self.c_free.dot(v)
    }
}

/// Factorized saddle system `[[M, E], [E', 0]]` where `M` is the Schur
/// complement over the cone and `E` the free-variable columns.
struct SaddleSolver {
    chol_m: Cholesky<f64, nalgebra::Dyn>,
    e: RMat,
    m_inv_e: RMat,
    chol_f: Option<Cholesky<f64, nalgebra::Dyn>>,
}

impl SaddleSolver {
    fn new(mut m: RMat, e: RMat) -> Option<SaddleSolver> {
        // Dynamic regularization: retry with growing diagonal shifts.
        let n = m.nrows();
        let base = (m.trace() / n.max(1) as f64).abs().max(1.0);
        let mut reg = 1e-14 * base;
        let chol_m = loop {
            match Cholesky::new(m.clone()) {
                Some(c) => break c,
                None => {
                    if reg > 1e-4 * base {
                        return None;
                    }
                    for i in 0..n {
                        m[(i, i)] += reg;
                    }
                    reg *= 100.0;
                }
            }
        };
        let nf = e.ncols();
        let m_inv_e = if nf > 0 {
            let mut t = e.clone();
            chol_m.solve_mut(&mut t);
            t
        } else {
            RMat::zeros(n, 0)
        };
        let chol_f = if nf > 0 {
            let f = e.transpose() * &m_inv_e;
            // The free columns are linearly independent in any
            // well-posed model; regularize lightly if needed.
            let mut f = (&f + &f.transpose()) * 0.5;
            let fbase = (f.trace() / nf as f64).abs().max(1e-12);
            let mut freg = 1e-14 * fbase;
            Some(loop {
                match Cholesky::new(f.clone()) {
                    Some(c) => break c,
                    None => {
                        if freg > 1e-4 * fbase {
                            return None;
                        }
                        for i in 0..nf {
                            f[(i, i)] += freg;
                        }
                        freg *= 100.0;
                    }
                }
            })
        } else {
            None
        };
        Some(SaddleSolver {
            chol_m,
            e,
            m_inv_e,
            chol_f,
        })
    }

    /// Solves `M dy + E dv = r_y`, `E' dy = r_v`.
    fn solve(&self, r_y: &RVec, r_v: &RVec) -> (RVec, RVec) {
        let mut t1 = r_y.clone();
        self.chol_m.solve_mut(&mut t1);
        match &self.chol_f {
            Some(chol_f) => {
                let mut rhs = self.e.transpose() * &t1 - r_v;
                chol_f.solve_mut(&mut rhs);
                let dv = rhs;
                let dy = t1 - &self.m_inv_e * &dv;
                (dy, dv)
            }
            None => (t1, RVec::zeros(0)),
        }
    }
}

/// Solves an assembled conic problem.
pub fn solve(problem: &SdpProblem, opts: &SolverOptions) -> Result<Solution, SdpError> {
    let emb = embed(problem)?;
    let ws = Workspace::new(&emb);
    let m = ws.m;
    let nb = emb.dims.len();

    // Free-variable column matrix.
    let mut e_mat = RMat::zeros(m, emb.n_free);
    for (i, row) in emb.rows.iter().enumerate() {
        for &(j, w) in &row.free {
            e_mat[(i, j)] += w;
        }
    }

    // Starting point: identity blocks, unit slacks, zero multipliers.
    let mut x = Point::identity(&emb.dims, emb.n_slack);
    let mut z = Point::identity(&emb.dims, emb.n_slack);
    let mut v = RVec::zeros(emb.n_free);
    let mut y = RVec::zeros(m);
    let mut tau = 1.0f64;
    let mut kappa = 1.0f64;

    let c_point = ws.cost_point();
    let mut log: Vec<IterationRow> = Vec::new();
    let mut status = SolveStatus::IterationLimit;
    let mut iters_done = 0usize;

    for iter in 1..=opts.max_iters {
        // Residuals of the homogeneous model.
        let ax = ws.apply_a(&x, &v);
        let (aty, aty_free) = ws.apply_at(&y);
        let cx = ws.cost_dot(&x, &v);
        let by = ws.b.dot(&y);

        let rp = &ax - &ws.b * tau;
        let mut rd = c_point.clone();
        for (i, mat) in rd.mats.iter_mut().enumerate() {
            *mat = &*mat * tau - &aty.mats[i] - &z.mats[i];
        }
        rd.slacks = -&aty.slacks - &z.slacks;
        let rd_free = &ws.c_free * tau - &aty_free;
        let rg = kappa + cx - by;
        let res = Residuals {
            rp,
            rd,
            rd_free,
            rg,
        };

        let mu = (x.inner(&z) + tau * kappa) / ws.nu;

        // Convergence measured on the de-homogenized point.
        let pres = res.rp.norm() / tau / (1.0 + ws.b_norm);
        let dres = (res.rd.norm().hypot(res.rd_free.norm())) / tau / (1.0 + ws.c_norm);
        let pobj = cx / tau;
        let dobj = by / tau;
        let gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());

        if pres < opts.tol && dres < opts.tol && gap < opts.tol {
            status = SolveStatus::Optimal;
            iters_done = iter - 1;
            log.push(IterationRow {
                iter,
                mu,
                primal_res: pres,
                dual_res: dres,
                gap,
                step: 0.0,
                tau,
                kappa,
            });
            break;
        }

        // Farkas certificates: `b'y > 0` with `A'y + z` vanishing proves
        // primal infeasibility; a cone ray with negative cost and `A x`
        // vanishing proves an unbounded objective.
        if by > 0.0 {
            let mut s = 0.0f64;
            for (i, mat) in aty.mats.iter().enumerate() {
                s += (mat + &z.mats[i]).norm_squared();
            }
            s += (&aty.slacks + &z.slacks).norm_squared();
            s += aty_free.norm_squared();
            if s.sqrt() / by < opts.infeas_tol {
                status = SolveStatus::PrimalInfeasible;
                iters_done = iter - 1;
                break;
            }
        }
        if cx < 0.0 && ax.norm() / (-cx) < opts.infeas_tol {
            status = SolveStatus::DualInfeasible;
            iters_done = iter - 1;
            break;
        }

        // Nesterov-Todd scalings.
        let mut scalings = Vec::with_capacity(nb);
        let mut scaling_ok = true;
        for bidx in 0..nb {
            match BlockScaling::new(&x.mats[bidx], &z.mats[bidx]) {
                Some(s) => scalings.push(s),
                None => {
                    scaling_ok = false;
                    break;
                }
            }
        }
        if !scaling_ok {
            status = SolveStatus::NumericalTrouble;
            iters_done = iter - 1;
            break;
        }
        let slack_h: RVec = RVec::from_iterator(
            emb.n_slack,
            (0..emb.n_slack).map(|i| x.slacks[i] / z.slacks[i]),
        );

        // Schur complement M = sum_b T_b' T_b + slack diagonal, with
        // T_b rows = svec(R' A_i R).
        let mut m_mat = RMat::zeros(m, m);
        for (bidx, scaling) in scalings.iter().enumerate() {
            let n = emb.dims[bidx];
            let sd = svec_len(n);
            // Rows of R as contiguous columns of its transpose.
            let rt = scaling.r.transpose();
            let mut t = RMat::zeros(sd, m);
            let mut scratch = RMat::zeros(n, n);
            for (i, row) in emb.rows.iter().enumerate() {
                let Some((_, sp)) = row.mats.iter().find(|(b, _)| *b == bidx) else {
                    continue;
                };
                scratch.fill(0.0);
                for &(rr, cc, vv) in sp {
                    // v * (R[rr,:]' R[cc,:] + R[cc,:]' R[rr,:]), upper part.
                    let col_r = rt.column(rr);
                    let col_c = rt.column(cc);
                    if rr == cc {
                        for q in 0..n {
                            let w = vv * col_r[q];
                            for p in 0..=q {
                                scratch[(p, q)] += col_r[p] * w;
                            }
                        }
                    } else {
                        for q in 0..n {
                            let wc = vv * col_c[q];
                            let wr = vv * col_r[q];
                            for p in 0..=q {
                                scratch[(p, q)] += col_r[p] * wc + col_c[p] * wr;
                            }
                        }
                    }
                }
                svec_upper_into_col(&scratch, &mut t, i);
            }
            m_mat += t.tr_mul(&t);
        }
        for (i, row) in emb.rows.iter().enumerate() {
            if let Some(s) = row.slack {
                m_mat[(i, i)] += slack_h[s];
            }
        }
        let Some(saddle) = SaddleSolver::new(m_mat, e_mat.clone()) else {
            status = SolveStatus::NumericalTrouble;
            iters_done = iter - 1;
            break;
        };

        // H c and the constant pieces of the tau elimination.
        let mut hc = Point::zeros(&emb.dims, emb.n_slack);
        for ((mat, scaling), c_mat) in hc.mats.iter_mut().zip(&scalings).zip(&c_point.mats) {
            *mat = scaling.apply_h(c_mat);
        }
        for s in 0..emb.n_slack {
            hc.slacks[s] = slack_h[s] * c_point.slacks[s];
        }
        let a_hc = ws.apply_a(&hc, &RVec::zeros(emb.n_free));
        let rhs_t_y = &ws.b + &a_hc;
        let (dy_t, dv_t) = saddle.solve(&rhs_t_y, &ws.c_free);
        let c_h_c = c_point.inner(&hc);

        // One Newton solve for a given complementarity correction and
        // residual weight.
        let newton = |x_c: &Point,
                      rctau: f64,
                      eta: f64,
                      saddle: &SaddleSolver|
         -> (RVec, RVec, Point, Point, f64, f64) {
            // H rd (cone part only).
            let mut h_rd = Point::zeros(&emb.dims, emb.n_slack);
            for ((mat, scaling), rd_mat) in
                h_rd.mats.iter_mut().zip(&scalings).zip(&res.rd.mats)
            {
                *mat = scaling.apply_h(&(rd_mat * eta));
            }
            for s in 0..emb.n_slack {
                h_rd.slacks[s] = slack_h[s] * res.rd.slacks[s] * eta;
            }
            let mut xc_plus = x_c.clone();
            xc_plus.axpy(-1.0, &h_rd);
            let a_term = ws.apply_a(&xc_plus, &RVec::zeros(emb.n_free));
            let rhs_y = -(&res.rp * eta) - a_term;
            let rhs_v = &res.rd_free * eta;
            let (dy_r, dv_r) = saddle.solve(&rhs_y, &rhs_v);

            // tau step from the gap equation.
            let c_dot_xcr = c_point.inner(&xc_plus);
            let a_hc_dy_r = a_hc.dot(&dy_r);
            let a_hc_dy_t = a_hc.dot(&dy_t);
            let k_const = -eta * res.rg - c_dot_xcr + ws.b.dot(&dy_r) - a_hc_dy_r
                - ws.c_free.dot(&dv_r);
            let k_lin =
                ws.b.dot(&dy_t) - a_hc_dy_t + c_h_c - ws.c_free.dot(&dv_t);
            let denom = kappa + tau * k_lin;
            let dtau = if denom.abs() > 1e-14 {
                (rctau - tau * k_const) / denom
            } else {
                0.0
            };
            let dkappa = k_const + dtau * k_lin;

            let dy = &dy_r + &dy_t * dtau;
            let dv = if emb.n_free > 0 {
                &dv_r + &dv_t * dtau
            } else {
                dv_r
            };

            // dz = eta rd - A' dy + c dtau ; dx = x_c - H dz.
            let (at_dy, _) = ws.apply_at(&dy);
            let mut dz = Point::zeros(&emb.dims, emb.n_slack);
            for (bidx, mat) in dz.mats.iter_mut().enumerate() {
                *mat = &res.rd.mats[bidx] * eta - &at_dy.mats[bidx]
                    + &c_point.mats[bidx] * dtau;
            }
            dz.slacks = &res.rd.slacks * eta - &at_dy.slacks + &c_point.slacks * dtau;
            let mut dx = x_c.clone();
            for ((mat, scaling), dz_mat) in
                dx.mats.iter_mut().zip(&scalings).zip(&dz.mats)
            {
                *mat -= scaling.apply_h(dz_mat);
            }
            for s in 0..emb.n_slack {
                dx.slacks[s] -= slack_h[s] * dz.slacks[s];
            }
            (dy, dv, dx, dz, dtau, dkappa)
        };

        // Step length over all cone parts.
        let step_len = |dx: &Point, dz: &Point, dtau: f64, dkappa: f64| -> f64 {
            let mut a = f64::INFINITY;
            for ((scaling, dx_mat), dz_mat) in
                scalings.iter().zip(&dx.mats).zip(&dz.mats)
            {
                let dxs = scaling.scale_x(dx_mat);
                a = a.min(max_step_scaled(&scaling.lambda, &dxs));
                let dzs = scaling.scale_z(dz_mat);
                a = a.min(max_step_scaled(&scaling.lambda, &dzs));
            }
            a = a.min(max_step_scalars(&x.slacks, &dx.slacks));
            a = a.min(max_step_scalars(&z.slacks, &dz.slacks));
            if dtau < 0.0 {
                a = a.min(-tau / dtau);
            }
            if dkappa < 0.0 {
                a = a.min(-kappa / dkappa);
            }
            a
        };

        // Predictor: pure affine direction (x_c = -x, rctau = -tau kappa).
        let mut xc_aff = Point::zeros(&emb.dims, emb.n_slack);
        xc_aff.axpy(-1.0, &x);
        let (_, _, dx_a, dz_a, dtau_a, dkappa_a) =
            newton(&xc_aff, -tau * kappa, 1.0, &saddle);
        let alpha_aff = step_len(&dx_a, &dz_a, dtau_a, dkappa_a).min(1.0);

        // Centering weight from the affine progress.
        let mut x_try = x.clone();
        x_try.axpy(alpha_aff, &dx_a);
        let mut z_try = z.clone();
        z_try.axpy(alpha_aff, &dz_a);
        let mu_aff = (x_try.inner(&z_try)
            + (tau + alpha_aff * dtau_a) * (kappa + alpha_aff * dkappa_a))
            / ws.nu;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3).clamp(1e-8, 0.999);

        // Corrector: centering plus the Mehrotra second-order term.
        let mut xc_comb = Point::zeros(&emb.dims, emb.n_slack);
        for (bidx, sc) in scalings.iter().enumerate() {
            let dxs = sc.scale_x(&dx_a.mats[bidx]);
            let dzs = sc.scale_z(&dz_a.mats[bidx]);
            let cross = (&dxs * &dzs + &dzs * &dxs) * 0.5;
            let n = emb.dims[bidx];
            let mut rc = RMat::from_fn(n, n, |p, q| -cross[(p, q)]);
            for p in 0..n {
                rc[(p, p)] += sigma * mu - sc.lambda[p] * sc.lambda[p];
            }
            xc_comb.mats[bidx] = sc.unscale_centering(&rc);
        }
        for s in 0..emb.n_slack {
            let rc = sigma * mu - x.slacks[s] * z.slacks[s]
                - dx_a.slacks[s] * dz_a.slacks[s];
            xc_comb.slacks[s] = rc / z.slacks[s];
        }
        let rctau_comb = sigma * mu - tau * kappa - dtau_a * dkappa_a;
        let eta = 1.0 - sigma;
        let (dy_c, dv_c, dx_c, dz_c, dtau_c, dkappa_c) =
            newton(&xc_comb, rctau_comb, eta, &saddle);
        let alpha =
            (opts.step_fraction * step_len(&dx_c, &dz_c, dtau_c, dkappa_c)).min(1.0);

        if !alpha.is_finite() || alpha <= 1e-10 {
            status = SolveStatus::NumericalTrouble;
            iters_done = iter - 1;
            break;
        }

        x.axpy(alpha, &dx_c);
        z.axpy(alpha, &dz_c);
        y += &dy_c * alpha;
        if emb.n_free > 0 {
            v += &dv_c * alpha;
        }
        tau += alpha * dtau_c;
        kappa += alpha * dkappa_c;
        iters_done = iter;

        log.push(IterationRow {
            iter,
            mu,
            primal_res: pres,
            dual_res: dres,
            gap,
            step: alpha,
            tau,
            kappa,
        });
    }

    // Extraction.
    let extract_blocks = |x: &Point, scale: f64| -> Vec<CMat> {
        (0..nb)
            .map(|bidx| {
                let xr = &x.mats[bidx];
                match emb.kinds[bidx] {
                    BlockKind::RealSymmetric => {
                        let n = emb.orig_dims[bidx];
                        CMat::from_fn(n, n, |r, c| {
                            C64::new(0.5 * (xr[(r, c)] + xr[(c, r)]) * scale, 0.0)
                        })
                    }
                    BlockKind::ComplexHermitian => {
                        let n = emb.orig_dims[bidx];
                        let raw = CMat::from_fn(n, n, |r, c| {
                            C64::new(
                                0.5 * (xr[(r, c)] + xr[(r + n, c + n)]),
                                0.5 * (xr[(r + n, c)] - xr[(r, c + n)]),
                            )
                        });
                        (&raw + &raw.adjoint()) * C64::new(0.5 * scale, 0.0)
                    }
                }
            })
            .collect()
    };

    // Multipliers in the original row scaling.
    let unscale_y = |y: &RVec, scale: f64| -> Vec<f64> {
        (0..m)
            .map(|i| y[i] * scale * emb.cost_scale / emb.row_scale[i])
            .collect()
    };

    let cx = ws.cost_dot(&x, &v);
    let by = ws.b.dot(&y);
    let (blocks, scalars, y_out, pobj, dobj) = match status {
        SolveStatus::Optimal | SolveStatus::IterationLimit | SolveStatus::NumericalTrouble => {
            let inv_tau = 1.0 / tau;
            (
                extract_blocks(&x, inv_tau),
                (0..emb.n_free).map(|i| v[i] * inv_tau).collect::<Vec<f64>>(),
                unscale_y(&y, inv_tau),
                cx / tau * emb.cost_scale + emb.constant,
                by / tau * emb.cost_scale + emb.constant,
            )
        }
        SolveStatus::PrimalInfeasible => {
            let s = 1.0 / by;
            (
                extract_blocks(&x, 1.0),
                (0..emb.n_free).map(|i| v[i]).collect::<Vec<f64>>(),
                unscale_y(&y, s),
                f64::NAN,
                f64::NAN,
            )
        }
        SolveStatus::DualInfeasible => {
            let s = -1.0 / cx;
            (
                extract_blocks(&x, s),
                (0..emb.n_free).map(|i| v[i] * s).collect::<Vec<f64>>(),
                unscale_y(&y, 1.0),
                f64::NAN,
                f64::NAN,
            )
        }
    };

    Ok(Solution {
        status,
        blocks,
        scalars,
        y: y_out,
        primal_objective: pobj,
        dual_objective: dobj,
        iterations: iters_done,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::Indexing;
    use crate::sdpcore::{
        relax_opf, Block, Constraint, ConstraintTag, HermMat, Objective, ObjectiveKind,
        RelaxOptions, ScalarVar,
    };
    use crate::testutil::{path_network, randomize_loads};
    use crate::verify::{check_operating_point, CheckTolerances, OperatingPoint};

    fn real_block(name: &str, dim: usize) -> Block {
        Block {
            name: name.to_string(),
            dim,
            kind: BlockKind::RealSymmetric,
        }
    }

    fn complex_block(name: &str, dim: usize) -> Block {
        Block {
            name: name.to_string(),
            dim,
            kind: BlockKind::ComplexHermitian,
        }
    }

    fn diag(dim: usize, entries: &[f64]) -> HermMat {
        let mut m = HermMat::zeros(dim);
        for (k, &v) in entries.iter().enumerate() {
            m.add(k, k, C64::new(v, 0.0));
        }
        m
    }

    fn eq(mats: Vec<(usize, HermMat)>, rhs: f64) -> Constraint {
        Constraint {
            tag: ConstraintTag::Other("eq".to_string()),
            mats,
            lin: vec![],
            rhs,
            sense: Sense::Eq,
        }
    }

    fn le(mats: Vec<(usize, HermMat)>, lin: Vec<(usize, f64)>, rhs: f64) -> Constraint {
        Constraint {
            tag: ConstraintTag::Other("le".to_string()),
            mats,
            lin,
            rhs,
            sense: Sense::Le,
        }
    }

    #[test]
    fn real_embedding_preserves_trace_pairings() {
        // A Hermitian coefficient paired with a Hermitian point must give
        // the same number through the real embedding.
        let mut a = HermMat::zeros(3);
        a.add(0, 0, C64::new(1.5, 0.0));
        a.add(0, 1, C64::new(0.3, -0.7));
        a.add(1, 2, C64::new(-0.2, 0.4));
        a.add(2, 2, C64::new(-1.0, 0.0));
        let x = CMat::from_fn(3, 3, |r, c| C64::new(0.1 * (r + c) as f64, 0.0))
            + CMat::from_fn(3, 3, |r, c| {
                C64::new(0.0, 0.05 * (r as f64 - c as f64))
            });
        let sp = embed_hermitian(&a, 3);
        // Build the embedded point [[Re, -Im], [Im, Re]].
        let mut xt = RMat::zeros(6, 6);
        for r in 0..3 {
            for c in 0..3 {
                xt[(r, c)] = x[(r, c)].re;
                xt[(r + 3, c + 3)] = x[(r, c)].re;
                xt[(r + 3, c)] = x[(r, c)].im;
                xt[(r, c + 3)] = -x[(r, c)].im;
            }
        }
        let direct = a.trace_with(&x);
        let embedded = sparse_dot(&sp, &xt);
        assert!(
            (direct - embedded).abs() < 1e-12,
            "direct {direct} vs embedded {embedded}"
        );
    }

    #[test]
    fn minimizes_the_smallest_eigenvalue_weight() {
        // min <diag(1,2), X> s.t. tr X = 1, X psd: the optimum puts all
        // weight on the smaller diagonal entry, and the multiplier of the
        // trace constraint is the smallest eigenvalue.
        let problem = SdpProblem {
            blocks: vec![real_block("x", 2)],
            scalars: vec![],
            constraints: vec![eq(vec![(0, diag(2, &[1.0, 1.0]))], 1.0)],
            objective: Objective {
                mats: vec![(0, diag(2, &[1.0, 2.0]))],
                lin: vec![],
                constant: 0.0,
            },
        };
        let sol = solve(&problem, &SolverOptions::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.primal_objective - 1.0).abs() < 1e-6, "{}", sol.primal_objective);
        assert!((sol.dual_objective - 1.0).abs() < 1e-6);
        let x = &sol.blocks[0];
        assert!((x[(0, 0)].re - 1.0).abs() < 1e-5);
        assert!(x[(1, 1)].re.abs() < 1e-5);
        assert!((sol.y[0] - 1.0).abs() < 1e-5, "dual multiplier {}", sol.y[0]);
    }

    #[test]
    fn hermitian_objective_reaches_the_smallest_eigenvalue() {
        // min <A, X> over tr X = 1 equals the smallest eigenvalue of A;
        // for A = [[0, -i], [i, 0]] that is -1, attained at a genuinely
        // complex rank-one X.
        let mut a = HermMat::zeros(2);
        a.add(0, 1, C64::new(0.0, -1.0));
        let problem = SdpProblem {
            blocks: vec![complex_block("x", 2)],
            scalars: vec![],
            constraints: vec![eq(vec![(0, diag(2, &[1.0, 1.0]))], 1.0)],
            objective: Objective {
                mats: vec![(0, a)],
                lin: vec![],
                constant: 0.0,
            },
        };
        let sol = solve(&problem, &SolverOptions::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.primal_objective + 1.0).abs() < 1e-6, "{}", sol.primal_objective);
        let x = &sol.blocks[0];
        assert!((x[(0, 0)].re - 0.5).abs() < 1e-5);
        assert!((x[(1, 1)].re - 0.5).abs() < 1e-5);
        // Eigenvector (1, -i)/sqrt(2) gives X_01 = i/2.
        assert!((x[(0, 1)] - C64::new(0.0, 0.5)).norm() < 1e-5, "{}", x[(0, 1)]);
    }

    #[test]
    fn mixed_constraints_find_the_analytic_corner() {
        // min X_11 s.t. Re X_01 = 1/2 and X_00 <= 1: positive
        // semidefiniteness forces X_00 X_11 >= 1/4, so the optimum is
        // X_00 = 1, X_11 = 1/4.
        let mut offdiag = HermMat::zeros(2);
        offdiag.add(0, 1, C64::new(0.5, 0.0));
        let problem = SdpProblem {
            blocks: vec![real_block("x", 2)],
            scalars: vec![],
            constraints: vec![
                eq(vec![(0, offdiag)], 0.5),
                le(vec![(0, diag(2, &[1.0, 0.0]))], vec![], 1.0),
            ],
            objective: Objective {
                mats: vec![(0, diag(2, &[0.0, 1.0]))],
                lin: vec![],
                constant: 0.0,
            },
        };
        let sol = solve(&problem, &SolverOptions::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.primal_objective - 0.25).abs() < 1e-6, "{}", sol.primal_objective);
        let x = &sol.blocks[0];
        assert!((x[(0, 0)].re - 1.0).abs() < 1e-4);
        assert!((x[(0, 1)].re - 0.5).abs() < 1e-5);
        assert!((x[(1, 1)].re - 0.25).abs() < 1e-4);
    }

    #[test]
    fn free_scalars_reach_their_active_bounds() {
        // min u subject to -u <= 3, u <= 5: a pure scalar problem with a
        // free variable boxed by two slack rows.
        let problem = SdpProblem {
            blocks: vec![],
            scalars: vec![ScalarVar { name: "u".to_string() }],
            constraints: vec![
                le(vec![], vec![(0, -1.0)], 3.0),
                le(vec![], vec![(0, 1.0)], 5.0),
            ],
            objective: Objective {
                mats: vec![],
                lin: vec![(0, 1.0)],
                constant: 2.0,
            },
        };
        let sol = solve(&problem, &SolverOptions::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.scalars[0] + 3.0).abs() < 1e-6, "{}", sol.scalars[0]);
        // Objective includes the constant term.
        assert!((sol.primal_objective + 1.0).abs() < 1e-6, "{}", sol.primal_objective);
    }

    #[test]
    fn reports_a_primal_infeasibility_certificate() {
        // x >= 0 (1x1 psd) with x = -1 has no solution; the certificate
        // is a multiplier with positive rhs pairing whose pullback is in
        // the negative dual cone.
        let problem = SdpProblem {
            blocks: vec![real_block("x", 1)],
            scalars: vec![],
            constraints: vec![eq(vec![(0, diag(1, &[1.0]))], -1.0)],
            objective: Objective {
                mats: vec![(0, diag(1, &[1.0]))],
                lin: vec![],
                constant: 0.0,
            },
        };
        let sol = solve(&problem, &SolverOptions::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::PrimalInfeasible);
        // b'y = 1 after normalization, and A'y = y must be <= 0 so that
        // z = -A'y stays in the cone.
        assert!((-sol.y[0] - 1.0).abs() < 1e-6, "{}", sol.y[0]);
        assert!(sol.primal_objective.is_nan());
    }

    #[test]
    fn reports_an_unboundedness_certificate() {
        // min -X_00 with only X_11 pinned: X_00 can grow without bound,
        // and the returned ray satisfies A x = 0 with objective -1.
        let problem = SdpProblem {
            blocks: vec![real_block("x", 2)],
            scalars: vec![],
            constraints: vec![eq(vec![(0, diag(2, &[0.0, 1.0]))], 1.0)],
            objective: Objective {
                mats: vec![(0, diag(2, &[-1.0, 0.0]))],
                lin: vec![],
                constant: 0.0,
            },
        };
        let sol = solve(&problem, &SolverOptions::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::DualInfeasible);
        let ray = &sol.blocks[0];
        // Normalized to objective -1: X_00 = 1, with the pinned entry 0.
        assert!((ray[(0, 0)].re - 1.0).abs() < 1e-4, "{}", ray[(0, 0)]);
        assert!(ray[(1, 1)].re.abs() < 1e-6);
    }

    #[test]
    fn iteration_log_tracks_convergence() {
        let problem = SdpProblem {
            blocks: vec![real_block("x", 2)],
            scalars: vec![],
            constraints: vec![eq(vec![(0, diag(2, &[1.0, 1.0]))], 1.0)],
            objective: Objective {
                mats: vec![(0, diag(2, &[1.0, 2.0]))],
                lin: vec![],
                constant: 0.0,
            },
        };
        let sol = solve(&problem, &SolverOptions::default()).unwrap();
        assert!(!sol.log.is_empty());
        for (k, row) in sol.log.iter().enumerate() {
            assert_eq!(row.iter, k + 1);
            assert!(row.step >= 0.0 && row.mu > 0.0);
        }
        let first = sol.log.first().unwrap();
        let last = sol.log.last().unwrap();
        assert!(last.mu < first.mu);
        // The final row records the converged residuals.
        let tol = SolverOptions::default().tol;
        assert!(last.gap < tol && last.primal_res < tol && last.dual_res < tol);
        assert!(last.step == 0.0);
    }

    #[test]
    fn identical_problems_solve_identically() {
        let build = || SdpProblem {
            blocks: vec![real_block("x", 2)],
            scalars: vec![ScalarVar { name: "u".to_string() }],
            constraints: vec![
                eq(vec![(0, diag(2, &[1.0, 1.0]))], 1.0),
                le(vec![(0, diag(2, &[1.0, 0.0]))], vec![(0, -1.0)], 0.3),
                le(vec![], vec![(0, 1.0)], 2.0),
            ],
            objective: Objective {
                mats: vec![(0, diag(2, &[1.0, 2.0]))],
                lin: vec![(0, 0.5)],
                constant: 0.0,
            },
        };
        let a = solve(&build(), &SolverOptions::default()).unwrap();
        let b = solve(&build(), &SolverOptions::default()).unwrap();
        assert_eq!(a.iterations, b.iterations);
        assert_eq!(a.primal_objective.to_bits(), b.primal_objective.to_bits());
        for (ra, rb) in a.log.iter().zip(&b.log) {
            assert_eq!(ra.mu.to_bits(), rb.mu.to_bits());
            assert_eq!(ra.step.to_bits(), rb.step.to_bits());
        }
        for (ba, bb) in a.blocks.iter().zip(&b.blocks) {
            assert_eq!(ba, bb);
        }
    }

    #[test]
    fn relaxed_network_problem_recovers_a_power_flow() {
        // End to end on a small network: solve the relaxation, recover
        // the voltage profile from the rank-one block, and let the
        // nonconvex referee confirm it.
        let mut net = path_network(3);
        randomize_loads(&mut net, 7);
        let idx = Indexing::new(&net);

        for kind in [ObjectiveKind::Loss, ObjectiveKind::SupplyCost] {
            let relax = relax_opf(
                &net,
                &idx,
                &RelaxOptions {
                    objective: kind,
                    ..RelaxOptions::default()
                },
            )
            .unwrap();
            let sol = solve(&relax.problem, &SolverOptions::default()).unwrap();
            assert_eq!(sol.status, SolveStatus::Optimal, "{kind:?}");

            let rec = relax.reduction.recover(&sol.blocks[relax.v_block]);
            assert!(
                rec.eigen_ratio() > 1e5,
                "{kind:?}: eigenvalue ratio {:.3e}",
                rec.eigen_ratio()
            );
            let op = OperatingPoint::from_voltages(&net, &idx, rec.v.clone());
            let report = check_operating_point(&net, &idx, &op);
            let tol = CheckTolerances {
                balance: 1e-5,
                pcc: 1e-6,
                limits: 1e-5,
            };
            assert!(
                report.passes(&tol),
                "{kind:?}: {:?}",
                report.issues(&net, &idx, &tol)
            );

            // The reported objective matches the recovered physics.
            let expected = match kind {
                ObjectiveKind::Loss => op.p_loss,
                ObjectiveKind::SupplyCost => {
                    let to_mw = net.base.s_va / 1e6;
                    let mut cost = net.c0.unwrap() * op.p0 * to_mw;
                    for (u, unit) in net.dg.iter().enumerate() {
                        cost += unit.cost * op.dg_p[u].iter().sum::<f64>() * to_mw;
                    }
                    cost
                }
            };
            assert!(
                (sol.primal_objective - expected).abs() < 1e-5 * (1.0 + expected.abs()),
                "{kind:?}: objective {} vs recovered {}",
                sol.primal_objective,
                expected
            );

            // Scalar dispatch agrees with what the referee recovered.
            let (pg, _qg) = relax.dispatch(&sol.scalars);
            for (u, per_phase) in pg.iter().enumerate() {
                for (ph, &val) in per_phase.iter().enumerate() {
                    assert!(
                        (val - op.dg_p[u][ph]).abs() < 1e-5,
                        "{kind:?}: unit {u} phase {ph}: {} vs {}",
                        val,
                        op.dg_p[u][ph]
                    );
                }
            }
        }
    }

    #[test]
    fn rejects_constraint_free_problems() {
        let problem = SdpProblem {
            blocks: vec![real_block("x", 1)],
            scalars: vec![],
            constraints: vec![],
            objective: Objective {
                mats: vec![(0, diag(1, &[1.0]))],
                lin: vec![],
                constant: 0.0,
            },
        };
        assert!(solve(&problem, &SolverOptions::default()).is_err());
    }
}
