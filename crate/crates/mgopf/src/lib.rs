//! Optimal power flow for unbalanced multi-phase microgrids.
//!
//! This crate solves the optimal power flow (OPF) problem on small
//! unbalanced, multi-phase distribution networks by relaxing the nonconvex
//! power-flow equations to a semidefinite program (SDP) over the outer
//! product `V = v v^H` of the stacked phase-voltage vector. When the solver
//! returns a (numerically) rank-one `V`, the voltage profile recovered from
//! its leading eigenpair is a globally optimal solution of the original
//! nonconvex problem; the crate checks that claim explicitly instead of
//! assuming it.
//!
//! The crate is organized as a pipeline:
//!
//! * [`netmodel`] — network data model: JSON ingestion, validation,
//!   per-unit normalization, and bus admittance assembly for networks whose
//!   buses and lines may carry different phase subsets.
//! * [`sdpcore`] — builds the Hermitian coefficient matrices that express
//!   powers, voltage magnitudes, flows, and currents as linear functionals
//!   of `V`, and assembles the full relaxed OPF problem.
//! * [`ipsolver`] — a dense primal-dual interior-point method for the
//!   assembled cone programs, using a homogeneous self-dual embedding so
//!   that infeasibility is detected by certificate rather than by timeout.
//! * [`partition`] — splits a network into areas, forms their overlapping
//!   extensions, and verifies the chordality/clique structure that makes
//!   the decomposed relaxation exact.
//! * [`admm`] — solves the partitioned problem by consensus ADMM, with a
//!   simulated message bus between areas (including lossy links).
//! * [`verify`] — the independent referee: checks any recovered operating
//!   point against the nonconvex power-flow equations directly, reports
//!   physical quantities, and samples exact feasible regions for small
//!   networks.
//!
//! Everything downstream of [`netmodel`] works in per-unit quantities; see
//! the module docs there for the normalization conventions.

pub mod admm;
pub mod ipsolver;
pub mod netmodel;
pub mod partition;
pub mod sdpcore;
#[cfg(test)]
pub(crate) mod testutil;
pub mod verify;

/// Complex scalar used throughout the crate.
pub type C64 = num_complex::Complex<f64>;
/// Dense complex matrix.
pub type CMat = nalgebra::DMatrix<C64>;
/// Dense complex (column) vector.
pub type CVec = nalgebra::DVector<C64>;
/// Dense real matrix.
pub type RMat = nalgebra::DMatrix<f64>;
/// Dense real (column) vector.
pub type RVec = nalgebra::DVector<f64>;

pub use nalgebra;
pub use num_complex;
