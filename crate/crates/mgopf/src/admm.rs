//! Distributed solution of the relaxed OPF by consensus ADMM over areas.
//!
//! The network is split by [`crate::partition`] into areas whose extended
//! bus sets overlap on the boundary buses. Each area carries a local copy
//! of the relaxation, restricted to the stacked phases of its extension,
//! and the areas are driven toward agreement on the overlapping entries by
//! an alternating scheme: every round each area minimizes its share of the
//! cost plus a linear multiplier term and a quadratic penalty tying its
//! overlap entries to the midpoint of the two sides' last exchanged
//! values, the areas then swap overlap blocks over a simulated (and
//! possibly lossy) message bus, and finally each side bumps its
//! multipliers by the scaled disagreement it observed. Runs are
//! synchronous: iteration `t+1` starts only after every area has finished
//! iteration `t`.
//!
//! The quadratic penalty enters the local cone program exactly, not by
//! approximation: for every overlap entry the (weighted) deviation `r`
//! from its anchor is matched to the off-diagonal of a 2×2 slack block
//! `[[t, r], [r, 1]] ⪰ 0`, which is equivalent to `t ≥ r²`, and one
//! budget scalar per neighbor and part (real/imaginary) collects the `t`s.
//! Off-diagonal deviations are weighted by `√2` so each budget equals the
//! squared Frobenius deviation of the full overlap block at the optimum.
//!
//! Multiplier bookkeeping is symmetric by construction: both endpoints of
//! a link update from the *same* pair of overlap blocks, so with exact
//! message delivery the two multiplier matrices of a link stay exact
//! negations of each other in floating point, not merely up to rounding.
//! The per-iteration defect is recorded in the trace so runs can assert
//! this invariant.

use std::collections::{BTreeSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::ipsolver::{self, SolveStatus, SolverOptions};
use crate::netmodel::{BusId, Indexing, ModelError, Network};
use crate::partition::{PartitionError, PartitionPlan, PlanSummary};
use crate::sdpcore::{
    ampacity_matrix, flow_matrix, hermitian_top_pair, neutral_matrices, phi_active, phi_reactive,
    phi_voltage, Block, BlockKind, Constraint, ConstraintTag, HermMat, Objective, ObjectiveKind,
    PccReduction, RelaxOptions, ScalarVar, SdpError, SdpProblem, Sense,
};
use crate::{C64, CMat, CVec, RMat};

// ---------------------------------------------------------------------------
// Errors and configuration
// ---------------------------------------------------------------------------

/// Everything that can go wrong while assembling or running the
/// decomposed solve.
#[derive(Debug, Error)]
pub enum AdmmError {
    /// A run parameter is outside its domain.
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    /// The partition plan itself is unusable.
    #[error(transparent)]
    Partition(#[from] PartitionError),
    /// Assembling a local relaxation failed.
    #[error(transparent)]
    Sdp(#[from] SdpError),
    /// An underlying network-model error.
    #[error(transparent)]
    Model(#[from] ModelError),
    /// The reference bus sits on the boundary between two areas; the
    /// reference substitution cannot span two workers.
    #[error("reference bus {bus} is shared by areas {l} and {j}; it must be interior to one area")]
    ReferenceShared {
        /// The reference bus.
        bus: BusId,
        /// Lower endpoint of the offending area-graph edge.
        l: usize,
        /// Higher endpoint of the offending area-graph edge.
        j: usize,
    },
    /// A local subproblem did not reach an optimal point.
    #[error("area {area} failed at iteration {iteration}: {detail}")]
    Subproblem {
        /// The area whose solve failed.
        area: usize,
        /// The (1-based) outer iteration.
        iteration: usize,
        /// What the inner solver reported.
        detail: String,
    },
    /// A message was lost and the outage policy forbids reusing stale
    /// blocks.
    #[error("the overlap block from area {from} to area {to} was lost at iteration {iteration}")]
    MessageDropped {
        /// Sending area.
        from: usize,
        /// Receiving area.
        to: usize,
        /// The (1-based) outer iteration of the loss.
        iteration: usize,
    },
    /// A multiplier or overlap block has the wrong side length for its
    /// link.
    #[error("expected square blocks of side {expected}, got side {got}")]
    DimensionMismatch {
        /// Side length the link requires.
        expected: usize,
        /// Side length actually supplied.
        got: usize,
    },
}

/// What to do when a message is lost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutagePolicy {
    /// Keep using the last successfully exchanged pair of overlap blocks
    /// on that link; the link simply sees no new information.
    #[default]
    HoldLast,
    /// Abort the run with [`AdmmError::MessageDropped`].
    Fail,
}

/// Random-outage model for the message bus.
#[derive(Debug, Clone, Copy)]
pub struct OutageModel {
    /// Probability that any single message is lost, in `[0, 1]`.
    pub drop_probability: f64,
    /// Reaction to a loss.
    pub policy: OutagePolicy,
}

impl Default for OutageModel {
    fn default() -> Self {
        OutageModel {
            drop_probability: 0.0,
            policy: OutagePolicy::HoldLast,
        }
    }
}

/// Parameters of the decomposed solve.
#[derive(Debug, Clone)]
pub struct AdmmConfig {
    /// Penalty weight on the squared overlap deviation; must be positive.
    pub kappa: f64,
    /// Stop once the largest normalized overlap disagreement falls to
    /// this level (per unit).
    pub tol: f64,
    /// Cap on outer iterations.
    pub max_iters: usize,
    /// Message-loss model.
    pub outage: OutageModel,
    /// Seed for the message bus; runs are reproducible given the seed.
    pub seed: u64,
    /// Options handed to the inner cone solver.
    pub solver: SolverOptions,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        AdmmConfig {
            kappa: 100.0,
            tol: 1e-4,
            max_iters: 500,
            outage: OutageModel::default(),
            seed: 0,
            solver: SolverOptions::default(),
        }
    }
}

// ---------------------------------------------------------------------------
// Messages
// ---------------------------------------------------------------------------

/// One overlap block in flight from one area to a neighbor.
#[derive(Debug, Clone)]
pub struct BlockMessage {
    /// Sending area.
    pub sender: usize,
    /// Receiving area.
    pub receiver: usize,
    /// The (1-based) outer iteration the block belongs to.
    pub iteration: usize,
    /// The sender's current overlap entries, in the edge's shared index
    /// order on both axes.
    pub block: CMat,
}

/// A lossy, seeded broadcast medium: each submitted message is delivered
/// or dropped independently with the configured probability. Delivery
/// order is submission order, and the drop pattern depends only on the
/// seed and the submission sequence.
#[derive(Debug)]
pub struct MessageBus {
    rng: ChaCha8Rng,
    drop_probability: f64,
}

impl MessageBus {
    /// A bus that loses each message independently with probability
    /// `drop_probability`.
    pub fn new(drop_probability: f64, seed: u64) -> Result<MessageBus, AdmmError> {
        if !(0.0..=1.0).contains(&drop_probability) {
            return Err(AdmmError::BadConfig(format!(
                "drop probability must lie in [0, 1], got {drop_probability}"
            )));
        }
        Ok(MessageBus {
            rng: ChaCha8Rng::seed_from_u64(seed),
            drop_probability,
        })
    }

    /// Filters a batch of messages through the loss model.
    pub fn deliver(&mut self, messages: Vec<BlockMessage>) -> Vec<BlockMessage> {
        messages
            .into_iter()
            .filter(|_| !self.rng.gen_bool(self.drop_probability))
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Per-area templates
// ---------------------------------------------------------------------------

/// Where one overlap entry's slack machinery lives inside the problem.
#[derive(Debug, Clone)]
struct EntrySlot {
    /// Row of the entry within the shared index set.
    a: usize,
    /// Column of the entry within the shared index set (`a ≤ b`).
    b: usize,
    /// Deviation weight: 1 on the diagonal, `√2` off it.
    weight: f64,
    /// Whether the slot tracks the imaginary part.
    imag: bool,
    /// Constraint whose right-hand side carries the anchor value.
    row: usize,
}

/// The consensus machinery for one neighbor: budget scalars, slack
/// blocks, and the objective slot holding the multiplier matrix.
#[derive(Debug, Clone)]
struct ConsensusLink {
    /// Solver-block rows of the shared entries, ascending.
    rows: Vec<usize>,
    /// Scalar bounding the squared real deviation.
    alpha: usize,
    /// Scalar bounding the squared imaginary deviation.
    beta: usize,
    /// Index in `objective.mats` reserved for the multiplier matrix.
    objective_slot: usize,
    /// One slot per overlap entry and part.
    entries: Vec<EntrySlot>,
}

/// One neighbor of an area, as seen from that area's template.
#[derive(Debug, Clone)]
struct LinkTemplate {
    /// Index of the macro edge in the plan.
    edge: usize,
    /// The area on the other end.
    other: usize,
    /// Rows of this area's *local* block holding the shared entries, in
    /// the edge's index order.
    rows_local: Vec<usize>,
    /// Slack machinery inside the subproblem.
    consensus: ConsensusLink,
}

/// Everything fixed about one area's subproblem across iterations: the
/// physical constraints, the cost share, and prepared slots for the parts
/// that change (multiplier matrices and anchors). Cloning the inner
/// problem and writing the slots is all an iteration needs.
#[derive(Debug, Clone)]
pub struct AreaTemplate {
    area: usize,
    problem: SdpProblem,
    central_cost: Objective,
    links: Vec<LinkTemplate>,
    reduction: Option<PccReduction>,
    physical_rows: usize,
    local_dim: usize,
    units: Vec<usize>,
    pg: Vec<[Option<usize>; 3]>,
    qg: Vec<[Option<usize>; 3]>,
    pg_fixed: Vec<[f64; 3]>,
    qg_fixed: Vec<[f64; 3]>,
}

/// Dispatch of one generator unit recovered from an area's scalars.
#[derive(Debug, Clone)]
pub struct AreaDispatch {
    /// Index of the unit in `Network::dg`.
    pub unit: usize,
    /// Active output per phase slot.
    pub active: [f64; 3],
    /// Reactive output per phase slot.
    pub reactive: [f64; 3],
}

/// The reference phasor actually pinned, after any magnitude override.
fn effective_v0(net: &Network, opts: &RelaxOptions) -> Result<CVec, SdpError> {
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
    Ok(v0)
}

/// Appends one overlap entry's slack machinery: a 2×2 block whose
/// bottom-right entry is pinned to one (so the top-left entry dominates
/// the squared off-diagonal), a row matching the off-diagonal to the
/// weighted deviation of the tracked matrix entry, and a head term on the
/// budget row.
#[allow(clippy::too_many_arguments)]
fn attach_entry(
    problem: &mut SdpProblem,
    v_block: usize,
    dim: usize,
    p: usize,
    q: usize,
    a: usize,
    b: usize,
    weight: f64,
    imag: bool,
    label: &str,
    budget_row: &mut Constraint,
) -> EntrySlot {
    let part = if imag { "im" } else { "re" };
    let block = problem.blocks.len();
    problem.blocks.push(Block {
        name: format!("r-{part}[{label}:{a},{b}]"),
        dim: 2,
        kind: BlockKind::RealSymmetric,
    });

    let mut corner = HermMat::zeros(2);
    corner.add(1, 1, C64::new(1.0, 0.0));
    problem.constraints.push(Constraint {
        tag: ConstraintTag::Other(format!("r-{part}-corner[{label}:{a},{b}]")),
        mats: vec![(block, corner)],
        lin: Vec::new(),
        rhs: 1.0,
        sense: Sense::Eq,
    });

    // Off-diagonal of the slack block = weight · (entry − anchor); the
    // anchor lands on the right-hand side at assembly time.
    let mut border = HermMat::zeros(2);
    border.add(0, 1, C64::new(0.5, 0.0));
    let mut extract = HermMat::zeros(dim);
    if imag {
        extract.add(p, q, C64::new(0.0, 0.5 * weight));
    } else if p == q {
        extract.add(p, p, C64::new(weight, 0.0));
    } else {
        extract.add(p, q, C64::new(0.5 * weight, 0.0));
    }
    let row = problem.constraints.len();
    problem.constraints.push(Constraint {
        tag: ConstraintTag::Other(format!("r-{part}-match[{label}:{a},{b}]")),
        mats: vec![(block, border), (v_block, extract.scaled(-1.0))],
        lin: Vec::new(),
        rhs: 0.0,
        sense: Sense::Eq,
    });

    let mut head = HermMat::zeros(2);
    head.add(0, 0, C64::new(1.0, 0.0));
    budget_row.mats.push((block, head));

    EntrySlot {
        a,
        b,
        weight,
        imag,
        row,
    }
}

/// Adds the full consensus machinery for one neighbor to a problem whose
/// matched matrix block `v_block` holds the shared entries at `rows`:
/// budget scalars priced at `κ/2`, per-entry slack blocks, and a zeroed
/// objective slot for the multiplier matrix. Anchors and multipliers are
/// written later by [`write_link_terms`].
fn attach_consensus_link(
    problem: &mut SdpProblem,
    v_block: usize,
    rows: &[usize],
    kappa: f64,
    label: &str,
) -> ConsensusLink {
    let s = rows.len();
    let dim = problem.blocks[v_block].dim;

    let alpha = problem.scalars.len();
    problem.scalars.push(ScalarVar {
        name: format!("alpha[{label}]"),
    });
    let beta = problem.scalars.len();
    problem.scalars.push(ScalarVar {
        name: format!("beta[{label}]"),
    });
    problem.objective.lin.push((alpha, 0.5 * kappa));
    problem.objective.lin.push((beta, 0.5 * kappa));
    let objective_slot = problem.objective.mats.len();
    problem.objective.mats.push((v_block, HermMat::zeros(dim)));

    let mut alpha_row = Constraint {
        tag: ConstraintTag::Other(format!("alpha-budget[{label}]")),
        mats: Vec::new(),
        lin: vec![(alpha, -1.0)],
        rhs: 0.0,
        sense: Sense::Eq,
    };
    let mut beta_row = Constraint {
        tag: ConstraintTag::Other(format!("beta-budget[{label}]")),
        mats: Vec::new(),
        lin: vec![(beta, -1.0)],
        rhs: 0.0,
        sense: Sense::Eq,
    };

    let mut entries = Vec::new();
    for a in 0..s {
        for b in a..s {
            let weight = if a == b { 1.0 } else { std::f64::consts::SQRT_2 };
            entries.push(attach_entry(
                problem,
                v_block,
                dim,
                rows[a],
                rows[b],
                a,
                b,
                weight,
                false,
                label,
                &mut alpha_row,
            ));
            if a < b {
                entries.push(attach_entry(
                    problem,
                    v_block,
                    dim,
                    rows[a],
                    rows[b],
                    a,
                    b,
                    weight,
                    true,
                    label,
                    &mut beta_row,
                ));
            }
        }
    }
    problem.constraints.push(alpha_row);
    problem.constraints.push(beta_row);

    ConsensusLink {
        rows: rows.to_vec(),
        alpha,
        beta,
        objective_slot,
        entries,
    }
}

/// Writes one link's iteration data into an assembled problem: the
/// multiplier matrix into the reserved objective slot and the anchor
/// values onto the matching rows' right-hand sides.
fn write_link_terms(
    problem: &mut SdpProblem,
    v_block: usize,
    link: &ConsensusLink,
    gamma: &RMat,
    lambda: &RMat,
    anchor: &CMat,
) {
    let s = link.rows.len();
    let dim = problem.blocks[v_block].dim;
    // Tr(Γᵀ Re V) + Tr(Λᵀ Im V) over the shared entries, as a Hermitian
    // pairing: the (p, q) coefficient is Γ_ab + i Λ_ab.
    let mut mult = HermMat::zeros(dim);
    for a in 0..s {
        mult.add(link.rows[a], link.rows[a], C64::new(gamma[(a, a)], 0.0));
        for b in (a + 1)..s {
            mult.add(
                link.rows[a],
                link.rows[b],
                C64::new(gamma[(a, b)], lambda[(a, b)]),
            );
        }
    }
    problem.objective.mats[link.objective_slot] = (v_block, mult);
    for e in &link.entries {
        let m = anchor[(e.a, e.b)];
        let val = if e.imag { m.im } else { m.re };
        problem.constraints[e.row].rhs = -e.weight * val;
    }
}

/// Builds the iteration-independent template of one area's subproblem:
/// its slice of the physical constraints and cost, the reference handling
/// when the area holds the PCC, and prepared consensus machinery for each
/// neighbor.
pub fn area_template(
    net: &Network,
    idx: &Indexing,
    plan: &PartitionPlan,
    opts: &RelaxOptions,
    kappa: f64,
    area: usize,
) -> Result<AreaTemplate, AdmmError> {
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(AdmmError::BadConfig(format!(
            "penalty weight must be positive and finite, got {kappa}"
        )));
    }
    let map = &plan.maps[area];
    let local_dim = map.len();
    let total = idx.total();
    let ybus = net.ybus(idx);

    // The area holding the PCC pins the reference through the same
    // substitution the centralized relaxation uses, applied locally. The
    // substitution cannot straddle two workers, so the reference bus must
    // not lie on any area-graph edge.
    let reduction = if area == plan.pcc_area {
        if let Some(edge) = plan.edges.iter().find(|e| e.buses.contains(&net.pcc)) {
            return Err(AdmmError::ReferenceShared {
                bus: net.pcc,
                l: edge.l,
                j: edge.j,
            });
        }
        let span = idx.bus_span(net.pcc);
        let width = span.len();
        let start = map
            .local_of(span.start)
            .expect("the PCC lies inside its own area's block");
        let v0 = effective_v0(net, opts)?;
        Some(PccReduction::new(start..start + width, v0, local_dim))
    } else {
        None
    };
    let solver_dim = reduction.as_ref().map_or(local_dim, |r| r.reduced_dim());

    let mut problem = SdpProblem {
        blocks: vec![Block {
            name: format!("V[{area}]"),
            dim: solver_dim,
            kind: BlockKind::ComplexHermitian,
        }],
        scalars: Vec::new(),
        constraints: Vec::new(),
        objective: Objective::default(),
    };
    let v_block = 0usize;

    let to_solver = |raw: &HermMat| -> Result<HermMat, PartitionError> {
        let sliced = plan.slice_local(raw, area)?;
        Ok(match &reduction {
            Some(r) => r.reduce(&sliced),
            None => sliced,
        })
    };

    // Scalar dispatch variables for units at owned buses; degenerate
    // bounds fold into the balances exactly as in the centralized form.
    let mut units = Vec::new();
    let mut pg: Vec<[Option<usize>; 3]> = Vec::new();
    let mut qg: Vec<[Option<usize>; 3]> = Vec::new();
    let mut pg_fixed: Vec<[f64; 3]> = Vec::new();
    let mut qg_fixed: Vec<[f64; 3]> = Vec::new();
    for (u, unit) in net.dg.iter().enumerate() {
        if unit.bus == net.pcc {
            return Err(AdmmError::Sdp(SdpError::Unsupported(
                "a generator at the point of common coupling is not supported".to_string(),
            )));
        }
        if plan.area_of(unit.bus) != Some(area) {
            continue;
        }
        let phases = net
            .bus(unit.bus)
            .ok_or_else(|| SdpError::Inconsistent(format!("generator {u} sits at an unknown bus")))?
            .phases;
        let mut pg_row = [None; 3];
        let mut qg_row = [None; 3];
        let mut pg_fix = [0.0; 3];
        let mut qg_fix = [0.0; 3];
        for phase in phases.iter() {
            let slot = phase.index();
            if unit.p_max > unit.p_min {
                pg_row[slot] = Some(problem.scalars.len());
                problem.scalars.push(ScalarVar {
                    name: format!("pg[{}:{}]", unit.bus.0, phase.letter()),
                });
            } else {
                pg_fix[slot] = unit.p_min;
            }
            if unit.q_max > unit.q_min {
                qg_row[slot] = Some(problem.scalars.len());
                problem.scalars.push(ScalarVar {
                    name: format!("qg[{}:{}]", unit.bus.0, phase.letter()),
                });
            } else {
                qg_fix[slot] = unit.q_min;
            }
        }
        units.push(u);
        pg.push(pg_row);
        qg.push(qg_row);
        pg_fixed.push(pg_fix);
        qg_fixed.push(qg_fix);
    }

    // Reference pin, only on the area that owns it.
    if let Some(red) = &reduction {
        problem.constraints.push(Constraint {
            tag: ConstraintTag::ReferencePin,
            mats: vec![(v_block, red.pin_matrix())],
            lin: Vec::new(),
            rhs: 1.0,
            sense: Sense::Eq,
        });
    }

    // Power balances and voltage bands at the area's own buses. Balances
    // at a bus need the voltages of everything one hop away, which is
    // exactly what the extension provides, so each row slices cleanly.
    for bus in &net.buses {
        if bus.id == net.pcc || plan.area_of(bus.id) != Some(area) {
            continue;
        }
        let unit_row = units.iter().position(|&u| net.dg[u].bus == bus.id);
        for phase in bus.phases.iter() {
            let k = idx.index_of(bus.id, phase);
            let slot = phase.index();

            let p_mat = to_solver(&phi_active(&ybus, k))?;
            let (p_lin, p_pin) = match unit_row {
                Some(r) => match pg[r][slot] {
                    Some(var) => (vec![(var, -1.0)], 0.0),
                    None => (Vec::new(), pg_fixed[r][slot]),
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

            let mut q_full = phi_reactive(&ybus, k);
            if bus.y_cap[slot] != 0.0 {
                q_full.add_scaled(&phi_voltage(total, k), -bus.y_cap[slot]);
            }
            let q_mat = to_solver(&q_full)?;
            let (q_lin, q_pin) = match unit_row {
                Some(r) => match qg[r][slot] {
                    Some(var) => (vec![(var, -1.0)], 0.0),
                    None => (Vec::new(), qg_fixed[r][slot]),
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

            let v_mat = to_solver(&phi_voltage(total, k))?;
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

    // Dispatch boxes for the owned free scalars.
    for (row, &u) in units.iter().enumerate() {
        let unit = &net.dg[u];
        for slot in 0..3 {
            let phase = [
                crate::netmodel::Phase::A,
                crate::netmodel::Phase::B,
                crate::netmodel::Phase::C,
            ][slot];
            if let Some(var) = pg[row][slot] {
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
            if let Some(var) = qg[row][slot] {
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

    // Line limits go to the owning area (both end buses lie inside its
    // extension, so the coefficient matrices slice cleanly).
    for (l, line) in net.lines.iter().enumerate() {
        if plan.line_owner(l) != area {
            continue;
        }
        if let Some(i_max) = line.i_max {
            for conductor in 0..line.phases.len() {
                let m = to_solver(&ampacity_matrix(idx, line, conductor)?)?;
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
                        mats: vec![(v_block, to_solver(&m)?)],
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
                mats: vec![(v_block, to_solver(&loss)?)],
                lin: Vec::new(),
                rhs: cap,
                sense: Sense::Le,
            });
        }
    }

    // The area's share of the cost: interior lines belong to their area,
    // tie lines are split evenly so the shares sum to the full objective.
    match opts.objective {
        ObjectiveKind::Loss => {
            let mut loss = HermMat::zeros(total);
            let mut any = false;
            for (l, line) in net.lines.iter().enumerate() {
                let (a, b) = plan.line_areas[l];
                if a != area && b != area {
                    continue;
                }
                let w = if a == b { 1.0 } else { 0.5 };
                loss.add_scaled(&flow_matrix(idx, line, true)?, w);
                loss.add_scaled(&flow_matrix(idx, line, false)?, w);
                any = true;
            }
            if any {
                problem.objective.mats.push((v_block, to_solver(&loss)?));
            }
        }
        ObjectiveKind::SupplyCost => {
            let to_mw = net.base.s_va / 1e6;
            if area == plan.pcc_area {
                let c0 = net.c0.ok_or(SdpError::MissingSupplyPrice)?;
                let span = idx.bus_span(net.pcc);
                let mut import = HermMat::zeros(total);
                for k in span {
                    import.add_scaled(&phi_active(&ybus, k), c0 * to_mw);
                }
                problem.objective.mats.push((v_block, to_solver(&import)?));
            }
            for (row, &u) in units.iter().enumerate() {
                let unit = &net.dg[u];
                for var in pg[row].iter().flatten() {
                    problem.objective.lin.push((*var, unit.cost * to_mw));
                }
                let pinned: f64 = pg_fixed[row].iter().sum();
                problem.objective.constant += unit.cost * to_mw * pinned;
            }
        }
    }

    let central_cost = problem.objective.clone();
    let physical_rows = problem.constraints.len();

    // Consensus machinery, one link per incident area-graph edge.
    let mut links = Vec::new();
    for (edge_idx, other) in plan.neighbors(area) {
        let rows_local = plan.shared_local_rows(edge_idx, area);
        let rows_solver: Vec<usize> = match &reduction {
            Some(r) => rows_local
                .iter()
                .map(|&p| {
                    r.reduced_index(p)
                        .expect("the shared boundary excludes the reference span")
                })
                .collect(),
            None => rows_local.clone(),
        };
        let label = format!("{area}->{other}");
        let consensus = attach_consensus_link(&mut problem, v_block, &rows_solver, kappa, &label);
        links.push(LinkTemplate {
            edge: edge_idx,
            other,
            rows_local,
            consensus,
        });
    }

    problem.validate()?;
    Ok(AreaTemplate {
        area,
        problem,
        central_cost,
        links,
        reduction,
        physical_rows,
        local_dim,
        units,
        pg,
        qg,
        pg_fixed,
        qg_fixed,
    })
}

impl AreaTemplate {
    /// The area this template solves for.
    pub fn area(&self) -> usize {
        self.area
    }

    /// Side of the area's local (unreduced) matrix block.
    pub fn local_dim(&self) -> usize {
        self.local_dim
    }

    /// Number of neighbors the template exchanges blocks with.
    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    /// The template's links as `(macro edge index, other area)` pairs, in
    /// the order its per-link data is expected.
    pub fn link_edges(&self) -> Vec<(usize, usize)> {
        self.links.iter().map(|lk| (lk.edge, lk.other)).collect()
    }

    /// The deviation budgets `(α, β)` each link paid at a subproblem
    /// solution: the squared Frobenius deviation of the real and
    /// imaginary overlap parts from their anchors.
    pub fn budgets(&self, scalars: &[f64]) -> Vec<(f64, f64)> {
        self.links
            .iter()
            .map(|lk| (scalars[lk.consensus.alpha], scalars[lk.consensus.beta]))
            .collect()
    }

    /// The assembled prototype problem (anchors and multipliers zeroed).
    pub fn problem(&self) -> &SdpProblem {
        &self.problem
    }

    /// Indices (into `Network::dg`) of the units this area dispatches.
    pub fn owned_units(&self) -> &[usize] {
        &self.units
    }

    /// Builds the iteration subproblem for the given per-link multipliers
    /// and anchor blocks (each anchor in the edge's shared index order).
    pub fn assemble(
        &self,
        gamma: &[RMat],
        lambda: &[RMat],
        anchors: &[CMat],
    ) -> Result<SdpProblem, AdmmError> {
        if gamma.len() != self.links.len()
            || lambda.len() != self.links.len()
            || anchors.len() != self.links.len()
        {
            return Err(AdmmError::BadConfig(format!(
                "expected data for {} links, got {}/{}/{}",
                self.links.len(),
                gamma.len(),
                lambda.len(),
                anchors.len()
            )));
        }
        let mut problem = self.problem.clone();
        for (k, link) in self.links.iter().enumerate() {
            let s = link.consensus.rows.len();
            for m in [&gamma[k], &lambda[k]] {
                if m.nrows() != s || m.ncols() != s {
                    return Err(AdmmError::DimensionMismatch {
                        expected: s,
                        got: m.nrows().max(m.ncols()),
                    });
                }
            }
            if anchors[k].nrows() != s || anchors[k].ncols() != s {
                return Err(AdmmError::DimensionMismatch {
                    expected: s,
                    got: anchors[k].nrows().max(anchors[k].ncols()),
                });
            }
            write_link_terms(
                &mut problem,
                0,
                &link.consensus,
                &gamma[k],
                &lambda[k],
                &anchors[k],
            );
        }
        Ok(problem)
    }

    /// Expands a solver block back to the area's full local coordinates
    /// (undoing the reference substitution when the area carries it).
    pub fn expand(&self, w: &CMat) -> CMat {
        match &self.reduction {
            None => w.clone(),
            Some(red) => {
                let factor = |p: usize| -> (usize, C64) {
                    match red.reduced_index(p) {
                        Some(i) => (i, C64::new(1.0, 0.0)),
                        None => (0, red.v0()[p - red.span().start]),
                    }
                };
                CMat::from_fn(red.full_dim(), red.full_dim(), |p, q| {
                    let (ip, wp) = factor(p);
                    let (iq, wq) = factor(q);
                    wp * w[(ip, iq)] * wq.conj()
                })
            }
        }
    }

    /// Worst violation of the area's physical constraints (consensus
    /// machinery excluded) at a subproblem solution.
    pub fn physical_violation(&self, blocks: &[CMat], scalars: &[f64]) -> f64 {
        self.problem.constraints[..self.physical_rows]
            .iter()
            .map(|c| c.violation(blocks, scalars))
            .fold(0.0, f64::max)
    }

    /// Splits an area scalar vector into per-unit dispatch.
    pub fn dispatch(&self, scalars: &[f64]) -> Vec<AreaDispatch> {
        self.units
            .iter()
            .enumerate()
            .map(|(row, &u)| {
                let mut active = self.pg_fixed[row];
                let mut reactive = self.qg_fixed[row];
                for slot in 0..3 {
                    if let Some(i) = self.pg[row][slot] {
                        active[slot] = scalars[i];
                    }
                    if let Some(i) = self.qg[row][slot] {
                        reactive[slot] = scalars[i];
                    }
                }
                AreaDispatch {
                    unit: u,
                    active,
                    reactive,
                }
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Iteration state and dual update
// ---------------------------------------------------------------------------

/// One area's mutable state between rounds.
#[derive(Debug, Clone)]
pub struct LocalState {
    /// The area index.
    pub area: usize,
    /// Current local iterate in full local coordinates.
    pub block: CMat,
    /// Scalar values from the latest subproblem (dispatch then budgets).
    pub scalars: Vec<f64>,
    /// Per-link multipliers on the real part of the overlap.
    pub gamma: Vec<RMat>,
    /// Per-link multipliers on the imaginary part of the overlap.
    pub lambda: Vec<RMat>,
    /// Per-link, the neighbor's overlap block from the last successful
    /// exchange.
    pub received: Vec<CMat>,
    /// Per-link, this area's own overlap block at that same exchange, so
    /// anchors and multiplier updates always use a matched pair.
    pub anchor_own: Vec<CMat>,
}

/// Applies one multiplier update: both matrices gain `κ/2` times the
/// entrywise disagreement between the two sides' overlap blocks (real
/// part into `gamma`, imaginary part into `lambda`). Both endpoints of a
/// link call this with the same pair of blocks in swapped roles, so their
/// multipliers stay exact negations of each other.
pub fn dual_update(
    gamma: &mut RMat,
    lambda: &mut RMat,
    own: &CMat,
    received: &CMat,
    kappa: f64,
) -> Result<(), AdmmError> {
    let s = gamma.nrows();
    for (rows, cols) in [
        (gamma.nrows(), gamma.ncols()),
        (lambda.nrows(), lambda.ncols()),
        (own.nrows(), own.ncols()),
        (received.nrows(), received.ncols()),
    ] {
        if rows != s || cols != s {
            return Err(AdmmError::DimensionMismatch {
                expected: s,
                got: rows.max(cols),
            });
        }
    }
    for b in 0..s {
        for a in 0..s {
            let d = own[(a, b)] - received[(a, b)];
            gamma[(a, b)] += 0.5 * kappa * d.re;
            lambda[(a, b)] += 0.5 * kappa * d.im;
        }
    }
    Ok(())
}

/// The overlap entries of a local block, in link order on both axes.
fn slice_shared(block: &CMat, rows_local: &[usize]) -> CMat {
    CMat::from_fn(rows_local.len(), rows_local.len(), |a, b| {
        block[(rows_local[a], rows_local[b])]
    })
}

/// Acceptance bound for subproblem iterates returned with a non-optimal
/// status: worst constraint violation plus normalized duality gap.
const STALL_RESIDUAL: f64 = 1e-6;

/// Worst constraint violation and normalized duality gap of a returned
/// subproblem point, measured directly on the point (independent of the
/// solver's own bookkeeping).
fn subproblem_residual(problem: &SdpProblem, sol: &ipsolver::Solution) -> f64 {
    let viol = problem
        .constraints
        .iter()
        .map(|c| c.violation(&sol.blocks, &sol.scalars))
        .fold(0.0, f64::max);
    let gap =
        (sol.primal_objective - sol.dual_objective).abs() / (1.0 + sol.primal_objective.abs());
    viol.max(gap)
}

// ---------------------------------------------------------------------------
// Trace
// ---------------------------------------------------------------------------

/// One disagreement measurement: edge `(edge_l, edge_j)` at an iteration.
#[derive(Debug, Clone, Serialize)]
pub struct TraceRow {
    /// The (1-based) outer iteration.
    pub iteration: usize,
    /// Lower endpoint of the edge.
    pub edge_l: usize,
    /// Higher endpoint of the edge.
    pub edge_j: usize,
    /// Normalized disagreement: entrywise ℓ1 distance of the two overlap
    /// blocks divided by the squared shared index count.
    pub delta_v: f64,
    /// Sum of the per-area cost shares at this iteration.
    pub area_objective_sum: f64,
}

/// Reproducibility data stored alongside a trace.
#[derive(Debug, Clone, Serialize)]
pub struct TraceMetadata {
    /// Penalty weight.
    pub kappa: f64,
    /// Stopping tolerance on the normalized disagreement.
    pub tol: f64,
    /// Iteration cap.
    pub max_iterations: usize,
    /// Message-bus seed.
    pub seed: u64,
    /// Message-loss probability.
    pub drop_probability: f64,
    /// Loss reaction, `"hold-last"` or `"fail"`.
    pub policy: String,
    /// Objective the areas shared, `"loss"` or `"supply-cost"`.
    pub objective: String,
    /// The partition the run decomposed over.
    pub partition: PlanSummary,
}

/// Full convergence record of a run: one row per iteration and edge,
/// per-area cost shares, and the per-iteration multiplier antisymmetry
/// defect.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceTrace {
    /// Disagreement rows, iteration-major then edge order.
    pub rows: Vec<TraceRow>,
    /// Cost share of each area at each iteration (`[iteration][area]`).
    pub area_objectives: Vec<Vec<f64>>,
    /// Per iteration, the largest entry of `|Γ_lj + Γ_jl|` and
    /// `|Λ_lj + Λ_jl|` over all edges; exactly zero under lossless
    /// delivery.
    pub multiplier_asymmetry: Vec<f64>,
    /// Run parameters for reproducibility.
    pub metadata: TraceMetadata,
}

impl ConvergenceTrace {
    /// Renders the rows as CSV. Floats use the shortest round-trip
    /// representation, so equal runs produce byte-identical files.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,edge_l,edge_j,delta_v,area_objective_sum\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.iteration, r.edge_l, r.edge_j, r.delta_v, r.area_objective_sum
            ));
        }
        out
    }
}

// ---------------------------------------------------------------------------
// The outer loop
// ---------------------------------------------------------------------------

/// One area's final product.
#[derive(Debug, Clone)]
pub struct AreaSolution {
    /// The area index.
    pub area: usize,
    /// Final local matrix iterate, full local coordinates.
    pub block: CMat,
    /// The area's share of the cost at the final iterate.
    pub objective: f64,
    /// Final subproblem scalars (dispatch then budgets).
    pub scalars: Vec<f64>,
    /// Dispatch of the units this area owns.
    pub dispatch: Vec<AreaDispatch>,
    /// Final deviation budgets `(α, β)` per link, in the template's link
    /// order.
    pub budgets: Vec<(f64, f64)>,
    /// Largest eigenvalue of the final block.
    pub lambda1: f64,
    /// Second eigenvalue of the final block.
    pub lambda2: f64,
    /// Worst physical-constraint violation at the final iterate.
    pub local_violation: f64,
}

/// Result of a decomposed run.
#[derive(Debug, Clone)]
pub struct AdmmOutcome {
    /// Per-area final states.
    pub areas: Vec<AreaSolution>,
    /// Outer iterations performed.
    pub iterations: usize,
    /// Whether the disagreement fell below the tolerance.
    pub converged: bool,
    /// Largest normalized disagreement at the last iteration.
    pub max_disagreement: f64,
    /// Sum of the per-area cost shares at the last iteration; comparable
    /// to the centralized optimum.
    pub aggregate_objective: f64,
    /// Full convergence record.
    pub trace: ConvergenceTrace,
}

/// Runs the synchronized consensus loop over a partition plan.
///
/// Every round: all areas solve their local subproblems (any non-optimal
/// status aborts the run, naming the area and iteration), the overlap
/// blocks cross the message bus, each delivered pair advances that link's
/// multipliers and anchors, and the per-edge disagreements are recorded.
/// The run stops when the largest normalized disagreement reaches
/// `config.tol` or the iteration cap is hit.
///
/// Under [`OutagePolicy::HoldLast`] a lost message freezes its link: the
/// link's anchors and multipliers keep their last matched pair, so the
/// affected subproblems simply re-solve with stale consensus data.
/// [`OutagePolicy::Fail`] aborts on the first loss instead.
pub fn run_admm(
    net: &Network,
    idx: &Indexing,
    plan: &PartitionPlan,
    opts: &RelaxOptions,
    config: &AdmmConfig,
) -> Result<AdmmOutcome, AdmmError> {
    if !(config.tol > 0.0 && config.tol.is_finite()) {
        return Err(AdmmError::BadConfig(format!(
            "tolerance must be positive and finite, got {}",
            config.tol
        )));
    }
    if config.max_iters == 0 {
        return Err(AdmmError::BadConfig(
            "at least one iteration is required".to_string(),
        ));
    }
    let n_areas = plan.area_count();
    let templates: Vec<AreaTemplate> = (0..n_areas)
        .map(|a| area_template(net, idx, plan, opts, config.kappa, a))
        .collect::<Result<_, _>>()?;
    let link_pos = |area: usize, other: usize| -> usize {
        templates[area]
            .links
            .iter()
            .position(|lk| lk.other == other)
            .expect("area-graph edges are mutual")
    };

    // All areas start from the same rank-one seed (the nominal flat
    // profile), so both sides of every link agree initially and the first
    // anchors are consistent.
    let nominal = net.nominal_profile(idx);
    let mut states: Vec<LocalState> = (0..n_areas)
        .map(|a| {
            let map = &plan.maps[a];
            let v = CVec::from_fn(map.len(), |r, _| nominal[map.global_of(r)]);
            let block: CMat = &v * v.adjoint();
            let links = &templates[a].links;
            LocalState {
                area: a,
                block: block.clone(),
                scalars: Vec::new(),
                gamma: links
                    .iter()
                    .map(|lk| RMat::zeros(lk.rows_local.len(), lk.rows_local.len()))
                    .collect(),
                lambda: links
                    .iter()
                    .map(|lk| RMat::zeros(lk.rows_local.len(), lk.rows_local.len()))
                    .collect(),
                received: links
                    .iter()
                    .map(|lk| slice_shared(&block, &lk.rows_local))
                    .collect(),
                anchor_own: links
                    .iter()
                    .map(|lk| slice_shared(&block, &lk.rows_local))
                    .collect(),
            }
        })
        .collect();

    let mut bus = MessageBus::new(config.outage.drop_probability, config.seed)?;
    let mut rows: Vec<TraceRow> = Vec::new();
    let mut area_objectives: Vec<Vec<f64>> = Vec::new();
    let mut asymmetry: Vec<f64> = Vec::new();
    let mut finals: Vec<Option<(Vec<CMat>, Vec<f64>)>> = vec![None; n_areas];
    let mut converged = false;
    let mut iterations = 0;
    let mut max_disagreement = 0.0f64;

    for iter in 1..=config.max_iters {
        iterations = iter;

        // Local solves.
        let mut objs = vec![0.0; n_areas];
        for a in 0..n_areas {
            let t = &templates[a];
            let st = &states[a];
            let anchors: Vec<CMat> = (0..t.links.len())
                .map(|k| (&st.anchor_own[k] + &st.received[k]) * C64::new(0.5, 0.0))
                .collect();
            let problem = t.assemble(&st.gamma, &st.lambda, &anchors)?;
            let sol = ipsolver::solve(&problem, &config.solver).map_err(|e| {
                AdmmError::Subproblem {
                    area: a,
                    iteration: iter,
                    detail: e.to_string(),
                }
            })?;
            // As the areas come to agree, the deviation blocks turn
            // rank-one and the subproblems become degenerate; the inner
            // solver may then stall just short of its own tolerance. A
            // stalled iterate whose measured residuals are tight enough is
            // still a perfectly good iterate for the outer loop, so only
            // genuinely bad returns abort the run.
            let usable = match sol.status {
                SolveStatus::Optimal => true,
                SolveStatus::NumericalTrouble | SolveStatus::IterationLimit => {
                    subproblem_residual(&problem, &sol) <= STALL_RESIDUAL
                }
                _ => false,
            };
            if !usable {
                return Err(AdmmError::Subproblem {
                    area: a,
                    iteration: iter,
                    detail: format!("local solve ended with status {:?}", sol.status),
                });
            }
            objs[a] = t.central_cost.value(&sol.blocks, &sol.scalars);
            states[a].block = t.expand(&sol.blocks[0]);
            states[a].scalars = sol.scalars.clone();
            finals[a] = Some((sol.blocks, sol.scalars));
        }

        // Exchange overlap blocks.
        let mut outbox = Vec::new();
        for (a, st) in states.iter().enumerate() {
            for lk in &templates[a].links {
                outbox.push(BlockMessage {
                    sender: a,
                    receiver: lk.other,
                    iteration: iter,
                    block: slice_shared(&st.block, &lk.rows_local),
                });
            }
        }
        let delivered = bus.deliver(outbox);
        if config.outage.policy == OutagePolicy::Fail {
            let arrived: BTreeSet<(usize, usize)> = delivered
                .iter()
                .map(|m| (m.sender, m.receiver))
                .collect();
            for edge in &plan.edges {
                for (from, to) in [(edge.l, edge.j), (edge.j, edge.l)] {
                    if !arrived.contains(&(from, to)) {
                        return Err(AdmmError::MessageDropped {
                            from,
                            to,
                            iteration: iter,
                        });
                    }
                }
            }
        }
        for msg in delivered {
            let k = link_pos(msg.receiver, msg.sender);
            let rows_local = templates[msg.receiver].links[k].rows_local.clone();
            let own_now = slice_shared(&states[msg.receiver].block, &rows_local);
            let st = &mut states[msg.receiver];
            dual_update(
                &mut st.gamma[k],
                &mut st.lambda[k],
                &own_now,
                &msg.block,
                config.kappa,
            )?;
            st.received[k] = msg.block;
            st.anchor_own[k] = own_now;
        }

        // Record disagreement and multiplier symmetry on the true current
        // slices (what a monitor tapping both areas would see, delivered
        // or not).
        let objective_sum: f64 = objs.iter().sum();
        let mut worst = 0.0f64;
        let mut defect = 0.0f64;
        for edge in &plan.edges {
            let kl = link_pos(edge.l, edge.j);
            let kj = link_pos(edge.j, edge.l);
            let sl = slice_shared(&states[edge.l].block, &templates[edge.l].links[kl].rows_local);
            let sj = slice_shared(&states[edge.j].block, &templates[edge.j].links[kj].rows_local);
            let s = edge.indices.len();
            let mut l1 = 0.0;
            for b in 0..s {
                for a in 0..s {
                    l1 += (sl[(a, b)] - sj[(a, b)]).norm();
                }
            }
            let delta = l1 / (s * s) as f64;
            worst = worst.max(delta);
            rows.push(TraceRow {
                iteration: iter,
                edge_l: edge.l,
                edge_j: edge.j,
                delta_v: delta,
                area_objective_sum: objective_sum,
            });
            let gl = &states[edge.l].gamma[kl];
            let gj = &states[edge.j].gamma[kj];
            let ll = &states[edge.l].lambda[kl];
            let lj = &states[edge.j].lambda[kj];
            for b in 0..s {
                for a in 0..s {
                    defect = defect.max((gl[(a, b)] + gj[(a, b)]).abs());
                    defect = defect.max((ll[(a, b)] + lj[(a, b)]).abs());
                }
            }
        }
        area_objectives.push(objs);
        asymmetry.push(defect);
        max_disagreement = worst;
        if worst <= config.tol {
            converged = true;
            break;
        }
    }

    let policy = match config.outage.policy {
        OutagePolicy::HoldLast => "hold-last",
        OutagePolicy::Fail => "fail",
    };
    let objective_name = match opts.objective {
        ObjectiveKind::Loss => "loss",
        ObjectiveKind::SupplyCost => "supply-cost",
    };
    let trace = ConvergenceTrace {
        rows,
        area_objectives,
        multiplier_asymmetry: asymmetry,
        metadata: TraceMetadata {
            kappa: config.kappa,
            tol: config.tol,
            max_iterations: config.max_iters,
            seed: config.seed,
            drop_probability: config.outage.drop_probability,
            policy: policy.to_string(),
            objective: objective_name.to_string(),
            partition: plan.summary(),
        },
    };

    let last_objs = trace
        .area_objectives
        .last()
        .expect("at least one iteration ran");
    let mut areas = Vec::with_capacity(n_areas);
    for (a, st) in states.iter().enumerate() {
        let (blocks, scalars) = finals[a].take().expect("every area solved");
        let violation = templates[a].physical_violation(&blocks, &scalars);
        let (l1, l2, _) = hermitian_top_pair(&st.block);
        areas.push(AreaSolution {
            area: a,
            block: st.block.clone(),
            objective: last_objs[a],
            scalars: st.scalars.clone(),
            dispatch: templates[a].dispatch(&st.scalars),
            lambda1: l1,
            lambda2: l2,
            local_violation: violation,
        });
    }
    let aggregate_objective: f64 = last_objs.iter().sum();

    Ok(AdmmOutcome {
        areas,
        iterations,
        converged,
        max_disagreement,
        aggregate_objective,
        trace,
    })
}

// ---------------------------------------------------------------------------
// Voltage recovery
// ---------------------------------------------------------------------------

/// Stitches a global voltage profile out of the areas' (near) rank-one
/// blocks: each block contributes its scaled leading eigenvector, phases
/// are aligned area by area along a spanning tree of the area graph
/// rooted at the reference area, and the reference area itself is aligned
/// to the pinned phasor. Exact agreement on the overlaps makes the result
/// an exact rank-one completion of the stacked blocks; approximate
/// agreement degrades it gracefully.
pub fn recover_voltages(
    net: &Network,
    idx: &Indexing,
    plan: &PartitionPlan,
    opts: &RelaxOptions,
    outcome: &AdmmOutcome,
) -> Result<CVec, AdmmError> {
    let n_areas = plan.area_count();
    let factors: Vec<CVec> = outcome
        .areas
        .iter()
        .map(|ar| {
            let (l1, _l2, u) = hermitian_top_pair(&ar.block);
            &u * C64::new(l1.max(0.0).sqrt(), 0.0)
        })
        .collect();

    let total = plan.stacked_dim();
    let mut v = CVec::zeros(total);
    let mut have = vec![false; total];
    let mut seen = vec![false; n_areas];

    // Best single rotation taking `u`'s entries at `locals` onto the
    // targets: the least-squares phase/scale alignment.
    let align = |u: &CVec, pairs: &[(usize, C64)]| -> C64 {
        let mut num = C64::new(0.0, 0.0);
        let mut den = 0.0;
        for &(r, target) in pairs {
            num += u[r].conj() * target;
            den += u[r].norm_sqr();
        }
        if den > 0.0 {
            num / den
        } else {
            C64::new(1.0, 0.0)
        }
    };

    let assign = |v: &mut CVec, have: &mut Vec<bool>, area: usize, rho: C64, u: &CVec| {
        for (r, &g) in plan.maps[area].globals().iter().enumerate() {
            if !have[g] {
                v[g] = rho * u[r];
                have[g] = true;
            }
        }
    };

    // Seed at the reference area, aligned to the pinned phasor.
    let v0 = effective_v0(net, opts)?;
    let a0 = plan.pcc_area;
    let span = idx.bus_span(net.pcc);
    let pairs: Vec<(usize, C64)> = span
        .clone()
        .enumerate()
        .map(|(t, g)| {
            let r = plan.maps[a0]
                .local_of(g)
                .expect("the reference lies inside its own area");
            (r, v0[t])
        })
        .collect();
    let rho0 = align(&factors[a0], &pairs);
    assign(&mut v, &mut have, a0, rho0, &factors[a0]);
    seen[a0] = true;

    // Walk the area graph outward, aligning each new area against the
    // already assigned overlap values.
    let mut queue = VecDeque::from([a0]);
    while let Some(l) = queue.pop_front() {
        for (e, other) in plan.neighbors(l) {
            if seen[other] {
                continue;
            }
            let pairs: Vec<(usize, C64)> = plan.edges[e]
                .indices
                .iter()
                .map(|&g| {
                    let r = plan.maps[other]
                        .local_of(g)
                        .expect("shared indices lie inside both endpoint blocks");
                    (r, v[g])
                })
                .collect();
            let rho = align(&factors[other], &pairs);
            assign(&mut v, &mut have, other, rho, &factors[other]);
            seen[other] = true;
            queue.push_back(other);
        }
    }
    Ok(v)
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
