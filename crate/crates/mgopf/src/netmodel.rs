//! Data model for unbalanced multi-phase distribution networks.
//!
//! A network is a set of buses (nodes) joined by series line segments, where
//! every bus and every line carries an arbitrary non-empty subset of the
//! three phases `a`, `b`, `c`. One bus is the point of common coupling
//! (PCC) whose phase voltages are fixed; a subset of buses host
//! dispatchable distributed generation (DG) with per-phase box limits on
//! active and reactive output; the remaining buses are pure loads.
//!
//! # File format and units
//!
//! On disk a network is a JSON document carrying SI quantities:
//!
//! * `base.s_va` — per-phase power base in VA (1 MVA makes per-unit
//!   per-phase powers numerically equal to MW),
//! * `base.v_ll_v` — nominal line-to-line voltage in volts,
//! * bus loads in kW / kvar per phase, capacitor susceptances in siemens,
//! * line impedance matrices in ohms (total for the segment, not per unit
//!   length), optional total shunt susceptance matrices in microsiemens,
//!   optional ampacities in amperes.
//!
//! [`Network::from_json_str`] parses, validates, and normalizes everything
//! to per-unit with bases
//!
//! ```text
//! v_base = v_ll_v / sqrt(3)        (line-to-ground volts)
//! s_base = s_va                    (per-phase VA)
//! z_base = v_base^2 / s_base       (ohm)
//! i_base = s_base / v_base         (ampere)
//! ```
//!
//! All other modules consume the per-unit [`Network`] only.
//!
//! # Load connections
//!
//! Loads may be declared `wye` (per-phase, line-to-ground) or `delta`
//! (per phase pair, in the order `ab`, `bc`, `ca`; three-phase buses only).
//! Delta demands are converted at ingestion to equivalent wye demands by
//! splitting each phase-to-phase demand equally onto its two terminal
//! phases; this constant-power split is exact for balanced voltages and is
//! the usual approximation for unbalanced studies that need a
//! line-to-ground formulation. Serializing a network back to JSON always
//! emits the converted wye loads.
//!
//! # Neutral conductors
//!
//! A line may optionally be described by its full conductor impedance
//! matrix including explicit neutral rows. Ingestion eliminates the
//! neutrals via Kron reduction (exact for multigrounded neutrals at both
//! ends), keeping the reduced phase matrix for power flow plus the linear
//! map from phase currents to neutral currents so that neutral ampacity
//! limits can still be imposed.

use nalgebra::DMatrix;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::fmt;
use std::path::Path;

use crate::{C64, CMat, CVec};

/// Errors produced while loading or validating a network description.
#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    /// The file could not be read.
    #[error("failed to read network file: {0}")]
    Io(#[from] std::io::Error),
    /// The document is not valid JSON or is missing required fields.
    #[error("failed to parse network JSON: {0}")]
    Json(#[from] serde_json::Error),
    /// A phase-set string contains characters outside `a`, `b`, `c` or
    /// repeats a letter.
    #[error("invalid phase letters {0:?}: expected a non-empty subset of \"abc\"")]
    PhaseLetters(String),
    /// A square matrix block could not be inverted.
    #[error("singular matrix in {context}")]
    Singular {
        /// Where the singular block was encountered.
        context: String,
    },
    /// Semantic validation failed; every discovered issue is listed.
    #[error("network validation failed:\n  - {}", issues.join("\n  - "))]
    Invalid {
        /// Human-readable descriptions of each problem found.
        issues: Vec<String>,
    },
}

// ---------------------------------------------------------------------------
// Phases
// ---------------------------------------------------------------------------

/// One of the three phases of a distribution network.
#[derive(Copy, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub enum Phase {
    /// Phase `a`.
    A = 0,
    /// Phase `b`.
    B = 1,
    /// Phase `c`.
    C = 2,
}

impl Phase {
    /// All phases in canonical order.
    pub const ALL: [Phase; 3] = [Phase::A, Phase::B, Phase::C];

    /// Canonical index of the phase: `a → 0`, `b → 1`, `c → 2`.
    pub fn index(self) -> usize {
        self as usize
    }

    /// Lower-case letter naming the phase.
    pub fn letter(self) -> char {
        match self {
            Phase::A => 'a',
            Phase::B => 'b',
            Phase::C => 'c',
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

/// A non-empty subset of the three phases, stored as a bitmask.
///
/// Members are always enumerated in the canonical order `a`, `b`, `c`;
/// [`PhaseSet::position_of`] gives the rank of a phase within that
/// enumeration, which is how per-phase vectors and matrices attached to a
/// bus or line are indexed.
#[derive(Copy, Clone, PartialEq, Eq, Hash, Default)]
pub struct PhaseSet(u8);

impl PhaseSet {
    /// The full three-phase set `abc`.
    pub const ABC: PhaseSet = PhaseSet(0b111);

    /// The empty set (only useful as a fold seed; never valid in a model).
    pub fn empty() -> Self {
        PhaseSet(0)
    }

    /// Set containing a single phase.
    pub fn single(p: Phase) -> Self {
        PhaseSet(1 << p.index())
    }

    /// Parses letters like `"a"`, `"bc"`, `"abc"`. Letters may appear in
    /// any order but must not repeat; at least one is required.
    pub fn from_letters(s: &str) -> Result<Self, ModelError> {
        let mut mask = 0u8;
        for c in s.chars() {
            let bit = match c {
                'a' => 1,
                'b' => 2,
                'c' => 4,
                _ => return Err(ModelError::PhaseLetters(s.to_string())),
            };
            if mask & bit != 0 {
                return Err(ModelError::PhaseLetters(s.to_string()));
            }
            mask |= bit;
        }
        if mask == 0 {
            return Err(ModelError::PhaseLetters(s.to_string()));
        }
        Ok(PhaseSet(mask))
    }

    /// Canonical `"abc"`-style string naming the members.
    pub fn letters(self) -> String {
        self.iter().map(Phase::letter).collect()
    }

    /// Whether the set contains `p`.
    pub fn contains(self, p: Phase) -> bool {
        self.0 & (1 << p.index()) != 0
    }

    /// Number of member phases (0–3).
    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    /// True when no phase is present.
    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// Adds a phase to the set.
    pub fn insert(&mut self, p: Phase) {
        self.0 |= 1 << p.index();
    }

    /// Members in canonical order.
    pub fn iter(self) -> impl Iterator<Item = Phase> {
        Phase::ALL.into_iter().filter(move |p| self.contains(*p))
    }

    /// True when every member of `self` is also in `other`.
    pub fn is_subset_of(self, other: PhaseSet) -> bool {
        self.0 & !other.0 == 0
    }

    /// Set intersection.
    pub fn intersection(self, other: PhaseSet) -> PhaseSet {
        PhaseSet(self.0 & other.0)
    }

    /// Rank of `p` among the members in canonical order, if present.
    ///
    /// For `bc`: `position_of(B) = 0`, `position_of(C) = 1`,
    /// `position_of(A) = None`.
    pub fn position_of(self, p: Phase) -> Option<usize> {
        if !self.contains(p) {
            return None;
        }
        Some((self.0 & ((1 << p.index()) - 1)).count_ones() as usize)
    }
}

impl fmt::Debug for PhaseSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PhaseSet({})", self.letters())
    }
}

impl fmt::Display for PhaseSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letters())
    }
}

impl Serialize for PhaseSet {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.letters())
    }
}

impl<'de> Deserialize<'de> for PhaseSet {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        PhaseSet::from_letters(&s).map_err(D::Error::custom)
    }
}

// ---------------------------------------------------------------------------
// Identifiers
// ---------------------------------------------------------------------------

/// Identifier of a bus, as written in the network file.
///
/// Identifiers need not start at zero or be contiguous; they must be unique
/// and are kept in strictly increasing order inside [`Network::buses`].
#[derive(
    Copy, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct BusId(pub usize);

impl fmt::Display for BusId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

// ---------------------------------------------------------------------------
// Runtime (per-unit) model
// ---------------------------------------------------------------------------

/// Power and voltage bases a network was normalized with.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct Base {
    /// Per-phase power base in VA.
    pub s_va: f64,
    /// Nominal line-to-line voltage in volts.
    pub v_ll_v: f64,
}

impl Base {
    /// Line-to-ground voltage base in volts.
    pub fn v_base(&self) -> f64 {
        self.v_ll_v / 3f64.sqrt()
    }

    /// Impedance base in ohms.
    pub fn z_base(&self) -> f64 {
        self.v_base() * self.v_base() / self.s_va
    }

    /// Current base in amperes.
    pub fn i_base(&self) -> f64 {
        self.s_va / self.v_base()
    }
}

/// A bus with its per-unit demands and voltage band.
#[derive(Clone, Debug)]
pub struct Bus {
    /// File identifier.
    pub id: BusId,
    /// Phases present at the bus.
    pub phases: PhaseSet,
    /// Active power demand per phase, indexed by [`Phase::index`];
    /// entries for absent phases are zero. Per-unit.
    pub p_load: [f64; 3],
    /// Reactive power demand per phase (same layout). Per-unit.
    pub q_load: [f64; 3],
    /// Capacitor susceptance per phase (same layout). Per-unit.
    pub y_cap: [f64; 3],
    /// Lower voltage-magnitude limit, per-unit.
    pub v_min: f64,
    /// Upper voltage-magnitude limit, per-unit.
    pub v_max: f64,
}

/// Kron-reduction byproduct kept so neutral-current limits survive the
/// elimination of neutral conductors.
#[derive(Clone, Debug)]
pub struct NeutralModel {
    /// Linear map from line phase currents to neutral currents
    /// (`k × |phases|` with `k` the number of neutral conductors).
    pub t: CMat,
    /// Neutral ampacity, per-unit, applied to every neutral conductor.
    pub i_max: Option<f64>,
}

/// A series line segment between two buses.
#[derive(Clone, Debug)]
pub struct Line {
    /// Bus at one end (the "from" end used when naming flow directions).
    pub from: BusId,
    /// Bus at the other end.
    pub to: BusId,
    /// Phases carried by the segment; a subset of both endpoints' phases.
    pub phases: PhaseSet,
    /// Series phase impedance matrix, `|phases| × |phases|`, per-unit.
    pub z: CMat,
    /// Total shunt admittance matrix of the segment, per-unit; half is
    /// lumped at each end. Zero when the segment has no modeled shunt.
    pub y_shunt: CMat,
    /// Per-phase ampacity of the segment, per-unit.
    pub i_max: Option<f64>,
    /// Cap on the total active power lost on the segment, per-unit.
    pub loss_cap: Option<f64>,
    /// Neutral-current model left over from Kron reduction, if the segment
    /// was described with explicit neutral conductors.
    pub neutral: Option<NeutralModel>,
}

/// A dispatchable DG unit with identical per-phase box limits.
#[derive(Clone, Debug)]
pub struct DgUnit {
    /// Bus hosting the unit; it may supply power on every phase of that bus.
    pub bus: BusId,
    /// Minimum active output per phase, per-unit.
    pub p_min: f64,
    /// Maximum active output per phase, per-unit.
    pub p_max: f64,
    /// Minimum reactive output per phase, per-unit.
    pub q_min: f64,
    /// Maximum reactive output per phase, per-unit.
    pub q_max: f64,
    /// Marginal cost of active output, $/MW (applied to MW, not per-unit).
    pub cost: f64,
}

impl DgUnit {
    /// A unit constrained to unity power factor (`q_min = q_max = 0`).
    pub fn is_unity_pf(&self) -> bool {
        self.q_min == 0.0 && self.q_max == 0.0
    }
}

/// A validated, per-unit network ready for analysis.
///
/// Construct with [`Network::from_json_str`] / [`Network::from_json_file`],
/// or build programmatically and call [`Network::validate`].
#[derive(Clone, Debug)]
pub struct Network {
    /// Free-form description carried through from the file.
    pub description: Option<String>,
    /// Normalization bases (kept for SI round trips and reports).
    pub base: Base,
    /// Bus hosting the point of common coupling (the slack bus).
    pub pcc: BusId,
    /// Fixed PCC phase voltages, per-unit, aligned with the PCC bus's
    /// phases in canonical order.
    pub v0: CVec,
    /// Price of active power drawn at the PCC, $/MW. Required by the
    /// supply-cost objective; irrelevant to the loss objective.
    pub c0: Option<f64>,
    /// Buses in strictly increasing id order.
    pub buses: Vec<Bus>,
    /// Line segments (arbitrary order; stable from the file).
    pub lines: Vec<Line>,
    /// DG units (at most one per bus).
    pub dg: Vec<DgUnit>,
    /// Optional partition of the buses into areas for decomposed solves.
    pub areas: Option<Vec<Vec<BusId>>>,
}

// ---------------------------------------------------------------------------
// Indexing
// ---------------------------------------------------------------------------

/// Bijection between (bus, phase) pairs and positions in the stacked
/// voltage vector `v = [v_{n1}; v_{n2}; ...]` (buses in increasing id
/// order, phases in canonical order inside each bus).
#[derive(Clone, Debug)]
pub struct Indexing {
    ids: Vec<BusId>,
    phases: Vec<PhaseSet>,
    offsets: Vec<usize>,
    total: usize,
    decompose: Vec<(BusId, Phase)>,
}

impl Indexing {
    /// Builds the indexing for a network.
    pub fn new(net: &Network) -> Self {
        let mut offsets = Vec::with_capacity(net.buses.len());
        let mut decompose = Vec::new();
        let mut total = 0;
        for bus in &net.buses {
            offsets.push(total);
            for p in bus.phases.iter() {
                decompose.push((bus.id, p));
            }
            total += bus.phases.len();
        }
        Indexing {
            ids: net.buses.iter().map(|b| b.id).collect(),
            phases: net.buses.iter().map(|b| b.phases).collect(),
            offsets,
            total,
            decompose,
        }
    }

    /// Dimension of the stacked voltage vector.
    pub fn total(&self) -> usize {
        self.total
    }

    /// Position of a bus inside the sorted bus list.
    pub fn bus_pos(&self, id: BusId) -> Option<usize> {
        self.ids.binary_search(&id).ok()
    }

    /// Range of stacked-vector positions belonging to a bus.
    pub fn bus_span(&self, id: BusId) -> std::ops::Range<usize> {
        let pos = self.bus_pos(id).expect("bus id not in indexing");
        let start = self.offsets[pos];
        start..start + self.phases[pos].len()
    }

    /// Stacked-vector position of one phase of one bus.
    pub fn index_of(&self, id: BusId, phase: Phase) -> usize {
        let pos = self.bus_pos(id).expect("bus id not in indexing");
        let rank = self.phases[pos]
            .position_of(phase)
            .expect("phase not present at bus");
        self.offsets[pos] + rank
    }

    /// Inverse map: which (bus, phase) a stacked-vector position refers to.
    pub fn decompose(&self, index: usize) -> (BusId, Phase) {
        self.decompose[index]
    }

    /// Iterator over `(bus, phase, index)` triples in stacked order.
    pub fn iter(&self) -> impl Iterator<Item = (BusId, Phase, usize)> + '_ {
        self.decompose
            .iter()
            .enumerate()
            .map(|(i, &(b, p))| (b, p, i))
    }
}

// ---------------------------------------------------------------------------
// JSON document types (SI units)
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    description: Option<String>,
    base: BaseFile,
    pcc: usize,
    v0: Vec<V0File>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    c0_per_mw: Option<f64>,
    buses: Vec<BusFile>,
    lines: Vec<LineFile>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    dg: Vec<DgFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    areas: Option<Vec<Vec<usize>>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BaseFile {
    s_va: f64,
    v_ll_v: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct V0File {
    mag_pu: f64,
    angle_deg: f64,
}

#[derive(Copy, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Connection {
    #[default]
    Wye,
    Delta,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BusFile {
    id: usize,
    phases: PhaseSet,
    #[serde(default, skip_serializing_if = "is_default_connection")]
    connection: Connection,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    p_load_kw: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    q_load_kvar: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    y_cap_s: Vec<f64>,
    v_min_pu: f64,
    v_max_pu: f64,
}

fn is_default_connection(c: &Connection) -> bool {
    *c == Connection::Wye
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LineFile {
    from: usize,
    to: usize,
    phases: PhaseSet,
    /// Series resistance matrix, ohms. Required unless `neutral` is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    r_ohm: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    x_ohm: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    b_shunt_us: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    i_max_a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    loss_cap_mw: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    neutral: Option<NeutralFile>,
}

/// Full conductor-level impedance of a segment, phases first then
/// neutrals, as an `(p + k) × (p + k)` matrix pair.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NeutralFile {
    r_ohm: Vec<Vec<f64>>,
    x_ohm: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    i_max_a: Option<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DgFile {
    bus: usize,
    p_min_kw: f64,
    p_max_kw: f64,
    q_min_kvar: f64,
    q_max_kvar: f64,
    cost_per_mw: f64,
}

// ---------------------------------------------------------------------------
// Ingestion
// ---------------------------------------------------------------------------

/// Parses a `Vec<Vec<f64>>` JSON matrix into a dense matrix, checking it is
/// `n × n`.
fn parse_square(rows: &[Vec<f64>], n: usize, what: &str, issues: &mut Vec<String>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(n, n);
    if rows.len() != n {
        issues.push(format!("{what}: expected {n} rows, found {}", rows.len()));
        return out;
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != n {
            issues.push(format!(
                "{what}: row {i} has {} entries, expected {n}",
                row.len()
            ));
            return out;
        }
        for (j, &v) in row.iter().enumerate() {
            out[(i, j)] = v;
        }
    }
    out
}

fn complex_from_parts(re: &DMatrix<f64>, im: &DMatrix<f64>) -> CMat {
    CMat::from_fn(re.nrows(), re.ncols(), |i, j| C64::new(re[(i, j)], im[(i, j)]))
}

/// Relative asymmetry `max |M - M^T| / max |M|` (0 for empty/zero).
fn relative_asymmetry(m: &CMat) -> f64 {
    let scale = m.iter().map(|c| c.norm()).fold(0.0_f64, f64::max);
    if scale == 0.0 {
        return 0.0;
    }
    let mut worst = 0.0_f64;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).norm());
        }
    }
    worst / scale
}

/// Eliminates trailing conductors (rows/cols `p..`) of a full impedance
/// matrix by Kron reduction.
///
/// Returns the reduced `p × p` phase matrix and the `k × p` map from phase
/// currents to eliminated-conductor currents (valid when the eliminated
/// conductors are grounded at both ends so their end voltages vanish).
pub fn kron_reduce(z_full: &CMat, phase_count: usize) -> Result<(CMat, CMat), ModelError> {
    let total = z_full.nrows();
    assert_eq!(z_full.ncols(), total, "kron_reduce needs a square matrix");
    assert!(
        phase_count < total,
        "kron_reduce needs at least one conductor to eliminate"
    );
    let p = phase_count;
    let zpp = z_full.view((0, 0), (p, p)).into_owned();
    let zpn = z_full.view((0, p), (p, total - p)).into_owned();
    let znp = z_full.view((p, 0), (total - p, p)).into_owned();
    let znn = z_full.view((p, p), (total - p, total - p)).into_owned();
    let znn_inv = znn.try_inverse().ok_or_else(|| ModelError::Singular {
        context: "neutral-neutral block during Kron reduction".to_string(),
    })?;
    let z_red = &zpp - &zpn * &znn_inv * &znp;
    let t = -(&znn_inv * &znp);
    Ok((z_red, t))
}

/// Inverts a line impedance block and symmetrizes the result so that
/// admittance matrices are exactly symmetric despite round-off.
pub fn series_admittance(z: &CMat) -> Result<CMat, ModelError> {
    let inv = z.clone().try_inverse().ok_or_else(|| ModelError::Singular {
        context: "line series impedance".to_string(),
    })?;
    Ok((&inv + &inv.transpose()) * C64::new(0.5, 0.0))
}

/// Embeds a `|line| × |line|` block into a `|rows| × |cols|` block, placing
/// entry `(i, j)` of the block at the positions of the line's `i`-th and
/// `j`-th phases within the row and column phase sets.
pub fn embed_line_block(
    block: &CMat,
    line_phases: PhaseSet,
    row_phases: PhaseSet,
    col_phases: PhaseSet,
) -> CMat {
    let mut out = CMat::zeros(row_phases.len(), col_phases.len());
    for (i, pi) in line_phases.iter().enumerate() {
        let ri = row_phases
            .position_of(pi)
            .expect("line phase missing from row bus");
        for (j, pj) in line_phases.iter().enumerate() {
            let cj = col_phases
                .position_of(pj)
                .expect("line phase missing from column bus");
            out[(ri, cj)] = block[(i, j)];
        }
    }
    out
}

/// Restricts a bus-level phasor slice to the phases of a line, in the
/// line's canonical phase order.
pub fn select_phases(bus_slice: &CVec, bus_phases: PhaseSet, line_phases: PhaseSet) -> CVec {
    CVec::from_iterator(
        line_phases.len(),
        line_phases.iter().map(|p| {
            bus_slice[bus_phases
                .position_of(p)
                .expect("line phase missing from bus")]
        }),
    )
}

impl Network {
    /// Loads a network from a JSON string (parse + validate + normalize).
    pub fn from_json_str(s: &str) -> Result<Network, ModelError> {
        let file: NetworkFile = serde_json::from_str(s)?;
        Network::from_file(file)
    }

    /// Loads a network from a JSON file on disk.
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Network, ModelError> {
        let text = std::fs::read_to_string(path)?;
        Network::from_json_str(&text)
    }

    fn from_file(file: NetworkFile) -> Result<Network, ModelError> {
        let mut issues: Vec<String> = Vec::new();

        if !(file.base.s_va > 0.0) || !(file.base.v_ll_v > 0.0) {
            issues.push("base: s_va and v_ll_v must be positive".to_string());
            return Err(ModelError::Invalid { issues });
        }
        let base = Base {
            s_va: file.base.s_va,
            v_ll_v: file.base.v_ll_v,
        };
        let z_base = base.z_base();
        let i_base = base.i_base();
        let s_base = base.s_va;

        // --- buses ------------------------------------------------------
        let mut buses: Vec<Bus> = Vec::with_capacity(file.buses.len());
        for bf in &file.buses {
            let phases = bf.phases;
            let np = phases.len();
            let mut p_load = [0.0; 3];
            let mut q_load = [0.0; 3];
            let mut y_cap = [0.0; 3];
            let expand = |vals: &Vec<f64>, scale: f64, out: &mut [f64; 3], what: &str,
                          issues: &mut Vec<String>| {
                if vals.is_empty() {
                    return;
                }
                if vals.len() != np {
                    issues.push(format!(
                        "bus {}: {what} has {} entries but the bus has {np} phases",
                        bf.id,
                        vals.len()
                    ));
                    return;
                }
                for (p, &v) in phases.iter().zip(vals.iter()) {
                    out[p.index()] = v * scale;
                }
            };
            match bf.connection {
                Connection::Wye => {
                    expand(&bf.p_load_kw, 1e3 / s_base, &mut p_load, "p_load_kw", &mut issues);
                    expand(&bf.q_load_kvar, 1e3 / s_base, &mut q_load, "q_load_kvar", &mut issues);
                }
                Connection::Delta => {
                    if phases != PhaseSet::ABC {
                        issues.push(format!(
                            "bus {}: delta loads require all three phases, found {}",
                            bf.id, phases
                        ));
                    } else {
                        let split = |vals: &Vec<f64>, scale: f64, out: &mut [f64; 3],
                                     what: &str, issues: &mut Vec<String>| {
                            if vals.is_empty() {
                                return;
                            }
                            if vals.len() != 3 {
                                issues.push(format!(
                                    "bus {}: delta {what} needs 3 entries (ab, bc, ca), found {}",
                                    bf.id,
                                    vals.len()
                                ));
                                return;
                            }
                            let (ab, bc, ca) = (vals[0] * scale, vals[1] * scale, vals[2] * scale);
                            out[0] = 0.5 * (ab + ca);
                            out[1] = 0.5 * (ab + bc);
                            out[2] = 0.5 * (bc + ca);
                        };
                        split(&bf.p_load_kw, 1e3 / s_base, &mut p_load, "p_load_kw", &mut issues);
                        split(&bf.q_load_kvar, 1e3 / s_base, &mut q_load, "q_load_kvar", &mut issues);
                    }
                }
            }
            expand(&bf.y_cap_s, z_base, &mut y_cap, "y_cap_s", &mut issues);
            buses.push(Bus {
                id: BusId(bf.id),
                phases,
                p_load,
                q_load,
                y_cap,
                v_min: bf.v_min_pu,
                v_max: bf.v_max_pu,
            });
        }
        buses.sort_by_key(|b| b.id);

        // --- lines ------------------------------------------------------
        let mut lines: Vec<Line> = Vec::with_capacity(file.lines.len());
        for (k, lf) in file.lines.iter().enumerate() {
            let np = lf.phases.len();
            let label = format!("line {} ({}-{})", k, lf.from, lf.to);
            let (z_si, neutral) = match (&lf.r_ohm, &lf.x_ohm, &lf.neutral) {
                (Some(r), Some(x), None) => {
                    let re = parse_square(r, np, &format!("{label} r_ohm"), &mut issues);
                    let im = parse_square(x, np, &format!("{label} x_ohm"), &mut issues);
                    (complex_from_parts(&re, &im), None)
                }
                (None, None, Some(nf)) => {
                    let total = nf.r_ohm.len();
                    if total <= np {
                        issues.push(format!(
                            "{label}: neutral matrix must be larger than the {np}-phase block"
                        ));
                        (CMat::zeros(np, np), None)
                    } else {
                        let re = parse_square(&nf.r_ohm, total, &format!("{label} neutral r_ohm"), &mut issues);
                        let im = parse_square(&nf.x_ohm, total, &format!("{label} neutral x_ohm"), &mut issues);
                        let full = complex_from_parts(&re, &im);
                        match kron_reduce(&full, np) {
                            Ok((z_red, t)) => (
                                z_red,
                                Some(NeutralModel {
                                    t,
                                    i_max: nf.i_max_a.map(|a| a / i_base),
                                }),
                            ),
                            Err(e) => {
                                issues.push(format!("{label}: {e}"));
                                (CMat::zeros(np, np), None)
                            }
                        }
                    }
                }
                _ => {
                    issues.push(format!(
                        "{label}: give either r_ohm+x_ohm or a neutral block, not both/neither"
                    ));
                    (CMat::zeros(np, np), None)
                }
            };
            let z = z_si.map(|c| c / z_base);
            let y_shunt = match &lf.b_shunt_us {
                Some(b) => {
                    let bm = parse_square(b, np, &format!("{label} b_shunt_us"), &mut issues);
                    CMat::from_fn(np, np, |i, j| C64::new(0.0, bm[(i, j)] * 1e-6 * z_base))
                }
                None => CMat::zeros(np, np),
            };
            lines.push(Line {
                from: BusId(lf.from),
                to: BusId(lf.to),
                phases: lf.phases,
                z,
                y_shunt,
                i_max: lf.i_max_a.map(|a| a / i_base),
                loss_cap: lf.loss_cap_mw.map(|mw| mw * 1e6 / s_base),
                neutral,
            });
        }

        // --- DG ----------------------------------------------------------
        let dg: Vec<DgUnit> = file
            .dg
            .iter()
            .map(|d| DgUnit {
                bus: BusId(d.bus),
                p_min: d.p_min_kw * 1e3 / s_base,
                p_max: d.p_max_kw * 1e3 / s_base,
                q_min: d.q_min_kvar * 1e3 / s_base,
                q_max: d.q_max_kvar * 1e3 / s_base,
                cost: d.cost_per_mw,
            })
            .collect();

        let v0 = CVec::from_iterator(
            file.v0.len(),
            file.v0.iter().map(|v| {
                let th = v.angle_deg.to_radians();
                C64::new(v.mag_pu * th.cos(), v.mag_pu * th.sin())
            }),
        );

        let net = Network {
            description: file.description,
            base,
            pcc: BusId(file.pcc),
            v0,
            c0: file.c0_per_mw,
            buses,
            lines,
            dg,
            areas: file
                .areas
                .map(|areas| areas.into_iter().map(|a| a.into_iter().map(BusId).collect()).collect()),
        };
        net.validate_with(issues)?;
        Ok(net)
    }

    /// Runs full semantic validation, returning every problem found.
    pub fn validate(&self) -> Result<(), ModelError> {
        self.validate_with(Vec::new())
    }

    fn validate_with(&self, mut issues: Vec<String>) -> Result<(), ModelError> {
        // Bus ids unique & sorted (constructor sorts; manual builders must too).
        for w in self.buses.windows(2) {
            if w[0].id >= w[1].id {
                issues.push(format!(
                    "buses must have strictly increasing unique ids; found {} then {}",
                    w[0].id, w[1].id
                ));
            }
        }
        for b in &self.buses {
            if b.phases.is_empty() {
                issues.push(format!("bus {}: empty phase set", b.id));
            }
            if !(b.v_min > 0.0) || !(b.v_max >= b.v_min) {
                issues.push(format!(
                    "bus {}: voltage band [{}, {}] must satisfy 0 < v_min <= v_max",
                    b.id, b.v_min, b.v_max
                ));
            }
            for p in Phase::ALL {
                if !b.phases.contains(p)
                    && (b.p_load[p.index()] != 0.0
                        || b.q_load[p.index()] != 0.0
                        || b.y_cap[p.index()] != 0.0)
                {
                    issues.push(format!(
                        "bus {}: load or capacitor on absent phase {p}",
                        b.id
                    ));
                }
            }
        }

        let bus = |id: BusId| self.buses.binary_search_by_key(&id, |b| b.id).ok();

        // PCC
        match bus(self.pcc) {
            None => issues.push(format!("pcc bus {} does not exist", self.pcc)),
            Some(pos) => {
                let np = self.buses[pos].phases.len();
                if self.v0.len() != np {
                    issues.push(format!(
                        "v0 has {} entries but the PCC bus carries {np} phases",
                        self.v0.len()
                    ));
                }
                if self.v0.iter().any(|c| c.norm() <= 0.0) {
                    issues.push("v0 entries must have positive magnitude".to_string());
                }
            }
        }

        if let Some(c0) = self.c0 {
            if !(c0 > 0.0) {
                issues.push(format!("c0_per_mw must be positive, found {c0}"));
            }
        }

        // Lines
        let mut seen_pairs = std::collections::BTreeSet::new();
        for (k, l) in self.lines.iter().enumerate() {
            let label = format!("line {} ({}-{})", k, l.from, l.to);
            if l.from == l.to {
                issues.push(format!("{label}: self loop"));
                continue;
            }
            let key = (l.from.min(l.to), l.from.max(l.to));
            if !seen_pairs.insert(key) {
                issues.push(format!("{label}: duplicate segment between the same buses"));
            }
            if l.phases.is_empty() {
                issues.push(format!("{label}: empty phase set"));
            }
            let np = l.phases.len();
            if l.z.nrows() != np || l.z.ncols() != np {
                issues.push(format!(
                    "{label}: impedance is {}x{}, expected {np}x{np}",
                    l.z.nrows(),
                    l.z.ncols()
                ));
                continue;
            }
            if l.y_shunt.nrows() != np || l.y_shunt.ncols() != np {
                issues.push(format!(
                    "{label}: shunt admittance is {}x{}, expected {np}x{np}",
                    l.y_shunt.nrows(),
                    l.y_shunt.ncols()
                ));
            }
            if relative_asymmetry(&l.z) > 1e-8 {
                issues.push(format!("{label}: impedance matrix is not symmetric"));
            }
            if l.z.clone().try_inverse().is_none() {
                issues.push(format!("{label}: impedance matrix is singular"));
            }
            for (end, who) in [(l.from, "from"), (l.to, "to")] {
                match bus(end) {
                    None => issues.push(format!("{label}: {who} bus does not exist")),
                    Some(pos) => {
                        if !l.phases.is_subset_of(self.buses[pos].phases) {
                            issues.push(format!(
                                "{label}: phases {} not carried by bus {} ({})",
                                l.phases, end, self.buses[pos].phases
                            ));
                        }
                    }
                }
            }
            if let Some(nm) = &l.neutral {
                if nm.t.ncols() != np {
                    issues.push(format!(
                        "{label}: neutral transform has {} columns, expected {np}",
                        nm.t.ncols()
                    ));
                }
            }
        }

        // DG
        let mut dg_buses = std::collections::BTreeSet::new();
        for d in &self.dg {
            if bus(d.bus).is_none() {
                issues.push(format!("dg at bus {}: bus does not exist", d.bus));
            }
            if !dg_buses.insert(d.bus) {
                issues.push(format!("dg at bus {}: multiple units on one bus", d.bus));
            }
            if d.p_min > d.p_max || d.q_min > d.q_max {
                issues.push(format!("dg at bus {}: empty box (min > max)", d.bus));
            }
            if d.cost < 0.0 {
                issues.push(format!("dg at bus {}: negative cost", d.bus));
            }
            if d.bus == self.pcc {
                issues.push(format!(
                    "dg at bus {}: the PCC bus cannot also host a DG unit",
                    d.bus
                ));
            }
        }

        // Connectivity (over existing buses only).
        if !self.buses.is_empty() && bus(self.pcc).is_some() {
            let n = self.buses.len();
            let mut adj = vec![Vec::new(); n];
            for l in &self.lines {
                if let (Some(a), Some(b)) = (bus(l.from), bus(l.to)) {
                    adj[a].push(b);
                    adj[b].push(a);
                }
            }
            let mut seen = vec![false; n];
            let mut stack = vec![bus(self.pcc).unwrap()];
            seen[stack[0]] = true;
            while let Some(u) = stack.pop() {
                for &w in &adj[u] {
                    if !seen[w] {
                        seen[w] = true;
                        stack.push(w);
                    }
                }
            }
            for (pos, ok) in seen.iter().enumerate() {
                if !ok {
                    issues.push(format!(
                        "bus {} is not connected to the PCC",
                        self.buses[pos].id
                    ));
                }
            }
        }

        // Areas, if present: must partition the bus set.
        if let Some(areas) = &self.areas {
            let mut assigned = std::collections::BTreeMap::new();
            for (ai, area) in areas.iter().enumerate() {
                if area.is_empty() {
                    issues.push(format!("area {ai} is empty"));
                }
                for &b in area {
                    if bus(b).is_none() {
                        issues.push(format!("area {ai}: bus {b} does not exist"));
                    }
                    if let Some(prev) = assigned.insert(b, ai) {
                        issues.push(format!("bus {b} assigned to areas {prev} and {ai}"));
                    }
                }
            }
            for b in &self.buses {
                if !assigned.contains_key(&b.id) {
                    issues.push(format!("bus {} not assigned to any area", b.id));
                }
            }
        }

        if issues.is_empty() {
            Ok(())
        } else {
            Err(ModelError::Invalid { issues })
        }
    }

    /// Serializes back to the JSON document form (SI units, wye loads).
    ///
    /// The round trip is lossy in two documented ways: delta loads are
    /// emitted as their wye equivalents, and lines ingested with explicit
    /// neutral conductors are emitted with their Kron-reduced phase
    /// impedance (the neutral block is not reconstructed).
    pub fn to_json_string(&self) -> String {
        let base = self.base;
        let z_base = base.z_base();
        let i_base = base.i_base();
        let s_base = base.s_va;
        let collect = |arr: &[f64; 3], phases: PhaseSet, scale: f64| -> Vec<f64> {
            let v: Vec<f64> = phases.iter().map(|p| arr[p.index()] * scale).collect();
            if v.iter().all(|&x| x == 0.0) {
                Vec::new()
            } else {
                v
            }
        };
        let file = NetworkFile {
            description: self.description.clone(),
            base: BaseFile {
                s_va: base.s_va,
                v_ll_v: base.v_ll_v,
            },
            pcc: self.pcc.0,
            v0: self
                .v0
                .iter()
                .map(|c| V0File {
                    mag_pu: c.norm(),
                    angle_deg: c.arg().to_degrees(),
                })
                .collect(),
            c0_per_mw: self.c0,
            buses: self
                .buses
                .iter()
                .map(|b| BusFile {
                    id: b.id.0,
                    phases: b.phases,
                    connection: Connection::Wye,
                    p_load_kw: collect(&b.p_load, b.phases, s_base / 1e3),
                    q_load_kvar: collect(&b.q_load, b.phases, s_base / 1e3),
                    y_cap_s: collect(&b.y_cap, b.phases, 1.0 / z_base),
                    v_min_pu: b.v_min,
                    v_max_pu: b.v_max,
                })
                .collect(),
            lines: self
                .lines
                .iter()
                .map(|l| {
                    let n = l.phases.len();
                    let mat = |f: &dyn Fn(usize, usize) -> f64| -> Vec<Vec<f64>> {
                        (0..n).map(|i| (0..n).map(|j| f(i, j)).collect()).collect()
                    };
                    let b_shunt = mat(&|i, j| l.y_shunt[(i, j)].im / z_base / 1e-6);
                    let has_shunt = b_shunt.iter().flatten().any(|&x| x != 0.0);
                    LineFile {
                        from: l.from.0,
                        to: l.to.0,
                        phases: l.phases,
                        r_ohm: Some(mat(&|i, j| l.z[(i, j)].re * z_base)),
                        x_ohm: Some(mat(&|i, j| l.z[(i, j)].im * z_base)),
                        b_shunt_us: has_shunt.then_some(b_shunt),
                        i_max_a: l.i_max.map(|i| i * i_base),
                        loss_cap_mw: l.loss_cap.map(|p| p * s_base / 1e6),
                        neutral: None,
                    }
                })
                .collect(),
            dg: self
                .dg
                .iter()
                .map(|d| DgFile {
                    bus: d.bus.0,
                    p_min_kw: d.p_min * s_base / 1e3,
                    p_max_kw: d.p_max * s_base / 1e3,
                    q_min_kvar: d.q_min * s_base / 1e3,
                    q_max_kvar: d.q_max * s_base / 1e3,
                    cost_per_mw: d.cost,
                })
                .collect(),
            areas: self
                .areas
                .as_ref()
                .map(|areas| areas.iter().map(|a| a.iter().map(|b| b.0).collect()).collect()),
        };
        serde_json::to_string_pretty(&file).expect("network serialization cannot fail")
    }

    /// Stacked-vector indexing for this network.
    pub fn indexing(&self) -> Indexing {
        Indexing::new(self)
    }

    /// Bus lookup by id.
    pub fn bus(&self, id: BusId) -> Option<&Bus> {
        self.buses
            .binary_search_by_key(&id, |b| b.id)
            .ok()
            .map(|pos| &self.buses[pos])
    }

    /// DG unit hosted at a bus, if any.
    pub fn dg_at(&self, id: BusId) -> Option<&DgUnit> {
        self.dg.iter().find(|d| d.bus == id)
    }

    /// Lines incident to a bus, with the index of each line in
    /// [`Network::lines`] and a flag telling whether the bus is the
    /// line's `from` end.
    pub fn lines_at(&self, id: BusId) -> Vec<(usize, bool)> {
        self.lines
            .iter()
            .enumerate()
            .filter_map(|(k, l)| {
                if l.from == id {
                    Some((k, true))
                } else if l.to == id {
                    Some((k, false))
                } else {
                    None
                }
            })
            .collect()
    }

    /// Assembles the bus admittance matrix over the stacked phase indexing.
    ///
    /// For every segment with series impedance `Z` and total shunt `Ys`,
    /// the block rows/columns of its two end buses receive
    ///
    /// * diagonal: `Z^{-1} + Ys/2`, embedded at the end bus's positions of
    ///   the segment phases (buses carrying more phases than the segment
    ///   get zero-padded rows/columns);
    /// * off-diagonal: `-Z^{-1}`, embedded likewise.
    ///
    /// Capacitor banks are *not* part of this matrix; they enter the bus
    /// balance equations separately as reactive injections.
    pub fn ybus(&self, idx: &Indexing) -> CMat {
        let n = idx.total();
        let mut y = CMat::zeros(n, n);
        for l in &self.lines {
            let yl = series_admittance(&l.z).expect("validated network has invertible impedances");
            let diag = &yl + &l.y_shunt * C64::new(0.5, 0.0);
            let from_phases = self.bus(l.from).expect("validated").phases;
            let to_phases = self.bus(l.to).expect("validated").phases;
            let fs = idx.bus_span(l.from).start;
            let ts = idx.bus_span(l.to).start;

            let dd = embed_line_block(&diag, l.phases, from_phases, from_phases);
            add_block(&mut y, fs, fs, &dd);
            let dd = embed_line_block(&diag, l.phases, to_phases, to_phases);
            add_block(&mut y, ts, ts, &dd);
            let off = embed_line_block(&(-&yl), l.phases, from_phases, to_phases);
            add_block(&mut y, fs, ts, &off);
            let off_t = embed_line_block(&(-&yl), l.phases, to_phases, from_phases);
            add_block(&mut y, ts, fs, &off_t);
        }
        y
    }

    /// Current flowing out of `from_slice`'s bus into a segment, including
    /// that end's half of the segment shunt:
    /// `i = (Ys/2 + Z^{-1}) v_from|_line - Z^{-1} v_to|_line`.
    ///
    /// `from_slice` / `to_slice` are the end buses' phasor slices over
    /// their own full phase sets.
    pub fn line_current(
        &self,
        line: &Line,
        from_slice: &CVec,
        from_phases: PhaseSet,
        to_slice: &CVec,
        to_phases: PhaseSet,
    ) -> CVec {
        let yl = series_admittance(&line.z).expect("validated network has invertible impedances");
        let vf = select_phases(from_slice, from_phases, line.phases);
        let vt = select_phases(to_slice, to_phases, line.phases);
        (&line.y_shunt * C64::new(0.5, 0.0) + &yl) * &vf - &yl * &vt
    }

    /// A flat (nominal) voltage profile: the PCC span takes `v0`, every
    /// other bus takes unit magnitude at the standard rotation
    /// `a: 0°, b: -120°, c: +120°`.
    pub fn nominal_profile(&self, idx: &Indexing) -> CVec {
        let mut v = CVec::zeros(idx.total());
        for (bus_id, phase, i) in idx.iter() {
            v[i] = if bus_id == self.pcc {
                let pcc_phases = self.bus(self.pcc).expect("validated").phases;
                self.v0[pcc_phases.position_of(phase).expect("pcc phase")]
            } else {
                let angle = match phase {
                    Phase::A => 0.0,
                    Phase::B => -120.0_f64.to_radians(),
                    Phase::C => 120.0_f64.to_radians(),
                };
                C64::new(angle.cos(), angle.sin())
            };
        }
        v
    }

    /// Total per-unit load, `(sum of p_load, sum of q_load)`.
    pub fn total_load(&self) -> (f64, f64) {
        let p = self.buses.iter().map(|b| b.p_load.iter().sum::<f64>()).sum();
        let q = self.buses.iter().map(|b| b.q_load.iter().sum::<f64>()).sum();
        (p, q)
    }
}

fn add_block(y: &mut CMat, row: usize, col: usize, block: &CMat) {
    for i in 0..block.nrows() {
        for j in 0..block.ncols() {
            y[(row + i, col + j)] += block[(i, j)];
        }
    }
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
