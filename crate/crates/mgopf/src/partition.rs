//! Splitting a network into areas for the decomposed relaxation.
//!
//! The decomposed solver assigns each area of a bus partition to its own
//! worker. A worker optimizes a local Hermitian block indexed not by its
//! own buses alone but by the area's *extension*: the area's buses plus
//! every outside bus reached by a line. Extensions of neighboring areas
//! overlap, and the workers reconcile the overlapping entries iteratively.
//!
//! Replacing one global positive-semidefinite constraint by one per local
//! block is only exact when the blocks tile the global matrix correctly.
//! Two structural conditions guarantee that:
//!
//! 1. the *area graph* — areas as vertices, with an edge wherever two
//!    extensions overlap — is a tree, and
//! 2. no extension is contained in another.
//!
//! Under those conditions the *index graph* (stacked voltage indices as
//! vertices, with an edge wherever some local block covers the pair) is
//! chordal and its maximal cliques are exactly the per-area blocks, so any
//! assignment of the blocks that is positive semidefinite block-by-block
//! and agrees on overlaps extends to a full positive-semidefinite matrix.
//! The decomposed relaxation therefore loses nothing against the central
//! one.
//!
//! [`build_plan`] validates the conditions and precomputes the index
//! bookkeeping the decomposed solver needs; [`verify_chordal`] re-derives
//! the chordality claim constructively — by maximum-cardinality search and
//! clique enumeration on the actual index graph — instead of trusting it.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::Serialize;
use thiserror::Error;

use crate::netmodel::{BusId, Indexing, Network};
use crate::sdpcore::HermMat;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

/// Why a proposed partition cannot be used for a decomposed solve.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PartitionError {
    /// The partition names no areas at all.
    #[error("the partition contains no areas")]
    NoAreas,
    /// An area has no buses.
    #[error("area {area} is empty")]
    EmptyArea {
        /// Index of the offending area.
        area: usize,
    },
    /// An area names a bus that does not exist in the network.
    #[error("area {area} names bus {bus}, which is not in the network")]
    UnknownBus {
        /// Index of the offending area.
        area: usize,
        /// The unknown bus id.
        bus: BusId,
    },
    /// A bus is claimed by two areas (or twice by the same area).
    #[error("bus {bus} appears in area {first} and again in area {second}")]
    DuplicateBus {
        /// The doubly-assigned bus.
        bus: BusId,
        /// Area of the first occurrence.
        first: usize,
        /// Area of the second occurrence.
        second: usize,
    },
    /// A bus belongs to no area.
    #[error("bus {bus} is not covered by any area")]
    UncoveredBus {
        /// The unassigned bus.
        bus: BusId,
    },
    /// The area graph contains a cycle, so it is not a tree.
    #[error("the area graph has the cycle {cycle:?}; overlapping extensions must form a tree")]
    MacroCycle {
        /// Area indices along the offending cycle.
        cycle: Vec<usize>,
    },
    /// The area graph is disconnected, so it is not a tree.
    #[error("the area graph is disconnected; overlapping extensions must form a tree")]
    MacroDisconnected,
    /// One extended area is contained in another, so its block would not
    /// be a maximal clique of the index graph.
    #[error("extended area {inner} is contained in extended area {outer}")]
    NestedExtendedAreas {
        /// Index of the contained area.
        inner: usize,
        /// Index of the containing area.
        outer: usize,
    },
    /// A matrix routed to an area touches indices outside that area's
    /// block — the constraint was assigned to the wrong worker.
    #[error("matrix support includes stacked index {index}, outside the block of area {area}")]
    SupportOutsideArea {
        /// The area the matrix was routed to.
        area: usize,
        /// A stacked voltage index outside the area's block.
        index: usize,
    },
}

// ---------------------------------------------------------------------------
// Plan data
// ---------------------------------------------------------------------------

/// One area of the partition: its own buses and their one-hop closure.
#[derive(Clone, Debug)]
pub struct AreaSet {
    /// Buses assigned to the area, ascending by id.
    pub core: Vec<BusId>,
    /// Core buses plus every bus of another area reached by a line,
    /// ascending by id. The area's local block is indexed by the stacked
    /// phases of these buses.
    pub extended: Vec<BusId>,
}

/// One edge of the area graph: a pair of areas whose extensions overlap,
/// together with the overlap itself.
#[derive(Clone, Debug)]
pub struct MacroEdge {
    /// Lower area index.
    pub l: usize,
    /// Higher area index.
    pub j: usize,
    /// Buses shared by the two extensions, ascending by id.
    pub buses: Vec<BusId>,
    /// Stacked voltage indices of the shared buses, in global order. Both
    /// sides address the shared entries in exactly this order.
    pub indices: Vec<usize>,
}

/// Bijection between the rows of one area's local block and the global
/// stacked voltage indices.
///
/// Local rows are ordered by ascending global index, so slicing a global
/// matrix through the map preserves the relative order of entries.
#[derive(Clone, Debug)]
pub struct LocalMap {
    global: Vec<usize>,
    local: Vec<Option<usize>>,
}

impl LocalMap {
    fn new(global: Vec<usize>, total: usize) -> Self {
        let mut local = vec![None; total];
        for (row, &g) in global.iter().enumerate() {
            local[g] = Some(row);
        }
        LocalMap { global, local }
    }

    /// Number of rows of the local block.
    pub fn len(&self) -> usize {
        self.global.len()
    }

    /// Whether the block is empty (never the case in a valid plan).
    pub fn is_empty(&self) -> bool {
        self.global.is_empty()
    }

    /// Global stacked index of a local row. Panics if `local` is out of
    /// range.
    pub fn global_of(&self, local: usize) -> usize {
        self.global[local]
    }

    /// Local row holding a global stacked index, if the block covers it.
    pub fn local_of(&self, global: usize) -> Option<usize> {
        self.local.get(global).copied().flatten()
    }

    /// All global indices covered by the block, ascending.
    pub fn globals(&self) -> &[usize] {
        &self.global
    }
}

/// A validated partition with every derived artifact the decomposed
/// solver needs: extensions, area-graph edges with shared index sets,
/// local index maps, and ownership of buses and lines.
#[derive(Clone, Debug)]
pub struct PartitionPlan {
    /// Areas, in input order.
    pub areas: Vec<AreaSet>,
    /// Area-graph edges, ordered by `(l, j)`.
    pub edges: Vec<MacroEdge>,
    /// Per-area local index maps, aligned with [`PartitionPlan::areas`].
    pub maps: Vec<LocalMap>,
    /// Areas at the two ends of each line, `(from, to)`, aligned with
    /// `Network::lines`.
    pub line_areas: Vec<(usize, usize)>,
    /// Area containing the PCC bus; its subproblem carries the reference
    /// pin.
    pub pcc_area: usize,
    owner: BTreeMap<BusId, usize>,
    total: usize,
}

impl PartitionPlan {
    /// Number of areas.
    pub fn area_count(&self) -> usize {
        self.areas.len()
    }

    /// Dimension of the global stacked voltage vector.
    pub fn stacked_dim(&self) -> usize {
        self.total
    }

    /// Area owning a bus, or `None` for an unknown id.
    pub fn area_of(&self, bus: BusId) -> Option<usize> {
        self.owner.get(&bus).copied()
    }

    /// Edges incident to an area, as `(edge index, other area)` pairs in
    /// edge order.
    pub fn neighbors(&self, area: usize) -> Vec<(usize, usize)> {
        self.edges
            .iter()
            .enumerate()
            .filter_map(|(k, e)| {
                if e.l == area {
                    Some((k, e.j))
                } else if e.j == area {
                    Some((k, e.l))
                } else {
                    None
                }
            })
            .collect()
    }

    /// Area owning a line's limit constraints: the lower of its two end
    /// areas, which is the end area itself for an interior line.
    pub fn line_owner(&self, line: usize) -> usize {
        let (a, b) = self.line_areas[line];
        a.min(b)
    }

    /// Whether a line crosses between two areas.
    pub fn line_is_tie(&self, line: usize) -> bool {
        let (a, b) = self.line_areas[line];
        a != b
    }

    /// Rows of area `side`'s local block holding the shared indices of
    /// `edge`, in the edge's index order. Both sides of an edge address
    /// the shared entries through this method, so the two slices are
    /// entrywise comparable.
    ///
    /// Panics if `side` is not an endpoint of `edge`.
    pub fn shared_local_rows(&self, edge: usize, side: usize) -> Vec<usize> {
        let e = &self.edges[edge];
        assert!(
            side == e.l || side == e.j,
            "area {side} is not an endpoint of edge {edge} ({}, {})",
            e.l,
            e.j
        );
        e.indices
            .iter()
            .map(|&g| {
                self.maps[side]
                    .local_of(g)
                    .expect("shared indices lie inside both endpoint blocks")
            })
            .collect()
    }

    /// Restrict a matrix on the global stacked indices to one area's
    /// block, in local row order. Traces against local blocks then match
    /// traces against the global matrix exactly, because every entry is
    /// carried over verbatim.
    ///
    /// Fails if the matrix touches an index outside the block: that means
    /// the constraint it encodes was routed to the wrong area.
    pub fn slice_local(&self, phi: &HermMat, area: usize) -> Result<HermMat, PartitionError> {
        let map = &self.maps[area];
        let mut out = HermMat::zeros(map.len());
        for (r, c, v) in phi.entries() {
            let lr = map
                .local_of(r)
                .ok_or(PartitionError::SupportOutsideArea { area, index: r })?;
            let lc = map
                .local_of(c)
                .ok_or(PartitionError::SupportOutsideArea { area, index: c })?;
            out.add(lr, lc, v);
        }
        Ok(out)
    }

    /// The index graph induced by the per-area blocks: one vertex per
    /// stacked voltage index, with each block contributing a clique.
    pub fn index_graph(&self) -> IndexGraph {
        let cliques: Vec<Vec<usize>> = self.maps.iter().map(|m| m.globals().to_vec()).collect();
        IndexGraph::from_cliques(self.total, &cliques)
    }

    /// Serializable digest of the plan for reports and logs.
    pub fn summary(&self) -> PlanSummary {
        PlanSummary {
            areas: self
                .areas
                .iter()
                .map(|a| a.core.iter().map(|b| b.0).collect())
                .collect(),
            extended: self
                .areas
                .iter()
                .map(|a| a.extended.iter().map(|b| b.0).collect())
                .collect(),
            edges: self
                .edges
                .iter()
                .map(|e| EdgeSummary {
                    l: e.l,
                    j: e.j,
                    shared_buses: e.buses.iter().map(|b| b.0).collect(),
                    shared_indices: e.indices.len(),
                })
                .collect(),
            pcc_area: self.pcc_area,
            stacked_dim: self.total,
        }
    }
}

/// Flat summary of a plan, shaped for JSON output.
#[derive(Clone, Debug, Serialize)]
pub struct PlanSummary {
    /// Bus ids of each area.
    pub areas: Vec<Vec<usize>>,
    /// Bus ids of each extended area.
    pub extended: Vec<Vec<usize>>,
    /// Area-graph edges.
    pub edges: Vec<EdgeSummary>,
    /// Area holding the PCC pin.
    pub pcc_area: usize,
    /// Dimension of the global stacked voltage vector.
    pub stacked_dim: usize,
}

/// One area-graph edge in a [`PlanSummary`].
#[derive(Clone, Debug, Serialize)]
pub struct EdgeSummary {
    /// Lower area index.
    pub l: usize,
    /// Higher area index.
    pub j: usize,
    /// Bus ids shared by the two extensions.
    pub shared_buses: Vec<usize>,
    /// Number of stacked voltage indices the two sides reconcile.
    pub shared_indices: usize,
}

// ---------------------------------------------------------------------------
// Plan construction
// ---------------------------------------------------------------------------

/// Validate a partition of the buses into areas and derive the full plan.
///
/// `areas` must cover every bus exactly once. The derived area graph must
/// be a tree and no extension may contain another; both conditions are
/// checked here, before any solver work, and violations carry the
/// offending cycle or pair.
pub fn build_plan(
    net: &Network,
    idx: &Indexing,
    areas: &[Vec<BusId>],
) -> Result<PartitionPlan, PartitionError> {
    if areas.is_empty() {
        return Err(PartitionError::NoAreas);
    }
    let nb = net.buses.len();
    let count = areas.len();

    // Ownership: every bus in exactly one area.
    let mut owner_pos: Vec<Option<usize>> = vec![None; nb];
    for (a, members) in areas.iter().enumerate() {
        if members.is_empty() {
            return Err(PartitionError::EmptyArea { area: a });
        }
        for &bus in members {
            let pos = idx
                .bus_pos(bus)
                .ok_or(PartitionError::UnknownBus { area: a, bus })?;
            if let Some(first) = owner_pos[pos] {
                return Err(PartitionError::DuplicateBus {
                    bus,
                    first,
                    second: a,
                });
            }
            owner_pos[pos] = Some(a);
        }
    }
    if let Some(pos) = owner_pos.iter().position(|o| o.is_none()) {
        return Err(PartitionError::UncoveredBus {
            bus: net.buses[pos].id,
        });
    }
    let bus_area: Vec<usize> = owner_pos.into_iter().map(|o| o.unwrap()).collect();

    // Bus adjacency over bus positions.
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); nb];
    for line in &net.lines {
        let f = idx.bus_pos(line.from).expect("validated network");
        let t = idx.bus_pos(line.to).expect("validated network");
        adj[f].insert(t);
        adj[t].insert(f);
    }

    // Cores and their one-hop extensions, as position sets.
    let mut core: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); count];
    for (pos, &a) in bus_area.iter().enumerate() {
        core[a].insert(pos);
    }
    let ext: Vec<BTreeSet<usize>> = core
        .iter()
        .map(|c| {
            let mut e = c.clone();
            for &m in c {
                e.extend(adj[m].iter().copied());
            }
            e
        })
        .collect();

    // Area-graph edges from overlapping extensions.
    let mut raw_edges: Vec<(usize, usize, Vec<usize>)> = Vec::new();
    for l in 0..count {
        for j in l + 1..count {
            let shared: Vec<usize> = ext[l].intersection(&ext[j]).copied().collect();
            if !shared.is_empty() {
                raw_edges.push((l, j, shared));
            }
        }
    }

    // The area graph must be a tree: acyclic first (naming a cycle), then
    // connected.
    let mut area_adj: Vec<Vec<usize>> = vec![Vec::new(); count];
    for &(l, j, _) in &raw_edges {
        area_adj[l].push(j);
        area_adj[j].push(l);
    }
    if let Some(cycle) = find_cycle(&area_adj) {
        return Err(PartitionError::MacroCycle { cycle });
    }
    if count > 1 && reachable_from(&area_adj, 0) < count {
        return Err(PartitionError::MacroDisconnected);
    }

    // No extension may contain another (equality included).
    for l in 0..count {
        for j in 0..count {
            if l != j && ext[l].is_subset(&ext[j]) {
                return Err(PartitionError::NestedExtendedAreas { inner: l, outer: j });
            }
        }
    }

    // Assemble the bookkeeping.
    let ids_of = |set: &BTreeSet<usize>| -> Vec<BusId> {
        set.iter().map(|&p| net.buses[p].id).collect()
    };
    let span_of = |set: &[usize]| -> Vec<usize> {
        set.iter()
            .flat_map(|&p| idx.bus_span(net.buses[p].id))
            .collect()
    };
    let areas_out: Vec<AreaSet> = (0..count)
        .map(|a| AreaSet {
            core: ids_of(&core[a]),
            extended: ids_of(&ext[a]),
        })
        .collect();
    let maps: Vec<LocalMap> = ext
        .iter()
        .map(|e| {
            let positions: Vec<usize> = e.iter().copied().collect();
            LocalMap::new(span_of(&positions), idx.total())
        })
        .collect();
    let edges: Vec<MacroEdge> = raw_edges
        .into_iter()
        .map(|(l, j, shared)| MacroEdge {
            l,
            j,
            buses: shared.iter().map(|&p| net.buses[p].id).collect(),
            indices: span_of(&shared),
        })
        .collect();
    let line_areas: Vec<(usize, usize)> = net
        .lines
        .iter()
        .map(|line| {
            let f = idx.bus_pos(line.from).expect("validated network");
            let t = idx.bus_pos(line.to).expect("validated network");
            (bus_area[f], bus_area[t])
        })
        .collect();
    let owner: BTreeMap<BusId, usize> = bus_area
        .iter()
        .enumerate()
        .map(|(pos, &a)| (net.buses[pos].id, a))
        .collect();
    let pcc_area = *owner.get(&net.pcc).expect("validated network has its PCC bus");

    Ok(PartitionPlan {
        areas: areas_out,
        edges,
        maps,
        line_areas,
        pcc_area,
        owner,
        total: idx.total(),
    })
}

/// First cycle found in an undirected graph, as a vertex sequence, or
/// `None` when the graph is a forest.
fn find_cycle(adj: &[Vec<usize>]) -> Option<Vec<usize>> {
    fn dfs(
        v: usize,
        from: usize,
        adj: &[Vec<usize>],
        state: &mut [u8],
        parent: &mut [usize],
    ) -> Option<(usize, usize)> {
        state[v] = 1;
        for &w in &adj[v] {
            if w == from {
                continue;
            }
            match state[w] {
                0 => {
                    parent[w] = v;
                    if let Some(found) = dfs(w, v, adj, state, parent) {
                        return Some(found);
                    }
                }
                1 => return Some((v, w)),
                _ => {}
            }
        }
        state[v] = 2;
        None
    }

    let n = adj.len();
    let mut state = vec![0u8; n];
    let mut parent = vec![usize::MAX; n];
    for root in 0..n {
        if state[root] != 0 {
            continue;
        }
        if let Some((v, w)) = dfs(root, usize::MAX, adj, &mut state, &mut parent) {
            // `w` is an ancestor of `v`; walk the tree path back up.
            let mut cycle = vec![v];
            let mut cur = v;
            while cur != w {
                cur = parent[cur];
                cycle.push(cur);
            }
            cycle.reverse();
            return Some(cycle);
        }
    }
    None
}

/// Number of vertices reachable from `start`.
fn reachable_from(adj: &[Vec<usize>], start: usize) -> usize {
    let mut seen = vec![false; adj.len()];
    seen[start] = true;
    let mut queue = VecDeque::from([start]);
    let mut count = 1;
    while let Some(v) = queue.pop_front() {
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                count += 1;
                queue.push_back(w);
            }
        }
    }
    count
}

// ---------------------------------------------------------------------------
// Index graph and chordality
// ---------------------------------------------------------------------------

/// Simple undirected graph on the stacked voltage indices (or on any
/// vertex set, for testing), stored as adjacency sets.
#[derive(Clone, Debug)]
pub struct IndexGraph {
    adj: Vec<BTreeSet<usize>>,
}

impl IndexGraph {
    /// Union of cliques: each listed vertex set becomes fully connected.
    /// A two-element clique is a plain edge, so arbitrary graphs can be
    /// described this way too.
    pub fn from_cliques(n: usize, cliques: &[Vec<usize>]) -> IndexGraph {
        let mut adj = vec![BTreeSet::new(); n];
        for clique in cliques {
            for (i, &u) in clique.iter().enumerate() {
                assert!(u < n, "clique vertex {u} out of range for {n} vertices");
                for &v in &clique[i + 1..] {
                    if u != v {
                        adj[u].insert(v);
                        adj[v].insert(u);
                    }
                }
            }
        }
        IndexGraph { adj }
    }

    /// Number of vertices.
    pub fn vertex_count(&self) -> usize {
        self.adj.len()
    }

    /// Number of edges.
    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(BTreeSet::len).sum::<usize>() / 2
    }

    /// Whether `u` and `v` are adjacent.
    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.adj[u].contains(&v)
    }

    /// Neighbors of a vertex, ascending.
    pub fn neighbors(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.adj[v].iter().copied()
    }

    /// Maximum-cardinality search: repeatedly visit the unvisited vertex
    /// with the most visited neighbors (smallest index on ties). Returns
    /// the visit order; its reverse is a perfect elimination ordering
    /// exactly when the graph is chordal.
    pub fn mcs_order(&self) -> Vec<usize> {
        let n = self.adj.len();
        let mut weight = vec![0usize; n];
        let mut visited = vec![false; n];
        let mut order = Vec::with_capacity(n);
        for _ in 0..n {
            let v = (0..n)
                .filter(|&u| !visited[u])
                .max_by_key(|&u| (weight[u], std::cmp::Reverse(u)))
                .expect("some vertex is always unvisited inside the loop");
            visited[v] = true;
            order.push(v);
            for &w in &self.adj[v] {
                if !visited[w] {
                    weight[w] += 1;
                }
            }
        }
        order
    }

    /// Decide chordality: `Ok` carries a perfect elimination ordering
    /// (first vertex eliminated first), `Err` carries a chordless cycle
    /// of length at least four.
    ///
    /// The verdict comes from maximum-cardinality search plus the
    /// standard single-parent check of the reversed order; the
    /// counterexample, when needed, is reconstructed from scratch so it
    /// is a genuine cycle regardless of where the check tripped.
    pub fn chordality(&self) -> Result<Vec<usize>, Vec<usize>> {
        let mut elimination = self.mcs_order();
        elimination.reverse();
        let n = self.adj.len();
        let mut pos = vec![0usize; n];
        for (i, &v) in elimination.iter().enumerate() {
            pos[v] = i;
        }
        for &v in &elimination {
            let mut later: Vec<usize> = self.adj[v]
                .iter()
                .copied()
                .filter(|&w| pos[w] > pos[v])
                .collect();
            if later.len() < 2 {
                continue;
            }
            later.sort_by_key(|&w| pos[w]);
            let parent = later[0];
            if later[1..].iter().any(|u| !self.adj[parent].contains(u)) {
                let cycle = self
                    .chordless_cycle()
                    .expect("a failed elimination check implies a chordless cycle");
                return Err(cycle);
            }
        }
        Ok(elimination)
    }

    /// Verify an ordering against the full definition: every vertex's
    /// neighbors that come later in the ordering must be pairwise
    /// adjacent. Quadratic; meant for checking proofs, not producing
    /// them.
    pub fn is_perfect_elimination(&self, order: &[usize]) -> bool {
        let n = self.adj.len();
        if order.len() != n {
            return false;
        }
        let mut pos = vec![usize::MAX; n];
        for (i, &v) in order.iter().enumerate() {
            if v >= n || pos[v] != usize::MAX {
                return false;
            }
            pos[v] = i;
        }
        order.iter().all(|&v| {
            let later: Vec<usize> = self.adj[v]
                .iter()
                .copied()
                .filter(|&w| pos[w] > pos[v])
                .collect();
            later
                .iter()
                .enumerate()
                .all(|(i, &a)| later[i + 1..].iter().all(|&b| self.adj[a].contains(&b)))
        })
    }

    /// All maximal cliques, each sorted ascending, in lexicographic
    /// order. Uses pivoted branch-and-bound enumeration; intended for
    /// graphs that are unions of few cliques, where the output is small.
    pub fn maximal_cliques(&self) -> Vec<Vec<usize>> {
        fn expand(
            g: &IndexGraph,
            current: &mut Vec<usize>,
            candidates: Vec<usize>,
            excluded: Vec<usize>,
            out: &mut Vec<Vec<usize>>,
        ) {
            if candidates.is_empty() && excluded.is_empty() {
                let mut clique = current.clone();
                clique.sort_unstable();
                out.push(clique);
                return;
            }
            // Pivot on the vertex covering the most candidates; smallest
            // index breaks ties so the output order is reproducible.
            let pivot = candidates
                .iter()
                .chain(excluded.iter())
                .copied()
                .max_by_key(|&u| {
                    let cover = candidates.iter().filter(|w| g.adj[u].contains(w)).count();
                    (cover, std::cmp::Reverse(u))
                })
                .expect("candidate or excluded set is nonempty");
            let branches: Vec<usize> = candidates
                .iter()
                .copied()
                .filter(|v| !g.adj[pivot].contains(v))
                .collect();
            let mut candidates = candidates;
            let mut excluded = excluded;
            for v in branches {
                let next_candidates: Vec<usize> = candidates
                    .iter()
                    .copied()
                    .filter(|w| g.adj[v].contains(w))
                    .collect();
                let next_excluded: Vec<usize> = excluded
                    .iter()
                    .copied()
                    .filter(|w| g.adj[v].contains(w))
                    .collect();
                current.push(v);
                expand(g, current, next_candidates, next_excluded, out);
                current.pop();
                candidates.retain(|&w| w != v);
                excluded.push(v);
            }
        }

        let mut out = Vec::new();
        let mut current = Vec::new();
        expand(
            self,
            &mut current,
            (0..self.adj.len()).collect(),
            Vec::new(),
            &mut out,
        );
        out.sort();
        out
    }

    /// Exhaustively search for a chordless cycle of length at least four
    /// by extending induced paths. Independent of [`Self::chordality`]
    /// and used to cross-check it; exponential in principle, fast on
    /// small or nearly-chordal graphs because induced paths die quickly.
    pub fn chordless_cycle_by_enumeration(&self) -> Option<Vec<usize>> {
        fn extend(
            g: &IndexGraph,
            start: usize,
            path: &mut Vec<usize>,
            on_path: &mut [bool],
        ) -> Option<Vec<usize>> {
            let last = *path.last().expect("path is never empty");
            for w in g.neighbors(last) {
                if w < start || on_path[w] {
                    continue;
                }
                // Keeping the path induced: `w` may touch only its
                // predecessor among the interior vertices.
                if path[1..path.len() - 1].iter().any(|&u| g.has_edge(w, u)) {
                    continue;
                }
                if g.has_edge(w, start) {
                    // `w` closes a cycle through `start`. Every interior
                    // vertex was kept non-adjacent to `start` and to the
                    // rest of the path, so the cycle is chordless.
                    // Require length >= 4 and fix the direction; a vertex
                    // adjacent to `start` can never be interior, so do
                    // not extend through it either way.
                    if path.len() >= 3 && path[1] < w {
                        let mut cycle = path.clone();
                        cycle.push(w);
                        return Some(cycle);
                    }
                    continue;
                }
                path.push(w);
                on_path[w] = true;
                if let Some(cycle) = extend(g, start, path, on_path) {
                    return Some(cycle);
                }
                path.pop();
                on_path[w] = false;
            }
            None
        }

        let n = self.adj.len();
        let mut on_path = vec![false; n];
        for start in 0..n {
            on_path[start] = true;
            for first in self.neighbors(start).filter(|&v| v > start) {
                let mut path = vec![start, first];
                on_path[first] = true;
                if let Some(cycle) = extend(self, start, &mut path, &mut on_path) {
                    return Some(cycle);
                }
                on_path[first] = false;
            }
            on_path[start] = false;
        }
        None
    }

    /// Whether exhaustive enumeration finds no chordless cycle. See
    /// [`Self::chordless_cycle_by_enumeration`].
    pub fn chordal_by_enumeration(&self) -> bool {
        self.chordless_cycle_by_enumeration().is_none()
    }

    /// Find a chordless cycle of length at least four, if one exists, in
    /// polynomial time: for every vertex `v` with two non-adjacent
    /// neighbors `u`, `w`, look for a shortest `u`–`w` path avoiding `v`
    /// and the rest of `v`'s neighborhood. Such a path plus `v` is a
    /// chordless cycle, and on a non-chordal graph some triple always
    /// yields one.
    fn chordless_cycle(&self) -> Option<Vec<usize>> {
        let n = self.adj.len();
        for v in 0..n {
            let nb: Vec<usize> = self.adj[v].iter().copied().collect();
            for (i, &u) in nb.iter().enumerate() {
                for &w in &nb[i + 1..] {
                    if self.adj[u].contains(&w) {
                        continue;
                    }
                    let mut blocked = vec![false; n];
                    blocked[v] = true;
                    for &x in &nb {
                        blocked[x] = true;
                    }
                    blocked[u] = false;
                    blocked[w] = false;
                    if let Some(path) = shortest_path(&self.adj, u, w, &blocked) {
                        let mut cycle = vec![v];
                        cycle.extend(path);
                        return Some(cycle);
                    }
                }
            }
        }
        None
    }
}

/// Shortest path from `u` to `w` through unblocked vertices, inclusive of
/// the endpoints.
fn shortest_path(
    adj: &[BTreeSet<usize>],
    u: usize,
    w: usize,
    blocked: &[bool],
) -> Option<Vec<usize>> {
    let n = adj.len();
    let mut parent = vec![usize::MAX; n];
    let mut seen = vec![false; n];
    seen[u] = true;
    let mut queue = VecDeque::from([u]);
    while let Some(x) = queue.pop_front() {
        for &y in &adj[x] {
            if blocked[y] || seen[y] {
                continue;
            }
            seen[y] = true;
            parent[y] = x;
            if y == w {
                let mut path = vec![w];
                let mut cur = w;
                while cur != u {
                    cur = parent[cur];
                    path.push(cur);
                }
                path.reverse();
                return Some(path);
            }
            queue.push_back(y);
        }
    }
    None
}

// ---------------------------------------------------------------------------
// Plan-level chordality verification
// ---------------------------------------------------------------------------

/// Constructive evidence that a plan's index graph is chordal and tiled
/// by the per-area blocks.
#[derive(Clone, Debug)]
pub struct ChordalProof {
    /// A perfect elimination ordering (first vertex eliminated first).
    pub elimination: Vec<usize>,
    /// All maximal cliques of the index graph, sorted.
    pub maximal_cliques: Vec<Vec<usize>>,
    /// Whether the maximal cliques are exactly the per-area blocks.
    pub cliques_are_area_blocks: bool,
}

/// Outcome of [`verify_chordal`].
#[derive(Clone, Debug)]
pub enum Chordality {
    /// The index graph is chordal; the proof object carries the evidence.
    Chordal(ChordalProof),
    /// A chordless cycle of length at least four.
    NotChordal {
        /// The offending cycle, as stacked voltage indices.
        cycle: Vec<usize>,
    },
}

impl Chordality {
    /// Whether the verdict is chordal.
    pub fn is_chordal(&self) -> bool {
        matches!(self, Chordality::Chordal(_))
    }
}

/// Re-derive the chordality the plan's validity conditions promise:
/// run maximum-cardinality search on the actual index graph, and check
/// that the maximal cliques found by enumeration are exactly the
/// per-area blocks.
pub fn verify_chordal(plan: &PartitionPlan) -> Chordality {
    let graph = plan.index_graph();
    match graph.chordality() {
        Err(cycle) => Chordality::NotChordal { cycle },
        Ok(elimination) => {
            let maximal_cliques = graph.maximal_cliques();
            let mut blocks: Vec<Vec<usize>> =
                plan.maps.iter().map(|m| m.globals().to_vec()).collect();
            blocks.sort();
            let cliques_are_area_blocks = maximal_cliques == blocks;
            Chordality::Chordal(ChordalProof {
                elimination,
                maximal_cliques,
                cliques_are_area_blocks,
            })
        }
    }
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
