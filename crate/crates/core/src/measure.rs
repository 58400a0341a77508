//! Finite positive measures on a network and the flat (bounded-Lipschitz)
//! metric between them.
//!
//! The state of the transport problem is a weighted sum of point masses.
//! Distances between states are measured in the dual norm
//! `sup { <mu - nu, phi> : ||phi||_inf + Lip(phi) <= 1 }`, which metrizes
//! weak convergence while staying sensitive to how far mass has moved.
//!
//! Two independent evaluations are provided: [`flat_distance`] solves the
//! dual program over test-function values at the joint support, and
//! [`flat_distance_flow`] solves the primal partial-transport problem by
//! successive shortest paths. They must agree to 1e-9 relative; the pair
//! cross-checks the single most-used diagnostic in the crate.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::graph::{ArcId, CanonicalPoint, GraphPoint, MetricGraph, ValidationReport, VertexId};
use crate::lp;
use crate::routing::PiecewiseConstant;

#[derive(Debug, Error)]
pub enum MeasureError {
    #[error("measure is bound to graph {bound} but graph {given} was supplied")]
    GraphMismatch { bound: u64, given: u64 },
    #[error("measures live on different graphs ({0} vs {1})")]
    CrossGraph(u64, u64),
    #[error("atom mass {0} is negative or not finite")]
    BadMass(f64),
    #[error(transparent)]
    Graph(#[from] crate::graph::GraphError),
    #[error("flat-metric program failed: {0}")]
    Lp(#[from] lp::LpError),
    #[error("flat-metric value {value} outside certified range [0, {bound}]")]
    Unstable { value: f64, bound: f64 },
}

/// One point mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Atom {
    pub point: GraphPoint,
    pub mass: f64,
}

/// A finite positive measure given as weighted atoms, bound to the graph it
/// lives on. Values are immutable snapshots; all operations return new ones.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomicMeasure {
    graph_id: u64,
    atoms: Vec<Atom>,
}

impl AtomicMeasure {
    pub fn empty(g: &MetricGraph) -> Self {
        Self {
            graph_id: g.id(),
            atoms: Vec::new(),
        }
    }

    pub fn from_atoms(
        g: &MetricGraph,
        atoms: Vec<(GraphPoint, f64)>,
    ) -> Result<Self, MeasureError> {
        let mut out = Vec::with_capacity(atoms.len());
        for (point, mass) in atoms {
            g.check_point(point)?;
            if !(mass >= 0.0 && mass.is_finite()) {
                return Err(MeasureError::BadMass(mass));
            }
            out.push(Atom { point, mass });
        }
        Ok(Self {
            graph_id: g.id(),
            atoms: out,
        })
    }

    pub(crate) fn from_raw(graph_id: u64, atoms: Vec<Atom>) -> Self {
        Self { graph_id, atoms }
    }

    pub fn graph_id(&self) -> u64 {
        self.graph_id
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.mass).sum()
    }

    /// Restriction to one arc; summing the restrictions over all arcs
    /// reassembles the measure.
    pub fn restrict(&self, g: &MetricGraph, arc: ArcId) -> Result<AtomicMeasure, MeasureError> {
        self.check_graph(g)?;
        if arc >= g.num_arcs() {
            return Err(crate::graph::GraphError::UnknownArc(format!("#{arc}")).into());
        }
        Ok(Self {
            graph_id: self.graph_id,
            atoms: self
                .atoms
                .iter()
                .filter(|a| a.point.arc == arc)
                .copied()
                .collect(),
        })
    }

    /// Drops atoms with mass strictly below `eps_mass` and reports the
    /// removed total, so ledgers stay exact.
    pub fn prune(&self, eps_mass: f64) -> (AtomicMeasure, f64) {
        let mut lost = 0.0;
        let mut kept = Vec::with_capacity(self.atoms.len());
        for a in &self.atoms {
            if a.mass < eps_mass {
                lost += a.mass;
            } else {
                kept.push(*a);
            }
        }
        (
            Self {
                graph_id: self.graph_id,
                atoms: kept,
            },
            lost,
        )
    }

    pub fn scaled(&self, c: f64) -> AtomicMeasure {
        Self {
            graph_id: self.graph_id,
            atoms: self
                .atoms
                .iter()
                .map(|a| Atom {
                    point: a.point,
                    mass: a.mass * c,
                })
                .collect(),
        }
    }

    pub(crate) fn check_graph(&self, g: &MetricGraph) -> Result<(), MeasureError> {
        if self.graph_id != g.id() {
            Err(MeasureError::GraphMismatch {
                bound: self.graph_id,
                given: g.id(),
            })
        } else {
            Ok(())
        }
    }
}

/// `p`-moment of a measure about a center point: `sum_i m_i d(x_i, c)^p`.
pub fn p_moment(g: &MetricGraph, m: &AtomicMeasure, center: GraphPoint, p: u32) -> f64 {
    m.atoms
        .iter()
        .map(|a| a.mass * g.distance(a.point, center).powi(p as i32))
        .sum()
}

// ---------------------------------------------------------------------------
// Flat metric, dual route (linear program over test-function values).
// ---------------------------------------------------------------------------

/// A support node of the dual program: canonical location, representative
/// coordinates and the signed weight of `mu - nu` concentrated there.
struct SupportNode {
    pos: GraphPoint,
    weight: f64,
}

/// Flat-metric distance via the dual program.
///
/// Variables are `phi` at every canonical support point (plus the graph
/// vertices as relay nodes), together with budget scalars `b, l >= 0`,
/// `b + l <= 1`, under `|phi_i| <= b` and the Lipschitz constraints
/// `|phi_i - phi_j| <= l d(x_i, x_j)`. The Lipschitz rows are imposed on
/// consecutive nodes along each arc; every skipped pair is implied by the
/// chain through intermediate nodes because consecutive metric gaps sum to
/// the geodesic length, so the reduced program has the same value as the
/// all-pairs one. Any feasible vector extends to the whole network by
/// Lipschitz extension clamped to `[-b, b]`, hence the optimum equals the
/// supremum over test functions.
pub fn flat_distance(
    g: &MetricGraph,
    mu: &AtomicMeasure,
    nu: &AtomicMeasure,
) -> Result<f64, MeasureError> {
    mu.check_graph(g)?;
    nu.check_graph(g)?;
    if mu.graph_id != nu.graph_id {
        return Err(MeasureError::CrossGraph(mu.graph_id, nu.graph_id));
    }

    let nodes = support_nodes(g, mu, nu, true);
    if nodes.values().all(|n| n.weight == 0.0) {
        return Ok(0.0);
    }

    let keys: Vec<&NodeKey> = nodes.keys().collect();
    let index: BTreeMap<&NodeKey, usize> = keys.iter().copied().zip(0..).collect();
    let n = keys.len();
    let b_var = n;
    let l_var = n + 1;

    let mut rows: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
    for i in 0..n {
        rows.push((vec![(i, 1.0), (b_var, -1.0)], 0.0));
        rows.push((vec![(i, -1.0), (b_var, -1.0)], 0.0));
    }
    // Lipschitz chain per arc: tail vertex, interior nodes by coordinate,
    // head vertex when the arc is bounded.
    for (j, arc) in g.arcs().iter().enumerate() {
        let mut chain: Vec<usize> = Vec::new();
        if let Some(&i) = index.get(&NodeKey::Vertex(arc.tail)) {
            chain.push(i);
        }
        for (key, _) in nodes.range(NodeKey::interior_range(j)) {
            chain.push(index[key]);
        }
        if !arc.is_unbounded() {
            if let Some(&i) = index.get(&NodeKey::Vertex(arc.head)) {
                chain.push(i);
            }
        }
        for w in chain.windows(2) {
            let (a, b) = (w[0], w[1]);
            let d = g.distance(node_pos(&nodes, keys[a]), node_pos(&nodes, keys[b]));
            rows.push((vec![(a, 1.0), (b, -1.0), (l_var, -d)], 0.0));
            rows.push((vec![(b, 1.0), (a, -1.0), (l_var, -d)], 0.0));
        }
    }
    rows.push((vec![(b_var, 1.0), (l_var, 1.0)], 1.0));
    rows.push((vec![(b_var, -1.0)], 0.0));
    rows.push((vec![(l_var, -1.0)], 0.0));

    let mut objective = vec![0.0; n + 2];
    for (key, node) in &nodes {
        objective[index[key]] = node.weight;
    }

    let sol = lp::maximize(n + 2, &rows, &objective)?;
    // The value is certified to lie in [0, total variation]; anything else
    // is a numerical breakdown and must not be reported as a distance.
    let tv: f64 = nodes.values().map(|n| n.weight.abs()).sum();
    if sol.value < -1e-7 * (1.0 + tv) || sol.value > tv * (1.0 + 1e-7) + 1e-9 {
        return Err(MeasureError::Unstable {
            value: sol.value,
            bound: tv,
        });
    }
    Ok(sol.value.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum NodeKey {
    Vertex(VertexId),
    /// Interior point keyed by the coordinate's bit pattern; for positive
    /// finite floats bit order equals numeric order.
    Interior(ArcId, u64),
}

impl NodeKey {
    fn interior_range(arc: ArcId) -> std::ops::RangeInclusive<NodeKey> {
        NodeKey::Interior(arc, 0)..=NodeKey::Interior(arc, u64::MAX)
    }
}

fn node_pos(nodes: &BTreeMap<NodeKey, SupportNode>, key: &NodeKey) -> GraphPoint {
    nodes[key].pos
}

/// Support points closer than this along an arc are folded together before
/// either flat-metric route runs. Exit-time bisection leaves position jitter
/// around 1e-10 between runs at different levels; such near-duplicate nodes
/// make the dual program needlessly ill-conditioned, while folding them
/// moves weight by at most `CLUSTER_EPS` and therefore perturbs the metric
/// by at most `CLUSTER_EPS` per unit mass.
const CLUSTER_EPS: f64 = 1e-9;

/// Interior support coordinates are snapped to this dyadic grid (2^-27,
/// about 7.5e-9). Around a cycle the Lipschitz chain distances sum to the
/// cycle length up to position jitter; on the grid the cancellation is
/// exact instead of leaving a ~1e-9 residual, which would otherwise surface
/// inside the dual simplex as a catastrophically tiny pivot. Snapping moves
/// weight by at most half a grid step per unit mass, and both metric routes
/// see the same snapped support.
const QUANTUM: f64 = 1.0 / (1u64 << 27) as f64;

fn quantize(s: f64) -> f64 {
    (s / QUANTUM).round() * QUANTUM
}

/// Aggregates `mu - nu` over canonical locations. With `with_relays` the
/// graph vertices are always included (weight zero when unoccupied) so that
/// Lipschitz chains can cross junctions.
fn support_nodes(
    g: &MetricGraph,
    mu: &AtomicMeasure,
    nu: &AtomicMeasure,
    with_relays: bool,
) -> BTreeMap<NodeKey, SupportNode> {
    let mut nodes: BTreeMap<NodeKey, SupportNode> = BTreeMap::new();
    if with_relays {
        for v in 0..g.num_vertices() {
            if let Some(pos) = vertex_position(g, v) {
                nodes.insert(NodeKey::Vertex(v), SupportNode { pos, weight: 0.0 });
            }
        }
    }
    let mut add = |point: GraphPoint, mass: f64| {
        let (key, pos) = match g.canonical(point) {
            CanonicalPoint::Vertex(v) => (
                NodeKey::Vertex(v),
                vertex_position(g, v).unwrap_or(point),
            ),
            CanonicalPoint::Interior(arc, s) => {
                let q = quantize(s).clamp(0.0, g.arc(arc).length);
                match g.canonical(GraphPoint::new(arc, q)) {
                    CanonicalPoint::Vertex(v) => (
                        NodeKey::Vertex(v),
                        vertex_position(g, v).unwrap_or(point),
                    ),
                    CanonicalPoint::Interior(arc, q) => {
                        (NodeKey::Interior(arc, q.to_bits()), GraphPoint::new(arc, q))
                    }
                }
            }
        };
        nodes
            .entry(key)
            .and_modify(|n| n.weight += mass)
            .or_insert(SupportNode { pos, weight: mass });
    };
    for a in &mu.atoms {
        add(a.point, a.mass);
    }
    for a in &nu.atoms {
        add(a.point, -a.mass);
    }
    cluster_nodes(g, &mut nodes);
    if !with_relays {
        nodes.retain(|_, n| n.weight != 0.0);
    }
    nodes
}

/// Folds interior nodes within `CLUSTER_EPS` of each other (or of an arc
/// endpoint) into one node, sweeping each arc in ascending coordinate.
fn cluster_nodes(g: &MetricGraph, nodes: &mut BTreeMap<NodeKey, SupportNode>) {
    for (arc, info) in g.arcs().iter().enumerate() {
        let interior: Vec<(NodeKey, f64)> = nodes
            .range(NodeKey::interior_range(arc))
            .map(|(k, n)| (*k, n.pos.s))
            .collect();
        if interior.is_empty() {
            continue;
        }
        let mut kept: Option<(NodeKey, f64)> = None;
        for (key, s) in interior {
            let fold_into = if s <= CLUSTER_EPS {
                Some(NodeKey::Vertex(info.tail))
            } else if info.length - s <= CLUSTER_EPS {
                Some(NodeKey::Vertex(info.head))
            } else {
                match kept {
                    Some((kept_key, kept_s)) if s - kept_s <= CLUSTER_EPS => Some(kept_key),
                    _ => None,
                }
            };
            match fold_into {
                Some(target) => {
                    let weight = nodes.remove(&key).expect("node exists").weight;
                    let pos = vertex_or_existing_pos(g, nodes, target, arc);
                    nodes
                        .entry(target)
                        .and_modify(|n| n.weight += weight)
                        .or_insert(SupportNode { pos, weight });
                }
                None => kept = Some((key, s)),
            }
        }
    }
}

fn vertex_or_existing_pos(
    g: &MetricGraph,
    nodes: &BTreeMap<NodeKey, SupportNode>,
    key: NodeKey,
    fallback_arc: usize,
) -> GraphPoint {
    if let Some(n) = nodes.get(&key) {
        return n.pos;
    }
    match key {
        NodeKey::Vertex(v) => vertex_position(g, v)
            .unwrap_or_else(|| GraphPoint::new(fallback_arc, g.arc(fallback_arc).length)),
        NodeKey::Interior(arc, bits) => GraphPoint::new(arc, f64::from_bits(bits)),
    }
}

/// A finite representative location for a vertex, if one exists (the head of
/// an unbounded arc with no other incidences has none, and can never carry
/// an atom anyway).
fn vertex_position(g: &MetricGraph, v: VertexId) -> Option<GraphPoint> {
    if let Some(&j) = g.outgoing(v).first() {
        return Some(GraphPoint::new(j, 0.0));
    }
    g.incoming(v)
        .iter()
        .find(|&&j| !g.arc(j).is_unbounded())
        .map(|&j| GraphPoint::new(j, g.arc(j).length))
}

// ---------------------------------------------------------------------------
// Flat metric, primal route (partial transport by successive shortest paths).
// ---------------------------------------------------------------------------

/// Independent primal evaluation of the flat metric.
///
/// Duality gives `||mu - nu|| = min max(transport cost, created + destroyed
/// mass)` over plans that move part of the surplus onto part of the deficit
/// at metric cost and write off the remainder. The transport-cost curve
/// `f(tau)` is traced by successive shortest paths (convex, marginal cost
/// nondecreasing) while the write-off line `g(tau) = S - 2 tau` falls with
/// slope 2; the optimum sits where they cross, or at full matching.
pub fn flat_distance_flow(
    g: &MetricGraph,
    mu: &AtomicMeasure,
    nu: &AtomicMeasure,
) -> Result<f64, MeasureError> {
    mu.check_graph(g)?;
    nu.check_graph(g)?;
    if mu.graph_id != nu.graph_id {
        return Err(MeasureError::CrossGraph(mu.graph_id, nu.graph_id));
    }

    let nodes = support_nodes(g, mu, nu, false);
    let mut surplus: Vec<(GraphPoint, f64)> = Vec::new();
    let mut deficit: Vec<(GraphPoint, f64)> = Vec::new();
    for node in nodes.values() {
        if node.weight > 0.0 {
            surplus.push((node.pos, node.weight));
        } else if node.weight < 0.0 {
            deficit.push((node.pos, -node.weight));
        }
    }
    let total_imbalance: f64 =
        surplus.iter().map(|s| s.1).sum::<f64>() + deficit.iter().map(|d| d.1).sum::<f64>();
    if total_imbalance == 0.0 {
        return Ok(0.0);
    }
    if surplus.is_empty() || deficit.is_empty() {
        return Ok(total_imbalance);
    }

    let ns = surplus.len();
    let nd = deficit.len();
    let cost: Vec<Vec<f64>> = surplus
        .iter()
        .map(|(p, _)| deficit.iter().map(|(q, _)| g.distance(*p, *q)).collect())
        .collect();

    let mut flow = vec![vec![0.0f64; nd]; ns];
    let mut rem_s: Vec<f64> = surplus.iter().map(|s| s.1).collect();
    let mut rem_d: Vec<f64> = deficit.iter().map(|d| d.1).collect();
    let mut shipped = 0.0f64;
    let mut transport_cost = 0.0f64;

    loop {
        let writeoff = total_imbalance - 2.0 * shipped;
        if writeoff <= transport_cost {
            // The curves have crossed exactly at a previous boundary.
            return Ok(transport_cost.max(writeoff));
        }
        let Some((rate, path)) = shortest_augmenting_path(&cost, &flow, &rem_s, &rem_d) else {
            return Ok(transport_cost.max(writeoff));
        };
        let mut bottleneck = f64::INFINITY;
        bottleneck = bottleneck.min(rem_s[path[0].0]);
        bottleneck = bottleneck.min(rem_d[path[path.len() - 1].1]);
        for hop in path.iter().skip(1).step_by(2) {
            // Backward hops consume existing flow.
            bottleneck = bottleneck.min(flow[hop.0][hop.1]);
        }
        // Crossing point of f(tau + x) = F + rate x and g = S - 2(tau + x).
        let gap = writeoff - transport_cost;
        let x_star = gap / (rate + 2.0);
        if x_star <= bottleneck {
            return Ok(transport_cost + rate * x_star);
        }
        // Augment the full bottleneck and continue.
        let a = bottleneck;
        rem_s[path[0].0] -= a;
        rem_d[path[path.len() - 1].1] -= a;
        for (i, hop) in path.iter().enumerate() {
            if i % 2 == 0 {
                flow[hop.0][hop.1] += a;
            } else {
                flow[hop.0][hop.1] -= a;
            }
        }
        shipped += a;
        transport_cost += rate * a;
    }
}

/// Bellman-Ford over the bipartite residual network. A path is returned as
/// alternating forward `(s, d)` and backward `(s, d)` hops, starting and
/// ending with a forward hop; its reduced length is the marginal cost.
fn shortest_augmenting_path(
    cost: &[Vec<f64>],
    flow: &[Vec<f64>],
    rem_s: &[f64],
    rem_d: &[f64],
) -> Option<(f64, Vec<(usize, usize)>)> {
    let ns = rem_s.len();
    let nd = rem_d.len();
    let mut dist_s = vec![f64::INFINITY; ns];
    let mut dist_d = vec![f64::INFINITY; nd];
    let mut parent_d: Vec<Option<usize>> = vec![None; nd];
    let mut parent_s: Vec<Option<usize>> = vec![None; ns];
    for (i, &r) in rem_s.iter().enumerate() {
        if r > 0.0 {
            dist_s[i] = 0.0;
        }
    }
    for _ in 0..(ns + nd + 1) {
        let mut changed = false;
        for i in 0..ns {
            if dist_s[i].is_finite() {
                for j in 0..nd {
                    let nd_cost = dist_s[i] + cost[i][j];
                    if nd_cost < dist_d[j] - 1e-15 {
                        dist_d[j] = nd_cost;
                        parent_d[j] = Some(i);
                        changed = true;
                    }
                }
            }
        }
        for j in 0..nd {
            if dist_d[j].is_finite() {
                for i in 0..ns {
                    if flow[i][j] > 0.0 {
                        let ns_cost = dist_d[j] - cost[i][j];
                        if ns_cost < dist_s[i] - 1e-15 {
                            dist_s[i] = ns_cost;
                            parent_s[i] = Some(j);
                            changed = true;
                        }
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
    let mut best: Option<usize> = None;
    for j in 0..nd {
        if rem_d[j] > 0.0
            && dist_d[j].is_finite()
            && best.map(|b| dist_d[j] < dist_d[b]).unwrap_or(true)
        {
            best = Some(j);
        }
    }
    let end = best?;
    // Reconstruct hops back to a free surplus node.
    let mut hops: Vec<(usize, usize)> = Vec::new();
    let mut j = end;
    loop {
        let i = parent_d[j].expect("reachable deficit has a parent");
        hops.push((i, j));
        match parent_s[i] {
            Some(prev_j) if dist_s[i] != 0.0 || rem_s[i] <= 0.0 => {
                hops.push((i, prev_j));
                j = prev_j;
            }
            _ => break,
        }
    }
    hops.reverse();
    Some((dist_d[end], hops))
}

// ---------------------------------------------------------------------------
// Boundary data.
// ---------------------------------------------------------------------------

/// Prescribed inflow at the sources: an absolutely continuous emission rate
/// plus finitely many point injections `(time, mass)`.
#[derive(Debug, Clone, Default)]
pub struct BoundaryMeasure {
    entries: BTreeMap<VertexId, SourceTerm>,
}

#[derive(Debug, Clone)]
pub struct SourceTerm {
    pub rate: PiecewiseConstant,
    pub atoms: Vec<(f64, f64)>,
}

impl Default for SourceTerm {
    fn default() -> Self {
        Self {
            rate: PiecewiseConstant::constant(0.0),
            atoms: Vec::new(),
        }
    }
}

impl BoundaryMeasure {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, source: VertexId, term: SourceTerm) {
        self.entries.insert(source, term);
    }

    pub fn entries(&self) -> impl Iterator<Item = (&VertexId, &SourceTerm)> {
        self.entries.iter()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total inflow over `[a, b)`: rate integral plus atoms with `a <= t < b`.
    pub fn total_on(&self, a: f64, b: f64) -> f64 {
        self.entries
            .values()
            .map(|term| {
                term.rate.integral(a, b)
                    + term
                        .atoms
                        .iter()
                        .filter(|(t, _)| *t >= a && *t < b)
                        .map(|(_, m)| m)
                        .sum::<f64>()
            })
            .sum()
    }

    /// Atom injection times within `(a, b)`, ascending and deduplicated.
    pub fn atom_times_within(&self, a: f64, b: f64) -> Vec<f64> {
        let mut times: Vec<f64> = self
            .entries
            .values()
            .flat_map(|t| t.atoms.iter().map(|(tt, _)| *tt))
            .filter(|&t| t > a && t < b)
            .collect();
        times.sort_by(|x, y| x.partial_cmp(y).unwrap());
        times.dedup();
        times
    }

    pub fn validate(&self, g: &MetricGraph, horizon: f64) -> ValidationReport {
        let mut report = ValidationReport::default();
        for (&v, term) in &self.entries {
            if !g.sources().contains(&v) {
                report.push(format!(
                    "boundary data on `{}` which is not a source",
                    g.vertex_name(v)
                ));
            }
            for &val in term.rate.values() {
                if !(val >= 0.0 && val.is_finite()) {
                    report.push(format!(
                        "negative or non-finite emission rate {val} at `{}`",
                        g.vertex_name(v)
                    ));
                }
            }
            for &bp in term.rate.breakpoints() {
                if !(0.0..=horizon).contains(&bp) {
                    report.push(format!(
                        "rate breakpoint {bp} outside [0, {horizon}] at `{}`",
                        g.vertex_name(v)
                    ));
                }
            }
            for &(t, m) in &term.atoms {
                if !(t > 0.0 && t < horizon) {
                    report.push(format!(
                        "source atom at t = {t} outside (0, {horizon}) at `{}`",
                        g.vertex_name(v)
                    ));
                }
                if !(m >= 0.0 && m.is_finite()) {
                    report.push(format!(
                        "source atom with bad mass {m} at `{}`",
                        g.vertex_name(v)
                    ));
                }
            }
        }
        report
    }
}
