//! Oriented metric networks: vertices joined by parametrized arcs.
//!
//! An arc runs from its tail (local coordinate `s = 0`) to its head
//! (`s = L`). Terminal arcs may be unbounded (`L = +inf`); they absorb mass
//! and are never traversed through their head. Vertex-to-vertex shortest
//! paths are precomputed at construction because the undirected distance is
//! evaluated inside the nonlocal-kernel inner loop.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

pub type VertexId = usize;
pub type ArcId = usize;

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("unknown vertex `{0}`")]
    UnknownVertex(String),
    #[error("unknown arc `{0}`")]
    UnknownArc(String),
    #[error("duplicate vertex id `{0}`")]
    DuplicateVertex(String),
    #[error("duplicate arc id `{0}`")]
    DuplicateArc(String),
    #[error("arc `{0}` has non-positive or NaN length {1}")]
    BadLength(String, f64),
    #[error("point coordinate {s} outside [0, {len}] on arc `{arc}`")]
    BadCoordinate { arc: String, s: f64, len: f64 },
    #[error("visual radius {radius} exceeds minimum arc length {min_len}")]
    RadiusTooLarge { radius: f64, min_len: f64 },
}

/// A point on the network: an arc plus a local coordinate in `[0, L]`.
///
/// Points at a vertex have several (arc, s) aliases; raw `PartialEq` compares
/// coordinates only, while [`MetricGraph::points_equal`] resolves aliases.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphPoint {
    pub arc: ArcId,
    pub s: f64,
}

impl GraphPoint {
    pub fn new(arc: ArcId, s: f64) -> Self {
        Self { arc, s }
    }
}

#[derive(Debug, Clone)]
pub struct ArcInfo {
    pub name: String,
    pub tail: VertexId,
    pub head: VertexId,
    pub length: f64,
}

impl ArcInfo {
    pub fn is_unbounded(&self) -> bool {
        self.length.is_infinite()
    }
}

/// Outcome of structural validation; a passing report has no violations.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn push(&mut self, msg: impl Into<String>) {
        self.violations.push(msg.into());
    }

    pub fn merge(&mut self, other: ValidationReport) {
        self.violations.extend(other.violations);
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.is_ok() {
            write!(f, "pass")
        } else {
            for v in &self.violations {
                writeln!(f, "- {v}")?;
            }
            Ok(())
        }
    }
}

/// Maximal sub-segment of an arc, `[from, to]` in local coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BallSegment {
    pub arc: ArcId,
    pub from: f64,
    pub to: f64,
}

/// Oriented path: a sequence of arcs, each leaving the head of the previous.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub arcs: Vec<ArcId>,
}

/// An oriented network with positive (possibly infinite) arc lengths.
#[derive(Debug, Clone)]
pub struct MetricGraph {
    id: u64,
    vertex_names: Vec<String>,
    arcs: Vec<ArcInfo>,
    sources: Vec<VertexId>,
    out: Vec<Vec<ArcId>>,
    inc: Vec<Vec<ArcId>>,
    /// Undirected vertex-to-vertex shortest-path distances.
    dist_any: Vec<Vec<f64>>,
    /// Orientation-respecting vertex-to-vertex distances.
    dist_fwd: Vec<Vec<f64>>,
}

impl MetricGraph {
    /// Builds a graph from string-named vertices and arcs
    /// `(arc id, tail, head, length)`. Referential problems and degenerate
    /// lengths are hard errors; everything else is left to [`validate`].
    ///
    /// [`validate`]: MetricGraph::validate
    pub fn new(
        vertices: Vec<String>,
        arcs: Vec<(String, String, String, f64)>,
        sources: Vec<String>,
    ) -> Result<Self, GraphError> {
        let mut vertex_index: BTreeMap<String, VertexId> = BTreeMap::new();
        for (i, name) in vertices.iter().enumerate() {
            if vertex_index.insert(name.clone(), i).is_some() {
                return Err(GraphError::DuplicateVertex(name.clone()));
            }
        }
        let mut seen_arcs: BTreeMap<String, ()> = BTreeMap::new();
        let mut infos = Vec::with_capacity(arcs.len());
        for (name, tail, head, length) in arcs {
            if seen_arcs.insert(name.clone(), ()).is_some() {
                return Err(GraphError::DuplicateArc(name));
            }
            if length.is_nan() || length <= 0.0 {
                return Err(GraphError::BadLength(name, length));
            }
            let tail = *vertex_index
                .get(&tail)
                .ok_or(GraphError::UnknownVertex(tail))?;
            let head = *vertex_index
                .get(&head)
                .ok_or(GraphError::UnknownVertex(head))?;
            infos.push(ArcInfo {
                name,
                tail,
                head,
                length,
            });
        }
        let sources = sources
            .into_iter()
            .map(|s| {
                vertex_index
                    .get(&s)
                    .copied()
                    .ok_or(GraphError::UnknownVertex(s))
            })
            .collect::<Result<Vec<_>, _>>()?;

        let n = vertices.len();
        let mut out = vec![Vec::new(); n];
        let mut inc = vec![Vec::new(); n];
        for (j, a) in infos.iter().enumerate() {
            out[a.tail].push(j);
            inc[a.head].push(j);
        }

        let dist_any = all_pairs(n, &infos, false);
        let dist_fwd = all_pairs(n, &infos, true);

        Ok(Self {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            vertex_names: vertices,
            arcs: infos,
            sources,
            out,
            inc,
            dist_any,
            dist_fwd,
        })
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn num_vertices(&self) -> usize {
        self.vertex_names.len()
    }

    pub fn num_arcs(&self) -> usize {
        self.arcs.len()
    }

    pub fn arc(&self, j: ArcId) -> &ArcInfo {
        &self.arcs[j]
    }

    pub fn arcs(&self) -> &[ArcInfo] {
        &self.arcs
    }

    pub fn vertex_name(&self, v: VertexId) -> &str {
        &self.vertex_names[v]
    }

    pub fn sources(&self) -> &[VertexId] {
        &self.sources
    }

    pub fn outgoing(&self, v: VertexId) -> &[ArcId] {
        &self.out[v]
    }

    pub fn incoming(&self, v: VertexId) -> &[ArcId] {
        &self.inc[v]
    }

    pub fn arc_id(&self, name: &str) -> Result<ArcId, GraphError> {
        self.arcs
            .iter()
            .position(|a| a.name == name)
            .ok_or_else(|| GraphError::UnknownArc(name.to_string()))
    }

    pub fn vertex_id(&self, name: &str) -> Result<VertexId, GraphError> {
        self.vertex_names
            .iter()
            .position(|v| v == name)
            .ok_or_else(|| GraphError::UnknownVertex(name.to_string()))
    }

    /// Convenience constructor for a point addressed by arc name.
    pub fn point(&self, arc: &str, s: f64) -> Result<GraphPoint, GraphError> {
        let arc = self.arc_id(arc)?;
        self.check_point(GraphPoint { arc, s })?;
        Ok(GraphPoint { arc, s })
    }

    pub fn check_point(&self, p: GraphPoint) -> Result<(), GraphError> {
        let a = self
            .arcs
            .get(p.arc)
            .ok_or_else(|| GraphError::UnknownArc(format!("#{}", p.arc)))?;
        if p.s.is_finite() && p.s >= 0.0 && p.s <= a.length {
            Ok(())
        } else {
            Err(GraphError::BadCoordinate {
                arc: a.name.clone(),
                s: p.s,
                len: a.length,
            })
        }
    }

    /// Shortest finite arc length, the ceiling for visual radii.
    pub fn min_arc_length(&self) -> f64 {
        self.arcs
            .iter()
            .map(|a| a.length)
            .fold(f64::INFINITY, f64::min)
    }

    /// Checks the structural assumptions: connectivity, source degrees and
    /// the absence of sinks (a vertex without outgoing arcs is legal only
    /// when all its incoming arcs are unbounded, so no mass ever lands there).
    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        let n = self.num_vertices();
        if n == 0 {
            report.push("graph has no vertices");
            return report;
        }
        // Undirected reachability from vertex 0.
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &j in self.out[v].iter().chain(self.inc[v].iter()) {
                let a = &self.arcs[j];
                for w in [a.tail, a.head] {
                    if !seen[w] {
                        seen[w] = true;
                        stack.push(w);
                    }
                }
            }
        }
        for (v, ok) in seen.iter().enumerate() {
            if !ok {
                report.push(format!(
                    "not connected: vertex `{}` unreachable",
                    self.vertex_names[v]
                ));
            }
        }
        for &s in &self.sources {
            if self.out[s].len() != 1 || !self.inc[s].is_empty() {
                report.push(format!(
                    "source `{}` must have exactly one outgoing arc and no incoming (has {} out, {} in)",
                    self.vertex_names[s],
                    self.out[s].len(),
                    self.inc[s].len()
                ));
            }
        }
        for v in 0..n {
            if self.out[v].is_empty() {
                for &j in &self.inc[v] {
                    if !self.arcs[j].is_unbounded() {
                        report.push(format!(
                            "sink detected: bounded arc `{}` terminates at `{}` which has no outgoing arc",
                            self.arcs[j].name, self.vertex_names[v]
                        ));
                    }
                }
                if self.inc[v].is_empty() && !self.sources.contains(&v) {
                    report.push(format!(
                        "isolated vertex `{}`",
                        self.vertex_names[v]
                    ));
                }
            }
        }
        report
    }

    /// True when the two points denote the same location, resolving vertex
    /// aliases (`s = L` on an arc equals `s = 0` on any arc out of its head).
    pub fn points_equal(&self, x: GraphPoint, y: GraphPoint) -> bool {
        match (self.canonical(x), self.canonical(y)) {
            (CanonicalPoint::Vertex(u), CanonicalPoint::Vertex(v)) => u == v,
            (CanonicalPoint::Interior(a, s), CanonicalPoint::Interior(b, t)) => {
                a == b && s == t
            }
            _ => false,
        }
    }

    pub(crate) fn canonical(&self, p: GraphPoint) -> CanonicalPoint {
        let a = &self.arcs[p.arc];
        if p.s == 0.0 {
            CanonicalPoint::Vertex(a.tail)
        } else if p.s == a.length {
            CanonicalPoint::Vertex(a.head)
        } else {
            CanonicalPoint::Interior(p.arc, p.s)
        }
    }

    /// Minimum path distance `d_Γ` ignoring orientation.
    pub fn distance(&self, x: GraphPoint, y: GraphPoint) -> f64 {
        let mut best = if x.arc == y.arc {
            (x.s - y.s).abs()
        } else {
            f64::INFINITY
        };
        for (vx, off_x) in self.endpoint_offsets(x) {
            for (vy, off_y) in self.endpoint_offsets(y) {
                let cand = off_x + self.dist_any[vx][vy] + off_y;
                if cand < best {
                    best = cand;
                }
            }
        }
        best
    }

    /// Length of the shortest orientation-respecting route from `x` to `y`,
    /// or `None` when `y` is not reachable downstream of `x`.
    pub fn forward_distance(&self, x: GraphPoint, y: GraphPoint) -> Option<f64> {
        let mut best = f64::INFINITY;
        if x.arc == y.arc && y.s >= x.s {
            best = y.s - x.s;
        }
        let ax = &self.arcs[x.arc];
        let ay = &self.arcs[y.arc];
        if !ax.is_unbounded() {
            let cand = (ax.length - x.s) + self.dist_fwd[ax.head][ay.tail] + y.s;
            if cand < best {
                best = cand;
            }
        }
        if best.is_finite() {
            Some(best)
        } else {
            None
        }
    }

    /// The visual field `D(x)`: all points downstream of `x` within distance
    /// `radius`, returned as disjoint arc segments. Requires
    /// `radius <= min_arc_length()`, which confines the ball to the current
    /// arc plus the arcs leaving its head.
    pub fn downstream_ball(
        &self,
        x: GraphPoint,
        radius: f64,
    ) -> Result<Vec<BallSegment>, GraphError> {
        if radius.is_nan() || radius < 0.0 || radius > self.min_arc_length() {
            return Err(GraphError::RadiusTooLarge {
                radius,
                min_len: self.min_arc_length(),
            });
        }
        let a = &self.arcs[x.arc];
        let reach = x.s + radius;
        let mut segments = vec![BallSegment {
            arc: x.arc,
            from: x.s,
            to: reach.min(a.length),
        }];
        if reach > a.length {
            let rem = reach - a.length;
            for &j in &self.out[a.head] {
                segments.push(BallSegment {
                    arc: j,
                    from: 0.0,
                    to: rem,
                });
            }
        }
        Ok(segments)
    }

    /// Enumerates oriented paths from `x`, branching at every junction and
    /// truncating after `max_crossings` junction crossings. Paths end early
    /// on unbounded arcs, which are never traversed through. Used by the
    /// push-forward reconstruction diagnostic, not by the main solver.
    pub fn paths_from(&self, x: GraphPoint, max_crossings: usize) -> Vec<Path> {
        let mut paths = Vec::new();
        let mut current = vec![x.arc];
        self.expand_paths(&mut current, 0, max_crossings, &mut paths);
        paths
    }

    fn expand_paths(
        &self,
        current: &mut Vec<ArcId>,
        crossings: usize,
        max_crossings: usize,
        paths: &mut Vec<Path>,
    ) {
        let last = &self.arcs[*current.last().expect("non-empty path")];
        if last.is_unbounded() || crossings == max_crossings || self.out[last.head].is_empty() {
            paths.push(Path {
                arcs: current.clone(),
            });
            return;
        }
        for &j in &self.out[last.head] {
            current.push(j);
            self.expand_paths(current, crossings + 1, max_crossings, paths);
            current.pop();
        }
    }

    /// Offsets from a point to its arc's endpoints, skipping infinite ones.
    fn endpoint_offsets(&self, p: GraphPoint) -> Vec<(VertexId, f64)> {
        let a = &self.arcs[p.arc];
        let mut offs = vec![(a.tail, p.s)];
        if !a.is_unbounded() {
            offs.push((a.head, a.length - p.s));
        }
        offs
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum CanonicalPoint {
    Vertex(VertexId),
    Interior(ArcId, f64),
}

fn all_pairs(n: usize, arcs: &[ArcInfo], directed: bool) -> Vec<Vec<f64>> {
    let mut dist = vec![vec![f64::INFINITY; n]; n];
    for (i, row) in dist.iter_mut().enumerate() {
        row[i] = 0.0;
    }
    for a in arcs {
        if a.is_unbounded() {
            continue;
        }
        if a.length < dist[a.tail][a.head] {
            dist[a.tail][a.head] = a.length;
        }
        if !directed && a.length < dist[a.head][a.tail] {
            dist[a.head][a.tail] = a.length;
        }
    }
    for k in 0..n {
        for i in 0..n {
            if dist[i][k].is_infinite() {
                continue;
            }
            for j in 0..n {
                let cand = dist[i][k] + dist[k][j];
                if cand < dist[i][j] {
                    dist[i][j] = cand;
                }
            }
        }
    }
    dist
}
