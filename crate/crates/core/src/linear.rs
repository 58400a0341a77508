//! Event-driven push-forward under a frozen velocity field.
//!
//! Within a window the velocity is a fixed per-arc speed function, so every
//! atom follows the characteristic ODE `ds/dt = v(s)` independently. The
//! engine integrates each atom with fixed-step RK4, locates arc exits by
//! bisection, splits the exiting mass over the outgoing arcs according to
//! the routing matrix evaluated at the exit instant, and records every
//! vertex crossing as a trace event. Junction passage is instantaneous;
//! mass never accumulates at vertices.
//!
//! Atoms are mutually independent here (interactions are frozen), so they
//! may be advanced in parallel; results are reduced in input order and are
//! bit-identical to the serial path.

use rayon::prelude::*;
use thiserror::Error;

use crate::graph::{ArcId, GraphError, GraphPoint, MetricGraph, VertexId};
use crate::measure::{Atom, AtomicMeasure, BoundaryMeasure, MeasureError};
use crate::routing::{RoutingError, RoutingMatrix};
use crate::velocity::{interaction_speed_excluding, AlphaWeights, ArcProfile, Kernel, VelocityField};

/// Crossing budget per atom lineage within one window; hitting it signals a
/// misconfigured near-zero-length cycle.
const MAX_CROSSINGS: usize = 100_000;

/// Work items below this count are advanced serially.
const PARALLEL_THRESHOLD: usize = 64;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("event cascade overflow: an atom crossed more than {0} junctions in one window")]
    EventCascadeOverflow(usize),
    #[error("path enumeration truncated before reaching the target time (max_crossings = {0})")]
    EnumerationOverflow(usize),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Routing(#[from] RoutingError),
}

/// Numerical knobs shared across the solver stack.
#[derive(Debug, Clone, Copy)]
pub struct Tolerances {
    /// Children below this mass are pruned into the ledger.
    pub eps_mass: f64,
    /// Exit times are bisected to this width in time units.
    pub eps_event: f64,
    /// RK4 step ceiling in time units.
    pub eps_step: f64,
    /// Same-arc atoms closer than this (with equal split history) merge.
    pub eps_merge: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            eps_mass: 0.0,
            eps_event: 1e-10,
            eps_step: 1e-3,
            eps_merge: 1e-12,
        }
    }
}

/// An atom in flight: position, mass, the index of its ancestor in the
/// frozen measure (for self-interaction exclusion) and a hash of the
/// junction choices taken so far.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MovingAtom {
    pub arc: ArcId,
    pub s: f64,
    pub mass: f64,
    pub lineage: Option<usize>,
    pub history: u64,
}

impl MovingAtom {
    pub fn point(&self) -> GraphPoint {
        GraphPoint::new(self.arc, self.s)
    }
}

/// Mass scheduled to appear at `s = 0` of an arc at a given instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Emission {
    pub time: f64,
    pub arc: ArcId,
    pub mass: f64,
    pub lineage: Option<usize>,
    pub history: u64,
}

/// One vertex-crossing record: `to_arc = None` is the arrival of the parent
/// atom (the incoming trace), `Some(j)` a child spawned onto arc `j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEvent {
    pub vertex: VertexId,
    pub from_arc: ArcId,
    pub to_arc: Option<ArcId>,
    pub time: f64,
    pub mass: f64,
}

#[derive(Debug, Clone, Default)]
pub struct AdvanceOutput {
    pub atoms: Vec<MovingAtom>,
    pub events: Vec<TraceEvent>,
    pub pruned: f64,
}

impl AdvanceOutput {
    pub fn measure(&self, graph_id: u64) -> AtomicMeasure {
        AtomicMeasure::from_raw(
            graph_id,
            self.atoms
                .iter()
                .map(|a| Atom {
                    point: a.point(),
                    mass: a.mass,
                })
                .collect(),
        )
    }
}

pub(crate) fn mix_history(h: u64, token: u64) -> u64 {
    // splitmix64 finalizer over (history, token)
    let mut z = h ^ token.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

// ---------------------------------------------------------------------------
// Frozen fields.
// ---------------------------------------------------------------------------

/// A velocity field with the measure argument fixed, leaving pure per-arc
/// speed functions. For the nonlocal variant each moving atom may exclude
/// its own frozen ancestor from the interaction sum.
pub struct FrozenField<'a> {
    g: &'a MetricGraph,
    v_max: f64,
    kind: FrozenKind<'a>,
}

enum FrozenKind<'a> {
    Tabulated {
        profiles: &'a [ArcProfile],
    },
    Nonlocal {
        free_flow: &'a [ArcProfile],
        kernel: &'a Kernel,
        alpha: &'a AlphaWeights,
        frozen: Vec<Atom>,
        exclude_self: bool,
    },
}

impl<'a> FrozenField<'a> {
    pub fn new(
        g: &'a MetricGraph,
        field: &'a VelocityField,
        frozen_atoms: &[Atom],
        exclude_self: bool,
    ) -> Self {
        let kind = match field {
            VelocityField::Tabulated { profiles, .. } => FrozenKind::Tabulated { profiles },
            VelocityField::NonlocalTraffic {
                free_flow,
                kernel,
                alpha,
                ..
            } => FrozenKind::Nonlocal {
                free_flow,
                kernel,
                alpha,
                frozen: frozen_atoms.to_vec(),
                exclude_self,
            },
        };
        Self {
            g,
            v_max: field.v_max(),
            kind,
        }
    }

    pub fn graph(&self) -> &MetricGraph {
        self.g
    }

    pub fn v_max(&self) -> f64 {
        self.v_max
    }

    /// Frozen speed at a point, for the lineage identified by the ancestor
    /// index. Coordinates are clamped into the arc before evaluation
    /// because RK4 stages may probe slightly past an endpoint.
    pub fn speed(&self, arc: ArcId, s: f64, lineage: Option<usize>) -> f64 {
        let len = self.g.arc(arc).length;
        let s = s.max(0.0).min(len);
        match &self.kind {
            FrozenKind::Tabulated { profiles } => profiles[arc].eval(s),
            FrozenKind::Nonlocal {
                free_flow,
                kernel,
                alpha,
                frozen,
                exclude_self,
            } => {
                let skip = if *exclude_self { lineage } else { None };
                let vi = interaction_speed_excluding(
                    self.g,
                    kernel,
                    alpha,
                    frozen,
                    GraphPoint::new(arc, s),
                    skip,
                );
                (free_flow[arc].eval(s) - vi).max(0.0)
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Characteristic flow within one arc.
// ---------------------------------------------------------------------------

/// Result of flowing along one arc: final position at the window end, or an
/// exit through the head at time `theta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FlowOutcome {
    Interior(f64),
    Exit { theta: f64 },
}

/// Integrates `ds/dt = v(s)` from `(s0, t0)` to `t1` with fixed-step RK4.
/// If the characteristic reaches the arc head first, the exit time is
/// located by bisection on the integrated step to within `eps_event`.
/// Speeds are nonnegative, so a stalled atom simply never exits.
pub fn arc_flow(
    field: &FrozenField,
    lineage: Option<usize>,
    arc: ArcId,
    s0: f64,
    t0: f64,
    t1: f64,
    tol: &Tolerances,
) -> FlowOutcome {
    let len = field.g.arc(arc).length;
    if len.is_finite() && s0 >= len {
        return FlowOutcome::Exit { theta: t0 };
    }
    if t1 <= t0 {
        return FlowOutcome::Interior(s0);
    }
    let span = t1 - t0;
    let n_steps = (span / tol.eps_step).ceil().max(1.0) as usize;
    let h = span / n_steps as f64;
    let mut s = s0;
    for k in 0..n_steps {
        let s_next = rk4(field, lineage, arc, s, h);
        if len.is_finite() && s_next >= len {
            let step_start = t0 + k as f64 * h;
            let (mut lo, mut hi) = (0.0, h);
            while hi - lo > tol.eps_event {
                let mid = 0.5 * (lo + hi);
                if rk4(field, lineage, arc, s, mid) >= len {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return FlowOutcome::Exit {
                theta: step_start + hi,
            };
        }
        s = s_next;
    }
    FlowOutcome::Interior(s.min(len))
}

fn rk4(field: &FrozenField, lineage: Option<usize>, arc: ArcId, s: f64, h: f64) -> f64 {
    let k1 = field.speed(arc, s, lineage);
    let k2 = field.speed(arc, s + 0.5 * h * k1, lineage);
    let k3 = field.speed(arc, s + 0.5 * h * k2, lineage);
    let k4 = field.speed(arc, s + h * k3, lineage);
    s + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

// ---------------------------------------------------------------------------
// Source discretization.
// ---------------------------------------------------------------------------

/// Converts boundary data on `[t0, t1)` into emissions. The window is split
/// at interior routing breakpoints and source-atom times; the absolutely
/// continuous part emits one midpoint atom per sub-window carrying the rate
/// integral, and point sources fire exactly at their time stamps.
pub fn emission_schedule(
    g: &MetricGraph,
    sigma: &BoundaryMeasure,
    routing: &RoutingMatrix,
    t0: f64,
    t1: f64,
) -> Vec<Emission> {
    let mut boundaries = vec![t0];
    boundaries.extend(routing.breakpoints_in(t0, t1));
    boundaries.extend(sigma.atom_times_within(t0, t1));
    boundaries.push(t1);
    boundaries.sort_by(|a, b| a.partial_cmp(b).unwrap());
    boundaries.dedup();

    let mut emissions = Vec::new();
    for (&source, term) in sigma.entries() {
        let Some(&arc) = g.outgoing(source).first() else {
            continue; // invalid source; caught by validation
        };
        for w in boundaries.windows(2) {
            let (a, b) = (w[0], w[1]);
            let mass = term.rate.integral(a, b);
            if mass > 0.0 {
                let time = 0.5 * (a + b);
                emissions.push(Emission {
                    time,
                    arc,
                    mass,
                    lineage: None,
                    history: mix_history(source as u64, time.to_bits()),
                });
            }
        }
        for &(time, mass) in &term.atoms {
            if time >= t0 && time < t1 && mass > 0.0 {
                emissions.push(Emission {
                    time,
                    arc,
                    mass,
                    lineage: None,
                    history: mix_history(source as u64, !time.to_bits()),
                });
            }
        }
    }
    emissions.sort_by(|a, b| a.time.partial_cmp(&b.time).unwrap());
    emissions
}

// ---------------------------------------------------------------------------
// The window advance.
// ---------------------------------------------------------------------------

/// Advances a set of atoms plus scheduled emissions through `[t0, t1]`.
///
/// Per-event guarantees: the arrival of a parent of mass `m` at vertex `x_i`
/// at time `theta` is recorded as an incoming trace event, and each outgoing
/// arc `e_j` with `p_kj(theta) > 0` receives a child of exactly
/// `m * p_kj(theta)` recorded as an outgoing event, so the transmission
/// condition holds event by event. Children lighter than `eps_mass` are
/// dropped into the pruned ledger after their trace event is written.
#[allow(clippy::too_many_arguments)]
pub fn advance(
    g: &MetricGraph,
    field: &FrozenField,
    routing: &RoutingMatrix,
    state: &[MovingAtom],
    emissions: &[Emission],
    t0: f64,
    t1: f64,
    tol: &Tolerances,
) -> Result<AdvanceOutput, SolveError> {
    struct WorkItem {
        atom: MovingAtom,
        start: f64,
    }

    let mut work: Vec<WorkItem> = Vec::with_capacity(state.len() + emissions.len());
    for atom in state {
        work.push(WorkItem {
            atom: *atom,
            start: t0,
        });
    }
    for e in emissions {
        debug_assert!(e.time >= t0 && e.time < t1);
        work.push(WorkItem {
            atom: MovingAtom {
                arc: e.arc,
                s: 0.0,
                mass: e.mass,
                lineage: e.lineage,
                history: e.history,
            },
            start: e.time,
        });
    }

    let run = |item: &WorkItem| -> Result<AdvanceOutput, SolveError> {
        let mut out = AdvanceOutput::default();
        let mut stack: Vec<(MovingAtom, f64)> = vec![(item.atom, item.start)];
        let mut crossings = 0usize;
        while let Some((atom, start)) = stack.pop() {
            match arc_flow(field, atom.lineage, atom.arc, atom.s, start, t1, tol) {
                FlowOutcome::Interior(s) => out.atoms.push(MovingAtom { s, ..atom }),
                FlowOutcome::Exit { theta } => {
                    crossings += 1;
                    if crossings > MAX_CROSSINGS {
                        return Err(SolveError::EventCascadeOverflow(MAX_CROSSINGS));
                    }
                    let vertex = g.arc(atom.arc).head;
                    out.events.push(TraceEvent {
                        vertex,
                        from_arc: atom.arc,
                        to_arc: None,
                        time: theta,
                        mass: atom.mass,
                    });
                    // Children in descending arc order on the stack so they
                    // are processed ascending.
                    let mut children: Vec<(MovingAtom, f64)> = Vec::new();
                    for &j in g.outgoing(vertex) {
                        let p = routing.coefficient(atom.arc, j, theta);
                        if p == 0.0 {
                            continue;
                        }
                        let child_mass = atom.mass * p;
                        out.events.push(TraceEvent {
                            vertex,
                            from_arc: atom.arc,
                            to_arc: Some(j),
                            time: theta,
                            mass: child_mass,
                        });
                        if child_mass < tol.eps_mass {
                            out.pruned += child_mass;
                        } else {
                            children.push((
                                MovingAtom {
                                    arc: j,
                                    s: 0.0,
                                    mass: child_mass,
                                    lineage: atom.lineage,
                                    history: mix_history(atom.history, j as u64),
                                },
                                theta,
                            ));
                        }
                    }
                    stack.extend(children.into_iter().rev());
                }
            }
        }
        Ok(out)
    };

    let pieces: Vec<Result<AdvanceOutput, SolveError>> = if work.len() >= PARALLEL_THRESHOLD {
        work.par_iter().map(run).collect()
    } else {
        work.iter().map(run).collect()
    };

    let mut out = AdvanceOutput::default();
    for piece in pieces {
        let piece = piece?;
        out.atoms.extend(piece.atoms);
        out.events.extend(piece.events);
        out.pruned += piece.pruned;
    }
    Ok(out)
}

/// Spec-shaped convenience: advances a measure with boundary data over one
/// window and returns the final measure together with traces and the pruned
/// ledger. Initial atoms take their index as lineage.
#[allow(clippy::too_many_arguments)]
pub fn advance_measure(
    g: &MetricGraph,
    field: &FrozenField,
    routing: &RoutingMatrix,
    m0: &AtomicMeasure,
    sigma: &BoundaryMeasure,
    t0: f64,
    t1: f64,
    tol: &Tolerances,
) -> Result<(AtomicMeasure, AdvanceOutput), SolveError> {
    m0.check_graph(g)?;
    let state: Vec<MovingAtom> = m0
        .atoms()
        .iter()
        .enumerate()
        .map(|(i, a)| MovingAtom {
            arc: a.point.arc,
            s: a.point.s,
            mass: a.mass,
            lineage: Some(i),
            history: 0,
        })
        .collect();
    let emissions = emission_schedule(g, sigma, routing, t0, t1);
    let out = advance(g, field, routing, &state, &emissions, t0, t1, tol)?;
    Ok((out.measure(g.id()), out))
}

// ---------------------------------------------------------------------------
// Push-forward reconstruction along enumerated paths.
// ---------------------------------------------------------------------------

/// Rebuilds the window-end measure by explicit path enumeration — transport
/// every initial and source atom along each admissible path and weight it by
/// the product of routing coefficients at the realized crossing times — and
/// returns the flat distance to the event-driven result. Paths sharing a
/// consumed prefix are counted once; the coefficients of their unrealized
/// futures sum to one by row stochasticity.
#[allow(clippy::too_many_arguments)]
pub fn representation_check(
    g: &MetricGraph,
    field: &FrozenField,
    routing: &RoutingMatrix,
    m0: &AtomicMeasure,
    sigma: &BoundaryMeasure,
    t: f64,
    max_crossings: usize,
    tol: &Tolerances,
) -> Result<f64, SolveError> {
    let tol = Tolerances {
        eps_mass: 0.0,
        ..*tol
    };
    let (event_measure, _) = advance_measure(g, field, routing, m0, sigma, 0.0, t, &tol)?;

    struct Start {
        point: GraphPoint,
        time: f64,
        mass: f64,
        lineage: Option<usize>,
    }
    let mut starts: Vec<Start> = m0
        .atoms()
        .iter()
        .enumerate()
        .map(|(i, a)| Start {
            point: a.point,
            time: 0.0,
            mass: a.mass,
            lineage: Some(i),
        })
        .collect();
    for e in emission_schedule(g, sigma, routing, 0.0, t) {
        starts.push(Start {
            point: GraphPoint::new(e.arc, 0.0),
            time: e.time,
            mass: e.mass,
            lineage: e.lineage,
        });
    }

    let mut rebuilt: Vec<Atom> = Vec::new();
    for start in &starts {
        let paths = g.paths_from(start.point, max_crossings);
        let mut seen_prefixes: std::collections::BTreeSet<Vec<ArcId>> =
            std::collections::BTreeSet::new();
        for path in &paths {
            let mut s = start.point.s;
            let mut now = start.time;
            let mut thetas: Vec<f64> = Vec::new();
            for (idx, &arc) in path.arcs.iter().enumerate() {
                match arc_flow(field, start.lineage, arc, s, now, t, &tol) {
                    FlowOutcome::Interior(s_end) => {
                        let prefix = path.arcs[..=idx].to_vec();
                        if seen_prefixes.insert(prefix.clone()) {
                            let w = routing.path_coefficient(&prefix, &thetas)?;
                            if w > 0.0 {
                                rebuilt.push(Atom {
                                    point: GraphPoint::new(arc, s_end),
                                    mass: start.mass * w,
                                });
                            }
                        }
                        break;
                    }
                    FlowOutcome::Exit { theta } => {
                        if idx + 1 == path.arcs.len() {
                            return Err(SolveError::EnumerationOverflow(max_crossings));
                        }
                        thetas.push(theta);
                        s = 0.0;
                        now = theta;
                    }
                }
            }
        }
    }
    let rebuilt_measure = AtomicMeasure::from_raw(g.id(), rebuilt);
    Ok(crate::measure::flat_distance(g, &event_measure, &rebuilt_measure)?)
}

/// Merges same-arc atoms closer than `eps_merge` with equal split history.
/// Atoms are reordered by (arc, history, coordinate); the result is the
/// deterministic normal form used between scheme windows.
pub fn merge_close(atoms: &mut Vec<MovingAtom>, eps_merge: f64) {
    atoms.sort_by(|a, b| {
        (a.arc, a.history)
            .cmp(&(b.arc, b.history))
            .then(a.s.partial_cmp(&b.s).unwrap())
    });
    let mut merged: Vec<MovingAtom> = Vec::with_capacity(atoms.len());
    for atom in atoms.drain(..) {
        if let Some(last) = merged.last_mut() {
            if last.arc == atom.arc
                && last.history == atom.history
                && (atom.s - last.s).abs() < eps_merge
            {
                last.mass += atom.mass;
                continue;
            }
        }
        merged.push(atom);
    }
    *atoms = merged;
}
