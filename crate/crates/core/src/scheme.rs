//! Semi-discrete time stepping for the nonlinear problem, plus the study
//! harness built on top of it.
//!
//! The horizon is cut into `2^N` dyadic windows. On each window the velocity
//! is frozen at the left-endpoint state and the resulting linear problem is
//! solved exactly by the event-driven engine; the sequence of window
//! solutions approximates the nonlinear dynamics and is Cauchy in the flat
//! metric as `N` grows. Point sources are glued in: their firing times are
//! forced to be window boundaries, the atom is added to the state before the
//! velocity is frozen, and the run continues.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::graph::{GraphPoint, MetricGraph, ValidationReport};
use crate::linear::{
    advance, emission_schedule, merge_close, FrozenField, MovingAtom, SolveError, Tolerances,
    TraceEvent,
};
use crate::measure::{flat_distance, p_moment, Atom, AtomicMeasure, BoundaryMeasure};
use crate::routing::RoutingMatrix;
use crate::velocity::VelocityField;

/// Everything a run needs: the network, junction coefficients, velocity
/// model, initial and boundary data, horizon and numerical knobs.
#[derive(Debug, Clone)]
pub struct Instance {
    pub graph: MetricGraph,
    pub routing: RoutingMatrix,
    pub field: VelocityField,
    pub m0: AtomicMeasure,
    pub sigma: BoundaryMeasure,
    pub horizon: f64,
    pub tolerances: Tolerances,
    /// When set (the default), a moving atom does not count its own frozen
    /// mass in its visual field.
    pub exclude_self: bool,
}

impl Instance {
    pub fn validate(&self) -> ValidationReport {
        let mut report = self.graph.validate();
        report.merge(self.routing.validate(&self.graph));
        report.merge(self.field.validate(&self.graph));
        report.merge(self.sigma.validate(&self.graph, self.horizon));
        if self.m0.graph_id() != self.graph.id() {
            report.push("initial measure is bound to a different graph".to_string());
        }
        if self.horizon.is_nan() || self.horizon <= 0.0 {
            report.push(format!("horizon {} is not positive", self.horizon));
        }
        report
    }
}

/// Ledger entry for one window.
#[derive(Debug, Clone)]
pub struct WindowRecord {
    pub t0: f64,
    pub t1: f64,
    /// Boundary inflow charged to this window (rate integral plus atoms
    /// fired at `t0 <= t < t1`).
    pub source_in: f64,
    pub pruned: f64,
    pub events: Vec<TraceEvent>,
    /// Size of the measure the velocity was frozen with.
    pub frozen_atoms: usize,
}

/// The computed run: states at every window boundary (before any injection
/// at that boundary) plus the per-window ledger. `grid` is the dyadic grid
/// the run was asked for; `boundaries` additionally contains source-atom
/// firing times.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub level: u32,
    pub horizon: f64,
    pub grid: Vec<f64>,
    pub boundaries: Vec<f64>,
    pub states: Vec<Vec<MovingAtom>>,
    pub windows: Vec<WindowRecord>,
    graph_id: u64,
}

impl Trajectory {
    pub fn snapshot(&self, boundary_idx: usize) -> AtomicMeasure {
        AtomicMeasure::from_raw(
            self.graph_id,
            self.states[boundary_idx]
                .iter()
                .map(|a| Atom {
                    point: a.point(),
                    mass: a.mass,
                })
                .collect(),
        )
    }

    /// Boundary index of the `k`-th grid time.
    pub fn grid_boundary(&self, k: usize) -> usize {
        let t = self.grid[k];
        self.boundaries
            .iter()
            .position(|&b| b == t)
            .expect("grid time is a boundary")
    }

    pub fn snapshot_at_grid(&self, k: usize) -> AtomicMeasure {
        self.snapshot(self.grid_boundary(k))
    }

    pub fn final_state(&self) -> &[MovingAtom] {
        self.states.last().expect("at least the initial state")
    }

    /// Cumulative inflow over windows ending at or before boundary `i`.
    pub fn cumulative_source(&self, boundary_idx: usize) -> f64 {
        self.windows[..boundary_idx].iter().map(|w| w.source_in).sum()
    }

    pub fn cumulative_pruned(&self, boundary_idx: usize) -> f64 {
        self.windows[..boundary_idx].iter().map(|w| w.pruned).sum()
    }

    /// Ledger residuals `|m(t_i)| + pruned - |m_0| - inflow` at every
    /// boundary, normalized by the running total.
    pub fn ledger_residuals(&self) -> Vec<f64> {
        let m0: f64 = self.states[0].iter().map(|a| a.mass).sum();
        (0..self.states.len())
            .map(|i| {
                let mass: f64 = self.states[i].iter().map(|a| a.mass).sum();
                let expect = m0 + self.cumulative_source(i);
                let resid = (mass + self.cumulative_pruned(i) - expect).abs();
                resid / expect.max(1.0)
            })
            .collect()
    }
}

pub fn initial_state(m0: &AtomicMeasure) -> Vec<MovingAtom> {
    m0.atoms()
        .iter()
        .map(|a| MovingAtom {
            arc: a.point.arc,
            s: a.point.s,
            mass: a.mass,
            lineage: None,
            history: 0,
        })
        .collect()
}

/// Runs the scheme at dyadic level `N`.
pub fn solve(inst: &Instance, level: u32) -> Result<Trajectory, SolveError> {
    let report = inst.validate();
    if !report.is_ok() {
        return Err(SolveError::Invalid(report.to_string()));
    }
    let n = 1usize << level;
    let grid: Vec<f64> = (0..=n)
        .map(|k| inst.horizon * k as f64 / n as f64)
        .collect();
    let mut traj = solve_on_grid(inst, initial_state(&inst.m0), &grid)?;
    traj.level = level;
    Ok(traj)
}

/// Runs the window loop over an explicit boundary list (ascending, at least
/// two entries). Source-atom firing times strictly inside are inserted as
/// additional boundaries; atoms firing exactly at a boundary join the state
/// before the velocity freezes there. Used directly by the gluing check.
pub fn solve_on_grid(
    inst: &Instance,
    state0: Vec<MovingAtom>,
    grid: &[f64],
) -> Result<Trajectory, SolveError> {
    if grid.len() < 2 || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(SolveError::Invalid(
            "window boundaries must be ascending with at least two entries".into(),
        ));
    }
    let g = &inst.graph;
    let t_start = grid[0];
    let t_end = grid[grid.len() - 1];
    let mut boundaries = grid.to_vec();
    boundaries.extend(inst.sigma.atom_times_within(t_start, t_end));
    boundaries.sort_by(|a, b| a.partial_cmp(b).unwrap());
    boundaries.dedup();

    let mut state = state0;
    let mut states: Vec<Vec<MovingAtom>> = Vec::with_capacity(boundaries.len());
    let mut windows: Vec<WindowRecord> = Vec::with_capacity(boundaries.len() - 1);

    for w in boundaries.windows(2) {
        let (a, b) = (w[0], w[1]);
        states.push(state.clone());

        for (i, atom) in state.iter_mut().enumerate() {
            atom.lineage = Some(i);
        }
        let mut emissions = emission_schedule(g, &inst.sigma, &inst.routing, a, b);
        let source_in: f64 = emissions.iter().map(|e| e.mass).sum();

        // Atoms firing exactly at the window start are part of the frozen
        // measure: the run up to `a` is glued to a fresh problem whose
        // initial state includes them.
        let mut freeze_atoms: Vec<Atom> = state
            .iter()
            .map(|m| Atom {
                point: m.point(),
                mass: m.mass,
            })
            .collect();
        for e in emissions.iter_mut() {
            if e.time == a {
                e.lineage = Some(freeze_atoms.len());
                freeze_atoms.push(Atom {
                    point: GraphPoint::new(e.arc, 0.0),
                    mass: e.mass,
                });
            }
        }

        let frozen = FrozenField::new(g, &inst.field, &freeze_atoms, inst.exclude_self);
        let out = advance(
            g,
            &frozen,
            &inst.routing,
            &state,
            &emissions,
            a,
            b,
            &inst.tolerances,
        )?;
        state = out.atoms;
        merge_close(&mut state, inst.tolerances.eps_merge);
        windows.push(WindowRecord {
            t0: a,
            t1: b,
            source_in,
            pruned: out.pruned,
            events: out.events,
            frozen_atoms: freeze_atoms.len(),
        });
    }
    states.push(state);

    Ok(Trajectory {
        level: 0,
        horizon: t_end,
        grid: grid.to_vec(),
        boundaries,
        states,
        windows,
        graph_id: g.id(),
    })
}

// ---------------------------------------------------------------------------
// Convergence study.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct ConvergenceRow {
    pub level: u32,
    pub next: u32,
    /// `max_t || m^N_t - m^next_t ||` over the coarser grid.
    pub e: f64,
    /// `e / previous e`, once two rows exist.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceReport {
    /// Nonincreasing up to a noise floor of `10 * eps_event`.
    pub fn cauchy_ok(&self, eps_event: f64) -> bool {
        self.rows.windows(2).all(|w| {
            w[1].e <= w[0].e * (1.0 + 1e-9) || w[1].e <= 10.0 * eps_event
        })
    }
}

/// Solves every level in the ascending list and measures consecutive
/// trajectories against each other at the shared (coarser) grid times.
pub fn convergence_study(
    inst: &Instance,
    levels: &[u32],
) -> Result<ConvergenceReport, SolveError> {
    if levels.len() < 2 || levels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(SolveError::Invalid(
            "convergence study needs at least two ascending levels".into(),
        ));
    }
    let mut solved: BTreeMap<u32, Trajectory> = BTreeMap::new();
    for &lvl in levels {
        solved.insert(lvl, solve(inst, lvl)?);
    }
    let mut rows = Vec::new();
    let mut prev_e: Option<f64> = None;
    for w in levels.windows(2) {
        let (coarse, fine) = (&solved[&w[0]], &solved[&w[1]]);
        let e = grid_distance(inst, coarse, fine)?;
        let ratio = prev_e.map(|p| if p > 0.0 { e / p } else { f64::NAN });
        rows.push(ConvergenceRow {
            level: w[0],
            next: w[1],
            e,
            ratio,
        });
        prev_e = Some(e);
    }
    Ok(ConvergenceReport { rows })
}

/// Max flat distance over the coarser trajectory's grid times. Dyadic grid
/// times coincide bitwise across levels, so lookups are exact.
fn grid_distance(
    inst: &Instance,
    coarse: &Trajectory,
    fine: &Trajectory,
) -> Result<f64, SolveError> {
    let fine_index: BTreeMap<u64, usize> = fine
        .grid
        .iter()
        .enumerate()
        .map(|(i, t)| (t.to_bits(), i))
        .collect();
    let pairs: Vec<(usize, usize)> = coarse
        .grid
        .iter()
        .enumerate()
        .map(|(k, t)| {
            let j = *fine_index
                .get(&t.to_bits())
                .expect("coarse grid time missing from fine grid");
            (k, j)
        })
        .collect();
    let dists: Vec<Result<f64, SolveError>> = pairs
        .par_iter()
        .map(|&(k, j)| {
            Ok(flat_distance(
                &inst.graph,
                &coarse.snapshot_at_grid(k),
                &fine.snapshot_at_grid(j),
            )?)
        })
        .collect();
    let mut e = 0.0f64;
    for d in dists {
        e = e.max(d?);
    }
    Ok(e)
}

// ---------------------------------------------------------------------------
// Continuous dependence.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Perturbation {
    /// `m0 -> (1 + delta) m0`.
    MassScale,
    /// Every atom moved `delta` forward along its arc (clamped).
    PositionShift,
}

#[derive(Debug, Clone)]
pub struct DependenceRow {
    pub delta: f64,
    pub dist_in: f64,
    pub sup_dist: f64,
    pub k_emp: f64,
}

pub fn continuous_dependence_study(
    inst: &Instance,
    kind: Perturbation,
    deltas: &[f64],
    level: u32,
) -> Result<Vec<DependenceRow>, SolveError> {
    let base = solve(inst, level)?;
    let mut rows = Vec::new();
    for &delta in deltas {
        let m0p = perturb(&inst.graph, &inst.m0, kind, delta)?;
        let pert_inst = Instance {
            m0: m0p.clone(),
            ..inst.clone()
        };
        let pert = solve(&pert_inst, level)?;
        let dist_in = flat_distance(&inst.graph, &inst.m0, &m0p)?;
        let sups: Vec<Result<f64, SolveError>> = (0..base.grid.len())
            .into_par_iter()
            .map(|k| {
                Ok(flat_distance(
                    &inst.graph,
                    &base.snapshot_at_grid(k),
                    &pert.snapshot_at_grid(k),
                )?)
            })
            .collect();
        let mut sup_dist = 0.0f64;
        for d in sups {
            sup_dist = sup_dist.max(d?);
        }
        let k_emp = if dist_in > 0.0 { sup_dist / dist_in } else { 0.0 };
        rows.push(DependenceRow {
            delta,
            dist_in,
            sup_dist,
            k_emp,
        });
    }
    Ok(rows)
}

fn perturb(
    g: &MetricGraph,
    m0: &AtomicMeasure,
    kind: Perturbation,
    delta: f64,
) -> Result<AtomicMeasure, SolveError> {
    match kind {
        Perturbation::MassScale => Ok(m0.scaled(1.0 + delta)),
        Perturbation::PositionShift => {
            let atoms = m0
                .atoms()
                .iter()
                .map(|a| {
                    let len = g.arc(a.point.arc).length;
                    let s = (a.point.s + delta).min(len);
                    (GraphPoint::new(a.point.arc, s), a.mass)
                })
                .collect();
            Ok(AtomicMeasure::from_atoms(g, atoms)?)
        }
    }
}

// ---------------------------------------------------------------------------
// Time regularity.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct RegularityRow {
    pub s: f64,
    pub t: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct RegularityReport {
    /// The constant `(1 + V_max) (|m_0| + |sigma|)` in the bound
    /// `||m_t - m_s|| <= sigma([s,t)) + C |t - s|`.
    pub c: f64,
    pub rows: Vec<RegularityRow>,
    pub all_pass: bool,
}

/// Verifies the time-regularity bound at every pair of grid times.
pub fn time_regularity_check(
    inst: &Instance,
    traj: &Trajectory,
) -> Result<RegularityReport, SolveError> {
    let c = (1.0 + inst.field.v_max())
        * (inst.m0.total_mass() + inst.sigma.total_on(0.0, inst.horizon));
    let n = traj.grid.len();
    let mut pairs = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            pairs.push((i, j));
        }
    }
    let rows: Vec<Result<RegularityRow, SolveError>> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let (s, t) = (traj.grid[i], traj.grid[j]);
            let lhs = flat_distance(
                &inst.graph,
                &traj.snapshot_at_grid(i),
                &traj.snapshot_at_grid(j),
            )?;
            let rhs = inst.sigma.total_on(s, t) + c * (t - s);
            Ok(RegularityRow {
                s,
                t,
                lhs,
                rhs,
                pass: lhs <= rhs * (1.0 + 1e-9) + 1e-12,
            })
        })
        .collect();
    let mut out = Vec::with_capacity(rows.len());
    let mut all_pass = true;
    for r in rows {
        let r = r?;
        all_pass &= r.pass;
        out.push(r);
    }
    Ok(RegularityReport {
        c,
        rows: out,
        all_pass,
    })
}

// ---------------------------------------------------------------------------
// Moment bounds.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct MomentReport {
    pub p: u32,
    pub bound: f64,
    pub rows: Vec<(f64, f64)>,
    pub max: f64,
    pub pass: bool,
}

/// Checks `p`-moments at every grid time against the a-priori bound obtained
/// from `d(x_t, c) <= d(x_0, c) + V_max t` (initial mass) and
/// `d <= d(source, c) + V_max T` (emitted mass).
pub fn moment_bound_check(
    inst: &Instance,
    traj: &Trajectory,
    center: GraphPoint,
    p: u32,
) -> MomentReport {
    let g = &inst.graph;
    let vt = inst.field.v_max() * inst.horizon;
    let m_mass = inst.m0.total_mass();
    let m1_0 = p_moment(g, &inst.m0, center, 1);
    let mp_0 = p_moment(g, &inst.m0, center, p);
    let mut source_term = 0.0;
    for (&v, term) in inst.sigma.entries() {
        let total = term.rate.integral(0.0, inst.horizon)
            + term.atoms.iter().map(|(_, m)| m).sum::<f64>();
        if let Some(&arc) = g.outgoing(v).first() {
            let d = g.distance(GraphPoint::new(arc, 0.0), center);
            source_term += total * (d + vt).powi(p as i32);
        }
    }
    let bound = match p {
        1 => mp_0 + m_mass * vt + source_term,
        2 => mp_0 + 2.0 * vt * m1_0 + m_mass * vt * vt + source_term,
        _ => f64::INFINITY,
    };
    let rows: Vec<(f64, f64)> = (0..traj.grid.len())
        .map(|k| {
            (
                traj.grid[k],
                p_moment(g, &traj.snapshot_at_grid(k), center, p),
            )
        })
        .collect();
    let max = rows.iter().map(|(_, m)| *m).fold(0.0, f64::max);
    MomentReport {
        p,
        bound,
        rows,
        max,
        pass: max <= bound * (1.0 + 1e-12) + 1e-12,
    }
}

// ---------------------------------------------------------------------------
// Gluing check.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct GluingReport {
    pub tau: f64,
    pub mismatches: Vec<String>,
}

impl GluingReport {
    pub fn pass(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// For a scenario whose boundary data is a single point source at time
/// `tau`, verifies that the one-shot run equals the two-phase construction:
/// solve to `tau`, add the atom to the state, and continue with no source.
/// States, events and pruned masses must agree bit for bit.
pub fn gluing_check(inst: &Instance, level: u32) -> Result<GluingReport, SolveError> {
    let mut fires: Vec<(usize, f64, f64)> = Vec::new();
    for (&v, term) in inst.sigma.entries() {
        if term.rate.values().iter().any(|&r| r != 0.0) {
            return Err(SolveError::Invalid(
                "gluing check needs a purely atomic source".into(),
            ));
        }
        for &(t, m) in &term.atoms {
            fires.push((v, t, m));
        }
    }
    if fires.len() != 1 {
        return Err(SolveError::Invalid(format!(
            "gluing check needs exactly one source atom (found {})",
            fires.len()
        )));
    }
    let (src, tau, mass) = fires[0];

    let one_shot = solve(inst, level)?;
    let cut = one_shot
        .boundaries
        .iter()
        .position(|&b| b == tau)
        .expect("atom time is a boundary");

    let silent = Instance {
        sigma: BoundaryMeasure::new(),
        ..inst.clone()
    };
    let phase1 = solve_on_grid(
        &silent,
        initial_state(&inst.m0),
        &one_shot.boundaries[..=cut],
    )?;

    // The injected atom must be byte-identical to the one-shot emission.
    let arc = inst.graph.outgoing(src)[0];
    let mut state2 = phase1.final_state().to_vec();
    state2.push(MovingAtom {
        arc,
        s: 0.0,
        mass,
        lineage: None,
        history: injected_history(src, tau),
    });
    let phase2 = solve_on_grid(&silent, state2, &one_shot.boundaries[cut..])?;

    let mut mismatches = Vec::new();
    let mut check_states = |label: &str, a: &[MovingAtom], b: &[MovingAtom]| {
        if a.len() != b.len() {
            mismatches.push(format!("{label}: {} atoms vs {}", a.len(), b.len()));
            return;
        }
        for (x, y) in a.iter().zip(b) {
            if x.arc != y.arc || x.s.to_bits() != y.s.to_bits() || x.mass.to_bits() != y.mass.to_bits()
            {
                mismatches.push(format!("{label}: atom {x:?} vs {y:?}"));
                return;
            }
        }
    };
    for i in 0..=cut {
        check_states(
            &format!("state at boundary {i} (t = {})", one_shot.boundaries[i]),
            &one_shot.states[i],
            &phase1.states[i],
        );
    }
    for i in cut + 1..one_shot.states.len() {
        check_states(
            &format!("state at boundary {i} (t = {})", one_shot.boundaries[i]),
            &one_shot.states[i],
            &phase2.states[i - cut],
        );
    }
    // Phase-2's initial state is the pre-injection state plus the atom.
    if phase2.states[0].len() != one_shot.states[cut].len() + 1 {
        mismatches.push("phase-2 initial state is not the cut state plus the atom".into());
    }
    let concat_windows: Vec<&WindowRecord> =
        phase1.windows.iter().chain(phase2.windows.iter()).collect();
    if concat_windows.len() != one_shot.windows.len() {
        mismatches.push(format!(
            "window count {} vs {}",
            one_shot.windows.len(),
            concat_windows.len()
        ));
    } else {
        for (w, (a, b)) in one_shot.windows.iter().zip(concat_windows).enumerate() {
            if a.pruned.to_bits() != b.pruned.to_bits() {
                mismatches.push(format!("window {w}: pruned {} vs {}", a.pruned, b.pruned));
            }
            if a.events.len() != b.events.len() {
                mismatches.push(format!(
                    "window {w}: {} events vs {}",
                    a.events.len(),
                    b.events.len()
                ));
                continue;
            }
            for (x, y) in a.events.iter().zip(&b.events) {
                if x.time.to_bits() != y.time.to_bits()
                    || x.mass.to_bits() != y.mass.to_bits()
                    || x.vertex != y.vertex
                    || x.from_arc != y.from_arc
                    || x.to_arc != y.to_arc
                {
                    mismatches.push(format!("window {w}: event {x:?} vs {y:?}"));
                    break;
                }
            }
        }
    }
    Ok(GluingReport { tau, mismatches })
}

/// History stamp of an atom fired by source `src` at time `t`; mirrors the
/// point-source branch of the emission scheduler so that injected and
/// emitted atoms compare equal.
pub fn injected_history(src: usize, t: f64) -> u64 {
    crate::linear::mix_history(src as u64, !t.to_bits())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::routing::PiecewiseConstant;
    use crate::velocity::{AlphaWeights, ArcProfile, Kernel, KernelShape};

    fn y_instance(field: VelocityField) -> Instance {
        let graph = MetricGraph::new(
            vec!["S".into(), "V".into(), "A".into(), "B".into()],
            vec![
                ("in".into(), "S".into(), "V".into(), 2.0),
                ("left".into(), "V".into(), "A".into(), f64::INFINITY),
                ("right".into(), "V".into(), "B".into(), f64::INFINITY),
            ],
            vec!["S".into()],
        )
        .unwrap();
        let mut routing = RoutingMatrix::new();
        routing.insert(0, 1, PiecewiseConstant::constant(0.4));
        routing.insert(0, 2, PiecewiseConstant::constant(0.6));
        let m0 = AtomicMeasure::from_atoms(
            &graph,
            vec![
                (graph.point("in", 0.2).unwrap(), 0.6),
                (graph.point("in", 1.0).unwrap(), 0.5),
                (graph.point("in", 1.8).unwrap(), 0.4),
            ],
        )
        .unwrap();
        Instance {
            graph,
            routing,
            field,
            m0,
            sigma: BoundaryMeasure::new(),
            horizon: 2.0,
            tolerances: Tolerances::default(),
            exclude_self: true,
        }
    }

    fn y_tabulated() -> VelocityField {
        VelocityField::Tabulated {
            profiles: vec![
                ArcProfile::constant(1.0),
                ArcProfile::constant(0.8),
                ArcProfile::constant(1.0),
            ],
            v_max: 1.0,
        }
    }

    fn y_nonlocal() -> VelocityField {
        let mut alpha = AlphaWeights::new();
        alpha.insert(0, 1, 0.5);
        alpha.insert(0, 2, 0.5);
        VelocityField::NonlocalTraffic {
            free_flow: vec![ArcProfile::constant(1.0); 3],
            kernel: Kernel {
                peak: 0.4,
                radius: 1.0,
                shape: KernelShape::LinearDecay,
            },
            alpha,
            v_max: 1.0,
        }
    }

    #[test]
    fn tabulated_scheme_is_level_independent() {
        let inst = y_instance(y_tabulated());
        let t3 = solve(&inst, 3).unwrap();
        let t6 = solve(&inst, 6).unwrap();
        for k in 0..t3.grid.len() {
            let j = k * 8;
            let d = flat_distance(
                &inst.graph,
                &t3.snapshot_at_grid(k),
                &t6.snapshot_at_grid(j),
            )
            .unwrap();
            assert!(d <= 10.0 * inst.tolerances.eps_event, "level drift {d}");
        }
    }

    #[test]
    fn zero_kernel_equals_free_flow() {
        let inst_tab = y_instance(y_tabulated());
        let mut alpha = AlphaWeights::new();
        alpha.insert(0, 1, 0.5);
        alpha.insert(0, 2, 0.5);
        let zero_kernel = VelocityField::NonlocalTraffic {
            free_flow: vec![
                ArcProfile::constant(1.0),
                ArcProfile::constant(0.8),
                ArcProfile::constant(1.0),
            ],
            kernel: Kernel {
                peak: 0.0,
                radius: 1.0,
                shape: KernelShape::Constant,
            },
            alpha,
            v_max: 1.0,
        };
        let inst_nl = Instance {
            field: zero_kernel,
            ..inst_tab.clone()
        };
        let a = solve(&inst_tab, 4).unwrap();
        let b = solve(&inst_nl, 4).unwrap();
        for k in 0..a.grid.len() {
            for (x, y) in a.states[a.grid_boundary(k)]
                .iter()
                .zip(&b.states[b.grid_boundary(k)])
            {
                assert_eq!(x.s.to_bits(), y.s.to_bits());
                assert_eq!(x.mass.to_bits(), y.mass.to_bits());
            }
        }
    }

    #[test]
    fn isolated_atom_travels_free_at_full_speed() {
        // Self-exclusion: a lone atom sees nothing, so it moves at v_f.
        let graph = MetricGraph::new(
            vec!["S".into(), "T".into()],
            vec![("a".into(), "S".into(), "T".into(), f64::INFINITY)],
            vec!["S".into()],
        )
        .unwrap();
        let mut inst = Instance {
            m0: AtomicMeasure::from_atoms(&graph, vec![(graph.point("a", 0.0).unwrap(), 1.0)])
                .unwrap(),
            graph,
            routing: RoutingMatrix::new(),
            field: VelocityField::NonlocalTraffic {
                free_flow: vec![ArcProfile::constant(1.0)],
                kernel: Kernel {
                    peak: 0.5,
                    radius: 1.0,
                    shape: KernelShape::Constant,
                },
                alpha: AlphaWeights::new(),
                v_max: 1.0,
            },
            sigma: BoundaryMeasure::new(),
            horizon: 1.0,
            tolerances: Tolerances::default(),
            exclude_self: true,
        };
        let traj = solve(&inst, 3).unwrap();
        let last = traj.final_state();
        assert_eq!(last.len(), 1);
        assert!((last[0].s - 1.0).abs() < 1e-12, "position {}", last[0].s);

        // With self-interaction switched on the atom drags against its own
        // frozen ghost at every window start: strictly slower than free
        // flow, but only by a freezing artifact, not the full k0 * mass.
        inst.exclude_self = false;
        let traj = solve(&inst, 3).unwrap();
        let s = traj.final_state()[0].s;
        assert!(s < 1.0 - 1e-5 && s > 0.9, "position {s}");
    }

    #[test]
    fn ledger_identity_holds() {
        let mut inst = y_instance(y_tabulated());
        let mut sigma = BoundaryMeasure::new();
        sigma.set(
            0,
            crate::measure::SourceTerm {
                rate: PiecewiseConstant::constant(0.3),
                atoms: vec![(0.7, 0.5)],
            },
        );
        inst.sigma = sigma;
        let traj = solve(&inst, 5).unwrap();
        for (i, r) in traj.ledger_residuals().iter().enumerate() {
            assert!(*r <= 1e-12, "boundary {i}: residual {r}");
        }
        // eps_mass = 0 means nothing is ever pruned.
        assert!(traj.windows.iter().all(|w| w.pruned == 0.0));
    }

    #[test]
    fn determinism_across_runs() {
        let inst = y_instance(y_nonlocal());
        let a = solve(&inst, 5).unwrap();
        let b = solve(&inst, 5).unwrap();
        for (sa, sb) in a.states.iter().zip(&b.states) {
            assert_eq!(sa.len(), sb.len());
            for (x, y) in sa.iter().zip(sb) {
                assert_eq!(x.s.to_bits(), y.s.to_bits());
                assert_eq!(x.mass.to_bits(), y.mass.to_bits());
            }
        }
    }

    #[test]
    fn nonlocal_levels_form_a_cauchy_sequence() {
        let inst = y_instance(y_nonlocal());
        let report = convergence_study(&inst, &[3, 4, 5, 6]).unwrap();
        assert_eq!(report.rows.len(), 3);
        for w in report.rows.windows(2) {
            assert!(
                w[1].e <= w[0].e * (1.0 + 1e-9),
                "e increased: {} -> {}",
                w[0].e,
                w[1].e
            );
        }
        assert!(report.cauchy_ok(inst.tolerances.eps_event));
    }

    #[test]
    fn mass_scaling_dependence_is_exactly_linear() {
        let inst = y_instance(y_tabulated());
        let rows =
            continuous_dependence_study(&inst, Perturbation::MassScale, &[0.0, 1e-2], 3)
                .unwrap();
        assert_eq!(rows[0].sup_dist, 0.0);
        // Push-forward is linear in mass: the ratio is exactly 1 at every t.
        assert!((rows[1].k_emp - 1.0).abs() < 1e-9, "K = {}", rows[1].k_emp);
    }

    #[test]
    fn position_shift_dependence_on_translation_field() {
        // v = 1 everywhere: the shifted pair keeps its offset, so the
        // distance at every t equals the input distance.
        let graph = MetricGraph::new(
            vec!["S".into(), "T".into()],
            vec![("a".into(), "S".into(), "T".into(), f64::INFINITY)],
            vec!["S".into()],
        )
        .unwrap();
        let inst = Instance {
            m0: AtomicMeasure::from_atoms(&graph, vec![(graph.point("a", 1.0).unwrap(), 0.8)])
                .unwrap(),
            graph,
            routing: RoutingMatrix::new(),
            field: VelocityField::Tabulated {
                profiles: vec![ArcProfile::constant(1.0)],
                v_max: 1.0,
            },
            sigma: BoundaryMeasure::new(),
            horizon: 1.0,
            tolerances: Tolerances::default(),
            exclude_self: true,
        };
        let delta = 1e-2;
        let rows =
            continuous_dependence_study(&inst, Perturbation::PositionShift, &[delta], 3)
                .unwrap();
        // Two atoms of mass 0.8 at distance delta; the flat metric snaps
        // support coordinates to a 2^-27 grid, hence the 1e-8 slack.
        let expected = 0.8 * 2.0 * delta / (2.0 + delta);
        assert!((rows[0].dist_in - expected).abs() < 1e-8);
        assert!((rows[0].sup_dist - expected).abs() < 1e-8);
        assert!((rows[0].k_emp - 1.0).abs() < 1e-6);
    }

    #[test]
    fn regularity_bound_holds() {
        let mut inst = y_instance(y_tabulated());
        let mut sigma = BoundaryMeasure::new();
        sigma.set(
            0,
            crate::measure::SourceTerm {
                rate: PiecewiseConstant::constant(0.2),
                atoms: vec![],
            },
        );
        inst.sigma = sigma;
        let traj = solve(&inst, 4).unwrap();
        let report = time_regularity_check(&inst, &traj).unwrap();
        assert!(report.all_pass);
        assert_eq!(report.rows.len(), 17 * 16 / 2);
    }

    #[test]
    fn stationary_and_translating_moments() {
        // Stationary atom: constant moment.
        let graph = MetricGraph::new(
            vec!["S".into(), "T".into()],
            vec![("a".into(), "S".into(), "T".into(), f64::INFINITY)],
            vec!["S".into()],
        )
        .unwrap();
        let center = graph.point("a", 0.0).unwrap();
        let still = Instance {
            m0: AtomicMeasure::from_atoms(&graph, vec![(graph.point("a", 2.0).unwrap(), 0.7)])
                .unwrap(),
            graph: graph.clone(),
            routing: RoutingMatrix::new(),
            field: VelocityField::Tabulated {
                profiles: vec![ArcProfile::constant(0.0)],
                v_max: 1.0,
            },
            sigma: BoundaryMeasure::new(),
            horizon: 1.0,
            tolerances: Tolerances::default(),
            exclude_self: true,
        };
        let traj = solve(&still, 3).unwrap();
        let report = moment_bound_check(&still, &traj, center, 1);
        assert!(report.pass);
        for (_, m) in &report.rows {
            assert!((m - 1.4).abs() < 1e-12);
        }

        // Translating atom: first moment grows exactly linearly.
        let moving = Instance {
            field: VelocityField::Tabulated {
                profiles: vec![ArcProfile::constant(1.0)],
                v_max: 1.0,
            },
            ..still.clone()
        };
        let traj = solve(&moving, 3).unwrap();
        let m1 = moment_bound_check(&moving, &traj, center, 1);
        for (t, m) in &m1.rows {
            assert!((m - 0.7 * (2.0 + t)).abs() < 1e-12, "t={t}: {m}");
        }
        let m2 = moment_bound_check(&moving, &traj, center, 2);
        for (t, m) in &m2.rows {
            let d = 2.0 + t;
            assert!((m - 0.7 * d * d).abs() < 1e-12);
        }
        assert!(m1.pass && m2.pass);
    }

    #[test]
    fn gluing_is_bitwise_exact() {
        let mut inst = y_instance(y_nonlocal());
        let mut sigma = BoundaryMeasure::new();
        sigma.set(
            0,
            crate::measure::SourceTerm {
                rate: PiecewiseConstant::constant(0.0),
                atoms: vec![(0.7, 0.5)],
            },
        );
        inst.sigma = sigma;
        let report = gluing_check(&inst, 3).unwrap();
        assert!(report.pass(), "mismatches: {:?}", report.mismatches);
        assert_eq!(report.tau, 0.7);
    }

    #[test]
    fn invalid_instance_is_rejected() {
        let mut inst = y_instance(y_tabulated());
        // Break row stochasticity.
        inst.routing = RoutingMatrix::new();
        assert!(matches!(solve(&inst, 2), Err(SolveError::Invalid(_))));
    }
}
