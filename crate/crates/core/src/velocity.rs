//! Velocity fields on the network.
//!
//! Two variants share one bound `V_max`. `Tabulated` fields are
//! measure-independent per-arc speed profiles (the linear problem).
//! `NonlocalTraffic` is the traffic model: a free-flow speed reduced by a
//! kernel-weighted count of the mass a driver sees downstream, clamped at
//! zero. A driver on arc `e_k` looks into the visual field `D(x)` (forward
//! ball of radius `R`) and weighs each outgoing road `e_j` by a
//! route-preference coefficient `alpha_kj`; the portion of `D(x)` on the
//! driver's own arc is counted once with weight one, which is what the
//! per-route sum collapses to because the alpha row sums to one.

use thiserror::Error;

use crate::graph::{ArcId, GraphPoint, MetricGraph, ValidationReport};
use crate::measure::{flat_distance, AtomicMeasure, MeasureError};
use crate::rng::SplitMix64;

#[derive(Debug, Error)]
pub enum VelocityError {
    #[error("sample spec needs at least 2 grid points per arc (got {0})")]
    DegenerateSampleSpec(usize),
    #[error("arc profile needs at least one node")]
    EmptyProfile,
    #[error("profile nodes must have finite, ascending coordinates")]
    BadProfile,
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

/// Piecewise-linear speed profile along one arc. Outside the node range the
/// boundary values extend constantly, which keeps unbounded arcs covered.
#[derive(Debug, Clone, PartialEq)]
pub struct ArcProfile {
    nodes: Vec<(f64, f64)>,
}

impl ArcProfile {
    pub fn new(nodes: Vec<(f64, f64)>) -> Result<Self, VelocityError> {
        if nodes.is_empty() {
            return Err(VelocityError::EmptyProfile);
        }
        let ok = nodes.iter().all(|(s, v)| s.is_finite() && v.is_finite())
            && nodes.windows(2).all(|w| w[0].0 < w[1].0);
        if !ok {
            return Err(VelocityError::BadProfile);
        }
        Ok(Self { nodes })
    }

    pub fn constant(v: f64) -> Self {
        Self {
            nodes: vec![(0.0, v)],
        }
    }

    pub fn nodes(&self) -> &[(f64, f64)] {
        &self.nodes
    }

    pub fn eval(&self, s: f64) -> f64 {
        let n = &self.nodes;
        if s <= n[0].0 {
            return n[0].1;
        }
        if s >= n[n.len() - 1].0 {
            return n[n.len() - 1].1;
        }
        let k = n.partition_point(|(x, _)| *x <= s);
        let (x0, v0) = n[k - 1];
        let (x1, v1) = n[k];
        v0 + (v1 - v0) * (s - x0) / (x1 - x0)
    }

    pub fn max_value(&self) -> f64 {
        self.nodes.iter().map(|(_, v)| *v).fold(f64::MIN, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.nodes.iter().map(|(_, v)| *v).fold(f64::MAX, f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelShape {
    /// `k(d) = k0` on `[0, R]`.
    Constant,
    /// `k(d) = k0 (1 - d/R)` on `[0, R]`.
    LinearDecay,
}

/// Nonincreasing Lipschitz interaction kernel supported on `[0, R]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kernel {
    pub peak: f64,
    pub radius: f64,
    pub shape: KernelShape,
}

impl Kernel {
    pub fn eval(&self, d: f64) -> f64 {
        match self.shape {
            KernelShape::Constant => self.peak,
            KernelShape::LinearDecay => self.peak * (1.0 - d / self.radius).max(0.0),
        }
    }
}

/// Time-independent route-preference weights with the same support and
/// stochasticity constraints as the routing matrix.
#[derive(Debug, Clone, Default)]
pub struct AlphaWeights {
    entries: std::collections::BTreeMap<(ArcId, ArcId), f64>,
}

impl AlphaWeights {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, from: ArcId, to: ArcId, w: f64) {
        self.entries.insert((from, to), w);
    }

    pub fn get(&self, from: ArcId, to: ArcId) -> f64 {
        self.entries.get(&(from, to)).copied().unwrap_or(0.0)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&(ArcId, ArcId), &f64)> {
        self.entries.iter()
    }

    pub fn validate(&self, g: &MetricGraph) -> ValidationReport {
        let mut report = ValidationReport::default();
        for (&(k, j), &w) in &self.entries {
            if k >= g.num_arcs() || j >= g.num_arcs() {
                report.push(format!("alpha entry ({k}, {j}) references unknown arc"));
                continue;
            }
            if w != 0.0 && g.arc(k).head != g.arc(j).tail {
                report.push(format!(
                    "alpha entry `{}` -> `{}` connects non-adjacent arcs",
                    g.arc(k).name,
                    g.arc(j).name
                ));
            }
            if !(0.0..=1.0).contains(&w) {
                report.push(format!(
                    "alpha entry `{}` -> `{}` has weight {w} outside [0, 1]",
                    g.arc(k).name,
                    g.arc(j).name
                ));
            }
        }
        for k in 0..g.num_arcs() {
            let arc = g.arc(k);
            if arc.is_unbounded() {
                continue;
            }
            let outs = g.outgoing(arc.head);
            if outs.is_empty() {
                continue;
            }
            let sum: f64 = outs.iter().map(|&j| self.get(k, j)).sum();
            if (sum - 1.0).abs() > 1e-12 {
                report.push(format!(
                    "alpha row for arc `{}` sums to {sum}",
                    arc.name
                ));
            }
        }
        report
    }
}

/// A velocity field `v[m](x)`, bounded by `V_max` (hypothesis H1).
#[derive(Debug, Clone)]
pub enum VelocityField {
    Tabulated {
        profiles: Vec<ArcProfile>,
        v_max: f64,
    },
    NonlocalTraffic {
        free_flow: Vec<ArcProfile>,
        kernel: Kernel,
        alpha: AlphaWeights,
        v_max: f64,
    },
}

impl VelocityField {
    pub fn v_max(&self) -> f64 {
        match self {
            VelocityField::Tabulated { v_max, .. } => *v_max,
            VelocityField::NonlocalTraffic { v_max, .. } => *v_max,
        }
    }

    pub fn is_measure_dependent(&self) -> bool {
        matches!(self, VelocityField::NonlocalTraffic { .. })
    }

    pub fn validate(&self, g: &MetricGraph) -> ValidationReport {
        let mut report = ValidationReport::default();
        let check_profiles = |profiles: &[ArcProfile], v_max: f64, report: &mut ValidationReport| {
            if profiles.len() != g.num_arcs() {
                report.push(format!(
                    "expected one speed profile per arc ({} arcs, {} profiles)",
                    g.num_arcs(),
                    profiles.len()
                ));
                return;
            }
            for (j, p) in profiles.iter().enumerate() {
                if p.min_value() < 0.0 {
                    report.push(format!("negative speed on arc `{}`", g.arc(j).name));
                }
                if p.max_value() > v_max {
                    report.push(format!(
                        "speed {} on arc `{}` exceeds V_max = {v_max}",
                        p.max_value(),
                        g.arc(j).name
                    ));
                }
            }
        };
        match self {
            VelocityField::Tabulated { profiles, v_max } => {
                check_profiles(profiles, *v_max, &mut report)
            }
            VelocityField::NonlocalTraffic {
                free_flow,
                kernel,
                alpha,
                v_max,
            } => {
                check_profiles(free_flow, *v_max, &mut report);
                if kernel.peak < 0.0 {
                    report.push(format!("kernel peak {} is negative", kernel.peak));
                }
                if kernel.radius.is_nan()
                    || kernel.radius <= 0.0
                    || kernel.radius > g.min_arc_length()
                {
                    report.push(format!(
                        "visual radius {} outside (0, min arc length {}]",
                        kernel.radius,
                        g.min_arc_length()
                    ));
                }
                report.merge(alpha.validate(g));
            }
        }
        report
    }

    /// Evaluates `v[m](x)`; tabulated fields ignore the measure bit-for-bit.
    pub fn eval(&self, g: &MetricGraph, m: &AtomicMeasure, x: GraphPoint) -> f64 {
        match self {
            VelocityField::Tabulated { profiles, .. } => profiles[x.arc].eval(x.s),
            VelocityField::NonlocalTraffic {
                free_flow,
                kernel,
                alpha,
                ..
            } => {
                let vi = interaction_speed(g, kernel, alpha, m, x);
                (free_flow[x.arc].eval(x.s) - vi).max(0.0)
            }
        }
    }
}

/// Kernel-weighted mass seen in the visual field:
/// `sum_j alpha_kj sum_{y in D(x) cap (e_k u e_j)} m(y) k(d(x, y))`.
pub fn interaction_speed(
    g: &MetricGraph,
    kernel: &Kernel,
    alpha: &AlphaWeights,
    m: &AtomicMeasure,
    x: GraphPoint,
) -> f64 {
    interaction_speed_excluding(g, kernel, alpha, m.atoms(), x, None)
}

/// Interaction with one atom of the frozen measure skipped, for solvers that
/// exclude a moving atom's own mass from its field.
pub(crate) fn interaction_speed_excluding(
    g: &MetricGraph,
    kernel: &Kernel,
    alpha: &AlphaWeights,
    atoms: &[crate::measure::Atom],
    x: GraphPoint,
    skip: Option<usize>,
) -> f64 {
    let segments = g
        .downstream_ball(x, kernel.radius)
        .expect("radius validated against min arc length");
    let mut total = 0.0;
    for seg in &segments {
        let weight = if seg.arc == x.arc {
            1.0
        } else {
            alpha.get(x.arc, seg.arc)
        };
        if weight == 0.0 {
            continue;
        }
        for (i, atom) in atoms.iter().enumerate() {
            if Some(i) == skip || atom.point.arc != seg.arc {
                continue;
            }
            if atom.point.s >= seg.from && atom.point.s <= seg.to {
                let d = g.distance(x, atom.point);
                total += weight * atom.mass * kernel.eval(d);
            }
        }
    }
    total
}

/// How to sample the network when estimating the hypothesis constants.
#[derive(Debug, Clone)]
pub struct SampleSpec {
    /// Grid points per sampled arc (at least 2).
    pub points_per_arc: usize,
    /// Coordinate span used on unbounded arcs.
    pub unbounded_span: f64,
    /// Arcs to lay grids on; `None` means every arc.
    pub grid_arcs: Option<Vec<ArcId>>,
    /// Arcs random measures may occupy; `None` means every arc.
    pub measure_arcs: Option<Vec<ArcId>>,
    pub num_measures: usize,
    pub atoms_per_measure: usize,
    pub mass_scale: f64,
    pub seed: u64,
}

impl Default for SampleSpec {
    fn default() -> Self {
        Self {
            points_per_arc: 25,
            unbounded_span: 4.0,
            grid_arcs: None,
            measure_arcs: None,
            num_measures: 12,
            atoms_per_measure: 5,
            mass_scale: 1.0,
            seed: 0x5EED,
        }
    }
}

/// Empirical constants for the three standing hypotheses: the speed bound,
/// Lipschitz continuity in space, Lipschitz continuity in the measure.
#[derive(Debug, Clone)]
pub struct HypothesisReport {
    pub v_max: f64,
    /// H1: largest sampled speed.
    pub max_speed: f64,
    /// H2: largest same-arc difference quotient.
    pub h2_constant: f64,
    /// H3: largest speed difference per unit flat distance.
    pub h3_constant: f64,
    pub grid_points: usize,
    pub measures: usize,
}

impl HypothesisReport {
    pub fn h1_ok(&self) -> bool {
        self.max_speed <= self.v_max
    }
}

pub fn check_hypotheses(
    g: &MetricGraph,
    field: &VelocityField,
    spec: &SampleSpec,
) -> Result<HypothesisReport, VelocityError> {
    if spec.points_per_arc < 2 {
        return Err(VelocityError::DegenerateSampleSpec(spec.points_per_arc));
    }
    let grid_arcs: Vec<ArcId> = spec
        .grid_arcs
        .clone()
        .unwrap_or_else(|| (0..g.num_arcs()).collect());
    let measure_arcs: Vec<ArcId> = spec
        .measure_arcs
        .clone()
        .unwrap_or_else(|| (0..g.num_arcs()).collect());

    let mut grids: Vec<(ArcId, Vec<f64>)> = Vec::new();
    for &j in &grid_arcs {
        let arc = g.arc(j);
        let span = if arc.is_unbounded() {
            spec.unbounded_span
        } else {
            arc.length
        };
        let pts: Vec<f64> = (0..spec.points_per_arc)
            .map(|k| span * k as f64 / (spec.points_per_arc - 1) as f64)
            .collect();
        grids.push((j, pts));
    }

    let mut rng = SplitMix64::new(spec.seed);
    let mut measures = Vec::with_capacity(spec.num_measures);
    for _ in 0..spec.num_measures {
        let mut atoms = Vec::with_capacity(spec.atoms_per_measure);
        for _ in 0..spec.atoms_per_measure {
            let j = measure_arcs[rng.pick(measure_arcs.len())];
            let arc = g.arc(j);
            let span = if arc.is_unbounded() {
                spec.unbounded_span
            } else {
                arc.length
            };
            atoms.push((
                GraphPoint::new(j, rng.range(0.0, span)),
                rng.range(0.0, spec.mass_scale),
            ));
        }
        measures.push(AtomicMeasure::from_atoms(g, atoms)?);
    }

    let mut max_speed = 0.0f64;
    let mut h2 = 0.0f64;
    for m in &measures {
        for (j, pts) in &grids {
            let speeds: Vec<f64> = pts
                .iter()
                .map(|&s| field.eval(g, m, GraphPoint::new(*j, s)))
                .collect();
            for &v in &speeds {
                max_speed = max_speed.max(v);
            }
            for a in 0..pts.len() {
                for b in a + 1..pts.len() {
                    let q = (speeds[a] - speeds[b]).abs() / (pts[b] - pts[a]);
                    h2 = h2.max(q);
                }
            }
        }
    }

    let mut h3 = 0.0f64;
    for a in 0..measures.len() {
        for b in a + 1..measures.len() {
            let dist = flat_distance(g, &measures[a], &measures[b])?;
            if dist < 1e-14 {
                continue;
            }
            for (j, pts) in &grids {
                for &s in pts {
                    let x = GraphPoint::new(*j, s);
                    let dv = (field.eval(g, &measures[a], x) - field.eval(g, &measures[b], x))
                        .abs();
                    h3 = h3.max(dv / dist);
                }
            }
        }
    }

    Ok(HypothesisReport {
        v_max: field.v_max(),
        max_speed,
        h2_constant: h2,
        h3_constant: h3,
        grid_points: grids.iter().map(|(_, p)| p.len()).sum(),
        measures: measures.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fork_graph() -> MetricGraph {
        MetricGraph::new(
            vec!["S".into(), "V".into(), "A".into(), "B".into()],
            vec![
                ("in".into(), "S".into(), "V".into(), 2.0),
                ("out1".into(), "V".into(), "A".into(), f64::INFINITY),
                ("out2".into(), "V".into(), "B".into(), f64::INFINITY),
            ],
            vec!["S".into()],
        )
        .unwrap()
    }

    fn traffic_field(g: &MetricGraph, shape: KernelShape, k0: f64, radius: f64) -> VelocityField {
        let mut alpha = AlphaWeights::new();
        alpha.insert(0, 1, 0.5);
        alpha.insert(0, 2, 0.5);
        let field = VelocityField::NonlocalTraffic {
            free_flow: vec![ArcProfile::constant(1.0); 3],
            kernel: Kernel {
                peak: k0,
                radius,
                shape,
            },
            alpha,
            v_max: 1.0,
        };
        assert!(field.validate(g).is_ok());
        field
    }

    #[test]
    fn empty_measure_no_interaction() {
        let g = fork_graph();
        let field = traffic_field(&g, KernelShape::Constant, 0.5, 1.0);
        let m = AtomicMeasure::empty(&g);
        let x = g.point("in", 0.5).unwrap();
        match &field {
            VelocityField::NonlocalTraffic { kernel, alpha, .. } => {
                assert_eq!(interaction_speed(&g, kernel, alpha, &m, x), 0.0);
            }
            _ => unreachable!(),
        }
        assert_eq!(field.eval(&g, &m, x), 1.0);
    }

    #[test]
    fn single_atom_constant_kernel() {
        // One atom ahead on the only outgoing arc of a two-arc line.
        let g = MetricGraph::new(
            vec!["S".into(), "V".into(), "T".into()],
            vec![
                ("a".into(), "S".into(), "V".into(), 1.0),
                ("b".into(), "V".into(), "T".into(), f64::INFINITY),
            ],
            vec!["S".into()],
        )
        .unwrap();
        let mut alpha = AlphaWeights::new();
        alpha.insert(0, 1, 1.0);
        let kernel = Kernel {
            peak: 0.7,
            radius: 1.0,
            shape: KernelShape::Constant,
        };
        let m = AtomicMeasure::from_atoms(&g, vec![(g.point("b", 0.3).unwrap(), 0.4)]).unwrap();
        let x = g.point("a", 0.6).unwrap();
        let vi = interaction_speed(&g, &kernel, &alpha, &m, x);
        assert!((vi - 0.7 * 0.4).abs() < 1e-15);
    }

    #[test]
    fn symmetric_fork_linear_kernel() {
        let g = fork_graph();
        let k0 = 0.8;
        let radius = 1.0;
        let d = 0.6;
        let field = traffic_field(&g, KernelShape::LinearDecay, k0, radius);
        // Unit atoms on each outgoing arc at equal distance d from x.
        let x = g.point("in", 2.0).unwrap();
        let m = AtomicMeasure::from_atoms(
            &g,
            vec![
                (g.point("out1", d).unwrap(), 1.0),
                (g.point("out2", d).unwrap(), 1.0),
            ],
        )
        .unwrap();
        let expected = k0 * (1.0 - d / radius);
        match &field {
            VelocityField::NonlocalTraffic { kernel, alpha, .. } => {
                let vi = interaction_speed(&g, kernel, alpha, &m, x);
                assert!((vi - expected).abs() < 1e-12, "vi {vi} vs {expected}");

                // Quadrature cross-check: replace each atom by a narrow bump
                // of the same mass and integrate the kernel against it.
                let n = 400;
                let w = 1e-3;
                let mut bump = Vec::new();
                for arc in ["out1", "out2"] {
                    for k in 0..n {
                        let s = d - w / 2.0 + w * (k as f64 + 0.5) / n as f64;
                        bump.push((g.point(arc, s).unwrap(), 1.0 / n as f64));
                    }
                }
                let smeared = AtomicMeasure::from_atoms(&g, bump).unwrap();
                let vi_bump = interaction_speed(&g, kernel, alpha, &smeared, x);
                assert!(
                    (vi_bump - expected).abs() < k0 * w,
                    "quadrature {vi_bump} vs {expected}"
                );
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn clamp_floors_at_zero() {
        let g = fork_graph();
        let field = traffic_field(&g, KernelShape::Constant, 2.5, 1.0);
        // Heavy mass just ahead: interaction 2.5 > v_f = 1.
        let m = AtomicMeasure::from_atoms(&g, vec![(g.point("in", 1.2).unwrap(), 1.0)])
            .unwrap();
        let v = field.eval(&g, &m, g.point("in", 1.0).unwrap());
        assert_eq!(v, 0.0);
    }

    #[test]
    fn tabulated_ignores_measure_bitwise() {
        let g = fork_graph();
        let field = VelocityField::Tabulated {
            profiles: vec![
                ArcProfile::new(vec![(0.0, 0.2), (2.0, 1.0)]).unwrap(),
                ArcProfile::constant(1.0),
                ArcProfile::constant(0.5),
            ],
            v_max: 1.0,
        };
        let m1 = AtomicMeasure::empty(&g);
        let m2 = AtomicMeasure::from_atoms(&g, vec![(g.point("in", 1.0).unwrap(), 9.0)])
            .unwrap();
        for s in [0.0, 0.37, 1.0, 2.0] {
            let x = g.point("in", s).unwrap();
            assert_eq!(
                field.eval(&g, &m1, x).to_bits(),
                field.eval(&g, &m2, x).to_bits()
            );
        }
        assert!((field.eval(&g, &m1, g.point("in", 1.0).unwrap()) - 0.6).abs() < 1e-15);
    }

    #[test]
    fn locality_of_the_visual_field() {
        let g = fork_graph();
        let field = traffic_field(&g, KernelShape::LinearDecay, 0.5, 1.0);
        let x = g.point("in", 0.5).unwrap();
        let base = field.eval(&g, &AtomicMeasure::empty(&g), x);
        // Atom behind x and atom beyond the radius: both invisible.
        let invisible = AtomicMeasure::from_atoms(
            &g,
            vec![
                (g.point("in", 0.2).unwrap(), 5.0),
                (g.point("in", 1.8).unwrap(), 5.0),
            ],
        )
        .unwrap();
        assert_eq!(field.eval(&g, &invisible, x), base);
        // Adding mass inside the ball never speeds things up.
        let visible =
            AtomicMeasure::from_atoms(&g, vec![(g.point("in", 1.0).unwrap(), 0.5)]).unwrap();
        assert!(field.eval(&g, &visible, x) <= base);
    }

    #[test]
    fn hypothesis_report_degenerate_cases() {
        let g = fork_graph();
        let constant = VelocityField::Tabulated {
            profiles: vec![ArcProfile::constant(0.8); 3],
            v_max: 1.0,
        };
        let spec = SampleSpec {
            points_per_arc: 5,
            num_measures: 3,
            ..SampleSpec::default()
        };
        let report = check_hypotheses(&g, &constant, &spec).unwrap();
        assert!(report.h1_ok());
        assert_eq!(report.h2_constant, 0.0);
        assert_eq!(report.h3_constant, 0.0);

        // Zero kernel: no measure dependence.
        let zero_kernel = traffic_field(&g, KernelShape::LinearDecay, 0.0, 1.0);
        let report = check_hypotheses(&g, &zero_kernel, &spec).unwrap();
        assert_eq!(report.h3_constant, 0.0);

        let bad = SampleSpec {
            points_per_arc: 1,
            ..SampleSpec::default()
        };
        assert!(check_hypotheses(&g, &constant, &bad).is_err());
    }

    #[test]
    fn empirical_h3_below_kernel_bound() {
        let g = fork_graph();
        let k0 = 0.4;
        let radius = 1.0;
        let field = traffic_field(&g, KernelShape::LinearDecay, k0, radius);
        let spec = SampleSpec {
            points_per_arc: 9,
            num_measures: 15, // 105 measure pairs
            atoms_per_measure: 4,
            mass_scale: 1.2,
            seed: 99,
            ..SampleSpec::default()
        };
        let report = check_hypotheses(&g, &field, &spec).unwrap();
        assert!(report.h1_ok());
        let mass_bound = spec.atoms_per_measure as f64 * spec.mass_scale;
        let bound = k0 * (1.0f64).max(1.0 / radius) * (1.0 + mass_bound);
        assert!(
            report.h3_constant <= bound,
            "H3 {} above bound {bound}",
            report.h3_constant
        );
    }

    #[test]
    fn speeds_stay_in_bounds_on_samples() {
        let g = fork_graph();
        let field = traffic_field(&g, KernelShape::Constant, 0.9, 1.0);
        let spec = SampleSpec {
            points_per_arc: 7,
            num_measures: 8,
            ..SampleSpec::default()
        };
        let report = check_hypotheses(&g, &field, &spec).unwrap();
        assert!(report.max_speed <= field.v_max());
        assert!(report.h2_constant.is_finite());
        assert!(report.h3_constant.is_finite());
    }
}
