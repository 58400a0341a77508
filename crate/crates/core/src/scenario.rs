//! Scenario files: a single JSON document describing the network, routing,
//! velocity model, initial and boundary data, horizon, levels and
//! tolerances. Loading validates everything through the module validators;
//! `normalized_json` echoes the scenario back with defaults filled in, and
//! normalizing a normalized dump is the identity.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{GraphPoint, MetricGraph};
use crate::linear::Tolerances;
use crate::measure::{AtomicMeasure, BoundaryMeasure, SourceTerm};
use crate::routing::{PiecewiseConstant, RoutingMatrix};
use crate::scheme::Instance;
use crate::velocity::{AlphaWeights, ArcProfile, Kernel, KernelShape, SampleSpec, VelocityField};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Graph(#[from] crate::graph::GraphError),
    #[error(transparent)]
    Routing(#[from] crate::routing::RoutingError),
    #[error(transparent)]
    Velocity(#[from] crate::velocity::VelocityError),
    #[error(transparent)]
    Measure(#[from] crate::measure::MeasureError),
    #[error("scenario failed validation:\n{0}")]
    Validation(String),
}

/// Arc length: a positive number, or the string `"inf"` for an unbounded
/// terminal arc.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LengthSpec {
    Finite(f64),
    Word(String),
}

impl LengthSpec {
    fn value(&self) -> Result<f64, ScenarioError> {
        match self {
            LengthSpec::Finite(v) => Ok(*v),
            LengthSpec::Word(w) if w == "inf" => Ok(f64::INFINITY),
            LengthSpec::Word(w) => Err(ScenarioError::Validation(format!(
                "unknown arc length `{w}` (use a positive number or \"inf\")"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArcSpec {
    pub id: String,
    pub tail: String,
    pub head: String,
    pub length: LengthSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    pub vertices: Vec<String>,
    pub arcs: Vec<ArcSpec>,
    #[serde(default)]
    pub sources: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoutingEntrySpec {
    pub from: String,
    pub to: String,
    #[serde(default)]
    pub breakpoints: Vec<f64>,
    pub values: Vec<f64>,
}

/// Per-arc speed profile: a constant, or piecewise-linear `[s, v]` nodes.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProfileSpec {
    Constant(f64),
    Nodes(Vec<(f64, f64)>),
}

impl ProfileSpec {
    fn build(&self) -> Result<ArcProfile, ScenarioError> {
        Ok(match self {
            ProfileSpec::Constant(v) => ArcProfile::constant(*v),
            ProfileSpec::Nodes(nodes) => ArcProfile::new(nodes.clone())?,
        })
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum KernelShapeSpec {
    Constant,
    Linear,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub shape: KernelShapeSpec,
    pub k0: f64,
    pub radius: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlphaEntrySpec {
    pub from: String,
    pub to: String,
    pub weight: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum VelocitySpec {
    Tabulated {
        v_max: f64,
        profiles: BTreeMap<String, ProfileSpec>,
    },
    NonlocalTraffic {
        v_max: f64,
        free_flow: BTreeMap<String, ProfileSpec>,
        kernel: KernelSpec,
        #[serde(default)]
        alpha: Vec<AlphaEntrySpec>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomSpec {
    pub arc: String,
    pub s: f64,
    pub mass: f64,
}

/// Absolutely continuous initial data on one arc, ingested by midpoint
/// quadrature at the stated resolution.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensitySpec {
    pub arc: String,
    /// Piecewise-linear density nodes `[s, value]`; the quadrature covers
    /// the node span.
    pub profile: Vec<(f64, f64)>,
    pub resolution: usize,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialMeasureSpec {
    #[serde(default)]
    pub atoms: Vec<AtomSpec>,
    #[serde(default)]
    pub densities: Vec<DensitySpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateSpec {
    #[serde(default)]
    pub breakpoints: Vec<f64>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceAtomSpec {
    pub time: f64,
    pub mass: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundarySpec {
    #[serde(default)]
    pub rate: Option<RateSpec>,
    #[serde(default)]
    pub atoms: Vec<SourceAtomSpec>,
}

fn default_eps_event() -> f64 {
    1e-10
}
fn default_eps_step() -> f64 {
    1e-3
}
fn default_eps_merge() -> f64 {
    1e-12
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TolerancesSpec {
    #[serde(default)]
    pub eps_mass: f64,
    #[serde(default = "default_eps_event")]
    pub eps_event: f64,
    #[serde(default = "default_eps_step")]
    pub eps_step: f64,
    #[serde(default = "default_eps_merge")]
    pub eps_merge: f64,
}

impl Default for TolerancesSpec {
    fn default() -> Self {
        Self {
            eps_mass: 0.0,
            eps_event: default_eps_event(),
            eps_step: default_eps_step(),
            eps_merge: default_eps_merge(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum SelfInteractionSpec {
    #[default]
    Exclude,
    Include,
}

fn default_points_per_arc() -> usize {
    25
}
fn default_unbounded_span() -> f64 {
    4.0
}
fn default_num_measures() -> usize {
    12
}
fn default_atoms_per_measure() -> usize {
    5
}
fn default_mass_scale() -> f64 {
    1.0
}
fn default_seed() -> u64 {
    0x5EED
}

/// Sampling plan for the hypothesis checks (H1-H3).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSpecSection {
    #[serde(default = "default_points_per_arc")]
    pub points_per_arc: usize,
    #[serde(default = "default_unbounded_span")]
    pub unbounded_span: f64,
    #[serde(default)]
    pub grid_arcs: Option<Vec<String>>,
    #[serde(default)]
    pub measure_arcs: Option<Vec<String>>,
    #[serde(default = "default_num_measures")]
    pub num_measures: usize,
    #[serde(default = "default_atoms_per_measure")]
    pub atoms_per_measure: usize,
    #[serde(default = "default_mass_scale")]
    pub mass_scale: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

impl Default for SampleSpecSection {
    fn default() -> Self {
        Self {
            points_per_arc: default_points_per_arc(),
            unbounded_span: default_unbounded_span(),
            grid_arcs: None,
            measure_arcs: None,
            num_measures: default_num_measures(),
            atoms_per_measure: default_atoms_per_measure(),
            mass_scale: default_mass_scale(),
            seed: default_seed(),
        }
    }
}

fn default_levels() -> Vec<u32> {
    vec![4]
}

/// The parsed scenario document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub graph: GraphSpec,
    #[serde(default)]
    pub routing: Vec<RoutingEntrySpec>,
    pub velocity: VelocitySpec,
    #[serde(default)]
    pub initial_measure: InitialMeasureSpec,
    #[serde(default)]
    pub boundary: BTreeMap<String, BoundarySpec>,
    pub horizon: f64,
    #[serde(default = "default_levels")]
    pub levels: Vec<u32>,
    #[serde(default)]
    pub tolerances: TolerancesSpec,
    #[serde(default)]
    pub self_interaction: SelfInteractionSpec,
    #[serde(default)]
    pub sample: SampleSpecSection,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Canonical dump with all defaults materialized.
    pub fn normalized_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("scenario serializes");
        s.push('\n');
        s
    }

    /// Builds and fully validates the runnable instance.
    pub fn build(&self) -> Result<Instance, ScenarioError> {
        let graph = self.build_graph()?;
        let routing = self.build_routing(&graph)?;
        let field = self.build_velocity(&graph)?;
        let m0 = self.build_initial(&graph)?;
        let sigma = self.build_boundary(&graph)?;
        let inst = Instance {
            graph,
            routing,
            field,
            m0,
            sigma,
            horizon: self.horizon,
            tolerances: Tolerances {
                eps_mass: self.tolerances.eps_mass,
                eps_event: self.tolerances.eps_event,
                eps_step: self.tolerances.eps_step,
                eps_merge: self.tolerances.eps_merge,
            },
            exclude_self: self.self_interaction == SelfInteractionSpec::Exclude,
        };
        let report = inst.validate();
        if !report.is_ok() {
            return Err(ScenarioError::Validation(report.to_string()));
        }
        if self.levels.is_empty() {
            return Err(ScenarioError::Validation("levels must be nonempty".into()));
        }
        Ok(inst)
    }

    fn build_graph(&self) -> Result<MetricGraph, ScenarioError> {
        let arcs = self
            .graph
            .arcs
            .iter()
            .map(|a| {
                Ok((
                    a.id.clone(),
                    a.tail.clone(),
                    a.head.clone(),
                    a.length.value()?,
                ))
            })
            .collect::<Result<Vec<_>, ScenarioError>>()?;
        Ok(MetricGraph::new(
            self.graph.vertices.clone(),
            arcs,
            self.graph.sources.clone(),
        )?)
    }

    fn build_routing(&self, g: &MetricGraph) -> Result<RoutingMatrix, ScenarioError> {
        let mut p = RoutingMatrix::new();
        for e in &self.routing {
            let from = g.arc_id(&e.from)?;
            let to = g.arc_id(&e.to)?;
            p.insert(
                from,
                to,
                PiecewiseConstant::new(e.breakpoints.clone(), e.values.clone())?,
            );
        }
        Ok(p)
    }

    fn build_profiles(
        &self,
        g: &MetricGraph,
        specs: &BTreeMap<String, ProfileSpec>,
    ) -> Result<Vec<ArcProfile>, ScenarioError> {
        let mut profiles = Vec::with_capacity(g.num_arcs());
        for arc in g.arcs() {
            let spec = specs.get(&arc.name).ok_or_else(|| {
                ScenarioError::Validation(format!(
                    "velocity section is missing a profile for arc `{}`",
                    arc.name
                ))
            })?;
            profiles.push(spec.build()?);
        }
        for name in specs.keys() {
            if g.arc_id(name).is_err() {
                return Err(ScenarioError::Validation(format!(
                    "velocity profile for unknown arc `{name}`"
                )));
            }
        }
        Ok(profiles)
    }

    fn build_velocity(&self, g: &MetricGraph) -> Result<VelocityField, ScenarioError> {
        Ok(match &self.velocity {
            VelocitySpec::Tabulated { v_max, profiles } => VelocityField::Tabulated {
                profiles: self.build_profiles(g, profiles)?,
                v_max: *v_max,
            },
            VelocitySpec::NonlocalTraffic {
                v_max,
                free_flow,
                kernel,
                alpha,
            } => {
                let mut weights = AlphaWeights::new();
                for e in alpha {
                    weights.insert(g.arc_id(&e.from)?, g.arc_id(&e.to)?, e.weight);
                }
                VelocityField::NonlocalTraffic {
                    free_flow: self.build_profiles(g, free_flow)?,
                    kernel: Kernel {
                        peak: kernel.k0,
                        radius: kernel.radius,
                        shape: match kernel.shape {
                            KernelShapeSpec::Constant => KernelShape::Constant,
                            KernelShapeSpec::Linear => KernelShape::LinearDecay,
                        },
                    },
                    alpha: weights,
                    v_max: *v_max,
                }
            }
        })
    }

    fn build_initial(&self, g: &MetricGraph) -> Result<AtomicMeasure, ScenarioError> {
        let mut atoms: Vec<(GraphPoint, f64)> = Vec::new();
        for a in &self.initial_measure.atoms {
            atoms.push((g.point(&a.arc, a.s)?, a.mass));
        }
        for d in &self.initial_measure.densities {
            let arc = g.arc_id(&d.arc)?;
            if d.profile.len() < 2 || d.resolution == 0 {
                return Err(ScenarioError::Validation(format!(
                    "density on arc `{}` needs >= 2 profile nodes and a positive resolution",
                    d.arc
                )));
            }
            let rho = ArcProfile::new(d.profile.clone())?;
            let lo = d.profile.first().unwrap().0;
            let hi = d.profile.last().unwrap().0;
            let width = (hi - lo) / d.resolution as f64;
            for k in 0..d.resolution {
                let mid = lo + width * (k as f64 + 0.5);
                let mass = rho.eval(mid) * width;
                if mass > 0.0 {
                    atoms.push((GraphPoint::new(arc, mid), mass));
                }
            }
        }
        Ok(AtomicMeasure::from_atoms(g, atoms)?)
    }

    fn build_boundary(&self, g: &MetricGraph) -> Result<BoundaryMeasure, ScenarioError> {
        let mut sigma = BoundaryMeasure::new();
        for (name, spec) in &self.boundary {
            let v = g.vertex_id(name)?;
            let rate = match &spec.rate {
                Some(r) => PiecewiseConstant::new(r.breakpoints.clone(), r.values.clone())?,
                None => PiecewiseConstant::constant(0.0),
            };
            sigma.set(
                v,
                SourceTerm {
                    rate,
                    atoms: spec.atoms.iter().map(|a| (a.time, a.mass)).collect(),
                },
            );
        }
        Ok(sigma)
    }

    /// Resolves the sampling section against the built graph.
    pub fn build_sample_spec(&self, g: &MetricGraph) -> Result<SampleSpec, ScenarioError> {
        let resolve = |names: &Option<Vec<String>>| -> Result<Option<Vec<usize>>, ScenarioError> {
            match names {
                None => Ok(None),
                Some(list) => Ok(Some(
                    list.iter()
                        .map(|n| g.arc_id(n).map_err(ScenarioError::from))
                        .collect::<Result<Vec<_>, _>>()?,
                )),
            }
        };
        Ok(SampleSpec {
            points_per_arc: self.sample.points_per_arc,
            unbounded_span: self.sample.unbounded_span,
            grid_arcs: resolve(&self.sample.grid_arcs)?,
            measure_arcs: resolve(&self.sample.measure_arcs)?,
            num_measures: self.sample.num_measures,
            atoms_per_measure: self.sample.atoms_per_measure,
            mass_scale: self.sample.mass_scale,
            seed: self.sample.seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "graph": {
            "vertices": ["S", "T"],
            "arcs": [{"id": "a", "tail": "S", "head": "T", "length": "inf"}],
            "sources": ["S"]
        },
        "velocity": {"type": "tabulated", "v_max": 1.0, "profiles": {"a": 1.0}},
        "initial_measure": {"atoms": [{"arc": "a", "s": 0.5, "mass": 1.0}]},
        "horizon": 1.0
    }"#;

    #[test]
    fn minimal_scenario_loads_with_defaults() {
        let sc = Scenario::from_json(MINIMAL).unwrap();
        assert_eq!(sc.levels, vec![4]);
        assert_eq!(sc.tolerances.eps_event, 1e-10);
        assert_eq!(sc.self_interaction, SelfInteractionSpec::Exclude);
        let inst = sc.build().unwrap();
        assert_eq!(inst.m0.total_mass(), 1.0);
    }

    #[test]
    fn normalization_is_idempotent() {
        let sc = Scenario::from_json(MINIMAL).unwrap();
        let dump1 = sc.normalized_json();
        let sc2 = Scenario::from_json(&dump1).unwrap();
        let dump2 = sc2.normalized_json();
        assert_eq!(dump1, dump2);
    }

    #[test]
    fn routing_violation_is_reported_with_context() {
        let text = r#"{
            "graph": {
                "vertices": ["S", "V", "A", "B"],
                "arcs": [
                    {"id": "in", "tail": "S", "head": "V", "length": 1.0},
                    {"id": "l", "tail": "V", "head": "A", "length": "inf"},
                    {"id": "r", "tail": "V", "head": "B", "length": "inf"}
                ],
                "sources": ["S"]
            },
            "routing": [
                {"from": "in", "to": "l", "values": [0.4]},
                {"from": "in", "to": "r", "values": [0.5]}
            ],
            "velocity": {"type": "tabulated", "v_max": 1.0,
                         "profiles": {"in": 1.0, "l": 1.0, "r": 1.0}},
            "horizon": 1.0
        }"#;
        let sc = Scenario::from_json(text).unwrap();
        let err = sc.build().unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("row for arc `in` sums to 0.9"), "{msg}");
    }

    #[test]
    fn unknown_kernel_shape_lists_alternatives() {
        let text = r#"{
            "graph": {
                "vertices": ["S", "T"],
                "arcs": [{"id": "a", "tail": "S", "head": "T", "length": "inf"}],
                "sources": ["S"]
            },
            "velocity": {"type": "nonlocal_traffic", "v_max": 1.0,
                         "free_flow": {"a": 1.0},
                         "kernel": {"shape": "gaussian", "k0": 1.0, "radius": 0.5}},
            "horizon": 1.0
        }"#;
        let err = Scenario::from_json(text).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("constant"), "{msg}");
        assert!(msg.contains("linear"), "{msg}");
    }

    #[test]
    fn densities_quadrature_preserves_mass_to_first_order() {
        let text = r#"{
            "graph": {
                "vertices": ["S", "T"],
                "arcs": [{"id": "a", "tail": "S", "head": "T", "length": "inf"}],
                "sources": ["S"]
            },
            "velocity": {"type": "tabulated", "v_max": 1.0, "profiles": {"a": 1.0}},
            "initial_measure": {"densities": [
                {"arc": "a", "profile": [[0.0, 1.0], [2.0, 1.0]], "resolution": 40}
            ]},
            "horizon": 1.0
        }"#;
        let sc = Scenario::from_json(text).unwrap();
        let inst = sc.build().unwrap();
        assert_eq!(inst.m0.atoms().len(), 40);
        // Constant density: midpoint quadrature is exact.
        assert!((inst.m0.total_mass() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let bad = MINIMAL.replace("\"horizon\": 1.0", "\"horizon\": 1.0, \"oops\": 3");
        assert!(Scenario::from_json(&bad).is_err());
    }
}
