//! Measure-valued transport on oriented metric networks.
//!
//! The crate simulates finite positive measures pushed along a network by a
//! velocity field that may depend on the measure itself (nonlocal traffic
//! interactions), with stochastic mass splitting at junctions and boundary
//! inflow at source vertices. A semi-discrete scheme freezes the velocity on
//! dyadic time windows and solves each window exactly by the method of
//! characteristics; the flat (bounded-Lipschitz) metric instruments every
//! convergence and stability check.

pub mod graph;
pub mod linear;
pub mod lp;
pub mod measure;
pub mod rng;
pub mod routing;
pub mod scenario;
pub mod scheme;
pub mod velocity;

pub use graph::{ArcId, BallSegment, GraphPoint, MetricGraph, Path, ValidationReport, VertexId};
pub use linear::{
    advance, advance_measure, arc_flow, representation_check, FrozenField, Tolerances,
};
pub use measure::{
    flat_distance, flat_distance_flow, p_moment, Atom, AtomicMeasure, BoundaryMeasure, SourceTerm,
};
pub use routing::{PiecewiseConstant, RoutingMatrix};
pub use scenario::Scenario;
pub use scheme::{solve, Instance, Trajectory};
pub use velocity::{AlphaWeights, ArcProfile, Kernel, KernelShape, SampleSpec, VelocityField};
