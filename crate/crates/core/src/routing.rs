//! Time-dependent junction coefficients.
//!
//! At every internal vertex a row-stochastic matrix `p_kj(t)` distributes
//! the mass leaving arc `e_k` over the outgoing arcs `e_j`. Coefficients are
//! piecewise constant in time (the representable slice of the BV class) and
//! evaluated right-continuously, so an atom arriving exactly at a breakpoint
//! takes the post-switch split.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::graph::{ArcId, MetricGraph, ValidationReport};

#[derive(Debug, Error)]
pub enum RoutingError {
    #[error("piecewise-constant spec needs values.len() == breakpoints.len() + 1 (got {values} values, {breakpoints} breakpoints)")]
    Shape { values: usize, breakpoints: usize },
    #[error("breakpoints must be finite and strictly increasing")]
    BadBreakpoints,
    #[error("path has {arcs} arcs but {times} exit times were supplied")]
    LengthMismatch { arcs: usize, times: usize },
}

/// Right-continuous step function on `[0, +inf)`.
///
/// `values[i]` holds on `[breakpoints[i-1], breakpoints[i])`, with the first
/// value extending to `-inf` and the last one to `+inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseConstant {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
}

impl PiecewiseConstant {
    pub fn new(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self, RoutingError> {
        if values.len() != breakpoints.len() + 1 {
            return Err(RoutingError::Shape {
                values: values.len(),
                breakpoints: breakpoints.len(),
            });
        }
        let ordered = breakpoints.windows(2).all(|w| w[0] < w[1])
            && breakpoints.iter().all(|b| b.is_finite());
        if !ordered {
            return Err(RoutingError::BadBreakpoints);
        }
        Ok(Self {
            breakpoints,
            values,
        })
    }

    pub fn constant(v: f64) -> Self {
        Self {
            breakpoints: Vec::new(),
            values: vec![v],
        }
    }

    pub fn value_at(&self, t: f64) -> f64 {
        let k = self.breakpoints.partition_point(|&b| b <= t);
        self.values[k]
    }

    /// Integral over `[a, b)`.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        let mut total = 0.0;
        let mut left = a;
        for (i, &bp) in self.breakpoints.iter().enumerate() {
            if bp <= left {
                continue;
            }
            if bp >= b {
                break;
            }
            total += self.values[i.min(self.values.len() - 1)] * (bp - left);
            left = bp;
        }
        total += self.value_at(left) * (b - left);
        total
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// The junction distribution matrix: `(incoming arc, outgoing arc)` entries.
#[derive(Debug, Clone, Default)]
pub struct RoutingMatrix {
    entries: BTreeMap<(ArcId, ArcId), PiecewiseConstant>,
}

impl RoutingMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, from: ArcId, to: ArcId, f: PiecewiseConstant) {
        self.entries.insert((from, to), f);
    }

    pub fn entries(&self) -> impl Iterator<Item = (&(ArcId, ArcId), &PiecewiseConstant)> {
        self.entries.iter()
    }

    /// Right-continuous evaluation; absent pairs route nothing.
    pub fn coefficient(&self, from: ArcId, to: ArcId, t: f64) -> f64 {
        self.entries
            .get(&(from, to))
            .map(|f| f.value_at(t))
            .unwrap_or(0.0)
    }

    /// Checks adjacency support, `[0,1]` ranges, and row stochasticity on
    /// every constancy interval of every row that mass can actually leave
    /// (bounded arcs whose head has outgoing arcs).
    pub fn validate(&self, g: &MetricGraph) -> ValidationReport {
        let mut report = ValidationReport::default();
        for (&(k, j), f) in &self.entries {
            if k >= g.num_arcs() || j >= g.num_arcs() {
                report.push(format!("routing entry ({k}, {j}) references unknown arc"));
                continue;
            }
            let nonzero = f.values.iter().any(|&v| v != 0.0);
            if nonzero && g.arc(k).head != g.arc(j).tail {
                report.push(format!(
                    "routing entry `{}` -> `{}` connects non-adjacent arcs",
                    g.arc(k).name,
                    g.arc(j).name
                ));
            }
            for &v in &f.values {
                if !(0.0..=1.0).contains(&v) {
                    report.push(format!(
                        "routing entry `{}` -> `{}` has value {v} outside [0, 1]",
                        g.arc(k).name,
                        g.arc(j).name
                    ));
                }
            }
        }
        for k in 0..g.num_arcs() {
            let arc = g.arc(k);
            if arc.is_unbounded() {
                continue; // mass never reaches the head
            }
            let outs = g.outgoing(arc.head);
            if outs.is_empty() {
                continue; // sink; flagged by graph validation
            }
            let mut bps: Vec<f64> = Vec::new();
            for &j in outs {
                if let Some(f) = self.entries.get(&(k, j)) {
                    bps.extend_from_slice(f.breakpoints());
                }
            }
            bps.sort_by(|a, b| a.partial_cmp(b).unwrap());
            bps.dedup();
            let mut probes = vec![0.0];
            probes.extend(bps.iter().copied());
            for (i, &t) in probes.iter().enumerate() {
                let sum: f64 = outs.iter().map(|&j| self.coefficient(k, j, t)).sum();
                if (sum - 1.0).abs() > 1e-12 {
                    let until = probes
                        .get(i + 1)
                        .map(|u| format!("{u}"))
                        .unwrap_or_else(|| "inf".to_string());
                    report.push(format!(
                        "row for arc `{}` sums to {sum} on [{t}, {until})",
                        arc.name
                    ));
                }
            }
        }
        report
    }

    /// Breakpoints of any entry strictly inside `(t0, t1)`, ascending.
    pub fn breakpoints_in(&self, t0: f64, t1: f64) -> Vec<f64> {
        let mut bps: Vec<f64> = self
            .entries
            .values()
            .flat_map(|f| f.breakpoints().iter().copied())
            .filter(|&b| b > t0 && b < t1)
            .collect();
        bps.sort_by(|a, b| a.partial_cmp(b).unwrap());
        bps.dedup();
        bps
    }

    /// Product of the routing coefficients along a path, evaluated at the
    /// junction-crossing times. A single-arc path is the empty product.
    pub fn path_coefficient(
        &self,
        path: &[ArcId],
        exit_times: &[f64],
    ) -> Result<f64, RoutingError> {
        if path.is_empty() || exit_times.len() != path.len() - 1 {
            return Err(RoutingError::LengthMismatch {
                arcs: path.len(),
                times: exit_times.len(),
            });
        }
        Ok(path
            .windows(2)
            .zip(exit_times)
            .map(|(w, &t)| self.coefficient(w[0], w[1], t))
            .product())
    }
}
