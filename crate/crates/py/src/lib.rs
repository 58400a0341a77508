//! Python bindings: scenario loading, runs, studies and the flat metric.
//!
//! Build with `cargo build -p netmass-py --release` and import the produced
//! `libnetmass_py.so` as `netmass.so` (see `python/smoke_test.py`).

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use netmass::scheme::{self, Perturbation};
use netmass::velocity::check_hypotheses;
use netmass::{flat_distance, flat_distance_flow, p_moment, AtomicMeasure, GraphPoint};

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// A loaded, validated scenario.
#[pyclass]
struct Scenario {
    spec: netmass::Scenario,
    instance: scheme::Instance,
}

#[pymethods]
impl Scenario {
    #[staticmethod]
    fn from_file(path: &str) -> PyResult<Self> {
        let spec = netmass::Scenario::load(path).map_err(err)?;
        let instance = spec.build().map_err(err)?;
        Ok(Self { spec, instance })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let spec = netmass::Scenario::from_json(text).map_err(err)?;
        let instance = spec.build().map_err(err)?;
        Ok(Self { spec, instance })
    }

    fn normalized_json(&self) -> String {
        self.spec.normalized_json()
    }

    #[getter]
    fn horizon(&self) -> f64 {
        self.instance.horizon
    }

    #[getter]
    fn levels(&self) -> Vec<u32> {
        self.spec.levels.clone()
    }

    fn simulate(&self, level: u32) -> PyResult<Solution> {
        let traj = scheme::solve(&self.instance, level).map_err(err)?;
        Ok(Solution {
            instance: self.instance.clone(),
            traj,
        })
    }

    /// Flat-metric gaps between consecutive levels: `[(N, e_N, ratio)]`.
    fn converge(&self, levels: Vec<u32>) -> PyResult<Vec<(u32, f64, Option<f64>)>> {
        let report = scheme::convergence_study(&self.instance, &levels).map_err(err)?;
        Ok(report
            .rows
            .iter()
            .map(|r| (r.level, r.e, r.ratio))
            .collect())
    }

    /// Continuous-dependence rows `[(delta, dist_in, sup_dist, K)]`.
    #[pyo3(signature = (deltas, level, kind = "mass"))]
    fn depend(
        &self,
        deltas: Vec<f64>,
        level: u32,
        kind: &str,
    ) -> PyResult<Vec<(f64, f64, f64, f64)>> {
        let kind = match kind {
            "mass" => Perturbation::MassScale,
            "shift" => Perturbation::PositionShift,
            other => return Err(PyValueError::new_err(format!("unknown kind `{other}`"))),
        };
        let rows = scheme::continuous_dependence_study(&self.instance, kind, &deltas, level)
            .map_err(err)?;
        Ok(rows
            .iter()
            .map(|r| (r.delta, r.dist_in, r.sup_dist, r.k_emp))
            .collect())
    }

    /// Empirical hypothesis constants `(max_speed, v_max, h2, h3)` using the
    /// scenario's sampling section.
    fn hypotheses(&self) -> PyResult<(f64, f64, f64, f64)> {
        let spec = self
            .spec
            .build_sample_spec(&self.instance.graph)
            .map_err(err)?;
        let report =
            check_hypotheses(&self.instance.graph, &self.instance.field, &spec).map_err(err)?;
        Ok((
            report.max_speed,
            report.v_max,
            report.h2_constant,
            report.h3_constant,
        ))
    }

    /// Flat (bounded-Lipschitz) distance between two atom lists given as
    /// `(arc_id, s, mass)` triples.
    fn flat_distance(
        &self,
        a: Vec<(String, f64, f64)>,
        b: Vec<(String, f64, f64)>,
    ) -> PyResult<f64> {
        let g = &self.instance.graph;
        let build = |list: &[(String, f64, f64)]| -> PyResult<AtomicMeasure> {
            let atoms = list
                .iter()
                .map(|(arc, s, mass)| Ok((g.point(arc, *s).map_err(err)?, *mass)))
                .collect::<PyResult<Vec<_>>>()?;
            AtomicMeasure::from_atoms(g, atoms).map_err(err)
        };
        let (ma, mb) = (build(&a)?, build(&b)?);
        let dual = flat_distance(g, &ma, &mb).map_err(err)?;
        // Cross-check against the independent primal solver.
        let primal = flat_distance_flow(g, &ma, &mb).map_err(err)?;
        let scale = dual.abs().max(primal.abs()).max(1e-12);
        if (dual - primal).abs() / scale > 1e-6 {
            return Err(PyValueError::new_err(format!(
                "flat-metric routes disagree: {dual} vs {primal}"
            )));
        }
        Ok(dual)
    }

    fn graph_distance(&self, a: (String, f64), b: (String, f64)) -> PyResult<f64> {
        let g = &self.instance.graph;
        let pa = g.point(&a.0, a.1).map_err(err)?;
        let pb = g.point(&b.0, b.1).map_err(err)?;
        Ok(g.distance(pa, pb))
    }

    fn forward_distance(&self, a: (String, f64), b: (String, f64)) -> PyResult<Option<f64>> {
        let g = &self.instance.graph;
        let pa = g.point(&a.0, a.1).map_err(err)?;
        let pb = g.point(&b.0, b.1).map_err(err)?;
        Ok(g.forward_distance(pa, pb))
    }
}

/// A finished run: grid snapshots, traces and the mass ledger.
#[pyclass]
struct Solution {
    instance: scheme::Instance,
    traj: scheme::Trajectory,
}

#[pymethods]
impl Solution {
    #[getter]
    fn times(&self) -> Vec<f64> {
        self.traj.grid.clone()
    }

    /// Atoms at the k-th grid time as `(arc_id, s, mass)` triples.
    fn snapshot(&self, k: usize) -> PyResult<Vec<(String, f64, f64)>> {
        if k >= self.traj.grid.len() {
            return Err(PyValueError::new_err(format!("grid index {k} out of range")));
        }
        let g = &self.instance.graph;
        Ok(self.traj.states[self.traj.grid_boundary(k)]
            .iter()
            .map(|a| (g.arc(a.arc).name.clone(), a.s, a.mass))
            .collect())
    }

    fn total_mass(&self, k: usize) -> PyResult<f64> {
        Ok(self.snapshot(k)?.iter().map(|(_, _, m)| m).sum())
    }

    /// Vertex crossings as `(vertex, from_arc, to_arc_or_None, time, mass)`.
    fn traces(&self) -> Vec<(String, String, Option<String>, f64, f64)> {
        let g = &self.instance.graph;
        self.traj
            .windows
            .iter()
            .flat_map(|w| w.events.iter())
            .map(|e| {
                (
                    g.vertex_name(e.vertex).to_string(),
                    g.arc(e.from_arc).name.clone(),
                    e.to_arc.map(|j| g.arc(j).name.clone()),
                    e.time,
                    e.mass,
                )
            })
            .collect()
    }

    /// Per-window `(t0, t1, source_in, pruned)` ledger rows.
    fn ledger(&self) -> Vec<(f64, f64, f64, f64)> {
        self.traj
            .windows
            .iter()
            .map(|w| (w.t0, w.t1, w.source_in, w.pruned))
            .collect()
    }

    /// Relative mass-balance residual at every boundary.
    fn mass_residuals(&self) -> Vec<f64> {
        self.traj.ledger_residuals()
    }

    /// p-moment of the k-th snapshot about `(arc, s)`.
    fn moment(&self, k: usize, center: (String, f64), p: u32) -> PyResult<f64> {
        let g = &self.instance.graph;
        let c: GraphPoint = g.point(&center.0, center.1).map_err(err)?;
        Ok(p_moment(g, &self.traj.snapshot_at_grid(k), c, p))
    }
}

#[pymodule]
#[pyo3(name = "netmass")]
fn netmass_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Scenario>()?;
    m.add_class::<Solution>()?;
    Ok(())
}
