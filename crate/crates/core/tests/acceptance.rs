//! Acceptance suite: one test per verification criterion, each printing a
//! single PASS line (run with `--nocapture` to see them). Criteria cover
//! mass bookkeeping, the two flat-metric routes, characteristic exactness,
//! the push-forward representation, junction transmission, scheme
//! convergence, continuous dependence, time regularity, moment bounds, the
//! velocity hypotheses and point-source gluing.

use std::path::PathBuf;
use std::time::Instant;

use netmass::graph::GraphPoint;
use netmass::linear::{FlowOutcome, Tolerances};
use netmass::rng::SplitMix64;
use netmass::scheme::{self, Instance, Perturbation};
use netmass::velocity::{check_hypotheses, ArcProfile, SampleSpec, VelocityField};
use netmass::{
    arc_flow, flat_distance, flat_distance_flow, p_moment, representation_check, AtomicMeasure,
    BoundaryMeasure, FrozenField, MetricGraph, RoutingMatrix, Scenario,
};

const FIXTURES: [&str; 4] = ["single_arc", "y_junction", "two_cycle", "six_arc"];

fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(format!("{name}.json"))
}

fn load(name: &str) -> (Scenario, Instance) {
    let scenario = Scenario::load(fixture_path(name)).expect("fixture loads");
    let instance = scenario.build().expect("fixture validates");
    (scenario, instance)
}

#[test]
fn criterion_01_mass_conservation() {
    for name in FIXTURES {
        let (_, inst) = load(name);
        let start = Instant::now();
        for level in 0..=8u32 {
            let traj = scheme::solve(&inst, level).expect("solve");
            for (i, r) in traj.ledger_residuals().iter().enumerate() {
                assert!(
                    *r <= 1e-12,
                    "{name} level {level}: ledger residual {r:.3e} at boundary {i}"
                );
            }
            // eps_mass = 0 in every shipped fixture: nothing may be pruned.
            assert!(
                traj.windows.iter().all(|w| w.pruned == 0.0),
                "{name} level {level}: pruned mass with eps_mass = 0"
            );
        }
        let elapsed = start.elapsed().as_secs_f64();
        assert!(elapsed < 10.0, "{name}: {elapsed:.1} s over the 10 s budget");
    }
    println!("criterion 01 (mass conservation, all fixtures, N <= 8): PASS");
}

#[test]
fn criterion_02_flat_metric_dual_primal_agreement() {
    let (_, inst) = load("six_arc");
    let g = &inst.graph;
    let mut rng = SplitMix64::new(0x0220_5EED);
    let start = Instant::now();

    let random_measure = |rng: &mut SplitMix64| {
        let n = 1 + rng.pick(10);
        let atoms = (0..n)
            .map(|_| {
                let arc = rng.pick(g.num_arcs());
                let span = if g.arc(arc).is_unbounded() {
                    3.0
                } else {
                    g.arc(arc).length
                };
                (
                    GraphPoint::new(arc, rng.range(0.0, span)),
                    rng.range(0.0, 2.0),
                )
            })
            .collect();
        AtomicMeasure::from_atoms(g, atoms).expect("valid atoms")
    };

    let zero = AtomicMeasure::empty(g);
    for round in 0..200 {
        let mu = random_measure(&mut rng);
        let nu = random_measure(&mut rng);
        let dual = flat_distance(g, &mu, &nu).expect("dual route");
        let primal = flat_distance_flow(g, &mu, &nu).expect("primal route");
        let scale = dual.abs().max(primal.abs()).max(1e-12);
        assert!(
            (dual - primal).abs() / scale <= 1e-9,
            "round {round}: dual {dual} vs primal {primal}"
        );
        // Positive measures: the norm is the total mass.
        let norm = flat_distance(g, &mu, &zero).expect("norm");
        assert!(
            (norm - mu.total_mass()).abs() <= 1e-12 * mu.total_mass().max(1.0),
            "round {round}: norm {norm} vs mass {}",
            mu.total_mass()
        );
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 30.0, "{elapsed:.1} s over the 30 s budget");
    println!("criterion 02 (flat metric dual/primal, 200 seeded pairs): PASS");
}

#[test]
fn criterion_03_characteristic_exactness() {
    let start = Instant::now();
    let g = MetricGraph::new(
        vec!["S".into(), "V".into(), "T".into()],
        vec![
            ("a".into(), "S".into(), "V".into(), 2.0),
            ("b".into(), "V".into(), "T".into(), f64::INFINITY),
        ],
        vec!["S".into()],
    )
    .unwrap();
    let tol = Tolerances::default();

    // Constant speed: translation and exit time are exact.
    let constant = VelocityField::Tabulated {
        profiles: vec![ArcProfile::constant(0.8), ArcProfile::constant(0.8)],
        v_max: 1.0,
    };
    let frozen = FrozenField::new(&g, &constant, &[], false);
    match arc_flow(&frozen, None, 0, 0.5, 0.0, 1.0, &tol) {
        FlowOutcome::Interior(s) => assert!((s - 1.3).abs() <= 1e-8),
        other => panic!("unexpected {other:?}"),
    }
    match arc_flow(&frozen, None, 0, 0.5, 0.0, 5.0, &tol) {
        FlowOutcome::Exit { theta } => assert!((theta - 1.5 / 0.8).abs() <= 1e-8),
        other => panic!("unexpected {other:?}"),
    }

    // Linear profile v(s) = s + 0.1: closed-form flow and exit time.
    let linear = VelocityField::Tabulated {
        profiles: vec![
            ArcProfile::new(vec![(0.0, 0.1), (2.0, 2.1)]).unwrap(),
            ArcProfile::constant(1.0),
        ],
        v_max: 2.1,
    };
    let frozen = FrozenField::new(&g, &linear, &[], false);
    for s0 in [0.0, 0.3, 1.2] {
        for t in [0.2, 0.5] {
            let exact = (s0 + 0.1) * f64::exp(t) - 0.1;
            if exact < 2.0 {
                match arc_flow(&frozen, None, 0, s0, 0.0, t, &tol) {
                    FlowOutcome::Interior(s) => {
                        assert!((s - exact).abs() <= 1e-8, "s0 {s0}, t {t}: {s} vs {exact}")
                    }
                    other => panic!("unexpected {other:?}"),
                }
            }
        }
        let theta_exact = ((2.0 + 0.1) / (s0 + 0.1)).ln();
        match arc_flow(&frozen, None, 0, s0, 0.0, 10.0, &tol) {
            FlowOutcome::Exit { theta } => assert!(
                (theta - theta_exact).abs() <= 1e-8,
                "s0 {s0}: theta {theta} vs {theta_exact}"
            ),
            other => panic!("unexpected {other:?}"),
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 1.0, "{elapsed:.2} s over the 1 s budget");
    println!("criterion 03 (characteristic exactness vs closed forms): PASS");
}

#[test]
fn criterion_04_representation_formula_equivalence() {
    let start = Instant::now();
    // All shipped fixtures have <= 6 arcs and <= 20 initial atoms; the
    // nonlocal fixture enters through its frozen (linear) field.
    for name in ["single_arc", "y_junction", "two_cycle", "six_arc", "y_nonlocal"] {
        let (_, inst) = load(name);
        let frozen = FrozenField::new(&inst.graph, &inst.field, inst.m0.atoms(), inst.exclude_self);
        for frac in [0.5, 1.0] {
            let t = inst.horizon * frac;
            let d = representation_check(
                &inst.graph,
                &frozen,
                &inst.routing,
                &inst.m0,
                &inst.sigma,
                t,
                12,
                &inst.tolerances,
            )
            .expect("representation check runs");
            assert!(d <= 1e-7, "{name} at t = {t}: discrepancy {d:.3e}");
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 30.0, "{elapsed:.1} s over the 30 s budget");
    println!("criterion 04 (event-driven vs path-enumeration push-forward): PASS");
}

#[test]
fn criterion_05_transmission_condition() {
    for name in FIXTURES {
        let (_, inst) = load(name);
        let traj = scheme::solve(&inst, 4).expect("solve");
        let mut checked = 0usize;
        for w in &traj.windows {
            let mut i = 0;
            while i < w.events.len() {
                let parent = &w.events[i];
                assert!(parent.to_arc.is_none(), "{name}: expected an arrival event");
                let mut child_sum = 0.0;
                let mut j = i + 1;
                while j < w.events.len() && w.events[j].to_arc.is_some() {
                    let child = &w.events[j];
                    assert_eq!(child.vertex, parent.vertex);
                    assert_eq!(child.from_arc, parent.from_arc);
                    assert_eq!(child.time, parent.time);
                    let p = inst.routing.coefficient(
                        child.from_arc,
                        child.to_arc.unwrap(),
                        child.time,
                    );
                    // Children are computed as parent * p; bit-exact equality.
                    assert!(
                        (child.mass - parent.mass * p).abs() <= 1e-12 * parent.mass,
                        "{name}: child {} vs parent {} * {p}",
                        child.mass,
                        parent.mass
                    );
                    child_sum += child.mass;
                    j += 1;
                }
                assert!(
                    (child_sum - parent.mass).abs() <= 1e-12 * parent.mass,
                    "{name}: children {child_sum} vs parent {}",
                    parent.mass
                );
                checked += 1;
                i = j;
            }
        }
        assert!(checked > 0 || name == "single_arc", "{name}: no junction events");
    }
    println!("criterion 05 (per-event transmission condition): PASS");
}

#[test]
fn criterion_06_scheme_convergence() {
    let start = Instant::now();

    // Nonlocal fixture: e_N nonincreasing for N = 4..9 and e_9 <= e_4 / 4.
    let (_, inst) = load("y_nonlocal");
    let levels: Vec<u32> = (4..=10).collect();
    let report = scheme::convergence_study(&inst, &levels).expect("study");
    assert_eq!(report.rows.len(), 6);
    for w in report.rows.windows(2) {
        assert!(
            w[1].e <= w[0].e * (1.0 + 1e-9),
            "e_{} = {:.3e} rose above e_{} = {:.3e}",
            w[1].level,
            w[1].e,
            w[0].level,
            w[0].e
        );
    }
    let e4 = report.rows.first().unwrap().e;
    let e9 = report.rows.last().unwrap().e;
    assert!(
        e9 <= e4 / 4.0,
        "e_9 = {e9:.3e} not below e_4 / 4 = {:.3e}",
        e4 / 4.0
    );

    // Measure-independent field: the scheme is level-independent up to the
    // event tolerance.
    let (_, linear) = load("y_junction");
    let lin_levels: Vec<u32> = (4..=8).collect();
    let lin = scheme::convergence_study(&linear, &lin_levels).expect("study");
    for row in &lin.rows {
        assert!(
            row.e <= 10.0 * linear.tolerances.eps_event,
            "linear e_{} = {:.3e} above 10 eps_event",
            row.level,
            row.e
        );
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 300.0, "{elapsed:.1} s over the 5 min budget");
    println!(
        "criterion 06 (scheme convergence: e_4 = {e4:.3e} .. e_9 = {e9:.3e}, linear at noise floor): PASS"
    );
}

#[test]
fn criterion_07_continuous_dependence() {
    let start = Instant::now();
    let deltas = [0.0, 1e-2, 1e-3, 1e-4];
    for name in ["y_nonlocal", "two_cycle"] {
        let (_, inst) = load(name);
        let rows =
            scheme::continuous_dependence_study(&inst, Perturbation::PositionShift, &deltas, 5)
                .expect("study");
        assert_eq!(rows[0].sup_dist, 0.0, "{name}: delta = 0 must give 0 exactly");
        let ks: Vec<f64> = rows[1..].iter().map(|r| r.k_emp).collect();
        let max = ks.iter().cloned().fold(f64::MIN, f64::max);
        let min = ks.iter().cloned().fold(f64::MAX, f64::min);
        assert!(
            min > 0.0 && max / min <= 3.0,
            "{name}: K spread {min:.3} .. {max:.3} beyond factor 3"
        );
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 120.0, "{elapsed:.1} s over the 2 min budget");
    println!("criterion 07 (continuous dependence, K stable within factor 3): PASS");
}

#[test]
fn criterion_08_time_regularity() {
    for name in ["single_arc", "y_junction", "two_cycle", "six_arc", "y_nonlocal"] {
        let (_, inst) = load(name);
        let traj = scheme::solve(&inst, 6).expect("solve");
        let report = scheme::time_regularity_check(&inst, &traj).expect("check");
        let n = traj.grid.len();
        assert_eq!(report.rows.len(), n * (n - 1) / 2);
        for r in &report.rows {
            assert!(
                r.pass,
                "{name}: ||m_t - m_s|| = {:.3e} above bound {:.3e} at (s, t) = ({}, {})",
                r.lhs, r.rhs, r.s, r.t
            );
        }
    }
    println!("criterion 08 (time-regularity bound at all grid pairs, N = 6): PASS");
}

#[test]
fn criterion_09_moment_bounds() {
    // Uniform boundedness across levels on every fixture.
    for name in FIXTURES {
        let (_, inst) = load(name);
        let center = GraphPoint::new(0, 0.0);
        for level in [4u32, 6, 8] {
            let traj = scheme::solve(&inst, level).expect("solve");
            for p in [1u32, 2] {
                let report = scheme::moment_bound_check(&inst, &traj, center, p);
                assert!(
                    report.pass,
                    "{name} level {level} p = {p}: max {:.4} above bound {:.4}",
                    report.max, report.bound
                );
            }
        }
    }

    // Translating atom: the p = 1 moment grows by exactly mass * t.
    let g = MetricGraph::new(
        vec!["S".into(), "T".into()],
        vec![("a".into(), "S".into(), "T".into(), f64::INFINITY)],
        vec!["S".into()],
    )
    .unwrap();
    let center = g.point("a", 0.0).unwrap();
    let mass = 0.7;
    let d0 = 2.0;
    let inst = Instance {
        m0: AtomicMeasure::from_atoms(&g, vec![(g.point("a", d0).unwrap(), mass)]).unwrap(),
        graph: g,
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
    let traj = scheme::solve(&inst, 4).expect("solve");
    for k in 0..traj.grid.len() {
        let t = traj.grid[k];
        let m1 = p_moment(&inst.graph, &traj.snapshot_at_grid(k), center, 1);
        assert!(
            (m1 - mass * (d0 + t)).abs() <= 1e-12,
            "t = {t}: moment {m1} vs {}",
            mass * (d0 + t)
        );
        let m2 = p_moment(&inst.graph, &traj.snapshot_at_grid(k), center, 2);
        assert!((m2 - mass * (d0 + t) * (d0 + t)).abs() <= 1e-12);
    }
    println!("criterion 09 (moment bounds and translating-atom closed form): PASS");
}

#[test]
fn criterion_10_hypothesis_report() {
    let (scenario, inst) = load("y_nonlocal");
    let base_spec = scenario.build_sample_spec(&inst.graph).expect("sample spec");
    let fine_spec = SampleSpec {
        points_per_arc: base_spec.points_per_arc * 2,
        ..base_spec.clone()
    };
    let base = check_hypotheses(&inst.graph, &inst.field, &base_spec).expect("base samples");
    let fine = check_hypotheses(&inst.graph, &inst.field, &fine_spec).expect("fine samples");

    // H1: sampled speeds never exceed V_max, exactly.
    assert!(base.max_speed <= base.v_max && fine.max_speed <= fine.v_max);
    // H2, H3: finite and stable within 10% under x2 grid refinement.
    for (label, a, b) in [
        ("H2", base.h2_constant, fine.h2_constant),
        ("H3", base.h3_constant, fine.h3_constant),
    ] {
        assert!(a.is_finite() && b.is_finite(), "{label} not finite");
        let scale = a.abs().max(b.abs());
        assert!(
            scale == 0.0 || (a - b).abs() <= 0.10 * scale,
            "{label} unstable under refinement: {a} vs {b}"
        );
    }
    println!(
        "criterion 10 (H1-H3 report: speed <= {}, H2 = {:.4}, H3 = {:.4}): PASS",
        base.v_max, fine.h2_constant, fine.h3_constant
    );
}

#[test]
fn criterion_11_gluing() {
    let (_, inst) = load("y_junction");
    for level in [3u32, 4] {
        let report = scheme::gluing_check(&inst, level).expect("gluing check runs");
        assert!(
            report.pass(),
            "level {level}: mismatches {:?}",
            report.mismatches
        );
    }
    println!("criterion 11 (point-source gluing, bit-for-bit): PASS");
}
