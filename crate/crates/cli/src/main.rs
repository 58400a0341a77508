//! Scenario runner: loads a JSON scenario, executes a command, writes
//! machine-readable tables plus a human summary.
//!
//! Exit codes: 0 all gates passed, 1 a gate failed, 2 input error.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use netmass::scheme::{self, Instance, Perturbation};
use netmass::velocity::{check_hypotheses, SampleSpec};
use netmass::{representation_check, FrozenField, GraphPoint, Scenario};

#[derive(Parser)]
#[command(
    name = "netmass",
    about = "Measure-valued transport on metric networks",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Scenario file (JSON).
    scenario: PathBuf,
    /// Output directory for tables.
    #[arg(short, long, default_value = "out")]
    out: PathBuf,
    /// Override the scheme level.
    #[arg(long)]
    level: Option<u32>,
    /// Override the level list, e.g. --levels 4,5,6.
    #[arg(long, value_delimiter = ',')]
    levels: Option<Vec<u32>>,
    /// Override the pruning threshold.
    #[arg(long)]
    eps_mass: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scheme once and export snapshots, traces and the ledger.
    Simulate(CommonArgs),
    /// Compare consecutive levels in the flat metric.
    Converge(CommonArgs),
    /// Perturb the initial data and report the amplification factor.
    Depend {
        #[command(flatten)]
        common: CommonArgs,
        /// Perturbation kind: mass or shift.
        #[arg(long, default_value = "mass")]
        perturb: String,
        /// Perturbation sizes.
        #[arg(long, value_delimiter = ',', default_values_t = vec![1e-2, 1e-3, 1e-4])]
        deltas: Vec<f64>,
    },
    /// Check the time-regularity bound at every pair of grid times.
    Regularity(CommonArgs),
    /// Check p-moment bounds (p = 1, 2) along the run.
    Moments {
        #[command(flatten)]
        common: CommonArgs,
        /// Moment center as arc:coordinate (defaults to the first arc tail).
        #[arg(long)]
        center: Option<String>,
    },
    /// Sample the velocity field and report the H1-H3 constants, repeating
    /// on a doubled grid to check their stability.
    CheckVelocity(CommonArgs),
    /// Compare the event-driven solver against the push-forward
    /// reconstruction along enumerated paths.
    CheckRepresentation {
        #[command(flatten)]
        common: CommonArgs,
        /// Times at which to compare (defaults to T/2 and T).
        #[arg(long, value_delimiter = ',')]
        times: Option<Vec<f64>>,
        #[arg(long, default_value_t = 12)]
        max_crossings: usize,
    },
    /// Parse, validate and echo the scenario with defaults filled in.
    Normalize {
        scenario: PathBuf,
        /// Write to a file instead of stdout.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("NETMASS_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<bool> {
    match command {
        Command::Simulate(c) => simulate(&c),
        Command::Converge(c) => converge(&c),
        Command::Depend {
            common,
            perturb,
            deltas,
        } => depend(&common, &perturb, &deltas),
        Command::Regularity(c) => regularity(&c),
        Command::Moments { common, center } => moments(&common, center.as_deref()),
        Command::CheckVelocity(c) => check_velocity(&c),
        Command::CheckRepresentation {
            common,
            times,
            max_crossings,
        } => check_representation(&common, times, max_crossings),
        Command::Normalize { scenario, out } => normalize(&scenario, out.as_deref()),
    }
}

struct Loaded {
    scenario: Scenario,
    instance: Instance,
}

fn load(common: &CommonArgs) -> Result<Loaded> {
    let scenario = Scenario::load(&common.scenario)
        .with_context(|| format!("loading {}", common.scenario.display()))?;
    let mut scenario = scenario;
    if let Some(levels) = &common.levels {
        scenario.levels = levels.clone();
    }
    if let Some(eps) = common.eps_mass {
        scenario.tolerances.eps_mass = eps;
    }
    let instance = scenario.build().context("building scenario")?;
    Ok(Loaded { scenario, instance })
}

/// Writes a table atomically: temp file in the target directory, then rename.
fn write_table(dir: &Path, name: &str, content: &str) -> Result<()> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating {}", dir.display()))?;
    let tmp = dir.join(format!(".{name}.tmp"));
    std::fs::write(&tmp, content)?;
    std::fs::rename(&tmp, dir.join(name))?;
    Ok(())
}

fn simulate(common: &CommonArgs) -> Result<bool> {
    let loaded = load(common)?;
    let inst = &loaded.instance;
    let level = common.level.unwrap_or(loaded.scenario.levels[0]);
    let traj = scheme::solve(inst, level)?;

    let mut snapshots = String::from("t,arc,s,mass\n");
    for k in 0..traj.grid.len() {
        let t = traj.grid[k];
        for atom in &traj.states[traj.grid_boundary(k)] {
            writeln!(
                snapshots,
                "{t},{},{},{}",
                inst.graph.arc(atom.arc).name,
                atom.s,
                atom.mass
            )?;
        }
    }

    let mut traces = String::from("vertex,from_arc,to_arc,time,mass\n");
    for w in &traj.windows {
        for e in &w.events {
            writeln!(
                traces,
                "{},{},{},{},{}",
                inst.graph.vertex_name(e.vertex),
                inst.graph.arc(e.from_arc).name,
                e.to_arc
                    .map(|j| inst.graph.arc(j).name.clone())
                    .unwrap_or_else(|| "in".to_string()),
                e.time,
                e.mass
            )?;
        }
    }

    let mut ledger = String::from("window,t0,t1,source_in,pruned\n");
    for (i, w) in traj.windows.iter().enumerate() {
        writeln!(ledger, "{i},{},{},{},{}", w.t0, w.t1, w.source_in, w.pruned)?;
    }

    write_table(&common.out, "snapshots.csv", &snapshots)?;
    write_table(&common.out, "traces.csv", &traces)?;
    write_table(&common.out, "ledger.csv", &ledger)?;

    let worst = traj
        .ledger_residuals()
        .into_iter()
        .fold(0.0f64, f64::max);
    let pass = worst <= 1e-12;
    println!(
        "simulate: level {level}, {} windows, {} atoms at T, mass residual {worst:.3e} [{}]",
        traj.windows.len(),
        traj.final_state().len(),
        verdict(pass)
    );
    Ok(pass)
}

fn converge(common: &CommonArgs) -> Result<bool> {
    let loaded = load(common)?;
    let inst = &loaded.instance;
    let levels = &loaded.scenario.levels;
    if levels.len() < 2 {
        bail!("converge needs at least two levels (use --levels)");
    }
    let report = scheme::convergence_study(inst, levels)?;
    let mut table = String::from("N,next,e,ratio\n");
    for row in &report.rows {
        writeln!(
            table,
            "{},{},{},{}",
            row.level,
            row.next,
            row.e,
            row.ratio.map(|r| r.to_string()).unwrap_or_default()
        )?;
    }
    write_table(&common.out, "converge.csv", &table)?;
    let pass = report.cauchy_ok(inst.tolerances.eps_event);
    for row in &report.rows {
        println!(
            "converge: e_{} = {:.6e}{}",
            row.level,
            row.e,
            row.ratio
                .map(|r| format!("  (ratio {r:.3})"))
                .unwrap_or_default()
        );
    }
    println!("converge: Cauchy property [{}]", verdict(pass));
    Ok(pass)
}

fn depend(common: &CommonArgs, perturb: &str, deltas: &[f64]) -> Result<bool> {
    let loaded = load(common)?;
    let inst = &loaded.instance;
    let level = common.level.unwrap_or(loaded.scenario.levels[0]);
    let kind = match perturb {
        "mass" => Perturbation::MassScale,
        "shift" => Perturbation::PositionShift,
        other => bail!("unknown perturbation `{other}` (use mass or shift)"),
    };
    let rows = scheme::continuous_dependence_study(inst, kind, deltas, level)?;
    let mut table = String::from("delta,dist_in,sup_dist,K\n");
    for r in &rows {
        writeln!(table, "{},{},{},{}", r.delta, r.dist_in, r.sup_dist, r.k_emp)?;
        println!(
            "depend: delta {:.1e} -> input {:.3e}, sup {:.3e}, K = {:.4}",
            r.delta, r.dist_in, r.sup_dist, r.k_emp
        );
    }
    write_table(&common.out, "depend.csv", &table)?;
    let ks: Vec<f64> = rows
        .iter()
        .filter(|r| r.delta > 0.0)
        .map(|r| r.k_emp)
        .collect();
    let zero_ok = rows
        .iter()
        .filter(|r| r.delta == 0.0)
        .all(|r| r.sup_dist == 0.0);
    let stable = if ks.len() >= 2 {
        let max = ks.iter().cloned().fold(f64::MIN, f64::max);
        let min = ks.iter().cloned().fold(f64::MAX, f64::min);
        min > 0.0 && max / min <= 3.0
    } else {
        true
    };
    let pass = zero_ok && stable;
    println!("depend: K stable within factor 3 [{}]", verdict(pass));
    Ok(pass)
}

fn regularity(common: &CommonArgs) -> Result<bool> {
    let loaded = load(common)?;
    let inst = &loaded.instance;
    let level = common.level.unwrap_or_else(|| {
        loaded.scenario.levels.iter().copied().max().unwrap_or(4).min(6)
    });
    let traj = scheme::solve(inst, level)?;
    let report = scheme::time_regularity_check(inst, &traj)?;
    let mut table = String::from("s,t,lhs,rhs,pass\n");
    for r in &report.rows {
        writeln!(table, "{},{},{},{},{}", r.s, r.t, r.lhs, r.rhs, r.pass)?;
    }
    write_table(&common.out, "regularity.csv", &table)?;
    println!(
        "regularity: C = {:.4}, {} pairs at level {level} [{}]",
        report.c,
        report.rows.len(),
        verdict(report.all_pass)
    );
    Ok(report.all_pass)
}

fn parse_center(inst: &Instance, spec: Option<&str>) -> Result<GraphPoint> {
    match spec {
        None => Ok(GraphPoint::new(0, 0.0)),
        Some(text) => {
            let (arc, s) = text
                .rsplit_once(':')
                .context("center must be arc:coordinate")?;
            let arc = inst.graph.arc_id(arc)?;
            Ok(GraphPoint::new(arc, s.parse::<f64>()?))
        }
    }
}

fn moments(common: &CommonArgs, center: Option<&str>) -> Result<bool> {
    let loaded = load(common)?;
    let inst = &loaded.instance;
    let center = parse_center(inst, center)?;
    let mut table = String::from("p,t,moment,bound,pass\n");
    let mut pass = true;
    for level in &loaded.scenario.levels {
        let traj = scheme::solve(inst, *level)?;
        for p in [1u32, 2] {
            let report = scheme::moment_bound_check(inst, &traj, center, p);
            for (t, m) in &report.rows {
                writeln!(table, "{p},{t},{m},{},{}", report.bound, report.pass)?;
            }
            println!(
                "moments: level {level} p = {p}: max {:.6} <= bound {:.6} [{}]",
                report.max,
                report.bound,
                verdict(report.pass)
            );
            pass &= report.pass;
        }
    }
    write_table(&common.out, "moments.csv", &table)?;
    Ok(pass)
}

fn check_velocity(common: &CommonArgs) -> Result<bool> {
    let loaded = load(common)?;
    let inst = &loaded.instance;
    let base_spec = loaded.scenario.build_sample_spec(&inst.graph)?;
    let fine_spec = SampleSpec {
        points_per_arc: base_spec.points_per_arc * 2,
        ..base_spec.clone()
    };
    let base = check_hypotheses(&inst.graph, &inst.field, &base_spec)?;
    let fine = check_hypotheses(&inst.graph, &inst.field, &fine_spec)?;

    let mut table = String::from("quantity,base,refined,v_max\n");
    writeln!(table, "max_speed,{},{},{}", base.max_speed, fine.max_speed, base.v_max)?;
    writeln!(table, "h2,{},{},", base.h2_constant, fine.h2_constant)?;
    writeln!(table, "h3,{},{},", base.h3_constant, fine.h3_constant)?;
    write_table(&common.out, "hypotheses.csv", &table)?;

    let h1 = base.h1_ok() && fine.h1_ok();
    let stable = |a: f64, b: f64| {
        let scale = a.abs().max(b.abs());
        scale == 0.0 || (a - b).abs() <= 0.10 * scale
    };
    let h2_stable = stable(base.h2_constant, fine.h2_constant);
    let h3_stable = stable(base.h3_constant, fine.h3_constant);
    println!(
        "check-velocity: max speed {:.6} <= V_max {} [{}]",
        fine.max_speed.max(base.max_speed),
        base.v_max,
        verdict(h1)
    );
    println!(
        "check-velocity: H2 {:.6} -> {:.6} under x2 refinement [{}]",
        base.h2_constant,
        fine.h2_constant,
        verdict(h2_stable)
    );
    println!(
        "check-velocity: H3 {:.6} -> {:.6} under x2 refinement [{}]",
        base.h3_constant,
        fine.h3_constant,
        verdict(h3_stable)
    );
    Ok(h1 && h2_stable && h3_stable)
}

fn check_representation(
    common: &CommonArgs,
    times: Option<Vec<f64>>,
    max_crossings: usize,
) -> Result<bool> {
    let loaded = load(common)?;
    let inst = &loaded.instance;
    let times = times.unwrap_or_else(|| vec![inst.horizon / 2.0, inst.horizon]);
    let frozen = FrozenField::new(
        &inst.graph,
        &inst.field,
        inst.m0.atoms(),
        inst.exclude_self,
    );
    let mut table = String::from("t,discrepancy,pass\n");
    let mut pass = true;
    for &t in &times {
        let d = representation_check(
            &inst.graph,
            &frozen,
            &inst.routing,
            &inst.m0,
            &inst.sigma,
            t,
            max_crossings,
            &inst.tolerances,
        )?;
        let ok = d <= 1e-7;
        pass &= ok;
        writeln!(table, "{t},{d},{ok}")?;
        println!(
            "check-representation: t = {t}: flat discrepancy {d:.3e} [{}]",
            verdict(ok)
        );
    }
    write_table(&common.out, "representation.csv", &table)?;
    Ok(pass)
}

fn normalize(path: &Path, out: Option<&Path>) -> Result<bool> {
    let scenario =
        Scenario::load(path).with_context(|| format!("loading {}", path.display()))?;
    scenario.build().context("validating scenario")?;
    let dump = scenario.normalized_json();
    match out {
        Some(file) => {
            if let Some(dir) = file.parent() {
                if !dir.as_os_str().is_empty() {
                    std::fs::create_dir_all(dir)?;
                }
            }
            std::fs::write(file, dump)?;
        }
        None => print!("{dump}"),
    }
    Ok(true)
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}
