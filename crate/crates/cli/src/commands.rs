//! The four pipelines behind the subcommands. Each returns a report, the
//! artifacts to write and a plain-text summary; nothing here touches stdout
//! or the filesystem.

use std::fmt::Write as _;

use corridor::cycle::{
    corridor_extrema, fixed_point_divided, map_corridor_through_output_nl, periodic_output, CorridorAnalysis, OneCycle,
};
use corridor::design::{
    design_cycle, log_spaced, slope_search, stability_report, synthesize_modulation, CorridorSpec, DesignedCycle,
    ModulationBounds, ModulationConfig, StabilityReport,
};
use corridor::numerics::{mat_exp, mat_exp_spectral};
use corridor::plant::{Monotonicity, PlantLTI, PlantStructure, StaticNonlinearity};
use corridor::simulate::{corridor_report, detect_convergence, simulate, CorridorReport, Trajectory};
use corridor::SmallVector;
use serde::Serialize;

use crate::config::{ScenarioConfig, SlopeBlock};
use crate::output::{to_csv, Artifacts};
use crate::{exit, CliError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Command {
    Design,
    Simulate,
    Analyze { period: f64, weight: f64 },
    Verify,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Design => "design",
            Command::Simulate => "simulate",
            Command::Analyze { .. } => "analyze",
            Command::Verify => "verify",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ModulationSummary {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: f64,
    pub bounds: ModulationBounds,
    /// `fixed` or `search`.
    pub slopes_from: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct DesignSummary {
    pub period: f64,
    pub weight: f64,
    pub fixed_point: [f64; 3],
    pub y_bar_at_firing: f64,
    pub ratio_residual: f64,
    pub target: CorridorSpec,
    pub achieved: CorridorAnalysis,
    pub modulation: ModulationSummary,
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilitySummary {
    /// Multipliers as `[re, im]`, largest modulus first.
    pub multipliers: Vec<[f64; 2]>,
    pub spectral_radius: f64,
    pub stable: bool,
    pub monotone_convergence: bool,
    pub amplitude_slope: f64,
    pub frequency_slope: f64,
    pub open_loop_multipliers: Vec<[f64; 2]>,
    pub open_loop_spectral_radius: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationSummary {
    pub x0: [f64; 3],
    pub open_loop: bool,
    pub n_firings: usize,
    pub end_time: f64,
    pub converged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_star: Option<usize>,
    pub monotone: bool,
    pub final_distance: f64,
    /// Output range after convergence; absent when the run did not converge.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corridor: Option<CorridorReport>,
    pub violation: bool,
    pub zeno_free: bool,
    pub positive: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalysisSummary {
    pub period: f64,
    pub weight: f64,
    pub fixed_point: [f64; 3],
    pub corridor: CorridorAnalysis,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    /// The quantity compared against the threshold.
    pub measure: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub command: &'static str,
    /// Effective config: every defaulted value written out.
    pub config: ScenarioConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub design: Option<DesignSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stability: Option<StabilitySummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub analysis: Option<AnalysisSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verification: Option<Vec<CheckResult>>,
    pub artifacts: Vec<String>,
}

#[derive(Debug)]
pub struct CommandOutput {
    pub report: RunReport,
    pub artifacts: Artifacts,
    pub text: String,
    pub exit_code: i32,
}

/// Everything the design pipeline produces.
struct Designed {
    structure: PlantStructure,
    spec: CorridorSpec,
    designed: DesignedCycle,
    modulation: ModulationConfig,
    slopes_from: &'static str,
    stability: StabilityReport,
    open_loop: StabilityReport,
}

impl Designed {
    fn cycle(&self) -> &OneCycle {
        &self.designed.cycle
    }

    fn plant(&self) -> &PlantLTI {
        &self.structure.linear
    }

    /// Modulation to hand to the simulator, which already applies the
    /// structure's output map.
    fn simulation_modulation(&self, open_loop: bool) -> ModulationConfig {
        if open_loop {
            ModulationConfig::constant(self.cycle().period, self.cycle().weight, self.modulation.bounds)
        } else {
            self.modulation.without_output_nl()
        }
    }
}

fn design_nl(structure: &PlantStructure) -> Option<&StaticNonlinearity> {
    structure.output_nl.as_ref()
}

fn run_design(cfg: &ScenarioConfig) -> Result<Designed, CliError> {
    let settings = &cfg.numerics;
    let structure = cfg.structure()?;
    let spec = cfg.corridor_spec(&structure)?;
    let plant = &structure.linear;
    let designed = design_cycle(plant, &spec, &cfg.design.period, settings)?;
    let cycle = &designed.cycle;
    let bounds = cfg.design.bounds;
    bounds.validate()?;
    let nl = design_nl(&structure);
    let (k2, k4, slopes_from) = match cfg.design.slopes {
        SlopeBlock::Fixed { k2, k4 } => (k2, k4, "fixed"),
        SlopeBlock::Search { k2: r2, k4: r4, points } => {
            if r2.iter().chain(&r4).any(|&v| !(v >= 0.0 && v.is_finite())) || points == 0 {
                return Err(CliError::Schema(
                    "slope search needs nonnegative magnitudes and points > 0".into(),
                ));
            }
            // Dose falls and interval grows with the linear output.
            let (s2, s4) = match nl.map_or(Monotonicity::Increasing, StaticNonlinearity::direction) {
                Monotonicity::Decreasing => (-1.0, 1.0),
                Monotonicity::Increasing => (1.0, -1.0),
            };
            let k2_grid = log_spaced(s2 * r2[0], s2 * r2[1], points);
            let k4_grid = log_spaced(s4 * r4[0], s4 * r4[1], points);
            let best = slope_search(plant, cycle, bounds, nl, &k2_grid, &k4_grid, settings)?;
            (best.k2, best.k4, "search")
        }
    };
    let modulation = synthesize_modulation(cycle, k2, k4, bounds, nl)?;
    let stability = stability_report(plant, cycle, &modulation, settings)?;
    let open_loop = stability_report(
        plant,
        cycle,
        &ModulationConfig::constant(cycle.period, cycle.weight, bounds),
        settings,
    )?;
    Ok(Designed {
        structure,
        spec,
        designed,
        modulation,
        slopes_from,
        stability,
        open_loop,
    })
}

fn arr(v: &SmallVector) -> [f64; 3] {
    [v[0], v[1], v[2]]
}

fn design_summary(d: &Designed) -> DesignSummary {
    let c = d.cycle();
    let m = &d.modulation;
    DesignSummary {
        period: c.period,
        weight: c.weight,
        fixed_point: arr(&c.fixed_point),
        y_bar_at_firing: c.y0,
        ratio_residual: d.designed.ratio_residual,
        target: d.spec.clone(),
        achieved: d.designed.corridor.clone(),
        modulation: ModulationSummary {
            k1: m.k1,
            k2: m.k2,
            k3: m.k3,
            k4: m.k4,
            bounds: m.bounds,
            slopes_from: d.slopes_from,
        },
    }
}

fn stability_summary(d: &Designed) -> StabilitySummary {
    let pairs = |r: &StabilityReport| r.multipliers.iter().map(|z| [z.re, z.im]).collect();
    StabilitySummary {
        multipliers: pairs(&d.stability),
        spectral_radius: d.stability.spectral_radius,
        stable: d.stability.stable,
        monotone_convergence: d.stability.monotone_convergence,
        amplitude_slope: d.stability.amplitude_slope,
        frequency_slope: d.stability.frequency_slope,
        open_loop_multipliers: pairs(&d.open_loop),
        open_loop_spectral_radius: d.open_loop.spectral_radius,
    }
}

#[derive(Serialize)]
struct CurveRow {
    y_bar: f64,
    xi: f64,
    interval: f64,
    dose: f64,
}

fn modulation_curve(d: &Designed, points: usize) -> Result<Vec<CurveRow>, CliError> {
    let top = 2.0 * d.designed.corridor.y_bar_max;
    let n = points.max(2);
    (0..n)
        .map(|i| {
            let y_bar = top * i as f64 / (n - 1) as f64;
            let xi = match &d.modulation.output_nl {
                Some(nl) => nl.eval(y_bar)?,
                None => y_bar,
            };
            Ok(CurveRow {
                y_bar,
                xi,
                interval: d.modulation.interval(y_bar)?,
                dose: d.modulation.dose(y_bar)?,
            })
        })
        .collect()
}

fn design_artifacts(d: &Designed, cfg: &ScenarioConfig, artifacts: &mut Artifacts) -> Result<(), CliError> {
    artifacts.add("sweep.csv", to_csv(&d.designed.sweep)?);
    artifacts.add(
        "modulation.csv",
        to_csv(&modulation_curve(d, cfg.design.curve_points)?)?,
    );
    Ok(())
}

#[derive(Serialize)]
struct TrajectoryRow {
    t: f64,
    x1: f64,
    x2: f64,
    x3: f64,
    y_bar: f64,
    y: f64,
}

#[derive(Serialize)]
struct EventRow {
    n: usize,
    t: f64,
    y: f64,
    y_bar: f64,
    lambda: f64,
    jump: f64,
    interval: f64,
    pre_x1: f64,
    pre_x2: f64,
    pre_x3: f64,
    post_x1: f64,
    post_x2: f64,
    post_x3: f64,
}

fn trajectory_artifacts(tr: &Trajectory, artifacts: &mut Artifacts) -> Result<(), CliError> {
    let rows: Vec<TrajectoryRow> = tr
        .samples
        .iter()
        .map(|s| TrajectoryRow {
            t: s.t,
            x1: s.state[0],
            x2: s.state[1],
            x3: s.state[2],
            y_bar: s.y_bar,
            y: s.y,
        })
        .collect();
    let events: Vec<EventRow> = tr
        .events
        .iter()
        .map(|e| EventRow {
            n: e.n,
            t: e.t,
            y: e.y,
            y_bar: e.y_bar,
            lambda: e.lambda,
            jump: e.jump,
            interval: e.interval,
            pre_x1: e.state_pre[0],
            pre_x2: e.state_pre[1],
            pre_x3: e.state_pre[2],
            post_x1: e.state_post[0],
            post_x2: e.state_post[1],
            post_x3: e.state_post[2],
        })
        .collect();
    artifacts.add("trajectory.csv", to_csv(&rows)?);
    artifacts.add("events.csv", to_csv(&events)?);
    Ok(())
}

fn zeno_free(tr: &Trajectory) -> bool {
    let b = &tr.modulation.bounds;
    b.phi1 > 0.0 && tr.events.iter().all(|e| e.interval >= b.phi1 && e.interval.is_finite())
}

fn positive(tr: &Trajectory) -> bool {
    tr.samples.iter().all(|s| s.state.iter().all(|&v| v >= 0.0))
        && tr
            .events
            .iter()
            .all(|e| e.state_pre.iter().chain(e.state_post.iter()).all(|&v| v >= 0.0))
}

fn run_simulation(d: &Designed, cfg: &ScenarioConfig) -> Result<(Trajectory, SimulationSummary), CliError> {
    let sc = &cfg.simulate;
    let x0 = cfg.initial_state(&d.cycle().fixed_point);
    let modulation = d.simulation_modulation(sc.open_loop);
    let tr = simulate(&d.structure, &modulation, x0, sc.n_firings, sc.sample_dt, &cfg.numerics)?;
    let tol = sc.convergence_rel * d.cycle().fixed_point.norm();
    let conv = detect_convergence(&tr, d.cycle(), tol, sc.convergence_window);
    let corridor = match conv.n_star {
        Some(n) => Some(corridor_report(
            &tr,
            &d.spec,
            tr.events[n].t,
            sc.corridor_tolerance,
            &cfg.numerics,
        )?),
        None => None,
    };
    let summary = SimulationSummary {
        x0: arr(&x0),
        open_loop: sc.open_loop,
        n_firings: sc.n_firings,
        end_time: tr.end_time,
        converged: conv.converged,
        n_star: conv.n_star,
        monotone: conv.monotone,
        final_distance: conv.distances.last().copied().unwrap_or(f64::NAN),
        violation: corridor.as_ref().is_some_and(|c| c.violation),
        corridor,
        zeno_free: zeno_free(&tr),
        positive: positive(&tr),
    };
    Ok((tr, summary))
}

fn check(name: &'static str, measure: f64, threshold: f64) -> CheckResult {
    CheckResult {
        name,
        passed: measure <= threshold,
        measure,
        threshold,
    }
}

fn flag(name: &'static str, ok: bool) -> CheckResult {
    check(name, if ok { 0.0 } else { 1.0 }, 0.0)
}

fn rel_dist(a: &SmallVector, b: &SmallVector) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

/// Compare the Wiener simulation against the bare plant driven by the
/// composed modulation. `None` when the structure is not a Wiener model.
fn wiener_gap(d: &Designed, cfg: &ScenarioConfig, x0: SmallVector) -> Result<Option<f64>, CliError> {
    if d.structure.output_nl.is_none() || d.structure.input_nl.is_some() {
        return Ok(None);
    }
    let sc = &cfg.simulate;
    let wiener = simulate(
        &d.structure,
        &d.modulation.without_output_nl(),
        x0,
        sc.n_firings,
        sc.sample_dt,
        &cfg.numerics,
    )?;
    let lti = simulate(
        &PlantStructure::lti(d.plant().clone()),
        &d.modulation,
        x0,
        sc.n_firings,
        sc.sample_dt,
        &cfg.numerics,
    )?;
    let gap = wiener.events.iter().zip(&lti.events).fold(0.0f64, |g, (a, b)| {
        g.max((a.t - b.t).abs())
            .max((a.lambda - b.lambda).abs())
            .max((a.interval - b.interval).abs())
            .max((a.state_pre - b.state_pre).norm())
    });
    Ok(Some(gap))
}

fn run_checks(d: &Designed, cfg: &ScenarioConfig, tr: &Trajectory) -> Result<Vec<CheckResult>, CliError> {
    let settings = &cfg.numerics;
    let plant = d.plant();
    let c = d.cycle();
    let (t, w, x) = (c.period, c.weight, c.fixed_point);
    let mut out = Vec::new();

    let flow = mat_exp(&plant.a(), t)?;
    out.push(check(
        "fixed point round trip",
        rel_dist(&(flow * (x + plant.b() * w)), &x),
        1e-8,
    ));

    let xd = fixed_point_divided(plant, t, w, settings)?;
    let forms = (0..3).map(|i| ((x[i] - xd[i]) / x[i]).abs()).fold(0.0, f64::max);
    out.push(check("fixed point forms agree", forms, 1e-8));

    let spectral = mat_exp_spectral(&plant.a(), t, plant.poles());
    out.push(check(
        "pade vs spectral exponential",
        (flow - spectral).norm() / flow.norm(),
        1e-10,
    ));

    let n = 100_000;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for k in 0..n {
        let y = periodic_output(plant, c, t * (k as f64 + 0.5) / n as f64, settings)?;
        lo = lo.min(y);
        hi = hi.max(y);
    }
    let ca = &d.designed.corridor;
    let gap = ((ca.y_bar_min - lo) / ca.y_bar_min)
        .abs()
        .max(((ca.y_bar_max - hi) / ca.y_bar_max).abs());
    out.push(check("extrema vs dense sampling", gap, 1e-6));

    let x0 = cfg.initial_state(&x);
    if let Some(gap) = wiener_gap(d, cfg, x0)? {
        out.push(check("wiener equivalence", gap, 1e-10));
    }

    let mut jump = 0.0f64;
    for e in &tr.events {
        let (before, after) = (plant.output(&e.state_pre), plant.output(&e.state_post));
        jump = jump.max((before - after).abs() / before.abs().max(1.0));
    }
    for pair in tr.events.windows(2) {
        let left = mat_exp(&plant.a(), pair[0].interval)? * pair[0].state_post;
        jump = jump.max((left - pair[1].state_pre).norm() / left.norm().max(1.0));
    }
    out.push(check("continuity across firings", jump, 1e-10));
    out.push(flag("zeno free", zeno_free(tr)));
    out.push(flag("state positivity", positive(tr)));
    let ax = plant.a() * x;
    out.push(CheckResult {
        name: "AX negative",
        passed: ax.max() < 0.0,
        measure: ax.max(),
        threshold: 0.0,
    });
    Ok(out)
}

fn fmt_vec(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(", ")
}

fn design_text(s: &mut String, d: &DesignSummary, st: &StabilitySummary) {
    let m = &d.modulation;
    let _ = writeln!(s, "period T        {:.6}", d.period);
    let _ = writeln!(s, "weight lambda   {:.6}", d.weight);
    let _ = writeln!(s, "fixed point X   ({})", fmt_vec(&d.fixed_point));
    let _ = writeln!(
        s,
        "corridor        [{:.6}, {:.6}] (ratio residual {:.2e})",
        d.achieved.y_bar_min, d.achieved.y_bar_max, d.ratio_residual
    );
    if let (Some(lo), Some(hi)) = (d.achieved.y_min, d.achieved.y_max) {
        let _ = writeln!(s, "measured        [{lo:.6}, {hi:.6}]");
    }
    let _ = writeln!(
        s,
        "modulation      k1 = {:.6}, k2 = {:.6}, k3 = {:.6}, k4 = {:.6} ({})",
        m.k1, m.k2, m.k3, m.k4, m.slopes_from
    );
    let mult = |v: &[[f64; 2]]| {
        v.iter()
            .map(|z| {
                if z[1] == 0.0 {
                    format!("{:.6e}", z[0])
                } else {
                    format!("{:.6e}{:+.6e}i", z[0], z[1])
                }
            })
            .collect::<Vec<_>>()
            .join(", ")
    };
    let _ = writeln!(
        s,
        "multipliers     {} (rho = {:.6}, {})",
        mult(&st.multipliers),
        st.spectral_radius,
        if st.stable { "stable" } else { "UNSTABLE" }
    );
    let _ = writeln!(
        s,
        "open loop       {} (rho = {:.6})",
        mult(&st.open_loop_multipliers),
        st.open_loop_spectral_radius
    );
}

fn simulation_text(s: &mut String, sim: &SimulationSummary) {
    let _ = writeln!(
        s,
        "simulation      {} firings to t = {:.4}{}",
        sim.n_firings,
        sim.end_time,
        if sim.open_loop { " (open loop)" } else { "" }
    );
    match sim.n_star {
        Some(n) => {
            let _ = writeln!(
                s,
                "converged       at firing {n} ({})",
                if sim.monotone { "monotone" } else { "not monotone" }
            );
        }
        None => {
            let _ = writeln!(s, "converged       no (final distance {:.3e})", sim.final_distance);
        }
    }
    if let Some(c) = &sim.corridor {
        let _ = write!(s, "post-transient  y_bar in [{:.6}, {:.6}]", c.y_bar_min, c.y_bar_max);
        if let (Some(lo), Some(hi)) = (c.y_min, c.y_max) {
            let _ = write!(s, ", y in [{lo:.6}, {hi:.6}]");
        }
        let _ = writeln!(s, "{}", if c.violation { " VIOLATION" } else { "" });
    }
    let _ = writeln!(s, "zeno free       {}", sim.zeno_free);
    let _ = writeln!(s, "positive        {}", sim.positive);
}

/// Run one command on a parsed config.
pub fn run(command: Command, cfg: &ScenarioConfig) -> Result<CommandOutput, CliError> {
    let effective = cfg.effective();
    let mut artifacts = Artifacts::default();
    let mut text = String::new();
    let mut report = RunReport {
        command: command.name(),
        config: effective.clone(),
        design: None,
        stability: None,
        simulation: None,
        analysis: None,
        verification: None,
        artifacts: Vec::new(),
    };
    let mut exit_code = exit::OK;

    match command {
        Command::Analyze { period, weight } => {
            let structure = effective.structure()?;
            let plant = &structure.linear;
            let cycle = OneCycle::new(plant, period, weight, &effective.numerics)?;
            let mut ca = corridor_extrema(plant, period, weight, &effective.numerics)?;
            if let Some(nl) = &structure.output_nl {
                ca = map_corridor_through_output_nl(&ca, nl)?;
            }
            let _ = writeln!(text, "fixed point X   ({})", fmt_vec(&arr(&cycle.fixed_point)));
            let _ = writeln!(text, "extremum times  {}", fmt_vec(&ca.extremum_times));
            let _ = writeln!(text, "corridor        [{:.6}, {:.6}]", ca.y_bar_min, ca.y_bar_max);
            if let (Some(lo), Some(hi)) = (ca.y_min, ca.y_max) {
                let _ = writeln!(text, "measured        [{lo:.6}, {hi:.6}]");
            }
            report.analysis = Some(AnalysisSummary {
                period,
                weight,
                fixed_point: arr(&cycle.fixed_point),
                corridor: ca,
            });
        }
        Command::Design | Command::Simulate | Command::Verify => {
            let d = run_design(&effective)?;
            let ds = design_summary(&d);
            let st = stability_summary(&d);
            design_text(&mut text, &ds, &st);
            report.design = Some(ds);
            report.stability = Some(st);
            if matches!(command, Command::Design) {
                design_artifacts(&d, &effective, &mut artifacts)?;
            } else {
                let (tr, sim) = run_simulation(&d, &effective)?;
                simulation_text(&mut text, &sim);
                report.simulation = Some(sim);
                if matches!(command, Command::Simulate) {
                    trajectory_artifacts(&tr, &mut artifacts)?;
                } else {
                    let checks = run_checks(&d, &effective, &tr)?;
                    let _ = writeln!(text, "\n{:<32} {:>12} {:>12}  result", "check", "measure", "threshold");
                    for c in &checks {
                        let _ = writeln!(
                            text,
                            "{:<32} {:>12.3e} {:>12.3e}  {}",
                            c.name,
                            c.measure,
                            c.threshold,
                            if c.passed { "PASS" } else { "FAIL" }
                        );
                    }
                    let failed = checks.iter().filter(|c| !c.passed).count();
                    if failed > 0 {
                        exit_code = CliError::VerifyFailed(failed).exit_code();
                    }
                    report.verification = Some(checks);
                }
            }
        }
    }

    report.artifacts = std::iter::once("report.json".to_string())
        .chain(artifacts.names())
        .collect();
    Ok(CommandOutput {
        report,
        artifacts,
        text,
        exit_code,
    })
}
