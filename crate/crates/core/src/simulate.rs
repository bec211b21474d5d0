//! Event-driven simulation of the pulse-modulated closed loop.
//!
//! Between firings the state follows `x(t) = e^{(t - t_n) A} x(t_n^+)`
//! exactly; at each firing the modulation functions read the measured
//! output, schedule the next firing and set the jump `x(t_n^+) = x(t_n^-) + d B`.
//! With an input (Hammerstein) nonlinearity the dose `lambda_n` solves
//! `phi_h(lambda_n) = F(y(t_n))` and the jump is `phi_h(lambda_n)`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::cycle::OneCycle;
use crate::design::{CorridorSpec, ModulationConfig};
use crate::error::{Error, Result};
use crate::numerics::{mat_exp, roots_from_grid, NumericsSettings, SmallMatrix, SmallVector};
use crate::plant::{invert_nonlinearity_numeric, Monotonicity, PlantStructure};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiringEvent {
    pub n: usize,
    pub t: f64,
    /// Measured output at the firing.
    pub y: f64,
    /// Linear output at the firing.
    pub y_bar: f64,
    /// Dose handed to the plant input.
    pub lambda: f64,
    /// Jump applied along `B`; differs from `lambda` only with an input
    /// nonlinearity.
    pub jump: f64,
    /// Interval to the next firing.
    pub interval: f64,
    pub state_pre: SmallVector,
    pub state_post: SmallVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub state: SmallVector,
    pub y_bar: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub events: Vec<FiringEvent>,
    /// State just before the firing that would follow the last event.
    pub final_state: SmallVector,
    pub end_time: f64,
    pub structure: PlantStructure,
    pub modulation: ModulationConfig,
}

impl Trajectory {
    /// Pre-jump states `X_0, X_1, ...`, including the final one.
    pub fn firing_states(&self) -> Vec<SmallVector> {
        self.events
            .iter()
            .map(|e| e.state_pre)
            .chain(std::iter::once(self.final_state))
            .collect()
    }
}

/// Bracket searched for a Hammerstein dose: `[0, u]` with `u` doubled from
/// 1 up to this limit.
const DOSE_SEARCH_LIMIT: f64 = 1e12;

fn hammerstein_dose(
    structure: &PlantStructure,
    target: f64,
    index: usize,
    settings: &NumericsSettings,
) -> Result<(f64, f64)> {
    let Some(nl) = &structure.input_nl else {
        return Ok((target, target));
    };
    let abort = |e: Error| Error::SimulationAbort {
        index,
        reason: e.to_string(),
    };
    let f0 = nl.eval(0.0).map_err(abort)?;
    let mut hi = 1.0;
    loop {
        let fh = nl.eval(hi).map_err(abort)?;
        if (target - f0) * (target - fh) <= 0.0 {
            break;
        }
        if hi >= DOSE_SEARCH_LIMIT {
            return Err(abort(Error::UnreachableDose {
                target,
                lo: f0.min(fh),
                hi: f0.max(fh),
            }));
        }
        hi *= 2.0;
    }
    let dose = invert_nonlinearity_numeric(nl, target, 0.0, hi, settings).map_err(abort)?;
    let jump = nl.eval(dose).map_err(abort)?;
    Ok((dose, jump))
}

/// Exact-exponential cache keyed by the bit pattern of the interval.
struct FlowCache {
    a: SmallMatrix,
    map: HashMap<u64, SmallMatrix>,
}

impl FlowCache {
    fn new(a: SmallMatrix) -> Self {
        Self { a, map: HashMap::new() }
    }

    fn get(&mut self, t: f64) -> Result<SmallMatrix> {
        if let Some(m) = self.map.get(&t.to_bits()) {
            return Ok(*m);
        }
        let m = mat_exp(&self.a, t)?;
        self.map.insert(t.to_bits(), m);
        Ok(m)
    }
}

/// Simulate `n_firings` firings starting with one at `t = 0` from
/// `x(0^-) = x0`. Samples are taken every `sample_dt` and do not influence
/// the events.
pub fn simulate(
    structure: &PlantStructure,
    modulation: &ModulationConfig,
    x0: SmallVector,
    n_firings: usize,
    sample_dt: f64,
    settings: &NumericsSettings,
) -> Result<Trajectory> {
    if x0.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
        return Err(Error::Validation("initial state must be finite and nonnegative".into()));
    }
    if n_firings == 0 {
        return Err(Error::Validation("at least one firing is required".into()));
    }
    if !(sample_dt > 0.0 && sample_dt.is_finite()) {
        return Err(Error::Validation(format!("sample step {sample_dt} must be positive")));
    }
    modulation.bounds.validate()?;
    let plant = &structure.linear;
    let a = plant.a();
    let b = plant.b();
    let mut cache = FlowCache::new(a);

    let mut events = Vec::with_capacity(n_firings);
    let mut state = x0;
    let mut t = 0.0f64;
    for n in 0..n_firings {
        let y_bar = plant.output(&state);
        let y = structure.measure(y_bar).map_err(|e| Error::SimulationAbort {
            index: n,
            reason: e.to_string(),
        })?;
        let interval = modulation.interval(y)?;
        let target = modulation.dose(y)?;
        let (lambda, jump) = hammerstein_dose(structure, target, n, settings)?;
        let post = state + b * jump;
        events.push(FiringEvent {
            n,
            t,
            y,
            y_bar,
            lambda,
            jump,
            interval,
            state_pre: state,
            state_post: post,
        });
        state = cache.get(interval)? * post;
        t += interval;
    }
    let end_time = t;

    let mut samples = Vec::new();
    let mut k = 0usize;
    let mut ev = 0usize;
    loop {
        let ts = k as f64 * sample_dt;
        if ts >= end_time {
            break;
        }
        while ev + 1 < events.len() && events[ev + 1].t <= ts {
            ev += 1;
        }
        let e = &events[ev];
        let x = mat_exp(&a, ts - e.t)? * e.state_post;
        samples.push(sample(structure, ts, x)?);
        k += 1;
    }
    samples.push(sample(structure, end_time, state)?);

    Ok(Trajectory {
        samples,
        events,
        final_state: state,
        end_time,
        structure: structure.clone(),
        modulation: modulation.clone(),
    })
}

fn sample(structure: &PlantStructure, t: f64, state: SmallVector) -> Result<Sample> {
    let y_bar = structure.linear.output(&state);
    Ok(Sample {
        t,
        state,
        y_bar,
        y: structure.measure(y_bar)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub converged: bool,
    /// First firing index from which every pre-jump state stays within the
    /// tolerance of the fixed point.
    pub n_star: Option<usize>,
    /// `|X_n - X|` for every pre-jump state, including the final one.
    pub distances: Vec<f64>,
    /// Linear output at the firings is weakly monotone up to `n_star` (or
    /// over the whole run when not converged).
    pub monotone: bool,
}

/// Default tolerance `1e-6 |X|`.
pub fn default_convergence_tol(cycle: &OneCycle) -> f64 {
    1e-6 * cycle.fixed_point.norm()
}

pub const DEFAULT_CONVERGENCE_WINDOW: usize = 5;

pub fn detect_convergence(traj: &Trajectory, cycle: &OneCycle, tol: f64, window: usize) -> ConvergenceReport {
    let states = traj.firing_states();
    let distances: Vec<f64> = states.iter().map(|x| (x - cycle.fixed_point).norm()).collect();
    let window = window.max(1);
    // Start of the trailing run of within-tolerance distances.
    let tail_start = distances.iter().rposition(|&d| !(d <= tol)).map_or(0, |i| i + 1);
    let converged = distances.len() - tail_start >= window;
    let n_star = converged.then_some(tail_start);
    let outputs: Vec<f64> = states.iter().map(|x| traj.structure.linear.output(x)).collect();
    let upto = n_star.unwrap_or(outputs.len() - 1).min(outputs.len() - 1);
    let head = &outputs[..=upto];
    let monotone = head.windows(2).all(|w| w[1] >= w[0]) || head.windows(2).all(|w| w[1] <= w[0]);
    ConvergenceReport {
        converged,
        n_star,
        distances,
        monotone,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorridorReport {
    pub y_bar_min: f64,
    pub y_bar_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_max: Option<f64>,
    pub violation: bool,
    /// Largest distance outside the requested corridor, in the units of the
    /// corridor that was given.
    pub worst_excursion: f64,
}

/// Output range over `t >= transient_cut`, computed exactly per inter-firing
/// interval from the interior extrema of the linear output.
pub fn corridor_report(
    traj: &Trajectory,
    spec: &CorridorSpec,
    transient_cut: f64,
    tolerance: f64,
    settings: &NumericsSettings,
) -> Result<CorridorReport> {
    if !(transient_cut < traj.end_time) {
        return Err(Error::Validation(format!(
            "transient cut {transient_cut} is past the end of the trajectory ({})",
            traj.end_time
        )));
    }
    let plant = &traj.structure.linear;
    let a = plant.a();
    let c = plant.c();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut take = |y: f64| {
        lo = lo.min(y);
        hi = hi.max(y);
    };
    let grid = settings.root_grid.max(2);
    for e in &traj.events {
        let (start, end) = (e.t, e.t + e.interval);
        if end <= transient_cut {
            continue;
        }
        let from = (transient_cut - start).max(0.0);
        let span = e.interval;
        let x0 = e.state_post;
        let y_at = |s: f64| mat_exp(&a, s).map(|m| c.dot(&(m * x0)));
        take(y_at(from)?);
        take(y_at(span)?);
        let ax = a * x0;
        let slope = |s: f64| mat_exp(&a, s).map(|m| c.dot(&(m * ax))).unwrap_or(f64::NAN);
        let width = span - from;
        if width <= 0.0 {
            continue;
        }
        let h = width / grid as f64;
        let values: Vec<f64> = (0..=grid).map(|k| slope(from + h * k as f64)).collect();
        let roots = roots_from_grid(&slope, from, span, &values, settings.root_rel_tol * span)?;
        for r in roots.roots {
            take(y_at(r)?);
        }
    }
    let (y_min, y_max) = match &traj.structure.output_nl {
        Some(nl) => {
            let (p, q) = (nl.eval(lo)?, nl.eval(hi)?);
            match nl.direction() {
                Monotonicity::Increasing => (Some(p), Some(q)),
                Monotonicity::Decreasing => (Some(q), Some(p)),
            }
        }
        None => (None, None),
    };
    let mut worst = (spec.y_bar_min - lo).max(hi - spec.y_bar_max).max(0.0);
    if let (Some(m), Some(mm), Some(s_lo), Some(s_hi)) = (y_min, y_max, spec.y_min, spec.y_max) {
        worst = worst.max((s_lo - m).max(mm - s_hi));
    }
    Ok(CorridorReport {
        y_bar_min: lo,
        y_bar_max: hi,
        y_min,
        y_max,
        violation: worst > tolerance,
        worst_excursion: worst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{synthesize_modulation, ModulationBounds};
    use crate::plant::{plant_from_nmb, NmbParams, PlantLTI, StaticNonlinearity};
    use approx::assert_abs_diff_eq;

    fn s() -> NumericsSettings {
        NumericsSettings::default()
    }

    fn nmb() -> PlantLTI {
        plant_from_nmb(&NmbParams::default(), &s()).unwrap()
    }

    fn setup() -> (PlantStructure, ModulationConfig, OneCycle) {
        let hill = NmbParams::default().hill();
        let cycle = OneCycle::new(&nmb(), 37.3834, 415.8412, &s()).unwrap();
        let m = synthesize_modulation(&cycle, -0.0940, 0.0313, ModulationBounds::default(), Some(&hill)).unwrap();
        (PlantStructure::wiener(nmb(), hill), m.without_output_nl(), cycle)
    }

    #[test]
    fn fixed_point_start_stays_on_cycle() {
        let (st, m, c) = setup();
        let tr = simulate(&st, &m, c.fixed_point, 10, 1.0, &s()).unwrap();
        for e in &tr.events {
            assert_abs_diff_eq!(e.lambda, 415.8412, epsilon = 1e-9);
            assert_abs_diff_eq!(e.interval, 37.3834, epsilon = 1e-9);
            assert!((e.state_pre - c.fixed_point).norm() < 1e-6);
        }
        let rep = detect_convergence(&tr, &c, 1e-6, 5);
        assert!(rep.converged);
        assert_eq!(rep.n_star, Some(0));
    }

    #[test]
    fn constant_modulation_gives_constant_events() {
        let (st, _, c) = setup();
        let open = ModulationConfig::constant(c.period, c.weight, ModulationBounds::default());
        let tr = simulate(&st, &open, SmallVector::new(3.0, 1.0, 0.5), 8, 2.0, &s()).unwrap();
        assert!(tr.events.iter().all(|e| e.interval == c.period && e.lambda == c.weight));
    }

    #[test]
    fn zero_start_converges() {
        let (st, m, c) = setup();
        let tr = simulate(&st, &m, SmallVector::zeros(), 30, 0.5, &s()).unwrap();
        let rep = detect_convergence(&tr, &c, 1e-3, 3);
        assert!(rep.converged);
        assert!(rep.distances.last().unwrap() < &1e-9);
        for e in &tr.events {
            assert!(e.interval >= 5.0 && e.interval <= 45.0);
            assert!(e.lambda >= 200.0 && e.lambda <= 5000.0);
        }
        assert!(tr.samples.iter().all(|p| p.state.iter().all(|&v| v >= 0.0)));
        assert!(tr.samples.windows(2).all(|w| w[1].t > w[0].t));
    }

    #[test]
    fn events_do_not_depend_on_sampling() {
        let (st, m, _) = setup();
        let a = simulate(&st, &m, SmallVector::zeros(), 12, 0.05, &s()).unwrap();
        let b = simulate(&st, &m, SmallVector::zeros(), 12, 3.7, &s()).unwrap();
        assert_eq!(a.events, b.events);
    }

    #[test]
    fn wiener_matches_composed_lti() {
        let (st, m, _) = setup();
        let hill = NmbParams::default().hill();
        let composed = ModulationConfig {
            output_nl: Some(hill),
            ..m.clone()
        };
        let w = simulate(&st, &m, SmallVector::zeros(), 15, 1.0, &s()).unwrap();
        let l = simulate(
            &PlantStructure::lti(nmb()),
            &composed,
            SmallVector::zeros(),
            15,
            1.0,
            &s(),
        )
        .unwrap();
        for (x, y) in w.events.iter().zip(&l.events) {
            assert!((x.t - y.t).abs() < 1e-10 && (x.lambda - y.lambda).abs() < 1e-10);
        }
    }

    #[test]
    fn hammerstein_jumps_hit_target() {
        let c = OneCycle::new(&nmb(), 37.3834, 415.8412, &s()).unwrap();
        let m = synthesize_modulation(&c, 0.5, -2.0, ModulationBounds::default(), None).unwrap();
        let st = PlantStructure::hammerstein(nmb(), StaticNonlinearity::Power { exponent: 2.0 });
        let tr = simulate(&st, &m, SmallVector::zeros(), 20, 1.0, &s()).unwrap();
        for e in &tr.events {
            let target = m.dose(e.y).unwrap();
            assert!((e.lambda * e.lambda - target).abs() <= 1e-8);
            assert_eq!(e.jump, e.lambda * e.lambda);
        }
    }

    #[test]
    fn hammerstein_unreachable_dose_aborts() {
        let c = OneCycle::new(&nmb(), 37.3834, 415.8412, &s()).unwrap();
        let m = ModulationConfig::constant(c.period, c.weight, ModulationBounds::default());
        // Saturating input map that never reaches the requested dose.
        let st = PlantStructure::hammerstein(nmb(), StaticNonlinearity::Hill { gamma: 1.0, c50: 1.0 });
        let r = simulate(&st, &m, SmallVector::zeros(), 3, 1.0, &s());
        assert!(matches!(r, Err(Error::SimulationAbort { index: 0, .. })), "{r:?}");
    }

    #[test]
    fn corridor_of_closed_loop() {
        let (st, m, c) = setup();
        let tr = simulate(&st, &m, SmallVector::zeros(), 30, 0.5, &s()).unwrap();
        let rep = detect_convergence(&tr, &c, 1e-3, 3);
        let spec = CorridorSpec::measured(2.0, 10.0, &NmbParams::default().hill()).unwrap();
        let cut = tr.events[rep.n_star.unwrap()].t;
        let cr = corridor_report(&tr, &spec, cut, 1e-3, &s()).unwrap();
        assert_abs_diff_eq!(cr.y_bar_min, 7.3889, epsilon = 1e-3);
        assert_abs_diff_eq!(cr.y_bar_max, 13.9463, epsilon = 1e-3);
        assert_abs_diff_eq!(cr.y_min.unwrap(), 2.0, epsilon = 1e-2);
        assert_abs_diff_eq!(cr.y_max.unwrap(), 10.0, epsilon = 1e-2);
        assert!(!cr.violation);
        let wide = CorridorSpec::linear(spec.y_bar_min / 2.0, spec.y_bar_max * 2.0).unwrap();
        assert!(!corridor_report(&tr, &wide, cut, 0.0, &s()).unwrap().violation);
        let narrow = CorridorSpec::linear(8.0, 12.0).unwrap();
        assert!(corridor_report(&tr, &narrow, cut, 1e-3, &s()).unwrap().violation);
    }

    #[test]
    fn input_validation() {
        let (st, m, _) = setup();
        assert!(simulate(&st, &m, SmallVector::new(-1.0, 0.0, 0.0), 3, 1.0, &s()).is_err());
        assert!(simulate(&st, &m, SmallVector::zeros(), 0, 1.0, &s()).is_err());
        assert!(simulate(&st, &m, SmallVector::zeros(), 3, 0.0, &s()).is_err());
    }
}
