//! Corridor-matching design of the 1-cycle and its modulation functions.
//!
//! The period is picked so that the shape of the periodic output (the ratio
//! `z_max / (z_max - z_min)`, independent of the dose) matches the requested
//! corridor; the dose then scales the corridor width. Piecewise-affine
//! modulation functions are laid through the design point and the orbital
//! stability of the resulting cycle is read off the Jacobian of the firing
//! map.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cycle::{corridor_from_profile, CorridorAnalysis, CycleProfile, OneCycle};
use crate::error::{Error, Result};
use crate::numerics::{eigenvalues, spectral_radius, NumericsSettings, SmallMatrix, SmallVector};
use crate::plant::{Monotonicity, PlantLTI, StaticNonlinearity};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorridorSource {
    Measured,
    Linear,
}

/// Requested output corridor, always carried in linear-output units and
/// optionally in measured units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorridorSpec {
    pub y_bar_min: f64,
    pub y_bar_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_max: Option<f64>,
    pub which_given: CorridorSource,
}

impl CorridorSpec {
    pub fn linear(y_bar_min: f64, y_bar_max: f64) -> Result<Self> {
        if !(y_bar_min > 0.0 && y_bar_min < y_bar_max && y_bar_max.is_finite()) {
            return Err(Error::Validation(format!(
                "linear corridor [{y_bar_min}, {y_bar_max}] must satisfy 0 < min < max"
            )));
        }
        Ok(Self {
            y_bar_min,
            y_bar_max,
            y_min: None,
            y_max: None,
            which_given: CorridorSource::Linear,
        })
    }

    /// Map a measured corridor through the inverse of the output map.
    pub fn measured(y_min: f64, y_max: f64, output_nl: &StaticNonlinearity) -> Result<Self> {
        if !(y_min > 0.0 && y_min < y_max && y_max.is_finite()) {
            return Err(Error::Validation(format!(
                "measured corridor [{y_min}, {y_max}] must satisfy 0 < min < max"
            )));
        }
        let (lo, hi) = match output_nl.direction() {
            Monotonicity::Increasing => (output_nl.inverse(y_min)?, output_nl.inverse(y_max)?),
            Monotonicity::Decreasing => (output_nl.inverse(y_max)?, output_nl.inverse(y_min)?),
        };
        let mut spec = Self::linear(lo, hi)?;
        spec.y_min = Some(y_min);
        spec.y_max = Some(y_max);
        spec.which_given = CorridorSource::Measured;
        Ok(spec)
    }

    /// `y_bar_max / (y_bar_max - y_bar_min)`.
    pub fn shape_ratio(&self) -> f64 {
        self.y_bar_max / (self.y_bar_max - self.y_bar_min)
    }
}

/// Settings of the period search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PeriodSearch {
    pub t_min: f64,
    pub t_max: f64,
    pub grid_n: usize,
    /// Golden-section refinement stops at `refine_rel * (t_max - t_min)`.
    pub refine_rel: f64,
    /// Largest accepted ratio residual.
    pub residual_cap: f64,
}

impl Default for PeriodSearch {
    fn default() -> Self {
        Self {
            t_min: 15.0,
            t_max: 45.0,
            grid_n: 256,
            refine_rel: 1e-9,
            residual_cap: 0.02,
        }
    }
}

/// One grid point of the period sweep, for a unit dose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub period: f64,
    pub z_min: f64,
    pub z_max: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodDesign {
    pub period: f64,
    pub ratio_residual: f64,
    pub sweep: Vec<SweepRow>,
}

fn sweep_row(plant: &PlantLTI, period: f64, settings: &NumericsSettings) -> Result<SweepRow> {
    let profile = CycleProfile::new(plant, period, settings)?;
    let ca = corridor_from_profile(&profile, 1.0, settings)?;
    Ok(SweepRow {
        period,
        z_min: ca.y_bar_min,
        z_max: ca.y_bar_max,
        ratio: ca.y_bar_max / (ca.y_bar_max - ca.y_bar_min),
    })
}

/// Grid search plus golden-section refinement of the period whose output
/// shape matches the corridor.
pub fn design_period(
    plant: &PlantLTI,
    spec: &CorridorSpec,
    search: &PeriodSearch,
    settings: &NumericsSettings,
) -> Result<PeriodDesign> {
    if !(search.t_min > 0.0 && search.t_min < search.t_max && search.t_max.is_finite()) {
        return Err(Error::Validation(format!(
            "period range [{}, {}] must satisfy 0 < min < max",
            search.t_min, search.t_max
        )));
    }
    if search.grid_n < 8 {
        return Err(Error::Validation("period grid needs at least 8 points".into()));
    }
    let target = spec.shape_ratio();
    let span = search.t_max - search.t_min;
    let n = search.grid_n;
    let sweep: Vec<SweepRow> = (0..n)
        .into_par_iter()
        .map(|j| {
            let t = if j + 1 == n {
                search.t_max
            } else {
                search.t_min + span * j as f64 / (n - 1) as f64
            };
            sweep_row(plant, t, settings)
        })
        .collect::<Result<_>>()?;

    // Strict `<` keeps the smallest period on ties.
    let mut best = 0;
    for (j, row) in sweep.iter().enumerate() {
        if (row.ratio - target).abs() < (sweep[best].ratio - target).abs() {
            best = j;
        }
    }

    let residual_at = |t: f64| -> Result<f64> { Ok((sweep_row(plant, t, settings)?.ratio - target).abs()) };
    let mut lo = sweep[best.saturating_sub(1)].period;
    let mut hi = sweep[(best + 1).min(n - 1)].period;
    let tol = search.refine_rel * span;
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let (mut fc, mut fd) = (residual_at(c)?, residual_at(d)?);
    while hi - lo > tol {
        if fc <= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = residual_at(c)?;
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = residual_at(d)?;
        }
    }
    let mid = 0.5 * (lo + hi);
    let mut period = mid;
    let mut residual = residual_at(mid)?;
    let grid_residual = (sweep[best].ratio - target).abs();
    if grid_residual < residual {
        period = sweep[best].period;
        residual = grid_residual;
    }
    if residual > search.residual_cap {
        return Err(Error::CorridorUnreachable {
            residual,
            cap: search.residual_cap,
        });
    }
    Ok(PeriodDesign {
        period,
        ratio_residual: residual,
        sweep,
    })
}

/// Dose `(y_bar_max - y_bar_min) / (z_max - z_min)` for the chosen period.
pub fn design_weight(plant: &PlantLTI, period: f64, spec: &CorridorSpec, settings: &NumericsSettings) -> Result<f64> {
    let row = sweep_row(plant, period, settings)?;
    let width = row.z_max - row.z_min;
    if !(width > f64::EPSILON * row.z_max.abs()) {
        return Err(Error::DegenerateCycle { width });
    }
    Ok((spec.y_bar_max - spec.y_bar_min) / width)
}

/// Outcome of the period and dose design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignedCycle {
    pub cycle: OneCycle,
    pub ratio_residual: f64,
    pub corridor: CorridorAnalysis,
    pub sweep: Vec<SweepRow>,
}

/// Period, dose, fixed point and achieved corridor in one pass.
pub fn design_cycle(
    plant: &PlantLTI,
    spec: &CorridorSpec,
    search: &PeriodSearch,
    settings: &NumericsSettings,
) -> Result<DesignedCycle> {
    let pd = design_period(plant, spec, search, settings)?;
    let weight = design_weight(plant, pd.period, spec, settings)?;
    let cycle = OneCycle::new(plant, pd.period, weight, settings)?;
    let profile = CycleProfile::new(plant, pd.period, settings)?;
    let corridor = corridor_from_profile(&profile, weight, settings)?;
    Ok(DesignedCycle {
        cycle,
        ratio_residual: pd.ratio_residual,
        corridor,
        sweep: pd.sweep,
    })
}

/// Clamp bounds of the modulation functions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModulationBounds {
    pub phi1: f64,
    pub phi2: f64,
    pub f1: f64,
    pub f2: f64,
}

impl Default for ModulationBounds {
    fn default() -> Self {
        Self {
            phi1: 5.0,
            phi2: 45.0,
            f1: 200.0,
            f2: 5000.0,
        }
    }
}

impl ModulationBounds {
    pub fn validate(&self) -> Result<()> {
        let ok = self.phi1 > 0.0 && self.phi1 <= self.phi2 && self.f1 > 0.0 && self.f1 <= self.f2;
        if !ok || !self.phi2.is_finite() || !self.f2.is_finite() {
            return Err(Error::Validation(format!(
                "modulation bounds need 0 < phi1 <= phi2 and 0 < f1 <= f2, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Clamped piecewise-affine frequency and amplitude modulation.
///
/// With `xi` the output after the optional `output_nl`:
/// `Phi = clamp(k2 xi + k1, phi1, phi2)` and
/// `F = clamp(k4 xi + k3, f1, f2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulationConfig {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: f64,
    pub bounds: ModulationBounds,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_nl: Option<StaticNonlinearity>,
}

impl ModulationConfig {
    /// Constant modulation, i.e. open-loop periodic dosing.
    pub fn constant(period: f64, weight: f64, bounds: ModulationBounds) -> Self {
        Self {
            k1: period,
            k2: 0.0,
            k3: weight,
            k4: 0.0,
            bounds,
            output_nl: None,
        }
    }

    /// Same affine laws without the composed output map, for use on a
    /// plant whose measured output already passes through that map.
    pub fn without_output_nl(&self) -> Self {
        Self {
            output_nl: None,
            ..self.clone()
        }
    }

    fn argument(&self, y: f64) -> Result<f64> {
        match &self.output_nl {
            Some(nl) => nl.eval(y),
            None => Ok(y),
        }
    }

    /// Next inter-firing interval.
    pub fn interval(&self, y: f64) -> Result<f64> {
        let xi = self.argument(y)?;
        Ok((self.k2 * xi + self.k1).clamp(self.bounds.phi1, self.bounds.phi2))
    }

    /// Next dose.
    pub fn dose(&self, y: f64) -> Result<f64> {
        let xi = self.argument(y)?;
        Ok((self.k4 * xi + self.k3).clamp(self.bounds.f1, self.bounds.f2))
    }

    /// `(F'(y), Phi'(y))`, zero on saturated segments.
    pub fn slopes_at(&self, y: f64) -> Result<(f64, f64)> {
        let xi = self.argument(y)?;
        let chain = match &self.output_nl {
            Some(nl) => nl.derivative(y)?,
            None => 1.0,
        };
        let raw_f = self.k4 * xi + self.k3;
        let raw_phi = self.k2 * xi + self.k1;
        let b = &self.bounds;
        let df = if raw_f > b.f1 && raw_f < b.f2 {
            self.k4 * chain
        } else {
            0.0
        };
        let dphi = if raw_phi > b.phi1 && raw_phi < b.phi2 {
            self.k2 * chain
        } else {
            0.0
        };
        Ok((df, dphi))
    }
}

/// Lay the affine laws through the design point `(phi(y0), lambda)` and
/// `(phi(y0), T)`.
pub fn synthesize_modulation(
    cycle: &OneCycle,
    k2: f64,
    k4: f64,
    bounds: ModulationBounds,
    output_nl: Option<&StaticNonlinearity>,
) -> Result<ModulationConfig> {
    bounds.validate()?;
    if !(k2.is_finite() && k4.is_finite()) {
        return Err(Error::NonFinite("modulation slope"));
    }
    let direction = output_nl.map_or(Monotonicity::Increasing, StaticNonlinearity::direction);
    // F must not increase and Phi must not decrease in the linear output.
    let signs_ok = match direction {
        Monotonicity::Decreasing => k4 >= 0.0 && k2 <= 0.0,
        Monotonicity::Increasing => k4 <= 0.0 && k2 >= 0.0,
    };
    if !signs_ok {
        return Err(Error::SlopeSign(format!(
            "k2 = {k2}, k4 = {k4} with a {direction:?} output map"
        )));
    }
    check_unsaturated("amplitude", cycle.weight, bounds.f1, bounds.f2)?;
    check_unsaturated("frequency", cycle.period, bounds.phi1, bounds.phi2)?;
    let xi0 = match output_nl {
        Some(nl) => nl.eval(cycle.y0)?,
        None => cycle.y0,
    };
    Ok(ModulationConfig {
        k1: cycle.period - k2 * xi0,
        k2,
        k3: cycle.weight - k4 * xi0,
        k4,
        bounds,
        output_nl: output_nl.cloned(),
    })
}

fn check_unsaturated(which: &'static str, value: f64, lo: f64, hi: f64) -> Result<()> {
    if value > lo && value < hi {
        return Ok(());
    }
    if value < lo || value > hi {
        return Err(Error::Validation(format!(
            "{which} design value {value} outside the bounds [{lo}, {hi}]"
        )));
    }
    Err(Error::SaturatedDesignPoint { which, value, lo, hi })
}

/// Linearization of the firing map at the fixed point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    /// `Q'(X) = e^{AT} + K C`.
    pub jacobian: SmallMatrix,
    pub gain: SmallVector,
    /// `e^{AT} B`.
    pub j: SmallVector,
    /// `A X`.
    pub d: SmallVector,
    pub amplitude_slope: f64,
    pub frequency_slope: f64,
    pub multipliers: Vec<Complex64>,
    pub spectral_radius: f64,
    pub stable: bool,
    /// All multipliers real and positive.
    pub monotone_convergence: bool,
}

/// Characteristic multipliers of the designed cycle.
pub fn stability_report(
    plant: &PlantLTI,
    cycle: &OneCycle,
    modulation: &ModulationConfig,
    settings: &NumericsSettings,
) -> Result<StabilityReport> {
    let profile = CycleProfile::new(plant, cycle.period, settings)?;
    let flow = *profile.flow();
    let j = flow * plant.b();
    let d = plant.a() * cycle.fixed_point;
    let (df, dphi) = modulation.slopes_at(cycle.y0)?;
    let gain = j * df + d * dphi;
    let jacobian = flow + gain * plant.c().transpose();
    let multipliers = eigenvalues(&jacobian);
    let rho = spectral_radius(&multipliers);
    let scale = rho.max(f64::MIN_POSITIVE);
    let monotone = multipliers.iter().all(|z| z.re > 0.0 && z.im.abs() <= 1e-12 * scale);
    Ok(StabilityReport {
        jacobian,
        gain,
        j,
        d,
        amplitude_slope: df,
        frequency_slope: dphi,
        multipliers,
        spectral_radius: rho,
        stable: rho < 1.0,
        monotone_convergence: monotone,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeChoice {
    pub k2: f64,
    pub k4: f64,
    pub spectral_radius: f64,
}

/// `n` points from `from` to `to`, geometrically spaced in magnitude. A zero
/// endpoint is kept as an exact zero and the remaining points span three
/// decades below the other endpoint.
pub fn log_spaced(from: f64, to: f64, n: usize) -> Vec<f64> {
    if n <= 1 || from == to {
        return vec![from];
    }
    let sign = if from + to < 0.0 { -1.0 } else { 1.0 };
    let (a, b) = (from.abs(), to.abs());
    let (lo, hi, with_zero) = match (a == 0.0, b == 0.0) {
        (true, _) => (b * 1e-3, b, true),
        (_, true) => (a * 1e-3, a, true),
        _ => (a.min(b), a.max(b), false),
    };
    let m = if with_zero { n - 1 } else { n };
    let mut out: Vec<f64> = if with_zero { vec![0.0] } else { Vec::new() };
    for i in 0..m {
        let f = if m == 1 { 1.0 } else { i as f64 / (m - 1) as f64 };
        out.push(sign * lo * (hi / lo).powf(f));
    }
    out.sort_by(f64::total_cmp);
    out
}

/// Grid search over `(k2, k4)` for the smallest spectral radius. Ties go to
/// the gentler feedback (smaller `|k2| + |k4|`).
pub fn slope_search(
    plant: &PlantLTI,
    cycle: &OneCycle,
    bounds: ModulationBounds,
    output_nl: Option<&StaticNonlinearity>,
    k2_grid: &[f64],
    k4_grid: &[f64],
    settings: &NumericsSettings,
) -> Result<SlopeChoice> {
    if k2_grid.is_empty() || k4_grid.is_empty() {
        return Err(Error::Validation("empty slope grid".into()));
    }
    let points: Vec<(f64, f64)> = k2_grid
        .iter()
        .flat_map(|&k2| k4_grid.iter().map(move |&k4| (k2, k4)))
        .collect();
    let evaluated: Vec<SlopeChoice> = points
        .par_iter()
        .map(|&(k2, k4)| {
            let m = synthesize_modulation(cycle, k2, k4, bounds, output_nl)?;
            let r = stability_report(plant, cycle, &m, settings)?;
            Ok(SlopeChoice {
                k2,
                k4,
                spectral_radius: r.spectral_radius,
            })
        })
        .collect::<Result<_>>()?;
    let best = evaluated
        .iter()
        .copied()
        .min_by(|a, b| {
            a.spectral_radius
                .total_cmp(&b.spectral_radius)
                .then((a.k2.abs() + a.k4.abs()).total_cmp(&(b.k2.abs() + b.k4.abs())))
        })
        .expect("non-empty grid");
    if best.spectral_radius >= 1.0 {
        return Err(Error::NoStabilizingSlopes {
            best_rho: best.spectral_radius,
        });
    }
    Ok(best)
}
