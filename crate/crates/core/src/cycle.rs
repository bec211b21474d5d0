//! Closed-form analysis of 1-cycles: one firing per period `T` with dose
//! `lambda`.
//!
//! Over one period the state after the jump is
//! `x(t) = lambda e^{At} (I - e^{AT})^{-1} B`, so the output profile, its
//! slope and the pre-jump fixed point all follow from the vector
//! `w = (I - e^{AT})^{-1} B` computed once per `(plant, T)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{
    mat_exp, mu_divided_difference, roots_from_grid, solve_linear, NumericsSettings, SmallMatrix, SmallVector,
};
use crate::plant::{Monotonicity, PlantLTI, StaticNonlinearity};

/// A periodic solution with one firing per period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneCycle {
    pub period: f64,
    pub weight: f64,
    /// State just before each firing.
    pub fixed_point: SmallVector,
    /// Linear output at firing, `C X`.
    pub y0: f64,
}

impl OneCycle {
    pub fn new(plant: &PlantLTI, period: f64, weight: f64, settings: &NumericsSettings) -> Result<Self> {
        let fixed_point = fixed_point(plant, period, weight, settings)?;
        Ok(Self {
            period,
            weight,
            y0: plant.output(&fixed_point),
            fixed_point,
        })
    }
}

/// Per-`(plant, T)` data shared by every output evaluation in a period.
#[derive(Debug, Clone)]
pub struct CycleProfile {
    a: SmallMatrix,
    c: SmallVector,
    period: f64,
    flow: SmallMatrix,
    w: SmallVector,
    aw: SmallVector,
}

impl CycleProfile {
    pub fn new(plant: &PlantLTI, period: f64, settings: &NumericsSettings) -> Result<Self> {
        if !(period > 0.0 && period.is_finite()) {
            return Err(Error::Validation(format!("period {period} must be positive")));
        }
        let a = plant.a();
        let flow = mat_exp(&a, period)?;
        let w = solve_linear(&(SmallMatrix::identity() - flow), &plant.b(), settings)
            .map_err(|e| Error::Internal(format!("I - e^(AT) singular for a Hurwitz plant: {e}")))?;
        Ok(Self {
            aw: a * w,
            a,
            c: plant.c(),
            period,
            flow,
            w,
        })
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    /// `e^{AT}`.
    pub fn flow(&self) -> &SmallMatrix {
        &self.flow
    }

    /// `(I - e^{AT})^{-1} B`.
    pub fn resolvent_b(&self) -> &SmallVector {
        &self.w
    }

    /// Output at time `t` after the firing for a unit dose.
    pub fn unit_output(&self, t: f64) -> Result<f64> {
        Ok(self.c.dot(&(mat_exp(&self.a, t)? * self.w)))
    }

    /// Time derivative of [`Self::unit_output`].
    pub fn unit_slope(&self, t: f64) -> Result<f64> {
        Ok(self.c.dot(&(mat_exp(&self.a, t)? * self.aw)))
    }

    /// Sign-change roots of the output slope on `(0, T)`.
    pub fn extremum_times(&self, grid_n: usize, settings: &NumericsSettings) -> Result<Vec<f64>> {
        let t = self.period;
        let h = t / grid_n as f64;
        // March the slope vector across the grid with one exponential; the
        // bisection below evaluates exactly.
        let step = mat_exp(&self.a, h)?;
        let mut v = self.aw;
        let mut values = Vec::with_capacity(grid_n + 1);
        for k in 0..=grid_n {
            if k == grid_n {
                values.push(self.c.dot(&(self.flow * self.aw)));
            } else {
                values.push(self.c.dot(&v));
                v = step * v;
            }
        }
        let f = |s: f64| self.unit_slope(s).unwrap_or(f64::NAN);
        let roots = roots_from_grid(&f, 0.0, t, &values, settings.root_rel_tol * t)?;
        Ok(roots.roots.into_iter().filter(|&r| r > 0.0 && r < t).collect())
    }
}

/// Fixed point `X = lambda e^{AT} (I - e^{AT})^{-1} B` of the 1-cycle map.
pub fn fixed_point(plant: &PlantLTI, period: f64, weight: f64, settings: &NumericsSettings) -> Result<SmallVector> {
    if !(weight > 0.0 && weight.is_finite()) {
        return Err(Error::Validation(format!("dose {weight} must be positive")));
    }
    let profile = CycleProfile::new(plant, period, settings)?;
    Ok(fixed_point_from_profile(&profile, weight))
}

pub(crate) fn fixed_point_from_profile(profile: &CycleProfile, weight: f64) -> SmallVector {
    profile.flow * profile.w * weight
}

/// The same fixed point, coordinate-wise through divided differences of
/// `mu(z) = e^z / (1 - e^z)`:
///
/// ```text
/// x1 = lambda mu(-a1 T)
/// x2 = lambda g1 T mu[-a1 T, -a2 T]
/// x3 = lambda g1 g2 T^2 mu[-a1 T, -a2 T, -a3 T]
/// ```
pub fn fixed_point_divided(
    plant: &PlantLTI,
    period: f64,
    weight: f64,
    settings: &NumericsSettings,
) -> Result<SmallVector> {
    if !(period > 0.0 && weight > 0.0) {
        return Err(Error::Validation("period and dose must be positive".into()));
    }
    let [a1, a2, a3] = plant.rates();
    let [g1, g2] = plant.gains();
    let z = [-a1 * period, -a2 * period, -a3 * period];
    Ok(SmallVector::new(
        weight * mu_divided_difference(&z[..1], settings)?,
        weight * g1 * period * mu_divided_difference(&z[..2], settings)?,
        weight * g1 * g2 * period * period * mu_divided_difference(&z, settings)?,
    ))
}

/// Linear output `lambda C e^{At} (I - e^{AT})^{-1} B` of the cycle at
/// `t` in `(0, T)`.
pub fn periodic_output(plant: &PlantLTI, cycle: &OneCycle, t: f64, settings: &NumericsSettings) -> Result<f64> {
    if !(t > 0.0 && t < cycle.period) {
        return Err(Error::Domain {
            what: "periodic output time",
            value: t,
        });
    }
    let profile = CycleProfile::new(plant, cycle.period, settings)?;
    Ok(cycle.weight * profile.unit_output(t)?)
}

/// Corridor reached by a 1-cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorridorAnalysis {
    /// Interior extremum times, increasing.
    pub extremum_times: Vec<f64>,
    pub y_bar_min: f64,
    pub y_bar_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_max: Option<f64>,
}

/// Extrema of the periodic output of the `(T, lambda)` cycle.
///
/// Extrema are only evaluated at interior roots of the output slope; the
/// firing instants are never extremal.
pub fn corridor_extrema(
    plant: &PlantLTI,
    period: f64,
    weight: f64,
    settings: &NumericsSettings,
) -> Result<CorridorAnalysis> {
    if !(weight > 0.0 && weight.is_finite()) {
        return Err(Error::Validation(format!("dose {weight} must be positive")));
    }
    let profile = CycleProfile::new(plant, period, settings)?;
    corridor_from_profile(&profile, weight, settings)
}

pub(crate) fn corridor_from_profile(
    profile: &CycleProfile,
    weight: f64,
    settings: &NumericsSettings,
) -> Result<CorridorAnalysis> {
    let mut times = profile.extremum_times(settings.root_grid, settings)?;
    if times.is_empty() {
        times = profile.extremum_times(settings.root_grid * settings.root_retry_factor, settings)?;
    }
    if times.is_empty() {
        return Err(Error::NoExtrema { period: profile.period });
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &t in &times {
        let y = weight * profile.unit_output(t)?;
        lo = lo.min(y);
        hi = hi.max(y);
    }
    Ok(CorridorAnalysis {
        extremum_times: times,
        y_bar_min: lo,
        y_bar_max: hi,
        y_min: None,
        y_max: None,
    })
}

/// Fill the measured-output bounds through a monotone output map.
pub fn map_corridor_through_output_nl(ca: &CorridorAnalysis, nl: &StaticNonlinearity) -> Result<CorridorAnalysis> {
    let at_min = nl.eval(ca.y_bar_min)?;
    let at_max = nl.eval(ca.y_bar_max)?;
    let (y_min, y_max) = match nl.direction() {
        Monotonicity::Increasing => (at_min, at_max),
        Monotonicity::Decreasing => (at_max, at_min),
    };
    Ok(CorridorAnalysis {
        y_min: Some(y_min),
        y_max: Some(y_max),
        ..ca.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{plant_from_nmb, NmbParams};
    use approx::assert_abs_diff_eq;

    const T: f64 = 37.3834;
    const LAMBDA: f64 = 415.8412;

    fn s() -> NumericsSettings {
        NumericsSettings::default()
    }

    fn nmb() -> PlantLTI {
        plant_from_nmb(&NmbParams::default(), &s()).unwrap()
    }

    #[test]
    fn design_fixed_point() {
        let x = fixed_point(&nmb(), T, LAMBDA, &s()).unwrap();
        assert_abs_diff_eq!(x[0], 136.4461, epsilon = 1e-2);
        assert_abs_diff_eq!(x[1], 44.9637, epsilon = 1e-2);
        assert_abs_diff_eq!(x[2], 7.4309, epsilon = 1e-2);
        let xd = fixed_point_divided(&nmb(), T, LAMBDA, &s()).unwrap();
        for i in 0..3 {
            assert!((x[i] - xd[i]).abs() <= 1e-8 * x[i]);
        }
    }

    #[test]
    fn fixed_point_is_linear_in_dose() {
        let x1 = fixed_point(&nmb(), T, LAMBDA, &s()).unwrap();
        let x2 = fixed_point(&nmb(), T, 2.0 * LAMBDA, &s()).unwrap();
        assert!((x2 - 2.0 * x1).norm() <= 1e-12 * x2.norm());
    }

    #[test]
    fn fixed_point_propagates_to_itself() {
        let p = nmb();
        let x = fixed_point(&p, T, LAMBDA, &s()).unwrap();
        let next = mat_exp(&p.a(), T).unwrap() * (x + p.b() * LAMBDA);
        assert!((next - x).norm() <= 1e-10 * x.norm());
        assert!((p.a() * x).iter().all(|&v| v < 0.0));
    }

    #[test]
    fn output_limits_and_peak() {
        let p = nmb();
        let cycle = OneCycle::new(&p, T, LAMBDA, &s()).unwrap();
        let near0 = periodic_output(&p, &cycle, 1e-9, &s()).unwrap();
        let near_t = periodic_output(&p, &cycle, T - 1e-9, &s()).unwrap();
        assert_abs_diff_eq!(near0, cycle.y0, epsilon = 1e-8);
        assert_abs_diff_eq!(near_t, cycle.y0, epsilon = 1e-8);
        assert_abs_diff_eq!(cycle.y0, 7.4309, epsilon = 1e-3);
        assert!(periodic_output(&p, &cycle, 0.0, &s()).is_err());
        assert!(periodic_output(&p, &cycle, T, &s()).is_err());
        let ca = corridor_extrema(&p, T, LAMBDA, &s()).unwrap();
        let t_max = ca
            .extremum_times
            .iter()
            .copied()
            .max_by(|a, b| {
                let ya = periodic_output(&p, &cycle, *a, &s()).unwrap();
                let yb = periodic_output(&p, &cycle, *b, &s()).unwrap();
                ya.total_cmp(&yb)
            })
            .unwrap();
        assert_abs_diff_eq!(
            periodic_output(&p, &cycle, t_max, &s()).unwrap(),
            13.9463,
            epsilon = 1e-3
        );
    }

    #[test]
    fn output_is_positive() {
        let p = nmb();
        let cycle = OneCycle::new(&p, T, LAMBDA, &s()).unwrap();
        for k in 1..1000 {
            let t = T * k as f64 / 1000.0;
            assert!(periodic_output(&p, &cycle, t, &s()).unwrap() > 0.0);
        }
    }

    #[test]
    fn design_corridor() {
        let ca = corridor_extrema(&nmb(), T, LAMBDA, &s()).unwrap();
        assert_abs_diff_eq!(ca.y_bar_min, 7.3889, epsilon = 1e-3);
        assert_abs_diff_eq!(ca.y_bar_max, 13.9463, epsilon = 1e-3);
        assert!(ca.y_bar_min < 7.4309 && ca.y_bar_min > 0.0);
        assert!(ca.extremum_times.iter().all(|&t| t > 0.0 && t < T));
        let doubled = corridor_extrema(&nmb(), T, 2.0 * LAMBDA, &s()).unwrap();
        assert!((doubled.y_bar_min - 2.0 * ca.y_bar_min).abs() < 1e-10);
        assert!((doubled.y_bar_max - 2.0 * ca.y_bar_max).abs() < 1e-10);
    }

    #[test]
    fn corridor_through_hill() {
        let ca = corridor_extrema(&nmb(), T, LAMBDA, &s()).unwrap();
        let mapped = map_corridor_through_output_nl(&ca, &NmbParams::default().hill()).unwrap();
        assert_abs_diff_eq!(mapped.y_min.unwrap(), 2.0, epsilon = 1e-2);
        assert_abs_diff_eq!(mapped.y_max.unwrap(), 10.0, epsilon = 1e-2);
        let same = map_corridor_through_output_nl(&ca, &StaticNonlinearity::Identity).unwrap();
        assert_eq!(same.y_min, Some(ca.y_bar_min));
        assert_eq!(same.y_max, Some(ca.y_bar_max));
    }

    #[test]
    fn initial_condition_response_decreases() {
        let p = nmb();
        let x = fixed_point(&p, T, LAMBDA, &s()).unwrap();
        let ax = p.a() * x;
        for k in 0..=200 {
            let t = T * k as f64 / 200.0;
            assert!(p.c().dot(&(mat_exp(&p.a(), t).unwrap() * ax)) < 0.0);
        }
    }
}
