//! Positive third-order chain plant and the static nonlinearities that wrap
//! it into Wiener or Hammerstein structures.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{NumericsSettings, SmallMatrix, SmallVector};

/// Linear part of the plant: a lower-bidiagonal Metzler chain
///
/// ```text
///     | -a1   0    0  |        | 1 |
/// A = |  g1  -a2   0  |,   B = | 0 |,   C = [0 0 1]
///     |  0    g2  -a3 |        | 0 |
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantLTI {
    a: [f64; 3],
    g: [f64; 2],
}

impl PlantLTI {
    /// Validates positivity and distinctness of the rate constants.
    pub fn new(a: [f64; 3], g: [f64; 2], settings: &NumericsSettings) -> Result<Self> {
        if a.iter().chain(g.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("plant constant"));
        }
        if let Some(v) = a.iter().find(|&&v| v <= 0.0) {
            return Err(Error::Validation(format!("rate constant {v} must be positive")));
        }
        if let Some(v) = g.iter().find(|&&v| v <= 0.0) {
            return Err(Error::Validation(format!("chain gain {v} must be positive")));
        }
        for i in 0..3 {
            for j in i + 1..3 {
                let scale = a[i].abs().max(a[j].abs());
                if (a[i] - a[j]).abs() <= settings.distinct_rel * scale {
                    return Err(Error::NotDistinct(a[i], a[j]));
                }
            }
        }
        Ok(Self { a, g })
    }

    pub fn rates(&self) -> [f64; 3] {
        self.a
    }

    pub fn gains(&self) -> [f64; 2] {
        self.g
    }

    /// Eigenvalues of `A`, i.e. `-a_i`.
    pub fn poles(&self) -> [f64; 3] {
        [-self.a[0], -self.a[1], -self.a[2]]
    }

    pub fn a(&self) -> SmallMatrix {
        let [a1, a2, a3] = self.a;
        let [g1, g2] = self.g;
        SmallMatrix::new(-a1, 0.0, 0.0, g1, -a2, 0.0, 0.0, g2, -a3)
    }

    pub fn b(&self) -> SmallVector {
        SmallVector::new(1.0, 0.0, 0.0)
    }

    /// Output row `C` as a column vector; `y = c().dot(x)`.
    pub fn c(&self) -> SmallVector {
        SmallVector::new(0.0, 0.0, 1.0)
    }

    pub fn output(&self, x: &SmallVector) -> f64 {
        x[2]
    }

    /// Static gain `C (-A)^{-1} B = g1 g2 / (a1 a2 a3)`.
    pub fn dc_gain(&self) -> f64 {
        self.g[0] * self.g[1] / (self.a[0] * self.a[1] * self.a[2])
    }
}

/// Parameters of the neuromuscular-blockade Wiener model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NmbParams {
    /// Patient-specific rate, `0 < alpha <= 0.1`.
    pub alpha: f64,
    /// Pole multipliers `v1, v2, v3`.
    pub v: [f64; 3],
    /// Hill exponent, `0 < gamma <= 10`.
    pub gamma: f64,
    /// Half-effect concentration.
    pub c50: f64,
    /// Bound on a continuous infusion rate. Informational only: the
    /// impulsive controller administers doses, not flows.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u_max: Option<f64>,
}

impl Default for NmbParams {
    fn default() -> Self {
        Self {
            alpha: 0.0374,
            v: [1.0, 4.0, 10.0],
            gamma: 2.6677,
            c50: 3.2425,
            u_max: None,
        }
    }
}

impl NmbParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 0.1) {
            return Err(Error::Validation(format!("alpha = {} outside (0, 0.1]", self.alpha)));
        }
        if !(self.gamma > 0.0 && self.gamma <= 10.0) {
            return Err(Error::Validation(format!("gamma = {} outside (0, 10]", self.gamma)));
        }
        if !(self.c50 > 0.0 && self.c50.is_finite()) {
            return Err(Error::Validation(format!("c50 = {} must be positive", self.c50)));
        }
        if self.v.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::Validation("pole multipliers must be positive".into()));
        }
        Ok(())
    }

    /// The Hill output nonlinearity with this parameter set.
    pub fn hill(&self) -> StaticNonlinearity {
        StaticNonlinearity::Hill {
            gamma: self.gamma,
            c50: self.c50,
        }
    }
}

/// `a_i = v_i alpha`, `g1 = v1 alpha`, `g2 = v2 v3 alpha^2`.
pub fn plant_from_nmb(p: &NmbParams, settings: &NumericsSettings) -> Result<PlantLTI> {
    p.validate()?;
    let [v1, v2, v3] = p.v;
    let alpha = p.alpha;
    PlantLTI::new(
        [v1 * alpha, v2 * alpha, v3 * alpha],
        [v1 * alpha, v2 * v3 * alpha * alpha],
        settings,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monotonicity {
    Increasing,
    Decreasing,
}

/// Strictly monotone, positive-valued scalar map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StaticNonlinearity {
    /// `100 c50^gamma / (c50^gamma + x^gamma)` on `x >= 0`.
    Hill {
        gamma: f64,
        c50: f64,
    },
    /// Piecewise-linear interpolant through sorted breakpoints.
    Table {
        x: Vec<f64>,
        y: Vec<f64>,
    },
    /// `x^exponent` on `x >= 0`.
    Power {
        exponent: f64,
    },
    Identity,
}

impl StaticNonlinearity {
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Hill { gamma, c50 } => {
                if !(*gamma > 0.0 && gamma.is_finite() && *c50 > 0.0 && c50.is_finite()) {
                    return Err(Error::Validation(format!(
                        "Hill parameters gamma = {gamma}, c50 = {c50} must be positive"
                    )));
                }
            }
            Self::Table { x, y } => {
                if x.len() < 2 || x.len() != y.len() {
                    return Err(Error::Validation(
                        "table needs at least two breakpoints of matching length".into(),
                    ));
                }
                if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("table entry"));
                }
                if x.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::Validation("table x must be strictly increasing".into()));
                }
                let inc = y.windows(2).all(|w| w[1] > w[0]);
                let dec = y.windows(2).all(|w| w[1] < w[0]);
                if !(inc || dec) {
                    return Err(Error::Validation("table y must be strictly monotone".into()));
                }
                if y.iter().any(|&v| v <= 0.0) {
                    return Err(Error::Validation("table values must be positive".into()));
                }
            }
            Self::Power { exponent } => {
                if !(*exponent > 0.0 && exponent.is_finite()) {
                    return Err(Error::Validation(format!("power exponent {exponent} must be positive")));
                }
            }
            Self::Identity => {}
        }
        Ok(())
    }

    pub fn direction(&self) -> Monotonicity {
        match self {
            Self::Hill { .. } => Monotonicity::Decreasing,
            Self::Table { y, .. } if y[1] < y[0] => Monotonicity::Decreasing,
            _ => Monotonicity::Increasing,
        }
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        match self {
            Self::Hill { gamma, c50 } => {
                if !(x >= 0.0) {
                    return Err(Error::Domain {
                        what: "Hill function",
                        value: x,
                    });
                }
                // 100 / (1 + (x/c50)^gamma) avoids overflow of c50^gamma.
                Ok(100.0 / (1.0 + (x / c50).powf(*gamma)))
            }
            Self::Table { x: xs, y: ys } => {
                let k = table_segment(xs, x).ok_or(Error::Domain {
                    what: "table",
                    value: x,
                })?;
                let w = (x - xs[k]) / (xs[k + 1] - xs[k]);
                Ok(ys[k] + w * (ys[k + 1] - ys[k]))
            }
            Self::Power { exponent } => {
                if !(x >= 0.0) {
                    return Err(Error::Domain {
                        what: "power function",
                        value: x,
                    });
                }
                Ok(x.powf(*exponent))
            }
            Self::Identity => {
                if x.is_finite() {
                    Ok(x)
                } else {
                    Err(Error::NonFinite("identity argument"))
                }
            }
        }
    }

    pub fn inverse(&self, y: f64) -> Result<f64> {
        match self {
            Self::Hill { gamma, c50 } => {
                if !(y > 0.0 && y <= 100.0) {
                    return Err(Error::Domain {
                        what: "inverse Hill function",
                        value: y,
                    });
                }
                Ok(c50 * (100.0 / y - 1.0).powf(1.0 / gamma))
            }
            Self::Table { x: xs, y: ys } => {
                // Reflect the table so the abscissae increase.
                let (rx, ry): (Vec<f64>, Vec<f64>) = if ys[1] > ys[0] {
                    (ys.clone(), xs.clone())
                } else {
                    (ys.iter().rev().copied().collect(), xs.iter().rev().copied().collect())
                };
                let k = table_segment(&rx, y).ok_or(Error::Domain {
                    what: "inverse table",
                    value: y,
                })?;
                let w = (y - rx[k]) / (rx[k + 1] - rx[k]);
                Ok(ry[k] + w * (ry[k + 1] - ry[k]))
            }
            Self::Power { exponent } => {
                if !(y >= 0.0) {
                    return Err(Error::Domain {
                        what: "inverse power function",
                        value: y,
                    });
                }
                Ok(y.powf(1.0 / exponent))
            }
            Self::Identity => self.eval(y),
        }
    }

    pub fn derivative(&self, x: f64) -> Result<f64> {
        match self {
            Self::Hill { gamma, c50 } => {
                if x < 0.0 || (x == 0.0 && *gamma < 1.0) || x.is_nan() {
                    return Err(Error::Domain {
                        what: "Hill derivative",
                        value: x,
                    });
                }
                if x == 0.0 {
                    return Ok(if *gamma == 1.0 { -100.0 / c50 } else { 0.0 });
                }
                let r = (x / c50).powf(*gamma);
                Ok(-100.0 * gamma * r / (x * (1.0 + r) * (1.0 + r)))
            }
            Self::Table { x: xs, y: ys } => {
                let k = table_segment(xs, x).ok_or(Error::Domain {
                    what: "table",
                    value: x,
                })?;
                Ok((ys[k + 1] - ys[k]) / (xs[k + 1] - xs[k]))
            }
            Self::Power { exponent } => {
                if x < 0.0 || (x == 0.0 && *exponent < 1.0) || x.is_nan() {
                    return Err(Error::Domain {
                        what: "power derivative",
                        value: x,
                    });
                }
                Ok(exponent * x.powf(exponent - 1.0))
            }
            Self::Identity => Ok(1.0),
        }
    }
}

/// Index `k` of the segment `[xs[k], xs[k+1]]` holding `x`.
fn table_segment(xs: &[f64], x: f64) -> Option<usize> {
    let n = xs.len();
    if !(x >= xs[0] && x <= xs[n - 1]) {
        return None;
    }
    let k = xs.partition_point(|&b| b <= x);
    Some(k.saturating_sub(1).min(n - 2))
}

/// Solve `nl(u) = target` for `u` in `[lo, hi]` by bisection.
pub fn invert_nonlinearity_numeric(
    nl: &StaticNonlinearity,
    target: f64,
    lo: f64,
    hi: f64,
    settings: &NumericsSettings,
) -> Result<f64> {
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidBracket { lo, hi });
    }
    let (f_lo, f_hi) = (nl.eval(lo)?, nl.eval(hi)?);
    let (min, max) = (f_lo.min(f_hi), f_lo.max(f_hi));
    if !(target >= min && target <= max) {
        return Err(Error::UnreachableDose {
            target,
            lo: min,
            hi: max,
        });
    }
    let increasing = f_hi >= f_lo;
    let (mut a, mut b) = (lo, hi);
    let mut best = if (f_lo - target).abs() <= (f_hi - target).abs() {
        lo
    } else {
        hi
    };
    let mut best_err = (nl.eval(best)? - target).abs();
    while best_err > settings.inversion_tol {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        let fm = nl.eval(m)?;
        let err = (fm - target).abs();
        if err < best_err {
            best = m;
            best_err = err;
        }
        if (fm < target) == increasing {
            a = m;
        } else {
            b = m;
        }
    }
    Ok(best)
}

/// Linear plant with an optional input (Hammerstein) and output (Wiener)
/// static nonlinearity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantStructure {
    pub linear: PlantLTI,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_nl: Option<StaticNonlinearity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_nl: Option<StaticNonlinearity>,
}

impl PlantStructure {
    pub fn lti(linear: PlantLTI) -> Self {
        Self {
            linear,
            input_nl: None,
            output_nl: None,
        }
    }

    pub fn wiener(linear: PlantLTI, output_nl: StaticNonlinearity) -> Self {
        Self {
            linear,
            input_nl: None,
            output_nl: Some(output_nl),
        }
    }

    pub fn hammerstein(linear: PlantLTI, input_nl: StaticNonlinearity) -> Self {
        Self {
            linear,
            input_nl: Some(input_nl),
            output_nl: None,
        }
    }

    /// Measured output for a linear output value.
    pub fn measure(&self, y_bar: f64) -> Result<f64> {
        match &self.output_nl {
            Some(nl) => nl.eval(y_bar),
            None => Ok(y_bar),
        }
    }
}
