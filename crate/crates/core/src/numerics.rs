//! Small-dimension numerical kernel.
//!
//! Everything here works on 3×3 matrices, which is the only plant order the
//! crate supports. The routines are pure functions; tolerances live in a
//! single [`NumericsSettings`] record so that they can be tightened in one
//! place.

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type SmallMatrix = Matrix3<f64>;
pub type SmallVector = Vector3<f64>;

/// Tolerances shared by every numerical routine in the crate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NumericsSettings {
    /// `mu(z)` refuses arguments with `|z|` below this value.
    pub mu_singularity_eps: f64,
    /// Divided-difference points closer than `confluence_rel * max|z|` are
    /// treated as coincident.
    pub confluence_rel: f64,
    /// Number of grid intervals used to bracket roots on `(0, T)`.
    pub root_grid: usize,
    /// Bisection stops once the bracket is narrower than `root_rel_tol * T`.
    pub root_rel_tol: f64,
    /// Grid refinement factor applied when no extremum is bracketed.
    pub root_retry_factor: usize,
    /// Largest accepted 1-norm condition estimate in [`solve_linear`].
    pub condition_cap: f64,
    /// Relative residual accepted by [`solve_linear`].
    pub solve_rel_residual: f64,
    /// Relative separation required between plant rate constants.
    pub distinct_rel: f64,
    /// Absolute tolerance on `|phi(u) - target|` for numeric inversion.
    pub inversion_tol: f64,
}

impl Default for NumericsSettings {
    fn default() -> Self {
        Self {
            mu_singularity_eps: 1e-12,
            confluence_rel: 1e-6,
            root_grid: 2048,
            root_rel_tol: 1e-10,
            root_retry_factor: 16,
            condition_cap: 1e12,
            solve_rel_residual: 1e-10,
            distinct_rel: 1e-9,
            inversion_tol: 1e-12,
        }
    }
}

fn ensure_finite_matrix(m: &SmallMatrix) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite("matrix entry"))
    }
}

fn one_norm(m: &SmallMatrix) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

// Padé(13) numerator/denominator coefficients.
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA13: f64 = 5.371920351148152;

/// Matrix exponential `e^{M t}` by scaling and squaring with a degree-13
/// Padé approximant.
pub fn mat_exp(m: &SmallMatrix, t: f64) -> Result<SmallMatrix> {
    if !t.is_finite() {
        return Err(Error::NonFinite("time"));
    }
    ensure_finite_matrix(m)?;
    if t == 0.0 {
        return Ok(SmallMatrix::identity());
    }
    let a = m * t;
    let norm = one_norm(&a);
    let squarings = if norm > THETA13 {
        (norm / THETA13).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let a = a * 2f64.powi(-squarings);

    let b = &PADE13;
    let id = SmallMatrix::identity();
    let a2 = a * a;
    let a4 = a2 * a2;
    let a6 = a4 * a2;
    let u = a * (a6 * (a6 * b[13] + a4 * b[11] + a2 * b[9]) + a6 * b[7] + a4 * b[5] + a2 * b[3] + id * b[1]);
    let v = a6 * (a6 * b[12] + a4 * b[10] + a2 * b[8]) + a6 * b[6] + a4 * b[4] + a2 * b[2] + id * b[0];

    let mut r = (v - u)
        .lu()
        .solve(&(v + u))
        .ok_or_else(|| Error::Internal("Padé denominator is singular".into()))?;
    for _ in 0..squarings {
        r = r * r;
    }
    if r.iter().all(|v| v.is_finite()) {
        Ok(r)
    } else {
        Err(Error::NonFinite("matrix exponential overflow"))
    }
}

/// `e^{M t}` from the spectral (Sylvester) expansion.
///
/// Only valid for matrices with three distinct real eigenvalues, which is
/// the case for every chain plant. Used to cross-check [`mat_exp`].
pub fn mat_exp_spectral(m: &SmallMatrix, t: f64, eigen: [f64; 3]) -> SmallMatrix {
    let id = SmallMatrix::identity();
    let mut out = SmallMatrix::zeros();
    for i in 0..3 {
        let mut proj = id;
        for j in 0..3 {
            if i != j {
                proj = proj * (m - id * eigen[j]) / (eigen[i] - eigen[j]);
            }
        }
        out += proj * (eigen[i] * t).exp();
    }
    out
}

/// `mu(z) = e^z / (1 - e^z)`.
pub fn mu(z: f64, settings: &NumericsSettings) -> Result<f64> {
    if !z.is_finite() {
        return Err(Error::NonFinite("mu argument"));
    }
    if z.abs() <= settings.mu_singularity_eps {
        return Err(Error::MuSingularity {
            z,
            eps: settings.mu_singularity_eps,
        });
    }
    Ok(mu_unchecked(z))
}

fn mu_unchecked(z: f64) -> f64 {
    if z < 0.0 {
        z.exp() / -z.exp_m1()
    } else {
        1.0 / (-z).exp_m1()
    }
}

/// First derivative of `mu`: `mu (1 + mu)`.
pub fn mu_derivative(z: f64, settings: &NumericsSettings) -> Result<f64> {
    let m = mu(z, settings)?;
    Ok(m * (1.0 + m))
}

fn mu_second_derivative(z: f64, settings: &NumericsSettings) -> Result<f64> {
    let m = mu(z, settings)?;
    Ok(m * (1.0 + m) * (1.0 + 2.0 * m))
}

fn coincident(a: f64, b: f64, scale: f64, settings: &NumericsSettings) -> bool {
    let sep = settings.confluence_rel * scale;
    (a - b).abs() <= sep || a == b
}

/// Divided difference `f[z_0, ..., z_k]` by the recursive definition.
pub fn divided_difference<F>(f: F, points: &[f64], settings: &NumericsSettings) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    if points.is_empty() {
        return Err(Error::Validation("divided difference needs at least one point".into()));
    }
    if points.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("divided difference point"));
    }
    let scale = points.iter().fold(0.0f64, |m, p| m.max(p.abs()));
    for (i, &a) in points.iter().enumerate() {
        for &b in &points[i + 1..] {
            if coincident(a, b, scale, settings) {
                return Err(Error::DegeneratePoints { a, b });
            }
        }
    }
    // Newton table, updated in place.
    let mut table: Vec<f64> = points.iter().map(|&p| f(p)).collect();
    for level in 1..points.len() {
        for i in (level..points.len()).rev() {
            table[i] = (table[i] - table[i - 1]) / (points[i] - points[i - level]);
        }
    }
    Ok(table[points.len() - 1])
}

/// Divided difference of `mu` over up to three points, falling back to the
/// confluent (derivative) form when points nearly coincide.
pub fn mu_divided_difference(points: &[f64], settings: &NumericsSettings) -> Result<f64> {
    let scale = points.iter().fold(0.0f64, |m, p| m.max(p.abs()));
    let close = |a: f64, b: f64| coincident(a, b, scale, settings);
    match *points {
        [z] => mu(z, settings),
        [z0, z1] => {
            if close(z0, z1) {
                mu_derivative(0.5 * (z0 + z1), settings)
            } else {
                Ok((mu(z1, settings)? - mu(z0, settings)?) / (z1 - z0))
            }
        }
        [z0, z1, z2] => {
            let mut z = [z0, z1, z2];
            z.sort_by(f64::total_cmp);
            let (c01, c12) = (close(z[0], z[1]), close(z[1], z[2]));
            match (c01, c12) {
                (false, false) => {
                    let d01 = mu_divided_difference(&z[0..2], settings)?;
                    let d12 = mu_divided_difference(&z[1..3], settings)?;
                    Ok((d12 - d01) / (z[2] - z[0]))
                }
                (true, true) => Ok(0.5 * mu_second_derivative(z[1], settings)?),
                // f[a, b, b] = (f'(b) - f[a, b]) / (b - a)
                (false, true) => {
                    let d = mu_divided_difference(&z[0..2], settings)?;
                    let fp = mu_derivative(0.5 * (z[1] + z[2]), settings)?;
                    Ok((fp - d) / (z[2] - z[0]))
                }
                // f[a, a, b] = (f[a, b] - f'(a)) / (b - a)
                (true, false) => {
                    let d = mu_divided_difference(&z[1..3], settings)?;
                    let fp = mu_derivative(0.5 * (z[0] + z[1]), settings)?;
                    Ok((d - fp) / (z[2] - z[0]))
                }
            }
        }
        _ => Err(Error::Validation(
            "mu divided differences support one to three points".into(),
        )),
    }
}

/// Roots found by [`find_roots`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RootSet {
    /// Strictly increasing.
    pub roots: Vec<f64>,
    /// Width of the final bisection interval.
    pub bracket_width: f64,
    /// Largest `|f(r)|` over the returned roots.
    pub max_residual: f64,
}

/// All sign-change roots of `f` on `[lo, hi]`.
///
/// The interval is split into `grid_n` uniform cells and every cell whose
/// endpoints differ in sign is bisected down to width `tol`. Roots where `f`
/// touches zero without changing sign are only found if they fall exactly on
/// a grid node.
pub fn find_roots<F>(f: F, lo: f64, hi: f64, grid_n: usize, tol: f64) -> Result<RootSet>
where
    F: Fn(f64) -> f64,
{
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidBracket { lo, hi });
    }
    if grid_n < 2 {
        return Err(Error::Validation("root grid needs at least 2 intervals".into()));
    }
    let h = (hi - lo) / grid_n as f64;
    let values: Vec<f64> = (0..=grid_n).map(|k| f(grid_node(lo, hi, h, k, grid_n))).collect();
    roots_from_grid(&f, lo, hi, &values, tol)
}

#[inline]
fn grid_node(lo: f64, hi: f64, h: f64, k: usize, n: usize) -> f64 {
    if k == n {
        hi
    } else {
        lo + h * k as f64
    }
}

/// Bracket and bisect roots given `f` already sampled on the uniform grid of
/// `values.len() - 1` cells over `[lo, hi]`.
pub(crate) fn roots_from_grid<F>(f: &F, lo: f64, hi: f64, values: &[f64], tol: f64) -> Result<RootSet>
where
    F: Fn(f64) -> f64,
{
    if !(tol > 0.0) {
        return Err(Error::Validation("root tolerance must be positive".into()));
    }
    let n = values.len() - 1;
    let h = (hi - lo) / n as f64;
    let mut roots: Vec<f64> = Vec::new();
    let mut width = 0.0f64;
    let mut residual = 0.0f64;
    let mut push = |r: f64, fr: f64, roots: &mut Vec<f64>| {
        if roots.last().is_none_or(|&last| r > last) {
            roots.push(r);
            residual = residual.max(fr.abs());
        }
    };
    for k in 0..n {
        let (x0, x1) = (grid_node(lo, hi, h, k, n), grid_node(lo, hi, h, k + 1, n));
        let (f0, f1) = (values[k], values[k + 1]);
        if f0 == 0.0 {
            push(x0, 0.0, &mut roots);
            continue;
        }
        if f1 == 0.0 || f0.signum() == f1.signum() || f0.is_nan() || f1.is_nan() {
            continue;
        }
        let (mut a, mut b, mut fa) = (x0, x1, f0);
        while b - a > tol {
            let m = 0.5 * (a + b);
            if m <= a || m >= b {
                break;
            }
            let fm = f(m);
            if fm == 0.0 {
                a = m;
                b = m;
                break;
            }
            if fm.signum() == fa.signum() {
                a = m;
                fa = fm;
            } else {
                b = m;
            }
        }
        width = width.max(b - a);
        let r = 0.5 * (a + b);
        push(r, f(r), &mut roots);
    }
    if values[n] == 0.0 {
        push(hi, 0.0, &mut roots);
    }
    Ok(RootSet {
        roots,
        bracket_width: width,
        max_residual: residual,
    })
}

/// Eigenvalues with multiplicity, sorted by decreasing modulus.
pub fn eigenvalues(m: &SmallMatrix) -> Vec<Complex64> {
    let mut ev: Vec<Complex64> = m.complex_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| b.norm().total_cmp(&a.norm()).then(b.re.total_cmp(&a.re)));
    ev
}

pub fn spectral_radius(eigen: &[Complex64]) -> f64 {
    eigen.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Solve `M x = b` by LU with partial pivoting, rejecting ill-conditioned
/// systems.
pub fn solve_linear(m: &SmallMatrix, b: &SmallVector, settings: &NumericsSettings) -> Result<SmallVector> {
    ensure_finite_matrix(m)?;
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("right-hand side"));
    }
    let lu = m.lu();
    let inverse = lu.try_inverse().ok_or(Error::SingularSystem {
        condition: f64::INFINITY,
    })?;
    let condition = one_norm(m) * one_norm(&inverse);
    if !condition.is_finite() || condition > settings.condition_cap {
        return Err(Error::SingularSystem { condition });
    }
    let x = m.lu().solve(b).ok_or(Error::SingularSystem { condition })?;
    let residual = (m * x - b).norm();
    if residual > settings.solve_rel_residual * b.norm().max(f64::MIN_POSITIVE) * condition.max(1.0) {
        return Err(Error::SingularSystem { condition });
    }
    Ok(x)
}
