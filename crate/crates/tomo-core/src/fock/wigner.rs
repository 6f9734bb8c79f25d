//! Wigner-function evaluation on phase-space grids.
//!
//! The kernel is the Fock-basis Laguerre expansion with α = x/x0 + i·p/p0:
//! each matrix element ρ_{mn} contributes
//! (−1)^k·e^{−iφ(m−n)}·e^{−|α|²/2}·√(k!/(k+Δ)!)·|α|^Δ·L_k^Δ(|α|²)/π with
//! k = min(m,n), Δ = |m−n|, φ = arg α. Hermiticity pairs the (m,n) and
//! (n,m) terms into a real sum, which is what the production evaluator
//! computes; factorial ratios go through logs to avoid overflow.

use rayon::prelude::*;
use std::f64::consts::PI;

use super::{ln_factorial, DensityMatrix};
use crate::error::{Error, Result};

/// Tolerance on the Wigner lower bound −1/π for any physical state.
const MIN_VALUE_TOL: f64 = 1e-6;
/// Tolerance on the grid-integral normalization check.
const INTEGRAL_TOL: f64 = 2e-2;
/// Coverage at which the normalization check becomes meaningful.
const COVERAGE_HALF_WIDTH: f64 = 6.0;
const COVERAGE_MIN_POINTS: usize = 121;

/// Wigner function sampled on a rectangular phase-space grid.
///
/// Axes are dimensionless (x/x0 and p/p0); values are normalized so the
/// phase-space integral over physical x and p equals 1.
#[derive(Debug, Clone, PartialEq)]
pub struct WignerGrid {
    x_axis: Vec<f64>,
    p_axis: Vec<f64>,
    /// Row i, column j holds W(x_axis[i], p_axis[j]).
    values: Vec<Vec<f64>>,
}

impl WignerGrid {
    /// Validates axes (finite, strictly increasing), shape, the lower bound
    /// min ≥ −1/π − 1e-6, and — when the grid spans ±6 with ≥121 points per
    /// axis — the integral normalization within 2e-2.
    pub fn new(x_axis: Vec<f64>, p_axis: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        validate_axis("x", &x_axis)?;
        validate_axis("p", &p_axis)?;
        if values.len() != x_axis.len() || values.iter().any(|row| row.len() != p_axis.len()) {
            return Err(Error::dims("Wigner grid values do not match the axis lengths"));
        }
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::numeric("Wigner grid contains non-finite values"));
        }
        let grid = Self { x_axis, p_axis, values };
        let (min_value, _, _) = grid.minimum();
        if min_value < -1.0 / PI - MIN_VALUE_TOL {
            return Err(Error::numeric(format!(
                "Wigner grid violates the physical lower bound: min {min_value:.6} < -1/pi"
            )));
        }
        if grid.covers_normalization_domain() {
            let integral = grid.integral();
            if (integral - 1.0).abs() > INTEGRAL_TOL {
                return Err(Error::numeric(format!(
                    "Wigner grid integral {integral:.4} deviates from 1 beyond {INTEGRAL_TOL}"
                )));
            }
        }
        Ok(grid)
    }

    pub fn x_axis(&self) -> &[f64] {
        &self.x_axis
    }

    pub fn p_axis(&self) -> &[f64] {
        &self.p_axis
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[i][j]
    }

    fn covers_normalization_domain(&self) -> bool {
        let covers = |axis: &[f64]| {
            axis.len() >= COVERAGE_MIN_POINTS
                && axis[0] <= -COVERAGE_HALF_WIDTH + 1e-9
                && axis[axis.len() - 1] >= COVERAGE_HALF_WIDTH - 1e-9
        };
        covers(&self.x_axis) && covers(&self.p_axis)
    }

    /// Riemann-sum phase-space integral, normalized to physical x·p measure:
    /// with dimensionless axes the element of area is dx̃·dp̃/2 because
    /// x0·p0 = ħ/2 while the kernel normalizes ∫W dx dp over x·p = 1.
    pub fn integral(&self) -> f64 {
        let wx = trapezoid_weights(&self.x_axis);
        let wp = trapezoid_weights(&self.p_axis);
        let mut total = 0.0;
        for (i, row) in self.values.iter().enumerate() {
            let mut row_sum = 0.0;
            for (j, v) in row.iter().enumerate() {
                row_sum += v * wp[j];
            }
            total += row_sum * wx[i];
        }
        total / 2.0
    }

    /// Smallest sampled value and its (x̃, p̃) location.
    pub fn minimum(&self) -> (f64, f64, f64) {
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for (i, row) in self.values.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v < best.0 {
                    best = (v, self.x_axis[i], self.p_axis[j]);
                }
            }
        }
        best
    }
}

fn validate_axis(name: &str, axis: &[f64]) -> Result<()> {
    if axis.len() < 2 {
        return Err(Error::invalid(format!("{name} axis needs at least two points")));
    }
    if axis.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("{name} axis contains non-finite values")));
    }
    if axis.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid(format!("{name} axis must be strictly increasing")));
    }
    Ok(())
}

fn trapezoid_weights(axis: &[f64]) -> Vec<f64> {
    let n = axis.len();
    let mut w = vec![0.0; n];
    for i in 0..n - 1 {
        let h = 0.5 * (axis[i + 1] - axis[i]);
        w[i] += h;
        w[i + 1] += h;
    }
    w
}

/// Minimum of a Wigner grid together with a flag telling whether the sampled
/// minimum is actually negative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Negativity {
    /// Smallest sampled Wigner value (reported as-is, whatever its sign).
    pub value: f64,
    /// False when the grid shows no negativity (minimum ≥ 0).
    pub is_negative: bool,
    /// Location (x/x0, p/p0) of the sampled minimum.
    pub at: (f64, f64),
}

/// Wigner negativity γ = min over the grid, with a no-negativity flag for
/// states whose sampled minimum is positive.
pub fn negativity(w: &WignerGrid) -> Negativity {
    let (value, x, p) = w.minimum();
    Negativity { value, is_negative: value < 0.0, at: (x, p) }
}

/// Per-state scratch shared by grid and pointwise evaluation.
struct WignerKernel {
    dim: usize,
    /// Upper-triangle coefficients: for Δ = 0 the real diagonal; for Δ ≥ 1
    /// the elements ρ_{k,k+Δ} paired with their conjugates.
    diag: Vec<f64>,
    upper: Vec<Vec<num_complex::Complex64>>,
    /// ½·(ln k! − ln (k+Δ)!) indexed [Δ][k].
    half_log_ratio: Vec<Vec<f64>>,
}

impl WignerKernel {
    fn new(rho: &DensityMatrix) -> Self {
        let dim = rho.dim();
        let m = rho.matrix();
        let diag = (0..dim).map(|k| m[(k, k)].re).collect();
        let mut upper = Vec::with_capacity(dim);
        let mut half_log_ratio = Vec::with_capacity(dim);
        for delta in 0..dim {
            if delta == 0 {
                upper.push(Vec::new());
                half_log_ratio.push(Vec::new());
                continue;
            }
            let span = dim - delta;
            upper.push((0..span).map(|k| m[(k, k + delta)]).collect());
            half_log_ratio
                .push((0..span).map(|k| 0.5 * (ln_factorial(k) - ln_factorial(k + delta))).collect());
        }
        Self { dim, diag, upper, half_log_ratio }
    }

    /// W at one phase-space point (x̃ = x/x0, p̃ = p/p0).
    fn evaluate(&self, x: f64, p: f64) -> f64 {
        let s = x * x + p * p;
        let phi = p.atan2(x);
        let ln_alpha = if s > 0.0 { 0.5 * s.ln() } else { f64::NEG_INFINITY };
        let mut total = 0.0;

        // Δ = 0: Σ_k ρ_kk (−1)^k L_k(s).
        let mut lag_prev = 0.0;
        let mut lag = 1.0; // L_0
        for (k, &weight) in self.diag.iter().enumerate() {
            if k > 0 {
                let kf = k as f64;
                let next = ((2.0 * kf - 1.0 - s) * lag - (kf - 1.0) * lag_prev) / kf;
                lag_prev = lag;
                lag = next;
            }
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            total += weight * sign * lag;
        }

        // Δ ≥ 1: Σ_k (−1)^k · 2Re(ρ_{k,k+Δ} e^{iφΔ}) · e^{Δ·ln|α| + ½ln(k!/(k+Δ)!)} · L_k^Δ(s).
        for delta in 1..self.dim {
            let coeffs = &self.upper[delta];
            if coeffs.iter().all(|c| c.norm_sqr() == 0.0) {
                continue;
            }
            if ln_alpha == f64::NEG_INFINITY {
                continue; // |α|^Δ = 0 at the origin for Δ ≥ 1
            }
            let df = delta as f64;
            let (sin_phi, cos_phi) = (df * phi).sin_cos();
            let mut lag_prev = 0.0;
            let mut lag = 1.0; // L_0^Δ
            for (k, c) in coeffs.iter().enumerate() {
                if k > 0 {
                    let kf = k as f64;
                    let next = ((2.0 * kf - 1.0 + df - s) * lag - (kf - 1.0 + df) * lag_prev) / kf;
                    lag_prev = lag;
                    lag = next;
                }
                let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                let two_re = 2.0 * (c.re * cos_phi - c.im * sin_phi);
                let magnitude = (df * ln_alpha + self.half_log_ratio[delta][k]).exp();
                total += sign * two_re * magnitude * lag;
            }
        }

        total * (-0.5 * s).exp() / PI
    }
}

/// Wigner function of `rho` on the Cartesian product of the two dimensionless
/// axes (x/x0 by p/p0).
pub fn wigner(rho: &DensityMatrix, x_axis: &[f64], p_axis: &[f64]) -> Result<WignerGrid> {
    validate_axis("x", x_axis)?;
    validate_axis("p", p_axis)?;
    let kernel = WignerKernel::new(rho);
    let values: Vec<Vec<f64>> = x_axis
        .par_iter()
        .map(|&x| p_axis.iter().map(|&p| kernel.evaluate(x, p)).collect())
        .collect();
    WignerGrid::new(x_axis.to_vec(), p_axis.to_vec(), values)
}

/// Wigner function at a single dimensionless phase-space point.
pub fn wigner_at(rho: &DensityMatrix, x: f64, p: f64) -> f64 {
    WignerKernel::new(rho).evaluate(x, p)
}

/// Uniform axis with `points` samples spanning [−half_width, half_width].
pub fn symmetric_axis(half_width: f64, points: usize) -> Vec<f64> {
    let step = 2.0 * half_width / (points - 1) as f64;
    (0..points).map(|i| -half_width + step * i as f64).collect()
}
