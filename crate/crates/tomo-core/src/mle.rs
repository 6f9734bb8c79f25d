//! Iterative maximum-likelihood reconstruction of a density matrix from
//! binned quadrature data.
//!
//! Each data record is a (θ, u, weight) triple. The measurement operator for
//! a bin is the rank-1 projector onto the rotated-quadrature eigenstate at
//! the bin center, and the reconstruction iterates ρ ← RρR (renormalized),
//! where R(ρ) = Σ_j (f_j / P_j) Π_j weights each projector by the ratio of
//! observed to predicted probability. The iteration starts from the
//! maximally uninformative rank-1 matrix of ones and stops when the
//! trace-distance step falls below tolerance.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{
    overlap_vector, DensityMatrix, OscillatorSpec, QuadraturePoint, QuadratureRecord,
};
use crate::ioutil::atomic_write;
use crate::linalg::{hermitize, C64, CMat, CVec};

/// Floor applied to predicted probabilities used as divisors.
const PROBABILITY_FLOOR: f64 = 1e-12;

/// A set of binned quadrature measurements with a common bin width.
///
/// Records are stored in a canonical order (sorted by angle, then bin
/// center, then weight), so reconstructions are bit-identical regardless of
/// the order records arrived in.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureDataset {
    records: Vec<QuadratureRecord>,
    bin_width: f64,
}

impl QuadratureDataset {
    pub fn from_records(records: Vec<QuadratureRecord>, bin_width: f64) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::degenerate("quadrature dataset has no records"));
        }
        if !(bin_width.is_finite() && bin_width > 0.0) {
            return Err(Error::invalid(format!("bin width must be positive, got {bin_width}")));
        }
        if bin_width > 0.1 {
            log::warn!(
                "quadrature bin width {bin_width:.3} exceeds 0.1; reconstruction tolerances \
                 assume finer binning"
            );
        }
        let total: f64 = records.iter().map(|r| r.weight).sum();
        if !(total > 0.0) {
            return Err(Error::degenerate("quadrature dataset has zero total weight"));
        }
        let mut records = records;
        records.sort_by(|a, b| {
            a.theta
                .total_cmp(&b.theta)
                .then(a.u.total_cmp(&b.u))
                .then(a.weight.total_cmp(&b.weight))
        });
        let dataset = Self { records, bin_width };
        if dataset.distinct_angles() < 2 {
            log::warn!(
                "quadrature dataset covers a single angle; off-diagonal elements are not \
                 constrained"
            );
        }
        Ok(dataset)
    }

    /// Builds a dataset from per-angle histograms produced by the imaging
    /// chain. All histograms must share one uniform u-grid spacing.
    pub fn from_histograms(histograms: &[crate::imaging::QuadratureHistogram]) -> Result<Self> {
        let mut records = Vec::new();
        let mut bin_width: Option<f64> = None;
        for hist in histograms {
            if hist.u.len() < 2 {
                return Err(Error::invalid("histogram needs at least two bins"));
            }
            let step = hist.u[1] - hist.u[0];
            if hist.u.windows(2).any(|w| ((w[1] - w[0]) - step).abs() > 1e-9 * step.abs()) {
                return Err(Error::invalid("histogram u-grid is not uniform"));
            }
            match bin_width {
                None => bin_width = Some(step),
                Some(existing) if (existing - step).abs() > 1e-9 * existing.abs() => {
                    return Err(Error::invalid(
                        "histograms disagree on the u-grid spacing",
                    ));
                }
                Some(_) => {}
            }
            records.extend(hist.records()?);
        }
        let bin_width = bin_width.ok_or_else(|| Error::degenerate("no histograms given"))?;
        Self::from_records(records, bin_width)
    }

    /// Reads `theta_rad,u,weight` CSV and infers the bin width from the
    /// u-grid of the first angle (which must be uniform).
    pub fn from_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let records = crate::imaging::read_quadrature_csv(path)?;
        let first_theta = records
            .iter()
            .map(|r| r.theta)
            .min_by(f64::total_cmp)
            .expect("reader rejects empty files");
        let mut u_values: Vec<f64> = records
            .iter()
            .filter(|r| r.theta == first_theta)
            .map(|r| r.u)
            .collect();
        u_values.sort_by(f64::total_cmp);
        u_values.dedup();
        if u_values.len() < 2 {
            return Err(Error::parse(path, 0, "cannot infer bin width from a single u value"));
        }
        let step = u_values[1] - u_values[0];
        if u_values.windows(2).any(|w| ((w[1] - w[0]) - step).abs() > 1e-6 * step) {
            return Err(Error::parse(
                path,
                0,
                "u values are not uniformly spaced; bin width is ambiguous",
            ));
        }
        Self::from_records(records, step)
    }

    pub fn records(&self) -> &[QuadratureRecord] {
        &self.records
    }

    pub fn bin_width(&self) -> f64 {
        self.bin_width
    }

    pub fn distinct_angles(&self) -> usize {
        // Records are sorted by angle, so distinct values are adjacent.
        1 + self
            .records
            .windows(2)
            .filter(|w| w[0].theta != w[1].theta)
            .count()
    }
}

/// Reconstruction settings: basis size, stopping tolerance (trace distance
/// per step), and the iteration cap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MleConfig {
    n_max: usize,
    tolerance: f64,
    max_iterations: u32,
}

impl MleConfig {
    pub const DEFAULT_TOLERANCE: f64 = 1e-4;
    pub const DEFAULT_MAX_ITERATIONS: u32 = 500;

    pub fn new(n_max: usize) -> Self {
        Self {
            n_max,
            tolerance: Self::DEFAULT_TOLERANCE,
            max_iterations: Self::DEFAULT_MAX_ITERATIONS,
        }
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Result<Self> {
        if !(tolerance.is_finite() && tolerance > 0.0) {
            return Err(Error::config("mle.tolerance", format!("must be positive, got {tolerance}")));
        }
        self.tolerance = tolerance;
        Ok(self)
    }

    pub fn with_max_iterations(mut self, max_iterations: u32) -> Result<Self> {
        if max_iterations < 1 {
            return Err(Error::config("mle.max_iterations", "must be at least 1"));
        }
        self.max_iterations = max_iterations;
        Ok(self)
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    pub fn max_iterations(&self) -> u32 {
        self.max_iterations
    }
}

/// Outcome of a reconstruction run.
#[derive(Debug, Clone, PartialEq)]
pub struct MleResult {
    pub rho: DensityMatrix,
    pub iterations_used: u32,
    pub final_step: f64,
    /// Log-likelihood of each iterate, starting with the initial state.
    pub log_likelihood_trace: Vec<f64>,
    pub converged: bool,
}

/// Rank-1 measurement operator for one quadrature bin, in u-units:
/// Π_mn = ⟨m|u,θ⟩⟨u,θ|n⟩, so Tr(ρΠ) is the probability density per unit u.
pub fn projector(q: &QuadraturePoint, n_max: usize, spec: &OscillatorSpec) -> Result<CMat> {
    if n_max > spec.n_max() {
        return Err(Error::dims(format!(
            "projector basis n_max {} exceeds the oscillator basis {}",
            n_max,
            spec.n_max()
        )));
    }
    let b = overlap_vector(n_max + 1, q.u(), q.theta());
    Ok(&b * b.adjoint())
}

/// Probability density (per unit u) of finding the quadrature value q.u at
/// angle q.theta: Tr(ρ Π) = ⟨u,θ|ρ|u,θ⟩.
pub fn predicted_probability(rho: &DensityMatrix, q: &QuadraturePoint) -> f64 {
    let b = overlap_vector(rho.dim(), q.u(), q.theta());
    quadratic_form(rho.matrix(), &b)
}

fn quadratic_form(rho: &CMat, b: &CVec) -> f64 {
    (b.adjoint() * rho * b)[(0, 0)].re
}

/// Dimensionless overlap vectors for every record, as the columns of a
/// dim × J matrix.
fn overlap_matrix(dim: usize, records: &[QuadratureRecord]) -> CMat {
    let mut basis = CMat::zeros(dim, records.len());
    for (j, record) in records.iter().enumerate() {
        basis.set_column(j, &overlap_vector(dim, record.u, record.theta));
    }
    basis
}

/// Predicted probability densities for all records at once: the diagonal of
/// B†ρB.
fn predicted_all(rho: &CMat, basis: &CMat) -> Vec<f64> {
    let projected = rho * basis;
    (0..basis.ncols())
        .map(|j| {
            basis
                .column(j)
                .iter()
                .zip(projected.column(j).iter())
                .map(|(b, p)| (b.conj() * p).re)
                .sum()
        })
        .collect()
}

/// Predicted densities for ρ = G†G held in factored form: P_j = ‖G·b_j‖²,
/// which is nonnegative by construction even in floating point.
fn predicted_from_factor(factor: &CMat, basis: &CMat) -> Vec<f64> {
    let projected = factor * basis;
    (0..basis.ncols()).map(|j| projected.column(j).norm_squared()).collect()
}

fn normalized_weights(records: &[QuadratureRecord]) -> Vec<f64> {
    let total: f64 = records.iter().map(|r| r.weight).sum();
    records.iter().map(|r| r.weight / total).collect()
}

fn r_operator_from_parts(basis: &CMat, weights: &[f64], predicted: &[f64]) -> Result<CMat> {
    if predicted.iter().all(|&p| p < PROBABILITY_FLOOR) {
        return Err(Error::degenerate(
            "every predicted probability is below the division floor; the model has no \
             support on the data",
        ));
    }
    let mut scaled = basis.clone();
    for (j, (&f, &p)) in weights.iter().zip(predicted).enumerate() {
        let ratio = f / p.max(PROBABILITY_FLOOR);
        scaled.column_mut(j).scale_mut(ratio);
    }
    let r = scaled * basis.adjoint();
    Ok(hermitize(&r))
}

/// The likelihood-gradient operator R(ρ) = Σ_j (f_j / P_j) Π_j with weights
/// normalized to unit sum.
pub fn r_operator(
    rho: &DensityMatrix,
    data: &QuadratureDataset,
    spec: &OscillatorSpec,
) -> Result<CMat> {
    if rho.dim() != spec.dim() {
        return Err(Error::dims(format!(
            "state dimension {} does not match the oscillator basis {}",
            rho.dim(),
            spec.dim()
        )));
    }
    let basis = overlap_matrix(rho.dim(), data.records());
    let weights = normalized_weights(data.records());
    let predicted = predicted_all(rho.matrix(), &basis);
    r_operator_from_parts(&basis, &weights, &predicted)
}

fn log_likelihood(weights: &[f64], predicted: &[f64]) -> f64 {
    weights
        .iter()
        .zip(predicted)
        .filter(|(&f, _)| f > 0.0)
        .map(|(&f, &p)| f * p.max(PROBABILITY_FLOOR).ln())
        .sum()
}

/// Runs the iterative reconstruction ρ ← RρR / Tr(RρR) from the matrix-of-
/// ones initial state until the trace-distance step drops below tolerance
/// or the iteration cap is reached. Failing to converge is reported through
/// the `converged` flag, not as an error.
pub fn reconstruct(
    data: &QuadratureDataset,
    cfg: &MleConfig,
    spec: &OscillatorSpec,
) -> Result<MleResult> {
    if cfg.n_max != spec.n_max() {
        return Err(Error::config(
            "mle.n_max",
            format!("is {} but the oscillator basis has n_max {}", cfg.n_max, spec.n_max()),
        ));
    }
    let dim = cfg.n_max + 1;
    let basis = overlap_matrix(dim, data.records());
    let weights = normalized_weights(data.records());

    // The iterate is kept in factored form ρ = G†G, which makes every
    // iterate exactly positive semidefinite: ρ ← RρR becomes G ← G·R, and
    // predicted probabilities are squared norms.
    //
    // The start is the matrix of ones plus a small identity admixture,
    // ρ⁰ ∝ J + δI. The pure ones matrix is rank-1 and the update ρ ← RρR
    // can never raise rank, so an exact-J start would confine the whole
    // iteration to pure states; the δ seed makes every rank reachable
    // deterministically while keeping all outcome probabilities positive.
    let mut factor = initial_factor(dim);
    let mut rho = hermitize(&(factor.adjoint() * &factor));
    let mut predicted = predicted_from_factor(&factor, &basis);
    let mut log_likelihood_trace = vec![log_likelihood(&weights, &predicted)];
    let mut iterations_used = 0;
    let mut final_step = f64::INFINITY;
    let mut converged = false;

    for _ in 0..cfg.max_iterations {
        let r = r_operator_from_parts(&basis, &weights, &predicted)?;
        factor = &factor * &r;
        let trace = factor.norm_squared();
        if !(trace.is_finite() && trace > 0.0) {
            return Err(Error::numeric(format!(
                "iterate lost its trace ({trace}); data may be inconsistent"
            )));
        }
        factor.scale_mut(trace.sqrt().recip());
        let next = hermitize(&(factor.adjoint() * &factor));
        iterations_used += 1;
        final_step = step_distance(&next, &rho)?;
        rho = next;
        predicted = predicted_from_factor(&factor, &basis);
        log_likelihood_trace.push(log_likelihood(&weights, &predicted));
        if final_step < cfg.tolerance {
            converged = true;
            break;
        }
    }

    let rho = DensityMatrix::new(rho)?;
    Ok(MleResult { rho, iterations_used, final_step, log_likelihood_trace, converged })
}

/// Trace distance between two raw iterates: half the sum of |eigenvalues|
/// of the difference.
fn step_distance(a: &CMat, b: &CMat) -> Result<f64> {
    let eig = crate::linalg::eigh(&(a - b))?;
    Ok(0.5 * eig.values.iter().map(|v| v.abs()).sum::<f64>())
}

/// Rank seed mixed into the matrix-of-ones initial state.
const INITIAL_RANK_SEED: f64 = 1e-6;

/// Symmetric square root of (J + δI)/(dim·(1+δ)): G = a·I + b·J with the
/// coefficients fixed by the two eigenvalues of J + δI.
fn initial_factor(dim: usize) -> CMat {
    let d = dim as f64;
    let delta = INITIAL_RANK_SEED;
    let norm = d * (1.0 + delta);
    let a = (delta / norm).sqrt();
    let b = (((d + delta) / norm).sqrt() - a) / d;
    CMat::from_fn(dim, dim, |i, j| C64::new(if i == j { a + b } else { b }, 0.0))
}

#[derive(Serialize, Deserialize)]
struct ResultFile {
    n_max: usize,
    rho_real: Vec<Vec<f64>>,
    rho_imag: Vec<Vec<f64>>,
    iterations_used: u32,
    converged: bool,
}

/// A reconstruction loaded back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct SavedReconstruction {
    pub n_max: usize,
    pub rho: DensityMatrix,
    pub iterations_used: u32,
    pub converged: bool,
}

/// Writes the reconstruction as JSON: basis size, real and imaginary parts
/// of ρ, iteration count, and the convergence flag.
pub fn save_result(result: &MleResult, path: impl AsRef<Path>) -> Result<()> {
    let dim = result.rho.dim();
    let matrix = result.rho.matrix();
    let part = |f: fn(&C64) -> f64| -> Vec<Vec<f64>> {
        (0..dim)
            .map(|i| (0..dim).map(|j| f(&matrix[(i, j)])).collect())
            .collect()
    };
    let file = ResultFile {
        n_max: dim - 1,
        rho_real: part(|z| z.re),
        rho_imag: part(|z| z.im),
        iterations_used: result.iterations_used,
        converged: result.converged,
    };
    let text = serde_json::to_string_pretty(&file)
        .map_err(|e| Error::numeric(format!("serializing reconstruction: {e}")))?;
    atomic_write(path.as_ref(), &text)
}

/// Reads a reconstruction written by [`save_result`].
pub fn load_result(path: impl AsRef<Path>) -> Result<SavedReconstruction> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: ResultFile =
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))?;
    let dim = file.n_max + 1;
    if file.rho_real.len() != dim
        || file.rho_imag.len() != dim
        || file.rho_real.iter().any(|r| r.len() != dim)
        || file.rho_imag.iter().any(|r| r.len() != dim)
    {
        return Err(Error::parse(path, 0, "matrix dimensions do not match n_max"));
    }
    let rho = DMatrix::from_fn(dim, dim, |i, j| C64::new(file.rho_real[i][j], file.rho_imag[i][j]));
    Ok(SavedReconstruction {
        n_max: file.n_max,
        rho: DensityMatrix::new(rho)?,
        iterations_used: file.iterations_used,
        converged: file.converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::RB87_MASS;
    use crate::dynamics::quadrature_distribution;
    use crate::fock::{displacement_matrix, fidelity, trace_distance, PureState};
    use crate::linalg::lowering;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use std::f64::consts::TAU;

    fn spec(n_max: usize) -> OscillatorSpec {
        OscillatorSpec::new(RB87_MASS, TAU * 9.05e3, n_max).unwrap()
    }

    /// Noiseless dataset: f(θ_i, u_j) = P(u_j, θ_i)·Δu on a regular grid.
    fn synthesize(
        rho: &DensityMatrix,
        spec: &OscillatorSpec,
        n_angles: usize,
        n_bins: usize,
        half_width: f64,
    ) -> QuadratureDataset {
        let du = 2.0 * half_width / (n_bins - 1) as f64;
        let u_grid: Vec<f64> = (0..n_bins).map(|j| -half_width + j as f64 * du).collect();
        let mut records = Vec::with_capacity(n_angles * n_bins);
        for i in 0..n_angles {
            let theta = TAU * i as f64 / n_angles as f64;
            let p = quadrature_distribution(rho, theta, &u_grid, spec).unwrap();
            for (j, &u) in u_grid.iter().enumerate() {
                records.push(QuadratureRecord::new(theta, u, p[j] * du).unwrap());
            }
        }
        QuadratureDataset::from_records(records, du).unwrap()
    }

    #[test]
    fn projector_is_rank_one() {
        let spec = spec(12);
        let q = QuadraturePoint::new(0.8, 1.3).unwrap();
        let pi = projector(&q, 12, &spec).unwrap();
        let trace: f64 = (0..13).map(|i| pi[(i, i)].re).sum();
        assert!(trace > 0.0);
        let square = &pi * &pi;
        for i in 0..13 {
            for j in 0..13 {
                assert_abs_diff_eq!(
                    square[(i, j)].re,
                    trace * pi[(i, j)].re,
                    epsilon = 1e-10
                );
                assert_abs_diff_eq!(
                    square[(i, j)].im,
                    trace * pi[(i, j)].im,
                    epsilon = 1e-10
                );
            }
        }
    }

    #[test]
    fn projectors_resolve_identity() {
        let spec = spec(10);
        let dim = 11;
        let du = 0.01;
        let n = (16.0 / du) as usize + 1;
        let mut sum = CMat::zeros(dim, dim);
        for j in 0..n {
            let u = -8.0 + j as f64 * du;
            let q = QuadraturePoint::new(0.7, u).unwrap();
            sum += projector(&q, 10, &spec).unwrap() * C64::new(du, 0.0);
        }
        for i in 0..dim {
            for j in 0..dim {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(sum[(i, j)].re, expect, epsilon = 1e-3);
                assert_abs_diff_eq!(sum[(i, j)].im, 0.0, epsilon = 1e-3);
            }
        }
    }

    #[test]
    fn predicted_probability_reference_points() {
        let rho1 = DensityMatrix::fock(1, 10).unwrap();
        let origin = QuadraturePoint::new(1.1, 0.0).unwrap();
        assert_abs_diff_eq!(predicted_probability(&rho1, &origin), 0.0, epsilon = 1e-14);
        let rho0 = DensityMatrix::fock(0, 10).unwrap();
        assert_relative_eq!(
            predicted_probability(&rho0, &origin),
            (TAU).sqrt().recip(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn predicted_probability_normalizes() {
        // Random-ish valid ρ on a smallish basis: integrates to 1 over u.
        let dim = 9;
        let m = CMat::from_fn(dim, dim, |i, j| {
            C64::new(((i * 13 + j * 7) % 17) as f64 - 8.0, ((i * 5 + j * 11) % 13) as f64 - 6.0)
        });
        let psd = &m * m.adjoint();
        let trace: f64 = (0..dim).map(|i| psd[(i, i)].re).sum();
        let rho = DensityMatrix::new(psd / C64::new(trace, 0.0)).unwrap();
        for theta in [0.0, 0.9, 2.4] {
            let du = 0.01;
            let n = (16.0 / du) as usize;
            let integral: f64 = (0..n)
                .map(|j| {
                    let u = -8.0 + (j as f64 + 0.5) * du;
                    predicted_probability(&rho, &QuadraturePoint::new(theta, u).unwrap()) * du
                })
                .sum();
            assert_abs_diff_eq!(integral, 1.0, epsilon = 1e-4);
        }
    }

    #[test]
    fn r_operator_special_cases() {
        let spec = spec(6);
        let rho = DensityMatrix::from_populations(&[0.5, 0.3, 0.2], 7).unwrap();
        // Single record: R ∝ Π.
        let record = QuadratureRecord::new(0.3, 0.9, 2.5).unwrap();
        let single =
            QuadratureDataset::from_records(vec![record], 0.05).unwrap();
        let r = r_operator(&rho, &single, &spec).unwrap();
        let q = QuadraturePoint::new(0.3, 0.9).unwrap();
        let pi = projector(&q, 6, &spec).unwrap();
        let ratio = r[(0, 0)].re / pi[(0, 0)].re;
        for i in 0..7 {
            for j in 0..7 {
                assert_relative_eq!(r[(i, j)].re, ratio * pi[(i, j)].re, epsilon = 1e-12);
                assert_relative_eq!(r[(i, j)].im, ratio * pi[(i, j)].im, epsilon = 1e-12);
            }
        }
        // Scaling every weight by a power of two leaves R bit-identical
        // (the normalization divides the factor back out exactly).
        let base = synthesize(&rho, &spec, 4, 161, 8.0);
        let rescale = |factor: f64| {
            let records: Vec<QuadratureRecord> = base
                .records()
                .iter()
                .map(|r| QuadratureRecord::new(r.theta, r.u, factor * r.weight).unwrap())
                .collect();
            QuadratureDataset::from_records(records, base.bin_width()).unwrap()
        };
        let r1 = r_operator(&rho, &base, &spec).unwrap();
        let r2 = r_operator(&rho, &rescale(16.0), &spec).unwrap();
        assert_eq!(r1, r2);
        // A non-dyadic factor agrees to rounding error.
        let r3 = r_operator(&rho, &rescale(17.25), &spec).unwrap();
        for (x, y) in r1.iter().zip(r3.iter()) {
            assert_abs_diff_eq!(x.re, y.re, epsilon = 1e-12);
            assert_abs_diff_eq!(x.im, y.im, epsilon = 1e-12);
        }
    }

    #[test]
    fn r_operator_fixed_point_is_identity() {
        let spec = spec(10);
        let rho = {
            let d = displacement_matrix(1.2e-7, &spec).unwrap();
            DensityMatrix::from_populations(&[0.6, 0.3, 0.1], 11)
                .unwrap()
                .conjugated_by(&d)
                .unwrap()
        };
        let data = synthesize(&rho, &spec, 8, 1601, 8.0);
        let r = r_operator(&rho, &data, &spec).unwrap();
        // Exact model data on a complete grid: R ≈ I.
        for i in 0..11 {
            for j in 0..11 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(r[(i, j)].re, expect, epsilon = 1e-3);
                assert_abs_diff_eq!(r[(i, j)].im, 0.0, epsilon = 1e-3);
            }
        }
        // And one full iteration moves ρ by almost nothing.
        let next = hermitize(&(&r * rho.matrix() * &r));
        let trace: f64 = (0..11).map(|i| next[(i, i)].re).sum();
        let next = DensityMatrix::new(next / C64::new(trace, 0.0)).unwrap();
        let step = trace_distance(&next, &rho).unwrap();
        assert!(step < 1e-6, "fixed-point step {step}");
    }

    #[test]
    fn reconstructs_first_excited_state() {
        let spec = spec(10);
        let truth = DensityMatrix::fock(1, 11).unwrap();
        let data = synthesize(&truth, &spec, 64, 201, 8.0);
        // The iteration slows near the optimum (the distribution's exact
        // zeros are approached sublinearly), so a tighter step tolerance is
        // needed to certify 0.999; the default 1e-4 stop reaches ≈0.998.
        let cfg = MleConfig::new(10).with_tolerance(1e-6).unwrap();
        let result = reconstruct(&data, &cfg, &spec).unwrap();
        let f = fidelity(&result.rho, &truth).unwrap();
        assert!(f >= 0.999, "fidelity {f}");
        assert!(result.converged);
        // Likelihood never decreases.
        for pair in result.log_likelihood_trace.windows(2) {
            assert!(pair[1] >= pair[0] - 1e-9, "likelihood dropped: {} -> {}", pair[0], pair[1]);
        }
    }

    #[test]
    fn reconstructs_displaced_mixture_populations() {
        let spec = spec(12);
        let d = displacement_matrix(1.05e-7, &spec).unwrap();
        let populations = [0.26, 0.651, 0.089];
        let truth = DensityMatrix::from_populations(&populations, 13)
            .unwrap()
            .conjugated_by(&d)
            .unwrap();
        let data = synthesize(&truth, &spec, 16, 201, 8.0);
        let cfg = MleConfig::new(12);
        let result = reconstruct(&data, &cfg, &spec).unwrap();
        // Displace back and compare the leading diagonal entries.
        let back = result.rho.conjugated_by(&d.adjoint()).unwrap();
        for (n, &p) in populations.iter().enumerate() {
            assert_abs_diff_eq!(back.population(n), p, epsilon = 0.02);
        }
    }

    #[test]
    fn fine_binning_recovers_coherences_beyond_angle_count() {
        // With N angles, a coherence of order Δ aliases in its angular phase
        // factor e^{iΔθ} with order Δ − N. Counting angular harmonics alone
        // would therefore cap reliable recovery at Δ ≤ N/2. That bound is a
        // worst case, though: the aliased coherence classes ride on products
        // φ_m(u)·φ_{m+Δ}(u) that are linearly independent in u, so finely
        // binned noiseless marginals still determine the coherence uniquely
        // and the likelihood optimum sits at the true state.
        let spec = spec(8);
        let mk_cat = |n: usize| {
            let mut amps = CVec::zeros(9);
            amps[0] = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
            amps[n] = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
            PureState::new(amps).unwrap().density()
        };
        let cfg = MleConfig::new(8);
        // Δ = 4: within the angular-harmonic budget of 8 angles.
        let truth4 = mk_cat(4);
        let data4 = synthesize(&truth4, &spec, 8, 201, 8.0);
        let rho4 = reconstruct(&data4, &cfg, &spec).unwrap().rho;
        assert_abs_diff_eq!(rho4.matrix()[(0, 4)].re, 0.5, epsilon = 0.05);
        // Δ = 5: past the angular budget, yet the u-profiles disambiguate it.
        let truth5 = mk_cat(5);
        let data5 = synthesize(&truth5, &spec, 8, 201, 8.0);
        let rho5 = reconstruct(&data5, &cfg, &spec).unwrap().rho;
        assert_abs_diff_eq!(rho5.matrix()[(0, 5)].norm(), 0.5, epsilon = 0.05);
        assert_abs_diff_eq!(rho5.population(0), 0.5, epsilon = 0.05);
        assert_abs_diff_eq!(rho5.population(5), 0.5, epsilon = 0.05);
    }

    #[test]
    fn record_order_does_not_matter() {
        let spec = spec(6);
        let truth = DensityMatrix::from_populations(&[0.5, 0.35, 0.15], 7).unwrap();
        let data = synthesize(&truth, &spec, 6, 101, 7.0);
        let mut shuffled_records = data.records().to_vec();
        // Deterministic scramble.
        for i in (1..shuffled_records.len()).rev() {
            shuffled_records.swap(i, (i * 2654435761) % (i + 1));
        }
        let shuffled =
            QuadratureDataset::from_records(shuffled_records, data.bin_width()).unwrap();
        let cfg = MleConfig::new(6);
        let a = reconstruct(&data, &cfg, &spec).unwrap();
        let b = reconstruct(&shuffled, &cfg, &spec).unwrap();
        assert_eq!(a.rho.matrix(), b.rho.matrix());
        assert_eq!(a.iterations_used, b.iterations_used);
    }

    #[test]
    fn angle_shift_covariance() {
        let spec = spec(8);
        let d = displacement_matrix(9.0e-8, &spec).unwrap();
        let truth = DensityMatrix::from_populations(&[0.6, 0.4], 9)
            .unwrap()
            .conjugated_by(&d)
            .unwrap();
        let delta = 0.37;
        // Fixed iteration count, deep enough that both runs sit within
        // ~1e-7 of the shared optimum (the start is not phase-covariant, so
        // the property only emerges at convergence).
        let cfg =
            MleConfig::new(8).with_tolerance(1e-14).unwrap().with_max_iterations(2000).unwrap();
        let base = synthesize(&truth, &spec, 12, 161, 8.0);
        let shifted_records: Vec<QuadratureRecord> = base
            .records()
            .iter()
            .map(|r| {
                QuadratureRecord::new((r.theta + delta).rem_euclid(TAU), r.u, r.weight).unwrap()
            })
            .collect();
        let shifted = QuadratureDataset::from_records(shifted_records, base.bin_width()).unwrap();
        let rho_base = reconstruct(&base, &cfg, &spec).unwrap().rho;
        let rho_shifted = reconstruct(&shifted, &cfg, &spec).unwrap().rho;
        // Shifting every angle by δ conjugates the result by e^{−iδn̂}.
        let dim = 9;
        let phases = CMat::from_fn(dim, dim, |i, j| {
            if i == j {
                C64::from_polar(1.0, -delta * i as f64)
            } else {
                C64::new(0.0, 0.0)
            }
        });
        let expected = rho_base.conjugated_by(&phases).unwrap();
        let dist = trace_distance(&rho_shifted, &expected).unwrap();
        assert!(dist < 1e-6, "covariance violated: trace distance {dist}");
    }

    #[test]
    fn degenerate_model_support_is_an_error() {
        let spec = spec(4);
        // Data far outside anything the basis supports: u = 40.
        let records =
            vec![QuadratureRecord::new(0.0, 40.0, 1.0).unwrap()];
        let data = QuadratureDataset::from_records(records, 0.05).unwrap();
        let rho = DensityMatrix::fock(0, 5).unwrap();
        assert!(matches!(
            r_operator(&rho, &data, &spec),
            Err(Error::DegenerateData(_))
        ));
    }

    #[test]
    fn nonconvergence_is_flagged_not_fatal() {
        let spec = spec(6);
        let truth = {
            let d = displacement_matrix(1.0e-7, &spec).unwrap();
            DensityMatrix::from_populations(&[0.5, 0.3, 0.2], 7)
                .unwrap()
                .conjugated_by(&d)
                .unwrap()
        };
        let data = synthesize(&truth, &spec, 8, 161, 8.0);
        let cfg = MleConfig::new(6).with_max_iterations(2).unwrap();
        let result = reconstruct(&data, &cfg, &spec).unwrap();
        assert!(!result.converged);
        assert_eq!(result.iterations_used, 2);
        assert!(result.final_step.is_finite());
    }

    #[test]
    fn result_json_round_trip() {
        let spec = spec(5);
        let truth = {
            let a = lowering(6);
            let gen_mat = (&a.adjoint() - &a) * C64::new(0.4, 0.0);
            let d = crate::linalg::expm_antihermitian(&gen_mat).unwrap();
            DensityMatrix::from_populations(&[0.7, 0.3], 6).unwrap().conjugated_by(&d).unwrap()
        };
        let data = synthesize(&truth, &spec, 6, 121, 7.0);
        let cfg = MleConfig::new(5);
        let result = reconstruct(&data, &cfg, &spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rho.json");
        save_result(&result, &path).unwrap();
        let loaded = load_result(&path).unwrap();
        assert_eq!(loaded.n_max, 5);
        for i in 0..6 {
            for j in 0..6 {
                let a = loaded.rho.matrix()[(i, j)];
                let b = result.rho.matrix()[(i, j)];
                assert_eq!(a, b, "element ({i},{j}): loaded {a:?} vs original {b:?}");
            }
        }
        assert_eq!(loaded.iterations_used, result.iterations_used);
        assert_eq!(loaded.converged, result.converged);
    }

    #[test]
    fn dataset_csv_round_trip_infers_bin_width() {
        let spec = spec(4);
        let truth = DensityMatrix::fock(0, 5).unwrap();
        let data = synthesize(&truth, &spec, 3, 41, 5.0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        crate::imaging::write_quadrature_csv(data.records(), &path).unwrap();
        let loaded = QuadratureDataset::from_csv(&path).unwrap();
        assert_eq!(loaded.records(), data.records());
        assert_relative_eq!(loaded.bin_width(), data.bin_width(), max_relative = 1e-12);
        assert_eq!(loaded.distinct_angles(), 3);
    }
}
