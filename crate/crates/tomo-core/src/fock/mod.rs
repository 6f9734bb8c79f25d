//! Truncated-Fock-basis state algebra: oscillator units, states, operators,
//! overlaps, and state metrics.
//!
//! Everything here is dimension-checked and works in a basis truncated at a
//! maximum occupation `n_max`; operators are unitary on the retained subspace
//! up to truncation leakage, which is estimated and reported where it can
//! matter (large displacements).

mod wigner;

pub use wigner::{negativity, symmetric_axis, wigner, wigner_at, Negativity, WignerGrid};

use std::f64::consts::{PI, TAU};

use crate::constants::HBAR;
use crate::error::{Error, Result};
use crate::linalg::{self, eigh, expm_antihermitian, hermitize, hermiticity_defect, sqrt_psd, C64, CMat, CVec};

/// Trap parameters and basis truncation for one oscillator axis.
///
/// The characteristic scales are x0 = √(ħ/2mω) and p0 = √(mħω/2), so that
/// x = x0(a + a†) and p = i·p0(a† − a), and x0·p0 = ħ/2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OscillatorSpec {
    mass: f64,
    omega: f64,
    n_max: usize,
}

impl OscillatorSpec {
    pub fn new(mass: f64, omega: f64, n_max: usize) -> Result<Self> {
        if !(mass.is_finite() && mass > 0.0) {
            return Err(Error::invalid(format!("oscillator mass must be positive, got {mass}")));
        }
        if !(omega.is_finite() && omega > 0.0) {
            return Err(Error::invalid(format!(
                "trap angular frequency must be positive, got {omega}"
            )));
        }
        if n_max < 1 {
            return Err(Error::invalid("basis truncation n_max must be at least 1"));
        }
        Ok(Self { mass, omega, n_max })
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    /// Angular trap frequency ω in rad/s.
    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    /// Basis dimension n_max + 1.
    pub fn dim(&self) -> usize {
        self.n_max + 1
    }

    /// Characteristic length x0 = √(ħ/2mω) in meters.
    pub fn x0(&self) -> f64 {
        (HBAR / (2.0 * self.mass * self.omega)).sqrt()
    }

    /// Characteristic momentum p0 = √(mħω/2) in kg·m/s.
    pub fn p0(&self) -> f64 {
        (self.mass * HBAR * self.omega / 2.0).sqrt()
    }

    /// Same mass and truncation at a different trap frequency.
    pub fn with_omega(&self, omega: f64) -> Result<Self> {
        Self::new(self.mass, omega, self.n_max)
    }
}

/// Normalized pure state over the truncated Fock basis.
#[derive(Debug, Clone, PartialEq)]
pub struct PureState {
    amplitudes: CVec,
}

impl PureState {
    /// Wraps an amplitude vector, requiring unit L2 norm to 1e-12.
    pub fn new(amplitudes: CVec) -> Result<Self> {
        if amplitudes.is_empty() {
            return Err(Error::invalid("pure state needs at least one amplitude"));
        }
        let norm = amplitudes.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!(
                "pure state amplitudes must have unit norm, got {norm}"
            )));
        }
        Ok(Self { amplitudes })
    }

    /// Normalizes a nonzero amplitude vector and wraps it.
    pub fn normalized(amplitudes: CVec) -> Result<Self> {
        let norm = amplitudes.norm();
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::invalid("cannot normalize a zero or non-finite amplitude vector"));
        }
        Self::new(amplitudes / C64::new(norm, 0.0))
    }

    /// Fock (number) state |n⟩ in a basis of the given dimension.
    pub fn fock(n: usize, dim: usize) -> Result<Self> {
        if n >= dim {
            return Err(Error::invalid(format!(
                "Fock index {n} does not fit in a basis of dimension {dim}"
            )));
        }
        let mut amplitudes = CVec::zeros(dim);
        amplitudes[n] = C64::new(1.0, 0.0);
        Self::new(amplitudes)
    }

    pub fn amplitudes(&self) -> &CVec {
        &self.amplitudes
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    /// Projector |ψ⟩⟨ψ| as a density matrix.
    pub fn density(&self) -> DensityMatrix {
        let m = &self.amplitudes * self.amplitudes.adjoint();
        DensityMatrix::new_unchecked(m)
    }
}

/// Density matrix over the truncated Fock basis: Hermitian, unit trace,
/// positive semidefinite up to numeric tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    elements: CMat,
}

const HERMITICITY_TOL: f64 = 1e-10;
const TRACE_TOL: f64 = 1e-10;
const EIGENVALUE_TOL: f64 = -1e-10;

impl DensityMatrix {
    /// Validates Hermiticity (1e-10), unit trace (1e-10), and eigenvalue
    /// positivity (≥ −1e-10) before wrapping.
    pub fn new(elements: CMat) -> Result<Self> {
        if elements.nrows() != elements.ncols() || elements.is_empty() {
            return Err(Error::dims(format!(
                "density matrix must be square and nonempty, got {}x{}",
                elements.nrows(),
                elements.ncols()
            )));
        }
        let defect = hermiticity_defect(&elements);
        if !(defect <= HERMITICITY_TOL) {
            return Err(Error::invalid(format!(
                "density matrix is not Hermitian: max |rho_mn - conj(rho_nm)| = {defect:.3e}"
            )));
        }
        let trace = elements.trace();
        if (trace.re - 1.0).abs() > TRACE_TOL || trace.im.abs() > TRACE_TOL {
            return Err(Error::invalid(format!(
                "density matrix trace must be 1, got {} + {}i",
                trace.re, trace.im
            )));
        }
        let eig = eigh(&elements)?;
        if let Some(&lowest) = eig.values.first() {
            if lowest < EIGENVALUE_TOL {
                return Err(Error::invalid(format!(
                    "density matrix has a negative eigenvalue {lowest:.3e}"
                )));
            }
        }
        Ok(Self { elements })
    }

    /// Wraps without validation; for internal call sites that construct
    /// matrices already guaranteed valid (projectors of unit vectors,
    /// unitary conjugations of valid states).
    pub(crate) fn new_unchecked(elements: CMat) -> Self {
        Self { elements }
    }

    /// Diagonal mixture of Fock states from populations (must sum to 1).
    pub fn from_populations(populations: &[f64], dim: usize) -> Result<Self> {
        if populations.len() > dim {
            return Err(Error::dims(format!(
                "{} populations do not fit in dimension {dim}",
                populations.len()
            )));
        }
        if populations.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::invalid("populations must be finite and nonnegative"));
        }
        let total: f64 = populations.iter().sum();
        if (total - 1.0).abs() > TRACE_TOL {
            return Err(Error::invalid(format!("populations must sum to 1, got {total}")));
        }
        let mut m = CMat::zeros(dim, dim);
        for (n, &p) in populations.iter().enumerate() {
            m[(n, n)] = C64::new(p, 0.0);
        }
        Ok(Self::new_unchecked(m))
    }

    /// Pure Fock state |n⟩⟨n|.
    pub fn fock(n: usize, dim: usize) -> Result<Self> {
        Ok(PureState::fock(n, dim)?.density())
    }

    pub fn matrix(&self) -> &CMat {
        &self.elements
    }

    pub fn dim(&self) -> usize {
        self.elements.nrows()
    }

    /// Diagonal element ⟨n|ρ|n⟩.
    pub fn population(&self, n: usize) -> f64 {
        self.elements[(n, n)].re
    }

    /// Tr(ρ²).
    pub fn purity(&self) -> f64 {
        let mut sum = 0.0;
        for m in 0..self.dim() {
            for n in 0..self.dim() {
                sum += (self.elements[(m, n)] * self.elements[(n, m)]).re;
            }
        }
        sum
    }

    /// Tr(ρ·op).
    pub fn expectation(&self, op: &CMat) -> Result<C64> {
        if op.nrows() != self.dim() || op.ncols() != self.dim() {
            return Err(Error::dims("operator dimension does not match state"));
        }
        let mut sum = C64::new(0.0, 0.0);
        for m in 0..self.dim() {
            for n in 0..self.dim() {
                sum += self.elements[(m, n)] * op[(n, m)];
            }
        }
        Ok(sum)
    }

    /// U ρ U† for a unitary (or basis-change) matrix, re-Hermitized and
    /// trace-renormalized to absorb round-off.
    pub fn conjugated_by(&self, u: &CMat) -> Result<Self> {
        if u.nrows() != self.dim() || u.ncols() != self.dim() {
            return Err(Error::dims("transformation dimension does not match state"));
        }
        let m = u * &self.elements * u.adjoint();
        let m = hermitize(&m);
        let trace = m.trace().re;
        if !trace.is_finite() || trace <= 0.0 {
            return Err(Error::numeric("state transformation produced a non-positive trace"));
        }
        Ok(Self::new_unchecked(m / C64::new(trace, 0.0)))
    }
}

/// One quadrature sample coordinate: rotation angle θ ∈ [0, 2π) and the
/// dimensionless quadrature value u = p̃/p0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraturePoint {
    theta: f64,
    u: f64,
}

impl QuadraturePoint {
    pub fn new(theta: f64, u: f64) -> Result<Self> {
        if !theta.is_finite() || !(0.0..TAU).contains(&theta) {
            return Err(Error::invalid(format!(
                "quadrature angle must lie in [0, 2*pi), got {theta}"
            )));
        }
        if !u.is_finite() {
            return Err(Error::invalid("quadrature value must be finite"));
        }
        Ok(Self { theta, u })
    }

    /// Wraps an arbitrary finite angle into [0, 2π).
    pub fn wrapped(theta: f64, u: f64) -> Result<Self> {
        if !theta.is_finite() {
            return Err(Error::invalid("quadrature angle must be finite"));
        }
        Self::new(theta.rem_euclid(TAU), u)
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn u(&self) -> f64 {
        self.u
    }
}

/// One weighted quadrature observation: angle, dimensionless value, and a
/// nonnegative weight (relative frequency). The record form that measurement
/// datasets are exchanged in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureRecord {
    pub theta: f64,
    pub u: f64,
    pub weight: f64,
}

impl QuadratureRecord {
    pub fn new(theta: f64, u: f64, weight: f64) -> Result<Self> {
        let point = QuadraturePoint::new(theta, u)?;
        if !weight.is_finite() || weight < 0.0 {
            return Err(Error::invalid(format!(
                "quadrature weight must be finite and nonnegative, got {weight}"
            )));
        }
        Ok(Self { theta: point.theta(), u: point.u(), weight })
    }
}

/// Physicists' Hermite polynomial H_n(x) by the stable three-term recurrence
/// H_{k+1} = 2x·H_k − 2k·H_{k−1}.
pub fn hermite(n: usize, x: f64) -> f64 {
    let mut prev = 1.0; // H_0
    if n == 0 {
        return prev;
    }
    let mut curr = 2.0 * x; // H_1
    for k in 1..n {
        let next = 2.0 * x * curr - 2.0 * k as f64 * prev;
        prev = curr;
        curr = next;
    }
    curr
}

/// Natural log of n!, by direct summation (exact enough for n ≤ a few hundred).
pub(crate) fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

/// Dimensionless oscillator quadrature wavefunctions φ_n(u) for n = 0..=n_max,
/// normalized so ∫ φ_n(u)² du = 1.
///
/// φ_n(u) = (2π)^{−1/4}·H_n(u/√2)·2^{−n/2}·(n!)^{−1/2}·e^{−u²/4}, evaluated
/// through the normalized recurrence to stay stable at large n.
pub fn phi_values(n_max: usize, u: f64) -> Vec<f64> {
    let v = u / std::f64::consts::SQRT_2;
    let scale = 2.0f64.powf(-0.25);
    // h_n(v) = π^{−1/4} H_n(v) 2^{−n/2} (n!)^{−1/2} e^{−v²/2}; φ_n(u) = 2^{−1/4} h_n(u/√2).
    let mut out = Vec::with_capacity(n_max + 1);
    let mut prev = PI.powf(-0.25) * (-0.5 * v * v).exp();
    out.push(scale * prev);
    if n_max == 0 {
        return out;
    }
    let mut curr = std::f64::consts::SQRT_2 * v * prev;
    out.push(scale * curr);
    for n in 1..n_max {
        let np1 = (n + 1) as f64;
        let next = (2.0 / np1).sqrt() * v * curr - (n as f64 / np1).sqrt() * prev;
        prev = curr;
        curr = next;
        out.push(scale * curr);
    }
    out
}

/// Overlap vector b_n = i·e^{−inθ}·φ_n(u), n = 0..dim, in dimensionless
/// normalization (∫ |b_n(u)|² du = 1). The Fock-state amplitude of the
/// rotated-quadrature eigenstate; `quadrature_overlap` adds physical units.
pub fn overlap_vector(dim: usize, u: f64, theta: f64) -> CVec {
    let phi = phi_values(dim.saturating_sub(1), u);
    CVec::from_iterator(
        dim,
        phi.iter().enumerate().map(|(n, &p)| {
            let phase = C64::new(0.0, 1.0) * C64::from_polar(1.0, -(n as f64) * theta);
            phase * p
        }),
    )
}

/// Complex overlap ⟨n|p̃,θ⟩ = i·e^{−inθ}·(2πp0²)^{−1/4}·H_n(p̃/(p0√2))·
/// (2ⁿn!)^{−1/2}·e^{−p̃²/(4p0²)}, carrying the 1/√p0 density normalization so
/// that ∫ |⟨n|p̃,θ⟩|² dp̃ = 1.
pub fn quadrature_overlap(n: usize, q: QuadraturePoint, spec: &OscillatorSpec) -> Result<C64> {
    if n > spec.n_max() {
        return Err(Error::invalid(format!(
            "Fock index {n} exceeds truncation n_max = {}",
            spec.n_max()
        )));
    }
    let b = overlap_vector(n + 1, q.u(), q.theta());
    Ok(b[n] / C64::new(spec.p0().sqrt(), 0.0))
}

/// Closed-form 2-D momentum probability density for motional states with
/// n_x ∈ {0, 1, 2} along x and the ground state along y; normalized so
/// ∫∫ dp_x dp_y = 1.
pub fn fock_momentum_density_2d(
    n_x: usize,
    p_x: f64,
    p_y: f64,
    p0x: f64,
    p0y: f64,
) -> Result<f64> {
    if !(p0x > 0.0 && p0y > 0.0) {
        return Err(Error::invalid("characteristic momenta must be positive"));
    }
    let ux = p_x / p0x;
    let uy = p_y / p0y;
    let gauss = |u: f64| (2.0 * PI).sqrt().recip() * (-0.5 * u * u).exp();
    let along_x = match n_x {
        0 => gauss(ux),
        1 => ux * ux * gauss(ux),
        2 => {
            let w = ux * ux - 1.0;
            0.5 * w * w * gauss(ux)
        }
        _ => {
            return Err(Error::unsupported(format!(
                "closed-form momentum density is only provided for n_x in 0..=2, got {n_x}"
            )))
        }
    };
    Ok(along_x / p0x * gauss(uy) / p0y)
}

/// Lowering operator a with a|n⟩ = √n|n−1⟩ on the truncated basis.
pub fn lowering_operator(dim: usize) -> CMat {
    linalg::lowering(dim)
}

/// Number operator a†a.
pub fn number_operator(dim: usize) -> CMat {
    CMat::from_fn(dim, dim, |m, n| {
        if m == n {
            C64::new(m as f64, 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    })
}

/// Position operator x = x0·(a + a†) in meters.
pub fn position_operator(spec: &OscillatorSpec) -> CMat {
    let a = lowering_operator(spec.dim());
    (&a + a.adjoint()) * C64::new(spec.x0(), 0.0)
}

/// Momentum operator p = i·p0·(a† − a) in kg·m/s.
pub fn momentum_operator(spec: &OscillatorSpec) -> CMat {
    let a = lowering_operator(spec.dim());
    (a.adjoint() - &a) * C64::new(0.0, spec.p0())
}

/// Maximum displacement half-quanta ratio the truncated basis can absorb:
/// the builder requires |x_i|/(2x0) ≤ n_max/4.
fn displacement_leakage(xi: f64, n_max: usize) -> f64 {
    // Coherent-state occupation is Poisson with mean ξ²; the leakage is the
    // tail mass above n_max.
    let lambda = xi * xi;
    if lambda == 0.0 {
        return 0.0;
    }
    let mut cumulative = 0.0;
    let mut ln_term = -lambda; // ln of the n = 0 Poisson weight
    for n in 0..=n_max {
        if n > 0 {
            ln_term += lambda.ln() - (n as f64).ln();
        }
        cumulative += ln_term.exp();
    }
    (1.0 - cumulative).max(0.0)
}

/// Displacement operator D(x_i) = e^{−ip·x_i/ħ} in the truncated basis.
///
/// With p = i·p0(a† − a) this is exp(ξ(a† − a)) for ξ = x_i/(2x0); positive
/// x_i moves ⟨x⟩ by +x_i. Unitary on the retained subspace up to truncation
/// leakage.
pub fn displacement_matrix(x_i: f64, spec: &OscillatorSpec) -> Result<CMat> {
    if !x_i.is_finite() {
        return Err(Error::invalid("displacement must be finite"));
    }
    let xi = x_i / (2.0 * spec.x0());
    if xi.abs() > spec.n_max() as f64 / 4.0 {
        return Err(Error::Truncation {
            message: format!(
                "displacement {:.3e} m (|xi| = {:.3}) exceeds the truncation budget n_max/4 = {:.3}",
                x_i,
                xi.abs(),
                spec.n_max() as f64 / 4.0
            ),
            leakage: displacement_leakage(xi, spec.n_max()),
        });
    }
    let a = lowering_operator(spec.dim());
    let g = (a.adjoint() - &a) * C64::new(xi, 0.0);
    expm_antihermitian(&g)
}

/// Basis-change matrix for a sudden trap-depth jump by `depth_ratio`.
///
/// Trap frequency scales as the square root of depth, so ω₂ = ω₁·√depth_ratio
/// and the equivalent squeeze parameter is r = ½·ln(ω₂/ω₁) = ¼·ln(depth_ratio).
/// The state is unchanged by the sudden jump; the returned matrix B has
/// columns B_{nm} = ⟨n₂|m₁⟩ expressing old-frequency Fock states in the
/// new-frequency basis.
pub fn squeeze_from_depth_jump(depth_ratio: f64, spec: &OscillatorSpec) -> Result<CMat> {
    if !(depth_ratio.is_finite() && depth_ratio > 0.0) {
        return Err(Error::invalid(format!(
            "depth ratio must be positive, got {depth_ratio}"
        )));
    }
    let r = 0.25 * depth_ratio.ln();
    let a = lowering_operator(spec.dim());
    // B = exp((r/2)(a†² − a²)) evaluated in the old basis.
    let a2 = &a * &a;
    let g = (a2.adjoint() - &a2) * C64::new(0.5 * r, 0.0);
    expm_antihermitian(&g)
}

/// Squeeze parameter r = ¼·ln(depth_ratio) for a sudden depth jump.
pub fn squeeze_parameter(depth_ratio: f64) -> f64 {
    0.25 * depth_ratio.ln()
}

/// Trace distance T(ρ, ρ') = ½·Tr√((ρ − ρ')²) = ½·Σ|eigenvalues of ρ − ρ'|.
pub fn trace_distance(a: &DensityMatrix, b: &DensityMatrix) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::dims(format!(
            "trace distance needs equal dimensions, got {} and {}",
            a.dim(),
            b.dim()
        )));
    }
    let diff = a.matrix() - b.matrix();
    let eig = eigh(&diff)?;
    Ok(0.5 * eig.values.iter().map(|v| v.abs()).sum::<f64>())
}

/// Uhlmann fidelity F(ρ₁, ρ₂) = (Tr√(√ρ₁·ρ₂·√ρ₁))², clamped into [0, 1].
pub fn fidelity(a: &DensityMatrix, b: &DensityMatrix) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::dims(format!(
            "fidelity needs equal dimensions, got {} and {}",
            a.dim(),
            b.dim()
        )));
    }
    let sqrt_a = sqrt_psd(a.matrix())?;
    let inner = &sqrt_a * b.matrix() * &sqrt_a;
    let root = sqrt_psd(&inner)?;
    let trace = root.trace().re;
    Ok((trace * trace).clamp(0.0, 1.0))
}
