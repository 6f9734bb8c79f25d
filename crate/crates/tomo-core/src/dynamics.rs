//! Trap Hamiltonians, time evolution, and derived observables.
//!
//! The trap is modeled on one dynamical axis in the truncated Fock basis:
//! H/ħω = P̃² + ¼X̃² + λX̃⁴ (+ ⅔λ²X̃⁶ as a stabilizer when the quartic
//! strength is negative), with X̃ = x/x0 = a + a† and P̃ = p·x0/ħ =
//! i(a† − a)/2. Evolution is exact eigendecomposition — at dimension ≤ 26
//! there is no reason to integrate.

use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::fock::{
    displacement_matrix, lowering_operator, momentum_operator, overlap_vector,
    squeeze_from_depth_jump, DensityMatrix, OscillatorSpec,
};
use crate::linalg::{eigh, hermitize, HermEig, C64, CMat};

/// Maximum |λ| the truncated-basis model is trusted for.
const LAMBDA_LIMIT: f64 = 0.1;
/// Population threshold in the top-of-basis buffer above which operations
/// log a truncation warning.
const BUFFER_WARN_THRESHOLD: f64 = 1e-4;

/// One-axis trap model: harmonic reference plus quartic strength λ
/// (λ = Λx0⁴/ħω) and an optional sextic stabilizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrapModel {
    spec: OscillatorSpec,
    lambda: f64,
    include_sextic: bool,
}

impl TrapModel {
    /// Builds a model; the sextic stabilizer is switched on automatically
    /// for negative λ (where the bare quartic Hamiltonian is unbounded).
    pub fn new(spec: OscillatorSpec, lambda: f64) -> Result<Self> {
        Self::with_sextic(spec, lambda, lambda < 0.0)
    }

    /// Explicit stabilizer control. Negative λ without the sextic term is
    /// rejected: that Hamiltonian is unbounded below and its truncated-basis
    /// spectrum is an artifact.
    pub fn with_sextic(spec: OscillatorSpec, lambda: f64, include_sextic: bool) -> Result<Self> {
        if !lambda.is_finite() || lambda.abs() >= LAMBDA_LIMIT {
            return Err(Error::config(
                "trap.lambda",
                format!("quartic strength must satisfy |lambda| < {LAMBDA_LIMIT}, got {lambda}"),
            ));
        }
        if lambda < 0.0 && !include_sextic {
            return Err(Error::config(
                "trap.include_sextic",
                "negative quartic strength requires the sextic stabilizer",
            ));
        }
        Ok(Self { spec, lambda, include_sextic })
    }

    pub fn harmonic(spec: OscillatorSpec) -> Self {
        Self { spec, lambda: 0.0, include_sextic: false }
    }

    pub fn spec(&self) -> &OscillatorSpec {
        &self.spec
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn include_sextic(&self) -> bool {
        self.include_sextic
    }

    /// Model after scaling the trap depth by `depth_ratio`, assuming the
    /// Hamiltonian is linear in depth: ω ∝ √V so ω → ω·√ratio, and the
    /// dimensionless quartic strength scales as λ ∝ 1/√V.
    pub fn rescaled_by_depth(&self, depth_ratio: f64) -> Result<Self> {
        if !(depth_ratio.is_finite() && depth_ratio > 0.0) {
            return Err(Error::config(
                "depth_jump_ratio",
                format!("depth ratio must be positive, got {depth_ratio}"),
            ));
        }
        let scale = depth_ratio.sqrt();
        Self::with_sextic(
            self.spec.with_omega(self.spec.omega() * scale)?,
            self.lambda / scale,
            self.include_sextic,
        )
    }
}

/// Incoherent mixture populations of the three lowest motional states.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixtureSpec {
    populations: [f64; 3],
}

impl MixtureSpec {
    pub fn new(p0: f64, p1: f64, p2: f64) -> Result<Self> {
        let populations = [p0, p1, p2];
        if populations.iter().any(|&p| !p.is_finite() || p < 0.0) {
            return Err(Error::config(
                "mixture",
                "populations must be finite and nonnegative",
            ));
        }
        let total: f64 = populations.iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::config(
                "mixture",
                format!("populations must sum to 1, got {total}"),
            ));
        }
        Ok(Self { populations })
    }

    pub fn populations(&self) -> [f64; 3] {
        self.populations
    }
}

/// Outcome of a time evolution: the evolved state, the hold time, and the
/// quadrature angle the hold realizes, i.e. the θ for which measuring the
/// initial state at angle θ gives the same statistics as measuring the
/// evolved state at θ = 0.
#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionResult {
    pub rho_t: DensityMatrix,
    pub t_e: f64,
    pub theta_equivalent: f64,
}

/// Hamiltonian of the trap model in the truncated Fock basis, in units ħω.
///
/// Operator powers are formed in a basis extended by six levels and then
/// cropped to the retained block. Products of hard-truncated matrices would
/// corrupt the top rows (the truncated a·a† loses its largest element,
/// planting a spurious level at n_max/2 in the middle of the spectrum);
/// extending first makes every retained matrix element exact, so the
/// harmonic part is exactly diag(n + ½) and edge artifacts never enter.
pub fn build_hamiltonian(model: &TrapModel) -> CMat {
    let dim = model.spec().dim();
    let ext = dim + 6;
    let a = lowering_operator(ext);
    let x = &a + a.adjoint();
    let p = (a.adjoint() - &a) * C64::new(0.0, 0.5);
    let x2 = &x * &x;
    let mut h = &p * &p + &x2 * C64::new(0.25, 0.0);
    if model.lambda() != 0.0 {
        let x4 = &x2 * &x2;
        h += &x4 * C64::new(model.lambda(), 0.0);
        if model.include_sextic() {
            let x6 = &x4 * &x2;
            h += &x6 * C64::new(2.0 * model.lambda() * model.lambda() / 3.0, 0.0);
        }
    }
    hermitize(&h.view((0, 0), (dim, dim)).into_owned())
}

/// Eigendecomposition of the trap Hamiltonian (dimensionless energies).
pub(crate) fn hamiltonian_eig(model: &TrapModel) -> Result<HermEig> {
    eigh(&build_hamiltonian(model))
}

/// Population in the top-of-basis buffer (the highest fifth of the Fock
/// levels), used to detect states pressing against the truncation.
pub fn buffer_population(rho: &DensityMatrix) -> f64 {
    let dim = rho.dim();
    let buffer = dim / 5;
    (dim - buffer..dim).map(|n| rho.population(n)).sum()
}

fn warn_on_buffer(rho: &DensityMatrix, context: &str) {
    let pop = buffer_population(rho);
    if pop > BUFFER_WARN_THRESHOLD {
        log::warn!(
            "{context}: {pop:.2e} population in the top-of-basis buffer; \
             results may carry truncation artifacts"
        );
    }
}

/// Evolves ρ for `t_e` seconds under the trap Hamiltonian, U = e^{−i·t_e·H/ħ}.
pub fn evolve(rho: &DensityMatrix, model: &TrapModel, t_e: f64) -> Result<EvolutionResult> {
    if !t_e.is_finite() {
        return Err(Error::invalid("evolution time must be finite"));
    }
    if rho.dim() != model.spec().dim() {
        return Err(Error::dims("state dimension does not match the trap model"));
    }
    let eig = hamiltonian_eig(model)?;
    let rho_t = evolve_with_eig(rho, &eig, model.spec().omega(), t_e)?;
    warn_on_buffer(&rho_t, "evolve");
    Ok(EvolutionResult {
        rho_t,
        t_e,
        theta_equivalent: (-model.spec().omega() * t_e).rem_euclid(TAU),
    })
}

pub(crate) fn evolve_with_eig(
    rho: &DensityMatrix,
    eig: &HermEig,
    omega: f64,
    t_e: f64,
) -> Result<DensityMatrix> {
    // Phases are e^{−iE_k·ω·t} since the eigenvalues are in units of ħω.
    let u = eig.map_complex(|e| C64::new(0.0, -e * omega * t_e).exp());
    let m = hermitize(&(&u * rho.matrix() * u.adjoint()));
    DensityMatrix::new(m)
}

/// Probability density of the rotated quadrature u = p̃/p0 at angle θ,
/// evaluated on `u_grid`; normalized so the Riemann sum over a full-support
/// grid is 1.
pub fn quadrature_distribution(
    rho: &DensityMatrix,
    theta: f64,
    u_grid: &[f64],
    spec: &OscillatorSpec,
) -> Result<Vec<f64>> {
    if rho.dim() != spec.dim() {
        return Err(Error::dims("state dimension does not match the oscillator"));
    }
    if !theta.is_finite() {
        return Err(Error::invalid("quadrature angle must be finite"));
    }
    Ok(u_grid
        .iter()
        .map(|&u| {
            let b = overlap_vector(rho.dim(), u, theta);
            let p = (b.adjoint() * rho.matrix() * &b)[(0, 0)].re;
            p.max(0.0)
        })
        .collect())
}

/// ⟨p⟩(t) in kg·m/s at each requested time, for fitting center-of-mass
/// oscillations.
pub fn momentum_expectation_trace(
    rho0: &DensityMatrix,
    model: &TrapModel,
    times: &[f64],
) -> Result<Vec<f64>> {
    if rho0.dim() != model.spec().dim() {
        return Err(Error::dims("state dimension does not match the trap model"));
    }
    if times.iter().any(|t| !t.is_finite()) {
        return Err(Error::invalid("evolution times must be finite"));
    }
    let eig = hamiltonian_eig(model)?;
    momentum_trace_with_eig(rho0, &eig, model.spec(), times)
}

/// Same as [`momentum_expectation_trace`] with a caller-supplied Hamiltonian
/// eigendecomposition, so repeated evaluations at one (λ, ω) reuse it.
pub(crate) fn momentum_trace_with_eig(
    rho0: &DensityMatrix,
    eig: &HermEig,
    spec: &OscillatorSpec,
    times: &[f64],
) -> Result<Vec<f64>> {
    let p_op = momentum_operator(spec);
    times
        .iter()
        .map(|&t| {
            let rho_t = evolve_with_eig(rho0, eig, spec.omega(), t)?;
            Ok(rho_t.expectation(&p_op)?.re)
        })
        .collect()
}

/// Prepares the protocol's initial state: an incoherent mixture of the three
/// lowest motional states of the trap, displaced by `x_i`, then re-expressed
/// in the basis of a trap whose depth was suddenly scaled by
/// `depth_jump_ratio` (the squeeze step).
///
/// For λ = 0 the mixture is over Fock states; otherwise over the lowest
/// eigenstates of the anharmonic Hamiltonian. The returned state lives in
/// the post-jump basis: evolve it with `model.rescaled_by_depth(ratio)`.
pub fn prepare_state(
    mix: &MixtureSpec,
    model: &TrapModel,
    x_i: f64,
    depth_jump_ratio: f64,
) -> Result<DensityMatrix> {
    if model.lambda() == 0.0 {
        prepare_state_with_eig(mix, model, x_i, depth_jump_ratio, None)
    } else {
        let eig = hamiltonian_eig(model)?;
        prepare_state_with_eig(mix, model, x_i, depth_jump_ratio, Some(&eig))
    }
}

/// Same as [`prepare_state`] with a caller-supplied eigendecomposition of the
/// trap Hamiltonian (required when λ ≠ 0), so repeated preparations at one
/// (λ, ω) reuse it.
pub(crate) fn prepare_state_with_eig(
    mix: &MixtureSpec,
    model: &TrapModel,
    x_i: f64,
    depth_jump_ratio: f64,
    eig: Option<&HermEig>,
) -> Result<DensityMatrix> {
    let spec = model.spec();
    let dim = spec.dim();
    let populations = mix.populations();

    let mut rho = if model.lambda() == 0.0 {
        let mut m = CMat::zeros(dim, dim);
        for (n, &p) in populations.iter().enumerate() {
            m[(n, n)] = C64::new(p, 0.0);
        }
        DensityMatrix::new_unchecked(m)
    } else {
        let eig = eig.ok_or_else(|| {
            Error::invalid("an anharmonic preparation needs the trap eigendecomposition")
        })?;
        let mut m = CMat::zeros(dim, dim);
        for (k, &p) in populations.iter().enumerate() {
            let v = eig.vectors.column(k).clone_owned();
            m += (&v * v.adjoint()) * C64::new(p, 0.0);
        }
        DensityMatrix::new_unchecked(hermitize(&m))
    };

    if x_i != 0.0 {
        let d = displacement_matrix(x_i, spec)?;
        rho = rho.conjugated_by(&d)?;
    }
    if depth_jump_ratio != 1.0 {
        let b = squeeze_from_depth_jump(depth_jump_ratio, spec)?;
        rho = rho.conjugated_by(&b)?;
    }
    warn_on_buffer(&rho, "prepare_state");
    Ok(rho)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::RB87_MASS;
    use crate::fock::{trace_distance, PureState};
    use approx::assert_relative_eq;

    fn spec() -> OscillatorSpec {
        OscillatorSpec::new(RB87_MASS, TAU * 9.05e3, 25).unwrap()
    }

    fn displaced_ground(s: &OscillatorSpec, x_i: f64) -> DensityMatrix {
        let d = displacement_matrix(x_i, s).unwrap();
        DensityMatrix::fock(0, s.dim()).unwrap().conjugated_by(&d).unwrap()
    }

    #[test]
    fn trap_model_validation() {
        let s = spec();
        assert!(TrapModel::with_sextic(s, -0.01, false).is_err());
        assert!(TrapModel::new(s, 0.2).is_err());
        assert!(TrapModel::new(s, -0.0037).unwrap().include_sextic());
        assert!(!TrapModel::new(s, 0.0037).unwrap().include_sextic());
    }

    #[test]
    fn depth_rescale_moves_omega_and_lambda() {
        let model = TrapModel::new(spec(), -0.0037).unwrap();
        let scaled = model.rescaled_by_depth(2.0).unwrap();
        assert_relative_eq!(
            scaled.spec().omega(),
            model.spec().omega() * 2.0f64.sqrt(),
            max_relative = 1e-12
        );
        assert_relative_eq!(
            scaled.lambda(),
            model.lambda() / 2.0f64.sqrt(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn harmonic_spectrum() {
        let model = TrapModel::harmonic(spec());
        let eig = hamiltonian_eig(&model).unwrap();
        for n in 0..spec().dim() {
            assert!((eig.values[n] - (n as f64 + 0.5)).abs() < 1e-9, "level {n}");
        }
    }

    #[test]
    fn quartic_ground_shift_first_order() {
        let lambda = 0.001;
        let harmonic = hamiltonian_eig(&TrapModel::harmonic(spec())).unwrap();
        let quartic = hamiltonian_eig(&TrapModel::new(spec(), lambda).unwrap()).unwrap();
        let shift = quartic.values[0] - harmonic.values[0];
        // First-order perturbation: ⟨0|X̃⁴|0⟩·λ = 3λ.
        assert!((shift - 3.0 * lambda).abs() < 0.1 * 3.0 * lambda, "shift {shift}");
    }

    #[test]
    fn negative_quartic_spectrum_bounded() {
        let model = TrapModel::new(spec(), -0.0037).unwrap();
        let eig = hamiltonian_eig(&model).unwrap();
        assert!(eig.values.iter().all(|v| v.is_finite()));
        assert!(eig.values[0] > 0.0);
        assert!(eig.values.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn evolve_zero_time_is_identity() {
        let s = spec();
        let rho = displaced_ground(&s, s.x0());
        let out = evolve(&rho, &TrapModel::harmonic(s), 0.0).unwrap();
        assert!(trace_distance(&rho, &out.rho_t).unwrap() < 1e-12);
        assert_eq!(out.theta_equivalent, 0.0);
    }

    #[test]
    fn evolve_full_period_returns_state() {
        let s = spec();
        let rho = displaced_ground(&s, 0.7 * s.x0());
        let out = evolve(&rho, &TrapModel::harmonic(s), TAU / s.omega()).unwrap();
        assert!(trace_distance(&rho, &out.rho_t).unwrap() < 1e-8);
    }

    #[test]
    fn coherent_momentum_oscillation() {
        let s = spec();
        let x_i = s.x0();
        let rho = displaced_ground(&s, x_i);
        let model = TrapModel::harmonic(s);
        let amplitude = s.mass() * s.omega() * x_i;
        let times: Vec<f64> = (0..40).map(|k| k as f64 * 6e-6).collect();
        let trace = momentum_expectation_trace(&rho, &model, &times).unwrap();
        for (&t, &p) in times.iter().zip(&trace) {
            let expected = -amplitude * (s.omega() * t).sin();
            assert!(
                (p - expected).abs() < 1e-6 * amplitude,
                "t = {t}: got {p}, expected {expected}"
            );
        }
    }

    #[test]
    fn energy_conserved_under_evolution() {
        let s = spec();
        let model = TrapModel::new(s, -0.0037).unwrap();
        let h = build_hamiltonian(&model);
        let rho = displaced_ground(&s, 1.5 * s.x0());
        let e0 = rho.expectation(&h).unwrap().re;
        for &t in &[1e-5, 1e-4, 7.3e-4] {
            let out = evolve(&rho, &model, t).unwrap();
            let e = out.rho_t.expectation(&h).unwrap().re;
            assert!((e - e0).abs() < 1e-9 * e0.abs(), "t = {t}: {e} vs {e0}");
        }
    }

    #[test]
    fn quadrature_distribution_reference_shapes() {
        let s = spec();
        let grid: Vec<f64> = (0..801).map(|i| -8.0 + 0.02 * i as f64).collect();
        let zero = DensityMatrix::fock(0, s.dim()).unwrap();
        let one = DensityMatrix::fock(1, s.dim()).unwrap();
        for &theta in &[0.0, 1.1, 5.2] {
            let p0 = quadrature_distribution(&zero, theta, &grid, &s).unwrap();
            let sum: f64 = p0.iter().sum::<f64>() * 0.02;
            assert!((sum - 1.0).abs() < 1e-4, "normalization at theta {theta}: {sum}");
            let peak = p0[400];
            assert_relative_eq!(peak, (TAU).sqrt().recip(), max_relative = 1e-10);
            // Unit variance in u.
            let var: f64 = grid.iter().zip(&p0).map(|(u, p)| u * u * p * 0.02).sum();
            assert!((var - 1.0).abs() < 1e-4);

            let p1 = quadrature_distribution(&one, theta, &grid, &s).unwrap();
            assert!(p1[400] < 1e-12);
            assert!(p1.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn rotation_equals_evolution_for_protocol_states() {
        // Real-valued density matrices (the protocol's displaced mixtures)
        // make the evolved-state θ=0 distribution equal the initial-state
        // distribution at θ = ω·t_e.
        let s = spec();
        let model = TrapModel::harmonic(s);
        let mix = MixtureSpec::new(0.26, 0.651, 0.089).unwrap();
        let rho = prepare_state(&mix, &model, 0.9 * s.x0(), 1.0).unwrap();
        let grid: Vec<f64> = (0..161).map(|i| -8.0 + 0.1 * i as f64).collect();
        for frac in [0.13, 0.41, 0.77] {
            let t = frac * TAU / s.omega();
            let evolved = evolve(&rho, &model, t).unwrap();
            let lhs = quadrature_distribution(&evolved.rho_t, 0.0, &grid, &s).unwrap();
            let rhs = quadrature_distribution(&rho, s.omega() * t, &grid, &s).unwrap();
            for (a, b) in lhs.iter().zip(&rhs) {
                assert!((a - b).abs() < 1e-8, "fraction {frac}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn theta_equivalent_matches_evolution_for_any_state() {
        // For states with complex matrix elements the realized angle is the
        // one reported by EvolutionResult.
        let s = spec();
        let model = TrapModel::harmonic(s);
        let mut amps = crate::linalg::CVec::zeros(s.dim());
        amps[0] = C64::new(0.7, 0.0);
        amps[1] = C64::new(0.2, 0.55);
        amps[3] = C64::new(-0.3, 0.28);
        let rho = PureState::normalized(amps).unwrap().density();
        let grid: Vec<f64> = (0..161).map(|i| -8.0 + 0.1 * i as f64).collect();
        for frac in [0.21, 0.58] {
            let t = frac * TAU / s.omega();
            let evolved = evolve(&rho, &model, t).unwrap();
            let lhs = quadrature_distribution(&evolved.rho_t, 0.0, &grid, &s).unwrap();
            let rhs = quadrature_distribution(&rho, evolved.theta_equivalent, &grid, &s).unwrap();
            for (a, b) in lhs.iter().zip(&rhs) {
                assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn undisplaced_mixture_momentum_is_zero() {
        let s = spec();
        let model = TrapModel::harmonic(s);
        let mix = MixtureSpec::new(0.26, 0.651, 0.089).unwrap();
        let rho = prepare_state(&mix, &model, 0.0, 1.0).unwrap();
        let times: Vec<f64> = (0..30).map(|k| k as f64 * 7e-6).collect();
        let p0 = s.p0();
        for p in momentum_expectation_trace(&rho, &model, &times).unwrap() {
            assert!(p.abs() < 1e-10 * p0);
        }
    }

    #[test]
    fn anharmonic_momentum_amplitude_decays() {
        let s = OscillatorSpec::new(RB87_MASS, TAU * 8.5e3, 25).unwrap();
        let model = TrapModel::new(s, -0.0037).unwrap();
        let rho = displaced_ground(&s, 166e-9);
        let period = TAU / s.omega();
        let times: Vec<f64> = (0..1000).map(|k| k as f64 * 1e-6).collect();
        let trace = momentum_expectation_trace(&rho, &model, &times).unwrap();
        // Envelope: per-period maxima of |⟨p⟩| over the first millisecond.
        let mut envelope = Vec::new();
        let mut k = 0;
        while ((k + 1) as f64) * period < 1e-3 {
            let lo = (k as f64 * period / 1e-6) as usize;
            let hi = (((k + 1) as f64) * period / 1e-6) as usize;
            envelope.push(trace[lo..hi].iter().fold(0.0f64, |m, p| m.max(p.abs())));
            k += 1;
        }
        assert!(envelope.len() >= 7);
        for w in envelope.windows(2) {
            assert!(w[1] < w[0] * 1.001, "envelope not decaying: {envelope:?}");
        }
        assert!(
            envelope.last().unwrap() < &(0.9 * envelope[0]),
            "no visible decay over 1 ms: {envelope:?}"
        );
    }

    #[test]
    fn prepare_state_trivial_case() {
        let s = spec();
        let model = TrapModel::harmonic(s);
        let mix = MixtureSpec::new(1.0, 0.0, 0.0).unwrap();
        let rho = prepare_state(&mix, &model, 0.0, 1.0).unwrap();
        let target = DensityMatrix::fock(0, s.dim()).unwrap();
        assert!(trace_distance(&rho, &target).unwrap() < 1e-12);
    }

    #[test]
    fn prepare_state_anharmonic_eigenbasis_diagonal() {
        let s = OscillatorSpec::new(RB87_MASS, TAU * 8.5e3, 25).unwrap();
        let model = TrapModel::new(s, -0.0034751).unwrap();
        let mix = MixtureSpec::new(0.28, 0.57, 0.15).unwrap();
        let rho = prepare_state(&mix, &model, 0.0, 1.0).unwrap();
        let eig = hamiltonian_eig(&model).unwrap();
        for (k, &p) in mix.populations().iter().enumerate() {
            let v = eig.vectors.column(k);
            let occupation = (v.adjoint() * rho.matrix() * v)[(0, 0)].re;
            assert!((occupation - p).abs() < 1e-12, "eigenstate {k}");
        }
    }

    #[test]
    fn prepared_mixture_purity_oracle() {
        // Displacement and depth-jump steps are unitary on the truncated
        // basis, so purity stays exactly Σ P_k².
        let s = spec();
        let model = TrapModel::harmonic(s);
        let mix = MixtureSpec::new(0.26, 0.651, 0.089).unwrap();
        let rho = prepare_state(&mix, &model, 140e-9, 1.0).unwrap();
        let expected = 0.26f64.powi(2) + 0.651f64.powi(2) + 0.089f64.powi(2);
        assert_relative_eq!(rho.purity(), expected, max_relative = 1e-10);
        assert_relative_eq!(expected, 0.499322, max_relative = 1e-12);

        let jumped = prepare_state(&mix, &model, 140e-9, 2.0).unwrap();
        assert_relative_eq!(jumped.purity(), expected, max_relative = 1e-10);
    }

    #[test]
    fn buffer_population_flags_high_states() {
        let s = spec();
        let top = DensityMatrix::fock(25, s.dim()).unwrap();
        assert!(buffer_population(&top) > 0.999);
        let ground = DensityMatrix::fock(0, s.dim()).unwrap();
        assert!(buffer_population(&ground) < 1e-15);
    }

    #[test]
    fn mixture_spec_validation() {
        assert!(MixtureSpec::new(0.5, 0.5, 0.1).is_err());
        assert!(MixtureSpec::new(-0.1, 0.6, 0.5).is_err());
        assert!(MixtureSpec::new(0.26, 0.651, 0.089).is_ok());
    }
}
