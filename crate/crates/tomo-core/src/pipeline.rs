//! End-to-end scenario orchestration and numerical studies.
//!
//! [`run_tomography_scenario`] wires the other modules into one deterministic
//! synthetic experiment: state preparation, per-angle evolution, momentum-space
//! rendering, optical blur, camera noise, background subtraction,
//! deconvolution, maximum-likelihood reconstruction, Wigner analysis, and a
//! parametric bootstrap. [`run_anharmonic_robustness`] feeds exact quadrature
//! distributions evolved in an anharmonic trap to the harmonic reconstruction
//! model and maps the resulting bias over the mixture simplex, and
//! [`run_noise_bias_study`] tabulates reconstruction bias against the
//! averaged-frame noise amplitude.

use std::f64::consts::TAU;
use std::path::Path;

use rayon::prelude::*;

use crate::bootstrap::{
    derive_seed, negativity_axis_for, noise_bias_sweep, run_bootstrap, BootstrapConfig,
    BootstrapReport, NoiseBiasTable,
};
use crate::constants::defaults;
use crate::dynamics::{
    evolve_with_eig, hamiltonian_eig, prepare_state, quadrature_distribution, MixtureSpec,
    TrapModel,
};
use crate::error::{Error, Result};
use crate::fock::{
    fidelity, negativity, symmetric_axis, wigner, DensityMatrix, OscillatorSpec, WignerGrid,
};
use crate::imaging::{
    convolve_psf, image_to_quadrature, momentum_to_image, richardson_lucy, sample_camera_noise,
    subtract_background, write_quadrature_csv, ImageFrame, ImagingGeometry, MomentumDensity,
    NoiseModel, PsfModel, QuadratureHistogram,
};
use crate::ioutil::atomic_write;
use crate::linalg::HermEig;
use crate::mle::{reconstruct, save_result, MleConfig, MleResult, QuadratureDataset};

/// Momentum-grid samples per camera pixel when rendering a frame.
const RENDER_OVERSAMPLE: usize = 4;
/// Angle count of the measurement schedule used by the robustness map.
const ROBUSTNESS_ANGLE_COUNT: usize = defaults::ANGLES_FOCK;
/// Sample count of the exact quadrature grids fed to the reconstruction in
/// the robustness map.
const ROBUSTNESS_U_POINTS: usize = 201;

/// Quadrature angle realized by holding for `t = theta/omega` and then
/// measuring momentum: the evolved state measured at θ = 0 has the same
/// statistics as the initial state measured at −θ (mod 2π).
fn equivalent_angle(theta: f64) -> f64 {
    (-theta).rem_euclid(TAU)
}

/// Full description of one synthetic tomography run.
///
/// The trap model describes the preparation trap; the state is prepared
/// across the depth jump and then evolved, rendered, and reconstructed in the
/// jumped trap. All randomness derives from the single seed, so a scenario is
/// reproducible bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    trap: TrapModel,
    mixture: MixtureSpec,
    displacement: f64,
    depth_jump_ratio: f64,
    angles: Vec<f64>,
    imaging: ImagingGeometry,
    psf: PsfModel,
    noise: NoiseModel,
    mle: MleConfig,
    seed: u64,
    image_size: (usize, usize),
    n_pictures: u32,
    counts_per_shot: f64,
    rl_iterations: u32,
    rl_filter_floor: f64,
    bootstrap_replicas: usize,
}

impl ScenarioConfig {
    /// Builds a scenario with the default frame size (201×33 pixels),
    /// picture count, counts per shot, deconvolution settings, and bootstrap
    /// ensemble size.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        trap: TrapModel,
        mixture: MixtureSpec,
        displacement: f64,
        depth_jump_ratio: f64,
        angles: Vec<f64>,
        imaging: ImagingGeometry,
        psf: PsfModel,
        noise: NoiseModel,
        mle: MleConfig,
        seed: u64,
    ) -> Result<Self> {
        if angles.is_empty() || angles.iter().any(|a| !a.is_finite()) {
            return Err(Error::config(
                "scenario.angles",
                "need at least one finite evolution angle",
            ));
        }
        if !displacement.is_finite() {
            return Err(Error::config(
                "scenario.displacement",
                format!("displacement must be finite, got {displacement}"),
            ));
        }
        if !(depth_jump_ratio.is_finite() && depth_jump_ratio > 0.0) {
            return Err(Error::config(
                "scenario.depth_jump_ratio",
                format!("depth ratio must be positive, got {depth_jump_ratio}"),
            ));
        }
        if mle.n_max() != trap.spec().n_max() {
            return Err(Error::config(
                "scenario.mle",
                format!(
                    "reconstruction basis (n_max {}) must match the trap basis (n_max {})",
                    mle.n_max(),
                    trap.spec().n_max()
                ),
            ));
        }
        Ok(Self {
            trap,
            mixture,
            displacement,
            depth_jump_ratio,
            angles,
            imaging,
            psf,
            noise,
            mle,
            seed,
            image_size: (201, 33),
            n_pictures: 100,
            counts_per_shot: defaults::counts_per_shot(),
            rl_iterations: defaults::RL_ITERATIONS as u32,
            rl_filter_floor: defaults::RL_FILTER_FLOOR,
            bootstrap_replicas: 16,
        })
    }

    /// Camera frame size in pixels (horizontal, vertical).
    pub fn with_image_size(mut self, nx: usize, ny: usize) -> Result<Self> {
        if nx < 2 || ny < 1 {
            return Err(Error::config(
                "scenario.image_size",
                format!("frame must be at least 2×1 pixels, got {nx}×{ny}"),
            ));
        }
        self.image_size = (nx, ny);
        Ok(self)
    }

    /// Number of pictures averaged into each recorded frame.
    pub fn with_pictures(mut self, n_pictures: u32) -> Result<Self> {
        if n_pictures < 1 {
            return Err(Error::config(
                "scenario.n_pictures",
                "need at least one picture per frame",
            ));
        }
        self.n_pictures = n_pictures;
        Ok(self)
    }

    /// Expected camera counts deposited by one shot.
    pub fn with_counts_per_shot(mut self, counts_per_shot: f64) -> Result<Self> {
        if !(counts_per_shot.is_finite() && counts_per_shot > 0.0) {
            return Err(Error::config(
                "scenario.counts_per_shot",
                format!("counts per shot must be positive, got {counts_per_shot}"),
            ));
        }
        self.counts_per_shot = counts_per_shot;
        Ok(self)
    }

    /// Richardson–Lucy settings applied to the cleaned frames.
    pub fn with_deconvolution(mut self, iterations: u32, filter_floor: f64) -> Result<Self> {
        if iterations < 1 {
            return Err(Error::config(
                "scenario.rl_iterations",
                "deconvolution needs at least one iteration",
            ));
        }
        if !(filter_floor.is_finite() && filter_floor >= 0.0) {
            return Err(Error::config(
                "scenario.rl_filter_floor",
                format!("filter floor must be nonnegative and finite, got {filter_floor}"),
            ));
        }
        self.rl_iterations = iterations;
        self.rl_filter_floor = filter_floor;
        Ok(self)
    }

    /// Size of the parametric bootstrap ensemble.
    pub fn with_bootstrap_replicas(mut self, n_replicas: usize) -> Result<Self> {
        if n_replicas < 2 {
            return Err(Error::config(
                "scenario.bootstrap_replicas",
                format!("need at least two replicas for a spread estimate, got {n_replicas}"),
            ));
        }
        self.bootstrap_replicas = n_replicas;
        Ok(self)
    }

    pub fn trap(&self) -> &TrapModel {
        &self.trap
    }

    pub fn mixture(&self) -> &MixtureSpec {
        &self.mixture
    }

    pub fn displacement(&self) -> f64 {
        self.displacement
    }

    pub fn depth_jump_ratio(&self) -> f64 {
        self.depth_jump_ratio
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn imaging(&self) -> &ImagingGeometry {
        &self.imaging
    }

    pub fn psf(&self) -> &PsfModel {
        &self.psf
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    pub fn mle(&self) -> &MleConfig {
        &self.mle
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn image_size(&self) -> (usize, usize) {
        self.image_size
    }

    pub fn n_pictures(&self) -> u32 {
        self.n_pictures
    }

    pub fn counts_per_shot(&self) -> f64 {
        self.counts_per_shot
    }

    pub fn rl_iterations(&self) -> u32 {
        self.rl_iterations
    }

    pub fn rl_filter_floor(&self) -> f64 {
        self.rl_filter_floor
    }

    pub fn bootstrap_replicas(&self) -> usize {
        self.bootstrap_replicas
    }
}

/// Runs a full synthetic tomography scenario.
///
/// The chain per evolution angle θ: hold the prepared state for t = θ/ω in
/// the jumped trap, render the momentum distribution onto the camera
/// (transverse axis in its motional ground state), blur with the optical
/// point-spread function, add camera noise, subtract an independently noisy
/// background frame, deconvolve, and integrate the frame into a quadrature
/// histogram labeled with the equivalent angle −θ (mod 2π). The collected
/// histograms feed the maximum-likelihood reconstruction; the returned Wigner
/// grid samples the reconstructed state over its full phase-space support,
/// and the bootstrap report carries the statistical error bands.
///
/// Angle jobs run in parallel but derive their noise streams from the angle
/// index alone, so the outcome is independent of thread count and repeats bit
/// for bit for a fixed configuration.
pub fn run_tomography_scenario(
    cfg: &ScenarioConfig,
) -> Result<(MleResult, WignerGrid, BootstrapReport)> {
    let (_, result, grid, report) = run_tomography_scenario_with_dataset(cfg)?;
    Ok((result, grid, report))
}

/// [`run_tomography_scenario`], additionally returning the simulated
/// quadrature dataset so callers can persist it.
pub fn run_tomography_scenario_with_dataset(
    cfg: &ScenarioConfig,
) -> Result<(QuadratureDataset, MleResult, WignerGrid, BootstrapReport)> {
    let rho0 = prepare_state(&cfg.mixture, &cfg.trap, cfg.displacement, cfg.depth_jump_ratio)?;
    // The prepared state lives in the post-jump basis; evolution, imaging,
    // and reconstruction all happen in the jumped trap.
    let model = cfg.trap.rescaled_by_depth(cfg.depth_jump_ratio)?;
    let spec = *model.spec();
    let omega = spec.omega();
    let eig = hamiltonian_eig(&model)?;

    let histograms: Vec<QuadratureHistogram> = cfg
        .angles
        .par_iter()
        .enumerate()
        .map(|(index, &theta)| {
            simulate_angle(&rho0, &eig, omega, theta, index, cfg, &spec)
                .map_err(|error| annotate_angle(error, index, theta))
        })
        .collect::<Result<_>>()?;

    let dataset = QuadratureDataset::from_histograms(&histograms)?;
    let result = reconstruct(&dataset, &cfg.mle, &spec)?;

    let axis = negativity_axis_for(spec.n_max());
    let grid = wigner(&result.rho, &axis, &axis)?;

    let (nx, _) = cfg.image_size;
    let bootstrap_cfg = BootstrapConfig::new(
        cfg.bootstrap_replicas,
        replica_noise_model(&cfg.noise)?,
        cfg.rl_iterations,
        cfg.rl_filter_floor,
        derive_seed(cfg.seed, 1, 0),
        cfg.imaging,
        cfg.psf,
    )?
    .with_pictures(cfg.n_pictures)?
    .with_counts_per_shot(cfg.counts_per_shot)?
    .with_image_width(nx)?;
    let labels: Vec<f64> = histograms.iter().map(|h| h.theta).collect();
    let report = run_bootstrap(&result.rho, &labels, &bootstrap_cfg, &cfg.mle, &spec)?;
    Ok((dataset, result, grid, report))
}

/// Simulates one evolution angle through the full imaging chain.
fn simulate_angle(
    rho0: &DensityMatrix,
    eig: &HermEig,
    omega: f64,
    theta: f64,
    index: usize,
    cfg: &ScenarioConfig,
    spec: &OscillatorSpec,
) -> Result<QuadratureHistogram> {
    let (nx, ny) = cfg.image_size;
    let rho_t = evolve_with_eig(rho0, eig, omega, theta / omega)?;

    // Fine momentum grid with RENDER_OVERSAMPLE samples per pixel on both
    // axes; the half-sample offset keeps samples off pixel boundaries.
    let pixel_momentum = cfg.imaging.momentum_per_pixel(spec.mass());
    let fine_axis = |pixels: usize| -> Vec<f64> {
        let count = pixels * RENDER_OVERSAMPLE;
        let step = pixel_momentum / RENDER_OVERSAMPLE as f64;
        (0..count)
            .map(|i| (i as f64 - 0.5 * (count as f64 - 1.0)) * step)
            .collect()
    };
    let px_axis = fine_axis(nx);
    let py_axis = fine_axis(ny);

    // Along the imaging axis the expansion maps momentum to position, so the
    // rendered profile at this hold time is the θ = 0 quadrature
    // distribution of the evolved state, converted to density per unit
    // momentum. The transverse axis stays in the motional ground state: a
    // unit-mass Gaussian with RMS momentum p0.
    let p0 = spec.p0();
    let u_grid: Vec<f64> = px_axis.iter().map(|p| p / p0).collect();
    let profile = quadrature_distribution(&rho_t, 0.0, &u_grid, spec)?;
    let transverse: Vec<f64> = py_axis
        .iter()
        .map(|&p| {
            let v = p / p0;
            (-0.5 * v * v).exp() / (TAU.sqrt() * p0)
        })
        .collect();
    let values: Vec<Vec<f64>> = profile
        .iter()
        .map(|&d| {
            let row = d / p0;
            transverse.iter().map(|&g| row * g).collect()
        })
        .collect();
    let density = MomentumDensity::new(px_axis, py_axis, values, cfg.counts_per_shot)?;

    let rendered = momentum_to_image(&density, &cfg.imaging, spec, nx, ny)?;
    let blurred = convolve_psf(&rendered, &cfg.psf)?;
    // The render produces a single ideal frame; the recorded data are
    // N-picture averages, which sets the noise scaling below.
    let averaged = ImageFrame::new(blurred.counts().to_vec(), cfg.imaging, cfg.n_pictures)?;

    let signal = sample_camera_noise(
        &averaged,
        &cfg.noise,
        derive_seed(cfg.seed, 0, 2 * index as u64),
    )?;
    let dark = ImageFrame::new(vec![vec![0.0; nx]; ny], cfg.imaging, cfg.n_pictures)?;
    let background = sample_camera_noise(
        &dark,
        &cfg.noise,
        derive_seed(cfg.seed, 0, 2 * index as u64 + 1),
    )?;
    let cleaned = subtract_background(&signal, &background)?;

    let deconvolved = richardson_lucy(&cleaned, &cfg.psf, cfg.rl_iterations, cfg.rl_filter_floor)?;
    image_to_quadrature(&deconvolved, equivalent_angle(theta), spec)
}

/// Adds which angle of the schedule degenerated to data-quality failures.
fn annotate_angle(error: Error, index: usize, theta: f64) -> Error {
    match error {
        Error::DegenerateData(message) => Error::degenerate(format!(
            "scenario angle {index} (theta = {theta:.6}): {message}"
        )),
        other => other,
    }
}

/// Noise model used for the bootstrap's synthetic replicas.
///
/// The measured frames are background-subtracted before reconstruction, so
/// the constant count offset cancels and is dropped. The subtraction of an
/// independently noisy background doubles the noise variance of the cleaned
/// frames, so the Gaussian amplitudes (readout noise and the averaged-frame
/// scale factor) are inflated by √2 to match the data the replicas model.
/// Clock-induced-charge spikes have no symmetric counterpart in the replica
/// model and are carried over at their nominal rate.
fn replica_noise_model(noise: &NoiseModel) -> Result<NoiseModel> {
    let stripped = NoiseModel::new(
        noise.cic_rate,
        noise.em_gain_mean,
        noise.readout_sigma * std::f64::consts::SQRT_2,
        0.0,
        noise.averaged_noise_amplitude,
        noise.noise_scale_factor * std::f64::consts::SQRT_2,
    )?;
    match noise.per_column_amplitude() {
        Some(columns) => stripped.with_per_column_amplitude(columns.to_vec()),
        None => Ok(stripped),
    }
}

/// Uniform barycentric grid over the three-state mixture simplex
/// {(p0, p1, p2) : p ≥ 0, p0 + p1 + p2 = 1}.
///
/// `spacing` must divide 1 into an integer number of steps; the points are
/// ordered lexicographically in (p0, p1).
pub fn simplex_grid(spacing: f64) -> Result<Vec<[f64; 3]>> {
    if !(spacing.is_finite() && spacing > 0.0 && spacing <= 1.0) {
        return Err(Error::config(
            "grid.spacing",
            format!("spacing must lie in (0, 1], got {spacing}"),
        ));
    }
    let steps = (1.0 / spacing).round();
    if (steps * spacing - 1.0).abs() > 1e-9 {
        return Err(Error::config(
            "grid.spacing",
            format!("1/spacing must be an integer, got spacing {spacing}"),
        ));
    }
    let n = steps as usize;
    let mut points = Vec::with_capacity((n + 1) * (n + 2) / 2);
    for i in 0..=n {
        for j in 0..=(n - i) {
            let k = n - i - j;
            points.push([
                i as f64 / n as f64,
                j as f64 / n as f64,
                k as f64 / n as f64,
            ]);
        }
    }
    Ok(points)
}

/// Reconstruction quality over a set of mixture points: per-point fidelity
/// between the prepared state and its reconstruction, and the Wigner minimum
/// of both.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessMap {
    points: Vec<[f64; 3]>,
    fidelities: Vec<f64>,
    gamma_true: Vec<f64>,
    gamma_mle: Vec<f64>,
}

impl RobustnessMap {
    /// Mixture points, in the order the map was computed.
    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    /// Fidelity F(ρ(0), ρ_MLE) per point, clamped to [0, 1].
    pub fn fidelities(&self) -> &[f64] {
        &self.fidelities
    }

    /// Wigner minimum of the prepared state per point.
    pub fn gamma_true(&self) -> &[f64] {
        &self.gamma_true
    }

    /// Wigner minimum of the reconstructed state per point.
    pub fn gamma_mle(&self) -> &[f64] {
        &self.gamma_mle
    }

    /// Per-point bias γ − γ_MLE of the Wigner minimum.
    pub fn delta_gamma(&self) -> Vec<f64> {
        self.gamma_true
            .iter()
            .zip(&self.gamma_mle)
            .map(|(t, m)| t - m)
            .collect()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "points": self.points,
            "fidelity": self.fidelities,
            "gamma_true": self.gamma_true,
            "gamma_mle": self.gamma_mle,
            "delta_gamma": self.delta_gamma(),
        })
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_json())
            .map_err(|e| Error::numeric(format!("robustness map serialization failed: {e}")))?;
        atomic_write(path.as_ref(), &text)
    }
}

/// Maps reconstruction bias from unmodeled anharmonicity over mixture space.
///
/// For each grid point P the prepared state is the displaced mixture defined
/// in the harmonic reference trap. Its evolution, however, follows the given
/// (generally anharmonic) trap over a 64-angle uniform schedule t = θ/ω with
/// the bare harmonic ω, and the resulting exact, noise- and blur-free
/// momentum distributions feed the harmonic-model reconstruction. The map
/// records per point the fidelity against the prepared state and the Wigner
/// minima of both states; with λ = 0 the chain closes on itself and the
/// fidelities stay at 1 up to solver tolerance.
pub fn run_anharmonic_robustness(
    p_grid: &[[f64; 3]],
    trap: &TrapModel,
    displacement: f64,
    mle_cfg: &MleConfig,
) -> Result<RobustnessMap> {
    if p_grid.is_empty() {
        return Err(Error::invalid("robustness map needs at least one mixture point"));
    }
    if !displacement.is_finite() {
        return Err(Error::config(
            "robustness.displacement",
            format!("displacement must be finite, got {displacement}"),
        ));
    }
    if mle_cfg.n_max() != trap.spec().n_max() {
        return Err(Error::config(
            "robustness.mle",
            format!(
                "reconstruction basis (n_max {}) must match the trap basis (n_max {})",
                mle_cfg.n_max(),
                trap.spec().n_max()
            ),
        ));
    }

    let spec = *trap.spec();
    let omega = spec.omega();
    let harmonic = TrapModel::harmonic(spec);
    let eig = hamiltonian_eig(trap)?;

    let thetas: Vec<f64> = (0..ROBUSTNESS_ANGLE_COUNT)
        .map(|j| j as f64 * TAU / ROBUSTNESS_ANGLE_COUNT as f64)
        .collect();
    let u_half = ((2 * spec.n_max() + 1) as f64).sqrt() + 2.0;
    let u_grid = symmetric_axis(u_half, ROBUSTNESS_U_POINTS);
    let du = u_grid[1] - u_grid[0];
    let axis = negativity_axis_for(spec.n_max());

    let rows: Vec<(f64, f64, f64)> = p_grid
        .par_iter()
        .map(|&p| -> Result<(f64, f64, f64)> {
            let mix = MixtureSpec::new(p[0], p[1], p[2])?;
            let rho0 = prepare_state(&mix, &harmonic, displacement, 1.0)?;
            let mut histograms = Vec::with_capacity(thetas.len());
            for &theta in &thetas {
                let rho_t = evolve_with_eig(&rho0, &eig, omega, theta / omega)?;
                let density = quadrature_distribution(&rho_t, 0.0, &u_grid, &spec)?;
                let total: f64 = density.iter().sum::<f64>() * du;
                if total <= 0.0 {
                    return Err(Error::degenerate(format!(
                        "mixture ({:.3}, {:.3}, {:.3}) produced an empty distribution",
                        p[0], p[1], p[2]
                    )));
                }
                let weights: Vec<f64> = density.iter().map(|d| d * du / total).collect();
                histograms.push(QuadratureHistogram {
                    theta: equivalent_angle(theta),
                    u: u_grid.clone(),
                    weights,
                    clamped_fraction: 0.0,
                });
            }
            let dataset = QuadratureDataset::from_histograms(&histograms)?;
            let mle = reconstruct(&dataset, mle_cfg, &spec)?;
            let f = fidelity(&rho0, &mle.rho)?.clamp(0.0, 1.0);
            let gamma_true = negativity(&wigner(&rho0, &axis, &axis)?).value;
            let gamma_mle = negativity(&wigner(&mle.rho, &axis, &axis)?).value;
            Ok((f, gamma_true, gamma_mle))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut fidelities = Vec::with_capacity(rows.len());
    let mut gamma_true = Vec::with_capacity(rows.len());
    let mut gamma_mle = Vec::with_capacity(rows.len());
    for (f, g_true, g_mle) in rows {
        fidelities.push(f);
        gamma_true.push(g_true);
        gamma_mle.push(g_mle);
    }
    Ok(RobustnessMap {
        points: p_grid.to_vec(),
        fidelities,
        gamma_true,
        gamma_mle,
    })
}

/// The two reference mixtures whose noise response the bias study tabulates:
/// the coherent-calibration populations and the Fock-superposition
/// populations.
pub fn standard_bias_mixtures() -> Vec<MixtureSpec> {
    [defaults::POPULATIONS_COHERENT, defaults::POPULATIONS_FOCK]
        .iter()
        .map(|p| {
            MixtureSpec::new(p[0], p[1], p[2]).expect("default populations form a valid mixture")
        })
        .collect()
}

/// Tabulates reconstruction bias against the averaged-frame noise amplitude
/// for a set of base mixtures.
///
/// Each mixture defines an undisplaced base state in the harmonic trap; per
/// noise level, repeated synthetic experiments are reconstructed and their
/// population means, Wigner-minimum means, and 95% bands collected into one
/// table per mixture. A zero noise level makes the first table column a
/// direct self-consistency check against the base populations.
pub fn run_noise_bias_study(
    mixtures: &[MixtureSpec],
    noise_levels: &[f64],
    cfg: &BootstrapConfig,
    mle_cfg: &MleConfig,
    angles: &[f64],
    spec: &OscillatorSpec,
    n_sims: usize,
) -> Result<Vec<NoiseBiasTable>> {
    if mixtures.is_empty() {
        return Err(Error::invalid("noise-bias study needs at least one base mixture"));
    }
    let harmonic = TrapModel::harmonic(*spec);
    mixtures
        .iter()
        .map(|mix| {
            let base = prepare_state(mix, &harmonic, 0.0, 1.0)?;
            noise_bias_sweep(&base, noise_levels, cfg, mle_cfg, angles, spec, n_sims)
        })
        .collect()
}

/// Writes a scenario's outputs into `dir`: the simulated quadrature records
/// (`quadratures.csv`), the reconstructed state (`density_matrix.json`), the
/// Wigner grid (`wigner.csv` with columns x, p, value), and the bootstrap
/// report (`bootstrap.json`).
pub fn save_scenario_outputs(
    dir: impl AsRef<Path>,
    dataset: &QuadratureDataset,
    result: &MleResult,
    grid: &WignerGrid,
    report: &BootstrapReport,
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_quadrature_csv(dataset.records(), dir.join("quadratures.csv"))?;
    save_result(result, dir.join("density_matrix.json"))?;

    let mut csv = String::from("x,p,value\n");
    for (i, x) in grid.x_axis().iter().enumerate() {
        for (j, p) in grid.p_axis().iter().enumerate() {
            csv.push_str(&format!("{x},{p},{}\n", grid.values()[i][j]));
        }
    }
    atomic_write(&dir.join("wigner.csv"), &csv)?;

    report.save_json(dir.join("bootstrap.json"))?;
    Ok(())
}
