//! Parametric bootstrap error bars for reconstructed states.
//!
//! A single tomography run yields one maximum-likelihood density matrix and
//! no uncertainty. The bootstrap treats that estimate as the truth and
//! replays the whole measurement chain on top of it: predicted quadrature
//! profiles are rendered into synthetic camera rows, camera noise is added,
//! and each synthetic dataset is deconvolved and reconstructed with exactly
//! the settings used for the real data. The spread of the re-estimated
//! quantities across the ensemble gives per-element standard deviations,
//! Wigner-negativity statistics, and empirical percentile bands.
//!
//! The same machinery drives the noise-bias study: sweeping the injected
//! per-bin noise amplitude from zero upward and tracking how the recovered
//! populations and the Wigner minimum drift quantifies the bias that the
//! camera noise floor imprints on the reconstruction.

use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde_json::json;

use crate::dynamics::quadrature_distribution;
use crate::error::{Error, Result};
use crate::fock::{negativity, symmetric_axis, wigner, wigner_at, DensityMatrix, OscillatorSpec};
use crate::imaging::{
    image_to_quadrature, richardson_lucy, sample_camera_noise, ImageFrame, ImagingGeometry,
    NoiseModel, PsfModel,
};
use crate::ioutil::atomic_write;
use crate::mle::{reconstruct, MleConfig, QuadratureDataset};
use crate::stats::{mean, percentile, sample_std};

/// Standard-deviation stand-in for a point-like PSF: far narrower than any
/// pixel, so the blur kernel degenerates to the identity.
pub const DELTA_PSF_SIGMA: f64 = 1e-12;

/// Grid step (in natural phase-space units) of the negativity axis.
const NEGATIVITY_STEP: f64 = 0.05;

/// Phase-space axis for negativity estimates, sized to the truncated basis:
/// the classical turning point of the highest level plus a three-unit
/// Gaussian skirt, so the Wigner function of any state in the basis is
/// essentially fully contained.
pub(crate) fn negativity_axis_for(n_max: usize) -> Vec<f64> {
    let support = ((2 * n_max + 1) as f64).sqrt() + 3.0;
    let steps = (support / NEGATIVITY_STEP).ceil() as usize;
    symmetric_axis(steps as f64 * NEGATIVITY_STEP, 2 * steps + 1)
}

/// SplitMix64 output function. Bijective on `u64`, so chaining it never
/// collapses distinct inputs.
fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent RNG seed for one noise stream of one replica.
/// Mixing after each ingredient keeps nearby (replica, stream) pairs far
/// apart in seed space.
pub(crate) fn derive_seed(base: u64, replica: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(base) ^ replica) ^ stream)
}

/// Settings for the synthetic-replica pipeline.
///
/// The geometry, PSF, and Richardson–Lucy parameters must match the ones the
/// real analysis used: every replica is pushed through the same deconvolution
/// and integration as the measured frames, so the reported spread includes
/// the variance that processing injects.
#[derive(Debug, Clone)]
pub struct BootstrapConfig {
    n_replicas: usize,
    noise: NoiseModel,
    rl_iterations: u32,
    rl_filter_floor: f64,
    seed: u64,
    pipeline_geometry: ImagingGeometry,
    psf: PsfModel,
    n_pictures: u32,
    counts_per_shot: f64,
    image_width: usize,
    projection_shots: Option<u64>,
}

impl BootstrapConfig {
    pub fn new(
        n_replicas: usize,
        noise: NoiseModel,
        rl_iterations: u32,
        rl_filter_floor: f64,
        seed: u64,
        pipeline_geometry: ImagingGeometry,
        psf: PsfModel,
    ) -> Result<Self> {
        if n_replicas < 2 {
            return Err(Error::config(
                "bootstrap.n_replicas",
                format!("need at least two replicas for a spread estimate, got {n_replicas}"),
            ));
        }
        if rl_iterations < 1 {
            return Err(Error::config(
                "bootstrap.rl_iterations",
                "deconvolution needs at least one iteration",
            ));
        }
        if !(rl_filter_floor.is_finite() && rl_filter_floor >= 0.0) {
            return Err(Error::config(
                "bootstrap.rl_filter_floor",
                format!("must be nonnegative and finite, got {rl_filter_floor}"),
            ));
        }
        if noise.offset != 0.0 {
            return Err(Error::config(
                "bootstrap.noise.offset",
                "synthetic replicas are background-subtracted; a constant count offset would \
                 bias every band",
            ));
        }
        Ok(Self {
            n_replicas,
            noise,
            rl_iterations,
            rl_filter_floor,
            seed,
            pipeline_geometry,
            psf,
            n_pictures: 100,
            counts_per_shot: crate::constants::defaults::counts_per_shot(),
            image_width: 201,
            projection_shots: None,
        })
    }

    /// Number of camera frames averaged per synthetic image (scales the
    /// per-pixel noise as 1/√N).
    pub fn with_pictures(mut self, n_pictures: u32) -> Result<Self> {
        if n_pictures < 1 {
            return Err(Error::config(
                "bootstrap.n_pictures",
                "averaging depth must be at least one frame",
            ));
        }
        self.n_pictures = n_pictures;
        Ok(self)
    }

    /// Total fluorescence counts a single atom contributes to one frame.
    pub fn with_counts_per_shot(mut self, counts_per_shot: f64) -> Result<Self> {
        if !(counts_per_shot.is_finite() && counts_per_shot > 0.0) {
            return Err(Error::config(
                "bootstrap.counts_per_shot",
                format!("must be strictly positive, got {counts_per_shot}"),
            ));
        }
        self.counts_per_shot = counts_per_shot;
        Ok(self)
    }

    /// Width of the synthetic image row in pixels.
    pub fn with_image_width(mut self, image_width: usize) -> Result<Self> {
        if image_width < 2 {
            return Err(Error::config(
                "bootstrap.image_width",
                "a quadrature histogram needs at least two pixels",
            ));
        }
        self.image_width = image_width;
        Ok(self)
    }

    /// Adds quantum projection noise by resampling each profile as `shots`
    /// discrete measurement outcomes before rendering. Off by default: the
    /// averaged-frame noise floor dominates projection noise in the regime
    /// this pipeline models.
    pub fn with_projection_shots(mut self, shots: u64) -> Result<Self> {
        if shots < 1 {
            return Err(Error::config(
                "bootstrap.projection_shots",
                "projection resampling needs at least one shot",
            ));
        }
        self.projection_shots = Some(shots);
        Ok(self)
    }

    pub fn n_replicas(&self) -> usize {
        self.n_replicas
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    pub fn rl_iterations(&self) -> u32 {
        self.rl_iterations
    }

    pub fn rl_filter_floor(&self) -> f64 {
        self.rl_filter_floor
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn pipeline_geometry(&self) -> &ImagingGeometry {
        &self.pipeline_geometry
    }

    pub fn psf(&self) -> &PsfModel {
        &self.psf
    }

    pub fn n_pictures(&self) -> u32 {
        self.n_pictures
    }

    pub fn counts_per_shot(&self) -> f64 {
        self.counts_per_shot
    }

    pub fn image_width(&self) -> usize {
        self.image_width
    }

    pub fn projection_shots(&self) -> Option<u64> {
        self.projection_shots
    }
}

/// Conditional-binomial multinomial sampler. Returns masses rescaled so the
/// total is preserved exactly while each entry becomes a multiple of
/// `total / shots`.
fn multinomial_resample(masses: &[f64], shots: u64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let clamped: Vec<f64> = masses.iter().map(|m| m.max(0.0)).collect();
    let total: f64 = clamped.iter().sum();
    let mut out = vec![0.0; masses.len()];
    if !(total > 0.0) {
        return out;
    }
    let mut remaining_shots = shots;
    let mut remaining_mass = total;
    let last = clamped.len() - 1;
    for (i, &m) in clamped.iter().enumerate() {
        if remaining_shots == 0 {
            break;
        }
        let k = if i == last || remaining_mass <= m {
            remaining_shots
        } else {
            let p = (m / remaining_mass).clamp(0.0, 1.0);
            Binomial::new(remaining_shots, p)
                .expect("binomial probability is clamped to [0, 1]")
                .sample(rng)
        };
        out[i] = (k as f64 / shots as f64) * total;
        remaining_shots -= k;
        remaining_mass -= m;
    }
    out
}

/// Renders one synthetic quadrature dataset from a reconstructed state.
///
/// For every angle the predicted quadrature distribution is laid onto a
/// single camera row without optical blur (the prediction already lives in
/// the image plane), camera noise is sampled at the configured averaging
/// depth, and the row is deconvolved and integrated exactly as a measured
/// frame would be. The result is deterministic in `(cfg.seed, replica_index)`
/// and independent of threading.
pub fn synthesize_replica(
    rho_mle: &DensityMatrix,
    angles: &[f64],
    cfg: &BootstrapConfig,
    replica_index: usize,
    spec: &OscillatorSpec,
) -> Result<QuadratureDataset> {
    if angles.is_empty() {
        return Err(Error::invalid(
            "synthetic replicas need at least one quadrature angle",
        ));
    }
    if angles.iter().any(|t| !t.is_finite()) {
        return Err(Error::invalid("quadrature angles must be finite"));
    }
    if rho_mle.dim() != spec.dim() {
        return Err(Error::dims(format!(
            "state dimension {} does not match oscillator dimension {}",
            rho_mle.dim(),
            spec.dim()
        )));
    }
    let nx = cfg.image_width;
    let du = cfg.pipeline_geometry.u_per_pixel(spec);
    let u_grid: Vec<f64> = (0..nx)
        .map(|i| (i as f64 - 0.5 * (nx as f64 - 1.0)) * du)
        .collect();
    // A one-row frame cannot be deconvolved along y: the vertical kernel
    // would average the single row against zero padding and leak most of the
    // mass off-frame. Only the horizontal PSF applies to synthetic rows.
    let row_psf = PsfModel::new(cfg.psf.sigma_x(), DELTA_PSF_SIGMA)?;
    let mut histograms = Vec::with_capacity(angles.len());
    for (j, &theta) in angles.iter().enumerate() {
        let density = quadrature_distribution(rho_mle, theta, &u_grid, spec)?;
        let mut masses: Vec<f64> = density.iter().map(|d| (d * du).max(0.0)).collect();
        if let Some(shots) = cfg.projection_shots {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                cfg.seed,
                replica_index as u64,
                2 * j as u64,
            ));
            masses = multinomial_resample(&masses, shots, &mut rng);
        }
        let counts: Vec<f64> = masses.iter().map(|m| m * cfg.counts_per_shot).collect();
        let frame = ImageFrame::new(vec![counts], cfg.pipeline_geometry.clone(), cfg.n_pictures)?;
        let noisy = sample_camera_noise(
            &frame,
            &cfg.noise,
            derive_seed(cfg.seed, replica_index as u64, 2 * j as u64 + 1),
        )?;
        let deconvolved = richardson_lucy(&noisy, &row_psf, cfg.rl_iterations, cfg.rl_filter_floor)?;
        histograms.push(image_to_quadrature(&deconvolved, theta, spec)?);
    }
    QuadratureDataset::from_histograms(&histograms)
}

/// Ensemble statistics over reconstructed bootstrap replicas.
#[derive(Debug, Clone)]
pub struct BootstrapReport {
    replica_rhos: Vec<DensityMatrix>,
    replica_converged: Vec<bool>,
    replica_negativities: Vec<f64>,
    negativity_mean: f64,
    negativity_std: f64,
    negativity_band: (f64, f64),
    element_means: DMatrix<f64>,
    element_stds: DMatrix<f64>,
    failures: Vec<String>,
}

impl BootstrapReport {
    /// Reconstructed density matrix of every successful replica, in replica
    /// order.
    pub fn replica_rhos(&self) -> &[DensityMatrix] {
        &self.replica_rhos
    }

    /// Whether the iteration converged for each replica. Non-converged
    /// replicas stay in the ensemble — their estimate is still the best
    /// available for that draw — but the flag lets callers audit them.
    pub fn replica_converged(&self) -> &[bool] {
        &self.replica_converged
    }

    pub fn replica_negativities(&self) -> &[f64] {
        &self.replica_negativities
    }

    pub fn negativity_mean(&self) -> f64 {
        self.negativity_mean
    }

    pub fn negativity_std(&self) -> f64 {
        self.negativity_std
    }

    /// Empirical central 95% interval (2.5th to 97.5th percentile) of the
    /// replica negativities.
    pub fn negativity_band(&self) -> (f64, f64) {
        self.negativity_band
    }

    /// Ensemble mean of the real part of each density-matrix element.
    pub fn element_means(&self) -> &DMatrix<f64> {
        &self.element_means
    }

    /// Ensemble standard deviation of the real part of each element — the
    /// per-element error bar.
    pub fn element_stds(&self) -> &DMatrix<f64> {
        &self.element_stds
    }

    /// Messages from replicas whose synthetic data was degenerate. These
    /// replicas were replaced (the ensemble always holds `n_replicas`
    /// successes) but the record of every failure is kept.
    pub fn failures(&self) -> &[String] {
        &self.failures
    }

    pub fn n_failures(&self) -> usize {
        self.failures.len()
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "n_replicas": self.replica_rhos.len(),
            "n_failures": self.failures.len(),
            "failures": self.failures,
            "replica_converged": self.replica_converged,
            "replica_negativities": self.replica_negativities,
            "negativity": {
                "mean": self.negativity_mean,
                "std": self.negativity_std,
                "band": [self.negativity_band.0, self.negativity_band.1],
            },
            "element_means": matrix_rows(&self.element_means),
            "element_stds": matrix_rows(&self.element_stds),
        })
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_json())
            .map_err(|e| Error::numeric(format!("report serialization failed: {e}")))?;
        atomic_write(path.as_ref(), &text)
    }

    /// Writes one JSON file per replica density matrix into `dir` (created
    /// if missing): real and imaginary parts row by row plus the convergence
    /// flag.
    pub fn save_replicas(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (index, (rho, converged)) in self
            .replica_rhos
            .iter()
            .zip(&self.replica_converged)
            .enumerate()
        {
            let m = rho.matrix();
            let dim = rho.dim();
            let re: Vec<Vec<f64>> = (0..dim)
                .map(|r| (0..dim).map(|c| m[(r, c)].re).collect())
                .collect();
            let im: Vec<Vec<f64>> = (0..dim)
                .map(|r| (0..dim).map(|c| m[(r, c)].im).collect())
                .collect();
            let value = json!({
                "dim": dim,
                "re": re,
                "im": im,
                "converged": converged,
            });
            let text = serde_json::to_string_pretty(&value)
                .map_err(|e| Error::numeric(format!("replica serialization failed: {e}")))?;
            atomic_write(&dir.join(format!("replica_{index:04}.json")), &text)?;
        }
        Ok(())
    }
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| m[(r, c)]).collect())
        .collect()
}

enum ReplicaOutcome {
    Success {
        rho: DensityMatrix,
        converged: bool,
        gamma: f64,
    },
    Failed(String),
}

/// Runs the full parametric bootstrap around a reconstructed state.
///
/// Replicas are synthesized and reconstructed in parallel; results are
/// reduced in replica order, so a fixed `(seed, config)` produces a
/// bit-identical report at any thread count. Replicas whose synthetic data
/// degenerates (for example when noise wipes out the signal) are recorded
/// and replaced by fresh replica indices; if more than one attempt in five
/// fails, the run aborts — at that point the ensemble no longer measures the
/// state's uncertainty.
pub fn run_bootstrap(
    rho_mle: &DensityMatrix,
    angles: &[f64],
    cfg: &BootstrapConfig,
    mle_cfg: &MleConfig,
    spec: &OscillatorSpec,
) -> Result<BootstrapReport> {
    let axis = negativity_axis_for(spec.n_max());
    let run_one = |index: usize| -> Result<ReplicaOutcome> {
        let dataset = match synthesize_replica(rho_mle, angles, cfg, index, spec) {
            Ok(d) => d,
            Err(Error::DegenerateData(msg)) => {
                return Ok(ReplicaOutcome::Failed(format!("replica {index}: {msg}")));
            }
            Err(e) => return Err(e),
        };
        let result = match reconstruct(&dataset, mle_cfg, spec) {
            Ok(r) => r,
            Err(Error::DegenerateData(msg)) => {
                return Ok(ReplicaOutcome::Failed(format!("replica {index}: {msg}")));
            }
            Err(e) => return Err(e),
        };
        let grid = wigner(&result.rho, &axis, &axis)?;
        let gamma = negativity(&grid).value;
        Ok(ReplicaOutcome::Success {
            rho: result.rho,
            converged: result.converged,
            gamma,
        })
    };

    let target = cfg.n_replicas;
    let cap = 2 * target;
    let mut successes: Vec<(DensityMatrix, bool, f64)> = Vec::with_capacity(target);
    let mut failures: Vec<String> = Vec::new();
    let mut attempted = 0usize;
    while successes.len() < target {
        let need = target - successes.len();
        let end = (attempted + need).min(cap);
        if end == attempted {
            return Err(Error::degenerate(format!(
                "bootstrap aborted: only {} of {target} replicas reconstructed after {attempted} \
                 attempts; first failure: {}",
                successes.len(),
                failures.first().map(String::as_str).unwrap_or("none recorded"),
            )));
        }
        let batch: Vec<ReplicaOutcome> = (attempted..end)
            .into_par_iter()
            .map(run_one)
            .collect::<Result<Vec<_>>>()?;
        attempted = end;
        for outcome in batch {
            match outcome {
                ReplicaOutcome::Success { rho, converged, gamma } => {
                    successes.push((rho, converged, gamma));
                }
                ReplicaOutcome::Failed(msg) => {
                    log::warn!("{msg}");
                    failures.push(msg);
                }
            }
        }
        if 5 * failures.len() > attempted {
            return Err(Error::degenerate(format!(
                "bootstrap aborted: {} of {attempted} synthetic replicas produced degenerate \
                 data (more than one in five); first failure: {}",
                failures.len(),
                failures.first().map(String::as_str).unwrap_or("none recorded"),
            )));
        }
    }

    let gammas: Vec<f64> = successes.iter().map(|s| s.2).collect();
    let negativity_mean = mean(&gammas);
    let negativity_std = sample_std(&gammas);
    let negativity_band = (percentile(&gammas, 0.025), percentile(&gammas, 0.975));

    let dim = rho_mle.dim();
    let mut element_means = DMatrix::zeros(dim, dim);
    let mut element_stds = DMatrix::zeros(dim, dim);
    let mut buf = Vec::with_capacity(successes.len());
    for r in 0..dim {
        for c in 0..dim {
            buf.clear();
            buf.extend(successes.iter().map(|s| s.0.matrix()[(r, c)].re));
            element_means[(r, c)] = mean(&buf);
            element_stds[(r, c)] = sample_std(&buf);
        }
    }

    let mut replica_rhos = Vec::with_capacity(successes.len());
    let mut replica_converged = Vec::with_capacity(successes.len());
    for (rho, converged, _) in successes {
        replica_rhos.push(rho);
        replica_converged.push(converged);
    }
    Ok(BootstrapReport {
        replica_rhos,
        replica_converged,
        replica_negativities: gammas,
        negativity_mean,
        negativity_std,
        negativity_band,
        element_means,
        element_stds,
        failures,
    })
}

/// Per-noise-level summary of the bias study.
#[derive(Debug, Clone)]
pub struct NoiseBiasRow {
    /// Per-bin RMS noise, in camera counts, injected at this level.
    pub noise_level: f64,
    /// Mean recovered occupation of each level over the simulations.
    pub population_means: Vec<f64>,
    /// Central 95% interval of each occupation.
    pub population_bands: Vec<(f64, f64)>,
    /// Mean recovered Wigner value at the true state's minimum.
    pub wigner_mean: f64,
    /// Central 95% interval of that Wigner value.
    pub wigner_band: (f64, f64),
}

/// Result of [`noise_bias_sweep`]: one row per noise level plus the
/// phase-space point (the true state's Wigner minimum) all rows are
/// evaluated at.
#[derive(Debug, Clone)]
pub struct NoiseBiasTable {
    rows: Vec<NoiseBiasRow>,
    minimum_location: (f64, f64),
}

impl NoiseBiasTable {
    pub fn rows(&self) -> &[NoiseBiasRow] {
        &self.rows
    }

    pub fn minimum_location(&self) -> (f64, f64) {
        self.minimum_location
    }

    pub fn noise_levels(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.noise_level).collect()
    }

    /// Mean total occupation of levels `n_from` and above, one entry per
    /// noise level. The upward drift of this number with noise is the
    /// clearest signature of noise-induced bias.
    pub fn high_occupation_means(&self, n_from: usize) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| {
                let start = n_from.min(r.population_means.len());
                r.population_means[start..].iter().sum()
            })
            .collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "minimum_location": [self.minimum_location.0, self.minimum_location.1],
            "rows": self.rows.iter().map(|r| json!({
                "noise_level": r.noise_level,
                "population_means": r.population_means,
                "population_bands": r.population_bands
                    .iter()
                    .map(|b| vec![b.0, b.1])
                    .collect::<Vec<_>>(),
                "wigner_minimum": {
                    "mean": r.wigner_mean,
                    "band": [r.wigner_band.0, r.wigner_band.1],
                },
            })).collect::<Vec<_>>(),
        })
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_json())
            .map_err(|e| Error::numeric(format!("table serialization failed: {e}")))?;
        atomic_write(path.as_ref(), &text)
    }
}

/// Sweeps the per-bin noise amplitude and measures the bias it imprints.
///
/// For every level, `n_sims` independent synthetic datasets of `base_rho`
/// are rendered with a flat per-bin RMS of `level` counts (independent of
/// the averaging depth) and reconstructed; the table records the recovered
/// populations and the Wigner value at the true state's minimum. The zero
/// level must be part of the sweep — it anchors the bias scale.
pub fn noise_bias_sweep(
    base_rho: &DensityMatrix,
    noise_levels: &[f64],
    cfg: &BootstrapConfig,
    mle_cfg: &MleConfig,
    angles: &[f64],
    spec: &OscillatorSpec,
    n_sims: usize,
) -> Result<NoiseBiasTable> {
    if noise_levels.len() < 2 {
        return Err(Error::config(
            "noise_bias.levels",
            "need at least two noise levels (one of them zero)",
        ));
    }
    if noise_levels.iter().any(|l| !l.is_finite() || *l < 0.0) {
        return Err(Error::config(
            "noise_bias.levels",
            "noise levels must be nonnegative and finite",
        ));
    }
    if !noise_levels.contains(&0.0) {
        return Err(Error::config(
            "noise_bias.levels",
            "the sweep must include the zero level as its bias reference",
        ));
    }
    if n_sims < 2 {
        return Err(Error::config(
            "noise_bias.n_sims",
            format!("need at least two simulations per level, got {n_sims}"),
        ));
    }

    let axis = negativity_axis_for(spec.n_max());
    let base_grid = wigner(base_rho, &axis, &axis)?;
    let (_, x_m, p_m) = base_grid.minimum();

    // The sampler divides the averaged-noise amplitude by √n_pictures; undo
    // that here so each sweep level is the per-bin RMS in counts, whatever
    // the configured averaging depth.
    let level_cfgs: Vec<BootstrapConfig> = noise_levels
        .iter()
        .map(|&level| {
            let mut level_cfg = cfg.clone();
            level_cfg.noise =
                NoiseModel::new(0.0, 0.0, 0.0, 0.0, level * f64::from(cfg.n_pictures).sqrt(), 1.0)?;
            Ok(level_cfg)
        })
        .collect::<Result<_>>()?;

    let dim = spec.dim();
    let sims: Vec<(Vec<f64>, f64)> = (0..noise_levels.len() * n_sims)
        .into_par_iter()
        .map(|flat| {
            let level_cfg = &level_cfgs[flat / n_sims];
            let dataset = synthesize_replica(base_rho, angles, level_cfg, flat, spec)?;
            let result = reconstruct(&dataset, mle_cfg, spec)?;
            let populations: Vec<f64> = (0..dim).map(|n| result.rho.population(n)).collect();
            Ok((populations, wigner_at(&result.rho, x_m, p_m)))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::with_capacity(noise_levels.len());
    for (li, &level) in noise_levels.iter().enumerate() {
        let chunk = &sims[li * n_sims..(li + 1) * n_sims];
        let mut population_means = Vec::with_capacity(dim);
        let mut population_bands = Vec::with_capacity(dim);
        let mut buf = Vec::with_capacity(n_sims);
        for n in 0..dim {
            buf.clear();
            buf.extend(chunk.iter().map(|(p, _)| p[n]));
            population_means.push(mean(&buf));
            population_bands.push((percentile(&buf, 0.025), percentile(&buf, 0.975)));
        }
        let wvals: Vec<f64> = chunk.iter().map(|(_, w)| *w).collect();
        rows.push(NoiseBiasRow {
            noise_level: level,
            population_means,
            population_bands,
            wigner_mean: mean(&wvals),
            wigner_band: (percentile(&wvals, 0.025), percentile(&wvals, 0.975)),
        });
    }
    Ok(NoiseBiasTable {
        rows,
        minimum_location: (x_m, p_m),
    })
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;
    use std::f64::consts::PI;

    use proptest::prelude::*;

    use super::*;
    use crate::constants::{defaults, RB87_MASS};
    use crate::dynamics::{prepare_state, MixtureSpec, TrapModel};
    use crate::fock::fidelity;
    use crate::linalg::{C64, CMat};

    fn spec(n_max: usize) -> OscillatorSpec {
        OscillatorSpec::new(RB87_MASS, defaults::OMEGA_FOCK, n_max).unwrap()
    }

    fn geometry() -> ImagingGeometry {
        ImagingGeometry::new(
            defaults::MAGNIFICATION,
            defaults::FLIGHT_TIME,
            defaults::PIXEL_PITCH,
            defaults::EXPOSURE,
        )
        .unwrap()
    }

    fn delta_psf() -> PsfModel {
        PsfModel::new(DELTA_PSF_SIGMA, DELTA_PSF_SIGMA).unwrap()
    }

    fn averaged_noise(scale: f64) -> NoiseModel {
        NoiseModel::new(
            defaults::CIC_RATE,
            defaults::EM_GAIN_MEAN,
            defaults::READOUT_SIGMA,
            0.0,
            defaults::AVERAGED_NOISE_AMPLITUDE,
            scale,
        )
        .unwrap()
    }

    fn fock_mixture(n_max: usize, p0: f64, p1: f64, p2: f64) -> DensityMatrix {
        let sp = spec(n_max);
        let model = TrapModel::new(sp, 0.0).unwrap();
        prepare_state(&MixtureSpec::new(p0, p1, p2).unwrap(), &model, 0.0, 1.0).unwrap()
    }

    /// Coherent state |ξ⟩ truncated at `n_max` and renormalized.
    fn displaced_vacuum(n_max: usize, xi: f64) -> DensityMatrix {
        let dim = n_max + 1;
        let mut amps = Vec::with_capacity(dim);
        let mut amp = (-0.5 * xi * xi).exp();
        for n in 0..dim {
            if n > 0 {
                amp *= xi / (n as f64).sqrt();
            }
            amps.push(amp);
        }
        let norm: f64 = amps.iter().map(|a| a * a).sum::<f64>().sqrt();
        let mat = CMat::from_fn(dim, dim, |r, c| {
            C64::new(amps[r] * amps[c] / (norm * norm), 0.0)
        });
        DensityMatrix::new(mat).unwrap()
    }

    fn nine_angles() -> Vec<f64> {
        (0..9).map(|k| k as f64 * PI / 9.0).collect()
    }

    #[test]
    fn seed_derivation_is_stable_and_collision_free() {
        // Standard SplitMix64 first output for seed zero.
        assert_eq!(splitmix64(0), 0xE220_A839_7B1D_CDAF);
        let mut seen = HashSet::new();
        for replica in 0..50u64 {
            for stream in 0..20u64 {
                assert!(seen.insert(derive_seed(9, replica, stream)));
            }
        }
    }

    #[test]
    fn config_rejects_bad_parameters() {
        let g = geometry();
        let psf = delta_psf();
        assert!(BootstrapConfig::new(1, NoiseModel::none(), 1, 0.0, 0, g.clone(), psf).is_err());
        assert!(BootstrapConfig::new(2, NoiseModel::none(), 0, 0.0, 0, g.clone(), psf).is_err());
        assert!(BootstrapConfig::new(2, NoiseModel::none(), 1, -0.1, 0, g.clone(), psf).is_err());
        let offset_noise = NoiseModel::new(0.0, 0.0, 0.0, 5.0, 0.0, 0.0).unwrap();
        assert!(BootstrapConfig::new(2, offset_noise, 1, 0.0, 0, g.clone(), psf).is_err());
        let ok = BootstrapConfig::new(2, NoiseModel::none(), 1, 0.0, 0, g, psf).unwrap();
        assert!(ok.clone().with_image_width(1).is_err());
        assert!(ok.clone().with_pictures(0).is_err());
        assert!(ok.clone().with_counts_per_shot(0.0).is_err());
        assert!(ok.with_projection_shots(0).is_err());
    }

    #[test]
    fn synthesize_rejects_empty_angles_and_mismatched_dims() {
        let sp = spec(8);
        let rho = fock_mixture(8, 1.0, 0.0, 0.0);
        let cfg =
            BootstrapConfig::new(2, NoiseModel::none(), 1, 0.0, 0, geometry(), delta_psf()).unwrap();
        assert!(synthesize_replica(&rho, &[], &cfg, 0, &sp).is_err());
        let other = spec(10);
        assert!(synthesize_replica(&rho, &[0.0], &cfg, 0, &other).is_err());
    }

    #[test]
    fn noiseless_replica_reproduces_the_predicted_distribution() {
        let sp = spec(12);
        let rho = fock_mixture(12, 0.26, 0.651, 0.089);
        let cfg =
            BootstrapConfig::new(2, NoiseModel::none(), 1, 0.0, 7, geometry(), delta_psf())
                .unwrap()
                .with_image_width(101)
                .unwrap();
        let angles = [0.0, 1.1];
        let dataset = synthesize_replica(&rho, &angles, &cfg, 0, &sp).unwrap();
        for &theta in &angles {
            let recs: Vec<_> = dataset
                .records()
                .iter()
                .filter(|r| r.theta == theta)
                .collect();
            assert_eq!(recs.len(), 101);
            let u: Vec<f64> = recs.iter().map(|r| r.u).collect();
            let density = quadrature_distribution(&rho, theta, &u, &sp).unwrap();
            let total: f64 = density.iter().sum();
            let tv: f64 = recs
                .iter()
                .zip(&density)
                .map(|(r, d)| (r.weight - d / total).abs())
                .sum::<f64>()
                / 2.0;
            assert!(tv < 1e-6, "total variation {tv} at angle {theta}");
        }
    }

    #[test]
    fn replica_noise_matches_the_camera_sigma() {
        let sp = spec(12);
        let rho = fock_mixture(12, 0.26, 0.651, 0.089);
        let n_pictures = 10_000u32;
        let cfg = BootstrapConfig::new(
            2,
            averaged_noise(defaults::NOISE_SCALE_DISPLACED_FOCK),
            1,
            0.0,
            11,
            geometry(),
            delta_psf(),
        )
        .unwrap()
        .with_image_width(55)
        .unwrap()
        .with_pictures(n_pictures)
        .unwrap();
        let angles = nine_angles();
        let dataset = synthesize_replica(&rho, &angles, &cfg, 0, &sp).unwrap();
        let sigma = defaults::NOISE_SCALE_DISPLACED_FOCK * defaults::AVERAGED_NOISE_AMPLITUDE
            / f64::from(n_pictures).sqrt();
        let du = cfg.pipeline_geometry().u_per_pixel(&sp);
        let mut sq_sum = 0.0;
        let mut n_bins = 0usize;
        for &theta in &angles {
            let recs: Vec<_> = dataset
                .records()
                .iter()
                .filter(|r| r.theta == theta)
                .collect();
            assert_eq!(recs.len(), 55);
            let u: Vec<f64> = recs.iter().map(|r| r.u).collect();
            let density = quadrature_distribution(&rho, theta, &u, &sp).unwrap();
            let masses: Vec<f64> = density.iter().map(|d| d * du).collect();
            let in_window: f64 = masses.iter().sum();
            let predicted_counts = cfg.counts_per_shot() * in_window;
            for (r, m) in recs.iter().zip(&masses) {
                let dev = (r.weight - m / in_window) * predicted_counts;
                sq_sum += dev * dev;
                n_bins += 1;
            }
        }
        let rms = (sq_sum / n_bins as f64).sqrt();
        assert!(
            (rms / sigma - 1.0).abs() < 0.1,
            "per-bin rms {rms} vs injected sigma {sigma}"
        );
    }

    #[test]
    fn replicas_are_deterministic_per_seed_and_distinct_per_index() {
        let sp = spec(8);
        let rho = fock_mixture(8, 0.0, 1.0, 0.0);
        let cfg = BootstrapConfig::new(
            2,
            averaged_noise(defaults::NOISE_SCALE_FOCK),
            1,
            0.0,
            5,
            geometry(),
            delta_psf(),
        )
        .unwrap()
        .with_image_width(31)
        .unwrap();
        let a = synthesize_replica(&rho, &[0.4], &cfg, 3, &sp).unwrap();
        let b = synthesize_replica(&rho, &[0.4], &cfg, 3, &sp).unwrap();
        for (x, y) in a.records().iter().zip(b.records()) {
            assert_eq!(x.weight.to_bits(), y.weight.to_bits());
        }
        let c = synthesize_replica(&rho, &[0.4], &cfg, 4, &sp).unwrap();
        assert!(
            a.records()
                .iter()
                .zip(c.records())
                .any(|(x, y)| x.weight != y.weight),
            "different replica indices must draw different noise"
        );
    }

    #[test]
    fn projection_noise_quantizes_the_weights() {
        let sp = spec(8);
        let rho = fock_mixture(8, 0.0, 1.0, 0.0);
        let shots = 200u64;
        let cfg =
            BootstrapConfig::new(2, NoiseModel::none(), 1, 0.0, 3, geometry(), delta_psf())
                .unwrap()
                .with_image_width(41)
                .unwrap()
                .with_projection_shots(shots)
                .unwrap();
        let dataset = synthesize_replica(&rho, &[0.7], &cfg, 0, &sp).unwrap();
        for r in dataset.records() {
            let k = r.weight * shots as f64;
            assert!(
                (k - k.round()).abs() < 1e-9,
                "weight {} is not a multiple of 1/{shots}",
                r.weight
            );
        }
        let other = synthesize_replica(&rho, &[0.7], &cfg, 1, &sp).unwrap();
        assert!(dataset
            .records()
            .iter()
            .zip(other.records())
            .any(|(x, y)| x.weight != y.weight));
    }

    #[test]
    fn zero_noise_bootstrap_reproduces_the_input_state() {
        let sp = spec(12);
        let rho = fock_mixture(12, 0.26, 0.651, 0.089);
        // The reference chain must be self-consistent: profiles are rendered
        // without optical blur, so deconvolving with the real PSF would
        // sharpen states it never blurred (measured fidelity cost ~1.3e-3,
        // and another ~8e-3 if the 0.69-count floor truncates the wings).
        // A point PSF with a zero floor leaves nothing to undo.
        let cfg = BootstrapConfig::new(
            2,
            NoiseModel::none(),
            1,
            0.0,
            19,
            geometry(),
            delta_psf(),
        )
        .unwrap()
        .with_image_width(101)
        .unwrap();
        let mle_cfg = MleConfig::new(12).with_tolerance(1e-6).unwrap();
        let report = run_bootstrap(&rho, &nine_angles(), &cfg, &mle_cfg, &sp).unwrap();
        assert_eq!(report.n_failures(), 0);
        assert!(
            report.negativity_std() < 1e-3,
            "noiseless spread {}",
            report.negativity_std()
        );
        for replica in report.replica_rhos() {
            let f = fidelity(replica, &rho).unwrap();
            assert!(f >= 0.999, "replica fidelity {f}");
        }
    }

    #[test]
    fn noise_shrinks_the_negativity() {
        let sp = spec(8);
        let rho = fock_mixture(8, 0.0, 1.0, 0.0);
        let mle_cfg = MleConfig::new(8);
        let angles = nine_angles();
        let quiet =
            BootstrapConfig::new(2, NoiseModel::none(), 1, 0.0, 23, geometry(), delta_psf())
                .unwrap()
                .with_image_width(75)
                .unwrap();
        let noisy = BootstrapConfig::new(
            8,
            averaged_noise(defaults::NOISE_SCALE_FOCK),
            1,
            0.0,
            23,
            geometry(),
            delta_psf(),
        )
        .unwrap()
        .with_image_width(75)
        .unwrap();
        let quiet_report = run_bootstrap(&rho, &angles, &quiet, &mle_cfg, &sp).unwrap();
        let noisy_report = run_bootstrap(&rho, &angles, &noisy, &mle_cfg, &sp).unwrap();
        assert!(
            quiet_report.negativity_mean() < -0.25,
            "noiseless replicas must stay strongly negative, got {}",
            quiet_report.negativity_mean()
        );
        assert!(
            noisy_report.negativity_mean().abs()
                <= quiet_report.negativity_mean().abs() + 1e-6,
            "noise must not deepen the negativity: noisy {} vs quiet {}",
            noisy_report.negativity_mean(),
            quiet_report.negativity_mean()
        );
    }

    #[test]
    fn excess_failures_abort_with_a_diagnostic() {
        let sp = spec(12);
        // Nearly all probability mass sits outside a two-pixel window around
        // the origin, so each column is pure noise and goes nonpositive with
        // probability ~1/2.
        let rho = displaced_vacuum(12, 2.0);
        let noise = NoiseModel::new(
            0.0,
            0.0,
            0.0,
            0.0,
            defaults::AVERAGED_NOISE_AMPLITUDE,
            defaults::NOISE_SCALE_DISPLACED_FOCK,
        )
        .unwrap();
        let cfg = BootstrapConfig::new(10, noise, 1, 0.0, 0, geometry(), delta_psf())
            .unwrap()
            .with_image_width(2)
            .unwrap();
        let mle_cfg = MleConfig::new(12);
        let err = run_bootstrap(&rho, &[0.0], &cfg, &mle_cfg, &sp).unwrap_err();
        match err {
            Error::DegenerateData(msg) => {
                assert!(msg.contains("aborted"), "unexpected message: {msg}");
                assert!(msg.contains("replica"), "diagnostic should name a replica: {msg}");
            }
            other => panic!("expected degenerate-data abort, got {other}"),
        }
    }

    #[test]
    fn quiet_two_pixel_window_still_reconstructs() {
        let sp = spec(12);
        let rho = displaced_vacuum(12, 2.0);
        let cfg =
            BootstrapConfig::new(4, NoiseModel::none(), 1, 0.0, 2, geometry(), delta_psf())
                .unwrap()
                .with_image_width(2)
                .unwrap();
        let mle_cfg = MleConfig::new(12);
        let report = run_bootstrap(&rho, &[0.0], &cfg, &mle_cfg, &sp).unwrap();
        assert_eq!(report.replica_rhos().len(), 4);
        assert_eq!(report.n_failures(), 0);
    }

    #[test]
    fn element_spread_scales_with_averaging_depth() {
        let sp = spec(8);
        let rho = fock_mixture(8, 0.0, 1.0, 0.0);
        let mle_cfg = MleConfig::new(8);
        let angles = nine_angles();
        let depths = [100u32, 400, 1600];
        let mut stds = Vec::new();
        for &n_pictures in &depths {
            let cfg = BootstrapConfig::new(
                32,
                averaged_noise(defaults::NOISE_SCALE_FOCK),
                1,
                0.0,
                31,
                geometry(),
                delta_psf(),
            )
            .unwrap()
            .with_image_width(75)
            .unwrap()
            .with_pictures(n_pictures)
            .unwrap();
            let report = run_bootstrap(&rho, &angles, &cfg, &mle_cfg, &sp).unwrap();
            stds.push(report.element_stds()[(1, 1)]);
        }
        let xs: Vec<f64> = depths.iter().map(|&n| f64::from(n).ln()).collect();
        let ys: Vec<f64> = stds.iter().map(|s| s.ln()).collect();
        let x_mean = mean(&xs);
        let y_mean = mean(&ys);
        let slope = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| (x - x_mean) * (y - y_mean))
            .sum::<f64>()
            / xs.iter().map(|x| (x - x_mean).powi(2)).sum::<f64>();
        assert!(
            (slope + 0.5).abs() < 0.1,
            "element spread should scale like one over the root of the averaging depth; \
             log-log slope {slope}, stds {stds:?}"
        );
    }

    #[test]
    fn bootstrap_reports_are_bit_reproducible() {
        let sp = spec(6);
        let rho = fock_mixture(6, 0.0, 1.0, 0.0);
        let mle_cfg = MleConfig::new(6);
        let angles = [0.0, PI / 3.0, 2.0 * PI / 3.0];
        let cfg = BootstrapConfig::new(
            3,
            averaged_noise(defaults::NOISE_SCALE_FOCK),
            1,
            0.0,
            41,
            geometry(),
            delta_psf(),
        )
        .unwrap()
        .with_image_width(41)
        .unwrap();
        let a = run_bootstrap(&rho, &angles, &cfg, &mle_cfg, &sp).unwrap();
        let b = run_bootstrap(&rho, &angles, &cfg, &mle_cfg, &sp).unwrap();
        for (x, y) in a
            .replica_negativities()
            .iter()
            .zip(b.replica_negativities())
        {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        assert_eq!(a.element_means(), b.element_means());
        assert_eq!(a.element_stds(), b.element_stds());
    }

    #[test]
    fn report_round_trips_to_disk() {
        let sp = spec(6);
        let rho = fock_mixture(6, 0.0, 1.0, 0.0);
        let mle_cfg = MleConfig::new(6);
        let angles = [0.0, PI / 3.0, 2.0 * PI / 3.0];
        let cfg = BootstrapConfig::new(
            3,
            averaged_noise(defaults::NOISE_SCALE_FOCK),
            1,
            0.0,
            43,
            geometry(),
            delta_psf(),
        )
        .unwrap()
        .with_image_width(41)
        .unwrap();
        let report = run_bootstrap(&rho, &angles, &cfg, &mle_cfg, &sp).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.json");
        report.save_json(&path).unwrap();
        let value: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(value["n_replicas"], 3);
        assert_eq!(value["negativity"]["band"].as_array().unwrap().len(), 2);
        assert_eq!(value["element_means"].as_array().unwrap().len(), 7);
        let replica_dir = dir.path().join("replicas");
        report.save_replicas(&replica_dir).unwrap();
        let entries: Vec<_> = std::fs::read_dir(&replica_dir).unwrap().collect();
        assert_eq!(entries.len(), 3);
        let first: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(replica_dir.join("replica_0000.json")).unwrap(),
        )
        .unwrap();
        assert_eq!(first["dim"], 7);
        assert_eq!(first["re"].as_array().unwrap().len(), 7);
        assert!(first["converged"].is_boolean());
    }

    #[test]
    fn noise_bias_rejects_bad_level_grids() {
        let sp = spec(6);
        let rho = fock_mixture(6, 0.0, 1.0, 0.0);
        let mle_cfg = MleConfig::new(6);
        let cfg =
            BootstrapConfig::new(2, NoiseModel::none(), 1, 0.0, 0, geometry(), delta_psf())
                .unwrap();
        let angles = [0.0, 1.0];
        assert!(noise_bias_sweep(&rho, &[0.0], &cfg, &mle_cfg, &angles, &sp, 4).is_err());
        assert!(noise_bias_sweep(&rho, &[1.0, 2.0], &cfg, &mle_cfg, &angles, &sp, 4).is_err());
        assert!(
            noise_bias_sweep(&rho, &[0.0, 1.0], &cfg, &mle_cfg, &angles, &sp, 1).is_err()
        );
    }

    #[test]
    fn noise_bias_sweep_tracks_the_noise_floor() {
        let sp = spec(8);
        let rho = fock_mixture(8, 0.0, 1.0, 0.0);
        let mle_cfg = MleConfig::new(8);
        let angles = nine_angles();
        let cfg =
            BootstrapConfig::new(2, NoiseModel::none(), 1, 0.0, 37, geometry(), delta_psf())
                .unwrap()
                .with_image_width(75)
                .unwrap();
        let table =
            noise_bias_sweep(&rho, &[0.0, 1.0, 3.0], &cfg, &mle_cfg, &angles, &sp, 6).unwrap();
        let (x_m, p_m) = table.minimum_location();
        assert!(
            x_m.abs() < 0.05 && p_m.abs() < 0.05,
            "the first excited state's Wigner minimum sits at the origin, got ({x_m}, {p_m})"
        );
        let rows = table.rows();
        assert_eq!(rows.len(), 3);
        for n in 0..sp.dim() {
            assert!(
                (rows[0].population_means[n] - rho.population(n)).abs() < 0.01,
                "zero-noise population {n} off by more than 0.01"
            );
        }
        let high = table.high_occupation_means(3);
        assert!(
            high[2] > high[0] - 1e-4,
            "spurious occupation should grow with noise: {high:?}"
        );
        let w: Vec<f64> = rows.iter().map(|r| r.wigner_mean).collect();
        assert!(w[0] < -0.25, "noiseless minimum should stay deep, got {}", w[0]);
        assert!(
            w[2] > w[0] + 0.005,
            "noise should pull the Wigner minimum toward zero: {w:?}"
        );
        let bands_ok = rows.iter().all(|r| {
            r.wigner_band.0 - 1e-9 <= r.wigner_mean && r.wigner_mean <= r.wigner_band.1 + 1e-9
        });
        assert!(bands_ok, "means must sit inside their own 95% bands");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn multinomial_resampling_preserves_mass(
            masses in proptest::collection::vec(0.0f64..1.0, 1..20),
            shots in 1u64..5000,
            seed in 0u64..1000,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let out = multinomial_resample(&masses, shots, &mut rng);
            let total_in: f64 = masses.iter().sum();
            let total_out: f64 = out.iter().sum();
            prop_assert!(out.iter().all(|&x| x >= 0.0));
            prop_assert!((total_out - total_in).abs() <= 1e-9 * (1.0 + total_in));
            if total_in > 0.0 {
                for &x in &out {
                    let k = x * shots as f64 / total_in;
                    prop_assert!((k - k.round()).abs() < 1e-6);
                }
            }
        }
    }
}
