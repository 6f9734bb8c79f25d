//! Forward model from momentum distributions to averaged camera images and
//! the inverse chain back to binned quadrature distributions.
//!
//! The forward direction: ballistic expansion maps momentum to position
//! (x_img = M·(p/m)·t_f), the optical system blurs with an astigmatic
//! Gaussian PSF, and the EMCCD adds noise and a count offset. The inverse
//! direction: background subtraction, Richardson–Lucy deconvolution,
//! vertical integration, and conversion of the horizontal axis to the
//! dimensionless quadrature u = p̃/p0.

mod deconvolve;
mod io;
mod noise;

pub use deconvolve::richardson_lucy;
pub use io::{load_frame, read_quadrature_csv, save_frame, write_quadrature_csv};
pub use noise::sample_camera_noise;

use crate::error::{Error, Result};
use crate::fock::{OscillatorSpec, QuadratureRecord};

/// Optical and timing parameters of the time-of-flight imaging system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImagingGeometry {
    magnification: f64,
    flight_time: f64,
    pixel_pitch: f64,
    exposure: f64,
}

impl ImagingGeometry {
    pub fn new(magnification: f64, flight_time: f64, pixel_pitch: f64, exposure: f64) -> Result<Self> {
        for (name, value) in [
            ("imaging.magnification", magnification),
            ("imaging.flight_time", flight_time),
            ("imaging.pixel_pitch", pixel_pitch),
            ("imaging.exposure", exposure),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::config(name, format!("must be strictly positive, got {value}")));
            }
        }
        Ok(Self { magnification, flight_time, pixel_pitch, exposure })
    }

    pub fn magnification(&self) -> f64 {
        self.magnification
    }

    pub fn flight_time(&self) -> f64 {
        self.flight_time
    }

    pub fn pixel_pitch(&self) -> f64 {
        self.pixel_pitch
    }

    pub fn exposure(&self) -> f64 {
        self.exposure
    }

    /// Pixel size referred back to the atom plane: pitch / M.
    pub fn atom_plane_pitch(&self) -> f64 {
        self.pixel_pitch / self.magnification
    }

    /// Momentum interval one pixel column spans: Δp = m·pitch/(M·t_f).
    pub fn momentum_per_pixel(&self, mass: f64) -> f64 {
        mass * self.pixel_pitch / (self.magnification * self.flight_time)
    }

    /// Dimensionless quadrature interval per pixel, Δu = Δp/p0.
    pub fn u_per_pixel(&self, spec: &OscillatorSpec) -> f64 {
        self.momentum_per_pixel(spec.mass()) / spec.p0()
    }

    /// Horizontal pixel-center coordinate in camera-plane meters, with the
    /// axis origin at the geometric center of an `nx`-column grid.
    pub fn column_position(&self, col: usize, nx: usize) -> f64 {
        (col as f64 - 0.5 * (nx as f64 - 1.0)) * self.pixel_pitch
    }
}

/// Astigmatic Gaussian point-spread function, RMS widths in atom-plane meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsfModel {
    sigma_x: f64,
    sigma_y: f64,
}

impl PsfModel {
    pub fn new(sigma_x: f64, sigma_y: f64) -> Result<Self> {
        for (name, value) in [("psf.sigma_x", sigma_x), ("psf.sigma_y", sigma_y)] {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::config(name, format!("must be strictly positive, got {value}")));
            }
        }
        Ok(Self { sigma_x, sigma_y })
    }

    pub fn sigma_x(&self) -> f64 {
        self.sigma_x
    }

    pub fn sigma_y(&self) -> f64 {
        self.sigma_y
    }
}

/// EMCCD noise parameters: clock-induced-charge rate and gain, readout
/// noise, the constant count offset, and the averaged-frame noise amplitude
/// A (per-pixel RMS is noise_scale_factor·A/√N). The amplitude may vary by
/// image column via [`NoiseModel::with_per_column_amplitude`].
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    pub cic_rate: f64,
    pub em_gain_mean: f64,
    pub readout_sigma: f64,
    pub offset: f64,
    pub averaged_noise_amplitude: f64,
    pub noise_scale_factor: f64,
    per_column_amplitude: Option<Vec<f64>>,
}

impl NoiseModel {
    pub fn new(
        cic_rate: f64,
        em_gain_mean: f64,
        readout_sigma: f64,
        offset: f64,
        averaged_noise_amplitude: f64,
        noise_scale_factor: f64,
    ) -> Result<Self> {
        let model = Self {
            cic_rate,
            em_gain_mean,
            readout_sigma,
            offset,
            averaged_noise_amplitude,
            noise_scale_factor,
            per_column_amplitude: None,
        };
        for (name, value) in [
            ("noise.cic_rate", cic_rate),
            ("noise.em_gain_mean", em_gain_mean),
            ("noise.readout_sigma", readout_sigma),
            ("noise.offset", offset),
            ("noise.averaged_noise_amplitude", averaged_noise_amplitude),
            ("noise.noise_scale_factor", noise_scale_factor),
        ] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(Error::config(name, format!("must be nonnegative, got {value}")));
            }
        }
        Ok(model)
    }

    /// Replaces the uniform averaged-noise amplitude with one value per
    /// image column (the noise profile varies mostly horizontally).
    pub fn with_per_column_amplitude(mut self, amplitude: Vec<f64>) -> Result<Self> {
        if amplitude.is_empty() || amplitude.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::config(
                "noise.per_column_amplitude",
                "entries must be nonnegative and finite",
            ));
        }
        self.per_column_amplitude = Some(amplitude);
        Ok(self)
    }

    /// Averaged-noise amplitude for a given column.
    pub fn column_amplitude(&self, col: usize) -> f64 {
        self.per_column_amplitude
            .as_ref()
            .and_then(|table| table.get(col).copied())
            .unwrap_or(self.averaged_noise_amplitude)
    }

    pub fn per_column_amplitude(&self) -> Option<&[f64]> {
        self.per_column_amplitude.as_deref()
    }

    /// All-zero model: sampling with it leaves frames untouched.
    pub fn none() -> Self {
        Self {
            cic_rate: 0.0,
            em_gain_mean: 0.0,
            readout_sigma: 0.0,
            offset: 0.0,
            averaged_noise_amplitude: 0.0,
            noise_scale_factor: 0.0,
            per_column_amplitude: None,
        }
    }

    pub fn is_none(&self) -> bool {
        let max_amplitude = self
            .per_column_amplitude
            .as_ref()
            .map_or(self.averaged_noise_amplitude, |t| t.iter().cloned().fold(0.0, f64::max));
        self.cic_rate == 0.0
            && self.readout_sigma == 0.0
            && self.offset == 0.0
            && max_amplitude * self.noise_scale_factor == 0.0
    }
}

/// A (possibly averaged) camera image: counts per pixel, the geometry that
/// produced it, and how many shots were averaged.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageFrame {
    counts: Vec<Vec<f64>>,
    geometry: ImagingGeometry,
    n_averaged: u32,
}

impl ImageFrame {
    pub fn new(counts: Vec<Vec<f64>>, geometry: ImagingGeometry, n_averaged: u32) -> Result<Self> {
        if n_averaged < 1 {
            return Err(Error::invalid("frame average count must be at least 1"));
        }
        let ny = counts.len();
        let nx = counts.first().map_or(0, |row| row.len());
        if ny == 0 || nx == 0 {
            return Err(Error::invalid("image frame must be nonempty"));
        }
        if counts.iter().any(|row| row.len() != nx) {
            return Err(Error::dims("image frame rows have unequal lengths"));
        }
        if counts.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("image frame contains non-finite counts"));
        }
        Ok(Self { counts, geometry, n_averaged })
    }

    pub fn counts(&self) -> &[Vec<f64>] {
        &self.counts
    }

    pub fn geometry(&self) -> &ImagingGeometry {
        &self.geometry
    }

    pub fn n_averaged(&self) -> u32 {
        self.n_averaged
    }

    /// Horizontal pixel count.
    pub fn nx(&self) -> usize {
        self.counts[0].len()
    }

    /// Vertical pixel count.
    pub fn ny(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().flatten().sum()
    }

    /// Per-column sums (integration along the vertical axis).
    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.nx()];
        for row in &self.counts {
            for (s, v) in sums.iter_mut().zip(row) {
                *s += v;
            }
        }
        sums
    }

    /// New frame with the same geometry/averaging and transformed counts.
    pub(crate) fn with_counts(&self, counts: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(counts, self.geometry, self.n_averaged)
    }
}

/// RMS cloud size after ballistic expansion: σ(t) = √(2·E_KE·t²/m + σ₀²).
pub fn ballistic_sigma(e_ke: f64, t: f64, sigma0: f64, mass: f64) -> Result<f64> {
    if !(e_ke.is_finite() && e_ke >= 0.0) {
        return Err(Error::invalid(format!("kinetic energy must be nonnegative, got {e_ke}")));
    }
    if !(sigma0.is_finite() && sigma0 >= 0.0) {
        return Err(Error::invalid(format!("initial size must be nonnegative, got {sigma0}")));
    }
    if !(mass.is_finite() && mass > 0.0) {
        return Err(Error::invalid(format!("mass must be positive, got {mass}")));
    }
    if !t.is_finite() {
        return Err(Error::invalid("flight time must be finite"));
    }
    Ok((2.0 * e_ke * t * t / mass + sigma0 * sigma0).sqrt())
}

/// A sampled 2-D momentum density with the photon-count budget it should be
/// rendered at. Axes are physical momenta (kg·m/s), strictly increasing and
/// uniformly spaced; `values` is indexed [x][y].
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumDensity {
    px_axis: Vec<f64>,
    py_axis: Vec<f64>,
    values: Vec<Vec<f64>>,
    total_counts: f64,
}

impl MomentumDensity {
    pub fn new(
        px_axis: Vec<f64>,
        py_axis: Vec<f64>,
        values: Vec<Vec<f64>>,
        total_counts: f64,
    ) -> Result<Self> {
        for (name, axis) in [("p_x", &px_axis), ("p_y", &py_axis)] {
            if axis.len() < 2 {
                return Err(Error::invalid(format!("{name} axis needs at least two samples")));
            }
            if axis.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("{name} axis contains non-finite values")));
            }
            let step = axis[1] - axis[0];
            if step <= 0.0
                || axis.windows(2).any(|w| ((w[1] - w[0]) - step).abs() > 1e-9 * step)
            {
                return Err(Error::invalid(format!(
                    "{name} axis must be uniformly increasing"
                )));
            }
        }
        if values.len() != px_axis.len() || values.iter().any(|col| col.len() != py_axis.len()) {
            return Err(Error::dims("momentum density values do not match the axes"));
        }
        if values.iter().flatten().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("momentum density must be finite and nonnegative"));
        }
        if !(total_counts.is_finite() && total_counts > 0.0) {
            return Err(Error::invalid(format!(
                "count budget must be positive, got {total_counts}"
            )));
        }
        Ok(Self { px_axis, py_axis, values, total_counts })
    }

    pub fn px_axis(&self) -> &[f64] {
        &self.px_axis
    }

    pub fn py_axis(&self) -> &[f64] {
        &self.py_axis
    }

    pub fn total_counts(&self) -> f64 {
        self.total_counts
    }

    fn step_x(&self) -> f64 {
        self.px_axis[1] - self.px_axis[0]
    }

    fn step_y(&self) -> f64 {
        self.py_axis[1] - self.py_axis[0]
    }
}

/// Renders a momentum density onto the camera grid through the ballistic map
/// x_img = M·(p/m)·t_f, as an nx×ny noiseless, blur-free frame whose counts
/// sum to the density's budget (times the fraction of density mass the grid
/// covers).
///
/// Mass-conserving binning: each density sample deposits its Riemann mass
/// into the pixel containing its mapped position, so rendering is exactly
/// linear in the density and the total is preserved wherever coverage is
/// complete. The density grid must sample at least as finely as the pixel
/// grid, otherwise sub-pixel structure has already been lost and an
/// aliasing error is returned.
pub fn momentum_to_image(
    density: &MomentumDensity,
    geometry: &ImagingGeometry,
    spec: &OscillatorSpec,
    nx: usize,
    ny: usize,
) -> Result<ImageFrame> {
    if nx < 2 || ny < 1 {
        return Err(Error::invalid("image grid must be at least 2x1 pixels"));
    }
    let mass = spec.mass();
    let pixel_momentum = geometry.momentum_per_pixel(mass);
    if density.step_x() > pixel_momentum || density.step_y() > pixel_momentum {
        return Err(Error::invalid(format!(
            "momentum grid spacing ({:.3e}, {:.3e}) is coarser than the pixel momentum {:.3e}; \
             the rendering would alias",
            density.step_x(),
            density.step_y(),
            pixel_momentum
        )));
    }
    // Time of flight must dominate the initial spatial spread for the
    // position→momentum identification to hold.
    let tof_scale = spec.p0() * geometry.flight_time() / mass;
    if tof_scale < 10.0 * spec.x0() {
        log::warn!(
            "momentum_to_image: time-of-flight displacement {:.2e} m is not large against the \
             initial size {:.2e} m; the ballistic map is inaccurate",
            tof_scale,
            spec.x0()
        );
    }

    let mut counts = vec![vec![0.0; nx]; ny];
    let cell_mass_scale = density.total_counts * density.step_x() * density.step_y();
    // Inverse of the pixel-center map: pixel index from momentum.
    let col_of = |p: f64| -> Option<usize> {
        let idx = (p / pixel_momentum + 0.5 * (nx as f64 - 1.0)).round();
        (idx >= 0.0 && idx < nx as f64).then(|| idx as usize)
    };
    let row_of = |p: f64| -> Option<usize> {
        let idx = (p / pixel_momentum + 0.5 * (ny as f64 - 1.0)).round();
        (idx >= 0.0 && idx < ny as f64).then(|| idx as usize)
    };
    for (i, &px) in density.px_axis.iter().enumerate() {
        let Some(col) = col_of(px) else { continue };
        for (j, &py) in density.py_axis.iter().enumerate() {
            let Some(row) = row_of(py) else { continue };
            counts[row][col] += density.values[i][j] * cell_mass_scale;
        }
    }
    ImageFrame::new(counts, *geometry, 1)
}

/// Convolves the frame with the PSF sampled on the frame's atom-plane grid.
///
/// The Gaussian kernel is separable, so this is two 1-D passes (horizontal
/// σ_x, vertical σ_y) with zero padding; each 1-D kernel is normalized to
/// unit sum, so counts are conserved up to edge leakage.
pub fn convolve_psf(frame: &ImageFrame, psf: &PsfModel) -> Result<ImageFrame> {
    let pitch = frame.geometry().atom_plane_pitch();
    let kx = gaussian_kernel(psf.sigma_x() / pitch);
    let ky = gaussian_kernel(psf.sigma_y() / pitch);
    let rows: Vec<Vec<f64>> = frame.counts().iter().map(|row| convolve_1d(row, &kx)).collect();
    let blurred = convolve_columns(&rows, &ky);
    frame.with_counts(blurred)
}

/// 1-D Gaussian kernel sampled at integer pixel offsets, unit sum. A width
/// far below one pixel degenerates to a single-pixel (identity) kernel.
pub(crate) fn gaussian_kernel(sigma_px: f64) -> Vec<f64> {
    let half = (6.0 * sigma_px).ceil() as usize;
    let mut kernel: Vec<f64> = (0..=2 * half)
        .map(|i| {
            let d = i as f64 - half as f64;
            (-0.5 * (d / sigma_px).powi(2)).exp()
        })
        .collect();
    let sum: f64 = kernel.iter().sum();
    for v in &mut kernel {
        *v /= sum;
    }
    kernel
}

pub(crate) fn convolve_1d(data: &[f64], kernel: &[f64]) -> Vec<f64> {
    let half = kernel.len() / 2;
    let n = data.len();
    let mut out = vec![0.0; n];
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (k, &w) in kernel.iter().enumerate() {
            let j = i as isize + k as isize - half as isize;
            if j >= 0 && (j as usize) < n {
                acc += data[j as usize] * w;
            }
        }
        *o = acc;
    }
    out
}

pub(crate) fn convolve_columns(rows: &[Vec<f64>], kernel: &[f64]) -> Vec<Vec<f64>> {
    let ny = rows.len();
    let nx = rows[0].len();
    let half = kernel.len() / 2;
    let mut out = vec![vec![0.0; nx]; ny];
    for (i, out_row) in out.iter_mut().enumerate() {
        for (k, &w) in kernel.iter().enumerate() {
            let j = i as isize + k as isize - half as isize;
            if j >= 0 && (j as usize) < ny {
                let src = &rows[j as usize];
                for (o, v) in out_row.iter_mut().zip(src) {
                    *o += v * w;
                }
            }
        }
    }
    out
}

/// Element-wise difference of a signal frame and a background frame taken
/// with the same geometry and averaging; negative residuals are preserved.
pub fn subtract_background(signal: &ImageFrame, background: &ImageFrame) -> Result<ImageFrame> {
    if signal.nx() != background.nx() || signal.ny() != background.ny() {
        return Err(Error::dims(format!(
            "signal is {}x{} but background is {}x{}",
            signal.nx(),
            signal.ny(),
            background.nx(),
            background.ny()
        )));
    }
    if signal.geometry() != background.geometry() || signal.n_averaged() != background.n_averaged()
    {
        return Err(Error::dims(
            "signal and background frames must share geometry and averaging",
        ));
    }
    let counts = signal
        .counts()
        .iter()
        .zip(background.counts())
        .map(|(s, b)| s.iter().zip(b).map(|(a, c)| a - c).collect())
        .collect();
    signal.with_counts(counts)
}

/// Binned quadrature distribution extracted from one frame: u-grid, unit-sum
/// weights, and the fraction of (negative) weight clamped away during
/// normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureHistogram {
    pub theta: f64,
    pub u: Vec<f64>,
    pub weights: Vec<f64>,
    pub clamped_fraction: f64,
}

impl QuadratureHistogram {
    /// Flattens into weighted records (angle wrapped into [0, 2π)).
    pub fn records(&self) -> Result<Vec<QuadratureRecord>> {
        self.u
            .iter()
            .zip(&self.weights)
            .map(|(&u, &w)| {
                let theta = self.theta.rem_euclid(std::f64::consts::TAU);
                QuadratureRecord::new(theta, u, w)
            })
            .collect()
    }
}

/// Where the u-axis zero sits when converting pixel columns to quadrature
/// values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AxisOrigin {
    /// Geometric center of the pixel grid (the default).
    #[default]
    GeometricCenter,
    /// Per-frame intensity centroid, for data with drifting pointing.
    Centroid,
}

/// Integrates a (deconvolved) frame along the vertical axis and converts the
/// horizontal pixel coordinate to u = p̃/p0 = m·x_img/(M·t_f·p0). Negative
/// bin totals are clamped to zero before the weights are normalized to unit
/// sum. The u-axis zero is the geometric grid center.
pub fn image_to_quadrature(
    frame: &ImageFrame,
    theta: f64,
    spec: &OscillatorSpec,
) -> Result<QuadratureHistogram> {
    image_to_quadrature_with_origin(frame, theta, spec, AxisOrigin::GeometricCenter)
}

/// [`image_to_quadrature`] with an explicit choice of u-axis origin.
pub fn image_to_quadrature_with_origin(
    frame: &ImageFrame,
    theta: f64,
    spec: &OscillatorSpec,
    origin: AxisOrigin,
) -> Result<QuadratureHistogram> {
    if !theta.is_finite() {
        return Err(Error::invalid("quadrature angle must be finite"));
    }
    let geometry = frame.geometry();
    let du = geometry.u_per_pixel(spec);
    if du > 0.1 {
        log::warn!(
            "image_to_quadrature: quadrature bin width {du:.3} exceeds the design target 0.1; \
             fine fringes may be under-resolved"
        );
    }
    let sums = frame.column_sums();
    let clamped: Vec<f64> = sums.iter().map(|&s| s.max(0.0)).collect();
    let total: f64 = clamped.iter().sum();
    if !(total > 0.0) {
        return Err(Error::degenerate(
            "frame has nonpositive total weight after clamping; cannot form a distribution",
        ));
    }
    let negative_mass: f64 = sums.iter().filter(|&&s| s < 0.0).map(|&s| -s).sum();
    let nx = frame.nx();
    let scale = geometry.momentum_per_pixel(spec.mass()) / spec.p0() / geometry.pixel_pitch();
    let mut u: Vec<f64> = (0..nx).map(|i| geometry.column_position(i, nx) * scale).collect();
    let weights: Vec<f64> = clamped.iter().map(|&s| s / total).collect();
    if origin == AxisOrigin::Centroid {
        let centroid: f64 = u.iter().zip(&weights).map(|(u, w)| u * w).sum();
        for value in &mut u {
            *value -= centroid;
        }
    }
    Ok(QuadratureHistogram {
        theta,
        u,
        weights,
        clamped_fraction: negative_mass / (total + negative_mass),
    })
}
