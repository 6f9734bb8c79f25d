//! Richardson–Lucy deconvolution of the imaging PSF.

use super::{convolve_columns, convolve_1d, gaussian_kernel, ImageFrame, PsfModel};
use crate::error::{Error, Result};

/// Richardson–Lucy deconvolution with a separable Gaussian PSF.
///
/// The multiplicative update is Dᵏ⁺¹ = Dᵏ · (P* ⊛ (I / (P ⊛ Dᵏ))), started
/// from a uniform estimate; the Gaussian kernel is symmetric so P* = P.
/// Wherever the reblurred estimate falls at or below `filter_floor` the
/// ratio is treated as zero, which suppresses the noise amplification that
/// otherwise blows up in empty regions. The input is clamped to
/// nonnegative counts first; a frame with no positive counts at all cannot
/// be deconvolved.
pub fn richardson_lucy(
    image: &ImageFrame,
    psf: &PsfModel,
    iterations: u32,
    filter_floor: f64,
) -> Result<ImageFrame> {
    if iterations < 1 {
        return Err(Error::invalid("deconvolution needs at least one iteration"));
    }
    if !(filter_floor.is_finite() && filter_floor >= 0.0) {
        return Err(Error::invalid(format!(
            "filter floor must be nonnegative, got {filter_floor}"
        )));
    }
    let clamped: Vec<Vec<f64>> = image
        .counts()
        .iter()
        .map(|row| row.iter().map(|&v| v.max(0.0)).collect())
        .collect();
    let total: f64 = clamped.iter().flatten().sum();
    if !(total > 0.0) {
        return Err(Error::degenerate("image has no positive counts to deconvolve"));
    }

    let pitch = image.geometry().atom_plane_pitch();
    let kx = gaussian_kernel(psf.sigma_x() / pitch);
    let ky = gaussian_kernel(psf.sigma_y() / pitch);
    let blur = |data: &[Vec<f64>]| -> Vec<Vec<f64>> {
        let rows: Vec<Vec<f64>> = data.iter().map(|row| convolve_1d(row, &kx)).collect();
        convolve_columns(&rows, &ky)
    };

    let ny = image.ny();
    let nx = image.nx();
    let mut estimate = vec![vec![1.0; nx]; ny];
    for _ in 0..iterations {
        let reblurred = blur(&estimate);
        let ratio: Vec<Vec<f64>> = clamped
            .iter()
            .zip(&reblurred)
            .map(|(obs_row, blur_row)| {
                obs_row
                    .iter()
                    .zip(blur_row)
                    .map(|(&obs, &conv)| {
                        if conv > filter_floor && conv > 0.0 {
                            obs / conv
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        let correction = blur(&ratio);
        for (est_row, corr_row) in estimate.iter_mut().zip(&correction) {
            for (e, c) in est_row.iter_mut().zip(corr_row) {
                *e *= c;
            }
        }
    }
    image.with_counts(estimate)
}

#[cfg(test)]
mod tests {
    use super::super::tests::{render_fock_frame, test_geometry};
    use super::super::convolve_psf;
    use super::*;
    use crate::constants::RB87_MASS;
    use crate::fock::OscillatorSpec;
    use approx::assert_relative_eq;
    use std::f64::consts::TAU;

    #[test]
    fn single_pixel_psf_one_iteration_is_identity() {
        let geometry = test_geometry();
        let counts = vec![vec![1.0, 4.0, 2.0, 7.0], vec![3.0, 0.5, 6.0, 1.0]];
        let frame = ImageFrame::new(counts.clone(), geometry, 1).unwrap();
        let delta = PsfModel::new(1e-12, 1e-12).unwrap();
        let out = richardson_lucy(&frame, &delta, 1, 0.0).unwrap();
        for (a, b) in out.counts().iter().flatten().zip(counts.iter().flatten()) {
            assert_relative_eq!(a, b, max_relative = 1e-9, epsilon = 1e-9);
        }
    }

    #[test]
    fn deconvolution_reduces_blur_error() {
        let spec = OscillatorSpec::new(RB87_MASS, TAU * 9.05e3, 25).unwrap();
        let geometry = test_geometry();
        // A 100-shot summed fringe image: signal pixels sit well above the
        // 0.69-count filter level, which is where the floor is meaningful.
        let truth = render_fock_frame(1, &spec, &geometry, 192, 64, 100.0 * 564.5);
        let psf = PsfModel::new(445e-9, 328e-9).unwrap();
        let blurred = convolve_psf(&truth, &psf).unwrap();
        let l2 = |f: &ImageFrame| -> f64 {
            f.counts()
                .iter()
                .flatten()
                .zip(truth.counts().iter().flatten())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        };
        let blurred_err = l2(&blurred);
        for iterations in [2, 10] {
            for floor in [0.0, 0.69] {
                let out = richardson_lucy(&blurred, &psf, iterations, floor).unwrap();
                let err = l2(&out);
                assert!(
                    err < blurred_err,
                    "iterations {iterations}, floor {floor}: error {err} vs blurred {blurred_err}"
                );
            }
        }
    }

    #[test]
    fn negative_input_clamped_and_zero_rejected() {
        let geometry = test_geometry();
        let psf = PsfModel::new(445e-9, 328e-9).unwrap();
        let zero = ImageFrame::new(vec![vec![-3.0; 8]; 8], geometry, 1).unwrap();
        assert!(matches!(
            richardson_lucy(&zero, &psf, 2, 0.0),
            Err(crate::error::Error::DegenerateData(_))
        ));
        let mut counts = vec![vec![-1.0; 16]; 16];
        counts[8][8] = 100.0;
        let frame = ImageFrame::new(counts, geometry, 1).unwrap();
        let out = richardson_lucy(&frame, &psf, 2, 0.0).unwrap();
        assert!(out.counts().iter().flatten().all(|&v| v >= 0.0));
    }

    #[test]
    fn zero_iterations_rejected() {
        let geometry = test_geometry();
        let frame = ImageFrame::new(vec![vec![1.0; 4]; 4], geometry, 1).unwrap();
        let psf = PsfModel::new(445e-9, 328e-9).unwrap();
        assert!(richardson_lucy(&frame, &psf, 0, 0.0).is_err());
        assert!(richardson_lucy(&frame, &psf, 1, -0.5).is_err());
    }
}
