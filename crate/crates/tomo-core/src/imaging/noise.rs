//! EMCCD noise synthesis for single-shot and averaged frames.

use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp, Normal};

use super::{ImageFrame, NoiseModel};
use crate::error::{Error, Result};

/// Adds camera noise to a frame, deterministically for a given seed.
///
/// For a single shot (`n_averaged == 1`): each pixel gains a
/// clock-induced-charge event with probability `cic_rate`, amplified by an
/// exponentially distributed gain of mean `em_gain_mean`, plus Gaussian
/// readout noise of width `readout_sigma`, plus the constant `offset`.
///
/// For an averaged frame (`n_averaged > 1`) the shot-level detail has washed
/// out into a Gaussian residual of RMS
/// `noise_scale_factor · averaged_noise_amplitude / √N`, plus the offset.
///
/// Pixels are visited in row-major order with one sequential generator, so
/// the output is identical regardless of thread count.
pub fn sample_camera_noise(frame: &ImageFrame, noise: &NoiseModel, seed: u64) -> Result<ImageFrame> {
    if noise.is_none() && noise.offset == 0.0 {
        return Ok(frame.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = frame.n_averaged();
    let counts = if n == 1 {
        single_shot(frame, noise, &mut rng)?
    } else {
        averaged(frame, noise, n, &mut rng)?
    };
    frame.with_counts(counts)
}

fn single_shot(
    frame: &ImageFrame,
    noise: &NoiseModel,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<f64>>> {
    if noise.cic_rate > 1.0 {
        return Err(Error::config(
            "noise.cic_rate",
            format!("is a per-pixel probability and must be at most 1, got {}", noise.cic_rate),
        ));
    }
    let gain = (noise.em_gain_mean > 0.0)
        .then(|| Exp::new(1.0 / noise.em_gain_mean))
        .transpose()
        .map_err(|e| Error::numeric(format!("exponential gain distribution: {e}")))?;
    let readout = (noise.readout_sigma > 0.0)
        .then(|| Normal::new(0.0, noise.readout_sigma))
        .transpose()
        .map_err(|e| Error::numeric(format!("readout distribution: {e}")))?;
    Ok(frame
        .counts()
        .iter()
        .map(|row| {
            row.iter()
                .map(|&v| {
                    let mut out = v + noise.offset;
                    if noise.cic_rate > 0.0 && rng.random::<f64>() < noise.cic_rate {
                        out += gain.as_ref().map_or(1.0, |g| g.sample(rng));
                    }
                    if let Some(r) = &readout {
                        out += r.sample(rng);
                    }
                    out
                })
                .collect()
        })
        .collect())
}

fn averaged(
    frame: &ImageFrame,
    noise: &NoiseModel,
    n: u32,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<f64>>> {
    if let Some(table) = noise.per_column_amplitude() {
        if table.len() != frame.nx() {
            return Err(Error::dims(format!(
                "per-column amplitude table has {} entries for a {}-column frame",
                table.len(),
                frame.nx()
            )));
        }
    }
    let scale = noise.noise_scale_factor / (n as f64).sqrt();
    let residuals: Vec<Option<Normal<f64>>> = (0..frame.nx())
        .map(|col| {
            let sigma = scale * noise.column_amplitude(col);
            (sigma > 0.0)
                .then(|| Normal::new(0.0, sigma))
                .transpose()
                .map_err(|e| Error::numeric(format!("averaged residual distribution: {e}")))
        })
        .collect::<Result<_>>()?;
    Ok(frame
        .counts()
        .iter()
        .map(|row| {
            row.iter()
                .zip(&residuals)
                .map(|(&v, residual)| {
                    v + noise.offset + residual.as_ref().map_or(0.0, |r| r.sample(rng))
                })
                .collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::super::tests::test_geometry;
    use super::*;
    use approx::assert_relative_eq;

    fn flat_frame(nx: usize, ny: usize, value: f64, n_averaged: u32) -> ImageFrame {
        ImageFrame::new(vec![vec![value; nx]; ny], test_geometry(), n_averaged).unwrap()
    }

    #[test]
    fn zero_model_is_identity() {
        let frame = flat_frame(16, 16, 3.5, 1);
        let out = sample_camera_noise(&frame, &NoiseModel::none(), 7).unwrap();
        assert_eq!(out, frame);
    }

    #[test]
    fn deterministic_per_seed() {
        let frame = flat_frame(32, 32, 1.0, 1);
        let noise = NoiseModel::new(7e-2, 73.1, 5.4, 88.4, 26.5, 1.6).unwrap();
        let a = sample_camera_noise(&frame, &noise, 42).unwrap();
        let b = sample_camera_noise(&frame, &noise, 42).unwrap();
        let c = sample_camera_noise(&frame, &noise, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn cic_fraction_matches_rate() {
        // Readout off, offset 0 so CIC events are the only change; count the
        // pixels that moved and compare against a binomial 3σ band.
        let nx = 128;
        let ny = 128;
        let frame = flat_frame(nx, ny, 0.0, 1);
        let rate = 7e-2;
        let noise = NoiseModel::new(rate, 73.1, 0.0, 0.0, 0.0, 0.0).unwrap();
        let out = sample_camera_noise(&frame, &noise, 101).unwrap();
        let hits = out.counts().iter().flatten().filter(|&&v| v > 0.0).count();
        let n = (nx * ny) as f64;
        let expect = rate * n;
        let sd = (n * rate * (1.0 - rate)).sqrt();
        assert!(
            (hits as f64 - expect).abs() < 3.0 * sd,
            "hits {hits}, expected {expect} ± {sd}"
        );
        // Event amplitudes average near the gain mean.
        let total: f64 = out.counts().iter().flatten().sum();
        let mean_gain = total / hits as f64;
        assert!(
            (mean_gain - 73.1).abs() < 5.0 * 73.1 / (hits as f64).sqrt(),
            "mean amplified charge {mean_gain}"
        );
    }

    #[test]
    fn averaged_noise_rms() {
        let n_averaged = 10_000;
        let frame = flat_frame(128, 128, 0.0, n_averaged);
        let noise = NoiseModel::new(7e-2, 73.1, 5.4, 0.0, 26.5, 1.0).unwrap();
        let out = sample_camera_noise(&frame, &noise, 5).unwrap();
        let values: Vec<f64> = out.counts().iter().flatten().copied().collect();
        let rms = (values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64).sqrt();
        let expected = 26.5 / (n_averaged as f64).sqrt();
        assert_relative_eq!(rms, expected, max_relative = 0.05);
    }

    #[test]
    fn offset_applied_in_both_modes() {
        for n_averaged in [1, 100] {
            let frame = flat_frame(8, 8, 0.0, n_averaged);
            let noise = NoiseModel::new(0.0, 0.0, 0.0, 88.4, 0.0, 0.0).unwrap();
            let out = sample_camera_noise(&frame, &noise, 1).unwrap();
            assert!(out.counts().iter().flatten().all(|&v| v == 88.4));
        }
    }

    #[test]
    fn per_column_amplitude_profile() {
        let n_averaged = 2_500;
        let ny = 4_096;
        let frame = flat_frame(2, ny, 0.0, n_averaged);
        let noise = NoiseModel::new(0.0, 0.0, 0.0, 0.0, 26.5, 1.0)
            .unwrap()
            .with_per_column_amplitude(vec![10.0, 40.0])
            .unwrap();
        let out = sample_camera_noise(&frame, &noise, 17).unwrap();
        for (col, amplitude) in [(0usize, 10.0), (1, 40.0)] {
            let values: Vec<f64> = out.counts().iter().map(|row| row[col]).collect();
            let rms = (values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64).sqrt();
            let expected = amplitude / (n_averaged as f64).sqrt();
            assert_relative_eq!(rms, expected, max_relative = 0.08);
        }
        // Wrong table width is a dimension error.
        let bad = sample_camera_noise(&flat_frame(3, 4, 0.0, n_averaged), &noise, 17);
        assert!(bad.is_err());
    }

    #[test]
    fn invalid_cic_rate_rejected() {
        let frame = flat_frame(4, 4, 0.0, 1);
        let noise = NoiseModel::new(1.5, 73.1, 5.4, 0.0, 0.0, 0.0).unwrap();
        assert!(sample_camera_noise(&frame, &noise, 0).is_err());
    }
}
