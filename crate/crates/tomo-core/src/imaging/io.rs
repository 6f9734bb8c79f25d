//! File formats: image frames as a CSV grid with a key=value sidecar, and
//! quadrature distributions as `theta_rad,u,weight` CSV.

use std::path::{Path, PathBuf};

use super::{ImageFrame, ImagingGeometry};
use crate::error::{Error, Result};
use crate::fock::QuadratureRecord;
use crate::ioutil::atomic_write;

fn sidecar_path(frame_path: &Path) -> PathBuf {
    let mut name = frame_path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    name.push_str(".meta");
    frame_path.with_file_name(name)
}

fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes a frame as a comma-separated numeric grid plus a `<name>.meta`
/// sidecar carrying the geometry and averaging metadata.
pub fn save_frame(frame: &ImageFrame, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut grid = String::new();
    for row in frame.counts() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        grid.push_str(&line.join(","));
        grid.push('\n');
    }
    atomic_write(path, &grid)?;
    let g = frame.geometry();
    let sidecar = format!(
        "magnification={}\nflight_time_s={}\nexposure_s={}\npixel_pitch_m={}\nn_averaged={}\n",
        g.magnification(),
        g.flight_time(),
        g.exposure(),
        g.pixel_pitch(),
        frame.n_averaged()
    );
    atomic_write(&sidecar_path(path), &sidecar)
}

/// Loads a frame written by [`save_frame`], reading the sidecar for its
/// geometry.
pub fn load_frame(path: impl AsRef<Path>) -> Result<ImageFrame> {
    let path = path.as_ref();
    let grid_text = read_to_string(path)?;
    let mut counts = Vec::new();
    for (idx, line) in grid_text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|field| {
                field.trim().parse::<f64>().map_err(|e| {
                    Error::parse(path, idx + 1, format!("bad count {field:?}: {e}"))
                })
            })
            .collect::<Result<_>>()?;
        counts.push(row);
    }

    let sidecar = sidecar_path(path);
    let meta_text = read_to_string(&sidecar)?;
    let mut magnification = None;
    let mut flight_time = None;
    let mut exposure = None;
    let mut pixel_pitch = None;
    let mut n_averaged = None;
    for (idx, line) in meta_text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::parse(&sidecar, idx + 1, format!("expected key=value, got {line:?}"))
        })?;
        let parse_f64 = || {
            value.trim().parse::<f64>().map_err(|e| {
                Error::parse(&sidecar, idx + 1, format!("bad value for {key}: {e}"))
            })
        };
        match key.trim() {
            "magnification" => magnification = Some(parse_f64()?),
            "flight_time_s" => flight_time = Some(parse_f64()?),
            "exposure_s" => exposure = Some(parse_f64()?),
            "pixel_pitch_m" => pixel_pitch = Some(parse_f64()?),
            "n_averaged" => {
                n_averaged = Some(value.trim().parse::<u32>().map_err(|e| {
                    Error::parse(&sidecar, idx + 1, format!("bad value for n_averaged: {e}"))
                })?)
            }
            other => {
                return Err(Error::parse(
                    &sidecar,
                    idx + 1,
                    format!("unknown metadata key {other:?}"),
                ))
            }
        }
    }
    let missing = |key: &str| Error::parse(&sidecar, 0, format!("missing metadata key {key:?}"));
    let geometry = ImagingGeometry::new(
        magnification.ok_or_else(|| missing("magnification"))?,
        flight_time.ok_or_else(|| missing("flight_time_s"))?,
        pixel_pitch.ok_or_else(|| missing("pixel_pitch_m"))?,
        exposure.ok_or_else(|| missing("exposure_s"))?,
    )?;
    ImageFrame::new(counts, geometry, n_averaged.ok_or_else(|| missing("n_averaged"))?)
}

/// Writes quadrature records as CSV with header `theta_rad,u,weight`.
pub fn write_quadrature_csv(records: &[QuadratureRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut text = String::from("theta_rad,u,weight\n");
    for record in records {
        text.push_str(&format!("{},{},{}\n", record.theta, record.u, record.weight));
    }
    atomic_write(path.as_ref(), &text)
}

/// Reads a quadrature CSV written by [`write_quadrature_csv`].
pub fn read_quadrature_csv(path: impl AsRef<Path>) -> Result<Vec<QuadratureRecord>> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "empty quadrature file"))?;
    let normalized: Vec<&str> = header.split(',').map(str::trim).collect();
    if normalized != ["theta_rad", "u", "weight"] {
        return Err(Error::parse(path, 1, format!("unexpected header {header:?}")));
    }
    let mut records = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(Error::parse(path, idx + 1, format!("expected 3 fields, got {}", fields.len())));
        }
        let parse = |i: usize, name: &str| {
            fields[i].parse::<f64>().map_err(|e| {
                Error::parse(path, idx + 1, format!("bad {name} {:?}: {e}", fields[i]))
            })
        };
        records.push(QuadratureRecord::new(
            parse(0, "theta_rad")?,
            parse(1, "u")?,
            parse(2, "weight")?,
        )?);
    }
    if records.is_empty() {
        return Err(Error::degenerate("quadrature file contains no records"));
    }
    Ok(records)
}
