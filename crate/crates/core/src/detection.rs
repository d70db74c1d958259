//! Simulated under-carriage laser scanner.
//!
//! A sweep samples a ground-truth road surface on a regular grid (columns
//! run along the arc, rows across it) and produces a depth map plus the
//! matching return-intensity image. Extraction thresholds the longitudinal
//! depth profile and turns each connected run of supra-threshold cells into
//! one pothole report.

use std::io::Write;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::ArcId;
use crate::registry::{DetectionReport, Location};

pub const DEFAULT_THRESHOLD_MM: f64 = 10.0;
pub const DEFAULT_CELL_M: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pit {
    pub center_m: f64,
    pub half_length_m: f64,
    pub depth_mm: f64,
    /// Fraction of laser energy returned from the pit floor, in [0, 1].
    pub reflectivity: f64,
}

impl Pit {
    fn covers(&self, offset_m: f64) -> bool {
        (offset_m - self.center_m).abs() <= self.half_length_m
    }
}

/// The true surface of one arc, as the scanner would observe it.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthSurface {
    arc: ArcId,
    length_m: f64,
    pits: Vec<Pit>,
}

impl GroundTruthSurface {
    pub fn new(arc: ArcId, length_m: f64, pits: Vec<Pit>) -> Result<Self> {
        for pit in &pits {
            let lo = pit.center_m - pit.half_length_m;
            let hi = pit.center_m + pit.half_length_m;
            if !(pit.half_length_m >= 0.0 && lo >= 0.0 && hi <= length_m) {
                return Err(Error::Validation(format!(
                    "pit at {} m (half-length {} m) extends outside arc `{}` of length {} m",
                    pit.center_m, pit.half_length_m, arc, length_m
                )));
            }
            if !(pit.depth_mm.is_finite() && pit.depth_mm >= 0.0) {
                return Err(Error::InvalidDepth(pit.depth_mm));
            }
            if !(0.0..=1.0).contains(&pit.reflectivity) {
                return Err(Error::Validation(format!(
                    "pit reflectivity {} outside [0, 1]",
                    pit.reflectivity
                )));
            }
        }
        Ok(Self {
            arc,
            length_m,
            pits,
        })
    }

    pub fn flat(arc: ArcId, length_m: f64) -> Self {
        Self {
            arc,
            length_m,
            pits: Vec::new(),
        }
    }

    pub fn arc(&self) -> &ArcId {
        &self.arc
    }

    pub fn length_m(&self) -> f64 {
        self.length_m
    }

    pub fn pits(&self) -> &[Pit] {
        &self.pits
    }

    /// (depth, intensity) at an offset: the deepest covering pit, or a flat
    /// fully reflective surface.
    fn sample(&self, offset_m: f64) -> (f64, f64) {
        self.pits
            .iter()
            .filter(|p| p.covers(offset_m))
            .fold((0.0, 1.0), |(d, i), p| {
                if p.depth_mm > d {
                    (p.depth_mm, p.reflectivity)
                } else {
                    (d, i)
                }
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepConfig {
    pub cell_m: f64,
    pub rows: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            cell_m: DEFAULT_CELL_M,
            rows: 1,
        }
    }
}

/// Row-major grid of depths in millimeters.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub rows: usize,
    pub cols: usize,
    pub cell_m: f64,
    pub depths: Vec<f64>,
}

/// Row-major grid of return intensities in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityImage {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl DepthMap {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.depths[row * self.cols + col]
    }

    /// Sub-grid restricted to a column range.
    pub fn columns(&self, cols: Range<usize>) -> DepthMap {
        DepthMap {
            rows: self.rows,
            cols: cols.len(),
            cell_m: self.cell_m,
            depths: crop(&self.depths, self.rows, self.cols, &cols),
        }
    }

    pub fn max_depth(&self) -> Option<f64> {
        self.depths.iter().copied().reduce(f64::max)
    }

    /// One CSV line per row.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        for row in self.depths.chunks(self.cols.max(1)) {
            let line: Vec<String> = row.iter().map(f64::to_string).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }
}

impl IntensityImage {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn columns(&self, cols: Range<usize>) -> IntensityImage {
        IntensityImage {
            rows: self.rows,
            cols: cols.len(),
            values: crop(&self.values, self.rows, self.cols, &cols),
        }
    }
}

fn crop(values: &[f64], rows: usize, cols: usize, keep: &Range<usize>) -> Vec<f64> {
    (0..rows)
        .flat_map(|r| {
            values[r * cols + keep.start..r * cols + keep.end]
                .iter()
                .copied()
        })
        .collect()
}

/// Number of grid columns covering a window of the given width.
fn column_count(width_m: f64, cell_m: f64) -> usize {
    ((width_m / cell_m - 1e-9).ceil() as usize).max(1)
}

/// Samples `surface` over `window` (start, end offsets in meters). Each cell
/// reads the surface at its center.
pub fn sweep(
    surface: &GroundTruthSurface,
    window: (f64, f64),
    cfg: &SweepConfig,
) -> Result<(DepthMap, IntensityImage)> {
    let (start, end) = window;
    if !(start >= 0.0 && start < end && end <= surface.length_m) {
        return Err(Error::InvalidWindow { start, end });
    }
    if !(cfg.cell_m > 0.0 && cfg.rows > 0) {
        return Err(Error::Validation(format!(
            "invalid sweep grid: cell {} m, {} rows",
            cfg.cell_m, cfg.rows
        )));
    }

    let cols = column_count(end - start, cfg.cell_m);
    let profile: Vec<(f64, f64)> = (0..cols)
        .map(|c| {
            let center = (start + (c as f64 + 0.5) * cfg.cell_m).min(end);
            surface.sample(center)
        })
        .collect();

    let mut depths = Vec::with_capacity(cfg.rows * cols);
    let mut values = Vec::with_capacity(cfg.rows * cols);
    for _ in 0..cfg.rows {
        depths.extend(profile.iter().map(|p| p.0));
        values.extend(profile.iter().map(|p| p.1));
    }
    Ok((
        DepthMap {
            rows: cfg.rows,
            cols,
            cell_m: cfg.cell_m,
            depths,
        },
        IntensityImage {
            rows: cfg.rows,
            cols,
            values,
        },
    ))
}

/// Longitudinal profile: per column, max depth across rows and mean
/// intensity across rows.
pub(crate) fn column_profile(dm: &DepthMap, ii: &IntensityImage) -> Result<Vec<(f64, f64)>> {
    if dm.rows != ii.rows
        || dm.cols != ii.cols
        || dm.depths.len() != dm.rows * dm.cols
        || ii.values.len() != ii.rows * ii.cols
    {
        return Err(Error::GridMismatch);
    }
    Ok((0..dm.cols)
        .map(|c| {
            let depth = (0..dm.rows).map(|r| dm.get(r, c)).fold(0.0, f64::max);
            let intensity = (0..dm.rows).map(|r| ii.get(r, c)).sum::<f64>() / dm.rows as f64;
            (depth, intensity)
        })
        .collect())
}

/// Where a sweep's grid sits on the network.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowOrigin {
    pub arc: ArcId,
    pub start_m: f64,
    pub arc_length_m: f64,
}

/// An extracted pothole plus the grid columns it was found in.
#[derive(Debug, Clone, PartialEq)]
pub struct Extracted {
    pub report: DetectionReport,
    pub columns: Range<usize>,
}

/// Connected runs of columns whose depth is at least `threshold_mm`. Each
/// run reports its max depth, its depth-weighted centroid offset and its
/// mean intensity.
pub fn extract_runs(
    dm: &DepthMap,
    ii: &IntensityImage,
    threshold_mm: f64,
    origin: &WindowOrigin,
) -> Result<Vec<Extracted>> {
    if threshold_mm.is_nan() || threshold_mm <= 0.0 {
        return Err(Error::InvalidThreshold(threshold_mm));
    }
    let profile = column_profile(dm, ii)?;

    let mut runs = Vec::new();
    let mut c = 0;
    while c < profile.len() {
        if profile[c].0 < threshold_mm {
            c += 1;
            continue;
        }
        let begin = c;
        while c < profile.len() && profile[c].0 >= threshold_mm {
            c += 1;
        }
        runs.push(begin..c);
    }

    Ok(runs
        .into_iter()
        .map(|cols| {
            let cells = &profile[cols.clone()];
            let depth_mm = cells.iter().map(|p| p.0).fold(0.0, f64::max);
            let (moment, mass) = cols.clone().zip(cells).fold((0.0, 0.0), |(m, s), (i, p)| {
                let center = origin.start_m + (i as f64 + 0.5) * dm.cell_m;
                (m + p.0 * center, s + p.0)
            });
            let offset_m = (moment / mass).clamp(0.0, origin.arc_length_m);
            let intensity = cells.iter().map(|p| p.1).sum::<f64>() / cells.len() as f64;
            Extracted {
                report: DetectionReport {
                    location: Location::new(origin.arc.clone(), offset_m),
                    depth_mm,
                    intensity,
                },
                columns: cols,
            }
        })
        .collect())
}

pub fn extract_potholes(
    dm: &DepthMap,
    ii: &IntensityImage,
    threshold_mm: f64,
    origin: &WindowOrigin,
) -> Result<Vec<DetectionReport>> {
    Ok(extract_runs(dm, ii, threshold_mm, origin)?
        .into_iter()
        .map(|e| e.report)
        .collect())
}
