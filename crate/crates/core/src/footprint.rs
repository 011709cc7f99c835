//! Light footprints: how much normalized illuminance lands on an area, in total and
//! per lamp.
//!
//! Sources compose by summation over 1 m² cells (by default), so the area total is
//! exactly the sum of the per-source footprints. Footprint units are dimensionless
//! illuminance times square meters.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fieldmap::Scenario;
use crate::geo::{GeoError, GeoPoint, GeoPolygon, LocalFrame, Meters, MAX_GRID_CELLS};
use crate::lightmodel::LightSource;

pub const DEFAULT_FOOTPRINT_CELL_M: f64 = 1.0;
pub const DEFAULT_MOUNT_HEIGHT_M: f64 = 10.0;

#[derive(Debug, Error)]
pub enum FootprintError {
    #[error("unknown source {0:?}")]
    UnknownSource(String),
    #[error("mount height must be positive, got {0}")]
    InvalidMountHeight(f64),
    #[error("cell size must be positive, got {0}")]
    InvalidCellSize(f64),
    #[error("area does not intersect the scenario extent")]
    AreaOutsideScenario,
    #[error(transparent)]
    Geo(#[from] GeoError),
}

/// How a single lamp illuminates a ground cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IlluminanceKernel {
    /// The attenuation law, normalized by the scenario's brightest `I0`.
    #[default]
    Attenuation,
    /// Point source at `mount_height_m` above the ground: `I0·cosθ/(4πρ²)` with the
    /// incidence angle `cosθ = h/ρ`, normalized by its value directly below the lamp.
    /// This reduces to `(h/ρ)³`.
    InverseSquare {
        #[serde(default = "default_mount_height")]
        mount_height_m: f64,
    },
}

fn default_mount_height() -> f64 {
    DEFAULT_MOUNT_HEIGHT_M
}

impl IlluminanceKernel {
    pub fn inverse_square() -> Self {
        IlluminanceKernel::InverseSquare { mount_height_m: DEFAULT_MOUNT_HEIGHT_M }
    }

    pub fn validate(&self) -> Result<(), FootprintError> {
        match *self {
            IlluminanceKernel::InverseSquare { mount_height_m } if !(mount_height_m > 0.0 && mount_height_m.is_finite()) => {
                Err(FootprintError::InvalidMountHeight(mount_height_m))
            }
            _ => Ok(()),
        }
    }

    /// Short name used in reports and query strings.
    pub fn name(&self) -> &'static str {
        match self {
            IlluminanceKernel::Attenuation => "attenuation",
            IlluminanceKernel::InverseSquare { .. } => "inverse_square",
        }
    }

    fn at(&self, src: &LightSource, d: f64, i0_max: f64) -> f64 {
        match *self {
            IlluminanceKernel::Attenuation => (src.params.at(d) / i0_max).clamp(0.0, 1.0),
            IlluminanceKernel::InverseSquare { mount_height_m: h } => {
                let rho = d.hypot(h);
                (h / rho).powi(3).clamp(0.0, 1.0)
            }
        }
    }
}

/// Normalized illuminance in `[0, 1]` from `source` at `cell_center`.
pub fn cell_illuminance(source: &LightSource, cell_center: &GeoPoint, kernel: &IlluminanceKernel, i0_max: f64, frame: &LocalFrame) -> Result<f64, FootprintError> {
    kernel.validate()?;
    let d = frame.project(cell_center)?.dist(&frame.project(&source.position)?);
    Ok(kernel.at(source, d, i0_max))
}

/// Centers of the cells whose midpoints fall inside `area`, in scenario-frame meters.
struct AreaCells {
    centers: Vec<Meters>,
    cell_area_m2: f64,
}

fn area_cells(scenario: &Scenario, area: &GeoPolygon, cell_size_m: f64) -> Result<AreaCells, FootprintError> {
    if !(cell_size_m > 0.0 && cell_size_m.is_finite()) {
        return Err(FootprintError::InvalidCellSize(cell_size_m));
    }
    let (min, max) = area.bbox();
    if !scenario.bbox().intersects(&min, &max) {
        return Err(FootprintError::AreaOutsideScenario);
    }
    // cells are laid out in the scenario frame so that distances match the field
    let frame = scenario.frame();
    let (a, b) = (frame.project(&min)?, frame.project(&max)?);
    let count = |span: f64| ((span / cell_size_m + 1e-9).floor() as usize).max(1);
    let (cols, rows) = (count(b.x - a.x), count(b.y - a.y));
    if rows.saturating_mul(cols) > MAX_GRID_CELLS {
        return Err(GeoError::GridTooLarge { rows, cols, max: MAX_GRID_CELLS }.into());
    }
    let x0 = (a.x + b.x) / 2.0 - cols as f64 * cell_size_m / 2.0;
    let y0 = (a.y + b.y) / 2.0 + rows as f64 * cell_size_m / 2.0;
    let mut centers = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let m = Meters::new(x0 + (c as f64 + 0.5) * cell_size_m, y0 - (r as f64 + 0.5) * cell_size_m);
            if area.contains(&frame.unproject(m)?) {
                centers.push(m);
            }
        }
    }
    Ok(AreaCells { centers, cell_area_m2: cell_size_m * cell_size_m })
}

fn lamp_positions(scenario: &Scenario) -> Vec<Meters> {
    scenario.sources().iter().map(|s| scenario.frame().project_unchecked(&s.position)).collect()
}

/// Per-chunk partial sums combined in chunk order, so results do not depend on the
/// thread count.
fn ordered_sum<F>(cells: &[Meters], f: F) -> f64
where
    F: Fn(&Meters) -> f64 + Sync,
{
    const CHUNK: usize = 4096;
    let partials: Vec<f64> = cells.par_chunks(CHUNK).map(|c| c.iter().map(&f).sum::<f64>()).collect();
    partials.into_iter().sum()
}

/// Total footprint of all sources on `area`.
pub fn area_footprint(scenario: &Scenario, area: &GeoPolygon, kernel: &IlluminanceKernel, cell_size_m: f64) -> Result<f64, FootprintError> {
    kernel.validate()?;
    let cells = area_cells(scenario, area, cell_size_m)?;
    let lamps = lamp_positions(scenario);
    let i0_max = scenario.i0_max();
    let sources = scenario.sources();
    let total = ordered_sum(&cells.centers, |q| lamps.iter().zip(sources).map(|(p, s)| kernel.at(s, p.dist(q), i0_max)).sum());
    Ok(total * cells.cell_area_m2)
}

/// Footprint of one source on `area`.
pub fn source_footprint(scenario: &Scenario, source_id: &str, area: &GeoPolygon, kernel: &IlluminanceKernel, cell_size_m: f64) -> Result<f64, FootprintError> {
    kernel.validate()?;
    let src = scenario.source(source_id).ok_or_else(|| FootprintError::UnknownSource(source_id.to_string()))?;
    let cells = area_cells(scenario, area, cell_size_m)?;
    Ok(single(scenario, src, &cells, kernel))
}

fn single(scenario: &Scenario, src: &LightSource, cells: &AreaCells, kernel: &IlluminanceKernel) -> f64 {
    let p = scenario.frame().project_unchecked(&src.position);
    let i0_max = scenario.i0_max();
    ordered_sum(&cells.centers, |q| kernel.at(src, p.dist(q), i0_max)) * cells.cell_area_m2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceFootprint {
    pub source_id: String,
    pub footprint: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FootprintReport {
    pub area_total: f64,
    /// Sorted by footprint, largest first; ties keep source-id order.
    pub per_source: Vec<SourceFootprint>,
    pub cell_size_m: f64,
    pub kernel: IlluminanceKernel,
    pub cells: usize,
}

impl FootprintReport {
    pub fn get(&self, source_id: &str) -> Option<f64> {
        self.per_source.iter().find(|s| s.source_id == source_id).map(|s| s.footprint)
    }

    /// `source_id,footprint` rows.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["source_id", "footprint"]).expect("in-memory write");
        for s in &self.per_source {
            w.write_record([s.source_id.as_str(), &s.footprint.to_string()]).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
    }
}

/// Per-source footprints on `area` and their total.
pub fn footprint_report(scenario: &Scenario, area: &GeoPolygon, kernel: &IlluminanceKernel, cell_size_m: f64) -> Result<FootprintReport, FootprintError> {
    kernel.validate()?;
    let cells = area_cells(scenario, area, cell_size_m)?;
    let mut per_source: Vec<SourceFootprint> = scenario
        .sources()
        .iter()
        .map(|s| SourceFootprint { source_id: s.id.clone(), footprint: single(scenario, s, &cells, kernel) })
        .collect();
    // the area total is the sum in source-id order, before sorting
    let area_total = per_source.iter().map(|s| s.footprint).sum();
    per_source.sort_by(|a, b| b.footprint.total_cmp(&a.footprint));
    Ok(FootprintReport { area_total, per_source, cell_size_m, kernel: *kernel, cells: cells.centers.len() })
}
