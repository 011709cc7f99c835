//! Scenarios and the composed light field.
//!
//! The field at a point is the inverse-square-distance weighted mean of every lamp's
//! attenuated intensity at that point:
//!
//! ```text
//! f(p) = Σ wᵢ·Lᵢ / Σ wᵢ,   wᵢ = 1 / d(pᵢ, p)²,   Lᵢ = I₀ᵢ / (1 + c₁ᵢ·y + c₂ᵢ·y²),  y = α·d
//! ```
//!
//! A point within 1 µm of a lamp takes that lamp's `I₀` (the limit of the weighted
//! mean). Sources are kept sorted by id so every sum runs in the same order, which makes
//! rasters bit-reproducible regardless of how the scenario was assembled.

use std::collections::{HashSet, VecDeque};
use std::f64::consts::PI;

use image::{ImageBuffer, RgbImage, Rgba, RgbaImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{GeoError, GeoPoint, GeoPolygon, GridSpec, LocalFrame, Meters, FRAME_VALIDITY_RADIUS_M};
use crate::lightmodel::{normalized_brightness, sqm_unchecked, AttenuationParams, LightError, LightSource, DEFAULT_ALPHA};

/// Distance below which a point is treated as coinciding with a lamp.
pub const COINCIDENT_EPS_M: f64 = 1e-6;
pub const DEFAULT_CELL_SIZE_M: f64 = 10.0;
/// Sources may sit up to this far outside the scenario bbox.
pub const SOURCE_BBOX_PADDING_M: f64 = 1000.0;
pub const TILE_SIZE: u32 = 256;
pub const MAX_ZOOM: u8 = 22;
/// Intensity anchor used when a scenario has no sources.
const FALLBACK_I0: f64 = 16.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("scenario id {0:?} must be 1-64 characters of [A-Za-z0-9_-]")]
    InvalidId(String),
    #[error("duplicate source id {0:?}")]
    DuplicateSourceId(String),
    #[error("duplicate protected area name {0:?}")]
    DuplicateAreaName(String),
    #[error("source {id:?} lies {distance_m:.0} m outside the scenario bbox (limit 1000 m)")]
    SourceOutsideBbox { id: String, distance_m: f64 },
    #[error("source {id:?} has alpha {source_alpha}, scenario alpha is {scenario_alpha}")]
    AlphaMismatch { id: String, source_alpha: f64, scenario_alpha: f64 },
    #[error("cell size must be finite and > 0, got {0}")]
    InvalidCellSize(f64),
    #[error("alpha must be finite and >= 0, got {0}")]
    InvalidAlpha(f64),
    #[error("scenario bbox is too large for a single local frame")]
    BboxTooLarge,
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error(transparent)]
    Light(#[from] LightError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FieldError {
    #[error("scenario has no light sources")]
    NoSources,
    #[error("grid of {0} cells exceeds the render limit")]
    GridTooLarge(usize),
    #[error("invalid tile address z={z} x={x} y={y}")]
    InvalidTile { z: u8, x: u32, y: u32 },
    #[error(transparent)]
    Geo(#[from] GeoError),
}

/// South-west and north-east corners.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub min: GeoPoint,
    pub max: GeoPoint,
}

impl BBox {
    pub fn new(min: GeoPoint, max: GeoPoint) -> Result<Self, GeoError> {
        if !(min.lat() < max.lat() && min.lon() < max.lon()) {
            return Err(GeoError::InvalidBbox);
        }
        Ok(Self { min, max })
    }

    pub fn center(&self) -> GeoPoint {
        GeoPoint::new((self.min.lat() + self.max.lat()) / 2.0, (self.min.lon() + self.max.lon()) / 2.0)
            .expect("midpoint of valid corners")
    }

    pub fn contains(&self, p: &GeoPoint) -> bool {
        p.lat() >= self.min.lat() && p.lat() <= self.max.lat() && p.lon() >= self.min.lon() && p.lon() <= self.max.lon()
    }

    pub fn intersects(&self, min: &GeoPoint, max: &GeoPoint) -> bool {
        !(max.lat() < self.min.lat() || min.lat() > self.max.lat() || max.lon() < self.min.lon() || min.lon() > self.max.lon())
    }

    pub fn to_polygon(&self) -> GeoPolygon {
        GeoPolygon::rectangle(self.min, self.max).expect("valid bbox")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedArea {
    pub name: String,
    pub polygon: GeoPolygon,
}

/// A named world: lamps, protected areas and the raster extent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawScenario", into = "RawScenario")]
pub struct Scenario {
    id: String,
    sources: Vec<LightSource>,
    protected_areas: Vec<NamedArea>,
    bbox: BBox,
    cell_size_m: f64,
    alpha: f64,
    frame: LocalFrame,
}

#[derive(Serialize, Deserialize)]
struct RawScenario {
    id: String,
    #[serde(default)]
    sources: Vec<LightSource>,
    #[serde(default)]
    protected_areas: Vec<NamedArea>,
    bbox: BBox,
    #[serde(default = "default_cell_size")]
    cell_size_m: f64,
    #[serde(default = "default_alpha")]
    alpha: f64,
}

fn default_cell_size() -> f64 {
    DEFAULT_CELL_SIZE_M
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

impl TryFrom<RawScenario> for Scenario {
    type Error = ScenarioError;

    fn try_from(r: RawScenario) -> Result<Self, Self::Error> {
        Scenario::builder(r.id, r.bbox)
            .cell_size_m(r.cell_size_m)
            .alpha(r.alpha)
            .sources(r.sources)
            .areas(r.protected_areas)
            .build()
    }
}

impl From<Scenario> for RawScenario {
    fn from(s: Scenario) -> Self {
        RawScenario {
            id: s.id,
            sources: s.sources,
            protected_areas: s.protected_areas,
            bbox: s.bbox,
            cell_size_m: s.cell_size_m,
            alpha: s.alpha,
        }
    }
}

pub struct ScenarioBuilder {
    id: String,
    bbox: BBox,
    cell_size_m: f64,
    alpha: f64,
    sources: Vec<LightSource>,
    areas: Vec<NamedArea>,
}

impl ScenarioBuilder {
    pub fn cell_size_m(mut self, v: f64) -> Self {
        self.cell_size_m = v;
        self
    }

    pub fn alpha(mut self, v: f64) -> Self {
        self.alpha = v;
        self
    }

    pub fn sources(mut self, v: Vec<LightSource>) -> Self {
        self.sources = v;
        self
    }

    pub fn source(mut self, s: LightSource) -> Self {
        self.sources.push(s);
        self
    }

    pub fn areas(mut self, v: Vec<NamedArea>) -> Self {
        self.areas = v;
        self
    }

    pub fn area(mut self, name: impl Into<String>, polygon: GeoPolygon) -> Self {
        self.areas.push(NamedArea { name: name.into(), polygon });
        self
    }

    pub fn build(self) -> Result<Scenario, ScenarioError> {
        validate_id(&self.id)?;
        if !self.cell_size_m.is_finite() || self.cell_size_m <= 0.0 {
            return Err(ScenarioError::InvalidCellSize(self.cell_size_m));
        }
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return Err(ScenarioError::InvalidAlpha(self.alpha));
        }
        let bbox = BBox::new(self.bbox.min, self.bbox.max)?;
        let frame = LocalFrame::new(bbox.center())?;
        let half_diag = frame.project_unchecked(&bbox.max).norm().max(frame.project_unchecked(&bbox.min).norm());
        if half_diag + SOURCE_BBOX_PADDING_M > FRAME_VALIDITY_RADIUS_M {
            return Err(ScenarioError::BboxTooLarge);
        }
        let mut s = Scenario {
            id: self.id,
            sources: Vec::new(),
            protected_areas: Vec::new(),
            bbox,
            cell_size_m: self.cell_size_m,
            alpha: self.alpha,
            frame,
        };
        s.set_sources(self.sources)?;
        s.set_areas(self.areas)?;
        Ok(s)
    }
}

/// Scenario ids are 1 to 64 characters from `[A-Za-z0-9_-]`, safe to use as file names.
pub fn validate_id(id: &str) -> Result<(), ScenarioError> {
    let ok = !id.is_empty() && id.len() <= 64 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
    if ok {
        Ok(())
    } else {
        Err(ScenarioError::InvalidId(id.to_string()))
    }
}

impl Scenario {
    pub fn builder(id: impl Into<String>, bbox: BBox) -> ScenarioBuilder {
        ScenarioBuilder {
            id: id.into(),
            bbox,
            cell_size_m: DEFAULT_CELL_SIZE_M,
            alpha: DEFAULT_ALPHA,
            sources: Vec::new(),
            areas: Vec::new(),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    /// Sources, sorted by id.
    pub fn sources(&self) -> &[LightSource] {
        &self.sources
    }

    pub fn source(&self, id: &str) -> Option<&LightSource> {
        self.sources.binary_search_by(|s| s.id.as_str().cmp(id)).ok().map(|i| &self.sources[i])
    }

    pub fn protected_areas(&self) -> &[NamedArea] {
        &self.protected_areas
    }

    pub fn area(&self, name: &str) -> Option<&GeoPolygon> {
        self.protected_areas.iter().find(|a| a.name == name).map(|a| &a.polygon)
    }

    pub fn bbox(&self) -> BBox {
        self.bbox
    }

    pub fn cell_size_m(&self) -> f64 {
        self.cell_size_m
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn frame(&self) -> &LocalFrame {
        &self.frame
    }

    /// Largest `I₀` among the sources; the brightness scale anchor.
    pub fn i0_max(&self) -> f64 {
        if self.sources.is_empty() {
            return FALLBACK_I0;
        }
        self.sources.iter().map(|s| s.params.i0()).fold(0.0, f64::max)
    }

    pub fn with_cell_size(&self, cell_size_m: f64) -> Result<Scenario, ScenarioError> {
        if !cell_size_m.is_finite() || cell_size_m <= 0.0 {
            return Err(ScenarioError::InvalidCellSize(cell_size_m));
        }
        let mut s = self.clone();
        s.cell_size_m = cell_size_m;
        Ok(s)
    }

    /// Replaces all sources after validating ids, extent, alpha and profiles.
    pub fn set_sources(&mut self, mut sources: Vec<LightSource>) -> Result<(), ScenarioError> {
        sources.sort_by(|a, b| a.id.cmp(&b.id));
        for w in sources.windows(2) {
            if w[0].id == w[1].id {
                return Err(ScenarioError::DuplicateSourceId(w[0].id.clone()));
            }
        }
        for s in &sources {
            self.check_source(s)?;
        }
        self.sources = sources;
        Ok(())
    }

    /// Checks one lamp against this scenario's extent, alpha and its profile tag,
    /// ignoring id clashes.
    pub fn check_source(&self, s: &LightSource) -> Result<(), ScenarioError> {
        s.validate()?;
        if s.params.alpha() != self.alpha {
            return Err(ScenarioError::AlphaMismatch {
                id: s.id.clone(),
                source_alpha: s.params.alpha(),
                scenario_alpha: self.alpha,
            });
        }
        let outside = self.outside_bbox_m(&s.position);
        if outside > SOURCE_BBOX_PADDING_M {
            return Err(ScenarioError::SourceOutsideBbox { id: s.id.clone(), distance_m: outside });
        }
        Ok(())
    }

    pub fn set_areas(&mut self, areas: Vec<NamedArea>) -> Result<(), ScenarioError> {
        let mut seen = HashSet::new();
        for a in &areas {
            if !seen.insert(a.name.as_str()) {
                return Err(ScenarioError::DuplicateAreaName(a.name.clone()));
            }
        }
        self.protected_areas = areas;
        Ok(())
    }

    /// How far (meters) a point lies outside the bbox; 0 inside.
    fn outside_bbox_m(&self, p: &GeoPoint) -> f64 {
        let lat = p.lat().clamp(self.bbox.min.lat(), self.bbox.max.lat());
        let lon = p.lon().clamp(self.bbox.min.lon(), self.bbox.max.lon());
        let nearest = GeoPoint::new(lat, lon).expect("clamped into a valid bbox");
        self.frame.project_unchecked(p).dist(&self.frame.project_unchecked(&nearest))
    }

    pub fn grid_spec(&self) -> Result<GridSpec, GeoError> {
        GridSpec::new(self.bbox.min, self.bbox.max, self.cell_size_m)
    }

    pub fn field_model(&self) -> FieldModel {
        FieldModel::new(self.sources.iter().map(|s| (self.frame.project_unchecked(&s.position), s.params)).collect())
    }
}

/// Lamps projected into a frame, ready for repeated field evaluation.
#[derive(Debug, Clone)]
pub struct FieldModel {
    lamps: Vec<(Meters, AttenuationParams)>,
}

impl FieldModel {
    pub fn new(lamps: Vec<(Meters, AttenuationParams)>) -> Self {
        Self { lamps }
    }

    pub fn is_empty(&self) -> bool {
        self.lamps.is_empty()
    }

    /// Weighted-mean field at `q`; 0 when there are no lamps.
    pub fn eval(&self, q: Meters) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        let mut coincident = 0.0;
        let mut n_coincident = 0usize;
        for (pos, params) in &self.lamps {
            let d2 = (pos.x - q.x).powi(2) + (pos.y - q.y).powi(2);
            if d2 < COINCIDENT_EPS_M * COINCIDENT_EPS_M {
                coincident += params.i0();
                n_coincident += 1;
                continue;
            }
            let w = 1.0 / d2;
            num += w * params.at(d2.sqrt());
            den += w;
        }
        if n_coincident > 0 {
            coincident / n_coincident as f64
        } else if den > 0.0 {
            num / den
        } else {
            0.0
        }
    }
}

/// Field value at `p_t`.
pub fn field_at(scenario: &Scenario, p_t: &GeoPoint) -> Result<f64, FieldError> {
    if scenario.sources.is_empty() {
        return Err(FieldError::NoSources);
    }
    let q = scenario.frame.project(p_t)?;
    Ok(scenario.field_model().eval(q))
}

/// A raster of field intensities. Row 0 is north.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FieldGrid {
    pub spec: GridSpec,
    pub values: Vec<f64>,
    /// Brightness scale anchor of the scenario the grid was rendered from.
    pub i0_max: f64,
}

impl FieldGrid {
    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.spec.cols() + col]
    }
}

/// Evaluates the field at every cell center of the scenario grid. A scenario without
/// sources renders as darkness.
pub fn render_grid(scenario: &Scenario) -> Result<FieldGrid, FieldError> {
    let spec = scenario.grid_spec().map_err(|e| match e {
        GeoError::GridTooLarge { rows, cols, .. } => FieldError::GridTooLarge(rows.saturating_mul(cols)),
        e => FieldError::Geo(e),
    })?;
    let model = scenario.field_model();
    let frame = *scenario.frame();
    let cols = spec.cols();
    let mut values = vec![0.0; spec.len()];
    values.par_chunks_mut(cols).enumerate().for_each(|(r, row)| {
        for (c, v) in row.iter_mut().enumerate() {
            *v = model.eval(frame.project_unchecked(&spec.cell_center(r, c)));
        }
    });
    Ok(FieldGrid { spec, values, i0_max: scenario.i0_max() })
}

/// The ten-stop colormap, darkness to maximum brightness.
pub const COLOR_STOPS: [(f64, [u8; 3]); 10] = [
    (0.0, [0, 0, 0]),             // black
    (1.0 / 9.0, [0, 0, 255]),     // blue
    (2.0 / 9.0, [0, 255, 255]),   // cyan
    (3.0 / 9.0, [0, 255, 0]),     // lime
    (4.0 / 9.0, [255, 255, 0]),   // yellow
    (5.0 / 9.0, [255, 165, 0]),   // orange
    (6.0 / 9.0, [255, 0, 0]),     // red
    (7.0 / 9.0, [128, 0, 0]),     // maroon
    (8.0 / 9.0, [128, 0, 128]),   // purple
    (1.0, [255, 255, 255]),       // white
];

/// Piecewise-linear colormap lookup for a normalized brightness in `[0, 1]`.
pub fn colormap(n: f64) -> [u8; 3] {
    let n = if n.is_nan() { 0.0 } else { n.clamp(0.0, 1.0) };
    let seg = ((n * 9.0).floor() as usize).min(8);
    let (p0, c0) = COLOR_STOPS[seg];
    let (p1, c1) = COLOR_STOPS[seg + 1];
    let t = ((n - p0) / (p1 - p0)).clamp(0.0, 1.0);
    let mut out = [0u8; 3];
    for k in 0..3 {
        out[k] = (c0[k] as f64 + t * (c1[k] as f64 - c0[k] as f64)).round() as u8;
    }
    out
}

/// Color of a single intensity on the scenario brightness scale.
pub fn color_for(v: f64, i0_max: f64) -> [u8; 3] {
    colormap(normalized_brightness(sqm_unchecked(v, i0_max)))
}

/// Colorizes a grid; image width = cols, height = rows. `i0_max <= 0` is treated as the
/// grid's own anchor.
pub fn colorize(grid: &FieldGrid, i0_max: f64) -> RgbImage {
    let scale = if i0_max > 0.0 { i0_max } else { grid.i0_max };
    let (w, h) = (grid.spec.cols() as u32, grid.spec.rows() as u32);
    let mut buf = Vec::with_capacity(grid.values.len() * 3);
    for v in &grid.values {
        buf.extend_from_slice(&color_for(*v, scale));
    }
    ImageBuffer::from_raw(w, h, buf).expect("buffer sized to grid")
}

/// Geographic bounds of a web-mercator tile: (north-west, south-east) as (lat, lon) pairs.
pub fn tile_bounds(z: u8, x: u32, y: u32) -> ((f64, f64), (f64, f64)) {
    let n = 2f64.powi(z as i32);
    let lon = |x: f64| x / n * 360.0 - 180.0;
    let lat = |y: f64| (PI * (1.0 - 2.0 * y / n)).sinh().atan().to_degrees();
    ((lat(y as f64), lon(x as f64)), (lat(y as f64 + 1.0), lon(x as f64 + 1.0)))
}

/// Center of a pixel addressed in global pixel coordinates at zoom `z`.
fn pixel_center(z: u8, gx: u64, gy: u64) -> (f64, f64) {
    let world = TILE_SIZE as f64 * 2f64.powi(z as i32);
    let lon = (gx as f64 + 0.5) / world * 360.0 - 180.0;
    let lat = (PI * (1.0 - 2.0 * (gy as f64 + 0.5) / world)).sinh().atan().to_degrees();
    (lat, lon)
}

/// Renders an arbitrary window of global pixels at zoom `z`. Tiles are windows of this
/// function, so adjacent tiles stitch exactly into a larger render.
pub fn render_pixels(scenario: &Scenario, z: u8, gx0: u64, gy0: u64, width: u32, height: u32) -> RgbaImage {
    let model = scenario.field_model();
    let frame = *scenario.frame();
    let bbox = scenario.bbox();
    let i0_max = scenario.i0_max();
    let mut buf = vec![0u8; width as usize * height as usize * 4];
    buf.par_chunks_mut(width as usize * 4).enumerate().for_each(|(r, row)| {
        for c in 0..width as usize {
            let (lat, lon) = pixel_center(z, gx0 + c as u64, gy0 + r as u64);
            let Ok(p) = GeoPoint::new(lat, lon) else { continue };
            if !bbox.contains(&p) {
                continue;
            }
            let rgb = color_for(model.eval(frame.project_unchecked(&p)), i0_max);
            row[c * 4..c * 4 + 4].copy_from_slice(&[rgb[0], rgb[1], rgb[2], 255]);
        }
    });
    ImageBuffer::from_raw(width, height, buf).expect("buffer sized to window")
}

/// A 256×256 web-mercator tile. Pixels outside the scenario bbox are fully transparent.
pub fn render_tile(scenario: &Scenario, z: u8, x: u32, y: u32) -> Result<RgbaImage, FieldError> {
    let n = 1u64 << z.min(63);
    if z > MAX_ZOOM || x as u64 >= n || y as u64 >= n {
        return Err(FieldError::InvalidTile { z, x, y });
    }
    let ((north, west), (south, east)) = tile_bounds(z, x, y);
    let bbox = scenario.bbox();
    if !bbox.intersects(&GeoPoint::new(south.max(-90.0), west)?, &GeoPoint::new(north.min(90.0), east)?) {
        return Ok(transparent_tile());
    }
    Ok(render_pixels(scenario, z, x as u64 * TILE_SIZE as u64, y as u64 * TILE_SIZE as u64, TILE_SIZE, TILE_SIZE))
}

pub fn transparent_tile() -> RgbaImage {
    RgbaImage::from_pixel(TILE_SIZE, TILE_SIZE, Rgba([0, 0, 0, 0]))
}

/// Web-mercator tile containing `p` at zoom `z`.
pub fn tile_for(p: &GeoPoint, z: u8) -> (u32, u32) {
    let n = 2f64.powi(z as i32);
    let x = ((p.lon() + 180.0) / 360.0 * n).floor();
    let lat = p.lat().to_radians();
    let y = ((1.0 - (lat.tan() + 1.0 / lat.cos()).ln() / PI) / 2.0 * n).floor();
    (x.clamp(0.0, n - 1.0) as u32, y.clamp(0.0, n - 1.0) as u32)
}

pub fn encode_png_rgb(img: &RgbImage) -> Vec<u8> {
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png).expect("png encoding into memory");
    out.into_inner()
}

pub fn encode_png_rgba(img: &RgbaImage) -> Vec<u8> {
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png).expect("png encoding into memory");
    out.into_inner()
}

/// A 4-connected region of bright cells.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Hotspot {
    pub cell_count: usize,
    pub centroid: GeoPoint,
    /// Row-major cell indices, ascending.
    pub cells: Vec<usize>,
}

/// Connected regions whose SQM reading is at or below `threshold_sqm` (i.e. at least as
/// bright), largest first.
pub fn hotspots(grid: &FieldGrid, threshold_sqm: f64) -> Vec<Hotspot> {
    let (rows, cols) = (grid.spec.rows(), grid.spec.cols());
    let bright: Vec<bool> = grid.values.iter().map(|v| sqm_unchecked(*v, grid.i0_max) <= threshold_sqm).collect();
    let mut seen = vec![false; bright.len()];
    let mut out = Vec::new();
    for start in 0..bright.len() {
        if !bright[start] || seen[start] {
            continue;
        }
        let mut cells = Vec::new();
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(i) = queue.pop_front() {
            cells.push(i);
            let (r, c) = (i / cols, i % cols);
            let mut visit = |j: usize| {
                if bright[j] && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            };
            if r > 0 {
                visit(i - cols);
            }
            if r + 1 < rows {
                visit(i + cols);
            }
            if c > 0 {
                visit(i - 1);
            }
            if c + 1 < cols {
                visit(i + 1);
            }
        }
        cells.sort_unstable();
        let (mut lat, mut lon) = (0.0, 0.0);
        for &i in &cells {
            let p = grid.spec.index_center(i);
            lat += p.lat();
            lon += p.lon();
        }
        let n = cells.len() as f64;
        let centroid = GeoPoint::new(lat / n, lon / n).expect("mean of valid cell centers");
        out.push(Hotspot { cell_count: cells.len(), centroid, cells });
    }
    out.sort_by(|a, b| b.cell_count.cmp(&a.cell_count));
    out
}
