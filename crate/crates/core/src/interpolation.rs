//! Scattered-data interpolation of SQM measurements.
//!
//! Six methods share one interface: plain IDW, a localized (modified) Shepard scheme,
//! ordinary kriging with a fitted exponential variogram, a thin-plate spline RBF, IDW
//! with a caller-chosen power, and nearest neighbor. Every method returns a sample's
//! own value when queried exactly at that sample.
//!
//! Fitting (variogram estimation, RBF weights) happens once in [`Interpolator::fit`];
//! the fitted model is immutable and can be shared across threads.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, LU, Dyn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{GeoError, GeoPoint, LocalFrame, Meters};

/// Queries closer than this to a node return the node's value.
const COINCIDENT_M: f64 = 1e-9;
const KRIGING_LAG_BINS: usize = 8;
const KRIGING_NUGGET_FLOOR: f64 = 1e-6;
const RBF_RIDGE: f64 = 1e-8;
pub const IDW_POWER: f64 = 2.0;
pub const IDW_VP_POWER_RANGE: (f64, f64) = (1.0, 6.0);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InterpError {
    #[error("{method} needs at least {needed} distinct samples, got {got}")]
    TooFewSamples { method: InterpMethod, needed: usize, got: usize },
    #[error("{0} system is singular or ill-conditioned; fall back to IDW")]
    SingularSystem(InterpMethod),
    #[error("IDW-VP power {0} outside [1, 6]")]
    InvalidPower(f64),
    #[error("sample {0} has a non-finite value")]
    NonFiniteValue(usize),
    #[error("unknown interpolation method {0:?}")]
    UnknownMethod(String),
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error("sample csv: {0}")]
    Csv(String),
}

/// A measured SQM value at a location.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplePoint {
    pub position: GeoPoint,
    pub value: f64,
}

impl SamplePoint {
    pub fn new(position: GeoPoint, value: f64) -> Self {
        Self { position, value }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum InterpMethod {
    /// Inverse distance weighting, `w = 1/d²`.
    Idw,
    /// Modified Shepard with a search radius of twice the mean nearest-neighbor spacing.
    Shepard,
    /// Ordinary kriging, exponential variogram.
    Kriging,
    /// Thin-plate spline with a linear polynomial tail.
    Rbf,
    /// IDW with a configurable power in `[1, 6]`.
    IdwVp { power: f64 },
    /// Nearest neighbor.
    Nni,
}

impl InterpMethod {
    pub const ALL_TAGS: [&'static str; 6] = ["idw", "shepard", "kriging", "rbf", "idw-vp", "nni"];

    pub fn tag(&self) -> &'static str {
        match self {
            InterpMethod::Idw => "idw",
            InterpMethod::Shepard => "shepard",
            InterpMethod::Kriging => "kriging",
            InterpMethod::Rbf => "rbf",
            InterpMethod::IdwVp { .. } => "idw-vp",
            InterpMethod::Nni => "nni",
        }
    }

    /// Every method with default hyperparameters.
    pub fn all() -> [InterpMethod; 6] {
        [
            InterpMethod::Idw,
            InterpMethod::Shepard,
            InterpMethod::Kriging,
            InterpMethod::Rbf,
            InterpMethod::IdwVp { power: IDW_POWER },
            InterpMethod::Nni,
        ]
    }

    fn min_samples(&self) -> usize {
        match self {
            InterpMethod::Kriging => 3,
            _ => 1,
        }
    }

    fn validate(&self) -> Result<(), InterpError> {
        if let InterpMethod::IdwVp { power } = *self {
            let (lo, hi) = IDW_VP_POWER_RANGE;
            if !(lo..=hi).contains(&power) {
                return Err(InterpError::InvalidPower(power));
            }
        }
        Ok(())
    }
}

impl fmt::Display for InterpMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InterpMethod::IdwVp { power } => write!(f, "idw-vp(p={power})"),
            m => f.write_str(m.tag()),
        }
    }
}

impl FromStr for InterpMethod {
    type Err = InterpError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "idw" => InterpMethod::Idw,
            "shepard" => InterpMethod::Shepard,
            "kriging" => InterpMethod::Kriging,
            "rbf" => InterpMethod::Rbf,
            "idw-vp" | "idw_vp" | "idwvp" => InterpMethod::IdwVp { power: IDW_POWER },
            "nni" => InterpMethod::Nni,
            other => return Err(InterpError::UnknownMethod(other.to_string())),
        })
    }
}

/// Exponential variogram `γ(h) = nugget + psill·(1 − exp(−h/range))`, `γ(0) = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Variogram {
    pub nugget: f64,
    pub psill: f64,
    pub range: f64,
}

impl Variogram {
    pub fn gamma(&self, h: f64) -> f64 {
        if h <= 0.0 {
            0.0
        } else {
            self.nugget + self.psill * (1.0 - (-h / self.range).exp())
        }
    }

    fn sill(&self) -> f64 {
        self.nugget + self.psill
    }
}

#[derive(Debug, Clone)]
enum Model {
    Direct,
    Shepard { radius: f64 },
    Kriging { variogram: Variogram, scale: f64, lu: LU<f64, Dyn, Dyn> },
    Rbf { length: f64, weights: Vec<f64>, tail: [f64; 3] },
}

/// A method fitted to one sample set.
#[derive(Debug, Clone)]
pub struct Interpolator {
    method: InterpMethod,
    frame: LocalFrame,
    centroid: Meters,
    nodes: Vec<Meters>,
    values: Vec<f64>,
    model: Model,
}

impl Interpolator {
    pub fn fit(method: InterpMethod, samples: &[SamplePoint], frame: &LocalFrame) -> Result<Self, InterpError> {
        method.validate()?;
        let (nodes_abs, values) = dedupe(samples, frame)?;
        Self::fit_local(method, frame, &nodes_abs, values)
    }

    /// Fits on nodes already projected into `frame` and deduplicated.
    pub(crate) fn fit_local(method: InterpMethod, frame: &LocalFrame, nodes_abs: &[Meters], values: Vec<f64>) -> Result<Self, InterpError> {
        let needed = method.min_samples();
        if nodes_abs.len() < needed {
            return Err(InterpError::TooFewSamples { method, needed, got: nodes_abs.len() });
        }
        let n = nodes_abs.len() as f64;
        let centroid = Meters::new(
            nodes_abs.iter().map(|m| m.x).sum::<f64>() / n,
            nodes_abs.iter().map(|m| m.y).sum::<f64>() / n,
        );
        let nodes: Vec<Meters> =
            nodes_abs.iter().map(|m| Meters::new(m.x - centroid.x, m.y - centroid.y)).collect();
        let model = match method {
            InterpMethod::Idw | InterpMethod::IdwVp { .. } | InterpMethod::Nni => Model::Direct,
            InterpMethod::Shepard => Model::Shepard { radius: 2.0 * mean_nn_spacing(&nodes) },
            InterpMethod::Kriging => fit_kriging(&nodes, &values)?,
            InterpMethod::Rbf => fit_rbf(&nodes, &values)?,
        };
        Ok(Self { method, frame: *frame, centroid, nodes, values, model })
    }

    pub fn method(&self) -> InterpMethod {
        self.method
    }

    /// The fitted variogram, for kriging models.
    pub fn variogram(&self) -> Option<Variogram> {
        match &self.model {
            Model::Kriging { variogram, .. } => Some(*variogram),
            _ => None,
        }
    }

    pub fn estimate(&self, query: &GeoPoint) -> Result<f64, InterpError> {
        self.estimate_local(self.frame.project(query)?)
    }

    /// Estimate at a point given in frame meters.
    pub(crate) fn estimate_local(&self, q: Meters) -> Result<f64, InterpError> {
        let q = Meters::new(q.x - self.centroid.x, q.y - self.centroid.y);
        let dists: Vec<f64> = self.nodes.iter().map(|n| n.dist(&q)).collect();
        if let Some(k) = dists.iter().position(|&d| d < COINCIDENT_M) {
            return Ok(self.values[k]);
        }
        let v = match &self.model {
            Model::Direct => match self.method {
                InterpMethod::Nni => {
                    let mut best = 0;
                    for (i, d) in dists.iter().enumerate() {
                        if *d < dists[best] {
                            best = i;
                        }
                    }
                    self.values[best]
                }
                InterpMethod::IdwVp { power } => idw(&dists, &self.values, power),
                _ => idw(&dists, &self.values, IDW_POWER),
            },
            Model::Shepard { radius } => {
                let r = *radius;
                let mut num = 0.0;
                let mut den = 0.0;
                for (d, v) in dists.iter().zip(&self.values) {
                    if *d < r {
                        let w = ((r - d) / (r * d)).powi(2);
                        num += w * v;
                        den += w;
                    }
                }
                if den > 0.0 {
                    num / den
                } else {
                    // query outside every node's radius
                    idw(&dists, &self.values, IDW_POWER)
                }
            }
            Model::Kriging { variogram, scale, lu } => {
                let n = self.nodes.len();
                let mut rhs = DVector::zeros(n + 1);
                for (i, d) in dists.iter().enumerate() {
                    rhs[i] = variogram.gamma(*d) / scale;
                }
                rhs[n] = 1.0;
                let sol = lu.solve(&rhs).ok_or(InterpError::SingularSystem(self.method))?;
                let v: f64 = (0..n).map(|i| sol[i] * self.values[i]).sum();
                if !v.is_finite() {
                    return Err(InterpError::SingularSystem(self.method));
                }
                v
            }
            Model::Rbf { length, weights, tail } => {
                let (x, y) = (q.x / length, q.y / length);
                let mut v = tail[0] + tail[1] * x + tail[2] * y;
                for (w, d) in weights.iter().zip(&dists) {
                    v += w * thin_plate(d / length);
                }
                v
            }
        };
        Ok(v)
    }
}

/// Fits `method` to `samples` and evaluates it at `query`.
pub fn interpolate(
    method: InterpMethod,
    samples: &[SamplePoint],
    query: &GeoPoint,
    frame: &LocalFrame,
) -> Result<f64, InterpError> {
    Interpolator::fit(method, samples, frame)?.estimate(query)
}

fn idw(dists: &[f64], values: &[f64], power: f64) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (d, v) in dists.iter().zip(values) {
        let w = if power == 2.0 { 1.0 / (d * d) } else { d.powf(-power) };
        num += w * v;
        den += w;
    }
    num / den
}

fn thin_plate(r: f64) -> f64 {
    if r <= 0.0 {
        0.0
    } else {
        r * r * r.ln()
    }
}

/// Projects samples and merges those at identical positions by averaging their values.
fn dedupe(samples: &[SamplePoint], frame: &LocalFrame) -> Result<(Vec<Meters>, Vec<f64>), InterpError> {
    let mut positions: Vec<GeoPoint> = Vec::with_capacity(samples.len());
    let mut nodes: Vec<Meters> = Vec::with_capacity(samples.len());
    let mut sums: Vec<(f64, usize)> = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        if !s.value.is_finite() {
            return Err(InterpError::NonFiniteValue(i));
        }
        if let Some(k) = positions.iter().position(|p| *p == s.position) {
            if sums[k].0 / sums[k].1 as f64 != s.value {
                log::warn!(
                    "duplicate sample at ({}, {}) with differing values; averaging",
                    s.position.lat(),
                    s.position.lon()
                );
            }
            sums[k].0 += s.value;
            sums[k].1 += 1;
        } else {
            positions.push(s.position);
            nodes.push(frame.project(&s.position)?);
            sums.push((s.value, 1));
        }
    }
    Ok((nodes, sums.into_iter().map(|(s, c)| s / c as f64).collect()))
}

fn mean_nn_spacing(nodes: &[Meters]) -> f64 {
    if nodes.len() < 2 {
        return f64::INFINITY;
    }
    let total: f64 = nodes
        .iter()
        .enumerate()
        .map(|(i, a)| {
            nodes
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, b)| a.dist(b))
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    total / nodes.len() as f64
}

/// Empirical semivariogram: (mean lag, mean semivariance, pair count) per non-empty bin.
fn empirical_semivariogram(nodes: &[Meters], values: &[f64]) -> Vec<(f64, f64, usize)> {
    let mut pairs = Vec::new();
    for i in 0..nodes.len() {
        for j in (i + 1)..nodes.len() {
            pairs.push((nodes[i].dist(&nodes[j]), 0.5 * (values[i] - values[j]).powi(2)));
        }
    }
    let max_h = pairs.iter().map(|p| p.0).fold(0.0, f64::max);
    let width = max_h / KRIGING_LAG_BINS as f64;
    let mut bins = vec![(0.0, 0.0, 0usize); KRIGING_LAG_BINS];
    for (h, g) in pairs {
        let b = ((h / width) as usize).min(KRIGING_LAG_BINS - 1);
        bins[b].0 += h;
        bins[b].1 += g;
        bins[b].2 += 1;
    }
    bins.into_iter()
        .filter(|b| b.2 > 0)
        .map(|(h, g, c)| (h / c as f64, g / c as f64, c))
        .collect()
}

/// Count-weighted least squares fit of the exponential model. For each candidate range
/// the model is linear in (nugget, psill), solved with non-negativity enforced.
pub(crate) fn fit_exponential(bins: &[(f64, f64, usize)]) -> Variogram {
    let max_h = bins.iter().map(|b| b.0).fold(0.0, f64::max).max(1e-9);
    let min_h = bins.iter().map(|b| b.0).fold(f64::INFINITY, f64::min).max(max_h * 1e-3);
    let mut best = Variogram { nugget: 0.0, psill: 0.0, range: max_h };
    let mut best_sse = f64::INFINITY;
    const CANDIDATES: usize = 64;
    let (lo, hi) = ((min_h / 10.0).ln(), (3.0 * max_h).ln());
    for k in 0..CANDIDATES {
        let range = (lo + (hi - lo) * k as f64 / (CANDIDATES - 1) as f64).exp();
        // normal equations for g ≈ a + b·s, s = 1 − exp(−h/range)
        let (mut sw, mut ss, mut sss, mut sg, mut ssg) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for &(h, g, c) in bins {
            let w = c as f64;
            let s = 1.0 - (-h / range).exp();
            sw += w;
            ss += w * s;
            sss += w * s * s;
            sg += w * g;
            ssg += w * s * g;
        }
        let mut cands = Vec::with_capacity(3);
        let det = sw * sss - ss * ss;
        if det.abs() > 1e-14 * sw * sss.max(1e-300) {
            let a = (sss * sg - ss * ssg) / det;
            let b = (sw * ssg - ss * sg) / det;
            if a >= 0.0 && b >= 0.0 {
                cands.push((a, b));
            }
        }
        cands.push(((sg / sw).max(0.0), 0.0));
        if sss > 0.0 {
            cands.push((0.0, (ssg / sss).max(0.0)));
        }
        for (a, b) in cands {
            let sse: f64 = bins
                .iter()
                .map(|&(h, g, c)| c as f64 * (a + b * (1.0 - (-h / range).exp()) - g).powi(2))
                .sum();
            if sse < best_sse {
                best_sse = sse;
                best = Variogram { nugget: a, psill: b, range };
            }
        }
    }
    best
}

fn fit_kriging(nodes: &[Meters], values: &[f64]) -> Result<Model, InterpError> {
    let mut variogram = fit_exponential(&empirical_semivariogram(nodes, values));
    variogram.nugget = variogram.nugget.max(KRIGING_NUGGET_FLOOR);
    let scale = variogram.sill();
    let n = nodes.len();
    let mut a = DMatrix::zeros(n + 1, n + 1);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                a[(i, j)] = variogram.gamma(nodes[i].dist(&nodes[j])) / scale;
            }
        }
        a[(i, n)] = 1.0;
        a[(n, i)] = 1.0;
    }
    let lu = a.lu();
    if !lu.is_invertible() {
        return Err(InterpError::SingularSystem(InterpMethod::Kriging));
    }
    Ok(Model::Kriging { variogram, scale, lu })
}

fn collinear(nodes: &[Meters], length: f64) -> bool {
    let a = nodes[0];
    let Some(b) = nodes.iter().skip(1).max_by(|p, q| a.dist(p).total_cmp(&a.dist(q))) else {
        return true;
    };
    let ab = a.dist(b);
    nodes.iter().all(|c| {
        let cross = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
        cross.abs() <= 1e-9 * ab * length
    })
}

fn fit_rbf(nodes: &[Meters], values: &[f64]) -> Result<Model, InterpError> {
    let n = nodes.len();
    let length = nodes.iter().map(Meters::norm).fold(0.0, f64::max).max(1.0);
    // a linear tail needs three non-collinear nodes; smaller sets get a constant tail
    let tail_terms = if n >= 3 {
        if collinear(nodes, length) {
            return Err(InterpError::SingularSystem(InterpMethod::Rbf));
        }
        3
    } else {
        1
    };
    let size = n + tail_terms;
    let mut a = DMatrix::zeros(size, size);
    let mut rhs = DVector::zeros(size);
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] = thin_plate(nodes[i].dist(&nodes[j]) / length);
        }
        a[(i, i)] += RBF_RIDGE;
        let poly = [1.0, nodes[i].x / length, nodes[i].y / length];
        for (k, p) in poly.iter().take(tail_terms).enumerate() {
            a[(i, n + k)] = *p;
            a[(n + k, i)] = *p;
        }
        rhs[i] = values[i];
    }
    let sol = a.lu().solve(&rhs).ok_or(InterpError::SingularSystem(InterpMethod::Rbf))?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(InterpError::SingularSystem(InterpMethod::Rbf));
    }
    let mut tail = [0.0; 3];
    for k in 0..tail_terms {
        tail[k] = sol[n + k];
    }
    Ok(Model::Rbf { length, weights: sol.iter().take(n).copied().collect(), tail })
}

/// One held-out sample in a leave-one-out run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LooFold {
    pub index: usize,
    pub position: GeoPoint,
    pub actual: f64,
    pub estimate: Option<f64>,
    pub abs_error: Option<f64>,
    /// `|estimate − baseline| / baseline · 100`, present once a baseline is attached.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error_variance_pct: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LooReport {
    pub method: String,
    pub folds: Vec<LooFold>,
    /// Mean over successful folds; `None` when every fold failed.
    pub mean_abs_error: Option<f64>,
    pub failed_folds: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_error_variance_pct: Option<f64>,
}

impl LooReport {
    /// Scores each fold's estimate against a reference SQM value (e.g. a satellite atlas reading).
    pub fn with_baseline(mut self, baseline: f64) -> Self {
        let mut sum = 0.0;
        let mut count = 0;
        for f in &mut self.folds {
            f.error_variance_pct = f.estimate.map(|e| (e - baseline).abs() / baseline * 100.0);
            if let Some(p) = f.error_variance_pct {
                sum += p;
                count += 1;
            }
        }
        self.baseline = Some(baseline);
        self.mean_error_variance_pct = (count > 0).then(|| sum / count as f64);
        self
    }

    pub fn fold(&self, index: usize) -> Option<&LooFold> {
        self.folds.iter().find(|f| f.index == index)
    }
}

/// Estimates sample `index` from all the other samples.
pub fn holdout_estimate(
    method: InterpMethod,
    samples: &[SamplePoint],
    index: usize,
    frame: &LocalFrame,
) -> Result<f64, InterpError> {
    let rest: Vec<SamplePoint> =
        samples.iter().enumerate().filter(|(i, _)| *i != index).map(|(_, s)| *s).collect();
    interpolate(method, &rest, &samples[index].position, frame)
}

pub fn leave_one_out(method: InterpMethod, samples: &[SamplePoint], frame: &LocalFrame) -> Result<LooReport, InterpError> {
    method.validate()?;
    if samples.len() < 3 {
        return Err(InterpError::TooFewSamples { method, needed: 3, got: samples.len() });
    }
    let mut folds = Vec::with_capacity(samples.len());
    let mut sum = 0.0;
    let mut ok = 0usize;
    for (i, s) in samples.iter().enumerate() {
        let (estimate, failure) = match holdout_estimate(method, samples, i, frame) {
            Ok(e) => (Some(e), None),
            Err(e) => (None, Some(e.to_string())),
        };
        let abs_error = estimate.map(|e| (e - s.value).abs());
        if let Some(e) = abs_error {
            sum += e;
            ok += 1;
        }
        folds.push(LooFold {
            index: i,
            position: s.position,
            actual: s.value,
            estimate,
            abs_error,
            error_variance_pct: None,
            failure,
        });
    }
    Ok(LooReport {
        method: method.to_string(),
        folds,
        mean_abs_error: (ok > 0).then(|| sum / ok as f64),
        failed_folds: samples.len() - ok,
        baseline: None,
        mean_error_variance_pct: None,
    })
}

/// A local frame centered on the mean sample position.
pub fn sample_frame(samples: &[SamplePoint]) -> Result<LocalFrame, InterpError> {
    if samples.is_empty() {
        return Err(InterpError::TooFewSamples { method: InterpMethod::Idw, needed: 1, got: 0 });
    }
    let n = samples.len() as f64;
    let lat = samples.iter().map(|s| s.position.lat()).sum::<f64>() / n;
    let lon = samples.iter().map(|s| s.position.lon()).sum::<f64>() / n;
    Ok(LocalFrame::new(GeoPoint::new(lat, lon)?)?)
}

/// Reads `lat,lon,sqm` sample CSV.
pub fn read_samples_csv(bytes: &[u8]) -> Result<Vec<SamplePoint>, InterpError> {
    #[derive(Deserialize)]
    struct Row {
        lat: f64,
        lon: f64,
        sqm: f64,
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes);
    let headers = rdr.headers().map_err(|e| InterpError::Csv(e.to_string()))?.clone();
    for h in ["lat", "lon", "sqm"] {
        if !headers.iter().any(|c| c == h) {
            return Err(InterpError::Csv(format!("missing column {h:?}")));
        }
    }
    let mut out = Vec::new();
    for (line, rec) in rdr.deserialize::<Row>().enumerate() {
        let row = rec.map_err(|e| InterpError::Csv(format!("line {}: {e}", line + 2)))?;
        out.push(SamplePoint::new(GeoPoint::new(row.lat, row.lon)?, row.sqm));
    }
    Ok(out)
}
