//! Lamp-layout import (CSV and GeoJSON), export, and a revisioned on-disk scenario
//! store.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::fieldmap::{validate_id, BBox, Scenario};
use crate::geo::GeoPoint;
use crate::lightmodel::{profile, LightSource, DEFAULT_ALPHA};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ImportError {
    #[error("input is empty")]
    EmptyFile,
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("input is not a GeoJSON FeatureCollection")]
    NotAFeatureCollection,
    #[error("invalid JSON: {0}")]
    InvalidJson(String),
    #[error("input is not valid UTF-8")]
    InvalidUtf8,
    #[error("unknown default profile {0}")]
    InvalidDefaultProfile(u8),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImportOptions {
    /// Profile for rows that do not name one.
    pub default_profile: u8,
    /// Grid-scaling factor given to every imported lamp.
    pub alpha: f64,
}

impl Default for ImportOptions {
    fn default() -> Self {
        Self { default_profile: 1, alpha: DEFAULT_ALPHA }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    /// 1-based line for CSV input, 1-based feature index for GeoJSON.
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ImportReport {
    pub accepted: usize,
    pub rejected: Vec<Rejection>,
    /// Accepted lamps per profile id.
    pub profiles: BTreeMap<u8, usize>,
}

impl ImportReport {
    pub fn rows(&self) -> usize {
        self.accepted + self.rejected.len()
    }

    fn reject(&mut self, line: u64, reason: impl Into<String>) {
        self.rejected.push(Rejection { line, reason: reason.into() });
    }
}

/// Builds one lamp from loosely typed fields, or says why not.
fn make_source(id: &str, lat: Option<f64>, lon: Option<f64>, profile_id: Option<u8>, opts: &ImportOptions, seen: &mut HashSet<String>, check: &RowCheck<'_>) -> Result<LightSource, String> {
    let id = id.trim();
    if id.is_empty() {
        return Err("missing id".into());
    }
    if seen.contains(id) {
        return Err(format!("duplicate id {id:?}"));
    }
    let lat = lat.ok_or("invalid latitude")?;
    let lon = lon.ok_or("invalid longitude")?;
    if !(-90.0..=90.0).contains(&lat) {
        return Err("latitude out of range".into());
    }
    if !(-180.0..=180.0).contains(&lon) {
        return Err("longitude out of range".into());
    }
    let pid = profile_id.unwrap_or(opts.default_profile);
    let position = GeoPoint::new(lat, lon).map_err(|e| e.to_string())?;
    let src = LightSource::with_profile(id, position, pid, opts.alpha).map_err(|_| format!("unknown profile {pid}"))?;
    check(&src)?;
    seen.insert(id.to_string());
    Ok(src)
}

fn parse_profile(s: &str) -> Result<Option<u8>, String> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(None);
    }
    s.parse::<u8>().map(Some).map_err(|_| format!("invalid profile {s:?}"))
}

fn check_default(opts: &ImportOptions) -> Result<(), ImportError> {
    profile(opts.default_profile).map(|_| ()).map_err(|_| ImportError::InvalidDefaultProfile(opts.default_profile))
}

/// Extra per-row acceptance test; `Err` carries the rejection reason.
pub type RowCheck<'a> = dyn Fn(&LightSource) -> Result<(), String> + 'a;

fn accept_all(_: &LightSource) -> Result<(), String> {
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImportFormat {
    Csv,
    GeoJson,
}

impl std::str::FromStr for ImportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ImportFormat::Csv),
            "geojson" | "json" => Ok(ImportFormat::GeoJson),
            other => Err(format!("unknown import format {other:?} (expected csv or geojson)")),
        }
    }
}

/// Imports in either format, rejecting rows that fail `check` as well as malformed ones.
pub fn import_sources(format: ImportFormat, bytes: &[u8], opts: &ImportOptions, check: &RowCheck<'_>) -> Result<(Vec<LightSource>, ImportReport), ImportError> {
    match format {
        ImportFormat::Csv => csv_rows(bytes, opts, check),
        ImportFormat::GeoJson => geojson_features(bytes, opts, check),
    }
}

/// Reads `id,lat,lon[,profile]` rows. Column order is free and extra columns are
/// ignored.
pub fn import_sources_csv(bytes: &[u8], opts: &ImportOptions) -> Result<(Vec<LightSource>, ImportReport), ImportError> {
    csv_rows(bytes, opts, &accept_all)
}

fn csv_rows(bytes: &[u8], opts: &ImportOptions, check: &RowCheck<'_>) -> Result<(Vec<LightSource>, ImportReport), ImportError> {
    check_default(opts)?;
    let text = std::str::from_utf8(bytes).map_err(|_| ImportError::InvalidUtf8)?;
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    if text.trim().is_empty() {
        return Err(ImportError::EmptyFile);
    }
    let mut rdr = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let (Some(ci), Some(clat), Some(clon)) = (col("id"), col("lat"), col("lon")) else {
        return Err(ImportError::MalformedHeader(format!("expected id,lat,lon[,profile], got {:?}", headers.iter().collect::<Vec<_>>())));
    };
    let cprof = col("profile");

    let mut report = ImportReport::default();
    let mut sources = Vec::new();
    let mut seen = HashSet::new();
    for rec in rdr.records() {
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                report.reject(line, format!("unreadable row: {e}"));
                continue;
            }
        };
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| rec.get(i).unwrap_or("");
        let num = |i: usize| field(i).parse::<f64>().ok().filter(|v| v.is_finite());
        let result = parse_profile(cprof.map(field).unwrap_or("")).and_then(|p| make_source(field(ci), num(clat), num(clon), p, opts, &mut seen, check));
        match result {
            Ok(s) => {
                *report.profiles.entry(s.profile_id.unwrap_or(opts.default_profile)).or_default() += 1;
                report.accepted += 1;
                sources.push(s);
            }
            Err(reason) => report.reject(line, reason),
        }
    }
    Ok((sources, report))
}

/// Reads a FeatureCollection of Point features (`[lon, lat]` order). The lamp id is the
/// feature `id`, else `properties.id`, else `f<index>`; `properties.profile` is optional.
pub fn import_sources_geojson(bytes: &[u8], opts: &ImportOptions) -> Result<(Vec<LightSource>, ImportReport), ImportError> {
    geojson_features(bytes, opts, &accept_all)
}

fn geojson_features(bytes: &[u8], opts: &ImportOptions, check: &RowCheck<'_>) -> Result<(Vec<LightSource>, ImportReport), ImportError> {
    check_default(opts)?;
    if bytes.iter().all(u8::is_ascii_whitespace) {
        return Err(ImportError::EmptyFile);
    }
    let doc: Value = serde_json::from_slice(bytes).map_err(|e| ImportError::InvalidJson(e.to_string()))?;
    if doc.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(ImportError::NotAFeatureCollection);
    }
    let features = doc.get("features").and_then(Value::as_array).ok_or(ImportError::NotAFeatureCollection)?;

    let mut report = ImportReport::default();
    let mut sources = Vec::new();
    let mut seen = HashSet::new();
    for (i, feat) in features.iter().enumerate() {
        let line = i as u64 + 1;
        let geom = feat.get("geometry");
        let gtype = geom.and_then(|g| g.get("type")).and_then(Value::as_str);
        if gtype != Some("Point") {
            report.reject(line, format!("unsupported geometry {}", gtype.unwrap_or("null")));
            continue;
        }
        let coords = geom.and_then(|g| g.get("coordinates")).and_then(Value::as_array);
        let at = |k: usize| coords.and_then(|c| c.get(k)).and_then(Value::as_f64);
        let props = feat.get("properties");
        let id = feat
            .get("id")
            .or_else(|| props.and_then(|p| p.get("id")))
            .map(|v| match v {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            })
            .unwrap_or_else(|| format!("f{line}"));
        let prof = match props.and_then(|p| p.get("profile")) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::Number(n)) => n.as_u64().and_then(|v| u8::try_from(v).ok()).map(Some).ok_or_else(|| format!("invalid profile {n}")),
            Some(Value::String(s)) => parse_profile(s),
            Some(other) => Err(format!("invalid profile {other}")),
        };
        match prof.and_then(|p| make_source(&id, at(1), at(0), p, opts, &mut seen, check)) {
            Ok(s) => {
                *report.profiles.entry(s.profile_id.unwrap_or(opts.default_profile)).or_default() += 1;
                report.accepted += 1;
                sources.push(s);
            }
            Err(reason) => report.reject(line, reason),
        }
    }
    Ok((sources, report))
}

/// `id,lat,lon,profile` with an empty profile for untagged lamps.
pub fn export_sources_csv(sources: &[LightSource]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["id", "lat", "lon", "profile"]).expect("in-memory write");
    for s in sources {
        let prof = s.profile_id.map(|p| p.to_string()).unwrap_or_default();
        w.write_record([s.id.as_str(), &s.position.lat().to_string(), &s.position.lon().to_string(), &prof]).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

/// FeatureCollection of Points carrying `profile` where known.
pub fn export_sources_geojson(sources: &[LightSource]) -> Value {
    let features: Vec<Value> = sources
        .iter()
        .map(|s| {
            let mut props = serde_json::Map::new();
            if let Some(p) = s.profile_id {
                props.insert("profile".into(), p.into());
            }
            serde_json::json!({
                "type": "Feature",
                "id": s.id,
                "geometry": {"type": "Point", "coordinates": [s.position.lon(), s.position.lat()]},
                "properties": props,
            })
        })
        .collect();
    serde_json::json!({"type": "FeatureCollection", "features": features})
}

/// `n` lamps spread uniformly over `bbox` with random profiles; same seed, same layout.
pub fn synthetic_layout(n: usize, bbox: &BBox, seed: u64, alpha: f64) -> Vec<LightSource> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let lat = rng.random_range(bbox.min.lat()..=bbox.max.lat());
            let lon = rng.random_range(bbox.min.lon()..=bbox.max.lon());
            let pid = rng.random_range(1..=5u8);
            let pos = GeoPoint::new(lat, lon).expect("inside a valid bbox");
            LightSource::with_profile(format!("s{i:05}"), pos, pid, alpha).expect("built-in profile")
        })
        .collect()
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("scenario {0:?} not found")]
    NotFound(String),
    #[error("scenario {0:?} already exists")]
    AlreadyExists(String),
    #[error("stale revision for {id:?}: expected {expected}, stored {actual}")]
    StaleRevision { id: String, expected: u64, actual: u64 },
    #[error("corrupt document for {id:?}: {reason}")]
    CorruptDocument { id: String, reason: String },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("invalid scenario id {0:?}")]
    InvalidId(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Serialize, Deserialize)]
struct Document {
    format_version: u32,
    revision: u64,
    checksum: String,
    scenario: Value,
}

/// A scenario with its store revision.
#[derive(Debug, Clone, PartialEq)]
pub struct Stored {
    pub revision: u64,
    pub scenario: Scenario,
}

/// SHA-256 of the scenario's JSON with keys in sorted order.
fn checksum(doc: &Value) -> String {
    hex::encode(Sha256::digest(serde_json::to_vec(doc).expect("Value always serializes")))
}

/// One JSON document per scenario under a root directory, `<root>/<id>.json`.
///
/// Writers are serialized per scenario and must present the revision they read;
/// revisions start at 1 and only grow.
#[derive(Debug)]
pub struct ScenarioStore {
    root: PathBuf,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl ScenarioStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self { root, locks: Mutex::new(HashMap::new()) })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path(&self, id: &str) -> Result<PathBuf, StoreError> {
        validate_id(id).map_err(|_| StoreError::InvalidId(id.to_string()))?;
        Ok(self.root.join(format!("{id}.json")))
    }

    fn lock(&self, id: &str) -> Arc<Mutex<()>> {
        let mut map = self.locks.lock().unwrap_or_else(|e| e.into_inner());
        map.entry(id.to_string()).or_default().clone()
    }

    /// Ids of all stored scenarios, sorted.
    pub fn list(&self) -> Result<Vec<String>, StoreError> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(&self.root)? {
            let name = entry?.file_name();
            let Some(name) = name.to_str() else { continue };
            if let Some(id) = name.strip_suffix(".json") {
                if validate_id(id).is_ok() {
                    ids.push(id.to_string());
                }
            }
        }
        ids.sort();
        Ok(ids)
    }

    pub fn load(&self, id: &str) -> Result<Stored, StoreError> {
        let path = self.path(id)?;
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(StoreError::NotFound(id.to_string())),
            Err(e) => return Err(e.into()),
        };
        decode(id, &bytes)
    }

    /// Stores a new scenario at revision 1.
    pub fn create(&self, scenario: &Scenario) -> Result<u64, StoreError> {
        let id = scenario.id();
        let path = self.path(id)?;
        let lock = self.lock(id);
        let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
        if path.exists() {
            return Err(StoreError::AlreadyExists(id.to_string()));
        }
        self.write(&path, scenario, 1)?;
        Ok(1)
    }

    /// Replaces a stored scenario if it is still at `expected_revision`; returns the new
    /// revision.
    pub fn save(&self, scenario: &Scenario, expected_revision: u64) -> Result<u64, StoreError> {
        let id = scenario.id();
        let path = self.path(id)?;
        let lock = self.lock(id);
        let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
        let current = self.load(id)?.revision;
        if current != expected_revision {
            return Err(StoreError::StaleRevision { id: id.to_string(), expected: expected_revision, actual: current });
        }
        let next = current + 1;
        self.write(&path, scenario, next)?;
        Ok(next)
    }

    /// Read-modify-write under the scenario's lock.
    pub fn update<F, E>(&self, id: &str, f: F) -> Result<Result<Stored, E>, StoreError>
    where
        F: FnOnce(&Scenario) -> Result<Scenario, E>,
    {
        let path = self.path(id)?;
        let lock = self.lock(id);
        let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
        let current = self.load(id)?;
        let next = match f(&current.scenario) {
            Ok(s) => s,
            Err(e) => return Ok(Err(e)),
        };
        let revision = current.revision + 1;
        self.write(&path, &next, revision)?;
        Ok(Ok(Stored { revision, scenario: next }))
    }

    fn write(&self, path: &Path, scenario: &Scenario, revision: u64) -> Result<(), StoreError> {
        let value = serde_json::to_value(scenario).expect("scenario serializes");
        let doc = Document { format_version: FORMAT_VERSION, revision, checksum: checksum(&value), scenario: value };
        let bytes = serde_json::to_vec_pretty(&doc).expect("document serializes");
        let mut tmp = tempfile::NamedTempFile::new_in(&self.root)?;
        tmp.write_all(&bytes)?;
        tmp.as_file().sync_all()?;
        tmp.persist(path).map_err(|e| e.error)?;
        Ok(())
    }
}

/// Reads either a bare scenario or a store document, verifying the latter's checksum.
pub fn read_scenario(bytes: &[u8]) -> Result<Scenario, StoreError> {
    let corrupt = |reason: String| StoreError::CorruptDocument { id: String::new(), reason };
    let value: Value = serde_json::from_slice(bytes).map_err(|e| corrupt(e.to_string()))?;
    if value.get("format_version").is_some() && value.get("scenario").is_some() {
        let id = value["scenario"].get("id").and_then(Value::as_str).unwrap_or_default().to_string();
        return decode(&id, bytes).map(|s| s.scenario);
    }
    serde_json::from_value(value).map_err(|e| corrupt(e.to_string()))
}

fn decode(id: &str, bytes: &[u8]) -> Result<Stored, StoreError> {
    let corrupt = |reason: String| StoreError::CorruptDocument { id: id.to_string(), reason };
    let doc: Document = serde_json::from_slice(bytes).map_err(|e| corrupt(e.to_string()))?;
    if doc.format_version != FORMAT_VERSION {
        return Err(StoreError::UnsupportedVersion(doc.format_version));
    }
    if checksum(&doc.scenario) != doc.checksum {
        return Err(corrupt("checksum mismatch".into()));
    }
    let scenario: Scenario = serde_json::from_value(doc.scenario).map_err(|e| corrupt(e.to_string()))?;
    if scenario.id() != id {
        return Err(corrupt(format!("document holds scenario {:?}", scenario.id())));
    }
    Ok(Stored { revision: doc.revision, scenario })
}
