//! A ready-made lakefront scenario: six street lamps around a small square lake.
//!
//! The lamps sit near 30.055° N, 81.615° W in north-east Florida. The lake is a
//! 50 × 60 m square south of the northern lamp row and west of the eastern one.

use crate::fieldmap::{BBox, Scenario};
use crate::geo::{GeoPoint, GeoPolygon, LocalFrame, Meters};
use crate::lightmodel::{AttenuationParams, LightSource, DEFAULT_ALPHA};

/// Reference point of the lakefront.
pub const LAKE_REFERENCE: (f64, f64) = (30.055, -81.615);

/// Lamp positions `(lat, lon)`, ids `1` to `6`.
pub const LAKE_LAMPS: [(f64, f64); 6] = [
    (30.056, -81.617),
    (30.055, -81.615),
    (30.055, -81.613),
    (30.053, -81.614),
    (30.054, -81.614),
    (30.055, -81.614),
];

/// Initial attenuation coefficients of every lamp.
pub const LAKE_INITIAL_C: (f64, f64) = (0.0, 0.03);

/// Lake outline as `(east, north)` meter offsets from [`LAKE_REFERENCE`].
pub const LAKE_OUTLINE_M: [(f64, f64); 4] = [(30.0, -130.0), (80.0, -130.0), (80.0, -70.0), (30.0, -70.0)];

pub const LAKE_AREA_NAME: &str = "lake";

fn pt(lat: f64, lon: f64) -> GeoPoint {
    GeoPoint::new(lat, lon).expect("constant coordinates are valid")
}

/// The lake polygon.
pub fn lake_polygon() -> GeoPolygon {
    let frame = LocalFrame::new(pt(LAKE_REFERENCE.0, LAKE_REFERENCE.1)).expect("valid frame");
    let ring = LAKE_OUTLINE_M
        .iter()
        .map(|(x, y)| frame.unproject(Meters::new(*x, *y)).expect("offsets are small"))
        .collect();
    GeoPolygon::new(ring).expect("outline is a simple polygon")
}

/// The six lamps with the initial coefficients and `I0 = 16`.
pub fn lake_lamps() -> Vec<LightSource> {
    LAKE_LAMPS
        .iter()
        .enumerate()
        .map(|(i, (lat, lon))| {
            let params = AttenuationParams::new(16.0, LAKE_INITIAL_C.0, LAKE_INITIAL_C.1, DEFAULT_ALPHA).expect("valid params");
            LightSource::new((i + 1).to_string(), pt(*lat, *lon), params)
        })
        .collect()
}

/// Scenario `lake` with the six lamps and the lake as a protected area.
pub fn lake_scenario() -> Scenario {
    let bbox = BBox::new(pt(30.050, -81.620), pt(30.060, -81.610)).expect("valid bbox");
    Scenario::builder("lake", bbox)
        .sources(lake_lamps())
        .area(LAKE_AREA_NAME, lake_polygon())
        .build()
        .expect("demo scenario is valid")
}
