//! Street-light field simulation and light-pollution accounting.
//!
//! The crate is organized bottom-up:
//!
//! - [`geo`]: points, polygons, the local metric frame and raster grids.
//! - [`lightmodel`]: the per-lamp attenuation law, road-type profiles and brightness scales.
//! - [`interpolation`]: six scattered-data interpolators and a leave-one-out harness.
//! - [`fieldmap`]: scenarios, the composed light field, rasters, colormaps, tiles and hotspots.
//! - [`optimizer`]: constrained lamp placement and attenuation tuning.
//! - [`footprint`]: area and per-source light footprints.
//! - [`scenario_io`]: CSV/GeoJSON import and the revisioned scenario store.
//! - [`demo`]: a six-lamp lakefront scenario used throughout the guide and tests.

pub mod geo;
pub mod lightmodel;
pub mod interpolation;
pub mod fieldmap;
pub mod optimizer;
pub mod footprint;
pub mod demo;
pub mod scenario_io;

// The guide's Rust snippets run as doctests here so the book cannot drift from the API.
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/introduction.md")]
mod book_introduction {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/geometry.md")]
mod book_geometry {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/attenuation.md")]
mod book_attenuation {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/field-maps.md")]
mod book_field_maps {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/interpolation.md")]
mod book_interpolation {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/optimization.md")]
mod book_optimization {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/footprint.md")]
mod book_footprint {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/scenarios.md")]
mod book_scenarios {}

#[cfg(doctest)]
#[doc = include_str!("../../../README.md")]
mod readme {}
