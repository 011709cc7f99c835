//! Per-lamp attenuation, the road-type lighting profiles, and the brightness scales
//! used for display (SQM magnitudes and normalized brightness).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::GeoPoint;

/// Default grid scaling term, per meter.
pub const DEFAULT_ALPHA: f64 = 0.1;

/// SQM reading of the brightest sky on the display scale.
pub const SQM_BRIGHTEST: f64 = 16.0;
/// SQM reading of the darkest sky on the display scale.
pub const SQM_DARKEST: f64 = 22.0;
const SQM_SPAN: f64 = SQM_DARKEST - SQM_BRIGHTEST;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LightError {
    #[error("distance must be finite and >= 0, got {0}")]
    NegativeDistance(f64),
    #[error("scale must be > 0, got {0}")]
    NonPositiveScale(f64),
    #[error("unknown lighting profile {0} (expected 1-5)")]
    UnknownProfile(u8),
    #[error("invalid attenuation parameter {name} = {value}")]
    InvalidParam { name: &'static str, value: f64 },
    #[error("source {id}: parameters do not match profile {profile}")]
    ProfileMismatch { id: String, profile: u8 },
}

/// Coefficients of the quadratic-denominator attenuation law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct AttenuationParams {
    i0: f64,
    c1: f64,
    c2: f64,
    alpha: f64,
}

#[derive(Serialize, Deserialize)]
struct RawParams {
    i0: f64,
    c1: f64,
    c2: f64,
    #[serde(default = "default_alpha")]
    alpha: f64,
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

impl TryFrom<RawParams> for AttenuationParams {
    type Error = LightError;

    fn try_from(r: RawParams) -> Result<Self, Self::Error> {
        AttenuationParams::new(r.i0, r.c1, r.c2, r.alpha)
    }
}

impl From<AttenuationParams> for RawParams {
    fn from(p: AttenuationParams) -> Self {
        RawParams { i0: p.i0, c1: p.c1, c2: p.c2, alpha: p.alpha }
    }
}

impl AttenuationParams {
    pub fn new(i0: f64, c1: f64, c2: f64, alpha: f64) -> Result<Self, LightError> {
        if !i0.is_finite() || i0 <= 0.0 {
            return Err(LightError::InvalidParam { name: "i0", value: i0 });
        }
        for (name, value) in [("c1", c1), ("c2", c2), ("alpha", alpha)] {
            if !value.is_finite() || value < 0.0 {
                return Err(LightError::InvalidParam { name, value });
            }
        }
        Ok(Self { i0, c1, c2, alpha })
    }

    /// Skips validation; callers guarantee finite non-negative coefficients.
    pub(crate) fn raw(i0: f64, c1: f64, c2: f64, alpha: f64) -> Self {
        Self { i0, c1, c2, alpha }
    }

    pub fn i0(&self) -> f64 {
        self.i0
    }

    pub fn c1(&self) -> f64 {
        self.c1
    }

    pub fn c2(&self) -> f64 {
        self.c2
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn with_c1(self, c1: f64) -> Result<Self, LightError> {
        Self::new(self.i0, c1, self.c2, self.alpha)
    }

    pub fn with_c2(self, c2: f64) -> Result<Self, LightError> {
        Self::new(self.i0, self.c1, c2, self.alpha)
    }

    pub fn with_alpha(self, alpha: f64) -> Result<Self, LightError> {
        Self::new(self.i0, self.c1, self.c2, alpha)
    }

    /// True when `c1 = c2 = 0`: the lamp does not dim with distance.
    pub fn is_non_attenuating(&self) -> bool {
        self.c1 == 0.0 && self.c2 == 0.0
    }

    /// `1 + c1·y + c2·y²` with `y = alpha·d`.
    #[inline]
    pub fn denominator(&self, d: f64) -> f64 {
        let y = self.alpha * d;
        1.0 + self.c1 * y + self.c2 * y * y
    }

    /// Attenuated intensity without argument validation.
    #[inline]
    pub fn at(&self, d: f64) -> f64 {
        self.i0 / self.denominator(d)
    }
}

/// `I(d) = I0 / (1 + c1·αd + c2·(αd)²)`.
pub fn attenuate(d: f64, params: &AttenuationParams) -> Result<f64, LightError> {
    if !d.is_finite() || d < 0.0 {
        return Err(LightError::NegativeDistance(d));
    }
    Ok(params.at(d))
}

/// Maps a linear intensity onto the SQM display scale: 22 for darkness, 16 at `i0_max`.
pub fn intensity_to_sqm(v: f64, i0_max: f64) -> Result<f64, LightError> {
    if !(i0_max > 0.0) || !i0_max.is_finite() {
        return Err(LightError::NonPositiveScale(i0_max));
    }
    Ok(sqm_unchecked(v, i0_max))
}

#[inline]
pub(crate) fn sqm_unchecked(v: f64, i0_max: f64) -> f64 {
    let frac = if v.is_nan() { 0.0 } else { (v / i0_max).clamp(0.0, 1.0) };
    SQM_DARKEST - SQM_SPAN * frac
}

/// `clamp((22 - sqm) / 6, 0, 1)`; 0 is darkness, 1 the brightest lamp.
pub fn normalized_brightness(sqm: f64) -> f64 {
    if sqm.is_nan() {
        return 0.0;
    }
    ((SQM_DARKEST - sqm) / SQM_SPAN).clamp(0.0, 1.0)
}

/// A built-in road-type lighting profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LightProfile {
    pub id: u8,
    pub road_type: &'static str,
    pub params: AttenuationParams,
}

const fn row(id: u8, road_type: &'static str, c1: f64, c2: f64) -> LightProfile {
    LightProfile { id, road_type, params: AttenuationParams { i0: 16.0, c1, c2, alpha: DEFAULT_ALPHA } }
}

/// The five road-type profiles.
pub const PROFILES: [LightProfile; 5] = [
    row(1, "High-speed Roads", 0.01, 0.03),
    row(2, "State Roads", 0.03, 0.03),
    row(3, "County Roads", 0.06, 0.03),
    row(4, "Municipal Roads", 0.10, 0.03),
    row(5, "Parkways/Rural Roads", 0.90, 0.60),
];

pub fn profile(id: u8) -> Result<LightProfile, LightError> {
    PROFILES.iter().find(|p| p.id == id).copied().ok_or(LightError::UnknownProfile(id))
}

/// A lamp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LightSource {
    pub id: String,
    pub position: GeoPoint,
    pub params: AttenuationParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile_id: Option<u8>,
}

impl LightSource {
    pub fn new(id: impl Into<String>, position: GeoPoint, params: AttenuationParams) -> Self {
        Self { id: id.into(), position, params, profile_id: None }
    }

    /// A lamp carrying a built-in profile's parameters, with `alpha` substituted.
    pub fn with_profile(id: impl Into<String>, position: GeoPoint, profile_id: u8, alpha: f64) -> Result<Self, LightError> {
        let params = profile(profile_id)?.params.with_alpha(alpha)?;
        Ok(Self { id: id.into(), position, params, profile_id: Some(profile_id) })
    }

    /// Checks the profile invariant. `alpha` is not part of the profile table and is
    /// ignored in the comparison.
    pub fn validate(&self) -> Result<(), LightError> {
        if let Some(pid) = self.profile_id {
            let p = profile(pid)?.params;
            if p.i0 != self.params.i0 || p.c1 != self.params.c1 || p.c2 != self.params.c2 {
                return Err(LightError::ProfileMismatch { id: self.id.clone(), profile: pid });
            }
        }
        Ok(())
    }

    /// Replaces the attenuation parameters, dropping the profile tag if they no longer match.
    pub fn set_params(&mut self, params: AttenuationParams) {
        self.params = params;
        if self.validate().is_err() {
            self.profile_id = None;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(i0: f64, c1: f64, c2: f64) -> AttenuationParams {
        AttenuationParams::new(i0, c1, c2, 0.1).unwrap()
    }

    #[test]
    fn zero_distance_is_i0() {
        for p in PROFILES {
            assert_eq!(attenuate(0.0, &p.params).unwrap(), 16.0);
        }
        assert_eq!(attenuate(0.0, &params(3.5, 2.0, 7.0)).unwrap(), 3.5);
    }

    #[test]
    fn twenty_percent_at_fifty_meters() {
        let v = attenuate(50.0, &params(16.0, 0.65, 0.03)).unwrap();
        assert!((v - 3.2).abs() < 1e-12, "{v}");
    }

    #[test]
    fn rural_profile_at_ten_meters() {
        let v = attenuate(10.0, &profile(5).unwrap().params).unwrap();
        assert!((v - 6.4).abs() < 1e-12);
    }

    #[test]
    fn negative_distance_rejected() {
        assert_eq!(attenuate(-1.0, &params(16.0, 0.1, 0.1)), Err(LightError::NegativeDistance(-1.0)));
        assert!(attenuate(f64::NAN, &params(16.0, 0.1, 0.1)).is_err());
    }

    #[test]
    fn sqm_scale_endpoints() {
        assert_eq!(intensity_to_sqm(0.0, 16.0).unwrap(), 22.0);
        assert_eq!(intensity_to_sqm(16.0, 16.0).unwrap(), 16.0);
        assert_eq!(intensity_to_sqm(8.0, 16.0).unwrap(), 19.0);
        assert_eq!(intensity_to_sqm(100.0, 16.0).unwrap(), 16.0);
        assert_eq!(intensity_to_sqm(1.0, 0.0), Err(LightError::NonPositiveScale(0.0)));
        assert_eq!(normalized_brightness(22.0), 0.0);
        assert_eq!(normalized_brightness(16.0), 1.0);
        assert_eq!(normalized_brightness(19.0), 0.5);
        assert_eq!(normalized_brightness(30.0), 0.0);
        assert_eq!(normalized_brightness(10.0), 1.0);
    }

    #[test]
    fn profile_table() {
        let p1 = profile(1).unwrap();
        assert_eq!((p1.params.i0(), p1.params.c1(), p1.params.c2()), (16.0, 0.01, 0.03));
        let p4 = profile(4).unwrap();
        assert_eq!((p4.params.c1(), p4.params.c2()), (0.10, 0.03));
        let p5 = profile(5).unwrap();
        assert_eq!((p5.params.i0(), p5.params.c1(), p5.params.c2()), (16.0, 0.90, 0.60));
        assert_eq!(profile(6), Err(LightError::UnknownProfile(6)));
        assert_eq!(profile(0), Err(LightError::UnknownProfile(0)));
    }

    #[test]
    fn non_attenuating_is_flagged() {
        let p = params(16.0, 0.0, 0.0);
        assert!(p.is_non_attenuating());
        assert_eq!(attenuate(1e6, &p).unwrap(), 16.0);
        assert!(!profile(1).unwrap().params.is_non_attenuating());
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(AttenuationParams::new(0.0, 0.1, 0.1, 0.1).is_err());
        assert!(AttenuationParams::new(16.0, -0.1, 0.1, 0.1).is_err());
        assert!(AttenuationParams::new(16.0, 0.1, f64::INFINITY, 0.1).is_err());
        assert!(AttenuationParams::new(16.0, 0.1, 0.1, -1.0).is_err());
    }

    #[test]
    fn profile_ordering_on_distance_grid() {
        for step in 1..=2000 {
            let d = step as f64 * 0.5;
            let vals: Vec<f64> = PROFILES.iter().map(|p| attenuate(d, &p.params).unwrap()).collect();
            for w in vals.windows(2) {
                assert!(w[1] < w[0], "d={d}: {vals:?}");
            }
        }
    }

    #[test]
    fn monotone_and_convex_on_meter_grid() {
        for p in PROFILES.iter().map(|p| p.params).chain([params(16.0, 0.65, 0.03), params(16.0, 0.03, 0.154)]) {
            let v: Vec<f64> = (0..=1000).map(|d| attenuate(d as f64, &p).unwrap()).collect();
            for w in v.windows(2) {
                assert!(w[1] < w[0]);
            }
            // 1/q with q quadratic is convex only where 2q'² >= q·q''; check the numeric
            // curvature agrees with that sign wherever the analytic value is not near zero
            for (d, w) in v.windows(3).enumerate().map(|(i, w)| (i as f64 + 1.0, w)) {
                let y = p.alpha() * d;
                let q = 1.0 + p.c1() * y + p.c2() * y * y;
                let dq = p.c1() + 2.0 * p.c2() * y;
                let curvature = 2.0 * dq * dq - q * 2.0 * p.c2();
                let numeric = w[0] + w[2] - 2.0 * w[1];
                if curvature.abs() > 1e-3 {
                    assert_eq!(numeric > 0.0, curvature > 0.0, "d={d}");
                }
            }
        }
    }

    #[test]
    fn source_profile_invariant() {
        let pos = GeoPoint::new(30.0, -81.0).unwrap();
        let mut s = LightSource::with_profile("a", pos, 4, 0.1).unwrap();
        s.validate().unwrap();
        s.params = s.params.with_c1(0.5).unwrap();
        assert!(s.validate().is_err());
        s.set_params(s.params);
        assert_eq!(s.profile_id, None);
    }

    #[test]
    fn params_serde() {
        let p: AttenuationParams = serde_json::from_str(r#"{"i0":16,"c1":0.1,"c2":0.03}"#).unwrap();
        assert_eq!(p.alpha(), 0.1);
        assert!(serde_json::from_str::<AttenuationParams>(r#"{"i0":-1,"c1":0.1,"c2":0.03}"#).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn attenuate_in_range_and_decreasing(i0 in 0.1f64..100.0, c1 in 0.0f64..10.0, c2 in 0.001f64..10.0,
                                                 d in 0.0f64..1000.0, dd in 0.001f64..100.0) {
                let p = params(i0, c1, c2);
                let a = attenuate(d, &p).unwrap();
                let b = attenuate(d + dd, &p).unwrap();
                prop_assert!(a > 0.0 && a <= i0);
                prop_assert!(b < a);
            }

            #[test]
            fn brightness_round_trip(m in 0.01f64..100.0, t in 0.0f64..2.0) {
                let v = t * m;
                let n = normalized_brightness(intensity_to_sqm(v, m).unwrap());
                prop_assert!((n - (v / m).clamp(0.0, 1.0)).abs() < 1e-12);
            }
        }
    }
}
