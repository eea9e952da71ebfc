//! Spherical geometry on a mean-radius Earth.
//!
//! All positions are [`GeoPoint`]s in decimal degrees. Distances are great-circle
//! kilometers computed with the haversine formulation.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::GeoError;

/// Mean Earth radius in kilometers.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Half the circumference: the largest possible great-circle distance.
pub const MAX_DISTANCE_KM: f64 = std::f64::consts::PI * EARTH_RADIUS_KM;

/// A latitude/longitude pair in degrees.
///
/// Latitude is validated to `[-90, 90]`; longitude is wrapped into `[-180, 180)`
/// at construction, so two points compare equal iff their normalized fields do.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPoint", into = "RawPoint")]
pub struct GeoPoint {
    lat: f64,
    lon: f64,
}

#[derive(Serialize, Deserialize)]
struct RawPoint {
    lat: f64,
    lon: f64,
}

impl TryFrom<RawPoint> for GeoPoint {
    type Error = GeoError;

    fn try_from(raw: RawPoint) -> Result<Self, Self::Error> {
        GeoPoint::new(raw.lat, raw.lon)
    }
}

impl From<GeoPoint> for RawPoint {
    fn from(p: GeoPoint) -> Self {
        RawPoint { lat: p.lat, lon: p.lon }
    }
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeoError> {
        if !lat.is_finite() || !(-90.0..=90.0).contains(&lat) {
            return Err(GeoError::InvalidLatitude(lat));
        }
        if !lon.is_finite() {
            return Err(GeoError::InvalidLongitude(lon));
        }
        Ok(GeoPoint {
            lat: if lat == 0.0 { 0.0 } else { lat },
            lon: normalize_lon(lon),
        })
    }

    /// Builds a point from possibly out-of-range coordinates by clamping the
    /// latitude. Used by optimizers that wander past the poles.
    pub(crate) fn clamped(lat: f64, lon: f64) -> Self {
        GeoPoint {
            lat: lat.clamp(-90.0, 90.0),
            lon: normalize_lon(lon),
        }
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }

    fn to_unit_vector(self) -> [f64; 3] {
        let (lat, lon) = (self.lat.to_radians(), self.lon.to_radians());
        [lat.cos() * lon.cos(), lat.cos() * lon.sin(), lat.sin()]
    }

    fn from_unit_vector(v: [f64; 3]) -> Option<Self> {
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if norm < 1e-12 {
            return None;
        }
        let lat = (v[2] / norm).clamp(-1.0, 1.0).asin().to_degrees();
        let lon = v[1].atan2(v[0]).to_degrees();
        Some(GeoPoint::clamped(lat, lon))
    }
}

impl fmt::Display for GeoPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.4},{:.4}", self.lat, self.lon)
    }
}

/// Parses `"lat,lon"`.
impl FromStr for GeoPoint {
    type Err = GeoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (lat, lon) = s
            .split_once(',')
            .ok_or_else(|| GeoError::Parse(s.to_string()))?;
        let lat: f64 = lat.trim().parse().map_err(|_| GeoError::Parse(s.to_string()))?;
        let lon: f64 = lon.trim().parse().map_err(|_| GeoError::Parse(s.to_string()))?;
        GeoPoint::new(lat, lon)
    }
}

fn normalize_lon(lon: f64) -> f64 {
    if (-180.0..180.0).contains(&lon) {
        return lon + 0.0;
    }
    let wrapped = (lon + 180.0).rem_euclid(360.0) - 180.0;
    // rem_euclid can return 360.0 for tiny negative inputs due to rounding.
    if wrapped >= 180.0 {
        wrapped - 360.0
    } else if wrapped == 0.0 {
        0.0
    } else {
        wrapped
    }
}

/// Haversine great-circle distance in kilometers.
pub fn great_circle_km(a: GeoPoint, b: GeoPoint) -> f64 {
    // Order the operands so that d(a, b) and d(b, a) evaluate identically.
    let (a, b) = if (a.lat, a.lon) <= (b.lat, b.lon) { (a, b) } else { (b, a) };
    let lat1 = a.lat.to_radians();
    let lat2 = b.lat.to_radians();
    let dlat = (b.lat - a.lat).to_radians();
    let dlon = (b.lon - a.lon).to_radians();
    let s_lat = (dlat / 2.0).sin();
    let s_lon = (dlon / 2.0).sin();
    let h = (s_lat * s_lat + lat1.cos() * lat2.cos() * s_lon * s_lon).clamp(0.0, 1.0);
    let c = 2.0 * h.sqrt().atan2((1.0 - h).sqrt());
    (EARTH_RADIUS_KM * c).min(MAX_DISTANCE_KM)
}

/// Point reached by travelling `distance_km` from `origin` along the initial
/// `bearing_deg` (clockwise from north).
pub fn destination_point(origin: GeoPoint, bearing_deg: f64, distance_km: f64) -> GeoPoint {
    let delta = distance_km / EARTH_RADIUS_KM;
    let theta = bearing_deg.to_radians();
    let lat1 = origin.lat.to_radians();
    let lon1 = origin.lon.to_radians();
    let sin_lat2 = (lat1.sin() * delta.cos() + lat1.cos() * delta.sin() * theta.cos()).clamp(-1.0, 1.0);
    let lat2 = sin_lat2.asin();
    let y = theta.sin() * delta.sin() * lat1.cos();
    let x = delta.cos() - lat1.sin() * sin_lat2;
    let lon2 = lon1 + y.atan2(x);
    GeoPoint::clamped(lat2.to_degrees(), lon2.to_degrees())
}

/// Initial bearing in degrees `[0, 360)` from `a` towards `b`.
pub fn initial_bearing_deg(a: GeoPoint, b: GeoPoint) -> f64 {
    let lat1 = a.lat.to_radians();
    let lat2 = b.lat.to_radians();
    let dlon = (b.lon - a.lon).to_radians();
    let y = dlon.sin() * lat2.cos();
    let x = lat1.cos() * lat2.sin() - lat1.sin() * lat2.cos() * dlon.cos();
    y.atan2(x).to_degrees().rem_euclid(360.0)
}

/// Point at fraction `t` of the way from `a` to `b` along the great circle.
pub fn interpolate(a: GeoPoint, b: GeoPoint, t: f64) -> GeoPoint {
    let d = great_circle_km(a, b);
    if d == 0.0 {
        return a;
    }
    destination_point(a, initial_bearing_deg(a, b), d * t)
}

/// Normalized mean of the unit vectors of `points`, optionally weighted.
/// Returns `None` for an empty input or when the vectors cancel out.
pub fn spherical_centroid<I>(points: I) -> Option<GeoPoint>
where
    I: IntoIterator<Item = (GeoPoint, f64)>,
{
    let mut acc = [0.0; 3];
    let mut any = false;
    for (p, w) in points {
        let v = p.to_unit_vector();
        for k in 0..3 {
            acc[k] += w * v[k];
        }
        any = true;
    }
    if !any {
        return None;
    }
    GeoPoint::from_unit_vector(acc)
}
