//! Great-circle distance and bounding-box membership on a spherical Earth.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Mean Earth radius used for every distance in the crate.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("invalid coordinate (lat={lat}, lon={lon})")]
    InvalidCoordinate { lat: f64, lon: f64 },
    #[error("invalid bounding box: {0}")]
    InvalidBox(String),
}

/// A WGS84-style latitude/longitude pair in degrees.
///
/// Construction through [`Coordinate::new`] guarantees both values are finite
/// and inside `[-90, 90]` / `[-180, 180]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCoordinate", into = "RawCoordinate")]
pub struct Coordinate {
    lat: f64,
    lon: f64,
}

#[derive(Serialize, Deserialize)]
struct RawCoordinate {
    lat: f64,
    lon: f64,
}

impl TryFrom<RawCoordinate> for Coordinate {
    type Error = GeoError;
    fn try_from(raw: RawCoordinate) -> Result<Self, GeoError> {
        Coordinate::new(raw.lat, raw.lon)
    }
}

impl From<Coordinate> for RawCoordinate {
    fn from(c: Coordinate) -> Self {
        RawCoordinate { lat: c.lat, lon: c.lon }
    }
}

impl Coordinate {
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeoError> {
        if lat.is_finite() && lon.is_finite() && (-90.0..=90.0).contains(&lat) && (-180.0..=180.0).contains(&lon) {
            Ok(Coordinate { lat, lon })
        } else {
            Err(GeoError::InvalidCoordinate { lat, lon })
        }
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }

    /// Point reached by travelling `distance_km` along the great circle with
    /// initial `bearing_rad` (clockwise from north). Longitude is wrapped
    /// into `[-180, 180]`.
    pub fn destination(&self, bearing_rad: f64, distance_km: f64) -> Coordinate {
        let delta = distance_km / EARTH_RADIUS_KM;
        let lat1 = self.lat.to_radians();
        let lon1 = self.lon.to_radians();
        let sin_lat2 = lat1.sin() * delta.cos() + lat1.cos() * delta.sin() * bearing_rad.cos();
        let lat2 = sin_lat2.clamp(-1.0, 1.0).asin();
        let lon2 = lon1 + (bearing_rad.sin() * delta.sin() * lat1.cos()).atan2(delta.cos() - lat1.sin() * sin_lat2);
        let mut lon_deg = lon2.to_degrees();
        if lon_deg > 180.0 {
            lon_deg -= 360.0;
        } else if lon_deg < -180.0 {
            lon_deg += 360.0;
        }
        Coordinate { lat: lat2.to_degrees().clamp(-90.0, 90.0), lon: lon_deg.clamp(-180.0, 180.0) }
    }
}

impl fmt::Display for Coordinate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.lat, self.lon)
    }
}

/// Axis-aligned lon/lat window with closed bounds. Boxes spanning the
/// antimeridian are not supported.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub lon_min: f64,
    pub lon_max: f64,
    pub lat_min: f64,
    pub lat_max: f64,
}

impl BoundingBox {
    /// The collection window used for the Australian corpus.
    pub const AUSTRALIA: BoundingBox =
        BoundingBox { lon_min: 112.921112, lon_max: 159.278717, lat_min: -54.640301, lat_max: -9.228820 };

    pub fn new(lon_min: f64, lon_max: f64, lat_min: f64, lat_max: f64) -> Result<Self, GeoError> {
        let b = BoundingBox { lon_min, lon_max, lat_min, lat_max };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), GeoError> {
        let all_finite = [self.lon_min, self.lon_max, self.lat_min, self.lat_max].iter().all(|v| v.is_finite());
        if !all_finite {
            return Err(GeoError::InvalidBox("non-finite bound".into()));
        }
        if self.lon_min > self.lon_max || self.lat_min > self.lat_max {
            return Err(GeoError::InvalidBox(format!(
                "min exceeds max (lon {}..{}, lat {}..{})",
                self.lon_min, self.lon_max, self.lat_min, self.lat_max
            )));
        }
        Ok(())
    }

    pub fn contains(&self, p: &Coordinate) -> bool {
        in_bbox(p, self)
    }
}

impl std::str::FromStr for BoundingBox {
    type Err = GeoError;

    /// Parses `lon_min,lon_max,lat_min,lat_max` or the preset name `australia`.
    fn from_str(s: &str) -> Result<Self, GeoError> {
        if s.eq_ignore_ascii_case("australia") {
            return Ok(BoundingBox::AUSTRALIA);
        }
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| GeoError::InvalidBox(format!("{s:?}: {e}")))?;
        match parts.as_slice() {
            [a, b, c, d] => BoundingBox::new(*a, *b, *c, *d),
            _ => Err(GeoError::InvalidBox(format!("{s:?}: expected four comma-separated numbers"))),
        }
    }
}

/// Haversine distance in kilometres between two coordinates.
pub fn haversine_km(a: &Coordinate, b: &Coordinate) -> f64 {
    let lat1 = a.lat.to_radians();
    let lat2 = b.lat.to_radians();
    let dlat = (b.lat - a.lat).to_radians();
    let dlon = (b.lon - a.lon).to_radians();
    let h = (dlat * 0.5).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon * 0.5).sin().powi(2);
    // h is symmetric in (a, b) term by term, so the result is exactly symmetric.
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Checked variant taking raw degrees.
pub fn haversine_km_raw(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> Result<f64, GeoError> {
    let a = Coordinate::new(lat1, lon1)?;
    let b = Coordinate::new(lat2, lon2)?;
    Ok(haversine_km(&a, &b))
}

pub fn in_bbox(p: &Coordinate, bbox: &BoundingBox) -> bool {
    bbox.lon_min <= p.lon && p.lon <= bbox.lon_max && bbox.lat_min <= p.lat && p.lat <= bbox.lat_max
}
