//! Equirectangular local projection from lon/lat degrees to planar meters.
//!
//! City-scale study areas make the projection error negligible, and all
//! downstream geometry works on plain Euclidean distances.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;

pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Geographic coordinate in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lon: f64,
    pub lat: f64,
}

impl GeoPoint {
    pub fn new(lon: f64, lat: f64) -> Self {
        Self { lon, lat }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lon.is_finite()
            && self.lat.is_finite()
            && (-180.0..=180.0).contains(&self.lon)
            && (-90.0..=90.0).contains(&self.lat);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidCoordinate(format!("lon {} lat {}", self.lon, self.lat)))
        }
    }
}

/// Mean of the coordinates; `None` for an empty input.
pub fn centroid<'a>(points: impl IntoIterator<Item = &'a GeoPoint>) -> Option<GeoPoint> {
    let (mut lon, mut lat, mut n) = (0.0, 0.0, 0usize);
    for p in points {
        lon += p.lon;
        lat += p.lat;
        n += 1;
    }
    (n > 0).then(|| GeoPoint::new(lon / n as f64, lat / n as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalProjection {
    origin: GeoPoint,
    cos_lat0: f64,
}

impl LocalProjection {
    pub fn new(origin: GeoPoint) -> Result<Self> {
        origin.validate()?;
        Ok(Self {
            origin,
            cos_lat0: origin.lat.to_radians().cos(),
        })
    }

    pub fn origin(&self) -> GeoPoint {
        self.origin
    }

    pub fn project(&self, g: GeoPoint) -> Result<Point> {
        g.validate()?;
        Ok(Point::new(
            EARTH_RADIUS_M * (g.lon - self.origin.lon).to_radians() * self.cos_lat0,
            EARTH_RADIUS_M * (g.lat - self.origin.lat).to_radians(),
        ))
    }

    pub fn unproject(&self, p: Point) -> GeoPoint {
        GeoPoint::new(
            self.origin.lon + (p.x / (EARTH_RADIUS_M * self.cos_lat0)).to_degrees(),
            self.origin.lat + (p.y / EARTH_RADIUS_M).to_degrees(),
        )
    }
}

/// Projects `(lon, lat)` around `origin`.
pub fn project(lon: f64, lat: f64, origin: GeoPoint) -> Result<Point> {
    LocalProjection::new(origin)?.project(GeoPoint::new(lon, lat))
}
