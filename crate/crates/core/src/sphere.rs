//! Spherical coordinates, gnomonic projection and tangent-plane layouts.
//!
//! Angles are radians throughout. Longitudes are kept in `[-π, π)`.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use crate::error::{Error, Result};

/// Wraps a longitude into `[-π, π)`.
pub fn normalize_lon(lon: f64) -> f64 {
    let l = (lon + PI).rem_euclid(TAU) - PI;
    // rem_euclid can return TAU itself for tiny negative inputs
    if l >= PI {
        l - TAU
    } else {
        l
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SphericalPoint {
    lat: f64,
    lon: f64,
}

impl SphericalPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if !lat.is_finite() || !lon.is_finite() || lat.abs() > FRAC_PI_2 {
            return Err(Error::InvalidLatitude(lat));
        }
        Ok(Self {
            lat,
            lon: normalize_lon(lon),
        })
    }

    pub fn from_degrees(lat: f64, lon: f64) -> Result<Self> {
        Self::new(lat.to_radians(), lon.to_radians())
    }

    /// Builds a point from a (not necessarily unit) direction vector with
    /// `z` pointing to the north pole and `x` to longitude 0.
    pub fn from_direction(x: f64, y: f64, z: f64) -> Self {
        let r = (x * x + y * y + z * z).sqrt();
        let lat = (z / r).clamp(-1.0, 1.0).asin();
        Self {
            lat,
            lon: normalize_lon(y.atan2(x)),
        }
    }

    #[inline]
    pub fn lat(&self) -> f64 {
        self.lat
    }

    #[inline]
    pub fn lon(&self) -> f64 {
        self.lon
    }

    pub fn direction(&self) -> [f64; 3] {
        let (sl, cl) = self.lat.sin_cos();
        let (so, co) = self.lon.sin_cos();
        [cl * co, cl * so, sl]
    }

    /// Great-circle distance in radians.
    pub fn angular_distance(&self, other: &SphericalPoint) -> f64 {
        let a = self.direction();
        let b = other.direction();
        let cross = [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ];
        let sin = (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt();
        let cos = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
        sin.atan2(cos)
    }

    pub fn rotated_lon(&self, delta: f64) -> SphericalPoint {
        SphericalPoint {
            lat: self.lat,
            lon: normalize_lon(self.lon + delta),
        }
    }
}

/// A square gnomonic patch tangent to the sphere at `center`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TangentPlane {
    center: SphericalPoint,
    fov: f64,
    resolution: usize,
}

impl TangentPlane {
    pub fn new(center: SphericalPoint, fov: f64, resolution: usize) -> Result<Self> {
        if !(fov > 0.0 && fov < PI) {
            return Err(Error::InvalidFov(fov));
        }
        if resolution == 0 {
            return Err(Error::InvalidResolution(resolution));
        }
        Ok(Self {
            center,
            fov,
            resolution,
        })
    }

    #[inline]
    pub fn center(&self) -> SphericalPoint {
        self.center
    }

    #[inline]
    pub fn fov(&self) -> f64 {
        self.fov
    }

    #[inline]
    pub fn resolution(&self) -> usize {
        self.resolution
    }

    /// Half the side length of the patch in plane units, `tan(fov / 2)`.
    #[inline]
    pub fn half_extent(&self) -> f64 {
        (self.fov / 2.0).tan()
    }

    /// Plane coordinates of the centre of pixel `(row, col)`; `y` grows upwards.
    pub fn pixel_to_plane(&self, row: f64, col: f64) -> (f64, f64) {
        let n = self.resolution as f64;
        let t = self.half_extent();
        let x = (2.0 * (col + 0.5) / n - 1.0) * t;
        let y = (1.0 - 2.0 * (row + 0.5) / n) * t;
        (x, y)
    }

    /// Continuous pixel coordinates `(row, col)` of a plane point.
    pub fn plane_to_pixel(&self, x: f64, y: f64) -> (f64, f64) {
        let n = self.resolution as f64;
        let t = self.half_extent();
        let col = (x / t + 1.0) * n / 2.0 - 0.5;
        let row = (1.0 - y / t) * n / 2.0 - 0.5;
        (row, col)
    }

    pub fn contains_plane_point(&self, x: f64, y: f64) -> bool {
        let t = self.half_extent();
        x.abs() <= t && y.abs() <= t
    }

    pub fn with_center(&self, center: SphericalPoint) -> TangentPlane {
        TangentPlane { center, ..*self }
    }
}

/// Projects `p` onto the plane tangent at `plane.center()`.
pub fn gnomonic_forward(p: SphericalPoint, plane: &TangentPlane) -> Result<(f64, f64)> {
    let (s0, c0) = plane.center.lat.sin_cos();
    let (s, c) = p.lat.sin_cos();
    let (sd, cd) = (p.lon - plane.center.lon).sin_cos();
    let cos_c = s0 * s + c0 * c * cd;
    if cos_c <= 1e-12 {
        return Err(Error::HemisphereViolation { cos_c });
    }
    let x = c * sd / cos_c;
    let y = (c0 * s - s0 * c * cd) / cos_c;
    Ok((x, y))
}

/// Maps plane coordinates back onto the sphere. Total on finite input.
pub fn gnomonic_inverse(x: f64, y: f64, plane: &TangentPlane) -> SphericalPoint {
    let rho = x.hypot(y);
    if rho == 0.0 {
        return plane.center;
    }
    let (s0, c0) = plane.center.lat.sin_cos();
    let c = rho.atan();
    let (sc, cc) = c.sin_cos();
    let lat = (cc * s0 + y * sc * c0 / rho).clamp(-1.0, 1.0).asin();
    let lon = plane.center.lon + (x * sc).atan2(rho * c0 * cc - y * s0 * sc);
    SphericalPoint {
        lat,
        lon: normalize_lon(lon),
    }
}

/// Ordered set of tangent planes. The index order is part of the contract:
/// contrastive pairing matches patches by position in this list.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentLayout {
    planes: Vec<TangentPlane>,
}

impl TangentLayout {
    pub fn new(planes: Vec<TangentPlane>) -> Result<Self> {
        let first = planes
            .first()
            .ok_or_else(|| Error::Config("a tangent layout needs at least one plane".into()))?;
        if planes.iter().any(|p| p.resolution != first.resolution) {
            return Err(Error::Config(
                "all planes of a layout must share one resolution".into(),
            ));
        }
        Ok(Self { planes })
    }

    /// Latitude rings (north to south) with `per_ring` planes each, starting
    /// at longitude 0 and ascending eastwards.
    pub fn rings(ring_lats: &[f64], per_ring: usize, fov: f64, resolution: usize) -> Result<Self> {
        if !(fov > 0.0 && fov < PI) {
            return Err(Error::InvalidFov(fov));
        }
        if resolution < 2 {
            return Err(Error::InvalidResolution(resolution));
        }
        let mut planes = Vec::with_capacity(ring_lats.len() * per_ring);
        for &lat in ring_lats {
            for k in 0..per_ring {
                let lon = TAU * k as f64 / per_ring as f64;
                planes.push(TangentPlane::new(SphericalPoint::new(lat, lon)?, fov, resolution)?);
            }
        }
        Self::new(planes)
    }

    #[inline]
    pub fn planes(&self) -> &[TangentPlane] {
        &self.planes
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.planes.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.planes.is_empty()
    }

    #[inline]
    pub fn resolution(&self) -> usize {
        self.planes[0].resolution
    }

    /// Same layout with every centre shifted eastwards by `delta`.
    pub fn rotated_lon(&self, delta: f64) -> TangentLayout {
        TangentLayout {
            planes: self
                .planes
                .iter()
                .map(|p| p.with_center(p.center.rotated_lon(delta)))
                .collect(),
        }
    }

    /// True if some plane's square patch contains `p`.
    pub fn covers(&self, p: SphericalPoint) -> bool {
        self.planes.iter().any(|plane| {
            gnomonic_forward(p, plane)
                .map(|(x, y)| plane.contains_plane_point(x, y))
                .unwrap_or(false)
        })
    }
}

pub const DEFAULT_RING_LAT_DEG: f64 = 45.0;
pub const DEFAULT_FOV_DEG: f64 = 80.0;

/// The 18-plane layout: rings at +45°, 0°, −45° with six planes each at
/// longitudes 0°, 60°, …, 300°.
pub fn default_layout_18(fov: f64, resolution: usize) -> Result<TangentLayout> {
    let ring = DEFAULT_RING_LAT_DEG.to_radians();
    TangentLayout::rings(&[ring, 0.0, -ring], 6, fov, resolution)
}
