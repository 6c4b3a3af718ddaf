//! Spherical geometry for location targeting: distances, include/exclude
//! circle regions, Monte Carlo region measurement and the perimeter-pin
//! geofence that narrows a 1-mile circle down to a single house.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{PlatformPolicy, Population, UserId, MILE_M};

/// Mean earth radius used for every spherical computation.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// Default distance of each exclude-circle center from the target, as a
/// multiple of the circle radius.
pub const DEFAULT_RING_SPACING: f64 = 1.04;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeoError {
    #[error("latitude {0} outside [-90, 90]")]
    Latitude(f64),
    #[error("longitude {0} is not finite")]
    Longitude(f64),
    #[error("location spec needs at least one include circle")]
    NoIncludes,
    #[error("circle radius {radius_m} m is below the {min_m} m floor")]
    RadiusBelowFloor { radius_m: f64, min_m: f64 },
    #[error("ring size {0} is below the minimum of 3")]
    RingTooSmall(usize),
    #[error("ring spacing {0} must lie strictly between 1 and 2 radii")]
    BadSpacing(f64),
    #[error("region measurement needs at least 1000 samples, got {0}")]
    TooFewSamples(usize),
}

/// A point on the sphere in decimal degrees. Longitude is kept in [-180, 180).
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

    fn try_from(r: RawCoordinate) -> Result<Self, GeoError> {
        Coordinate::new(r.lat, r.lon)
    }
}

impl From<Coordinate> for RawCoordinate {
    fn from(c: Coordinate) -> Self {
        RawCoordinate { lat: c.lat, lon: c.lon }
    }
}

impl Coordinate {
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeoError> {
        if !(-90.0..=90.0).contains(&lat) {
            return Err(GeoError::Latitude(lat));
        }
        if !lon.is_finite() {
            return Err(GeoError::Longitude(lon));
        }
        Ok(Coordinate {
            lat,
            lon: normalize_lon(lon),
        })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }
}

fn normalize_lon(lon: f64) -> f64 {
    let l = libm::fmod(lon + 180.0, 360.0);
    let l = if l < 0.0 { l + 360.0 } else { l };
    let out = l - 180.0;
    // fmod rounding can land exactly on +180
    if out >= 180.0 {
        out - 360.0
    } else {
        out
    }
}

/// Great-circle (haversine) distance in meters.
pub fn distance(a: Coordinate, b: Coordinate) -> f64 {
    let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = p2 - p1;
    let dlon = (b.lon - a.lon).to_radians();
    let s_lat = libm::sin(dlat / 2.0);
    let s_lon = libm::sin(dlon / 2.0);
    let h = s_lat * s_lat + libm::cos(p1) * libm::cos(p2) * s_lon * s_lon;
    2.0 * EARTH_RADIUS_M * libm::asin(libm::sqrt(h.min(1.0)))
}

/// Point reached by travelling `dist_m` from `start` along initial bearing
/// `bearing_deg` (clockwise from north).
pub fn destination(start: Coordinate, bearing_deg: f64, dist_m: f64) -> Coordinate {
    let delta = dist_m / EARTH_RADIUS_M;
    let theta = bearing_deg.to_radians();
    let p1 = start.lat.to_radians();
    let l1 = start.lon.to_radians();
    let sin_p2 = libm::sin(p1) * libm::cos(delta) + libm::cos(p1) * libm::sin(delta) * libm::cos(theta);
    let p2 = libm::asin(sin_p2.clamp(-1.0, 1.0));
    let l2 = l1
        + libm::atan2(
            libm::sin(theta) * libm::sin(delta) * libm::cos(p1),
            libm::cos(delta) - libm::sin(p1) * sin_p2,
        );
    Coordinate {
        lat: p2.to_degrees().clamp(-90.0, 90.0),
        lon: normalize_lon(l2.to_degrees()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct Circle {
    pub center: Coordinate,
    pub radius_m: f64,
}

impl Circle {
    pub fn new(center: Coordinate, radius_m: f64) -> Self {
        Circle { center, radius_m }
    }

    pub fn contains(&self, p: Coordinate) -> bool {
        distance(self.center, p) <= self.radius_m
    }
}

/// Union of include circles minus the union of exclude circles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct LocationSpec {
    pub includes: Vec<Circle>,
    #[serde(default)]
    pub excludes: Vec<Circle>,
}

impl LocationSpec {
    /// Checks the spec against the platform's minimum-radius rule.
    pub fn validate(&self, min_radius_m: f64) -> Result<(), GeoError> {
        if self.includes.is_empty() {
            return Err(GeoError::NoIncludes);
        }
        for c in self.includes.iter().chain(&self.excludes) {
            if !(c.radius_m >= min_radius_m) {
                return Err(GeoError::RadiusBelowFloor {
                    radius_m: c.radius_m,
                    min_m: min_radius_m,
                });
            }
        }
        Ok(())
    }

    pub fn contains(&self, p: Coordinate) -> bool {
        region_contains(self, p)
    }
}

/// True iff `p` lies in at least one include circle and in no exclude circle.
pub fn region_contains(spec: &LocationSpec, p: Coordinate) -> bool {
    spec.includes.iter().any(|c| c.contains(p)) && !spec.excludes.iter().any(|c| c.contains(p))
}

/// Parameters of the perimeter-pin geofence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct GeofenceParams {
    pub ring_size: usize,
    /// Exclude-center distance from the target, in circle radii; in (1, 2).
    pub spacing: f64,
}

impl Default for GeofenceParams {
    fn default() -> Self {
        GeofenceParams {
            ring_size: 8,
            spacing: DEFAULT_RING_SPACING,
        }
    }
}

/// Geofence around `target` with `ring_size` excludes at the default spacing.
pub fn construct_geofence(
    target: Coordinate,
    ring_size: usize,
    policy: &PlatformPolicy,
) -> Result<LocationSpec, GeoError> {
    construct_geofence_with(
        target,
        GeofenceParams {
            ring_size,
            ..GeofenceParams::default()
        },
        policy,
    )
}

/// One include circle at the platform's minimum radius (at least one mile)
/// centered on the target, ringed by equally spaced excludes of the same
/// radius whose centers sit just beyond the target, so together they cover
/// the include perimeter and leave a small pocket around the target.
pub fn construct_geofence_with(
    target: Coordinate,
    params: GeofenceParams,
    policy: &PlatformPolicy,
) -> Result<LocationSpec, GeoError> {
    if params.ring_size < 3 {
        return Err(GeoError::RingTooSmall(params.ring_size));
    }
    if !(params.spacing > 1.0 && params.spacing < 2.0) {
        return Err(GeoError::BadSpacing(params.spacing));
    }
    let radius = policy.min_circle_radius_m.max(MILE_M);
    let offset = params.spacing * radius;
    let excludes = (0..params.ring_size)
        .map(|k| {
            let bearing = k as f64 * 360.0 / params.ring_size as f64;
            Circle::new(destination(target, bearing, offset), radius)
        })
        .collect();
    Ok(LocationSpec {
        includes: alloc::vec![Circle::new(target, radius)],
        excludes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct RegionMeasure {
    pub area_m2: f64,
    pub max_width_m: f64,
    pub hits: usize,
    pub samples: usize,
}

/// Latitude/longitude box (degrees) enclosing every include circle.
/// `lon_max` may exceed 180 when the box crosses the antimeridian.
#[derive(Debug, Clone, Copy)]
struct BoundingBox {
    lat_min: f64,
    lat_max: f64,
    lon_min: f64,
    lon_max: f64,
}

impl BoundingBox {
    fn of(spec: &LocationSpec) -> Self {
        let mut b = BoundingBox {
            lat_min: 90.0,
            lat_max: -90.0,
            lon_min: f64::INFINITY,
            lon_max: f64::NEG_INFINITY,
        };
        let anchor = spec.includes[0].center.lon;
        for c in &spec.includes {
            let dlat = (c.radius_m / EARTH_RADIUS_M).to_degrees();
            let lat_lo = (c.center.lat - dlat).max(-90.0);
            let lat_hi = (c.center.lat + dlat).min(90.0);
            let max_abs = lat_lo.abs().max(lat_hi.abs());
            let dlon = if max_abs >= 89.999 {
                180.0
            } else {
                // widest longitude span is at the latitude farthest from the equator
                let s = libm::sin(c.radius_m / EARTH_RADIUS_M) / libm::cos(c.center.lat.to_radians());
                if s >= 1.0 {
                    180.0
                } else {
                    libm::asin(s).to_degrees()
                }
            };
            // unwrap around the first include so boxes stay contiguous
            let mut lon = c.center.lon;
            while lon - anchor > 180.0 {
                lon -= 360.0;
            }
            while anchor - lon > 180.0 {
                lon += 360.0;
            }
            b.lat_min = b.lat_min.min(lat_lo);
            b.lat_max = b.lat_max.max(lat_hi);
            b.lon_min = b.lon_min.min(lon - dlon);
            b.lon_max = b.lon_max.max(lon + dlon);
        }
        if b.lon_max - b.lon_min > 360.0 {
            b.lon_min = -180.0;
            b.lon_max = 180.0;
        }
        b
    }

    fn area_m2(&self) -> f64 {
        let dlon = (self.lon_max - self.lon_min).to_radians();
        let band = libm::sin(self.lat_max.to_radians()) - libm::sin(self.lat_min.to_radians());
        EARTH_RADIUS_M * EARTH_RADIUS_M * dlon * band
    }

    /// Area-uniform sample inside the box.
    fn sample(&self, rng: &mut impl Rng) -> Coordinate {
        let s_lo = libm::sin(self.lat_min.to_radians());
        let s_hi = libm::sin(self.lat_max.to_radians());
        let s = s_lo + (s_hi - s_lo) * rng.gen::<f64>();
        let lat = libm::asin(s.clamp(-1.0, 1.0)).to_degrees();
        let lon = self.lon_min + (self.lon_max - self.lon_min) * rng.gen::<f64>();
        Coordinate {
            lat,
            lon: normalize_lon(lon),
        }
    }
}

/// Monte Carlo estimate of the region's area and maximum width over the
/// bounding box of its includes. Deterministic for a given seed.
pub fn measure_region(spec: &LocationSpec, samples: usize, seed: u64) -> Result<RegionMeasure, GeoError> {
    if samples < 1000 {
        return Err(GeoError::TooFewSamples(samples));
    }
    if spec.includes.is_empty() {
        return Ok(RegionMeasure {
            area_m2: 0.0,
            max_width_m: 0.0,
            hits: 0,
            samples,
        });
    }
    let bbox = BoundingBox::of(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = Vec::new();
    for _ in 0..samples {
        let p = bbox.sample(&mut rng);
        if region_contains(spec, p) {
            hits.push(p);
        }
    }
    let area_m2 = bbox.area_m2() * hits.len() as f64 / samples as f64;
    Ok(RegionMeasure {
        area_m2,
        max_width_m: max_pairwise_distance(&hits),
        hits: hits.len(),
        samples,
    })
}

/// Largest great-circle distance between any two points. Candidates are
/// restricted to the convex hull in a local tangent plane, which holds the
/// farthest pair for regions a few miles across.
pub fn max_pairwise_distance(points: &[Coordinate]) -> f64 {
    if points.len() < 2 {
        return 0.0;
    }
    let origin = points[0];
    let cos_lat = libm::cos(origin.lat.to_radians());
    let project = |p: &Coordinate| {
        let mut dlon = p.lon - origin.lon;
        if dlon > 180.0 {
            dlon -= 360.0;
        } else if dlon < -180.0 {
            dlon += 360.0;
        }
        (dlon * cos_lat, p.lat - origin.lat)
    };
    let mut pts: Vec<(f64, f64, usize)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let (x, y) = project(p);
            (x, y, i)
        })
        .collect();
    let hull = convex_hull(&mut pts);
    let mut best = 0.0f64;
    for (i, &a) in hull.iter().enumerate() {
        for &b in &hull[i + 1..] {
            best = best.max(distance(points[a], points[b]));
        }
    }
    best
}

/// Andrew's monotone chain; returns indices of hull vertices.
fn convex_hull(pts: &mut [(f64, f64, usize)]) -> Vec<usize> {
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    if pts.len() <= 2 {
        return pts.iter().map(|p| p.2).collect();
    }
    let cross = |o: (f64, f64, usize), a: (f64, f64, usize), b: (f64, f64, usize)| {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let mut hull: Vec<(f64, f64, usize)> = Vec::with_capacity(2 * pts.len());
    for &p in pts.iter() {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull.into_iter().map(|p| p.2).collect()
}

/// Users whose home lies inside the region.
pub fn eligible_users(spec: &LocationSpec, population: &Population) -> BTreeSet<UserId> {
    population
        .users()
        .iter()
        .filter(|u| region_contains(spec, u.home))
        .map(|u| u.id)
        .collect()
}

/// Area of a spherical cap of the given radius; used by callers comparing
/// Monte Carlo estimates with the analytic circle area.
pub fn cap_area_m2(radius_m: f64) -> f64 {
    2.0 * PI * EARTH_RADIUS_M * EARTH_RADIUS_M * (1.0 - libm::cos(radius_m / EARTH_RADIUS_M))
}
