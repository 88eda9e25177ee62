//! Lambert conformal conic projection with two standard parallels.
//!
//! Angles are degrees at every public interface and radians internally. The
//! same formulation covers the sphere (infinite inverse flattening, so the
//! eccentricity is zero) and the ellipsoid.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use crate::config::KvConfig;
use crate::error::{Error, Result};

/// Attribute/config names used when projection constants are serialized.
pub const ATTR_LAT_ORIGIN: &str = "lcc_lat_origin";
pub const ATTR_LON_ORIGIN: &str = "lcc_lon_origin";
pub const ATTR_SP1: &str = "lcc_sp1";
pub const ATTR_SP2: &str = "lcc_sp2";
pub const ATTR_FALSE_EASTING: &str = "lcc_false_easting";
pub const ATTR_FALSE_NORTHING: &str = "lcc_false_northing";
pub const ATTR_SEMI_MAJOR: &str = "lcc_semi_major_axis";
pub const ATTR_INV_FLATTENING: &str = "lcc_inverse_flattening";

pub const WGS84_SEMI_MAJOR: f64 = 6_378_137.0;
pub const WGS84_INV_FLATTENING: f64 = 298.257_223_563;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipsoid {
    pub semi_major_axis: f64,
    /// `f64::INFINITY` selects the spherical formulation.
    pub inverse_flattening: f64,
}

impl Ellipsoid {
    pub const fn sphere(radius: f64) -> Self {
        Ellipsoid {
            semi_major_axis: radius,
            inverse_flattening: f64::INFINITY,
        }
    }

    pub const fn wgs84() -> Self {
        Ellipsoid {
            semi_major_axis: WGS84_SEMI_MAJOR,
            inverse_flattening: WGS84_INV_FLATTENING,
        }
    }

    pub fn is_sphere(&self) -> bool {
        self.inverse_flattening.is_infinite()
    }

    pub fn eccentricity(&self) -> f64 {
        if self.is_sphere() {
            return 0.0;
        }
        let f = 1.0 / self.inverse_flattening;
        (2.0 * f - f * f).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LccParams {
    pub lat_origin: f64,
    pub lon_origin: f64,
    pub std_parallel_1: f64,
    pub std_parallel_2: f64,
    pub false_easting: f64,
    pub false_northing: f64,
    pub ellipsoid: Ellipsoid,
}

impl Default for LccParams {
    /// Daymet North America grid: origin 42.5N 100W, parallels 25N/60N, spherical radius.
    fn default() -> Self {
        LccParams {
            lat_origin: 42.5,
            lon_origin: -100.0,
            std_parallel_1: 25.0,
            std_parallel_2: 60.0,
            false_easting: 0.0,
            false_northing: 0.0,
            ellipsoid: Ellipsoid::sphere(WGS84_SEMI_MAJOR),
        }
    }
}

impl LccParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.lat_origin,
            self.lon_origin,
            self.std_parallel_1,
            self.std_parallel_2,
            self.false_easting,
            self.false_northing,
            self.ellipsoid.semi_major_axis,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::Projection("non-finite projection constant".into()));
        }
        if self.lat_origin.abs() >= 90.0 {
            return Err(Error::Projection(format!(
                "origin latitude {} must satisfy |lat| < 90",
                self.lat_origin
            )));
        }
        if (self.std_parallel_1 + self.std_parallel_2).abs() < 1e-10 {
            return Err(Error::Projection(
                "standard parallels are symmetric about the equator; cone undefined".into(),
            ));
        }
        for sp in [self.std_parallel_1, self.std_parallel_2] {
            if sp.abs() >= 90.0 {
                return Err(Error::Projection(format!("standard parallel {sp} at a pole")));
            }
        }
        if self.ellipsoid.semi_major_axis <= 0.0 {
            return Err(Error::Projection("semi-major axis must be positive".into()));
        }
        if !(self.ellipsoid.inverse_flattening > 1.0) {
            return Err(Error::Projection("inverse flattening must exceed 1".into()));
        }
        Ok(())
    }

    /// `(name, value)` pairs for file attributes and config files.
    pub fn to_pairs(&self) -> Vec<(&'static str, f64)> {
        vec![
            (ATTR_LAT_ORIGIN, self.lat_origin),
            (ATTR_LON_ORIGIN, self.lon_origin),
            (ATTR_SP1, self.std_parallel_1),
            (ATTR_SP2, self.std_parallel_2),
            (ATTR_FALSE_EASTING, self.false_easting),
            (ATTR_FALSE_NORTHING, self.false_northing),
            (ATTR_SEMI_MAJOR, self.ellipsoid.semi_major_axis),
            (ATTR_INV_FLATTENING, self.ellipsoid.inverse_flattening),
        ]
    }

    /// Builds parameters from named values; missing names keep the Daymet defaults.
    pub fn from_lookup(get: impl Fn(&str) -> Option<f64>) -> Result<Self> {
        let d = LccParams::default();
        let p = LccParams {
            lat_origin: get(ATTR_LAT_ORIGIN).unwrap_or(d.lat_origin),
            lon_origin: get(ATTR_LON_ORIGIN).unwrap_or(d.lon_origin),
            std_parallel_1: get(ATTR_SP1).unwrap_or(d.std_parallel_1),
            std_parallel_2: get(ATTR_SP2).unwrap_or(d.std_parallel_2),
            false_easting: get(ATTR_FALSE_EASTING).unwrap_or(d.false_easting),
            false_northing: get(ATTR_FALSE_NORTHING).unwrap_or(d.false_northing),
            ellipsoid: Ellipsoid {
                semi_major_axis: get(ATTR_SEMI_MAJOR).unwrap_or(d.ellipsoid.semi_major_axis),
                inverse_flattening: get(ATTR_INV_FLATTENING)
                    .unwrap_or(d.ellipsoid.inverse_flattening),
            },
        };
        p.validate()?;
        Ok(p)
    }

    /// Reads `lcc_*` keys (optionally under `prefix.`) from a key=value config.
    pub fn from_config(cfg: &KvConfig, prefix: &str) -> Result<Self> {
        let key = |name: &str| {
            if prefix.is_empty() {
                name.to_string()
            } else {
                format!("{prefix}.{name}")
            }
        };
        for (name, _) in LccParams::default().to_pairs() {
            if let Some(raw) = cfg.get(&key(name)) {
                if parse_f64_or_inf(raw).is_none() {
                    return Err(Error::Config(format!("{} = {raw:?} is not a number", key(name))));
                }
            }
        }
        LccParams::from_lookup(|name| cfg.get(&key(name)).and_then(parse_f64_or_inf))
    }
}

fn parse_f64_or_inf(raw: &str) -> Option<f64> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "inf" | "infinity" | "sphere" => Some(f64::INFINITY),
        s => s.parse().ok(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Self {
        GeoPoint { lat, lon }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lat.is_finite() && self.lon.is_finite()) {
            return Err(Error::Projection("non-finite geographic point".into()));
        }
        if self.lat.abs() > 90.0 || self.lon.abs() > 180.0 {
            return Err(Error::Projection(format!(
                "point ({}, {}) outside lat [-90, 90] / lon [-180, 180]",
                self.lat, self.lon
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjPoint {
    pub x: f64,
    pub y: f64,
}

impl ProjPoint {
    pub fn new(x: f64, y: f64) -> Self {
        ProjPoint { x, y }
    }
}

/// Projection with the cone constants precomputed.
#[derive(Debug, Clone, Copy)]
pub struct Lcc {
    params: LccParams,
    e: f64,
    n: f64,
    /// a·F
    af: f64,
    rho0: f64,
}

impl Lcc {
    pub fn new(params: LccParams) -> Result<Self> {
        params.validate()?;
        let e = params.ellipsoid.eccentricity();
        let a = params.ellipsoid.semi_major_axis;
        let phi1 = params.std_parallel_1.to_radians();
        let phi2 = params.std_parallel_2.to_radians();
        let m1 = msfn(phi1, e);
        let t1 = tsfn(phi1, e);
        let n = if (phi1 - phi2).abs() < 1e-12 {
            phi1.sin()
        } else {
            (m1.ln() - msfn(phi2, e).ln()) / (t1.ln() - tsfn(phi2, e).ln())
        };
        let af = a * m1 / (n * t1.powf(n));
        let rho0 = af * tsfn(params.lat_origin.to_radians(), e).powf(n);
        Ok(Lcc {
            params,
            e,
            n,
            af,
            rho0,
        })
    }

    pub fn params(&self) -> &LccParams {
        &self.params
    }

    /// Cone constant.
    pub fn cone(&self) -> f64 {
        self.n
    }

    pub fn forward(&self, p: GeoPoint) -> Result<ProjPoint> {
        p.validate()?;
        let phi = p.lat.to_radians();
        let rho = if (phi.abs() - FRAC_PI_2).abs() < 1e-12 {
            if phi * self.n <= 0.0 {
                return Err(Error::Projection(format!(
                    "latitude {} is the pole opposite the cone apex",
                    p.lat
                )));
            }
            0.0
        } else {
            self.af * tsfn(phi, self.e).powf(self.n)
        };
        let theta = self.n * wrap_pi((p.lon - self.params.lon_origin).to_radians());
        Ok(ProjPoint {
            x: rho * theta.sin() + self.params.false_easting,
            y: self.rho0 - rho * theta.cos() + self.params.false_northing,
        })
    }

    pub fn inverse(&self, p: ProjPoint) -> Result<GeoPoint> {
        if !(p.x.is_finite() && p.y.is_finite()) {
            return Err(Error::Projection("non-finite projected point".into()));
        }
        let x = p.x - self.params.false_easting;
        let dy = self.rho0 - (p.y - self.params.false_northing);
        let sign = self.n.signum();
        let rho = sign * x.hypot(dy);
        if rho == 0.0 {
            return Ok(GeoPoint {
                lat: sign * 90.0,
                lon: self.params.lon_origin,
            });
        }
        let t = (rho / self.af).powf(1.0 / self.n);
        let theta = (sign * x).atan2(sign * dy);
        let phi = phi_from_t(t, self.e);
        let lon = wrap_180(self.params.lon_origin + (theta / self.n).to_degrees());
        Ok(GeoPoint {
            lat: phi.to_degrees(),
            lon,
        })
    }

    /// Analytic point scale factor along a parallel.
    pub fn scale_factor(&self, lat: f64) -> f64 {
        let phi = lat.to_radians();
        let rho = self.af * tsfn(phi, self.e).powf(self.n);
        rho * self.n / (self.params.ellipsoid.semi_major_axis * msfn(phi, self.e))
    }
}

pub fn lcc_forward(p: GeoPoint, params: &LccParams) -> Result<ProjPoint> {
    Lcc::new(*params)?.forward(p)
}

pub fn lcc_inverse(p: ProjPoint, params: &LccParams) -> Result<GeoPoint> {
    Lcc::new(*params)?.inverse(p)
}

fn msfn(phi: f64, e: f64) -> f64 {
    let s = e * phi.sin();
    phi.cos() / (1.0 - s * s).sqrt()
}

fn tsfn(phi: f64, e: f64) -> f64 {
    let s = e * phi.sin();
    (FRAC_PI_4 - 0.5 * phi).tan() / ((1.0 - s) / (1.0 + s)).powf(0.5 * e)
}

fn phi_from_t(t: f64, e: f64) -> f64 {
    let mut phi = FRAC_PI_2 - 2.0 * t.atan();
    if e == 0.0 {
        return phi;
    }
    for _ in 0..32 {
        let s = e * phi.sin();
        let next = FRAC_PI_2 - 2.0 * (t * ((1.0 - s) / (1.0 + s)).powf(0.5 * e)).atan();
        let done = (next - phi).abs() < 1e-15;
        phi = next;
        if done {
            break;
        }
    }
    phi
}

fn wrap_pi(a: f64) -> f64 {
    if (-PI..=PI).contains(&a) {
        a
    } else {
        (a + PI).rem_euclid(2.0 * PI) - PI
    }
}

fn wrap_180(lon: f64) -> f64 {
    if (-180.0..=180.0).contains(&lon) {
        lon
    } else {
        (lon + 180.0).rem_euclid(360.0) - 180.0
    }
}
