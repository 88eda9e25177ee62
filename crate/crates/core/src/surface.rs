//! Surface properties: interpolation from coarse lat/lon sources onto
//! domain land cells, plus the subgrid hierarchy limits.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cdf5::{self, AttrValue, CdfFileModel, NcType, VarData, Variant};
use crate::domain::DomainSpec;
use crate::{Error, Result};

pub const N_LAYERS: usize = 15;
pub const N_PFTS: usize = 17;
pub const N_MONTHS: usize = 12;
const EARTH_RADIUS_KM: f64 = 6371.0;

/// Per-gridcell hierarchy limits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SubgridSpec {
    pub max_topounits: usize,
    pub max_landunits: usize,
    pub max_columns_per_landunit: usize,
    pub soil_layers: usize,
    pub max_pfts: usize,
}

impl Default for SubgridSpec {
    fn default() -> Self {
        SubgridSpec {
            max_topounits: 1,
            max_landunits: 5,
            max_columns_per_landunit: 2,
            soil_layers: N_LAYERS,
            max_pfts: N_PFTS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Nearest,
    Bilinear,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Nearest => "nearest",
            Method::Bilinear => "bilinear",
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nearest" => Ok(Method::Nearest),
            "bilinear" | "linear" => Ok(Method::Bilinear),
            "spline" => Err(Error::Surface(
                "spline interpolation is not supported; use nearest or bilinear".into(),
            )),
            other => Err(Error::Surface(format!("unknown interpolation method {other:?}"))),
        }
    }
}

/// One source variable: `values` laid out as `[extra dims..., lat, lon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseVar {
    pub name: String,
    pub extra_dims: Vec<(String, usize)>,
    pub values: Vec<f64>,
}

impl CoarseVar {
    pub fn n_slices(&self) -> usize {
        self.extra_dims.iter().map(|d| d.1).product()
    }
}

/// Regular lat/lon source grid; axes hold cell centers in degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseGrid {
    pub lat: Vec<f64>,
    pub lon: Vec<f64>,
    pub vars: Vec<CoarseVar>,
}

fn strictly_monotone(axis: &[f64]) -> bool {
    axis.windows(2).all(|w| w[1] > w[0]) || axis.windows(2).all(|w| w[1] < w[0])
}

impl CoarseGrid {
    pub fn new(lat: Vec<f64>, lon: Vec<f64>) -> Result<Self> {
        if lat.is_empty() || lon.is_empty() {
            return Err(Error::Surface("empty source grid".into()));
        }
        if !strictly_monotone(&lat) || !strictly_monotone(&lon) {
            return Err(Error::Surface("source axes must be strictly monotone".into()));
        }
        Ok(CoarseGrid { lat, lon, vars: Vec::new() })
    }

    pub fn n_cells(&self) -> usize {
        self.lat.len() * self.lon.len()
    }

    pub fn add_var(&mut self, name: &str, extra_dims: &[(&str, usize)], values: Vec<f64>) -> Result<()> {
        let v = CoarseVar {
            name: name.to_string(),
            extra_dims: extra_dims.iter().map(|&(n, l)| (n.to_string(), l)).collect(),
            values,
        };
        if v.values.len() != v.n_slices() * self.n_cells() {
            return Err(Error::Surface(format!(
                "{name}: {} values for {} slices of {} cells",
                v.values.len(),
                v.n_slices(),
                self.n_cells()
            )));
        }
        self.vars.push(v);
        Ok(())
    }

    pub fn var(&self, name: &str) -> Option<&CoarseVar> {
        self.vars.iter().find(|v| v.name == name)
    }
}

pub fn haversine_km(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

fn half_spacing(axis: &[f64]) -> f64 {
    if axis.len() < 2 { 0.25 } else { (axis[1] - axis[0]).abs() / 2.0 }
}

fn nearest_on_axis(axis: &[f64], x: f64) -> usize {
    let mut best = 0;
    for (i, &a) in axis.iter().enumerate() {
        if (a - x).abs() < (axis[best] - x).abs() {
            best = i;
        }
    }
    best
}

fn check_extent(axis: &[f64], x: f64, what: &str) -> Result<()> {
    let (lo, hi) = (axis[0].min(axis[axis.len() - 1]), axis[0].max(axis[axis.len() - 1]));
    let h = half_spacing(axis);
    if x < lo - h - 1e-12 || x > hi + h + 1e-12 {
        return Err(Error::Surface(format!("target {what} {x} outside source extent [{lo}, {hi}]")));
    }
    Ok(())
}

/// Flat source index (`lat_index * n_lon + lon_index`) of the geodesically
/// nearest center for each (lon, lat) target; ties go to the lower index.
pub fn nearest_indices(src: &CoarseGrid, targets: &[(f64, f64)]) -> Result<Vec<usize>> {
    if src.n_cells() == 0 {
        return Err(Error::Surface("empty source".into()));
    }
    let nlon = src.lon.len();
    targets
        .iter()
        .map(|&(lon, lat)| {
            check_extent(&src.lat, lat, "latitude")?;
            check_extent(&src.lon, lon, "longitude")?;
            let (i0, j0) = (nearest_on_axis(&src.lat, lat), nearest_on_axis(&src.lon, lon));
            let mut best: Option<(f64, usize)> = None;
            for i in i0.saturating_sub(1)..=(i0 + 1).min(src.lat.len() - 1) {
                for j in j0.saturating_sub(1)..=(j0 + 1).min(nlon - 1) {
                    let dist = haversine_km(lat, lon, src.lat[i], src.lon[j]);
                    let flat = i * nlon + j;
                    let better = match best {
                        None => true,
                        Some((bd, bf)) => dist < bd || (dist == bd && flat < bf),
                    };
                    if better {
                        best = Some((dist, flat));
                    }
                }
            }
            Ok(best.unwrap().1)
        })
        .collect()
}

/// Nearest-neighbour values laid out `[extra dims..., target]`.
pub fn interp_nearest(src: &CoarseGrid, var: &CoarseVar, targets: &[(f64, f64)]) -> Result<Vec<f64>> {
    let idx = nearest_indices(src, targets)?;
    let nc = src.n_cells();
    let mut out = Vec::with_capacity(var.n_slices() * targets.len());
    for s in 0..var.n_slices() {
        out.extend(idx.iter().map(|&i| var.values[s * nc + i]));
    }
    Ok(out)
}

/// Bracketing index and weight toward `axis[i + 1]`; `x` strictly inside.
fn bracket(axis: &[f64], x: f64, what: &str) -> Result<(usize, f64)> {
    let n = axis.len();
    let (lo, hi) = (axis[0].min(axis[n - 1]), axis[0].max(axis[n - 1]));
    if n < 2 || !(x > lo && x < hi) {
        return Err(Error::Surface(format!("target {what} {x} not strictly inside ({lo}, {hi})")));
    }
    for i in 0..n - 1 {
        let (a, b) = (axis[i], axis[i + 1]);
        if (x >= a.min(b)) && (x <= a.max(b)) {
            return Ok((i, (x - a) / (b - a)));
        }
    }
    unreachable!("x is inside the axis range")
}

/// Bilinear values laid out `[extra dims..., target]`.
pub fn interp_bilinear(src: &CoarseGrid, var: &CoarseVar, targets: &[(f64, f64)]) -> Result<Vec<f64>> {
    let nlon = src.lon.len();
    let nc = src.n_cells();
    let weights: Vec<(usize, usize, f64, f64)> = targets
        .iter()
        .map(|&(lon, lat)| {
            let (i, wy) = bracket(&src.lat, lat, "latitude")?;
            let (j, wx) = bracket(&src.lon, lon, "longitude")?;
            Ok((i, j, wy, wx))
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(var.n_slices() * targets.len());
    for s in 0..var.n_slices() {
        let v = &var.values[s * nc..(s + 1) * nc];
        out.extend(weights.iter().map(|&(i, j, wy, wx)| {
            let at = |a: usize, b: usize| v[a * nlon + b];
            let south = at(i, j) + (at(i, j + 1) - at(i, j)) * wx;
            let north = at(i + 1, j) + (at(i + 1, j + 1) - at(i + 1, j)) * wx;
            let val = south + (north - south) * wy;
            let corners = [at(i, j), at(i, j + 1), at(i + 1, j), at(i + 1, j + 1)];
            let lo = corners.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = corners.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            val.clamp(lo, hi)
        }));
    }
    Ok(out)
}

/// One interpolated variable over land cells, `[extra dims..., gridcell]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceVar {
    pub name: String,
    pub extra_dims: Vec<(String, usize)>,
    pub values: Vec<f64>,
    pub method: Method,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceDataset {
    pub n_land: usize,
    pub vars: Vec<SurfaceVar>,
}

pub const REQUIRED: [&str; 4] = ["PCT_CLAY", "FMAX", "PCT_PFT", "MONTHLY_LAI"];

impl SurfaceDataset {
    pub fn var(&self, name: &str) -> Option<&SurfaceVar> {
        self.vars.iter().find(|v| v.name == name)
    }

    /// Checks required variables and value invariants.
    pub fn validate(&self) -> Result<()> {
        for name in REQUIRED {
            if self.var(name).is_none() {
                return Err(Error::Surface(format!("missing required variable {name}")));
            }
        }
        for v in &self.vars {
            if v.name.starts_with("PCT_") && v.values.iter().any(|x| !(0.0..=100.0).contains(x)) {
                return Err(Error::Surface(format!("{} outside [0, 100]", v.name)));
            }
        }
        if self.var("MONTHLY_LAI").unwrap().values.iter().any(|&x| !(x >= 0.0)) {
            return Err(Error::Surface("MONTHLY_LAI must be nonnegative".into()));
        }
        let pft = self.var("PCT_PFT").unwrap();
        for k in 0..self.n_land {
            let sum: f64 = (0..N_PFTS).map(|p| pft.values[p * self.n_land + k]).sum();
            if (sum - 100.0).abs() > 1e-6 {
                return Err(Error::Surface(format!("PCT_PFT sums to {sum} at land cell {k}")));
            }
        }
        Ok(())
    }
}

fn renormalize_pft(values: &mut [f64], n_land: usize) {
    for k in 0..n_land {
        let sum: f64 = (0..N_PFTS).map(|p| values[p * n_land + k]).sum();
        if sum > 0.0 {
            for p in 0..N_PFTS {
                values[p * n_land + k] *= 100.0 / sum;
            }
        } else {
            values[k] = 100.0;
        }
        // Absorb the rounding residual in the largest share.
        let sum: f64 = (0..N_PFTS).map(|p| values[p * n_land + k]).sum();
        let top = (0..N_PFTS)
            .max_by(|&a, &b| values[a * n_land + k].total_cmp(&values[b * n_land + k]))
            .unwrap();
        values[top * n_land + k] += 100.0 - sum;
    }
}

/// Interpolates every source variable onto the domain's land cells.
pub fn build_surface(d: &DomainSpec, src: &CoarseGrid, methods: &BTreeMap<String, Method>) -> Result<SurfaceDataset> {
    let targets = d.land_lonlat()?;
    let n_land = d.n_land();
    let mut vars = Vec::new();
    for v in &src.vars {
        let method = *methods
            .get(&v.name)
            .ok_or_else(|| Error::Surface(format!("no interpolation method for {}", v.name)))?;
        let mut values = match method {
            Method::Nearest => interp_nearest(src, v, &targets)?,
            Method::Bilinear => interp_bilinear(src, v, &targets)?,
        };
        if v.name == "PCT_PFT" {
            for x in values.iter_mut() {
                *x = x.max(0.0);
            }
            renormalize_pft(&mut values, n_land);
        }
        if v.name.starts_with("PCT_") {
            for x in values.iter_mut() {
                *x = x.clamp(0.0, 100.0);
            }
        }
        if v.name == "MONTHLY_LAI" {
            for x in values.iter_mut() {
                *x = x.max(0.0);
            }
        }
        vars.push(SurfaceVar { name: v.name.clone(), extra_dims: v.extra_dims.clone(), values, method });
    }
    Ok(SurfaceDataset { n_land, vars })
}

/// The same method for every variable in `src`.
pub fn uniform_methods(src: &CoarseGrid, m: Method) -> BTreeMap<String, Method> {
    src.vars.iter().map(|v| (v.name.clone(), m)).collect()
}

/// 0.5° synthetic source covering `lat`/`lon` bounds plus one cell of margin:
/// the four required variables and any `extras` as plain 2D fields.
pub fn synth_coarse(seed: u64, lat: (f64, f64), lon: (f64, f64), extras: &[String]) -> Result<CoarseGrid> {
    let res = 0.5;
    let axis = |lo: f64, hi: f64| -> Vec<f64> {
        let start = (lo / res).floor() * res - res + res / 2.0;
        let n = (((hi - start) / res).ceil() as usize + 2).max(2);
        (0..n).map(|i| start + i as f64 * res).collect()
    };
    let mut g = CoarseGrid::new(axis(lat.0, lat.1), axis(lon.0, lon.1))?;
    let nc = g.n_cells();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clay: Vec<f64> = (0..N_LAYERS * nc).map(|_| rng.gen_range(5.0..60.0)).collect();
    let fmax: Vec<f64> = (0..nc).map(|_| rng.gen_range(0.0..0.6)).collect();
    let mut pft = vec![0.0; N_PFTS * nc];
    for c in 0..nc {
        let n_present = rng.gen_range(1..=5);
        let mut w = vec![0.0; N_PFTS];
        for _ in 0..n_present {
            w[rng.gen_range(0..N_PFTS)] += rng.gen_range(1.0..10.0);
        }
        let sum: f64 = w.iter().sum();
        for p in 0..N_PFTS {
            pft[p * nc + c] = 100.0 * w[p] / sum;
        }
    }
    let lai: Vec<f64> = (0..N_MONTHS * N_PFTS * nc)
        .map(|i| {
            let month = i / (N_PFTS * nc);
            let season = (std::f64::consts::PI * (month as f64 - 1.0) / 11.0).sin().max(0.0);
            season * rng.gen_range(0.5..4.0)
        })
        .collect();
    g.add_var("PCT_CLAY", &[("layer", N_LAYERS)], clay)?;
    g.add_var("FMAX", &[], fmax)?;
    g.add_var("PCT_PFT", &[("pft", N_PFTS)], pft)?;
    g.add_var("MONTHLY_LAI", &[("month", N_MONTHS), ("pft", N_PFTS)], lai)?;
    for name in extras {
        if g.var(name).is_some() {
            return Err(Error::Surface(format!("duplicate surface variable {name}")));
        }
        let vals = (0..nc).map(|_| rng.gen_range(0.0..1.0)).collect();
        g.add_var(name, &[], vals)?;
    }
    Ok(g)
}

/// Source grid around a domain's land cells.
pub fn synth_coarse_for(seed: u64, d: &DomainSpec, extras: &[String]) -> Result<CoarseGrid> {
    let pts = d.land_lonlat()?;
    let (mut lat0, mut lat1, mut lon0, mut lon1) = (90.0f64, -90.0f64, 180.0f64, -180.0f64);
    for &(lon, lat) in &pts {
        lat0 = lat0.min(lat);
        lat1 = lat1.max(lat);
        lon0 = lon0.min(lon);
        lon1 = lon1.max(lon);
    }
    synth_coarse(seed, (lat0, lat1), (lon0, lon1), extras)
}

impl SurfaceDataset {
    /// Surface file; with `two_d`, also `<NAME>_2d` on the domain grid
    /// with NaN over ocean.
    pub fn to_cdf(&self, d: &DomainSpec, two_d: bool) -> Result<(CdfFileModel, Vec<VarData>)> {
        let mut m = CdfFileModel::new(Variant::Cdf5);
        m.add_dim("gridcell", self.n_land as u64)?;
        m.add_dim("layer", N_LAYERS as u64)?;
        m.add_dim("pft", N_PFTS as u64)?;
        m.add_dim("month", N_MONTHS as u64)?;
        if two_d {
            m.add_dim("nj", d.grid().n_rows as u64)?;
            m.add_dim("ni", d.grid().n_cols as u64)?;
        }
        m.add_var("gridcell_id", NcType::Int64, &["gridcell"])?;
        let mut data = vec![VarData::Int64(d.land_index().to_vec())];
        for v in &self.vars {
            for (name, len) in &v.extra_dims {
                if m.dim_id(name).is_none() {
                    m.add_dim(name, *len as u64)?;
                }
            }
            let mut dims: Vec<&str> = v.extra_dims.iter().map(|d| d.0.as_str()).collect();
            dims.push("gridcell");
            m.add_var(&v.name, NcType::Double, &dims)?;
            m.put_var_attr(&v.name, "interp_method", AttrValue::Text(v.method.name().into()))?;
            data.push(VarData::Double(v.values.clone()));
        }
        if two_d {
            for v in &self.vars {
                let name = format!("{}_2d", v.name);
                let mut dims: Vec<&str> = v.extra_dims.iter().map(|d| d.0.as_str()).collect();
                dims.extend(["nj", "ni"]);
                m.add_var(&name, NcType::Double, &dims)?;
                m.put_var_attr(&name, "_FillValue", AttrValue::Double(vec![f64::NAN]))?;
                let mut full = Vec::with_capacity(v.values.len() / self.n_land * d.n_cells());
                for slice in v.values.chunks(self.n_land) {
                    full.extend(d.expand(slice, f64::NAN)?);
                }
                data.push(VarData::Double(full));
            }
        }
        Ok((m, data))
    }

    pub fn write(&self, d: &DomainSpec, path: &Path, two_d: bool) -> Result<()> {
        let (m, data) = self.to_cdf(d, two_d)?;
        let bytes = cdf5::write_file(&m, &data)?;
        std::fs::write(path, bytes).map_err(|e| Error::file(path, e))
    }
}
