//! Projected land domains: grid, mask, gridcell IDs, geometry and the
//! 2D to 1D land compaction map.
//!
//! Gridcell IDs are 0-based row-major (`id = row * n_cols + col`) and rows
//! increase northward. Geometry is evaluated lazily through a chain of
//! position maps back to the grid (or explicit arrays) it came from, so
//! subsets and replicas share their parent's coordinates bit for bit and
//! continental-size domains only cost the mask plus the land lists.

use std::collections::BTreeSet;
use std::ops::Add;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cdf5::{self, AttrValue, CdfFileModel, CdfReader, NcType, VarData, Variant};
use crate::geoproj::{GeoPoint, Lcc, LccParams, ProjPoint};
use crate::{Error, Result};

pub const ID_CONVENTION: &str = "0-based row-major: id = id_offset + row * id_row_stride + col";
pub const AREA_METHOD: &str = "projected plane: cell_size^2 in km^2, no ellipsoidal correction";

/// Regular square-cell grid on an LCC plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2D {
    pub n_rows: usize,
    pub n_cols: usize,
    /// Meters.
    pub cell_size: f64,
    /// Center of cell (0, 0), meters.
    pub origin_x: f64,
    pub origin_y: f64,
    pub lcc: LccParams,
}

impl Grid2D {
    pub fn new(
        n_rows: usize,
        n_cols: usize,
        cell_size: f64,
        origin_x: f64,
        origin_y: f64,
        lcc: LccParams,
    ) -> Result<Self> {
        let g = Grid2D { n_rows, n_cols, cell_size, origin_x, origin_y, lcc };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_rows == 0 || self.n_cols == 0 {
            return Err(Error::Domain("grid needs at least one row and column".into()));
        }
        if !(self.cell_size > 0.0 && self.cell_size.is_finite()) {
            return Err(Error::Domain(format!("cell_size must be positive, got {}", self.cell_size)));
        }
        if !self.origin_x.is_finite() || !self.origin_y.is_finite() {
            return Err(Error::Domain("grid origin must be finite".into()));
        }
        if self.n_rows.checked_mul(self.n_cols).is_none() {
            return Err(Error::Domain("grid cell count overflows".into()));
        }
        self.lcc.validate()
    }

    pub fn n_cells(&self) -> usize {
        self.n_rows * self.n_cols
    }

    pub fn center(&self, row: usize, col: usize) -> ProjPoint {
        ProjPoint::new(
            self.origin_x + col as f64 * self.cell_size,
            self.origin_y + row as f64 * self.cell_size,
        )
    }

    /// Cell area in km² on the projected plane.
    pub fn cell_area_km2(&self) -> f64 {
        let km = self.cell_size / 1000.0;
        km * km
    }
}

/// Affine gridcell numbering; subsets keep their parent's numbering.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IdMap {
    pub offset: i64,
    pub row_stride: i64,
}

impl IdMap {
    fn id(&self, row: usize, col: usize) -> i64 {
        self.offset + row as i64 * self.row_stride + col as i64
    }
}

/// Where geometry ultimately comes from.
#[derive(Debug)]
enum GeomSource {
    Grid { grid: Grid2D, lcc: Lcc },
    /// Read back from a file: per-cell centers and SW, SE, NE, NW corners.
    Arrays { n_cols: usize, xc: Vec<f64>, yc: Vec<f64>, xv: Vec<[f64; 4]>, yv: Vec<[f64; 4]> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PosOp {
    Shift { row: usize, col: usize },
    WrapRows(usize),
}

#[derive(Debug, Clone)]
struct Geometry {
    source: Arc<GeomSource>,
    /// Applied last-to-first to reach source coordinates.
    ops: Vec<PosOp>,
}

impl Geometry {
    fn to_source(&self, mut row: usize, mut col: usize) -> (usize, usize) {
        for op in self.ops.iter().rev() {
            match *op {
                PosOp::Shift { row: r0, col: c0 } => {
                    row += r0;
                    col += c0;
                }
                PosOp::WrapRows(n) => row %= n,
            }
        }
        (row, col)
    }

    fn center(&self, row: usize, col: usize) -> Result<(f64, f64)> {
        let (r, c) = self.to_source(row, col);
        match &*self.source {
            GeomSource::Grid { grid, lcc } => {
                let g = lcc.inverse(grid.center(r, c))?;
                Ok((g.lon, g.lat))
            }
            GeomSource::Arrays { n_cols, xc, yc, .. } => {
                let p = r * n_cols + c;
                Ok((xc[p], yc[p]))
            }
        }
    }

    fn corners(&self, row: usize, col: usize) -> Result<([f64; 4], [f64; 4])> {
        let (r, c) = self.to_source(row, col);
        match &*self.source {
            GeomSource::Grid { grid, lcc } => {
                let ctr = grid.center(r, c);
                let h = grid.cell_size / 2.0;
                let mut xv = [0.0; 4];
                let mut yv = [0.0; 4];
                let offs = [(-h, -h), (h, -h), (h, h), (-h, h)];
                for (k, (dx, dy)) in offs.into_iter().enumerate() {
                    let g = lcc.inverse(ProjPoint::new(ctr.x + dx, ctr.y + dy))?;
                    xv[k] = g.lon;
                    yv[k] = g.lat;
                }
                Ok((xv, yv))
            }
            GeomSource::Arrays { n_cols, xv, yv, .. } => {
                let p = r * n_cols + c;
                Ok((xv[p], yv[p]))
            }
        }
    }
}

/// Selects cells for [`subset`].
#[derive(Debug, Clone, PartialEq)]
pub enum Selector {
    /// Projected meters; cells whose centers fall inside (inclusive).
    BBox { x_min: f64, x_max: f64, y_min: f64, y_max: f64 },
    Ids(Vec<i64>),
}

/// A land domain. Immutable once built; clone-cheap geometry.
#[derive(Debug, Clone)]
pub struct DomainSpec {
    grid: Grid2D,
    mask: Vec<u8>,
    ids: IdMap,
    land_pos: Vec<usize>,
    land_index: Vec<i64>,
    source_id: Vec<i64>,
    copy: Vec<u32>,
    geom: Geometry,
}

fn check_mask_dims(grid: &Grid2D, mask: &[u8]) -> Result<()> {
    if mask.len() != grid.n_cells() {
        return Err(Error::Domain(format!(
            "mask has {} cells, grid is {}x{}",
            mask.len(),
            grid.n_rows,
            grid.n_cols
        )));
    }
    if let Some(v) = mask.iter().find(|&&m| m > 1) {
        return Err(Error::Domain(format!("mask values must be 0 or 1, found {v}")));
    }
    Ok(())
}

fn land_positions(mask: &[u8]) -> Result<Vec<usize>> {
    let pos: Vec<usize> = mask.iter().enumerate().filter(|(_, &m)| m == 1).map(|(i, _)| i).collect();
    if pos.is_empty() {
        return Err(Error::Domain("empty land domain".into()));
    }
    Ok(pos)
}

/// Builds a domain from a row-major mask (1 = land, lakes included).
pub fn build_domain(grid: Grid2D, mask: Vec<u8>) -> Result<DomainSpec> {
    grid.validate()?;
    check_mask_dims(&grid, &mask)?;
    if i64::try_from(grid.n_cells()).is_err() {
        return Err(Error::Domain("grid exceeds the gridcell ID space".into()));
    }
    let land_pos = land_positions(&mask)?;
    let ids = IdMap { offset: 0, row_stride: grid.n_cols as i64 };
    let land_index: Vec<i64> = land_pos.iter().map(|&p| p as i64).collect();
    let lcc = Lcc::new(grid.lcc)?;
    Ok(DomainSpec {
        source_id: land_index.clone(),
        copy: vec![0; land_pos.len()],
        geom: Geometry {
            source: Arc::new(GeomSource::Grid { grid: grid.clone(), lcc }),
            ops: Vec::new(),
        },
        grid,
        mask,
        ids,
        land_pos,
        land_index,
    })
}

impl DomainSpec {
    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn mask(&self) -> &[u8] {
        &self.mask
    }

    pub fn n_cells(&self) -> usize {
        self.grid.n_cells()
    }

    pub fn n_land(&self) -> usize {
        self.land_index.len()
    }

    /// Ascending global IDs of land cells: the 1D compaction map.
    pub fn land_index(&self) -> &[i64] {
        &self.land_index
    }

    /// Row-major positions of land cells in this grid.
    pub fn land_positions(&self) -> &[usize] {
        &self.land_pos
    }

    /// Root gridcell each land cell was replicated from.
    pub fn source_id(&self) -> &[i64] {
        &self.source_id
    }

    pub fn copy(&self) -> &[u32] {
        &self.copy
    }

    pub fn id_map(&self) -> IdMap {
        self.ids
    }

    pub fn gridcell_id(&self, pos: usize) -> i64 {
        self.ids.id(pos / self.grid.n_cols, pos % self.grid.n_cols)
    }

    pub fn frac(&self, pos: usize) -> f64 {
        if self.mask[pos] == 1 { 1.0 } else { 0.0 }
    }

    pub fn area(&self, _pos: usize) -> f64 {
        self.grid.cell_area_km2()
    }

    /// Center (lon, lat) in degrees.
    pub fn center_lonlat(&self, pos: usize) -> Result<(f64, f64)> {
        self.geom.center(pos / self.grid.n_cols, pos % self.grid.n_cols)
    }

    /// Corner (lons, lats), counterclockwise from the south-west corner.
    pub fn corners(&self, pos: usize) -> Result<([f64; 4], [f64; 4])> {
        self.geom.corners(pos / self.grid.n_cols, pos % self.grid.n_cols)
    }

    /// Land-cell centers as (lon, lat), in compaction order.
    pub fn land_lonlat(&self) -> Result<Vec<(f64, f64)>> {
        self.land_pos.iter().map(|&p| self.center_lonlat(p)).collect()
    }

    pub fn compact<T: Copy>(&self, field2d: &[T]) -> Result<Vec<T>> {
        if field2d.len() != self.n_cells() {
            return Err(Error::Domain(format!(
                "field has {} cells, domain grid has {}",
                field2d.len(),
                self.n_cells()
            )));
        }
        Ok(self.land_pos.iter().map(|&p| field2d[p]).collect())
    }

    pub fn expand<T: Copy>(&self, field1d: &[T], fill: T) -> Result<Vec<T>> {
        if field1d.len() != self.n_land() {
            return Err(Error::Domain(format!(
                "field has {} values, domain has {} land cells",
                field1d.len(),
                self.n_land()
            )));
        }
        let mut out = vec![fill; self.n_cells()];
        for (&p, &v) in self.land_pos.iter().zip(field1d) {
            out[p] = v;
        }
        Ok(out)
    }

    /// Content equality, independent of how geometry is represented.
    pub fn same_content(&self, other: &DomainSpec) -> Result<bool> {
        if self.grid != other.grid
            || self.mask != other.mask
            || self.land_index != other.land_index
            || self.source_id != other.source_id
            || self.copy != other.copy
        {
            return Ok(false);
        }
        for p in 0..self.n_cells() {
            if self.gridcell_id(p) != other.gridcell_id(p) {
                return Ok(false);
            }
            let (a, b) = (self.center_lonlat(p)?, other.center_lonlat(p)?);
            if a.0.to_bits() != b.0.to_bits() || a.1.to_bits() != b.1.to_bits() {
                return Ok(false);
            }
            let (a, b) = (self.corners(p)?, other.corners(p)?);
            let bits = |v: [f64; 4]| v.map(f64::to_bits);
            if bits(a.0) != bits(b.0) || bits(a.1) != bits(b.1) {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

/// Sub-domain over the bounding rectangle of the selected cells.
pub fn subset(d: &DomainSpec, sel: &Selector) -> Result<DomainSpec> {
    let g = &d.grid;
    let (r0, r1, c0, c1, keep): (usize, usize, usize, usize, Option<BTreeSet<usize>>) = match sel {
        Selector::BBox { x_min, x_max, y_min, y_max } => {
            // Centers are origin + k * cell_size; scan the axes directly so
            // membership matches a per-cell point-in-box test exactly.
            let cols: Vec<usize> = (0..g.n_cols)
                .filter(|&c| {
                    let x = g.center(0, c).x;
                    x >= *x_min && x <= *x_max
                })
                .collect();
            let rows: Vec<usize> = (0..g.n_rows)
                .filter(|&r| {
                    let y = g.center(r, 0).y;
                    y >= *y_min && y <= *y_max
                })
                .collect();
            match (rows.first(), rows.last(), cols.first(), cols.last()) {
                (Some(&a), Some(&b), Some(&c), Some(&e)) => (a, b, c, e, None),
                _ => return Err(Error::Domain("selector does not intersect the domain".into())),
            }
        }
        Selector::Ids(list) => {
            if list.is_empty() {
                return Err(Error::Domain("selector does not intersect the domain".into()));
            }
            let mut pos = BTreeSet::new();
            for &id in list {
                let rel = id - d.ids.offset;
                let ok = rel >= 0 && {
                    let (r, c) = (rel.div_euclid(d.ids.row_stride), rel.rem_euclid(d.ids.row_stride));
                    (r as usize) < g.n_rows && (c as usize) < g.n_cols
                };
                if !ok {
                    return Err(Error::Domain(format!("gridcell id {id} is not in the domain")));
                }
                let (r, c) = (rel / d.ids.row_stride, rel % d.ids.row_stride);
                pos.insert(r as usize * g.n_cols + c as usize);
            }
            let rows = pos.iter().map(|p| p / g.n_cols);
            let cols = pos.iter().map(|p| p % g.n_cols);
            let (r0, r1) = (rows.clone().min().unwrap(), rows.max().unwrap());
            let (c0, c1) = (cols.clone().min().unwrap(), cols.max().unwrap());
            (r0, r1, c0, c1, Some(pos))
        }
    };
    let (n_rows, n_cols) = (r1 - r0 + 1, c1 - c0 + 1);
    let mut mask = Vec::with_capacity(n_rows * n_cols);
    for r in r0..=r1 {
        for c in c0..=c1 {
            let p = r * g.n_cols + c;
            let selected = keep.as_ref().is_none_or(|k| k.contains(&p));
            mask.push(if selected { d.mask[p] } else { 0 });
        }
    }
    let land_pos = land_positions(&mask)?;
    let grid = Grid2D {
        n_rows,
        n_cols,
        cell_size: g.cell_size,
        origin_x: g.origin_x + c0 as f64 * g.cell_size,
        origin_y: g.origin_y + r0 as f64 * g.cell_size,
        lcc: g.lcc,
    };
    let ids = IdMap { offset: d.ids.id(r0, c0), row_stride: d.ids.row_stride };
    let parent_slot = |p: usize| {
        let parent = (r0 + p / n_cols) * g.n_cols + c0 + p % n_cols;
        d.land_pos.binary_search(&parent).expect("land cell of subset is land in parent")
    };
    let slots: Vec<usize> = land_pos.iter().map(|&p| parent_slot(p)).collect();
    let mut geom = d.geom.clone();
    if r0 != 0 || c0 != 0 {
        geom.ops.push(PosOp::Shift { row: r0, col: c0 });
    }
    Ok(DomainSpec {
        land_index: slots.iter().map(|&s| d.land_index[s]).collect(),
        source_id: slots.iter().map(|&s| d.source_id[s]).collect(),
        copy: slots.iter().map(|&s| d.copy[s]).collect(),
        grid,
        mask,
        ids,
        land_pos,
        geom,
    })
}

/// Stacks `k` copies of the domain as extra rows. Copy j of a cell keeps
/// the root `source_id`; nested replication composes (`copy = j * k_prev + copy_prev`).
pub fn replicate(d: &DomainSpec, k: usize) -> Result<DomainSpec> {
    if k == 0 {
        return Err(Error::Domain("replication factor must be at least 1".into()));
    }
    let n = d.n_cells();
    let overflow = || Error::Domain(format!("replicating {n} cells {k} times overflows the gridcell ID space"));
    let total = n.checked_mul(k).ok_or_else(overflow)?;
    let n_rows = d.grid.n_rows.checked_mul(k).ok_or_else(overflow)?;
    if i64::try_from(total).is_err() {
        return Err(overflow());
    }
    let prev_copies = d.copy.iter().map(|&c| c as u64 + 1).max().unwrap_or(1);
    if (k as u64).checked_mul(prev_copies).is_none_or(|v| v > u32::MAX as u64) {
        return Err(overflow());
    }
    let nl = d.n_land();
    let mut land_pos = Vec::with_capacity(nl * k);
    let mut source_id = Vec::with_capacity(nl * k);
    let mut copy = Vec::with_capacity(nl * k);
    let width = prev_copies as u32;
    for j in 0..k {
        land_pos.extend(d.land_pos.iter().map(|&p| j * n + p));
        source_id.extend_from_slice(&d.source_id);
        copy.extend(d.copy.iter().map(|&c| j as u32 * width + c));
    }
    let mut mask = Vec::with_capacity(total);
    for _ in 0..k {
        mask.extend_from_slice(&d.mask);
    }
    let mut geom = d.geom.clone();
    if k > 1 {
        geom.ops.push(PosOp::WrapRows(d.grid.n_rows));
    }
    let grid = Grid2D { n_rows, ..d.grid.clone() };
    Ok(DomainSpec {
        land_index: land_pos.iter().map(|&p| p as i64).collect(),
        ids: IdMap { offset: 0, row_stride: grid.n_cols as i64 },
        grid,
        mask,
        land_pos,
        source_id,
        copy,
        geom,
    })
}

/// Counts of the subgrid hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SubgridCensus {
    pub gridcells: u64,
    pub topounits: u64,
    pub landunits: u64,
    pub columns: u64,
    pub pfts: u64,
}

/// The Seward Peninsula reference case.
pub const AKSP_CENSUS: SubgridCensus = SubgridCensus {
    gridcells: 72_083,
    topounits: 72_083,
    landunits: 313_123,
    columns: 1_178_119,
    pfts: 2_331_447,
};

impl Add for SubgridCensus {
    type Output = SubgridCensus;

    fn add(self, o: SubgridCensus) -> SubgridCensus {
        SubgridCensus {
            gridcells: self.gridcells + o.gridcells,
            topounits: self.topounits + o.topounits,
            landunits: self.landunits + o.landunits,
            columns: self.columns + o.columns,
            pfts: self.pfts + o.pfts,
        }
    }
}

pub fn census(base: SubgridCensus, k: u64) -> SubgridCensus {
    SubgridCensus {
        gridcells: base.gridcells * k,
        topounits: base.topounits * k,
        landunits: base.landunits * k,
        columns: base.columns * k,
        pfts: base.pfts * k,
    }
}

/// Mask with exactly `n_land` cells: the highest values of a smooth seeded
/// field of Gaussian bumps, ties to the lower index.
pub fn synth_mask(n_rows: usize, n_cols: usize, n_land: usize, seed: u64) -> Result<Vec<u8>> {
    let n = n_rows * n_cols;
    if n_land == 0 || n_land > n {
        return Err(Error::Domain(format!("cannot place {n_land} land cells on a {n_rows}x{n_cols} grid")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bumps: Vec<(f64, f64, f64, f64)> = (0..6)
        .map(|_| {
            let r = rng.gen::<f64>() * n_rows as f64;
            let c = rng.gen::<f64>() * n_cols as f64;
            let s = (0.15 + 0.35 * rng.gen::<f64>()) * n_rows.max(n_cols) as f64;
            let a = 0.5 + rng.gen::<f64>();
            (r, c, s, a)
        })
        .collect();
    let field: Vec<f64> = (0..n)
        .map(|p| {
            let (r, c) = ((p / n_cols) as f64, (p % n_cols) as f64);
            bumps
                .iter()
                .map(|&(br, bc, s, a)| a * (-((r - br).powi(2) + (c - bc).powi(2)) / (2.0 * s * s)).exp())
                .sum()
        })
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    let by_value = |a: &usize, b: &usize| field[*b].total_cmp(&field[*a]).then(a.cmp(b));
    if n_land < n {
        order.select_nth_unstable_by(n_land - 1, by_value);
    }
    let mut mask = vec![0u8; n];
    for &p in &order[..n_land] {
        mask[p] = 1;
    }
    Ok(mask)
}

/// Daymet North America: 1 km cells, lower-left center.
pub const DAYMET_ORIGIN_X: f64 = -4_560_250.0;
pub const DAYMET_ORIGIN_Y: f64 = -3_090_500.0;
pub const DAYMET_COLS: usize = 7_814;
pub const DAYMET_ROWS: usize = 8_075;

pub const AKSP_MINI_SIDE: usize = 32;
pub const AKSP_MINI_LAND: usize = 613;
pub const AKSP_MINI_SEED: u64 = 20_240_331;

/// 32x32 synthetic stand-in for the Seward Peninsula case, 1 km cells
/// centered near 65N 164W.
pub fn aksp_mini() -> Result<DomainSpec> {
    let lcc = LccParams::default();
    let center = Lcc::new(lcc)?.forward(GeoPoint::new(65.0, -164.0))?;
    let half = (AKSP_MINI_SIDE as f64 - 1.0) / 2.0 * 1000.0;
    let grid = Grid2D::new(
        AKSP_MINI_SIDE,
        AKSP_MINI_SIDE,
        1000.0,
        (center.x / 1000.0).round() * 1000.0 - half,
        (center.y / 1000.0).round() * 1000.0 - half,
        lcc,
    )?;
    let mask = synth_mask(AKSP_MINI_SIDE, AKSP_MINI_SIDE, AKSP_MINI_LAND, AKSP_MINI_SEED)?;
    build_domain(grid, mask)
}

/// Daymet extent at 50 km with a synthetic mask over 40% of cells.
pub fn na_mini(seed: u64) -> Result<DomainSpec> {
    let (rows, cols) = (DAYMET_ROWS / 50, DAYMET_COLS / 50);
    let grid = Grid2D::new(rows, cols, 50_000.0, DAYMET_ORIGIN_X, DAYMET_ORIGIN_Y, LccParams::default())?;
    let mask = synth_mask(rows, cols, rows * cols * 2 / 5, seed)?;
    build_domain(grid, mask)
}

/// Grid from `make-domain` style inputs: land share of cells, seeded mask.
pub fn synthetic(rows: usize, cols: usize, cell_size: f64, land_fraction: f64, seed: u64) -> Result<DomainSpec> {
    if !(land_fraction > 0.0 && land_fraction <= 1.0) {
        return Err(Error::Domain(format!("land fraction must be in (0, 1], got {land_fraction}")));
    }
    let lcc = LccParams::default();
    let n_land = ((rows * cols) as f64 * land_fraction).round().max(1.0) as usize;
    let half_w = (cols as f64 - 1.0) / 2.0 * cell_size;
    let half_h = (rows as f64 - 1.0) / 2.0 * cell_size;
    let center = Lcc::new(lcc)?.forward(GeoPoint::new(65.0, -164.0))?;
    let grid = Grid2D::new(
        rows,
        cols,
        cell_size,
        (center.x / 1000.0).round() * 1000.0 - half_w,
        (center.y / 1000.0).round() * 1000.0 - half_h,
        lcc,
    )?;
    build_domain(grid, synth_mask(rows, cols, n_land, seed)?)
}

const LAND_VARS: [&str; 7] = [
    "land_gridcell_id",
    "land_xc",
    "land_yc",
    "land_area",
    "land_frac",
    "land_source_id",
    "land_copy",
];

impl DomainSpec {
    /// Domain file model and data (always CDF-5: IDs are 64-bit).
    pub fn to_cdf(&self) -> Result<(CdfFileModel, Vec<VarData>)> {
        let g = &self.grid;
        let mut m = CdfFileModel::new(Variant::Cdf5);
        m.add_dim("nj", g.n_rows as u64)?;
        m.add_dim("ni", g.n_cols as u64)?;
        m.add_dim("nv", 4)?;
        m.add_dim("gridcell", self.n_land() as u64)?;
        let grid2 = ["nj", "ni"];
        let corner = ["nv", "nj", "ni"];
        m.add_var("mask", NcType::Int, &grid2)?;
        for v in ["frac", "area", "xc", "yc"] {
            m.add_var(v, NcType::Double, &grid2)?;
        }
        m.add_var("xv", NcType::Double, &corner)?;
        m.add_var("yv", NcType::Double, &corner)?;
        m.add_var("gridcell_id", NcType::Int64, &grid2)?;
        m.add_var("land_gridcell_id", NcType::Int64, &["gridcell"])?;
        for v in ["land_xc", "land_yc", "land_area", "land_frac"] {
            m.add_var(v, NcType::Double, &["gridcell"])?;
        }
        m.add_var("land_source_id", NcType::Int64, &["gridcell"])?;
        m.add_var("land_copy", NcType::Int, &["gridcell"])?;

        let text = |s: &str| AttrValue::Text(s.to_string());
        for (v, units) in [
            ("area", "km^2"),
            ("land_area", "km^2"),
            ("xc", "degrees_east"),
            ("yc", "degrees_north"),
            ("xv", "degrees_east"),
            ("yv", "degrees_north"),
            ("land_xc", "degrees_east"),
            ("land_yc", "degrees_north"),
        ] {
            m.put_var_attr(v, "units", text(units))?;
        }
        m.put_var_attr("xv", "corner_order", text("SW SE NE NW"))?;
        m.put_var_attr("land_copy", "long_name", text("replica index of the source gridcell"))?;
        for (name, value) in g.lcc.to_pairs() {
            m.put_attr(name, AttrValue::Double(vec![value]))?;
        }
        m.put_attr("cell_size", AttrValue::Double(vec![g.cell_size]))?;
        m.put_attr("origin_x", AttrValue::Double(vec![g.origin_x]))?;
        m.put_attr("origin_y", AttrValue::Double(vec![g.origin_y]))?;
        m.put_attr("gridcell_id_convention", text(ID_CONVENTION))?;
        m.put_attr("id_offset", AttrValue::Int64(vec![self.ids.offset]))?;
        m.put_attr("id_row_stride", AttrValue::Int64(vec![self.ids.row_stride]))?;
        m.put_attr("area_method", text(AREA_METHOD))?;

        let n = self.n_cells();
        let mut xc = Vec::with_capacity(n);
        let mut yc = Vec::with_capacity(n);
        let mut xv = vec![0.0; 4 * n];
        let mut yv = vec![0.0; 4 * n];
        for p in 0..n {
            let (lon, lat) = self.center_lonlat(p)?;
            xc.push(lon);
            yc.push(lat);
            let (cx, cy) = self.corners(p)?;
            for k in 0..4 {
                xv[k * n + p] = cx[k];
                yv[k * n + p] = cy[k];
            }
        }
        let land_xc = self.compact(&xc)?;
        let land_yc = self.compact(&yc)?;
        let frac: Vec<f64> = (0..n).map(|p| self.frac(p)).collect();
        let area: Vec<f64> = (0..n).map(|p| self.area(p)).collect();
        let data = vec![
            VarData::Int(self.mask.iter().map(|&v| v as i32).collect()),
            VarData::Double(frac.clone()),
            VarData::Double(area.clone()),
            VarData::Double(xc),
            VarData::Double(yc),
            VarData::Double(xv),
            VarData::Double(yv),
            VarData::Int64((0..n).map(|p| self.gridcell_id(p)).collect()),
            VarData::Int64(self.land_index.clone()),
            VarData::Double(land_xc),
            VarData::Double(land_yc),
            VarData::Double(self.compact(&area)?),
            VarData::Double(self.compact(&frac)?),
            VarData::Int64(self.source_id.clone()),
            VarData::Int(self.copy.iter().map(|&c| c as i32).collect()),
        ];
        Ok((m, data))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let (m, data) = self.to_cdf()?;
        let bytes = cdf5::write_file(&m, &data)?;
        std::fs::write(path, bytes).map_err(|e| Error::file(path, e))
    }

    pub fn read(path: &Path) -> Result<DomainSpec> {
        let mut r = CdfReader::open(path)?;
        Self::from_reader(&mut r)
    }

    pub fn from_reader<R: std::io::Read + std::io::Seek>(r: &mut CdfReader<R>) -> Result<DomainSpec> {
        let m = r.model().clone();
        let num = |name: &str| {
            m.attr(name)
                .and_then(AttrValue::as_f64)
                .ok_or_else(|| Error::Domain(format!("domain file lacks attribute {name}")))
        };
        let int = |name: &str| {
            m.attr(name)
                .and_then(AttrValue::as_i64)
                .ok_or_else(|| Error::Domain(format!("domain file lacks attribute {name}")))
        };
        let dim = |name: &str| {
            m.dim_id(name)
                .map(|id| m.dim_len(id) as usize)
                .ok_or_else(|| Error::Domain(format!("domain file lacks dimension {name}")))
        };
        let lcc = LccParams::from_lookup(|name| m.attr(name).and_then(AttrValue::as_f64))?;
        let grid = Grid2D::new(
            dim("nj")?,
            dim("ni")?,
            num("cell_size")?,
            num("origin_x")?,
            num("origin_y")?,
            lcc,
        )?;
        let ids = IdMap { offset: int("id_offset")?, row_stride: int("id_row_stride")? };
        let n = grid.n_cells();
        let mask: Vec<u8> = match r.read_var("mask")? {
            VarData::Int(v) => v.into_iter().map(|x| x as u8).collect(),
            _ => return Err(Error::Domain("mask must be int".into())),
        };
        check_mask_dims(&grid, &mask)?;
        let land_pos = land_positions(&mask)?;
        let f64s = |r: &mut CdfReader<R>, name: &str| -> Result<Vec<f64>> {
            match r.read_var(name)? {
                VarData::Double(v) => Ok(v),
                _ => Err(Error::Domain(format!("{name} must be double"))),
            }
        };
        let i64s = |r: &mut CdfReader<R>, name: &str| -> Result<Vec<i64>> {
            match r.read_var(name)? {
                VarData::Int64(v) => Ok(v),
                _ => Err(Error::Domain(format!("{name} must be int64"))),
            }
        };
        let gid = i64s(r, "gridcell_id")?;
        for (p, &id) in gid.iter().enumerate() {
            if id != ids.id(p / grid.n_cols, p % grid.n_cols) {
                return Err(Error::Domain(format!("gridcell_id at cell {p} breaks the id convention")));
            }
        }
        let land_index = i64s(r, "land_gridcell_id")?;
        let expect: Vec<i64> = land_pos.iter().map(|&p| gid[p]).collect();
        if land_index != expect {
            return Err(Error::Domain("land_gridcell_id does not match the mask".into()));
        }
        let source_id = i64s(r, "land_source_id")?;
        let copy: Vec<u32> = match r.read_var("land_copy")? {
            VarData::Int(v) => v.into_iter().map(|c| c as u32).collect(),
            _ => return Err(Error::Domain("land_copy must be int".into())),
        };
        if source_id.len() != land_pos.len() || copy.len() != land_pos.len() {
            return Err(Error::Domain("land provenance arrays have the wrong length".into()));
        }
        let xc = f64s(r, "xc")?;
        let yc = f64s(r, "yc")?;
        let xv_flat = f64s(r, "xv")?;
        let yv_flat = f64s(r, "yv")?;
        let corners = |flat: &[f64]| -> Vec<[f64; 4]> {
            (0..n).map(|p| [flat[p], flat[n + p], flat[2 * n + p], flat[3 * n + p]]).collect()
        };
        let source = GeomSource::Arrays {
            n_cols: grid.n_cols,
            xv: corners(&xv_flat),
            yv: corners(&yv_flat),
            xc,
            yc,
        };
        for v in LAND_VARS {
            if m.var(v).is_none() {
                return Err(Error::Domain(format!("domain file lacks variable {v}")));
            }
        }
        Ok(DomainSpec {
            grid,
            mask,
            ids,
            land_pos,
            land_index,
            source_id,
            copy,
            geom: Geometry { source: Arc::new(source), ops: Vec::new() },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(rows: usize, cols: usize, mask: Vec<u8>) -> DomainSpec {
        let grid = Grid2D::new(rows, cols, 1000.0, -2_000_000.0, 2_500_000.0, LccParams::default()).unwrap();
        build_domain(grid, mask).unwrap()
    }

    #[test]
    fn two_by_two() {
        let d = tiny(2, 2, vec![1, 0, 0, 1]);
        assert_eq!(d.land_index(), &[0, 3]);
        assert_eq!(d.n_land(), 2);
        assert_eq!(d.compact(&['a', 'b', 'c', 'd']).unwrap(), vec!['a', 'd']);
        assert_eq!(d.frac(1), 0.0);
        assert_eq!(d.area(0), 1.0);
    }

    #[test]
    fn all_water_rejected() {
        let grid = Grid2D::new(2, 2, 1000.0, 0.0, 0.0, LccParams::default()).unwrap();
        let err = build_domain(grid, vec![0; 4]).unwrap_err();
        assert!(err.to_string().contains("empty land domain"));
    }

    #[test]
    fn all_land_compaction_is_flattening() {
        let d = tiny(3, 4, vec![1; 12]);
        let f: Vec<i32> = (0..12).collect();
        assert_eq!(d.compact(&f).unwrap(), f);
    }

    #[test]
    fn compact_expand_round_trip() {
        let mask = synth_mask(16, 16, 100, 3).unwrap();
        let d = tiny(16, 16, mask.clone());
        let f: Vec<f64> = (0..256).map(|i| i as f64 * 0.5).collect();
        let back = d.expand(&d.compact(&f).unwrap(), f64::NAN).unwrap();
        for p in 0..256 {
            if mask[p] == 1 {
                assert_eq!(back[p], f[p]);
            } else {
                assert!(back[p].is_nan());
            }
        }
        assert!(d.compact(&f[..10]).is_err());
        assert!(d.expand(&[1.0], 0.0).is_err());
    }

    #[test]
    fn ocean_row_stays_fill() {
        let d = tiny(2, 3, vec![0, 0, 0, 1, 1, 0]);
        let e = d.expand(&[7, 8], -1).unwrap();
        assert_eq!(&e[..3], &[-1, -1, -1]);
    }

    #[test]
    fn aksp_mini_counts() {
        let d = aksp_mini().unwrap();
        assert_eq!(d.n_cells(), 1024);
        let bits = d.mask().iter().filter(|&&m| m == 1).count();
        assert_eq!(bits, 613);
        assert_eq!(d.compact(&vec![0u8; 1024]).unwrap().len(), 613);
        let (lon, lat) = d.center_lonlat(16 * 32 + 16).unwrap();
        assert!((lat - 65.0).abs() < 0.2 && (lon + 164.0).abs() < 0.4, "{lat} {lon}");
    }

    fn inside_quad(px: f64, py: f64, xv: [f64; 4], yv: [f64; 4]) -> bool {
        (0..4).all(|k| {
            let (ax, ay, bx, by) = (xv[k], yv[k], xv[(k + 1) % 4], yv[(k + 1) % 4]);
            (bx - ax) * (py - ay) - (by - ay) * (px - ax) > 0.0
        })
    }

    #[test]
    fn corners_enclose_centers() {
        let d = aksp_mini().unwrap();
        for p in 0..d.n_cells() {
            let (x, y) = d.center_lonlat(p).unwrap();
            let (xv, yv) = d.corners(p).unwrap();
            assert!(inside_quad(x, y, xv, yv), "cell {p}");
        }
    }

    #[test]
    fn ids_unique_and_in_range() {
        let d = aksp_mini().unwrap();
        let ids: BTreeSet<i64> = (0..d.n_cells()).map(|p| d.gridcell_id(p)).collect();
        assert_eq!(ids.len(), d.n_cells());
        assert_eq!(*ids.iter().next().unwrap(), 0);
        assert_eq!(*ids.iter().last().unwrap(), 1023);
    }

    #[test]
    fn subset_full_bbox_is_identity() {
        let d = aksp_mini().unwrap();
        let g = d.grid();
        let sel = Selector::BBox {
            x_min: g.origin_x,
            x_max: g.origin_x + 31.0 * g.cell_size,
            y_min: g.origin_y,
            y_max: g.origin_y + 31.0 * g.cell_size,
        };
        let s = subset(&d, &sel).unwrap();
        assert!(s.same_content(&d).unwrap());
    }

    #[test]
    fn subset_single_id() {
        let d = tiny(3, 3, vec![1, 1, 0, 0, 1, 0, 1, 0, 1]);
        let s = subset(&d, &Selector::Ids(vec![4])).unwrap();
        assert_eq!(s.n_cells(), 1);
        assert_eq!(s.land_index(), &[4]);
        assert_eq!(s.gridcell_id(0), 4);
        assert_eq!(s.center_lonlat(0).unwrap(), d.center_lonlat(4).unwrap());
        assert!(subset(&d, &Selector::Ids(vec![99])).is_err());
        assert!(subset(&d, &Selector::Ids(vec![2])).is_err());
    }

    #[test]
    fn subset_bbox_matches_brute_force() {
        let na = na_mini(11).unwrap();
        let lcc = Lcc::new(LccParams::default()).unwrap();
        let lo = lcc.forward(GeoPoint::new(63.5, -168.0)).unwrap();
        let hi = lcc.forward(GeoPoint::new(66.5, -160.0)).unwrap();
        let sel = Selector::BBox {
            x_min: lo.x.min(hi.x),
            x_max: lo.x.max(hi.x),
            y_min: lo.y.min(hi.y),
            y_max: lo.y.max(hi.y),
        };
        let Selector::BBox { x_min, x_max, y_min, y_max } = sel else { unreachable!() };
        let g = na.grid();
        let mut inside = Vec::new();
        for r in 0..g.n_rows {
            for c in 0..g.n_cols {
                let p = g.center(r, c);
                if p.x >= x_min && p.x <= x_max && p.y >= y_min && p.y <= y_max {
                    inside.push(r * g.n_cols + c);
                }
            }
        }
        let land: Vec<i64> = inside.iter().filter(|&&p| na.mask()[p] == 1).map(|&p| p as i64).collect();
        match subset(&na, &sel) {
            Ok(s) => {
                assert_eq!(s.n_cells(), inside.len());
                let ids: Vec<i64> = (0..s.n_cells()).map(|p| s.gridcell_id(p)).collect();
                assert_eq!(ids, inside.iter().map(|&p| p as i64).collect::<Vec<_>>());
                assert_eq!(s.land_index(), &land[..]);
            }
            Err(e) => assert!(land.is_empty(), "{e}"),
        }
    }

    #[test]
    fn replicate_one_is_identity() {
        let d = aksp_mini().unwrap();
        let r = replicate(&d, 1).unwrap();
        assert!(r.same_content(&d).unwrap());
        assert!(replicate(&d, 0).is_err());
    }

    #[test]
    fn replicate_layout_and_provenance() {
        let d = tiny(2, 2, vec![1, 0, 1, 1]);
        let r = replicate(&d, 3).unwrap();
        assert_eq!(r.n_land(), 9);
        assert_eq!(r.land_index(), &[0, 2, 3, 4, 6, 7, 8, 10, 11]);
        assert_eq!(r.source_id(), &[0, 2, 3, 0, 2, 3, 0, 2, 3]);
        assert_eq!(r.copy(), &[0, 0, 0, 1, 1, 1, 2, 2, 2]);
        assert_eq!(r.center_lonlat(6).unwrap(), d.center_lonlat(2).unwrap());
    }

    #[test]
    fn replicate_composes() {
        let d = aksp_mini().unwrap();
        let ab = replicate(&d, 6).unwrap();
        let a_b = replicate(&replicate(&d, 2).unwrap(), 3).unwrap();
        assert!(ab.same_content(&a_b).unwrap());
    }

    #[test]
    fn replicate_overflow() {
        let d = tiny(2, 2, vec![1; 4]);
        assert!(replicate(&d, usize::MAX / 2).is_err());
    }

    #[test]
    fn census_scales_and_is_linear() {
        let x = census(AKSP_CENSUS, 300);
        assert_eq!(x.pfts, 699_434_100);
        assert_eq!(x.landunits, 93_936_900);
        assert_eq!(x.gridcells, 21_624_900);
        assert_eq!(x.columns, 353_435_700);
        assert_eq!(census(AKSP_CENSUS, 1), AKSP_CENSUS);
        assert_eq!(census(AKSP_CENSUS, 7), census(AKSP_CENSUS, 3) + census(AKSP_CENSUS, 4));
    }

    #[test]
    fn synth_mask_is_deterministic() {
        assert_eq!(synth_mask(20, 30, 250, 5).unwrap(), synth_mask(20, 30, 250, 5).unwrap());
        assert_ne!(synth_mask(20, 30, 250, 5).unwrap(), synth_mask(20, 30, 250, 6).unwrap());
        assert!(synth_mask(2, 2, 5, 0).is_err());
    }

    #[test]
    fn file_round_trip() {
        let d = replicate(&aksp_mini().unwrap(), 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("domain.nc");
        d.write(&path).unwrap();
        let back = DomainSpec::read(&path).unwrap();
        assert!(back.same_content(&d).unwrap());
        let (m, _) = d.to_cdf().unwrap();
        assert_eq!(m.vars.len(), 15);
        assert_eq!(m.attr("gridcell_id_convention").unwrap().as_text(), Some(ID_CONVENTION));
    }
}
