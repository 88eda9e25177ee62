//! Atmospheric forcing: daily to 3-hourly downscaling, synthetic inputs,
//! monthly files and timestep interpolation for the data atmosphere.

use std::collections::HashMap;
use std::fmt;
use std::io::BufReader;
use std::fs::File;
use std::path::{Path, PathBuf};

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cdf5::{self, AttrValue, CdfFileModel, CdfReader, NcType, VarData, Variant};
use crate::domain::DomainSpec;
use crate::{Error, Result};

pub const STEPS_PER_DAY: usize = 8;
pub const RECORD_HOURS: i64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DownscaleMode {
    Additive,
    Multiplicative,
    SumPreserving,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InterpMode {
    Linear,
    /// Left-closed: a record holds for `[t_k, t_k + 3h)`.
    Nearest,
}

/// The seven standard forcing variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ForcingVar {
    Tbot,
    Prect,
    Fsds,
    Flds,
    Qbot,
    Wind,
    Psrf,
}

impl ForcingVar {
    pub const ALL: [ForcingVar; 7] = [
        ForcingVar::Tbot,
        ForcingVar::Prect,
        ForcingVar::Fsds,
        ForcingVar::Flds,
        ForcingVar::Qbot,
        ForcingVar::Wind,
        ForcingVar::Psrf,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ForcingVar::Tbot => "TBOT",
            ForcingVar::Prect => "PRECT",
            ForcingVar::Fsds => "FSDS",
            ForcingVar::Flds => "FLDS",
            ForcingVar::Qbot => "QBOT",
            ForcingVar::Wind => "WIND",
            ForcingVar::Psrf => "PSRF",
        }
    }

    /// Units of the 3-hourly records.
    pub fn units(self) -> &'static str {
        match self {
            ForcingVar::Tbot => "K",
            ForcingVar::Prect => "mm/3h",
            ForcingVar::Fsds | ForcingVar::Flds => "W/m2",
            ForcingVar::Qbot => "kg/kg",
            ForcingVar::Wind => "m/s",
            ForcingVar::Psrf => "Pa",
        }
    }

    pub fn downscale_mode(self) -> DownscaleMode {
        match self {
            ForcingVar::Tbot | ForcingVar::Psrf => DownscaleMode::Additive,
            ForcingVar::Prect => DownscaleMode::SumPreserving,
            _ => DownscaleMode::Multiplicative,
        }
    }

    pub fn interp_mode(self) -> InterpMode {
        match self {
            ForcingVar::Prect => InterpMode::Nearest,
            _ => InterpMode::Linear,
        }
    }

    /// File group, as in the `forcing_<group>_<YYYY>-<MM>.nc` naming.
    pub fn group(self) -> &'static str {
        match self {
            ForcingVar::Fsds => "Solr",
            ForcingVar::Prect => "Prec",
            _ => "TPQWL",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == name)
    }
}

impl fmt::Display for ForcingVar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub const GROUPS: [&str; 3] = ["Solr", "Prec", "TPQWL"];

pub fn group_vars(group: &str) -> Vec<ForcingVar> {
    ForcingVar::ALL.into_iter().filter(|v| v.group() == group).collect()
}

fn exponent(x: f64) -> i32 {
    // floor(log2(x)) for positive normal x
    ((x.to_bits() >> 52) & 0x7ff) as i32 - 1023
}

fn additive(daily: f64, shape: &[f64; 8]) -> [f64; 8] {
    let mean = shape.iter().sum::<f64>() / 8.0;
    let anom = shape.map(|s| s - mean);
    let plain = anom.map(|a| daily + a);
    let bound = 16.0 * (daily.abs() + anom.iter().fold(0.0f64, |m, a| m.max(a.abs())));
    if bound == 0.0 || !bound.is_normal() {
        return plain;
    }
    // Quantum q: every partial sum of outputs below `bound` is exact in f64.
    let q = 2f64.powi(exponent(bound) - 52);
    let base = (daily / q).floor() * q;
    let lo = daily - base;
    let s = 8.0 * lo / q;
    if s.fract() != 0.0 || s.abs() > 1e15 {
        // Input carries more precision than the quantum; best effort.
        return plain;
    }
    let target = s as i64;
    let raw = anom.map(|a| (a + lo) / q);
    let mut k = raw.map(|r| r.round() as i64);
    let mut diff = target - k.iter().sum::<i64>();
    // Hand the rounding deficit to the entries whose rounding moved them
    // furthest in the opposite direction; ties go to the lower index.
    while diff != 0 {
        let step = diff.signum();
        let pick = (0..8)
            .max_by(|&a, &b| {
                let ra = (raw[a] - k[a] as f64) * step as f64;
                let rb = (raw[b] - k[b] as f64) * step as f64;
                ra.total_cmp(&rb).then(b.cmp(&a))
            })
            .unwrap();
        k[pick] += step;
        diff -= step;
    }
    k.map(|ki| base + ki as f64 * q)
}

/// Spreads a daily value over eight 3-hourly steps following `shape`.
///
/// Additive output is quantized so its mean equals `daily` exactly whenever
/// `daily` has at most 49 significant bits (any f32 input qualifies).
pub fn downscale_day(daily: f64, shape: &[f64; 8], mode: DownscaleMode) -> Result<[f64; 8]> {
    if daily.is_nan() || shape.iter().any(|s| s.is_nan()) {
        return Err(Error::Forcing("NaN in downscaling input".into()));
    }
    if !daily.is_finite() || shape.iter().any(|s| !s.is_finite()) {
        return Err(Error::Forcing("non-finite downscaling input".into()));
    }
    if mode != DownscaleMode::Additive && shape.iter().any(|&s| s < 0.0) {
        return Err(Error::Forcing(format!("{mode:?} shape must be nonnegative")));
    }
    Ok(match mode {
        DownscaleMode::Additive => additive(daily, shape),
        DownscaleMode::Multiplicative => {
            let mean = shape.iter().sum::<f64>() / 8.0;
            if mean == 0.0 {
                [daily; 8]
            } else {
                shape.map(|s| daily * s / mean)
            }
        }
        DownscaleMode::SumPreserving => {
            let sum: f64 = shape.iter().sum();
            if sum == 0.0 {
                [daily / 8.0; 8]
            } else {
                shape.map(|s| daily * s / sum)
            }
        }
    })
}

pub fn days_in_month(year: i32, month: u32) -> u32 {
    let first = NaiveDate::from_ymd_opt(year, month, 1).expect("valid month");
    let next = if month == 12 {
        NaiveDate::from_ymd_opt(year + 1, 1, 1)
    } else {
        NaiveDate::from_ymd_opt(year, month + 1, 1)
    }
    .expect("valid month");
    (next - first).num_days() as u32
}

pub fn month_start(year: i32, month: u32) -> NaiveDateTime {
    NaiveDate::from_ymd_opt(year, month, 1)
        .expect("valid month")
        .and_hms_opt(0, 0, 0)
        .unwrap()
}

/// A run of whole days starting at midnight.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Period {
    pub start: NaiveDate,
    pub n_days: u32,
}

impl Period {
    pub fn new(start: NaiveDate, n_days: u32) -> Result<Self> {
        if n_days == 0 {
            return Err(Error::Forcing("empty period".into()));
        }
        Ok(Period { start, n_days })
    }

    /// Months needed to interpolate every hour in the period, including the
    /// record at the closing instant.
    pub fn months(&self) -> Vec<(i32, u32)> {
        let end = self.start + Duration::days(self.n_days as i64);
        let mut out = Vec::new();
        let (mut y, mut m) = (self.start.year(), self.start.month());
        loop {
            out.push((y, m));
            if (y, m) == (end.year(), end.month()) {
                break;
            }
            (y, m) = if m == 12 { (y + 1, 1) } else { (y, m + 1) };
        }
        out
    }
}

/// Sub-daily shapes for one day, one per variable.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeProfile {
    pub date: NaiveDate,
    pub shapes: [[f64; 8]; 7],
    pub source: String,
}

/// Daily values for one month: `values[var][day][cell]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DailyMonth {
    pub year: i32,
    pub month: u32,
    pub values: Vec<Vec<Vec<f64>>>,
    pub profiles: Vec<ShapeProfile>,
}

/// Downscaled, land-compacted forcing for one month. Values are kept in
/// double precision here and stored as single precision in files;
/// layout is `values[var][step * n_land + k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForcingMonth {
    pub year: i32,
    pub month: u32,
    pub n_land: usize,
    pub land_ids: Vec<i64>,
    pub values: Vec<Vec<f64>>,
}

impl ForcingMonth {
    pub fn n_steps(&self) -> usize {
        days_in_month(self.year, self.month) as usize * STEPS_PER_DAY
    }

    /// Hours since the first of the month.
    pub fn time_axis(&self) -> Vec<f64> {
        (0..self.n_steps()).map(|i| (i as i64 * RECORD_HOURS) as f64).collect()
    }

    pub fn get(&self, var: ForcingVar, step: usize, k: usize) -> f64 {
        self.values[var.index()][step * self.n_land + k]
    }
}

/// Downscales a month of daily fields (on the domain grid) and compacts
/// to land cells. Compaction runs first, so ocean cells may hold NaN.
pub fn downscale_month(daily: &DailyMonth, d: &DomainSpec) -> Result<ForcingMonth> {
    let nd = days_in_month(daily.year, daily.month) as usize;
    if daily.values.len() != 7 {
        return Err(Error::Forcing(format!("expected 7 variables, got {}", daily.values.len())));
    }
    for (v, days) in ForcingVar::ALL.iter().zip(&daily.values) {
        if days.len() != nd {
            return Err(Error::Forcing(format!(
                "{v}: missing day {} of {}-{:02}",
                days.len() + 1,
                daily.year,
                daily.month
            )));
        }
    }
    if daily.profiles.len() != nd {
        return Err(Error::Forcing(format!(
            "shape profile missing for day {} of {}-{:02}",
            daily.profiles.len() + 1,
            daily.year,
            daily.month
        )));
    }
    let n_land = d.n_land();
    let mut values = vec![vec![0.0; nd * STEPS_PER_DAY * n_land]; 7];
    for var in ForcingVar::ALL {
        let out = &mut values[var.index()];
        for day in 0..nd {
            let land = d.compact(&daily.values[var.index()][day])?;
            let shape = &daily.profiles[day].shapes[var.index()];
            for (k, &dv) in land.iter().enumerate() {
                let steps = downscale_day(dv, shape, var.downscale_mode()).map_err(|e| {
                    Error::Forcing(format!("{var} land cell {k} day {}: {e}", day + 1))
                })?;
                for (s, v) in steps.into_iter().enumerate() {
                    out[(day * STEPS_PER_DAY + s) * n_land + k] = v;
                }
            }
        }
    }
    Ok(ForcingMonth {
        year: daily.year,
        month: daily.month,
        n_land,
        land_ids: d.land_index().to_vec(),
        values,
    })
}

// ---------------------------------------------------------------------------
// Synthetic generator

const PROFILE_KEY: i64 = -1;

fn day_number(date: NaiveDate) -> i64 {
    date.num_days_from_ce() as i64
}

fn keyed_rng(seed: u64, key: i64, day: i64, tag: u64) -> ChaCha8Rng {
    let mut k = [0u8; 32];
    k[..8].copy_from_slice(&seed.to_le_bytes());
    k[8..16].copy_from_slice(&key.to_le_bytes());
    k[16..24].copy_from_slice(&day.to_le_bytes());
    k[24..].copy_from_slice(&tag.to_le_bytes());
    ChaCha8Rng::from_seed(k)
}

fn f32r(x: f64) -> f64 {
    x as f32 as f64
}

fn seasonal(date: NaiveDate) -> f64 {
    let doy = date.ordinal0() as f64;
    (2.0 * std::f64::consts::PI * (doy - 110.0) / 365.0).sin()
}

/// Daily values of all seven variables for one cell. Keyed on the cell's
/// source ID so replicated cells receive identical forcing.
pub fn synth_daily_cell(seed: u64, source_id: i64, date: NaiveDate) -> [f64; 7] {
    let mut cell = keyed_rng(seed, source_id, 0, 1);
    let t_off = cell.gen_range(-5.0..5.0);
    let p_off = cell.gen_range(-1500.0..1500.0);
    let wet = cell.gen_range(0.3..0.5);
    let mut r = keyed_rng(seed, source_id, day_number(date), 2);
    let s = seasonal(date);
    let sun = 0.5 + 0.5 * s;
    let tbot = 266.0 + 18.0 * s + t_off + r.gen_range(-4.0..4.0);
    let prect = if r.gen::<f64>() < wet {
        (-r.gen::<f64>().max(1e-12).ln() * 4.0).min(60.0)
    } else {
        0.0
    };
    let cloud = r.gen_range(0.4..1.0);
    let fsds = 20.0 + 180.0 * sun * cloud;
    let flds = 220.0 + 60.0 * sun + r.gen_range(-20.0..20.0);
    let qbot = 0.001 + 0.007 * sun * r.gen_range(0.5..1.0);
    let wind = r.gen_range(1.0..8.0);
    let psrf = 100_000.0 + p_off + r.gen_range(-500.0..500.0);
    [tbot, prect, fsds, flds, qbot, wind, psrf].map(f32r)
}

/// Domain-wide sub-daily shapes for one day. Steps are 00, 03, ... 21 h.
pub fn synth_profile(seed: u64, date: NaiveDate) -> ShapeProfile {
    use std::f64::consts::PI;
    let mut r = keyed_rng(seed, PROFILE_KEY, day_number(date), 3);
    let hour = |i: usize| (i * 3) as f64;
    let amp = r.gen_range(3.0..8.0);
    let tbot = std::array::from_fn(|i| -amp * (2.0 * PI * (hour(i) - 15.0) / 24.0).cos());
    let fsds = std::array::from_fn(|i| {
        let v = (PI * (hour(i) - 7.0) / 12.0).sin();
        if v > 0.0 { v * r.gen_range(0.8..1.2) } else { 0.0 }
    });
    let prect = std::array::from_fn(|_| {
        if r.gen::<f64>() < 0.5 { 0.0 } else { r.gen_range(0.0..1.0) }
    });
    let flds = std::array::from_fn(|i| 1.0 + 0.1 * (2.0 * PI * (hour(i) - 9.0) / 24.0).sin());
    let qbot = std::array::from_fn(|i| 1.0 + 0.05 * (2.0 * PI * (hour(i) - 9.0) / 24.0).sin());
    let wind = std::array::from_fn(|_| r.gen_range(0.7..1.3));
    let psrf = std::array::from_fn(|i| 50.0 * (4.0 * PI * hour(i) / 24.0).cos());
    let mut shapes = [[0.0; 8]; 7];
    shapes[ForcingVar::Tbot.index()] = tbot;
    shapes[ForcingVar::Prect.index()] = prect;
    shapes[ForcingVar::Fsds.index()] = fsds;
    shapes[ForcingVar::Flds.index()] = flds;
    shapes[ForcingVar::Qbot.index()] = qbot;
    shapes[ForcingVar::Wind.index()] = wind;
    shapes[ForcingVar::Psrf.index()] = psrf;
    ShapeProfile { date, shapes, source: "synthetic-gswp3-like".into() }
}

/// Daily fields on the domain grid (ocean cells NaN) plus profiles, for
/// every month the period touches.
pub fn synth_forcing(seed: u64, d: &DomainSpec, period: &Period) -> Result<Vec<DailyMonth>> {
    let mut cell_source = vec![None; d.n_cells()];
    for (&p, &s) in d.land_positions().iter().zip(d.source_id()) {
        cell_source[p] = Some(s);
    }
    let mut out = Vec::new();
    for (year, month) in period.months() {
        let nd = days_in_month(year, month);
        let mut values = vec![Vec::with_capacity(nd as usize); 7];
        let mut profiles = Vec::new();
        for day in 1..=nd {
            let date = NaiveDate::from_ymd_opt(year, month, day).unwrap();
            let mut fields = vec![vec![f64::NAN; d.n_cells()]; 7];
            for (p, src) in cell_source.iter().enumerate() {
                if let Some(s) = *src {
                    for (v, x) in synth_daily_cell(seed, s, date).into_iter().enumerate() {
                        fields[v][p] = x;
                    }
                }
            }
            for (v, f) in fields.into_iter().enumerate() {
                values[v].push(f);
            }
            profiles.push(synth_profile(seed, date));
        }
        out.push(DailyMonth { year, month, values, profiles });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Files

pub fn file_name(group: &str, year: i32, month: u32) -> String {
    format!("forcing_{group}_{year:04}-{month:02}.nc")
}

/// One group file of a month (single precision values).
pub fn month_group_cdf(fm: &ForcingMonth, group: &str) -> Result<(CdfFileModel, Vec<VarData>)> {
    let vars = group_vars(group);
    if vars.is_empty() {
        return Err(Error::Forcing(format!("unknown forcing group {group}")));
    }
    let mut m = CdfFileModel::new(Variant::Cdf5);
    m.add_record_dim("time")?;
    m.add_dim("gridcell", fm.n_land as u64)?;
    m.add_var("time", NcType::Double, &["time"])?;
    m.put_var_attr(
        "time",
        "units",
        AttrValue::Text(format!("hours since {:04}-{:02}-01 00:00:00", fm.year, fm.month)),
    )?;
    m.put_var_attr("time", "calendar", AttrValue::Text("gregorian".into()))?;
    m.add_var("gridcell_id", NcType::Int64, &["gridcell"])?;
    let mut data = vec![VarData::Double(fm.time_axis()), VarData::Int64(fm.land_ids.clone())];
    for v in &vars {
        m.add_var(v.name(), NcType::Float, &["time", "gridcell"])?;
        m.put_var_attr(v.name(), "units", AttrValue::Text(v.units().into()))?;
        let mode = match v.downscale_mode() {
            DownscaleMode::Additive => "additive",
            DownscaleMode::Multiplicative => "multiplicative",
            DownscaleMode::SumPreserving => "sum_preserving",
        };
        m.put_var_attr(v.name(), "downscale_mode", AttrValue::Text(mode.into()))?;
        data.push(VarData::Float(fm.values[v.index()].iter().map(|&x| x as f32).collect()));
    }
    m.put_attr("forcing_group", AttrValue::Text(group.into()))?;
    m.numrecs = fm.n_steps() as u64;
    Ok((m, data))
}

pub fn write_month(dir: &Path, fm: &ForcingMonth) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for g in GROUPS {
        let (m, data) = month_group_cdf(fm, g)?;
        let path = dir.join(file_name(g, fm.year, fm.month));
        let bytes = cdf5::write_file(&m, &data)?;
        std::fs::write(&path, bytes).map_err(|e| Error::file(&path, e))?;
        paths.push(path);
    }
    Ok(paths)
}

/// Synthesizes, downscales and writes every month touched by `period`.
pub fn generate_files(seed: u64, d: &DomainSpec, period: &Period, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for daily in synth_forcing(seed, d, period)? {
        let fm = downscale_month(&daily, d)?;
        paths.extend(write_month(dir, &fm)?);
    }
    Ok(paths)
}

// ---------------------------------------------------------------------------
// Sources and interpolation

/// Index of the 3-hourly record at or before `t`, counted from 1970-01-01.
pub fn record_index(t: NaiveDateTime) -> i64 {
    let epoch = NaiveDate::from_ymd_opt(1970, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
    (t - epoch).num_seconds().div_euclid(RECORD_HOURS * 3600)
}

pub fn record_time(rec: i64) -> NaiveDateTime {
    let epoch = NaiveDate::from_ymd_opt(1970, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
    epoch + Duration::hours(rec * RECORD_HOURS)
}

/// Supplies single-precision 3-hourly records over land cells.
pub trait ForcingSource: Send {
    fn land_ids(&self) -> &[i64];
    fn record(&mut self, var: ForcingVar, rec: i64) -> Result<Vec<f32>>;
}

/// Generates records on the fly; bit-identical to the files written by
/// [`generate_files`] for the same seed and domain.
pub struct SyntheticSource {
    seed: u64,
    land_ids: Vec<i64>,
    source_ids: Vec<i64>,
    day: Option<NaiveDate>,
    cache: Vec<Vec<f32>>,
}

impl SyntheticSource {
    pub fn new(seed: u64, d: &DomainSpec) -> Self {
        SyntheticSource {
            seed,
            land_ids: d.land_index().to_vec(),
            source_ids: d.source_id().to_vec(),
            day: None,
            cache: Vec::new(),
        }
    }

    fn fill_day(&mut self, date: NaiveDate) -> Result<()> {
        if self.day == Some(date) {
            return Ok(());
        }
        let n = self.source_ids.len();
        let profile = synth_profile(self.seed, date);
        let mut cache = vec![vec![0f32; STEPS_PER_DAY * n]; 7];
        for (k, &s) in self.source_ids.iter().enumerate() {
            let daily = synth_daily_cell(self.seed, s, date);
            for var in ForcingVar::ALL {
                let steps = downscale_day(daily[var.index()], &profile.shapes[var.index()], var.downscale_mode())?;
                for (i, v) in steps.into_iter().enumerate() {
                    cache[var.index()][i * n + k] = v as f32;
                }
            }
        }
        self.cache = cache;
        self.day = Some(date);
        Ok(())
    }
}

impl ForcingSource for SyntheticSource {
    fn land_ids(&self) -> &[i64] {
        &self.land_ids
    }

    fn record(&mut self, var: ForcingVar, rec: i64) -> Result<Vec<f32>> {
        let t = record_time(rec);
        self.fill_day(t.date())?;
        let n = self.source_ids.len();
        let step = (rec.rem_euclid(STEPS_PER_DAY as i64)) as usize;
        Ok(self.cache[var.index()][step * n..(step + 1) * n].to_vec())
    }
}

/// Reads records lazily from monthly group files in a directory.
pub struct FileSource {
    dir: PathBuf,
    land_ids: Vec<i64>,
    open: HashMap<(&'static str, i32, u32), CdfReader<BufReader<File>>>,
}

impl FileSource {
    pub fn new(dir: &Path, d: &DomainSpec) -> Self {
        FileSource { dir: dir.to_path_buf(), land_ids: d.land_index().to_vec(), open: HashMap::new() }
    }

    fn reader(&mut self, group: &'static str, year: i32, month: u32) -> Result<&mut CdfReader<BufReader<File>>> {
        let key = (group, year, month);
        if !self.open.contains_key(&key) {
            let path = self.dir.join(file_name(group, year, month));
            if !path.exists() {
                return Err(Error::Forcing(format!(
                    "forcing coverage gap: {} not found for {year:04}-{month:02}",
                    path.display()
                )));
            }
            let mut r = CdfReader::open(&path)?;
            let ids = match r.read_var("gridcell_id")? {
                VarData::Int64(v) => v,
                _ => return Err(Error::Forcing(format!("{}: gridcell_id must be int64", path.display()))),
            };
            if ids != self.land_ids {
                return Err(Error::Forcing(format!(
                    "domain mismatch: {} covers {} gridcells that differ from the domain's {} land cells",
                    path.display(),
                    ids.len(),
                    self.land_ids.len()
                )));
            }
            self.open.insert(key, r);
        }
        Ok(self.open.get_mut(&key).unwrap())
    }
}

impl ForcingSource for FileSource {
    fn land_ids(&self) -> &[i64] {
        &self.land_ids
    }

    fn record(&mut self, var: ForcingVar, rec: i64) -> Result<Vec<f32>> {
        let t = record_time(rec);
        let start = month_start(t.year(), t.month());
        let local = ((t - start).num_hours() / RECORD_HOURS) as u64;
        let n = self.land_ids.len() as u64;
        let r = self.reader(var.group(), t.year(), t.month())?;
        if local >= r.model().numrecs {
            return Err(Error::Forcing(format!("forcing coverage gap: no {var} record at {t}")));
        }
        match r.read_slab(var.name(), &[local, 0], &[1, n])? {
            VarData::Float(v) => Ok(v),
            _ => Err(Error::Forcing(format!("{var} must be stored as float"))),
        }
    }
}

/// Forcing values at one model time, per variable over land cells.
#[derive(Debug, Clone, PartialEq)]
pub struct AtmFields {
    pub values: Vec<Vec<f64>>,
}

impl AtmFields {
    pub fn get(&self, var: ForcingVar) -> &[f64] {
        &self.values[var.index()]
    }
}

/// Data-atmosphere stream: caches bracketing records and interpolates.
pub struct ForcingStream {
    source: Box<dyn ForcingSource>,
    cache: HashMap<(ForcingVar, i64), Vec<f32>>,
    last_record: Option<i64>,
}

impl ForcingStream {
    pub fn new(source: Box<dyn ForcingSource>) -> Self {
        ForcingStream { source, cache: HashMap::new(), last_record: None }
    }

    pub fn land_ids(&self) -> &[i64] {
        self.source.land_ids()
    }

    /// Latest record index read; the stream position kept in restarts.
    pub fn position(&self) -> Option<i64> {
        self.last_record
    }

    fn fetch(&mut self, var: ForcingVar, rec: i64) -> Result<&Vec<f32>> {
        if !self.cache.contains_key(&(var, rec)) {
            let v = self.source.record(var, rec)?;
            if v.len() != self.source.land_ids().len() {
                return Err(Error::Forcing(format!("{var} record {rec} has the wrong length")));
            }
            self.cache.retain(|&(cv, cr), _| cv != var || cr >= rec - 1);
            self.cache.insert((var, rec), v);
            self.last_record = Some(self.last_record.map_or(rec, |r| r.max(rec)));
        }
        Ok(&self.cache[&(var, rec)])
    }

    pub fn interpolate(&mut self, t: NaiveDateTime) -> Result<AtmFields> {
        self.interpolate_with(t, 1)
    }

    /// Records the interpolation at `t` reads: `(rec, Some(rec + 1))` off
    /// record boundaries.
    pub fn records_for(t: NaiveDateTime) -> (i64, Option<i64>) {
        let rec = record_index(t);
        (rec, (t != record_time(rec)).then_some(rec + 1))
    }

    /// As [`interpolate`](Self::interpolate), splitting the cell range over
    /// `threads` scoped threads. Results do not depend on `threads`.
    pub fn interpolate_with(&mut self, t: NaiveDateTime, threads: usize) -> Result<AtmFields> {
        let (rec, next) = Self::records_for(t);
        let secs = (t - record_time(rec)).num_seconds();
        let w = secs as f64 / (RECORD_HOURS * 3600) as f64;
        let mut pairs = Vec::with_capacity(7);
        for var in ForcingVar::ALL {
            let a = self.fetch(var, rec)?.clone();
            let b = match next {
                Some(r) if var.interp_mode() == InterpMode::Linear => Some(self.fetch(var, r)?.clone()),
                _ => None,
            };
            pairs.push((a, b));
        }
        let n = self.source.land_ids().len();
        let threads = threads.clamp(1, n.max(1));
        let mut values: Vec<Vec<f64>> = vec![vec![0.0; n]; 7];
        let chunk = n.div_ceil(threads).max(1);
        std::thread::scope(|s| {
            for (v, out) in values.iter_mut().enumerate() {
                let (a, b) = &pairs[v];
                for (ci, oc) in out.chunks_mut(chunk).enumerate() {
                    let lo = ci * chunk;
                    let job = move || match b {
                        Some(b) => {
                            for (i, o) in oc.iter_mut().enumerate() {
                                *o = lerp(a[lo + i] as f64, b[lo + i] as f64, w);
                            }
                        }
                        None => {
                            for (i, o) in oc.iter_mut().enumerate() {
                                *o = a[lo + i] as f64;
                            }
                        }
                    };
                    if threads == 1 {
                        let mut job = job;
                        job();
                    } else {
                        s.spawn(job);
                    }
                }
            }
        });
        Ok(AtmFields { values })
    }
}

/// Linear interpolation clamped to the bracketing values.
pub fn lerp(a: f64, b: f64, w: f64) -> f64 {
    let v = a + (b - a) * w;
    v.clamp(a.min(b), a.max(b))
}

#[cfg(test)]
mod tests;
