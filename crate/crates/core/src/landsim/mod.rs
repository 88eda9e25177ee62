//! Case driver: data atmosphere, coupler exchange and a gridcell-parallel
//! independent-column land model, with history averaging and restarts.
//!
//! The land physics is a deliberately small water/energy/carbon toy whose
//! per-cell update is pure, so decomposition, replication and restart
//! properties can be checked bit for bit.

mod driver;
mod output;
#[cfg(test)]
mod tests;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use chrono::{NaiveDate, NaiveDateTime};

use crate::config::KvConfig;
use crate::decomp::{Scheme, DEFAULT_BUFFER_LIMIT};
use crate::domain::{self, DomainSpec};
use crate::{Error, Result};

pub use driver::{resume_case, run_case, RunOutput, TimingReport};
pub use output::{
    bundle_paths, history_file_name, latest_bundle_time, restart_file_name, time_stamp, RestartBundle, HIST_VARS,
};

pub const DEFAULT_COMPSET: &str = "I1850-toy";
pub const FREEZE_K: f64 = 273.15;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyParams {
    /// mm/K/h
    pub melt_factor: f64,
    /// mm
    pub w_cap: f64,
    /// mm m2/(W h)
    pub et_coeff: f64,
    /// h
    pub temp_tau: f64,
    /// gC m2/(W h)
    pub gpp_coeff: f64,
    pub alloc: f64,
    /// 1/h
    pub k_leaf: f64,
    /// 1/h
    pub k_soil: f64,
    /// m2/gC
    pub lai_per_c: f64,
    /// mm
    pub snow_cover_scale: f64,
    /// K
    pub rain_snow_threshold: f64,
}

impl Default for ToyParams {
    fn default() -> Self {
        ToyParams {
            melt_factor: 0.2,
            w_cap: 200.0,
            et_coeff: 1e-3,
            temp_tau: 48.0,
            gpp_coeff: 5e-4,
            alloc: 0.5,
            k_leaf: 1e-4,
            k_soil: 1e-5,
            lai_per_c: 0.02,
            snow_cover_scale: 10.0,
            rain_snow_threshold: FREEZE_K,
        }
    }
}

impl ToyParams {
    const KEYS: [&'static str; 11] = [
        "melt_factor",
        "w_cap",
        "et_coeff",
        "temp_tau",
        "gpp_coeff",
        "alloc",
        "k_leaf",
        "k_soil",
        "lai_per_c",
        "snow_cover_scale",
        "rain_snow_threshold",
    ];

    fn values(&self) -> [f64; 11] {
        [
            self.melt_factor,
            self.w_cap,
            self.et_coeff,
            self.temp_tau,
            self.gpp_coeff,
            self.alloc,
            self.k_leaf,
            self.k_soil,
            self.lai_per_c,
            self.snow_cover_scale,
            self.rain_snow_threshold,
        ]
    }

    fn from_values(v: [f64; 11]) -> Self {
        ToyParams {
            melt_factor: v[0],
            w_cap: v[1],
            et_coeff: v[2],
            temp_tau: v[3],
            gpp_coeff: v[4],
            alloc: v[5],
            k_leaf: v[6],
            k_soil: v[7],
            lai_per_c: v[8],
            snow_cover_scale: v[9],
            rain_snow_threshold: v[10],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (k, v) in Self::KEYS.iter().zip(self.values()) {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("parameter {k} must be positive, got {v}")));
            }
        }
        if self.alloc > 1.0 {
            return Err(Error::Config("parameter alloc must not exceed 1".into()));
        }
        Ok(())
    }

    /// Reads `params.<name>` keys, defaulting the rest.
    pub fn from_config(cfg: &KvConfig) -> Result<Self> {
        let mut v = ToyParams::default().values();
        for (k, x) in Self::KEYS.iter().zip(v.iter_mut()) {
            *x = cfg.parse_or(&format!("params.{k}"), *x)?;
        }
        let p = Self::from_values(v);
        p.validate()?;
        Ok(p)
    }

    /// Canonical text form, stored in restart files.
    pub fn signature(&self) -> String {
        Self::KEYS
            .iter()
            .zip(self.values())
            .map(|(k, v)| format!("{k}={v:?}"))
            .collect::<Vec<_>>()
            .join(";")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellState {
    pub swe: f64,
    pub soil_water: f64,
    pub soil_temp: f64,
    pub c_leaf: f64,
    pub c_soil: f64,
}

impl CellState {
    pub const FIELDS: [&'static str; 5] = ["swe", "soil_water", "soil_temp", "c_leaf", "c_soil"];

    /// Cold-start state shared by every cell.
    pub fn initial(p: &ToyParams) -> Self {
        CellState { swe: 0.0, soil_water: 0.5 * p.w_cap, soil_temp: 275.0, c_leaf: 10.0, c_soil: 500.0 }
    }

    pub fn fields(&self) -> [f64; 5] {
        [self.swe, self.soil_water, self.soil_temp, self.c_leaf, self.c_soil]
    }

    pub fn from_fields(f: [f64; 5]) -> Self {
        CellState { swe: f[0], soil_water: f[1], soil_temp: f[2], c_leaf: f[3], c_soil: f[4] }
    }

    pub fn check(&self, p: &ToyParams) -> Result<()> {
        let ok = self.swe >= 0.0
            && self.soil_water >= 0.0
            && self.soil_water <= p.w_cap
            && self.c_leaf >= 0.0
            && self.c_soil >= 0.0
            && self.soil_temp > 150.0
            && self.soil_temp < 350.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Simulation(format!("cell state out of range: {self:?}")))
        }
    }
}

/// Forcing seen by one cell for one step. `prect` is a rate in mm/h.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellForcing {
    pub tbot: f64,
    pub prect: f64,
    pub fsds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Diagnostics {
    pub fsno: f64,
    pub h2osoi: f64,
    pub tlai: f64,
    pub tsoi: f64,
    /// mm/h
    pub qrunoff: f64,
    /// gC/m2/h
    pub gpp: f64,
    /// mm over the step
    pub et: f64,
    /// mm over the step
    pub runoff: f64,
}

impl Diagnostics {
    /// Values in [`HIST_VARS`] order.
    pub fn history(&self) -> [f64; 6] {
        [self.fsno, self.h2osoi, self.tlai, self.tsoi, self.qrunoff, self.gpp]
    }
}

/// One step of the column model. Evapotranspiration is limited to the
/// water available in the step so the bucket never goes negative.
pub fn step_cell(s: &CellState, f: &CellForcing, p: &ToyParams, dt: f64) -> (CellState, Diagnostics) {
    let snow = if f.tbot < p.rain_snow_threshold { f.prect * dt } else { 0.0 };
    let rain = f.prect * dt - snow;
    let melt = (s.swe + snow).min(p.melt_factor * (f.tbot - FREEZE_K).max(0.0) * dt);
    let wet = s.soil_water / p.w_cap;
    let avail = s.soil_water + rain + melt;
    let et = (p.et_coeff * f.fsds * wet * dt).min(avail);
    let bucket = avail - et;
    let soil_water = bucket.min(p.w_cap);
    let runoff = (bucket - p.w_cap).max(0.0);
    let swe = s.swe + snow - melt;
    let soil_temp = s.soil_temp + (f.tbot - s.soil_temp) * dt / p.temp_tau;
    let gpp = p.gpp_coeff * f.fsds * wet;
    let c_leaf = s.c_leaf + (p.alloc * gpp - p.k_leaf * s.c_leaf) * dt;
    let c_soil = s.c_soil + ((1.0 - p.alloc) * gpp + p.k_leaf * s.c_leaf * 0.5 - p.k_soil * s.c_soil) * dt;
    let next = CellState { swe, soil_water, soil_temp, c_leaf, c_soil };
    let diag = Diagnostics {
        fsno: swe / (swe + p.snow_cover_scale),
        h2osoi: soil_water,
        tlai: p.lai_per_c * c_leaf,
        tsoi: soil_temp,
        qrunoff: runoff / dt,
        gpp,
        et,
        runoff,
    };
    (next, diag)
}

/// [`step_cell`] with the NaN guard used by the driver.
pub fn step_checked(
    s: &CellState,
    f: &CellForcing,
    p: &ToyParams,
    dt: f64,
    gridcell_id: i64,
    t: NaiveDateTime,
) -> Result<(CellState, Diagnostics)> {
    for (name, v) in [("TBOT", f.tbot), ("PRECT", f.prect), ("FSDS", f.fsds)] {
        if v.is_nan() {
            return Err(Error::Simulation(format!("NaN {name} forcing at gridcell {gridcell_id}, time {t}")));
        }
    }
    Ok(step_cell(s, f, p, dt))
}

// ---------------------------------------------------------------------------
// Spin-up

/// Per-cycle pool values (one entry per cell).
#[derive(Debug, Clone, PartialEq)]
pub struct PoolSnapshot {
    pub c_leaf: Vec<f64>,
    pub c_soil: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpinupReport {
    /// Relative change from the previous cycle, max over cells, per cycle
    /// starting with the second.
    pub c_leaf_change: Vec<f64>,
    pub c_soil_change: Vec<f64>,
}

impl SpinupReport {
    /// Whether the year-over-year change shrinks (or holds) after the first
    /// cycle for both pools.
    pub fn contracting(&self) -> bool {
        let mono = |v: &[f64]| v.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9) + 1e-15);
        mono(&self.c_leaf_change) && mono(&self.c_soil_change)
    }

    pub fn converged(&self, tol: f64) -> bool {
        let last = |v: &[f64]| v.last().copied().unwrap_or(f64::INFINITY);
        last(&self.c_leaf_change) <= tol && last(&self.c_soil_change) <= tol
    }
}

pub fn spinup_check(cycles: &[PoolSnapshot]) -> Result<SpinupReport> {
    if cycles.len() < 2 {
        return Err(Error::Simulation("spin-up check needs at least two cycles".into()));
    }
    let rel = |a: &[f64], b: &[f64]| {
        a.iter()
            .zip(b)
            .map(|(&x, &y)| (y - x).abs() / x.abs().max(y.abs()).max(1e-30))
            .fold(0.0, f64::max)
    };
    let mut c_leaf_change = Vec::new();
    let mut c_soil_change = Vec::new();
    for w in cycles.windows(2) {
        if w[0].c_leaf.len() != w[1].c_leaf.len() || w[0].c_soil.len() != w[1].c_soil.len() {
            return Err(Error::Simulation("spin-up cycles cover different cell counts".into()));
        }
        c_leaf_change.push(rel(&w[0].c_leaf, &w[1].c_leaf));
        c_soil_change.push(rel(&w[0].c_soil, &w[1].c_soil));
    }
    Ok(SpinupReport { c_leaf_change, c_soil_change })
}

/// Repeats a forcing cycle over the given cells and returns end-of-cycle
/// pools, starting with the initial state.
pub fn spinup_cycles(
    init: &[CellState],
    cycle: &[Vec<CellForcing>],
    n_cycles: usize,
    p: &ToyParams,
    dt: f64,
) -> Result<(Vec<CellState>, Vec<PoolSnapshot>)> {
    if cycle.iter().any(|step| step.len() != init.len()) {
        return Err(Error::Simulation("forcing cycle does not match the cell count".into()));
    }
    let snap = |s: &[CellState]| PoolSnapshot {
        c_leaf: s.iter().map(|c| c.c_leaf).collect(),
        c_soil: s.iter().map(|c| c.c_soil).collect(),
    };
    let mut state = init.to_vec();
    let mut out = vec![snap(&state)];
    for _ in 0..n_cycles {
        for step in cycle {
            for (s, f) in state.iter_mut().zip(step) {
                *s = step_cell(s, f, p, dt).0;
            }
        }
        out.push(snap(&state));
    }
    Ok((state, out))
}

// ---------------------------------------------------------------------------
// Case configuration

#[derive(Debug, Clone)]
pub enum DomainSource {
    File(PathBuf),
    /// `aksp_mini`, `na_mini:<seed>` or `synthetic:<rows>x<cols>:<land_fraction>:<seed>`.
    Preset(String),
    Memory(Arc<DomainSpec>),
}

impl DomainSource {
    pub fn load(&self) -> Result<DomainSpec> {
        match self {
            DomainSource::File(p) => DomainSpec::read(p),
            DomainSource::Memory(d) => Ok((**d).clone()),
            DomainSource::Preset(name) => preset_domain(name),
        }
    }
}

pub fn preset_domain(name: &str) -> Result<DomainSpec> {
    let bad = || Error::Config(format!("unknown domain preset {name:?}"));
    let mut parts = name.split(':');
    match parts.next() {
        Some("aksp_mini") => domain::aksp_mini(),
        Some("na_mini") => {
            let seed = parts.next().map_or(Ok(1), |s| s.parse().map_err(|_| bad()))?;
            domain::na_mini(seed)
        }
        Some("synthetic") => {
            let dims = parts.next().ok_or_else(bad)?;
            let (r, c) = dims.split_once('x').ok_or_else(bad)?;
            let rows: usize = r.parse().map_err(|_| bad())?;
            let cols: usize = c.parse().map_err(|_| bad())?;
            let frac: f64 = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
            let seed: u64 = parts.next().map_or(Ok(1), |s| s.parse().map_err(|_| bad()))?;
            domain::synthetic(rows, cols, 1000.0, frac, seed)
        }
        _ => Err(bad()),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ForcingInput {
    Synthetic { seed: u64 },
    Files(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HistoryInterval {
    EndOfRun,
    Daily,
    Hourly,
    None,
}

impl HistoryInterval {
    pub fn name(self) -> &'static str {
        match self {
            HistoryInterval::EndOfRun => "end_of_run",
            HistoryInterval::Daily => "daily",
            HistoryInterval::Hourly => "hourly",
            HistoryInterval::None => "none",
        }
    }
}

impl FromStr for HistoryInterval {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [HistoryInterval::EndOfRun, HistoryInterval::Daily, HistoryInterval::Hourly, HistoryInterval::None]
            .into_iter()
            .find(|h| h.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown history interval {s:?}")))
    }
}

impl fmt::Display for HistoryInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RestartInterval {
    EndOfRun,
    None,
    EveryNDays(u32),
}

impl FromStr for RestartInterval {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "end_of_run" => Ok(RestartInterval::EndOfRun),
            "none" => Ok(RestartInterval::None),
            _ => s
                .strip_prefix("every_n_days:")
                .and_then(|n| n.parse().ok())
                .filter(|&n| n > 0)
                .map(RestartInterval::EveryNDays)
                .ok_or_else(|| Error::Config(format!("unknown restart interval {s:?}"))),
        }
    }
}

impl fmt::Display for RestartInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RestartInterval::EndOfRun => f.write_str("end_of_run"),
            RestartInterval::None => f.write_str("none"),
            RestartInterval::EveryNDays(n) => write!(f, "every_n_days:{n}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Workers {
    pub atm: usize,
    pub cpl: usize,
    pub lnd: usize,
}

impl Default for Workers {
    fn default() -> Self {
        Workers { atm: 1, cpl: 1, lnd: 1 }
    }
}

#[derive(Debug, Clone)]
pub struct CaseConfig {
    pub name: String,
    pub compset: String,
    pub domain: DomainSource,
    /// Replication factor applied to the loaded domain.
    pub replicate: usize,
    pub forcing: ForcingInput,
    pub surface: Option<PathBuf>,
    pub start: NaiveDate,
    pub n_days: u32,
    pub dt_hours: u32,
    pub history_interval: HistoryInterval,
    pub restart_interval: RestartInterval,
    pub workers: Workers,
    pub scheme: Scheme,
    pub block_size: Option<usize>,
    pub aggregators: usize,
    pub buffer_limit: u64,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub params: ToyParams,
}

impl CaseConfig {
    pub fn new(name: &str, domain: DomainSource, out_dir: &Path) -> Self {
        CaseConfig {
            name: name.to_string(),
            compset: DEFAULT_COMPSET.to_string(),
            domain,
            replicate: 1,
            forcing: ForcingInput::Synthetic { seed: 1 },
            surface: None,
            start: NaiveDate::from_ymd_opt(2014, 7, 1).unwrap(),
            n_days: 5,
            dt_hours: 1,
            history_interval: HistoryInterval::EndOfRun,
            restart_interval: RestartInterval::EndOfRun,
            workers: Workers::default(),
            scheme: Scheme::Block,
            block_size: None,
            aggregators: 1,
            buffer_limit: DEFAULT_BUFFER_LIMIT,
            seed: 1,
            out_dir: out_dir.to_path_buf(),
            params: ToyParams::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::Config(format!("invalid case name {:?}", self.name)));
        }
        if self.dt_hours == 0 || 24 % self.dt_hours != 0 {
            return Err(Error::Config(format!("dt_hours = {} must divide 24", self.dt_hours)));
        }
        if self.history_interval == HistoryInterval::Hourly && self.dt_hours != 1 {
            return Err(Error::Config("hourly history needs dt_hours = 1".into()));
        }
        if self.replicate == 0 {
            return Err(Error::Config("replicate must be at least 1".into()));
        }
        if self.workers.atm == 0 || self.workers.cpl == 0 || self.workers.lnd == 0 {
            return Err(Error::Config("worker counts must be at least 1".into()));
        }
        if self.aggregators == 0 || self.aggregators > self.workers.lnd {
            return Err(Error::Config(format!(
                "io.aggregators = {} must be between 1 and the land worker count {}",
                self.aggregators, self.workers.lnd
            )));
        }
        if self.buffer_limit == 0 {
            return Err(Error::Config("io.buffer_limit must be positive".into()));
        }
        self.params.validate()
    }

    pub fn steps_per_day(&self) -> u64 {
        24 / self.dt_hours as u64
    }

    pub fn case_start(&self) -> NaiveDateTime {
        self.start.and_hms_opt(0, 0, 0).unwrap()
    }

    /// Reads `case.*`, `io.*` and `params.*` keys. Relative paths resolve
    /// against `base_dir`.
    pub fn from_config(cfg: &KvConfig, base_dir: &Path) -> Result<Self> {
        let resolve = |p: &str| {
            let p = Path::new(p);
            if p.is_absolute() { p.to_path_buf() } else { base_dir.join(p) }
        };
        let name = cfg.require("case.name")?.to_string();
        let raw_domain = cfg.require("case.domain")?;
        let domain = match raw_domain.strip_prefix("preset:") {
            Some(p) => DomainSource::Preset(p.to_string()),
            None => DomainSource::File(resolve(raw_domain)),
        };
        let out_dir = resolve(cfg.get("case.out_dir").unwrap_or("."));
        let mut c = CaseConfig::new(&name, domain, &out_dir);
        c.compset = cfg.get("case.compset").unwrap_or(DEFAULT_COMPSET).to_string();
        c.replicate = cfg.parse_or("case.replicate", 1)?;
        c.seed = cfg.parse_or("case.seed", 1)?;
        c.forcing = match cfg.get("case.forcing").unwrap_or("synthetic") {
            "synthetic" => ForcingInput::Synthetic { seed: c.seed },
            dir => ForcingInput::Files(resolve(dir)),
        };
        c.surface = cfg.get("case.surface").map(resolve);
        if let Some(s) = cfg.get("case.start") {
            c.start = NaiveDate::parse_from_str(s, "%Y-%m-%d")
                .map_err(|e| Error::Config(format!("case.start = {s:?}: {e}")))?;
        }
        c.n_days = cfg.parse_or("case.n_days", c.n_days)?;
        c.dt_hours = cfg.parse_or("case.dt_hours", c.dt_hours)?;
        c.history_interval = cfg.parse_or("case.history_interval", c.history_interval)?;
        c.restart_interval = cfg.parse_or("case.restart_interval", c.restart_interval)?;
        c.workers.atm = cfg.parse_or("case.workers.atm", 1)?;
        c.workers.cpl = cfg.parse_or("case.workers.cpl", 1)?;
        c.workers.lnd = cfg.parse_or("case.workers.lnd", 1)?;
        c.scheme = cfg.parse_or("case.partition", c.scheme)?;
        c.block_size = cfg.get("case.block_size").map(|_| cfg.parse_required("case.block_size")).transpose()?;
        c.aggregators = cfg.parse_or("io.aggregators", 1)?;
        c.buffer_limit = cfg.parse_or("io.buffer_limit", DEFAULT_BUFFER_LIMIT)?;
        c.params = ToyParams::from_config(cfg)?;
        c.validate()?;
        Ok(c)
    }

    /// Flat key=value form. In-memory domains are written as `<memory>`.
    pub fn to_config(&self) -> KvConfig {
        let mut k = KvConfig::new();
        k.set("case.name", &self.name);
        k.set("case.compset", &self.compset);
        k.set(
            "case.domain",
            match &self.domain {
                DomainSource::File(p) => p.display().to_string(),
                DomainSource::Preset(p) => format!("preset:{p}"),
                DomainSource::Memory(_) => "<memory>".to_string(),
            },
        );
        k.set("case.replicate", self.replicate);
        k.set(
            "case.forcing",
            match &self.forcing {
                ForcingInput::Synthetic { .. } => "synthetic".to_string(),
                ForcingInput::Files(p) => p.display().to_string(),
            },
        );
        if let Some(s) = &self.surface {
            k.set("case.surface", s.display());
        }
        k.set("case.start", self.start.format("%Y-%m-%d"));
        k.set("case.n_days", self.n_days);
        k.set("case.dt_hours", self.dt_hours);
        k.set("case.history_interval", self.history_interval);
        k.set("case.restart_interval", self.restart_interval);
        k.set("case.workers.atm", self.workers.atm);
        k.set("case.workers.cpl", self.workers.cpl);
        k.set("case.workers.lnd", self.workers.lnd);
        k.set("case.partition", self.scheme);
        if let Some(b) = self.block_size {
            k.set("case.block_size", b);
        }
        k.set("case.seed", self.seed);
        k.set("case.out_dir", self.out_dir.display());
        k.set("io.aggregators", self.aggregators);
        k.set("io.buffer_limit", self.buffer_limit);
        for (key, v) in ToyParams::KEYS.iter().zip(self.params.values()) {
            k.set(format!("params.{key}"), format!("{v:?}"));
        }
        k
    }

    /// The domain the case runs on, replication applied.
    pub fn load_domain(&self) -> Result<DomainSpec> {
        let d = self.domain.load()?;
        if self.replicate > 1 { domain::replicate(&d, self.replicate) } else { Ok(d) }
    }
}
