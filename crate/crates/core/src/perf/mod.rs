//! Timing, scaling metrics, the scaling experiment harness and a simple
//! cost-model predictor.

mod chart;
mod suite;
pub mod timers;

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use chart::speedup_svg;
pub use suite::{hardware_threads, run_scaling_suite, Mode, SuiteOptions, SuiteResult, SuiteRun, DESK_CELLS_PER_WORKER};
pub use timers::{MergedNode, TimerNode, TimerTree};

pub const DAYS_PER_YEAR: f64 = 365.0;

/// Simulated years per wall-clock day.
pub fn compute_sypd(wall_seconds: f64, sim_days: f64) -> Result<f64> {
    if !(wall_seconds > 0.0) || !wall_seconds.is_finite() {
        return Err(Error::Perf(format!("wall time must be positive, got {wall_seconds}")));
    }
    Ok((sim_days / DAYS_PER_YEAR) / (wall_seconds / 86_400.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Component {
    Atm,
    Cpl,
    Lnd,
}

impl Component {
    pub const ALL: [Component; 3] = [Component::Atm, Component::Cpl, Component::Lnd];

    pub fn name(self) -> &'static str {
        match self {
            Component::Atm => "ATM",
            Component::Cpl => "CPL",
            Component::Lnd => "LND",
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Component {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Component::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Perf(format!("unknown component {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingRecord {
    pub case: String,
    pub component: Component,
    pub cores: usize,
    pub init_seconds: f64,
    pub run_seconds: f64,
    pub sypd: f64,
    pub sim_days: f64,
    pub cells_per_core: f64,
}

impl ScalingRecord {
    pub fn new(case: &str, component: Component, cores: usize, init: f64, run: f64, sim_days: f64, cells: usize) -> Result<Self> {
        if cores == 0 {
            return Err(Error::Perf("core count must be positive".into()));
        }
        Ok(ScalingRecord {
            case: case.to_string(),
            component,
            cores,
            init_seconds: init,
            run_seconds: run,
            sypd: compute_sypd(run, sim_days)?,
            sim_days,
            cells_per_core: cells as f64 / cores as f64,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Measured,
    Model,
}

impl Source {
    pub fn name(self) -> &'static str {
        match self {
            Source::Measured => "measured",
            Source::Model => "model",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingTable {
    pub records: Vec<ScalingRecord>,
    pub baseline: usize,
    pub speedup: Vec<f64>,
    pub ideal: Vec<f64>,
    pub efficiency: Vec<f64>,
    pub source: Source,
}

fn check_uniform(records: &[ScalingRecord], baseline: usize) -> Result<()> {
    if baseline >= records.len() {
        return Err(Error::Perf(format!("baseline index {baseline} outside {} records", records.len())));
    }
    let (case, comp) = (&records[0].case, records[0].component);
    if records.iter().any(|r| &r.case != case || r.component != comp) {
        return Err(Error::Perf("records must share case and component".into()));
    }
    if records.iter().any(|r| !(r.run_seconds > 0.0)) {
        return Err(Error::Perf("run seconds must be positive".into()));
    }
    Ok(())
}

/// Strong-scaling speedup against `records[baseline]`.
pub fn speedup_table(records: Vec<ScalingRecord>, baseline: usize) -> Result<ScalingTable> {
    check_uniform(&records, baseline)?;
    let mut cores: Vec<usize> = records.iter().map(|r| r.cores).collect();
    cores.sort_unstable();
    if let Some(w) = cores.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Perf(format!("duplicate core count {}", w[0])));
    }
    let b = &records[baseline];
    let speedup: Vec<f64> = records.iter().map(|r| b.run_seconds / r.run_seconds).collect();
    let ideal: Vec<f64> = records.iter().map(|r| r.cores as f64 / b.cores as f64).collect();
    let efficiency = speedup.iter().zip(&ideal).map(|(s, i)| s / i).collect();
    Ok(ScalingTable { records, baseline, speedup, ideal, efficiency, source: Source::Measured })
}

/// Weak-scaling (scaled) efficiency `T_base / T_i`.
pub fn weak_efficiency(records: &[ScalingRecord], baseline: usize) -> Result<Vec<f64>> {
    check_uniform(records, baseline)?;
    let b = &records[baseline];
    for r in records {
        let dev = (r.cells_per_core - b.cells_per_core).abs() / b.cells_per_core;
        if dev > 0.05 {
            return Err(Error::Perf(format!(
                "workload per core differs by {:.1}% at {} cores ({} vs {})",
                dev * 100.0,
                r.cores,
                r.cells_per_core,
                b.cells_per_core
            )));
        }
    }
    Ok(records.iter().map(|r| b.run_seconds / r.run_seconds).collect())
}

/// As [`ScalingTable`] for weak scaling: ideal speedup is 1 everywhere.
pub fn weak_table(records: Vec<ScalingRecord>, baseline: usize) -> Result<ScalingTable> {
    let eff = weak_efficiency(&records, baseline)?;
    Ok(ScalingTable {
        ideal: vec![1.0; records.len()],
        speedup: eff.clone(),
        efficiency: eff,
        records,
        baseline,
        source: Source::Measured,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bandwidth {
    pub bytes: f64,
    pub mib_per_s: f64,
    pub gib_per_s: f64,
}

/// Write rate from a decimal-gigabyte volume, reported in binary units.
pub fn bandwidth(gigabytes: f64, seconds: f64) -> Result<Bandwidth> {
    if !(gigabytes > 0.0 && seconds > 0.0) {
        return Err(Error::Perf(format!("bandwidth needs positive inputs, got {gigabytes} GB in {seconds} s")));
    }
    let bytes = gigabytes * 1e9;
    let rate = bytes / seconds;
    Ok(Bandwidth { bytes, mib_per_s: rate / 1_048_576.0, gib_per_s: rate / 1_073_741_824.0 })
}

#[derive(Debug, Clone, Serialize)]
pub struct CsvRow {
    pub case: String,
    pub component: String,
    pub phase: String,
    pub cores: usize,
    pub seconds: f64,
    pub sypd: f64,
    pub speedup: f64,
    pub efficiency: f64,
    pub source: String,
}

impl ScalingTable {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// One `run` row per record, plus an `init` row when init time is known.
    pub fn csv_rows(&self) -> Vec<CsvRow> {
        let mut rows = Vec::new();
        let b = &self.records[self.baseline];
        for (i, r) in self.records.iter().enumerate() {
            let base = CsvRow {
                case: r.case.clone(),
                component: r.component.name().into(),
                phase: "run".into(),
                cores: r.cores,
                seconds: r.run_seconds,
                sypd: r.sypd,
                speedup: self.speedup[i],
                efficiency: self.efficiency[i],
                source: self.source.name().into(),
            };
            if r.init_seconds > 0.0 && b.init_seconds > 0.0 {
                let s = b.init_seconds / r.init_seconds;
                let eff = if self.ideal[i] == 1.0 { s } else { s / self.ideal[i] };
                rows.push(CsvRow {
                    phase: "init".into(),
                    seconds: r.init_seconds,
                    sypd: compute_sypd(r.init_seconds, r.sim_days).unwrap_or(0.0),
                    speedup: s,
                    efficiency: eff,
                    ..base.clone()
                });
            }
            rows.push(base);
        }
        rows
    }
}

pub fn write_csv<W: Write>(out: W, rows: &[CsvRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Deserialize)]
struct CsvIn {
    case: String,
    component: String,
    phase: String,
    cores: usize,
    seconds: f64,
    sypd: f64,
    speedup: f64,
    efficiency: f64,
    #[serde(default)]
    source: Option<String>,
}

/// Rebuilds run-phase tables (one per case and component) from scaling CSV text.
pub fn read_csv<R: std::io::Read>(input: R) -> Result<Vec<ScalingTable>> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut groups: Vec<((String, Component, Source), Vec<CsvIn>)> = Vec::new();
    for row in rdr.deserialize() {
        let row: CsvIn = row?;
        if row.phase != "run" {
            continue;
        }
        let comp: Component = row.component.parse()?;
        let src = if row.source.as_deref() == Some("model") { Source::Model } else { Source::Measured };
        let key = (row.case.clone(), comp, src);
        match groups.iter_mut().find(|g| g.0 == key) {
            Some(g) => g.1.push(row),
            None => groups.push((key, vec![row])),
        }
    }
    let mut out = Vec::new();
    for ((case, component, source), rows) in groups {
        let baseline = rows.iter().position(|r| r.speedup == 1.0).unwrap_or(0);
        let base_cores = rows[baseline].cores as f64;
        let weak = rows.iter().all(|r| r.speedup == r.efficiency);
        let records = rows
            .iter()
            .map(|r| ScalingRecord {
                case: case.clone(),
                component,
                cores: r.cores,
                init_seconds: 0.0,
                run_seconds: r.seconds,
                sypd: r.sypd,
                sim_days: r.sypd * DAYS_PER_YEAR * r.seconds / 86_400.0,
                cells_per_core: 0.0,
            })
            .collect();
        out.push(ScalingTable {
            records,
            baseline,
            speedup: rows.iter().map(|r| r.speedup).collect(),
            ideal: rows.iter().map(|r| if weak { 1.0 } else { r.cores as f64 / base_cores }).collect(),
            efficiency: rows.iter().map(|r| r.efficiency).collect(),
            source,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Predictor

/// `T_lnd(P) = c_cell * N * steps / P + c_sync * steps * log2(max(P, 2))`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostModel {
    /// alpha: seconds per cell-step.
    pub c_cell: f64,
    /// beta: seconds per step per log2(P).
    pub c_sync: f64,
    /// Piecewise-linear read time by rank count, from calibration runs.
    pub c_io_read: Vec<(usize, f64)>,
}

impl CostModel {
    /// Fits `c_cell` from one measured land run; `c_sync` stays zero.
    pub fn calibrate(run_seconds: f64, n_cells: usize, n_steps: u64, workers: usize) -> Result<Self> {
        if !(run_seconds > 0.0) || n_cells == 0 || n_steps == 0 || workers == 0 {
            return Err(Error::Perf("calibration needs a positive run time, cells, steps and workers".into()));
        }
        Ok(CostModel {
            c_cell: run_seconds * workers as f64 / (n_cells as f64 * n_steps as f64),
            c_sync: 0.0,
            c_io_read: Vec::new(),
        })
    }

    /// Relative least-squares fit of both coefficients (clamped non-negative) to
    /// measured `(P, seconds)` pairs of one case.
    pub fn fit(measured: &[(usize, f64)], n_cells: usize, n_steps: u64) -> Result<Self> {
        if measured.is_empty() || n_cells == 0 || n_steps == 0 {
            return Err(Error::Perf("nothing to fit".into()));
        }
        if measured.iter().any(|&(p, t)| p == 0 || !(t > 0.0)) {
            return Err(Error::Perf("fit points need positive rank counts and times".into()));
        }
        let work = n_cells as f64 * n_steps as f64;
        let xs: Vec<(f64, f64, f64)> = measured
            .iter()
            .map(|&(p, t)| (work / p as f64, n_steps as f64 * (p.max(2) as f64).log2(), t))
            .collect();
        let (mut saa, mut sab, mut sbb, mut sat, mut sbt) = (0.0, 0.0, 0.0, 0.0, 0.0);
        // Relative residuals: every point weighs the same whatever its magnitude.
        for &(a, b, t) in &xs {
            let w = 1.0 / (t * t);
            saa += w * a * a;
            sab += w * a * b;
            sbb += w * b * b;
            sat += w * a * t;
            sbt += w * b * t;
        }
        let det = saa * sbb - sab * sab;
        let (mut c_cell, mut c_sync) =
            if det.abs() > 1e-12 * saa * sbb { ((sat * sbb - sbt * sab) / det, (saa * sbt - sab * sat) / det) } else { (sat / saa, 0.0) };
        if c_sync < 0.0 {
            c_sync = 0.0;
            c_cell = sat / saa;
        }
        if c_cell <= 0.0 {
            c_cell = sat / saa;
            c_sync = 0.0;
        }
        Ok(CostModel { c_cell, c_sync, c_io_read: Vec::new() })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c_cell > 0.0) {
            return Err(Error::Perf("cost model is not calibrated".into()));
        }
        if self.c_sync < 0.0 || self.c_io_read.iter().any(|p| p.1 < 0.0) {
            return Err(Error::Perf("cost model coefficients must be non-negative".into()));
        }
        Ok(())
    }

    pub fn lnd_seconds(&self, n_cells: usize, n_steps: u64, p: usize) -> f64 {
        let steps = n_steps as f64;
        self.c_cell * n_cells as f64 * steps / p as f64 + self.c_sync * steps * (p.max(2) as f64).log2()
    }

    /// Read time at `p` ranks, interpolated between calibration points.
    pub fn io_read_seconds(&self, p: usize) -> Option<f64> {
        let pts = &self.c_io_read;
        let first = pts.first()?;
        if p <= first.0 {
            return Some(first.1);
        }
        for w in pts.windows(2) {
            if p <= w[1].0 {
                let f = (p - w[0].0) as f64 / (w[1].0 - w[0].0) as f64;
                return Some(w[0].1 + f * (w[1].1 - w[0].1));
            }
        }
        pts.last().map(|l| l.1)
    }
}

/// Predicted land times for each rank count, labeled as model output.
pub fn predict_times(model: &CostModel, case: &str, n_cells: usize, n_steps: u64, ps: &[usize], dt_hours: u32) -> Result<ScalingTable> {
    model.validate()?;
    if ps.is_empty() {
        return Err(Error::Perf("no rank counts to predict".into()));
    }
    let sim_days = (n_steps * dt_hours as u64) as f64 / 24.0;
    let records = ps
        .iter()
        .map(|&p| {
            let t = model.lnd_seconds(n_cells, n_steps, p);
            ScalingRecord::new(case, Component::Lnd, p, 0.0, t, sim_days, n_cells)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut table = speedup_table(records, 0)?;
    table.source = Source::Model;
    Ok(table)
}
