//! Strong and weak scaling experiments over the land driver.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use log::info;

use super::{speedup_svg, weak_table, write_csv, speedup_table, Component, ScalingRecord, ScalingTable, Source};
use crate::compare::{check_replication, compare_files, Tolerance, Verdict};
use crate::landsim::{run_case, CaseConfig, DomainSource, TimingReport};
use crate::{Error, Result};

/// Land cells per worker in the desk-scale weak-scaling configuration.
pub const DESK_CELLS_PER_WORKER: usize = 1700;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Strong,
    Weak,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strong" => Ok(Mode::Strong),
            "weak" => Ok(Mode::Weak),
            _ => Err(Error::Config(format!("scaling mode must be strong or weak, got {s:?}"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Strong => "strong",
            Mode::Weak => "weak",
        })
    }
}

#[derive(Debug, Clone)]
pub struct SuiteOptions {
    pub mode: Mode,
    /// Land worker counts; the first is the baseline.
    pub counts: Vec<usize>,
    /// Allow more workers than hardware threads. Timings are then not
    /// meaningful, only the output equivalence checks are.
    pub oversubscribe: bool,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone)]
pub struct SuiteRun {
    pub workers: usize,
    pub n_land: usize,
    pub dir: PathBuf,
    pub timing: TimingReport,
    pub outputs: Vec<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub mode: Mode,
    pub runs: Vec<SuiteRun>,
    /// ATM, CPL and LND tables in that order.
    pub tables: Vec<ScalingTable>,
    /// Output equivalence of each run against the baseline run.
    pub equivalence: Vec<(usize, Verdict)>,
    pub csv: PathBuf,
    pub svg: PathBuf,
}

impl SuiteResult {
    pub fn lnd(&self) -> &ScalingTable {
        &self.tables[2]
    }

    pub fn all_equivalent(&self) -> bool {
        self.equivalence.iter().all(|e| e.1 == Verdict::Identical)
    }
}

pub fn hardware_threads() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// Runs `base` once per worker count. Strong mode keeps the domain fixed;
/// weak mode replicates the base domain once per worker.
pub fn run_scaling_suite(base: &CaseConfig, opts: &SuiteOptions) -> Result<SuiteResult> {
    if opts.counts.is_empty() || opts.counts.contains(&0) {
        return Err(Error::Config("worker counts must be positive and non-empty".into()));
    }
    let hw = hardware_threads();
    let max = *opts.counts.iter().max().unwrap();
    if max > hw && !opts.oversubscribe {
        return Err(Error::Perf(format!(
            "{max} land workers requested but only {hw} hardware threads are available; \
             enable oversubscription for functional runs"
        )));
    }
    base.validate()?;
    fs::create_dir_all(&opts.out_dir).map_err(|e| Error::file(&opts.out_dir, e))?;

    let domain = match opts.mode {
        Mode::Weak => Some(Arc::new(base.load_domain()?)),
        Mode::Strong => None,
    };
    let case = format!("{}_{}", base.name, opts.mode);
    let mut runs = Vec::new();
    for &p in &opts.counts {
        let mut cfg = base.clone();
        cfg.workers.lnd = p;
        cfg.aggregators = cfg.aggregators.min(p).max(1);
        if let Some(d) = &domain {
            cfg.domain = DomainSource::Memory(d.clone());
            cfg.replicate = p;
        }
        cfg.out_dir = opts.out_dir.join(format!("{}_p{p}", opts.mode));
        info!("{case}: running with {p} land workers");
        let out = run_case(&cfg)?;
        let mut outputs = out.history.clone();
        outputs.extend(out.restart.iter().cloned());
        runs.push(SuiteRun { workers: p, n_land: out.n_land, dir: cfg.out_dir.clone(), timing: out.timing, outputs });
    }

    let equivalence = check_outputs(&runs, opts)?;

    let per_comp = |comp: Component| -> Result<Vec<ScalingRecord>> {
        runs.iter()
            .map(|r| {
                let t = &r.timing;
                let (cores, init, run) = match comp {
                    Component::Atm => (base.workers.atm, t.atm_init, t.atm_run),
                    Component::Cpl => (base.workers.cpl, t.cpl_init, t.cpl_run),
                    Component::Lnd => (r.workers, t.lnd_init, t.lnd_run),
                };
                let mut rec = ScalingRecord::new(&case, comp, cores, init, run.max(1e-9), t.sim_days, r.n_land)?;
                if comp != Component::Lnd {
                    // Fixed-resource components: keyed by the land worker count.
                    rec.cores = r.workers;
                    rec.cells_per_core = r.n_land as f64 / r.workers as f64;
                }
                Ok(rec)
            })
            .collect()
    };
    let mut tables = Vec::new();
    for comp in [Component::Atm, Component::Cpl] {
        let records = per_comp(comp)?;
        let b = records[0].run_seconds;
        let speedup: Vec<f64> = records.iter().map(|r| b / r.run_seconds).collect();
        tables.push(ScalingTable {
            ideal: vec![1.0; records.len()],
            efficiency: speedup.clone(),
            speedup,
            records,
            baseline: 0,
            source: Source::Measured,
        });
    }
    let lnd = per_comp(Component::Lnd)?;
    tables.push(match opts.mode {
        Mode::Strong => speedup_table(lnd, 0)?,
        Mode::Weak => weak_table(lnd, 0)?,
    });

    let csv = opts.out_dir.join(format!("{case}_scaling.csv"));
    let rows: Vec<_> = tables.iter().flat_map(|t| t.csv_rows()).collect();
    let f = fs::File::create(&csv).map_err(|e| Error::file(&csv, e))?;
    write_csv(f, &rows)?;
    let svg = opts.out_dir.join(format!("{case}_speedup.svg"));
    let title = format!("{} scaling, {case}", opts.mode);
    fs::write(&svg, speedup_svg(&tables[2], &title)).map_err(|e| Error::file(&svg, e))?;

    Ok(SuiteResult { mode: opts.mode, runs, tables, equivalence, csv, svg })
}

fn worst(a: Verdict, b: Verdict) -> Verdict {
    match (a, b) {
        (Verdict::Different, _) | (_, Verdict::Different) => Verdict::Different,
        (Verdict::WithinTolerance, _) | (_, Verdict::WithinTolerance) => Verdict::WithinTolerance,
        _ => Verdict::Identical,
    }
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Strong: every output must be bit-identical to the baseline run's.
/// Weak: every output must hold `P / P0` copies of the baseline's.
fn check_outputs(runs: &[SuiteRun], opts: &SuiteOptions) -> Result<Vec<(usize, Verdict)>> {
    let base = &runs[0];
    let mut out = Vec::new();
    for run in runs {
        let mut verdict = Verdict::Identical;
        if run.outputs.len() != base.outputs.len() {
            verdict = Verdict::Different;
        }
        for b in &base.outputs {
            let Some(r) = run.outputs.iter().find(|r| file_name(r) == file_name(b)) else {
                verdict = Verdict::Different;
                continue;
            };
            let report = match opts.mode {
                Mode::Strong => compare_files(b, r, Tolerance::BitExact)?,
                Mode::Weak => {
                    if run.workers % base.workers != 0 {
                        continue;
                    }
                    check_replication(b, r, run.workers / base.workers)?
                }
            };
            verdict = worst(verdict, report.verdict);
        }
        out.push((run.workers, verdict));
    }
    Ok(out)
}
