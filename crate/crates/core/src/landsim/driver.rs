use std::path::PathBuf;
use std::sync::mpsc;
use std::time::Instant;

use chrono::{Duration, NaiveDateTime, Timelike};

use super::output::{domain_checksum, HistoryFile, HistoryMeta};
use super::{
    step_checked, CaseConfig, CellForcing, CellState, ForcingInput, HistoryInterval, RestartBundle, RestartInterval,
    HIST_VARS,
};
use crate::cdf5::{CdfReader, VarData};
use crate::decomp::{build_iodecomp, partition, AggregatorPlan, Partition, WriteStats};
use crate::domain::DomainSpec;
use crate::forcing::{AtmFields, FileSource, ForcingSource, ForcingStream, ForcingVar, SyntheticSource, RECORD_HOURS};
use crate::perf::timers::{merge, MergedNode, TimerTree};
use crate::{Error, Result};

const NH: usize = HIST_VARS.len();

/// Component timings of one run segment, in seconds.
#[derive(Debug, Clone)]
pub struct TimingReport {
    pub atm_init: f64,
    pub atm_run: f64,
    pub cpl_init: f64,
    pub cpl_run: f64,
    pub lnd_init: f64,
    /// Coupler-observed time from dispatching a step to the last land
    /// worker finishing it, summed over steps.
    pub lnd_run: f64,
    pub history_write: f64,
    pub restart_write: f64,
    pub total: f64,
    pub n_steps: u64,
    pub sim_days: f64,
    pub lnd_workers: usize,
    pub timers: MergedNode,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub history: Vec<PathBuf>,
    pub restart: Vec<PathBuf>,
    /// Bundle written last, if any.
    pub bundle: Option<RestartBundle>,
    pub timing: TimingReport,
    pub write_stats: Vec<WriteStats>,
    pub n_land: usize,
    pub end_time: NaiveDateTime,
}

/// Where a run segment begins.
struct SegmentStart {
    time: NaiveDateTime,
    state: Vec<CellState>,
    hist_sum: Vec<Vec<f64>>,
    hist_count: u64,
    hist_start: NaiveDateTime,
    history_file: String,
    cpl_fields: Vec<Vec<f64>>,
    atm_last_record: i64,
}

pub fn run_case(cfg: &CaseConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let t0 = Instant::now();
    let domain = cfg.load_domain()?;
    check_surface(cfg, &domain)?;
    let n = domain.n_land();
    let start = SegmentStart {
        time: cfg.case_start(),
        state: vec![CellState::initial(&cfg.params); n],
        hist_sum: vec![vec![0.0; n]; NH],
        hist_count: 0,
        hist_start: cfg.case_start(),
        history_file: String::new(),
        cpl_fields: vec![vec![0.0; n]; ForcingVar::ALL.len()],
        atm_last_record: -1,
    };
    let init = t0.elapsed().as_secs_f64();
    run_segment(cfg, &domain, start, cfg.n_days as u64 * cfg.steps_per_day(), init)
}

/// Continues a case from `bundle` for `extra_days`.
pub fn resume_case(bundle: &RestartBundle, cfg: &CaseConfig, extra_days: u32) -> Result<RunOutput> {
    cfg.validate()?;
    let t0 = Instant::now();
    let domain = cfg.load_domain()?;
    check_surface(cfg, &domain)?;
    if bundle.domain_checksum != domain_checksum(&domain) || bundle.n_land() != domain.n_land() {
        return Err(Error::Domain(format!(
            "restart bundle covers a different domain ({} cells) than case {} ({} land cells)",
            bundle.n_land(),
            cfg.name,
            domain.n_land()
        )));
    }
    bundle.check_params(&cfg.params)?;
    if bundle.case_start != cfg.case_start() || bundle.dt_hours != cfg.dt_hours {
        return Err(Error::Config(format!(
            "restart bundle starts {} with dt {} h; case starts {} with dt {} h",
            bundle.case_start,
            bundle.dt_hours,
            cfg.case_start(),
            cfg.dt_hours
        )));
    }
    if bundle.history_interval != cfg.history_interval {
        return Err(Error::Config(format!(
            "restart bundle uses history interval {}, case uses {}",
            bundle.history_interval, cfg.history_interval
        )));
    }
    let steps_done = (bundle.time - bundle.case_start).num_hours();
    if steps_done < 0 || steps_done % cfg.dt_hours as i64 != 0 {
        return Err(Error::Integrity(format!("restart time {} is not on a step boundary", bundle.time)));
    }
    let start = SegmentStart {
        time: bundle.time,
        state: bundle.state.clone(),
        hist_sum: bundle.hist_sum.clone(),
        hist_count: bundle.hist_count,
        hist_start: bundle.hist_start,
        history_file: bundle.history_file.clone(),
        cpl_fields: bundle.cpl_fields.clone(),
        atm_last_record: bundle.atm_last_record,
    };
    let init = t0.elapsed().as_secs_f64();
    run_segment(cfg, &domain, start, extra_days as u64 * cfg.steps_per_day(), init)
}

fn check_surface(cfg: &CaseConfig, d: &DomainSpec) -> Result<()> {
    let Some(path) = &cfg.surface else { return Ok(()) };
    let mut r = CdfReader::open(path)?;
    let ids = match r.read_var("gridcell_id")? {
        VarData::Int64(v) => v,
        _ => return Err(Error::Surface(format!("{}: gridcell_id must be int64", path.display()))),
    };
    if ids != d.land_index() {
        return Err(Error::Domain(format!(
            "domain mismatch between components: surface file {} covers {} cells, land domain has {}",
            path.display(),
            ids.len(),
            d.n_land()
        )));
    }
    Ok(())
}

enum ToLnd {
    Step { time: NaiveDateTime, fields: Vec<Vec<f64>> },
    Flush { count: u64, reset: bool },
    Snapshot,
}

enum FromLnd {
    Stepped,
    Flushed(Vec<Vec<f32>>),
    Snapshot(Vec<CellState>, Vec<Vec<f64>>),
    Failed(Error),
}

struct LndWorker {
    ids: Vec<i64>,
    states: Vec<CellState>,
    /// `sums[var][k]`
    sums: Vec<Vec<f64>>,
    timers: TimerTree,
}

impl LndWorker {
    fn handle(&mut self, msg: ToLnd, cfg: &CaseConfig) -> Result<FromLnd> {
        match msg {
            ToLnd::Step { time, fields } => {
                self.timers.start("LND:STEP");
                let dt = cfg.dt_hours as f64;
                let (tb, pr, fs) = (
                    &fields[ForcingVar::Tbot.index()],
                    &fields[ForcingVar::Prect.index()],
                    &fields[ForcingVar::Fsds.index()],
                );
                for k in 0..self.states.len() {
                    let f = CellForcing { tbot: tb[k], prect: pr[k], fsds: fs[k] };
                    let (s, d) = step_checked(&self.states[k], &f, &cfg.params, dt, self.ids[k], time)?;
                    self.states[k] = s;
                    for (v, x) in d.history().into_iter().enumerate() {
                        self.sums[v][k] += x;
                    }
                }
                self.timers.stop("LND:STEP")?;
                Ok(FromLnd::Stepped)
            }
            ToLnd::Flush { count, reset } => {
                let c = count as f64;
                let means = self.sums.iter().map(|s| s.iter().map(|&x| (x / c) as f32).collect()).collect();
                if reset {
                    self.sums.iter_mut().for_each(|s| s.fill(0.0));
                }
                Ok(FromLnd::Flushed(means))
            }
            ToLnd::Snapshot => Ok(FromLnd::Snapshot(self.states.clone(), self.sums.clone())),
        }
    }
}

fn run_segment(
    cfg: &CaseConfig,
    domain: &DomainSpec,
    start: SegmentStart,
    n_steps: u64,
    pre_init: f64,
) -> Result<RunOutput> {
    let wall = Instant::now();
    let mut tm = TimerTree::new();
    tm.add(&["CPL:INIT"], pre_init, 1);
    let n = domain.n_land();
    let p = cfg.workers.lnd;
    let dt = Duration::hours(cfg.dt_hours as i64);
    let case_start = cfg.case_start();
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::file(&cfg.out_dir, e))?;

    tm.start("ATM:INIT");
    let source: Box<dyn ForcingSource> = match &cfg.forcing {
        ForcingInput::Synthetic { seed } => Box::new(SyntheticSource::new(*seed, domain)),
        ForcingInput::Files(dir) => Box::new(FileSource::new(dir, domain)),
    };
    let mut stream = ForcingStream::new(source);
    tm.stop("ATM:INIT")?;

    tm.start("LND:INIT");
    let part = partition(n, p, cfg.scheme, cfg.block_size)?;
    let ids = domain.land_index();
    let mut workers: Vec<LndWorker> = part
        .local_lists
        .iter()
        .map(|cells| LndWorker {
            ids: cells.iter().map(|&c| ids[c]).collect(),
            states: cells.iter().map(|&c| start.state[c]).collect(),
            sums: start.hist_sum.iter().map(|s| cells.iter().map(|&c| s[c]).collect()).collect(),
            timers: TimerTree::new(),
        })
        .collect();
    tm.stop("LND:INIT")?;

    tm.start("CPL:INIT");
    let iod = build_iodecomp(&part, &[("gridcell", n as u64)], 4)?;
    let plan = AggregatorPlan::new(n as u64, p, cfg.aggregators, cfg.buffer_limit)?;
    let lonlat = if cfg.history_interval == HistoryInterval::None { Vec::new() } else { domain.land_lonlat()? };
    let meta = HistoryMeta {
        case: &cfg.name,
        compset: &cfg.compset,
        case_start,
        interval: cfg.history_interval,
        dt_hours: cfg.dt_hours,
    };
    tm.stop("CPL:INIT")?;

    let mut st = Coordinator {
        cfg,
        part: &part,
        iod: &iod,
        plan: &plan,
        meta: &meta,
        lonlat: &lonlat,
        domain_checksum: domain_checksum(domain),
        hist_count: start.hist_count,
        hist_start: start.hist_start,
        history_file: start.history_file,
        cpl_fields: start.cpl_fields,
        atm_last_record: start.atm_last_record,
        open_file: None,
        history: Vec::new(),
        restart: Vec::new(),
        bundle: None,
        write_stats: Vec::new(),
    };
    let seg_start = start.time;
    let seg_end = seg_start + dt * n_steps as i32;

    let mut atm_timers = TimerTree::new();
    let mut worker_timers = Vec::new();
    let result = std::thread::scope(|s| -> Result<()> {
        let (atm_tx, atm_rx) = mpsc::sync_channel::<Result<(AtmFields, i64)>>(1);
        let atm_threads = cfg.workers.atm;
        let atm_timers = &mut atm_timers;
        s.spawn(move || {
            for k in 0..n_steps {
                let t = seg_start + dt * k as i32;
                atm_timers.start("ATM:RUN");
                let r = stream.interpolate_with(t, atm_threads).map(|f| {
                    let (rec, next) = ForcingStream::records_for(t);
                    (f, next.unwrap_or(rec))
                });
                atm_timers.stop("ATM:RUN").ok();
                let failed = r.is_err();
                if atm_tx.send(r).is_err() || failed {
                    break;
                }
            }
        });

        let (back_tx, back_rx) = mpsc::channel::<(usize, FromLnd)>();
        let mut to_lnd = Vec::with_capacity(p);
        let mut handles = Vec::with_capacity(p);
        for (rank, mut w) in workers.drain(..).enumerate() {
            let (tx, rx) = mpsc::channel::<ToLnd>();
            to_lnd.push(tx);
            let back = back_tx.clone();
            handles.push(s.spawn(move || {
                for msg in rx {
                    let reply = w.handle(msg, cfg).unwrap_or_else(FromLnd::Failed);
                    let failed = matches!(reply, FromLnd::Failed(_));
                    if back.send((rank, reply)).is_err() || failed {
                        break;
                    }
                }
                w.timers
            }));
        }
        drop(back_tx);

        let res = (|| -> Result<()> {
            let mut lnd = Lnd { to: &to_lnd, back: &back_rx };
            tm.start("CPL:RUN_LOOP");
            for k in 0..n_steps {
                let t = seg_start + dt * k as i32;
                let te = t + dt;
                tm.start("CPL:ATM_WAIT");
                let (fields, last_rec) = atm_rx
                    .recv()
                    .map_err(|_| Error::Simulation("data atmosphere stopped".into()))??;
                tm.stop("CPL:ATM_WAIT")?;

                tm.start("CPL:EXCHANGE");
                let mut fields = fields.values;
                // Precipitation records are 3-hour totals; land expects a rate.
                for x in &mut fields[ForcingVar::Prect.index()] {
                    *x /= RECORD_HOURS as f64;
                }
                let per_rank = deliver(&fields, &part, cfg.workers.cpl);
                st.cpl_fields = fields;
                st.atm_last_record = last_rec;
                tm.stop("CPL:EXCHANGE")?;

                tm.start("LND:RUN");
                lnd.round(per_rank.into_iter().map(|f| ToLnd::Step { time: t, fields: f }).collect())?;
                tm.stop("LND:RUN")?;
                st.hist_count += 1;

                let last = k + 1 == n_steps;
                st.after_step(&mut lnd, &mut tm, te, last)?;
            }
            if n_steps == 0 {
                st.after_step(&mut lnd, &mut tm, seg_start, true)?;
            }
            tm.stop("CPL:RUN_LOOP")?;
            Ok(())
        })();
        drop(to_lnd);
        drop(atm_rx);
        for h in handles {
            worker_timers.push(h.join().map_err(|_| Error::Simulation("land worker panicked".into()))?);
        }
        res
    });
    result?;
    if let Some(f) = st.open_file.take() {
        return Err(Error::Simulation(format!(
            "history file {} left incomplete at {seg_end}",
            f.path.display()
        )));
    }

    let mut all: Vec<&TimerTree> = vec![&tm, &atm_timers];
    all.extend(worker_timers.iter());
    let merged = merge(&all);
    let timing = TimingReport {
        atm_init: tm.seconds(&["ATM:INIT"]),
        atm_run: atm_timers.seconds(&["ATM:RUN"]),
        cpl_init: tm.seconds(&["CPL:INIT"]),
        cpl_run: tm.seconds(&["CPL:RUN_LOOP"]),
        lnd_init: tm.seconds(&["LND:INIT"]),
        lnd_run: tm.seconds(&["CPL:RUN_LOOP", "LND:RUN"]),
        history_write: tm.seconds(&["CPL:RUN_LOOP", "CPL:HISTORY"]),
        restart_write: tm.seconds(&["CPL:RUN_LOOP", "CPL:RESTART"]),
        total: wall.elapsed().as_secs_f64() + pre_init,
        n_steps,
        sim_days: (n_steps * cfg.dt_hours as u64) as f64 / 24.0,
        lnd_workers: p,
        timers: merged,
    };
    Ok(RunOutput {
        history: st.history,
        restart: st.restart,
        bundle: st.bundle,
        timing,
        write_stats: st.write_stats,
        n_land: n,
        end_time: seg_end,
    })
}

/// Gathers global coupler fields into each rank's local order.
fn deliver(fields: &[Vec<f64>], part: &Partition, threads: usize) -> Vec<Vec<Vec<f64>>> {
    let pick = |cells: &Vec<usize>| -> Vec<Vec<f64>> {
        fields.iter().map(|f| cells.iter().map(|&c| f[c]).collect()).collect()
    };
    if threads <= 1 || part.n_ranks == 1 {
        return part.local_lists.iter().map(pick).collect();
    }
    let mut out: Vec<Vec<Vec<f64>>> = vec![Vec::new(); part.n_ranks];
    let chunk = part.n_ranks.div_ceil(threads);
    std::thread::scope(|s| {
        for (lists, outs) in part.local_lists.chunks(chunk).zip(out.chunks_mut(chunk)) {
            s.spawn(move || {
                for (l, o) in lists.iter().zip(outs) {
                    *o = pick(l);
                }
            });
        }
    });
    out
}

/// Barriered request/reply rounds with the land workers.
struct Lnd<'a> {
    to: &'a [mpsc::Sender<ToLnd>],
    back: &'a mpsc::Receiver<(usize, FromLnd)>,
}

impl Lnd<'_> {
    fn round(&mut self, msgs: Vec<ToLnd>) -> Result<Vec<FromLnd>> {
        let p = self.to.len();
        for (tx, m) in self.to.iter().zip(msgs) {
            tx.send(m).map_err(|_| Error::Simulation("land worker exited".into()))?;
        }
        let mut replies: Vec<Option<FromLnd>> = (0..p).map(|_| None).collect();
        for _ in 0..p {
            let (rank, r) = self.back.recv().map_err(|_| Error::Simulation("land worker exited".into()))?;
            if let FromLnd::Failed(e) = r {
                return Err(e);
            }
            replies[rank] = Some(r);
        }
        Ok(replies.into_iter().map(Option::unwrap).collect())
    }

    fn broadcast(&mut self, make: impl Fn() -> ToLnd) -> Result<Vec<FromLnd>> {
        self.round((0..self.to.len()).map(|_| make()).collect())
    }
}

struct Coordinator<'a> {
    cfg: &'a CaseConfig,
    part: &'a Partition,
    iod: &'a crate::decomp::IoDecomp,
    plan: &'a AggregatorPlan,
    meta: &'a HistoryMeta<'a>,
    lonlat: &'a [(f64, f64)],
    domain_checksum: String,
    hist_count: u64,
    hist_start: NaiveDateTime,
    history_file: String,
    cpl_fields: Vec<Vec<f64>>,
    atm_last_record: i64,
    open_file: Option<HistoryFile>,
    history: Vec<PathBuf>,
    restart: Vec<PathBuf>,
    bundle: Option<RestartBundle>,
    write_stats: Vec<WriteStats>,
}

impl Coordinator<'_> {
    fn days(&self, t: NaiveDateTime) -> f64 {
        (t - self.cfg.case_start()).num_seconds() as f64 / 86_400.0
    }

    /// History flush and restart decisions at the end of a step ending `te`.
    fn after_step(&mut self, lnd: &mut Lnd, tm: &mut TimerTree, te: NaiveDateTime, last: bool) -> Result<()> {
        let midnight = te.num_seconds_from_midnight() == 0;
        let flush = match self.cfg.history_interval {
            HistoryInterval::None => None,
            HistoryInterval::Hourly => Some(true),
            HistoryInterval::Daily => midnight.then_some(true),
            HistoryInterval::EndOfRun => last.then_some(false),
        };
        if let Some(reset) = flush {
            if self.hist_count > 0 {
                tm.start("CPL:HISTORY");
                self.flush_history(lnd, te, reset)?;
                tm.stop("CPL:HISTORY")?;
            }
        }
        let days_done = (te - self.cfg.case_start()).num_days();
        let restart = match self.cfg.restart_interval {
            RestartInterval::None => false,
            RestartInterval::EndOfRun => last,
            RestartInterval::EveryNDays(k) => midnight && days_done > 0 && days_done % k as i64 == 0,
        };
        if restart {
            tm.start("CPL:RESTART");
            self.write_restart(lnd, te)?;
            tm.stop("CPL:RESTART")?;
        }
        Ok(())
    }

    fn flush_history(&mut self, lnd: &mut Lnd, te: NaiveDateTime, reset: bool) -> Result<()> {
        let count = self.hist_count;
        let replies = lnd.broadcast(|| ToLnd::Flush { count, reset })?;
        let locals: Vec<Vec<Vec<f32>>> = replies
            .into_iter()
            .map(|r| match r {
                FromLnd::Flushed(m) => Ok(m),
                _ => Err(Error::Simulation("unexpected land reply to flush".into())),
            })
            .collect::<Result<_>>()?;
        if self.open_file.is_none() {
            let (name_time, n_records) = match self.cfg.history_interval {
                // One file per simulated day, named for its closing instant.
                HistoryInterval::Hourly => {
                    let day_end = (te - Duration::hours(1)).date().succ_opt().unwrap().and_hms_opt(0, 0, 0).unwrap();
                    (day_end, self.cfg.steps_per_day())
                }
                _ => (te, 1),
            };
            let name = super::history_file_name(&self.cfg.name, name_time);
            let path = self.cfg.out_dir.join(&name);
            self.open_file = Some(HistoryFile::create(path, self.meta, self.lonlat, n_records)?);
            self.history_file = name;
        }
        let bounds = [self.days(self.hist_start), self.days(te)];
        let f = self.open_file.as_mut().unwrap();
        let stats = f.write_record(bounds, &locals, self.iod, self.plan)?;
        self.write_stats.extend(stats);
        if f.next == f.n_records {
            let path = self.open_file.take().unwrap().finish()?;
            self.history.push(path);
        }
        if reset {
            self.hist_count = 0;
            self.hist_start = te;
        }
        Ok(())
    }

    fn write_restart(&mut self, lnd: &mut Lnd, te: NaiveDateTime) -> Result<()> {
        let replies = lnd.broadcast(|| ToLnd::Snapshot)?;
        let n = self.part.n_cells;
        let mut state = vec![CellState::from_fields([0.0; 5]); n];
        let mut hist_sum = vec![vec![0.0; n]; NH];
        for (cells, r) in self.part.local_lists.iter().zip(replies) {
            let FromLnd::Snapshot(s, sums) = r else {
                return Err(Error::Simulation("unexpected land reply to snapshot".into()));
            };
            for (k, &c) in cells.iter().enumerate() {
                state[c] = s[k];
                for v in 0..NH {
                    hist_sum[v][c] = sums[v][k];
                }
            }
        }
        let cfg = self.cfg;
        let bundle = RestartBundle {
            case: cfg.name.clone(),
            compset: cfg.compset.clone(),
            case_start: cfg.case_start(),
            time: te,
            dt_hours: cfg.dt_hours,
            params: cfg.params.signature(),
            domain_checksum: self.domain_checksum.clone(),
            history_interval: cfg.history_interval,
            state,
            hist_sum,
            hist_count: self.hist_count,
            hist_start: self.hist_start,
            history_file: self.history_file.clone(),
            cpl_fields: self.cpl_fields.clone(),
            atm_last_record: self.atm_last_record,
        };
        let (paths, stats) = bundle.write(&cfg.out_dir, self.part, cfg.aggregators, cfg.buffer_limit)?;
        self.restart.extend(paths);
        self.write_stats.extend(stats);
        self.bundle = Some(bundle);
        Ok(())
    }
}
