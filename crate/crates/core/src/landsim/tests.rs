use super::*;
use crate::cdf5::{CdfReader, VarData};
use crate::domain::{aksp_mini, replicate};
use crate::forcing::{generate_files, ForcingStream, Period, SyntheticSource, RECORD_HOURS};
use chrono::Duration;
use proptest::prelude::*;
use std::fs;

fn mini_case(dir: &Path, name: &str) -> CaseConfig {
    let mut c = CaseConfig::new(name, DomainSource::Preset("aksp_mini".into()), dir);
    c.forcing = ForcingInput::Synthetic { seed: 11 };
    c
}

fn read_bytes(p: &Path) -> Vec<u8> {
    fs::read(p).unwrap()
}

#[test]
fn zero_forcing_only_decays_leaf_carbon() {
    let p = ToyParams::default();
    let s = CellState { swe: 3.0, soil_water: 80.0, soil_temp: 270.0, c_leaf: 10.0, c_soil: 0.0 };
    let f = CellForcing { tbot: 270.0, prect: 0.0, fsds: 0.0 };
    let (n, _) = step_cell(&s, &f, &p, 1.0);
    assert_eq!((n.swe, n.soil_water, n.soil_temp), (3.0, 80.0, 270.0));
    assert_eq!(n.c_leaf, 10.0 * (1.0 - 1e-4));
}

#[test]
fn sub_freezing_precipitation_accumulates_as_snow() {
    let p = ToyParams::default();
    let s = CellState::initial(&p);
    let f = CellForcing { tbot: 263.15, prect: 1.0, fsds: 0.0 };
    let (n, d) = step_cell(&s, &f, &p, 1.0);
    assert_eq!(n.swe, s.swe + 1.0);
    assert_eq!(n.soil_water, s.soil_water);
    assert_eq!(d.runoff, 0.0);
}

#[test]
fn one_step_matches_hand_evaluation() {
    let p = ToyParams::default();
    let s = CellState { swe: 5.0, soil_water: 100.0, soil_temp: 270.0, c_leaf: 10.0, c_soil: 50.0 };
    let f = CellForcing { tbot: 275.0, prect: 0.0, fsds: 200.0 };
    let (n, d) = step_cell(&s, &f, &p, 1.0);
    // melt = 0.2 * 1.85 = 0.37; et = 1e-3 * 200 * 0.5 = 0.1; gpp = 5e-4 * 200 * 0.5 = 0.05
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b.abs().max(1.0);
    assert!(close(n.swe, 4.63), "{}", n.swe);
    assert!(close(n.soil_water, 100.27), "{}", n.soil_water);
    assert!(close(n.soil_temp, 270.0 + 5.0 / 48.0));
    assert!(close(n.c_leaf, 10.024));
    assert!(close(n.c_soil, 50.025));
    assert!(close(d.gpp, 0.05));
    assert!(close(d.et, 0.1));
    assert!(close(d.fsno, 4.63 / 14.63));
    assert!(close(d.tlai, 0.02 * 10.024));
    assert_eq!(d.qrunoff, 0.0);
}

proptest! {
    #[test]
    fn water_balance_and_invariants(
        swe in 0.0..50.0f64, w in 0.0..200.0f64, t in 230.0..310.0f64,
        cl in 0.0..500.0f64, cs in 0.0..5000.0f64,
        tbot in 230.0..310.0f64, prect in 0.0..30.0f64, fsds in 0.0..1000.0f64,
        dt in prop::sample::select(vec![1.0, 3.0, 6.0, 24.0]),
    ) {
        let p = ToyParams::default();
        let s = CellState { swe, soil_water: w, soil_temp: t, c_leaf: cl, c_soil: cs };
        let (n, d) = step_cell(&s, &CellForcing { tbot, prect, fsds }, &p, dt);
        let lhs = prect * dt;
        let rhs = (n.swe - s.swe) + (n.soil_water - s.soil_water) + d.et + d.runoff;
        prop_assert!((lhs - rhs).abs() <= 1e-9, "{lhs} vs {rhs}");
        prop_assert!(n.check(&p).is_ok());
    }
}

#[test]
fn nan_forcing_names_cell_and_time() {
    let p = ToyParams::default();
    let t = NaiveDate::from_ymd_opt(2014, 7, 1).unwrap().and_hms_opt(3, 0, 0).unwrap();
    let f = CellForcing { tbot: f64::NAN, prect: 0.0, fsds: 0.0 };
    let e = step_checked(&CellState::initial(&p), &f, &p, 1.0, 4242, t).unwrap_err().to_string();
    assert!(e.contains("4242") && e.contains("2014-07-01 03:00:00") && e.contains("TBOT"), "{e}");
}

#[test]
fn config_round_trip_and_validation() {
    let text = "case.name = demo\ncase.domain = preset:aksp_mini\ncase.n_days = 2\ncase.partition = round_robin\n\
                case.workers.lnd = 4\nio.aggregators = 2\ncase.restart_interval = every_n_days:1\nparams.k_leaf = 2e-4\n";
    let kv = KvConfig::parse(text).unwrap();
    let c = CaseConfig::from_config(&kv, Path::new("/tmp")).unwrap();
    assert_eq!(c.n_days, 2);
    assert_eq!(c.scheme, Scheme::RoundRobin);
    assert_eq!(c.restart_interval, RestartInterval::EveryNDays(1));
    assert_eq!(c.params.k_leaf, 2e-4);
    let again = CaseConfig::from_config(&c.to_config(), Path::new("/elsewhere")).unwrap();
    assert_eq!(again.to_config(), c.to_config());

    for bad in ["case.dt_hours = 5", "io.aggregators = 8", "case.history_interval = weekly", "params.w_cap = -1"] {
        let kv = KvConfig::parse(&format!("{text}{bad}\n").replace("io.aggregators = 2\n", "")).unwrap();
        assert!(CaseConfig::from_config(&kv, Path::new("/tmp")).is_err(), "{bad}");
    }
}

#[test]
fn five_day_run_layout() {
    let dir = tempfile::tempdir().unwrap();
    let c = mini_case(dir.path(), "aksp");
    let out = run_case(&c).unwrap();
    assert_eq!(out.timing.n_steps, 120);
    assert_eq!(out.history.len(), 1);
    assert_eq!(out.restart.len(), 4);
    let end = c.case_start() + Duration::days(5);
    assert_eq!(out.end_time, end);
    assert!(out.history[0].ends_with("aksp.elm.h0.2014-07-06-00000.nc"));
    let mut h = CdfReader::open(&out.history[0]).unwrap();
    assert_eq!(h.model().numrecs, 1);
    assert_eq!(h.read_var("time").unwrap(), VarData::Double(vec![5.0]));
    assert_eq!(h.read_var("time_bnds").unwrap(), VarData::Double(vec![0.0, 5.0]));
    let tlai = h.read_var("TLAI").unwrap();
    assert_eq!(tlai.len(), 613);
    let b = out.bundle.as_ref().unwrap();
    assert_eq!(b.hist_count, 120);
    assert_eq!(RestartBundle::read(dir.path(), "aksp", end).unwrap(), *b);
    assert_eq!(latest_bundle_time(dir.path(), "aksp").unwrap(), Some(end));
    assert!(out.timing.lnd_run > 0.0 && out.timing.cpl_run >= out.timing.lnd_run);
}

/// Mean of per-step diagnostics for one cell, recomputed serially.
#[test]
fn history_mean_matches_serial_recomputation() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = mini_case(dir.path(), "mean");
    c.n_days = 1;
    c.workers.lnd = 3;
    c.scheme = Scheme::RoundRobin;
    let out = run_case(&c).unwrap();
    let d = aksp_mini().unwrap();
    let mut stream = ForcingStream::new(Box::new(SyntheticSource::new(11, &d)));
    let cells = [0usize, 17, 612];
    let mut s = vec![CellState::initial(&c.params); cells.len()];
    let mut sums = vec![[0.0f64; 6]; cells.len()];
    for k in 0..24 {
        let t = c.case_start() + Duration::hours(k);
        let f = stream.interpolate(t).unwrap();
        for (j, &cell) in cells.iter().enumerate() {
            let cf = CellForcing {
                tbot: f.get(crate::forcing::ForcingVar::Tbot)[cell],
                prect: f.get(crate::forcing::ForcingVar::Prect)[cell] / RECORD_HOURS as f64,
                fsds: f.get(crate::forcing::ForcingVar::Fsds)[cell],
            };
            let (n, diag) = step_cell(&s[j], &cf, &c.params, 1.0);
            s[j] = n;
            for (a, b) in sums[j].iter_mut().zip(diag.history()) {
                *a += b;
            }
        }
    }
    let mut h = CdfReader::open(&out.history[0]).unwrap();
    for (v, (name, _, _)) in HIST_VARS.iter().enumerate() {
        let VarData::Float(vals) = h.read_var(name).unwrap() else { panic!() };
        for (j, &cell) in cells.iter().enumerate() {
            let want = sums[j][v] / 24.0;
            let got = vals[cell];
            assert_eq!(got, want as f32, "{name} cell {cell}");
        }
    }
    let b = out.bundle.unwrap();
    for (j, &cell) in cells.iter().enumerate() {
        assert_eq!(b.state[cell], s[j]);
    }
}

#[test]
fn outputs_do_not_depend_on_workers_or_scheme() {
    let dir = tempfile::tempdir().unwrap();
    let mut reference = None;
    for (lnd, scheme, aggs) in [(1, Scheme::Block, 1), (4, Scheme::RoundRobin, 2), (4, Scheme::BlockRoundRobin, 4), (3, Scheme::Block, 3)] {
        let sub = dir.path().join(format!("{lnd}-{scheme}"));
        let mut c = mini_case(&sub, "inv");
        c.n_days = 2;
        c.workers = Workers { atm: 2, cpl: 2, lnd };
        c.scheme = scheme;
        c.block_size = Some(7);
        c.aggregators = aggs;
        c.buffer_limit = 1000;
        let out = run_case(&c).unwrap();
        let files: Vec<Vec<u8>> = out.history.iter().chain(&out.restart).map(|p| read_bytes(p)).collect();
        match &reference {
            None => reference = Some(files),
            Some(r) => assert!(*r == files, "{lnd} workers, {scheme}"),
        }
    }
}

#[test]
fn replicated_case_output_is_concatenated_copies() {
    let dir = tempfile::tempdir().unwrap();
    let mut base = mini_case(dir.path(), "base");
    base.n_days = 1;
    let mut rep = base.clone();
    rep.name = "rep".into();
    rep.replicate = 10;
    rep.workers.lnd = 3;
    let a = run_case(&base).unwrap();
    let b = run_case(&rep).unwrap();
    let mut ha = CdfReader::open(&a.history[0]).unwrap();
    let mut hb = CdfReader::open(&b.history[0]).unwrap();
    for name in ["lon", "lat", "FSNO", "H2OSOI", "TLAI", "TSOI", "QRUNOFF", "GPP"] {
        let x = ha.read_var(name).unwrap();
        let mut cat = x.clone();
        for _ in 1..10 {
            cat.extend_from(&x).unwrap();
        }
        assert_eq!(hb.read_var(name).unwrap(), cat, "{name}");
    }
    let (ba, bb) = (a.bundle.unwrap(), b.bundle.unwrap());
    assert_eq!(bb.state, ba.state.repeat(10));
}

#[test]
fn split_run_equals_whole_run() {
    let dir = tempfile::tempdir().unwrap();
    for interval in [HistoryInterval::EndOfRun, HistoryInterval::Daily] {
        let whole_dir = dir.path().join(format!("whole-{interval}"));
        let split_dir = dir.path().join(format!("split-{interval}"));
        let mut whole = mini_case(&whole_dir, "sr");
        whole.history_interval = interval;
        let w = run_case(&whole).unwrap();

        let mut first = mini_case(&split_dir, "sr");
        first.history_interval = interval;
        first.n_days = 3;
        first.workers.lnd = 2;
        run_case(&first).unwrap();
        let t3 = first.case_start() + Duration::days(3);
        let bundle = RestartBundle::read(&split_dir, "sr", t3).unwrap();
        let mut second = first.clone();
        second.scheme = Scheme::RoundRobin;
        let s = resume_case(&bundle, &second, 2).unwrap();

        assert_eq!(s.end_time, w.end_time);
        assert_eq!(s.restart.len(), 4);
        for (a, b) in w.restart.iter().zip(&s.restart) {
            assert_eq!(a.file_name(), b.file_name());
            assert!(read_bytes(a) == read_bytes(b), "{}", a.display());
        }
        let last = w.history.last().unwrap();
        let other = split_dir.join(last.file_name().unwrap());
        assert!(read_bytes(last) == read_bytes(&other), "{interval}");
        if interval == HistoryInterval::Daily {
            for h in &w.history {
                assert!(read_bytes(h) == read_bytes(&split_dir.join(h.file_name().unwrap())));
            }
            assert_eq!(w.history.len(), 5);
        }
    }
}

#[test]
fn resume_with_zero_days_rewrites_identical_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = mini_case(dir.path(), "zero");
    c.n_days = 1;
    let out = run_case(&c).unwrap();
    let before: Vec<Vec<u8>> = out.restart.iter().chain(&out.history).map(|p| read_bytes(p)).collect();
    let bundle = out.bundle.unwrap();
    let again = resume_case(&bundle, &c, 0).unwrap();
    assert_eq!(again.timing.n_steps, 0);
    let after: Vec<Vec<u8>> = again.restart.iter().chain(&again.history).map(|p| read_bytes(p)).collect();
    assert!(before == after);
}

#[test]
fn tampered_or_mismatched_bundle_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = mini_case(dir.path(), "tamper");
    c.n_days = 1;
    let out = run_case(&c).unwrap();
    let t = out.end_time;
    let bundle = out.bundle.unwrap();

    let mut other = c.clone();
    other.params.k_soil = 2e-5;
    assert!(matches!(resume_case(&bundle, &other, 1), Err(Error::Integrity(_))));
    let mut moved = c.clone();
    moved.domain = DomainSource::Preset("synthetic:8x8:0.5:3".into());
    assert!(matches!(resume_case(&bundle, &moved, 1), Err(Error::Domain(_))));

    let elm = dir.path().join(restart_file_name("tamper", "elm.r", t));
    let mut bytes = read_bytes(&elm);
    let n = bytes.len();
    bytes[n - 3] ^= 0x01;
    fs::write(&elm, bytes).unwrap();
    let e = RestartBundle::read(dir.path(), "tamper", t).unwrap_err();
    assert!(matches!(e, Error::Integrity(_)), "{e}");
    assert!(e.to_string().contains("checksum"));
}

#[test]
fn hourly_history_and_periodic_restarts() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = mini_case(dir.path(), "hr");
    c.n_days = 2;
    c.history_interval = HistoryInterval::Hourly;
    c.restart_interval = RestartInterval::EveryNDays(1);
    let out = run_case(&c).unwrap();
    assert_eq!(out.history.len(), 2);
    assert_eq!(out.restart.len(), 8);
    let mut h = CdfReader::open(&out.history[1]).unwrap();
    assert_eq!(h.model().numrecs, 24);
    let VarData::Double(t) = h.read_var("time").unwrap() else { panic!() };
    assert_eq!(t[0], 1.0 + 1.0 / 24.0);
    assert_eq!(t[23], 2.0);
}

#[test]
fn file_forcing_matches_synthetic_and_checks_coverage() {
    let dir = tempfile::tempdir().unwrap();
    let d = aksp_mini().unwrap();
    let fdir = dir.path().join("forcing");
    fs::create_dir_all(&fdir).unwrap();
    let mut syn = mini_case(&dir.path().join("a"), "ff");
    syn.n_days = 1;
    generate_files(11, &d, &Period::new(syn.start, 1).unwrap(), &fdir).unwrap();
    let mut files = syn.clone();
    files.out_dir = dir.path().join("b");
    files.forcing = ForcingInput::Files(fdir.clone());
    let a = run_case(&syn).unwrap();
    let b = run_case(&files).unwrap();
    assert!(read_bytes(&a.history[0]) == read_bytes(&b.history[0]));

    let mut gap = files.clone();
    gap.n_days = 40;
    gap.restart_interval = RestartInterval::None;
    let e = run_case(&gap).unwrap_err().to_string();
    assert!(e.contains("coverage gap"), "{e}");

    let mut rep = files.clone();
    rep.replicate = 2;
    let e = run_case(&rep).unwrap_err().to_string();
    assert!(e.contains("domain mismatch"), "{e}");
    let _ = replicate(&d, 2).unwrap();
}

#[test]
fn constant_forcing_reaches_leaf_fixed_point() {
    let p = ToyParams::default();
    // Heavy warm rain keeps the bucket full, so gpp is constant.
    let f = CellForcing { tbot: 290.0, prect: 5.0, fsds: 300.0 };
    let mut s = CellState { soil_water: p.w_cap, c_leaf: 0.0, ..CellState::initial(&p) };
    let gpp = p.gpp_coeff * f.fsds;
    let target = p.alloc * gpp / p.k_leaf;
    let hours = (5.0 / p.k_leaf) as usize;
    for _ in 0..hours {
        s = step_cell(&s, &f, &p, 1.0).0;
    }
    assert!((s.c_leaf - target).abs() / target < 0.01, "{} vs {target}", s.c_leaf);
}

#[test]
fn zero_gpp_pools_decay_monotonically() {
    let p = ToyParams::default();
    let f = CellForcing { tbot: 280.0, prect: 0.0, fsds: 0.0 };
    let cycle = vec![vec![f]; 24 * 30];
    let (_, snaps) = spinup_cycles(&[CellState::initial(&p)], &cycle, 6, &p, 1.0).unwrap();
    for w in snaps.windows(2) {
        assert!(w[1].c_leaf[0] < w[0].c_leaf[0]);
    }
    let total = |s: &PoolSnapshot| s.c_leaf[0] + s.c_soil[0];
    assert!(snaps.windows(2).all(|w| total(&w[1]) < total(&w[0])));
}

#[test]
fn cyclic_forcing_contracts() {
    let p = ToyParams::default();
    let cycle: Vec<Vec<CellForcing>> = (0..24 * 365)
        .map(|h| {
            let phase = 2.0 * std::f64::consts::PI * h as f64 / (24.0 * 365.0);
            let diurnal = (2.0 * std::f64::consts::PI * (h % 24) as f64 / 24.0).sin().max(0.0);
            vec![CellForcing { tbot: 275.0 + 15.0 * phase.sin(), prect: 1.0 + phase.cos(), fsds: 400.0 * diurnal }]
        })
        .collect();
    let (_, snaps) = spinup_cycles(&[CellState::initial(&p)], &cycle, 6, &p, 1.0).unwrap();
    let rep = spinup_check(&snaps).unwrap();
    assert_eq!(rep.c_leaf_change.len(), 6);
    assert!(rep.contracting(), "{rep:?}");
    assert!(spinup_check(&snaps[..1]).is_err());
}
