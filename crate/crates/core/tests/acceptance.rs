//! Acceptance suite. Runs every criterion in order, prints one PASS/FAIL
//! line for each and exits non-zero if any failed.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use kiloland::cdf5::{write_file, AttrValue, CdfFileModel, CdfReader, NcType, VarData, Variant};
use kiloland::compare::{check_replication, Verdict};
use kiloland::decomp::{build_iodecomp, partition, write_cdf_aggregated, Scheme, VarSource, DEFAULT_BUFFER_LIMIT};
use kiloland::domain::aksp_mini;
use kiloland::forcing::{downscale_month, synth_forcing, DownscaleMode, ForcingVar, Period, STEPS_PER_DAY};
use kiloland::landsim::{
    resume_case, run_case, step_cell, CaseConfig, CellForcing, CellState, DomainSource, HistoryInterval, RestartBundle,
    RestartInterval, ToyParams,
};
use kiloland::perf::{
    bandwidth, compute_sypd, hardware_threads, run_scaling_suite, speedup_table, weak_efficiency, Component, Mode,
    ScalingRecord, SuiteOptions,
};

type Outcome = Result<String, String>;

fn emit(n: u32, name: &str, secs: f64, outcome: &Outcome) {
    let (tag, detail) = match outcome {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{tag} criterion {n:>2} {name} ({secs:.1}s): {detail}");
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond { Ok(()) } else { Err(msg()) }
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn case(name: &str, dir: &Path) -> CaseConfig {
    let mut c = CaseConfig::new(name, DomainSource::Preset("aksp_mini".into()), dir);
    c.n_days = 5;
    c.history_interval = HistoryInterval::Daily;
    c.restart_interval = RestartInterval::EndOfRun;
    c
}

fn nc_files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .map(|rd| rd.filter_map(|e| e.ok()).map(|e| e.path()).filter(|p| p.extension().is_some_and(|x| x == "nc")).collect())
        .unwrap_or_default();
    v.sort();
    v
}

fn name_of(p: &Path) -> String {
    p.file_name().unwrap().to_string_lossy().into_owned()
}

// 1 ---------------------------------------------------------------------------

fn replication(tmp: &Path) -> Outcome {
    let mut base = case("aksp", &tmp.join("x1"));
    base.history_interval = HistoryInterval::Hourly;
    let mut rep = base.clone();
    rep.replicate = 10;
    rep.out_dir = tmp.join("x10");
    let a = run_case(&base).map_err(e2s)?;
    let b = run_case(&rep).map_err(e2s)?;
    check(b.n_land == 10 * a.n_land, || format!("replica has {} cells, base {}", b.n_land, a.n_land))?;
    let files: Vec<&PathBuf> = a.history.iter().chain(&a.restart).collect();
    for f in &files {
        let r = check_replication(f, &rep.out_dir.join(name_of(f)), 10).map_err(e2s)?;
        check(r.verdict == Verdict::Identical, || format!("{}: {}", name_of(f), r.to_text()))?;
    }
    Ok(format!("{} files ({} history, {} restart), {} -> {} cells, all 10 copies bit-exact", files.len(), a.history.len(), a.restart.len(), a.n_land, b.n_land))
}

// 2 ---------------------------------------------------------------------------

fn worker_invariance(tmp: &Path) -> Outcome {
    let reference = run_case(&case("inv", &tmp.join("ref"))).map_err(e2s)?;
    let ref_files: Vec<PathBuf> = reference.history.iter().chain(&reference.restart).cloned().collect();
    let ref_bytes: Vec<Vec<u8>> = ref_files.iter().map(|p| fs::read(p).unwrap()).collect();
    let mut runs = 0;
    for scheme in Scheme::ALL {
        for workers in [1, 2, 4, 8] {
            let mut c = case("inv", &tmp.join(format!("{scheme}_{workers}")));
            c.workers.lnd = workers;
            c.scheme = scheme;
            c.aggregators = workers.min(2);
            let out = run_case(&c).map_err(e2s)?;
            let files: Vec<&PathBuf> = out.history.iter().chain(&out.restart).collect();
            check(files.len() == ref_files.len(), || format!("{scheme} x{workers}: file count differs"))?;
            for (f, want) in files.iter().zip(&ref_bytes) {
                let got = fs::read(f).map_err(e2s)?;
                check(&got == want, || format!("{scheme} x{workers}: {} differs", name_of(f)))?;
            }
            runs += 1;
        }
    }
    Ok(format!("{runs} runs (3 schemes x workers 1,2,4,8), {} files each, byte-identical to the 1-worker reference", ref_files.len()))
}

// 3 ---------------------------------------------------------------------------

fn restart_transparency(tmp: &Path) -> Outcome {
    let whole = case("rst", &tmp.join("whole"));
    let w = run_case(&whole).map_err(e2s)?;
    let mut first = case("rst", &tmp.join("split"));
    first.n_days = 3;
    let s = run_case(&first).map_err(e2s)?;
    let bundle = RestartBundle::read(&first.out_dir, "rst", s.end_time).map_err(e2s)?;
    let r = resume_case(&bundle, &first, 2).map_err(e2s)?;
    check(r.end_time == w.end_time, || format!("resumed run ends at {}, whole at {}", r.end_time, w.end_time))?;
    let mut n = 0;
    for f in w.history.iter().chain(&w.restart) {
        let other = first.out_dir.join(name_of(f));
        let (a, b) = (fs::read(f).map_err(e2s)?, fs::read(&other).map_err(|e| format!("{}: {e}", other.display()))?);
        check(a == b, || format!("{} differs between the split and whole runs", name_of(f)))?;
        n += 1;
    }
    Ok(format!("3+2 day split reproduces all {n} history and restart files of the 5-day run byte for byte"))
}

// 4 ---------------------------------------------------------------------------

fn daily_preservation() -> Outcome {
    let d = aksp_mini().map_err(e2s)?;
    let period = Period::new(NaiveDate::from_ymd_opt(2014, 7, 1).unwrap(), 31).unwrap();
    let mut worst_rel: f64 = 0.0;
    let mut checked = 0u64;
    for seed in 0..10u64 {
        for daily in synth_forcing(seed * 7919 + 3, &d, &period).map_err(e2s)? {
            let fm = downscale_month(&daily, &d).map_err(e2s)?;
            let nd = daily.values[0].len();
            for var in ForcingVar::ALL {
                for day in 0..nd {
                    let land = d.compact(&daily.values[var.index()][day]).map_err(e2s)?;
                    for (k, &want) in land.iter().enumerate() {
                        let steps: Vec<f64> = (0..STEPS_PER_DAY).map(|s| fm.get(var, day * STEPS_PER_DAY + s, k)).collect();
                        let sum: f64 = steps.iter().sum();
                        checked += 1;
                        match var.downscale_mode() {
                            DownscaleMode::Additive => {
                                let mean = sum / STEPS_PER_DAY as f64;
                                check(mean == want, || format!("seed {seed} {var} day {day} cell {k}: mean {mean:e} vs {want:e}"))?;
                            }
                            mode => {
                                let agg = if mode == DownscaleMode::SumPreserving { sum } else { sum / STEPS_PER_DAY as f64 };
                                let rel = if want == 0.0 { agg.abs() } else { ((agg - want) / want).abs() };
                                worst_rel = worst_rel.max(rel);
                                check(rel <= 1e-12, || format!("seed {seed} {var} day {day} cell {k}: relative error {rel:e}"))?;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(format!("{checked} cell-days over 10 seeds; additive exact, others within {worst_rel:.1e} relative"))
}

// 5 ---------------------------------------------------------------------------

fn random_model(rng: &mut ChaCha8Rng) -> (CdfFileModel, Vec<VarData>) {
    let cdf5 = rng.gen_bool(0.5);
    let mut m = CdfFileModel::new(if cdf5 { Variant::Cdf5 } else { Variant::Cdf2 });
    let with_rec = rng.gen_bool(0.6);
    if with_rec {
        m.add_record_dim("time").unwrap();
        m.numrecs = rng.gen_range(0..4);
    }
    let ndims = rng.gen_range(1..=4);
    for i in 0..ndims {
        m.add_dim(&format!("d{i}"), rng.gen_range(1..6)).unwrap();
    }
    for i in 0..rng.gen_range(0..3) {
        let v = match rng.gen_range(0..3) {
            0 => AttrValue::Text(format!("attr {i}")),
            1 => AttrValue::Double(vec![rng.gen(); rng.gen_range(1..3)]),
            _ => AttrValue::Int(vec![rng.gen(); rng.gen_range(1..4)]),
        };
        m.put_attr(&format!("g{i}"), v).unwrap();
    }
    let types: &[NcType] =
        if cdf5 { &[NcType::Int, NcType::Float, NcType::Double, NcType::Int64] } else { &[NcType::Int, NcType::Float, NcType::Double] };
    for i in 0..rng.gen_range(0..7) {
        let mut dims: Vec<String> = (0..rng.gen_range(0..=ndims.min(3))).map(|_| format!("d{}", rng.gen_range(0..ndims))).collect();
        if with_rec && rng.gen_bool(0.5) {
            dims.insert(0, "time".into());
        }
        let refs: Vec<&str> = dims.iter().map(String::as_str).collect();
        m.add_var(&format!("v{i}"), types[rng.gen_range(0..types.len())], &refs).unwrap();
        if rng.gen_bool(0.3) {
            m.put_var_attr(&format!("v{i}"), "units", AttrValue::Text("m".into())).unwrap();
        }
    }
    let data = m
        .vars
        .iter()
        .map(|v| {
            let n = m.total_elems(v) as usize;
            match v.nc_type {
                NcType::Int => VarData::Int((0..n).map(|_| rng.gen()).collect()),
                NcType::Int64 => VarData::Int64((0..n).map(|_| rng.gen()).collect()),
                NcType::Float => VarData::Float((0..n).map(|_| f32::from_bits(rng.gen())).collect()),
                _ => VarData::Double((0..n).map(|_| f64::from_bits(rng.gen())).collect()),
            }
        })
        .collect();
    (m, data)
}

fn same_bits(a: &VarData, b: &VarData) -> bool {
    a.nc_type() == b.nc_type() && a.len() == b.len() && (0..a.len()).all(|i| a.bits(i) == b.bits(i))
}

fn hex(s: &str) -> Vec<u8> {
    hex::decode(s.split_whitespace().collect::<String>()).unwrap()
}

/// One record and one fixed dimension, a text attribute, an INT and a FLOAT variable.
const GOLDEN_CDF2: &str = "43444602 00000001
    0000000A 00000002 00000004 74696D65 00000000 00000008 67726964 63656C6C 00000002
    0000000C 00000001 00000005 7469746C 65000000 00000002 00000002 61620000
    0000000B 00000002
    00000004 61726561 00000001 00000001 00000000 00000000 00000004 00000008 00000000000000A8
    00000001 54000000 00000002 00000000 00000001 00000000 00000000 00000005 00000008 00000000000000B0
    00000001 FFFFFFFF 3F800000 40000000";

fn codec(tmp: &Path) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for i in 0..1000 {
        let (m, data) = random_model(&mut rng);
        let bytes = write_file(&m, &data).map_err(e2s)?;
        let size = m.compute_size().map_err(e2s)?.total_bytes;
        check(bytes.len() as u64 == size, || format!("model {i}: {} bytes emitted, compute_size says {size}", bytes.len()))?;
        let mut r = CdfReader::from_bytes(bytes).map_err(e2s)?;
        check(r.model() == &m, || format!("model {i}: header does not round trip"))?;
        for (v, d) in m.vars.iter().zip(&data) {
            let back = r.read_var(&v.name).map_err(e2s)?;
            check(same_bits(&back, d), || format!("model {i}: {} does not round trip", v.name))?;
        }
    }

    // Emitted files of a real run, plus the generated inputs.
    let c = case("corpus", &tmp.join("corpus"));
    run_case(&c).map_err(e2s)?;
    let d = aksp_mini().map_err(e2s)?;
    d.write(&c.out_dir.join("domain.nc")).map_err(e2s)?;
    let period = Period::new(NaiveDate::from_ymd_opt(2014, 7, 1).unwrap(), 2).unwrap();
    kiloland::forcing::generate_files(1, &d, &period, &c.out_dir).map_err(e2s)?;
    let corpus = nc_files(&c.out_dir);
    for f in &corpus {
        let r = CdfReader::open(f).map_err(e2s)?;
        let want = r.model().compute_size().map_err(e2s)?.total_bytes;
        let got = fs::metadata(f).map_err(e2s)?.len();
        check(got == want, || format!("{}: {got} bytes on disk, compute_size says {want}", name_of(f)))?;
    }

    let mut m = CdfFileModel::new(Variant::Cdf2);
    m.add_record_dim("time").unwrap();
    m.add_dim("gridcell", 2).unwrap();
    m.put_attr("title", AttrValue::Text("ab".into())).unwrap();
    m.add_var("area", NcType::Int, &["gridcell"]).unwrap();
    m.add_var("T", NcType::Float, &["time", "gridcell"]).unwrap();
    m.numrecs = 1;
    let golden = write_file(&m, &[VarData::Int(vec![1, -1]), VarData::Float(vec![1.0, 2.0])]).map_err(e2s)?;
    check(golden == hex(GOLDEN_CDF2), || "golden CDF-2 fixture mismatch".into())?;

    // Aggregated writes against the serial writer.
    let n = 1000u64;
    let mut m = CdfFileModel::new(Variant::Cdf5);
    m.add_record_dim("time").unwrap();
    m.add_dim("lev", 3).unwrap();
    m.add_dim("gridcell", n).unwrap();
    m.add_var("time", NcType::Double, &["time"]).unwrap();
    m.add_var("TSOI", NcType::Float, &["time", "gridcell"]).unwrap();
    m.add_var("soil", NcType::Double, &["lev", "gridcell"]).unwrap();
    m.add_var("GPP", NcType::Double, &["time", "lev", "gridcell"]).unwrap();
    m.numrecs = 4;
    let tsoi: Vec<f32> = (0..4 * n).map(|i| (i as f32).sin()).collect();
    let soil: Vec<f64> = (0..3 * n).map(|i| (i as f64).sqrt()).collect();
    let gpp: Vec<f64> = (0..12 * n).map(|i| (i as f64) * 0.25 - 7.0).collect();
    let serial = write_file(&m, &[VarData::Double(vec![0., 1., 2., 3.]), tsoi.clone().into(), soil.clone().into(), gpp.clone().into()])
        .map_err(e2s)?;
    let mut n_cfg = 0;
    for scheme in Scheme::ALL {
        let part = partition(n as usize, 8, scheme, None).map_err(e2s)?;
        let io1 = build_iodecomp(&part, &[("gridcell", n)], 4).map_err(e2s)?;
        let io3 = build_iodecomp(&part, &[("lev", 3), ("gridcell", n)], 8).map_err(e2s)?;
        let per_rank = |recs: usize, per: usize, glob: &dyn Fn(usize) -> Vec<Vec<f64>>| -> Vec<Vec<f64>> {
            let mut locals = vec![Vec::new(); 8];
            for r in 0..recs {
                for (l, x) in locals.iter_mut().zip(glob(r * per)) {
                    l.extend(x);
                }
            }
            locals
        };
        let tsoi_l: Vec<Vec<f32>> = {
            let mut locals = vec![Vec::new(); 8];
            for r in 0..4 {
                for (l, x) in locals.iter_mut().zip(io1.gather(&tsoi[r * n as usize..(r + 1) * n as usize]).unwrap()) {
                    l.extend(x);
                }
            }
            locals
        };
        let soil_l = io3.gather(&soil).map_err(e2s)?;
        let gpp_l = per_rank(4, 3 * n as usize, &|off| io3.gather(&gpp[off..off + 3 * n as usize]).unwrap());
        let sources = vec![
            VarSource::Serial(VarData::Double(vec![0., 1., 2., 3.])),
            VarSource::Distributed(tsoi_l.into_iter().map(VarData::from).collect()),
            VarSource::Distributed(soil_l.into_iter().map(VarData::from).collect()),
            VarSource::Distributed(gpp_l.into_iter().map(VarData::from).collect()),
        ];
        for a in [1, 2, 4] {
            for buf in [1024, DEFAULT_BUFFER_LIMIT] {
                let mut out = Vec::new();
                write_cdf_aggregated(&m, &sources, &part, a, buf, &mut out).map_err(e2s)?;
                check(out == serial, || format!("aggregated write {scheme} A={a} buffer={buf} differs from serial"))?;
                n_cfg += 1;
            }
        }
    }
    Ok(format!(
        "1000 random models round trip with exact sizes; {} emitted files sized exactly; golden header matches; {n_cfg} aggregated configurations identical to serial",
        corpus.len()
    ))
}

// 6 ---------------------------------------------------------------------------

const REF_CORES: [usize; 5] = [6_300, 12_600, 25_200, 50_400, 100_800];
const REF_RUNS: [(&str, [(f64, f64); 5]); 3] = [
    ("ATM", [(132.749, 8.92), (48.765, 24.27), (31.120, 38.03), (68.089, 17.38), (52.85, 22.35)]),
    ("CPL", [(142.032, 8.33), (39.008, 30.34), (3.886, 304.57), (1.573, 752.0), (3.32, 366.51)]),
    ("LND", [(939.447, 1.26), (388.043, 3.05), (185.725, 6.37), (134.960, 8.7), (102.042, 11.60)]),
];

fn reference_sypd() -> Outcome {
    let mut misses = Vec::new();
    for (comp, row) in REF_RUNS {
        for (i, &(secs, want)) in row.iter().enumerate() {
            let got = compute_sypd(secs, 5.0).map_err(e2s)?;
            let ok = if want < 50.0 { (got - want).abs() <= 0.01 } else { (got - want).abs() <= 0.01 * want };
            if !ok {
                misses.push(format!("{comp}@{} {secs}s -> {got:.4} vs {want}", REF_CORES[i]));
            }
        }
    }
    let recs: Vec<ScalingRecord> = REF_RUNS[2]
        .1
        .iter()
        .zip(REF_CORES)
        .map(|(&(t, _), p)| ScalingRecord::new("aksp", Component::Lnd, p, 0.0, t, 5.0, 21_624_900).unwrap())
        .collect();
    let t = speedup_table(recs, 0).map_err(e2s)?;
    let (e50, e100) = (t.efficiency[3] * 100.0, t.efficiency[4] * 100.0);
    if (e50 - 87.0).abs() > 1.0 {
        misses.push(format!("efficiency 6300->50400 {e50:.2}%"));
    }
    if (e100 - 58.0).abs() > 1.0 {
        misses.push(format!("efficiency 6300->100800 {e100:.2}%"));
    }
    let summary = format!("efficiency 6300->50400 {e50:.2}%, 6300->100800 {e100:.2}%");
    if misses.is_empty() {
        Ok(format!("15 SYPD pairs within tolerance; {summary}"))
    } else {
        Err(format!("{} of 15 SYPD pairs out of tolerance ({}); {summary}", misses.len(), misses.join("; ")))
    }
}

// 7 ---------------------------------------------------------------------------

fn reference_weak() -> Outcome {
    let recs: Vec<ScalingRecord> = [(42, 316.927), (420, 374.488), (4_200, 392.896), (12_600, 388.043)]
        .iter()
        .map(|&(p, t)| ScalingRecord::new("weak", Component::Lnd, p, 0.0, t, 5.0, p * 1_716).unwrap())
        .collect();
    let eff = weak_efficiency(&recs, 0).map_err(e2s)?;
    let want = [100.0, 84.6, 80.7, 81.7];
    for (e, w) in eff.iter().zip(want) {
        check((e * 100.0 - w).abs() <= 0.5, || format!("{:.2}% vs {w}%", e * 100.0))?;
    }
    Ok(format!("weak efficiency {:?}%", eff.iter().map(|e| format!("{:.1}", e * 100.0)).collect::<Vec<_>>()))
}

// 8 ---------------------------------------------------------------------------

fn bandwidth_figures() -> Outcome {
    let small = bandwidth(15.14, 21.51).map_err(e2s)?;
    let big = bandwidth(4_540.54, 503.12).map_err(e2s)?;
    check((small.mib_per_s - 671.8).abs() / 671.8 <= 0.005, || format!("{:.2} MiB/s", small.mib_per_s))?;
    check((big.gib_per_s - 8.4).abs() / 8.4 <= 0.005, || format!("{:.4} GiB/s", big.gib_per_s))?;
    Ok(format!("{:.2} MiB/s (reference 671.8), {:.3} GiB/s (reference 8.4)", small.mib_per_s, big.gib_per_s))
}

// 9, 10 -----------------------------------------------------------------------

fn desk_case(name: &str, preset: &str, dir: &Path) -> CaseConfig {
    let mut c = CaseConfig::new(name, DomainSource::Preset(preset.into()), dir);
    c.n_days = 1;
    c.history_interval = HistoryInterval::EndOfRun;
    c.restart_interval = RestartInterval::None;
    c
}

fn strong_scaling(tmp: &Path) -> Outcome {
    let hw = hardware_threads();
    let base = desk_case("strong", "synthetic:400x250:1.0:5", tmp);
    let opts = SuiteOptions { mode: Mode::Strong, counts: vec![1, 2, 4], oversubscribe: hw < 4, out_dir: tmp.join("strong") };
    let res = run_scaling_suite(&base, &opts).map_err(e2s)?;
    let lnd = res.lnd();
    let times: Vec<f64> = lnd.records.iter().map(|r| r.run_seconds).collect();
    let detail = format!(
        "n_land {}, LND seconds {:?}, speedup at 4 = {:.2}, {hw} hardware threads",
        res.runs[0].n_land,
        times.iter().map(|t| format!("{t:.3}")).collect::<Vec<_>>(),
        lnd.speedup[2]
    );
    check(res.runs[0].n_land == 100_000, || format!("case has {} cells", res.runs[0].n_land))?;
    check(res.all_equivalent(), || format!("outputs differ across worker counts; {detail}"))?;
    check(hw >= 4, || format!("blocked: needs at least 4 cores; {detail}"))?;
    check(times.windows(2).all(|w| w[1] < w[0]) && lnd.speedup[2] >= 2.0, || detail.clone())?;
    Ok(detail)
}

fn weak_scaling(tmp: &Path) -> Outcome {
    let hw = hardware_threads();
    let base = desk_case("weak", "synthetic:50x50:0.68:3", tmp);
    let opts = SuiteOptions { mode: Mode::Weak, counts: vec![1, 2, 4], oversubscribe: hw < 4, out_dir: tmp.join("weak") };
    let res = run_scaling_suite(&base, &opts).map_err(e2s)?;
    let lnd = res.lnd();
    let t0 = lnd.records[0].run_seconds;
    let dev: Vec<f64> = lnd.records.iter().map(|r| (r.run_seconds - t0).abs() / t0).collect();
    let detail = format!(
        "{} cells/worker, LND seconds {:?}, max deviation {:.0}%, {hw} hardware threads",
        res.runs[0].n_land,
        lnd.records.iter().map(|r| format!("{:.4}", r.run_seconds)).collect::<Vec<_>>(),
        dev.iter().cloned().fold(0.0, f64::max) * 100.0
    );
    check(res.runs[0].n_land == 1_700, || format!("base case has {} cells", res.runs[0].n_land))?;
    check(res.all_equivalent(), || format!("replicated outputs are not exact copies; {detail}"))?;
    check(hw >= 4, || format!("blocked: needs at least 4 cores; {detail}"))?;
    check(dev.iter().all(|&d| d <= 0.25), || detail.clone())?;
    Ok(detail)
}

// 11 --------------------------------------------------------------------------

/// Bytes of the variables that carry the gridcell dimension, per record for
/// record variables plus the fixed ones, from the size accounting.
fn gridcell_payload(path: &Path) -> Result<(u64, u64), String> {
    let r = CdfReader::open(path).map_err(e2s)?;
    let m = r.model();
    let size = m.compute_size().map_err(e2s)?;
    check(fs::metadata(path).map_err(e2s)?.len() == size.total_bytes, || format!("{}: size accounting mismatch", name_of(path)))?;
    let g = m.dim_id("gridcell").ok_or_else(|| format!("{} has no gridcell dimension", name_of(path)))?;
    let (mut rec, mut fixed) = (0, 0);
    for (v, l) in m.vars.iter().zip(&r.layout().vars) {
        if v.dims.contains(&g) {
            if l.is_record {
                rec += l.vsize;
            } else {
                fixed += l.vsize;
            }
        }
    }
    Ok((rec, fixed))
}

fn size_proportionality(tmp: &Path) -> Outcome {
    let base = case("size", &tmp.join("s1"));
    let mut rep = base.clone();
    rep.replicate = 10;
    rep.out_dir = tmp.join("s10");
    let a = run_case(&base).map_err(e2s)?;
    run_case(&rep).map_err(e2s)?;
    let mut lines = Vec::new();
    for f in a.history.iter().chain(&a.restart) {
        if CdfReader::open(f).map_err(e2s)?.model().dim_id("gridcell").is_none() {
            continue;
        }
        let (r1, f1) = gridcell_payload(f)?;
        let (r10, f10) = gridcell_payload(&rep.out_dir.join(name_of(f)))?;
        check(r10 == 10 * r1 && f10 == 10 * f1, || format!("{}: x1 ({r1}, {f1}) vs x10 ({r10}, {f10})", name_of(f)))?;
        lines.push(format!("{}", r1 + f1));
    }
    check(!lines.is_empty(), || "no gridcell payload found".into())?;
    Ok(format!("{} files with gridcell payload scale exactly x10 (x1 payload bytes {})", lines.len(), lines.join(", ")))
}

// 12 --------------------------------------------------------------------------

fn spinup() -> Outcome {
    let p = ToyParams::default();
    let f = CellForcing { tbot: 290.0, prect: 5.0, fsds: 300.0 };
    let mut s = CellState::initial(&p);
    // The first step fills the bucket; from then on gpp is constant.
    let gpp = p.gpp_coeff * f.fsds;
    let target = p.alloc * gpp / p.k_leaf;
    let hours = (5.0 / p.k_leaf).ceil() as usize;
    for _ in 0..hours {
        s = step_cell(&s, &f, &p, 1.0).0;
    }
    let rel = (s.c_leaf - target).abs() / target;
    check(rel < 0.01, || format!("c_leaf {:.3} vs fixed point {target:.3} ({:.2}%)", s.c_leaf, rel * 100.0))?;
    Ok(format!("c_leaf {:.3} vs fixed point {target:.3} after {hours} h ({:.2}% off)", s.c_leaf, rel * 100.0))
}

fn main() -> ExitCode {
    let tmp = tempfile::tempdir().expect("temp dir");
    let t = tmp.path();
    let sub = |n: &str| {
        let p = t.join(n);
        fs::create_dir_all(&p).unwrap();
        p
    };
    let criteria: Vec<(u32, &str, Box<dyn Fn() -> Outcome>)> = vec![
        (1, "replication equivalence", Box::new(|| replication(&sub("c1")))),
        (2, "partition and worker invariance", Box::new(|| worker_invariance(&sub("c2")))),
        (3, "restart transparency", Box::new(|| restart_transparency(&sub("c3")))),
        (4, "daily-value preservation", Box::new(daily_preservation)),
        (5, "codec correctness", Box::new(|| codec(&sub("c5")))),
        (6, "reference SYPD and strong efficiency", Box::new(reference_sypd)),
        (7, "reference weak efficiency", Box::new(reference_weak)),
        (8, "bandwidth reproduction", Box::new(bandwidth_figures)),
        (9, "desk strong scaling", Box::new(|| strong_scaling(&sub("c9")))),
        (10, "desk weak scaling", Box::new(|| weak_scaling(&sub("c10")))),
        (11, "size proportionality", Box::new(|| size_proportionality(&sub("c11")))),
        (12, "spin-up convergence", Box::new(spinup)),
    ];
    let mut failed = Vec::new();
    for (n, name, f) in &criteria {
        let t0 = Instant::now();
        let outcome = f();
        emit(*n, name, t0.elapsed().as_secs_f64(), &outcome);
        if outcome.is_err() {
            failed.push(n.to_string());
        }
    }
    let mut out = std::io::stdout().lock();
    if failed.is_empty() {
        let _ = writeln!(out, "acceptance: all {} criteria passed", criteria.len());
        ExitCode::SUCCESS
    } else {
        let _ = writeln!(out, "acceptance: {} of {} criteria failed ({})", failed.len(), criteria.len(), failed.join(", "));
        ExitCode::FAILURE
    }
}
