use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use log::info;
use serde_json::json;
use sha2::{Digest, Sha256};

use kiloland::cdf5::{dump_header, CdfReader};
use kiloland::compare::{check_replication, compare_files, Tolerance, Verdict};
use kiloland::config::KvConfig;
use kiloland::domain::{self, DomainSpec, Selector};
use kiloland::forcing::{generate_files, Period};
use kiloland::landsim::{latest_bundle_time, preset_domain, resume_case, run_case, CaseConfig, RestartBundle, RunOutput};
use kiloland::perf::{self, CostModel, Mode, SuiteOptions};
use kiloland::surface::{self, Method};

/// Kilometer-scale land simulation toolkit.
#[derive(Parser, Debug)]
#[command(name = "kiloland", version, about)]
struct Cli {
    /// Case configuration file (key = value lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed overriding the configured one.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, env = "KILOLAND_OUT")]
    out: Option<PathBuf>,
    /// Land worker count overriding the configured one.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "warn")]
    log_level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a domain file from a synthetic mask or a named preset.
    MakeDomain(MakeDomain),
    /// Generate downscaled 3-hourly forcing files for a domain.
    GenForcing(GenForcing),
    /// Interpolate a synthetic coarse surface dataset onto a domain.
    GenSurface(GenSurface),
    /// Extract a subdomain by bounding box or gridcell IDs.
    Subset(Subset),
    /// Concatenate k copies of a domain.
    Replicate(Replicate),
    /// Run a case from its configuration.
    Run(RunArgs),
    /// Continue a case from a restart bundle.
    Resume(ResumeArgs),
    /// Compare two output files element by element.
    Compare(CompareArgs),
    /// Strong or weak scaling experiment over land worker counts.
    Bench(BenchArgs),
    /// Predict land run times at other rank counts from a cost model.
    Predict(PredictArgs),
    /// Print a file header in CDL form.
    Dump(DumpArgs),
    /// Render scaling CSV files as SVG speedup charts.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct MakeDomain {
    /// aksp_mini, na_mini:<seed> or synthetic:<R>x<C>:<frac>:<seed>.
    #[arg(long, conflicts_with_all = ["rows", "cols"])]
    preset: Option<String>,
    #[arg(long, requires = "cols")]
    rows: Option<usize>,
    #[arg(long, requires = "rows")]
    cols: Option<usize>,
    #[arg(long, default_value_t = 0.6)]
    land_fraction: f64,
    /// Cell size in meters.
    #[arg(long, default_value_t = 1000.0)]
    cell_size: f64,
    #[arg(long, default_value = "domain")]
    name: String,
}

#[derive(Args, Debug)]
struct DomainArg {
    /// Domain file, or preset:<name>.
    #[arg(long)]
    domain: String,
}

#[derive(Args, Debug)]
struct GenForcing {
    #[command(flatten)]
    domain: DomainArg,
    /// First day, YYYY-MM-DD.
    #[arg(long, default_value = "2014-07-01")]
    start: String,
    #[arg(long, default_value_t = 5)]
    days: u32,
}

#[derive(Args, Debug)]
struct GenSurface {
    #[command(flatten)]
    domain: DomainArg,
    #[arg(long, default_value = "nearest")]
    method: Method,
    /// Extra coarse fields to carry through.
    #[arg(long, value_delimiter = ',')]
    extra: Vec<String>,
    /// Also write 2D copies on the domain grid.
    #[arg(long)]
    two_d: bool,
    #[arg(long, default_value = "surfdata")]
    name: String,
}

#[derive(Args, Debug)]
struct Subset {
    #[command(flatten)]
    domain: DomainArg,
    /// x_min,x_max,y_min,y_max in projected meters.
    #[arg(long, value_delimiter = ',', conflicts_with = "ids")]
    bbox: Option<Vec<f64>>,
    /// Gridcell IDs.
    #[arg(long, value_delimiter = ',')]
    ids: Option<Vec<i64>>,
    #[arg(long, default_value = "subset")]
    name: String,
}

#[derive(Args, Debug)]
struct Replicate {
    #[command(flatten)]
    domain: DomainArg,
    #[arg(long)]
    factor: usize,
    #[arg(long, default_value = "replica")]
    name: String,
}

#[derive(Args, Debug)]
struct CaseArg {
    /// Case configuration; defaults to --config.
    #[arg(long)]
    case: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    case: CaseArg,
}

#[derive(Args, Debug)]
struct ResumeArgs {
    #[command(flatten)]
    case: CaseArg,
    /// Days to run past the restart point.
    #[arg(long)]
    days: u32,
    /// Restart stamp YYYY-MM-DD-SSSSS; defaults to the latest bundle.
    #[arg(long)]
    from: Option<String>,
}

#[derive(Args, Debug)]
struct CompareArgs {
    a: PathBuf,
    b: PathBuf,
    /// bit_exact, abs:<eps> or rel:<eps>.
    #[arg(long, default_value = "bit_exact")]
    tolerance: Tolerance,
    /// Treat `b` as `k` copies of `a` along the gridcell dimension.
    #[arg(long, value_name = "K", conflicts_with = "tolerance")]
    replication: Option<usize>,
    /// Write the per-variable report as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[command(flatten)]
    case: CaseArg,
    #[arg(long, default_value = "strong")]
    mode: Mode,
    /// Land worker counts; the first is the baseline.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
    counts: Vec<usize>,
    /// Allow more workers than hardware threads (timings become meaningless).
    #[arg(long)]
    oversubscribe: bool,
}

#[derive(Args, Debug)]
struct PredictArgs {
    /// Fit the model to the LND run rows of a scaling CSV.
    #[arg(long, conflicts_with = "calibrate", requires_all = ["fit_cells", "fit_steps"])]
    from_csv: Option<PathBuf>,
    /// Land cells of the runs in the CSV.
    #[arg(long)]
    fit_cells: Option<usize>,
    /// Time steps of the runs in the CSV.
    #[arg(long)]
    fit_steps: Option<u64>,
    /// One measured land run: seconds,cells,steps,workers.
    #[arg(long, value_delimiter = ',')]
    calibrate: Option<Vec<f64>>,
    /// Sync cost per step per log2(P), added to a calibrated model.
    #[arg(long, default_value_t = 0.0)]
    c_sync: f64,
    /// Land cells of the predicted case.
    #[arg(long)]
    cells: usize,
    #[arg(long, default_value_t = 120)]
    steps: u64,
    #[arg(long, value_delimiter = ',', required = true)]
    ranks: Vec<usize>,
    #[arg(long, default_value = "predicted")]
    name: String,
}

#[derive(Args, Debug)]
struct DumpArgs {
    file: PathBuf,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(required = true)]
    csv: Vec<PathBuf>,
}

/// Misuse that clap cannot catch; exits with the usage code.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

/// A check ran and failed (outputs differ, equivalence broken).
#[derive(Debug)]
struct Failed(String);

impl std::fmt::Display for Failed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Failed {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<Usage>().is_some() {
        return 2;
    }
    if e.downcast_ref::<Failed>().is_some() {
        return 1;
    }
    for cause in e.chain() {
        if let Some(k) = cause.downcast_ref::<kiloland::Error>() {
            return if k.is_io_or_integrity() { 3 } else { 1 };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 3;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::new().parse_filters(&cli.log_level).format_timestamp(None).init();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn out_dir(cli: &Cli) -> anyhow::Result<PathBuf> {
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn load_domain(arg: &str) -> anyhow::Result<DomainSpec> {
    Ok(match arg.strip_prefix("preset:") {
        Some(p) => preset_domain(p)?,
        None => DomainSpec::read(Path::new(arg))?,
    })
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Provenance record written next to a command's outputs.
fn provenance(dir: &Path, command: &str, config_text: &str, seed: Option<u64>, outputs: &[PathBuf]) -> anyhow::Result<()> {
    let rec = json!({
        "command": command,
        "config_sha256": sha256_hex(config_text.as_bytes()),
        "config": config_text,
        "seed": seed,
        "kiloland_version": env!("CARGO_PKG_VERSION"),
        "file_format": "CDF-5",
        "outputs": outputs.iter().map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned())).collect::<Vec<_>>(),
    });
    let path = dir.join(format!("{command}.provenance.json"));
    fs::write(&path, serde_json::to_string_pretty(&rec)? + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn write_domain(cli: &Cli, d: &DomainSpec, name: &str, command: &str, args: &str) -> anyhow::Result<()> {
    let dir = out_dir(cli)?;
    let path = dir.join(format!("{name}.nc"));
    d.write(&path)?;
    provenance(&dir, command, args, cli.seed, std::slice::from_ref(&path))?;
    println!("domain={}", path.display());
    println!("rows={} cols={} n_land={}", d.grid().n_rows, d.grid().n_cols, d.n_land());
    Ok(())
}

fn case_config(cli: &Cli, arg: &CaseArg) -> anyhow::Result<(CaseConfig, String)> {
    let path = arg
        .case
        .as_ref()
        .or(cli.config.as_ref())
        .ok_or_else(|| usage("a case configuration is required (--case or --config)"))?;
    let mut kv = KvConfig::load(path)?;
    if let Some(s) = cli.seed {
        kv.set("case.seed", s);
    }
    if let Some(w) = cli.workers {
        kv.set("case.workers.lnd", w);
    }
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut cfg = CaseConfig::from_config(&kv, &base)?;
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    fs::create_dir_all(&cfg.out_dir).with_context(|| format!("creating {}", cfg.out_dir.display()))?;
    Ok((cfg, kv.to_string()))
}

fn report_run(out: &RunOutput) {
    let t = &out.timing;
    println!("n_land={} steps={} sim_days={}", out.n_land, t.n_steps, t.sim_days);
    for p in out.history.iter().chain(&out.restart) {
        println!("output={}", p.display());
    }
    println!(
        "timing init: atm={:.3} cpl={:.3} lnd={:.3} run: atm={:.3} cpl={:.3} lnd={:.3} history={:.3} restart={:.3} total={:.3}",
        t.atm_init, t.cpl_init, t.lnd_init, t.atm_run, t.cpl_run, t.lnd_run, t.history_write, t.restart_write, t.total
    );
    if let Ok(sypd) = perf::compute_sypd(t.total.max(1e-9), t.sim_days) {
        println!("sypd={sypd:.3}");
    }
    print!("{}", perf::timers::render(&t.timers));
}

fn run_outputs(out: &RunOutput) -> Vec<PathBuf> {
    out.history.iter().chain(&out.restart).cloned().collect()
}

fn parse_stamp(s: &str) -> anyhow::Result<chrono::NaiveDateTime> {
    let (date, secs) = s.rsplit_once('-').ok_or_else(|| usage(format!("bad restart stamp {s:?}")))?;
    let date = chrono::NaiveDate::parse_from_str(date, "%Y-%m-%d").map_err(|_| usage(format!("bad restart stamp {s:?}")))?;
    let secs: u32 = secs.parse().map_err(|_| usage(format!("bad restart stamp {s:?}")))?;
    Ok(date.and_hms_opt(0, 0, 0).unwrap() + chrono::Duration::seconds(secs as i64))
}

fn dispatch(cli: &Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::MakeDomain(a) => {
            let (d, args) = match (&a.preset, a.rows, a.cols) {
                (Some(p), _, _) => (preset_domain(p)?, format!("preset={p}")),
                (None, Some(r), Some(c)) => {
                    let seed = cli.seed.unwrap_or(1);
                    let d = domain::synthetic(r, c, a.cell_size, a.land_fraction, seed)?;
                    (d, format!("rows={r}\ncols={c}\nland_fraction={}\ncell_size={}\nseed={seed}", a.land_fraction, a.cell_size))
                }
                _ => return Err(usage("make-domain needs --preset or --rows and --cols")),
            };
            write_domain(cli, &d, &a.name, "make-domain", &args)
        }
        Command::Subset(a) => {
            let d = load_domain(&a.domain.domain)?;
            let sel = match (&a.bbox, &a.ids) {
                (Some(b), None) if b.len() == 4 => Selector::BBox { x_min: b[0], x_max: b[1], y_min: b[2], y_max: b[3] },
                (None, Some(ids)) => Selector::Ids(ids.clone()),
                _ => return Err(usage("subset needs --bbox x_min,x_max,y_min,y_max or --ids")),
            };
            let s = domain::subset(&d, &sel)?;
            write_domain(cli, &s, &a.name, "subset", &format!("domain={}\nselector={sel:?}", a.domain.domain))
        }
        Command::Replicate(a) => {
            let d = load_domain(&a.domain.domain)?;
            let r = domain::replicate(&d, a.factor)?;
            write_domain(cli, &r, &a.name, "replicate", &format!("domain={}\nfactor={}", a.domain.domain, a.factor))
        }
        Command::GenForcing(a) => {
            let d = load_domain(&a.domain.domain)?;
            let start = chrono::NaiveDate::parse_from_str(&a.start, "%Y-%m-%d").map_err(|_| usage(format!("bad --start {:?}", a.start)))?;
            let seed = cli.seed.unwrap_or(1);
            let dir = out_dir(cli)?;
            let files = generate_files(seed, &d, &Period::new(start, a.days)?, &dir)?;
            let args = format!("domain={}\nstart={}\ndays={}\nseed={seed}", a.domain.domain, a.start, a.days);
            provenance(&dir, "gen-forcing", &args, Some(seed), &files)?;
            for f in &files {
                println!("forcing={}", f.display());
            }
            Ok(())
        }
        Command::GenSurface(a) => {
            let d = load_domain(&a.domain.domain)?;
            let seed = cli.seed.unwrap_or(1);
            let src = surface::synth_coarse_for(seed, &d, &a.extra)?;
            let ds = surface::build_surface(&d, &src, &surface::uniform_methods(&src, a.method))?;
            let dir = out_dir(cli)?;
            let path = dir.join(format!("{}.nc", a.name));
            ds.write(&d, &path, a.two_d)?;
            let args = format!("domain={}\nmethod={}\nextra={:?}\nseed={seed}", a.domain.domain, a.method.name(), a.extra);
            provenance(&dir, "gen-surface", &args, Some(seed), std::slice::from_ref(&path))?;
            println!("surface={}", path.display());
            Ok(())
        }
        Command::Run(a) => {
            let (cfg, text) = case_config(cli, &a.case)?;
            info!("running case {} for {} days", cfg.name, cfg.n_days);
            let out = run_case(&cfg)?;
            provenance(&cfg.out_dir, "run", &text, Some(cfg.seed), &run_outputs(&out))?;
            report_run(&out);
            Ok(())
        }
        Command::Resume(a) => {
            let (cfg, text) = case_config(cli, &a.case)?;
            let time = match &a.from {
                Some(s) => parse_stamp(s)?,
                None => latest_bundle_time(&cfg.out_dir, &cfg.name)?
                    .ok_or_else(|| kiloland::Error::Integrity(format!("no restart bundle for {} in {}", cfg.name, cfg.out_dir.display())))?,
            };
            let bundle = RestartBundle::read(&cfg.out_dir, &cfg.name, time)?;
            let out = resume_case(&bundle, &cfg, a.days)?;
            provenance(&cfg.out_dir, "resume", &text, Some(cfg.seed), &run_outputs(&out))?;
            report_run(&out);
            Ok(())
        }
        Command::Compare(a) => {
            let report = match a.replication {
                Some(k) => check_replication(&a.a, &a.b, k)?,
                None => compare_files(&a.a, &a.b, a.tolerance)?,
            };
            print!("{}", report.to_text());
            if let Some(p) = &a.csv {
                let f = fs::File::create(p).with_context(|| format!("writing {}", p.display()))?;
                report.write_csv(f)?;
            }
            if report.verdict == Verdict::Different {
                return Err(Failed(format!("{} and {} differ", a.a.display(), a.b.display())).into());
            }
            Ok(())
        }
        Command::Bench(a) => {
            let (cfg, text) = case_config(cli, &a.case)?;
            let opts = SuiteOptions { mode: a.mode, counts: a.counts.clone(), oversubscribe: a.oversubscribe, out_dir: cfg.out_dir.clone() };
            let res = perf::run_scaling_suite(&cfg, &opts)?;
            provenance(&cfg.out_dir, "bench", &text, Some(cfg.seed), &[res.csv.clone(), res.svg.clone()])?;
            let lnd = res.lnd();
            println!("mode={} hardware_threads={}", res.mode, perf::hardware_threads());
            for (i, r) in lnd.records.iter().enumerate() {
                println!(
                    "workers={} n_land={} lnd_seconds={:.4} speedup={:.3} efficiency={:.3} outputs={}",
                    r.cores, res.runs[i].n_land, r.run_seconds, lnd.speedup[i], lnd.efficiency[i], res.equivalence[i].1
                );
            }
            println!("csv={}", res.csv.display());
            println!("svg={}", res.svg.display());
            if !res.all_equivalent() {
                return Err(Failed("outputs differ across worker counts".into()).into());
            }
            Ok(())
        }
        Command::Predict(a) => {
            let mut model = match (&a.from_csv, &a.calibrate) {
                (Some(p), None) => {
                    let text = fs::read(p).with_context(|| format!("reading {}", p.display()))?;
                    let tables = perf::read_csv(text.as_slice())?;
                    let t = tables
                        .iter()
                        .find(|t| t.records[0].component == perf::Component::Lnd)
                        .ok_or_else(|| kiloland::Error::Perf("no LND rows in the CSV".into()))?;
                    let pts: Vec<(usize, f64)> = t.records.iter().map(|r| (r.cores, r.run_seconds)).collect();
                    CostModel::fit(&pts, a.fit_cells.unwrap_or(a.cells), a.fit_steps.unwrap_or(a.steps))?
                }
                (None, Some(c)) => {
                    if c.len() != 4 || c.iter().any(|v| !(*v > 0.0)) {
                        return Err(usage("--calibrate takes positive seconds,cells,steps,workers"));
                    }
                    CostModel::calibrate(c[0], c[1] as usize, c[2] as u64, c[3] as usize)?
                }
                _ => return Err(usage("predict needs --from-csv or --calibrate")),
            };
            if a.calibrate.is_some() {
                model.c_sync = a.c_sync;
            }
            let table = perf::predict_times(&model, &a.name, a.cells, a.steps, &a.ranks, 1)?;
            let dir = out_dir(cli)?;
            let csv = dir.join(format!("{}_model.csv", a.name));
            perf::write_csv(fs::File::create(&csv).with_context(|| format!("writing {}", csv.display()))?, &table.csv_rows())?;
            let svg = dir.join(format!("{}_model.svg", a.name));
            fs::write(&svg, perf::speedup_svg(&table, &a.name)).with_context(|| format!("writing {}", svg.display()))?;
            println!("model c_cell={:e} c_sync={:e}", model.c_cell, model.c_sync);
            for (i, r) in table.records.iter().enumerate() {
                println!(
                    "ranks={} cells_per_rank={:.0} seconds={:.4} efficiency={:.3} source=model",
                    r.cores, r.cells_per_core, r.run_seconds, table.efficiency[i]
                );
            }
            println!("csv={}", csv.display());
            Ok(())
        }
        Command::Dump(a) => {
            let r = CdfReader::open(&a.file)?;
            let name = a.file.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            print!("{}", dump_header(&name, r.model()));
            Ok(())
        }
        Command::Report(a) => {
            let dir = out_dir(cli)?;
            for p in &a.csv {
                let text = fs::read(p).with_context(|| format!("reading {}", p.display()))?;
                let tables = perf::read_csv(text.as_slice())?;
                if tables.is_empty() {
                    bail!(kiloland::Error::Perf(format!("{} has no run rows", p.display())));
                }
                for t in tables {
                    let r = &t.records[0];
                    let stem = format!("{}_{}", r.case, r.component.name().to_lowercase());
                    let svg = dir.join(format!("{stem}.svg"));
                    fs::write(&svg, perf::speedup_svg(&t, &format!("{} {}", r.case, r.component)))
                        .with_context(|| format!("writing {}", svg.display()))?;
                    println!("svg={}", svg.display());
                }
            }
            Ok(())
        }
    }
}
