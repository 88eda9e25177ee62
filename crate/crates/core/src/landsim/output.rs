//! History and restart files.

use std::fs::{self, File};
use std::path::{Path, PathBuf};

use chrono::{NaiveDateTime, Timelike};
use sha2::{Digest, Sha256};

use super::{CellState, HistoryInterval, ToyParams};
use crate::cdf5::{encode_header, AttrValue, CdfFileModel, CdfReader, Layout, NcType, VarData, Variant};
use crate::decomp::{
    build_iodecomp, rearrange_write, write_cdf_aggregated, AggregatorPlan, ByteSink, IoDecomp, Partition, VarSource,
    WriteStats,
};
use crate::domain::DomainSpec;
use crate::forcing::ForcingVar;
use crate::{Error, Result};

/// (name, units, long name) of the averaged history fields.
pub const HIST_VARS: [(&str, &str, &str); 6] = [
    ("FSNO", "1", "fraction of ground covered by snow"),
    ("H2OSOI", "mm", "soil water"),
    ("TLAI", "m2/m2", "total projected leaf area index"),
    ("TSOI", "K", "soil temperature"),
    ("QRUNOFF", "mm/h", "total runoff"),
    ("GPP", "gC/m2/h", "gross primary production"),
];

const TIME_FMT: &str = "%Y-%m-%d %H:%M:%S";

/// `YYYY-MM-DD-SSSSS`, seconds into the day.
pub fn time_stamp(t: NaiveDateTime) -> String {
    format!("{}-{:05}", t.format("%Y-%m-%d"), t.num_seconds_from_midnight())
}

fn parse_stamp(s: &str) -> Option<NaiveDateTime> {
    let (date, secs) = s.rsplit_once('-')?;
    let secs: i64 = secs.parse().ok()?;
    let d = chrono::NaiveDate::parse_from_str(date, "%Y-%m-%d").ok()?;
    Some(d.and_hms_opt(0, 0, 0)? + chrono::Duration::seconds(secs))
}

pub fn history_file_name(case: &str, t: NaiveDateTime) -> String {
    format!("{case}.elm.h0.{}.nc", time_stamp(t))
}

/// `component` is one of `elm.r`, `cpl.r`, `datm.r`, `elm.rh0`.
pub fn restart_file_name(case: &str, component: &str, t: NaiveDateTime) -> String {
    format!("{case}.{component}.{}.nc", time_stamp(t))
}

pub const RESTART_COMPONENTS: [&str; 4] = ["elm.r", "cpl.r", "datm.r", "elm.rh0"];

pub fn bundle_paths(dir: &Path, case: &str, t: NaiveDateTime) -> Vec<PathBuf> {
    RESTART_COMPONENTS.iter().map(|c| dir.join(restart_file_name(case, c, t))).collect()
}

/// Latest restart instant with a land restart file in `dir`.
pub fn latest_bundle_time(dir: &Path, case: &str) -> Result<Option<NaiveDateTime>> {
    let prefix = format!("{case}.elm.r.");
    let mut best = None;
    for entry in fs::read_dir(dir).map_err(|e| Error::file(dir, e))? {
        let name = entry?.file_name().to_string_lossy().into_owned();
        if let Some(t) = name.strip_prefix(&prefix).and_then(|r| r.strip_suffix(".nc")).and_then(parse_stamp) {
            best = best.max(Some(t));
        }
    }
    Ok(best)
}

pub(crate) fn domain_checksum(d: &DomainSpec) -> String {
    let mut h = Sha256::new();
    for id in d.land_index() {
        h.update(id.to_be_bytes());
    }
    hex::encode(h.finalize())
}

fn checksum(data: &VarData) -> String {
    let mut bytes = Vec::with_capacity(data.len() * data.nc_type().size());
    data.append_be_bytes(&mut bytes);
    hex::encode(Sha256::digest(&bytes))
}

fn text(s: impl Into<String>) -> AttrValue {
    AttrValue::Text(s.into())
}

// ---------------------------------------------------------------------------
// History

/// An open history file whose records are filled one flush at a time.
pub(crate) struct HistoryFile {
    pub path: PathBuf,
    file: File,
    model: CdfFileModel,
    layout: Layout,
    pub n_records: u64,
    pub next: u64,
}

pub(crate) struct HistoryMeta<'a> {
    pub case: &'a str,
    pub compset: &'a str,
    pub case_start: NaiveDateTime,
    pub interval: HistoryInterval,
    pub dt_hours: u32,
}

impl HistoryFile {
    pub fn create(path: PathBuf, meta: &HistoryMeta, lonlat: &[(f64, f64)], n_records: u64) -> Result<Self> {
        let n = lonlat.len() as u64;
        let mut m = CdfFileModel::new(Variant::Cdf5);
        m.add_record_dim("time")?;
        m.add_dim("gridcell", n)?;
        m.add_dim("nbnd", 2)?;
        m.put_attr("title", text("land history"))?;
        m.put_attr("case", text(meta.case))?;
        m.put_attr("compset", text(meta.compset))?;
        m.put_attr("history_interval", text(meta.interval.name()))?;
        m.put_attr("dt_hours", AttrValue::Int(vec![meta.dt_hours as i32]))?;
        m.put_attr("averaging", text("mean over time_bnds of per-step values; double accumulation"))?;
        m.add_var("lon", NcType::Double, &["gridcell"])?;
        m.put_var_attr("lon", "units", text("degrees_east"))?;
        m.add_var("lat", NcType::Double, &["gridcell"])?;
        m.put_var_attr("lat", "units", text("degrees_north"))?;
        let since = format!("days since {}", meta.case_start.format(TIME_FMT));
        m.add_var("time", NcType::Double, &["time"])?;
        m.put_var_attr("time", "units", text(since.clone()))?;
        m.put_var_attr("time", "bounds", text("time_bnds"))?;
        m.add_var("time_bnds", NcType::Double, &["time", "nbnd"])?;
        m.put_var_attr("time_bnds", "units", text(since))?;
        for (name, units, long) in HIST_VARS {
            m.add_var(name, NcType::Float, &["time", "gridcell"])?;
            m.put_var_attr(name, "units", text(units))?;
            m.put_var_attr(name, "long_name", text(long))?;
        }
        m.numrecs = n_records;
        let (header, layout) = encode_header(&m)?;
        let mut file = File::create(&path).map_err(|e| Error::file(&path, e))?;
        file.write_at(0, &header)?;
        let lon: VarData = lonlat.iter().map(|p| p.0).collect::<Vec<_>>().into();
        let lat: VarData = lonlat.iter().map(|p| p.1).collect::<Vec<_>>().into();
        for (name, data) in [("lon", lon), ("lat", lat)] {
            let mut bytes = Vec::new();
            data.append_be_bytes(&mut bytes);
            file.write_at(layout.vars[m.var_id(name).unwrap()].begin, &bytes)?;
        }
        Ok(HistoryFile { path, file, model: m, layout, n_records, next: 0 })
    }

    /// Writes one record. `locals[rank][var]` holds each rank's means in
    /// its local cell order.
    pub fn write_record(
        &mut self,
        bounds_days: [f64; 2],
        locals: &[Vec<Vec<f32>>],
        iod: &IoDecomp,
        plan: &AggregatorPlan,
    ) -> Result<Vec<WriteStats>> {
        if self.next >= self.n_records {
            return Err(Error::Simulation(format!("{}: all {} records already written", self.path.display(), self.n_records)));
        }
        let rec = self.next;
        let base = |name: &str| {
            let id = self.model.var_id(name).unwrap();
            self.layout.vars[id].begin + rec * self.layout.record_size
        };
        let (t_off, b_off) = (base("time"), base("time_bnds"));
        self.file.write_at(t_off, &bounds_days[1].to_be_bytes())?;
        let mut b = bounds_days[0].to_be_bytes().to_vec();
        b.extend_from_slice(&bounds_days[1].to_be_bytes());
        self.file.write_at(b_off, &b)?;
        let mut stats = Vec::with_capacity(HIST_VARS.len());
        for (v, (name, _, _)) in HIST_VARS.iter().enumerate() {
            let data: Vec<VarData> = locals.iter().map(|r| VarData::Float(r[v].clone())).collect();
            let off = base(name);
            stats.push(rearrange_write(name, &data, iod, plan, &mut self.file, off)?);
        }
        self.next += 1;
        Ok(stats)
    }

    pub fn finish(self) -> Result<PathBuf> {
        if self.next != self.n_records {
            return Err(Error::Simulation(format!(
                "{}: {} of {} records written",
                self.path.display(),
                self.next,
                self.n_records
            )));
        }
        self.file.sync_all().ok();
        Ok(self.path)
    }
}

// ---------------------------------------------------------------------------
// Restart

/// Everything needed to continue a case bit-exactly from `time`.
#[derive(Debug, Clone, PartialEq)]
pub struct RestartBundle {
    pub case: String,
    pub compset: String,
    pub case_start: NaiveDateTime,
    pub time: NaiveDateTime,
    pub dt_hours: u32,
    pub params: String,
    pub domain_checksum: String,
    pub history_interval: HistoryInterval,
    pub state: Vec<CellState>,
    /// `hist_sum[var][cell]`, running sums of the open averaging interval.
    pub hist_sum: Vec<Vec<f64>>,
    pub hist_count: u64,
    pub hist_start: NaiveDateTime,
    /// Last history file written, if any.
    pub history_file: String,
    /// Fields last delivered by the coupler, `[var][cell]`.
    pub cpl_fields: Vec<Vec<f64>>,
    /// Last forcing record the data atmosphere read.
    pub atm_last_record: i64,
}

impl RestartBundle {
    pub fn n_land(&self) -> usize {
        self.state.len()
    }

    pub fn check_params(&self, p: &ToyParams) -> Result<()> {
        if self.params != p.signature() {
            return Err(Error::Integrity(format!(
                "restart bundle was written with a different parameter set ({} vs {})",
                self.params,
                p.signature()
            )));
        }
        Ok(())
    }

    fn hours(&self, t: NaiveDateTime) -> f64 {
        (t - self.case_start).num_seconds() as f64 / 3600.0
    }

    fn common_attrs(&self, m: &mut CdfFileModel, component: &str) -> Result<()> {
        m.put_attr("title", text(format!("{component} restart")))?;
        m.put_attr("case", text(&*self.case))?;
        m.put_attr("compset", text(&*self.compset))?;
        m.put_attr("case_start", text(self.case_start.format(TIME_FMT).to_string()))?;
        m.put_attr("restart_time", text(self.time.format(TIME_FMT).to_string()))?;
        m.put_attr("dt_hours", AttrValue::Int(vec![self.dt_hours as i32]))?;
        m.put_attr("domain_checksum", text(&*self.domain_checksum))?;
        Ok(())
    }

    /// The four component files as (model, per-variable data). The
    /// land restart's per-cell variables are flagged for distributed writing.
    fn models(&self) -> Result<Vec<(&'static str, CdfFileModel, Vec<(VarData, bool)>)>> {
        let n = self.n_land() as u64;
        let mut out = Vec::new();

        let mut m = CdfFileModel::new(Variant::Cdf5);
        self.common_attrs(&mut m, "elm.r")?;
        m.put_attr("params", text(&*self.params))?;
        m.put_attr("history_interval", text(self.history_interval.name()))?;
        m.add_dim("gridcell", n)?;
        m.add_dim("hist_var", HIST_VARS.len() as u64)?;
        m.put_attr("hist_vars", text(HIST_VARS.map(|v| v.0).join(",")))?;
        let mut data = Vec::new();
        for (i, f) in CellState::FIELDS.iter().enumerate() {
            m.add_var(f, NcType::Double, &["gridcell"])?;
            data.push((VarData::Double(self.state.iter().map(|s| s.fields()[i]).collect()), true));
        }
        m.add_var("hist_sum", NcType::Double, &["hist_var", "gridcell"])?;
        data.push((VarData::Double(self.hist_sum.concat()), true));
        out.push(("elm.r", m, data));

        let mut m = CdfFileModel::new(Variant::Cdf5);
        self.common_attrs(&mut m, "cpl.r")?;
        m.add_dim("gridcell", n)?;
        let mut data = Vec::new();
        for var in ForcingVar::ALL {
            let name = format!("a2x_{}", var.name());
            m.add_var(&name, NcType::Double, &["gridcell"])?;
            m.put_var_attr(&name, "units", text(if var == ForcingVar::Prect { "mm/h" } else { var.units() }))?;
            data.push((VarData::Double(self.cpl_fields[var.index()].clone()), false));
        }
        out.push(("cpl.r", m, data));

        let mut m = CdfFileModel::new(Variant::Cdf5);
        self.common_attrs(&mut m, "datm.r")?;
        m.add_var("last_record", NcType::Int64, &[])?;
        m.put_var_attr("last_record", "units", text("3-hour records since 1970-01-01 00:00:00"))?;
        m.add_var("model_time", NcType::Double, &[])?;
        m.put_var_attr("model_time", "units", text("hours since case_start"))?;
        let data = vec![
            (VarData::Int64(vec![self.atm_last_record]), false),
            (VarData::Double(vec![self.hours(self.time)]), false),
        ];
        out.push(("datm.r", m, data));

        let mut m = CdfFileModel::new(Variant::Cdf5);
        self.common_attrs(&mut m, "elm.rh0")?;
        m.put_attr("history_file", text(&*self.history_file))?;
        m.put_attr("history_interval", text(self.history_interval.name()))?;
        m.add_var("hist_count", NcType::Int64, &[])?;
        m.add_var("hist_start", NcType::Double, &[])?;
        m.put_var_attr("hist_start", "units", text("hours since case_start"))?;
        let data = vec![
            (VarData::Int64(vec![self.hist_count as i64]), false),
            (VarData::Double(vec![self.hours(self.hist_start)]), false),
        ];
        out.push(("elm.rh0", m, data));
        Ok(out)
    }

    /// Writes all four files; per-cell land variables go through the
    /// rearranger with the given partition and aggregator settings.
    pub fn write(
        &self,
        dir: &Path,
        part: &Partition,
        aggregators: usize,
        buffer_limit: u64,
    ) -> Result<(Vec<PathBuf>, Vec<WriteStats>)> {
        if part.n_cells != self.n_land() {
            return Err(Error::Decomp("partition does not match the restart cell count".into()));
        }
        let mut paths = Vec::new();
        let mut stats = Vec::new();
        for (component, mut m, data) in self.models()? {
            for (v, (d, _)) in data.iter().enumerate() {
                let name = m.vars[v].name.clone();
                m.put_var_attr(&name, "checksum", text(format!("sha256:{}", checksum(d))))?;
            }
            let mut sources = Vec::with_capacity(data.len());
            for (v, (d, distributed)) in data.into_iter().enumerate() {
                if !distributed {
                    sources.push(VarSource::Serial(d));
                    continue;
                }
                let var = &m.vars[v];
                let dims: Vec<(&str, u64)> = var.dims.iter().map(|&i| (m.dims[i].name.as_str(), m.dim_len(i))).collect();
                let iod = build_iodecomp(part, &dims, 8)?;
                let locals = iod.gather(&d.to_f64_vec())?.into_iter().map(VarData::Double).collect();
                sources.push(VarSource::Distributed(locals));
            }
            let path = dir.join(restart_file_name(&self.case, component, self.time));
            let mut file = File::create(&path).map_err(|e| Error::file(&path, e))?;
            stats.extend(write_cdf_aggregated(&m, &sources, part, aggregators, buffer_limit, &mut file)?);
            paths.push(path);
        }
        Ok((paths, stats))
    }

    /// Reads and verifies a bundle written for `case` at `time`.
    pub fn read(dir: &Path, case: &str, time: NaiveDateTime) -> Result<Self> {
        let mut readers = Vec::new();
        for c in RESTART_COMPONENTS {
            let path = dir.join(restart_file_name(case, c, time));
            if !path.exists() {
                return Err(Error::Integrity(format!("restart bundle incomplete: {} missing", path.display())));
            }
            let mut r = CdfReader::open(&path)?;
            verify_checksums(&mut r, &path)?;
            readers.push((path, r));
        }
        let attr_text = |r: &CdfReader<_>, path: &Path, name: &str| -> Result<String> {
            r.model()
                .attr(name)
                .and_then(|a| a.as_text())
                .map(str::to_string)
                .ok_or_else(|| Error::Integrity(format!("{}: attribute {name} missing", path.display())))
        };
        let parse_time = |s: &str, path: &Path| {
            NaiveDateTime::parse_from_str(s, TIME_FMT)
                .map_err(|e| Error::Integrity(format!("{}: bad time {s:?}: {e}", path.display())))
        };
        let (p0, r0) = &readers[0];
        let case_start = parse_time(&attr_text(r0, p0, "case_start")?, p0)?;
        let restart_time = parse_time(&attr_text(r0, p0, "restart_time")?, p0)?;
        let domain_checksum = attr_text(r0, p0, "domain_checksum")?;
        for (p, r) in &readers[1..] {
            if attr_text(r, p, "case_start")? != attr_text(r0, p0, "case_start")?
                || attr_text(r, p, "restart_time")? != attr_text(r0, p0, "restart_time")?
                || attr_text(r, p, "domain_checksum")? != domain_checksum
            {
                return Err(Error::Integrity(format!("{} belongs to a different restart bundle", p.display())));
            }
        }
        let dt_hours = r0.model().attr("dt_hours").and_then(|a| a.as_i64()).unwrap_or(0) as u32;
        let history_interval = attr_text(r0, p0, "history_interval")?.parse()?;
        let params = attr_text(r0, p0, "params")?;
        let compset = attr_text(r0, p0, "compset")?;

        let mut readers = readers.into_iter();
        let (_, mut elm) = readers.next().unwrap();
        let mut fields = Vec::new();
        for f in CellState::FIELDS {
            fields.push(elm.read_var(f)?.to_f64_vec());
        }
        let n = fields[0].len();
        let state = (0..n).map(|i| CellState::from_fields(std::array::from_fn(|k| fields[k][i]))).collect();
        let flat = elm.read_var("hist_sum")?.to_f64_vec();
        let hist_sum = flat.chunks(n.max(1)).map(<[f64]>::to_vec).collect::<Vec<_>>();
        let hist_sum = if n == 0 { vec![Vec::new(); HIST_VARS.len()] } else { hist_sum };

        let (_, mut cpl) = readers.next().unwrap();
        let mut cpl_fields = Vec::new();
        for var in ForcingVar::ALL {
            cpl_fields.push(cpl.read_var(&format!("a2x_{}", var.name()))?.to_f64_vec());
        }
        let (_, mut datm) = readers.next().unwrap();
        let atm_last_record = scalar_i64(&mut datm, "last_record")?;
        let (p3, mut rh0) = readers.next().unwrap();
        let hist_count = scalar_i64(&mut rh0, "hist_count")? as u64;
        let hist_start_h = rh0.read_var("hist_start")?.get_f64(0);
        let history_file = attr_text(&rh0, &p3, "history_file")?;
        if restart_time != time {
            return Err(Error::Integrity(format!("restart file is stamped {restart_time}, expected {time}")));
        }
        Ok(RestartBundle {
            case: case.to_string(),
            compset,
            case_start,
            time,
            dt_hours,
            params,
            domain_checksum,
            history_interval,
            state,
            hist_sum,
            hist_count,
            hist_start: case_start + chrono::Duration::seconds((hist_start_h * 3600.0).round() as i64),
            history_file,
            cpl_fields,
            atm_last_record,
        })
    }
}

fn scalar_i64<R: std::io::Read + std::io::Seek>(r: &mut CdfReader<R>, name: &str) -> Result<i64> {
    match r.read_var(name)? {
        VarData::Int64(v) if v.len() == 1 => Ok(v[0]),
        _ => Err(Error::Integrity(format!("{name} must be an int64 scalar"))),
    }
}

fn verify_checksums<R: std::io::Read + std::io::Seek>(r: &mut CdfReader<R>, path: &Path) -> Result<()> {
    let n = r.model().vars.len();
    for id in 0..n {
        let var = &r.model().vars[id];
        let name = var.name.clone();
        let want = var
            .attr("checksum")
            .and_then(|a| a.as_text())
            .map(str::to_string)
            .ok_or_else(|| Error::Integrity(format!("{}: {name} has no checksum attribute", path.display())))?;
        let got = format!("sha256:{}", hex::encode(Sha256::digest(r.var_bytes(id)?)));
        if got != want {
            return Err(Error::Integrity(format!("{}: checksum mismatch for {name}", path.display())));
        }
    }
    Ok(())
}
