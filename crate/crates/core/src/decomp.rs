//! Static gridcell decomposition, I/O decompositions (local element to
//! file offset) and the rearranger/aggregator write pipeline.

use std::fmt;
use std::fs::File;
use std::io::{Seek, SeekFrom, Write};
use std::ops::Range;
use std::str::FromStr;
use std::sync::mpsc;
use std::time::Instant;

use serde::Serialize;

use crate::cdf5::{encode_header, CdfFileModel, VarData};
use crate::{Error, Result};

pub const DEFAULT_BLOCK: usize = 64;
pub const DEFAULT_BUFFER_LIMIT: u64 = 64 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    RoundRobin,
    Block,
    BlockRoundRobin,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::RoundRobin, Scheme::Block, Scheme::BlockRoundRobin];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::RoundRobin => "round_robin",
            Scheme::Block => "block",
            Scheme::BlockRoundRobin => "block_round_robin",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Decomp(format!("unknown partition scheme {s:?}")))
    }
}

/// Assignment of N cells to P ranks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub scheme: Scheme,
    pub n_cells: usize,
    pub n_ranks: usize,
    pub block_size: usize,
    pub assignment: Vec<u32>,
    /// Ascending global cell indices per rank.
    pub local_lists: Vec<Vec<usize>>,
}

pub fn partition(n: usize, p: usize, scheme: Scheme, block: Option<usize>) -> Result<Partition> {
    if n == 0 || p == 0 {
        return Err(Error::Decomp(format!("need at least one cell and one rank (N={n}, P={p})")));
    }
    if p > u32::MAX as usize {
        return Err(Error::Decomp("too many ranks".into()));
    }
    let b = block.unwrap_or(DEFAULT_BLOCK);
    if b == 0 {
        return Err(Error::Decomp("block size must be at least 1".into()));
    }
    if p > n {
        log::warn!("{p} ranks for {n} cells: {} ranks stay empty", p - n);
    }
    let (q, extra) = (n / p, n % p);
    let rank_of = |i: usize| -> usize {
        match scheme {
            Scheme::RoundRobin => i % p,
            Scheme::Block => {
                let big = extra * (q + 1);
                if i < big { i / (q + 1) } else { extra + (i - big) / q }
            }
            Scheme::BlockRoundRobin => (i / b) % p,
        }
    };
    let assignment: Vec<u32> = (0..n).map(|i| rank_of(i) as u32).collect();
    let mut local_lists = vec![Vec::new(); p];
    for (i, &r) in assignment.iter().enumerate() {
        local_lists[r as usize].push(i);
    }
    Ok(Partition {
        scheme,
        n_cells: n,
        n_ranks: p,
        block_size: if scheme == Scheme::BlockRoundRobin { b } else { 0 },
        assignment,
        local_lists,
    })
}

/// Map from each rank's local elements to element offsets within one
/// record (or the whole of a fixed variable).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IoDecomp {
    /// Non-record dims; the last is the gridcell axis.
    pub shape: Vec<u64>,
    pub elem_size: usize,
    pub maps: Vec<Vec<u64>>,
}

/// `var_dims` lists (name, length) without the record dimension.
pub fn build_iodecomp(part: &Partition, var_dims: &[(&str, u64)], elem_size: usize) -> Result<IoDecomp> {
    let Some(&(last, n)) = var_dims.last() else {
        return Err(Error::Decomp("variable has no gridcell axis".into()));
    };
    if last != "gridcell" {
        return Err(Error::Decomp(format!("innermost dimension is {last:?}, expected gridcell")));
    }
    if var_dims[..var_dims.len() - 1].iter().any(|d| d.0 == "gridcell") {
        return Err(Error::Decomp("gridcell must be the innermost dimension only".into()));
    }
    if n != part.n_cells as u64 {
        return Err(Error::Decomp(format!("gridcell dimension {n} does not match partition of {}", part.n_cells)));
    }
    let outer: u64 = var_dims[..var_dims.len() - 1].iter().map(|d| d.1).product();
    let maps = part
        .local_lists
        .iter()
        .map(|cells| {
            let mut m = Vec::with_capacity(cells.len() * outer as usize);
            for o in 0..outer {
                m.extend(cells.iter().map(|&c| o * n + c as u64));
            }
            m
        })
        .collect();
    Ok(IoDecomp { shape: var_dims.iter().map(|d| d.1).collect(), elem_size, maps })
}

impl IoDecomp {
    pub fn total_elems(&self) -> u64 {
        self.shape.iter().product()
    }

    pub fn n_ranks(&self) -> usize {
        self.maps.len()
    }

    /// Splits a global array into per-rank local arrays.
    pub fn gather<T: Copy>(&self, global: &[T]) -> Result<Vec<Vec<T>>> {
        if global.len() as u64 != self.total_elems() {
            return Err(Error::Decomp(format!("{} values for {} elements", global.len(), self.total_elems())));
        }
        Ok(self.maps.iter().map(|m| m.iter().map(|&o| global[o as usize]).collect()).collect())
    }

    /// Reassembles per-rank local arrays into the global array.
    pub fn scatter<T: Copy + Default>(&self, locals: &[Vec<T>]) -> Result<Vec<T>> {
        if locals.len() != self.maps.len() {
            return Err(Error::Decomp(format!("{} local arrays for {} ranks", locals.len(), self.maps.len())));
        }
        let mut out = vec![T::default(); self.total_elems() as usize];
        for (m, l) in self.maps.iter().zip(locals) {
            if m.len() != l.len() {
                return Err(Error::Decomp(format!("local array has {} values, map has {}", l.len(), m.len())));
            }
            for (&o, &v) in m.iter().zip(l) {
                out[o as usize] = v;
            }
        }
        Ok(out)
    }
}

/// Contiguous element ranges owned by each aggregator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AggregatorPlan {
    pub ranges: Vec<Range<u64>>,
    pub buffer_limit: u64,
}

impl AggregatorPlan {
    pub fn new(total: u64, n_ranks: usize, n_aggregators: usize, buffer_limit: u64) -> Result<Self> {
        if n_aggregators == 0 || n_aggregators > n_ranks.max(1) {
            return Err(Error::Decomp(format!(
                "aggregator count {n_aggregators} must be between 1 and the rank count {n_ranks}"
            )));
        }
        if buffer_limit == 0 {
            return Err(Error::Decomp("buffer limit must be positive".into()));
        }
        let a = n_aggregators as u64;
        let (q, extra) = (total / a, total % a);
        let mut ranges = Vec::with_capacity(n_aggregators);
        let mut start = 0;
        for i in 0..a {
            let len = q + u64::from(i < extra);
            ranges.push(start..start + len);
            start += len;
        }
        Ok(AggregatorPlan { ranges, buffer_limit })
    }

    pub fn n_aggregators(&self) -> usize {
        self.ranges.len()
    }

    fn owner(&self, offset: u64) -> Option<usize> {
        let i = self.ranges.partition_point(|r| r.end <= offset);
        (i < self.ranges.len() && self.ranges[i].contains(&offset)).then_some(i)
    }
}

/// Positional byte writes, serialized by the write coordinator.
pub trait ByteSink {
    fn write_at(&mut self, offset: u64, bytes: &[u8]) -> Result<()>;
}

impl ByteSink for Vec<u8> {
    fn write_at(&mut self, offset: u64, bytes: &[u8]) -> Result<()> {
        let end = offset as usize + bytes.len();
        if self.len() < end {
            self.resize(end, 0);
        }
        self[offset as usize..end].copy_from_slice(bytes);
        Ok(())
    }
}

impl ByteSink for File {
    fn write_at(&mut self, offset: u64, bytes: &[u8]) -> Result<()> {
        self.seek(SeekFrom::Start(offset))?;
        self.write_all(bytes)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WriteStats {
    pub variable: String,
    pub bytes: u64,
    pub seconds: f64,
    pub per_aggregator: Vec<u64>,
    pub flushes: usize,
    pub max_flush: u64,
    pub buffer_limit: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct WriteStatsRow {
    pub case: String,
    pub variable: String,
    pub bytes: u64,
    pub seconds: f64,
    #[serde(rename = "MiB_per_s")]
    pub mib_per_s: f64,
    pub aggregators: usize,
    pub buffer_limit: u64,
}

impl WriteStats {
    pub fn row(&self, case: &str) -> WriteStatsRow {
        WriteStatsRow {
            case: case.to_string(),
            variable: self.variable.clone(),
            bytes: self.bytes,
            seconds: self.seconds,
            mib_per_s: if self.seconds > 0.0 { self.bytes as f64 / 1_048_576.0 / self.seconds } else { 0.0 },
            aggregators: self.per_aggregator.len(),
            buffer_limit: self.buffer_limit,
        }
    }
}

pub fn write_stats_csv<W: Write>(out: W, rows: &[WriteStatsRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Element offsets plus their big-endian bytes.
struct Piece {
    offsets: Vec<u64>,
    bytes: Vec<u8>,
}

enum ToWriter {
    Flush { offset: u64, bytes: Vec<u8> },
    Done { aggregator: usize, bytes: u64 },
    Failed(Error),
}

fn be_bytes(d: &VarData) -> Vec<u8> {
    let mut out = Vec::with_capacity(d.len() * d.nc_type().size());
    d.append_be_bytes(&mut out);
    out
}

/// Rank threads route their elements to aggregators; aggregators assemble
/// windows of at most `buffer_limit` bytes, verify coverage, and hand them
/// to the calling thread, which is the only one touching `sink`. `base` is
/// the byte offset of element 0.
pub fn rearrange_write(
    variable: &str,
    locals: &[VarData],
    iod: &IoDecomp,
    plan: &AggregatorPlan,
    sink: &mut dyn ByteSink,
    base: u64,
) -> Result<WriteStats> {
    let t0 = Instant::now();
    if locals.len() != iod.n_ranks() {
        return Err(Error::Decomp(format!("{} local arrays for {} ranks", locals.len(), iod.n_ranks())));
    }
    let total = iod.total_elems();
    if plan.ranges.last().map_or(0, |r| r.end) != total {
        return Err(Error::Decomp(format!("aggregator ranges do not cover {total} elements of {variable}")));
    }
    let size = iod.elem_size;
    let n_agg = plan.n_aggregators();
    let window = (plan.buffer_limit / size as u64).max(1);
    let mut flushes = 0usize;
    let mut max_flush = 0u64;
    let mut per_aggregator = vec![0u64; n_agg];
    let mut first_err: Option<Error> = None;

    std::thread::scope(|s| {
        let (to_writer, from_aggs) = mpsc::channel::<ToWriter>();
        let mut agg_tx = Vec::with_capacity(n_agg);
        for a in 0..n_agg {
            let (tx, rx) = mpsc::channel::<Result<Piece>>();
            agg_tx.push(tx);
            let to_writer = to_writer.clone();
            let range = plan.ranges[a].clone();
            let n_ranks = iod.n_ranks();
            s.spawn(move || {
                let res = (|| -> Result<u64> {
                    let mut pieces = Vec::with_capacity(n_ranks);
                    for _ in 0..n_ranks {
                        pieces.push(rx.recv().map_err(|_| Error::Decomp("rank hung up".into()))??);
                    }
                    let mut cursors = vec![0usize; pieces.len()];
                    let mut written = 0u64;
                    let mut start = range.start;
                    while start < range.end {
                        let end = (start + window).min(range.end);
                        let len = (end - start) as usize;
                        let mut buf = vec![0u8; len * size];
                        let mut seen = vec![false; len];
                        for (p, cur) in pieces.iter().zip(cursors.iter_mut()) {
                            while *cur < p.offsets.len() && p.offsets[*cur] < end {
                                let o = p.offsets[*cur];
                                let i = (o - start) as usize;
                                if seen[i] {
                                    return Err(Error::Integrity(format!(
                                        "{variable}: element offset {o} supplied twice"
                                    )));
                                }
                                seen[i] = true;
                                buf[i * size..(i + 1) * size]
                                    .copy_from_slice(&p.bytes[*cur * size..(*cur + 1) * size]);
                                *cur += 1;
                            }
                        }
                        if let Some(i) = seen.iter().position(|&x| !x) {
                            return Err(Error::Integrity(format!(
                                "{variable}: element offset {} not supplied by any rank",
                                start + i as u64
                            )));
                        }
                        written += buf.len() as u64;
                        let msg = ToWriter::Flush { offset: base + start * size as u64, bytes: buf };
                        if to_writer.send(msg).is_err() {
                            return Err(Error::Decomp("write coordinator hung up".into()));
                        }
                        start = end;
                    }
                    Ok(written)
                })();
                let _ = to_writer.send(match res {
                    Ok(bytes) => ToWriter::Done { aggregator: a, bytes },
                    Err(e) => ToWriter::Failed(e),
                });
            });
        }
        drop(to_writer);

        for (r, local) in locals.iter().enumerate() {
            let agg_tx = agg_tx.clone();
            let map = &iod.maps[r];
            s.spawn(move || {
                let res = (|| -> Result<Vec<Piece>> {
                    if local.len() != map.len() || local.nc_type().size() != size {
                        return Err(Error::Integrity(format!(
                            "{variable}: rank {r} holds {} values, its map has {}",
                            local.len(),
                            map.len()
                        )));
                    }
                    let bytes = be_bytes(local);
                    let mut order: Vec<usize> = (0..map.len()).collect();
                    order.sort_unstable_by_key(|&i| map[i]);
                    let mut pieces: Vec<Piece> =
                        (0..n_agg).map(|_| Piece { offsets: Vec::new(), bytes: Vec::new() }).collect();
                    for i in order {
                        let o = map[i];
                        let a = plan.owner(o).ok_or_else(|| {
                            Error::Integrity(format!("{variable}: rank {r} element offset {o} outside [0, {total})"))
                        })?;
                        pieces[a].offsets.push(o);
                        pieces[a].bytes.extend_from_slice(&bytes[i * size..(i + 1) * size]);
                    }
                    Ok(pieces)
                })();
                match res {
                    Ok(pieces) => {
                        for (tx, p) in agg_tx.iter().zip(pieces) {
                            let _ = tx.send(Ok(p));
                        }
                    }
                    Err(e) => {
                        for tx in &agg_tx {
                            let _ = tx.send(Err(Error::Integrity(e.to_string())));
                        }
                    }
                }
            });
        }
        drop(agg_tx);

        for msg in from_aggs {
            match msg {
                ToWriter::Flush { offset, bytes } => {
                    if first_err.is_none() {
                        flushes += 1;
                        max_flush = max_flush.max(bytes.len() as u64);
                        if let Err(e) = sink.write_at(offset, &bytes) {
                            first_err = Some(e);
                        }
                    }
                }
                ToWriter::Done { aggregator, bytes } => per_aggregator[aggregator] = bytes,
                ToWriter::Failed(e) => {
                    first_err.get_or_insert(e);
                }
            }
        }
    });
    if let Some(e) = first_err {
        return Err(e);
    }
    Ok(WriteStats {
        variable: variable.to_string(),
        bytes: per_aggregator.iter().sum(),
        seconds: t0.elapsed().as_secs_f64(),
        per_aggregator,
        flushes,
        max_flush,
        buffer_limit: plan.buffer_limit,
    })
}

/// Data for one variable of a file written through the pipeline.
#[derive(Debug, Clone)]
pub enum VarSource {
    /// Written whole by the coordinator (coordinates, scalars, ids).
    Serial(VarData),
    /// Per-rank local values, records concatenated, decomposed over the
    /// innermost gridcell axis.
    Distributed(Vec<VarData>),
}

/// Writes a complete file: header and serial variables from the
/// coordinator, distributed variables through [`rearrange_write`] one
/// record at a time.
pub fn write_cdf_aggregated(
    model: &CdfFileModel,
    vars: &[VarSource],
    part: &Partition,
    n_aggregators: usize,
    buffer_limit: u64,
    sink: &mut dyn ByteSink,
) -> Result<Vec<WriteStats>> {
    if vars.len() != model.vars.len() {
        return Err(Error::Decomp(format!("{} sources for {} variables", vars.len(), model.vars.len())));
    }
    let (header, layout) = encode_header(model)?;
    let total = model.compute_size()?.total_bytes;
    sink.write_at(0, &header)?;
    let mut stats = Vec::new();
    for (i, (v, src)) in model.vars.iter().zip(vars).enumerate() {
        let is_rec = model.is_record_var(v);
        let nrec = if is_rec { model.numrecs } else { 1 };
        let per = model.elems_per_record(v);
        let size = v.nc_type.size();
        let vl = layout.vars[i];
        let rec_base = |r: u64| if is_rec { vl.begin + r * layout.record_size } else { vl.begin };
        match src {
            VarSource::Serial(d) => {
                if d.nc_type() != v.nc_type || d.len() as u64 != per * nrec {
                    return Err(Error::Integrity(format!(
                        "{}: {} values supplied, {} required",
                        v.name,
                        d.len(),
                        per * nrec
                    )));
                }
                for r in 0..nrec {
                    let chunk = d.slice((r * per) as usize..((r + 1) * per) as usize);
                    sink.write_at(rec_base(r), &be_bytes(&chunk))?;
                }
            }
            VarSource::Distributed(locals) => {
                let dims: Vec<usize> = if is_rec { v.dims[1..].to_vec() } else { v.dims.clone() };
                let named: Vec<(&str, u64)> =
                    dims.iter().map(|&d| (model.dims[d].name.as_str(), model.dim_len(d))).collect();
                let iod = build_iodecomp(part, &named, size)?;
                let plan = AggregatorPlan::new(per, part.n_ranks, n_aggregators, buffer_limit)?;
                let mut merged: Option<WriteStats> = None;
                for r in 0..nrec {
                    let rec_locals: Vec<VarData> = locals
                        .iter()
                        .zip(&iod.maps)
                        .map(|(l, m)| {
                            let n = m.len();
                            if l.len() != n * nrec as usize {
                                return Err(Error::Integrity(format!(
                                    "{}: local array has {} values, expected {}",
                                    v.name,
                                    l.len(),
                                    n * nrec as usize
                                )));
                            }
                            Ok(l.slice(r as usize * n..(r as usize + 1) * n))
                        })
                        .collect::<Result<_>>()?;
                    let st = rearrange_write(&v.name, &rec_locals, &iod, &plan, sink, rec_base(r))?;
                    merged = Some(match merged {
                        None => st,
                        Some(mut m) => {
                            m.bytes += st.bytes;
                            m.seconds += st.seconds;
                            m.flushes += st.flushes;
                            m.max_flush = m.max_flush.max(st.max_flush);
                            for (a, b) in m.per_aggregator.iter_mut().zip(&st.per_aggregator) {
                                *a += b;
                            }
                            m
                        }
                    });
                }
                if let Some(m) = merged {
                    stats.push(m);
                }
            }
        }
    }
    // Zero-record files with record variables end at the record section.
    if total > 0 {
        sink.write_at(total, &[])?;
    }
    Ok(stats)
}
