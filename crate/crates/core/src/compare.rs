//! Element-wise output comparison and replication checks. Variables are
//! streamed in hyperslabs of bounded size, never loaded whole.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, Read, Seek, Write};
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use crate::cdf5::{CdfReader, VarData};
use crate::{Error, Result};

pub const SLAB_LIMIT: u64 = 64 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Tolerance {
    BitExact,
    Abs(f64),
    Rel(f64),
}

impl FromStr for Tolerance {
    type Err = Error;

    /// `bit_exact`, `abs:<eps>` or `rel:<eps>`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("tolerance must be bit_exact, abs:<eps> or rel:<eps>, got {s:?}"));
        if s == "bit_exact" {
            return Ok(Tolerance::BitExact);
        }
        let (kind, eps) = s.split_once(':').ok_or_else(bad)?;
        let eps: f64 = eps.parse().map_err(|_| bad())?;
        if !(eps >= 0.0) {
            return Err(bad());
        }
        match kind {
            "abs" => Ok(Tolerance::Abs(eps)),
            "rel" => Ok(Tolerance::Rel(eps)),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for Tolerance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tolerance::BitExact => f.write_str("bit_exact"),
            Tolerance::Abs(e) => write!(f, "abs:{e}"),
            Tolerance::Rel(e) => write!(f, "rel:{e}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Identical,
    WithinTolerance,
    Different,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Identical => "identical",
            Verdict::WithinTolerance => "within_tolerance",
            Verdict::Different => "different",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarReport {
    pub name: String,
    pub n_elements: u64,
    /// Elements whose bits differ.
    pub n_differing: u64,
    /// Elements outside the tolerance (equals `n_differing` under bit_exact).
    pub n_exceeding: u64,
    pub max_abs_diff: f64,
    pub max_rel_diff: f64,
    pub first_diff_index: Option<u64>,
    /// Set when shapes or types differ; elements are then not compared.
    pub mismatch: Option<String>,
}

impl VarReport {
    fn new(name: &str, n: u64) -> Self {
        VarReport {
            name: name.to_string(),
            n_elements: n,
            n_differing: 0,
            n_exceeding: 0,
            max_abs_diff: 0.0,
            max_rel_diff: 0.0,
            first_diff_index: None,
            mismatch: None,
        }
    }

    fn verdict(&self) -> Verdict {
        if self.mismatch.is_some() || self.n_exceeding > 0 {
            Verdict::Different
        } else if self.n_differing > 0 {
            Verdict::WithinTolerance
        } else {
            Verdict::Identical
        }
    }

    /// Compares aligned chunks whose first element has flat index `offset`.
    fn accumulate(&mut self, a: &VarData, b: &VarData, offset: u64, index_of: impl Fn(u64) -> u64, tol: Tolerance) {
        for i in 0..a.len() {
            if a.bits(i) == b.bits(i) {
                continue;
            }
            let (x, y) = (a.get_f64(i), b.get_f64(i));
            let both_nan = x.is_nan() && y.is_nan();
            let (abs, rel) = if both_nan {
                (0.0, 0.0)
            } else if x.is_nan() || y.is_nan() {
                (f64::INFINITY, f64::INFINITY)
            } else {
                let d = (x - y).abs();
                (d, d / x.abs().max(y.abs()).max(1e-30))
            };
            self.n_differing += 1;
            self.max_abs_diff = self.max_abs_diff.max(abs);
            self.max_rel_diff = self.max_rel_diff.max(rel);
            let exceeds = match tol {
                Tolerance::BitExact => true,
                Tolerance::Abs(e) => !(abs <= e),
                Tolerance::Rel(e) => !(rel <= e),
            };
            if exceeds {
                self.n_exceeding += 1;
            }
            if self.first_diff_index.is_none() {
                self.first_diff_index = Some(index_of(offset + i as u64));
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareReport {
    pub tolerance: String,
    pub vars: Vec<VarReport>,
    pub vars_only_in_a: Vec<String>,
    pub vars_only_in_b: Vec<String>,
    pub verdict: Verdict,
}

impl CompareReport {
    fn finish(tolerance: Tolerance, vars: Vec<VarReport>, only_a: Vec<String>, only_b: Vec<String>) -> Self {
        let mut verdict = if only_a.is_empty() && only_b.is_empty() { Verdict::Identical } else { Verdict::Different };
        for v in &vars {
            verdict = match (verdict, v.verdict()) {
                (Verdict::Different, _) | (_, Verdict::Different) => Verdict::Different,
                (Verdict::WithinTolerance, _) | (_, Verdict::WithinTolerance) => Verdict::WithinTolerance,
                _ => Verdict::Identical,
            };
        }
        CompareReport { tolerance: tolerance.to_string(), vars, vars_only_in_a: only_a, vars_only_in_b: only_b, verdict }
    }

    pub fn var(&self, name: &str) -> Option<&VarReport> {
        self.vars.iter().find(|v| v.name == name)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("verdict: {} (tolerance {})\n", self.verdict, self.tolerance);
        for v in &self.vars {
            if v.verdict() == Verdict::Identical {
                continue;
            }
            match &v.mismatch {
                Some(m) => s.push_str(&format!("  {}: {m}\n", v.name)),
                None => s.push_str(&format!(
                    "  {}: {} of {} elements differ ({} beyond tolerance), max abs {:e}, max rel {:e}, first at {}\n",
                    v.name,
                    v.n_differing,
                    v.n_elements,
                    v.n_exceeding,
                    v.max_abs_diff,
                    v.max_rel_diff,
                    v.first_diff_index.unwrap_or(0)
                )),
            }
        }
        for n in &self.vars_only_in_a {
            s.push_str(&format!("  only in a: {n}\n"));
        }
        for n in &self.vars_only_in_b {
            s.push_str(&format!("  only in b: {n}\n"));
        }
        s
    }

    /// One row per compared variable.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        #[derive(Serialize)]
        struct Row<'a> {
            variable: &'a str,
            n_elements: u64,
            n_differing: u64,
            n_exceeding: u64,
            max_abs_diff: f64,
            max_rel_diff: f64,
            first_diff_index: Option<u64>,
            status: String,
        }
        let mut w = csv::Writer::from_writer(out);
        for v in &self.vars {
            w.serialize(Row {
                variable: &v.name,
                n_elements: v.n_elements,
                n_differing: v.n_differing,
                n_exceeding: v.n_exceeding,
                max_abs_diff: v.max_abs_diff,
                max_rel_diff: v.max_rel_diff,
                first_diff_index: v.first_diff_index,
                status: v.mismatch.clone().unwrap_or_else(|| v.verdict().to_string()),
            })?;
        }
        for (side, names) in [("only_in_a", &self.vars_only_in_a), ("only_in_b", &self.vars_only_in_b)] {
            for n in names {
                w.serialize(Row {
                    variable: n,
                    n_elements: 0,
                    n_differing: 0,
                    n_exceeding: 0,
                    max_abs_diff: 0.0,
                    max_rel_diff: 0.0,
                    first_diff_index: None,
                    status: side.into(),
                })?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

type FileReader = CdfReader<BufReader<File>>;

fn open(path: &Path) -> Result<FileReader> {
    CdfReader::open(path)
}

/// Hyperslabs covering `shape` in flat order, each at most `limit` bytes
/// (or one element). Yields (start, count, flat offset).
fn slabs(shape: &[u64], elem_size: u64, limit: u64) -> Vec<(Vec<u64>, Vec<u64>, u64)> {
    if shape.is_empty() {
        return vec![(vec![], vec![], 0)];
    }
    if shape.iter().any(|&d| d == 0) {
        return Vec::new();
    }
    // Split along dimension k: the first one whose trailing block fits.
    let trailing = |k: usize| shape[k + 1..].iter().product::<u64>() * elem_size;
    let k = (0..shape.len()).find(|&k| trailing(k) <= limit).unwrap_or(shape.len() - 1);
    let per = (limit / trailing(k).max(1)).max(1);
    let outer: u64 = shape[..k].iter().product();
    let block: u64 = shape[k..].iter().product();
    let mut out = Vec::new();
    for o in 0..outer {
        let mut idx = vec![0u64; k];
        let mut rem = o;
        for d in (0..k).rev() {
            idx[d] = rem % shape[d];
            rem /= shape[d];
        }
        let mut s = 0;
        while s < shape[k] {
            let c = per.min(shape[k] - s);
            let mut start = idx.clone();
            start.push(s);
            start.extend(std::iter::repeat(0).take(shape.len() - k - 1));
            let mut count = vec![1u64; k];
            count.push(c);
            count.extend_from_slice(&shape[k + 1..]);
            let flat = o * block + s * (block / shape[k]);
            out.push((start, count, flat));
            s += c;
        }
    }
    out
}

pub fn compare_files(a: &Path, b: &Path, tol: Tolerance) -> Result<CompareReport> {
    let mut ra = open(a)?;
    let mut rb = open(b)?;
    compare_readers(&mut ra, &mut rb, tol, SLAB_LIMIT)
}

pub fn compare_readers<A: Read + Seek, B: Read + Seek>(
    ra: &mut CdfReader<A>,
    rb: &mut CdfReader<B>,
    tol: Tolerance,
    slab_limit: u64,
) -> Result<CompareReport> {
    let names_a: Vec<String> = ra.model().vars.iter().map(|v| v.name.clone()).collect();
    let names_b: Vec<String> = rb.model().vars.iter().map(|v| v.name.clone()).collect();
    let only_a = names_a.iter().filter(|n| !names_b.contains(n)).cloned().collect();
    let only_b = names_b.iter().filter(|n| !names_a.contains(n)).cloned().collect();
    let mut reports = Vec::new();
    for name in names_a.iter().filter(|n| names_b.contains(n)) {
        let va = ra.model().var(name).unwrap().clone();
        let vb = rb.model().var(name).unwrap().clone();
        let sa = ra.model().shape(&va);
        let sb = rb.model().shape(&vb);
        let n: u64 = sa.iter().product();
        let mut rep = VarReport::new(name, n);
        if sa != sb {
            rep.mismatch = Some(format!("shape {sa:?} vs {sb:?}"));
        } else if va.nc_type != vb.nc_type {
            rep.mismatch = Some(format!("type {} vs {}", va.nc_type.cdl_name(), vb.nc_type.cdl_name()));
        } else {
            for (start, count, flat) in slabs(&sa, va.nc_type.size() as u64, slab_limit) {
                let x = ra.read_slab(name, &start, &count)?;
                let y = rb.read_slab(name, &start, &count)?;
                rep.accumulate(&x, &y, flat, |i| i, tol);
            }
        }
        reports.push(rep);
    }
    Ok(CompareReport::finish(tol, reports, only_a, only_b))
}

/// Checks that every gridcell-dimensioned variable of `replica` holds `k`
/// bit-exact copies of `base` along the gridcell axis; other variables must
/// match outright. `first_diff_index` is a flat index into the replica.
pub fn check_replication(base: &Path, replica: &Path, k: usize) -> Result<CompareReport> {
    let mut rb = open(base)?;
    let mut rr = open(replica)?;
    check_replication_readers(&mut rb, &mut rr, k, SLAB_LIMIT)
}

pub fn check_replication_readers<A: Read + Seek, B: Read + Seek>(
    rb: &mut CdfReader<A>,
    rr: &mut CdfReader<B>,
    k: usize,
    slab_limit: u64,
) -> Result<CompareReport> {
    if k == 0 {
        return Err(Error::Config("replication factor must be at least 1".into()));
    }
    let k = k as u64;
    let gb = rb.model().dim_id("gridcell").map(|d| rb.model().dim_len(d));
    let gr = rr.model().dim_id("gridcell").map(|d| rr.model().dim_len(d));
    match (gb, gr) {
        (Some(nb), Some(nr)) if nr != k * nb => {
            return Err(Error::Format(format!("replica gridcell dimension {nr} is not {k} x {nb}")));
        }
        (Some(_), None) | (None, Some(_)) => {
            return Err(Error::Format("only one file has a gridcell dimension".into()));
        }
        _ => {}
    }
    let names_a: Vec<String> = rb.model().vars.iter().map(|v| v.name.clone()).collect();
    let names_b: Vec<String> = rr.model().vars.iter().map(|v| v.name.clone()).collect();
    let only_a = names_a.iter().filter(|n| !names_b.contains(n)).cloned().collect();
    let only_b = names_b.iter().filter(|n| !names_a.contains(n)).cloned().collect();
    let tol = Tolerance::BitExact;
    let mut reports = Vec::new();
    for name in names_a.iter().filter(|n| names_b.contains(n)) {
        let vb = rb.model().var(name).unwrap().clone();
        let vr = rr.model().var(name).unwrap().clone();
        let sb = rb.model().shape(&vb);
        let sr = rr.model().shape(&vr);
        let g = vb.dims.iter().position(|&d| rb.model().dims[d].name == "gridcell");
        let mut rep = VarReport::new(name, sr.iter().product());
        let g_r = vr.dims.iter().position(|&d| rr.model().dims[d].name == "gridcell");
        let expected: Vec<u64> = sb.iter().enumerate().map(|(i, &d)| if Some(i) == g { d * k } else { d }).collect();
        if vb.nc_type != vr.nc_type {
            rep.mismatch = Some(format!("type {} vs {}", vb.nc_type.cdl_name(), vr.nc_type.cdl_name()));
        } else if g != g_r || sr != expected {
            rep.mismatch = Some(format!("shape {sr:?}, expected {expected:?}"));
        } else if let Some(g) = g {
            let n = sb[g];
            let inner: u64 = sb[g + 1..].iter().product();
            let size = vb.nc_type.size() as u64;
            let outer: u64 = sb[..g].iter().product();
            let per = (slab_limit / (inner * size).max(1)).max(1);
            for o in 0..outer {
                let mut idx = vec![0u64; g];
                let mut rem = o;
                for d in (0..g).rev() {
                    idx[d] = rem % sb[d];
                    rem /= sb[d];
                }
                let mut c0 = 0;
                while c0 < n {
                    let c = per.min(n - c0);
                    let slab = |first: u64| {
                        let mut start = idx.clone();
                        start.push(first);
                        start.extend(std::iter::repeat(0).take(sb.len() - g - 1));
                        let mut count = vec![1u64; g];
                        count.push(c);
                        count.extend_from_slice(&sb[g + 1..]);
                        (start, count)
                    };
                    let (s, cnt) = slab(c0);
                    let x = rb.read_slab(name, &s, &cnt)?;
                    for j in 0..k {
                        let (s, cnt) = slab(j * n + c0);
                        let y = rr.read_slab(name, &s, &cnt)?;
                        // Flat index in the replica for local element i of this slab.
                        let first = o * k * n * inner + (j * n + c0) * inner;
                        rep.accumulate(&x, &y, 0, |i| first + i, tol);
                    }
                    c0 += c;
                }
            }
        } else {
            for (start, count, flat) in slabs(&sb, vb.nc_type.size() as u64, slab_limit) {
                let x = rb.read_slab(name, &start, &count)?;
                let y = rr.read_slab(name, &start, &count)?;
                rep.accumulate(&x, &y, flat, |i| i, tol);
            }
        }
        reports.push(rep);
    }
    Ok(CompareReport::finish(tol, reports, only_a, only_b))
}

/// Which copy a flat replica index falls in, for a variable of `shape`
/// with the gridcell axis at `g` and base length `n`.
pub fn copy_of_index(shape: &[u64], g: usize, n: u64, flat: u64) -> u64 {
    let inner: u64 = shape[g + 1..].iter().product();
    (flat / inner % shape[g]) / n
}
