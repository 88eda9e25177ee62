//! NetCDF classic binary format, 64-bit-offset (CDF-2) and 64-bit-data (CDF-5)
//! variants, implemented from the published file grammar.
//!
//! Only 4- and 8-byte numeric types are allowed for variables, so variable
//! data never needs alignment padding; text is accepted for attributes only.

mod dump;
mod read;
mod write;

pub use dump::dump_header;
pub use read::CdfReader;
pub use write::{encode_header, write_file, write_to};

use std::fmt;

use crate::error::{Error, Result};

pub(crate) const TAG_DIMENSION: u32 = 0x0A;
pub(crate) const TAG_VARIABLE: u32 = 0x0B;
pub(crate) const TAG_ATTRIBUTE: u32 = 0x0C;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// 64-bit offsets, 32-bit sizes and counts.
    Cdf2,
    /// 64-bit offsets, sizes and counts; adds INT64.
    Cdf5,
}

impl Variant {
    pub fn version_byte(self) -> u8 {
        match self {
            Variant::Cdf2 => 2,
            Variant::Cdf5 => 5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Cdf2 => "cdf2",
            Variant::Cdf5 => "cdf5",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "cdf2" | "cdf-2" | "netcdf3_64bit" | "64bit_offset" => Ok(Variant::Cdf2),
            "cdf5" | "cdf-5" | "64bit_data" => Ok(Variant::Cdf5),
            _ => Err(format!("unknown variant {s:?} (cdf2 | cdf5)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NcType {
    Char,
    Int,
    Float,
    Double,
    Int64,
}

impl NcType {
    pub fn code(self) -> u32 {
        match self {
            NcType::Char => 2,
            NcType::Int => 4,
            NcType::Float => 5,
            NcType::Double => 6,
            NcType::Int64 => 10,
        }
    }

    pub fn from_code(code: u32) -> Result<Self> {
        Ok(match code {
            2 => NcType::Char,
            4 => NcType::Int,
            5 => NcType::Float,
            6 => NcType::Double,
            10 => NcType::Int64,
            1 | 3 | 7 | 8 | 9 | 11 => {
                return Err(Error::Format(format!("unsupported type code {code}")))
            }
            _ => return Err(Error::Format(format!("unknown type code {code}"))),
        })
    }

    pub fn size(self) -> usize {
        match self {
            NcType::Char => 1,
            NcType::Int | NcType::Float => 4,
            NcType::Double | NcType::Int64 => 8,
        }
    }

    pub fn cdl_name(self) -> &'static str {
        match self {
            NcType::Char => "char",
            NcType::Int => "int",
            NcType::Float => "float",
            NcType::Double => "double",
            NcType::Int64 => "int64",
        }
    }
}

#[derive(Debug, Clone)]
pub enum AttrValue {
    Text(String),
    Int(Vec<i32>),
    Int64(Vec<i64>),
    Float(Vec<f32>),
    Double(Vec<f64>),
}

impl AttrValue {
    pub fn nc_type(&self) -> NcType {
        match self {
            AttrValue::Text(_) => NcType::Char,
            AttrValue::Int(_) => NcType::Int,
            AttrValue::Int64(_) => NcType::Int64,
            AttrValue::Float(_) => NcType::Float,
            AttrValue::Double(_) => NcType::Double,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            AttrValue::Text(s) => s.len(),
            AttrValue::Int(v) => v.len(),
            AttrValue::Int64(v) => v.len(),
            AttrValue::Float(v) => v.len(),
            AttrValue::Double(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            AttrValue::Text(s) => Some(s),
            _ => None,
        }
    }

    /// First element widened to f64 (numeric attributes only).
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            AttrValue::Int(v) => v.first().map(|&x| x as f64),
            AttrValue::Int64(v) => v.first().map(|&x| x as f64),
            AttrValue::Float(v) => v.first().map(|&x| x as f64),
            AttrValue::Double(v) => v.first().copied(),
            AttrValue::Text(_) => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            AttrValue::Int(v) => v.first().map(|&x| x as i64),
            AttrValue::Int64(v) => v.first().copied(),
            _ => None,
        }
    }
}

/// Floats compare by bit pattern so NaN fill values survive equality checks.
impl PartialEq for AttrValue {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (AttrValue::Text(a), AttrValue::Text(b)) => a == b,
            (AttrValue::Int(a), AttrValue::Int(b)) => a == b,
            (AttrValue::Int64(a), AttrValue::Int64(b)) => a == b,
            (AttrValue::Float(a), AttrValue::Float(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            (AttrValue::Double(a), AttrValue::Double(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attribute {
    pub name: String,
    pub value: AttrValue,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DimLen {
    Fixed(u64),
    Unlimited,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dimension {
    pub name: String,
    pub len: DimLen,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub nc_type: NcType,
    pub dims: Vec<usize>,
    pub attrs: Vec<Attribute>,
}

impl Variable {
    pub fn attr(&self, name: &str) -> Option<&AttrValue> {
        self.attrs.iter().find(|a| a.name == name).map(|a| &a.value)
    }
}

/// Header-level description of a classic-format file.
#[derive(Debug, Clone, PartialEq)]
pub struct CdfFileModel {
    pub variant: Variant,
    pub numrecs: u64,
    pub dims: Vec<Dimension>,
    pub attrs: Vec<Attribute>,
    pub vars: Vec<Variable>,
}

/// Placement of one variable's data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarLayout {
    pub begin: u64,
    /// Bytes of the whole variable (fixed) or of one record (record variable).
    pub vsize: u64,
    pub is_record: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub header_len: u64,
    pub vars: Vec<VarLayout>,
    pub record_size: u64,
    /// Offset of the first record (end of fixed data).
    pub record_begin: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SizeAccounting {
    pub header_bytes: u64,
    pub fixed_bytes: u64,
    pub record_size: u64,
    pub numrecs: u64,
    pub total_bytes: u64,
}

impl CdfFileModel {
    pub fn new(variant: Variant) -> Self {
        CdfFileModel {
            variant,
            numrecs: 0,
            dims: Vec::new(),
            attrs: Vec::new(),
            vars: Vec::new(),
        }
    }

    pub fn add_dim(&mut self, name: &str, len: u64) -> Result<usize> {
        self.push_dim(name, DimLen::Fixed(len))
    }

    pub fn add_record_dim(&mut self, name: &str) -> Result<usize> {
        if self.record_dim().is_some() {
            return Err(Error::Format("only one unlimited dimension is allowed".into()));
        }
        self.push_dim(name, DimLen::Unlimited)
    }

    fn push_dim(&mut self, name: &str, len: DimLen) -> Result<usize> {
        check_name(name)?;
        if self.dim_id(name).is_some() {
            return Err(Error::Format(format!("duplicate dimension {name}")));
        }
        self.dims.push(Dimension {
            name: name.to_string(),
            len,
        });
        Ok(self.dims.len() - 1)
    }

    pub fn add_var(&mut self, name: &str, nc_type: NcType, dims: &[&str]) -> Result<usize> {
        check_name(name)?;
        if self.var_id(name).is_some() {
            return Err(Error::Format(format!("duplicate variable {name}")));
        }
        if nc_type == NcType::Char {
            return Err(Error::Format(format!(
                "variable {name}: CHAR is supported for attributes only"
            )));
        }
        let ids = dims
            .iter()
            .map(|d| {
                self.dim_id(d)
                    .ok_or_else(|| Error::Format(format!("variable {name}: unknown dimension {d}")))
            })
            .collect::<Result<Vec<_>>>()?;
        self.vars.push(Variable {
            name: name.to_string(),
            nc_type,
            dims: ids,
            attrs: Vec::new(),
        });
        Ok(self.vars.len() - 1)
    }

    pub fn put_attr(&mut self, name: &str, value: AttrValue) -> Result<()> {
        check_name(name)?;
        upsert(&mut self.attrs, name, value);
        Ok(())
    }

    pub fn put_var_attr(&mut self, var: &str, name: &str, value: AttrValue) -> Result<()> {
        check_name(name)?;
        let id = self
            .var_id(var)
            .ok_or_else(|| Error::Format(format!("unknown variable {var}")))?;
        upsert(&mut self.vars[id].attrs, name, value);
        Ok(())
    }

    pub fn attr(&self, name: &str) -> Option<&AttrValue> {
        self.attrs.iter().find(|a| a.name == name).map(|a| &a.value)
    }

    pub fn dim_id(&self, name: &str) -> Option<usize> {
        self.dims.iter().position(|d| d.name == name)
    }

    pub fn var_id(&self, name: &str) -> Option<usize> {
        self.vars.iter().position(|v| v.name == name)
    }

    pub fn var(&self, name: &str) -> Option<&Variable> {
        self.vars.iter().find(|v| v.name == name)
    }

    pub fn record_dim(&self) -> Option<usize> {
        self.dims.iter().position(|d| d.len == DimLen::Unlimited)
    }

    pub fn dim_len(&self, id: usize) -> u64 {
        match self.dims[id].len {
            DimLen::Fixed(n) => n,
            DimLen::Unlimited => self.numrecs,
        }
    }

    pub fn is_record_var(&self, var: &Variable) -> bool {
        var.dims
            .first()
            .is_some_and(|&d| self.dims[d].len == DimLen::Unlimited)
    }

    /// Full shape, the record dimension reported as `numrecs`.
    pub fn shape(&self, var: &Variable) -> Vec<u64> {
        var.dims.iter().map(|&d| self.dim_len(d)).collect()
    }

    /// Elements in one record (record variables) or in the whole variable.
    pub fn elems_per_record(&self, var: &Variable) -> u64 {
        let skip = usize::from(self.is_record_var(var));
        var.dims[skip..].iter().map(|&d| self.dim_len(d)).product()
    }

    pub fn total_elems(&self, var: &Variable) -> u64 {
        let per = self.elems_per_record(var);
        if self.is_record_var(var) {
            per * self.numrecs
        } else {
            per
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for d in &self.dims {
            check_name(&d.name)?;
            if !seen.insert(d.name.as_str()) {
                return Err(Error::Format(format!("duplicate dimension {}", d.name)));
            }
            if d.len == DimLen::Fixed(0) {
                return Err(Error::Format(format!(
                    "dimension {} has length 0; only the record dimension may be empty",
                    d.name
                )));
            }
            if let (Variant::Cdf2, DimLen::Fixed(n)) = (self.variant, d.len) {
                if n > i32::MAX as u64 {
                    return Err(Error::Format(format!(
                        "dimension {} length {n} exceeds CDF-2 limit",
                        d.name
                    )));
                }
            }
        }
        if self.dims.iter().filter(|d| d.len == DimLen::Unlimited).count() > 1 {
            return Err(Error::Format("more than one unlimited dimension".into()));
        }
        if self.variant == Variant::Cdf2 && self.numrecs > u32::MAX as u64 - 1 {
            return Err(Error::Format("numrecs exceeds CDF-2 limit".into()));
        }
        check_attrs(&self.attrs, self.variant, "global")?;
        let mut seen = std::collections::HashSet::new();
        for v in &self.vars {
            check_name(&v.name)?;
            if !seen.insert(v.name.as_str()) {
                return Err(Error::Format(format!("duplicate variable {}", v.name)));
            }
            if v.nc_type == NcType::Char {
                return Err(Error::Format(format!(
                    "variable {}: CHAR is supported for attributes only",
                    v.name
                )));
            }
            if v.nc_type == NcType::Int64 && self.variant == Variant::Cdf2 {
                return Err(Error::Format(format!(
                    "variable {}: INT64 requires CDF-5",
                    v.name
                )));
            }
            for (i, &d) in v.dims.iter().enumerate() {
                if d >= self.dims.len() {
                    return Err(Error::Format(format!("variable {}: bad dim id {d}", v.name)));
                }
                if i > 0 && self.dims[d].len == DimLen::Unlimited {
                    return Err(Error::Format(format!(
                        "variable {}: unlimited dimension must come first",
                        v.name
                    )));
                }
            }
            check_attrs(&v.attrs, self.variant, &v.name)?;
        }
        Ok(())
    }

    /// Data placement for the file as this crate writes it (no header padding).
    pub fn layout(&self) -> Result<Layout> {
        self.validate()?;
        let header_len = write::header_len(self);
        let mut vars = Vec::with_capacity(self.vars.len());
        let mut offset = header_len;
        // fixed variables first, in variable order
        let mut fixed = vec![None; self.vars.len()];
        for (i, v) in self.vars.iter().enumerate() {
            if !self.is_record_var(v) {
                let vsize = self.elems_per_record(v) * v.nc_type.size() as u64;
                fixed[i] = Some(VarLayout {
                    begin: offset,
                    vsize,
                    is_record: false,
                });
                offset += vsize;
            }
        }
        let record_begin = offset;
        let mut rec_offset = record_begin;
        for (i, v) in self.vars.iter().enumerate() {
            let l = match fixed[i] {
                Some(l) => l,
                None => {
                    let vsize = self.elems_per_record(v) * v.nc_type.size() as u64;
                    let l = VarLayout {
                        begin: rec_offset,
                        vsize,
                        is_record: true,
                    };
                    rec_offset += vsize;
                    l
                }
            };
            vars.push(l);
        }
        let layout = Layout {
            header_len,
            vars,
            record_size: rec_offset - record_begin,
            record_begin,
        };
        if self.variant == Variant::Cdf2 {
            check_cdf2_sizes(self, &layout)?;
        }
        Ok(layout)
    }

    pub fn compute_size(&self) -> Result<SizeAccounting> {
        let l = self.layout()?;
        let fixed_bytes = l.record_begin - l.header_len;
        Ok(SizeAccounting {
            header_bytes: l.header_len,
            fixed_bytes,
            record_size: l.record_size,
            numrecs: self.numrecs,
            total_bytes: l.header_len + fixed_bytes + self.numrecs * l.record_size,
        })
    }
}

impl Layout {
    /// Byte offset of element `elem` of record `rec` (ignored for fixed vars).
    pub fn elem_offset(&self, var: usize, rec: u64, elem: u64, elem_size: usize) -> u64 {
        let v = &self.vars[var];
        let base = if v.is_record {
            v.begin + rec * self.record_size
        } else {
            v.begin
        };
        base + elem * elem_size as u64
    }
}

/// CDF-2 stores per-variable sizes in 32 bits; only the last fixed variable
/// and the last record variable may exceed that.
fn check_cdf2_sizes(model: &CdfFileModel, layout: &Layout) -> Result<()> {
    const LIMIT: u64 = u32::MAX as u64 - 3;
    let last_fixed = (0..model.vars.len()).rev().find(|&i| !layout.vars[i].is_record);
    let last_rec = (0..model.vars.len()).rev().find(|&i| layout.vars[i].is_record);
    for (i, l) in layout.vars.iter().enumerate() {
        if l.vsize > LIMIT && Some(i) != last_fixed && Some(i) != last_rec {
            return Err(Error::Format(format!(
                "variable {} is {} bytes; CDF-2 allows that only for the last fixed or last record variable (use CDF-5)",
                model.vars[i].name, l.vsize
            )));
        }
    }
    Ok(())
}

fn check_name(name: &str) -> Result<()> {
    if name.is_empty() {
        return Err(Error::Format("empty name".into()));
    }
    if name.contains('\0') || name.contains('/') {
        return Err(Error::Format(format!("illegal character in name {name:?}")));
    }
    Ok(())
}

fn check_attrs(attrs: &[Attribute], variant: Variant, scope: &str) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for a in attrs {
        check_name(&a.name)?;
        if !seen.insert(a.name.as_str()) {
            return Err(Error::Format(format!("{scope}: duplicate attribute {}", a.name)));
        }
        if variant == Variant::Cdf2 && a.value.nc_type() == NcType::Int64 {
            return Err(Error::Format(format!(
                "{scope}: attribute {} is INT64, which requires CDF-5",
                a.name
            )));
        }
    }
    Ok(())
}

fn upsert(attrs: &mut Vec<Attribute>, name: &str, value: AttrValue) {
    match attrs.iter_mut().find(|a| a.name == name) {
        Some(a) => a.value = value,
        None => attrs.push(Attribute {
            name: name.to_string(),
            value,
        }),
    }
}

/// Values of one variable, in file order.
#[derive(Debug, Clone)]
pub enum VarData {
    Int(Vec<i32>),
    Int64(Vec<i64>),
    Float(Vec<f32>),
    Double(Vec<f64>),
}

impl VarData {
    pub fn nc_type(&self) -> NcType {
        match self {
            VarData::Int(_) => NcType::Int,
            VarData::Int64(_) => NcType::Int64,
            VarData::Float(_) => NcType::Float,
            VarData::Double(_) => NcType::Double,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            VarData::Int(v) => v.len(),
            VarData::Int64(v) => v.len(),
            VarData::Float(v) => v.len(),
            VarData::Double(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn zeros(nc_type: NcType, n: usize) -> Result<Self> {
        Ok(match nc_type {
            NcType::Int => VarData::Int(vec![0; n]),
            NcType::Int64 => VarData::Int64(vec![0; n]),
            NcType::Float => VarData::Float(vec![0.0; n]),
            NcType::Double => VarData::Double(vec![0.0; n]),
            NcType::Char => return Err(Error::Format("CHAR variables are unsupported".into())),
        })
    }

    /// Element `i` widened to f64.
    pub fn get_f64(&self, i: usize) -> f64 {
        match self {
            VarData::Int(v) => v[i] as f64,
            VarData::Int64(v) => v[i] as f64,
            VarData::Float(v) => v[i] as f64,
            VarData::Double(v) => v[i],
        }
    }

    /// Raw 64-bit pattern of element `i` (sign-extended ints, widened float bits).
    pub fn bits(&self, i: usize) -> u64 {
        match self {
            VarData::Int(v) => v[i] as i64 as u64,
            VarData::Int64(v) => v[i] as u64,
            VarData::Float(v) => v[i].to_bits() as u64,
            VarData::Double(v) => v[i].to_bits(),
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.get_f64(i)).collect()
    }

    pub fn slice(&self, range: std::ops::Range<usize>) -> VarData {
        match self {
            VarData::Int(v) => VarData::Int(v[range].to_vec()),
            VarData::Int64(v) => VarData::Int64(v[range].to_vec()),
            VarData::Float(v) => VarData::Float(v[range].to_vec()),
            VarData::Double(v) => VarData::Double(v[range].to_vec()),
        }
    }

    pub fn extend_from(&mut self, other: &VarData) -> Result<()> {
        match (self, other) {
            (VarData::Int(a), VarData::Int(b)) => a.extend_from_slice(b),
            (VarData::Int64(a), VarData::Int64(b)) => a.extend_from_slice(b),
            (VarData::Float(a), VarData::Float(b)) => a.extend_from_slice(b),
            (VarData::Double(a), VarData::Double(b)) => a.extend_from_slice(b),
            _ => return Err(Error::Format("type mismatch while concatenating".into())),
        }
        Ok(())
    }

    pub fn append_be_bytes(&self, out: &mut Vec<u8>) {
        match self {
            VarData::Int(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_be_bytes())),
            VarData::Int64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_be_bytes())),
            VarData::Float(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_be_bytes())),
            VarData::Double(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_be_bytes())),
        }
    }

    pub fn from_be_bytes(nc_type: NcType, bytes: &[u8]) -> Result<Self> {
        let size = nc_type.size();
        if bytes.len() % size != 0 {
            return Err(Error::Format("byte count not a multiple of element size".into()));
        }
        Ok(match nc_type {
            NcType::Int => VarData::Int(
                bytes
                    .chunks_exact(4)
                    .map(|c| i32::from_be_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            NcType::Int64 => VarData::Int64(
                bytes
                    .chunks_exact(8)
                    .map(|c| i64::from_be_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            NcType::Float => VarData::Float(
                bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_be_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            NcType::Double => VarData::Double(
                bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_be_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            NcType::Char => return Err(Error::Format("CHAR variables are unsupported".into())),
        })
    }
}

/// Bitwise equality (NaN payloads included).
impl PartialEq for VarData {
    fn eq(&self, other: &Self) -> bool {
        self.nc_type() == other.nc_type()
            && self.len() == other.len()
            && (0..self.len()).all(|i| self.bits(i) == other.bits(i))
    }
}

impl From<Vec<i32>> for VarData {
    fn from(v: Vec<i32>) -> Self {
        VarData::Int(v)
    }
}
impl From<Vec<i64>> for VarData {
    fn from(v: Vec<i64>) -> Self {
        VarData::Int64(v)
    }
}
impl From<Vec<f32>> for VarData {
    fn from(v: Vec<f32>) -> Self {
        VarData::Float(v)
    }
}
impl From<Vec<f64>> for VarData {
    fn from(v: Vec<f64>) -> Self {
        VarData::Double(v)
    }
}

/// Element types that can be placed into a variable's byte range.
pub trait CdfValue: Copy + Send + Sync + 'static {
    const NC_TYPE: NcType;
    fn put_be(self, out: &mut Vec<u8>);
}

impl CdfValue for i32 {
    const NC_TYPE: NcType = NcType::Int;
    fn put_be(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_be_bytes());
    }
}
impl CdfValue for i64 {
    const NC_TYPE: NcType = NcType::Int64;
    fn put_be(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_be_bytes());
    }
}
impl CdfValue for f32 {
    const NC_TYPE: NcType = NcType::Float;
    fn put_be(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_be_bytes());
    }
}
impl CdfValue for f64 {
    const NC_TYPE: NcType = NcType::Double;
    fn put_be(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_be_bytes());
    }
}

impl fmt::Display for SizeAccounting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "header={} fixed={} record_size={} numrecs={} total={}",
            self.header_bytes, self.fixed_bytes, self.record_size, self.numrecs, self.total_bytes
        )
    }
}
