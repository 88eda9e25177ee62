use std::fs::File;
use std::io::{self, BufReader, Cursor, Read, Seek, SeekFrom};
use std::path::Path;

use super::{
    AttrValue, Attribute, CdfFileModel, DimLen, Dimension, Layout, NcType, VarData, VarLayout,
    Variable, Variant, TAG_ATTRIBUTE, TAG_DIMENSION, TAG_VARIABLE,
};
use crate::error::{Error, Result};

const STREAMING: u64 = 0xFFFF_FFFF;

struct HeaderReader<R> {
    inner: R,
    pos: u64,
    variant: Variant,
}

fn truncated(e: io::Error) -> Error {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        Error::Format("truncated header".into())
    } else {
        Error::Io(e)
    }
}

impl<R: Read> HeaderReader<R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner.read_exact(&mut buf).map_err(truncated)?;
        self.pos += n as u64;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.bytes(4)?;
        Ok(u32::from_be_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.bytes(8)?;
        Ok(u64::from_be_bytes(b.try_into().unwrap()))
    }

    fn count(&mut self) -> Result<u64> {
        match self.variant {
            Variant::Cdf2 => {
                let v = self.u32()?;
                if v > i32::MAX as u32 {
                    return Err(Error::Format(format!("negative count {}", v as i32)));
                }
                Ok(v as u64)
            }
            Variant::Cdf5 => {
                let v = self.u64()?;
                if v > i64::MAX as u64 {
                    return Err(Error::Format("negative count".into()));
                }
                Ok(v)
            }
        }
    }

    fn skip_pad(&mut self) -> Result<()> {
        let rem = (self.pos % 4) as usize;
        if rem != 0 {
            self.bytes(4 - rem)?;
        }
        Ok(())
    }

    fn name(&mut self) -> Result<String> {
        let n = self.count()?;
        if n == 0 || n > 1 << 20 {
            return Err(Error::Format(format!("bad name length {n}")));
        }
        let raw = self.bytes(n as usize)?;
        self.skip_pad()?;
        String::from_utf8(raw).map_err(|_| Error::Format("name is not UTF-8".into()))
    }

    /// Returns the element count of a tagged list; 0 for ABSENT.
    fn list_header(&mut self, tag: u32, what: &str) -> Result<u64> {
        let t = self.u32()?;
        let n = self.count()?;
        if t == 0 {
            if n != 0 {
                return Err(Error::Format(format!("{what} list: ABSENT marker with count {n}")));
            }
            return Ok(0);
        }
        if t != tag {
            return Err(Error::Format(format!("{what} list: unexpected tag {t:#x}")));
        }
        Ok(n)
    }

    fn attrs(&mut self) -> Result<Vec<Attribute>> {
        let n = self.list_header(TAG_ATTRIBUTE, "attribute")?;
        let mut out = Vec::with_capacity(n.min(1024) as usize);
        for _ in 0..n {
            let name = self.name()?;
            let ty = NcType::from_code(self.u32()?)?;
            let len = self.count()? as usize;
            if len > 1 << 28 {
                return Err(Error::Format(format!("attribute {name}: implausible length {len}")));
            }
            let raw = self.bytes(len * ty.size())?;
            self.skip_pad()?;
            let value = match ty {
                NcType::Char => AttrValue::Text(
                    String::from_utf8(raw)
                        .map_err(|_| Error::Format(format!("attribute {name}: text not UTF-8")))?,
                ),
                other => match VarData::from_be_bytes(other, &raw)? {
                    VarData::Int(v) => AttrValue::Int(v),
                    VarData::Int64(v) => AttrValue::Int64(v),
                    VarData::Float(v) => AttrValue::Float(v),
                    VarData::Double(v) => AttrValue::Double(v),
                },
            };
            out.push(Attribute { name, value });
        }
        Ok(out)
    }
}

fn parse_header<R: Read>(inner: R) -> Result<(CdfFileModel, Vec<VarLayout>, u64)> {
    let mut magic = [0u8; 4];
    let mut inner = inner;
    inner.read_exact(&mut magic).map_err(truncated)?;
    if &magic[..3] != b"CDF" {
        return Err(Error::Format("bad magic: not a NetCDF classic file".into()));
    }
    let variant = match magic[3] {
        2 => Variant::Cdf2,
        5 => Variant::Cdf5,
        v => {
            return Err(Error::Format(format!(
                "unsupported variant: version byte {v:#04x} (only CDF-2 and CDF-5)"
            )))
        }
    };
    let mut r = HeaderReader {
        inner,
        pos: 4,
        variant,
    };
    let numrecs = match variant {
        Variant::Cdf2 => r.u32()? as u64,
        Variant::Cdf5 => r.u64()?,
    };
    if numrecs == STREAMING && variant == Variant::Cdf2 {
        return Err(Error::Format("streaming numrecs is not supported".into()));
    }

    let ndims = r.list_header(TAG_DIMENSION, "dimension")?;
    let mut dims = Vec::new();
    for _ in 0..ndims {
        let name = r.name()?;
        let len = r.count()?;
        dims.push(Dimension {
            name,
            len: if len == 0 {
                DimLen::Unlimited
            } else {
                DimLen::Fixed(len)
            },
        });
    }
    let attrs = r.attrs()?;

    let nvars = r.list_header(TAG_VARIABLE, "variable")?;
    let mut vars = Vec::new();
    let mut begins = Vec::new();
    for _ in 0..nvars {
        let name = r.name()?;
        let nd = r.count()?;
        let mut ids = Vec::new();
        for _ in 0..nd {
            let id = r.count()? as usize;
            if id >= dims.len() {
                return Err(Error::Format(format!("variable {name}: bad dimension id {id}")));
            }
            ids.push(id);
        }
        let vattrs = r.attrs()?;
        let ty = NcType::from_code(r.u32()?)?;
        let vsize = match variant {
            Variant::Cdf2 => r.u32()? as u64,
            Variant::Cdf5 => r.u64()?,
        };
        let begin = r.u64()?;
        vars.push(Variable {
            name,
            nc_type: ty,
            dims: ids,
            attrs: vattrs,
        });
        begins.push((begin, vsize));
    }
    let header_len = r.pos;
    let model = CdfFileModel {
        variant,
        numrecs,
        dims,
        attrs,
        vars,
    };
    model.validate()?;
    let mut layouts = Vec::with_capacity(begins.len());
    for (v, (begin, _)) in model.vars.iter().zip(&begins) {
        if *begin < header_len {
            return Err(Error::Format(format!(
                "variable {}: begin offset {begin} overlaps the {header_len}-byte header",
                v.name
            )));
        }
        layouts.push(VarLayout {
            begin: *begin,
            // recomputed: CDF-2 stores a saturated value for oversized variables
            vsize: model.elems_per_record(v) * v.nc_type.size() as u64,
            is_record: model.is_record_var(v),
        });
    }
    Ok((model, layouts, header_len))
}

/// Parsed header plus lazy access to variable data.
pub struct CdfReader<R> {
    inner: R,
    model: CdfFileModel,
    layout: Layout,
    len: u64,
}

impl CdfReader<BufReader<File>> {
    pub fn open(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::file(path, e))?;
        CdfReader::new(BufReader::new(file))
    }
}

impl CdfReader<Cursor<Vec<u8>>> {
    pub fn from_bytes(bytes: Vec<u8>) -> Result<Self> {
        CdfReader::new(Cursor::new(bytes))
    }
}

impl<R: Read + Seek> CdfReader<R> {
    pub fn new(mut inner: R) -> Result<Self> {
        inner.seek(SeekFrom::Start(0))?;
        let (model, vars, header_len) = parse_header(&mut inner)?;
        let len = inner.seek(SeekFrom::End(0))?;
        let record_size = vars.iter().filter(|l| l.is_record).map(|l| l.vsize).sum();
        let record_begin = vars
            .iter()
            .filter(|l| l.is_record)
            .map(|l| l.begin)
            .min()
            .unwrap_or(len);
        Ok(CdfReader {
            inner,
            model,
            layout: Layout {
                header_len,
                vars,
                record_size,
                record_begin,
            },
            len,
        })
    }

    pub fn model(&self) -> &CdfFileModel {
        &self.model
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn file_len(&self) -> u64 {
        self.len
    }

    fn lookup(&self, name: &str) -> Result<usize> {
        self.model
            .var_id(name)
            .ok_or_else(|| Error::Format(format!("no variable named {name}")))
    }

    fn read_at(&mut self, offset: u64, n: usize, what: &str) -> Result<Vec<u8>> {
        if offset + n as u64 > self.len {
            return Err(Error::Format(format!(
                "{what}: data at {offset}+{n} runs past end of file ({} bytes)",
                self.len
            )));
        }
        self.inner.seek(SeekFrom::Start(offset))?;
        let mut buf = vec![0u8; n];
        self.inner.read_exact(&mut buf)?;
        Ok(buf)
    }

    pub fn read_var(&mut self, name: &str) -> Result<VarData> {
        let id = self.lookup(name)?;
        let bytes = self.var_bytes(id)?;
        VarData::from_be_bytes(self.model.vars[id].nc_type, &bytes)
    }

    /// Raw big-endian bytes of a whole variable, records concatenated.
    pub fn var_bytes(&mut self, id: usize) -> Result<Vec<u8>> {
        let v = self.model.vars[id].clone();
        let l = self.layout.vars[id];
        if !l.is_record {
            return self.read_at(l.begin, l.vsize as usize, &v.name);
        }
        let mut out = Vec::with_capacity((l.vsize * self.model.numrecs) as usize);
        for r in 0..self.model.numrecs {
            let chunk = self.read_at(l.begin + r * self.layout.record_size, l.vsize as usize, &v.name)?;
            out.extend_from_slice(&chunk);
        }
        Ok(out)
    }

    /// Hyperslab read: `start`/`count` per dimension (record dimension first
    /// for record variables), values returned in row-major order.
    pub fn read_slab(&mut self, name: &str, start: &[u64], count: &[u64]) -> Result<VarData> {
        let id = self.lookup(name)?;
        let var = self.model.vars[id].clone();
        let shape = self.model.shape(&var);
        if start.len() != shape.len() || count.len() != shape.len() {
            return Err(Error::Format(format!(
                "{name}: slab rank {} does not match variable rank {}",
                start.len(),
                shape.len()
            )));
        }
        for k in 0..shape.len() {
            if start[k] + count[k] > shape[k] {
                return Err(Error::Format(format!(
                    "{name}: slab [{}, {}) exceeds dimension {k} of length {}",
                    start[k],
                    start[k] + count[k],
                    shape[k]
                )));
            }
        }
        let ty = var.nc_type;
        let size = ty.size() as u64;
        let total: u64 = count.iter().product();
        if total == 0 {
            return VarData::from_be_bytes(ty, &[]);
        }
        let l = self.layout.vars[id];
        if shape.is_empty() {
            let b = self.read_at(l.begin, size as usize, name)?;
            return VarData::from_be_bytes(ty, &b);
        }
        let rank = shape.len();
        let inner_len = count[rank - 1];
        let rec = usize::from(l.is_record);
        // strides within one record (or the whole fixed variable)
        let mut strides = vec![1u64; rank];
        for k in (rec..rank.saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * shape[k + 1];
        }
        let mut out = Vec::with_capacity((total * size) as usize);
        let mut idx = vec![0u64; rank.saturating_sub(1)];
        loop {
            let mut elem = start[rank - 1];
            let mut rec_no = 0;
            for (k, &i) in idx.iter().enumerate() {
                if k < rec {
                    rec_no = start[k] + i;
                } else {
                    elem += (start[k] + i) * strides[k];
                }
            }
            if rank == 1 && rec == 1 {
                // record scalar: the single dimension is the record axis
                for r in 0..count[0] {
                    let off = l.begin + (start[0] + r) * self.layout.record_size;
                    let b = self.read_at(off, size as usize, name)?;
                    out.extend_from_slice(&b);
                }
                break;
            }
            let off = l.begin + rec_no * self.layout.record_size + elem * size;
            let b = self.read_at(off, (inner_len * size) as usize, name)?;
            out.extend_from_slice(&b);
            // odometer over the outer dims
            let mut k = idx.len();
            loop {
                if k == 0 {
                    return VarData::from_be_bytes(ty, &out);
                }
                k -= 1;
                idx[k] += 1;
                if idx[k] < count[k] {
                    break;
                }
                idx[k] = 0;
            }
        }
        VarData::from_be_bytes(ty, &out)
    }

    /// Reads records `[first, first + n)` of a record variable.
    pub fn read_records(&mut self, name: &str, first: u64, n: u64) -> Result<VarData> {
        let id = self.lookup(name)?;
        let var = self.model.vars[id].clone();
        if !self.model.is_record_var(&var) {
            return Err(Error::Format(format!("{name} is not a record variable")));
        }
        let shape = self.model.shape(&var);
        let mut start = vec![0; shape.len()];
        let mut count = shape.clone();
        start[0] = first;
        count[0] = n;
        self.read_slab(name, &start, &count)
    }
}
