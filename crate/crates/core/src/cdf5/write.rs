use std::io::Write;

use super::{
    AttrValue, Attribute, CdfFileModel, DimLen, Layout, Variant, TAG_ATTRIBUTE, TAG_DIMENSION,
    TAG_VARIABLE, VarData,
};
use crate::error::{Error, Result};

struct HeaderWriter {
    buf: Vec<u8>,
    variant: Variant,
}

impl HeaderWriter {
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    /// NON_NEG: 32-bit under CDF-2, 64-bit under CDF-5.
    fn count(&mut self, v: u64) {
        match self.variant {
            Variant::Cdf2 => self.u32(v as u32),
            Variant::Cdf5 => self.u64(v),
        }
    }

    fn pad(&mut self) {
        while self.buf.len() % 4 != 0 {
            self.buf.push(0);
        }
    }

    fn name(&mut self, s: &str) {
        self.count(s.len() as u64);
        self.buf.extend_from_slice(s.as_bytes());
        self.pad();
    }

    fn absent(&mut self) {
        self.u32(0);
        self.count(0);
    }

    fn attrs(&mut self, attrs: &[Attribute]) {
        if attrs.is_empty() {
            self.absent();
            return;
        }
        self.u32(TAG_ATTRIBUTE);
        self.count(attrs.len() as u64);
        for a in attrs {
            self.name(&a.name);
            self.u32(a.value.nc_type().code());
            self.count(a.value.len() as u64);
            match &a.value {
                AttrValue::Text(s) => self.buf.extend_from_slice(s.as_bytes()),
                AttrValue::Int(v) => v.iter().for_each(|x| self.buf.extend_from_slice(&x.to_be_bytes())),
                AttrValue::Int64(v) => v.iter().for_each(|x| self.buf.extend_from_slice(&x.to_be_bytes())),
                AttrValue::Float(v) => v.iter().for_each(|x| self.buf.extend_from_slice(&x.to_be_bytes())),
                AttrValue::Double(v) => v.iter().for_each(|x| self.buf.extend_from_slice(&x.to_be_bytes())),
            }
            self.pad();
        }
    }
}

fn encode(model: &CdfFileModel, layout: Option<&Layout>) -> Vec<u8> {
    let mut w = HeaderWriter {
        buf: Vec::with_capacity(256),
        variant: model.variant,
    };
    w.buf.extend_from_slice(b"CDF");
    w.buf.push(model.variant.version_byte());
    w.count(model.numrecs);

    if model.dims.is_empty() {
        w.absent();
    } else {
        w.u32(TAG_DIMENSION);
        w.count(model.dims.len() as u64);
        for d in &model.dims {
            w.name(&d.name);
            w.count(match d.len {
                DimLen::Fixed(n) => n,
                DimLen::Unlimited => 0,
            });
        }
    }

    w.attrs(&model.attrs);

    if model.vars.is_empty() {
        w.absent();
    } else {
        w.u32(TAG_VARIABLE);
        w.count(model.vars.len() as u64);
        for (i, v) in model.vars.iter().enumerate() {
            w.name(&v.name);
            w.count(v.dims.len() as u64);
            for &d in &v.dims {
                w.count(d as u64);
            }
            w.attrs(&v.attrs);
            w.u32(v.nc_type.code());
            let (vsize, begin) = layout.map_or((0, 0), |l| (l.vars[i].vsize, l.vars[i].begin));
            match model.variant {
                Variant::Cdf2 => w.u32(vsize.min(u32::MAX as u64) as u32),
                Variant::Cdf5 => w.u64(vsize),
            }
            // OFFSET is 64-bit in both supported variants
            w.u64(begin);
        }
    }
    w.buf
}

pub(crate) fn header_len(model: &CdfFileModel) -> u64 {
    encode(model, None).len() as u64
}

/// Header bytes with begin offsets filled from the computed layout.
pub fn encode_header(model: &CdfFileModel) -> Result<(Vec<u8>, Layout)> {
    let layout = model.layout()?;
    let bytes = encode(model, Some(&layout));
    debug_assert_eq!(bytes.len() as u64, layout.header_len);
    Ok((bytes, layout))
}

fn check_data(model: &CdfFileModel, data: &[VarData]) -> Result<()> {
    if data.len() != model.vars.len() {
        return Err(Error::Format(format!(
            "{} data arrays for {} variables",
            data.len(),
            model.vars.len()
        )));
    }
    for (v, d) in model.vars.iter().zip(data) {
        if d.nc_type() != v.nc_type {
            return Err(Error::Format(format!(
                "variable {}: data type {:?} does not match {:?}",
                v.name,
                d.nc_type(),
                v.nc_type
            )));
        }
        let want = model.total_elems(v);
        if d.len() as u64 != want {
            return Err(Error::Format(format!(
                "variable {}: {} values supplied, {} required (every element must be written)",
                v.name,
                d.len(),
                want
            )));
        }
    }
    Ok(())
}

/// Serializes a complete file into `out`; returns the number of bytes written.
pub fn write_to<W: Write>(model: &CdfFileModel, data: &[VarData], mut out: W) -> Result<u64> {
    check_data(model, data)?;
    let (header, layout) = encode_header(model)?;
    out.write_all(&header)?;
    let mut written = header.len() as u64;
    let mut buf = Vec::new();
    for (v, d) in model.vars.iter().zip(data) {
        if !model.is_record_var(v) {
            buf.clear();
            d.append_be_bytes(&mut buf);
            out.write_all(&buf)?;
            written += buf.len() as u64;
        }
    }
    let rec_vars: Vec<usize> = (0..model.vars.len())
        .filter(|&i| layout.vars[i].is_record)
        .collect();
    for r in 0..model.numrecs {
        for &i in &rec_vars {
            let per = model.elems_per_record(&model.vars[i]) as usize;
            let start = r as usize * per;
            buf.clear();
            data[i].slice(start..start + per).append_be_bytes(&mut buf);
            out.write_all(&buf)?;
            written += buf.len() as u64;
        }
    }
    let expected = model.compute_size()?.total_bytes;
    if written != expected {
        return Err(Error::Integrity(format!(
            "wrote {written} bytes but size accounting expects {expected}"
        )));
    }
    Ok(written)
}

pub fn write_file(model: &CdfFileModel, data: &[VarData]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    write_to(model, data, &mut out)?;
    Ok(out)
}
