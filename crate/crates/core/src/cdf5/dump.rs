use std::fmt::Write;

use super::{AttrValue, Attribute, CdfFileModel, DimLen};

fn fmt_attr_value(v: &AttrValue) -> String {
    fn join<T: ToString>(xs: &[T], suffix: &str) -> String {
        xs.iter()
            .map(|x| format!("{}{suffix}", x.to_string()))
            .collect::<Vec<_>>()
            .join(", ")
    }
    match v {
        AttrValue::Text(s) => format!("{s:?}"),
        AttrValue::Int(xs) => join(xs, ""),
        AttrValue::Int64(xs) => join(xs, "LL"),
        AttrValue::Float(xs) => join(
            &xs.iter().map(|x| format_float(*x as f64)).collect::<Vec<_>>(),
            "f",
        ),
        AttrValue::Double(xs) => join(
            &xs.iter().map(|x| format_float(*x)).collect::<Vec<_>>(),
            "",
        ),
    }
}

fn format_float(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 { "Infinity".into() } else { "-Infinity".into() }
    } else {
        format!("{x:?}")
    }
}

fn write_attrs(out: &mut String, owner: &str, attrs: &[Attribute]) {
    for a in attrs {
        let _ = writeln!(out, "\t\t{owner}:{} = {} ;", a.name, fmt_attr_value(&a.value));
    }
}

/// Header in the CDL-like layout of `ncdump -h`; stable for golden tests.
pub fn dump_header(name: &str, model: &CdfFileModel) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "netcdf {name} {{ // format: {}", model.variant.name());
    if !model.dims.is_empty() {
        out.push_str("dimensions:\n");
        for d in &model.dims {
            match d.len {
                DimLen::Fixed(n) => {
                    let _ = writeln!(out, "\t{} = {n} ;", d.name);
                }
                DimLen::Unlimited => {
                    let _ = writeln!(
                        out,
                        "\t{} = UNLIMITED ; // ({} currently)",
                        d.name, model.numrecs
                    );
                }
            }
        }
    }
    if !model.vars.is_empty() {
        out.push_str("variables:\n");
        for v in &model.vars {
            let dims = v
                .dims
                .iter()
                .map(|&d| model.dims[d].name.as_str())
                .collect::<Vec<_>>()
                .join(", ");
            if dims.is_empty() {
                let _ = writeln!(out, "\t{} {} ;", v.nc_type.cdl_name(), v.name);
            } else {
                let _ = writeln!(out, "\t{} {}({dims}) ;", v.nc_type.cdl_name(), v.name);
            }
            write_attrs(&mut out, &v.name, &v.attrs);
        }
    }
    if !model.attrs.is_empty() {
        out.push_str("\n// global attributes:\n");
        write_attrs(&mut out, "", &model.attrs);
    }
    out.push_str("}\n");
    out
}
