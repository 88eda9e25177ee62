use std::fmt::Write;

use super::{ScalingTable, Source};

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Grouped bar chart: ideal and achieved speedup per core count, with the
/// efficiency printed above each pair. Model tables are labeled as such.
pub fn speedup_svg(table: &ScalingTable, title: &str) -> String {
    let n = table.len().max(1);
    let (w, h) = (120 + 90 * n as u32, 360u32);
    let (left, bottom, top) = (60.0, h as f64 - 50.0, 50.0);
    let ymax = table.ideal.iter().chain(&table.speedup).cloned().fold(1.0_f64, f64::max) * 1.15;
    let y = |v: f64| bottom - (bottom - top) * v / ymax;
    let label = match table.source {
        Source::Model => format!("{title} (model prediction)"),
        Source::Measured => title.to_string(),
    };

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, w / 2, escape(&label));
    let _ = writeln!(s, r#"<line x1="{left}" y1="{bottom}" x2="{}" y2="{bottom}" stroke="black"/>"#, w as f64 - 20.0);
    let _ = writeln!(s, r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{bottom}" stroke="black"/>"#);
    for tick in 0..=4 {
        let v = ymax * tick as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{v:.1}</text>"#, left - 6.0, y(v) + 4.0);
    }
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" transform="rotate(-90 16 {:.1})" text-anchor="middle">speedup</text>"#,
        (top + bottom) / 2.0,
        (top + bottom) / 2.0
    );

    for (i, r) in table.records.iter().enumerate() {
        let x0 = left + 20.0 + 90.0 * i as f64;
        let (ideal, actual) = (table.ideal[i], table.speedup[i]);
        let _ = writeln!(
            s,
            r##"<rect class="ideal" x="{x0:.1}" y="{:.1}" width="30" height="{:.1}" fill="#9bb8d3"/>"##,
            y(ideal),
            bottom - y(ideal)
        );
        let _ = writeln!(
            s,
            r##"<rect class="actual" x="{:.1}" y="{:.1}" width="30" height="{:.1}" fill="#d9534f"/>"##,
            x0 + 32.0,
            y(actual),
            bottom - y(actual)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{:.1}%</text>"#,
            x0 + 31.0,
            y(ideal.max(actual)) - 6.0,
            table.efficiency[i] * 100.0
        );
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, x0 + 31.0, bottom + 18.0, r.cores);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">cores</text>"#, w / 2, h - 10);
    let lx = w as f64 - 150.0;
    let _ = writeln!(s, r##"<rect x="{lx}" y="36" width="12" height="12" fill="#9bb8d3"/><text x="{}" y="46">ideal</text>"##, lx + 16.0);
    let _ = writeln!(s, r##"<rect x="{}" y="36" width="12" height="12" fill="#d9534f"/><text x="{}" y="46">actual</text>"##, lx + 64.0, lx + 80.0);
    s.push_str("</svg>\n");
    s
}
