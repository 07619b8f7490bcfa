//! CSV metric reports and SVG bar charts of distance distributions.

use std::fmt::Write as _;
use std::io::Write;

use crate::error::{invalid, Result};
use crate::retrieval::RetrievalReport;

/// Writes `metric,value` rows: `mAP`, then `mAP@K` and `P@K` per K.
pub fn write_report_csv<W: Write>(mut w: W, report: &RetrievalReport) -> Result<()> {
    writeln!(w, "metric,value")?;
    writeln!(w, "mAP,{}", report.map)?;
    for (k, v) in &report.map_at {
        writeln!(w, "mAP@{k},{v}")?;
    }
    for (k, v) in &report.precision_at {
        writeln!(w, "P@{k},{v}")?;
    }
    writeln!(w, "queries,{}", report.queries)?;
    Ok(())
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 40.0;

/// Side-by-side bars of `p_plus` (neighbors) and `p_minus` (non-neighbors)
/// per Hamming distance.
pub fn histogram_svg(p_plus: &[f64], p_minus: &[f64], title: &str) -> Result<String> {
    if p_plus.len() != p_minus.len() || p_plus.is_empty() {
        return invalid("histograms must be non-empty and equally long");
    }
    if p_plus
        .iter()
        .chain(p_minus)
        .any(|v| !v.is_finite() || *v < 0.0)
    {
        return invalid("histogram masses must be finite and non-negative");
    }
    let bins = p_plus.len();
    let top = p_plus.iter().chain(p_minus).cloned().fold(0.0, f64::max);
    let scale = if top > 0.0 {
        (HEIGHT - 2.0 * MARGIN) / top
    } else {
        0.0
    };
    let slot = (WIDTH - 2.0 * MARGIN) / bins as f64;
    let bar = slot * 0.4;
    let base = HEIGHT - MARGIN;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    for (series, values, dx, color) in [
        ("p+", p_plus, 0.0, "#1f77b4"),
        ("p-", p_minus, bar, "#d62728"),
    ] {
        let mut path = String::new();
        for (l, &v) in values.iter().enumerate() {
            let x = MARGIN + l as f64 * slot + slot * 0.1 + dx;
            let h = v * scale;
            let _ = write!(path, "M{x:.2},{base:.2}h{bar:.2}v{:.2}h{:.2}Z", -h, -bar);
        }
        let _ = writeln!(
            s,
            r#"<path d="{path}" fill="{color}"><title>{series}</title></path>"#
        );
    }
    let _ = writeln!(
        s,
        r#"<line x1="{MARGIN}" y1="{base}" x2="{}" y2="{base}" stroke="black"/>"#,
        WIDTH - MARGIN
    );
    let step = bins.div_ceil(16).max(1);
    for l in (0..bins).step_by(step) {
        let x = MARGIN + (l as f64 + 0.5) * slot;
        let _ = writeln!(
            s,
            r#"<text x="{x:.2}" y="{}" font-family="sans-serif" font-size="10" text-anchor="middle">{l}</text>"#,
            base + 14.0
        );
    }
    let legend_x = WIDTH - MARGIN - 120.0;
    for (k, (label, color)) in [("neighbors", "#1f77b4"), ("non-neighbors", "#d62728")]
        .iter()
        .enumerate()
    {
        let y = MARGIN + 16.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{legend_x}" y="{y}" width="10" height="10" fill="{color}"/>"#
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11">{label}</text>"#,
            legend_x + 14.0,
            y + 9.0
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
