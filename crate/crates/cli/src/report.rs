//! Aggregates a benchmark CSV along each sweep axis and draws line charts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bench::{read_rows, BenchRow};
use crate::error::{CliError, CliResult};

pub const METRICS: [&str; 5] = ["mae_r_deg", "mae_t", "ccd", "geodesic_deg", "runtime_ms"];
pub const AXES: [&str; 4] = ["overlap", "clusters", "noise", "density"];

fn metric(row: &BenchRow, name: &str) -> Option<f64> {
    match name {
        "mae_r_deg" => row.mae_r_deg,
        "mae_t" => row.mae_t,
        "ccd" => row.ccd,
        "geodesic_deg" => row.geodesic_deg,
        "runtime_ms" => Some(row.runtime_ms),
        _ => None,
    }
}

fn axis_value(row: &BenchRow, axis: &str) -> f64 {
    match axis {
        "overlap" => row.overlap,
        "clusters" => row.clusters as f64,
        "noise" => row.noise as u8 as f64,
        _ => row.density as u8 as f64,
    }
}

/// Mean metrics of one method at one value of a sweep axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisPoint {
    pub method: String,
    pub value: f64,
    pub rows: usize,
    pub errors: usize,
    pub mae_r_deg: Option<f64>,
    pub mae_t: Option<f64>,
    pub ccd: Option<f64>,
    pub geodesic_deg: Option<f64>,
    pub runtime_ms: Option<f64>,
}

impl AxisPoint {
    fn get(&self, name: &str) -> Option<f64> {
        match name {
            "mae_r_deg" => self.mae_r_deg,
            "mae_t" => self.mae_t,
            "ccd" => self.ccd,
            "geodesic_deg" => self.geodesic_deg,
            _ => self.runtime_ms,
        }
    }
}

/// Axes with more than one distinct value; the overlap axis when nothing
/// varies.
pub fn swept_axes(rows: &[BenchRow]) -> Vec<&'static str> {
    let varied: Vec<&str> = AXES
        .into_iter()
        .filter(|axis| {
            let first = axis_value(&rows[0], axis);
            rows.iter().any(|r| axis_value(r, axis) != first)
        })
        .collect();
    if varied.is_empty() {
        vec!["overlap"]
    } else {
        varied
    }
}

/// Groups rows by method (first-seen order) and axis value (ascending),
/// averaging every metric over the successful rows.
pub fn aggregate(rows: &[BenchRow], axis: &str) -> Vec<AxisPoint> {
    let mut methods: Vec<&str> = Vec::new();
    for r in rows {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    let mut out = Vec::new();
    for m in methods {
        let mut by_value: BTreeMap<u64, (f64, Vec<&BenchRow>)> = BTreeMap::new();
        for r in rows.iter().filter(|r| r.method == m) {
            let v = axis_value(r, axis);
            // order-preserving key for nonnegative floats
            by_value.entry(v.to_bits()).or_insert((v, Vec::new())).1.push(r);
        }
        for (v, group) in by_value.into_values() {
            let ok: Vec<&BenchRow> = group.iter().copied().filter(|r| !r.is_error()).collect();
            let avg = |name: &str| {
                let vals: Vec<f64> = ok.iter().filter_map(|r| metric(r, name)).collect();
                (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
            };
            out.push(AxisPoint {
                method: m.to_string(),
                value: v,
                rows: group.len(),
                errors: group.len() - ok.len(),
                mae_r_deg: avg("mae_r_deg"),
                mae_t: avg("mae_t"),
                ccd: avg("ccd"),
                geodesic_deg: avg("geodesic_deg"),
                runtime_ms: avg("runtime_ms"),
            });
        }
    }
    out
}

fn write_points_csv(points: &[AxisPoint], axis: &str, path: &Path) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["method", axis, "rows", "errors"];
    header.extend(METRICS);
    w.write_record(&header)?;
    for p in points {
        let mut rec = vec![p.method.clone(), p.value.to_string(), p.rows.to_string(), p.errors.to_string()];
        rec.extend(METRICS.iter().map(|m| p.get(m).map(|v| v.to_string()).unwrap_or_default()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// Minimal SVG line chart: one polyline and one circle per data point for
/// every series.
pub fn line_chart_svg(title: &str, x_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let (w, h, m) = (640.0, 400.0, 60.0);
    let all: Vec<(f64, f64)> = series.iter().flat_map(|s| s.1.iter().copied()).collect();
    let span = |vals: Vec<f64>| {
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !lo.is_finite() {
            (0.0, 1.0)
        } else if hi > lo {
            (lo, hi)
        } else {
            (lo - 0.5, hi + 0.5)
        }
    };
    let (x0, x1) = span(all.iter().map(|p| p.0).collect());
    let (y0, y1) = span(all.iter().map(|p| p.1).chain([0.0]).collect());
    let sx = |x: f64| m + (x - x0) / (x1 - x0) * (w - 2.0 * m);
    let sy = |y: f64| h - m - (y - y0) / (y1 - y0) * (h - 2.0 * m);

    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#).unwrap();
    writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#).unwrap();
    writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">{}</text>"#, w / 2.0, escape(title)).unwrap();
    writeln!(s, r#"<line x1="{m}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, h - m, w - m, h - m).unwrap();
    writeln!(s, r#"<line x1="{m}" y1="{m}" x2="{m}" y2="{}" stroke="black"/>"#, h - m).unwrap();
    writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">{}</text>"#, w / 2.0, h - 15.0, escape(x_label)).unwrap();
    for (v, anchor, x, y) in [(x0, "start", m, h - m + 18.0), (x1, "end", w - m, h - m + 18.0)] {
        writeln!(s, r#"<text x="{x}" y="{y}" text-anchor="{anchor}" font-family="sans-serif" font-size="11">{}</text>"#, fmt_tick(v)).unwrap();
    }
    for (v, y) in [(y0, h - m), (y1, m)] {
        writeln!(s, r#"<text x="{}" y="{y}" text-anchor="end" font-family="sans-serif" font-size="11">{}</text>"#, m - 6.0, fmt_tick(v)).unwrap();
    }
    for (k, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let path: Vec<String> = pts.iter().map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y))).collect();
        writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, path.join(" ")).unwrap();
        for (x, y) in pts {
            writeln!(s, r#"<circle class="point" cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, sx(*x), sy(*y)).unwrap();
        }
        writeln!(s, r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" fill="{color}">{}</text>"#, w - m + 4.0, m + 14.0 * k as f64, escape(name)).unwrap();
    }
    s.push_str("</svg>\n");
    s
}

fn fmt_tick(v: f64) -> String {
    format!("{v:.3}")
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Writes `report_<axis>.csv` and one `report_<axis>_<metric>.svg` per
/// metric into `out_dir`, returning the paths written.
pub fn cmd_report(csv_path: &Path, out_dir: &Path) -> CliResult<Vec<PathBuf>> {
    let file = fs::File::open(csv_path).map_err(|e| CliError::new("io", format!("{}: {e}", csv_path.display())))?;
    let rows = read_rows(file)?;
    if rows.is_empty() {
        return Err(CliError::invalid("no data"));
    }
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for axis in swept_axes(&rows) {
        let points = aggregate(&rows, axis);
        let csv_out = out_dir.join(format!("report_{axis}.csv"));
        write_points_csv(&points, axis, &csv_out)?;
        written.push(csv_out);
        for m in METRICS {
            let mut series: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
            for p in &points {
                if series.last().map(|s| &s.0) != Some(&p.method) {
                    series.push((p.method.clone(), Vec::new()));
                }
                if let Some(v) = p.get(m) {
                    series.last_mut().unwrap().1.push((p.value, v));
                }
            }
            let svg = out_dir.join(format!("report_{axis}_{m}.svg"));
            fs::write(&svg, line_chart_svg(&format!("{m} vs {axis}"), axis, &series))?;
            written.push(svg);
        }
    }
    Ok(written)
}
