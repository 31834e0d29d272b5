use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{data_err, Error, Result};

use super::rolling::{ForecastRow, ForecastTable};

const CELL_W: f64 = 18.0;
const CELL_H: f64 = 16.0;
const LEFT: f64 = 80.0;
const TOP: f64 = 36.0;
const BOTTOM: f64 = 56.0;
const RIGHT: f64 = 20.0;
const CORRECT: &str = "#1a9641";
const WRONG: &str = "#d7191c";

/// Grey level for a cell: `round(255 · (1 − p))`, so certainty renders black.
pub fn cell_shade(p: f64) -> u8 {
    (255.0 * (1.0 - p.clamp(0.0, 1.0))).round() as u8
}

pub fn heatmap_csv(table: &ForecastTable) -> String {
    let mut out = String::from("period,realized_value,realized_token,predicted_token,correct_flag");
    for j in 0..table.n_bins {
        write!(out, ",p{j}").unwrap();
    }
    out.push_str(",variable,realized_standardized,interval_lower,interval_upper,clamped,log_prob\n");
    for r in &table.rows {
        write!(
            out,
            "{},{},{},{},{}",
            r.period,
            r.realized_value,
            r.realized_token,
            r.predicted,
            (r.predicted == r.realized_token) as u8
        )
        .unwrap();
        for p in &r.probs {
            write!(out, ",{p}").unwrap();
        }
        writeln!(
            out,
            ",{},{},{},{},{},{}",
            table.target_name,
            r.realized_standardized,
            r.interval.0,
            r.interval.1,
            r.clamped as u8,
            r.log_prob
        )
        .unwrap();
    }
    out
}

/// Reads a heatmap CSV back into its variable name and rows.
pub fn parse_heatmap_csv(text: &str) -> Result<(String, Vec<ForecastRow>)> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or_else(|| data_err!("empty heatmap file"))?.split(',').collect();
    let n_bins = header.iter().filter(|h| h.starts_with('p') && h[1..].parse::<usize>().is_ok()).count();
    if header.len() != 5 + n_bins + 6 || header[0] != "period" {
        return Err(data_err!("unexpected heatmap header"));
    }
    let mut name = String::new();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != header.len() {
            return Err(data_err!("malformed heatmap row {}", i + 1));
        }
        let num = |s: &str| -> Result<f64> { s.parse().map_err(|_| data_err!("bad number {s:?} in heatmap row {}", i + 1)) };
        let int = |s: &str| -> Result<usize> { s.parse().map_err(|_| data_err!("bad integer {s:?} in heatmap row {}", i + 1)) };
        let probs = f[5..5 + n_bins].iter().map(|s| num(s)).collect::<Result<Vec<_>>>()?;
        let meta = &f[5 + n_bins..];
        name = meta[0].to_string();
        rows.push(ForecastRow {
            period: f[0].parse()?,
            realized_value: num(f[1])?,
            realized_token: int(f[2])?,
            predicted: int(f[3])?,
            probs,
            realized_standardized: num(meta[1])?,
            interval: (num(meta[2])?, num(meta[3])?),
            clamped: meta[4] == "1",
            log_prob: num(meta[5])?,
        });
    }
    Ok((name, rows))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Standalone SVG: time runs left to right, tokens bottom to top.
pub fn heatmap_svg(table: &ForecastTable) -> String {
    let n = table.rows.len();
    let j = table.n_bins;
    let width = LEFT + n as f64 * CELL_W + RIGHT;
    let height = TOP + j as f64 * CELL_H + BOTTOM;
    let y_of = |level: f64| TOP + (j as f64 - level) * CELL_H;
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="10">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="{width}" height="{height}" fill="white"/>"#).unwrap();
    writeln!(s, r#"<text x="{LEFT}" y="20" font-size="13">{}</text>"#, escape(&table.target_name)).unwrap();

    for (c, r) in table.rows.iter().enumerate() {
        let x = LEFT + c as f64 * CELL_W;
        for (t, p) in r.probs.iter().enumerate() {
            let v = cell_shade(*p);
            writeln!(
                s,
                r#"<rect class="cell" data-row="{c}" data-token="{t}" x="{x}" y="{}" width="{CELL_W}" height="{CELL_H}" fill="rgb({v},{v},{v})"/>"#,
                y_of(t as f64 + 1.0)
            )
            .unwrap();
        }
    }

    // predicted-token bars
    for (c, r) in table.rows.iter().enumerate() {
        let x = LEFT + c as f64 * CELL_W + 2.0;
        let y = y_of(r.predicted as f64 + 0.5) - 1.5;
        let colour = if r.predicted == r.realized_token { CORRECT } else { WRONG };
        writeln!(
            s,
            r#"<rect class="pred" data-row="{c}" x="{x}" y="{y}" width="{}" height="3" fill="{colour}"/>"#,
            CELL_W - 4.0
        )
        .unwrap();
    }

    // realized values placed within their bins
    let mut points = Vec::with_capacity(n);
    for (c, r) in table.rows.iter().enumerate() {
        let t = r.realized_token;
        let (lo, hi) = (table.edges[t], table.edges[t + 1]);
        let frac = if hi > lo { ((r.realized_value - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.5 };
        let x = LEFT + (c as f64 + 0.5) * CELL_W;
        points.push(format!("{x:.2},{:.2}", y_of(t as f64 + frac)));
    }
    writeln!(
        s,
        r##"<polyline class="realized" points="{}" fill="none" stroke="#2b83ba" stroke-width="1.5"/>"##,
        points.join(" ")
    )
    .unwrap();

    // boundary labels on the token axis
    for (e, edge) in table.edges.iter().enumerate() {
        let y = y_of(e as f64);
        writeln!(s, r#"<line x1="{}" y1="{y}" x2="{LEFT}" y2="{y}" stroke="black"/>"#, LEFT - 4.0).unwrap();
        writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{edge:.2}</text>"#, LEFT - 6.0, y + 3.0).unwrap();
    }
    for (c, r) in table.rows.iter().enumerate().step_by(4) {
        let x = LEFT + (c as f64 + 0.5) * CELL_W;
        let y = TOP + j as f64 * CELL_H + 14.0;
        writeln!(s, r#"<text x="{x}" y="{y}" text-anchor="middle">{}</text>"#, r.period).unwrap();
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `heatmap_<variable>.csv` and `heatmap_<variable>.svg` into `dir`.
pub fn export_heatmap(table: &ForecastTable, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv = dir.join(format!("heatmap_{}.csv", table.target_name));
    let svg = dir.join(format!("heatmap_{}.svg", table.target_name));
    std::fs::write(&csv, heatmap_csv(table)).map_err(|e| Error::io(&csv, e))?;
    std::fs::write(&svg, heatmap_svg(table)).map_err(|e| Error::io(&svg, e))?;
    Ok(vec![csv, svg])
}
