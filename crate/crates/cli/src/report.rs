//! Plots derived purely from the CSV files of a bundle.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::bundle::{num, Manifest, CONTROL_MOMENTS, ENSEMBLE, MANIFEST, STATE_MOMENTS};
use crate::error::{CliError, Result};

pub const PLOT_DIR: &str = "plots";
pub const MOMENT_PLOT: &str = "moments.svg";
pub const HISTOGRAM_PLOT: &str = "histogram.svg";
pub const HISTOGRAM_DATA: &str = "histogram.csv";
pub const HISTOGRAM_BINS: usize = 50;
/// Allowed deviation of a trapezoid-integrated density from one.
pub const NORMALIZATION_TOL: f64 = 1e-4;

const PANEL_W: f64 = 320.0;
const PANEL_H: f64 = 220.0;
const MARGIN: f64 = 40.0;

/// A header row and numeric rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }
}

pub fn read_table(path: &Path) -> Result<Table> {
    if !path.is_file() {
        return Err(CliError::MissingFile(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    let malformed = |message: String| CliError::Malformed {
        path: path.to_path_buf(),
        message,
    };
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| malformed("empty file".into()))?
        .split(',')
        .map(str::to_string)
        .collect();
    let rows = lines
        .enumerate()
        .map(|(i, line)| {
            let row = line
                .split(',')
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| malformed(format!("row {}: {e}", i + 1)))?;
            if row.len() != header.len() {
                return Err(malformed(format!("row {} has {} fields", i + 1, row.len())));
            }
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Table { header, rows })
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    if !path.is_file() {
        return Err(CliError::MissingFile(path));
    }
    let text = fs::read_to_string(&path).map_err(CliError::io(&path))?;
    Ok(serde_json::from_str(&text)?)
}

/// Trapezoid rule over possibly uneven abscissae.
pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(u, v)| 0.5 * (u[1] - u[0]) * (v[0] + v[1]))
        .sum()
}

struct Series<'a> {
    x: &'a [f64],
    y: &'a [f64],
    color: &'static str,
    dashed: bool,
}

fn finite_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !(lo <= hi) {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 * (1.0 + lo.abs()) {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}

/// One framed line plot with its origin at `(ox, oy)`.
fn panel(svg: &mut String, ox: f64, oy: f64, title: &str, series: &[Series]) {
    let (x0, x1) = finite_range(series.iter().flat_map(|s| s.x.iter().copied()));
    let (y0, y1) = finite_range(series.iter().flat_map(|s| s.y.iter().copied()));
    let (w, h) = (PANEL_W - 2.0 * MARGIN, PANEL_H - 2.0 * MARGIN);
    let px = |x: f64| ox + MARGIN + (x - x0) / (x1 - x0) * w;
    let py = |y: f64| oy + MARGIN + (1.0 - (y - y0) / (y1 - y0)) * h;
    let _ = writeln!(
        svg,
        r#"<rect x="{:.2}" y="{:.2}" width="{w:.2}" height="{h:.2}" fill="none" stroke="black"/>"#,
        ox + MARGIN,
        oy + MARGIN
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">{title}</text>"#,
        ox + PANEL_W / 2.0,
        oy + MARGIN - 8.0
    );
    for (v, x, y, anchor) in [
        (y0, ox + MARGIN - 4.0, py(y0), "end"),
        (y1, ox + MARGIN - 4.0, py(y1) + 8.0, "end"),
        (x0, px(x0), oy + PANEL_H - MARGIN + 12.0, "start"),
        (x1, px(x1), oy + PANEL_H - MARGIN + 12.0, "end"),
    ] {
        let _ = writeln!(
            svg,
            r#"<text x="{x:.2}" y="{y:.2}" font-size="9" text-anchor="{anchor}">{}</text>"#,
            short(v)
        );
    }
    for s in series {
        let points: Vec<String> =
            s.x.iter()
                .zip(s.y)
                .filter(|(x, y)| x.is_finite() && y.is_finite())
                .map(|(x, y)| format!("{:.2},{:.2}", px(*x), py(*y)))
                .collect();
        let dash = if s.dashed { r#" stroke-dasharray="4 3""# } else { "" };
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{}"{dash}/>"#,
            points.join(" "),
            s.color
        );
    }
}

fn short(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn svg_document(width: f64, height: f64, body: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {width:.0} {height:.0}\">\n{body}</svg>\n"
    )
}

fn write(path: PathBuf, contents: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    fs::write(&path, contents).map_err(CliError::io(&path))?;
    written.push(path);
    Ok(())
}

/// One panel per moment order: states solid, controls dashed.
fn moment_plot(states: &Table, controls: &Table) -> Result<String> {
    let orders = states.header.len() - 1;
    let cols = 2;
    let rows = orders.div_ceil(cols);
    let ks = states.column("k").unwrap_or_default();
    let kc = controls.column("k").unwrap_or_default();
    let mut body = String::new();
    for l in 1..=orders {
        let name = format!("m{l}");
        let (xs, us) = (states.column(&name), controls.column(&name));
        let (Some(xs), Some(us)) = (xs, us) else {
            return Err(CliError::Malformed {
                path: PathBuf::from(STATE_MOMENTS),
                message: format!("missing column {name}"),
            });
        };
        let (ox, oy) = (((l - 1) % cols) as f64 * PANEL_W, ((l - 1) / cols) as f64 * PANEL_H);
        let series = [
            Series {
                x: &ks,
                y: &xs,
                color: "steelblue",
                dashed: false,
            },
            Series {
                x: &kc,
                y: &us,
                color: "darkorange",
                dashed: true,
            },
        ];
        panel(&mut body, ox, oy, &format!("order {l}"), &series);
    }
    Ok(svg_document(cols as f64 * PANEL_W, rows as f64 * PANEL_H, &body))
}

/// Bin counts of the terminal ensemble positions.
pub fn histogram(positions: &[f64], bins: usize) -> Vec<(f64, f64, usize)> {
    let (lo, hi) = finite_range(positions.iter().copied());
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for x in positions.iter().filter(|x| x.is_finite()) {
        let i = (((x - lo) / width) as usize).min(bins - 1);
        counts[i] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| (lo + width * i as f64, lo + width * (i + 1) as f64, c))
        .collect()
}

fn histogram_plot(bars: &[(f64, f64, usize)]) -> String {
    let (x0, x1) = (bars[0].0, bars[bars.len() - 1].1);
    let top = bars.iter().map(|b| b.2).max().unwrap_or(1).max(1) as f64;
    let (w, h) = (2.0 * PANEL_W - 2.0 * MARGIN, PANEL_H - 2.0 * MARGIN);
    let mut body = String::new();
    for (a, b, c) in bars {
        let bh = *c as f64 / top * h;
        let _ = writeln!(
            body,
            r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{bh:.2}" fill="steelblue" stroke="white"/>"#,
            MARGIN + (a - x0) / (x1 - x0) * w,
            MARGIN + h - bh,
            (b - a) / (x1 - x0) * w
        );
    }
    let _ = writeln!(
        body,
        r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">terminal positions</text>"#,
        PANEL_W,
        MARGIN - 8.0
    );
    for (v, x, anchor) in [(x0, MARGIN, "start"), (x1, MARGIN + w, "end")] {
        let _ = writeln!(
            body,
            r#"<text x="{x:.2}" y="{:.2}" font-size="9" text-anchor="{anchor}">{}</text>"#,
            MARGIN + h + 12.0,
            short(v)
        );
    }
    svg_document(2.0 * PANEL_W, PANEL_H, &body)
}

/// Writes the moment, density and histogram plots of the bundle in `dir`
/// to `dir/plots`, checking that every density integrates to one.
pub fn emit_plot_data(dir: &Path) -> Result<Vec<PathBuf>> {
    let manifest = read_manifest(dir)?;
    for f in &manifest.files {
        if !dir.join(f).is_file() {
            return Err(CliError::MissingFile(dir.join(f)));
        }
    }
    let states = read_table(&dir.join(STATE_MOMENTS))?;
    let controls = read_table(&dir.join(CONTROL_MOMENTS))?;
    let out = dir.join(PLOT_DIR);
    if out.exists() {
        fs::remove_dir_all(&out).map_err(CliError::io(&out))?;
    }
    fs::create_dir_all(&out).map_err(CliError::io(&out))?;
    let mut written = Vec::new();
    write(out.join(MOMENT_PLOT), &moment_plot(&states, &controls)?, &mut written)?;

    for f in manifest.files.iter().filter(|f| f.starts_with("density_k")) {
        let path = dir.join(f);
        let t = read_table(&path)?;
        let (Some(u), Some(p)) = (t.column("u"), t.column("density")) else {
            return Err(CliError::Malformed {
                path,
                message: "expected columns u,density".into(),
            });
        };
        let integral = trapezoid(&u, &p);
        if !((integral - 1.0).abs() <= NORMALIZATION_TOL) {
            return Err(CliError::Normalization { path, integral });
        }
        let mut body = String::new();
        let title = format!("{} (mass {})", f.trim_end_matches(".csv"), short(integral));
        panel(
            &mut body,
            0.0,
            0.0,
            &title,
            &[Series {
                x: &u,
                y: &p,
                color: "steelblue",
                dashed: false,
            }],
        );
        let name = f.replace(".csv", ".svg");
        write(out.join(name), &svg_document(PANEL_W, PANEL_H, &body), &mut written)?;
    }

    if manifest.files.iter().any(|f| f == ENSEMBLE) {
        let t = read_table(&dir.join(ENSEMBLE))?;
        let (Some(step), Some(x)) = (t.column("step"), t.column("position")) else {
            return Err(CliError::Malformed {
                path: dir.join(ENSEMBLE),
                message: "expected columns step,agent,position".into(),
            });
        };
        let last = step.iter().copied().fold(0.0, f64::max);
        let terminal: Vec<f64> = step
            .iter()
            .zip(&x)
            .filter(|(s, _)| **s == last)
            .map(|(_, x)| *x)
            .collect();
        let bars = histogram(&terminal, HISTOGRAM_BINS);
        let mut csv = String::from("lo,hi,count\n");
        for (a, b, c) in &bars {
            let _ = writeln!(csv, "{},{},{c}", num(*a), num(*b));
        }
        write(out.join(HISTOGRAM_DATA), &csv, &mut written)?;
        write(out.join(HISTOGRAM_PLOT), &histogram_plot(&bars), &mut written)?;
    }
    Ok(written)
}
