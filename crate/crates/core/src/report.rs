//! CSV tables (UTF-8, comma-separated, `{:.16e}` numbers) and line plots of
//! log10|F_j| against log10 z derived from them.

use crate::error::{LabError, Result};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// 17 significant digits in scientific notation.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        CsvTable { header: header.iter().map(|s| s.as_ref().to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) -> Result<()> {
        if row.len() != self.header.len() {
            return Err(LabError::InvalidParameter(format!(
                "row has {} cells, header has {}",
                row.len(),
                self.header.len()
            )));
        }
        if row.iter().any(|c| c.contains(',') || c.contains('\n')) {
            return Err(LabError::InvalidParameter("CSV cells may not contain ',' or newlines".into()));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn push_numbers(&mut self, row: &[f64]) -> Result<()> {
        self.push(row.iter().map(|v| num(*v)).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| LabError::Config("empty CSV".into()))?;
        let mut t = CsvTable::new(&header.split(',').collect::<Vec<_>>());
        for l in lines.filter(|l| !l.is_empty()) {
            t.push(l.split(',').map(str::to_string).collect())?;
        }
        Ok(t)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| io_error(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path).map_err(|e| io_error(path, e))?)
    }

    /// Numeric column by header name.
    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let k = self
            .header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| LabError::Config(format!("no column {name:?}")))?;
        self.rows
            .iter()
            .map(|r| r[k].parse::<f64>().map_err(|e| LabError::Config(format!("column {name}: {e}"))))
            .collect()
    }
}

pub fn io_error(path: &Path, e: std::io::Error) -> LabError {
    LabError::Io(format!("{}: {e}", path.display()))
}

/// Write `text` to `dir/name` and return the path.
pub fn write_file(dir: &Path, name: &str, text: &str) -> Result<PathBuf> {
    let p = dir.join(name);
    std::fs::write(&p, text).map_err(|e| io_error(&p, e))?;
    Ok(p)
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"];

/// Line plot of log10|y| against log10 x for every column of `table` except
/// `x`. Points with y = 0 are skipped. Each series carries its column name as
/// a legend entry and an `id`.
pub fn log_log_svg(table: &CsvTable, x: &str, title: &str) -> Result<String> {
    let xs = table.column(x)?;
    let names: Vec<&String> = table.header.iter().filter(|h| h.as_str() != x).collect();
    let mut series = Vec::new();
    for name in &names {
        let ys = table.column(name)?;
        let pts: Vec<(f64, f64)> = xs
            .iter()
            .zip(&ys)
            .filter(|(a, b)| **a > 0.0 && **b != 0.0 && b.is_finite())
            .map(|(a, b)| (a.log10(), b.abs().log10()))
            .collect();
        series.push((name.as_str(), pts));
    }
    let all = series.iter().flat_map(|(_, p)| p.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(a, b) in all {
        x0 = x0.min(a);
        x1 = x1.max(a);
        y0 = y0.min(b);
        y1 = y1.max(b);
    }
    if !(x1 > x0) {
        (x0, x1) = (0.0, 1.0);
    }
    if !(y1 > y0) {
        (y0, y1) = (y0.min(0.0) - 1.0, y0.max(0.0) + 1.0);
        if !y0.is_finite() {
            (y0, y1) = (-1.0, 1.0);
        }
    }
    let (w, h, m) = (640.0, 420.0, 60.0);
    let sx = |a: f64| m + (a - x0) / (x1 - x0) * (w - 2.0 * m);
    let sy = |b: f64| h - m - (b - y0) / (y1 - y0) * (h - 2.0 * m);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<title>{title}</title>"#);
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{m}" y="{m}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        w - 2.0 * m,
        h - 2.0 * m
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">log10 {x}</text>"#, w / 2.0, h - 15.0);
    let _ = writeln!(s, r#"<text x="15" y="{}" font-size="12" transform="rotate(-90 15 {})" text-anchor="middle">log10 |value|</text>"#, h / 2.0, h / 2.0);
    let _ = writeln!(s, r#"<text x="{m}" y="{}" font-size="10">{x0:.3}</text>"#, h - m + 14.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="10" text-anchor="end">{x1:.3}</text>"#, w - m, h - m + 14.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="10" text-anchor="end">{y0:.2}</text>"#, m - 4.0, h - m);
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="10" text-anchor="end">{y1:.2}</text>"#, m - 4.0, m + 8.0);
    for (k, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let path: Vec<String> = pts.iter().map(|&(a, b)| format!("{:.2},{:.2}", sx(a), sy(b))).collect();
        let _ = writeln!(
            s,
            r#"<polyline id="{name}" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            path.join(" ")
        );
        let ly = m + 16.0 * (k as f64 + 1.0);
        let _ = writeln!(s, r#"<text x="{}" y="{ly}" font-size="11" fill="{color}">{name}</text>"#, w - m - 60.0);
    }
    s.push_str("</svg>\n");
    Ok(s)
}
