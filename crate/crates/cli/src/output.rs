//! File emission. Every file carries the resolved configuration.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{Format, RunConfig};

pub struct Sink {
    dir: PathBuf,
    formats: Vec<Format>,
    config: Value,
    pub written: Vec<PathBuf>,
}

/// A table of named numeric columns.
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Table {
            columns: columns.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }
}

/// One curve of an SVG line plot.
pub struct Series {
    pub label: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

pub fn num(v: f64) -> String {
    format!("{v:e}")
}

impl Sink {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        let dir = PathBuf::from(&cfg.output.dir);
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Sink {
            dir,
            formats: cfg.output.formats.clone(),
            config: serde_json::to_value(cfg)?,
            written: Vec::new(),
        })
    }

    pub fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }

    fn write(&mut self, name: &str, body: &str) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
        self.written.push(path);
        Ok(())
    }

    pub fn csv(&mut self, name: &str, table: &Table) -> Result<()> {
        if !self.wants(Format::Csv) {
            return Ok(());
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&table.columns)?;
        for r in &table.rows {
            w.write_record(r)?;
        }
        let body = String::from_utf8(w.into_inner()?)?;
        let text = format!("# config: {}\n{body}", serde_json::to_string(&self.config)?);
        self.write(&format!("{name}.csv"), &text)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, result: &T) -> Result<()> {
        if !self.wants(Format::Json) {
            return Ok(());
        }
        let doc = json!({ "config": self.config, "result": result });
        self.write(&format!("{name}.json"), &(serde_json::to_string_pretty(&doc)? + "\n"))
    }

    pub fn svg(&mut self, name: &str, title: &str, x_label: &str, series: &[Series]) -> Result<()> {
        if !self.wants(Format::Svg) {
            return Ok(());
        }
        let body = line_plot(title, x_label, series, &serde_json::to_string(&self.config)?);
        self.write(&format!("{name}.svg"), &body)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn line_plot(title: &str, x_label: &str, series: &[Series], config: &str) -> String {
    let (w, h, m) = (720.0, 420.0, 50.0);
    let xs = series.iter().flat_map(|s| s.x.iter().copied());
    let ys = series.iter().flat_map(|s| s.y.iter().copied());
    let (x0, x1) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |a, v| (a.0.min(v), a.1.max(v)));
    let (y0, y1) = ys.fold((0.0f64, f64::NEG_INFINITY), |a, v| (a.0.min(v), a.1.max(v)));
    let span = |a: f64, b: f64| if b > a { b - a } else { 1.0 };
    let px = |x: f64| m + (x - x0) / span(x0, x1) * (w - 2.0 * m);
    let py = |y: f64| h - m - (y - y0) / span(y0, y1) * (h - 2.0 * m);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, "<!-- config: {} -->", config.replace("--", "- -"));
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle">{}</text>"#, w / 2.0, escape(title));
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, w / 2.0, h - 10.0, escape(x_label));
    let _ = writeln!(
        s,
        r#"<path d="M{m} {m} V{} H{}" fill="none" stroke="black"/>"#,
        h - m,
        w - m
    );
    let _ = writeln!(s, r#"<text x="{m}" y="{}" text-anchor="start">{x0:.4e}</text>"#, h - m + 15.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{x1:.4e}</text>"#, w - m, h - m + 15.0);
    for (k, ser) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let pts: Vec<String> = ser.x.iter().zip(&ser.y).map(|(&x, &y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" points="{}"/>"#, pts.join(" "));
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{color}" text-anchor="end">{}</text>"#,
            w - m,
            m + 15.0 * k as f64,
            escape(&ser.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
