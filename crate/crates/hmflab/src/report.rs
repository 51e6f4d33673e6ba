//! Deterministic run artifacts: the JSON manifest echoing every parameter,
//! fixed-format CSV tables, per-op JSON reports, and SVG log-log plots of
//! slope fits. All writers format floats identically regardless of thread
//! count so reruns are byte-identical.

use crate::analysis::SlopeFit;
use crate::config::RunConfig;
use crate::error::Result;
use serde::Serialize;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

/// Canonical float formatting for CSV cells: f64 Display is the shortest
/// round-trip form and deterministic across runs and thread counts.
pub fn fmt(x: f64) -> String {
    format!("{x}")
}

/// Run-level manifest: the config echoed verbatim plus measured run
/// constants.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub config: RunConfig,
    pub source: &'static str,
    pub snapshot_files: Vec<String>,
    /// Energy ceiling of the initial data (simulated runs; 0 otherwise).
    pub lambda1: f64,
    /// Measured sup over the cloud of total annulus energy.
    pub lambda2: f64,
    pub window_cells: usize,
    pub window_slices: usize,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Minimal SVG log-log plot: data points, fitted line, slope annotation.
pub fn write_loglog_svg(path: &Path, fit: &SlopeFit, title: &str) -> Result<()> {
    let (w, h) = (480.0f64, 360.0f64);
    let (ml, mr, mt, mb) = (60.0, 20.0, 40.0, 50.0);
    let xs: Vec<f64> = fit.radii.iter().map(|r| r.log2()).collect();
    let ys: Vec<f64> = fit.volumes.iter().map(|v| v.log2()).collect();
    let (xmin, xmax) = bounds(&xs);
    let (ymin, ymax) = bounds(&ys);
    let px = |x: f64| ml + (x - xmin) / (xmax - xmin).max(1e-12) * (w - ml - mr);
    let py = |y: f64| h - mb - (y - ymin) / (ymax - ymin).max(1e-12) * (h - mt - mb);
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" \
         viewBox=\"0 0 {w} {h}\">\n<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
        w / 2.0,
        title
    ));
    // axes
    svg.push_str(&format!(
        "<line x1=\"{ml}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"black\"/>\n\
         <line x1=\"{ml}\" y1=\"{mt}\" x2=\"{ml}\" y2=\"{0}\" stroke=\"black\"/>\n",
        h - mb,
        w - mr
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\">log2 r</text>\n",
        (ml + w - mr) / 2.0,
        h - 14.0
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{}\" font-size=\"12\" transform=\"rotate(-90 16 {})\" \
         text-anchor=\"middle\">log2 Vol</text>\n",
        (mt + h - mb) / 2.0,
        (mt + h - mb) / 2.0
    ));
    // fitted line across the x-range
    let y0 = fit.slope * xmin + fit.intercept;
    let y1 = fit.slope * xmax + fit.intercept;
    svg.push_str(&format!(
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#c33\" stroke-width=\"1.5\"/>\n",
        px(xmin),
        py(y0),
        px(xmax),
        py(y1)
    ));
    for (x, y) in xs.iter().zip(&ys) {
        svg.push_str(&format!(
            "<circle cx=\"{}\" cy=\"{}\" r=\"3.5\" fill=\"#236\"/>\n",
            px(*x),
            py(*y)
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"12\">slope = {}  dim = {}</text>\n",
        ml + 8.0,
        mt + 16.0,
        fmt(fit.slope),
        fmt(fit.dimension)
    ));
    svg.push_str("</svg>\n");
    std::fs::write(path, svg)?;
    Ok(())
}

fn bounds(v: &[f64]) -> (f64, f64) {
    let lo = v.iter().cloned().fold(f64::MAX, f64::min);
    let hi = v.iter().cloned().fold(f64::MIN, f64::max);
    if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}
