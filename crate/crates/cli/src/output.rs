//! Result files: CSV, SVG line charts and the manifest. Every file is written
//! to a temporary sibling first and renamed into place.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use swarmloc::evaluation::{SweepResult, TrialSeeds};
use swarmloc::report::{format_sig, to_csv_string};

use crate::config::RunConfig;

pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("cannot create a file in {}", dir.display()))?;
    tmp.write_all(contents).with_context(|| format!("cannot write {}", path.display()))?;
    tmp.as_file().sync_all().ok();
    tmp.persist(path).with_context(|| format!("cannot move result into {}", path.display()))?;
    Ok(())
}

pub fn emit_csv(result: &SweepResult, path: &Path) -> Result<()> {
    write_atomic(path, to_csv_string(result)?.as_bytes())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Rmse,
    Ber,
}

impl Metric {
    fn label(self) -> &'static str {
        match self {
            Metric::Rmse => "mean RMSE (m)",
            Metric::Ber => "mean BER",
        }
    }
}

const PALETTE: [&str; 6] = ["#1b6ca8", "#d1495b", "#2e933c", "#edae49", "#6a4c93", "#444444"];

/// Mean of `metric` per series and parameter value; series without any value are dropped.
fn series_points(result: &SweepResult, metric: Metric) -> Vec<(String, Vec<(f64, f64)>)> {
    let mut out = Vec::new();
    for (method, param) in result.series() {
        let pts: Vec<(f64, f64)> = result
            .param_values(&method, &param)
            .into_iter()
            .filter_map(|v| {
                let s = result.summary(&method, &param, v);
                let y = match metric {
                    Metric::Rmse => s.mean_rmse,
                    Metric::Ber => s.mean_ber,
                };
                y.map(|y| (v, y))
            })
            .collect();
        if !pts.is_empty() {
            let label = if result.series().iter().filter(|(m, _)| *m == method).count() > 1 {
                format!("{method} ({param})")
            } else {
                method
            };
            out.push((label, pts));
        }
    }
    out
}

/// A plain line chart; `None` when no series carries the metric.
pub fn line_chart(result: &SweepResult, metric: Metric, x_label: &str) -> Option<String> {
    let series = series_points(result, metric);
    if series.is_empty() {
        return None;
    }
    let (w, h, left, right, top, bottom) = (720.0, 440.0, 80.0, 190.0, 30.0, 60.0);
    let xs = series.iter().flat_map(|(_, p)| p.iter().map(|q| q.0));
    let ys: Vec<f64> = series.iter().flat_map(|(_, p)| p.iter().map(|q| q.1)).collect();
    let (x0, x1) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    let (ymin, ymax) = ys.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &y| (a.min(y), b.max(y)));
    // errors span many decades once a method is exact; switch to log10 then
    let log = ymin > 0.0 && ymax / ymin > 1e3;
    let ty = |y: f64| if log { y.log10() } else { y };
    let (y0, y1) = if log { (ymin.log10().floor(), ymax.log10().ceil()) } else { (0.0f64.min(ymin), ymax) };
    let span = |a: f64, b: f64| if b > a { b - a } else { 1.0 };
    let px = |x: f64| left + (x - x0) / span(x0, x1) * (w - left - right);
    let py = |y: f64| h - bottom - (ty(y) - y0) / span(y0, y1) * (h - top - bottom);

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let (xa, ya) = (left, h - bottom);
    let _ = writeln!(svg, r#"<path d="M{xa} {top} V{ya} H{}" stroke="black" fill="none"/>"#, w - right);
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let xv = x0 + f * (x1 - x0);
        let x = px(xv);
        let _ = writeln!(svg, r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, ya + 18.0, format_sig(xv));
        let yv = y0 + f * (y1 - y0);
        let label = if log { format!("1e{}", yv.round()) } else { format_sig(yv) };
        let y = h - bottom - f * (h - top - bottom);
        let _ = writeln!(svg, r##"<line x1="{xa}" x2="{:.1}" y1="{y:.1}" y2="{y:.1}" stroke="#dddddd"/>"##, w - right);
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{label}</text>"#, xa - 6.0, y + 4.0);
    }
    let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{x_label}</text>"#, (left + w - right) / 2.0, h - 15.0);
    let _ = writeln!(svg, r#"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">{}</text>"#, (top + h - bottom) / 2.0, (top + h - bottom) / 2.0, metric.label());
    for (i, (label, pts)) in series.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.1},{:.1}", px(x), py(y))).collect();
        let _ = writeln!(svg, r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="2"/>"#, path.join(" "));
        for &(x, y) in pts {
            let _ = writeln!(svg, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{colour}"/>"#, px(x), py(y));
        }
        let ly = top + 10.0 + 18.0 * i as f64;
        let _ = writeln!(svg, r#"<rect x="{:.1}" y="{:.1}" width="14" height="3" fill="{colour}"/>"#, w - right + 12.0, ly - 4.0);
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{ly:.1}">{}</text>"#, w - right + 32.0, escape(label));
    }
    svg.push_str("</svg>\n");
    Some(svg)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub scenario: &'static str,
    pub seed: u64,
    /// Per-trial swarm seeds, the first thing to check when comparing runs.
    pub trial_seeds: Vec<u64>,
    pub rows: usize,
    pub files: Vec<String>,
    pub config: &'a RunConfig,
}

pub fn manifest_json(cfg: &RunConfig, result: &SweepResult, files: &[String]) -> Result<String> {
    let m = Manifest {
        tool: "swarmloc",
        version: swarmloc::VERSION,
        scenario: cfg.scenario.name(),
        seed: cfg.seed,
        trial_seeds: (0..cfg.trials).map(|t| TrialSeeds::new(cfg.seed, t).swarm).collect(),
        rows: result.rows.len(),
        files: files.to_vec(),
        config: cfg,
    };
    let mut text = serde_json::to_string_pretty(&m)?;
    text.push('\n');
    Ok(text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use swarmloc::evaluation::SweepRow;

    fn row(method: &str, v: f64, rmse: Option<f64>, ber: Option<f64>) -> SweepRow {
        SweepRow {
            method: method.into(),
            param_name: "retention".into(),
            param_value: v,
            seed: 1,
            rmse_m: rmse,
            ber,
            runtime_s: None,
            status: "ok".into(),
        }
    }

    #[test]
    fn chart_has_one_polyline_per_series() {
        let res = SweepResult {
            rows: vec![row("a", 0.5, Some(2.0), None), row("a", 1.0, Some(1.0), None), row("b", 0.5, Some(3.0), None), row("b", 1.0, None, None)],
        };
        let svg = line_chart(&res, Metric::Rmse, "retention").unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert!(line_chart(&res, Metric::Ber, "retention").is_none());
    }

    #[test]
    fn atomic_write_leaves_no_temp_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
        assert!(write_atomic(&dir.path().join("missing/x.txt"), b"z").is_err());
    }
}
