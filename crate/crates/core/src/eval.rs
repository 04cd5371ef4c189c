//! Error metrics, reports, and per-frame error traces.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{wrap, Pose};
use crate::io_util::write_atomic;

/// Per-component values; `phi` is in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComponentErrors {
    pub x: f64,
    pub y: f64,
    pub phi: f64,
}

impl ComponentErrors {
    /// Planar position error `sqrt(x^2 + y^2)`.
    pub fn position(&self) -> f64 {
        self.x.hypot(self.y)
    }
}

/// Error of one frame: `estimate - truth`, heading wrapped and in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub ex: f64,
    pub ey: f64,
    pub ephi: f64,
}

pub fn error_trace(times: &[f64], preds: &[Pose], gts: &[Pose]) -> Result<Vec<TraceRow>> {
    check_lengths(preds, gts)?;
    if times.len() != preds.len() {
        return Err(Error::Config(format!(
            "{} timestamps for {} poses",
            times.len(),
            preds.len()
        )));
    }
    Ok(times
        .iter()
        .zip(preds.iter().zip(gts))
        .map(|(&t, (p, g))| TraceRow {
            t,
            ex: p.x - g.x,
            ey: p.y - g.y,
            ephi: wrap(p.phi - g.phi).to_degrees(),
        })
        .collect())
}

fn check_lengths(preds: &[Pose], gts: &[Pose]) -> Result<()> {
    if preds.len() != gts.len() {
        return Err(Error::Config(format!(
            "{} estimates for {} ground-truth poses",
            preds.len(),
            gts.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Empty("pose sequence"));
    }
    Ok(())
}

fn fold(rows: &[TraceRow], f: impl Fn(&[f64]) -> f64) -> ComponentErrors {
    let col = |g: fn(&TraceRow) -> f64| rows.iter().map(g).collect::<Vec<_>>();
    ComponentErrors {
        x: f(&col(|r| r.ex)),
        y: f(&col(|r| r.ey)),
        phi: f(&col(|r| r.ephi)),
    }
}

fn rms_of(v: &[f64]) -> f64 {
    (v.iter().map(|e| e * e).sum::<f64>() / v.len() as f64).sqrt()
}

fn max_abs_of(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, e| m.max(e.abs()))
}

pub fn rmse_of_trace(rows: &[TraceRow]) -> Result<ComponentErrors> {
    if rows.is_empty() {
        return Err(Error::Empty("trace"));
    }
    Ok(fold(rows, rms_of))
}

pub fn max_error_of_trace(rows: &[TraceRow]) -> Result<ComponentErrors> {
    if rows.is_empty() {
        return Err(Error::Empty("trace"));
    }
    Ok(fold(rows, max_abs_of))
}

/// Root mean square error per component, heading wrapped and in degrees.
pub fn rmse(preds: &[Pose], gts: &[Pose]) -> Result<ComponentErrors> {
    let times = vec![0.0; preds.len()];
    rmse_of_trace(&error_trace(&times, preds, gts)?)
}

/// Largest absolute error per component, heading in degrees.
pub fn max_error(preds: &[Pose], gts: &[Pose]) -> Result<ComponentErrors> {
    let times = vec![0.0; preds.len()];
    max_error_of_trace(&error_trace(&times, preds, gts)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub max_ms: f64,
}

impl LatencyStats {
    pub fn from_samples(ms: &[f64]) -> Option<Self> {
        if ms.is_empty() {
            return None;
        }
        let mut s = ms.to_vec();
        s.sort_by(f64::total_cmp);
        let q = |p: f64| s[((s.len() - 1) as f64 * p).round() as usize];
        Some(Self {
            mean_ms: s.iter().sum::<f64>() / s.len() as f64,
            p50_ms: q(0.5),
            p95_ms: q(0.95),
            max_ms: s[s.len() - 1],
        })
    }
}

/// Accuracy of one method over one frame sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub samples: usize,
    pub rmse: ComponentErrors,
    pub max_error: ComponentErrors,
    /// Wall-clock time per inference; kept out of report files so that
    /// seeded runs stay byte-identical.
    #[serde(skip)]
    pub latency: Option<LatencyStats>,
}

impl EvalReport {
    pub fn from_trace(method: &str, rows: &[TraceRow], latency: Option<LatencyStats>) -> Result<Self> {
        Ok(Self {
            method: method.to_owned(),
            samples: rows.len(),
            rmse: rmse_of_trace(rows)?,
            max_error: max_error_of_trace(rows)?,
            latency,
        })
    }
}

pub fn trace_to_csv(rows: &[TraceRow]) -> String {
    let mut out = String::from("t,ex,ey,ephi\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.t, r.ex, r.ey, r.ephi));
    }
    out
}

pub fn save_trace(path: &Path, rows: &[TraceRow]) -> Result<()> {
    write_atomic(path, trace_to_csv(rows).as_bytes())
}

pub fn load_trace(path: &Path) -> Result<Vec<TraceRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        msg: e.to_string(),
    })?;
    let mut rows = Vec::new();
    for rec in reader.records() {
        let err = |msg: String, line: usize| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let rec = rec.map_err(|e| err(e.to_string(), 0))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let num = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| err(format!("bad value in column {}", i + 1), line))
        };
        rows.push(TraceRow {
            t: num(0)?,
            ex: num(1)?,
            ey: num(2)?,
            ephi: num(3)?,
        });
    }
    Ok(rows)
}

/// Absolute error traces over time, one panel per component, RMSE as a dashed line.
pub fn traces_to_svg(series: &[(&str, &[TraceRow])]) -> String {
    const W: f64 = 720.0;
    const H: f64 = 160.0;
    const PAD: f64 = 40.0;
    const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
    let panels: [(&str, fn(&TraceRow) -> f64); 3] = [
        ("|ex| [m]", |r| r.ex),
        ("|ey| [m]", |r| r.ey),
        ("|ephi| [deg]", |r| r.ephi),
    ];
    let all = series.iter().flat_map(|(_, rows)| rows.iter());
    let (t0, t1) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), r| (a.min(r.t), b.max(r.t)));
    let span = if t1 > t0 { t1 - t0 } else { 1.0 };
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{}\" font-family=\"sans-serif\" font-size=\"11\">\n",
        H * 3.0 + 30.0
    );
    for (pi, (label, get)) in panels.iter().enumerate() {
        let top = pi as f64 * H + 10.0;
        let ymax = series
            .iter()
            .flat_map(|(_, rows)| rows.iter().map(|r| get(r).abs()))
            .fold(0.0f64, f64::max)
            .max(1e-9);
        svg.push_str(&format!(
            "<rect x=\"{PAD}\" y=\"{top}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#999\"/>\n<text x=\"{}\" y=\"{}\">{label} (max {ymax:.3})</text>\n",
            W - 2.0 * PAD,
            H - 30.0,
            PAD + 4.0,
            top + 12.0
        ));
        let sx = |t: f64| PAD + (t - t0) / span * (W - 2.0 * PAD);
        let sy = |v: f64| top + (H - 30.0) * (1.0 - v / ymax);
        for (si, (name, rows)) in series.iter().enumerate() {
            let color = COLORS[si % COLORS.len()];
            let pts: Vec<String> = rows
                .iter()
                .map(|r| format!("{:.2},{:.2}", sx(r.t), sy(get(r).abs())))
                .collect();
            svg.push_str(&format!(
                "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1\" points=\"{}\"/>\n",
                pts.join(" ")
            ));
            let vals: Vec<f64> = rows.iter().map(get).collect();
            if !vals.is_empty() {
                let y = sy(rms_of(&vals));
                svg.push_str(&format!(
                    "<line x1=\"{PAD}\" x2=\"{}\" y1=\"{y:.2}\" y2=\"{y:.2}\" stroke=\"{color}\" stroke-dasharray=\"4 3\"/>\n",
                    W - PAD
                ));
            }
            if pi == 0 {
                svg.push_str(&format!(
                    "<text x=\"{}\" y=\"{}\" fill=\"{color}\">{name}</text>\n",
                    W - PAD - 120.0,
                    top + 12.0 + 12.0 * (si as f64 + 1.0)
                ));
            }
        }
    }
    svg.push_str("</svg>\n");
    svg
}
