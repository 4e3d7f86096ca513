//! Deterministic SVG line plots of angle trajectories.

use std::fmt::Write;
use std::path::Path;

use super::persist::{read_aggregate_csv, read_run_csv};
use crate::error::{Error, Result};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

fn nice_step(span: f64, target: f64) -> f64 {
    let raw = span / target;
    let mag = 10f64.powf(raw.log10().floor());
    let frac = raw / mag;
    let nice = if frac <= 1.0 {
        1.0
    } else if frac <= 2.0 {
        2.0
    } else if frac <= 5.0 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(time: &[f64], lo: f64, hi: f64) -> Self {
        let x1 = time.iter().cloned().fold(0.0, f64::max).max(1e-9);
        let (lo, hi) = if hi - lo < 1.0 {
            let mid = 0.5 * (hi + lo);
            (mid - 0.5, mid + 0.5)
        } else {
            (lo, hi)
        };
        let step = nice_step(hi - lo, 6.0);
        Self {
            x0: 0.0,
            x1,
            y0: (lo / step).floor() * step,
            y1: (hi / step).ceil() * step,
        }
    }

    fn px(&self, t: f64) -> f64 {
        LEFT + (t - self.x0) / (self.x1 - self.x0) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, v: f64) -> f64 {
        HEIGHT - BOTTOM - (v - self.y0) / (self.y1 - self.y0) * (HEIGHT - TOP - BOTTOM)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn header(svg: &mut String, title: &str, f: &Frame) {
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        svg,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let (bx0, bx1, by0, by1) = (LEFT, WIDTH - RIGHT, TOP, HEIGHT - BOTTOM);
    let ystep = nice_step(f.y1 - f.y0, 6.0);
    let mut v = f.y0;
    while v <= f.y1 + 1e-9 * ystep {
        let y = f.py(v);
        let _ = writeln!(
            svg,
            r##"<line x1="{bx0:.2}" y1="{y:.2}" x2="{bx1:.2}" y2="{y:.2}" stroke="#dddddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
            bx0 - 6.0,
            y + 4.0,
            trim(v)
        );
        v += ystep;
    }
    let xstep = nice_step(f.x1 - f.x0, 8.0);
    let mut t = f.x0;
    while t <= f.x1 + 1e-9 * xstep {
        let x = f.px(t);
        let _ = writeln!(
            svg,
            r##"<line x1="{x:.2}" y1="{by1:.2}" x2="{x:.2}" y2="{:.2}" stroke="#000000"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
            by1 + 4.0,
            by1 + 18.0,
            trim(t)
        );
        t += xstep;
    }
    let _ = writeln!(
        svg,
        r##"<rect x="{bx0:.2}" y="{by0:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#000000"/>"##,
        bx1 - bx0,
        by1 - by0
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">time (s)</text>"#,
        (bx0 + bx1) / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">angle (deg)</text>"#,
        (by0 + by1) / 2.0,
        (by0 + by1) / 2.0
    );
}

fn trim(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

fn points(f: &Frame, time: &[f64], v: impl Iterator<Item = f64>) -> String {
    time.iter()
        .zip(v)
        .map(|(&t, y)| format!("{:.2},{:.2}", f.px(t), f.py(y)))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Mean trajectory with a shaded ±1 standard deviation band.
pub fn render_band_svg(title: &str, time: &[f64], mean: &[f64], std: &[f64]) -> String {
    let lo = mean
        .iter()
        .zip(std)
        .map(|(m, s)| m - s)
        .fold(f64::INFINITY, f64::min);
    let hi = mean
        .iter()
        .zip(std)
        .map(|(m, s)| m + s)
        .fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo.is_finite() {
        (lo, hi)
    } else {
        (-1.0, 1.0)
    };
    let f = Frame::new(time, lo, hi);
    let mut svg = String::new();
    header(&mut svg, title, &f);
    let upper = points(&f, time, mean.iter().zip(std).map(|(m, s)| m + s));
    let lower: Vec<String> = time
        .iter()
        .zip(mean.iter().zip(std))
        .rev()
        .map(|(&t, (m, s))| format!("{:.2},{:.2}", f.px(t), f.py(m - s)))
        .collect();
    let _ = writeln!(
        svg,
        r##"<polygon points="{upper} {}" fill="#4477aa" fill-opacity="0.25" stroke="none"/>"##,
        lower.join(" ")
    );
    let _ = writeln!(
        svg,
        r##"<polyline points="{}" fill="none" stroke="#224488" stroke-width="1.5"/>"##,
        points(&f, time, mean.iter().cloned())
    );
    svg.push_str("</svg>\n");
    svg
}

/// A single angle trajectory.
pub fn render_trajectory_svg(title: &str, time: &[f64], theta: &[f64]) -> String {
    let lo = theta.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = theta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo.is_finite() {
        (lo, hi)
    } else {
        (-1.0, 1.0)
    };
    let f = Frame::new(time, lo, hi);
    let mut svg = String::new();
    header(&mut svg, title, &f);
    let _ = writeln!(
        svg,
        r##"<polyline points="{}" fill="none" stroke="#224488" stroke-width="1.5"/>"##,
        points(&f, time, theta.iter().cloned())
    );
    svg.push_str("</svg>\n");
    svg
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .or_else(|| path.file_name())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Renders a plot from persisted data only. `path` may be a run CSV, a
/// directory holding `aggregate.csv`, or a directory of run CSVs.
pub fn plot_path(path: &Path) -> Result<String> {
    if path.is_file() {
        let run = read_run_csv(path)?;
        return Ok(render_trajectory_svg(&stem(path), &run.time, &run.theta));
    }
    if !path.is_dir() {
        return Err(Error::Data {
            path: path.to_path_buf(),
            reason: "no such file or directory".into(),
        });
    }
    let title = stem(path);
    let agg = path.join("aggregate.csv");
    if agg.is_file() {
        let (t, m, s) = read_aggregate_csv(&agg)?;
        return Ok(render_band_svg(&title, &t, &m, &s));
    }
    let mut files: Vec<_> = std::fs::read_dir(path)
        .map_err(|e| Error::io(format!("listing {}", path.display()), e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Data {
            path: path.to_path_buf(),
            reason: "directory contains no aggregate.csv and no run CSV files".into(),
        });
    }
    let runs = files
        .iter()
        .map(|p| read_run_csv(p))
        .collect::<Result<Vec<_>>>()?;
    let time = runs[0].time.clone();
    for (run, p) in runs.iter().zip(&files) {
        if run.time.len() != time.len()
            || run
                .time
                .iter()
                .zip(&time)
                .any(|(a, b)| (a - b).abs() > 1e-9)
        {
            return Err(Error::Data {
                path: p.clone(),
                reason: format!("time grid differs from {}", files[0].display()),
            });
        }
    }
    let n = runs.len() as f64;
    let mean: Vec<f64> = (0..time.len())
        .map(|i| runs.iter().map(|r| r.theta[i]).sum::<f64>() / n)
        .collect();
    let std: Vec<f64> = (0..time.len())
        .map(|i| {
            (runs
                .iter()
                .map(|r| (r.theta[i] - mean[i]).powi(2))
                .sum::<f64>()
                / n)
                .sqrt()
        })
        .collect();
    Ok(render_band_svg(&title, &time, &mean, &std))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn band_is_deterministic_and_well_formed() {
        let t: Vec<f64> = (1..=50).map(|k| k as f64 * 0.1).collect();
        let m: Vec<f64> = t.iter().map(|x| 15.0 - x).collect();
        let s = vec![1.0; 50];
        let a = render_band_svg("eta-0.1", &t, &m, &s);
        assert_eq!(a, render_band_svg("eta-0.1", &t, &m, &s));
        assert!(a.starts_with("<svg") && a.ends_with("</svg>\n"));
        assert!(a.contains("<polygon") && a.contains("eta-0.1"));
    }

    #[test]
    fn flat_trajectory_has_a_finite_range() {
        let t = vec![0.1, 0.2, 0.3];
        let svg = render_trajectory_svg("<run>", &t, &[0.0, 0.0, 0.0]);
        assert!(!svg.contains("NaN") && !svg.contains("inf"));
        assert!(svg.contains("&lt;run&gt;"));
    }

    #[test]
    fn empty_directory_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(plot_path(dir.path()).is_err());
        assert!(plot_path(&dir.path().join("missing")).is_err());
    }
}
