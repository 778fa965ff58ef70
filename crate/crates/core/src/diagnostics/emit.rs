use std::path::Path;

use image::{Rgb, RgbImage};

use super::trajectory::TrajectoryMetrics;
use crate::error::{Error, Result};

pub const METRICS_COLUMNS: [&str; 8] = [
    "iter",
    "k",
    "delta_mean",
    "delta_std",
    "rewrite_mean",
    "rewrite_std",
    "align_mean",
    "align_std",
];

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub iter: u64,
    pub k: usize,
    pub delta_mean: f64,
    pub delta_std: f64,
    pub rewrite_mean: f64,
    pub rewrite_std: f64,
    pub align_mean: f64,
    pub align_std: f64,
}

fn rows_of(series: &[(u64, TrajectoryMetrics)]) -> Vec<MetricsRow> {
    series
        .iter()
        .flat_map(|(iter, m)| {
            (0..m.num_stages()).map(move |k| MetricsRow {
                iter: *iter,
                k,
                delta_mean: m.delta[k].mean,
                delta_std: m.delta[k].std,
                rewrite_mean: m.rewrite[k].mean,
                rewrite_std: m.rewrite[k].std,
                align_mean: m.align[k].mean,
                align_std: m.align[k].std,
            })
        })
        .collect()
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format {
            path: path.to_path_buf(),
            msg: format!("{other:?}"),
        },
    }
}

/// One row per `(iteration, k)`. Values use the shortest representation
/// that parses back to the same `f64`.
pub fn emit_metrics(series: &[(u64, TrajectoryMetrics)], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if series.is_empty() {
        return Err(Error::argument("no trajectory metrics to emit"));
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(METRICS_COLUMNS).map_err(|e| csv_err(path, e))?;
    for r in rows_of(series) {
        let fields = [
            r.iter.to_string(),
            r.k.to_string(),
            r.delta_mean.to_string(),
            r.delta_std.to_string(),
            r.rewrite_mean.to_string(),
            r.rewrite_std.to_string(),
            r.align_mean.to_string(),
            r.align_std.to_string(),
        ];
        w.write_record(&fields).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_metrics_csv(path: impl AsRef<Path>) -> Result<Vec<MetricsRow>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.iter().ne(METRICS_COLUMNS) {
        return Err(Error::Format {
            path: path.to_path_buf(),
            msg: "unexpected header".into(),
        });
    }
    let bad = |msg: String| Error::Format {
        path: path.to_path_buf(),
        msg,
    };
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let f = |i: usize| -> Result<f64> {
            rec[i].parse::<f64>().map_err(|e| bad(format!("column {}: {e}", METRICS_COLUMNS[i])))
        };
        rows.push(MetricsRow {
            iter: rec[0].parse().map_err(|e| bad(format!("iter: {e}")))?,
            k: rec[1].parse().map_err(|e| bad(format!("k: {e}")))?,
            delta_mean: f(2)?,
            delta_std: f(3)?,
            rewrite_mean: f(4)?,
            rewrite_std: f(5)?,
            align_mean: f(6)?,
            align_std: f(7)?,
        });
    }
    Ok(rows)
}

const PANEL_W: u32 = 240;
const PANEL_H: u32 = 160;
const MARGIN: u32 = 12;
const PALETTE: [[u8; 3]; 6] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
];

fn draw_line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), color: Rgb<u8>) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, color);
        }
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Three side-by-side panels (delta, R, A) against iteration, one line per
/// stage `k`.
pub fn render_metric_plots(series: &[(u64, TrajectoryMetrics)], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let rows = rows_of(series);
    if rows.is_empty() {
        return Err(Error::argument("no trajectory metrics to plot"));
    }
    let stages = rows.iter().map(|r| r.k).max().unwrap_or(0) + 1;
    let (it_min, it_max) = rows
        .iter()
        .fold((u64::MAX, 0), |(lo, hi), r| (lo.min(r.iter), hi.max(r.iter)));
    let width = 3 * PANEL_W + 4 * MARGIN;
    let height = PANEL_H + 2 * MARGIN;
    let mut img = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));
    let getters: [fn(&MetricsRow) -> f64; 3] = [|r| r.delta_mean, |r| r.rewrite_mean, |r| r.align_mean];
    for (p, get) in getters.iter().enumerate() {
        let left = MARGIN + p as u32 * (PANEL_W + MARGIN);
        let values: Vec<f64> = rows.iter().map(get).filter(|v| v.is_finite()).collect();
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let (lo, hi) = if lo.is_finite() && hi > lo { (lo, hi) } else { (lo.min(0.0), lo.max(0.0) + 1.0) };
        let frame = Rgb([160, 160, 160]);
        let (l, t) = (left as i64, MARGIN as i64);
        let (r, b) = (l + PANEL_W as i64 - 1, t + PANEL_H as i64 - 1);
        for (a, c) in [((l, t), (r, t)), ((r, t), (r, b)), ((r, b), (l, b)), ((l, b), (l, t))] {
            draw_line(&mut img, a, c, frame);
        }
        let to_px = |iter: u64, v: f64| -> (i64, i64) {
            let fx = if it_max > it_min {
                (iter - it_min) as f64 / (it_max - it_min) as f64
            } else {
                0.5
            };
            let fy = (v - lo) / (hi - lo);
            (
                l + 2 + (fx * (PANEL_W - 5) as f64).round() as i64,
                b - 2 - (fy * (PANEL_H - 5) as f64).round() as i64,
            )
        };
        for k in 0..stages {
            let color = Rgb(PALETTE[k % PALETTE.len()]);
            let pts: Vec<(i64, i64)> = rows
                .iter()
                .filter(|r| r.k == k && get(r).is_finite())
                .map(|r| to_px(r.iter, get(r)))
                .collect();
            for w in pts.windows(2) {
                draw_line(&mut img, w[0], w[1], color);
            }
            for &(x, y) in &pts {
                draw_line(&mut img, (x - 1, y), (x + 1, y), color);
            }
        }
    }
    img.save(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Format {
            path: path.to_path_buf(),
            msg: other.to_string(),
        },
    })
}
