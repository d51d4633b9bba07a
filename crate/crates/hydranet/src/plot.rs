//! One PNG per task with four panels (MSE, AP, AUC, Brier) tracing the model
//! and the no-change baseline over forecast months.

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use hydranet_core::metrics::{EvalReport, Metric, Task};
use plotters::prelude::*;
use plotters::style::FontStyle;

use crate::error::{Error, Result};

pub const SIZE: (u32, u32) = (1000, 760);
const FAMILY: &str = "sans-serif";
/// Environment variable naming a TrueType font for plot text.
pub const FONT_ENV: &str = "HYDRANET_FONT";
const FONT_CANDIDATES: &[&str] = &[
    "/usr/share/fonts/truetype/dejavu/DejaVuSans.ttf",
    "/usr/share/fonts/TTF/DejaVuSans.ttf",
    "/usr/share/fonts/dejavu/DejaVuSans.ttf",
    "/Library/Fonts/Arial.ttf",
    "C:\\Windows\\Fonts\\arial.ttf",
];

/// Registers a system font once; plots are drawn without text when none is found.
fn font_available() -> bool {
    *FONT.get_or_init(|| {
        let from_env = std::env::var_os(FONT_ENV).map(PathBuf::from);
        from_env.into_iter().chain(FONT_CANDIDATES.iter().map(PathBuf::from)).any(|p| {
            std::fs::read(&p)
                .ok()
                .is_some_and(|bytes| plotters::style::register_font(FAMILY, FontStyle::Normal, bytes.leak()).is_ok())
        })
    })
}

static FONT: OnceLock<bool> = OnceLock::new();

fn plot_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}

fn range(values: impl Iterator<Item = f64>, metric: Metric) -> (f64, f64) {
    if metric != Metric::Mse {
        return (0.0, 1.0);
    }
    let hi = values.fold(0.0f64, f64::max);
    (0.0, if hi > 0.0 { hi * 1.1 } else { 1.0 })
}

pub fn plot_task(path: &Path, report: &EvalReport, task: Task) -> Result<()> {
    let text = font_available();
    let months = report.month_ids();
    let (first, last) = (months.first().copied().unwrap_or(0) as f64, months.last().copied().unwrap_or(0) as f64);
    let (x0, x1) = if last > first { (first, last) } else { (first - 1.0, first + 1.0) };

    let root = BitMapBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot_err(path, e))?;
    let root = if text {
        root.titled(&format!("{task}: forecast vs no-change baseline"), (FAMILY, 24)).map_err(|e| plot_err(path, e))?
    } else {
        root
    };
    for (panel, metric) in root.split_evenly((2, 2)).iter().zip(Metric::ALL) {
        let rows: Vec<_> = report.series(task, metric).collect();
        let model: Vec<(f64, f64)> = rows.iter().filter_map(|r| r.model.map(|v| (r.month_id as f64, v))).collect();
        let base: Vec<(f64, f64)> = rows.iter().filter_map(|r| r.baseline.map(|v| (r.month_id as f64, v))).collect();
        let (y0, y1) = range(model.iter().chain(&base).map(|p| p.1), metric);

        let mut builder = ChartBuilder::on(panel);
        builder.margin(12);
        if text {
            builder.caption(metric.name().to_uppercase(), (FAMILY, 18)).x_label_area_size(30).y_label_area_size(55);
        }
        let mut chart = builder.build_cartesian_2d(x0..x1, y0..y1).map_err(|e| plot_err(path, e))?;
        let mut mesh = chart.configure_mesh();
        if text {
            mesh.x_desc("month_id").x_labels(months.len().clamp(2, 12)).x_label_formatter(&|x| format!("{x:.0}"));
        } else {
            mesh.x_labels(0).y_labels(0);
        }
        mesh.draw().map_err(|e| plot_err(path, e))?;

        let model_style = ShapeStyle::from(&BLUE).stroke_width(2);
        let base_style = ShapeStyle::from(&RED).stroke_width(2);
        let drawn = chart.draw_series(LineSeries::new(model.clone(), model_style)).map_err(|e| plot_err(path, e))?;
        if text {
            drawn.label("model").legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], model_style));
        }
        chart
            .draw_series(model.iter().map(|&p| Circle::new(p, 3, model_style.filled())))
            .map_err(|e| plot_err(path, e))?;
        let drawn = chart.draw_series(LineSeries::new(base.clone(), base_style)).map_err(|e| plot_err(path, e))?;
        if text {
            drawn.label("baseline").legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], base_style));
            chart
                .configure_series_labels()
                .position(SeriesLabelPosition::UpperRight)
                .background_style(WHITE.mix(0.8))
                .border_style(BLACK)
                .draw()
                .map_err(|e| plot_err(path, e))?;
        }
    }
    root.present().map_err(|e| plot_err(path, e))
}

/// Writes `<dir>/<task>.png` for every task and returns the paths.
pub fn plot_report(dir: &Path, report: &EvalReport) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Task::ALL
        .iter()
        .map(|&task| {
            let path = dir.join(format!("{task}.png"));
            plot_task(&path, report, task).map(|_| path)
        })
        .collect()
}

/// Width and height from a PNG signature and IHDR chunk.
pub fn png_dimensions(bytes: &[u8]) -> Option<(u32, u32)> {
    const SIGNATURE: [u8; 8] = [0x89, b'P', b'N', b'G', b'\r', b'\n', 0x1a, b'\n'];
    if bytes.len() < 24 || bytes[..8] != SIGNATURE || &bytes[12..16] != b"IHDR" {
        return None;
    }
    let be = |i: usize| u32::from_be_bytes(bytes[i..i + 4].try_into().unwrap());
    Some((be(16), be(20)))
}
