//! SVG plots of the threshold curves and the per-category scores.

use std::path::Path;

use plotters::prelude::*;

use super::{OpeReport, ThresholdGrid};
use crate::error::{Error, Result};

fn plot_err(e: impl std::fmt::Display) -> Error {
    Error::Plot(e.to_string())
}

fn curve(path: &Path, xs: &[f64], ys: &[f64], x_max: f64, x_label: &str, y_label: &str) -> Result<()> {
    let root = SVGBackend::new(path, (640, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .margin(20)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(0.0..x_max, 0.0..1.05)
        .map_err(plot_err)?;
    chart.configure_mesh().x_desc(x_label).y_desc(y_label).draw().map_err(plot_err)?;
    chart.draw_series(LineSeries::new(xs.iter().copied().zip(ys.iter().copied()), BLUE.stroke_width(2))).map_err(plot_err)?;
    root.present().map_err(plot_err)
}

/// Writes `success.svg` (fraction with IoU above each threshold) and
/// `precision.svg` (fraction with center error below each threshold).
pub fn plot_curves(report: &OpeReport, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let s = ThresholdGrid::SUCCESS;
    curve(&out_dir.join("success.svg"), &s.thresholds(), &report.success_curve, s.max, "IoU threshold", "success rate")?;
    let p = ThresholdGrid::PRECISION;
    curve(&out_dir.join("precision.svg"), &p.thresholds(), &report.precision_curve, p.max, "distance threshold (m)", "precision")
}

/// Writes `categories.svg`: success and precision per category as paired bars.
pub fn plot_category_bars(report: &OpeReport, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let path = out_dir.join("categories.svg");
    let root = SVGBackend::new(&path, (640, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let n = report.categories.len();
    let mut chart = ChartBuilder::on(&root)
        .margin(20)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(0.0..n as f64, 0.0..100.0)
        .map_err(plot_err)?;
    let names: Vec<String> = report.categories.iter().map(|c| c.category.to_string()).collect();
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(n + 1)
        .x_label_formatter(&|x| names.get(x.floor() as usize).cloned().unwrap_or_default())
        .y_desc("score")
        .draw()
        .map_err(plot_err)?;
    let bars = report.categories.iter().enumerate().flat_map(|(i, c)| {
        let x = i as f64;
        [
            Rectangle::new([(x + 0.1, 0.0), (x + 0.45, c.success)], BLUE.filled()),
            Rectangle::new([(x + 0.55, 0.0), (x + 0.9, c.precision)], RED.filled()),
        ]
    });
    chart.draw_series(bars).map_err(plot_err)?;
    root.present().map_err(plot_err)
}
