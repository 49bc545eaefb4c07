//! One-pass evaluation: Success (IoU threshold sweep) and Precision
//! (center-distance threshold sweep), aggregated by frame count.

mod plot;
mod records;
mod report;

pub use plot::{plot_category_bars, plot_curves};
pub use records::{parse_runs, read_runs, render_runs, write_runs};
pub use report::render_report;

use serde::{Deserialize, Serialize};

use crate::dataset::Category;
use crate::error::{Error, Result};
use crate::geometry::{center_distance, iou3d};
use crate::tracker::TrackRun;

/// Evenly spaced thresholds `i·max/steps` for `i = 0..=steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdGrid {
    pub max: f64,
    pub steps: usize,
}

impl ThresholdGrid {
    /// IoU thresholds 0, 0.05, …, 1.
    pub const SUCCESS: Self = Self { max: 1.0, steps: 20 };
    /// Distance thresholds 0, 0.1, …, 2 meters.
    pub const PRECISION: Self = Self { max: 2.0, steps: 20 };

    pub fn thresholds(&self) -> Vec<f64> {
        (0..=self.steps).map(|i| i as f64 * self.max / self.steps as f64).collect()
    }
}

/// Fraction of frames with IoU strictly above each threshold.
pub fn success_curve(ious: &[f64], grid: ThresholdGrid) -> Vec<f64> {
    let n = ious.len() as f64;
    grid.thresholds().iter().map(|&t| ious.iter().filter(|&&v| v > t).count() as f64 / n).collect()
}

/// Fraction of frames with center distance strictly below each threshold.
pub fn precision_curve(dists: &[f64], grid: ThresholdGrid) -> Vec<f64> {
    let n = dists.len() as f64;
    grid.thresholds().iter().map(|&t| dists.iter().filter(|&&v| v < t).count() as f64 / n).collect()
}

fn mean_percent(curve: &[f64]) -> f64 {
    100.0 * curve.iter().sum::<f64>() / curve.len() as f64
}

/// Success in percent on the default grid.
pub fn success_score(ious: &[f64]) -> Result<f64> {
    if ious.is_empty() {
        return Err(Error::EmptyInput("no IoU values"));
    }
    Ok(mean_percent(&success_curve(ious, ThresholdGrid::SUCCESS)))
}

/// Precision in percent on the default grid.
pub fn precision_score(dists: &[f64]) -> Result<f64> {
    if dists.is_empty() {
        return Err(Error::EmptyInput("no distance values"));
    }
    Ok(mean_percent(&precision_curve(dists, ThresholdGrid::PRECISION)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackletScore {
    pub name: String,
    pub category: Category,
    pub interval: usize,
    pub frames: usize,
    pub success: f64,
    pub precision: f64,
    pub ious: Vec<f64>,
    pub distances: Vec<f64>,
    pub empty_crops: usize,
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryScore {
    pub category: Category,
    pub frames: usize,
    pub success: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedTracklet {
    pub name: String,
    pub category: Category,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpeReport {
    pub success: f64,
    pub precision: f64,
    pub frames: usize,
    pub tracklets: Vec<TrackletScore>,
    pub categories: Vec<CategoryScore>,
    pub skipped: Vec<SkippedTracklet>,
    /// Frames per second over all tracked frames; `None` without timing.
    pub fps: Option<f64>,
    /// Pooled success curve over every frame.
    pub success_curve: Vec<f64>,
    /// Pooled precision curve over every frame.
    pub precision_curve: Vec<f64>,
}

fn weighted(items: &[(usize, f64)]) -> f64 {
    let total: usize = items.iter().map(|(n, _)| n).sum();
    items.iter().map(|(n, s)| *n as f64 * s).sum::<f64>() / total as f64
}

/// Scores every run; the aggregate weights each tracklet by its frame count.
/// Skipped runs are listed but not scored.
pub fn evaluate(runs: &[TrackRun]) -> Result<OpeReport> {
    if runs.is_empty() {
        return Err(Error::EmptyInput("no runs to evaluate"));
    }
    let mut tracklets = Vec::new();
    let mut skipped = Vec::new();
    for r in runs {
        if let Some(reason) = &r.skipped {
            skipped.push(SkippedTracklet { name: r.name.clone(), category: r.category, reason: reason.clone() });
            continue;
        }
        if r.predicted_boxes.len() != r.gt_boxes.len() || r.is_empty() {
            return Err(Error::Shape(format!("run {} has mismatched or empty box lists", r.name)));
        }
        let ious: Vec<f64> = r.predicted_boxes.iter().zip(&r.gt_boxes).map(|(p, g)| iou3d(p, g)).collect();
        let distances: Vec<f64> = r.predicted_boxes.iter().zip(&r.gt_boxes).map(|(p, g)| center_distance(p, g)).collect();
        tracklets.push(TrackletScore {
            name: r.name.clone(),
            category: r.category,
            interval: r.interval,
            frames: r.len(),
            success: success_score(&ious)?,
            precision: precision_score(&distances)?,
            ious,
            distances,
            empty_crops: r.empty_crops.len(),
            wall_time: r.wall_times.iter().sum(),
        });
    }
    if tracklets.is_empty() {
        return Err(Error::EmptyInput("every run was skipped"));
    }
    let frames: usize = tracklets.iter().map(|t| t.frames).sum();
    let success = weighted(&tracklets.iter().map(|t| (t.frames, t.success)).collect::<Vec<_>>());
    let precision = weighted(&tracklets.iter().map(|t| (t.frames, t.precision)).collect::<Vec<_>>());
    let mut categories: Vec<CategoryScore> = Vec::new();
    for cat in tracklets.iter().map(|t| t.category) {
        if categories.iter().any(|c| c.category == cat) {
            continue;
        }
        let members: Vec<&TrackletScore> = tracklets.iter().filter(|t| t.category == cat).collect();
        categories.push(CategoryScore {
            category: cat,
            frames: members.iter().map(|t| t.frames).sum(),
            success: weighted(&members.iter().map(|t| (t.frames, t.success)).collect::<Vec<_>>()),
            precision: weighted(&members.iter().map(|t| (t.frames, t.precision)).collect::<Vec<_>>()),
        });
    }
    let time: f64 = tracklets.iter().map(|t| t.wall_time).sum();
    let all_ious: Vec<f64> = tracklets.iter().flat_map(|t| t.ious.iter().copied()).collect();
    let all_dists: Vec<f64> = tracklets.iter().flat_map(|t| t.distances.iter().copied()).collect();
    Ok(OpeReport {
        success,
        precision,
        frames,
        categories,
        skipped,
        fps: (time > 0.0).then(|| frames as f64 / time),
        success_curve: success_curve(&all_ious, ThresholdGrid::SUCCESS),
        precision_curve: precision_curve(&all_dists, ThresholdGrid::PRECISION),
        tracklets,
    })
}
