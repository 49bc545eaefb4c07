//! Tracklets, the frame-interval (HV) builder, search-area construction and
//! motion statistics.

mod cache;
mod kitti;
mod search;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

pub use cache::{read_cache, read_index, write_cache, IndexEntry, INDEX_FILE};
pub use kitti::{load_kitti_tracklets, parse_calibration, parse_labels, read_velodyne, Calibration, LabelRow, Split};
pub use search::{
    crop_search_area, foreground_mask, make_search_sample, sample_points, SearchSample,
};

use crate::error::{Error, Result};
use crate::geometry::{Box7, PointCloud};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Category {
    Car,
    Pedestrian,
    Van,
    Cyclist,
    Synthetic,
}

impl Category {
    pub const KITTI: [Category; 4] = [Category::Car, Category::Pedestrian, Category::Van, Category::Cyclist];

    pub fn as_str(&self) -> &'static str {
        match self {
            Category::Car => "Car",
            Category::Pedestrian => "Pedestrian",
            Category::Van => "Van",
            Category::Cyclist => "Cyclist",
            Category::Synthetic => "Synthetic",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "car" => Ok(Category::Car),
            "pedestrian" => Ok(Category::Pedestrian),
            "van" => Ok(Category::Van),
            "cyclist" => Ok(Category::Cyclist),
            "synthetic" => Ok(Category::Synthetic),
            _ => Err(Error::UnknownCategory(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub cloud: Arc<PointCloud>,
    pub gt_box: Box7,
    pub frame_id: u32,
}

/// One object's sequence of frames, ordered by strictly increasing `frame_id`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tracklet {
    pub name: String,
    pub sequence: u32,
    pub category: Category,
    pub frames: Vec<Frame>,
    /// Frame interval the tracklet was sampled at (1 for raw sequences).
    pub interval: usize,
    pub sensor_origin: Point3<f64>,
}

impl Tracklet {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame_ids(&self) -> Vec<u32> {
        self.frames.iter().map(|f| f.frame_id).collect()
    }

    pub fn is_well_formed(&self) -> bool {
        !self.frames.is_empty() && self.frames.windows(2).all(|w| w[0].frame_id < w[1].frame_id)
    }
}

/// Splits every tracklet into `min(len, interval)` sub-tracklets; sub-tracklet
/// `i` takes frames `i, i + interval, i + 2·interval, …`.
pub fn build_hv(tracklets: &[Tracklet], interval: usize) -> Result<Vec<Tracklet>> {
    if interval < 1 {
        return Err(Error::InvalidInterval(interval));
    }
    if interval == 1 {
        return Ok(tracklets.to_vec());
    }
    let mut out = Vec::new();
    for t in tracklets {
        for start in 0..t.len().min(interval) {
            out.push(Tracklet {
                name: format!("{}@{}+{}", t.name, interval * t.interval, start),
                sequence: t.sequence,
                category: t.category,
                frames: t.frames.iter().skip(start).step_by(interval).cloned().collect(),
                interval: interval * t.interval,
                sensor_origin: t.sensor_origin,
            });
        }
    }
    Ok(out)
}

const OFFSET_INTERVALS: [usize; 5] = [1, 2, 3, 5, 10];

// rows follow OFFSET_INTERVALS; columns Car, Pedestrian, Van, Cyclist
const OFFSET_TABLE: [[f64; 4]; 5] = [
    [2.0, 2.0, 2.0, 2.0],
    [2.0, 2.0, 3.0, 2.0],
    [3.0, 2.0, 3.0, 2.0],
    [4.0, 2.0, 5.0, 3.0],
    [7.0, 3.0, 8.0, 4.0],
];

/// Search-area enlargement (meters added to width and length) for a category
/// at a frame interval. Intervals between table rows interpolate linearly;
/// intervals past the last row extrapolate along the last segment.
/// Synthetic tracklets use the `Car` column.
pub fn enlargement_offset(category: Category, interval: usize) -> Result<f64> {
    if interval < 1 {
        return Err(Error::InvalidInterval(interval));
    }
    let col = match category {
        Category::Car | Category::Synthetic => 0,
        Category::Pedestrian => 1,
        Category::Van => 2,
        Category::Cyclist => 3,
    };
    if let Some(row) = OFFSET_INTERVALS.iter().position(|&i| i == interval) {
        return Ok(OFFSET_TABLE[row][col]);
    }
    let hi = OFFSET_INTERVALS
        .iter()
        .position(|&i| i > interval)
        .unwrap_or(OFFSET_INTERVALS.len() - 1);
    let lo = hi - 1;
    let (x0, x1) = (OFFSET_INTERVALS[lo] as f64, OFFSET_INTERVALS[hi] as f64);
    let (y0, y1) = (OFFSET_TABLE[lo][col], OFFSET_TABLE[hi][col]);
    Ok(y0 + (y1 - y0) * (interval as f64 - x0) / (x1 - x0))
}

/// Quantile with linear interpolation between order statistics
/// (position `q·(n−1)` in the sorted sample).
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MotionStats {
    pub interval: usize,
    /// `(q, displacement)` pairs in the order requested.
    pub quantiles: Vec<(f64, f64)>,
    pub mean: f64,
    pub pairs: usize,
}

/// Horizontal displacement between consecutive frames after sampling every
/// tracklet at `interval`, pooled over all tracklets.
pub fn motion_stats(tracklets: &[Tracklet], interval: usize, quantiles: &[f64]) -> Result<MotionStats> {
    if let Some(q) = quantiles.iter().find(|q| !(0.0..=1.0).contains(*q)) {
        return Err(Error::Config(format!("quantile {q} outside [0, 1]")));
    }
    let mut d: Vec<f64> = build_hv(tracklets, interval)?
        .iter()
        .flat_map(|t| {
            t.frames.windows(2).map(|w| {
                let (a, b) = (&w[0].gt_box, &w[1].gt_box);
                (b.cx - a.cx).hypot(b.cy - a.cy)
            })
        })
        .collect();
    if d.is_empty() {
        return Err(Error::NoDisplacements);
    }
    d.sort_by(f64::total_cmp);
    Ok(MotionStats {
        interval,
        quantiles: quantiles.iter().map(|&q| (q, quantile(&d, q))).collect(),
        mean: d.iter().sum::<f64>() / d.len() as f64,
        pairs: d.len(),
    })
}

#[cfg(test)]
pub(crate) fn toy_tracklet(n: usize, step: f64) -> Tracklet {
    let cloud = Arc::new(PointCloud::default());
    Tracklet {
        name: "toy".into(),
        sequence: 0,
        category: Category::Car,
        frames: (0..n)
            .map(|i| Frame {
                cloud: cloud.clone(),
                gt_box: Box7::new([10.0 + step * i as f64, 0.0, 0.0], [1.6, 3.9, 1.5], 0.0),
                frame_id: i as u32,
            })
            .collect(),
        interval: 1,
        sensor_origin: Point3::origin(),
    }
}
