use nalgebra::Point3;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{observation_angle, to_local_frame, Box7, ObservationAngle, PointCloud, YawIsometry};

/// Points inside `ref_box` enlarged by `offset` in width and length and by
/// `vertical_margin` in height, expressed in the frame of `ref_box`.
pub fn crop_search_area(cloud: &PointCloud, ref_box: &Box7, offset: f64, vertical_margin: f64) -> PointCloud {
    let (hl, hw, hh) = (
        (ref_box.l + offset) / 2.0,
        (ref_box.w + offset) / 2.0,
        (ref_box.h + vertical_margin) / 2.0,
    );
    to_local_frame(cloud, ref_box)
        .points
        .into_iter()
        .filter(|p| p.x.abs() <= hl && p.y.abs() <= hw && p.z.abs() <= hh)
        .collect()
}

/// Draws exactly `n` points: without replacement when the cloud has at least
/// `n` points, with replacement otherwise. Returns the points and the source
/// indices.
pub fn sample_points(cloud: &PointCloud, n: usize, seed: u64) -> Result<(PointCloud, Vec<usize>)> {
    if cloud.is_empty() {
        return Err(Error::EmptySearchArea);
    }
    if n == 0 {
        return Err(Error::Config("sample size must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx: Vec<usize> = if cloud.len() >= n {
        index::sample(&mut rng, cloud.len(), n).into_vec()
    } else {
        (0..n).map(|_| rng.random_range(0..cloud.len())).collect()
    };
    let pts = idx.iter().map(|&i| cloud.points[i]).collect();
    Ok((pts, idx))
}

/// 1 where the point is inside (or on the boundary of) `b`.
pub fn foreground_mask(points: &PointCloud, b: &Box7) -> Vec<u8> {
    points.points.iter().map(|p| b.contains(p) as u8).collect()
}

/// Network input for one frame, in the frame of the reference box.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchSample {
    pub points: PointCloud,
    pub gt_box_local: Box7,
    pub fg_mask: Vec<u8>,
    pub gt_alpha: ObservationAngle,
    /// Reference box the canonical frame is attached to.
    pub ref_box: Box7,
}

impl SearchSample {
    pub fn frame(&self) -> YawIsometry {
        YawIsometry::of_box(&self.ref_box)
    }
}

/// Crops around `ref_box`, samples `n_in` points and labels them against
/// `gt_box` (both boxes in world coordinates).
#[allow(clippy::too_many_arguments)]
pub fn make_search_sample(
    cloud: &PointCloud,
    ref_box: &Box7,
    gt_box: &Box7,
    offset: f64,
    vertical_margin: f64,
    n_in: usize,
    seed: u64,
    sensor_origin: &Point3<f64>,
) -> Result<SearchSample> {
    let crop = crop_search_area(cloud, ref_box, offset, vertical_margin);
    let (points, _) = sample_points(&crop, n_in, seed)?;
    let gt_box_local = YawIsometry::of_box(ref_box).apply_box_inverse(gt_box);
    let fg_mask = foreground_mask(&points, &gt_box_local);
    let gt_alpha = observation_angle(gt_box, sensor_origin)?;
    Ok(SearchSample { points, gt_box_local, fg_mask, gt_alpha, ref_box: *ref_box })
}
