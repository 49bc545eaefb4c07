//! Online tracking loop: memory initialization from the first annotated
//! frame, then crop, forward, world-frame recovery and memory update per
//! frame. Only the first frame's ground truth is read.

use std::time::Instant;

use nalgebra::Point3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{crop_search_area, enlargement_offset, make_search_sample, sample_points, Category, SearchSample, Tracklet};
use crate::error::{Error, Result};
use crate::geometry::{Box7, ObservationAngle, PointCloud};
use crate::model::{ForwardCtx, HvTrackNet, MemoryState};

/// Inference settings that are not network hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackOptions {
    /// Memory capacity while tracking.
    pub k_test: usize,
    /// Extra height of the search area in meters; the enlargement offset when unset.
    pub vertical_margin: Option<f64>,
    /// Base seed of the per-frame point sampling.
    pub seed: u64,
}

impl Default for TrackOptions {
    fn default() -> Self {
        Self { k_test: 6, vertical_margin: None, seed: 0 }
    }
}

impl TrackOptions {
    /// Defaults with the memory size taken from a model config.
    pub fn for_model(net: &HvTrackNet) -> Self {
        Self { k_test: net.config().k_test, ..Self::default() }
    }

    fn margin(&self, offset: f64) -> f64 {
        self.vertical_margin.unwrap_or(offset)
    }
}

/// Sampling seed for frame `index` of a run.
pub fn frame_seed(base: u64, index: usize) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index as u64)
}

/// Builds the memory from the first frame and its ground-truth box.
#[allow(clippy::too_many_arguments)]
pub fn init_track(
    net: &HvTrackNet,
    cloud: &PointCloud,
    gt_box: &Box7,
    category: Category,
    interval: usize,
    sensor_origin: &Point3<f64>,
    opts: &TrackOptions,
) -> Result<MemoryState> {
    let offset = enlargement_offset(category, interval)?;
    let sample = make_search_sample(
        cloud,
        gt_box,
        gt_box,
        offset,
        opts.margin(offset),
        net.config().n_input,
        frame_seed(opts.seed, 0),
        sensor_origin,
    )?;
    let mut boot = MemoryState::new(opts.k_test);
    boot.push(net.bootstrap_entry(&sample, sample.gt_alpha)?);
    let out = net.forward(&sample, &boot, &mut ForwardCtx::eval())?;
    let mut entry = out.memory_entry();
    entry.mask = out.prediction.seeds.iter().map(|&i| sample.fg_mask[i] as f64).collect();
    entry.alpha = sample.gt_alpha;
    let mut memory = MemoryState::new(opts.k_test);
    memory.push(entry);
    Ok(memory)
}

/// Result of one tracking step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub world_box: Box7,
    /// The search area was empty; the box was held and memory left unchanged.
    pub empty_crop: bool,
}

/// Unlabeled network input around `last_box`, or `None` for an empty crop.
fn search_input(cloud: &PointCloud, last_box: &Box7, offset: f64, margin: f64, n_in: usize, seed: u64) -> Result<Option<SearchSample>> {
    let crop = crop_search_area(cloud, last_box, offset, margin);
    if crop.is_empty() {
        return Ok(None);
    }
    let (points, _) = sample_points(&crop, n_in, seed)?;
    let n = points.len();
    let placeholder = Box7::new([0.0; 3], last_box.size(), 0.0);
    // labels are unknown at inference time; the forward pass ignores them
    Ok(Some(SearchSample {
        points,
        gt_box_local: placeholder,
        fg_mask: vec![0; n],
        gt_alpha: ObservationAngle::from_radians(0.0),
        ref_box: *last_box,
    }))
}

/// Locates the target in `cloud` starting from `last_box` and pushes the
/// frame into memory.
#[allow(clippy::too_many_arguments)]
pub fn step(
    net: &HvTrackNet,
    memory: &mut MemoryState,
    cloud: &PointCloud,
    last_box: &Box7,
    category: Category,
    interval: usize,
    opts: &TrackOptions,
    seed: u64,
) -> Result<StepOutcome> {
    let offset = enlargement_offset(category, interval)?;
    let Some(sample) = search_input(cloud, last_box, offset, opts.margin(offset), net.config().n_input, seed)? else {
        return Ok(StepOutcome { world_box: *last_box, empty_crop: true });
    };
    let out = net.forward(&sample, memory, &mut ForwardCtx::eval())?;
    let world_box = sample.frame().apply_box(&out.prediction.box_local);
    memory.push(out.memory_entry());
    Ok(StepOutcome { world_box, empty_crop: false })
}

/// Per-frame tracking output of one tracklet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackRun {
    pub name: String,
    pub category: Category,
    pub interval: usize,
    pub frame_ids: Vec<u32>,
    pub predicted_boxes: Vec<Box7>,
    pub gt_boxes: Vec<Box7>,
    /// Seconds per frame.
    pub wall_times: Vec<f64>,
    /// Frame indices whose search area was empty.
    pub empty_crops: Vec<usize>,
    /// Why the tracklet could not be initialized; its frame lists are then empty.
    pub skipped: Option<String>,
}

impl TrackRun {
    pub fn len(&self) -> usize {
        self.frame_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frame_ids.is_empty()
    }

    pub fn is_skipped(&self) -> bool {
        self.skipped.is_some()
    }
}

/// One-pass tracking of a tracklet: initialized once from frame 0's box,
/// then driven by its own predictions.
pub fn run_tracklet(net: &HvTrackNet, tracklet: &Tracklet, opts: &TrackOptions) -> Result<TrackRun> {
    let mut run = TrackRun {
        name: tracklet.name.clone(),
        category: tracklet.category,
        interval: tracklet.interval,
        frame_ids: Vec::with_capacity(tracklet.len()),
        predicted_boxes: Vec::with_capacity(tracklet.len()),
        gt_boxes: Vec::with_capacity(tracklet.len()),
        wall_times: Vec::with_capacity(tracklet.len()),
        empty_crops: Vec::new(),
        skipped: None,
    };
    let Some(first) = tracklet.frames.first() else {
        return Err(Error::EmptyInput("tracklet has no frames"));
    };
    let t0 = Instant::now();
    let init = init_track(net, &first.cloud, &first.gt_box, tracklet.category, tracklet.interval, &tracklet.sensor_origin, opts);
    let mut memory = match init {
        Ok(m) => m,
        Err(e @ (Error::EmptySearchArea | Error::DegenerateBearing)) => {
            let reason = e.to_string();
            log::warn!("skipping {}: {reason}", tracklet.name);
            run.skipped = Some(reason);
            return Ok(run);
        }
        Err(e) => return Err(e),
    };
    run.frame_ids.push(first.frame_id);
    run.predicted_boxes.push(first.gt_box);
    run.gt_boxes.push(first.gt_box);
    run.wall_times.push(t0.elapsed().as_secs_f64());
    let mut last = first.gt_box;
    for (i, frame) in tracklet.frames.iter().enumerate().skip(1) {
        let t = Instant::now();
        let out = step(net, &mut memory, &frame.cloud, &last, tracklet.category, tracklet.interval, opts, frame_seed(opts.seed, i))?;
        if out.empty_crop {
            run.empty_crops.push(i);
        }
        last = out.world_box;
        run.frame_ids.push(frame.frame_id);
        run.predicted_boxes.push(last);
        run.gt_boxes.push(frame.gt_box);
        run.wall_times.push(t.elapsed().as_secs_f64());
    }
    Ok(run)
}

/// Tracks every tracklet in parallel; output order follows the input.
pub fn run_tracklets(net: &HvTrackNet, tracklets: &[Tracklet], opts: &TrackOptions) -> Result<Vec<TrackRun>> {
    tracklets.par_iter().map(|t| run_tracklet(net, t, opts)).collect()
}
