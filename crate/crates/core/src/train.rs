//! Sequence training: random-start windows of consecutive frames, memory
//! seeded from the first frame's ground truth, teacher-forced reference
//! boxes with jitter, Adam updates.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{enlargement_offset, make_search_sample, Tracklet};
use crate::error::{Error, Result};
use crate::geometry::Box7;
use crate::model::autograd::{ParamGrads, Tape};
use crate::model::loss::{loss_on_tape, seed_labels};
use crate::model::{Adam, ForwardCtx, HvTrackNet, LossBreakdown, MemoryState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    /// Sequences per optimizer step.
    pub batch_size: usize,
    /// Frames per training sequence.
    pub seq_len: usize,
    /// Initial learning rate.
    pub lr: f64,
    /// Learning rate reached at the last step under cosine decay; equal to
    /// `lr` for a constant rate.
    pub lr_final: f64,
    /// Global gradient-norm clip; none when unset.
    pub clip_norm: Option<f64>,
    /// Standard deviation of the reference-box center jitter, meters.
    pub center_jitter: f64,
    /// Standard deviation of the reference-box yaw jitter, radians.
    pub yaw_jitter: f64,
    /// Extra search-area height; the enlargement offset when unset.
    pub vertical_margin: Option<f64>,
    pub seed: u64,
    /// Log a progress line every this many steps (0 disables).
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            batch_size: 1,
            seq_len: 8,
            lr: 1e-3,
            lr_final: 1e-4,
            clip_norm: Some(10.0),
            center_jitter: 0.1,
            yaw_jitter: 0.02,
            vertical_margin: None,
            seed: 0,
            log_every: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.seq_len < 2 {
            return bad("seq_len must be at least 2");
        }
        if !(self.lr > 0.0 && self.lr.is_finite() && self.lr_final > 0.0 && self.lr_final <= self.lr) {
            return bad("lr must be positive and lr_final in (0, lr]");
        }
        if self.center_jitter < 0.0 || self.yaw_jitter < 0.0 {
            return bad("jitter must be non-negative");
        }
        Ok(())
    }
}

/// Mean loss of one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub loss: LossBreakdown,
    pub grad_norm: f64,
    /// Frames that contributed a loss term.
    pub frames: usize,
}

fn add_grads(acc: &mut ParamGrads, g: ParamGrads) {
    for (id, t) in g {
        match acc.get_mut(&id) {
            Some(a) => a.add_assign(&t),
            None => {
                acc.insert(id, t);
            }
        }
    }
}

fn jitter(b: &Box7, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Box7 {
    let c = Normal::new(0.0, cfg.center_jitter.max(1e-12)).unwrap();
    let y = Normal::new(0.0, cfg.yaw_jitter.max(1e-12)).unwrap();
    let (dx, dy, dz) = if cfg.center_jitter > 0.0 { (c.sample(rng), c.sample(rng), c.sample(rng) * 0.25) } else { (0.0, 0.0, 0.0) };
    let dyaw = if cfg.yaw_jitter > 0.0 { y.sample(rng) } else { 0.0 };
    Box7::new([b.cx + dx, b.cy + dy, b.cz + dz], b.size(), b.yaw + dyaw)
}

/// Loss and gradients of one sequence (summed over its frames).
fn sequence_grads(
    net: &HvTrackNet,
    frames: &Tracklet,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(ParamGrads, [f64; 5], usize)> {
    let mc = net.config();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offset = enlargement_offset(frames.category, frames.interval)?;
    let margin = cfg.vertical_margin.unwrap_or(offset);
    let mut ctx = ForwardCtx::train(mc.dropout, rng.random());
    let first = &frames.frames[0];
    let s0 = match make_search_sample(&first.cloud, &first.gt_box, &first.gt_box, offset, margin, mc.n_input, rng.random(), &frames.sensor_origin) {
        Ok(s) => s,
        Err(Error::EmptySearchArea) => return Ok((ParamGrads::new(), [0.0; 5], 0)),
        Err(e) => return Err(e),
    };
    let mut boot = MemoryState::new(mc.k_train);
    boot.push(net.bootstrap_entry(&s0, s0.gt_alpha)?);
    let mut memory = MemoryState::new(mc.k_train);
    {
        let mut tape = Tape::new();
        let trace = net.forward_tape(&mut tape, &s0, &boot, &mut ctx)?;
        let mut entry = trace.memory_entry(&mut tape, false);
        entry.mask = seed_labels(&s0, &trace.seeds);
        entry.alpha = s0.gt_alpha;
        memory.push(entry);
    }

    let mut grads = ParamGrads::new();
    let mut sums = [0.0; 5];
    let mut used = 0;
    // one tape for the whole sequence when gradients flow through memory
    let mut seq_tape = Tape::new();
    let mut seq_total = None;
    for w in frames.frames.windows(2) {
        let (prev, cur) = (&w[0], &w[1]);
        let reference = jitter(&prev.gt_box, cfg, &mut rng);
        let sample = match make_search_sample(&cur.cloud, &reference, &cur.gt_box, offset, margin, mc.n_input, rng.random(), &frames.sensor_origin) {
            Ok(s) => s,
            Err(Error::EmptySearchArea) => continue,
            Err(e) => return Err(e),
        };
        let mut frame_tape = Tape::new();
        let tape = if mc.detach_memory { &mut frame_tape } else { &mut seq_tape };
        let trace = net.forward_tape(tape, &sample, &memory, &mut ctx)?;
        let labels = seed_labels(&sample, &trace.seeds);
        let (total, parts) = loss_on_tape(tape, &trace.rpn, &labels, &sample.gt_box_local, sample.gt_alpha.as_array(), mc);
        for (s, c) in sums.iter_mut().zip(parts.components()) {
            *s += c;
        }
        used += 1;
        if mc.detach_memory {
            add_grads(&mut grads, tape.backward(total));
            memory.push(trace.memory_entry(tape, false));
        } else {
            seq_total = Some(match seq_total {
                Some(t) => tape.add(t, total),
                None => total,
            });
            memory.push(trace.memory_entry(tape, true));
        }
    }
    if let Some(t) = seq_total {
        grads = seq_tape.backward(t);
    }
    Ok((grads, sums, used))
}

/// Cosine interpolation from `lr` at step 0 to `lr_final` at the last step.
pub fn cosine_lr(cfg: &TrainConfig, step: usize) -> f64 {
    let t = if cfg.steps > 1 { step as f64 / (cfg.steps - 1) as f64 } else { 0.0 };
    cfg.lr_final + 0.5 * (cfg.lr - cfg.lr_final) * (1.0 + (std::f64::consts::PI * t).cos())
}

/// Contiguous window of at most `len` frames starting at a random index.
fn window(t: &Tracklet, len: usize, rng: &mut ChaCha8Rng) -> Tracklet {
    let n = t.len();
    let start = if n > len { rng.random_range(0..=n - len) } else { 0 };
    Tracklet { frames: t.frames[start..(start + len).min(n)].to_vec(), ..t.clone() }
}

/// Trains `net` in place. `on_step` sees every step's log entry.
pub fn train(
    net: &mut HvTrackNet,
    tracklets: &[Tracklet],
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&StepLog),
) -> Result<Vec<StepLog>> {
    cfg.validate()?;
    net.config().validate()?;
    let usable: Vec<&Tracklet> = tracklets.iter().filter(|t| t.len() >= 2).collect();
    if usable.is_empty() {
        return Err(Error::EmptyInput("no tracklet with at least two frames"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(cfg.lr);
    opt.clip_norm = cfg.clip_norm;
    let mut logs = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let jobs: Vec<(Tracklet, u64)> = (0..cfg.batch_size)
            .map(|_| {
                let t = usable[rng.random_range(0..usable.len())];
                (window(t, cfg.seq_len, &mut rng), rng.random())
            })
            .collect();
        let results: Vec<Result<(ParamGrads, [f64; 5], usize)>> = {
            use rayon::prelude::*;
            let net = &*net;
            jobs.par_iter().map(|(t, s)| sequence_grads(net, t, cfg, *s)).collect()
        };
        let mut grads = ParamGrads::new();
        let mut sums = [0.0; 5];
        let mut frames = 0;
        for r in results {
            let (g, s, n) = r?;
            add_grads(&mut grads, g);
            for (a, b) in sums.iter_mut().zip(s) {
                *a += b;
            }
            frames += n;
        }
        if frames == 0 {
            log::warn!("step {step}: every search area was empty; skipping update");
            continue;
        }
        let inv = 1.0 / frames as f64;
        for g in grads.values_mut() {
            for x in g.data.iter_mut() {
                *x *= inv;
            }
        }
        let loss = LossBreakdown::from_components(sums.map(|s| s * inv), &net.config().loss_weights);
        let grad_norm = Adam::grad_norm(&grads);
        if !loss.total.is_finite() || !grad_norm.is_finite() {
            return Err(Error::NonFinite { step, detail: format!("{loss:?}, gradient norm {grad_norm}") });
        }
        opt.lr = cosine_lr(cfg, step);
        opt.step(net.params_mut(), &grads);
        let entry = StepLog { step, loss, grad_norm, frames };
        if cfg.log_every > 0 && step % cfg.log_every == 0 {
            log::info!("step {step}: loss {:.4} (grad norm {:.3})", loss.total, grad_norm);
        }
        on_step(&entry);
        logs.push(entry);
    }
    Ok(logs)
}

pub const LOSS_LOG_HEADER: &str = "step\ttotal\tl_cc\tl_mask\tl_alpha\tl_rm\tl_box\tgrad_norm\tframes";

/// Tab-separated loss curve with a header line.
pub fn write_loss_log(path: &Path, logs: &[StepLog]) -> Result<()> {
    let mut s = String::from(LOSS_LOG_HEADER);
    s.push('\n');
    for l in logs {
        let c = l.loss.components();
        s.push_str(&format!(
            "{}\t{:e}\t{:e}\t{:e}\t{:e}\t{:e}\t{:e}\t{:e}\t{}\n",
            l.step, l.loss.total, c[0], c[1], c[2], c[3], c[4], l.grad_norm, l.frames
        ));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(s.as_bytes()).map_err(|e| Error::io(path, e))
}
