//! Five-term training objective: center votes (squared error, averaged over
//! foreground seeds; the coarse center when no seed is foreground), foreground
//! mask and targetness (mean binary cross-entropy), observation angle and
//! box (Huber summed over components, wrapped yaw residual).

use serde::{Deserialize, Serialize};

use super::autograd::{huber, Tape, Tensor, Var};
use super::config::ModelConfig;
use super::rpn::{Prediction, RpnVars};
use crate::dataset::SearchSample;
use crate::geometry::{wrap_angle, Box7};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_cc: f64,
    pub l_mask: f64,
    pub l_alpha: f64,
    pub l_rm: f64,
    pub l_box: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Fills `total` with the weighted sum of the components.
    pub fn from_components(c: [f64; 5], weights: &[f64; 5]) -> Self {
        let total = c.iter().zip(weights).map(|(l, g)| l * g).sum();
        Self { l_cc: c[0], l_mask: c[1], l_alpha: c[2], l_rm: c[3], l_box: c[4], total }
    }

    pub fn components(&self) -> [f64; 5] {
        [self.l_cc, self.l_mask, self.l_alpha, self.l_rm, self.l_box]
    }
}

/// Labels for the seeds: the sample's foreground mask at the seed indices.
pub fn seed_labels(sample: &SearchSample, seeds: &[usize]) -> Vec<f64> {
    seeds.iter().map(|&i| sample.fg_mask[i] as f64).collect()
}

fn foreground(labels: &[f64]) -> Vec<usize> {
    (0..labels.len()).filter(|&i| labels[i] > 0.5).collect()
}

/// The box center repeated on `n` rows.
fn center_rows(b: &Box7, n: usize) -> Tensor {
    Tensor::from_vec(n, 3, [b.cx, b.cy, b.cz].repeat(n))
}

/// Box regression target whose yaw makes the residual the wrapped difference.
fn box_target(pred_yaw: f64, gt: &Box7) -> Tensor {
    let yaw = pred_yaw - wrap_angle(pred_yaw - gt.yaw);
    Tensor::from_vec(1, 4, vec![gt.cx, gt.cy, gt.cz, yaw])
}

/// Differentiable loss on the tape. Returns the total and its breakdown.
pub fn loss_on_tape(
    tape: &mut Tape,
    out: &RpnVars,
    labels: &[f64],
    gt_box_local: &Box7,
    gt_alpha: [f64; 2],
    cfg: &ModelConfig,
) -> (Var, LossBreakdown) {
    let fg = foreground(labels);
    let l_cc = if fg.is_empty() {
        tape.squared_error(out.coarse_center, center_rows(gt_box_local, 1))
    } else {
        let n = fg.len();
        let v = tape.gather_rows(out.votes, fg);
        let se = tape.squared_error(v, center_rows(gt_box_local, n));
        tape.scale(se, 1.0 / n as f64)
    };
    let l_mask = tape.bce_with_logits(out.mask_logits, labels.to_vec());
    let l_alpha = tape.huber(out.alpha, Tensor::from_vec(1, 2, gt_alpha.to_vec()), cfg.huber_delta);
    let l_rm = tape.bce_with_logits(out.target_logits, labels.to_vec());
    let pred_yaw = tape.value(out.box4).data[3];
    let l_box = tape.huber(out.box4, box_target(pred_yaw, gt_box_local), cfg.huber_delta);
    let terms = [l_cc, l_mask, l_alpha, l_rm, l_box];
    let mut total = tape.scale(terms[0], cfg.loss_weights[0]);
    for (t, g) in terms.iter().zip(&cfg.loss_weights).skip(1) {
        let s = tape.scale(*t, *g);
        total = tape.add(total, s);
    }
    let values = terms.map(|t| tape.scalar(t));
    (total, LossBreakdown::from_components(values, &cfg.loss_weights))
}

fn bce(p: f64, y: f64) -> f64 {
    let p = p.clamp(1e-12, 1.0 - 1e-12);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Loss of a finished prediction against the sample's labels.
pub fn loss(pred: &Prediction, sample: &SearchSample, gt_box_local: &Box7, cfg: &ModelConfig) -> LossBreakdown {
    let labels = seed_labels(sample, &pred.seeds);
    let n = labels.len() as f64;
    let gt_c = [gt_box_local.cx, gt_box_local.cy, gt_box_local.cz];
    let se = |v: &[f64; 3]| v.iter().zip(gt_c).map(|(p, g)| (p - g).powi(2)).sum::<f64>();
    let fg = foreground(&labels);
    let l_cc = if fg.is_empty() {
        se(&pred.coarse_center)
    } else {
        fg.iter().map(|&i| se(&pred.votes[i])).sum::<f64>() / fg.len() as f64
    };
    let l_mask = pred.mask.iter().zip(&labels).map(|(p, y)| bce(*p, *y)).sum::<f64>() / n;
    let l_rm = pred.targetness.iter().zip(&labels).map(|(p, y)| bce(*p, *y)).sum::<f64>() / n;
    let d = cfg.huber_delta;
    let l_alpha = pred.alpha.as_array().iter().zip(sample.gt_alpha.as_array()).map(|(p, g)| huber(p - g, d)).sum();
    let b = &pred.box_local;
    let residuals = [b.cx - gt_box_local.cx, b.cy - gt_box_local.cy, b.cz - gt_box_local.cz, wrap_angle(b.yaw - gt_box_local.yaw)];
    let l_box = residuals.iter().map(|r| huber(*r, d)).sum();
    LossBreakdown::from_components([l_cc, l_mask, l_alpha, l_rm, l_box], &cfg.loss_weights)
}
