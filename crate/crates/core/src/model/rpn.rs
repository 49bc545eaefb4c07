//! Voting head: per-point foreground mask, targetness, center and yaw votes,
//! and a global observation-angle estimate.

use super::autograd::{sigmoid, Tape, Tensor, Var};
use super::config::ModelConfig;
use super::params::{Builder, Linear, ParamStore};
use crate::geometry::{Box7, ObservationAngle};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rpn {
    shared1: Linear,
    shared2: Linear,
    mask: Linear,
    target: Linear,
    offset: Linear,
    yaw: Linear,
    alpha: Linear,
}

/// Tape handles of the head outputs.
pub struct RpnVars {
    /// `N×1`
    pub mask_logits: Var,
    /// `N×1`
    pub target_logits: Var,
    /// `N×3`: per-seed center votes.
    pub votes: Var,
    /// `1×3`
    pub coarse_center: Var,
    /// `1×4`: center and yaw.
    pub box4: Var,
    /// `1×2`: unit `(sin, cos)`.
    pub alpha: Var,
}

/// Head outputs in the canonical frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Center and yaw from the votes; size copied from the template.
    pub box_local: Box7,
    /// Foreground probabilities, one per seed.
    pub mask: Vec<f64>,
    pub alpha: ObservationAngle,
    pub coarse_center: [f64; 3],
    /// Center vote of every seed.
    pub votes: Vec<[f64; 3]>,
    pub targetness: Vec<f64>,
    /// Row indices of the seeds in the sampled search points.
    pub seeds: Vec<usize>,
}

impl Rpn {
    pub fn build(b: &mut Builder<'_>, cfg: &ModelConfig) -> Self {
        let c = cfg.channels;
        b.scope("rpn", |b| Self {
            shared1: b.linear("shared1", c + 3, c),
            shared2: b.linear("shared2", c, c),
            mask: b.linear("mask", c, 1),
            target: b.linear("target", c, 1),
            offset: b.linear("offset", c, 3),
            yaw: b.linear("yaw", c, 1),
            alpha: b.linear("alpha", c, 2),
        })
    }

    /// `feats` is `N×C` at seed coordinates `coords` (`N×3`).
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, feats: Var, coords: &Tensor) -> RpnVars {
        let n = coords.rows;
        let p = tape.constant(coords.clone());
        let h = tape.concat_cols(&[feats, p]);
        let h = self.shared1.forward(tape, store, h);
        let h = tape.relu(h);
        let h = self.shared2.forward(tape, store, h);
        let h = tape.relu(h);
        let mask_logits = self.mask.forward(tape, store, h);
        let target_logits = self.target.forward(tape, store, h);
        let offset = self.offset.forward(tape, store, h);
        let votes = tape.shift(offset, coords);
        let yaw = self.yaw.forward(tape, store, h);

        let t = tape.sigmoid(target_logits);
        let coarse_center = tape.weighted_mean_rows(votes, t);

        let probs = tape.value(t).data.clone();
        let keep = above_median(&probs);
        let vy = tape.concat_cols(&[votes, yaw]);
        let (vy, w) = if keep.len() == n {
            (vy, t)
        } else {
            (tape.gather_rows(vy, keep.clone()), tape.gather_rows(t, keep))
        };
        let box4 = tape.weighted_mean_rows(vy, w);

        let pooled = tape.group_max(h, n);
        let a = self.alpha.forward(tape, store, pooled);
        let alpha = tape.row_l2_normalize(a);
        RpnVars { mask_logits, target_logits, votes, coarse_center, box4, alpha }
    }
}

/// Indices whose value is strictly above the median; all indices when none is.
pub fn above_median(v: &[f64]) -> Vec<usize> {
    let mut sorted = v.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len();
    let median = if m % 2 == 1 { sorted[m / 2] } else { 0.5 * (sorted[m / 2 - 1] + sorted[m / 2]) };
    let keep: Vec<usize> = (0..m).filter(|&i| v[i] > median).collect();
    if keep.is_empty() {
        (0..m).collect()
    } else {
        keep
    }
}

impl RpnVars {
    pub fn prediction(&self, tape: &Tape, template_size: [f64; 3], seeds: Vec<usize>) -> Prediction {
        let b = &tape.value(self.box4).data;
        let c = &tape.value(self.coarse_center).data;
        let a = &tape.value(self.alpha).data;
        let probs = |v: Var| tape.value(v).data.iter().map(|&z| sigmoid(z)).collect();
        Prediction {
            box_local: Box7::new([b[0], b[1], b[2]], template_size, b[3]),
            mask: probs(self.mask_logits),
            alpha: ObservationAngle { sin_a: a[0], cos_a: a[1] },
            coarse_center: [c[0], c[1], c[2]],
            votes: tape.value(self.votes).data.chunks(3).map(|v| [v[0], v[1], v[2]]).collect(),
            targetness: probs(self.target_logits),
            seeds,
        }
    }
}
