//! Point feature extractor: farthest-point seeds, k-nearest-neighbor edge
//! features `[p_i, p_j − p_i]`, a two-layer edge MLP and a max over each
//! seed's neighborhood.

use super::autograd::{Tape, Tensor, Var};
use super::config::ModelConfig;
use super::layers::{farthest_point_sampling, knn};
use super::params::{Builder, Linear, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Backbone {
    edge1: Linear,
    edge2: Linear,
}

/// Seed selection and features for one search area.
pub struct BackboneOut {
    /// Row indices of the seeds in the input.
    pub seeds: Vec<usize>,
    /// `N×3` seed coordinates.
    pub coords: Tensor,
    /// `N×C` seed features.
    pub feats: Var,
}

impl Backbone {
    pub fn build(b: &mut Builder<'_>, cfg: &ModelConfig) -> Self {
        b.scope("backbone", |b| Self {
            edge1: b.linear("edge1", 6, cfg.channels),
            edge2: b.linear("edge2", cfg.channels, cfg.channels),
        })
    }

    /// `points` is `n_input×3`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, points: &Tensor, cfg: &ModelConfig) -> Result<BackboneOut> {
        if points.cols != 3 || points.rows != cfg.n_input {
            return Err(Error::Shape(format!(
                "backbone expects {}×3 points, got {}×{}",
                cfg.n_input, points.rows, points.cols
            )));
        }
        let seeds = farthest_point_sampling(points, cfg.n_points);
        let neighbors = knn(points, &seeds, cfg.backbone_knn);
        let k = cfg.backbone_knn;
        let mut edges = Vec::with_capacity(seeds.len() * k * 6);
        for (s, nbrs) in seeds.iter().zip(&neighbors) {
            let c = points.row(*s);
            for &j in nbrs {
                let p = points.row(j);
                edges.extend_from_slice(c);
                edges.extend((0..3).map(|d| p[d] - c[d]));
            }
        }
        let e = tape.constant(Tensor::from_vec(seeds.len() * k, 6, edges));
        let h = self.edge1.forward(tape, store, e);
        let h = tape.relu(h);
        let h = self.edge2.forward(tape, store, h);
        let feats = tape.group_max(h, k);
        Ok(BackboneOut { coords: points.gather_rows(&seeds), seeds, feats })
    }
}
