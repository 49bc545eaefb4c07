use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Network hyperparameters. Serialized as a flat TOML key-value file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Points kept after the backbone (N).
    pub n_points: usize,
    /// Feature channels (C).
    pub channels: usize,
    /// Transformer layers (L).
    pub layers: usize,
    /// Attention heads (H); split evenly between the base and expansion branches.
    pub heads: usize,
    /// Memory size while training.
    pub k_train: usize,
    /// Memory size while tracking.
    pub k_test: usize,
    /// Contextual-point group sizes, listed from least to most important.
    pub group_sizes: Vec<usize>,
    /// Contextual points per group, same order as `group_sizes`.
    pub contextual_counts: Vec<usize>,
    /// Points sampled from the search area.
    pub n_input: usize,
    pub dropout: f64,
    /// Weights of the coarse-center, mask, observation-angle, targetness and box terms.
    pub loss_weights: [f64; 5],
    pub huber_delta: f64,
    pub use_om: bool,
    pub use_bea: bool,
    pub use_cpa: bool,
    /// Neighbors per seed in the backbone edge convolution.
    pub backbone_knn: usize,
    /// Neighbors per seed in the expansion-branch edge convolution.
    pub expansion_knn: usize,
    pub ffn_hidden: usize,
    /// Store memory entries without their autodiff history.
    pub detach_memory: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_points: 128,
            channels: 128,
            layers: 2,
            heads: 4,
            k_train: 2,
            k_test: 6,
            group_sizes: vec![32, 64, 32],
            contextual_counts: vec![4, 32, 16],
            n_input: 1024,
            dropout: 0.1,
            loss_weights: [10.0, 0.2, 1.0, 1.0, 1.0],
            huber_delta: 1.0,
            use_om: true,
            use_bea: true,
            use_cpa: true,
            backbone_knn: 16,
            expansion_knn: 8,
            ffn_hidden: 256,
            detach_memory: true,
        }
    }
}

/// Expansion features keep one point in this many.
pub const EXPANSION_RATIO: usize = 8;

impl ModelConfig {
    /// Small shapes used for gradient checks.
    pub fn toy() -> Self {
        Self {
            n_points: 16,
            channels: 8,
            layers: 2,
            heads: 2,
            k_train: 1,
            k_test: 2,
            group_sizes: vec![4, 8, 4],
            contextual_counts: vec![1, 4, 2],
            n_input: 48,
            dropout: 0.0,
            backbone_knn: 4,
            expansion_knn: 2,
            ffn_hidden: 12,
            ..Self::default()
        }
    }

    pub fn head_dim(&self) -> usize {
        self.channels / self.heads
    }

    pub fn total_contextual(&self) -> usize {
        self.contextual_counts.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_points == 0 || self.channels == 0 || self.layers == 0 || self.heads == 0 {
            return bad("n_points, channels, layers and heads must be positive".into());
        }
        if !self.channels.is_multiple_of(self.heads) {
            return bad(format!("channels {} not divisible by heads {}", self.channels, self.heads));
        }
        if self.use_bea && !self.heads.is_multiple_of(2) {
            return bad(format!("base-expansion attention needs an even head count, got {}", self.heads));
        }
        if !self.n_points.is_multiple_of(EXPANSION_RATIO) {
            return bad(format!("n_points {} not divisible by {EXPANSION_RATIO}", self.n_points));
        }
        if self.k_train == 0 || self.k_test == 0 {
            return bad("memory sizes must be at least 1".into());
        }
        if self.group_sizes.len() != self.contextual_counts.len() || self.group_sizes.is_empty() {
            return bad("group_sizes and contextual_counts must be non-empty and equally long".into());
        }
        if self.group_sizes.iter().sum::<usize>() != self.n_points {
            return bad(format!("group sizes {:?} do not sum to n_points {}", self.group_sizes, self.n_points));
        }
        for (g, u) in self.group_sizes.iter().zip(&self.contextual_counts) {
            if *u == 0 || g % u != 0 {
                return bad(format!("group of {g} points cannot form {u} equal clusters"));
            }
        }
        if self.n_input < self.n_points || self.n_input < self.backbone_knn {
            return bad(format!("n_input {} smaller than n_points or backbone_knn", self.n_input));
        }
        if self.backbone_knn == 0 || self.expansion_knn == 0 || self.ffn_hidden == 0 {
            return bad("neighbor counts and ffn_hidden must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.loss_weights.iter().any(|w| *w < 0.0) || self.huber_delta <= 0.0 {
            return bad("loss weights must be non-negative and huber_delta positive".into());
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let c: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("model config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        ModelConfig::default().validate().unwrap();
        ModelConfig::toy().validate().unwrap();
        let c = ModelConfig::default();
        assert_eq!((c.n_points, c.channels, c.layers, c.heads), (128, 128, 2, 4));
        assert_eq!((c.k_train, c.k_test), (2, 6));
        assert_eq!(c.total_contextual(), 52);
        assert_eq!(c.loss_weights, [10.0, 0.2, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn toml_round_trip() {
        let c = ModelConfig { use_cpa: false, k_test: 3, ..ModelConfig::default() };
        assert_eq!(ModelConfig::from_toml_str(&c.to_toml_string()).unwrap(), c);
        let partial = ModelConfig::from_toml_str("channels = 64\nn_points = 64\ngroup_sizes = [16, 32, 16]\ncontextual_counts = [4, 16, 8]\n").unwrap();
        assert_eq!(partial.channels, 64);
        assert!(ModelConfig::from_toml_str("bogus = 1").is_err());
    }

    #[test]
    fn rejects_bad_shapes() {
        let bad = [
            ModelConfig { heads: 3, ..ModelConfig::default() },
            ModelConfig { group_sizes: vec![32, 64, 31], ..ModelConfig::default() },
            ModelConfig { contextual_counts: vec![5, 32, 16], ..ModelConfig::default() },
            ModelConfig { n_points: 100, ..ModelConfig::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }
}
