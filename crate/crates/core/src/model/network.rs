//! The full network: backbone, `L` stacked memory / cross-attention /
//! contextual-attention layers, and the voting head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::autograd::{Tape, Tensor, Var};
use super::backbone::{Backbone, BackboneOut};
use super::bea::{AttentionBundle, Bea};
use super::config::ModelConfig;
use super::cpa::Cpa;
use super::layers::ForwardCtx;
use super::memory::{EntryVars, MemoryEntry, MemoryState};
use super::params::{Builder, Linear, ParamStore};
use super::rpm::Rpm;
use super::rpn::{Prediction, Rpn, RpnVars};
use crate::dataset::SearchSample;
use crate::error::{Error, Result};
use crate::geometry::{ObservationAngle, PointCloud};

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LayerBlocks {
    rpm: Rpm,
    bea: Bea,
    cpa: Cpa,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layout {
    backbone: Backbone,
    pe_template: Linear,
    pe_search: Linear,
    layers: Vec<LayerBlocks>,
    rpn: Rpn,
}

impl Layout {
    fn build(b: &mut Builder<'_>, cfg: &ModelConfig) -> Self {
        let c = cfg.channels;
        let backbone = Backbone::build(b, cfg);
        let pe_template = b.linear("pe_template", 3, c);
        let pe_search = b.linear("pe_search", 3, c);
        let layers = (0..cfg.layers)
            .map(|l| {
                b.scope(&format!("layer{l}"), |b| LayerBlocks {
                    rpm: Rpm::build(b, cfg),
                    bea: Bea::build(b, cfg),
                    cpa: Cpa::build(b, cfg),
                })
            })
            .collect();
        let rpn = Rpn::build(b, cfg);
        Self { backbone, pe_template, pe_search, layers, rpn }
    }
}

/// Network weights plus the configuration they were built for.
#[derive(Debug, Clone, PartialEq)]
pub struct HvTrackNet {
    config: ModelConfig,
    params: ParamStore,
    layout: Layout,
}

/// Everything a forward pass leaves on the tape.
pub struct ForwardTrace {
    pub rpn: RpnVars,
    /// Inputs `X_0..X_{L-1}` of each layer, `N×C`.
    pub layer_inputs: Vec<Var>,
    /// `N×3` seed coordinates.
    pub coords: Tensor,
    pub seeds: Vec<usize>,
    pub bundles: Vec<AttentionBundle>,
    /// Template length `kN` seen by each layer.
    pub memory_lens: Vec<usize>,
    /// Self-attention key length of each layer.
    pub key_lens: Vec<usize>,
}

impl ForwardTrace {
    /// Memory entry from the layer inputs and the predicted mask and angle.
    /// With `keep_vars` the entry keeps its gradient path.
    pub fn memory_entry(&self, tape: &mut Tape, keep_vars: bool) -> MemoryEntry {
        let mask_var = tape.sigmoid(self.rpn.mask_logits);
        let a = &tape.value(self.rpn.alpha).data;
        let alpha = ObservationAngle { sin_a: a[0], cos_a: a[1] };
        MemoryEntry {
            layer_feats: self.layer_inputs.iter().map(|v| tape.value(*v).clone()).collect(),
            mask: tape.value(mask_var).data.clone(),
            alpha,
            coords: self.coords.clone(),
            vars: keep_vars.then(|| EntryVars {
                layer_feats: self.layer_inputs.clone(),
                mask: mask_var,
                alpha: self.rpn.alpha,
            }),
        }
    }
}

/// Result of a tape-free forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub prediction: Prediction,
    pub layer_inputs: Vec<Tensor>,
    pub coords: Tensor,
    pub bundles: Vec<AttentionBundle>,
    pub memory_lens: Vec<usize>,
    pub key_lens: Vec<usize>,
}

impl ForwardOutput {
    /// Memory entry carrying this frame's layer inputs and predictions.
    pub fn memory_entry(&self) -> MemoryEntry {
        MemoryEntry {
            layer_feats: self.layer_inputs.clone(),
            mask: self.prediction.mask.clone(),
            alpha: self.prediction.alpha,
            coords: self.coords.clone(),
            vars: None,
        }
    }
}

/// `n×3` tensor of a point cloud.
pub fn points_tensor(cloud: &PointCloud) -> Tensor {
    Tensor::from_vec(cloud.len(), 3, cloud.points.iter().flat_map(|p| [p.x, p.y, p.z]).collect())
}

impl HvTrackNet {
    /// Randomly initialized network.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layout = Layout::build(&mut Builder::new(&mut params, &mut rng), &config);
        Ok(Self { config, params, layout })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Replaces the weights; names and shapes must match this network's.
    pub fn set_params(&mut self, params: ParamStore) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Checkpoint(format!("expected {} tensors, got {}", self.params.len(), params.len())));
        }
        for ((_, n1, t1), (_, n2, t2)) in self.params.iter().zip(params.iter()) {
            if n1 != n2 || t1.shape() != t2.shape() {
                return Err(Error::Checkpoint(format!("tensor {n2} {:?} does not match {n1} {:?}", t2.shape(), t1.shape())));
            }
        }
        self.params = params;
        Ok(())
    }

    pub fn backbone_stage(&self, tape: &mut Tape, points: &Tensor) -> Result<BackboneOut> {
        self.layout.backbone.forward(tape, &self.params, points, &self.config)
    }

    /// Transformer layers and head on top of a backbone output.
    pub fn layers_stage(
        &self,
        tape: &mut Tape,
        bb: &BackboneOut,
        memory: &MemoryState,
        ctx: &mut ForwardCtx,
    ) -> Result<ForwardTrace> {
        let cfg = &self.config;
        let store = &self.params;
        let coords_var = tape.constant(bb.coords.clone());
        let pe_s = self.layout.pe_search.forward(tape, store, coords_var);
        let mut x = bb.feats;
        let mut layer_inputs = Vec::with_capacity(cfg.layers);
        let mut bundles = Vec::with_capacity(cfg.layers);
        let mut memory_lens = Vec::with_capacity(cfg.layers);
        let mut key_lens = Vec::with_capacity(cfg.layers);
        for (l, blocks) in self.layout.layers.iter().enumerate() {
            layer_inputs.push(x);
            let bank = memory.layer_bank(tape, l)?;
            let bank_coords = tape.constant(bank.coords.clone());
            let pe_t = self.layout.pe_template.forward(tape, store, bank_coords);
            let mem = blocks.rpm.forward(tape, store, &bank, pe_t, cfg, ctx);
            memory_lens.push(bank.coords.rows);
            let bea = blocks.bea.forward(tape, store, x, pe_s, mem, &bank.coords, cfg, ctx)?;
            let cpa = blocks.cpa.forward(tape, store, bea.feats, &bea.bundle, cfg, ctx)?;
            key_lens.push(cpa.key_len);
            bundles.push(bea.bundle);
            x = cpa.feats;
        }
        let rpn = self.layout.rpn.forward(tape, store, x, &bb.coords);
        Ok(ForwardTrace { rpn, layer_inputs, coords: bb.coords.clone(), seeds: bb.seeds.clone(), bundles, memory_lens, key_lens })
    }

    /// Full forward pass on the tape.
    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        sample: &SearchSample,
        memory: &MemoryState,
        ctx: &mut ForwardCtx,
    ) -> Result<ForwardTrace> {
        let bb = self.backbone_stage(tape, &points_tensor(&sample.points))?;
        self.layers_stage(tape, &bb, memory, ctx)
    }

    /// Forward pass without keeping the tape.
    pub fn forward(&self, sample: &SearchSample, memory: &MemoryState, ctx: &mut ForwardCtx) -> Result<ForwardOutput> {
        let mut tape = Tape::new();
        let trace = self.forward_tape(&mut tape, sample, memory, ctx)?;
        let prediction = trace.rpn.prediction(&tape, sample.ref_box.size(), trace.seeds.clone());
        Ok(ForwardOutput {
            prediction,
            layer_inputs: trace.layer_inputs.iter().map(|v| tape.value(*v).clone()).collect(),
            coords: trace.coords,
            bundles: trace.bundles,
            memory_lens: trace.memory_lens,
            key_lens: trace.key_lens,
        })
    }

    /// Bootstrap memory entry: backbone features for every layer, with the
    /// given per-seed mask and angle.
    pub fn bootstrap_entry(&self, sample: &SearchSample, alpha: ObservationAngle) -> Result<MemoryEntry> {
        let mut tape = Tape::new();
        let bb = self.backbone_stage(&mut tape, &points_tensor(&sample.points))?;
        let feats = tape.value(bb.feats).clone();
        Ok(MemoryEntry {
            layer_feats: vec![feats; self.config.layers],
            mask: bb.seeds.iter().map(|&i| sample.fg_mask[i] as f64).collect(),
            alpha,
            coords: bb.coords,
            vars: None,
        })
    }
}
