//! The three rolling memory banks (layer features, masks, observation angles)
//! plus the point coordinates their entries were observed at.

use std::collections::VecDeque;

use super::autograd::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::ObservationAngle;

/// Autodiff handles for an entry produced on the tape that is still alive.
#[derive(Debug, Clone, PartialEq)]
pub struct EntryVars {
    pub layer_feats: Vec<Var>,
    /// `N×1` mask probabilities.
    pub mask: Var,
    /// `1×2` observation angle.
    pub alpha: Var,
}

/// One frame's contribution to every bank.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryEntry {
    /// One `N×C` tensor per transformer layer (that layer's input).
    pub layer_feats: Vec<Tensor>,
    /// Foreground probabilities, one per point.
    pub mask: Vec<f64>,
    pub alpha: ObservationAngle,
    /// `N×3` canonical-frame coordinates.
    pub coords: Tensor,
    pub vars: Option<EntryVars>,
}

/// Fixed-capacity FIFO over [`MemoryEntry`], oldest first. All banks share
/// the entry list, so their fill counts and ordering always agree.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryState {
    capacity: usize,
    entries: VecDeque<MemoryEntry>,
}

/// Bank contents for one layer, stacked over entries.
pub struct LayerBank {
    /// `kN×C`
    pub feats: Var,
    /// `kN×1`
    pub mask: Var,
    /// `kN×2`, each entry's angle repeated for its points.
    pub alpha: Var,
    /// `kN×3`
    pub coords: Tensor,
}

impl MemoryState {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "memory capacity must be positive");
        Self { capacity, entries: VecDeque::with_capacity(capacity + 1) }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Changes the capacity, dropping the oldest entries if needed.
    pub fn set_capacity(&mut self, capacity: usize) {
        assert!(capacity >= 1, "memory capacity must be positive");
        self.capacity = capacity;
        while self.entries.len() > capacity {
            self.entries.pop_front();
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &MemoryEntry> {
        self.entries.iter()
    }

    pub fn push(&mut self, entry: MemoryEntry) {
        self.entries.push_back(entry);
        while self.entries.len() > self.capacity {
            self.entries.pop_front();
        }
    }

    /// Drops every entry's autodiff handles.
    pub fn detach(&mut self) {
        for e in self.entries.iter_mut() {
            e.vars = None;
        }
    }

    /// Observation-angle bank, `k×2`.
    pub fn om(&self) -> Tensor {
        let rows: Vec<[f64; 2]> = self.entries.iter().map(|e| e.alpha.as_array()).collect();
        Tensor::from_rows(&rows)
    }

    /// Mask bank flattened to `kN×1`.
    pub fn mm(&self) -> Tensor {
        let data: Vec<f64> = self.entries.iter().flat_map(|e| e.mask.iter().copied()).collect();
        Tensor::from_vec(data.len(), 1, data)
    }

    /// Layer-feature bank for `layer`, `kN×C`.
    pub fn lm(&self, layer: usize) -> Tensor {
        let parts: Vec<&Tensor> = self.entries.iter().map(|e| &e.layer_feats[layer]).collect();
        Tensor::vstack(&parts)
    }

    pub fn coords(&self) -> Tensor {
        let parts: Vec<&Tensor> = self.entries.iter().map(|e| &e.coords).collect();
        Tensor::vstack(&parts)
    }

    /// Places the banks for `layer` on the tape. Entries carrying live
    /// handles keep their gradient path; the rest enter as constants.
    pub fn layer_bank(&self, tape: &mut Tape, layer: usize) -> Result<LayerBank> {
        if self.entries.is_empty() {
            return Err(Error::EmptyMemory);
        }
        let mut feats = Vec::new();
        let mut masks = Vec::new();
        let mut alphas = Vec::new();
        for e in &self.entries {
            let n = e.coords.rows;
            if e.layer_feats.len() <= layer || e.layer_feats[layer].rows != n || e.mask.len() != n {
                return Err(Error::Shape(format!("memory entry inconsistent for layer {layer}")));
            }
            match &e.vars {
                Some(v) => {
                    feats.push(v.layer_feats[layer]);
                    masks.push(v.mask);
                    alphas.push(tape.gather_rows(v.alpha, vec![0; n]));
                }
                None => {
                    feats.push(tape.constant(e.layer_feats[layer].clone()));
                    masks.push(tape.constant(Tensor::from_vec(n, 1, e.mask.clone())));
                    let a = e.alpha.as_array();
                    let rep: Vec<f64> = (0..n).flat_map(|_| a).collect();
                    alphas.push(tape.constant(Tensor::from_vec(n, 2, rep)));
                }
            }
        }
        Ok(LayerBank {
            feats: tape.concat_rows(&feats),
            mask: tape.concat_rows(&masks),
            alpha: tape.concat_rows(&alphas),
            coords: self.coords(),
        })
    }
}
