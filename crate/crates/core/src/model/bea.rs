//! Base-expansion cross-attention from search features to template features.
//!
//! Half the heads attend to the template features directly (base scale).
//! The other half attend to an expanded template: farthest-point seeds
//! (one in eight) whose features are edge-convolved over their nearest
//! template neighbors. With the expansion branch disabled all heads run on
//! the base scale.

use super::autograd::{Tape, Tensor, Var};
use super::config::{ModelConfig, EXPANSION_RATIO};
use super::layers::{farthest_point_sampling, knn, multi_head, AttentionOut, ForwardCtx};
use super::params::{Builder, Ffn, LayerNorm, Linear, ParamStore};
use crate::error::{Error, Result};

/// Head-averaged attention maps handed to the contextual-point stage.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionBundle {
    /// `N×kN`
    pub attn_base: Tensor,
    /// `N×kN/8`
    pub attn_expan: Tensor,
    pub base_heads: usize,
    pub expansion_heads: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Branch {
    wq: Linear,
    ln_q: LayerNorm,
    wk: Linear,
    wv: Linear,
}

impl Branch {
    fn build(b: &mut Builder<'_>, name: &str, c: usize, width: usize) -> Self {
        b.scope(name, |b| Self {
            wq: b.linear("wq", c, width),
            ln_q: b.layer_norm("ln_q", width),
            wk: b.linear_no_bias("wk", c, width),
            wv: b.linear_no_bias("wv", c, width),
        })
    }

    /// `xn` and `mem_n` are already layer-normed; `pe` matches the branch width.
    fn attend(&self, tape: &mut Tape, store: &ParamStore, xn: Var, pe: Var, mem_n: Var, heads: usize) -> AttentionOut {
        let q = self.wq.forward(tape, store, xn);
        let q = tape.add(q, pe);
        let q = self.ln_q.forward(tape, store, q);
        let k = self.wk.forward(tape, store, mem_n);
        let v = self.wv.forward(tape, store, mem_n);
        multi_head(tape, q, k, v, heads)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Expansion {
    edge: Linear,
    ln: LayerNorm,
    branch: Branch,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bea {
    ln_x: LayerNorm,
    ln_mem: LayerNorm,
    base: Branch,
    expansion: Option<Expansion>,
    wo: Linear,
    ln_ffn: LayerNorm,
    ffn: Ffn,
}

pub struct BeaOut {
    /// `N×C`
    pub feats: Var,
    pub bundle: AttentionBundle,
    /// `kN/8` expansion-scale template points (0 without the expansion branch).
    pub expansion_len: usize,
}

impl Bea {
    pub fn build(b: &mut Builder<'_>, cfg: &ModelConfig) -> Self {
        let c = cfg.channels;
        b.scope("bea", |b| {
            let (base, expansion) = if cfg.use_bea {
                let half = c / 2;
                let base = Branch::build(b, "base", c, half);
                let exp = b.scope("expansion", |b| Expansion {
                    edge: b.linear("edge", 2 * c, c),
                    ln: b.layer_norm("ln", c),
                    branch: Branch::build(b, "attn", c, half),
                });
                (base, Some(exp))
            } else {
                (Branch::build(b, "base", c, c), None)
            };
            Self {
                ln_x: b.layer_norm("ln_x", c),
                ln_mem: b.layer_norm("ln_mem", c),
                base,
                expansion,
                wo: b.linear("wo", c, c),
                ln_ffn: b.layer_norm("ln_ffn", c),
                ffn: b.ffn("ffn", c, cfg.ffn_hidden),
            }
        })
    }

    /// Edge-convolved template subset: `kN/8 × C`.
    fn expand(&self, exp: &Expansion, tape: &mut Tape, store: &ParamStore, mem: Var, mem_coords: &Tensor, cfg: &ModelConfig) -> Var {
        let n_seeds = mem_coords.rows / EXPANSION_RATIO;
        let seeds = farthest_point_sampling(mem_coords, n_seeds);
        let nbrs = knn(mem_coords, &seeds, cfg.expansion_knn);
        let e = cfg.expansion_knn;
        let centers: Vec<usize> = seeds.iter().flat_map(|&s| std::iter::repeat_n(s, e)).collect();
        let flat: Vec<usize> = nbrs.into_iter().flatten().collect();
        let c = tape.gather_rows(mem, centers);
        let n = tape.gather_rows(mem, flat);
        let d = tape.sub(n, c);
        let edge = tape.concat_cols(&[c, d]);
        let h = exp.edge.forward(tape, store, edge);
        let h = tape.relu(h);
        tape.group_max(h, e)
    }

    /// `x`: `N×C` search features; `pe_s`: `N×C` search positional embedding;
    /// `mem`: `kN×C` template features observed at `mem_coords`.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        pe_s: Var,
        mem: Var,
        mem_coords: &Tensor,
        cfg: &ModelConfig,
        ctx: &mut ForwardCtx,
    ) -> Result<BeaOut> {
        let (n, c) = tape.value(x).shape();
        let mem_len = tape.value(mem).rows;
        if c != cfg.channels || tape.value(mem).cols != c || tape.value(pe_s).shape() != (n, c) {
            return Err(Error::Shape(format!("cross-attention inputs: x {n}×{c}, memory {mem_len}×{}", tape.value(mem).cols)));
        }
        if !mem_len.is_multiple_of(EXPANSION_RATIO) || mem_coords.rows != mem_len {
            return Err(Error::Shape(format!("template length {mem_len} must be a multiple of {EXPANSION_RATIO}")));
        }
        let xn = self.ln_x.forward(tape, store, x);
        let mem_n = self.ln_mem.forward(tape, store, mem);
        let (joined, bundle, expansion_len) = match &self.expansion {
            Some(exp) => {
                let half = cfg.heads / 2;
                let pe_b = tape.slice_cols(pe_s, 0, c / 2);
                let pe_e = tape.slice_cols(pe_s, c / 2, c);
                let base = self.base.attend(tape, store, xn, pe_b, mem_n, half);
                let expanded = self.expand(exp, tape, store, mem, mem_coords, cfg);
                let expanded_n = exp.ln.forward(tape, store, expanded);
                let ex = exp.branch.attend(tape, store, xn, pe_e, expanded_n, half);
                let joined = tape.concat_cols(&[base.out, ex.out]);
                let bundle = AttentionBundle {
                    attn_base: base.mean_map(),
                    attn_expan: ex.mean_map(),
                    base_heads: half,
                    expansion_heads: half,
                };
                (joined, bundle, tape.value(expanded).rows)
            }
            None => {
                let base = self.base.attend(tape, store, xn, pe_s, mem_n, cfg.heads);
                let attn_base = base.mean_map();
                let bundle = AttentionBundle {
                    attn_expan: block_sum_columns(&attn_base, EXPANSION_RATIO),
                    attn_base,
                    base_heads: cfg.heads,
                    expansion_heads: 0,
                };
                (base.out, bundle, 0)
            }
        };
        let o = self.wo.forward(tape, store, joined);
        let o = ctx.dropout(tape, o);
        let y = tape.add(x, o);
        let f = self.ln_ffn.forward(tape, store, y);
        let f = self.ffn.forward(tape, store, f);
        let f = ctx.dropout(tape, f);
        Ok(BeaOut { feats: tape.add(y, f), bundle, expansion_len })
    }
}

/// Sums consecutive blocks of `block` columns; keeps rows stochastic.
pub fn block_sum_columns(t: &Tensor, block: usize) -> Tensor {
    let cols = t.cols / block;
    let mut out = Tensor::zeros(t.rows, cols);
    for i in 0..t.rows {
        for j in 0..cols {
            out.data[i * cols + j] = t.row(i)[j * block..(j + 1) * block].iter().sum();
        }
    }
    out
}
