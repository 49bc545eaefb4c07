//! Relative-pose-aware memory: fuses the layer-feature, mask and
//! observation-angle banks into template features and refines them with
//! self-attention.

use super::autograd::{Tape, Tensor, Var};
use super::config::ModelConfig;
use super::layers::{multi_head, ForwardCtx};
use super::memory::LayerBank;
use super::params::{Builder, Ffn, LayerNorm, Linear, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rpm {
    proj: Linear,
    ln_t: LayerNorm,
    wq: Linear,
    ln_q: LayerNorm,
    wk: Linear,
    wv: Linear,
    wo: Linear,
    ln_ffn: LayerNorm,
    ffn: Ffn,
}

impl Rpm {
    pub fn build(b: &mut Builder<'_>, cfg: &ModelConfig) -> Self {
        let c = cfg.channels;
        b.scope("rpm", |b| Self {
            proj: b.linear("proj", c + 3, c),
            ln_t: b.layer_norm("ln_t", c),
            wq: b.linear("wq", c, c),
            ln_q: b.layer_norm("ln_q", c),
            wk: b.linear_no_bias("wk", c, c),
            wv: b.linear_no_bias("wv", c, c),
            wo: b.linear("wo", c, c),
            ln_ffn: b.layer_norm("ln_ffn", c),
            ffn: b.ffn("ffn", c, cfg.ffn_hidden),
        })
    }

    /// Template features `Mem_l` (`kN×C`). `pe_t` is the positional
    /// embedding of the bank coordinates.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        bank: &LayerBank,
        pe_t: Var,
        cfg: &ModelConfig,
        ctx: &mut ForwardCtx,
    ) -> Var {
        let alpha = if cfg.use_om {
            bank.alpha
        } else {
            let rows = tape.value(bank.alpha).rows;
            tape.constant(Tensor::zeros(rows, 2))
        };
        let fused = tape.concat_cols(&[bank.feats, bank.mask, alpha]);
        let t = self.proj.forward(tape, store, fused);
        let lt = self.ln_t.forward(tape, store, t);
        let q = self.wq.forward(tape, store, lt);
        let q = tape.add(q, pe_t);
        let q = self.ln_q.forward(tape, store, q);
        let k = self.wk.forward(tape, store, lt);
        let v = self.wv.forward(tape, store, lt);
        let attn = multi_head(tape, q, k, v, cfg.heads);
        let a = self.wo.forward(tape, store, attn.out);
        let a = ctx.dropout(tape, a);
        let mem = tape.add(t, a);
        let f = self.ln_ffn.forward(tape, store, mem);
        let f = self.ffn.forward(tape, store, f);
        let f = ctx.dropout(tape, f);
        tape.add(mem, f)
    }
}
