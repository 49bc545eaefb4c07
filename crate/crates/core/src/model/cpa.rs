//! Contextual-point self-attention.
//!
//! Points are ranked by an importance score read off the cross-attention
//! maps, split into importance groups, and each group is compressed into a
//! few contextual points by a learned weighted sum over runs of consecutive
//! members. Queries are all points; keys and values are the contextual
//! points only. Without contextual points, keys and values come from every
//! point.

use super::autograd::{Tape, Var};
use super::bea::AttentionBundle;
use super::config::ModelConfig;
use super::layers::{multi_head, ForwardCtx};
use super::params::{Builder, Ffn, LayerNorm, Linear, ParamId, ParamStore};
use crate::error::{Error, Result};

/// Per-point importance: for each branch, the head-averaged attention peak
/// over the template keys, summed over both branches.
pub fn importance(bundle: &AttentionBundle) -> Vec<f64> {
    let peak = |t: &super::autograd::Tensor, i: usize| t.row(i).iter().cloned().fold(0.0, f64::max);
    (0..bundle.attn_base.rows).map(|i| peak(&bundle.attn_base, i) + peak(&bundle.attn_expan, i)).collect()
}

/// One importance group's clusters.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupPlan {
    /// Position of the group in the configured (least to most important) lists.
    pub config_index: usize,
    /// Point indices per cluster, each run of consecutive ranked members.
    pub clusters: Vec<Vec<usize>>,
}

/// Ranks points by importance (descending, ties by index) and assigns them
/// to groups and clusters. `group_sizes` and `counts` are listed from the
/// least to the most important group, so the top-ranked points fill the last
/// configured group first. Groups come back most important first.
pub fn plan_groups(importance: &[f64], group_sizes: &[usize], counts: &[usize]) -> Result<Vec<GroupPlan>> {
    if group_sizes.len() != counts.len() || group_sizes.iter().sum::<usize>() != importance.len() {
        return Err(Error::Config(format!(
            "groups {group_sizes:?} / {counts:?} do not partition {} points",
            importance.len()
        )));
    }
    let mut order: Vec<usize> = (0..importance.len()).collect();
    // stable: equal importances keep index order
    order.sort_by(|a, b| importance[*b].total_cmp(&importance[*a]));
    let mut plans = Vec::with_capacity(group_sizes.len());
    let mut start = 0;
    for g in (0..group_sizes.len()).rev() {
        let (size, u) = (group_sizes[g], counts[g]);
        if u == 0 || size % u != 0 {
            return Err(Error::Config(format!("group of {size} points cannot form {u} equal clusters")));
        }
        let members = &order[start..start + size];
        let m = size / u;
        plans.push(GroupPlan { config_index: g, clusters: members.chunks(m).map(|c| c.to_vec()).collect() });
        start += size;
    }
    Ok(plans)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cpa {
    ln_in: LayerNorm,
    /// One `1×(size/count)` weight row per configured group.
    cluster_weights: Vec<ParamId>,
    ln_ctx: LayerNorm,
    wq: Linear,
    wk: Linear,
    wv: Linear,
    wo: Linear,
    ln_ffn: LayerNorm,
    ffn: Ffn,
}

pub struct CpaOut {
    /// `N×C`, original point order.
    pub feats: Var,
    /// Key/value length of the self-attention.
    pub key_len: usize,
    pub groups: Vec<GroupPlan>,
}

impl Cpa {
    pub fn build(b: &mut Builder<'_>, cfg: &ModelConfig) -> Self {
        let c = cfg.channels;
        b.scope("cpa", |b| {
            let cluster_weights = if cfg.use_cpa {
                cfg.group_sizes
                    .iter()
                    .zip(&cfg.contextual_counts)
                    .enumerate()
                    .map(|(g, (s, u))| {
                        let m = s / u;
                        b.filled(&format!("cluster{g}"), 1, m, 1.0 / m as f64)
                    })
                    .collect()
            } else {
                Vec::new()
            };
            Self {
                ln_in: b.layer_norm("ln_in", c),
                cluster_weights,
                ln_ctx: b.layer_norm("ln_ctx", c),
                wq: b.linear("wq", c, c),
                wk: b.linear_no_bias("wk", c, c),
                wv: b.linear_no_bias("wv", c, c),
                wo: b.linear("wo", c, c),
                ln_ffn: b.layer_norm("ln_ffn", c),
                ffn: b.ffn("ffn", c, cfg.ffn_hidden),
            }
        })
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        bundle: &AttentionBundle,
        cfg: &ModelConfig,
        ctx: &mut ForwardCtx,
    ) -> Result<CpaOut> {
        let n = tape.value(x).rows;
        if bundle.attn_base.rows != n || bundle.attn_expan.rows != n {
            return Err(Error::Shape(format!("attention maps have {} rows for {n} points", bundle.attn_base.rows)));
        }
        let xn = self.ln_in.forward(tape, store, x);
        let q = self.wq.forward(tape, store, xn);
        let (kv_src, groups) = if cfg.use_cpa {
            let groups = plan_groups(&importance(bundle), &cfg.group_sizes, &cfg.contextual_counts)?;
            let mut parts = Vec::with_capacity(groups.len());
            for g in &groups {
                let members: Vec<usize> = g.clusters.iter().flatten().copied().collect();
                let rows = tape.gather_rows(x, members);
                let w = tape.param(store, self.cluster_weights[g.config_index]);
                parts.push(tape.group_weighted_sum(rows, w));
            }
            let points = tape.concat_rows(&parts);
            (self.ln_ctx.forward(tape, store, points), groups)
        } else {
            (xn, Vec::new())
        };
        let key_len = tape.value(kv_src).rows;
        let k = self.wk.forward(tape, store, kv_src);
        let v = self.wv.forward(tape, store, kv_src);
        let attn = multi_head(tape, q, k, v, cfg.heads);
        let o = self.wo.forward(tape, store, attn.out);
        let o = ctx.dropout(tape, o);
        let y = tape.add(x, o);
        let f = self.ln_ffn.forward(tape, store, y);
        let f = self.ffn.forward(tape, store, f);
        let f = ctx.dropout(tape, f);
        Ok(CpaOut { feats: tape.add(y, f), key_len, groups })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_traced_grouping() {
        // ranked: 5 (0.9), 2 (0.8), 7 (0.7), 0 (0.6), 3 (0.5), 1 (0.4), 6 (0.3), 4 (0.2)
        let imp = [0.6, 0.4, 0.8, 0.5, 0.2, 0.9, 0.3, 0.7];
        let plan = plan_groups(&imp, &[4, 4], &[1, 2]).unwrap();
        assert_eq!(plan[0].config_index, 1);
        assert_eq!(plan[0].clusters, vec![vec![5, 2], vec![7, 0]]);
        assert_eq!(plan[1].config_index, 0);
        assert_eq!(plan[1].clusters, vec![vec![3, 1, 6, 4]]);
    }

    #[test]
    fn ties_keep_index_order() {
        let plan = plan_groups(&[0.5; 8], &[4, 4], &[2, 2]).unwrap();
        assert_eq!(plan[0].clusters, vec![vec![0, 1], vec![2, 3]]);
        assert_eq!(plan[1].clusters, vec![vec![4, 5], vec![6, 7]]);
    }

    #[test]
    fn default_mapping_compresses_least_important_most() {
        let imp: Vec<f64> = (0..128).map(|i| i as f64).collect();
        let plan = plan_groups(&imp, &[32, 64, 32], &[4, 32, 16]).unwrap();
        let shape: Vec<(usize, usize)> = plan.iter().map(|g| (g.clusters.len(), g.clusters[0].len())).collect();
        // most important 32 -> 16 clusters of 2, middle 64 -> 32 of 2, least 32 -> 4 of 8
        assert_eq!(shape, vec![(16, 2), (32, 2), (4, 8)]);
        assert!(plan[0].clusters[0].contains(&127));
        assert!(plan[2].clusters[3].contains(&0));
    }

    #[test]
    fn rejects_bad_partitions() {
        assert!(plan_groups(&[0.0; 8], &[4, 3], &[1, 1]).is_err());
        assert!(plan_groups(&[0.0; 8], &[4, 4], &[3, 1]).is_err());
    }
}
