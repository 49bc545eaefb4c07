use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::autograd::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-call forward state: mode and the dropout stream.
pub struct ForwardCtx {
    pub mode: Mode,
    pub dropout: f64,
    rng: ChaCha8Rng,
}

impl ForwardCtx {
    pub fn eval() -> Self {
        Self { mode: Mode::Eval, dropout: 0.0, rng: ChaCha8Rng::seed_from_u64(0) }
    }

    pub fn train(dropout: f64, seed: u64) -> Self {
        Self { mode: Mode::Train, dropout, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Inverted dropout; identity in eval mode.
    pub fn dropout(&mut self, tape: &mut Tape, x: Var) -> Var {
        if self.mode == Mode::Eval || self.dropout == 0.0 {
            return x;
        }
        let (r, c) = tape.value(x).shape();
        let keep = 1.0 - self.dropout;
        let mask = (0..r * c)
            .map(|_| if self.rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        tape.mul_const(x, Tensor::from_vec(r, c, mask))
    }
}

pub struct AttentionOut {
    /// `Nq × heads·dv`
    pub out: Var,
    /// Per-head attention maps, each `Nq × Nk`.
    pub maps: Vec<Tensor>,
}

impl AttentionOut {
    /// Head-averaged map.
    pub fn mean_map(&self) -> Tensor {
        let mut m = self.maps[0].clone();
        for h in &self.maps[1..] {
            m.add_assign(h);
        }
        let n = self.maps.len() as f64;
        m.map(|x| x / n)
    }
}

/// Scaled dot-product attention split into `heads` equal column slices of
/// `q`, `k` and `v`; head outputs are concatenated along channels.
pub fn multi_head(tape: &mut Tape, q: Var, k: Var, v: Var, heads: usize) -> AttentionOut {
    let dq = tape.value(q).cols;
    let dv = tape.value(v).cols;
    assert_eq!(dq, tape.value(k).cols, "query/key width");
    assert!(dq.is_multiple_of(heads) && dv.is_multiple_of(heads), "width not divisible by heads");
    let (hq, hv) = (dq / heads, dv / heads);
    let scale = 1.0 / (hq as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    let mut maps = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice_cols(q, h * hq, (h + 1) * hq);
        let kh = tape.slice_cols(k, h * hq, (h + 1) * hq);
        let vh = tape.slice_cols(v, h * hv, (h + 1) * hv);
        let s = tape.matmul_nt(qh, kh);
        let s = tape.scale(s, scale);
        let a = tape.softmax_rows(s);
        maps.push(tape.value(a).clone());
        outs.push(tape.matmul(a, vh));
    }
    let out = if outs.len() == 1 { outs[0] } else { tape.concat_cols(&outs) };
    AttentionOut { out, maps }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Farthest-point sampling over the rows of `coords`, starting at row 0.
/// Ties go to the lowest index; once every row is taken the selection wraps
/// around in selection order, so duplicates are tolerated.
pub fn farthest_point_sampling(coords: &Tensor, n: usize) -> Vec<usize> {
    let m = coords.rows;
    assert!(m > 0, "farthest point sampling on an empty set");
    let mut picked = Vec::with_capacity(n);
    let mut taken = vec![false; m];
    let mut min_d = vec![f64::INFINITY; m];
    let mut cur = 0;
    while picked.len() < n.min(m) {
        picked.push(cur);
        taken[cur] = true;
        let c = coords.row(cur);
        let mut best: Option<(usize, f64)> = None;
        for i in 0..m {
            if taken[i] {
                continue;
            }
            let d = dist2(coords.row(i), c);
            if d < min_d[i] {
                min_d[i] = d;
            }
            if best.is_none_or(|(_, bd)| min_d[i] > bd) {
                best = Some((i, min_d[i]));
            }
        }
        match best {
            Some((i, _)) => cur = i,
            None => break,
        }
    }
    let base = picked.len();
    for j in 0..n.saturating_sub(base) {
        picked.push(picked[j % base]);
    }
    picked
}

/// The `k` rows of `coords` nearest to each query row (including the query
/// itself when it is a member), ordered by distance then index.
pub fn knn(coords: &Tensor, queries: &[usize], k: usize) -> Vec<Vec<usize>> {
    let m = coords.rows;
    queries
        .iter()
        .map(|&q| {
            let c = coords.row(q);
            let mut d: Vec<(f64, usize)> = (0..m).map(|i| (dist2(coords.row(i), c), i)).collect();
            let kk = k.min(m);
            if kk < m {
                d.select_nth_unstable_by(kk - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                d.truncate(kk);
            }
            d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut idx: Vec<usize> = d.into_iter().map(|(_, i)| i).collect();
            // fewer rows than k: repeat the nearest ones
            for j in 0..k.saturating_sub(kk) {
                idx.push(idx[j % kk]);
            }
            idx
        })
        .collect()
}
