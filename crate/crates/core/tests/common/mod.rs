//! Fixtures and oracles shared by the integration tests and the acceptance suite.
#![allow(dead_code)]

use hvtrack::dataset::{make_search_sample, SearchSample, Tracklet};
use hvtrack::geometry::{Box7, ObservationAngle};
use hvtrack::model::autograd::softmax_rows;
use hvtrack::model::bea::Bea;
use hvtrack::model::cpa::Cpa;
use hvtrack::model::loss::loss_on_tape;
use hvtrack::model::memory::MemoryEntry;
use hvtrack::model::params::Builder;
use hvtrack::model::rpm::Rpm;
use hvtrack::model::rpn::{Rpn, RpnVars};
use hvtrack::model::{AttentionBundle, ForwardCtx, MemoryState, ModelConfig, ParamStore, Tape, Tensor, Var};
use hvtrack::synth::{generate_dataset, SynthConfig};
use hvtrack::train::TrainConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect())
}

/// Random row-stochastic matrix.
pub fn rand_stochastic(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    softmax_rows(&rand_tensor(rng, rows, cols, 2.0))
}

/// Finite-difference comparison for one named parameter tensor.
#[derive(Debug, Clone)]
pub struct GroupError {
    pub name: String,
    pub scalars: usize,
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖, 1e-8)`.
    pub rel: f64,
}

pub const FD_STEP: f64 = 1e-5;

/// Compares reverse-mode gradients of the scalar built by `f` with central
/// differences, for every scalar of every parameter in `store`.
pub fn fd_check(store: &ParamStore, f: impl Fn(&ParamStore) -> (Tape, Var)) -> Vec<GroupError> {
    fd_check_sampled(store, usize::MAX, f)
}

/// As [`fd_check`], on at most `limit` evenly spaced scalars per tensor.
pub fn fd_check_sampled(store: &ParamStore, limit: usize, f: impl Fn(&ParamStore) -> (Tape, Var)) -> Vec<GroupError> {
    let (tape, loss) = f(store);
    let grads = tape.backward(loss);
    let eval = |s: &ParamStore| {
        let (t, l) = f(s);
        t.scalar(l)
    };
    let mut work = store.clone();
    let mut out = Vec::new();
    for (id, name, value) in store.iter() {
        let analytic = grads.get(&id).cloned().unwrap_or_else(|| Tensor::zeros(value.rows, value.cols));
        let len = value.data.len();
        let picks: Vec<usize> = if len <= limit { (0..len).collect() } else { (0..limit).map(|j| j * len / limit).collect() };
        let analytic: Vec<f64> = picks.iter().map(|&i| analytic.data[i]).collect();
        let mut numeric = Vec::with_capacity(picks.len());
        for &i in &picks {
            let x = value.data[i];
            work.get_mut(id).data[i] = x + FD_STEP;
            let up = eval(&work);
            work.get_mut(id).data[i] = x - FD_STEP;
            let down = eval(&work);
            work.get_mut(id).data[i] = x;
            numeric.push((up - down) / (2.0 * FD_STEP));
        }
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, n)| a - n).collect();
        let rel = norm(&diff) / norm(&analytic).max(norm(&numeric)).max(1e-8);
        out.push(GroupError { name: name.to_string(), scalars: picks.len(), rel });
    }
    out
}

pub fn worst(errors: &[GroupError]) -> &GroupError {
    errors.iter().max_by(|a, b| a.rel.total_cmp(&b.rel)).expect("at least one group")
}

/// The shapes the gradient checks run at: `N=16, C=8, H=2`, one memory entry.
pub fn grad_config() -> ModelConfig {
    ModelConfig { k_train: 1, ..ModelConfig::toy() }
}

fn store_with<T>(build: impl FnOnce(&mut Builder<'_>) -> T) -> (ParamStore, T) {
    let mut store = ParamStore::new();
    let mut r = rng(11);
    let block = build(&mut Builder::new(&mut store, &mut r));
    (store, block)
}

fn random_entry(r: &mut ChaCha8Rng, cfg: &ModelConfig) -> MemoryEntry {
    let n = cfg.n_points;
    MemoryEntry {
        layer_feats: (0..cfg.layers).map(|_| rand_tensor(r, n, cfg.channels, 1.0)).collect(),
        mask: (0..n).map(|_| r.random_range(0.0..1.0)).collect(),
        alpha: ObservationAngle::from_radians(r.random_range(-3.0..3.0)),
        coords: rand_tensor(r, n, 3, 2.0),
        vars: None,
    }
}

/// Relative-pose memory block on one random memory entry.
pub fn rpm_grad_check() -> Vec<GroupError> {
    let cfg = grad_config();
    let (store, rpm) = store_with(|b| Rpm::build(b, &cfg));
    let mut r = rng(1);
    let mut memory = MemoryState::new(cfg.k_train);
    memory.push(random_entry(&mut r, &cfg));
    let kn = cfg.k_train * cfg.n_points;
    let pe = rand_tensor(&mut r, kn, cfg.channels, 1.0);
    let target = rand_tensor(&mut r, kn, cfg.channels, 1.0);
    fd_check(&store, |s| {
        let mut tape = Tape::new();
        let bank = memory.layer_bank(&mut tape, 0).unwrap();
        let pe_t = tape.constant(pe.clone());
        let out = rpm.forward(&mut tape, s, &bank, pe_t, &cfg, &mut ForwardCtx::eval());
        let l = tape.squared_error(out, target.clone());
        (tape, l)
    })
}

/// Base-expansion cross-attention on random search and template features.
pub fn bea_grad_check() -> Vec<GroupError> {
    let cfg = grad_config();
    let (store, bea) = store_with(|b| Bea::build(b, &cfg));
    let mut r = rng(2);
    let (n, c) = (cfg.n_points, cfg.channels);
    let kn = cfg.k_train * n;
    let (x, pe, mem) = (rand_tensor(&mut r, n, c, 1.0), rand_tensor(&mut r, n, c, 1.0), rand_tensor(&mut r, kn, c, 1.0));
    let coords = rand_tensor(&mut r, kn, 3, 2.0);
    let target = rand_tensor(&mut r, n, c, 1.0);
    fd_check(&store, |s| {
        let mut tape = Tape::new();
        let (xv, pv, mv) = (tape.constant(x.clone()), tape.constant(pe.clone()), tape.constant(mem.clone()));
        let out = bea.forward(&mut tape, s, xv, pv, mv, &coords, &cfg, &mut ForwardCtx::eval()).unwrap();
        let l = tape.squared_error(out.feats, target.clone());
        (tape, l)
    })
}

/// Random attention maps of the shapes the contextual-point stage consumes.
pub fn random_bundle(r: &mut ChaCha8Rng, cfg: &ModelConfig) -> AttentionBundle {
    let kn = cfg.k_train * cfg.n_points;
    AttentionBundle {
        attn_base: rand_stochastic(r, cfg.n_points, kn),
        attn_expan: rand_stochastic(r, cfg.n_points, kn / 8),
        base_heads: cfg.heads / 2,
        expansion_heads: cfg.heads / 2,
    }
}

/// Contextual-point self-attention with random importance maps.
pub fn cpa_grad_check() -> Vec<GroupError> {
    let cfg = grad_config();
    let (store, cpa) = store_with(|b| Cpa::build(b, &cfg));
    let mut r = rng(3);
    let bundle = random_bundle(&mut r, &cfg);
    let x = rand_tensor(&mut r, cfg.n_points, cfg.channels, 1.0);
    let target = rand_tensor(&mut r, cfg.n_points, cfg.channels, 1.0);
    fd_check(&store, |s| {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let out = cpa.forward(&mut tape, s, xv, &bundle, &cfg, &mut ForwardCtx::eval()).unwrap();
        let l = tape.squared_error(out.feats, target.clone());
        (tape, l)
    })
}

fn rpn_inputs(seed: u64) -> (ModelConfig, ParamStore, Rpn, Tensor, Tensor) {
    let cfg = grad_config();
    let (store, rpn) = store_with(|b| Rpn::build(b, &cfg));
    let mut r = rng(seed);
    let feats = rand_tensor(&mut r, cfg.n_points, cfg.channels, 1.0);
    let coords = rand_tensor(&mut r, cfg.n_points, 3, 2.0);
    (cfg, store, rpn, feats, coords)
}

fn rpn_run(tape: &mut Tape, s: &ParamStore, rpn: &Rpn, feats: &Tensor, coords: &Tensor) -> RpnVars {
    let f = tape.constant(feats.clone());
    rpn.forward(tape, s, f, coords)
}

/// Voting head: squared error against random targets on every output.
pub fn rpn_grad_check() -> Vec<GroupError> {
    let (cfg, store, rpn, feats, coords) = rpn_inputs(4);
    let mut r = rng(40);
    let n = cfg.n_points;
    let targets = [(n, 3), (n, 1), (n, 1), (1, 3), (1, 4), (1, 2)].map(|(a, b)| rand_tensor(&mut r, a, b, 1.0));
    fd_check(&store, |s| {
        let mut tape = Tape::new();
        let o = rpn_run(&mut tape, s, &rpn, &feats, &coords);
        let outs = [o.votes, o.mask_logits, o.target_logits, o.coarse_center, o.box4, o.alpha];
        let mut total = tape.squared_error(outs[0], targets[0].clone());
        for (v, t) in outs.iter().zip(&targets).skip(1) {
            let e = tape.squared_error(*v, t.clone());
            total = tape.add(total, e);
        }
        (tape, total)
    })
}

/// Five-term loss through the voting head, with and without foreground seeds.
pub fn loss_grad_check() -> Vec<GroupError> {
    let (cfg, store, rpn, feats, coords) = rpn_inputs(5);
    let gt = Box7::new([0.3, -0.2, 0.1], [1.6, 3.9, 1.5], 2.9);
    let alpha = ObservationAngle::from_radians(-0.7).as_array();
    let labels: Vec<f64> = (0..cfg.n_points).map(|i| (i % 3 == 0) as u8 as f64).collect();
    let none = vec![0.0; cfg.n_points];
    let mut errors = Vec::new();
    for l in [&labels, &none] {
        errors.extend(fd_check(&store, |s| {
            let mut tape = Tape::new();
            let o = rpn_run(&mut tape, s, &rpn, &feats, &coords);
            let (total, _) = loss_on_tape(&mut tape, &o, l, &gt, alpha, &cfg);
            (tape, total)
        }));
    }
    errors
}

/// Synthetic scene settings shared by the model-level tests.
pub fn synth(n_frames: usize, seed: u64) -> SynthConfig {
    SynthConfig { n_frames, seed, ..SynthConfig::default() }
}

pub fn tracklets(count: usize, n_frames: usize, seed: u64) -> Vec<Tracklet> {
    generate_dataset(&synth(n_frames, seed), count).unwrap()
}

/// Search sample around the ground truth of frame `i` of `t`.
pub fn sample_at(t: &Tracklet, i: usize, n_in: usize, offset: f64) -> SearchSample {
    let f = &t.frames[i];
    make_search_sample(&f.cloud, &f.gt_box, &f.gt_box, offset, offset, n_in, 7 + i as u64, &t.sensor_origin).unwrap()
}

/// Toy model used by the overfit runs: `C=64, N=64`.
pub fn overfit_model() -> ModelConfig {
    ModelConfig {
        n_points: 64,
        channels: 64,
        group_sizes: vec![16, 32, 16],
        contextual_counts: vec![2, 16, 8],
        n_input: 256,
        dropout: 0.0,
        ffn_hidden: 128,
        ..ModelConfig::default()
    }
}

/// 500 steps on 8 moving synthetic tracklets of 40 frames.
pub fn overfit_recipe() -> (TrainConfig, Vec<Tracklet>) {
    let tc = TrainConfig { steps: 500, center_jitter: 0.3, yaw_jitter: 0.3, log_every: 0, ..TrainConfig::default() };
    (tc, generate_dataset(&synth(40, 0), 8).unwrap())
}

/// 800 steps on one static synthetic tracklet of 20 frames.
pub fn static_recipe() -> (TrainConfig, Vec<Tracklet>) {
    let sc = SynthConfig { speed_range: [0.0, 0.0], yaw_rate_range: [0.0, 0.0], ..synth(20, 0) };
    let tc = TrainConfig { steps: 800, center_jitter: 0.05, yaw_jitter: 0.05, log_every: 0, ..TrainConfig::default() };
    (tc, generate_dataset(&sc, 1).unwrap())
}

/// Independent point-in-box test: rotate into the box frame by `-yaw`.
fn inside(b: &Box7, p: [f64; 3]) -> bool {
    let (s, c) = b.yaw.sin_cos();
    let (dx, dy) = (p[0] - b.cx, p[1] - b.cy);
    let (lx, ly) = (c * dx + s * dy, -s * dx + c * dy);
    lx.abs() <= b.l / 2.0 && ly.abs() <= b.w / 2.0 && (p[2] - b.cz).abs() <= b.h / 2.0
}

/// Horizontal half-extent of a box's footprint along x and y.
fn half_extent(b: &Box7) -> [f64; 2] {
    let (s, c) = b.yaw.sin_cos();
    [(c * b.l).abs() / 2.0 + (s * b.w).abs() / 2.0, (s * b.l).abs() / 2.0 + (c * b.w).abs() / 2.0]
}

/// Monte-Carlo IoU: uniform samples in the axis-aligned bounding box of the
/// union; intersection hits over union hits.
pub fn mc_iou(a: &Box7, b: &Box7, samples: usize, seed: u64) -> f64 {
    let (ea, eb) = (half_extent(a), half_extent(b));
    let lo = [(a.cx - ea[0]).min(b.cx - eb[0]), (a.cy - ea[1]).min(b.cy - eb[1]), (a.cz - a.h / 2.0).min(b.cz - b.h / 2.0)];
    let hi = [(a.cx + ea[0]).max(b.cx + eb[0]), (a.cy + ea[1]).max(b.cy + eb[1]), (a.cz + a.h / 2.0).max(b.cz + b.h / 2.0)];
    let mut r = rng(seed);
    let (mut both, mut any) = (0usize, 0usize);
    for _ in 0..samples {
        let p = [0, 1, 2].map(|d| r.random_range(lo[d]..hi[d]));
        let (ia, ib) = (inside(a, p), inside(b, p));
        both += (ia && ib) as usize;
        any += (ia || ib) as usize;
    }
    if any == 0 {
        0.0
    } else {
        both as f64 / any as f64
    }
}

/// Box pairs with overlaps spread over the whole IoU range, some disjoint.
pub fn random_box_pairs(count: usize, seed: u64) -> Vec<(Box7, Box7)> {
    let mut r = rng(seed);
    (0..count)
        .map(|_| {
            let mut b = || {
                let size = [r.random_range(0.4..3.0), r.random_range(0.4..5.0), r.random_range(0.4..2.5)];
                let c = [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-0.5..0.5)];
                Box7::new(c, size, r.random_range(-3.2..3.2))
            };
            (b(), b())
        })
        .collect()
}
