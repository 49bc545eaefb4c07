//! Acceptance suite: every criterion runs at its stated tolerance and prints
//! one PASS/FAIL line. The process exits non-zero if any criterion failed.

mod common;

use std::f64::consts::FRAC_PI_4;
use std::time::{Duration, Instant};

use common::*;
use hvtrack::dataset::{build_hv, enlargement_offset, Category, Frame, Tracklet};
use hvtrack::evaluation::{evaluate, precision_score, success_score};
use hvtrack::geometry::{iou3d, wrap_angle, Box7, PointCloud, YawIsometry};
use hvtrack::model::params::Builder;
use hvtrack::model::rpm::Rpm;
use hvtrack::model::{checkpoint, ForwardCtx, ForwardOutput, HvTrackNet, MemoryState, ModelConfig, ParamStore, Tape};
use hvtrack::tracker::{run_tracklet, run_tracklets, TrackOptions};
use hvtrack::train::{train, StepLog};
use nalgebra::{Point3, Vector3};
use rand::seq::SliceRandom;
use rand::Rng;

const TWO_MINUTES: Duration = Duration::from_secs(120);

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

fn report(results: &mut Vec<(String, bool)>, name: &str, f: impl FnOnce() -> Outcome) {
    let start = Instant::now();
    let o = f();
    let verdict = if o.pass { "PASS" } else { "FAIL" };
    println!("{verdict} {name}: {} [{:.1}s]", o.detail, start.elapsed().as_secs_f64());
    results.push((name.to_string(), o.pass));
}

fn c1_gradients() -> Outcome {
    let start = Instant::now();
    let cfg = grad_config();
    let toy = (cfg.n_points, cfg.channels, cfg.heads, cfg.k_train) == (16, 8, 2, 1);
    let groups: Vec<(&str, Vec<GroupError>)> = vec![
        ("rpm", rpm_grad_check()),
        ("bea", bea_grad_check()),
        ("cpa", cpa_grad_check()),
        ("rpn", rpn_grad_check()),
        ("loss", loss_grad_check()),
    ];
    let elapsed = start.elapsed();
    let mut worst_all: f64 = 0.0;
    let mut parts = Vec::new();
    for (name, errs) in &groups {
        let w = worst(errs);
        worst_all = worst_all.max(w.rel);
        parts.push(format!("{name} {:.1e}", w.rel));
    }
    let pass = toy && worst_all <= 1e-4 && elapsed <= TWO_MINUTES;
    Outcome::new(pass, format!("worst relative error {worst_all:.2e} ({}), runtime {:.1}s", parts.join(", "), elapsed.as_secs_f64()))
}

fn c2_iou_oracle() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for (i, (a, b)) in random_box_pairs(200, 2024).iter().enumerate() {
        worst = worst.max((iou3d(a, b) - mc_iou(a, b, 1_000_000, 1000 + i as u64)).abs());
    }
    let elapsed = start.elapsed();
    let cube = Box7::new([0.0; 3], [1.0; 3], 0.0);
    let shifted = Box7::new([0.5, 0.0, 0.0], [1.0; 3], 0.0);
    let rotated = Box7 { yaw: FRAC_PI_4, ..cube };
    let car = Box7::new([3.0, -2.0, 0.4], [1.6, 3.9, 1.5], 0.7);
    let examples = (iou3d(&cube, &shifted) - 1.0 / 3.0).abs() <= 1e-3
        && (iou3d(&cube, &rotated) - 0.707).abs() <= 1e-3
        && iou3d(&car, &car) == 1.0;
    let pass = worst <= 5e-3 && examples && elapsed <= TWO_MINUTES;
    Outcome::new(
        pass,
        format!("max |iou - mc| {worst:.2e} over 200 pairs, worked examples {}, runtime {:.1}s", if examples { "hold" } else { "fail" }, elapsed.as_secs_f64()),
    )
}

fn r2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

fn c3_metrics() -> Outcome {
    let hand = r2(success_score(&[1.0; 5]).unwrap()) == 95.24
        && success_score(&[0.0; 5]).unwrap() == 0.0
        && r2(success_score(&[0.5]).unwrap()) == 47.62
        && r2(precision_score(&[0.0; 3]).unwrap()) == 95.24
        && precision_score(&[2.0, 3.5]).unwrap() == 0.0
        && r2(precision_score(&[1.0]).unwrap()) == 47.62;
    let mut r = rng(3);
    let (mut monotone, mut permutation) = (true, true);
    for _ in 0..1000 {
        let n = r.random_range(1..40);
        let v: Vec<f64> = (0..n).map(|_| r.random_range(0.0..1.0)).collect();
        let k = r.random_range(0..n);
        let up = r.random_range(0.0..1.0);
        let mut better = v.clone();
        better[k] = (better[k] + up).min(1.0);
        let mut closer = v.clone();
        closer[k] *= 1.0 - up;
        monotone &= success_score(&better).unwrap() >= success_score(&v).unwrap()
            && precision_score(&closer).unwrap() >= precision_score(&v).unwrap();
        let mut shuffled = v.clone();
        shuffled.shuffle(&mut r);
        permutation &= success_score(&shuffled).unwrap() == success_score(&v).unwrap()
            && precision_score(&shuffled).unwrap() == precision_score(&v).unwrap();
    }
    Outcome::new(hand && monotone && permutation, format!("hand values {hand}, monotone {monotone}, permutation invariant {permutation} over 1000 lists"))
}

fn straight(n: usize) -> Tracklet {
    let cloud = std::sync::Arc::new(PointCloud::default());
    Tracklet {
        name: "t".into(),
        sequence: 0,
        category: Category::Car,
        frames: (0..n)
            .map(|i| Frame { cloud: cloud.clone(), gt_box: Box7::new([i as f64, 0.0, 0.0], [1.6, 3.9, 1.5], 0.0), frame_id: i as u32 })
            .collect(),
        interval: 1,
        sensor_origin: Point3::origin(),
    }
}

fn c4_hv_builder() -> Outcome {
    let source = vec![straight(100), straight(100)];
    let mut ok = build_hv(&source, 1).unwrap() == source;
    for k in [2usize, 3, 5, 10] {
        let hv = build_hv(&source, k).unwrap();
        let frames: usize = hv.iter().map(Tracklet::len).sum();
        ok &= hv.len() == 2 * k && frames == 200;
        for (j, t) in hv.iter().enumerate() {
            let start = (j % k) as u32;
            let expect: Vec<u32> = (start..100).step_by(k).collect();
            ok &= t.frames.iter().map(|f| f.frame_id).collect::<Vec<_>>() == expect;
        }
    }
    Outcome::new(ok, "frame conservation and strides for intervals {2,3,5,10}; interval 1 is the identity")
}

fn c5_offsets() -> Outcome {
    let table: [(usize, [f64; 4]); 5] = [
        (1, [2.0, 2.0, 2.0, 2.0]),
        (2, [2.0, 2.0, 3.0, 2.0]),
        (3, [3.0, 2.0, 3.0, 2.0]),
        (5, [4.0, 2.0, 5.0, 3.0]),
        (10, [7.0, 3.0, 8.0, 4.0]),
    ];
    let mut matched = 0;
    for (k, row) in table {
        for (cat, v) in Category::KITTI.iter().zip(row) {
            matched += (enlargement_offset(*cat, k).unwrap() == v) as usize;
        }
    }
    Outcome::new(matched == 20, format!("{matched}/20 cells match"))
}

fn template_and_search(n_in: usize) -> (hvtrack::dataset::SearchSample, hvtrack::dataset::SearchSample) {
    let t = &tracklets(1, 2, 11)[0];
    let offset = enlargement_offset(t.category, 1).unwrap();
    (sample_at(t, 0, n_in, offset), sample_at(t, 1, n_in, offset))
}

fn forward_once(cfg: &ModelConfig) -> ForwardOutput {
    let net = HvTrackNet::new(cfg.clone(), 1).unwrap();
    let (template, search) = template_and_search(cfg.n_input);
    let mut memory = MemoryState::new(cfg.k_train);
    for _ in 0..cfg.k_train {
        memory.push(net.bootstrap_entry(&template, template.gt_alpha).unwrap());
    }
    net.forward(&search, &memory, &mut ForwardCtx::eval()).unwrap()
}

fn rows_stochastic(t: &hvtrack::model::Tensor) -> bool {
    (0..t.rows).all(|r| (t.row(r).iter().sum::<f64>() - 1.0).abs() <= 1e-5)
}

fn c6_shapes() -> Outcome {
    let cfg = ModelConfig::default();
    let defaults = (cfg.n_points, cfg.channels, cfg.layers, cfg.heads, cfg.k_train) == (128, 128, 2, 4, 2);
    let out = forward_once(&cfg);
    let mut ok = defaults;
    for b in &out.bundles {
        ok &= b.attn_base.shape() == (128, 256) && b.attn_expan.shape() == (128, 32);
        ok &= rows_stochastic(&b.attn_base) && rows_stochastic(&b.attn_expan);
    }
    ok &= out.key_lens.iter().all(|&l| l == 52) && cfg.total_contextual() == 52;

    let net = HvTrackNet::new(cfg.clone(), 1).unwrap();
    let (template, _) = template_and_search(cfg.n_input);
    let mut memory = MemoryState::new(2);
    for _ in 0..2 {
        memory.push(net.bootstrap_entry(&template, template.gt_alpha).unwrap());
    }
    let mut store = ParamStore::new();
    let mut r = rng(2);
    let rpm = Rpm::build(&mut Builder::new(&mut store, &mut r), &cfg);
    let mut tape = Tape::new();
    let bank = memory.layer_bank(&mut tape, 0).unwrap();
    let pe = tape.constant(rand_tensor(&mut r, 256, 128, 1.0));
    let mem = rpm.forward(&mut tape, &store, &bank, pe, &cfg, &mut ForwardCtx::eval());
    let mem_shape = tape.value(mem).shape();
    ok &= mem_shape == (256, 128);
    Outcome::new(ok, format!("Mem {mem_shape:?}, Attn_base (128, 256), Attn_expan (128, 32), contextual points {:?}", out.key_lens))
}

fn train_logged(net: &mut HvTrackNet, data: &[Tracklet], tc: &hvtrack::train::TrainConfig) -> (Vec<StepLog>, f64) {
    let start = Instant::now();
    let logs = train(net, data, tc, |_| {}).unwrap();
    (logs, start.elapsed().as_secs_f64())
}

fn c7_overfit(net: &mut HvTrackNet, logs: &mut Vec<StepLog>) -> Outcome {
    let (tc, data) = overfit_recipe();
    let cfg = net.config().clone();
    let (l, train_secs) = train_logged(net, &data, &tc);
    *logs = l;
    let start = Instant::now();
    let runs = run_tracklets(net, &data, &TrackOptions::for_model(net)).unwrap();
    let r = evaluate(&runs).unwrap();
    let total = train_secs + start.elapsed().as_secs_f64();
    let shape_ok = (cfg.channels, cfg.n_points, data.len()) == (64, 64, 8) && tc.steps <= 500;
    let pass = shape_ok && r.success >= 60.0 && r.precision >= 70.0 && total <= 600.0;
    Outcome::new(pass, format!("Success {:.2}, Precision {:.2} after {} steps; train {train_secs:.0}s, total {total:.0}s", r.success, r.precision, tc.steps))
}

fn loss_drop(logs: &[StepLog]) -> Outcome {
    let first = logs[0].loss.total;
    let tail = logs[logs.len() - 20..].iter().map(|l| l.loss.total).sum::<f64>() / 20.0;
    let ratio = tail / first;
    Outcome::new(ratio < 0.1, format!("initial {first:.3}, mean of last 20 steps {tail:.3} ({:.1}% of initial)", 100.0 * ratio))
}

fn static_scene() -> Outcome {
    let (tc, data) = static_recipe();
    let mut net = HvTrackNet::new(overfit_model(), 1).unwrap();
    train_logged(&mut net, &data, &tc);
    let run = run_tracklet(&net, &data[0], &TrackOptions::for_model(&net)).unwrap();
    let ious: Vec<f64> = run.predicted_boxes.iter().zip(&run.gt_boxes).map(|(p, g)| iou3d(p, g)).collect();
    let min = ious.iter().copied().fold(f64::INFINITY, f64::min);
    Outcome::new(min >= 0.9, format!("minimum per-frame IoU {min:.3} over {} frames", ious.len()))
}

fn c8_ablations() -> Outcome {
    let toy = ModelConfig::toy();
    let (n, k) = (toy.n_points, toy.k_train);
    let data = tracklets(1, 4, 8);
    let mut ok = true;
    let mut details = Vec::new();
    for (name, cfg) in [
        ("use_bea=false", ModelConfig { use_bea: false, ..toy.clone() }),
        ("use_cpa=false", ModelConfig { use_cpa: false, ..toy.clone() }),
        ("use_om=false", ModelConfig { use_om: false, ..toy.clone() }),
    ] {
        let net = HvTrackNet::new(cfg.clone(), 3).unwrap();
        let ran = run_tracklet(&net, &data[0], &TrackOptions::for_model(&net)).is_ok_and(|r| r.len() == 4);
        let out = forward_once(&cfg);
        let shapes = out.bundles.iter().all(|b| b.attn_base.shape() == (n, k * n) && b.attn_expan.shape() == (n, k * n / 8));
        let keys = if cfg.use_cpa { toy.total_contextual() } else { n };
        let key_ok = out.key_lens.iter().all(|&l| l == keys);
        ok &= ran && shapes && key_ok;
        details.push(format!("{name} keys {keys}"));
    }
    // with use_om=false the angle bank has no effect on the output
    let cfg = ModelConfig { use_om: false, ..toy };
    let net = HvTrackNet::new(cfg.clone(), 3).unwrap();
    let (template, search) = template_and_search(cfg.n_input);
    let outs: Vec<_> = [0.2, 2.9]
        .iter()
        .map(|&a| {
            let mut m = MemoryState::new(1);
            m.push(net.bootstrap_entry(&template, hvtrack::geometry::ObservationAngle::from_radians(a)).unwrap());
            net.forward(&search, &m, &mut ForwardCtx::eval()).unwrap().prediction
        })
        .collect();
    ok &= outs[0] == outs[1];
    Outcome::new(ok, format!("{}; OM-ablated output independent of alpha", details.join(", ")))
}

fn c9_memory_sweep(net: &HvTrackNet) -> Outcome {
    let data = tracklets(2, 20, 40);
    let mut ok = net.config().k_train == 2;
    let mut fps = Vec::new();
    for k in 1..=8 {
        let start = Instant::now();
        match run_tracklets(net, &data, &TrackOptions { k_test: k, ..TrackOptions::default() }) {
            Ok(runs) => {
                let frames: usize = runs.iter().map(|r| r.len()).sum();
                fps.push(format!("K={k} {:.0}", frames as f64 / start.elapsed().as_secs_f64()));
            }
            Err(e) => {
                ok = false;
                fps.push(format!("K={k} error {e}"));
            }
        }
    }
    Outcome::new(ok, format!("fps: {}", fps.join(", ")))
}

fn c10_determinism(net: &HvTrackNet) -> Outcome {
    let data = tracklets(2, 10, 50);
    let opts = TrackOptions::for_model(net);
    let a = run_tracklets(net, &data, &opts).unwrap();
    let b = run_tracklets(net, &data, &opts).unwrap();
    let repeat = a.iter().zip(&b).all(|(x, y)| x.predicted_boxes == y.predicted_boxes);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    checkpoint::save(net, &path).unwrap();
    let back = checkpoint::load(&path, Some(net.config())).unwrap();
    let c = run_tracklets(&back, &data, &opts).unwrap();
    let persisted = a.iter().zip(&c).all(|(x, y)| x.predicted_boxes == y.predicted_boxes);

    let iso = YawIsometry::new(Vector3::new(-23.0, 41.5, 1.2), -2.3);
    let mut moved = data[0].clone();
    for f in moved.frames.iter_mut() {
        f.cloud = std::sync::Arc::new(f.cloud.points.iter().map(|p| iso.apply(p)).collect());
        f.gt_box = iso.apply_box(&f.gt_box);
    }
    moved.sensor_origin = iso.apply(&data[0].sensor_origin);
    let m = run_tracklet(net, &moved, &opts).unwrap();
    let mut worst: f64 = 0.0;
    for (p, q) in a[0].predicted_boxes.iter().zip(&m.predicted_boxes) {
        let t = iso.apply_box(p);
        worst = worst.max((t.center() - q.center()).norm()).max(wrap_angle(t.yaw - q.yaw).abs());
    }
    let pass = repeat && persisted && worst <= 1e-5;
    Outcome::new(pass, format!("repeat runs identical {repeat}, checkpoint reload identical {persisted}, equivariance error {worst:.1e}"))
}

fn main() {
    let mut results = Vec::new();
    report(&mut results, "1 gradient suite", c1_gradients);
    report(&mut results, "2 IoU oracle", c2_iou_oracle);
    report(&mut results, "3 metric oracle", c3_metrics);
    report(&mut results, "4 HV builder", c4_hv_builder);
    report(&mut results, "5 offset table", c5_offsets);
    report(&mut results, "6 shape contract", c6_shapes);
    let mut net = HvTrackNet::new(overfit_model(), 1).unwrap();
    let mut logs = Vec::new();
    report(&mut results, "7 synthetic overfit", || c7_overfit(&mut net, &mut logs));
    report(&mut results, "7a overfit loss below 10% of initial", || loss_drop(&logs));
    report(&mut results, "7b static scene IoU >= 0.9", static_scene);
    report(&mut results, "8 ablation parity", c8_ablations);
    report(&mut results, "9 memory-size sweep", || c9_memory_sweep(&net));
    report(&mut results, "10 determinism and persistence", || c10_determinism(&net));
    let failed: Vec<&str> = results.iter().filter(|(_, p)| !p).map(|(n, _)| n.as_str()).collect();
    println!("{} of {} criteria passed", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
