use approx::assert_abs_diff_eq;
use hvtrack::dataset::Category;
use hvtrack::evaluation::{evaluate, precision_curve, precision_score, success_curve, success_score, ThresholdGrid};
use hvtrack::geometry::Box7;
use hvtrack::tracker::TrackRun;
use proptest::prelude::*;

/// Success by closed form: a value `v > 0` clears the `ceil(20v)` thresholds below it.
fn success_oracle(ious: &[f64]) -> f64 {
    let hits: usize = ious.iter().map(|&v| if v <= 0.0 { 0 } else { ((20.0 * v).ceil() as usize).min(21) }).sum();
    100.0 * hits as f64 / (21 * ious.len()) as f64
}

/// Precision by closed form: a distance `d` is under the `20 - floor(10d)` thresholds above it.
fn precision_oracle(dists: &[f64]) -> f64 {
    let hits: usize = dists.iter().map(|&d| 20usize.saturating_sub((10.0 * d).floor() as usize)).sum();
    100.0 * hits as f64 / (21 * dists.len()) as f64
}

fn run(name: &str, category: Category, pred: Vec<Box7>, gt: Vec<Box7>, secs: f64) -> TrackRun {
    let n = gt.len();
    TrackRun {
        name: name.into(),
        category,
        interval: 1,
        frame_ids: (0..n as u32).collect(),
        predicted_boxes: pred,
        gt_boxes: gt,
        wall_times: vec![secs; n],
        empty_crops: Vec::new(),
        skipped: None,
    }
}

fn cube(x: f64) -> Box7 {
    Box7::new([x, 0.0, 0.0], [1.0; 3], 0.0)
}

#[test]
fn hand_computed_scores() {
    // 0.33 clears thresholds 0..=0.3 (7 of 21); 0.8 clears 0..=0.75 (16 of 21)
    assert_abs_diff_eq!(success_score(&[0.33, 0.8]).unwrap(), 100.0 * 23.0 / 42.0, epsilon = 1e-12);
    // 0.25 is under thresholds 0.3..=2 (18 of 21); 1.05 under 1.1..=2 (10 of 21)
    assert_abs_diff_eq!(precision_score(&[0.25, 1.05]).unwrap(), 100.0 * 28.0 / 42.0, epsilon = 1e-12);
}

#[test]
fn perfect_run_is_flat() {
    let s = success_curve(&[1.0; 7], ThresholdGrid::SUCCESS);
    assert!(s[..20].iter().all(|&v| v == 1.0));
    assert_eq!(s[20], 0.0);
    let p = precision_curve(&[0.0; 7], ThresholdGrid::PRECISION);
    assert_eq!(p[0], 0.0);
    assert!(p[1..].iter().all(|&v| v == 1.0));
}

#[test]
fn aggregate_weights_by_frames() {
    // one perfect frame, three disjoint frames 1.5 m off
    let a = run("a", Category::Car, vec![cube(0.0)], vec![cube(0.0)], 0.5);
    let b = run("b", Category::Van, vec![cube(1.5); 3], vec![cube(0.0); 3], 0.5);
    let r = evaluate(&[a, b]).unwrap();
    let (sa, sb) = (success_oracle(&[1.0]), success_oracle(&[0.0; 3]));
    let (pa, pb) = (precision_oracle(&[0.0]), precision_oracle(&[1.5; 3]));
    assert_abs_diff_eq!(r.success, (sa + 3.0 * sb) / 4.0, epsilon = 1e-12);
    assert_abs_diff_eq!(r.precision, (pa + 3.0 * pb) / 4.0, epsilon = 1e-12);
    assert_eq!(r.frames, 4);
    assert_eq!(r.categories.len(), 2);
    assert_abs_diff_eq!(r.fps.unwrap(), 2.0, epsilon = 1e-12);
}

#[test]
fn skipped_runs_are_listed_not_scored() {
    let a = run("a", Category::Car, vec![cube(0.0)], vec![cube(0.0)], 0.1);
    let mut s = run("s", Category::Car, vec![], vec![], 0.0);
    s.skipped = Some("empty search area at initialization".into());
    let r = evaluate(&[a.clone(), s.clone()]).unwrap();
    assert_eq!((r.tracklets.len(), r.skipped.len(), r.frames), (1, 1, 1));
    assert!(evaluate(&[s]).is_err());
    assert!(evaluate(&[]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn scores_match_counting_oracle(ious in prop::collection::vec(0.0..=1.0f64, 1..30), dists in prop::collection::vec(0.0..3.0f64, 1..30)) {
        prop_assert!((success_score(&ious).unwrap() - success_oracle(&ious)).abs() < 1e-9);
        prop_assert!((precision_score(&dists).unwrap() - precision_oracle(&dists)).abs() < 1e-9);
    }

    #[test]
    fn scores_are_monotone(ious in prop::collection::vec(0.0..=1.0f64, 1..30), i in any::<prop::sample::Index>(), up in 0.0..1.0f64) {
        let k = i.index(ious.len());
        let mut better = ious.clone();
        better[k] = (better[k] + up).min(1.0);
        prop_assert!(success_score(&better).unwrap() >= success_score(&ious).unwrap());
        // the same values read as distances: shrinking one cannot lower precision
        let mut closer = ious.clone();
        closer[k] *= 1.0 - up;
        prop_assert!(precision_score(&closer).unwrap() >= precision_score(&ious).unwrap());
    }

    #[test]
    fn scores_ignore_order(v in prop::collection::vec(0.0..=1.0f64, 1..30).prop_shuffle()) {
        let mut sorted = v.clone();
        sorted.sort_by(f64::total_cmp);
        prop_assert_eq!(success_score(&v).unwrap(), success_score(&sorted).unwrap());
        prop_assert_eq!(precision_score(&v).unwrap(), precision_score(&sorted).unwrap());
    }
}
