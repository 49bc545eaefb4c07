//! Plain-text report: key-value summary, per-category lines, a per-tracklet
//! table and the skipped tracklets.

use std::fmt::Write as _;

use super::OpeReport;

pub fn render_report(r: &OpeReport) -> String {
    let mut s = String::new();
    writeln!(s, "# one-pass evaluation").unwrap();
    writeln!(s, "success: {:.2}", r.success).unwrap();
    writeln!(s, "precision: {:.2}", r.precision).unwrap();
    writeln!(s, "frames: {}", r.frames).unwrap();
    writeln!(s, "tracklets: {}", r.tracklets.len()).unwrap();
    writeln!(s, "skipped: {}", r.skipped.len()).unwrap();
    match r.fps {
        Some(f) => writeln!(s, "fps: {f:.2}").unwrap(),
        None => writeln!(s, "fps: n/a").unwrap(),
    }
    writeln!(s, "empty_crops: {}", r.tracklets.iter().map(|t| t.empty_crops).sum::<usize>()).unwrap();
    writeln!(s).unwrap();
    writeln!(s, "category\tframes\tsuccess\tprecision").unwrap();
    for c in &r.categories {
        writeln!(s, "{}\t{}\t{:.2}\t{:.2}", c.category, c.frames, c.success, c.precision).unwrap();
    }
    writeln!(s).unwrap();
    writeln!(s, "tracklet\tcategory\tinterval\tframes\tsuccess\tprecision\tempty_crops").unwrap();
    for t in &r.tracklets {
        writeln!(
            s,
            "{}\t{}\t{}\t{}\t{:.2}\t{:.2}\t{}",
            t.name, t.category, t.interval, t.frames, t.success, t.precision, t.empty_crops
        )
        .unwrap();
    }
    if !r.skipped.is_empty() {
        writeln!(s).unwrap();
        writeln!(s, "skipped\tcategory\treason").unwrap();
        for k in &r.skipped {
            writeln!(s, "{}\t{}\t{}", k.name, k.category, k.reason).unwrap();
        }
    }
    s
}
