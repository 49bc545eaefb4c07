//! Line-oriented run records.
//!
//! ```text
//! # hvtrack runs v1
//! tracklet <name> <category> <interval> <frames> <empty crops|-> <skip reason|->
//! <frame_id> <7 predicted box fields> <7 ground-truth box fields> <wall seconds>
//! ```
//!
//! Fields are tab-separated; box fields are `cx cy cz w l h yaw`. Every
//! `tracklet` line is followed by exactly `<frames>` frame lines.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::Box7;
use crate::tracker::TrackRun;

pub const RECORDS_HEADER: &str = "# hvtrack runs v1";

pub fn render_runs(runs: &[TrackRun]) -> String {
    let mut s = String::from(RECORDS_HEADER);
    s.push('\n');
    for r in runs {
        let empty = if r.empty_crops.is_empty() {
            "-".to_string()
        } else {
            r.empty_crops.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(",")
        };
        let reason = r.skipped.as_deref().map(|x| x.replace(['\t', '\n'], " ")).unwrap_or_else(|| "-".into());
        writeln!(s, "tracklet\t{}\t{}\t{}\t{}\t{}\t{}", r.name, r.category, r.interval, r.len(), empty, reason).unwrap();
        for i in 0..r.len() {
            write!(s, "{}", r.frame_ids[i]).unwrap();
            for v in r.predicted_boxes[i].as_array().iter().chain(r.gt_boxes[i].as_array().iter()) {
                write!(s, "\t{v}").unwrap();
            }
            writeln!(s, "\t{}", r.wall_times[i]).unwrap();
        }
    }
    s
}

pub fn write_runs(path: &Path, runs: &[TrackRun]) -> Result<()> {
    std::fs::write(path, render_runs(runs)).map_err(|e| Error::io(path, e))
}

fn box_from(fields: &[f64]) -> Box7 {
    Box7 { cx: fields[0], cy: fields[1], cz: fields[2], w: fields[3], l: fields[4], h: fields[5], yaw: fields[6] }
}

/// Parses records; errors cite `path` and the 1-based line number.
pub fn parse_runs(path: &Path, text: &str) -> Result<Vec<TrackRun>> {
    let err = |line: usize, msg: String| Error::Parse { path: path.to_path_buf(), line, msg };
    let mut runs: Vec<TrackRun> = Vec::new();
    let mut expected = 0usize;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() || raw.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = raw.split('\t').collect();
        if f[0] == "tracklet" {
            if expected > 0 {
                return Err(err(line, format!("previous tracklet is missing {expected} frame lines")));
            }
            if f.len() != 7 {
                return Err(err(line, format!("tracklet line has {} fields, expected 7", f.len())));
            }
            let category = f[2].parse().map_err(|e: Error| err(line, e.to_string()))?;
            let interval = f[3].parse().map_err(|_| err(line, format!("bad interval `{}`", f[3])))?;
            expected = f[4].parse().map_err(|_| err(line, format!("bad frame count `{}`", f[4])))?;
            let empty_crops = if f[5] == "-" {
                Vec::new()
            } else {
                f[5].split(',').map(|x| x.parse().map_err(|_| err(line, format!("bad frame index `{x}`")))).collect::<Result<_>>()?
            };
            let skipped = (f[6] != "-").then(|| f[6].to_string());
            runs.push(TrackRun {
                name: f[1].to_string(),
                category,
                interval,
                frame_ids: Vec::with_capacity(expected),
                predicted_boxes: Vec::with_capacity(expected),
                gt_boxes: Vec::with_capacity(expected),
                wall_times: Vec::with_capacity(expected),
                empty_crops,
                skipped,
            });
            continue;
        }
        let Some(run) = runs.last_mut().filter(|_| expected > 0) else {
            return Err(err(line, "frame line outside a tracklet".into()));
        };
        if f.len() != 16 {
            return Err(err(line, format!("frame line has {} fields, expected 16", f.len())));
        }
        let id = f[0].parse().map_err(|_| err(line, format!("bad frame id `{}`", f[0])))?;
        let vals: Vec<f64> = f[1..]
            .iter()
            .map(|x| x.parse::<f64>().map_err(|_| err(line, format!("bad number `{x}`"))))
            .collect::<Result<_>>()?;
        run.frame_ids.push(id);
        run.predicted_boxes.push(box_from(&vals[0..7]));
        run.gt_boxes.push(box_from(&vals[7..14]));
        run.wall_times.push(vals[14]);
        expected -= 1;
    }
    if expected > 0 {
        return Err(err(text.lines().count(), format!("last tracklet is missing {expected} frame lines")));
    }
    Ok(runs)
}

pub fn read_runs(path: &Path) -> Result<Vec<TrackRun>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_runs(path, &text)
}
