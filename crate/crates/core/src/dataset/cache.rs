//! On-disk tracklet cache shared by the KITTI-HV builder and the synthetic
//! generator.
//!
//! A cache is a directory holding `index.txt` and `frames/NNNNNN.bin`.
//! The index has `#` comment lines and one whitespace-separated line per
//! tracklet:
//!
//! ```text
//! name category sequence interval sensor_x sensor_y sensor_z frame_id,frame_id,...
//! ```
//!
//! Line `i` (counting only tracklet lines from 0) owns `frames/{i:06}.bin`:
//! the magic `HVTFRM01`, a `u32` frame count, then per frame a `u32`
//! frame id, seven `f64` box fields `(cx, cy, cz, w, l, h, yaw)`, a `u32`
//! point count and that many `f32` x, y, z triples. All little-endian.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::Point3;

use super::{Category, Frame, Tracklet};
use crate::error::{Error, Result};
use crate::geometry::{Box7, PointCloud};

pub const INDEX_FILE: &str = "index.txt";
const MAGIC: &[u8; 8] = b"HVTFRM01";

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub name: String,
    pub category: Category,
    pub sequence: u32,
    pub interval: usize,
    pub sensor_origin: Point3<f64>,
    pub frame_ids: Vec<u32>,
}

fn frame_path(dir: &Path, i: usize) -> PathBuf {
    dir.join("frames").join(format!("{i:06}.bin"))
}

/// Writes `tracklets` to `dir`. With `keep_radius`, only points within that
/// horizontal distance of each frame's box center are stored.
pub fn write_cache(dir: &Path, tracklets: &[Tracklet], keep_radius: Option<f64>) -> Result<()> {
    fs::create_dir_all(dir.join("frames")).map_err(|e| Error::io(dir, e))?;
    let mut index = String::from("# hvtrack tracklet cache v1\n");
    index.push_str("# name category sequence interval sensor_x sensor_y sensor_z frame_ids\n");
    for (i, t) in tracklets.iter().enumerate() {
        if t.name.contains(char::is_whitespace) {
            return Err(Error::Config(format!("tracklet name `{}` contains whitespace", t.name)));
        }
        let ids: Vec<String> = t.frames.iter().map(|f| f.frame_id.to_string()).collect();
        let o = t.sensor_origin;
        index.push_str(&format!(
            "{} {} {} {} {} {} {} {}\n",
            t.name,
            t.category,
            t.sequence,
            t.interval,
            o.x,
            o.y,
            o.z,
            ids.join(",")
        ));
        write_frames(&frame_path(dir, i), t, keep_radius)?;
    }
    let p = dir.join(INDEX_FILE);
    fs::write(&p, index).map_err(|e| Error::io(&p, e))
}

fn write_frames(path: &Path, t: &Tracklet, keep_radius: Option<f64>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(io);
    put(MAGIC)?;
    put(&(t.frames.len() as u32).to_le_bytes())?;
    for f in &t.frames {
        put(&f.frame_id.to_le_bytes())?;
        for v in f.gt_box.as_array() {
            put(&v.to_le_bytes())?;
        }
        let keep = |p: &&Point3<f64>| {
            keep_radius.is_none_or(|r| (p.x - f.gt_box.cx).hypot(p.y - f.gt_box.cy) <= r)
        };
        let pts: Vec<&Point3<f64>> = f.cloud.points.iter().filter(keep).collect();
        put(&(pts.len() as u32).to_le_bytes())?;
        for p in pts {
            for v in [p.x, p.y, p.z] {
                put(&(v as f32).to_le_bytes())?;
            }
        }
    }
    w.flush().map_err(io)
}

pub fn read_index(dir: &Path) -> Result<Vec<IndexEntry>> {
    let path = dir.join(INDEX_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::Parse { path: path.clone(), line: i + 1, msg };
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 8 {
            return Err(err(format!("expected 8 fields, found {}", f.len())));
        }
        let num = |k: usize| f[k].parse::<f64>().map_err(|e| err(format!("field {k}: {e}")));
        let frame_ids = f[7]
            .split(',')
            .map(|s| s.parse::<u32>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| err(format!("frame ids: {e}")))?;
        out.push(IndexEntry {
            name: f[0].to_string(),
            category: f[1].parse().map_err(|e: Error| err(e.to_string()))?,
            sequence: f[2].parse().map_err(|e| err(format!("sequence: {e}")))?,
            interval: f[3].parse().map_err(|e| err(format!("interval: {e}")))?,
            sensor_origin: Point3::new(num(4)?, num(5)?, num(6)?),
            frame_ids,
        });
    }
    Ok(out)
}

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        let s = self.bytes.get(self.pos..end).ok_or_else(|| Error::Parse {
            path: self.path.to_path_buf(),
            line: 0,
            msg: format!("truncated at byte {}", self.pos),
        })?;
        self.pos = end;
        Ok(s.try_into().expect("slice length"))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take()?))
    }
}

fn read_frames(path: &Path, entry: &IndexEntry) -> Result<Vec<Frame>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader { path, bytes: &bytes, pos: 0 };
    let bad = |msg: String| Error::Parse { path: path.to_path_buf(), line: 0, msg };
    if &r.take::<8>()? != MAGIC {
        return Err(bad("bad magic".into()));
    }
    let n = r.u32()? as usize;
    if n != entry.frame_ids.len() {
        return Err(bad(format!("{n} frames but the index lists {}", entry.frame_ids.len())));
    }
    let mut frames = Vec::with_capacity(n);
    for expected in &entry.frame_ids {
        let frame_id = r.u32()?;
        if frame_id != *expected {
            return Err(bad(format!("frame id {frame_id} does not match index ({expected})")));
        }
        let mut b = [0.0; 7];
        for v in b.iter_mut() {
            *v = r.f64()?;
        }
        let count = r.u32()? as usize;
        let mut pts = Vec::with_capacity(count);
        for _ in 0..count {
            let (x, y, z) = (r.f32()?, r.f32()?, r.f32()?);
            pts.push(Point3::new(x as f64, y as f64, z as f64));
        }
        frames.push(Frame { cloud: Arc::new(PointCloud::new(pts)), gt_box: Box7::from_array(b), frame_id });
    }
    Ok(frames)
}

pub fn read_cache(dir: &Path) -> Result<Vec<Tracklet>> {
    read_index(dir)?
        .into_iter()
        .enumerate()
        .map(|(i, e)| {
            let frames = read_frames(&frame_path(dir, i), &e)?;
            Ok(Tracklet {
                name: e.name,
                sequence: e.sequence,
                category: e.category,
                frames,
                interval: e.interval,
                sensor_origin: e.sensor_origin,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{build_hv, toy_tracklet};

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = toy_tracklet(7, 0.5);
        for f in t.frames.iter_mut() {
            f.cloud = Arc::new(PointCloud::new(vec![Point3::new(f.gt_box.cx, 0.25, -1.0), Point3::new(90.0, 0.0, 0.0)]));
        }
        let hv = build_hv(&[t], 3).unwrap();
        write_cache(dir.path(), &hv, Some(20.0)).unwrap();
        let back = read_cache(dir.path()).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in hv.iter().zip(&back) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.frame_ids(), b.frame_ids());
            assert_eq!(b.interval, 3);
            for (fa, fb) in a.frames.iter().zip(&b.frames) {
                assert_eq!(fa.gt_box, fb.gt_box);
                assert_eq!(fb.cloud.len(), 1);
                assert_eq!(fb.cloud.points[0], fa.cloud.points[0]);
            }
        }
        let idx = read_index(dir.path()).unwrap();
        assert_eq!(idx[0].frame_ids, vec![0, 3, 6]);
    }

    #[test]
    fn corrupt_index_names_line() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(INDEX_FILE), "# header\nbad line\n").unwrap();
        let e = read_index(dir.path()).unwrap_err().to_string();
        assert!(e.contains("index.txt:2"), "{e}");
    }
}
