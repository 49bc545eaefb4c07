//! KITTI tracking layout:
//!
//! ```text
//! <root>/label_02/SSSS.txt
//! <root>/calib/SSSS.txt
//! <root>/velodyne/SSSS/FFFFFF.bin
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{Matrix3, Matrix4, Point3, Vector3};

use super::{Category, Frame, Tracklet};
use crate::error::{Error, Result};
use crate::geometry::{Box7, PointCloud};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
    All,
}

impl Split {
    pub fn contains(&self, sequence: u32) -> bool {
        match self {
            Split::Train => sequence <= 16,
            Split::Val => (17..=18).contains(&sequence),
            Split::Test => (19..=20).contains(&sequence),
            Split::All => true,
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "val" | "valid" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            "all" => Ok(Split::All),
            _ => Err(Error::UnknownSplit(s.to_string())),
        }
    }
}

/// One label line, camera-frame fields only.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelRow {
    pub frame: u32,
    pub track_id: i64,
    pub kind: String,
    pub h: f64,
    pub w: f64,
    pub l: f64,
    /// Bottom-center location in the rectified camera frame.
    pub location: [f64; 3],
    pub rotation_y: f64,
}

pub fn parse_labels(path: &Path, text: &str) -> Result<Vec<LabelRow>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse { path: path.to_path_buf(), line: i + 1, msg };
        if f.len() < 17 {
            return Err(err(format!("expected at least 17 fields, found {}", f.len())));
        }
        let num = |k: usize| f[k].parse::<f64>().map_err(|e| err(format!("field {k} `{}`: {e}", f[k])));
        rows.push(LabelRow {
            frame: f[0].parse().map_err(|e| err(format!("frame `{}`: {e}", f[0])))?,
            track_id: f[1].parse().map_err(|e| err(format!("track id `{}`: {e}", f[1])))?,
            kind: f[2].to_string(),
            h: num(10)?,
            w: num(11)?,
            l: num(12)?,
            location: [num(13)?, num(14)?, num(15)?],
            rotation_y: num(16)?,
        });
    }
    Ok(rows)
}

/// Velodyne-to-rectified-camera calibration.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub r0_rect: Matrix3<f64>,
    /// 3×4 rigid transform, padded to 4×4.
    pub velo_to_cam: Matrix4<f64>,
}

impl Calibration {
    /// Homogeneous transform from the rectified camera frame to the LiDAR frame.
    pub fn rect_to_velo(&self) -> Matrix4<f64> {
        let r0 = self.r0_rect.to_homogeneous();
        let rect_to_velo = (r0 * self.velo_to_cam).try_inverse();
        // calibration matrices are rigid up to rounding; inversion only fails on garbage input
        rect_to_velo.unwrap_or_else(Matrix4::identity)
    }

    /// Converts a camera-frame label box into a LiDAR-frame [`Box7`].
    pub fn label_to_box(&self, row: &LabelRow) -> Box7 {
        let m = self.rect_to_velo();
        let [x, y, z] = row.location;
        // the label location is the bottom face center; camera y points down
        let c = m.transform_point(&Point3::new(x, y - row.h / 2.0, z));
        let heading = m.transform_vector(&Vector3::new(row.rotation_y.cos(), 0.0, -row.rotation_y.sin()));
        Box7::new([c.x, c.y, c.z], [row.w, row.l, row.h], heading.y.atan2(heading.x))
    }
}

pub fn parse_calibration(path: &Path, text: &str) -> Result<Calibration> {
    let mut r0 = None;
    let mut tr = None;
    for (i, line) in text.lines().enumerate() {
        let mut words = line.split(|c: char| c.is_whitespace() || c == ':').filter(|w| !w.is_empty());
        let Some(key) = words.next() else { continue };
        let vals = || -> Result<Vec<f64>> {
            words
                .clone()
                .map(|w| w.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse { path: path.to_path_buf(), line: i + 1, msg: format!("{key}: {e}") })
        };
        let short = |n: usize, v: &[f64]| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: format!("{key}: expected {n} values, found {}", v.len()),
        };
        match key {
            "R0_rect" | "R_rect" => {
                let v = vals()?;
                if v.len() < 9 {
                    return Err(short(9, &v));
                }
                r0 = Some(Matrix3::from_row_slice(&v[..9]));
            }
            "Tr_velo_cam" | "Tr_velo_to_cam" => {
                let v = vals()?;
                if v.len() < 12 {
                    return Err(short(12, &v));
                }
                let mut m = Matrix4::identity();
                for r in 0..3 {
                    for c in 0..4 {
                        m[(r, c)] = v[r * 4 + c];
                    }
                }
                tr = Some(m);
            }
            _ => {}
        }
    }
    let missing = |what: &str| Error::Parse { path: path.to_path_buf(), line: 0, msg: format!("missing {what}") };
    Ok(Calibration {
        r0_rect: r0.ok_or_else(|| missing("R0_rect"))?,
        velo_to_cam: tr.ok_or_else(|| missing("Tr_velo_cam"))?,
    })
}

/// Reads a little-endian `f32` x, y, z, intensity binary; intensity is dropped.
pub fn read_velodyne(path: &Path) -> Result<PointCloud> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 16 != 0 {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: format!("size {} is not a multiple of 16 bytes", bytes.len()),
        });
    }
    let f = |c: &[u8]| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64;
    Ok(bytes
        .chunks_exact(16)
        .map(|c| Point3::new(f(&c[0..4]), f(&c[4..8]), f(&c[8..12])))
        .collect())
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn sequence_ids(label_dir: &Path) -> Result<Vec<u32>> {
    let mut ids: Vec<u32> = fs::read_dir(label_dir)
        .map_err(|e| Error::io(label_dir, e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let p = e.path();
            (p.extension()? == "txt").then_some(())?;
            p.file_stem()?.to_str()?.parse().ok()
        })
        .collect();
    ids.sort_unstable();
    Ok(ids)
}

/// One tracklet per `(sequence, track_id)` of `category` in `split`, with
/// boxes converted to the LiDAR frame.
pub fn load_kitti_tracklets(root: &Path, category: Category, split: Split) -> Result<Vec<Tracklet>> {
    if category == Category::Synthetic {
        return Err(Error::UnknownCategory(format!("{category} is not a KITTI category")));
    }
    let label_dir = root.join("label_02");
    let mut out = Vec::new();
    for seq in sequence_ids(&label_dir)?.into_iter().filter(|s| split.contains(*s)) {
        let label_path = label_dir.join(format!("{seq:04}.txt"));
        let rows = parse_labels(&label_path, &read_text(&label_path)?)?;
        let mut tracks: BTreeMap<i64, Vec<&LabelRow>> = BTreeMap::new();
        for r in rows.iter().filter(|r| r.kind == category.as_str() && r.track_id >= 0) {
            tracks.entry(r.track_id).or_default().push(r);
        }
        if tracks.is_empty() {
            continue;
        }
        let calib_path = root.join("calib").join(format!("{seq:04}.txt"));
        let calib = parse_calibration(&calib_path, &read_text(&calib_path)?)?;
        let mut clouds: HashMap<u32, Arc<PointCloud>> = HashMap::new();
        for (track_id, mut rows) in tracks {
            rows.sort_by_key(|r| r.frame);
            rows.dedup_by_key(|r| r.frame);
            let mut frames = Vec::with_capacity(rows.len());
            for r in rows {
                let cloud = match clouds.get(&r.frame) {
                    Some(c) => c.clone(),
                    None => {
                        let p: PathBuf = root.join("velodyne").join(format!("{seq:04}")).join(format!("{:06}.bin", r.frame));
                        let c = Arc::new(read_velodyne(&p)?);
                        clouds.insert(r.frame, c.clone());
                        c
                    }
                };
                frames.push(Frame { cloud, gt_box: calib.label_to_box(r), frame_id: r.frame });
            }
            out.push(Tracklet {
                name: format!("{seq:04}-{track_id}"),
                sequence: seq,
                category,
                frames,
                interval: 1,
                sensor_origin: Point3::origin(),
            });
        }
    }
    Ok(out)
}
