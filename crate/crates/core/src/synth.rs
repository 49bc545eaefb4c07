//! Synthetic LiDAR-like tracklets.
//!
//! Objects are boxes whose surface points are sampled once per object (a fixed
//! pattern on every face) and, each frame, culled to the faces that point
//! toward the sensor. The observed shape of the target therefore changes with
//! its pose relative to the sensor. Distractors are same-sized boxes on their
//! own trajectories; clutter is fresh ground-level noise every frame.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Category, Frame, Tracklet};
use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Box7, PointCloud, YawIsometry};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_frames: usize,
    /// `(w, l, h)` in meters.
    pub target_size: [f64; 3],
    /// Meters per frame, drawn uniformly per object.
    pub speed_range: [f64; 2],
    /// Radians per frame, drawn uniformly per object with a random sign.
    pub yaw_rate_range: [f64; 2],
    pub n_distractors: usize,
    /// Ground clutter points per square meter of arena.
    pub clutter_density: f64,
    /// Surface points per square meter of box face (before culling).
    pub surface_point_density: f64,
    pub seed: u64,
    /// Per-frame Gaussian jitter on speed, relative to the object's speed.
    pub velocity_jitter: f64,
    /// Per-frame Gaussian jitter on heading in radians, scaled by the speed
    /// fraction of `speed_range[1]` so static objects stay static.
    pub heading_jitter: f64,
    pub sensor_origin: [f64; 3],
    pub ground_z: f64,
    pub clutter_height: f64,
    /// `[x_min, x_max, y_min, y_max]`; trajectories reflect off the bounds.
    pub arena: [f64; 4],
    pub max_range: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_frames: 40,
            target_size: [1.6, 3.9, 1.5],
            speed_range: [0.3, 1.0],
            yaw_rate_range: [0.0, 0.05],
            n_distractors: 2,
            clutter_density: 0.3,
            surface_point_density: 20.0,
            seed: 0,
            velocity_jitter: 0.05,
            heading_jitter: 0.02,
            sensor_origin: [0.0, 0.0, 0.0],
            ground_z: -1.73,
            clutter_height: 0.3,
            arena: [6.0, 40.0, -17.0, 17.0],
            max_range: 70.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synth: {m}")));
        if self.n_frames < 2 {
            return bad("n_frames must be at least 2");
        }
        if self.clutter_density <= 0.0 || self.surface_point_density <= 0.0 {
            return bad("densities must be positive");
        }
        if self.target_size.iter().any(|v| *v <= 0.0) {
            return bad("target_size must be positive");
        }
        if self.speed_range[0] < 0.0 || self.speed_range[0] > self.speed_range[1] {
            return bad("speed_range must satisfy 0 <= min <= max");
        }
        if self.yaw_rate_range[0] > self.yaw_rate_range[1] {
            return bad("yaw_rate_range must satisfy min <= max");
        }
        let [x0, x1, y0, y1] = self.arena;
        if x0 >= x1 || y0 >= y1 {
            return bad("arena bounds are empty");
        }
        Ok(())
    }

    fn sensor(&self) -> Point3<f64> {
        Point3::from(self.sensor_origin)
    }
}

/// Box face by outward normal in the box frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Face {
    Front,
    Back,
    Left,
    Right,
    Top,
    Bottom,
}

impl Face {
    pub const ALL: [Face; 6] = [Face::Front, Face::Back, Face::Left, Face::Right, Face::Top, Face::Bottom];

    pub fn local_normal(&self) -> Vector3<f64> {
        match self {
            Face::Front => Vector3::x(),
            Face::Back => -Vector3::x(),
            Face::Left => Vector3::y(),
            Face::Right => -Vector3::y(),
            Face::Top => Vector3::z(),
            Face::Bottom => -Vector3::z(),
        }
    }

    fn world_normal(&self, b: &Box7) -> Vector3<f64> {
        let n = self.local_normal();
        let (s, c) = b.yaw.sin_cos();
        Vector3::new(c * n.x - s * n.y, s * n.x + c * n.y, n.z)
    }

    /// Area for a box of size `(w, l, h)`.
    fn area(&self, [w, l, h]: [f64; 3]) -> f64 {
        match self {
            Face::Front | Face::Back => w * h,
            Face::Left | Face::Right => l * h,
            Face::Top | Face::Bottom => w * l,
        }
    }

    /// Point on the face of a box of size `(w, l, h)` from two unit parameters.
    fn local_point(&self, [w, l, h]: [f64; 3], u: f64, v: f64) -> Point3<f64> {
        let (a, b) = (u - 0.5, v - 0.5);
        match self {
            Face::Front => Point3::new(l / 2.0, a * w, b * h),
            Face::Back => Point3::new(-l / 2.0, a * w, b * h),
            Face::Left => Point3::new(a * l, w / 2.0, b * h),
            Face::Right => Point3::new(a * l, -w / 2.0, b * h),
            Face::Top => Point3::new(a * l, b * w, h / 2.0),
            Face::Bottom => Point3::new(a * l, b * w, -h / 2.0),
        }
    }
}

/// A face is visible when the sensor lies strictly on its outer side.
pub fn face_visible(b: &Box7, face: Face, point: &Point3<f64>, sensor: &Point3<f64>) -> bool {
    face.world_normal(b).dot(&(sensor - point)) > 0.0
}

/// Faces whose center is visible from `sensor`.
pub fn visible_faces(b: &Box7, sensor: &Point3<f64>) -> Vec<Face> {
    let iso = YawIsometry::of_box(b);
    Face::ALL
        .into_iter()
        .filter(|f| face_visible(b, *f, &iso.apply(&f.local_point(b.size(), 0.5, 0.5)), sensor))
        .collect()
}

struct SurfacePattern(Vec<(Face, Point3<f64>)>);

impl SurfacePattern {
    fn sample(size: [f64; 3], density: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut pts = Vec::new();
        for face in Face::ALL {
            let n = (face.area(size) * density).round().max(1.0) as usize;
            for _ in 0..n {
                let (u, v) = (rng.random::<f64>(), rng.random::<f64>());
                pts.push((face, face.local_point(size, u, v)));
            }
        }
        Self(pts)
    }

    fn observe(&self, b: &Box7, sensor: &Point3<f64>, max_range: f64, out: &mut Vec<Point3<f64>>) {
        let iso = YawIsometry::of_box(b);
        for (face, p) in &self.0 {
            let w = iso.apply(p);
            if face_visible(b, *face, &w, sensor) && (w - sensor).norm() <= max_range {
                out.push(w);
            }
        }
    }
}

struct Mover {
    pos: [f64; 2],
    heading: f64,
    speed: f64,
    yaw_rate: f64,
}

impl Mover {
    fn new(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Self {
        let [x0, x1, y0, y1] = cfg.arena;
        let pos = [x0 + rng.random::<f64>() * (x1 - x0), y0 + rng.random::<f64>() * (y1 - y0)];
        let heading = rng.random_range(-PI..PI);
        let [s0, s1] = cfg.speed_range;
        let speed = s0 + rng.random::<f64>() * (s1 - s0);
        let [r0, r1] = cfg.yaw_rate_range;
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let yaw_rate = sign * (r0 + rng.random::<f64>() * (r1 - r0));
        Self { pos, heading, speed, yaw_rate }
    }

    fn boxed(&self, cfg: &SynthConfig) -> Box7 {
        let [w, l, h] = cfg.target_size;
        Box7::new([self.pos[0], self.pos[1], cfg.ground_z + h / 2.0], [w, l, h], self.heading)
    }

    fn advance(&mut self, cfg: &SynthConfig, rng: &mut ChaCha8Rng) {
        let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
        let (n1, n2): (f64, f64) = (std_normal.sample(rng), std_normal.sample(rng));
        let rel = if cfg.speed_range[1] > 0.0 { self.speed / cfg.speed_range[1] } else { 0.0 };
        self.heading += self.yaw_rate + cfg.heading_jitter * rel * n1;
        let step = (self.speed * (1.0 + cfg.velocity_jitter * n2)).max(0.0);
        let [x0, x1, y0, y1] = cfg.arena;
        let mut x = self.pos[0] + step * self.heading.cos();
        let mut y = self.pos[1] + step * self.heading.sin();
        if x < x0 || x > x1 {
            x = if x < x0 { 2.0 * x0 - x } else { 2.0 * x1 - x };
            self.heading = PI - self.heading;
        }
        if y < y0 || y > y1 {
            y = if y < y0 { 2.0 * y0 - y } else { 2.0 * y1 - y };
            self.heading = -self.heading;
        }
        self.heading = wrap_angle(self.heading);
        self.pos = [x, y];
    }
}

/// Generates one tracklet; a pure function of `cfg`.
pub fn generate_sequence(cfg: &SynthConfig) -> Result<Tracklet> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sensor = cfg.sensor();
    let mut target = Mover::new(cfg, &mut rng);
    let target_surface = SurfacePattern::sample(cfg.target_size, cfg.surface_point_density, &mut rng);
    let mut distractors: Vec<(Mover, SurfacePattern)> = (0..cfg.n_distractors)
        .map(|_| {
            let m = Mover::new(cfg, &mut rng);
            (m, SurfacePattern::sample(cfg.target_size, cfg.surface_point_density, &mut rng))
        })
        .collect();
    let [x0, x1, y0, y1] = cfg.arena;
    let n_clutter = (cfg.clutter_density * (x1 - x0) * (y1 - y0)).round() as usize;

    let mut frames = Vec::with_capacity(cfg.n_frames);
    for t in 0..cfg.n_frames {
        if t > 0 {
            target.advance(cfg, &mut rng);
            for (d, _) in distractors.iter_mut() {
                d.advance(cfg, &mut rng);
            }
        }
        let gt = target.boxed(cfg);
        let mut pts = Vec::new();
        target_surface.observe(&gt, &sensor, cfg.max_range, &mut pts);
        let mut boxes = vec![gt];
        for (d, s) in &distractors {
            let b = d.boxed(cfg);
            s.observe(&b, &sensor, cfg.max_range, &mut pts);
            boxes.push(b);
        }
        for _ in 0..n_clutter {
            let p = Point3::new(
                x0 + rng.random::<f64>() * (x1 - x0),
                y0 + rng.random::<f64>() * (y1 - y0),
                cfg.ground_z + rng.random::<f64>() * cfg.clutter_height,
            );
            if !boxes.iter().any(|b| b.contains(&p)) {
                pts.push(p);
            }
        }
        frames.push(Frame { cloud: Arc::new(PointCloud::new(pts)), gt_box: gt, frame_id: t as u32 });
    }
    Ok(Tracklet {
        name: format!("synth-{}", cfg.seed),
        sequence: 0,
        category: Category::Synthetic,
        frames,
        interval: 1,
        sensor_origin: sensor,
    })
}

/// `count` tracklets with seeds `cfg.seed, cfg.seed + 1, …`.
pub fn generate_dataset(cfg: &SynthConfig, count: usize) -> Result<Vec<Tracklet>> {
    (0..count)
        .map(|i| {
            let c = SynthConfig { seed: cfg.seed.wrapping_add(i as u64), ..cfg.clone() };
            let mut t = generate_sequence(&c)?;
            t.sequence = i as u32;
            Ok(t)
        })
        .collect()
}
