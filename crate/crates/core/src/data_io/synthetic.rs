//! Moving-shapes videos with exactly known rigid motion.

use std::f64::consts::PI;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::VideoSequence;
use crate::diffarray::Array;
use crate::error::{Error, Result};
use crate::warp::FlowField;

/// Largest cumulative scale an object may reach; also sets the wall margin.
const SCALE_CEIL: f64 = 1.2;
const SCALE_FLOOR: f64 = 0.85;
const PLACEMENT_ATTEMPTS: usize = 200;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub height: usize,
    pub width: usize,
    pub num_sequences: usize,
    /// Index of the first generated sequence; disjoint index ranges give
    /// disjoint splits from one seed.
    pub first_index: usize,
    pub frames_per_sequence: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Circumradius range of a shape at unit scale, in pixels.
    pub size_range: (f64, f64),
    /// Per-frame translation magnitude, pixels.
    pub translation_range: (f64, f64),
    /// Per-frame rotation bound, degrees (symmetric).
    pub rotation_deg: f64,
    /// Per-frame multiplicative scale change.
    pub scale_range: (f64, f64),
    pub textured_background: bool,
    /// Standard deviation of independent per-frame pixel noise.
    pub pixel_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            num_sequences: 200,
            first_index: 0,
            frames_per_sequence: 8,
            min_objects: 1,
            max_objects: 2,
            size_range: (9.0, 13.0),
            translation_range: (4.0, 12.0),
            rotation_deg: 10.0,
            scale_range: (0.95, 1.05),
            textured_background: true,
            pixel_noise: 0.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let min_dim = self.height.min(self.width) as f64;
        if self.frames_per_sequence < 2 {
            return bad("synthetic.frames_per_sequence must be >= 2".into());
        }
        if self.min_objects == 0 || self.min_objects > self.max_objects || self.max_objects > 8 {
            return bad("synthetic object counts must satisfy 1 <= min <= max <= 8".into());
        }
        let (t0, t1) = self.translation_range;
        if !(0.0 <= t0 && t0 <= t1) {
            return bad(format!("synthetic.translation_range {t0}..{t1} is invalid"));
        }
        if t1 >= min_dim / 3.0 {
            return bad(format!(
                "synthetic max translation {t1} must stay below min(H, W) / 3 = {:.2}",
                min_dim / 3.0
            ));
        }
        let (s0, s1) = self.size_range;
        if !(0.0 < s0 && s0 <= s1) {
            return bad(format!("synthetic.size_range {s0}..{s1} is invalid"));
        }
        if 2.0 * (s1 * SCALE_CEIL + 1.0) >= min_dim - 2.0 {
            return bad(format!(
                "shapes of radius {s1} do not fit a {}x{} frame",
                self.height, self.width
            ));
        }
        let (c0, c1) = self.scale_range;
        if !(0.0 < c0 && c0 <= 1.0 && 1.0 <= c1) {
            return bad(format!("synthetic.scale_range {c0}..{c1} must bracket 1"));
        }
        if !(self.rotation_deg >= 0.0 && self.pixel_noise >= 0.0) {
            return bad("synthetic rotation and noise must be >= 0".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ShapeKind {
    Disk,
    /// Half-extents are `radius * (cos a, sin a)`.
    Rectangle {
        aspect_angle: f64,
    },
    /// Equilateral, centroid at the pose center.
    Triangle,
}

/// Similarity transform from shape-local to image coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub cx: f64,
    pub cy: f64,
    pub angle: f64,
    pub scale: f64,
}

impl Pose {
    fn to_local(self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        (
            (c * dx + s * dy) / self.scale,
            (-s * dx + c * dy) / self.scale,
        )
    }

    fn to_image(self, u: f64, v: f64) -> (f64, f64) {
        let (s, c) = self.angle.sin_cos();
        (
            self.cx + self.scale * (c * u - s * v),
            self.cy + self.scale * (s * u + c * v),
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectTrack {
    pub id: u8,
    pub kind: ShapeKind,
    pub radius: f64,
    color: [f64; 3],
    texture: (f64, f64, f64),
    /// One pose per frame.
    pub poses: Vec<Pose>,
}

/// Per-transition motion record `t-1 -> t`.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionRecord {
    pub sequence: String,
    pub t: usize,
    pub object: u8,
    pub dx_px: f64,
    pub dy_px: f64,
    pub dtheta: f64,
    pub dscale: f64,
}

impl ObjectTrack {
    fn contains(&self, t: usize, x: f64, y: f64) -> bool {
        let (u, v) = self.poses[t].to_local(x, y);
        let r = self.radius;
        match self.kind {
            ShapeKind::Disk => u * u + v * v <= r * r,
            ShapeKind::Rectangle { aspect_angle } => {
                u.abs() <= r * aspect_angle.cos() && v.abs() <= r * aspect_angle.sin()
            }
            ShapeKind::Triangle => {
                let vert = |k: f64| {
                    let a = PI / 2.0 + k * 2.0 * PI / 3.0;
                    (r * a.cos(), r * a.sin())
                };
                let (a, b, c) = (vert(0.0), vert(1.0), vert(2.0));
                let cross = |p: (f64, f64), q: (f64, f64)| {
                    (q.0 - p.0) * (v - p.1) - (q.1 - p.1) * (u - p.0)
                };
                let (d1, d2, d3) = (cross(a, b), cross(b, c), cross(c, a));
                (d1 >= 0.0 && d2 >= 0.0 && d3 >= 0.0) || (d1 <= 0.0 && d2 <= 0.0 && d3 <= 0.0)
            }
        }
    }

    fn shade(&self, t: usize, x: f64, y: f64) -> [f64; 3] {
        let (u, v) = self.poses[t].to_local(x, y);
        let (freq, phase, amp) = self.texture;
        let pattern = amp * (freq * u + phase).sin() * (freq * v).cos();
        self.color.map(|c| (c + pattern).clamp(0.0, 1.0))
    }

    /// Exact backward flow into frame `t - 1` for every pixel of frame `t`,
    /// extending this object's similarity motion over the whole image.
    pub fn backward_flow(&self, t: usize, height: usize, width: usize) -> Result<FlowField<f32>> {
        if t == 0 || t >= self.poses.len() {
            return Err(Error::invalid(format!("no transition into frame {t}")));
        }
        let (cur, prev) = (self.poses[t], self.poses[t - 1]);
        let plane = height * width;
        let mut px = vec![0f32; 2 * plane];
        for y in 0..height {
            for x in 0..width {
                let (u, v) = cur.to_local(x as f64, y as f64);
                let (qx, qy) = prev.to_image(u, v);
                px[y * width + x] = (qx - x as f64) as f32;
                px[plane + y * width + x] = (qy - y as f64) as f32;
            }
        }
        FlowField::from_pixels(&Array::new([2, height, width], px)?)
    }
}

fn sequence_rng(seed: u64, index: usize) -> ChaCha8Rng {
    // splitmix64 of (seed, index)
    let mut z = seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}

fn random_kind(rng: &mut ChaCha8Rng) -> ShapeKind {
    match rng.random_range(0..3) {
        0 => ShapeKind::Disk,
        1 => ShapeKind::Rectangle {
            aspect_angle: rng.random_range(0.45..1.1),
        },
        _ => ShapeKind::Triangle,
    }
}

fn simulate(spec: &SyntheticSpec, rng: &mut ChaCha8Rng, radius: f64) -> Vec<Pose> {
    let margin = radius * SCALE_CEIL + 1.0;
    let (lo_x, hi_x) = (margin, spec.width as f64 - 1.0 - margin);
    let (lo_y, hi_y) = (margin, spec.height as f64 - 1.0 - margin);
    let speed = rng.random_range(spec.translation_range.0..=spec.translation_range.1);
    let heading = rng.random_range(0.0..2.0 * PI);
    let (mut vx, mut vy) = (speed * heading.cos(), speed * heading.sin());
    let rot = spec.rotation_deg.to_radians();
    let omega = if rot > 0.0 {
        rng.random_range(-rot..=rot)
    } else {
        0.0
    };
    let mut growth = rng.random_range(spec.scale_range.0..=spec.scale_range.1);
    let mut pose = Pose {
        cx: rng.random_range(lo_x..=hi_x),
        cy: rng.random_range(lo_y..=hi_y),
        angle: rng.random_range(0.0..2.0 * PI),
        scale: 1.0,
    };
    let bounce = |p: &mut f64, v: &mut f64, lo: f64, hi: f64| {
        if *p < lo {
            *p = 2.0 * lo - *p;
            *v = -*v;
        } else if *p > hi {
            *p = 2.0 * hi - *p;
            *v = -*v;
        }
        *p = p.clamp(lo, hi);
    };
    let mut poses = vec![pose];
    for _ in 1..spec.frames_per_sequence {
        pose.cx += vx;
        pose.cy += vy;
        bounce(&mut pose.cx, &mut vx, lo_x, hi_x);
        bounce(&mut pose.cy, &mut vy, lo_y, hi_y);
        pose.angle += omega;
        let next = pose.scale * growth;
        if !(SCALE_FLOOR..=SCALE_CEIL).contains(&next) {
            growth = 1.0 / growth;
        }
        pose.scale *= growth;
        poses.push(pose);
    }
    poses
}

fn overlaps(a: &ObjectTrack, b: &ObjectTrack) -> bool {
    a.poses.iter().zip(&b.poses).any(|(p, q)| {
        let d = ((p.cx - q.cx).powi(2) + (p.cy - q.cy).powi(2)).sqrt();
        d <= a.radius * p.scale + b.radius * q.scale + 2.0
    })
}

struct Background {
    color: [f64; 3],
    waves: Vec<(f64, f64, f64, f64, usize)>,
    lattice: Option<(usize, Vec<f64>)>,
}

impl Background {
    fn sample(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Self {
        let color = [0; 3].map(|_| rng.random_range(0.1..0.9));
        if !spec.textured_background {
            return Self {
                color,
                waves: Vec::new(),
                lattice: None,
            };
        }
        let waves = (0..3)
            .map(|c| {
                (
                    rng.random_range(0.1..0.6),
                    rng.random_range(0.1..0.6),
                    rng.random_range(0.0..2.0 * PI),
                    rng.random_range(0.05..0.12),
                    c,
                )
            })
            .collect();
        let cell = 8;
        let n = (spec.height / cell + 2) * (spec.width / cell + 2);
        let lattice = (0..n).map(|_| rng.random_range(-0.12..0.12)).collect();
        Self {
            color,
            waves,
            lattice: Some((cell, lattice)),
        }
    }

    fn shade(&self, x: usize, y: usize, width: usize) -> [f64; 3] {
        let mut rgb = self.color;
        for &(fx, fy, phase, amp, c) in &self.waves {
            rgb[c] += amp * (fx * x as f64 + fy * y as f64 + phase).sin();
        }
        if let Some((cell, lat)) = &self.lattice {
            let stride = width / cell + 2;
            let (gx, gy) = (x as f64 / *cell as f64, y as f64 / *cell as f64);
            let (ix, iy) = (gx.floor() as usize, gy.floor() as usize);
            let (ax, ay) = (gx - ix as f64, gy - iy as f64);
            let at = |i: usize, j: usize| lat[j * stride + i];
            let n = (1.0 - ay) * ((1.0 - ax) * at(ix, iy) + ax * at(ix + 1, iy))
                + ay * ((1.0 - ax) * at(ix, iy + 1) + ax * at(ix + 1, iy + 1));
            for v in &mut rgb {
                *v += n;
            }
        }
        rgb.map(|v| v.clamp(0.0, 1.0))
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

fn generate_one(spec: &SyntheticSpec, index: usize) -> VideoSequence {
    let mut rng = sequence_rng(spec.seed, index);
    let (h, w, frames) = (spec.height, spec.width, spec.frames_per_sequence);
    let background = Background::sample(spec, &mut rng);
    let wanted = rng.random_range(spec.min_objects..=spec.max_objects);
    let mut tracks: Vec<ObjectTrack> = Vec::new();
    let mut attempts = 0;
    while tracks.len() < wanted && attempts < PLACEMENT_ATTEMPTS {
        attempts += 1;
        let radius = rng.random_range(spec.size_range.0..=spec.size_range.1);
        let track = ObjectTrack {
            id: tracks.len() as u8 + 1,
            kind: random_kind(&mut rng),
            radius,
            color: [0; 3].map(|_| rng.random_range(0.1..0.95)),
            texture: (
                rng.random_range(0.4..1.2),
                rng.random_range(0.0..2.0 * PI),
                rng.random_range(0.1..0.25),
            ),
            poses: simulate(spec, &mut rng, radius),
        };
        if tracks.iter().all(|o| !overlaps(o, &track)) {
            tracks.push(track);
        }
    }

    let plane = h * w;
    let mut frames_out = Vec::with_capacity(frames);
    let mut masks: Vec<Vec<Array<f32>>> = vec![Vec::with_capacity(frames); tracks.len()];
    for t in 0..frames {
        let mut rgb = vec![0f32; 3 * plane];
        let mut object_masks = vec![vec![0f32; plane]; tracks.len()];
        for y in 0..h {
            for x in 0..w {
                let (fx, fy) = (x as f64, y as f64);
                let mut color = background.shade(x, y, w);
                for (k, track) in tracks.iter().enumerate() {
                    if track.contains(t, fx, fy) {
                        color = track.shade(t, fx, fy);
                        object_masks[k][y * w + x] = 1.0;
                    }
                }
                for c in 0..3 {
                    let noisy = if spec.pixel_noise > 0.0 {
                        (color[c] + spec.pixel_noise * gaussian(&mut rng)).clamp(0.0, 1.0)
                    } else {
                        color[c]
                    };
                    rgb[c * plane + y * w + x] = ((noisy * 255.0).round() / 255.0) as f32;
                }
            }
        }
        frames_out.push(Array::new([3, h, w], rgb).expect("frame shape"));
        for (k, m) in object_masks.into_iter().enumerate() {
            masks[k].push(Array::new([1, h, w], m).expect("mask shape"));
        }
    }

    VideoSequence {
        name: format!("synth{index:05}"),
        frames: frames_out,
        object_ids: tracks.iter().map(|t| t.id).collect(),
        masks,
        tracks: Some(tracks),
    }
}

/// Deterministic in `spec` (including the seed).
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<VideoSequence>> {
    spec.validate()?;
    Ok((spec.first_index..spec.first_index + spec.num_sequences)
        .map(|i| generate_one(spec, i))
        .collect())
}

/// Motion metadata for every transition of every object.
pub fn motion_records(seq: &VideoSequence) -> Vec<MotionRecord> {
    let Some(tracks) = &seq.tracks else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for t in 1..seq.len() {
        for track in tracks {
            let (a, b) = (track.poses[t - 1], track.poses[t]);
            out.push(MotionRecord {
                sequence: seq.name.clone(),
                t,
                object: track.id,
                dx_px: b.cx - a.cx,
                dy_px: b.cy - a.cy,
                dtheta: b.angle - a.angle,
                dscale: b.scale / a.scale,
            });
        }
    }
    out
}
