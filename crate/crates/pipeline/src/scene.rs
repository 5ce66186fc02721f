//! Analytic scenes for synthetic datasets: textured spheres, boxes and
//! square panels, plus parametric rig trajectories.

use nalgebra::Vector3;
use omnimap_core::Se3;

use crate::error::{PipelineError, Result};

/// Procedural albedo in `[0, 1]`, a function of world position.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Texture {
    /// Fractal value noise: `octaves` layers starting at `frequency` cycles
    /// per meter, each doubling the frequency and halving the amplitude.
    Noise { seed: u32, frequency: f64, octaves: u32 },
    /// 3D checkerboard with `size`-meter cells.
    Checker { size: f64 },
}

fn hash(seed: u32, x: i64, y: i64, z: i64) -> f64 {
    let mut h = (seed as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for v in [x, y, z] {
        h ^= (v as u64).wrapping_add(0x632b_e59b_d9b4_e019).wrapping_add(h << 6).wrapping_add(h >> 2);
        h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
        h ^= h >> 33;
    }
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

fn value_noise(seed: u32, p: &Vector3<f64>) -> f64 {
    let f = p.map(f64::floor);
    let (x0, y0, z0) = (f.x as i64, f.y as i64, f.z as i64);
    let t = (p - f).map(smooth);
    let mut acc = 0.0;
    for dz in 0..2 {
        for dy in 0..2 {
            for dx in 0..2 {
                let w = (if dx == 1 { t.x } else { 1.0 - t.x })
                    * (if dy == 1 { t.y } else { 1.0 - t.y })
                    * (if dz == 1 { t.z } else { 1.0 - t.z });
                acc += w * hash(seed, x0 + dx, y0 + dy, z0 + dz);
            }
        }
    }
    acc
}

impl Texture {
    pub fn sample(&self, p: &Vector3<f64>) -> f64 {
        match *self {
            Texture::Noise { seed, frequency, octaves } => {
                let (mut sum, mut amp, mut norm, mut freq) = (0.0, 1.0, 0.0, frequency);
                for o in 0..octaves.max(1) {
                    sum += amp * value_noise(seed.wrapping_add(o * 7919), &(p * freq));
                    norm += amp;
                    amp *= 0.5;
                    freq *= 2.0;
                }
                sum / norm
            }
            Texture::Checker { size } => {
                let k = (p / size).map(|v| v.floor() as i64);
                if (k.x + k.y + k.z).rem_euclid(2) == 0 {
                    0.2
                } else {
                    0.8
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Shape {
    /// `inside`: the viewer lives inside (a room); rays hit the far wall.
    Sphere { center: Vector3<f64>, radius: f64, inside: bool },
    Cuboid { min: Vector3<f64>, max: Vector3<f64>, inside: bool },
    /// Two-sided square panel of half-width `half_extent`; `up` fixes its
    /// in-plane orientation.
    Panel { center: Vector3<f64>, normal: Vector3<f64>, up: Vector3<f64>, half_extent: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Primitive {
    pub shape: Shape,
    pub texture: Texture,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub distance: f64,
    pub point: Vector3<f64>,
    pub primitive: usize,
}

const EPS: f64 = 1e-9;

impl Shape {
    /// Distance along the unit direction `d` to the first surface point.
    pub fn intersect(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<f64> {
        match *self {
            Shape::Sphere { center, radius, inside } => {
                let oc = o - center;
                let b = oc.dot(d);
                let disc = b * b - oc.norm_squared() + radius * radius;
                if disc < 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                let (t0, t1) = (-b - s, -b + s);
                if inside {
                    (t1 > EPS).then_some(t1)
                } else if t0 > EPS {
                    Some(t0)
                } else {
                    None
                }
            }
            Shape::Cuboid { min, max, inside } => {
                let (mut tn, mut tf) = (f64::NEG_INFINITY, f64::INFINITY);
                for a in 0..3 {
                    if d[a].abs() < 1e-300 {
                        if o[a] < min[a] || o[a] > max[a] {
                            return None;
                        }
                        continue;
                    }
                    let (t0, t1) = ((min[a] - o[a]) / d[a], (max[a] - o[a]) / d[a]);
                    tn = tn.max(t0.min(t1));
                    tf = tf.min(t0.max(t1));
                }
                if tn > tf {
                    return None;
                }
                if inside {
                    (tf > EPS).then_some(tf)
                } else if tn > EPS {
                    Some(tn)
                } else {
                    None
                }
            }
            Shape::Panel { center, normal, up, half_extent } => {
                let den = normal.dot(d);
                if den.abs() < 1e-12 {
                    return None;
                }
                let t = normal.dot(&(center - o)) / den;
                if t <= EPS {
                    return None;
                }
                let q = o + d * t - center;
                let side = normal.cross(&up);
                (q.dot(&up).abs() <= half_extent && q.dot(&side).abs() <= half_extent).then_some(t)
            }
        }
    }

    /// Whether `p` lies in free space with respect to this shape.
    pub fn is_free(&self, p: &Vector3<f64>) -> bool {
        match *self {
            Shape::Sphere { center, radius, inside } => ((p - center).norm() < radius) == inside,
            Shape::Cuboid { min, max, inside } => {
                let within = (0..3).all(|a| p[a] > min[a] && p[a] < max[a]);
                within == inside
            }
            Shape::Panel { .. } => true,
        }
    }
}

/// A static scene plus the rig's world-from-rig trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub primitives: Vec<Primitive>,
    pub trajectory: Vec<Se3>,
}

impl Scene {
    pub fn cast(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        for (k, p) in self.primitives.iter().enumerate() {
            if let Some(t) = p.shape.intersect(o, d) {
                if best.is_none_or(|b| t < b.distance) {
                    best = Some(Hit { distance: t, point: o + d * t, primitive: k });
                }
            }
        }
        best
    }

    pub fn albedo(&self, hit: &Hit) -> f64 {
        self.primitives[hit.primitive].texture.sample(&hit.point)
    }

    /// Checks that every rig position lies in free space and that the scene
    /// encloses it (a ray cast in each axis direction hits something).
    pub fn validate(&self, margin: f64) -> Result<()> {
        if self.primitives.is_empty() || self.trajectory.is_empty() {
            return Err(PipelineError::InvalidScene("scene needs primitives and poses".into()));
        }
        let dirs = [Vector3::x(), -Vector3::x(), Vector3::y(), -Vector3::y(), Vector3::z(), -Vector3::z()];
        for (k, pose) in self.trajectory.iter().enumerate() {
            let p = pose.translation;
            if let Some(prim) = self.primitives.iter().position(|q| !q.shape.is_free(&p)) {
                return Err(PipelineError::InvalidScene(format!("pose {k} lies inside primitive {prim}")));
            }
            for d in &dirs {
                match self.cast(&p, d) {
                    Some(h) if h.distance > margin => {}
                    Some(_) => return Err(PipelineError::InvalidScene(format!("pose {k} is within {margin} m of a surface"))),
                    None => return Err(PipelineError::InvalidScene(format!("pose {k} is not enclosed"))),
                }
            }
        }
        Ok(())
    }
}

/// A sphere room of `radius` meters with the rig fixed at its center.
pub fn sphere_room(radius: f64, frames: usize, seed: u32) -> Scene {
    Scene {
        primitives: vec![Primitive {
            shape: Shape::Sphere { center: Vector3::zeros(), radius, inside: true },
            // base wavelength of about 6° seen from the center
            texture: Texture::Noise { seed, frequency: 10.0 / radius, octaves: 3 },
        }],
        trajectory: vec![Se3::identity(); frames.max(1)],
    }
}

/// Rig poses along a square of side `side` centered at the origin (y = 0),
/// starting at a corner and walking counter-clockwise seen from above. The
/// heading turns linearly by `total_yaw` over the loop, so the last frame
/// revisits the start with a rotated rig.
pub fn square_loop_trajectory(side: f64, frames: usize, total_yaw: f64) -> Vec<Se3> {
    let h = 0.5 * side;
    let corners = [
        Vector3::new(-h, 0.0, -h),
        Vector3::new(h, 0.0, -h),
        Vector3::new(h, 0.0, h),
        Vector3::new(-h, 0.0, h),
    ];
    (0..frames)
        .map(|k| {
            let s = k as f64 / frames as f64 * 4.0;
            let edge = (s.floor() as usize).min(3);
            let f = s - edge as f64;
            let p = corners[edge] * (1.0 - f) + corners[(edge + 1) % 4] * f;
            Se3::new(Se3::yaw(-total_yaw * k as f64 / frames as f64), p)
        })
        .collect()
}

/// A 10 × 4 × 10 m textured room with a central pillar and a few props,
/// traversed by a 4 m square loop.
pub fn square_loop_room(frames: usize, total_yaw: f64, seed: u32) -> Scene {
    let noise = |k: u32, f: f64| Texture::Noise { seed: seed.wrapping_mul(31).wrapping_add(k), frequency: f, octaves: 3 };
    let cuboid = |min: [f64; 3], max: [f64; 3]| Shape::Cuboid { min: Vector3::from(min), max: Vector3::from(max), inside: false };
    let primitives = vec![
        Primitive {
            shape: Shape::Cuboid { min: Vector3::new(-5.0, -1.5, -5.0), max: Vector3::new(5.0, 2.5, 5.0), inside: true },
            texture: noise(0, 2.0),
        },
        Primitive { shape: cuboid([-0.6, -1.5, -0.6], [0.6, 1.2, 0.6]), texture: noise(1, 3.0) },
        Primitive { shape: cuboid([3.2, -1.5, -4.2], [4.4, -0.3, -2.8]), texture: noise(2, 3.0) },
        Primitive { shape: cuboid([-4.5, -1.5, 2.5], [-3.4, 0.9, 4.4]), texture: noise(3, 3.0) },
        Primitive {
            shape: Shape::Sphere { center: Vector3::new(3.6, 0.2, 3.6), radius: 0.8, inside: false },
            texture: noise(4, 3.0),
        },
        Primitive {
            shape: Shape::Sphere { center: Vector3::new(-3.8, 0.4, -3.6), radius: 0.7, inside: false },
            texture: noise(5, 3.0),
        },
        Primitive {
            shape: Shape::Panel {
                center: Vector3::new(0.0, 0.5, -4.0),
                normal: Vector3::z(),
                up: Vector3::y(),
                half_extent: 0.9,
            },
            texture: Texture::Checker { size: 0.3 },
        },
    ];
    Scene { primitives, trajectory: square_loop_trajectory(4.0, frames, total_yaw) }
}
