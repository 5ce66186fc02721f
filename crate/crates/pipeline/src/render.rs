//! Synthetic dataset generation: fisheye images, ground-truth depth on the
//! sphere grid, ground-truth feature tracks and a ground-truth mesh.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};

use nalgebra::{Vector2, Vector3};
use omnimap_core::io::pfm::FloatImage;
use omnimap_core::io::tracks::{Descriptor, Observation, TrackTable};
use omnimap_core::mesh::TriangleMesh;
use omnimap_core::{DepthMap, Rig, Se3, SphereGrid, NUM_CAMERAS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::Result;
use crate::scene::{Scene, Shape};

/// Fisheye image of camera `cam` on a rig at `pose`, averaging
/// `supersample²` rays per pixel. Pixels outside the field of view are 0.
pub fn render_image(scene: &Scene, rig: &Rig, pose: &Se3, cam: usize, supersample: u32) -> FloatImage {
    let c = &rig.cameras[cam];
    let (w, h) = (c.image_width as usize, c.image_height as usize);
    let origin = pose.transform_point(&c.center());
    let s = supersample.max(1);
    let data: Vec<f32> = (0..w * h)
        .into_par_iter()
        .map(|k| {
            let (x, y) = ((k % w) as f64, (k / w) as f64);
            let mut acc = 0.0;
            for sy in 0..s {
                for sx in 0..s {
                    let px = Vector2::new(x + (sx as f64 + 0.5) / s as f64 - 0.5, y + (sy as f64 + 0.5) / s as f64 - 0.5);
                    let Ok(b) = c.unproject(&px) else { continue };
                    let d = pose.rotate(&c.cam_to_rig.rotate(&b));
                    if let Some(hit) = scene.cast(&origin, &d) {
                        acc += scene.albedo(&hit);
                    }
                }
            }
            (acc / (s * s) as f64) as f32
        })
        .collect();
    FloatImage { width: w, height: h, data }
}

/// Range from the rig origin along every grid ray; NaN where nothing is hit.
pub fn render_depth(scene: &Scene, pose: &Se3, grid: &SphereGrid) -> DepthMap {
    let data = (0..grid.num_pixels())
        .into_par_iter()
        .map(|k| {
            let d = pose.rotate(&grid.ray_unchecked(k % grid.width, k / grid.width));
            scene.cast(&pose.translation, &d).map_or(f64::NAN, |h| h.distance)
        })
        .collect();
    DepthMap { grid: *grid, data }
}

fn face_area(shape: &Shape) -> Vec<f64> {
    match *shape {
        Shape::Sphere { radius, .. } => vec![4.0 * PI * radius * radius],
        Shape::Cuboid { min, max, .. } => {
            let e = max - min;
            vec![e.y * e.z, e.y * e.z, e.x * e.z, e.x * e.z, e.x * e.y, e.x * e.y]
        }
        Shape::Panel { half_extent, .. } => vec![4.0 * half_extent * half_extent],
    }
}

fn sample_face(shape: &Shape, face: usize, u: f64, v: f64) -> Vector3<f64> {
    match *shape {
        Shape::Sphere { center, radius, .. } => {
            let z = 2.0 * u - 1.0;
            let r = (1.0 - z * z).sqrt();
            let a = TAU * v;
            center + Vector3::new(r * a.cos(), z, r * a.sin()) * radius
        }
        Shape::Cuboid { min, max, .. } => {
            let axis = face / 2;
            let mut p = Vector3::zeros();
            p[axis] = if face % 2 == 0 { min[axis] } else { max[axis] };
            let (a, b) = ((axis + 1) % 3, (axis + 2) % 3);
            p[a] = min[a] + u * (max[a] - min[a]);
            p[b] = min[b] + v * (max[b] - min[b]);
            p
        }
        Shape::Panel { center, normal, up, half_extent } => {
            let side = normal.cross(&up);
            center + up * ((2.0 * u - 1.0) * half_extent) + side * ((2.0 * v - 1.0) * half_extent)
        }
    }
}

/// Area-uniform random points on all primitive surfaces.
pub fn sample_anchors(scene: &Scene, n: usize, rng: &mut impl Rng) -> Vec<Vector3<f64>> {
    let faces: Vec<(usize, usize, f64)> = scene
        .primitives
        .iter()
        .enumerate()
        .flat_map(|(k, p)| face_area(&p.shape).into_iter().enumerate().map(move |(f, a)| (k, f, a)))
        .collect();
    let total: f64 = faces.iter().map(|f| f.2).sum();
    (0..n)
        .map(|_| {
            let mut x = rng.random_range(0.0..total);
            let mut pick = faces[faces.len() - 1];
            for f in &faces {
                if x < f.2 {
                    pick = *f;
                    break;
                }
                x -= f.2;
            }
            sample_face(&scene.primitives[pick.0].shape, pick.1, rng.random(), rng.random())
        })
        .collect()
}

/// Unoccluded line of sight from `from` to the surface point `to`.
pub fn visible(scene: &Scene, from: &Vector3<f64>, to: &Vector3<f64>) -> bool {
    let d = to - from;
    let dist = d.norm();
    scene.cast(from, &(d / dist)).is_some_and(|h| h.distance >= dist - (0.01 + 1e-3 * dist))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrackParams {
    pub noise_px: f64,
    /// Random bit flips applied to the anchor's descriptor per observation.
    pub descriptor_flips: u32,
    pub seed: u64,
}

/// Ground-truth tracks: an anchor visible in a camera on consecutive frames
/// keeps its track id; a new visibility episode gets a new id. Returns the
/// table and the anchor index of every track id.
pub fn generate_tracks(scene: &Scene, rig: &Rig, anchors: &[Vector3<f64>], params: &TrackParams) -> (TrackTable, BTreeMap<u64, usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let base: Vec<Descriptor> = anchors.iter().map(|_| Descriptor([rng.random(), rng.random(), rng.random(), rng.random()])).collect();
    let noise = Normal::new(0.0, params.noise_px.max(1e-300)).unwrap();
    let mut table = TrackTable::new();
    let mut labels = BTreeMap::new();
    let mut current: Vec<[Option<u64>; NUM_CAMERAS]> = vec![[None; NUM_CAMERAS]; anchors.len()];
    let mut next_id = 0u64;
    for (f, pose) in scene.trajectory.iter().enumerate() {
        // visibility in parallel, noise and ids sequentially for reproducibility
        let seen: Vec<[Option<Vector2<f64>>; NUM_CAMERAS]> = anchors
            .par_iter()
            .map(|x| {
                let x_r = pose.inverse().transform_point(x);
                std::array::from_fn(|c| {
                    let cam = &rig.cameras[c];
                    let x_c = cam.cam_to_rig.inverse().transform_point(&x_r);
                    let p = cam.project(&x_c).ok().filter(|p| p.valid && cam.in_image(&p.pixel))?;
                    visible(scene, &pose.transform_point(&cam.center()), x).then_some(p.pixel)
                })
            })
            .collect();
        for (a, obs) in seen.iter().enumerate() {
            for c in 0..NUM_CAMERAS {
                let Some(px) = obs[c] else {
                    current[a][c] = None;
                    continue;
                };
                let mut px = px;
                if params.noise_px > 0.0 {
                    px += Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng));
                }
                let mut desc = base[a];
                for _ in 0..params.descriptor_flips {
                    let bit = rng.random_range(0..256);
                    desc.0[bit / 64] ^= 1 << (bit % 64);
                }
                if !rig.cameras[c].in_image(&px) {
                    current[a][c] = None;
                    continue;
                }
                let id = *current[a][c].get_or_insert_with(|| {
                    next_id += 1;
                    labels.insert(next_id - 1, a);
                    next_id - 1
                });
                table
                    .push(f as u32, c, Observation { track_id: id, pixel: px, descriptor: Some(desc) })
                    .expect("track ids are unique per frame and camera");
            }
        }
    }
    (table, labels)
}

fn grid_patch(mesh: &mut TriangleMesh, corner: Vector3<f64>, a: Vector3<f64>, b: Vector3<f64>, max_edge: f64) {
    let na = ((a.norm() / max_edge).ceil() as usize).max(1);
    let nb = ((b.norm() / max_edge).ceil() as usize).max(1);
    let base = mesh.vertices.len() as u32;
    for j in 0..=nb {
        for i in 0..=na {
            mesh.vertices.push(corner + a * (i as f64 / na as f64) + b * (j as f64 / nb as f64));
        }
    }
    let idx = |i: usize, j: usize| base + (j * (na + 1) + i) as u32;
    for j in 0..nb {
        for i in 0..na {
            mesh.triangles.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
            mesh.triangles.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
        }
    }
}

/// Triangulates every primitive with edges no longer than about `max_edge`
/// (grid diagonals excepted).
pub fn tessellate(scene: &Scene, max_edge: f64) -> TriangleMesh {
    let mut mesh = TriangleMesh::default();
    for p in &scene.primitives {
        match p.shape {
            Shape::Sphere { center, radius, .. } => {
                let n_lat = ((PI * radius / max_edge).ceil() as usize).max(2);
                let n_lon = ((TAU * radius / max_edge).ceil() as usize).max(3);
                let base = mesh.vertices.len() as u32;
                for i in 0..=n_lat {
                    let t = PI * i as f64 / n_lat as f64;
                    for j in 0..n_lon {
                        let a = TAU * j as f64 / n_lon as f64;
                        mesh.vertices.push(center + Vector3::new(t.sin() * a.cos(), t.cos(), t.sin() * a.sin()) * radius);
                    }
                }
                let idx = |i: usize, j: usize| base + (i * n_lon + j % n_lon) as u32;
                for i in 0..n_lat {
                    for j in 0..n_lon {
                        mesh.triangles.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
                        mesh.triangles.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
                    }
                }
            }
            Shape::Cuboid { min, max, .. } => {
                let e = max - min;
                for axis in 0..3 {
                    let (a, b) = ((axis + 1) % 3, (axis + 2) % 3);
                    let mut va = Vector3::zeros();
                    va[a] = e[a];
                    let mut vb = Vector3::zeros();
                    vb[b] = e[b];
                    for side in [min[axis], max[axis]] {
                        let mut corner = min;
                        corner[axis] = side;
                        grid_patch(&mut mesh, corner, va, vb, max_edge);
                    }
                }
            }
            Shape::Panel { center, normal, up, half_extent } => {
                let side = normal.cross(&up);
                grid_patch(&mut mesh, center - (up + side) * half_extent, up * (2.0 * half_extent), side * (2.0 * half_extent), max_edge);
            }
        }
    }
    mesh
}

/// Keeps the vertices seen (inside the grid's elevation band, unoccluded)
/// from at least `min_views` of the rig `poses`, and the triangles among them.
pub fn cull_to_observed(mesh: &TriangleMesh, scene: &Scene, poses: &[Se3], grid: &SphereGrid, min_views: usize) -> TriangleMesh {
    let keep: Vec<bool> = mesh
        .vertices
        .par_iter()
        .map(|x| {
            poses
                .iter()
                .filter(|pose| {
                    let d = pose.inverse().transform_point(x);
                    grid.direction_to_pixel(&d).is_some() && visible(scene, &pose.translation, x)
                })
                .take(min_views)
                .count()
                >= min_views
        })
        .collect();
    let mut remap = vec![u32::MAX; mesh.vertices.len()];
    let mut out = TriangleMesh::default();
    for (k, x) in mesh.vertices.iter().enumerate() {
        if keep[k] {
            remap[k] = out.vertices.len() as u32;
            out.vertices.push(*x);
        }
    }
    out.triangles = mesh
        .triangles
        .iter()
        .filter(|t| t.iter().all(|&v| keep[v as usize]))
        .map(|t| t.map(|v| remap[v as usize]))
        .collect();
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthParams {
    pub rig: Rig,
    pub grid: SphereGrid,
    pub supersample: u32,
    /// Frames `0, k, 2k, ...` get images and ground-truth depth.
    pub depth_every: usize,
    pub anchors: usize,
    pub tracks: TrackParams,
    pub mesh_edge: f64,
    pub mesh_min_views: usize,
}

/// Everything a pipeline run consumes, plus ground truth.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub rig: Rig,
    pub trajectory: Vec<Se3>,
    pub depth_frames: Vec<u32>,
    pub images: BTreeMap<u32, [FloatImage; NUM_CAMERAS]>,
    pub depth: BTreeMap<u32, DepthMap>,
    pub tracks: TrackTable,
    pub labels: BTreeMap<u64, usize>,
    /// Ground-truth surface restricted to what the depth frames observe.
    pub mesh: TriangleMesh,
    pub mesh_full: TriangleMesh,
}

pub fn synthesize(scene: &Scene, params: &SynthParams) -> Result<Dataset> {
    scene.validate(0.3)?;
    let depth_frames: Vec<u32> = (0..scene.trajectory.len()).step_by(params.depth_every.max(1)).map(|f| f as u32).collect();
    let mut images = BTreeMap::new();
    let mut depth = BTreeMap::new();
    for &f in &depth_frames {
        let pose = &scene.trajectory[f as usize];
        images.insert(f, std::array::from_fn(|c| render_image(scene, &params.rig, pose, c, params.supersample)));
        depth.insert(f, render_depth(scene, pose, &params.grid));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.tracks.seed ^ 0x5eed);
    let anchors = sample_anchors(scene, params.anchors, &mut rng);
    let (tracks, labels) = generate_tracks(scene, &params.rig, &anchors, &params.tracks);
    let mesh_full = tessellate(scene, params.mesh_edge);
    let views: Vec<Se3> = depth_frames.iter().map(|&f| scene.trajectory[f as usize]).collect();
    let mesh = cull_to_observed(&mesh_full, scene, &views, &params.grid, params.mesh_min_views);
    Ok(Dataset { rig: params.rig.clone(), trajectory: scene.trajectory.clone(), depth_frames, images, depth, tracks, labels, mesh, mesh_full })
}
