//! Marching-cubes extraction with observation gating, and PLY I/O.

mod ply;
mod table;

pub use ply::{load_ply, read_ply, save_ply, write_ply, PlyFormat};

use std::collections::HashMap;

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tsdf::{TsdfVolume, Voxel, VoxelIndex, BLOCK_SIZE};
use table::{case_table, CORNERS, EDGES};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vector3<f64>>,
    /// Optional per-vertex gray level.
    pub gray: Option<Vec<u8>>,
    pub triangles: Vec<[u32; 3]>,
}

impl TriangleMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len() as u32;
        if let Some(g) = &self.gray {
            if g.len() != self.vertices.len() {
                return Err(Error::invalid("gray channel length differs from vertex count"));
            }
        }
        if let Some(t) = self.triangles.iter().find(|t| t.iter().any(|&i| i >= n)) {
            return Err(Error::invalid(format!("triangle {t:?} indexes past {n} vertices")));
        }
        Ok(())
    }

    /// Unnormalized normal `(b − a) × (c − a)` of triangle `t`.
    pub fn face_normal(&self, t: usize) -> Vector3<f64> {
        let [a, b, c] = self.triangles[t].map(|i| self.vertices[i as usize]);
        (b - a).cross(&(c - a))
    }
}

/// Histogram equalization of 8-bit gray levels.
pub fn equalize_gray(values: &mut [u8]) {
    if values.is_empty() {
        return;
    }
    let mut hist = [0usize; 256];
    for &v in values.iter() {
        hist[v as usize] += 1;
    }
    let mut cdf = [0usize; 256];
    let mut acc = 0;
    for (c, h) in cdf.iter_mut().zip(hist) {
        acc += h;
        *c = acc;
    }
    let cdf_min = cdf.iter().copied().find(|&c| c > 0).unwrap_or(0);
    let total = values.len();
    if total == cdf_min {
        return;
    }
    for v in values.iter_mut() {
        let c = cdf[*v as usize];
        *v = (((c - cdf_min) as f64 / (total - cdf_min) as f64) * 255.0).round() as u8;
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeshGate {
    pub min_observations: u32,
    pub min_weight: f64,
}

impl Default for MeshGate {
    fn default() -> Self {
        Self {
            min_observations: 1,
            min_weight: 1e-12,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum VertexKey {
    Corner(VoxelIndex),
    Edge(VoxelIndex, u8),
}

fn add(a: VoxelIndex, b: [i32; 3]) -> VoxelIndex {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

type CellOutput = Vec<([VertexKey; 3], [Vector3<f64>; 3])>;

fn extract_cell(vol: &TsdfVolume, base: VoxelIndex, gate: &MeshGate, out: &mut CellOutput) {
    let mut corners = [Voxel::default(); 8];
    let mut case = 0usize;
    for (k, off) in CORNERS.iter().enumerate() {
        let Some(v) = vol.get(add(base, *off)) else { return };
        if v.weight < gate.min_weight || v.weight <= 0.0 || v.observations < gate.min_observations {
            return;
        }
        corners[k] = *v;
        if v.distance < 0.0 {
            case |= 1 << k;
        }
    }
    let tris = &case_table()[case];
    if tris.is_empty() {
        return;
    }
    let vertex = |e: u8| -> (VertexKey, Vector3<f64>) {
        let (a, b) = EDGES[e as usize];
        let (da, db) = (corners[a].distance, corners[b].distance);
        let (ia, ib) = (add(base, CORNERS[a]), add(base, CORNERS[b]));
        let t = da / (da - db);
        if t <= 0.0 {
            (VertexKey::Corner(ia), vol.voxel_center(ia))
        } else if t >= 1.0 {
            (VertexKey::Corner(ib), vol.voxel_center(ib))
        } else {
            let axis = (0..3).find(|&k| CORNERS[a][k] != CORNERS[b][k]).unwrap() as u8;
            let (pa, pb) = (vol.voxel_center(ia), vol.voxel_center(ib));
            (VertexKey::Edge(ia, axis), pa + (pb - pa) * t)
        }
    };
    for t in tris {
        let v = t.map(vertex);
        out.push((v.map(|x| x.0), v.map(|x| x.1)));
    }
}

/// Marching cubes over the lattice of voxel centers. A cell is meshed only if
/// all eight corner voxels pass `gate`. Triangles wind counter-clockwise seen
/// from free space (positive distance).
pub fn marching_cubes(vol: &TsdfVolume, gate: &MeshGate) -> TriangleMesh {
    let mut blocks: Vec<[i32; 3]> = vol.blocks().map(|(k, _)| *k).collect();
    blocks.sort_unstable();
    let per_block: Vec<CellOutput> = blocks
        .par_iter()
        .map(|b| {
            let mut out = Vec::new();
            for z in 0..BLOCK_SIZE {
                for y in 0..BLOCK_SIZE {
                    for x in 0..BLOCK_SIZE {
                        let base = [b[0] * BLOCK_SIZE + x, b[1] * BLOCK_SIZE + y, b[2] * BLOCK_SIZE + z];
                        extract_cell(vol, base, gate, &mut out);
                    }
                }
            }
            out
        })
        .collect();

    let mut mesh = TriangleMesh::default();
    let mut ids: HashMap<VertexKey, u32> = HashMap::new();
    let area_floor = 1e-12 * vol.voxel_size() * vol.voxel_size();
    for (keys, pos) in per_block.into_iter().flatten() {
        if (pos[1] - pos[0]).cross(&(pos[2] - pos[0])).norm() <= area_floor {
            continue;
        }
        let mut tri = [0u32; 3];
        for k in 0..3 {
            tri[k] = *ids.entry(keys[k]).or_insert_with(|| {
                mesh.vertices.push(pos[k]);
                (mesh.vertices.len() - 1) as u32
            });
        }
        if tri[0] != tri[1] && tri[1] != tri[2] && tri[0] != tri[2] {
            mesh.triangles.push(tri);
        }
    }
    mesh
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tsdf::{TsdfConfig, WeightMode};
    use proptest::prelude::*;

    fn sdf_volume(v: f64, delta: f64, sdf: impl Fn(&Vector3<f64>) -> f64, extent: f64, obs: impl Fn(VoxelIndex) -> u32) -> TsdfVolume {
        let mut vol = TsdfVolume::new(TsdfConfig::new(v, delta, WeightMode::Constant(1.0)).unwrap()).unwrap();
        let n = (extent / v).ceil() as i32;
        for x in -n..n {
            for y in -n..n {
                for z in -n..n {
                    let idx = [x, y, z];
                    let d = sdf(&vol.voxel_center(idx));
                    if d.abs() <= delta {
                        vol.set_voxel(idx, Voxel { distance: d, weight: 1.0, observations: obs(idx) });
                    }
                }
            }
        }
        vol
    }

    fn sphere(r: f64) -> impl Fn(&Vector3<f64>) -> f64 {
        move |p| p.norm() - r
    }

    #[test]
    fn sphere_vertices_lie_on_the_surface() {
        let vol = sdf_volume(0.25, 1.0, sphere(5.0), 6.5, |_| 1);
        let mesh = marching_cubes(&vol, &MeshGate::default());
        assert!(mesh.triangles.len() > 1000);
        mesh.validate().unwrap();
        for p in &mesh.vertices {
            assert!((p.norm() - 5.0).abs() <= 0.25, "radius {}", p.norm());
        }
        // outward winding and watertightness
        let mut edges: HashMap<(u32, u32), usize> = HashMap::new();
        for (t, tri) in mesh.triangles.iter().enumerate() {
            let centroid = tri.iter().map(|&i| mesh.vertices[i as usize]).sum::<Vector3<f64>>() / 3.0;
            assert!(mesh.face_normal(t).dot(&centroid) > 0.0);
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                *edges.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        assert!(edges.values().all(|&c| c == 2));
    }

    #[test]
    fn sphere_mesh_survives_ply_round_trip() {
        let vol = sdf_volume(0.25, 1.0, sphere(3.0), 4.0, |_| 1);
        let mesh = marching_cubes(&vol, &MeshGate::default());
        let dir = tempfile::tempdir().unwrap();
        for (name, fmt) in [("a.ply", PlyFormat::Ascii), ("b.ply", PlyFormat::BinaryLittleEndian)] {
            let path = dir.path().join(name);
            save_ply(&path, &mesh, fmt).unwrap();
            let back = load_ply(&path).unwrap();
            assert_eq!(back.triangles, mesh.triangles);
            for (p, q) in back.vertices.iter().zip(&mesh.vertices) {
                assert!((p - q).norm() < 1e-5);
            }
        }
    }

    #[test]
    fn all_positive_volume_is_empty() {
        let vol = sdf_volume(0.5, 1.0, |_| 0.5, 2.0, |_| 1);
        assert!(marching_cubes(&vol, &MeshGate::default()).is_empty());
        let empty = TsdfVolume::new(TsdfConfig::new(0.5, 1.0, WeightMode::Constant(1.0)).unwrap()).unwrap();
        assert!(marching_cubes(&empty, &MeshGate::default()).vertices.is_empty());
    }

    #[test]
    fn gating_blocks_every_cell() {
        // every cell contains a corner with an even x+y+z, whose count is 1
        let vol = sdf_volume(0.25, 1.0, sphere(2.0), 3.0, |i| if (i[0] + i[1] + i[2]) % 2 == 0 { 1 } else { 5 });
        let gate = MeshGate { min_observations: 2, ..Default::default() };
        assert!(marching_cubes(&vol, &gate).is_empty());
        assert!(!marching_cubes(&vol, &MeshGate::default()).is_empty());
    }

    #[test]
    fn extraction_is_deterministic() {
        let vol = sdf_volume(0.2, 0.6, |p| (p - Vector3::new(0.3, -0.2, 0.1)).norm() - 1.7, 2.5, |_| 1);
        let a = marching_cubes(&vol, &MeshGate::default());
        let b = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| marching_cubes(&vol, &MeshGate::default()));
        assert_eq!(a, b);
    }

    #[test]
    fn equalization_spreads_levels() {
        let mut g = vec![10, 10, 20, 20, 30, 30, 40, 40];
        equalize_gray(&mut g);
        assert_eq!(g, vec![0, 0, 85, 85, 170, 170, 255, 255]);
        let mut flat = vec![7; 4];
        equalize_gray(&mut flat);
        assert_eq!(flat, vec![7; 4]);
    }

    proptest! {
        #[test]
        fn raising_min_obs_never_adds_vertices(seed in 0u64..200, lo in 0u32..4, extra in 1u32..3) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let counts: Vec<u32> = (0..4096).map(|_| rng.random_range(0..6)).collect();
            let vol = sdf_volume(0.25, 0.75, sphere(1.3), 2.0, |i| {
                counts[((i[0] + 8) * 256 + (i[1] + 8) * 16 + (i[2] + 8)) as usize % 4096]
            });
            let m1 = marching_cubes(&vol, &MeshGate { min_observations: lo, ..Default::default() });
            let m2 = marching_cubes(&vol, &MeshGate { min_observations: lo + extra, ..Default::default() });
            prop_assert!(m2.vertices.len() <= m1.vertices.len());
            prop_assert!(m2.triangles.len() <= m1.triangles.len());
        }
    }
}
