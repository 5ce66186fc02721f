use nalgebra::Vector3;

use super::VoxelIndex;

#[inline]
pub fn voxel_of(p: &Vector3<f64>, voxel_size: f64) -> VoxelIndex {
    [0, 1, 2].map(|a| (p[a] / voxel_size).floor() as i32)
}

/// Visits every voxel pierced by the segment `a → b` once, in order from `a`
/// (exact grid stepping).
pub fn traverse_segment(a: &Vector3<f64>, b: &Vector3<f64>, voxel_size: f64, mut visit: impl FnMut(VoxelIndex)) {
    let dir = b - a;
    let mut idx = voxel_of(a, voxel_size);
    let last = voxel_of(b, voxel_size);
    let mut step = [0i32; 3];
    let mut t_max = [f64::INFINITY; 3];
    let mut t_delta = [f64::INFINITY; 3];
    for ax in 0..3 {
        if dir[ax] > 0.0 {
            step[ax] = 1;
            t_max[ax] = ((idx[ax] + 1) as f64 * voxel_size - a[ax]) / dir[ax];
            t_delta[ax] = voxel_size / dir[ax];
        } else if dir[ax] < 0.0 {
            step[ax] = -1;
            t_max[ax] = (idx[ax] as f64 * voxel_size - a[ax]) / dir[ax];
            t_delta[ax] = -voxel_size / dir[ax];
        }
    }
    let max_steps: i64 = (0..3).map(|ax| (last[ax] as i64 - idx[ax] as i64).abs()).sum::<i64>() + 3;
    visit(idx);
    for _ in 0..max_steps {
        let ax = if t_max[0] < t_max[1] {
            if t_max[0] < t_max[2] { 0 } else { 2 }
        } else if t_max[1] < t_max[2] {
            1
        } else {
            2
        };
        if t_max[ax] >= 1.0 {
            break;
        }
        idx[ax] += step[ax];
        t_max[ax] += t_delta[ax];
        visit(idx);
    }
}
