use nalgebra::{Matrix3, Vector3};

use super::Se3;

/// Least-squares rigid transform `T` minimizing `Σ |T·src_k − dst_k|²`
/// (no scale). Returns `None` for fewer than three pairs or when the source
/// points are collinear.
pub fn kabsch(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Option<Se3> {
    if src.len() != dst.len() || src.len() < 3 {
        return None;
    }
    let n = src.len() as f64;
    let cs = src.iter().sum::<Vector3<f64>>() / n;
    let cd = dst.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    let mut spread = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        let (a, b) = (s - cs, d - cd);
        h += b * a.transpose();
        spread += a * a.transpose();
    }
    let sv = spread.symmetric_eigenvalues();
    let (lo, hi) = (sv.min(), sv.max());
    // second-largest eigenvalue small ⇒ points on a line
    let mid = sv.sum() - lo - hi;
    if !(hi > 0.0) || mid <= 1e-12 * hi {
        return None;
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u?, svd.v_t?);
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = u * d * v_t;
    let t = cd - r * cs;
    Some(Se3::from_rotation_matrix(&r, t))
}
