use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, Matrix6x3, RowVector3, SMatrix, Vector3, Vector6};

use super::ransac::Correspondence;
use super::residual::{reprojection, Bearing, Huber};
use crate::error::{Error, Result};
use crate::geometry::{Rig, Se3};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BaParams {
    /// Huber threshold on the angular residual (radians).
    pub huber_delta: f64,
    pub max_iterations: usize,
    /// Convergence threshold on the update norm.
    pub tolerance: f64,
    /// Weight of the relative range prior on depth-backed landmarks.
    pub prior_weight: f64,
}

impl Default for BaParams {
    fn default() -> Self {
        Self {
            huber_delta: 1f64.to_radians(),
            max_iterations: 20,
            tolerance: 1e-8,
            prior_weight: 0.1,
        }
    }
}

const MAX_LAMBDA: f64 = 1e10;

#[derive(Clone, Debug)]
pub struct PoseBaResult {
    pub pose: Se3,
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    /// Robust cost after every accepted step, starting with the initial cost.
    pub costs: Vec<f64>,
    pub converged: bool,
    /// Damping escalation failed to find a descent step.
    pub stalled: bool,
}

fn pose_cost(rig: &Rig, pose: &Se3, corr: &[Correspondence], kernel: &Huber) -> f64 {
    corr.iter()
        .map(|c| kernel.cost(reprojection(pose, &rig.cameras[c.cam].cam_to_rig, &c.bearing, &c.world).0.norm()))
        .sum()
}

/// Stacked residuals and pose Jacobian (right perturbation) of all
/// correspondences, unweighted.
pub fn pose_only_jacobian(rig: &Rig, pose: &Se3, corr: &[Correspondence]) -> (DVector<f64>, DMatrix<f64>) {
    let mut r = DVector::zeros(2 * corr.len());
    let mut j = DMatrix::zeros(2 * corr.len(), 6);
    for (k, c) in corr.iter().enumerate() {
        let (rk, jp, _) = reprojection(pose, &rig.cameras[c.cam].cam_to_rig, &c.bearing, &c.world);
        r.fixed_rows_mut::<2>(2 * k).copy_from(&rk);
        j.fixed_view_mut::<2, 6>(2 * k, 0).copy_from(&jp);
    }
    (r, j)
}

/// Robust Gauss-Newton on the rig pose with Levenberg damping when a step
/// fails to lower the cost.
pub fn pose_only_ba(rig: &Rig, init: &Se3, corr: &[Correspondence], params: &BaParams) -> Result<PoseBaResult> {
    if corr.len() < 6 {
        return Err(Error::InsufficientData(format!("{} correspondences for pose-only BA", corr.len())));
    }
    let kernel = Huber { delta: params.huber_delta };
    let mut pose = *init;
    let mut cost = pose_cost(rig, &pose, corr, &kernel);
    let initial_cost = cost;
    let mut costs = vec![cost];
    let mut lambda = 0.0;
    let (mut converged, mut stalled) = (false, false);
    let mut iterations = 0;
    while iterations < params.max_iterations && !converged && !stalled {
        iterations += 1;
        let mut h = Matrix6::zeros();
        let mut g = Vector6::zeros();
        for c in corr {
            let (r, jp, _) = reprojection(&pose, &rig.cameras[c.cam].cam_to_rig, &c.bearing, &c.world);
            let w = kernel.weight(r.norm());
            h += jp.transpose() * jp * w;
            g += jp.transpose() * r * w;
        }
        loop {
            let mut damped = h;
            for k in 0..6 {
                damped[(k, k)] += lambda * (h[(k, k)] + 1e-9);
            }
            let Some(step) = damped.cholesky().map(|ch| -ch.solve(&g)) else {
                lambda = if lambda == 0.0 { 1e-4 } else { lambda * 10.0 };
                if lambda > MAX_LAMBDA {
                    stalled = true;
                    break;
                }
                continue;
            };
            if step.norm() < params.tolerance {
                converged = true;
                break;
            }
            let cand = pose.retract(&step).renormalized();
            let c = pose_cost(rig, &cand, corr, &kernel);
            if c <= cost {
                pose = cand;
                cost = c;
                costs.push(c);
                lambda = if lambda < 1e-9 { 0.0 } else { lambda / 10.0 };
                break;
            }
            lambda = if lambda == 0.0 { 1e-4 } else { lambda * 10.0 };
            if lambda > MAX_LAMBDA {
                stalled = true;
                break;
            }
        }
    }
    if stalled && costs.len() == 1 {
        log::warn!("pose-only BA found no descent step; keeping the initial pose");
    }
    Ok(PoseBaResult { pose, iterations, initial_cost, final_cost: cost, costs, converged, stalled })
}

/// Prior tying a landmark's distance from an anchor keyframe's rig origin to
/// the range measured by that keyframe's depth map.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RangePrior {
    pub anchor: usize,
    pub range: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct BaObservation {
    pub keyframe: usize,
    pub landmark: usize,
    pub cam: usize,
    pub bearing: Bearing,
}

/// A window of keyframes and the landmarks they observe.
#[derive(Clone, Debug, Default)]
pub struct LocalBaProblem {
    /// World-from-rig poses.
    pub keyframes: Vec<Se3>,
    pub fixed: Vec<bool>,
    pub landmarks: Vec<Vector3<f64>>,
    pub priors: Vec<Option<RangePrior>>,
    pub observations: Vec<BaObservation>,
}

#[derive(Clone, Debug)]
pub struct LocalBaResult {
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub costs: Vec<f64>,
    pub stalled: bool,
    /// Landmarks that took part in the optimization.
    pub active: Vec<bool>,
}

/// Range prior residual `w·(|X − O| − range)/range` with Jacobians for a
/// right perturbation of the anchor pose and for the landmark.
pub fn range_prior(anchor: &Se3, x: &Vector3<f64>, range: f64, weight: f64) -> (f64, SMatrix<f64, 1, 6>, RowVector3<f64>) {
    let d = x - anchor.translation;
    let n = d.norm();
    let s = weight / range;
    let dir = if n > 0.0 { d / n } else { Vector3::zeros() };
    let jx = dir.transpose() * s;
    let mut ja = SMatrix::<f64, 1, 6>::zeros();
    ja.fixed_view_mut::<1, 3>(0, 3).copy_from(&(-jx * anchor.rotation_matrix()));
    (s * (n - range), ja, jx)
}

impl LocalBaProblem {
    fn active_landmarks(&self) -> Vec<bool> {
        let mut count = vec![0usize; self.landmarks.len()];
        for o in &self.observations {
            count[o.landmark] += 1;
        }
        (0..self.landmarks.len())
            .map(|l| count[l] >= 2 || (count[l] >= 1 && self.priors[l].is_some()))
            .collect()
    }

    fn cost_with(&self, kf: &[Se3], lm: &[Vector3<f64>], rig: &Rig, active: &[bool], p: &BaParams) -> f64 {
        let kernel = Huber { delta: p.huber_delta };
        let mut c = 0.0;
        for o in self.observations.iter().filter(|o| active[o.landmark]) {
            let r = reprojection(&kf[o.keyframe], &rig.cameras[o.cam].cam_to_rig, &o.bearing, &lm[o.landmark]).0;
            c += kernel.cost(r.norm());
        }
        for (l, prior) in self.priors.iter().enumerate() {
            if let (Some(pr), true) = (prior, active[l]) {
                let r = range_prior(&kf[pr.anchor], &lm[l], pr.range, p.prior_weight).0;
                c += 0.5 * r * r;
            }
        }
        c
    }

    pub fn cost(&self, rig: &Rig, params: &BaParams) -> f64 {
        self.cost_with(&self.keyframes, &self.landmarks, rig, &self.active_landmarks(), params)
    }

    fn free_index(&self) -> Vec<Option<usize>> {
        let mut next = 0;
        self.fixed
            .iter()
            .map(|&f| {
                (!f).then(|| {
                    next += 1;
                    next - 1
                })
            })
            .collect()
    }

    /// Unweighted stacked residuals (observations, then priors) and the dense
    /// Jacobian over free keyframe poses followed by active landmarks.
    pub fn dense_jacobian(&self, rig: &Rig, params: &BaParams) -> (DVector<f64>, DMatrix<f64>) {
        let active = self.active_landmarks();
        let free = self.free_index();
        let n_pose = free.iter().flatten().count();
        let mut lm_col = vec![None; self.landmarks.len()];
        let mut next = 6 * n_pose;
        for (l, a) in active.iter().enumerate() {
            if *a {
                lm_col[l] = Some(next);
                next += 3;
            }
        }
        let obs: Vec<&BaObservation> = self.observations.iter().filter(|o| active[o.landmark]).collect();
        let priors: Vec<(usize, RangePrior)> = self
            .priors
            .iter()
            .enumerate()
            .filter_map(|(l, p)| p.filter(|_| active[l]).map(|p| (l, p)))
            .collect();
        let rows = 2 * obs.len() + priors.len();
        let mut r = DVector::zeros(rows);
        let mut j = DMatrix::zeros(rows, next);
        for (k, o) in obs.iter().enumerate() {
            let (rk, jp, jx) = reprojection(&self.keyframes[o.keyframe], &rig.cameras[o.cam].cam_to_rig, &o.bearing, &self.landmarks[o.landmark]);
            r.fixed_rows_mut::<2>(2 * k).copy_from(&rk);
            if let Some(p) = free[o.keyframe] {
                j.fixed_view_mut::<2, 6>(2 * k, 6 * p).copy_from(&jp);
            }
            j.fixed_view_mut::<2, 3>(2 * k, lm_col[o.landmark].unwrap()).copy_from(&jx);
        }
        for (k, (l, pr)) in priors.iter().enumerate() {
            let row = 2 * obs.len() + k;
            let (rk, ja, jx) = range_prior(&self.keyframes[pr.anchor], &self.landmarks[*l], pr.range, params.prior_weight);
            r[row] = rk;
            if let Some(p) = free[pr.anchor] {
                j.fixed_view_mut::<1, 6>(row, 6 * p).copy_from(&ja);
            }
            j.fixed_view_mut::<1, 3>(row, lm_col[*l].unwrap()).copy_from(&jx);
        }
        (r, j)
    }

    /// Joint robust Gauss-Newton over free poses and active landmarks, with
    /// landmarks eliminated by the Schur complement. Poses and landmarks are
    /// updated in place; the robust cost never increases.
    pub fn optimize(&mut self, rig: &Rig, params: &BaParams) -> Result<LocalBaResult> {
        if self.keyframes.len() < 2 || self.fixed.len() != self.keyframes.len() || self.priors.len() != self.landmarks.len() {
            return Err(Error::invalid("local BA needs at least two keyframes and consistent arrays"));
        }
        if !self.fixed.iter().any(|&f| f) {
            return Err(Error::invalid("local BA needs a fixed keyframe for the gauge"));
        }
        let kernel = Huber { delta: params.huber_delta };
        let active = self.active_landmarks();
        let free = self.free_index();
        let np = free.iter().flatten().count();
        let nl = self.landmarks.len();
        let mut cost = self.cost_with(&self.keyframes, &self.landmarks, rig, &active, params);
        let initial_cost = cost;
        let mut costs = vec![cost];
        let mut lambda = 0.0;
        let mut stalled = false;
        let mut iterations = 0;
        let mut converged = false;
        while iterations < params.max_iterations && !converged && !stalled {
            iterations += 1;
            let mut hpp = DMatrix::<f64>::zeros(6 * np, 6 * np);
            let mut gp = DVector::<f64>::zeros(6 * np);
            let mut hll = vec![Matrix3::<f64>::zeros(); nl];
            let mut gl = vec![Vector3::<f64>::zeros(); nl];
            // per landmark: (free pose index, 6×3 block)
            let mut hpl: Vec<Vec<(usize, Matrix6x3<f64>)>> = vec![Vec::new(); nl];
            let mut add_pl = |l: usize, p: usize, m: Matrix6x3<f64>| match hpl[l].iter_mut().find(|(q, _)| *q == p) {
                Some((_, acc)) => *acc += m,
                None => hpl[l].push((p, m)),
            };
            for o in self.observations.iter().filter(|o| active[o.landmark]) {
                let (r, jp, jx) = reprojection(&self.keyframes[o.keyframe], &rig.cameras[o.cam].cam_to_rig, &o.bearing, &self.landmarks[o.landmark]);
                let w = kernel.weight(r.norm());
                hll[o.landmark] += jx.transpose() * jx * w;
                gl[o.landmark] += jx.transpose() * r * w;
                if let Some(p) = free[o.keyframe] {
                    let mut blk = hpp.fixed_view_mut::<6, 6>(6 * p, 6 * p);
                    blk += jp.transpose() * jp * w;
                    let mut gb = gp.fixed_rows_mut::<6>(6 * p);
                    gb += jp.transpose() * r * w;
                    add_pl(o.landmark, p, jp.transpose() * jx * w);
                }
            }
            for (l, prior) in self.priors.iter().enumerate() {
                let Some(pr) = prior.filter(|_| active[l]) else { continue };
                let (r, ja, jx) = range_prior(&self.keyframes[pr.anchor], &self.landmarks[l], pr.range, params.prior_weight);
                hll[l] += jx.transpose() * jx;
                gl[l] += jx.transpose() * r;
                if let Some(p) = free[pr.anchor] {
                    let mut blk = hpp.fixed_view_mut::<6, 6>(6 * p, 6 * p);
                    blk += ja.transpose() * ja;
                    let mut gb = gp.fixed_rows_mut::<6>(6 * p);
                    gb += ja.transpose() * r;
                    add_pl(l, p, ja.transpose() * jx);
                }
            }
            loop {
                let mut s = hpp.clone();
                for k in 0..6 * np {
                    s[(k, k)] += lambda * (hpp[(k, k)] + 1e-9);
                }
                let mut b = -gp.clone();
                let mut hll_inv = vec![None; nl];
                for l in 0..nl {
                    if !active[l] {
                        continue;
                    }
                    let mut c = hll[l];
                    for k in 0..3 {
                        c[(k, k)] += lambda * (hll[l][(k, k)] + 1e-9);
                    }
                    let Some(ci) = c.try_inverse() else { continue };
                    for (p, m) in &hpl[l] {
                        let mc = m * ci;
                        let mut bp = b.fixed_rows_mut::<6>(6 * p);
                        bp -= mc * (-gl[l]);
                        for (q, n) in &hpl[l] {
                            let mut sb = s.fixed_view_mut::<6, 6>(6 * p, 6 * q);
                            sb -= mc * n.transpose();
                        }
                    }
                    hll_inv[l] = Some(ci);
                }
                let dp = if np == 0 {
                    Some(DVector::zeros(0))
                } else {
                    s.clone().cholesky().map(|ch| ch.solve(&b)).or_else(|| s.lu().solve(&b))
                };
                let Some(dp) = dp.filter(|d| d.iter().all(|x| x.is_finite())) else {
                    lambda = if lambda == 0.0 { 1e-4 } else { lambda * 10.0 };
                    if lambda > MAX_LAMBDA {
                        stalled = true;
                        break;
                    }
                    continue;
                };
                let mut dl = vec![Vector3::zeros(); nl];
                for l in 0..nl {
                    if let Some(ci) = hll_inv[l] {
                        let mut rhs = -gl[l];
                        for (p, m) in &hpl[l] {
                            rhs -= m.transpose() * dp.fixed_rows::<6>(6 * p);
                        }
                        dl[l] = ci * rhs;
                    }
                }
                let step_norm = (dp.norm_squared() + dl.iter().map(|d| d.norm_squared()).sum::<f64>()).sqrt();
                if step_norm < params.tolerance {
                    converged = true;
                    break;
                }
                let kf: Vec<Se3> = self
                    .keyframes
                    .iter()
                    .zip(&free)
                    .map(|(t, f)| match f {
                        Some(p) => t.retract(&Vector6::from_iterator(dp.fixed_rows::<6>(6 * p).iter().copied())).renormalized(),
                        None => *t,
                    })
                    .collect();
                let lm: Vec<Vector3<f64>> = self.landmarks.iter().zip(&dl).map(|(x, d)| x + d).collect();
                let c = self.cost_with(&kf, &lm, rig, &active, params);
                if c <= cost {
                    self.keyframes = kf;
                    self.landmarks = lm;
                    cost = c;
                    costs.push(c);
                    lambda = if lambda < 1e-9 { 0.0 } else { lambda / 10.0 };
                    break;
                }
                lambda = if lambda == 0.0 { 1e-4 } else { lambda * 10.0 };
                if lambda > MAX_LAMBDA {
                    stalled = true;
                    break;
                }
            }
        }
        if stalled && costs.len() == 1 {
            log::warn!("local BA found no descent step; window left unchanged");
        }
        Ok(LocalBaResult { iterations, initial_cost, final_cost: cost, costs, stalled, active })
    }
}

#[cfg(test)]
mod tests {
    use super::super::ransac::tests::{synthetic, test_rig};
    use super::super::residual::tests::relative_error;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn perturb(pose: &Se3, rot_deg: f64, trans: f64, rng: &mut impl Rng) -> Se3 {
        let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).normalize();
        let dir = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).normalize();
        let mut d = Vector6::zeros();
        d.fixed_rows_mut::<3>(0).copy_from(&(axis * rot_deg.to_radians()));
        d.fixed_rows_mut::<3>(3).copy_from(&(dir * trans));
        pose.retract(&d)
    }

    #[test]
    fn pose_ba_fixed_point() {
        let rig = test_rig();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pose = Se3::exp(&Vector6::new(0.2, -0.4, 0.1, 1.0, 0.0, 2.0));
        let corr = synthetic(&mut rng, &rig, &pose, 40, 0);
        let res = pose_only_ba(&rig, &pose, &corr, &BaParams::default()).unwrap();
        assert!(res.converged);
        assert_eq!(res.iterations, 1);
        assert_eq!(res.costs.len(), 1);
        assert_eq!(res.pose, pose);
    }

    #[test]
    fn pose_ba_recovers_perturbed_pose() {
        let rig = test_rig();
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pose = Se3::exp(&Vector6::from_fn(|_, _| rng.random_range(-1.0..1.0)));
            let corr = synthetic(&mut rng, &rig, &pose, 50, 0);
            let init = perturb(&pose, 2.0, 0.1, &mut rng);
            let res = pose_only_ba(&rig, &init, &corr, &BaParams::default()).unwrap();
            assert!((res.pose.inverse() * pose).rotation_angle() < 1e-6);
            assert!((res.pose.translation - pose.translation).norm() < 1e-6);
            assert!(res.costs.windows(2).all(|w| w[1] <= w[0]));
            assert!(res.final_cost <= res.initial_cost);
        }
    }

    #[test]
    fn pose_ba_jacobian_matches_finite_differences() {
        let rig = test_rig();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let h = 1e-6;
        for _ in 0..200 {
            let pose = Se3::exp(&Vector6::from_fn(|_, _| rng.random_range(-1.0..1.0)));
            let corr = synthetic(&mut rng, &rig, &pose, 6, 2);
            let eval = perturb(&pose, 1.0, 0.05, &mut rng);
            let (_, ja) = pose_only_jacobian(&rig, &eval, &corr);
            let mut num = DMatrix::zeros(ja.nrows(), 6);
            for k in 0..6 {
                let mut d = Vector6::zeros();
                d[k] = h;
                let rp = pose_only_jacobian(&rig, &eval.retract(&d), &corr).0;
                let rm = pose_only_jacobian(&rig, &eval.retract(&-d), &corr).0;
                num.set_column(k, &((rp - rm) / (2.0 * h)));
            }
            assert!(relative_error(&ja, &num) < 1e-5);
        }
    }

    /// Window of `k` keyframes moving along +x observing `n` landmarks.
    pub(crate) fn window(rng: &mut impl Rng, k: usize, n: usize, noise_deg: f64, with_priors: bool) -> (LocalBaProblem, Vec<Se3>, Vec<Vector3<f64>>) {
        let rig = test_rig();
        let poses: Vec<Se3> = (0..k)
            .map(|i| Se3::new(Se3::yaw(0.05 * i as f64), Vector3::new(0.3 * i as f64, 0.0, 0.1 * i as f64)))
            .collect();
        let points: Vec<Vector3<f64>> = (0..n)
            .map(|_| {
                let a = rng.random_range(0.0..std::f64::consts::TAU);
                Vector3::new(4.0 * a.cos() + 0.6, rng.random_range(-1.0..1.0), 4.0 * a.sin())
            })
            .collect();
        let noise = Normal::new(0.0, noise_deg.to_radians().max(1e-300)).unwrap();
        let mut obs = Vec::new();
        for (ki, pose) in poses.iter().enumerate() {
            for (l, x) in points.iter().enumerate() {
                let x_r = pose.inverse().transform_point(x);
                for (c, cam) in rig.cameras.iter().enumerate() {
                    let x_c = cam.cam_to_rig.inverse().transform_point(&x_r);
                    if x_c.z <= 0.3 * x_c.norm() {
                        continue;
                    }
                    let mut b = x_c.normalize();
                    if noise_deg > 0.0 {
                        let t = super::super::residual::tangent_basis(&b);
                        b = (b + t * nalgebra::Vector2::new(noise.sample(rng), noise.sample(rng))).normalize();
                    }
                    obs.push(BaObservation { keyframe: ki, landmark: l, cam: c, bearing: Bearing::new(&b) });
                    break;
                }
            }
        }
        let priors = points
            .iter()
            .map(|x| with_priors.then(|| RangePrior { anchor: 0, range: (x - poses[0].translation).norm() }))
            .collect();
        let mut fixed = vec![false; k];
        fixed[0] = true;
        let prob = LocalBaProblem { keyframes: poses.clone(), fixed, landmarks: points.clone(), priors, observations: obs };
        (prob, poses, points)
    }

    #[test]
    fn local_ba_fixed_point() {
        let rig = test_rig();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (mut prob, poses, points) = window(&mut rng, 5, 50, 0.0, true);
        let res = prob.optimize(&rig, &BaParams::default()).unwrap();
        assert_eq!(res.costs.len(), 1);
        assert_eq!(prob.keyframes, poses);
        assert_eq!(prob.landmarks, points);
    }

    fn window_ate(est: &[Se3], truth: &[Se3]) -> f64 {
        (est.iter().zip(truth).map(|(a, b)| (a.translation - b.translation).norm_squared()).sum::<f64>() / est.len() as f64).sqrt()
    }

    #[test]
    fn local_ba_reduces_window_error() {
        let rig = test_rig();
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let (mut prob, poses, points) = window(&mut rng, 5, 50, 0.05, true);
            for i in 1..5 {
                prob.keyframes[i] = perturb(&poses[i], 0.5, 0.05, &mut rng);
            }
            for x in prob.landmarks.iter_mut() {
                *x += Vector3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1));
            }
            let before = window_ate(&prob.keyframes, &poses);
            let res = prob.optimize(&rig, &BaParams::default()).unwrap();
            let after = window_ate(&prob.keyframes, &poses);
            assert!(after < before, "{after} !< {before}");
            assert!(res.costs.windows(2).all(|w| w[1] <= w[0]));
            assert!(prob.landmarks.iter().zip(&points).all(|(a, b)| (a - b).norm() < 0.2));
        }
    }

    #[test]
    fn single_view_landmarks_without_depth_are_excluded() {
        let rig = test_rig();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (mut prob, _, _) = window(&mut rng, 3, 10, 0.0, false);
        let lone = Vector3::new(0.0, 0.0, 5.0);
        prob.landmarks.push(lone + Vector3::new(0.3, 0.0, 0.0));
        prob.priors.push(None);
        let b = rig.cameras[1].cam_to_rig.inverse().transform_point(&lone);
        prob.observations.push(BaObservation { keyframe: 2, landmark: 10, cam: 1, bearing: Bearing::new(&b) });
        prob.keyframes[1] = prob.keyframes[1].retract(&Vector6::new(0.0, 0.01, 0.0, 0.02, 0.0, 0.0));
        let res = prob.optimize(&rig, &BaParams::default()).unwrap();
        assert!(!res.active[10]);
        assert_eq!(prob.landmarks[10], lone + Vector3::new(0.3, 0.0, 0.0));
    }

    #[test]
    fn local_ba_jacobian_matches_finite_differences() {
        let rig = test_rig();
        let params = BaParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let h = 1e-6;
        for _ in 0..50 {
            let (mut prob, _, _) = window(&mut rng, 3, 6, 1.0, true);
            for i in 1..3 {
                prob.keyframes[i] = perturb(&prob.keyframes[i], 1.0, 0.05, &mut rng);
            }
            let (_, ja) = prob.dense_jacobian(&rig, &params);
            let mut num = DMatrix::zeros(ja.nrows(), ja.ncols());
            for col in 0..ja.ncols() {
                let shift = |sgn: f64| {
                    let mut p = prob.clone();
                    if col < 12 {
                        let mut d = Vector6::zeros();
                        d[col % 6] = sgn * h;
                        let kf = 1 + col / 6;
                        p.keyframes[kf] = p.keyframes[kf].retract(&d);
                    } else {
                        let l = (col - 12) / 3;
                        p.landmarks[l][(col - 12) % 3] += sgn * h;
                    }
                    p.dense_jacobian(&rig, &params).0
                };
                num.set_column(col, &((shift(1.0) - shift(-1.0)) / (2.0 * h)));
            }
            assert!(relative_error(&ja, &num) < 1e-5, "{}", relative_error(&ja, &num));
        }
    }
}
