use nalgebra::{DMatrix, DVector, Matrix6, Vector6};

use crate::error::{Error, Result};
use crate::geometry::hat;
use crate::geometry::Se3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EdgeKind {
    Odometry,
    Loop,
}

/// Relative measurement `Z_ij ≈ T_i⁻¹ · T_j`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GraphEdge {
    pub i: usize,
    pub j: usize,
    pub measurement: Se3,
    pub information: Matrix6<f64>,
    pub kind: EdgeKind,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GraphParams {
    pub max_iterations: usize,
    /// Stop once an accepted step changes the cost by less than this
    /// fraction.
    pub relative_tolerance: f64,
    /// Information multiplier of loop edges.
    pub loop_weight: f64,
    /// A loop edge is rejected when the optimized cost after adding it
    /// exceeds `gate_factor · max(cost before, gate_floor)`.
    pub gate_factor: f64,
    pub gate_floor: f64,
}

impl Default for GraphParams {
    fn default() -> Self {
        Self { max_iterations: 100, relative_tolerance: 1e-9, loop_weight: 10.0, gate_factor: 3.0, gate_floor: 0.01 }
    }
}

#[derive(Clone, Debug)]
pub struct GraphResult {
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub costs: Vec<f64>,
}

/// Keyframe poses (world-from-rig) and relative-pose constraints. Node 0 is
/// held fixed.
#[derive(Clone, Debug, Default)]
pub struct PoseGraph {
    pub nodes: Vec<Se3>,
    pub edges: Vec<GraphEdge>,
}

/// `ad(ξ)` for `(ω, v)` ordering.
fn small_adjoint(xi: &Vector6<f64>) -> Matrix6<f64> {
    let w = hat(&xi.fixed_rows::<3>(0).into());
    let v = hat(&xi.fixed_rows::<3>(3).into());
    let mut m = Matrix6::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&w);
    m.fixed_view_mut::<3, 3>(3, 3).copy_from(&w);
    m.fixed_view_mut::<3, 3>(3, 0).copy_from(&v);
    m
}

impl PoseGraph {
    /// Chain of odometry edges with identity information between
    /// consecutive poses.
    pub fn from_poses(poses: &[Se3]) -> Self {
        let edges = poses
            .windows(2)
            .enumerate()
            .map(|(k, w)| GraphEdge {
                i: k,
                j: k + 1,
                measurement: w[0].inverse() * w[1],
                information: Matrix6::identity(),
                kind: EdgeKind::Odometry,
            })
            .collect();
        Self { nodes: poses.to_vec(), edges }
    }

    pub fn add_loop(&mut self, i: usize, j: usize, measurement: Se3, weight: f64) {
        self.edges.push(GraphEdge { i, j, measurement, information: Matrix6::identity() * weight, kind: EdgeKind::Loop });
    }

    pub fn residual(edge: &GraphEdge, nodes: &[Se3]) -> Vector6<f64> {
        (edge.measurement.inverse() * nodes[edge.i].inverse() * nodes[edge.j]).log()
    }

    fn cost_of(&self, nodes: &[Se3]) -> f64 {
        self.edges
            .iter()
            .map(|e| {
                let r = Self::residual(e, nodes);
                0.5 * (r.transpose() * e.information * r)[0]
            })
            .sum()
    }

    pub fn cost(&self) -> f64 {
        self.cost_of(&self.nodes)
    }

    /// Connected over odometry edges alone.
    pub fn is_connected(&self) -> bool {
        if self.nodes.is_empty() {
            return false;
        }
        let mut parent: Vec<usize> = (0..self.nodes.len()).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for e in self.edges.iter().filter(|e| e.kind == EdgeKind::Odometry) {
            let (a, b) = (find(&mut parent, e.i), find(&mut parent, e.j));
            parent[a] = b;
        }
        let root = find(&mut parent, 0);
        (0..self.nodes.len()).all(|k| find(&mut parent, k) == root)
    }

    /// Residual Jacobians for right perturbations of `T_i` and `T_j`, with
    /// `J_r⁻¹(e) ≈ I + ½·ad(e)`.
    fn jacobians(edge: &GraphEdge, nodes: &[Se3], r: &Vector6<f64>) -> (Matrix6<f64>, Matrix6<f64>) {
        let jr_inv = Matrix6::identity() + small_adjoint(r) * 0.5;
        let ji = -jr_inv * (nodes[edge.j].inverse() * nodes[edge.i]).adjoint();
        (ji, jr_inv)
    }

    /// Levenberg-Marquardt over all nodes but node 0.
    pub fn optimize(&mut self, params: &GraphParams) -> Result<GraphResult> {
        if self.edges.iter().any(|e| e.i >= self.nodes.len() || e.j >= self.nodes.len() || e.i == e.j) {
            return Err(Error::invalid("pose graph edge references a missing node"));
        }
        if !self.is_connected() {
            return Err(Error::invalid("pose graph is not connected over odometry edges"));
        }
        let n = self.nodes.len() - 1;
        let mut cost = self.cost();
        let initial_cost = cost;
        let mut costs = vec![cost];
        let mut lambda = 1e-6;
        let mut iterations = 0;
        while iterations < params.max_iterations && n > 0 && cost > 0.0 {
            iterations += 1;
            let mut h = DMatrix::<f64>::zeros(6 * n, 6 * n);
            let mut g = DVector::<f64>::zeros(6 * n);
            for e in &self.edges {
                let r = Self::residual(e, &self.nodes);
                let (ji, jj) = Self::jacobians(e, &self.nodes, &r);
                let blocks = [(e.i, ji), (e.j, jj)];
                for (a, ja) in &blocks {
                    if *a == 0 {
                        continue;
                    }
                    let mut gb = g.fixed_rows_mut::<6>(6 * (a - 1));
                    gb += ja.transpose() * e.information * r;
                    for (b, jb) in &blocks {
                        if *b == 0 {
                            continue;
                        }
                        let mut hb = h.fixed_view_mut::<6, 6>(6 * (a - 1), 6 * (b - 1));
                        hb += ja.transpose() * e.information * jb;
                    }
                }
            }
            if g.amax() < 1e-12 {
                break;
            }
            let mut accepted = false;
            while lambda < 1e12 {
                let mut damped = h.clone();
                for k in 0..6 * n {
                    damped[(k, k)] += lambda * (h[(k, k)] + 1e-9);
                }
                let Some(step) = damped.cholesky().map(|c| -c.solve(&g)) else {
                    lambda *= 10.0;
                    continue;
                };
                let cand: Vec<Se3> = std::iter::once(self.nodes[0])
                    .chain((0..n).map(|k| {
                        let d = Vector6::from_iterator(step.fixed_rows::<6>(6 * k).iter().copied());
                        self.nodes[k + 1].retract(&d).renormalized()
                    }))
                    .collect();
                let c = self.cost_of(&cand);
                if c <= cost {
                    self.nodes = cand;
                    let change = (cost - c) / cost.max(f64::MIN_POSITIVE);
                    cost = c;
                    costs.push(c);
                    lambda = (lambda / 10.0).max(1e-12);
                    accepted = true;
                    if change < params.relative_tolerance {
                        return Ok(GraphResult { iterations, initial_cost, final_cost: cost, costs });
                    }
                    break;
                }
                lambda *= 10.0;
            }
            if !accepted {
                break;
            }
        }
        Ok(GraphResult { iterations, initial_cost, final_cost: cost, costs })
    }

    /// Adds loop edges one at a time, re-optimizing after each, and drops any
    /// edge that inflates the cost past the gate. Returns the indices (into
    /// `loops`) of accepted edges.
    pub fn add_loops_gated(&mut self, loops: &[(usize, usize, Se3)], params: &GraphParams) -> Result<Vec<usize>> {
        self.optimize(params)?;
        let mut accepted = Vec::new();
        for (k, &(i, j, z)) in loops.iter().enumerate() {
            let before_nodes = self.nodes.clone();
            let before = self.cost();
            self.add_loop(i, j, z, params.loop_weight);
            self.optimize(params)?;
            let after = self.cost();
            if after > params.gate_factor * before.max(params.gate_floor) {
                log::info!("loop edge {i}->{j} rejected: cost {before:.3e} -> {after:.3e}");
                self.edges.pop();
                self.nodes = before_nodes;
            } else {
                accepted.push(k);
            }
        }
        Ok(accepted)
    }
}
