//! Pipeline stages. Every stage reads its inputs from and writes its outputs
//! to disk, so each can run on its own and a run resumes from whatever a
//! previous run left behind.
//!
//! Output directory layout:
//! `depth/<frame>.pfm` (inverse-depth index maps), `odom_traj.txt`,
//! `keyframes.txt`, `keyframe_data.txt`, `odom_status.txt`,
//! `loop_edges.txt`, `corrected_traj.txt`, `volume.tsdf`, `fuse_info.txt`,
//! `mesh.ply`, `metrics.txt`, `curves.csv`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use omnimap_core::eval::{
    accuracy, align_trajectories, ate_rmse, completeness, depth_index_error, distance_curve, mean_abs_index_error, start_to_end, MetricReport,
    DEFAULT_ASSOCIATION_TOLERANCE,
};
use omnimap_core::geometry::depth_to_pointcloud;
use omnimap_core::io::pfm::sidecar_path;
use omnimap_core::io::trajectory::{format_keyframe_ids, Trajectory};
use omnimap_core::loop_closing::{correct_keyframes, find_loops, format_loop_edges, parse_loop_edges, propagate_correction};
use omnimap_core::mesh::{load_ply, marching_cubes, save_ply, MeshGate, PlyFormat};
use omnimap_core::odometry::{FrameStatus, Odometry};
use omnimap_core::sweep::{build_sweep_table, compute_cost_volume, depth_to_index_map, index_to_depth, regress_inverse_depth, HypothesisSet, InverseDepthMap};
use omnimap_core::tsdf::{load_volume, save_volume, TsdfVolume};
use omnimap_core::{DepthMap, Se3};

use crate::config::{DepthSource, KeyframeSource, PipelineConfig, PoseSource, SceneKind};
use crate::dataset::{
    apply_masks, confidence_path, depth_path, format_keyframes, load_confidence, load_depth, load_frame_ids, load_images, load_masks, load_rig,
    load_tracks, load_trajectory, parse_keyframes, read_text, save_confidence, save_dataset, write_text,
};
use crate::error::{PipelineError, Result};
use crate::render::{synthesize, Dataset};
use crate::scene::{sphere_room, square_loop_room, Scene};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Depth,
    Odometry,
    Loop,
    Fuse,
    Mesh,
    Eval,
}

impl Stage {
    pub const ALL: [Stage; 6] = [Stage::Depth, Stage::Odometry, Stage::Loop, Stage::Fuse, Stage::Mesh, Stage::Eval];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Depth => "depth",
            Stage::Odometry => "odom",
            Stage::Loop => "loop",
            Stage::Fuse => "fuse",
            Stage::Mesh => "mesh",
            Stage::Eval => "eval",
        }
    }
}

/// Output file locations.
#[derive(Clone, Debug)]
pub struct Outputs {
    pub dir: PathBuf,
}

impl Outputs {
    pub fn new(dir: &Path) -> Self {
        Self { dir: dir.to_path_buf() }
    }
    pub fn depth_dir(&self) -> PathBuf {
        self.dir.join("depth")
    }
    pub fn odom_traj(&self) -> PathBuf {
        self.dir.join("odom_traj.txt")
    }
    pub fn keyframes(&self) -> PathBuf {
        self.dir.join("keyframes.txt")
    }
    pub fn keyframe_data(&self) -> PathBuf {
        self.dir.join("keyframe_data.txt")
    }
    pub fn odom_status(&self) -> PathBuf {
        self.dir.join("odom_status.txt")
    }
    pub fn loop_edges(&self) -> PathBuf {
        self.dir.join("loop_edges.txt")
    }
    pub fn corrected_traj(&self) -> PathBuf {
        self.dir.join("corrected_traj.txt")
    }
    pub fn volume(&self) -> PathBuf {
        self.dir.join("volume.tsdf")
    }
    pub fn fuse_info(&self) -> PathBuf {
        self.dir.join("fuse_info.txt")
    }
    pub fn mesh(&self) -> PathBuf {
        self.dir.join("mesh.ply")
    }
    pub fn metrics(&self) -> PathBuf {
        self.dir.join("metrics.txt")
    }
    pub fn curves(&self) -> PathBuf {
        self.dir.join("curves.csv")
    }
    pub fn timings(&self) -> PathBuf {
        self.dir.join("timings.txt")
    }
}

/// Runs `f` on a pool of `workers` threads (0 keeps the global pool).
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if workers == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| PipelineError::Config(format!("cannot start {workers} workers: {e}")))?;
    Ok(pool.install(f))
}

/// Frames with depth: the dataset's list when present, else every
/// `depth_every`-th frame of the track table.
pub fn depth_frames(cfg: &PipelineConfig) -> Result<Vec<u32>> {
    let listed = cfg.paths.depth_frames();
    if listed.exists() {
        return load_frame_ids(&listed);
    }
    let last = load_tracks(&cfg.paths.tracks())?.last_frame().unwrap_or(0);
    Ok((0..=last).step_by(cfg.odometry.depth_every).collect())
}

fn frame_of(timestamp: f64, interval: f64) -> u32 {
    (timestamp / interval).round().max(0.0) as u32
}

/// Frame-indexed poses of a trajectory file.
pub fn poses_by_frame(traj: &Trajectory, interval: f64) -> BTreeMap<u32, Se3> {
    traj.poses.iter().map(|p| (frame_of(p.timestamp, interval), p.pose)).collect()
}

/// Depth map in meters for `frame`, from the sweep output or ground truth.
/// Samples beyond `max_depth` become NaN.
pub fn frame_depth(cfg: &PipelineConfig, out: &Outputs, frame: u32) -> Result<DepthMap> {
    let mut depth = match cfg.fuse.depth {
        DepthSource::GroundTruth => load_depth(&cfg.paths.gt_depth(), frame)?,
        DepthSource::Estimated => {
            let p = depth_path(&out.depth_dir(), frame);
            let mut map = InverseDepthMap::load(&p).map_err(PipelineError::file(&p))?;
            if cfg.sweep.min_confidence > 0.0 {
                let conf = load_confidence(&confidence_path(&out.depth_dir(), frame), &map.grid)?;
                for (n, c) in map.index.iter_mut().zip(conf) {
                    if !(c >= cfg.sweep.min_confidence) {
                        *n = f64::NAN;
                    }
                }
            }
            index_to_depth(&map, cfg.sweep.far_cap)
        }
    };
    for d in &mut depth.data {
        if !(*d <= cfg.tsdf.max_depth) {
            *d = f64::NAN;
        }
    }
    Ok(depth)
}

/// Spherical sweep for every depth frame without a saved map.
pub fn run_depth(cfg: &PipelineConfig, out: &Outputs) -> Result<usize> {
    let stage = PipelineError::stage("depth");
    let rig = load_rig(&cfg.paths.calibration())?;
    let frames = depth_frames(cfg)?;
    let dir = out.depth_dir();
    fs::create_dir_all(&dir).map_err(PipelineError::file(&dir))?;
    let todo: Vec<u32> = frames.into_iter().filter(|f| !depth_path(&dir, *f).exists()).collect();
    if todo.is_empty() {
        return Ok(0);
    }
    let hyp = HypothesisSet::from_grid(&cfg.grid).map_err(stage)?;
    let table = build_sweep_table(&rig, &cfg.grid, &hyp);
    let masks = cfg.paths.masks.as_deref().map(load_masks).transpose()?;
    for &f in &todo {
        let mut images = load_images(&cfg.paths.images(), f)?;
        if let Some(m) = &masks {
            apply_masks(&mut images, m)?;
        }
        let vol = compute_cost_volume(&images, &rig, &table, &cfg.sweep.cost).map_err(PipelineError::stage("depth"))?;
        let map = regress_inverse_depth(&vol, &cfg.grid, cfg.sweep.temperature).map_err(PipelineError::stage("depth"))?;
        // write then rename so a killed run leaves no partial map behind
        let target = depth_path(&dir, f);
        let tmp = dir.join(format!("{f:05}.partial.pfm"));
        save_confidence(&confidence_path(&dir, f), &cfg.grid, &map.confidence)?;
        map.save(&tmp).map_err(PipelineError::file(&tmp))?;
        fs::rename(sidecar_path(&tmp), sidecar_path(&target)).map_err(PipelineError::file(&target))?;
        fs::rename(&tmp, &target).map_err(PipelineError::file(&target))?;
        log::info!("depth frame {f} done");
    }
    Ok(todo.len())
}

/// The configured synthetic scene.
pub fn synth_scene(cfg: &PipelineConfig) -> Scene {
    let s = &cfg.synth;
    match s.scene {
        SceneKind::SquareLoop => square_loop_room(s.frames, s.total_yaw, s.seed),
        SceneKind::SphereRoom => sphere_room(s.sphere_radius, s.frames, s.seed),
    }
}

/// Renders the configured scene and writes it as a dataset to
/// `paths.dataset`.
pub fn run_synth(cfg: &PipelineConfig) -> Result<Dataset> {
    let data = with_workers(cfg.workers, || synthesize(&synth_scene(cfg), &cfg.synth_params()?))??;
    save_dataset(&cfg.paths.dataset, &data, cfg.odometry.tracker.frame_interval)?;
    Ok(data)
}

/// Tracks every frame; depth maps are attached on depth frames.
pub fn run_odometry(cfg: &PipelineConfig, out: &Outputs) -> Result<()> {
    let rig = load_rig(&cfg.paths.calibration())?;
    let tracks = load_tracks(&cfg.paths.tracks())?;
    let with_depth: BTreeSet<u32> = depth_frames(cfg)?.into_iter().collect();
    let mut odo = Odometry::new(rig, cfg.odometry.tracker.clone()).map_err(PipelineError::stage("odom"))?;
    let mut status = String::new();
    let last = tracks.last_frame().unwrap_or(0);
    for f in 0..=last {
        let depth = if with_depth.contains(&f) { Some(frame_depth(cfg, out, f)?) } else { None };
        let r = odo.process_frame(&tracks.frame(f), depth.as_ref()).map_err(PipelineError::stage("odom"))?;
        let s = match r.status {
            FrameStatus::Initialized => "initialized",
            FrameStatus::Tracked => "tracked",
            FrameStatus::Predicted => "predicted",
            FrameStatus::Lost => "lost",
        };
        status.push_str(&format!("{f} {s} {} {} {}\n", r.correspondences, r.inliers, r.keyframe as u8));
    }
    if odo.keyframes().is_empty() {
        return Err(PipelineError::Stage {
            stage: "odom",
            source: omnimap_core::Error::InsufficientData("tracking never initialized".into()),
        });
    }
    write_text(&out.odom_status(), &status)?;
    write_text(&out.keyframe_data(), &format_keyframes(odo.keyframes()))?;
    write_text(&out.keyframes(), &format_keyframe_ids(&odo.keyframe_ids()))?;
    write_text(&out.odom_traj(), &odo.trajectory().to_tum())
}

/// Loop detection and pose-graph correction over the odometry keyframes.
/// Without accepted loops the corrected trajectory equals the odometry.
pub fn run_loop(cfg: &PipelineConfig, out: &Outputs) -> Result<usize> {
    let rig = load_rig(&cfg.paths.calibration())?;
    let records = parse_keyframes(&read_text(&out.keyframe_data())?, "keyframe_data.txt")?;
    let odom = load_trajectory(&out.odom_traj())?;
    let params = &cfg.loop_closing.params;
    let edges = if cfg.loop_closing.enabled { find_loops(&rig, &records, params) } else { Vec::new() };
    let old: Vec<Se3> = records.iter().map(|r| r.pose).collect();
    let (new, accepted) = correct_keyframes(&old, &edges, &params.graph).map_err(PipelineError::stage("loop"))?;
    log::info!("{} verified loops, {} accepted", edges.len(), accepted.len());
    let frames: Vec<u32> = records.iter().map(|r| r.frame).collect();
    let corrected = if accepted.is_empty() {
        odom
    } else {
        propagate_correction(&odom, cfg.odometry.tracker.frame_interval, &frames, &old, &new).map_err(PipelineError::stage("loop"))?
    };
    write_text(&out.corrected_traj(), &corrected.to_tum())?;
    write_text(&out.loop_edges(), &format_loop_edges(&accepted))?;
    Ok(accepted.len())
}

/// Evenly spaced subset of at most `max` items (all when `max` is 0).
fn subsample<T: Copy>(items: &[T], max: usize) -> Vec<T> {
    if max == 0 || items.len() <= max {
        return items.to_vec();
    }
    (0..max).map(|k| items[k * (items.len() - 1) / (max - 1).max(1)]).collect()
}

/// Resolves `Auto` to the corrected poses when loop closing accepted an edge.
pub fn resolve_pose_source(cfg: &PipelineConfig, out: &Outputs) -> Result<PoseSource> {
    Ok(match cfg.fuse.poses {
        PoseSource::Auto => {
            let edges = parse_loop_edges(&read_text(&out.loop_edges())?).map_err(PipelineError::file(out.loop_edges()))?;
            if edges.is_empty() {
                PoseSource::Odometry
            } else {
                PoseSource::Corrected
            }
        }
        p => p,
    })
}

/// Integrates the keyframe depth maps into a fresh volume.
pub fn run_fuse(cfg: &PipelineConfig, out: &Outputs) -> Result<usize> {
    let source = resolve_pose_source(cfg, out)?;
    let traj_path = match source {
        PoseSource::GroundTruth => cfg.paths.gt_trajectory(),
        PoseSource::Corrected => out.corrected_traj(),
        _ => out.odom_traj(),
    };
    let poses = poses_by_frame(&load_trajectory(&traj_path)?, cfg.odometry.tracker.frame_interval);
    let depth_set: BTreeSet<u32> = depth_frames(cfg)?.into_iter().collect();
    let keyframes: Vec<u32> = match cfg.fuse.keyframes {
        KeyframeSource::Odometry => load_frame_ids(&out.keyframes())?,
        KeyframeSource::DepthFrames => depth_set.iter().copied().collect(),
    };
    let keyframes: Vec<u32> = keyframes.into_iter().filter(|f| depth_set.contains(f) && poses.contains_key(f)).collect();
    let keyframes = subsample(&keyframes, cfg.fuse.max_keyframes);
    if keyframes.is_empty() {
        return Err(PipelineError::Stage { stage: "fuse", source: omnimap_core::Error::InsufficientData("no keyframe has both depth and a pose".into()) });
    }
    let mut vol = TsdfVolume::new(cfg.tsdf.volume).map_err(PipelineError::stage("fuse"))?;
    for &f in &keyframes {
        let pose = poses[&f];
        let points = depth_to_pointcloud(&frame_depth(cfg, out, f)?, &pose);
        vol.integrate(&points, &pose.translation).map_err(PipelineError::stage("fuse"))?;
    }
    let tmp = out.dir.join("volume.partial");
    save_volume(&tmp, &vol).map_err(PipelineError::file(&tmp))?;
    fs::rename(&tmp, out.volume()).map_err(PipelineError::file(out.volume()))?;
    let name = match source {
        PoseSource::GroundTruth => "gt",
        PoseSource::Corrected => "corrected",
        _ => "odometry",
    };
    write_text(&out.fuse_info(), &format!("poses = {name}\nkeyframes = {}\n", keyframes.iter().map(u32::to_string).collect::<Vec<_>>().join(" ")))?;
    Ok(keyframes.len())
}

pub fn run_mesh(cfg: &PipelineConfig, out: &Outputs) -> Result<usize> {
    let vol = load_volume(&out.volume()).map_err(PipelineError::file(out.volume()))?;
    let mesh = marching_cubes(&vol, &MeshGate { min_observations: cfg.tsdf.min_obs, min_weight: cfg.tsdf.min_weight });
    let tmp = out.dir.join("mesh.partial");
    save_ply(&tmp, &mesh, PlyFormat::BinaryLittleEndian).map_err(PipelineError::file(&tmp))?;
    fs::rename(&tmp, out.mesh()).map_err(PipelineError::file(out.mesh()))?;
    Ok(mesh.triangles.len())
}

fn undefined(e: omnimap_core::Error) -> PipelineError {
    match e {
        omnimap_core::Error::UndefinedMetric(m) => PipelineError::UndefinedMetric(m),
        other => PipelineError::Stage { stage: "eval", source: other },
    }
}

/// Depth-index error of the sweep maps against ground truth: the mean
/// percentage error, the mean error in index units and the fraction of
/// pixels within `eval.index_tolerance` indices.
pub fn eval_depth(cfg: &PipelineConfig, out: &Outputs) -> Result<MetricReport> {
    let hyp = HypothesisSet::from_grid(&cfg.grid).map_err(PipelineError::stage("eval"))?;
    let mut maps = Vec::new();
    let (mut within, mut valid) = (0usize, 0usize);
    let mut abs_sum = 0.0;
    for f in depth_frames(cfg)? {
        let p = depth_path(&out.depth_dir(), f);
        if !p.exists() {
            continue;
        }
        let est = InverseDepthMap::load(&p).map_err(PipelineError::file(&p))?;
        let truth = depth_to_index_map(&load_depth(&cfg.paths.gt_depth(), f)?, &hyp);
        for (a, b) in est.index.iter().zip(&truth) {
            if a.is_finite() && b.is_finite() {
                valid += 1;
                abs_sum += (a - b).abs();
                within += ((a - b).abs() <= cfg.eval.index_tolerance) as usize;
            }
        }
        maps.push(depth_index_error(&est.index, &truth, hyp.count).map_err(undefined)?);
    }
    let mut r = MetricReport::default();
    r.insert("depth_mae_percent", mean_abs_index_error(&maps).map_err(undefined)?);
    r.insert("depth_mae_index", abs_sum / valid as f64);
    r.insert("depth_within_tolerance", within as f64 / valid as f64);
    r.insert("depth_frames", maps.len() as f64);
    Ok(r)
}

/// Largest distance between two ground-truth positions.
pub fn diameter(traj: &Trajectory) -> f64 {
    let p = traj.positions();
    let mut d: f64 = 0.0;
    for a in &p {
        for b in &p {
            d = d.max((a - b).norm());
        }
    }
    d
}

/// ATE RMSE and start-to-end error of the odometry and corrected
/// trajectories.
pub fn eval_trajectory(cfg: &PipelineConfig, out: &Outputs) -> Result<MetricReport> {
    let truth = load_trajectory(&cfg.paths.gt_trajectory())?;
    let tol = DEFAULT_ASSOCIATION_TOLERANCE * cfg.odometry.tracker.frame_interval;
    let diam = diameter(&truth);
    let mut r = MetricReport::default();
    r.insert("gt_diameter", diam);
    for (name, path) in [("odometry", out.odom_traj()), ("corrected", out.corrected_traj())] {
        if !path.exists() {
            continue;
        }
        let est = load_trajectory(&path)?;
        let ate = ate_rmse(&est, &truth, tol).map_err(undefined)?;
        r.insert(format!("ate_{name}"), ate);
        if diam > 0.0 {
            r.insert(format!("ate_{name}_percent_diameter"), 100.0 * ate / diam);
        }
        r.insert(format!("s2e_{name}"), start_to_end(&est).map_err(undefined)?);
    }
    Ok(r)
}

/// Rigid transform taking the fused map into the ground-truth frame: the
/// trajectory alignment of the poses fusion used, or `None` when fusion used
/// ground-truth poses or no ground-truth trajectory exists.
pub fn mesh_alignment(cfg: &PipelineConfig, out: &Outputs) -> Result<Option<Se3>> {
    let info = read_text(&out.fuse_info())?;
    let used = info.lines().find_map(|l| l.strip_prefix("poses = ")).unwrap_or("gt").trim().to_string();
    let gt = cfg.paths.gt_trajectory();
    let path = match used.as_str() {
        "odometry" => out.odom_traj(),
        "corrected" => out.corrected_traj(),
        _ => return Ok(None),
    };
    if !gt.exists() {
        return Ok(None);
    }
    let tol = DEFAULT_ASSOCIATION_TOLERANCE * cfg.odometry.tracker.frame_interval;
    let (t, _) = align_trajectories(&load_trajectory(&path)?, &load_trajectory(&gt)?, tol).map_err(undefined)?;
    Ok(Some(t))
}

/// Completeness against the observed ground-truth surface and accuracy
/// against the full ground-truth surface, with ratio curves.
pub fn eval_mesh(cfg: &PipelineConfig, out: &Outputs) -> Result<MetricReport> {
    let gt_path = cfg.paths.gt_mesh();
    let observed = load_ply(&gt_path).map_err(PipelineError::file(&gt_path))?;
    let full_path = gt_path.with_file_name("gt_mesh_full.ply");
    let full = if full_path.exists() { load_ply(&full_path).map_err(PipelineError::file(&full_path))? } else { observed.clone() };
    let mut est = load_ply(&out.mesh()).map_err(PipelineError::file(out.mesh()))?;
    if let Some(t) = mesh_alignment(cfg, out)? {
        for v in &mut est.vertices {
            *v = t.transform_point(v);
        }
    }
    let (tc, ta) = (cfg.completeness_threshold(), cfg.accuracy_threshold());
    let mut r = MetricReport::default();
    r.insert("completeness", completeness(&est.vertices, &observed.vertices, tc).map_err(undefined)?);
    r.insert("accuracy", accuracy(&est.vertices, &full.vertices, ta).map_err(undefined)?);
    r.insert("completeness_t", tc);
    r.insert("accuracy_t", ta);
    r.insert("mesh_vertices", est.vertices.len() as f64);
    let steps = cfg.eval.curve_steps;
    let ts: Vec<f64> = (1..=steps).map(|k| cfg.eval.curve_max * cfg.voxel_size() * k as f64 / steps as f64).collect();
    r.add_curve("completeness", distance_curve(&observed.vertices, &est.vertices, &ts).map_err(undefined)?);
    r.add_curve("accuracy", distance_curve(&est.vertices, &full.vertices, &ts).map_err(undefined)?);
    Ok(r)
}

/// Every evaluation whose inputs exist.
pub fn run_eval(cfg: &PipelineConfig, out: &Outputs) -> Result<MetricReport> {
    let mut r = MetricReport::default();
    if cfg.fuse.depth == DepthSource::Estimated && cfg.paths.gt_depth().exists() && out.depth_dir().exists() {
        r.merge(eval_depth(cfg, out)?);
    }
    if cfg.paths.gt_trajectory().exists() && (out.odom_traj().exists() || out.corrected_traj().exists()) {
        r.merge(eval_trajectory(cfg, out)?);
    }
    if cfg.paths.gt_mesh().exists() && out.mesh().exists() {
        r.merge(eval_mesh(cfg, out)?);
    }
    write_text(&out.metrics(), &r.to_text())?;
    write_text(&out.curves(), &r.curves_csv())?;
    Ok(r)
}

/// Stages a configuration needs, in order.
pub fn planned_stages(cfg: &PipelineConfig) -> Vec<Stage> {
    let mut s = Vec::new();
    if cfg.fuse.depth == DepthSource::Estimated {
        s.push(Stage::Depth);
    }
    if cfg.fuse.poses != PoseSource::GroundTruth || cfg.fuse.keyframes == KeyframeSource::Odometry {
        s.push(Stage::Odometry);
    }
    if matches!(cfg.fuse.poses, PoseSource::Auto | PoseSource::Corrected) {
        s.push(Stage::Loop);
    }
    s.extend([Stage::Fuse, Stage::Mesh, Stage::Eval]);
    s
}

/// Whether a stage's outputs are all present.
pub fn is_complete(stage: Stage, cfg: &PipelineConfig, out: &Outputs) -> Result<bool> {
    Ok(match stage {
        Stage::Depth => {
            let dir = out.depth_dir();
            depth_frames(cfg)?.iter().all(|f| depth_path(&dir, *f).exists())
        }
        Stage::Odometry => [out.odom_traj(), out.keyframes(), out.keyframe_data()].iter().all(|p| p.exists()),
        Stage::Loop => out.loop_edges().exists() && out.corrected_traj().exists(),
        Stage::Fuse => out.volume().exists(),
        Stage::Mesh => out.mesh().exists(),
        Stage::Eval => false,
    })
}

pub fn run_stage(stage: Stage, cfg: &PipelineConfig, out: &Outputs) -> Result<()> {
    match stage {
        Stage::Depth => run_depth(cfg, out).map(drop),
        Stage::Odometry => run_odometry(cfg, out),
        Stage::Loop => run_loop(cfg, out).map(drop),
        Stage::Fuse => run_fuse(cfg, out).map(drop),
        Stage::Mesh => run_mesh(cfg, out).map(drop),
        Stage::Eval => run_eval(cfg, out).map(drop),
    }
}

#[derive(Clone, Debug)]
pub struct RunReport {
    /// Stages executed in this invocation, in order.
    pub ran: Vec<Stage>,
    pub metrics: MetricReport,
}

/// Runs the planned stages in order. A stage is skipped when its outputs
/// exist and no stage before it ran; evaluation always runs. A failing stage
/// stops the run and leaves earlier outputs in place.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunReport> {
    cfg.check_inputs()?;
    let out = Outputs::new(&cfg.paths.output);
    fs::create_dir_all(&out.dir).map_err(PipelineError::file(&out.dir))?;
    with_workers(cfg.workers, || {
        let mut ran = Vec::new();
        let mut timings = String::new();
        let mut dirty = false;
        for stage in planned_stages(cfg) {
            if !dirty && is_complete(stage, cfg, &out)? {
                log::info!("{}: outputs present, skipped", stage.name());
                continue;
            }
            let t = Instant::now();
            run_stage(stage, cfg, &out).map_err(|e| match e {
                e @ PipelineError::Stage { .. } => e,
                e => PipelineError::InStage { stage: stage.name(), source: Box::new(e) },
            })?;
            timings.push_str(&format!("{} {:.3}\n", stage.name(), t.elapsed().as_secs_f64()));
            log::info!("{}: done in {:.1} s", stage.name(), t.elapsed().as_secs_f64());
            ran.push(stage);
            dirty = true;
        }
        write_text(&out.timings(), &timings)?;
        let metrics = MetricReport::parse_text(&read_text(&out.metrics())?).unwrap_or_default();
        Ok(RunReport { ran, metrics })
    })?
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subsample_keeps_the_ends() {
        let v: Vec<u32> = (0..50).collect();
        let s = subsample(&v, 20);
        assert_eq!(s.len(), 20);
        assert_eq!((s[0], s[19]), (0, 49));
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(subsample(&v, 0).len(), 50);
    }

    #[test]
    fn plans_follow_the_sources() {
        let mut c = PipelineConfig::default();
        assert_eq!(planned_stages(&c), Stage::ALL.to_vec());
        c.fuse.depth = DepthSource::GroundTruth;
        c.fuse.poses = PoseSource::GroundTruth;
        c.fuse.keyframes = KeyframeSource::DepthFrames;
        assert_eq!(planned_stages(&c), vec![Stage::Fuse, Stage::Mesh, Stage::Eval]);
    }
}
