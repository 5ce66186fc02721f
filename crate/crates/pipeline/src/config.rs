//! Flat `section.key = value` configuration. Lines starting with `#` are
//! comments; relative paths resolve against the config file's directory.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use omnimap_core::loop_closing::LoopParams;
use omnimap_core::odometry::OdometryConfig;
use omnimap_core::sweep::{CostKind, CostParams, DEFAULT_FAR_CAP, DEFAULT_TEMPERATURE};
use omnimap_core::tsdf::{DistanceMode, TsdfConfig, WeightMode};
use omnimap_core::{Rig, SphereGrid};

use crate::error::{PipelineError, Result};
use crate::render::{SynthParams, TrackParams};

/// Input and output locations. Unset inputs default to the standard layout
/// under `dataset`.
#[derive(Clone, Debug, PartialEq)]
pub struct Paths {
    pub dataset: PathBuf,
    pub output: PathBuf,
    pub calibration: Option<PathBuf>,
    pub images: Option<PathBuf>,
    pub tracks: Option<PathBuf>,
    pub gt_trajectory: Option<PathBuf>,
    pub gt_depth: Option<PathBuf>,
    pub gt_mesh: Option<PathBuf>,
    pub depth_frames: Option<PathBuf>,
    /// Directory of per-camera static masks `mask_<cam>.pfm`; none by default.
    pub masks: Option<PathBuf>,
}

impl Paths {
    fn or_dataset(&self, p: &Option<PathBuf>, name: &str) -> PathBuf {
        p.clone().unwrap_or_else(|| self.dataset.join(name))
    }
    pub fn calibration(&self) -> PathBuf {
        self.or_dataset(&self.calibration, "rig.calib")
    }
    pub fn images(&self) -> PathBuf {
        self.or_dataset(&self.images, "images")
    }
    pub fn tracks(&self) -> PathBuf {
        self.or_dataset(&self.tracks, "tracks.txt")
    }
    pub fn gt_trajectory(&self) -> PathBuf {
        self.or_dataset(&self.gt_trajectory, "gt_traj.txt")
    }
    pub fn gt_depth(&self) -> PathBuf {
        self.or_dataset(&self.gt_depth, "gt_depth")
    }
    pub fn gt_mesh(&self) -> PathBuf {
        self.or_dataset(&self.gt_mesh, "gt_mesh.ply")
    }
    pub fn depth_frames(&self) -> PathBuf {
        self.or_dataset(&self.depth_frames, "depth_frames.txt")
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepSettings {
    pub cost: CostParams,
    pub temperature: f64,
    /// Depth reported for pixels regressed to (near) zero inverse depth.
    pub far_cap: f64,
    /// Pixels whose softmax peak probability is below this are not used by
    /// odometry or fusion.
    pub min_confidence: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OdometrySettings {
    pub tracker: OdometryConfig,
    /// Frames `0, k, 2k, ...` have depth maps.
    pub depth_every: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LoopSettings {
    pub enabled: bool,
    pub params: LoopParams,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TsdfSettings {
    pub volume: TsdfConfig,
    pub min_obs: u32,
    pub min_weight: f64,
    /// Depth samples farther than this are not fused.
    pub max_depth: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoseSource {
    /// Corrected poses when loop closing accepted an edge, else odometry.
    Auto,
    Odometry,
    Corrected,
    GroundTruth,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DepthSource {
    Estimated,
    GroundTruth,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KeyframeSource {
    Odometry,
    DepthFrames,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FuseSettings {
    pub poses: PoseSource,
    pub depth: DepthSource,
    pub keyframes: KeyframeSource,
    /// Evenly subsample the keyframes to at most this many; 0 keeps all.
    pub max_keyframes: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalSettings {
    /// Completeness threshold in meters; `None` means twice the voxel size.
    pub completeness_t: Option<f64>,
    pub accuracy_t: Option<f64>,
    /// The ratio curves span `(0, curve_max · v]`.
    pub curve_max: f64,
    pub curve_steps: usize,
    /// Pixels within this many indices count as correct in the depth report.
    pub index_tolerance: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SceneKind {
    SquareLoop,
    SphereRoom,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthSettings {
    pub scene: SceneKind,
    pub frames: usize,
    pub seed: u32,
    pub image_size: u32,
    pub radial_poly: [f64; 4],
    pub fov_half_angle: f64,
    pub rig_radius: f64,
    pub supersample: u32,
    pub anchors: usize,
    pub noise_px: f64,
    pub descriptor_flips: u32,
    /// Heading change accumulated over the square loop.
    pub total_yaw: f64,
    pub sphere_radius: f64,
    pub mesh_min_views: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub grid: SphereGrid,
    pub sweep: SweepSettings,
    pub odometry: OdometrySettings,
    pub loop_closing: LoopSettings,
    pub tsdf: TsdfSettings,
    pub fuse: FuseSettings,
    pub eval: EvalSettings,
    pub synth: SynthSettings,
    /// Worker threads; 0 uses the rayon default.
    pub workers: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let v = 0.15;
        Self {
            paths: Paths {
                dataset: PathBuf::from("dataset"),
                output: PathBuf::from("output"),
                calibration: None,
                images: None,
                tracks: None,
                gt_trajectory: None,
                gt_depth: None,
                gt_mesh: None,
                depth_frames: None,
                masks: None,
            },
            grid: SphereGrid {
                width: 640,
                height: 160,
                phi_min: -45f64.to_radians(),
                phi_max: 45f64.to_radians(),
                num_hypotheses: 192,
                min_depth: 0.55,
            },
            sweep: SweepSettings { cost: CostParams { patch_radius: 3, kind: CostKind::Zncc, smoothing: true }, temperature: DEFAULT_TEMPERATURE, far_cap: DEFAULT_FAR_CAP, min_confidence: 0.3 },
            odometry: OdometrySettings { tracker: OdometryConfig::default(), depth_every: 4 },
            loop_closing: LoopSettings { enabled: true, params: LoopParams::default() },
            tsdf: TsdfSettings {
                volume: TsdfConfig { voxel_size: v, truncation: 4.0 * v, weight_mode: WeightMode::InverseSquare, distance_mode: DistanceMode::Projective },
                min_obs: 3,
                min_weight: 1e-12,
                max_depth: 50.0,
            },
            fuse: FuseSettings { poses: PoseSource::Auto, depth: DepthSource::Estimated, keyframes: KeyframeSource::Odometry, max_keyframes: 0 },
            eval: EvalSettings { completeness_t: None, accuracy_t: None, curve_max: 4.0, curve_steps: 20, index_tolerance: 2.0 },
            synth: SynthSettings {
                scene: SceneKind::SquareLoop,
                frames: 200,
                seed: 7,
                image_size: 512,
                radial_poly: [125.0, -3.0, 0.0, 0.0],
                fov_half_angle: 110f64.to_radians(),
                rig_radius: 0.3,
                supersample: 2,
                anchors: 1500,
                noise_px: 0.3,
                descriptor_flips: 8,
                total_yaw: 90f64.to_radians(),
                sphere_radius: 10.0,
                mesh_min_views: 2,
            },
            workers: 0,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| PipelineError::Config(format!("{key}: cannot parse '{value}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(PipelineError::Config(format!("{key}: expected true or false, got '{value}'"))),
    }
}

fn parse_deg(key: &str, value: &str) -> Result<f64> {
    Ok(parse_value::<f64>(key, value)?.to_radians())
}

fn parse_opt_len(key: &str, value: &str) -> Result<Option<f64>> {
    if value == "auto" {
        Ok(None)
    } else {
        parse_value(key, value).map(Some)
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "auto".to_string(), |x| format!("{x:?}"))
}

fn fmt_path(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.display().to_string())
}

fn deg(x: f64) -> String {
    format!("{:?}", x.to_degrees())
}

fn num(x: impl Display) -> String {
    x.to_string()
}

impl PipelineConfig {
    /// Parses `text` on top of the defaults; relative paths are joined to
    /// `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.paths.dataset = base_dir.join(&cfg.paths.dataset);
        cfg.paths.output = base_dir.join(&cfg.paths.output);
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| PipelineError::Config(format!("line {}: expected 'section.key = value'", n + 1)))?;
            cfg.set_relative(k.trim(), v.trim(), base_dir)
                .map_err(|e| PipelineError::Config(format!("line {}: {e}", n + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(PipelineError::file(path))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Applies one `key = value` override; relative paths are taken as given.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        self.set_relative(key, value, Path::new(""))
    }

    fn set_relative(&mut self, key: &str, value: &str, base: &Path) -> Result<()> {
        let path = || base.join(value);
        let od = &mut self.odometry.tracker;
        let lp = &mut self.loop_closing.params;
        let sy = &mut self.synth;
        match key {
            "paths.dataset" => self.paths.dataset = path(),
            "paths.output" => self.paths.output = path(),
            "paths.calibration" => self.paths.calibration = Some(path()),
            "paths.images" => self.paths.images = Some(path()),
            "paths.tracks" => self.paths.tracks = Some(path()),
            "paths.gt_trajectory" => self.paths.gt_trajectory = Some(path()),
            "paths.gt_depth" => self.paths.gt_depth = Some(path()),
            "paths.gt_mesh" => self.paths.gt_mesh = Some(path()),
            "paths.depth_frames" => self.paths.depth_frames = Some(path()),
            "paths.masks" => self.paths.masks = Some(path()),

            "grid.width" => self.grid.width = parse_value(key, value)?,
            "grid.height" => self.grid.height = parse_value(key, value)?,
            "grid.phi_min_deg" => self.grid.phi_min = parse_deg(key, value)?,
            "grid.phi_max_deg" => self.grid.phi_max = parse_deg(key, value)?,
            "grid.num_hypotheses" => self.grid.num_hypotheses = parse_value(key, value)?,
            "grid.min_depth" => self.grid.min_depth = parse_value(key, value)?,

            "sweep.patch_radius" => self.sweep.cost.patch_radius = parse_value(key, value)?,
            "sweep.cost" => {
                self.sweep.cost.kind = match value {
                    "zncc" => CostKind::Zncc,
                    "sad" => CostKind::Sad,
                    _ => return Err(PipelineError::Config(format!("{key}: expected zncc or sad"))),
                }
            }
            "sweep.smoothing" => self.sweep.cost.smoothing = parse_bool(key, value)?,
            "sweep.temperature" => self.sweep.temperature = parse_value(key, value)?,
            "sweep.far_cap" => self.sweep.far_cap = parse_value(key, value)?,
            "sweep.min_confidence" => self.sweep.min_confidence = parse_value(key, value)?,

            "odometry.depth_every" => self.odometry.depth_every = parse_value(key, value)?,
            "odometry.window" => od.window = parse_value(key, value)?,
            "odometry.keyframe_parallax_deg" => od.keyframe_parallax = parse_deg(key, value)?,
            "odometry.keyframe_min_tracked_ratio" => od.keyframe_min_tracked_ratio = parse_value(key, value)?,
            "odometry.max_failures" => od.max_failures = parse_value(key, value)?,
            "odometry.min_inliers" => od.min_inliers = parse_value(key, value)?,
            "odometry.use_depth" => od.use_depth = parse_bool(key, value)?,
            "odometry.interview_matching" => od.interview_matching = parse_bool(key, value)?,
            "odometry.depth_prior" => od.depth_prior = parse_bool(key, value)?,
            "odometry.frame_interval" => od.frame_interval = parse_value(key, value)?,
            "odometry.ransac_threshold_deg" => od.ransac.threshold = parse_deg(key, value)?,
            "odometry.ransac_confidence" => od.ransac.confidence = parse_value(key, value)?,
            "odometry.ransac_max_iterations" => od.ransac.max_iterations = parse_value(key, value)?,
            "odometry.ransac_min_inlier_ratio" => od.ransac.min_inlier_ratio = parse_value(key, value)?,
            "odometry.seed" => od.ransac.seed = parse_value(key, value)?,
            "odometry.huber_deg" => od.ba.huber_delta = parse_deg(key, value)?,
            "odometry.ba_iterations" => od.ba.max_iterations = parse_value(key, value)?,
            "odometry.prior_weight" => od.ba.prior_weight = parse_value(key, value)?,
            "odometry.match_radius_px" => od.matching.radius_px = parse_value(key, value)?,
            "odometry.match_hamming" => od.matching.hamming_max = parse_value(key, value)?,

            "loop.enabled" => self.loop_closing.enabled = parse_bool(key, value)?,
            "loop.hamming_threshold" => lp.candidates.hamming_threshold = parse_value(key, value)?,
            "loop.exclusion_window" => lp.candidates.exclusion_window = parse_value(key, value)?,
            "loop.top_k" => lp.candidates.top_k = parse_value(key, value)?,
            "loop.min_score" => lp.candidates.min_score = parse_value(key, value)?,
            "loop.max_query_descriptors" => lp.candidates.max_query_descriptors = parse_value(key, value)?,
            "loop.verify_hamming" => lp.verify.hamming_max = parse_value(key, value)?,
            "loop.min_inliers" => lp.verify.min_inliers = parse_value(key, value)?,
            "loop.ransac_threshold_deg" => lp.verify.ransac.threshold = parse_deg(key, value)?,
            "loop.loop_weight" => lp.graph.loop_weight = parse_value(key, value)?,
            "loop.gate_factor" => lp.graph.gate_factor = parse_value(key, value)?,
            "loop.gate_floor" => lp.graph.gate_floor = parse_value(key, value)?,
            "loop.graph_iterations" => lp.graph.max_iterations = parse_value(key, value)?,
            "loop.proximity_radius" => lp.proximity_radius = parse_opt_len(key, value)?,

            "tsdf.voxel_size" => self.tsdf.volume.voxel_size = parse_value(key, value)?,
            "tsdf.truncation" => self.tsdf.volume.truncation = parse_value(key, value)?,
            "tsdf.weight" => {
                self.tsdf.volume.weight_mode = match value {
                    "inverse_square" => WeightMode::InverseSquare,
                    v => WeightMode::Constant(parse_value(key, v)?),
                }
            }
            "tsdf.distance" => {
                self.tsdf.volume.distance_mode = match value {
                    "projective" => DistanceMode::Projective,
                    "literal" => DistanceMode::Literal,
                    _ => return Err(PipelineError::Config(format!("{key}: expected projective or literal"))),
                }
            }
            "tsdf.min_obs" => self.tsdf.min_obs = parse_value(key, value)?,
            "tsdf.min_weight" => self.tsdf.min_weight = parse_value(key, value)?,
            "tsdf.max_depth" => self.tsdf.max_depth = parse_value(key, value)?,

            "fuse.poses" => {
                self.fuse.poses = match value {
                    "auto" => PoseSource::Auto,
                    "odometry" => PoseSource::Odometry,
                    "corrected" => PoseSource::Corrected,
                    "gt" => PoseSource::GroundTruth,
                    _ => return Err(PipelineError::Config(format!("{key}: expected auto, odometry, corrected or gt"))),
                }
            }
            "fuse.depth" => {
                self.fuse.depth = match value {
                    "estimated" => DepthSource::Estimated,
                    "gt" => DepthSource::GroundTruth,
                    _ => return Err(PipelineError::Config(format!("{key}: expected estimated or gt"))),
                }
            }
            "fuse.keyframes" => {
                self.fuse.keyframes = match value {
                    "odometry" => KeyframeSource::Odometry,
                    "depth_frames" => KeyframeSource::DepthFrames,
                    _ => return Err(PipelineError::Config(format!("{key}: expected odometry or depth_frames"))),
                }
            }
            "fuse.max_keyframes" => self.fuse.max_keyframes = parse_value(key, value)?,

            "eval.completeness_t" => self.eval.completeness_t = parse_opt_len(key, value)?,
            "eval.accuracy_t" => self.eval.accuracy_t = parse_opt_len(key, value)?,
            "eval.curve_max" => self.eval.curve_max = parse_value(key, value)?,
            "eval.curve_steps" => self.eval.curve_steps = parse_value(key, value)?,
            "eval.index_tolerance" => self.eval.index_tolerance = parse_value(key, value)?,

            "synth.scene" => {
                sy.scene = match value {
                    "square_loop" => SceneKind::SquareLoop,
                    "sphere_room" => SceneKind::SphereRoom,
                    _ => return Err(PipelineError::Config(format!("{key}: expected square_loop or sphere_room"))),
                }
            }
            "synth.frames" => sy.frames = parse_value(key, value)?,
            "synth.seed" => sy.seed = parse_value(key, value)?,
            "synth.image_size" => sy.image_size = parse_value(key, value)?,
            "synth.radial_poly" => {
                let k: Vec<f64> = value.split(',').map(|t| parse_value(key, t.trim())).collect::<Result<_>>()?;
                sy.radial_poly = k.try_into().map_err(|_| PipelineError::Config(format!("{key}: expected 4 comma-separated values")))?;
            }
            "synth.fov_half_angle_deg" => sy.fov_half_angle = parse_deg(key, value)?,
            "synth.rig_radius" => sy.rig_radius = parse_value(key, value)?,
            "synth.supersample" => sy.supersample = parse_value(key, value)?,
            "synth.anchors" => sy.anchors = parse_value(key, value)?,
            "synth.noise_px" => sy.noise_px = parse_value(key, value)?,
            "synth.descriptor_flips" => sy.descriptor_flips = parse_value(key, value)?,
            "synth.total_yaw_deg" => sy.total_yaw = parse_deg(key, value)?,
            "synth.sphere_radius" => sy.sphere_radius = parse_value(key, value)?,
            "synth.mesh_min_views" => sy.mesh_min_views = parse_value(key, value)?,

            "run.workers" => self.workers = parse_value(key, value)?,
            _ => return Err(PipelineError::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Every key with its current value, in file order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let p = &self.paths;
        let od = &self.odometry.tracker;
        let lp = &self.loop_closing.params;
        let sy = &self.synth;
        let mut out = vec![("paths.dataset", p.dataset.display().to_string()), ("paths.output", p.output.display().to_string())];
        for (k, v) in [
            ("paths.calibration", fmt_path(&p.calibration)),
            ("paths.images", fmt_path(&p.images)),
            ("paths.tracks", fmt_path(&p.tracks)),
            ("paths.gt_trajectory", fmt_path(&p.gt_trajectory)),
            ("paths.gt_depth", fmt_path(&p.gt_depth)),
            ("paths.gt_mesh", fmt_path(&p.gt_mesh)),
            ("paths.depth_frames", fmt_path(&p.depth_frames)),
            ("paths.masks", fmt_path(&p.masks)),
        ] {
            if let Some(v) = v {
                out.push((k, v));
            }
        }
        out.extend([
            ("grid.width", num(self.grid.width)),
            ("grid.height", num(self.grid.height)),
            ("grid.phi_min_deg", deg(self.grid.phi_min)),
            ("grid.phi_max_deg", deg(self.grid.phi_max)),
            ("grid.num_hypotheses", num(self.grid.num_hypotheses)),
            ("grid.min_depth", format!("{:?}", self.grid.min_depth)),
            ("sweep.patch_radius", num(self.sweep.cost.patch_radius)),
            ("sweep.cost", match self.sweep.cost.kind {
                CostKind::Zncc => "zncc".into(),
                CostKind::Sad => "sad".into(),
            }),
            ("sweep.smoothing", num(self.sweep.cost.smoothing)),
            ("sweep.temperature", format!("{:?}", self.sweep.temperature)),
            ("sweep.far_cap", format!("{:?}", self.sweep.far_cap)),
            ("sweep.min_confidence", format!("{:?}", self.sweep.min_confidence)),
            ("odometry.depth_every", num(self.odometry.depth_every)),
            ("odometry.window", num(od.window)),
            ("odometry.keyframe_parallax_deg", deg(od.keyframe_parallax)),
            ("odometry.keyframe_min_tracked_ratio", format!("{:?}", od.keyframe_min_tracked_ratio)),
            ("odometry.max_failures", num(od.max_failures)),
            ("odometry.min_inliers", num(od.min_inliers)),
            ("odometry.use_depth", num(od.use_depth)),
            ("odometry.interview_matching", num(od.interview_matching)),
            ("odometry.depth_prior", num(od.depth_prior)),
            ("odometry.frame_interval", format!("{:?}", od.frame_interval)),
            ("odometry.ransac_threshold_deg", deg(od.ransac.threshold)),
            ("odometry.ransac_confidence", format!("{:?}", od.ransac.confidence)),
            ("odometry.ransac_max_iterations", num(od.ransac.max_iterations)),
            ("odometry.ransac_min_inlier_ratio", format!("{:?}", od.ransac.min_inlier_ratio)),
            ("odometry.seed", num(od.ransac.seed)),
            ("odometry.huber_deg", deg(od.ba.huber_delta)),
            ("odometry.ba_iterations", num(od.ba.max_iterations)),
            ("odometry.prior_weight", format!("{:?}", od.ba.prior_weight)),
            ("odometry.match_radius_px", format!("{:?}", od.matching.radius_px)),
            ("odometry.match_hamming", num(od.matching.hamming_max)),
            ("loop.enabled", num(self.loop_closing.enabled)),
            ("loop.hamming_threshold", num(lp.candidates.hamming_threshold)),
            ("loop.exclusion_window", num(lp.candidates.exclusion_window)),
            ("loop.top_k", num(lp.candidates.top_k)),
            ("loop.min_score", format!("{:?}", lp.candidates.min_score)),
            ("loop.max_query_descriptors", num(lp.candidates.max_query_descriptors)),
            ("loop.verify_hamming", num(lp.verify.hamming_max)),
            ("loop.min_inliers", num(lp.verify.min_inliers)),
            ("loop.ransac_threshold_deg", deg(lp.verify.ransac.threshold)),
            ("loop.loop_weight", format!("{:?}", lp.graph.loop_weight)),
            ("loop.gate_factor", format!("{:?}", lp.graph.gate_factor)),
            ("loop.gate_floor", format!("{:?}", lp.graph.gate_floor)),
            ("loop.graph_iterations", num(lp.graph.max_iterations)),
            ("loop.proximity_radius", fmt_opt(lp.proximity_radius)),
            ("tsdf.voxel_size", format!("{:?}", self.tsdf.volume.voxel_size)),
            ("tsdf.truncation", format!("{:?}", self.tsdf.volume.truncation)),
            ("tsdf.weight", match self.tsdf.volume.weight_mode {
                WeightMode::InverseSquare => "inverse_square".into(),
                WeightMode::Constant(r) => format!("{r:?}"),
            }),
            ("tsdf.distance", match self.tsdf.volume.distance_mode {
                DistanceMode::Projective => "projective".into(),
                DistanceMode::Literal => "literal".into(),
            }),
            ("tsdf.min_obs", num(self.tsdf.min_obs)),
            ("tsdf.min_weight", format!("{:?}", self.tsdf.min_weight)),
            ("tsdf.max_depth", format!("{:?}", self.tsdf.max_depth)),
            ("fuse.poses", match self.fuse.poses {
                PoseSource::Auto => "auto".into(),
                PoseSource::Odometry => "odometry".into(),
                PoseSource::Corrected => "corrected".into(),
                PoseSource::GroundTruth => "gt".into(),
            }),
            ("fuse.depth", match self.fuse.depth {
                DepthSource::Estimated => "estimated".into(),
                DepthSource::GroundTruth => "gt".into(),
            }),
            ("fuse.keyframes", match self.fuse.keyframes {
                KeyframeSource::Odometry => "odometry".into(),
                KeyframeSource::DepthFrames => "depth_frames".into(),
            }),
            ("fuse.max_keyframes", num(self.fuse.max_keyframes)),
            ("eval.completeness_t", fmt_opt(self.eval.completeness_t)),
            ("eval.accuracy_t", fmt_opt(self.eval.accuracy_t)),
            ("eval.curve_max", format!("{:?}", self.eval.curve_max)),
            ("eval.curve_steps", num(self.eval.curve_steps)),
            ("eval.index_tolerance", format!("{:?}", self.eval.index_tolerance)),
            ("synth.scene", match sy.scene {
                SceneKind::SquareLoop => "square_loop".into(),
                SceneKind::SphereRoom => "sphere_room".into(),
            }),
            ("synth.frames", num(sy.frames)),
            ("synth.seed", num(sy.seed)),
            ("synth.image_size", num(sy.image_size)),
            ("synth.radial_poly", sy.radial_poly.iter().map(|k| format!("{k:?}")).collect::<Vec<_>>().join(",")),
            ("synth.fov_half_angle_deg", deg(sy.fov_half_angle)),
            ("synth.rig_radius", format!("{:?}", sy.rig_radius)),
            ("synth.supersample", num(sy.supersample)),
            ("synth.anchors", num(sy.anchors)),
            ("synth.noise_px", format!("{:?}", sy.noise_px)),
            ("synth.descriptor_flips", num(sy.descriptor_flips)),
            ("synth.total_yaw_deg", deg(sy.total_yaw)),
            ("synth.sphere_radius", format!("{:?}", sy.sphere_radius)),
            ("synth.mesh_min_views", num(sy.mesh_min_views)),
            ("run.workers", num(self.workers)),
        ]);
        out
    }

    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Numeric parameter ranges.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(PipelineError::Config(m.to_string()));
        self.grid.validate().map_err(|e| PipelineError::Config(format!("grid: {e}")))?;
        self.tsdf.volume.validate().map_err(|e| PipelineError::Config(format!("tsdf: {e}")))?;
        if !(self.sweep.temperature > 0.0) {
            return bad("sweep.temperature must be positive");
        }
        if !(0.0..=1.0).contains(&self.sweep.min_confidence) {
            return bad("sweep.min_confidence must lie in [0, 1]");
        }
        if !(self.sweep.far_cap > self.grid.min_depth) {
            return bad("sweep.far_cap must exceed grid.min_depth");
        }
        if self.odometry.depth_every == 0 {
            return bad("odometry.depth_every must be at least 1");
        }
        let od = &self.odometry.tracker;
        if od.window < 2 {
            return bad("odometry.window must be at least 2");
        }
        if !(od.ransac.threshold > 0.0 && od.ba.huber_delta > 0.0 && od.frame_interval > 0.0) {
            return bad("odometry thresholds and frame interval must be positive");
        }
        if !(0.0..1.0).contains(&od.ransac.confidence) || !(0.0..=1.0).contains(&od.keyframe_min_tracked_ratio) {
            return bad("odometry ratios must lie in [0, 1)");
        }
        let g = &self.loop_closing.params.graph;
        if !(g.loop_weight > 0.0 && g.gate_factor >= 1.0 && g.gate_floor >= 0.0) {
            return bad("loop.loop_weight must be positive and loop.gate_factor at least 1");
        }
        if let WeightMode::Constant(r) = self.tsdf.volume.weight_mode {
            if r <= 0.0 {
                return bad("tsdf.weight must be positive");
            }
        }
        if !(self.tsdf.max_depth > 0.0 && self.tsdf.min_weight >= 0.0) {
            return bad("tsdf.max_depth must be positive");
        }
        for t in [self.eval.completeness_t, self.eval.accuracy_t].into_iter().flatten() {
            if !(t > 0.0) {
                return bad("eval thresholds must be positive");
            }
        }
        if !(self.eval.curve_max > 0.0 && self.eval.curve_steps > 0 && self.eval.index_tolerance >= 0.0) {
            return bad("eval.curve_max and eval.curve_steps must be positive");
        }
        let sy = &self.synth;
        if sy.frames == 0 || sy.image_size < 16 || sy.supersample == 0 || !(sy.rig_radius > 0.0) || !(sy.noise_px >= 0.0) {
            return bad("synth parameters out of range");
        }
        if sy.descriptor_flips > 256 {
            return bad("synth.descriptor_flips exceeds the descriptor length");
        }
        Ok(())
    }

    /// Checks that the inputs a run reads exist.
    pub fn check_inputs(&self) -> Result<()> {
        let mut need = vec![self.paths.calibration(), self.paths.tracks()];
        match self.fuse.depth {
            DepthSource::Estimated => need.push(self.paths.images()),
            DepthSource::GroundTruth => need.push(self.paths.gt_depth()),
        }
        if self.fuse.poses == PoseSource::GroundTruth {
            need.push(self.paths.gt_trajectory());
        }
        for p in [&self.paths.gt_trajectory, &self.paths.gt_depth, &self.paths.gt_mesh, &self.paths.depth_frames, &self.paths.masks].into_iter().flatten() {
            need.push(p.clone());
        }
        match need.iter().find(|p| !p.exists()) {
            Some(p) => Err(PipelineError::Config(format!("{} does not exist", p.display()))),
            None => Ok(()),
        }
    }

    pub fn voxel_size(&self) -> f64 {
        self.tsdf.volume.voxel_size
    }

    pub fn completeness_threshold(&self) -> f64 {
        self.eval.completeness_t.unwrap_or(2.0 * self.voxel_size())
    }

    pub fn accuracy_threshold(&self) -> f64 {
        self.eval.accuracy_t.unwrap_or(2.0 * self.voxel_size())
    }

    pub fn synth_rig(&self) -> Result<Rig> {
        let s = &self.synth;
        Rig::cardinal(s.rig_radius, s.image_size, s.radial_poly, s.fov_half_angle).map_err(|e| PipelineError::Config(format!("synth rig: {e}")))
    }

    pub fn synth_params(&self) -> Result<SynthParams> {
        let s = &self.synth;
        Ok(SynthParams {
            rig: self.synth_rig()?,
            grid: self.grid,
            supersample: s.supersample,
            depth_every: self.odometry.depth_every,
            anchors: s.anchors,
            tracks: TrackParams { noise_px: s.noise_px, descriptor_flips: s.descriptor_flips, seed: s.seed as u64 },
            mesh_edge: self.voxel_size() / 2.0,
            mesh_min_views: s.mesh_min_views,
        })
    }
}
