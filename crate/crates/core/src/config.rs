//! Pipeline configuration: every tunable across all stages, with the
//! shipped defaults, plus a dotted key-value file format
//! (`backtrack.psnr_stop = 13`).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::background::BackgroundParams;
use crate::backtrack::SimilarityThresholds;
use crate::detect::RectDetectorParams;
use crate::error::{Error, Result};
use crate::flow::FlowParams;
use crate::mask::{MorphParams, MotionMaskParams};
use crate::pixel::PixelTrackerParams;
use crate::track::{AnomalyCriteria, TrackerParams};
use crate::trajectory::CurveParams;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub background: BackgroundParams,
    pub motion: MotionMaskParams,
    pub morph: MorphParams,
    /// Accumulator hits required on both road-mask branches.
    pub roadmask_min_hits: u32,
    pub tracker: TrackerParams,
    pub criteria: AnomalyCriteria,
    pub pixel: PixelTrackerParams,
    pub backtrack: SimilarityThresholds,
    pub curve: CurveParams,
    pub flow: FlowParams,
    pub detector: RectDetectorParams,
    /// Prediction-to-truth matching window for scoring.
    pub eval_match_window_s: f64,
    /// Run the dynamic stage (crash-instant tracing). Off = ablation.
    pub dynamic_stage: bool,
    /// When both dynamic branches fire within this many seconds, the flow
    /// instant wins; otherwise the earlier one does.
    pub flow_traj_agree_s: f64,
    /// Write sampled background images next to the stage cache.
    pub write_background_images: bool,
    pub paths: PathsConfig,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PathsConfig {
    /// Directory of per-video subdirectories (manifest.txt + detections).
    pub dataset: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
    /// Per-stage cache; lets downstream thresholds be retuned without
    /// re-running background modeling.
    pub cache: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            background: BackgroundParams::default(),
            motion: MotionMaskParams::default(),
            morph: MorphParams::default(),
            roadmask_min_hits: 5,
            tracker: TrackerParams::default(),
            criteria: AnomalyCriteria::default(),
            pixel: PixelTrackerParams::default(),
            backtrack: SimilarityThresholds::default(),
            curve: CurveParams::default(),
            flow: FlowParams::default(),
            detector: RectDetectorParams::default(),
            eval_match_window_s: 10.0,
            dynamic_stage: true,
            flow_traj_agree_s: 3.0,
            write_background_images: false,
            paths: PathsConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Apply one dotted-key assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |reason: String| Error::Config {
            path: PathBuf::new(),
            reason,
        };
        macro_rules! parse {
            ($t:ty) => {
                value
                    .parse::<$t>()
                    .map_err(|_| bad(format!("key `{key}`: bad value {value:?}")))?
            };
        }
        match key {
            "background.max_components" => self.background.max_components = parse!(usize),
            "background.history" => self.background.history = parse!(u32),
            "background.match_threshold" => self.background.match_threshold = parse!(f64),
            "background.background_ratio" => self.background.background_ratio = parse!(f64),
            "background.var_init" => self.background.var_init = parse!(f64),
            "background.var_min" => self.background.var_min = parse!(f64),
            "background.var_max" => self.background.var_max = parse!(f64),
            "background.sample_interval" => self.background.sample_interval = parse!(usize),

            "motion.subtract_interval" => self.motion.subtract_interval = parse!(usize),
            "motion.binarize_thresh" => self.motion.binarize_thresh = parse!(u8),
            "motion.change_upper_fraction" => self.motion.change_upper_fraction = parse!(f64),
            "motion.min_region_area" => self.motion.min_region_area = parse!(usize),
            "motion.area_filter" => self.motion.area_filter = parse!(usize),

            "morph.dilate_iters" => self.morph.dilate_iters = parse!(usize),
            "morph.erode_iters" => self.morph.erode_iters = parse!(usize),
            "morph.kernel_size" => self.morph.kernel_size = parse!(u32),
            "roadmask.min_hits" => self.roadmask_min_hits = parse!(u32),

            "tracker.gate_iou" => self.tracker.gate_iou = parse!(f64),
            "tracker.min_hits" => self.tracker.min_hits = parse!(u32),
            "tracker.max_age" => self.tracker.max_age = parse!(u32),
            "tracker.retrieve_iou" => self.tracker.retrieve_iou = parse!(f64),

            "criteria.min_duration_s" => self.criteria.min_duration_s = parse!(f64),
            "criteria.window_s" => self.criteria.window_s = parse!(f64),
            "criteria.window_count" => self.criteria.window_count = parse!(usize),
            "criteria.min_windows_present" => self.criteria.min_windows_present = parse!(usize),
            "criteria.iou_retrieve_thresh" => self.criteria.iou_retrieve_thresh = parse!(f64),
            "criteria.center_std_max" => self.criteria.center_std_max = parse!(f64),

            "pixel.min_abnormal_duration_s" => self.pixel.min_abnormal_duration_s = parse!(f64),
            "pixel.suspicious_duration_s" => self.pixel.suspicious_duration_s = parse!(f64),
            "pixel.miss_tolerance_s" => self.pixel.miss_tolerance_s = parse!(f64),
            "pixel.score_floor" => self.pixel.score_floor = parse!(f64),

            "backtrack.psnr_stop" => self.backtrack.psnr_stop = parse!(f64),
            "backtrack.ssim_stop" => self.backtrack.ssim_stop = parse!(f64),
            "backtrack.euclid_stop" => self.backtrack.euclid_stop = parse!(f64),
            "backtrack.psnr_avg" => self.backtrack.psnr_avg = parse!(f64),
            "backtrack.ssim_avg" => self.backtrack.ssim_avg = parse!(f64),
            "backtrack.euclid_avg" => self.backtrack.euclid_avg = parse!(f64),
            "backtrack.max_backtrack_s" => self.backtrack.max_backtrack_s = parse!(f64),
            "backtrack.roi_iou_thresh" => self.backtrack.roi_iou_thresh = parse!(f64),
            "backtrack.max_deviation_s" => self.backtrack.max_deviation_s = parse!(f64),
            "backtrack.fuse_iou" => self.backtrack.fuse_iou = parse!(f64),
            "backtrack.stride" => self.backtrack.stride = parse!(usize),

            "curve.fit_error_thresh" => self.curve.fit_error_thresh = parse!(f64),
            "curve.min_traj_points" => self.curve.min_traj_points = parse!(usize),
            "curve.offtrack_area_thresh" => self.curve.offtrack_area_thresh = parse!(f64),
            "curve.offtrack_error_thresh" => self.curve.offtrack_error_thresh = parse!(f64),
            "curve.offtrack_min_freq" => self.curve.offtrack_min_freq = parse!(usize),
            "curve.peak_min" => self.curve.peak_min = parse!(usize),
            "curve.platform_ratio" => self.curve.platform_ratio = parse!(f64),

            "flow.seed_count" => self.flow.seed_count = parse!(usize),
            "flow.trace_len" => self.flow.trace_len = parse!(usize),
            "flow.knn_k" => self.flow.knn_k = parse!(usize),
            "flow.density_thresh" => self.flow.density_thresh = parse!(f64),
            "flow.neighbor_len" => self.flow.neighbor_len = parse!(usize),
            "flow.window_len" => self.flow.window_len = parse!(usize),
            "flow.window_scale" => self.flow.window_scale = parse!(f64),
            "flow.lk_window" => self.flow.lk_window = parse!(usize),
            "flow.pyramid_levels" => self.flow.pyramid_levels = parse!(usize),
            "flow.min_eig_threshold" => self.flow.min_eig_threshold = parse!(f64),
            "flow.max_iterations" => self.flow.max_iterations = parse!(usize),
            "flow.min_seed_distance" => self.flow.min_seed_distance = parse!(f64),
            "flow.min_crash_magnitude" => self.flow.min_crash_magnitude = parse!(f64),

            "detector.intensity_thresh" => self.detector.intensity_thresh = parse!(u8),
            "detector.min_area" => self.detector.min_area = parse!(usize),
            "detector.score" => self.detector.score = parse!(f64),

            "eval.match_window_s" => self.eval_match_window_s = parse!(f64),
            "pipeline.dynamic_stage" => self.dynamic_stage = parse!(bool),
            "pipeline.flow_traj_agree_s" => self.flow_traj_agree_s = parse!(f64),
            "pipeline.write_background_images" => {
                self.write_background_images = parse!(bool)
            }

            "paths.dataset" => self.paths.dataset = Some(PathBuf::from(value)),
            "paths.output" => self.paths.output = Some(PathBuf::from(value)),
            "paths.ground_truth" => self.paths.ground_truth = Some(PathBuf::from(value)),
            "paths.cache" => self.paths.cache = Some(PathBuf::from(value)),

            other => {
                return Err(bad(format!("unknown config key `{other}`")));
            }
        }
        Ok(())
    }

    /// Render every key in canonical order. `parse(render(c)) == c`.
    pub fn render(&self) -> String {
        let mut s = String::new();
        macro_rules! kv {
            ($key:literal, $val:expr) => {
                let _ = writeln!(s, "{} = {}", $key, $val);
            };
        }
        kv!("background.max_components", self.background.max_components);
        kv!("background.history", self.background.history);
        kv!("background.match_threshold", self.background.match_threshold);
        kv!("background.background_ratio", self.background.background_ratio);
        kv!("background.var_init", self.background.var_init);
        kv!("background.var_min", self.background.var_min);
        kv!("background.var_max", self.background.var_max);
        kv!("background.sample_interval", self.background.sample_interval);
        kv!("motion.subtract_interval", self.motion.subtract_interval);
        kv!("motion.binarize_thresh", self.motion.binarize_thresh);
        kv!("motion.change_upper_fraction", self.motion.change_upper_fraction);
        kv!("motion.min_region_area", self.motion.min_region_area);
        kv!("motion.area_filter", self.motion.area_filter);
        kv!("morph.dilate_iters", self.morph.dilate_iters);
        kv!("morph.erode_iters", self.morph.erode_iters);
        kv!("morph.kernel_size", self.morph.kernel_size);
        kv!("roadmask.min_hits", self.roadmask_min_hits);
        kv!("tracker.gate_iou", self.tracker.gate_iou);
        kv!("tracker.min_hits", self.tracker.min_hits);
        kv!("tracker.max_age", self.tracker.max_age);
        kv!("tracker.retrieve_iou", self.tracker.retrieve_iou);
        kv!("criteria.min_duration_s", self.criteria.min_duration_s);
        kv!("criteria.window_s", self.criteria.window_s);
        kv!("criteria.window_count", self.criteria.window_count);
        kv!("criteria.min_windows_present", self.criteria.min_windows_present);
        kv!("criteria.iou_retrieve_thresh", self.criteria.iou_retrieve_thresh);
        kv!("criteria.center_std_max", self.criteria.center_std_max);
        kv!("pixel.min_abnormal_duration_s", self.pixel.min_abnormal_duration_s);
        kv!("pixel.suspicious_duration_s", self.pixel.suspicious_duration_s);
        kv!("pixel.miss_tolerance_s", self.pixel.miss_tolerance_s);
        kv!("pixel.score_floor", self.pixel.score_floor);
        kv!("backtrack.psnr_stop", self.backtrack.psnr_stop);
        kv!("backtrack.ssim_stop", self.backtrack.ssim_stop);
        kv!("backtrack.euclid_stop", self.backtrack.euclid_stop);
        kv!("backtrack.psnr_avg", self.backtrack.psnr_avg);
        kv!("backtrack.ssim_avg", self.backtrack.ssim_avg);
        kv!("backtrack.euclid_avg", self.backtrack.euclid_avg);
        kv!("backtrack.max_backtrack_s", self.backtrack.max_backtrack_s);
        kv!("backtrack.roi_iou_thresh", self.backtrack.roi_iou_thresh);
        kv!("backtrack.max_deviation_s", self.backtrack.max_deviation_s);
        kv!("backtrack.fuse_iou", self.backtrack.fuse_iou);
        kv!("backtrack.stride", self.backtrack.stride);
        kv!("curve.fit_error_thresh", self.curve.fit_error_thresh);
        kv!("curve.min_traj_points", self.curve.min_traj_points);
        kv!("curve.offtrack_area_thresh", self.curve.offtrack_area_thresh);
        kv!("curve.offtrack_error_thresh", self.curve.offtrack_error_thresh);
        kv!("curve.offtrack_min_freq", self.curve.offtrack_min_freq);
        kv!("curve.peak_min", self.curve.peak_min);
        kv!("curve.platform_ratio", self.curve.platform_ratio);
        kv!("flow.seed_count", self.flow.seed_count);
        kv!("flow.trace_len", self.flow.trace_len);
        kv!("flow.knn_k", self.flow.knn_k);
        kv!("flow.density_thresh", self.flow.density_thresh);
        kv!("flow.neighbor_len", self.flow.neighbor_len);
        kv!("flow.window_len", self.flow.window_len);
        kv!("flow.window_scale", self.flow.window_scale);
        kv!("flow.lk_window", self.flow.lk_window);
        kv!("flow.pyramid_levels", self.flow.pyramid_levels);
        kv!("flow.min_eig_threshold", self.flow.min_eig_threshold);
        kv!("flow.max_iterations", self.flow.max_iterations);
        kv!("flow.min_seed_distance", self.flow.min_seed_distance);
        kv!("flow.min_crash_magnitude", self.flow.min_crash_magnitude);
        kv!("detector.intensity_thresh", self.detector.intensity_thresh);
        kv!("detector.min_area", self.detector.min_area);
        kv!("detector.score", self.detector.score);
        kv!("eval.match_window_s", self.eval_match_window_s);
        kv!("pipeline.dynamic_stage", self.dynamic_stage);
        kv!("pipeline.flow_traj_agree_s", self.flow_traj_agree_s);
        kv!("pipeline.write_background_images", self.write_background_images);
        if let Some(p) = &self.paths.dataset {
            kv!("paths.dataset", p.display());
        }
        if let Some(p) = &self.paths.output {
            kv!("paths.output", p.display());
        }
        if let Some(p) = &self.paths.ground_truth {
            kv!("paths.ground_truth", p.display());
        }
        if let Some(p) = &self.paths.cache {
            kv!("paths.cache", p.display());
        }
        s
    }
}

/// Parse a config file: defaults overridden by `key = value` lines.
pub fn parse_config(path: &Path) -> Result<PipelineConfig> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config_str(&text).map_err(|e| match e {
        Error::Config { reason, .. } => Error::Config {
            path: path.to_path_buf(),
            reason,
        },
        other => other,
    })
}

pub fn parse_config_str(text: &str) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::default();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
            path: PathBuf::new(),
            reason: format!("expected `key = value`, got {line:?}"),
        })?;
        cfg.set(key.trim(), value.trim())?;
    }
    Ok(cfg)
}

pub fn write_config(path: &Path, cfg: &PipelineConfig) -> Result<()> {
    fs::write(path, cfg.render()).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}
