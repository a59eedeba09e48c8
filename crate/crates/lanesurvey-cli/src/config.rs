//! Survey configuration: one TOML file drives the whole pipeline, with
//! per-command flag overrides on top.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use lanesurvey::detector::{AdapterCommand, DetectionMask, SupportFilterConfig};
use lanesurvey::plan::PlanConfig;
use lanesurvey::routes::InferenceConfig;
use lanesurvey::shoulder::ShoulderConfig;
use lanesurvey::vision::{HoughConfig, VisionConfig};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurveyConfig {
    pub survey: SurveySection,
    #[serde(default)]
    pub plan: PlanSection,
    #[serde(default)]
    pub imagery: ImagerySection,
    #[serde(default)]
    pub detector: DetectorSection,
    #[serde(default)]
    pub support: SupportSection,
    #[serde(default)]
    pub inference: InferenceSection,
    #[serde(default)]
    pub dashcam: DashcamSection,
    #[serde(default)]
    pub vision: VisionSection,
    #[serde(default)]
    pub shoulder: ShoulderSection,
    #[serde(default)]
    pub overlay: OverlaySection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurveySection {
    pub name: String,
    pub extract: PathBuf,
    pub margin_extract: Option<PathBuf>,
    pub output_dir: PathBuf,
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanSection {
    pub margin_m: f64,
    pub interval_m: f64,
    pub dedupe_radius_m: f64,
    pub fov_deg: f64,
    pub pitch_deg: f64,
}

impl Default for PlanSection {
    fn default() -> Self {
        let d = PlanConfig::default();
        Self {
            margin_m: d.margin_m,
            interval_m: d.interval_m,
            dedupe_radius_m: d.dedupe_radius_m,
            fov_deg: d.fov_deg,
            pitch_deg: d.pitch_deg,
        }
    }
}

impl PlanSection {
    pub fn to_config(&self) -> PlanConfig {
        PlanConfig {
            margin_m: self.margin_m,
            interval_m: self.interval_m,
            dedupe_radius_m: self.dedupe_radius_m,
            fov_deg: self.fov_deg,
            pitch_deg: self.pitch_deg,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImagerySection {
    /// "offline" replays a fixture directory; "network" talks to the API.
    pub mode: String,
    pub endpoint: String,
    pub api_key_path: Option<PathBuf>,
    pub fixture_dir: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub image_width: u32,
    pub image_height: u32,
    pub concurrency: usize,
}

impl Default for ImagerySection {
    fn default() -> Self {
        Self {
            mode: "offline".into(),
            endpoint: String::new(),
            api_key_path: None,
            fixture_dir: None,
            cache_dir: None,
            image_width: 640,
            image_height: 640,
            concurrency: 4,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSection {
    /// Program plus leading arguments; the gateway appends
    /// <manifest> <output> <label_map>.
    pub adapter: Vec<String>,
    pub label_map: Option<PathBuf>,
    pub min_confidence: Option<f64>,
    /// Normalized [x, y] polygon; detections outside it are ignored.
    pub mask: Option<Vec<[f64; 2]>>,
}

impl DetectorSection {
    pub fn adapter_command(&self) -> Result<AdapterCommand> {
        if self.adapter.is_empty() {
            bail!(
                "no detector adapter configured: set [detector] adapter = [\"program\", ...] \
                 in the survey config"
            );
        }
        Ok(AdapterCommand {
            program: self.adapter[0].clone(),
            args: self.adapter[1..].to_vec(),
        })
    }

    pub fn mask(&self, default_dashcam: bool) -> Result<Option<DetectionMask>> {
        match &self.mask {
            Some(poly) => {
                let vertices = poly.iter().map(|[x, y]| (*x, *y)).collect();
                Ok(Some(DetectionMask::new(vertices).context("detector mask")?))
            }
            None if default_dashcam => Ok(Some(DetectionMask::dashcam_default())),
            None => Ok(None),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SupportSection {
    pub radius_m: f64,
    pub min_separation_m: f64,
    pub required: usize,
}

impl Default for SupportSection {
    fn default() -> Self {
        let d = SupportFilterConfig::default();
        Self {
            radius_m: d.radius_m,
            min_separation_m: d.min_separation_m,
            required: d.required,
        }
    }
}

impl SupportSection {
    pub fn to_config(&self) -> SupportFilterConfig {
        SupportFilterConfig {
            radius_m: self.radius_m,
            min_separation_m: self.min_separation_m,
            required: self.required,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceSection {
    pub max_gap: usize,
}

impl Default for InferenceSection {
    fn default() -> Self {
        Self {
            max_gap: InferenceConfig::default().max_gap,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DashcamSection {
    /// Directory with one .nmea and one .csv frame manifest per footage
    /// basename.
    pub footage_dir: Option<PathBuf>,
    /// Directory the manifests' relative image paths resolve against.
    pub frames_dir: Option<PathBuf>,
    pub fps_source: f64,
    pub fps_sampled: f64,
}

impl Default for DashcamSection {
    fn default() -> Self {
        Self {
            footage_dir: None,
            frames_dir: None,
            fps_source: 60.0,
            fps_sampled: 5.0,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VisionSection {
    pub calibration: Option<PathBuf>,
    pub gaussian_sigma: f64,
    pub canny_low: f32,
    pub canny_high: f32,
    pub hough_vote_threshold: u32,
    pub min_abs_slope: f64,
    pub upper_row_frac: f64,
    pub bonnet_row_frac: f64,
    pub shoulder_gap_px: f64,
    pub shoulder_band_px: f64,
    pub forward_mask: Option<Vec<[f64; 2]>>,
}

impl Default for VisionSection {
    fn default() -> Self {
        let d = VisionConfig::default();
        Self {
            calibration: None,
            gaussian_sigma: d.gaussian_sigma,
            canny_low: d.canny_low,
            canny_high: d.canny_high,
            hough_vote_threshold: d.hough.vote_threshold,
            min_abs_slope: d.min_abs_slope,
            upper_row_frac: d.upper_row_frac,
            bonnet_row_frac: d.bonnet_row_frac,
            shoulder_gap_px: d.shoulder_gap_px,
            shoulder_band_px: d.shoulder_band_px,
            forward_mask: None,
        }
    }
}

impl VisionSection {
    pub fn to_config(&self) -> VisionConfig {
        VisionConfig {
            gaussian_sigma: self.gaussian_sigma,
            canny_low: self.canny_low,
            canny_high: self.canny_high,
            hough: HoughConfig {
                vote_threshold: self.hough_vote_threshold,
                ..HoughConfig::default()
            },
            min_abs_slope: self.min_abs_slope,
            upper_row_frac: self.upper_row_frac,
            bonnet_row_frac: self.bonnet_row_frac,
            forward_mask: self
                .forward_mask
                .as_ref()
                .map(|poly| poly.iter().map(|[x, y]| (*x, *y)).collect()),
            shoulder_gap_px: self.shoulder_gap_px,
            shoulder_band_px: self.shoulder_band_px,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShoulderSection {
    pub min_detect_fraction: f64,
    pub min_mean_width_px: f64,
    pub max_stddev_px: f64,
    pub intersection_exclusion_m: f64,
    pub min_frames: usize,
}

impl Default for ShoulderSection {
    fn default() -> Self {
        let d = ShoulderConfig::default();
        Self {
            min_detect_fraction: d.min_detect_fraction,
            min_mean_width_px: d.min_mean_width_px,
            max_stddev_px: d.max_stddev_px,
            intersection_exclusion_m: d.intersection_exclusion_m,
            min_frames: d.min_frames,
        }
    }
}

impl ShoulderSection {
    pub fn to_config(&self) -> ShoulderConfig {
        ShoulderConfig {
            min_detect_fraction: self.min_detect_fraction,
            min_mean_width_px: self.min_mean_width_px,
            max_stddev_px: self.max_stddev_px,
            intersection_exclusion_m: self.intersection_exclusion_m,
            min_frames: self.min_frames,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OverlaySection {
    /// External route dataset (GeoJSON) copied alongside the comparison
    /// layers for visual inspection only.
    pub geojson: Option<PathBuf>,
}

impl SurveyConfig {
    /// Loads and validates the configuration. Relative paths are resolved
    /// against the config file's directory (made absolute, so results do
    /// not depend on the invoking working directory).
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let mut cfg: SurveyConfig = toml::from_str(&text)
            .with_context(|| format!("cannot parse config {}", path.display()))?;
        let absolute = std::fs::canonicalize(path)
            .with_context(|| format!("cannot resolve config path {}", path.display()))?;
        let base = absolute.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&p);
            }
        };
        resolve(&mut self.survey.extract);
        if let Some(p) = &mut self.survey.margin_extract {
            resolve(p);
        }
        resolve(&mut self.survey.output_dir);
        for p in [
            self.imagery.api_key_path.as_mut(),
            self.imagery.fixture_dir.as_mut(),
            self.imagery.cache_dir.as_mut(),
            self.detector.label_map.as_mut(),
            self.dashcam.footage_dir.as_mut(),
            self.dashcam.frames_dir.as_mut(),
            self.vision.calibration.as_mut(),
            self.overlay.geojson.as_mut(),
        ]
        .into_iter()
        .flatten()
        {
            resolve(p);
        }
    }

    fn validate(&self) -> Result<()> {
        if !self.survey.extract.exists() {
            bail!(
                "survey extract {} does not exist",
                self.survey.extract.display()
            );
        }
        if let Some(margin) = &self.survey.margin_extract {
            if !margin.exists() {
                bail!("margin extract {} does not exist", margin.display());
            }
        }
        match self.imagery.mode.as_str() {
            "offline" | "network" => {}
            other => bail!("imagery mode must be \"offline\" or \"network\", got {other:?}"),
        }
        if let Some(conf) = self.detector.min_confidence {
            if !(0.0..=1.0).contains(&conf) {
                bail!("detector min_confidence {conf} outside [0, 1]");
            }
        }
        if !(0.0..=1.0).contains(&self.shoulder.min_detect_fraction) {
            bail!(
                "shoulder min_detect_fraction {} outside [0, 1]",
                self.shoulder.min_detect_fraction
            );
        }
        Ok(())
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.imagery
            .cache_dir
            .clone()
            .unwrap_or_else(|| self.survey.output_dir.join("imagery_cache"))
    }

    pub fn inference(&self) -> InferenceConfig {
        InferenceConfig {
            max_gap: self.inference.max_gap,
        }
    }
}
