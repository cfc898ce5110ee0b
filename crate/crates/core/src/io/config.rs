//! Experiment configuration (TOML). Every section and key is optional except
//! `schema_version`; omitted values take the library defaults. Unknown keys are errors.
//!
//! ```toml
//! schema_version = 1
//! seed = 7
//!
//! [camera]          # Kinect defaults
//! width = 640
//! height = 480
//!
//! [filter]
//! mode = "adaptive"
//!
//! [[scene.surfaces]]
//! kind = "plane"
//! coeffs = [0.0, 0.0, -0.001]
//! ```

use serde::{Deserialize, Serialize};

use super::IoError;
use crate::denoise::{default_adaptive_k, default_radius, FilterConfig, RangeKernel};
use crate::depth_image::{Surface, SynthOptions};
use crate::noise_model::{
    CameraModel, NoiseParams, KINECT_BASELINE_MM, KINECT_DEPTH_STEP_MM, KINECT_DISPARITY_STEP,
    KINECT_FOCAL_PX,
};
use crate::planes::PlaneParams;
use crate::tsdf::WeightingMode;
use crate::Pose;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    /// Seed of every stochastic draw (synthetic disparity noise).
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub camera: CameraConfig,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub filter: FilterSection,
    #[serde(default)]
    pub volume: VolumeSection,
    #[serde(default)]
    pub planes: PlaneParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<SceneConfig>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            camera: CameraConfig::default(),
            noise: NoiseSection::default(),
            filter: FilterSection::default(),
            volume: VolumeSection::default(),
            planes: PlaneParams::default(),
            scene: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, IoError> {
        let cfg: Self = toml::from_str(text).map_err(|e| IoError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String, IoError> {
        toml::to_string(self).map_err(|e| IoError::Format(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self, IoError> {
        let text = std::fs::read_to_string(path).map_err(|e| IoError::file(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            IoError::Config(m) => IoError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<(), IoError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(IoError::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let cam = self.camera.model()?;
        self.noise.params(&cam)?;
        self.filter.config(&cam)?;
        self.volume.validate()?;
        self.planes
            .validate()
            .map_err(|e| IoError::Config(e.to_string()))?;
        if let Some(scene) = &self.scene {
            scene.validate()?;
        }
        Ok(())
    }

    /// Synthetic sensor options for the scene, seeded from the top-level seed.
    pub fn synth_options(&self, quantize: bool) -> SynthOptions {
        SynthOptions {
            quantize,
            disparity_noise: self.scene.as_ref().map_or(0.0, |s| s.disparity_noise),
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraConfig {
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub baseline: f64,
    /// Principal point; defaults to the image center `((w-1)/2, (h-1)/2)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cx: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cy: Option<f64>,
    pub disparity_step: f64,
    pub depth_step: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            width: 640,
            height: 480,
            focal: KINECT_FOCAL_PX,
            baseline: KINECT_BASELINE_MM,
            cx: None,
            cy: None,
            disparity_step: KINECT_DISPARITY_STEP,
            depth_step: KINECT_DEPTH_STEP_MM,
        }
    }
}

impl CameraConfig {
    /// Camera for the configured image size.
    pub fn model(&self) -> Result<CameraModel, IoError> {
        if self.width == 0 || self.height == 0 {
            return Err(IoError::Config(
                "camera width and height must be positive".into(),
            ));
        }
        self.model_for(self.width, self.height)
    }

    /// Camera for a raster of the given size: only an unset principal point depends on it.
    pub fn model_for(&self, width: usize, height: usize) -> Result<CameraModel, IoError> {
        CameraModel::new(
            self.focal,
            self.baseline,
            self.cx.unwrap_or((width as f64 - 1.0) / 2.0),
            self.cy.unwrap_or((height as f64 - 1.0) / 2.0),
            self.disparity_step,
            self.depth_step,
        )
        .map_err(|e| IoError::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    /// `sigma(Z) = k Z^2` (mm^-1); defaults to one disparity step over `fB`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
}

impl NoiseSection {
    pub fn params(&self, cam: &CameraModel) -> Result<NoiseParams, IoError> {
        match self.k {
            None => Ok(cam.default_noise()),
            Some(k) => NoiseParams::new(k).map_err(|e| IoError::Config(e.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterMode {
    Gaussian,
    Bilateral,
    #[default]
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterSection {
    pub mode: FilterMode,
    pub sigma_s: f64,
    /// Window half-width; defaults to `ceil(3 sigma_s)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radius: Option<usize>,
    /// Fixed range deviation (mm), bilateral mode only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_d: Option<f64>,
    /// Adaptive range coefficient (mm^-1); defaults to three disparity steps over `fB`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
}

impl Default for FilterSection {
    fn default() -> Self {
        Self {
            mode: FilterMode::Adaptive,
            sigma_s: 3.0,
            radius: None,
            sigma_d: None,
            k: None,
        }
    }
}

impl FilterSection {
    pub fn config(&self, cam: &CameraModel) -> Result<FilterConfig, IoError> {
        let range = match (self.mode, self.sigma_d, self.k) {
            (FilterMode::Gaussian, None, None) => None,
            (FilterMode::Bilateral, Some(sigma_d), None) => Some(RangeKernel::Fixed { sigma_d }),
            (FilterMode::Bilateral, None, _) => {
                return Err(IoError::Config("bilateral mode needs sigma_d".into()));
            }
            (FilterMode::Adaptive, None, k) => Some(RangeKernel::Adaptive {
                k: k.unwrap_or_else(|| default_adaptive_k(cam)),
            }),
            (mode, _, _) => {
                return Err(IoError::Config(format!(
                    "conflicting range settings for {mode:?} mode"
                )));
            }
        };
        let cfg = FilterConfig {
            sigma_s: self.sigma_s,
            radius: self.radius.unwrap_or_else(|| default_radius(self.sigma_s)),
            range,
        };
        cfg.validate().map_err(|e| IoError::Config(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VolumeSection {
    pub voxel_size: f64,
    pub mode: WeightingMode,
    /// Symmetric truncation (mm); defaults to four voxels.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truncation: Option<f64>,
    /// Explicit grid; when absent the grid encloses every back-projected point plus `margin`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub origin: Option<[f64; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dims: Option<[usize; 3]>,
    pub margin: f64,
}

impl Default for VolumeSection {
    fn default() -> Self {
        Self {
            voxel_size: 4.0,
            mode: WeightingMode::InverseQuartic,
            truncation: None,
            origin: None,
            dims: None,
            margin: 20.0,
        }
    }
}

impl VolumeSection {
    pub fn validate(&self) -> Result<(), IoError> {
        if !(self.voxel_size.is_finite() && self.voxel_size > 0.0) {
            return Err(IoError::Config(format!(
                "voxel_size must be > 0, got {}",
                self.voxel_size
            )));
        }
        if self.origin.is_some() != self.dims.is_some() {
            return Err(IoError::Config(
                "volume origin and dims must be given together".into(),
            ));
        }
        if let Some(t) = self.truncation {
            if !(t.is_finite() && t > 0.0) {
                return Err(IoError::Config(format!("truncation must be > 0, got {t}")));
            }
        }
        if !(self.margin.is_finite() && self.margin >= 0.0) {
            return Err(IoError::Config(format!(
                "margin must be >= 0, got {}",
                self.margin
            )));
        }
        Ok(())
    }
}

/// Synthetic scene: world-frame surfaces seen from `pose`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    /// World-to-camera `[R | T]`, row-major; identity when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose: Option<Pose>,
    /// Gaussian disparity noise (px) added before quantization.
    #[serde(default)]
    pub disparity_noise: f64,
    pub surfaces: Vec<Surface>,
}

impl SceneConfig {
    pub fn pose(&self) -> Pose {
        self.pose.unwrap_or_else(Pose::identity)
    }

    fn validate(&self) -> Result<(), IoError> {
        if self.surfaces.is_empty() {
            return Err(IoError::Config("scene has no surfaces".into()));
        }
        if !(self.disparity_noise.is_finite() && self.disparity_noise >= 0.0) {
            return Err(IoError::Config("disparity_noise must be >= 0".into()));
        }
        Ok(())
    }
}
