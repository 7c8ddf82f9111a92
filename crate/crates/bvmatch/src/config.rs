//! Pipeline configuration and the key=value config-file format.
//!
//! Every tunable of the pipeline lives here with its default. A config file
//! is plain text, one `key = value` pair per line, `#` comments allowed;
//! unknown keys are rejected. CLI flags override file values.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::loggabor::LogGaborParams;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Voxel leaf size and BV grid resolution, meters.
    pub grid_resolution: f64,
    /// Half-size of the cubic crop window, meters.
    pub window_half: f64,
    /// Log-Gabor frequency scales.
    pub scales: usize,
    /// Log-Gabor orientation channels over `[0, pi)`.
    pub orientations: usize,
    /// Wavelength of the finest scale, pixels.
    pub min_wavelength: f64,
    /// Wavelength multiplier between scales.
    pub scale_multiplier: f64,
    /// Radial Gaussian width ratio.
    pub sigma_f_ratio: f64,
    /// Angular Gaussian width = (pi / orientations) / divisor.
    pub sigma_omega_divisor: f64,
    /// Descriptor patch side, pixels. Must be divisible by `subgrids`.
    pub patch_size: usize,
    /// Sub-grid count per patch side.
    pub subgrids: usize,
    /// FAST intensity threshold, in [0, 1] intensity units.
    pub fast_threshold: f64,
    /// Keep at most this many keypoints per frame.
    pub max_keypoints: usize,
    /// MIM validity floor; `None` = 1e-4 x mean winning amplitude.
    pub noise_floor: Option<f64>,
    /// Lowe ratio for descriptor matching.
    pub match_ratio: f64,
    /// RANSAC inlier radius, pixels.
    pub ransac_inlier_px: f64,
    /// RANSAC iteration cap.
    pub ransac_max_iters: usize,
    /// RANSAC early-exit confidence.
    pub ransac_confidence: f64,
    /// Planar ICP iteration cap.
    pub icp_max_iters: usize,
    /// ICP stop threshold on the change of mean residual, meters.
    pub icp_tolerance: f64,
    /// ICP correspondence rejection distance, meters.
    pub icp_max_corr_dist: f64,
    /// Bag-of-words dictionary size.
    pub dict_words: usize,
    /// K-means iteration cap.
    pub kmeans_max_iters: usize,
    /// Keyframe spacing, meters.
    pub keyframe_spacing: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            grid_resolution: 0.4,
            window_half: 50.0,
            scales: 4,
            orientations: 6,
            min_wavelength: 3.0,
            scale_multiplier: 1.6,
            sigma_f_ratio: 0.75,
            sigma_omega_divisor: 1.2,
            patch_size: 96,
            subgrids: 6,
            fast_threshold: 0.06,
            max_keypoints: 500,
            noise_floor: None,
            match_ratio: 0.9,
            ransac_inlier_px: 2.5,
            ransac_max_iters: 2000,
            ransac_confidence: 0.999,
            icp_max_iters: 50,
            icp_tolerance: 1e-4,
            icp_max_corr_dist: 2.0,
            dict_words: 10_000,
            kmeans_max_iters: 100,
            keyframe_spacing: 10.0,
        }
    }
}

impl PipelineConfig {
    pub fn loggabor_params(&self) -> LogGaborParams {
        LogGaborParams {
            scales: self.scales,
            orientations: self.orientations,
            min_wavelength: self.min_wavelength,
            scale_multiplier: self.scale_multiplier,
            sigma_f_ratio: self.sigma_f_ratio,
            sigma_omega: (PI / self.orientations as f64) / self.sigma_omega_divisor,
        }
    }

    /// Descriptor vector length: `subgrids^2 * orientations`.
    pub fn descriptor_dim(&self) -> usize {
        self.subgrids * self.subgrids * self.orientations
    }

    pub fn validate(&self) -> Result<()> {
        self.loggabor_params().validate()?;
        if !(self.grid_resolution > 0.0) || !(self.window_half > 0.0) {
            return Err(Error::InvalidParam(
                "grid resolution and window must be positive".into(),
            ));
        }
        if self.subgrids == 0 || self.patch_size % self.subgrids != 0 {
            return Err(Error::InvalidParam(format!(
                "patch size {} must be divisible by subgrids {}",
                self.patch_size, self.subgrids
            )));
        }
        if !(self.fast_threshold > 0.0 && self.fast_threshold < 1.0) {
            return Err(Error::InvalidParam(
                "fast threshold must lie in (0, 1)".into(),
            ));
        }
        if !(self.match_ratio > 0.0 && self.match_ratio <= 1.0) {
            return Err(Error::InvalidParam("match ratio must be in (0, 1]".into()));
        }
        if !(self.ransac_confidence > 0.0 && self.ransac_confidence < 1.0) {
            return Err(Error::InvalidParam(
                "ransac confidence must be in (0, 1)".into(),
            ));
        }
        Ok(())
    }

    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn f(value: &str, key: &str) -> Result<f64> {
            value.parse().map_err(|_| {
                Error::InvalidParam(format!("{key}: expected a number, got {value:?}"))
            })
        }
        fn n(value: &str, key: &str) -> Result<usize> {
            value.parse().map_err(|_| {
                Error::InvalidParam(format!("{key}: expected an integer, got {value:?}"))
            })
        }
        match key {
            "grid_resolution" => self.grid_resolution = f(value, key)?,
            "window_half" => self.window_half = f(value, key)?,
            "scales" => self.scales = n(value, key)?,
            "orientations" => self.orientations = n(value, key)?,
            "min_wavelength" => self.min_wavelength = f(value, key)?,
            "scale_multiplier" => self.scale_multiplier = f(value, key)?,
            "sigma_f_ratio" => self.sigma_f_ratio = f(value, key)?,
            "sigma_omega_divisor" => self.sigma_omega_divisor = f(value, key)?,
            "patch_size" => self.patch_size = n(value, key)?,
            "subgrids" => self.subgrids = n(value, key)?,
            "fast_threshold" => self.fast_threshold = f(value, key)?,
            "max_keypoints" => self.max_keypoints = n(value, key)?,
            "noise_floor" => {
                self.noise_floor = if value.eq_ignore_ascii_case("auto") {
                    None
                } else {
                    Some(f(value, key)?)
                }
            }
            "match_ratio" => self.match_ratio = f(value, key)?,
            "ransac_inlier_px" => self.ransac_inlier_px = f(value, key)?,
            "ransac_max_iters" => self.ransac_max_iters = n(value, key)?,
            "ransac_confidence" => self.ransac_confidence = f(value, key)?,
            "icp_max_iters" => self.icp_max_iters = n(value, key)?,
            "icp_tolerance" => self.icp_tolerance = f(value, key)?,
            "icp_max_corr_dist" => self.icp_max_corr_dist = f(value, key)?,
            "dict_words" => self.dict_words = n(value, key)?,
            "kmeans_max_iters" => self.kmeans_max_iters = n(value, key)?,
            "keyframe_spacing" => self.keyframe_spacing = f(value, key)?,
            _ => return Err(Error::InvalidParam(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Loads a config file on top of the defaults.
    pub fn from_file(path: &Path) -> Result<PipelineConfig> {
        let mut config = PipelineConfig::default();
        config.merge_file(path)?;
        config.validate()?;
        Ok(config)
    }

    /// Merges `key = value` lines from a file into this config.
    pub fn merge_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Malformed {
                path: path.into(),
                location: format!("line {}", lineno + 1),
                message: "expected key = value".into(),
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }
}
