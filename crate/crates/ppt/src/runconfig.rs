//! Run configuration JSON: model shape, compression schedule, input
//! normalization and run flags. Unknown keys are rejected so typos fail
//! loudly instead of silently running defaults.

use serde::{Deserialize, Serialize};

use crate::compress::CompressionSchedule;
use crate::error::{Error, Result};
use crate::ppm::Image;
use crate::vit::ModelConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalization {
    /// Per-channel mean and std applied as (v/255 - mean) / std.
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization { mean: vec![0.5, 0.5, 0.5], std: vec![0.5, 0.5, 0.5] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunFlags {
    /// Score every layer (without compressing) for variance analysis.
    pub observe: bool,
    /// Render the patch map even when no --viz path is given on the CLI.
    pub viz: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    #[serde(default = "CompressionSchedule::empty")]
    pub schedule: CompressionSchedule,
    #[serde(default)]
    pub normalization: Normalization,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub flags: RunFlags,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.schedule.validate(&self.model)?;
        let c = self.model.channels;
        if self.normalization.mean.len() != c || self.normalization.std.len() != c {
            return Err(Error::Config(format!(
                "normalization needs {c} mean and std entries (one per channel)"
            )));
        }
        if self.normalization.std.iter().any(|&s| s <= 0.0 || !s.is_finite()) {
            return Err(Error::Config("normalization std entries must be positive and finite".into()));
        }
        if self.normalization.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::Config("normalization mean entries must be finite".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rc: RunConfig = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("invalid run config: {e}")))?;
        rc.validate()?;
        Ok(rc)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

/// Converts an 8-bit RGB image to the normalized HWC float layout that
/// `patch_embed` consumes.
pub fn normalize_image(img: &Image, cfg: &ModelConfig, norm: &Normalization) -> Result<Vec<f32>> {
    if cfg.channels != 3 {
        return Err(Error::Config("PPM input supports 3-channel models only".into()));
    }
    if img.width != cfg.image_size || img.height != cfg.image_size {
        return Err(Error::Image(format!(
            "image is {}x{} but the model expects {}x{}",
            img.width, img.height, cfg.image_size, cfg.image_size
        )));
    }
    let mut out = Vec::with_capacity(img.pixels.len());
    for (i, &b) in img.pixels.iter().enumerate() {
        let c = i % 3;
        out.push((b as f32 / 255.0 - norm.mean[c]) / norm.std[c]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_model_json() -> &'static str {
        r#"{"image_size": 32, "patch_size": 16, "channels": 3, "dim": 8, "depth": 2, "heads": 2, "num_classes": 5}"#
    }

    #[test]
    fn defaults_fill_in() {
        let rc = RunConfig::from_json(&format!(r#"{{"model": {}}}"#, tiny_model_json())).unwrap();
        assert!(rc.schedule.stages.is_empty());
        assert_eq!(rc.normalization, Normalization::default());
        assert_eq!(rc.seed, 0);
        assert!(!rc.flags.observe && !rc.flags.viz);
    }

    #[test]
    fn unknown_keys_rejected() {
        let bad = format!(r#"{{"model": {}, "scheduel": {{}}}}"#, tiny_model_json());
        assert!(RunConfig::from_json(&bad).is_err());
        let bad_flag = format!(r#"{{"model": {}, "flags": {{"observ": true}}}}"#, tiny_model_json());
        assert!(RunConfig::from_json(&bad_flag).is_err());
    }

    #[test]
    fn normalization_validated() {
        let bad = format!(
            r#"{{"model": {}, "normalization": {{"mean": [0.5, 0.5], "std": [0.5, 0.5]}}}}"#,
            tiny_model_json()
        );
        assert!(RunConfig::from_json(&bad).is_err(), "wrong channel count");
        let zero_std = format!(
            r#"{{"model": {}, "normalization": {{"mean": [0.5, 0.5, 0.5], "std": [0.5, 0.0, 0.5]}}}}"#,
            tiny_model_json()
        );
        assert!(RunConfig::from_json(&zero_std).is_err());
    }

    #[test]
    fn schedule_validated_against_model() {
        let bad = format!(
            r#"{{"model": {}, "schedule": {{"stages": [{{"layer": 9, "r": 1}}]}}}}"#,
            tiny_model_json()
        );
        assert!(RunConfig::from_json(&bad).is_err(), "stage layer beyond depth");
    }

    #[test]
    fn normalize_maps_byte_range() {
        let rc = RunConfig::from_json(&format!(r#"{{"model": {}}}"#, tiny_model_json())).unwrap();
        let mut img = Image::new(32, 32);
        img.pixels[0] = 255;
        img.pixels[1] = 0;
        let v = normalize_image(&img, &rc.model, &rc.normalization).unwrap();
        assert!((v[0] - 1.0).abs() < 1e-6);
        assert!((v[1] + 1.0).abs() < 1e-6);
        assert_eq!(v.len(), 32 * 32 * 3);
    }
}
