use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn default_mlp_ratio() -> usize {
    4
}

/// Shape parameters of a generic ViT. DeiT-Ti/S/B are just presets of this.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub channels: usize,
    pub dim: usize,
    pub depth: usize,
    pub heads: usize,
    #[serde(default = "default_mlp_ratio")]
    pub mlp_ratio: usize,
    pub num_classes: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || self.patch_size == 0 {
            return Err(Error::Config("image_size and patch_size must be positive".into()));
        }
        if self.image_size % self.patch_size != 0 {
            return Err(Error::Config(format!(
                "image_size {} not divisible by patch_size {}",
                self.image_size, self.patch_size
            )));
        }
        if self.dim == 0 || self.heads == 0 || self.dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "dim {} must be a positive multiple of heads {}",
                self.dim, self.heads
            )));
        }
        if self.channels == 0 || self.depth == 0 || self.mlp_ratio == 0 || self.num_classes == 0 {
            return Err(Error::Config("channels, depth, mlp_ratio, num_classes must be positive".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn num_patches(&self) -> usize {
        self.grid() * self.grid()
    }

    /// Token count at the input of the first block: patches plus CLS.
    pub fn initial_tokens(&self) -> usize {
        self.num_patches() + 1
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn mlp_hidden(&self) -> usize {
        self.dim * self.mlp_ratio
    }

    pub fn patch_dim(&self) -> usize {
        self.channels * self.patch_size * self.patch_size
    }

    pub fn deit_ti() -> Self {
        ModelConfig {
            image_size: 224,
            patch_size: 16,
            channels: 3,
            dim: 192,
            depth: 12,
            heads: 3,
            mlp_ratio: 4,
            num_classes: 1000,
        }
    }

    pub fn deit_s() -> Self {
        ModelConfig { dim: 384, heads: 6, ..Self::deit_ti() }
    }

    pub fn deit_b() -> Self {
        ModelConfig { dim: 768, heads: 12, ..Self::deit_ti() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deit_s_shape_arithmetic() {
        let c = ModelConfig::deit_s();
        c.validate().unwrap();
        assert_eq!(c.num_patches(), 196);
        assert_eq!(c.initial_tokens(), 197);
        assert_eq!(c.head_dim(), 64);
        assert_eq!(c.mlp_hidden(), 1536);
    }

    #[test]
    fn rejects_indivisible_shapes() {
        let mut c = ModelConfig::deit_s();
        c.image_size = 225;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::deit_s();
        c.heads = 5;
        assert!(c.validate().is_err());
    }
}
