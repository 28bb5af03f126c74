//! Seeded synthetic weights and images, for running the full pipeline
//! without a pretrained checkpoint.

use crate::error::Result;
use crate::numeric::Rng;
use crate::ppm::Image;
use crate::vit::{tensor_specs, ModelConfig, ModelWeights};

pub const WEIGHT_STD: f32 = 0.02;

/// Gaussian(0, 0.02) weights; all biases and LayerNorm betas zero, all
/// LayerNorm gammas one. Tensors are drawn in the canonical `tensor_specs`
/// order from a single generator, so a seed fixes every parameter.
pub fn synthetic_weights(cfg: &ModelConfig, seed: u64) -> Result<ModelWeights> {
    cfg.validate()?;
    let mut rng = Rng::new(seed);
    let mut values = std::collections::HashMap::new();
    for (name, shape) in tensor_specs(cfg) {
        let count: usize = shape.iter().product();
        let data: Vec<f32> = if name.ends_with(".gamma") {
            vec![1.0; count]
        } else if name.ends_with(".beta") || name.ends_with(".bias") || name.ends_with(".bqkv") || name.ends_with(".bproj") {
            vec![0.0; count]
        } else {
            (0..count).map(|_| rng.normal(0.0, WEIGHT_STD)).collect()
        };
        values.insert(name, data);
    }
    ModelWeights::from_named(cfg, |name| Ok(values[name].clone()))
}

/// Deterministic full-range RGB test image: every byte drawn uniformly from
/// the seeded generator.
pub fn synthetic_image(cfg: &ModelConfig, seed: u64) -> Result<Image> {
    cfg.validate()?;
    let mut rng = Rng::new(seed);
    let mut img = Image::new(cfg.image_size, cfg.image_size);
    for b in img.pixels.iter_mut() {
        *b = rng.gen_range(256) as u8;
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig { image_size: 32, patch_size: 16, channels: 3, dim: 8, depth: 2, heads: 2, mlp_ratio: 4, num_classes: 5 }
    }

    #[test]
    fn seed_determines_everything() {
        let cfg = tiny_cfg();
        let a = synthetic_weights(&cfg, 9).unwrap().named_tensors(&cfg);
        let b = synthetic_weights(&cfg, 9).unwrap().named_tensors(&cfg);
        assert_eq!(a.len(), b.len());
        for ((_, _, da), (_, _, db)) in a.iter().zip(&b) {
            assert_eq!(
                da.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                db.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
        let c = synthetic_weights(&cfg, 10).unwrap();
        assert_ne!(
            a[0].2.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            c.named_tensors(&cfg)[0].2.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn structured_tensors_are_fixed() {
        let cfg = tiny_cfg();
        let w = synthetic_weights(&cfg, 3).unwrap();
        assert!(w.layers[0].ln1_gamma.iter().all(|&v| v == 1.0));
        assert!(w.layers[0].ln1_beta.iter().all(|&v| v == 0.0));
        assert!(w.patch_bias.iter().all(|&v| v == 0.0));
        assert!(w.head_bias.iter().all(|&v| v == 0.0));
        // a weight tensor is actually random and small
        let max = w.patch_weight.data().iter().fold(0.0f32, |m, v| m.max(v.abs()));
        assert!(max > 0.0 && max < 0.2);
    }

    #[test]
    fn image_is_seeded() {
        let cfg = tiny_cfg();
        let a = synthetic_image(&cfg, 1).unwrap();
        let b = synthetic_image(&cfg, 1).unwrap();
        let c = synthetic_image(&cfg, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.width, 32);
    }
}
