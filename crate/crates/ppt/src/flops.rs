//! Analytical FLOPs accounting for a ViT under any token schedule.
//!
//! Convention: one multiply-accumulate counts as one FLOP ("multiply-adds"),
//! which is the only convention under which DeiT-S comes out at 4.6 G.
//! LayerNorm, GELU and softmax are omitted (sub-1% and conventionally
//! ignored).

use serde::{Deserialize, Serialize};

use crate::compress::CompressionSchedule;
use crate::error::{Error, Result};
use crate::vit::ModelConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerFlops {
    pub layer: usize,
    pub token_count_msa: usize,
    pub token_count_ffn: usize,
    pub msa_flops: u64,
    pub ffn_flops: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlopsReport {
    pub per_layer: Vec<LayerFlops>,
    pub patch_embed_flops: u64,
    pub head_flops: u64,
    pub total: u64,
    pub baseline_total: u64,
    pub reduction_percent: f64,
}

/// MSA and FFN cost of one block. The attention side may run on more tokens
/// than the FFN side when a compression stage sits between them.
///
/// msa = 4 n d^2 + 2 n^2 d (QKV + output projections, two attention
/// matrix products); ffn = 2 n d (mlp_ratio d).
pub fn block_flops(n_msa: usize, n_ffn: usize, cfg: &ModelConfig) -> (u64, u64) {
    let d = cfg.dim as u64;
    let nm = n_msa as u64;
    let nf = n_ffn as u64;
    let msa = 4 * nm * d * d + 2 * nm * nm * d;
    let ffn = 2 * nf * d * (cfg.mlp_ratio as u64 * d);
    (msa, ffn)
}

fn patch_embed_flops(cfg: &ModelConfig) -> u64 {
    (cfg.num_patches() * cfg.channels * cfg.patch_size * cfg.patch_size * cfg.dim) as u64
}

fn head_flops(cfg: &ModelConfig) -> u64 {
    (cfg.dim * cfg.num_classes) as u64
}

/// Per-layer (msa tokens, ffn tokens) counts implied by a schedule, with
/// compression sitting after the attention and before the FFN of its block.
///
/// The per-stage removal is capped at half the image tokens, the bipartite
/// matcher's feasibility limit; the published complexity numbers for large
/// `r` are only reproduced with this cap in place.
pub fn token_trajectory(cfg: &ModelConfig, schedule: &CompressionSchedule) -> Result<Vec<(usize, usize)>> {
    cfg.validate()?;
    schedule.validate(cfg)?;
    let mut n = cfg.initial_tokens();
    let mut out = Vec::with_capacity(cfg.depth);
    for layer in 1..=cfg.depth {
        let n_msa = n;
        if let Some((_, stage)) = schedule.stage_at_layer(layer) {
            let cap = (n - 1) / 2;
            let r = stage.r.min(cap);
            if n - r < 2 {
                return Err(Error::Schedule(format!(
                    "schedule exhausts the token budget at layer {layer}"
                )));
            }
            n -= r;
        }
        out.push((n_msa, n));
    }
    Ok(out)
}

/// Sums a full report for an explicit per-layer token trajectory.
pub fn report_for_trajectory(cfg: &ModelConfig, trajectory: &[(usize, usize)]) -> FlopsReport {
    let mut per_layer = Vec::with_capacity(trajectory.len());
    let mut total = patch_embed_flops(cfg) + head_flops(cfg);
    for (i, &(n_msa, n_ffn)) in trajectory.iter().enumerate() {
        let (msa, ffn) = block_flops(n_msa, n_ffn, cfg);
        total += msa + ffn;
        per_layer.push(LayerFlops {
            layer: i + 1,
            token_count_msa: n_msa,
            token_count_ffn: n_ffn,
            msa_flops: msa,
            ffn_flops: ffn,
        });
    }
    let n0 = cfg.initial_tokens();
    let (bm, bf) = block_flops(n0, n0, cfg);
    let baseline_total =
        patch_embed_flops(cfg) + head_flops(cfg) + cfg.depth as u64 * (bm + bf);
    let reduction_percent = 100.0 * (1.0 - total as f64 / baseline_total as f64);
    FlopsReport { per_layer, patch_embed_flops: patch_embed_flops(cfg), head_flops: head_flops(cfg), total, baseline_total, reduction_percent }
}

/// Full analytic report for a config and schedule.
pub fn model_flops(cfg: &ModelConfig, schedule: &CompressionSchedule) -> Result<FlopsReport> {
    Ok(report_for_trajectory(cfg, &token_trajectory(cfg, schedule)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compress::Stage;

    fn within(value: u64, expected: f64, tol: f64) -> bool {
        (value as f64 - expected).abs() <= tol * expected
    }

    #[test]
    fn deit_s_block_components() {
        let cfg = ModelConfig::deit_s();
        let (msa, ffn) = block_flops(197, 197, &cfg);
        assert_eq!(msa, 146_000_640); // 1.460e8
        assert_eq!(ffn, 232_390_656); // 2.324e8
        let (msa2, ffn2) = block_flops(150, 150, &cfg);
        let (msa3, ffn3) = block_flops(150, 150, &cfg);
        assert_eq!((msa2, ffn2), (msa3, ffn3));
    }

    #[test]
    fn baselines_match_published_totals() {
        let s = model_flops(&ModelConfig::deit_s(), &CompressionSchedule::empty()).unwrap();
        assert!(within(s.total, 4.6e9, 0.02), "DeiT-S baseline {}", s.total);
        assert_eq!(s.total, s.baseline_total);
        assert_eq!(s.reduction_percent, 0.0);

        let b = model_flops(&ModelConfig::deit_b(), &CompressionSchedule::empty()).unwrap();
        assert!(within(b.total, 17.6e9, 0.02), "DeiT-B baseline {}", b.total);
    }

    #[test]
    fn published_compression_columns_within_two_percent() {
        // appendix token-schedule tables: removed tokens per stage -> GFLOPs
        let table: &[(ModelConfig, &[(usize, f64)])] = &[
            (
                ModelConfig::deit_ti(),
                &[(10, 1.16), (20, 1.07), (30, 0.97), (40, 0.89), (45, 0.84), (50, 0.80), (60, 0.74)],
            ),
            (
                ModelConfig::deit_s(),
                &[(10, 4.26), (20, 3.92), (30, 3.59), (40, 3.26), (50, 2.94), (60, 2.72)],
            ),
            (ModelConfig::deit_b(), &[(40, 12.48), (47, 11.60), (50, 11.27)]),
        ];
        for (cfg, rows) in table {
            for &(r, gflops) in *rows {
                let rep = model_flops(cfg, &CompressionSchedule::deit_stages(r)).unwrap();
                assert!(
                    within(rep.total, gflops * 1e9, 0.02),
                    "d={} r={r}: {} vs {gflops}G",
                    cfg.dim,
                    rep.total
                );
            }
        }
    }

    #[test]
    fn deit_s_reduction_percent_range() {
        let rep = model_flops(&ModelConfig::deit_s(), &CompressionSchedule::deit_stages(50)).unwrap();
        assert!(rep.reduction_percent >= 35.0 && rep.reduction_percent <= 38.0, "{}", rep.reduction_percent);
    }

    #[test]
    fn monotone_decreasing_in_r() {
        let cfg = ModelConfig::deit_s();
        let mut last = u64::MAX;
        for r in [0usize, 10, 20, 30, 40, 50, 60] {
            let rep = model_flops(&cfg, &CompressionSchedule::deit_stages(r)).unwrap();
            assert!(rep.total < last, "r={r}");
            last = rep.total;
        }
    }

    #[test]
    fn total_is_sum_of_components() {
        let cfg = ModelConfig::deit_s();
        let rep = model_flops(&cfg, &CompressionSchedule::deit_stages(50)).unwrap();
        let sum: u64 = rep.per_layer.iter().map(|l| l.msa_flops + l.ffn_flops).sum::<u64>()
            + rep.patch_embed_flops
            + rep.head_flops;
        assert_eq!(rep.total, sum);
        let expect = 100.0 * (1.0 - rep.total as f64 / rep.baseline_total as f64);
        assert_eq!(rep.reduction_percent, expect);
    }

    #[test]
    fn compression_sits_between_msa_and_ffn() {
        let cfg = ModelConfig::deit_s();
        let rep = model_flops(&cfg, &CompressionSchedule::deit_stages(50)).unwrap();
        let l4 = &rep.per_layer[3];
        assert_eq!((l4.token_count_msa, l4.token_count_ffn), (197, 147));
        let l5 = &rep.per_layer[4];
        assert_eq!((l5.token_count_msa, l5.token_count_ffn), (147, 147));
    }

    #[test]
    fn budget_exhaustion_errors() {
        let cfg = ModelConfig {
            image_size: 32,
            patch_size: 16,
            channels: 3,
            dim: 64,
            depth: 2,
            heads: 2,
            mlp_ratio: 4,
            num_classes: 10,
        };
        // 5 tokens; removing 4 leaves nothing
        let sched = CompressionSchedule {
            stages: vec![Stage { layer: 1, r: 4 }],
            ..CompressionSchedule::default()
        };
        assert!(model_flops(&cfg, &sched).is_err());
    }
}
