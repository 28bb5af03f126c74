use crate::compress::{ScoreVector, Scoring};
use crate::error::{Error, Result};
use crate::vit::AttentionByproducts;

/// Significance score per image token: the CLS attention weight, optionally
/// multiplied by the value norm, averaged over heads and normalized to sum 1.
pub fn significance_scores(
    byproducts: &AttentionByproducts,
    scoring: Scoring,
) -> Result<ScoreVector> {
    let heads = byproducts.cls_attention.len();
    if heads == 0 {
        return Err(Error::Numeric("no attention heads in byproducts".into()));
    }
    let n = byproducts.cls_attention[0].len();
    if n < 2 {
        return Err(Error::Numeric("need at least one image token to score".into()));
    }
    let m = n - 1;
    let mut raw = vec![0.0f64; m];
    for h in 0..heads {
        let att = &byproducts.cls_attention[h];
        let vn = &byproducts.value_norms[h];
        for i in 0..m {
            let a = att[i + 1] as f64;
            raw[i] += match scoring {
                Scoring::AttentionTimesVnorm => a * vn[i + 1] as f64,
                Scoring::AttentionOnly => a,
            };
        }
    }
    let total: f64 = raw.iter().sum();
    if !total.is_finite() || total <= 0.0 {
        return Err(Error::Numeric("degenerate all-zero significance scores".into()));
    }
    ScoreVector::new(raw.iter().map(|&v| (v / total) as f32).collect())
}
