use crate::compress::{
    CompressionSchedule, Metric, Policy, PolicyDecision, PolicyMode, ScoreVector,
};
use crate::error::{Error, Result};
use crate::numeric::{cosine_similarity, population_variance, Rng};
use crate::vit::TokenBatch;

/// Mean pairwise cosine similarity of the image-token features.
fn mean_token_similarity(batch: &TokenBatch) -> Result<f64> {
    let m = batch.image_tokens();
    if m < 2 {
        return Ok(0.0);
    }
    let mut acc = 0.0f64;
    let mut count = 0u64;
    for i in 0..m {
        for j in (i + 1)..m {
            acc += cosine_similarity(batch.tokens.row(i + 1), batch.tokens.row(j + 1))?;
            count += 1;
        }
    }
    Ok(acc / count as f64)
}

/// Decides prune vs pool for one stage.
///
/// With the score-variance metric the statistic is `var(Score)` and the
/// decision is Prune iff it exceeds tau. With the mean-similarity metric
/// the statistic is the average pairwise token similarity and high
/// similarity (duplicative redundancy) selects Pool. The non-adaptive
/// modes override the decision but the statistic is still reported.
pub fn select_policy(
    scores: &ScoreVector,
    batch: &TokenBatch,
    schedule: &CompressionSchedule,
    stage_index: usize,
    rng: &mut Rng,
) -> Result<PolicyDecision> {
    if stage_index >= schedule.stages.len() {
        return Err(Error::Schedule(format!("stage index {stage_index} out of range")));
    }
    let (sop, base) = match schedule.metric {
        Metric::ScoreVariance => {
            let v = population_variance(scores.values())?;
            (v, if v > schedule.tau { Policy::Prune } else { Policy::Pool })
        }
        Metric::MeanSimilarity => {
            let s = mean_token_similarity(batch)?;
            (s, if s > schedule.tau_sim { Policy::Pool } else { Policy::Prune })
        }
    };
    let flip = |p: Policy| match p {
        Policy::Prune => Policy::Pool,
        Policy::Pool => Policy::Prune,
    };
    let policy = match schedule.mode {
        PolicyMode::Adaptive => base,
        PolicyMode::Inverted => flip(base),
        PolicyMode::PruneOnly => Policy::Prune,
        PolicyMode::PoolOnly => Policy::Pool,
        PolicyMode::RuleBased => {
            // pooling for the first half of stages (round up), pruning after
            let n = schedule.stages.len();
            if stage_index < n.div_ceil(2) {
                Policy::Pool
            } else {
                Policy::Prune
            }
        }
        PolicyMode::Random => {
            if rng.coin() {
                Policy::Prune
            } else {
                Policy::Pool
            }
        }
    };
    Ok(PolicyDecision { policy, sop })
}
