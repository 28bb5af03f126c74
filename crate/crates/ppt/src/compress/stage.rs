use crate::compress::{
    bsm_merge, compose_deltas, dpc_merge, prune_topk, select_policy, significance_scores,
    CompressionSchedule, Policy, PoolingAlgo, ScoreVector, StageDelta,
};
use crate::error::{Error, Result};
use crate::numeric::Rng;
use crate::vit::{AttentionByproducts, TokenBatch};

/// Everything a compression (or observe-only) hook reports back to the
/// block that invoked it.
#[derive(Debug, Clone, Default)]
pub struct StageOutcome {
    pub policy: Option<Policy>,
    pub sop: Option<f64>,
    pub requested_r: Option<usize>,
    /// Density-peaks cutoff, when that pooling algorithm ran.
    pub dc: Option<f64>,
    pub delta: Option<StageDelta>,
}

/// Runs one schedule stage: score, pick a policy, dispatch to the pruning
/// or pooling primitive, and record provenance.
///
/// When pooling is selected with an `r` beyond the bipartite matcher's
/// feasibility limit (half the image tokens), the stage merges up to the
/// limit and prunes the remainder by score, so every stage removes exactly
/// `r` tokens no matter which policy was chosen.
pub fn compress_stage(
    batch: TokenBatch,
    byproducts: &AttentionByproducts,
    schedule: &CompressionSchedule,
    stage_index: usize,
    rng: &mut Rng,
) -> Result<(TokenBatch, StageOutcome)> {
    let stage = *schedule
        .stages
        .get(stage_index)
        .ok_or_else(|| Error::Schedule(format!("stage index {stage_index} out of range")))?;
    let scores = significance_scores(byproducts, schedule.scoring)?;
    let decision = select_policy(&scores, &batch, schedule, stage_index, rng)?;
    let m = batch.image_tokens();
    let r = stage.r;
    if r > m.saturating_sub(1) {
        return Err(Error::Schedule(format!(
            "stage at layer {} removes {r} tokens but only {m} image tokens remain",
            stage.layer
        )));
    }

    let mut outcome = StageOutcome {
        policy: Some(decision.policy),
        sop: Some(decision.sop),
        requested_r: Some(r),
        dc: None,
        delta: None,
    };
    if r == 0 {
        outcome.delta = Some(StageDelta::identity(m));
        return Ok((batch, outcome));
    }

    let (compressed, delta) = match decision.policy {
        Policy::Prune => prune_topk(&batch, &scores, r)?,
        Policy::Pool => match schedule.pooling {
            PoolingAlgo::Dpc => {
                let (b, d, dc) = dpc_merge(&batch, &batch.tokens.clone(), r, schedule.merge_reduction)?;
                outcome.dc = Some(dc);
                (b, d)
            }
            PoolingAlgo::Bsm => {
                let keys = byproducts.head_mean_keys();
                let cap = m / 2;
                let rp = r.min(cap);
                let (merged, merge_delta) = bsm_merge(&batch, &keys, rp, schedule.merge_reduction)?;
                if r > rp {
                    // merge feasibility overflow: prune the rest by score,
                    // scoring a merged token by the sum of its members
                    let grouped: Vec<f32> = merge_delta
                        .groups
                        .iter()
                        .map(|g| g.iter().map(|&i| scores.values()[i]).sum())
                        .collect();
                    let grouped = ScoreVector::new(grouped)?;
                    let (pruned_batch, prune_delta) = prune_topk(&merged, &grouped, r - rp)?;
                    (pruned_batch, compose_deltas(&merge_delta, &prune_delta)?)
                } else {
                    (merged, merge_delta)
                }
            }
        },
    };
    outcome.delta = Some(delta);
    Ok((compressed, outcome))
}

/// Per-forward-pass compression driver: owns the stage counter and the rng
/// for the random policy, and implements the block hook.
pub struct Compressor {
    schedule: CompressionSchedule,
    rng: Rng,
    /// Score every layer (without compressing) for variance analysis.
    observe: bool,
}

impl Compressor {
    pub fn new(schedule: CompressionSchedule, observe: bool) -> Self {
        let rng = Rng::new(schedule.policy_seed);
        Compressor { schedule, rng, observe }
    }

    pub fn schedule(&self) -> &CompressionSchedule {
        &self.schedule
    }

    pub fn wants_layer(&self, layer: usize) -> bool {
        self.observe || self.schedule.stage_at_layer(layer).is_some()
    }

    pub fn layer_hook(
        &mut self,
        layer: usize,
        batch: TokenBatch,
        byproducts: &AttentionByproducts,
    ) -> Result<(TokenBatch, StageOutcome)> {
        if let Some((stage_index, _)) = self.schedule.stage_at_layer(layer) {
            return compress_stage(batch, byproducts, &self.schedule, stage_index, &mut self.rng);
        }
        if self.observe {
            let scores = significance_scores(byproducts, self.schedule.scoring)?;
            let sop = crate::numeric::population_variance(scores.values())?;
            let outcome = StageOutcome { sop: Some(sop), ..StageOutcome::default() };
            return Ok((batch, outcome));
        }
        Ok((batch, StageOutcome::default()))
    }
}
