//! Token compression: significance scoring, adaptive policy selection,
//! Top-K pruning, bipartite soft matching, density-peaks pooling, and the
//! ablation policies.

mod bsm;
mod dpc;
mod policy;
mod prune;
mod score;
mod stage;

pub use bsm::bsm_merge;
pub use dpc::dpc_merge;
pub use policy::select_policy;
pub use prune::prune_topk;
pub use score::significance_scores;
pub use stage::{compress_stage, Compressor, StageOutcome};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vit::ModelConfig;

/// Normalized per-image-token significance scores (CLS excluded).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector(Vec<f32>);

impl ScoreVector {
    pub fn new(scores: Vec<f32>) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::Numeric("empty score vector".into()));
        }
        if scores.iter().any(|&s| !s.is_finite() || s < 0.0) {
            return Err(Error::Numeric("scores must be finite and nonnegative".into()));
        }
        let sum: f64 = scores.iter().map(|&s| s as f64).sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Numeric(format!("scores sum to {sum}, expected 1")));
        }
        Ok(ScoreVector(scores))
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    Prune,
    Pool,
}

/// The policy chosen for one stage plus the statistic that produced it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyDecision {
    pub policy: Policy,
    pub sop: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyMode {
    #[default]
    Adaptive,
    PruneOnly,
    PoolOnly,
    RuleBased,
    Random,
    Inverted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    ScoreVariance,
    MeanSimilarity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scoring {
    #[default]
    AttentionTimesVnorm,
    AttentionOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolingAlgo {
    #[default]
    Bsm,
    Dpc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeReduction {
    #[default]
    SizeWeighted,
    Plain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage {
    /// 1-based block index the compression runs in.
    pub layer: usize,
    /// Tokens removed at this stage.
    pub r: usize,
}

fn default_tau() -> f64 {
    7e-5
}

fn default_tau_sim() -> f64 {
    0.5
}

/// Which layers compress, how many tokens to remove per stage, and every
/// knob of the decision mechanism.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompressionSchedule {
    #[serde(default)]
    pub stages: Vec<Stage>,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default)]
    pub mode: PolicyMode,
    #[serde(default)]
    pub metric: Metric,
    #[serde(default)]
    pub scoring: Scoring,
    #[serde(default)]
    pub pooling: PoolingAlgo,
    #[serde(default)]
    pub merge_reduction: MergeReduction,
    #[serde(default = "default_tau_sim")]
    pub tau_sim: f64,
    /// Seed for the random policy mode; owned per forward pass.
    #[serde(default)]
    pub policy_seed: u64,
}

impl Default for CompressionSchedule {
    fn default() -> Self {
        CompressionSchedule {
            stages: Vec::new(),
            tau: default_tau(),
            mode: PolicyMode::default(),
            metric: Metric::default(),
            scoring: Scoring::default(),
            pooling: PoolingAlgo::default(),
            merge_reduction: MergeReduction::default(),
            tau_sim: default_tau_sim(),
            policy_seed: 0,
        }
    }
}

impl CompressionSchedule {
    /// Empty schedule (baseline ViT) with default knobs.
    pub fn empty() -> Self {
        Self::default()
    }

    /// The paper's DeiT schedule: remove `r` tokens at layers 4, 7 and 10.
    pub fn deit_stages(r: usize) -> Self {
        CompressionSchedule {
            stages: vec![Stage { layer: 4, r }, Stage { layer: 7, r }, Stage { layer: 10, r }],
            ..Self::default()
        }
    }

    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        let mut last = 0usize;
        let mut total_r = 0usize;
        for s in &self.stages {
            if s.layer < 1 || s.layer > cfg.depth {
                return Err(Error::Schedule(format!(
                    "stage layer {} out of range 1..={}",
                    s.layer, cfg.depth
                )));
            }
            if s.layer <= last {
                return Err(Error::Schedule("stage layers must be strictly increasing".into()));
            }
            last = s.layer;
            total_r += s.r;
        }
        if !self.stages.is_empty() && total_r >= cfg.initial_tokens() - 1 {
            return Err(Error::Schedule(format!(
                "schedule removes {total_r} tokens, budget is {} (CLS plus one image token must survive)",
                cfg.initial_tokens() - 2
            )));
        }
        if !(self.tau.is_finite() || self.tau == f64::INFINITY) || self.tau < 0.0 {
            return Err(Error::Schedule("tau must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn stage_at_layer(&self, layer: usize) -> Option<(usize, Stage)> {
        self.stages.iter().enumerate().find(|(_, s)| s.layer == layer).map(|(i, s)| (i, *s))
    }
}

/// One compression stage's effect on the tokens that entered it, expressed
/// over incoming image-token indices (0-based, CLS excluded). `groups[k]`
/// lists the incoming tokens absorbed into surviving token `k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageDelta {
    pub groups: Vec<Vec<usize>>,
    pub pruned: Vec<usize>,
}

impl StageDelta {
    pub fn identity(n_image_tokens: usize) -> Self {
        StageDelta { groups: (0..n_image_tokens).map(|i| vec![i]).collect(), pruned: Vec::new() }
    }

    /// True if groups plus pruned partition 0..n exactly.
    pub fn is_partition(&self, n: usize) -> bool {
        let mut seen = vec![false; n];
        let mut count = 0usize;
        for idx in self.groups.iter().flatten().chain(self.pruned.iter()) {
            if *idx >= n || seen[*idx] {
                return false;
            }
            seen[*idx] = true;
            count += 1;
        }
        count == n && self.groups.iter().all(|g| !g.is_empty())
    }
}

/// Applies `next` (expressed over `prev`'s surviving tokens) on top of
/// `prev`, producing a delta over `prev`'s incoming tokens.
pub fn compose_deltas(prev: &StageDelta, next: &StageDelta) -> Result<StageDelta> {
    let bad = || Error::Numeric("stage delta composition index out of range".into());
    let mut groups = Vec::with_capacity(next.groups.len());
    for g in &next.groups {
        let mut merged = Vec::new();
        for &j in g {
            merged.extend(prev.groups.get(j).ok_or_else(bad)?.iter().copied());
        }
        merged.sort_unstable();
        groups.push(merged);
    }
    let mut pruned = prev.pruned.clone();
    for &j in &next.pruned {
        pruned.extend(prev.groups.get(j).ok_or_else(bad)?.iter().copied());
    }
    pruned.sort_unstable();
    Ok(StageDelta { groups, pruned })
}

/// Provenance of every original patch after all stages: surviving groups
/// plus the pruned set. Always a partition of the patch index set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeMap {
    pub groups: Vec<Vec<usize>>,
    pub pruned: Vec<usize>,
}

impl MergeMap {
    pub fn is_partition(&self, num_patches: usize) -> bool {
        StageDelta { groups: self.groups.clone(), pruned: self.pruned.clone() }
            .is_partition(num_patches)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn score_vector_invariants() {
        assert!(ScoreVector::new(vec![0.25, 0.75]).is_ok());
        assert!(ScoreVector::new(vec![0.5, 0.4]).is_err());
        assert!(ScoreVector::new(vec![-0.1, 1.1]).is_err());
        assert!(ScoreVector::new(vec![]).is_err());
    }

    #[test]
    fn schedule_validation() {
        let cfg = ModelConfig::deit_s();
        CompressionSchedule::deit_stages(50).validate(&cfg).unwrap();
        let mut s = CompressionSchedule::deit_stages(50);
        s.stages[1].layer = 13;
        assert!(s.validate(&cfg).is_err());
        let mut s = CompressionSchedule::deit_stages(50);
        s.stages[1].layer = 4;
        assert!(s.validate(&cfg).is_err());
        let s = CompressionSchedule::deit_stages(70);
        assert!(s.validate(&cfg).is_err(), "3*70 = 210 > 195 budget");
    }

    #[test]
    fn delta_composition_rules() {
        // stage 1 merges {1,2} into one token, keeps 0 and 3
        let d1 = StageDelta { groups: vec![vec![0], vec![1, 2], vec![3]], pruned: vec![] };
        // stage 2 prunes the merged token
        let d2 = StageDelta { groups: vec![vec![0], vec![2]], pruned: vec![1] };
        let c = compose_deltas(&d1, &d2).unwrap();
        assert_eq!(c.pruned, vec![1, 2]);
        assert!(c.is_partition(4));

        // stage 2 instead merges the {1,2} token with token 3
        let d2 = StageDelta { groups: vec![vec![0], vec![1, 2]], pruned: vec![] };
        let c = compose_deltas(&d1, &d2).unwrap();
        assert_eq!(c.groups[1], vec![1, 2, 3]);
    }
}
