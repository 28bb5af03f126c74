//! Per-layer statistics, token provenance flattening, and the aggregate
//! trace report emitted as JSON.

use serde::{Deserialize, Serialize};

use crate::compress::{compose_deltas, MergeMap, Policy, StageDelta};
use crate::error::{Error, Result};
use crate::flops::FlopsReport;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerTrace {
    pub layer: usize,
    pub tokens_in: usize,
    pub tokens_out: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub policy: Option<Policy>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sop: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub requested_r: Option<usize>,
    pub removed: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<StageDelta>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceReport {
    pub layers: Vec<LayerTrace>,
    pub flops: FlopsReport,
    pub merge_map: MergeMap,
    pub logits: Vec<f32>,
}

/// Composes per-stage deltas (in stage order) into one partition of the
/// original patch set. A patch pruned at any stage lands in `pruned`;
/// groups merged across stages union.
pub fn flatten_provenance(num_patches: usize, deltas: &[StageDelta]) -> Result<MergeMap> {
    let mut acc = StageDelta::identity(num_patches);
    for d in deltas {
        acc = compose_deltas(&acc, d)?;
    }
    let map = MergeMap { groups: acc.groups, pruned: acc.pruned };
    if !map.is_partition(num_patches) {
        return Err(Error::Numeric("stage deltas do not compose to a partition".into()));
    }
    Ok(map)
}

/// Per-layer mean of the score variance across a corpus of trace reports.
/// Expects observe-mode traces, where every layer carries a statistic.
pub fn variance_series(reports: &[TraceReport]) -> Result<Vec<(usize, f64)>> {
    if reports.is_empty() {
        return Err(Error::Config("variance series needs at least one trace report".into()));
    }
    let depth = reports[0].layers.len();
    let mut series = Vec::with_capacity(depth);
    for l in 0..depth {
        let mut acc = 0.0f64;
        for rep in reports {
            let layer = rep
                .layers
                .get(l)
                .ok_or_else(|| Error::Config("trace reports have differing depths".into()))?;
            acc += layer.sop.ok_or_else(|| {
                Error::Config(format!(
                    "layer {} has no score statistic; run with observe mode enabled",
                    l + 1
                ))
            })?;
        }
        series.push((l + 1, acc / reports.len() as f64));
    }
    Ok(series)
}

pub fn variance_series_csv(series: &[(usize, f64)]) -> String {
    let mut out = String::from("layer,mean_variance\n");
    for (layer, v) in series {
        out.push_str(&format!("{layer},{v}\n"));
    }
    out
}
