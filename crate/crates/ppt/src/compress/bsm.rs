use crate::compress::{MergeReduction, StageDelta};
use crate::error::{Error, Result};
use crate::numeric::{cosine_similarity, Matrix};
use crate::vit::TokenBatch;

/// Bipartite soft matching merge. Image tokens are split by alternating
/// original position: even positions form the destination set, odd positions
/// the source set; CLS is excluded from matching entirely. Each source draws
/// one edge to its most similar destination (cosine similarity of the given
/// key features), the `r` highest-similarity edges are kept, and connected
/// tokens merge into the destination slot. Sizes add.
///
/// All ties break toward the lower index so results are platform-stable.
pub fn bsm_merge(
    batch: &TokenBatch,
    keys: &Matrix,
    r: usize,
    reduction: MergeReduction,
) -> Result<(TokenBatch, StageDelta)> {
    batch.validate()?;
    let m = batch.image_tokens();
    if keys.rows() != batch.n() {
        return Err(Error::Numeric("key matrix row count does not match batch".into()));
    }
    let cap = m / 2; // size of the source set
    if r > cap {
        return Err(Error::Schedule(format!("merge r={r} out of range, source set has {cap} tokens")));
    }
    if r == 0 {
        return Ok((batch.clone(), StageDelta::identity(m)));
    }

    let sources: Vec<usize> = (0..m).filter(|i| i % 2 == 1).collect();
    let destinations: Vec<usize> = (0..m).filter(|i| i % 2 == 0).collect();

    // one edge per source: its most similar destination, ties to lower index
    let mut edges: Vec<(f64, usize, usize)> = Vec::with_capacity(sources.len());
    for &s in &sources {
        let mut best_sim = f64::NEG_INFINITY;
        let mut best_dst = 0usize;
        for &d in &destinations {
            let sim = cosine_similarity(keys.row(s + 1), keys.row(d + 1))?;
            if sim > best_sim {
                best_sim = sim;
                best_dst = d;
            }
        }
        edges.push((best_sim, s, best_dst));
    }
    // keep the r most similar edges; equal similarity keeps the lower source
    edges.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    edges.truncate(r);

    let mut absorbed_by: Vec<Option<usize>> = vec![None; m];
    for &(_, s, d) in &edges {
        absorbed_by[s] = Some(d);
    }

    merge_groups(batch, &absorbed_by, reduction)
}

/// Shared merge replay: every token with `absorbed_by[i] = Some(d)` is
/// folded into destination `d`; everything else survives in original order.
pub(crate) fn merge_groups(
    batch: &TokenBatch,
    absorbed_by: &[Option<usize>],
    reduction: MergeReduction,
) -> Result<(TokenBatch, StageDelta)> {
    let m = batch.image_tokens();
    let mut members: Vec<Vec<usize>> = (0..m).map(|i| vec![i]).collect();
    for (s, dst) in absorbed_by.iter().enumerate() {
        if let Some(d) = dst {
            members[*d].push(s);
        }
    }
    let survivors: Vec<usize> = (0..m).filter(|&i| absorbed_by[i].is_none()).collect();

    let d = batch.tokens.cols();
    let mut tokens = Matrix::zeros(survivors.len() + 1, d);
    let mut sizes = vec![0.0f32; survivors.len() + 1];
    tokens.row_mut(0).copy_from_slice(batch.tokens.row(0));
    sizes[0] = batch.sizes[0];

    let mut groups = Vec::with_capacity(survivors.len());
    for (out_idx, &i) in survivors.iter().enumerate() {
        let mut group = members[i].clone();
        group.sort_unstable();
        let total_size: f64 = group.iter().map(|&g| batch.sizes[g + 1] as f64).sum();
        let mut acc = vec![0.0f64; d];
        for &g in &group {
            let src = batch.tokens.row(g + 1);
            let w = match reduction {
                MergeReduction::SizeWeighted => batch.sizes[g + 1] as f64 / total_size,
                MergeReduction::Plain => 1.0 / group.len() as f64,
            };
            for c in 0..d {
                acc[c] += src[c] as f64 * w;
            }
        }
        let row = tokens.row_mut(out_idx + 1);
        for c in 0..d {
            row[c] = acc[c] as f32;
        }
        sizes[out_idx + 1] = total_size as f32;
        groups.push(group);
    }
    Ok((TokenBatch { tokens, sizes }, StageDelta { groups, pruned: Vec::new() }))
}
