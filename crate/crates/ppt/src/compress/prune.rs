use crate::compress::{ScoreVector, StageDelta};
use crate::error::{Error, Result};
use crate::vit::TokenBatch;

/// Keeps CLS and the highest-scoring `N-1-r` image tokens, discarding the
/// rest. Ties keep the lower original index. Survivors keep their sizes and
/// relative order.
pub fn prune_topk(
    batch: &TokenBatch,
    scores: &ScoreVector,
    r: usize,
) -> Result<(TokenBatch, StageDelta)> {
    batch.validate()?;
    let m = batch.image_tokens();
    if scores.len() != m {
        return Err(Error::Numeric(format!(
            "score vector length {} does not match {} image tokens",
            scores.len(),
            m
        )));
    }
    if r > m.saturating_sub(1) {
        return Err(Error::Schedule(format!(
            "prune r={r} out of range, at most {} of {m} image tokens may be removed",
            m.saturating_sub(1)
        )));
    }
    if r == 0 {
        return Ok((batch.clone(), StageDelta::identity(m)));
    }

    let mut order: Vec<usize> = (0..m).collect();
    // descending score; equal scores rank the lower index first, so the
    // higher index is removed on a tie
    order.sort_by(|&a, &b| {
        scores.values()[b]
            .partial_cmp(&scores.values()[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut kept: Vec<usize> = order[..m - r].to_vec();
    let mut pruned: Vec<usize> = order[m - r..].to_vec();
    kept.sort_unstable();
    pruned.sort_unstable();

    let mut row_indices = vec![0usize];
    row_indices.extend(kept.iter().map(|&i| i + 1));
    let tokens = batch.tokens.select_rows(&row_indices);
    let sizes: Vec<f32> = row_indices.iter().map(|&i| batch.sizes[i]).collect();
    let delta = StageDelta { groups: kept.iter().map(|&i| vec![i]).collect(), pruned };
    Ok((TokenBatch { tokens, sizes }, delta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Matrix;

    fn batch(m: usize) -> TokenBatch {
        let mut tokens = Matrix::zeros(m + 1, 2);
        for i in 0..=m {
            tokens.set(i, 0, i as f32);
        }
        TokenBatch { tokens, sizes: vec![1.0; m + 1] }
    }

    #[test]
    fn r_zero_is_identity() {
        let b = batch(3);
        let s = ScoreVector::new(vec![0.2, 0.3, 0.5]).unwrap();
        let (out, delta) = prune_topk(&b, &s, 0).unwrap();
        assert_eq!(out.tokens, b.tokens);
        assert_eq!(delta, StageDelta::identity(3));
    }

    #[test]
    fn removes_lowest_score() {
        let b = batch(3);
        let s = ScoreVector::new(vec![0.1, 0.5, 0.4]).unwrap();
        let (out, delta) = prune_topk(&b, &s, 1).unwrap();
        assert_eq!(out.n(), 3);
        assert_eq!(delta.pruned, vec![0]);
        // survivors keep relative order: rows 2 and 3 of the input
        assert_eq!(out.tokens.get(1, 0), 2.0);
        assert_eq!(out.tokens.get(2, 0), 3.0);
    }

    #[test]
    fn tie_breaks_keep_lower_index() {
        let b = batch(2);
        let s = ScoreVector::new(vec![0.5, 0.5]).unwrap();
        let (_, delta) = prune_topk(&b, &s, 1).unwrap();
        assert_eq!(delta.pruned, vec![1]);
        assert_eq!(delta.groups, vec![vec![0]]);
    }

    #[test]
    fn r_out_of_range() {
        let b = batch(3);
        let s = ScoreVector::new(vec![0.2, 0.3, 0.5]).unwrap();
        assert!(prune_topk(&b, &s, 3).is_err());
    }
}
