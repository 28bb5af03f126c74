use crate::compress::bsm::merge_groups;
use crate::compress::{MergeReduction, StageDelta};
use crate::error::{Error, Result};
use crate::numeric::{cosine_similarity, Matrix};
use crate::vit::TokenBatch;

/// Density-peaks clustering merge over the image tokens, using cosine
/// distance `1 - sim`. The cutoff `d_c` is the 20th percentile of all
/// pairwise distances at this stage. `N-1-r` peaks are selected by largest
/// `gamma = rho * delta`; every other token joins its nearest
/// higher-density neighbor's cluster and clusters merge into one token.
///
/// Density ties and distance ties resolve toward the lower index; a token
/// with equal density and lower index counts as "higher density".
///
/// Returns the merged batch, the stage delta, and the cutoff used.
pub fn dpc_merge(
    batch: &TokenBatch,
    features: &Matrix,
    r: usize,
    reduction: MergeReduction,
) -> Result<(TokenBatch, StageDelta, f64)> {
    batch.validate()?;
    let m = batch.image_tokens();
    if features.rows() != batch.n() {
        return Err(Error::Numeric("feature matrix row count does not match batch".into()));
    }
    if r > m.saturating_sub(1) {
        return Err(Error::Schedule(format!(
            "dpc r={r} out of range, at most {} of {m} image tokens may be merged away",
            m.saturating_sub(1)
        )));
    }
    if r == 0 {
        return Ok((batch.clone(), StageDelta::identity(m), 0.0));
    }

    let dist = |i: usize, j: usize| -> Result<f64> {
        Ok(1.0 - cosine_similarity(features.row(i + 1), features.row(j + 1))?)
    };
    let mut all_dists = Vec::with_capacity(m * (m - 1) / 2);
    let mut dmat = vec![0.0f64; m * m];
    for i in 0..m {
        for j in (i + 1)..m {
            let d = dist(i, j)?;
            dmat[i * m + j] = d;
            dmat[j * m + i] = d;
            all_dists.push(d);
        }
    }
    all_dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let dc = all_dists[((all_dists.len() - 1) as f64 * 0.2).floor() as usize];

    // local density: neighbors within the cutoff
    let rho: Vec<usize> =
        (0..m).map(|i| (0..m).filter(|&j| j != i && dmat[i * m + j] <= dc).count()).collect();
    let higher = |j: usize, i: usize| rho[j] > rho[i] || (rho[j] == rho[i] && j < i);

    // delta: distance to the nearest higher-density token; the global peak
    // takes the maximum distance instead
    let mut delta = vec![0.0f64; m];
    let mut nearest_higher: Vec<Option<usize>> = vec![None; m];
    for i in 0..m {
        let mut best: Option<(f64, usize)> = None;
        for j in 0..m {
            if j != i && higher(j, i) {
                let d = dmat[i * m + j];
                if best.map_or(true, |(bd, bj)| d < bd || (d == bd && j < bj)) {
                    best = Some((d, j));
                }
            }
        }
        match best {
            Some((d, j)) => {
                delta[i] = d;
                nearest_higher[i] = Some(j);
            }
            None => {
                delta[i] = (0..m).map(|j| dmat[i * m + j]).fold(0.0, f64::max);
            }
        }
    }

    // peaks: largest gamma = rho * delta, ties to lower index
    let k = m - r;
    let mut by_gamma: Vec<usize> = (0..m).collect();
    by_gamma.sort_by(|&a, &b| {
        let ga = rho[a] as f64 * delta[a];
        let gb = rho[b] as f64 * delta[b];
        gb.partial_cmp(&ga).unwrap().then(a.cmp(&b))
    });
    let mut is_peak = vec![false; m];
    for &i in &by_gamma[..k] {
        is_peak[i] = true;
    }

    // assign in decreasing density order so every nearest higher-density
    // neighbor is already assigned
    let mut density_order: Vec<usize> = (0..m).collect();
    density_order.sort_by(|&a, &b| rho[b].cmp(&rho[a]).then(a.cmp(&b)));
    let mut cluster: Vec<Option<usize>> = vec![None; m]; // peak index per token
    for &i in &density_order {
        if is_peak[i] {
            cluster[i] = Some(i);
        } else {
            // walk to the nearest higher-density token, which is assigned
            // already unless it is the global peak chain start
            let mut j = i;
            loop {
                match nearest_higher[j] {
                    Some(n) => {
                        if let Some(c) = cluster[n] {
                            cluster[i] = Some(c);
                            break;
                        }
                        j = n;
                    }
                    None => {
                        cluster[i] = Some(j);
                        break;
                    }
                }
            }
        }
    }

    // fold every non-peak member into its cluster peak
    let mut absorbed_by: Vec<Option<usize>> = vec![None; m];
    for i in 0..m {
        let c = cluster[i].expect("all tokens assigned");
        if c != i || !is_peak[i] {
            // a non-peak that became its own chain start folds into the
            // lowest-index peak as a last resort; cannot happen when peaks
            // cover every density chain, but keep the map total
            let target = if is_peak[c] { c } else { by_gamma[0] };
            if target != i {
                absorbed_by[i] = Some(target);
            }
        }
    }
    // exactly r tokens must fold away; if peak selection left chains whose
    // members map to themselves, fold surplus self-mapped tokens into the
    // strongest peak (deterministic, lowest index first)
    let folded = absorbed_by.iter().filter(|a| a.is_some()).count();
    if folded < r {
        let top = by_gamma[0];
        let mut need = r - folded;
        for i in 0..m {
            if need == 0 {
                break;
            }
            if absorbed_by[i].is_none() && !is_peak[i] && i != top {
                absorbed_by[i] = Some(top);
                need -= 1;
            }
        }
    }

    let (merged, stage_delta) = merge_groups(batch, &absorbed_by, reduction)?;
    Ok((merged, stage_delta, dc))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch_from_rows(rows: &[&[f32]]) -> (TokenBatch, Matrix) {
        let n = rows.len();
        let d = rows[0].len();
        let mut m = Matrix::zeros(n, d);
        for (i, r) in rows.iter().enumerate() {
            m.row_mut(i).copy_from_slice(r);
        }
        (TokenBatch { tokens: m.clone(), sizes: vec![1.0; n] }, m)
    }

    #[test]
    fn r_zero_is_identity() {
        let (b, f) = batch_from_rows(&[&[1.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]]);
        let (out, delta, _) = dpc_merge(&b, &f, 0, MergeReduction::SizeWeighted).unwrap();
        assert_eq!(out.tokens, b.tokens);
        assert_eq!(delta, StageDelta::identity(2));
    }

    #[test]
    fn two_separated_duplicate_pairs_form_two_clusters() {
        let (b, f) = batch_from_rows(&[
            &[9.0, 9.0],
            &[1.0, 0.0],
            &[1.0, 0.0],
            &[0.0, 1.0],
            &[0.0, 1.0],
        ]);
        let (out, delta, _) = dpc_merge(&b, &f, 2, MergeReduction::SizeWeighted).unwrap();
        assert_eq!(out.n(), 3);
        let mut groups = delta.groups.clone();
        groups.sort();
        assert_eq!(groups, vec![vec![0, 1], vec![2, 3]]);
        assert_eq!(out.sizes, vec![1.0, 2.0, 2.0]);
        assert!(delta.is_partition(4));
    }

    #[test]
    fn all_identical_tokens_collapse_to_one() {
        let rows: Vec<&[f32]> = vec![&[9.0, 9.0], &[1.0, 2.0], &[1.0, 2.0], &[1.0, 2.0], &[1.0, 2.0], &[1.0, 2.0]];
        let (b, f) = batch_from_rows(&rows);
        let m = b.image_tokens();
        let (out, delta, _) = dpc_merge(&b, &f, m - 1, MergeReduction::SizeWeighted).unwrap();
        assert_eq!(out.n(), 2);
        assert_eq!(out.sizes[1], m as f32);
        assert_eq!(delta.groups, vec![(0..m).collect::<Vec<_>>()]);
        // merged feature equals the common feature
        assert!((out.tokens.get(1, 0) - 1.0).abs() < 1e-6);
        assert!((out.tokens.get(1, 1) - 2.0).abs() < 1e-6);
    }

    #[test]
    fn removes_exactly_r_tokens() {
        let (b, f) = batch_from_rows(&[
            &[9.0, 9.0, 9.0],
            &[1.0, 0.1, 0.0],
            &[1.0, 0.0, 0.1],
            &[0.0, 1.0, 0.2],
            &[0.1, 1.0, 0.0],
            &[0.5, 0.5, 1.0],
            &[0.4, 0.6, 1.0],
        ]);
        for r in 0..=5 {
            let (out, delta, _) = dpc_merge(&b, &f, r, MergeReduction::SizeWeighted).unwrap();
            assert_eq!(out.n(), 7 - r, "r={r}");
            assert!(delta.is_partition(6));
            assert_eq!(out.sizes.iter().sum::<f32>(), 7.0);
        }
        assert!(dpc_merge(&b, &f, 6, MergeReduction::SizeWeighted).is_err());
    }
}
