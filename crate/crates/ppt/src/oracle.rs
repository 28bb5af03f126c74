//! Independent reference implementations used to cross-check the fast
//! paths: a brute-force bipartite merge, a rank-counting Top-K, the
//! size-bias marginalization identity, and the published-complexity
//! regression table. Shared by `selftest` and the test suites.

use crate::compress::{bsm_merge, prune_topk, CompressionSchedule, MergeReduction, ScoreVector, StageDelta};
use crate::error::Result;
use crate::flops::model_flops;
use crate::numeric::{softmax_size_biased, Matrix, Rng};
use crate::vit::{ModelConfig, TokenBatch};

fn cos64(a: &[f32], b: &[f32]) -> f64 {
    let mut ab = 0.0f64;
    let mut aa = 0.0f64;
    let mut bb = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        ab += x as f64 * y as f64;
        aa += x as f64 * x as f64;
        bb += y as f64 * y as f64;
    }
    let na = aa.sqrt();
    let nb = bb.sqrt();
    if na <= 1e-12 || nb <= 1e-12 {
        return 0.0;
    }
    (ab / (na * nb)).clamp(-1.0, 1.0)
}

/// Brute-force bipartite merge: recomputes every source's best destination
/// by direct scan, ranks the edges by repeated maximum selection, and
/// replays the merges naively. Tie rules match the fast path: the lower
/// destination wins equal similarity, the lower source survives edge
/// ranking ties.
pub fn bsm_reference(
    batch: &TokenBatch,
    keys: &Matrix,
    r: usize,
    reduction: MergeReduction,
) -> (Matrix, Vec<f32>, StageDelta) {
    let m = batch.image_tokens();
    let mut candidate: Vec<(f64, usize, usize)> = Vec::new(); // (sim, src, dst)
    for s in (1..m).step_by(2) {
        let mut best: Option<(f64, usize)> = None;
        for d in (0..m).step_by(2) {
            let sim = cos64(keys.row(s + 1), keys.row(d + 1));
            if best.map_or(true, |(bs, _)| sim > bs) {
                best = Some((sim, d));
            }
        }
        if let Some((sim, d)) = best {
            candidate.push((sim, s, d));
        }
    }
    // pick the r strongest edges one at a time
    let mut chosen: Vec<(usize, usize)> = Vec::new();
    let mut used = vec![false; candidate.len()];
    for _ in 0..r.min(candidate.len()) {
        let mut pick: Option<usize> = None;
        for (i, &(sim, src, _)) in candidate.iter().enumerate() {
            if used[i] {
                continue;
            }
            let better = match pick {
                None => true,
                Some(p) => {
                    let (psim, psrc, _) = candidate[p];
                    sim > psim || (sim == psim && src < psrc)
                }
            };
            if better {
                pick = Some(i);
            }
        }
        let p = pick.expect("enough candidates");
        used[p] = true;
        chosen.push((candidate[p].1, candidate[p].2));
    }

    let mut target: Vec<Option<usize>> = vec![None; m];
    for &(s, d) in &chosen {
        target[s] = Some(d);
    }
    let survivors: Vec<usize> = (0..m).filter(|&i| target[i].is_none()).collect();
    let dim = batch.tokens.cols();
    let mut tokens = Matrix::zeros(survivors.len() + 1, dim);
    let mut sizes = vec![0.0f32; survivors.len() + 1];
    tokens.row_mut(0).copy_from_slice(batch.tokens.row(0));
    sizes[0] = batch.sizes[0];
    let mut groups = Vec::new();
    for (out, &i) in survivors.iter().enumerate() {
        let mut group = vec![i];
        group.extend((0..m).filter(|&s| target[s] == Some(i)));
        group.sort_unstable();
        let total: f64 = group.iter().map(|&g| batch.sizes[g + 1] as f64).sum();
        for c in 0..dim {
            let mut acc = 0.0f64;
            for &g in &group {
                let w = match reduction {
                    MergeReduction::SizeWeighted => batch.sizes[g + 1] as f64 / total,
                    MergeReduction::Plain => 1.0 / group.len() as f64,
                };
                acc += batch.tokens.get(g + 1, c) as f64 * w;
            }
            tokens.set(out + 1, c, acc as f32);
        }
        sizes[out + 1] = total as f32;
        groups.push(group);
    }
    (tokens, sizes, StageDelta { groups, pruned: Vec::new() })
}

/// Rank-counting Top-K: token `i` survives iff fewer than `keep` tokens
/// outrank it, where "outranks" means a strictly higher score or an equal
/// score at a lower index.
pub fn topk_reference(scores: &[f32], r: usize) -> StageDelta {
    let m = scores.len();
    let keep = m - r;
    let outranks = |j: usize, i: usize| scores[j] > scores[i] || (scores[j] == scores[i] && j < i);
    let mut groups = Vec::new();
    let mut pruned = Vec::new();
    for i in 0..m {
        let rank = (0..m).filter(|&j| j != i && outranks(j, i)).count();
        if rank < keep {
            groups.push(vec![i]);
        } else {
            pruned.push(i);
        }
    }
    StageDelta { groups, pruned }
}

/// Size-biased attention evaluated directly: `out_i = sum_j a_ij v_j` with
/// `a_i = softmax(q_i . k_j / sqrt(d) + ln s_j)`, accumulated in f64.
pub fn attention_reference(q: &Matrix, k: &Matrix, v: &Matrix, sizes: &[f32]) -> Result<Matrix> {
    let n = k.rows();
    let dh = q.cols();
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = Matrix::zeros(q.rows(), v.cols());
    for i in 0..q.rows() {
        let mut logits = Vec::with_capacity(n);
        for j in 0..n {
            let mut acc = 0.0f64;
            for t in 0..dh {
                acc += q.get(i, t) as f64 * k.get(j, t) as f64;
            }
            logits.push((acc * scale) as f32);
        }
        let attn = softmax_size_biased(&logits, sizes)?;
        for c in 0..v.cols() {
            let mut acc = 0.0f64;
            for j in 0..n {
                acc += attn[j] as f64 * v.get(j, c) as f64;
            }
            out.set(i, c, acc as f32);
        }
    }
    Ok(out)
}

fn random_matrix(rng: &mut Rng, rows: usize, cols: usize, std: f32) -> Matrix {
    let mut m = Matrix::zeros(rows, cols);
    for v in m.data_mut() {
        *v = rng.normal(0.0, std);
    }
    m
}

/// Random merge instance within the oracle-suite bounds: N <= 10 total
/// tokens, feature dim <= 8, r <= floor((N-1)/2) over the image tokens.
pub fn random_bsm_instance(rng: &mut Rng) -> (TokenBatch, Matrix, usize, MergeReduction) {
    let m = 2 + rng.gen_range(8); // 2..=9 image tokens
    let d = 1 + rng.gen_range(8);
    let mut sizes = vec![1.0f32];
    for _ in 0..m {
        sizes.push(1.0 + rng.gen_range(4) as f32);
    }
    let batch = TokenBatch { tokens: random_matrix(rng, m + 1, d, 1.0), sizes };
    let keys = random_matrix(rng, m + 1, d, 1.0);
    let r = rng.gen_range(m / 2 + 1);
    let reduction = if rng.coin() { MergeReduction::SizeWeighted } else { MergeReduction::Plain };
    (batch, keys, r, reduction)
}

/// One oracle comparison; returns the max absolute feature deviation, or
/// an error message if the structure disagrees.
pub fn check_bsm_once(rng: &mut Rng) -> std::result::Result<f64, String> {
    let (batch, keys, r, reduction) = random_bsm_instance(rng);
    let (fast, delta) = bsm_merge(&batch, &keys, r, reduction).map_err(|e| e.to_string())?;
    let (tokens, sizes, ref_delta) = bsm_reference(&batch, &keys, r, reduction);
    if delta != ref_delta {
        return Err(format!("merge map mismatch at r={r}: {delta:?} vs {ref_delta:?}"));
    }
    if fast.sizes != sizes {
        return Err(format!("size mismatch: {:?} vs {:?}", fast.sizes, sizes));
    }
    let mut max_dev = 0.0f64;
    for (a, b) in fast.tokens.data().iter().zip(tokens.data()) {
        max_dev = max_dev.max((*a as f64 - *b as f64).abs());
    }
    Ok(max_dev)
}

pub fn check_topk_once(rng: &mut Rng) -> std::result::Result<(), String> {
    let m = 2 + rng.gen_range(9);
    let mut raw: Vec<f32> = (0..m).map(|_| rng.next_f32()).collect();
    if rng.gen_range(3) == 0 {
        // force ties so the tie rule is actually exercised
        let v = raw[0];
        for s in raw.iter_mut().step_by(2) {
            *s = v;
        }
    }
    let total: f32 = raw.iter().sum();
    let scores: Vec<f32> = raw.iter().map(|s| s / total).collect();
    let sv = ScoreVector::new(scores.clone()).map_err(|e| e.to_string())?;
    let mut tokens = Matrix::zeros(m + 1, 3);
    for v in tokens.data_mut() {
        *v = rng.normal(0.0, 1.0);
    }
    let batch = TokenBatch { tokens, sizes: vec![1.0; m + 1] };
    let r = rng.gen_range(m);
    let (_, delta) = prune_topk(&batch, &sv, r).map_err(|e| e.to_string())?;
    let reference = topk_reference(&scores, r);
    if delta != reference {
        return Err(format!("top-k mismatch at m={m} r={r}: {delta:?} vs {reference:?}"));
    }
    Ok(())
}

/// Expands one sized instance into its duplicate form and measures how far
/// the size-biased softmax is from true marginalization. Two gaps are
/// combined: the production softmax's compact attention row versus the
/// duplicate row masses summed per original token, and the relative output
/// difference with the value reduction done in f64 (so the measurement
/// reflects the identity, not f32 cancellation in the reduction).
pub fn marginalization_gap(rng: &mut Rng) -> Result<f64> {
    let n = 2 + rng.gen_range(6);
    let dh = 1 + rng.gen_range(6);
    let dv = 1 + rng.gen_range(6);
    let q = random_matrix(rng, n, dh, 1.0);
    let k = random_matrix(rng, n, dh, 1.0);
    let v = random_matrix(rng, n, dv, 1.0);
    let sizes: Vec<f32> = (0..n).map(|_| 1.0 + rng.gen_range(4) as f32).collect();

    // expanded: each size-s token becomes s duplicate size-1 rows
    let mut rows = Vec::new();
    for (j, &s) in sizes.iter().enumerate() {
        for _ in 0..s as usize {
            rows.push(j);
        }
    }
    let ke = k.select_rows(&rows);
    let ve = v.select_rows(&rows);
    let unit = vec![1.0f32; rows.len()];

    let scale = 1.0 / (dh as f64).sqrt();
    let mut worst = 0.0f64;
    for i in 0..n {
        let logit = |kk: &Matrix, j: usize| -> f32 {
            let mut acc = 0.0f64;
            for t in 0..dh {
                acc += q.get(i, t) as f64 * kk.get(j, t) as f64;
            }
            (acc * scale) as f32
        };
        let logits: Vec<f32> = (0..n).map(|j| logit(&k, j)).collect();
        let logits_e: Vec<f32> = (0..rows.len()).map(|j| logit(&ke, j)).collect();
        let compact = softmax_size_biased(&logits, &sizes)?;
        let expanded = softmax_size_biased(&logits_e, &unit)?;

        // attention mass per original token must agree
        let mut mass = vec![0.0f64; n];
        for (e, &j) in rows.iter().enumerate() {
            mass[j] += expanded[e] as f64;
        }
        for j in 0..n {
            worst = worst.max((compact[j] as f64 - mass[j]).abs());
        }

        // output comparison with the softmax itself carried in f64, so the
        // gap measures the identity rather than f32 probability rounding
        let lmax = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
        let weights: Vec<f64> =
            (0..n).map(|j| sizes[j] as f64 * ((logits[j] as f64 - lmax).exp())).collect();
        let z: f64 = weights.iter().sum();
        let weights_e: Vec<f64> =
            (0..rows.len()).map(|e| (logits_e[e] as f64 - lmax).exp()).collect();
        let ze: f64 = weights_e.iter().sum();
        let mut diff = 0.0f64;
        let mut norm = 0.0f64;
        for c in 0..dv {
            let mut a = 0.0f64;
            for j in 0..n {
                a += weights[j] / z * v.get(j, c) as f64;
            }
            let mut b = 0.0f64;
            for (e, &j) in rows.iter().enumerate() {
                b += weights_e[e] / ze * ve.get(e, c) as f64;
                debug_assert_eq!(ve.get(e, c), v.get(j, c));
            }
            diff += (a - b) * (a - b);
            norm += b * b;
        }
        worst = worst.max(diff.sqrt() / norm.sqrt().max(1e-9));
    }
    Ok(worst)
}

/// Published complexity rows the analytic model must stay within 2% of:
/// (config, per-stage removal, expected GFLOPs). Baselines use r = 0.
pub fn published_flops_table() -> Vec<(ModelConfig, usize, f64)> {
    let mut rows = vec![(ModelConfig::deit_s(), 0, 4.6), (ModelConfig::deit_b(), 0, 17.6)];
    for &(r, g) in
        &[(10, 1.16), (20, 1.07), (30, 0.97), (40, 0.89), (45, 0.84), (50, 0.80), (60, 0.74)]
    {
        rows.push((ModelConfig::deit_ti(), r, g));
    }
    for &(r, g) in &[(10, 4.26), (20, 3.92), (30, 3.59), (40, 3.26), (50, 2.94), (60, 2.72)] {
        rows.push((ModelConfig::deit_s(), r, g));
    }
    for &(r, g) in &[(40, 12.48), (47, 11.60), (50, 11.27)] {
        rows.push((ModelConfig::deit_b(), r, g));
    }
    rows
}

/// Runs every oracle suite and returns (name, passed, detail) rows.
pub fn run_selftest() -> Vec<(String, bool, String)> {
    let mut results = Vec::new();

    let mut rng = Rng::new(0x5e1f7e57);
    let mut worst = 0.0f64;
    let mut failure = None;
    for i in 0..500 {
        match check_bsm_once(&mut rng) {
            Ok(dev) => worst = worst.max(dev),
            Err(e) => {
                failure = Some(format!("instance {i}: {e}"));
                break;
            }
        }
    }
    let ok = failure.is_none() && worst < 1e-6;
    results.push((
        "bsm_oracle_500".to_string(),
        ok,
        failure.unwrap_or(format!("max feature deviation {worst:.2e}")),
    ));

    let mut rng = Rng::new(0x70f0_cafe);
    let mut failure = None;
    for i in 0..500 {
        if let Err(e) = check_topk_once(&mut rng) {
            failure = Some(format!("instance {i}: {e}"));
            break;
        }
    }
    results.push((
        "topk_oracle_500".to_string(),
        failure.is_none(),
        failure.unwrap_or("500 instances match".to_string()),
    ));

    let mut rng = Rng::new(0x3a9_1dea);
    let mut worst = 0.0f64;
    let mut failure = None;
    for _ in 0..200 {
        match marginalization_gap(&mut rng) {
            Ok(g) => worst = worst.max(g),
            Err(e) => {
                failure = Some(e.to_string());
                break;
            }
        }
    }
    let ok = failure.is_none() && worst < 1e-5;
    results.push((
        "marginalization_200".to_string(),
        ok,
        failure.unwrap_or(format!("max relative gap {worst:.2e}")),
    ));

    let mut detail = String::new();
    let mut ok = true;
    for (cfg, r, gflops) in published_flops_table() {
        let schedule = if r == 0 { CompressionSchedule::empty() } else { CompressionSchedule::deit_stages(r) };
        match model_flops(&cfg, &schedule) {
            Ok(rep) => {
                let err = (rep.total as f64 - gflops * 1e9).abs() / (gflops * 1e9);
                if err > 0.02 {
                    ok = false;
                    detail = format!("d={} r={r}: {} vs {gflops}G ({:.2}% off)", cfg.dim, rep.total, err * 100.0);
                    break;
                }
            }
            Err(e) => {
                ok = false;
                detail = e.to_string();
                break;
            }
        }
    }
    if ok {
        detail = "all published rows within 2%".to_string();
    }
    results.push(("flops_regression".to_string(), ok, detail));

    results
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selftest_passes() {
        let results = run_selftest();
        assert_eq!(results.len(), 4);
        for (name, ok, detail) in &results {
            assert!(ok, "{name}: {detail}");
        }
    }

    #[test]
    fn topk_reference_tie_rule() {
        let delta = topk_reference(&[0.25, 0.25, 0.25, 0.25], 2);
        assert_eq!(delta.pruned, vec![2, 3]);
    }

    #[test]
    fn marginalization_trivial_case() {
        // all sizes 1: expansion is a no-op
        let mut rng = Rng::new(1);
        let q = random_matrix(&mut rng, 3, 2, 1.0);
        let k = random_matrix(&mut rng, 3, 2, 1.0);
        let v = random_matrix(&mut rng, 3, 2, 1.0);
        let a = attention_reference(&q, &k, &v, &[1.0, 1.0, 1.0]).unwrap();
        let b = attention_reference(&q, &k, &v, &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(a, b);
    }
}
