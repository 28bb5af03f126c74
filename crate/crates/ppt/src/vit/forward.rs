use crate::compress::{Compressor, StageOutcome};
use crate::error::{Error, Result};
use crate::flops;
use crate::numeric::{add_bias, gelu_inplace, layernorm, matmul, norm, softmax_size_biased, Matrix};
use crate::trace::{flatten_provenance, LayerTrace, TraceReport};
use crate::vit::{LayerWeights, ModelConfig, ModelWeights};

/// Token features for one image plus the per-token size vector. Row 0 is
/// always the CLS token, which keeps size 1 and is never pruned or merged.
#[derive(Debug, Clone)]
pub struct TokenBatch {
    pub tokens: Matrix,
    pub sizes: Vec<f32>,
}

impl TokenBatch {
    pub fn n(&self) -> usize {
        self.tokens.rows()
    }

    /// Number of image tokens (everything except CLS).
    pub fn image_tokens(&self) -> usize {
        self.n() - 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.sizes.len() != self.n() || self.n() == 0 {
            return Err(Error::Numeric("token batch size vector length mismatch".into()));
        }
        if self.sizes[0] != 1.0 {
            return Err(Error::Numeric("CLS token must have size 1".into()));
        }
        if self.sizes.iter().any(|&s| !(s >= 1.0)) {
            return Err(Error::Numeric("token sizes must all be >= 1".into()));
        }
        Ok(())
    }
}

/// Intermediate attention quantities consumed by the compression module.
/// Everything is kept per head; head aggregation is the scorer's choice.
#[derive(Debug, Clone)]
pub struct AttentionByproducts {
    /// Per head: row 1 of the attention matrix (CLS query), length N.
    pub cls_attention: Vec<Vec<f32>>,
    /// Per head: L2 norm of each value row, length N.
    pub value_norms: Vec<Vec<f32>>,
    /// Per head: key matrix, N x head_dim.
    pub keys: Vec<Matrix>,
}

impl AttentionByproducts {
    /// Mean of the per-head key vectors, N x head_dim. This is the feature
    /// the bipartite merge measures similarity on.
    pub fn head_mean_keys(&self) -> Matrix {
        let heads = self.keys.len();
        let n = self.keys[0].rows();
        let hd = self.keys[0].cols();
        let mut out = Matrix::zeros(n, hd);
        for r in 0..n {
            for c in 0..hd {
                let mut acc = 0.0f64;
                for k in &self.keys {
                    acc += k.get(r, c) as f64;
                }
                out.set(r, c, (acc / heads as f64) as f32);
            }
        }
        out
    }
}

/// Cuts the image into non-overlapping patches, projects them, prepends the
/// CLS embedding and adds positional embeddings. `image` is normalized HWC
/// pixel data. All sizes start at 1.
pub fn patch_embed(image: &[f32], weights: &ModelWeights, cfg: &ModelConfig) -> Result<TokenBatch> {
    cfg.validate()?;
    let (h, w, c) = (cfg.image_size, cfg.image_size, cfg.channels);
    if image.len() != h * w * c {
        return Err(Error::Image(format!(
            "image has {} values, config requires {}x{}x{}",
            image.len(),
            h,
            w,
            c
        )));
    }
    let p = cfg.patch_size;
    let grid = cfg.grid();
    let mut patches = Matrix::zeros(cfg.num_patches(), cfg.patch_dim());
    for py in 0..grid {
        for px in 0..grid {
            let row = patches.row_mut(py * grid + px);
            let mut idx = 0;
            for dy in 0..p {
                for dx in 0..p {
                    let pix = ((py * p + dy) * w + (px * p + dx)) * c;
                    row[idx..idx + c].copy_from_slice(&image[pix..pix + c]);
                    idx += c;
                }
            }
        }
    }
    let mut embedded = matmul(&patches, &weights.patch_weight)?;
    add_bias(&mut embedded, &weights.patch_bias)?;

    let n0 = cfg.initial_tokens();
    let mut tokens = Matrix::zeros(n0, cfg.dim);
    tokens.row_mut(0).copy_from_slice(&weights.cls);
    for i in 0..cfg.num_patches() {
        tokens.row_mut(i + 1).copy_from_slice(embedded.row(i));
    }
    for r in 0..n0 {
        let pos = weights.pos.row(r);
        for (v, &pv) in tokens.row_mut(r).iter_mut().zip(pos) {
            *v += pv;
        }
    }
    Ok(TokenBatch { tokens, sizes: vec![1.0; n0] })
}

/// Multi-head self-attention over already layer-normalized features, with
/// every pre-softmax logit row biased by `+ log(size)` per key column.
/// Returns the attended features (residual is added by the caller) and the
/// byproducts the compression stage consumes.
pub fn attention_forward(
    x_ln: &Matrix,
    sizes: &[f32],
    lw: &LayerWeights,
    cfg: &ModelConfig,
) -> Result<(Matrix, AttentionByproducts)> {
    let n = x_ln.rows();
    let d = cfg.dim;
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();

    let mut qkv = matmul(x_ln, &lw.wqkv)?;
    add_bias(&mut qkv, &lw.bqkv)?;

    let mut concat = Matrix::zeros(n, d);
    let mut cls_attention = Vec::with_capacity(cfg.heads);
    let mut value_norms = Vec::with_capacity(cfg.heads);
    let mut keys = Vec::with_capacity(cfg.heads);

    for h in 0..cfg.heads {
        let qoff = h * dh;
        let koff = d + h * dh;
        let voff = 2 * d + h * dh;
        let mut khead = Matrix::zeros(n, dh);
        for i in 0..n {
            khead.row_mut(i).copy_from_slice(&qkv.row(i)[koff..koff + dh]);
        }
        let mut vnorms = Vec::with_capacity(n);
        for i in 0..n {
            vnorms.push(norm(&qkv.row(i)[voff..voff + dh]) as f32);
        }

        let mut cls_row = Vec::new();
        for i in 0..n {
            let q = &qkv.row(i)[qoff..qoff + dh];
            let mut logits = Vec::with_capacity(n);
            for j in 0..n {
                let k = khead.row(j);
                let mut acc = 0.0f64;
                for t in 0..dh {
                    acc += q[t] as f64 * k[t] as f64;
                }
                logits.push((acc * scale) as f32);
            }
            let attn = softmax_size_biased(&logits, sizes)?;
            if i == 0 {
                cls_row = attn.clone();
            }
            let orow = &mut concat.row_mut(i)[qoff..qoff + dh];
            for t in 0..dh {
                let mut acc = 0.0f64;
                for j in 0..n {
                    acc += attn[j] as f64 * qkv.row(j)[voff + t] as f64;
                }
                orow[t] = acc as f32;
            }
        }
        cls_attention.push(cls_row);
        value_norms.push(vnorms);
        keys.push(khead);
    }

    let mut out = matmul(&concat, &lw.wproj)?;
    add_bias(&mut out, &lw.bproj)?;
    if !out.is_finite() {
        return Err(Error::Numeric("non-finite activation in attention (corrupt weights?)".into()));
    }
    Ok((out, AttentionByproducts { cls_attention, value_norms, keys }))
}

/// One transformer block: attention with residual, an optional compression
/// hook between the attention residual and the FFN, then the FFN residual.
pub fn block_forward(
    batch: TokenBatch,
    lw: &LayerWeights,
    cfg: &ModelConfig,
    layer_index: usize,
    hook: Option<
        &mut dyn FnMut(TokenBatch, &AttentionByproducts) -> Result<(TokenBatch, StageOutcome)>,
    >,
) -> Result<(TokenBatch, LayerTrace)> {
    batch.validate()?;
    let tokens_in = batch.n();

    let x_ln = layernorm(&batch.tokens, &lw.ln1_gamma, &lw.ln1_beta)?;
    let (attn_out, byproducts) = attention_forward(&x_ln, &batch.sizes, lw, cfg)?;
    let mut batch = batch;
    for r in 0..tokens_in {
        let row = batch.tokens.row_mut(r);
        for (v, &a) in row.iter_mut().zip(attn_out.row(r)) {
            *v += a;
        }
    }

    let mut outcome = StageOutcome::default();
    if let Some(hook) = hook {
        let (compressed, oc) = hook(batch, &byproducts)?;
        batch = compressed;
        batch.validate()?;
        outcome = oc;
    }
    let tokens_out = batch.n();

    let x_ln2 = layernorm(&batch.tokens, &lw.ln2_gamma, &lw.ln2_beta)?;
    let mut hidden = matmul(&x_ln2, &lw.wfc1)?;
    add_bias(&mut hidden, &lw.bfc1)?;
    gelu_inplace(&mut hidden);
    let mut ffn = matmul(&hidden, &lw.wfc2)?;
    add_bias(&mut ffn, &lw.bfc2)?;
    if !ffn.is_finite() {
        return Err(Error::Numeric("non-finite activation in FFN (corrupt weights?)".into()));
    }
    for r in 0..tokens_out {
        let row = batch.tokens.row_mut(r);
        for (v, &f) in row.iter_mut().zip(ffn.row(r)) {
            *v += f;
        }
    }

    let trace = LayerTrace {
        layer: layer_index,
        tokens_in,
        tokens_out,
        policy: outcome.policy,
        sop: outcome.sop,
        requested_r: outcome.requested_r,
        removed: tokens_in - tokens_out,
        dc: outcome.dc,
        delta: outcome.delta,
    };
    Ok((batch, trace))
}

/// Runs all blocks over an already-embedded token batch. Exposed separately
/// from `model_forward` so callers can start from a hand-built batch.
pub fn forward_tokens(
    batch: TokenBatch,
    weights: &ModelWeights,
    cfg: &ModelConfig,
    compressor: &mut Compressor,
) -> Result<(Vec<f32>, Vec<LayerTrace>)> {
    let mut batch = batch;
    let mut traces = Vec::with_capacity(cfg.depth);
    for layer in 1..=cfg.depth {
        let lw = &weights.layers[layer - 1];
        let wants_hook = compressor.wants_layer(layer);
        let mut hook = |b: TokenBatch, by: &AttentionByproducts| compressor.layer_hook(layer, b, by);
        let (next, trace) =
            block_forward(batch, lw, cfg, layer, if wants_hook { Some(&mut hook) } else { None })?;
        batch = next;
        traces.push(trace);
    }

    // Final LN and classifier head act on the CLS token only.
    let cls = Matrix::from_vec(1, cfg.dim, batch.tokens.row(0).to_vec())?;
    let cls = layernorm(&cls, &weights.final_gamma, &weights.final_beta)?;
    let mut logits = matmul(&cls, &weights.head_weight)?;
    add_bias(&mut logits, &weights.head_bias)?;
    Ok((logits.row(0).to_vec(), traces))
}

/// Full forward pass from normalized pixels to logits plus a trace report.
/// The report's FLOPs are computed from the token counts the pass actually
/// used (attention at the pre-compression count, FFN at the post count).
pub fn model_forward(
    image: &[f32],
    weights: &ModelWeights,
    cfg: &ModelConfig,
    compressor: &mut Compressor,
) -> Result<(Vec<f32>, TraceReport)> {
    weights.validate(cfg)?;
    compressor.schedule().validate(cfg)?;
    let batch = patch_embed(image, weights, cfg)?;
    let (logits, traces) = forward_tokens(batch, weights, cfg, compressor)?;

    let trajectory: Vec<(usize, usize)> =
        traces.iter().map(|t| (t.tokens_in, t.tokens_out)).collect();
    let flops = flops::report_for_trajectory(cfg, &trajectory);
    let deltas: Vec<_> = traces.iter().filter_map(|t| t.delta.clone()).collect();
    let merge_map = flatten_provenance(cfg.num_patches(), &deltas)?;
    let report = TraceReport { layers: traces, flops, merge_map, logits: logits.clone() };
    Ok((logits, report))
}
