use crate::error::{Error, Result};
use crate::numeric::Matrix;
use crate::vit::ModelConfig;

/// Per-block parameters. Projection matrices are stored input-major, so a
/// forward pass is `x * W + b`.
#[derive(Debug, Clone)]
pub struct LayerWeights {
    pub ln1_gamma: Vec<f32>,
    pub ln1_beta: Vec<f32>,
    /// [dim, 3*dim], columns ordered Q | K | V.
    pub wqkv: Matrix,
    pub bqkv: Vec<f32>,
    /// [dim, dim]
    pub wproj: Matrix,
    pub bproj: Vec<f32>,
    pub ln2_gamma: Vec<f32>,
    pub ln2_beta: Vec<f32>,
    /// [dim, mlp_hidden]
    pub wfc1: Matrix,
    pub bfc1: Vec<f32>,
    /// [mlp_hidden, dim]
    pub wfc2: Matrix,
    pub bfc2: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct ModelWeights {
    /// [patch_dim, dim]; a flattened patch (rows, then columns, then
    /// channels, matching HWC pixel order) left-multiplies this.
    pub patch_weight: Matrix,
    pub patch_bias: Vec<f32>,
    pub cls: Vec<f32>,
    /// [initial_tokens, dim], row 0 is the CLS position.
    pub pos: Matrix,
    pub layers: Vec<LayerWeights>,
    pub final_gamma: Vec<f32>,
    pub final_beta: Vec<f32>,
    /// [dim, num_classes]
    pub head_weight: Matrix,
    pub head_bias: Vec<f32>,
}

/// Name and shape of every tensor a `ModelConfig` requires, in a fixed
/// canonical order. The weight-file writer and loader both key off this.
pub fn tensor_specs(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let d = cfg.dim;
    let h = cfg.mlp_hidden();
    let mut specs = vec![
        ("patch_embed.weight".to_string(), vec![cfg.patch_dim(), d]),
        ("patch_embed.bias".to_string(), vec![d]),
        ("cls_token".to_string(), vec![1, d]),
        ("pos_embed".to_string(), vec![cfg.initial_tokens(), d]),
    ];
    for i in 0..cfg.depth {
        let p = format!("layers.{i}");
        specs.push((format!("{p}.ln1.gamma"), vec![d]));
        specs.push((format!("{p}.ln1.beta"), vec![d]));
        specs.push((format!("{p}.attn.wqkv"), vec![d, 3 * d]));
        specs.push((format!("{p}.attn.bqkv"), vec![3 * d]));
        specs.push((format!("{p}.attn.wproj"), vec![d, d]));
        specs.push((format!("{p}.attn.bproj"), vec![d]));
        specs.push((format!("{p}.ln2.gamma"), vec![d]));
        specs.push((format!("{p}.ln2.beta"), vec![d]));
        specs.push((format!("{p}.mlp.fc1.weight"), vec![d, h]));
        specs.push((format!("{p}.mlp.fc1.bias"), vec![h]));
        specs.push((format!("{p}.mlp.fc2.weight"), vec![h, d]));
        specs.push((format!("{p}.mlp.fc2.bias"), vec![d]));
    }
    specs.push(("norm.gamma".to_string(), vec![d]));
    specs.push(("norm.beta".to_string(), vec![d]));
    specs.push(("head.weight".to_string(), vec![d, cfg.num_classes]));
    specs.push(("head.bias".to_string(), vec![cfg.num_classes]));
    specs
}

impl ModelWeights {
    /// Checks every tensor shape against the config before any arithmetic.
    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        cfg.validate()?;
        let d = cfg.dim;
        let h = cfg.mlp_hidden();
        let check = |name: &str, ok: bool| -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::Weights(format!("tensor {name} has a shape inconsistent with the model config")))
            }
        };
        check("patch_embed.weight", self.patch_weight.rows() == cfg.patch_dim() && self.patch_weight.cols() == d)?;
        check("patch_embed.bias", self.patch_bias.len() == d)?;
        check("cls_token", self.cls.len() == d)?;
        check("pos_embed", self.pos.rows() == cfg.initial_tokens() && self.pos.cols() == d)?;
        check("layers", self.layers.len() == cfg.depth)?;
        for (i, l) in self.layers.iter().enumerate() {
            let p = format!("layers.{i}");
            check(&p, l.ln1_gamma.len() == d && l.ln1_beta.len() == d)?;
            check(&p, l.wqkv.rows() == d && l.wqkv.cols() == 3 * d && l.bqkv.len() == 3 * d)?;
            check(&p, l.wproj.rows() == d && l.wproj.cols() == d && l.bproj.len() == d)?;
            check(&p, l.ln2_gamma.len() == d && l.ln2_beta.len() == d)?;
            check(&p, l.wfc1.rows() == d && l.wfc1.cols() == h && l.bfc1.len() == h)?;
            check(&p, l.wfc2.rows() == h && l.wfc2.cols() == d && l.bfc2.len() == d)?;
        }
        check("norm", self.final_gamma.len() == d && self.final_beta.len() == d)?;
        check("head.weight", self.head_weight.rows() == d && self.head_weight.cols() == cfg.num_classes)?;
        check("head.bias", self.head_bias.len() == cfg.num_classes)?;
        Ok(())
    }

    /// Flattens every tensor to (name, shape, values) in canonical order.
    pub fn named_tensors(&self, cfg: &ModelConfig) -> Vec<(String, Vec<usize>, Vec<f32>)> {
        let mut out = Vec::new();
        let mut push = |name: &str, shape: Vec<usize>, data: &[f32]| {
            out.push((name.to_string(), shape, data.to_vec()));
        };
        push("patch_embed.weight", vec![cfg.patch_dim(), cfg.dim], self.patch_weight.data());
        push("patch_embed.bias", vec![cfg.dim], &self.patch_bias);
        push("cls_token", vec![1, cfg.dim], &self.cls);
        push("pos_embed", vec![cfg.initial_tokens(), cfg.dim], self.pos.data());
        for (i, l) in self.layers.iter().enumerate() {
            let p = format!("layers.{i}");
            push(&format!("{p}.ln1.gamma"), vec![cfg.dim], &l.ln1_gamma);
            push(&format!("{p}.ln1.beta"), vec![cfg.dim], &l.ln1_beta);
            push(&format!("{p}.attn.wqkv"), vec![cfg.dim, 3 * cfg.dim], l.wqkv.data());
            push(&format!("{p}.attn.bqkv"), vec![3 * cfg.dim], &l.bqkv);
            push(&format!("{p}.attn.wproj"), vec![cfg.dim, cfg.dim], l.wproj.data());
            push(&format!("{p}.attn.bproj"), vec![cfg.dim], &l.bproj);
            push(&format!("{p}.ln2.gamma"), vec![cfg.dim], &l.ln2_gamma);
            push(&format!("{p}.ln2.beta"), vec![cfg.dim], &l.ln2_beta);
            push(&format!("{p}.mlp.fc1.weight"), vec![cfg.dim, cfg.mlp_hidden()], l.wfc1.data());
            push(&format!("{p}.mlp.fc1.bias"), vec![cfg.mlp_hidden()], &l.bfc1);
            push(&format!("{p}.mlp.fc2.weight"), vec![cfg.mlp_hidden(), cfg.dim], l.wfc2.data());
            push(&format!("{p}.mlp.fc2.bias"), vec![cfg.dim], &l.bfc2);
        }
        push("norm.gamma", vec![cfg.dim], &self.final_gamma);
        push("norm.beta", vec![cfg.dim], &self.final_beta);
        push("head.weight", vec![cfg.dim, cfg.num_classes], self.head_weight.data());
        push("head.bias", vec![cfg.num_classes], &self.head_bias);
        out
    }

    /// Rebuilds weights from a name -> values map produced by the loader.
    /// Shapes are re-validated after assembly.
    pub fn from_named(cfg: &ModelConfig, mut get: impl FnMut(&str) -> Result<Vec<f32>>) -> Result<Self> {
        let d = cfg.dim;
        let h = cfg.mlp_hidden();
        let mat = |data: Vec<f32>, rows: usize, cols: usize, name: &str| -> Result<Matrix> {
            Matrix::from_vec(rows, cols, data)
                .map_err(|_| Error::Weights(format!("tensor {name} has wrong element count")))
        };
        let patch_weight = mat(get("patch_embed.weight")?, cfg.patch_dim(), d, "patch_embed.weight")?;
        let patch_bias = get("patch_embed.bias")?;
        let cls = get("cls_token")?;
        let pos = mat(get("pos_embed")?, cfg.initial_tokens(), d, "pos_embed")?;
        let mut layers = Vec::with_capacity(cfg.depth);
        for i in 0..cfg.depth {
            let p = format!("layers.{i}");
            layers.push(LayerWeights {
                ln1_gamma: get(&format!("{p}.ln1.gamma"))?,
                ln1_beta: get(&format!("{p}.ln1.beta"))?,
                wqkv: mat(get(&format!("{p}.attn.wqkv"))?, d, 3 * d, "wqkv")?,
                bqkv: get(&format!("{p}.attn.bqkv"))?,
                wproj: mat(get(&format!("{p}.attn.wproj"))?, d, d, "wproj")?,
                bproj: get(&format!("{p}.attn.bproj"))?,
                ln2_gamma: get(&format!("{p}.ln2.gamma"))?,
                ln2_beta: get(&format!("{p}.ln2.beta"))?,
                wfc1: mat(get(&format!("{p}.mlp.fc1.weight"))?, d, h, "fc1")?,
                bfc1: get(&format!("{p}.mlp.fc1.bias"))?,
                wfc2: mat(get(&format!("{p}.mlp.fc2.weight"))?, h, d, "fc2")?,
                bfc2: get(&format!("{p}.mlp.fc2.bias"))?,
            });
        }
        let weights = ModelWeights {
            patch_weight,
            patch_bias,
            cls,
            pos,
            layers,
            final_gamma: get("norm.gamma")?,
            final_beta: get("norm.beta")?,
            head_weight: mat(get("head.weight")?, d, cfg.num_classes, "head.weight")?,
            head_bias: get("head.bias")?,
        };
        weights.validate(cfg)?;
        Ok(weights)
    }
}
