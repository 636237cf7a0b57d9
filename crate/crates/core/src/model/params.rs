use rand::Rng;

use super::config::ModelConfig;
use super::ModelError;
use crate::autograd::{NodeId, ParamId, ParamStore, Scalar, Tape, Tensor};

pub const LN_EPS: f64 = 1e-5;
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
/// Standard deviation for every learnable tensor at initialization.
pub const INIT_STD: f64 = 0.02;

/// A single-hidden-layer MLP.
#[derive(Debug, Clone, Copy)]
pub struct MlpParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

/// One pre-norm transformer block: self-attention and a pointwise MLP,
/// each behind layer normalization and a residual connection.
#[derive(Debug, Clone, Copy)]
pub struct BlockParams {
    pub ln1_gamma: ParamId,
    pub ln1_beta: ParamId,
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
    pub ln2_gamma: ParamId,
    pub ln2_beta: ParamId,
    pub mlp: MlpParams,
}

/// Handles to every tensor of the autoencoder inside a parameter store.
///
/// The two running-statistics buffers of the coordinate embedding are
/// registered alongside the learnable tensors so they travel with
/// checkpoints, but they never receive gradients and the optimizer
/// never touches them.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub w_enc: ParamId,
    pub coord_w1: ParamId,
    pub coord_b1: ParamId,
    pub coord_bn_gamma: ParamId,
    pub coord_bn_beta: ParamId,
    pub coord_bn_mean: ParamId,
    pub coord_bn_var: ParamId,
    pub coord_w2: ParamId,
    pub coord_b2: ParamId,
    pub v_enc_audio: ParamId,
    pub v_enc_coord: ParamId,
    pub v_dec_audio: ParamId,
    pub v_dec_coord: ParamId,
    pub u_audio: ParamId,
    pub u_coord: ParamId,
    pub u_source: ParamId,
    pub encoder: Vec<BlockParams>,
    pub decoder: Vec<BlockParams>,
    pub gamma_a2c: MlpParams,
    pub gamma_c2a: MlpParams,
    pub w_dec: ParamId,
    pub phi: Option<MlpParams>,
    pub psi_source: MlpParams,
    pub psi_mic: MlpParams,
}

enum Fill {
    Learnable,
    Buffer(f64),
}

/// Walks the full parameter layout in a fixed order, calling `bind`
/// once per tensor. Initialization and checkpoint rebinding share this
/// walk so names and shapes can never drift apart.
fn wire<F>(config: &ModelConfig, bind: &mut F) -> Result<ModelParams, ModelError>
where
    F: FnMut(&str, &[usize], Fill) -> Result<ParamId, ModelError>,
{
    let d = config.d;
    let mlp = |bind: &mut F, prefix: &str, dims: (usize, usize, usize)| {
        let (din, hidden, dout) = dims;
        Ok(MlpParams {
            w1: bind(&format!("{prefix}.w1"), &[din, hidden], Fill::Learnable)?,
            b1: bind(&format!("{prefix}.b1"), &[hidden], Fill::Learnable)?,
            w2: bind(&format!("{prefix}.w2"), &[hidden, dout], Fill::Learnable)?,
            b2: bind(&format!("{prefix}.b2"), &[dout], Fill::Learnable)?,
        })
    };
    let block = |bind: &mut F, prefix: &str| -> Result<BlockParams, ModelError> {
        Ok(BlockParams {
            ln1_gamma: bind(&format!("{prefix}.ln1.gamma"), &[d], Fill::Learnable)?,
            ln1_beta: bind(&format!("{prefix}.ln1.beta"), &[d], Fill::Learnable)?,
            wq: bind(&format!("{prefix}.attn.wq"), &[d, d], Fill::Learnable)?,
            bq: bind(&format!("{prefix}.attn.bq"), &[d], Fill::Learnable)?,
            wk: bind(&format!("{prefix}.attn.wk"), &[d, d], Fill::Learnable)?,
            bk: bind(&format!("{prefix}.attn.bk"), &[d], Fill::Learnable)?,
            wv: bind(&format!("{prefix}.attn.wv"), &[d, d], Fill::Learnable)?,
            bv: bind(&format!("{prefix}.attn.bv"), &[d], Fill::Learnable)?,
            wo: bind(&format!("{prefix}.attn.wo"), &[d, d], Fill::Learnable)?,
            bo: bind(&format!("{prefix}.attn.bo"), &[d], Fill::Learnable)?,
            ln2_gamma: bind(&format!("{prefix}.ln2.gamma"), &[d], Fill::Learnable)?,
            ln2_beta: bind(&format!("{prefix}.ln2.beta"), &[d], Fill::Learnable)?,
            mlp: mlp(bind, &format!("{prefix}.mlp"), (d, 4 * d, d))?,
        })
    };

    let w_enc = bind("model.w_enc", &[d, config.n], Fill::Learnable)?;
    let coord_w1 = bind("model.coord_embed.w1", &[3, d], Fill::Learnable)?;
    let coord_b1 = bind("model.coord_embed.b1", &[d], Fill::Learnable)?;
    let coord_bn_gamma = bind("model.coord_embed.bn.gamma", &[d], Fill::Learnable)?;
    let coord_bn_beta = bind("model.coord_embed.bn.beta", &[d], Fill::Learnable)?;
    let coord_bn_mean = bind("model.coord_embed.bn.running_mean", &[d], Fill::Buffer(0.0))?;
    let coord_bn_var = bind("model.coord_embed.bn.running_var", &[d], Fill::Buffer(1.0))?;
    let coord_w2 = bind("model.coord_embed.w2", &[d, d], Fill::Learnable)?;
    let coord_b2 = bind("model.coord_embed.b2", &[d], Fill::Learnable)?;
    let v_enc_audio = bind("model.v.enc_audio", &[d], Fill::Learnable)?;
    let v_enc_coord = bind("model.v.enc_coord", &[d], Fill::Learnable)?;
    let v_dec_audio = bind("model.v.dec_audio", &[d], Fill::Learnable)?;
    let v_dec_coord = bind("model.v.dec_coord", &[d], Fill::Learnable)?;
    let u_audio = bind("model.u.audio", &[d], Fill::Learnable)?;
    let u_coord = bind("model.u.coord", &[d], Fill::Learnable)?;
    let u_source = bind("model.u.source", &[d], Fill::Learnable)?;
    let mut encoder = Vec::with_capacity(config.depth);
    for i in 0..config.depth {
        encoder.push(block(bind, &format!("model.encoder.{i}"))?);
    }
    let mut decoder = Vec::with_capacity(config.depth);
    for i in 0..config.depth {
        decoder.push(block(bind, &format!("model.decoder.{i}"))?);
    }
    let gamma_a2c = mlp(bind, "model.gamma_a2c", (d, d, d))?;
    let gamma_c2a = mlp(bind, "model.gamma_c2a", (d, d, d))?;
    let w_dec = bind("model.w_dec", &[config.n, d], Fill::Learnable)?;
    let phi = if config.use_tdoa {
        Some(mlp(bind, "model.phi", (config.pair_feature_width(), d, d))?)
    } else {
        None
    };
    let psi_source = mlp(bind, "model.psi_source", (config.head_input_width(), d, 3))?;
    let psi_mic = mlp(bind, "model.psi_mic", (config.head_input_width(), d, 3))?;

    Ok(ModelParams {
        config: *config,
        w_enc,
        coord_w1,
        coord_b1,
        coord_bn_gamma,
        coord_bn_beta,
        coord_bn_mean,
        coord_bn_var,
        coord_w2,
        coord_b2,
        v_enc_audio,
        v_enc_coord,
        v_dec_audio,
        v_dec_coord,
        u_audio,
        u_coord,
        u_source,
        encoder,
        decoder,
        gamma_a2c,
        gamma_c2a,
        w_dec,
        phi,
        psi_source,
        psi_mic,
    })
}

impl ModelParams {
    /// Registers a fresh model in `store`: every learnable tensor drawn
    /// from N(0, INIT_STD^2), running statistics at zero mean and unit
    /// variance.
    pub fn init<S: Scalar, R: Rng>(
        store: &mut ParamStore<S>,
        config: &ModelConfig,
        rng: &mut R,
    ) -> Result<ModelParams, ModelError> {
        wire(config, &mut |name, shape, fill| {
            Ok(match fill {
                Fill::Learnable => store.register_normal(name, shape, INIT_STD, rng),
                Fill::Buffer(c) => {
                    let len = shape.iter().product();
                    store.register(name, Tensor::new(shape.to_vec(), vec![S::from_f(c); len]))
                }
            })
        })
    }

    /// Rebinds handles against a store whose values were loaded from a
    /// checkpoint, verifying names and shapes.
    pub fn from_store<S: Scalar>(
        store: &ParamStore<S>,
        config: &ModelConfig,
    ) -> Result<ModelParams, ModelError> {
        wire(config, &mut |name, shape, _| {
            let id = store
                .id_of(name)
                .ok_or_else(|| ModelError::MissingParam(name.to_string()))?;
            if store.get(id).shape() != shape {
                return Err(ModelError::ParamShape(name.to_string()));
            }
            Ok(id)
        })
    }
}

/// Applies a single-hidden-layer MLP to the rows of `x`.
pub fn mlp_forward<S: Scalar>(
    tape: &mut Tape<S>,
    store: &ParamStore<S>,
    mlp: &MlpParams,
    x: NodeId,
) -> NodeId {
    let w1 = tape.param(store, mlp.w1);
    let b1 = tape.param(store, mlp.b1);
    let w2 = tape.param(store, mlp.w2);
    let b2 = tape.param(store, mlp.b2);
    let h = tape.linear(x, w1, b1);
    let h = tape.gelu(h);
    tape.linear(h, w2, b2)
}

/// One pre-norm block: `x + attn(ln(x))`, then `x + mlp(ln(x))`.
pub fn transformer_block<S: Scalar>(
    tape: &mut Tape<S>,
    store: &ParamStore<S>,
    block: &BlockParams,
    heads: usize,
    x: NodeId,
) -> NodeId {
    let g1 = tape.param(store, block.ln1_gamma);
    let b1 = tape.param(store, block.ln1_beta);
    let normed = tape.layer_norm(x, g1, b1, LN_EPS);
    let wq = tape.param(store, block.wq);
    let bq = tape.param(store, block.bq);
    let wk = tape.param(store, block.wk);
    let bk = tape.param(store, block.bk);
    let wv = tape.param(store, block.wv);
    let bv = tape.param(store, block.bv);
    let wo = tape.param(store, block.wo);
    let bo = tape.param(store, block.bo);
    let attn = tape.multi_head_attention(normed, wq, bq, wk, bk, wv, bv, wo, bo, heads);
    let x = tape.add(x, attn);
    let g2 = tape.param(store, block.ln2_gamma);
    let b2 = tape.param(store, block.ln2_beta);
    let normed = tape.layer_norm(x, g2, b2, LN_EPS);
    let h = mlp_forward(tape, store, &block.mlp, normed);
    tape.add(x, h)
}

/// Runs a stack of blocks in sequence; an empty stack is the identity.
pub fn transformer_stack<S: Scalar>(
    tape: &mut Tape<S>,
    store: &ParamStore<S>,
    blocks: &[BlockParams],
    heads: usize,
    x: NodeId,
) -> NodeId {
    let mut x = x;
    for block in blocks {
        x = transformer_block(tape, store, block, heads, x);
    }
    x
}

/// Folds the batch statistics recorded by a training-mode forward pass
/// into the running estimates, using the unbiased batch variance. Does
/// nothing for inference-mode passes.
pub fn update_bn_stats<S: Scalar>(
    store: &mut ParamStore<S>,
    params: &ModelParams,
    tape: &Tape<S>,
    bn_node: NodeId,
) {
    let Some((mean, var)) = tape.batch_stats(bn_node) else {
        return;
    };
    let rows = tape.value(bn_node).rows();
    let unbias = rows as f64 / (rows as f64 - 1.0);
    let (mean, var) = (mean.clone(), var.clone());
    let running_mean = store.get_mut(params.coord_bn_mean);
    for (old, new) in running_mean.data_mut().iter_mut().zip(mean.data()) {
        *old = S::from_f((1.0 - BN_MOMENTUM) * old.to_f() + BN_MOMENTUM * new.to_f());
    }
    let running_var = store.get_mut(params.coord_bn_var);
    for (old, new) in running_var.data_mut().iter_mut().zip(var.data()) {
        *old = S::from_f((1.0 - BN_MOMENTUM) * old.to_f() + BN_MOMENTUM * new.to_f() * unbias);
    }
}
