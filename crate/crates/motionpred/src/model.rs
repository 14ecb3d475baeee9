//! The motion prediction network.
//!
//! The encoder lifts each 3-D joint position into a feature space, then
//! stacks residual blocks. Every block first routes information across the
//! skeleton with a learned joint-to-joint attention graph (built per input
//! frame and summed over the observation window), then mixes along time
//! with a zero-padded convolution; both halves use tanh activations.
//!
//! The decoder is deliberately light: four 1x1 maps over the time axis
//! expand the observed window to the prediction horizon (tanh between
//! them, the last one linear), a per-joint linear layer projects features
//! back to 3-D offsets, and the last observed pose is added back in. With
//! all decoder weights at zero the network therefore reproduces the
//! zero-velocity baseline exactly, so training starts from "keep still"
//! plus a learned correction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param::{BoundParams, ParamId};
use crate::tape::VarId;
use crate::tensor::fmt_shape;
use crate::{ParamStore, Tape, Tensor};

/// Architecture hyperparameters.
///
/// `coord_dim` is carried explicitly but pinned to 3: the data layer, the
/// metrics, and the decoder's output head all speak 3-D joint positions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Joints per skeleton (rows of each frame).
    pub n_joints: usize,
    /// Observed frames fed to the encoder.
    pub in_frames: usize,
    /// Future frames the decoder emits.
    pub out_frames: usize,
    /// Width of the per-joint feature space.
    pub feature_dim: usize,
    /// Width of the attention query/key projections.
    pub key_dim: usize,
    /// Residual encoder blocks. Zero is legal and reduces the encoder to
    /// the input projection, which the shape tests rely on.
    pub n_blocks: usize,
    /// Temporal convolution taps; must be odd so the output stays aligned.
    pub tcn_kernel: usize,
    /// Coordinates per joint; fixed at 3.
    pub coord_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_joints: 22,
            in_frames: 10,
            out_frames: 25,
            feature_dim: 128,
            key_dim: 32,
            n_blocks: 6,
            tcn_kernel: 3,
            coord_dim: 3,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("n_joints", self.n_joints),
            ("in_frames", self.in_frames),
            ("out_frames", self.out_frames),
            ("feature_dim", self.feature_dim),
            ("key_dim", self.key_dim),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be at least 1")));
            }
        }
        if self.tcn_kernel % 2 == 0 || self.tcn_kernel == 0 {
            return Err(Error::Config(format!(
                "model.tcn_kernel must be odd, got {}",
                self.tcn_kernel
            )));
        }
        if self.coord_dim != 3 {
            return Err(Error::Config(format!(
                "model.coord_dim is fixed at 3, got {}",
                self.coord_dim
            )));
        }
        Ok(())
    }
}

/// Joint-to-joint attention layer of one encoder block.
#[derive(Debug, Clone)]
pub struct AttentionGraphLayer {
    pub w_query: ParamId,
    pub w_key: ParamId,
    pub w_feature: ParamId,
    /// `1 / sqrt(key_dim)`, applied to raw attention scores.
    pub scale: f64,
}

/// One residual encoder block: attention graph, then temporal convolution.
#[derive(Debug, Clone)]
pub struct EncoderBlock {
    pub attn: AttentionGraphLayer,
    pub tcn_kernels: ParamId,
    pub tcn_bias: ParamId,
}

/// Time-expanding decoder: four 1x1 maps over time, then a joint-wise MLP.
#[derive(Debug, Clone)]
pub struct Decoder {
    pub time_weights: [ParamId; 4],
    pub time_biases: [ParamId; 4],
    pub mlp_weight: ParamId,
    pub mlp_bias: ParamId,
}

/// The full network plus its parameter store.
#[derive(Debug, Clone)]
pub struct Predictor {
    config: ModelConfig,
    input_weight: ParamId,
    input_bias: ParamId,
    blocks: Vec<EncoderBlock>,
    decoder: Decoder,
    params: ParamStore,
}

impl Predictor {
    /// Builds a freshly initialized network.
    ///
    /// Weights are Xavier-uniform draws from a counter-based generator
    /// seeded with `seed`, taken in registration order, so initialization
    /// is bit-reproducible. Biases start at zero.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let c = config.feature_dim;
        let (t_in, t_out) = (config.in_frames, config.out_frames);

        let input_weight = params.insert(
            "input_proj.weight",
            xavier(&mut rng, &[config.coord_dim, c], config.coord_dim, c),
        )?;
        let input_bias = params.insert("input_proj.bias", Tensor::zeros(vec![c]))?;

        let mut blocks = Vec::with_capacity(config.n_blocks);
        for b in 0..config.n_blocks {
            let w_query = params.insert(
                &format!("block{b}.attn.w_query"),
                xavier(&mut rng, &[c, config.key_dim], c, config.key_dim),
            )?;
            let w_key = params.insert(
                &format!("block{b}.attn.w_key"),
                xavier(&mut rng, &[c, config.key_dim], c, config.key_dim),
            )?;
            let w_feature = params.insert(
                &format!("block{b}.attn.w_feature"),
                xavier(&mut rng, &[c, c], c, c),
            )?;
            let k = config.tcn_kernel;
            let tcn_kernels = params.insert(
                &format!("block{b}.tcn.kernels"),
                xavier(&mut rng, &[k, c, c], k * c, k * c),
            )?;
            let tcn_bias = params.insert(&format!("block{b}.tcn.bias"), Tensor::zeros(vec![c]))?;
            blocks.push(EncoderBlock {
                attn: AttentionGraphLayer {
                    w_query,
                    w_key,
                    w_feature,
                    scale: 1.0 / (config.key_dim as f64).sqrt(),
                },
                tcn_kernels,
                tcn_bias,
            });
        }

        let mut time_weights = Vec::with_capacity(4);
        let mut time_biases = Vec::with_capacity(4);
        for i in 0..4 {
            let t_from = if i == 0 { t_in } else { t_out };
            time_weights.push(params.insert(
                &format!("decoder.time{}.weight", i + 1),
                xavier(&mut rng, &[t_from, t_out], t_from, t_out),
            )?);
            time_biases.push(params.insert(
                &format!("decoder.time{}.bias", i + 1),
                Tensor::zeros(vec![t_out]),
            )?);
        }
        let mlp_weight = params.insert(
            "decoder.mlp.weight",
            xavier(&mut rng, &[c, config.coord_dim], c, config.coord_dim),
        )?;
        let mlp_bias = params.insert("decoder.mlp.bias", Tensor::zeros(vec![config.coord_dim]))?;

        Ok(Self {
            config: config.clone(),
            input_weight,
            input_bias,
            blocks,
            decoder: Decoder {
                time_weights: time_weights.try_into().expect("exactly four time maps"),
                time_biases: time_biases.try_into().expect("exactly four time maps"),
                mlp_weight,
                mlp_bias,
            },
            params,
        })
    }

    /// Rebuilds a predictor around parameters loaded from a checkpoint.
    /// The store must have been produced by a predictor with this config;
    /// layout is verified name by name.
    pub fn from_params(config: &ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let reference = Self::init(config, 0)?;
        if reference.params.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "parameter store has {} entries, config implies {}",
                params.len(),
                reference.params.len()
            )));
        }
        for ((_, ref_name, ref_t), (_, got_name, got_t)) in
            reference.params.iter().zip(params.iter())
        {
            if ref_name != got_name || ref_t.shape() != got_t.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter mismatch: expected '{ref_name}' {}, found '{got_name}' {}",
                    fmt_shape(ref_t.shape()),
                    fmt_shape(got_t.shape())
                )));
            }
        }
        Ok(Self { params, ..reference })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Total trainable scalars.
    pub fn param_count(&self) -> usize {
        self.params.param_count()
    }

    /// Runs the encoder on observed frames `[in_frames, n_joints, 3]`,
    /// producing features `[in_frames, n_joints, feature_dim]`.
    pub fn encoder_forward(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        obs: VarId,
    ) -> Result<VarId> {
        let expect = [
            self.config.in_frames,
            self.config.n_joints,
            self.config.coord_dim,
        ];
        if tape.shape(obs) != expect {
            return Err(Error::Shape(format!(
                "encoder expects observations {}, got {}",
                fmt_shape(&expect),
                fmt_shape(tape.shape(obs))
            )));
        }
        let projected = tape.matmul(obs, bound.var(self.input_weight))?;
        let mut x = tape.broadcast_add(projected, bound.var(self.input_bias))?;
        for block in &self.blocks {
            let h = block.forward(tape, bound, x)?;
            x = tape.add(h, x)?;
        }
        Ok(x)
    }

    /// Expands encoder features to `[out_frames, n_joints, 3]` predicted
    /// positions, anchored on the last observed pose `[n_joints, 3]`.
    pub fn decoder_forward(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        features: VarId,
        last_obs: VarId,
    ) -> Result<VarId> {
        self.decoder.forward(tape, bound, features, last_obs)
    }

    /// Full forward pass on an existing tape. `obs` must be
    /// `[in_frames, n_joints, 3]`.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        obs: VarId,
    ) -> Result<VarId> {
        let features = self.encoder_forward(tape, bound, obs)?;
        let t_in = self.config.in_frames;
        let last = tape.narrow(obs, 0, t_in - 1, 1)?;
        let last = tape.reshape(last, vec![self.config.n_joints, self.config.coord_dim])?;
        self.decoder_forward(tape, bound, features, last)
    }

    /// Pure inference: predicts `[out_frames, n_joints, 3]` future
    /// positions from `[in_frames, n_joints, 3]` observations. Builds a
    /// throwaway tape with frozen parameters; bitwise deterministic for
    /// identical inputs and parameters.
    pub fn predict(&self, obs: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let obs_var = tape.constant(obs);
        let out = self.forward_on_tape(&mut tape, &bound, obs_var)?;
        Ok(tape.value(out))
    }
}

impl EncoderBlock {
    /// Attention graph, feature mix, then temporal convolution; tanh after
    /// each half. The caller adds the residual.
    pub fn forward(&self, tape: &mut Tape, bound: &BoundParams, x: VarId) -> Result<VarId> {
        let mixed = graph_attention_forward(
            tape,
            bound.var(self.attn.w_query),
            bound.var(self.attn.w_key),
            bound.var(self.attn.w_feature),
            x,
            self.attn.scale,
        )?;
        let conv = tape.conv_time(mixed, bound.var(self.tcn_kernels), bound.var(self.tcn_bias))?;
        tape.tanh(conv)
    }
}

impl Decoder {
    fn forward(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        features: VarId,
        last_obs: VarId,
    ) -> Result<VarId> {
        // [T_in, N, C] -> [N, C, T_in]: time becomes the contracted axis.
        let mut h = tape.permute(features, &[1, 2, 0])?;
        for i in 0..4 {
            h = tape.matmul(h, bound.var(self.time_weights[i]))?;
            h = tape.broadcast_add(h, bound.var(self.time_biases[i]))?;
            if i < 3 {
                h = tape.tanh(h)?;
            }
        }
        // [N, C, T_out] -> [T_out, N, C], project to offsets, anchor.
        let back = tape.permute(h, &[2, 0, 1])?;
        let offsets = tape.matmul(back, bound.var(self.mlp_weight))?;
        let offsets = tape.broadcast_add(offsets, bound.var(self.mlp_bias))?;
        tape.broadcast_add(offsets, last_obs)
    }
}

/// Attention graph over joints for a single frame `[n_joints, features]`:
/// `softmax(scale * (x Wq)(x Wk)^T)` row by row, a right-stochastic
/// `[n_joints, n_joints]` matrix.
pub fn attention_pose_graph(
    tape: &mut Tape,
    w_query: VarId,
    w_key: VarId,
    frame: VarId,
    scale: f64,
) -> Result<VarId> {
    if tape.shape(frame).len() != 2 {
        return Err(Error::Shape(format!(
            "pose graph expects a rank-2 frame, got {}",
            fmt_shape(tape.shape(frame))
        )));
    }
    let q = tape.matmul(frame, w_query)?;
    let k = tape.matmul(frame, w_key)?;
    let kt = tape.permute(k, &[1, 0])?;
    let scores = tape.matmul(q, kt)?;
    let scaled = tape.scale(scores, scale)?;
    tape.softmax_rows(scaled)
}

/// Per-frame attention graphs summed over the window: features
/// `[frames, n_joints, features]` yield one `[n_joints, n_joints]` matrix
/// whose rows each sum to the number of frames.
pub fn attention_sample_graph(
    tape: &mut Tape,
    w_query: VarId,
    w_key: VarId,
    features: VarId,
    scale: f64,
) -> Result<VarId> {
    if tape.shape(features).len() != 3 {
        return Err(Error::Shape(format!(
            "sample graph expects rank-3 features, got {}",
            fmt_shape(tape.shape(features))
        )));
    }
    let q = tape.matmul(features, w_query)?;
    let k = tape.matmul(features, w_key)?;
    let kt = tape.permute(k, &[0, 2, 1])?;
    let scores = tape.matmul(q, kt)?;
    let scaled = tape.scale(scores, scale)?;
    let per_frame = tape.softmax_rows(scaled)?;
    tape.sum_axis(per_frame, 0)
}

/// One graph-attention layer: aggregate joints through the sample graph,
/// mix features, squash. `features` is `[frames, n_joints, c_in]` and the
/// result is `[frames, n_joints, c_out]` with `c_out` from `w_feature`.
pub fn graph_attention_forward(
    tape: &mut Tape,
    w_query: VarId,
    w_key: VarId,
    w_feature: VarId,
    features: VarId,
    scale: f64,
) -> Result<VarId> {
    let graph = attention_sample_graph(tape, w_query, w_key, features, scale)?;
    let aggregated = tape.matmul(graph, features)?;
    let mixed = tape.matmul(aggregated, w_feature)?;
    tape.tanh(mixed)
}

/// Xavier-uniform tensor: `U(-l, l)` with `l = sqrt(6 / (fan_in + fan_out))`,
/// drawn in row-major order.
fn xavier(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-limit..limit)).collect();
    Tensor::new(shape.to_vec(), data).expect("finite draws")
}
