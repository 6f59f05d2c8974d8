use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attention::{FourierAttentionParams, SpectralAttentionParams, WaveletAttentionParams};
use crate::error::{Error, Result};
use crate::ops::{grid_dims, MlpParams};
use crate::tape::{Activation, Binding, NodeId, Tape};
use crate::tensor::{ParameterStore, Tensor};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Which mixer sits in the attention slot of every block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Fa,
    Wa,
    Sa,
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Variant> {
        match s {
            "fa" => Ok(Variant::Fa),
            "wa" => Ok(Variant::Wa),
            "sa" => Ok(Variant::Sa),
            other => Err(Error::Config(format!(
                "unknown attention variant '{other}' (expected fa, wa, or sa)"
            ))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Fa => "fa",
            Variant::Wa => "wa",
            Variant::Sa => "sa",
        })
    }
}

/// Architecture description; serialized verbatim into checkpoints. `ratio`
/// sets the hidden widths of both the block MLPs and the per-mode maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub blocks: usize,
    pub width: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub ratio: usize,
    pub fourier_blocks: usize,
    pub use_locality_conv: bool,
    pub activation: Activation,
    pub seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 {
            return Err(Error::Config("model needs at least one block".into()));
        }
        if self.width == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        if self.ratio == 0 {
            return Err(Error::Config("hidden ratio must be positive".into()));
        }
        if matches!(self.variant, Variant::Wa | Variant::Sa) && self.width % 4 != 0 {
            return Err(Error::Config(format!(
                "width {} must be divisible by 4 for the wavelet branch",
                self.width
            )));
        }
        if matches!(self.variant, Variant::Fa | Variant::Sa)
            && (self.fourier_blocks == 0 || self.width % self.fourier_blocks != 0)
        {
            return Err(Error::Config(format!(
                "fourier block count {} must divide width {}",
                self.fourier_blocks, self.width
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum AttentionParams {
    Fa(FourierAttentionParams),
    Wa(WaveletAttentionParams),
    Sa(SpectralAttentionParams),
}

impl AttentionParams {
    fn build(
        &self,
        tape: &mut Tape,
        bind: &mut Binding,
        store: &ParameterStore,
        x: NodeId,
        h: usize,
        w: usize,
    ) -> Result<NodeId> {
        match self {
            AttentionParams::Fa(p) => p.build(tape, bind, store, x, h, w),
            AttentionParams::Wa(p) => p.build(tape, bind, store, x, h, w),
            AttentionParams::Sa(p) => p.build(tape, bind, store, x, h, w),
        }
    }
}

#[derive(Debug, Clone)]
struct BlockParams {
    prefix: String,
    attention: AttentionParams,
    mlp: MlpParams,
}

/// Encoder, a stack of pre-norm blocks, and a pointwise decoder. Every layer
/// is pointwise or token-mixing, so one parameter set serves any grid size.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub config: ModelConfig,
    blocks: Vec<BlockParams>,
}

impl ModelParams {
    pub fn init(store: &mut ParameterStore, config: &ModelConfig) -> Result<ModelParams> {
        config.validate()?;
        let d = config.width;
        store.init_uniform("model.encode.w", &[config.in_channels + 2, d], config.in_channels + 2)?;
        store.init_zeros("model.encode.b", &[d])?;
        let mut blocks = Vec::with_capacity(config.blocks);
        for b in 0..config.blocks {
            let prefix = format!("model.block{b}");
            store.init_constant(&format!("{prefix}.ln1.gamma"), &[d], 1.0)?;
            store.init_zeros(&format!("{prefix}.ln1.beta"), &[d])?;
            let attention = match config.variant {
                Variant::Fa => AttentionParams::Fa(FourierAttentionParams::init(
                    store,
                    &format!("{prefix}.attn"),
                    d,
                    config.fourier_blocks,
                    config.ratio,
                    config.activation,
                )?),
                Variant::Wa => AttentionParams::Wa(WaveletAttentionParams::init(
                    store,
                    &format!("{prefix}.attn"),
                    d,
                    config.use_locality_conv,
                )?),
                Variant::Sa => AttentionParams::Sa(SpectralAttentionParams::init(
                    store,
                    &format!("{prefix}.attn"),
                    d,
                    config.fourier_blocks,
                    config.ratio,
                    config.use_locality_conv,
                    config.activation,
                )?),
            };
            store.init_constant(&format!("{prefix}.ln2.gamma"), &[d], 1.0)?;
            store.init_zeros(&format!("{prefix}.ln2.beta"), &[d])?;
            let mlp = MlpParams::init(
                store,
                &format!("{prefix}.mlp"),
                d,
                config.ratio,
                config.activation,
            )?;
            blocks.push(BlockParams { prefix, attention, mlp });
        }
        store.init_uniform("model.decode.w", &[d, config.out_channels], d)?;
        store.init_zeros("model.decode.b", &[config.out_channels])?;
        Ok(ModelParams { config: config.clone(), blocks })
    }

    /// Normalized (row, col) positions per token: (0,0) at one corner,
    /// (1,1) at the opposite one.
    pub fn coordinate_channels(h: usize, w: usize) -> Vec<f64> {
        let dh = (h - 1).max(1) as f64;
        let dw = (w - 1).max(1) as f64;
        let mut out = Vec::with_capacity(h * w * 2);
        for i in 0..h {
            for j in 0..w {
                out.push(i as f64 / dh);
                out.push(j as f64 / dw);
            }
        }
        out
    }

    /// Append coordinate channels and lift pointwise to the hidden width.
    pub fn encode(
        &self,
        tape: &mut Tape,
        bind: &mut Binding,
        store: &ParameterStore,
        a: NodeId,
        h: usize,
        w: usize,
    ) -> Result<NodeId> {
        let width = *tape.shape(a).last().unwrap_or(&0);
        if width != self.config.in_channels {
            return Err(Error::Config(format!(
                "input has {width} channels, model expects {}",
                self.config.in_channels
            )));
        }
        let coords = tape.leaf(Self::coordinate_channels(h, w), &[h * w, 2]);
        let lifted = tape.concat_cols(&[a, coords])?;
        let ew = bind.leaf(tape, store, "model.encode.w")?;
        let eb = bind.leaf(tape, store, "model.encode.b")?;
        tape.linear(lifted, ew, Some(eb))
    }

    fn block(
        &self,
        tape: &mut Tape,
        bind: &mut Binding,
        store: &ParameterStore,
        b: usize,
        x: NodeId,
        h: usize,
        w: usize,
    ) -> Result<NodeId> {
        let p = &self.blocks[b];
        let g1 = bind.leaf(tape, store, &format!("{}.ln1.gamma", p.prefix))?;
        let b1 = bind.leaf(tape, store, &format!("{}.ln1.beta", p.prefix))?;
        let n1 = tape.layer_norm(x, g1, b1, LAYER_NORM_EPS)?;
        let mixed = p.attention.build(tape, bind, store, n1, h, w)?;
        let xhat = tape.add(mixed, x)?;
        let g2 = bind.leaf(tape, store, &format!("{}.ln2.gamma", p.prefix))?;
        let b2 = bind.leaf(tape, store, &format!("{}.ln2.beta", p.prefix))?;
        let n2 = tape.layer_norm(xhat, g2, b2, LAYER_NORM_EPS)?;
        let fed = p.mlp.build(tape, bind, store, n2)?;
        tape.add(fed, xhat)
    }

    pub fn decode(
        &self,
        tape: &mut Tape,
        bind: &mut Binding,
        store: &ParameterStore,
        x: NodeId,
    ) -> Result<NodeId> {
        let dw = bind.leaf(tape, store, "model.decode.w")?;
        let db = bind.leaf(tape, store, "model.decode.b")?;
        tape.linear(x, dw, Some(db))
    }

    /// Full forward on the tape: `a` is a leaf of shape [h*w, in_channels].
    pub fn build(
        &self,
        tape: &mut Tape,
        bind: &mut Binding,
        store: &ParameterStore,
        a: NodeId,
        h: usize,
        w: usize,
    ) -> Result<NodeId> {
        if self.config.variant != Variant::Fa && (h % 2 != 0 || w % 2 != 0) {
            return Err(Error::Dimension(format!(
                "wavelet branch needs even grid sides, got {h}×{w}"
            )));
        }
        let mut x = self.encode(tape, bind, store, a, h, w)?;
        for b in 0..self.blocks.len() {
            x = self.block(tape, bind, store, b, x, h, w)?;
        }
        self.decode(tape, bind, store, x)
    }

    pub fn forward(&self, store: &ParameterStore, a: &Tensor) -> Result<Tensor> {
        let (h, w, c) = grid_dims(a)?;
        let mut tape = Tape::new();
        let mut bind = Binding::new();
        let aid = tape.leaf(a.values.clone(), &[h * w, c]);
        let out = self.build(&mut tape, &mut bind, store, aid, h, w)?;
        Tensor::from_values(&[h, w, self.config.out_channels], tape.values(out).to_vec())
    }
}

/// One input/target field pair on a shared grid.
#[derive(Debug, Clone)]
pub struct GridSample {
    pub a: Tensor,
    pub u: Tensor,
}

impl GridSample {
    pub fn new(a: Tensor, u: Tensor) -> Result<GridSample> {
        let (ha, wa, _) = grid_dims(&a)?;
        let (hu, wu, _) = grid_dims(&u)?;
        if (ha, wa) != (hu, wu) {
            return Err(Error::Dimension(format!(
                "sample fields live on different grids: {ha}×{wa} vs {hu}×{wu}"
            )));
        }
        if !a.is_finite() || !u.is_finite() {
            return Err(Error::Numeric("sample contains non-finite values".into()));
        }
        Ok(GridSample { a, u })
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.a.shape[0], self.a.shape[1])
    }
}

/// Affine data transform fitted on a training split and carried inside
/// checkpoints: inputs are standardized, targets only rescaled. A pure
/// scaling of the target leaves every relative-L2 value identical in raw
/// and scaled space, so reported metrics stay comparable either way.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub a_mean: f64,
    pub a_std: f64,
    pub u_scale: f64,
}

impl Normalizer {
    pub fn identity() -> Normalizer {
        Normalizer { a_mean: 0.0, a_std: 1.0, u_scale: 1.0 }
    }

    /// Input mean/std and target root-mean-square over a sample set.
    /// Degenerate statistics fall back to 1 so constant fields stay usable.
    pub fn fit(samples: &[GridSample]) -> Result<Normalizer> {
        if samples.is_empty() {
            return Err(Error::Config("cannot fit a normalizer on no samples".into()));
        }
        let a_count: usize = samples.iter().map(|s| s.a.values.len()).sum();
        let a_sum: f64 = samples.iter().flat_map(|s| &s.a.values).sum();
        let a_mean = a_sum / a_count as f64;
        let a_var: f64 = samples
            .iter()
            .flat_map(|s| &s.a.values)
            .map(|v| (v - a_mean) * (v - a_mean))
            .sum::<f64>()
            / a_count as f64;
        let a_std = if a_var > 0.0 { a_var.sqrt() } else { 1.0 };
        let u_count: usize = samples.iter().map(|s| s.u.values.len()).sum();
        let u_ms: f64 =
            samples.iter().flat_map(|s| &s.u.values).map(|v| v * v).sum::<f64>() / u_count as f64;
        let u_scale = if u_ms > 0.0 { u_ms.sqrt() } else { 1.0 };
        Ok(Normalizer { a_mean, a_std, u_scale })
    }

    pub fn encode_input(&self, a: &Tensor) -> Tensor {
        let values = a.values.iter().map(|v| (v - self.a_mean) / self.a_std).collect();
        Tensor { shape: a.shape.clone(), values, requires_grad: false, grad: Vec::new() }
    }

    pub fn encode_sample(&self, sample: &GridSample) -> Result<GridSample> {
        let u = Tensor {
            shape: sample.u.shape.clone(),
            values: sample.u.values.iter().map(|v| v / self.u_scale).collect(),
            requires_grad: false,
            grad: Vec::new(),
        };
        GridSample::new(self.encode_input(&sample.a), u)
    }

    pub fn decode_prediction(&self, pred: &Tensor) -> Tensor {
        let values = pred.values.iter().map(|v| v * self.u_scale).collect();
        Tensor { shape: pred.shape.clone(), values, requires_grad: false, grad: Vec::new() }
    }
}

/// ‖pred − target‖₂ / ‖target‖₂ over all entries of one sample.
pub fn relative_l2(pred: &Tensor, target: &Tensor) -> Result<f64> {
    if pred.shape != target.shape {
        return Err(Error::Dimension(format!(
            "relative L2 of shapes {:?} and {:?}",
            pred.shape, target.shape
        )));
    }
    let t2: f64 = target.values.iter().map(|v| v * v).sum();
    if !(t2 > 0.0) || !t2.is_finite() {
        return Err(Error::Numeric(
            "relative L2 against a zero-norm or non-finite target".into(),
        ));
    }
    let d2: f64 = pred
        .values
        .iter()
        .zip(&target.values)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(d2.sqrt() / t2.sqrt())
}

/// Same metric as a differentiable tape node; the target enters as data.
pub fn relative_l2_node(tape: &mut Tape, pred: NodeId, target: &Tensor) -> Result<NodeId> {
    let numel: usize = tape.shape(pred).iter().product();
    if numel != target.numel() {
        return Err(Error::Dimension(format!(
            "relative L2 of {numel} predictions against {} targets",
            target.numel()
        )));
    }
    let t2: f64 = target.values.iter().map(|v| v * v).sum();
    if !(t2 > 0.0) || !t2.is_finite() {
        return Err(Error::Numeric(
            "relative L2 against a zero-norm or non-finite target".into(),
        ));
    }
    let shape = tape.shape(pred).to_vec();
    let tgt = tape.leaf(target.values.clone(), &shape);
    let diff = tape.sub(pred, tgt)?;
    let sq = tape.mul(diff, diff)?;
    let ssq = tape.sum_all(sq);
    let norm = tape.sqrt(ssq);
    Ok(tape.scale(norm, 1.0 / t2.sqrt()))
}
