//! Token mixers: linearized attention, Fourier attention over FFT modes,
//! Wavelet attention over Haar subband tokens, and their gated fusion.
//!
//! Grid inputs are [H, W, D] tensors at the public entry points and
//! [H*W, D] token matrices on the tape.

use crate::error::{Error, Result};
use crate::ops::{grid_dims, token_dims};
use crate::tape::{Activation, Binding, NodeId, Tape};
use crate::tensor::{ParameterStore, Tensor};

/// Additive stabilizer in the linearized-attention denominator. The feature
/// map is strictly positive so this only guards tiny-norm queries.
pub const ATTENTION_EPS: f64 = 1e-6;

/// Temperature used by the softmax reference oracle.
pub fn default_tau(d: usize) -> f64 {
    (d as f64).sqrt()
}

/// Bias-free query/key/value projections at a fixed width.
#[derive(Debug, Clone)]
pub struct QkvProjection {
    prefix: String,
    pub d: usize,
}

impl QkvProjection {
    pub fn init(store: &mut ParameterStore, prefix: &str, d: usize) -> Result<QkvProjection> {
        if d == 0 {
            return Err(Error::Config("qkv width must be positive".into()));
        }
        for name in ["wq", "wk", "wv"] {
            store.init_uniform(&format!("{prefix}.{name}"), &[d, d], d)?;
        }
        Ok(QkvProjection {
            prefix: prefix.to_string(),
            d,
        })
    }

    pub fn path(&self, leaf: &str) -> String {
        format!("{}.{leaf}", self.prefix)
    }

    pub fn build(
        &self,
        tape: &mut Tape,
        bind: &mut Binding,
        store: &ParameterStore,
        x: NodeId,
    ) -> Result<(NodeId, NodeId, NodeId)> {
        let width = *tape.shape(x).last().unwrap_or(&0);
        if width != self.d {
            return Err(Error::Dimension(format!(
                "qkv projection of width {} applied to tokens of width {width}",
                self.d
            )));
        }
        let wq = bind.leaf(tape, store, &self.path("wq"))?;
        let wk = bind.leaf(tape, store, &self.path("wk"))?;
        let wv = bind.leaf(tape, store, &self.path("wv"))?;
        let q = tape.linear(x, wq, None)?;
        let k = tape.linear(x, wk, None)?;
        let v = tape.linear(x, wv, None)?;
        Ok((q, k, v))
    }
}

pub fn project_qkv(
    x: &Tensor,
    store: &ParameterStore,
    p: &QkvProjection,
) -> Result<(Tensor, Tensor, Tensor)> {
    token_dims(x)?;
    let mut tape = Tape::new();
    let mut bind = Binding::new();
    let xid = tape.leaf_tensor(x);
    let (q, k, v) = p.build(&mut tape, &mut bind, store, xid)?;
    Ok((tape.tensor(q), tape.tensor(k), tape.tensor(v)))
}

/// Linearized attention with feature map phi = elu + 1. The key/value
/// summary and key normalizer are computed once and shared by every query,
/// so the whole thing is O(n * D^2).
pub fn linear_attention_nodes(
    tape: &mut Tape,
    q: NodeId,
    k: NodeId,
    v: NodeId,
) -> Result<NodeId> {
    if tape.shape(q) != tape.shape(k) || tape.shape(q) != tape.shape(v) {
        return Err(Error::Dimension(format!(
            "attention inputs disagree: q {:?}, k {:?}, v {:?}",
            tape.shape(q),
            tape.shape(k),
            tape.shape(v)
        )));
    }
    let pq = tape.elu_plus_one(q);
    let pk = tape.elu_plus_one(k);
    let pkt = tape.transpose(pk)?;
    let kv = tape.matmul(pkt, v)?; // [d, d]
    let z = tape.sum_rows(pk)?; // [d, 1]
    let numer = tape.matmul(pq, kv)?; // [n, d]
    let denom = tape.matmul(pq, z)?; // [n, 1]
    tape.div_by_col_plus_eps(numer, denom, ATTENTION_EPS)
}

pub fn linear_attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<Tensor> {
    token_dims(q)?;
    let mut tape = Tape::new();
    let qi = tape.leaf_tensor(q);
    let ki = tape.leaf_tensor(k);
    let vi = tape.leaf_tensor(v);
    let out = linear_attention_nodes(&mut tape, qi, ki, vi)?;
    Ok(tape.tensor(out))
}

/// Quadratic softmax attention, used as a test oracle only. Row dots are
/// stabilized by max subtraction before exponentiation.
pub fn softmax_attention_reference(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    tau: f64,
) -> Result<Tensor> {
    let (n, d) = token_dims(q)?;
    if k.shape != q.shape || v.shape != q.shape {
        return Err(Error::Dimension(format!(
            "attention inputs disagree: q {:?}, k {:?}, v {:?}",
            q.shape, k.shape, v.shape
        )));
    }
    if !(tau > 0.0) {
        return Err(Error::Config(format!(
            "softmax temperature must be positive, got {tau}"
        )));
    }
    let mut out = vec![0.0; n * d];
    let mut dots = vec![0.0; n];
    for i in 0..n {
        let qi = &q.values[i * d..(i + 1) * d];
        for j in 0..n {
            let kj = &k.values[j * d..(j + 1) * d];
            dots[j] = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() / tau;
        }
        let m = dots.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !m.is_finite() {
            return Err(Error::Numeric(
                "softmax scores overflowed before stabilization".into(),
            ));
        }
        let mut zsum = 0.0;
        let orow = &mut out[i * d..(i + 1) * d];
        for j in 0..n {
            let wj = (dots[j] - m).exp();
            zsum += wj;
            for (o, &vv) in orow.iter_mut().zip(&v.values[j * d..(j + 1) * d]) {
                *o += wj * vv;
            }
        }
        if !zsum.is_finite() || zsum == 0.0 {
            return Err(Error::Numeric("softmax normalization overflowed".into()));
        }
        for o in orow {
            *o /= zsum;
        }
    }
    Tensor::from_values(&[n, d], out)
}

/// Mode-wise residual mixer: FFT, a per-channel-block two-layer complex MLP
/// shared across all modes, inverse FFT, then a residual add.
#[derive(Debug, Clone)]
pub struct FourierAttentionParams {
    prefix: String,
    pub d: usize,
    pub blocks: usize,
    pub block_size: usize,
    pub hidden: usize,
    pub activation: Activation,
}

impl FourierAttentionParams {
    pub fn init(
        store: &mut ParameterStore,
        prefix: &str,
        d: usize,
        blocks: usize,
        ratio: usize,
        activation: Activation,
    ) -> Result<FourierAttentionParams> {
        if blocks == 0 || d == 0 || d % blocks != 0 {
            return Err(Error::Config(format!(
                "block count {blocks} must divide channel width {d}"
            )));
        }
        if ratio == 0 {
            return Err(Error::Config("hidden ratio must be positive".into()));
        }
        let block_size = d / blocks;
        let hidden = ratio * block_size;
        for b in 0..blocks {
            let p = format!("{prefix}.block{b}");
            store.init_uniform(&format!("{p}.w1re"), &[block_size, hidden], block_size)?;
            store.init_uniform(&format!("{p}.w1im"), &[block_size, hidden], block_size)?;
            store.init_zeros(&format!("{p}.b1re"), &[hidden])?;
            store.init_zeros(&format!("{p}.b1im"), &[hidden])?;
            store.init_uniform(&format!("{p}.w2re"), &[hidden, block_size], hidden)?;
            store.init_uniform(&format!("{p}.w2im"), &[hidden, block_size], hidden)?;
        }
        Ok(FourierAttentionParams {
            prefix: prefix.to_string(),
            d,
            blocks,
            block_size,
            hidden,
            activation,
        })
    }

    pub fn path(&self, block: usize, leaf: &str) -> String {
        format!("{}.block{block}.{leaf}", self.prefix)
    }

    fn leaf_names() -> [&'static str; 6] {
        // The second layer is bias-free on purpose: a constant added to the
        // output spectrum's imaginary plane is wiped out by the real-part
        // projection of the inverse transform, so its gradient would be
        // identically zero.
        ["w1re", "w1im", "b1re", "b1im", "w2re", "w2im"]
    }

    /// Overwrite the mode map with an exact identity (needs hidden ratio 1;
    /// pair with `Activation::Identity` for an end-to-end identity).
    pub fn set_identity(&self, store: &mut ParameterStore) -> Result<()> {
        if self.hidden != self.block_size {
            return Err(Error::Config(
                "identity test mode needs hidden ratio 1".into(),
            ));
        }
        for b in 0..self.blocks {
            for leaf in Self::leaf_names() {
                let t = store.get_mut(&self.path(b, leaf))?;
                t.values.iter_mut().for_each(|v| *v = 0.0);
                if leaf == "w1re" || leaf == "w2re" {
                    for i in 0..self.block_size {
                        t.values[i * self.block_size + i] = 1.0;
                    }
                }
            }
        }
        Ok(())
    }

    /// Zero every weight and bias of the mode map.
    pub fn set_zero(&self, store: &mut ParameterStore) -> Result<()> {
        for b in 0..self.blocks {
            for leaf in Self::leaf_names() {
                store
                    .get_mut(&self.path(b, leaf))?
                    .values
                    .iter_mut()
                    .for_each(|v| *v = 0.0);
            }
        }
        Ok(())
    }

    /// Zero only the biases. With `Activation::Identity` this leaves a
    /// complex-linear mode map, which commutes with the per-mode phases that
    /// circular shifts induce (a nonlinear map does not).
    pub fn zero_biases(&self, store: &mut ParameterStore) -> Result<()> {
        for b in 0..self.blocks {
            for leaf in ["b1re", "b1im"] {
                store
                    .get_mut(&self.path(b, leaf))?
                    .values
                    .iter_mut()
                    .for_each(|v| *v = 0.0);
            }
        }
        Ok(())
    }

    pub fn build(
        &self,
        tape: &mut Tape,
        bind: &mut Binding,
        store: &ParameterStore,
        x: NodeId,
        h: usize,
        w: usize,
    ) -> Result<NodeId> {
        let width = *tape.shape(x).last().unwrap_or(&0);
        if width != self.d {
            return Err(Error::Dimension(format!(
                "fourier attention of width {} applied to tokens of width {width}",
                self.d
            )));
        }
        let spec = tape.fft2(x, h, w)?;
        let mut pieces = Vec::with_capacity(self.blocks);
        for b in 0..self.blocks {
            let from = b * self.block_size;
            let zb = tape.slice_cols(spec, from, from + self.block_size)?;
            let w1re = bind.leaf(tape, store, &self.path(b, "w1re"))?;
            let w1im = bind.leaf(tape, store, &self.path(b, "w1im"))?;
            let b1re = bind.leaf(tape, store, &self.path(b, "b1re"))?;
            let b1im = bind.leaf(tape, store, &self.path(b, "b1im"))?;
            let w2re = bind.leaf(tape, store, &self.path(b, "w2re"))?;
            let w2im = bind.leaf(tape, store, &self.path(b, "w2im"))?;
            let h1 = tape.complex_linear(zb, w1re, w1im, Some((b1re, b1im)))?;
            let a = tape.activation(h1, self.activation);
            let h2 = tape.complex_linear(a, w2re, w2im, None)?;
            pieces.push(h2);
        }
        let mixed = tape.concat_cols(&pieces)?;
        let xr = tape.ifft2_real(mixed, h, w)?;
        tape.add(x, xr)
    }
}

pub fn fourier_attention(
    x: &Tensor,
    store: &ParameterStore,
    p: &FourierAttentionParams,
) -> Result<Tensor> {
    let (h, w, d) = grid_dims(x)?;
    let mut tape = Tape::new();
    let mut bind = Binding::new();
    let xid = tape.leaf(x.values.clone(), &[h * w, d]);
    let out = p.build(&mut tape, &mut bind, store, xid, h, w)?;
    Tensor::from_values(&[h, w, d], tape.values(out).to_vec())
}

/// Subband mixer: channel-reduce, Haar transform, optional 3x3 convolution,
/// linearized attention over the quarter-resolution tokens, inverse Haar,
/// then concat-and-project against the input.
#[derive(Debug, Clone)]
pub struct WaveletAttentionParams {
    prefix: String,
    pub d: usize,
    pub use_locality_conv: bool,
    pub qkv: QkvProjection,
}

impl WaveletAttentionParams {
    pub fn init(
        store: &mut ParameterStore,
        prefix: &str,
        d: usize,
        use_locality_conv: bool,
    ) -> Result<WaveletAttentionParams> {
        if d == 0 || d % 4 != 0 {
            return Err(Error::Config(format!(
                "wavelet attention needs a width divisible by 4, got {d}"
            )));
        }
        let dr = d / 4;
        store.init_uniform(&format!("{prefix}.reduce.w"), &[d, dr], d)?;
        store.init_zeros(&format!("{prefix}.reduce.b"), &[dr])?;
        if use_locality_conv {
            store.init_uniform(&format!("{prefix}.local.k"), &[3, 3, d, d], 9 * d)?;
            store.init_zeros(&format!("{prefix}.local.b"), &[d])?;
        }
        let qkv = QkvProjection::init(store, &format!("{prefix}.qkv"), d)?;
        store.init_uniform(&format!("{prefix}.out.w"), &[d + dr, d], d + dr)?;
        store.init_zeros(&format!("{prefix}.out.b"), &[d])?;
        Ok(WaveletAttentionParams {
            prefix: prefix.to_string(),
            d,
            use_locality_conv,
            qkv,
        })
    }

    pub fn path(&self, leaf: &str) -> String {
        format!("{}.{leaf}", self.prefix)
    }

    pub fn build(
        &self,
        tape: &mut Tape,
        bind: &mut Binding,
        store: &ParameterStore,
        x: NodeId,
        h: usize,
        w: usize,
    ) -> Result<NodeId> {
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::Config(format!(
                "wavelet attention needs even grid dims, got {h}x{w}"
            )));
        }
        let width = *tape.shape(x).last().unwrap_or(&0);
        if width != self.d {
            return Err(Error::Dimension(format!(
                "wavelet attention of width {} applied to tokens of width {width}",
                self.d
            )));
        }
        let rw = bind.leaf(tape, store, &self.path("reduce.w"))?;
        let rb = bind.leaf(tape, store, &self.path("reduce.b"))?;
        let reduced = tape.linear(x, rw, Some(rb))?;
        let sub = tape.fwt_haar(reduced, h, w)?;
        let tokens = if self.use_locality_conv {
            let kk = bind.leaf(tape, store, &self.path("local.k"))?;
            let kb = bind.leaf(tape, store, &self.path("local.b"))?;
            tape.conv3x3_same(sub, kk, Some(kb), h / 2, w / 2)?
        } else {
            sub
        };
        let (q, k, v) = self.qkv.build(tape, bind, store, tokens)?;
        let mixed = linear_attention_nodes(tape, q, k, v)?;
        let xr = tape.ifwt_haar(mixed, h, w)?;
        let cat = tape.concat_cols(&[x, xr])?;
        let ow = bind.leaf(tape, store, &self.path("out.w"))?;
        let ob = bind.leaf(tape, store, &self.path("out.b"))?;
        tape.linear(cat, ow, Some(ob))
    }
}

pub fn wavelet_attention(
    x: &Tensor,
    store: &ParameterStore,
    p: &WaveletAttentionParams,
) -> Result<Tensor> {
    let (h, w, d) = grid_dims(x)?;
    let mut tape = Tape::new();
    let mut bind = Binding::new();
    let xid = tape.leaf(x.values.clone(), &[h * w, d]);
    let out = p.build(&mut tape, &mut bind, store, xid, h, w)?;
    Tensor::from_values(&[h, w, d], tape.values(out).to_vec())
}

/// Learned convex combination of the two mixer outputs.
#[derive(Debug, Clone)]
pub struct GatedFusionParams {
    prefix: String,
    pub d: usize,
}

impl GatedFusionParams {
    pub fn init(store: &mut ParameterStore, prefix: &str, d: usize) -> Result<GatedFusionParams> {
        if d == 0 {
            return Err(Error::Config("fusion width must be positive".into()));
        }
        store.init_uniform(&format!("{prefix}.w"), &[2 * d, d], 2 * d)?;
        store.init_zeros(&format!("{prefix}.b"), &[d])?;
        Ok(GatedFusionParams {
            prefix: prefix.to_string(),
            d,
        })
    }

    pub fn path(&self, leaf: &str) -> String {
        format!("{}.{leaf}", self.prefix)
    }

    fn gate_nodes(
        &self,
        tape: &mut Tape,
        bind: &mut Binding,
        store: &ParameterStore,
        x_fa: NodeId,
        x_wa: NodeId,
    ) -> Result<NodeId> {
        if tape.shape(x_fa) != tape.shape(x_wa) {
            return Err(Error::Dimension(format!(
                "fusion branches disagree: {:?} vs {:?}",
                tape.shape(x_fa),
                tape.shape(x_wa)
            )));
        }
        let cat = tape.concat_cols(&[x_fa, x_wa])?;
        let w = bind.leaf(tape, store, &self.path("w"))?;
        let b = bind.leaf(tape, store, &self.path("b"))?;
        let logits = tape.linear(cat, w, Some(b))?;
        Ok(tape.sigmoid(logits))
    }

    pub fn build(
        &self,
        tape: &mut Tape,
        bind: &mut Binding,
        store: &ParameterStore,
        x_fa: NodeId,
        x_wa: NodeId,
    ) -> Result<NodeId> {
        let g = self.gate_nodes(tape, bind, store, x_fa, x_wa)?;
        tape.gated_blend(g, x_fa, x_wa)
    }
}

fn fusion_rows(x_fa: &Tensor, x_wa: &Tensor, d: usize) -> Result<usize> {
    if x_fa.shape != x_wa.shape {
        return Err(Error::Dimension(format!(
            "fusion branches disagree: {:?} vs {:?}",
            x_fa.shape, x_wa.shape
        )));
    }
    let width = *x_fa.shape.last().unwrap_or(&0);
    if width != d {
        return Err(Error::Dimension(format!(
            "fusion of width {d} applied to channels of width {width}"
        )));
    }
    Ok(x_fa.numel() / d)
}

pub fn gated_fusion(
    x_fa: &Tensor,
    x_wa: &Tensor,
    store: &ParameterStore,
    p: &GatedFusionParams,
) -> Result<Tensor> {
    let rows = fusion_rows(x_fa, x_wa, p.d)?;
    let mut tape = Tape::new();
    let mut bind = Binding::new();
    let fa = tape.leaf(x_fa.values.clone(), &[rows, p.d]);
    let wa = tape.leaf(x_wa.values.clone(), &[rows, p.d]);
    let out = p.build(&mut tape, &mut bind, store, fa, wa)?;
    Tensor::from_values(&x_fa.shape, tape.values(out).to_vec())
}

/// The sigmoid gate alone, for inspection and tests.
pub fn fusion_gate(
    x_fa: &Tensor,
    x_wa: &Tensor,
    store: &ParameterStore,
    p: &GatedFusionParams,
) -> Result<Tensor> {
    let rows = fusion_rows(x_fa, x_wa, p.d)?;
    let mut tape = Tape::new();
    let mut bind = Binding::new();
    let fa = tape.leaf(x_fa.values.clone(), &[rows, p.d]);
    let wa = tape.leaf(x_wa.values.clone(), &[rows, p.d]);
    let g = p.gate_nodes(&mut tape, &mut bind, store, fa, wa)?;
    Tensor::from_values(&x_fa.shape, tape.values(g).to_vec())
}

/// Parallel Fourier and Wavelet branches over the same input, fused by the
/// learned gate.
#[derive(Debug, Clone)]
pub struct SpectralAttentionParams {
    pub fa: FourierAttentionParams,
    pub wa: WaveletAttentionParams,
    pub fusion: GatedFusionParams,
}

impl SpectralAttentionParams {
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        store: &mut ParameterStore,
        prefix: &str,
        d: usize,
        blocks: usize,
        ratio: usize,
        use_locality_conv: bool,
        activation: Activation,
    ) -> Result<SpectralAttentionParams> {
        let fa = FourierAttentionParams::init(
            store,
            &format!("{prefix}.fa"),
            d,
            blocks,
            ratio,
            activation,
        )?;
        let wa = WaveletAttentionParams::init(store, &format!("{prefix}.wa"), d, use_locality_conv)?;
        let fusion = GatedFusionParams::init(store, &format!("{prefix}.fuse"), d)?;
        Ok(SpectralAttentionParams { fa, wa, fusion })
    }

    pub fn build(
        &self,
        tape: &mut Tape,
        bind: &mut Binding,
        store: &ParameterStore,
        x: NodeId,
        h: usize,
        w: usize,
    ) -> Result<NodeId> {
        let x_fa = self.fa.build(tape, bind, store, x, h, w)?;
        let x_wa = self.wa.build(tape, bind, store, x, h, w)?;
        self.fusion.build(tape, bind, store, x_fa, x_wa)
    }
}

pub fn spectral_attention(
    x: &Tensor,
    store: &ParameterStore,
    p: &SpectralAttentionParams,
) -> Result<Tensor> {
    let (h, w, d) = grid_dims(x)?;
    let mut tape = Tape::new();
    let mut bind = Binding::new();
    let xid = tape.leaf(x.values.clone(), &[h * w, d]);
    let out = p.build(&mut tape, &mut bind, store, xid, h, w)?;
    Tensor::from_values(&[h, w, d], tape.values(out).to_vec())
}
