//! Eager reverse-mode autodiff tape.
//!
//! Every op computes its value at build time and records enough metadata for
//! the reverse sweep. Gradients accumulate (never overwrite), so a leaf used
//! twice receives the sum of both contributions.
//!
//! Shape conventions: field nodes are [rows, channels] where rows is either a
//! token count or H*W of a grid whose dims the spatial ops take explicitly;
//! complex spectra are packed as [2*modes, channels] with the real plane
//! first. Parameter leaves keep their natural shapes.

use crate::error::{Error, Result};
use crate::linalg::{mm, mm_abt, mm_atb};
use crate::spectral::{dft2_channels, fwt_stacked, ifwt_stacked};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

/// MLP nonlinearity. `Identity` exists for constructed-identity test modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Gelu,
    Identity,
}

enum Op {
    Leaf,
    Matmul { a: NodeId, b: NodeId, m: usize, k: usize, n: usize },
    Linear { x: NodeId, w: NodeId, b: Option<NodeId>, m: usize, k: usize, n: usize },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { x: NodeId, c: f64 },
    Sigmoid { x: NodeId },
    Gelu { x: NodeId },
    EluPlusOne { x: NodeId },
    Sqrt { x: NodeId },
    SumAll { x: NodeId },
    SumRows { x: NodeId, rows: usize, cols: usize },
    Transpose { x: NodeId, rows: usize, cols: usize },
    DivByColPlusEps { numer: NodeId, denom: NodeId, eps: f64, rows: usize, cols: usize },
    GatedBlend { gate: NodeId, on: NodeId, off: NodeId },
    LayerNorm { x: NodeId, gamma: NodeId, beta: NodeId, eps: f64, rows: usize, cols: usize },
    Conv3x3 { x: NodeId, kernel: NodeId, bias: Option<NodeId>, h: usize, w: usize, cin: usize, cout: usize },
    Fft2 { x: NodeId, h: usize, w: usize, c: usize },
    Ifft2Real { z: NodeId, h: usize, w: usize, c: usize },
    HaarFwt { x: NodeId, h: usize, w: usize, c: usize },
    HaarIfwt { s: NodeId, h: usize, w: usize, c: usize },
    ComplexLinear { z: NodeId, wre: NodeId, wim: NodeId, bias: Option<(NodeId, NodeId)>, m: usize, din: usize, dout: usize },
    SliceCols { x: NodeId, rows: usize, cols: usize, from: usize, to: usize },
    ConcatCols { xs: Vec<(NodeId, usize)>, rows: usize },
}

struct Node {
    op: Op,
    values: Vec<f64>,
    shape: Vec<usize>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-node gradient buffers produced by one backward sweep.
pub struct Gradients {
    grads: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> &[f64] {
        &self.grads[id.0]
    }
}

/// Caches one leaf per parameter path so each parameter is read onto a tape
/// exactly once and its whole gradient lands in a single buffer.
#[derive(Default)]
pub struct Binding {
    map: indexmap::IndexMap<String, NodeId>,
}

impl Binding {
    pub fn new() -> Binding {
        Binding::default()
    }

    pub fn leaf(
        &mut self,
        tape: &mut Tape,
        store: &crate::tensor::ParameterStore,
        name: &str,
    ) -> Result<NodeId> {
        if let Some(id) = self.map.get(name) {
            return Ok(*id);
        }
        let id = tape.leaf_tensor(store.get(name)?);
        self.map.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn node(&self, name: &str) -> Option<NodeId> {
        self.map.get(name).copied()
    }

    /// Gradient of every bound parameter, keyed by path.
    pub fn grads(&self, g: &Gradients) -> indexmap::IndexMap<String, Vec<f64>> {
        self.map
            .iter()
            .map(|(name, id)| (name.clone(), g.get(*id).to_vec()))
            .collect()
    }

    /// Add this sweep's contributions into the store's gradient slots.
    pub fn accumulate_into(
        &self,
        g: &Gradients,
        store: &mut crate::tensor::ParameterStore,
    ) -> Result<()> {
        for (name, id) in &self.map {
            store.accumulate_grad(name, g.get(*id))?;
        }
        Ok(())
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, op: Op, values: Vec<f64>, shape: Vec<usize>) -> NodeId {
        debug_assert_eq!(values.len(), shape.iter().product::<usize>());
        self.nodes.push(Node { op, values, shape });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, values: Vec<f64>, shape: &[usize]) -> NodeId {
        self.push(Op::Leaf, values, shape.to_vec())
    }

    pub fn leaf_tensor(&mut self, t: &Tensor) -> NodeId {
        self.push(Op::Leaf, t.values.clone(), t.shape.clone())
    }

    pub fn values(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].values
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        debug_assert_eq!(self.nodes[id.0].values.len(), 1);
        self.nodes[id.0].values[0]
    }

    pub fn tensor(&self, id: NodeId) -> Tensor {
        let n = &self.nodes[id.0];
        Tensor::from_values(&n.shape, n.values.clone()).expect("node shapes are consistent")
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn dims2(&self, id: NodeId, what: &str) -> Result<(usize, usize)> {
        match self.nodes[id.0].shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            other => Err(Error::Dimension(format!(
                "{what} expects a 2-D node, got shape {other:?}"
            ))),
        }
    }

    fn check_same_shape(&self, a: NodeId, b: NodeId, what: &str) -> Result<()> {
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        if sa != sb {
            return Err(Error::Dimension(format!(
                "{what} expects matching shapes, got {sa:?} vs {sb:?}"
            )));
        }
        Ok(())
    }

    // ---- elementwise and reductions ----

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape(a, b, "add")?;
        let values = self.nodes[a.0]
            .values
            .iter()
            .zip(&self.nodes[b.0].values)
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        Ok(self.push(Op::Add { a, b }, values, shape))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape(a, b, "sub")?;
        let values = self.nodes[a.0]
            .values
            .iter()
            .zip(&self.nodes[b.0].values)
            .map(|(x, y)| x - y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        Ok(self.push(Op::Sub { a, b }, values, shape))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape(a, b, "mul")?;
        let values = self.nodes[a.0]
            .values
            .iter()
            .zip(&self.nodes[b.0].values)
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        Ok(self.push(Op::Mul { a, b }, values, shape))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let values = self.nodes[x.0].values.iter().map(|v| v * c).collect();
        let shape = self.nodes[x.0].shape.clone();
        self.push(Op::Scale { x, c }, values, shape)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let values = self.nodes[x.0]
            .values
            .iter()
            .map(|v| 1.0 / (1.0 + (-v).exp()))
            .collect();
        let shape = self.nodes[x.0].shape.clone();
        self.push(Op::Sigmoid { x }, values, shape)
    }

    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let values = self.nodes[x.0].values.iter().map(|&v| gelu_val(v)).collect();
        let shape = self.nodes[x.0].shape.clone();
        self.push(Op::Gelu { x }, values, shape)
    }

    pub fn activation(&mut self, x: NodeId, act: Activation) -> NodeId {
        match act {
            Activation::Gelu => self.gelu(x),
            Activation::Identity => x,
        }
    }

    /// Feature map phi(x) = elu(x) + 1: strictly positive, C1.
    pub fn elu_plus_one(&mut self, x: NodeId) -> NodeId {
        let values = self.nodes[x.0]
            .values
            .iter()
            .map(|&v| if v >= 0.0 { v + 1.0 } else { v.exp() })
            .collect();
        let shape = self.nodes[x.0].shape.clone();
        self.push(Op::EluPlusOne { x }, values, shape)
    }

    pub fn sqrt(&mut self, x: NodeId) -> NodeId {
        let values = self.nodes[x.0].values.iter().map(|v| v.sqrt()).collect();
        let shape = self.nodes[x.0].shape.clone();
        self.push(Op::Sqrt { x }, values, shape)
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.nodes[x.0].values.iter().sum();
        self.push(Op::SumAll { x }, vec![s], vec![1])
    }

    /// Column sums: [rows, cols] -> [cols, 1].
    pub fn sum_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let (rows, cols) = self.dims2(x, "sum_rows")?;
        let xv = &self.nodes[x.0].values;
        let mut out = vec![0.0; cols];
        for i in 0..rows {
            for j in 0..cols {
                out[j] += xv[i * cols + j];
            }
        }
        Ok(self.push(Op::SumRows { x, rows, cols }, out, vec![cols, 1]))
    }

    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        let (rows, cols) = self.dims2(x, "transpose")?;
        let xv = &self.nodes[x.0].values;
        let mut out = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                out[j * rows + i] = xv[i * cols + j];
            }
        }
        Ok(self.push(Op::Transpose { x, rows, cols }, out, vec![cols, rows]))
    }

    /// out[i,j] = numer[i,j] / (denom[i] + eps); denom is [rows, 1].
    pub fn div_by_col_plus_eps(&mut self, numer: NodeId, denom: NodeId, eps: f64) -> Result<NodeId> {
        let (rows, cols) = self.dims2(numer, "div_by_col_plus_eps")?;
        let (dr, dc) = self.dims2(denom, "div_by_col_plus_eps divisor")?;
        if dr != rows || dc != 1 {
            return Err(Error::Dimension(format!(
                "divisor shape [{dr}, {dc}] does not match numerator rows {rows}"
            )));
        }
        let nv = &self.nodes[numer.0].values;
        let dv = &self.nodes[denom.0].values;
        let mut out = vec![0.0; rows * cols];
        for i in 0..rows {
            let d = dv[i] + eps;
            for j in 0..cols {
                out[i * cols + j] = nv[i * cols + j] / d;
            }
        }
        Ok(self.push(
            Op::DivByColPlusEps { numer, denom, eps, rows, cols },
            out,
            vec![rows, cols],
        ))
    }

    /// gate*on + (1-gate)*off, all same shape.
    pub fn gated_blend(&mut self, gate: NodeId, on: NodeId, off: NodeId) -> Result<NodeId> {
        self.check_same_shape(gate, on, "gated_blend")?;
        self.check_same_shape(gate, off, "gated_blend")?;
        let g = &self.nodes[gate.0].values;
        let a = &self.nodes[on.0].values;
        let b = &self.nodes[off.0].values;
        let values = (0..g.len())
            .map(|i| g[i] * a[i] + (1.0 - g[i]) * b[i])
            .collect();
        let shape = self.nodes[gate.0].shape.clone();
        Ok(self.push(Op::GatedBlend { gate, on, off }, values, shape))
    }

    // ---- linear layers ----

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, ka) = self.dims2(a, "matmul lhs")?;
        let (kb, n) = self.dims2(b, "matmul rhs")?;
        if ka != kb {
            return Err(Error::Dimension(format!(
                "matmul inner dims disagree: [{m}, {ka}] vs [{kb}, {n}]"
            )));
        }
        let mut out = vec![0.0; m * n];
        mm(&self.nodes[a.0].values, &self.nodes[b.0].values, m, ka, n, &mut out, false);
        Ok(self.push(Op::Matmul { a, b, m, k: ka, n }, out, vec![m, n]))
    }

    /// x[m,k] @ w[k,n] with an optional row-broadcast bias [n].
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let (m, kx) = self.dims2(x, "linear input")?;
        let (kw, n) = self.dims2(w, "linear weight")?;
        if kx != kw {
            return Err(Error::Dimension(format!(
                "linear shapes disagree: input [{m}, {kx}] vs weight [{kw}, {n}]"
            )));
        }
        if let Some(bias) = b {
            let blen = self.nodes[bias.0].values.len();
            if blen != n {
                return Err(Error::Dimension(format!(
                    "bias length {blen} does not match output width {n}"
                )));
            }
        }
        let mut out = vec![0.0; m * n];
        mm(&self.nodes[x.0].values, &self.nodes[w.0].values, m, kx, n, &mut out, false);
        if let Some(bias) = b {
            let bv = &self.nodes[bias.0].values;
            for i in 0..m {
                for j in 0..n {
                    out[i * n + j] += bv[j];
                }
            }
        }
        Ok(self.push(Op::Linear { x, w, b, m, k: kx, n }, out, vec![m, n]))
    }

    /// Row-wise normalization over channels, then scale/shift.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> Result<NodeId> {
        let (rows, cols) = self.dims2(x, "layer_norm")?;
        for (name, p) in [("gamma", gamma), ("beta", beta)] {
            let len = self.nodes[p.0].values.len();
            if len != cols {
                return Err(Error::Dimension(format!(
                    "layer_norm {name} length {len} does not match channel count {cols}"
                )));
            }
        }
        let xv = &self.nodes[x.0].values;
        if xv.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("layer_norm input contains non-finite values".into()));
        }
        let g = &self.nodes[gamma.0].values;
        let bt = &self.nodes[beta.0].values;
        let mut out = vec![0.0; rows * cols];
        let inv_d = 1.0 / cols as f64;
        for i in 0..rows {
            let row = &xv[i * cols..(i + 1) * cols];
            let mean = row.iter().sum::<f64>() * inv_d;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() * inv_d;
            let inv_std = 1.0 / (var + eps).sqrt();
            let orow = &mut out[i * cols..(i + 1) * cols];
            for j in 0..cols {
                orow[j] = g[j] * (row[j] - mean) * inv_std + bt[j];
            }
        }
        Ok(self.push(
            Op::LayerNorm { x, gamma, beta, eps, rows, cols },
            out,
            vec![rows, cols],
        ))
    }

    /// 3x3 cross-correlation, stride 1, zero padding, same spatial size.
    /// x is [h*w, cin]; kernel is [3,3,cin,cout]; bias [cout].
    pub fn conv3x3_same(
        &mut self,
        x: NodeId,
        kernel: NodeId,
        bias: Option<NodeId>,
        h: usize,
        w: usize,
    ) -> Result<NodeId> {
        let (rows, cin) = self.dims2(x, "conv3x3 input")?;
        if rows != h * w {
            return Err(Error::Dimension(format!(
                "conv3x3 input rows {rows} do not match grid {h}×{w}"
            )));
        }
        let kshape = self.nodes[kernel.0].shape.clone();
        let (kcin, cout) = match kshape.as_slice() {
            [3, 3, kcin, cout] => (*kcin, *cout),
            other => {
                return Err(Error::Dimension(format!(
                    "conv3x3 kernel must be [3,3,Cin,Cout], got {other:?}"
                )))
            }
        };
        if kcin != cin {
            return Err(Error::Dimension(format!(
                "conv3x3 channel mismatch: input Cin {cin} vs kernel Cin {kcin}"
            )));
        }
        if let Some(b) = bias {
            let blen = self.nodes[b.0].values.len();
            if blen != cout {
                return Err(Error::Dimension(format!(
                    "conv3x3 bias length {blen} does not match Cout {cout}"
                )));
            }
        }
        let mut out = vec![0.0; h * w * cout];
        if let Some(b) = bias {
            let bv = &self.nodes[b.0].values;
            for i in 0..h * w {
                out[i * cout..(i + 1) * cout].copy_from_slice(bv);
            }
        }
        let xv = &self.nodes[x.0].values;
        let kv = &self.nodes[kernel.0].values;
        for i in 0..h {
            for j in 0..w {
                let obase = (i * w + j) * cout;
                for di in 0..3usize {
                    let ii = i + di;
                    if ii < 1 || ii > h {
                        continue;
                    }
                    let ii = ii - 1;
                    for dj in 0..3usize {
                        let jj = j + dj;
                        if jj < 1 || jj > w {
                            continue;
                        }
                        let jj = jj - 1;
                        let xbase = (ii * w + jj) * cin;
                        let kbase = (di * 3 + dj) * cin * cout;
                        for ci in 0..cin {
                            let xval = xv[xbase + ci];
                            if xval == 0.0 {
                                continue;
                            }
                            let krow = &kv[kbase + ci * cout..kbase + (ci + 1) * cout];
                            let orow = &mut out[obase..obase + cout];
                            for (o, &k) in orow.iter_mut().zip(krow) {
                                *o += xval * k;
                            }
                        }
                    }
                }
            }
        }
        Ok(self.push(
            Op::Conv3x3 { x, kernel, bias, h, w, cin, cout },
            out,
            vec![h * w, cout],
        ))
    }

    // ---- spectral ops ----

    /// Per-channel 2-D DFT of a real field [h*w, c] -> packed [2*h*w, c]
    /// (real plane then imaginary plane, non-unitary forward).
    pub fn fft2(&mut self, x: NodeId, h: usize, w: usize) -> Result<NodeId> {
        let (rows, c) = self.dims2(x, "fft2")?;
        if rows != h * w {
            return Err(Error::Dimension(format!(
                "fft2 input rows {rows} do not match grid {h}×{w}"
            )));
        }
        let m = h * w;
        let mut re = self.nodes[x.0].values.clone();
        let mut im = vec![0.0; m * c];
        dft2_channels(&mut re, &mut im, h, w, c, false);
        let mut out = re;
        out.extend_from_slice(&im);
        Ok(self.push(Op::Fft2 { x, h, w, c }, out, vec![2 * m, c]))
    }

    /// Real part of the inverse DFT of a packed spectrum [2*h*w, c], with the
    /// 1/(h*w) factor. Any imaginary residual is discarded; gradients flow
    /// through the real-part projection.
    pub fn ifft2_real(&mut self, z: NodeId, h: usize, w: usize) -> Result<NodeId> {
        let (rows, c) = self.dims2(z, "ifft2_real")?;
        let m = h * w;
        if rows != 2 * m {
            return Err(Error::Dimension(format!(
                "ifft2_real input rows {rows} do not match packed spectrum of grid {h}×{w}"
            )));
        }
        let zv = &self.nodes[z.0].values;
        let mut re = zv[..m * c].to_vec();
        let mut im = zv[m * c..].to_vec();
        dft2_channels(&mut re, &mut im, h, w, c, true);
        let scale = 1.0 / m as f64;
        for v in &mut re {
            *v *= scale;
        }
        Ok(self.push(Op::Ifft2Real { z, h, w, c }, re, vec![m, c]))
    }

    /// One Haar level: [h*w, c] -> [(h/2)*(w/2), 4c], channel blocks ordered
    /// LL, LH, HL, HH.
    pub fn fwt_haar(&mut self, x: NodeId, h: usize, w: usize) -> Result<NodeId> {
        let (rows, c) = self.dims2(x, "fwt_haar")?;
        if rows != h * w {
            return Err(Error::Dimension(format!(
                "fwt_haar input rows {rows} do not match grid {h}×{w}"
            )));
        }
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::Dimension(format!(
                "fwt_haar requires even dims, got {h}×{w}"
            )));
        }
        let mut out = vec![0.0; (h / 2) * (w / 2) * 4 * c];
        fwt_stacked(&self.nodes[x.0].values, h, w, c, &mut out);
        Ok(self.push(
            Op::HaarFwt { x, h, w, c },
            out,
            vec![(h / 2) * (w / 2), 4 * c],
        ))
    }

    /// Inverse Haar level; (h, w) are the output dims.
    pub fn ifwt_haar(&mut self, s: NodeId, h: usize, w: usize) -> Result<NodeId> {
        let (rows, c4) = self.dims2(s, "ifwt_haar")?;
        if h % 2 != 0 || w % 2 != 0 || c4 % 4 != 0 || rows != (h / 2) * (w / 2) {
            return Err(Error::Dimension(format!(
                "ifwt_haar subband shape [{rows}, {c4}] does not match output grid {h}×{w}"
            )));
        }
        let c = c4 / 4;
        let mut out = vec![0.0; h * w * c];
        ifwt_stacked(&self.nodes[s.0].values, h, w, c, &mut out);
        Ok(self.push(Op::HaarIfwt { s, h, w, c }, out, vec![h * w, c]))
    }

    /// Complex-valued linear layer on a packed spectrum: z [2*m, din] times
    /// complex weight (wre + i*wim) [din, dout] plus an optional complex
    /// bias (re, im).
    pub fn complex_linear(
        &mut self,
        z: NodeId,
        wre: NodeId,
        wim: NodeId,
        bias: Option<(NodeId, NodeId)>,
    ) -> Result<NodeId> {
        let (rows, din) = self.dims2(z, "complex_linear input")?;
        if rows % 2 != 0 {
            return Err(Error::Dimension(
                "complex_linear input must pack real/imag planes (even rows)".into(),
            ));
        }
        let m = rows / 2;
        let (wr_in, dout) = self.dims2(wre, "complex_linear weight")?;
        let (wi_in, wi_out) = self.dims2(wim, "complex_linear weight")?;
        if wr_in != din || wi_in != din || wi_out != dout {
            return Err(Error::Dimension(format!(
                "complex_linear weights [{wr_in},{dout}]/[{wi_in},{wi_out}] do not match input width {din}"
            )));
        }
        if let Some((bre, bim)) = bias {
            for b in [bre, bim] {
                let blen = self.nodes[b.0].values.len();
                if blen != dout {
                    return Err(Error::Dimension(format!(
                        "complex_linear bias length {blen} does not match output width {dout}"
                    )));
                }
            }
        }
        let zv = &self.nodes[z.0].values;
        let (zr, zi) = zv.split_at(m * din);
        let wr = &self.nodes[wre.0].values;
        let wi = &self.nodes[wim.0].values;
        let mut out = vec![0.0; 2 * m * dout];
        {
            let (or_, oi) = out.split_at_mut(m * dout);
            // (zr + i zi)(wr + i wi) = (zr wr - zi wi) + i (zr wi + zi wr)
            mm(zr, wr, m, din, dout, or_, false);
            let mut tmp = vec![0.0; m * dout];
            mm(zi, wi, m, din, dout, &mut tmp, false);
            for (o, t) in or_.iter_mut().zip(&tmp) {
                *o -= t;
            }
            mm(zr, wi, m, din, dout, oi, false);
            mm(zi, wr, m, din, dout, oi, true);
        }
        if let Some((bre, bim)) = bias {
            let brv = &self.nodes[bre.0].values;
            let biv = &self.nodes[bim.0].values;
            for i in 0..m {
                for j in 0..dout {
                    out[i * dout + j] += brv[j];
                    out[(m + i) * dout + j] += biv[j];
                }
            }
        }
        Ok(self.push(
            Op::ComplexLinear { z, wre, wim, bias, m, din, dout },
            out,
            vec![2 * m, dout],
        ))
    }

    pub fn slice_cols(&mut self, x: NodeId, from: usize, to: usize) -> Result<NodeId> {
        let (rows, cols) = self.dims2(x, "slice_cols")?;
        if from >= to || to > cols {
            return Err(Error::Dimension(format!(
                "slice_cols range {from}..{to} invalid for width {cols}"
            )));
        }
        let width = to - from;
        let xv = &self.nodes[x.0].values;
        let mut out = vec![0.0; rows * width];
        for i in 0..rows {
            out[i * width..(i + 1) * width].copy_from_slice(&xv[i * cols + from..i * cols + to]);
        }
        Ok(self.push(
            Op::SliceCols { x, rows, cols, from, to },
            out,
            vec![rows, width],
        ))
    }

    pub fn concat_cols(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        if xs.is_empty() {
            return Err(Error::Dimension("concat_cols of zero inputs".into()));
        }
        let (rows, _) = self.dims2(xs[0], "concat_cols")?;
        let mut widths = Vec::with_capacity(xs.len());
        let mut total = 0usize;
        for &x in xs {
            let (r, c) = self.dims2(x, "concat_cols")?;
            if r != rows {
                return Err(Error::Dimension(format!(
                    "concat_cols row mismatch: {rows} vs {r}"
                )));
            }
            widths.push(c);
            total += c;
        }
        let mut out = vec![0.0; rows * total];
        let mut offset = 0usize;
        for (&x, &cw) in xs.iter().zip(&widths) {
            let xv = &self.nodes[x.0].values;
            for i in 0..rows {
                out[i * total + offset..i * total + offset + cw]
                    .copy_from_slice(&xv[i * cw..(i + 1) * cw]);
            }
            offset += cw;
        }
        let pairs = xs.iter().copied().zip(widths).collect();
        Ok(self.push(Op::ConcatCols { xs: pairs, rows }, out, vec![rows, total]))
    }

    // ---- backward ----

    /// Reverse sweep from a scalar root. Returns one gradient buffer per node.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        if self.nodes[root.0].values.len() != 1 {
            return Err(Error::Dimension(format!(
                "backward root must be scalar, got shape {:?}",
                self.nodes[root.0].shape
            )));
        }
        let mut grads: Vec<Vec<f64>> = self
            .nodes
            .iter()
            .map(|n| vec![0.0; n.values.len()])
            .collect();
        grads[root.0][0] = 1.0;

        for idx in (0..=root.0).rev() {
            // split off this node's grad so we can mutate upstream buffers
            let (before, rest) = grads.split_at_mut(idx);
            let g = &rest[0];
            if g.iter().all(|&v| v == 0.0) {
                continue;
            }
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Matmul { a, b, m, k, n } => {
                    let (av, bv) = (&self.nodes[a.0].values, &self.nodes[b.0].values);
                    // split_at_mut guarantees a.0, b.0 < idx by construction
                    mm_abt(g, bv, *m, *n, *k, &mut before[a.0], true);
                    mm_atb(av, g, *m, *k, *n, &mut before[b.0], true);
                }
                Op::Linear { x, w, b, m, k, n } => {
                    let (xv, wv) = (&self.nodes[x.0].values, &self.nodes[w.0].values);
                    mm_abt(g, wv, *m, *n, *k, &mut before[x.0], true);
                    mm_atb(xv, g, *m, *k, *n, &mut before[w.0], true);
                    if let Some(bias) = b {
                        let gb = &mut before[bias.0];
                        for i in 0..*m {
                            for j in 0..*n {
                                gb[j] += g[i * n + j];
                            }
                        }
                    }
                }
                Op::Add { a, b } => {
                    accumulate(&mut before[a.0], g);
                    accumulate(&mut before[b.0], g);
                }
                Op::Sub { a, b } => {
                    accumulate(&mut before[a.0], g);
                    for (ga, gv) in before[b.0].iter_mut().zip(g) {
                        *ga -= gv;
                    }
                }
                Op::Mul { a, b } => {
                    let (av, bv) = (&self.nodes[a.0].values, &self.nodes[b.0].values);
                    for i in 0..g.len() {
                        before[a.0][i] += g[i] * bv[i];
                    }
                    for i in 0..g.len() {
                        before[b.0][i] += g[i] * av[i];
                    }
                }
                Op::Scale { x, c } => {
                    for (gx, gv) in before[x.0].iter_mut().zip(g) {
                        *gx += c * gv;
                    }
                }
                Op::Sigmoid { x } => {
                    let y = &node.values;
                    for i in 0..g.len() {
                        before[x.0][i] += g[i] * y[i] * (1.0 - y[i]);
                    }
                }
                Op::Gelu { x } => {
                    let xv = &self.nodes[x.0].values;
                    for i in 0..g.len() {
                        before[x.0][i] += g[i] * gelu_grad(xv[i]);
                    }
                }
                Op::EluPlusOne { x } => {
                    let xv = &self.nodes[x.0].values;
                    let y = &node.values;
                    for i in 0..g.len() {
                        let d = if xv[i] >= 0.0 { 1.0 } else { y[i] };
                        before[x.0][i] += g[i] * d;
                    }
                }
                Op::Sqrt { x } => {
                    let y = &node.values;
                    for i in 0..g.len() {
                        before[x.0][i] += g[i] * 0.5 / y[i].max(1e-150);
                    }
                }
                Op::SumAll { x } => {
                    let gv = g[0];
                    for gx in before[x.0].iter_mut() {
                        *gx += gv;
                    }
                }
                Op::SumRows { x, rows, cols } => {
                    let gx = &mut before[x.0];
                    for i in 0..*rows {
                        for j in 0..*cols {
                            gx[i * cols + j] += g[j];
                        }
                    }
                }
                Op::Transpose { x, rows, cols } => {
                    let gx = &mut before[x.0];
                    for j in 0..*cols {
                        for i in 0..*rows {
                            gx[i * cols + j] += g[j * rows + i];
                        }
                    }
                }
                Op::DivByColPlusEps { numer, denom, eps, rows, cols } => {
                    let dv = &self.nodes[denom.0].values;
                    let out = &node.values;
                    {
                        let gn = &mut before[numer.0];
                        for i in 0..*rows {
                            let d = dv[i] + eps;
                            for j in 0..*cols {
                                gn[i * cols + j] += g[i * cols + j] / d;
                            }
                        }
                    }
                    let gd = &mut before[denom.0];
                    for i in 0..*rows {
                        let d = dv[i] + eps;
                        let mut s = 0.0;
                        for j in 0..*cols {
                            s += g[i * cols + j] * out[i * cols + j];
                        }
                        gd[i] -= s / d;
                    }
                }
                Op::GatedBlend { gate, on, off } => {
                    let gv = &self.nodes[gate.0].values;
                    let av = &self.nodes[on.0].values;
                    let bv = &self.nodes[off.0].values;
                    for i in 0..g.len() {
                        before[gate.0][i] += g[i] * (av[i] - bv[i]);
                    }
                    for i in 0..g.len() {
                        before[on.0][i] += g[i] * gv[i];
                    }
                    for i in 0..g.len() {
                        before[off.0][i] += g[i] * (1.0 - gv[i]);
                    }
                }
                Op::LayerNorm { x, gamma, beta, eps, rows, cols } => {
                    let xv = &self.nodes[x.0].values;
                    let gam = &self.nodes[gamma.0].values;
                    let inv_d = 1.0 / *cols as f64;
                    let mut xhat = vec![0.0; *cols];
                    let mut dxhat = vec![0.0; *cols];
                    for i in 0..*rows {
                        let row = &xv[i * cols..(i + 1) * cols];
                        let grow = &g[i * cols..(i + 1) * cols];
                        let mean = row.iter().sum::<f64>() * inv_d;
                        let var =
                            row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() * inv_d;
                        let inv_std = 1.0 / (var + eps).sqrt();
                        for j in 0..*cols {
                            xhat[j] = (row[j] - mean) * inv_std;
                            dxhat[j] = grow[j] * gam[j];
                        }
                        {
                            let ggam = &mut before[gamma.0];
                            for j in 0..*cols {
                                ggam[j] += grow[j] * xhat[j];
                            }
                        }
                        {
                            let gbeta = &mut before[beta.0];
                            for j in 0..*cols {
                                gbeta[j] += grow[j];
                            }
                        }
                        let mean_dx = dxhat.iter().sum::<f64>() * inv_d;
                        let mean_dxx =
                            dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() * inv_d;
                        let gx = &mut before[x.0];
                        for j in 0..*cols {
                            gx[i * cols + j] +=
                                inv_std * (dxhat[j] - mean_dx - xhat[j] * mean_dxx);
                        }
                    }
                }
                Op::Conv3x3 { x, kernel, bias, h, w, cin, cout } => {
                    let xv = &self.nodes[x.0].values;
                    let kv = &self.nodes[kernel.0].values;
                    if let Some(b) = bias {
                        let gb = &mut before[b.0];
                        for i in 0..h * w {
                            for co in 0..*cout {
                                gb[co] += g[i * cout + co];
                            }
                        }
                    }
                    for i in 0..*h {
                        for j in 0..*w {
                            let gbase = (i * w + j) * cout;
                            let grow = &g[gbase..gbase + cout];
                            for di in 0..3usize {
                                let ii = i + di;
                                if ii < 1 || ii > *h {
                                    continue;
                                }
                                let ii = ii - 1;
                                for dj in 0..3usize {
                                    let jj = j + dj;
                                    if jj < 1 || jj > *w {
                                        continue;
                                    }
                                    let jj = jj - 1;
                                    let xbase = (ii * w + jj) * cin;
                                    let kbase = (di * 3 + dj) * cin * cout;
                                    {
                                        let gk = &mut before[kernel.0];
                                        for ci in 0..*cin {
                                            let xval = xv[xbase + ci];
                                            if xval == 0.0 {
                                                continue;
                                            }
                                            let krow =
                                                &mut gk[kbase + ci * cout..kbase + (ci + 1) * cout];
                                            for (o, &gg) in krow.iter_mut().zip(grow) {
                                                *o += xval * gg;
                                            }
                                        }
                                    }
                                    let gx = &mut before[x.0];
                                    for ci in 0..*cin {
                                        let krow =
                                            &kv[kbase + ci * cout..kbase + (ci + 1) * cout];
                                        let dot: f64 =
                                            krow.iter().zip(grow).map(|(a, b)| a * b).sum();
                                        gx[xbase + ci] += dot;
                                    }
                                }
                            }
                        }
                    }
                }
                Op::Fft2 { x, h, w, c } => {
                    // adjoint of the unscaled forward DFT = unscaled inverse DFT
                    let m = h * w;
                    let mut tre = g[..m * c].to_vec();
                    let mut tim = g[m * c..].to_vec();
                    dft2_channels(&mut tre, &mut tim, *h, *w, *c, true);
                    accumulate(&mut before[x.0], &tre);
                }
                Op::Ifft2Real { z, h, w, c } => {
                    // adjoint of Re(idft)/N = forward DFT of the real grad, /N
                    let m = h * w;
                    let mut tre = g.to_vec();
                    let mut tim = vec![0.0; m * c];
                    dft2_channels(&mut tre, &mut tim, *h, *w, *c, false);
                    let scale = 1.0 / m as f64;
                    let gz = &mut before[z.0];
                    for i in 0..m * c {
                        gz[i] += tre[i] * scale;
                        gz[m * c + i] += tim[i] * scale;
                    }
                }
                Op::HaarFwt { x, h, w, c } => {
                    // orthonormal: adjoint = inverse
                    let mut t = vec![0.0; h * w * c];
                    ifwt_stacked(g, *h, *w, *c, &mut t);
                    accumulate(&mut before[x.0], &t);
                }
                Op::HaarIfwt { s, h, w, c } => {
                    let mut t = vec![0.0; (h / 2) * (w / 2) * 4 * c];
                    fwt_stacked(g, *h, *w, *c, &mut t);
                    accumulate(&mut before[s.0], &t);
                }
                Op::ComplexLinear { z, wre, wim, bias, m, din, dout } => {
                    let zv = &self.nodes[z.0].values;
                    let (zr, zi) = zv.split_at(m * din);
                    let wr = &self.nodes[wre.0].values;
                    let wi = &self.nodes[wim.0].values;
                    let (gr, gi) = g.split_at(m * dout);
                    {
                        let gz = &mut before[z.0];
                        let (gzr, gzi) = gz.split_at_mut(m * din);
                        // dZre = Gre Wre^T + Gim Wim^T ; dZim = -Gre Wim^T + Gim Wre^T
                        mm_abt(gr, wr, *m, *dout, *din, gzr, true);
                        mm_abt(gi, wi, *m, *dout, *din, gzr, true);
                        let mut tmp = vec![0.0; m * din];
                        mm_abt(gr, wi, *m, *dout, *din, &mut tmp, false);
                        for (o, t) in gzi.iter_mut().zip(&tmp) {
                            *o -= t;
                        }
                        mm_abt(gi, wr, *m, *dout, *din, gzi, true);
                    }
                    // dWre = Zre^T Gre + Zim^T Gim ; dWim = Zre^T Gim - Zim^T Gre
                    mm_atb(zr, gr, *m, *din, *dout, &mut before[wre.0], true);
                    mm_atb(zi, gi, *m, *din, *dout, &mut before[wre.0], true);
                    mm_atb(zr, gi, *m, *din, *dout, &mut before[wim.0], true);
                    {
                        let mut tmp = vec![0.0; din * dout];
                        mm_atb(zi, gr, *m, *din, *dout, &mut tmp, false);
                        for (o, t) in before[wim.0].iter_mut().zip(&tmp) {
                            *o -= t;
                        }
                    }
                    if let Some((bre, bim)) = bias {
                        {
                            let gb = &mut before[bre.0];
                            for i in 0..*m {
                                for j in 0..*dout {
                                    gb[j] += gr[i * dout + j];
                                }
                            }
                        }
                        let gb = &mut before[bim.0];
                        for i in 0..*m {
                            for j in 0..*dout {
                                gb[j] += gi[i * dout + j];
                            }
                        }
                    }
                }
                Op::SliceCols { x, rows, cols, from, to } => {
                    let width = to - from;
                    let gx = &mut before[x.0];
                    for i in 0..*rows {
                        for j in 0..width {
                            gx[i * cols + from + j] += g[i * width + j];
                        }
                    }
                }
                Op::ConcatCols { xs, rows } => {
                    let total: usize = xs.iter().map(|(_, w)| w).sum();
                    let mut offset = 0usize;
                    for (x, cw) in xs {
                        let gx = &mut before[x.0];
                        for i in 0..*rows {
                            for j in 0..*cw {
                                gx[i * cw + j] += g[i * total + offset + j];
                            }
                        }
                        offset += cw;
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

const GELU_C: f64 = 0.7978845608028654; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

fn gelu_val(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}
