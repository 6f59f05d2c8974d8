//! Plain-tensor entry points for the differentiable layers. Each wrapper
//! runs a throwaway tape; the model path builds tapes directly instead.

use crate::error::{Error, Result};
use crate::tape::{Activation, Binding, Tape};
use crate::tensor::{ParameterStore, Tensor};

pub(crate) fn grid_dims(x: &Tensor) -> Result<(usize, usize, usize)> {
    match x.shape.as_slice() {
        [h, w, c] => Ok((*h, *w, *c)),
        other => Err(Error::Dimension(format!(
            "expected a [H, W, C] field, got shape {other:?}"
        ))),
    }
}

pub(crate) fn token_dims(x: &Tensor) -> Result<(usize, usize)> {
    match x.shape.as_slice() {
        [n, d] => Ok((*n, *d)),
        other => Err(Error::Dimension(format!(
            "expected an [N, D] token matrix, got shape {other:?}"
        ))),
    }
}

pub fn linear_forward(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    let mut tape = Tape::new();
    let xid = tape.leaf_tensor(x);
    let wid = tape.leaf_tensor(w);
    let bid = b.map(|t| tape.leaf_tensor(t));
    let out = tape.linear(xid, wid, bid)?;
    Ok(tape.tensor(out))
}

pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    let mut tape = Tape::new();
    let xid = tape.leaf_tensor(x);
    let gid = tape.leaf_tensor(gamma);
    let bid = tape.leaf_tensor(beta);
    let out = tape.layer_norm(xid, gid, bid, eps)?;
    Ok(tape.tensor(out))
}

/// x is [H, W, Cin]; kernel [3, 3, Cin, Cout]; result [H, W, Cout].
pub fn conv3x3_same(x: &Tensor, kernel: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let (h, w, c) = grid_dims(x)?;
    let mut tape = Tape::new();
    let xid = tape.leaf(x.values.clone(), &[h * w, c]);
    let kid = tape.leaf_tensor(kernel);
    let bid = bias.map(|t| tape.leaf_tensor(t));
    let out = tape.conv3x3_same(xid, kid, bid, h, w)?;
    let cout = tape.shape(out)[1];
    Tensor::from_values(&[h, w, cout], tape.values(out).to_vec())
}

/// Two linear layers D -> hidden -> D with a pointwise nonlinearity between.
#[derive(Debug, Clone)]
pub struct MlpParams {
    prefix: String,
    pub d: usize,
    pub hidden: usize,
    pub activation: Activation,
}

impl MlpParams {
    pub fn init(
        store: &mut ParameterStore,
        prefix: &str,
        d: usize,
        ratio: usize,
        activation: Activation,
    ) -> Result<MlpParams> {
        if d == 0 || ratio == 0 {
            return Err(Error::Config(format!(
                "mlp needs positive width and expansion ratio, got d={d}, ratio={ratio}"
            )));
        }
        let hidden = ratio * d;
        store.init_uniform(&format!("{prefix}.w1"), &[d, hidden], d)?;
        store.init_zeros(&format!("{prefix}.b1"), &[hidden])?;
        store.init_uniform(&format!("{prefix}.w2"), &[hidden, d], hidden)?;
        store.init_zeros(&format!("{prefix}.b2"), &[d])?;
        Ok(MlpParams {
            prefix: prefix.to_string(),
            d,
            hidden,
            activation,
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
        x: crate::tape::NodeId,
    ) -> Result<crate::tape::NodeId> {
        let w1 = bind.leaf(tape, store, &self.path("w1"))?;
        let b1 = bind.leaf(tape, store, &self.path("b1"))?;
        let w2 = bind.leaf(tape, store, &self.path("w2"))?;
        let b2 = bind.leaf(tape, store, &self.path("b2"))?;
        let h1 = tape.linear(x, w1, Some(b1))?;
        let a = tape.activation(h1, self.activation);
        tape.linear(a, w2, Some(b2))
    }
}

pub fn mlp_forward(x: &Tensor, store: &ParameterStore, p: &MlpParams) -> Result<Tensor> {
    let mut tape = Tape::new();
    let mut bind = Binding::new();
    let xid = tape.leaf_tensor(x);
    let out = p.build(&mut tape, &mut bind, store, xid)?;
    Ok(tape.tensor(out))
}
