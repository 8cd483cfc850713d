use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Input weights `[d, 4h]`, recurrent weights `[h, 4h]` and bias `[4h]`,
/// gates ordered input, forget, cell, output.
#[derive(Clone, Copy, Debug)]
pub struct LstmWeights<'a> {
    pub w_ih: &'a Tensor,
    pub w_hh: &'a Tensor,
    pub bias: &'a Tensor,
}

/// Single-layer uni-directional LSTM from zero state over `x: [B, T, d]`.
/// Runs the first `steps` positions and returns their hidden states
/// `[B, steps, h]`.
pub fn lstm_forward(x: &Tensor, w: &LstmWeights<'_>, steps: usize) -> Result<Tensor> {
    if x.rank() != 3 {
        return Err(Error::shape("temporal_refine", format!("sequence batch must be [B, T, d], got {:?}", x.shape())));
    }
    let (b, t, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let h = w.w_hh.shape()[0];
    if w.w_ih.shape() != [d, 4 * h] || w.w_hh.shape() != [h, 4 * h] || w.bias.shape() != [4 * h] {
        return Err(Error::shape(
            "temporal_refine",
            format!(
                "LSTM weights {:?}/{:?}/{:?} do not fit input size {d}",
                w.w_ih.shape(),
                w.w_hh.shape(),
                w.bias.shape()
            ),
        ));
    }
    if steps == 0 || steps > t {
        return Err(Error::InvalidArgument(format!("cannot run {steps} LSTM steps over a length-{t} sequence")));
    }
    let xs = x
        .narrow(1, 0, steps)?
        .reshape(&[b * steps, d])?
        .matmul(w.w_ih)?
        .add_bias(w.bias)?
        .reshape(&[b, steps, 4 * h])?;
    let mut hidden: Option<Tensor> = None;
    let mut cell: Option<Tensor> = None;
    let mut outputs = Vec::with_capacity(steps);
    for step in 0..steps {
        let mut z = xs.narrow(1, step, 1)?.reshape(&[b, 4 * h])?;
        if let Some(hp) = &hidden {
            z = z.add(&hp.matmul(w.w_hh)?)?;
        }
        let i = z.narrow(1, 0, h)?.sigmoid()?;
        let f = z.narrow(1, h, h)?.sigmoid()?;
        let g = z.narrow(1, 2 * h, h)?.tanh()?;
        let o = z.narrow(1, 3 * h, h)?.sigmoid()?;
        let ig = i.mul(&g)?;
        let c = match &cell {
            Some(cp) => f.mul(cp)?.add(&ig)?,
            None => ig,
        };
        let hn = o.mul(&c.tanh()?)?;
        outputs.push(hn.reshape(&[b, 1, h])?);
        hidden = Some(hn);
        cell = Some(c);
    }
    Tensor::concat(&outputs, 1)
}
