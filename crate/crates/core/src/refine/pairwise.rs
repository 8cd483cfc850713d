use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Query (alpha), key (beta), value (gamma) projections `[d, a]` and the
/// output projection delta `[a, d]`. None carry a bias.
#[derive(Clone, Copy, Debug)]
pub struct PairwiseWeights<'a> {
    pub alpha: &'a Tensor,
    pub beta: &'a Tensor,
    pub gamma: &'a Tensor,
    pub delta: &'a Tensor,
}

/// Self-attention over the flattened ensemble with a residual connection.
///
/// `c` is `[B, L, S, d]`; returns the row-stochastic affinity matrices
/// `[B, LS, LS]` and the refined ensemble `C + delta(B gamma(C))`, shaped like
/// `c`.
pub fn pairwise_forward(c: &Tensor, w: &PairwiseWeights<'_>) -> Result<(Tensor, Tensor)> {
    if c.rank() != 4 {
        return Err(Error::shape("pairwise_refine", format!("ensemble batch must be rank 4, got {:?}", c.shape())));
    }
    let (b, l, s, d) = (c.shape()[0], c.shape()[1], c.shape()[2], c.shape()[3]);
    let a = w.alpha.shape().get(1).copied().unwrap_or(0);
    for (name, t, want) in [
        ("alpha", w.alpha, [d, a]),
        ("beta", w.beta, [d, a]),
        ("gamma", w.gamma, [d, a]),
        ("delta", w.delta, [a, d]),
    ] {
        if t.shape() != want {
            return Err(Error::shape(
                "pairwise_refine",
                format!("W_{name} is {:?}, expected {want:?}", t.shape()),
            ));
        }
    }
    let ls = l * s;
    let flat = c.reshape(&[b * ls, d])?;
    let q = flat.matmul(w.alpha)?.reshape(&[b, ls, a])?;
    let k = flat.matmul(w.beta)?.reshape(&[b, ls, a])?;
    let v = flat.matmul(w.gamma)?.reshape(&[b, ls, a])?;
    let att = q.bmm(&k.transpose()?)?.softmax_rows()?;
    let mixed = att.bmm(&v)?.reshape(&[b * ls, a])?.matmul(w.delta)?;
    let refined = flat.add(&mixed)?.reshape(c.shape())?;
    Ok((att, refined))
}
