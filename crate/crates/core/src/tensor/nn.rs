use super::Tensor;
use crate::error::{Error, Result};

/// Normalization statistics source for [`Tensor::batch_norm`].
#[derive(Clone, Copy, Debug)]
pub enum BatchNormMode<'a> {
    /// Normalize with the batch's own statistics.
    Train,
    /// Normalize with stored running statistics.
    Eval { mean: &'a [f64], var: &'a [f64] },
}

/// Per-channel statistics observed in a training-mode batch norm.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased variance, used for running estimates.
    pub var: Vec<f64>,
}

impl Tensor {
    /// Softmax over the last axis with max-subtraction.
    pub fn softmax_rows(&self) -> Result<Tensor> {
        let n = *self.shape().last().unwrap();
        let mut out = self.to_vec();
        for row in out.chunks_mut(n) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        let y = out.clone();
        Tensor::from_op("softmax_rows", out, self.shape().to_vec(), vec![self.clone()], move |g| {
            let mut gx = vec![0.0; g.len()];
            for ((gr, yr), xr) in g.chunks(n).zip(y.chunks(n)).zip(gx.chunks_mut(n)) {
                let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                for ((x, gv), yv) in xr.iter_mut().zip(gr).zip(yr) {
                    *x = yv * (gv - dot);
                }
            }
            vec![Some(gx)]
        })
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax_rows(&self) -> Result<Tensor> {
        let n = *self.shape().last().unwrap();
        let mut out = self.to_vec();
        for row in out.chunks_mut(n) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let y = out.clone();
        Tensor::from_op("log_softmax_rows", out, self.shape().to_vec(), vec![self.clone()], move |g| {
            let mut gx = vec![0.0; g.len()];
            for ((gr, yr), xr) in g.chunks(n).zip(y.chunks(n)).zip(gx.chunks_mut(n)) {
                let total: f64 = gr.iter().sum();
                for ((x, gv), yv) in xr.iter_mut().zip(gr).zip(yr) {
                    *x = gv - yv.exp() * total;
                }
            }
            vec![Some(gx)]
        })
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `self` (shape [N, C]).
    pub fn cross_entropy_with_logits(&self, targets: &[usize]) -> Result<Tensor> {
        if self.rank() != 2 || self.shape()[0] != targets.len() {
            return Err(Error::shape(
                "cross_entropy_with_logits",
                format!("logits {:?} for {} targets", self.shape(), targets.len()),
            ));
        }
        let c = self.shape()[1];
        if let Some(bad) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::InvalidArgument(format!("class {bad} out of range 0..{c}")));
        }
        let logp = self.log_softmax_rows()?;
        let n = targets.len();
        let loss = -targets
            .iter()
            .enumerate()
            .map(|(i, &t)| logp.data()[i * c + t])
            .sum::<f64>()
            / n as f64;
        let targets = targets.to_vec();
        Tensor::from_op("cross_entropy", vec![loss], vec![1], vec![logp], move |g| {
            let mut gl = vec![0.0; n * c];
            for (i, &t) in targets.iter().enumerate() {
                gl[i * c + t] = -g[0] / n as f64;
            }
            vec![Some(gl)]
        })
    }

    /// Batch normalization over axis 1 of an [N, C, ...] tensor.
    ///
    /// Returns the normalized output and, in training mode, the batch
    /// statistics so the caller can update running estimates.
    pub fn batch_norm(
        &self,
        gamma: &Tensor,
        beta: &Tensor,
        mode: BatchNormMode<'_>,
        eps: f64,
    ) -> Result<(Tensor, Option<BatchStats>)> {
        if self.rank() < 2 {
            return Err(Error::shape("batch_norm", "input needs shape [N, C, ...]"));
        }
        let n = self.shape()[0];
        let c = self.shape()[1];
        let inner: usize = self.shape()[2..].iter().product();
        if gamma.numel() != c || beta.numel() != c {
            return Err(Error::shape(
                "batch_norm",
                format!("{c} channels but affine params of {} and {}", gamma.numel(), beta.numel()),
            ));
        }
        let count = (n * inner) as f64;
        let x = self.data();
        let idx = move |b: usize, ch: usize, i: usize| (b * c + ch) * inner + i;

        let (mean, var_biased, stats) = match mode {
            BatchNormMode::Train => {
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for ch in 0..c {
                    let mut s = 0.0;
                    for b in 0..n {
                        for i in 0..inner {
                            s += x[idx(b, ch, i)];
                        }
                    }
                    let m = s / count;
                    let mut v = 0.0;
                    for b in 0..n {
                        for i in 0..inner {
                            let d = x[idx(b, ch, i)] - m;
                            v += d * d;
                        }
                    }
                    mean[ch] = m;
                    var[ch] = v / count;
                }
                let unbiased = if count > 1.0 {
                    var.iter().map(|v| v * count / (count - 1.0)).collect()
                } else {
                    var.clone()
                };
                let stats = BatchStats {
                    mean: mean.clone(),
                    var: unbiased,
                };
                (mean, var, Some(stats))
            }
            BatchNormMode::Eval { mean, var } => {
                if mean.len() != c || var.len() != c {
                    return Err(Error::shape("batch_norm", "running statistics size mismatch"));
                }
                (mean.to_vec(), var.to_vec(), None)
            }
        };
        let train = stats.is_some();
        let inv_std: Vec<f64> = var_biased.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = vec![0.0; x.len()];
        let mut out = vec![0.0; x.len()];
        for b in 0..n {
            for ch in 0..c {
                let (g, be) = (gamma.data()[ch], beta.data()[ch]);
                for i in 0..inner {
                    let k = idx(b, ch, i);
                    xhat[k] = (x[k] - mean[ch]) * inv_std[ch];
                    out[k] = g * xhat[k] + be;
                }
            }
        }
        let gamma_c = gamma.clone();
        let y = Tensor::from_op(
            "batch_norm",
            out,
            self.shape().to_vec(),
            vec![self.clone(), gamma.clone(), beta.clone()],
            move |gy| {
                let mut gx = vec![0.0; gy.len()];
                let mut ggamma = vec![0.0; c];
                let mut gbeta = vec![0.0; c];
                for ch in 0..c {
                    let g = gamma_c.data()[ch];
                    let mut sum_dy = 0.0;
                    let mut sum_dy_xhat = 0.0;
                    for b in 0..n {
                        for i in 0..inner {
                            let k = idx(b, ch, i);
                            sum_dy += gy[k];
                            sum_dy_xhat += gy[k] * xhat[k];
                        }
                    }
                    ggamma[ch] = sum_dy_xhat;
                    gbeta[ch] = sum_dy;
                    for b in 0..n {
                        for i in 0..inner {
                            let k = idx(b, ch, i);
                            gx[k] = if train {
                                g * inv_std[ch] / count
                                    * (count * gy[k] - sum_dy - xhat[k] * sum_dy_xhat)
                            } else {
                                g * inv_std[ch] * gy[k]
                            };
                        }
                    }
                }
                vec![Some(gx), Some(ggamma), Some(gbeta)]
            },
        )?;
        Ok((y, stats))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let x = Tensor::new(vec![0.0; 3], &[1, 3]).unwrap();
        for v in x.softmax_rows().unwrap().data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_survives_large_logits() {
        let x = Tensor::new(vec![1000.0, 1000.0], &[1, 2]).unwrap();
        assert_eq!(x.softmax_rows().unwrap().data(), &[0.5, 0.5]);
    }

    #[test]
    fn cross_entropy_of_uniform_logits_is_ln2() {
        let x = Tensor::new(vec![0.3, 0.3], &[1, 2]).unwrap();
        let l = x.cross_entropy_with_logits(&[1]).unwrap();
        assert!((l.item() - 2f64.ln()).abs() < 1e-15);
        assert!(x.cross_entropy_with_logits(&[2]).is_err());
    }

    #[test]
    fn batch_norm_train_output_is_standardized() {
        let x = Tensor::new(vec![1.0, 10.0, 3.0, 20.0, 5.0, 30.0], &[3, 2]).unwrap();
        let gamma = Tensor::full(&[2], 1.0);
        let beta = Tensor::zeros(&[2]);
        let (y, stats) = x.batch_norm(&gamma, &beta, BatchNormMode::Train, 0.0).unwrap();
        let stats = stats.unwrap();
        assert_eq!(stats.mean, vec![3.0, 20.0]);
        assert!((stats.var[0] - 4.0).abs() < 1e-12);
        let col0: Vec<f64> = y.data().iter().step_by(2).copied().collect();
        assert!(col0.iter().sum::<f64>().abs() < 1e-12);
        let var0: f64 = col0.iter().map(|v| v * v).sum::<f64>() / 3.0;
        assert!((var0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn batch_norm_eval_uses_running_stats() {
        let x = Tensor::new(vec![2.0, 4.0], &[2, 1]).unwrap();
        let gamma = Tensor::full(&[1], 2.0);
        let beta = Tensor::full(&[1], 1.0);
        let mode = BatchNormMode::Eval {
            mean: &[1.0],
            var: &[4.0],
        };
        let (y, stats) = x.batch_norm(&gamma, &beta, mode, 0.0).unwrap();
        assert!(stats.is_none());
        assert_eq!(y.data(), &[2.0, 4.0]);
    }
}
