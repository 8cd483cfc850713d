use super::kernels::{gemm, gemm_nt, gemm_tn};
use super::{numel, Tensor};
use crate::error::{Error, Result};

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("operands have shapes {:?} and {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

/// (outer, dim, inner) split of a shape around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("add", self, other)?;
        let data = self.data().iter().zip(other.data()).map(|(a, b)| a + b).collect();
        Tensor::from_op(
            "add",
            data,
            self.shape().to_vec(),
            vec![self.clone(), other.clone()],
            |g| vec![Some(g.to_vec()), Some(g.to_vec())],
        )
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("sub", self, other)?;
        let data = self.data().iter().zip(other.data()).map(|(a, b)| a - b).collect();
        Tensor::from_op(
            "sub",
            data,
            self.shape().to_vec(),
            vec![self.clone(), other.clone()],
            |g| vec![Some(g.to_vec()), Some(g.iter().map(|v| -v).collect())],
        )
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("mul", self, other)?;
        let data = self.data().iter().zip(other.data()).map(|(a, b)| a * b).collect();
        let (a, b) = (self.clone(), other.clone());
        Tensor::from_op(
            "mul",
            data,
            self.shape().to_vec(),
            vec![self.clone(), other.clone()],
            move |g| {
                let ga = g.iter().zip(b.data()).map(|(g, b)| g * b).collect();
                let gb = g.iter().zip(a.data()).map(|(g, a)| g * a).collect();
                vec![Some(ga), Some(gb)]
            },
        )
    }

    pub fn scale(&self, s: f64) -> Result<Tensor> {
        let data = self.data().iter().map(|v| v * s).collect();
        Tensor::from_op("scale", data, self.shape().to_vec(), vec![self.clone()], move |g| {
            vec![Some(g.iter().map(|v| v * s).collect())]
        })
    }

    /// Adds a vector along the last axis (bias broadcast over all rows).
    pub fn add_bias(&self, bias: &Tensor) -> Result<Tensor> {
        let n = *self.shape().last().unwrap();
        if bias.numel() != n {
            return Err(Error::shape(
                "add_bias",
                format!("bias of {} values for last axis {}", bias.numel(), n),
            ));
        }
        let mut data = self.to_vec();
        for row in data.chunks_mut(n) {
            for (v, b) in row.iter_mut().zip(bias.data()) {
                *v += b;
            }
        }
        Tensor::from_op(
            "add_bias",
            data,
            self.shape().to_vec(),
            vec![self.clone(), bias.clone()],
            move |g| {
                let mut gb = vec![0.0; n];
                for row in g.chunks(n) {
                    for (a, v) in gb.iter_mut().zip(row) {
                        *a += v;
                    }
                }
                vec![Some(g.to_vec()), Some(gb)]
            },
        )
    }

    pub fn relu(&self) -> Result<Tensor> {
        let data = self.data().iter().map(|v| v.max(0.0)).collect();
        let x = self.clone();
        Tensor::from_op("relu", data, self.shape().to_vec(), vec![self.clone()], move |g| {
            let gx = g
                .iter()
                .zip(x.data())
                .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                .collect();
            vec![Some(gx)]
        })
    }

    pub fn sigmoid(&self) -> Result<Tensor> {
        let data: Vec<f64> = self.data().iter().map(|&v| sigmoid(v)).collect();
        let y = data.clone();
        Tensor::from_op("sigmoid", data, self.shape().to_vec(), vec![self.clone()], move |g| {
            vec![Some(g.iter().zip(&y).map(|(g, y)| g * y * (1.0 - y)).collect())]
        })
    }

    pub fn tanh(&self) -> Result<Tensor> {
        let data: Vec<f64> = self.data().iter().map(|v| v.tanh()).collect();
        let y = data.clone();
        Tensor::from_op("tanh", data, self.shape().to_vec(), vec![self.clone()], move |g| {
            vec![Some(g.iter().zip(&y).map(|(g, y)| g * (1.0 - y * y)).collect())]
        })
    }

    pub fn sum(&self) -> Result<Tensor> {
        let total = self.data().iter().sum();
        let n = self.numel();
        Tensor::from_op("sum", vec![total], vec![1], vec![self.clone()], move |g| {
            vec![Some(vec![g[0]; n])]
        })
    }

    pub fn mean(&self) -> Result<Tensor> {
        let n = self.numel() as f64;
        self.sum()?.scale(1.0 / n)
    }

    /// [M,K] x [K,N] -> [M,N]
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || other.rank() != 2 || self.shape()[1] != other.shape()[0] {
            return Err(Error::shape(
                "matmul",
                format!("cannot multiply {:?} by {:?}", self.shape(), other.shape()),
            ));
        }
        let (m, k, n) = (self.shape()[0], self.shape()[1], other.shape()[1]);
        let mut out = vec![0.0; m * n];
        gemm(self.data(), other.data(), &mut out, m, k, n);
        let (a, b) = (self.clone(), other.clone());
        Tensor::from_op("matmul", out, vec![m, n], vec![a.clone(), b.clone()], move |g| {
            let ga = a.requires_grad().then(|| {
                let mut ga = vec![0.0; m * k];
                gemm_nt(g, b.data(), &mut ga, m, n, k);
                ga
            });
            let gb = b.requires_grad().then(|| {
                let mut gb = vec![0.0; k * n];
                gemm_tn(a.data(), g, &mut gb, k, m, n);
                gb
            });
            vec![ga, gb]
        })
    }

    /// Batched matmul: [B,M,K] x [B,K,N] -> [B,M,N]
    pub fn bmm(&self, other: &Tensor) -> Result<Tensor> {
        if self.rank() != 3
            || other.rank() != 3
            || self.shape()[0] != other.shape()[0]
            || self.shape()[2] != other.shape()[1]
        {
            return Err(Error::shape(
                "bmm",
                format!("cannot batch-multiply {:?} by {:?}", self.shape(), other.shape()),
            ));
        }
        let (bs, m, k, n) = (self.shape()[0], self.shape()[1], self.shape()[2], other.shape()[2]);
        let mut out = vec![0.0; bs * m * n];
        for b in 0..bs {
            gemm(
                &self.data()[b * m * k..(b + 1) * m * k],
                &other.data()[b * k * n..(b + 1) * k * n],
                &mut out[b * m * n..(b + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let (a, bt) = (self.clone(), other.clone());
        Tensor::from_op("bmm", out, vec![bs, m, n], vec![a.clone(), bt.clone()], move |g| {
            let ga = a.requires_grad().then(|| {
                let mut ga = vec![0.0; bs * m * k];
                for b in 0..bs {
                    gemm_nt(
                        &g[b * m * n..(b + 1) * m * n],
                        &bt.data()[b * k * n..(b + 1) * k * n],
                        &mut ga[b * m * k..(b + 1) * m * k],
                        m,
                        n,
                        k,
                    );
                }
                ga
            });
            let gb = bt.requires_grad().then(|| {
                let mut gb = vec![0.0; bs * k * n];
                for b in 0..bs {
                    gemm_tn(
                        &a.data()[b * m * k..(b + 1) * m * k],
                        &g[b * m * n..(b + 1) * m * n],
                        &mut gb[b * k * n..(b + 1) * k * n],
                        k,
                        m,
                        n,
                    );
                }
                gb
            });
            vec![ga, gb]
        })
    }

    /// Swaps the last two axes.
    pub fn transpose(&self) -> Result<Tensor> {
        if self.rank() < 2 {
            return Err(Error::shape("transpose", "needs rank >= 2"));
        }
        let r = self.rank();
        let (rows, cols) = (self.shape()[r - 2], self.shape()[r - 1]);
        let batch = self.numel() / (rows * cols);
        let mut shape = self.shape().to_vec();
        shape.swap(r - 2, r - 1);
        let swap = move |x: &[f64], rows: usize, cols: usize| {
            let mut out = vec![0.0; x.len()];
            for b in 0..batch {
                let src = &x[b * rows * cols..(b + 1) * rows * cols];
                let dst = &mut out[b * rows * cols..(b + 1) * rows * cols];
                for i in 0..rows {
                    for j in 0..cols {
                        dst[j * rows + i] = src[i * cols + j];
                    }
                }
            }
            out
        };
        let data = swap(self.data(), rows, cols);
        Tensor::from_op("transpose", data, shape, vec![self.clone()], move |g| {
            vec![Some(swap(g, cols, rows))]
        })
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if shape.is_empty() || shape.contains(&0) || numel(shape) != self.numel() {
            return Err(Error::shape(
                "reshape",
                format!("cannot view {:?} as {:?}", self.shape(), shape),
            ));
        }
        Tensor::from_op("reshape", self.to_vec(), shape.to_vec(), vec![self.clone()], |g| {
            vec![Some(g.to_vec())]
        })
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(parts: &[Tensor], axis: usize) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat", "no tensors given"))?;
        let rank = first.rank();
        if axis >= rank {
            return Err(Error::shape("concat", format!("axis {axis} out of range for rank {rank}")));
        }
        for p in parts {
            let ok = p.rank() == rank
                && p.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(Error::shape(
                    "concat",
                    format!("{:?} incompatible with {:?} on axis {axis}", p.shape(), first.shape()),
                ));
            }
        }
        let (outer, _, inner) = split_axis(first.shape(), axis);
        let dims: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let total: usize = dims.iter().sum();
        let mut shape = first.shape().to_vec();
        shape[axis] = total;
        let mut data = vec![0.0; outer * total * inner];
        let mut offset = 0;
        for (p, &d) in parts.iter().zip(&dims) {
            for o in 0..outer {
                let src = &p.data()[o * d * inner..(o + 1) * d * inner];
                let start = (o * total + offset) * inner;
                data[start..start + d * inner].copy_from_slice(src);
            }
            offset += d;
        }
        Tensor::from_op("concat", data, shape, parts.to_vec(), move |g| {
            let mut grads = Vec::with_capacity(dims.len());
            let mut offset = 0;
            for &d in &dims {
                let mut gp = vec![0.0; outer * d * inner];
                for o in 0..outer {
                    let start = (o * total + offset) * inner;
                    gp[o * d * inner..(o + 1) * d * inner]
                        .copy_from_slice(&g[start..start + d * inner]);
                }
                offset += d;
                grads.push(Some(gp));
            }
            grads
        })
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        if axis >= self.rank() || len == 0 || start + len > self.shape()[axis] {
            return Err(Error::shape(
                "narrow",
                format!("range {start}..{} on axis {axis} of {:?}", start + len, self.shape()),
            ));
        }
        let (outer, dim, inner) = split_axis(self.shape(), axis);
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let s = (o * dim + start) * inner;
            data.extend_from_slice(&self.data()[s..s + len * inner]);
        }
        let n = self.numel();
        Tensor::from_op("narrow", data, shape, vec![self.clone()], move |g| {
            let mut gx = vec![0.0; n];
            for o in 0..outer {
                let s = (o * dim + start) * inner;
                gx[s..s + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(gx)]
        })
    }

    /// Gathers rows of a 2-D tensor; repeated indices accumulate gradient.
    pub fn index_rows(&self, rows: &[usize]) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(Error::shape("index_rows", "needs a 2-D tensor"));
        }
        let (m, n) = (self.shape()[0], self.shape()[1]);
        if rows.is_empty() || rows.iter().any(|&r| r >= m) {
            return Err(Error::shape("index_rows", format!("row index out of range 0..{m}")));
        }
        let mut data = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            data.extend_from_slice(&self.data()[r * n..(r + 1) * n]);
        }
        let rows = rows.to_vec();
        Tensor::from_op("index_rows", data, vec![rows.len(), n], vec![self.clone()], move |g| {
            let mut gx = vec![0.0; m * n];
            for (i, &r) in rows.iter().enumerate() {
                for (a, b) in gx[r * n..(r + 1) * n].iter_mut().zip(&g[i * n..(i + 1) * n]) {
                    *a += b;
                }
            }
            vec![Some(gx)]
        })
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
