use super::kernels::{gemm, gemm_nt, gemm_tn};
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy)]
struct Geometry {
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

fn out_dim(size: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    (size + 2 * pad).checked_sub(k).map(|r| r / stride + 1)
}

fn im2col(x: &[f64], g: Geometry) -> Vec<f64> {
    let rows = g.cin * g.kh * g.kw;
    let cols = g.oh * g.ow;
    let mut out = vec![0.0; rows * cols];
    for c in 0..g.cin {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let r = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut out[r * cols..(r + 1) * cols];
                for oi in 0..g.oh {
                    let ii = (oi * g.stride + ki) as isize - g.pad as isize;
                    if ii < 0 || ii >= g.h as isize {
                        continue;
                    }
                    let src_row = &x[(c * g.h + ii as usize) * g.w..][..g.w];
                    for oj in 0..g.ow {
                        let jj = (oj * g.stride + kj) as isize - g.pad as isize;
                        if jj >= 0 && jj < g.w as isize {
                            dst[oi * g.ow + oj] = src_row[jj as usize];
                        }
                    }
                }
            }
        }
    }
    out
}

fn col2im(cols_buf: &[f64], g: Geometry, dx: &mut [f64]) {
    let cols = g.oh * g.ow;
    for c in 0..g.cin {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let r = (c * g.kh + ki) * g.kw + kj;
                let src = &cols_buf[r * cols..(r + 1) * cols];
                for oi in 0..g.oh {
                    let ii = (oi * g.stride + ki) as isize - g.pad as isize;
                    if ii < 0 || ii >= g.h as isize {
                        continue;
                    }
                    let dst_row = &mut dx[(c * g.h + ii as usize) * g.w..][..g.w];
                    for oj in 0..g.ow {
                        let jj = (oj * g.stride + kj) as isize - g.pad as isize;
                        if jj >= 0 && jj < g.w as isize {
                            dst_row[jj as usize] += src[oi * g.ow + oj];
                        }
                    }
                }
            }
        }
    }
}

impl Tensor {
    /// 2-D cross-correlation of [N,Cin,H,W] with [Cout,Cin,kh,kw], no bias.
    pub fn conv2d(&self, weight: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
        if self.rank() != 4 || weight.rank() != 4 {
            return Err(Error::shape(
                "conv2d",
                format!("input {:?} and weight {:?} must be rank 4", self.shape(), weight.shape()),
            ));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("conv2d stride must be >= 1".into()));
        }
        let (n, cin, h, w) = (self.shape()[0], self.shape()[1], self.shape()[2], self.shape()[3]);
        let (cout, wcin, kh, kw) = (
            weight.shape()[0],
            weight.shape()[1],
            weight.shape()[2],
            weight.shape()[3],
        );
        if cin != wcin {
            return Err(Error::shape(
                "conv2d",
                format!("input has {cin} channels but weight expects {wcin}"),
            ));
        }
        let (Some(oh), Some(ow)) = (out_dim(h, kh, stride, padding), out_dim(w, kw, stride, padding))
        else {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {kh}x{kw} larger than padded input {h}x{w}"),
            ));
        };
        let g = Geometry {
            cin,
            h,
            w,
            kh,
            kw,
            stride,
            pad: padding,
            oh,
            ow,
        };
        let ck = cin * kh * kw;
        let plane = oh * ow;
        let keep_cols = self.requires_grad() || weight.requires_grad();
        let mut all_cols = Vec::new();
        let mut out = vec![0.0; n * cout * plane];
        for b in 0..n {
            let cols = im2col(&self.data()[b * cin * h * w..(b + 1) * cin * h * w], g);
            gemm(
                weight.data(),
                &cols,
                &mut out[b * cout * plane..(b + 1) * cout * plane],
                cout,
                ck,
                plane,
            );
            if keep_cols {
                all_cols.push(cols);
            }
        }
        let (x, wt) = (self.clone(), weight.clone());
        Tensor::from_op(
            "conv2d",
            out,
            vec![n, cout, oh, ow],
            vec![self.clone(), weight.clone()],
            move |gy| {
                let gw = wt.requires_grad().then(|| {
                    let mut gw = vec![0.0; cout * ck];
                    for (b, cols) in all_cols.iter().enumerate() {
                        gemm_nt(&gy[b * cout * plane..(b + 1) * cout * plane], cols, &mut gw, cout, plane, ck);
                    }
                    gw
                });
                let gx = x.requires_grad().then(|| {
                    let mut gx = vec![0.0; n * cin * h * w];
                    let mut dcols = vec![0.0; ck * plane];
                    for b in 0..n {
                        dcols.iter_mut().for_each(|v| *v = 0.0);
                        gemm_tn(
                            wt.data(),
                            &gy[b * cout * plane..(b + 1) * cout * plane],
                            &mut dcols,
                            ck,
                            cout,
                            plane,
                        );
                        col2im(&dcols, g, &mut gx[b * cin * h * w..(b + 1) * cin * h * w]);
                    }
                    gx
                });
                vec![gx, gw]
            },
        )
    }

    /// Max pooling over [N,C,H,W]; padded cells never win.
    pub fn max_pool2d(&self, kernel: usize, stride: usize, padding: usize) -> Result<Tensor> {
        if self.rank() != 4 || kernel == 0 || stride == 0 {
            return Err(Error::shape("max_pool2d", format!("bad input {:?}", self.shape())));
        }
        let (n, c, h, w) = (self.shape()[0], self.shape()[1], self.shape()[2], self.shape()[3]);
        let (Some(oh), Some(ow)) = (out_dim(h, kernel, stride, padding), out_dim(w, kernel, stride, padding))
        else {
            return Err(Error::shape("max_pool2d", "kernel larger than padded input"));
        };
        let x = self.data();
        let mut out = vec![0.0; n * c * oh * ow];
        let mut argmax = vec![0usize; out.len()];
        for nc in 0..n * c {
            let base = nc * h * w;
            for oi in 0..oh {
                for oj in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = usize::MAX;
                    for ki in 0..kernel {
                        let ii = (oi * stride + ki) as isize - padding as isize;
                        if ii < 0 || ii >= h as isize {
                            continue;
                        }
                        for kj in 0..kernel {
                            let jj = (oj * stride + kj) as isize - padding as isize;
                            if jj < 0 || jj >= w as isize {
                                continue;
                            }
                            let k = base + ii as usize * w + jj as usize;
                            if x[k] > best {
                                best = x[k];
                                best_idx = k;
                            }
                        }
                    }
                    if best_idx == usize::MAX {
                        return Err(Error::shape("max_pool2d", "window entirely in padding"));
                    }
                    let o = (nc * oh + oi) * ow + oj;
                    out[o] = best;
                    argmax[o] = best_idx;
                }
            }
        }
        let len = self.numel();
        Tensor::from_op("max_pool2d", out, vec![n, c, oh, ow], vec![self.clone()], move |gy| {
            let mut gx = vec![0.0; len];
            for (o, &k) in argmax.iter().enumerate() {
                gx[k] += gy[o];
            }
            vec![Some(gx)]
        })
    }

    /// [N,C,H,W] -> [N,C] spatial mean.
    pub fn global_average_pool(&self) -> Result<Tensor> {
        if self.rank() != 4 {
            return Err(Error::shape("global_average_pool", "input must be [N,C,H,W]"));
        }
        let (n, c) = (self.shape()[0], self.shape()[1]);
        let plane = self.shape()[2] * self.shape()[3];
        let out: Vec<f64> = self
            .data()
            .chunks(plane)
            .map(|p| p.iter().sum::<f64>() / plane as f64)
            .collect();
        Tensor::from_op("global_average_pool", out, vec![n, c], vec![self.clone()], move |gy| {
            let mut gx = Vec::with_capacity(n * c * plane);
            for g in gy {
                gx.extend(std::iter::repeat(g / plane as f64).take(plane));
            }
            vec![Some(gx)]
        })
    }
}
