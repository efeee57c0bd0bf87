//! 3×3 same-padded convolution, stride 1.

use nalgebra::{DMatrix, DMatrixView, DMatrixViewMut};
use serde::{Deserialize, Serialize};

use super::tensor::{ParamLayout, Slot, Tensor};
use crate::error::{Error, Result};

pub const KERNEL: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv2d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub weight: Slot,
    pub bias: Slot,
}

impl Conv2d {
    pub fn new(layout: &mut ParamLayout, name: &str, in_ch: usize, out_ch: usize) -> Self {
        Self {
            in_ch,
            out_ch,
            weight: layout.alloc(format!("{name}.weight"), vec![out_ch, in_ch, KERNEL, KERNEL]),
            bias: layout.alloc(format!("{name}.bias"), vec![out_ch]),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.in_ch * KERNEL * KERNEL
    }

    fn check(&self, x: &Tensor) -> Result<(usize, usize)> {
        let (c, h, w) = x.chw()?;
        if c != self.in_ch {
            return Err(Error::ShapeMismatch(format!(
                "conv expects {} input channels, got {c}",
                self.in_ch
            )));
        }
        Ok((h, w))
    }

    pub fn forward(&self, params: &[f64], x: &Tensor) -> Result<Tensor> {
        let (h, w) = self.check(x)?;
        let hw = h * w;
        let k = self.fan_in();
        let cols = im2col(&x.values, self.in_ch, h, w);
        // Row-major buffers read as column-major matrices are transposed:
        // Y^T (hw x out) = X_col^T (hw x k) * W^T (k x out).
        let xt = DMatrixView::from_slice(&cols, hw, k);
        let wt = DMatrixView::from_slice(self.weight.of(params), k, self.out_ch);
        let mut y = DMatrix::<f64>::zeros(hw, self.out_ch);
        for (o, &b) in self.bias.of(params).iter().enumerate() {
            y.column_mut(o).fill(b);
        }
        y.gemm(1.0, &xt, &wt, 1.0);
        Tensor::new(vec![self.out_ch, h, w], y.as_slice().to_vec())
    }

    pub fn backward(&self, params: &[f64], x: &Tensor, dy: &Tensor, grads: &mut [f64]) -> Result<Tensor> {
        let (h, w) = self.check(x)?;
        let hw = h * w;
        let k = self.fan_in();
        let cols = im2col(&x.values, self.in_ch, h, w);
        let xt = DMatrixView::from_slice(&cols, hw, k);
        let wt = DMatrixView::from_slice(self.weight.of(params), k, self.out_ch);
        let dyt = DMatrixView::from_slice(&dy.values, hw, self.out_ch);
        {
            let db = self.bias.of_mut(grads);
            for o in 0..self.out_ch {
                db[o] += dyt.column(o).sum();
            }
        }
        {
            let mut dwt = DMatrixViewMut::from_slice(self.weight.of_mut(grads), k, self.out_ch);
            dwt.gemm_tr(1.0, &xt, &dyt, 1.0);
        }
        let mut dcols = DMatrix::<f64>::zeros(hw, k);
        dcols.gemm(1.0, &dyt, &wt.transpose(), 0.0);
        Tensor::new(vec![self.in_ch, h, w], col2im(dcols.as_slice(), self.in_ch, h, w))
    }
}

/// Row-major `(in_ch * 9) x (h * w)` patch matrix with zero padding.
fn im2col(x: &[f64], in_ch: usize, h: usize, w: usize) -> Vec<f64> {
    let hw = h * w;
    let mut cols = vec![0.0; in_ch * KERNEL * KERNEL * hw];
    for i in 0..in_ch {
        let src = &x[i * hw..(i + 1) * hw];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &mut cols[((i * KERNEL + ky) * KERNEL + kx) * hw..][..hw];
                for y in 0..h {
                    let Some(sy) = (y + ky).checked_sub(1).filter(|&s| s < h) else { continue };
                    for xx in 0..w {
                        if let Some(sx) = (xx + kx).checked_sub(1).filter(|&s| s < w) {
                            row[y * w + xx] = src[sy * w + sx];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], in_ch: usize, h: usize, w: usize) -> Vec<f64> {
    let hw = h * w;
    let mut x = vec![0.0; in_ch * hw];
    for i in 0..in_ch {
        let dst = &mut x[i * hw..(i + 1) * hw];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &cols[((i * KERNEL + ky) * KERNEL + kx) * hw..][..hw];
                for y in 0..h {
                    let Some(sy) = (y + ky).checked_sub(1).filter(|&s| s < h) else { continue };
                    for xx in 0..w {
                        if let Some(sx) = (xx + kx).checked_sub(1).filter(|&s| s < w) {
                            dst[sy * w + sx] += row[y * w + xx];
                        }
                    }
                }
            }
        }
    }
    x
}
