//! Residual block `H(x) = F(x) + x`, where `F` is a stack of
//! convolution + nonlinearity layers that preserves the input shape.

use serde::{Deserialize, Serialize};

use super::conv::Conv2d;
use super::tensor::{Activation, ParamLayout, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualBlockSpec {
    pub layers: Vec<Conv2d>,
    pub activation: Activation,
}

/// Intermediate values needed by the backward pass.
#[derive(Debug, Clone)]
pub struct ResidualCache {
    /// Input of every layer.
    inputs: Vec<Tensor>,
    /// Pre-activation output of every layer.
    pre: Vec<Tensor>,
}

impl ResidualBlockSpec {
    pub fn new(layout: &mut ParamLayout, name: &str, channels: usize, depth: usize, activation: Activation) -> Self {
        assert!((2..=3).contains(&depth), "residual blocks hold 2 or 3 layers");
        Self {
            layers: (0..depth)
                .map(|i| Conv2d::new(layout, &format!("{name}.conv{i}"), channels, channels))
                .collect(),
            activation,
        }
    }

    pub fn channels(&self) -> usize {
        self.layers[0].in_ch
    }

    pub fn forward_cached(&self, params: &[f64], x: &Tensor) -> Result<(Tensor, ResidualCache)> {
        let (c, _, _) = x.chw()?;
        if c != self.channels() || self.layers.iter().any(|l| l.in_ch != c || l.out_ch != c) {
            return Err(Error::ShapeMismatch(format!(
                "residual block over {} channels cannot take {c}",
                self.channels()
            )));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &self.layers {
            let z = layer.forward(params, &cur)?;
            inputs.push(cur);
            cur = Tensor {
                shape: z.shape.clone(),
                values: z.values.iter().map(|v| self.activation.apply(*v)).collect(),
            };
            pre.push(z);
        }
        for (o, xi) in cur.values.iter_mut().zip(&x.values) {
            *o += xi;
        }
        Ok((cur, ResidualCache { inputs, pre }))
    }

    /// Returns the input gradient; parameter gradients are accumulated into `grads`.
    pub fn backward(&self, params: &[f64], cache: &ResidualCache, dout: &Tensor, grads: &mut [f64]) -> Result<Tensor> {
        let mut d = dout.clone();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            for (g, z) in d.values.iter_mut().zip(&cache.pre[k].values) {
                *g *= self.activation.derivative(*z);
            }
            d = layer.backward(params, &cache.inputs[k], &d, grads)?;
        }
        for (g, skip) in d.values.iter_mut().zip(&dout.values) {
            *g += skip;
        }
        Ok(d)
    }
}

/// `F(x) + x` for one block.
pub fn residual_forward(x: &Tensor, block: &ResidualBlockSpec, params: &[f64]) -> Result<Tensor> {
    Ok(block.forward_cached(params, x)?.0)
}
