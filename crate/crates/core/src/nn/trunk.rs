//! Convolutional feature trunk: average-pool to a working resolution, stem
//! convolution, residual blocks, global average pool.

use serde::{Deserialize, Serialize};

use super::conv::Conv2d;
use super::residual::{ResidualBlockSpec, ResidualCache};
use super::tensor::{Activation, ParamLayout, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompoundScalingSpec {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub phi: f64,
}

impl CompoundScalingSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(v >= 1.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!("{name} must be >= 1, got {v}")));
            }
        }
        if !(self.phi >= 0.0 && self.phi.is_finite()) {
            return Err(Error::InvalidInput(format!("phi must be >= 0, got {}", self.phi)));
        }
        Ok(())
    }

    /// Checks `α·β·γ ≈ 2` within `slack`.
    pub fn check_constraint(&self, slack: f64) -> Result<()> {
        let prod = self.alpha * self.beta * self.gamma;
        if (prod - 2.0).abs() > slack {
            return Err(Error::InvalidInput(format!(
                "alpha*beta*gamma = {prod} is not within {slack} of 2"
            )));
        }
        Ok(())
    }
}

/// Depth, width and resolution multipliers `(α^φ, β^φ, γ^φ)`.
pub fn compound_scale(spec: &CompoundScalingSpec) -> (f64, f64, f64) {
    (spec.alpha.powf(spec.phi), spec.beta.powf(spec.phi), spec.gamma.powf(spec.phi))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrunkConfig {
    /// Side of the input tile in pixels.
    pub input_size: usize,
    /// Side after average pooling; must divide `input_size`.
    pub work_size: usize,
    pub channels: usize,
    pub blocks: usize,
    pub layers_per_block: usize,
    pub activation: Activation,
}

impl Default for TrunkConfig {
    fn default() -> Self {
        Self {
            input_size: 32,
            work_size: 8,
            channels: 8,
            blocks: 3,
            layers_per_block: 2,
            activation: Activation::Tanh,
        }
    }
}

impl TrunkConfig {
    pub fn for_input(input_size: usize) -> Self {
        Self {
            input_size,
            work_size: 8.min(input_size),
            ..Self::default()
        }
    }

    /// Applies compound multipliers to depth, width and resolution. The
    /// working resolution is rounded to the nearest divisor of the input size.
    pub fn scaled(&self, spec: &CompoundScalingSpec) -> Result<Self> {
        spec.validate()?;
        let (d, w, r) = compound_scale(spec);
        let target = (self.work_size as f64 * r).round().max(1.0) as usize;
        let work_size = (1..=self.input_size)
            .filter(|s| self.input_size % s == 0)
            .min_by_key(|s| (s.abs_diff(target), *s))
            .unwrap_or(self.input_size);
        Ok(Self {
            blocks: (self.blocks as f64 * d).ceil() as usize,
            channels: (self.channels as f64 * w).ceil() as usize,
            work_size,
            ..self.clone()
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || self.work_size == 0 || self.input_size % self.work_size != 0 {
            return Err(Error::InvalidInput(format!(
                "work size {} must divide input size {}",
                self.work_size, self.input_size
            )));
        }
        if self.channels == 0 || !(2..=3).contains(&self.layers_per_block) {
            return Err(Error::InvalidInput("trunk needs channels >= 1 and 2 or 3 layers per block".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trunk {
    pub config: TrunkConfig,
    pub stem: Conv2d,
    pub blocks: Vec<ResidualBlockSpec>,
}

#[derive(Debug, Clone)]
pub struct TrunkCache {
    pooled: Tensor,
    stem_pre: Tensor,
    blocks: Vec<ResidualCache>,
}

impl Trunk {
    pub fn new(layout: &mut ParamLayout, config: TrunkConfig) -> Result<Self> {
        config.validate()?;
        let stem = Conv2d::new(layout, "stem", 1, config.channels);
        let blocks = (0..config.blocks)
            .map(|b| {
                ResidualBlockSpec::new(
                    layout,
                    &format!("block{b}"),
                    config.channels,
                    config.layers_per_block,
                    config.activation,
                )
            })
            .collect();
        Ok(Self { config, stem, blocks })
    }

    pub fn features(&self) -> usize {
        self.config.channels
    }

    fn pool(&self, tile: &[f64]) -> Result<Tensor> {
        let s = self.config.input_size;
        if tile.len() != s * s {
            return Err(Error::ShapeMismatch(format!(
                "tile has {} pixels, trunk expects {s}x{s}",
                tile.len()
            )));
        }
        let w = self.config.work_size;
        let f = s / w;
        let norm = 1.0 / (f * f) as f64;
        let mut out = vec![0.0; w * w];
        for (r, row) in tile.chunks_exact(s).enumerate() {
            let dst = &mut out[(r / f) * w..(r / f + 1) * w];
            for (c, v) in row.iter().enumerate() {
                dst[c / f] += v * norm;
            }
        }
        Tensor::new(vec![1, w, w], out)
    }

    pub fn forward_cached(&self, params: &[f64], tile: &[f64]) -> Result<(Vec<f64>, TrunkCache)> {
        let pooled = self.pool(tile)?;
        let stem_pre = self.stem.forward(params, &pooled)?;
        let act = self.config.activation;
        let mut x = Tensor {
            shape: stem_pre.shape.clone(),
            values: stem_pre.values.iter().map(|v| act.apply(*v)).collect(),
        };
        let mut caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (y, c) = block.forward_cached(params, &x)?;
            caches.push(c);
            x = y;
        }
        let (ch, h, w) = x.chw()?;
        let area = (h * w) as f64;
        let feats = (0..ch)
            .map(|c| x.values[c * h * w..(c + 1) * h * w].iter().sum::<f64>() / area)
            .collect();
        Ok((
            feats,
            TrunkCache {
                pooled,
                stem_pre,
                blocks: caches,
            },
        ))
    }

    /// Backpropagates a feature gradient into `grads`.
    pub fn backward(&self, params: &[f64], cache: &TrunkCache, dfeat: &[f64], grads: &mut [f64]) -> Result<()> {
        let (ch, h, w) = cache.stem_pre.chw()?;
        let area = (h * w) as f64;
        let mut d = Tensor::zeros(vec![ch, h, w]);
        for c in 0..ch {
            d.values[c * h * w..(c + 1) * h * w].fill(dfeat[c] / area);
        }
        for (block, bc) in self.blocks.iter().zip(&cache.blocks).rev() {
            d = block.backward(params, bc, &d, grads)?;
        }
        let act = self.config.activation;
        for (g, z) in d.values.iter_mut().zip(&cache.stem_pre.values) {
            *g *= act.derivative(*z);
        }
        self.stem.backward(params, &cache.pooled, &d, grads)?;
        Ok(())
    }
}

/// Feature vector of one `S×S` NDVI patch.
pub fn cnn_feature_extract(tile: &[f64], trunk: &Trunk, params: &[f64]) -> Result<Vec<f64>> {
    Ok(trunk.forward_cached(params, tile)?.0)
}
