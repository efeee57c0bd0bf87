//! Complete regressors: the trunk with a linear head (single tile) or the
//! trunk applied per step followed by the bidirectional LSTM (tile series).

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::lstm::{BiLstm, LstmParams};
use super::tensor::{ParamLayout, Slot};
use super::trunk::{Trunk, TrunkCache, TrunkConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetKind {
    Cnn,
    Bilstm,
}

impl NetKind {
    pub const ALL: [NetKind; 2] = [NetKind::Cnn, NetKind::Bilstm];

    pub fn as_str(self) -> &'static str {
        match self {
            NetKind::Cnn => "cnn",
            NetKind::Bilstm => "bilstm",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            NetKind::Cnn => "CNN",
            NetKind::Bilstm => "LSTM",
        }
    }
}

impl fmt::Display for NetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cnn" => Ok(NetKind::Cnn),
            "bilstm" | "lstm" => Ok(NetKind::Bilstm),
            other => Err(Error::InvalidInput(format!("unknown network `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub kind: NetKind,
    pub trunk: TrunkConfig,
    pub hidden: usize,
    pub window: usize,
}

impl ArchConfig {
    pub fn new(kind: NetKind, input_size: usize) -> Self {
        Self {
            kind,
            trunk: TrunkConfig::for_input(input_size),
            hidden: 8,
            window: crate::raster::DEFAULT_WINDOW,
        }
    }

    /// Number of steps per example.
    pub fn steps(&self) -> usize {
        match self.kind {
            NetKind::Cnn => 1,
            NetKind::Bilstm => self.window,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Head {
    Linear { w: Slot, b: Slot },
    Recurrent(BiLstm),
}

/// One training or prediction unit: `steps()` flattened `S×S` patches and
/// as many targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub arch: ArchConfig,
    pub layout: ParamLayout,
    trunk: Trunk,
    head: Head,
}

impl Network {
    pub fn new(arch: ArchConfig) -> Result<Self> {
        if arch.kind == NetKind::Bilstm && (arch.window == 0 || arch.hidden == 0) {
            return Err(Error::InvalidInput("bilstm needs window >= 1 and hidden >= 1".into()));
        }
        let mut layout = ParamLayout::default();
        let trunk = Trunk::new(&mut layout, arch.trunk.clone())?;
        let head = match arch.kind {
            NetKind::Cnn => Head::Linear {
                w: layout.alloc("head.weight", vec![trunk.features()]),
                b: layout.alloc("head.bias", vec![1]),
            },
            NetKind::Bilstm => Head::Recurrent(BiLstm::new(&mut layout, trunk.features(), arch.hidden, arch.window)),
        };
        Ok(Self {
            arch,
            layout,
            trunk,
            head,
        })
    }

    pub fn param_count(&self) -> usize {
        self.layout.total()
    }

    pub fn trunk(&self) -> &Trunk {
        &self.trunk
    }

    pub fn head_bias(&self) -> Slot {
        match &self.head {
            Head::Linear { b, .. } => *b,
            Head::Recurrent(net) => net.head_b,
        }
    }

    /// Seeded initialization: scaled uniform weights, zero biases, forget-gate bias 1.
    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = vec![0.0; self.param_count()];
        let mut uniform = |slot: Slot, bound: f64, p: &mut [f64]| {
            for v in slot.of_mut(p) {
                *v = rng.random_range(-bound..=bound);
            }
        };
        let stem = &self.trunk.stem;
        uniform(stem.weight, (3.0 / stem.fan_in() as f64).sqrt(), &mut p);
        for block in &self.trunk.blocks {
            for conv in &block.layers {
                uniform(conv.weight, 0.5 * (3.0 / conv.fan_in() as f64).sqrt(), &mut p);
            }
        }
        match &self.head {
            Head::Linear { w, .. } => uniform(*w, (3.0 / w.len as f64).sqrt() * 0.5, &mut p),
            Head::Recurrent(net) => {
                for cell in [&net.fwd, &net.bwd] {
                    let bound = 1.0 / (cell.hidden as f64).sqrt();
                    uniform(cell.w, bound, &mut p);
                    uniform(cell.u, bound, &mut p);
                    forget_bias(cell, &mut p);
                }
                uniform(net.head_w, (3.0 / net.head_w.len as f64).sqrt() * 0.5, &mut p);
            }
        }
        p
    }

    fn check_example(&self, inputs: &[Vec<f64>]) -> Result<()> {
        let steps = self.arch.steps();
        if inputs.len() != steps {
            return Err(Error::ShapeMismatch(format!(
                "{} network expects {steps} patches per example, got {}",
                self.arch.kind,
                inputs.len()
            )));
        }
        Ok(())
    }

    /// Unclamped outputs, one per step.
    pub fn forward(&self, params: &[f64], inputs: &[Vec<f64>]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(params, inputs)?.0)
    }

    fn forward_cached(&self, params: &[f64], inputs: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<Vec<f64>>, Vec<TrunkCache>, Option<super::lstm::BiLstmCache>)> {
        self.check_example(inputs)?;
        let mut feats = Vec::with_capacity(inputs.len());
        let mut caches = Vec::with_capacity(inputs.len());
        for tile in inputs {
            let (f, c) = self.trunk.forward_cached(params, tile)?;
            feats.push(f);
            caches.push(c);
        }
        match &self.head {
            Head::Linear { w, b } => {
                let out = b.of(params)[0] + w.of(params).iter().zip(&feats[0]).map(|(a, v)| a * v).sum::<f64>();
                Ok((vec![out], feats, caches, None))
            }
            Head::Recurrent(net) => {
                let (out, lc) = net.forward_cached(params, &feats)?;
                Ok((out, feats, caches, Some(lc)))
            }
        }
    }

    /// Mean squared error of one example; its gradient is added to `grads`.
    pub fn loss_and_grad(&self, params: &[f64], example: &Example, grads: &mut [f64]) -> Result<f64> {
        let (out, feats, trunk_caches, lstm_cache) = self.forward_cached(params, &example.inputs)?;
        if out.len() != example.targets.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} outputs for {} targets",
                out.len(),
                example.targets.len()
            )));
        }
        let n = out.len() as f64;
        let loss = out.iter().zip(&example.targets).map(|(o, y)| (o - y).powi(2)).sum::<f64>() / n;
        let dout: Vec<f64> = out.iter().zip(&example.targets).map(|(o, y)| 2.0 * (o - y) / n).collect();
        let dfeats = match &self.head {
            Head::Linear { w, b } => {
                let wv = w.of(params).to_vec();
                for (g, f) in w.of_mut(grads).iter_mut().zip(&feats[0]) {
                    *g += dout[0] * f;
                }
                b.of_mut(grads)[0] += dout[0];
                vec![wv.iter().map(|a| a * dout[0]).collect::<Vec<f64>>()]
            }
            Head::Recurrent(net) => net.backward(params, lstm_cache.as_ref().expect("recurrent cache"), &dout, grads),
        };
        for (cache, df) in trunk_caches.iter().zip(&dfeats) {
            self.trunk.backward(params, cache, df, grads)?;
        }
        Ok(loss)
    }

    /// Outputs clamped to `[0, 1]`.
    pub fn predict(&self, params: &[f64], inputs: &[Vec<f64>]) -> Result<Vec<f64>> {
        Ok(self.forward(params, inputs)?.into_iter().map(clamp01).collect())
    }

    pub fn predict_batch(&self, params: &[f64], batch: &[Vec<Vec<f64>>]) -> Result<Vec<Vec<f64>>> {
        use rayon::prelude::*;
        batch.par_iter().map(|inputs| self.predict(params, inputs)).collect()
    }
}

fn forget_bias(cell: &LstmParams, p: &mut [f64]) {
    let h = cell.hidden;
    cell.b.of_mut(p)[h..2 * h].fill(1.0);
}

pub fn clamp01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamping() {
        assert_eq!(clamp01(1.3), 1.0);
        assert_eq!(clamp01(-0.2), 0.0);
        assert_eq!(clamp01(0.4), 0.4);
    }

    #[test]
    fn raw_output_above_one_is_clamped() {
        let net = Network::new(ArchConfig::new(NetKind::Cnn, 32)).unwrap();
        let mut p = vec![0.0; net.param_count()];
        p[net.head_bias().offset] = 1.3;
        let x = vec![vec![0.5; 32 * 32]];
        assert_eq!(net.forward(&p, &x).unwrap(), vec![1.3]);
        assert_eq!(net.predict(&p, &x).unwrap(), vec![1.0]);
    }

    #[test]
    fn shared_trunk_across_steps() {
        let net = Network::new(ArchConfig::new(NetKind::Bilstm, 32)).unwrap();
        let p = net.init_params(4);
        let tile: Vec<f64> = (0..32 * 32).map(|i| ((i * 7) % 13) as f64 / 13.0).collect();
        let a = super::super::trunk::cnn_feature_extract(&tile, net.trunk(), &p).unwrap();
        let b = super::super::trunk::cnn_feature_extract(&tile, net.trunk(), &p).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn wrong_step_count_is_rejected() {
        let net = Network::new(ArchConfig::new(NetKind::Bilstm, 32)).unwrap();
        let p = net.init_params(0);
        assert!(net.predict(&p, &[vec![0.0; 1024]]).is_err());
    }

    #[test]
    fn init_is_seeded() {
        let net = Network::new(ArchConfig::new(NetKind::Bilstm, 128)).unwrap();
        assert_eq!(net.init_params(11), net.init_params(11));
        assert_ne!(net.init_params(11), net.init_params(12));
    }
}
