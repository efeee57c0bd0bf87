//! LSTM cell with forget gate, and the bidirectional sequence regressor.
//!
//! Gate blocks are stacked in the order input, forget, output, candidate:
//! `W` is `4H × D`, `U` is `4H × H`, `b` has `4H` entries.

use serde::{Deserialize, Serialize};

use super::tensor::{sigmoid, ParamLayout, Slot};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub input: usize,
    pub hidden: usize,
    pub w: Slot,
    pub u: Slot,
    pub b: Slot,
}

/// Values saved by [`LstmParams::step`] for the backward pass.
#[derive(Debug, Clone)]
pub struct StepCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    /// Post-nonlinearity gates `[i, f, o, g]`.
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
}

impl LstmParams {
    pub fn new(layout: &mut ParamLayout, name: &str, input: usize, hidden: usize) -> Self {
        Self {
            input,
            hidden,
            w: layout.alloc(format!("{name}.W"), vec![4 * hidden, input]),
            u: layout.alloc(format!("{name}.U"), vec![4 * hidden, hidden]),
            b: layout.alloc(format!("{name}.b"), vec![4 * hidden]),
        }
    }

    pub fn step(&self, params: &[f64], x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> Result<(Vec<f64>, Vec<f64>, StepCache)> {
        let (d, h) = (self.input, self.hidden);
        if x.len() != d || h_prev.len() != h || c_prev.len() != h {
            return Err(Error::ShapeMismatch(format!(
                "lstm step expects x[{d}], h[{h}], c[{h}]; got x[{}], h[{}], c[{}]",
                x.len(),
                h_prev.len(),
                c_prev.len()
            )));
        }
        let (w, u, b) = (self.w.of(params), self.u.of(params), self.b.of(params));
        let mut gates = b.to_vec();
        for (r, z) in gates.iter_mut().enumerate() {
            *z += w[r * d..(r + 1) * d].iter().zip(x).map(|(a, v)| a * v).sum::<f64>();
            *z += u[r * h..(r + 1) * h].iter().zip(h_prev).map(|(a, v)| a * v).sum::<f64>();
        }
        for (r, z) in gates.iter_mut().enumerate() {
            *z = if r < 3 * h { sigmoid(*z) } else { z.tanh() };
        }
        let mut c = vec![0.0; h];
        let mut h_t = vec![0.0; h];
        let mut tanh_c = vec![0.0; h];
        for j in 0..h {
            let (i, f, o, g) = (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
            c[j] = f * c_prev[j] + i * g;
            tanh_c[j] = c[j].tanh();
            h_t[j] = o * tanh_c[j];
        }
        let cache = StepCache {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            c_prev: c_prev.to_vec(),
            gates,
            tanh_c,
        };
        Ok((h_t, c, cache))
    }

    /// Backpropagates `dh`, `dc` (gradients w.r.t. this step's outputs) and
    /// returns gradients w.r.t. `(x, h_prev, c_prev)`.
    pub fn backward(&self, params: &[f64], cache: &StepCache, dh: &[f64], dc: &[f64], grads: &mut [f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (d, h) = (self.input, self.hidden);
        let g = &cache.gates;
        let mut dz = vec![0.0; 4 * h];
        let mut dc_prev = vec![0.0; h];
        for j in 0..h {
            let (i, f, o, gg) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
            let tc = cache.tanh_c[j];
            let dct = dc[j] + dh[j] * o * (1.0 - tc * tc);
            dz[j] = dct * gg * i * (1.0 - i);
            dz[h + j] = dct * cache.c_prev[j] * f * (1.0 - f);
            dz[2 * h + j] = dh[j] * tc * o * (1.0 - o);
            dz[3 * h + j] = dct * i * (1.0 - gg * gg);
            dc_prev[j] = dct * f;
        }
        let (w, u) = (self.w.of(params), self.u.of(params));
        let mut dx = vec![0.0; d];
        let mut dh_prev = vec![0.0; h];
        for (r, &z) in dz.iter().enumerate() {
            for k in 0..d {
                dx[k] += w[r * d + k] * z;
            }
            for k in 0..h {
                dh_prev[k] += u[r * h + k] * z;
            }
        }
        {
            let gw = self.w.of_mut(grads);
            for (r, &z) in dz.iter().enumerate() {
                for k in 0..d {
                    gw[r * d + k] += z * cache.x[k];
                }
            }
        }
        {
            let gu = self.u.of_mut(grads);
            for (r, &z) in dz.iter().enumerate() {
                for k in 0..h {
                    gu[r * h + k] += z * cache.h_prev[k];
                }
            }
        }
        for (gb, z) in self.b.of_mut(grads).iter_mut().zip(&dz) {
            *gb += z;
        }
        (dx, dh_prev, dc_prev)
    }
}

/// One LSTM update: returns `(h_t, c_t)`.
pub fn lstm_step(x_t: &[f64], h_prev: &[f64], c_prev: &[f64], cell: &LstmParams, params: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let (h, c, _) = cell.step(params, x_t, h_prev, c_prev)?;
    Ok((h, c))
}

/// Forward and backward cells plus a linear head from `2H` to one output per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiLstm {
    pub fwd: LstmParams,
    pub bwd: LstmParams,
    pub head_w: Slot,
    pub head_b: Slot,
    pub length: usize,
}

#[derive(Debug, Clone)]
pub struct BiLstmCache {
    fwd: Vec<StepCache>,
    bwd: Vec<StepCache>,
    hf: Vec<Vec<f64>>,
    hb: Vec<Vec<f64>>,
}

impl BiLstm {
    pub fn new(layout: &mut ParamLayout, input: usize, hidden: usize, length: usize) -> Self {
        Self {
            fwd: LstmParams::new(layout, "lstm_fwd", input, hidden),
            bwd: LstmParams::new(layout, "lstm_bwd", input, hidden),
            head_w: layout.alloc("lstm_head.weight", vec![2 * hidden]),
            head_b: layout.alloc("lstm_head.bias", vec![1]),
            length,
        }
    }

    pub fn hidden(&self) -> usize {
        self.fwd.hidden
    }

    pub fn forward_cached(&self, params: &[f64], seq: &[Vec<f64>]) -> Result<(Vec<f64>, BiLstmCache)> {
        if seq.len() != self.length {
            return Err(Error::ShapeMismatch(format!(
                "sequence length {} does not match window {}",
                seq.len(),
                self.length
            )));
        }
        let h = self.hidden();
        let l = seq.len();
        let mut cache = BiLstmCache {
            fwd: Vec::with_capacity(l),
            bwd: Vec::with_capacity(l),
            hf: vec![Vec::new(); l],
            hb: vec![Vec::new(); l],
        };
        let (mut hs, mut cs) = (vec![0.0; h], vec![0.0; h]);
        for (t, x) in seq.iter().enumerate() {
            let (hn, cn, sc) = self.fwd.step(params, x, &hs, &cs)?;
            cache.fwd.push(sc);
            cache.hf[t] = hn.clone();
            (hs, cs) = (hn, cn);
        }
        let (mut hs, mut cs) = (vec![0.0; h], vec![0.0; h]);
        let mut bwd_rev = Vec::with_capacity(l);
        for t in (0..l).rev() {
            let (hn, cn, sc) = self.bwd.step(params, &seq[t], &hs, &cs)?;
            bwd_rev.push(sc);
            cache.hb[t] = hn.clone();
            (hs, cs) = (hn, cn);
        }
        bwd_rev.reverse();
        cache.bwd = bwd_rev;
        let hw = self.head_w.of(params);
        let hb = self.head_b.of(params)[0];
        let out = (0..l)
            .map(|t| {
                hb + hw[..h].iter().zip(&cache.hf[t]).map(|(a, v)| a * v).sum::<f64>()
                    + hw[h..].iter().zip(&cache.hb[t]).map(|(a, v)| a * v).sum::<f64>()
            })
            .collect();
        Ok((out, cache))
    }

    /// Returns the gradient w.r.t. every input step.
    pub fn backward(&self, params: &[f64], cache: &BiLstmCache, dout: &[f64], grads: &mut [f64]) -> Vec<Vec<f64>> {
        let h = self.hidden();
        let l = dout.len();
        let hw = self.head_w.of(params).to_vec();
        {
            let gw = self.head_w.of_mut(grads);
            for t in 0..l {
                for j in 0..h {
                    gw[j] += dout[t] * cache.hf[t][j];
                    gw[h + j] += dout[t] * cache.hb[t][j];
                }
            }
        }
        self.head_b.of_mut(grads)[0] += dout.iter().sum::<f64>();
        let mut dx = vec![vec![0.0; self.fwd.input]; l];
        let (mut dh_next, mut dc_next) = (vec![0.0; h], vec![0.0; h]);
        for t in (0..l).rev() {
            let dh: Vec<f64> = (0..h).map(|j| dh_next[j] + dout[t] * hw[j]).collect();
            let (gx, gh, gc) = self.fwd.backward(params, &cache.fwd[t], &dh, &dc_next, grads);
            for (a, b) in dx[t].iter_mut().zip(&gx) {
                *a += b;
            }
            (dh_next, dc_next) = (gh, gc);
        }
        let (mut dh_next, mut dc_next) = (vec![0.0; h], vec![0.0; h]);
        for t in 0..l {
            let dh: Vec<f64> = (0..h).map(|j| dh_next[j] + dout[t] * hw[h + j]).collect();
            let (gx, gh, gc) = self.bwd.backward(params, &cache.bwd[t], &dh, &dc_next, grads);
            for (a, b) in dx[t].iter_mut().zip(&gx) {
                *a += b;
            }
            (dh_next, dc_next) = (gh, gc);
        }
        dx
    }
}

/// Per-step outputs of the bidirectional regressor over `series_features`.
pub fn bilstm_regress(series_features: &[Vec<f64>], model: &BiLstm, params: &[f64]) -> Result<Vec<f64>> {
    Ok(model.forward_cached(params, series_features)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_params_zero_state() {
        let mut layout = ParamLayout::default();
        let cell = LstmParams::new(&mut layout, "c", 3, 2);
        let p = vec![0.0; layout.total()];
        let (h, c) = lstm_step(&[0.3, -1.0, 2.0], &[0.1, 0.2], &[0.0, 0.0], &cell, &p).unwrap();
        assert_eq!(h, vec![0.0, 0.0]);
        assert_eq!(c, vec![0.0, 0.0]);
    }

    #[test]
    fn zero_params_halve_cell_state() {
        let mut layout = ParamLayout::default();
        let cell = LstmParams::new(&mut layout, "c", 2, 2);
        let p = vec![0.0; layout.total()];
        let (h, c) = lstm_step(&[1.0, 1.0], &[0.0, 0.0], &[0.8, -2.0], &cell, &p).unwrap();
        assert_relative_eq!(c[0], 0.4, epsilon = 1e-15);
        assert_relative_eq!(c[1], -1.0, epsilon = 1e-15);
        assert_relative_eq!(h[0], 0.5 * 0.4f64.tanh(), epsilon = 1e-15);
        assert_relative_eq!(h[1], 0.5 * (-1.0f64).tanh(), epsilon = 1e-15);
    }

    #[test]
    fn step_rejects_bad_shapes() {
        let mut layout = ParamLayout::default();
        let cell = LstmParams::new(&mut layout, "c", 2, 2);
        let p = vec![0.0; layout.total()];
        assert!(lstm_step(&[1.0], &[0.0, 0.0], &[0.0, 0.0], &cell, &p).is_err());
    }

    #[test]
    fn zero_params_output_head_bias() {
        let mut layout = ParamLayout::default();
        let net = BiLstm::new(&mut layout, 3, 4, 4);
        let mut p = vec![0.0; layout.total()];
        p[net.head_b.offset] = 0.37;
        let seq = vec![vec![1.0, -1.0, 0.5]; 4];
        assert_eq!(bilstm_regress(&seq, &net, &p).unwrap(), vec![0.37; 4]);
        assert!(bilstm_regress(&seq[..3], &net, &p).is_err());
    }

    #[test]
    fn every_step_sees_the_whole_sequence() {
        let mut layout = ParamLayout::default();
        let net = BiLstm::new(&mut layout, 2, 3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p: Vec<f64> = (0..layout.total()).map(|_| rng.random_range(-0.8..0.8)).collect();
        let seq: Vec<Vec<f64>> = (0..4).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
        let base = bilstm_regress(&seq, &net, &p).unwrap();
        for s in 0..4 {
            let mut probe = seq.clone();
            probe[s][0] += 0.1;
            let out = bilstm_regress(&probe, &net, &p).unwrap();
            for t in 0..4 {
                assert!((out[t] - base[t]).abs() > 1e-9, "step {t} blind to input {s}");
            }
        }
    }
}
