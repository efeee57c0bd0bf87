//! Central finite-difference comparison against analytic gradients.

pub const FD_EPSILON: f64 = 1e-5;
/// Denominator floor of the relative error.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares `analytic` with `(f(x + εe_i) − f(x − εe_i)) / 2ε` for every `i`.
pub fn check_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], analytic: &[f64], eps: f64) -> GradCheck {
    assert_eq!(x.len(), analytic.len());
    let mut probe = x.to_vec();
    let mut out = GradCheck {
        max_rel_error: 0.0,
        worst_index: 0,
        checked: x.len(),
    };
    for i in 0..x.len() {
        probe[i] = x[i] + eps;
        let up = f(&probe);
        probe[i] = x[i] - eps;
        let down = f(&probe);
        probe[i] = x[i];
        let rel = relative_error(analytic[i], (up - down) / (2.0 * eps));
        if rel > out.max_rel_error {
            out.max_rel_error = rel;
            out.worst_index = i;
        }
    }
    out
}

/// Randomized gradient-check scenarios over small shapes.
pub mod cases {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::{check_gradient, GradCheck, FD_EPSILON};
    use crate::nn::lstm::{BiLstm, LstmParams};
    use crate::nn::model::{ArchConfig, Example, NetKind, Network};
    use crate::nn::residual::ResidualBlockSpec;
    use crate::nn::tensor::{Activation, ParamLayout, Tensor};
    use crate::nn::trunk::{Trunk, TrunkConfig};

    fn uniform(rng: &mut ChaCha8Rng, n: usize, bound: f64) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-bound..bound)).collect()
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    fn worst(a: GradCheck, b: GradCheck) -> GradCheck {
        let checked = a.checked + b.checked;
        let mut w = if b.max_rel_error > a.max_rel_error { b } else { a };
        w.checked = checked;
        w
    }

    /// Residual block with random channels, size and depth; checks weights and input.
    pub fn residual_block(seed: u64) -> GradCheck {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (c, h, w) = (rng.random_range(1..=3), rng.random_range(2..=5), rng.random_range(2..=5));
        let depth = rng.random_range(2..=3);
        let mut layout = ParamLayout::default();
        let block = ResidualBlockSpec::new(&mut layout, "b", c, depth, Activation::Tanh);
        let params = uniform(&mut rng, layout.total(), 0.6);
        let x = Tensor::new(vec![c, h, w], uniform(&mut rng, c * h * w, 1.0)).unwrap();
        let r = uniform(&mut rng, c * h * w, 1.0);

        let (_, cache) = block.forward_cached(&params, &x).unwrap();
        let mut grads = vec![0.0; params.len()];
        let dout = Tensor::new(vec![c, h, w], r.clone()).unwrap();
        let dx = block.backward(&params, &cache, &dout, &mut grads).unwrap();

        let by_params = check_gradient(
            |p| dot(&r, &block.forward_cached(p, &x).unwrap().0.values),
            &params,
            &grads,
            FD_EPSILON,
        );
        let by_input = check_gradient(
            |xv| {
                let t = Tensor::new(vec![c, h, w], xv.to_vec()).unwrap();
                dot(&r, &block.forward_cached(&params, &t).unwrap().0.values)
            },
            &x.values,
            &dx.values,
            FD_EPSILON,
        );
        worst(by_params, by_input)
    }

    /// Pooling + stem + residual trunk with a random configuration.
    pub fn trunk(seed: u64) -> GradCheck {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input_size = [4usize, 6, 8][rng.random_range(0..3)];
        let divisors: Vec<usize> = (1..=input_size).filter(|d| input_size % d == 0 && *d >= 2).collect();
        let config = TrunkConfig {
            input_size,
            work_size: divisors[rng.random_range(0..divisors.len())],
            channels: rng.random_range(1..=3),
            blocks: rng.random_range(1..=2),
            layers_per_block: rng.random_range(2..=3),
            activation: Activation::Tanh,
        };
        let mut layout = ParamLayout::default();
        let trunk = Trunk::new(&mut layout, config).unwrap();
        let params = uniform(&mut rng, layout.total(), 0.6);
        let tile = uniform(&mut rng, input_size * input_size, 1.0);
        let r = uniform(&mut rng, trunk.features(), 1.0);

        let (_, cache) = trunk.forward_cached(&params, &tile).unwrap();
        let mut grads = vec![0.0; params.len()];
        trunk.backward(&params, &cache, &r, &mut grads).unwrap();
        check_gradient(
            |p| dot(&r, &trunk.forward_cached(p, &tile).unwrap().0),
            &params,
            &grads,
            FD_EPSILON,
        )
    }

    /// One LSTM step; checks parameters and all three inputs.
    pub fn lstm_step(seed: u64) -> GradCheck {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, h) = (rng.random_range(1..=4), rng.random_range(1..=4));
        let mut layout = ParamLayout::default();
        let cell = LstmParams::new(&mut layout, "c", d, h);
        let params = uniform(&mut rng, layout.total(), 0.8);
        let x = uniform(&mut rng, d, 1.0);
        let hp = uniform(&mut rng, h, 1.0);
        let cp = uniform(&mut rng, h, 1.0);
        let (rh, rc) = (uniform(&mut rng, h, 1.0), uniform(&mut rng, h, 1.0));
        let loss = |p: &[f64], x: &[f64], hp: &[f64], cp: &[f64]| {
            let (ht, ct, _) = cell.step(p, x, hp, cp).unwrap();
            dot(&rh, &ht) + dot(&rc, &ct)
        };

        let (_, _, cache) = cell.step(&params, &x, &hp, &cp).unwrap();
        let mut grads = vec![0.0; params.len()];
        let (dx, dh, dc) = cell.backward(&params, &cache, &rh, &rc, &mut grads);

        let mut out = check_gradient(|p| loss(p, &x, &hp, &cp), &params, &grads, FD_EPSILON);
        out = worst(out, check_gradient(|v| loss(&params, v, &hp, &cp), &x, &dx, FD_EPSILON));
        out = worst(out, check_gradient(|v| loss(&params, &x, v, &cp), &hp, &dh, FD_EPSILON));
        worst(out, check_gradient(|v| loss(&params, &x, &hp, v), &cp, &dc, FD_EPSILON))
    }

    /// Bidirectional LSTM over raw feature sequences, then the full
    /// trunk + BiLSTM network under its training loss.
    pub fn bilstm(seed: u64) -> GradCheck {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, h, l) = (rng.random_range(1..=3), rng.random_range(1..=3), rng.random_range(2..=4));
        let mut layout = ParamLayout::default();
        let net = BiLstm::new(&mut layout, d, h, l);
        let params = uniform(&mut rng, layout.total(), 0.8);
        let seq: Vec<Vec<f64>> = (0..l).map(|_| uniform(&mut rng, d, 1.0)).collect();
        let r = uniform(&mut rng, l, 1.0);
        let (_, cache) = net.forward_cached(&params, &seq).unwrap();
        let mut grads = vec![0.0; params.len()];
        let dseq = net.backward(&params, &cache, &r, &mut grads);
        let mut out = check_gradient(
            |p| dot(&r, &net.forward_cached(p, &seq).unwrap().0),
            &params,
            &grads,
            FD_EPSILON,
        );
        let flat: Vec<f64> = seq.concat();
        out = worst(
            out,
            check_gradient(
                |v| {
                    let s: Vec<Vec<f64>> = v.chunks(d).map(<[f64]>::to_vec).collect();
                    dot(&r, &net.forward_cached(&params, &s).unwrap().0)
                },
                &flat,
                &dseq.concat(),
                FD_EPSILON,
            ),
        );

        let mut arch = ArchConfig::new(NetKind::Bilstm, 4);
        arch.trunk.work_size = 2;
        arch.trunk.channels = rng.random_range(1..=2);
        arch.trunk.blocks = 1;
        arch.hidden = rng.random_range(1..=3);
        arch.window = l;
        let full = Network::new(arch).unwrap();
        let p = uniform(&mut rng, full.param_count(), 0.6);
        let ex = Example {
            inputs: (0..l).map(|_| uniform(&mut rng, 16, 1.0)).collect(),
            targets: (0..l).map(|_| rng.random_range(0.0..1.0)).collect(),
        };
        let mut g = vec![0.0; p.len()];
        full.loss_and_grad(&p, &ex, &mut g).unwrap();
        worst(
            out,
            check_gradient(
                |q| full.loss_and_grad(q, &ex, &mut vec![0.0; q.len()]).unwrap(),
                &p,
                &g,
                FD_EPSILON,
            ),
        )
    }

    /// Trunk + linear head under the training loss.
    pub fn cnn_network(seed: u64) -> GradCheck {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut arch = ArchConfig::new(NetKind::Cnn, 8);
        arch.trunk.work_size = [2, 4, 8][rng.random_range(0..3)];
        arch.trunk.channels = rng.random_range(1..=3);
        arch.trunk.blocks = rng.random_range(1..=3);
        let net = Network::new(arch).unwrap();
        let p = uniform(&mut rng, net.param_count(), 0.6);
        let ex = Example {
            inputs: vec![uniform(&mut rng, 64, 1.0)],
            targets: vec![rng.random_range(0.0..1.0)],
        };
        let mut g = vec![0.0; p.len()];
        net.loss_and_grad(&p, &ex, &mut g).unwrap();
        check_gradient(
            |q| net.loss_and_grad(q, &ex, &mut vec![0.0; q.len()]).unwrap(),
            &p,
            &g,
            FD_EPSILON,
        )
    }
}
