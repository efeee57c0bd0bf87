use std::hint::black_box;

use chlorolab_core::gmm::{fit_em, gmm_conditional, EmConfig};
use chlorolab_core::histogram::uniform_grid;
use chlorolab_core::kde::{kde_conditional, Kernel, KdeModel};
use chlorolab_core::knn::{knn_predict, KnnModel};
use chlorolab_core::nn::model::{ArchConfig, Example, NetKind, Network};
use chlorolab_core::ScaledTriple;
use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn data(n: usize) -> Vec<ScaledTriple> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    (0..n)
        .map(|_| ScaledTriple {
            date01: rng.random(),
            ndvi01: rng.random(),
            cf01: rng.random(),
        })
        .collect()
}

fn generative(c: &mut Criterion) {
    let train = data(120);
    let grid = uniform_grid(256);
    let kde = KdeModel::fit(&train, 0.05, Kernel::Gaussian).unwrap();
    c.bench_function("kde_conditional_256", |b| {
        b.iter(|| kde_conditional(&kde, black_box(0.4), black_box(0.6), &grid).unwrap())
    });
    let gmm = fit_em(&train, 3, &EmConfig::default()).unwrap();
    c.bench_function("gmm_conditional_256", |b| {
        b.iter(|| gmm_conditional(&gmm, black_box(0.4), black_box(0.6), &grid).unwrap())
    });
    c.bench_function("gmm_fit_em_c3", |b| b.iter(|| fit_em(black_box(&train), 3, &EmConfig::default()).unwrap()));
    let knn = KnnModel::fit(&train, 5).unwrap();
    c.bench_function("knn_predict_k5", |b| b.iter(|| knn_predict(&knn, black_box(0.4), black_box(0.6))));
}

fn networks(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for kind in [NetKind::Cnn, NetKind::Bilstm] {
        let arch = ArchConfig::new(kind, 32);
        let steps = arch.steps();
        let net = Network::new(arch).unwrap();
        let params = net.init_params(3);
        let example = Example {
            inputs: (0..steps).map(|_| (0..32 * 32).map(|_| rng.random()).collect()).collect(),
            targets: (0..steps).map(|_| rng.random()).collect(),
        };
        let mut grads = vec![0.0; params.len()];
        c.bench_function(&format!("{kind}_32_loss_and_grad"), |b| {
            b.iter(|| net.loss_and_grad(&params, black_box(&example), &mut grads).unwrap())
        });
        c.bench_function(&format!("{kind}_32_forward"), |b| {
            b.iter(|| net.forward(&params, black_box(&example.inputs)).unwrap())
        });
    }
}

criterion_group!(benches, generative, networks);
criterion_main!(benches);
