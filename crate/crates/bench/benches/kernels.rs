use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

use diffsde_bench::{denoiser_net, normal_cloud, ou_grid, ou_slot_pairs, slot_model, OU};
use diffsde_core::ddpm::NoiseSchedule;
use diffsde_core::eval::knn_kl;
use diffsde_core::pathgen::{sdm_mc_sample, SdmMcConfig};
use diffsde_core::rng::substream;
use diffsde_core::sde::simulate_ou;

fn mlp(c: &mut Criterion) {
    let (net, x, y) = denoiser_net(1, 64);
    c.bench_function("mlp_forward_b64", |b| b.iter(|| net.forward(black_box(x.view())).unwrap()));
    c.bench_function("mlp_grad_b64", |b| b.iter(|| net.grad(black_box(x.view()), y.view()).unwrap()));
}

fn reverse_sampling(c: &mut Criterion) {
    let model = slot_model(10);
    let states = vec![OU.x0; 256];
    c.bench_function("reverse_sample_256_k100", |b| {
        b.iter_batched(
            || (0..256).map(|i| substream(1, i)).collect::<Vec<_>>(),
            |mut rngs| model.sample_batch(&states, &mut rngs).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

fn knn(c: &mut Criterion) {
    let (p, q) = (normal_cloud(1000, 20, 0.0, 1), normal_cloud(1000, 20, 0.3, 2));
    c.bench_function("knn_kl_brute_1000x20", |b| b.iter(|| knn_kl(p.view(), q.view(), 1).unwrap()));
    let (p, q) = (normal_cloud(10_000, 2, 0.0, 3), normal_cloud(10_000, 2, 0.3, 4));
    c.bench_function("knn_kl_tree_10000x2", |b| b.iter(|| knn_kl(p.view(), q.view(), 1).unwrap()));
}

fn simulators(c: &mut Criterion) {
    let grid = ou_grid();
    c.bench_function("simulate_ou_1000x20", |b| b.iter(|| simulate_ou(&OU, &grid, 1000, black_box(5)).unwrap()));
}

fn sdm_mc(c: &mut Criterion) {
    let pairs = ou_slot_pairs(1000);
    let cfg = SdmMcConfig::new(vec![0.05], NoiseSchedule::new(100).unwrap()).unwrap();
    let mut i = 0;
    c.bench_function("sdm_mc_sample_h1000", |b| {
        b.iter(|| {
            i += 1;
            sdm_mc_sample(&pairs, &[OU.x0], &cfg, &mut substream(6, i)).unwrap()
        })
    });
}

criterion_group! {
    name = kernels;
    config = Criterion::default().sample_size(20);
    targets = mlp, reverse_sampling, knn, simulators, sdm_mc
}
criterion_main!(kernels);
