//! Hot paths that dominate training wallclock: dense net forward/backward
//! at BC batch shape, DDIM chunk sampling at eval batch shape, env stepping,
//! and the GAE recursion.

use criterion::{criterion_group, criterion_main, Criterion, Throughput};
use resip_core::env::{reset, rollout, step, Action, EnvConfig, ScriptedExpert, STATE_DIM};
use resip_core::numerics::{mse_loss_grad, Activation, Mlp, Net, Scratch};
use resip_core::policy::{ChunkSpec, DiffusionPolicy, NoiseSchedule, Normalizer, TIME_EMB_DIM};
use resip_core::rl::compute_gae;
use resip_core::rng::named_rng;

fn bench_net(c: &mut Criterion) {
    let chunk = ChunkSpec::new(8, 4).unwrap();
    let in_dim = STATE_DIM + chunk.chunk_dim() + TIME_EMB_DIM;
    let sizes = [in_dim, 512, 512, 512, chunk.chunk_dim()];
    let mut rng = named_rng(0, "bench-net");
    let net = Mlp::new(&sizes, Activation::Mish, Activation::Linear, &mut rng).unwrap();
    let b = 256;
    let x: Vec<f32> = (0..b * in_dim).map(|i| ((i % 17) as f32 - 8.0) / 8.0).collect();
    let target = vec![0.1f32; b * chunk.chunk_dim()];
    let mut scratch = Scratch::new();
    let mut y = Vec::new();
    let mut grad = vec![0.0f32; net.params().len()];

    let mut g = c.benchmark_group("net");
    g.throughput(Throughput::Elements(b as u64));
    g.bench_function("forward_b256_512x3", |bch| {
        bch.iter(|| net.forward_batch(std::hint::black_box(&x), b, &mut y, &mut scratch))
    });
    g.bench_function("loss_grad_b256_512x3", |bch| {
        bch.iter(|| {
            grad.iter_mut().for_each(|v| *v = 0.0);
            mse_loss_grad(&net, std::hint::black_box(&x), b, &target, &mut grad, &mut scratch)
        })
    });
    g.finish();
}

fn bench_ddim(c: &mut Criterion) {
    let chunk = ChunkSpec::new(8, 4).unwrap();
    let schedule = NoiseSchedule::new(100, 4).unwrap();
    let normalizer = Normalizer::identity(STATE_DIM, 5);
    let mut rng = named_rng(0, "bench-ddim");
    let policy =
        DiffusionPolicy::new(chunk, schedule, normalizer, &[512, 512, 512], &mut rng).unwrap();
    let b = 64;
    let states = vec![0.25f32; b * STATE_DIM];
    let mut rngs: Vec<_> = (0..b).map(|i| named_rng(i as u64, "bench-ddim-lane")).collect();
    let mut out = Vec::new();
    let mut scratch = Scratch::new();

    let mut g = c.benchmark_group("ddim");
    g.throughput(Throughput::Elements(b as u64));
    g.bench_function("sample_b64_k4", |bch| {
        bch.iter(|| {
            policy.ddim_sample_batch(
                std::hint::black_box(&states),
                b,
                0.0,
                &mut rngs,
                &mut out,
                &mut scratch,
            )
        })
    });
    g.finish();
}

fn bench_env(c: &mut Criterion) {
    let cfg = EnvConfig::default();
    let action = Action::from_vec(&[0.01, -0.02, 0.1, 0.0, 1.0]);

    let mut g = c.benchmark_group("env");
    g.bench_function("step", |bch| {
        let mut state = reset(&cfg, 7).unwrap();
        bch.iter(|| {
            let out = step(&mut state, std::hint::black_box(&action), &cfg);
            if out.done {
                state = reset(&cfg, 7).unwrap();
            }
            out.reward
        })
    });
    g.bench_function("expert_episode", |bch| {
        let mut seed = 0u64;
        bch.iter(|| {
            let mut expert = ScriptedExpert::with_seed(seed);
            seed = seed.wrapping_add(1);
            rollout(&mut expert, &cfg, seed, None).unwrap().states.len()
        })
    });
    g.finish();
}

fn bench_gae(c: &mut Criterion) {
    let n = 200;
    let rewards: Vec<f32> = (0..n).map(|t| if t % 67 == 66 { 1.0 } else { 0.0 }).collect();
    let values: Vec<f32> = (0..n).map(|t| (t as f32 / n as f32).sin() * 0.3).collect();
    let dones: Vec<f32> = (0..n).map(|t| if t % 67 == 66 { 1.0 } else { 0.0 }).collect();

    let mut g = c.benchmark_group("gae");
    g.throughput(Throughput::Elements(n as u64));
    g.bench_function("recursion_t200", |bch| {
        bch.iter(|| {
            compute_gae(
                std::hint::black_box(&rewards),
                &values,
                &dones,
                0.1,
                0.999,
                0.95,
            )
        })
    });
    g.finish();
}

criterion_group!(benches, bench_net, bench_ddim, bench_env, bench_gae);
criterion_main!(benches);
