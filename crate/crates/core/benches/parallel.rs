use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use reflect_core::calibration::{monte_carlo_relative_errors, SweepConfig};
use reflect_core::dataset::Split;
use reflect_core::demo::{generate, DemoConfig};
use reflect_core::grasp::{run_protocol, MethodBinding, ProtocolConfig};
use reflect_core::head::{gradient_check, HeadParams};
use reflect_core::par::Exec;
use reflect_core::{Reflectance, SensorIntrinsics};

const POLICIES: [(&str, Exec); 2] = [
    ("sequential", Exec::Sequential),
    ("parallel", Exec::Parallel),
];

fn batch(dim: usize, n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs = (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let ys = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    (xs, ys)
}

fn calibration_monte_carlo(c: &mut Criterion) {
    let cfg = SweepConfig {
        noise_rel: 0.01,
        ..SweepConfig::default()
    };
    let seeds: Vec<u64> = (0..100).collect();
    let alpha = Reflectance::new(0.4).unwrap();
    let mut g = c.benchmark_group("calibration_monte_carlo");
    for (name, exec) in POLICIES {
        g.bench_function(name, |b| {
            b.iter(|| {
                monte_carlo_relative_errors(&SensorIntrinsics::EXAMPLE, alpha, &cfg, &seeds, exec)
                    .unwrap()
            })
        });
    }
    g.finish();
}

fn gradient_checks(c: &mut Criterion) {
    let mut g = c.benchmark_group("gradient_check");
    g.sample_size(10);
    for dim in [8, 512, 1024] {
        let params = HeadParams::init(dim, 32, 1);
        let (xs, ys) = batch(dim, 8, 2);
        for (name, exec) in POLICIES {
            g.bench_with_input(BenchmarkId::new(name, dim), &dim, |b, _| {
                b.iter(|| gradient_check(&params, &xs, &ys, exec).unwrap())
            });
        }
    }
    g.finish();
}

fn batch_predict(c: &mut Criterion) {
    let params = HeadParams::init(1024, 32, 3);
    let (xs, _) = batch(1024, 2048, 4);
    let mut g = c.benchmark_group("batch_predict");
    for (name, exec) in POLICIES {
        g.bench_function(name, |b| {
            b.iter(|| params.predict_batch(&xs, exec).unwrap())
        });
    }
    g.finish();
}

fn grasp_protocol(c: &mut Criterion) {
    let data = generate(&DemoConfig {
        embedding_dim: 8,
        ..DemoConfig::default()
    })
    .unwrap();
    let m = &data.manifest;
    let objects: Vec<_> = m.objects_in(Split::Test).collect();
    let methods = vec![
        MethodBinding::fixed(0.5),
        MethodBinding::fixed(1.0),
        MethodBinding::ground_truth(),
    ];
    let mut g = c.benchmark_group("grasp_protocol");
    for (name, exec) in POLICIES {
        let cfg = ProtocolConfig {
            repetitions: 200,
            noise_rel: 0.01,
            exec,
            ..ProtocolConfig::default()
        };
        g.bench_function(name, |b| {
            b.iter(|| run_protocol(m, &objects, &methods, &cfg).unwrap())
        });
    }
    g.finish();
}

criterion_group!(
    benches,
    calibration_monte_carlo,
    gradient_checks,
    batch_predict,
    grasp_protocol
);
criterion_main!(benches);
