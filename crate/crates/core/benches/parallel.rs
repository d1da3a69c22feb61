//! Sequential against parallel execution for the data-parallel hot paths.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gnndm::classify::{predict_chunked, ClassifierConfig, ClassifierModel};
use gnndm::genlatent::{train_vae, VaeConfig};
use gnndm::nns::{batch_nns, NnsParams};
use gnndm::numcore::Tensor;
use gnndm::seed::rng_from_seed;
use gnndm::synthgen::{make_domains, GeneratorConfig};
use gnndm::theorylab::{bayes_risk, BayesMode};
use gnndm::Execution;
use rand::Rng;
use rand_distr::StandardNormal;

const MODES: [Execution; 2] = [Execution::Sequential, Execution::Parallel];

fn unit_rows(n: usize, m: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng_from_seed(seed);
    (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            v.into_iter().map(|a| a / norm).collect()
        })
        .collect()
}

fn nns(c: &mut Criterion) {
    let bank = Tensor::from_rows(&unit_rows(400, 8, 1)).unwrap();
    let (vae, _) = train_vae(
        &bank,
        &VaeConfig {
            epochs: 20,
            hidden: 32,
            latent_dim: 4,
            ..Default::default()
        },
    )
    .unwrap();
    let targets = unit_rows(32, 8, 2);
    let mut group = c.benchmark_group("batch_nns");
    group.sample_size(10);
    for exec in MODES {
        let params = NnsParams {
            restarts: 4,
            max_iter: 100,
            execution: exec,
            ..Default::default()
        };
        group.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &params, |b, p| {
            b.iter(|| batch_nns(&vae, &targets, p).unwrap())
        });
    }
    group.finish();
}

fn bayes_mc(c: &mut Criterion) {
    let ds = make_domains(&GeneratorConfig {
        noise_rate: 0.1,
        ..Default::default()
    })
    .unwrap();
    let mut group = c.benchmark_group("bayes_risk_mc");
    group.sample_size(10);
    for exec in MODES {
        group.bench_function(format!("{exec:?}"), |b| {
            b.iter(|| {
                bayes_risk(
                    ds.descriptor(),
                    &[0.5, 0.5],
                    BayesMode::MonteCarlo {
                        samples: 100_000,
                        seed: 3,
                    },
                    exec,
                )
                .unwrap()
            })
        });
    }
    group.finish();
}

fn predict(c: &mut Criterion) {
    let model = ClassifierModel::init(16, 3, &ClassifierConfig::default()).unwrap();
    let x = Tensor::from_rows(&unit_rows(20_000, 16, 4)).unwrap();
    let mut group = c.benchmark_group("predict_chunked");
    group.sample_size(10);
    for exec in MODES {
        group.bench_function(format!("{exec:?}"), |b| {
            b.iter(|| predict_chunked(&model, &x, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, nns, bayes_mc, predict);
criterion_main!(benches);
