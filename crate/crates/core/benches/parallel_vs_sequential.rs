//! Single worker vs the full rayon pool on the three hot loops.
//! With `--no-default-features` both variants run sequentially.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use cowboys::config::RunConfig;
use cowboys::decoder::{Decode, DecoderSpec};
use cowboys::objectives::{Objective, ObjectiveSpec};
use cowboys::parallel::with_workers;
use cowboys::pcn::{cowboys_sample, StreamBase, TargetSpec};
use cowboys::rng::derive_stream;
use cowboys::tanimoto_gp::{fit_inputs, qei_greedy_select, similarity_matrix, GpPosterior};
use cowboys::validation::random_fingerprint;
use cowboys::{LatentVector, Structure};

const VARIANTS: [(&str, Option<usize>); 2] = [("sequential", Some(1)), ("parallel", None)];

struct Problem {
    config: RunConfig,
    decoder: DecoderSpec,
    posterior: GpPosterior,
    f_star: f64,
    z_best: LatentVector,
    x_best: Structure,
}

fn problem() -> Problem {
    let mut config = RunConfig::new(16, 64, 100, 60);
    config.seed = 7;
    config.batch_size = 4;
    config.pcn.chains = Some(16);
    config.pcn.steps = Some(50);
    let decoder = config.decoder_spec().unwrap();
    let objective: ObjectiveSpec = config.objective_spec(&decoder).unwrap();
    let mut rng = derive_stream(7, 0);
    let mut data = Vec::new();
    for _ in 0..config.init_size {
        let z = rng.prior_latent(16);
        let x = decoder.decode_map(&z).unwrap();
        let y = objective.evaluate(&x).unwrap();
        data.push((z, x, y));
    }
    let best = data.iter().max_by(|a, b| a.2.total_cmp(&b.2)).unwrap().clone();
    let inputs = data.iter().map(|d| d.1.fingerprint.clone()).collect();
    let targets = data.iter().map(|d| d.2).collect();
    let posterior = fit_inputs(inputs, targets, &config.gp).unwrap();
    Problem { config, decoder, posterior, f_star: best.2, z_best: best.0, x_best: best.1 }
}

fn gram(c: &mut Criterion) {
    let mut rng = derive_stream(1, 0);
    let inputs: Vec<_> = (0..400).map(|_| random_fingerprint(256, 4, &mut rng)).collect();
    let mut group = c.benchmark_group("similarity_matrix_400x256");
    for (name, workers) in VARIANTS {
        group.bench_function(name, |b| {
            b.iter(|| with_workers(workers, || similarity_matrix(black_box(&inputs)).unwrap()))
        });
    }
    group.finish();
}

fn chains(c: &mut Criterion) {
    let p = problem();
    let target = TargetSpec::new(&p.posterior, &p.decoder, p.f_star, p.config.pcn.acceptance_mode);
    let sampler = p.config.sampler_config();
    let mut group = c.benchmark_group("cowboys_sample_16x50");
    group.sample_size(20);
    for (name, workers) in VARIANTS {
        group.bench_function(name, |b| {
            b.iter(|| {
                with_workers(workers, || {
                    cowboys_sample(
                        &target,
                        &p.z_best,
                        Some(&p.x_best),
                        4,
                        16,
                        50,
                        &sampler,
                        StreamBase { master_seed: 7, iteration: 61 },
                    )
                    .unwrap()
                })
            })
        });
    }
    group.finish();
}

fn qei(c: &mut Criterion) {
    let p = problem();
    let mut rng = derive_stream(3, 0);
    let candidates: Vec<Structure> = (0..200).map(|_| Structure::new(random_fingerprint(64, 2, &mut rng))).collect();
    let mut group = c.benchmark_group("qei_greedy");
    group.sample_size(20);
    for (name, workers) in VARIANTS {
        group.bench_with_input(BenchmarkId::new(name, "200x4"), &candidates, |b, cands| {
            b.iter(|| {
                with_workers(workers, || {
                    qei_greedy_select(&p.posterior, cands, p.f_star, 4, 512, &mut derive_stream(4, 0)).unwrap()
                })
            })
        });
    }
    group.finish();
}

criterion_group!(benches, gram, chains, qei);
criterion_main!(benches);
