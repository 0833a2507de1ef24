use std::time::Instant;

use super::record::{IterationStats, RunRecord, StrategyName};
use super::{check_dims, Session};
use crate::config::RunConfig;
use crate::decoder::Decode;
use crate::error::Result;
use crate::objectives::Objective;
use crate::pcn::{cowboys_sample, StreamBase, TargetSpec};
use crate::rng::{Purpose, StreamId};
use crate::tanimoto_gp::fit_inputs;
use crate::types::Fingerprint;

/// Zeroes each positive entry with probability `p`, keeping the original
/// when everything would be zeroed.
fn perturb(fp: &Fingerprint, p: f64, seed: u64, iteration: usize, batch_index: usize) -> Fingerprint {
    if p <= 0.0 {
        return fp.clone();
    }
    let mut rng = StreamId::new(Purpose::Perturbation).iteration(iteration).index(batch_index).stream(seed);
    let counts: Vec<u32> = fp.counts().iter().map(|&c| if c > 0 && rng.uniform() < p { 0 } else { c }).collect();
    let out = Fingerprint::new(counts);
    if out.is_zero() {
        fp.clone()
    } else {
        out
    }
}

/// GP-conditioned generative sampling: an initial design of `N_init`
/// decoded prior draws, then `N − N_init` iterations that each fit the
/// Tanimoto GP, draw `B` structures from the improvement-conditioned decoder
/// and evaluate them.
pub fn cowboys_run<D: Decode, O: Objective>(config: &RunConfig, decoder: &D, objective: &O) -> Result<RunRecord> {
    config.validate()?;
    check_dims(config, decoder)?;
    let mut session = Session::new(config, decoder, objective);
    session.prior_design(config.init_size)?;

    let p = config.perturb.probability;
    let seed = config.seed;
    let mut gp_inputs: Vec<Fingerprint> = session
        .dataset
        .evaluations()
        .iter()
        .map(|e| perturb(&e.structure.fingerprint, p, seed, e.iteration, e.batch_index))
        .collect();
    let sampler = config.sampler_config();

    for n in config.init_size + 1..=config.budget {
        let start = Instant::now();
        let calls_before = session.counters.decoder_calls();
        let predicts_before = session.counters.gp_predicts();

        let targets: Vec<f64> = session.dataset.evaluations().iter().map(|e| e.y).collect();
        let posterior = fit_inputs(gp_inputs.clone(), targets, &config.gp)?;
        let f_star = session.dataset.best()?;
        let fitted = Instant::now();
        session.times.fit += fitted - start;

        let incumbent = session.dataset.incumbent().expect("dataset is non-empty");
        let (z_best, x_best) = (incumbent.latent.clone(), incumbent.structure.clone());
        let target =
            TargetSpec::new(&posterior, decoder, f_star, config.pcn.acceptance_mode).with_counters(&session.counters);
        let sample = cowboys_sample(
            &target,
            &z_best,
            Some(&x_best),
            config.batch_size,
            config.chains(),
            config.steps(),
            &sampler,
            StreamBase { master_seed: seed, iteration: n },
        )?;
        let sampled = Instant::now();
        session.times.sample += sampled - fitted;

        let ys = session.evaluate(n, &sample.structures)?;
        for (b, ((x, z), y)) in sample.structures.iter().zip(&sample.latents).zip(ys).enumerate() {
            gp_inputs.push(perturb(&x.fingerprint, p, seed, n, b));
            session.push(n, b, x.clone(), z.clone(), y)?;
        }
        session.times.evaluate += sampled.elapsed();

        let calls = session.counters.decoder_calls();
        let predicts = session.counters.gp_predicts();
        let beta_final = sample.mean_final_beta();
        session.iterations.push(IterationStats {
            iteration: n,
            f_star: Some(f_star),
            accept_rate: Some(sample.acceptance_rate()),
            beta_final: Some(beta_final),
            final_betas: sample.final_betas.clone(),
            restarts: Some(sample.restarts()),
            fallbacks: Some(sample.fallbacks),
            candidates: Some(sample.candidates),
            decoder_calls: calls - calls_before,
            gp_predicts: predicts - predicts_before,
            decoder_calls_cum: calls,
            gp_predicts_cum: predicts,
            wall: start.elapsed(),
        });
    }
    Ok(session.finish(StrategyName::Cowboys))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::DecoderSpec;
    use crate::objectives::ObjectiveSpec;
    use crate::optimizer::random_search_run;

    fn setup(budget: usize, init: usize, batch: usize) -> (RunConfig, DecoderSpec, ObjectiveSpec) {
        let mut config = RunConfig::new(6, 24, budget, init);
        config.seed = 3;
        config.batch_size = batch;
        config.pcn.steps = Some(30);
        config.decoder.seed = 1;
        config.objective.seed = 2;
        let decoder = config.decoder_spec().unwrap();
        let objective = config.objective_spec(&decoder).unwrap();
        (config, decoder, objective)
    }

    #[test]
    fn budget_exact_with_batches() {
        let (config, dec, obj) = setup(8, 4, 3);
        let record = cowboys_run(&config, &dec, &obj).unwrap();
        assert_eq!(record.evaluations.len(), 4 + 4 * 3);
        let best = record.best_so_far();
        assert!(best.windows(2).all(|w| w[0] <= w[1]));
        for it in record.iterations.iter().filter(|s| s.iteration > 4) {
            let bound = (config.chains() * config.steps() * config.pcn.max_restarts + config.batch_size) as u64;
            assert!(it.decoder_calls <= bound, "{} > {bound}", it.decoder_calls);
            assert!(it.f_star.is_some());
        }
    }

    #[test]
    fn degenerate_budget_equals_random_search() {
        let (config, dec, obj) = setup(5, 5, 1);
        let a = cowboys_run(&config, &dec, &obj).unwrap();
        let b = random_search_run(&config, &dec, &obj).unwrap();
        let ys = |r: &RunRecord| r.evaluations.iter().map(|e| e.y).collect::<Vec<_>>();
        assert_eq!(ys(&a), ys(&b));
    }

    #[test]
    fn shares_initial_design_with_random_search() {
        let (config, dec, obj) = setup(7, 3, 1);
        let a = cowboys_run(&config, &dec, &obj).unwrap();
        let b = random_search_run(&config, &dec, &obj).unwrap();
        for (x, y) in a.evaluations.iter().zip(&b.evaluations).take(3) {
            assert_eq!(x.latent, y.latent);
            assert_eq!(x.y, y.y);
        }
    }

    #[test]
    fn repeatable() {
        let (config, dec, obj) = setup(7, 3, 2);
        let a = cowboys_run(&config, &dec, &obj).unwrap();
        let b = cowboys_run(&config, &dec, &obj).unwrap();
        assert_eq!(a.best_so_far(), b.best_so_far());
        assert_eq!(a.decoder_calls, b.decoder_calls);
    }

    #[test]
    fn perturbation_keeps_nonzero() {
        let fp = Fingerprint::new(vec![1, 0, 2, 0]);
        for it in 0..50 {
            assert!(!perturb(&fp, 1.0, 0, it, 0).is_zero());
            let q = perturb(&fp, 0.5, 0, it, 0);
            assert!(q.counts().iter().zip(fp.counts()).all(|(a, b)| *a == 0 || a == b));
        }
        assert_eq!(perturb(&fp, 0.0, 0, 1, 0), fp);
    }

    #[test]
    fn perturbation_run_completes() {
        let (mut config, dec, obj) = setup(6, 3, 1);
        config.perturb.probability = 0.5;
        let record = cowboys_run(&config, &dec, &obj).unwrap();
        assert_eq!(record.evaluations.len(), 6);
    }
}
