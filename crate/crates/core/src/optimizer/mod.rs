//! Outer optimization loops: COWBOYS, the latent-space baseline and random
//! search.
//!
//! All three share the evaluation plumbing below. Iterations are numbered
//! from 1; the initial design occupies iterations `1..=N_init` with one
//! evaluation each, and every later COWBOYS iteration contributes a batch of
//! `B`. Within an iteration, decoding and objective evaluation run
//! concurrently and are merged in batch order.

mod cowboys;
mod lsbo;
mod record;

use std::time::Instant;

pub use cowboys::cowboys_run;
pub use lsbo::{halton_design, lsbo_run, LatentGp};
pub use record::{IterationStats, PhaseTimes, RunRecord, StrategyName};

use crate::config::RunConfig;
use crate::decoder::{Decode, Decoder};
use crate::error::{Error, Result};
use crate::objectives::Objective;
use crate::parallel;
use crate::pcn::CostCounters;
use crate::rng::{Purpose, StreamId};
use crate::types::{Dataset, Evaluation, LatentVector, Structure};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Strategy {
    Cowboys,
    Lsbo { delta: f64 },
    Random,
}

impl Strategy {
    pub fn name(self) -> StrategyName {
        match self {
            Strategy::Cowboys => StrategyName::Cowboys,
            Strategy::Lsbo { .. } => StrategyName::Lsbo,
            Strategy::Random => StrategyName::Random,
        }
    }
}

/// Runs `strategy` with a decoder and objective supplied by the caller.
/// `workers` caps the thread count; `None` uses all cores.
pub fn run_with<D: Decode, O: Objective>(
    strategy: Strategy,
    config: &RunConfig,
    decoder: &D,
    objective: &O,
    workers: Option<usize>,
) -> Result<RunRecord> {
    parallel::with_workers(workers, || match strategy {
        Strategy::Cowboys => cowboys_run(config, decoder, objective),
        Strategy::Lsbo { delta } => lsbo_run(config, delta, decoder, objective),
        Strategy::Random => random_search_run(config, decoder, objective),
    })
}

/// Builds the decoder and objective described by `config` and runs.
pub fn run(strategy: Strategy, config: &RunConfig, workers: Option<usize>) -> Result<RunRecord> {
    config.validate()?;
    let decoder = Decoder::launch(config.decoder_spec()?, config.chains())?;
    let objective = config.objective_spec(&decoder)?;
    run_with(strategy, config, &decoder, &objective, workers)
}

/// `N` decoded prior draws, no model.
pub fn random_search_run<D: Decode, O: Objective>(config: &RunConfig, decoder: &D, objective: &O) -> Result<RunRecord> {
    config.validate()?;
    check_dims(config, decoder)?;
    let mut session = Session::new(config, decoder, objective);
    session.prior_design(config.budget)?;
    Ok(session.finish(StrategyName::Random))
}

fn check_dims<D: Decode>(config: &RunConfig, decoder: &D) -> Result<()> {
    if decoder.latent_dim() != config.latent_dim {
        return Err(Error::DimensionMismatch {
            what: "decoder latent_dim",
            expected: config.latent_dim,
            actual: decoder.latent_dim(),
        });
    }
    if decoder.fingerprint_len() != config.fingerprint_len {
        return Err(Error::DimensionMismatch {
            what: "decoder fingerprint_len",
            expected: config.fingerprint_len,
            actual: decoder.fingerprint_len(),
        });
    }
    Ok(())
}

/// Latent for initial-design iteration `n`, shared by COWBOYS and random
/// search so both start from the same points.
pub fn design_latent(seed: u64, iteration: usize, dim: usize) -> LatentVector {
    StreamId::new(Purpose::InitialDesign).iteration(iteration).stream(seed).prior_latent(dim)
}

pub(crate) struct Session<'a, D, O> {
    pub config: &'a RunConfig,
    pub decoder: &'a D,
    pub objective: &'a O,
    pub dataset: Dataset,
    pub counters: CostCounters,
    pub iterations: Vec<IterationStats>,
    pub times: PhaseTimes,
    pub warnings: Vec<String>,
}

impl<'a, D: Decode, O: Objective> Session<'a, D, O> {
    pub fn new(config: &'a RunConfig, decoder: &'a D, objective: &'a O) -> Self {
        Session {
            config,
            decoder,
            objective,
            dataset: Dataset::new(),
            counters: CostCounters::new(),
            iterations: Vec::new(),
            times: PhaseTimes::default(),
            warnings: Vec::new(),
        }
    }

    /// Iterations `1..=count`: decode a prior draw and evaluate it.
    pub fn prior_design(&mut self, count: usize) -> Result<()> {
        let latents: Vec<LatentVector> =
            (1..=count).map(|n| design_latent(self.config.seed, n, self.config.latent_dim)).collect();
        self.latent_design(latents)
    }

    /// One single-evaluation iteration per latent, numbered from 1.
    pub fn latent_design(&mut self, latents: Vec<LatentVector>) -> Result<()> {
        let start = Instant::now();
        let decoder = self.decoder;
        let structures =
            parallel::map_slice(&latents, |z| decoder.decode_map(z)).into_iter().collect::<Result<Vec<_>>>()?;
        self.counters.add_decoder_calls(latents.len() as u64);
        let first = self.dataset.len() + 1;
        let ys = self.evaluate(first, &structures)?;
        let base_calls = self.counters.decoder_calls() - latents.len() as u64;
        let predicts = self.counters.gp_predicts();
        let wall = start.elapsed() / latents.len().max(1) as u32;
        for (i, ((x, z), y)) in structures.into_iter().zip(latents).zip(ys).enumerate() {
            let iteration = first + i;
            self.push(iteration, 0, x, z, y)?;
            let mut stats = IterationStats::design(iteration, base_calls + i as u64 + 1, predicts);
            stats.wall = wall;
            self.iterations.push(stats);
        }
        self.times.design += start.elapsed();
        Ok(())
    }

    /// Evaluates a batch in parallel; results are in batch order.
    pub fn evaluate(&self, iteration: usize, structures: &[Structure]) -> Result<Vec<f64>> {
        let objective = self.objective;
        parallel::map_slice(structures, |x| objective.evaluate(x))
            .into_iter()
            .enumerate()
            .map(|(b, r)| {
                r.map_err(|e| match e {
                    Error::Objective(msg) => Error::Objective(format!("iteration {iteration}, batch {b}: {msg}")),
                    other => Error::Objective(format!("iteration {iteration}, batch {b}: {other}")),
                })
            })
            .collect()
    }

    pub fn push(
        &mut self,
        iteration: usize,
        batch_index: usize,
        structure: Structure,
        latent: LatentVector,
        y: f64,
    ) -> Result<()> {
        self.dataset.push(Evaluation { structure, y, iteration, batch_index, latent })
    }

    pub fn finish(self, strategy: StrategyName) -> RunRecord {
        RunRecord {
            strategy,
            config: self.config.clone(),
            evaluations: self.dataset.into_evaluations(),
            iterations: self.iterations,
            decoder_calls: self.counters.decoder_calls(),
            gp_predicts: self.counters.gp_predicts(),
            phase_times: self.times,
            warnings: self.warnings,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::DecoderSpec;
    use crate::objectives::ObjectiveSpec;

    fn setup(budget: usize, init: usize) -> (RunConfig, DecoderSpec, ObjectiveSpec) {
        let mut config = RunConfig::new(4, 16, budget, init);
        config.seed = 11;
        config.decoder.seed = 5;
        config.objective.seed = 6;
        let decoder = config.decoder_spec().unwrap();
        let objective = config.objective_spec(&decoder).unwrap();
        (config, decoder, objective)
    }

    #[test]
    fn random_search_counts_and_monotone_best() {
        let (config, dec, obj) = setup(12, 3);
        let record = random_search_run(&config, &dec, &obj).unwrap();
        assert_eq!(record.evaluations.len(), 12);
        assert_eq!(record.decoder_calls, 12);
        let best = record.best_so_far();
        assert!(best.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(record.iterations.len(), 12);
        assert_eq!(record.iterations[11].decoder_calls_cum, 12);
    }

    #[test]
    fn single_evaluation_budget() {
        let (config, dec, obj) = setup(1, 1);
        assert_eq!(random_search_run(&config, &dec, &obj).unwrap().evaluations.len(), 1);
    }

    struct Constant(f64);
    impl Objective for Constant {
        fn evaluate(&self, _: &Structure) -> Result<f64> {
            Ok(self.0)
        }
    }

    #[test]
    fn constant_objective_best_after_one() {
        let (config, dec, _) = setup(5, 1);
        let record = random_search_run(&config, &dec, &Constant(2.5)).unwrap();
        assert_eq!(record.best_so_far()[0], 2.5);
        assert_eq!(record.best().unwrap().iteration, 1);
    }

    struct Failing;
    impl Objective for Failing {
        fn evaluate(&self, _: &Structure) -> Result<f64> {
            Err(Error::Objective("oracle offline".into()))
        }
    }

    #[test]
    fn objective_failure_has_context() {
        let (config, dec, _) = setup(3, 1);
        let err = random_search_run(&config, &dec, &Failing).unwrap_err().to_string();
        assert!(err.contains("iteration 1") && err.contains("oracle offline"), "{err}");
    }
}
