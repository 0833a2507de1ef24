use std::time::Duration;

use serde::Serialize;

use crate::config::RunConfig;
use crate::types::Evaluation;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyName {
    Cowboys,
    Lsbo,
    Random,
}

impl StrategyName {
    pub fn as_str(self) -> &'static str {
        match self {
            StrategyName::Cowboys => "cowboys",
            StrategyName::Lsbo => "lsbo",
            StrategyName::Random => "random",
        }
    }
}

/// Statistics for one outer iteration. Sampler fields are `None` where the
/// strategy or phase has no sampler.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterationStats {
    pub iteration: usize,
    /// Incumbent before this iteration's evaluations.
    pub f_star: Option<f64>,
    pub accept_rate: Option<f64>,
    /// Mean final β across the last round's chains.
    pub beta_final: Option<f64>,
    pub final_betas: Vec<f64>,
    pub restarts: Option<usize>,
    pub fallbacks: Option<usize>,
    pub candidates: Option<usize>,
    /// Cost spent in this iteration.
    pub decoder_calls: u64,
    pub gp_predicts: u64,
    /// Cumulative costs after this iteration.
    pub decoder_calls_cum: u64,
    pub gp_predicts_cum: u64,
    #[serde(skip)]
    pub wall: Duration,
}

impl IterationStats {
    pub(crate) fn design(iteration: usize, decoder_calls_cum: u64, gp_predicts_cum: u64) -> Self {
        IterationStats {
            iteration,
            f_star: None,
            accept_rate: None,
            beta_final: None,
            final_betas: Vec::new(),
            restarts: None,
            fallbacks: None,
            candidates: None,
            decoder_calls: 1,
            gp_predicts: 0,
            decoder_calls_cum,
            gp_predicts_cum,
            wall: Duration::ZERO,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct PhaseTimes {
    #[serde(serialize_with = "as_millis")]
    pub design: Duration,
    #[serde(serialize_with = "as_millis")]
    pub fit: Duration,
    #[serde(serialize_with = "as_millis")]
    pub sample: Duration,
    #[serde(serialize_with = "as_millis")]
    pub evaluate: Duration,
}

fn as_millis<S: serde::Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(d.as_secs_f64() * 1e3)
}

/// Everything a run produced, in evaluation order.
#[derive(Clone, Debug, Serialize)]
pub struct RunRecord {
    pub strategy: StrategyName,
    pub config: RunConfig,
    pub evaluations: Vec<Evaluation>,
    pub iterations: Vec<IterationStats>,
    pub decoder_calls: u64,
    pub gp_predicts: u64,
    pub phase_times: PhaseTimes,
    /// Diagnostic notes raised during the run.
    pub warnings: Vec<String>,
}

impl RunRecord {
    pub fn best(&self) -> Option<&Evaluation> {
        let mut best: Option<&Evaluation> = None;
        for e in &self.evaluations {
            if best.is_none_or(|b| e.y > b.y) {
                best = Some(e);
            }
        }
        best
    }

    pub fn final_best(&self) -> f64 {
        self.best().map_or(f64::NAN, |e| e.y)
    }

    /// Running maximum of `y`, one entry per evaluation.
    pub fn best_so_far(&self) -> Vec<f64> {
        let mut best = f64::NEG_INFINITY;
        self.evaluations
            .iter()
            .map(|e| {
                best = best.max(e.y);
                best
            })
            .collect()
    }

    pub fn stats_for(&self, iteration: usize) -> Option<&IterationStats> {
        self.iterations.binary_search_by_key(&iteration, |s| s.iteration).ok().map(|i| &self.iterations[i])
    }
}
