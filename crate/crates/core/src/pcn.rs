//! Preconditioned Crank–Nicolson sampling of latent codes conditioned on the
//! GP predicting an improvement, plus an exact rejection sampler used as a
//! validation oracle.
//!
//! The target is `p(z | improvement) ∝ P(f(h(z)) > f* | D) · N(z; 0, I)`.
//! PCN proposals `z′ = √(1−β²) z + β ε` leave the Gaussian prior invariant.
//! Two acceptance rules are available:
//!
//! * [`AcceptanceMode::Paper`]: `min(1, L(z′)p(z′) / (L(z)p(z)))`, i.e. the
//!   prior ratio is applied on top of a prior-reversible proposal. The
//!   resulting chain targets `L(z) p(z)²`.
//! * [`AcceptanceMode::StandardPcn`]: `min(1, L(z′)/L(z))`, which targets the
//!   conditioned posterior exactly.
//!
//! The step size adapts after every step as `β ← β + γ (α − α*)`, clamped to
//! `[beta_min, beta_max]`.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::decoder::Decode;
use crate::error::{Error, Result};
use crate::normal;
use crate::parallel;
use crate::rng::{Purpose, RngStream, StreamId};
use crate::tanimoto_gp::{qei_greedy_select, GpPosterior};
use crate::types::{Fingerprint, LatentVector, Structure};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcceptanceMode {
    #[default]
    Paper,
    StandardPcn,
}

/// Log-likelihood at a latent, with the decoded structure when the target
/// decodes.
#[derive(Clone, Debug)]
pub struct Scored {
    pub log_lik: f64,
    pub structure: Option<Structure>,
}

pub trait LatentTarget: Sync {
    fn evaluate(&self, z: &LatentVector) -> Result<Scored>;

    fn acceptance_mode(&self) -> AcceptanceMode;

    fn log_likelihood(&self, z: &LatentVector) -> Result<f64> {
        self.evaluate(z).map(|s| s.log_lik)
    }
}

/// A latent target backed by a decoder and a GP posterior, as needed for
/// batch sampling.
pub trait ImprovementTarget: LatentTarget {
    fn decode(&self, z: &LatentVector) -> Result<Structure>;
    /// Log-likelihood of an already decoded structure.
    fn log_likelihood_of(&self, x: &Structure) -> Result<f64>;
    fn posterior(&self) -> &GpPosterior;
    fn f_star(&self) -> f64;
    /// Accounts GP predictions made outside [`LatentTarget::evaluate`].
    fn record_predicts(&self, _n: u64) {}
}

/// Decoder calls and GP predictions, safe to bump from concurrent chains.
#[derive(Debug, Default)]
pub struct CostCounters {
    decoder_calls: AtomicU64,
    gp_predicts: AtomicU64,
}

impl CostCounters {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_decoder_calls(&self, n: u64) {
        self.decoder_calls.fetch_add(n, Ordering::Relaxed);
    }

    pub fn add_gp_predicts(&self, n: u64) {
        self.gp_predicts.fetch_add(n, Ordering::Relaxed);
    }

    pub fn decoder_calls(&self) -> u64 {
        self.decoder_calls.load(Ordering::Relaxed)
    }

    pub fn gp_predicts(&self) -> u64 {
        self.gp_predicts.load(Ordering::Relaxed)
    }
}

/// The improvement-conditioned latent target: decoder, posterior and `f*`.
pub struct TargetSpec<'a, D: Decode> {
    pub posterior: &'a GpPosterior,
    pub decoder: &'a D,
    pub f_star: f64,
    pub acceptance_mode: AcceptanceMode,
    pub counters: Option<&'a CostCounters>,
}

impl<'a, D: Decode> TargetSpec<'a, D> {
    pub fn new(posterior: &'a GpPosterior, decoder: &'a D, f_star: f64, acceptance_mode: AcceptanceMode) -> Self {
        TargetSpec { posterior, decoder, f_star, acceptance_mode, counters: None }
    }

    pub fn with_counters(mut self, counters: &'a CostCounters) -> Self {
        self.counters = Some(counters);
        self
    }

    fn predict_log_pi(&self, fp: &Fingerprint) -> Result<f64> {
        if let Some(c) = self.counters {
            c.add_gp_predicts(1);
        }
        self.posterior.log_prob_improvement(fp, self.f_star)
    }
}

impl<D: Decode> LatentTarget for TargetSpec<'_, D> {
    /// `log Φ((μ(x) − f*)/σ(x))` at `x = h(z)`.
    fn evaluate(&self, z: &LatentVector) -> Result<Scored> {
        let x = self.decode(z)?;
        let log_lik = self.predict_log_pi(&x.fingerprint)?;
        Ok(Scored { log_lik, structure: Some(x) })
    }

    fn acceptance_mode(&self) -> AcceptanceMode {
        self.acceptance_mode
    }
}

impl<D: Decode> ImprovementTarget for TargetSpec<'_, D> {
    fn decode(&self, z: &LatentVector) -> Result<Structure> {
        if let Some(c) = self.counters {
            c.add_decoder_calls(1);
        }
        self.decoder.decode_map(z)
    }

    fn log_likelihood_of(&self, x: &Structure) -> Result<f64> {
        self.predict_log_pi(&x.fingerprint)
    }

    fn posterior(&self) -> &GpPosterior {
        self.posterior
    }

    fn f_star(&self) -> f64 {
        self.f_star
    }

    fn record_predicts(&self, n: u64) {
        if let Some(c) = self.counters {
            c.add_gp_predicts(n);
        }
    }
}

/// Log-likelihood of a structure under a posterior, as used by the target.
pub fn log_likelihood(posterior: &GpPosterior, x: &Structure, f_star: f64) -> Result<f64> {
    let p = posterior.predict(&x.fingerprint)?;
    Ok(normal::log_prob_improvement(p.mean, p.var, f_star))
}

/// `z′ = √(1−β²)·z + β·ε`, `ε ~ N(0, I)`.
pub fn pcn_propose(z: &LatentVector, beta: f64, rng: &mut RngStream) -> LatentVector {
    let keep = (1.0 - beta * beta).max(0.0).sqrt();
    let coords = z.coords().iter().map(|&c| keep * c + beta * rng.standard_normal()).collect();
    LatentVector::from_finite(coords)
}

fn log_prior(z: &LatentVector) -> f64 {
    -0.5 * z.norm_sq()
}

/// Acceptance probability from cached log-likelihoods.
///
/// A proposal with zero likelihood is never accepted; leaving a zero
/// likelihood state is always accepted.
pub fn acceptance_probability(
    mode: AcceptanceMode,
    log_lik_current: f64,
    log_lik_proposal: f64,
    z_current: &LatentVector,
    z_proposal: &LatentVector,
) -> f64 {
    if log_lik_proposal == f64::NEG_INFINITY || log_lik_proposal.is_nan() {
        return 0.0;
    }
    if log_lik_current == f64::NEG_INFINITY {
        return 1.0;
    }
    let mut log_ratio = log_lik_proposal - log_lik_current;
    if mode == AcceptanceMode::Paper {
        log_ratio += log_prior(z_proposal) - log_prior(z_current);
    }
    log_ratio.min(0.0).exp()
}

pub fn accept_prob<T: LatentTarget + ?Sized>(
    target: &T,
    z_current: &LatentVector,
    z_proposal: &LatentVector,
) -> Result<f64> {
    let lc = target.log_likelihood(z_current)?;
    let lp = target.log_likelihood(z_proposal)?;
    Ok(acceptance_probability(target.acceptance_mode(), lc, lp, z_current, z_proposal))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub beta_init: f64,
    pub target_accept: f64,
    pub adapt_gain: f64,
    pub beta_min: f64,
    pub beta_max: f64,
    /// Also keep the with-repeats trajectory (every post-step state).
    pub record_trajectory: bool,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            beta_init: 0.1,
            target_accept: 0.243,
            adapt_gain: 0.1,
            beta_min: 1e-4,
            beta_max: 0.999,
            record_trajectory: false,
        }
    }
}

impl ChainConfig {
    pub fn frozen(&self) -> Self {
        ChainConfig { adapt_gain: 0.0, ..self.clone() }
    }

    pub fn update_beta(&self, beta: f64, alpha: f64) -> f64 {
        (beta + self.adapt_gain * (alpha - self.target_accept)).clamp(self.beta_min, self.beta_max)
    }
}

/// One PCN chain.
#[derive(Clone, Debug)]
pub struct ChainState {
    pub z_current: LatentVector,
    pub log_lik_current: f64,
    pub beta: f64,
    pub rng: RngStream,
    /// States stored on acceptance only.
    pub accepted: Vec<LatentVector>,
    /// Decoded structures of `accepted`, when the target decodes.
    pub accepted_structures: Vec<Structure>,
    /// Every post-step state, when recording is enabled.
    pub trajectory: Vec<LatentVector>,
    pub accept_flags: Vec<bool>,
    pub n_proposed: usize,
    pub n_accepted: usize,
}

impl ChainState {
    pub fn start<T: LatentTarget + ?Sized>(target: &T, z: LatentVector, beta: f64, rng: RngStream) -> Result<Self> {
        let log_lik = target.log_likelihood(&z)?;
        Ok(Self::start_with(z, log_lik, beta, rng))
    }

    pub fn start_with(z: LatentVector, log_lik: f64, beta: f64, rng: RngStream) -> Self {
        ChainState {
            z_current: z,
            log_lik_current: log_lik,
            beta,
            rng,
            accepted: Vec::new(),
            accepted_structures: Vec::new(),
            trajectory: Vec::new(),
            accept_flags: Vec::new(),
            n_proposed: 0,
            n_accepted: 0,
        }
    }

    /// Runs `steps` propose/accept/adapt iterations.
    pub fn advance<T: LatentTarget + ?Sized>(&mut self, target: &T, steps: usize, config: &ChainConfig) -> Result<()> {
        let mode = target.acceptance_mode();
        for _ in 0..steps {
            let proposal = pcn_propose(&self.z_current, self.beta, &mut self.rng);
            let scored = target.evaluate(&proposal)?;
            let alpha = acceptance_probability(mode, self.log_lik_current, scored.log_lik, &self.z_current, &proposal);
            let u = self.rng.uniform();
            self.n_proposed += 1;
            let accepted = alpha > u;
            if accepted {
                self.n_accepted += 1;
                self.z_current = proposal;
                self.log_lik_current = scored.log_lik;
                self.accepted.push(self.z_current.clone());
                if let Some(x) = scored.structure {
                    self.accepted_structures.push(x);
                }
            }
            self.accept_flags.push(accepted);
            if config.record_trajectory {
                self.trajectory.push(self.z_current.clone());
            }
            self.beta = config.update_beta(self.beta, alpha);
        }
        Ok(())
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.n_proposed == 0 {
            0.0
        } else {
            self.n_accepted as f64 / self.n_proposed as f64
        }
    }

    /// Acceptance rate over the last `window` steps.
    pub fn trailing_acceptance(&self, window: usize) -> f64 {
        let tail = &self.accept_flags[self.accept_flags.len().saturating_sub(window)..];
        if tail.is_empty() {
            return 0.0;
        }
        tail.iter().filter(|&&a| a).count() as f64 / tail.len() as f64
    }
}

pub fn run_chain<T: LatentTarget + ?Sized>(
    target: &T,
    z_init: LatentVector,
    steps: usize,
    config: &ChainConfig,
    rng: RngStream,
) -> Result<ChainState> {
    let mut chain = ChainState::start(target, z_init, config.beta_init, rng)?;
    chain.advance(target, steps, config)?;
    Ok(chain)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub chain: ChainConfig,
    /// Maximum number of PCN rounds (the first one included) before padding
    /// with prior draws.
    pub max_restarts: usize,
    pub qei_mc_samples: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig { chain: ChainConfig::default(), max_restarts: 10, qei_mc_samples: 512 }
    }
}

/// Outcome of one batch-sampling call.
#[derive(Clone, Debug)]
pub struct BatchSample {
    pub structures: Vec<Structure>,
    /// Latent that generated each returned structure.
    pub latents: Vec<LatentVector>,
    pub rounds: usize,
    pub fallbacks: usize,
    pub candidates: usize,
    pub n_proposed: usize,
    pub n_accepted: usize,
    /// Final step size of each chain in the last round.
    pub final_betas: Vec<f64>,
}

impl BatchSample {
    pub fn restarts(&self) -> usize {
        self.rounds.saturating_sub(1)
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.n_proposed == 0 {
            0.0
        } else {
            self.n_accepted as f64 / self.n_proposed as f64
        }
    }

    pub fn mean_final_beta(&self) -> f64 {
        if self.final_betas.is_empty() {
            0.0
        } else {
            self.final_betas.iter().sum::<f64>() / self.final_betas.len() as f64
        }
    }
}

/// Where sampler streams come from: chain `c` of round `r` at iteration `n`
/// uses `StreamId(Chain, n, r, c)`.
#[derive(Clone, Copy, Debug)]
pub struct StreamBase {
    pub master_seed: u64,
    pub iteration: usize,
}

/// Draws `batch` structures from the improvement-conditioned decoder.
///
/// Runs `chains` PCN chains of `steps` steps from `z_best`, rerunning them
/// with fresh streams until at least `batch` distinct structures have been
/// accepted or `max_restarts` rounds are spent. Surplus candidates are cut
/// down by greedy qEI; a shortfall is padded with decoded prior draws.
#[allow(clippy::too_many_arguments)]
pub fn cowboys_sample<T: ImprovementTarget>(
    target: &T,
    z_best: &LatentVector,
    x_best: Option<&Structure>,
    batch: usize,
    chains: usize,
    steps: usize,
    config: &SamplerConfig,
    streams: StreamBase,
) -> Result<BatchSample> {
    if batch == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let start_log_lik = match x_best {
        Some(x) => target.log_likelihood_of(x)?,
        None => target.log_likelihood(z_best)?,
    };

    // First generating latent per fingerprint, in (round, chain, step) order.
    let mut seen: HashMap<Fingerprint, usize> = HashMap::new();
    let mut candidates: Vec<(Structure, LatentVector)> = Vec::new();
    let mut rounds = 0;
    let mut n_proposed = 0;
    let mut n_accepted = 0;
    let mut final_betas = Vec::new();
    while rounds < config.max_restarts.max(1) && candidates.len() < batch {
        let round = rounds;
        let states = parallel::map_range(chains, |c| -> Result<ChainState> {
            let rng = StreamId::new(Purpose::Chain)
                .iteration(streams.iteration)
                .round(round)
                .index(c)
                .stream(streams.master_seed);
            let mut chain = ChainState::start_with(z_best.clone(), start_log_lik, config.chain.beta_init, rng);
            chain.advance(target, steps, &config.chain)?;
            Ok(chain)
        });
        final_betas.clear();
        for state in states {
            let state = state?;
            n_proposed += state.n_proposed;
            n_accepted += state.n_accepted;
            final_betas.push(state.beta);
            let structures = if state.accepted_structures.len() == state.accepted.len() {
                state.accepted_structures
            } else {
                state.accepted.iter().map(|z| target.decode(z)).collect::<Result<_>>()?
            };
            for (x, z) in structures.into_iter().zip(state.accepted) {
                if !seen.contains_key(&x.fingerprint) {
                    seen.insert(x.fingerprint.clone(), candidates.len());
                    candidates.push((x, z));
                }
            }
        }
        rounds += 1;
    }

    let n_candidates = candidates.len();
    let (mut structures, mut latents): (Vec<Structure>, Vec<LatentVector>) = if candidates.len() > batch {
        let pool: Vec<Structure> = candidates.iter().map(|(x, _)| x.clone()).collect();
        target.record_predicts(pool.len() as u64);
        let mut rng = StreamId::new(Purpose::BatchSelection).iteration(streams.iteration).stream(streams.master_seed);
        let chosen =
            qei_greedy_select(target.posterior(), &pool, target.f_star(), batch, config.qei_mc_samples, &mut rng)?;
        chosen
            .into_iter()
            .map(|x| {
                let z = candidates[seen[&x.fingerprint]].1.clone();
                (x, z)
            })
            .unzip()
    } else {
        candidates.into_iter().unzip()
    };

    let mut fallbacks = 0;
    if structures.len() < batch {
        let mut rng = StreamId::new(Purpose::Fallback).iteration(streams.iteration).stream(streams.master_seed);
        while structures.len() < batch {
            let z = rng.prior_latent(z_best.dim());
            structures.push(target.decode(&z)?);
            latents.push(z);
            fallbacks += 1;
        }
    }

    Ok(BatchSample {
        structures,
        latents,
        rounds,
        fallbacks,
        candidates: n_candidates,
        n_proposed,
        n_accepted,
        final_betas,
    })
}

/// Exact sampler for `L(z) N(z; 0, I)`: prior draws accepted with
/// probability `L(z)`. Fails if the first million draws all have
/// `L(z) <= 1e-12` and none was accepted.
pub fn rejection_sample<T: LatentTarget + ?Sized>(
    target: &T,
    n: usize,
    dim: usize,
    rng: &mut RngStream,
) -> Result<Vec<LatentVector>> {
    const PROBES: usize = 1_000_000;
    let floor = 1e-12f64.ln();
    let mut out = Vec::with_capacity(n);
    let mut draws = 0usize;
    let mut max_log_lik = f64::NEG_INFINITY;
    while out.len() < n {
        let z = rng.prior_latent(dim);
        let ll = target.log_likelihood(&z)?;
        max_log_lik = max_log_lik.max(ll);
        draws += 1;
        if rng.uniform() < ll.exp() {
            out.push(z);
        }
        if draws == PROBES && out.is_empty() && max_log_lik <= floor {
            return Err(Error::InfeasibleOracle { probes: PROBES });
        }
    }
    Ok(out)
}
