//! Run configuration, read from a flat TOML document with dotted keys:
//!
//! ```toml
//! seed = 7
//! latent_dim = 16
//! fingerprint_len = 64
//! budget = 100
//! init_size = 10
//! batch_size = 1
//! pcn.chains = 1
//! pcn.steps = 100
//! pcn.acceptance_mode = "paper"
//! decoder.kind = "linear_threshold"
//! decoder.seed = 1
//! objective.kind = "tanimoto_to_target"
//! objective.seed = 2
//! lsbo.delta = 3.0
//! ```
//!
//! Every key except the dimensions and budget has a default; see the
//! `Default` impls below and the README for the full schema.

use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::decoder::{load_weights, Decode, DecoderKind, DecoderSpec, ExternalSpec, LinearThreshold, SequenceArgmax};
use crate::error::{Error, Result};
use crate::objectives::ObjectiveSpec;
use crate::pcn::{AcceptanceMode, ChainConfig, SamplerConfig};
use crate::rng::{Purpose, StreamId, MAX_PACKED_INDEX, MAX_PACKED_ITERATION, MAX_PACKED_ROUND};
use crate::tanimoto_gp::GpSettings;
use crate::types::{Fingerprint, Structure};

/// Largest seed a config file can hold.
pub const MAX_SEED: u64 = i64::MAX as u64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub latent_dim: usize,
    pub fingerprint_len: usize,
    pub budget: usize,
    pub init_size: usize,
    #[serde(default = "one")]
    pub batch_size: usize,
    #[serde(default)]
    pub pcn: PcnSection,
    #[serde(default)]
    pub qei: QeiSection,
    #[serde(default)]
    pub gp: GpSettings,
    #[serde(default)]
    pub lsbo: LsboSection,
    #[serde(default)]
    pub perturb: PerturbSection,
    #[serde(default)]
    pub decoder: DecoderConfig,
    #[serde(default)]
    pub objective: ObjectiveConfig,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PcnSection {
    /// Defaults by batch size: 1 chain for B = 1, 10 for B ≤ 5, 50 above.
    pub chains: Option<usize>,
    pub steps: Option<usize>,
    pub acceptance_mode: AcceptanceMode,
    pub beta_init: f64,
    pub target_accept: f64,
    pub adapt_gain: f64,
    pub beta_min: f64,
    pub beta_max: f64,
    pub max_restarts: usize,
}

impl Default for PcnSection {
    fn default() -> Self {
        let c = ChainConfig::default();
        PcnSection {
            chains: None,
            steps: None,
            acceptance_mode: AcceptanceMode::Paper,
            beta_init: c.beta_init,
            target_accept: c.target_accept,
            adapt_gain: c.adapt_gain,
            beta_min: c.beta_min,
            beta_max: c.beta_max,
            max_restarts: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QeiSection {
    pub mc_samples: usize,
}

impl Default for QeiSection {
    fn default() -> Self {
        QeiSection { mc_samples: 512 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LsboSection {
    pub delta: Option<f64>,
    pub acquisition_evals: usize,
    pub fit_restarts: usize,
}

impl Default for LsboSection {
    fn default() -> Self {
        LsboSection { delta: None, acquisition_evals: 5000, fit_restarts: 4 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbSection {
    /// Probability of zeroing each positive fingerprint entry the GP sees.
    pub probability: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderKindName {
    #[default]
    LinearThreshold,
    SequenceArgmax,
    External,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderConfig {
    pub kind: DecoderKindName,
    /// Instance seed for randomly generated weights.
    pub seed: u64,
    /// Weights file (linear_threshold); overrides `seed`.
    pub weights: Option<PathBuf>,
    pub bias_scale: f64,
    /// Count-valued linear_threshold variant.
    pub counts: bool,
    pub seq_len: usize,
    pub vocab: usize,
    pub command: Vec<String>,
    pub timeout_ms: u64,
    pub per_chain: bool,
    pub fallback: Option<Vec<u32>>,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            kind: DecoderKindName::LinearThreshold,
            seed: 0,
            weights: None,
            bias_scale: 0.0,
            counts: false,
            seq_len: 12,
            vocab: 8,
            command: Vec::new(),
            timeout_ms: 10_000,
            per_chain: false,
            fallback: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKindName {
    #[default]
    TanimotoToTarget,
    LinearScore,
    RuggedNk,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TargetChoice {
    Named(TargetSource),
    Explicit(Vec<u32>),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetSource {
    /// Decoding of a prior draw from the objective's instance stream, so the
    /// optimum is reachable.
    Decoded,
    /// Independent random bits.
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveConfig {
    pub kind: ObjectiveKindName,
    pub seed: u64,
    pub target: TargetChoice,
    pub density: f64,
    pub k: usize,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            kind: ObjectiveKindName::TanimotoToTarget,
            seed: 0,
            target: TargetChoice::Named(TargetSource::Decoded),
            density: 0.5,
            k: 2,
        }
    }
}

impl RunConfig {
    /// Minimal config with defaults everywhere else.
    pub fn new(latent_dim: usize, fingerprint_len: usize, budget: usize, init_size: usize) -> Self {
        RunConfig {
            seed: 0,
            latent_dim,
            fingerprint_len,
            budget,
            init_size,
            batch_size: 1,
            pcn: PcnSection::default(),
            qei: QeiSection::default(),
            gp: GpSettings::default(),
            lsbo: LsboSection::default(),
            perturb: PerturbSection::default(),
            decoder: DecoderConfig::default(),
            objective: ObjectiveConfig::default(),
        }
    }

    /// Parses a config document. `fallback_seed` applies only when the
    /// document has no `seed` key.
    pub fn from_toml_str(text: &str, fallback_seed: Option<u64>) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let has_seed = table.contains_key("seed");
        let mut config: RunConfig = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        if !has_seed {
            config.seed = fallback_seed.unwrap_or(0);
        }
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).unwrap_or_default()
    }

    pub fn chains(&self) -> usize {
        self.pcn.chains.unwrap_or(match self.batch_size {
            1 => 1,
            2..=5 => 10,
            _ => 50,
        })
    }

    pub fn steps(&self) -> usize {
        self.pcn.steps.unwrap_or(100)
    }

    pub fn chain_config(&self) -> ChainConfig {
        ChainConfig {
            beta_init: self.pcn.beta_init,
            target_accept: self.pcn.target_accept,
            adapt_gain: self.pcn.adapt_gain,
            beta_min: self.pcn.beta_min,
            beta_max: self.pcn.beta_max,
            record_trajectory: false,
        }
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig {
            chain: self.chain_config(),
            max_restarts: self.pcn.max_restarts,
            qei_mc_samples: self.qei.mc_samples,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.latent_dim == 0 || self.fingerprint_len == 0 {
            return fail("latent_dim and fingerprint_len must be at least 1".into());
        }
        if self.budget == 0 || self.init_size == 0 || self.init_size > self.budget {
            return fail(format!(
                "need 1 <= init_size <= budget (got init_size={}, budget={})",
                self.init_size, self.budget
            ));
        }
        if self.budget > MAX_PACKED_ITERATION {
            return fail(format!("budget exceeds {MAX_PACKED_ITERATION}"));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        // TOML integers are signed.
        for (what, seed) in
            [("seed", self.seed), ("decoder.seed", self.decoder.seed), ("objective.seed", self.objective.seed)]
        {
            if seed > MAX_SEED {
                return fail(format!("{what} must be at most {MAX_SEED}"));
            }
        }
        if self.chains() == 0 || self.chains() > MAX_PACKED_INDEX || self.steps() == 0 {
            return fail("pcn.chains and pcn.steps must be positive".into());
        }
        let p = &self.pcn;
        if !(0.0 < p.beta_init && p.beta_init < 1.0) || !(0.0 < p.target_accept && p.target_accept < 1.0) {
            return fail("pcn.beta_init and pcn.target_accept must lie in (0, 1)".into());
        }
        if p.adapt_gain <= 0.0 {
            return fail("pcn.adapt_gain must be positive".into());
        }
        if !(0.0 < p.beta_min && p.beta_min <= p.beta_init && p.beta_init <= p.beta_max && p.beta_max < 1.0) {
            return fail("need 0 < pcn.beta_min <= pcn.beta_init <= pcn.beta_max < 1".into());
        }
        if p.max_restarts == 0 || p.max_restarts > MAX_PACKED_ROUND {
            return fail(format!("pcn.max_restarts must be in 1..={MAX_PACKED_ROUND}"));
        }
        if self.qei.mc_samples == 0 {
            return fail("qei.mc_samples must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.perturb.probability) {
            return fail("perturb.probability must lie in [0, 1]".into());
        }
        if let Some(delta) = self.lsbo.delta {
            if !(delta > 0.0 && delta.is_finite()) {
                return fail("lsbo.delta must be positive".into());
            }
        }
        if self.lsbo.acquisition_evals == 0 || self.lsbo.fit_restarts == 0 {
            return fail("lsbo.acquisition_evals and lsbo.fit_restarts must be positive".into());
        }
        self.gp.validate()?;
        if self.decoder.kind == DecoderKindName::External && self.decoder.command.is_empty() {
            return fail("external decoder needs decoder.command".into());
        }
        if self.decoder.kind == DecoderKindName::SequenceArgmax
            && self.decoder.vocab * self.decoder.vocab != self.fingerprint_len
        {
            return fail(format!(
                "sequence_argmax fingerprints have vocab² = {} entries, config says {}",
                self.decoder.vocab * self.decoder.vocab,
                self.fingerprint_len
            ));
        }
        if self.objective.kind == ObjectiveKindName::RuggedNk && self.objective.k > crate::objectives::MAX_NK_K {
            return fail("objective.k must be at most 4".into());
        }
        Ok(())
    }

    pub fn decoder_spec(&self) -> Result<DecoderSpec> {
        let d = &self.decoder;
        let mut rng = StreamId::new(Purpose::DecoderInstance).stream(d.seed);
        let kind = match d.kind {
            DecoderKindName::LinearThreshold => {
                let dec = match &d.weights {
                    Some(path) => load_weights(path, d.counts)?,
                    None => {
                        LinearThreshold::random(self.latent_dim, self.fingerprint_len, d.bias_scale, d.counts, &mut rng)
                    }
                };
                DecoderKind::LinearThreshold(dec)
            }
            DecoderKindName::SequenceArgmax => {
                DecoderKind::SequenceArgmax(SequenceArgmax::random(self.latent_dim, d.seq_len, d.vocab, &mut rng)?)
            }
            DecoderKindName::External => DecoderKind::External(ExternalSpec {
                command: d.command.clone(),
                timeout: Duration::from_millis(d.timeout_ms),
                per_chain: d.per_chain,
                latent_dim: self.latent_dim,
                fingerprint_len: self.fingerprint_len,
            }),
        };
        let fallback = match &d.fallback {
            Some(counts) => Structure::with_label(Fingerprint::new(counts.clone()), "fallback"),
            None => DecoderSpec::default_fallback(self.fingerprint_len),
        };
        let spec = DecoderSpec::new(kind, fallback)?;
        if spec.latent_dim() != self.latent_dim {
            return Err(Error::DimensionMismatch {
                what: "decoder latent_dim",
                expected: self.latent_dim,
                actual: spec.latent_dim(),
            });
        }
        if spec.fingerprint_len() != self.fingerprint_len {
            return Err(Error::DimensionMismatch {
                what: "decoder fingerprint_len",
                expected: self.fingerprint_len,
                actual: spec.fingerprint_len(),
            });
        }
        Ok(spec)
    }

    /// Builds the objective instance; a decoded target uses `decoder`.
    pub fn objective_spec(&self, decoder: &dyn Decode) -> Result<ObjectiveSpec> {
        let o = &self.objective;
        let mut rng = StreamId::new(Purpose::ObjectiveInstance).stream(o.seed);
        let l = self.fingerprint_len;
        match o.kind {
            ObjectiveKindName::TanimotoToTarget => {
                let target = match &o.target {
                    TargetChoice::Explicit(counts) => {
                        if counts.len() != l {
                            return Err(Error::LengthMismatch { expected: l, actual: counts.len() });
                        }
                        Fingerprint::new(counts.clone())
                    }
                    TargetChoice::Named(TargetSource::Random) => ObjectiveSpec::random_target(l, o.density, &mut rng),
                    TargetChoice::Named(TargetSource::Decoded) => {
                        let z = rng.prior_latent(self.latent_dim);
                        decoder.decode_map(&z)?.fingerprint
                    }
                };
                ObjectiveSpec::tanimoto_to_target(target)
            }
            ObjectiveKindName::LinearScore => Ok(ObjectiveSpec::linear_score(l, &mut rng)),
            ObjectiveKindName::RuggedNk => ObjectiveSpec::rugged_nk(l, o.k, &mut rng),
        }
    }
}
