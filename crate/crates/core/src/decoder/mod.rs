//! Deterministic most-likely decoding from latent codes to structures.
//!
//! Every decoder is a pure map `z ↦ x`. When a decoder would emit the
//! all-zero fingerprint, the `DecoderSpec` fallback structure is returned
//! instead, so downstream code never sees an undefined kernel row.

mod builtin;
mod external;
mod weights;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

pub use builtin::{LinearThreshold, SequenceArgmax};
pub use external::ExternalClient;
pub use weights::{format_weights, load_weights, parse_weights};

use crate::error::{Error, Result};
use crate::types::{Fingerprint, LatentVector, Structure};

/// Anything that maps latent codes to structures deterministically.
pub trait Decode: Sync {
    fn latent_dim(&self) -> usize;
    fn fingerprint_len(&self) -> usize;
    fn decode_map(&self, z: &LatentVector) -> Result<Structure>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExternalSpec {
    pub command: Vec<String>,
    pub timeout: Duration,
    /// Launch one process per chain instead of sharing one.
    pub per_chain: bool,
    pub latent_dim: usize,
    pub fingerprint_len: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum DecoderKind {
    LinearThreshold(LinearThreshold),
    SequenceArgmax(SequenceArgmax),
    External(ExternalSpec),
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderSpec {
    pub kind: DecoderKind,
    pub fallback: Structure,
}

impl DecoderSpec {
    pub fn new(kind: DecoderKind, fallback: Structure) -> Result<Self> {
        let spec = DecoderSpec { kind, fallback };
        if spec.fallback.fingerprint.len() != spec.fingerprint_len() {
            return Err(Error::Config(format!(
                "fallback fingerprint has length {} but the decoder emits {}",
                spec.fallback.fingerprint.len(),
                spec.fingerprint_len()
            )));
        }
        if spec.fallback.fingerprint.is_zero() {
            return Err(Error::Config("fallback fingerprint must be nonzero".into()));
        }
        Ok(spec)
    }

    /// Fallback with a single count in the first position.
    pub fn default_fallback(fingerprint_len: usize) -> Structure {
        let mut counts = vec![0; fingerprint_len];
        if let Some(c) = counts.first_mut() {
            *c = 1;
        }
        Structure::with_label(Fingerprint::new(counts), "fallback")
    }

    pub fn latent_dim(&self) -> usize {
        match &self.kind {
            DecoderKind::LinearThreshold(d) => d.latent_dim(),
            DecoderKind::SequenceArgmax(d) => d.latent_dim(),
            DecoderKind::External(e) => e.latent_dim,
        }
    }

    pub fn fingerprint_len(&self) -> usize {
        match &self.kind {
            DecoderKind::LinearThreshold(d) => d.fingerprint_len(),
            DecoderKind::SequenceArgmax(d) => d.fingerprint_len(),
            DecoderKind::External(e) => e.fingerprint_len,
        }
    }

    fn guard(&self, s: Structure) -> Structure {
        if s.fingerprint.is_zero() {
            self.fallback.clone()
        } else {
            s
        }
    }
}

/// Decodes with a built-in decoder. External decoders need a live process;
/// see [`Decoder::launch`].
pub fn decode_map(spec: &DecoderSpec, z: &LatentVector) -> Result<Structure> {
    if z.dim() != spec.latent_dim() {
        return Err(Error::DimensionMismatch { what: "latent vector", expected: spec.latent_dim(), actual: z.dim() });
    }
    let raw = match &spec.kind {
        DecoderKind::LinearThreshold(d) => Structure::new(d.decode_raw(z)),
        DecoderKind::SequenceArgmax(d) => d.decode_raw(z),
        DecoderKind::External(_) => {
            return Err(Error::Config("external decoders must be launched before decoding".into()))
        }
    };
    Ok(spec.guard(raw))
}

/// Launches the decoder process and checks its declared dimensions.
pub fn external_handshake(spec: &ExternalSpec) -> Result<(usize, usize)> {
    let mut client = ExternalClient::launch(&spec.command, spec.timeout)?;
    let dims = client.handshake()?;
    check_dims(spec, dims)?;
    Ok(dims)
}

fn check_dims(spec: &ExternalSpec, (d, l): (usize, usize)) -> Result<()> {
    if d != spec.latent_dim {
        return Err(Error::DimensionMismatch { what: "decoder latent_dim", expected: spec.latent_dim, actual: d });
    }
    if l != spec.fingerprint_len {
        return Err(Error::DimensionMismatch {
            what: "decoder fingerprint_len",
            expected: spec.fingerprint_len,
            actual: l,
        });
    }
    Ok(())
}

/// A ready-to-use decoder: built-in, or a pool of external connections.
pub struct Decoder {
    spec: DecoderSpec,
    pool: Vec<Mutex<ExternalClient>>,
    cursor: AtomicUsize,
}

impl Decoder {
    /// For external decoders, `lanes` processes are launched when
    /// `per_chain` is set (one otherwise) and each is handshaken.
    pub fn launch(spec: DecoderSpec, lanes: usize) -> Result<Self> {
        let mut pool = Vec::new();
        if let DecoderKind::External(ext) = &spec.kind {
            let n = if ext.per_chain { lanes.max(1) } else { 1 };
            for _ in 0..n {
                let mut client = ExternalClient::launch(&ext.command, ext.timeout)?;
                let dims = client.handshake()?;
                check_dims(ext, dims)?;
                pool.push(Mutex::new(client));
            }
        }
        Ok(Decoder { spec, pool, cursor: AtomicUsize::new(0) })
    }

    pub fn spec(&self) -> &DecoderSpec {
        &self.spec
    }

    pub fn connections(&self) -> usize {
        self.pool.len()
    }

    fn decode_external(&self, z: &LatentVector) -> Result<Structure> {
        let l = self.spec.fingerprint_len();
        for lane in &self.pool {
            if let Ok(mut client) = lane.try_lock() {
                return client.decode(z, l);
            }
        }
        let i = self.cursor.fetch_add(1, Ordering::Relaxed) % self.pool.len();
        let mut client = self.pool[i].lock().map_err(|_| Error::protocol("decoder connection lock poisoned", ""))?;
        client.decode(z, l)
    }
}

impl Decode for Decoder {
    fn latent_dim(&self) -> usize {
        self.spec.latent_dim()
    }

    fn fingerprint_len(&self) -> usize {
        self.spec.fingerprint_len()
    }

    fn decode_map(&self, z: &LatentVector) -> Result<Structure> {
        match &self.spec.kind {
            DecoderKind::External(ext) => {
                if z.dim() != ext.latent_dim {
                    return Err(Error::DimensionMismatch {
                        what: "latent vector",
                        expected: ext.latent_dim,
                        actual: z.dim(),
                    });
                }
                let raw = self.decode_external(z)?;
                Ok(self.spec.guard(raw))
            }
            _ => decode_map(&self.spec, z),
        }
    }
}

impl Decode for DecoderSpec {
    fn latent_dim(&self) -> usize {
        DecoderSpec::latent_dim(self)
    }

    fn fingerprint_len(&self) -> usize {
        DecoderSpec::fingerprint_len(self)
    }

    fn decode_map(&self, z: &LatentVector) -> Result<Structure> {
        decode_map(self, z)
    }
}
