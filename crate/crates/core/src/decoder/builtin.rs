use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::types::{Fingerprint, LatentVector, Structure};

/// `counts[j] = 1[(Wz + b)[j] > 0]`, or `max(0, round((Wz + b)[j]))` when
/// `counts` is set. `weights` is `L × d`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearThreshold {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub counts: bool,
}

impl LinearThreshold {
    pub fn new(weights: DMatrix<f64>, bias: DVector<f64>, counts: bool) -> Result<Self> {
        if weights.nrows() != bias.len() {
            return Err(Error::Config(format!(
                "linear_threshold weights have {} rows but bias has length {}",
                weights.nrows(),
                bias.len()
            )));
        }
        if weights.iter().chain(bias.iter()).any(|w| !w.is_finite()) {
            return Err(Error::Config("linear_threshold parameters must be finite".into()));
        }
        Ok(LinearThreshold { weights, bias, counts })
    }

    /// Standard normal weights, bias `N(0, bias_scale²)`.
    pub fn random(
        latent_dim: usize,
        fingerprint_len: usize,
        bias_scale: f64,
        counts: bool,
        rng: &mut RngStream,
    ) -> Self {
        let weights = DMatrix::from_fn(fingerprint_len, latent_dim, |_, _| rng.standard_normal());
        let bias = DVector::from_fn(fingerprint_len, |_, _| bias_scale * rng.standard_normal());
        LinearThreshold { weights, bias, counts }
    }

    pub fn latent_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn fingerprint_len(&self) -> usize {
        self.weights.nrows()
    }

    pub fn activations(&self, z: &LatentVector) -> DVector<f64> {
        let z = DVector::from_column_slice(z.coords());
        &self.weights * z + &self.bias
    }

    pub fn decode_raw(&self, z: &LatentVector) -> Fingerprint {
        let a = self.activations(z);
        let counts =
            a.iter().map(|&v| if self.counts { v.round().max(0.0) as u32 } else { u32::from(v > 0.0) }).collect();
        Fingerprint::new(counts)
    }

    /// Distance from `z` to the nearest decision hyperplane,
    /// `min_j |(Wz+b)[j]| / ‖W_j‖`.
    pub fn margin(&self, z: &LatentVector) -> f64 {
        let a = self.activations(z);
        (0..self.fingerprint_len()).map(|j| a[j].abs() / self.weights.row(j).norm()).fold(f64::INFINITY, f64::min)
    }
}

/// Per-position argmax over affine token logits, folded into token-bigram
/// counts. `weights` is `(seq_len · vocab) × d`; the fingerprint has
/// `vocab²` entries indexed `first · vocab + second`.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceArgmax {
    pub seq_len: usize,
    pub vocab: usize,
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl SequenceArgmax {
    pub fn new(seq_len: usize, vocab: usize, weights: DMatrix<f64>, bias: DVector<f64>) -> Result<Self> {
        if seq_len < 2 || vocab < 1 {
            return Err(Error::Config("sequence_argmax needs seq_len >= 2 and vocab >= 1".into()));
        }
        if weights.nrows() != seq_len * vocab || bias.len() != seq_len * vocab {
            return Err(Error::Config(format!("sequence_argmax logits must have {} rows", seq_len * vocab)));
        }
        Ok(SequenceArgmax { seq_len, vocab, weights, bias })
    }

    pub fn random(latent_dim: usize, seq_len: usize, vocab: usize, rng: &mut RngStream) -> Result<Self> {
        let rows = seq_len * vocab;
        let weights = DMatrix::from_fn(rows, latent_dim, |_, _| rng.standard_normal());
        let bias = DVector::from_fn(rows, |_, _| 0.5 * rng.standard_normal());
        Self::new(seq_len, vocab, weights, bias)
    }

    pub fn latent_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn fingerprint_len(&self) -> usize {
        self.vocab * self.vocab
    }

    pub fn tokens(&self, z: &LatentVector) -> Vec<usize> {
        let logits = &self.weights * DVector::from_column_slice(z.coords()) + &self.bias;
        (0..self.seq_len)
            .map(|t| {
                let row = &logits.as_slice()[t * self.vocab..(t + 1) * self.vocab];
                // Lowest index wins ties.
                let mut best = 0;
                for v in 1..self.vocab {
                    if row[v] > row[best] {
                        best = v;
                    }
                }
                best
            })
            .collect()
    }

    pub fn decode_raw(&self, z: &LatentVector) -> Structure {
        let tokens = self.tokens(z);
        let mut counts = vec![0u32; self.fingerprint_len()];
        for w in tokens.windows(2) {
            counts[w[0] * self.vocab + w[1]] += 1;
        }
        Structure::with_label(Fingerprint::new(counts), token_label(&tokens, self.vocab))
    }
}

fn token_label(tokens: &[usize], vocab: usize) -> String {
    if vocab <= 26 {
        tokens.iter().map(|&t| (b'A' + t as u8) as char).collect()
    } else {
        tokens.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(" ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_stream;

    fn z(v: &[f64]) -> LatentVector {
        LatentVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn sign_pattern() {
        let dec = LinearThreshold::new(DMatrix::identity(2, 2), DVector::zeros(2), false).unwrap();
        assert_eq!(dec.decode_raw(&z(&[0.5, -1.0])).counts(), &[1, 0]);
    }

    #[test]
    fn count_variant_rounds_and_clips() {
        let dec = LinearThreshold::new(DMatrix::identity(3, 3), DVector::zeros(3), true).unwrap();
        assert_eq!(dec.decode_raw(&z(&[2.6, -4.0, 0.4])).counts(), &[3, 0, 0]);
    }

    #[test]
    fn shape_is_checked() {
        assert!(LinearThreshold::new(DMatrix::zeros(3, 2), DVector::zeros(2), false).is_err());
    }

    #[test]
    fn bigram_folding() {
        // Identity-like logits: token at position t is argmax of z-driven rows.
        let mut w = DMatrix::zeros(3 * 2, 3);
        // position 0 prefers token 1 when z0 > 0, positions 1 and 2 follow z1, z2
        w[(1, 0)] = 1.0;
        w[(3, 1)] = 1.0;
        w[(5, 2)] = 1.0;
        let dec = SequenceArgmax::new(3, 2, w, DVector::zeros(6)).unwrap();
        let s = dec.decode_raw(&z(&[1.0, 1.0, -1.0]));
        assert_eq!(s.label.as_deref(), Some("BBA"));
        // bigrams BB, BA -> indices 1*2+1 = 3 and 1*2+0 = 2
        assert_eq!(s.fingerprint.counts(), &[0, 0, 1, 1]);
    }

    #[test]
    fn random_sequence_decoder_is_deterministic() {
        let dec = SequenceArgmax::random(4, 6, 3, &mut derive_stream(5, 5)).unwrap();
        let mut rng = derive_stream(5, 6);
        for _ in 0..20 {
            let zz = rng.prior_latent(4);
            assert_eq!(dec.decode_raw(&zz).fingerprint, dec.decode_raw(&zz).fingerprint);
            let total: u32 = dec.decode_raw(&zz).fingerprint.counts().iter().sum();
            assert_eq!(total, 5);
        }
    }
}
