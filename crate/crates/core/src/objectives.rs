//! Deterministic synthetic objectives over structures.

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tanimoto_gp::tanimoto;
use crate::types::{Fingerprint, Structure};

pub trait Objective: Sync {
    fn evaluate(&self, x: &Structure) -> Result<f64>;
}

#[derive(Clone, Debug, PartialEq)]
pub enum ObjectiveSpec {
    /// Unit-scale Tanimoto similarity to a hidden target fingerprint.
    TanimotoToTarget { target: Fingerprint },
    /// `w·counts / ‖w‖₁`.
    LinearScore { weights: Vec<f64> },
    /// NK landscape on the binarized fingerprint: position `i` looks up
    /// `tables[i]` with the bits of `i, i+1, …, i+k` (cyclic), first bit
    /// most significant.
    RuggedNk { k: usize, tables: Vec<Vec<f64>> },
}

pub const MAX_NK_K: usize = 4;

impl ObjectiveSpec {
    pub fn tanimoto_to_target(target: Fingerprint) -> Result<Self> {
        if target.is_zero() {
            return Err(Error::Config("tanimoto_to_target needs a nonzero target".into()));
        }
        Ok(ObjectiveSpec::TanimotoToTarget { target })
    }

    /// Binary target with each bit set with probability `density`.
    pub fn random_target(len: usize, density: f64, rng: &mut RngStream) -> Fingerprint {
        loop {
            let fp = Fingerprint::new((0..len).map(|_| u32::from(rng.uniform() < density)).collect());
            if !fp.is_zero() {
                return fp;
            }
        }
    }

    pub fn linear_score(len: usize, rng: &mut RngStream) -> Self {
        ObjectiveSpec::LinearScore { weights: (0..len).map(|_| rng.standard_normal()).collect() }
    }

    pub fn rugged_nk(len: usize, k: usize, rng: &mut RngStream) -> Result<Self> {
        if k > MAX_NK_K || k >= len {
            return Err(Error::Config(format!("rugged_nk needs k <= {MAX_NK_K} and k < L (got k={k}, L={len})")));
        }
        let tables = (0..len).map(|_| (0..1usize << (k + 1)).map(|_| rng.uniform()).collect()).collect();
        Ok(ObjectiveSpec::RuggedNk { k, tables })
    }

    pub fn fingerprint_len(&self) -> usize {
        match self {
            ObjectiveSpec::TanimotoToTarget { target } => target.len(),
            ObjectiveSpec::LinearScore { weights } => weights.len(),
            ObjectiveSpec::RuggedNk { tables, .. } => tables.len(),
        }
    }

    /// Value range for fingerprints whose counts never exceed `max_count`.
    pub fn bounds(&self, max_count: u32) -> (f64, f64) {
        match self {
            ObjectiveSpec::TanimotoToTarget { .. } | ObjectiveSpec::RuggedNk { .. } => (0.0, 1.0),
            ObjectiveSpec::LinearScore { weights } => {
                let l1: f64 = weights.iter().map(|w| w.abs()).sum();
                let pos: f64 = weights.iter().filter(|w| **w > 0.0).sum();
                let neg: f64 = weights.iter().filter(|w| **w < 0.0).sum();
                let c = f64::from(max_count);
                (c * neg / l1, c * pos / l1)
            }
        }
    }

    fn check_len(&self, x: &Structure) -> Result<()> {
        let expected = self.fingerprint_len();
        if x.fingerprint.len() != expected {
            return Err(Error::LengthMismatch { expected, actual: x.fingerprint.len() });
        }
        Ok(())
    }

    /// Exhaustive maximum over binary fingerprints (`L <= 20`).
    pub fn binary_optimum(&self) -> Result<(Fingerprint, f64)> {
        let len = self.fingerprint_len();
        if len > 20 {
            return Err(Error::Config(format!("exhaustive search over 2^{len} is too large")));
        }
        let mut best: Option<(Fingerprint, f64)> = None;
        for mask in 1u32..(1u32 << len) {
            let fp = Fingerprint::new((0..len).map(|i| (mask >> i) & 1).collect());
            let v = self.evaluate(&Structure::new(fp.clone()))?;
            if best.as_ref().is_none_or(|(_, b)| v > *b) {
                best = Some((fp, v));
            }
        }
        best.ok_or_else(|| Error::Config("empty fingerprint space".into()))
    }
}

impl Objective for ObjectiveSpec {
    fn evaluate(&self, x: &Structure) -> Result<f64> {
        self.check_len(x)?;
        let counts = x.fingerprint.counts();
        Ok(match self {
            ObjectiveSpec::TanimotoToTarget { target } => match tanimoto(&x.fingerprint, target, 1.0) {
                Ok(v) => v,
                Err(Error::UndefinedTanimoto) => 0.0,
                Err(e) => return Err(e),
            },
            ObjectiveSpec::LinearScore { weights } => {
                let l1: f64 = weights.iter().map(|w| w.abs()).sum();
                if l1 == 0.0 {
                    0.0
                } else {
                    weights.iter().zip(counts).map(|(w, &c)| w * f64::from(c)).sum::<f64>() / l1
                }
            }
            ObjectiveSpec::RuggedNk { k, tables } => {
                let len = counts.len();
                let bit = |i: usize| usize::from(counts[i % len] > 0);
                let total: f64 = tables
                    .iter()
                    .enumerate()
                    .map(|(i, table)| {
                        let idx = (0..=*k).fold(0, |acc, o| (acc << 1) | bit(i + o));
                        table[idx]
                    })
                    .sum();
                total / len as f64
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_stream;

    fn s(v: &[u32]) -> Structure {
        Structure::new(Fingerprint::new(v.to_vec()))
    }

    #[test]
    fn tanimoto_target_extremes() {
        let obj = ObjectiveSpec::tanimoto_to_target(Fingerprint::new(vec![1, 1, 0, 2])).unwrap();
        assert_eq!(obj.evaluate(&s(&[1, 1, 0, 2])).unwrap(), 1.0);
        assert_eq!(obj.evaluate(&s(&[0, 0, 3, 0])).unwrap(), 0.0);
        assert_eq!(obj.evaluate(&s(&[0, 0, 0, 0])).unwrap(), 0.0);
        assert!(obj.evaluate(&s(&[1, 1])).is_err());
    }

    #[test]
    fn nk_matches_table_lookup() {
        let obj = ObjectiveSpec::rugged_nk(8, 2, &mut derive_stream(7, 0)).unwrap();
        let ObjectiveSpec::RuggedNk { tables, .. } = &obj else { unreachable!() };
        // all-ones: every lookup hits the last table entry
        let expected = tables.iter().map(|t| t[7]).sum::<f64>() / 8.0;
        assert_eq!(obj.evaluate(&s(&[1; 8])).unwrap(), expected);
        // binarization: counts > 1 behave like 1
        assert_eq!(obj.evaluate(&s(&[3; 8])).unwrap(), expected);
    }

    #[test]
    fn linear_score_normalized() {
        let obj = ObjectiveSpec::LinearScore { weights: vec![2.0, -1.0, 1.0] };
        assert_eq!(obj.evaluate(&s(&[1, 0, 1])).unwrap(), 0.75);
        assert_eq!(obj.bounds(1), (-0.25, 0.75));
    }

    #[test]
    fn exhaustive_optimum_of_target() {
        let target = Fingerprint::new(vec![1, 0, 1, 1, 0, 0]);
        let obj = ObjectiveSpec::tanimoto_to_target(target.clone()).unwrap();
        let (best, v) = obj.binary_optimum().unwrap();
        assert_eq!(best, target);
        assert_eq!(v, 1.0);
    }

    #[test]
    fn rejects_bad_nk() {
        assert!(ObjectiveSpec::rugged_nk(8, 5, &mut derive_stream(0, 0)).is_err());
    }
}
