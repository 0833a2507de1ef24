use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parallel;
use crate::types::Fingerprint;

/// Output scale `σ²` and observation noise `τ²`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub scale: f64,
    pub noise: f64,
}

impl KernelParams {
    pub fn new(scale: f64, noise: f64) -> Self {
        KernelParams { scale, noise }
    }
}

/// Tanimoto (MinMax-on-counts) kernel
/// `σ² (m·m′) / (‖m‖² + ‖m′‖² − m·m′)`.
///
/// Numerator and denominator are exact integers, so the value is symmetric
/// bit-for-bit. If exactly one input is zero the kernel is 0.
pub fn tanimoto(a: &Fingerprint, b: &Fingerprint, scale: f64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch { expected: a.len(), actual: b.len() });
    }
    Ok(scale * tanimoto_ratio(a.dot(b), a.norm_sq(), b.norm_sq())?)
}

/// Unit-scale Tanimoto from precomputed integer products.
pub(crate) fn tanimoto_ratio(dot: u64, norm_a: u64, norm_b: u64) -> Result<f64> {
    let denom = norm_a + norm_b - dot;
    if denom == 0 {
        return Err(Error::UndefinedTanimoto);
    }
    Ok(dot as f64 / denom as f64)
}

/// Unit-scale Tanimoto similarity matrix. Inputs must be nonzero.
pub fn similarity_matrix(inputs: &[Fingerprint]) -> Result<DMatrix<f64>> {
    let n = inputs.len();
    if let Some(bad) = inputs.iter().position(|x| x.is_zero()) {
        return Err(Error::InvalidStructure(format!("input {bad} is the all-zero fingerprint")));
    }
    if let Some(x) = inputs.iter().find(|x| x.len() != inputs[0].len()) {
        return Err(Error::LengthMismatch { expected: inputs[0].len(), actual: x.len() });
    }
    let norms: Vec<u64> = inputs.iter().map(Fingerprint::norm_sq).collect();
    let rows = parallel::map_range(n, |i| {
        (0..n)
            .map(|j| {
                if i == j {
                    1.0
                } else {
                    // Nonzero inputs, so the denominator is positive.
                    tanimoto_ratio(inputs[i].dot(&inputs[j]), norms[i], norms[j]).unwrap_or(0.0)
                }
            })
            .collect::<Vec<f64>>()
    });
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

/// `K[i][j] = tanimoto(x_i, x_j, σ²) + (τ² + jitter)·1[i=j]`.
pub fn gram(inputs: &[Fingerprint], params: KernelParams, jitter: f64) -> Result<DMatrix<f64>> {
    if inputs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut k = similarity_matrix(inputs)? * params.scale;
    for i in 0..inputs.len() {
        k[(i, i)] += params.noise + jitter;
    }
    Ok(k)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fp(v: &[u32]) -> Fingerprint {
        Fingerprint::new(v.to_vec())
    }

    #[test]
    fn identical_inputs_give_scale() {
        assert_eq!(tanimoto(&fp(&[1, 0, 2]), &fp(&[1, 0, 2]), 1.0).unwrap(), 1.0);
    }

    #[test]
    fn disjoint_supports_give_zero() {
        assert_eq!(tanimoto(&fp(&[1, 0]), &fp(&[0, 3]), 7.0).unwrap(), 0.0);
    }

    #[test]
    fn worked_value() {
        // dot = 2, |m|² = 5, |m'|² = 2 -> 2·2/(5+2-2)
        let v = tanimoto(&fp(&[1, 2, 0]), &fp(&[0, 1, 1]), 2.0).unwrap();
        assert!((v - 0.8).abs() < 1e-15);
    }

    #[test]
    fn both_zero_is_an_error() {
        assert!(matches!(tanimoto(&fp(&[0, 0]), &fp(&[0, 0]), 1.0), Err(Error::UndefinedTanimoto)));
        assert_eq!(tanimoto(&fp(&[0, 0]), &fp(&[0, 4]), 1.0).unwrap(), 0.0);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert!(tanimoto(&fp(&[1]), &fp(&[1, 0]), 1.0).is_err());
    }

    #[test]
    fn gram_single_and_orthogonal() {
        let g = gram(&[fp(&[1, 1])], KernelParams::new(1.0, 0.0), 1e-6).unwrap();
        assert_eq!(g[(0, 0)], 1.0 + 1e-6);
        let g = gram(&[fp(&[1, 0]), fp(&[0, 2])], KernelParams::new(1.0, 0.0), 0.0).unwrap();
        assert_eq!(g, DMatrix::identity(2, 2));
    }

    #[test]
    fn gram_rejects_zero_rows() {
        assert!(gram(&[fp(&[0, 0])], KernelParams::new(1.0, 0.0), 0.0).is_err());
    }
}
