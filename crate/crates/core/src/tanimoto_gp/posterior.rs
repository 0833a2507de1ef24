use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::kernel::{similarity_matrix, tanimoto_ratio, KernelParams};
use crate::error::{Error, Result};
use crate::normal;
use crate::search::{compass_search, start_points};
use crate::types::{Evaluation, Fingerprint};

/// Fitting and conditioning settings. Jitter values are relative to `σ²`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpSettings {
    pub jitter: f64,
    pub max_jitter: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    pub noise_min: f64,
    pub noise_max: f64,
    pub fit_restarts: usize,
}

impl Default for GpSettings {
    fn default() -> Self {
        GpSettings {
            jitter: 1e-6,
            max_jitter: 1e-2,
            scale_min: 1e-3,
            scale_max: 1e3,
            noise_min: 1e-6,
            noise_max: 1.0,
            fit_restarts: 8,
        }
    }
}

impl GpSettings {
    pub fn validate(&self) -> Result<()> {
        let ok = self.jitter > 0.0
            && self.max_jitter >= self.jitter
            && 0.0 < self.scale_min
            && self.scale_min <= self.scale_max
            && 0.0 < self.noise_min
            && self.noise_min <= self.noise_max
            && self.fit_restarts >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("inconsistent gp settings: {self:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    /// Latent (noise-free) variance, clamped at zero.
    pub var: f64,
}

/// Immutable exact-GP posterior over fingerprints with a constant prior mean.
#[derive(Clone, Debug)]
pub struct GpPosterior {
    params: KernelParams,
    jitter: f64,
    mean_const: f64,
    inputs: Vec<Fingerprint>,
    input_norms: Vec<u64>,
    targets: Vec<f64>,
    /// Lower Cholesky factor of `K + (τ² + jitter) I`.
    factor: DMatrix<f64>,
    weights: DVector<f64>,
}

impl GpPosterior {
    /// Conditions on `(inputs, targets)` at fixed hyperparameters.
    ///
    /// `jitter` is absolute and tried first; on factorization failure the
    /// jitter ladder `1e-6·σ², 1e-5·σ², …, 1e-2·σ²` is walked.
    pub fn condition(
        inputs: Vec<Fingerprint>,
        targets: Vec<f64>,
        params: KernelParams,
        jitter: f64,
        mean_const: f64,
    ) -> Result<Self> {
        let sim = checked_similarity(&inputs, &targets)?;
        Self::condition_with_similarity(inputs, targets, &sim, params, jitter, 1e-6, 1e-2, mean_const)
    }

    #[allow(clippy::too_many_arguments)]
    fn condition_with_similarity(
        inputs: Vec<Fingerprint>,
        targets: Vec<f64>,
        sim: &DMatrix<f64>,
        params: KernelParams,
        jitter: f64,
        ladder_start: f64,
        ladder_end: f64,
        mean_const: f64,
    ) -> Result<Self> {
        let n = inputs.len();
        let mut ladder = vec![jitter];
        let mut rel = ladder_start;
        while rel <= ladder_end * (1.0 + 1e-9) {
            let j = rel * params.scale;
            if j > jitter {
                ladder.push(j);
            }
            rel *= 10.0;
        }
        let centred = DVector::from_iterator(n, targets.iter().map(|y| y - mean_const));
        for &j in &ladder {
            let mut k = sim * params.scale;
            for i in 0..n {
                k[(i, i)] += params.noise + j;
            }
            if let Some(chol) = Cholesky::<f64, Dyn>::new(k) {
                let weights = chol.solve(&centred);
                let factor = chol.unpack();
                let input_norms = inputs.iter().map(Fingerprint::norm_sq).collect();
                return Ok(GpPosterior {
                    params,
                    jitter: j,
                    mean_const,
                    inputs,
                    input_norms,
                    targets,
                    factor,
                    weights,
                });
            }
        }
        Err(Error::GramNotPd { max_jitter: *ladder.last().unwrap_or(&jitter) })
    }

    pub fn params(&self) -> KernelParams {
        self.params
    }

    /// Absolute jitter actually used in the factorization.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn mean_const(&self) -> f64 {
        self.mean_const
    }

    pub fn inputs(&self) -> &[Fingerprint] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Prior covariance between two fingerprints under this posterior's scale.
    pub fn kernel(&self, a: &Fingerprint, b: &Fingerprint) -> Result<f64> {
        super::kernel::tanimoto(a, b, self.params.scale)
    }

    fn cross_kernel(&self, x: &Fingerprint) -> Result<DVector<f64>> {
        let expected = self.inputs[0].len();
        if x.len() != expected {
            return Err(Error::LengthMismatch { expected, actual: x.len() });
        }
        if x.is_zero() {
            return Err(Error::UndefinedTanimoto);
        }
        let nx = x.norm_sq();
        let mut k = DVector::zeros(self.inputs.len());
        for (i, (xi, &ni)) in self.inputs.iter().zip(&self.input_norms).enumerate() {
            k[i] = self.params.scale * tanimoto_ratio(x.dot(xi), nx, ni)?;
        }
        Ok(k)
    }

    /// `L⁻¹ k_*` together with the predictive moments.
    pub(crate) fn predict_whitened(&self, x: &Fingerprint) -> Result<(Prediction, DVector<f64>)> {
        let k = self.cross_kernel(x)?;
        let mean = self.mean_const + k.dot(&self.weights);
        let v = forward_substitute(&self.factor, &k);
        let var = (self.params.scale - v.norm_squared()).max(0.0);
        Ok((Prediction { mean, var }, v))
    }

    pub fn predict(&self, x: &Fingerprint) -> Result<Prediction> {
        self.predict_whitened(x).map(|(p, _)| p)
    }

    pub fn prob_improvement(&self, x: &Fingerprint, f_star: f64) -> Result<f64> {
        let p = self.predict(x)?;
        Ok(normal::prob_improvement(p.mean, p.var, f_star))
    }

    pub fn log_prob_improvement(&self, x: &Fingerprint, f_star: f64) -> Result<f64> {
        let p = self.predict(x)?;
        Ok(normal::log_prob_improvement(p.mean, p.var, f_star))
    }

    /// Exact log marginal likelihood of the training targets.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.inputs.len() as f64;
        let centred = DVector::from_iterator(self.targets.len(), self.targets.iter().map(|y| y - self.mean_const));
        let log_det: f64 = (0..self.factor.nrows()).map(|i| self.factor[(i, i)].ln()).sum::<f64>() * 2.0;
        -0.5 * centred.dot(&self.weights) - 0.5 * log_det - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
    }
}

/// Solves `L v = b` for lower-triangular `L`.
pub(crate) fn forward_substitute(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = b.len();
    let mut v = DVector::zeros(n);
    for i in 0..n {
        let mut s = b[i];
        for j in 0..i {
            s -= l[(i, j)] * v[j];
        }
        v[i] = s / l[(i, i)];
    }
    v
}

fn checked_similarity(inputs: &[Fingerprint], targets: &[f64]) -> Result<DMatrix<f64>> {
    if inputs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if inputs.len() != targets.len() {
        return Err(Error::LengthMismatch { expected: inputs.len(), actual: targets.len() });
    }
    similarity_matrix(inputs)
}

/// Fits `(σ², τ²)` by maximizing the exact log marginal likelihood over the
/// bounded log-space box, then conditions on the data. The prior mean is the
/// target mean.
pub fn fit(dataset: &[Evaluation], settings: &GpSettings) -> Result<GpPosterior> {
    let inputs = dataset.iter().map(|e| e.structure.fingerprint.clone()).collect();
    let targets = dataset.iter().map(|e| e.y).collect();
    fit_inputs(inputs, targets, settings)
}

pub fn fit_inputs(inputs: Vec<Fingerprint>, targets: Vec<f64>, settings: &GpSettings) -> Result<GpPosterior> {
    settings.validate()?;
    let sim = checked_similarity(&inputs, &targets)?;
    let n = targets.len();
    let mean_const = targets.iter().sum::<f64>() / n as f64;

    // With S = Q Λ Qᵀ, K = Q (σ²Λ + (τ² + jitter) I) Qᵀ, so each likelihood
    // evaluation is O(n) after one eigendecomposition.
    let eig = SymmetricEigen::new(sim.clone());
    let centred = DVector::from_iterator(n, targets.iter().map(|y| y - mean_const));
    let rotated = eig.eigenvectors.transpose() * centred;
    let lambdas: Vec<f64> = eig.eigenvalues.iter().map(|l| l.max(0.0)).collect();
    let rot_sq: Vec<f64> = rotated.iter().map(|r| r * r).collect();
    let half_log_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();

    let lml = |log_scale: f64, log_noise: f64| -> f64 {
        let s = log_scale.exp();
        let t = log_noise.exp() + settings.jitter * s;
        let mut acc = 0.0;
        for (l, r2) in lambdas.iter().zip(&rot_sq) {
            let d = s * l + t;
            acc -= 0.5 * (r2 / d + d.ln()) + half_log_2pi;
        }
        acc
    };

    let lo = [settings.scale_min.ln(), settings.noise_min.ln()];
    let hi = [settings.scale_max.ln(), settings.noise_max.ln()];
    let mut optima: Vec<([f64; 2], f64)> = start_points(settings.fit_restarts, lo, hi)
        .into_iter()
        .map(|start| compass_search(|p| lml(p[0], p[1]), start, lo, hi, 400))
        .collect();
    // Best first; stable, so ties keep start order.
    optima.sort_by(|a, b| b.1.total_cmp(&a.1));

    let mut last_err = Error::GramNotPd { max_jitter: settings.max_jitter };
    for (p, _) in optima {
        let params = KernelParams::new(p[0].exp(), p[1].exp());
        match GpPosterior::condition_with_similarity(
            inputs.clone(),
            targets.clone(),
            &sim,
            params,
            settings.jitter * params.scale,
            settings.jitter,
            settings.max_jitter,
            mean_const,
        ) {
            Ok(post) => return Ok(post),
            Err(e) => last_err = e,
        }
    }
    Err(last_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_stream;
    use rand::Rng;

    fn fp(v: &[u32]) -> Fingerprint {
        Fingerprint::new(v.to_vec())
    }

    fn random_fps(n: usize, len: usize, max: u32, seed: u64) -> Vec<Fingerprint> {
        let mut rng = derive_stream(seed, 0);
        (0..n)
            .map(|_| loop {
                let f = Fingerprint::new((0..len).map(|_| rng.random_range(0..=max)).collect());
                if !f.is_zero() {
                    break f;
                }
            })
            .collect()
    }

    #[test]
    fn single_point_interpolates() {
        let post =
            GpPosterior::condition(vec![fp(&[1, 2, 0])], vec![3.0], KernelParams::new(1.0, 0.0), 0.0, 0.0).unwrap();
        let p = post.predict(&fp(&[1, 2, 0])).unwrap();
        assert!((p.mean - 3.0).abs() < 1e-8);
        assert!(p.var.abs() < 1e-8);
    }

    #[test]
    fn orthogonal_input_reverts_to_prior() {
        let post = GpPosterior::condition(
            vec![fp(&[1, 0, 0]), fp(&[0, 2, 0])],
            vec![1.0, 2.0],
            KernelParams::new(2.5, 0.01),
            0.0,
            1.5,
        )
        .unwrap();
        let p = post.predict(&fp(&[0, 0, 4])).unwrap();
        assert!((p.mean - 1.5).abs() < 1e-8);
        assert!((p.var - 2.5).abs() < 1e-8);
    }

    #[test]
    fn duplicates_trigger_jitter_escalation() {
        let x = fp(&[1, 1, 0]);
        let post = GpPosterior::condition(
            vec![x.clone(), x.clone(), x],
            vec![1.0, 1.0, 1.0],
            KernelParams::new(1.0, 0.0),
            0.0,
            1.0,
        )
        .unwrap();
        assert!(post.jitter() > 0.0);
    }

    #[test]
    fn factor_reconstructs_gram() {
        let xs = random_fps(30, 16, 3, 9);
        let ys: Vec<f64> = (0..30).map(|i| (i as f64).sin()).collect();
        let params = KernelParams::new(1.7, 0.05);
        let post = GpPosterior::condition(xs.clone(), ys, params, 1e-6, 0.0).unwrap();
        let k = super::super::kernel::gram(&xs, params, post.jitter()).unwrap();
        let l = post.factor();
        let err = (l * l.transpose() - &k).norm() / k.norm();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn constant_targets_interpolate_through_mean() {
        let xs = random_fps(6, 8, 2, 4);
        let data: Vec<f64> = vec![0.7; 6];
        let post = fit_inputs(xs.clone(), data, &GpSettings::default()).unwrap();
        for x in &xs {
            assert!((post.predict(x).unwrap().mean - 0.7).abs() < 1e-6);
        }
    }

    #[test]
    fn fitted_optimum_beats_the_starts() {
        let xs = random_fps(20, 16, 3, 5);
        let ys: Vec<f64> = xs.iter().map(|x| x.counts()[0] as f64 - x.counts()[1] as f64).collect();
        let settings = GpSettings::default();
        let post = fit_inputs(xs.clone(), ys.clone(), &settings).unwrap();
        let best = post.log_marginal_likelihood();
        let mean = ys.iter().sum::<f64>() / ys.len() as f64;
        for p in start_points(8, [1e-3f64.ln(), 1e-6f64.ln()], [1e3f64.ln(), 0.0]) {
            let params = KernelParams::new(p[0].exp(), p[1].exp());
            let other = GpPosterior::condition(xs.clone(), ys.clone(), params, 1e-6 * params.scale, mean).unwrap();
            assert!(best >= other.log_marginal_likelihood() - 1e-6);
        }
        let KernelParams { scale, noise } = post.params();
        assert!((1e-3..=1e3).contains(&scale));
        assert!((1e-6..=1.0).contains(&noise));
    }

    #[test]
    fn predict_rejects_zero_and_wrong_length() {
        let post = GpPosterior::condition(vec![fp(&[1, 0])], vec![1.0], KernelParams::new(1.0, 0.0), 0.0, 0.0).unwrap();
        assert!(post.predict(&fp(&[0, 0])).is_err());
        assert!(post.predict(&fp(&[1, 0, 0])).is_err());
    }

    #[test]
    fn empty_fit_is_an_error() {
        assert!(matches!(fit(&[], &GpSettings::default()), Err(Error::EmptyDataset)));
    }
}
