//! Latent-space BO baseline: a squared-exponential GP on `(z, y)` pairs inside
//! the clipped box `[−δ, δ]^d`, with probability of improvement maximized by
//! random multi-start search.

use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector};

use super::record::{IterationStats, RunRecord, StrategyName};
use super::{check_dims, Session};
use crate::config::RunConfig;
use crate::decoder::Decode;
use crate::diagnostics::{box_shell_overlap, shell_bounds};
use crate::error::{Error, Result};
use crate::normal;
use crate::objectives::Objective;
use crate::parallel;
use crate::rng::{Purpose, RngStream, StreamId};
use crate::search::{compass_search, start_points};
use crate::types::LatentVector;

/// Exact GP on latent vectors with kernel `s·exp(−‖a−b‖²/(2ℓ²))`. Targets
/// are standardized internally; predictions are in original units.
#[derive(Clone, Debug)]
pub struct LatentGp {
    inputs: Vec<Vec<f64>>,
    y_mean: f64,
    y_scale: f64,
    lengthscale: f64,
    scale: f64,
    noise: f64,
    factor: DMatrix<f64>,
    weights: DVector<f64>,
}

fn se(a: &[f64], b: &[f64], lengthscale: f64, scale: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    scale * (-0.5 * d2 / (lengthscale * lengthscale)).exp()
}

fn standardize(targets: &[f64]) -> (f64, f64, Vec<f64>) {
    let n = targets.len() as f64;
    let mean = targets.iter().sum::<f64>() / n;
    let var = targets.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
    let sd = if var > 1e-24 { var.sqrt() } else { 1.0 };
    (mean, sd, targets.iter().map(|y| (y - mean) / sd).collect())
}

fn factorize(inputs: &[Vec<f64>], lengthscale: f64, scale: f64, noise: f64) -> Option<DMatrix<f64>> {
    let n = inputs.len();
    for jitter in [1e-8, 1e-6, 1e-4] {
        let k = DMatrix::from_fn(n, n, |i, j| {
            se(&inputs[i], &inputs[j], lengthscale, scale) + if i == j { noise + jitter * scale } else { 0.0 }
        });
        if let Some(ch) = Cholesky::new(k) {
            return Some(ch.l());
        }
    }
    None
}

fn lower_solve(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    l.solve_lower_triangular(b).expect("factor has a positive diagonal")
}

impl LatentGp {
    /// Fits lengthscale, scale and noise by maximizing the marginal
    /// likelihood; `lengthscale` bounds the search.
    pub fn fit(inputs: &[LatentVector], targets: &[f64], lengthscale: (f64, f64), restarts: usize) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if inputs.len() != targets.len() {
            return Err(Error::LengthMismatch { expected: inputs.len(), actual: targets.len() });
        }
        let xs: Vec<Vec<f64>> = inputs.iter().map(|z| z.coords().to_vec()).collect();
        let (_, _, ys) = standardize(targets);
        let y = DVector::from_vec(ys);
        let n = xs.len() as f64;
        let lml = |p: [f64; 3]| -> f64 {
            let Some(l) = factorize(&xs, p[0].exp(), p[1].exp(), p[2].exp()) else {
                return f64::NEG_INFINITY;
            };
            let v = lower_solve(&l, &y);
            let log_det: f64 = l.diagonal().iter().map(|d| d.ln()).sum();
            -0.5 * v.norm_squared() - log_det - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
        };
        let lo = [lengthscale.0.ln(), 1e-2f64.ln(), 1e-6f64.ln()];
        let hi = [lengthscale.1.ln(), 1e2f64.ln(), 0.0];
        let mut best: Option<([f64; 3], f64)> = None;
        for start in start_points(restarts.max(1), lo, hi) {
            let (p, v) = compass_search(lml, start, lo, hi, 60);
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((p, v));
            }
        }
        let (p, _) = best.expect("at least one start");
        LatentGp::condition(inputs, targets, p[0].exp(), p[1].exp(), p[2].exp())
    }

    /// Conditions at fixed hyperparameters (scale and noise in standardized
    /// units).
    pub fn condition(
        inputs: &[LatentVector],
        targets: &[f64],
        lengthscale: f64,
        scale: f64,
        noise: f64,
    ) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let xs: Vec<Vec<f64>> = inputs.iter().map(|z| z.coords().to_vec()).collect();
        let (y_mean, y_scale, ys) = standardize(targets);
        let factor = factorize(&xs, lengthscale, scale, noise).ok_or(Error::GramNotPd { max_jitter: 1e-4 })?;
        let v = lower_solve(&factor, &DVector::from_vec(ys));
        let weights = factor.transpose().solve_upper_triangular(&v).expect("factor has a positive diagonal");
        Ok(LatentGp { inputs: xs, y_mean, y_scale, lengthscale, scale, noise, factor, weights })
    }

    pub fn hyperparameters(&self) -> (f64, f64, f64) {
        (self.lengthscale, self.scale, self.noise)
    }

    /// Latent mean and variance at `z`.
    pub fn predict(&self, z: &[f64]) -> (f64, f64) {
        let k = DVector::from_iterator(
            self.inputs.len(),
            self.inputs.iter().map(|x| se(x, z, self.lengthscale, self.scale)),
        );
        let mean = k.dot(&self.weights);
        let v = lower_solve(&self.factor, &k);
        let var = (self.scale - v.norm_squared()).max(0.0);
        (self.y_mean + self.y_scale * mean, self.y_scale * self.y_scale * var)
    }
}

fn primes(count: usize) -> Vec<u64> {
    let mut out = Vec::with_capacity(count);
    let mut c = 2u64;
    while out.len() < count {
        if out.iter().take_while(|p| *p * *p <= c).all(|p| !c.is_multiple_of(*p)) {
            out.push(c);
        }
        c += 1;
    }
    out
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut inv = 1.0 / base as f64;
    let mut out = 0.0;
    while i > 0 {
        out += (i % base) as f64 * inv;
        i /= base;
        inv /= base as f64;
    }
    out
}

/// `n` points of a randomly shifted Halton sequence in `[−δ, δ]^d`.
pub fn halton_design(n: usize, dim: usize, delta: f64, rng: &mut RngStream) -> Vec<LatentVector> {
    let bases = primes(dim);
    let shift: Vec<f64> = (0..dim).map(|_| rng.uniform()).collect();
    (1..=n as u64)
        .map(|i| {
            let coords = bases
                .iter()
                .zip(&shift)
                .map(|(&b, s)| -delta + 2.0 * delta * (radical_inverse(i, b) + s).fract())
                .collect();
            LatentVector::from_finite(coords)
        })
        .collect()
}

fn clip_step(x: &[f64], dir: &[f64], r: f64, delta: f64) -> Vec<f64> {
    x.iter().zip(dir).map(|(a, e)| (a + r * e).clamp(-delta, delta)).collect()
}

/// Maximizes `f` over `[−δ, δ]^d` with at most `evals` evaluations: half
/// uniform draws, the rest split evenly between local random searches from
/// the ten best draws. Ties keep the earliest point.
fn maximize_in_box<F>(f: F, dim: usize, delta: f64, evals: usize, streams: (u64, usize)) -> (Vec<f64>, f64)
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let (seed, iteration) = streams;
    let stream = |k: usize| StreamId::new(Purpose::Acquisition).iteration(iteration).index(k).stream(seed);
    let n_global = (evals / 2).max(1);
    let mut rng = stream(0);
    let points: Vec<Vec<f64>> =
        (0..n_global).map(|_| (0..dim).map(|_| rng.uniform_in(-delta, delta)).collect()).collect();
    let values = parallel::map_slice(&points, |p| f(p));
    let mut order: Vec<usize> = (0..n_global).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let starts = order.len().min(10);
    let budget = evals.saturating_sub(n_global) / starts.max(1);

    let locals = parallel::map_range(starts, |k| {
        let mut rng = stream(k + 1);
        let mut x = points[order[k]].clone();
        let mut fx = values[order[k]];
        let mut r = 0.1 * delta;
        let mut misses = 0;
        for _ in 0..budget {
            let dir = rng.normal_vec(dim);
            let cand = clip_step(&x, &dir, r, delta);
            let fc = f(&cand);
            if fc > fx {
                x = cand;
                fx = fc;
                misses = 0;
            } else {
                misses += 1;
                if misses == 5 {
                    r *= 0.5;
                    misses = 0;
                }
            }
        }
        (x, fx)
    });

    let mut best = (points[order[0]].clone(), values[order[0]]);
    for (x, fx) in locals {
        if fx > best.1 {
            best = (x, fx);
        }
    }
    best
}

/// Latent-space BO in `[−δ, δ]^d`: a shifted-Halton initial design of size
/// `N_init`, then one PI-maximizing point per iteration.
pub fn lsbo_run<D: Decode, O: Objective>(
    config: &RunConfig,
    delta: f64,
    decoder: &D,
    objective: &O,
) -> Result<RunRecord> {
    config.validate()?;
    check_dims(config, decoder)?;
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::Config(format!("lsbo delta must be positive, got {delta}")));
    }
    let d = config.latent_dim;
    let seed = config.seed;
    let mut session = Session::new(config, decoder, objective);

    let mut rng = StreamId::new(Purpose::InitialDesign).round(1).stream(seed);
    let design = halton_design(config.init_size, d, delta, &mut rng);
    let overlap = box_shell_overlap(d, delta, 10_000, seed);
    if overlap < 0.01 {
        let mean_radius = design.iter().map(LatentVector::norm).sum::<f64>() / design.len() as f64;
        let (lo, hi) = shell_bounds(d);
        session.warnings.push(format!(
            "search box misses prior shell: {:.2}% of the box lies in radius [{lo:.3}, {hi:.3}], mean design radius {mean_radius:.3} vs sqrt(d) = {:.3}",
            100.0 * overlap,
            (d as f64).sqrt()
        ));
    }
    session.latent_design(design)?;

    let evals = config.lsbo.acquisition_evals;
    let ls_bounds = (1e-2 * delta, 10.0 * delta * (d as f64).sqrt());
    for n in config.init_size + 1..=config.budget {
        let start = Instant::now();
        let calls_before = session.counters.decoder_calls();
        let predicts_before = session.counters.gp_predicts();
        let latents: Vec<LatentVector> = session.dataset.evaluations().iter().map(|e| e.latent.clone()).collect();
        let ys: Vec<f64> = session.dataset.evaluations().iter().map(|e| e.y).collect();
        let gp = LatentGp::fit(&latents, &ys, ls_bounds, config.lsbo.fit_restarts)?;
        let f_star = session.dataset.best()?;
        let fitted = Instant::now();
        session.times.fit += fitted - start;

        let acq = |z: &[f64]| {
            let (m, v) = gp.predict(z);
            normal::log_prob_improvement(m, v, f_star)
        };
        let (z, _) = maximize_in_box(acq, d, delta, evals, (seed, n));
        session.counters.add_gp_predicts(evals as u64);
        let z = LatentVector::from_finite(z);
        let x = decoder.decode_map(&z)?;
        session.counters.add_decoder_calls(1);
        let sampled = Instant::now();
        session.times.sample += sampled - fitted;

        let y = session.evaluate(n, std::slice::from_ref(&x))?[0];
        session.push(n, 0, x, z, y)?;
        session.times.evaluate += sampled.elapsed();

        let calls = session.counters.decoder_calls();
        let predicts = session.counters.gp_predicts();
        session.iterations.push(IterationStats {
            iteration: n,
            f_star: Some(f_star),
            accept_rate: None,
            beta_final: None,
            final_betas: Vec::new(),
            restarts: None,
            fallbacks: None,
            candidates: None,
            decoder_calls: calls - calls_before,
            gp_predicts: predicts - predicts_before,
            decoder_calls_cum: calls,
            gp_predicts_cum: predicts,
            wall: start.elapsed(),
        });
    }
    Ok(session.finish(StrategyName::Lsbo))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_stream;
    use crate::types::{Fingerprint, Structure};

    /// Encodes a 1-d latent into a single count so the objective can read
    /// it back (resolution 1e-4).
    struct PassThrough;
    const OFFSET: f64 = 100.0;
    impl Decode for PassThrough {
        fn latent_dim(&self) -> usize {
            1
        }
        fn fingerprint_len(&self) -> usize {
            1
        }
        fn decode_map(&self, z: &LatentVector) -> Result<Structure> {
            let c = ((z.coords()[0] + OFFSET) * 1e4).round() as u32 + 1;
            Ok(Structure::new(Fingerprint::new(vec![c])))
        }
    }
    struct NegSquare;
    impl Objective for NegSquare {
        fn evaluate(&self, x: &Structure) -> Result<f64> {
            let z = f64::from(x.fingerprint.counts()[0] - 1) / 1e4 - OFFSET;
            Ok(-z * z)
        }
    }

    #[test]
    fn toy_quadratic_reaches_optimum() {
        let mut config = RunConfig::new(1, 1, 30, 5);
        config.seed = 4;
        let record = lsbo_run(&config, 2.0, &PassThrough, &NegSquare).unwrap();
        assert_eq!(record.evaluations.len(), 30);
        assert!(record.final_best() > -0.05, "{}", record.final_best());
        assert!(record.warnings.is_empty());
        let bsf = record.best_so_far();
        assert!(bsf.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn huge_box_is_flagged() {
        let mut config = RunConfig::new(32, 16, 3, 3);
        config.decoder.seed = 2;
        let dec = config.decoder_spec().unwrap();
        let obj = config.objective_spec(&dec).unwrap();
        let record = lsbo_run(&config, 1e3, &dec, &obj).unwrap();
        assert!(record.warnings.iter().any(|w| w.contains("search box misses prior shell")));
        let r = record.evaluations[0].latent.norm();
        assert!(r > 10.0 * 32f64.sqrt());
    }

    #[test]
    fn halton_fills_box() {
        let pts = halton_design(64, 3, 2.0, &mut derive_stream(1, 0));
        assert!(pts.iter().all(|p| p.coords().iter().all(|c| c.abs() <= 2.0)));
        // Stratification: each half of every axis gets exactly half the points.
        for axis in 0..3 {
            let below = pts.iter().filter(|p| p.coords()[axis] < 0.0).count();
            assert!((below as i64 - 32).abs() <= 2, "axis {axis}: {below}");
        }
    }

    #[test]
    fn radical_inverse_base_two() {
        assert_eq!(radical_inverse(1, 2), 0.5);
        assert_eq!(radical_inverse(6, 2), 0.375);
        assert_eq!(primes(5), vec![2, 3, 5, 7, 11]);
    }

    #[test]
    fn latent_gp_interpolates_with_low_noise() {
        let zs: Vec<LatentVector> = [-1.0, 0.0, 1.0].iter().map(|&v| LatentVector::new(vec![v]).unwrap()).collect();
        let ys = [1.0, 3.0, 2.0];
        let gp = LatentGp::condition(&zs, &ys, 0.7, 1.0, 1e-6).unwrap();
        for (z, y) in zs.iter().zip(ys) {
            let (m, v) = gp.predict(z.coords());
            assert!((m - y).abs() < 1e-3, "{m} vs {y}");
            assert!(v < 1e-3);
        }
        let (m, v) = gp.predict(&[50.0]);
        assert!((m - 2.0).abs() < 1e-9 && v > 0.0);
        let fitted = LatentGp::fit(&zs, &ys, (0.01, 10.0), 3).unwrap();
        assert!(fitted.hyperparameters().0 > 0.0);
    }

    #[test]
    fn acquisition_search_uses_budget_and_finds_peak() {
        let count = std::sync::atomic::AtomicUsize::new(0);
        let f = |x: &[f64]| {
            count.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
            -(x[0] - 0.7).powi(2) - (x[1] + 0.2).powi(2)
        };
        let (x, _) = maximize_in_box(f, 2, 1.0, 5000, (1, 1));
        assert_eq!(count.into_inner(), 5000);
        assert!((x[0] - 0.7).abs() < 1e-2 && (x[1] + 0.2).abs() < 1e-2);
    }
}
