//! Geometry and sampler diagnostics.
//!
//! Standard normal vectors in `R^d` concentrate on a shell of radius about
//! `√d` and width `O(1)`; a latent search box `[−δ, δ]^d` that ignores this
//! spends almost all of its volume where the prior has no mass. The reports
//! here measure both effects, and compare sample sets for the sampler
//! oracles.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::parallel;
use crate::pcn::ChainState;
use crate::rng::{Purpose, StreamId};
use crate::types::LatentVector;

/// Half-width of the reference shell: 2.5 times the limiting radial sd `1/√2`.
pub const SHELL_HALF_WIDTH: f64 = 2.5 * std::f64::consts::FRAC_1_SQRT_2;

/// Radial mean and sd of `N(0, I_d)`, estimated once by Monte Carlo.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChiReference {
    pub dim: usize,
    pub mean: f64,
    pub sd: f64,
    pub samples: usize,
    pub seed: u64,
}

/// Reproduced by the ignored test `regenerate_chi_reference`.
pub const CHI_REFERENCE: [ChiReference; 6] = [
    ChiReference { dim: 1, mean: 0.798_047, sd: 0.602_820, samples: 10_000_000, seed: 20_240_601 },
    ChiReference { dim: 2, mean: 1.253_382, sd: 0.655_188, samples: 10_000_000, seed: 20_240_601 },
    ChiReference { dim: 8, mean: 2.741_712, sd: 0.695_572, samples: 10_000_000, seed: 20_240_601 },
    ChiReference { dim: 16, mean: 3.937_981, sd: 0.701_688, samples: 10_000_000, seed: 20_240_601 },
    ChiReference { dim: 32, mean: 5.612_974, sd: 0.704_217, samples: 10_000_000, seed: 20_240_601 },
    ChiReference { dim: 128, mean: 11.291_784, sd: 0.706_458, samples: 10_000_000, seed: 20_240_601 },
];

pub fn chi_reference(dim: usize) -> Option<&'static ChiReference> {
    CHI_REFERENCE.iter().find(|r| r.dim == dim)
}

/// `[√d − w, √d + w]` with `w = SHELL_HALF_WIDTH`.
pub fn shell_bounds(dim: usize) -> (f64, f64) {
    let c = (dim as f64).sqrt();
    (c - SHELL_HALF_WIDTH, c + SHELL_HALF_WIDTH)
}

#[derive(Clone, Debug, Serialize)]
pub struct RadialStats {
    pub n: usize,
    pub dim: usize,
    pub mean_radius: f64,
    pub sd_radius: f64,
    #[serde(skip)]
    sorted: Vec<f64>,
}

impl RadialStats {
    pub fn from_radii(dim: usize, mut radii: Vec<f64>) -> Self {
        let n = radii.len();
        let mean = radii.iter().sum::<f64>() / n as f64;
        let var = if n > 1 { radii.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
        radii.sort_by(f64::total_cmp);
        RadialStats { n, dim, mean_radius: mean, sd_radius: var.sqrt(), sorted: radii }
    }

    pub fn from_latents(latents: &[LatentVector]) -> Self {
        let dim = latents.first().map_or(0, LatentVector::dim);
        Self::from_radii(dim, latents.iter().map(LatentVector::norm).collect())
    }

    /// Fraction of samples with radius in `[lo, hi]`.
    pub fn shell_fraction(&self, lo: f64, hi: f64) -> f64 {
        if self.n == 0 || hi < lo {
            return 0.0;
        }
        let a = self.sorted.partition_point(|r| *r < lo);
        let b = self.sorted.partition_point(|r| *r <= hi);
        (b - a) as f64 / self.n as f64
    }

    /// Fraction inside [`shell_bounds`].
    pub fn reference_shell_fraction(&self) -> f64 {
        let (lo, hi) = shell_bounds(self.dim);
        self.shell_fraction(lo, hi)
    }
}

const CHUNK: usize = 4096;

/// Draws in fixed chunks, each from its own stream, so results do not depend
/// on the number of workers.
fn chunked<F>(n: usize, round: usize, seed: u64, f: F) -> Vec<f64>
where
    F: Fn(&mut crate::rng::RngStream) -> f64 + Sync,
{
    let chunks = n.div_ceil(CHUNK);
    parallel::map_range(chunks, |k| {
        let mut rng = StreamId::new(Purpose::Diagnostics).round(round).index(k).stream(seed);
        let len = CHUNK.min(n - k * CHUNK);
        (0..len).map(|_| f(&mut rng)).collect::<Vec<f64>>()
    })
    .into_iter()
    .flatten()
    .collect()
}

/// Radii of `n` standard normal vectors in `R^d`.
pub fn annulus_report(dim: usize, n: usize, seed: u64) -> Result<RadialStats> {
    if dim == 0 || n == 0 {
        return Err(Error::Config("annulus report needs dim >= 1 and n >= 1".into()));
    }
    let radii = chunked(n, 0, seed, |rng| (0..dim).map(|_| rng.standard_normal().powi(2)).sum::<f64>().sqrt());
    Ok(RadialStats::from_radii(dim, radii))
}

/// Fraction of uniform draws from `[−δ, δ]^d` that land in the reference
/// shell around `√d`.
pub fn box_shell_overlap(dim: usize, delta: f64, n: usize, seed: u64) -> f64 {
    if dim == 0 || n == 0 || delta <= 0.0 {
        return 0.0;
    }
    let (lo, hi) = shell_bounds(dim);
    let hits = chunked(n, 1, seed, |rng| {
        let r = (0..dim).map(|_| rng.uniform_in(-delta, delta).powi(2)).sum::<f64>().sqrt();
        if lo <= r && r <= hi {
            1.0
        } else {
            0.0
        }
    });
    hits.iter().sum::<f64>() / n as f64
}

/// Standard error of the mean of an autocorrelated series by
/// non-overlapping batch means (`⌊√n⌋` batches).
pub fn batch_means_se(series: &[f64]) -> f64 {
    let n = series.len();
    let batches = (n as f64).sqrt().floor() as usize;
    if batches < 2 {
        return iid_se(series);
    }
    let size = n / batches;
    let means: Vec<f64> =
        (0..batches).map(|b| series[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64).collect();
    iid_se(&means)
}

fn iid_se(series: &[f64]) -> f64 {
    let n = series.len();
    if n < 2 {
        return 0.0;
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let var = series.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (var / n as f64).sqrt()
}

/// Effective sample size implied by the batch-means standard error.
pub fn effective_sample_size(series: &[f64]) -> f64 {
    let se = batch_means_se(series);
    let iid = iid_se(series);
    if se == 0.0 {
        return series.len() as f64;
    }
    series.len() as f64 * (iid / se).powi(2)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleKind {
    Iid,
    /// Autocorrelated MCMC output; uses batch-means standard errors.
    Chain,
}

#[derive(Clone, Copy, Debug)]
pub struct Samples<'a> {
    pub data: &'a [LatentVector],
    pub kind: SampleKind,
}

impl<'a> Samples<'a> {
    pub fn iid(data: &'a [LatentVector]) -> Self {
        Samples { data, kind: SampleKind::Iid }
    }

    pub fn chain(data: &'a [LatentVector]) -> Self {
        Samples { data, kind: SampleKind::Chain }
    }

    fn stat(&self, f: impl Fn(&LatentVector) -> f64) -> (f64, f64) {
        let series: Vec<f64> = self.data.iter().map(f).collect();
        let mean = series.iter().sum::<f64>() / series.len() as f64;
        let se = match self.kind {
            SampleKind::Iid => iid_se(&series),
            SampleKind::Chain => batch_means_se(&series),
        };
        (mean, se)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct MatchReport {
    /// Per-coordinate z-scores of the difference in means.
    pub mean_z: Vec<f64>,
    /// Per-coordinate z-scores of the difference in second moments `E[z_j²]`.
    pub second_moment_z: Vec<f64>,
    pub max_abs_z: f64,
    pub pass: bool,
}

pub const MATCH_THRESHOLD: f64 = 3.0;

fn z_score(a: (f64, f64), b: (f64, f64)) -> f64 {
    let diff = a.0 - b.0;
    if diff == 0.0 {
        return 0.0;
    }
    let se = (a.1 * a.1 + b.1 * b.1).sqrt();
    if se == 0.0 {
        f64::INFINITY.copysign(diff)
    } else {
        diff / se
    }
}

/// Two-sample comparison of i.i.d. sample sets.
pub fn distribution_match(a: &[LatentVector], b: &[LatentVector]) -> Result<MatchReport> {
    distribution_match_samples(Samples::iid(a), Samples::iid(b))
}

/// Compares per-coordinate means and second moments; passes when every
/// `|z| <= 3`.
pub fn distribution_match_samples(a: Samples<'_>, b: Samples<'_>) -> Result<MatchReport> {
    if a.data.is_empty() || b.data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let dim = a.data[0].dim();
    for s in a.data.iter().chain(b.data) {
        if s.dim() != dim {
            return Err(Error::DimensionMismatch { what: "sample dimension", expected: dim, actual: s.dim() });
        }
    }
    let mut mean_z = Vec::with_capacity(dim);
    let mut second_moment_z = Vec::with_capacity(dim);
    for j in 0..dim {
        mean_z.push(z_score(a.stat(|z| z.coords()[j]), b.stat(|z| z.coords()[j])));
        second_moment_z.push(z_score(a.stat(|z| z.coords()[j].powi(2)), b.stat(|z| z.coords()[j].powi(2))));
    }
    let max_abs_z = mean_z.iter().chain(&second_moment_z).fold(0.0f64, |m, z| m.max(z.abs()));
    Ok(MatchReport { mean_z, second_moment_z, max_abs_z, pass: max_abs_z <= MATCH_THRESHOLD })
}

#[derive(Clone, Debug, Serialize)]
pub struct ChainHealth {
    pub steps: usize,
    pub acceptance_rate: f64,
    pub trailing_acceptance: f64,
    pub final_beta: f64,
    /// Smallest per-coordinate effective sample size of the trajectory.
    pub min_ess: Option<f64>,
}

pub fn chain_health(chain: &ChainState, window: usize) -> ChainHealth {
    let min_ess = chain.trajectory.first().map(|z0| {
        (0..z0.dim())
            .map(|j| {
                let series: Vec<f64> = chain.trajectory.iter().map(|z| z.coords()[j]).collect();
                effective_sample_size(&series)
            })
            .fold(f64::INFINITY, f64::min)
    });
    ChainHealth {
        steps: chain.n_proposed,
        acceptance_rate: chain.acceptance_rate(),
        trailing_acceptance: chain.trailing_acceptance(window),
        final_beta: chain.beta,
        min_ess,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_stream;

    fn chi_mean_exact(d: usize) -> f64 {
        use statrs::function::gamma::ln_gamma;
        std::f64::consts::SQRT_2 * (ln_gamma((d as f64 + 1.0) / 2.0) - ln_gamma(d as f64 / 2.0)).exp()
    }

    #[test]
    fn reference_constants_agree_with_gamma_ratio() {
        for r in &CHI_REFERENCE {
            let exact = chi_mean_exact(r.dim);
            // Monte-Carlo error at 10⁷ samples is below 3e-4 for every dim.
            assert!((r.mean - exact).abs() < 1e-3, "d={}: {} vs {exact}", r.dim, r.mean);
            let sd_exact = (r.dim as f64 - exact * exact).sqrt();
            assert!((r.sd - sd_exact).abs() < 1e-3, "d={}", r.dim);
        }
    }

    #[test]
    #[ignore = "regenerates CHI_REFERENCE; takes about a minute"]
    fn regenerate_chi_reference() {
        let mut ok = true;
        for r in &CHI_REFERENCE {
            let stats = annulus_report(r.dim, r.samples, r.seed).unwrap();
            println!("d={} mean={:.6} sd={:.6}", r.dim, stats.mean_radius, stats.sd_radius);
            ok &= (stats.mean_radius - r.mean).abs() < 5e-7 && (stats.sd_radius - r.sd).abs() < 5e-7;
        }
        assert!(ok, "checked-in constants differ from the regenerated values");
    }

    #[test]
    fn one_dimensional_radius_is_half_normal() {
        let s = annulus_report(1, 200_000, 1).unwrap();
        // E|N(0,1)| = √(2/π)
        assert!((s.mean_radius - (2.0 / std::f64::consts::PI).sqrt()).abs() < 0.005);
    }

    #[test]
    fn high_dimensional_shell() {
        let s = annulus_report(128, 5000, 2).unwrap();
        assert!((s.mean_radius - 11.29).abs() < 0.01 * 11.29);
        assert!((s.sd_radius - std::f64::consts::FRAC_1_SQRT_2).abs() < 0.1 * std::f64::consts::FRAC_1_SQRT_2);
        assert!(s.reference_shell_fraction() >= 0.95);
        assert_eq!(s.shell_fraction(0.0, f64::INFINITY), 1.0);
    }

    #[test]
    fn worker_count_does_not_change_report() {
        let a = parallel::with_workers(Some(1), || annulus_report(8, 10_000, 5).unwrap());
        let b = parallel::with_workers(Some(4), || annulus_report(8, 10_000, 5).unwrap());
        assert_eq!(a.mean_radius, b.mean_radius);
    }

    #[test]
    fn mean_radius_grows_and_shell_concentrates() {
        // At fixed absolute half-width the fraction slowly falls towards
        // P(|Z| <= 2.5) = 0.9876 as the radial sd grows to 1/√2, so
        // concentration shows up relative to the radius: the share within
        // ±25% of √d rises towards 1.
        let mut prev: Option<(f64, f64)> = None;
        for d in [1, 2, 8, 32, 128] {
            let s = annulus_report(d, 100_000, 3).unwrap();
            assert!(s.reference_shell_fraction() >= 0.95);
            let c = (d as f64).sqrt();
            let relative = s.shell_fraction(0.75 * c, 1.25 * c);
            if let Some((m, f)) = prev {
                assert!(s.mean_radius > m);
                assert!(relative >= f, "d={d}: {relative} < {f}");
            }
            prev = Some((s.mean_radius, relative));
        }
    }

    #[test]
    fn box_overlap_in_one_dimension() {
        // Radius |x| in [0, 1 + w]; uniform on [−10, 10] gives (1 + w)/10.
        let w = SHELL_HALF_WIDTH;
        let exact = (1.0 + w) / 10.0;
        let measured = box_shell_overlap(1, 10.0, 200_000, 4);
        assert!((measured - exact).abs() < 0.02, "{measured} vs {exact}");
    }

    #[test]
    fn unit_box_misses_128_dim_shell() {
        let tight = box_shell_overlap(128, 1.0, 100_000, 5);
        assert!(tight < 0.01);
        let matched = box_shell_overlap(128, 3f64.sqrt(), 100_000, 5);
        assert!(matched > tight);
    }

    fn iid(n: usize, dim: usize, seed: u64, shift: f64) -> Vec<LatentVector> {
        let mut rng = derive_stream(seed, 0);
        (0..n)
            .map(|_| {
                let mut v = rng.normal_vec(dim);
                v[0] += shift;
                LatentVector::new(v).unwrap()
            })
            .collect()
    }

    #[test]
    fn identical_sets_have_zero_z() {
        let a = iid(100, 3, 1, 0.0);
        let r = distribution_match(&a, &a).unwrap();
        assert_eq!(r.max_abs_z, 0.0);
        assert!(r.pass);
    }

    #[test]
    fn halves_of_one_sample_match() {
        let all = iid(20_000, 2, 2, 0.0);
        let (a, b) = all.split_at(10_000);
        assert!(distribution_match(a, b).unwrap().pass);
    }

    #[test]
    fn shifted_sample_fails() {
        let a = iid(10_000, 2, 3, 0.0);
        let b = iid(10_000, 2, 4, 1.0);
        let r = distribution_match(&a, &b).unwrap();
        assert!(!r.pass);
        assert!(r.mean_z[0].abs() > 10.0);
    }

    #[test]
    fn mismatched_dims_rejected() {
        let a = iid(10, 2, 1, 0.0);
        let b = iid(10, 3, 1, 0.0);
        assert!(matches!(distribution_match(&a, &b), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn batch_means_inflates_se_for_correlated_series() {
        // AR(1) with coefficient 0.9: variance inflation (1 + ρ)/(1 − ρ) = 19.
        let mut rng = derive_stream(6, 0);
        let mut x = 0.0;
        let series: Vec<f64> = (0..100_000)
            .map(|_| {
                x = 0.9 * x + rng.standard_normal();
                x
            })
            .collect();
        let ratio = (batch_means_se(&series) / iid_se(&series)).powi(2);
        assert!((ratio - 19.0).abs() < 5.0, "{ratio}");
    }
}
