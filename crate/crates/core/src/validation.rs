//! Oracle suites behind `cowboys validate`: each check compares an
//! implementation against an independent computation.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;

use crate::decoder::{Decode, DecoderKind, DecoderSpec, LinearThreshold};
use crate::diagnostics::{chi_reference, distribution_match_samples, Samples};
use crate::error::{Error, Result};
use crate::normal;
use crate::objectives::{Objective, ObjectiveSpec};
use crate::pcn::{rejection_sample, AcceptanceMode, ChainConfig, ChainState, LatentTarget, Scored, TargetSpec};
use crate::rng::{derive_stream, Purpose, RngStream, StreamId};
use crate::tanimoto_gp::{
    fit_inputs, gram, qei_estimate, qei_greedy_select, tanimoto, BaseDraws, GpPosterior, GpSettings, KernelParams,
};
use crate::types::{Fingerprint, LatentVector, Structure};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Kernel,
    Gp,
    Qei,
    Pcn,
    All,
}

impl std::str::FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kernel" => Ok(Suite::Kernel),
            "gp" => Ok(Suite::Gp),
            "qei" => Ok(Suite::Qei),
            "pcn" => Ok(Suite::Pcn),
            "all" => Ok(Suite::All),
            other => Err(Error::Config(format!("unknown validation suite {other:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Check { name, passed, detail }
    }
}

pub fn run_suite(suite: Suite, seed: u64) -> Result<Vec<Check>> {
    Ok(match suite {
        Suite::Kernel => kernel_suite(seed)?,
        Suite::Gp => gp_suite(seed)?,
        Suite::Qei => qei_suite(seed)?,
        Suite::Pcn => pcn_suite(seed)?,
        Suite::All => {
            let mut all = kernel_suite(seed)?;
            all.extend(gp_suite(seed)?);
            all.extend(qei_suite(seed)?);
            all.extend(pcn_suite(seed)?);
            all
        }
    })
}

fn stream(seed: u64, index: usize) -> RngStream {
    StreamId::new(Purpose::Validation).index(index).stream(seed)
}

/// Nonzero fingerprint with counts in `0..=max`.
pub fn random_fingerprint(len: usize, max: u32, rng: &mut RngStream) -> Fingerprint {
    loop {
        let fp = Fingerprint::new((0..len).map(|_| rng.random_range(0..=max)).collect());
        if !fp.is_zero() {
            return fp;
        }
    }
}

/// Tanimoto similarity from its set-style definition, in floating point.
fn tanimoto_scalar(a: &Fingerprint, b: &Fingerprint, scale: f64) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.counts().iter().zip(b.counts()) {
        let (x, y) = (f64::from(x), f64::from(y));
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    scale * ab / (aa + bb - ab)
}

fn kernel_suite(seed: u64) -> Result<Vec<Check>> {
    let mut rng = stream(seed, 0);
    let mut worst = 0.0f64;
    let mut symmetric = true;
    let mut in_range = true;
    for _ in 0..200 {
        let a = random_fingerprint(32, 5, &mut rng);
        let b = random_fingerprint(32, 5, &mut rng);
        let scale = rng.uniform_in(0.1, 10.0);
        let k = tanimoto(&a, &b, scale)?;
        worst = worst.max((k - tanimoto_scalar(&a, &b, scale)).abs());
        symmetric &= k == tanimoto(&b, &a, scale)?;
        in_range &= (0.0..=scale).contains(&k) && tanimoto(&a, &a, scale)? == scale;
    }
    let mut min_eig = f64::INFINITY;
    for _ in 0..50 {
        let set: Vec<Fingerprint> = (0..32).map(|_| random_fingerprint(32, 5, &mut rng)).collect();
        let k = gram(&set, KernelParams::new(1.0, 0.0), 0.0)?;
        min_eig = min_eig.min(SymmetricEigen::new(k).eigenvalues.min());
    }
    Ok(vec![
        Check::new("kernel.formula", worst <= 1e-12, format!("max deviation {worst:.3e}")),
        Check::new("kernel.symmetry", symmetric, "k(a,b) == k(b,a) on 200 pairs".into()),
        Check::new("kernel.range", in_range, "0 <= k <= scale, k(a,a) = scale".into()),
        Check::new("kernel.psd", min_eig >= -1e-9, format!("min Gram eigenvalue {min_eig:.3e}")),
    ])
}

/// Posterior mean and latent variance by explicit inversion, the
/// dense-solve oracle for the Cholesky path.
pub fn dense_posterior(
    inputs: &[Fingerprint],
    targets: &[f64],
    params: KernelParams,
    jitter: f64,
    mean_const: f64,
    x: &Fingerprint,
) -> (f64, f64) {
    let n = inputs.len();
    let mut k = DMatrix::from_fn(n, n, |i, j| tanimoto_scalar(&inputs[i], &inputs[j], params.scale));
    for i in 0..n {
        k[(i, i)] += params.noise + jitter;
    }
    let inv = k.try_inverse().expect("regularized Gram is invertible");
    let kx = DVector::from_iterator(n, inputs.iter().map(|xi| tanimoto_scalar(xi, x, params.scale)));
    let centred = DVector::from_iterator(n, targets.iter().map(|y| y - mean_const));
    let mean = mean_const + (kx.transpose() * &inv * centred)[(0, 0)];
    let var = params.scale - (kx.transpose() * &inv * &kx)[(0, 0)];
    (mean, var.max(0.0))
}

fn gp_suite(seed: u64) -> Result<Vec<Check>> {
    let mut rng = stream(seed, 1);
    let mut worst_mean = 0.0f64;
    let mut worst_var = 0.0f64;
    let mut worst_recon = 0.0f64;
    let mut lml_gap = f64::NEG_INFINITY;
    for _ in 0..20 {
        let inputs: Vec<Fingerprint> = (0..8).map(|_| random_fingerprint(16, 3, &mut rng)).collect();
        let targets: Vec<f64> = (0..8).map(|_| rng.standard_normal()).collect();
        let params = KernelParams::new(rng.uniform_in(0.5, 2.0), rng.uniform_in(1e-3, 0.1));
        let mean_const = rng.standard_normal();
        let post = GpPosterior::condition(inputs.clone(), targets.clone(), params, 0.0, mean_const)?;
        for _ in 0..10 {
            let x = random_fingerprint(16, 3, &mut rng);
            let p = post.predict(&x)?;
            let (m, v) = dense_posterior(&inputs, &targets, params, post.jitter(), mean_const, &x);
            worst_mean = worst_mean.max((p.mean - m).abs());
            worst_var = worst_var.max((p.var - v).abs());
        }
        let l = post.factor();
        let k = gram(&inputs, params, post.jitter())?;
        worst_recon = worst_recon.max((l * l.transpose() - &k).norm() / k.norm());

        // Fitted hyperparameters should beat a coarse grid.
        let settings = GpSettings::default();
        let fitted = fit_inputs(inputs.clone(), targets.clone(), &settings)?;
        let mean = targets.iter().sum::<f64>() / 8.0;
        let mut grid_best = f64::NEG_INFINITY;
        for i in 0..13 {
            for j in 0..7 {
                let s = 10f64.powf(-3.0 + 0.5 * i as f64);
                let t = 10f64.powf(-6.0 + j as f64);
                let p = GpPosterior::condition(
                    inputs.clone(),
                    targets.clone(),
                    KernelParams::new(s, t),
                    settings.jitter * s,
                    mean,
                )?;
                grid_best = grid_best.max(p.log_marginal_likelihood());
            }
        }
        lml_gap = lml_gap.max(grid_best - fitted.log_marginal_likelihood());
    }
    Ok(vec![
        Check::new(
            "gp.dense_solve",
            worst_mean <= 1e-8 && worst_var <= 1e-8,
            format!("max |Δmean| {worst_mean:.3e}, max |Δvar| {worst_var:.3e}"),
        ),
        Check::new("gp.factor", worst_recon <= 1e-8, format!("relative reconstruction error {worst_recon:.3e}")),
        Check::new("gp.fit_vs_grid", lml_gap <= 1e-6, format!("grid beats fit by at most {lml_gap:.3e}")),
    ])
}

/// Random posterior over `n` points plus `m` candidates, for qEI checks.
pub fn qei_instance(rng: &mut RngStream, n: usize, m: usize) -> Result<(GpPosterior, Vec<Structure>, f64)> {
    let inputs: Vec<Fingerprint> = (0..n).map(|_| random_fingerprint(12, 2, rng)).collect();
    let targets: Vec<f64> = (0..n).map(|_| rng.standard_normal()).collect();
    let f_star = targets.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let post = GpPosterior::condition(inputs, targets, KernelParams::new(1.0, 0.01), 0.0, 0.0)?;
    let candidates = (0..m).map(|_| Structure::new(random_fingerprint(12, 2, rng))).collect();
    Ok((post, candidates, f_star))
}

fn qei_suite(seed: u64) -> Result<Vec<Check>> {
    let mut rng = stream(seed, 2);
    let mut worst_z = 0.0f64;
    let (post, cands, f_star) = qei_instance(&mut rng, 6, 10)?;
    for x in &cands {
        let draws = BaseDraws::new(20_000, 1, &mut rng);
        let est = qei_estimate(&post, std::slice::from_ref(x), f_star, &draws)?;
        let p = post.predict(&x.fingerprint)?;
        let ei = normal::expected_improvement(p.mean, p.var, f_star);
        let z = if est.std_error > 0.0 { (est.value - ei) / est.std_error } else { (est.value - ei) * 1e12 };
        worst_z = worst_z.max(z.abs());
    }

    let mut agree = 0;
    for _ in 0..20 {
        let (post, cands, f_star) = qei_instance(&mut rng, 6, 10)?;
        let chosen = qei_greedy_select(&post, &cands, f_star, 1, 4096, &mut rng)?;
        let eis: Vec<f64> = cands
            .iter()
            .map(|x| {
                let p = post.predict(&x.fingerprint).expect("nonzero candidate");
                normal::expected_improvement(p.mean, p.var, f_star)
            })
            .collect();
        let best = eis.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let picked = cands.iter().position(|c| c == &chosen[0]).expect("chosen from candidates");
        // Within MC noise of the argmax counts as agreement.
        if eis[picked] >= best - 1e-3 * best.abs().max(1e-12) {
            agree += 1;
        }
    }

    let draws = BaseDraws::new(2048, 2, &mut rng);
    let one = qei_estimate(&post, &cands[..1], f_star, &draws)?;
    let two = qei_estimate(&post, &cands[..2], f_star, &draws)?;

    Ok(vec![
        Check::new("qei.b1_vs_analytic_ei", worst_z <= 3.0, format!("max |z| {worst_z:.2} over 10 candidates")),
        Check::new("qei.greedy_b1_argmax", agree >= 19, format!("{agree}/20 agree with analytic EI")),
        Check::new(
            "qei.monotone_in_batch",
            two.value >= one.value,
            format!("qEI {{x1}} = {:.4e}, {{x1,x2}} = {:.4e}", one.value, two.value),
        ),
    ])
}

/// Flat likelihood: the PCN chain should leave its reference law invariant.
pub struct ConstantLikelihood(pub AcceptanceMode);

impl LatentTarget for ConstantLikelihood {
    fn evaluate(&self, _z: &LatentVector) -> Result<Scored> {
        Ok(Scored { log_lik: 0.0, structure: None })
    }

    fn acceptance_mode(&self) -> AcceptanceMode {
        self.0
    }
}

pub const FIXTURE_INSTANCE: u64 = 0;
pub const FIXTURE_SCALE: f64 = 0.003;

/// Two-dimensional improvement-conditioned target: a linear-threshold
/// decoder, a Tanimoto GP on five decoded prior draws and `f*` at their
/// incumbent.
pub struct PcnFixture {
    pub decoder: DecoderSpec,
    pub posterior: GpPosterior,
    pub f_star: f64,
}

impl PcnFixture {
    pub fn new() -> Result<Self> {
        Self::with_instance(FIXTURE_INSTANCE, FIXTURE_SCALE)
    }

    /// Fixture built from instance seed `instance` with GP scale `scale`.
    pub fn with_instance(instance: u64, scale: f64) -> Result<Self> {
        let mut rng = derive_stream(instance, StreamId::new(Purpose::Validation).round(1).pack());
        let dec = LinearThreshold::random(2, 12, 0.5, false, &mut rng);
        let decoder = DecoderSpec::new(DecoderKind::LinearThreshold(dec), DecoderSpec::default_fallback(12))?;
        let target = decoder.decode_map(&rng.prior_latent(2))?;
        let objective = ObjectiveSpec::tanimoto_to_target(target.fingerprint)?;
        let mut inputs = Vec::new();
        let mut ys = Vec::new();
        for _ in 0..5 {
            let x = decoder.decode_map(&rng.prior_latent(2))?;
            ys.push(objective.evaluate(&x)?);
            inputs.push(x.fingerprint);
        }
        let f_star = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = ys.iter().sum::<f64>() / ys.len() as f64;
        let posterior = GpPosterior::condition(inputs, ys, KernelParams::new(scale, 1e-4), 0.0, mean)?;
        Ok(PcnFixture { decoder, posterior, f_star })
    }

    pub fn target(&self, mode: AcceptanceMode) -> TargetSpec<'_, DecoderSpec> {
        TargetSpec::new(&self.posterior, &self.decoder, self.f_star, mode)
    }
}

/// Adapts during `burn_in`, then runs `steps` frozen steps recording the
/// with-repeats trajectory.
pub fn frozen_chain<T: LatentTarget>(
    target: &T,
    dim: usize,
    burn_in: usize,
    steps: usize,
    rng: RngStream,
) -> Result<ChainState> {
    let config = ChainConfig::default();
    let mut chain = ChainState::start(target, LatentVector::zeros(dim), config.beta_init, rng)?;
    chain.advance(target, burn_in, &config)?;
    chain.trajectory.clear();
    let frozen = ChainConfig { record_trajectory: true, ..config.frozen() };
    chain.advance(target, steps, &frozen)?;
    Ok(chain)
}

fn pcn_suite(seed: u64) -> Result<Vec<Check>> {
    let mut checks = Vec::new();

    let chain = frozen_chain(&ConstantLikelihood(AcceptanceMode::StandardPcn), 8, 1_000, 20_000, stream(seed, 3))?;
    let worst_var = (0..8)
        .map(|j| {
            let v = chain.trajectory.iter().map(|z| z.coords()[j].powi(2)).sum::<f64>() / chain.trajectory.len() as f64;
            (v - 1.0).abs()
        })
        .fold(0.0, f64::max);
    let radius = chain.trajectory.iter().map(LatentVector::norm).sum::<f64>() / chain.trajectory.len() as f64;
    let reference = chi_reference(8).expect("d = 8 reference").mean;
    checks.push(Check::new(
        "pcn.prior_invariance",
        worst_var <= 0.1 && (radius - reference).abs() <= 0.03 * reference,
        format!("max |var − 1| {worst_var:.3}, mean radius {radius:.4} vs {reference:.4}"),
    ));

    let chain = frozen_chain(&ConstantLikelihood(AcceptanceMode::Paper), 8, 1_000, 20_000, stream(seed, 4))?;
    let r2 = chain.trajectory.iter().map(LatentVector::norm_sq).sum::<f64>() / chain.trajectory.len() as f64;
    checks.push(Check::new(
        "pcn.paper_mode_squared_prior",
        (r2 - 4.0).abs() <= 0.08 * 4.0,
        format!("mean squared radius {r2:.3}, law p(z)² predicts 4"),
    ));

    let fixture = PcnFixture::new()?;
    let target = fixture.target(AcceptanceMode::StandardPcn);
    let chain = frozen_chain(&target, 2, 5_000, 50_000, stream(seed, 5))?;
    let oracle = rejection_sample(&target, 5_000, 2, &mut stream(seed, 6))?;
    let report = distribution_match_samples(Samples::chain(&chain.trajectory), Samples::iid(&oracle))?;
    checks.push(Check::new(
        "pcn.rejection_oracle",
        report.pass,
        format!(
            "max |z| {:.2} (means {:?}, second moments {:?})",
            report.max_abs_z, report.mean_z, report.second_moment_z
        ),
    ));

    let mut chain = ChainState::start(&target, LatentVector::zeros(2), 0.1, stream(seed, 7))?;
    chain.advance(&target, 10_000, &ChainConfig::default())?;
    let trailing = chain.trailing_acceptance(1000);
    checks.push(Check::new(
        "pcn.adaptive_beta",
        (trailing - 0.243).abs() <= 0.05,
        format!("trailing-1000 acceptance {trailing:.3}, β = {:.3}", chain.beta),
    ));
    Ok(checks)
}
