//! Monte-Carlo batch expected improvement (qEI) with greedy subset selection.
//!
//! All estimates inside one selection share a fixed matrix of standard normal
//! base draws (common random numbers), so comparisons between candidates are
//! deterministic and low-variance.

use std::collections::BTreeMap;

use nalgebra::DVector;

use super::posterior::{GpPosterior, Prediction};
use crate::error::{Error, Result};
use crate::parallel;
use crate::rng::RngStream;
use crate::types::{Fingerprint, Structure};

/// `mc × width` standard normal draws, row-major.
#[derive(Clone, Debug)]
pub struct BaseDraws {
    mc: usize,
    width: usize,
    z: Vec<f64>,
}

impl BaseDraws {
    pub fn new(mc: usize, width: usize, rng: &mut RngStream) -> Self {
        let z = (0..mc * width).map(|_| rng.standard_normal()).collect();
        BaseDraws { mc, width, z }
    }

    pub fn samples(&self) -> usize {
        self.mc
    }

    fn row(&self, s: usize) -> &[f64] {
        &self.z[s * self.width..(s + 1) * self.width]
    }
}

/// Posterior marginal of one candidate plus its whitened cross-covariance.
struct CandidateMoments {
    prediction: Prediction,
    whitened: DVector<f64>,
}

impl CandidateMoments {
    fn of(post: &GpPosterior, x: &Fingerprint) -> Result<Self> {
        let (prediction, whitened) = post.predict_whitened(x)?;
        Ok(CandidateMoments { prediction, whitened })
    }
}

/// Incrementally built lower-triangular factor of the joint posterior
/// covariance of a growing batch, plus the running per-draw batch maximum.
struct JointBatch<'a> {
    post: &'a GpPosterior,
    draws: &'a BaseDraws,
    members: Vec<(&'a Fingerprint, &'a CandidateMoments)>,
    rows: Vec<Vec<f64>>,
    running_max: Vec<f64>,
}

impl<'a> JointBatch<'a> {
    fn new(post: &'a GpPosterior, draws: &'a BaseDraws) -> Self {
        JointBatch {
            post,
            draws,
            members: Vec::new(),
            rows: Vec::new(),
            running_max: vec![f64::NEG_INFINITY; draws.mc],
        }
    }

    /// Factor row for a new member: `L_sel l = Σ_sel,c`, `d² = σ_c² − ‖l‖²`.
    /// Degenerate (zero) pivots contribute nothing, keeping the factor valid
    /// for positive semi-definite covariances.
    fn extension(&self, x: &Fingerprint, m: &CandidateMoments) -> Result<Vec<f64>> {
        let k = self.members.len();
        let mut row = Vec::with_capacity(k + 1);
        for (j, (xj, mj)) in self.members.iter().enumerate() {
            let cov = self.post.kernel(xj, x)? - mj.whitened.dot(&m.whitened);
            let mut s = cov;
            for (i, r) in row.iter().enumerate() {
                s -= self.rows[j][i] * r;
            }
            let pivot = self.rows[j][j];
            row.push(if pivot > 1e-12 { s / pivot } else { 0.0 });
        }
        let resid = m.prediction.var - row.iter().map(|r| r * r).sum::<f64>();
        row.push(resid.max(0.0).sqrt());
        Ok(row)
    }

    /// Per-draw improvement of the batch extended by a member with `row`.
    fn improvements(&self, m: &CandidateMoments, row: &[f64], f_star: f64) -> impl Iterator<Item = f64> + '_ {
        let mean = m.prediction.mean;
        let row = row.to_vec();
        (0..self.draws.mc).map(move |s| {
            let z = self.draws.row(s);
            let f = mean + row.iter().zip(z).map(|(l, z)| l * z).sum::<f64>();
            (self.running_max[s].max(f) - f_star).max(0.0)
        })
    }

    fn push(&mut self, x: &'a Fingerprint, m: &'a CandidateMoments, row: Vec<f64>) {
        let mean = m.prediction.mean;
        for s in 0..self.draws.mc {
            let z = self.draws.row(s);
            let f = mean + row.iter().zip(z).map(|(l, z)| l * z).sum::<f64>();
            self.running_max[s] = self.running_max[s].max(f);
        }
        self.members.push((x, m));
        self.rows.push(row);
    }
}

/// Deduplicates by fingerprint into canonical (lexicographic) order; the
/// first occurrence of each fingerprint is kept.
pub fn dedup_canonical(candidates: &[Structure]) -> Vec<Structure> {
    let mut map: BTreeMap<&Fingerprint, &Structure> = BTreeMap::new();
    for c in candidates {
        map.entry(&c.fingerprint).or_insert(c);
    }
    map.into_values().cloned().collect()
}

#[derive(Clone, Copy, Debug)]
pub struct QeiEstimate {
    pub value: f64,
    pub std_error: f64,
}

/// Monte-Carlo qEI of a fixed batch using the given base draws.
pub fn qei_estimate(post: &GpPosterior, batch: &[Structure], f_star: f64, draws: &BaseDraws) -> Result<QeiEstimate> {
    if batch.is_empty() || batch.len() > draws.width {
        return Err(Error::Config(format!(
            "batch of {} does not fit base draws of width {}",
            batch.len(),
            draws.width
        )));
    }
    let moments = batch.iter().map(|s| CandidateMoments::of(post, &s.fingerprint)).collect::<Result<Vec<_>>>()?;
    let mut joint = JointBatch::new(post, draws);
    for (s, m) in batch.iter().zip(&moments).take(batch.len() - 1) {
        let row = joint.extension(&s.fingerprint, m)?;
        joint.push(&s.fingerprint, m, row);
    }
    let last = batch.last().expect("non-empty");
    let m = moments.last().expect("non-empty");
    let row = joint.extension(&last.fingerprint, m)?;
    let vals: Vec<f64> = joint.improvements(m, &row, f_star).collect();
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    Ok(QeiEstimate { value: mean, std_error: (var / n).sqrt() })
}

/// Greedily builds a batch of `batch` structures, each time adding the
/// candidate that maximizes the MC qEI of the batch so far plus itself.
///
/// Candidates are deduplicated first; ties go to the candidate earliest in
/// canonical fingerprint order.
pub fn qei_greedy_select(
    post: &GpPosterior,
    candidates: &[Structure],
    f_star: f64,
    batch: usize,
    mc: usize,
    rng: &mut RngStream,
) -> Result<Vec<Structure>> {
    let pool = dedup_canonical(candidates);
    if pool.len() < batch {
        return Err(Error::InsufficientCandidates { needed: batch, available: pool.len() });
    }
    let draws = BaseDraws::new(mc.max(1), batch, rng);
    let moments = parallel::map_slice(&pool, |s| CandidateMoments::of(post, &s.fingerprint))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let mut taken = vec![false; pool.len()];
    let mut joint = JointBatch::new(post, &draws);
    let mut chosen = Vec::with_capacity(batch);
    for _ in 0..batch {
        let open: Vec<usize> = (0..pool.len()).filter(|&i| !taken[i]).collect();
        let scored = parallel::map_slice(&open, |&i| -> Result<(f64, Vec<f64>)> {
            let row = joint.extension(&pool[i].fingerprint, &moments[i])?;
            let total: f64 = joint.improvements(&moments[i], &row, f_star).sum();
            Ok((total, row))
        });
        let mut best: Option<(usize, f64, Vec<f64>)> = None;
        for (&i, scored) in open.iter().zip(scored) {
            let (value, row) = scored?;
            if best.as_ref().is_none_or(|(_, v, _)| value > *v) {
                best = Some((i, value, row));
            }
        }
        let (i, _, row) = best.expect("pool has at least `batch` members");
        taken[i] = true;
        joint.push(&pool[i].fingerprint, &moments[i], row);
        chosen.push(pool[i].clone());
    }
    Ok(chosen)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::normal::expected_improvement;
    use crate::rng::derive_stream;
    use crate::tanimoto_gp::KernelParams;

    fn fp(v: &[u32]) -> Fingerprint {
        Fingerprint::new(v.to_vec())
    }

    fn toy_posterior() -> GpPosterior {
        GpPosterior::condition(
            vec![fp(&[1, 1, 0, 0, 1]), fp(&[0, 1, 1, 0, 0]), fp(&[1, 0, 0, 1, 1])],
            vec![0.2, 0.5, 0.1],
            KernelParams::new(1.0, 1e-4),
            1e-6,
            0.3,
        )
        .unwrap()
    }

    #[test]
    fn single_point_mc_matches_analytic_ei() {
        let post = toy_posterior();
        let f_star = 0.5;
        let mut rng = derive_stream(11, 0);
        let draws = BaseDraws::new(200_000, 1, &mut rng);
        for c in [fp(&[0, 1, 1, 1, 0]), fp(&[1, 1, 1, 1, 1]), fp(&[0, 0, 0, 1, 0])] {
            let p = post.predict(&c).unwrap();
            let exact = expected_improvement(p.mean, p.var, f_star);
            let est = qei_estimate(&post, &[Structure::new(c)], f_star, &draws).unwrap();
            assert!(
                (est.value - exact).abs() <= 3.0 * est.std_error + 1e-12,
                "{} vs {exact} (se {})",
                est.value,
                est.std_error
            );
        }
    }

    #[test]
    fn batch_of_one_picks_ei_argmax() {
        let post = toy_posterior();
        let cands: Vec<Structure> =
            [[0, 1, 1, 1, 0], [1, 1, 1, 1, 1], [0, 0, 0, 1, 0]].iter().map(|v| Structure::new(fp(v))).collect();
        let f_star = 0.5;
        let best_exact = cands
            .iter()
            .max_by(|a, b| {
                let ea = post.predict(&a.fingerprint).unwrap();
                let eb = post.predict(&b.fingerprint).unwrap();
                expected_improvement(ea.mean, ea.var, f_star).total_cmp(&expected_improvement(eb.mean, eb.var, f_star))
            })
            .unwrap();
        let picked = qei_greedy_select(&post, &cands, f_star, 1, 4096, &mut derive_stream(3, 3)).unwrap();
        assert_eq!(&picked[0], best_exact);
    }

    #[test]
    fn duplicates_collapse() {
        let post = toy_posterior();
        let dup = Structure::new(fp(&[1, 1, 1, 1, 1]));
        let cands = vec![dup.clone(), dup.clone(), dup.clone(), Structure::new(fp(&[0, 1, 0, 0, 0]))];
        let err = qei_greedy_select(&post, &cands, 0.5, 3, 64, &mut derive_stream(0, 0));
        assert!(matches!(err, Err(Error::InsufficientCandidates { needed: 3, available: 2 })));
        let two = qei_greedy_select(&post, &cands, 0.5, 2, 64, &mut derive_stream(0, 0)).unwrap();
        assert_eq!(two.len(), 2);
        assert_ne!(two[0], two[1]);
    }

    #[test]
    fn vanishing_improvement_falls_back_to_canonical_order() {
        let post = toy_posterior();
        let cands: Vec<Structure> =
            [[0, 0, 1, 1, 0], [0, 0, 0, 1, 1], [1, 0, 1, 0, 0]].iter().map(|v| Structure::new(fp(v))).collect();
        // Far above anything the posterior believes attainable.
        let f_star = 1e3;
        let picked = qei_greedy_select(&post, &cands, f_star, 2, 256, &mut derive_stream(1, 1)).unwrap();
        let canon = dedup_canonical(&cands);
        assert_eq!(picked, canon[..2].to_vec());
        let draws = BaseDraws::new(256, 2, &mut derive_stream(1, 2));
        let est = qei_estimate(&post, &picked, f_star, &draws).unwrap();
        assert!(est.value <= 1e-6);
    }

    #[test]
    fn greedy_batch_has_no_repeats() {
        let post = toy_posterior();
        let cands: Vec<Structure> = (1u32..32)
            .map(|b| Structure::new(fp(&[b & 1, (b >> 1) & 1, (b >> 2) & 1, (b >> 3) & 1, (b >> 4) & 1])))
            .collect();
        let picked = qei_greedy_select(&post, &cands, 0.5, 5, 512, &mut derive_stream(2, 2)).unwrap();
        let uniq = dedup_canonical(&picked);
        assert_eq!(uniq.len(), 5);
    }
}
