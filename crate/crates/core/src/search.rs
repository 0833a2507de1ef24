//! Derivative-free maximization on small boxes, used for hyperparameter fits.

/// First `count` points of the additive-recurrence sequence `R_N` mapped into
/// `[lo, hi]`.
pub(crate) fn start_points<const N: usize>(count: usize, lo: [f64; N], hi: [f64; N]) -> Vec<[f64; N]> {
    // Generalized golden ratio: the positive root of x^(N+1) = x + 1.
    let mut phi = 2.0f64;
    for _ in 0..64 {
        phi = (1.0 + phi).powf(1.0 / (N as f64 + 1.0));
    }
    let mut a = [0.0; N];
    for (d, ad) in a.iter_mut().enumerate() {
        *ad = phi.powi(-(d as i32 + 1));
    }
    (0..count)
        .map(|k| {
            let mut p = [0.0; N];
            for d in 0..N {
                let u = (0.5 + a[d] * k as f64).fract();
                p[d] = lo[d] + u * (hi[d] - lo[d]);
            }
            p
        })
        .collect()
}

/// Bounded compass search maximizing `f` from `start`.
pub(crate) fn compass_search<const N: usize, F: Fn([f64; N]) -> f64>(
    f: F,
    start: [f64; N],
    lo: [f64; N],
    hi: [f64; N],
    max_iter: usize,
) -> ([f64; N], f64) {
    let mut step = [0.0; N];
    let mut min_step = [0.0; N];
    for d in 0..N {
        step[d] = 0.25 * (hi[d] - lo[d]);
        min_step[d] = 1e-4 * (hi[d] - lo[d]);
    }
    let mut best = start;
    let mut best_val = f(best);
    for _ in 0..max_iter {
        let mut improved = false;
        for d in 0..N {
            for sign in [1.0, -1.0] {
                let mut p = best;
                p[d] = (p[d] + sign * step[d]).clamp(lo[d], hi[d]);
                if p == best {
                    continue;
                }
                let v = f(p);
                if v > best_val {
                    best = p;
                    best_val = v;
                    improved = true;
                }
            }
        }
        if !improved {
            for s in &mut step {
                *s *= 0.5;
            }
            if (0..N).all(|d| step[d] < min_step[d]) {
                break;
            }
        }
    }
    (best, best_val)
}
