use nalgebra::SymmetricEigen;
use proptest::collection::vec;
use proptest::prelude::*;

use cowboys::config::RunConfig;
use cowboys::decoder::{format_weights, parse_weights, LinearThreshold};
use cowboys::normal::{expected_improvement, log_prob_improvement, prob_improvement};
use cowboys::pcn::ChainConfig;
use cowboys::rng::derive_stream;
use cowboys::tanimoto_gp::{dedup_canonical, gram, tanimoto, KernelParams};
use cowboys::{Fingerprint, Structure};

fn nonzero_fp(len: usize) -> impl Strategy<Value = Fingerprint> {
    vec(0u32..6, len).prop_filter("not all zero", |c| c.iter().any(|&x| x > 0)).prop_map(Fingerprint::new)
}

proptest! {
    #[test]
    fn kernel_symmetric_and_bounded(a in nonzero_fp(24), b in nonzero_fp(24), scale in 0.01f64..10.0) {
        let ab = tanimoto(&a, &b, scale).unwrap();
        let ba = tanimoto(&b, &a, scale).unwrap();
        prop_assert_eq!(ab.to_bits(), ba.to_bits());
        prop_assert!((0.0..=scale).contains(&ab));
        prop_assert_eq!(tanimoto(&a, &a, scale).unwrap(), scale);
    }

    #[test]
    fn kernel_with_one_zero_input_is_zero(a in nonzero_fp(10)) {
        prop_assert_eq!(tanimoto(&a, &Fingerprint::zeros(10), 1.0).unwrap(), 0.0);
    }

    #[test]
    fn gram_is_psd(set in vec(nonzero_fp(12), 2..20)) {
        let k = gram(&set, KernelParams::new(1.0, 0.0), 0.0).unwrap();
        let min = SymmetricEigen::new(k).eigenvalues.min();
        prop_assert!(min >= -1e-9, "min eigenvalue {}", min);
    }

    #[test]
    fn pi_monotone(mean in -5.0f64..5.0, dm in 0.0f64..3.0, var in 1e-6f64..4.0, f_star in -5.0f64..5.0, df in 0.0f64..3.0) {
        let base = prob_improvement(mean, var, f_star);
        prop_assert!((0.0..=1.0).contains(&base));
        prop_assert!(prob_improvement(mean + dm, var, f_star) >= base);
        prop_assert!(prob_improvement(mean, var, f_star + df) <= base);
        let lp = log_prob_improvement(mean, var, f_star);
        prop_assert!(lp <= 0.0);
        prop_assert!(log_prob_improvement(mean + dm, var, f_star) >= lp);
        if base > 1e-300 {
            prop_assert!((lp - base.ln()).abs() <= 1e-9 * lp.abs().max(1.0));
        }
    }

    #[test]
    fn ei_dominates_plug_in_improvement(mean in -5.0f64..5.0, var in 0.0f64..4.0, f_star in -5.0f64..5.0) {
        let ei = expected_improvement(mean, var, f_star);
        prop_assert!(ei >= 0.0);
        prop_assert!(ei >= (mean - f_star) - 1e-12);
    }

    #[test]
    fn beta_update_stays_clamped(beta in 1e-4f64..0.999, alpha in 0.0f64..=1.0, gain in 0.0f64..5.0) {
        let config = ChainConfig { adapt_gain: gain, ..ChainConfig::default() };
        let next = config.update_beta(beta, alpha);
        prop_assert!((config.beta_min..=config.beta_max).contains(&next));
        if alpha > config.target_accept {
            prop_assert!(next >= beta);
        } else {
            prop_assert!(next <= beta);
        }
    }

    #[test]
    fn dedup_is_idempotent_and_canonical(raw in vec(vec(0u32..3, 4), 0..30)) {
        let structures: Vec<Structure> = raw.into_iter().map(|c| Structure::new(Fingerprint::new(c))).collect();
        let once = dedup_canonical(&structures);
        prop_assert_eq!(&dedup_canonical(&once), &once);
        prop_assert!(once.windows(2).all(|w| w[0].fingerprint < w[1].fingerprint));
        let mut reversed = structures.clone();
        reversed.reverse();
        let fps = |v: &[Structure]| v.iter().map(|s| s.fingerprint.clone()).collect::<Vec<_>>();
        prop_assert_eq!(fps(&dedup_canonical(&reversed)), fps(&once));
    }

    #[test]
    fn weights_file_round_trips(d in 1usize..6, l in 1usize..20, seed in any::<u64>(), counts in any::<bool>()) {
        let dec = LinearThreshold::random(d, l, 0.7, counts, &mut derive_stream(seed, 0));
        let back = parse_weights(&format_weights(&dec), counts).unwrap();
        prop_assert_eq!(back, dec);
    }

    #[test]
    fn config_round_trips(seed in 0..=cowboys::config::MAX_SEED, d in 1usize..64, l in 1usize..128, init in 1usize..20, extra in 0usize..50, b in 1usize..8) {
        let mut config = RunConfig::new(d, l, init + extra, init);
        config.seed = seed;
        config.batch_size = b;
        let back = RunConfig::from_toml_str(&config.to_toml_string(), None).unwrap();
        prop_assert_eq!(&back, &config);
        config.seed = cowboys::config::MAX_SEED + 1 + seed % 1000;
        prop_assert!(config.validate().is_err());
    }
}
