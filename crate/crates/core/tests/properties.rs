use ncpoisson::poisson::{
    clopper_pearson, poisson_shift_bound, tv_distance, CountDistribution, PoissonLaw,
};
use ncpoisson::schedule::{QSchedule, ScheduleFamily};
use ncpoisson::seeding::{derive_seed, stream_rng};
use ncpoisson::subshift::{short_return_check, MarkovGibbsMeasure, SubshiftSFT};
use proptest::prelude::*;
use rand::RngCore;

fn law(weights: Vec<f64>) -> CountDistribution {
    let total: f64 = weights.iter().sum();
    let probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
    CountDistribution::from_dense(&probs).unwrap()
}

fn weights() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, 1..12)
}

fn has_period(word: &[u8], i: usize) -> bool {
    (0..word.len() - i).all(|k| word[k + i] == word[k])
}

proptest! {
    #[test]
    fn tv_is_a_metric(a in weights(), b in weights(), c in weights()) {
        let (a, b, c) = (law(a), law(b), law(c));
        let ab = tv_distance(&a, &b);
        prop_assert!(tv_distance(&a, &a).abs() < 1e-12);
        prop_assert!((ab - tv_distance(&b, &a)).abs() < 1e-15);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!(ab <= tv_distance(&a, &c) + tv_distance(&c, &b) + 1e-12);
    }

    #[test]
    fn poisson_shift_bound_dominates_tv(lam in 0.05f64..4.0, delta in -0.5f64..0.5) {
        let lam2 = (lam + delta).max(0.01);
        let p = PoissonLaw::new(lam).unwrap().to_distribution();
        let q = PoissonLaw::new(lam2).unwrap().to_distribution();
        prop_assert!(tv_distance(&p, &q) <= poisson_shift_bound(lam, lam2) + 1e-12);
    }

    #[test]
    fn rho_is_symmetric_and_zero_on_diagonal(ell in 1usize..4, power in 1u32..3, l in 1u64..300, m in 1u64..300) {
        let linear = QSchedule::linear(ell);
        let poly = QSchedule::new(ell, ScheduleFamily::Polynomial { power }, None).unwrap();
        for s in [&linear, &poly] {
            prop_assert_eq!(s.rho(l, m).unwrap(), s.rho(m, l).unwrap());
            prop_assert_eq!(s.rho(l, l).unwrap(), 0);
        }
    }

    #[test]
    fn neighbors_match_rho(ell in 1usize..4, l in 1u64..80, threshold in 0u64..10) {
        let s = QSchedule::linear(ell);
        let got = s.neighbors_within(l, threshold, 120).unwrap();
        let want: Vec<u64> = (1..=120)
            .filter(|&m| m != l && s.rho(l, m).unwrap() <= threshold)
            .collect();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn cylinder_masses_sum_to_one(len in 1usize..7, q in 0.05f64..0.95) {
        for sft in [SubshiftSFT::full_shift(2), SubshiftSFT::golden_mean()] {
            let rows = if sft.allowed(1, 1) {
                vec![vec![q, 1.0 - q], vec![1.0 - q, q]]
            } else {
                vec![vec![q, 1.0 - q], vec![1.0, 0.0]]
            };
            let m = MarkovGibbsMeasure::new(sft.clone(), rows).unwrap();
            let total: f64 = sft.words(len).iter().map(|w| m.cylinder_prob(w).unwrap()).sum();
            prop_assert!((total - 1.0).abs() < 1e-12, "total {}", total);
        }
    }

    #[test]
    fn short_return_check_below_length_is_the_period_test(
        word in prop::collection::vec(0u8..2, 2..12),
        a in 1u64..11,
    ) {
        let n = word.len() as u64;
        let a = a.min(n - 1);
        let sft = SubshiftSFT::full_shift(2);
        let expected = (1..=a as usize).all(|i| !has_period(&word, i));
        prop_assert_eq!(short_return_check(&sft, &word, a), expected);
    }

    #[test]
    fn seeded_streams_are_reproducible(master: u64, tag in 0u64..16, index in 0u64..1_000_000) {
        let mut r1 = stream_rng(master, tag, index);
        let mut r2 = stream_rng(master, tag, index);
        for _ in 0..8 {
            prop_assert_eq!(r1.next_u64(), r2.next_u64());
        }
        prop_assert_ne!(derive_seed(master, tag, index), derive_seed(master, tag, index + 1));
        prop_assert_ne!(derive_seed(master, tag, index), derive_seed(master, tag + 1, index));
    }

    #[test]
    fn clopper_pearson_brackets_the_proportion(trials in 1u64..100_000, frac in 0.0f64..=1.0) {
        let k = (frac * trials as f64).round() as u64;
        let (lo, hi) = clopper_pearson(k, trials, 0.0027);
        let p = k as f64 / trials as f64;
        prop_assert!(0.0 <= lo && lo <= p + 1e-12);
        prop_assert!(p - 1e-12 <= hi && hi <= 1.0);
    }
}
