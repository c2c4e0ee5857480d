use std::f64::consts::SQRT_2;
use std::sync::OnceLock;

use proptest::prelude::*;

use cpbo_core::acquisition::{bin_maxima, GumbelFit};
use cpbo_core::benchmarks::{latin_hypercube, utility, NormalizedUtility};
use cpbo_core::cost::{comparisons_for_step, iteration_cost, Charge, CostLedger, CostModel, Strategy};
use cpbo_core::metrics::{choice_accuracy_with, ordinal_accuracy_with, random_pairs};
use cpbo_core::preference::{outcome_probabilities, LikelihoodParams};
use cpbo_core::rng;
use cpbo_core::surrogate::{Checkpoint, SurrogateModel};
use cpbo_core::{Axis, Config};

fn probs(d: f64, g: f64, s: f64) -> cpbo_core::preference::OutcomeProbs {
    outcome_probabilities(d, &LikelihoodParams::new(s, g).unwrap()).unwrap()
}

fn branin() -> &'static NormalizedUtility {
    static U: OnceLock<NormalizedUtility> = OnceLock::new();
    U.get_or_init(|| utility("branin").unwrap())
}

proptest! {
    #[test]
    fn outcomes_form_a_distribution(d in -2.0..2.0f64, g in 0.0..0.5f64, s in 1e-3..0.5f64) {
        let p = probs(d, g, s);
        for v in [p.plus, p.zero, p.minus] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert!((p.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn swapping_the_pair_swaps_plus_and_minus(d in -2.0..2.0f64, g in 0.0..0.5f64, s in 1e-3..0.5f64) {
        let a = probs(d, g, s);
        let b = probs(-d, g, s);
        prop_assert!((a.plus - b.minus).abs() < 1e-12);
        prop_assert!((a.zero - b.zero).abs() < 1e-12);
    }

    #[test]
    fn joint_rescaling_leaves_outcomes_unchanged(
        d in -2.0..2.0f64, g in 0.0..0.5f64, s in 1e-3..0.5f64, c in 0.01..100.0f64,
    ) {
        let a = probs(d, g, s);
        let b = probs(c * d, c * g, c * s);
        prop_assert!((a.plus - b.plus).abs() < 1e-12);
        prop_assert!((a.zero - b.zero).abs() < 1e-12);
    }

    #[test]
    fn indifference_at_equal_utility(g in 0.0..0.5f64, s in 1e-3..0.5f64) {
        let want = 1.0 - libm::erfc(g / (2.0 * s));
        prop_assert!((probs(0.0, g, s).zero - want).abs() < 1e-12);
    }

    #[test]
    fn preference_grows_with_the_difference(d in -1.0..1.0f64, step in 1e-3..0.5f64, g in 0.0..0.2f64) {
        let a = probs(d, g, 0.04);
        let b = probs(d + step, g, 0.04);
        prop_assert!(b.plus >= a.plus);
        prop_assert!(b.minus <= a.minus);
    }

    #[test]
    fn widening_the_band_adds_indifference(d in -1.0..1.0f64, g in 0.0..0.2f64, dg in 1e-3..0.2f64) {
        prop_assert!(probs(d, g + dg, 0.04).zero >= probs(d, g, 0.04).zero);
    }

    #[test]
    fn latin_hypercube_fills_every_stratum(n in 1usize..40, dim in 1usize..7, seed in any::<u64>()) {
        let pts = latin_hypercube(n, dim, seed).unwrap();
        prop_assert_eq!(pts.len(), n);
        for k in 0..dim {
            let mut seen = vec![false; n];
            for p in &pts {
                let v = p.0[k];
                prop_assert!((0.0..1.0).contains(&v) || (n == 1 && v <= 1.0));
                let s = ((v * n as f64) as usize).min(n - 1);
                prop_assert!(!seen[s], "stratum {} of axis {} hit twice", s, k);
                seen[s] = true;
            }
        }
    }

    #[test]
    fn normalized_utility_stays_in_unit_range(x in 0.0..=1.0f64, y in 0.0..=1.0f64) {
        let v = branin().eval(&[x, y]);
        prop_assert!((-1e-9..=1.0 + 1e-9).contains(&v), "{}", v);
    }

    #[test]
    fn snapping_lands_on_the_grid(low in -50.0..50.0f64, width in 0.5..100.0f64, steps in 1u32..200, t in 0.0..=1.0f64) {
        let step = width / steps as f64;
        let axis = Axis::with_step(low, low + width, step);
        let native = axis.to_native(t);
        let s = axis.snap(native);
        prop_assert!(s >= low - 1e-9 && s <= low + width + 1e-9);
        let k = (s - low) / step;
        prop_assert!((k - k.round()).abs() < 1e-6);
        prop_assert!((s - native).abs() <= 0.5 * step + 1e-9);
        prop_assert_eq!(axis.snap(s), s);
    }

    #[test]
    fn unit_and_native_coordinates_round_trip(low in -50.0..50.0f64, width in 1e-3..100.0f64, t in 0.0..=1.0f64) {
        let axis = Axis::new(low, low + width);
        prop_assert!((axis.to_unit(axis.to_native(t)) - t).abs() < 1e-9);
    }

    #[test]
    fn gumbel_quantile_fit_recovers_parameters(a in -5.0..5.0f64, b in 1e-3..5.0f64) {
        let g = GumbelFit::new(a, b).unwrap();
        let back = GumbelFit::from_quantiles(g.quantile(0.25), g.quantile(0.75), g.quantile(0.5)).unwrap();
        prop_assert!((back.location - a).abs() < 1e-9 * (1.0 + a.abs()));
        prop_assert!((back.scale - b).abs() < 1e-9 * (1.0 + b));
        prop_assert!((g.cdf(g.quantile(0.3)) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn bin_weights_sum_to_one(samples in prop::collection::vec(-10.0..10.0f64, 1..300), n_bins in 1usize..40) {
        let bins = bin_maxima(&samples, n_bins).unwrap();
        let total: f64 = bins.iter().map(|b| b.weight).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for b in &bins {
            prop_assert!(b.weight > 0.0);
            prop_assert!(b.value >= lo - 1e-12 && b.value <= hi + 1e-12);
        }
    }

    #[test]
    fn multiple_with_one_reference_is_consecutive(c_p in 0.0..10.0f64, c_e in 0.0..10.0f64, len in 1usize..50) {
        let cost = CostModel::new(c_p, c_e);
        let one = Strategy::Multiple { l: 1 };
        prop_assert_eq!(iteration_cost(&one, &cost), iteration_cost(&Strategy::Consecutive, &cost));
        prop_assert_eq!(
            comparisons_for_step(&one, len).unwrap(),
            comparisons_for_step(&Strategy::Consecutive, len).unwrap()
        );
    }

    #[test]
    fn each_config_is_charged_once(picks in prop::collection::vec(0usize..5, 1..30)) {
        let pool: Vec<Config> = (0..5).map(|i| Config(vec![i as f64 / 5.0])).collect();
        let cost = CostModel::new(1.0, 0.5);
        let mut ledger = CostLedger::new(1e6).unwrap();
        for &i in &picks {
            let c = ledger.charge_step(&Strategy::Consecutive, &cost, &pool[i..=i], 1);
            prop_assert!(matches!(c, Charge::Accepted(_)));
        }
        let mut distinct = picks.clone();
        distinct.sort();
        distinct.dedup();
        let want = distinct.len() as f64 + 0.5 * picks.len() as f64;
        prop_assert!((ledger.spent - want).abs() < 1e-9);
        let total: f64 = ledger.entries.iter().map(|e| e.charge).sum();
        prop_assert!((ledger.entries.last().unwrap().cumulative - total).abs() < 1e-9);
    }

    #[test]
    fn ordinal_accuracy_ignores_monotone_warps(seed in any::<u64>(), scale in 0.1..10.0f64, shift in -5.0..5.0f64) {
        let pairs = random_pairs(200, 2, &mut rng::stream(seed, &[]));
        let truth = |x: &[f64]| branin().eval(x);
        let predict = |x: &[f64]| x[0] - 0.3 * x[1] * x[1];
        let base = ordinal_accuracy_with(predict, truth, &pairs);
        let warped = ordinal_accuracy_with(|x| (scale * predict(x) + shift).exp(), truth, &pairs);
        prop_assert_eq!(base, warped);
        prop_assert_eq!(ordinal_accuracy_with(truth, truth, &pairs), 1.0);
    }

    #[test]
    fn choice_without_a_band_is_ordinal(seed in any::<u64>()) {
        let pairs = random_pairs(200, 2, &mut rng::stream(seed, &[]));
        let truth = |x: &[f64]| branin().eval(x);
        let predict = |x: &[f64]| (x[0] - 0.5).powi(2) + x[1];
        let ord = ordinal_accuracy_with(predict, truth, &pairs);
        let choice = choice_accuracy_with(predict, truth, 0.0, 0.0, false, &pairs);
        prop_assert_eq!(ord, choice);
    }
}

fn small_model(mean_const: f64) -> SurrogateModel {
    let configs = vec![Config(vec![0.1, 0.2]), Config(vec![0.7, 0.4]), Config(vec![0.3, 0.9])];
    let mut m = SurrogateModel::prior(configs, 2, 0.3, 0.04, 0.02, false).unwrap();
    m.mean_const = mean_const;
    m.variational.mean = vec![mean_const + 0.2, mean_const - 0.1, mean_const + 0.05];
    m.variational.chol_factor[1][0] = 0.1;
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn posterior_mean_shifts_with_the_constant(c in -3.0..3.0f64, x in 0.0..1.0f64, y in 0.0..1.0f64) {
        let a = small_model(0.0);
        let b = small_model(c);
        let pa = a.posterior().unwrap();
        let pb = b.posterior().unwrap();
        prop_assert!((pb.mean_at(&[x, y]) - pa.mean_at(&[x, y]) - c).abs() < 1e-9);
        prop_assert!((pb.variance_at(&[x, y]) - pa.variance_at(&[x, y])).abs() < 1e-9);
    }

    #[test]
    fn checkpoints_round_trip(c in -3.0..3.0f64, seed in any::<u64>()) {
        let ck = Checkpoint::new(small_model(c), Some(seed), None);
        let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
        prop_assert_eq!(back, ck);
    }
}

#[test]
fn probit_limit_matches_erfc_oracle() {
    let s = 0.04;
    for i in -50..=50 {
        let d = i as f64 * 0.01;
        let want = 0.5 * libm::erfc(-d / (SQRT_2 * s) / SQRT_2);
        assert!((probs(d, 0.0, s).plus - want).abs() < 1e-15);
    }
}
