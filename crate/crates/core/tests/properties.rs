#[path = "support/oracles.rs"]
mod oracles;

use std::collections::BTreeMap;

use fundpanel_core::estimators::{fit_fixed_effects, fit_pooled_ols, EffectMode};
use fundpanel_core::fundamentals::{
    distribution_export, divergence_rates, fundamentals_series, theoretical_value, yearly_divergence_stats,
    StreamingMoments,
};
use fundpanel_core::panel::{prepare_sample, PanelDataset};
use fundpanel_core::selection::{f_test_effects, lr_test_effects};
use fundpanel_core::synthetic::{generate_panel, SyntheticSpec};
use proptest::prelude::*;

fn spec_strategy() -> impl Strategy<Value = SyntheticSpec> {
    (5usize..40, 2usize..9, 0.0f64..0.3, 0.01f64..0.6, -0.9f64..0.9, any::<u64>()).prop_map(
        |(n_entities, n_periods, missing_rate, sigma_eps, corr, seed)| SyntheticSpec {
            n_entities,
            n_periods,
            missing_rate,
            sigma_eps,
            effect_regressor_corr: corr,
            seed,
            ..SyntheticSpec::default()
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn decomposition_identity_and_centered_residuals(spec in spec_strategy()) {
        let s = prepare_sample(&generate_panel(&spec).unwrap().dataset).unwrap();
        let Ok(fit) = fit_fixed_effects(&s, EffectMode::Twoway) else { return Ok(()) };
        let eff = fit.effects.clone().unwrap();
        let fu = fundamentals_series(&s, &fit, &eff).unwrap();
        let th = theoretical_value(&s, &fit, &eff).unwrap();
        let d = divergence_rates(&s, &fu).unwrap();
        for (i, r) in s.rows.iter().enumerate() {
            let g = eff.gamma[&s.period_ids[r.period_index]];
            prop_assert!((r.ln_y - (fu.rows[i].value + g + fit.residuals[i])).abs() < 1e-9);
            prop_assert!((d.rows[i].value - (g + fit.residuals[i])).abs() < 1e-9);
            prop_assert!((r.ln_y - th.rows[i].value - fit.residuals[i]).abs() < 1e-10);
        }
        let n = s.n_obs() as f64;
        prop_assert!(fit.residuals.iter().sum::<f64>().abs() < 1e-8 * n);
        let mut wsum_mu = 0.0;
        for r in &s.rows {
            wsum_mu += eff.mu[&s.entity_ids[r.entity_index]];
        }
        prop_assert!(wsum_mu.abs() < 1e-8 * n);
    }

    #[test]
    fn nested_statistics_are_nonnegative(spec in spec_strategy()) {
        let s = prepare_sample(&generate_panel(&spec).unwrap().dataset).unwrap();
        let (Ok(pooled), Ok(fe)) = (fit_pooled_ols(&s), fit_fixed_effects(&s, EffectMode::Individual)) else {
            return Ok(());
        };
        let f = f_test_effects(&pooled, &fe, 0.05).unwrap();
        let lr = lr_test_effects(&pooled, &fe, 0.05).unwrap();
        prop_assert!(f.statistic >= 0.0 && lr.statistic >= 0.0);
        prop_assert!((0.0..=1.0).contains(&f.p_value) && (0.0..=1.0).contains(&lr.p_value));
    }

    #[test]
    fn row_order_does_not_matter(spec in spec_strategy(), rot in 0usize..1000) {
        let data = generate_panel(&spec).unwrap().dataset;
        let mut shuffled = data.observations.clone();
        shuffled.reverse();
        let k = rot % shuffled.len();
        shuffled.rotate_left(k);
        let other = PanelDataset::new(shuffled, data.currency_code.clone()).unwrap();
        let (a, b) = (prepare_sample(&data).unwrap(), prepare_sample(&other).unwrap());
        prop_assert_eq!(&a, &b);
        let (Ok(fa), Ok(fb)) = (fit_fixed_effects(&a, EffectMode::Twoway), fit_fixed_effects(&b, EffectMode::Twoway)) else {
            return Ok(());
        };
        prop_assert_eq!(&fa.slopes, &fb.slopes);
        let da = divergence_rates(&a, &fundamentals_series(&a, &fa, fa.effects.as_ref().unwrap()).unwrap()).unwrap();
        let db = divergence_rates(&b, &fundamentals_series(&b, &fb, fb.effects.as_ref().unwrap()).unwrap()).unwrap();
        prop_assert_eq!(yearly_divergence_stats(&da), yearly_divergence_stats(&db));
    }

    #[test]
    fn streaming_moments_match_two_pass(values in prop::collection::vec(-1e3f64..1e3, 3..400), shift in -1e4f64..1e4) {
        let v: Vec<f64> = values.iter().map(|x| x + shift).collect();
        let (mean, sd, skew, kurt) = oracles::two_pass_moments(&v);
        let m: StreamingMoments = v.iter().copied().collect();
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1.0);
        prop_assume!(sd > 1e-6 * mean.abs().max(1.0));
        prop_assert!(rel(m.mean(), mean) < 1e-10);
        prop_assert!(rel(m.std_dev().unwrap(), sd) < 1e-10);
        prop_assert!(rel(m.skewness().unwrap(), skew) < 1e-10, "{} {}", m.skewness().unwrap(), skew);
        prop_assert!(rel(m.raw_kurtosis().unwrap(), kurt) < 1e-10);
    }

    #[test]
    fn histogram_frequencies_sum_to_one(spec in spec_strategy(), width in 0.005f64..0.5) {
        let s = prepare_sample(&generate_panel(&spec).unwrap().dataset).unwrap();
        let Ok(fit) = fit_fixed_effects(&s, EffectMode::Twoway) else { return Ok(()) };
        let d = divergence_rates(&s, &fundamentals_series(&s, &fit, fit.effects.as_ref().unwrap()).unwrap()).unwrap();
        let years = d.years();
        let h = distribution_export(&d, &years, width).unwrap();
        let stats = yearly_divergence_stats(&d);
        prop_assert_eq!(stats.iter().map(|r| r.n_obs).sum::<usize>(), s.n_obs());
        for bins in h.series.values() {
            prop_assert!((bins.iter().map(|b| b.rel_freq).sum::<f64>() - 1.0).abs() < 1e-9);
            for w in bins.windows(2) {
                prop_assert!((w[0].bin_right - w[1].bin_left).abs() < 1e-12);
            }
        }
        for (year, bins) in &h.series {
            let vals: Vec<f64> = d.rows.iter().filter(|r| r.period == *year).map(|r| r.value).collect();
            let lo = bins.first().unwrap().bin_left;
            let hi = bins.last().unwrap().bin_right;
            prop_assert!(vals.iter().all(|v| *v >= lo - 1e-12 && *v <= hi + 1e-12));
        }
    }

    #[test]
    fn generator_truth_is_exact_and_centered(spec in spec_strategy()) {
        let p = generate_panel(&spec).unwrap();
        let mut counts: BTreeMap<i32, usize> = BTreeMap::new();
        for r in &p.truth.rows {
            prop_assert_eq!(p.truth.recombine(r), r.ln_y);
            *counts.entry(r.period).or_default() += 1;
        }
        let wsum: f64 = counts.iter().map(|(y, &c)| p.truth.gamma[y] * c as f64).sum();
        prop_assert!(wsum.abs() < 1e-12 * (p.truth.rows.len() as f64).max(1.0));
        let s = prepare_sample(&p.dataset).unwrap();
        for (r, t) in s.rows.iter().zip(&p.truth.rows) {
            prop_assert!((r.ln_y - t.ln_y).abs() < 1e-12 * t.ln_y.abs().max(1.0));
        }
    }
}
