use chrono::NaiveDate;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal};

use windcal::dists::{Family, LogNormalMV, PredictiveDistribution, Tgev, TruncNormal};
use windcal::emos::{rolling_train_predict, EmosTrainingConfig};
use windcal::ensemble_data::{synthetic_generate, EnsembleStats, SyntheticConfig};
use windcal::mlp::{crps_grad_tn, train_mlp, window_training_data, LeadTimeGroup, MlpTrainConfig};
use windcal::pipeline::default_verification_dates;
use windcal::scoring::{
    central_interval, crps_ensemble, crps_quadrature, crps_quadrature_with_breaks, crpss, histogram, IntervalSpec, ENSEMBLE_RANGE_LEVEL,
    quadrature_support,
};

fn empirical_cdf(members: &[f64]) -> impl Fn(f64) -> f64 + '_ {
    move |y| members.iter().filter(|m| **m <= y).count() as f64 / members.len() as f64
}

#[test]
fn ensemble_crps_matches_quadrature_of_empirical_cdf() {
    let members: Vec<f64> = (1..=11).map(f64::from).collect();
    let closed = crps_ensemble(&members, 6.0).unwrap();
    let quad = crps_quadrature_with_breaks(empirical_cdf(&members), 6.0, (0.0, 12.0), &members).unwrap();
    assert!((closed - quad).abs() <= 1e-6, "{closed} vs {quad}");
}

#[test]
fn tn_gradient_limits() {
    let (d_loc, _) = crps_grad_tn(&TruncNormal::new(20.0, 1.0).unwrap(), 20.0);
    assert!(d_loc.abs() < 1e-10, "{d_loc}");
    // far above the location only the truncated mean moves, so the slope is
    // -1 when truncation is negligible and shallower near zero
    let (d_loc, _) = crps_grad_tn(&TruncNormal::new(20.0, 1.0).unwrap(), 80.0);
    assert!((d_loc + 1.0).abs() < 1e-10, "{d_loc}");
    let (d_loc, _) = crps_grad_tn(&TruncNormal::new(1.0, 1.0).unwrap(), 50.0);
    let h = 1e-3;
    let quad = |loc: f64| {
        let d: PredictiveDistribution = TruncNormal::new(loc, 1.0).unwrap().into();
        crps_quadrature(|y| d.cdf(y), 50.0, quadrature_support(&d)).unwrap()
    };
    let numeric = (quad(1.0 + h) - quad(1.0 - h)) / (2.0 * h);
    assert!((d_loc - numeric).abs() < 1e-5, "{d_loc} vs {numeric}");
    assert!((d_loc + 0.74303).abs() < 1e-4, "{d_loc}");
}

#[test]
fn central_interval_matches_normal_quantiles() {
    let z = Normal::new(0.0, 1.0).unwrap().inverse_cdf(11.0 / 12.0);
    assert!((z - 1.38299).abs() < 1e-5);
    let d: PredictiveDistribution = TruncNormal::new(10.0, 1.0).unwrap().into();
    let (lo, hi) = central_interval(&d, IntervalSpec::new(ENSEMBLE_RANGE_LEVEL).unwrap()).unwrap();
    assert!((lo - (10.0 - z)).abs() < 1e-8, "{lo}");
    assert!((hi - (10.0 + z)).abs() < 1e-8, "{hi}");
}

#[test]
fn coverage_of_calibrated_forecasts_is_nominal() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let spec = IntervalSpec::default();
    let n = 5000;
    let mut covered = 0;
    for _ in 0..n {
        let d = TruncNormal::new(rng.random_range(0.0..15.0), rng.random_range(0.5..3.0)).unwrap();
        let y = loop {
            let z: f64 = StandardNormal.sample(&mut rng);
            let y = d.loc() + d.scale() * z;
            if y >= 0.0 {
                break y;
            }
        };
        let (lo, hi) = central_interval(&d.into(), spec).unwrap();
        if (lo..=hi).contains(&y) {
            covered += 1;
        }
    }
    let coverage = covered as f64 / n as f64;
    assert!((coverage - spec.level()).abs() <= 0.02, "{coverage}");
}

fn mean_verification_crps(forecasts: &[windcal::emos::CaseForecast], data: &windcal::ensemble_data::Dataset) -> f64 {
    let scores: Vec<f64> = forecasts
        .iter()
        .map(|f| {
            let y = data
                .get(&f.station, f.init_date, f.lead_time_index)
                .and_then(|c| c.observation)
                .unwrap();
            f.distribution.crps(y).unwrap()
        })
        .collect();
    scores.iter().sum::<f64>() / scores.len() as f64
}

#[test]
fn warm_start_matches_cold_start() {
    let data = synthetic_generate(&SyntheticConfig {
        n_days: 81,
        lead_times: 4,
        seed: 3,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let config = EmosTrainingConfig::new(Family::TruncNormal);
    let dates = default_verification_dates(&data, config.window_days);
    for family in Family::ALL {
        let mut config = EmosTrainingConfig::new(family);
        let warm = rolling_train_predict(&data, &dates, &config).unwrap();
        config.warm_start = false;
        let cold = rolling_train_predict(&data, &dates, &config).unwrap();
        assert_eq!(warm.forecasts.len(), cold.forecasts.len());
        let (w, c) = (mean_verification_crps(&warm.forecasts, &data), mean_verification_crps(&cold.forecasts, &data));
        assert!((w - c).abs() <= 1e-4, "{family}: warm {w} cold {c}");
    }
}

#[test]
fn network_training_lowers_the_epoch_loss() {
    let data = synthetic_generate(&SyntheticConfig::default()).unwrap();
    let date = NaiveDate::from_ymd_opt(2020, 7, 1).unwrap();
    let (training, _) = window_training_data(&data, date, LeadTimeGroup::Day1, 51).unwrap();
    let mut improved = 0;
    for seed in 1..=10 {
        let config = MlpTrainConfig {
            seed,
            ..MlpTrainConfig::default()
        };
        let trained = train_mlp(LeadTimeGroup::Day1, &training, &config).unwrap();
        let losses = &trained.epoch_losses;
        if losses.last().unwrap() < losses.first().unwrap() {
            improved += 1;
        }
    }
    assert!(improved >= 9, "{improved}/10");
}

fn any_distribution() -> impl Strategy<Value = PredictiveDistribution> {
    prop_oneof![
        (0.0..25.0f64, 0.1..5.0f64).prop_map(|(l, s)| TruncNormal::new(l, s).unwrap().into()),
        (0.1..25.0f64, 0.1..5.0f64).prop_map(|(m, s)| LogNormalMV::new(m, s * s).unwrap().into()),
        (0.0..25.0f64, 0.1..5.0f64, -0.27..0.33f64).prop_map(|(l, s, k)| Tgev::new(l, s, k).unwrap().into()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn closed_crps_matches_quadrature(d in any_distribution(), x in 0.0..35.0f64) {
        let quad = crps_quadrature(|y| d.cdf(y), x, quadrature_support(&d)).unwrap();
        prop_assert!((d.crps(x).unwrap() - quad).abs() <= 1e-6);
    }

    #[test]
    fn quantile_inverts_cdf(d in any_distribution(), p in 0.001..0.999f64) {
        let x = d.quantile(p).unwrap();
        prop_assert!(x >= 0.0);
        if x > 0.0 {
            prop_assert!((d.cdf(x) - p).abs() <= 1e-8);
        }
    }

    #[test]
    fn crps_is_nonnegative(d in any_distribution(), x in 0.0..50.0f64) {
        prop_assert!(d.crps(x).unwrap() >= 0.0);
    }

    #[test]
    fn one_member_ensemble_crps_is_absolute_error(f in 0.0..30.0f64, x in 0.0..30.0f64) {
        prop_assert_eq!(crps_ensemble(&[f], x).unwrap(), (f - x).abs());
    }

    #[test]
    fn ensemble_crps_matches_quadrature(members in prop::collection::vec(0.0..20.0f64, 1..=11), x in 0.0..25.0f64) {
        let closed = crps_ensemble(&members, x).unwrap();
        let quad = crps_quadrature_with_breaks(empirical_cdf(&members), x, (0.0, 21.0), &members).unwrap();
        prop_assert!((closed - quad).abs() <= 1e-6, "{} vs {}", closed, quad);
    }

    #[test]
    fn crpss_sign_is_antisymmetric(a in 0.01..5.0f64, b in 0.01..5.0f64) {
        let ab = crpss(a, b).unwrap();
        let ba = crpss(b, a).unwrap();
        prop_assert_eq!(ab > 0.0, ba < 0.0);
        prop_assert_eq!(ab == 0.0, a == b);
    }

    #[test]
    fn ensemble_statistics_invariants(members in prop::array::uniform11(0.0..30.0f64)) {
        let s = EnsembleStats::from_members(&members);
        prop_assert!(s.s2 >= 0.0 && s.md >= 0.0);
        let doubled = EnsembleStats::from_members(&members.map(|m| 2.0 * m));
        prop_assert!((doubled.md - 2.0 * s.md).abs() <= 1e-9 * (1.0 + s.md));
        prop_assert!((doubled.s2 - 4.0 * s.s2).abs() <= 1e-9 * (1.0 + s.s2));
    }

    #[test]
    fn histogram_counts_sum_to_input(values in prop::collection::vec(0.0..=1.0f64, 0..200), bins in 1usize..20) {
        let counts = histogram(&values, bins);
        prop_assert_eq!(counts.len(), bins);
        prop_assert_eq!(counts.iter().sum::<usize>(), values.len());
    }
}
