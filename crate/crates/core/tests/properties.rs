//! Randomized invariant checks across the library surface: forecast
//! monotonicity, CSV round-trips, weight simplex membership, and
//! deterministic optimization.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use proptest::prelude::*;

use qfc_core::io::{emit_forecast_csv, parse_forecast_csv};
use qfc_core::model::{
    ForecastDelivery, ModelId, QuantileForecast, SeriesKey, TrainingPair, TrainingWindow,
};
use qfc_core::pso::{minimize, SwarmSettings};
use qfc_core::stacking::{time_invariant_weights, time_varying_weights, StackingConfig};

fn day(offset: i64) -> NaiveDate {
    NaiveDate::from_ymd_opt(2020, 6, 1).unwrap() + chrono::Days::new(offset as u64)
}

fn key() -> SeriesKey {
    SeriesKey::new("England", "hospital_inc")
}

/// Strictly increasing levels in (0,1): cumulative positive gaps, rescaled.
fn levels_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.05f64..1.0, 2..8).prop_map(|gaps| {
        let total: f64 = gaps.iter().sum::<f64>() + 0.05;
        let mut acc = 0.0;
        gaps.iter()
            .map(|g| {
                acc += g;
                acc / total
            })
            .collect()
    })
}

proptest! {
    /// Repair always yields a monotone quantile function, whatever the
    /// input order of values.
    #[test]
    fn repaired_forecasts_are_monotone(
        levels in levels_strategy(),
        raw in prop::collection::vec(-1e4f64..1e4, 8),
    ) {
        let points: Vec<(f64, f64)> = levels
            .iter()
            .zip(raw.iter())
            .map(|(&a, &v)| (a, v))
            .collect();
        let (forecast, _) = QuantileForecast::new_repairing(key(), day(0), points).unwrap();
        for pair in forecast.values().windows(2) {
            prop_assert!(pair[0] <= pair[1]);
        }
        for pair in forecast.levels().windows(2) {
            prop_assert!(pair[0] < pair[1]);
        }
    }

    /// parse ∘ emit ∘ parse is the identity on well-formed deliveries.
    #[test]
    fn forecast_csv_round_trips(
        levels in levels_strategy(),
        sorted_values in prop::collection::vec(0.0f64..1e5, 8),
        horizon in 1usize..6,
        model_idx in 0usize..3,
    ) {
        let mut values = sorted_values;
        values.sort_by(f64::total_cmp);
        let model = ModelId::new(["alpha", "beta", "gamma"][model_idx]).unwrap();
        let forecasts: Vec<QuantileForecast> = (0..horizon)
            .map(|h| {
                let points: Vec<(f64, f64)> = levels
                    .iter()
                    .zip(values.iter())
                    .map(|(&a, &v)| (a, v + h as f64))
                    .collect();
                QuantileForecast::new(key(), day(1 + h as i64), points).unwrap()
            })
            .collect();
        let delivery = ForecastDelivery::new(model, day(0), forecasts).unwrap();

        let bytes = emit_forecast_csv(std::slice::from_ref(&delivery)).unwrap();
        let (parsed, warnings) = parse_forecast_csv(&bytes).unwrap();
        prop_assert!(warnings.is_empty());
        prop_assert_eq!(&parsed, &vec![delivery.clone()]);

        // A second pass through the pipe changes nothing.
        let again = emit_forecast_csv(&parsed).unwrap();
        prop_assert_eq!(again, bytes);
    }

    /// Stacking weights live on the probability simplex for any window mix.
    #[test]
    fn stacked_weights_form_a_simplex(
        scores in prop::collection::vec(
            prop::collection::vec(0.1f64..500.0, 1..10),
            1..5,
        ),
        decay in 0.5f64..1.0,
    ) {
        let mut windows = BTreeMap::new();
        for (k, model_scores) in scores.iter().enumerate() {
            let model = ModelId::new(format!("m{k}")).unwrap();
            let pairs: Vec<TrainingPair> = model_scores
                .iter()
                .enumerate()
                .map(|(i, &err)| {
                    // Median off by `err` makes the day's quantile score
                    // sum equal to err exactly.
                    let forecast = QuantileForecast::new(
                        key(),
                        day(i as i64),
                        [(0.5, 100.0 + err)],
                    )
                    .unwrap();
                    TrainingPair { forecast, observed: 100.0 }
                })
                .collect();
            windows.insert(model, TrainingWindow::new(10, pairs));
        }
        let config = StackingConfig { decay, window: 10, horizon: 14 };
        let weights = time_invariant_weights(&windows, &config).unwrap();

        prop_assert_eq!(weights.len(), scores.len());
        let mut sum = 0.0;
        for (_, w) in weights.iter() {
            prop_assert!(w >= 0.0);
            prop_assert!(w <= 1.0 + 1e-12);
            sum += w;
        }
        prop_assert!((sum - 1.0).abs() < 1e-9);
    }

    /// Interpolated weights stay on the simplex, keep the base ordering,
    /// and hit the base (lead 1) and uniform (lead H) endpoints exactly.
    #[test]
    fn time_varying_weights_interpolate(
        raw in prop::collection::vec(0.01f64..10.0, 2..6),
        horizon in 2usize..15,
    ) {
        let mut windows = BTreeMap::new();
        for (k, &err) in raw.iter().enumerate() {
            let model = ModelId::new(format!("m{k}")).unwrap();
            let forecast =
                QuantileForecast::new(key(), day(0), [(0.5, 50.0 + err)]).unwrap();
            windows.insert(
                model,
                TrainingWindow::new(5, vec![TrainingPair { forecast, observed: 50.0 }]),
            );
        }
        let config = StackingConfig { decay: 0.9, window: 5, horizon };
        let base = time_invariant_weights(&windows, &config).unwrap();
        let k = base.len() as f64;

        let at_start = time_varying_weights(&base, &config, 1).unwrap();
        prop_assert_eq!(&at_start, &base);
        let at_end = time_varying_weights(&base, &config, horizon).unwrap();
        for (_, w) in at_end.iter() {
            prop_assert!((w - 1.0 / k).abs() < 1e-12);
        }

        for lead in 2..horizon {
            let mid = time_varying_weights(&base, &config, lead).unwrap();
            let mut sum = 0.0;
            for (model, w) in mid.iter() {
                prop_assert!(w >= 0.0);
                sum += w;
                // Base ordering survives interpolation.
                for (other, v) in mid.iter() {
                    if base.get(model) > base.get(other) {
                        prop_assert!(w >= v - 1e-12);
                    }
                }
            }
            prop_assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    /// Equal seeds give bit-equal optimizer output; the swarm has no
    /// hidden entropy source.
    #[test]
    fn pso_is_deterministic_per_seed(
        seed in 0u64..1000,
        center in prop::collection::vec(-3.0f64..3.0, 2),
    ) {
        let objective = |x: &[f64]| {
            x.iter()
                .zip(center.iter())
                .map(|(xi, ci)| (xi - ci).powi(2))
                .sum::<f64>()
        };
        let run = |seed: u64| {
            let config = SwarmSettings::seeded(seed)
                .budget(15, 40)
                .config(vec![(-5.0, 5.0); 2])
                .unwrap();
            minimize(objective, &config).unwrap()
        };
        let a = run(seed);
        let b = run(seed);
        prop_assert_eq!(a.best_position.clone(), b.best_position);
        prop_assert_eq!(a.best_value, b.best_value);

        // And the minimum is actually near the planted optimum.
        for (xi, ci) in a.best_position.iter().zip(center.iter()) {
            prop_assert!((xi - ci).abs() < 0.05);
        }
    }
}
