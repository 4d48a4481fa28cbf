//! Domain data model: forecasts, deliveries, observations, training windows.
//!
//! All types are immutable after construction and validate their invariants
//! in the constructor. Dates are day-granular (`chrono::NaiveDate`); there
//! are no time zones anywhere in the pipeline.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when matching quantile levels that went through text
/// round-trips or arithmetic.
pub const LEVEL_EPS: f64 = 1e-9;

/// Default quantile grid for synthetic generation and completion targets.
///
/// Covers the levels the evaluation metrics need: 0.05/0.95 (90% interval),
/// 0.25/0.75 (50% interval), 0.5 (median) and 0.125/0.875 (75% central
/// interval). Arbitrary grids remain supported everywhere.
pub const DEFAULT_QUANTILE_LEVELS: [f64; 7] = [0.05, 0.125, 0.25, 0.5, 0.75, 0.875, 0.95];

/// Default training-window length in days.
pub const DEFAULT_TRAINING_WINDOW: usize = 20;

/// Default forecast horizon in days.
pub const DEFAULT_HORIZON: usize = 14;

/// Opaque identifier of a forecasting model within an ensemble.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelId(String);

impl ModelId {
    pub fn new(id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if id.trim().is_empty() {
            return Err(Error::EmptyModelId);
        }
        Ok(ModelId(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Identifies one forecast series: a region paired with a value type.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SeriesKey {
    pub region: String,
    pub value_type: String,
}

impl SeriesKey {
    pub fn new(region: impl Into<String>, value_type: impl Into<String>) -> Self {
        SeriesKey {
            region: region.into(),
            value_type: value_type.into(),
        }
    }
}

impl fmt::Display for SeriesKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.region, self.value_type)
    }
}

/// Configured sets of admissible regions and value types.
///
/// The default catalog lists the four UK nations, the seven English NHS
/// regions, and the four standard value types. A permissive catalog accepts
/// any non-empty name, which is the right choice for ad-hoc data sets.
#[derive(Debug, Clone)]
pub struct KeyCatalog {
    regions: Option<BTreeSet<String>>,
    value_types: Option<BTreeSet<String>>,
}

/// The eleven default nation/region names.
pub const DEFAULT_REGIONS: [&str; 11] = [
    "England",
    "Scotland",
    "Wales",
    "Northern Ireland",
    "London",
    "East of England",
    "Midlands",
    "North East and Yorkshire",
    "North West",
    "South East",
    "South West",
];

/// The four default value types (model outputs of interest).
pub const DEFAULT_VALUE_TYPES: [&str; 4] = [
    "death_inc_line",
    "hospital_inc",
    "hospital_prev",
    "icu_prev",
];

impl Default for KeyCatalog {
    fn default() -> Self {
        KeyCatalog::new(
            DEFAULT_REGIONS.iter().map(|s| s.to_string()),
            DEFAULT_VALUE_TYPES.iter().map(|s| s.to_string()),
        )
    }
}

impl KeyCatalog {
    pub fn new(
        regions: impl IntoIterator<Item = String>,
        value_types: impl IntoIterator<Item = String>,
    ) -> Self {
        KeyCatalog {
            regions: Some(regions.into_iter().collect()),
            value_types: Some(value_types.into_iter().collect()),
        }
    }

    /// Accepts any non-empty region and value type.
    pub fn permissive() -> Self {
        KeyCatalog {
            regions: None,
            value_types: None,
        }
    }

    pub fn check(&self, key: &SeriesKey) -> Result<()> {
        if key.region.trim().is_empty() {
            return Err(Error::UnknownRegion {
                region: key.region.clone(),
            });
        }
        if key.value_type.trim().is_empty() {
            return Err(Error::UnknownValueType {
                value_type: key.value_type.clone(),
            });
        }
        if let Some(regions) = &self.regions {
            if !regions.contains(&key.region) {
                return Err(Error::UnknownRegion {
                    region: key.region.clone(),
                });
            }
        }
        if let Some(value_types) = &self.value_types {
            if !value_types.contains(&key.value_type) {
                return Err(Error::UnknownValueType {
                    value_type: key.value_type.clone(),
                });
            }
        }
        Ok(())
    }
}

/// One model's predictive quantiles for a single (series, target date).
///
/// Levels are strictly increasing in (0, 1) and values are non-decreasing
/// with level, so the stored pairs always describe a valid (partial)
/// quantile function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileForecast {
    key: SeriesKey,
    target_date: NaiveDate,
    levels: Vec<f64>,
    values: Vec<f64>,
}

impl QuantileForecast {
    /// Builds a forecast from (level, value) pairs, sorting by level and
    /// rejecting any invariant violation.
    pub fn new(
        key: SeriesKey,
        target_date: NaiveDate,
        points: impl IntoIterator<Item = (f64, f64)>,
    ) -> Result<Self> {
        let (forecast, repaired) = Self::build(key, target_date, points, false)?;
        debug_assert!(!repaired);
        Ok(forecast)
    }

    /// Like [`QuantileForecast::new`], but repairs non-monotone values by
    /// sorting them ascending. Returns whether a repair was needed.
    pub fn new_repairing(
        key: SeriesKey,
        target_date: NaiveDate,
        points: impl IntoIterator<Item = (f64, f64)>,
    ) -> Result<(Self, bool)> {
        Self::build(key, target_date, points, true)
    }

    fn build(
        key: SeriesKey,
        target_date: NaiveDate,
        points: impl IntoIterator<Item = (f64, f64)>,
        repair: bool,
    ) -> Result<(Self, bool)> {
        let mut pairs: Vec<(f64, f64)> = points.into_iter().collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let context = format!("{key} {target_date}");
        if pairs.is_empty() {
            return Err(Error::EmptyForecast { context });
        }
        for &(level, value) in &pairs {
            if !(level > 0.0 && level < 1.0) || !level.is_finite() {
                return Err(Error::LevelOutOfRange { level });
            }
            if !value.is_finite() {
                return Err(Error::NonFiniteValue { context: context.clone() });
            }
        }
        for w in pairs.windows(2) {
            if w[1].0 - w[0].0 <= LEVEL_EPS {
                return Err(Error::LevelsNotIncreasing { level: w[1].0 });
            }
        }
        let monotone = pairs.windows(2).all(|w| w[1].1 >= w[0].1);
        let repaired = if monotone {
            false
        } else if repair {
            let mut values: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            values.sort_by(f64::total_cmp);
            for (pair, v) in pairs.iter_mut().zip(values) {
                pair.1 = v;
            }
            true
        } else {
            return Err(Error::NonMonotoneValues { context });
        };
        let (levels, values) = pairs.into_iter().unzip();
        Ok((
            QuantileForecast {
                key,
                target_date,
                levels,
                values,
            },
            repaired,
        ))
    }

    pub fn key(&self) -> &SeriesKey {
        &self.key
    }

    pub fn target_date(&self) -> NaiveDate {
        self.target_date
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.levels.iter().copied().zip(self.values.iter().copied())
    }

    /// Value reported at `level`, matched within [`LEVEL_EPS`].
    pub fn value_at(&self, level: f64) -> Option<f64> {
        self.levels
            .iter()
            .position(|&l| (l - level).abs() <= LEVEL_EPS)
            .map(|i| self.values[i])
    }

    /// Reported median, if the 0.5 level is present.
    pub fn median(&self) -> Option<f64> {
        self.value_at(0.5)
    }

    /// True when every target level is already present.
    pub fn has_levels(&self, targets: &[f64]) -> bool {
        targets.iter().all(|&t| self.value_at(t).is_some())
    }

    /// Returns a copy with every value shifted by `delta` (whole-distribution
    /// translation; preserves monotonicity).
    pub fn shifted(&self, delta: f64) -> QuantileForecast {
        let mut out = self.clone();
        for v in &mut out.values {
            *v += delta;
        }
        out
    }
}

/// A model's dated batch of quantile forecasts over a horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastDelivery {
    model: ModelId,
    delivery_date: NaiveDate,
    forecasts: BTreeMap<(SeriesKey, NaiveDate), QuantileForecast>,
}

impl ForecastDelivery {
    /// Groups forecasts into a delivery, enforcing at most one forecast per
    /// (series, target date) and per-series contiguous target dates.
    pub fn new(
        model: ModelId,
        delivery_date: NaiveDate,
        forecasts: impl IntoIterator<Item = QuantileForecast>,
    ) -> Result<Self> {
        let mut map = BTreeMap::new();
        for f in forecasts {
            let slot = (f.key().clone(), f.target_date());
            if map.contains_key(&slot) {
                return Err(Error::DuplicateForecast {
                    model: model.to_string(),
                    delivery_date,
                    region: slot.0.region,
                    value_type: slot.0.value_type,
                    target_date: slot.1,
                });
            }
            map.insert(slot, f);
        }
        let delivery = ForecastDelivery {
            model,
            delivery_date,
            forecasts: map,
        };
        delivery.check_contiguous()?;
        Ok(delivery)
    }

    fn check_contiguous(&self) -> Result<()> {
        for key in self.series_keys() {
            let dates: Vec<NaiveDate> = self.target_dates(&key).collect();
            if let (Some(first), Some(last)) = (dates.first(), dates.last()) {
                let span = (*last - *first).num_days() as usize + 1;
                if span != dates.len() {
                    return Err(Error::NonContiguousHorizon {
                        model: self.model.to_string(),
                        delivery_date: self.delivery_date,
                        region: key.region,
                        value_type: key.value_type,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn model(&self) -> &ModelId {
        &self.model
    }

    pub fn delivery_date(&self) -> NaiveDate {
        self.delivery_date
    }

    pub fn get(&self, key: &SeriesKey, target_date: NaiveDate) -> Option<&QuantileForecast> {
        self.forecasts.get(&(key.clone(), target_date))
    }

    pub fn series_keys(&self) -> Vec<SeriesKey> {
        let mut keys: Vec<SeriesKey> = self.forecasts.keys().map(|(k, _)| k.clone()).collect();
        keys.dedup();
        keys
    }

    pub fn target_dates(&self, key: &SeriesKey) -> impl Iterator<Item = NaiveDate> + '_ {
        let key = key.clone();
        self.forecasts
            .keys()
            .filter(move |(k, _)| *k == key)
            .map(|(_, d)| *d)
    }

    pub fn iter(&self) -> impl Iterator<Item = &QuantileForecast> {
        self.forecasts.values()
    }

    pub fn len(&self) -> usize {
        self.forecasts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forecasts.is_empty()
    }
}

/// Ground-truth values for one series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSeries {
    key: SeriesKey,
    points: BTreeMap<NaiveDate, f64>,
}

impl ObservationSeries {
    pub fn new(key: SeriesKey, points: impl IntoIterator<Item = (NaiveDate, f64)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (date, value) in points {
            if !value.is_finite() {
                return Err(Error::NonFiniteValue {
                    context: format!("{key} observation {date}"),
                });
            }
            map.insert(date, value);
        }
        Ok(ObservationSeries { key, points: map })
    }

    pub fn key(&self) -> &SeriesKey {
        &self.key
    }

    pub fn value_at(&self, date: NaiveDate) -> Option<f64> {
        self.points.get(&date).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (NaiveDate, f64)> + '_ {
        self.points.iter().map(|(d, v)| (*d, *v))
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// One (forecast, observed value) training pair.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub forecast: QuantileForecast,
    pub observed: f64,
}

/// Past forecast/observation pairs for one model and series, ordered by
/// target date. May be shorter than the nominal window when a model
/// started late or skipped days.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingWindow {
    nominal: usize,
    pairs: Vec<TrainingPair>,
}

impl TrainingWindow {
    pub fn new(nominal: usize, mut pairs: Vec<TrainingPair>) -> Self {
        pairs.sort_by_key(|p| p.forecast.target_date());
        TrainingWindow { nominal, pairs }
    }

    /// The requested window length T_p (the actual pair count may be less).
    pub fn nominal_len(&self) -> usize {
        self.nominal
    }

    /// True when every one of the nominal days produced a pair.
    pub fn is_complete(&self) -> bool {
        self.pairs.len() == self.nominal
    }

    pub fn pairs(&self) -> &[TrainingPair] {
        &self.pairs
    }

    pub fn iter(&self) -> impl Iterator<Item = &TrainingPair> {
        self.pairs.iter()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn dates(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        self.pairs.iter().map(|p| p.forecast.target_date())
    }
}

/// Draws from a predictive distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet(Vec<f64>);

impl SampleSet {
    pub fn new(draws: Vec<f64>) -> Result<Self> {
        if draws.is_empty() || draws.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSampleSet);
        }
        Ok(SampleSet(draws))
    }

    pub fn draws(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// The most recent forecast a model issued for `target`, looking only at
/// deliveries dated on or before the target date. Later deliveries win.
pub fn latest_forecast_for<'a>(
    deliveries: &'a [ForecastDelivery],
    model: &ModelId,
    key: &SeriesKey,
    target: NaiveDate,
) -> Option<&'a QuantileForecast> {
    deliveries
        .iter()
        .filter(|d| d.model() == model && d.delivery_date() <= target)
        .filter_map(|d| d.get(key, target).map(|f| (d.delivery_date(), f)))
        .max_by_key(|(date, _)| *date)
        .map(|(_, f)| f)
}

/// Builds the trailing training window for one model and series.
///
/// For each of the `window` days before `as_of`, the most recent prior
/// delivery's forecast for that target date is paired with the observation.
/// Days lacking either are omitted, so the result can be shorter than
/// `window` (or empty) for late-arriving models.
pub fn build_training_window(
    deliveries: &[ForecastDelivery],
    obs: &ObservationSeries,
    model: &ModelId,
    key: &SeriesKey,
    as_of: NaiveDate,
    window: usize,
) -> TrainingWindow {
    let mut pairs = Vec::new();
    for back in (1..=window as i64).rev() {
        let day = as_of - chrono::Duration::days(back);
        let forecast = latest_forecast_for(deliveries, model, key, day);
        let observed = obs.value_at(day);
        if let (Some(forecast), Some(observed)) = (forecast, observed) {
            pairs.push(TrainingPair {
                forecast: forecast.clone(),
                observed,
            });
        }
    }
    TrainingWindow::new(window, pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn date(y: i32, m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, d).unwrap()
    }

    fn key() -> SeriesKey {
        SeriesKey::new("England", "death_inc_line")
    }

    fn forecast(target: NaiveDate, values: &[f64]) -> QuantileForecast {
        let levels = [0.25, 0.5, 0.75];
        QuantileForecast::new(
            key(),
            target,
            levels.iter().copied().zip(values.iter().copied()),
        )
        .unwrap()
    }

    #[test]
    fn model_id_rejects_empty() {
        assert!(ModelId::new("").is_err());
        assert!(ModelId::new("  ").is_err());
        assert!(ModelId::new("m1").is_ok());
    }

    #[test]
    fn quantile_forecast_validates_levels() {
        let bad_level = QuantileForecast::new(key(), date(2020, 5, 1), [(0.0, 1.0), (0.5, 2.0)]);
        assert!(matches!(bad_level, Err(Error::LevelOutOfRange { .. })));

        let dup = QuantileForecast::new(key(), date(2020, 5, 1), [(0.5, 1.0), (0.5, 2.0)]);
        assert!(matches!(dup, Err(Error::LevelsNotIncreasing { .. })));
    }

    #[test]
    fn quantile_forecast_repairs_by_sorting() {
        let (f, repaired) = QuantileForecast::new_repairing(
            key(),
            date(2020, 5, 1),
            [(0.25, 9.0), (0.5, 7.0), (0.75, 5.0)],
        )
        .unwrap();
        assert!(repaired);
        assert_eq!(f.values(), &[5.0, 7.0, 9.0]);

        let strict = QuantileForecast::new(
            key(),
            date(2020, 5, 1),
            [(0.25, 9.0), (0.5, 7.0), (0.75, 5.0)],
        );
        assert!(matches!(strict, Err(Error::NonMonotoneValues { .. })));
    }

    #[test]
    fn delivery_rejects_gappy_horizon() {
        let model = ModelId::new("m1").unwrap();
        let fs = vec![
            forecast(date(2020, 5, 1), &[1.0, 2.0, 3.0]),
            forecast(date(2020, 5, 3), &[1.0, 2.0, 3.0]),
        ];
        let err = ForecastDelivery::new(model, date(2020, 5, 1), fs);
        assert!(matches!(err, Err(Error::NonContiguousHorizon { .. })));
    }

    #[test]
    fn delivery_rejects_duplicate_slot() {
        let model = ModelId::new("m1").unwrap();
        let fs = vec![
            forecast(date(2020, 5, 1), &[1.0, 2.0, 3.0]),
            forecast(date(2020, 5, 1), &[4.0, 5.0, 6.0]),
        ];
        let err = ForecastDelivery::new(model, date(2020, 5, 1), fs);
        assert!(matches!(err, Err(Error::DuplicateForecast { .. })));
    }

    #[test]
    fn training_window_empty_without_prior_deliveries() {
        let obs = ObservationSeries::new(key(), [(date(2020, 5, 1), 10.0)]).unwrap();
        let model = ModelId::new("m1").unwrap();
        let w = build_training_window(&[], &obs, &model, &key(), date(2020, 5, 10), 20);
        assert!(w.is_empty());
    }

    #[test]
    fn training_window_prefers_latest_delivery() {
        let model = ModelId::new("m1").unwrap();
        let target = date(2020, 5, 5);
        let early = ForecastDelivery::new(
            model.clone(),
            date(2020, 5, 1),
            vec![forecast(target, &[1.0, 2.0, 3.0])],
        )
        .unwrap();
        let late = ForecastDelivery::new(
            model.clone(),
            date(2020, 5, 4),
            vec![forecast(target, &[10.0, 20.0, 30.0])],
        )
        .unwrap();
        let obs = ObservationSeries::new(key(), [(target, 15.0)]).unwrap();

        // Exhaustive over the two possible delivery orders.
        for deliveries in [
            vec![early.clone(), late.clone()],
            vec![late.clone(), early.clone()],
        ] {
            let w = build_training_window(&deliveries, &obs, &model, &key(), date(2020, 5, 6), 20);
            assert_eq!(w.len(), 1);
            assert_eq!(w.pairs()[0].forecast.median(), Some(20.0));
            assert_eq!(w.pairs()[0].observed, 15.0);
        }
    }

    #[test]
    fn training_window_is_sorted_and_bounded() {
        let model = ModelId::new("m1").unwrap();
        let mut forecasts = Vec::new();
        for d in 1..=14 {
            forecasts.push(forecast(date(2020, 5, d), &[1.0, 2.0, 3.0]));
        }
        let delivery = ForecastDelivery::new(model.clone(), date(2020, 5, 1), forecasts).unwrap();
        let obs = ObservationSeries::new(
            key(),
            (1..=14).map(|d| (date(2020, 5, d), d as f64)),
        )
        .unwrap();
        let w = build_training_window(&[delivery], &obs, &model, &key(), date(2020, 5, 11), 5);
        assert_eq!(w.len(), 5);
        let dates: Vec<_> = w.dates().collect();
        assert!(dates.windows(2).all(|p| p[0] < p[1]));
        assert_eq!(dates[0], date(2020, 5, 6));
        assert_eq!(dates[4], date(2020, 5, 10));
    }

    #[test]
    fn latest_forecast_ignores_future_deliveries() {
        let model = ModelId::new("m1").unwrap();
        let target = date(2020, 5, 5);
        // Delivered after the target date: unusable for that day.
        let future = ForecastDelivery::new(
            model.clone(),
            date(2020, 5, 6),
            vec![forecast(date(2020, 5, 6), &[1.0, 2.0, 3.0])],
        )
        .unwrap();
        assert!(latest_forecast_for(&[future], &model, &key(), target).is_none());
    }

    #[test]
    fn catalog_checks_membership() {
        let catalog = KeyCatalog::default();
        assert!(catalog.check(&SeriesKey::new("England", "death_inc_line")).is_ok());
        assert!(catalog.check(&SeriesKey::new("Mars", "death_inc_line")).is_err());
        assert!(catalog.check(&SeriesKey::new("England", "cases")).is_err());
        let open = KeyCatalog::permissive();
        assert!(open.check(&SeriesKey::new("Mars", "cases")).is_ok());
        assert!(open.check(&SeriesKey::new("", "cases")).is_err());
    }
}
