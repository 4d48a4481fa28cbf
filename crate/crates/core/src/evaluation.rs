//! Forecast-window evaluation: sharpness, bias, calibration, interval
//! scores, and the distance-based method ranking.
//!
//! Bias and calibration are proportions with exact ties counted as 0.5,
//! the convention under which a perfect zero-uncertainty forecast lands at
//! the origin of the (b̂, ĉ) plane.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ObservationSeries, QuantileForecast, SeriesKey};
use crate::scoring::{interval_score, quantile_score, Interval};

const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Window summary for one method on one series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationMetrics {
    /// Mean width of the 75% central interval (q0.875 − q0.125).
    pub sharpness: f64,
    /// Proportion of dates with median above the data (ties 0.5).
    pub bias: f64,
    /// Proportion of dates with the data inside the 75% interval
    /// (boundary hits 0.5).
    pub calibration: f64,
    pub b_hat: f64,
    pub c_hat: f64,
    /// √(b̂² + ĉ²), the distance from the ideal origin.
    pub distance: f64,
    /// Interval score averaged over dates and the 0%/50%/90% intervals.
    pub mean_interval_score: f64,
}

impl EvaluationMetrics {
    fn from_parts(sharpness: f64, bias: f64, calibration: f64, mean_interval_score: f64) -> Self {
        let b_hat = (0.5 - bias) / 0.5;
        let c_hat = (0.5 - calibration) / 0.5;
        EvaluationMetrics {
            sharpness,
            bias,
            calibration,
            b_hat,
            c_hat,
            distance: (b_hat * b_hat + c_hat * c_hat).sqrt(),
            mean_interval_score,
        }
    }
}

fn level(forecast: &QuantileForecast, alpha: f64) -> Result<f64> {
    forecast
        .value_at(alpha)
        .ok_or(Error::MissingLevel { level: alpha })
}

/// Mean 75% central interval width over the forecast window.
pub fn sharpness(forecasts: &[QuantileForecast]) -> Result<f64> {
    if forecasts.is_empty() {
        return Err(Error::NoMatchedDates);
    }
    let mut total = 0.0;
    for f in forecasts {
        total += level(f, 0.875)? - level(f, 0.125)?;
    }
    Ok(total / forecasts.len() as f64)
}

/// Pairs each forecast with its observation; at least one match required.
fn matched<'a>(
    forecasts: &'a [QuantileForecast],
    obs: &ObservationSeries,
) -> Result<Vec<(&'a QuantileForecast, f64)>> {
    let pairs: Vec<(&QuantileForecast, f64)> = forecasts
        .iter()
        .filter_map(|f| obs.value_at(f.target_date()).map(|w| (f, w)))
        .collect();
    if pairs.is_empty() {
        return Err(Error::NoMatchedDates);
    }
    Ok(pairs)
}

/// Proportion of matched dates whose median exceeds the data; exact ties
/// contribute 0.5.
pub fn bias(forecasts: &[QuantileForecast], obs: &ObservationSeries) -> Result<f64> {
    let pairs = matched(forecasts, obs)?;
    let mut total = 0.0;
    for (f, w) in &pairs {
        let median = level(f, 0.5)?;
        total += if median > *w {
            1.0
        } else if median == *w {
            0.5
        } else {
            0.0
        };
    }
    Ok(total / pairs.len() as f64)
}

/// Proportion of matched dates with the data strictly inside the 75%
/// central interval; landing exactly on a bound contributes 0.5.
pub fn calibration(forecasts: &[QuantileForecast], obs: &ObservationSeries) -> Result<f64> {
    let pairs = matched(forecasts, obs)?;
    let mut total = 0.0;
    for (f, w) in &pairs {
        let lower = level(f, 0.125)?;
        let upper = level(f, 0.875)?;
        total += if *w > lower && *w < upper {
            1.0
        } else if *w == lower || *w == upper {
            0.5
        } else {
            0.0
        };
    }
    Ok(total / pairs.len() as f64)
}

/// Interval score averaged over the window and over three intervals: the
/// degenerate 0% interval (quantile score of the median), the 50% interval
/// (q0.25, q0.75), and the 90% interval (q0.05, q0.95).
pub fn mean_interval_score(forecasts: &[QuantileForecast], obs: &ObservationSeries) -> Result<f64> {
    let pairs = matched(forecasts, obs)?;
    let mut total = 0.0;
    for (f, w) in &pairs {
        let median_term = quantile_score(level(f, 0.5)?, 0.5, *w)?.value();
        let mid = interval_score(
            Interval::new(level(f, 0.25)?, level(f, 0.75)?, 0.5)?,
            *w,
        )
        .value();
        let wide = interval_score(
            Interval::new(level(f, 0.05)?, level(f, 0.95)?, 0.1)?,
            *w,
        )
        .value();
        total += (median_term + mid + wide) / 3.0;
    }
    Ok(total / pairs.len() as f64)
}

/// Full metrics for every method over a shared forecast window.
///
/// All methods must cover the same target dates; sharpness is taken over
/// the whole window, the data-dependent metrics over the observed dates.
pub fn evaluate(
    methods: &BTreeMap<String, Vec<QuantileForecast>>,
    obs: &ObservationSeries,
) -> Result<BTreeMap<String, EvaluationMetrics>> {
    let mut reference: Option<(&String, Vec<chrono::NaiveDate>)> = None;
    for (name, forecasts) in methods {
        let mut dates: Vec<chrono::NaiveDate> =
            forecasts.iter().map(|f| f.target_date()).collect();
        dates.sort();
        match &reference {
            None => reference = Some((name, dates)),
            Some((first, expected)) => {
                if &dates != expected {
                    return Err(Error::DateMisalignment {
                        message: format!("{name} covers different target dates than {first}"),
                    });
                }
            }
        }
    }
    methods
        .iter()
        .map(|(name, forecasts)| {
            let metrics = EvaluationMetrics::from_parts(
                sharpness(forecasts)?,
                bias(forecasts, obs)?,
                calibration(forecasts, obs)?,
                mean_interval_score(forecasts, obs)?,
            );
            Ok((name.clone(), metrics))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardEntry {
    pub method: String,
    pub metrics: EvaluationMetrics,
}

/// Methods for one series, ordered best-first by the selection rule:
/// smallest distance, then smallest sharpness, then method name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leaderboard {
    key: SeriesKey,
    entries: Vec<LeaderboardEntry>,
}

impl Leaderboard {
    pub fn new(key: SeriesKey, results: BTreeMap<String, EvaluationMetrics>) -> Result<Self> {
        if results.is_empty() {
            return Err(Error::EmptyModelList);
        }
        let mut entries: Vec<LeaderboardEntry> = results
            .into_iter()
            .map(|(method, metrics)| LeaderboardEntry { method, metrics })
            .collect();
        entries.sort_by(|a, b| {
            a.metrics
                .distance
                .total_cmp(&b.metrics.distance)
                .then(a.metrics.sharpness.total_cmp(&b.metrics.sharpness))
                .then(a.method.cmp(&b.method))
        });
        Ok(Leaderboard { key, entries })
    }

    pub fn key(&self) -> &SeriesKey {
        &self.key
    }

    /// Best-first entries.
    pub fn entries(&self) -> &[LeaderboardEntry] {
        &self.entries
    }
}

/// The winning method under the distance / sharpness / name rule.
pub fn select_best(leaderboard: &Leaderboard) -> &str {
    &leaderboard.entries[0].method
}

/// √2 − distance: tall bars are good, a perfectly centered method scores
/// the full √2.
pub fn bar_height(metrics: &EvaluationMetrics) -> f64 {
    SQRT_2 - metrics.distance
}
