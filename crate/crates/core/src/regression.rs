//! Regression-based forecast combination.
//!
//! Three combiners share the same training layout (per-model windows over
//! a common span of days):
//!
//! * EMOS+ — a Gaussian predictive distribution whose mean is a
//!   non-negative combination of the model medians and whose variance
//!   grows with the ensemble spread, fitted by CRPS.
//! * QRA — each combined quantile is the same non-negative combination of
//!   the model quantiles at that level, fitted by summed quantile score.
//! * SQRA — QRA on covariates translated so each model's current median at
//!   the forecast start matches its own recent predictions, correcting
//!   structural jumps between deliveries.

use std::collections::BTreeMap;

use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::gauss;
use crate::model::{ForecastDelivery, ModelId, QuantileForecast, SeriesKey, TrainingWindow};
use crate::pso::{minimize, SwarmSettings};
use crate::scoring::{crps_gaussian, pinball};

/// Minimum number of common training days for a regression fit.
const MIN_TRAINING_DAYS: usize = 5;

/// Relative variance floor: predictive variance is evaluated as
/// max(c + d·S², VARIANCE_FLOOR_REL · data_scale²) so duplicated models
/// (zero ensemble spread) cannot produce a degenerate Gaussian.
const VARIANCE_FLOOR_REL: f64 = 1e-6;

/// PSO search boxes (slopes and the spread coefficient d; the box for c
/// scales with the observed data).
const SLOPE_BOUND: f64 = 5.0;
const D_BOUND: f64 = 10.0;

fn population_std(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Per-date ensemble summary: the model medians and their spread.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    medians: BTreeMap<ModelId, f64>,
    spread: f64,
}

impl EnsembleStats {
    pub fn from_medians(medians: BTreeMap<ModelId, f64>) -> Result<Self> {
        if medians.is_empty() {
            return Err(Error::EmptyModelList);
        }
        if medians.values().any(|m| !m.is_finite()) {
            return Err(Error::NonFiniteValue {
                context: "ensemble median".into(),
            });
        }
        let values: Vec<f64> = medians.values().copied().collect();
        let spread = population_std(&values);
        Ok(EnsembleStats { medians, spread })
    }

    /// Extracts medians from one forecast per model.
    pub fn from_forecasts<'a>(
        forecasts: impl IntoIterator<Item = (&'a ModelId, &'a QuantileForecast)>,
    ) -> Result<Self> {
        let mut medians = BTreeMap::new();
        for (model, forecast) in forecasts {
            let median = forecast.median().ok_or(Error::MissingLevel { level: 0.5 })?;
            medians.insert(model.clone(), median);
        }
        Self::from_medians(medians)
    }

    pub fn median(&self, model: &ModelId) -> Option<f64> {
        self.medians.get(model).copied()
    }

    /// Population standard deviation of the medians.
    pub fn spread(&self) -> f64 {
        self.spread
    }

    pub fn models(&self) -> impl Iterator<Item = &ModelId> {
        self.medians.keys()
    }
}

/// Fitted EMOS+ coefficients. The intercept is fixed at zero so the mean
/// is forced through the model predictions; slopes and both variance
/// coefficients are non-negative.
#[derive(Debug, Clone, PartialEq)]
pub struct EmosCoefficients {
    models: Vec<ModelId>,
    slopes: Vec<f64>,
    c: f64,
    d: f64,
    variance_floor: f64,
}

impl EmosCoefficients {
    pub fn new(
        models: Vec<ModelId>,
        slopes: Vec<f64>,
        c: f64,
        d: f64,
        variance_floor: f64,
    ) -> Result<Self> {
        if models.is_empty() {
            return Err(Error::EmptyModelList);
        }
        if models.len() != slopes.len() {
            return Err(Error::DateMisalignment {
                message: format!(
                    "{} models but {} slopes",
                    models.len(),
                    slopes.len()
                ),
            });
        }
        let coeff_ok = |x: f64| x.is_finite() && x >= 0.0;
        if !slopes.iter().all(|&b| coeff_ok(b)) || !coeff_ok(c) || !coeff_ok(d) {
            return Err(Error::NonFiniteValue {
                context: "EMOS coefficients must be finite and non-negative".into(),
            });
        }
        if !(variance_floor > 0.0) {
            return Err(Error::NonPositiveSigma {
                sigma: variance_floor,
            });
        }
        Ok(EmosCoefficients {
            models,
            slopes,
            c,
            d,
            variance_floor,
        })
    }

    pub fn models(&self) -> &[ModelId] {
        &self.models
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    /// Fixed at zero by construction.
    pub fn intercept(&self) -> f64 {
        0.0
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn d(&self) -> f64 {
        self.d
    }

    pub fn variance_floor(&self) -> f64 {
        self.variance_floor
    }

    /// Predictive mean Σ b_k·median_k for the given ensemble state.
    pub fn mean(&self, stats: &EnsembleStats, date: NaiveDate) -> Result<f64> {
        let mut mean = 0.0;
        for (model, &slope) in self.models.iter().zip(&self.slopes) {
            let median = stats
                .median(model)
                .ok_or_else(|| Error::MissingComponentForecast {
                    model: model.to_string(),
                    date,
                })?;
            mean += slope * median;
        }
        Ok(mean)
    }

    /// Predictive variance c + d·S², floored away from zero.
    pub fn variance(&self, stats: &EnsembleStats) -> f64 {
        (self.c + self.d * stats.spread() * stats.spread()).max(self.variance_floor)
    }
}

/// Fitted QRA slopes, shared across quantile levels. Non-negative but not
/// constrained to the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct QraCoefficients {
    models: Vec<ModelId>,
    slopes: Vec<f64>,
}

impl QraCoefficients {
    pub fn new(models: Vec<ModelId>, slopes: Vec<f64>) -> Result<Self> {
        if models.is_empty() {
            return Err(Error::EmptyModelList);
        }
        if models.len() != slopes.len() {
            return Err(Error::DateMisalignment {
                message: format!("{} models but {} slopes", models.len(), slopes.len()),
            });
        }
        if slopes.iter().any(|&b| !b.is_finite() || b < 0.0) {
            return Err(Error::NonFiniteValue {
                context: "QRA slopes must be finite and non-negative".into(),
            });
        }
        Ok(QraCoefficients { models, slopes })
    }

    pub fn models(&self) -> &[ModelId] {
        &self.models
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    pub fn slope(&self, model: &ModelId) -> Option<f64> {
        self.models
            .iter()
            .position(|m| m == model)
            .map(|i| self.slopes[i])
    }
}

/// Aligned training design shared by the regression fits: the models with
/// complete windows, their common dates, the observations, and one
/// forecast per (day, model).
struct Design<'a> {
    models: Vec<&'a ModelId>,
    observations: Vec<f64>,
    forecasts: Vec<Vec<&'a QuantileForecast>>,
}

fn complete_design(windows: &BTreeMap<ModelId, TrainingWindow>) -> Result<Design<'_>> {
    let included: Vec<(&ModelId, &TrainingWindow)> = windows
        .iter()
        .filter(|(model, window)| {
            if window.is_complete() && !window.is_empty() {
                true
            } else {
                log::info!(
                    "excluding {} from regression fit: {}/{} training days",
                    model,
                    window.len(),
                    window.nominal_len()
                );
                false
            }
        })
        .collect();
    if included.is_empty() {
        return Err(Error::NoCompleteWindows);
    }
    let days = included[0].1.len();
    if days < MIN_TRAINING_DAYS {
        return Err(Error::InsufficientTrainingDays {
            needed: MIN_TRAINING_DAYS,
            got: days,
        });
    }
    let dates: Vec<NaiveDate> = included[0].1.dates().collect();
    for (model, window) in &included {
        if window.dates().collect::<Vec<_>>() != dates {
            return Err(Error::DateMisalignment {
                message: format!("training window for {model} covers different dates"),
            });
        }
    }
    let observations: Vec<f64> = included[0].1.iter().map(|p| p.observed).collect();
    let forecasts: Vec<Vec<&QuantileForecast>> = (0..days)
        .map(|i| {
            included
                .iter()
                .map(|(_, window)| &window.pairs()[i].forecast)
                .collect()
        })
        .collect();
    Ok(Design {
        models: included.into_iter().map(|(m, _)| m).collect(),
        observations,
        forecasts,
    })
}

/// Fits EMOS+ by minimizing the mean Gaussian CRPS over the training days.
///
/// Models with incomplete windows are excluded (logged); the remaining
/// windows must cover the same dates.
pub fn fit_emos(
    windows: &BTreeMap<ModelId, TrainingWindow>,
    settings: &SwarmSettings,
) -> Result<EmosCoefficients> {
    let design = complete_design(windows)?;
    let k = design.models.len();
    let days = design.observations.len();

    let mut medians = Vec::with_capacity(days);
    let mut spreads = Vec::with_capacity(days);
    for row in &design.forecasts {
        let m: Vec<f64> = row
            .iter()
            .map(|f| f.median().ok_or(Error::MissingLevel { level: 0.5 }))
            .collect::<Result<_>>()?;
        spreads.push(population_std(&m));
        medians.push(m);
    }
    let data_scale = design
        .observations
        .iter()
        .fold(1.0f64, |acc, w| acc.max(w.abs()));
    let floor = VARIANCE_FLOOR_REL * data_scale * data_scale;
    let obs_sd = population_std(&design.observations);

    let mut bounds = vec![(0.0, SLOPE_BOUND); k];
    bounds.push((0.0, (3.0 * obs_sd).powi(2)));
    bounds.push((0.0, D_BOUND));

    let objective = |params: &[f64]| -> f64 {
        let (b, cd) = params.split_at(k);
        let mut total = 0.0;
        for i in 0..days {
            let mean: f64 = b.iter().zip(&medians[i]).map(|(bk, y)| bk * y).sum();
            let var = (cd[0] + cd[1] * spreads[i] * spreads[i]).max(floor);
            match crps_gaussian(mean, var.sqrt(), design.observations[i]) {
                Ok(score) => total += score.value(),
                Err(_) => return f64::INFINITY,
            }
        }
        total / days as f64
    };

    let config = settings.config(bounds)?;
    let result = minimize(objective, &config)?;
    let (b, cd) = result.best_position.split_at(k);
    EmosCoefficients::new(
        design.models.into_iter().cloned().collect(),
        b.to_vec(),
        cd[0],
        cd[1],
        floor,
    )
}

/// Quantiles of the fitted Gaussian N(Σ b_k·median_k, c + d·S²).
pub fn predict_emos(
    coeffs: &EmosCoefficients,
    stats: &EnsembleStats,
    key: SeriesKey,
    target_date: NaiveDate,
    levels: &[f64],
) -> Result<QuantileForecast> {
    let mean = coeffs.mean(stats, target_date)?;
    let sd = coeffs.variance(stats).sqrt();
    let points: Vec<(f64, f64)> = levels
        .iter()
        .map(|&alpha| (alpha, mean + sd * gauss::quantile(alpha)))
        .collect();
    QuantileForecast::new(key, target_date, points)
}

/// Builds the QRA training objective: the quantile score summed over
/// training days and levels of the slope-weighted quantile combination.
fn qra_objective_parts<'a>(
    design: &'a Design<'a>,
    levels: &[f64],
) -> Result<(Vec<Vec<Vec<f64>>>, Vec<f64>)> {
    // covariates[day][level][model]
    let mut covariates = Vec::with_capacity(design.forecasts.len());
    for row in &design.forecasts {
        let mut per_level = Vec::with_capacity(levels.len());
        for &alpha in levels {
            let xs: Vec<f64> = row
                .iter()
                .map(|f| f.value_at(alpha).ok_or(Error::MissingLevel { level: alpha }))
                .collect::<Result<_>>()?;
            per_level.push(xs);
        }
        covariates.push(per_level);
    }
    Ok((covariates, design.observations.clone()))
}

fn qra_objective_value(
    covariates: &[Vec<Vec<f64>>],
    observations: &[f64],
    levels: &[f64],
    slopes: &[f64],
) -> f64 {
    let mut total = 0.0;
    for (per_level, &w) in covariates.iter().zip(observations) {
        for (xs, &alpha) in per_level.iter().zip(levels) {
            let q: f64 = slopes.iter().zip(xs).map(|(b, x)| b * x).sum();
            total += pinball(q, alpha, w);
        }
    }
    total
}

/// Fits QRA slopes by PSO, then checks the simple baselines (equal convex
/// weights and every single-model unit vector) and keeps whichever scores
/// best, so the fit is never beaten by those baselines.
pub fn fit_qra(
    windows: &BTreeMap<ModelId, TrainingWindow>,
    levels: &[f64],
    settings: &SwarmSettings,
) -> Result<QraCoefficients> {
    if levels.is_empty() {
        return Err(Error::EmptyModelList);
    }
    for &alpha in levels {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::LevelOutOfRange { level: alpha });
        }
    }
    let design = complete_design(windows)?;
    let k = design.models.len();
    let (covariates, observations) = qra_objective_parts(&design, levels)?;

    let objective =
        |slopes: &[f64]| qra_objective_value(&covariates, &observations, levels, slopes);
    let config = settings.config(vec![(0.0, SLOPE_BOUND); k])?;
    let result = minimize(&objective, &config)?;

    let mut best = result.best_position;
    let mut best_value = result.best_value;
    let mut candidates = vec![vec![1.0 / k as f64; k]];
    for i in 0..k {
        let mut unit = vec![0.0; k];
        unit[i] = 1.0;
        candidates.push(unit);
    }
    for candidate in candidates {
        let value = objective(&candidate);
        if value < best_value {
            best_value = value;
            best = candidate;
        }
    }
    QraCoefficients::new(design.models.into_iter().cloned().collect(), best)
}

/// Training objective value for arbitrary coefficients on the same design
/// a fit would use; exposed so fits can be audited against baselines.
pub fn qra_training_objective(
    windows: &BTreeMap<ModelId, TrainingWindow>,
    levels: &[f64],
    coeffs: &QraCoefficients,
) -> Result<f64> {
    let design = complete_design(windows)?;
    let slopes: Vec<f64> = design
        .models
        .iter()
        .map(|m| {
            coeffs.slope(m).ok_or_else(|| Error::MissingComponentForecast {
                model: m.to_string(),
                date: NaiveDate::MIN,
            })
        })
        .collect::<Result<_>>()?;
    let (covariates, observations) = qra_objective_parts(&design, levels)?;
    Ok(qra_objective_value(
        &covariates,
        &observations,
        levels,
        &slopes,
    ))
}

/// Slope-weighted combination of the models' quantiles at each level.
/// Non-monotone outputs are repaired by sorting, with a warning.
pub fn predict_qra(
    coeffs: &QraCoefficients,
    forecasts: &BTreeMap<ModelId, QuantileForecast>,
    levels: &[f64],
) -> Result<QuantileForecast> {
    let first = coeffs
        .models()
        .iter()
        .find_map(|m| forecasts.get(m))
        .ok_or(Error::EmptyModelList)?;
    let key = first.key().clone();
    let date = first.target_date();

    let mut rows = Vec::with_capacity(coeffs.models().len());
    for model in coeffs.models() {
        let forecast = forecasts
            .get(model)
            .ok_or_else(|| Error::MissingComponentForecast {
                model: model.to_string(),
                date,
            })?;
        if forecast.key() != &key || forecast.target_date() != date {
            return Err(Error::DateMisalignment {
                message: format!("forecast for {model} targets a different series or date"),
            });
        }
        rows.push(forecast);
    }

    let mut points = Vec::with_capacity(levels.len());
    for &alpha in levels {
        let mut q = 0.0;
        for (forecast, &slope) in rows.iter().zip(coeffs.slopes()) {
            let x = forecast
                .value_at(alpha)
                .ok_or(Error::MissingLevel { level: alpha })?;
            q += slope * x;
        }
        points.push((alpha, q));
    }
    let (forecast, repaired) = QuantileForecast::new_repairing(key, date, points)?;
    if repaired {
        log::warn!(
            "QRA quantile crossing repaired for {} {}",
            forecast.key(),
            forecast.target_date()
        );
    }
    Ok(forecast)
}

/// How a model's shift was anchored.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShiftAnchor {
    /// Training predictions covered the forecast start t0 directly.
    AtStart,
    /// t0 was absent; the latest earlier predicted date was used instead.
    Fallback(NaiveDate),
    /// No usable training prediction; the shift defaults to zero.
    NoOverlap,
}

/// One model's discontinuity offset Δ and how it was derived.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelShift {
    delta: f64,
    anchor: ShiftAnchor,
}

impl ModelShift {
    pub fn zero() -> Self {
        ModelShift {
            delta: 0.0,
            anchor: ShiftAnchor::AtStart,
        }
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn anchor(&self) -> ShiftAnchor {
        self.anchor
    }

    pub fn is_fallback(&self) -> bool {
        matches!(self.anchor, ShiftAnchor::Fallback(_))
    }
}

/// Per-model shifts for one combination step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SqraShift {
    shifts: BTreeMap<ModelId, ModelShift>,
}

impl SqraShift {
    pub fn zero(models: impl IntoIterator<Item = ModelId>) -> Self {
        SqraShift {
            shifts: models.into_iter().map(|m| (m, ModelShift::zero())).collect(),
        }
    }

    pub fn insert(&mut self, model: ModelId, shift: ModelShift) {
        self.shifts.insert(model, shift);
    }

    /// Offset for a model; absent models shift by zero.
    pub fn delta(&self, model: &ModelId) -> f64 {
        self.shifts.get(model).map_or(0.0, |s| s.delta)
    }

    pub fn get(&self, model: &ModelId) -> Option<&ModelShift> {
        self.shifts.get(model)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ModelId, &ModelShift)> {
        self.shifts.iter()
    }

    pub fn is_zero(&self) -> bool {
        self.shifts.values().all(|s| s.delta == 0.0)
    }
}

/// Δ for one model: its current median at the forecast start t0 minus the
/// median its own earlier delivery predicted for t0.
///
/// `training` is the model's most recent earlier delivery — the forecasts
/// the regression trained on. When it does not reach t0 the latest earlier
/// predicted date anchors the comparison (recorded as a fallback); with no
/// earlier prediction at all the shift is zero and a warning is logged.
pub fn compute_sqra_shift(
    current: &ForecastDelivery,
    training: Option<&ForecastDelivery>,
    key: &SeriesKey,
    t0: NaiveDate,
) -> Result<ModelShift> {
    let current_median = current
        .get(key, t0)
        .and_then(QuantileForecast::median)
        .ok_or_else(|| Error::MissingComponentForecast {
            model: current.model().to_string(),
            date: t0,
        })?;
    let no_overlap = |model: &ModelId| {
        log::warn!("no training predictions near {t0} for {model} ({key}); shift set to 0");
        ModelShift {
            delta: 0.0,
            anchor: ShiftAnchor::NoOverlap,
        }
    };
    let Some(training) = training else {
        return Ok(no_overlap(current.model()));
    };
    let anchor_date = training.target_dates(key).filter(|&d| d <= t0).max();
    let Some(anchor_date) = anchor_date else {
        return Ok(no_overlap(current.model()));
    };
    let Some(training_median) = training
        .get(key, anchor_date)
        .and_then(QuantileForecast::median)
    else {
        return Ok(no_overlap(current.model()));
    };
    Ok(ModelShift {
        delta: current_median - training_median,
        anchor: if anchor_date == t0 {
            ShiftAnchor::AtStart
        } else {
            ShiftAnchor::Fallback(anchor_date)
        },
    })
}

/// Shifts for every listed model, pairing each model's current delivery
/// (the latest one covering t0) with its previous delivery.
pub fn compute_sqra_shifts(
    deliveries: &[ForecastDelivery],
    models: &[ModelId],
    key: &SeriesKey,
    t0: NaiveDate,
) -> Result<SqraShift> {
    let mut out = SqraShift::default();
    for model in models {
        let current = deliveries
            .iter()
            .filter(|d| d.model() == model && d.get(key, t0).is_some())
            .max_by_key(|d| d.delivery_date())
            .ok_or_else(|| Error::MissingComponentForecast {
                model: model.to_string(),
                date: t0,
            })?;
        let training = deliveries
            .iter()
            .filter(|d| d.model() == model && d.delivery_date() < current.delivery_date())
            .max_by_key(|d| d.delivery_date());
        out.insert(model.clone(), compute_sqra_shift(current, training, key, t0)?);
    }
    Ok(out)
}

/// QRA on translated covariates ỹ_k − Δ_k. With all shifts zero this is
/// exactly [`predict_qra`].
pub fn predict_sqra(
    coeffs: &QraCoefficients,
    forecasts: &BTreeMap<ModelId, QuantileForecast>,
    shifts: &SqraShift,
    levels: &[f64],
) -> Result<QuantileForecast> {
    if coeffs.models().iter().all(|m| shifts.delta(m) == 0.0) {
        return predict_qra(coeffs, forecasts, levels);
    }
    let shifted: BTreeMap<ModelId, QuantileForecast> = forecasts
        .iter()
        .map(|(model, forecast)| {
            let delta = shifts.delta(model);
            let f = if delta == 0.0 {
                forecast.clone()
            } else {
                forecast.shifted(-delta)
            };
            (model.clone(), f)
        })
        .collect();
    predict_qra(coeffs, &shifted, levels)
}
