//! Mixture-based forecast combination.
//!
//! A stacked forecast is a weighted mixture of the component predictive
//! distributions. Weights come from one of: equal weighting, decayed
//! reciprocal training scores (time-invariant), geometric interpolation
//! toward equal weights along the horizon (time-varying), a monotone
//! transform of summary scores, or direct score optimization on the
//! simplex.

use std::collections::BTreeMap;

use chrono::NaiveDate;

use crate::distfit::{
    mixture_crps_with_knots, mixture_pdf, mixture_quantiles, ComponentDistribution,
};
use crate::error::{Error, Result};
use crate::model::{ForecastDelivery, ModelId, QuantileForecast, SeriesKey, TrainingWindow};
use crate::pso::{minimize, SwarmSettings};
use crate::scoring::forecast_quantile_score_sum;

/// Simplex tolerance for weight vectors.
const WEIGHT_TOL: f64 = 1e-12;

/// Floor on per-day normalized scores, so a zero-scoring (perfect) model
/// gets a huge but finite reciprocal rather than dividing by zero.
const SCORE_FLOOR: f64 = 1e-9;

/// Non-negative per-model weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    weights: BTreeMap<ModelId, f64>,
}

impl WeightVector {
    /// Validates an already-normalized weight map.
    pub fn new(weights: BTreeMap<ModelId, f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::EmptyModelList);
        }
        let sum: f64 = weights.values().sum();
        if weights.values().any(|&w| !w.is_finite() || w < 0.0) || (sum - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::InvalidWeights { sum });
        }
        Ok(WeightVector { weights })
    }

    /// Normalizes non-negative raw masses to the simplex.
    pub fn normalized(raw: BTreeMap<ModelId, f64>) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::EmptyModelList);
        }
        let sum: f64 = raw.values().sum();
        if raw.values().any(|&w| !w.is_finite() || w < 0.0) || sum <= 0.0 || !sum.is_finite() {
            return Err(Error::InvalidWeights { sum });
        }
        let weights = raw.into_iter().map(|(m, w)| (m, w / sum)).collect();
        Ok(WeightVector { weights })
    }

    /// Weight for a model; zero when the model is absent.
    pub fn get(&self, model: &ModelId) -> f64 {
        self.weights.get(model).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ModelId, f64)> {
        self.weights.iter().map(|(m, &w)| (m, w))
    }

    pub fn models(&self) -> impl Iterator<Item = &ModelId> {
        self.weights.keys()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.weights.values().sum()
    }
}

/// Stacking parameters: score decay λ, training window T_p, horizon H.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StackingConfig {
    pub decay: f64,
    pub window: usize,
    pub horizon: usize,
}

impl Default for StackingConfig {
    fn default() -> Self {
        StackingConfig {
            decay: 0.9,
            window: crate::model::DEFAULT_TRAINING_WINDOW,
            horizon: crate::model::DEFAULT_HORIZON,
        }
    }
}

impl StackingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::PsoConfig {
                message: format!("decay λ must lie in (0, 1] (got {})", self.decay),
            });
        }
        if self.window == 0 || self.horizon == 0 {
            return Err(Error::PsoConfig {
                message: "window and horizon must be positive".into(),
            });
        }
        Ok(())
    }
}

/// Monotone map from a summary score to an unnormalized weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightTransform {
    /// 1/Ŝ_k — large weight for small scores, with an explicit rule when a
    /// score is exactly zero.
    Reciprocal,
    /// exp(−Ŝ_k), the AIC-style weighting.
    ExpNegative,
}

/// Training objective for [`optimize_mixture_weights`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixtureScore {
    Log,
    Crps,
}

/// w_k = 1/K for every listed model.
pub fn equal_weights(models: &[ModelId]) -> Result<WeightVector> {
    if models.is_empty() {
        return Err(Error::EmptyModelList);
    }
    let raw: BTreeMap<ModelId, f64> = models.iter().map(|m| (m.clone(), 1.0)).collect();
    WeightVector::normalized(raw)
}

/// Time-invariant stacking weights from decayed reciprocal scores.
///
/// For each training day the models' quantile-score sums are normalized to
/// fractions of that day's total; each model then accumulates
/// λ^(days before the most recent training day) divided by its normalized
/// score, over the days it reported. Those raw masses are normalized to a
/// weight vector, so models with shorter windows (fewer summed terms) are
/// naturally penalized.
pub fn time_invariant_weights(
    windows: &BTreeMap<ModelId, TrainingWindow>,
    config: &StackingConfig,
) -> Result<WeightVector> {
    config.validate()?;
    if windows.is_empty() {
        return Err(Error::EmptyModelList);
    }
    // date → (model, raw score) for every reporting model.
    let mut days: BTreeMap<NaiveDate, Vec<(&ModelId, f64)>> = BTreeMap::new();
    for (model, window) in windows {
        for pair in window.iter() {
            let score = forecast_quantile_score_sum(&pair.forecast, pair.observed).value();
            days.entry(pair.forecast.target_date())
                .or_default()
                .push((model, score));
        }
    }
    let latest = match days.keys().next_back() {
        Some(&d) => d,
        None => return Err(Error::AllWindowsEmpty),
    };

    let mut raw: BTreeMap<ModelId, f64> = windows.keys().map(|m| (m.clone(), 0.0)).collect();
    for (&date, scores) in &days {
        let total: f64 = scores.iter().map(|(_, s)| s).sum();
        let n = scores.len() as f64;
        let decay = config.decay.powi((latest - date).num_days() as i32);
        for (model, score) in scores {
            // Normalized share of the day's total score, floored so perfect
            // (zero-score) days stay finite; an all-zero day is an exact tie.
            let share = if total > 0.0 {
                (score / total).max(SCORE_FLOOR)
            } else {
                1.0 / n
            };
            *raw.get_mut(*model).expect("model key present") += decay / share;
        }
    }
    WeightVector::normalized(raw)
}

/// Geometric interpolation between the base weights (lead 1) and equal
/// weights (lead H): w_k(h) ∝ base_k^γ · (1/K)^(1−γ) with γ = (H−h)/(H−1).
///
/// The endpoints are returned exactly, so zero base weights stay zero for
/// every lead before H and jump to 1/K at H.
pub fn time_varying_weights(
    base: &WeightVector,
    config: &StackingConfig,
    lead: usize,
) -> Result<WeightVector> {
    config.validate()?;
    let h = config.horizon;
    if lead < 1 || lead > h {
        return Err(Error::LeadOutOfRange { lead, horizon: h });
    }
    if lead == 1 || h == 1 {
        return Ok(base.clone());
    }
    if lead == h {
        let models: Vec<ModelId> = base.models().cloned().collect();
        return equal_weights(&models);
    }
    let gamma = (h - lead) as f64 / (h - 1) as f64;
    let k = base.len() as f64;
    let uniform = 1.0 / k;
    let raw: BTreeMap<ModelId, f64> = base
        .iter()
        .map(|(m, w)| (m.clone(), w.powf(gamma) * uniform.powf(1.0 - gamma)))
        .collect();
    WeightVector::normalized(raw)
}

/// Weights from a monotone transform of per-model summary scores,
/// normalized across models.
pub fn normalized_score_weights(
    scores: &BTreeMap<ModelId, f64>,
    transform: WeightTransform,
) -> Result<WeightVector> {
    if scores.is_empty() {
        return Err(Error::EmptyModelList);
    }
    for &s in scores.values() {
        if !s.is_finite() {
            return Err(Error::NonFiniteValue {
                context: "model summary score".into(),
            });
        }
    }
    let raw: BTreeMap<ModelId, f64> = match transform {
        WeightTransform::Reciprocal => {
            if let Some(&bad) = scores.values().find(|&&s| s < 0.0) {
                return Err(Error::NegativeScoreForReciprocal { score: bad });
            }
            if scores.values().any(|&s| s == 0.0) {
                // Zero-score models split all the mass between them.
                scores
                    .iter()
                    .map(|(m, &s)| (m.clone(), if s == 0.0 { 1.0 } else { 0.0 }))
                    .collect()
            } else {
                scores.iter().map(|(m, &s)| (m.clone(), 1.0 / s)).collect()
            }
        }
        WeightTransform::ExpNegative => {
            // Shift by the minimum so the exponentials cannot overflow;
            // the normalized weights are shift-invariant.
            let min = scores.values().cloned().fold(f64::INFINITY, f64::min);
            scores
                .iter()
                .map(|(m, &s)| (m.clone(), (-(s - min)).exp()))
                .collect()
        }
    };
    WeightVector::normalized(raw)
}

/// Maps a PSO position (K−1 free dimensions in [0,1]) onto the simplex.
/// Infeasible points (coordinates summing past 1) are scaled back to the
/// boundary, leaving zero mass for the last model.
fn position_to_weights(position: &[f64], k: usize) -> Vec<f64> {
    debug_assert_eq!(position.len() + 1, k);
    let sum: f64 = position.iter().sum();
    let mut weights: Vec<f64> = if sum > 1.0 {
        position.iter().map(|x| x / sum).collect()
    } else {
        position.to_vec()
    };
    let used: f64 = weights.iter().sum();
    weights.push((1.0 - used).max(0.0));
    weights
}

/// Chooses mixture weights minimizing the mean training score of the
/// mixture predictive distribution (Eq.-style score optimization).
///
/// `components` holds, per model, one component distribution per training
/// day; `observations` holds the matching outcomes in the same day order.
pub fn optimize_mixture_weights(
    components: &BTreeMap<ModelId, Vec<ComponentDistribution>>,
    observations: &[f64],
    score: MixtureScore,
    settings: &SwarmSettings,
) -> Result<WeightVector> {
    let k = components.len();
    if k == 0 {
        return Err(Error::EmptyModelList);
    }
    let n = observations.len();
    if n == 0 || components.values().any(|v| v.len() != n) {
        return Err(Error::DateMisalignment {
            message: format!(
                "observations ({n}) and per-model component counts {:?} must agree",
                components.values().map(Vec::len).collect::<Vec<_>>()
            ),
        });
    }
    let models: Vec<&ModelId> = components.keys().collect();
    if k == 1 {
        return WeightVector::new([(models[0].clone(), 1.0)].into_iter().collect());
    }

    // Per-day component slices in fixed model order.
    let per_day: Vec<Vec<ComponentDistribution>> = (0..n)
        .map(|i| {
            models
                .iter()
                .map(|m| components[*m][i].clone())
                .collect::<Vec<_>>()
        })
        .collect();
    // CRPS integration grids do not depend on the weights, so build them once.
    let knot_sets: Option<Vec<Vec<f64>>> = match score {
        MixtureScore::Crps => Some(
            per_day
                .iter()
                .zip(observations)
                .map(|(comps, &w)| {
                    let mut knots: Vec<f64> = comps.iter().flat_map(component_knots).collect();
                    knots.push(w);
                    knots.sort_by(f64::total_cmp);
                    knots.dedup();
                    knots
                })
                .collect(),
        ),
        MixtureScore::Log => None,
    };

    let objective = |position: &[f64]| -> f64 {
        let weights = position_to_weights(position, k);
        let mut total = 0.0;
        for (i, (comps, &w_obs)) in per_day.iter().zip(observations).enumerate() {
            total += match score {
                MixtureScore::Log => {
                    let p = mixture_pdf(comps, &weights, w_obs);
                    if p > 0.0 {
                        -p.ln()
                    } else {
                        return f64::INFINITY;
                    }
                }
                MixtureScore::Crps => {
                    let knots = &knot_sets.as_ref().expect("built for CRPS")[i];
                    mixture_crps_with_knots(comps, &weights, knots, w_obs)
                }
            };
        }
        total / n as f64
    };

    let config = settings.config(vec![(0.0, 1.0); k - 1])?;
    let result = minimize(objective, &config)?;
    let weights = position_to_weights(&result.best_position, k);
    WeightVector::normalized(
        models
            .into_iter()
            .cloned()
            .zip(weights)
            .collect::<BTreeMap<_, _>>(),
    )
}

fn component_knots(c: &ComponentDistribution) -> Vec<f64> {
    // Support anchors for the CRPS integration grid: dense enough for
    // accuracy, sparse enough to keep the optimizer loop cheap.
    let levels = [
        1e-9, 0.01, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99, 1.0 - 1e-9,
    ];
    levels
        .iter()
        .filter_map(|&a| c.quantile(a).ok())
        .collect()
}

/// Weights for the whole horizon: one fixed vector, or one per lead.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightSchedule {
    Fixed(WeightVector),
    /// Index 0 applies to lead 1 (first target day).
    PerLead(Vec<WeightVector>),
}

impl WeightSchedule {
    fn at_lead(&self, lead: usize) -> Result<&WeightVector> {
        match self {
            WeightSchedule::Fixed(w) => Ok(w),
            WeightSchedule::PerLead(v) => v.get(lead - 1).ok_or(Error::LeadOutOfRange {
                lead,
                horizon: v.len(),
            }),
        }
    }
}

/// Builds the stacked (mixture) forecast for one series from the models'
/// current deliveries.
///
/// Every positively weighted model must supply a forecast for every target
/// date covered by the current deliveries; leads for a per-lead schedule
/// count from the earliest target date.
pub fn stacked_forecast(
    deliveries: &[ForecastDelivery],
    weights: &WeightSchedule,
    targets: &[f64],
    key: &SeriesKey,
) -> Result<Vec<QuantileForecast>> {
    // Target dates: union over weighted models' current deliveries.
    let mut dates: Vec<NaiveDate> = Vec::new();
    let active: Vec<&ForecastDelivery> = deliveries
        .iter()
        .filter(|d| match weights {
            WeightSchedule::Fixed(w) => w.get(d.model()) > 0.0,
            WeightSchedule::PerLead(v) => v.iter().any(|w| w.get(d.model()) > 0.0),
        })
        .collect();
    for delivery in &active {
        for date in delivery.target_dates(key) {
            if !dates.contains(&date) {
                dates.push(date);
            }
        }
    }
    dates.sort();
    if dates.is_empty() {
        return Err(Error::NoMatchedDates);
    }
    let t0 = dates[0];

    let mut out = Vec::with_capacity(dates.len());
    for &date in &dates {
        let lead = (date - t0).num_days() as usize + 1;
        let day_weights = weights.at_lead(lead)?;
        let mut comps = Vec::new();
        let mut w = Vec::new();
        for (model, weight) in day_weights.iter() {
            if weight == 0.0 {
                continue;
            }
            let forecast = active
                .iter()
                .find(|d| d.model() == model)
                .and_then(|d| d.get(key, date))
                .ok_or_else(|| Error::MissingComponentForecast {
                    model: model.to_string(),
                    date,
                })?;
            comps.push(ComponentDistribution::from_forecast(forecast));
            w.push(weight);
        }
        // Renormalize in case zero-weight models were dropped above.
        let total: f64 = w.iter().sum();
        for wi in &mut w {
            *wi /= total;
        }
        out.push(mixture_quantiles(&comps, &w, targets, key.clone(), date)?);
    }
    Ok(out)
}
