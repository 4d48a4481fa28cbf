//! Per-series fitting and prediction shared by `combine` and `backtest`.
//!
//! One [`SeriesContext`] captures everything a combination run needs for a
//! single (region, value type) at one forecast origin t0: the delivery
//! history up to t0, the observations, and the run parameters. Fitting only
//! ever reads observations dated before t0, so the same context is safe to
//! build from a full backtest data set without leaking the future.

use std::collections::BTreeMap;

use chrono::{Duration, NaiveDate};
use qfc_core::distfit::{complete_quantiles, ComponentDistribution};
use qfc_core::model::{
    build_training_window, ForecastDelivery, ModelId, ObservationSeries, QuantileForecast,
    SeriesKey, TrainingPair, TrainingWindow,
};
use qfc_core::pso::SwarmSettings;
use qfc_core::regression::{
    compute_sqra_shifts, fit_emos, fit_qra, predict_emos, predict_qra, predict_sqra,
    EmosCoefficients, EnsembleStats, QraCoefficients, ShiftAnchor, SqraShift,
};
use qfc_core::stacking::{
    equal_weights, optimize_mixture_weights, stacked_forecast, time_invariant_weights,
    time_varying_weights, MixtureScore, StackingConfig, WeightSchedule, WeightVector,
};
use qfc_core::{Error, Result};
use serde_json::{json, Value};

use crate::Method;

// Swarm budgets per fit, sized to the objective cost: the mixture-CRPS
// objective integrates numerically per evaluation, the regression
// objectives are closed-form sums.
const OPT_BUDGET: (usize, usize) = (20, 60);
const REGRESSION_BUDGET: (usize, usize) = (30, 120);

/// Everything one combination run needs for a single series at origin t0.
pub struct SeriesContext<'a> {
    pub deliveries: &'a [ForecastDelivery],
    pub obs: &'a ObservationSeries,
    pub key: &'a SeriesKey,
    pub t0: NaiveDate,
    pub train_window: usize,
    pub horizon: usize,
    pub lambda: f64,
    pub levels: &'a [f64],
    pub include_incomplete: bool,
    /// Per-series seed; the caller mixes the base seed with the key (and
    /// origin for backtests) but never the method, so methods that should
    /// coincide (QRA/SQRA at zero shift) share their fits.
    pub seed: u64,
}

/// Admission and alignment work shared by every method.
struct Prepared {
    /// Admitted models with their (possibly trimmed) current deliveries,
    /// restricted to the common target dates.
    current: Vec<ForecastDelivery>,
    windows: BTreeMap<ModelId, TrainingWindow>,
    /// Target dates every admitted model covers, within [t0, t0 + H).
    dates: Vec<NaiveDate>,
}

impl Prepared {
    fn models(&self) -> Vec<ModelId> {
        self.windows.keys().cloned().collect()
    }

    fn forecasts_at(&self, date: NaiveDate, key: &SeriesKey) -> BTreeMap<ModelId, QuantileForecast> {
        self.current
            .iter()
            .filter_map(|d| d.get(key, date).map(|f| (d.model().clone(), f.clone())))
            .collect()
    }
}

fn prepare(ctx: &SeriesContext) -> Result<Prepared> {
    // Latest delivery per model, dated on or before t0 and covering the
    // series at all.
    let mut latest: BTreeMap<&ModelId, &ForecastDelivery> = BTreeMap::new();
    for delivery in ctx.deliveries {
        if delivery.delivery_date() > ctx.t0 {
            continue;
        }
        if delivery.target_dates(ctx.key).next().is_none() {
            continue;
        }
        let slot = latest.entry(delivery.model()).or_insert(delivery);
        if delivery.delivery_date() > slot.delivery_date() {
            *slot = delivery;
        }
    }

    let window_end = ctx.t0 + Duration::days(ctx.horizon as i64);
    let mut admitted: Vec<(&ModelId, &ForecastDelivery)> = Vec::new();
    let mut windows = BTreeMap::new();
    for (model, delivery) in latest {
        let covers_any = delivery
            .target_dates(ctx.key)
            .any(|d| d >= ctx.t0 && d < window_end);
        if !covers_any {
            log::info!("{model}: current delivery predates the forecast window, skipping");
            continue;
        }
        let window = build_training_window(
            ctx.deliveries,
            ctx.obs,
            model,
            ctx.key,
            ctx.t0,
            ctx.train_window,
        );
        if !ctx.include_incomplete && !(window.is_complete() && !window.is_empty()) {
            log::info!(
                "{model}: {}/{} training days, excluded (pass --include-incomplete to keep)",
                window.len(),
                window.nominal_len()
            );
            continue;
        }
        windows.insert(model.clone(), window);
        admitted.push((model, delivery));
    }
    if admitted.is_empty() {
        return Err(Error::NoCompleteWindows);
    }

    // Common target dates: the window every admitted model can serve.
    // Contiguous per-model coverage makes the intersection contiguous too.
    let mut dates: Vec<NaiveDate> = admitted[0]
        .1
        .target_dates(ctx.key)
        .filter(|&d| d >= ctx.t0 && d < window_end)
        .collect();
    for (_, delivery) in &admitted[1..] {
        let covered: Vec<NaiveDate> = delivery.target_dates(ctx.key).collect();
        dates.retain(|d| covered.contains(d));
    }
    if dates.is_empty() {
        return Err(Error::NoMatchedDates);
    }

    let mut current = Vec::with_capacity(admitted.len());
    for (model, delivery) in admitted {
        let forecasts: Vec<QuantileForecast> = dates
            .iter()
            .map(|&date| {
                delivery.get(ctx.key, date).cloned().ok_or_else(|| {
                    Error::MissingComponentForecast {
                        model: model.to_string(),
                        date,
                    }
                })
            })
            .collect::<Result<_>>()?;
        current.push(ForecastDelivery::new(
            model.clone(),
            delivery.delivery_date(),
            forecasts,
        )?);
    }

    Ok(Prepared {
        current,
        windows,
        dates,
    })
}

/// Fits `method` on the context and predicts the common forecast window.
///
/// Returns the combined forecasts (ascending target date) plus a JSON
/// description of the fitted parameters for the reproducibility sidecar.
pub fn combine(ctx: &SeriesContext, method: Method) -> Result<(Vec<QuantileForecast>, Value)> {
    let prepared = prepare(ctx)?;
    let config = StackingConfig {
        decay: ctx.lambda,
        window: ctx.train_window,
        horizon: ctx.horizon,
    };
    match method {
        Method::StackedEqual => {
            let weights = equal_weights(&prepared.models())?;
            let out = stacked(ctx, &prepared, &WeightSchedule::Fixed(weights.clone()))?;
            Ok((out, json!({ "weights": weight_map(&weights) })))
        }
        Method::StackedTi => {
            let weights = time_invariant_weights(&prepared.windows, &config)?;
            let out = stacked(ctx, &prepared, &WeightSchedule::Fixed(weights.clone()))?;
            Ok((out, json!({ "weights": weight_map(&weights) })))
        }
        Method::StackedTv => {
            let base = time_invariant_weights(&prepared.windows, &config)?;
            let per_lead: Vec<WeightVector> = (1..=ctx.horizon)
                .map(|lead| time_varying_weights(&base, &config, lead))
                .collect::<Result<_>>()?;
            let params = json!({
                "base_weights": weight_map(&base),
                "per_lead": per_lead.iter().map(weight_map).collect::<Vec<_>>(),
            });
            let out = stacked(ctx, &prepared, &WeightSchedule::PerLead(per_lead))?;
            Ok((out, params))
        }
        Method::StackedOpt => {
            let (components, outcomes) = training_components(&prepared)?;
            let settings = SwarmSettings::seeded(ctx.seed).budget(OPT_BUDGET.0, OPT_BUDGET.1);
            let weights =
                optimize_mixture_weights(&components, &outcomes, MixtureScore::Crps, &settings)?;
            let out = stacked(ctx, &prepared, &WeightSchedule::Fixed(weights.clone()))?;
            Ok((
                out,
                json!({ "weights": weight_map(&weights), "objective": "crps" }),
            ))
        }
        Method::Emos => {
            let settings = regression_settings(ctx.seed);
            let coeffs = fit_emos(&prepared.windows, &settings)?;
            let out = predict_emos_window(ctx, &prepared, &coeffs)?;
            Ok((out, emos_params(&coeffs)))
        }
        Method::Qra => {
            let coeffs = fit_qra_completed(ctx, &prepared)?;
            let mut out = Vec::with_capacity(prepared.dates.len());
            for &date in &prepared.dates {
                let forecasts = completed_forecasts(&prepared, date, ctx)?;
                out.push(predict_qra(&coeffs, &forecasts, ctx.levels)?);
            }
            Ok((out, qra_params(&coeffs)))
        }
        Method::Sqra => {
            let coeffs = fit_qra_completed(ctx, &prepared)?;
            let past: Vec<ForecastDelivery> = ctx
                .deliveries
                .iter()
                .filter(|d| d.delivery_date() <= ctx.t0)
                .cloned()
                .collect();
            let shifts = compute_sqra_shifts(&past, coeffs.models(), ctx.key, ctx.t0)?;
            let mut out = Vec::with_capacity(prepared.dates.len());
            for &date in &prepared.dates {
                let forecasts = completed_forecasts(&prepared, date, ctx)?;
                out.push(predict_sqra(&coeffs, &forecasts, &shifts, ctx.levels)?);
            }
            let mut params = qra_params(&coeffs);
            params["shifts"] = shift_map(&shifts);
            Ok((out, params))
        }
    }
}

fn regression_settings(seed: u64) -> SwarmSettings {
    SwarmSettings::seeded(seed).budget(REGRESSION_BUDGET.0, REGRESSION_BUDGET.1)
}

fn stacked(
    ctx: &SeriesContext,
    prepared: &Prepared,
    schedule: &WeightSchedule,
) -> Result<Vec<QuantileForecast>> {
    stacked_forecast(&prepared.current, schedule, ctx.levels, ctx.key)
}

/// Aligned per-model component distributions over the shared training
/// dates, for the score-optimized weights.
fn training_components(
    prepared: &Prepared,
) -> Result<(BTreeMap<ModelId, Vec<ComponentDistribution>>, Vec<f64>)> {
    let mut shared: Vec<NaiveDate> = match prepared.windows.values().next() {
        Some(window) => window.dates().collect(),
        None => return Err(Error::AllWindowsEmpty),
    };
    for window in prepared.windows.values().skip(1) {
        let dates: Vec<NaiveDate> = window.dates().collect();
        shared.retain(|d| dates.contains(d));
    }
    if shared.is_empty() {
        return Err(Error::NoMatchedDates);
    }

    let mut components = BTreeMap::new();
    let mut outcomes = Vec::with_capacity(shared.len());
    for (model, window) in &prepared.windows {
        let mut comps = Vec::with_capacity(shared.len());
        for pair in window.pairs() {
            if shared.contains(&pair.forecast.target_date()) {
                comps.push(ComponentDistribution::from_forecast(&pair.forecast));
                if components.is_empty() {
                    outcomes.push(pair.observed);
                }
            }
        }
        components.insert(model.clone(), comps);
    }
    Ok((components, outcomes))
}

/// Completes every window forecast to the requested levels before the QRA
/// fit, so mixed-grid inputs align (skew-normal completion under the hood).
fn fit_qra_completed(ctx: &SeriesContext, prepared: &Prepared) -> Result<QraCoefficients> {
    let mut windows = BTreeMap::new();
    for (model, window) in &prepared.windows {
        let pairs = window
            .pairs()
            .iter()
            .map(|p| {
                Ok(TrainingPair {
                    forecast: complete_quantiles(&p.forecast, ctx.levels)?,
                    observed: p.observed,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        windows.insert(model.clone(), TrainingWindow::new(window.nominal_len(), pairs));
    }
    fit_qra(&windows, ctx.levels, &regression_settings(ctx.seed))
}

fn completed_forecasts(
    prepared: &Prepared,
    date: NaiveDate,
    ctx: &SeriesContext,
) -> Result<BTreeMap<ModelId, QuantileForecast>> {
    prepared
        .forecasts_at(date, ctx.key)
        .into_iter()
        .map(|(model, f)| Ok((model, complete_quantiles(&f, ctx.levels)?)))
        .collect()
}

fn predict_emos_window(
    ctx: &SeriesContext,
    prepared: &Prepared,
    coeffs: &EmosCoefficients,
) -> Result<Vec<QuantileForecast>> {
    let mut out = Vec::with_capacity(prepared.dates.len());
    for &date in &prepared.dates {
        let forecasts = prepared.forecasts_at(date, ctx.key);
        let medians = coeffs
            .models()
            .iter()
            .map(|model| {
                let forecast = forecasts
                    .get(model)
                    .ok_or_else(|| Error::MissingComponentForecast {
                        model: model.to_string(),
                        date,
                    })?;
                let completed = complete_quantiles(forecast, &[0.5])?;
                let median = completed.median().ok_or(Error::MissingLevel { level: 0.5 })?;
                Ok((model.clone(), median))
            })
            .collect::<Result<BTreeMap<_, _>>>()?;
        let stats = EnsembleStats::from_medians(medians)?;
        out.push(predict_emos(
            coeffs,
            &stats,
            ctx.key.clone(),
            date,
            ctx.levels,
        )?);
    }
    Ok(out)
}

fn weight_map(weights: &WeightVector) -> BTreeMap<String, f64> {
    weights
        .iter()
        .map(|(model, w)| (model.to_string(), w))
        .collect()
}

fn emos_params(coeffs: &EmosCoefficients) -> Value {
    json!({
        "models": coeffs.models().iter().map(|m| m.to_string()).collect::<Vec<_>>(),
        "slopes": coeffs.slopes(),
        "c": coeffs.c(),
        "d": coeffs.d(),
        "variance_floor": coeffs.variance_floor(),
    })
}

fn qra_params(coeffs: &QraCoefficients) -> Value {
    json!({
        "models": coeffs.models().iter().map(|m| m.to_string()).collect::<Vec<_>>(),
        "slopes": coeffs.slopes(),
    })
}

fn shift_map(shifts: &SqraShift) -> Value {
    let map: BTreeMap<String, Value> = shifts
        .iter()
        .map(|(model, shift)| {
            let anchor = match shift.anchor() {
                ShiftAnchor::AtStart => json!("at-start"),
                ShiftAnchor::Fallback(date) => json!({ "fallback": date.to_string() }),
                ShiftAnchor::NoOverlap => json!("no-overlap"),
            };
            (
                model.to_string(),
                json!({ "delta": shift.delta(), "anchor": anchor }),
            )
        })
        .collect();
    json!(map)
}

/// Stable per-series seed: FNV-1a over the key and origin, mixed with the
/// user seed. Method-independent by design (see [`SeriesContext::seed`]).
pub fn series_seed(base: u64, key: &SeriesKey, t0: NaiveDate) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            hash = (hash ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    eat(key.region.as_bytes());
    eat(&[0]);
    eat(key.value_type.as_bytes());
    eat(&[0]);
    eat(t0.to_string().as_bytes());
    hash ^ base
}
