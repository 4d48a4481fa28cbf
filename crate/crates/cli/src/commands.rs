//! Subcommand implementations: score, combine, backtest, synth.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{anyhow, Context};
use chrono::NaiveDate;
use qfc_core::distfit::complete_quantiles;
use qfc_core::evaluation::{self, EvaluationMetrics, Leaderboard};
use qfc_core::io::{
    emit_combined_csv, emit_forecast_csv, emit_observation_csv, parse_forecast_csv,
    parse_observation_csv,
};
use qfc_core::model::{
    ForecastDelivery, ModelId, ObservationSeries, QuantileForecast, SeriesKey,
};
use qfc_core::scoring::{
    crps_from_quantiles, forecast_quantile_score_sum, interval_score, quantile_score, Interval,
};
use serde_json::json;

use crate::engine::{combine as engine_combine, series_seed, SeriesContext};
use crate::synthcfg;
use crate::{BacktestArgs, CombineArgs, Method, RunFlags, ScoreArgs, SynthArgs};

/// Reads and parses both input files, logging any repair warnings.
fn load_inputs(
    forecasts: &Path,
    observations: &Path,
) -> anyhow::Result<(Vec<ForecastDelivery>, Vec<ObservationSeries>)> {
    let forecast_bytes =
        fs::read(forecasts).with_context(|| format!("reading {}", forecasts.display()))?;
    let (deliveries, warnings) =
        parse_forecast_csv(&forecast_bytes).with_context(|| format!("{}", forecasts.display()))?;
    for warning in &warnings {
        log::warn!("{}: {warning}", forecasts.display());
    }
    let obs_bytes =
        fs::read(observations).with_context(|| format!("reading {}", observations.display()))?;
    let obs = parse_observation_csv(&obs_bytes)
        .with_context(|| format!("{}", observations.display()))?;
    Ok((deliveries, obs))
}

fn write_output(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    if path.as_os_str() == "-" {
        std::io::stdout().write_all(bytes)?;
        Ok(())
    } else {
        fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
    }
}

fn obs_for<'a>(series: &'a [ObservationSeries], key: &SeriesKey) -> Option<&'a ObservationSeries> {
    series.iter().find(|s| s.key() == key)
}

/// The interval-score levels of the evaluation aggregate: median, 50% and
/// 90% central intervals.
const SCORE_LEVELS: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];

/// Mean of the three interval-score terms for one forecast/outcome pair.
fn interval_score_terms(forecast: &QuantileForecast, w: f64) -> anyhow::Result<f64> {
    let completed = complete_quantiles(forecast, &SCORE_LEVELS)?;
    let at = |level: f64| {
        completed
            .value_at(level)
            .ok_or_else(|| anyhow!("missing quantile level {level}"))
    };
    let median_term = quantile_score(at(0.5)?, 0.5, w)?.value();
    let is50 = interval_score(Interval::new(at(0.25)?, at(0.75)?, 0.5)?, w).value();
    let is90 = interval_score(Interval::new(at(0.05)?, at(0.95)?, 0.1)?, w).value();
    Ok((median_term + is50 + is90) / 3.0)
}

pub fn score(args: &ScoreArgs) -> anyhow::Result<()> {
    let (deliveries, obs) = load_inputs(&args.forecasts, &args.observations)?;

    let mut sorted: Vec<&ForecastDelivery> = deliveries.iter().collect();
    sorted.sort_by_key(|d| (d.model().clone(), d.delivery_date()));

    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record([
        "model",
        "region",
        "value_type",
        "delivery_date",
        "target_date",
        "quantile_score_sum",
        "interval_score",
        "crps",
    ])?;
    for delivery in sorted {
        for forecast in delivery.iter() {
            let Some(series) = obs_for(&obs, forecast.key()) else {
                continue;
            };
            let Some(w) = series.value_at(forecast.target_date()) else {
                continue;
            };
            let qs = forecast_quantile_score_sum(forecast, w).value();
            let is = interval_score_terms(forecast, w)?;
            let crps = crps_from_quantiles(forecast, w).value();
            writer.write_record([
                delivery.model().as_str(),
                &forecast.key().region,
                &forecast.key().value_type,
                &delivery.delivery_date().to_string(),
                &forecast.target_date().to_string(),
                &qs.to_string(),
                &is.to_string(),
                &crps.to_string(),
            ])?;
        }
    }
    write_output(&args.out, &writer.into_inner()?)
}

/// Sorted series keys covered by any delivery.
fn all_keys(deliveries: &[ForecastDelivery]) -> Vec<SeriesKey> {
    let mut keys: Vec<SeriesKey> = deliveries.iter().flat_map(|d| d.series_keys()).collect();
    keys.sort();
    keys.dedup();
    keys
}

fn context<'a>(
    deliveries: &'a [ForecastDelivery],
    obs: &'a ObservationSeries,
    key: &'a SeriesKey,
    t0: NaiveDate,
    flags: &'a RunFlags,
) -> SeriesContext<'a> {
    SeriesContext {
        deliveries,
        obs,
        key,
        t0,
        train_window: flags.train_window,
        horizon: flags.horizon,
        lambda: flags.lambda,
        levels: &flags.quantiles,
        include_incomplete: flags.include_incomplete,
        seed: series_seed(flags.seed, key, t0),
    }
}

pub fn combine(args: &CombineArgs) -> anyhow::Result<()> {
    let (deliveries, obs) = load_inputs(&args.forecasts, &args.observations)?;
    let t0 = deliveries
        .iter()
        .map(|d| d.delivery_date())
        .max()
        .ok_or_else(|| anyhow!("no deliveries in {}", args.forecasts.display()))?;

    let mut combined = Vec::new();
    let mut params = serde_json::Map::new();
    for key in all_keys(&deliveries) {
        let series = obs_for(&obs, &key)
            .ok_or_else(|| anyhow!("no observations for series {key}"))?;
        let ctx = context(&deliveries, series, &key, t0, &args.flags);
        let (forecasts, fitted) = engine_combine(&ctx, args.method)
            .with_context(|| format!("combining series {key} with {}", args.method))?;
        combined.extend(forecasts);
        params.insert(key.to_string(), fitted);
    }

    let label = args.label.as_deref().unwrap_or(args.method.name());
    let csv = emit_combined_csv(&combined, label, t0)?;
    write_output(&args.out, &csv)?;

    if let Some(path) = &args.params {
        let sidecar = json!({
            "method": args.method.name(),
            "seed": args.flags.seed,
            "config": config_json(&args.flags),
            "parameters": params,
        });
        fs::write(path, serde_json::to_vec_pretty(&sidecar)?)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn config_json(flags: &RunFlags) -> serde_json::Value {
    json!({
        "train_window": flags.train_window,
        "horizon": flags.horizon,
        "lambda": flags.lambda,
        "quantiles": flags.quantiles,
        "include_incomplete": flags.include_incomplete,
    })
}

pub fn backtest(args: &BacktestArgs) -> anyhow::Result<()> {
    if args.methods.is_empty() {
        return Err(anyhow!("at least one method is required"));
    }
    if args.every == 0 {
        return Err(anyhow!("--every must be at least 1"));
    }
    let mut methods = args.methods.clone();
    methods.sort();
    methods.dedup();

    let (deliveries, obs) = load_inputs(&args.forecasts, &args.observations)?;
    if deliveries.is_empty() {
        return Err(anyhow!("no deliveries in {}", args.forecasts.display()));
    }
    fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;

    // Forecast origins: every `every`-th distinct delivery date.
    let mut origins: Vec<NaiveDate> = deliveries.iter().map(|d| d.delivery_date()).collect();
    origins.sort();
    origins.dedup();
    let origins: Vec<NaiveDate> = origins.into_iter().step_by(args.every).collect();

    let mut combined_out: Vec<ForecastDelivery> = Vec::new();
    let mut window_rows: Vec<(SeriesKey, Method, NaiveDate, EvaluationMetrics)> = Vec::new();
    let mut pooled: BTreeMap<(SeriesKey, Method), Vec<QuantileForecast>> = BTreeMap::new();
    let mut evaluated_any = false;

    for key in all_keys(&deliveries) {
        let Some(series) = obs_for(&obs, &key) else {
            log::warn!("no observations for series {key}, skipping");
            continue;
        };
        for &t0 in &origins {
            let ctx = context(&deliveries, series, &key, t0, &args.flags);
            for &method in &methods {
                let (forecasts, _) = match engine_combine(&ctx, method) {
                    Ok(result) => result,
                    Err(err) => {
                        log::info!("{key} @ {t0} {method}: {err}");
                        continue;
                    }
                };
                combined_out.push(ForecastDelivery::new(
                    ModelId::new(method.name())?,
                    t0,
                    forecasts.clone(),
                )?);

                // Evaluate only targets with observations; a window with
                // none (the end of the series) still contributes forecasts.
                let matched: Vec<QuantileForecast> = forecasts
                    .into_iter()
                    .filter(|f| series.value_at(f.target_date()).is_some())
                    .collect();
                if matched.is_empty() {
                    continue;
                }
                let metrics = evaluate_one(method, &matched, series)?;
                window_rows.push((key.clone(), method, t0, metrics));
                pooled
                    .entry((key.clone(), method))
                    .or_default()
                    .extend(matched);
                evaluated_any = true;
            }
        }
    }
    if !evaluated_any {
        return Err(anyhow!(
            "no evaluable delivery dates (every fit failed or no observations overlap)"
        ));
    }

    write_output(
        &args.out_dir.join("combined.csv"),
        &emit_forecast_csv(&combined_out)?,
    )?;
    write_metrics_csv(
        &args.out_dir.join("window_metrics.csv"),
        true,
        window_rows
            .iter()
            .map(|(key, method, t0, m)| (key, method.name(), Some(*t0), m)),
    )?;

    // Pooled per-series metrics, leaderboards, and per-value-type means.
    let mut series_rows: Vec<(SeriesKey, Method, EvaluationMetrics)> = Vec::new();
    let mut per_series: BTreeMap<SeriesKey, BTreeMap<String, EvaluationMetrics>> = BTreeMap::new();
    for ((key, method), bucket) in &pooled {
        let series = obs_for(&obs, key).expect("pooled keys have observations");
        let metrics = evaluate_one(*method, bucket, series)?;
        series_rows.push((key.clone(), *method, metrics.clone()));
        per_series
            .entry(key.clone())
            .or_default()
            .insert(method.name().to_string(), metrics);
    }
    write_metrics_csv(
        &args.out_dir.join("series_metrics.csv"),
        false,
        series_rows
            .iter()
            .map(|(key, method, m)| (key, method.name(), None, m)),
    )?;

    let mut boards = Vec::new();
    for (key, results) in &per_series {
        let board = Leaderboard::new(key.clone(), results.clone())?;
        boards.push(json!({
            "key": key,
            "best": evaluation::select_best(&board),
            "entries": board.entries(),
        }));
    }
    write_output(
        &args.out_dir.join("leaderboards.json"),
        &serde_json::to_vec_pretty(&boards)?,
    )?;

    write_aggregate_csv(&args.out_dir.join("aggregate.csv"), &series_rows)?;
    Ok(())
}

/// Metrics for one method's forecasts against the observations.
fn evaluate_one(
    method: Method,
    forecasts: &[QuantileForecast],
    series: &ObservationSeries,
) -> anyhow::Result<EvaluationMetrics> {
    let map: BTreeMap<String, Vec<QuantileForecast>> =
        [(method.name().to_string(), forecasts.to_vec())].into();
    let mut result = evaluation::evaluate(&map, series)?;
    result
        .remove(method.name())
        .ok_or_else(|| anyhow!("no metrics computed for {method}"))
}

fn write_metrics_csv<'a>(
    path: &Path,
    with_origin: bool,
    rows: impl Iterator<Item = (&'a SeriesKey, &'a str, Option<NaiveDate>, &'a EvaluationMetrics)>,
) -> anyhow::Result<()> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["region", "value_type", "method"];
    if with_origin {
        header.push("delivery_date");
    }
    header.extend([
        "sharpness",
        "bias",
        "calibration",
        "b_hat",
        "c_hat",
        "distance",
        "mean_interval_score",
    ]);
    writer.write_record(&header)?;
    for (key, method, origin, m) in rows {
        let mut record = vec![key.region.clone(), key.value_type.clone(), method.to_string()];
        if with_origin {
            record.push(origin.expect("origin column requested").to_string());
        }
        record.extend([
            m.sharpness.to_string(),
            m.bias.to_string(),
            m.calibration.to_string(),
            m.b_hat.to_string(),
            m.c_hat.to_string(),
            m.distance.to_string(),
            m.mean_interval_score.to_string(),
        ]);
        writer.write_record(&record)?;
    }
    write_output(path, &writer.into_inner()?)
}

/// Per-value-type means over regions, recomputable from series_metrics.csv.
fn write_aggregate_csv(
    path: &Path,
    series_rows: &[(SeriesKey, Method, EvaluationMetrics)],
) -> anyhow::Result<()> {
    let mut groups: BTreeMap<(String, Method), Vec<&EvaluationMetrics>> = BTreeMap::new();
    for (key, method, metrics) in series_rows {
        groups
            .entry((key.value_type.clone(), *method))
            .or_default()
            .push(metrics);
    }
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record([
        "value_type",
        "method",
        "mean_distance",
        "mean_interval_score",
    ])?;
    for ((value_type, method), group) in groups {
        let n = group.len() as f64;
        let distance = group.iter().map(|m| m.distance).sum::<f64>() / n;
        let interval = group.iter().map(|m| m.mean_interval_score).sum::<f64>() / n;
        writer.write_record([
            value_type.as_str(),
            method.name(),
            &distance.to_string(),
            &interval.to_string(),
        ])?;
    }
    write_output(path, &writer.into_inner()?)
}

pub fn synth(args: &SynthArgs) -> anyhow::Result<()> {
    let config = match &args.config {
        Some(path) => {
            let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_slice(&bytes)
                .with_context(|| format!("parsing scenario config {}", path.display()))?
        }
        None => synthcfg::demo_config(),
    };
    let (observations, deliveries) = synthcfg::generate(&config, args.seed)?;
    write_output(&args.out_forecasts, &emit_forecast_csv(&deliveries)?)?;
    write_output(
        &args.out_observations,
        &emit_observation_csv(&[observations])?,
    )?;
    Ok(())
}
