//! CSV ingestion and serialization.
//!
//! Forecast files use the long format
//! `model,delivery_date,region,value_type,target_date,quantile,value`;
//! observation files use `region,value_type,date,value`. Dates are
//! ISO-8601, numbers use a decimal point, and emitted floats round-trip
//! exactly (shortest representation).

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::model::{
    ForecastDelivery, ModelId, ObservationSeries, QuantileForecast, SeriesKey, LEVEL_EPS,
};

pub const FORECAST_HEADER: [&str; 7] = [
    "model",
    "delivery_date",
    "region",
    "value_type",
    "target_date",
    "quantile",
    "value",
];

pub const OBSERVATION_HEADER: [&str; 4] = ["region", "value_type", "date", "value"];

/// Non-fatal issues found while parsing; the data was accepted after repair.
#[derive(Debug, Clone, PartialEq)]
pub enum ParseWarning {
    /// Reported quantile values decreased with level and were sorted.
    NonMonotoneRepaired {
        model: String,
        delivery_date: NaiveDate,
        key: SeriesKey,
        target_date: NaiveDate,
    },
    /// A row duplicated an earlier one with the identical value.
    DuplicateRowIgnored { line: u64 },
}

impl fmt::Display for ParseWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseWarning::NonMonotoneRepaired {
                model,
                delivery_date,
                key,
                target_date,
            } => write!(
                f,
                "non-monotone quantiles sorted for {model}@{delivery_date} {key} {target_date}"
            ),
            ParseWarning::DuplicateRowIgnored { line } => {
                write!(f, "line {line}: exact duplicate row ignored")
            }
        }
    }
}

fn check_header(record: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    let found: Vec<&str> = record
        .iter()
        .enumerate()
        .map(|(i, f)| if i == 0 { f.trim_start_matches('\u{feff}') } else { f }.trim())
        .collect();
    if found != expected {
        return Err(Error::CsvHeader {
            expected: expected.join(","),
            found: found.join(","),
        });
    }
    Ok(())
}

fn record_line(record: &csv::StringRecord) -> u64 {
    record.position().map(|p| p.line()).unwrap_or(0)
}

fn parse_date(s: &str, line: u64, what: &str) -> Result<NaiveDate> {
    NaiveDate::from_str(s.trim()).map_err(|_| Error::CsvRow {
        line,
        message: format!("{what} {s:?} is not an ISO-8601 date"),
    })
}

fn parse_number(s: &str, line: u64, what: &str) -> Result<f64> {
    let v: f64 = s.trim().parse().map_err(|_| Error::CsvRow {
        line,
        message: format!("{what} {s:?} is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::CsvRow {
            line,
            message: format!("{what} {s:?} is not finite"),
        });
    }
    Ok(v)
}

fn field<'a>(record: &'a csv::StringRecord, idx: usize, line: u64) -> Result<&'a str> {
    record.get(idx).ok_or(Error::CsvRow {
        line,
        message: format!("missing column {}", idx + 1),
    })
}

/// Parses a forecast CSV into deliveries grouped by (model, delivery date).
///
/// Rows may arrive in any order. Quantiles are sorted per forecast;
/// non-monotone values are sorted ascending and reported as warnings, and
/// exact duplicate rows are dropped with a warning. Conflicting duplicates
/// (same slot, different value) are errors.
pub fn parse_forecast_csv(bytes: &[u8]) -> Result<(Vec<ForecastDelivery>, Vec<ParseWarning>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(bytes);
    check_header(reader.headers()?, &FORECAST_HEADER)?;

    type Slot = (SeriesKey, NaiveDate);
    // (level, value, first line seen) per quantile row, keyed for grouping.
    let mut groups: BTreeMap<(String, NaiveDate), BTreeMap<Slot, Vec<(f64, f64, u64)>>> =
        BTreeMap::new();
    let mut warnings = Vec::new();

    for record in reader.records() {
        let record = record?;
        let line = record_line(&record);
        if record.len() != FORECAST_HEADER.len() {
            return Err(Error::CsvRow {
                line,
                message: format!(
                    "expected {} fields, found {}",
                    FORECAST_HEADER.len(),
                    record.len()
                ),
            });
        }
        let model = field(&record, 0, line)?.trim().to_string();
        if model.is_empty() {
            return Err(Error::CsvRow {
                line,
                message: "model identifier is empty".into(),
            });
        }
        let delivery_date = parse_date(field(&record, 1, line)?, line, "delivery_date")?;
        let key = SeriesKey::new(
            field(&record, 2, line)?.trim(),
            field(&record, 3, line)?.trim(),
        );
        let target_date = parse_date(field(&record, 4, line)?, line, "target_date")?;
        let level = parse_number(field(&record, 5, line)?, line, "quantile")?;
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::CsvRow {
                line,
                message: format!("quantile {level} outside the open interval (0, 1)"),
            });
        }
        let value = parse_number(field(&record, 6, line)?, line, "value")?;

        let context = format!("{key} {target_date} quantile {level}");
        let rows = groups
            .entry((model, delivery_date))
            .or_default()
            .entry((key, target_date))
            .or_default();
        if let Some(prev) = rows.iter().find(|(l, _, _)| (l - level).abs() <= LEVEL_EPS) {
            if prev.1 == value {
                warnings.push(ParseWarning::DuplicateRowIgnored { line });
            } else {
                return Err(Error::ConflictingDuplicateRow {
                    line,
                    context,
                    first: prev.1,
                    second: value,
                });
            }
        } else {
            rows.push((level, value, line));
        }
    }

    let mut deliveries = Vec::new();
    for ((model, delivery_date), slots) in groups {
        let model = ModelId::new(model)?;
        let mut forecasts = Vec::new();
        for ((key, target_date), rows) in slots {
            let (forecast, repaired) = QuantileForecast::new_repairing(
                key.clone(),
                target_date,
                rows.iter().map(|&(l, v, _)| (l, v)),
            )?;
            if repaired {
                warnings.push(ParseWarning::NonMonotoneRepaired {
                    model: model.to_string(),
                    delivery_date,
                    key,
                    target_date,
                });
            }
            forecasts.push(forecast);
        }
        deliveries.push(ForecastDelivery::new(model, delivery_date, forecasts)?);
    }
    Ok((deliveries, warnings))
}

/// Parses an observation CSV into one series per (region, value type).
pub fn parse_observation_csv(bytes: &[u8]) -> Result<Vec<ObservationSeries>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(bytes);
    check_header(reader.headers()?, &OBSERVATION_HEADER)?;

    let mut groups: BTreeMap<SeriesKey, BTreeMap<NaiveDate, f64>> = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        let line = record_line(&record);
        if record.len() != OBSERVATION_HEADER.len() {
            return Err(Error::CsvRow {
                line,
                message: format!(
                    "expected {} fields, found {}",
                    OBSERVATION_HEADER.len(),
                    record.len()
                ),
            });
        }
        let key = SeriesKey::new(
            field(&record, 0, line)?.trim(),
            field(&record, 1, line)?.trim(),
        );
        let date = parse_date(field(&record, 2, line)?, line, "date")?;
        let value = parse_number(field(&record, 3, line)?, line, "value")?;
        match groups.entry(key.clone()).or_default().entry(date) {
            std::collections::btree_map::Entry::Vacant(e) => {
                e.insert(value);
            }
            std::collections::btree_map::Entry::Occupied(e) => {
                if *e.get() != value {
                    return Err(Error::ConflictingDuplicateRow {
                        line,
                        context: format!("{key} {date}"),
                        first: *e.get(),
                        second: value,
                    });
                }
            }
        }
    }

    groups
        .into_iter()
        .map(|(key, points)| ObservationSeries::new(key, points))
        .collect()
}

fn write_forecast_rows(
    writer: &mut csv::Writer<Vec<u8>>,
    model: &str,
    delivery_date: NaiveDate,
    forecast: &QuantileForecast,
) -> Result<()> {
    for (level, value) in forecast.points() {
        writer.write_record([
            model,
            &delivery_date.to_string(),
            &forecast.key().region,
            &forecast.key().value_type,
            &forecast.target_date().to_string(),
            &level.to_string(),
            &value.to_string(),
        ])?;
    }
    Ok(())
}

/// Serializes deliveries back to the forecast CSV schema in a deterministic
/// order: (model, delivery date, series, target date, quantile).
pub fn emit_forecast_csv(deliveries: &[ForecastDelivery]) -> Result<Vec<u8>> {
    let mut sorted: Vec<&ForecastDelivery> = deliveries.iter().collect();
    sorted.sort_by_key(|d| (d.model().clone(), d.delivery_date()));
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(FORECAST_HEADER)?;
    for delivery in sorted {
        for forecast in delivery.iter() {
            write_forecast_rows(
                &mut writer,
                delivery.model().as_str(),
                delivery.delivery_date(),
                forecast,
            )?;
        }
    }
    Ok(writer.into_inner().expect("in-memory flush"))
}

/// Serializes combined forecasts with the method name in the model column.
///
/// The schema matches the input forecast format, so combined output can be
/// re-read with [`parse_forecast_csv`] (round-trip to equal values).
pub fn emit_combined_csv(
    forecasts: &[QuantileForecast],
    method: &str,
    delivery_date: NaiveDate,
) -> Result<Vec<u8>> {
    let mut sorted: Vec<&QuantileForecast> = forecasts.iter().collect();
    sorted.sort_by(|a, b| (a.key(), a.target_date()).cmp(&(b.key(), b.target_date())));
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(FORECAST_HEADER)?;
    for forecast in sorted {
        write_forecast_rows(&mut writer, method, delivery_date, forecast)?;
    }
    Ok(writer.into_inner().expect("in-memory flush"))
}

/// Serializes observation series in the observation CSV schema.
pub fn emit_observation_csv(series: &[ObservationSeries]) -> Result<Vec<u8>> {
    let mut sorted: Vec<&ObservationSeries> = series.iter().collect();
    sorted.sort_by(|a, b| a.key().cmp(b.key()));
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(OBSERVATION_HEADER)?;
    for s in sorted {
        for (date, value) in s.iter() {
            writer.write_record([
                s.key().region.as_str(),
                s.key().value_type.as_str(),
                &date.to_string(),
                &value.to_string(),
            ])?;
        }
    }
    Ok(writer.into_inner().expect("in-memory flush"))
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "model,delivery_date,region,value_type,target_date,quantile,value\n";

    #[test]
    fn empty_body_parses_to_empty_set() {
        let (deliveries, warnings) = parse_forecast_csv(HEADER.as_bytes()).unwrap();
        assert!(deliveries.is_empty());
        assert!(warnings.is_empty());

        let obs = parse_observation_csv(b"region,value_type,date,value\n").unwrap();
        assert!(obs.is_empty());
    }

    #[test]
    fn groups_rows_into_one_delivery() {
        let csv = format!(
            "{HEADER}\
             m1,2020-05-01,England,hospital_inc,2020-05-02,0.25,5\n\
             m1,2020-05-01,England,hospital_inc,2020-05-02,0.5,7\n\
             m1,2020-05-01,England,hospital_inc,2020-05-02,0.75,9\n"
        );
        let (deliveries, warnings) = parse_forecast_csv(csv.as_bytes()).unwrap();
        assert_eq!(deliveries.len(), 1);
        assert!(warnings.is_empty());
        let d = &deliveries[0];
        assert_eq!(d.model().as_str(), "m1");
        let f = d
            .get(
                &SeriesKey::new("England", "hospital_inc"),
                NaiveDate::from_ymd_opt(2020, 5, 2).unwrap(),
            )
            .unwrap();
        assert_eq!(f.levels(), &[0.25, 0.5, 0.75]);
        assert_eq!(f.values(), &[5.0, 7.0, 9.0]);
    }

    #[test]
    fn repairs_nonmonotone_rows_with_warning() {
        let csv = format!(
            "{HEADER}\
             m1,2020-05-01,England,hospital_inc,2020-05-02,0.25,9\n\
             m1,2020-05-01,England,hospital_inc,2020-05-02,0.5,7\n\
             m1,2020-05-01,England,hospital_inc,2020-05-02,0.75,5\n"
        );
        let (deliveries, warnings) = parse_forecast_csv(csv.as_bytes()).unwrap();
        let f = deliveries[0].iter().next().unwrap();
        assert_eq!(f.values(), &[5.0, 7.0, 9.0]);
        assert_eq!(warnings.len(), 1);
        assert!(matches!(
            warnings[0],
            ParseWarning::NonMonotoneRepaired { .. }
        ));
    }

    #[test]
    fn conflicting_duplicate_is_an_error_with_line() {
        let csv = format!(
            "{HEADER}\
             m1,2020-05-01,England,hospital_inc,2020-05-02,0.5,7\n\
             m1,2020-05-01,England,hospital_inc,2020-05-02,0.5,8\n"
        );
        let err = parse_forecast_csv(csv.as_bytes()).unwrap_err();
        match err {
            Error::ConflictingDuplicateRow { line, first, second, .. } => {
                assert_eq!(line, 3);
                assert_eq!((first, second), (7.0, 8.0));
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn exact_duplicate_is_dropped_with_warning() {
        let csv = format!(
            "{HEADER}\
             m1,2020-05-01,England,hospital_inc,2020-05-02,0.5,7\n\
             m1,2020-05-01,England,hospital_inc,2020-05-02,0.5,7\n"
        );
        let (deliveries, warnings) = parse_forecast_csv(csv.as_bytes()).unwrap();
        assert_eq!(deliveries[0].iter().next().unwrap().len(), 1);
        assert_eq!(warnings, vec![ParseWarning::DuplicateRowIgnored { line: 3 }]);
    }

    #[test]
    fn malformed_rows_report_line_numbers() {
        let bad_date = format!("{HEADER}m1,not-a-date,England,hospital_inc,2020-05-02,0.5,7\n");
        match parse_forecast_csv(bad_date.as_bytes()).unwrap_err() {
            Error::CsvRow { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error: {other}"),
        }

        let bad_level = format!("{HEADER}m1,2020-05-01,England,hospital_inc,2020-05-02,1.5,7\n");
        assert!(matches!(
            parse_forecast_csv(bad_level.as_bytes()),
            Err(Error::CsvRow { line: 2, .. })
        ));
    }

    #[test]
    fn rejects_wrong_header() {
        let err = parse_forecast_csv(b"model,date,value\nx,y,z\n").unwrap_err();
        assert!(matches!(err, Error::CsvHeader { .. }));
    }

    #[test]
    fn observation_duplicates() {
        let same = "region,value_type,date,value\n\
                    England,hospital_inc,2020-05-01,10\n\
                    England,hospital_inc,2020-05-01,10\n";
        let series = parse_observation_csv(same.as_bytes()).unwrap();
        assert_eq!(series.len(), 1);
        assert_eq!(series[0].len(), 1);

        let conflict = "region,value_type,date,value\n\
                        England,hospital_inc,2020-05-01,10\n\
                        England,hospital_inc,2020-05-01,11\n";
        let err = parse_observation_csv(conflict.as_bytes()).unwrap_err();
        match err {
            Error::ConflictingDuplicateRow { context, .. } => {
                assert!(context.contains("England/hospital_inc"));
                assert!(context.contains("2020-05-01"));
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn forecast_round_trip_is_identity() {
        let csv = format!(
            "{HEADER}\
             m2,2020-05-01,Wales,icu_prev,2020-05-02,0.5,3.25\n\
             m1,2020-05-01,England,hospital_inc,2020-05-02,0.25,5.0000001\n\
             m1,2020-05-01,England,hospital_inc,2020-05-03,0.25,6\n\
             m1,2020-05-01,England,hospital_inc,2020-05-02,0.75,9.75\n"
        );
        let (first, _) = parse_forecast_csv(csv.as_bytes()).unwrap();
        let emitted = emit_forecast_csv(&first).unwrap();
        let (second, warnings) = parse_forecast_csv(&emitted).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(first, second);
        // A second emit is byte-identical (deterministic ordering).
        assert_eq!(emitted, emit_forecast_csv(&second).unwrap());
    }

    #[test]
    fn combined_csv_uses_method_as_model() {
        let key = SeriesKey::new("England", "hospital_inc");
        let f = QuantileForecast::new(
            key,
            NaiveDate::from_ymd_opt(2020, 5, 2).unwrap(),
            [(0.25, 5.0), (0.5, 7.0), (0.75, 9.0)],
        )
        .unwrap();
        let bytes = emit_combined_csv(
            std::slice::from_ref(&f),
            "stacked-ti",
            NaiveDate::from_ymd_opt(2020, 5, 1).unwrap(),
        )
        .unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.starts_with("model,delivery_date,region,value_type,target_date,quantile,value\n"));
        assert!(text.contains("stacked-ti,2020-05-01,England,hospital_inc,2020-05-02,0.25,5\n"));

        let (parsed, _) = parse_forecast_csv(&bytes).unwrap();
        assert_eq!(parsed.len(), 1);
        assert_eq!(parsed[0].model().as_str(), "stacked-ti");
        assert_eq!(parsed[0].iter().next().unwrap(), &f);

        // Empty sequence → header-only file.
        let empty = emit_combined_csv(&[], "stacked-ti", NaiveDate::from_ymd_opt(2020, 5, 1).unwrap())
            .unwrap();
        assert_eq!(
            String::from_utf8(empty).unwrap(),
            "model,delivery_date,region,value_type,target_date,quantile,value\n"
        );
    }

    #[test]
    fn observation_round_trip() {
        let csv = "region,value_type,date,value\n\
                   England,hospital_inc,2020-05-01,10.5\n\
                   England,hospital_inc,2020-05-02,11\n\
                   Wales,icu_prev,2020-05-01,3\n";
        let first = parse_observation_csv(csv.as_bytes()).unwrap();
        let emitted = emit_observation_csv(&first).unwrap();
        let second = parse_observation_csv(&emitted).unwrap();
        assert_eq!(first, second);
    }
}
