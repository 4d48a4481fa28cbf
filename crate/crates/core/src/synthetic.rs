//! Seeded synthetic ground truth and forecaster archetypes.
//!
//! The generator produces an observation series plus dated quantile
//! deliveries from parameterized "forecaster personalities" (bias, spread,
//! skew, structural jumps, cadence, late starts). Forecast quantiles are
//! built around the realized truth by inverting the same skew-normal noise
//! that perturbs the central draw, so an unbiased unit-spread archetype has
//! exactly nominal interval coverage — which is what makes the generator
//! usable as an oracle for the combiners and metrics.

use chrono::{Duration, NaiveDate};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::distfit::{skewnormal_quantile, SkewNormalParams};
use crate::error::{Error, Result};
use crate::gauss;
use crate::model::{ForecastDelivery, ModelId, ObservationSeries, QuantileForecast, SeriesKey};

fn invalid(message: impl Into<String>) -> Error {
    Error::InvalidSynthConfig {
        message: message.into(),
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Standard-normal draw, clipped away from the open-interval endpoints.
fn normal_draw(rng: &mut ChaCha8Rng) -> f64 {
    gauss::quantile(rng.random_range(1e-12..1.0))
}

/// Shape of the underlying epidemic curve.
#[derive(Debug, Clone, PartialEq)]
pub enum TruthKind {
    /// A single wave: rise and fall built from two logistic ramps.
    LogisticWave {
        peak: f64,
        growth_rate: f64,
        /// Day index of the wave center.
        midpoint: f64,
        /// Approximate plateau length in days.
        width: f64,
        noise_sd: f64,
    },
    /// Linear interpolation through (day, value) knots, constant outside.
    PiecewiseLinear {
        knots: Vec<(i64, f64)>,
        noise_sd: f64,
    },
    /// Random walk reflected at zero.
    NoisyRandomWalk { start: f64, step_sd: f64 },
}

/// Reproducible ground-truth process.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthProcess {
    pub kind: TruthKind,
    pub seed: u64,
}

impl TruthProcess {
    fn validate(&self) -> Result<()> {
        match &self.kind {
            TruthKind::LogisticWave {
                peak,
                growth_rate,
                midpoint,
                width,
                noise_sd,
            } => {
                if !(peak.is_finite() && *peak > 0.0)
                    || !(growth_rate.is_finite() && *growth_rate > 0.0)
                    || !midpoint.is_finite()
                    || !(width.is_finite() && *width > 0.0)
                    || !(noise_sd.is_finite() && *noise_sd >= 0.0)
                {
                    return Err(invalid("logistic wave needs peak, rate, width > 0 and noise sd ≥ 0"));
                }
            }
            TruthKind::PiecewiseLinear { knots, noise_sd } => {
                if knots.is_empty() {
                    return Err(invalid("piecewise-linear truth needs at least one knot"));
                }
                if knots.windows(2).any(|w| w[1].0 <= w[0].0) {
                    return Err(invalid("piecewise-linear knot days must strictly increase"));
                }
                if knots.iter().any(|&(_, v)| !v.is_finite() || v < 0.0) {
                    return Err(invalid("piecewise-linear knot values must be finite and ≥ 0"));
                }
                if !(noise_sd.is_finite() && *noise_sd >= 0.0) {
                    return Err(invalid("noise sd must be finite and ≥ 0"));
                }
            }
            TruthKind::NoisyRandomWalk { start, step_sd } => {
                if !(start.is_finite() && *start >= 0.0)
                    || !(step_sd.is_finite() && *step_sd >= 0.0)
                {
                    return Err(invalid("random walk needs start ≥ 0 and step sd ≥ 0"));
                }
            }
        }
        Ok(())
    }

    /// Realized truth for day offsets 0..len, truncated at zero.
    pub fn values(&self, len: usize) -> Result<Vec<f64>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut out = Vec::with_capacity(len);
        match &self.kind {
            TruthKind::LogisticWave {
                peak,
                growth_rate,
                midpoint,
                width,
                noise_sd,
            } => {
                for day in 0..len {
                    let t = day as f64;
                    let rise = logistic(growth_rate * (t - midpoint + width / 2.0));
                    let fall = logistic(growth_rate * (t - midpoint - width / 2.0));
                    let level = peak * (rise - fall);
                    out.push((level + noise_sd * normal_draw(&mut rng)).max(0.0));
                }
            }
            TruthKind::PiecewiseLinear { knots, noise_sd } => {
                for day in 0..len {
                    let t = day as i64;
                    let level = match knots.iter().position(|&(d, _)| d >= t) {
                        Some(0) => knots[0].1,
                        Some(i) => {
                            let (d0, v0) = knots[i - 1];
                            let (d1, v1) = knots[i];
                            let frac = (t - d0) as f64 / (d1 - d0) as f64;
                            v0 + frac * (v1 - v0)
                        }
                        None => knots.last().expect("non-empty").1,
                    };
                    out.push((level + noise_sd * normal_draw(&mut rng)).max(0.0));
                }
            }
            TruthKind::NoisyRandomWalk { start, step_sd } => {
                let mut level = *start;
                for _ in 0..len {
                    out.push(level);
                    level = (level + step_sd * normal_draw(&mut rng)).max(0.0);
                }
            }
        }
        Ok(out)
    }
}

/// A forecaster personality.
///
/// `spread` is the lead-1 predictive standard deviation in observable
/// units; uncertainty grows along the horizon as spread·√lead. Archetypes
/// sharing a `stream` draw identical noise on shared delivery days, which
/// is how twin scenarios (late starter vs. full history, jump vs. no jump)
/// are constructed.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecasterArchetype {
    pub name: String,
    pub bias: f64,
    pub spread: f64,
    pub skew: f64,
    /// Structural discontinuity: deliveries on/after the date are shifted
    /// by the magnitude.
    pub jump: Option<(NaiveDate, f64)>,
    pub cadence_days: usize,
    /// First date the forecaster reports (late starter when after the
    /// series start).
    pub start: Option<NaiveDate>,
    /// Noise stream id; defaults should be distinct per archetype.
    pub stream: u64,
}

impl ForecasterArchetype {
    /// Calibrated baseline: no bias, unit-ish spread, no skew, daily
    /// cadence from the series start.
    pub fn calibrated(name: &str, spread: f64, stream: u64) -> Self {
        ForecasterArchetype {
            name: name.to_string(),
            bias: 0.0,
            spread,
            skew: 0.0,
            jump: None,
            cadence_days: 1,
            start: None,
            stream,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.spread.is_finite() && self.spread > 0.0) {
            return Err(invalid(format!(
                "archetype {}: spread multiplier must be positive",
                self.name
            )));
        }
        if !self.bias.is_finite() || !self.skew.is_finite() {
            return Err(invalid(format!(
                "archetype {}: bias and skew must be finite",
                self.name
            )));
        }
        if self.cadence_days == 0 {
            return Err(invalid(format!(
                "archetype {}: cadence must be at least one day",
                self.name
            )));
        }
        if let Some((_, magnitude)) = self.jump {
            if !magnitude.is_finite() {
                return Err(invalid(format!(
                    "archetype {}: jump magnitude must be finite",
                    self.name
                )));
            }
        }
        Ok(())
    }
}

fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(invalid("quantile grid is empty"));
    }
    if grid.iter().any(|&a| !(a > 0.0 && a < 1.0)) {
        return Err(invalid("quantile grid levels must lie in (0, 1)"));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("quantile grid levels must strictly increase"));
    }
    Ok(())
}

/// Generates `days` of observations plus every archetype's deliveries.
///
/// Deliveries sit on each archetype's cadence grid anchored at the series
/// start; a delivery on day d covers target days d..d+horizon−1, using
/// truth values that extend past the observation window.
pub fn generate(
    truth: &TruthProcess,
    archetypes: &[ForecasterArchetype],
    days: usize,
    horizon: usize,
    grid: &[f64],
    key: &SeriesKey,
    start: NaiveDate,
) -> Result<(ObservationSeries, Vec<ForecastDelivery>)> {
    if days == 0 || horizon == 0 {
        return Err(invalid("days and horizon must be positive"));
    }
    validate_grid(grid)?;
    if archetypes.is_empty() {
        return Err(Error::EmptyModelList);
    }
    for (i, a) in archetypes.iter().enumerate() {
        a.validate()?;
        if archetypes[..i].iter().any(|b| b.name == a.name) {
            return Err(invalid(format!("duplicate archetype name {}", a.name)));
        }
    }

    let truth_values = truth.values(days + horizon)?;
    let observations = ObservationSeries::new(
        key.clone(),
        truth_values[..days]
            .iter()
            .enumerate()
            .map(|(i, &v)| (start + Duration::days(i as i64), v)),
    )?;

    let mut deliveries = Vec::new();
    for archetype in archetypes {
        let model = ModelId::new(&archetype.name)?;
        let delta = archetype.skew / (1.0 + archetype.skew * archetype.skew).sqrt();
        let standard = SkewNormalParams::new(0.0, 1.0, archetype.skew)?;
        let z_grid: Vec<f64> = grid
            .iter()
            .map(|&a| skewnormal_quantile(&standard, a))
            .collect::<Result<_>>()?;
        let first_day = archetype
            .start
            .map_or(0, |s| (s - start).num_days().max(0)) as usize;

        for day in (0..days).step_by(archetype.cadence_days) {
            if day < first_day {
                continue;
            }
            let delivery_date = start + Duration::days(day as i64);
            // One stream per (archetype stream id, delivery day), so twin
            // archetypes reproduce each other's draws day for day.
            let mut rng = ChaCha8Rng::seed_from_u64(truth.seed ^ archetype.stream.rotate_left(17));
            rng.set_stream(day as u64);
            let jump_delta = match archetype.jump {
                Some((jump_date, magnitude)) if delivery_date >= jump_date => magnitude,
                _ => 0.0,
            };

            let mut forecasts = Vec::with_capacity(horizon);
            for lead in 1..=horizon {
                let target_day = day + lead - 1;
                let target_date = start + Duration::days(target_day as i64);
                let sd = archetype.spread * (lead as f64).sqrt();
                // Skew-normal central draw via the convolution form, with
                // the same shape the grid quantiles use: the forecast then
                // covers the realized truth at exactly nominal rates.
                let z1 = normal_draw(&mut rng);
                let z2 = normal_draw(&mut rng);
                let x = delta * z1.abs() + (1.0 - delta * delta).sqrt() * z2;
                let center = truth_values[target_day] + archetype.bias - sd * x;
                // Jump applied after the quantile draw: a jumped delivery is
                // its twin's value plus the offset, bit for bit, wherever
                // the floor does not bind.
                let points: Vec<(f64, f64)> = grid
                    .iter()
                    .zip(&z_grid)
                    .map(|(&a, &z)| (a, (center + sd * z + jump_delta).max(0.0)))
                    .collect();
                forecasts.push(QuantileForecast::new(key.clone(), target_date, points)?);
            }
            deliveries.push(ForecastDelivery::new(model.clone(), delivery_date, forecasts)?);
        }
    }
    Ok((observations, deliveries))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation;
    use approx::assert_abs_diff_eq;

    fn start() -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, 4, 1).unwrap()
    }

    fn key() -> SeriesKey {
        SeriesKey::new("England", "hospital_inc")
    }

    fn wave(seed: u64) -> TruthProcess {
        TruthProcess {
            kind: TruthKind::LogisticWave {
                peak: 800.0,
                growth_rate: 0.08,
                midpoint: 120.0,
                width: 90.0,
                noise_sd: 6.0,
            },
            seed,
        }
    }

    /// Truth that stays far above zero, for tests whose assertions assume
    /// the count floor never binds (exact coverage, exact jump offsets).
    fn plateau(seed: u64) -> TruthProcess {
        TruthProcess {
            kind: TruthKind::PiecewiseLinear {
                knots: vec![(0, 500.0), (520, 900.0), (1100, 400.0)],
                noise_sd: 12.0,
            },
            seed,
        }
    }

    const GRID: [f64; 7] = crate::model::DEFAULT_QUANTILE_LEVELS;

    #[test]
    fn truth_processes_stay_nonnegative_and_reproduce() {
        let walk = TruthProcess {
            kind: TruthKind::NoisyRandomWalk {
                start: 5.0,
                step_sd: 20.0,
            },
            seed: 9,
        };
        let values = walk.values(500).unwrap();
        assert!(values.iter().all(|&v| v >= 0.0));
        assert!(values.iter().any(|&v| v == 0.0), "large steps should hit the floor");
        assert_eq!(values, walk.values(500).unwrap());
    }

    #[test]
    fn piecewise_linear_interpolates_knots() {
        let truth = TruthProcess {
            kind: TruthKind::PiecewiseLinear {
                knots: vec![(0, 100.0), (10, 200.0)],
                noise_sd: 0.0,
            },
            seed: 0,
        };
        let values = truth.values(20).unwrap();
        assert_abs_diff_eq!(values[0], 100.0);
        assert_abs_diff_eq!(values[5], 150.0);
        assert_abs_diff_eq!(values[10], 200.0);
        assert_abs_diff_eq!(values[15], 200.0);
    }

    #[test]
    fn config_validation() {
        let arch = ForecasterArchetype::calibrated("a", 10.0, 0);
        let bad_spread = ForecasterArchetype {
            spread: 0.0,
            ..arch.clone()
        };
        assert!(generate(&wave(1), &[bad_spread], 30, 3, &GRID, &key(), start()).is_err());
        let bad_cadence = ForecasterArchetype {
            cadence_days: 0,
            ..arch.clone()
        };
        assert!(generate(&wave(1), &[bad_cadence], 30, 3, &GRID, &key(), start()).is_err());
        assert!(generate(&wave(1), &[arch.clone()], 0, 3, &GRID, &key(), start()).is_err());
        assert!(generate(&wave(1), &[arch.clone()], 30, 3, &[0.5, 0.5], &key(), start()).is_err());
        assert!(generate(&wave(1), &[arch.clone()], 30, 3, &[], &key(), start()).is_err());
        assert!(generate(&wave(1), &[], 30, 3, &GRID, &key(), start()).is_err());
        let dup = vec![arch.clone(), arch];
        assert!(generate(&wave(1), &dup, 30, 3, &GRID, &key(), start()).is_err());
    }

    #[test]
    fn calibrated_archetype_has_nominal_coverage() {
        let arch = ForecasterArchetype::calibrated("cal", 25.0, 3);
        let (obs, deliveries) =
            generate(&plateau(11), &[arch], 1000, 1, &GRID, &key(), start()).unwrap();
        let forecasts: Vec<QuantileForecast> = deliveries
            .iter()
            .flat_map(|d| d.iter().cloned())
            .collect();
        assert_eq!(forecasts.len(), 1000);
        let coverage = evaluation::calibration(&forecasts, &obs).unwrap();
        assert!(
            (coverage - 0.75).abs() < 0.04,
            "75% interval covered {coverage}"
        );
        let bias = evaluation::bias(&forecasts, &obs).unwrap();
        assert!((bias - 0.5).abs() < 0.04, "median bias proportion {bias}");
    }

    #[test]
    fn skewed_archetype_keeps_coverage_and_monotone_quantiles() {
        let arch = ForecasterArchetype {
            skew: -3.0,
            ..ForecasterArchetype::calibrated("skewed", 30.0, 5)
        };
        let (obs, deliveries) =
            generate(&plateau(13), &[arch], 800, 1, &GRID, &key(), start()).unwrap();
        let forecasts: Vec<QuantileForecast> = deliveries
            .iter()
            .flat_map(|d| d.iter().cloned())
            .collect();
        let coverage = evaluation::calibration(&forecasts, &obs).unwrap();
        assert!(
            (coverage - 0.75).abs() < 0.05,
            "skew must not break nominal coverage; got {coverage}"
        );
        for f in &forecasts {
            assert!(f.values().windows(2).all(|w| w[1] >= w[0]));
        }
    }

    #[test]
    fn biased_archetype_overpredicts() {
        let arch = ForecasterArchetype {
            bias: 120.0,
            ..ForecasterArchetype::calibrated("high", 15.0, 7)
        };
        let (obs, deliveries) =
            generate(&wave(17), &[arch], 200, 1, &GRID, &key(), start()).unwrap();
        let forecasts: Vec<QuantileForecast> = deliveries
            .iter()
            .flat_map(|d| d.iter().cloned())
            .collect();
        let bias = evaluation::bias(&forecasts, &obs).unwrap();
        assert!(bias > 0.99, "bias proportion {bias}");
    }

    #[test]
    fn same_seed_reproduces_byte_identical_output() {
        let archetypes = vec![
            ForecasterArchetype::calibrated("a", 20.0, 0),
            ForecasterArchetype {
                bias: 40.0,
                cadence_days: 7,
                ..ForecasterArchetype::calibrated("b", 35.0, 1)
            },
        ];
        let one = generate(&wave(23), &archetypes, 120, 14, &GRID, &key(), start()).unwrap();
        let two = generate(&wave(23), &archetypes, 120, 14, &GRID, &key(), start()).unwrap();
        assert_eq!(one.0, two.0);
        assert_eq!(one.1, two.1);
        let csv_one = crate::io::emit_forecast_csv(&one.1).unwrap();
        let csv_two = crate::io::emit_forecast_csv(&two.1).unwrap();
        assert_eq!(csv_one, csv_two);
    }

    #[test]
    fn jump_twin_shares_prefix_and_shifts_suffix() {
        let jump_date = start() + Duration::days(60);
        let plain = ForecasterArchetype::calibrated("m", 18.0, 4);
        let jumpy = ForecasterArchetype {
            jump: Some((jump_date, 300.0)),
            ..plain.clone()
        };
        let (_, base) = generate(&plateau(29), &[plain], 100, 7, &GRID, &key(), start()).unwrap();
        let (_, jumped) = generate(&plateau(29), &[jumpy], 100, 7, &GRID, &key(), start()).unwrap();
        assert_eq!(base.len(), jumped.len());
        for (b, j) in base.iter().zip(&jumped) {
            assert_eq!(b.delivery_date(), j.delivery_date());
            if b.delivery_date() < jump_date {
                assert_eq!(b, j, "pre-jump deliveries must be unchanged");
            } else {
                for (fb, fj) in b.iter().zip(j.iter()) {
                    for (vb, vj) in fb.values().iter().zip(fj.values()) {
                        assert_eq!(*vj, vb + 300.0);
                    }
                }
            }
        }
    }

    #[test]
    fn late_starter_matches_twin_on_shared_days() {
        let full = ForecasterArchetype {
            cadence_days: 7,
            ..ForecasterArchetype::calibrated("full", 22.0, 6)
        };
        let late = ForecasterArchetype {
            name: "late".to_string(),
            start: Some(start() + Duration::days(40)),
            ..full.clone()
        };
        let (_, deliveries) =
            generate(&wave(31), &[full, late], 90, 5, &GRID, &key(), start()).unwrap();
        let full_d: Vec<&ForecastDelivery> = deliveries
            .iter()
            .filter(|d| d.model().as_str() == "full")
            .collect();
        let late_d: Vec<&ForecastDelivery> = deliveries
            .iter()
            .filter(|d| d.model().as_str() == "late")
            .collect();
        // Cadence grid is anchored at the series start: first late delivery
        // is the first multiple of 7 on/after day 40.
        assert_eq!(
            late_d[0].delivery_date(),
            start() + Duration::days(42)
        );
        assert!(late_d.len() < full_d.len());
        for late_delivery in &late_d {
            let twin = full_d
                .iter()
                .find(|d| d.delivery_date() == late_delivery.delivery_date())
                .expect("shared delivery day");
            for (a, b) in late_delivery.iter().zip(twin.iter()) {
                assert_eq!(a.values(), b.values(), "shared-stream twins must agree");
            }
        }
    }
}
