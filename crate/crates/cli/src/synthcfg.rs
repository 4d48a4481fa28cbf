//! JSON scenario configs for `qfc synth`, mapped onto the core generator.
//!
//! The config deliberately excludes the seed — that comes from `--seed` so
//! one scenario file can produce many reproducible replicates.

use chrono::NaiveDate;
use qfc_core::model::{ForecastDelivery, ObservationSeries, SeriesKey, DEFAULT_QUANTILE_LEVELS};
use qfc_core::synthetic::{self, ForecasterArchetype, TruthKind, TruthProcess};
use qfc_core::Result;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub region: String,
    pub value_type: String,
    /// First observation date.
    pub start: NaiveDate,
    pub days: usize,
    pub horizon: usize,
    #[serde(default = "default_grid")]
    pub quantiles: Vec<f64>,
    pub truth: TruthConfig,
    pub archetypes: Vec<ArchetypeConfig>,
}

fn default_grid() -> Vec<f64> {
    DEFAULT_QUANTILE_LEVELS.to_vec()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TruthConfig {
    LogisticWave {
        peak: f64,
        growth_rate: f64,
        midpoint: f64,
        width: f64,
        noise_sd: f64,
    },
    PiecewiseLinear {
        knots: Vec<(i64, f64)>,
        noise_sd: f64,
    },
    NoisyRandomWalk {
        start: f64,
        step_sd: f64,
    },
}

impl TruthConfig {
    fn to_kind(&self) -> TruthKind {
        match self.clone() {
            TruthConfig::LogisticWave {
                peak,
                growth_rate,
                midpoint,
                width,
                noise_sd,
            } => TruthKind::LogisticWave {
                peak,
                growth_rate,
                midpoint,
                width,
                noise_sd,
            },
            TruthConfig::PiecewiseLinear { knots, noise_sd } => {
                TruthKind::PiecewiseLinear { knots, noise_sd }
            }
            TruthConfig::NoisyRandomWalk { start, step_sd } => {
                TruthKind::NoisyRandomWalk { start, step_sd }
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchetypeConfig {
    pub name: String,
    #[serde(default)]
    pub bias: f64,
    /// Lead-1 predictive standard deviation in observable units.
    pub spread: f64,
    #[serde(default)]
    pub skew: f64,
    #[serde(default)]
    pub jump: Option<JumpConfig>,
    #[serde(default = "default_cadence")]
    pub cadence_days: usize,
    /// First delivery date for late starters.
    #[serde(default)]
    pub start: Option<NaiveDate>,
    /// Noise stream; defaults to the archetype's position in the list.
    /// Twin archetypes (same stream) share their draws on shared days.
    #[serde(default)]
    pub stream: Option<u64>,
}

fn default_cadence() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JumpConfig {
    pub date: NaiveDate,
    pub magnitude: f64,
}

impl ArchetypeConfig {
    fn to_archetype(&self, index: usize) -> ForecasterArchetype {
        ForecasterArchetype {
            name: self.name.clone(),
            bias: self.bias,
            spread: self.spread,
            skew: self.skew,
            jump: self.jump.as_ref().map(|j| (j.date, j.magnitude)),
            cadence_days: self.cadence_days,
            start: self.start,
            stream: self.stream.unwrap_or(index as u64),
        }
    }
}

/// Runs the core generator for one scenario.
pub fn generate(
    config: &SynthConfig,
    seed: u64,
) -> Result<(ObservationSeries, Vec<ForecastDelivery>)> {
    let truth = TruthProcess {
        kind: config.truth.to_kind(),
        seed,
    };
    let archetypes: Vec<ForecasterArchetype> = config
        .archetypes
        .iter()
        .enumerate()
        .map(|(i, a)| a.to_archetype(i))
        .collect();
    let key = SeriesKey::new(config.region.clone(), config.value_type.clone());
    synthetic::generate(
        &truth,
        &archetypes,
        config.days,
        config.horizon,
        &config.quantiles,
        &key,
        config.start,
    )
}

/// Built-in demo: one wave, four personalities — a steady calibrated
/// model, an under-predicting skewed one, one with a +300 structural jump
/// mid-series, and a late starter (the incomplete-window scenario).
pub fn demo_config() -> SynthConfig {
    let start = NaiveDate::from_ymd_opt(2020, 4, 1).expect("valid date");
    SynthConfig {
        region: "England".to_string(),
        value_type: "hospital_inc".to_string(),
        start,
        days: 120,
        horizon: 14,
        quantiles: default_grid(),
        truth: TruthConfig::LogisticWave {
            peak: 900.0,
            growth_rate: 0.07,
            midpoint: 60.0,
            width: 70.0,
            noise_sd: 8.0,
        },
        archetypes: vec![
            ArchetypeConfig {
                name: "steady".to_string(),
                bias: 0.0,
                spread: 30.0,
                skew: 0.0,
                jump: None,
                cadence_days: 1,
                start: None,
                stream: None,
            },
            ArchetypeConfig {
                name: "optimist".to_string(),
                bias: -60.0,
                spread: 45.0,
                skew: -1.5,
                jump: None,
                cadence_days: 1,
                start: None,
                stream: None,
            },
            ArchetypeConfig {
                name: "jumpy".to_string(),
                bias: 0.0,
                spread: 35.0,
                skew: 0.0,
                jump: Some(JumpConfig {
                    date: start + chrono::Duration::days(70),
                    magnitude: 300.0,
                }),
                cadence_days: 1,
                start: None,
                stream: None,
            },
            ArchetypeConfig {
                name: "latecomer".to_string(),
                bias: 0.0,
                spread: 32.0,
                skew: 0.0,
                jump: None,
                cadence_days: 1,
                start: Some(start + chrono::Duration::days(45)),
                stream: None,
            },
        ],
    }
}
