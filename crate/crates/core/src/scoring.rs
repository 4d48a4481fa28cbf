//! Proper scoring rules. All scores are negatively oriented: smaller is
//! better, and a perfect point forecast scores zero.
//!
//! The CRPS of a sample set is the standard E|Y−w| − ½E|Y−Y′| estimator;
//! the Gaussian closed form exists so EMOS fitting does not need sampling.

use crate::error::{Error, Result};
use crate::gauss;
use crate::model::{QuantileForecast, SampleSet};

/// Above this sample count the CRPS pair term switches from the exact
/// all-pairs sum to the O(m log m) sorted identity.
const CRPS_PAIRWISE_LIMIT: usize = 2000;

/// A score. Log scores at zero-density points are flagged infinite rather
/// than carried around as a float infinity, which keeps aggregation honest.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScoreValue {
    Finite(f64),
    Infinite,
}

impl ScoreValue {
    fn from_raw(v: f64) -> ScoreValue {
        if v.is_finite() {
            ScoreValue::Finite(v)
        } else {
            ScoreValue::Infinite
        }
    }

    /// The score as a float; infinite scores map to `f64::INFINITY`.
    pub fn value(&self) -> f64 {
        match self {
            ScoreValue::Finite(v) => *v,
            ScoreValue::Infinite => f64::INFINITY,
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, ScoreValue::Finite(_))
    }
}

/// A central (1−α)·100% prediction interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    lower: f64,
    upper: f64,
    alpha: f64,
}

impl Interval {
    pub fn new(lower: f64, upper: f64, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::LevelOutOfRange { level: alpha });
        }
        if !(lower.is_finite() && upper.is_finite()) || lower > upper {
            return Err(Error::NonFiniteValue {
                context: format!("interval [{lower}, {upper}]"),
            });
        }
        Ok(Interval {
            lower,
            upper,
            alpha,
        })
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// An evaluable predictive density p(x).
pub trait Density {
    fn pdf(&self, x: f64) -> f64;
}

impl<F: Fn(f64) -> f64> Density for F {
    fn pdf(&self, x: f64) -> f64 {
        self(x)
    }
}

/// Log score −log p(w). Zero density at the outcome flags the score
/// infinite.
pub fn log_score(density: &impl Density, w: f64) -> ScoreValue {
    let p = density.pdf(w);
    if p <= 0.0 || !p.is_finite() {
        ScoreValue::Infinite
    } else {
        ScoreValue::from_raw(-p.ln())
    }
}

/// Empirical CRPS of a sample set: mean |Y−w| minus half the mean absolute
/// pairwise difference (all ordered pairs).
pub fn crps_samples(samples: &SampleSet, w: f64) -> ScoreValue {
    let draws = samples.draws();
    let m = draws.len();
    let term1 = draws.iter().map(|y| (y - w).abs()).sum::<f64>() / m as f64;

    let pair_mean = if m <= CRPS_PAIRWISE_LIMIT {
        let mut sum = 0.0;
        for yi in draws {
            for yj in draws {
                sum += (yi - yj).abs();
            }
        }
        sum / (m * m) as f64
    } else {
        // Sorted identity: Σ_{i,j}|y_i−y_j| = 2·Σ_k (2k−m−1)·y_(k), k 1-based
        // ascending. Centering first avoids cancellation on large values.
        let mean = draws.iter().sum::<f64>() / m as f64;
        let mut sorted: Vec<f64> = draws.iter().map(|y| y - mean).collect();
        sorted.sort_by(f64::total_cmp);
        let sum: f64 = sorted
            .iter()
            .enumerate()
            .map(|(k, y)| (2.0 * (k as f64 + 1.0) - m as f64 - 1.0) * y)
            .sum();
        2.0 * sum / (m * m) as f64
    };

    ScoreValue::from_raw(term1 - 0.5 * pair_mean)
}

/// Closed-form CRPS of N(μ, σ²): σ·[z(2Φ(z)−1) + 2φ(z) − 1/√π] with
/// z = (w−μ)/σ.
pub fn crps_gaussian(mean: f64, sd: f64, w: f64) -> Result<ScoreValue> {
    if sd <= 0.0 || !sd.is_finite() {
        return Err(Error::NonPositiveSigma { sigma: sd });
    }
    let z = (w - mean) / sd;
    let inv_sqrt_pi = std::f64::consts::FRAC_1_PI.sqrt();
    let score = sd * (z * (2.0 * gauss::cdf(z) - 1.0) + 2.0 * gauss::pdf(z) - inv_sqrt_pi);
    Ok(ScoreValue::from_raw(score))
}

/// Pinball loss without level validation; callers guarantee α ∈ (0,1).
#[inline]
pub(crate) fn pinball(q: f64, alpha: f64, w: f64) -> f64 {
    let indicator = if w < q { 1.0 } else { 0.0 };
    2.0 * (indicator - alpha) * (q - w)
}

/// Quantile (pinball) score 2(𝟙{w<q} − α)(q − w).
pub fn quantile_score(q: f64, alpha: f64, w: f64) -> Result<ScoreValue> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::LevelOutOfRange { level: alpha });
    }
    Ok(ScoreValue::from_raw(pinball(q, alpha, w)))
}

/// Interval score: width plus 2/α times the overshoot on whichever side the
/// outcome escapes.
pub fn interval_score(interval: Interval, w: f64) -> ScoreValue {
    let Interval {
        lower,
        upper,
        alpha,
    } = interval;
    let mut score = upper - lower;
    if w < lower {
        score += 2.0 / alpha * (lower - w);
    } else if w > upper {
        score += 2.0 / alpha * (w - upper);
    }
    ScoreValue::from_raw(score)
}

/// Mean quantile score over the reported levels: a CRPS approximation that
/// upper-bounds the true CRPS on sparse grids and converges on dense ones.
pub fn crps_from_quantiles(forecast: &QuantileForecast, w: f64) -> ScoreValue {
    let n = forecast.len();
    debug_assert!(n > 0, "forecasts are non-empty by construction");
    let sum: f64 = forecast.points().map(|(a, q)| pinball(q, a, w)).sum();
    ScoreValue::from_raw(sum / n as f64)
}

/// Sum (not mean) of quantile scores over the reported levels; the per-day
/// model score the stacking weights are built from.
pub fn forecast_quantile_score_sum(forecast: &QuantileForecast, w: f64) -> ScoreValue {
    let sum: f64 = forecast.points().map(|(a, q)| pinball(q, a, w)).sum();
    ScoreValue::from_raw(sum)
}
