//! Continuous predictive distributions reconstructed from reported
//! quantiles, and quantile extraction from weighted mixtures.
//!
//! Two component representations exist: a fitted skew-normal (used to fill
//! in missing quantile levels) and a non-parametric piecewise-linear
//! quantile function with exponential tails (used whenever a forecast's raw
//! quantiles are enough). Mixtures combine components by CDF averaging and
//! are inverted by bisection.

use std::sync::LazyLock;

use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::gauss;
use crate::model::{QuantileForecast, SeriesKey, LEVEL_EPS};
use crate::pso::{minimize, SwarmSettings};

/// Bisection stopping tolerance on |F(x) − α|.
const CDF_TOL: f64 = 1e-8;

/// Pseudo-levels used to extend knot grids into the far tails.
const TAIL_LEVEL: f64 = 1e-9;

/// Parameters of a skew-normal distribution with density
/// (2/ω)·φ((x−ξ)/ω)·Φ(a·(x−ξ)/ω).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkewNormalParams {
    location: f64,
    scale: f64,
    shape: f64,
}

impl SkewNormalParams {
    pub fn new(location: f64, scale: f64, shape: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidScale { scale });
        }
        if !location.is_finite() || !shape.is_finite() {
            return Err(Error::NonFiniteValue {
                context: format!("skew-normal params ({location}, {scale}, {shape})"),
            });
        }
        Ok(SkewNormalParams {
            location,
            scale,
            shape,
        })
    }

    pub fn location(&self) -> f64 {
        self.location
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn shape(&self) -> f64 {
        self.shape
    }
}

/// Gauss–Legendre nodes and weights on [−1, 1], computed once by Newton
/// iteration on the Legendre recurrence.
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Chebyshev-based initial guess for the i-th root.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        loop {
            // Legendre P_n(x) and derivative by upward recurrence.
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let k = k as f64;
                let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (mut p0, mut p1) = (1.0, x);
        for k in 2..=n {
            let k = k as f64;
            let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
            p0 = p1;
            p1 = p2;
        }
        let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

static GL48: LazyLock<(Vec<f64>, Vec<f64>)> = LazyLock::new(|| gauss_legendre(48));

/// Owen's T function T(h, a) = (1/2π)·∫₀^a exp(−h²(1+t²)/2)/(1+t²) dt.
///
/// Evaluated by Gauss–Legendre quadrature after reducing |a| ≤ 1 with the
/// identity T(h, a) = ½Φ(h) + ½Φ(ah) − Φ(h)Φ(ah) − T(ah, 1/a); the reduced
/// integrand is smooth, so 48 nodes reach well beyond the 1e−9 tolerance
/// the CDF promises.
pub fn owen_t(h: f64, a: f64) -> f64 {
    if a == 0.0 {
        return 0.0;
    }
    let sign = a.signum();
    let (h, a) = (h.abs(), a.abs());
    let t = if a <= 1.0 {
        owen_t_integral(h, a)
    } else {
        let ah = a * h;
        let phi_h = gauss::cdf(h);
        let phi_ah = gauss::cdf(ah);
        0.5 * (phi_h + phi_ah) - phi_h * phi_ah - owen_t_integral(ah, 1.0 / a)
    };
    sign * t
}

fn owen_t_integral(h: f64, a: f64) -> f64 {
    let (nodes, weights) = &*GL48;
    let half = a / 2.0;
    let mut sum = 0.0;
    for (x, w) in nodes.iter().zip(weights) {
        let t = half * (x + 1.0);
        sum += w * (-0.5 * h * h * (1.0 + t * t)).exp() / (1.0 + t * t);
    }
    half * sum / (2.0 * std::f64::consts::PI)
}

/// Skew-normal density.
pub fn skewnormal_pdf(params: &SkewNormalParams, x: f64) -> f64 {
    let z = (x - params.location) / params.scale;
    2.0 / params.scale * gauss::pdf(z) * gauss::cdf(params.shape * z)
}

/// Skew-normal CDF, Φ(z) − 2·T(z, a) with z = (x−ξ)/ω.
pub fn skewnormal_cdf(params: &SkewNormalParams, x: f64) -> f64 {
    let z = (x - params.location) / params.scale;
    (gauss::cdf(z) - 2.0 * owen_t(z, params.shape)).clamp(0.0, 1.0)
}

/// Inverts the skew-normal CDF by bisection to |F(x) − α| < 1e−8.
pub fn skewnormal_quantile(params: &SkewNormalParams, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::LevelOutOfRange { level: alpha });
    }
    let (mut lo, mut hi) = (
        params.location - 10.0 * params.scale,
        params.location + 10.0 * params.scale,
    );
    let mut span = 10.0 * params.scale;
    while skewnormal_cdf(params, lo) > alpha {
        span *= 2.0;
        lo -= span;
    }
    while skewnormal_cdf(params, hi) < alpha {
        span *= 2.0;
        hi += span;
    }
    Ok(bisect(|x| skewnormal_cdf(params, x), alpha, lo, hi))
}

/// Bisection on a non-decreasing CDF; stops at |F−α| ≤ tolerance or when
/// the bracket collapses (CDF jumps).
fn bisect(cdf: impl Fn(f64) -> f64, alpha: f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let f = cdf(mid);
        if (f - alpha).abs() <= CDF_TOL {
            return mid;
        }
        if f < alpha {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-13 * (1.0 + mid.abs()) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// A fitted skew-normal together with its quantile-space residual.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkewNormalFit {
    pub params: SkewNormalParams,
    /// Root-mean-square error between reported and fitted quantiles.
    pub rms: f64,
}

/// Fits a skew-normal to a forecast's reported quantiles by minimizing the
/// summed squared quantile error.
///
/// The shape is searched by PSO over one dimension; for each candidate
/// shape the location and scale are profiled out in closed form (reported
/// quantiles are affine in (ξ, ω) once the standardized quantiles z_α are
/// known). The run is self-seeded, so fits are deterministic.
pub fn fit_skewnormal(forecast: &QuantileForecast) -> Result<SkewNormalFit> {
    let levels = forecast.levels();
    let values = forecast.values();
    let n = levels.len();
    if n < 3 {
        return Err(Error::TooFewLevelsForFit { got: n });
    }

    let value_span = values[n - 1] - values[0];
    let omega_floor = 1e-9 * (1.0 + value_span.abs().max(values[n - 1].abs()));

    // Profiled objective: residual sum of squares at the best (ξ, ω) for a
    // fixed shape.
    let profiled = |shape: f64| -> (f64, f64, f64) {
        let standard = SkewNormalParams {
            location: 0.0,
            scale: 1.0,
            shape,
        };
        let z: Vec<f64> = levels
            .iter()
            .map(|&a| skewnormal_quantile(&standard, a).expect("level validated"))
            .collect();
        let zbar = z.iter().sum::<f64>() / n as f64;
        let vbar = values.iter().sum::<f64>() / n as f64;
        let mut szz = 0.0;
        let mut szv = 0.0;
        for (zi, vi) in z.iter().zip(values) {
            szz += (zi - zbar) * (zi - zbar);
            szv += (zi - zbar) * (vi - vbar);
        }
        let omega = if szz > 0.0 { (szv / szz).max(omega_floor) } else { omega_floor };
        let xi = vbar - omega * zbar;
        let rss: f64 = z
            .iter()
            .zip(values)
            .map(|(zi, vi)| {
                let fitted = xi + omega * zi;
                (fitted - vi) * (fitted - vi)
            })
            .sum();
        (rss, xi, omega)
    };

    let settings = SwarmSettings::seeded(0x5eed_d157).budget(16, 60);
    let config = settings.config(vec![(-8.0, 8.0)])?;
    let result = minimize(|x| profiled(x[0]).0, &config)?;

    let shape = result.best_position[0];
    let (rss, xi, omega) = profiled(shape);
    Ok(SkewNormalFit {
        params: SkewNormalParams::new(xi, omega, shape)?,
        rms: (rss / n as f64).sqrt(),
    })
}

/// Fills missing target levels from a fitted skew-normal; reported values
/// are never touched.
///
/// If every target level is already reported the input is returned as-is
/// (no fit is attempted). Filled values are clamped between neighbouring
/// reported values so the merged quantile function stays monotone even
/// when the fit disagrees slightly with the raw quantiles.
pub fn complete_quantiles(
    forecast: &QuantileForecast,
    targets: &[f64],
) -> Result<QuantileForecast> {
    if forecast.has_levels(targets) {
        return Ok(forecast.clone());
    }
    let fit = fit_skewnormal(forecast)?;

    // Merge reported and fitted points, flagging which are fitted.
    let mut merged: Vec<(f64, f64, bool)> = forecast
        .points()
        .map(|(level, value)| (level, value, false))
        .collect();
    for &target in targets {
        if forecast.value_at(target).is_none()
            && !merged
                .iter()
                .any(|&(l, _, _)| (l - target).abs() <= LEVEL_EPS)
        {
            let value = skewnormal_quantile(&fit.params, target)?;
            merged.push((target, value, true));
        }
    }
    merged.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Monotone repair touching only fitted entries: forward running max,
    // then backward running min against the untouched reported anchors.
    for i in 1..merged.len() {
        if merged[i].2 && merged[i].1 < merged[i - 1].1 {
            merged[i].1 = merged[i - 1].1;
        }
    }
    for i in (0..merged.len().saturating_sub(1)).rev() {
        if merged[i].2 && merged[i].1 > merged[i + 1].1 {
            merged[i].1 = merged[i + 1].1;
        }
    }

    QuantileForecast::new(
        forecast.key().clone(),
        forecast.target_date(),
        merged.into_iter().map(|(l, v, _)| (l, v)),
    )
}

/// Piecewise-linear quantile function with exponential tails matched to the
/// outermost distinct quantile pair. Degenerates to a point mass when every
/// reported value is equal.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalQuantiles {
    levels: Vec<f64>,
    values: Vec<f64>,
    /// Lower/upper tail rates λ; `None` for a point mass.
    lower_rate: Option<f64>,
    upper_rate: Option<f64>,
}

impl EmpiricalQuantiles {
    fn from_forecast(forecast: &QuantileForecast) -> Self {
        let levels = forecast.levels().to_vec();
        let values = forecast.values().to_vec();
        let n = values.len();
        let (lower_rate, upper_rate) = if n >= 2 && values[n - 1] > values[0] {
            // Density just inside each extreme, continued exponentially.
            let j = values.iter().position(|&v| v > values[0]).unwrap();
            let lower_slope = (levels[j] - levels[0]) / (values[j] - values[0]);
            let k = values.iter().rposition(|&v| v < values[n - 1]).unwrap();
            let upper_slope = (levels[n - 1] - levels[k]) / (values[n - 1] - values[k]);
            (
                Some(lower_slope / levels[0]),
                Some(upper_slope / (1.0 - levels[n - 1])),
            )
        } else {
            (None, None)
        };
        EmpiricalQuantiles {
            levels,
            values,
            lower_rate,
            upper_rate,
        }
    }

    fn is_point_mass(&self) -> bool {
        self.lower_rate.is_none()
    }

    fn cdf(&self, x: f64) -> f64 {
        let n = self.values.len();
        if self.is_point_mass() {
            return if x < self.values[0] { 0.0 } else { 1.0 };
        }
        if x < self.values[0] {
            let rate = self.lower_rate.unwrap();
            return self.levels[0] * (rate * (x - self.values[0])).exp();
        }
        if x >= self.values[n - 1] {
            let rate = self.upper_rate.unwrap();
            return 1.0 - (1.0 - self.levels[n - 1]) * (-rate * (x - self.values[n - 1])).exp();
        }
        // Largest index with value ≤ x; ties collapse to the highest level
        // at that value (right-continuous through jumps).
        let i = self.values.partition_point(|&v| v <= x) - 1;
        if self.values[i + 1] > self.values[i] {
            let frac = (x - self.values[i]) / (self.values[i + 1] - self.values[i]);
            self.levels[i] + frac * (self.levels[i + 1] - self.levels[i])
        } else {
            self.levels[i]
        }
    }

    fn pdf(&self, x: f64) -> f64 {
        let n = self.values.len();
        if self.is_point_mass() {
            return if x == self.values[0] { f64::INFINITY } else { 0.0 };
        }
        if x < self.values[0] {
            let rate = self.lower_rate.unwrap();
            return self.levels[0] * rate * (rate * (x - self.values[0])).exp();
        }
        if x > self.values[n - 1] {
            let rate = self.upper_rate.unwrap();
            return (1.0 - self.levels[n - 1]) * rate * (-rate * (x - self.values[n - 1])).exp();
        }
        // Density on the segment containing x; at a shared knot take the
        // steeper side, and at an exact jump the density is unbounded.
        let mut best: f64 = 0.0;
        for j in 0..n - 1 {
            if self.values[j] <= x && x <= self.values[j + 1] {
                if self.values[j + 1] > self.values[j] {
                    best = best.max(
                        (self.levels[j + 1] - self.levels[j]) / (self.values[j + 1] - self.values[j]),
                    );
                } else {
                    return f64::INFINITY;
                }
            }
        }
        best
    }

    fn quantile(&self, alpha: f64) -> f64 {
        let n = self.values.len();
        if self.is_point_mass() {
            return self.values[0];
        }
        if alpha < self.levels[0] {
            let rate = self.lower_rate.unwrap();
            return self.values[0] + (alpha / self.levels[0]).ln() / rate;
        }
        if alpha > self.levels[n - 1] {
            let rate = self.upper_rate.unwrap();
            return self.values[n - 1] - ((1.0 - alpha) / (1.0 - self.levels[n - 1])).ln() / rate;
        }
        let i = self.levels.partition_point(|&l| l < alpha);
        if (self.levels[i] - alpha).abs() <= f64::EPSILON {
            return self.values[i];
        }
        let frac = (alpha - self.levels[i - 1]) / (self.levels[i] - self.levels[i - 1]);
        self.values[i - 1] + frac * (self.values[i] - self.values[i - 1])
    }
}

/// One mixture component: a fitted skew-normal or a raw quantile forecast
/// under the piecewise-linear reading.
#[derive(Debug, Clone, PartialEq)]
pub enum ComponentDistribution {
    SkewNormal(SkewNormalParams),
    Empirical(EmpiricalQuantiles),
}

impl ComponentDistribution {
    /// Non-parametric component straight from reported quantiles.
    pub fn from_forecast(forecast: &QuantileForecast) -> Self {
        ComponentDistribution::Empirical(EmpiricalQuantiles::from_forecast(forecast))
    }

    pub fn skew_normal(params: SkewNormalParams) -> Self {
        ComponentDistribution::SkewNormal(params)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            ComponentDistribution::SkewNormal(p) => skewnormal_cdf(p, x),
            ComponentDistribution::Empirical(e) => e.cdf(x),
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match self {
            ComponentDistribution::SkewNormal(p) => skewnormal_pdf(p, x),
            ComponentDistribution::Empirical(e) => e.pdf(x),
        }
    }

    pub fn quantile(&self, alpha: f64) -> Result<f64> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::LevelOutOfRange { level: alpha });
        }
        Ok(match self {
            ComponentDistribution::SkewNormal(p) => skewnormal_quantile(p, alpha)?,
            ComponentDistribution::Empirical(e) => e.quantile(alpha),
        })
    }

    /// Support anchor points for integration grids: knot values plus a
    /// ladder of tail quantiles. The ladder keeps segment widths comparable
    /// to the exponential tail scale, where a single far-out knot would
    /// leave Simpson panels far wider than the integrand's decay length.
    fn knots(&self) -> Vec<f64> {
        let ladder = [TAIL_LEVEL, 1e-7, 1e-5, 1e-4, 1e-3, 5e-3, 0.01, 0.025];
        let levels = ladder
            .iter()
            .copied()
            .chain((1..20).map(|i| i as f64 / 20.0))
            .chain(ladder.iter().map(|a| 1.0 - a));
        match self {
            ComponentDistribution::SkewNormal(p) => levels
                .map(|a| skewnormal_quantile(p, a).expect("levels in range"))
                .collect(),
            ComponentDistribution::Empirical(e) => {
                let mut v = e.values.clone();
                if !e.is_point_mass() {
                    v.extend(levels.map(|a| e.quantile(a)));
                }
                v
            }
        }
    }
}

fn check_mixture(components: &[ComponentDistribution], weights: &[f64]) -> Result<()> {
    if components.is_empty() {
        return Err(Error::EmptyModelList);
    }
    if weights.len() != components.len() {
        return Err(Error::InvalidWeights {
            sum: f64::NAN,
        });
    }
    let sum: f64 = weights.iter().sum();
    if weights.iter().any(|&w| !(0.0..=1.0 + 1e-9).contains(&w)) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidWeights { sum });
    }
    Ok(())
}

/// Mixture CDF Σ w_k·F_k(x).
pub fn mixture_cdf(components: &[ComponentDistribution], weights: &[f64], x: f64) -> f64 {
    components
        .iter()
        .zip(weights)
        .map(|(c, w)| w * c.cdf(x))
        .sum()
}

/// Mixture density Σ w_k·p_k(x).
pub fn mixture_pdf(components: &[ComponentDistribution], weights: &[f64], x: f64) -> f64 {
    components
        .iter()
        .zip(weights)
        .map(|(c, w)| w * c.pdf(x))
        .sum()
}

/// Inverts the mixture CDF at one level.
///
/// The root always lies between the smallest and largest component
/// quantiles at that level, which gives a safe initial bracket.
pub fn mixture_quantile(
    components: &[ComponentDistribution],
    weights: &[f64],
    alpha: f64,
) -> Result<f64> {
    check_mixture(components, weights)?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::LevelOutOfRange { level: alpha });
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (c, &w) in components.iter().zip(weights) {
        if w > 0.0 {
            let q = c.quantile(alpha)?;
            lo = lo.min(q);
            hi = hi.max(q);
        }
    }
    if lo >= hi {
        return Ok(lo);
    }
    Ok(bisect(
        |x| mixture_cdf(components, weights, x),
        alpha,
        lo,
        hi,
    ))
}

/// Extracts a quantile forecast from a weighted mixture at the target
/// levels; the output is monotone by construction.
pub fn mixture_quantiles(
    components: &[ComponentDistribution],
    weights: &[f64],
    targets: &[f64],
    key: SeriesKey,
    target_date: NaiveDate,
) -> Result<QuantileForecast> {
    check_mixture(components, weights)?;
    let mut sorted_targets: Vec<f64> = targets.to_vec();
    sorted_targets.sort_by(f64::total_cmp);
    let mut points = Vec::with_capacity(sorted_targets.len());
    let mut prev = f64::NEG_INFINITY;
    for &alpha in &sorted_targets {
        let q = mixture_quantile(components, weights, alpha)?;
        // Inversion tolerance can wobble adjacent levels by ~1e−8.
        let q = q.max(prev);
        points.push((alpha, q));
        prev = q;
    }
    QuantileForecast::new(key, target_date, points)
}

/// CRPS of the mixture against outcome `w`, via the CDF identity
/// CRPS = ∫ (F(x) − 𝟙{x ≥ w})² dx.
///
/// The integration grid joins every component's knots with `w`; between
/// knots the integrand is polynomial (piecewise-linear components) or
/// smooth and narrow (skew-normal), so composite Simpson on each segment
/// is accurate to ~1e−6 relative.
pub fn mixture_crps(components: &[ComponentDistribution], weights: &[f64], w: f64) -> f64 {
    let mut knots: Vec<f64> = components.iter().flat_map(|c| c.knots()).collect();
    knots.push(w);
    knots.sort_by(f64::total_cmp);
    knots.dedup();
    mixture_crps_with_knots(components, weights, &knots, w)
}

/// CRPS with a caller-precomputed knot grid (must contain `w` and cover the
/// effective support). Lets optimizers hoist knot construction out of their
/// inner loop.
pub fn mixture_crps_with_knots(
    components: &[ComponentDistribution],
    weights: &[f64],
    knots: &[f64],
    w: f64,
) -> f64 {
    debug_assert!(knots.windows(2).all(|p| p[0] <= p[1]));
    debug_assert!(knots.iter().any(|&k| k == w));
    let mut total = 0.0;
    for pair in knots.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if b <= a {
            continue;
        }
        // The indicator is constant on each segment because w is a knot;
        // fixing it per segment keeps the integrand smooth at x = w, where
        // pointwise evaluation would pick the wrong branch at the shared
        // endpoint of the two adjacent segments.
        let heaviside = if a >= w { 1.0 } else { 0.0 };
        let integrand = |x: f64| {
            let f = mixture_cdf(components, weights, x);
            (f - heaviside) * (f - heaviside)
        };
        // Composite Simpson, 4 panels per segment.
        const PANELS: usize = 4;
        let h = (b - a) / (2 * PANELS) as f64;
        let mut sum = integrand(a) + integrand(b);
        for j in 1..2 * PANELS {
            let weight = if j % 2 == 1 { 4.0 } else { 2.0 };
            sum += weight * integrand(a + j as f64 * h);
        }
        total += sum * h / 3.0;
    }
    total
}
