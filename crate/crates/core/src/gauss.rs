//! Standard-normal helpers shared by the scoring, distribution-fitting, and
//! regression modules. Thin wrappers over `statrs`, with a Newton polish on
//! the quantile so round-trips hold to near machine precision.

use statrs::distribution::{Continuous, ContinuousCDF, Normal};

fn standard() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// Standard normal density φ(x).
pub(crate) fn pdf(x: f64) -> f64 {
    standard().pdf(x)
}

/// Standard normal CDF Φ(x).
pub(crate) fn cdf(x: f64) -> f64 {
    standard().cdf(x)
}

/// Standard normal quantile Φ⁻¹(p) for p ∈ (0,1).
pub(crate) fn quantile(p: f64) -> f64 {
    let mut z = standard().inverse_cdf(p);
    // One or two Newton corrections; skipped in the far tails where the
    // density underflows and the library value is already as good as it gets.
    for _ in 0..2 {
        if z.abs() > 8.0 {
            break;
        }
        let step = (cdf(z) - p) / pdf(z);
        z -= step;
        if step.abs() < 1e-15 {
            break;
        }
    }
    z
}
