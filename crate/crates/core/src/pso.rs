//! Bound-constrained global-best particle swarm minimizer.
//!
//! Used to fit EMOS and QRA coefficients, skew-normal shapes, and optional
//! mixture weights. Deliberately minimal: box constraints only, fixed
//! iteration budget, fully deterministic for a given seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// How often a particle whose initial objective value is non-finite is
/// redrawn before the whole minimization gives up.
const INIT_RETRIES: usize = 100;

/// Swarm hyperparameters without problem-specific bounds. Fitting routines
/// accept these and attach their own search boxes.
#[derive(Debug, Clone, PartialEq)]
pub struct SwarmSettings {
    pub swarm_size: usize,
    pub iterations: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    pub seed: u64,
}

impl SwarmSettings {
    pub fn seeded(seed: u64) -> Self {
        SwarmSettings {
            swarm_size: 50,
            iterations: 200,
            inertia: 0.7,
            cognitive: 1.5,
            social: 1.5,
            seed,
        }
    }

    /// Overrides the evaluation budget; smaller swarms suit cheap
    /// low-dimensional problems.
    pub fn budget(mut self, swarm_size: usize, iterations: usize) -> Self {
        self.swarm_size = swarm_size;
        self.iterations = iterations;
        self
    }

    /// Attaches per-dimension `[low, high]` bounds.
    pub fn config(&self, bounds: Vec<(f64, f64)>) -> Result<PsoConfig> {
        let config = PsoConfig {
            swarm_size: self.swarm_size,
            iterations: self.iterations,
            inertia: self.inertia,
            cognitive: self.cognitive,
            social: self.social,
            seed: self.seed,
            bounds,
        };
        config.validate()?;
        Ok(config)
    }
}

impl Default for SwarmSettings {
    fn default() -> Self {
        SwarmSettings::seeded(0)
    }
}

/// Full minimizer configuration including the search box.
#[derive(Debug, Clone, PartialEq)]
pub struct PsoConfig {
    pub swarm_size: usize,
    pub iterations: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    pub seed: u64,
    pub bounds: Vec<(f64, f64)>,
}

impl PsoConfig {
    /// Default hyperparameters (swarm 50, 200 iterations, inertia 0.7,
    /// accelerations 1.5) over the given box.
    pub fn new(bounds: Vec<(f64, f64)>, seed: u64) -> Result<Self> {
        SwarmSettings::seeded(seed).config(bounds)
    }

    fn validate(&self) -> Result<()> {
        if self.swarm_size < 2 {
            return Err(Error::PsoConfig {
                message: format!("swarm_size must be ≥ 2 (got {})", self.swarm_size),
            });
        }
        if self.iterations == 0 {
            return Err(Error::PsoConfig {
                message: "iterations must be ≥ 1".into(),
            });
        }
        if self.bounds.is_empty() {
            return Err(Error::PsoConfig {
                message: "bounds must cover at least one dimension".into(),
            });
        }
        for (i, &(lo, hi)) in self.bounds.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite()) || lo > hi {
                return Err(Error::PsoConfig {
                    message: format!("dimension {i} bounds [{lo}, {hi}] invalid"),
                });
            }
        }
        for (name, v) in [
            ("inertia", self.inertia),
            ("cognitive", self.cognitive),
            ("social", self.social),
        ] {
            if !v.is_finite() {
                return Err(Error::PsoConfig {
                    message: format!("{name} must be finite (got {v})"),
                });
            }
        }
        Ok(())
    }

    fn dim(&self) -> usize {
        self.bounds.len()
    }
}

/// Outcome of a minimization run.
#[derive(Debug, Clone, PartialEq)]
pub struct PsoResult {
    pub best_position: Vec<f64>,
    pub best_value: f64,
    /// Best objective value after initialization and after each iteration;
    /// non-increasing by construction.
    pub trace: Vec<f64>,
}

fn sample_position(rng: &mut ChaCha8Rng, bounds: &[(f64, f64)]) -> Vec<f64> {
    bounds
        .iter()
        .map(|&(lo, hi)| if lo == hi { lo } else { rng.random_range(lo..=hi) })
        .collect()
}

/// Minimizes `objective` over the configured box.
///
/// Standard global-best update
/// `v ← inertia·v + cognitive·r₁·(pbest−x) + social·r₂·(gbest−x)` with
/// fresh per-dimension r₁, r₂ each step; positions are clamped to the box
/// and the velocity is zeroed in any clamped dimension. Two calls with the
/// same config and objective return bit-identical results.
pub fn minimize(objective: impl Fn(&[f64]) -> f64, config: &PsoConfig) -> Result<PsoResult> {
    config.validate()?;
    let dim = config.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    // Initial swarm; particles landing on non-finite objective values are
    // redrawn so every particle starts from a comparable score.
    let mut positions = Vec::with_capacity(config.swarm_size);
    let mut values = Vec::with_capacity(config.swarm_size);
    for _ in 0..config.swarm_size {
        let mut retries = 0;
        let (position, value) = loop {
            let candidate = sample_position(&mut rng, &config.bounds);
            let value = objective(&candidate);
            if value.is_finite() {
                break (candidate, value);
            }
            retries += 1;
            if retries > INIT_RETRIES {
                return Err(Error::PsoNonFiniteObjective {
                    retries: INIT_RETRIES,
                });
            }
        };
        positions.push(position);
        values.push(value);
    }
    let mut velocities = vec![vec![0.0; dim]; config.swarm_size];
    let mut pbest = positions.clone();
    let mut pbest_values = values.clone();

    let best_index = pbest_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("swarm is non-empty");
    let mut gbest = pbest[best_index].clone();
    let mut gbest_value = pbest_values[best_index];

    let mut trace = Vec::with_capacity(config.iterations + 1);
    trace.push(gbest_value);

    for _ in 0..config.iterations {
        for p in 0..config.swarm_size {
            for d in 0..dim {
                let r1: f64 = rng.random();
                let r2: f64 = rng.random();
                velocities[p][d] = config.inertia * velocities[p][d]
                    + config.cognitive * r1 * (pbest[p][d] - positions[p][d])
                    + config.social * r2 * (gbest[d] - positions[p][d]);
                positions[p][d] += velocities[p][d];
                let (lo, hi) = config.bounds[d];
                if positions[p][d] < lo {
                    positions[p][d] = lo;
                    velocities[p][d] = 0.0;
                } else if positions[p][d] > hi {
                    positions[p][d] = hi;
                    velocities[p][d] = 0.0;
                }
            }
            let value = objective(&positions[p]);
            // Non-finite mid-run values are simply never adopted as bests.
            if value.is_finite() && value < pbest_values[p] {
                pbest_values[p] = value;
                pbest[p].clone_from(&positions[p]);
                if value < gbest_value {
                    gbest_value = value;
                    gbest.clone_from(&positions[p]);
                }
            }
        }
        trace.push(gbest_value);
    }

    Ok(PsoResult {
        best_position: gbest,
        best_value: gbest_value,
        trace,
    })
}
