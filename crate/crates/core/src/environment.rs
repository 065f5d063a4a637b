//! Context generation, the perturbed adversary, and the noisy linear reward.
//!
//! Raw contexts may come from any [`ContextStrategy`] (the adversary's side);
//! the perturbed adversary then adds independent Gaussian noise and censors
//! each coordinate into its bound. Rewards follow the sparse linear model
//! `r = <x, theta*> + eta` with `eta ~ N(0, sigma^2)` shared within a round.

use nalgebra::DVector;
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::perturbation::{censor_context, sample_perturbation, PerturbationSpec};
use crate::rng::EpisodeStreams;
use crate::{Error, Result};

/// Ground truth for one simulated problem: the sparse parameter, its support,
/// and the reward-noise scale.
#[derive(Debug, Clone)]
pub struct BanditInstance {
    theta_star: DVector<f64>,
    support: Vec<usize>,
    arms: usize,
    reward_noise_sigma: f64,
}

impl BanditInstance {
    /// Builds an instance from an explicit parameter vector. The support is
    /// its exact nonzero pattern.
    pub fn new(theta_star: DVector<f64>, arms: usize, reward_noise_sigma: f64) -> Result<Self> {
        let support: Vec<usize> = theta_star
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(j, _)| j)
            .collect();
        if support.is_empty() {
            return Err(Error::invalid("theta_star", "must have at least one nonzero entry"));
        }
        if arms < 2 {
            return Err(Error::invalid("arms", format!("must be >= 2, got {arms}")));
        }
        if !reward_noise_sigma.is_finite() || reward_noise_sigma < 0.0 {
            return Err(Error::invalid("reward_noise_sigma", "must be >= 0"));
        }
        if theta_star.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("theta_star", "entries must be finite"));
        }
        Ok(BanditInstance {
            theta_star,
            support,
            arms,
            reward_noise_sigma,
        })
    }

    /// Draws a k-sparse parameter: support uniform without replacement,
    /// nonzero magnitudes in `[0.5, 1]` with random signs, optionally
    /// normalized to unit l2 norm.
    pub fn generate<R: Rng + ?Sized>(
        dim: usize,
        sparsity: usize,
        arms: usize,
        reward_noise_sigma: f64,
        normalize: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if sparsity == 0 || sparsity > dim {
            return Err(Error::invalid("sparsity", format!("need 1 <= k <= d, got k={sparsity}, d={dim}")));
        }
        let mut theta = DVector::zeros(dim);
        for j in sample_indices(rng, dim, sparsity).into_iter() {
            let magnitude = rng.random_range(0.5..=1.0);
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            theta[j] = sign * magnitude;
        }
        if normalize {
            let norm = theta.norm();
            theta /= norm;
        }
        Self::new(theta, arms, reward_noise_sigma)
    }

    pub fn theta_star(&self) -> &DVector<f64> {
        &self.theta_star
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn dim(&self) -> usize {
        self.theta_star.len()
    }

    pub fn sparsity(&self) -> usize {
        self.support.len()
    }

    pub fn arms(&self) -> usize {
        self.arms
    }

    pub fn reward_noise_sigma(&self) -> f64 {
        self.reward_noise_sigma
    }
}

/// How the adversary picks raw (pre-perturbation) contexts.
#[derive(Debug, Clone)]
pub enum ContextStrategy {
    /// Every coordinate i.i.d. Uniform[0, 1].
    Uniform01,
    /// Cyclic replay of a supplied pool, arm-major: round t uses entries
    /// `(t-1)*m ..< t*m`. With `replay` off, running past the pool is an error.
    FixedPool {
        vectors: Vec<DVector<f64>>,
        replay: bool,
    },
    /// All arms share one direction plus small uniform per-arm offsets,
    /// clamped back into [0, 1]. A stress test for poorly diversified raw
    /// contexts.
    LowDiversity {
        direction: DVector<f64>,
        offset_scale: f64,
    },
}

/// One round's arm features: the adversary's raw contexts and their perturbed,
/// censored versions actually shown to the learner.
#[derive(Debug, Clone)]
pub struct RoundContexts {
    pub raw: Vec<DVector<f64>>,
    pub perturbed: Vec<DVector<f64>>,
}

impl RoundContexts {
    pub fn arms(&self) -> usize {
        self.perturbed.len()
    }
}

/// Generates the raw contexts for one round. Deterministic given the strategy
/// and the caller's per-round stream.
pub fn generate_raw_contexts<R: Rng + ?Sized>(
    strategy: &ContextStrategy,
    instance: &BanditInstance,
    round: usize,
    rng: &mut R,
) -> Result<Vec<DVector<f64>>> {
    if round == 0 {
        return Err(Error::invalid("round", "rounds are 1-based"));
    }
    let d = instance.dim();
    let m = instance.arms();
    match strategy {
        ContextStrategy::Uniform01 => Ok((0..m)
            .map(|_| DVector::from_fn(d, |_, _| rng.random_range(0.0..1.0)))
            .collect()),
        ContextStrategy::FixedPool { vectors, replay } => {
            if vectors.is_empty() {
                return Err(Error::invalid("fixed_pool", "pool must be non-empty"));
            }
            if let Some(v) = vectors.iter().find(|v| v.len() != d) {
                return Err(Error::DimensionMismatch {
                    context: "fixed pool vector",
                    expected: d,
                    actual: v.len(),
                });
            }
            let base = (round - 1) * m;
            if !replay && base + m > vectors.len() {
                return Err(Error::PoolExhausted { round });
            }
            Ok((0..m)
                .map(|i| vectors[(base + i) % vectors.len()].clone())
                .collect())
        }
        ContextStrategy::LowDiversity {
            direction,
            offset_scale,
        } => {
            if direction.len() != d {
                return Err(Error::DimensionMismatch {
                    context: "low-diversity direction",
                    expected: d,
                    actual: direction.len(),
                });
            }
            Ok((0..m)
                .map(|_| {
                    DVector::from_fn(d, |j, _| {
                        (direction[j] + offset_scale * rng.random_range(-1.0..1.0)).clamp(0.0, 1.0)
                    })
                })
                .collect())
        }
    }
}

/// Perturbs and censors each arm's raw context independently, with one
/// perturbation stream per (round, arm).
pub fn apply_perturbed_adversary(
    raw: Vec<DVector<f64>>,
    spec: &PerturbationSpec,
    streams: &EpisodeStreams,
    round: usize,
) -> Result<RoundContexts> {
    let mut perturbed = Vec::with_capacity(raw.len());
    for (arm, mu) in raw.iter().enumerate() {
        let mut rng = streams.perturbation_rng(round, arm);
        let e = sample_perturbation(spec, &mut rng);
        let x = censor_context(mu, &e, spec.censor_bounds())?;
        debug_assert!({
            let cap: f64 = spec.censor_bounds().iter().map(|q| q * q).sum::<f64>().sqrt();
            x.norm() <= cap * (1.0 + 1e-12)
        });
        perturbed.push(x);
    }
    Ok(RoundContexts { raw, perturbed })
}

/// Realizes the noisy linear reward `<x, theta*> + eta`, `eta ~ N(0, sigma^2)`.
pub fn realize_reward<R: Rng + ?Sized>(
    x: &DVector<f64>,
    instance: &BanditInstance,
    rng: &mut R,
) -> Result<f64> {
    if x.len() != instance.dim() {
        return Err(Error::DimensionMismatch {
            context: "reward context",
            expected: instance.dim(),
            actual: x.len(),
        });
    }
    let noise: f64 = rng.sample(StandardNormal);
    Ok(x.dot(instance.theta_star()) + instance.reward_noise_sigma() * noise)
}

/// The round's best arm under the true parameter, over the perturbed contexts
/// the learner actually sees. Ties break to the lowest index.
pub fn best_arm(contexts: &RoundContexts, instance: &BanditInstance) -> (usize, f64) {
    argmax_inner_product(&contexts.perturbed, instance.theta_star())
}

pub(crate) fn argmax_inner_product(xs: &[DVector<f64>], theta: &DVector<f64>) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, x) in xs.iter().enumerate() {
        let value = x.dot(theta);
        if value > best.1 {
            best = (i, value);
        }
    }
    best
}
