//! Experiment configuration: JSON schema, validation, and derived runtime
//! objects. Unknown keys are rejected so typos fail loudly.

use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::bandit::{ScheduleParams, Variant};
use crate::diagnostics::BoundInputs;
use crate::environment::ContextStrategy;
use crate::lasso::SolverSettings;
use crate::perturbation::{default_censor_bounds, PerturbationSpec};
use crate::rng::{role, StreamKey};
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceConfig {
    pub d: usize,
    pub k: usize,
    pub arms: usize,
    pub reward_noise_sigma: f64,
    #[serde(default)]
    pub theta_seed_policy: ThetaSeedPolicy,
    #[serde(default)]
    pub normalize_theta: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaSeedPolicy {
    /// One parameter vector shared by every repeat.
    Fixed,
    /// A fresh parameter vector per repeat (shared across variants and
    /// sigma1 values, so comparisons stay paired).
    #[default]
    PerRepeat,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StrategyConfig {
    Uniform01,
    FixedPool {
        vectors: Vec<Vec<f64>>,
        #[serde(default = "default_true")]
        replay: bool,
    },
    /// A fixed pool of `size` Uniform[0,1] vectors drawn once from the master
    /// seed and replayed every round: the same raw contexts at every round,
    /// the hardest case for a greedy learner without perturbation.
    FixedRandomPool { size: usize },
    LowDiversity {
        offset_scale: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationConfig {
    /// One entry runs a single setting; several run a variance sweep.
    pub sigma1_values: Vec<f64>,
    /// Uniform censoring bound `q`. Defaults to `1 + 4 sigma1` per sweep
    /// value, keeping censoring rare but active for unit-cube contexts.
    #[serde(default)]
    pub censor_bound: Option<f64>,
    /// Context energy cap `R` used by the bound formulas. Defaults to
    /// `sqrt(sum q_j^2)`, which censoring guarantees.
    #[serde(default)]
    pub energy_cap: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub delta: f64,
    /// Reward-noise scale in lambda_t; defaults to the instance's sigma.
    #[serde(default)]
    pub sigma_override: Option<f64>,
    /// Design-entry bound in lambda_t; defaults to the largest censoring
    /// bound `max_j q_j`, which is what the sup-norm noise bound behind the
    /// schedule assumes.
    #[serde(default)]
    pub r_override: Option<f64>,
    #[serde(default = "default_one")]
    pub lambda_multiplier: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_max_sweeps")]
    pub max_sweeps: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tolerance: default_tolerance(),
            max_sweeps: default_max_sweeps(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsConfig {
    /// Record `lambda_min(X X^T)` every this many rounds (off when absent;
    /// a full eigensolve per checkpoint is wasteful at large d).
    #[serde(default)]
    pub lambda_min_every: Option<usize>,
    #[serde(default = "default_cone_samples")]
    pub cone_samples: usize,
    #[serde(default = "default_trials")]
    pub fact1_trials: usize,
    #[serde(default = "default_mc_samples")]
    pub censored_mc_samples: usize,
    #[serde(default = "default_curve_points")]
    pub bound_curve_points: usize,
    /// Rounds window for the lambda_min slope fit; defaults to
    /// `[horizon/5, horizon]`.
    #[serde(default)]
    pub slope_window: Option<(usize, usize)>,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            lambda_min_every: None,
            cone_samples: default_cone_samples(),
            fact1_trials: default_trials(),
            censored_mc_samples: default_mc_samples(),
            bound_curve_points: default_curve_points(),
            slope_window: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PaperScaleConfig {
    pub d: usize,
    pub k: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantConfig {
    Plain,
    Preconditioned,
}

impl From<VariantConfig> for Variant {
    fn from(v: VariantConfig) -> Variant {
        match v {
            VariantConfig::Plain => Variant::Plain,
            VariantConfig::Preconditioned => Variant::Preconditioned,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub instance: InstanceConfig,
    #[serde(default = "default_strategy")]
    pub strategy: StrategyConfig,
    pub perturbation: PerturbationConfig,
    pub schedule: ScheduleConfig,
    pub horizon: usize,
    pub repeats: usize,
    #[serde(default = "default_variants")]
    pub variants: Vec<VariantConfig>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    /// Share context/perturbation/reward streams across variants so the
    /// comparison is paired.
    #[serde(default = "default_true")]
    pub paired_contexts: bool,
    #[serde(default = "default_seed")]
    pub master_seed: u64,
    #[serde(default = "default_out_dir")]
    pub output_dir: String,
    /// Optional full-scale override applied by `--paper-scale`.
    #[serde(default)]
    pub paper_scale: Option<PaperScaleConfig>,
}

fn default_true() -> bool {
    true
}
fn default_one() -> f64 {
    1.0
}
fn default_tolerance() -> f64 {
    1e-8
}
fn default_max_sweeps() -> usize {
    10_000
}
fn default_cone_samples() -> usize {
    10_000
}
fn default_trials() -> usize {
    1_000
}
fn default_mc_samples() -> usize {
    1_000_000
}
fn default_curve_points() -> usize {
    30
}
fn default_seed() -> u64 {
    42
}
fn default_out_dir() -> String {
    "out".to_string()
}
fn default_strategy() -> StrategyConfig {
    StrategyConfig::Uniform01
}
fn default_variants() -> Vec<VariantConfig> {
    vec![VariantConfig::Plain]
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let config: ExperimentConfig = serde_json::from_str(text)
            .map_err(|e| Error::config("<root>", e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.instance.d == 0 {
            return Err(Error::config("instance.d", "must be >= 1"));
        }
        if self.instance.k == 0 || self.instance.k > self.instance.d {
            return Err(Error::config("instance.k", "need 1 <= k <= d"));
        }
        if self.instance.arms < 2 {
            return Err(Error::config("instance.arms", "must be >= 2"));
        }
        if self.instance.reward_noise_sigma < 0.0 {
            return Err(Error::config("instance.reward_noise_sigma", "must be >= 0"));
        }
        if self.perturbation.sigma1_values.is_empty() {
            return Err(Error::config("perturbation.sigma1_values", "must be non-empty"));
        }
        if self.perturbation.sigma1_values.iter().any(|s| *s <= 0.0) {
            return Err(Error::config("perturbation.sigma1_values", "all values must be > 0"));
        }
        if let Some(q) = self.perturbation.censor_bound {
            if q <= 0.0 {
                return Err(Error::config("perturbation.censor_bound", "must be > 0"));
            }
        }
        if !(0.0..1.0).contains(&self.schedule.delta) || self.schedule.delta == 0.0 {
            return Err(Error::config("schedule.delta", "must be in (0,1)"));
        }
        if self.schedule.lambda_multiplier < 0.0 {
            return Err(Error::config("schedule.lambda_multiplier", "must be >= 0"));
        }
        if self.horizon == 0 {
            return Err(Error::config("horizon", "must be >= 1"));
        }
        if self.repeats == 0 {
            return Err(Error::config("repeats", "must be >= 1"));
        }
        if self.variants.is_empty() {
            return Err(Error::config("variants", "must be non-empty"));
        }
        let mut seen = Vec::new();
        for v in &self.variants {
            if seen.contains(v) {
                return Err(Error::config("variants", "duplicate variant"));
            }
            seen.push(*v);
        }
        if self.solver.tolerance <= 0.0 {
            return Err(Error::config("solver.tolerance", "must be > 0"));
        }
        if self.solver.max_sweeps == 0 {
            return Err(Error::config("solver.max_sweeps", "must be >= 1"));
        }
        if let Some(every) = self.diagnostics.lambda_min_every {
            if every == 0 {
                return Err(Error::config("diagnostics.lambda_min_every", "must be >= 1"));
            }
        }
        if let Some((lo, hi)) = self.diagnostics.slope_window {
            if lo >= hi || hi > self.horizon {
                return Err(Error::config(
                    "diagnostics.slope_window",
                    "need lo < hi <= horizon",
                ));
            }
        }
        match &self.strategy {
            StrategyConfig::FixedPool { vectors, .. } => {
                if vectors.is_empty() {
                    return Err(Error::config("strategy.vectors", "must be non-empty"));
                }
                if vectors.iter().any(|v| v.len() != self.instance.d) {
                    return Err(Error::config("strategy.vectors", "entries must have length d"));
                }
            }
            StrategyConfig::FixedRandomPool { size } => {
                if *size == 0 {
                    return Err(Error::config("strategy.size", "must be >= 1"));
                }
            }
            _ => {}
        }
        if let Some(ps) = &self.paper_scale {
            if ps.k == 0 || ps.k > ps.d {
                return Err(Error::config("paper_scale", "need 1 <= k <= d"));
            }
        }
        Ok(())
    }

    /// Applies the `paper_scale` override block.
    pub fn apply_paper_scale(&mut self) -> Result<()> {
        let ps = self.paper_scale.ok_or_else(|| {
            Error::config("paper_scale", "config has no paper_scale block")
        })?;
        self.instance.d = ps.d;
        self.instance.k = ps.k;
        self.validate()
    }

    pub fn censor_bounds_for(&self, sigma1: f64) -> Vec<f64> {
        match self.perturbation.censor_bound {
            Some(q) => vec![q; self.instance.d],
            None => default_censor_bounds(self.instance.d, sigma1),
        }
    }

    pub fn perturbation_spec_for(&self, sigma1: f64) -> Result<PerturbationSpec> {
        PerturbationSpec::isotropic(
            sigma1,
            self.censor_bounds_for(sigma1),
            self.perturbation.energy_cap,
        )
    }

    pub fn schedule_params_for(&self, spec: &PerturbationSpec) -> Result<ScheduleParams> {
        let sigma = self
            .schedule
            .sigma_override
            .unwrap_or(self.instance.reward_noise_sigma);
        let r = self.schedule.r_override.unwrap_or_else(|| spec.q_max());
        ScheduleParams::new(sigma, r, self.instance.d, self.schedule.delta)?
            .with_multiplier(self.schedule.lambda_multiplier)
    }

    pub fn bound_inputs_for(&self, spec: &PerturbationSpec) -> Result<BoundInputs> {
        BoundInputs::isotropic(
            spec.sigma1().expect("config specs are isotropic"),
            spec.q_min(),
            spec.energy_cap(),
            self.instance.k,
            self.instance.d,
            self.horizon,
            self.instance.reward_noise_sigma,
            self.schedule.delta,
        )
    }

    pub fn solver_settings(&self) -> SolverSettings {
        SolverSettings {
            tolerance: self.solver.tolerance,
            max_sweeps: self.solver.max_sweeps,
            warm_start: None,
        }
    }

    /// Materializes the context strategy. Random pools and low-diversity
    /// directions are drawn per repeat (shared across variants and the sigma1
    /// sweep, so comparisons stay paired).
    pub fn context_strategy(&self, master: StreamKey, repeat: usize) -> Result<ContextStrategy> {
        Ok(match &self.strategy {
            StrategyConfig::Uniform01 => ContextStrategy::Uniform01,
            StrategyConfig::FixedPool { vectors, replay } => ContextStrategy::FixedPool {
                vectors: vectors
                    .iter()
                    .map(|v| DVector::from_column_slice(v))
                    .collect(),
                replay: *replay,
            },
            StrategyConfig::FixedRandomPool { size } => {
                use rand::Rng;
                let mut rng = master
                    .child(role::CONTEXT)
                    .child(u64::MAX - 1)
                    .child(repeat as u64)
                    .rng();
                let vectors = (0..*size)
                    .map(|_| DVector::from_fn(self.instance.d, |_, _| rng.random_range(0.0..1.0)))
                    .collect();
                ContextStrategy::FixedPool {
                    vectors,
                    replay: true,
                }
            }
            StrategyConfig::LowDiversity { offset_scale } => {
                use rand::Rng;
                let mut rng = master
                    .child(role::CONTEXT)
                    .child(u64::MAX)
                    .child(repeat as u64)
                    .rng();
                let direction =
                    DVector::from_fn(self.instance.d, |_, _| rng.random_range(0.0..1.0));
                ContextStrategy::LowDiversity {
                    direction,
                    offset_scale: *offset_scale,
                }
            }
        })
    }

    pub fn slope_window(&self) -> (usize, usize) {
        self.diagnostics
            .slope_window
            .unwrap_or(((self.horizon / 5).max(1), self.horizon))
    }
}
