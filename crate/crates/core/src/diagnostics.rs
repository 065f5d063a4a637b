//! Empirical verification of the analytic guarantees.
//!
//! This module evaluates the quantities the analysis promises — minimum
//! eigenvalue growth of the sample Gram matrix, exploration thresholds,
//! restricted-eigenvalue constants on the cone `C(S; alpha)`, the noise
//! sup-norm bound, and the recovery/regret bound curves — and checks them
//! against Monte-Carlo simulation. Universal constants the analysis leaves
//! unspecified default to one, so threshold outputs are meaningful up to
//! universal constants.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bandit::RegretTrace;
use crate::perturbation::g_lower_bound;
use crate::{Error, Result};

/// Spectral and diagonal summary of a perturbation covariance.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SigmaSummary {
    pub lambda_max: f64,
    pub lambda_min: f64,
    pub max_diag: f64,
    pub min_diag: f64,
}

impl SigmaSummary {
    pub fn isotropic(sigma1: f64) -> Self {
        let v = sigma1 * sigma1;
        SigmaSummary {
            lambda_max: v,
            lambda_min: v,
            max_diag: v,
            min_diag: v,
        }
    }

    pub fn from_covariance(sigma: &DMatrix<f64>) -> Result<Self> {
        let eigs = sigma.clone().symmetric_eigenvalues();
        let summary = SigmaSummary {
            lambda_max: eigs.max(),
            lambda_min: eigs.min(),
            max_diag: sigma.diagonal().max(),
            min_diag: sigma.diagonal().min(),
        };
        summary.validate()?;
        Ok(summary)
    }

    /// The Rayleigh-quotient chain
    /// `lambda_max >= max_diag >= min_diag >= lambda_min > 0`.
    pub fn validate(&self) -> Result<()> {
        let tol = 1e-10 * (1.0 + self.lambda_max.abs());
        let chain_ok = self.lambda_max + tol >= self.max_diag
            && self.max_diag + tol >= self.min_diag
            && self.min_diag + tol >= self.lambda_min
            && self.lambda_min > 0.0;
        if !chain_ok {
            return Err(Error::invalid(
                "sigma_summary",
                format!("Rayleigh chain violated: {self:?}"),
            ));
        }
        Ok(())
    }

    pub fn condition_number(&self) -> f64 {
        self.lambda_max / self.lambda_min
    }

    /// `q(Sigma) / gamma^2` with `gamma^2 = lambda_min`.
    pub fn q_ratio(&self) -> f64 {
        self.max_diag / self.lambda_min
    }
}

/// Inputs shared by the bound formulas. `r` is the context energy cap;
/// universal constants and the tail exponent default to one.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BoundInputs {
    pub r: f64,
    pub q_min: f64,
    pub sigma1: f64,
    pub sigma_summary: SigmaSummary,
    pub sparsity: usize,
    pub dim: usize,
    pub horizon: usize,
    pub reward_sigma: f64,
    pub delta: f64,
    pub tail_a: f64,
    pub c: f64,
    pub c_prime: f64,
    pub c_double_prime: f64,
}

impl BoundInputs {
    pub fn isotropic(
        sigma1: f64,
        q_min: f64,
        r: f64,
        sparsity: usize,
        dim: usize,
        horizon: usize,
        reward_sigma: f64,
        delta: f64,
    ) -> Result<Self> {
        let inputs = BoundInputs {
            r,
            q_min,
            sigma1,
            sigma_summary: SigmaSummary::isotropic(sigma1),
            sparsity,
            dim,
            horizon,
            reward_sigma,
            delta,
            tail_a: 1.0,
            c: 1.0,
            c_prime: 1.0,
            c_double_prime: 1.0,
        };
        inputs.validate()?;
        Ok(inputs)
    }

    pub fn validate(&self) -> Result<()> {
        self.sigma_summary.validate()?;
        if self.r <= 0.0 || self.q_min <= 0.0 || self.sigma1 <= 0.0 {
            return Err(Error::invalid("bound_inputs", "r, q_min, sigma1 must be > 0"));
        }
        if self.sparsity == 0 || self.dim == 0 || self.horizon == 0 {
            return Err(Error::invalid("bound_inputs", "k, d, T must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.delta) || self.delta == 0.0 {
            return Err(Error::invalid("delta", "must be in (0,1)"));
        }
        if self.reward_sigma < 0.0 {
            return Err(Error::invalid("reward_sigma", "must be >= 0"));
        }
        Ok(())
    }

    /// `g(2q/sigma1, 0) sigma1^2`: the perturbed-diversity constant.
    pub fn g0(&self) -> Result<f64> {
        g_lower_bound(self.q_min, self.sigma1)
    }
}

/// Smallest eigenvalue of a symmetric matrix. Rejects inputs whose asymmetry
/// exceeds `1e-10` relative to the largest entry.
pub fn min_symmetric_eigenvalue(m: &DMatrix<f64>) -> Result<f64> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch {
            context: "eigenvalue input",
            expected: m.nrows(),
            actual: m.ncols(),
        });
    }
    let deviation = (m - m.transpose()).abs().max();
    if deviation > 1e-10 * (1.0 + m.abs().max()) {
        return Err(Error::NotSymmetric { deviation });
    }
    let sym = (m + m.transpose()) * 0.5;
    Ok(sym.symmetric_eigenvalues().min())
}

/// Lemma-2-style lower bound on `lambda_min(X X^T)` at round `t`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Lemma2Bound {
    pub bound: f64,
    pub tau: f64,
    /// Whether `t` clears the round threshold `2 R^2 log(dT) / g0`.
    pub valid: bool,
}

/// Evaluates `g0 (1 - tau) t` with `tau = sqrt(2 R^2 log(dT) / (g0 t))`.
pub fn lemma2_bound(t: usize, inputs: &BoundInputs) -> Result<Lemma2Bound> {
    if t == 0 {
        return Err(Error::invalid("t", "rounds are 1-based"));
    }
    let g0 = inputs.g0()?;
    let log_dt = ((inputs.dim * inputs.horizon) as f64).ln();
    let tau = (2.0 * inputs.r * inputs.r * log_dt / (g0 * t as f64)).sqrt();
    Ok(Lemma2Bound {
        bound: g0 * (1.0 - tau) * t as f64,
        tau,
        valid: (t as f64) > 2.0 * inputs.r * inputs.r * log_dt / g0,
    })
}

/// Low-dimensional exploration length `2 R^2 log(dT) / g0`.
pub fn exploration_length_low(inputs: &BoundInputs) -> Result<f64> {
    let g0 = inputs.g0()?;
    Ok(2.0 * inputs.r * inputs.r * ((inputs.dim * inputs.horizon) as f64).ln() / g0)
}

/// High-dimensional exploration threshold, term by term.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ExplorationHigh {
    /// `4 c'' q(Sigma)/gamma^2 * k log d`
    pub term_d: f64,
    /// `8196 a R^2 lambda_max(Sigma) log T / gamma^4`
    pub term_e: f64,
    /// Same coefficient with the self-referential `log t` form: the smallest
    /// `t` with `t > coeff * log t`.
    pub term_e_log_t: f64,
    pub exploration_length: f64,
    pub q_ratio: f64,
    pub condition_number: f64,
    /// `q(Sigma)/gamma^2 >= 1`: the floor no variance choice can beat.
    pub q_ratio_ge_one: bool,
    /// `q(Sigma)/gamma^2 <= Cond(Sigma)`.
    pub q_ratio_le_cond: bool,
}

pub fn exploration_length_high(inputs: &BoundInputs) -> Result<ExplorationHigh> {
    inputs.validate()?;
    let s = &inputs.sigma_summary;
    let gamma_sq = s.lambda_min;
    let q_ratio = s.q_ratio();
    let term_d =
        4.0 * inputs.c_double_prime * q_ratio * inputs.sparsity as f64 * (inputs.dim as f64).ln();
    let coeff =
        8196.0 * inputs.tail_a * inputs.r * inputs.r * s.lambda_max / (gamma_sq * gamma_sq);
    let term_e = coeff * (inputs.horizon as f64).ln();
    let cond = s.condition_number();
    let eps = 1e-12 * (1.0 + q_ratio);
    Ok(ExplorationHigh {
        term_d,
        term_e,
        term_e_log_t: log_t_fixed_point(coeff),
        exploration_length: term_d.max(term_e),
        q_ratio,
        condition_number: cond,
        q_ratio_ge_one: q_ratio + eps >= 1.0,
        q_ratio_le_cond: q_ratio <= cond + eps,
    })
}

/// Smallest `t >= 1` with `t > coeff * ln(t)`.
fn log_t_fixed_point(coeff: f64) -> f64 {
    if coeff <= std::f64::consts::E {
        return 1.0;
    }
    let mut t = coeff * coeff.ln().max(1.0) * 2.0;
    for _ in 0..100 {
        t = coeff * t.ln();
    }
    t
}

/// The cone `C(S; alpha) = { v : ||v_{S^c}||_1 <= alpha ||v_S||_1 }`.
#[derive(Debug, Clone)]
pub struct ConeSpec {
    support: Vec<usize>,
    alpha: f64,
}

impl ConeSpec {
    pub fn new(mut support: Vec<usize>, alpha: f64) -> Result<Self> {
        support.sort_unstable();
        support.dedup();
        if support.is_empty() {
            return Err(Error::invalid("support", "must be non-empty"));
        }
        if !alpha.is_finite() || alpha < 1.0 {
            return Err(Error::invalid("alpha", format!("must be >= 1, got {alpha}")));
        }
        Ok(ConeSpec { support, alpha })
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn contains(&self, v: &DVector<f64>) -> bool {
        let on: f64 = self.support.iter().map(|&j| v[j].abs()).sum();
        let total: f64 = v.iter().map(|x| x.abs()).sum();
        total - on <= self.alpha * on
    }
}

/// Draws a unit-norm vector in the cone. Half the draws sit on the cone
/// boundary (the l1 constraint tight within 1e-9), the rest are interior with
/// a uniform slack factor.
pub fn sample_cone_vector<R: Rng + ?Sized>(
    cone: &ConeSpec,
    dim: usize,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if *cone.support.last().expect("non-empty support") >= dim {
        return Err(Error::invalid("support", "index out of range"));
    }
    let mut on_support = vec![false; dim];
    for &j in &cone.support {
        on_support[j] = true;
    }

    let mut v = DVector::zeros(dim);
    let mut on_l1 = 0.0;
    while on_l1 == 0.0 {
        for &j in &cone.support {
            v[j] = rng.sample::<f64, _>(StandardNormal);
        }
        on_l1 = cone.support.iter().map(|&j| v[j].abs()).sum();
    }

    let mut off_l1 = 0.0;
    for (j, flag) in on_support.iter().enumerate() {
        if !flag {
            v[j] = rng.sample::<f64, _>(StandardNormal);
            off_l1 += v[j].abs();
        }
    }

    if off_l1 > 0.0 {
        let tight = rng.random_bool(0.5);
        let slack = if tight { 1.0 - 1e-12 } else { rng.random::<f64>() };
        let scale = slack * cone.alpha * on_l1 / off_l1;
        for (j, flag) in on_support.iter().enumerate() {
            if !flag {
                v[j] *= scale;
            }
        }
    }

    let norm = v.norm();
    Ok(v / norm)
}

/// Sampled estimate of the restricted-eigenvalue constant: the minimum of
/// `Delta^T X X^T Delta / t` over unit-norm cone samples. An upper bound on
/// the true cone constant.
#[derive(Debug, Clone)]
pub struct ReEstimate {
    pub h_hat: f64,
    pub minimizer: DVector<f64>,
    pub samples: usize,
}

pub fn re_constant_estimate<R: Rng + ?Sized>(
    design: &DMatrix<f64>,
    cone: &ConeSpec,
    num_samples: usize,
    rng: &mut R,
) -> Result<ReEstimate> {
    if num_samples == 0 {
        return Err(Error::invalid("num_samples", "must be >= 1"));
    }
    let t = design.ncols();
    if t == 0 {
        return Err(Error::invalid("design", "needs at least one column"));
    }
    let mut h_hat = f64::INFINITY;
    let mut minimizer = DVector::zeros(design.nrows());
    for _ in 0..num_samples {
        let delta = sample_cone_vector(cone, design.nrows(), rng)?;
        let value = design.tr_mul(&delta).norm_squared() / t as f64;
        if value < h_hat {
            h_hat = value;
            minimizer = delta;
        }
    }
    Ok(ReEstimate {
        h_hat,
        minimizer,
        samples: num_samples,
    })
}

/// A design with i.i.d. standard Gaussian columns, for checks that need no raw
/// contexts.
pub fn gaussian_design<R: Rng + ?Sized>(dim: usize, t: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(dim, t, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Empirical tail check of the noise sup-norm bound
/// `||X eta||_inf <= sigma R sqrt(2 t log(2d/delta))`.
///
/// Design entries are drawn at the `+-R` extremes, the largest magnitudes the
/// bound admits. Returns the fraction of trials exceeding the bound; the
/// contract is `rate <= delta + 3 sqrt(delta / trials)`.
pub fn fact1_check<R: Rng + ?Sized>(
    dim: usize,
    t: usize,
    sigma: f64,
    r: f64,
    delta: f64,
    trials: usize,
    rng: &mut R,
) -> Result<f64> {
    if trials < 100 {
        return Err(Error::invalid("trials", "must be >= 100"));
    }
    if !(0.0..1.0).contains(&delta) || delta == 0.0 {
        return Err(Error::invalid("delta", "must be in (0,1)"));
    }
    let threshold = sigma * r * (2.0 * t as f64 * (2.0 * dim as f64 / delta).ln()).sqrt();
    let mut violations = 0usize;
    for _ in 0..trials {
        let eta = DVector::from_fn(t, |_, _| sigma * rng.sample::<f64, _>(StandardNormal));
        let mut sup = 0.0f64;
        for _ in 0..dim {
            let mut dot = 0.0;
            for i in 0..t {
                let entry = if rng.random_bool(0.5) { r } else { -r };
                dot += entry * eta[i];
            }
            sup = sup.max(dot.abs());
        }
        if sup > threshold {
            violations += 1;
        }
    }
    Ok(violations as f64 / trials as f64)
}

/// Empirical lower-tail check for weighted sums of sub-Gaussian variables:
/// `P(sum a_i X_i < -sqrt(2 sigma^2 ||a||^2 log(1/delta))) <= delta`.
pub fn fact2_check<R: Rng + ?Sized>(
    n: usize,
    sigma: f64,
    delta: f64,
    trials: usize,
    rng: &mut R,
) -> Result<f64> {
    if trials < 100 {
        return Err(Error::invalid("trials", "must be >= 100"));
    }
    let weights: DVector<f64> = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let threshold = (2.0 * sigma * sigma * weights.norm_squared() * (1.0 / delta).ln()).sqrt();
    let mut violations = 0usize;
    for _ in 0..trials {
        let sum: f64 = weights
            .iter()
            .map(|a| a * sigma * rng.sample::<f64, _>(StandardNormal))
            .sum();
        if sum < -threshold {
            violations += 1;
        }
    }
    Ok(violations as f64 / trials as f64)
}

/// One grid point of the matrix-Chernoff sanity check.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ChernoffCheck {
    pub delta: f64,
    pub empirical: f64,
    pub bound: f64,
}

/// Monte-Carlo check of the minimum-eigenvalue Chernoff bound for sums of
/// i.i.d. PSD rank-one summands `v v^T`, `v` uniform on `[-1, 1]^d`.
pub fn matrix_chernoff_check<R: Rng + ?Sized>(
    dim: usize,
    t: usize,
    trials: usize,
    deltas: &[f64],
    rng: &mut R,
) -> Result<Vec<ChernoffCheck>> {
    if trials < 100 {
        return Err(Error::invalid("trials", "must be >= 100"));
    }
    // E[v v^T] = I/3, lambda_max(v v^T) <= d.
    let psi = t as f64 / 3.0;
    let q = dim as f64;
    let mut minima = Vec::with_capacity(trials);
    for _ in 0..trials {
        let mut sum = DMatrix::zeros(dim, dim);
        for _ in 0..t {
            let v = DVector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0));
            sum.syger(1.0, &v, &v, 1.0);
        }
        let sym = (&sum + sum.transpose()) * 0.5;
        minima.push(sym.symmetric_eigenvalues().min());
    }
    Ok(deltas
        .iter()
        .map(|&delta| {
            let cutoff = (1.0 - delta) * psi;
            let empirical =
                minima.iter().filter(|m| **m <= cutoff).count() as f64 / trials as f64;
            let bound = dim as f64 * (-delta * delta * psi / (2.0 * q)).exp();
            ChernoffCheck {
                delta,
                empirical,
                bound,
            }
        })
        .collect())
}

/// Which analysis regime a bound is evaluated under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Low,
    High,
}

/// A recovery or regret bound value with its validity gate.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BoundValue {
    pub value: f64,
    pub c_value: f64,
    pub valid: bool,
}

fn regime_constant(t: usize, inputs: &BoundInputs, regime: Regime) -> Result<(f64, f64)> {
    match regime {
        Regime::Low => {
            let g0 = inputs.g0()?;
            let b = lemma2_bound(t, inputs)?;
            Ok((g0 * (1.0 - b.tau), exploration_length_low(inputs)?))
        }
        Regime::High => {
            let s = &inputs.sigma_summary;
            let gamma_sq = s.lambda_min;
            let c = gamma_sq / 64.0
                - inputs.r
                    * (2.0 * inputs.tail_a * s.lambda_max * (inputs.horizon as f64).ln()
                        / t as f64)
                        .sqrt();
            Ok((c, exploration_length_high(inputs)?.exploration_length))
        }
    }
}

/// Parameter-recovery bound `(3 sigma R / C) sqrt(2 k log(2d/delta) / t)`,
/// with the regime-specific constant `C`. Invalid below the exploration
/// length or when `C <= 0`.
pub fn recovery_bound(t: usize, inputs: &BoundInputs, regime: Regime) -> Result<BoundValue> {
    if t == 0 {
        return Err(Error::invalid("t", "rounds are 1-based"));
    }
    inputs.validate()?;
    let (c, t_e) = regime_constant(t, inputs, regime)?;
    let valid = (t as f64) > t_e && c > 0.0;
    let value = if c > 0.0 {
        3.0 * inputs.reward_sigma * inputs.r / c
            * (2.0 * inputs.sparsity as f64 * (2.0 * inputs.dim as f64 / inputs.delta).ln()
                / t as f64)
                .sqrt()
    } else {
        f64::INFINITY
    };
    Ok(BoundValue {
        value,
        c_value: c,
        valid,
    })
}

/// Cumulative-regret bound `2R (T_e + (6 sigma R / C) sqrt(2 k T log(2d)/delta))`,
/// with `C` evaluated at `t = T`. Reported as an overlay; the universal
/// constants inside `T_e` make its absolute level indicative only.
pub fn regret_bound(inputs: &BoundInputs, horizon: usize, regime: Regime) -> Result<BoundValue> {
    if horizon == 0 {
        return Err(Error::invalid("horizon", "must be >= 1"));
    }
    inputs.validate()?;
    let (c, t_e) = regime_constant(horizon, inputs, regime)?;
    let noiseless = inputs.reward_sigma == 0.0;
    let valid = noiseless || c > 0.0;
    let tail = if noiseless {
        0.0
    } else if c > 0.0 {
        6.0 * inputs.reward_sigma * inputs.r / c
            * (2.0 * inputs.sparsity as f64 * horizon as f64 * (2.0 * inputs.dim as f64).ln()
                / inputs.delta)
                .sqrt()
    } else {
        f64::INFINITY
    };
    Ok(BoundValue {
        value: 2.0 * inputs.r * (t_e + tail),
        c_value: c,
        valid,
    })
}

/// One lambda_min checkpoint compared against the Lemma-2 bound.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Lemma2Checkpoint {
    pub round: usize,
    pub lambda_min: f64,
    pub bound: f64,
    pub tau: f64,
    pub valid: bool,
    pub holds: bool,
}

/// Extracts the checkpoints of one trace and evaluates the bound at each.
pub fn lemma2_checkpoints(
    trace: &RegretTrace,
    inputs: &BoundInputs,
) -> Result<Vec<Lemma2Checkpoint>> {
    let mut out = Vec::new();
    for record in &trace.records {
        if let Some(lambda_min) = record.lambda_min {
            let b = lemma2_bound(record.round, inputs)?;
            out.push(Lemma2Checkpoint {
                round: record.round,
                lambda_min,
                bound: b.bound,
                tau: b.tau,
                valid: b.valid,
                holds: !b.valid || lambda_min >= b.bound,
            });
        }
    }
    Ok(out)
}

/// Aggregated Lemma-2 verdict over repeated seeded runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Lemma2Summary {
    pub runs: usize,
    /// Runs whose valid checkpoints all satisfy the bound.
    pub runs_all_valid_hold: usize,
    pub valid_checkpoints: usize,
    /// Runs whose fitted lambda_min-vs-t slope over the window is positive.
    pub positive_slopes: usize,
    /// Runs whose slope is at least `g0 / 2`.
    pub slopes_above_half_g0: usize,
    pub mean_slope: f64,
    pub g0: f64,
}

/// Least-squares slope of `lambda_min` against `t` over the window, per run,
/// plus the bound verdicts.
pub fn lemma2_summary(
    traces: &[RegretTrace],
    inputs: &BoundInputs,
    window: (usize, usize),
) -> Result<Lemma2Summary> {
    let g0 = inputs.g0()?;
    let mut runs_all_valid_hold = 0;
    let mut valid_checkpoints = 0;
    let mut positive_slopes = 0;
    let mut slopes_above = 0;
    let mut slope_sum = 0.0;
    for trace in traces {
        let checkpoints = lemma2_checkpoints(trace, inputs)?;
        if checkpoints.iter().filter(|c| c.valid).all(|c| c.holds) {
            runs_all_valid_hold += 1;
        }
        valid_checkpoints += checkpoints.iter().filter(|c| c.valid).count();

        let pts: Vec<(f64, f64)> = checkpoints
            .iter()
            .filter(|c| c.round >= window.0 && c.round <= window.1)
            .map(|c| (c.round as f64, c.lambda_min))
            .collect();
        if pts.len() < 2 {
            return Err(Error::invalid(
                "window",
                "needs at least two checkpoints per run",
            ));
        }
        let n = pts.len() as f64;
        let mean_x = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let mean_y = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
        let slope = sxy / sxx;
        slope_sum += slope;
        if slope > 0.0 {
            positive_slopes += 1;
        }
        if slope >= 0.5 * g0 {
            slopes_above += 1;
        }
    }
    Ok(Lemma2Summary {
        runs: traces.len(),
        runs_all_valid_hold,
        valid_checkpoints,
        positive_slopes,
        slopes_above_half_g0: slopes_above,
        mean_slope: slope_sum / traces.len().max(1) as f64,
        g0,
    })
}

/// One point of a bound curve, for plot overlays.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CurvePoint {
    pub t: usize,
    pub value: f64,
    pub valid: bool,
}

/// Full diagnostics output, serialized as `diagnostics.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub lambda0: Option<f64>,
    pub rayleigh_chain_ok: bool,
    pub exploration_low: f64,
    pub exploration_high: ExplorationHigh,
    pub lemma2: Option<Lemma2Summary>,
    pub re_h_hat: Option<f64>,
    pub re_samples: usize,
    pub recovery_curve: Vec<CurvePoint>,
    pub regret_curve: Vec<CurvePoint>,
    pub fact1: Vec<Fact1Result>,
    pub fact2: Vec<Fact1Result>,
    pub censored_variance_mc: CensoredMcResult,
    pub chernoff: Vec<ChernoffCheck>,
}

/// Result of one tail-probability check.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Fact1Result {
    pub delta: f64,
    pub rate: f64,
    pub threshold: f64,
    pub pass: bool,
}

/// Worst z-score of the censored-variance formula against Monte Carlo over a
/// grid of intervals and scales.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CensoredMcResult {
    pub grid_points: usize,
    pub samples_per_point: usize,
    pub max_abs_z: f64,
    pub pass: bool,
}

/// Checks the censored-variance formula against Monte Carlo on a 5x5 grid of
/// (interval, sigma1). Passes when every grid point agrees within three
/// standard errors of the empirical variance.
pub fn censored_variance_mc_check<R: Rng + ?Sized>(
    samples_per_point: usize,
    rng: &mut R,
) -> Result<CensoredMcResult> {
    use crate::perturbation::{censored_variance, CensoredVarianceInputs};

    // Interval shapes in units of sigma1: (a, b) with a <= 0 <= b.
    const SHAPES: [(f64, f64); 5] = [
        (0.0, 2.0),
        (-1.0, 1.0),
        (-2.0, 4.0),
        (-3.0, 0.5),
        (-8.0, 8.0),
    ];
    const SIGMAS: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 4.0];

    let mut max_abs_z = 0.0f64;
    for &sigma1 in &SIGMAS {
        for &(a_scale, b_scale) in &SHAPES {
            let (a, b) = (a_scale * sigma1, b_scale * sigma1);
            let analytic = censored_variance(&CensoredVarianceInputs::new(a, b, sigma1)?)?;
            let n = samples_per_point;
            let mut sum = 0.0;
            let mut samples = Vec::with_capacity(n);
            for _ in 0..n {
                let w = (sigma1 * rng.sample::<f64, _>(StandardNormal)).clamp(a, b);
                sum += w;
                samples.push(w);
            }
            let mean = sum / n as f64;
            let mut m2 = 0.0;
            let mut m4 = 0.0;
            for w in &samples {
                let c = w - mean;
                m2 += c * c;
                m4 += c * c * c * c;
            }
            m2 /= n as f64;
            m4 /= n as f64;
            let se = ((m4 - m2 * m2).max(f64::MIN_POSITIVE) / n as f64).sqrt();
            max_abs_z = max_abs_z.max((analytic - m2).abs() / se);
        }
    }
    Ok(CensoredMcResult {
        grid_points: SHAPES.len() * SIGMAS.len(),
        samples_per_point,
        max_abs_z,
        pass: max_abs_z <= 3.0,
    })
}

/// The perturbed-diversity constant, or `None` for general covariances where
/// it is not defined.
pub fn perturbation_lambda0_or_none(spec: &crate::perturbation::PerturbationSpec) -> Option<f64> {
    crate::perturbation::perturbed_diversity_lambda0(spec).ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamKey;

    fn test_inputs() -> BoundInputs {
        BoundInputs::isotropic(0.5, 1.0, 20.0f64.sqrt(), 3, 20, 500, 0.5, 0.05).unwrap()
    }

    #[test]
    fn min_eigenvalue_simple_cases() {
        assert!((min_symmetric_eigenvalue(&DMatrix::identity(5, 5)).unwrap() - 1.0).abs() < 1e-12);
        let diag = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 3.0]));
        assert!((min_symmetric_eigenvalue(&diag).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn min_eigenvalue_rejects_asymmetric() {
        let mut m = DMatrix::identity(3, 3);
        m[(0, 1)] = 0.5;
        assert!(matches!(
            min_symmetric_eigenvalue(&m),
            Err(Error::NotSymmetric { .. })
        ));
    }

    #[test]
    fn min_eigenvalue_matches_power_iteration() {
        let mut rng = StreamKey::new(60).rng();
        let raw = DMatrix::from_fn(10, 10, |_, _| rng.random_range(-1.0..1.0));
        let sym = (&raw + raw.transpose()) * 0.5;
        let fast = min_symmetric_eigenvalue(&sym).unwrap();

        // Oracle: power iteration on (cI - M), c a Gershgorin upper bound.
        let c = (0..10)
            .map(|i| sym.row(i).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max);
        let shifted = DMatrix::identity(10, 10) * c - &sym;
        let mut v = DVector::from_element(10, 1.0).normalize();
        let mut eig = 0.0;
        for _ in 0..20_000 {
            let w = &shifted * &v;
            eig = w.norm();
            v = w / eig;
        }
        let oracle = c - eig;
        assert!(
            (fast - oracle).abs() < 1e-8 * (1.0 + oracle.abs()),
            "fast {fast} vs oracle {oracle}"
        );
    }

    #[test]
    fn lemma2_bound_gates_and_scales() {
        let inputs = test_inputs();
        let b = lemma2_bound(1, &inputs).unwrap();
        assert!(!b.valid);

        let t0 = 1000;
        let tau1 = lemma2_bound(t0, &inputs).unwrap().tau;
        let tau2 = lemma2_bound(4 * t0, &inputs).unwrap().tau;
        assert!((tau2 - tau1 / 2.0).abs() < 1e-12);
    }

    #[test]
    fn lemma2_bound_matches_direct_formula() {
        let inputs =
            BoundInputs::isotropic(0.5, 1.0, (10.0f64).sqrt(), 3, 10, 1000, 0.5, 0.05).unwrap();
        let t = 5000;
        let b = lemma2_bound(t, &inputs).unwrap();

        let g0 = g_lower_bound(1.0, 0.5).unwrap();
        let log_dt = (10.0f64 * 1000.0).ln();
        let tau = (2.0 * 10.0 * log_dt / (g0 * t as f64)).sqrt();
        assert!((b.tau - tau).abs() < 1e-12);
        assert!((b.bound - g0 * (1.0 - tau) * t as f64).abs() < 1e-9);
    }

    #[test]
    fn exploration_low_homogeneity() {
        let base = test_inputs();
        let mut doubled_r = base;
        doubled_r.r *= 2.0;
        let a = exploration_length_low(&base).unwrap();
        let b = exploration_length_low(&doubled_r).unwrap();
        assert!((b / a - 4.0).abs() < 1e-12);

        // d -> d^2 at fixed T scales by log(d^2 T)/log(d T).
        let mut squared_d = base;
        squared_d.dim = base.dim * base.dim;
        let c = exploration_length_low(&squared_d).unwrap();
        let expected = ((base.dim * base.dim * base.horizon) as f64).ln()
            / ((base.dim * base.horizon) as f64).ln();
        assert!((c / a - expected).abs() < 1e-12);
    }

    #[test]
    fn exploration_high_isotropic_ratio_is_one() {
        for sigma1 in [0.1, 0.5, 2.0] {
            let inputs =
                BoundInputs::isotropic(sigma1, 1.0, 2.0, 5, 100, 200, 0.5, 0.05).unwrap();
            let high = exploration_length_high(&inputs).unwrap();
            assert!((high.q_ratio - 1.0).abs() < 1e-12);
            assert!(high.q_ratio_ge_one && high.q_ratio_le_cond);
            let expected_d = 4.0 * 5.0 * (100.0f64).ln();
            assert!((high.term_d - expected_d).abs() < 1e-9, "sigma1 {sigma1}");
        }
    }

    #[test]
    fn exploration_high_covariance_scaling() {
        let sigma = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0]));
        let base = BoundInputs {
            sigma_summary: SigmaSummary::from_covariance(&sigma).unwrap(),
            ..test_inputs()
        };
        let high = exploration_length_high(&base).unwrap();
        assert!((high.q_ratio - 4.0).abs() < 1e-12);
        assert!((high.condition_number - 4.0).abs() < 1e-12);

        let scaled = BoundInputs {
            sigma_summary: SigmaSummary::from_covariance(&(sigma * 3.0)).unwrap(),
            ..base
        };
        let high_scaled = exploration_length_high(&scaled).unwrap();
        assert!((high_scaled.term_d - high.term_d).abs() < 1e-9);
        assert!((high_scaled.term_e - high.term_e / 3.0).abs() < 1e-9);
    }

    #[test]
    fn cone_sampler_soundness() {
        let cone = ConeSpec::new(vec![0, 3, 4], 3.0).unwrap();
        let mut rng = StreamKey::new(61).rng();
        let mut saw_tight = false;
        for _ in 0..500 {
            let v = sample_cone_vector(&cone, 12, &mut rng).unwrap();
            assert!((v.norm() - 1.0).abs() < 1e-12);
            assert!(cone.contains(&v));
            let on: f64 = cone.support().iter().map(|&j| v[j].abs()).sum();
            let off: f64 = v.iter().map(|x| x.abs()).sum::<f64>() - on;
            if (off / on - cone.alpha()).abs() < 1e-9 {
                saw_tight = true;
            }
        }
        assert!(saw_tight, "boundary-tight draws never appeared");
    }

    #[test]
    fn support_only_vectors_are_in_cone() {
        let cone = ConeSpec::new(vec![1, 2], 3.0).unwrap();
        let mut v = DVector::zeros(5);
        v[1] = 0.6;
        v[2] = -0.8;
        assert!(cone.contains(&v));
    }

    #[test]
    fn re_estimate_identity_design() {
        let t = 8;
        let design = DMatrix::<f64>::identity(t, t);
        let cone = ConeSpec::new(vec![0, 1], 3.0).unwrap();
        let mut rng = StreamKey::new(62).rng();
        let est = re_constant_estimate(&design, &cone, 200, &mut rng).unwrap();
        assert!((est.h_hat - 1.0 / t as f64).abs() < 1e-12);
    }

    #[test]
    fn re_estimate_null_design_and_monotonicity() {
        let cone = ConeSpec::new(vec![0], 3.0).unwrap();
        let zero = DMatrix::<f64>::zeros(6, 4);
        let mut rng = StreamKey::new(63).rng();
        assert_eq!(re_constant_estimate(&zero, &cone, 50, &mut rng).unwrap().h_hat, 0.0);

        // Nested sample sets share the stream prefix.
        let mut rng = StreamKey::new(64).rng();
        let design = gaussian_design(10, 8, &mut rng);
        let small = re_constant_estimate(&design, &cone, 100, &mut StreamKey::new(65).rng())
            .unwrap()
            .h_hat;
        let large = re_constant_estimate(&design, &cone, 400, &mut StreamKey::new(65).rng())
            .unwrap()
            .h_hat;
        assert!(large <= small);
    }

    #[test]
    fn gaussian_design_re_is_positive() {
        let cone = ConeSpec::new((0..5).collect(), 3.0).unwrap();
        let mut rng = StreamKey::new(66).rng();
        let design = gaussian_design(100, 80, &mut rng);
        let est = re_constant_estimate(&design, &cone, 1000, &mut rng).unwrap();
        assert!(est.h_hat > 0.0);
    }

    #[test]
    fn fact1_zero_noise_never_violates() {
        let mut rng = StreamKey::new(67).rng();
        let rate = fact1_check(10, 20, 0.0, 1.0, 0.05, 200, &mut rng).unwrap();
        assert_eq!(rate, 0.0);
    }

    #[test]
    fn fact1_scale_equivariance() {
        let a = fact1_check(20, 30, 1.0, 1.0, 0.1, 500, &mut StreamKey::new(68).rng()).unwrap();
        let b = fact1_check(20, 30, 2.0, 1.0, 0.1, 500, &mut StreamKey::new(68).rng()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn fact2_rate_below_delta() {
        let mut rng = StreamKey::new(69).rng();
        let rate = fact2_check(50, 1.0, 0.05, 2000, &mut rng).unwrap();
        assert!(rate <= 0.05 + 3.0 * (0.05f64 / 2000.0).sqrt());
    }

    #[test]
    fn chernoff_bound_holds_on_grid() {
        let mut rng = StreamKey::new(70).rng();
        let checks = matrix_chernoff_check(5, 200, 300, &[0.1, 0.3, 0.5], &mut rng).unwrap();
        for check in checks {
            assert!(
                check.empirical <= check.bound + 1e-12,
                "delta {}: empirical {} > bound {}",
                check.delta,
                check.empirical,
                check.bound
            );
        }
    }

    #[test]
    fn recovery_bound_scales_as_inverse_sqrt_t() {
        // High regime at large t: C is nearly t-independent.
        let inputs = BoundInputs::isotropic(1.0, 2.0, 2.0, 5, 100, 100, 0.5, 0.05).unwrap();
        let t = 10_000_000_000;
        let v1 = recovery_bound(t, &inputs, Regime::High).unwrap();
        let v4 = recovery_bound(4 * t, &inputs, Regime::High).unwrap();
        assert!((v4.value / v1.value - 0.5).abs() < 0.01);
    }

    #[test]
    fn recovery_bound_sign_gate() {
        let inputs = BoundInputs::isotropic(0.1, 1.0, 5.0, 5, 100, 100, 0.5, 0.05).unwrap();
        // gamma^2/64 is tiny against R sqrt(log T / t) at small t.
        let v = recovery_bound(2, &inputs, Regime::High).unwrap();
        assert!(v.c_value <= 0.0);
        assert!(!v.valid);
    }

    #[test]
    fn recovery_bound_matches_direct_formula() {
        let inputs = test_inputs();
        let t = 6000;
        let v = recovery_bound(t, &inputs, Regime::Low).unwrap();
        let g0 = inputs.g0().unwrap();
        let tau = lemma2_bound(t, &inputs).unwrap().tau;
        let c = g0 * (1.0 - tau);
        let expected = 3.0 * inputs.reward_sigma * inputs.r / c
            * (2.0 * 3.0 * (2.0 * 20.0f64 / 0.05).ln() / t as f64).sqrt();
        assert!((v.value - expected).abs() < 1e-9 * (1.0 + expected));
    }

    #[test]
    fn regret_bound_noiseless_collapse_and_monotonicity() {
        let mut inputs = test_inputs();
        inputs.reward_sigma = 0.0;
        let v = regret_bound(&inputs, 500, Regime::Low).unwrap();
        let expected = 2.0 * inputs.r * exploration_length_low(&inputs).unwrap();
        assert!((v.value - expected).abs() < 1e-9);

        // Past the exploration transition the sqrt(T) tail dominates the
        // log-growth of T_e and the settling of C.
        let inputs = BoundInputs::isotropic(2.0, 2.0, 2.0, 5, 20, 100_000, 0.5, 0.05).unwrap();
        let mut last = 0.0;
        for horizon in [100_000, 200_000, 400_000] {
            let mut with_t = inputs;
            with_t.horizon = horizon;
            let v = regret_bound(&with_t, horizon, Regime::Low).unwrap();
            assert!(v.valid);
            assert!(v.value > last);
            last = v.value;
        }
    }

    #[test]
    fn rayleigh_chain_is_enforced() {
        let bad = SigmaSummary {
            lambda_max: 1.0,
            lambda_min: 2.0,
            max_diag: 1.5,
            min_diag: 1.2,
        };
        assert!(bad.validate().is_err());

        let sigma = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0]));
        let ok = SigmaSummary::from_covariance(&sigma).unwrap();
        assert!(ok.validate().is_ok());
        assert!((ok.q_ratio() - 4.0).abs() < 1e-12);
    }
}
