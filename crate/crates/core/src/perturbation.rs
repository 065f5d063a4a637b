//! The perturbed adversary's randomization.
//!
//! Contexts are perturbed by Gaussian noise and censored coordinate-wise into
//! `[-q_j, q_j]`. Censoring keeps contexts bounded but leaves enough residual
//! randomness for diversity: the variance of a censored Gaussian over any
//! interval of length `2q` containing zero is at least the variance over the
//! worst placement `[0, 2q]`, which yields the perturbed-diversity constant
//! `lambda_0` returned by [`perturbed_diversity_lambda0`].

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use statrs::function::erf::{erf, erfc};
use std::f64::consts::{PI, SQRT_2};

use crate::{Error, Result};

/// The perturbation law: isotropic `N(0, sigma1^2 I)` or general `N(0, Sigma)`.
#[derive(Debug, Clone)]
pub enum PerturbationKind {
    Isotropic { sigma1: f64 },
    General {
        sigma: DMatrix<f64>,
        chol_lower: DMatrix<f64>,
    },
}

/// Perturbation law plus per-coordinate censoring bounds `q_j` and the
/// declared context energy cap `R`. Censoring guarantees
/// `||x||_2 <= sqrt(sum q_j^2)`, which is the default cap.
#[derive(Debug, Clone)]
pub struct PerturbationSpec {
    kind: PerturbationKind,
    censor_bounds: Vec<f64>,
    energy_cap: f64,
}

/// Default censoring bound for contexts with coordinates in `[0, 1]`:
/// censoring is rare but active.
pub fn default_censor_bounds(dim: usize, sigma1: f64) -> Vec<f64> {
    vec![1.0 + 4.0 * sigma1; dim]
}

impl PerturbationSpec {
    pub fn isotropic(
        sigma1: f64,
        censor_bounds: Vec<f64>,
        energy_cap: Option<f64>,
    ) -> Result<Self> {
        if !sigma1.is_finite() || sigma1 <= 0.0 {
            return Err(Error::invalid("sigma1", format!("must be > 0, got {sigma1}")));
        }
        Self::build(PerturbationKind::Isotropic { sigma1 }, censor_bounds, energy_cap)
    }

    pub fn general(
        sigma: DMatrix<f64>,
        censor_bounds: Vec<f64>,
        energy_cap: Option<f64>,
    ) -> Result<Self> {
        if sigma.nrows() != sigma.ncols() || sigma.nrows() != censor_bounds.len() {
            return Err(Error::DimensionMismatch {
                context: "covariance vs censor bounds",
                expected: censor_bounds.len(),
                actual: sigma.nrows(),
            });
        }
        let max_asym = (&sigma - sigma.transpose()).abs().max();
        if max_asym > 1e-10 * (1.0 + sigma.abs().max()) {
            return Err(Error::NotSymmetric { deviation: max_asym });
        }
        let chol = Cholesky::new(sigma.clone()).ok_or(Error::NotPositiveDefinite)?;
        Self::build(
            PerturbationKind::General {
                sigma,
                chol_lower: chol.l(),
            },
            censor_bounds,
            energy_cap,
        )
    }

    fn build(
        kind: PerturbationKind,
        censor_bounds: Vec<f64>,
        energy_cap: Option<f64>,
    ) -> Result<Self> {
        if censor_bounds.is_empty() {
            return Err(Error::invalid("censor_bounds", "must be non-empty"));
        }
        if let Some(&bad) = censor_bounds.iter().find(|q| !q.is_finite() || **q <= 0.0) {
            return Err(Error::invalid("censor_bounds", format!("all q_j must be > 0, got {bad}")));
        }
        let default_cap = censor_bounds.iter().map(|q| q * q).sum::<f64>().sqrt();
        let energy_cap = energy_cap.unwrap_or(default_cap);
        if !energy_cap.is_finite() || energy_cap <= 0.0 {
            return Err(Error::invalid("energy_cap", "must be > 0"));
        }
        Ok(PerturbationSpec {
            kind,
            censor_bounds,
            energy_cap,
        })
    }

    pub fn dim(&self) -> usize {
        self.censor_bounds.len()
    }

    pub fn kind(&self) -> &PerturbationKind {
        &self.kind
    }

    /// Isotropic standard deviation, if this spec is isotropic.
    pub fn sigma1(&self) -> Option<f64> {
        match self.kind {
            PerturbationKind::Isotropic { sigma1 } => Some(sigma1),
            PerturbationKind::General { .. } => None,
        }
    }

    pub fn censor_bounds(&self) -> &[f64] {
        &self.censor_bounds
    }

    pub fn q_min(&self) -> f64 {
        self.censor_bounds.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn q_max(&self) -> f64 {
        self.censor_bounds.iter().copied().fold(0.0, f64::max)
    }

    pub fn energy_cap(&self) -> f64 {
        self.energy_cap
    }
}

/// Draws one perturbation vector `e ~ N(0, sigma1^2 I)` or `N(0, Sigma)`.
pub fn sample_perturbation<R: Rng + ?Sized>(spec: &PerturbationSpec, rng: &mut R) -> DVector<f64> {
    let z = DVector::from_fn(spec.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
    match &spec.kind {
        PerturbationKind::Isotropic { sigma1 } => z * *sigma1,
        PerturbationKind::General { chol_lower, .. } => chol_lower * z,
    }
}

/// Censors the perturbed context coordinate-wise:
/// `x_j = clamp(mu_j + e_j, -q_j, q_j)`.
///
/// Requires `|mu_j| <= q_j` for every coordinate; violations are reported with
/// the offending indices.
pub fn censor_context(mu: &DVector<f64>, e: &DVector<f64>, q: &[f64]) -> Result<DVector<f64>> {
    if mu.len() != e.len() || mu.len() != q.len() {
        return Err(Error::DimensionMismatch {
            context: "censor_context inputs",
            expected: mu.len(),
            actual: if e.len() != mu.len() { e.len() } else { q.len() },
        });
    }
    let offenders: Vec<usize> = (0..mu.len()).filter(|&j| mu[j].abs() > q[j]).collect();
    if !offenders.is_empty() {
        return Err(Error::CensorPrecondition { coords: offenders });
    }
    Ok(DVector::from_fn(mu.len(), |j, _| {
        (mu[j] + e[j]).clamp(-q[j], q[j])
    }))
}

/// Interval `[a, b]` with `a <= 0 <= b` and the Gaussian scale, for the
/// censored-variance computation.
#[derive(Debug, Clone, Copy)]
pub struct CensoredVarianceInputs {
    pub a: f64,
    pub b: f64,
    pub sigma1: f64,
}

impl CensoredVarianceInputs {
    pub fn new(a: f64, b: f64, sigma1: f64) -> Result<Self> {
        if !sigma1.is_finite() || sigma1 <= 0.0 {
            return Err(Error::invalid("sigma1", format!("must be > 0, got {sigma1}")));
        }
        if b < a {
            return Err(Error::invalid("interval", format!("b < a: [{a}, {b}]")));
        }
        if !(a <= 0.0 && 0.0 <= b) || !a.is_finite() || !b.is_finite() {
            return Err(Error::invalid("interval", format!("need a <= 0 <= b, got [{a}, {b}]")));
        }
        Ok(CensoredVarianceInputs { a, b, sigma1 })
    }
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Variance of `clamp(e, a, b)` for `e ~ N(0, sigma1^2)`, via the law of total
/// variance over the three censoring outcomes. Truncated-Gaussian moments use
/// the standard sign convention with denominator `Phi(beta) - Phi(alpha)`;
/// tail probabilities go through `erfc` so wide intervals stay accurate.
pub fn censored_variance(inputs: &CensoredVarianceInputs) -> Result<f64> {
    let CensoredVarianceInputs { a, b, sigma1 } = *inputs;
    if b - a == 0.0 {
        return Ok(0.0);
    }
    let alpha = a / sigma1;
    let beta = b / sigma1;
    let p_lo = 0.5 * erfc(-alpha / SQRT_2); // P(e < a)
    let p_hi = 0.5 * erfc(beta / SQRT_2); // P(e > b)
    let p_mid = 0.5 * (erf(beta / SQRT_2) - erf(alpha / SQRT_2));

    if p_mid <= 0.0 {
        let mean = a * p_lo + b * p_hi;
        let second = a * a * p_lo + b * b * p_hi;
        return Ok((second - mean * mean).max(0.0));
    }

    let phi_a = std_normal_pdf(alpha);
    let phi_b = std_normal_pdf(beta);
    let rho = (phi_a - phi_b) / p_mid;
    let trunc_mean = sigma1 * rho;
    let trunc_var = sigma1 * sigma1 * (1.0 + (alpha * phi_a - beta * phi_b) / p_mid - rho * rho);

    let mean = a * p_lo + b * p_hi + p_mid * trunc_mean;
    let within = p_mid * trunc_var;
    let between = a * a * p_lo + b * b * p_hi + p_mid * trunc_mean * trunc_mean - mean * mean;
    Ok((within + between).max(0.0))
}

/// Worst-placement lower bound on the censored variance over intervals of
/// length `2 q_min` containing zero: the variance censored in `[0, 2 q_min]`.
pub fn g_lower_bound(q_min: f64, sigma1: f64) -> Result<f64> {
    if !q_min.is_finite() || q_min <= 0.0 {
        return Err(Error::invalid("q_min", format!("must be > 0, got {q_min}")));
    }
    if q_min < sigma1 {
        log::warn!(
            "censoring bound q_min = {q_min} below sigma1 = {sigma1}; \
             the lower bound is evaluated outside its stated condition q >= sigma1"
        );
    }
    censored_variance(&CensoredVarianceInputs::new(0.0, 2.0 * q_min, sigma1)?)
}

/// The perturbed-diversity constant: a lower bound `lambda_0` on the minimum
/// eigenvalue of `E[x x^T]` for a censored isotropically perturbed context.
/// Only defined for isotropic perturbations.
pub fn perturbed_diversity_lambda0(spec: &PerturbationSpec) -> Result<f64> {
    match spec.kind {
        PerturbationKind::Isotropic { sigma1 } => g_lower_bound(spec.q_min(), sigma1),
        PerturbationKind::General { .. } => Err(Error::UnsupportedCovariance),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    use crate::rng::StreamKey;

    /// Empirical variance plus its standard error (delta method on the 4th
    /// central moment).
    pub(crate) fn mc_variance(samples: &[f64]) -> (f64, f64) {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let m2 = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let m4 = samples.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
        let se = ((m4 - m2 * m2).max(0.0) / n).sqrt();
        (m2, se)
    }

    fn mc_censored_variance(a: f64, b: f64, sigma1: f64, n: usize, seed: u64) -> (f64, f64) {
        let mut rng = StreamKey::new(seed).rng();
        let samples: Vec<f64> = (0..n)
            .map(|_| (sigma1 * rng.sample::<f64, _>(StandardNormal)).clamp(a, b))
            .collect();
        mc_variance(&samples)
    }

    const ONE_SIDED_LIMIT: f64 = 0.5 - 1.0 / (2.0 * PI); // Var(max(Z, 0))

    #[test]
    fn censor_interior_and_clamp_cases() {
        let q = [1.0];
        let x = censor_context(&DVector::from_vec(vec![0.5]), &DVector::from_vec(vec![0.3]), &q)
            .unwrap();
        assert!((x[0] - 0.8).abs() < 1e-15);

        let x = censor_context(&DVector::from_vec(vec![0.9]), &DVector::from_vec(vec![0.5]), &q)
            .unwrap();
        assert_eq!(x[0], 1.0);

        let x = censor_context(&DVector::from_vec(vec![-0.9]), &DVector::from_vec(vec![-0.4]), &q)
            .unwrap();
        assert_eq!(x[0], -1.0);
    }

    #[test]
    fn censor_rejects_out_of_bound_mu() {
        let err = censor_context(
            &DVector::from_vec(vec![0.0, 2.0, -3.0]),
            &DVector::zeros(3),
            &[1.0, 1.0, 1.0],
        )
        .unwrap_err();
        match err {
            Error::CensorPrecondition { coords } => assert_eq!(coords, vec![1, 2]),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn censored_variance_degenerate_interval_is_zero() {
        let v = censored_variance(&CensoredVarianceInputs::new(0.0, 0.0, 1.0).unwrap()).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn censored_variance_wide_interval_recovers_sigma_sq() {
        for sigma1 in [0.3, 1.0, 2.5] {
            let v = censored_variance(
                &CensoredVarianceInputs::new(-8.0 * sigma1, 8.0 * sigma1, sigma1).unwrap(),
            )
            .unwrap();
            let rel = (v - sigma1 * sigma1).abs() / (sigma1 * sigma1);
            assert!(rel < 1e-4, "sigma1 {sigma1}: rel {rel:.2e}");
        }
    }

    #[test]
    fn censored_variance_one_sided_closed_form() {
        let v = censored_variance(&CensoredVarianceInputs::new(0.0, 10.0, 1.0).unwrap()).unwrap();
        assert!((v - ONE_SIDED_LIMIT).abs() < 1e-9, "got {v}");
    }

    #[test]
    fn censored_variance_rejects_bad_intervals() {
        assert!(CensoredVarianceInputs::new(0.5, 1.0, 1.0).is_err());
        assert!(CensoredVarianceInputs::new(-1.0, -0.5, 1.0).is_err());
        assert!(CensoredVarianceInputs::new(1.0, -1.0, 1.0).is_err());
    }

    #[test]
    fn censored_variance_matches_monte_carlo() {
        for (i, &(a, b, sigma1)) in [(-0.5, 0.5, 1.0), (0.0, 2.0, 0.5), (-3.0, 1.0, 2.0)]
            .iter()
            .enumerate()
        {
            let analytic =
                censored_variance(&CensoredVarianceInputs::new(a, b, sigma1).unwrap()).unwrap();
            let (empirical, se) = mc_censored_variance(a, b, sigma1, 1_000_000, 900 + i as u64);
            assert!(
                (analytic - empirical).abs() <= 3.0 * se,
                "[{a},{b}] sigma1={sigma1}: analytic {analytic:.6} vs mc {empirical:.6} (se {se:.2e})"
            );
        }
    }

    #[test]
    fn censored_variance_monotone_in_b() {
        let mut last = 0.0;
        for i in 0..40 {
            let b = 0.1 * (i + 1) as f64;
            let v = censored_variance(&CensoredVarianceInputs::new(0.0, b, 1.0).unwrap()).unwrap();
            assert!(v >= last - 1e-12, "b={b}: {v} < {last}");
            last = v;
        }
    }

    #[test]
    fn censored_variance_minimized_at_endpoint_placements() {
        // Fixed length L, placements a in [-L, 0]: minimum at a = 0 or a = -L.
        for ratio in [1.0, 2.0, 4.0] {
            let sigma1 = 0.7;
            let len = ratio * sigma1;
            let values: Vec<f64> = (0..=40)
                .map(|i| {
                    let a = -len * (i as f64) / 40.0;
                    censored_variance(&CensoredVarianceInputs::new(a, a + len, sigma1).unwrap())
                        .unwrap()
                })
                .collect();
            let min = values.iter().copied().fold(f64::INFINITY, f64::min);
            let at_ends = values[0].min(values[40]);
            assert!(
                at_ends <= min + 1e-12,
                "L/sigma1={ratio}: interior placement beat the endpoints"
            );
        }
    }

    #[test]
    fn g_lower_bound_examples() {
        let v = g_lower_bound(10.0, 1.0).unwrap();
        assert!((v - ONE_SIDED_LIMIT).abs() < 1e-6);

        assert!(g_lower_bound(1.0, 1.0).unwrap() < g_lower_bound(2.0, 1.0).unwrap());
        assert!(g_lower_bound(1.0, 1.0).unwrap() > 0.0);
    }

    #[test]
    fn lambda0_uses_min_censor_bound() {
        let spec = PerturbationSpec::isotropic(1.0, vec![10.0, 12.0], None).unwrap();
        let v = perturbed_diversity_lambda0(&spec).unwrap();
        assert!((v - ONE_SIDED_LIMIT).abs() < 1e-6);

        let spec = PerturbationSpec::isotropic(0.1, vec![0.1, 0.5], None).unwrap();
        let direct =
            censored_variance(&CensoredVarianceInputs::new(0.0, 0.2, 0.1).unwrap()).unwrap();
        assert_eq!(perturbed_diversity_lambda0(&spec).unwrap(), direct);
    }

    #[test]
    fn lambda0_rejects_general_covariance() {
        let spec =
            PerturbationSpec::general(DMatrix::identity(2, 2), vec![1.0, 1.0], None).unwrap();
        assert!(matches!(
            perturbed_diversity_lambda0(&spec),
            Err(Error::UnsupportedCovariance)
        ));
    }

    #[test]
    fn isotropic_sampling_moments() {
        let spec = PerturbationSpec::isotropic(1.0, vec![5.0; 4], None).unwrap();
        let mut rng = StreamKey::new(31).rng();
        let n = 1_000_000;
        let mut per_coord: Vec<Vec<f64>> = vec![Vec::with_capacity(n); 4];
        for _ in 0..n {
            let e = sample_perturbation(&spec, &mut rng);
            for j in 0..4 {
                per_coord[j].push(e[j]);
            }
        }
        for (j, coord) in per_coord.iter().enumerate() {
            let (var, _) = mc_variance(coord);
            assert!((var - 1.0).abs() < 0.01, "coordinate {j}: var {var}");
        }
    }

    #[test]
    fn general_sampling_covariance() {
        let sigma = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0]));
        let spec = PerturbationSpec::general(sigma, vec![20.0, 20.0], None).unwrap();
        let mut rng = StreamKey::new(32).rng();
        let n = 1_000_000;
        let (mut c00, mut c01, mut c11) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let e = sample_perturbation(&spec, &mut rng);
            c00 += e[0] * e[0];
            c01 += e[0] * e[1];
            c11 += e[1] * e[1];
        }
        let nf = n as f64;
        assert!((c00 / nf - 1.0).abs() < 0.02);
        assert!((c11 / nf - 4.0).abs() < 0.08);
        assert!((c01 / nf).abs() < 0.02);
    }

    #[test]
    fn vanishing_sigma_yields_near_zero_samples() {
        assert!(PerturbationSpec::isotropic(0.0, vec![1.0], None).is_err());
        let spec = PerturbationSpec::isotropic(1e-12, vec![1.0], None).unwrap();
        let e = sample_perturbation(&spec, &mut StreamKey::new(5).rng());
        assert!(e.amax() < 1e-10);
    }

    #[test]
    fn non_pd_covariance_is_rejected() {
        let sigma = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -0.5]));
        assert!(matches!(
            PerturbationSpec::general(sigma, vec![1.0, 1.0], None),
            Err(Error::NotPositiveDefinite)
        ));
    }

    #[test]
    fn default_energy_cap_is_censor_norm() {
        let spec = PerturbationSpec::isotropic(0.5, vec![3.0, 4.0], None).unwrap();
        assert!((spec.energy_cap() - 5.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn censoring_respects_bounds(
            mu_frac in proptest::collection::vec(-1.0f64..1.0, 1..6),
            e in proptest::collection::vec(-5.0f64..5.0, 6),
            q in proptest::collection::vec(0.1f64..3.0, 6),
        ) {
            let d = mu_frac.len();
            let mu = DVector::from_fn(d, |j, _| mu_frac[j] * q[j]);
            let e = DVector::from_fn(d, |j, _| e[j]);
            let x = censor_context(&mu, &e, &q[..d]).unwrap();
            for j in 0..d {
                prop_assert!(x[j].abs() <= q[j]);
                if (mu[j] + e[j]).abs() <= q[j] {
                    prop_assert_eq!(x[j], mu[j] + e[j]);
                }
            }
        }

        #[test]
        fn censored_variance_never_exceeds_sigma_sq(
            a in -6.0f64..0.0,
            b in 0.0f64..6.0,
            sigma1 in 0.05f64..4.0,
        ) {
            let v = censored_variance(&CensoredVarianceInputs::new(a, b, sigma1).unwrap()).unwrap();
            prop_assert!(v <= sigma1 * sigma1 * (1.0 + 1e-12));
        }
    }
}
