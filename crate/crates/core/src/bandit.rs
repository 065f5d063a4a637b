//! The greedy online-Lasso learner and the SVD-preconditioned baseline.
//!
//! Each round the learner picks the arm maximizing `<x, theta_t>`, observes
//! the chosen arm's reward, appends the observation to its history, and refits
//! theta by Lasso with the schedule weight `lambda_t = 2 sigma R sqrt(2 t
//! log(2d/delta))`, warm-started from the previous estimate. The
//! preconditioned variant left-transforms the regression each round so the
//! design's nonzero singular values all become one.

use nalgebra::{DMatrix, DVector};

use crate::diagnostics::min_symmetric_eigenvalue;
use crate::environment::{
    apply_perturbed_adversary, argmax_inner_product, best_arm, generate_raw_contexts,
    realize_reward, BanditInstance, ContextStrategy, RoundContexts,
};
use crate::lasso::{fit_lasso, LassoProblem, SolverSettings};
use crate::perturbation::PerturbationSpec;
use crate::rng::EpisodeStreams;
use crate::{Error, Result};

/// Chosen contexts (columns, in round order) and observed rewards.
#[derive(Debug, Clone)]
pub struct History {
    dim: usize,
    columns: Vec<f64>,
    rewards: Vec<f64>,
}

impl History {
    pub fn new(dim: usize) -> Self {
        History {
            dim,
            columns: Vec::new(),
            rewards: Vec::new(),
        }
    }

    pub fn push(&mut self, x: &DVector<f64>, reward: f64) {
        assert_eq!(x.len(), self.dim, "context dimension mismatch");
        self.columns.extend_from_slice(x.as_slice());
        self.rewards.push(reward);
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The design matrix X (d x t), one chosen context per column.
    pub fn design(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.dim, self.len(), &self.columns)
    }

    pub fn rewards(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.rewards)
    }

    /// Column `index` (0-based round order).
    pub fn context(&self, index: usize) -> DVector<f64> {
        DVector::from_column_slice(&self.columns[index * self.dim..(index + 1) * self.dim])
    }
}

/// Inputs of the regularization schedule `lambda_t = multiplier * 2 sigma R
/// sqrt(2 t log(2d/delta))`. `r` is the design-entry bound the schedule
/// assumes; the harness defaults it to the largest censoring bound.
#[derive(Debug, Clone, Copy)]
pub struct ScheduleParams {
    pub sigma: f64,
    pub r: f64,
    pub dim: usize,
    pub delta: f64,
    pub multiplier: f64,
}

impl ScheduleParams {
    pub fn new(sigma: f64, r: f64, dim: usize, delta: f64) -> Result<Self> {
        let params = ScheduleParams {
            sigma,
            r,
            dim,
            delta,
            multiplier: 1.0,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn with_multiplier(mut self, multiplier: f64) -> Result<Self> {
        if !multiplier.is_finite() || multiplier < 0.0 {
            return Err(Error::invalid("multiplier", "must be >= 0"));
        }
        self.multiplier = multiplier;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.delta.is_finite() || self.delta <= 0.0 || self.delta >= 1.0 {
            return Err(Error::invalid("delta", format!("must be in (0,1), got {}", self.delta)));
        }
        if !self.sigma.is_finite() || self.sigma < 0.0 {
            return Err(Error::invalid("sigma", "must be >= 0"));
        }
        if !self.r.is_finite() || self.r <= 0.0 {
            return Err(Error::invalid("r", "must be > 0"));
        }
        if self.dim == 0 {
            return Err(Error::invalid("dim", "must be >= 1"));
        }
        Ok(())
    }
}

/// `lambda_t = multiplier * 2 sigma R sqrt(2 t log(2d/delta))`.
pub fn lambda_schedule(t: usize, params: &ScheduleParams) -> Result<f64> {
    params.validate()?;
    if t == 0 {
        return Err(Error::invalid("t", "rounds are 1-based"));
    }
    Ok(lambda_with_r(t, params, params.r))
}

fn lambda_with_r(t: usize, params: &ScheduleParams, r: f64) -> f64 {
    let log_term = (2.0 * params.dim as f64 / params.delta).ln();
    params.multiplier * 2.0 * params.sigma * r * (2.0 * t as f64 * log_term).sqrt()
}

/// Which regression the learner solves each round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Plain,
    Preconditioned,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Plain => "plain",
            Variant::Preconditioned => "preconditioned",
        }
    }
}

/// Mutable learner state threaded through the rounds.
#[derive(Debug, Clone)]
pub struct LearnerState {
    pub theta: DVector<f64>,
    pub history: History,
    pub schedule: ScheduleParams,
    pub solver: SolverSettings,
}

impl LearnerState {
    /// theta_0 = 0: the infinite-regularization Lasso solution.
    pub fn new(dim: usize, schedule: ScheduleParams, solver: SolverSettings) -> Self {
        LearnerState {
            theta: DVector::zeros(dim),
            history: History::new(dim),
            schedule,
            solver,
        }
    }
}

/// One row of a [`RegretTrace`].
#[derive(Debug, Clone)]
pub struct RoundRecord {
    pub round: usize,
    pub chosen_arm: usize,
    pub inst_regret: f64,
    pub cum_regret: f64,
    pub est_error: f64,
    pub lambda_t: f64,
    pub converged: bool,
    pub sweeps: usize,
    pub lambda_min: Option<f64>,
}

/// Per-round records of one episode.
#[derive(Debug, Clone, Default)]
pub struct RegretTrace {
    pub records: Vec<RoundRecord>,
}

impl RegretTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn final_cum_regret(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.cum_regret)
    }
}

/// Greedy arm choice: the lowest index maximizing `<x_j, theta>` over the
/// perturbed contexts.
pub fn select_arm(theta: &DVector<f64>, contexts: &RoundContexts) -> usize {
    argmax_inner_product(&contexts.perturbed, theta).0
}

/// Left-transforms the regression so every nonzero singular value of the
/// design becomes one.
///
/// With `A = X^T` (t x d) and thin SVD `A = U S V^T` restricted to nonzero
/// singular values, returns `A~ = U V^T` and `Y~ = U S^+ U^T Y`. The two
/// systems have the same least-squares solutions on the row space of `A`. A
/// rank-zero history is returned unchanged.
pub fn precondition_design(history: &History) -> (DMatrix<f64>, DVector<f64>) {
    let a = history.design().transpose();
    let y = history.rewards();
    let svd = a.clone().svd(true, true);
    let s_max = svd.singular_values.max();
    let tol = a.nrows().max(a.ncols()) as f64 * f64::EPSILON * s_max;
    let rank = svd.singular_values.iter().filter(|s| **s > tol).count();
    if rank == 0 {
        return (a, y);
    }

    let u = svd.u.as_ref().expect("svd u requested");
    let v_t = svd.v_t.as_ref().expect("svd v_t requested");
    let u_r = u.columns(0, rank);
    let v_t_r = v_t.rows(0, rank);

    let a_tilde = &u_r * v_t_r;
    let mut w = u_r.tr_mul(&y);
    for i in 0..rank {
        w[i] /= svd.singular_values[i];
    }
    let y_tilde = u_r * w;
    (a_tilde, y_tilde)
}

fn max_row_norm(m: &DMatrix<f64>) -> f64 {
    (0..m.nrows())
        .map(|i| m.row(i).norm())
        .fold(0.0, f64::max)
}

/// Plays one round: selects the arm, realizes and records the reward, refits
/// theta with the schedule's lambda, and returns the trace record. Solver
/// non-convergence is flagged in the record and the episode continues.
pub fn bandit_step(
    state: &mut LearnerState,
    contexts: &RoundContexts,
    instance: &BanditInstance,
    streams: &EpisodeStreams,
    variant: Variant,
) -> Result<RoundRecord> {
    let round = state.history.len() + 1;
    let chosen = select_arm(&state.theta, contexts);
    let x_chosen = &contexts.perturbed[chosen];
    let chosen_value = x_chosen.dot(instance.theta_star());

    let reward = realize_reward(x_chosen, instance, &mut streams.reward_rng(round))?;
    state.history.push(x_chosen, reward);
    let t = state.history.len();

    let mut solver = state.solver.clone();
    solver.warm_start = Some(state.theta.clone());

    let (fit, lambda_t) = match variant {
        Variant::Plain => {
            let design = state.history.design();
            let targets = state.history.rewards();
            let lambda_t = lambda_schedule(t, &state.schedule)?;
            let problem = LassoProblem::new(&design, &targets, lambda_t)?;
            (fit_lasso(&problem, &solver)?, lambda_t)
        }
        Variant::Preconditioned => {
            let (a_tilde, y_tilde) = precondition_design(&state.history);
            // The schedule's entry bound is replaced by the transformed
            // design's largest row norm.
            let lambda_t = lambda_with_r(t, &state.schedule, max_row_norm(&a_tilde));
            let design = a_tilde.transpose();
            let problem = LassoProblem::new(&design, &y_tilde, lambda_t)?;
            (fit_lasso(&problem, &solver)?, lambda_t)
        }
    };

    let (_, best_value) = best_arm(contexts, instance);
    let inst_regret = best_value - chosen_value;
    debug_assert!(inst_regret >= 0.0);
    let est_error = (&fit.theta - instance.theta_star()).norm();
    let converged = fit.converged;
    let sweeps = fit.sweeps;
    state.theta = fit.theta;

    Ok(RoundRecord {
        round,
        chosen_arm: chosen,
        inst_regret,
        cum_regret: 0.0, // filled by the episode loop
        est_error,
        lambda_t,
        converged,
        sweeps,
        lambda_min: None,
    })
}

/// Everything needed to run one episode.
#[derive(Debug, Clone)]
pub struct EpisodeConfig<'a> {
    pub instance: &'a BanditInstance,
    pub strategy: &'a ContextStrategy,
    pub spec: &'a PerturbationSpec,
    pub schedule: ScheduleParams,
    pub horizon: usize,
    pub variant: Variant,
    pub solver: SolverSettings,
    /// Record `lambda_min(X X^T)` every this many rounds.
    pub lambda_min_every: Option<usize>,
}

/// Runs `horizon` rounds of the online-Lasso bandit and returns the trace.
pub fn run_episode(cfg: &EpisodeConfig, streams: &EpisodeStreams) -> Result<RegretTrace> {
    if cfg.horizon == 0 {
        return Err(Error::invalid("horizon", "must be >= 1"));
    }
    let mut state = LearnerState::new(cfg.instance.dim(), cfg.schedule, cfg.solver.clone());
    let mut records = Vec::with_capacity(cfg.horizon);
    let mut cum_regret = 0.0;

    for round in 1..=cfg.horizon {
        let raw = generate_raw_contexts(
            cfg.strategy,
            cfg.instance,
            round,
            &mut streams.contexts_rng(round),
        )?;
        let contexts = apply_perturbed_adversary(raw, cfg.spec, streams, round)?;
        let mut record = bandit_step(&mut state, &contexts, cfg.instance, streams, cfg.variant)?;
        cum_regret += record.inst_regret;
        record.cum_regret = cum_regret;

        if let Some(every) = cfg.lambda_min_every {
            if every > 0 && round % every == 0 {
                let x = state.history.design();
                let mut gram = &x * x.transpose();
                let gram_t = gram.transpose();
                gram = (gram + gram_t) * 0.5;
                record.lambda_min = Some(min_symmetric_eigenvalue(&gram)?);
            }
        }
        records.push(record);
    }

    Ok(RegretTrace { records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamKey;
    use rand::Rng;

    fn small_schedule(sigma: f64, dim: usize) -> ScheduleParams {
        ScheduleParams::new(sigma, 1.0, dim, 0.05).unwrap()
    }

    #[test]
    fn lambda_schedule_examples() {
        let params = ScheduleParams::new(0.0, 1.0, 10, 0.1).unwrap();
        for t in [1, 5, 100] {
            assert_eq!(lambda_schedule(t, &params).unwrap(), 0.0);
        }

        let params = ScheduleParams::new(1.0, 1.0, 100, 0.05).unwrap();
        let value = lambda_schedule(100, &params).unwrap();
        let expected = 2.0 * (200.0 * (4000.0f64).ln()).sqrt();
        assert!((value - expected).abs() < 1e-10);
        assert!((value - 81.46).abs() < 0.01);

        let l1 = lambda_schedule(50, &params).unwrap();
        let l2 = lambda_schedule(100, &params).unwrap();
        assert!((l2 / l1 - 2.0f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn lambda_schedule_is_strictly_increasing() {
        let params = ScheduleParams::new(0.3, 2.0, 50, 0.05).unwrap();
        let mut last = 0.0;
        for t in 1..200 {
            let v = lambda_schedule(t, &params).unwrap();
            assert!(v > last);
            last = v;
        }
    }

    #[test]
    fn schedule_rejects_bad_delta() {
        assert!(ScheduleParams::new(1.0, 1.0, 10, 0.0).is_err());
        assert!(ScheduleParams::new(1.0, 1.0, 10, 1.0).is_err());
        assert!(ScheduleParams::new(1.0, 1.0, 10, -0.3).is_err());
    }

    #[test]
    fn select_arm_cases() {
        let contexts = RoundContexts {
            raw: vec![],
            perturbed: vec![
                DVector::from_vec(vec![0.0, 0.0]),
                DVector::from_vec(vec![0.0, 1.0]),
                DVector::from_vec(vec![0.0, 0.5]),
            ],
        };
        let e2 = DVector::from_vec(vec![0.0, 1.0]);
        assert_eq!(select_arm(&e2, &contexts), 1);
        assert_eq!(select_arm(&(&e2 * 3.0), &contexts), 1);
        assert_eq!(select_arm(&DVector::zeros(2), &contexts), 0);
    }

    #[test]
    fn oracle_policy_with_zero_noise_has_zero_regret() {
        let mut rng = StreamKey::new(21).rng();
        let instance = BanditInstance::generate(8, 3, 4, 0.0, false, &mut rng).unwrap();
        let spec = PerturbationSpec::isotropic(0.2, vec![2.0; 8], None).unwrap();
        let streams = EpisodeStreams::new(StreamKey::new(22));

        let mut state = LearnerState::new(
            8,
            small_schedule(0.0, 8),
            SolverSettings::default(),
        );
        state.theta = instance.theta_star().clone();

        for round in 1..=30 {
            let raw = generate_raw_contexts(
                &ContextStrategy::Uniform01,
                &instance,
                round,
                &mut streams.contexts_rng(round),
            )
            .unwrap();
            let contexts = apply_perturbed_adversary(raw, &spec, &streams, round).unwrap();
            let record =
                bandit_step(&mut state, &contexts, &instance, &streams, Variant::Plain).unwrap();
            assert_eq!(record.inst_regret, 0.0, "round {round}");
        }
    }

    #[test]
    fn single_arm_round_has_zero_regret() {
        let mut rng = StreamKey::new(23).rng();
        let instance = BanditInstance::generate(5, 2, 2, 0.1, false, &mut rng).unwrap();
        let contexts = RoundContexts {
            raw: vec![DVector::zeros(5)],
            perturbed: vec![DVector::from_fn(5, |_, _| rng.random_range(-1.0..1.0))],
        };
        let streams = EpisodeStreams::new(StreamKey::new(24));
        let mut state = LearnerState::new(5, small_schedule(0.1, 5), SolverSettings::default());
        let record =
            bandit_step(&mut state, &contexts, &instance, &streams, Variant::Plain).unwrap();
        assert_eq!(record.chosen_arm, 0);
        assert_eq!(record.inst_regret, 0.0);
    }

    fn episode_fixture(seed: u64, horizon: usize, variant: Variant) -> RegretTrace {
        let mut rng = StreamKey::new(seed).child(100).rng();
        let instance = BanditInstance::generate(12, 3, 4, 0.1, false, &mut rng).unwrap();
        let spec = PerturbationSpec::isotropic(0.3, vec![2.2; 12], None).unwrap();
        let strategy = ContextStrategy::Uniform01;
        let cfg = EpisodeConfig {
            instance: &instance,
            strategy: &strategy,
            spec: &spec,
            schedule: ScheduleParams::new(0.1, 2.2, 12, 0.05).unwrap(),
            horizon,
            variant,
            solver: SolverSettings::default(),
            lambda_min_every: None,
        };
        run_episode(&cfg, &EpisodeStreams::new(StreamKey::new(seed))).unwrap()
    }

    #[test]
    fn episode_trace_has_horizon_length() {
        assert_eq!(episode_fixture(31, 1, Variant::Plain).len(), 1);
        assert_eq!(episode_fixture(31, 25, Variant::Plain).len(), 25);
    }

    #[test]
    fn episodes_are_deterministic() {
        let a = episode_fixture(33, 20, Variant::Plain);
        let b = episode_fixture(33, 20, Variant::Plain);
        for (ra, rb) in a.records.iter().zip(&b.records) {
            assert_eq!(ra.chosen_arm, rb.chosen_arm);
            assert_eq!(ra.inst_regret, rb.inst_regret);
            assert_eq!(ra.cum_regret, rb.cum_regret);
            assert_eq!(ra.est_error, rb.est_error);
            assert_eq!(ra.lambda_t, rb.lambda_t);
        }
    }

    #[test]
    fn regret_is_nonnegative_and_cumulative() {
        for variant in [Variant::Plain, Variant::Preconditioned] {
            let trace = episode_fixture(35, 30, variant);
            let mut acc = 0.0;
            for r in &trace.records {
                assert!(r.inst_regret >= 0.0);
                acc += r.inst_regret;
                assert!((r.cum_regret - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn preconditioning_scalar_design() {
        let mut history = History::new(2);
        history.push(&DVector::from_vec(vec![2.0, 0.0]), 1.0);
        history.push(&DVector::from_vec(vec![0.0, 2.0]), 3.0);
        // A = X^T = 2 * I
        let (a_tilde, y_tilde) = precondition_design(&history);
        assert!((a_tilde - DMatrix::<f64>::identity(2, 2)).abs().max() < 1e-12);
        assert!((y_tilde - DVector::from_vec(vec![0.5, 1.5])).amax() < 1e-12);
    }

    #[test]
    fn preconditioned_singular_values_are_zero_or_one() {
        let mut rng = StreamKey::new(40).rng();
        let mut history = History::new(9);
        for _ in 0..5 {
            let x = DVector::from_fn(9, |_, _| rng.random_range(-1.0..1.0));
            history.push(&x, rng.random_range(-1.0..1.0));
        }
        let (a_tilde, _) = precondition_design(&history);
        let svals = a_tilde.singular_values();
        for s in svals.iter() {
            assert!(s.abs() < 1e-8 || (s - 1.0).abs() < 1e-8, "singular value {s}");
        }
    }

    #[test]
    fn preconditioning_preserves_row_space_solution() {
        let mut rng = StreamKey::new(41).rng();
        let t = 20;
        let d = 50;
        let mut history = History::new(d);
        for _ in 0..t {
            let x = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
            history.push(&x, rng.random_range(-1.0..1.0));
        }
        let a = history.design().transpose();
        let y = history.rewards();
        let (a_tilde, y_tilde) = precondition_design(&history);

        // Minimum-norm least-squares solutions coincide.
        let ls = a.clone().svd(true, true).solve(&y, 1e-10).unwrap();
        let ls_tilde = a_tilde.clone().svd(true, true).solve(&y_tilde, 1e-10).unwrap();
        assert!(
            (&ls - &ls_tilde).amax() < 1e-6,
            "min-norm solutions differ by {:.2e}",
            (&ls - &ls_tilde).amax()
        );
    }

    #[test]
    fn preconditioning_is_idempotent() {
        let mut rng = StreamKey::new(42).rng();
        let mut history = History::new(6);
        for _ in 0..4 {
            let x = DVector::from_fn(6, |_, _| rng.random_range(-1.0..1.0));
            history.push(&x, rng.random_range(-1.0..1.0));
        }
        let (a_tilde, y_tilde) = precondition_design(&history);

        let mut again = History::new(6);
        for i in 0..4 {
            again.push(&a_tilde.row(i).transpose(), y_tilde[i]);
        }
        let (a2, y2) = precondition_design(&again);
        assert!((&a2 - &a_tilde).abs().max() < 1e-8);
        assert!((&y2 - &y_tilde).amax() < 1e-8);
    }

    #[test]
    fn rank_zero_history_passes_through() {
        let mut history = History::new(3);
        history.push(&DVector::zeros(3), 1.5);
        let (a_tilde, y_tilde) = precondition_design(&history);
        assert_eq!(a_tilde, DMatrix::zeros(1, 3));
        assert_eq!(y_tilde, DVector::from_vec(vec![1.5]));
    }

    #[test]
    fn history_tracks_chosen_contexts() {
        let trace = episode_fixture(50, 15, Variant::Plain);
        assert_eq!(trace.len(), 15);
        // Rebuild the episode to compare history against recorded arms.
        let mut rng = StreamKey::new(50).child(100).rng();
        let instance = BanditInstance::generate(12, 3, 4, 0.1, false, &mut rng).unwrap();
        let spec = PerturbationSpec::isotropic(0.3, vec![2.2; 12], None).unwrap();
        let streams = EpisodeStreams::new(StreamKey::new(50));
        let mut state = LearnerState::new(
            12,
            ScheduleParams::new(0.1, 2.2, 12, 0.05).unwrap(),
            SolverSettings::default(),
        );
        for round in 1..=15 {
            let raw = generate_raw_contexts(
                &ContextStrategy::Uniform01,
                &instance,
                round,
                &mut streams.contexts_rng(round),
            )
            .unwrap();
            let contexts = apply_perturbed_adversary(raw, &spec, &streams, round).unwrap();
            let record =
                bandit_step(&mut state, &contexts, &instance, &streams, Variant::Plain).unwrap();
            assert_eq!(record.chosen_arm, trace.records[round - 1].chosen_arm);
            assert_eq!(
                state.history.context(round - 1),
                contexts.perturbed[record.chosen_arm]
            );
        }
        assert_eq!(state.history.len(), 15);
    }
}
