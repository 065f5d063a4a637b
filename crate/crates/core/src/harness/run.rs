//! Seeded experiment execution: episode fan-out, trace CSV, aggregation,
//! summary and diagnostics JSON, and the regret plot.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bandit::{run_episode, EpisodeConfig, RegretTrace, Variant};
use crate::diagnostics::{
    censored_variance_mc_check, exploration_length_high, exploration_length_low, fact1_check,
    fact2_check, gaussian_design, lemma2_summary, matrix_chernoff_check,
    perturbation_lambda0_or_none, re_constant_estimate, recovery_bound, regret_bound, ConeSpec,
    CurvePoint, DiagnosticsReport, Fact1Result, Regime,
};
use crate::environment::BanditInstance;
use crate::harness::config::{ExperimentConfig, ThetaSeedPolicy};
use crate::harness::plot::{render_plot, SeriesCurve};
use crate::rng::{role, EpisodeStreams, StreamKey};
use crate::{Error, Result};

/// The trace CSV header, in column order. Kept stable for downstream tools.
pub const TRACE_HEADER: [&str; 10] = [
    "round",
    "repeat",
    "variant",
    "sigma1",
    "chosen_arm",
    "inst_regret",
    "cum_regret",
    "est_error",
    "lambda_t",
    "converged",
];

/// One parsed row of the trace CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRow {
    pub round: usize,
    pub repeat: usize,
    pub variant: String,
    pub sigma1: f64,
    pub chosen_arm: usize,
    pub inst_regret: f64,
    pub cum_regret: f64,
    pub est_error: f64,
    pub lambda_t: f64,
    pub converged: bool,
}

/// Identifies one episode within an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct JobKey {
    pub variant: Variant,
    pub sigma_idx: usize,
    pub repeat: usize,
}

/// Per-round min/mean/max of cumulative regret across repeats.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateCurve {
    pub variant: String,
    pub sigma1: f64,
    pub rounds: Vec<usize>,
    pub mean: Vec<f64>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfigurationSummary {
    pub variant: String,
    pub sigma1: f64,
    pub episodes: usize,
    pub failed_episodes: usize,
    pub final_cum_regret_mean: f64,
    pub final_cum_regret_min: f64,
    pub final_cum_regret_max: f64,
    pub final_est_error_mean: f64,
    pub mean_solver_sweeps: f64,
    pub all_rounds_converged: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagnosticsFlags {
    pub rayleigh_chain_ok: bool,
    pub fact1_pass: bool,
    pub fact2_pass: bool,
    pub censored_variance_mc_pass: bool,
    pub chernoff_pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub configurations: Vec<ConfigurationSummary>,
    pub diagnostics_flags: DiagnosticsFlags,
}

/// Everything an experiment produced, with the paths that were written.
#[derive(Debug)]
pub struct ExperimentOutput {
    pub trace_path: PathBuf,
    pub aggregate_path: PathBuf,
    pub summary_path: PathBuf,
    pub diagnostics_path: PathBuf,
    pub plot_path: PathBuf,
    pub curves: Vec<AggregateCurve>,
    pub summary: ExperimentSummary,
    pub report: DiagnosticsReport,
    pub failed_episodes: usize,
}

fn job_keys(config: &ExperimentConfig) -> Vec<JobKey> {
    let mut keys = Vec::new();
    for variant in &config.variants {
        for sigma_idx in 0..config.perturbation.sigma1_values.len() {
            for repeat in 0..config.repeats {
                keys.push(JobKey {
                    variant: (*variant).into(),
                    sigma_idx,
                    repeat,
                });
            }
        }
    }
    keys
}

fn variant_stream_tag(variant: Variant) -> u64 {
    match variant {
        Variant::Plain => 1,
        Variant::Preconditioned => 2,
    }
}

/// Environment streams for one episode. With paired contexts the key excludes
/// both the variant and the sigma1 index, so every configuration of a repeat
/// sees identical raw contexts and reward noise, and perturbation draws that
/// differ only by scale.
fn episode_streams(config: &ExperimentConfig, key: &JobKey) -> EpisodeStreams {
    let mut stream = StreamKey::new(config.master_seed).child(key.repeat as u64);
    if !config.paired_contexts {
        stream = stream
            .child(variant_stream_tag(key.variant))
            .child(key.sigma_idx as u64 + 100);
    }
    EpisodeStreams::new(stream)
}

/// The instance parameter is keyed by repeat only (or nothing, when fixed),
/// shared across variants and the sigma1 sweep.
fn instance_for(config: &ExperimentConfig, repeat: usize) -> Result<BanditInstance> {
    let tag = match config.instance.theta_seed_policy {
        ThetaSeedPolicy::Fixed => 0,
        ThetaSeedPolicy::PerRepeat => repeat as u64 + 1,
    };
    let mut rng = StreamKey::new(config.master_seed)
        .child(role::THETA)
        .child(tag)
        .rng();
    BanditInstance::generate(
        config.instance.d,
        config.instance.k,
        config.instance.arms,
        config.instance.reward_noise_sigma,
        config.instance.normalize_theta,
        &mut rng,
    )
}

/// Runs one episode identified by its job key.
pub fn run_job(config: &ExperimentConfig, key: &JobKey) -> Result<RegretTrace> {
    let sigma1 = config.perturbation.sigma1_values[key.sigma_idx];
    let spec = config.perturbation_spec_for(sigma1)?;
    let instance = instance_for(config, key.repeat)?;
    let strategy = config.context_strategy(StreamKey::new(config.master_seed), key.repeat)?;
    let episode = EpisodeConfig {
        instance: &instance,
        strategy: &strategy,
        spec: &spec,
        schedule: config.schedule_params_for(&spec)?,
        horizon: config.horizon,
        variant: key.variant,
        solver: config.solver_settings(),
        lambda_min_every: config.diagnostics.lambda_min_every,
    };
    run_episode(&episode, &episode_streams(config, key))
}

/// Runs every (variant, sigma1, repeat) episode. Results come back in job
/// order regardless of scheduling; failures are recorded, not fatal.
pub fn run_all_episodes(
    config: &ExperimentConfig,
) -> Vec<(JobKey, std::result::Result<RegretTrace, String>)> {
    let keys = job_keys(config);
    keys.into_par_iter()
        .map(|key| {
            let outcome = run_job(config, &key).map_err(|e| e.to_string());
            (key, outcome)
        })
        .collect()
}

fn write_trace_csv(
    path: &Path,
    config: &ExperimentConfig,
    results: &[(JobKey, std::result::Result<RegretTrace, String>)],
) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(TRACE_HEADER)?;
    for (key, outcome) in results {
        let Ok(trace) = outcome else { continue };
        let sigma1 = config.perturbation.sigma1_values[key.sigma_idx];
        for record in &trace.records {
            writer.write_record([
                record.round.to_string(),
                key.repeat.to_string(),
                key.variant.name().to_string(),
                format!("{sigma1}"),
                record.chosen_arm.to_string(),
                format!("{}", record.inst_regret),
                format!("{}", record.cum_regret),
                format!("{}", record.est_error),
                format!("{}", record.lambda_t),
                record.converged.to_string(),
            ])?;
        }
    }
    writer.flush()?;
    Ok(())
}

/// Aggregates cumulative-regret curves per (variant, sigma1) over repeats.
pub fn aggregate_curves(
    config: &ExperimentConfig,
    results: &[(JobKey, std::result::Result<RegretTrace, String>)],
) -> Vec<AggregateCurve> {
    let mut groups: BTreeMap<(usize, usize), Vec<&RegretTrace>> = BTreeMap::new();
    let variant_order: Vec<Variant> = config.variants.iter().map(|v| (*v).into()).collect();
    for (key, outcome) in results {
        if let Ok(trace) = outcome {
            let variant_idx = variant_order
                .iter()
                .position(|v| *v == key.variant)
                .expect("variant from this config");
            groups
                .entry((variant_idx, key.sigma_idx))
                .or_default()
                .push(trace);
        }
    }

    let mut curves = Vec::new();
    for ((variant_idx, sigma_idx), traces) in groups {
        let horizon = traces.iter().map(|t| t.len()).min().unwrap_or(0);
        let mut rounds = Vec::with_capacity(horizon);
        let mut mean = Vec::with_capacity(horizon);
        let mut min = Vec::with_capacity(horizon);
        let mut max = Vec::with_capacity(horizon);
        for i in 0..horizon {
            let values: Vec<f64> = traces.iter().map(|t| t.records[i].cum_regret).collect();
            rounds.push(i + 1);
            mean.push(values.iter().sum::<f64>() / values.len() as f64);
            min.push(values.iter().copied().fold(f64::INFINITY, f64::min));
            max.push(values.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        }
        curves.push(AggregateCurve {
            variant: variant_order[variant_idx].name().to_string(),
            sigma1: config.perturbation.sigma1_values[sigma_idx],
            rounds,
            mean,
            min,
            max,
        });
    }
    curves
}

fn write_aggregates_csv(path: &Path, curves: &[AggregateCurve]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record([
        "variant",
        "sigma1",
        "round",
        "mean_cum_regret",
        "min_cum_regret",
        "max_cum_regret",
    ])?;
    for curve in curves {
        for i in 0..curve.rounds.len() {
            writer.write_record([
                curve.variant.clone(),
                format!("{}", curve.sigma1),
                curve.rounds[i].to_string(),
                format!("{}", curve.mean[i]),
                format!("{}", curve.min[i]),
                format!("{}", curve.max[i]),
            ])?;
        }
    }
    writer.flush()?;
    Ok(())
}

/// Per-configuration summary statistics over the in-memory traces.
pub fn summarize(
    config: &ExperimentConfig,
    results: &[(JobKey, std::result::Result<RegretTrace, String>)],
    flags: DiagnosticsFlags,
) -> ExperimentSummary {
    let mut configurations = Vec::new();
    for variant in &config.variants {
        let variant: Variant = (*variant).into();
        for (sigma_idx, &sigma1) in config.perturbation.sigma1_values.iter().enumerate() {
            let group: Vec<&std::result::Result<RegretTrace, String>> = results
                .iter()
                .filter(|(key, _)| key.variant == variant && key.sigma_idx == sigma_idx)
                .map(|(_, outcome)| outcome)
                .collect();
            let traces: Vec<&RegretTrace> =
                group.iter().filter_map(|r| r.as_ref().ok()).collect();
            let failed = group.len() - traces.len();

            let finals: Vec<f64> = traces.iter().map(|t| t.final_cum_regret()).collect();
            let n = finals.len().max(1) as f64;
            let est_errors: Vec<f64> = traces
                .iter()
                .filter_map(|t| t.records.last().map(|r| r.est_error))
                .collect();
            let sweeps: Vec<f64> = traces
                .iter()
                .flat_map(|t| t.records.iter().map(|r| r.sweeps as f64))
                .collect();
            configurations.push(ConfigurationSummary {
                variant: variant.name().to_string(),
                sigma1,
                episodes: group.len(),
                failed_episodes: failed,
                final_cum_regret_mean: finals.iter().sum::<f64>() / n,
                final_cum_regret_min: finals.iter().copied().fold(f64::INFINITY, f64::min),
                final_cum_regret_max: finals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                final_est_error_mean: est_errors.iter().sum::<f64>()
                    / est_errors.len().max(1) as f64,
                mean_solver_sweeps: sweeps.iter().sum::<f64>() / sweeps.len().max(1) as f64,
                all_rounds_converged: traces
                    .iter()
                    .all(|t| t.records.iter().all(|r| r.converged)),
            });
        }
    }
    ExperimentSummary {
        configurations,
        diagnostics_flags: flags,
    }
}

/// Assembles the diagnostics report for the config's first sigma1 value.
/// `traces` feeds the Lemma-2 checkpoint summary when lambda_min tracking is
/// enabled.
pub fn build_diagnostics(
    config: &ExperimentConfig,
    traces: &[RegretTrace],
) -> Result<DiagnosticsReport> {
    let sigma1 = config.perturbation.sigma1_values[0];
    let spec = config.perturbation_spec_for(sigma1)?;
    let inputs = config.bound_inputs_for(&spec)?;
    let diag_key = StreamKey::new(config.master_seed).child(role::DIAGNOSTICS);

    let lambda0 = perturbation_lambda0_or_none(&spec);
    let exploration_low = exploration_length_low(&inputs)?;
    let exploration_high = exploration_length_high(&inputs)?;

    let lemma2 = if traces.iter().any(|t| {
        t.records.iter().any(|r| r.lambda_min.is_some())
    }) {
        Some(lemma2_summary(traces, &inputs, config.slope_window())?)
    } else {
        None
    };

    // Restricted-eigenvalue estimate on a pure Gaussian design at the
    // configured shape.
    let cone = ConeSpec::new((0..config.instance.k).collect(), 3.0)?;
    let mut re_rng = diag_key.child(1).rng();
    let design = gaussian_design(config.instance.d, config.horizon, &mut re_rng);
    let re = re_constant_estimate(&design, &cone, config.diagnostics.cone_samples, &mut re_rng)?;

    let points = config.diagnostics.bound_curve_points.max(2);
    let mut recovery_curve = Vec::with_capacity(points);
    let mut regret_curve = Vec::with_capacity(points);
    for i in 0..points {
        let t = ((i + 1) * config.horizon / points).max(1);
        let rec = recovery_bound(t, &inputs, Regime::High)?;
        recovery_curve.push(CurvePoint {
            t,
            value: if rec.value.is_finite() { rec.value } else { -1.0 },
            valid: rec.valid,
        });
        let reg = regret_bound(&inputs, t, Regime::High)?;
        regret_curve.push(CurvePoint {
            t,
            value: if reg.value.is_finite() { reg.value } else { -1.0 },
            valid: reg.valid,
        });
    }

    let trials = config.diagnostics.fact1_trials;
    let mut fact1 = Vec::new();
    let mut fact2 = Vec::new();
    for (i, delta) in [0.05, 0.01].into_iter().enumerate() {
        let threshold = delta + 3.0 * (delta / trials as f64).sqrt();
        let rate = fact1_check(
            50,
            100,
            1.0,
            1.0,
            delta,
            trials,
            &mut diag_key.child(2).child(i as u64).rng(),
        )?;
        fact1.push(Fact1Result {
            delta,
            rate,
            threshold,
            pass: rate <= threshold,
        });
        let rate2 = fact2_check(
            100,
            1.0,
            delta,
            trials,
            &mut diag_key.child(3).child(i as u64).rng(),
        )?;
        fact2.push(Fact1Result {
            delta,
            rate: rate2,
            threshold,
            pass: rate2 <= threshold,
        });
    }

    let censored_variance_mc = censored_variance_mc_check(
        config.diagnostics.censored_mc_samples,
        &mut diag_key.child(4).rng(),
    )?;

    let chernoff = matrix_chernoff_check(
        5,
        200,
        1_000,
        &[0.1, 0.3, 0.5],
        &mut diag_key.child(5).rng(),
    )?;

    Ok(DiagnosticsReport {
        lambda0,
        rayleigh_chain_ok: inputs.sigma_summary.validate().is_ok(),
        exploration_low,
        exploration_high,
        lemma2,
        re_h_hat: Some(re.h_hat),
        re_samples: re.samples,
        recovery_curve,
        regret_curve,
        fact1,
        fact2,
        censored_variance_mc,
        chernoff,
    })
}

fn flags_from_report(report: &DiagnosticsReport) -> DiagnosticsFlags {
    DiagnosticsFlags {
        rayleigh_chain_ok: report.rayleigh_chain_ok,
        fact1_pass: report.fact1.iter().all(|f| f.pass),
        fact2_pass: report.fact2.iter().all(|f| f.pass),
        censored_variance_mc_pass: report.censored_variance_mc.pass,
        chernoff_pass: report
            .chernoff
            .iter()
            .all(|c| c.empirical <= c.bound + 1e-12),
    }
}

/// Runs the full experiment and writes `trace.csv`, `aggregates.csv`,
/// `summary.json`, `diagnostics.json`, and `regret.svg` under `out_dir`.
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentOutput> {
    std::fs::create_dir_all(out_dir)?;
    let results = run_all_episodes(config);
    let failed_episodes = results.iter().filter(|(_, r)| r.is_err()).count();
    for (key, outcome) in &results {
        if let Err(message) = outcome {
            log::error!(
                "episode failed (variant={}, sigma1={}, repeat={}): {message}",
                key.variant.name(),
                config.perturbation.sigma1_values[key.sigma_idx],
                key.repeat
            );
        }
    }

    let trace_path = out_dir.join("trace.csv");
    write_trace_csv(&trace_path, config, &results)?;

    let curves = aggregate_curves(config, &results);
    let aggregate_path = out_dir.join("aggregates.csv");
    write_aggregates_csv(&aggregate_path, &curves)?;

    let lemma2_traces: Vec<RegretTrace> = results
        .iter()
        .filter(|(key, _)| key.variant == Variant::Plain && key.sigma_idx == 0)
        .filter_map(|(_, r)| r.as_ref().ok().cloned())
        .collect();
    let report = build_diagnostics(config, &lemma2_traces)?;
    let diagnostics_path = out_dir.join("diagnostics.json");
    write_json(&diagnostics_path, &report)?;

    let summary = summarize(config, &results, flags_from_report(&report));
    let summary_path = out_dir.join("summary.json");
    write_json(&summary_path, &summary)?;

    let plot_path = out_dir.join("regret.svg");
    let series: Vec<SeriesCurve> = curves.iter().map(curve_to_series).collect();
    let mut svg = Vec::new();
    render_plot(&series, &mut svg)?;
    std::fs::write(&plot_path, svg)?;

    Ok(ExperimentOutput {
        trace_path,
        aggregate_path,
        summary_path,
        diagnostics_path,
        plot_path,
        curves,
        summary,
        report,
        failed_episodes,
    })
}

/// Diagnostics-only mode: runs the report (plus Lemma-2 episodes when
/// lambda_min tracking is configured) and writes `diagnostics.json`.
pub fn run_diagnose(config: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentOutput> {
    std::fs::create_dir_all(out_dir)?;
    let results: Vec<(JobKey, std::result::Result<RegretTrace, String>)> =
        if config.diagnostics.lambda_min_every.is_some() {
            (0..config.repeats)
                .into_par_iter()
                .map(|repeat| {
                    let key = JobKey {
                        variant: Variant::Plain,
                        sigma_idx: 0,
                        repeat,
                    };
                    let outcome = run_job(config, &key).map_err(|e| e.to_string());
                    (key, outcome)
                })
                .collect()
        } else {
            Vec::new()
        };
    let failed_episodes = results.iter().filter(|(_, r)| r.is_err()).count();
    let traces: Vec<RegretTrace> = results
        .iter()
        .filter_map(|(_, r)| r.as_ref().ok().cloned())
        .collect();

    let report = build_diagnostics(config, &traces)?;
    let diagnostics_path = out_dir.join("diagnostics.json");
    write_json(&diagnostics_path, &report)?;

    let flags = flags_from_report(&report);
    let summary = summarize(config, &results, flags);
    Ok(ExperimentOutput {
        trace_path: PathBuf::new(),
        aggregate_path: PathBuf::new(),
        summary_path: PathBuf::new(),
        diagnostics_path,
        plot_path: PathBuf::new(),
        curves: Vec::new(),
        summary,
        report,
        failed_episodes,
    })
}

pub fn curve_to_series(curve: &AggregateCurve) -> SeriesCurve {
    SeriesCurve {
        label: format!("{} sigma1={}", curve.variant, curve.sigma1),
        rounds: curve.rounds.clone(),
        mean: curve.mean.clone(),
        min: curve.min.clone(),
        max: curve.max.clone(),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut file, value)?;
    file.write_all(b"\n")?;
    Ok(())
}

/// Reads a trace CSV back into rows (used by `plot` and the re-aggregation
/// checks).
pub fn read_trace_csv(path: &Path) -> Result<Vec<TraceRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for row in reader.deserialize() {
        rows.push(row?);
    }
    Ok(rows)
}

/// Rebuilds aggregate curves from trace rows, independent of the in-memory
/// path.
pub fn aggregate_from_rows(rows: &[TraceRow]) -> Vec<AggregateCurve> {
    let mut groups: BTreeMap<(String, String), BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    for row in rows {
        groups
            .entry((row.variant.clone(), format!("{}", row.sigma1)))
            .or_default()
            .entry(row.round)
            .or_default()
            .push(row.cum_regret);
    }
    let mut curves = Vec::new();
    for ((variant, sigma1), by_round) in groups {
        let mut rounds = Vec::new();
        let mut mean = Vec::new();
        let mut min = Vec::new();
        let mut max = Vec::new();
        for (round, values) in by_round {
            rounds.push(round);
            mean.push(values.iter().sum::<f64>() / values.len() as f64);
            min.push(values.iter().copied().fold(f64::INFINITY, f64::min));
            max.push(values.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        }
        curves.push(AggregateCurve {
            variant,
            sigma1: sigma1.parse().unwrap_or(f64::NAN),
            rounds,
            mean,
            min,
            max,
        });
    }
    curves
}

impl ExperimentOutput {
    pub fn into_result(self) -> Result<ExperimentOutput> {
        if self.failed_episodes > 0 {
            Err(Error::EpisodeFailures(self.failed_episodes))
        } else {
            Ok(self)
        }
    }
}
