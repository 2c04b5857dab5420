use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use samv::amv::{amv_estimate_from, initialize_power, initialize_power_nonuniform, EstimateTrace};
use samv::array::{synthesize_snapshots, SnapshotSet, SteeringDictionary};
use samv::baselines::{iaa_from_covariance, music_pseudospectrum, per_estimate};
use samv::covariance::{NoiseState, PowerState};
use samv::harness::{pick_peaks, run_sweep_with_progress, EstimatorKind};
use samv::io::{self, EstimateConfig};
use samv::rd::{detections, max_sidelobe, rd_image, synthesize_observation, RdImage};
use samv::samv::{samv_estimate_from, SamvVariant};
use samv::sml::{refine_from_spectrum, SmlVariant};

use crate::manifest::{FailureSummary, OutputDir};
use crate::CliError;

/// A fully resolved command: config text already loaded, so a run can be
/// repeated from a manifest without the original files.
#[derive(Debug, Clone)]
pub enum Job {
    Simulate,
    Estimate {
        estimator: String,
        data_path: String,
        data: String,
    },
    Sweep {
        trials: Option<usize>,
    },
    RdImage,
}

impl Job {
    pub fn name(&self) -> &'static str {
        match self {
            Job::Simulate => "simulate",
            Job::Estimate { .. } => "estimate",
            Job::Sweep { .. } => "sweep",
            Job::RdImage => "rdimage",
        }
    }
}

#[derive(Debug, Default)]
pub struct Outcome {
    pub seed: Option<u64>,
    pub failures: Option<FailureSummary>,
}

fn usage(e: samv::Error) -> CliError {
    CliError::Usage(e.to_string())
}

fn runtime(e: samv::Error) -> CliError {
    CliError::Runtime(e.to_string())
}

fn to_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| CliError::Runtime(format!("cannot serialise JSON: {e}")))
}

pub fn execute(job: &Job, config: &str, out: &mut OutputDir, quiet: bool) -> Result<Outcome, CliError> {
    match job {
        Job::Simulate => simulate(config, out),
        Job::Estimate {
            estimator, data, ..
        } => estimate(config, estimator, data, out),
        Job::Sweep { trials } => sweep(config, *trials, out, quiet),
        Job::RdImage => rdimage(config, out),
    }
}

fn simulate(config: &str, out: &mut OutputDir) -> Result<Outcome, CliError> {
    let scenario = io::parse_scenario(config).map_err(usage)?;
    let snapshots = synthesize_snapshots(&scenario).map_err(runtime)?;
    out.write("snapshots.csv", &io::write_snapshots(&snapshots))?;
    out.write(
        "truth.json",
        &to_json(&io::ScenarioTruth::from_scenario(&scenario))?,
    )?;
    Ok(Outcome {
        seed: Some(scenario.seed),
        failures: None,
    })
}

/// Spectrum, reported peaks and diagnostics of one estimator.
struct EstimateOutput {
    spectrum: Vec<f64>,
    peak_angles: Vec<f64>,
    peak_powers: Vec<f64>,
    trace: serde_json::Value,
}

fn noise_json(state: &PowerState) -> serde_json::Value {
    match &state.noise {
        NoiseState::Uniform(s) => json!({ "noise_variance": s }),
        NoiseState::Nonuniform(v) => json!({ "noise_variances": v }),
    }
}

fn iterative_trace(name: &str, state: &PowerState, trace: &EstimateTrace) -> serde_json::Value {
    let mut value = json!({
        "estimator": name,
        "iterations": trace.iterations_used,
        "converged": trace.converged,
        "loaded_iterations": trace.loaded_iterations,
        "ml_cost": trace.ml_cost,
    });
    if let (Some(obj), serde_json::Value::Object(noise)) = (value.as_object_mut(), noise_json(state)) {
        obj.extend(noise);
    }
    value
}

fn run_grid_estimator(
    kind: EstimatorKind,
    cfg: &EstimateConfig,
    dict: &SteeringDictionary,
    r_n: &samv::CMatrix,
) -> Result<EstimateOutput, CliError> {
    let grid = dict.grid();
    let grid_peaks = |spectrum: Vec<f64>, trace: serde_json::Value| {
        let pick = pick_peaks(&spectrum, grid, cfg.num_sources);
        EstimateOutput {
            peak_powers: pick.indices.iter().map(|&i| spectrum[i]).collect(),
            peak_angles: pick.angles,
            spectrum,
            trace,
        }
    };
    let samv_variant = match kind {
        EstimatorKind::Samv0 => Some(SamvVariant::Samv0),
        EstimatorKind::Samv1 => Some(SamvVariant::Samv1),
        EstimatorKind::Samv2 => Some(SamvVariant::Samv2),
        _ => None,
    };
    let init = || {
        if cfg.nonuniform_noise {
            initialize_power_nonuniform(dict, r_n)
        } else {
            initialize_power(dict, r_n)
        }
    };
    if cfg.nonuniform_noise && !matches!(kind, EstimatorKind::Amv) && samv_variant.is_none() {
        return Err(CliError::Usage(format!(
            "nonuniform_noise is only supported by amv and the samv estimators, not {kind}"
        )));
    }
    let sml_variant = match kind {
        EstimatorKind::AmvSml => Some(SmlVariant::Amv),
        EstimatorKind::Samv1Sml => Some(SmlVariant::Samv1),
        EstimatorKind::Samv2Sml => Some(SmlVariant::Samv2),
        _ => None,
    };

    if let Some(v) = samv_variant {
        let (state, trace) = samv_estimate_from(v, dict, r_n, init(), &cfg.control).map_err(runtime)?;
        let t = iterative_trace(kind.name(), &state, &trace);
        return Ok(grid_peaks(state.powers, t));
    }
    if let Some(v) = sml_variant {
        let (seed, seed_trace) =
            samv_estimate_from(SamvVariant::Samv2, dict, r_n, init(), &cfg.sml.init).map_err(runtime)?;
        let est = refine_from_spectrum(dict, r_n, &seed, v, cfg.num_sources, &cfg.sml).map_err(runtime)?;
        let trace = json!({
            "estimator": kind.name(),
            "iterations": est.sweeps,
            "converged": est.converged,
            "ml_cost": est.sweep_costs.iter().map(|c| c.after).collect::<Vec<_>>(),
            "sweep_costs": est.sweep_costs.iter().map(|c| json!({"before": c.before, "after": c.after})).collect::<Vec<_>>(),
            "noise_variance": est.sigma,
            "initialisation": iterative_trace("samv2", &seed, &seed_trace),
        });
        return Ok(EstimateOutput {
            spectrum: seed.powers,
            peak_angles: est.sources.iter().map(|s| s.angle_deg).collect(),
            peak_powers: est.sources.iter().map(|s| s.power).collect(),
            trace,
        });
    }
    Ok(match kind {
        EstimatorKind::Per => {
            let p = per_estimate(dict, r_n);
            grid_peaks(p, json!({ "estimator": "per", "iterations": 0, "converged": true, "ml_cost": [] }))
        }
        EstimatorKind::Iaa => {
            let res = iaa_from_covariance(dict, r_n, &cfg.iaa).map_err(runtime)?;
            let trace = json!({
                "estimator": "iaa",
                "iterations": res.iterations,
                "converged": res.converged,
                "loaded_iterations": res.loaded_iterations,
                "ml_cost": [],
            });
            grid_peaks(res.powers, trace)
        }
        EstimatorKind::Music => {
            let p = music_pseudospectrum(dict, r_n, cfg.num_sources).map_err(runtime)?;
            grid_peaks(p, json!({ "estimator": "music", "iterations": 0, "converged": true, "ml_cost": [] }))
        }
        EstimatorKind::Amv => {
            let (state, trace) = amv_estimate_from(dict, r_n, init(), &cfg.control).map_err(runtime)?;
            let t = iterative_trace("amv", &state, &trace);
            grid_peaks(state.powers, t)
        }
        _ => unreachable!("every estimator kind is dispatched above"),
    })
}

fn estimate(config: &str, estimator: &str, data: &str, out: &mut OutputDir) -> Result<Outcome, CliError> {
    let kind: EstimatorKind = estimator.parse().map_err(usage)?;
    let cfg = io::parse_estimate_config(config).map_err(usage)?;
    let snapshots: SnapshotSet = io::read_snapshots(data).map_err(usage)?;
    if snapshots.num_sensors() != cfg.geometry.num_sensors() {
        return Err(CliError::Usage(format!(
            "data has {} sensors, config describes {}",
            snapshots.num_sensors(),
            cfg.geometry.num_sensors()
        )));
    }
    let dict = SteeringDictionary::build(&cfg.geometry, cfg.grid_start, cfg.grid_stop, cfg.grid_step)
        .map_err(usage)?;
    let r_n = snapshots.sample_covariance();
    let result = run_grid_estimator(kind, &cfg, &dict, &r_n)?;

    out.write("spectrum.csv", &io::write_spectrum(dict.grid(), &result.spectrum))?;
    out.write("peaks.csv", &io::write_spectrum(&result.peak_angles, &result.peak_powers))?;
    out.write("trace.json", &to_json(&result.trace)?)?;
    Ok(Outcome::default())
}

fn sweep(config: &str, trials: Option<usize>, out: &mut OutputDir, quiet: bool) -> Result<Outcome, CliError> {
    let mut cfg = io::parse_sweep(config).map_err(usage)?;
    if let Some(t) = trials {
        cfg.trials = t;
        cfg.validate().map_err(usage)?;
    }
    let last = AtomicUsize::new(0);
    let progress = |done: usize, total: usize| {
        if quiet {
            return;
        }
        let pct = done * 100 / total.max(1);
        if last.fetch_max(pct, Ordering::Relaxed) < pct || done == total {
            eprint!("\rsweep: {done}/{total} trials ({pct}%)");
            if done == total {
                eprintln!();
            }
        }
    };
    let result = run_sweep_with_progress(&cfg, &progress).map_err(runtime)?;
    out.write("sweep.csv", &io::write_sweep(&result))?;
    out.write("trials.csv", &io::write_trials(&result, &cfg.snr_db))?;
    let summary = FailureSummary {
        records: result.records.len(),
        errored: result.errors(),
        padded: result.records.iter().filter(|r| r.padded).count(),
    };
    if summary.records > 0 && summary.errored == summary.records {
        return Err(CliError::Runtime("every trial failed".into()));
    }
    Ok(Outcome {
        seed: Some(cfg.base_seed),
        failures: Some(summary),
    })
}

#[derive(Serialize)]
struct MethodSummary {
    method: String,
    detected: Vec<bool>,
    all_detected: bool,
    peak_db: f64,
    /// Strongest bin more than two bins from every target, relative to
    /// the image peak.
    max_sidelobe_db: f64,
}

fn rdimage(config: &str, out: &mut OutputDir) -> Result<Outcome, CliError> {
    let cfg = io::parse_scene(config).map_err(usage)?;
    let grid = cfg.scene.grid().map_err(usage)?;
    let y = synthesize_observation(&cfg.scene, &grid).map_err(runtime)?;
    let images: Vec<RdImage> = cfg
        .methods
        .par_iter()
        .map(|&m| rd_image(m, &grid, &y, &cfg.scene.targets, &cfg.control))
        .collect::<Result<_, _>>()
        .map_err(runtime)?;

    let mut summaries = Vec::new();
    for (method, image) in cfg.methods.iter().zip(&images) {
        out.write(&format!("image_{method}.csv"), &io::write_image(image))?;
        let detected = detections(image, 1, cfg.dynamic_range_db);
        summaries.push(MethodSummary {
            method: method.to_string(),
            all_detected: detected.iter().all(|&d| d),
            detected,
            peak_db: io::linear_to_db(image.peak()),
            max_sidelobe_db: io::linear_to_db(max_sidelobe(image, 2)) - io::linear_to_db(image.peak()),
        });
    }
    out.write(
        "truth.json",
        &to_json(&json!({ "targets": io::truth_overlay(&cfg.scene.targets) }))?,
    )?;
    out.write("summary.json", &to_json(&summaries)?)?;
    Ok(Outcome {
        seed: Some(cfg.scene.seed),
        failures: None,
    })
}
