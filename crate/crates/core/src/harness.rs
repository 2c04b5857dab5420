//! Monte Carlo evaluation: SNR sweeps, peak picking, total angle MSE and
//! the stochastic Cramér-Rao bound.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::amv::{amv_estimate, IterationControl};
use crate::array::{
    stream_rng, synthesize_with_rng, NoiseModel, Scenario, Source, SteeringDictionary,
};
use crate::baselines::{iaa_from_covariance, music_pseudospectrum, per_estimate, IaaControl};
use crate::covariance::PowerState;
use crate::error::{domain, Error, Result};
use crate::samv::{samv_estimate, SamvVariant};
use crate::sml::{grid_step, refine, seed_problem, SmlControl, SmlVariant};
use crate::{CMatrix, C64};

/// Noise variance giving `snr_db` relative to the mean source power.
pub fn snr_to_sigma(sources: &[Source], snr_db: f64) -> Result<f64> {
    if sources.is_empty() {
        return Err(domain("SNR is undefined without sources"));
    }
    if sources.iter().any(|s| !(s.power > 0.0)) {
        return Err(domain("SNR needs strictly positive source powers"));
    }
    let mean = sources.iter().map(|s| s.power).sum::<f64>() / sources.len() as f64;
    Ok(mean / 10f64.powf(snr_db / 10.0))
}

/// Peaks chosen from a spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct PeakPick {
    /// Grid indices, strongest first.
    pub indices: Vec<usize>,
    pub angles: Vec<f64>,
    /// Fewer local maxima than requested; the rest are the highest
    /// remaining grid values.
    pub padded: bool,
    /// At least one chosen peak sits on the first or last grid point.
    pub boundary: bool,
    /// Number of local maxima in the whole spectrum.
    pub local_maxima: usize,
}

/// Local maxima of `powers`, strongest first.
///
/// A plateau counts once, at its leftmost index, when every existing
/// neighbour is strictly lower. Ends of the grid compare one-sided.
pub fn local_maxima(powers: &[f64]) -> Vec<usize> {
    let n = powers.len();
    let mut out = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && powers[j + 1] == powers[i] {
            j += 1;
        }
        let left = (i > 0).then(|| powers[i - 1]);
        let right = (j + 1 < n).then(|| powers[j + 1]);
        let v = powers[i];
        let above = |x: Option<f64>| x.map_or(true, |x| x < v);
        if (left.is_some() || right.is_some()) && above(left) && above(right) {
            out.push(i);
        }
        i = j + 1;
    }
    out.sort_by(|&a, &b| powers[b].total_cmp(&powers[a]).then(a.cmp(&b)));
    out
}

/// The `count` strongest peaks of a spectrum sampled on `grid`.
pub fn pick_peaks(powers: &[f64], grid: &[f64], count: usize) -> PeakPick {
    let maxima = local_maxima(powers);
    let local = maxima.len();
    let mut indices: Vec<usize> = maxima.into_iter().take(count).collect();
    let padded = indices.len() < count;
    if padded {
        let mut rest: Vec<usize> = (0..powers.len()).filter(|i| !indices.contains(i)).collect();
        rest.sort_by(|&a, &b| powers[b].total_cmp(&powers[a]).then(a.cmp(&b)));
        indices.extend(rest.into_iter().take(count - indices.len()));
    }
    let last = powers.len().saturating_sub(1);
    PeakPick {
        angles: indices.iter().map(|&i| grid[i]).collect(),
        boundary: indices.iter().any(|&i| i == 0 || i == last),
        padded,
        local_maxima: local,
        indices,
    }
}

/// Assign each true angle the nearest unused estimate, visiting the truth
/// in ascending order. Returns, for every true source (in its original
/// order), the index of its estimate.
pub fn match_to_truth(estimate: &[f64], truth: &[f64]) -> Result<Vec<usize>> {
    if estimate.len() != truth.len() {
        return Err(domain(format!(
            "{} estimates for {} true sources",
            estimate.len(),
            truth.len()
        )));
    }
    let mut order: Vec<usize> = (0..truth.len()).collect();
    order.sort_by(|&a, &b| truth[a].total_cmp(&truth[b]));
    let mut used = vec![false; estimate.len()];
    let mut assignment = vec![0; truth.len()];
    for t in order {
        let best = (0..estimate.len())
            .filter(|&e| !used[e])
            .min_by(|&a, &b| {
                (estimate[a] - truth[t])
                    .abs()
                    .total_cmp(&(estimate[b] - truth[t]).abs())
                    .then(a.cmp(&b))
            })
            .expect("as many estimates as sources");
        used[best] = true;
        assignment[t] = best;
    }
    Ok(assignment)
}

/// `Σ_sources mean_trials (θ̂ − θ)²` in degrees².
pub fn total_angle_mse(estimates: &[Vec<f64>], truth: &[f64]) -> Result<f64> {
    if estimates.is_empty() {
        return Err(domain("no trials to average"));
    }
    let mut total = 0.0;
    for est in estimates {
        let assignment = match_to_truth(est, truth)?;
        total += truth
            .iter()
            .zip(&assignment)
            .map(|(t, &e)| (est[e] - t).powi(2))
            .sum::<f64>();
    }
    Ok(total / estimates.len() as f64)
}

/// Stochastic CRB on the source angles, in degrees², for a scenario with
/// uniform noise and fewer sources than sensors.
pub fn stochastic_crb(scenario: &Scenario) -> Result<DMatrix<f64>> {
    scenario.validate()?;
    let m = scenario.geometry.num_sensors();
    let k = scenario.sources.len();
    if k == 0 || k >= m {
        return Err(domain(format!("CRB needs 0 < sources < sensors, got {k} for {m}")));
    }
    let sigma = match scenario.noise {
        NoiseModel::Uniform(s) if s > 0.0 => s,
        _ => return Err(domain("CRB needs a positive uniform noise variance")),
    };
    let a = scenario.source_steering();
    let mut d = CMatrix::zeros(m, k);
    for (j, s) in scenario.sources.iter().enumerate() {
        d.set_column(j, &scenario.geometry.steering_derivative(s.angle_deg));
    }
    let gram_inv = (a.adjoint() * &a)
        .try_inverse()
        .ok_or_else(|| Error::Singular("A^H A".into()))?;
    let proj = CMatrix::identity(m, m) - &a * gram_inv * a.adjoint();
    let r_inv = scenario
        .true_covariance()
        .try_inverse()
        .ok_or_else(|| Error::Singular("R".into()))?;
    let p = scenario.source_covariance().map(C64::from);
    let g = &p * a.adjoint() * r_inv * &a * &p;
    let dpd = d.adjoint() * proj * &d;
    let h = DMatrix::from_fn(k, k, |i, j| (dpd[(i, j)] * g[(j, i)]).re);
    let h_inv = h
        .try_inverse()
        .ok_or_else(|| Error::Singular("Fisher information".into()))?;
    let scale = sigma / (2.0 * scenario.snapshots as f64) * (180.0 / std::f64::consts::PI).powi(2);
    Ok(h_inv * scale)
}

/// Sum of the per-source angle bounds, in degrees².
pub fn total_crb(scenario: &Scenario) -> Result<f64> {
    Ok(stochastic_crb(scenario)?.trace())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EstimatorKind {
    Per,
    Iaa,
    Music,
    Amv,
    Samv0,
    Samv1,
    Samv2,
    AmvSml,
    Samv1Sml,
    Samv2Sml,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 10] = [
        EstimatorKind::Per,
        EstimatorKind::Iaa,
        EstimatorKind::Music,
        EstimatorKind::Amv,
        EstimatorKind::Samv0,
        EstimatorKind::Samv1,
        EstimatorKind::Samv2,
        EstimatorKind::AmvSml,
        EstimatorKind::Samv1Sml,
        EstimatorKind::Samv2Sml,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Per => "per",
            EstimatorKind::Iaa => "iaa",
            EstimatorKind::Music => "music",
            EstimatorKind::Amv => "amv",
            EstimatorKind::Samv0 => "samv0",
            EstimatorKind::Samv1 => "samv1",
            EstimatorKind::Samv2 => "samv2",
            EstimatorKind::AmvSml => "amv-sml",
            EstimatorKind::Samv1Sml => "samv1-sml",
            EstimatorKind::Samv2Sml => "samv2-sml",
        }
    }

    pub fn valid_names() -> String {
        Self::ALL.map(|e| e.name()).join(", ")
    }

    fn sml(self) -> Option<SmlVariant> {
        match self {
            EstimatorKind::AmvSml => Some(SmlVariant::Amv),
            EstimatorKind::Samv1Sml => Some(SmlVariant::Samv1),
            EstimatorKind::Samv2Sml => Some(SmlVariant::Samv2),
            _ => None,
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        Self::ALL
            .into_iter()
            .find(|e| e.name() == key)
            .ok_or_else(|| {
                domain(format!(
                    "unknown estimator '{s}' (valid: {})",
                    Self::valid_names()
                ))
            })
    }
}

/// Monte Carlo sweep over SNR.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    /// Geometry, sources, coherence and snapshot count. Its noise and seed
    /// are replaced per SNR point and trial.
    pub scenario: Scenario,
    pub snr_db: Vec<f64>,
    pub trials: usize,
    pub estimators: Vec<EstimatorKind>,
    pub base_seed: u64,
    pub grid_step: f64,
    pub control: IterationControl,
    pub iaa: IaaControl,
    pub sml: SmlControl,
    /// Store wall-clock times. Off by default so that results are
    /// reproducible byte for byte.
    pub record_timings: bool,
}

impl SweepConfig {
    pub fn new(scenario: Scenario, snr_db: Vec<f64>, trials: usize, estimators: Vec<EstimatorKind>) -> Self {
        Self {
            scenario,
            snr_db,
            trials,
            estimators,
            base_seed: 0,
            grid_step: 0.2,
            control: IterationControl {
                keep_history: false,
                ..IterationControl::default()
            },
            iaa: IaaControl::default(),
            sml: SmlControl {
                init: IterationControl {
                    keep_history: false,
                    ..IterationControl::default()
                },
                ..SmlControl::default()
            },
            record_timings: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.trials == 0 {
            return cfg("trials must be at least 1".into());
        }
        if self.snr_db.is_empty() {
            return cfg("SNR list is empty".into());
        }
        if self.snr_db.iter().any(|s| !s.is_finite()) {
            return cfg("SNR values must be finite".into());
        }
        if self.estimators.is_empty() {
            return cfg("no estimators selected".into());
        }
        if !(self.grid_step > 0.0 && self.grid_step < 180.0) {
            return cfg(format!("grid step {} outside (0, 180)", self.grid_step));
        }
        self.scenario.validate()?;
        let k = self.scenario.sources.len();
        if k == 0 {
            return cfg("sweep scenario has no sources".into());
        }
        if self.scenario.sources.iter().any(|s| !(s.power > 0.0)) {
            return cfg("sweep sources need strictly positive powers".into());
        }
        if self.estimators.contains(&EstimatorKind::Music) && k >= self.scenario.geometry.num_sensors() {
            return cfg("MUSIC needs fewer sources than sensors".into());
        }
        self.control.validate()?;
        Ok(())
    }

    fn scenario_at(&self, snr_db: f64) -> Result<Scenario> {
        let mut s = self.scenario.clone();
        s.noise = NoiseModel::Uniform(snr_to_sigma(&s.sources, snr_db)?);
        Ok(s)
    }
}

/// Stream index of one trial: SNR index in the high word, trial in the low.
pub fn trial_stream(snr_index: usize, trial: usize) -> u64 {
    ((snr_index as u64) << 32) | trial as u64
}

/// Outcome of one estimator on one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub estimator: EstimatorKind,
    pub snr_index: usize,
    pub trial: usize,
    /// Estimated angle and power matched to each true source, in the
    /// scenario's source order. Empty when the estimator failed.
    pub angles: Vec<f64>,
    pub powers: Vec<Option<f64>>,
    pub padded: bool,
    pub error: Option<String>,
    pub seconds: f64,
}

impl TrialRecord {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

/// Aggregate for one (estimator, SNR) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub estimator: EstimatorKind,
    pub snr_db: f64,
    /// Total angle MSE over trials that produced an estimate.
    pub total_mse: f64,
    pub crb: f64,
    pub trials: usize,
    /// Trials where the estimator errored or peak picking had to pad.
    pub failures: usize,
    pub padded: usize,
    /// Mean of `p̂ − p` over matched sources; NaN for pseudospectra.
    pub power_bias: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
    /// Total stochastic CRB per SNR (NaN where undefined).
    pub crb: Vec<f64>,
    pub records: Vec<TrialRecord>,
}

impl SweepResult {
    pub fn point(&self, estimator: EstimatorKind, snr_db: f64) -> Option<&SweepPoint> {
        self.points
            .iter()
            .find(|p| p.estimator == estimator && p.snr_db == snr_db)
    }

    /// Number of records that errored.
    pub fn errors(&self) -> usize {
        self.records.iter().filter(|r| r.failed()).count()
    }
}

struct Estimate {
    angles: Vec<f64>,
    powers: Option<Vec<f64>>,
    padded: bool,
}

fn from_spectrum(spectrum: &[f64], grid: &[f64], count: usize, powers: bool) -> Estimate {
    let peaks = pick_peaks(spectrum, grid, count);
    Estimate {
        powers: powers.then(|| peaks.indices.iter().map(|&i| spectrum[i]).collect()),
        angles: peaks.angles,
        padded: peaks.padded,
    }
}

fn run_estimator(
    kind: EstimatorKind,
    config: &SweepConfig,
    dictionary: &SteeringDictionary,
    r_n: &CMatrix,
    samv2: &mut Option<PowerState>,
) -> Result<Estimate> {
    let k = config.scenario.sources.len();
    let grid = dictionary.grid();
    let samv2_spectrum = |samv2: &mut Option<PowerState>| -> Result<PowerState> {
        if samv2.is_none() {
            let (est, _) = samv_estimate(SamvVariant::Samv2, dictionary, r_n, &config.sml.init)?;
            *samv2 = Some(est);
        }
        Ok(samv2.clone().expect("filled above"))
    };
    if let Some(variant) = kind.sml() {
        let spectrum = samv2_spectrum(samv2)?;
        let peaks = pick_peaks(&spectrum.powers, grid, k);
        let problem = seed_problem(dictionary, r_n, &spectrum, &peaks.indices)?;
        let est = refine(problem, variant, grid_step(dictionary), &config.sml)?;
        return Ok(Estimate {
            angles: est.angles(),
            powers: Some(est.sources.iter().map(|s| s.power).collect()),
            padded: peaks.padded,
        });
    }
    let spectrum = match kind {
        EstimatorKind::Per => per_estimate(dictionary, r_n),
        EstimatorKind::Iaa => iaa_from_covariance(dictionary, r_n, &config.iaa)?.powers,
        EstimatorKind::Music => {
            let s = music_pseudospectrum(dictionary, r_n, k)?;
            return Ok(from_spectrum(&s, grid, k, false));
        }
        EstimatorKind::Amv => amv_estimate(dictionary, r_n, &config.control)?.0.powers,
        EstimatorKind::Samv0 => samv_estimate(SamvVariant::Samv0, dictionary, r_n, &config.control)?.0.powers,
        EstimatorKind::Samv1 => samv_estimate(SamvVariant::Samv1, dictionary, r_n, &config.control)?.0.powers,
        EstimatorKind::Samv2 => {
            if config.control == config.sml.init {
                samv2_spectrum(samv2)?.powers
            } else {
                samv_estimate(SamvVariant::Samv2, dictionary, r_n, &config.control)?.0.powers
            }
        }
        _ => unreachable!("SML variants handled above"),
    };
    Ok(from_spectrum(&spectrum, grid, k, true))
}

fn run_trial(
    config: &SweepConfig,
    dictionary: &SteeringDictionary,
    scenario: &Scenario,
    snr_index: usize,
    trial: usize,
) -> Vec<TrialRecord> {
    let truth: Vec<f64> = scenario.sources.iter().map(|s| s.angle_deg).collect();
    let mut rng = stream_rng(config.base_seed, trial_stream(snr_index, trial));
    let r_n = synthesize_with_rng(scenario, &mut rng).map(|y| y.sample_covariance());
    let mut samv2 = None;
    config
        .estimators
        .iter()
        .map(|&kind| {
            let start = config.record_timings.then(Instant::now);
            let outcome = r_n
                .clone()
                .and_then(|r_n| run_estimator(kind, config, dictionary, &r_n, &mut samv2))
                .and_then(|est| {
                    let assignment = match_to_truth(&est.angles, &truth)?;
                    Ok((est, assignment))
                });
            let seconds = start.map_or(0.0, |s| s.elapsed().as_secs_f64());
            let mut record = TrialRecord {
                estimator: kind,
                snr_index,
                trial,
                angles: Vec::new(),
                powers: Vec::new(),
                padded: false,
                error: None,
                seconds,
            };
            match outcome {
                Ok((est, assignment)) => {
                    record.angles = assignment.iter().map(|&e| est.angles[e]).collect();
                    record.powers = assignment
                        .iter()
                        .map(|&e| est.powers.as_ref().map(|p| p[e]))
                        .collect();
                    record.padded = est.padded;
                }
                Err(e) => record.error = Some(e.to_string()),
            }
            record
        })
        .collect()
}

/// Run a sweep. Trials execute in parallel on the current rayon pool;
/// `progress` is called with (completed, total) after each trial.
pub fn run_sweep_with_progress(
    config: &SweepConfig,
    progress: &(dyn Fn(usize, usize) + Sync),
) -> Result<SweepResult> {
    config.validate()?;
    let dictionary =
        SteeringDictionary::build(&config.scenario.geometry, 0.0, 180.0, config.grid_step)?;
    let scenarios = config
        .snr_db
        .iter()
        .map(|&snr| config.scenario_at(snr))
        .collect::<Result<Vec<_>>>()?;
    let crb: Vec<f64> = scenarios
        .iter()
        .map(|s| total_crb(s).unwrap_or(f64::NAN))
        .collect();
    let jobs: Vec<(usize, usize)> = (0..scenarios.len())
        .flat_map(|s| (0..config.trials).map(move |t| (s, t)))
        .collect();
    let done = AtomicUsize::new(0);
    let total = jobs.len();
    let per_trial: Vec<Vec<TrialRecord>> = jobs
        .par_iter()
        .map(|&(s, t)| {
            let out = run_trial(config, &dictionary, &scenarios[s], s, t);
            progress(done.fetch_add(1, Ordering::Relaxed) + 1, total);
            out
        })
        .collect();
    let records: Vec<TrialRecord> = per_trial.into_iter().flatten().collect();

    let truth = &config.scenario.sources;
    let mut points = Vec::new();
    for &kind in &config.estimators {
        for (s, &snr_db) in config.snr_db.iter().enumerate() {
            let rows = records
                .iter()
                .filter(|r| r.estimator == kind && r.snr_index == s);
            let (mut sq, mut ok, mut errors, mut padded, mut seconds) = (0.0, 0usize, 0, 0, 0.0);
            let (mut bias, mut bias_n) = (0.0, 0usize);
            for r in rows {
                seconds += r.seconds;
                if r.failed() {
                    errors += 1;
                    continue;
                }
                ok += 1;
                padded += r.padded as usize;
                for ((a, p), src) in r.angles.iter().zip(&r.powers).zip(truth) {
                    sq += (a - src.angle_deg).powi(2);
                    if let Some(p) = p {
                        bias += p - src.power;
                        bias_n += 1;
                    }
                }
            }
            points.push(SweepPoint {
                estimator: kind,
                snr_db,
                total_mse: if ok > 0 { sq / ok as f64 } else { f64::NAN },
                crb: crb[s],
                trials: config.trials,
                failures: errors + padded,
                padded,
                power_bias: if bias_n > 0 { bias / bias_n as f64 } else { f64::NAN },
                seconds,
            });
        }
    }
    Ok(SweepResult {
        points,
        crb,
        records,
    })
}

pub fn run_sweep(config: &SweepConfig) -> Result<SweepResult> {
    run_sweep_with_progress(config, &|_, _| {})
}
