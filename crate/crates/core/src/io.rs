//! Configuration files and CSV persistence.
//!
//! Every configuration is TOML. Powers and noise levels are written in dB
//! and converted to linear scale here, once; nothing downstream sees dB.
//!
//! Every CSV starts with a version comment such as `# samv:snapshots v1.0`.
//! Readers reject files whose major version they do not know.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::amv::IterationControl;
use crate::array::{ArrayGeometry, NoiseModel, Scenario, SnapshotSet, Source};
use crate::baselines::IaaControl;
use crate::error::{Error, Result};
use crate::harness::{EstimatorKind, SweepConfig, SweepResult};
use crate::rd::{RdControl, RdImage, RdMethod, RdScene, RdTarget};
use crate::sml::SmlControl;
use crate::{CMatrix, C64};

/// Major version written into, and accepted from, every CSV header.
pub const FORMAT_MAJOR: u32 = 1;
const FORMAT_MINOR: u32 = 0;

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// dB value of a power, with zero mapped to a large finite negative value
/// so that CSV cells stay numeric.
pub fn linear_to_db(p: f64) -> f64 {
    10.0 * p.max(f64::MIN_POSITIVE).log10()
}

/// Shortest decimal that round-trips, switching to exponent notation for
/// very small or very large magnitudes.
pub fn fmt_f64(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || (1e-4..1e9).contains(&a) || !x.is_finite() {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

fn header(kind: &str) -> String {
    format!("# samv:{kind} v{FORMAT_MAJOR}.{FORMAT_MINOR}\n")
}

/// Check a `# samv:<kind> v<major>.<minor>` line.
pub fn check_version(line: &str, kind: &str, line_no: usize) -> Result<()> {
    let parse = |message: String| Error::Parse {
        line: line_no,
        message,
    };
    let rest = line
        .trim()
        .strip_prefix('#')
        .map(str::trim)
        .and_then(|s| s.strip_prefix("samv:"))
        .ok_or_else(|| parse(format!("expected '# samv:{kind} v{FORMAT_MAJOR}.x' header")))?;
    let (found_kind, version) = rest
        .split_once(char::is_whitespace)
        .ok_or_else(|| parse("header has no version".into()))?;
    if found_kind != kind {
        return Err(parse(format!("file holds '{found_kind}', expected '{kind}'")));
    }
    let version = version.trim();
    let (major, minor) = version
        .strip_prefix('v')
        .and_then(|v| v.split_once('.'))
        .ok_or_else(|| parse(format!("malformed version '{version}'")))?;
    let major: u32 = major
        .parse()
        .map_err(|_| parse(format!("malformed version '{version}'")))?;
    minor
        .parse::<u32>()
        .map_err(|_| parse(format!("malformed version '{version}'")))?;
    if major != FORMAT_MAJOR {
        return Err(parse(format!(
            "unsupported major version {major} (this build reads {FORMAT_MAJOR}.x)"
        )));
    }
    Ok(())
}

fn toml_error(text: &str, err: toml::de::Error) -> Error {
    let line = err
        .span()
        .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
        .unwrap_or(1);
    Error::Parse {
        line,
        message: err.message().to_string(),
    }
}

fn parse_toml<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| toml_error(text, e))
}

fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

// ---------------------------------------------------------------------
// Scenario

/// Sensor count of a half-wavelength ULA, or explicit positions in half
/// wavelengths.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum SensorSpec {
    Count(usize),
    Positions(Vec<f64>),
}

impl SensorSpec {
    fn geometry(&self) -> Result<ArrayGeometry> {
        let g = match self {
            SensorSpec::Count(m) => ArrayGeometry::ula(*m),
            SensorSpec::Positions(p) => ArrayGeometry::new(p.clone()),
        };
        g.map_err(|e| config(format!("sensors: {e}")))
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct SourceSpec {
    angle_deg: f64,
    power_db: f64,
}

/// Exactly one of the three keys sets the noise.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct NoiseSpec {
    variance_db: Option<f64>,
    /// Relative to the mean source power.
    snr_db: Option<f64>,
    /// One variance per sensor.
    variances_db: Option<Vec<f64>>,
}

impl NoiseSpec {
    fn model(&self, sources: &[Source]) -> Result<NoiseModel> {
        match (&self.variance_db, &self.snr_db, &self.variances_db) {
            (Some(v), None, None) => Ok(NoiseModel::Uniform(db_to_linear(*v))),
            (None, Some(snr), None) => crate::harness::snr_to_sigma(sources, *snr)
                .map(NoiseModel::Uniform)
                .map_err(|e| config(format!("noise.snr_db: {e}"))),
            (None, None, Some(v)) => Ok(NoiseModel::Nonuniform(
                v.iter().map(|&d| db_to_linear(d)).collect(),
            )),
            _ => Err(config(
                "noise needs exactly one of variance_db, snr_db, variances_db",
            )),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    sensors: SensorSpec,
    #[serde(default)]
    sources: Vec<SourceSpec>,
    #[serde(default)]
    coherence_groups: Vec<Vec<usize>>,
    noise: NoiseSpec,
    snapshots: usize,
    #[serde(default)]
    seed: u64,
}

fn sources_from(specs: &[SourceSpec]) -> Vec<Source> {
    specs
        .iter()
        .map(|s| Source {
            angle_deg: s.angle_deg,
            power: db_to_linear(s.power_db),
        })
        .collect()
}

/// Parse and validate a scenario config.
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let file: ScenarioFile = parse_toml(text)?;
    let sources = sources_from(&file.sources);
    let scenario = Scenario {
        geometry: file.sensors.geometry()?,
        noise: file.noise.model(&sources)?,
        sources,
        coherence_groups: file.coherence_groups,
        snapshots: file.snapshots,
        seed: file.seed,
    };
    scenario.validate()?;
    Ok(scenario)
}

// ---------------------------------------------------------------------
// Estimation

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridSpec {
    #[serde(default)]
    start: f64,
    #[serde(default = "default_stop")]
    stop: f64,
    #[serde(default = "default_step")]
    step: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            start: 0.0,
            stop: default_stop(),
            step: default_step(),
        }
    }
}

fn default_stop() -> f64 {
    180.0
}

fn default_step() -> f64 {
    0.2
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct IterationSpec {
    max_iters: Option<usize>,
    rel_tol: Option<f64>,
    clamp: Option<bool>,
}

impl IterationSpec {
    fn apply(&self, mut c: IterationControl) -> Result<IterationControl> {
        if let Some(v) = self.max_iters {
            c.max_iters = v;
        }
        if let Some(v) = self.rel_tol {
            c.rel_tol = v;
        }
        if let Some(v) = self.clamp {
            c.clamp = v;
        }
        c.validate().map_err(|e| config(e.to_string()))?;
        Ok(c)
    }

    fn apply_iaa(&self, mut c: IaaControl) -> Result<IaaControl> {
        if self.clamp.is_some() {
            return Err(config("iaa: clamp is not an IAA setting"));
        }
        if let Some(v) = self.max_iters {
            c.max_iters = v;
        }
        if let Some(v) = self.rel_tol {
            c.rel_tol = v;
        }
        if c.max_iters == 0 || !(c.rel_tol > 0.0) {
            return Err(config("iaa: max_iters >= 1 and rel_tol > 0 required"));
        }
        Ok(c)
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SmlSpec {
    max_sweeps: Option<usize>,
    angle_tol: Option<f64>,
    search_tol: Option<f64>,
}

impl SmlSpec {
    fn apply(&self, mut c: SmlControl, init: IterationControl) -> Result<SmlControl> {
        c.init = init;
        if let Some(v) = self.max_sweeps {
            c.max_sweeps = v;
        }
        if let Some(v) = self.angle_tol {
            c.angle_tol = v;
        }
        if let Some(v) = self.search_tol {
            c.search_tol = v;
        }
        if c.max_sweeps == 0 || !(c.angle_tol > 0.0) || !(c.search_tol > 0.0) {
            return Err(config(
                "sml: max_sweeps >= 1, angle_tol > 0 and search_tol > 0 required",
            ));
        }
        Ok(c)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct EstimateFile {
    sensors: SensorSpec,
    num_sources: usize,
    #[serde(default)]
    nonuniform_noise: bool,
    #[serde(default)]
    grid: GridSpec,
    #[serde(default)]
    iteration: IterationSpec,
    #[serde(default)]
    iaa: IterationSpec,
    #[serde(default)]
    sml: SmlSpec,
}

/// Settings for estimating a spectrum from recorded snapshots.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateConfig {
    pub geometry: ArrayGeometry,
    /// Peaks to report; also the model order of MUSIC and the SML variants.
    pub num_sources: usize,
    /// Estimate one noise variance per sensor (AMV and SAMV only).
    pub nonuniform_noise: bool,
    pub grid_start: f64,
    pub grid_stop: f64,
    pub grid_step: f64,
    pub control: IterationControl,
    pub iaa: IaaControl,
    pub sml: SmlControl,
}

pub fn parse_estimate_config(text: &str) -> Result<EstimateConfig> {
    let file: EstimateFile = parse_toml(text)?;
    let geometry = file.sensors.geometry()?;
    let g = &file.grid;
    if !(g.step > 0.0) || !(0.0..180.0).contains(&g.start) || !(g.stop > g.start && g.stop <= 180.0) {
        return Err(config("grid needs 0 <= start < stop <= 180 and step > 0"));
    }
    if (g.stop - g.start) / g.step > 1e6 {
        return Err(config("grid has more than a million points"));
    }
    if file.num_sources == 0 {
        return Err(config("num_sources must be at least 1"));
    }
    let control = file.iteration.apply(IterationControl {
        keep_history: false,
        ..IterationControl::default()
    })?;
    Ok(EstimateConfig {
        geometry,
        num_sources: file.num_sources,
        nonuniform_noise: file.nonuniform_noise,
        grid_start: g.start,
        grid_stop: g.stop,
        grid_step: g.step,
        control,
        iaa: file.iaa.apply_iaa(IaaControl::default())?,
        sml: file.sml.apply(SmlControl::default(), control)?,
    })
}

// ---------------------------------------------------------------------
// Sweep

/// SNR points as an explicit list or an inclusive range.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum SnrSpec {
    List(Vec<f64>),
    Range { start: f64, stop: f64, step: f64 },
}

impl SnrSpec {
    fn values(&self) -> Result<Vec<f64>> {
        match self {
            SnrSpec::List(v) => Ok(v.clone()),
            SnrSpec::Range { start, stop, step } => {
                if !(*step > 0.0) || !(stop >= start) || !start.is_finite() || !stop.is_finite() {
                    return Err(config("snr_db range needs start <= stop and step > 0"));
                }
                let n = ((stop - start) / step + 1e-9).floor();
                if n > 10_000.0 {
                    return Err(config("snr_db range has too many points"));
                }
                Ok((0..=n as usize).map(|i| start + i as f64 * step).collect())
            }
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepFile {
    sensors: SensorSpec,
    sources: Vec<SourceSpec>,
    #[serde(default)]
    coherence_groups: Vec<Vec<usize>>,
    snapshots: usize,
    snr_db: SnrSpec,
    #[serde(default = "default_trials")]
    trials: usize,
    estimators: Vec<String>,
    #[serde(default)]
    base_seed: u64,
    #[serde(default = "default_step")]
    grid_step: f64,
    #[serde(default)]
    record_timings: bool,
    #[serde(default)]
    iteration: IterationSpec,
    #[serde(default)]
    iaa: IterationSpec,
    #[serde(default)]
    sml: SmlSpec,
}

fn default_trials() -> usize {
    200
}

/// Parse and validate a Monte Carlo sweep config.
pub fn parse_sweep(text: &str) -> Result<SweepConfig> {
    let file: SweepFile = parse_toml(text)?;
    let estimators = file
        .estimators
        .iter()
        .map(|s| s.parse::<EstimatorKind>().map_err(|e| config(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let scenario = Scenario {
        geometry: file.sensors.geometry()?,
        sources: sources_from(&file.sources),
        coherence_groups: file.coherence_groups,
        noise: NoiseModel::Uniform(1.0),
        snapshots: file.snapshots,
        seed: file.base_seed,
    };
    let mut cfg = SweepConfig::new(scenario, file.snr_db.values()?, file.trials, estimators);
    cfg.base_seed = file.base_seed;
    cfg.grid_step = file.grid_step;
    cfg.record_timings = file.record_timings;
    cfg.control = file.iteration.apply(cfg.control)?;
    cfg.iaa = file.iaa.apply_iaa(cfg.iaa)?;
    cfg.sml = file.sml.apply(cfg.sml.clone(), cfg.control)?;
    cfg.validate()?;
    Ok(cfg)
}

// ---------------------------------------------------------------------
// Range-Doppler scene

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct TargetSpec {
    delay: usize,
    doppler: usize,
    power_db: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneFile {
    #[serde(default = "default_code_len")]
    code_len: usize,
    #[serde(default = "default_bins")]
    num_delays: usize,
    #[serde(default = "default_bins")]
    num_dopplers: usize,
    #[serde(default)]
    noise_db: f64,
    #[serde(default)]
    seed: u64,
    targets: Vec<TargetSpec>,
    methods: Option<Vec<String>>,
    #[serde(default = "default_dynamic_range")]
    dynamic_range_db: f64,
    #[serde(default)]
    iteration: IterationSpec,
    #[serde(default)]
    iaa: IterationSpec,
}

fn default_code_len() -> usize {
    30
}

fn default_bins() -> usize {
    20
}

fn default_dynamic_range() -> f64 {
    40.0
}

/// A range-Doppler scene plus the methods to image it with.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub scene: RdScene,
    pub methods: Vec<RdMethod>,
    pub control: RdControl,
    /// Peaks further than this below the image maximum do not count as
    /// detections.
    pub dynamic_range_db: f64,
}

pub fn parse_scene(text: &str) -> Result<SceneConfig> {
    let file: SceneFile = parse_toml(text)?;
    let methods = match &file.methods {
        None => RdMethod::ALL.to_vec(),
        Some(names) => names
            .iter()
            .map(|s| s.parse::<RdMethod>().map_err(|e| config(e.to_string())))
            .collect::<Result<Vec<_>>>()?,
    };
    if methods.is_empty() {
        return Err(config("no imaging methods selected"));
    }
    if file.code_len.saturating_mul(file.num_delays).saturating_mul(file.num_dopplers) > 4_000_000 {
        return Err(config("scene dictionary is too large"));
    }
    if !(file.dynamic_range_db > 0.0) {
        return Err(config("dynamic_range_db must be positive"));
    }
    let scene = RdScene {
        code_len: file.code_len,
        num_delays: file.num_delays,
        num_dopplers: file.num_dopplers,
        targets: file
            .targets
            .iter()
            .map(|t| RdTarget {
                delay: t.delay,
                doppler: t.doppler,
                power: db_to_linear(t.power_db),
            })
            .collect(),
        noise_variance: db_to_linear(file.noise_db),
        seed: file.seed,
    };
    scene.validate()?;
    let defaults = RdControl::default();
    Ok(SceneConfig {
        scene,
        methods,
        control: RdControl {
            samv: file.iteration.apply(defaults.samv)?,
            iaa: file.iaa.apply_iaa(defaults.iaa)?,
        },
        dynamic_range_db: file.dynamic_range_db,
    })
}

// ---------------------------------------------------------------------
// Snapshot CSV

const SNAPSHOT_COLUMNS: [&str; 4] = ["sensor_index", "snapshot_index", "real", "imag"];

/// Serialise snapshots, one row per sample, snapshot-major.
pub fn write_snapshots(snapshots: &SnapshotSet) -> String {
    let y = snapshots.data();
    let mut out = header("snapshots");
    out.push_str(&SNAPSHOT_COLUMNS.join(","));
    out.push('\n');
    for n in 0..y.ncols() {
        for m in 0..y.nrows() {
            let v = y[(m, n)];
            let _ = writeln!(out, "{m},{n},{},{}", fmt_f64(v.re), fmt_f64(v.im));
        }
    }
    out
}

/// Parse a snapshot CSV. Rows may come in any order but every
/// (sensor, snapshot) pair must appear exactly once.
pub fn read_snapshots(text: &str) -> Result<SnapshotSet> {
    let parse = |line: usize, message: String| Error::Parse { line, message };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (first_no, first) = lines
        .by_ref()
        .find(|(_, l)| !l.trim().is_empty())
        .ok_or_else(|| parse(1, "empty file".into()))?;
    check_version(first, "snapshots", first_no)?;

    let body_start = first_no;
    let body: String = text.lines().skip(body_start).collect::<Vec<_>>().join("\n");
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(body.as_bytes());
    let line_of = |pos: Option<&csv::Position>| pos.map_or(body_start, |p| p.line() as usize + body_start);

    let headers = reader
        .headers()
        .map_err(|e| parse(line_of(e.position()), e.to_string()))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != SNAPSHOT_COLUMNS {
        return Err(parse(
            body_start + 1,
            format!("expected columns {}", SNAPSHOT_COLUMNS.join(",")),
        ));
    }

    let mut rows: Vec<(usize, usize, usize, C64)> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| parse(line_of(e.position()), e.to_string()))?;
        let line = line_of(record.position());
        let index = |i: usize| -> Result<usize> {
            record[i]
                .parse::<usize>()
                .map_err(|_| parse(line, format!("{} '{}' is not an index", SNAPSHOT_COLUMNS[i], &record[i])))
        };
        let value = |i: usize| -> Result<f64> {
            let v = record[i]
                .parse::<f64>()
                .map_err(|_| parse(line, format!("{} '{}' is not a number", SNAPSHOT_COLUMNS[i], &record[i])))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(parse(line, format!("{} is not finite", SNAPSHOT_COLUMNS[i])))
            }
        };
        rows.push((line, index(0)?, index(1)?, C64::new(value(2)?, value(3)?)));
    }
    if rows.is_empty() {
        return Err(parse(line_of(reader.position().into()), "no samples".into()));
    }

    let m = rows.iter().map(|r| r.1).max().unwrap_or(0) + 1;
    let n = rows.iter().map(|r| r.2).max().unwrap_or(0) + 1;
    let last_line = rows.last().map_or(body_start, |r| r.0);
    if m.checked_mul(n) != Some(rows.len()) {
        return Err(parse(
            last_line,
            format!(
                "{} samples cannot fill a {m} x {n} sensor-by-snapshot table",
                rows.len()
            ),
        ));
    }
    let mut seen = vec![false; m * n];
    let mut data = CMatrix::zeros(m, n);
    for &(line, i, j, v) in &rows {
        if std::mem::replace(&mut seen[j * m + i], true) {
            return Err(parse(line, format!("duplicate sample for sensor {i}, snapshot {j}")));
        }
        data[(i, j)] = v;
    }
    SnapshotSet::new(data)
}

// ---------------------------------------------------------------------
// Result writers

/// `angle_deg,power,power_db` rows for a spectrum or a list of peaks.
pub fn write_spectrum(angles: &[f64], powers: &[f64]) -> String {
    let mut out = header("spectrum");
    out.push_str("angle_deg,power,power_db\n");
    for (a, p) in angles.iter().zip(powers) {
        let _ = writeln!(out, "{},{},{}", fmt_f64(*a), fmt_f64(*p), fmt_f64(linear_to_db(*p)));
    }
    out
}

/// One row per (estimator, SNR) point.
pub fn write_sweep(result: &SweepResult) -> String {
    let mut out = header("sweep");
    out.push_str("estimator,snr_db,total_mse_deg2,crb_deg2,trials,failures,seconds\n");
    for p in &result.points {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            p.estimator,
            fmt_f64(p.snr_db),
            fmt_f64(p.total_mse),
            fmt_f64(p.crb),
            p.trials,
            p.failures,
            fmt_f64(p.seconds)
        );
    }
    out
}

/// Long-form per-trial log: one row per (estimator, SNR, trial, source).
/// Errored trials get a single row with the message and empty estimates.
pub fn write_trials(result: &SweepResult, snr_db: &[f64]) -> String {
    let mut out = header("trials");
    out.push_str("estimator,snr_db,trial,source,angle_deg,power,padded,error\n");
    for r in &result.records {
        let snr = snr_db.get(r.snr_index).copied().unwrap_or(f64::NAN);
        let error = r
            .error
            .as_deref()
            .map(|e| format!("\"{}\"", e.replace('"', "'")))
            .unwrap_or_default();
        if r.angles.is_empty() {
            let _ = writeln!(out, "{},{},{},,,,{},{error}", r.estimator, fmt_f64(snr), r.trial, r.padded);
            continue;
        }
        for (k, a) in r.angles.iter().enumerate() {
            let power = r
                .powers
                .get(k)
                .copied()
                .flatten()
                .map(fmt_f64)
                .unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{k},{},{power},{},{error}",
                r.estimator,
                fmt_f64(snr),
                r.trial,
                fmt_f64(*a),
                r.padded
            );
        }
    }
    out
}

/// `range_bin,doppler_bin,power_db`, range-major.
pub fn write_image(image: &RdImage) -> String {
    let mut out = header("image");
    out.push_str("range_bin,doppler_bin,power_db\n");
    let db = image.to_db();
    for r in 0..db.nrows() {
        for c in 0..db.ncols() {
            let _ = writeln!(out, "{r},{c},{}", fmt_f64(db[(r, c)]));
        }
    }
    out
}

/// One truth marker of the image overlay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthMarker {
    pub range_bin: usize,
    pub doppler_bin: usize,
    pub power_db: f64,
}

pub fn truth_overlay(targets: &[RdTarget]) -> Vec<TruthMarker> {
    targets
        .iter()
        .map(|t| TruthMarker {
            range_bin: t.delay,
            doppler_bin: t.doppler,
            power_db: linear_to_db(t.power),
        })
        .collect()
}

/// Truth of a simulated scenario, for scoring estimates made from its
/// snapshots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTruth {
    pub sensors: usize,
    pub snapshots: usize,
    pub seed: u64,
    pub angles_deg: Vec<f64>,
    pub powers: Vec<f64>,
    pub powers_db: Vec<f64>,
    pub coherence_groups: Vec<Vec<usize>>,
    pub noise_variances: Vec<f64>,
}

impl ScenarioTruth {
    pub fn from_scenario(s: &Scenario) -> Self {
        Self {
            sensors: s.geometry.num_sensors(),
            snapshots: s.snapshots,
            seed: s.seed,
            angles_deg: s.sources.iter().map(|x| x.angle_deg).collect(),
            powers: s.sources.iter().map(|x| x.power).collect(),
            powers_db: s.sources.iter().map(|x| linear_to_db(x.power)).collect(),
            coherence_groups: s.coherence_groups.clone(),
            noise_variances: s.noise.variances(s.geometry.num_sensors()),
        }
    }
}
