//! Single-snapshot range-Doppler imaging with a polyphase-coded pulse.
//!
//! Each dictionary column is the pulse delayed by `d` samples and
//! modulated by an intra-pulse Doppler `exp(i2π f n / F)`. The sparse
//! estimators treat the one received vector as a single snapshot of an
//! `(L + D − 1)`-sensor "array".

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::amv::IterationControl;
use crate::array::{complex_gaussian, stream_rng, SteeringDictionary};
use crate::baselines::{iaa_from_covariance, per_estimate, IaaControl};
use crate::error::{dimension, domain, Error, Result};
use crate::samv::{samv_estimate, SamvVariant};
use crate::{CMatrix, CVector, C64};

/// Unit-modulus pulse code.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: CVector,
}

impl Waveform {
    pub fn new(samples: CVector) -> Result<Self> {
        if samples.is_empty() {
            return Err(domain("empty waveform"));
        }
        if samples.iter().any(|s| (s.norm() - 1.0).abs() > 1e-12) {
            return Err(domain("waveform samples must have unit modulus"));
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &CVector {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// P3 code: phase `π n² / L` for `n = 0..L`.
pub fn p3_code(len: usize) -> Result<Waveform> {
    if len < 2 {
        return Err(domain(format!("P3 code needs length >= 2, got {len}")));
    }
    let l = len as f64;
    let samples = CVector::from_iterator(
        len,
        (0..len).map(|n| C64::from_polar(1.0, PI * (n * n) as f64 / l)),
    );
    Waveform::new(samples)
}

/// Delay-Doppler dictionary.
#[derive(Debug, Clone)]
pub struct RdGrid {
    dictionary: SteeringDictionary,
    num_delays: usize,
    num_dopplers: usize,
    code_len: usize,
}

impl RdGrid {
    pub fn dictionary(&self) -> &SteeringDictionary {
        &self.dictionary
    }

    pub fn num_delays(&self) -> usize {
        self.num_delays
    }

    pub fn num_dopplers(&self) -> usize {
        self.num_dopplers
    }

    pub fn code_len(&self) -> usize {
        self.code_len
    }

    /// Length of the received vector.
    pub fn observation_len(&self) -> usize {
        self.code_len + self.num_delays - 1
    }

    pub fn column_index(&self, delay: usize, doppler: usize) -> usize {
        delay * self.num_dopplers + doppler
    }

    pub fn bins(&self, column: usize) -> (usize, usize) {
        (column / self.num_dopplers, column % self.num_dopplers)
    }
}

pub fn build_rd_dictionary(
    waveform: &Waveform,
    num_delays: usize,
    num_dopplers: usize,
) -> Result<RdGrid> {
    if num_delays == 0 || num_dopplers == 0 {
        return Err(domain("range-Doppler grid needs at least one bin per axis"));
    }
    let l = waveform.len();
    let rows = l + num_delays - 1;
    let cols = num_delays * num_dopplers;
    let mut matrix = CMatrix::zeros(rows, cols);
    for d in 0..num_delays {
        for f in 0..num_dopplers {
            let c = d * num_dopplers + f;
            for (n, s) in waveform.samples().iter().enumerate() {
                let shift = C64::from_polar(1.0, 2.0 * PI * (f * n) as f64 / num_dopplers as f64);
                matrix[(d + n, c)] = s * shift;
            }
        }
    }
    let labels = (0..cols).map(|c| c as f64).collect();
    Ok(RdGrid {
        dictionary: SteeringDictionary::from_columns(matrix, labels)?,
        num_delays,
        num_dopplers,
        code_len: l,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RdMethod {
    Mf,
    Iaa,
    Samv0,
    Samv1,
    Samv2,
}

impl RdMethod {
    pub const ALL: [RdMethod; 5] = [
        RdMethod::Mf,
        RdMethod::Iaa,
        RdMethod::Samv0,
        RdMethod::Samv1,
        RdMethod::Samv2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RdMethod::Mf => "mf",
            RdMethod::Iaa => "iaa",
            RdMethod::Samv0 => "samv0",
            RdMethod::Samv1 => "samv1",
            RdMethod::Samv2 => "samv2",
        }
    }
}

impl fmt::Display for RdMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RdMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "");
        Self::ALL
            .into_iter()
            .find(|m| m.name() == key)
            .ok_or_else(|| {
                let names = Self::ALL.map(|m| m.name()).join(", ");
                domain(format!("unknown imaging method '{s}' (valid: {names})"))
            })
    }
}

/// A point scatterer on the grid. Power is linear.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RdTarget {
    pub delay: usize,
    pub doppler: usize,
    pub power: f64,
}

/// Image power on the delay × Doppler grid, with the truth it was made
/// from.
#[derive(Debug, Clone, PartialEq)]
pub struct RdImage {
    pub power: DMatrix<f64>,
    pub truth: Vec<RdTarget>,
}

impl RdImage {
    pub fn peak(&self) -> f64 {
        self.power.iter().copied().fold(0.0, f64::max)
    }

    pub fn to_db(&self) -> DMatrix<f64> {
        self.power.map(|p| 10.0 * p.max(f64::MIN_POSITIVE).log10())
    }
}

/// A synthetic scene: code, grid size, targets and receiver noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdScene {
    pub code_len: usize,
    pub num_delays: usize,
    pub num_dopplers: usize,
    pub targets: Vec<RdTarget>,
    pub noise_variance: f64,
    pub seed: u64,
}

impl RdScene {
    /// Nine targets on a 20 × 20 grid: six at 25 dB and three weak ones at
    /// `weak_db`, with 0 dB noise and a 30-chip code.
    pub fn canonical(weak_db: f64, seed: u64) -> Self {
        let strong = 10f64.powf(2.5);
        let weak = 10f64.powf(weak_db / 10.0);
        let t = |delay, doppler, power| RdTarget {
            delay,
            doppler,
            power,
        };
        Self {
            code_len: 30,
            num_delays: 20,
            num_dopplers: 20,
            targets: vec![
                t(3, 3, strong),
                t(4, 15, strong),
                t(9, 9, strong),
                t(12, 17, strong),
                t(16, 5, strong),
                t(17, 13, strong),
                t(6, 11, weak),
                t(10, 3, weak),
                t(14, 10, weak),
            ],
            noise_variance: 1.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.code_len < 2 {
            return Err(Error::Config("code length must be at least 2".into()));
        }
        if self.num_delays == 0 || self.num_dopplers == 0 {
            return Err(Error::Config("grid needs at least one bin per axis".into()));
        }
        if !(self.noise_variance >= 0.0 && self.noise_variance.is_finite()) {
            return Err(Error::Config("noise variance must be >= 0".into()));
        }
        for (i, t) in self.targets.iter().enumerate() {
            if t.delay >= self.num_delays || t.doppler >= self.num_dopplers {
                return Err(Error::Config(format!(
                    "target {i} at ({}, {}) is off the {}x{} grid",
                    t.delay, t.doppler, self.num_delays, self.num_dopplers
                )));
            }
            if !(t.power >= 0.0 && t.power.is_finite()) {
                return Err(Error::Config(format!("target {i}: power must be >= 0")));
            }
            if self.targets[..i]
                .iter()
                .any(|u| (u.delay, u.doppler) == (t.delay, t.doppler))
            {
                return Err(Error::Config(format!("target {i} duplicates another bin")));
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<RdGrid> {
        self.validate()?;
        build_rd_dictionary(&p3_code(self.code_len)?, self.num_delays, self.num_dopplers)
    }
}

/// Received vector: each target with amplitude `√p` and a uniform random
/// phase, plus circular white noise. Phases are drawn first, in target
/// order, then the noise samples.
pub fn synthesize_observation(scene: &RdScene, grid: &RdGrid) -> Result<CVector> {
    scene.validate()?;
    if (grid.num_delays, grid.num_dopplers, grid.code_len)
        != (scene.num_delays, scene.num_dopplers, scene.code_len)
    {
        return Err(dimension("grid does not match the scene"));
    }
    let mut rng = stream_rng(scene.seed, 0);
    let mut y = CVector::zeros(grid.observation_len());
    for t in &scene.targets {
        let phase = rng.gen_range(0.0..2.0 * PI);
        let col = grid.dictionary.matrix().column(grid.column_index(t.delay, t.doppler));
        y += col * C64::from_polar(t.power.sqrt(), phase);
    }
    let std = scene.noise_variance.sqrt();
    for v in y.iter_mut() {
        *v += complex_gaussian(&mut rng) * std;
    }
    Ok(y)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RdControl {
    pub samv: IterationControl,
    pub iaa: IaaControl,
}

impl Default for RdControl {
    fn default() -> Self {
        Self {
            samv: IterationControl {
                keep_history: false,
                ..IterationControl::default()
            },
            iaa: IaaControl::default(),
        }
    }
}

/// Image one received vector with `method`. `truth` is carried along for
/// scoring and export.
pub fn rd_image(
    method: RdMethod,
    grid: &RdGrid,
    observation: &CVector,
    truth: &[RdTarget],
    control: &RdControl,
) -> Result<RdImage> {
    if observation.len() != grid.observation_len() {
        return Err(dimension(format!(
            "observation has {} samples, grid expects {}",
            observation.len(),
            grid.observation_len()
        )));
    }
    let d = &grid.dictionary;
    let r_n = observation * observation.adjoint();
    let powers = match method {
        RdMethod::Mf => per_estimate(d, &r_n),
        RdMethod::Iaa => iaa_from_covariance(d, &r_n, &control.iaa)?.powers,
        RdMethod::Samv0 => samv_estimate(SamvVariant::Samv0, d, &r_n, &control.samv)?.0.powers,
        RdMethod::Samv1 => samv_estimate(SamvVariant::Samv1, d, &r_n, &control.samv)?.0.powers,
        RdMethod::Samv2 => samv_estimate(SamvVariant::Samv2, d, &r_n, &control.samv)?.0.powers,
    };
    let power = DMatrix::from_fn(grid.num_delays, grid.num_dopplers, |r, c| {
        powers[grid.column_index(r, c)]
    });
    Ok(RdImage {
        power,
        truth: truth.to_vec(),
    })
}

fn chebyshev(a: (usize, usize), b: (usize, usize)) -> usize {
    a.0.abs_diff(b.0).max(a.1.abs_diff(b.1))
}

/// Bins that dominate their 8-neighbourhood. On ties the first bin in
/// row-major order wins. Zero bins are never peaks.
pub fn local_peaks(image: &DMatrix<f64>) -> Vec<(usize, usize)> {
    let (rows, cols) = image.shape();
    let mut out = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let v = image[(r, c)];
            if v <= 0.0 {
                continue;
            }
            let mut peak = true;
            for rr in r.saturating_sub(1)..(r + 2).min(rows) {
                for cc in c.saturating_sub(1)..(c + 2).min(cols) {
                    if (rr, cc) == (r, c) {
                        continue;
                    }
                    let u = image[(rr, cc)];
                    let earlier = (rr, cc) < (r, c);
                    if u > v || (earlier && u == v) {
                        peak = false;
                    }
                }
            }
            if peak {
                out.push((r, c));
            }
        }
    }
    out
}

/// For each target: is there a local peak within `tolerance` bins whose
/// power is at most `dynamic_range_db` below the image maximum?
pub fn detections(image: &RdImage, tolerance: usize, dynamic_range_db: f64) -> Vec<bool> {
    let floor = image.peak() * 10f64.powf(-dynamic_range_db / 10.0);
    let peaks: Vec<(usize, usize)> = local_peaks(&image.power)
        .into_iter()
        .filter(|&b| image.power[b] >= floor)
        .collect();
    image
        .truth
        .iter()
        .map(|t| peaks.iter().any(|&p| chebyshev(p, (t.delay, t.doppler)) <= tolerance))
        .collect()
}

/// Largest power over bins more than `exclusion` bins from every target.
pub fn max_sidelobe(image: &RdImage, exclusion: usize) -> f64 {
    let (rows, cols) = image.power.shape();
    let mut best = 0.0f64;
    for r in 0..rows {
        for c in 0..cols {
            if image
                .truth
                .iter()
                .all(|t| chebyshev((r, c), (t.delay, t.doppler)) > exclusion)
            {
                best = best.max(image.power[(r, c)]);
            }
        }
    }
    best
}
