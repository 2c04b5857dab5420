//! Linear array geometry, steering vectors, scanning dictionaries and
//! synthetic snapshot generation.
//!
//! Angles are in degrees measured from the array axis, so the scanning
//! region is the half-open interval `[0°, 180°)`. Sensor positions are in
//! half-wavelength units and the steering phase of sensor `m` is
//! `π · position_m · cos θ`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::error::{dimension, domain, Error, Result};
use crate::{CMatrix, CVector, C64};

/// Positions of the sensors of a linear array, in half-wavelength units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    positions: Vec<f64>,
}

impl ArrayGeometry {
    pub fn new(positions: Vec<f64>) -> Result<Self> {
        if positions.len() < 2 {
            return Err(domain("an array needs at least two sensors"));
        }
        if positions.iter().any(|p| !p.is_finite()) {
            return Err(domain("sensor positions must be finite"));
        }
        if positions.windows(2).any(|w| w[1] <= w[0]) {
            return Err(domain("sensor positions must be strictly increasing"));
        }
        Ok(Self { positions })
    }

    /// Uniform linear array with half-wavelength spacing.
    pub fn ula(num_sensors: usize) -> Result<Self> {
        Self::new((0..num_sensors).map(|m| m as f64).collect())
    }

    pub fn num_sensors(&self) -> usize {
        self.positions.len()
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    /// Array response to a unit plane wave from `theta_deg`.
    pub fn steering_vector(&self, theta_deg: f64) -> Result<CVector> {
        check_angle(theta_deg)?;
        Ok(self.steering_unchecked(theta_deg))
    }

    pub(crate) fn steering_unchecked(&self, theta_deg: f64) -> CVector {
        let c = theta_deg.to_radians().cos();
        CVector::from_iterator(
            self.positions.len(),
            self.positions
                .iter()
                .map(|&x| C64::from_polar(1.0, PI * x * c)),
        )
    }

    /// Derivative of the steering vector with respect to the angle in
    /// radians.
    pub fn steering_derivative(&self, theta_deg: f64) -> CVector {
        let theta = theta_deg.to_radians();
        let (s, c) = theta.sin_cos();
        CVector::from_iterator(
            self.positions.len(),
            self.positions.iter().map(|&x| {
                let phase = PI * x * c;
                C64::new(0.0, -PI * x * s) * C64::from_polar(1.0, phase)
            }),
        )
    }
}

/// Free-function form of [`ArrayGeometry::steering_vector`].
pub fn steering_vector(geometry: &ArrayGeometry, theta_deg: f64) -> Result<CVector> {
    geometry.steering_vector(theta_deg)
}

fn check_angle(theta_deg: f64) -> Result<()> {
    if !(0.0..180.0).contains(&theta_deg) {
        return Err(domain(format!(
            "angle {theta_deg}° outside the scanning region [0°, 180°)"
        )));
    }
    Ok(())
}

/// Lag structure of a linear-array dictionary.
///
/// For a linear array `conj(a_i) a_j` depends only on the position
/// difference `x_j - x_i`, so `A diag(p) A^H` and the quadratic forms
/// `a_k^H X a_k` can be evaluated through the (few) distinct lags instead
/// of through the full `M x K` matrix.
#[derive(Debug, Clone)]
struct LagTable {
    /// `pair[i + j * M]` is the lag index of `x_i - x_j`.
    pair: Vec<usize>,
    /// `phases[(l, k)] = exp(iπ δ_l cos θ_k)`.
    phases: CMatrix,
}

impl LagTable {
    fn new(positions: &[f64], grid: &[f64]) -> Self {
        let m = positions.len();
        let mut diffs: Vec<f64> = Vec::with_capacity(m * m);
        for &xi in positions {
            for &xj in positions {
                diffs.push(xi - xj);
            }
        }
        let mut lags = diffs.clone();
        lags.sort_by(|a, b| a.partial_cmp(b).unwrap());
        lags.dedup_by(|a, b| (*a - *b).abs() <= 1e-9 * (1.0 + b.abs()));

        let lookup = |d: f64| {
            let idx = lags.partition_point(|&l| l < d - 1e-9 * (1.0 + d.abs()));
            idx.min(lags.len() - 1)
        };
        let mut pair = vec![0; m * m];
        for i in 0..m {
            for j in 0..m {
                pair[i + j * m] = lookup(positions[i] - positions[j]);
            }
        }
        let phases = CMatrix::from_fn(lags.len(), grid.len(), |l, k| {
            C64::from_polar(1.0, PI * lags[l] * grid[k].to_radians().cos())
        });
        Self { pair, phases }
    }

    fn weighted_gram(&self, m: usize, powers: &[f64]) -> CMatrix {
        let n_lags = self.phases.nrows();
        let mut r = vec![C64::new(0.0, 0.0); n_lags];
        for (k, &p) in powers.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            for (l, acc) in r.iter_mut().enumerate() {
                *acc += self.phases[(l, k)] * p;
            }
        }
        CMatrix::from_fn(m, m, |i, j| r[self.pair[i + j * m]])
    }

    fn quadratic_forms(&self, x: &CMatrix) -> Vec<f64> {
        let m = x.nrows();
        let mut s = vec![C64::new(0.0, 0.0); self.phases.nrows()];
        for j in 0..m {
            for i in 0..m {
                // conj(a_i) a_j carries the lag x_j - x_i
                s[self.pair[j + i * m]] += x[(i, j)];
            }
        }
        self.phases
            .column_iter()
            .map(|ph| {
                ph.iter()
                    .zip(&s)
                    .map(|(p, s)| s.re * p.re - s.im * p.im)
                    .sum()
            })
            .collect()
    }
}

/// The `M x K` matrix of steering vectors over a scanning grid.
#[derive(Debug, Clone)]
pub struct SteeringDictionary {
    matrix: CMatrix,
    grid: Vec<f64>,
    step: Option<f64>,
    geometry: Option<ArrayGeometry>,
    lags: Option<LagTable>,
}

impl SteeringDictionary {
    /// Scanning dictionary over the half-open grid `start, start + step, …`
    /// strictly below `stop`.
    pub fn build(geometry: &ArrayGeometry, start: f64, stop: f64, step: f64) -> Result<Self> {
        if !(step > 0.0) || !step.is_finite() {
            return Err(domain("grid step must be positive"));
        }
        if !(start < stop) || stop > 180.0 || start < 0.0 {
            return Err(domain(format!(
                "invalid grid range [{start}°, {stop}°) within [0°, 180°)"
            )));
        }
        // Snap to 1e-10° so that, e.g., 257 × 0.2 reads back as 51.4.
        let grid: Vec<f64> = (0..)
            .map(|i| ((start + i as f64 * step) * 1e10).round() / 1e10)
            .take_while(|&t| t < stop - 1e-9 * step)
            .collect();
        Self::from_angles(geometry, grid, Some(step))
    }

    /// Dictionary over an explicit, strictly increasing list of angles.
    pub fn from_angles(
        geometry: &ArrayGeometry,
        grid: Vec<f64>,
        step: Option<f64>,
    ) -> Result<Self> {
        if grid.is_empty() {
            return Err(domain("empty scanning grid"));
        }
        if grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(domain("grid angles must be strictly increasing"));
        }
        for &t in &grid {
            check_angle(t)?;
        }
        let m = geometry.num_sensors();
        let mut matrix = CMatrix::zeros(m, grid.len());
        for (k, &t) in grid.iter().enumerate() {
            matrix.set_column(k, &geometry.steering_unchecked(t));
        }
        let lags = Some(LagTable::new(geometry.positions(), &grid));
        Ok(Self {
            matrix,
            grid,
            step,
            geometry: Some(geometry.clone()),
            lags,
        })
    }

    /// Dictionary from arbitrary columns (e.g. delay-Doppler atoms). The
    /// grid labels only need to be strictly increasing.
    pub fn from_columns(matrix: CMatrix, labels: Vec<f64>) -> Result<Self> {
        if matrix.ncols() != labels.len() {
            return Err(dimension(format!(
                "{} columns but {} labels",
                matrix.ncols(),
                labels.len()
            )));
        }
        if labels.is_empty() || matrix.nrows() == 0 {
            return Err(domain("empty dictionary"));
        }
        if labels.windows(2).any(|w| w[1] <= w[0]) {
            return Err(domain("grid labels must be strictly increasing"));
        }
        Ok(Self {
            matrix,
            grid: labels,
            step: None,
            geometry: None,
            lags: None,
        })
    }

    /// Same dictionary with the lag fast path disabled.
    pub fn dense(&self) -> Self {
        Self {
            lags: None,
            ..self.clone()
        }
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn step(&self) -> Option<f64> {
        self.step
    }

    pub fn geometry(&self) -> Option<&ArrayGeometry> {
        self.geometry.as_ref()
    }

    pub fn num_sensors(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn len(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.ncols() == 0
    }

    pub fn column(&self, k: usize) -> CVector {
        self.matrix.column(k).into_owned()
    }

    /// `A diag(p) A^H`.
    pub fn weighted_gram(&self, powers: &[f64]) -> CMatrix {
        assert_eq!(powers.len(), self.len(), "power vector length");
        let m = self.num_sensors();
        if let Some(lags) = &self.lags {
            return lags.weighted_gram(m, powers);
        }
        let active: Vec<usize> = (0..self.len()).filter(|&k| powers[k] != 0.0).collect();
        let mut scaled = CMatrix::zeros(m, active.len());
        for (c, &k) in active.iter().enumerate() {
            let s = powers[k].sqrt();
            scaled.set_column(c, &(self.matrix.column(k) * C64::from(s)));
        }
        &scaled * scaled.adjoint()
    }

    /// `Re(a_k^H X a_k)` for every column `k`.
    pub fn quadratic_forms(&self, x: &CMatrix) -> Vec<f64> {
        if let Some(lags) = &self.lags {
            return lags.quadratic_forms(x);
        }
        let xa = x * &self.matrix;
        self.matrix
            .column_iter()
            .zip(xa.column_iter())
            .map(|(a, y)| a.iter().zip(y.iter()).map(|(a, y)| (a.conj() * y).re).sum())
            .collect()
    }

    /// `‖a_k‖²` for every column.
    pub fn column_norms_sq(&self) -> Vec<f64> {
        self.matrix
            .column_iter()
            .map(|c| c.iter().map(|z| z.norm_sqr()).sum())
            .collect()
    }
}

/// Free-function form of [`SteeringDictionary::build`].
pub fn build_dictionary(
    geometry: &ArrayGeometry,
    start: f64,
    stop: f64,
    step: f64,
) -> Result<SteeringDictionary> {
    SteeringDictionary::build(geometry, start, stop, step)
}

/// One far-field source: angle in degrees and power on a linear scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Source {
    pub angle_deg: f64,
    pub power: f64,
}

/// Additive white noise: a common variance or one variance per sensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NoiseModel {
    Uniform(f64),
    Nonuniform(Vec<f64>),
}

impl NoiseModel {
    /// Per-sensor variances for an `m`-sensor array.
    pub fn variances(&self, m: usize) -> Vec<f64> {
        match self {
            NoiseModel::Uniform(s) => vec![*s; m],
            NoiseModel::Nonuniform(v) => v.clone(),
        }
    }
}

/// Ground truth for one synthetic experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub geometry: ArrayGeometry,
    pub sources: Vec<Source>,
    /// Sources listed in one group share a single waveform.
    pub coherence_groups: Vec<Vec<usize>>,
    pub noise: NoiseModel,
    pub snapshots: usize,
    pub seed: u64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.snapshots == 0 {
            return Err(Error::Config("snapshot count must be at least 1".into()));
        }
        for (k, s) in self.sources.iter().enumerate() {
            if !(s.power >= 0.0) || !s.power.is_finite() {
                return Err(Error::Config(format!("source {k}: power must be >= 0")));
            }
            if !(0.0..180.0).contains(&s.angle_deg) {
                return Err(Error::Config(format!(
                    "source {k}: angle {}° outside [0°, 180°)",
                    s.angle_deg
                )));
            }
        }
        let mut seen = vec![false; self.sources.len()];
        for group in &self.coherence_groups {
            if group.is_empty() {
                return Err(Error::Config("empty coherence group".into()));
            }
            for &k in group {
                if k >= self.sources.len() {
                    return Err(Error::Config(format!(
                        "coherence group names source {k}, only {} defined",
                        self.sources.len()
                    )));
                }
                if std::mem::replace(&mut seen[k], true) {
                    return Err(Error::Config(format!(
                        "source {k} appears in more than one coherence group"
                    )));
                }
            }
        }
        let m = self.geometry.num_sensors();
        match &self.noise {
            NoiseModel::Uniform(s) if !(*s >= 0.0) => {
                Err(Error::Config("noise variance must be >= 0".into()))
            }
            NoiseModel::Nonuniform(v) if v.len() != m => Err(Error::Config(format!(
                "{} per-sensor noise variances for {m} sensors",
                v.len()
            ))),
            NoiseModel::Nonuniform(v) if v.iter().any(|s| !(*s >= 0.0)) => {
                Err(Error::Config("noise variances must be >= 0".into()))
            }
            _ => Ok(()),
        }
    }

    /// Partition of the sources into waveform groups: the configured
    /// coherence groups first, then every remaining source on its own.
    pub fn waveform_groups(&self) -> Vec<Vec<usize>> {
        let mut grouped = vec![false; self.sources.len()];
        let mut groups = self.coherence_groups.clone();
        for g in &groups {
            for &k in g {
                grouped[k] = true;
            }
        }
        groups.extend((0..self.sources.len()).filter(|&k| !grouped[k]).map(|k| vec![k]));
        groups
    }

    /// Source covariance matrix `E[x x^H]`.
    pub fn source_covariance(&self) -> DMatrix<f64> {
        let k = self.sources.len();
        let mut p = DMatrix::zeros(k, k);
        for g in self.waveform_groups() {
            for &i in &g {
                for &j in &g {
                    p[(i, j)] = (self.sources[i].power * self.sources[j].power).sqrt();
                }
            }
        }
        p
    }

    /// Steering matrix of the true sources.
    pub fn source_steering(&self) -> CMatrix {
        let m = self.geometry.num_sensors();
        let mut a = CMatrix::zeros(m, self.sources.len());
        for (k, s) in self.sources.iter().enumerate() {
            a.set_column(k, &self.geometry.steering_unchecked(s.angle_deg));
        }
        a
    }

    /// Model covariance `A P A^H + Σ` of the snapshots.
    pub fn true_covariance(&self) -> CMatrix {
        let a = self.source_steering();
        let p = self.source_covariance().map(C64::from);
        let mut r = &a * p * a.adjoint();
        for (m, s) in self.noise.variances(self.geometry.num_sensors()).iter().enumerate() {
            r[(m, m)] += C64::from(*s);
        }
        r
    }
}

/// The `M x N` matrix of array snapshots.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotSet {
    data: CMatrix,
}

impl SnapshotSet {
    pub fn new(data: CMatrix) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(domain("snapshot matrix must be non-empty"));
        }
        Ok(Self { data })
    }

    pub fn data(&self) -> &CMatrix {
        &self.data
    }

    pub fn num_sensors(&self) -> usize {
        self.data.nrows()
    }

    pub fn num_snapshots(&self) -> usize {
        self.data.ncols()
    }

    /// `R_N = Y Y^H / N`, made exactly Hermitian.
    pub fn sample_covariance(&self) -> CMatrix {
        let n = self.data.ncols() as f64;
        let r = &self.data * self.data.adjoint() / C64::from(n);
        crate::covariance::hermitian_part(&r)
    }
}

/// Free-function form of [`SnapshotSet::sample_covariance`].
pub fn sample_covariance(snapshots: &SnapshotSet) -> CMatrix {
    snapshots.sample_covariance()
}

/// Deterministic generator for stream `stream` of seed `seed`.
///
/// Distinct streams of the same seed are independent, which gives every
/// Monte Carlo trial its own reproducible sequence.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draw one circular complex Gaussian sample of unit variance.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * FRAC_1_SQRT_2
}

/// Source waveforms and noise drawn for one scenario realisation.
#[derive(Debug, Clone)]
pub struct SnapshotParts {
    /// `K x N` source waveforms `x(n)`.
    pub waveforms: CMatrix,
    /// `M x N` noise `e(n)`.
    pub noise: CMatrix,
}

/// Draw waveforms and noise using `rng`.
pub fn synthesize_parts<R: Rng + ?Sized>(scenario: &Scenario, rng: &mut R) -> Result<SnapshotParts> {
    scenario.validate()?;
    let n = scenario.snapshots;
    let m = scenario.geometry.num_sensors();
    let mut waveforms = CMatrix::zeros(scenario.sources.len(), n);
    for group in scenario.waveform_groups() {
        let shared: Vec<C64> = (0..n).map(|_| complex_gaussian(rng)).collect();
        for &k in &group {
            let amp = scenario.sources[k].power.sqrt();
            for (t, w) in shared.iter().enumerate() {
                waveforms[(k, t)] = w * amp;
            }
        }
    }
    let std: Vec<f64> = scenario.noise.variances(m).iter().map(|s| s.sqrt()).collect();
    let mut noise = CMatrix::zeros(m, n);
    for t in 0..n {
        for (i, s) in std.iter().enumerate() {
            noise[(i, t)] = complex_gaussian(rng) * *s;
        }
    }
    Ok(SnapshotParts { waveforms, noise })
}

/// Snapshots `y(n) = A x(n) + e(n)` drawn with an explicit generator.
pub fn synthesize_with_rng<R: Rng + ?Sized>(scenario: &Scenario, rng: &mut R) -> Result<SnapshotSet> {
    let parts = synthesize_parts(scenario, rng)?;
    let y = scenario.source_steering() * parts.waveforms + parts.noise;
    SnapshotSet::new(y)
}

/// Snapshots for `scenario`, fully determined by its seed.
pub fn synthesize_snapshots(scenario: &Scenario) -> Result<SnapshotSet> {
    let mut rng = stream_rng(scenario.seed, 0);
    synthesize_with_rng(scenario, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn assert_cvec(v: &CVector, expected: &[C64], tol: f64) {
        assert_eq!(v.len(), expected.len());
        for (a, b) in v.iter().zip(expected) {
            assert!((a - b).norm() < tol, "{a} vs {b}");
        }
    }

    #[test]
    fn steering_examples() {
        let g4 = ArrayGeometry::ula(4).unwrap();
        assert_cvec(&g4.steering_vector(90.0).unwrap(), &[c(1.0, 0.0); 4], 1e-15);
        let g2 = ArrayGeometry::ula(2).unwrap();
        assert_cvec(&g2.steering_vector(0.0).unwrap(), &[c(1.0, 0.0), c(-1.0, 0.0)], 1e-15);
        let g3 = ArrayGeometry::ula(3).unwrap();
        assert_cvec(
            &g3.steering_vector(60.0).unwrap(),
            &[c(1.0, 0.0), c(0.0, 1.0), c(-1.0, 0.0)],
            1e-15,
        );
    }

    #[test]
    fn steering_rejects_out_of_range() {
        let g = ArrayGeometry::ula(3).unwrap();
        assert!(matches!(g.steering_vector(180.0), Err(Error::Domain(_))));
        assert!(matches!(g.steering_vector(-0.1), Err(Error::Domain(_))));
        assert!(matches!(g.steering_vector(f64::NAN), Err(Error::Domain(_))));
    }

    #[test]
    fn geometry_validation() {
        assert!(ArrayGeometry::ula(1).is_err());
        assert!(ArrayGeometry::new(vec![0.0, 0.0]).is_err());
        assert!(ArrayGeometry::new(vec![0.0, f64::INFINITY]).is_err());
        assert!(ArrayGeometry::new(vec![0.0, 1.5, 4.0]).is_ok());
    }

    #[test]
    fn dictionary_grid_sizes() {
        let g = ArrayGeometry::ula(12).unwrap();
        let d = build_dictionary(&g, 0.0, 180.0, 0.2).unwrap();
        assert_eq!(d.len(), 900);
        assert_abs_diff_eq!(d.grid()[899], 179.8, epsilon = 1e-9);
        let d = build_dictionary(&g, 0.0, 180.0, 90.0).unwrap();
        assert_eq!(d.grid(), &[0.0, 90.0]);
        let d = build_dictionary(&g, 30.0, 60.0, 10.0).unwrap();
        assert_eq!(d.grid(), &[30.0, 40.0, 50.0]);
        assert!(build_dictionary(&g, 60.0, 30.0, 10.0).is_err());
        assert!(build_dictionary(&g, 0.0, 180.0, 0.0).is_err());
    }

    #[test]
    fn dictionary_columns_match_steering() {
        let g = ArrayGeometry::new(vec![0.0, 1.0, 3.0, 7.5]).unwrap();
        let d = build_dictionary(&g, 10.0, 170.0, 7.0).unwrap();
        for (k, &t) in d.grid().iter().enumerate() {
            let a = g.steering_vector(t).unwrap();
            assert!((d.column(k) - a).norm() < 1e-14);
        }
    }

    fn random_hermitian(m: usize, seed: u64) -> CMatrix {
        let mut rng = stream_rng(seed, 7);
        let x = CMatrix::from_fn(m, m, |_, _| complex_gaussian(&mut rng));
        &x * x.adjoint()
    }

    #[test]
    fn lag_fast_path_matches_dense() {
        for positions in [vec![0.0, 1.0, 2.0, 3.0, 4.0], vec![0.0, 0.7, 2.0, 5.25]] {
            let g = ArrayGeometry::new(positions).unwrap();
            let fast = build_dictionary(&g, 0.0, 180.0, 3.3).unwrap();
            let dense = fast.dense();
            let mut rng = stream_rng(3, 1);
            let p: Vec<f64> = (0..fast.len())
                .map(|k| if k % 3 == 0 { 0.0 } else { rng.gen::<f64>() })
                .collect();
            let diff = fast.weighted_gram(&p) - dense.weighted_gram(&p);
            assert!(diff.norm() < 1e-10);
            let x = random_hermitian(g.num_sensors(), 11);
            for (a, b) in fast.quadratic_forms(&x).iter().zip(dense.quadratic_forms(&x)) {
                assert!((a - b).abs() < 1e-10 * (1.0 + b.abs()));
            }
        }
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let g = ArrayGeometry::new(vec![0.0, 1.0, 2.5, 4.0]).unwrap();
        let theta = 47.3;
        let h = 1e-6;
        let fd = (g.steering_unchecked(theta + h) - g.steering_unchecked(theta - h))
            / C64::from((2.0 * h).to_radians());
        assert!((fd - g.steering_derivative(theta)).norm() < 1e-6);
    }

    proptest! {
        #[test]
        fn steering_norm_is_num_sensors(m in 2usize..20, theta in 0.0f64..179.999) {
            let g = ArrayGeometry::ula(m).unwrap();
            let a = g.steering_vector(theta).unwrap();
            prop_assert!((a.norm_squared() - m as f64).abs() < 1e-12);
            for z in a.iter() {
                prop_assert!((z.norm() - 1.0).abs() < 1e-14);
            }
        }

        #[test]
        fn sample_covariance_is_hermitian_psd(m in 1usize..6, n in 1usize..8, seed in 0u64..1000) {
            let mut rng = stream_rng(seed, 0);
            let y = CMatrix::from_fn(m, n, |_, _| complex_gaussian(&mut rng));
            let r = SnapshotSet::new(y).unwrap().sample_covariance();
            prop_assert!((&r - r.adjoint()).norm() < 1e-14);
            let eig = nalgebra::SymmetricEigen::new(r).eigenvalues;
            prop_assert!(eig.iter().all(|&l| l >= -1e-12));
        }
    }

    #[test]
    fn sample_covariance_examples() {
        let y = CMatrix::from_column_slice(2, 1, &[c(1.0, 0.0), c(0.0, 1.0)]);
        let r = SnapshotSet::new(y).unwrap().sample_covariance();
        let expected = CMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, -1.0), c(0.0, 1.0), c(1.0, 0.0)]);
        assert!((r - expected).norm() < 1e-15);

        let s = 2f64.sqrt();
        let y = CMatrix::from_row_slice(2, 2, &[c(s, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(s, 0.0)]);
        let r = SnapshotSet::new(y).unwrap().sample_covariance();
        assert!((r - CMatrix::identity(2, 2)).norm() < 1e-15);
    }

    fn scenario(sources: Vec<Source>, noise: NoiseModel, m: usize, n: usize) -> Scenario {
        Scenario {
            geometry: ArrayGeometry::ula(m).unwrap(),
            sources,
            coherence_groups: vec![],
            noise,
            snapshots: n,
            seed: 42,
        }
    }

    #[test]
    fn noise_only_has_unit_variance() {
        let sc = scenario(
            vec![Source { angle_deg: 40.0, power: 0.0 }],
            NoiseModel::Uniform(1.0),
            4,
            20_000,
        );
        let y = synthesize_snapshots(&sc).unwrap();
        let var = y.data().iter().map(|z| z.norm_sqr()).sum::<f64>() / y.data().len() as f64;
        assert!((var - 1.0).abs() < 0.03, "variance {var}");
    }

    #[test]
    fn noise_free_single_source_is_rank_one() {
        let sc = scenario(
            vec![Source { angle_deg: 90.0, power: 4.0 }],
            NoiseModel::Uniform(0.0),
            2,
            20_000,
        );
        let y = synthesize_snapshots(&sc).unwrap();
        for col in y.data().column_iter() {
            assert!((col[0] - col[1]).norm() < 1e-12);
        }
        let p = y.data().row(0).iter().map(|z| z.norm_sqr()).sum::<f64>() / 20_000.0;
        assert!((p - 4.0).abs() < 0.2, "power {p}");
    }

    fn correlation(x: &CMatrix, i: usize, j: usize) -> f64 {
        let (a, b) = (x.row(i), x.row(j));
        let cross: C64 = a.iter().zip(b.iter()).map(|(u, v)| u * v.conj()).sum();
        cross.norm() / (a.norm() * b.norm())
    }

    #[test]
    fn coherent_group_shares_waveform() {
        let mut sc = scenario(
            vec![
                Source { angle_deg: 35.11, power: 3.16 },
                Source { angle_deg: 50.15, power: 2.0 },
                Source { angle_deg: 55.05, power: 2.5 },
            ],
            NoiseModel::Uniform(0.1),
            12,
            10_000,
        );
        sc.coherence_groups = vec![vec![0, 2]];
        let parts = synthesize_parts(&sc, &mut stream_rng(5, 0)).unwrap();
        assert!((correlation(&parts.waveforms, 0, 2) - 1.0).abs() < 1e-12);
        assert!(correlation(&parts.waveforms, 0, 1) < 0.05);
    }

    #[test]
    fn synthesis_is_reproducible() {
        let sc = scenario(
            vec![Source { angle_deg: 20.0, power: 1.0 }],
            NoiseModel::Nonuniform(vec![1.0, 2.0, 3.0]),
            3,
            50,
        );
        assert_eq!(synthesize_snapshots(&sc).unwrap(), synthesize_snapshots(&sc).unwrap());
        let mut other = sc.clone();
        other.seed += 1;
        assert_ne!(synthesize_snapshots(&sc).unwrap(), synthesize_snapshots(&other).unwrap());
    }

    #[test]
    fn empirical_covariance_converges_to_model() {
        let sc = scenario(
            vec![
                Source { angle_deg: 30.0, power: 2.0 },
                Source { angle_deg: 75.0, power: 1.0 },
                Source { angle_deg: 120.0, power: 0.5 },
            ],
            NoiseModel::Uniform(0.3),
            6,
            100_000,
        );
        let r_n = synthesize_snapshots(&sc).unwrap().sample_covariance();
        let r = sc.true_covariance();
        let rel = (&r_n - &r).norm() / r.norm();
        assert!(rel < 0.05, "relative Frobenius error {rel}");
    }

    #[test]
    fn scenario_validation() {
        let mut sc = scenario(vec![Source { angle_deg: 20.0, power: 1.0 }], NoiseModel::Uniform(1.0), 3, 0);
        assert!(matches!(sc.validate(), Err(Error::Config(_))));
        sc.snapshots = 4;
        sc.coherence_groups = vec![vec![0, 3]];
        assert!(sc.validate().is_err());
        sc.coherence_groups = vec![];
        sc.noise = NoiseModel::Nonuniform(vec![1.0]);
        assert!(sc.validate().is_err());
        sc.noise = NoiseModel::Uniform(1.0);
        sc.sources[0].angle_deg = 180.0;
        assert!(sc.validate().is_err());
    }
}
