//! Covariance assembly `R = A diag(p) A^H + noise`, its guarded inverse,
//! and the quadratic forms every estimator update is built from.

use nalgebra::SymmetricEigen;

use crate::array::SteeringDictionary;
use crate::error::{dimension, Error, Result};
use crate::{CMatrix, CVector, C64};

/// Eigenvalues below this fraction of the largest one trigger diagonal
/// loading.
pub const SINGULARITY_RATIO: f64 = 1e-12;
/// Loading added as a fraction of `tr(R)/M`.
pub const DIAGONAL_LOADING: f64 = 1e-10;

/// `(X + X^H) / 2`.
pub fn hermitian_part(x: &CMatrix) -> CMatrix {
    (x + x.adjoint()) * C64::from(0.5)
}

/// Noise parameters carried by a [`PowerState`].
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseState {
    Uniform(f64),
    Nonuniform(Vec<f64>),
}

/// Signal powers on the scanning grid plus the noise variance(s).
#[derive(Debug, Clone, PartialEq)]
pub struct PowerState {
    pub powers: Vec<f64>,
    pub noise: NoiseState,
}

impl PowerState {
    pub fn uniform(powers: Vec<f64>, sigma: f64) -> Self {
        Self {
            powers,
            noise: NoiseState::Uniform(sigma),
        }
    }

    pub fn nonuniform(powers: Vec<f64>, sigmas: Vec<f64>) -> Self {
        Self {
            powers,
            noise: NoiseState::Nonuniform(sigmas),
        }
    }

    /// Common noise variance, or the mean of the per-sensor variances.
    pub fn sigma(&self) -> f64 {
        match &self.noise {
            NoiseState::Uniform(s) => *s,
            NoiseState::Nonuniform(v) => v.iter().sum::<f64>() / v.len() as f64,
        }
    }

    pub fn noise_variances(&self, m: usize) -> Vec<f64> {
        match &self.noise {
            NoiseState::Uniform(s) => vec![*s; m],
            NoiseState::Nonuniform(v) => v.clone(),
        }
    }

    /// Powers followed by the noise parameters.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.powers.clone();
        match &self.noise {
            NoiseState::Uniform(s) => v.push(*s),
            NoiseState::Nonuniform(s) => v.extend_from_slice(s),
        }
        v
    }

    /// `‖new − old‖∞ / ‖old‖∞` over the full state.
    pub fn relative_change(&self, previous: &PowerState) -> f64 {
        let (new, old) = (self.to_vec(), previous.to_vec());
        let delta = new
            .iter()
            .zip(&old)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let scale = old.iter().map(|x| x.abs()).fold(0.0, f64::max);
        if scale == 0.0 {
            if delta == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            delta / scale
        }
    }

    pub fn check_against(&self, dictionary: &SteeringDictionary) -> Result<()> {
        if self.powers.len() != dictionary.len() {
            return Err(dimension(format!(
                "{} powers for a {}-column dictionary",
                self.powers.len(),
                dictionary.len()
            )));
        }
        if let NoiseState::Nonuniform(v) = &self.noise {
            if v.len() != dictionary.num_sensors() {
                return Err(dimension(format!(
                    "{} noise variances for {} sensors",
                    v.len(),
                    dictionary.num_sensors()
                )));
            }
        }
        Ok(())
    }
}

/// A model covariance with its (guarded) inverse.
#[derive(Debug, Clone)]
pub struct ModelCovariance {
    r: CMatrix,
    inverse: CMatrix,
    eigenvalues: Vec<f64>,
    loaded: bool,
}

impl ModelCovariance {
    /// Factor a Hermitian matrix, loading the diagonal when it is
    /// numerically singular.
    pub fn from_matrix(r: CMatrix) -> Result<Self> {
        let m = r.nrows();
        if m == 0 || r.ncols() != m {
            return Err(dimension("covariance must be square and non-empty"));
        }
        let mut r = hermitian_part(&r);
        let eig = SymmetricEigen::new(r.clone());
        let mut values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        let largest = values.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        let smallest = values.iter().copied().fold(f64::INFINITY, f64::min);
        let mut loaded = false;
        if !(largest > 0.0) || !largest.is_finite() {
            return Err(Error::Singular("covariance is zero or not finite".into()));
        }
        if smallest < SINGULARITY_RATIO * largest {
            let trace: f64 = (0..m).map(|i| r[(i, i)].re).sum();
            let load = DIAGONAL_LOADING * trace / m as f64;
            for i in 0..m {
                r[(i, i)] += C64::from(load);
            }
            values.iter_mut().for_each(|l| *l += load);
            loaded = true;
            if values.iter().any(|&l| !(l > 0.0)) {
                return Err(Error::Singular(
                    "covariance is indefinite even after diagonal loading".into(),
                ));
            }
        }
        let v = &eig.eigenvectors;
        let mut scaled = v.clone();
        for (j, l) in values.iter().enumerate() {
            scaled.column_mut(j).scale_mut(1.0 / l);
        }
        let inverse = hermitian_part(&(scaled * v.adjoint()));
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Ok(Self {
            r,
            inverse,
            eigenvalues: values,
            loaded,
        })
    }

    pub fn r(&self) -> &CMatrix {
        &self.r
    }

    pub fn inverse(&self) -> &CMatrix {
        &self.inverse
    }

    /// Whether diagonal loading had to be applied.
    pub fn loaded(&self) -> bool {
        self.loaded
    }

    /// Eigenvalues in ascending order (after any loading).
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn log_det(&self) -> f64 {
        self.eigenvalues.iter().map(|l| l.ln()).sum()
    }

    /// Gaussian negative log-likelihood `ln det R + tr(R^{-1} R_N)`.
    pub fn ml_cost(&self, r_n: &CMatrix) -> f64 {
        self.log_det() + trace_product(&self.inverse, r_n)
    }
}

/// `Re tr(X Y)` without forming the product.
pub fn trace_product(x: &CMatrix, y: &CMatrix) -> f64 {
    let m = x.nrows();
    let mut acc = 0.0;
    for i in 0..m {
        for j in 0..m {
            acc += (x[(i, j)] * y[(j, i)]).re;
        }
    }
    acc
}

/// `A diag(p) A^H + noise` without inverting.
pub fn model_matrix(dictionary: &SteeringDictionary, state: &PowerState) -> Result<CMatrix> {
    state.check_against(dictionary)?;
    let mut r = dictionary.weighted_gram(&state.powers);
    for (i, s) in state
        .noise_variances(dictionary.num_sensors())
        .iter()
        .enumerate()
    {
        r[(i, i)] += C64::from(*s);
    }
    Ok(r)
}

/// Model covariance of `state` together with its inverse.
pub fn assemble_r(dictionary: &SteeringDictionary, state: &PowerState) -> Result<ModelCovariance> {
    ModelCovariance::from_matrix(model_matrix(dictionary, state)?)
}

/// `vec(R)` computed as `S p` with explicit Kronecker columns
/// `conj(a_k) ⊗ a_k` and `vec(I)` (or `vec(e_m e_m^T)` per sensor).
pub fn vectorize_model(dictionary: &SteeringDictionary, state: &PowerState) -> Result<CVector> {
    state.check_against(dictionary)?;
    let m = dictionary.num_sensors();
    let mut out = CVector::zeros(m * m);
    for (k, &p) in state.powers.iter().enumerate() {
        if p != 0.0 {
            let a = dictionary.column(k);
            out += kron::kron_vec(&a.map(|z| z.conj()), &a) * C64::from(p);
        }
    }
    for (i, s) in state.noise_variances(m).iter().enumerate() {
        out[i + i * m] += C64::from(*s);
    }
    Ok(out)
}

/// Interference-plus-noise covariance `Q_k = R − p_k a_k a_k^H` with its
/// inverse obtained from `R^{-1}` by a rank-one downdate.
#[derive(Debug, Clone)]
pub struct InterferenceCovariance {
    pub q: CMatrix,
    pub q_inverse: CMatrix,
    /// `b_k = Q_k^{-1} a_k`.
    pub b: CVector,
    /// `β_k = 1 / (1 + p_k a_k^H Q_k^{-1} a_k)`.
    pub beta: f64,
}

/// Downdate `cov` by the rank-one term `power · a a^H`.
pub fn downdate(cov: &ModelCovariance, a: &CVector, power: f64) -> Result<InterferenceCovariance> {
    let r_inv_a = cov.inverse() * a;
    let cap = a.dotc(&r_inv_a).re;
    let denom = 1.0 - power * cap;
    if !(denom > 1e-14) {
        return Err(Error::Singular(format!(
            "interference covariance is singular (1 - p a^H R^-1 a = {denom:e})"
        )));
    }
    let q = cov.r() - a * a.adjoint() * C64::from(power);
    let q_inverse = hermitian_part(
        &(cov.inverse() + &r_inv_a * r_inv_a.adjoint() * C64::from(power / denom)),
    );
    let b = &q_inverse * a;
    let beta = 1.0 / (1.0 + power * a.dotc(&b).re);
    Ok(InterferenceCovariance {
        q,
        q_inverse,
        b,
        beta,
    })
}

/// `Q_k` for grid point `k` of the dictionary.
pub fn interference_covariance(
    dictionary: &SteeringDictionary,
    state: &PowerState,
    k: usize,
) -> Result<InterferenceCovariance> {
    if k >= dictionary.len() {
        return Err(Error::Domain(format!(
            "grid index {k} out of range for {} columns",
            dictionary.len()
        )));
    }
    let cov = assemble_r(dictionary, state)?;
    downdate(&cov, &dictionary.column(k), state.powers[k])
}

/// `(a_k^H R^{-1} R_N R^{-1} a_k, (a_k^H R^{-1} a_k)^2)` for one column.
pub fn quadratic_forms(
    dictionary: &SteeringDictionary,
    r_inv: &CMatrix,
    r_n: &CMatrix,
    k: usize,
) -> (f64, f64) {
    let b = r_inv * dictionary.column(k);
    let num = b.dotc(&(r_n * &b)).re;
    let cap = dictionary.column(k).dotc(&b).re;
    (num, cap * cap)
}

/// Every quadratic form one estimator iteration needs, computed from a
/// single `R^{-1}`.
#[derive(Debug, Clone)]
pub struct UpdateForms {
    /// `a_k^H R^{-1} R_N R^{-1} a_k` per grid point.
    pub num: Vec<f64>,
    /// `a_k^H R^{-1} a_k` per grid point.
    pub cap: Vec<f64>,
    /// `e_m^H R^{-1} R_N R^{-1} e_m` per sensor.
    pub sensor_num: Vec<f64>,
    /// `e_m^H R^{-1} e_m` per sensor.
    pub sensor_cap: Vec<f64>,
    /// `tr(R^{-2} R_N)`.
    pub trace_weighted: f64,
    /// `tr(R^{-2})`.
    pub trace_inv_sq: f64,
    /// `tr(R^{-1})`.
    pub trace_inv: f64,
}

impl UpdateForms {
    pub fn compute(dictionary: &SteeringDictionary, cov: &ModelCovariance, r_n: &CMatrix) -> Self {
        Self::with_inverse(dictionary, cov.inverse(), r_n)
    }

    pub fn with_inverse(dictionary: &SteeringDictionary, r_inv: &CMatrix, r_n: &CMatrix) -> Self {
        let w = hermitian_part(&(r_inv * r_n * r_inv));
        let m = r_inv.nrows();
        let sensor_num: Vec<f64> = (0..m).map(|i| w[(i, i)].re).collect();
        let sensor_cap: Vec<f64> = (0..m).map(|i| r_inv[(i, i)].re).collect();
        Self {
            num: dictionary.quadratic_forms(&w),
            cap: dictionary.quadratic_forms(r_inv),
            trace_weighted: sensor_num.iter().sum(),
            trace_inv: sensor_cap.iter().sum(),
            trace_inv_sq: r_inv.norm_squared(),
            sensor_num,
            sensor_cap,
        }
    }
}

/// Dense Kronecker-space reference objects.
///
/// These materialise `M² x M²` matrices and exist to cross-check the
/// reduced forms; they refuse arrays larger than [`kron::MAX_SENSORS`].
pub mod kron {
    use super::*;

    pub const MAX_SENSORS: usize = 4;

    /// Column-stacking vectorisation.
    pub fn vec(x: &CMatrix) -> CVector {
        CVector::from_column_slice(x.as_slice())
    }

    pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
        a.kronecker(b)
    }

    pub fn kron_vec(a: &CVector, b: &CVector) -> CVector {
        let mut out = CVector::zeros(a.len() * b.len());
        for (i, x) in a.iter().enumerate() {
            for (j, y) in b.iter().enumerate() {
                out[i * b.len() + j] = x * y;
            }
        }
        out
    }

    /// `conj(a) ⊗ a`, the vectorised `a a^H`.
    pub fn outer_vec(a: &CVector) -> CVector {
        kron_vec(&a.map(|z| z.conj()), a)
    }

    /// `C_r = conj(R) ⊗ R`.
    pub fn circular_covariance(r: &CMatrix) -> Result<CMatrix> {
        if r.nrows() > MAX_SENSORS {
            return Err(dimension(format!(
                "Kronecker reference forms are limited to {MAX_SENSORS} sensors, got {}",
                r.nrows()
            )));
        }
        Ok(kron(&r.map(|z| z.conj()), r))
    }

    /// `(x^H C_r^{-1} y)` evaluated with the explicit `C_r`.
    pub fn weighted_inner(r: &CMatrix, x: &CVector, y: &CVector) -> Result<C64> {
        let c = circular_covariance(r)?;
        let c_inv = c
            .try_inverse()
            .ok_or_else(|| Error::Singular("C_r".into()))?;
        Ok(x.dotc(&(c_inv * y)))
    }
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use crate::array::{complex_gaussian, stream_rng, ArrayGeometry};
    use rand::Rng;

    pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> CMatrix {
        let mut rng = stream_rng(seed, 99);
        CMatrix::from_fn(rows, cols, |_, _| complex_gaussian(&mut rng))
    }

    pub fn random_pd(m: usize, seed: u64) -> CMatrix {
        let x = random_matrix(m, m + 2, seed);
        &x * x.adjoint() / C64::from((m + 2) as f64) + CMatrix::identity(m, m) * C64::from(0.1)
    }

    /// A random dictionary (arbitrary grid on a ULA) with a random state.
    pub fn random_problem(m: usize, k: usize, seed: u64) -> (SteeringDictionary, PowerState) {
        let mut rng = stream_rng(seed, 5);
        let mut grid: Vec<f64> = (0..k).map(|_| rng.gen_range(1.0..179.0)).collect();
        grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
        grid.dedup();
        let geometry = ArrayGeometry::ula(m).unwrap();
        let dict = SteeringDictionary::from_angles(&geometry, grid, None).unwrap();
        let powers = (0..dict.len()).map(|_| rng.gen_range(0.1..2.0)).collect();
        let sigma = rng.gen_range(0.2..1.0);
        (dict, PowerState::uniform(powers, sigma))
    }
}

#[cfg(test)]
mod tests {
    use super::kron::*;
    use super::test_support::*;
    use super::*;
    use crate::array::ArrayGeometry;

    fn c(re: f64) -> C64 {
        C64::from(re)
    }

    fn two_sensor_dict() -> SteeringDictionary {
        // broadside: a = [1, 1]
        SteeringDictionary::from_angles(&ArrayGeometry::ula(2).unwrap(), vec![90.0], None).unwrap()
    }

    #[test]
    fn assemble_examples() {
        let d = two_sensor_dict();
        let cov = assemble_r(&d, &PowerState::uniform(vec![2.0], 1.0)).unwrap();
        let expected = CMatrix::from_row_slice(2, 2, &[c(3.0), c(2.0), c(2.0), c(3.0)]);
        assert!((cov.r() - expected).norm() < 1e-14);
        assert!(!cov.loaded());

        let cov = assemble_r(&d, &PowerState::uniform(vec![0.0], 1.0)).unwrap();
        assert!((cov.r() - CMatrix::identity(2, 2)).norm() < 1e-14);
    }

    #[test]
    fn assemble_random_is_hermitian_with_noise_floor() {
        for seed in 0..10 {
            let (d, s) = random_problem(4, 7, seed);
            let cov = assemble_r(&d, &s).unwrap();
            assert!((cov.r() - cov.r().adjoint()).norm() < 1e-12);
            assert!(cov.eigenvalues()[0] >= s.sigma() - 1e-12);
            let id = cov.inverse() * cov.r();
            assert!((id - CMatrix::identity(4, 4)).norm() < 1e-10);
        }
    }

    #[test]
    fn nonuniform_noise_adds_diagonal() {
        let d = two_sensor_dict();
        let cov = assemble_r(&d, &PowerState::nonuniform(vec![0.0], vec![1.0, 4.0])).unwrap();
        let expected = CMatrix::from_row_slice(2, 2, &[c(1.0), c(0.0), c(0.0), c(4.0)]);
        assert!((cov.r() - expected).norm() < 1e-14);
    }

    #[test]
    fn singular_covariance_is_loaded() {
        let d = two_sensor_dict();
        let cov = assemble_r(&d, &PowerState::uniform(vec![1.0], 0.0)).unwrap();
        assert!(cov.loaded());
        let id = cov.inverse() * cov.r();
        assert!((id - CMatrix::identity(2, 2)).norm() < 1e-4);
        assert!(matches!(
            assemble_r(&d, &PowerState::uniform(vec![0.0], 0.0)),
            Err(Error::Singular(_))
        ));
    }

    #[test]
    fn state_dimension_is_checked() {
        let d = two_sensor_dict();
        assert!(matches!(
            assemble_r(&d, &PowerState::uniform(vec![1.0, 2.0], 1.0)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn vectorize_examples() {
        let g = ArrayGeometry::ula(2).unwrap();
        let d = SteeringDictionary::from_angles(&g, vec![0.0], None).unwrap();
        let v = vectorize_model(&d, &PowerState::uniform(vec![1.0], 0.0)).unwrap();
        let expected = [c(1.0), c(-1.0), c(-1.0), c(1.0)];
        for (a, b) in v.iter().zip(expected) {
            assert!((a - b).norm() < 1e-14);
        }
        let v = vectorize_model(&d, &PowerState::uniform(vec![0.0], 2.0)).unwrap();
        for (a, b) in v.iter().zip([c(2.0), c(0.0), c(0.0), c(2.0)]) {
            assert!((a - b).norm() < 1e-14);
        }
    }

    #[test]
    fn vectorize_matches_assembled() {
        for seed in 0..5 {
            let (d, s) = random_problem(3, 4, seed);
            let v = vectorize_model(&d, &s).unwrap();
            let r = model_matrix(&d, &s).unwrap();
            assert!((v - vec(&r)).norm() < 1e-12);
        }
    }

    #[test]
    fn interference_examples() {
        let d = two_sensor_dict();
        let s = PowerState::uniform(vec![2.0], 1.0);
        let q = interference_covariance(&d, &s, 0).unwrap();
        assert!((&q.q - CMatrix::identity(2, 2)).norm() < 1e-14);
        assert!((&q.q_inverse - CMatrix::identity(2, 2)).norm() < 1e-12);

        let s0 = PowerState::uniform(vec![0.0], 1.5);
        let q = interference_covariance(&d, &s0, 0).unwrap();
        assert!((&q.q - assemble_r(&d, &s0).unwrap().r()).norm() < 1e-14);
        assert!(interference_covariance(&d, &s0, 1).is_err());
    }

    #[test]
    fn downdate_matches_direct_inverse() {
        for seed in 0..20 {
            let (d, s) = random_problem(4, 6, seed);
            let cov = assemble_r(&d, &s).unwrap();
            for k in 0..d.len() {
                let q = interference_covariance(&d, &s, k).unwrap();
                let direct = q.q.clone().try_inverse().unwrap();
                assert!((&q.q_inverse - &direct).norm() < 1e-10);
                // R^{-1} = Q^{-1} − p β b b^H
                let back = &q.q_inverse - &q.b * q.b.adjoint() * C64::from(s.powers[k] * q.beta);
                assert!((back - cov.inverse()).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn quadratic_form_examples() {
        let g = ArrayGeometry::ula(3).unwrap();
        let d = SteeringDictionary::from_angles(&g, vec![37.0], None).unwrap();
        let id = CMatrix::identity(3, 3);
        let (num, den) = quadratic_forms(&d, &id, &id, 0);
        assert!((num - 3.0).abs() < 1e-12);
        assert!((den - 9.0).abs() < 1e-12);
    }

    #[test]
    fn quadratic_forms_match_kronecker_reference() {
        for seed in 0..10 {
            let (d, s) = random_problem(2, 3, seed);
            let cov = assemble_r(&d, &s).unwrap();
            let r_n = random_pd(2, seed + 100);
            let r_vec = vec(&r_n);
            let forms = UpdateForms::compute(&d, &cov, &r_n);
            for k in 0..d.len() {
                let abar = outer_vec(&d.column(k));
                let num = weighted_inner(cov.r(), &abar, &r_vec).unwrap();
                let den = weighted_inner(cov.r(), &abar, &abar).unwrap();
                let (n1, d1) = quadratic_forms(&d, cov.inverse(), &r_n, k);
                assert!((num.re - n1).abs() < 1e-10 && num.im.abs() < 1e-10);
                assert!((den.re - d1).abs() < 1e-10 && den.im.abs() < 1e-10);
                assert!((forms.num[k] - n1).abs() < 1e-10);
                assert!((forms.cap[k].powi(2) - d1).abs() < 1e-10);
            }
            let id = vec(&CMatrix::identity(2, 2));
            let t1 = weighted_inner(cov.r(), &id, &r_vec).unwrap();
            let t2 = weighted_inner(cov.r(), &id, &id).unwrap();
            assert!((t1.re - forms.trace_weighted).abs() < 1e-10);
            assert!((t2.re - forms.trace_inv_sq).abs() < 1e-10);
        }
    }

    #[test]
    fn kronecker_reference_rejects_large_arrays() {
        let r = CMatrix::identity(5, 5);
        assert!(matches!(circular_covariance(&r), Err(Error::Dimension(_))));
    }
}
