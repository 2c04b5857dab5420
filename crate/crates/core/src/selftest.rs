//! Quick numerical self-check: the Kronecker-space forms the estimators
//! are derived from, evaluated densely on small random problems and
//! compared with the reduced `M x M` forms the library actually uses.

use rand::Rng;

use crate::amv::amv_step;
use crate::array::{complex_gaussian, stream_rng, ArrayGeometry, SteeringDictionary};
use crate::baselines::per_estimate;
use crate::covariance::{assemble_r, kron, PowerState, UpdateForms};
use crate::error::{Error, Result};
use crate::samv::{samv_step, SamvVariant};
use crate::{CMatrix, CVector, C64};

/// Outcome of one identity over all instances.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub instances: usize,
    /// Largest relative deviation seen.
    pub max_error: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_error <= self.tolerance
    }
}

/// A random problem with at most [`kron::MAX_SENSORS`] sensors.
struct Instance {
    dict: SteeringDictionary,
    state: PowerState,
    r_n: CMatrix,
}

fn random_instance(seed: u64, index: u64) -> Result<Instance> {
    let mut rng = stream_rng(seed, index);
    let m = rng.gen_range(2..=kron::MAX_SENSORS);
    // Alternate between a ULA and a random sparse geometry.
    let geometry = if index % 2 == 0 {
        ArrayGeometry::ula(m)?
    } else {
        let mut pos = vec![0.0];
        for _ in 1..m {
            let last = *pos.last().unwrap_or(&0.0);
            pos.push(last + rng.gen_range(0.3..2.0));
        }
        ArrayGeometry::new(pos)?
    };
    let k = rng.gen_range(1..=6);
    let mut grid: Vec<f64> = (0..k).map(|_| rng.gen_range(1.0..179.0)).collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let dict = SteeringDictionary::from_angles(&geometry, grid, None)?;
    let powers = (0..dict.len()).map(|_| rng.gen_range(0.05..3.0)).collect();
    let state = PowerState::uniform(powers, rng.gen_range(0.1..2.0));
    let n = rng.gen_range(1..=8);
    let y = CMatrix::from_fn(m, n, |_, _| complex_gaussian(&mut rng));
    let r_n = &y * y.adjoint() / C64::from(n as f64);
    Ok(Instance { dict, state, r_n })
}

fn rel(a: C64, b: C64) -> f64 {
    (a - b).norm() / a.norm().max(b.norm()).max(1e-300)
}

fn rel_matrix(a: &CMatrix, b: &CMatrix) -> f64 {
    (a - b).norm() / a.norm().max(b.norm()).max(1e-300)
}

fn random_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> CMatrix {
    CMatrix::from_fn(rows, cols, |_, _| complex_gaussian(rng))
}

/// Dense `C_r^{-1}` of an instance's model covariance.
fn c_r_inverse(r: &CMatrix) -> Result<CMatrix> {
    kron::circular_covariance(r)?
        .try_inverse()
        .ok_or_else(|| Error::Singular("circular covariance".into()))
}

/// AMV power update evaluated directly in Kronecker space from
/// `p̂ = (ā^H C⁻¹ r_N + p ā^H C⁻¹ ā − ā^H C⁻¹ r) / ā^H C⁻¹ ā`.
fn dense_amv_update(c_inv: &CMatrix, abar: &CVector, r_n: &CVector, r: &CVector, p: f64) -> C64 {
    let denom = abar.dotc(&(c_inv * abar));
    (abar.dotc(&(c_inv * r_n)) + denom * p - abar.dotc(&(c_inv * r))) / denom
}

/// Run every identity on `instances` random problems drawn from `seed`.
pub fn run_identity_suite(instances: usize, seed: u64) -> Result<Vec<CheckResult>> {
    const TOL: f64 = 1e-10;
    let names = [
        "vec(ABC) = (C^T kron A) vec(B)",
        "(A kron B)(C kron D) = AC kron BD",
        "abar^H Cr^-1 r_N = a^H R^-1 R_N R^-1 a",
        "abar^H Cr^-1 abar = (a^H R^-1 a)^2",
        "vec(I)^H Cr^-1 r_N = tr(R^-2 R_N)",
        "vec(I)^H Cr^-1 vec(I) = tr(R^-2)",
        "AMV update = Kronecker-space minimiser",
        "SAMV-1 update = Kronecker-space ratio",
        "SAMV-1 at R = sigma I equals PER",
    ];
    let mut worst = [0.0f64; 9];

    for i in 0..instances {
        let inst = random_instance(seed, i as u64)?;
        let m = inst.dict.num_sensors();
        let mut rng = stream_rng(seed ^ 0x5eed, i as u64);

        let (a, b, c, d) = (
            random_matrix(&mut rng, m, m + 1),
            random_matrix(&mut rng, m + 1, m),
            random_matrix(&mut rng, m, 2),
            random_matrix(&mut rng, m, m),
        );
        let lhs = kron::vec(&(&a * &b * &c));
        let rhs = kron::kron(&c.transpose(), &a) * kron::vec(&b);
        worst[0] = worst[0].max((&lhs - &rhs).norm() / lhs.norm().max(rhs.norm()).max(1e-300));
        let lhs = kron::kron(&a, &b) * kron::kron(&b, &d);
        let rhs = kron::kron(&(&a * &b), &(&b * &d));
        worst[1] = worst[1].max(rel_matrix(&lhs, &rhs));

        let cov = assemble_r(&inst.dict, &inst.state)?;
        let forms = UpdateForms::compute(&inst.dict, &cov, &inst.r_n);
        let c_inv = c_r_inverse(cov.r())?;
        let r_n_vec = kron::vec(&inst.r_n);
        let r_vec = kron::vec(cov.r());
        let samv1 = samv_step(SamvVariant::Samv1, &inst.dict, &inst.r_n, &inst.state)?;
        let amv = amv_step(&inst.dict, &inst.r_n, &inst.state, false)?;

        for k in 0..inst.dict.len() {
            let abar = kron::outer_vec(&inst.dict.column(k));
            let num = abar.dotc(&(&c_inv * &r_n_vec));
            let den = abar.dotc(&(&c_inv * &abar));
            worst[2] = worst[2].max(rel(num, C64::from(forms.num[k])));
            worst[3] = worst[3].max(rel(den, C64::from(forms.cap[k] * forms.cap[k])));
            let dense = dense_amv_update(&c_inv, &abar, &r_n_vec, &r_vec, inst.state.powers[k]);
            worst[6] = worst[6].max(rel(dense, C64::from(amv.powers[k])));
            worst[7] = worst[7].max(rel(num / den, C64::from(samv1.powers[k])));
        }
        let ibar = kron::vec(&CMatrix::identity(m, m));
        let num = ibar.dotc(&(&c_inv * &r_n_vec));
        let den = ibar.dotc(&(&c_inv * &ibar));
        worst[4] = worst[4].max(rel(num, C64::from(forms.trace_weighted)));
        worst[5] = worst[5].max(rel(den, C64::from(forms.trace_inv_sq)));
        let dense_sigma = dense_amv_update(&c_inv, &ibar, &r_n_vec, &r_vec, inst.state.sigma());
        worst[6] = worst[6].max(rel(dense_sigma, C64::from(amv.sigma())));
        worst[7] = worst[7].max(rel(num / den, C64::from(samv1.sigma())));

        // With every power zero R = σI and the SAMV-1 ratio collapses to
        // the periodogram.
        let white = PowerState::uniform(vec![0.0; inst.dict.len()], inst.state.sigma());
        let step = samv_step(SamvVariant::Samv1, &inst.dict, &inst.r_n, &white)?;
        for (x, y) in step.powers.iter().zip(per_estimate(&inst.dict, &inst.r_n)) {
            worst[8] = worst[8].max(rel(C64::from(*x), C64::from(y)));
        }
    }

    Ok(names
        .iter()
        .zip(worst)
        .map(|(&name, max_error)| CheckResult {
            name,
            instances,
            max_error,
            tolerance: TOL,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identities_hold() {
        let report = run_identity_suite(40, 11).unwrap();
        assert_eq!(report.len(), 9);
        for check in &report {
            assert!(check.passed(), "{}: {:e}", check.name, check.max_error);
        }
    }

    #[test]
    fn suite_is_deterministic() {
        assert_eq!(run_identity_suite(5, 3).unwrap(), run_identity_suite(5, 3).unwrap());
    }

    #[test]
    fn a_wrong_identity_would_be_caught() {
        // Guard against a check that compares a quantity with itself: the
        // numerator and the squared Capon form differ in general.
        let inst = random_instance(1, 0).unwrap();
        let cov = assemble_r(&inst.dict, &inst.state).unwrap();
        let f = UpdateForms::compute(&inst.dict, &cov, &inst.r_n);
        assert!(rel(C64::from(f.num[0]), C64::from(f.cap[0] * f.cap[0])) > 1e-6);
    }
}
