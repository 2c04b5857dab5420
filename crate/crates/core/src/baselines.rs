//! Reference spectra: periodogram, IAA, MUSIC, and the asymptotic
//! (low/high SNR) forms of the SAMV updates.

use nalgebra::linalg::SymmetricEigen;

use crate::amv::check_r_n;
use crate::array::{SnapshotSet, SteeringDictionary};
use crate::covariance::{hermitian_part, ModelCovariance, PowerState, UpdateForms};
use crate::error::{domain, Error, Result};
use crate::samv::SamvVariant;
use crate::CMatrix;

/// Periodogram `a^H R_N a / ‖a‖⁴` on every grid point.
pub fn per_estimate(dictionary: &SteeringDictionary, r_n: &CMatrix) -> Vec<f64> {
    dictionary
        .quadratic_forms(r_n)
        .into_iter()
        .zip(dictionary.column_norms_sq())
        .map(|(q, n)| (q / (n * n)).max(0.0))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IaaControl {
    pub max_iters: usize,
    pub rel_tol: f64,
}

impl Default for IaaControl {
    fn default() -> Self {
        Self {
            max_iters: 15,
            rel_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IaaResult {
    pub powers: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Iterations in which `A diag(p) A^H` needed diagonal loading.
    pub loaded_iterations: usize,
}

/// Iterative adaptive approach on raw snapshots.
pub fn iaa_estimate(
    dictionary: &SteeringDictionary,
    snapshots: &SnapshotSet,
    control: &IaaControl,
) -> Result<IaaResult> {
    iaa_from_covariance(dictionary, &snapshots.sample_covariance(), control)
}

/// IAA driven by the sample covariance.
///
/// The per-snapshot amplitude `x_k(n) = a^H R̄⁻¹ y(n) / a^H R̄⁻¹ a` enters
/// only through `mean |x_k(n)|² = a^H R̄⁻¹ R_N R̄⁻¹ a / (a^H R̄⁻¹ a)²`, so the
/// snapshots never need to be revisited.
pub fn iaa_from_covariance(
    dictionary: &SteeringDictionary,
    r_n: &CMatrix,
    control: &IaaControl,
) -> Result<IaaResult> {
    check_r_n(dictionary, r_n)?;
    if control.max_iters == 0 {
        return Err(domain("IAA needs at least one iteration"));
    }
    let mut powers = per_estimate(dictionary, r_n);
    let mut result = IaaResult {
        powers: Vec::new(),
        iterations: 0,
        converged: false,
        loaded_iterations: 0,
    };
    for it in 0..control.max_iters {
        let cov = ModelCovariance::from_matrix(dictionary.weighted_gram(&powers))?;
        if cov.loaded() {
            result.loaded_iterations += 1;
        }
        let forms = UpdateForms::compute(dictionary, &cov, r_n);
        let next: Vec<f64> = forms
            .num
            .iter()
            .zip(&forms.cap)
            .map(|(&num, &cap)| (num / (cap * cap)).max(0.0))
            .collect();
        let scale = powers.iter().fold(0.0f64, |m, p| m.max(p.abs()));
        let change = next
            .iter()
            .zip(&powers)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        powers = next;
        result.iterations = it + 1;
        if change <= control.rel_tol * scale {
            result.converged = true;
            break;
        }
    }
    result.powers = powers;
    Ok(result)
}

/// MUSIC pseudospectrum `1 / ‖E_n^H a‖²`.
pub fn music_pseudospectrum(
    dictionary: &SteeringDictionary,
    r_n: &CMatrix,
    num_sources: usize,
) -> Result<Vec<f64>> {
    check_r_n(dictionary, r_n)?;
    let m = dictionary.num_sensors();
    if num_sources == 0 || num_sources >= m {
        return Err(domain(format!(
            "MUSIC needs 0 < sources < sensors, got {num_sources} sources for {m} sensors"
        )));
    }
    let eig = SymmetricEigen::new(hermitian_part(r_n));
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let noise_dim = m - num_sources;
    let mut projector = CMatrix::zeros(m, m);
    for &i in &order[..noise_dim] {
        let e = eig.eigenvectors.column(i);
        projector += &e * e.adjoint();
    }
    Ok(dictionary
        .quadratic_forms(&projector)
        .into_iter()
        .map(|q| 1.0 / q.max(f64::MIN_POSITIVE))
        .collect())
}

/// Which asymptote of the SAMV updates to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnrRegime {
    /// `R ≈ σI`: every update reduces to a rescaled periodogram.
    Low,
    /// `R ≈ A P A^H`: the noise term is dropped from the model.
    High,
}

/// One SAMV step with `R` replaced by its low- or high-SNR approximation.
pub fn asymptotic_step(
    variant: SamvVariant,
    regime: SnrRegime,
    dictionary: &SteeringDictionary,
    r_n: &CMatrix,
    state: &PowerState,
) -> Result<PowerState> {
    check_r_n(dictionary, r_n)?;
    state.check_against(dictionary)?;
    let m = dictionary.num_sensors() as f64;
    match regime {
        SnrRegime::Low => {
            let sigma = state.sigma();
            if sigma <= 0.0 {
                return Err(domain("low-SNR asymptote needs a positive noise variance"));
            }
            let per = per_estimate(dictionary, r_n);
            let powers = state
                .powers
                .iter()
                .zip(per)
                .map(|(&p, q)| match variant {
                    SamvVariant::Samv0 => m * m / (sigma * sigma) * p * p * q,
                    SamvVariant::Samv1 => q,
                    SamvVariant::Samv2 => m / sigma * p * q,
                })
                .collect();
            let trace: f64 = (0..r_n.nrows()).map(|i| r_n[(i, i)].re).sum();
            Ok(PowerState::uniform(powers, trace / m))
        }
        SnrRegime::High => {
            let cov = ModelCovariance::from_matrix(dictionary.weighted_gram(&state.powers))?;
            if cov.loaded() {
                return Err(Error::Singular(
                    "noise-free model A P A^H is rank deficient".into(),
                ));
            }
            let forms = UpdateForms::compute(dictionary, &cov, r_n);
            let powers = state
                .powers
                .iter()
                .zip(forms.num.iter().zip(&forms.cap))
                .map(|(&p, (&num, &cap))| variant.power(p, num, cap).max(0.0))
                .collect();
            Ok(PowerState::uniform(powers, forms.trace_weighted / forms.trace_inv_sq))
        }
    }
}
