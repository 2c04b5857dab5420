//! Iterative asymptotic-minimum-variance power estimation.
//!
//! Each iteration fits the vectorised sample covariance with the weight
//! `(conj(R) ⊗ R)^{-1}` of the current iterate, which reduces to the
//! closed-form per-grid-point update
//!
//! ```text
//! p_k ← a^H R⁻¹ R_N R⁻¹ a / (a^H R⁻¹ a)² + p_k − 1 / (a^H R⁻¹ a)
//! σ   ← (tr(R⁻² R_N) + σ tr(R⁻²) − tr(R⁻¹)) / tr(R⁻²)
//! ```
//!
//! Its fixed points are the stationary points of the Gaussian likelihood
//! `ln det R + tr(R⁻¹ R_N)`.

use crate::array::SteeringDictionary;
use crate::covariance::{assemble_r, NoiseState, PowerState, UpdateForms};
use crate::error::{dimension, domain, Error, Result};
use crate::CMatrix;

/// Stopping rule and projection settings shared by the iterative
/// estimators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationControl {
    pub max_iters: usize,
    /// Stop once `‖Δstate‖∞ / ‖state‖∞` falls below this.
    pub rel_tol: f64,
    /// Project negative updates onto zero.
    pub clamp: bool,
    /// Keep every intermediate state in the trace.
    pub keep_history: bool,
}

impl Default for IterationControl {
    fn default() -> Self {
        Self {
            max_iters: 1000,
            rel_tol: 1e-6,
            clamp: true,
            keep_history: true,
        }
    }
}

impl IterationControl {
    pub fn new(max_iters: usize, rel_tol: f64, clamp: bool) -> Result<Self> {
        let control = Self {
            max_iters,
            rel_tol,
            clamp,
            keep_history: true,
        };
        control.validate()?;
        Ok(control)
    }

    /// Defaults, with clamping enabled only for overcomplete dictionaries.
    pub fn for_dictionary(dictionary: &SteeringDictionary) -> Self {
        Self {
            clamp: dictionary.len() > dictionary.num_sensors(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(domain("max_iters must be at least 1"));
        }
        if !(self.rel_tol > 0.0) {
            return Err(domain("rel_tol must be positive"));
        }
        Ok(())
    }
}

/// Per-iteration diagnostics of an estimator run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EstimateTrace {
    /// States after each iteration (empty unless history is kept).
    pub states: Vec<PowerState>,
    /// `ln det R + tr(R⁻¹ R_N)` of the covariance each iteration started
    /// from.
    pub ml_cost: Vec<f64>,
    pub converged: bool,
    pub iterations_used: usize,
    /// Iterations whose covariance needed diagonal loading.
    pub loaded_iterations: usize,
}

/// Periodogram powers and the mean-power noise estimate `tr(R_N)/M`.
pub fn initialize_power(dictionary: &SteeringDictionary, r_n: &CMatrix) -> PowerState {
    let m = dictionary.num_sensors();
    let sigma = (0..m).map(|i| r_n[(i, i)].re).sum::<f64>() / m as f64;
    PowerState::uniform(crate::baselines::per_estimate(dictionary, r_n), sigma)
}

/// As [`initialize_power`], with one (equal) starting variance per sensor.
pub fn initialize_power_nonuniform(dictionary: &SteeringDictionary, r_n: &CMatrix) -> PowerState {
    let init = initialize_power(dictionary, r_n);
    let sigma = init.sigma();
    PowerState::nonuniform(init.powers, vec![sigma; dictionary.num_sensors()])
}

/// Smallest noise variance an update may return, keeping `R` invertible
/// in noise-free data.
pub(crate) fn noise_floor(r_n: &CMatrix) -> f64 {
    let m = r_n.nrows();
    let trace: f64 = (0..m).map(|i| r_n[(i, i)].re).sum();
    1e-12 * trace / m as f64
}

fn amv_power(num: f64, cap: f64, p: f64) -> f64 {
    num / (cap * cap) + p - 1.0 / cap
}

pub(crate) fn amv_update(
    state: &PowerState,
    forms: &UpdateForms,
    clamp: bool,
    floor: f64,
) -> PowerState {
    let project = |x: f64| if clamp { x.max(0.0) } else { x };
    let powers = state
        .powers
        .iter()
        .zip(forms.num.iter().zip(&forms.cap))
        .map(|(&p, (&num, &cap))| project(amv_power(num, cap, p)))
        .collect();
    let noise = match &state.noise {
        NoiseState::Uniform(sigma) => {
            let s = (forms.trace_weighted + sigma * forms.trace_inv_sq - forms.trace_inv)
                / forms.trace_inv_sq;
            NoiseState::Uniform(if clamp { s.max(floor) } else { s })
        }
        NoiseState::Nonuniform(sigmas) => NoiseState::Nonuniform(
            sigmas
                .iter()
                .zip(forms.sensor_num.iter().zip(&forms.sensor_cap))
                .map(|(&s, (&num, &cap))| {
                    let s = amv_power(num, cap, s);
                    if clamp {
                        s.max(floor)
                    } else {
                        s
                    }
                })
                .collect(),
        ),
    };
    PowerState { powers, noise }
}

pub(crate) fn check_r_n(dictionary: &SteeringDictionary, r_n: &CMatrix) -> Result<()> {
    let m = dictionary.num_sensors();
    if r_n.nrows() != m || r_n.ncols() != m {
        return Err(dimension(format!(
            "sample covariance is {}x{}, dictionary has {m} sensors",
            r_n.nrows(),
            r_n.ncols()
        )));
    }
    Ok(())
}

/// One AMV iteration. Dispatches on the noise model of `state`.
pub fn amv_step(
    dictionary: &SteeringDictionary,
    r_n: &CMatrix,
    state: &PowerState,
    clamp: bool,
) -> Result<PowerState> {
    check_r_n(dictionary, r_n)?;
    let cov = assemble_r(dictionary, state)?;
    let forms = UpdateForms::compute(dictionary, &cov, r_n);
    Ok(amv_update(state, &forms, clamp, noise_floor(r_n)))
}

/// One AMV iteration for per-sensor noise: the power update is applied to
/// the grid points and to the canonical vectors `e_m` alike.
pub fn amv_step_nonuniform(
    dictionary: &SteeringDictionary,
    r_n: &CMatrix,
    state: &PowerState,
    clamp: bool,
) -> Result<PowerState> {
    if !matches!(state.noise, NoiseState::Nonuniform(_)) {
        return Err(domain("nonuniform step needs per-sensor noise variances"));
    }
    amv_step(dictionary, r_n, state, clamp)
}

/// Shared iteration skeleton: assemble `R`, compute the quadratic forms,
/// apply `update`, test the relative change.
pub(crate) fn iterate<F>(
    dictionary: &SteeringDictionary,
    r_n: &CMatrix,
    init: PowerState,
    control: &IterationControl,
    mut update: F,
) -> Result<(PowerState, EstimateTrace)>
where
    F: FnMut(&PowerState, &UpdateForms) -> PowerState,
{
    control.validate()?;
    check_r_n(dictionary, r_n)?;
    init.check_against(dictionary)?;
    let mut trace = EstimateTrace::default();
    let mut state = init;
    for it in 0..control.max_iters {
        let cov = assemble_r(dictionary, &state)?;
        if cov.loaded() {
            trace.loaded_iterations += 1;
        }
        trace.ml_cost.push(cov.ml_cost(r_n));
        let forms = UpdateForms::compute(dictionary, &cov, r_n);
        let next = update(&state, &forms);
        if next.to_vec().iter().any(|x| !x.is_finite()) {
            return Err(Error::Singular(format!("non-finite update at iteration {it}")));
        }
        let change = next.relative_change(&state);
        state = next;
        trace.iterations_used = it + 1;
        if control.keep_history {
            trace.states.push(state.clone());
        }
        if change < control.rel_tol {
            trace.converged = true;
            break;
        }
    }
    Ok((state, trace))
}

/// Run AMV from the periodogram initialisation.
pub fn amv_estimate(
    dictionary: &SteeringDictionary,
    r_n: &CMatrix,
    control: &IterationControl,
) -> Result<(PowerState, EstimateTrace)> {
    check_r_n(dictionary, r_n)?;
    amv_estimate_from(dictionary, r_n, initialize_power(dictionary, r_n), control)
}

/// Run AMV from an explicit starting state (either noise model).
pub fn amv_estimate_from(
    dictionary: &SteeringDictionary,
    r_n: &CMatrix,
    init: PowerState,
    control: &IterationControl,
) -> Result<(PowerState, EstimateTrace)> {
    let floor = noise_floor(r_n);
    let clamp = control.clamp;
    iterate(dictionary, r_n, init, control, |s, f| amv_update(s, f, clamp, floor))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::{synthesize_snapshots, ArrayGeometry, NoiseModel, Scenario};
    use crate::covariance::test_support::{random_pd, random_problem};
    use crate::covariance::{interference_covariance, model_matrix};
    use crate::C64;

    fn scalar_dict() -> SteeringDictionary {
        SteeringDictionary::from_columns(CMatrix::from_element(1, 1, C64::from(1.0)), vec![0.0])
            .unwrap()
    }

    #[test]
    fn scalar_update_examples() {
        let d = scalar_dict();
        let s = PowerState::uniform(vec![1.0], 1.0);
        let r_n = CMatrix::from_element(1, 1, C64::from(3.0));
        let out = amv_step(&d, &r_n, &s, false).unwrap();
        assert!((out.powers[0] - 2.0).abs() < 1e-12);

        let r_n = CMatrix::from_element(1, 1, C64::from(0.5));
        let out = amv_step(&d, &r_n, &s, true).unwrap();
        assert_eq!(out.powers[0], 0.0);
        let out = amv_step(&d, &r_n, &s, false).unwrap();
        assert!((out.powers[0] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn initialization_examples() {
        let g = ArrayGeometry::ula(4).unwrap();
        let d = SteeringDictionary::build(&g, 0.0, 180.0, 15.0).unwrap();
        let init = initialize_power(&d, &CMatrix::identity(4, 4));
        assert!(init.powers.iter().all(|p| (p - 0.25).abs() < 1e-14));
        assert!((init.sigma() - 1.0).abs() < 1e-14);

        let d2 = SteeringDictionary::from_angles(&ArrayGeometry::ula(2).unwrap(), vec![90.0], None)
            .unwrap();
        let r_n = CMatrix::from_row_slice(
            2,
            2,
            &[C64::new(1.0, 0.0), C64::new(0.0, -1.0), C64::new(0.0, 1.0), C64::new(1.0, 0.0)],
        );
        assert!((initialize_power(&d2, &r_n).powers[0] - 0.5).abs() < 1e-14);

        let a = d.column(5);
        let r_n = &a * a.adjoint();
        let init = initialize_power(&d, &r_n);
        let peak = (0..d.len())
            .max_by(|&i, &j| init.powers[i].partial_cmp(&init.powers[j]).unwrap())
            .unwrap();
        assert_eq!(peak, 5);
    }

    #[test]
    fn fixed_point_when_model_matches() {
        for seed in 0..5 {
            let (d, s) = random_problem(4, 9, seed);
            let r_n = model_matrix(&d, &s).unwrap();
            let out = amv_step(&d, &r_n, &s, false).unwrap();
            assert!(out.relative_change(&s) < 1e-10);

            let ns = PowerState::nonuniform(s.powers.clone(), vec![0.3, 0.5, 0.9, 1.3]);
            let r_n = model_matrix(&d, &ns).unwrap();
            let out = amv_step_nonuniform(&d, &r_n, &ns, false).unwrap();
            assert!(out.relative_change(&ns) < 1e-10);
        }
    }

    #[test]
    fn nonuniform_step_requires_nonuniform_state() {
        let (d, s) = random_problem(3, 4, 1);
        let r_n = random_pd(3, 2);
        assert!(amv_step_nonuniform(&d, &r_n, &s, true).is_err());
    }

    #[test]
    fn nonuniform_scalar_case_reduces_to_uniform() {
        let d = scalar_dict();
        let r_n = CMatrix::from_element(1, 1, C64::from(3.0));
        let u = amv_step(&d, &r_n, &PowerState::uniform(vec![1.0], 1.0), false).unwrap();
        let n = amv_step(&d, &r_n, &PowerState::nonuniform(vec![1.0], vec![1.0]), false).unwrap();
        assert!((u.powers[0] - n.powers[0]).abs() < 1e-14);
        assert!((u.sigma() - n.sigma()).abs() < 1e-14);
    }

    #[test]
    fn update_matches_interference_minimizer() {
        for seed in 0..10 {
            let (d, s) = random_problem(5, 4, seed);
            let r_n = random_pd(5, seed + 50);
            let out = amv_step(&d, &r_n, &s, false).unwrap();
            for k in 0..d.len() {
                let q = interference_covariance(&d, &s, k).unwrap();
                let a = d.column(k);
                let b = &q.q_inverse * &a;
                let num = b.dotc(&((&r_n - &q.q) * &b)).re;
                let den = a.dotc(&b).re.powi(2);
                let target = num / den;
                assert!((out.powers[k] - target).abs() < 1e-9 * (1.0 + target.abs()));
            }
        }
    }

    #[test]
    fn recovers_exact_model_and_is_stationary() {
        let g = ArrayGeometry::ula(6).unwrap();
        let d = SteeringDictionary::from_angles(&g, vec![20.0, 60.0, 95.0, 140.0], None).unwrap();
        let truth = PowerState::uniform(vec![2.0, 0.5, 1.0, 3.0], 0.4);
        let r_n = model_matrix(&d, &truth).unwrap();
        // Unprojected iterates can leave the PD cone on the way; the clamp
        // is inactive at the (strictly positive) fixed point.
        let control = IterationControl {
            rel_tol: 1e-12,
            clamp: true,
            ..IterationControl::default()
        };
        let (est, trace) = amv_estimate(&d, &r_n, &control).unwrap();
        assert!(trace.converged);
        for (a, b) in est.to_vec().iter().zip(truth.to_vec()) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
        let again = amv_step(&d, &r_n, &est, false).unwrap();
        for (a, b) in again.powers.iter().zip(&est.powers) {
            assert!((a - b).abs() <= 1e-8 * b.abs());
        }
        assert_eq!(trace.ml_cost.len(), trace.iterations_used);
    }

    #[test]
    fn clamped_outputs_are_nonnegative() {
        let g = ArrayGeometry::ula(4).unwrap();
        let d = SteeringDictionary::build(&g, 0.0, 180.0, 5.0).unwrap();
        let r_n = random_pd(4, 9);
        let control = IterationControl {
            max_iters: 50,
            ..IterationControl::for_dictionary(&d)
        };
        assert!(control.clamp);
        let (_, trace) = amv_estimate(&d, &r_n, &control).unwrap();
        for s in &trace.states {
            assert!(s.to_vec().iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn rejects_zero_iterations() {
        let (d, _) = random_problem(3, 4, 1);
        let control = IterationControl {
            max_iters: 0,
            ..IterationControl::default()
        };
        assert!(matches!(
            amv_estimate(&d, &random_pd(3, 1), &control),
            Err(Error::Domain(_))
        ));
        assert!(IterationControl::new(10, 0.0, true).is_err());
    }

    #[test]
    fn nonuniform_noise_is_recovered() {
        let g = ArrayGeometry::ula(2).unwrap();
        let scenario = Scenario {
            geometry: g.clone(),
            sources: vec![],
            coherence_groups: vec![],
            noise: NoiseModel::Nonuniform(vec![1.0, 4.0]),
            snapshots: 100_000,
            seed: 17,
        };
        let r_n = synthesize_snapshots(&scenario).unwrap().sample_covariance();
        let d = SteeringDictionary::from_angles(&g, vec![90.0], None).unwrap();
        let init = initialize_power_nonuniform(&d, &r_n);
        let (est, _) = amv_estimate_from(&d, &r_n, init, &IterationControl::default()).unwrap();
        let sig = est.noise_variances(2);
        assert!((sig[0] - 1.0).abs() < 0.05 && (sig[1] - 4.0).abs() < 0.2, "{sig:?}");
    }
}
