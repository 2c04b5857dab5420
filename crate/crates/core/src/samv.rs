//! Sparse SAMV power updates.
//!
//! All three variants start from the same quadratic forms
//! `num_k = a_k^H R⁻¹ R_N R⁻¹ a_k` and `cap_k = a_k^H R⁻¹ a_k`:
//!
//! | variant | update                 |
//! |---------|------------------------|
//! | SAMV-0  | `p_k² · num_k`         |
//! | SAMV-1  | `num_k / cap_k²`       |
//! | SAMV-2  | `p_k · num_k / cap_k`  |
//!
//! and share the noise update `σ = tr(R⁻² R_N) / tr(R⁻²)`. Every output is
//! a product or ratio of nonnegative forms, so no projection is needed.
//! None of the updates inverts `R_N`, which is why a single snapshot is
//! enough.

use std::fmt;
use std::str::FromStr;

use crate::amv::{
    check_r_n, initialize_power, iterate, noise_floor, EstimateTrace, IterationControl,
};
use crate::array::SteeringDictionary;
use crate::covariance::{assemble_r, kron, NoiseState, PowerState, UpdateForms};
use crate::error::{domain, Error, Result};
use crate::{CMatrix, C64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SamvVariant {
    Samv0,
    Samv1,
    Samv2,
}

impl SamvVariant {
    pub const ALL: [SamvVariant; 3] = [SamvVariant::Samv0, SamvVariant::Samv1, SamvVariant::Samv2];

    pub fn name(self) -> &'static str {
        match self {
            SamvVariant::Samv0 => "samv0",
            SamvVariant::Samv1 => "samv1",
            SamvVariant::Samv2 => "samv2",
        }
    }

    /// Power update for one grid point.
    pub fn power(self, p: f64, num: f64, cap: f64) -> f64 {
        match self {
            SamvVariant::Samv0 => p * p * num,
            SamvVariant::Samv1 => num / (cap * cap),
            SamvVariant::Samv2 => p * num / cap,
        }
    }

    /// Variants whose updates are multiplicative in the current power.
    fn multiplicative(self) -> bool {
        !matches!(self, SamvVariant::Samv1)
    }
}

impl fmt::Display for SamvVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SamvVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s) || v.name() == s.replace('-', "").to_lowercase())
            .ok_or_else(|| domain(format!("unknown SAMV variant '{s}'")))
    }
}

pub(crate) fn samv_update(
    variant: SamvVariant,
    state: &PowerState,
    forms: &UpdateForms,
    floor: f64,
) -> PowerState {
    let powers = state
        .powers
        .iter()
        .zip(forms.num.iter().zip(&forms.cap))
        .map(|(&p, (&num, &cap))| variant.power(p, num, cap).max(0.0))
        .collect();
    let noise = match &state.noise {
        NoiseState::Uniform(_) => {
            NoiseState::Uniform((forms.trace_weighted / forms.trace_inv_sq).max(floor))
        }
        NoiseState::Nonuniform(_) => NoiseState::Nonuniform(sensor_noise(forms, floor)),
    };
    PowerState { powers, noise }
}

fn sensor_noise(forms: &UpdateForms, floor: f64) -> Vec<f64> {
    forms
        .sensor_num
        .iter()
        .zip(&forms.sensor_cap)
        .map(|(&num, &cap)| (num / (cap * cap)).max(floor))
        .collect()
}

/// One SAMV iteration: powers by `variant`, noise by the shared rule
/// (per-sensor when `state` carries nonuniform noise).
pub fn samv_step(
    variant: SamvVariant,
    dictionary: &SteeringDictionary,
    r_n: &CMatrix,
    state: &PowerState,
) -> Result<PowerState> {
    check_r_n(dictionary, r_n)?;
    let cov = assemble_r(dictionary, state)?;
    let forms = UpdateForms::compute(dictionary, &cov, r_n);
    Ok(samv_update(variant, state, &forms, noise_floor(r_n)))
}

/// Per-sensor noise update `e_m^H R⁻¹ R_N R⁻¹ e_m / (e_m^H R⁻¹ e_m)²`.
pub fn samv_noise_nonuniform(
    dictionary: &SteeringDictionary,
    r_n: &CMatrix,
    state: &PowerState,
) -> Result<Vec<f64>> {
    if !matches!(state.noise, NoiseState::Nonuniform(_)) {
        return Err(domain("nonuniform noise update needs per-sensor variances"));
    }
    let cov = assemble_r(dictionary, state)?;
    let forms = UpdateForms::compute(dictionary, &cov, r_n);
    Ok(sensor_noise(&forms, noise_floor(r_n)))
}

/// Run a SAMV variant from the periodogram initialisation.
pub fn samv_estimate(
    variant: SamvVariant,
    dictionary: &SteeringDictionary,
    r_n: &CMatrix,
    control: &IterationControl,
) -> Result<(PowerState, EstimateTrace)> {
    let init = initialize_power(dictionary, r_n);
    samv_estimate_from(variant, dictionary, r_n, init, control)
}

/// Run a SAMV variant from an explicit starting state.
///
/// For the multiplicative variants zeros are absorbing, so starting powers
/// are floored at `1e-16 · max p`.
pub fn samv_estimate_from(
    variant: SamvVariant,
    dictionary: &SteeringDictionary,
    r_n: &CMatrix,
    mut init: PowerState,
    control: &IterationControl,
) -> Result<(PowerState, EstimateTrace)> {
    if variant.multiplicative() {
        let peak = init.powers.iter().copied().fold(0.0, f64::max);
        let floor = 1e-16 * peak;
        init.powers.iter_mut().for_each(|p| *p = p.max(floor));
    }
    let floor = noise_floor(r_n);
    iterate(dictionary, r_n, init, control, |s, f| samv_update(variant, s, f, floor))
}

/// Weighted least-squares cost
/// `[r_N − c·ā_k]^H (C_r − p_k² ā_k ā_k^H)^{-1} [r_N − c·ā_k]`
/// evaluated with explicit Kronecker matrices.
///
/// `k == K` selects the noise column `ā = vec(I)` with `p = σ`. Only
/// uniform-noise states on arrays of at most [`kron::MAX_SENSORS`] sensors
/// are accepted.
pub fn wls_cost(
    dictionary: &SteeringDictionary,
    r_n: &CMatrix,
    state: &PowerState,
    k: usize,
    candidate: f64,
) -> Result<f64> {
    let NoiseState::Uniform(sigma) = state.noise else {
        return Err(domain("WLS reference cost needs uniform noise"));
    };
    let m = dictionary.num_sensors();
    let (abar, p) = if k < dictionary.len() {
        (kron::outer_vec(&dictionary.column(k)), state.powers[k])
    } else if k == dictionary.len() {
        (kron::vec(&CMatrix::identity(m, m)), sigma)
    } else {
        return Err(domain(format!("column {k} out of range")));
    };
    let cov = assemble_r(dictionary, state)?;
    let c_r = kron::circular_covariance(cov.r())?;
    let c_prime = c_r - &abar * abar.adjoint() * C64::from(p * p);
    let c_inv = c_prime
        .try_inverse()
        .ok_or_else(|| Error::Singular("C'_k".into()))?;
    let resid = kron::vec(r_n) - &abar * C64::from(candidate);
    Ok(resid.dotc(&(c_inv * &resid)).re)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::{complex_gaussian, stream_rng, ArrayGeometry};
    use crate::baselines::per_estimate;
    use crate::covariance::model_matrix;
    use crate::covariance::test_support::{random_matrix, random_pd, random_problem};
    use proptest::prelude::*;
    use rand::Rng;

    fn broadside2() -> SteeringDictionary {
        SteeringDictionary::from_angles(&ArrayGeometry::ula(2).unwrap(), vec![90.0], None).unwrap()
    }

    #[test]
    fn variant_names_round_trip() {
        for v in SamvVariant::ALL {
            assert_eq!(v.name().parse::<SamvVariant>().unwrap(), v);
        }
        assert_eq!("SAMV-2".parse::<SamvVariant>().unwrap(), SamvVariant::Samv2);
        assert!("samv3".parse::<SamvVariant>().is_err());
    }

    #[test]
    fn samv2_fixed_point() {
        for seed in 0..5 {
            let (d, s) = random_problem(4, 10, seed);
            let r_n = model_matrix(&d, &s).unwrap();
            let out = samv_step(SamvVariant::Samv2, &d, &r_n, &s).unwrap();
            for (a, b) in out.powers.iter().zip(&s.powers) {
                assert!((a - b).abs() < 1e-10 * b);
            }
        }
    }

    #[test]
    fn samv1_at_white_covariance_is_periodogram() {
        let d = broadside2();
        let s = PowerState::uniform(vec![0.0], 1.0);
        let out = samv_step(SamvVariant::Samv1, &d, &CMatrix::identity(2, 2), &s).unwrap();
        assert!((out.powers[0] - 0.5).abs() < 1e-14);

        let g = ArrayGeometry::ula(5).unwrap();
        let d = SteeringDictionary::build(&g, 0.0, 180.0, 2.0).unwrap();
        let r_n = random_pd(5, 4);
        let s = PowerState::uniform(vec![0.0; d.len()], 0.7);
        let out = samv_step(SamvVariant::Samv1, &d, &r_n, &s).unwrap();
        for (a, b) in out.powers.iter().zip(per_estimate(&d, &r_n)) {
            assert!((a - b).abs() < 1e-12 * b);
        }
    }

    #[test]
    fn samv0_squares_current_power_at_model_match() {
        let (d, s) = random_problem(4, 6, 3);
        let r_n = model_matrix(&d, &s).unwrap();
        let cov = assemble_r(&d, &s).unwrap();
        let forms = UpdateForms::compute(&d, &cov, &r_n);
        let out = samv_step(SamvVariant::Samv0, &d, &r_n, &s).unwrap();
        for k in 0..d.len() {
            // R_N = R makes num = cap, so the update is p² · cap ...
            assert!((out.powers[k] - s.powers[k].powi(2) * forms.cap[k]).abs() < 1e-10);
            // ... which leaves the Capon power 1/cap unchanged.
            let capon = 1.0 / forms.cap[k];
            let at_capon = SamvVariant::Samv0.power(capon, forms.cap[k], forms.cap[k]);
            assert!((at_capon - capon).abs() < 1e-12 * capon);
        }
    }

    #[test]
    fn noise_update_examples() {
        let d = broadside2();
        let s = PowerState::uniform(vec![0.0], 2.0);
        let r_n = CMatrix::identity(2, 2) * C64::from(3.5);
        for v in SamvVariant::ALL {
            let out = samv_step(v, &d, &r_n, &s).unwrap();
            assert!((out.sigma() - 3.5).abs() < 1e-12);
        }
    }

    #[test]
    fn noise_update_is_shared() {
        let (d, s) = random_problem(4, 8, 9);
        let r_n = random_pd(4, 19);
        let sig: Vec<f64> = SamvVariant::ALL
            .iter()
            .map(|&v| samv_step(v, &d, &r_n, &s).unwrap().sigma())
            .collect();
        assert_eq!(sig[0], sig[1]);
        assert_eq!(sig[1], sig[2]);
    }

    #[test]
    fn nonuniform_noise_examples() {
        let d = broadside2();
        let s = PowerState::nonuniform(vec![0.0], vec![1.5, 0.5]);
        let r_n = model_matrix(&d, &s).unwrap();
        let out = samv_noise_nonuniform(&d, &r_n, &s).unwrap();
        assert!((out[0] - 1.5).abs() < 1e-12 && (out[1] - 0.5).abs() < 1e-12);

        let s = PowerState::nonuniform(vec![0.0], vec![1.0, 1.0]);
        let r_n = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            C64::from(1.0),
            C64::from(4.0),
        ]));
        let out = samv_noise_nonuniform(&d, &r_n, &s).unwrap();
        assert!((out[0] - 1.0).abs() < 1e-12 && (out[1] - 4.0).abs() < 1e-12);

        let uniform = PowerState::uniform(vec![0.0], 1.0);
        assert!(samv_noise_nonuniform(&d, &r_n, &uniform).is_err());
    }

    #[test]
    fn nonuniform_noise_matches_dense_evaluation() {
        let (d, s) = random_problem(3, 5, 21);
        let s = PowerState::nonuniform(s.powers, vec![0.4, 0.9, 0.6]);
        let r_n = random_pd(3, 22);
        let r_inv = model_matrix(&d, &s).unwrap().try_inverse().unwrap();
        let w = &r_inv * &r_n * &r_inv;
        let out = samv_noise_nonuniform(&d, &r_n, &s).unwrap();
        for m in 0..3 {
            let expected = w[(m, m)].re / r_inv[(m, m)].re.powi(2);
            assert!((out[m] - expected).abs() < 1e-12 * expected);
        }
    }

    #[test]
    fn samv1_snapshot_sum_form() {
        let (d, s) = random_problem(4, 7, 31);
        let y = random_matrix(4, 6, 32);
        let r_n = crate::array::SnapshotSet::new(y.clone()).unwrap().sample_covariance();
        let out = samv_step(SamvVariant::Samv1, &d, &r_n, &s).unwrap();
        let r_inv = model_matrix(&d, &s).unwrap().try_inverse().unwrap();
        for k in 0..d.len() {
            let b = &r_inv * d.column(k);
            let cap = d.column(k).dotc(&b).re;
            let sum: f64 = y.column_iter().map(|yn| b.dotc(&yn).norm_sqr()).sum();
            let expected = sum / (6.0 * cap * cap);
            assert!((out.powers[k] - expected).abs() < 1e-12 * expected);
        }
    }

    /// Golden-section minimiser, independent of the refinement code.
    fn golden_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        let g = (5f64.sqrt() - 1.0) / 2.0;
        while hi - lo > 1e-10 {
            let (x1, x2) = (hi - g * (hi - lo), lo + g * (hi - lo));
            if f(x1) < f(x2) {
                hi = x2;
            } else {
                lo = x1;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn wls_minimizer_is_samv1_update() {
        for seed in 0..8 {
            let (d, s) = random_problem(3, 4, seed + 40);
            let r_n = random_pd(3, seed + 80);
            let out = samv_step(SamvVariant::Samv1, &d, &r_n, &s).unwrap();
            for k in 0..=d.len() {
                let target = if k < d.len() { out.powers[k] } else { out.sigma() };
                let g = |c| wls_cost(&d, &r_n, &s, k, c).unwrap();
                // The cost is quadratic in c: locate its vertex from three samples.
                let (gm, g0, gp) = (g(-1.0), g(0.0), g(1.0));
                let vertex = (gm - gp) / (2.0 * (gm - 2.0 * g0 + gp));
                assert!((vertex - target).abs() < 1e-8 * target.max(1.0), "k={k}");
                // Steering columns have a positive definite weight, so the
                // vertex is a minimum. The noise column's weight need not be.
                if k < d.len() {
                    let best = golden_min(g, -10.0, 20.0);
                    assert!((best - target).abs() < 1e-6, "k={k}: {best} vs {target}");
                }
            }
            assert!(wls_cost(&d, &r_n, &s, 0, 0.0).unwrap() >= 0.0);
        }
    }

    #[test]
    fn wls_cost_rejects_large_arrays() {
        let (d, s) = random_problem(5, 4, 1);
        let r_n = random_pd(5, 1);
        assert!(matches!(wls_cost(&d, &r_n, &s, 0, 1.0), Err(Error::Dimension(_))));
    }

    #[test]
    fn single_snapshot_is_accepted() {
        let g = ArrayGeometry::ula(8).unwrap();
        let d = SteeringDictionary::build(&g, 0.0, 180.0, 1.0).unwrap();
        let y = d.column(60) * C64::from(2.0) + random_matrix(8, 1, 3).column(0) * C64::from(0.1);
        let r_n = &y * y.adjoint();
        for v in SamvVariant::ALL {
            let control = IterationControl {
                max_iters: 200,
                ..IterationControl::default()
            };
            let (est, _) = samv_estimate(v, &d, &r_n, &control).unwrap();
            assert!(est.powers.iter().all(|p| p.is_finite() && *p >= 0.0));
            let peak = (0..d.len())
                .max_by(|&i, &j| est.powers[i].partial_cmp(&est.powers[j]).unwrap())
                .unwrap();
            assert!((peak as i64 - 60).abs() <= 1, "{v}: peak at {peak}");
        }
    }

    proptest! {
        #[test]
        fn updates_are_nonnegative(seed in 0u64..500, m in 2usize..6, n in 1usize..4) {
            let g = ArrayGeometry::ula(m).unwrap();
            let d = SteeringDictionary::build(&g, 0.0, 180.0, 7.5).unwrap();
            let mut rng = stream_rng(seed, 1);
            let y = CMatrix::from_fn(m, n, |_, _| complex_gaussian(&mut rng));
            let r_n = &y * y.adjoint() / C64::from(n as f64);
            let powers = (0..d.len()).map(|_| rng.gen_range(0.0..3.0)).collect();
            let s = PowerState::uniform(powers, rng.gen_range(0.05..2.0));
            for v in SamvVariant::ALL {
                let out = samv_step(v, &d, &r_n, &s).unwrap();
                prop_assert!(out.to_vec().iter().all(|&x| x >= 0.0));
            }
        }
    }
}
