//! Grid-free angle refinement by stochastic maximum likelihood.
//!
//! With every other source and the noise held fixed in
//! `Q_k = Σ_{j≠k} p_j a_j a_j^H + σI`, the Gaussian cost splits as
//! `L = L_{−k} + ln(1 + p_k α₁) − p_k α₂ / (1 + p_k α₁)`, where
//! `α₁ = a^H Q_k⁻¹ a` and `α₂ = a^H Q_k⁻¹ R_N Q_k⁻¹ a`. The last two terms
//! are the only ones that move with `θ_k`, so each angle is refined by a
//! scalar search on them.

use std::fmt;
use std::str::FromStr;

use crate::amv::{check_r_n, noise_floor, IterationControl};
use crate::array::{ArrayGeometry, Source, SteeringDictionary};
use crate::covariance::{trace_product, ModelCovariance, PowerState};
use crate::error::{dimension, domain, Error, Result};
use crate::harness::pick_peaks;
use crate::samv::{samv_estimate, SamvVariant};
use crate::{CMatrix, C64};

/// Angles and powers of the sources being refined, with everything the
/// scalar cost needs.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinementProblem {
    sources: Vec<Source>,
    sigma: f64,
    r_n: CMatrix,
    geometry: ArrayGeometry,
}

impl RefinementProblem {
    pub fn new(
        geometry: ArrayGeometry,
        sources: Vec<Source>,
        sigma: f64,
        r_n: CMatrix,
    ) -> Result<Self> {
        if sources.is_empty() {
            return Err(domain("refinement needs at least one source"));
        }
        for (i, s) in sources.iter().enumerate() {
            if !(0.0..180.0).contains(&s.angle_deg) {
                return Err(domain(format!("angle {} outside [0, 180)", s.angle_deg)));
            }
            if !(s.power.is_finite() && s.power >= 0.0) {
                return Err(domain(format!("source {i} has invalid power {}", s.power)));
            }
            if sources[..i].iter().any(|t| t.angle_deg == s.angle_deg) {
                return Err(domain(format!("duplicate source angle {}", s.angle_deg)));
            }
        }
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(domain(format!("invalid noise variance {sigma}")));
        }
        let m = geometry.num_sensors();
        if r_n.nrows() != m || r_n.ncols() != m {
            return Err(dimension(format!(
                "sample covariance is {}x{}, array has {m} sensors",
                r_n.nrows(),
                r_n.ncols()
            )));
        }
        Ok(Self {
            sources,
            sigma,
            r_n,
            geometry,
        })
    }

    pub fn sources(&self) -> &[Source] {
        &self.sources
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn sample_covariance(&self) -> &CMatrix {
        &self.r_n
    }

    pub fn geometry(&self) -> &ArrayGeometry {
        &self.geometry
    }

    fn model(&self, skip: Option<usize>) -> CMatrix {
        let m = self.geometry.num_sensors();
        let mut r = CMatrix::identity(m, m) * C64::from(self.sigma);
        for (j, s) in self.sources.iter().enumerate() {
            if Some(j) != skip {
                let a = self.geometry.steering_unchecked(s.angle_deg);
                r += &a * a.adjoint() * C64::from(s.power);
            }
        }
        r
    }

    /// Model covariance `A P A^H + σI` at the current continuous angles.
    pub fn covariance(&self) -> Result<ModelCovariance> {
        ModelCovariance::from_matrix(self.model(None))
    }

    /// Gaussian negative log-likelihood `ln det R + tr(R⁻¹ R_N)`.
    pub fn ml_cost(&self) -> Result<f64> {
        Ok(self.covariance()?.ml_cost(&self.r_n))
    }

    fn objective(&self, k: usize) -> Result<ScalarObjective<'_>> {
        if k >= self.sources.len() {
            return Err(domain(format!("source {k} out of range")));
        }
        let q = ModelCovariance::from_matrix(self.model(Some(k)))?;
        if q.loaded() {
            return Err(Error::Singular(format!("interference covariance Q_{k}")));
        }
        let q_inv = q.inverse().clone();
        let w = &q_inv * &self.r_n * &q_inv;
        Ok(ScalarObjective {
            geometry: &self.geometry,
            power: self.sources[k].power,
            q_inv,
            w,
        })
    }
}

struct ScalarObjective<'a> {
    geometry: &'a ArrayGeometry,
    power: f64,
    q_inv: CMatrix,
    w: CMatrix,
}

impl ScalarObjective<'_> {
    fn eval(&self, theta: f64) -> f64 {
        if !(0.0..180.0).contains(&theta) {
            return f64::INFINITY;
        }
        let a = self.geometry.steering_unchecked(theta);
        let alpha1 = a.dotc(&(&self.q_inv * &a)).re;
        let alpha2 = a.dotc(&(&self.w * &a)).re;
        let d = 1.0 + self.power * alpha1;
        d.ln() - self.power * alpha2 / d
    }
}

/// The `θ_k`-dependent part of the ML cost with source `k` moved to
/// `theta`. Lower is better: `L = L_{−k} + sml_cost`.
pub fn sml_cost(problem: &RefinementProblem, k: usize, theta: f64) -> Result<f64> {
    if !(0.0..180.0).contains(&theta) {
        return Err(domain(format!("angle {theta} outside [0, 180)")));
    }
    Ok(problem.objective(k)?.eval(theta))
}

/// Brent's derivative-free minimiser (golden section with parabolic
/// steps) on `[lo, hi]`. Returns the best point found and its value.
///
/// Non-finite costs are treated as `+∞`. A degenerate bracket returns
/// `lo`.
pub fn minimize_scalar<F>(mut cost: F, lo: f64, hi: f64, tol: f64) -> (f64, f64)
where
    F: FnMut(f64) -> f64,
{
    let mut f = |x: f64| {
        let v = cost(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    if !(lo < hi) {
        return (lo, f(lo));
    }
    const GOLDEN: f64 = 0.381_966_011_250_105_1;
    let sqrt_eps = f64::EPSILON.sqrt();
    let (mut a, mut b) = (lo, hi);
    let mut x = a + GOLDEN * (b - a);
    let (mut w, mut v) = (x, x);
    let mut fx = f(x);
    let (mut fw, mut fv) = (fx, fx);
    let (mut d, mut e) = (0.0f64, 0.0f64);
    for _ in 0..500 {
        let xm = 0.5 * (a + b);
        let tol1 = sqrt_eps * x.abs() + tol / 3.0;
        let tol2 = 2.0 * tol1;
        if (x - xm).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut parabolic = false;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let e_prev = e;
            e = d;
            if p.abs() < (0.5 * q * e_prev).abs() && p > q * (a - x) && p < q * (b - x) {
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = tol1.copysign(xm - x);
                }
                parabolic = true;
            }
        }
        if !parabolic {
            e = if x >= xm { a - x } else { b - x };
            d = GOLDEN * e;
        }
        let u = if d.abs() >= tol1 { x + d } else { x + tol1.copysign(d) };
        let fu = f(u);
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            (v, fv) = (w, fw);
            (w, fw) = (x, fx);
            (x, fx) = (u, fu);
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                (v, fv) = (w, fw);
                (w, fw) = (u, fu);
            } else if fu <= fv || v == x || v == w {
                (v, fv) = (u, fu);
            }
        }
    }
    (x, fx)
}

/// Which power and noise updates run between angle searches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SmlVariant {
    Amv,
    Samv1,
    Samv2,
}

impl SmlVariant {
    pub const ALL: [SmlVariant; 3] = [SmlVariant::Amv, SmlVariant::Samv1, SmlVariant::Samv2];

    pub fn name(self) -> &'static str {
        match self {
            SmlVariant::Amv => "amv-sml",
            SmlVariant::Samv1 => "samv1-sml",
            SmlVariant::Samv2 => "samv2-sml",
        }
    }
}

impl fmt::Display for SmlVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SmlVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace('_', "-");
        Self::ALL
            .into_iter()
            .find(|v| v.name() == key || v.name().replace('-', "") == key.replace('-', ""))
            .ok_or_else(|| domain(format!("unknown SML variant '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmlControl {
    pub max_sweeps: usize,
    /// Stop once no angle moves by more than this many degrees in a sweep.
    pub angle_tol: f64,
    /// Tolerance of each scalar search, in degrees.
    pub search_tol: f64,
    /// Iteration control of the SAMV-2 run that seeds the refinement.
    pub init: IterationControl,
}

impl Default for SmlControl {
    fn default() -> Self {
        Self {
            max_sweeps: 50,
            angle_tol: 1e-4,
            search_tol: 1e-4,
            init: IterationControl::default(),
        }
    }
}

/// ML cost at the start and end of one sweep's angle searches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepCost {
    pub before: f64,
    pub after: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmlEstimate {
    /// Refined sources in ascending angle order.
    pub sources: Vec<Source>,
    pub sigma: f64,
    pub sweeps: usize,
    pub converged: bool,
    pub sweep_costs: Vec<SweepCost>,
}

impl SmlEstimate {
    pub fn angles(&self) -> Vec<f64> {
        self.sources.iter().map(|s| s.angle_deg).collect()
    }
}

/// Replace powers and noise by one update of `variant` evaluated at the
/// continuous steering vectors.
fn update_powers(problem: &mut RefinementProblem, variant: SmlVariant) -> Result<()> {
    let cov = problem.covariance()?;
    let r_inv = cov.inverse();
    let r_n = &problem.r_n;
    let floor = noise_floor(r_n);
    let mut powers = Vec::with_capacity(problem.sources.len());
    for s in &problem.sources {
        let a = problem.geometry.steering_unchecked(s.angle_deg);
        let b = r_inv * &a;
        let num = b.dotc(&(r_n * &b)).re;
        let cap = a.dotc(&b).re;
        let p = match variant {
            SmlVariant::Amv => num / (cap * cap) + s.power - 1.0 / cap,
            SmlVariant::Samv1 => SamvVariant::Samv1.power(s.power, num, cap),
            SmlVariant::Samv2 => SamvVariant::Samv2.power(s.power, num, cap),
        };
        powers.push(p.max(0.0));
    }
    let r_inv_sq = r_inv * r_inv;
    let t_weighted = trace_product(&r_inv_sq, r_n);
    let t_sq: f64 = (0..r_inv.nrows()).map(|i| r_inv_sq[(i, i)].re).sum();
    let sigma = match variant {
        SmlVariant::Amv => {
            let t_inv: f64 = (0..r_inv.nrows()).map(|i| r_inv[(i, i)].re).sum();
            (t_weighted + problem.sigma * t_sq - t_inv) / t_sq
        }
        SmlVariant::Samv1 | SmlVariant::Samv2 => t_weighted / t_sq,
    };
    if !sigma.is_finite() || powers.iter().any(|p| !p.is_finite()) {
        return Err(Error::Singular("non-finite power update".into()));
    }
    for (s, p) in problem.sources.iter_mut().zip(powers) {
        s.power = p;
    }
    problem.sigma = sigma.max(floor);
    Ok(())
}

/// Alternate power/noise updates with per-source angle searches inside
/// `±bracket` degrees of the current estimate.
pub fn refine(
    mut problem: RefinementProblem,
    variant: SmlVariant,
    bracket: f64,
    control: &SmlControl,
) -> Result<SmlEstimate> {
    if control.max_sweeps == 0 {
        return Err(domain("refinement needs at least one sweep"));
    }
    if !(bracket > 0.0 && bracket.is_finite()) {
        return Err(domain(format!("invalid search bracket {bracket}")));
    }
    let upper = 180.0 - 1e-9;
    let mut sweep_costs = Vec::new();
    let mut converged = false;
    let mut sweeps = 0;
    for _ in 0..control.max_sweeps {
        update_powers(&mut problem, variant)?;
        let before = problem.ml_cost()?;
        let mut order: Vec<usize> = (0..problem.sources.len()).collect();
        order.sort_by(|&i, &j| {
            let (a, b) = (&problem.sources[i], &problem.sources[j]);
            b.power
                .total_cmp(&a.power)
                .then(a.angle_deg.total_cmp(&b.angle_deg))
        });
        let mut largest_move = 0.0f64;
        for k in order {
            let current = problem.sources[k].angle_deg;
            let objective = problem.objective(k)?;
            let lo = (current - bracket).max(0.0);
            let hi = (current + bracket).min(upper);
            let (theta, value) =
                minimize_scalar(|t| objective.eval(t), lo, hi, control.search_tol);
            let taken = if value < objective.eval(current)
                && !problem.sources.iter().any(|s| s.angle_deg == theta)
            {
                theta
            } else {
                current
            };
            largest_move = largest_move.max((taken - current).abs());
            problem.sources[k].angle_deg = taken;
        }
        let after = problem.ml_cost()?;
        sweep_costs.push(SweepCost { before, after });
        sweeps += 1;
        if largest_move < control.angle_tol {
            converged = true;
            break;
        }
    }
    let mut sources = problem.sources;
    sources.sort_by(|a, b| a.angle_deg.total_cmp(&b.angle_deg));
    Ok(SmlEstimate {
        sources,
        sigma: problem.sigma,
        sweeps,
        converged,
        sweep_costs,
    })
}

/// Spacing used as the search half-width for a dictionary's grid.
pub fn grid_step(dictionary: &SteeringDictionary) -> f64 {
    dictionary.step().unwrap_or_else(|| {
        dictionary
            .grid()
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
    })
}

/// Build a refinement problem from chosen grid indices of a spectrum.
pub fn seed_problem(
    dictionary: &SteeringDictionary,
    r_n: &CMatrix,
    spectrum: &PowerState,
    indices: &[usize],
) -> Result<RefinementProblem> {
    check_r_n(dictionary, r_n)?;
    spectrum.check_against(dictionary)?;
    let geometry = dictionary
        .geometry()
        .ok_or_else(|| domain("refinement needs a dictionary built from an array geometry"))?;
    let mut sources = Vec::with_capacity(indices.len());
    for &i in indices {
        let angle_deg = *dictionary
            .grid()
            .get(i)
            .ok_or_else(|| domain(format!("grid index {i} out of range")))?;
        sources.push(Source {
            angle_deg,
            power: spectrum.powers[i],
        });
    }
    sources.sort_by(|a, b| a.angle_deg.total_cmp(&b.angle_deg));
    RefinementProblem::new(geometry.clone(), sources, spectrum.sigma(), r_n.clone())
}

/// Seed a refinement from a grid spectrum: its `num_sources` highest
/// local maxima give the starting angles and powers.
pub fn refine_from_spectrum(
    dictionary: &SteeringDictionary,
    r_n: &CMatrix,
    spectrum: &PowerState,
    variant: SmlVariant,
    num_sources: usize,
    control: &SmlControl,
) -> Result<SmlEstimate> {
    if num_sources == 0 {
        return Err(domain("refinement needs at least one source"));
    }
    let peaks = pick_peaks(&spectrum.powers, dictionary.grid(), num_sources);
    if peaks.padded {
        return Err(Error::TooFewPeaks {
            found: peaks.local_maxima,
            needed: num_sources,
        });
    }
    let problem = seed_problem(dictionary, r_n, spectrum, &peaks.indices)?;
    refine(problem, variant, grid_step(dictionary), control)
}

/// SAMV-SML: run SAMV-2 on the grid, then refine its peaks off-grid.
pub fn samv_sml_estimate(
    dictionary: &SteeringDictionary,
    r_n: &CMatrix,
    variant: SmlVariant,
    num_sources: usize,
    control: &SmlControl,
) -> Result<SmlEstimate> {
    let (init, _) = samv_estimate(SamvVariant::Samv2, dictionary, r_n, &control.init)?;
    refine_from_spectrum(dictionary, r_n, &init, variant, num_sources, control)
}
