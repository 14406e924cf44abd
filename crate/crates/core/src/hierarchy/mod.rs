//! Evolution of the first two correlation functions, truncated with a
//! pluggable closure for the third.
//!
//! For a translation-invariant state the density `rho` and the pair function
//! `k2(u)` (a periodic grid function of the displacement) evolve as
//!
//! ```text
//! d rho / dt = (<a+> - m) rho - integral a-(y) k2(y) dy
//! d k2(u) / dt = -2 [m + a-(u)] k2(u) - 2 integral a-(w) k3(u, w) dw
//!                + 2 a+(u) rho + 2 (a+ * k2)(u)
//! ```
//!
//! where `k3(u, w)` is the closure's value on the configuration `{0, u, w}`
//! and `*` is periodic convolution (computed spectrally). The Poisson closure
//! takes `k3 = rho^3`; the Kirkwood closure takes
//! `k3 = k2(u) k2(w) k2(w - u) / rho^3`. Both reduce to `rho^3` when
//! `k2 = rho^2`, and both leave `rho = 1/theta`, `k2 = 1/theta^2` stationary
//! when `m = 0` and `a- = theta a+`.
//!
//! Time stepping is classical fourth-order Runge-Kutta with a fixed step;
//! negative undershoots of `k2` are clipped to zero and accounted, and a run
//! whose clipped mass exceeds `1e-6` of the sup norm is flagged invalid
//! (positivity is a property of the exact evolution, so larger violations
//! indicate closure or step artifacts).

mod grid;

pub use grid::{GridSpec, SpectralConvolver};

use crate::kernels::KernelPair;
use rustfft::num_complex::Complex;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HierarchyError {
    #[error("grid dimension {grid} does not match kernel dimension {kernel}")]
    DimensionMismatch { grid: usize, kernel: usize },
    #[error("state grid does not match the model grid")]
    GridMismatch,
    #[error("Kirkwood closure is degenerate at zero density")]
    DegenerateClosure,
    #[error("invalid parameter: {0}")]
    BadParameter(String),
    #[error("numerical blow-up at t = {t}: {what}")]
    NumericalBlowup { t: f64, what: String },
}

/// Closure expressing the third correlation function through `(rho, k2)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Closure {
    Poisson,
    Kirkwood,
}

/// Translation-invariant first and second correlation functions on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct TruncatedCorrelation {
    pub rho: f64,
    pub k2: Vec<f64>,
    pub grid: GridSpec,
}

impl TruncatedCorrelation {
    /// Constant state, e.g. the Poisson field `(kappa, kappa^2)`.
    pub fn constant(rho: f64, k2_value: f64, grid: GridSpec) -> Self {
        let k2 = vec![k2_value; grid.len()];
        TruncatedCorrelation { rho, k2, grid }
    }

    pub fn sup_k2(&self) -> f64 {
        self.k2.iter().cloned().fold(0.0, f64::max)
    }
}

/// Precomputed kernels and spectra for right-hand-side evaluation.
pub struct HierarchyModel {
    pair: KernelPair,
    closure: Closure,
    convolver: SpectralConvolver,
    a_plus: Vec<f64>,
    a_minus: Vec<f64>,
    a_plus_hat: Vec<Complex<f64>>,
    a_minus_grid_mass: f64,
}

impl HierarchyModel {
    pub fn new(pair: &KernelPair, grid: GridSpec, closure: Closure) -> Result<Self, HierarchyError> {
        if pair.dim() != grid.dim {
            return Err(HierarchyError::DimensionMismatch {
                grid: grid.dim,
                kernel: pair.dim(),
            });
        }
        if grid.points_per_axis < 4 {
            return Err(HierarchyError::BadParameter(
                "need at least 4 grid points per axis".into(),
            ));
        }
        let a_plus = grid.sample_kernel(pair.dispersal());
        let a_minus = grid.sample_kernel(pair.competition());
        let a_minus_grid_mass = grid.integrate(&a_minus);
        let convolver = SpectralConvolver::new(grid);
        let a_plus_hat = convolver.forward(&a_plus);
        Ok(HierarchyModel {
            pair: pair.clone(),
            closure,
            convolver,
            a_plus,
            a_minus,
            a_plus_hat,
            a_minus_grid_mass,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        self.convolver.grid()
    }

    pub fn closure(&self) -> Closure {
        self.closure
    }

    pub fn pair(&self) -> &KernelPair {
        &self.pair
    }

    /// `d rho / dt`; the competition integral uses grid quadrature.
    pub fn rhs_order1(&self, state: &TruncatedCorrelation) -> f64 {
        let grid = self.grid();
        let coupling: f64 = self
            .a_minus
            .iter()
            .zip(&state.k2)
            .map(|(a, k)| a * k)
            .sum::<f64>()
            * grid.cell_volume();
        (self.pair.dispersal_mass() - self.pair.mortality()) * state.rho - coupling
    }

    /// `d k2 / dt` on the grid.
    pub fn rhs_order2(&self, state: &TruncatedCorrelation) -> Result<Vec<f64>, HierarchyError> {
        let k2_hat = self.convolver.forward(&state.k2);
        self.rhs_order2_with_spectrum(state, &k2_hat)
    }

    fn rhs_order2_with_spectrum(
        &self,
        state: &TruncatedCorrelation,
        k2_hat: &[Complex<f64>],
    ) -> Result<Vec<f64>, HierarchyError> {
        let rho = state.rho;
        let m = self.pair.mortality();
        let conv_plus = self.convolver.convolve_spectra(&self.a_plus_hat, k2_hat);
        let closure_term: Vec<f64> = match self.closure {
            Closure::Poisson => {
                let c = rho * rho * rho * self.a_minus_grid_mass;
                vec![c; state.k2.len()]
            }
            Closure::Kirkwood => {
                if !(rho > 0.0) {
                    return Err(HierarchyError::DegenerateClosure);
                }
                let weighted: Vec<f64> = self
                    .a_minus
                    .iter()
                    .zip(&state.k2)
                    .map(|(a, k)| a * k)
                    .collect();
                let conv = self.convolver.convolve(&weighted, &state.k2);
                let inv_rho3 = 1.0 / (rho * rho * rho);
                conv.iter()
                    .zip(&state.k2)
                    .map(|(c, k)| c * k * inv_rho3)
                    .collect()
            }
        };
        Ok((0..state.k2.len())
            .map(|i| {
                -2.0 * (m + self.a_minus[i]) * state.k2[i] - 2.0 * closure_term[i]
                    + 2.0 * self.a_plus[i] * rho
                    + 2.0 * conv_plus[i]
            })
            .collect())
    }

    fn rhs(&self, state: &TruncatedCorrelation) -> Result<(f64, Vec<f64>), HierarchyError> {
        let k2_hat = self.convolver.forward(&state.k2);
        let d_k2 = self.rhs_order2_with_spectrum(state, &k2_hat)?;
        Ok((self.rhs_order1(state), d_k2))
    }
}

/// An integrated trajectory on the observation grid.
#[derive(Clone, Debug)]
pub struct HierarchyRun {
    pub times: Vec<f64>,
    pub states: Vec<TruncatedCorrelation>,
    /// Total negative mass clipped from `k2` over the run.
    pub clipped_mass: f64,
    /// False when the clipped mass exceeded `1e-6` of the largest `k2` value.
    pub valid: bool,
}

impl HierarchyRun {
    pub fn rho_series(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.rho).collect()
    }

    pub fn sup_k2_series(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.sup_k2()).collect()
    }
}

/// Fixed-step fourth-order Runge-Kutta integration, emitting states at
/// multiples of `observe_every` (the step is shrunk to land on observation
/// times exactly).
pub fn integrate(
    model: &HierarchyModel,
    state0: &TruncatedCorrelation,
    t_end: f64,
    dt: f64,
    observe_every: f64,
) -> Result<HierarchyRun, HierarchyError> {
    if &state0.grid != model.grid() {
        return Err(HierarchyError::GridMismatch);
    }
    if !(dt > 0.0) {
        return Err(HierarchyError::BadParameter(format!(
            "dt must be positive, got {dt}"
        )));
    }
    if !(t_end >= 0.0) {
        return Err(HierarchyError::BadParameter(format!(
            "t_end must be nonnegative, got {t_end}"
        )));
    }
    if t_end > 0.0 && !(observe_every > 0.0) {
        return Err(HierarchyError::BadParameter(format!(
            "observe_every must be positive, got {observe_every}"
        )));
    }

    // Explicit stepping is only sane below the fastest relaxation rate.
    let pair = model.pair();
    let rate_scale = (pair.mortality() + pair.competition_mass() * state0.rho)
        .max(pair.dispersal_mass());
    if rate_scale > 0.0 && dt > 0.1 / rate_scale {
        log::warn!(
            "hierarchy step dt = {dt} exceeds the stability heuristic 0.1 / rate scale = {:.3e}",
            0.1 / rate_scale
        );
    }

    let obs = crate::sim::observation_times(t_end, observe_every);
    let mut times = Vec::with_capacity(obs.len());
    let mut states = Vec::with_capacity(obs.len());
    let mut current = state0.clone();
    let mut clipped = 0.0;
    let mut sup_seen = current.sup_k2();

    times.push(0.0);
    states.push(current.clone());
    for w in obs.windows(2) {
        let span = w[1] - w[0];
        let n_sub = (span / dt).ceil().max(1.0) as usize;
        let h = span / n_sub as f64;
        let mut t = w[0];
        for _ in 0..n_sub {
            rk4_step(model, &mut current, h)?;
            t += h;
            clipped += clip_negative(&mut current);
            sup_seen = sup_seen.max(current.sup_k2());
            if !current.rho.is_finite() || current.rho.abs() > 1e12 {
                return Err(HierarchyError::NumericalBlowup {
                    t,
                    what: format!("rho = {}", current.rho),
                });
            }
            if current.k2.iter().any(|v| !v.is_finite()) {
                return Err(HierarchyError::NumericalBlowup {
                    t,
                    what: "k2 is not finite".into(),
                });
            }
        }
        times.push(w[1]);
        states.push(current.clone());
    }
    let valid = clipped <= 1e-6 * sup_seen.max(f64::MIN_POSITIVE);
    if !valid {
        log::warn!(
            "hierarchy run clipped {clipped:.3e} of negative k2 mass (sup {sup_seen:.3e}); flagged invalid"
        );
    }
    Ok(HierarchyRun {
        times,
        states,
        clipped_mass: clipped,
        valid,
    })
}

/// Repeatedly halves the step until two successive refinements agree to
/// `rtol` in the sup norm over observation times; returns the finer run and
/// the achieved difference.
pub fn integrate_refined(
    model: &HierarchyModel,
    state0: &TruncatedCorrelation,
    t_end: f64,
    dt0: f64,
    observe_every: f64,
    rtol: f64,
    max_halvings: usize,
) -> Result<(HierarchyRun, f64), HierarchyError> {
    let mut dt = dt0;
    let mut coarse = integrate(model, state0, t_end, dt, observe_every)?;
    for _ in 0..max_halvings {
        dt /= 2.0;
        let fine = integrate(model, state0, t_end, dt, observe_every)?;
        let diff = run_difference(&coarse, &fine);
        if diff < rtol {
            return Ok((fine, diff));
        }
        coarse = fine;
    }
    Err(HierarchyError::BadParameter(format!(
        "refinement did not reach rtol = {rtol} within {max_halvings} halvings"
    )))
}

fn run_difference(a: &HierarchyRun, b: &HierarchyRun) -> f64 {
    let mut scale = f64::MIN_POSITIVE;
    for s in &b.states {
        scale = scale.max(s.rho.abs()).max(s.sup_k2());
    }
    let mut diff: f64 = 0.0;
    for (sa, sb) in a.states.iter().zip(&b.states) {
        diff = diff.max((sa.rho - sb.rho).abs());
        for (x, y) in sa.k2.iter().zip(&sb.k2) {
            diff = diff.max((x - y).abs());
        }
    }
    diff / scale
}

fn rk4_step(
    model: &HierarchyModel,
    state: &mut TruncatedCorrelation,
    h: f64,
) -> Result<(), HierarchyError> {
    let (r1, k1) = model.rhs(state)?;
    let s2 = advanced(state, h / 2.0, r1, &k1);
    let (r2, k2) = model.rhs(&s2)?;
    let s3 = advanced(state, h / 2.0, r2, &k2);
    let (r3, k3) = model.rhs(&s3)?;
    let s4 = advanced(state, h, r3, &k3);
    let (r4, k4) = model.rhs(&s4)?;
    state.rho += h / 6.0 * (r1 + 2.0 * r2 + 2.0 * r3 + r4);
    for i in 0..state.k2.len() {
        state.k2[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    Ok(())
}

fn advanced(state: &TruncatedCorrelation, h: f64, d_rho: f64, d_k2: &[f64]) -> TruncatedCorrelation {
    TruncatedCorrelation {
        rho: state.rho + h * d_rho,
        k2: state
            .k2
            .iter()
            .zip(d_k2)
            .map(|(v, d)| v + h * d)
            .collect(),
        grid: state.grid.clone(),
    }
}

/// Clips negative values to zero; returns the clipped mass.
fn clip_negative(state: &mut TruncatedCorrelation) -> f64 {
    let mut clipped = 0.0;
    for v in &mut state.k2 {
        if *v < 0.0 {
            clipped -= *v;
            *v = 0.0;
        }
    }
    clipped * state.grid.cell_volume()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{Kernel, KernelPair};
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid1(edge: f64, n: usize) -> GridSpec {
        GridSpec {
            dim: 1,
            edge,
            points_per_axis: n,
        }
    }

    fn gaussian_pair(theta: f64, mortality: f64) -> KernelPair {
        KernelPair::new(
            Kernel::gaussian(theta, 1.0, 1).unwrap(),
            Kernel::gaussian(1.0, 1.0, 1).unwrap(),
            mortality,
        )
        .unwrap()
    }

    fn contact_pair(mortality: f64) -> KernelPair {
        KernelPair::allow_zero_competition(
            Kernel::top_hat(0.0, 0.5, 1).unwrap(),
            Kernel::gaussian(1.0, 1.0, 1).unwrap(),
            mortality,
        )
        .unwrap()
    }

    #[test]
    fn contact_density_rhs_is_closed() {
        let grid = grid1(10.0, 32);
        let model = HierarchyModel::new(&contact_pair(0.4), grid.clone(), Closure::Poisson).unwrap();
        let state = TruncatedCorrelation::constant(2.0, 5.0, grid);
        // a- = 0 removes the coupling regardless of k2.
        assert_relative_eq!(model.rhs_order1(&state), (1.0 - 0.4) * 2.0);
    }

    #[test]
    fn stationary_state_has_vanishing_rhs() {
        // m = 0, a- = theta a+, rho = 1/theta, k2 = 1/theta^2.
        let theta = 2.0;
        let pair = gaussian_pair(theta, 0.0);
        let grid = grid1(10.0, 64);
        let scale = pair.dispersal_mass() / (theta * theta);
        for closure in [Closure::Poisson, Closure::Kirkwood] {
            let model = HierarchyModel::new(&pair, grid.clone(), closure).unwrap();
            let state =
                TruncatedCorrelation::constant(1.0 / theta, 1.0 / (theta * theta), grid.clone());
            let d_rho = model.rhs_order1(&state);
            assert!(
                d_rho.abs() <= 1e-10 * scale,
                "{closure:?}: d rho = {d_rho:e}"
            );
            let d_k2 = model.rhs_order2(&state).unwrap();
            let sup = d_k2.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(sup <= 1e-10 * scale, "{closure:?}: sup dk2 = {sup:e}");
        }
    }

    #[test]
    fn absorbing_state_is_fixed() {
        let grid = grid1(10.0, 32);
        let model =
            HierarchyModel::new(&gaussian_pair(1.0, 0.5), grid.clone(), Closure::Poisson).unwrap();
        let state = TruncatedCorrelation::constant(0.0, 0.0, grid);
        assert_eq!(model.rhs_order1(&state), 0.0);
        let d_k2 = model.rhs_order2(&state).unwrap();
        assert!(d_k2.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn kirkwood_rejects_zero_density() {
        let grid = grid1(10.0, 32);
        let model =
            HierarchyModel::new(&gaussian_pair(1.0, 0.5), grid.clone(), Closure::Kirkwood).unwrap();
        let state = TruncatedCorrelation::constant(0.0, 0.1, grid);
        assert!(matches!(
            model.rhs_order2(&state),
            Err(HierarchyError::DegenerateClosure)
        ));
    }

    #[test]
    fn decoupled_pair_equation_decays_at_twice_mortality() {
        // a+ = a- = 0, m > 0: k2(t) = k2(0) exp(-2 m t).
        let pair = KernelPair::allow_zero_competition(
            Kernel::top_hat(0.0, 0.5, 1).unwrap(),
            Kernel::top_hat(0.0, 0.5, 1).unwrap(),
            0.7,
        )
        .unwrap();
        let grid = grid1(10.0, 16);
        let model = HierarchyModel::new(&pair, grid.clone(), Closure::Poisson).unwrap();
        let state0 = TruncatedCorrelation::constant(1.5, 2.25, grid);
        let run = integrate(&model, &state0, 2.0, 1e-3, 0.5).unwrap();
        for (t, s) in run.times.iter().zip(&run.states) {
            let expect = 2.25 * (-2.0 * 0.7 * t).exp();
            assert_relative_eq!(s.k2[3], expect, max_relative = 1e-8);
            let rho_expect = 1.5 * (-0.7 * t).exp();
            assert_relative_eq!(s.rho, rho_expect, max_relative = 1e-8);
        }
    }

    #[test]
    fn contact_density_matches_exponential() {
        let pair = contact_pair(0.4);
        let grid = grid1(10.0, 32);
        let model = HierarchyModel::new(&pair, grid.clone(), Closure::Poisson).unwrap();
        let kappa = 0.8;
        let state0 = TruncatedCorrelation::constant(kappa, kappa * kappa, grid);
        let run = integrate(&model, &state0, 2.0, 1e-3, 0.25).unwrap();
        for (t, s) in run.times.iter().zip(&run.states) {
            let expect = kappa * ((1.0 - 0.4) * t).exp();
            assert!(
                ((s.rho - expect) / expect).abs() < 1e-6,
                "t = {t}: rho {} vs {expect}",
                s.rho
            );
        }
    }

    #[test]
    fn integrator_converges_at_fourth_order() {
        let pair = gaussian_pair(1.5, 0.3);
        let grid = grid1(10.0, 32);
        let model = HierarchyModel::new(&pair, grid.clone(), Closure::Kirkwood).unwrap();
        let state0 = TruncatedCorrelation::constant(0.9, 0.7, grid);
        let t_end = 1.0;
        let reference = integrate(&model, &state0, t_end, 0.2 / 64.0, t_end).unwrap();
        let r_ref = reference.states.last().unwrap();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for k in 0..4 {
            let dt = 0.2 / 2f64.powi(k);
            let run = integrate(&model, &state0, t_end, dt, t_end).unwrap();
            let s = run.states.last().unwrap();
            let mut err = (s.rho - r_ref.rho).abs();
            for (a, b) in s.k2.iter().zip(&r_ref.k2) {
                err = err.max((a - b).abs());
            }
            xs.push(dt.ln());
            ys.push(err.ln());
        }
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let num: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let den: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        let slope = num / den;
        assert!(
            (slope - 4.0).abs() < 0.3,
            "convergence slope {slope}, expected 4 ± 0.3"
        );
    }

    #[test]
    fn refinement_reaches_tolerance() {
        let pair = gaussian_pair(1.0, 0.2);
        let grid = grid1(10.0, 16);
        let model = HierarchyModel::new(&pair, grid.clone(), Closure::Poisson).unwrap();
        let state0 = TruncatedCorrelation::constant(0.5, 0.25, grid);
        let (_, diff) = integrate_refined(&model, &state0, 1.0, 0.1, 0.5, 1e-9, 12).unwrap();
        assert!(diff < 1e-9);
    }

    #[test]
    fn evenness_is_preserved() {
        let pair = gaussian_pair(1.2, 0.1);
        let grid = grid1(8.0, 32);
        let model = HierarchyModel::new(&pair, grid.clone(), Closure::Kirkwood).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut k2 = vec![0.0; grid.len()];
        for i in 0..grid.len() {
            let v = rng.random_range(0.1..1.0);
            k2[i] += v;
            k2[grid.negated(i)] += v;
        }
        let state0 = TruncatedCorrelation {
            rho: 0.8,
            k2,
            grid: grid.clone(),
        };
        let run = integrate(&model, &state0, 0.5, 0.01, 0.25).unwrap();
        for s in &run.states {
            let sup = s.sup_k2().max(1.0);
            for i in 0..grid.len() {
                let j = grid.negated(i);
                assert!(
                    (s.k2[i] - s.k2[j]).abs() <= 1e-12 * sup,
                    "evenness broken at {i}"
                );
            }
        }
    }

    #[test]
    fn blowup_is_detected() {
        let pair = contact_pair(0.0);
        let grid = grid1(10.0, 16);
        let model = HierarchyModel::new(&pair, grid.clone(), Closure::Poisson).unwrap();
        let state0 = TruncatedCorrelation::constant(1.0, 1.0, grid);
        // dt far beyond the stability limit of the growth rate.
        let err = integrate(&model, &state0, 4000.0, 20.0, 1000.0).unwrap_err();
        assert!(matches!(err, HierarchyError::NumericalBlowup { .. }));
    }
}
