//! Weighted exponential fits of locked-polarization decay.
//!
//! Model: `p(τ) = a·exp(-Γ₁ρ·τ) + sz_eq`. The ideal amplitude is `1 - sz_eq`;
//! `a` is kept free to absorb prep and readout imperfections.

use levenberg_marquardt::{LeastSquaresProblem, LevenbergMarquardt};
use nalgebra::{DVector, Dyn, Matrix3, Owned, Vector3, U3};
use serde::{Deserialize, Serialize};

use crate::dynamics::DecayTrace;
use crate::error::{QnsError, Result};

/// Evaluation budget of the optimizer, in units of full Jacobian sweeps.
const MAX_ITERATIONS: usize = 200;
const MIN_POINTS: usize = 6;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FitErrors {
    pub gamma_1rho: f64,
    pub sz_eq: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelaxationFit {
    pub target: usize,
    /// Γ₁ρ (1/μs).
    pub gamma_1rho: f64,
    /// Long-time polarization.
    pub sz_eq: f64,
    /// Coefficient `a` of the exponential.
    pub amplitude: f64,
    /// Asymptote of the fitted curve; equal to `sz_eq`.
    pub offset: f64,
    pub stderr: FitErrors,
    pub chi2_reduced: f64,
    /// Decay slower than `1/(10·max τ)`.
    pub rate_unresolved: bool,
    pub evaluations: usize,
}

impl RelaxationFit {
    pub fn model(&self, tau: f64) -> f64 {
        self.amplitude * (-self.gamma_1rho * tau).exp() + self.sz_eq
    }
}

struct ExpProblem<'a> {
    t: &'a [f64],
    y: &'a [f64],
    w: &'a [f64],
    p: Vector3<f64>,
}

impl LeastSquaresProblem<f64, Dyn, U3> for ExpProblem<'_> {
    type ResidualStorage = Owned<f64, Dyn>;
    type JacobianStorage = Owned<f64, Dyn, U3>;
    type ParameterStorage = Owned<f64, U3>;

    fn set_params(&mut self, x: &Vector3<f64>) {
        self.p = *x;
    }

    fn params(&self) -> Vector3<f64> {
        self.p
    }

    fn residuals(&self) -> Option<DVector<f64>> {
        let (g, a, s) = (self.p[0], self.p[1], self.p[2]);
        Some(DVector::from_iterator(
            self.t.len(),
            (0..self.t.len()).map(|i| (a * (-g * self.t[i]).exp() + s - self.y[i]) * self.w[i]),
        ))
    }

    fn jacobian(&self) -> Option<nalgebra::OMatrix<f64, Dyn, U3>> {
        let (g, a) = (self.p[0], self.p[1]);
        let n = self.t.len();
        let mut j = nalgebra::OMatrix::<f64, Dyn, U3>::zeros(n);
        for i in 0..n {
            let e = (-g * self.t[i]).exp();
            j[(i, 0)] = -a * self.t[i] * e * self.w[i];
            j[(i, 1)] = e * self.w[i];
            j[(i, 2)] = self.w[i];
        }
        Some(j)
    }
}

/// Initial guesses: asymptote from the tail mean, rate from the log-slope of
/// the first half.
fn initial_guess(t: &[f64], y: &[f64]) -> Vector3<f64> {
    let n = t.len();
    let tail = &y[n - (n / 3).max(1)..];
    let s0 = (tail.iter().sum::<f64>() / tail.len() as f64).clamp(-0.99, 0.99);
    let half = (n / 2).max(2);
    let (mut sx, mut sy, mut sxx, mut sxy, mut m) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..half {
        let v = y[i] - s0;
        if v > 1e-12 {
            let l = v.ln();
            sx += t[i];
            sy += l;
            sxx += t[i] * t[i];
            sxy += t[i] * l;
            m += 1.0;
        }
    }
    let span = t[n - 1] - t[0];
    let mut g = if m >= 2.0 && (m * sxx - sx * sx).abs() > 0.0 {
        -(m * sxy - sx * sy) / (m * sxx - sx * sx)
    } else {
        0.0
    };
    if !(g.is_finite() && g > 0.0) {
        g = 1.0 / span.max(1e-12);
    }
    let a0 = (y[0] - s0) * (g * t[0]).exp();
    Vector3::new(g, if a0.is_finite() { a0 } else { 1.0 - s0 }, s0)
}

/// Weighted least-squares fit of `(τ, y ± σ)`. With `sigma = None` the points
/// are weighted equally and errors are scaled by the residual variance.
pub fn fit_exponential(target: usize, tau: &[f64], y: &[f64], sigma: Option<&[f64]>) -> Result<RelaxationFit> {
    let n = tau.len();
    if n < MIN_POINTS || y.len() != n {
        return Err(QnsError::InvalidParameter(format!(
            "fit needs at least {MIN_POINTS} points with matching values, got {n}"
        )));
    }
    let known_sigma = sigma.is_some_and(|s| s.len() == n && s.iter().all(|&x| x > 0.0 && x.is_finite()));
    let w: Vec<f64> = if known_sigma {
        sigma.unwrap().iter().map(|s| 1.0 / s).collect()
    } else {
        vec![1.0; n]
    };
    let problem = ExpProblem {
        t: tau,
        y,
        w: &w,
        p: initial_guess(tau, y),
    };
    let lm = LevenbergMarquardt::new()
        .with_patience(MAX_ITERATIONS / 4)
        .with_tol(1e-15);
    let (fitted, report) = lm.minimize(problem);
    let residuals = fitted.residuals().map(|r| r.as_slice().to_vec()).unwrap_or_default();
    let ok = report.termination.was_successful()
        && fitted.p.iter().all(|x| x.is_finite())
        && residuals.iter().all(|x| x.is_finite());
    if !ok {
        return Err(QnsError::FitNonConvergence {
            iterations: report.number_of_evaluations,
            residuals,
        });
    }
    let chi2: f64 = residuals.iter().map(|r| r * r).sum();
    let dof = (n - 3) as f64;
    let chi2_reduced = chi2 / dof;
    let jac = fitted.jacobian().expect("jacobian available");
    let jtj: Matrix3<f64> = jac.transpose() * &jac;
    let cov = jtj
        .try_inverse()
        .map(|c| if known_sigma { c } else { c * chi2_reduced })
        .unwrap_or_else(|| Matrix3::from_element(f64::NAN));
    let (g, a, s) = (fitted.p[0], fitted.p[1], fitted.p[2]);
    let max_tau = tau.iter().cloned().fold(0.0, f64::max);
    Ok(RelaxationFit {
        target,
        gamma_1rho: g,
        sz_eq: s,
        amplitude: a,
        offset: s,
        stderr: FitErrors {
            gamma_1rho: cov[(0, 0)].max(0.0).sqrt(),
            amplitude: cov[(1, 1)].max(0.0).sqrt(),
            sz_eq: cov[(2, 2)].max(0.0).sqrt(),
        },
        chi2_reduced,
        rate_unresolved: !(g > 1.0 / (10.0 * max_tau)),
        evaluations: report.number_of_evaluations,
    })
}

/// Smallest per-point uncertainty used when weighting a simulated trace.
const SIGMA_FLOOR: f64 = 1e-4;

fn point_sigma(trace: &DecayTrace) -> Vec<f64> {
    let top = trace.stderr.iter().cloned().fold(0.0, f64::max);
    let floor = SIGMA_FLOOR.max(0.01 * top);
    trace.stderr.iter().map(|s| s.max(floor)).collect()
}

/// Fit the polarization of a decay trace weighted by its standard errors,
/// floored at `max(1e-4, 1% of the largest error)`.
///
/// Points share noise records across τ, so their errors are correlated. When
/// the trace carries jackknife replicates, each parameter error is the larger
/// of the fit covariance and the grouped jackknife estimate.
pub fn fit_decay(trace: &DecayTrace) -> Result<RelaxationFit> {
    let sigma = point_sigma(trace);
    let mut fit = fit_exponential(trace.target, &trace.tau, &trace.polarization, Some(&sigma))?;
    if let Some(jk) = jackknife_errors(trace) {
        fit.stderr.gamma_1rho = fit.stderr.gamma_1rho.max(jk.gamma_1rho);
        fit.stderr.sz_eq = fit.stderr.sz_eq.max(jk.sz_eq);
        fit.stderr.amplitude = fit.stderr.amplitude.max(jk.amplitude);
    }
    Ok(fit)
}

/// Fits of every jackknife replicate with the trace's own weights. `None`
/// without replicates or when any replicate fails to fit.
pub fn fit_replicates(trace: &DecayTrace) -> Option<Vec<RelaxationFit>> {
    if trace.replicates.len() < 2 {
        return None;
    }
    let sigma = point_sigma(trace);
    trace
        .replicates
        .iter()
        .map(|y| fit_exponential(trace.target, &trace.tau, y, Some(&sigma)).ok())
        .collect()
}

/// Grouped jackknife standard error `sqrt((g-1)/g · Σ(θ_i - θ̄)²)`.
pub fn jackknife_sigma(values: &[f64]) -> f64 {
    let g = values.len() as f64;
    if values.len() < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / g;
    let ss: f64 = values.iter().map(|x| (x - mean).powi(2)).sum();
    ((g - 1.0) / g * ss).sqrt()
}

fn jackknife_errors(trace: &DecayTrace) -> Option<FitErrors> {
    let fits = fit_replicates(trace)?;
    let pick = |f: fn(&RelaxationFit) -> f64| jackknife_sigma(&fits.iter().map(f).collect::<Vec<_>>());
    Some(FitErrors {
        gamma_1rho: pick(|f| f.gamma_1rho),
        sz_eq: pick(|f| f.sz_eq),
        amplitude: pick(|f| f.amplitude),
    })
}
